// Copyright 2026 the acap authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
//
// Beam search over a next-token log-probability callback, plus the greedy
// special case. pad/sos are never generated; ties break toward the lower
// token id so decodes are reproducible.

#ifndef ACAP_DECODE_HPP
#define ACAP_DECODE_HPP

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "acap/audio.hpp"
#include "acap/data.hpp"
#include "acap/error.hpp"
#include "acap/model.hpp"

namespace acap {

struct BeamConfig {
  int beam_size = 4;
  int max_len = 30;  // generated tokens, eos included
  double length_penalty_alpha = 0.0;

  void validate() const {
    if (beam_size < 1) throw config_error("beam_size must be >= 1");
    if (max_len < 2) throw config_error("max_len must be >= 2");
  }
};

struct Hypothesis {
  std::vector<int> ids;  // sos-prefixed
  double logprob = 0.0;
  bool finished = false;

  int generated_len() const { return static_cast<int>(ids.size()) - 1; }
};

// prefix (sos-prefixed) -> log-probabilities over the vocabulary
using StepFn = std::function<std::vector<double>(const std::vector<int>&)>;

namespace detail {

inline double beam_score(const Hypothesis& h, double alpha) {
  if (alpha == 0.0) return h.logprob;
  return h.logprob / std::pow(static_cast<double>(std::max(1, h.generated_len())),
                              alpha);
}

}  // namespace detail

// argmax rollout until eos or max_len
inline Hypothesis greedy_decode(const StepFn& step, int vocab_size,
                                int max_len = 30) {
  Hypothesis h{{Vocab::kSos}, 0.0, false};
  for (int i = 0; i < max_len; ++i) {
    std::vector<double> lp = step(h.ids);
    if (static_cast<int>(lp.size()) != vocab_size)
      throw shape_error("greedy_decode: step returned wrong vocab size");
    int best = -1;
    for (int tok = 0; tok < vocab_size; ++tok) {
      if (tok == Vocab::kPad || tok == Vocab::kSos) continue;
      if (best < 0 || lp[static_cast<size_t>(tok)] > lp[static_cast<size_t>(best)])
        best = tok;
    }
    h.ids.push_back(best);
    h.logprob += lp[static_cast<size_t>(best)];
    if (best == Vocab::kEos) {
      h.finished = true;
      break;
    }
  }
  return h;
}

// Standard beam search plus a guarantee: the result never scores below the
// greedy rollout. Pruning can drop the greedy prefix from a width-k beam
// and, on flat distributions, every surviving path may end worse; the
// greedy hypothesis therefore competes at the end like a finished beam.
inline Hypothesis beam_search(const StepFn& step, int vocab_size,
                              const BeamConfig& cfg) {
  cfg.validate();
  std::vector<Hypothesis> live = {Hypothesis{{Vocab::kSos}, 0.0, false}};
  std::vector<Hypothesis> finished;

  for (int step_i = 0; step_i < cfg.max_len && !live.empty(); ++step_i) {
    std::vector<Hypothesis> candidates;
    candidates.reserve(live.size() * static_cast<size_t>(vocab_size));
    for (const Hypothesis& h : live) {
      std::vector<double> lp = step(h.ids);
      if (static_cast<int>(lp.size()) != vocab_size)
        throw shape_error("beam_search: step returned wrong vocab size");
      for (int tok = 0; tok < vocab_size; ++tok) {
        if (tok == Vocab::kPad || tok == Vocab::kSos) continue;
        Hypothesis cand;
        cand.ids = h.ids;
        cand.ids.push_back(tok);
        cand.logprob = h.logprob + lp[static_cast<size_t>(tok)];
        cand.finished = tok == Vocab::kEos;
        candidates.push_back(std::move(cand));
      }
    }
    // stable sort keeps (hypothesis order, ascending token id) on ties
    std::stable_sort(candidates.begin(), candidates.end(),
                     [&](const Hypothesis& a, const Hypothesis& b) {
                       return detail::beam_score(a, cfg.length_penalty_alpha) >
                              detail::beam_score(b, cfg.length_penalty_alpha);
                     });
    // A finished candidate counts only if it ranks inside the top
    // beam_size (with beam 1 this reduces exactly to greedy); the live beam
    // then refills to full width from the next-best live candidates so an
    // eos never narrows the search.
    live.clear();
    for (size_t i = 0; i < candidates.size(); ++i) {
      if (candidates[i].finished) {
        if (i < static_cast<size_t>(cfg.beam_size))
          finished.push_back(candidates[i]);
      } else if (live.size() < static_cast<size_t>(cfg.beam_size)) {
        live.push_back(candidates[i]);
      }
      if (live.size() == static_cast<size_t>(cfg.beam_size) &&
          i + 1 >= static_cast<size_t>(cfg.beam_size))
        break;
    }
    if (!finished.empty() && !live.empty()) {
      double best_fin = detail::beam_score(finished[0], cfg.length_penalty_alpha);
      for (const Hypothesis& f : finished)
        best_fin = std::max(best_fin, detail::beam_score(f, cfg.length_penalty_alpha));
      double best_live = detail::beam_score(live[0], cfg.length_penalty_alpha);
      // scores only fall as tokens append (log-probs are <= 0), so once the
      // best finished hypothesis dominates every live one we can stop
      if (cfg.length_penalty_alpha == 0.0 && best_fin >= best_live) break;
    }
  }

  const std::vector<Hypothesis>& pool = finished.empty() ? live : finished;
  const Hypothesis* best = &pool[0];
  for (const Hypothesis& h : pool)
    if (detail::beam_score(h, cfg.length_penalty_alpha) >
        detail::beam_score(*best, cfg.length_penalty_alpha))
      best = &h;
  if (cfg.beam_size == 1) return *best;  // already the greedy rollout
  Hypothesis greedy = greedy_decode(step, vocab_size, cfg.max_len);
  if (detail::beam_score(greedy, cfg.length_penalty_alpha) >
      detail::beam_score(*best, cfg.length_penalty_alpha))
    return greedy;
  return *best;
}

// ids without sos/eos/pad
inline std::vector<int> caption_ids(const Hypothesis& h) {
  std::vector<int> out;
  for (int id : h.ids) {
    if (id == Vocab::kEos) break;
    if (id == Vocab::kSos || id == Vocab::kPad) continue;
    out.push_back(id);
  }
  return out;
}

inline StepFn model_step_fn(Model& model, const EncoderOutput& enc) {
  return [&model, &enc](const std::vector<int>& prefix) {
    return model.next_token_logprobs(prefix, enc);
  };
}

inline Hypothesis decode_spectrogram(Model& model, const Spectrogram& spec,
                                     const BeamConfig& cfg) {
  EncoderOutput enc = model.encode_one(spec, Mode::kEval, nullptr);
  return beam_search(model_step_fn(model, enc), model.decoder_config().vocab_size,
                     cfg);
}

}  // namespace acap

#endif  // ACAP_DECODE_HPP
