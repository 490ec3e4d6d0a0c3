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
// Multi-reference caption metrics following the COCO captioning protocol:
// corpus-level BLEU-1..4 with clipped counts and closest-reference brevity
// penalty, ROUGE-L (F_beta over LCS, max over references, beta = 1.2), and
// CIDEr-D (TF-IDF n-gram cosine with clipped candidate counts and a
// Gaussian length penalty, sigma = 6, scaled to [0, 10]).

#ifndef ACAP_METRICS_HPP
#define ACAP_METRICS_HPP

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "acap/data.hpp"
#include "acap/decode.hpp"
#include "acap/error.hpp"
#include "acap/model.hpp"

namespace acap {

struct EvalItem {
  std::vector<std::string> candidate;
  std::vector<std::vector<std::string>> references;  // >= 1
};

using EvalCorpus = std::vector<EvalItem>;

struct MetricReport {
  double bleu1 = 0.0, bleu2 = 0.0, bleu3 = 0.0, bleu4 = 0.0;
  double rouge_l = 0.0;
  double cider_d = 0.0;
  int n_items = 0;
  std::map<std::string, std::string> config;

  double bleu(int n) const {
    switch (n) {
      case 1: return bleu1;
      case 2: return bleu2;
      case 3: return bleu3;
      case 4: return bleu4;
    }
    throw config_error("bleu order must be in 1..4");
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["bleu1"] = bleu1;
    j["bleu2"] = bleu2;
    j["bleu3"] = bleu3;
    j["bleu4"] = bleu4;
    j["rouge_l"] = rouge_l;
    j["cider_d"] = cider_d;
    j["n_items"] = n_items;
    j["config"] = config;
    return j;
  }
};

namespace detail {

using NgramCounts = std::map<std::string, long>;

inline std::string ngram_key(const std::vector<std::string>& words, size_t pos,
                             int n) {
  std::string key;
  for (int i = 0; i < n; ++i) {
    if (i) key.push_back('\x1f');
    key += words[pos + static_cast<size_t>(i)];
  }
  return key;
}

inline NgramCounts ngrams(const std::vector<std::string>& words, int n) {
  NgramCounts counts;
  if (static_cast<int>(words.size()) >= n)
    for (size_t pos = 0; pos + static_cast<size_t>(n) <= words.size(); ++pos)
      ++counts[ngram_key(words, pos, n)];
  return counts;
}

inline long lcs_length(const std::vector<std::string>& a,
                       const std::vector<std::string>& b) {
  size_t na = a.size(), nb = b.size();
  std::vector<long> prev(nb + 1, 0), cur(nb + 1, 0);
  for (size_t i = 1; i <= na; ++i) {
    for (size_t j = 1; j <= nb; ++j) {
      if (a[i - 1] == b[j - 1])
        cur[j] = prev[j - 1] + 1;
      else
        cur[j] = std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[nb];
}

}  // namespace detail

inline void validate_corpus(const EvalCorpus& corpus) {
  if (corpus.empty()) throw data_error("metrics: empty corpus");
  for (size_t i = 0; i < corpus.size(); ++i)
    if (corpus[i].references.empty())
      throw data_error("metrics: item " + std::to_string(i) +
                       " has no references");
}

// Corpus-level BLEU-n: modified n-gram precision with per-item clipping,
// geometric mean over orders 1..n, closest-reference brevity penalty
// (length ties toward the shorter reference). No smoothing.
inline double bleu(const EvalCorpus& corpus, int n) {
  if (n < 1 || n > 4) throw config_error("bleu order must be in 1..4");
  validate_corpus(corpus);
  std::vector<long> clipped(static_cast<size_t>(n), 0);
  std::vector<long> total(static_cast<size_t>(n), 0);
  long cand_len = 0, ref_len = 0;
  for (const EvalItem& item : corpus) {
    long c = static_cast<long>(item.candidate.size());
    cand_len += c;
    long best_ref = static_cast<long>(item.references[0].size());
    for (const auto& ref : item.references) {
      long r = static_cast<long>(ref.size());
      long d_new = std::labs(r - c), d_best = std::labs(best_ref - c);
      if (d_new < d_best || (d_new == d_best && r < best_ref)) best_ref = r;
    }
    ref_len += best_ref;
    for (int k = 1; k <= n; ++k) {
      detail::NgramCounts cand = detail::ngrams(item.candidate, k);
      detail::NgramCounts max_ref;
      for (const auto& ref : item.references)
        for (const auto& [g, cnt] : detail::ngrams(ref, k))
          max_ref[g] = std::max(max_ref[g], cnt);
      for (const auto& [g, cnt] : cand) {
        total[static_cast<size_t>(k - 1)] += cnt;
        auto it = max_ref.find(g);
        if (it != max_ref.end())
          clipped[static_cast<size_t>(k - 1)] += std::min(cnt, it->second);
      }
    }
  }
  if (cand_len == 0) return 0.0;
  double log_precision = 0.0;
  for (int k = 1; k <= n; ++k) {
    if (total[static_cast<size_t>(k - 1)] == 0 ||
        clipped[static_cast<size_t>(k - 1)] == 0)
      return 0.0;
    log_precision += std::log(static_cast<double>(clipped[static_cast<size_t>(k - 1)]) /
                              static_cast<double>(total[static_cast<size_t>(k - 1)]));
  }
  double bp = cand_len > ref_len
                  ? 1.0
                  : std::exp(1.0 - static_cast<double>(ref_len) /
                                       static_cast<double>(cand_len));
  return bp * std::exp(log_precision / n);
}

// ROUGE-L: per item the max over references of F_beta(LCS precision,
// recall) with beta = 1.2; corpus score is the mean over items.
inline double rouge_l(const EvalCorpus& corpus, double beta = 1.2) {
  validate_corpus(corpus);
  double sum = 0.0;
  for (const EvalItem& item : corpus) {
    double best = 0.0;
    for (const auto& ref : item.references) {
      if (item.candidate.empty() || ref.empty()) continue;
      long lcs = detail::lcs_length(item.candidate, ref);
      if (lcs == 0) continue;
      double p = static_cast<double>(lcs) / static_cast<double>(item.candidate.size());
      double r = static_cast<double>(lcs) / static_cast<double>(ref.size());
      double f = ((1.0 + beta * beta) * p * r) / (r + beta * beta * p);
      best = std::max(best, f);
    }
    sum += best;
  }
  return sum / static_cast<double>(corpus.size());
}

// CIDEr-D with sigma = 6 and the x10 scale. Document frequencies come from
// this corpus's reference sets; a single-item corpus degenerates to zero
// IDF weights (and a zero score) by construction.
inline double cider_d(const EvalCorpus& corpus, double sigma = 6.0) {
  validate_corpus(corpus);
  constexpr int kMaxN = 4;
  std::vector<detail::NgramCounts> df(kMaxN);
  for (const EvalItem& item : corpus) {
    for (int n = 1; n <= kMaxN; ++n) {
      detail::NgramCounts seen;
      for (const auto& ref : item.references)
        for (const auto& [g, cnt] : detail::ngrams(ref, n)) seen[g] = 1;
      for (const auto& [g, one] : seen) df[static_cast<size_t>(n - 1)][g] += 1;
    }
  }
  double log_corpus = std::log(static_cast<double>(corpus.size()));

  struct TfIdfVec {
    std::vector<std::map<std::string, double>> vec;
    std::vector<double> norm;
    long length = 0;
  };
  auto make_vec = [&](const std::vector<std::string>& words) {
    TfIdfVec v;
    v.vec.resize(kMaxN);
    v.norm.assign(kMaxN, 0.0);
    v.length = static_cast<long>(words.size());
    for (int n = 1; n <= kMaxN; ++n) {
      for (const auto& [g, cnt] : detail::ngrams(words, n)) {
        double dfg = static_cast<double>(
            std::max<long>(1, df[static_cast<size_t>(n - 1)].count(g)
                                  ? df[static_cast<size_t>(n - 1)][g]
                                  : 0));
        double idf = log_corpus - std::log(dfg);
        double w = static_cast<double>(cnt) * idf;
        v.vec[static_cast<size_t>(n - 1)][g] = w;
        v.norm[static_cast<size_t>(n - 1)] += w * w;
      }
      v.norm[static_cast<size_t>(n - 1)] =
          std::sqrt(v.norm[static_cast<size_t>(n - 1)]);
    }
    return v;
  };

  double total = 0.0;
  for (const EvalItem& item : corpus) {
    TfIdfVec hyp = make_vec(item.candidate);
    double item_score = 0.0;
    for (const auto& ref : item.references) {
      TfIdfVec rv = make_vec(ref);
      double delta = static_cast<double>(hyp.length - rv.length);
      double len_penalty = std::exp(-delta * delta / (2.0 * sigma * sigma));
      for (int n = 0; n < kMaxN; ++n) {
        double dot = 0.0;
        for (const auto& [g, hw] : hyp.vec[static_cast<size_t>(n)]) {
          auto it = rv.vec[static_cast<size_t>(n)].find(g);
          if (it != rv.vec[static_cast<size_t>(n)].end())
            dot += std::min(hw, it->second) * it->second;
        }
        double denom = hyp.norm[static_cast<size_t>(n)] * rv.norm[static_cast<size_t>(n)];
        double sim = denom > 0.0 ? dot / denom : 0.0;
        item_score += sim * len_penalty;
      }
    }
    item_score /= static_cast<double>(item.references.size());
    item_score *= 10.0 / kMaxN;
    total += item_score;
  }
  return total / static_cast<double>(corpus.size());
}

inline MetricReport score_corpus(const EvalCorpus& corpus) {
  MetricReport r;
  r.n_items = static_cast<int>(corpus.size());
  r.bleu1 = bleu(corpus, 1);
  r.bleu2 = bleu(corpus, 2);
  r.bleu3 = bleu(corpus, 3);
  r.bleu4 = bleu(corpus, 4);
  r.rouge_l = rouge_l(corpus);
  r.cider_d = cider_d(corpus);
  return r;
}

// Decode every clip with beam search and score against its captions,
// tokenized exactly like training data.
inline MetricReport evaluate(Model& model, const std::vector<CaptionedClip>& clips,
                             const std::vector<Spectrogram>& specs,
                             const Vocab& vocab, const BeamConfig& beam_cfg) {
  if (clips.size() != specs.size())
    throw shape_error("evaluate: clips/spectrograms size mismatch");
  EvalCorpus corpus;
  for (size_t i = 0; i < clips.size(); ++i) {
    EvalItem item;
    Hypothesis hyp = decode_spectrogram(model, specs[i], beam_cfg);
    for (int id : caption_ids(hyp))
      item.candidate.push_back(vocab.id_to_word[static_cast<size_t>(id)]);
    for (const std::string& cap : clips[i].captions)
      item.references.push_back(normalize_and_tokenize(cap));
    corpus.push_back(std::move(item));
  }
  MetricReport r = score_corpus(corpus);
  r.config["beam_size"] = std::to_string(beam_cfg.beam_size);
  r.config["max_len"] = std::to_string(beam_cfg.max_len);
  return r;
}

// Standalone scoring inputs: one candidate sentence per line, references in
// a CSV with header caption_1,...,caption_K (row i pairs with candidate i).
inline EvalCorpus load_eval_corpus(const std::string& candidates_path,
                                   const std::string& refs_csv_path) {
  std::ifstream cand_in(candidates_path);
  if (!cand_in) throw data_error("cannot open candidates: " + candidates_path);
  std::vector<std::string> cand_lines;
  std::string line;
  while (std::getline(cand_in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    cand_lines.push_back(line);
  }
  std::ifstream refs_in(refs_csv_path);
  if (!refs_in) throw data_error("cannot open references: " + refs_csv_path);
  auto rows = detail::parse_csv(refs_in);
  if (rows.empty()) throw data_error("empty references csv: " + refs_csv_path);
  for (size_t c = 0; c < rows[0].size(); ++c)
    if (rows[0][c] != "caption_" + std::to_string(c + 1))
      throw data_error("bad references header in " + refs_csv_path);
  if (rows.size() - 1 != cand_lines.size())
    throw data_error("candidate/reference count mismatch: " +
                     std::to_string(cand_lines.size()) + " candidates vs " +
                     std::to_string(rows.size() - 1) + " reference rows");
  EvalCorpus corpus;
  for (size_t i = 0; i < cand_lines.size(); ++i) {
    EvalItem item;
    item.candidate = normalize_and_tokenize(cand_lines[i]);  // rejects empties
    for (const std::string& ref : rows[i + 1])
      item.references.push_back(normalize_and_tokenize(ref));
    corpus.push_back(std::move(item));
  }
  return corpus;
}

}  // namespace acap

#endif  // ACAP_METRICS_HPP
