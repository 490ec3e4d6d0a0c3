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
// Teacher-forced training: decoder input is the token sequence minus its
// last element, the CE target is the sequence shifted left, pads ignored.
// Micro-batch losses are averaged (not summed) across gradient-accumulation
// groups so the learning rate is independent of the accumulation factor.

#ifndef ACAP_TRAIN_HPP
#define ACAP_TRAIN_HPP

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "acap/audio.hpp"
#include "acap/checkpoint.hpp"
#include "acap/data.hpp"
#include "acap/error.hpp"
#include "acap/model.hpp"
#include "acap/optim.hpp"
#include "acap/rlssr.hpp"

namespace acap {

struct TrainConfig {
  int batch_size = 8;        // paper scale: 64
  int grad_accum_steps = 1;  // paper scale: 4
  double lr = 3e-4;
  int max_epochs = 200;
  int max_steps = 0;  // optimizer steps; 0 = no cap
  int early_stop_patience = 10;
  uint64_t seed = 1234;
  enum class Rlssr { kNone, kL1, kL2 } rlssr = Rlssr::kNone;
  double alpha = 1.0;
  double beta = 1.0;
  std::string pretrained_ckpt;  // loaded with prefix "encoder.cnn."
  bool freeze_cnn = false;
  bool use_transformer_encoder = true;
  double val_fraction = 0.1;  // 0 disables validation/early stopping
  double stop_train_ce = 0.0;  // stop once the step CE drops below; 0 = off
  bool use_specaugment = true;
  int vocab_min_freq = 1;

  void validate() const {
    if (batch_size < 1 || grad_accum_steps < 1)
      throw config_error("batch_size and grad_accum_steps must be >= 1");
    if (lr <= 0.0) throw config_error("lr must be > 0");
    if (alpha < 0.0 || beta < 0.0)
      throw config_error("loss weights must be non-negative");
    if (val_fraction < 0.0 || val_fraction >= 1.0)
      throw config_error("val_fraction must be in [0, 1)");
  }
};

struct TrainLog {
  struct Step {
    long step;
    double l_ce, l_rlssr, l_total;
  };
  struct Epoch {
    int epoch;
    double train_ce;
    double val_ce;  // NaN when no validation split
  };
  std::vector<Step> steps;
  std::vector<Epoch> epochs;
  int early_stop_epoch = -1;
  int best_epoch = -1;
  double best_val_ce = std::numeric_limits<double>::infinity();
  double wall_seconds = 0.0;
  std::string config_echo;

  void write_csv(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw data_error("cannot write train log: " + path);
    out << "step,l_ce,l_rlssr,l_total\n";
    char line[128];
    for (const Step& s : steps) {
      std::snprintf(line, sizeof(line), "%ld,%.17g,%.17g,%.17g\n", s.step,
                    s.l_ce, s.l_rlssr, s.l_total);
      out << line;
    }
  }
};

// ---------------------------------------------------------------------------
// dataset assembly
// ---------------------------------------------------------------------------

struct Dataset {
  std::vector<CaptionedClip> clips;
  std::vector<Spectrogram> specs;                // one per clip, cached
  std::vector<std::pair<int, int>> examples;     // (clip, caption) pairs
};

// One training example per distinct (clip, caption) pair; duplicated
// captions within a clip (toy corpus) collapse to one example.
inline Dataset load_dataset(const std::string& data_dir, const MelConfig& mel) {
  namespace fs = std::filesystem;
  Dataset d;
  d.clips = load_clotho_csv((fs::path(data_dir) / "captions.csv").string(),
                            (fs::path(data_dir) / "audio").string());
  for (const CaptionedClip& clip : d.clips)
    d.specs.push_back(logmel(load_wav(clip.audio_path, mel.sample_rate), mel));
  for (size_t c = 0; c < d.clips.size(); ++c) {
    std::vector<std::string> seen;
    for (size_t k = 0; k < d.clips[c].captions.size(); ++k) {
      const std::string& cap = d.clips[c].captions[k];
      if (std::find(seen.begin(), seen.end(), cap) != seen.end()) continue;
      seen.push_back(cap);
      d.examples.emplace_back(static_cast<int>(c), static_cast<int>(k));
    }
  }
  return d;
}

// Deterministic 90/10-style split over clips (not examples, so no caption of
// a validation clip leaks into training).
inline void split_examples(const Dataset& data, double val_fraction, Rng& rng,
                           std::vector<size_t>* train_ex,
                           std::vector<size_t>* val_ex) {
  train_ex->clear();
  val_ex->clear();
  std::vector<int> clip_ids(data.clips.size());
  std::iota(clip_ids.begin(), clip_ids.end(), 0);
  for (size_t i = clip_ids.size(); i > 1; --i)
    std::swap(clip_ids[i - 1],
              clip_ids[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(i) - 1))]);
  size_t n_val = static_cast<size_t>(std::floor(val_fraction *
                                                static_cast<double>(clip_ids.size())));
  std::vector<uint8_t> is_val(data.clips.size(), 0);
  for (size_t i = 0; i < n_val; ++i) is_val[static_cast<size_t>(clip_ids[i])] = 1;
  for (size_t e = 0; e < data.examples.size(); ++e) {
    if (is_val[static_cast<size_t>(data.examples[e].first)])
      val_ex->push_back(e);
    else
      train_ex->push_back(e);
  }
}

// Vocabulary from the clips that own at least one training example; words
// seen only in the validation split are unknown by construction.
inline Vocab vocab_from_split(const Dataset& data,
                              const std::vector<size_t>& train_ex,
                              int min_freq) {
  std::vector<uint8_t> in_train(data.clips.size(), 0);
  for (size_t e : train_ex)
    in_train[static_cast<size_t>(data.examples[e].first)] = 1;
  std::vector<CaptionedClip> train_clips;
  for (size_t c = 0; c < data.clips.size(); ++c)
    if (in_train[c]) train_clips.push_back(data.clips[c]);
  return build_vocab(train_clips, min_freq);
}

// ---------------------------------------------------------------------------
// batch loss
// ---------------------------------------------------------------------------

// Mean over examples of per-example CE (itself a mean over non-pad target
// positions), plus the reconstruction regularizer when enabled.
inline LossBundle batch_loss(Model& model, const Batch& batch, Mode mode,
                             Rng* drop_rng, TrainConfig::Rlssr rlssr_mode,
                             double alpha, double beta) {
  std::vector<EncoderOutput> enc = model.encode_batch(batch, mode, drop_rng);
  Tensor ce_sum, rl_sum;
  bool rlssr_on = rlssr_mode != TrainConfig::Rlssr::kNone && model.rlssr_enabled();
  RlssrParams rl_params = model.rlssr_params();
  rl_params.similarity = rlssr_mode == TrainConfig::Rlssr::kL1
                             ? RlssrParams::Sim::kL1
                             : RlssrParams::Sim::kL2;
  for (int i = 0; i < batch.n; ++i) {
    const std::vector<int>& padded = batch.tokens[static_cast<size_t>(i)];
    std::vector<int> input(padded.begin(), padded.end() - 1);
    std::vector<int> targets(padded.begin() + 1, padded.end());
    DecoderOutput dec = model.decoder_forward(input, enc[static_cast<size_t>(i)].E,
                                              enc[static_cast<size_t>(i)].time_mask,
                                              mode, drop_rng);
    Tensor ce = cross_entropy(dec.logits, targets, Vocab::kPad);
    ce_sum = ce_sum.defined() ? add(ce_sum, ce) : ce;
    if (rlssr_on) {
      std::vector<uint8_t> token_mask(input.size());
      for (size_t j = 0; j < input.size(); ++j)
        token_mask[j] = input[j] != Vocab::kPad;
      RlssrTensors rl = rlssr_forward(
          enc[static_cast<size_t>(i)].A, enc[static_cast<size_t>(i)].time_mask,
          dec.T, token_mask, model.param("rlssr.ffn.weight"),
          model.param("rlssr.ffn.bias"), rl_params);
      rl_sum = rl_sum.defined() ? add(rl_sum, rl.loss) : rl.loss;
    }
  }
  double inv_n = 1.0 / batch.n;
  Tensor l_ce = scale(ce_sum, inv_n);
  Tensor l_rl = rlssr_on ? scale(rl_sum, inv_n) : Tensor::scalar(0.0);
  return combine_losses(l_ce, l_rl, alpha, beta);
}

// teacher-forced CE over a set of examples, eval mode
inline double validation_ce(Model& model, const Dataset& data,
                            const std::vector<size_t>& examples,
                            const Vocab& vocab, int batch_size) {
  if (examples.empty()) return std::numeric_limits<double>::quiet_NaN();
  double total = 0.0;
  size_t pos = 0;
  long count = 0;
  while (pos < examples.size()) {
    size_t end = std::min(pos + static_cast<size_t>(batch_size), examples.size());
    std::vector<const Spectrogram*> specs;
    std::vector<TokenSequence> seqs;
    for (size_t e = pos; e < end; ++e) {
      auto [clip, cap] = data.examples[examples[e]];
      specs.push_back(&data.specs[static_cast<size_t>(clip)]);
      seqs.push_back(encode(data.clips[static_cast<size_t>(clip)]
                                .captions[static_cast<size_t>(cap)],
                            vocab));
    }
    Batch b = make_batch(specs, seqs);
    LossBundle loss = batch_loss(model, b, Mode::kEval, nullptr,
                                 TrainConfig::Rlssr::kNone, 1.0, 0.0);
    total += loss.l_ce.item() * static_cast<double>(end - pos);
    count += static_cast<long>(end - pos);
    pos = end;
  }
  return total / static_cast<double>(count);
}

// ---------------------------------------------------------------------------
// training loop
// ---------------------------------------------------------------------------

struct TrainResult {
  std::vector<NamedTensor> best_state;
  TrainLog log;
};

inline std::vector<NamedTensor> snapshot_state(Model& model) {
  std::vector<NamedTensor> out;
  for (auto& ref : model.state())
    out.push_back({ref.name, ref.tensor.shape(),
                   std::vector<double>(ref.tensor.values())});
  return out;
}

inline TrainResult train(Model& model, const Dataset& data,
                         const std::vector<size_t>& train_ex,
                         const std::vector<size_t>& val_ex, const Vocab& vocab,
                         const TrainConfig& cfg,
                         const SpecAugmentConfig& sa_cfg) {
  cfg.validate();
  if (train_ex.empty()) throw data_error("train: no training examples");
  auto t0 = std::chrono::steady_clock::now();

  Rng root(cfg.seed);
  Rng shuffle_rng = root.split("shuffle");
  Rng sa_rng = root.split("specaugment");
  Rng drop_rng = root.split("dropout");

  if (!cfg.pretrained_ckpt.empty()) {
    auto table = load_checkpoint(cfg.pretrained_ckpt);
    model.load_pretrained(table, "encoder.cnn.", cfg.freeze_cnn);
  } else if (cfg.freeze_cnn) {
    model.set_frozen("encoder.cnn.", true);
  }

  AdamState adam;
  adam.init(model.params());
  TrainResult result;
  TrainLog& log = result.log;

  std::vector<size_t> order(train_ex);
  long step = 0;
  bool stop = false;
  int epochs_since_best = 0;
  const bool has_val = !val_ex.empty();

  for (int epoch = 1; epoch <= cfg.max_epochs && !stop; ++epoch) {
    // seeded Fisher-Yates reshuffle each epoch
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1],
                order[static_cast<size_t>(shuffle_rng.uniform_int(0, static_cast<int>(i) - 1))]);

    double epoch_ce = 0.0;
    long epoch_batches = 0;
    size_t pos = 0;
    while (pos < order.size() && !stop) {
      // one optimizer step = grad_accum_steps micro-batches, averaged
      int group = 0;
      double g_ce = 0.0, g_rl = 0.0, g_total = 0.0;
      while (group < cfg.grad_accum_steps && pos < order.size()) {
        size_t end = std::min(pos + static_cast<size_t>(cfg.batch_size), order.size());
        std::vector<Spectrogram> augmented;
        std::vector<const Spectrogram*> specs;
        std::vector<TokenSequence> seqs;
        augmented.reserve(end - pos);
        for (size_t e = pos; e < end; ++e) {
          auto [clip, cap] = data.examples[order[e]];
          if (cfg.use_specaugment)
            augmented.push_back(
                spec_augment(data.specs[static_cast<size_t>(clip)], sa_cfg, sa_rng));
          else
            augmented.push_back(data.specs[static_cast<size_t>(clip)]);
          seqs.push_back(encode(data.clips[static_cast<size_t>(clip)]
                                    .captions[static_cast<size_t>(cap)],
                                vocab));
        }
        for (const Spectrogram& s : augmented) specs.push_back(&s);
        Batch b = make_batch(specs, seqs);
        pos = end;
        ++group;
        LossBundle loss = batch_loss(model, b, Mode::kTrain, &drop_rng,
                                     cfg.rlssr, cfg.alpha, cfg.beta);
        double lt = loss.l_total.item();
        if (!std::isfinite(lt))
          throw numeric_error("non-finite loss at optimizer step " +
                              std::to_string(step + 1) + " (micro-batch " +
                              std::to_string(group) + ")");
        g_ce += loss.l_ce.item();
        g_rl += loss.l_rlssr.item();
        g_total += lt;
        backward(loss.l_total);
      }
      // average gradients over the group: grads currently hold the sum of
      // d(l_total)/dw over micro-batches; divide by the group size
      if (group > 1) {
        double inv = 1.0 / group;
        for (Parameter& p : model.params())
          if (p.tensor.has_grad())
            for (double& g : p.tensor.grad()) g *= inv;
      }
      adam_step(model.params(), adam, cfg.lr);
      zero_grads(model.params());
      ++step;
      double ce_avg = g_ce / group;
      log.steps.push_back({step, ce_avg, g_rl / group, g_total / group});
      epoch_ce += ce_avg;
      ++epoch_batches;
      if (cfg.max_steps > 0 && step >= cfg.max_steps) stop = true;
      if (cfg.stop_train_ce > 0.0 && ce_avg < cfg.stop_train_ce) stop = true;
    }

    double train_ce = epoch_ce / static_cast<double>(epoch_batches);
    double val_ce = std::numeric_limits<double>::quiet_NaN();
    if (has_val) {
      val_ce = validation_ce(model, data, val_ex, vocab, cfg.batch_size);
      if (val_ce < log.best_val_ce) {
        log.best_val_ce = val_ce;
        log.best_epoch = epoch;
        result.best_state = snapshot_state(model);
        epochs_since_best = 0;
      } else if (++epochs_since_best >= cfg.early_stop_patience) {
        log.early_stop_epoch = epoch;
        stop = true;
      }
    }
    log.epochs.push_back({epoch, train_ce, val_ce});
  }

  if (result.best_state.empty()) result.best_state = snapshot_state(model);
  log.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

}  // namespace acap

#endif  // ACAP_TRAIN_HPP
