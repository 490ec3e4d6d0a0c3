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
// End-to-end workflows over the library: train a model and write its
// artifacts, reload them for evaluation/captioning, and sweep the
// {transformer encoder} x {pretrained CNN} x {rlssr none/l1/l2} grid.
//
// A trained model is three files: <name>.acap (tensor table),
// <name>.acap.vocab (one word per id), <name>.acap.cfg (config echo).

#ifndef ACAP_RUN_HPP
#define ACAP_RUN_HPP

#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "acap/checkpoint.hpp"
#include "acap/config.hpp"
#include "acap/decode.hpp"
#include "acap/metrics.hpp"
#include "acap/model.hpp"
#include "acap/train.hpp"

namespace acap {

inline Model build_model(const RunConfig& cfg, int vocab_size) {
  bool rlssr_on = cfg.rlssr != "none";
  return Model(cfg.encoder(), cfg.decoder(vocab_size), rlssr_on,
               cfg.rlssr_params(), cfg.seed);
}

struct TrainedBundle {
  std::unique_ptr<Model> model;
  Vocab vocab;
  RunConfig cfg;
};

struct TrainRunResult {
  std::string ckpt_path;
  TrainLog log;
  Vocab vocab;
};

inline TrainRunResult train_run(const RunConfig& cfg) {
  namespace fs = std::filesystem;
  if (cfg.data_dir.empty()) throw config_error("data_dir is required");
  if (cfg.out_dir.empty()) throw config_error("out_dir is required");
  fs::create_directories(cfg.out_dir);

  Dataset data = load_dataset(cfg.data_dir, cfg.mel());
  Rng split_rng = Rng(cfg.seed).split("split");
  std::vector<size_t> train_ex, val_ex;
  split_examples(data, cfg.val_fraction, split_rng, &train_ex, &val_ex);

  Vocab vocab = vocab_from_split(data, train_ex, cfg.vocab_min_freq);

  Model model = build_model(cfg, vocab.size());
  TrainResult result = train(model, data, train_ex, val_ex, vocab, cfg.train(),
                             cfg.specaug());
  result.log.config_echo = serialize_config(cfg);

  TrainRunResult out;
  out.ckpt_path = (fs::path(cfg.out_dir) / "model.acap").string();
  save_checkpoint(out.ckpt_path, result.best_state);
  save_vocab(out.ckpt_path + ".vocab", vocab);
  {
    std::ofstream echo(out.ckpt_path + ".cfg");
    echo << result.log.config_echo;
  }
  result.log.write_csv((fs::path(cfg.out_dir) / "train_log.csv").string());
  {
    std::ofstream val((fs::path(cfg.out_dir) / "val_log.csv").string());
    val << "epoch,train_ce,val_ce\n";
    char line[96];
    for (const TrainLog::Epoch& e : result.log.epochs) {
      std::snprintf(line, sizeof(line), "%d,%.17g,%.17g\n", e.epoch, e.train_ce,
                    e.val_ce);
      val << line;
    }
  }
  out.log = std::move(result.log);
  out.vocab = std::move(vocab);
  return out;
}

// Reconstruct a model from its three artifact files.
inline TrainedBundle load_trained(const std::string& ckpt_path) {
  if (!std::filesystem::exists(ckpt_path))
    throw data_error("cannot open checkpoint: " + ckpt_path);
  TrainedBundle b;
  b.cfg = RunConfig{};
  apply_config_file(b.cfg, ckpt_path + ".cfg");
  b.vocab = load_vocab(ckpt_path + ".vocab");
  b.model = std::make_unique<Model>(build_model(b.cfg, b.vocab.size()));
  auto table = load_checkpoint(ckpt_path);
  b.model->load_pretrained(table, "", /*freeze=*/false);
  return b;
}

inline MetricReport eval_run(const std::string& ckpt_path,
                             const std::string& data_dir, int beam_override = 0) {
  TrainedBundle b = load_trained(ckpt_path);
  Dataset data = load_dataset(data_dir, b.cfg.mel());
  BeamConfig beam = b.cfg.beam();
  if (beam_override > 0) beam.beam_size = beam_override;
  MetricReport r = evaluate(*b.model, data.clips, data.specs, b.vocab, beam);
  r.config["ckpt"] = ckpt_path;
  r.config["data_dir"] = data_dir;
  return r;
}

inline std::string caption_run(const std::string& ckpt_path,
                               const std::string& wav_path,
                               int beam_override = 0) {
  TrainedBundle b = load_trained(ckpt_path);
  Waveform wav = load_wav(wav_path, b.cfg.sample_rate);
  Spectrogram spec = logmel(wav, b.cfg.mel());
  BeamConfig beam = b.cfg.beam();
  if (beam_override > 0) beam.beam_size = beam_override;
  Hypothesis hyp = decode_spectrogram(*b.model, spec, beam);
  std::string sentence;
  for (int id : caption_ids(hyp)) {
    if (!sentence.empty()) sentence += ' ';
    sentence += b.vocab.id_to_word[static_cast<size_t>(id)];
  }
  return sentence;
}

// ---------------------------------------------------------------------------
// ablation grid
// ---------------------------------------------------------------------------

struct AblationCell {
  std::string name;
  std::string slug;
  bool use_transformer_encoder;
  bool pretrained;
  std::string rlssr;  // none|l1|l2
  MetricReport report;
  std::string dir;
};

inline std::vector<AblationCell> ablation_grid() {
  std::vector<AblationCell> cells;
  int idx = 0;
  for (bool enc : {true, false})
    for (bool pann : {false, true})
      for (const char* rl : {"none", "l2", "l1"}) {
        AblationCell c;
        c.use_transformer_encoder = enc;
        c.pretrained = pann;
        c.rlssr = rl;
        c.name = enc ? "Base" : "Base - transformer enc";
        if (pann) c.name += " + PANN";
        if (c.rlssr == "l1") c.name += " + L1 loss";
        if (c.rlssr == "l2") c.name += " + L2 loss";
        char slug[48];
        std::snprintf(slug, sizeof(slug), "%02d_%s%s_%s", ++idx,
                      enc ? "enc" : "noenc", pann ? "_pann" : "", rl);
        c.slug = slug;
        cells.push_back(std::move(c));
      }
  return cells;
}

// Runs the 12-cell grid. When no pretrained checkpoint is configured, a
// donor model (Base config) is trained first and its CNN weights serve as
// the transfer source for the PANN cells.
inline std::vector<AblationCell> run_ablation(const RunConfig& base,
                                              const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);

  std::string donor_ckpt = base.pretrained_ckpt;
  if (donor_ckpt.empty()) {
    RunConfig donor = base;
    donor.rlssr = "none";
    donor.use_transformer_encoder = true;
    donor.pretrained_ckpt.clear();
    donor.out_dir = (fs::path(out_dir) / "donor").string();
    donor_ckpt = train_run(donor).ckpt_path;
  }

  std::vector<AblationCell> cells = ablation_grid();
  for (AblationCell& cell : cells) {
    RunConfig cfg = base;
    cfg.use_transformer_encoder = cell.use_transformer_encoder;
    cfg.rlssr = cell.rlssr;
    cfg.pretrained_ckpt = cell.pretrained ? donor_ckpt : "";
    cfg.out_dir = (fs::path(out_dir) / "cells" / cell.slug).string();
    TrainRunResult run = train_run(cfg);
    cell.report = eval_run(run.ckpt_path, cfg.data_dir, cfg.beam_size);
    cell.dir = cfg.out_dir;
  }

  // table in the papers' column order; metrics we do not implement print "-"
  auto fmt = [](double v) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%.3f", v);
    return std::string(buf);
  };
  {
    std::ofstream csv(fs::path(out_dir) / "ablation.csv");
    csv << "model,bleu1,bleu2,bleu3,bleu4,rouge_l,meteor,cider,spice,spider\n";
    for (const AblationCell& c : cells)
      csv << detail::csv_quote(c.name) << "," << fmt(c.report.bleu1) << ","
          << fmt(c.report.bleu2) << "," << fmt(c.report.bleu3) << ","
          << fmt(c.report.bleu4) << "," << fmt(c.report.rouge_l) << ",-,"
          << fmt(c.report.cider_d) << ",-,-\n";
  }
  {
    std::ofstream txt(fs::path(out_dir) / "ablation.txt");
    char line[256];
    std::snprintf(line, sizeof(line), "%-36s %6s %6s %6s %6s %7s %7s %6s %6s %6s\n",
                  "Model", "BLEU1", "BLEU2", "BLEU3", "BLEU4", "ROUGE_L",
                  "METEOR", "CIDEr", "SPICE", "SPIDEr");
    txt << line;
    for (const AblationCell& c : cells) {
      std::snprintf(line, sizeof(line),
                    "%-36s %6.3f %6.3f %6.3f %6.3f %7.3f %7s %6.3f %6s %6s\n",
                    c.name.c_str(), c.report.bleu1, c.report.bleu2,
                    c.report.bleu3, c.report.bleu4, c.report.rouge_l, "-",
                    c.report.cider_d, "-", "-");
      txt << line;
    }
  }
  return cells;
}

}  // namespace acap

#endif  // ACAP_RUN_HPP
