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
// acap — audio captioning workbench.
//   toydata   generate the synthetic toy corpus
//   train     train a captioner (writes model.acap + vocab + config echo)
//   eval      score a trained model on a dataset (JSON report)
//   caption   caption a single wav file
//   ablate    run the {transformer enc} x {pretrained} x {rlssr} grid
//   score     standalone metric scoring of candidate/reference files
//   mels      dump a log-mel feature file for one wav
//
// Exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "acap/config.hpp"
#include "acap/metrics.hpp"
#include "acap/run.hpp"

namespace fs = std::filesystem;

namespace {

struct CommonTrainFlags {
  std::string config_file;
  std::string data_dir;
  std::string out_dir;
  std::string pretrained;
  std::string rlssr;
  bool freeze_cnn = false;
  bool no_transformer_encoder = false;
  long long seed = -1;
  std::vector<std::string> overrides;
};

// precedence: defaults < config file < explicit flags
acap::RunConfig resolve_config(const CommonTrainFlags& flags) {
  acap::RunConfig cfg;
  if (!flags.config_file.empty()) acap::apply_config_file(cfg, flags.config_file);
  for (const std::string& kv : flags.overrides) {
    size_t eq = kv.find('=');
    if (eq == std::string::npos)
      throw acap::config_error("--set expects key=value, got \"" + kv + "\"");
    acap::config_set(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (!flags.data_dir.empty()) cfg.data_dir = flags.data_dir;
  if (!flags.out_dir.empty()) cfg.out_dir = flags.out_dir;
  if (!flags.pretrained.empty()) cfg.pretrained_ckpt = flags.pretrained;
  if (!flags.rlssr.empty()) acap::config_set(cfg, "rlssr", flags.rlssr);
  if (flags.freeze_cnn) cfg.freeze_cnn = true;
  if (flags.no_transformer_encoder) cfg.use_transformer_encoder = false;
  if (flags.seed >= 0) cfg.seed = static_cast<uint64_t>(flags.seed);
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acap: desk-scale audio captioning with RLSSR regularization"};
  app.require_subcommand(1);

  // --- toydata ---------------------------------------------------------
  std::string toy_out;
  int toy_n = 8;
  long long toy_seed = 1234;
  bool toy_force = false;
  CLI::App* toydata = app.add_subcommand("toydata", "generate a synthetic toy corpus");
  toydata->add_option("--out", toy_out, "output directory")->required();
  toydata->add_option("--n", toy_n, "number of clips")->capture_default_str();
  toydata->add_option("--seed", toy_seed, "corpus seed")->capture_default_str();
  toydata->add_flag("--force", toy_force, "overwrite a non-empty directory");

  // --- train -----------------------------------------------------------
  CommonTrainFlags tr;
  CLI::App* train_cmd = app.add_subcommand("train", "train a captioning model");
  train_cmd->add_option("--config", tr.config_file, "run config file (key = value)");
  train_cmd->add_option("--data", tr.data_dir, "dataset directory (captions.csv + audio/)");
  train_cmd->add_option("--out", tr.out_dir, "output directory");
  train_cmd->add_option("--pretrained", tr.pretrained,
                        "checkpoint whose encoder.cnn.* tensors seed the CNN");
  train_cmd->add_flag("--freeze-cnn", tr.freeze_cnn, "freeze the (loaded) CNN");
  train_cmd->add_option("--rlssr", tr.rlssr, "none|l1|l2")
      ->check(CLI::IsMember({"none", "l1", "l2"}));
  train_cmd->add_flag("--no-transformer-encoder", tr.no_transformer_encoder,
                      "bypass the transformer encoder (projected CNN output only)");
  train_cmd->add_option("--seed", tr.seed, "root seed (overrides config)");
  train_cmd->add_option("--set", tr.overrides, "extra key=value config overrides")
      ->take_all();

  // --- eval ------------------------------------------------------------
  std::string eval_ckpt, eval_data, eval_out;
  int eval_beam = 0;
  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a trained model");
  eval_cmd->add_option("--ckpt", eval_ckpt, "model.acap path")->required();
  eval_cmd->add_option("--data", eval_data, "dataset directory")->required();
  eval_cmd->add_option("--beam", eval_beam, "beam size override");
  eval_cmd->add_option("--out", eval_out, "also write the JSON report here");

  // --- caption ---------------------------------------------------------
  std::string cap_ckpt, cap_wav;
  int cap_beam = 0;
  CLI::App* caption_cmd = app.add_subcommand("caption", "caption one wav file");
  caption_cmd->add_option("--ckpt", cap_ckpt, "model.acap path")->required();
  caption_cmd->add_option("--wav", cap_wav, "input wav file")->required();
  caption_cmd->add_option("--beam", cap_beam, "beam size override");

  // --- ablate ----------------------------------------------------------
  CommonTrainFlags ab;
  std::string ablate_out;
  CLI::App* ablate_cmd =
      app.add_subcommand("ablate", "run the 12-cell ablation grid");
  ablate_cmd->add_option("--config", ab.config_file, "base run config file");
  ablate_cmd->add_option("--data", ab.data_dir, "dataset directory");
  ablate_cmd->add_option("--out", ablate_out, "grid output directory")->required();
  ablate_cmd->add_option("--seed", ab.seed, "root seed (overrides config)");
  ablate_cmd->add_option("--set", ab.overrides, "extra key=value config overrides")
      ->take_all();

  // --- score -----------------------------------------------------------
  std::string score_cands, score_refs, score_out;
  CLI::App* score_cmd = app.add_subcommand(
      "score", "score candidate captions against reference captions");
  score_cmd->add_option("--cands", score_cands, "one candidate per line")->required();
  score_cmd->add_option("--refs", score_refs, "csv with caption_1..caption_K header")
      ->required();
  score_cmd->add_option("--out", score_out, "also write the JSON report here");

  // --- mels ------------------------------------------------------------
  std::string mels_wav, mels_out, mels_config;
  CLI::App* mels_cmd = app.add_subcommand("mels", "dump log-mel features for a wav");
  mels_cmd->add_option("--wav", mels_wav, "input wav file")->required();
  mels_cmd->add_option("--out", mels_out, "output .mels file")->required();
  mels_cmd->add_option("--config", mels_config, "run config file for mel settings");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*toydata) {
      if (fs::exists(toy_out) && !fs::is_empty(toy_out) && !toy_force)
        throw acap::config_error("output directory " + toy_out +
                                 " is not empty (use --force to overwrite)");
      if (toy_force) fs::remove_all(toy_out);
      acap::gen_toy_corpus(toy_n, static_cast<uint64_t>(toy_seed), toy_out);
      std::printf("wrote %d clips to %s\n", toy_n, toy_out.c_str());
    } else if (*train_cmd) {
      acap::RunConfig cfg = resolve_config(tr);
      acap::TrainRunResult result = acap::train_run(cfg);
      for (const acap::TrainLog::Epoch& e : result.log.epochs) {
        if (std::isnan(e.val_ce))
          std::printf("epoch %3d  train_ce %.4f\n", e.epoch, e.train_ce);
        else
          std::printf("epoch %3d  train_ce %.4f  val_ce %.4f\n", e.epoch,
                      e.train_ce, e.val_ce);
      }
      if (result.log.early_stop_epoch > 0)
        std::printf("early stop at epoch %d (best epoch %d)\n",
                    result.log.early_stop_epoch, result.log.best_epoch);
      std::printf("wrote %s (%zu steps, %.1f s)\n", result.ckpt_path.c_str(),
                  result.log.steps.size(), result.log.wall_seconds);
    } else if (*eval_cmd) {
      acap::MetricReport report = acap::eval_run(eval_ckpt, eval_data, eval_beam);
      std::string json = report.to_json().dump(2);
      std::printf("%s\n", json.c_str());
      if (!eval_out.empty()) {
        std::ofstream out(eval_out);
        out << json << "\n";
      }
    } else if (*caption_cmd) {
      std::printf("%s\n", acap::caption_run(cap_ckpt, cap_wav, cap_beam).c_str());
    } else if (*ablate_cmd) {
      acap::RunConfig cfg = resolve_config(ab);
      auto cells = acap::run_ablation(cfg, ablate_out);
      std::ifstream table(fs::path(ablate_out) / "ablation.txt");
      std::cout << table.rdbuf();
      std::printf("wrote %s/ablation.{txt,csv} (%zu rows)\n", ablate_out.c_str(),
                  cells.size());
    } else if (*score_cmd) {
      acap::EvalCorpus corpus = acap::load_eval_corpus(score_cands, score_refs);
      acap::MetricReport report = acap::score_corpus(corpus);
      report.config["candidates"] = score_cands;
      report.config["references"] = score_refs;
      std::string json = report.to_json().dump(2);
      std::printf("%s\n", json.c_str());
      if (!score_out.empty()) {
        std::ofstream out(score_out);
        out << json << "\n";
      }
    } else if (*mels_cmd) {
      acap::RunConfig cfg;
      if (!mels_config.empty()) acap::apply_config_file(cfg, mels_config);
      acap::Waveform wav = acap::load_wav(mels_wav, cfg.sample_rate);
      acap::Spectrogram spec = acap::logmel(wav, cfg.mel());
      acap::save_mels(mels_out, spec);
      std::printf("wrote %s (%d frames x %d mels)\n", mels_out.c_str(),
                  spec.n_frames, spec.n_mels);
    }
  } catch (const acap::config_error& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const acap::data_error& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 3;
  } catch (const acap::numeric_error& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
