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
// Flat `key = value` run configuration. Every key has a default; file
// values override defaults and command-line flags override the file.
// Unknown keys are errors.

#ifndef ACAP_CONFIG_HPP
#define ACAP_CONFIG_HPP

#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "acap/audio.hpp"
#include "acap/decode.hpp"
#include "acap/error.hpp"
#include "acap/model.hpp"
#include "acap/train.hpp"

namespace acap {

struct RunConfig {
  // audio frontend
  int sample_rate = 44100;
  int n_fft = 1024;
  int hop = 512;
  int n_mels = 64;
  bool center_pad = true;
  double log_floor = 1e-10;
  // spec augment
  int sa_time_masks = 2;
  int sa_time_width = 64;
  int sa_freq_masks = 2;
  int sa_freq_width = 8;
  double sa_fill = 0.0;
  bool use_specaugment = true;
  // model
  std::vector<int> cnn_channels = {8, 16, 32, 64};
  int enc_layers = 2;
  int dec_layers = 2;
  int d_model = 192;
  int n_heads = 4;
  int ffn_dim = 0;
  double dropout = 0.1;
  bool use_transformer_encoder = true;
  int max_len = 30;
  // rlssr
  std::string rlssr = "none";  // none|l1|l2
  int rlssr_kernel = 3;
  int rlssr_stride = 2;
  bool rlssr_stop_grad_audio = false;
  double alpha = 1.0;
  double beta = 1.0;
  // training
  int batch_size = 8;
  int grad_accum_steps = 1;
  double lr = 3e-4;
  int max_epochs = 200;
  int max_steps = 0;
  int early_stop_patience = 10;
  uint64_t seed = 1234;
  std::string pretrained_ckpt;
  bool freeze_cnn = false;
  double val_fraction = 0.1;
  double stop_train_ce = 0.0;
  int vocab_min_freq = 1;
  // decoding
  int beam_size = 4;
  double length_penalty = 0.0;
  // paths
  std::string data_dir;
  std::string out_dir;

  MelConfig mel() const {
    MelConfig m;
    m.sample_rate = sample_rate;
    m.n_fft = n_fft;
    m.hop = hop;
    m.n_mels = n_mels;
    m.center_pad = center_pad;
    m.log_floor = log_floor;
    return m;
  }

  SpecAugmentConfig specaug() const {
    SpecAugmentConfig s;
    s.n_time_masks = sa_time_masks;
    s.max_time_width_frames = sa_time_width;
    s.n_freq_masks = sa_freq_masks;
    s.max_freq_width_bins = sa_freq_width;
    s.fill_value = sa_fill;
    return s;
  }

  EncoderConfig encoder() const {
    EncoderConfig e;
    e.cnn_channels = cnn_channels;
    e.enc_layers = enc_layers;
    e.d_model = d_model;
    e.n_heads = n_heads;
    e.ffn_dim = ffn_dim;
    e.dropout = dropout;
    e.use_transformer_encoder = use_transformer_encoder;
    return e;
  }

  DecoderConfig decoder(int vocab_size) const {
    DecoderConfig d;
    d.dec_layers = dec_layers;
    d.d_model = d_model;
    d.n_heads = n_heads;
    d.ffn_dim = ffn_dim;
    d.vocab_size = vocab_size;
    d.max_len = max_len;
    d.dropout = dropout;
    return d;
  }

  RlssrParams rlssr_params() const {
    RlssrParams p;
    p.similarity = rlssr == "l2" ? RlssrParams::Sim::kL2 : RlssrParams::Sim::kL1;
    p.local_max_kernel = rlssr_kernel;
    p.local_max_stride = rlssr_stride;
    p.stop_grad_audio = rlssr_stop_grad_audio;
    return p;
  }

  TrainConfig::Rlssr rlssr_mode() const {
    if (rlssr == "none") return TrainConfig::Rlssr::kNone;
    if (rlssr == "l1") return TrainConfig::Rlssr::kL1;
    if (rlssr == "l2") return TrainConfig::Rlssr::kL2;
    throw config_error("rlssr must be one of none|l1|l2, got \"" + rlssr + "\"");
  }

  TrainConfig train() const {
    TrainConfig t;
    t.batch_size = batch_size;
    t.grad_accum_steps = grad_accum_steps;
    t.lr = lr;
    t.max_epochs = max_epochs;
    t.max_steps = max_steps;
    t.early_stop_patience = early_stop_patience;
    t.seed = seed;
    t.rlssr = rlssr_mode();
    t.alpha = alpha;
    t.beta = beta;
    t.pretrained_ckpt = pretrained_ckpt;
    t.freeze_cnn = freeze_cnn;
    t.use_transformer_encoder = use_transformer_encoder;
    t.val_fraction = val_fraction;
    t.stop_train_ce = stop_train_ce;
    t.use_specaugment = use_specaugment;
    t.vocab_min_freq = vocab_min_freq;
    return t;
  }

  BeamConfig beam() const {
    BeamConfig b;
    b.beam_size = beam_size;
    b.max_len = max_len;
    b.length_penalty_alpha = length_penalty;
    return b;
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t");
  return s.substr(a, b - a + 1);
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw config_error("config key " + key + " expects true/false, got \"" + v + "\"");
}

template <typename T>
T parse_num(const std::string& key, const std::string& v) {
  std::istringstream ss(v);
  T out;
  ss >> out;
  if (ss.fail() || !ss.eof())
    throw config_error("config key " + key + " has bad value \"" + v + "\"");
  return out;
}

inline std::vector<int> parse_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  std::string item;
  std::istringstream ss(v);
  while (std::getline(ss, item, ','))
    out.push_back(parse_num<int>(key, trim(item)));
  if (out.empty()) throw config_error("config key " + key + " is empty");
  return out;
}

}  // namespace detail

// Apply one key=value pair (file line or CLI override).
inline void config_set(RunConfig& cfg, const std::string& key,
                       const std::string& value) {
  using detail::parse_bool;
  using detail::parse_int_list;
  using detail::parse_num;
  if (key == "sample_rate") cfg.sample_rate = parse_num<int>(key, value);
  else if (key == "n_fft") cfg.n_fft = parse_num<int>(key, value);
  else if (key == "hop") cfg.hop = parse_num<int>(key, value);
  else if (key == "n_mels") cfg.n_mels = parse_num<int>(key, value);
  else if (key == "center_pad") cfg.center_pad = parse_bool(key, value);
  else if (key == "log_floor") cfg.log_floor = parse_num<double>(key, value);
  else if (key == "sa_time_masks") cfg.sa_time_masks = parse_num<int>(key, value);
  else if (key == "sa_time_width") cfg.sa_time_width = parse_num<int>(key, value);
  else if (key == "sa_freq_masks") cfg.sa_freq_masks = parse_num<int>(key, value);
  else if (key == "sa_freq_width") cfg.sa_freq_width = parse_num<int>(key, value);
  else if (key == "sa_fill") cfg.sa_fill = parse_num<double>(key, value);
  else if (key == "use_specaugment") cfg.use_specaugment = parse_bool(key, value);
  else if (key == "cnn_channels") cfg.cnn_channels = parse_int_list(key, value);
  else if (key == "enc_layers") cfg.enc_layers = parse_num<int>(key, value);
  else if (key == "dec_layers") cfg.dec_layers = parse_num<int>(key, value);
  else if (key == "d_model") cfg.d_model = parse_num<int>(key, value);
  else if (key == "n_heads") cfg.n_heads = parse_num<int>(key, value);
  else if (key == "ffn_dim") cfg.ffn_dim = parse_num<int>(key, value);
  else if (key == "dropout") cfg.dropout = parse_num<double>(key, value);
  else if (key == "use_transformer_encoder")
    cfg.use_transformer_encoder = parse_bool(key, value);
  else if (key == "max_len") cfg.max_len = parse_num<int>(key, value);
  else if (key == "rlssr") {
    if (value != "none" && value != "l1" && value != "l2")
      throw config_error("rlssr must be one of none|l1|l2, got \"" + value + "\"");
    cfg.rlssr = value;
  }
  else if (key == "rlssr_kernel") cfg.rlssr_kernel = parse_num<int>(key, value);
  else if (key == "rlssr_stride") cfg.rlssr_stride = parse_num<int>(key, value);
  else if (key == "rlssr_stop_grad_audio")
    cfg.rlssr_stop_grad_audio = parse_bool(key, value);
  else if (key == "alpha") cfg.alpha = parse_num<double>(key, value);
  else if (key == "beta") cfg.beta = parse_num<double>(key, value);
  else if (key == "batch_size") cfg.batch_size = parse_num<int>(key, value);
  else if (key == "grad_accum_steps")
    cfg.grad_accum_steps = parse_num<int>(key, value);
  else if (key == "lr") cfg.lr = parse_num<double>(key, value);
  else if (key == "max_epochs") cfg.max_epochs = parse_num<int>(key, value);
  else if (key == "max_steps") cfg.max_steps = parse_num<int>(key, value);
  else if (key == "early_stop_patience")
    cfg.early_stop_patience = parse_num<int>(key, value);
  else if (key == "seed") cfg.seed = parse_num<uint64_t>(key, value);
  else if (key == "pretrained_ckpt") cfg.pretrained_ckpt = value;
  else if (key == "freeze_cnn") cfg.freeze_cnn = parse_bool(key, value);
  else if (key == "val_fraction") cfg.val_fraction = parse_num<double>(key, value);
  else if (key == "stop_train_ce") cfg.stop_train_ce = parse_num<double>(key, value);
  else if (key == "vocab_min_freq") cfg.vocab_min_freq = parse_num<int>(key, value);
  else if (key == "beam_size") cfg.beam_size = parse_num<int>(key, value);
  else if (key == "length_penalty") cfg.length_penalty = parse_num<double>(key, value);
  else if (key == "data_dir") cfg.data_dir = value;
  else if (key == "out_dir") cfg.out_dir = value;
  else
    throw config_error("unknown config key \"" + key + "\"");
}

inline void apply_config_file(RunConfig& cfg, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw config_error("cannot open config file: " + path);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::string stripped = detail::trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    size_t eq = stripped.find('=');
    if (eq == std::string::npos)
      throw config_error(path + ":" + std::to_string(lineno) +
                         ": expected key = value");
    std::string key = detail::trim(stripped.substr(0, eq));
    std::string value = detail::trim(stripped.substr(eq + 1));
    config_set(cfg, key, value);
  }
}

inline std::string serialize_config(const RunConfig& cfg) {
  std::ostringstream out;
  out.precision(17);
  auto kv = [&](const std::string& k, const auto& v) { out << k << " = " << v << "\n"; };
  auto kb = [&](const std::string& k, bool v) { out << k << " = " << (v ? "true" : "false") << "\n"; };
  kv("sample_rate", cfg.sample_rate);
  kv("n_fft", cfg.n_fft);
  kv("hop", cfg.hop);
  kv("n_mels", cfg.n_mels);
  kb("center_pad", cfg.center_pad);
  kv("log_floor", cfg.log_floor);
  kv("sa_time_masks", cfg.sa_time_masks);
  kv("sa_time_width", cfg.sa_time_width);
  kv("sa_freq_masks", cfg.sa_freq_masks);
  kv("sa_freq_width", cfg.sa_freq_width);
  kv("sa_fill", cfg.sa_fill);
  kb("use_specaugment", cfg.use_specaugment);
  {
    std::string chans;
    for (size_t i = 0; i < cfg.cnn_channels.size(); ++i) {
      if (i) chans += ",";
      chans += std::to_string(cfg.cnn_channels[i]);
    }
    kv("cnn_channels", chans);
  }
  kv("enc_layers", cfg.enc_layers);
  kv("dec_layers", cfg.dec_layers);
  kv("d_model", cfg.d_model);
  kv("n_heads", cfg.n_heads);
  kv("ffn_dim", cfg.ffn_dim);
  kv("dropout", cfg.dropout);
  kb("use_transformer_encoder", cfg.use_transformer_encoder);
  kv("max_len", cfg.max_len);
  kv("rlssr", cfg.rlssr);
  kv("rlssr_kernel", cfg.rlssr_kernel);
  kv("rlssr_stride", cfg.rlssr_stride);
  kb("rlssr_stop_grad_audio", cfg.rlssr_stop_grad_audio);
  kv("alpha", cfg.alpha);
  kv("beta", cfg.beta);
  kv("batch_size", cfg.batch_size);
  kv("grad_accum_steps", cfg.grad_accum_steps);
  kv("lr", cfg.lr);
  kv("max_epochs", cfg.max_epochs);
  kv("max_steps", cfg.max_steps);
  kv("early_stop_patience", cfg.early_stop_patience);
  kv("seed", cfg.seed);
  kv("pretrained_ckpt", cfg.pretrained_ckpt);
  kb("freeze_cnn", cfg.freeze_cnn);
  kv("val_fraction", cfg.val_fraction);
  kv("stop_train_ce", cfg.stop_train_ce);
  kv("vocab_min_freq", cfg.vocab_min_freq);
  kv("beam_size", cfg.beam_size);
  kv("length_penalty", cfg.length_penalty);
  kv("data_dir", cfg.data_dir);
  kv("out_dir", cfg.out_dir);
  return out.str();
}

}  // namespace acap

#endif  // ACAP_CONFIG_HPP
