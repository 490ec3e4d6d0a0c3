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
// Encoder (CNN10 topology + 2-layer post-norm transformer encoder) and
// 2-layer transformer decoder. The CNN output A feeds both the transformer
// encoder and the reconstruction head; the decoder exposes its last-layer
// embeddings T alongside the logits. Widths are configurable so the same
// code runs paper-scale and desk-scale.

#ifndef ACAP_MODEL_HPP
#define ACAP_MODEL_HPP

#include <cmath>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "acap/conv.hpp"
#include "acap/data.hpp"
#include "acap/error.hpp"
#include "acap/optim.hpp"
#include "acap/tensor.hpp"

namespace acap {

enum class Mode { kTrain, kEval };

struct EncoderConfig {
  std::vector<int> cnn_channels = {8, 16, 32, 64};  // paper scale: 64,128,256,512
  int enc_layers = 2;
  int d_model = 192;
  int n_heads = 4;
  int ffn_dim = 0;  // 0 means 4 * d_model
  double dropout = 0.1;
  bool use_transformer_encoder = true;

  int ffn() const { return ffn_dim > 0 ? ffn_dim : 4 * d_model; }
  void validate() const {
    if (cnn_channels.size() != 4)
      throw config_error("encoder: cnn_channels must have 4 entries");
    for (int c : cnn_channels)
      if (c < 1) throw config_error("encoder: cnn_channels must be positive");
    if (d_model < 1 || n_heads < 1 || d_model % n_heads != 0)
      throw config_error("encoder: d_model must be divisible by n_heads");
    if (enc_layers < 1) throw config_error("encoder: enc_layers must be >= 1");
  }
};

struct DecoderConfig {
  int dec_layers = 2;
  int d_model = 192;
  int n_heads = 4;
  int ffn_dim = 0;
  int vocab_size = 0;
  int max_len = 30;
  double dropout = 0.1;

  int ffn() const { return ffn_dim > 0 ? ffn_dim : 4 * d_model; }
  void validate() const {
    if (d_model < 1 || n_heads < 1 || d_model % n_heads != 0)
      throw config_error("decoder: d_model must be divisible by n_heads");
    if (dec_layers < 1) throw config_error("decoder: dec_layers must be >= 1");
    if (vocab_size < 5) throw config_error("decoder: vocab_size too small");
    if (max_len < 2) throw config_error("decoder: max_len must be >= 2");
  }
};

// Reconstruction head settings (Eq-level knobs live here, ops in rlssr.hpp).
struct RlssrParams {
  enum class Sim { kL1, kL2 };
  Sim similarity = Sim::kL1;
  int local_max_kernel = 3;
  int local_max_stride = 2;
  bool stop_grad_audio = false;
};

// Per-example encoder result. A: [t, d_a] CNN latents after frequency
// pooling; E: [t, d_model] transformer-encoder output (or projected A when
// the transformer encoder is bypassed); time_mask marks valid steps.
struct EncoderOutput {
  Tensor A;
  Tensor E;
  std::vector<uint8_t> time_mask;
  int valid_len = 0;
};

struct DecoderOutput {
  Tensor logits;  // [seq, vocab]
  Tensor T;       // [seq, d_model] last-layer embeddings, pre-projection
};

struct LoadReport {
  std::vector<std::string> loaded;
  std::vector<std::string> filtered_out;   // checkpoint names outside prefix
  std::vector<std::string> missing_in_model;
};

namespace detail {

inline std::shared_ptr<std::vector<double>> sinusoidal_pe(int len, int d) {
  auto pe = std::make_shared<std::vector<double>>(static_cast<size_t>(len) * d);
  for (int pos = 0; pos < len; ++pos)
    for (int i = 0; i < d; ++i) {
      double omega = std::pow(10000.0, -2.0 * (i / 2) / static_cast<double>(d));
      double ang = pos * omega;
      (*pe)[static_cast<size_t>(pos) * d + i] = (i % 2 == 0) ? std::sin(ang)
                                                             : std::cos(ang);
    }
  return pe;
}

}  // namespace detail

class Model {
 public:
  Model(EncoderConfig enc, DecoderConfig dec, bool rlssr_enabled,
        RlssrParams rlssr, uint64_t init_seed)
      : enc_(std::move(enc)), dec_(dec), rlssr_(rlssr),
        rlssr_enabled_(rlssr_enabled) {
    enc_.validate();
    dec_.validate();
    Rng root(init_seed);
    build_params(root);
  }

  const EncoderConfig& encoder_config() const { return enc_; }
  const DecoderConfig& decoder_config() const { return dec_; }
  const RlssrParams& rlssr_params() const { return rlssr_; }
  bool rlssr_enabled() const { return rlssr_enabled_; }
  int d_audio() const { return enc_.cnn_channels.back(); }

  std::vector<Parameter>& params() { return params_; }
  const std::vector<Parameter>& params() const { return params_; }
  std::vector<Parameter>& buffers() { return buffers_; }
  const std::vector<Parameter>& buffers() const { return buffers_; }

  Tensor& param(const std::string& name) {
    auto it = param_index_.find(name);
    if (it == param_index_.end())
      throw shape_error("no parameter named " + name);
    return params_[it->second].tensor;
  }
  Tensor& buffer(const std::string& name) {
    auto it = buffer_index_.find(name);
    if (it == buffer_index_.end())
      throw shape_error("no buffer named " + name);
    return buffers_[it->second].tensor;
  }
  bool has_param(const std::string& name) const {
    return param_index_.count(name) > 0;
  }

  size_t parameter_count() const {
    size_t n = 0;
    for (const Parameter& p : params_) n += p.tensor.numel();
    return n;
  }

  void set_frozen(const std::string& prefix, bool frozen) {
    for (Parameter& p : params_)
      if (p.name.rfind(prefix, 0) == 0) p.frozen = frozen;
  }

  // -------------------------------------------------------------------------
  // CNN10: 4 blocks of [conv3x3 -> BN -> ReLU] x2 then 2x2 average pooling,
  // followed by a mean over the frequency axis. Returns the batched latent
  // sequence [n, t', d_a] and per-example valid pooled lengths. Padded time
  // steps are zeroed before the first conv and after every pooling stage, so
  // values in the padding region can never reach valid positions.
  // -------------------------------------------------------------------------
  struct CnnOut {
    Tensor seq;  // [n, t', d_a]
    std::vector<int> valid_t;
    int t_full = 0;
  };

  CnnOut cnn10_forward(const Batch& batch, Mode mode) {
    if (batch.n_mels != 64)
      throw shape_error("cnn10: expected 64 mel bins, got " +
                        std::to_string(batch.n_mels));
    std::vector<int> valid = batch.mel_lens;
    for (int len : valid)
      if (len / 16 < 1)
        throw shape_error("cnn10: input of " + std::to_string(len) +
                          " frames is fully pooled away (need >= 16)");

    Tensor x = Tensor::from_data({batch.n, 1, batch.t_max, batch.n_mels},
                                 batch.mel);
    x = mul_mask(x, time_mask_nchw(batch.n, 1, batch.t_max, batch.n_mels, valid));

    bool train = mode == Mode::kTrain;
    int t = batch.t_max;
    int f = batch.n_mels;
    for (int b = 1; b <= 4; ++b) {
      std::string base = "encoder.cnn.block" + std::to_string(b);
      x = relu(batchnorm2d(conv2d(x, param(base + ".conv1.weight"), 1, 1),
                           param(base + ".bn1.gamma"), param(base + ".bn1.beta"),
                           buffer(base + ".bn1.running_mean"),
                           buffer(base + ".bn1.running_var"), train));
      x = relu(batchnorm2d(conv2d(x, param(base + ".conv2.weight"), 1, 1),
                           param(base + ".bn2.gamma"), param(base + ".bn2.beta"),
                           buffer(base + ".bn2.running_mean"),
                           buffer(base + ".bn2.running_var"), train));
      x = avg_pool2d_2x2(x);
      t /= 2;
      f /= 2;
      for (int& len : valid) len /= 2;
      x = mul_mask(x, time_mask_nchw(batch.n, enc_.cnn_channels[static_cast<size_t>(b - 1)],
                                     t, f, valid));
    }
    CnnOut out;
    out.seq = freq_mean(x);  // [n, t', d_a]
    out.valid_t = std::move(valid);
    out.t_full = t;
    return out;
  }

  // -------------------------------------------------------------------------
  // transformer encoder over one example's CNN latents
  // -------------------------------------------------------------------------
  Tensor transformer_encode(const Tensor& A, const std::vector<uint8_t>& time_mask,
                            Mode mode, Rng* drop_rng) {
    if (A.rank() != 2 || A.dim(1) != d_audio())
      throw shape_error("transformer_encode: A must be [t, d_a]");
    Tensor x = linear(A, param("encoder.proj.weight"), param("encoder.proj.bias"));
    if (!enc_.use_transformer_encoder) return x;
    int t = A.dim(0);
    x = add_const(x, detail::sinusoidal_pe(t, enc_.d_model));
    for (int l = 1; l <= enc_.enc_layers; ++l) {
      std::string base = "encoder.transformer.layer" + std::to_string(l);
      Tensor attn = mha(base + ".attn", x, x, /*causal=*/false, &time_mask,
                        enc_.n_heads, mode, drop_rng, enc_.dropout);
      x = layer_norm(add(x, attn), param(base + ".norm1.gamma"),
                     param(base + ".norm1.beta"));
      Tensor ff = ffn_block(base + ".ffn", x, enc_.dropout, mode, drop_rng);
      x = layer_norm(add(x, ff), param(base + ".norm2.gamma"),
                     param(base + ".norm2.beta"));
    }
    return x;
  }

  // full per-example encode over a batch
  std::vector<EncoderOutput> encode_batch(const Batch& batch, Mode mode,
                                          Rng* drop_rng) {
    CnnOut cnn = cnn10_forward(batch, mode);
    std::vector<EncoderOutput> outs;
    for (int i = 0; i < batch.n; ++i) {
      EncoderOutput eo;
      eo.valid_len = cnn.valid_t[static_cast<size_t>(i)];
      eo.time_mask.assign(static_cast<size_t>(cnn.t_full), 0);
      for (int j = 0; j < eo.valid_len; ++j) eo.time_mask[static_cast<size_t>(j)] = 1;
      eo.A = select_sequence(cnn.seq, i);
      eo.E = transformer_encode(eo.A, eo.time_mask, mode, drop_rng);
      outs.push_back(std::move(eo));
    }
    return outs;
  }

  EncoderOutput encode_one(const Spectrogram& spec, Mode mode, Rng* drop_rng) {
    std::vector<const Spectrogram*> specs = {&spec};
    std::vector<TokenSequence> dummy = {TokenSequence{{Vocab::kSos, Vocab::kEos}}};
    Batch b = make_batch(specs, dummy);
    return std::move(encode_batch(b, mode, drop_rng)[0]);
  }

  // -------------------------------------------------------------------------
  // transformer decoder: causal self-attention, cross-attention over E, FFN.
  // input_ids start with sos; logits at position i predict token i+1.
  // -------------------------------------------------------------------------
  DecoderOutput decoder_forward(const std::vector<int>& input_ids,
                                const Tensor& E,
                                const std::vector<uint8_t>& enc_mask, Mode mode,
                                Rng* drop_rng) {
    if (input_ids.empty() || input_ids.front() != Vocab::kSos)
      throw shape_error("decoder: input must start with sos");
    int L = static_cast<int>(input_ids.size());
    Tensor x = embedding(param("decoder.embed.weight"), input_ids);
    x = scale(x, std::sqrt(static_cast<double>(dec_.d_model)));
    x = add_const(x, detail::sinusoidal_pe(L, dec_.d_model));
    for (int l = 1; l <= dec_.dec_layers; ++l) {
      std::string base = "decoder.layer" + std::to_string(l);
      Tensor self = mha(base + ".self_attn", x, x, /*causal=*/true, nullptr,
                        dec_.n_heads, mode, drop_rng, dec_.dropout);
      x = layer_norm(add(x, self), param(base + ".norm1.gamma"),
                     param(base + ".norm1.beta"));
      Tensor cross = mha(base + ".cross_attn", x, E, /*causal=*/false,
                         &enc_mask, dec_.n_heads, mode, drop_rng, dec_.dropout);
      x = layer_norm(add(x, cross), param(base + ".norm2.gamma"),
                     param(base + ".norm2.beta"));
      Tensor ff = ffn_block(base + ".ffn", x, dec_.dropout, mode, drop_rng);
      x = layer_norm(add(x, ff), param(base + ".norm3.gamma"),
                     param(base + ".norm3.beta"));
    }
    DecoderOutput out;
    out.T = x;
    out.logits = linear(x, param("decoder.out_proj.weight"),
                        param("decoder.out_proj.bias"));
    return out;
  }

  // log-probabilities of the next token after the given prefix (eval mode)
  std::vector<double> next_token_logprobs(const std::vector<int>& prefix,
                                          const EncoderOutput& enc) {
    DecoderOutput out =
        decoder_forward(prefix, enc.E, enc.time_mask, Mode::kEval, nullptr);
    int v = dec_.vocab_size;
    int last = out.logits.dim(0) - 1;
    const double* row = out.logits.data() + static_cast<size_t>(last) * v;
    double m = row[0];
    for (int j = 1; j < v; ++j) m = std::max(m, row[j]);
    double lse = 0.0;
    for (int j = 0; j < v; ++j) lse += std::exp(row[j] - m);
    lse = m + std::log(lse);
    std::vector<double> lp(static_cast<size_t>(v));
    for (int j = 0; j < v; ++j) lp[static_cast<size_t>(j)] = row[j] - lse;
    return lp;
  }

  // -------------------------------------------------------------------------
  // checkpoint interop
  // -------------------------------------------------------------------------
  struct NamedTensorRef {
    std::string name;
    Tensor tensor;
  };

  std::vector<NamedTensorRef> state() {
    std::vector<NamedTensorRef> out;
    for (Parameter& p : params_) out.push_back({p.name, p.tensor});
    for (Parameter& b : buffers_) out.push_back({b.name, b.tensor});
    return out;
  }

  // Overwrite parameters/buffers whose checkpoint name starts with
  // prefix_filter (empty = everything). Shape mismatches on matched names
  // are errors; unmatched model entries stay at their current values.
  template <typename Table>  // iterable of {name, shape, data}
  LoadReport load_pretrained(const Table& table, const std::string& prefix_filter,
                             bool freeze) {
    LoadReport report;
    for (const auto& entry : table) {
      if (entry.name.rfind(prefix_filter, 0) != 0) {
        report.filtered_out.push_back(entry.name);
        continue;
      }
      Tensor* dst = nullptr;
      bool is_param = false;
      if (auto it = param_index_.find(entry.name); it != param_index_.end()) {
        dst = &params_[it->second].tensor;
        is_param = true;
      } else if (auto bit = buffer_index_.find(entry.name);
                 bit != buffer_index_.end()) {
        dst = &buffers_[bit->second].tensor;
      } else {
        report.missing_in_model.push_back(entry.name);
        continue;
      }
      if (dst->shape() != entry.shape)
        throw data_error("checkpoint tensor " + entry.name +
                         " has shape " + shape_str(entry.shape) +
                         ", model expects " + shape_str(dst->shape()));
      std::copy(entry.data.begin(), entry.data.end(), dst->data());
      if (freeze && is_param) params_[param_index_[entry.name]].frozen = true;
      report.loaded.push_back(entry.name);
    }
    return report;
  }

 private:
  static std::shared_ptr<const std::vector<double>> time_mask_nchw(
      int n, int c, int t, int f, const std::vector<int>& valid) {
    auto m = std::make_shared<std::vector<double>>(
        static_cast<size_t>(n) * c * t * f, 0.0);
    for (int i = 0; i < n; ++i) {
      int len = std::min(valid[static_cast<size_t>(i)], t);
      for (int cc = 0; cc < c; ++cc) {
        double* base = m->data() + ((static_cast<size_t>(i) * c + cc) * t) * f;
        std::fill(base, base + static_cast<size_t>(len) * f, 1.0);
      }
    }
    return m;
  }

  Tensor mha(const std::string& base, const Tensor& q_in, const Tensor& kv_in,
             bool causal, const std::vector<uint8_t>* key_mask, int n_heads,
             Mode mode, Rng* drop_rng, double dropout_p) {
    int d = q_in.dim(1);
    int dh = d / n_heads;
    Tensor q = linear(q_in, param(base + ".wq.weight"), param(base + ".wq.bias"));
    Tensor k = linear(kv_in, param(base + ".wk.weight"), param(base + ".wk.bias"));
    Tensor v = linear(kv_in, param(base + ".wv.weight"), param(base + ".wv.bias"));
    double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<Tensor> heads;
    for (int h = 0; h < n_heads; ++h) {
      Tensor qh = slice_cols(q, h * dh, dh);
      Tensor kh = slice_cols(k, h * dh, dh);
      Tensor vh = slice_cols(v, h * dh, dh);
      Tensor scores = scale(matmul(qh, transpose(kh)), inv_sqrt);
      Tensor probs = causal ? causal_softmax(scores)
                    : key_mask ? masked_softmax_rows(scores, *key_mask)
                               : softmax(scores);
      heads.push_back(matmul(probs, vh));
    }
    Tensor ctx = concat_cols(heads);
    Tensor out = linear(ctx, param(base + ".wo.weight"), param(base + ".wo.bias"));
    if (drop_rng) out = dropout(out, dropout_p, *drop_rng, mode == Mode::kTrain);
    return out;
  }

  Tensor ffn_block(const std::string& base, const Tensor& x, double dropout_p,
                   Mode mode, Rng* drop_rng) {
    Tensor h = relu(linear(x, param(base + ".w1.weight"), param(base + ".w1.bias")));
    Tensor out = linear(h, param(base + ".w2.weight"), param(base + ".w2.bias"));
    if (drop_rng) out = dropout(out, dropout_p, *drop_rng, mode == Mode::kTrain);
    return out;
  }

  // ---------------------------------------------------------------------
  // parameter construction; each tensor draws from its own named stream so
  // the initialization of one module never shifts another's
  // ---------------------------------------------------------------------
  void add_param(Rng& root, const std::string& name, Shape shape,
                 double init_std) {
    Rng stream = root.split("param:" + name);
    Tensor t = init_std > 0.0 ? Tensor::randn_trunc(shape, stream, init_std)
                              : Tensor::zeros(shape);
    t.set_requires_grad(true);
    param_index_[name] = params_.size();
    params_.push_back({name, std::move(t), false});
  }

  void add_const_param(const std::string& name, Shape shape, double value) {
    Tensor t = Tensor::full(std::move(shape), value);
    t.set_requires_grad(true);
    param_index_[name] = params_.size();
    params_.push_back({name, std::move(t), false});
  }

  void add_buffer(const std::string& name, Shape shape, double value) {
    buffer_index_[name] = buffers_.size();
    buffers_.push_back({name, Tensor::full(std::move(shape), value), false});
  }

  void add_norm(const std::string& base, int d) {
    add_const_param(base + ".gamma", {d}, 1.0);
    add_const_param(base + ".beta", {d}, 0.0);
  }

  void add_affine(Rng& root, const std::string& base, int in, int out) {
    add_param(root, base + ".weight", {in, out}, 0.02);
    add_param(root, base + ".bias", {out}, 0.0);
  }

  void add_attention(Rng& root, const std::string& base, int d) {
    for (const char* w : {".wq", ".wk", ".wv", ".wo"})
      add_affine(root, base + w, d, d);
  }

  void build_params(Rng& root) {
    int cin = 1;
    for (int b = 1; b <= 4; ++b) {
      int cout = enc_.cnn_channels[static_cast<size_t>(b - 1)];
      std::string base = "encoder.cnn.block" + std::to_string(b);
      add_param(root, base + ".conv1.weight", {cout, cin, 3, 3}, 0.02);
      add_const_param(base + ".bn1.gamma", {cout}, 1.0);
      add_const_param(base + ".bn1.beta", {cout}, 0.0);
      add_buffer(base + ".bn1.running_mean", {cout}, 0.0);
      add_buffer(base + ".bn1.running_var", {cout}, 1.0);
      add_param(root, base + ".conv2.weight", {cout, cout, 3, 3}, 0.02);
      add_const_param(base + ".bn2.gamma", {cout}, 1.0);
      add_const_param(base + ".bn2.beta", {cout}, 0.0);
      add_buffer(base + ".bn2.running_mean", {cout}, 0.0);
      add_buffer(base + ".bn2.running_var", {cout}, 1.0);
      cin = cout;
    }
    add_affine(root, "encoder.proj", d_audio(), enc_.d_model);
    for (int l = 1; l <= enc_.enc_layers; ++l) {
      std::string base = "encoder.transformer.layer" + std::to_string(l);
      add_attention(root, base + ".attn", enc_.d_model);
      add_norm(base + ".norm1", enc_.d_model);
      add_affine(root, base + ".ffn.w1", enc_.d_model, enc_.ffn());
      add_affine(root, base + ".ffn.w2", enc_.ffn(), enc_.d_model);
      add_norm(base + ".norm2", enc_.d_model);
    }
    add_param(root, "decoder.embed.weight", {dec_.vocab_size, dec_.d_model},
              0.02);
    for (int l = 1; l <= dec_.dec_layers; ++l) {
      std::string base = "decoder.layer" + std::to_string(l);
      add_attention(root, base + ".self_attn", dec_.d_model);
      add_norm(base + ".norm1", dec_.d_model);
      add_attention(root, base + ".cross_attn", dec_.d_model);
      add_norm(base + ".norm2", dec_.d_model);
      add_affine(root, base + ".ffn.w1", dec_.d_model, dec_.ffn());
      add_affine(root, base + ".ffn.w2", dec_.ffn(), dec_.d_model);
      add_norm(base + ".norm3", dec_.d_model);
    }
    add_affine(root, "decoder.out_proj", dec_.d_model, dec_.vocab_size);
    if (rlssr_enabled_)
      add_affine(root, "rlssr.ffn", dec_.d_model, d_audio());
  }

  EncoderConfig enc_;
  DecoderConfig dec_;
  RlssrParams rlssr_;
  bool rlssr_enabled_;
  std::vector<Parameter> params_;
  std::vector<Parameter> buffers_;
  std::map<std::string, size_t> param_index_;
  std::map<std::string, size_t> buffer_index_;
};

}  // namespace acap

#endif  // ACAP_MODEL_HPP
