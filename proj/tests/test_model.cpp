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

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "acap/model.hpp"
#include "acap/train.hpp"
#include "gradcheck.hpp"

using namespace acap;

namespace {

// Shape-arithmetic oracle for the trainable parameter count, written from
// the layer inventory alone.
size_t expected_param_count(const std::vector<int>& channels, int d, int heads,
                            int ffn, int vocab, int enc_layers, int dec_layers,
                            bool rlssr_on) {
  (void)heads;
  size_t n = 0;
  int cin = 1;
  for (int c : channels) {
    n += 9ull * cin * c + 2ull * c;  // conv1 + bn1
    n += 9ull * c * c + 2ull * c;    // conv2 + bn2
    cin = c;
  }
  int d_a = channels.back();
  n += static_cast<size_t>(d_a) * d + d;  // projection
  size_t attn = 4ull * (static_cast<size_t>(d) * d + d);
  size_t ffn_params = static_cast<size_t>(d) * ffn + ffn +
                      static_cast<size_t>(ffn) * d + d;
  size_t norm = 2ull * d;
  n += static_cast<size_t>(enc_layers) * (attn + norm + ffn_params + norm);
  n += static_cast<size_t>(vocab) * d;  // embedding
  n += static_cast<size_t>(dec_layers) * (2 * attn + 3 * norm + ffn_params);
  n += static_cast<size_t>(d) * vocab + vocab;  // output projection
  if (rlssr_on) n += static_cast<size_t>(d) * d_a + d_a;
  return n;
}

Model tiny_model(bool rlssr_on = true, uint64_t seed = 7,
                 bool use_enc = true) {
  EncoderConfig enc;
  enc.cnn_channels = {2, 3, 4, 5};
  enc.d_model = 8;
  enc.n_heads = 2;
  enc.ffn_dim = 16;
  enc.dropout = 0.0;
  enc.use_transformer_encoder = use_enc;
  DecoderConfig dec;
  dec.d_model = 8;
  dec.n_heads = 2;
  dec.ffn_dim = 16;
  dec.vocab_size = 11;
  dec.dropout = 0.0;
  return Model(enc, dec, rlssr_on, RlssrParams{}, seed);
}

Batch tiny_batch(Rng& rng) {
  std::vector<Spectrogram> specs(2);
  specs[0].n_frames = 32;
  specs[0].n_mels = 64;
  specs[0].frames.resize(32 * 64);
  specs[1].n_frames = 20;
  specs[1].n_mels = 64;
  specs[1].frames.resize(20 * 64);
  for (auto& s : specs)
    for (double& v : s.frames) v = 2.0 * rng.uniform() - 1.0;
  std::vector<const Spectrogram*> ptrs = {&specs[0], &specs[1]};
  std::vector<TokenSequence> seqs = {{{1, 5, 7, 9, 2}}, {{1, 4, 4, 2}}};
  return make_batch(ptrs, seqs);
}

}  // namespace

TEST_CASE("parameter count matches the shape oracle", "[model]") {
  {
    EncoderConfig enc;
    enc.cnn_channels = {64, 128, 256, 512};
    DecoderConfig dec;
    dec.vocab_size = 1000;
    Model full(enc, dec, /*rlssr=*/true, RlssrParams{}, 1);
    REQUIRE(full.parameter_count() ==
            expected_param_count({64, 128, 256, 512}, 192, 4, 768, 1000, 2, 2,
                                 true));
  }
  {
    Model tiny = tiny_model(false);
    REQUIRE(tiny.parameter_count() ==
            expected_param_count({2, 3, 4, 5}, 8, 2, 16, 11, 2, 2, false));
  }
}

TEST_CASE("cnn10 output shape follows the pooling arithmetic", "[model]") {
  EncoderConfig enc;  // channels 8,16,32,64
  enc.d_model = 16;
  enc.n_heads = 2;
  DecoderConfig dec;
  dec.d_model = 16;
  dec.n_heads = 2;
  dec.vocab_size = 11;
  Model m(enc, dec, false, RlssrParams{}, 3);

  Spectrogram s;
  s.n_frames = 64;
  s.n_mels = 64;
  s.frames.assign(64 * 64, 0.25);
  std::vector<const Spectrogram*> ptrs = {&s};
  std::vector<TokenSequence> seqs = {{{1, 2}}};
  Batch b = make_batch(ptrs, seqs);
  Model::CnnOut out = m.cnn10_forward(b, Mode::kEval);
  REQUIRE(out.seq.shape() == Shape{1, 4, 64});  // 64 frames / 2^4, d_a = 64
  REQUIRE(out.valid_t == std::vector<int>{4});

  // fewer than 16 frames pools away entirely
  Spectrogram tiny;
  tiny.n_frames = 12;
  tiny.n_mels = 64;
  tiny.frames.assign(12 * 64, 0.0);
  std::vector<const Spectrogram*> tp = {&tiny};
  Batch tb = make_batch(tp, seqs);
  REQUIRE_THROWS_AS(m.cnn10_forward(tb, Mode::kEval), shape_error);
}

TEST_CASE("cnn10 on all-zero input with eval batchnorm is all-zero", "[model]") {
  Model m = tiny_model(false);
  Spectrogram s;
  s.n_frames = 32;
  s.n_mels = 64;
  s.frames.assign(32 * 64, 0.0);
  std::vector<const Spectrogram*> ptrs = {&s};
  std::vector<TokenSequence> seqs = {{{1, 2}}};
  Batch b = make_batch(ptrs, seqs);
  Model::CnnOut out = m.cnn10_forward(b, Mode::kEval);
  for (size_t i = 0; i < out.seq.numel(); ++i) REQUIRE(out.seq.data()[i] == 0.0);
}

TEST_CASE("encoder masking: padded positions cannot reach valid ones", "[model]") {
  Model m = tiny_model(false);
  Rng rng(11);
  Tensor A = Tensor::zeros({6, 5});
  for (size_t i = 0; i < A.numel(); ++i) A.data()[i] = rng.uniform() - 0.5;
  std::vector<uint8_t> mask = {1, 1, 1, 1, 0, 0};
  Tensor E1 = m.transformer_encode(A, mask, Mode::kEval, nullptr);

  Tensor A2 = Tensor::from_data(A.shape(), std::vector<double>(A.values()));
  for (int j = 0; j < 5; ++j) {
    A2.data()[4 * 5 + j] += 3.0;
    A2.data()[5 * 5 + j] -= 7.0;
  }
  Tensor E2 = m.transformer_encode(A2, mask, Mode::kEval, nullptr);
  for (int t = 0; t < 4; ++t)
    for (int j = 0; j < 8; ++j)
      REQUIRE(E1.data()[t * 8 + j] == E2.data()[t * 8 + j]);

  // and through the decoder's cross-attention
  std::vector<int> ids = {1, 5, 6, 2};
  Tensor L1 = m.decoder_forward(ids, E1, mask, Mode::kEval, nullptr).logits;
  Tensor L2 = m.decoder_forward(ids, E2, mask, Mode::kEval, nullptr).logits;
  for (size_t i = 0; i < L1.numel(); ++i) REQUIRE(L1.data()[i] == L2.data()[i]);
}

TEST_CASE("full pipeline masking: batch padding is inert", "[model]") {
  // same clip alone vs padded next to a longer clip: its A/E must match
  Model m = tiny_model(false);
  Rng rng(13);
  std::vector<Spectrogram> specs(2);
  specs[0].n_frames = 20;
  specs[0].n_mels = 64;
  specs[0].frames.resize(20 * 64);
  specs[1].n_frames = 48;
  specs[1].n_mels = 64;
  specs[1].frames.resize(48 * 64);
  for (auto& s : specs)
    for (double& v : s.frames) v = rng.uniform() - 0.5;
  std::vector<TokenSequence> seqs2 = {{{1, 4, 2}}, {{1, 5, 2}}};
  std::vector<const Spectrogram*> both = {&specs[0], &specs[1]};
  Batch b2 = make_batch(both, seqs2);
  auto enc2 = m.encode_batch(b2, Mode::kEval, nullptr);

  // perturb the padded tail of clip 0's spectrogram rows; outputs at valid
  // positions must be bit-identical because the mask zeroes them first
  Batch b3 = b2;
  for (int t = 20; t < 48; ++t)
    for (int mel = 0; mel < 64; ++mel)
      b3.mel[(static_cast<size_t>(0) * 48 + t) * 64 + mel] = 123.0;
  auto enc3 = m.encode_batch(b3, Mode::kEval, nullptr);
  int valid = enc2[0].valid_len;
  REQUIRE(valid == 1);  // 20 / 16
  for (int t = 0; t < valid; ++t)
    for (int j = 0; j < 8; ++j)
      REQUIRE(enc2[0].E.data()[t * 8 + j] == enc3[0].E.data()[t * 8 + j]);
}

TEST_CASE("decoder causality is exact", "[model]") {
  Model m = tiny_model(false);
  Rng rng(17);
  Tensor E = Tensor::zeros({3, 8});
  for (size_t i = 0; i < E.numel(); ++i) E.data()[i] = rng.uniform() - 0.5;
  std::vector<uint8_t> mask = {1, 1, 1};
  std::vector<int> ids = {1, 5, 6, 7, 8};
  Tensor base = m.decoder_forward(ids, E, mask, Mode::kEval, nullptr).logits;
  for (size_t j = 1; j < ids.size(); ++j) {
    std::vector<int> mutated = ids;
    mutated[j] = (ids[j] == 9) ? 10 : 9;
    Tensor out = m.decoder_forward(mutated, E, mask, Mode::kEval, nullptr).logits;
    for (size_t t = 0; t < j; ++t)
      for (int v = 0; v < 11; ++v)
        REQUIRE(out.data()[t * 11 + v] == base.data()[t * 11 + v]);
  }
}

TEST_CASE("decoder depends on the encoder output", "[model]") {
  Model m = tiny_model(false);
  Rng rng(19);
  Tensor E = Tensor::zeros({3, 8});
  for (size_t i = 0; i < E.numel(); ++i) E.data()[i] = rng.uniform() - 0.5;
  std::vector<uint8_t> mask = {1, 1, 1};
  std::vector<int> ids = {1, 5, 6, 2};
  Tensor a = m.decoder_forward(ids, E, mask, Mode::kEval, nullptr).logits;
  Tensor b = m.decoder_forward(ids, Tensor::zeros({3, 8}), mask, Mode::kEval,
                               nullptr).logits;
  bool any_diff = false;
  for (size_t i = 0; i < a.numel(); ++i)
    if (a.data()[i] != b.data()[i]) any_diff = true;
  REQUIRE(any_diff);

  REQUIRE_THROWS_AS(
      m.decoder_forward({1, 11}, E, mask, Mode::kEval, nullptr), shape_error);
  REQUIRE_THROWS_AS(
      m.decoder_forward({5, 6}, E, mask, Mode::kEval, nullptr), shape_error);
}

TEST_CASE("single-position encoder equals the composed sublayer oracle", "[model]") {
  Model m = tiny_model(false);
  Rng rng(23);
  Tensor A = Tensor::zeros({1, 5});
  for (size_t i = 0; i < A.numel(); ++i) A.data()[i] = rng.uniform();
  std::vector<uint8_t> mask = {1};
  Tensor E = m.transformer_encode(A, mask, Mode::kEval, nullptr);

  // with one position, every attention weight is 1: the context vector is
  // just Wo(Wv(x)) + bias chain
  Tensor x = linear(A, m.param("encoder.proj.weight"), m.param("encoder.proj.bias"));
  x = add_const(x, acap::detail::sinusoidal_pe(1, 8));
  for (int l = 1; l <= 2; ++l) {
    std::string base = "encoder.transformer.layer" + std::to_string(l);
    Tensor v = linear(x, m.param(base + ".attn.wv.weight"),
                      m.param(base + ".attn.wv.bias"));
    Tensor attn = linear(v, m.param(base + ".attn.wo.weight"),
                         m.param(base + ".attn.wo.bias"));
    x = layer_norm(add(x, attn), m.param(base + ".norm1.gamma"),
                   m.param(base + ".norm1.beta"));
    Tensor h = relu(linear(x, m.param(base + ".ffn.w1.weight"),
                           m.param(base + ".ffn.w1.bias")));
    Tensor ff = linear(h, m.param(base + ".ffn.w2.weight"),
                       m.param(base + ".ffn.w2.bias"));
    x = layer_norm(add(x, ff), m.param(base + ".norm2.gamma"),
                   m.param(base + ".norm2.beta"));
  }
  for (size_t i = 0; i < E.numel(); ++i)
    REQUIRE(E.data()[i] == Catch::Approx(x.data()[i]).margin(1e-12));
}

TEST_CASE("encoder bypass feeds projected A to cross-attention", "[model]") {
  Model m = tiny_model(false, 7, /*use_enc=*/false);
  Rng rng(29);
  Tensor A = Tensor::zeros({4, 5});
  for (size_t i = 0; i < A.numel(); ++i) A.data()[i] = rng.uniform();
  std::vector<uint8_t> mask = {1, 1, 1, 1};
  Tensor E = m.transformer_encode(A, mask, Mode::kEval, nullptr);
  Tensor proj = linear(A, m.param("encoder.proj.weight"),
                       m.param("encoder.proj.bias"));
  REQUIRE(E.numel() == proj.numel());
  for (size_t i = 0; i < E.numel(); ++i) REQUIRE(E.data()[i] == proj.data()[i]);
}

TEST_CASE("end-to-end tiny model gradcheck", "[model][slow]") {
  Model m = tiny_model(true);
  Rng rng(31);
  Batch b = tiny_batch(rng);

  auto make_loss = [&] {
    LossBundle loss = batch_loss(m, b, Mode::kTrain, nullptr,
                                 TrainConfig::Rlssr::kL2, 1.0, 1.0);
    return loss.l_total;
  };

  // ten probes spread across every module
  std::vector<std::pair<std::string, size_t>> probe_names = {
      {"encoder.cnn.block1.conv1.weight", 3},
      {"encoder.cnn.block3.conv2.weight", 17},
      {"encoder.cnn.block2.bn2.gamma", 1},
      {"encoder.proj.weight", 9},
      {"encoder.transformer.layer1.attn.wq.weight", 5},
      {"encoder.transformer.layer2.norm2.gamma", 3},
      {"decoder.embed.weight", 5 * 8 + 2},
      {"decoder.layer2.cross_attn.wv.weight", 11},
      {"decoder.out_proj.bias", 6},
      {"rlssr.ffn.weight", 13},
  };
  std::vector<Tensor> leaves;
  std::vector<std::pair<size_t, size_t>> probes;
  for (auto& [name, coord] : probe_names) {
    leaves.push_back(m.param(name));
    probes.emplace_back(leaves.size() - 1, coord);
  }
  // eps 1e-6: early-layer weights reach thousands of relu/max-pool kinks, and
  // a 1e-5 step can push activations across one, which breaks the central
  // difference without indicating a wrong gradient
  double err = acap_test::gradcheck_probes(make_loss, leaves, probes, 1e-6);
  REQUIRE(err < 1e-4);
}

TEST_CASE("load_pretrained filters, round-trips, freezes", "[model]") {
  Model a = tiny_model(false, 111);
  Model b = tiny_model(false, 222);

  // snapshot b's decoder before loading
  std::vector<double> b_dec(b.param("decoder.embed.weight").values());

  std::vector<NamedTensor> table;
  for (auto& ref : a.state())
    table.push_back({ref.name, ref.tensor.shape(),
                     std::vector<double>(ref.tensor.values())});

  LoadReport rep = b.load_pretrained(table, "encoder.cnn.", /*freeze=*/true);
  REQUIRE(rep.loaded.size() > 0);
  REQUIRE(rep.missing_in_model.empty());
  REQUIRE(rep.filtered_out.size() > 0);

  // CNN params equal to a's, decoder untouched
  REQUIRE(b.param("encoder.cnn.block1.conv1.weight").values() ==
          a.param("encoder.cnn.block1.conv1.weight").values());
  REQUIRE(b.buffer("encoder.cnn.block4.bn2.running_var").values() ==
          a.buffer("encoder.cnn.block4.bn2.running_var").values());
  REQUIRE(b.param("decoder.embed.weight").values() == b_dec);
  REQUIRE(b.param("encoder.proj.weight").values() !=
          a.param("encoder.proj.weight").values());

  // loaded parameters are frozen, others are not
  for (const Parameter& p : b.params()) {
    if (p.name.rfind("encoder.cnn.", 0) == 0)
      REQUIRE(p.frozen);
    else
      REQUIRE(!p.frozen);
  }

  // shape mismatch on a matched name names the tensor
  Model c = tiny_model(false, 333);
  std::vector<NamedTensor> bad = {
      {"encoder.cnn.block1.conv1.weight", {9, 9}, std::vector<double>(81, 0.0)}};
  REQUIRE_THROWS_WITH(c.load_pretrained(bad, "encoder.cnn.", false),
                      Catch::Matchers::ContainsSubstring(
                          "encoder.cnn.block1.conv1.weight"));
}

TEST_CASE("causal softmax gradcheck", "[model]") {
  Rng rng(37);
  Tensor x = Tensor::zeros({5, 5});
  for (size_t i = 0; i < x.numel(); ++i) x.data()[i] = rng.uniform() - 0.5;
  double err = acap_test::gradcheck(
      [&] { return acap_test::weighted_sum(causal_softmax(x)); }, {x});
  REQUIRE(err < 1e-4);
}
