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

#include <filesystem>
#include <fstream>

#include "acap/checkpoint.hpp"
#include "acap/model.hpp"

using namespace acap;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  static fs::path dir = [] {
    fs::path p = fs::temp_directory_path() / "acap_ckpt_tests";
    fs::create_directories(p);
    return p;
  }();
  return dir;
}

std::vector<NamedTensor> sample_table() {
  return {
      {"alpha.weight", {2, 3}, {1.0, -2.5, 3.25, 0.0, 1e-10, -7.5}},
      {"alpha.bias", {3}, {0.5, 0.25, 0.125}},
      {"beta.scalar", {1}, {42.0}},
  };
}

}  // namespace

TEST_CASE("crc64 reference value", "[checkpoint]") {
  const char* s = "123456789";
  REQUIRE(acap::detail::crc64(reinterpret_cast<const unsigned char*>(s), 9) ==
          0x995DC9BBDF1939FAull);
}

TEST_CASE("checkpoint round-trip is byte-identical", "[checkpoint]") {
  auto table = sample_table();
  std::vector<unsigned char> bytes = serialize_checkpoint(table);
  auto parsed = parse_checkpoint(bytes, "mem");
  REQUIRE(parsed.size() == 3);
  REQUIRE(parsed[0].name == "alpha.weight");
  REQUIRE(parsed[0].shape == Shape{2, 3});
  REQUIRE(parsed[0].data == table[0].data);
  std::vector<unsigned char> again = serialize_checkpoint(parsed);
  REQUIRE(again == bytes);

  fs::path p = temp_dir() / "round.acap";
  save_checkpoint(p.string(), table);
  auto loaded = load_checkpoint(p.string());
  REQUIRE(serialize_checkpoint(loaded) == bytes);
}

TEST_CASE("checkpoint size matches the header arithmetic", "[checkpoint]") {
  auto table = sample_table();
  size_t expect = 4 + 4 + 4;  // magic, version, count
  for (const NamedTensor& t : table)
    expect += 2 + t.name.size() + 1 + 1 + 4 * t.shape.size() + 8 * t.data.size();
  expect += 8;  // crc
  REQUIRE(serialize_checkpoint(table).size() == expect);
}

TEST_CASE("corruption and truncation are rejected", "[checkpoint]") {
  std::vector<unsigned char> bytes = serialize_checkpoint(sample_table());

  // flip one payload byte -> CRC error
  std::vector<unsigned char> flipped = bytes;
  flipped[30] ^= 0x40;
  REQUIRE_THROWS_WITH(parse_checkpoint(flipped, "mem"),
                      Catch::Matchers::ContainsSubstring("CRC"));

  std::vector<unsigned char> truncated(bytes.begin(), bytes.end() - 25);
  REQUIRE_THROWS_AS(parse_checkpoint(truncated, "mem"), data_error);

  std::vector<unsigned char> not_acap = bytes;
  not_acap[0] = 'X';
  REQUIRE_THROWS_AS(parse_checkpoint(not_acap, "mem"), data_error);

  std::vector<NamedTensor> dup = {{"w", {1}, {1.0}}, {"w", {1}, {2.0}}};
  REQUIRE_THROWS_WITH(serialize_checkpoint(dup),
                      Catch::Matchers::ContainsSubstring("duplicate"));
}

TEST_CASE("model state save/load round-trips through a file", "[checkpoint]") {
  EncoderConfig enc;
  enc.cnn_channels = {2, 3, 4, 5};
  enc.d_model = 8;
  enc.n_heads = 2;
  DecoderConfig dec;
  dec.d_model = 8;
  dec.n_heads = 2;
  dec.vocab_size = 11;
  Model a(enc, dec, true, RlssrParams{}, 5);

  std::vector<NamedTensor> table;
  for (auto& ref : a.state())
    table.push_back({ref.name, ref.tensor.shape(),
                     std::vector<double>(ref.tensor.values())});
  fs::path p = temp_dir() / "model.acap";
  save_checkpoint(p.string(), table);

  Model b(enc, dec, true, RlssrParams{}, 999);
  b.load_pretrained(load_checkpoint(p.string()), "", false);
  for (size_t i = 0; i < a.params().size(); ++i)
    REQUIRE(a.params()[i].tensor.values() == b.params()[i].tensor.values());
  for (size_t i = 0; i < a.buffers().size(); ++i)
    REQUIRE(a.buffers()[i].tensor.values() == b.buffers()[i].tensor.values());
}

TEST_CASE("golden checkpoint stays loadable across builds", "[checkpoint]") {
  fs::path golden = fs::path(ACAP_TEST_DATA_DIR) / "golden.acap";
  auto table = load_checkpoint(golden.string());
  REQUIRE(table.size() == 3);
  REQUIRE(table[0].name == "alpha.weight");
  REQUIRE(table[0].shape == Shape{2, 3});
  REQUIRE(table[0].data ==
          std::vector<double>{1.0, -2.5, 3.25, 0.0, 1e-10, -7.5});
  REQUIRE(table[1].name == "alpha.bias");
  REQUIRE(table[1].data == std::vector<double>{0.5, 0.25, 0.125});
  REQUIRE(table[2].name == "beta.scalar");
  REQUIRE(table[2].data == std::vector<double>{42.0});
}
