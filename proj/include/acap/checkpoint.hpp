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
// Named-tensor checkpoint file, bit-exact layout:
//   magic "ACAP" | u32 version=1 | u32 tensor_count
//   per tensor: u16 name_len | name bytes | u8 dtype (0 = f64) | u8 rank |
//               u32 dims[rank] | row-major little-endian f64 payload
//   trailing u64 CRC-64/XZ of every preceding byte
// All integers little-endian.

#ifndef ACAP_CHECKPOINT_HPP
#define ACAP_CHECKPOINT_HPP

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "acap/error.hpp"
#include "acap/tensor.hpp"

namespace acap {

struct NamedTensor {
  std::string name;
  Shape shape;
  std::vector<double> data;
};

namespace detail {

inline const std::array<uint64_t, 256>& crc64_table() {
  static const std::array<uint64_t, 256> table = [] {
    std::array<uint64_t, 256> t{};
    const uint64_t poly = 0xC96C5795D7870F42ull;  // reflected ECMA-182
    for (uint32_t i = 0; i < 256; ++i) {
      uint64_t crc = i;
      for (int b = 0; b < 8; ++b)
        crc = (crc & 1) ? (crc >> 1) ^ poly : crc >> 1;
      t[i] = crc;
    }
    return t;
  }();
  return table;
}

inline uint64_t crc64(const unsigned char* data, size_t len) {
  const auto& table = crc64_table();
  uint64_t crc = ~0ull;
  for (size_t i = 0; i < len; ++i)
    crc = table[(crc ^ data[i]) & 0xff] ^ (crc >> 8);
  return ~crc;
}

inline void append_u16(std::vector<unsigned char>& buf, uint16_t v) {
  buf.push_back(static_cast<unsigned char>(v));
  buf.push_back(static_cast<unsigned char>(v >> 8));
}

inline void append_u32(std::vector<unsigned char>& buf, uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

inline void append_u64(std::vector<unsigned char>& buf, uint64_t v) {
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

inline void append_f64(std::vector<unsigned char>& buf, double v) {
  uint64_t bits;
  std::memcpy(&bits, &v, 8);
  append_u64(buf, bits);
}

}  // namespace detail

inline std::vector<unsigned char> serialize_checkpoint(
    const std::vector<NamedTensor>& tensors) {
  std::set<std::string> names;
  std::vector<unsigned char> buf;
  buf.insert(buf.end(), {'A', 'C', 'A', 'P'});
  detail::append_u32(buf, 1);
  detail::append_u32(buf, static_cast<uint32_t>(tensors.size()));
  for (const NamedTensor& t : tensors) {
    if (!names.insert(t.name).second)
      throw data_error("duplicate tensor name in checkpoint: " + t.name);
    if (t.name.size() > 0xffff)
      throw data_error("tensor name too long: " + t.name);
    if (t.data.size() != shape_numel(t.shape))
      throw data_error("tensor " + t.name + " payload does not match dims");
    detail::append_u16(buf, static_cast<uint16_t>(t.name.size()));
    buf.insert(buf.end(), t.name.begin(), t.name.end());
    buf.push_back(0);  // dtype f64
    buf.push_back(static_cast<unsigned char>(t.shape.size()));
    for (int d : t.shape) detail::append_u32(buf, static_cast<uint32_t>(d));
    for (double v : t.data) detail::append_f64(buf, v);
  }
  detail::append_u64(buf, detail::crc64(buf.data(), buf.size()));
  return buf;
}

inline void save_checkpoint(const std::string& path,
                            const std::vector<NamedTensor>& tensors) {
  std::vector<unsigned char> buf = serialize_checkpoint(tensors);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw data_error("cannot write checkpoint: " + path);
  out.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size()));
  if (!out) throw data_error("short write of checkpoint: " + path);
}

inline std::vector<NamedTensor> parse_checkpoint(
    const std::vector<unsigned char>& buf, const std::string& origin) {
  if (buf.size() < 20) throw data_error("checkpoint truncated: " + origin);
  if (std::memcmp(buf.data(), "ACAP", 4) != 0)
    throw data_error("bad checkpoint magic: " + origin);
  uint64_t stored = 0;
  for (int i = 0; i < 8; ++i)
    stored |= static_cast<uint64_t>(buf[buf.size() - 8 + static_cast<size_t>(i)])
              << (8 * i);
  if (detail::crc64(buf.data(), buf.size() - 8) != stored)
    throw data_error("checkpoint CRC mismatch: " + origin);

  size_t pos = 4;
  auto need = [&](size_t n) {
    if (pos + n > buf.size() - 8)
      throw data_error("checkpoint truncated: " + origin);
  };
  auto read_u16 = [&] {
    need(2);
    uint16_t v = static_cast<uint16_t>(buf[pos] | (buf[pos + 1] << 8));
    pos += 2;
    return v;
  };
  auto read_u32 = [&] {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(buf[pos + static_cast<size_t>(i)]) << (8 * i);
    pos += 4;
    return v;
  };

  uint32_t version = read_u32();
  if (version != 1)
    throw data_error("unsupported checkpoint version " +
                     std::to_string(version) + ": " + origin);
  uint32_t count = read_u32();
  std::vector<NamedTensor> tensors;
  std::set<std::string> names;
  for (uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    uint16_t name_len = read_u16();
    need(name_len);
    t.name.assign(reinterpret_cast<const char*>(buf.data() + pos), name_len);
    pos += name_len;
    if (!names.insert(t.name).second)
      throw data_error("duplicate tensor name " + t.name + ": " + origin);
    need(2);
    unsigned char dtype = buf[pos++];
    unsigned char rank = buf[pos++];
    if (dtype != 0)
      throw data_error("unsupported dtype for " + t.name + ": " + origin);
    for (int r = 0; r < rank; ++r)
      t.shape.push_back(static_cast<int>(read_u32()));
    size_t numel = rank == 0 ? 1 : shape_numel(t.shape);
    if (rank == 0) t.shape = {1};
    need(numel * 8);
    t.data.resize(numel);
    for (size_t j = 0; j < numel; ++j) {
      uint64_t bits = 0;
      for (int b = 0; b < 8; ++b)
        bits |= static_cast<uint64_t>(buf[pos + static_cast<size_t>(b)]) << (8 * b);
      pos += 8;
      double v;
      std::memcpy(&v, &bits, 8);
      t.data[j] = v;
    }
    tensors.push_back(std::move(t));
  }
  if (pos != buf.size() - 8)
    throw data_error("checkpoint has trailing bytes: " + origin);
  return tensors;
}

inline std::vector<NamedTensor> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw data_error("cannot open checkpoint: " + path);
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)),
                                 std::istreambuf_iterator<char>());
  return parse_checkpoint(buf, path);
}

}  // namespace acap

#endif  // ACAP_CHECKPOINT_HPP
