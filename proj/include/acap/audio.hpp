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
// WAV ingestion and the log-mel frontend: Hann STFT with reflect center
// padding, power spectrum, triangular HTK-scale mel filterbank (no area
// normalization), natural log with a fixed floor. Plus SpecAugment-style
// time/frequency masking for training.

#ifndef ACAP_AUDIO_HPP
#define ACAP_AUDIO_HPP

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "acap/error.hpp"
#include "acap/rng.hpp"

namespace acap {

struct MelConfig {
  int sample_rate = 44100;
  int n_fft = 1024;
  int hop = 512;
  int n_mels = 64;
  bool center_pad = true;
  double log_floor = 1e-10;

  void validate() const {
    if (sample_rate <= 0) throw config_error("mel: sample_rate must be > 0");
    if (n_mels < 1) throw config_error("mel: n_mels must be >= 1");
    if (hop <= 0 || n_fft <= 0 || hop > n_fft)
      throw config_error("mel: need 0 < hop <= n_fft");
    if (n_fft & (n_fft - 1))
      throw config_error("mel: n_fft must be a power of two");
  }
};

struct Spectrogram {
  std::vector<double> frames;  // row-major [n_frames, n_mels], natural log
  int n_frames = 0;
  int n_mels = 0;
  double source_duration_s = 0.0;

  double& at(int t, int m) { return frames[static_cast<size_t>(t) * n_mels + m]; }
  double at(int t, int m) const {
    return frames[static_cast<size_t>(t) * n_mels + m];
  }
};

struct SpecAugmentConfig {
  int n_time_masks = 2;
  int max_time_width_frames = 64;
  int n_freq_masks = 2;
  int max_freq_width_bins = 8;
  double fill_value = 0.0;
};

struct Waveform {
  std::vector<double> samples;  // mono, [-1, 1]
  int sample_rate = 0;
  double duration_s() const {
    return sample_rate > 0 ? static_cast<double>(samples.size()) / sample_rate
                           : 0.0;
  }
};

// ---------------------------------------------------------------------------
// WAV read/write
// ---------------------------------------------------------------------------

namespace detail {

inline uint32_t read_u32le(const unsigned char* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
         (static_cast<uint32_t>(p[2]) << 16) |
         (static_cast<uint32_t>(p[3]) << 24);
}

inline uint16_t read_u16le(const unsigned char* p) {
  return static_cast<uint16_t>(p[0] | (p[1] << 8));
}

}  // namespace detail

// PCM 16/32-bit int or 32-bit float RIFF/WAVE, multi-channel averaged to
// mono. expected_rate > 0 rejects mismatched files (no resampling here).
inline Waveform load_wav(const std::string& path, int expected_rate = 0) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw data_error("cannot open wav file: " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    throw data_error("not a RIFF/WAVE file: " + path);

  uint16_t format = 0, channels = 0, bits = 0;
  uint32_t rate = 0;
  const unsigned char* data = nullptr;
  size_t data_len = 0;
  size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    uint32_t chunk_len = detail::read_u32le(bytes.data() + pos + 4);
    const unsigned char* body = bytes.data() + pos + 8;
    if (pos + 8 + chunk_len > bytes.size())
      throw data_error("truncated wav chunk in " + path);
    if (std::memcmp(bytes.data() + pos, "fmt ", 4) == 0) {
      if (chunk_len < 16) throw data_error("malformed fmt chunk in " + path);
      format = detail::read_u16le(body);
      channels = detail::read_u16le(body + 2);
      rate = detail::read_u32le(body + 4);
      bits = detail::read_u16le(body + 14);
    } else if (std::memcmp(bytes.data() + pos, "data", 4) == 0) {
      data = body;
      data_len = chunk_len;
    }
    pos += 8 + chunk_len + (chunk_len & 1);  // chunks are word-aligned
  }
  if (!data || channels == 0) throw data_error("wav missing fmt/data: " + path);
  if (expected_rate > 0 && static_cast<int>(rate) != expected_rate)
    throw data_error("resample unsupported: " + path + " has sample rate " +
                     std::to_string(rate) + ", expected " +
                     std::to_string(expected_rate));

  size_t bytes_per_sample;
  if (format == 1 && bits == 16)
    bytes_per_sample = 2;
  else if (format == 1 && bits == 32)
    bytes_per_sample = 4;
  else if (format == 3 && bits == 32)
    bytes_per_sample = 4;
  else
    throw data_error("unsupported wav encoding (format " +
                     std::to_string(format) + ", " + std::to_string(bits) +
                     " bits) in " + path);

  size_t frame_bytes = bytes_per_sample * channels;
  size_t n = data_len / frame_bytes;
  Waveform wav;
  wav.sample_rate = static_cast<int>(rate);
  wav.samples.resize(n);
  for (size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (uint16_t c = 0; c < channels; ++c) {
      const unsigned char* p = data + i * frame_bytes + c * bytes_per_sample;
      if (format == 1 && bits == 16) {
        int16_t v;
        std::memcpy(&v, p, 2);
        acc += static_cast<double>(v) / 32768.0;
      } else if (format == 1 && bits == 32) {
        int32_t v;
        std::memcpy(&v, p, 4);
        acc += static_cast<double>(v) / 2147483648.0;
      } else {
        float v;
        std::memcpy(&v, p, 4);
        acc += static_cast<double>(v);
      }
    }
    wav.samples[i] = acc / channels;
  }
  return wav;
}

// 16-bit PCM mono writer (toy corpus and fixtures).
inline void save_wav_pcm16(const std::string& path,
                           const std::vector<double>& samples,
                           int sample_rate) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw data_error("cannot write wav file: " + path);
  auto put_u32 = [&](uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v),
                          static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<char*>(b), 4);
  };
  auto put_u16 = [&](uint16_t v) {
    unsigned char b[2] = {static_cast<unsigned char>(v),
                          static_cast<unsigned char>(v >> 8)};
    out.write(reinterpret_cast<char*>(b), 2);
  };
  uint32_t data_len = static_cast<uint32_t>(samples.size() * 2);
  out.write("RIFF", 4);
  put_u32(36 + data_len);
  out.write("WAVE", 4);
  out.write("fmt ", 4);
  put_u32(16);
  put_u16(1);  // PCM
  put_u16(1);  // mono
  put_u32(static_cast<uint32_t>(sample_rate));
  put_u32(static_cast<uint32_t>(sample_rate) * 2);
  put_u16(2);
  put_u16(16);
  out.write("data", 4);
  put_u32(data_len);
  for (double s : samples) {
    double c = std::clamp(s, -1.0, 1.0);
    int16_t v = static_cast<int16_t>(std::lrint(c * 32767.0));
    unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff)};
    out.write(reinterpret_cast<char*>(b), 2);
  }
  if (!out) throw data_error("short write: " + path);
}

// ---------------------------------------------------------------------------
// FFT + mel filterbank
// ---------------------------------------------------------------------------

namespace detail {

// in-place iterative radix-2 Cooley-Tukey; n must be a power of two
inline void fft_radix2(std::vector<std::complex<double>>& a) {
  size_t n = a.size();
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (size_t len = 2; len <= n; len <<= 1) {
    double ang = -2.0 * M_PI / static_cast<double>(len);
    std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (size_t j = 0; j < len / 2; ++j) {
        std::complex<double> u = a[i + j];
        std::complex<double> v = a[i + j + len / 2] * w;
        a[i + j] = u + v;
        a[i + j + len / 2] = u - v;
        w *= wl;
      }
    }
  }
}

// reflect index into [0, n) without repeating the edge sample
inline size_t reflect_index(long long i, long long n) {
  if (n == 1) return 0;
  long long period = 2 * (n - 1);
  long long m = i % period;
  if (m < 0) m += period;
  if (m >= n) m = period - m;
  return static_cast<size_t>(m);
}

}  // namespace detail

inline double hz_to_mel(double hz) {
  return 2595.0 * std::log10(1.0 + hz / 700.0);
}

inline double mel_to_hz(double mel) {
  return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0);
}

// Triangular filters, linear in Hz between mel-equally-spaced edge
// frequencies covering 0..sample_rate/2. Returned row-major
// [n_mels, n_fft/2 + 1]; also reports each filter's center frequency.
inline std::vector<double> mel_filterbank(const MelConfig& cfg,
                                          std::vector<double>* centers_hz = nullptr) {
  int n_bins = cfg.n_fft / 2 + 1;
  double mel_max = hz_to_mel(cfg.sample_rate / 2.0);
  std::vector<double> edges(static_cast<size_t>(cfg.n_mels) + 2);
  for (int i = 0; i < cfg.n_mels + 2; ++i)
    edges[static_cast<size_t>(i)] =
        mel_to_hz(mel_max * static_cast<double>(i) / (cfg.n_mels + 1));
  if (centers_hz) {
    centers_hz->assign(edges.begin() + 1, edges.end() - 1);
  }
  std::vector<double> fb(static_cast<size_t>(cfg.n_mels) * n_bins, 0.0);
  for (int m = 0; m < cfg.n_mels; ++m) {
    double lo = edges[static_cast<size_t>(m)];
    double c = edges[static_cast<size_t>(m) + 1];
    double hi = edges[static_cast<size_t>(m) + 2];
    for (int k = 0; k < n_bins; ++k) {
      double f = static_cast<double>(k) * cfg.sample_rate / cfg.n_fft;
      double w = 0.0;
      if (f > lo && f < hi)
        w = (f <= c) ? (f - lo) / (c - lo) : (hi - f) / (hi - c);
      fb[static_cast<size_t>(m) * n_bins + k] = w;
    }
  }
  return fb;
}

inline Spectrogram logmel(const Waveform& wav, const MelConfig& cfg) {
  cfg.validate();
  if (wav.sample_rate != cfg.sample_rate)
    throw data_error("resample unsupported: waveform rate " +
                     std::to_string(wav.sample_rate) + " != config rate " +
                     std::to_string(cfg.sample_rate));
  long long n = static_cast<long long>(wav.samples.size());
  if (n == 0) throw data_error("logmel: empty waveform");
  if (n < cfg.hop) throw data_error("logmel: waveform shorter than one hop");

  int n_frames;
  long long first_center;
  if (cfg.center_pad) {
    n_frames = 1 + static_cast<int>(n / cfg.hop);
    first_center = 0;
  } else {
    if (n < cfg.n_fft) throw data_error("logmel: waveform shorter than n_fft");
    n_frames = 1 + static_cast<int>((n - cfg.n_fft) / cfg.hop);
    first_center = cfg.n_fft / 2;
  }

  std::vector<double> window(static_cast<size_t>(cfg.n_fft));
  for (int i = 0; i < cfg.n_fft; ++i)
    window[static_cast<size_t>(i)] =
        0.5 - 0.5 * std::cos(2.0 * M_PI * i / cfg.n_fft);

  int n_bins = cfg.n_fft / 2 + 1;
  std::vector<double> fb = mel_filterbank(cfg);

  Spectrogram spec;
  spec.n_frames = n_frames;
  spec.n_mels = cfg.n_mels;
  spec.source_duration_s = wav.duration_s();
  spec.frames.assign(static_cast<size_t>(n_frames) * cfg.n_mels, 0.0);

  std::vector<std::complex<double>> buf(static_cast<size_t>(cfg.n_fft));
  std::vector<double> power(static_cast<size_t>(n_bins));
  for (int t = 0; t < n_frames; ++t) {
    long long center = first_center + static_cast<long long>(t) * cfg.hop;
    long long start = center - cfg.n_fft / 2;
    for (int i = 0; i < cfg.n_fft; ++i) {
      long long idx = start + i;
      double s;
      if (idx >= 0 && idx < n)
        s = wav.samples[static_cast<size_t>(idx)];
      else if (cfg.center_pad)
        s = wav.samples[detail::reflect_index(idx, n)];
      else
        s = 0.0;
      buf[static_cast<size_t>(i)] = {s * window[static_cast<size_t>(i)], 0.0};
    }
    detail::fft_radix2(buf);
    for (int k = 0; k < n_bins; ++k) power[static_cast<size_t>(k)] = std::norm(buf[static_cast<size_t>(k)]);
    for (int m = 0; m < cfg.n_mels; ++m) {
      const double* w = fb.data() + static_cast<size_t>(m) * n_bins;
      double acc = 0.0;
      for (int k = 0; k < n_bins; ++k) acc += w[k] * power[static_cast<size_t>(k)];
      spec.at(t, m) = std::log(acc + cfg.log_floor);
    }
  }
  return spec;
}

// ---------------------------------------------------------------------------
// SpecAugment
// ---------------------------------------------------------------------------

// Zero out n_time_masks random time bands and n_freq_masks random frequency
// bands (widths drawn uniformly in [0, max]); everything else is untouched.
inline Spectrogram spec_augment(const Spectrogram& spec,
                                const SpecAugmentConfig& cfg, Rng& rng) {
  Spectrogram out = spec;
  int t_max = std::min(cfg.max_time_width_frames, spec.n_frames);
  for (int i = 0; i < cfg.n_time_masks; ++i) {
    int w = rng.uniform_int(0, t_max);
    int start = rng.uniform_int(0, spec.n_frames - w);
    for (int t = start; t < start + w; ++t)
      for (int m = 0; m < spec.n_mels; ++m) out.at(t, m) = cfg.fill_value;
  }
  int f_max = std::min(cfg.max_freq_width_bins, spec.n_mels);
  for (int i = 0; i < cfg.n_freq_masks; ++i) {
    int w = rng.uniform_int(0, f_max);
    int start = rng.uniform_int(0, spec.n_mels - w);
    for (int t = 0; t < spec.n_frames; ++t)
      for (int m = start; m < start + w; ++m) out.at(t, m) = cfg.fill_value;
  }
  return out;
}

// ---------------------------------------------------------------------------
// feature dump: magic "MELS", u32 version=1, u32 n_frames, u32 n_mels,
// row-major little-endian f64
// ---------------------------------------------------------------------------

inline void save_mels(const std::string& path, const Spectrogram& spec) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw data_error("cannot write mels file: " + path);
  auto put_u32 = [&](uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v),
                          static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<char*>(b), 4);
  };
  out.write("MELS", 4);
  put_u32(1);
  put_u32(static_cast<uint32_t>(spec.n_frames));
  put_u32(static_cast<uint32_t>(spec.n_mels));
  for (double v : spec.frames) {
    uint64_t bits;
    std::memcpy(&bits, &v, 8);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
    out.write(reinterpret_cast<char*>(b), 8);
  }
  if (!out) throw data_error("short write: " + path);
}

inline Spectrogram load_mels(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw data_error("cannot open mels file: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "MELS", 4) != 0)
    throw data_error("bad mels magic in " + path);
  unsigned char hdr[12];
  in.read(reinterpret_cast<char*>(hdr), 12);
  if (!in) throw data_error("truncated mels header in " + path);
  uint32_t version = detail::read_u32le(hdr);
  if (version != 1) throw data_error("unsupported mels version in " + path);
  Spectrogram spec;
  spec.n_frames = static_cast<int>(detail::read_u32le(hdr + 4));
  spec.n_mels = static_cast<int>(detail::read_u32le(hdr + 8));
  size_t count = static_cast<size_t>(spec.n_frames) * spec.n_mels;
  spec.frames.resize(count);
  for (size_t i = 0; i < count; ++i) {
    unsigned char b[8];
    in.read(reinterpret_cast<char*>(b), 8);
    if (!in) throw data_error("truncated mels payload in " + path);
    uint64_t bits = 0;
    for (int j = 0; j < 8; ++j) bits |= static_cast<uint64_t>(b[j]) << (8 * j);
    double v;
    std::memcpy(&v, &bits, 8);
    spec.frames[i] = v;
  }
  return spec;
}

}  // namespace acap

#endif  // ACAP_AUDIO_HPP
