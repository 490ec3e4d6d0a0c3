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
// Dataset ingestion (Clotho-format CSV), word-level tokenization and
// vocabulary, batching, and a deterministic synthetic toy corpus of
// composed audio events with template captions.

#ifndef ACAP_DATA_HPP
#define ACAP_DATA_HPP

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "acap/audio.hpp"
#include "acap/error.hpp"
#include "acap/rng.hpp"

namespace acap {

struct CaptionedClip {
  std::string audio_path;
  std::vector<std::string> captions;  // 5 for Clotho; toy may collapse to fewer
};

struct Vocab {
  static constexpr int kPad = 0;
  static constexpr int kSos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;

  std::unordered_map<std::string, int> word_to_id;
  std::vector<std::string> id_to_word;
  int min_freq = 1;

  int size() const { return static_cast<int>(id_to_word.size()); }

  int id(const std::string& w) const {
    auto it = word_to_id.find(w);
    return it == word_to_id.end() ? kUnk : it->second;
  }
};

struct TokenSequence {
  std::vector<int> ids;  // sos + words + eos; batching appends pads
};

// ---------------------------------------------------------------------------
// tokenization
// ---------------------------------------------------------------------------

// lowercase, strip [.,!?;:"], collapse whitespace, split on spaces
inline std::vector<std::string> normalize_and_tokenize(const std::string& caption) {
  std::vector<std::string> words;
  std::string cur;
  for (char ch : caption) {
    unsigned char c = static_cast<unsigned char>(ch);
    if (c == '.' || c == ',' || c == '!' || c == '?' || c == ';' || c == ':' ||
        c == '"')
      continue;
    if (std::isspace(c)) {
      if (!cur.empty()) {
        words.push_back(cur);
        cur.clear();
      }
      continue;
    }
    cur.push_back(static_cast<char>(std::tolower(c)));
  }
  if (!cur.empty()) words.push_back(cur);
  if (words.empty())
    throw data_error("caption is empty after normalization: \"" + caption + "\"");
  return words;
}

// ---------------------------------------------------------------------------
// vocabulary
// ---------------------------------------------------------------------------

// Built from the training split only. Words below min_freq map to unk.
// Deterministic id order: frequency descending, then alphabetical.
inline Vocab build_vocab(const std::vector<CaptionedClip>& clips, int min_freq = 1) {
  std::map<std::string, long> freq;
  for (const CaptionedClip& clip : clips)
    for (const std::string& cap : clip.captions)
      for (const std::string& w : normalize_and_tokenize(cap)) ++freq[w];

  std::vector<std::pair<std::string, long>> entries(freq.begin(), freq.end());
  std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });

  Vocab v;
  v.min_freq = min_freq;
  v.id_to_word = {"<pad>", "<sos>", "<eos>", "<unk>"};
  for (const auto& [word, count] : entries) {
    if (count < min_freq) continue;
    v.word_to_id.emplace(word, v.size());
    v.id_to_word.push_back(word);
  }
  return v;
}

inline TokenSequence encode(const std::string& caption, const Vocab& vocab) {
  TokenSequence seq;
  seq.ids.push_back(Vocab::kSos);
  for (const std::string& w : normalize_and_tokenize(caption))
    seq.ids.push_back(vocab.id(w));
  seq.ids.push_back(Vocab::kEos);
  return seq;
}

// stops at eos, drops pad/sos/eos
inline std::string decode(const std::vector<int>& ids, const Vocab& vocab) {
  std::string out;
  for (int id : ids) {
    if (id == Vocab::kEos) break;
    if (id == Vocab::kPad || id == Vocab::kSos) continue;
    if (!out.empty()) out += ' ';
    out += (id >= 0 && id < vocab.size()) ? vocab.id_to_word[static_cast<size_t>(id)]
                                          : "<unk>";
  }
  return out;
}

inline void save_vocab(const std::string& path, const Vocab& vocab) {
  std::ofstream out(path);
  if (!out) throw data_error("cannot write vocab file: " + path);
  for (const std::string& w : vocab.id_to_word) out << w << "\n";
}

inline Vocab load_vocab(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw data_error("cannot open vocab file: " + path);
  Vocab v;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    v.id_to_word.push_back(line);
  }
  if (v.size() < 4 || v.id_to_word[0] != "<pad>" || v.id_to_word[1] != "<sos>" ||
      v.id_to_word[2] != "<eos>" || v.id_to_word[3] != "<unk>")
    throw data_error("vocab file missing special tokens: " + path);
  for (int i = 4; i < v.size(); ++i)
    v.word_to_id.emplace(v.id_to_word[static_cast<size_t>(i)], i);
  return v;
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

namespace detail {

// RFC-4180-style rows: quoted fields may contain commas and doubled quotes
inline std::vector<std::vector<std::string>> parse_csv(std::istream& in) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool in_quotes = false;
  bool row_open = false;
  char c;
  while (in.get(c)) {
    if (in_quotes) {
      if (c == '"') {
        if (in.peek() == '"') {
          in.get(c);
          field.push_back('"');
        } else {
          in_quotes = false;
        }
      } else {
        field.push_back(c);
      }
      continue;
    }
    switch (c) {
      case '"':
        in_quotes = true;
        row_open = true;
        break;
      case ',':
        row.push_back(field);
        field.clear();
        row_open = true;
        break;
      case '\r':
        break;
      case '\n':
        if (row_open || !field.empty()) {
          row.push_back(field);
          field.clear();
          rows.push_back(row);
          row.clear();
          row_open = false;
        }
        break;
      default:
        field.push_back(c);
        row_open = true;
    }
  }
  if (row_open || !field.empty()) {
    row.push_back(field);
    rows.push_back(row);
  }
  return rows;
}

inline std::string csv_quote(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    else out.push_back(c);
  }
  return out + "\"";
}

}  // namespace detail

// Header must be file_name,caption_1,...,caption_5. Malformed rows are
// collected and reported together.
inline std::vector<CaptionedClip> load_clotho_csv(const std::string& csv_path,
                                                  const std::string& audio_dir) {
  std::ifstream in(csv_path);
  if (!in) throw data_error("cannot open caption csv: " + csv_path);
  auto rows = detail::parse_csv(in);
  if (rows.empty()) throw data_error("empty caption csv: " + csv_path);

  const std::vector<std::string> expect_header = {
      "file_name", "caption_1", "caption_2", "caption_3", "caption_4",
      "caption_5"};
  if (rows[0] != expect_header)
    throw data_error("bad csv header in " + csv_path +
                     " (expected file_name,caption_1,...,caption_5)");

  std::vector<CaptionedClip> clips;
  std::vector<std::string> problems;
  for (size_t r = 1; r < rows.size(); ++r) {
    const std::vector<std::string>& row = rows[r];
    std::string where = "row " + std::to_string(r + 1);
    if (row.size() != 6) {
      problems.push_back(where + ": expected 6 columns, got " +
                         std::to_string(row.size()));
      continue;
    }
    CaptionedClip clip;
    clip.audio_path =
        (std::filesystem::path(audio_dir) / row[0]).string();
    bool ok = true;
    for (int c = 1; c <= 5; ++c) {
      if (row[static_cast<size_t>(c)].empty()) {
        problems.push_back(where + ": caption_" + std::to_string(c) +
                           " is empty");
        ok = false;
      }
    }
    if (ok && !std::filesystem::exists(clip.audio_path)) {
      problems.push_back(where + ": missing audio file " + clip.audio_path);
      ok = false;
    }
    if (!ok) continue;
    clip.captions.assign(row.begin() + 1, row.end());
    clips.push_back(std::move(clip));
  }
  if (!problems.empty()) {
    std::string msg = "caption csv " + csv_path + " has bad rows:";
    for (const std::string& p : problems) msg += "\n  " + p;
    throw data_error(msg);
  }
  return clips;
}

// ---------------------------------------------------------------------------
// batching
// ---------------------------------------------------------------------------

// Spectrograms padded along time with zeros, token sequences padded with
// pad to a common length one past the longest caption (so the shifted
// decoder input always retains its eos). Length arrays carry the true
// extents; downstream masks derive from them.
struct Batch {
  int n = 0;
  int t_max = 0;
  int n_mels = 0;
  std::vector<double> mel;        // [n, t_max, n_mels]
  std::vector<int> mel_lens;      // true frame counts
  int token_len = 0;              // common padded length
  std::vector<std::vector<int>> tokens;  // each of size token_len
  std::vector<int> token_lens;    // true lengths incl sos/eos
};

inline Batch make_batch(const std::vector<const Spectrogram*>& specs,
                        const std::vector<TokenSequence>& seqs) {
  if (specs.empty() || specs.size() != seqs.size())
    throw shape_error("make_batch: bad sizes");
  Batch b;
  b.n = static_cast<int>(specs.size());
  b.n_mels = specs[0]->n_mels;
  for (const Spectrogram* s : specs) {
    if (s->n_mels != b.n_mels) throw shape_error("make_batch: n_mels mismatch");
    b.t_max = std::max(b.t_max, s->n_frames);
    b.mel_lens.push_back(s->n_frames);
  }
  b.mel.assign(static_cast<size_t>(b.n) * b.t_max * b.n_mels, 0.0);
  for (int i = 0; i < b.n; ++i) {
    const Spectrogram* s = specs[static_cast<size_t>(i)];
    std::copy(s->frames.begin(), s->frames.end(),
              b.mel.begin() + static_cast<size_t>(i) * b.t_max * b.n_mels);
  }
  int longest = 0;
  for (const TokenSequence& s : seqs)
    longest = std::max(longest, static_cast<int>(s.ids.size()));
  b.token_len = longest + 1;
  for (const TokenSequence& s : seqs) {
    std::vector<int> padded = s.ids;
    padded.resize(static_cast<size_t>(b.token_len), Vocab::kPad);
    b.tokens.push_back(std::move(padded));
    b.token_lens.push_back(static_cast<int>(s.ids.size()));
  }
  return b;
}

// ---------------------------------------------------------------------------
// toy corpus
// ---------------------------------------------------------------------------

enum class ToyEvent { kLowTone, kHighTone, kNoise, kSilence };

inline const char* toy_event_phrase(ToyEvent e) {
  switch (e) {
    case ToyEvent::kLowTone: return "a low tone";
    case ToyEvent::kHighTone: return "a high tone";
    case ToyEvent::kNoise: return "noise";
    case ToyEvent::kSilence: return "silence";
  }
  return "";
}

inline void render_toy_event(ToyEvent e, int n_samples, int sample_rate,
                             Rng& rng, std::vector<double>* out) {
  switch (e) {
    case ToyEvent::kLowTone:
    case ToyEvent::kHighTone: {
      double freq = (e == ToyEvent::kLowTone) ? 220.0 : 1760.0;
      for (int i = 0; i < n_samples; ++i)
        out->push_back(0.5 * std::sin(2.0 * M_PI * freq * i / sample_rate));
      break;
    }
    case ToyEvent::kNoise:
      for (int i = 0; i < n_samples; ++i)
        out->push_back(0.6 * rng.uniform() - 0.3);
      break;
    case ToyEvent::kSilence:
      out->insert(out->end(), static_cast<size_t>(n_samples), 0.0);
      break;
  }
}

struct ToyClip {
  std::vector<ToyEvent> events;
  std::vector<double> samples;
  std::string caption;
};

// 2-3 events of 1.0-1.33 s each (total 2-4 s), consecutive events distinct,
// caption templated from the event order.
inline ToyClip draw_toy_clip(Rng& rng, int sample_rate) {
  ToyClip clip;
  int n_events = rng.uniform_int(2, 3);
  const ToyEvent kinds[4] = {ToyEvent::kLowTone, ToyEvent::kHighTone,
                             ToyEvent::kNoise, ToyEvent::kSilence};
  for (int i = 0; i < n_events; ++i) {
    ToyEvent e;
    do {
      e = kinds[rng.uniform_int(0, 3)];
    } while (i > 0 && e == clip.events.back());
    clip.events.push_back(e);
  }
  for (size_t i = 0; i < clip.events.size(); ++i) {
    double dur = 1.0 + 0.33 * rng.uniform();
    int n = static_cast<int>(dur * sample_rate);
    render_toy_event(clip.events[i], n, sample_rate, rng, &clip.samples);
  }
  clip.caption = toy_event_phrase(clip.events[0]);
  clip.caption += " followed by ";
  clip.caption += toy_event_phrase(clip.events[1]);
  if (clip.events.size() == 3) {
    clip.caption += " then ";
    clip.caption += toy_event_phrase(clip.events[2]);
  }
  return clip;
}

// Writes out_dir/captions.csv plus out_dir/audio/clip_NNN.wav. Byte-identical
// for identical (n_clips, seed).
inline void gen_toy_corpus(int n_clips, uint64_t seed, const std::string& out_dir,
                           int sample_rate = 44100) {
  if (n_clips < 1) throw config_error("toy corpus needs n_clips >= 1");
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(out_dir) / "audio");
  Rng root(seed);
  std::ofstream csv(fs::path(out_dir) / "captions.csv");
  if (!csv) throw data_error("cannot write captions.csv in " + out_dir);
  csv << "file_name,caption_1,caption_2,caption_3,caption_4,caption_5\n";
  for (int i = 0; i < n_clips; ++i) {
    Rng rng = root.split("clip" + std::to_string(i));
    ToyClip clip = draw_toy_clip(rng, sample_rate);
    char name[32];
    std::snprintf(name, sizeof(name), "clip_%03d.wav", i);
    save_wav_pcm16((fs::path(out_dir) / "audio" / name).string(), clip.samples,
                   sample_rate);
    csv << name;
    for (int c = 0; c < 5; ++c) csv << "," << detail::csv_quote(clip.caption);
    csv << "\n";
  }
  if (!csv) throw data_error("short write of captions.csv in " + out_dir);
}

}  // namespace acap

#endif  // ACAP_DATA_HPP
