// SPDX-License-Identifier: Apache-2.0
//
// Synthetic parallel corpus: toy symbol sequences rendered to mel-like
// frames by a target speaker and two source speakers, plus file formats.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "msq/array.hpp"

namespace msq {

struct SpeakerProfile {
  std::string name;
  int shift = 0;          // band offset added to every symbol center
  double dur_scale = 1.0;  // per-symbol duration multiplier, rounded up
};

struct ToySpec {
  std::size_t vocab = 12;
  std::size_t n_mels = 20;
  SpeakerProfile target{"target", 0, 1.0};
  SpeakerProfile source1{"source1", 2, 1.5};
  SpeakerProfile source2{"source2", -1, 0.75};
  // Second target voice, used to exercise adaptation.
  SpeakerProfile target_b{"target_b", 1, 1.25};

  std::size_t duration(int symbol) const;  // 2 + symbol mod 3
  std::size_t center(int symbol) const;    // 1 + 7 symbol mod (n_mels - 2)
  /// Center band after the speaker shift, clamped into [0, n_mels - 1].
  std::size_t band(int symbol, const SpeakerProfile& p) const;
  const SpeakerProfile& profile(const std::string& name) const;
  void validate() const;
};

constexpr double kSilence = 0.05;
constexpr std::size_t kSilenceFrames = 2;

/// Renders tokens as [T, n_mels] frames, T = 4 + sum ceil(d * dur_scale).
Array render(const ToySpec& spec, const std::vector<int>& tokens, const SpeakerProfile& p);
std::size_t rendered_length(const ToySpec& spec, const std::vector<int>& tokens,
                            const SpeakerProfile& p);

struct Utterance {
  std::string id;
  std::vector<int> tokens;     // empty when the corpus carries no text
  std::string source_speaker;  // empty when there is no source spectrogram
  Array source;                // empty when absent
  Array target;

  bool has_text() const { return !tokens.empty(); }
  bool has_source() const { return !source.empty(); }
};

using Corpus = std::vector<Utterance>;

struct CorpusOptions {
  std::size_t n_utts = 32;
  std::size_t min_len = 5;
  std::size_t max_len = 12;
  std::uint64_t seed = 1;
  std::string target = "target";
  /// Source speakers are assigned round-robin in this order.
  std::vector<std::string> sources{"source1", "source2"};
};

Corpus gen_corpus(const ToySpec& spec, const CorpusOptions& opts);

// --- mel files ------------------------------------------------------------------

/// "MEL1", u32 frames, u32 bands, f32 row-major, little-endian.
void save_mel(const std::filesystem::path& path, const Array& mel);
Array load_mel(const std::filesystem::path& path);
std::vector<unsigned char> encode_mel(const Array& mel);
Array decode_mel(const std::vector<unsigned char>& bytes, const std::string& what);

// --- corpus on disk -------------------------------------------------------------

/// Writes <dir>/manifest.csv and <dir>/mel/<id>_{src,tgt}.mel.
void write_corpus(const std::filesystem::path& dir, const Corpus& corpus);
Corpus read_corpus(const std::filesystem::path& dir);

std::string join_tokens(const std::vector<int>& tokens);
std::vector<int> parse_tokens(const std::string& text);

}  // namespace msq
