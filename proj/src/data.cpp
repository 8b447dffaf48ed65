// SPDX-License-Identifier: Apache-2.0

#include "msq/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>

#include "msq/error.hpp"
#include "msq/rng.hpp"

namespace msq {

static_assert(std::endian::native == std::endian::little,
              "file formats assume a little-endian host");

std::size_t ToySpec::duration(int symbol) const {
  return 2 + static_cast<std::size_t>(symbol) % 3;
}

std::size_t ToySpec::center(int symbol) const {
  return 1 + (static_cast<std::size_t>(symbol) * 7) % (n_mels - 2);
}

std::size_t ToySpec::band(int symbol, const SpeakerProfile& p) const {
  const long c = static_cast<long>(center(symbol)) + p.shift;
  return static_cast<std::size_t>(std::clamp(c, 0L, static_cast<long>(n_mels) - 1));
}

const SpeakerProfile& ToySpec::profile(const std::string& name) const {
  for (const SpeakerProfile* p : {&target, &source1, &source2, &target_b}) {
    if (p->name == name) return *p;
  }
  throw InputError("unknown speaker profile: " + name);
}

void ToySpec::validate() const {
  if (vocab == 0) throw ConfigError("vocab must be positive");
  if (n_mels < 3) throw ConfigError("n_mels must be at least 3");
  for (const SpeakerProfile* p : {&target, &source1, &source2, &target_b}) {
    if (!(p->dur_scale > 0.0)) throw ConfigError("dur_scale of " + p->name + " must be positive");
  }
}

namespace {

void check_tokens(const ToySpec& spec, const std::vector<int>& tokens) {
  if (tokens.empty()) throw InputError("render: empty token sequence");
  for (int t : tokens) {
    if (t < 0 || static_cast<std::size_t>(t) >= spec.vocab) {
      throw InputError("render: symbol " + std::to_string(t) + " outside vocabulary");
    }
  }
}

std::size_t scaled(std::size_t d, double scale) {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(static_cast<double>(d) * scale)));
}

}  // namespace

std::size_t rendered_length(const ToySpec& spec, const std::vector<int>& tokens,
                            const SpeakerProfile& p) {
  check_tokens(spec, tokens);
  std::size_t T = 2 * kSilenceFrames;
  for (int t : tokens) T += scaled(spec.duration(t), p.dur_scale);
  return T;
}

Array render(const ToySpec& spec, const std::vector<int>& tokens, const SpeakerProfile& p) {
  const std::size_t T = rendered_length(spec, tokens, p);
  Array out({T, spec.n_mels});
  out.fill(kSilence);
  std::size_t frame = kSilenceFrames;
  for (int sym : tokens) {
    const double c = static_cast<double>(spec.band(sym, p));
    const std::size_t d = scaled(spec.duration(sym), p.dur_scale);
    for (std::size_t i = 0; i < d; ++i, ++frame) {
      const double ripple =
          0.05 * std::sin(2.0 * std::numbers::pi * static_cast<double>(frame) / 8.0);
      for (std::size_t m = 0; m < spec.n_mels; ++m) {
        const double dm = static_cast<double>(m) - c;
        out(frame, m) = std::max(0.0, std::exp(-dm * dm / 2.0) + ripple);
      }
    }
  }
  return out;
}

Corpus gen_corpus(const ToySpec& spec, const CorpusOptions& opts) {
  spec.validate();
  if (opts.n_utts == 0) throw ConfigError("corpus needs at least one utterance");
  if (opts.min_len == 0 || opts.min_len > opts.max_len) {
    throw ConfigError("invalid length range [" + std::to_string(opts.min_len) + ", " +
                      std::to_string(opts.max_len) + "]");
  }
  const SpeakerProfile& target = spec.profile(opts.target);
  Rng rng(opts.seed);
  Corpus corpus;
  corpus.reserve(opts.n_utts);
  for (std::size_t i = 0; i < opts.n_utts; ++i) {
    Utterance u;
    char id[16];
    std::snprintf(id, sizeof id, "utt%04zu", i);
    u.id = id;
    const std::size_t len = opts.min_len + rng.below(opts.max_len - opts.min_len + 1);
    for (std::size_t k = 0; k < len; ++k) u.tokens.push_back(static_cast<int>(rng.below(spec.vocab)));
    u.target = render(spec, u.tokens, target);
    if (!opts.sources.empty()) {
      const SpeakerProfile& src = spec.profile(opts.sources[i % opts.sources.size()]);
      u.source_speaker = src.name;
      u.source = render(spec, u.tokens, src);
    }
    corpus.push_back(std::move(u));
  }
  return corpus;
}

// --- mel files ------------------------------------------------------------------

namespace {

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw InputError("write failed: " + path.string());
}

}  // namespace

std::vector<unsigned char> encode_mel(const Array& mel) {
  if (mel.rank() != 2) throw DimensionError("mel must be [frames, bands], got " + mel.shape_string());
  std::vector<unsigned char> out{'M', 'E', 'L', '1'};
  put_u32(out, static_cast<std::uint32_t>(mel.rows()));
  put_u32(out, static_cast<std::uint32_t>(mel.cols()));
  out.reserve(out.size() + 4 * mel.size());
  for (double v : mel.values()) {
    put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
  return out;
}

Array decode_mel(const std::vector<unsigned char>& bytes, const std::string& what) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "MEL1", 4) != 0) {
    throw FormatError(what + ": not a MEL1 file");
  }
  const std::uint64_t frames = get_u32(bytes.data() + 4);
  const std::uint64_t bands = get_u32(bytes.data() + 8);
  if (frames == 0) throw FormatError(what + ": zero frames");
  if (bands == 0) throw FormatError(what + ": zero bands");
  const std::uint64_t payload = frames * bands * 4;
  if (bytes.size() - 12 != payload) {
    throw FormatError(what + ": payload is " + std::to_string(bytes.size() - 12) +
                      " bytes, header implies " + std::to_string(payload));
  }
  Array mel({frames, bands});
  const unsigned char* p = bytes.data() + 12;
  for (std::size_t i = 0; i < mel.size(); ++i, p += 4) {
    mel[i] = static_cast<double>(std::bit_cast<float>(get_u32(p)));
  }
  return mel;
}

void save_mel(const std::filesystem::path& path, const Array& mel) {
  write_file(path, encode_mel(mel));
}

Array load_mel(const std::filesystem::path& path) {
  return decode_mel(read_file(path), path.string());
}

// --- corpus on disk -------------------------------------------------------------

std::string join_tokens(const std::vector<int>& tokens) {
  std::string s;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) s += ' ';
    s += std::to_string(tokens[i]);
  }
  return s;
}

std::vector<int> parse_tokens(const std::string& text) {
  std::vector<int> out;
  std::istringstream in(text);
  std::string word;
  while (in >> word) {
    std::size_t used = 0;
    int v = 0;
    try {
      v = std::stoi(word, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != word.size()) throw FormatError("bad token '" + word + "'");
    out.push_back(v);
  }
  return out;
}

namespace {

const char* kManifestHeader = "id,text_tokens,source_speaker,source_mel_path,target_mel_path";

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out(1);
  for (char c : line) {
    if (c == ',') {
      out.emplace_back();
    } else if (c != '\r') {
      out.back() += c;
    }
  }
  return out;
}

}  // namespace

void write_corpus(const std::filesystem::path& dir, const Corpus& corpus) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "mel");
  std::ostringstream manifest;
  manifest << kManifestHeader << '\n';
  for (const Utterance& u : corpus) {
    const std::string tgt = "mel/" + u.id + "_tgt.mel";
    std::string src;
    save_mel(dir / tgt, u.target);
    if (u.has_source()) {
      src = "mel/" + u.id + "_src.mel";
      save_mel(dir / src, u.source);
    }
    manifest << u.id << ',' << join_tokens(u.tokens) << ',' << u.source_speaker << ','
             << src << ',' << tgt << '\n';
  }
  std::ofstream out(dir / "manifest.csv", std::ios::trunc);
  if (!out) throw InputError("cannot write " + (dir / "manifest.csv").string());
  out << manifest.str();
}

Corpus read_corpus(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.csv");
  if (!in) throw InputError("cannot open " + (dir / "manifest.csv").string());
  std::string line;
  if (!std::getline(in, line) || split_csv(line) != split_csv(kManifestHeader)) {
    throw FormatError((dir / "manifest.csv").string() + ": unexpected header");
  }
  Corpus corpus;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    std::vector<std::string> f = split_csv(line);
    if (f.size() != 5) {
      throw FormatError("manifest line " + std::to_string(lineno) + ": expected 5 fields");
    }
    Utterance u;
    u.id = f[0];
    u.tokens = parse_tokens(f[1]);
    u.source_speaker = f[2];
    if (!f[3].empty()) u.source = load_mel(dir / f[3]);
    if (f[4].empty()) {
      throw FormatError("manifest line " + std::to_string(lineno) + ": missing target mel");
    }
    u.target = load_mel(dir / f[4]);
    corpus.push_back(std::move(u));
  }
  if (corpus.empty()) throw InputError("corpus at " + dir.string() + " is empty");
  return corpus;
}

}  // namespace msq
