// SPDX-License-Identifier: Apache-2.0

#include "msq/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "msq/error.hpp"

namespace msq {

std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc()) throw ConfigError("cannot format number");
  return {buf, end};
}

namespace {

double parse_double(const std::string& key, const std::string& s) {
  double v = 0.0;
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || end != s.data() + s.size()) {
    throw ConfigError(key + ": expected a number, got '" + s + "'");
  }
  return v;
}

std::uint64_t parse_uint(const std::string& key, const std::string& s) {
  std::uint64_t v = 0;
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || end != s.data() + s.size()) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + s + "'");
  }
  return v;
}

bool parse_bool(const std::string& key, const std::string& s) {
  if (s == "1" || s == "true") return true;
  if (s == "0" || s == "false") return false;
  throw ConfigError(key + ": expected true/false, got '" + s + "'");
}

struct Field {
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
};

template <typename Get>
Field size_field(Get ref) {
  return {[ref](const RunConfig& c) { return std::to_string(ref(const_cast<RunConfig&>(c))); },
          [ref](RunConfig& c, const std::string& k, const std::string& v) {
            ref(c) = static_cast<std::remove_reference_t<decltype(ref(c))>>(parse_uint(k, v));
          }};
}

template <typename Get>
Field double_field(Get ref) {
  return {[ref](const RunConfig& c) { return format_double(ref(const_cast<RunConfig&>(c))); },
          [ref](RunConfig& c, const std::string& k, const std::string& v) {
            ref(c) = parse_double(k, v);
          }};
}

template <typename Get>
Field bool_field(Get ref) {
  return {[ref](const RunConfig& c) {
            return std::string(ref(const_cast<RunConfig&>(c)) ? "true" : "false");
          },
          [ref](RunConfig& c, const std::string& k, const std::string& v) {
            ref(c) = parse_bool(k, v);
          }};
}

#define MSQ_REF(expr) [](RunConfig& c) -> auto& { return expr; }

const std::map<std::string, Field>& registry() {
  static const std::map<std::string, Field> fields = [] {
    std::map<std::string, Field> f;
    f["preset"] = {[](const RunConfig& c) { return c.preset; },
                   [](RunConfig& c, const std::string&, const std::string& v) {
                     if (v != "desk" && v != "paper") {
                       throw ConfigError("preset: expected desk or paper, got '" + v + "'");
                     }
                     c.preset = v;
                   }};
    f["seed"] = size_field(MSQ_REF(c.seed));

    f["model.vocab"] = size_field(MSQ_REF(c.model.vocab));
    f["model.n_mels"] = size_field(MSQ_REF(c.model.dec.n_mels));

    f["enc.d_embed"] = size_field(MSQ_REF(c.model.enc.d_embed));
    f["enc.d_prenet"] = size_field(MSQ_REF(c.model.enc.d_prenet));
    f["enc.bank_k"] = size_field(MSQ_REF(c.model.enc.bank_K));
    f["enc.conv_channels"] = size_field(MSQ_REF(c.model.enc.conv_channels));
    f["enc.highway_layers"] = size_field(MSQ_REF(c.model.enc.highway_layers));
    f["enc.d_gru"] = size_field(MSQ_REF(c.model.enc.d_gru));
    f["enc.dropout"] = double_field(MSQ_REF(c.model.enc.dropout));

    f["dec.d_attn_rnn"] = size_field(MSQ_REF(c.model.dec.d_attn_rnn));
    f["dec.d_dec_rnn"] = size_field(MSQ_REF(c.model.dec.d_dec_rnn));
    f["dec.layers"] = size_field(MSQ_REF(c.model.dec.dec_layers));
    f["dec.r"] = size_field(MSQ_REF(c.model.dec.r));
    f["dec.d_prenet"] = size_field(MSQ_REF(c.model.dec.d_prenet));
    f["dec.dropout"] = double_field(MSQ_REF(c.model.dec.dropout));

    f["train.batch_size"] = size_field(MSQ_REF(c.train.batch_size));
    f["train.steps"] = size_field(MSQ_REF(c.train.steps));
    f["train.peak_lr"] = double_field(MSQ_REF(c.train.lr.peak_lr));
    f["train.warmup_steps"] = size_field(MSQ_REF(c.train.lr.warmup_steps));
    f["train.beta1"] = double_field(MSQ_REF(c.train.beta1));
    f["train.beta2"] = double_field(MSQ_REF(c.train.beta2));
    f["train.epsilon"] = double_field(MSQ_REF(c.train.epsilon));
    f["train.clip_norm"] = double_field(MSQ_REF(c.train.clip_norm));
    f["train.checkpoint_interval"] = size_field(MSQ_REF(c.train.checkpoint_interval));
    f["train.transfer_decoder"] = bool_field(MSQ_REF(c.train.transfer_decoder));
    f["train.adapt_lr_divisor"] = double_field(MSQ_REF(c.train.adapt_lr_divisor));

    f["mask.p_text"] = double_field(MSQ_REF(c.mask.p_text));
    f["mask.p_speech"] = double_field(MSQ_REF(c.mask.p_speech));
    f["mask.p_both"] = double_field(MSQ_REF(c.mask.p_both));

    f["gen.max_steps"] = size_field(MSQ_REF(c.gen.max_steps));
    f["gen.stop_threshold"] = double_field(MSQ_REF(c.gen.stop_threshold));
    f["gen.stop_patience"] = size_field(MSQ_REF(c.gen.stop_patience));
    f["gen.prenet_dropout"] = bool_field(MSQ_REF(c.gen_prenet_dropout));

    f["data.n_utts"] = size_field(MSQ_REF(c.data.n_utts));
    f["data.min_len"] = size_field(MSQ_REF(c.data.min_len));
    f["data.max_len"] = size_field(MSQ_REF(c.data.max_len));
    return f;
  }();
  return fields;
}

#undef MSQ_REF

const Field& field(const std::string& key) {
  auto it = registry().find(key);
  if (it == registry().end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

}  // namespace

RunConfig RunConfig::desk() {
  RunConfig c;
  c.preset = "desk";
  c.model.vocab = 12;
  c.model.enc = EncoderConfig::desk();
  c.model.dec = DecoderConfig::desk();
  c.train.lr = LrSchedule{0.006, 200};
  c.data.n_utts = 32;
  return c;
}

RunConfig RunConfig::paper() {
  RunConfig c;
  c.preset = "paper";
  c.model.vocab = 12;
  c.model.enc = EncoderConfig::paper();
  c.model.dec = DecoderConfig::paper();
  c.train.batch_size = 32;
  c.train.lr = LrSchedule{0.002, 4000};
  c.train.beta1 = 0.9;
  c.train.beta2 = 0.999;
  c.train.steps = 100000;
  c.train.checkpoint_interval = 5000;
  c.gen.max_steps = 500;
  c.data.n_utts = 1000;
  return c;
}

RunConfig RunConfig::from_preset(const std::string& name) {
  if (name == "desk") return desk();
  if (name == "paper") return paper();
  throw ConfigError("unknown preset '" + name + "' (expected desk or paper)");
}

void RunConfig::set(const std::string& key, const std::string& value) {
  field(key).set(*this, key, value);
}

std::string RunConfig::get(const std::string& key) const { return field(key).get(*this); }

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> k = [] {
    std::vector<std::string> out;
    for (const auto& [name, f] : registry()) out.push_back(name);
    return out;
  }();
  return k;
}

std::map<std::string, std::string> RunConfig::snapshot() const {
  std::map<std::string, std::string> out;
  for (const auto& [name, f] : registry()) out[name] = f.get(*this);
  return out;
}

void RunConfig::apply(const std::map<std::string, std::string>& kv) {
  for (const auto& [k, v] : kv) set(k, v);
}

void RunConfig::validate() const {
  model.enc.validate();
  model.dec.validate();
  if (model.vocab == 0) throw ConfigError("model.vocab must be positive");
  if (train.batch_size == 0) throw ConfigError("train.batch_size must be at least 1");
  if (!(train.lr.peak_lr > 0.0)) throw ConfigError("train.peak_lr must be positive");
  if (train.lr.warmup_steps == 0) throw ConfigError("train.warmup_steps must be positive");
  if (!(train.beta1 >= 0.0 && train.beta1 < 1.0) || !(train.beta2 >= 0.0 && train.beta2 < 1.0)) {
    throw ConfigError("train.beta1 and train.beta2 must lie in [0, 1)");
  }
  if (!(train.epsilon > 0.0)) throw ConfigError("train.epsilon must be positive");
  if (!(train.clip_norm > 0.0)) throw ConfigError("train.clip_norm must be positive");
  if (!(train.adapt_lr_divisor > 0.0)) throw ConfigError("train.adapt_lr_divisor must be positive");
  mask.validate();
  if (gen.max_steps == 0) throw ConfigError("gen.max_steps must be at least 1");
  if (gen.stop_patience == 0) throw ConfigError("gen.stop_patience must be at least 1");
  if (data.min_len == 0 || data.min_len > data.max_len) {
    throw ConfigError("data.min_len and data.max_len must satisfy 1 <= min <= max");
  }
  toy_spec().validate();
}

ToySpec RunConfig::toy_spec() const {
  ToySpec s;
  s.vocab = model.vocab;
  s.n_mels = model.dec.n_mels;
  return s;
}

std::map<std::string, std::string> parse_kv_text(const std::string& text,
                                                 const std::string& origin) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  auto trim = [](std::string s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return std::string();
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key=value");
    }
    out[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return out;
}

std::map<std::string, std::string> read_kv_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_kv_text(ss.str(), path.string());
}

std::string format_kv_text(const std::map<std::string, std::string>& kv) {
  std::string out;
  for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
  return out;
}

RunConfig load_config(const std::string& preset, const std::filesystem::path& file,
                      const std::vector<std::pair<std::string, std::string>>& overrides) {
  std::map<std::string, std::string> from_file;
  if (!file.empty()) from_file = read_kv_file(file);
  std::string chosen = preset;
  if (chosen.empty()) {
    auto it = from_file.find("preset");
    chosen = it != from_file.end() ? it->second : "desk";
  }
  RunConfig cfg = RunConfig::from_preset(chosen);
  from_file.erase("preset");
  cfg.apply(from_file);
  for (const auto& [k, v] : overrides) {
    if (k == "preset") throw ConfigError("preset can only be chosen with --preset or the file");
    cfg.set(k, v);
  }
  cfg.validate();
  return cfg;
}

}  // namespace msq
