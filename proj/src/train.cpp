// SPDX-License-Identifier: Apache-2.0

#include "msq/train.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <sstream>
#include <thread>

#include "msq/error.hpp"
#include "msq/masking.hpp"

namespace msq {

std::size_t worker_threads(std::size_t cap) {
  std::size_t n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("MSQ_THREADS"); env != nullptr && *env != '\0') {
    char* end = nullptr;
    const unsigned long v = std::strtoul(env, &end, 10);
    if (end != nullptr && *end == '\0' && v > 0) n = v;
  }
  return std::max<std::size_t>(1, std::min(n, cap));
}

void check_corpus(const Corpus& corpus, ModelKind kind) {
  if (corpus.empty()) throw InputError("training corpus is empty");
  const bool need_text = kind != ModelKind::Vc;
  const bool need_source = kind != ModelKind::Tts;
  for (const Utterance& u : corpus) {
    if (need_text && !u.has_text()) {
      throw InputError("a " + to_string(kind) + " model needs text input; utterance " + u.id +
                       " has none");
    }
    if (need_source && !u.has_source()) {
      throw InputError("a " + to_string(kind) + " model needs a source spectrogram; utterance " +
                       u.id + " has none");
    }
    if (u.target.empty()) throw InputError("utterance " + u.id + " has no target spectrogram");
  }
}

namespace {

std::uint64_t stage_seed(std::uint64_t seed, const std::string& stage) {
  std::uint64_t salt = 0;
  if (stage == "tts") salt = 1;
  if (stage == "vc") salt = 2;
  if (stage == "joint") salt = 3;
  if (stage == "adapt") salt = 4;
  return seed * 16 + salt;
}

constexpr std::uint64_t kTrainerStream = 0x6a09e667f3bcc909ULL;

std::string join_indices(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ' ';
    s += std::to_string(v[i]);
  }
  return s;
}

std::vector<std::size_t> parse_indices(const std::string& s) {
  std::vector<std::size_t> out;
  std::istringstream in(s);
  std::size_t v = 0;
  while (in >> v) out.push_back(v);
  return out;
}

std::size_t parse_size(const Checkpoint& c, const std::string& key) {
  const std::string& s = c.meta_at(key);
  std::size_t used = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size() || s.empty()) throw FormatError("checkpoint entry " + key + " is malformed");
  return static_cast<std::size_t>(v);
}

double parse_real(const std::string& s) {
  double v = 0.0;
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || end != s.data() + s.size()) {
    throw FormatError("checkpoint number '" + s + "' is malformed");
  }
  return v;
}

bool architecture_key(const std::string& k) {
  return k.rfind("model.", 0) == 0 || k.rfind("enc.", 0) == 0 || k.rfind("dec.", 0) == 0;
}

}  // namespace

// --- trainer -----------------------------------------------------------------------

Trainer::Trainer(Model& model, const Corpus& corpus, const RunConfig& cfg, std::string stage,
                 double lr_scale)
    : model_(model),
      corpus_(corpus),
      cfg_(cfg),
      stage_(std::move(stage)),
      lr_scale_(lr_scale),
      opt_(AdamState::for_params(model.params(), cfg.train.beta1, cfg.train.beta2,
                                 cfg.train.epsilon)),
      rng_(stage_seed(cfg.seed, stage_) ^ kTrainerStream) {
  cfg_.validate();
  check_corpus(corpus_, model_.kind());
  buffers_.reserve(cfg_.train.batch_size);
  for (std::size_t i = 0; i < cfg_.train.batch_size; ++i) buffers_.emplace_back(model_.params());
}

void Trainer::next_epoch() {
  order_.resize(corpus_.size());
  for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
  for (std::size_t i = order_.size(); i > 1; --i) std::swap(order_[i - 1], order_[rng_.below(i)]);
  cursor_ = 0;
  ++epoch_;
  epoch_sum_.push_back(0.0);
  epoch_count_.push_back(0);
}

LossRecord Trainer::step() {
  const std::size_t B = cfg_.train.batch_size;
  struct Slot {
    std::size_t utt;
    MaskSelection mask;
    std::uint64_t dropout_seed;
    std::size_t epoch;
    double loss = 0.0;
  };
  std::vector<Slot> slots;
  slots.reserve(B);
  for (std::size_t b = 0; b < B; ++b) {
    if (cursor_ == order_.size()) next_epoch();
    const std::size_t utt = order_[cursor_++];
    const MaskSelection mask = model_.kind() == ModelKind::Joint ? sample_mask(cfg_.mask, rng_)
                                                                 : model_.native_mask();
    slots.push_back({utt, mask, rng_.next_u64(), epoch_ - 1});
  }

  const std::size_t n_workers = worker_threads(B);
  std::vector<std::exception_ptr> errors(n_workers);
  auto work = [&](std::size_t w) {
    try {
      for (std::size_t b = w; b < B; b += n_workers) {
        const Utterance& u = corpus_[slots[b].utt];
        buffers_[b].set_zero();
        Rng dropout(slots[b].dropout_seed);
        Example ex{u.tokens, u.has_source() ? &u.source : nullptr, &u.target, slots[b].mask};
        slots[b].loss = example_loss(model_, ex, &dropout, &buffers_[b]);
      }
    } catch (...) {
      errors[w] = std::current_exception();
    }
  };
  if (n_workers == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(work, w);
    for (std::thread& t : pool) t.join();
  }
  for (const std::exception_ptr& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  ParamStore& ps = model_.params();
  ps.zero_grads();
  double loss = 0.0;
  for (std::size_t b = 0; b < B; ++b) {
    buffers_[b].accumulate_into(ps, 1.0 / static_cast<double>(B));
    loss += slots[b].loss;
  }
  loss /= static_cast<double>(B);
  if (!std::isfinite(loss)) {
    throw NumericError("non-finite loss at " + stage_ + " step " + std::to_string(step_ + 1));
  }
  clip_grad_norm(ps, cfg_.train.clip_norm);
  const double lr = noam_lr(opt_.step + 1, cfg_.train.lr) * lr_scale_;
  try {
    adam_step(ps, opt_, lr);
  } catch (const NumericError& e) {
    throw NumericError(stage_ + " step " + std::to_string(step_ + 1) + ": " + e.what());
  }
  for (const Slot& s : slots) {
    epoch_sum_[s.epoch] += s.loss;
    ++epoch_count_[s.epoch];
  }
  ++step_;
  return {step_, stage_, loss, lr};
}

std::vector<double> Trainer::epoch_means() const {
  std::vector<double> out;
  for (std::size_t e = 0; e < epoch_sum_.size(); ++e) {
    if (epoch_count_[e] > 0) out.push_back(epoch_sum_[e] / static_cast<double>(epoch_count_[e]));
  }
  return out;
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint c = model_checkpoint(model_, cfg_);
  const ParamStore& ps = model_.params();
  for (std::size_t i = 0; i < ps.size(); ++i) {
    c.blobs.push_back({"adam/m/" + ps[i].name, opt_.m[i]});
    c.blobs.push_back({"adam/v/" + ps[i].name, opt_.v[i]});
  }
  c.meta["state.stage"] = stage_;
  c.meta["state.step"] = std::to_string(step_);
  c.meta["state.adam_step"] = std::to_string(opt_.step);
  c.meta["state.rng"] = rng_.state();
  c.meta["state.epoch"] = std::to_string(epoch_);
  c.meta["state.cursor"] = std::to_string(cursor_);
  c.meta["state.order"] = join_indices(order_);
  std::string sums, counts;
  for (std::size_t e = 0; e < epoch_sum_.size(); ++e) {
    if (e) {
      sums += ' ';
      counts += ' ';
    }
    sums += format_double(epoch_sum_[e]);
    counts += std::to_string(epoch_count_[e]);
  }
  c.meta["state.epoch_sums"] = sums;
  c.meta["state.epoch_counts"] = counts;
  return c;
}

void Trainer::restore(const Checkpoint& ckpt) {
  if (ckpt.meta_at("state.stage") != stage_) {
    throw InputError("checkpoint belongs to stage " + ckpt.meta_at("state.stage") +
                     ", not " + stage_);
  }
  copy_params(model_, ckpt, "");
  const ParamStore& ps = model_.params();
  for (std::size_t i = 0; i < ps.size(); ++i) {
    opt_.m[i] = ckpt.at("adam/m/" + ps[i].name).value;
    opt_.v[i] = ckpt.at("adam/v/" + ps[i].name).value;
    require_same_shape(opt_.m[i], ps[i].value, "adam moment");
    require_same_shape(opt_.v[i], ps[i].value, "adam moment");
  }
  step_ = parse_size(ckpt, "state.step");
  opt_.step = parse_size(ckpt, "state.adam_step");
  rng_.restore(ckpt.meta_at("state.rng"));
  epoch_ = parse_size(ckpt, "state.epoch");
  cursor_ = parse_size(ckpt, "state.cursor");
  order_ = parse_indices(ckpt.meta_at("state.order"));
  if (order_.size() != (epoch_ == 0 ? 0 : corpus_.size()) || cursor_ > order_.size()) {
    throw InputError("checkpoint data order does not match this corpus");
  }
  epoch_sum_.clear();
  epoch_count_.clear();
  {
    std::istringstream in(ckpt.meta_at("state.epoch_sums"));
    std::string word;
    while (in >> word) epoch_sum_.push_back(parse_real(word));
  }
  for (std::size_t c : parse_indices(ckpt.meta_at("state.epoch_counts"))) {
    epoch_count_.push_back(c);
  }
  if (epoch_sum_.size() != epoch_ || epoch_count_.size() != epoch_) {
    throw FormatError("checkpoint epoch statistics are inconsistent");
  }
}

// --- checkpoints of models -----------------------------------------------------------

Checkpoint model_checkpoint(const Model& model, const RunConfig& cfg) {
  Checkpoint c;
  c.meta = cfg.snapshot();
  c.meta["state.model_kind"] = to_string(model.kind());
  const ParamStore& ps = model.params();
  for (std::size_t i = 0; i < ps.size(); ++i) c.blobs.push_back({ps[i].name, ps[i].value});
  return c;
}

ModelKind checkpoint_kind(const Checkpoint& ckpt) {
  return parse_model_kind(ckpt.meta_at("state.model_kind"));
}

Model model_from_checkpoint(const Checkpoint& ckpt, RunConfig* cfg_out) {
  RunConfig cfg = RunConfig::from_preset(ckpt.meta_at("preset"));
  for (const auto& [k, v] : ckpt.meta) {
    if (k.rfind("state.", 0) != 0) cfg.set(k, v);
  }
  cfg.validate();
  ModelConfig mc = cfg.model;
  mc.kind = checkpoint_kind(ckpt);
  Model model(mc);
  copy_params(model, ckpt, "");
  if (cfg_out != nullptr) *cfg_out = cfg;
  return model;
}

void copy_params(Model& model, const Checkpoint& from, const std::string& prefix) {
  ParamStore& ps = model.params();
  for (std::size_t i = 0; i < ps.size(); ++i) {
    Param& p = ps[i];
    if (p.name.rfind(prefix, 0) != 0) continue;
    const Blob* b = from.find(p.name);
    if (b == nullptr) throw InputError("checkpoint lacks parameter blob " + p.name);
    if (b->value.shape() != p.value.shape()) {
      throw DimensionError("blob " + p.name + " has shape " + b->value.shape_string() +
                           ", model expects " + p.value.shape_string());
    }
    p.value = b->value;
  }
}

// --- stages ------------------------------------------------------------------------

double corpus_loss(const Model& model, const Corpus& corpus) {
  check_corpus(corpus, model.kind());
  double total = 0.0;
  for (const Utterance& u : corpus) {
    Example ex{u.tokens, u.has_source() ? &u.source : nullptr, &u.target, model.native_mask()};
    total += example_loss(model, ex, nullptr, nullptr);
  }
  return total / static_cast<double>(corpus.size());
}

void write_loss_csv(const std::filesystem::path& path, const std::vector<LossRecord>& trace,
                    bool append) {
  const bool header = !append || !std::filesystem::exists(path);
  std::ofstream out(path, append ? std::ios::app : std::ios::trunc);
  if (!out) throw InputError("cannot write " + path.string());
  if (header) out << "step,stage,loss,lr\n";
  for (const LossRecord& r : trace) {
    out << r.step << ',' << r.stage << ',' << format_double(r.loss) << ','
        << format_double(r.lr) << '\n';
  }
}

namespace {

StageResult run_stage(Model model, const Corpus& corpus, const RunConfig& cfg,
                      const std::string& stage, double lr_scale, const Checkpoint* adam_from,
                      const StageOptions& opts) {
  const auto t0 = std::chrono::steady_clock::now();
  StageReport report;
  report.stage = stage;
  report.pre_loss = corpus_loss(model, corpus);
  Trainer trainer(model, corpus, cfg, stage, lr_scale);
  if (opts.resume != nullptr) {
    trainer.restore(*opts.resume);
  } else if (adam_from != nullptr) {
    const ParamStore& ps = model.params();
    AdamState& opt = trainer.optimizer();
    for (std::size_t i = 0; i < ps.size(); ++i) {
      const Blob* m = adam_from->find("adam/m/" + ps[i].name);
      const Blob* v = adam_from->find("adam/v/" + ps[i].name);
      if (m == nullptr || v == nullptr) continue;
      opt.m[i] = m->value;
      opt.v[i] = v->value;
    }
    if (adam_from->meta.count("state.adam_step")) {
      opt.step = parse_size(*adam_from, "state.adam_step");
    }
  }
  const std::filesystem::path ckpt_path =
      opts.out_dir.empty() ? std::filesystem::path() : opts.out_dir / (stage + ".ckpt");
  while (trainer.steps_done() < cfg.train.steps) {
    LossRecord r = trainer.step();
    report.trace.push_back(r);
    if (opts.on_step) opts.on_step(r);
    if (!ckpt_path.empty() && cfg.train.checkpoint_interval > 0 &&
        r.step % cfg.train.checkpoint_interval == 0) {
      save_checkpoint(ckpt_path, trainer.checkpoint());
    }
  }
  report.epoch_means = trainer.epoch_means();
  report.post_loss = corpus_loss(model, corpus);
  Checkpoint final = trainer.checkpoint();
  if (!opts.out_dir.empty()) {
    std::filesystem::create_directories(opts.out_dir);
    save_checkpoint(ckpt_path, final);
    write_loss_csv(opts.out_dir / (stage + "_loss.csv"), report.trace, opts.resume != nullptr);
  }
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {std::move(model), std::move(final), std::move(report)};
}

Model fresh_model(const RunConfig& cfg, ModelKind kind, const std::string& stage) {
  cfg.validate();
  ModelConfig mc = cfg.model;
  mc.kind = kind;
  Model m(mc);
  m.initialize(stage_seed(cfg.seed, stage));
  return m;
}

}  // namespace

StageResult train_standalone_tts(const Corpus& corpus, const RunConfig& cfg,
                                 const StageOptions& opts) {
  check_corpus(corpus, ModelKind::Tts);
  return run_stage(fresh_model(cfg, ModelKind::Tts, "tts"), corpus, cfg, "tts", 1.0, nullptr,
                   opts);
}

StageResult train_standalone_vc(const Corpus& corpus, const RunConfig& cfg,
                                const StageOptions& opts) {
  check_corpus(corpus, ModelKind::Vc);
  return run_stage(fresh_model(cfg, ModelKind::Vc, "vc"), corpus, cfg, "vc", 1.0, nullptr,
                   opts);
}

Model init_joint(const Checkpoint& tts, const Checkpoint& vc, const RunConfig& cfg) {
  if (checkpoint_kind(tts) != ModelKind::Tts) throw InputError("--init-tts is not a TTS checkpoint");
  if (checkpoint_kind(vc) != ModelKind::Vc) throw InputError("--init-vc is not a VC checkpoint");
  Model joint = fresh_model(cfg, ModelKind::Joint, "joint");
  copy_params(joint, tts, "enc_text/");
  copy_params(joint, vc, "enc_speech/");
  if (cfg.train.transfer_decoder) {
    copy_params(joint, tts, "dec/");
    copy_params(joint, tts, "att_text/");
  }
  return joint;
}

StageResult train_joint(Model model, const Corpus& corpus, const RunConfig& cfg,
                        const StageOptions& opts) {
  if (model.kind() != ModelKind::Joint) throw InputError("joint training needs a joint model");
  check_corpus(corpus, ModelKind::Joint);
  return run_stage(std::move(model), corpus, cfg, "joint", 1.0, nullptr, opts);
}

StageResult adapt_finetune(const Checkpoint& ckpt, const Corpus& corpus, const RunConfig& cfg,
                           const StageOptions& opts) {
  RunConfig stored;
  Model model = model_from_checkpoint(ckpt, &stored);
  const auto want = cfg.snapshot();
  for (const auto& [k, v] : stored.snapshot()) {
    if (architecture_key(k) && want.at(k) != v) {
      throw ConfigError("adaptation config sets " + k + "=" + want.at(k) +
                        " but the checkpoint was trained with " + v);
    }
  }
  check_corpus(corpus, model.kind());
  return run_stage(std::move(model), corpus, cfg, "adapt", 1.0 / cfg.train.adapt_lr_divisor,
                   &ckpt, opts);
}

}  // namespace msq
