// SPDX-License-Identifier: Apache-2.0
//
// msq: data generation, staged training, synthesis, gradient checks and
// evaluation for the multi-source sequence model.
//
// Exit codes: 0 success, 2 usage or input error, 3 numerical failure,
// 4 check failure, 1 anything else.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "msq/checkpoint.hpp"
#include "msq/config.hpp"
#include "msq/data.hpp"
#include "msq/error.hpp"
#include "msq/eval.hpp"
#include "msq/gradcheck_suite.hpp"
#include "msq/rng.hpp"
#include "msq/train.hpp"

namespace fs = std::filesystem;
using namespace msq;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitCheck = 4;

struct Globals {
  std::string config;
  std::string preset;
  std::optional<std::uint64_t> seed;
  std::string out = "run";
  std::vector<std::string> sets;
};

RunConfig build_config(const Globals& g) {
  std::vector<std::pair<std::string, std::string>> overrides;
  for (const std::string& s : g.sets) {
    const std::size_t eq = s.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw ConfigError("--set expects key=value, got '" + s + "'");
    }
    overrides.emplace_back(s.substr(0, eq), s.substr(eq + 1));
  }
  if (g.seed) overrides.emplace_back("seed", std::to_string(*g.seed));
  RunConfig cfg = load_config(g.preset, g.config, overrides);
  cfg.data.seed = cfg.seed;
  return cfg;
}

void write_run_config(const fs::path& dir, const RunConfig& cfg) {
  fs::create_directories(dir);
  std::ofstream(dir / "run_config.txt") << format_kv_text(cfg.snapshot());
}

Corpus load_or_generate(const std::string& dir, const RunConfig& cfg) {
  if (!dir.empty()) return read_corpus(dir);
  return gen_corpus(cfg.toy_spec(), cfg.data);
}

Corpus first_n(Corpus c, std::size_t n) {
  if (n > 0 && n < c.size()) c.resize(n);
  return c;
}

// --- gendata ---------------------------------------------------------------------

struct GendataArgs {
  std::optional<std::size_t> n;
};

int cmd_gendata(const Globals& g, const GendataArgs& a) {
  RunConfig cfg = build_config(g);
  if (a.n) {
    if (*a.n == 0) throw CLI::ValidationError("--n", "must be at least 1");
    cfg.data.n_utts = *a.n;
  }
  const Corpus corpus = gen_corpus(cfg.toy_spec(), cfg.data);
  write_corpus(g.out, corpus);
  std::cout << "wrote " << corpus.size() << " utterances to " << g.out << '\n';
  return 0;
}

// --- train -----------------------------------------------------------------------

struct TrainArgs {
  std::string stage;
  std::string corpus;
  std::string init_tts;
  std::string init_vc;
  std::string init;
  std::string resume;
};

void print_stage(const StageReport& r) {
  const auto& em = r.epoch_means;
  std::printf("%s: %zu steps in %.1f s\n", r.stage.c_str(), r.trace.size(), r.wall_seconds);
  if (!em.empty()) {
    std::printf("  epoch-mean loss: first %.6f  last %.6f  (%zu epochs)\n", em.front(), em.back(),
                em.size());
  }
  std::printf("  teacher-forced corpus loss: %.6f -> %.6f\n", r.pre_loss, r.post_loss);
}

int cmd_train(const Globals& g, const TrainArgs& a) {
  const RunConfig cfg = build_config(g);
  if (a.stage == "joint" && a.resume.empty() && (a.init_tts.empty() || a.init_vc.empty())) {
    throw CLI::ValidationError("train --stage joint requires --init-tts and --init-vc");
  }
  if (a.stage == "adapt" && a.resume.empty() && a.init.empty()) {
    throw CLI::ValidationError("train --stage adapt requires --init");
  }
  const Corpus corpus = load_or_generate(a.corpus, cfg);
  std::optional<Checkpoint> resume;
  StageOptions opts;
  opts.out_dir = g.out;
  if (!a.resume.empty()) {
    resume = load_checkpoint(a.resume);
    opts.resume = &*resume;
  }
  write_run_config(g.out, cfg);

  std::optional<StageResult> r;
  if (a.stage == "tts") {
    r = train_standalone_tts(corpus, cfg, opts);
  } else if (a.stage == "vc") {
    r = train_standalone_vc(corpus, cfg, opts);
  } else if (a.stage == "joint") {
    Model model = resume ? model_from_checkpoint(*resume)
                         : init_joint(load_checkpoint(a.init_tts), load_checkpoint(a.init_vc), cfg);
    r = train_joint(std::move(model), corpus, cfg, opts);
  } else {
    r = adapt_finetune(resume ? *resume : load_checkpoint(a.init), corpus, cfg, opts);
  }
  print_stage(r->report);
  std::cout << "  checkpoint: " << (fs::path(g.out) / (a.stage + ".ckpt")).string() << '\n';
  return 0;
}

// --- run -------------------------------------------------------------------------

struct RunArgs {
  std::string ckpt;
  std::string mode;
  std::string tokens;
  std::string mel;
  std::string output;
  bool dump_align = false;
};

int cmd_run(const Globals& g, const RunArgs& a) {
  const RunConfig cfg = build_config(g);
  const MaskSelection mask = mode_mask(a.mode);
  if (uses_text(mask) && a.tokens.empty()) {
    throw InputError("mode " + a.mode + " needs the text input (--tokens)");
  }
  if (uses_speech(mask) && a.mel.empty()) {
    throw InputError("mode " + a.mode + " needs the source spectrogram input (--mel)");
  }
  const Model model = model_from_checkpoint(load_checkpoint(a.ckpt));
  model.check_mask(mask);
  const std::vector<int> tokens = a.tokens.empty() ? std::vector<int>{} : parse_tokens(a.tokens);
  std::optional<Array> source;
  if (!a.mel.empty()) source = load_mel(a.mel);

  Rng rng(cfg.seed);
  const DecodeResult r = synthesize(model, tokens, source ? &*source : nullptr, mask, cfg.gen,
                                    cfg.gen_prenet_dropout ? &rng : nullptr);
  const fs::path out = a.output.empty() ? fs::path(g.out) / "output.mel" : fs::path(a.output);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  save_mel(out, r.frames);
  std::cout << "wrote " << r.frames.rows() << " frames x " << r.frames.cols() << " bands to "
            << out.string() << '\n';
  if (a.dump_align) {
    const fs::path align = fs::path(out).replace_extension(".align.csv");
    write_alignment_csv(align, r.trace);
    std::cout << "alignment: " << align.string() << '\n';
  }
  return 0;
}

// --- gradcheck -------------------------------------------------------------------

int cmd_gradcheck(const Globals& g) {
  const std::uint64_t seed = g.seed.value_or(1);
  constexpr double kTolerance = 1e-4;
  bool ok = true;
  std::printf("%-24s %12s %8s  %s\n", "layer", "max_rel_err", "entries", "worst");
  for (const LayerCheck& c : run_gradcheck_suite(seed)) {
    const bool pass = c.max_rel_err < kTolerance;
    ok = ok && pass;
    std::printf("%-24s %12.3e %8zu  %s%s\n", c.name.c_str(), c.max_rel_err, c.checked,
                c.worst.c_str(), pass ? "" : "  FAIL");
  }
  std::printf("%s (tolerance %.0e, seed %llu)\n", ok ? "all layers pass" : "gradient check FAILED",
              kTolerance, static_cast<unsigned long long>(seed));
  return ok ? 0 : kExitCheck;
}

// --- eval ------------------------------------------------------------------------

struct EvalArgs {
  std::string ckpt;
  std::string tts_ckpt;
  std::string vc_ckpt;
  std::string corpus;
  std::size_t limit = 0;
};

std::vector<MaskSelection> modes_for(ModelKind kind) {
  switch (kind) {
    case ModelKind::Tts:
      return {MaskSelection::TextOnly};
    case ModelKind::Vc:
      return {MaskSelection::SpeechOnly};
    case ModelKind::Joint:
      break;
  }
  return {MaskSelection::TextOnly, MaskSelection::SpeechOnly, MaskSelection::Both};
}

int cmd_eval(const Globals& g, const EvalArgs& a) {
  const RunConfig cfg = build_config(g);
  if (a.ckpt.empty() && a.tts_ckpt.empty() && a.vc_ckpt.empty()) {
    throw CLI::ValidationError("eval needs at least one of --ckpt, --tts-ckpt, --vc-ckpt");
  }
  const Corpus corpus = first_n(load_or_generate(a.corpus, cfg), a.limit);
  EvalOptions opts;
  opts.gen = cfg.gen;
  opts.prenet_dropout = cfg.gen_prenet_dropout;
  opts.seed = cfg.seed;
  write_run_config(g.out, cfg);

  std::vector<EvalRow> all;
  for (const auto& [system, path] : {std::pair{"hybrid", a.ckpt}, {"tts", a.tts_ckpt},
                                     {"vc", a.vc_ckpt}}) {
    if (path.empty()) continue;
    const Model model = model_from_checkpoint(load_checkpoint(path));
    const std::vector<EvalRow> rows = evaluate(model, system, corpus, modes_for(model.kind()), opts);
    write_eval_csv(fs::path(g.out) / ("eval_" + std::string(system) + ".csv"), rows);
    all.insert(all.end(), rows.begin(), rows.end());
  }
  const std::vector<EvalSummary> summary = summarize(all);
  write_summary_csv(fs::path(g.out) / "summary.csv", summary);

  std::printf("%-8s %-7s %6s %10s %12s\n", "system", "mode", "utts", "mean_l1", "diagonality");
  for (const EvalSummary& s : summary) {
    std::printf("%-8s %-7s %6zu %10.5f %12.4f\n", s.system.c_str(), s.mode.c_str(), s.count,
                s.mean_l1, s.mean_diagonality);
  }
  std::printf("bias-only baseline L1: %.5f\n", bias_baseline_l1(corpus));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-source sequence model: TTS, VC and both, through one decoder"};
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  app.add_option("--config", g.config, "key=value config file")->check(CLI::ExistingFile);
  app.add_option("--preset", g.preset, "built-in preset")->check(CLI::IsMember({"desk", "paper"}));
  app.add_option("--seed", g.seed, "random seed");
  app.add_option("--out", g.out, "output directory")->capture_default_str();
  app.add_option("--set", g.sets, "override one config key (key=value), repeatable");

  GendataArgs gd;
  CLI::App* gendata = app.add_subcommand("gendata", "generate the synthetic parallel corpus");
  gendata->add_option("--n", gd.n, "number of utterances");

  TrainArgs tr;
  CLI::App* train = app.add_subcommand("train", "run one training stage");
  train->add_option("--stage", tr.stage, "tts, vc, joint or adapt")
      ->required()
      ->check(CLI::IsMember({"tts", "vc", "joint", "adapt"}));
  train->add_option("--corpus", tr.corpus, "corpus directory (default: generate in memory)");
  train->add_option("--init-tts", tr.init_tts, "TTS checkpoint for joint initialization");
  train->add_option("--init-vc", tr.init_vc, "VC checkpoint for joint initialization");
  train->add_option("--init", tr.init, "checkpoint to fine-tune (adapt stage)");
  train->add_option("--resume", tr.resume, "continue a checkpoint of the same stage");

  RunArgs ru;
  CLI::App* run = app.add_subcommand("run", "synthesize or convert one utterance");
  run->add_option("--ckpt", ru.ckpt, "model checkpoint")->required();
  run->add_option("--mode", ru.mode, "tts, vc or hybrid")
      ->required()
      ->check(CLI::IsMember({"tts", "vc", "hybrid"}));
  run->add_option("--tokens", ru.tokens, "space-separated symbol ids");
  run->add_option("--mel", ru.mel, "source spectrogram (MEL1 file)");
  run->add_option("--output", ru.output, "output MEL1 path (default <out>/output.mel)");
  run->add_flag("--dump-align", ru.dump_align, "also write the attention weights as CSV");

  CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient checks");

  EvalArgs ev;
  CLI::App* eval = app.add_subcommand("eval", "objective comparison report");
  eval->add_option("--ckpt", ev.ckpt, "joint model checkpoint (all three modes)");
  eval->add_option("--tts-ckpt", ev.tts_ckpt, "stand-alone TTS checkpoint");
  eval->add_option("--vc-ckpt", ev.vc_ckpt, "stand-alone VC checkpoint");
  eval->add_option("--corpus", ev.corpus, "corpus directory (default: generate in memory)");
  eval->add_option("--limit", ev.limit, "evaluate only the first N utterances");

  try {
    app.parse(argc, argv);
    if (*gendata) return cmd_gendata(g, gd);
    if (*train) return cmd_train(g, tr);
    if (*run) return cmd_run(g, ru);
    if (*gradcheck) return cmd_gradcheck(g);
    if (*eval) return cmd_eval(g, ev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  } catch (const NumericError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const InputError& e) {
    std::cerr << "input error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return kExitUsage;
}
