// SPDX-License-Identifier: Apache-2.0

#include "msq/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include "msq/error.hpp"
#include "msq/rng.hpp"

namespace msq {

double diagonality(const std::vector<Array>& weights) {
  if (weights.empty()) throw InputError("diagonality: empty alignment trace");
  const std::size_t n = weights.size();
  const std::size_t L = weights.front().size();
  if (L == 0) throw InputError("diagonality: source absent");
  const double half = std::max(0.15 * static_cast<double>(L), 0.5);
  double mass_total = 0.0, score = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const Array& w = weights[k];
    if (w.size() != L) throw DimensionError("diagonality: ragged trace");
    const double ideal = static_cast<double>(k) * static_cast<double>(L) / static_cast<double>(n);
    double in_band = 0.0;
    for (std::size_t j = 0; j < L; ++j) {
      mass_total += w[j];
      if (std::abs(static_cast<double>(j) - ideal) <= half) in_band += w[j];
    }
    score += in_band;
  }
  if (mass_total == 0.0) throw InputError("diagonality: source is masked");
  return std::clamp(score / static_cast<double>(n), 0.0, 1.0);
}

double truncated_l1(const Array& a, const Array& b) {
  if (a.cols() != b.cols()) {
    throw DimensionError("truncated_l1: " + a.shape_string() + " vs " + b.shape_string());
  }
  const std::size_t n = std::min(a.rows(), b.rows()) * a.cols();
  if (n == 0) throw InputError("truncated_l1: empty input");
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += std::abs(a[i] - b[i]);
  return s / static_cast<double>(n);
}

MaskSelection mode_mask(const std::string& mode) {
  if (mode == "tts") return MaskSelection::TextOnly;
  if (mode == "vc") return MaskSelection::SpeechOnly;
  if (mode == "hybrid") return MaskSelection::Both;
  throw ConfigError("unknown mode '" + mode + "' (expected tts, vc or hybrid)");
}

std::string mask_mode(MaskSelection mask) {
  switch (mask) {
    case MaskSelection::TextOnly:
      return "tts";
    case MaskSelection::SpeechOnly:
      return "vc";
    case MaskSelection::Both:
      break;
  }
  return "hybrid";
}

DecodeResult run_mode(const Model& model, const Utterance& u, MaskSelection mask,
                      const EvalOptions& opts, std::size_t utt_index) {
  // Each utterance gets its own dropout stream so results do not depend on
  // evaluation order.
  Rng rng(opts.seed * 1000003ULL + utt_index);
  return synthesize(model, u.tokens, u.has_source() ? &u.source : nullptr, mask, opts.gen,
                    opts.prenet_dropout ? &rng : nullptr);
}

std::vector<EvalRow> evaluate(const Model& model, const std::string& system,
                              const Corpus& corpus, const std::vector<MaskSelection>& modes,
                              const EvalOptions& opts) {
  std::vector<EvalRow> rows;
  for (MaskSelection mask : modes) {
    for (std::size_t i = 0; i < corpus.size(); ++i) {
      const Utterance& u = corpus[i];
      DecodeResult r = run_mode(model, u, mask, opts, i);
      EvalRow row{system, mask_mode(mask), u.id, truncated_l1(r.frames, u.target), 0.0,
                  r.frames.rows()};
      double d = 0.0;
      int active = 0;
      if (uses_text(mask)) {
        d += diagonality(r.trace.text);
        ++active;
      }
      if (uses_speech(mask)) {
        d += diagonality(r.trace.speech);
        ++active;
      }
      row.diagonality = d / active;
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

double bias_baseline_l1(const Corpus& corpus) {
  if (corpus.empty()) throw InputError("bias baseline: empty corpus");
  const std::size_t bands = corpus.front().target.cols();
  std::vector<std::vector<double>> per_band(bands);
  for (const Utterance& u : corpus) {
    for (std::size_t t = 0; t < u.target.rows(); ++t) {
      for (std::size_t m = 0; m < bands; ++m) per_band[m].push_back(u.target(t, m));
    }
  }
  Array frame({bands});
  for (std::size_t m = 0; m < bands; ++m) {
    std::vector<double>& v = per_band[m];
    std::nth_element(v.begin(), v.begin() + static_cast<long>(v.size() / 2), v.end());
    frame[m] = v[v.size() / 2];
  }
  double total = 0.0;
  for (const Utterance& u : corpus) {
    Array pred(u.target.shape());
    for (std::size_t t = 0; t < pred.rows(); ++t) pred.set_row(t, frame.values());
    total += truncated_l1(pred, u.target);
  }
  return total / static_cast<double>(corpus.size());
}

std::vector<EvalSummary> summarize(const std::vector<EvalRow>& rows) {
  std::vector<EvalSummary> out;
  for (const EvalRow& r : rows) {
    auto it = std::find_if(out.begin(), out.end(), [&](const EvalSummary& s) {
      return s.system == r.system && s.mode == r.mode;
    });
    if (it == out.end()) {
      out.push_back({r.system, r.mode, 0, 0.0, 0.0});
      it = out.end() - 1;
    }
    ++it->count;
    it->mean_l1 += r.l1;
    it->mean_diagonality += r.diagonality;
  }
  for (EvalSummary& s : out) {
    s.mean_l1 /= static_cast<double>(s.count);
    s.mean_diagonality /= static_cast<double>(s.count);
  }
  return out;
}

namespace {

std::ofstream open_csv(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw InputError("cannot write " + path.string());
  out.precision(9);
  return out;
}

}  // namespace

void write_eval_csv(const std::filesystem::path& path, const std::vector<EvalRow>& rows) {
  std::ofstream out = open_csv(path);
  out << "mode,utt_id,l1,diagonality\n";
  for (const EvalRow& r : rows) {
    out << r.mode << ',' << r.utt_id << ',' << r.l1 << ',' << r.diagonality << '\n';
  }
}

void write_summary_csv(const std::filesystem::path& path,
                       const std::vector<EvalSummary>& summary) {
  std::ofstream out = open_csv(path);
  out << "system,mode,utterances,mean_l1,mean_diagonality\n";
  for (const EvalSummary& s : summary) {
    out << s.system << ',' << s.mode << ',' << s.count << ',' << s.mean_l1 << ','
        << s.mean_diagonality << '\n';
  }
}

void write_alignment_csv(const std::filesystem::path& path, const AlignmentTrace& trace) {
  std::ofstream out = open_csv(path);
  out << "step,source,position,weight\n";
  auto dump = [&](const std::vector<Array>& steps, char src) {
    for (std::size_t k = 0; k < steps.size(); ++k) {
      for (std::size_t j = 0; j < steps[k].size(); ++j) {
        out << k << ',' << src << ',' << j << ',' << steps[k][j] << '\n';
      }
    }
  };
  if (uses_text(trace.mask)) dump(trace.text, 't');
  if (uses_speech(trace.mask)) dump(trace.speech, 'v');
}

}  // namespace msq
