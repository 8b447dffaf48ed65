// SPDX-License-Identifier: Apache-2.0
//
// Objective evaluation: free-running frame L1 against the target render and
// an attention diagonality score.

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "msq/data.hpp"
#include "msq/decoder.hpp"
#include "msq/model.hpp"

namespace msq {

/// Mean over steps k of the attention mass within max(0.15 L, 0.5) positions
/// of k L / n_steps, where L is the source length and n_steps = weights.size().
/// Throws InputError for an empty trace or a masked (all-zero) source.
double diagonality(const std::vector<Array>& weights);

/// Mean |a - b| over the first min(rows) rows.
double truncated_l1(const Array& a, const Array& b);

struct EvalRow {
  std::string system;  // checkpoint label, e.g. "joint"
  std::string mode;    // tts, vc or hybrid
  std::string utt_id;
  double l1 = 0.0;
  double diagonality = 0.0;
  std::size_t frames = 0;
};

struct EvalOptions {
  GenerateOptions gen;
  bool prenet_dropout = true;  // decoder pre-net dropout at generation time
  std::uint64_t seed = 1;      // per-utterance dropout seeds derive from this
};

/// Run modes map onto mask selections: tts, vc, hybrid.
MaskSelection mode_mask(const std::string& mode);
std::string mask_mode(MaskSelection mask);

/// Free-running decode of one utterance in one mode.
DecodeResult run_mode(const Model& model, const Utterance& u, MaskSelection mask,
                      const EvalOptions& opts, std::size_t utt_index);

/// One row per (mode, utterance), modes in the order given.
std::vector<EvalRow> evaluate(const Model& model, const std::string& system,
                              const Corpus& corpus, const std::vector<MaskSelection>& modes,
                              const EvalOptions& opts);

/// L1 of the best constant frame (per-band median of all target frames).
double bias_baseline_l1(const Corpus& corpus);

struct EvalSummary {
  std::string system, mode;
  std::size_t count = 0;
  double mean_l1 = 0.0;
  double mean_diagonality = 0.0;
};

std::vector<EvalSummary> summarize(const std::vector<EvalRow>& rows);

void write_eval_csv(const std::filesystem::path& path, const std::vector<EvalRow>& rows);
void write_summary_csv(const std::filesystem::path& path,
                       const std::vector<EvalSummary>& summary);
/// CSV with columns step, source, position, weight.
void write_alignment_csv(const std::filesystem::path& path, const AlignmentTrace& trace);

}  // namespace msq
