// SPDX-License-Identifier: Apache-2.0
//
// Staged training: stand-alone TTS and VC models, encoder transfer into the
// joint model, joint training under random masking, and fine-tuning.
//
// Determinism: every random choice (epoch order, per-utterance mask, per-
// utterance dropout seed) is drawn from one trainer RNG in a fixed order, and
// per-utterance gradients are summed in batch order, so the loss trace does
// not depend on the number of worker threads.

#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "msq/checkpoint.hpp"
#include "msq/config.hpp"
#include "msq/data.hpp"
#include "msq/model.hpp"
#include "msq/optim.hpp"
#include "msq/rng.hpp"

namespace msq {

struct LossRecord {
  std::size_t step = 0;  // 1-based within the stage
  std::string stage;
  double loss = 0.0;
  double lr = 0.0;
};

/// Worker threads for gradient computation: MSQ_THREADS if set, else the
/// hardware concurrency, never more than `cap`.
std::size_t worker_threads(std::size_t cap);

/// Throws InputError naming the first utterance that lacks an input the
/// model kind needs (text for TTS, source for VC, both for joint).
void check_corpus(const Corpus& corpus, ModelKind kind);

class Trainer {
 public:
  /// `lr_scale` multiplies the schedule (fine-tuning uses 1 / divisor).
  Trainer(Model& model, const Corpus& corpus, const RunConfig& cfg, std::string stage,
          double lr_scale = 1.0);

  /// One optimizer step over the next batch.
  LossRecord step();

  std::size_t steps_done() const { return step_; }
  const std::string& stage() const { return stage_; }
  AdamState& optimizer() { return opt_; }
  const AdamState& optimizer() const { return opt_; }

  /// Mean utterance loss of each completed epoch, and of the one in progress.
  std::vector<double> epoch_means() const;

  /// Full training state: model, optimizer moments, RNG, data cursor.
  Checkpoint checkpoint() const;
  /// Continues from a checkpoint written by checkpoint() for this stage.
  void restore(const Checkpoint& ckpt);

 private:
  void next_epoch();

  Model& model_;
  const Corpus& corpus_;
  RunConfig cfg_;
  std::string stage_;
  double lr_scale_;
  AdamState opt_;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  std::size_t epoch_ = 0;
  std::size_t step_ = 0;
  std::vector<double> epoch_sum_;
  std::vector<std::size_t> epoch_count_;
  std::vector<GradBuffer> buffers_;
};

// --- checkpoints of models -----------------------------------------------------------

/// Parameters as blobs plus the config snapshot and model kind.
Checkpoint model_checkpoint(const Model& model, const RunConfig& cfg);
/// Rebuilds the model recorded in `ckpt`; its config is returned via `cfg`.
Model model_from_checkpoint(const Checkpoint& ckpt, RunConfig* cfg = nullptr);
ModelKind checkpoint_kind(const Checkpoint& ckpt);
/// Copies every blob named like a parameter of `model` whose name starts with
/// `prefix`. Throws naming the first missing or mis-shaped blob.
void copy_params(Model& model, const Checkpoint& from, const std::string& prefix);

// --- stages ------------------------------------------------------------------------

struct StageOptions {
  std::filesystem::path out_dir;  // empty: write nothing
  std::function<void(const LossRecord&)> on_step;
  const Checkpoint* resume = nullptr;  // continue a previously saved stage
};

struct StageReport {
  std::string stage;
  std::vector<LossRecord> trace;
  std::vector<double> epoch_means;
  double wall_seconds = 0.0;
  double pre_loss = 0.0;   // teacher-forced corpus loss before training
  double post_loss = 0.0;  // and after
};

struct StageResult {
  Model model;
  Checkpoint checkpoint;
  StageReport report;
};

/// Mean teacher-forced loss over the corpus, dropout off, in the model's
/// native mask (both sources for a joint model).
double corpus_loss(const Model& model, const Corpus& corpus);

StageResult train_standalone_tts(const Corpus& corpus, const RunConfig& cfg,
                                 const StageOptions& opts = {});
StageResult train_standalone_vc(const Corpus& corpus, const RunConfig& cfg,
                                const StageOptions& opts = {});
/// Fresh joint model whose text encoder comes from `tts` and speech encoder
/// from `vc`; with train.transfer_decoder the TTS decoder is copied as well.
Model init_joint(const Checkpoint& tts, const Checkpoint& vc, const RunConfig& cfg);
StageResult train_joint(Model model, const Corpus& corpus, const RunConfig& cfg,
                        const StageOptions& opts = {});
/// Continues training every parameter at peak_lr / train.adapt_lr_divisor,
/// keeping the optimizer moments stored in `ckpt`.
StageResult adapt_finetune(const Checkpoint& ckpt, const Corpus& corpus, const RunConfig& cfg,
                           const StageOptions& opts = {});

void write_loss_csv(const std::filesystem::path& path, const std::vector<LossRecord>& trace,
                    bool append = false);

}  // namespace msq
