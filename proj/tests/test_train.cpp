// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "msq/error.hpp"
#include "msq/loss.hpp"
#include "msq/train.hpp"

namespace fs = std::filesystem;
using namespace msq;

namespace {

RunConfig tiny_config() {
  RunConfig c = RunConfig::desk();
  for (const auto& [k, v] : std::vector<std::pair<std::string, std::string>>{
           {"enc.d_embed", "6"},      {"enc.d_prenet", "6"},     {"enc.bank_k", "2"},
           {"enc.conv_channels", "4"}, {"enc.highway_layers", "1"}, {"enc.d_gru", "4"},
           {"dec.d_attn_rnn", "8"},   {"dec.d_dec_rnn", "8"},    {"dec.d_prenet", "6"},
           {"model.n_mels", "8"},     {"data.n_utts", "4"},      {"data.min_len", "2"},
           {"data.max_len", "4"},     {"train.batch_size", "2"}, {"train.steps", "6"},
           {"train.warmup_steps", "20"}, {"train.checkpoint_interval", "0"}}) {
    c.set(k, v);
  }
  return c;
}

Corpus corpus_for(const RunConfig& cfg) { return gen_corpus(cfg.toy_spec(), cfg.data); }

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("msq_test_train_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void expect_same_trace(const std::vector<LossRecord>& a, const std::vector<LossRecord>& b) {
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].step, b[i].step);
    EXPECT_EQ(a[i].loss, b[i].loss) << "step " << a[i].step;
    EXPECT_EQ(a[i].lr, b[i].lr);
  }
}

bool same_blobs(const Checkpoint& a, const Checkpoint& b, const std::string& prefix) {
  std::size_t n = 0;
  for (const Blob& x : a.blobs) {
    if (x.name.rfind(prefix, 0) != 0) continue;
    const Blob* y = b.find(x.name);
    if (y == nullptr || !(y->value == x.value)) return false;
    ++n;
  }
  return n > 0;
}

class ThreadsEnv {
 public:
  explicit ThreadsEnv(const char* n) { setenv("MSQ_THREADS", n, 1); }
  ~ThreadsEnv() { unsetenv("MSQ_THREADS"); }
};

}  // namespace

TEST(Loss, EqualIsZeroOffsetIsOne) {
  Array y({3, 2});
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = 0.3 * static_cast<double>(i);
  EXPECT_EQ(l1_loss(y, y, 3), 0.0);
  Array p = y;
  for (double& v : p.values()) v += 1.0;
  EXPECT_DOUBLE_EQ(l1_loss(p, y, 3), 1.0);
  p = y;
  p(2, 0) = 100.0;
  EXPECT_EQ(l1_loss(p, y, 2), 0.0);
}

TEST(Train, OverfitsOneUtterance) {
  RunConfig cfg = RunConfig::desk();
  cfg.train.steps = 300;
  cfg.train.checkpoint_interval = 0;
  cfg.data.n_utts = 1;
  const Corpus one = corpus_for(cfg);
  StageResult r = train_standalone_tts(one, cfg);
  EXPECT_LT(r.report.post_loss, 0.1 * r.report.pre_loss)
      << "pre " << r.report.pre_loss << " post " << r.report.post_loss;
}

TEST(Train, SameSeedSameTrace) {
  const RunConfig cfg = tiny_config();
  const Corpus c = corpus_for(cfg);
  StageResult a = train_standalone_tts(c, cfg);
  StageResult b = train_standalone_tts(c, cfg);
  expect_same_trace(a.report.trace, b.report.trace);
  EXPECT_EQ(encode_checkpoint(a.checkpoint), encode_checkpoint(b.checkpoint));
}

TEST(Train, ThreadCountDoesNotChangeTrace) {
  RunConfig cfg = tiny_config();
  cfg.train.batch_size = 3;
  const Corpus c = corpus_for(cfg);
  std::vector<LossRecord> one, three;
  {
    ThreadsEnv env("1");
    one = train_joint(init_joint(train_standalone_tts(c, cfg).checkpoint,
                                 train_standalone_vc(c, cfg).checkpoint, cfg),
                      c, cfg)
              .report.trace;
  }
  {
    ThreadsEnv env("3");
    three = train_joint(init_joint(train_standalone_tts(c, cfg).checkpoint,
                                   train_standalone_vc(c, cfg).checkpoint, cfg),
                        c, cfg)
                .report.trace;
  }
  expect_same_trace(one, three);
}

TEST(Train, DifferentSeedDifferentTrace) {
  RunConfig cfg = tiny_config();
  const Corpus c = corpus_for(cfg);
  const double a = train_standalone_tts(c, cfg).report.trace.back().loss;
  cfg.seed = 2;
  EXPECT_NE(a, train_standalone_tts(c, cfg).report.trace.back().loss);
}

TEST(Train, InputKindsChecked) {
  const RunConfig cfg = tiny_config();
  Corpus speech_only = corpus_for(cfg);
  for (Utterance& u : speech_only) u.tokens.clear();
  try {
    train_standalone_tts(speech_only, cfg);
    FAIL() << "expected InputError";
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("utt0000"), std::string::npos) << e.what();
  }
  EXPECT_NO_THROW(train_standalone_vc(speech_only, cfg));

  Corpus text_only = corpus_for(cfg);
  text_only[2].source = Array();
  EXPECT_THROW(train_standalone_vc(text_only, cfg), InputError);
  EXPECT_THROW(train_joint(Model([&] {
                             ModelConfig m = cfg.model;
                             m.kind = ModelKind::Joint;
                             return m;
                           }()),
                           text_only, cfg),
               InputError);
  EXPECT_THROW(train_standalone_tts({}, cfg), InputError);
}

TEST(Train, SingleSourceSpeakerAccepted) {
  RunConfig cfg = tiny_config();
  cfg.data.sources = {"source1"};
  const Corpus c = corpus_for(cfg);
  for (const Utterance& u : c) EXPECT_EQ(u.source_speaker, "source1");
  EXPECT_NO_THROW(train_standalone_vc(c, cfg));
}

TEST(Train, VcLossDecreasesOnSixtyFourPairs) {
  RunConfig cfg = tiny_config();
  cfg.data.n_utts = 64;
  cfg.train.steps = 60;
  cfg.train.batch_size = 4;
  const StageResult r = train_standalone_vc(corpus_for(cfg), cfg);
  EXPECT_LT(r.report.post_loss, r.report.pre_loss);
}

TEST(Train, IdentityPairsConvergeFastest) {
  RunConfig cfg = RunConfig::desk();
  cfg.train.steps = 200;
  cfg.train.batch_size = 4;
  cfg.train.checkpoint_interval = 0;
  cfg.data.n_utts = 8;
  const Corpus vc = corpus_for(cfg);
  Corpus identity = vc;
  for (Utterance& u : identity) {
    u.source = u.target;
    u.source_speaker = "target";
  }
  const StageResult a = train_standalone_vc(identity, cfg);
  const StageResult b = train_standalone_vc(vc, cfg);
  const StageResult t = train_standalone_tts(vc, cfg);
  const double ra = a.report.post_loss / a.report.pre_loss;
  EXPECT_LT(ra, b.report.post_loss / b.report.pre_loss);
  EXPECT_LT(ra, t.report.post_loss / t.report.pre_loss);
}

TEST(Train, TextOnlyPolicyLeavesSpeechEncoderUntouched) {
  RunConfig cfg = tiny_config();
  cfg.train.steps = 1;
  cfg.mask = {1.0, 0.0, 0.0};
  const Corpus c = corpus_for(cfg);
  Model joint = init_joint(train_standalone_tts(c, cfg).checkpoint,
                           train_standalone_vc(c, cfg).checkpoint, cfg);
  const Checkpoint before = model_checkpoint(joint, cfg);
  StageResult r = train_joint(std::move(joint), c, cfg);
  EXPECT_TRUE(same_blobs(before, r.checkpoint, "enc_speech/"));
  EXPECT_FALSE(same_blobs(before, r.checkpoint, "enc_text/"));
  EXPECT_FALSE(same_blobs(before, r.checkpoint, "dec/"));
}

TEST(Train, ResumeContinuesIdenticalTrace) {
  RunConfig cfg = tiny_config();
  cfg.train.steps = 7;
  const Corpus c = corpus_for(cfg);  // 4 utterances, batch 2: resumes mid-epoch
  StageResult full = train_standalone_tts(c, cfg);

  RunConfig first = cfg;
  first.train.steps = 3;
  StageResult part = train_standalone_tts(c, first);
  const Checkpoint saved = decode_checkpoint(encode_checkpoint(part.checkpoint), "mem");
  StageOptions opts;
  opts.resume = &saved;
  StageResult rest = train_standalone_tts(c, cfg, opts);

  std::vector<LossRecord> joined = part.report.trace;
  joined.insert(joined.end(), rest.report.trace.begin(), rest.report.trace.end());
  expect_same_trace(joined, full.report.trace);
  EXPECT_EQ(encode_checkpoint(rest.checkpoint), encode_checkpoint(full.checkpoint));
  EXPECT_EQ(rest.report.epoch_means, full.report.epoch_means);
}

TEST(Train, ResumeRejectsOtherStage) {
  const RunConfig cfg = tiny_config();
  const Corpus c = corpus_for(cfg);
  const Checkpoint vc = train_standalone_vc(c, cfg).checkpoint;
  StageOptions opts;
  opts.resume = &vc;
  EXPECT_THROW(train_standalone_tts(c, cfg, opts), InputError);
}

TEST(Train, WritesCheckpointsAndLossCsv) {
  RunConfig cfg = tiny_config();
  cfg.train.checkpoint_interval = 2;
  const fs::path dir = scratch("files");
  StageOptions opts;
  opts.out_dir = dir;
  StageResult r = train_standalone_tts(corpus_for(cfg), cfg, opts);
  const std::string csv = slurp(dir / "tts_loss.csv");
  EXPECT_EQ(csv.rfind("step,stage,loss,lr\n1,tts,", 0), 0u) << csv;
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 7);
  const Checkpoint back = load_checkpoint(dir / "tts.ckpt");
  EXPECT_EQ(encode_checkpoint(back), encode_checkpoint(r.checkpoint));
  EXPECT_EQ(back.meta_at("state.step"), "6");
}

TEST(Checkpoints, ModelRoundTrip) {
  const RunConfig cfg = tiny_config();
  const Corpus c = corpus_for(cfg);
  StageResult r = train_standalone_vc(c, cfg);
  RunConfig restored_cfg;
  Model m = model_from_checkpoint(r.checkpoint, &restored_cfg);
  EXPECT_EQ(m.kind(), ModelKind::Vc);
  EXPECT_EQ(restored_cfg.snapshot(), cfg.snapshot());
  EXPECT_EQ(corpus_loss(m, c), corpus_loss(r.model, c));
  Checkpoint again = model_checkpoint(m, restored_cfg);
  EXPECT_TRUE(same_blobs(again, r.checkpoint, ""));
}

TEST(InitJoint, CopiesEncodersOnly) {
  const RunConfig cfg = tiny_config();
  const Corpus c = corpus_for(cfg);
  const Checkpoint tts = train_standalone_tts(c, cfg).checkpoint;
  const Checkpoint vc = train_standalone_vc(c, cfg).checkpoint;
  const Checkpoint joint = model_checkpoint(init_joint(tts, vc, cfg), cfg);
  EXPECT_TRUE(same_blobs(tts, joint, "enc_text/"));
  EXPECT_TRUE(same_blobs(vc, joint, "enc_speech/"));
  for (const Blob& b : joint.blobs) {
    if (b.name.rfind("enc_", 0) == 0) continue;
    for (const Checkpoint* src : {&tts, &vc}) {
      const Blob* s = src->find(b.name);
      if (s != nullptr && s->value.shape() == b.value.shape()) {
        // Zero-initialized biases legitimately coincide.
        bool all_zero = true;
        for (double v : b.value.values()) all_zero = all_zero && v == 0.0;
        if (!all_zero) EXPECT_FALSE(s->value == b.value) << b.name;
      }
    }
  }
  EXPECT_EQ(checkpoint_kind(joint), ModelKind::Joint);
}

TEST(InitJoint, OptionalDecoderTransfer) {
  RunConfig cfg = tiny_config();
  cfg.train.transfer_decoder = true;
  const Corpus c = corpus_for(cfg);
  const Checkpoint tts = train_standalone_tts(c, cfg).checkpoint;
  const Checkpoint vc = train_standalone_vc(c, cfg).checkpoint;
  const Checkpoint joint = model_checkpoint(init_joint(tts, vc, cfg), cfg);
  EXPECT_TRUE(same_blobs(tts, joint, "dec/"));
  EXPECT_TRUE(same_blobs(tts, joint, "att_text/"));
}

TEST(InitJoint, MismatchedWidthNamesBlob) {
  const RunConfig cfg = tiny_config();
  const Corpus c = corpus_for(cfg);
  RunConfig wide = cfg;
  wide.set("enc.d_gru", "5");
  const Checkpoint tts = train_standalone_tts(c, cfg).checkpoint;
  const Checkpoint vc = train_standalone_vc(c, wide).checkpoint;
  try {
    init_joint(tts, vc, cfg);
    FAIL() << "expected a shape error";
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("enc_speech/"), std::string::npos) << e.what();
  }
  EXPECT_THROW(init_joint(vc, tts, cfg), InputError);
}

TEST(Adapt, ZeroStepsKeepsParameters) {
  RunConfig cfg = tiny_config();
  const Corpus c = corpus_for(cfg);
  const Checkpoint base = train_standalone_tts(c, cfg).checkpoint;
  cfg.train.steps = 0;
  const StageResult r = adapt_finetune(base, c, cfg);
  EXPECT_EQ(r.report.trace.size(), 0u);
  ASSERT_EQ(r.checkpoint.blobs.size(), base.blobs.size());
  for (const Blob& b : base.blobs) EXPECT_TRUE(r.checkpoint.at(b.name).value == b.value) << b.name;
  EXPECT_EQ(r.checkpoint.meta_at("state.adam_step"), base.meta_at("state.adam_step"));
}

TEST(Adapt, RejectsDifferentArchitecture) {
  RunConfig cfg = tiny_config();
  const Corpus c = corpus_for(cfg);
  const Checkpoint base = train_standalone_tts(c, cfg).checkpoint;
  cfg.set("dec.d_dec_rnn", "9");
  EXPECT_THROW(adapt_finetune(base, c, cfg), ConfigError);
}

TEST(Adapt, UsesReducedLearningRate) {
  RunConfig cfg = tiny_config();
  const Corpus c = corpus_for(cfg);
  const Checkpoint base = train_standalone_tts(c, cfg).checkpoint;
  cfg.train.steps = 1;
  const StageResult r = adapt_finetune(base, c, cfg);
  EXPECT_DOUBLE_EQ(r.report.trace[0].lr, noam_lr(7, cfg.train.lr) / 5.0);
}

TEST(Adapt, SecondSpeakerLossDrops) {
  RunConfig cfg = tiny_config();
  cfg.train.steps = 150;
  const Corpus a = corpus_for(cfg);
  const Checkpoint base = train_standalone_tts(a, cfg).checkpoint;
  RunConfig b_cfg = cfg;
  b_cfg.data.target = "target_b";
  b_cfg.data.seed = 7;
  b_cfg.train.steps = 60;
  const Corpus b = corpus_for(b_cfg);
  const StageResult r = adapt_finetune(base, b, b_cfg);
  EXPECT_LT(r.report.post_loss, r.report.pre_loss);
}

TEST(Adapt, SameCorpusStaysStable) {
  RunConfig cfg = tiny_config();
  cfg.train.steps = 200;
  const Corpus a = corpus_for(cfg);
  const Checkpoint base = train_standalone_tts(a, cfg).checkpoint;
  cfg.train.steps = 50;
  const StageResult r = adapt_finetune(base, a, cfg);
  EXPECT_LE(r.report.post_loss, 1.05 * r.report.pre_loss);
}
