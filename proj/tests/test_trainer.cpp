#include <gtest/gtest.h>

#include "despeckle/checkpoint.hpp"
#include "despeckle/error.hpp"
#include "despeckle/synthetic.hpp"
#include "despeckle/trainer.hpp"

using namespace despeckle;

namespace {

TrainOptions small_options(int epochs, std::uint64_t seed = 4) {
  TrainOptions o;
  o.epochs = epochs;
  o.batch_size = 16;
  o.seed = seed;
  o.adam.lr = 1e-3;
  return o;
}

const PatchSet<float>& train_set() {
  static const auto s = synthetic_patches<float>(64, 32, 11);
  return s;
}
const PatchSet<float>& val_set() {
  static const auto s = synthetic_patches<float>(16, 32, 12);
  return s;
}

std::vector<float> flat_params(const Model<float>& m) {
  std::vector<float> out;
  for (const auto& p : m.parameters()) out.insert(out.end(), p.data().begin(), p.data().end());
  return out;
}

}  // namespace

TEST(Trainer, ZeroEpochsLeavesModelUnchanged) {
  Model<float> m({4, 8, 3, 1});
  const auto before = flat_params(m);
  Trainer<float> t(m, small_options(0));
  EXPECT_TRUE(t.fit(train_set(), val_set()).empty());
  EXPECT_EQ(flat_params(m), before);
}

TEST(Trainer, ValidationLossImprovesOnToyRun) {
  static const auto train = synthetic_patches<float>(256, 32, 21);
  static const auto val = synthetic_patches<float>(32, 32, 22);
  Model<float> m({4, 8, 3, 2});
  Trainer<float> t(m, small_options(8));
  const auto log = t.fit(train, val);
  ASSERT_EQ(log.size(), 8u);
  EXPECT_LT(log.back().val_mse, log.front().val_mse);
  for (const auto& r : log) EXPECT_TRUE(std::isfinite(r.train_total));
}

TEST(Trainer, SameSeedSameEpochOneLosses) {
  auto run = [] {
    Model<float> m({4, 8, 3, 3});
    Trainer<float> t(m, small_options(1));
    return t.fit(train_set(), val_set()).front();
  };
  const auto a = run(), b = run();
  EXPECT_EQ(a.val_mse, b.val_mse);
  EXPECT_EQ(a.val_kl, b.val_kl);
  EXPECT_EQ(a.val_edge, b.val_edge);
  EXPECT_EQ(a.train_total, b.train_total);
}

TEST(Trainer, ResumeMatchesUninterruptedRun) {
  Model<float> full({4, 8, 3, 5});
  Trainer<float> tf(full, small_options(3, 5));
  const auto log = tf.fit(train_set(), val_set());

  Model<float> part({4, 8, 3, 5});
  Trainer<float> tp(part, small_options(2, 5));
  tp.fit(train_set(), val_set());
  CheckpointMeta meta;
  meta.epoch = 2;
  const auto bytes = encode_checkpoint(part, &tp.adam_states(), meta);

  auto ck = decode_checkpoint<float>(bytes);
  Trainer<float> tr(ck.model, small_options(3, 5));
  tr.restore(*ck.adam, static_cast<int>(ck.meta.epoch));
  const auto rec = tr.run_epoch(train_set(), val_set());
  EXPECT_EQ(rec.epoch, 3);
  EXPECT_EQ(rec.train_total, log[2].train_total);
  EXPECT_EQ(rec.val_mse, log[2].val_mse);
  EXPECT_EQ(flat_params(ck.model), flat_params(full));
}

TEST(Trainer, DivergenceIsReported) {
  Model<float> m({4, 8, 3, 6});
  auto o = small_options(1);
  o.adam.lr = 1e30;
  Trainer<float> t(m, o);
  EXPECT_THROW(t.fit(train_set(), val_set()), DivergenceError);
}

TEST(Trainer, InvalidOptionsThrow) {
  Model<float> m({4, 8, 3, 6});
  auto o = small_options(1);
  o.batch_size = 0;
  EXPECT_THROW(Trainer<float>(m, o), ConfigError);
}

TEST(Trainer, BatchesCarrySeededSpeckle) {
  std::vector<std::size_t> idx{0, 1};
  std::vector<std::uint64_t> seeds{5, 6};
  Tensor<float> c1, n1, c2, n2;
  make_batch(val_set(), idx, seeds, 1, c1, n1);
  make_batch(val_set(), idx, seeds, 1, c2, n2);
  EXPECT_TRUE(std::equal(n1.data().begin(), n1.data().end(), n2.data().begin()));
  EXPECT_EQ(n1.shape(), (Shape{2, 1, 32, 32}));
}
