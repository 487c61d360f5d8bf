#include <gtest/gtest.h>

#include <filesystem>

#include "despeckle/checkpoint.hpp"
#include "despeckle/error.hpp"
#include "despeckle/synthetic.hpp"
#include "despeckle/trainer.hpp"
#include "support.hpp"

using namespace despeckle;
namespace fs = std::filesystem;

namespace {

Model<float> trained_model(std::uint64_t seed, std::vector<AdamState<float>>* adam = nullptr) {
  Model<float> m({4, 8, 3, seed});
  TrainOptions o;
  o.epochs = 1;
  o.batch_size = 8;
  o.seed = seed;
  Trainer<float> t(m, o);
  const auto train = synthetic_patches<float>(16, 32, seed);
  const auto val = synthetic_patches<float>(8, 32, seed + 100);
  t.fit(train, val);
  if (adam) *adam = t.adam_states();
  return m;
}

}  // namespace

TEST(Checkpoint, RoundTripForwardIsBitwise) {
  std::vector<AdamState<float>> adam;
  Model<float> m = trained_model(1, &adam);
  CheckpointMeta meta;
  meta.epoch = 1;
  meta.rng_seed = 1;
  meta.divisor = 123.5;
  const auto path = fs::temp_directory_path() / "despeckle_test_ck.dspk";
  save_checkpoint(path, m, &adam, meta);
  const auto back = load_checkpoint<float>(path);
  EXPECT_EQ(back.model.config(), m.config());
  EXPECT_EQ(back.meta.epoch, 1u);
  EXPECT_EQ(back.meta.divisor, 123.5);
  ASSERT_TRUE(back.adam.has_value());
  EXPECT_EQ((*back.adam)[0].t, adam[0].t);
  EXPECT_EQ((*back.adam)[3].v, adam[3].v);
  Rng rng(2);
  const auto x = testing_support::uniform_tensor<float>({2, 1, 16, 16}, rng, 0, 1);
  const auto a = m.infer(x), b = back.model.infer(x);
  EXPECT_TRUE(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
}

TEST(Checkpoint, EncodingIsDeterministic) {
  Model<float> m = trained_model(3);
  EXPECT_EQ(encode_checkpoint<float>(m, nullptr, CheckpointMeta{}), encode_checkpoint<float>(m, nullptr, CheckpointMeta{}));
  const auto back = decode_checkpoint<float>(encode_checkpoint<float>(m, nullptr, CheckpointMeta{}));
  EXPECT_FALSE(back.adam.has_value());
}

TEST(Checkpoint, FlippedMagicIsFormatError) {
  auto bytes = encode_checkpoint<float>(Model<float>({3, 2, 3, 0}), nullptr, CheckpointMeta{});
  bytes[0] ^= 0x01;
  EXPECT_THROW(decode_checkpoint<float>(bytes), FormatError);
}

TEST(Checkpoint, WrongVersionIsFormatError) {
  auto bytes = encode_checkpoint<float>(Model<float>({3, 2, 3, 0}), nullptr, CheckpointMeta{});
  bytes[4] = 99;
  EXPECT_THROW(decode_checkpoint<float>(bytes), FormatError);
}

TEST(Checkpoint, TruncatedPayloadIsLengthError) {
  auto bytes = encode_checkpoint<float>(Model<float>({3, 2, 3, 0}), nullptr, CheckpointMeta{});
  bytes.resize(bytes.size() - 5);
  EXPECT_THROW(decode_checkpoint<float>(bytes), LengthError);
  bytes.resize(6);
  EXPECT_THROW(decode_checkpoint<float>(bytes), LengthError);
}

TEST(Checkpoint, MissingFileIsDataError) {
  EXPECT_THROW(load_checkpoint<float>("/nonexistent/x.dspk"), DataError);
}
