#include <cstring>
#include <filesystem>

#include <gtest/gtest.h>

#include "msin/checkpoint.hpp"
#include "msin/model_check.hpp"

namespace {

msin::Checkpoint make_checkpoint(msin::Variant v, std::uint64_t seed = 1) {
  msin::Checkpoint ck;
  ck.model = msin::tiny_config(v);
  ck.train.seed = seed;
  ck.meta = {{"step", 12}, {"metric", 0.125}, {"vocab", {"a", "b"}}};
  auto rng = msin::make_stream(seed, "init");
  ck.params = msin::init_params(ck.model, rng);
  return ck;
}

std::size_t find_bytes(const std::vector<unsigned char>& hay, const std::string& needle) {
  auto it = std::search(hay.begin(), hay.end(), needle.begin(), needle.end());
  return std::size_t(it - hay.begin());
}

TEST(Checkpoint, RoundTripIsBitExact) {
  for (auto v : {msin::Variant::kMsin, msin::Variant::kLstmWo, msin::Variant::kLstmPar}) {
    auto ck = make_checkpoint(v);
    const auto bytes = msin::checkpoint_bytes(ck);
    auto back = msin::parse_checkpoint(bytes);
    auto a = ck.params.slots(), b = back.params.slots();
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      EXPECT_EQ(a[i].name, b[i].name);
      ASSERT_EQ(a[i].tensor->shape(), b[i].tensor->shape());
      EXPECT_EQ(std::memcmp(a[i].tensor->data(), b[i].tensor->data(), 4 * a[i].tensor->numel()), 0)
          << a[i].name;
    }
    EXPECT_EQ(back.meta, ck.meta);
    EXPECT_EQ(back.train.seed, ck.train.seed);
    EXPECT_EQ(msin::checkpoint_bytes(back), bytes);
  }
}

TEST(Checkpoint, FileDoubleRoundTrip) {
  auto dir = std::filesystem::temp_directory_path() / "msin_ck_test";
  std::filesystem::create_directories(dir);
  auto ck = make_checkpoint(msin::Variant::kMsin);
  ck.params.cell.b_a[0] = -0.0f;
  const auto p1 = (dir / "a.msn").string(), p2 = (dir / "b.msn").string();
  msin::save_checkpoint(ck, p1);
  auto loaded = msin::load_checkpoint(p1);
  msin::save_checkpoint(loaded, p2);
  EXPECT_EQ(msin::read_bytes(p1), msin::read_bytes(p2));
  EXPECT_TRUE(std::signbit(loaded.params.cell.b_a[0]));
  std::filesystem::remove_all(dir);
}

TEST(Checkpoint, HeaderLayout) {
  auto ck = make_checkpoint(msin::Variant::kLstmWo);
  const auto bytes = msin::checkpoint_bytes(ck);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "MSN1");
  EXPECT_EQ(bytes[4], 1);
  EXPECT_EQ(bytes[5] | bytes[6] | bytes[7], 0);
  const std::uint32_t json_len = bytes[8] | bytes[9] << 8 | bytes[10] << 16 | bytes[11] << 24;
  auto header = nlohmann::json::parse(std::string(bytes.begin() + 12, bytes.begin() + 12 + json_len));
  EXPECT_EQ(header["model"]["variant"], "lstm_wo");
  const std::size_t at = 12 + json_len;
  const std::uint32_t count = bytes[at] | bytes[at + 1] << 8;
  EXPECT_EQ(count, ck.params.slots().size());
  // The first record is the embedding table: name, rank 2, dims V x d_w.
  const std::uint16_t name_len = bytes[at + 4] | bytes[at + 5] << 8;
  EXPECT_EQ(std::string(bytes.begin() + at + 6, bytes.begin() + at + 6 + name_len), "embedding.table");
  const std::size_t r = at + 6 + name_len;
  EXPECT_EQ(bytes[r], 2);
  EXPECT_EQ(bytes[r + 1], 20);
  EXPECT_EQ(bytes[r + 5], 5);
  std::size_t payload = 4 + 4 + 4 + json_len + 4;
  for (auto& s : ck.params.slots())
    payload += 2 + s.name.size() + 1 + 4 * s.tensor->rank() + 4 * s.tensor->numel();
  EXPECT_EQ(bytes.size(), payload);
}

TEST(Checkpoint, CorruptMagicRejected) {
  auto ck = make_checkpoint(msin::Variant::kMsin);
  auto bytes = msin::checkpoint_bytes(ck);
  bytes[0] = 'X';
  try {
    msin::parse_checkpoint(bytes);
    FAIL();
  } catch (const msin::CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("magic"), std::string::npos);
  }
}

TEST(Checkpoint, VersionMismatchRejected) {
  auto ck = make_checkpoint(msin::Variant::kMsin);
  auto bytes = msin::checkpoint_bytes(ck);
  bytes[4] = 2;
  EXPECT_THROW(msin::parse_checkpoint(bytes), msin::CheckpointError);
}

TEST(Checkpoint, TruncationRejectedAtEveryCut) {
  auto ck = make_checkpoint(msin::Variant::kLstmPar);
  const auto bytes = msin::checkpoint_bytes(ck);
  for (std::size_t cut = 0; cut < bytes.size(); cut += 97) {
    std::vector<unsigned char> part(bytes.begin(), bytes.begin() + cut);
    EXPECT_THROW(msin::parse_checkpoint(part), msin::CheckpointError) << cut;
  }
  std::vector<unsigned char> last(bytes.begin(), bytes.end() - 1);
  try {
    msin::parse_checkpoint(last);
    FAIL();
  } catch (const msin::CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("head.b"), std::string::npos) << e.what();
  }
  auto extra = bytes;
  extra.push_back(0);
  EXPECT_THROW(msin::parse_checkpoint(extra), msin::CheckpointError);
}

TEST(Checkpoint, UnknownTensorNamed) {
  auto ck = make_checkpoint(msin::Variant::kMsin);
  auto bytes = msin::checkpoint_bytes(ck);
  const auto at = find_bytes(bytes, "head.w");
  ASSERT_LT(at, bytes.size());
  bytes[at + 5] = 'x';
  try {
    msin::parse_checkpoint(bytes);
    FAIL();
  } catch (const msin::CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("head.x"), std::string::npos) << e.what();
  }
}

TEST(Checkpoint, ShapeAndConfigMismatchRejected) {
  auto ck = make_checkpoint(msin::Variant::kMsin);
  ck.params.head_w = msin::Tensor::zeros({1, 3}, true);
  try {
    msin::parse_checkpoint(msin::checkpoint_bytes(ck));
    FAIL();
  } catch (const msin::CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("head.w"), std::string::npos) << e.what();
  }
  auto good = make_checkpoint(msin::Variant::kMsin);
  auto other = good.model;
  other.d_s = 8;
  try {
    msin::parse_checkpoint(msin::checkpoint_bytes(good), other);
    FAIL();
  } catch (const msin::CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("d_s"), std::string::npos) << e.what();
  }
  EXPECT_NO_THROW(msin::parse_checkpoint(msin::checkpoint_bytes(good), good.model));
}

TEST(Checkpoint, VariantsHaveDifferentManifests) {
  auto names = [](msin::Variant v) {
    std::vector<std::string> out;
    auto ck = make_checkpoint(v);
    for (auto& s : ck.params.slots()) out.push_back(s.name);
    return out;
  };
  EXPECT_NE(names(msin::Variant::kMsin), names(msin::Variant::kLstmWo));
  EXPECT_NE(names(msin::Variant::kLstmWo), names(msin::Variant::kLstmPar));
}

}  // namespace
