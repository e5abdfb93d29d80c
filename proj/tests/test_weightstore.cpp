#include "yoloret/weightstore.hpp"

#include <gtest/gtest.h>

#include <cstring>
#include <string>
#include <vector>

#include <json.hpp>

#include "testfiles.hpp"
#include "yoloret/common.hpp"
#include "yoloret/model.hpp"

namespace yoloret {
namespace {

using weightstore::WeightStore;

WeightStore random_store(uint64_t seed) {
  Rng rng(seed);
  WeightStore ws;
  ws.add("alpha.weight", random_normal(Shape{4, 3, 3, 3}, rng));
  ws.add("alpha.bn.gamma", random_uniform(Shape{1, 4, 1, 1}, rng, 0.5, 1.5));
  ws.add("beta.bias", random_normal(Shape{1, 17, 1, 1}, rng));
  ws.add("solo", Tensor(Shape{1, 1, 1, 1}, {-0.0f}));  // signed zero survives
  return ws;
}

TEST(WeightStore, RejectsDuplicateAndMissingNames) {
  WeightStore ws;
  ws.add("a", Tensor(Shape{1, 1, 1, 1}));
  EXPECT_THROW(ws.add("a", Tensor(Shape{1, 1, 1, 1})), ValidationError);
  EXPECT_THROW(ws.add("", Tensor(Shape{1, 1, 1, 1})), ValidationError);
  EXPECT_THROW(ws.get("b"), ValidationError);
  EXPECT_TRUE(ws.contains("a"));
}

TEST(WeightStore, RoundTripIsBitExact) {
  TempDir dir;
  const WeightStore ws = random_store(21);
  weightstore::weights_save(ws, dir.file("w.bin"));
  const WeightStore back = weightstore::weights_load(dir.file("w.bin"));

  ASSERT_EQ(back.names(), ws.names());
  for (const std::string& name : ws.names()) {
    const Tensor& a = ws.get(name);
    const Tensor& b = back.get(name);
    ASSERT_TRUE(a.shape() == b.shape()) << name;
    EXPECT_EQ(std::memcmp(a.data(), b.data(), static_cast<size_t>(a.numel()) * 4), 0)
        << name;
  }
}

TEST(WeightStore, FullModelRoundTripsThroughParamStore) {
  TempDir dir;
  model::ModelSpec spec;
  spec.resolution = 64;
  spec.alpha = 0.35f;
  spec.num_classes = 2;
  spec.rfcr = rfcr::default_rfcr_config(8);
  spec.panet.widths = {{8, 8}, {16, 10}, {32, 12}};
  model::DetectionModel a(spec, 22);
  model::DetectionModel b(spec, 23);  // different init, to be overwritten

  weightstore::weights_save(WeightStore::from_params(a.params()), dir.file("m.bin"));
  weightstore::weights_load(dir.file("m.bin")).apply_to(b.params());

  const auto& ea = a.params().entries();
  const auto& eb = b.params().entries();
  ASSERT_EQ(ea.size(), eb.size());
  for (size_t i = 0; i < ea.size(); ++i) {
    EXPECT_TRUE(bitwise_equal(ea[i].value, eb[i].value)) << ea[i].name;
  }
}

TEST(WeightStore, WrittenOffsetsMatchIndependentArithmetic) {
  TempDir dir;
  const WeightStore ws = random_store(24);
  weightstore::weights_save(ws, dir.file("w.bin"));
  const std::string buf = dir.read_bytes("w.bin");

  uint64_t manifest_len = 0;
  for (int i = 0; i < 8; ++i) {
    manifest_len |= static_cast<uint64_t>(static_cast<unsigned char>(buf[8 + i]))
                    << (8 * i);
  }
  const auto manifest = nlohmann::json::parse(buf.substr(16, manifest_len));
  const auto& tensors = manifest.at("tensors");
  ASSERT_EQ(tensors.size(), ws.names().size());

  // blobs start at the first 64-byte boundary past the header and run
  // back-to-back, each padded to the next boundary
  auto align = [](uint64_t n) { return (n + 63) / 64 * 64; };
  uint64_t expect = align(16 + manifest_len);
  for (size_t i = 0; i < tensors.size(); ++i) {
    EXPECT_EQ(tensors[i].at("name").get<std::string>(), ws.names()[i]);
    EXPECT_EQ(tensors[i].at("offset").get<uint64_t>(), expect) << ws.names()[i];
    const auto& shape = tensors[i].at("shape");
    int64_t numel = 1;
    for (const auto& d : shape) numel *= d.get<int64_t>();
    EXPECT_EQ(numel, ws.get(ws.names()[i]).numel());
    expect = align(expect + static_cast<uint64_t>(numel) * 4);
  }
  EXPECT_EQ(buf.size(), expect);
}

TEST(WeightStore, PayloadIsLittleEndianFloat32) {
  TempDir dir;
  WeightStore ws;
  ws.add("x", Tensor(Shape{1, 1, 1, 1}, {1.0f}));
  weightstore::weights_save(ws, dir.file("w.bin"));
  const std::string buf = dir.read_bytes("w.bin");
  // 1.0f = 0x3f800000, little endian on disk regardless of host
  const size_t off = buf.size() - 64;
  EXPECT_EQ(static_cast<unsigned char>(buf[off + 0]), 0x00);
  EXPECT_EQ(static_cast<unsigned char>(buf[off + 1]), 0x00);
  EXPECT_EQ(static_cast<unsigned char>(buf[off + 2]), 0x80);
  EXPECT_EQ(static_cast<unsigned char>(buf[off + 3]), 0x3f);
}

void expect_load_error(const std::string& path, const std::string& needle) {
  try {
    weightstore::weights_load(path);
    FAIL() << "expected an error mentioning '" << needle << "'";
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
  }
}

TEST(WeightStore, CorruptionsEachCarryTheirOwnDiagnostic) {
  TempDir dir;
  weightstore::weights_save(random_store(25), dir.file("w.bin"));
  const std::string good = dir.read_bytes("w.bin");

  std::string bad = good;
  bad[0] = 'X';
  dir.write_bytes("magic.bin", bad);
  expect_load_error(dir.file("magic.bin"), "bad magic");

  bad = good;
  bad[4] = 9;  // version 9
  dir.write_bytes("version.bin", bad);
  expect_load_error(dir.file("version.bin"), "version");

  dir.write_bytes("short.bin", good.substr(0, 10));
  expect_load_error(dir.file("short.bin"), "truncated");

  dir.write_bytes("cut.bin", good.substr(0, good.size() - 70));
  expect_load_error(dir.file("cut.bin"), "truncated");

  expect_load_error(dir.file("absent.bin"), "cannot open");

  // rewrite the manifest so the second tensor overlaps the first
  uint64_t manifest_len = 0;
  for (int i = 0; i < 8; ++i) {
    manifest_len |= static_cast<uint64_t>(static_cast<unsigned char>(good[8 + i]))
                    << (8 * i);
  }
  auto manifest = nlohmann::json::parse(good.substr(16, manifest_len));
  manifest["tensors"][1]["offset"] = manifest["tensors"][0]["offset"];
  std::string patched = manifest.dump();
  ASSERT_LE(patched.size(), manifest_len);
  patched.resize(manifest_len, ' ');  // keep the declared length valid
  bad = good.substr(0, 16) + patched + good.substr(16 + manifest_len);
  dir.write_bytes("overlap.bin", bad);
  expect_load_error(dir.file("overlap.bin"), "overlap");

  manifest = nlohmann::json::parse(good.substr(16, manifest_len));
  manifest["tensors"][0]["offset"] = 96;  // not a multiple of 64
  patched = manifest.dump();
  ASSERT_LE(patched.size(), manifest_len);
  patched.resize(manifest_len, ' ');
  bad = good.substr(0, 16) + patched + good.substr(16 + manifest_len);
  dir.write_bytes("misaligned.bin", bad);
  expect_load_error(dir.file("misaligned.bin"), "misaligned");
}

TEST(WeightStore, ApplyToChecksCoverageBothWays) {
  ParamStore params;
  params.add("a", Tensor(Shape{1, 2, 1, 1}));
  params.add("b", Tensor(Shape{1, 3, 1, 1}));

  WeightStore missing;
  missing.add("a", Tensor(Shape{1, 2, 1, 1}, {1.0f, 2.0f}));
  EXPECT_THROW(missing.apply_to(params), ValidationError);

  WeightStore extra;
  extra.add("a", Tensor(Shape{1, 2, 1, 1}));
  extra.add("b", Tensor(Shape{1, 3, 1, 1}));
  extra.add("c", Tensor(Shape{1, 1, 1, 1}));
  EXPECT_THROW(extra.apply_to(params), ValidationError);

  WeightStore wrong_shape;
  wrong_shape.add("a", Tensor(Shape{1, 2, 1, 1}));
  wrong_shape.add("b", Tensor(Shape{1, 4, 1, 1}));
  EXPECT_THROW(wrong_shape.apply_to(params), ValidationError);

  WeightStore good;
  good.add("a", Tensor(Shape{1, 2, 1, 1}, {5.0f, 6.0f}));
  good.add("b", Tensor(Shape{1, 3, 1, 1}, {7.0f, 8.0f, 9.0f}));
  good.apply_to(params);
  EXPECT_FLOAT_EQ(params.get("a").data()[1], 6.0f);
  EXPECT_FLOAT_EQ(params.get("b").data()[2], 9.0f);
}

}  // namespace
}  // namespace yoloret
