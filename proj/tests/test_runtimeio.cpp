#include <gtest/gtest.h>

#include <string>
#include <vector>

#include "testfiles.hpp"
#include "yoloret/bench.hpp"
#include "yoloret/common.hpp"
#include "yoloret/dataset.hpp"
#include "yoloret/modelconfig.hpp"

namespace yoloret {
namespace {

// ---- model configuration ----

TEST(ModelConfig, EmptyObjectYieldsTheDocumentedDefaults) {
  const model::ModelSpec spec = config::config_parse("{}");
  EXPECT_EQ(spec.resolution, 320);
  EXPECT_FLOAT_EQ(spec.alpha, 0.75f);
  EXPECT_EQ(spec.truncate_last, 2);
  EXPECT_EQ(spec.num_classes, 20);
  EXPECT_EQ(spec.rfcr.fusion_channels, 32);
  EXPECT_EQ(spec.panet.widths.at(8), 64);
  EXPECT_EQ(spec.panet.widths.at(16), 96);
  EXPECT_EQ(spec.panet.widths.at(32), 128);
  EXPECT_TRUE(spec.anchors.empty());
  EXPECT_FLOAT_EQ(spec.conf_thresh, 0.25f);
  EXPECT_FLOAT_EQ(spec.nms_iou, 0.45f);
}

TEST(ModelConfig, AcceptsTheSupportedResolutionsOnly) {
  for (int r : {224, 320, 416}) {
    const auto spec =
        config::config_parse("{\"resolution\": " + std::to_string(r) + "}");
    EXPECT_EQ(spec.resolution, r);
  }
  try {
    config::config_parse("{\"resolution\": 300}");
    FAIL() << "300 should be rejected";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("divisible by 32"), std::string::npos);
  }
  // divisible by 32 but not a supported preset
  EXPECT_THROW(config::config_parse("{\"resolution\": 256}"), ValidationError);
}

TEST(ModelConfig, RejectsUnknownKeysAndWrongTypes) {
  EXPECT_THROW(config::config_parse("{\"resolutionn\": 320}"), ValidationError);
  EXPECT_THROW(config::config_parse("{\"alpha\": \"wide\"}"), ValidationError);
  EXPECT_THROW(config::config_parse("{\"resolution\": 320.5}"), ValidationError);
  EXPECT_THROW(config::config_parse("not json"), ValidationError);
  EXPECT_THROW(config::config_parse("[1, 2]"), ValidationError);
  EXPECT_THROW(config::config_parse("{\"num_classes\": 0}"), ValidationError);
}

TEST(ModelConfig, PanetWidthsMustCoverExactlyTheThreeScales) {
  const auto spec = config::config_parse(
      "{\"panet_widths\": {\"8\": 40, \"16\": 48, \"32\": 56}}");
  EXPECT_EQ(spec.panet.widths.at(16), 48);
  EXPECT_THROW(config::config_parse("{\"panet_widths\": {\"8\": 40, \"16\": 48}}"),
               ValidationError);
  EXPECT_THROW(config::config_parse(
                   "{\"panet_widths\": {\"8\": 40, \"16\": 48, \"32\": 56, "
                   "\"64\": 64}}"),
               ValidationError);
  EXPECT_THROW(config::config_parse("{\"panet_widths\": {\"eight\": 40, \"16\": 48, "
                                    "\"32\": 56}}"),
               ValidationError);
}

TEST(ModelConfig, AnchorsNeedThreePerScaleAndOneGroupPerScale) {
  const std::string good =
      "{\"anchors\": [[[10,13],[16,30],[33,23]],"
      "[[30,61],[62,45],[59,119]],"
      "[[116,90],[156,198],[373,326]]]}";
  const auto spec = config::config_parse(good);
  ASSERT_EQ(spec.anchors.size(), 3u);
  EXPECT_FLOAT_EQ(spec.anchors[1][2].h, 119.0f);

  EXPECT_THROW(config::config_parse("{\"anchors\": [[[10,13],[16,30],[33,23]]]}"),
               ValidationError);
  EXPECT_THROW(config::config_parse("{\"anchors\": [[[10,13]],[[30,61]],[[116,90]]]}"),
               ValidationError);
  EXPECT_THROW(config::config_parse("{\"anchors\": [[[10,13,5],[16,30],[33,23]],"
                                    "[[30,61],[62,45],[59,119]],"
                                    "[[116,90],[156,198],[373,326]]]}"),
               ValidationError);
}

TEST(ModelConfig, SerializeParseRoundTripIsIdentity) {
  const std::string source =
      "{\"resolution\": 416, \"alpha\": 1.0, \"truncate_last\": 3,"
      " \"num_classes\": 7, \"fusion_channels\": 16,"
      " \"panet_widths\": {\"8\": 40, \"16\": 48, \"32\": 56},"
      " \"anchors\": [[[10,13],[16,30],[33,23]],"
      "[[30,61],[62,45],[59,119]],[[116,90],[156,198],[373,326]]],"
      " \"conf_thresh\": 0.3, \"nms_iou\": 0.5}";
  const std::string once = config::config_serialize(config::config_parse(source));
  const std::string twice = config::config_serialize(config::config_parse(once));
  EXPECT_EQ(once, twice);

  const std::string defaults = config::config_serialize(config::config_parse("{}"));
  EXPECT_EQ(defaults,
            config::config_serialize(config::config_parse(defaults)));
}

TEST(ModelConfig, LoadReadsFilesAndReportsMissingOnes) {
  TempDir dir;
  dir.write_text("m.json", "{\"resolution\": 224}");
  EXPECT_EQ(config::config_load(dir.file("m.json")).resolution, 224);
  EXPECT_THROW(config::config_load(dir.file("absent.json")), IoError);
}

// ---- ppm images ----

TEST(Ppm, AllWhiteTwoByTwoReadsAsOnes) {
  TempDir dir;
  dir.write_bytes("w.ppm", "P6\n2 2\n255\n" + std::string(12, '\xff'));
  const Tensor img = dataset::read_ppm(dir.file("w.ppm"));
  ASSERT_TRUE(img.shape() == (Shape{1, 3, 2, 2}));
  for (int64_t i = 0; i < img.numel(); ++i) EXPECT_FLOAT_EQ(img.data()[i], 1.0f);
}

TEST(Ppm, ChannelOrderIsRgbPlanes) {
  TempDir dir;
  // one red pixel, one green, one blue, one black on a 2x2 grid
  const unsigned char px[12] = {255, 0, 0, 0, 255, 0, 0, 0, 255, 0, 0, 0};
  dir.write_bytes("c.ppm",
                  "P6\n2 2\n255\n" + std::string(reinterpret_cast<const char*>(px), 12));
  const Tensor img = dataset::read_ppm(dir.file("c.ppm"));
  EXPECT_FLOAT_EQ(img.at(0, 0, 0, 0), 1.0f);  // red plane, top-left
  EXPECT_FLOAT_EQ(img.at(0, 1, 0, 0), 0.0f);
  EXPECT_FLOAT_EQ(img.at(0, 1, 0, 1), 1.0f);  // green plane, top-right
  EXPECT_FLOAT_EQ(img.at(0, 2, 1, 0), 1.0f);  // blue plane, bottom-left
  EXPECT_FLOAT_EQ(img.at(0, 0, 1, 1), 0.0f);
}

TEST(Ppm, HeaderAllowsCommentsAndFlexibleWhitespace) {
  TempDir dir;
  dir.write_bytes("h.ppm", "P6 # trailing comment\n# whole-line comment\n 3\t2 \n255\n" +
                               std::string(18, '\x80'));
  const Tensor img = dataset::read_ppm(dir.file("h.ppm"));
  ASSERT_TRUE(img.shape() == (Shape{1, 3, 2, 3}));
  EXPECT_NEAR(img.at(0, 0, 0, 0), 128.0f / 255.0f, 1e-6f);

  const dataset::PpmInfo info = dataset::read_ppm_header(dir.file("h.ppm"));
  EXPECT_EQ(info.width, 3);
  EXPECT_EQ(info.height, 2);
}

TEST(Ppm, WriterReaderRoundTripIsExact) {
  TempDir dir;
  Rng rng(26);
  std::vector<float> vals(static_cast<size_t>(3) * 5 * 4);
  for (float& v : vals) {
    v = static_cast<float>(rng.uniform_int(0, 255)) / 255.0f;
  }
  const Tensor img(Shape{1, 3, 5, 4}, vals);
  dataset::write_ppm(img, dir.file("r.ppm"));
  const Tensor back = dataset::read_ppm(dir.file("r.ppm"));
  ASSERT_TRUE(back.shape() == img.shape());
  EXPECT_TRUE(bitwise_equal(back, img));
}

TEST(Ppm, RejectsWrongFormatMaxvalAndShortData) {
  TempDir dir;
  dir.write_bytes("p5.ppm", "P5\n2 2\n255\n" + std::string(4, '\0'));
  EXPECT_THROW(dataset::read_ppm(dir.file("p5.ppm")), IoError);

  dir.write_bytes("max.ppm", "P6\n2 2\n128\n" + std::string(12, '\0'));
  try {
    dataset::read_ppm(dir.file("max.ppm"));
    FAIL();
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("maxval"), std::string::npos);
  }

  dir.write_bytes("short.ppm", "P6\n2 2\n255\n" + std::string(5, '\0'));
  EXPECT_THROW(dataset::read_ppm(dir.file("short.ppm")), IoError);

  EXPECT_THROW(dataset::read_ppm(dir.file("absent.ppm")), IoError);

  EXPECT_THROW(dataset::write_ppm(Tensor(Shape{1, 1, 2, 2}), dir.file("x.ppm")),
               ValidationError);
}

// ---- annotations ----

std::string gray_ppm(int w, int h) {
  return "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n" +
         std::string(static_cast<size_t>(w) * h * 3, '\x40');
}

TEST(Annotations, ParsesRecordsAndResolvesRelativePaths) {
  TempDir dir;
  dir.write_bytes("a.ppm", gray_ppm(8, 6));
  dir.write_bytes("b.ppm", gray_ppm(4, 4));
  dir.write_text("ann.jsonl",
                 "{\"image\":\"a.ppm\",\"boxes\":[{\"x1\":1,\"y1\":0.5,\"x2\":7,"
                 "\"y2\":5.5,\"class\":1,\"difficult\":true}]}\n"
                 "\n"
                 "{\"image\":\"b.ppm\",\"boxes\":[{\"x1\":0,\"y1\":0,\"x2\":4,"
                 "\"y2\":4,\"class\":0}]}\n");
  const auto records = dataset::read_annotations(dir.file("ann.jsonl"), 2);
  ASSERT_EQ(records.size(), 2u);
  EXPECT_EQ(records[0].image, dir.file("a.ppm"));
  ASSERT_EQ(records[0].boxes.size(), 1u);
  EXPECT_FLOAT_EQ(records[0].boxes[0].box.y2, 5.5f);
  EXPECT_EQ(records[0].boxes[0].class_id, 1);
  EXPECT_TRUE(records[0].boxes[0].difficult);
  EXPECT_FALSE(records[1].boxes[0].difficult);  // defaults to false
}

TEST(Annotations, ValidatesBoxesAgainstTheReferencedImage) {
  TempDir dir;
  dir.write_bytes("a.ppm", gray_ppm(8, 6));
  auto line = [&](const std::string& boxes) {
    dir.write_text("ann.jsonl", "{\"image\":\"a.ppm\",\"boxes\":[" + boxes + "]}\n");
    return dir.file("ann.jsonl");
  };

  // x2 past the image width
  EXPECT_THROW(dataset::read_annotations(
                   line("{\"x1\":1,\"y1\":1,\"x2\":9,\"y2\":5,\"class\":0}"), 2),
               ValidationError);
  // unknown class id
  try {
    dataset::read_annotations(
        line("{\"x1\":1,\"y1\":1,\"x2\":7,\"y2\":5,\"class\":2}"), 2);
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("unknown class id"), std::string::npos);
  }
  // degenerate box
  EXPECT_THROW(dataset::read_annotations(
                   line("{\"x1\":3,\"y1\":1,\"x2\":3,\"y2\":5,\"class\":0}"), 2),
               ValidationError);
  // unknown box key
  EXPECT_THROW(
      dataset::read_annotations(
          line("{\"x1\":1,\"y1\":1,\"x2\":7,\"y2\":5,\"class\":0,\"score\":1}"), 2),
      ValidationError);
  // malformed json line
  dir.write_text("ann.jsonl", "{\"image\":\n");
  EXPECT_THROW(dataset::read_annotations(dir.file("ann.jsonl"), 2), ValidationError);
  // referenced image missing
  dir.write_text("ann.jsonl", "{\"image\":\"nope.ppm\",\"boxes\":[]}\n");
  EXPECT_THROW(dataset::read_annotations(dir.file("ann.jsonl"), 2), IoError);
  // annotation file missing
  EXPECT_THROW(dataset::read_annotations(dir.file("absent.jsonl"), 2), IoError);
}

// ---- benchmark statistics ----

TEST(BenchStats, MedianOfThreeIsTheMiddleValue) {
  const auto s = bench::summarize_latencies({3.0, 1.0, 2.0});
  EXPECT_DOUBLE_EQ(s.median_ms, 2.0);
  EXPECT_DOUBLE_EQ(s.mean_ms, 2.0);
  EXPECT_DOUBLE_EQ(s.fps, 500.0);
  EXPECT_DOUBLE_EQ(s.p95_ms, 3.0);
  EXPECT_EQ(s.iters, 3);
}

TEST(BenchStats, EvenCountsAverageTheTwoMiddles) {
  const auto s = bench::summarize_latencies({4.0, 1.0, 3.0, 2.0});
  EXPECT_DOUBLE_EQ(s.median_ms, 2.5);
  EXPECT_DOUBLE_EQ(s.mean_ms, 2.5);
  EXPECT_DOUBLE_EQ(s.fps, 400.0);
  EXPECT_DOUBLE_EQ(s.p95_ms, 4.0);
}

TEST(BenchStats, FpsIsThousandOverMeanMs) {
  const auto s = bench::summarize_latencies({8.0});
  EXPECT_DOUBLE_EQ(s.fps, 125.0);
  EXPECT_DOUBLE_EQ(s.median_ms, 8.0);
  EXPECT_DOUBLE_EQ(s.p95_ms, 8.0);
  EXPECT_THROW(bench::summarize_latencies({}), ValidationError);
}

TEST(BenchStats, RunProducesPositiveSerialTimings) {
  model::ModelSpec spec;
  spec.resolution = 32;
  spec.alpha = 0.35f;
  spec.num_classes = 2;
  spec.rfcr = rfcr::default_rfcr_config(8);
  spec.panet.widths = {{8, 8}, {16, 10}, {32, 12}};
  model::DetectionModel m(spec, 27);

  const auto s = bench::benchmark_run(m, 1, 3);
  EXPECT_EQ(s.warmup, 1);
  EXPECT_EQ(s.iters, 3);
  EXPECT_GT(s.mean_ms, 0.0);
  EXPECT_GT(s.median_ms, 0.0);
  EXPECT_GE(s.p95_ms, s.median_ms);
  EXPECT_GT(s.fps, 0.0);
  EXPECT_THROW(bench::benchmark_run(m, 0, 0), ValidationError);
  EXPECT_THROW(bench::benchmark_run(m, -1, 1), ValidationError);
}

}  // namespace
}  // namespace yoloret
