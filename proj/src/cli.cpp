#include "yoloret/cli.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include <CLI11.hpp>
#include <json.hpp>

#include "yoloret/bench.hpp"
#include "yoloret/common.hpp"
#include "yoloret/dataset.hpp"
#include "yoloret/modelconfig.hpp"
#include "yoloret/train.hpp"
#include "yoloret/weightstore.hpp"

namespace yoloret {
namespace cli {
namespace {

using nlohmann::ordered_json;

void emit(const ordered_json& report, const std::string& out_path, std::ostream& out) {
  const std::string text = report.dump(2);
  if (out_path.empty()) {
    out << text << "\n";
    return;
  }
  std::ofstream f(out_path, std::ios::trunc);
  if (!f) throw IoError("cannot open " + out_path + " for writing");
  f << text << "\n";
  if (!f) throw IoError("short write to " + out_path);
}

model::DetectionModel load_model(const std::string& config_path,
                                 const std::string& weights_path) {
  model::DetectionModel m(config::config_load(config_path), 0);
  if (!weights_path.empty()) {
    weightstore::weights_load(weights_path).apply_to(m.params());
  }
  return m;
}

ordered_json detections_json(const std::vector<detect::Detection>& dets) {
  ordered_json arr = ordered_json::array();
  for (const detect::Detection& d : dets) {
    arr.push_back({{"x1", d.box.x1},
                   {"y1", d.box.y1},
                   {"x2", d.box.x2},
                   {"y2", d.box.y2},
                   {"class", d.class_id},
                   {"confidence", d.confidence}});
  }
  return arr;
}

void run_detect(const std::string& config_path, const std::string& weights_path,
                const std::string& image_path, float conf, bool conf_set,
                const std::string& out_path, std::ostream& out) {
  model::ModelSpec spec = config::config_load(config_path);
  if (conf_set) spec.conf_thresh = conf;
  model::DetectionModel m(spec, 0);
  weightstore::weights_load(weights_path).apply_to(m.params());

  const Tensor image = dataset::read_ppm(image_path);
  ordered_json report;
  report["image"] = image_path;
  report["detections"] = detections_json(m.predict(image));
  emit(report, out_path, out);
}

void run_eval(const std::string& config_path, const std::string& weights_path,
              const std::string& dataset_path, const std::string& metric,
              const std::string& out_path, std::ostream& out) {
  if (metric != "voc" && metric != "coco") {
    throw ValidationError("eval: metric must be voc or coco");
  }
  // Scoring sweeps the full precision-recall curve, so keep low-confidence
  // detections around; the demo threshold would truncate recall.
  model::ModelSpec spec = config::config_load(config_path);
  spec.conf_thresh = 0.05f;
  model::DetectionModel m(spec, 0);
  if (!weights_path.empty()) {
    weightstore::weights_load(weights_path).apply_to(m.params());
  }
  const auto records =
      dataset::read_annotations(dataset_path, m.spec().num_classes);
  if (records.empty()) throw ValidationError("eval: dataset is empty");

  std::vector<evalmetrics::ImageEval> images;
  for (const auto& rec : records) {
    evalmetrics::ImageEval img;
    img.detections = m.predict(dataset::read_ppm(rec.image));
    img.ground_truth = rec.boxes;
    images.push_back(std::move(img));
  }

  ordered_json report;
  report["metric"] = metric;
  report["images"] = static_cast<int>(images.size());
  if (metric == "voc") {
    const evalmetrics::VocResult r = evalmetrics::evaluate_voc(images);
    report["map"] = r.map;
    ordered_json classes = ordered_json::array();
    for (const auto& c : r.per_class) {
      classes.push_back(
          {{"class", c.class_id}, {"ap", c.ap}, {"positives", c.n_positives}});
    }
    report["classes"] = classes;
  } else {
    const evalmetrics::CocoResult r = evalmetrics::evaluate_coco(images);
    report["ap"] = r.ap;
    report["ap50"] = r.ap50;
    report["ap75"] = r.ap75;
    report["ap_small"] = r.ap_small;
    report["ap_medium"] = r.ap_medium;
    report["ap_large"] = r.ap_large;
  }
  emit(report, out_path, out);
}

ordered_json flops_json(const model::FlopsReport& f) {
  return {{"backbone", f.backbone},
          {"rfcr", f.rfcr},
          {"panet", f.panet},
          {"head", f.head},
          {"total", f.total()}};
}

void run_bench(const std::string& config_path, const std::string& weights_path,
               int iters, int warmup, const std::string& out_path, std::ostream& out) {
  model::DetectionModel m = load_model(config_path, weights_path);
  const bench::BenchStats s = bench::benchmark_run(m, warmup, iters);
  ordered_json report;
  report["resolution"] = m.spec().resolution;
  report["warmup"] = s.warmup;
  report["iters"] = s.iters;
  report["mean_ms"] = s.mean_ms;
  report["median_ms"] = s.median_ms;
  report["p95_ms"] = s.p95_ms;
  report["fps"] = s.fps;
  report["macs"] = flops_json(m.flops());
  emit(report, out_path, out);
}

void run_truncate(const std::string& in_path, const std::string& out_file, int blocks,
                  const std::string& out_path, std::ostream& out) {
  if (blocks < 0) throw ValidationError("truncate: blocks must be non-negative");
  const weightstore::WeightStore in = weightstore::weights_load(in_path);

  // backbone blocks are named backbone.b<i>.<rest>
  std::set<int> indices;
  for (const std::string& name : in.names()) {
    if (name.rfind("backbone.b", 0) != 0) continue;
    const size_t start = std::string("backbone.b").size();
    const size_t dot = name.find('.', start);
    if (dot == std::string::npos) continue;
    const std::string digits = name.substr(start, dot - start);
    if (digits.empty() || digits.find_first_not_of("0123456789") != std::string::npos) {
      continue;
    }
    indices.insert(std::stoi(digits));
  }
  if (blocks >= static_cast<int>(indices.size())) {
    throw ValidationError("truncate: cannot remove " + std::to_string(blocks) +
                          " blocks, file holds " + std::to_string(indices.size()));
  }
  std::set<std::string> drop_prefixes;
  auto it = indices.rbegin();
  for (int i = 0; i < blocks; ++i, ++it) {
    drop_prefixes.insert("backbone.b" + std::to_string(*it) + ".");
  }

  weightstore::WeightStore kept;
  int removed_tensors = 0;
  int64_t removed_values = 0;
  for (const std::string& name : in.names()) {
    const bool drop = std::any_of(
        drop_prefixes.begin(), drop_prefixes.end(),
        [&](const std::string& p) { return name.rfind(p, 0) == 0; });
    if (drop) {
      ++removed_tensors;
      removed_values += in.get(name).numel();
    } else {
      kept.add(name, in.get(name));
    }
  }
  weightstore::weights_save(kept, out_file);

  ordered_json report;
  report["input"] = in_path;
  report["output"] = out_file;
  report["removed_blocks"] = blocks;
  report["removed_tensors"] = removed_tensors;
  report["removed_values"] = removed_values;
  report["kept_tensors"] = static_cast<int>(kept.size());
  emit(report, out_path, out);
}

void run_train_toy(const std::string& config_path, const std::string& dataset_path,
                   int epochs_p1, int epochs_p2, uint64_t seed,
                   const std::string& weights_out, const std::string& curve_out,
                   const std::string& out_path, std::ostream& out) {
  const model::ModelSpec spec = config::config_load(config_path);
  model::DetectionModel m(spec, seed);
  const auto records = dataset::read_annotations(dataset_path, spec.num_classes);

  std::vector<train::TrainSample> samples;
  for (const auto& rec : records) {
    samples.push_back(train::TrainSample{dataset::read_ppm(rec.image), rec.boxes});
  }

  train::TrainConfig cfg;
  cfg.epochs_phase1 = epochs_p1;
  cfg.epochs_phase2 = epochs_p2;
  cfg.seed = seed;
  const std::vector<train::StepRecord> curve = train::train_two_phase(m, samples, cfg);

  if (!curve_out.empty()) {
    std::ofstream f(curve_out, std::ios::trunc);
    if (!f) throw IoError("cannot open " + curve_out + " for writing");
    train::write_loss_csv(curve, f);
    if (!f) throw IoError("short write to " + curve_out);
  }
  if (!weights_out.empty()) {
    weightstore::weights_save(weightstore::WeightStore::from_params(m.params()),
                              weights_out);
  }

  ordered_json report;
  report["samples"] = static_cast<int>(samples.size());
  report["steps"] = static_cast<int>(curve.size());
  report["seed"] = seed;
  ordered_json losses = ordered_json::array();
  for (const auto& r : curve) losses.push_back(r.total);
  report["losses"] = losses;
  if (!curve.empty()) {
    report["first_loss"] = curve.front().total;
    report["final_loss"] = curve.back().total;
  }
  emit(report, out_path, out);
}

void run_flops(const std::string& config_path, const std::string& out_path,
               std::ostream& out) {
  model::DetectionModel m(config::config_load(config_path), 0);
  ordered_json report;
  report["resolution"] = m.spec().resolution;
  report["macs"] = flops_json(m.flops());
  emit(report, out_path, out);
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"yoloret: compact multi-scale object detection"};
  app.require_subcommand(1);

  std::string config_path;
  std::string weights_path;
  std::string image_path;
  std::string dataset_path;
  std::string metric = "voc";
  std::string in_path;
  std::string out_file;
  std::string out_path;
  std::string weights_out;
  std::string curve_out;
  float conf = 0.25f;
  int iters = 10;
  int warmup = 2;
  int blocks = 2;
  int epochs_p1 = 0;
  int epochs_p2 = 0;
  uint64_t seed = 0;

  CLI::App* detect = app.add_subcommand("detect", "Run detection on one image");
  detect->add_option("--config", config_path)->required();
  detect->add_option("--weights", weights_path)->required();
  detect->add_option("--image", image_path)->required();
  CLI::Option* conf_opt = detect->add_option("--conf", conf, "Confidence threshold");
  detect->add_option("--out", out_path, "Write the report here instead of stdout");

  CLI::App* eval = app.add_subcommand("eval", "Evaluate on an annotated dataset");
  eval->add_option("--config", config_path)->required();
  eval->add_option("--weights", weights_path)->required();
  eval->add_option("--dataset", dataset_path)->required();
  eval->add_option("--metric", metric, "voc or coco");
  eval->add_option("--out", out_path);

  CLI::App* bench = app.add_subcommand("bench", "Measure forward latency");
  bench->add_option("--config", config_path)->required();
  bench->add_option("--weights", weights_path);
  bench->add_option("--iters", iters)->check(CLI::PositiveNumber);
  bench->add_option("--warmup", warmup)->check(CLI::NonNegativeNumber);
  bench->add_option("--out", out_path);

  CLI::App* truncate = app.add_subcommand("truncate", "Drop trailing backbone blocks");
  truncate->add_option("--in", in_path)->required();
  truncate->add_option("--out", out_file)->required();
  truncate->add_option("--blocks", blocks)->check(CLI::NonNegativeNumber);
  truncate->add_option("--report", out_path, "Write the report here instead of stdout");

  CLI::App* train = app.add_subcommand("train-toy", "Two-phase toy training");
  train->add_option("--config", config_path)->required();
  train->add_option("--dataset", dataset_path)->required();
  train->add_option("--epochs-p1", epochs_p1)->check(CLI::NonNegativeNumber);
  train->add_option("--epochs-p2", epochs_p2)->check(CLI::NonNegativeNumber);
  train->add_option("--seed", seed);
  train->add_option("--weights-out", weights_out, "Save trained weights here");
  train->add_option("--curve-out", curve_out, "Save the loss curve CSV here");
  train->add_option("--out", out_path);

  CLI::App* flops = app.add_subcommand("flops", "Report per-stage MAC counts");
  flops->add_option("--config", config_path)->required();
  flops->add_option("--out", out_path);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(std::move(reversed));
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return 0;
    }
    err << "error: " << e.what() << "\n";
    return 1;
  }

  try {
    if (*detect) {
      run_detect(config_path, weights_path, image_path, conf, conf_opt->count() > 0,
                 out_path, out);
    } else if (*eval) {
      run_eval(config_path, weights_path, dataset_path, metric, out_path, out);
    } else if (*bench) {
      run_bench(config_path, weights_path, iters, warmup, out_path, out);
    } else if (*truncate) {
      run_truncate(in_path, out_file, blocks, out_path, out);
    } else if (*train) {
      run_train_toy(config_path, dataset_path, epochs_p1, epochs_p2, seed, weights_out,
                    curve_out, out_path, out);
    } else if (*flops) {
      run_flops(config_path, out_path, out);
    }
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

}  // namespace cli
}  // namespace yoloret
