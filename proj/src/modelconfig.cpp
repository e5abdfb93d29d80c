#include "yoloret/modelconfig.hpp"

#include <fstream>
#include <set>

#include <json.hpp>

#include "yoloret/common.hpp"

namespace yoloret {
namespace config {
namespace {

using nlohmann::ordered_json;

const std::set<int> kResolutions{224, 320, 416};

[[noreturn]] void bad(const std::string& what) {
  throw ValidationError("config: " + what);
}

int require_int(const ordered_json& v, const std::string& key) {
  if (!v.is_number_integer()) bad(key + " must be an integer");
  return v.get<int>();
}

float require_number(const ordered_json& v, const std::string& key) {
  if (!v.is_number()) bad(key + " must be a number");
  return v.get<float>();
}

}  // namespace

model::ModelSpec config_parse(const std::string& text) {
  ordered_json root;
  try {
    root = ordered_json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    bad(std::string("malformed JSON: ") + e.what());
  }
  if (!root.is_object()) bad("top level must be a JSON object");

  model::ModelSpec spec;  // field defaults are the documented config defaults
  for (const auto& [key, value] : root.items()) {
    if (key == "resolution") {
      spec.resolution = require_int(value, key);
    } else if (key == "alpha") {
      spec.alpha = require_number(value, key);
    } else if (key == "truncate_last") {
      spec.truncate_last = require_int(value, key);
    } else if (key == "num_classes") {
      spec.num_classes = require_int(value, key);
    } else if (key == "fusion_channels") {
      spec.rfcr = rfcr::default_rfcr_config(require_int(value, key));
    } else if (key == "panet_widths") {
      if (!value.is_object()) bad("panet_widths must be an object of stride -> width");
      std::map<int, int> widths;
      for (const auto& [stride_key, width] : value.items()) {
        int stride = 0;
        size_t used = 0;
        try {
          stride = std::stoi(stride_key, &used);
        } catch (const std::exception&) {
          bad("panet_widths key " + stride_key + " is not a stride");
        }
        if (used != stride_key.size()) {
          bad("panet_widths key " + stride_key + " is not a stride");
        }
        widths[stride] = require_int(width, "panet_widths[" + stride_key + "]");
      }
      std::set<int> want(spec.panet.strides.begin(), spec.panet.strides.end());
      std::set<int> got;
      for (const auto& [s, unused] : widths) got.insert(s);
      if (got != want) bad("panet_widths must cover exactly the strides 8, 16, 32");
      spec.panet.widths = widths;
    } else if (key == "anchors") {
      if (!value.is_array()) bad("anchors must be an array of per-scale groups");
      std::vector<std::vector<detect::Anchor>> anchors;
      for (const auto& group : value) {
        if (!group.is_array()) bad("each anchor group must be an array");
        std::vector<detect::Anchor> parsed;
        for (const auto& pair : group) {
          if (!pair.is_array() || pair.size() != 2) {
            bad("each anchor must be a [width, height] pair");
          }
          parsed.push_back(detect::Anchor{require_number(pair[0], "anchor width"),
                                          require_number(pair[1], "anchor height")});
        }
        anchors.push_back(std::move(parsed));
      }
      spec.anchors = std::move(anchors);
    } else if (key == "conf_thresh") {
      spec.conf_thresh = require_number(value, key);
    } else if (key == "nms_iou") {
      spec.nms_iou = require_number(value, key);
    } else {
      bad("unknown key " + key);
    }
  }

  if (spec.resolution % 32 != 0) {
    bad("resolution " + std::to_string(spec.resolution) + " is not divisible by 32");
  }
  if (!kResolutions.count(spec.resolution)) {
    bad("resolution " + std::to_string(spec.resolution) +
        " is unsupported (expected 224, 320 or 416)");
  }
  if (!spec.anchors.empty()) {
    if (spec.anchors.size() != spec.panet.strides.size()) {
      bad("anchors must provide one group per output scale");
    }
    for (const auto& group : spec.anchors) {
      if (group.size() != 3) bad("each anchor group must hold exactly 3 anchors");
    }
  }
  spec.validate();
  return spec;
}

std::string config_serialize(const model::ModelSpec& spec) {
  ordered_json root;
  root["resolution"] = spec.resolution;
  root["alpha"] = spec.alpha;
  root["truncate_last"] = spec.truncate_last;
  root["num_classes"] = spec.num_classes;
  root["fusion_channels"] = spec.rfcr.fusion_channels;
  ordered_json widths;
  for (int s : spec.panet.strides) {
    widths[std::to_string(s)] = spec.panet.widths.at(s);
  }
  root["panet_widths"] = widths;
  if (!spec.anchors.empty()) {
    ordered_json anchors = ordered_json::array();
    for (const auto& group : spec.anchors) {
      ordered_json g = ordered_json::array();
      for (const detect::Anchor& a : group) g.push_back({a.w, a.h});
      anchors.push_back(g);
    }
    root["anchors"] = anchors;
  }
  root["conf_thresh"] = spec.conf_thresh;
  root["nms_iou"] = spec.nms_iou;
  return root.dump(2);
}

model::ModelSpec config_load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("config: cannot open " + path);
  std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return config_parse(text);
}

}  // namespace config
}  // namespace yoloret
