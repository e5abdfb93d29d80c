#include "yoloret/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "yoloret/common.hpp"

namespace yoloret {
namespace dataset {
namespace {

// PPM headers are whitespace-separated tokens; '#' starts a comment running
// to end of line.
std::string next_token(std::istream& in) {
  std::string tok;
  int c = in.get();
  while (c != EOF) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = in.get();
    } else if (std::isspace(c)) {
      if (!tok.empty()) break;
    } else {
      tok.push_back(static_cast<char>(c));
      c = in.get();
      continue;
    }
    c = in.get();
  }
  return tok;
}

int parse_dim(const std::string& tok, const std::string& path, const char* what) {
  if (tok.empty() || tok.size() > 7 ||
      tok.find_first_not_of("0123456789") != std::string::npos) {
    throw IoError("ppm: malformed " + std::string(what) + " in " + path);
  }
  const long v = std::stol(tok);
  if (v < 1 || v > 1 << 20) {
    throw IoError("ppm: unreasonable " + std::string(what) + " in " + path);
  }
  return static_cast<int>(v);
}

PpmInfo read_header(std::istream& in, const std::string& path) {
  char m0 = 0;
  char m1 = 0;
  in.get(m0);
  in.get(m1);
  if (!in || m0 != 'P' || m1 != '6') {
    throw IoError("ppm: " + path + " is not a binary P6 file");
  }
  PpmInfo info;
  info.width = parse_dim(next_token(in), path, "width");
  info.height = parse_dim(next_token(in), path, "height");
  const std::string maxval = next_token(in);
  if (maxval != "255") {
    throw IoError("ppm: " + path + " has maxval " + maxval + ", only 255 is supported");
  }
  return info;
}

std::string dirname_of(const std::string& path) {
  const size_t slash = path.find_last_of('/');
  return slash == std::string::npos ? std::string() : path.substr(0, slash + 1);
}

}  // namespace

Tensor read_ppm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("ppm: cannot open " + path);
  const PpmInfo info = read_header(f, path);
  // exactly one whitespace byte separates the header from the pixel stream;
  // read_header consumed it as the maxval terminator
  const size_t count = static_cast<size_t>(info.width) * info.height * 3;
  std::vector<unsigned char> bytes(count);
  f.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(count));
  if (static_cast<size_t>(f.gcount()) != count) {
    throw IoError("ppm: short pixel data in " + path);
  }

  std::vector<float> data(count);
  const size_t plane = static_cast<size_t>(info.width) * info.height;
  for (int y = 0; y < info.height; ++y) {
    for (int x = 0; x < info.width; ++x) {
      const size_t px = (static_cast<size_t>(y) * info.width + x) * 3;
      for (int ch = 0; ch < 3; ++ch) {
        data[ch * plane + y * static_cast<size_t>(info.width) + x] =
            static_cast<float>(bytes[px + ch]) / 255.0f;
      }
    }
  }
  return Tensor(Shape{1, 3, info.height, info.width}, std::move(data));
}

void write_ppm(const Tensor& image, const std::string& path) {
  const Shape& s = image.shape();
  if (s.n != 1 || s.c != 3) {
    throw ValidationError("ppm: expected a (1,3,h,w) image, got " + s.str());
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("ppm: cannot open " + path + " for writing");
  f << "P6\n" << s.w << ' ' << s.h << "\n255\n";
  std::vector<unsigned char> bytes(static_cast<size_t>(s.h) * s.w * 3);
  for (int y = 0; y < s.h; ++y) {
    for (int x = 0; x < s.w; ++x) {
      for (int ch = 0; ch < 3; ++ch) {
        const float v = std::clamp(image.at(0, ch, y, x), 0.0f, 1.0f);
        bytes[(static_cast<size_t>(y) * s.w + x) * 3 + ch] =
            static_cast<unsigned char>(std::lround(v * 255.0f));
      }
    }
  }
  f.write(reinterpret_cast<const char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("ppm: short write to " + path);
}

PpmInfo read_ppm_header(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("ppm: cannot open " + path);
  return read_header(f, path);
}

std::vector<DatasetRecord> read_annotations(const std::string& path, int num_classes) {
  if (num_classes < 1) throw ValidationError("annotations: need at least one class");
  std::ifstream f(path);
  if (!f) throw IoError("annotations: cannot open " + path);
  const std::string base = dirname_of(path);

  std::vector<DatasetRecord> records;
  std::string line;
  int line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path + ":" + std::to_string(line_no);

    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("annotations: " + where + ": malformed JSON: " + e.what());
    }
    if (!rec.is_object() || !rec.contains("image") || !rec["image"].is_string() ||
        !rec.contains("boxes") || !rec["boxes"].is_array()) {
      throw ValidationError("annotations: " + where +
                            ": record needs \"image\" and \"boxes\"");
    }
    for (const auto& [key, unused] : rec.items()) {
      if (key != "image" && key != "boxes") {
        throw ValidationError("annotations: " + where + ": unknown key " + key);
      }
    }

    DatasetRecord out;
    const std::string name = rec["image"].get<std::string>();
    out.image = !name.empty() && name[0] == '/' ? name : base + name;
    const PpmInfo info = read_ppm_header(out.image);

    for (const auto& b : rec["boxes"]) {
      if (!b.is_object()) {
        throw ValidationError("annotations: " + where + ": each box must be an object");
      }
      for (const auto& [key, unused] : b.items()) {
        if (key != "x1" && key != "y1" && key != "x2" && key != "y2" &&
            key != "class" && key != "difficult") {
          throw ValidationError("annotations: " + where + ": unknown box key " + key);
        }
      }
      for (const char* key : {"x1", "y1", "x2", "y2"}) {
        if (!b.contains(key) || !b[key].is_number()) {
          throw ValidationError("annotations: " + where + ": box needs numeric " +
                                std::string(key));
        }
      }
      if (!b.contains("class") || !b["class"].is_number_integer()) {
        throw ValidationError("annotations: " + where + ": box needs an integer class");
      }
      evalmetrics::GroundTruth gt;
      gt.box = geometry::Box{b["x1"].get<float>(), b["y1"].get<float>(),
                             b["x2"].get<float>(), b["y2"].get<float>()};
      gt.class_id = b["class"].get<int>();
      if (b.contains("difficult")) {
        if (!b["difficult"].is_boolean()) {
          throw ValidationError("annotations: " + where + ": difficult must be a bool");
        }
        gt.difficult = b["difficult"].get<bool>();
      }

      if (!(gt.box.x1 < gt.box.x2) || !(gt.box.y1 < gt.box.y2)) {
        throw ValidationError("annotations: " + where + ": degenerate box");
      }
      if (gt.box.x1 < 0.0f || gt.box.y1 < 0.0f ||
          gt.box.x2 > static_cast<float>(info.width) ||
          gt.box.y2 > static_cast<float>(info.height)) {
        throw ValidationError("annotations: " + where + ": box outside image bounds");
      }
      if (gt.class_id < 0 || gt.class_id >= num_classes) {
        throw ValidationError("annotations: " + where + ": unknown class id " +
                              std::to_string(gt.class_id));
      }
      out.boxes.push_back(gt);
    }
    records.push_back(std::move(out));
  }
  return records;
}

}  // namespace dataset
}  // namespace yoloret
