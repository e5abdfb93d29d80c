// Image and annotation ingestion: binary PPM (P6, maxval 255) in and out,
// and JSON-lines annotation files, one record per line:
//   {"image": "img.ppm", "boxes": [{"x1":..,"y1":..,"x2":..,"y2":..,
//                                   "class":..,"difficult":false}]}
// Image paths resolve relative to the annotation file's directory.
#pragma once

#include <string>
#include <vector>

#include "yoloret/evalmetrics.hpp"
#include "yoloret/tensor.hpp"

namespace yoloret {
namespace dataset {

// (1,3,h,w) float32 in [0,1], RGB channel order.
Tensor read_ppm(const std::string& path);

// Expects values in [0,1]; rounds to bytes. read_ppm(write_ppm(x)) is exact
// when every value is k/255.
void write_ppm(const Tensor& image, const std::string& path);

struct PpmInfo {
  int width = 0;
  int height = 0;
};

// Header only; cheap existence and bounds checks without pixel decoding.
PpmInfo read_ppm_header(const std::string& path);

struct DatasetRecord {
  std::string image;  // resolved path
  std::vector<evalmetrics::GroundTruth> boxes;
};

// Validates each box against the referenced image's bounds and the class id
// against num_classes.
std::vector<DatasetRecord> read_annotations(const std::string& path, int num_classes);

}  // namespace dataset
}  // namespace yoloret
