// Multi-scale fusion module: project every backbone scale to a common width
// with one 1x1 conv each, resize everything to one fusion resolution, blend
// with trainable normalized weights, refine once with a 5x5 inverted-residual
// block, then send the result back to each output scale through another 1x1
// conv added onto the raw feature. Collection is independent of how many
// output scales the head wants.
#pragma once

#include <map>
#include <string>
#include <vector>

#include "yoloret/autodiff.hpp"
#include "yoloret/backbone.hpp"
#include "yoloret/blocks.hpp"

namespace yoloret::rfcr {

struct RfcrConfig {
  std::vector<int> input_strides = {4, 8, 16, 32};
  std::vector<int> output_strides = {8, 16, 32};
  int fusion_stride = 8;
  // Common projection width. 32 keeps the whole module within a few percent
  // of the backbone's compute at the default resolution.
  int fusion_channels = 32;
  // Refinement block: 5x5 depthwise + pointwise (expansion 1), residual.
  blocks::BlockSpec refine;
  float fusion_eps = 1e-4f;

  void validate() const;
};

RfcrConfig default_rfcr_config(int fusion_channels = 32);

// Registers collect convs (input order), fusion weights, refine block, and
// redistribute convs (output order) under `prefix`. The parameter stream up
// to redistribution does not depend on output_strides, so two configs that
// share input settings and seed initialize the shared part identically.
void build_rfcr(ParamStore& store, const std::string& prefix, const RfcrConfig& cfg,
                const std::map<int, int>& stride_channels, Rng& rng);

std::vector<autodiff::Var> rfcr_collect(autodiff::Ctx& ctx,
                                        const backbone::FeaturePyramid& pyramid,
                                        const RfcrConfig& cfg, const std::string& prefix);

autodiff::Var rfcr_fuse(autodiff::Ctx& ctx, const std::vector<autodiff::Var>& projected,
                        const RfcrConfig& cfg, const std::string& prefix);

autodiff::Var rfcr_refine(autodiff::Ctx& ctx, const autodiff::Var& fused,
                          const RfcrConfig& cfg, const std::string& prefix);

backbone::FeaturePyramid rfcr_redistribute(autodiff::Ctx& ctx, const autodiff::Var& refined,
                                           const backbone::FeaturePyramid& raw,
                                           const RfcrConfig& cfg, const std::string& prefix);

backbone::FeaturePyramid rfcr_forward(autodiff::Ctx& ctx,
                                      const backbone::FeaturePyramid& pyramid,
                                      const RfcrConfig& cfg, const std::string& prefix);

// Resizes x from one stride's resolution to another's; both must be related
// by a power-of-two factor.
autodiff::Var resize_between_strides(autodiff::Ctx& ctx, const autodiff::Var& x,
                                     int from_stride, int to_stride,
                                     const std::string& label);

}  // namespace yoloret::rfcr
