#pragma once

#include "egovit/model.hpp"

namespace egovit::testing {

/// The canonical tiny config used across gradient and training tests:
/// T=8, H=W=16, C=3, D=16, G=2, one head, under 10k parameters.
inline EgoViTConfig canonical_tiny_config() {
  EgoViTConfig cfg;
  cfg.t = 8;
  cfg.h = cfg.w = 16;
  cfg.c = 3;
  cfg.patch = PatchConfig{2, 4, 4, 16};
  cfg.heads = 1;
  cfg.mlp_ratio = 1.0;  // keeps the full model under the 10k FD-oracle cap
  cfg.window_h = cfg.window_w = 2;
  cfg.num_classes = 4;
  cfg.backbone = BackboneKind::windowed;
  cfg.use_dctg = true;
  cfg.use_padm = true;
  cfg.stage2_merges = 0;
  cfg.dctg.inter_feature = InterFeature::avg;
  cfg.dctg.inter_frame = InterFrame::lstm;
  cfg.dctg.model_dim = 16;
  cfg.dctg.f_det = 8;
  cfg.groups = 2;
  cfg.depth_ratio = 1.0;
  cfg.total_depth = 2;
  return cfg;
}

/// Even smaller full-pipeline config for fast unit-level gradient checks.
inline EgoViTConfig micro_config() {
  EgoViTConfig cfg;
  cfg.t = 4;
  cfg.h = cfg.w = 8;
  cfg.c = 1;
  cfg.patch = PatchConfig{1, 4, 4, 4};
  cfg.heads = 1;
  cfg.mlp_ratio = 1.0;
  cfg.window_h = cfg.window_w = 2;
  cfg.num_classes = 3;
  cfg.backbone = BackboneKind::windowed;
  cfg.use_dctg = true;
  cfg.use_padm = true;
  cfg.dctg.inter_feature = InterFeature::avg;
  cfg.dctg.inter_frame = InterFrame::lstm;
  cfg.dctg.model_dim = 4;
  cfg.dctg.f_det = 4;
  cfg.groups = 2;
  cfg.depth_ratio = 1.0;
  cfg.total_depth = 2;
  return cfg;
}

inline SyntheticSpec spec_for(const EgoViTConfig& cfg) {
  SyntheticSpec spec;
  spec.num_classes = cfg.num_classes;
  spec.t = cfg.t;
  spec.h = cfg.h;
  spec.w = cfg.w;
  spec.channels = cfg.c;
  spec.m = 1;
  spec.f_det = cfg.dctg.f_det;
  return spec;
}

}  // namespace egovit::testing
