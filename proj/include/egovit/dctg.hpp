#pragma once

#include <optional>
#include <string>
#include <vector>

#include "egovit/features.hpp"
#include "egovit/nn.hpp"

namespace egovit {

enum class InterFeature { avg, qkv };
enum class InterFrame { lstm, qkv };

inline InterFeature parse_inter_feature(const std::string& s) {
  if (s == "avg") return InterFeature::avg;
  if (s == "qkv") return InterFeature::qkv;
  throw std::invalid_argument("dctg.inter_feature must be 'avg' or 'qkv', got '" + s + "'");
}

inline InterFrame parse_inter_frame(const std::string& s) {
  if (s == "lstm") return InterFrame::lstm;
  if (s == "qkv") return InterFrame::qkv;
  throw std::invalid_argument("dctg.inter_frame must be 'lstm' or 'qkv', got '" + s + "'");
}

inline const char* to_string(InterFeature v) { return v == InterFeature::avg ? "avg" : "qkv"; }
inline const char* to_string(InterFrame v) { return v == InterFrame::lstm ? "lstm" : "qkv"; }

struct DctgConfig {
  InterFeature inter_feature = InterFeature::avg;
  InterFrame inter_frame = InterFrame::lstm;
  int model_dim = 16;  // D
  int f_det = 8;
};

constexpr int kDctgLstmLayers = 2;

struct DctgParams {
  LinearParams input_proj;                 // [F_det, D]
  std::optional<LstmParams> temporal_lstm; // inter_frame == lstm
  std::optional<MhaParams> temporal_attn;  // inter_frame == qkv
  std::optional<MhaParams> feature_attn;   // inter_feature == qkv

  static DctgParams init(const DctgConfig& cfg, Rng& rng) {
    DctgParams p;
    p.input_proj = LinearParams::init(cfg.f_det, cfg.model_dim, rng);
    if (cfg.inter_feature == InterFeature::qkv)
      p.feature_attn = MhaParams::init(cfg.f_det, 1, rng);
    if (cfg.inter_frame == InterFrame::lstm)
      p.temporal_lstm = LstmParams::init(cfg.model_dim, cfg.model_dim, kDctgLstmLayers, rng);
    else
      p.temporal_attn = MhaParams::init(cfg.model_dim, 1, rng);
    return p;
  }

  void collect(std::vector<Tensor>& o) const {
    input_proj.collect(o);
    if (feature_attn) feature_attn->collect(o);
    if (temporal_lstm) temporal_lstm->collect(o);
    if (temporal_attn) temporal_attn->collect(o);
  }
};

namespace detail {

/// Masked mean over the rows of a [n, d] tensor; all rows masked gives zero.
inline Tensor masked_row_mean(const Tensor& rows, const std::vector<int>& keep) {
  std::vector<int> idx;
  for (std::size_t i = 0; i < keep.size(); ++i)
    if (keep[i]) idx.push_back(static_cast<int>(i));
  if (idx.empty()) return Tensor({1, rows.dim(1)});
  return mean_axis(gather_rows(rows, rows.dim(1), idx), 0).reshaped({1, rows.dim(1)});
}

}  // namespace detail

/// Collapses the 2M detection slots of each frame into one vector.
/// avg: masked mean over unmasked slots. qkv: self-attention across the 2M
/// slot vectors, then masked mean of the attended outputs. Both map an
/// all-masked frame to the zero vector.
inline Tensor inter_feature_reduce(const HandObjectFeatures& f, const DctgConfig& cfg,
                                   const DctgParams& params) {
  detail::require(f.f_det == cfg.f_det, "inter_feature_reduce: F_det mismatch (" +
                                            std::to_string(f.f_det) + " vs " +
                                            std::to_string(cfg.f_det) + ")");
  const int slots = 2 * f.m;
  Tensor flat = f.features.reshaped({f.t * slots, f.f_det});
  std::vector<Tensor> frame_rows;
  for (int t = 0; t < f.t; ++t) {
    Tensor frame = slice_rows(flat, t * slots, slots);
    std::vector<int> keep(static_cast<std::size_t>(slots));
    for (int s = 0; s < slots; ++s)
      keep[static_cast<std::size_t>(s)] = f.mask.at(static_cast<std::size_t>(t) * slots + s) != 0.0;
    if (cfg.inter_feature == InterFeature::qkv)
      frame = multi_head_attention(frame, *params.feature_attn).out;
    frame_rows.push_back(detail::masked_row_mean(frame, keep));
  }
  return concat_rows(frame_rows);  // [T, F_det]
}

/// Collapses T frame vectors into one: the 2-layer LSTM's last state, or
/// self-attention over frames followed by the average frame vector.
inline Tensor inter_frame_aggregate(const Tensor& seq, const DctgConfig& cfg,
                                    const DctgParams& params) {
  detail::require(seq.rank() == 2 && seq.dim(0) >= 1, "inter_frame_aggregate: seq must be [T,D]");
  if (cfg.inter_frame == InterFrame::lstm)
    return lstm_forward(seq, *params.temporal_lstm).last;
  Tensor attended = multi_head_attention(seq, *params.temporal_attn).out;
  return mean_axis(attended, 0);
}

/// x_cls = aggregate(project(reduce(F^HO))), a single [D] vector per clip.
inline Tensor generate_class_token(const HandObjectFeatures& f, const DctgConfig& cfg,
                                   const DctgParams& params) {
  Tensor reduced = inter_feature_reduce(f, cfg, params);
  Tensor projected = linear_forward(reduced, params.input_proj);
  return inter_frame_aggregate(projected, cfg, params);
}

}  // namespace egovit
