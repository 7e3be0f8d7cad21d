#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "egovit/model.hpp"

namespace egovit {

// ---------------------------------------------------------------------------
// Class-token spatial attention maps
// ---------------------------------------------------------------------------

/// Per-frame spatial grid of nonnegative weights; each frame sums to 1.
struct AttentionMap {
  Tensor grid;  // [T', H', W']
};

/// Takes the class-token query row of the model's last attention block,
/// averages heads, scatters window members to their grid positions and
/// normalizes each temporal slice over the spatial axes.
inline AttentionMap extract_spatial_attention(const ForwardTrace& trace) {
  detail::require(!trace.last_attns.empty(), "extract_spatial_attention: trace not retained");
  const int t = trace.last_grid[0], h = trace.last_grid[1], w = trace.last_grid[2];
  AttentionMap map;
  map.grid = Tensor({t, h, w});
  detail::require(trace.last_posmap.size() == trace.last_attns.size(),
                  "extract_spatial_attention: window/attention count mismatch");
  for (std::size_t wi = 0; wi < trace.last_attns.size(); ++wi) {
    const Tensor& attn = trace.last_attns[wi];  // [heads, 1+n, 1+n]
    const int heads = attn.dim(0);
    const int rows = attn.dim(1);
    const auto& members = trace.last_posmap[wi];
    detail::require(rows == static_cast<int>(members.size()) + 1,
                    "extract_spatial_attention: attention row count does not match window size");
    for (std::size_t j = 0; j < members.size(); ++j) {
      double v = 0.0;
      for (int hd = 0; hd < heads; ++hd)
        v += attn.at((static_cast<std::size_t>(hd) * rows + 0) * rows + 1 + j);
      map.grid.at(static_cast<std::size_t>(members[j])) = v / heads;
    }
  }
  for (int ti = 0; ti < t; ++ti) {
    double sum = 0.0;
    for (int s = 0; s < h * w; ++s) sum += map.grid.at(static_cast<std::size_t>(ti) * h * w + s);
    detail::require(sum > 0.0, "extract_spatial_attention: empty frame");
    for (int s = 0; s < h * w; ++s) map.grid.at(static_cast<std::size_t>(ti) * h * w + s) /= sum;
  }
  return map;
}

/// Spatially averaged dynamic-merge weights, one score per phase; sums to 1.
inline Tensor phase_scores(const ForwardTrace& trace) {
  detail::require(trace.has_merge, "phase_scores: model ran without the dynamic merge");
  return mean_axis(trace.merge_scores.weights, 1);
}

/// Mean token over the spatial positions at each temporal slot of the last
/// block, [T_last, D_last].
inline Tensor temporal_feature_vectors(const ForwardTrace& trace) {
  detail::require(trace.last_token_map.defined(), "temporal_feature_vectors: trace not retained");
  const Tensor& m = trace.last_token_map;  // [T,H,W,D]
  Tensor rows = m.reshaped({m.dim(0), m.dim(1) * m.dim(2), m.dim(3)});
  return mean_axis(rows, 1);
}

// ---------------------------------------------------------------------------
// PCA (covariance + cyclic Jacobi eigendecomposition)
// ---------------------------------------------------------------------------

struct PcaResult {
  Tensor coords;              // [N, k]
  Tensor explained_variance;  // [k], non-increasing
  Tensor components;          // [D, k], unit columns, first nonzero loading positive
  Tensor mean;                // [D]
};

namespace detail {

/// Cyclic Jacobi on a symmetric matrix; returns eigenvalues and column
/// eigenvectors, unsorted.
inline void jacobi_eigen(std::vector<double>& a, int n, std::vector<double>& values,
                         std::vector<double>& vectors) {
  vectors.assign(static_cast<std::size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) vectors[static_cast<std::size_t>(i) * n + i] = 1.0;
  auto at = [&](int r, int c) -> double& { return a[static_cast<std::size_t>(r) * n + c]; };
  for (int sweep = 0; sweep < 128; ++sweep) {
    double off = 0.0;
    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q) off += at(p, q) * at(p, q);
    if (off < 1e-28) break;
    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q) {
        if (std::fabs(at(p, q)) < 1e-300) continue;
        const double theta = (at(q, q) - at(p, p)) / (2.0 * at(p, q));
        const double sign = theta >= 0.0 ? 1.0 : -1.0;
        const double t = sign / (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int i = 0; i < n; ++i) {
          const double aip = at(i, p), aiq = at(i, q);
          at(i, p) = c * aip - s * aiq;
          at(i, q) = s * aip + c * aiq;
        }
        for (int i = 0; i < n; ++i) {
          const double api = at(p, i), aqi = at(q, i);
          at(p, i) = c * api - s * aqi;
          at(q, i) = s * api + c * aqi;
        }
        for (int i = 0; i < n; ++i) {
          const double vip = vectors[static_cast<std::size_t>(i) * n + p];
          const double viq = vectors[static_cast<std::size_t>(i) * n + q];
          vectors[static_cast<std::size_t>(i) * n + p] = c * vip - s * viq;
          vectors[static_cast<std::size_t>(i) * n + q] = s * vip + c * viq;
        }
      }
  }
  values.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) values[static_cast<std::size_t>(i)] = at(i, i);
}

}  // namespace detail

/// Centers the rows, eigendecomposes the covariance (divide-by-N convention)
/// and projects onto the top-k components ordered by descending variance.
inline PcaResult pca_project(const Tensor& vectors, int k) {
  detail::require(vectors.rank() == 2, "pca_project: input must be [N,D]");
  const int n = vectors.dim(0), d = vectors.dim(1);
  detail::require(n >= 2, "pca_project: need at least two vectors");
  detail::require(k >= 1 && k <= std::min(n, d),
                  "pca_project: k=" + std::to_string(k) + " exceeds min(N,D)=" +
                      std::to_string(std::min(n, d)));
  PcaResult r;
  r.mean = Tensor({d});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) r.mean.at(static_cast<std::size_t>(j)) += vectors.at(static_cast<std::size_t>(i) * d + j);
  for (int j = 0; j < d; ++j) r.mean.at(static_cast<std::size_t>(j)) /= n;

  std::vector<double> centered(static_cast<std::size_t>(n) * d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j)
      centered[static_cast<std::size_t>(i) * d + j] =
          vectors.at(static_cast<std::size_t>(i) * d + j) - r.mean.at(static_cast<std::size_t>(j));

  std::vector<double> cov(static_cast<std::size_t>(d) * d, 0.0);
  for (int a = 0; a < d; ++a)
    for (int b = a; b < d; ++b) {
      double s = 0.0;
      for (int i = 0; i < n; ++i)
        s += centered[static_cast<std::size_t>(i) * d + a] * centered[static_cast<std::size_t>(i) * d + b];
      cov[static_cast<std::size_t>(a) * d + b] = cov[static_cast<std::size_t>(b) * d + a] = s / n;
    }

  std::vector<double> values, basis;
  detail::jacobi_eigen(cov, d, values, basis);
  std::vector<int> order(static_cast<std::size_t>(d));
  for (int i = 0; i < d; ++i) order[static_cast<std::size_t>(i)] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return values[static_cast<std::size_t>(a)] > values[static_cast<std::size_t>(b)]; });

  r.components = Tensor({d, k});
  r.explained_variance = Tensor({k});
  for (int c = 0; c < k; ++c) {
    const int src = order[static_cast<std::size_t>(c)];
    r.explained_variance.at(static_cast<std::size_t>(c)) = values[static_cast<std::size_t>(src)];
    // sign convention: first loading of noticeable magnitude is positive
    double sign = 1.0;
    for (int j = 0; j < d; ++j) {
      const double v = basis[static_cast<std::size_t>(j) * d + src];
      if (std::fabs(v) > 1e-12) {
        sign = v > 0.0 ? 1.0 : -1.0;
        break;
      }
    }
    for (int j = 0; j < d; ++j)
      r.components.at(static_cast<std::size_t>(j) * k + c) =
          sign * basis[static_cast<std::size_t>(j) * d + src];
  }
  r.coords = Tensor({n, k});
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < k; ++c) {
      double s = 0.0;
      for (int j = 0; j < d; ++j)
        s += centered[static_cast<std::size_t>(i) * d + j] * r.components.at(static_cast<std::size_t>(j) * k + c);
      r.coords.at(static_cast<std::size_t>(i) * k + c) = s;
    }
  return r;
}

// ---------------------------------------------------------------------------
// Analytic attention-cost counting
// ---------------------------------------------------------------------------

/// Multiply-accumulate counts per pipeline stage. The convention counts only
/// attention score products (QK^T), attention-value products, and linear
/// projections inside transformer blocks (QKV/O, the MLP pair, and the 2x2
/// merge matrices). Patch embedding, the DCTG, layer norms, softmax, GELU and
/// the classifier head are excluded. Reported paper-scale GFLOPs are not
/// reproduction targets; ratios and orderings are.
struct StageCost {
  std::string name;
  long long blocks = 0;
  long long score_macs = 0;
  long long av_macs = 0;
  long long proj_macs = 0;

  long long attention_macs() const { return score_macs + av_macs; }
};

struct CostReport {
  std::vector<StageCost> stages;

  long long attention_macs() const {
    long long s = 0;
    for (const StageCost& c : stages) s += c.attention_macs();
    return s;
  }
  long long projection_macs() const {
    long long s = 0;
    for (const StageCost& c : stages) s += c.proj_macs;
    return s;
  }
  long long total_macs() const { return attention_macs() + projection_macs(); }
};

namespace detail {

/// One attention+MLP block over `windows` windows of `tokens` tokens each
/// (token count includes the class token) at dim d.
inline StageCost block_cost(const std::string& name, long long blocks, long long windows,
                            long long tokens, long long d, long long mlp_hidden) {
  StageCost c;
  c.name = name;
  c.blocks = blocks;
  c.score_macs = blocks * windows * tokens * tokens * d;
  c.av_macs = blocks * windows * tokens * tokens * d;
  const long long total_tokens = windows * tokens;
  c.proj_macs = blocks * (4 * total_tokens * d * d + 2 * total_tokens * d * mlp_hidden);
  return c;
}

}  // namespace detail

/// Closed-form MAC counts for a config's block schedule; no forward pass runs.
inline CostReport attention_cost(const EgoViTConfig& cfg) {
  cfg.validate();
  const long long t_p = cfg.t_patches(), h_p = cfg.h_patches(), w_p = cfg.w_patches();
  const long long d = cfg.dim();
  const long long s_sp = h_p * w_p;
  CostReport report;

  if (cfg.backbone == BackboneKind::global) {
    if (!cfg.use_padm) {
      report.stages.push_back(detail::block_cost("backbone", cfg.total_depth, 1,
                                                 1 + t_p * s_sp, d, cfg.mlp_hidden(cfg.dim())));
      return report;
    }
    auto [l1, l2] = cfg.stage_depths();
    const long long g = cfg.groups;
    report.stages.push_back(detail::block_cost("stage1", l1, g, 1 + (t_p / g) * s_sp, d,
                                               cfg.mlp_hidden(cfg.dim())));
    // G=1 passes the stream through unpooled, so stage 2 sees the full clip.
    const long long t2 = g == 1 ? t_p : g;
    report.stages.push_back(
        detail::block_cost("stage2", l2, 1, 1 + t2 * s_sp, d, cfg.mlp_hidden(cfg.dim())));
    return report;
  }

  const long long wh = cfg.window_h, ww = cfg.window_w;
  if (!cfg.use_padm) {
    const long long wt = cfg.window_t == 0 ? t_p : cfg.window_t;
    const long long windows = (t_p / wt) * (h_p / wh) * (w_p / ww);
    report.stages.push_back(detail::block_cost("backbone", cfg.total_depth, windows,
                                               1 + wt * wh * ww, d, cfg.mlp_hidden(cfg.dim())));
    return report;
  }
  auto [l1, l2] = cfg.stage_depths();
  const long long g = cfg.groups;
  const long long windows1 = g * (h_p / wh) * (w_p / ww);
  report.stages.push_back(detail::block_cost("stage1", l1, windows1, 1 + (t_p / g) * wh * ww, d,
                                             cfg.mlp_hidden(cfg.dim())));
  const long long t2 = g == 1 ? t_p : g;
  long long hb = h_p, wb = w_p, db = d;
  StageCost s2;
  s2.name = "stage2";
  s2.blocks = l2;
  for (int b = 0; b < l2; ++b) {
    StageCost one = detail::block_cost("", 1, (hb / wh) * (wb / ww), 1 + t2 * wh * ww, db,
                                       cfg.mlp_hidden(static_cast<int>(db)));
    s2.score_macs += one.score_macs;
    s2.av_macs += one.av_macs;
    s2.proj_macs += one.proj_macs;
    if (b < cfg.stage2_merges) {
      // merge projections on both streams: positions * (4D x 2D)
      const long long merged_positions = t2 * (hb / 2) * (wb / 2);
      const long long ct_positions = (hb / wh / 2) * (wb / ww / 2);
      s2.proj_macs += (merged_positions + ct_positions) * 8 * db * db;
      hb /= 2;
      wb /= 2;
      db *= 2;
    }
  }
  report.stages.push_back(s2);
  return report;
}

inline std::string cost_report_csv(const CostReport& report) {
  std::string out = "stage,blocks,score_macs,av_macs,attention_macs,proj_macs,total_macs\n";
  char buf[192];
  long long score = 0, av = 0;
  for (const StageCost& c : report.stages) {
    score += c.score_macs;
    av += c.av_macs;
    std::snprintf(buf, sizeof(buf), "%s,%lld,%lld,%lld,%lld,%lld,%lld\n", c.name.c_str(), c.blocks,
                  c.score_macs, c.av_macs, c.attention_macs(), c.proj_macs,
                  c.attention_macs() + c.proj_macs);
    out += buf;
  }
  std::snprintf(buf, sizeof(buf), "total,,%lld,%lld,%lld,%lld,%lld\n", score, av,
                report.attention_macs(), report.projection_macs(), report.total_macs());
  out += buf;
  return out;
}

// ---------------------------------------------------------------------------
// PGM emission (binary P5, one file per frame)
// ---------------------------------------------------------------------------

/// Linear rescale of one [H,W] slice to 0..255; constant frames map to 0.
inline std::string encode_pgm(const Tensor& frame) {
  detail::require(frame.rank() == 2, "encode_pgm: frame must be [H,W]");
  const int h = frame.dim(0), w = frame.dim(1);
  double lo = frame.at(0), hi = frame.at(0);
  for (std::size_t i = 0; i < frame.size(); ++i) {
    lo = std::min(lo, frame.at(i));
    hi = std::max(hi, frame.at(i));
  }
  std::string out = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  const double span = hi - lo;
  for (std::size_t i = 0; i < frame.size(); ++i) {
    int v = span > 0.0 ? static_cast<int>(std::lround((frame.at(i) - lo) / span * 255.0)) : 0;
    out.push_back(static_cast<char>(v));
  }
  return out;
}

inline void write_attention_pgms(const AttentionMap& map, const std::filesystem::path& dir,
                                 const std::string& stem) {
  const int t = map.grid.dim(0), h = map.grid.dim(1), w = map.grid.dim(2);
  for (int ti = 0; ti < t; ++ti) {
    Tensor frame({h, w});
    for (int s = 0; s < h * w; ++s)
      frame.at(static_cast<std::size_t>(s)) = map.grid.at(static_cast<std::size_t>(ti) * h * w + s);
    char name[64];
    std::snprintf(name, sizeof(name), "%s_frame%03d.pgm", stem.c_str(), ti);
    io::atomic_write_file(dir / name, encode_pgm(frame));
  }
}

}  // namespace egovit
