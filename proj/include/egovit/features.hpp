#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "egovit/io.hpp"
#include "egovit/rng.hpp"
#include "egovit/tensor.hpp"

namespace egovit {

constexpr double kDetectionConfidenceThreshold = 0.5;  // strict: conf must exceed it

enum class DetectionKind { hand, object };

struct DetectionRecord {
  DetectionKind kind = DetectionKind::hand;
  std::array<double, 4> bbox{0, 0, 1, 1};  // x1,y1,x2,y2 in pixels
  double confidence = 0.0;
  Tensor feature;  // [F_det]

  void validate() const {
    detail::require(bbox[0] < bbox[2] && bbox[1] < bbox[3],
                    "DetectionRecord: degenerate bbox");
    detail::require(confidence >= 0.0 && confidence <= 1.0,
                    "DetectionRecord: confidence outside [0,1]");
    detail::require(feature.rank() == 1, "DetectionRecord: feature must be a vector");
  }
};

struct FrameSelection {
  Tensor packed;          // [2M, F_det]; hands in slots [0,M), objects in [M,2M)
  std::vector<int> mask;  // 2M entries of 0/1; padded slots are zero rows
};

/// Keeps the top-M hands and top-M objects with confidence strictly above
/// 0.5, sorted by descending confidence (stable, so input order breaks ties),
/// and zero-pads missing slots.
inline FrameSelection select_top_m(const std::vector<DetectionRecord>& detections, int m,
                                   int f_det) {
  detail::require(m >= 1, "select_top_m: M must be >= 1");
  std::vector<const DetectionRecord*> hands, objects;
  for (const DetectionRecord& d : detections) {
    d.validate();
    detail::require(d.feature.dim(0) == f_det,
                    "select_top_m: feature dim " + std::to_string(d.feature.dim(0)) +
                        ", expected " + std::to_string(f_det));
    if (d.confidence > kDetectionConfidenceThreshold)
      (d.kind == DetectionKind::hand ? hands : objects).push_back(&d);
  }
  auto by_conf = [](const DetectionRecord* a, const DetectionRecord* b) {
    return a->confidence > b->confidence;
  };
  std::stable_sort(hands.begin(), hands.end(), by_conf);
  std::stable_sort(objects.begin(), objects.end(), by_conf);

  FrameSelection out;
  out.packed = Tensor({2 * m, f_det});
  out.mask.assign(static_cast<std::size_t>(2 * m), 0);
  auto fill = [&](const std::vector<const DetectionRecord*>& src, int slot0) {
    for (int i = 0; i < m && i < static_cast<int>(src.size()); ++i) {
      const int slot = slot0 + i;
      for (int j = 0; j < f_det; ++j)
        out.packed.at(static_cast<std::size_t>(slot) * f_det + j) =
            src[static_cast<std::size_t>(i)]->feature.at(static_cast<std::size_t>(j));
      out.mask[static_cast<std::size_t>(slot)] = 1;
    }
  };
  fill(hands, 0);
  fill(objects, m);
  return out;
}

/// Pre-extracted hand-object feature stream for one clip, packed to
/// [T, 2M, F_det] with a 0/1 pad mask. Read-only after construction.
struct HandObjectFeatures {
  Tensor features;  // [T, 2M, F_det]
  Tensor mask;      // [T, 2M]
  int t = 0, m = 0, f_det = 0;

  static HandObjectFeatures pack(const std::vector<std::vector<DetectionRecord>>& frames,
                                 int m, int f_det) {
    detail::require(!frames.empty(), "HandObjectFeatures: no frames");
    HandObjectFeatures out;
    out.t = static_cast<int>(frames.size());
    out.m = m;
    out.f_det = f_det;
    out.features = Tensor({out.t, 2 * m, f_det});
    out.mask = Tensor({out.t, 2 * m});
    for (int fi = 0; fi < out.t; ++fi) {
      FrameSelection sel = select_top_m(frames[static_cast<std::size_t>(fi)], m, f_det);
      for (std::size_t i = 0; i < sel.packed.size(); ++i)
        out.features.at(static_cast<std::size_t>(fi) * sel.packed.size() + i) = sel.packed.at(i);
      for (int s = 0; s < 2 * m; ++s)
        out.mask.at(static_cast<std::size_t>(fi) * 2 * m + s) = sel.mask[static_cast<std::size_t>(s)];
    }
    return out;
  }

  /// Consecutive frame range [from, from+count), used for phase grouping.
  HandObjectFeatures slice_frames(int from, int count) const {
    detail::require(from >= 0 && count >= 1 && from + count <= t,
                    "slice_frames: range out of bounds");
    HandObjectFeatures out;
    out.t = count;
    out.m = m;
    out.f_det = f_det;
    out.features = Tensor({count, 2 * m, f_det});
    out.mask = Tensor({count, 2 * m});
    const std::size_t row = static_cast<std::size_t>(2 * m) * f_det;
    for (int fi = 0; fi < count; ++fi) {
      for (std::size_t i = 0; i < row; ++i)
        out.features.at(static_cast<std::size_t>(fi) * row + i) =
            features.at(static_cast<std::size_t>(from + fi) * row + i);
      for (int s = 0; s < 2 * m; ++s)
        out.mask.at(static_cast<std::size_t>(fi) * 2 * m + s) =
            mask.at(static_cast<std::size_t>(from + fi) * 2 * m + s);
    }
    return out;
  }

  void validate() const {
    detail::require(features.shape() == (std::vector<int>{t, 2 * m, f_det}),
                    "HandObjectFeatures: feature shape mismatch");
    detail::require(mask.shape() == (std::vector<int>{t, 2 * m}),
                    "HandObjectFeatures: mask shape mismatch");
    for (std::size_t s = 0; s < mask.size(); ++s) {
      double mv = mask.at(s);
      detail::require(mv == 0.0 || mv == 1.0, "HandObjectFeatures: mask entry not 0/1");
      if (mv == 0.0)
        for (int j = 0; j < f_det; ++j)
          detail::require(features.at(s * f_det + j) == 0.0,
                          "HandObjectFeatures: non-zero padded slot");
    }
  }
};

// ---------------------------------------------------------------------------
// HOF container: "HOF1" magic, LE u32 version/T/M/F_det, f32 payload, mask bytes.
// ---------------------------------------------------------------------------

constexpr const char* kHofMagic = "HOF1";
constexpr std::uint32_t kHofVersion = 1;

inline std::string encode_hof(const HandObjectFeatures& f) {
  f.validate();
  std::string out;
  out.append(kHofMagic, 4);
  io::append_u32_le(out, kHofVersion);
  io::append_u32_le(out, static_cast<std::uint32_t>(f.t));
  io::append_u32_le(out, static_cast<std::uint32_t>(f.m));
  io::append_u32_le(out, static_cast<std::uint32_t>(f.f_det));
  for (std::size_t i = 0; i < f.features.size(); ++i)
    io::append_f32_le(out, static_cast<float>(f.features.at(i)));
  for (std::size_t i = 0; i < f.mask.size(); ++i)
    out.push_back(static_cast<char>(f.mask.at(i) != 0.0 ? 1 : 0));
  return out;
}

inline HandObjectFeatures decode_hof(const std::string& buf) {
  if (buf.size() < 20) throw std::runtime_error("HOF: truncated header");
  if (buf.compare(0, 4, kHofMagic) != 0) throw std::runtime_error("HOF: bad magic");
  const std::uint32_t version = io::read_u32_le(buf, 4);
  if (version != kHofVersion)
    throw std::runtime_error("HOF: version mismatch (got " + std::to_string(version) + ")");
  const std::uint32_t t = io::read_u32_le(buf, 8);
  const std::uint32_t m = io::read_u32_le(buf, 12);
  const std::uint32_t f_det = io::read_u32_le(buf, 16);
  if (t == 0 || m == 0 || f_det == 0) throw std::runtime_error("HOF: zero dimension in header");
  const std::uint64_t slots = static_cast<std::uint64_t>(t) * 2 * m;
  const std::uint64_t expect = 20 + slots * f_det * 4 + slots;
  if (buf.size() < expect) throw std::runtime_error("HOF: truncated payload");
  if (buf.size() != expect)
    throw std::runtime_error("HOF: header shape inconsistent with byte length (expected " +
                             std::to_string(expect) + " bytes, got " +
                             std::to_string(buf.size()) + ")");
  HandObjectFeatures out;
  out.t = static_cast<int>(t);
  out.m = static_cast<int>(m);
  out.f_det = static_cast<int>(f_det);
  out.features = Tensor({out.t, 2 * out.m, out.f_det});
  out.mask = Tensor({out.t, 2 * out.m});
  std::size_t off = 20;
  for (std::size_t i = 0; i < out.features.size(); ++i, off += 4)
    out.features.at(i) = static_cast<double>(io::read_f32_le(buf, off));
  for (std::size_t i = 0; i < out.mask.size(); ++i, ++off) {
    const unsigned char b = static_cast<unsigned char>(buf[off]);
    if (b > 1) throw std::runtime_error("HOF: mask byte not 0/1");
    out.mask.at(i) = b;
  }
  out.validate();
  return out;
}

inline void write_hof(const HandObjectFeatures& f, const std::filesystem::path& path) {
  io::atomic_write_file(path, encode_hof(f));
}

inline HandObjectFeatures load_hof(const std::filesystem::path& path) {
  return decode_hof(io::read_file(path));
}

// ---------------------------------------------------------------------------
// Clip container: "CLP1" magic, LE u32 version/T/H/W/C, f32 payload.
// ---------------------------------------------------------------------------

constexpr const char* kClipMagic = "CLP1";

inline std::string encode_clip(const Tensor& video) {
  detail::require(video.rank() == 4, "encode_clip: video must be [T,H,W,C]");
  std::string out;
  out.append(kClipMagic, 4);
  io::append_u32_le(out, 1);
  for (int i = 0; i < 4; ++i) io::append_u32_le(out, static_cast<std::uint32_t>(video.dim(i)));
  for (std::size_t i = 0; i < video.size(); ++i)
    io::append_f32_le(out, static_cast<float>(video.at(i)));
  return out;
}

inline Tensor decode_clip(const std::string& buf) {
  if (buf.size() < 24) throw std::runtime_error("CLP: truncated header");
  if (buf.compare(0, 4, kClipMagic) != 0) throw std::runtime_error("CLP: bad magic");
  if (io::read_u32_le(buf, 4) != 1) throw std::runtime_error("CLP: version mismatch");
  std::vector<int> shape(4);
  std::uint64_t numel = 1;
  for (int i = 0; i < 4; ++i) {
    shape[static_cast<std::size_t>(i)] = static_cast<int>(io::read_u32_le(buf, 8 + 4 * static_cast<std::size_t>(i)));
    if (shape[static_cast<std::size_t>(i)] <= 0) throw std::runtime_error("CLP: zero dimension in header");
    numel *= static_cast<std::uint64_t>(shape[static_cast<std::size_t>(i)]);
  }
  if (buf.size() != 24 + numel * 4)
    throw std::runtime_error("CLP: header shape inconsistent with byte length");
  Tensor video(shape);
  std::size_t off = 24;
  for (std::size_t i = 0; i < video.size(); ++i, off += 4)
    video.at(i) = static_cast<double>(io::read_f32_le(buf, off));
  return video;
}

inline void write_clip(const Tensor& video, const std::filesystem::path& path) {
  io::atomic_write_file(path, encode_clip(video));
}

inline Tensor load_clip(const std::filesystem::path& path) {
  return decode_clip(io::read_file(path));
}

// ---------------------------------------------------------------------------
// Synthetic dataset
// ---------------------------------------------------------------------------

/// Generator spec. Each class plants a class-specific unit direction into the
/// hand-object features (amplitude signal_strength over unit noise) and a
/// class-dependent moving bright patch into the video frames. Planting is
/// restricted to [active_from, active_to) frames; video_signal=false emits
/// all-zero frames so video carries no label information at all.
struct SyntheticSpec {
  int num_classes = 4;
  int clips_per_class = 8;
  int t = 8, h = 16, w = 16;
  int m = 1;
  int f_det = 8;
  double signal_strength = 5.0;
  std::uint64_t rng_seed = 1;
  bool video_signal = true;
  bool ho_signal = true;
  int active_from = 0;
  int active_to = -1;  // -1 means T
  int channels = 3;

  void validate() const {
    detail::require(num_classes >= 1 && clips_per_class >= 1, "SyntheticSpec: counts must be positive");
    detail::require(t >= 1 && h >= 1 && w >= 1 && channels >= 1, "SyntheticSpec: dims must be positive");
    detail::require(m >= 1 && f_det >= 1, "SyntheticSpec: M and F_det must be positive");
    detail::require(signal_strength >= 0.0, "SyntheticSpec: signal_strength must be >= 0");
    detail::require(num_classes <= f_det, "SyntheticSpec: need F_det >= num_classes for distinct directions");
  }
};

struct LabeledClip {
  Tensor video;  // [T,H,W,C]
  HandObjectFeatures features;
  int label = 0;
  std::string source_id;
};

inline SyntheticSpec parse_synthetic_spec(const nlohmann::json& j) {
  static const char* allowed[] = {"num_classes", "clips_per_class", "T",           "H",
                                  "W",           "C",               "M",           "f_det",
                                  "signal_strength", "rng_seed",    "video_signal", "ho_signal",
                                  "active_from", "active_to"};
  for (const auto& [key, value] : j.items()) {
    (void)value;
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw std::invalid_argument("synth spec: unknown key '" + key + "'");
  }
  SyntheticSpec spec;
  spec.num_classes = j.value("num_classes", spec.num_classes);
  spec.clips_per_class = j.value("clips_per_class", spec.clips_per_class);
  spec.t = j.value("T", spec.t);
  spec.h = j.value("H", spec.h);
  spec.w = j.value("W", spec.w);
  spec.channels = j.value("C", spec.channels);
  spec.m = j.value("M", spec.m);
  spec.f_det = j.value("f_det", spec.f_det);
  spec.signal_strength = j.value("signal_strength", spec.signal_strength);
  spec.rng_seed = j.value("rng_seed", spec.rng_seed);
  spec.video_signal = j.value("video_signal", spec.video_signal);
  spec.ho_signal = j.value("ho_signal", spec.ho_signal);
  spec.active_from = j.value("active_from", spec.active_from);
  spec.active_to = j.value("active_to", spec.active_to);
  spec.validate();
  return spec;
}

inline std::vector<LabeledClip> generate_synthetic_dataset(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng(spec.rng_seed);
  const int active_to = spec.active_to < 0 ? spec.t : spec.active_to;
  const int ph = std::max(1, spec.h / 4), pw = std::max(1, spec.w / 4);
  std::vector<LabeledClip> clips;
  for (int cls = 0; cls < spec.num_classes; ++cls) {
    for (int k = 0; k < spec.clips_per_class; ++k) {
      LabeledClip clip;
      clip.label = cls;
      clip.source_id = "synth-" + std::to_string(spec.rng_seed) + "-" +
                       std::to_string(cls * spec.clips_per_class + k);
      clip.video = Tensor({spec.t, spec.h, spec.w, spec.channels});
      if (spec.video_signal) {
        for (std::size_t i = 0; i < clip.video.size(); ++i) clip.video.at(i) = rng.normal();
        for (int t = std::max(0, spec.active_from); t < std::min(active_to, spec.t); ++t) {
          const int r0 = (3 * cls + 2 * t) % (spec.h - ph + 1);
          const int c0 = (5 * cls + 3 * t) % (spec.w - pw + 1);
          for (int r = r0; r < r0 + ph; ++r)
            for (int c = c0; c < c0 + pw; ++c)
              for (int ch = 0; ch < spec.channels; ++ch)
                clip.video.at(((static_cast<std::size_t>(t) * spec.h + r) * spec.w + c) *
                                  spec.channels + ch) += spec.signal_strength;
        }
      }
      std::vector<std::vector<DetectionRecord>> frames(static_cast<std::size_t>(spec.t));
      for (int t = 0; t < spec.t; ++t) {
        const bool active = spec.ho_signal && t >= spec.active_from && t < active_to;
        for (int i = 0; i < 2 * spec.m; ++i) {
          DetectionRecord d;
          d.kind = i < spec.m ? DetectionKind::hand : DetectionKind::object;
          const double x1 = rng.uniform(0.0, spec.w / 2.0), y1 = rng.uniform(0.0, spec.h / 2.0);
          d.bbox = {x1, y1, x1 + 1.0 + rng.uniform(0.0, spec.w / 2.0),
                    y1 + 1.0 + rng.uniform(0.0, spec.h / 2.0)};
          d.confidence = rng.uniform(0.6, 0.95);
          d.feature = Tensor({spec.f_det});
          for (int j = 0; j < spec.f_det; ++j) d.feature.at(static_cast<std::size_t>(j)) = rng.normal();
          if (active) d.feature.at(static_cast<std::size_t>(cls)) += spec.signal_strength;
          frames[static_cast<std::size_t>(t)].push_back(std::move(d));
        }
      }
      clip.features = HandObjectFeatures::pack(frames, spec.m, spec.f_det);
      clips.push_back(std::move(clip));
    }
  }
  return clips;
}

// ---------------------------------------------------------------------------
// Dataset directory layout: clip_%04d.clp / .hof / .json
// ---------------------------------------------------------------------------

inline std::string clip_stem(int index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "clip_%04d", index);
  return buf;
}

inline void write_dataset(const std::vector<LabeledClip>& clips,
                          const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < clips.size(); ++i) {
    const std::string stem = clip_stem(static_cast<int>(i));
    write_clip(clips[i].video, dir / (stem + ".clp"));
    write_hof(clips[i].features, dir / (stem + ".hof"));
    nlohmann::json meta{{"label", clips[i].label}, {"source_id", clips[i].source_id}};
    io::atomic_write_file(dir / (stem + ".json"), meta.dump(2) + "\n");
  }
}

inline std::vector<LabeledClip> load_dataset(const std::filesystem::path& dir) {
  std::vector<LabeledClip> clips;
  for (int i = 0;; ++i) {
    const std::string stem = clip_stem(i);
    const auto clp = dir / (stem + ".clp");
    if (!std::filesystem::exists(clp)) break;
    LabeledClip clip;
    clip.video = load_clip(clp);
    clip.features = load_hof(dir / (stem + ".hof"));
    nlohmann::json meta = nlohmann::json::parse(io::read_file(dir / (stem + ".json")));
    clip.label = meta.at("label").get<int>();
    clip.source_id = meta.value("source_id", "");
    detail::require(clip.video.dim(0) == clip.features.t,
                    "load_dataset: video/features frame count mismatch in " + stem);
    clips.push_back(std::move(clip));
  }
  if (clips.empty()) throw std::runtime_error("load_dataset: no clips under " + dir.string());
  return clips;
}

}  // namespace egovit
