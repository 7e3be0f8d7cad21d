#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <vector>

#include "egovit/features.hpp"
#include "egovit/rng.hpp"

using namespace egovit;
namespace fs = std::filesystem;

namespace {

DetectionRecord make_det(DetectionKind kind, double conf, double fill, int f_det) {
  DetectionRecord d;
  d.kind = kind;
  d.bbox = {0.0, 0.0, 4.0, 4.0};
  d.confidence = conf;
  d.feature = Tensor::full({f_det}, fill);
  return d;
}

HandObjectFeatures random_hof(int t, int m, int f_det, Rng& rng) {
  std::vector<std::vector<DetectionRecord>> frames(static_cast<std::size_t>(t));
  for (int fi = 0; fi < t; ++fi)
    for (int i = 0; i < 2 * m; ++i) {
      DetectionRecord d = make_det(i < m ? DetectionKind::hand : DetectionKind::object,
                                   rng.uniform(0.6, 0.99), 0.0, f_det);
      for (int j = 0; j < f_det; ++j) d.feature.at(static_cast<std::size_t>(j)) = rng.normal();
      frames[static_cast<std::size_t>(fi)].push_back(std::move(d));
    }
  return HandObjectFeatures::pack(frames, m, f_det);
}

fs::path temp_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / ("egovit_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

// ---------------------------------------------------------------------------
// select_top_m
// ---------------------------------------------------------------------------

TEST(SelectTopM, ThresholdIsStrict) {
  std::vector<DetectionRecord> dets{make_det(DetectionKind::hand, 0.5, 1.0, 4)};
  FrameSelection sel = select_top_m(dets, 1, 4);
  EXPECT_EQ(sel.mask[0], 0);
  for (int j = 0; j < 4; ++j) EXPECT_EQ(sel.packed.at(static_cast<std::size_t>(j)), 0.0);
}

TEST(SelectTopM, EmptyInputIsAllPadding) {
  FrameSelection sel = select_top_m({}, 2, 4);
  EXPECT_EQ(sel.packed.shape(), (std::vector<int>{4, 4}));
  for (int s = 0; s < 4; ++s) EXPECT_EQ(sel.mask[static_cast<std::size_t>(s)], 0);
  for (std::size_t i = 0; i < sel.packed.size(); ++i) EXPECT_EQ(sel.packed.at(i), 0.0);
}

TEST(SelectTopM, SortAndTruncate) {
  std::vector<DetectionRecord> dets{
      make_det(DetectionKind::hand, 0.55, 3.0, 2),
      make_det(DetectionKind::hand, 0.9, 1.0, 2),
      make_det(DetectionKind::hand, 0.6, 2.0, 2),
  };
  FrameSelection sel = select_top_m(dets, 2, 2);
  EXPECT_EQ(sel.packed.at(0), 1.0);  // conf 0.9 first
  EXPECT_EQ(sel.packed.at(2), 2.0);  // conf 0.6 second
  EXPECT_EQ(sel.mask[0], 1);
  EXPECT_EQ(sel.mask[1], 1);
  EXPECT_EQ(sel.mask[2], 0);  // no objects at all
  EXPECT_EQ(sel.mask[3], 0);
}

TEST(SelectTopM, HandsAndObjectsFillTheirOwnSlots) {
  std::vector<DetectionRecord> dets{
      make_det(DetectionKind::object, 0.8, 7.0, 2),
      make_det(DetectionKind::hand, 0.7, 5.0, 2),
  };
  FrameSelection sel = select_top_m(dets, 1, 2);
  EXPECT_EQ(sel.packed.at(0), 5.0);
  EXPECT_EQ(sel.packed.at(2), 7.0);
}

TEST(SelectTopM, PermutationInvariantForDistinctConfidences) {
  Rng rng(3);
  std::vector<DetectionRecord> dets;
  for (int i = 0; i < 6; ++i)
    dets.push_back(make_det(i % 2 ? DetectionKind::hand : DetectionKind::object,
                            0.55 + 0.05 * i, static_cast<double>(i), 3));
  FrameSelection base = select_top_m(dets, 2, 3);
  for (int trial = 0; trial < 10; ++trial) {
    rng.shuffle(dets);
    FrameSelection sel = select_top_m(dets, 2, 3);
    EXPECT_EQ(sel.mask, base.mask);
    for (std::size_t i = 0; i < base.packed.size(); ++i)
      EXPECT_EQ(sel.packed.at(i), base.packed.at(i));
  }
}

TEST(SelectTopM, MaskAndZeroRowsAgree) {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<DetectionRecord> dets;
    const int n = rng.uniform_int(6);
    for (int i = 0; i < n; ++i) {
      DetectionRecord d = make_det(rng.uniform() < 0.5 ? DetectionKind::hand : DetectionKind::object,
                                   rng.uniform(0.0, 1.0), 0.0, 3);
      for (int j = 0; j < 3; ++j) d.feature.at(static_cast<std::size_t>(j)) = 1.0 + rng.uniform();
      dets.push_back(std::move(d));
    }
    FrameSelection sel = select_top_m(dets, 2, 3);
    for (int s = 0; s < 4; ++s) {
      bool all_zero = true;
      for (int j = 0; j < 3; ++j)
        all_zero = all_zero && sel.packed.at(static_cast<std::size_t>(s) * 3 + j) == 0.0;
      if (sel.mask[static_cast<std::size_t>(s)] == 0)
        EXPECT_TRUE(all_zero);
      else
        EXPECT_FALSE(all_zero);
    }
  }
}

// ---------------------------------------------------------------------------
// HOF container
// ---------------------------------------------------------------------------

TEST(HofFormat, RoundTripIsByteIdentical) {
  Rng rng(7);
  HandObjectFeatures f = random_hof(8, 2, 32, rng);
  std::string bytes = encode_hof(f);
  HandObjectFeatures loaded = decode_hof(bytes);
  EXPECT_EQ(encode_hof(loaded), bytes);
  EXPECT_EQ(loaded.t, 8);
  EXPECT_EQ(loaded.m, 2);
  EXPECT_EQ(loaded.f_det, 32);
}

TEST(HofFormat, FileRoundTrip) {
  fs::path dir = temp_dir("hof_roundtrip");
  Rng rng(9);
  HandObjectFeatures f = random_hof(4, 1, 8, rng);
  write_hof(f, dir / "a.hof");
  HandObjectFeatures g = load_hof(dir / "a.hof");
  for (std::size_t i = 0; i < f.mask.size(); ++i) EXPECT_EQ(f.mask.at(i), g.mask.at(i));
  for (std::size_t i = 0; i < f.features.size(); ++i)
    EXPECT_EQ(static_cast<float>(f.features.at(i)), static_cast<float>(g.features.at(i)));
  fs::remove_all(dir);
}

TEST(HofFormat, BadMagicRejected) {
  Rng rng(11);
  std::string bytes = encode_hof(random_hof(2, 1, 4, rng));
  bytes[0] = 'X';
  try {
    decode_hof(bytes);
    FAIL() << "expected bad magic";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("magic"), std::string::npos);
  }
}

TEST(HofFormat, VersionMismatchRejected) {
  Rng rng(11);
  std::string bytes = encode_hof(random_hof(2, 1, 4, rng));
  bytes[4] = 2;
  try {
    decode_hof(bytes);
    FAIL() << "expected version mismatch";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("version"), std::string::npos);
  }
}

TEST(HofFormat, TruncatedPayloadRejected) {
  // Header claims T=8 but payload holds only 7 frames worth of data.
  Rng rng(13);
  std::string full = encode_hof(random_hof(8, 1, 4, rng));
  std::string bytes7 = encode_hof(random_hof(7, 1, 4, rng));
  std::string forged = full.substr(0, 20) + bytes7.substr(20);
  try {
    decode_hof(forged);
    FAIL() << "expected length error";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("truncated"), std::string::npos);
  }
}

TEST(HofFormat, EverySingleByteHeaderCorruptionRejected) {
  Rng rng(15);
  std::string bytes = encode_hof(random_hof(3, 2, 5, rng));
  for (std::size_t pos = 0; pos < 20; ++pos) {
    for (unsigned char delta : {0x01, 0xFF, 0x80}) {
      std::string corrupted = bytes;
      corrupted[pos] = static_cast<char>(static_cast<unsigned char>(corrupted[pos]) ^ delta);
      EXPECT_THROW(decode_hof(corrupted), std::runtime_error)
          << "header byte " << pos << " xor " << static_cast<int>(delta) << " was accepted";
    }
  }
}

TEST(HofFormat, MaskByteMustBeBinary) {
  Rng rng(17);
  std::string bytes = encode_hof(random_hof(2, 1, 3, rng));
  bytes[bytes.size() - 1] = 2;
  EXPECT_THROW(decode_hof(bytes), std::runtime_error);
}

TEST(ClipFormat, RoundTrip) {
  Rng rng(19);
  Tensor video({2, 4, 4, 3});
  for (std::size_t i = 0; i < video.size(); ++i) video.at(i) = rng.normal();
  std::string bytes = encode_clip(video);
  Tensor loaded = decode_clip(bytes);
  EXPECT_EQ(loaded.shape(), video.shape());
  EXPECT_EQ(encode_clip(loaded), bytes);
}

// ---------------------------------------------------------------------------
// Synthetic dataset
// ---------------------------------------------------------------------------

TEST(Synthetic, SameSeedGivesIdenticalDatasets) {
  SyntheticSpec spec;
  spec.num_classes = 3;
  spec.clips_per_class = 2;
  spec.t = 4;
  spec.h = spec.w = 8;
  spec.rng_seed = 42;
  auto a = generate_synthetic_dataset(spec);
  auto b = generate_synthetic_dataset(spec);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].label, b[i].label);
    for (std::size_t j = 0; j < a[i].video.size(); ++j)
      EXPECT_EQ(a[i].video.at(j), b[i].video.at(j));
    for (std::size_t j = 0; j < a[i].features.features.size(); ++j)
      EXPECT_EQ(a[i].features.features.at(j), b[i].features.features.at(j));
  }
}

TEST(Synthetic, ZeroSignalMeansAreIndistinguishable) {
  SyntheticSpec spec;
  spec.num_classes = 2;
  spec.clips_per_class = 50;  // 100 clips total
  spec.t = 4;
  spec.h = spec.w = 8;
  spec.f_det = 8;
  spec.signal_strength = 0.0;
  spec.rng_seed = 23;
  auto clips = generate_synthetic_dataset(spec);
  ASSERT_EQ(clips.size(), 100u);
  // Mean feature vector per class; with unit noise the mean over n samples has
  // std 1/sqrt(n), so per-coordinate gaps should stay below 3*sqrt(2/n).
  std::vector<std::vector<double>> mean(2, std::vector<double>(8, 0.0));
  std::vector<double> count(2, 0.0);
  for (const LabeledClip& c : clips) {
    for (int t = 0; t < c.features.t; ++t)
      for (int s = 0; s < 2 * c.features.m; ++s)
        for (int j = 0; j < 8; ++j)
          mean[static_cast<std::size_t>(c.label)][static_cast<std::size_t>(j)] +=
              c.features.features.at((static_cast<std::size_t>(t) * 2 * c.features.m + s) * 8 + j);
    count[static_cast<std::size_t>(c.label)] += c.features.t * 2.0 * c.features.m;
  }
  const double n = count[0];
  const double bound = 3.0 * std::sqrt(2.0 / n);
  for (int j = 0; j < 8; ++j) {
    double gap = std::fabs(mean[0][static_cast<std::size_t>(j)] / count[0] -
                           mean[1][static_cast<std::size_t>(j)] / count[1]);
    EXPECT_LT(gap, bound) << "coordinate " << j;
  }
}

TEST(Synthetic, CountsAndBalance) {
  SyntheticSpec spec;
  spec.num_classes = 4;
  spec.clips_per_class = 8;
  spec.t = 8;
  spec.h = spec.w = 8;
  auto clips = generate_synthetic_dataset(spec);
  ASSERT_EQ(clips.size(), 32u);
  std::vector<int> counts(4, 0);
  for (const LabeledClip& c : clips) counts[static_cast<std::size_t>(c.label)]++;
  for (int c = 0; c < 4; ++c) EXPECT_EQ(counts[static_cast<std::size_t>(c)], 8);
}

TEST(Synthetic, VideoSignalOffEmitsZeroFrames) {
  SyntheticSpec spec;
  spec.num_classes = 2;
  spec.clips_per_class = 1;
  spec.t = 2;
  spec.h = spec.w = 8;
  spec.video_signal = false;
  auto clips = generate_synthetic_dataset(spec);
  for (const LabeledClip& c : clips)
    for (std::size_t i = 0; i < c.video.size(); ++i) EXPECT_EQ(c.video.at(i), 0.0);
}

TEST(Synthetic, DatasetDirectoryRoundTrip) {
  fs::path dir = temp_dir("dataset_roundtrip");
  SyntheticSpec spec;
  spec.num_classes = 2;
  spec.clips_per_class = 2;
  spec.t = 4;
  spec.h = spec.w = 8;
  auto clips = generate_synthetic_dataset(spec);
  write_dataset(clips, dir);
  auto loaded = load_dataset(dir);
  ASSERT_EQ(loaded.size(), clips.size());
  for (std::size_t i = 0; i < clips.size(); ++i) {
    EXPECT_EQ(loaded[i].label, clips[i].label);
    EXPECT_EQ(loaded[i].source_id, clips[i].source_id);
    for (std::size_t j = 0; j < clips[i].video.size(); ++j)
      EXPECT_EQ(static_cast<float>(loaded[i].video.at(j)), static_cast<float>(clips[i].video.at(j)));
  }
  fs::remove_all(dir);
}
