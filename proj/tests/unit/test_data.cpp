// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <set>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "dcsst/data.hpp"
#include "dcsst/error.hpp"
#include "dcsst/serialize.hpp"
#include "test_util.hpp"

namespace dcsst {
namespace {

namespace fs = std::filesystem;
using testing::bit_equal;
using testing::max_abs_diff;
using testing::slurp;
using testing::TempDir;

void write_bytes(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  out << bytes;
}

std::string bytes(std::initializer_list<int> values) {
  std::string s;
  for (int v : values) s.push_back(static_cast<char>(v));
  return s;
}

DatasetManifest flat_manifest(const std::vector<std::size_t>& per_class) {
  DatasetManifest m;
  for (std::size_t c = 0; c < per_class.size(); ++c) {
    m.classes.push_back("c" + std::to_string(c));
    for (std::size_t i = 0; i < per_class[c]; ++i) {
      const std::string id = m.classes.back() + "/" + std::to_string(i);
      m.records.push_back({id, id + ".ppm", static_cast<int>(c), {}});
    }
  }
  return m;
}

TEST(DecodeImage, P6TwoByTwo) {
  TempDir dir("p6");
  write_bytes(dir.str("a.ppm"), "P6\n2 2\n255\n" + bytes({255, 0, 0, 0, 255, 0, 0, 0, 255, 51, 102, 153}));
  const ImageRecord img = decode_image(dir.str("a.ppm"));
  EXPECT_EQ(img.height, 2u);
  EXPECT_EQ(img.width, 2u);
  ASSERT_EQ(img.pixels.shape(), (Shape{3, 2, 2}));
  // channel-major: R plane, G plane, B plane
  const std::vector<double> expected{1, 0, 0, 0.2, 0, 1, 0, 0.4, 0, 0, 1, 0.6};
  for (std::size_t i = 0; i < 12; ++i) EXPECT_NEAR(img.pixels[i], expected[i], 1e-15);
}

TEST(DecodeImage, GrayReplicationCommentsAndSixteenBit) {
  TempDir dir("p5");
  write_bytes(dir.str("g.pgm"), "P5 # a comment\n# another\n3 1\n255\n" + bytes({0, 128, 255}));
  const ImageRecord g = decode_image(dir.str("g.pgm"));
  for (std::size_t c = 0; c < 3; ++c) {
    EXPECT_EQ(g.pixels[c * 3 + 0], 0.0);
    EXPECT_NEAR(g.pixels[c * 3 + 1], 128.0 / 255.0, 1e-15);
    EXPECT_EQ(g.pixels[c * 3 + 2], 1.0);
  }
  write_bytes(dir.str("w.pgm"), "P5\n2 1\n65535\n" + bytes({0x80, 0x00, 0xff, 0xff}));
  const ImageRecord w = decode_image(dir.str("w.pgm"));
  EXPECT_NEAR(w.pixels[0], 32768.0 / 65535.0, 1e-15);
  EXPECT_EQ(w.pixels[1], 1.0);
}

TEST(DecodeImage, MalformedFilesReportOffsets) {
  TempDir dir("bad");
  write_bytes(dir.str("t.ppm"), "P6\n2 2\n255\n" + bytes({1, 2, 3}));
  try {
    decode_image(dir.str("t.ppm"));
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("byte offset 11"), std::string::npos) << e.what();
  }
  write_bytes(dir.str("m.ppm"), "P3\n1 1\n255\n0 0 0\n");
  EXPECT_THROW(decode_image(dir.str("m.ppm")), FormatError);
  write_bytes(dir.str("h.ppm"), "P6\nx 2\n255\n");
  EXPECT_THROW(decode_image(dir.str("h.ppm")), FormatError);
  write_bytes(dir.str("v.pgm"), "P5\n1 1\n10\n" + bytes({11}));
  EXPECT_THROW(decode_image(dir.str("v.pgm")), FormatError);
  EXPECT_THROW(decode_image(dir.str("missing.ppm")), IoError);
}

TEST(DecodeImage, WritePpmRoundTripAndTensorFiles) {
  TempDir dir("rt");
  Rng rng(1);
  const Tensor px = Tensor::uniform({3, 5, 4}, rng, 0.0, 1.0);
  write_ppm(dir.str("r.ppm"), px);
  const ImageRecord back = decode_image(dir.str("r.ppm"));
  EXPECT_LE(max_abs_diff(back.pixels, px), 0.5 / 255.0 + 1e-12);
  {
    std::ofstream out(dir.str("t.dcst"), std::ios::binary);
    write_tensor(out, px);
  }
  EXPECT_TRUE(bit_equal(decode_image(dir.str("t.dcst")).pixels, px));
}

TEST(Manifest, DirectoryScanAndJsonRoundTrip) {
  TempDir dir("scan");
  fs::create_directories(dir.path() / "root" / "b");
  fs::create_directories(dir.path() / "root" / "a");
  const std::string one = "P5\n1 1\n255\n" + bytes({7});
  write_bytes(dir.str("root/b/y.pgm"), one);
  write_bytes(dir.str("root/a/z.ppm"), "P6\n1 1\n255\n" + bytes({1, 2, 3}));
  write_bytes(dir.str("root/a/x.pgm"), one);
  const DatasetManifest m = load_manifest(dir.str("root"));
  EXPECT_EQ(m.classes, (std::vector<std::string>{"a", "b"}));
  ASSERT_EQ(m.records.size(), 3u);
  EXPECT_EQ(m.records[0].id, "a/x.pgm");
  EXPECT_EQ(m.records[1].id, "a/z.ppm");
  EXPECT_EQ(m.records[2].label, 1);

  write_manifest(dir.str("root/manifest.json"), m);
  const DatasetManifest j = load_manifest(dir.str("root/manifest.json"));
  EXPECT_EQ(j.classes, m.classes);
  ASSERT_EQ(j.records.size(), 3u);
  EXPECT_EQ(j.records[1].path, "a/z.ppm");
  EXPECT_EQ(j.index_of("b/y.pgm"), 2u);
  EXPECT_THROW(j.index_of("nope"), IndexError);

  fs::create_directories(dir.path() / "root" / "c");
  EXPECT_THROW(load_manifest(dir.str("root")), ConfigError);
}

TEST(Manifest, ValidationErrors) {
  DatasetManifest m = flat_manifest({2, 2});
  m.records[1].id = m.records[0].id;
  EXPECT_THROW(m.validate(false), ConfigError);
  m = flat_manifest({2, 2});
  m.records[0].label = 5;
  EXPECT_THROW(m.validate(false), ConfigError);
  TempDir dir("badjson");
  write_bytes(dir.str("m.json"), "{\"classes\": [\"a\"], \"records\": [{\"id\": 3}]}");
  EXPECT_THROW(load_manifest(dir.str("m.json")), FormatError);
}

TEST(Split, HundredSamplesGiveTwentyEightyFour) {
  const DatasetSplit s = stratified_split(flat_manifest({100}), 0.8, 0.05, 7);
  EXPECT_EQ(s.test.size(), 20u);
  EXPECT_EQ(s.labeled.size() + s.unlabeled.size(), 80u);
  EXPECT_EQ(s.labeled.size(), 4u);
  EXPECT_EQ(s.audit[0], (std::array<std::size_t, 3>{4, 76, 20}));
}

TEST(Split, DisjointExhaustiveAndStratifiedProperty) {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<std::size_t> counts;
    const std::size_t classes = 2 + rng() % 3;
    for (std::size_t c = 0; c < classes; ++c) counts.push_back(5 + rng() % 60);
    const DatasetManifest m = flat_manifest(counts);
    const double train = 0.5 + 0.4 * uniform01(rng), lab = 0.05 + 0.9 * uniform01(rng);
    const DatasetSplit s = stratified_split(m, train, lab, rng());
    std::set<std::string> seen;
    for (const auto* pool : {&s.labeled, &s.unlabeled, &s.test}) {
      for (const auto& id : *pool) EXPECT_TRUE(seen.insert(id).second) << id;
    }
    EXPECT_EQ(seen.size(), m.records.size());
    for (std::size_t c = 0; c < classes; ++c) {
      const auto n_train = static_cast<std::size_t>(std::llround(counts[c] * train));
      const auto n_lab = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(n_train * lab)));
      EXPECT_EQ(s.audit[c][0], n_lab);
      EXPECT_EQ(s.audit[c][0] + s.audit[c][1], n_train);
      EXPECT_EQ(s.audit[c][2], counts[c] - n_train);
      std::size_t labeled_here = 0;
      for (const auto& id : s.labeled) labeled_here += m.records[m.index_of(id)].label == static_cast<int>(c);
      EXPECT_EQ(labeled_here, n_lab);
    }
  }
}

TEST(Split, DeterministicFullLabelsAndFileRoundTrip) {
  const DatasetManifest m = flat_manifest({30, 40});
  const DatasetSplit a = stratified_split(m, 0.8, 0.05, 11), b = stratified_split(m, 0.8, 0.05, 11);
  EXPECT_EQ(a.labeled, b.labeled);
  EXPECT_EQ(a.test, b.test);
  EXPECT_NE(stratified_split(m, 0.8, 0.05, 12).labeled, a.labeled);
  const DatasetSplit all = stratified_split(m, 0.8, 1.0, 11);
  EXPECT_TRUE(all.unlabeled.empty());
  EXPECT_EQ(all.labeled.size(), 56u);
  EXPECT_THROW(stratified_split(flat_manifest({1, 5}), 0.4, 0.5, 0), ConfigError);
  EXPECT_THROW(stratified_split(m, 0.8, 0.0, 0), ConfigError);

  TempDir dir("split");
  write_split(dir.str("s.json"), a);
  const DatasetSplit r = read_split(dir.str("s.json"));
  EXPECT_EQ(r.labeled, a.labeled);
  EXPECT_EQ(r.unlabeled, a.unlabeled);
  EXPECT_EQ(r.test, a.test);
  EXPECT_EQ(r.audit, a.audit);
  EXPECT_EQ(r.seed, 11u);
  EXPECT_NE(format_audit(a).find("c1"), std::string::npos);
}

TEST(Resize, IdentityConstantAndLinearRamp) {
  Rng rng(2);
  const Tensor img = Tensor::uniform({3, 7, 5}, rng, 0.0, 1.0);
  EXPECT_TRUE(bit_equal(resize_bilinear(img, 7, 5), img));
  const Tensor flat = resize_bilinear(Tensor::full({3, 6, 6}, 0.3), 11, 4);
  for (double v : flat.data()) EXPECT_NEAR(v, 0.3, 1e-15);

  // A linear ramp in pixel-center coordinates is reproduced exactly away
  // from the clamped border.
  const std::size_t S = 8, T = 16;
  Tensor ramp({1, S, S});
  for (std::size_t y = 0; y < S; ++y) {
    for (std::size_t x = 0; x < S; ++x) ramp.mutable_data()[y * S + x] = 0.1 * x + 0.02 * y;
  }
  const Tensor up = resize_bilinear(ramp, T, T);
  for (std::size_t y = 1; y + 1 < T; ++y) {
    for (std::size_t x = 1; x + 1 < T; ++x) {
      const double sx = (x + 0.5) * S / T - 0.5, sy = (y + 0.5) * S / T - 0.5;
      EXPECT_NEAR(up[y * T + x], 0.1 * sx + 0.02 * sy, 1e-12);
    }
  }
}

TEST(ChannelStats, KnownValuesAndNormalization) {
  Tensor x({2, 2, 1, 2});
  const std::vector<double> v{1, 3, 0, 0, 5, 7, 0, 0};
  for (std::size_t i = 0; i < 8; ++i) x.mutable_data()[i] = v[i];
  const ChannelStats s = compute_channel_stats(x);
  EXPECT_DOUBLE_EQ(s.mean[0], 4.0);
  EXPECT_DOUBLE_EQ(s.stddev[0], std::sqrt(5.0));
  EXPECT_EQ(s.mean[1], 0.0);
  EXPECT_EQ(s.stddev[1], 0.0);
  const Tensor n = normalize_channels(x, s);
  EXPECT_NEAR(n[0], -3.0 / std::sqrt(5.0), 1e-15);
  EXPECT_EQ(n[2], 0.0);
}

TEST(ChannelStats, ComputedFromLabeledPoolOnly) {
  Rng rng(4);
  const Tensor labeled = Tensor::uniform({4, 3, 4, 4}, rng, 0.0, 1.0);
  const Tensor other = Tensor::uniform({6, 3, 4, 4}, rng, 5.0, 9.0);
  const ChannelStats a = compute_channel_stats(labeled);
  const ChannelStats b = compute_channel_stats(labeled.detach());
  EXPECT_EQ(a.mean, b.mean);
  const Tensor norm = normalize_channels(other, a);
  EXPECT_GT(norm[0], 4.0);  // far outside the labeled range: no leakage
}

TEST(Synth, DeterministicBytes) {
  TempDir a("synth_a"), b("synth_b");
  SynthConfig cfg;
  cfg.per_class = 3;
  cfg.image_size = 16;
  cfg.seed = 5;
  const std::string ma = synth_generate(cfg, a.str("d")), mb = synth_generate(cfg, b.str("d"));
  const DatasetManifest m = load_manifest(ma);
  EXPECT_EQ(m.records.size(), 12u);
  for (const auto& r : m.records) EXPECT_EQ(slurp(a.str("d/" + r.path)), slurp(b.str("d/" + r.path)));
  EXPECT_EQ(slurp(ma), slurp(mb));
  cfg.num_classes = 5;
  EXPECT_THROW(synth_generate(cfg, a.str("e")), ConfigError);
}

// Energy per class frequency band of the green channel, which carries no tint.
std::size_t dominant_class(const Tensor& img, std::size_t S, std::size_t classes) {
  std::vector<double> plane(S * S);
  double mean = 0.0;
  for (std::size_t i = 0; i < S * S; ++i) mean += (plane[i] = img[S * S + i]);
  mean /= S * S;
  std::vector<double> energy(classes, 0.0);
  for (std::size_t ky = 0; ky < S; ++ky) {
    for (std::size_t kx = 0; kx < S; ++kx) {
      double re = 0.0, im = 0.0;
      for (std::size_t y = 0; y < S; ++y) {
        for (std::size_t x = 0; x < S; ++x) {
          const double a = -2.0 * std::numbers::pi * (double(kx * x) + double(ky * y)) / S;
          re += (plane[y * S + x] - mean) * std::cos(a);
          im += (plane[y * S + x] - mean) * std::sin(a);
        }
      }
      const double fx = (kx <= S / 2 ? double(kx) : double(kx) - S) / S;
      const double fy = (ky <= S / 2 ? double(ky) : double(ky) - S) / S;
      const double r = std::hypot(fx, fy);
      std::size_t best = 0;
      for (std::size_t c = 1; c < classes; ++c) {
        if (std::abs(r - synth_class_frequency(c, classes)) < std::abs(r - synth_class_frequency(best, classes))) {
          best = c;
        }
      }
      energy[best] += re * re + im * im;
    }
  }
  return static_cast<std::size_t>(std::max_element(energy.begin(), energy.end()) - energy.begin());
}

TEST(Synth, FrequencyBandsIdentifyClassesWithoutOverlap) {
  SynthConfig cfg;
  cfg.image_size = 32;
  std::size_t correct = 0, total = 0;
  for (std::size_t c = 0; c < 4; ++c) {
    for (std::size_t i = 0; i < 50; ++i) {
      Rng rng = make_stream(i, "dft");
      correct += dominant_class(synth_image(c, cfg, rng), 32, 4) == c;
      ++total;
    }
  }
  EXPECT_GT(static_cast<double>(correct) / total, 0.99) << correct << "/" << total;
}

TEST(Dataset, LoadImagesResizesAndBatches) {
  TempDir dir("load");
  SynthConfig cfg;
  cfg.per_class = 2;
  cfg.image_size = 12;
  cfg.num_classes = 2;
  const DatasetManifest m = load_manifest(synth_generate(cfg, dir.str("d")));
  const std::vector<std::string> ids{m.records[3].id, m.records[0].id};
  const TensorDataset d = load_images(m, ids, 8);
  EXPECT_EQ(d.images.shape(), (Shape{2, 3, 8, 8}));
  EXPECT_EQ(d.labels, (std::vector<int>{1, 0}));
  EXPECT_EQ(d.batch({1}).shape(), (Shape{1, 3, 8, 8}));
  EXPECT_EQ(d.batch_labels({1, 0}), (std::vector<int>{0, 1}));
}

}  // namespace
}  // namespace dcsst
