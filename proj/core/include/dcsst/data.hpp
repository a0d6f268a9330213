// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "dcsst/rng.hpp"
#include "dcsst/tensor.hpp"

namespace dcsst {

struct ManifestRecord {
  std::string id;
  std::string path;  // relative to the manifest's base directory
  int label = 0;
  std::string tag;   // optional, e.g. magnification
};

struct DatasetManifest {
  std::vector<std::string> classes;
  std::vector<ManifestRecord> records;
  std::string base_dir;  // directory that record paths are relative to

  std::size_t num_classes() const { return classes.size(); }
  std::string resolve(const ManifestRecord& r) const;
  std::size_t index_of(const std::string& id) const;  // IndexError if absent
  /// Unique ids, labels within the class table and, optionally, files present.
  void validate(bool check_files) const;
};

/// `path` is either a manifest JSON file or a root directory holding one
/// subdirectory per class. Directory scans accept .ppm, .pgm and .dcst files
/// and give ids "<class>/<file>" in lexicographic order.
DatasetManifest load_manifest(const std::string& path);
/// JSON {classes: [...], records: [{id, path, label, tag?}]}.
void write_manifest(const std::string& path, const DatasetManifest& manifest);

/// Pool membership in manifest order, plus per-class counts per pool.
struct DatasetSplit {
  std::vector<std::string> labeled, unlabeled, test;
  std::vector<std::array<std::size_t, 3>> audit;  // per class: labeled, unlabeled, test
  std::vector<std::string> classes;
  std::string manifest;  // path of the manifest the split was drawn from, if known
  std::uint64_t seed = 0;
  double train_frac = 0.8;
  double labeled_frac = 0.05;
};

/// Per class: shuffle with the seed, keep round(n * train_frac) for training
/// and the rest for test, then label max(1, round(n_train * labeled_frac)) of
/// the training samples. Throws ConfigError if a class cannot supply a
/// labeled sample.
DatasetSplit stratified_split(const DatasetManifest& manifest, double train_frac,
                              double labeled_frac, std::uint64_t seed);
void write_split(const std::string& path, const DatasetSplit& split);
DatasetSplit read_split(const std::string& path);
/// Plain-text table of the audit counts.
std::string format_audit(const DatasetSplit& split);

/// Decoded image in [0, 1], shape [3, H, W].
struct ImageRecord {
  Tensor pixels;
  std::size_t height = 0, width = 0;
};

/// Binary PPM (P6) or PGM (P5) with maxval up to 65535, or a serialized
/// tensor of shape [3,H,W] or [H,W] (.dcst). Gray images are replicated to
/// three channels. Throws FormatError with the byte offset on bad input.
ImageRecord decode_image(const std::string& path);
/// Writes an 8-bit P6 file from [3,H,W] values in [0, 1] (clamped).
void write_ppm(const std::string& path, const Tensor& pixels);

/// Bilinear resampling of [C,H,W] with half-pixel centers (align_corners
/// false). Returns an exact copy when the size is unchanged.
Tensor resize_bilinear(const Tensor& img, std::size_t height, std::size_t width);

struct ChannelStats {
  std::vector<double> mean, stddev;
};

/// Per-channel mean and population std over images [N,C,H,W].
ChannelStats compute_channel_stats(const Tensor& images);
/// (x - mean) / std per channel, for [N,C,H,W] or [C,H,W]. Channels with
/// zero spread are only centered.
Tensor normalize_channels(const Tensor& images, const ChannelStats& stats);

/// Images and labels gathered into batches.
struct TensorDataset {
  Tensor images;            // [N,C,S,S]
  std::vector<int> labels;  // ground truth; -1 when unknown
  std::vector<std::string> ids;

  std::size_t size() const { return ids.size(); }
  bool empty() const { return ids.empty(); }
  Tensor batch(const std::vector<std::size_t>& rows) const;
  std::vector<int> batch_labels(const std::vector<std::size_t>& rows) const;
};

/// Decodes, resizes to image_size x image_size and stacks the listed ids.
/// Pixels stay in [0, 1].
TensorDataset load_images(const DatasetManifest& manifest, const std::vector<std::string>& ids,
                          std::size_t image_size);

struct SynthConfig {
  std::size_t num_classes = 4;
  std::size_t per_class = 100;
  std::size_t image_size = 64;
  std::uint64_t seed = 0;
  /// 0 gives cleanly separated frequency bands; larger values widen each
  /// class's band and contrast range until neighbouring classes overlap.
  double overlap = 0.0;
};

/// Dominant spatial frequency (cycles per pixel) of synthetic class k.
double synth_class_frequency(std::size_t k, std::size_t num_classes);

/// Writes out_root/<class>/<class>_NNNN.ppm plus out_root/manifest.json and
/// returns the manifest path. Throws ConfigError unless 2 <= classes <= 4.
std::string synth_generate(const SynthConfig& cfg, const std::string& out_root);

/// One synthetic image [3,S,S] in [0,1], as synth_generate draws it.
Tensor synth_image(std::size_t label, const SynthConfig& cfg, Rng& rng);

}  // namespace dcsst
