// SPDX-License-Identifier: Apache-2.0
#include "dcsst/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

#include <json.hpp>

#include "dcsst/error.hpp"
#include "dcsst/serialize.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace dcsst {

// ---- manifest -------------------------------------------------------------

std::string DatasetManifest::resolve(const ManifestRecord& r) const {
  const fs::path p(r.path);
  if (p.is_absolute() || base_dir.empty()) return p.string();
  return (fs::path(base_dir) / p).string();
}

std::size_t DatasetManifest::index_of(const std::string& id) const {
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].id == id) return i;
  }
  throw IndexError("id '" + id + "' is not in the manifest");
}

void DatasetManifest::validate(bool check_files) const {
  if (classes.empty()) throw ConfigError("manifest has no classes");
  std::set<std::string> ids;
  for (const auto& r : records) {
    if (!ids.insert(r.id).second) throw ConfigError("duplicate manifest id '" + r.id + "'");
    if (r.label < 0 || static_cast<std::size_t>(r.label) >= classes.size()) {
      throw ConfigError("record '" + r.id + "' has label " + std::to_string(r.label) +
                        " outside the class table");
    }
    if (check_files && !fs::is_regular_file(resolve(r))) {
      throw IoError("record '" + r.id + "': file '" + resolve(r) + "' not found");
    }
  }
}

namespace {

bool image_extension(const fs::path& p) {
  const std::string ext = p.extension().string();
  return ext == ".ppm" || ext == ".pgm" || ext == ".dcst";
}

DatasetManifest scan_directory(const fs::path& root) {
  DatasetManifest m;
  m.base_dir = root.string();
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(root)) {
    if (e.is_directory()) dirs.push_back(e.path());
  }
  std::sort(dirs.begin(), dirs.end());
  if (dirs.empty()) throw ConfigError("'" + root.string() + "' has no class subdirectories");
  for (const auto& dir : dirs) {
    const std::string cls = dir.filename().string();
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir)) {
      if (!e.is_regular_file()) continue;
      if (!image_extension(e.path())) {
        throw FormatError("unsupported image file '" + e.path().string() +
                          "' (expected .ppm, .pgm or .dcst)");
      }
      files.push_back(e.path());
    }
    if (files.empty()) throw ConfigError("class directory '" + dir.string() + "' is empty");
    std::sort(files.begin(), files.end());
    const int label = static_cast<int>(m.classes.size());
    m.classes.push_back(cls);
    for (const auto& f : files) {
      const std::string rel = cls + "/" + f.filename().string();
      m.records.push_back({rel, rel, label, {}});
    }
  }
  return m;
}

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError("'" + path + "' is not valid JSON: " + e.what());
  }
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << text;
  if (!out) throw IoError("failed writing '" + path + "'");
}

}  // namespace

DatasetManifest load_manifest(const std::string& path) {
  if (fs::is_directory(path)) {
    DatasetManifest m = scan_directory(path);
    m.validate(false);
    return m;
  }
  const json j = read_json(path);
  DatasetManifest m;
  m.base_dir = fs::path(path).parent_path().string();
  try {
    m.classes = j.at("classes").get<std::vector<std::string>>();
    for (const auto& r : j.at("records")) {
      ManifestRecord rec;
      rec.id = r.at("id").get<std::string>();
      rec.path = r.at("path").get<std::string>();
      rec.label = r.at("label").get<int>();
      if (r.contains("tag")) rec.tag = r.at("tag").get<std::string>();
      m.records.push_back(std::move(rec));
    }
  } catch (const json::exception& e) {
    throw FormatError("manifest '" + path + "': " + e.what());
  }
  m.validate(true);
  return m;
}

void write_manifest(const std::string& path, const DatasetManifest& manifest) {
  json records = json::array();
  for (const auto& r : manifest.records) {
    json o = {{"id", r.id}, {"path", r.path}, {"label", r.label}};
    if (!r.tag.empty()) o["tag"] = r.tag;
    records.push_back(std::move(o));
  }
  const json j = {{"classes", manifest.classes}, {"records", std::move(records)}};
  write_text(path, j.dump(2) + "\n");
}

// ---- split ----------------------------------------------------------------

DatasetSplit stratified_split(const DatasetManifest& manifest, double train_frac,
                              double labeled_frac, std::uint64_t seed) {
  if (!(train_frac > 0.0 && train_frac <= 1.0)) throw ConfigError("train_frac must be in (0, 1]");
  if (!(labeled_frac > 0.0 && labeled_frac <= 1.0)) {
    throw ConfigError("labeled_frac must be in (0, 1]");
  }
  const std::size_t C = manifest.num_classes();
  std::vector<std::vector<std::size_t>> by_class(C);
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    by_class[static_cast<std::size_t>(manifest.records[i].label)].push_back(i);
  }
  Rng rng = make_stream(seed, "split");
  std::vector<int> pool(manifest.records.size(), -1);  // 0 labeled, 1 unlabeled, 2 test
  DatasetSplit split;
  split.classes = manifest.classes;
  split.seed = seed;
  split.train_frac = train_frac;
  split.labeled_frac = labeled_frac;
  split.audit.assign(C, {0, 0, 0});
  for (std::size_t c = 0; c < C; ++c) {
    auto& idx = by_class[c];
    const std::size_t n = idx.size();
    for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng() % i]);
    const auto n_train = static_cast<std::size_t>(std::llround(static_cast<double>(n) * train_frac));
    const std::size_t n_lab = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(static_cast<double>(n_train) * labeled_frac)));
    if (n_train == 0 || n_lab > n_train) {
      throw ConfigError("class '" + manifest.classes[c] + "' has " + std::to_string(n) +
                        " samples, too few for a labeled training example");
    }
    for (std::size_t i = 0; i < n; ++i) {
      const int p = i < n_lab ? 0 : (i < n_train ? 1 : 2);
      pool[idx[i]] = p;
      ++split.audit[c][static_cast<std::size_t>(p)];
    }
  }
  for (std::size_t i = 0; i < pool.size(); ++i) {
    const std::string& id = manifest.records[i].id;
    (pool[i] == 0 ? split.labeled : pool[i] == 1 ? split.unlabeled : split.test).push_back(id);
  }
  return split;
}

void write_split(const std::string& path, const DatasetSplit& split) {
  json audit = json::array();
  for (std::size_t c = 0; c < split.audit.size(); ++c) {
    audit.push_back({{"class", split.classes[c]},
                     {"labeled", split.audit[c][0]},
                     {"unlabeled", split.audit[c][1]},
                     {"test", split.audit[c][2]}});
  }
  const json j = {{"seed", split.seed},
                  {"train_frac", split.train_frac},
                  {"labeled_frac", split.labeled_frac},
                  {"classes", split.classes},
                  {"labeled", split.labeled},
                  {"unlabeled", split.unlabeled},
                  {"test", split.test},
                  {"audit", std::move(audit)}};
  json out = j;
  if (!split.manifest.empty()) out["manifest"] = split.manifest;
  write_text(path, out.dump(2) + "\n");
}

DatasetSplit read_split(const std::string& path) {
  const json j = read_json(path);
  DatasetSplit s;
  try {
    s.seed = j.at("seed").get<std::uint64_t>();
    s.train_frac = j.at("train_frac").get<double>();
    s.labeled_frac = j.at("labeled_frac").get<double>();
    s.classes = j.at("classes").get<std::vector<std::string>>();
    if (j.contains("manifest")) s.manifest = j.at("manifest").get<std::string>();
    s.labeled = j.at("labeled").get<std::vector<std::string>>();
    s.unlabeled = j.at("unlabeled").get<std::vector<std::string>>();
    s.test = j.at("test").get<std::vector<std::string>>();
    for (const auto& a : j.at("audit")) {
      s.audit.push_back({a.at("labeled").get<std::size_t>(), a.at("unlabeled").get<std::size_t>(),
                         a.at("test").get<std::size_t>()});
    }
  } catch (const json::exception& e) {
    throw FormatError("split file '" + path + "': " + e.what());
  }
  return s;
}

std::string format_audit(const DatasetSplit& split) {
  std::ostringstream os;
  std::size_t width = 5;
  for (const auto& c : split.classes) width = std::max(width, c.size());
  auto pad = [&](const std::string& s) { return s + std::string(width - s.size() + 2, ' '); };
  os << pad("class") << "labeled  unlabeled  test  total\n";
  std::array<std::size_t, 3> sum{0, 0, 0};
  auto row = [&](const std::string& name, const std::array<std::size_t, 3>& a) {
    char buf[96];
    std::snprintf(buf, sizeof(buf), "%7zu  %9zu  %4zu  %5zu\n", a[0], a[1], a[2], a[0] + a[1] + a[2]);
    os << pad(name) << buf;
  };
  for (std::size_t c = 0; c < split.audit.size(); ++c) {
    row(split.classes[c], split.audit[c]);
    for (int k = 0; k < 3; ++k) sum[k] += split.audit[c][k];
  }
  row("all", sum);
  return os.str();
}

// ---- images ---------------------------------------------------------------

namespace {

std::vector<unsigned char> read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image '" + path + "'");
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), {});
}

class HeaderReader {
 public:
  HeaderReader(const std::vector<unsigned char>& bytes, const std::string& path)
      : b_(bytes), path_(path) {}

  std::size_t pos() const { return pos_; }

  [[noreturn]] void fail(const std::string& what) const {
    throw FormatError("'" + path_ + "': " + what + " at byte offset " + std::to_string(pos_));
  }

  void skip_space_and_comments() {
    while (pos_ < b_.size()) {
      if (b_[pos_] == '#') {
        while (pos_ < b_.size() && b_[pos_] != '\n') ++pos_;
      } else if (std::isspace(b_[pos_])) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  std::size_t number() {
    skip_space_and_comments();
    if (pos_ >= b_.size() || !std::isdigit(b_[pos_])) fail("expected a header number");
    std::size_t v = 0;
    while (pos_ < b_.size() && std::isdigit(b_[pos_])) {
      v = v * 10 + static_cast<std::size_t>(b_[pos_] - '0');
      if (v > 1'000'000'000) fail("header number too large");
      ++pos_;
    }
    return v;
  }

  void single_whitespace() {
    if (pos_ >= b_.size() || !std::isspace(b_[pos_])) fail("expected whitespace after header");
    ++pos_;
  }

 private:
  const std::vector<unsigned char>& b_;
  const std::string& path_;
  std::size_t pos_ = 2;
};

ImageRecord decode_netpbm(const std::vector<unsigned char>& bytes, const std::string& path) {
  const bool color = bytes[1] == '6';
  HeaderReader h(bytes, path);
  const std::size_t width = h.number();
  const std::size_t height = h.number();
  const std::size_t maxval = h.number();
  if (width == 0 || height == 0) h.fail("zero image dimension");
  if (maxval == 0 || maxval > 65535) h.fail("maxval must be in [1, 65535]");
  h.single_whitespace();
  const std::size_t channels = color ? 3 : 1;
  const std::size_t bps = maxval < 256 ? 1 : 2;
  const std::size_t need = width * height * channels * bps;
  const std::size_t start = h.pos();
  if (bytes.size() - start < need) {
    throw FormatError("'" + path + "': truncated pixel data: expected " + std::to_string(need) +
                      " bytes from byte offset " + std::to_string(start) + ", found " +
                      std::to_string(bytes.size() - start));
  }
  ImageRecord rec{Tensor({3, height, width}), height, width};
  auto out = rec.pixels.mutable_data();
  const double scale = 1.0 / static_cast<double>(maxval);
  const std::size_t plane = height * width;
  for (std::size_t p = 0; p < plane; ++p) {
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t off = start + (p * channels + c) * bps;
      const std::size_t raw = bps == 1 ? bytes[off] : (std::size_t{bytes[off]} << 8) | bytes[off + 1];
      if (raw > maxval) {
        throw FormatError("'" + path + "': sample exceeds maxval at byte offset " +
                          std::to_string(off));
      }
      out[c * plane + p] = static_cast<double>(raw) * scale;
    }
    if (!color) out[plane + p] = out[2 * plane + p] = out[p];
  }
  return rec;
}

}  // namespace

ImageRecord decode_image(const std::string& path) {
  if (fs::path(path).extension() == ".dcst") {
    const Tensor t = load_tensor(path);
    if (t.rank() == 2) {
      const std::size_t H = t.dim(0), W = t.dim(1);
      ImageRecord rec{Tensor({3, H, W}), H, W};
      auto o = rec.pixels.mutable_data();
      for (std::size_t c = 0; c < 3; ++c) std::copy(t.data().begin(), t.data().end(), o.begin() + c * H * W);
      return rec;
    }
    if (t.rank() == 3 && t.dim(0) == 3) return ImageRecord{t, t.dim(1), t.dim(2)};
    throw FormatError("'" + path + "': tensor image must be [3,H,W] or [H,W], got " +
                      shape_str(t.shape()));
  }
  const auto bytes = read_bytes(path);
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
    throw FormatError("'" + path + "': not a binary PPM/PGM file (bad magic at byte offset 0)");
  }
  return decode_netpbm(bytes, path);
}

void write_ppm(const std::string& path, const Tensor& pixels) {
  if (pixels.rank() != 3 || pixels.dim(0) != 3) {
    throw DimensionError("write_ppm expects [3,H,W], got " + shape_str(pixels.shape()));
  }
  const std::size_t H = pixels.dim(1), W = pixels.dim(2), plane = H * W;
  std::string out = "P6\n" + std::to_string(W) + " " + std::to_string(H) + "\n255\n";
  const std::size_t header = out.size();
  out.resize(header + 3 * plane);
  const auto d = pixels.data();
  for (std::size_t p = 0; p < plane; ++p) {
    for (std::size_t c = 0; c < 3; ++c) {
      const double v = std::clamp(d[c * plane + p], 0.0, 1.0);
      out[header + p * 3 + c] = static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0)));
    }
  }
  write_text(path, out);
}

Tensor resize_bilinear(const Tensor& img, std::size_t height, std::size_t width) {
  if (img.rank() != 3) throw DimensionError("resize_bilinear expects [C,H,W], got " + shape_str(img.shape()));
  if (height == 0 || width == 0) throw ConfigError("resize target must be positive");
  const std::size_t C = img.dim(0), H = img.dim(1), W = img.dim(2);
  if (H == height && W == width) return img.detach();
  Tensor out({C, height, width});
  auto o = out.mutable_data();
  const auto x = img.data();
  auto coord = [](std::size_t i, std::size_t src, std::size_t dst, std::size_t& lo, std::size_t& hi,
                  double& frac) {
    const double s = (static_cast<double>(i) + 0.5) * static_cast<double>(src) / static_cast<double>(dst) - 0.5;
    const double c = std::clamp(s, 0.0, static_cast<double>(src - 1));
    lo = static_cast<std::size_t>(std::floor(c));
    hi = std::min(lo + 1, src - 1);
    frac = c - static_cast<double>(lo);
  };
  for (std::size_t y = 0; y < height; ++y) {
    std::size_t y0, y1;
    double fy;
    coord(y, H, height, y0, y1, fy);
    for (std::size_t xx = 0; xx < width; ++xx) {
      std::size_t x0, x1;
      double fx;
      coord(xx, W, width, x0, x1, fx);
      for (std::size_t c = 0; c < C; ++c) {
        const double* p = x.data() + c * H * W;
        const double top = p[y0 * W + x0] + fx * (p[y0 * W + x1] - p[y0 * W + x0]);
        const double bot = p[y1 * W + x0] + fx * (p[y1 * W + x1] - p[y1 * W + x0]);
        o[(c * height + y) * width + xx] = top + fy * (bot - top);
      }
    }
  }
  return out;
}

ChannelStats compute_channel_stats(const Tensor& images) {
  if (images.rank() != 4) throw DimensionError("channel stats need [N,C,H,W], got " + shape_str(images.shape()));
  const std::size_t N = images.dim(0), C = images.dim(1), plane = images.dim(2) * images.dim(3);
  ChannelStats s{std::vector<double>(C, 0.0), std::vector<double>(C, 0.0)};
  const auto d = images.data();
  const double count = static_cast<double>(N * plane);
  for (std::size_t c = 0; c < C; ++c) {
    double sum = 0.0;
    for (std::size_t n = 0; n < N; ++n) {
      const double* p = d.data() + (n * C + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) sum += p[i];
    }
    const double mean = sum / count;
    double ss = 0.0;
    for (std::size_t n = 0; n < N; ++n) {
      const double* p = d.data() + (n * C + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) ss += (p[i] - mean) * (p[i] - mean);
    }
    s.mean[c] = mean;
    s.stddev[c] = std::sqrt(ss / count);
  }
  return s;
}

Tensor normalize_channels(const Tensor& images, const ChannelStats& stats) {
  const bool batched = images.rank() == 4;
  if (!batched && images.rank() != 3) {
    throw DimensionError("normalize_channels expects [N,C,H,W] or [C,H,W]");
  }
  const std::size_t C = images.dim(batched ? 1 : 0);
  if (stats.mean.size() != C || stats.stddev.size() != C) {
    throw DimensionError("channel stats for " + std::to_string(stats.mean.size()) +
                         " channels applied to " + shape_str(images.shape()));
  }
  const std::size_t plane = images.dim(-1) * images.dim(-2);
  Tensor out = images.detach();
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < o.size(); ++i) {
    const std::size_t c = (i / plane) % C;
    const double sd = stats.stddev[c];
    o[i] = sd > 0.0 ? (o[i] - stats.mean[c]) / sd : o[i] - stats.mean[c];
  }
  return out;
}

Tensor TensorDataset::batch(const std::vector<std::size_t>& rows) const {
  Shape s = images.shape();
  const std::size_t row = images.numel() / s[0];
  s[0] = rows.size();
  Tensor out(s);
  auto o = out.mutable_data();
  const auto d = images.data();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= size()) throw IndexError("dataset row " + std::to_string(rows[i]) + " out of range");
    std::copy(d.begin() + rows[i] * row, d.begin() + (rows[i] + 1) * row, o.begin() + i * row);
  }
  return out;
}

std::vector<int> TensorDataset::batch_labels(const std::vector<std::size_t>& rows) const {
  std::vector<int> out;
  out.reserve(rows.size());
  for (std::size_t r : rows) out.push_back(labels.at(r));
  return out;
}

TensorDataset load_images(const DatasetManifest& manifest, const std::vector<std::string>& ids,
                          std::size_t image_size) {
  TensorDataset ds;
  if (ids.empty()) return ds;
  const std::size_t plane = image_size * image_size;
  ds.images = Tensor({ids.size(), 3, image_size, image_size});
  auto out = ds.images.mutable_data();
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < manifest.records.size(); ++i) index[manifest.records[i].id] = i;
  for (std::size_t n = 0; n < ids.size(); ++n) {
    const auto it = index.find(ids[n]);
    if (it == index.end()) throw IndexError("id '" + ids[n] + "' is not in the manifest");
    const ManifestRecord& r = manifest.records[it->second];
    const Tensor img = resize_bilinear(decode_image(manifest.resolve(r)).pixels, image_size, image_size);
    std::copy(img.data().begin(), img.data().end(), out.begin() + n * 3 * plane);
    ds.labels.push_back(r.label);
    ds.ids.push_back(r.id);
  }
  return ds;
}

// ---- synthetic data -------------------------------------------------------

namespace {

std::vector<std::string> synth_class_names(std::size_t n) {
  switch (n) {
    case 2: return {"benign", "malignant"};
    case 3: return {"normal", "benign", "malignant"};
    default: return {"normal", "benign", "in_situ", "invasive"};
  }
}

constexpr double kLowFreq = 0.06;
constexpr double kHighFreq = 0.36;
constexpr std::size_t kWaves = 24;
constexpr double kTintRange = 0.16;

}  // namespace

double synth_class_frequency(std::size_t k, std::size_t num_classes) {
  if (num_classes < 2) return kLowFreq;
  return kLowFreq + (kHighFreq - kLowFreq) * static_cast<double>(k) /
                        static_cast<double>(num_classes - 1);
}

Tensor synth_image(std::size_t label, const SynthConfig& cfg, Rng& rng) {
  const std::size_t S = cfg.image_size, N = cfg.num_classes;
  const double f = synth_class_frequency(label, N);
  const double spacing = (kHighFreq - kLowFreq) / static_cast<double>(N - 1);
  // Radial frequency spread: narrow bands at overlap 0, touching neighbours near overlap 1.
  const double band = 0.06 * spacing + 0.5 * cfg.overlap * spacing;
  const double contrast_base = 0.10 + 0.06 * static_cast<double>(label) / static_cast<double>(N - 1);
  const double contrast = contrast_base * (1.0 + 0.5 * cfg.overlap * (uniform01(rng) - 0.5));

  std::vector<double> fx(kWaves), fy(kWaves), phase(kWaves), amp(kWaves);
  for (std::size_t k = 0; k < kWaves; ++k) {
    const double r = std::clamp(f + band * standard_normal(rng), 0.01, 0.5);
    const double theta = std::numbers::pi * uniform01(rng);
    fx[k] = r * std::cos(theta);
    fy[k] = r * std::sin(theta);
    phase[k] = 2.0 * std::numbers::pi * uniform01(rng);
    amp[k] = standard_normal(rng);
  }
  std::vector<double> field(S * S, 0.0);
  double sum = 0.0, ss = 0.0;
  for (std::size_t y = 0; y < S; ++y) {
    for (std::size_t x = 0; x < S; ++x) {
      double v = 0.0;
      for (std::size_t k = 0; k < kWaves; ++k) {
        v += amp[k] * std::cos(2.0 * std::numbers::pi * (fx[k] * static_cast<double>(x) +
                                                         fy[k] * static_cast<double>(y)) +
                               phase[k]);
      }
      field[y * S + x] = v;
      sum += v;
      ss += v * v;
    }
  }
  const double n = static_cast<double>(S * S);
  const double mean = sum / n;
  const double sd = std::sqrt(std::max(ss / n - mean * mean, 1e-12));

  static constexpr double kGain[3] = {1.0, 0.8, 0.9};
  static constexpr double kBase[3] = {0.55, 0.45, 0.6};
  // Hue shift from red towards blue across classes, like a stain gradient.
  // Jitter of the same size as the class spacing appears with overlap.
  const double tint_step = kTintRange / static_cast<double>(N - 1);
  const double tint = kTintRange * (static_cast<double>(label) / static_cast<double>(N - 1) - 0.5) +
                      0.5 * cfg.overlap * tint_step * standard_normal(rng);
  const double shift[3] = {-tint, 0.0, tint};
  const double noise = 0.05 * cfg.overlap;
  Tensor img({3, S, S});
  auto o = img.mutable_data();
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < S * S; ++i) {
      double v = kBase[c] + shift[c] + contrast * kGain[c] * (field[i] - mean) / sd;
      if (noise > 0.0) v += noise * standard_normal(rng);
      o[c * S * S + i] = std::clamp(v, 0.0, 1.0);
    }
  }
  return img;
}

std::string synth_generate(const SynthConfig& cfg, const std::string& out_root) {
  if (cfg.num_classes < 2 || cfg.num_classes > 4) {
    throw ConfigError("synthetic data supports 2 to 4 classes, got " + std::to_string(cfg.num_classes));
  }
  if (cfg.per_class == 0 || cfg.image_size < 4) {
    throw ConfigError("per_class must be positive and image_size at least 4");
  }
  if (!(cfg.overlap >= 0.0)) throw ConfigError("overlap must be non-negative");
  DatasetManifest m;
  m.classes = synth_class_names(cfg.num_classes);
  m.base_dir = out_root;
  std::error_code ec;
  fs::create_directories(out_root, ec);
  if (ec) throw IoError("cannot create '" + out_root + "': " + ec.message());
  for (std::size_t c = 0; c < cfg.num_classes; ++c) {
    const std::string& cls = m.classes[c];
    fs::create_directories(fs::path(out_root) / cls, ec);
    if (ec) throw IoError("cannot create class directory for '" + cls + "': " + ec.message());
    for (std::size_t i = 0; i < cfg.per_class; ++i) {
      char name[64];
      std::snprintf(name, sizeof(name), "%s_%04zu.ppm", cls.c_str(), i);
      const std::string rel = cls + "/" + name;
      Rng rng = make_stream(cfg.seed, "synth/" + rel);
      write_ppm((fs::path(out_root) / rel).string(), synth_image(c, cfg, rng));
      m.records.push_back({rel, rel, static_cast<int>(c), {}});
    }
  }
  const std::string manifest_path = (fs::path(out_root) / "manifest.json").string();
  write_manifest(manifest_path, m);
  return manifest_path;
}

}  // namespace dcsst
