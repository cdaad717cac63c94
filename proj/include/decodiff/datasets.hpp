#pragma once

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "decodiff/image_io.hpp"
#include "decodiff/rng.hpp"

namespace decodiff {

namespace fs = std::filesystem;

struct DatasetError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class Split { Train, Test };

struct SampleRecord {
  fs::path image_path;
  Split split = Split::Train;
  std::string category;
  std::string defect_type = "good";
  std::optional<fs::path> mask_path;

  bool anomalous() const { return defect_type != "good"; }
  /// Key used for per-image outputs and external latents: category/defect/stem.
  std::string key() const {
    return category + "/" + (split == Split::Train ? "train/" : "") + defect_type + "/" + image_path.stem().string();
  }
};

namespace detail {

inline bool is_image_file(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp";
}

/// Byte-wise sorted entries, independent of locale and directory order.
inline std::vector<fs::path> sorted_entries(const fs::path& dir, bool want_dirs) {
  std::vector<fs::path> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (want_dirs ? e.is_directory() : (e.is_regular_file() && is_image_file(e.path()))) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end(), [](const fs::path& a, const fs::path& b) { return a.string() < b.string(); });
  return out;
}

}  // namespace detail

/// Category directories under `root` that contain a train/ or test/ split.
inline std::vector<std::string> discover_categories(const fs::path& root) {
  if (!fs::is_directory(root)) throw DatasetError("dataset root " + root.string() + " does not exist");
  std::vector<std::string> cats;
  for (const auto& d : detail::sorted_entries(root, true))
    if (fs::is_directory(d / "train") || fs::is_directory(d / "test")) cats.push_back(d.filename().string());
  return cats;
}

/// Enumerates an MVTec-style tree: <cat>/train/good/*, <cat>/test/<defect>/*,
/// <cat>/ground_truth/<defect>/<stem>_mask.png (or <stem>.png). An empty
/// category list means every category found under `root`.
inline std::vector<SampleRecord> load_mvtec_layout(const fs::path& root, std::vector<std::string> categories = {}) {
  if (!fs::is_directory(root)) throw DatasetError("dataset root " + root.string() + " does not exist");
  if (categories.empty()) categories = discover_categories(root);
  std::sort(categories.begin(), categories.end());
  std::vector<SampleRecord> records;
  for (const auto& cat : categories) {
    const fs::path cdir = root / cat;
    if (!fs::is_directory(cdir)) throw DatasetError("missing category directory " + cdir.string());
    for (const auto& d : detail::sorted_entries(cdir / "train", true)) {
      if (d.filename() != "good") throw DatasetError("train split may only contain 'good' images: " + d.string());
      for (const auto& img : detail::sorted_entries(d, false))
        records.push_back({img, Split::Train, cat, "good", std::nullopt});
    }
    for (const auto& d : detail::sorted_entries(cdir / "test", true)) {
      const std::string defect = d.filename().string();
      for (const auto& img : detail::sorted_entries(d, false)) {
        SampleRecord r{img, Split::Test, cat, defect, std::nullopt};
        if (r.anomalous()) {
          const fs::path gt = cdir / "ground_truth" / defect;
          for (const auto& cand : {gt / (img.stem().string() + "_mask.png"), gt / (img.stem().string() + ".png")})
            if (fs::is_regular_file(cand)) {
              r.mask_path = cand;
              break;
            }
          if (!r.mask_path) throw DatasetError("missing ground-truth mask for " + img.string());
        }
        records.push_back(std::move(r));
      }
    }
  }
  return records;
}

/// Bilinear resize to resolution x resolution with values in [0,1]; images
/// already at the target size are only rescaled.
inline ImageTensor preprocess(const fs::path& image_path, int resolution) {
  cv::Mat m = read_raw(image_path, cv::IMREAD_ANYDEPTH | cv::IMREAD_COLOR);
  if (m.rows != resolution || m.cols != resolution)
    cv::resize(m, m, cv::Size(resolution, resolution), 0, 0, cv::INTER_LINEAR);
  return from_mat(m);
}

/// Nearest-neighbour resize of a mask; any nonzero value is anomalous.
inline std::vector<std::uint8_t> preprocess_mask(const fs::path& mask_path, int resolution) {
  cv::Mat m = read_raw(mask_path, cv::IMREAD_GRAYSCALE);
  if (m.rows != resolution || m.cols != resolution)
    cv::resize(m, m, cv::Size(resolution, resolution), 0, 0, cv::INTER_NEAREST);
  std::vector<std::uint8_t> out(static_cast<std::size_t>(resolution) * resolution);
  for (int y = 0; y < resolution; ++y)
    for (int x = 0; x < resolution; ++x) out[static_cast<std::size_t>(y) * resolution + x] = m.at<std::uint8_t>(y, x) ? 1 : 0;
  return out;
}

// ------------------------------------------------------------ VisA conversion

/// Rewrites a VisA release into the MVTec layout using one of its split CSVs
/// (columns object, split, label, image, mask; paths relative to `visa_root`).
/// Normal images go to <object>/<split>/good, anomalies to <object>/test/bad
/// with their mask at <object>/ground_truth/bad/<stem>_mask.png. Returns the
/// number of images written.
inline int convert_visa(const fs::path& visa_root, const fs::path& split_csv, const fs::path& out_root) {
  std::ifstream in(split_csv);
  if (!in) throw DatasetError("cannot read split file " + split_csv.string());
  auto fields = [](std::string line) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::vector<std::string> out;
    std::size_t start = 0, comma;
    while ((comma = line.find(',', start)) != std::string::npos) out.push_back(line.substr(start, comma - start)), start = comma + 1;
    out.push_back(line.substr(start));
    return out;
  };
  std::string line;
  if (!std::getline(in, line)) throw DatasetError("empty split file " + split_csv.string());
  const auto header = fields(line);
  auto column = [&](const std::string& name) {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw DatasetError("split file lacks a '" + name + "' column");
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t c_obj = column("object"), c_split = column("split"), c_label = column("label"),
                    c_img = column("image"), c_mask = column("mask");
  int written = 0;
  for (int row = 2; std::getline(in, line); ++row) {
    if (line.empty() || line == "\r") continue;
    const auto f = fields(line);
    if (f.size() < header.size()) throw DatasetError(split_csv.string() + ":" + std::to_string(row) + ": too few columns");
    const std::string& split = f[c_split];
    const bool anomalous = f[c_label] != "normal";
    if (split != "train" && split != "test") throw DatasetError("unknown split '" + split + "' on row " + std::to_string(row));
    if (split == "train" && anomalous) throw DatasetError("anomalous training image on row " + std::to_string(row));
    const fs::path src = visa_root / f[c_img];
    if (!fs::is_regular_file(src)) throw DatasetError("missing image " + src.string());
    const fs::path cdir = out_root / f[c_obj];
    const fs::path dst = cdir / split / (anomalous ? "bad" : "good") / src.filename();
    if (fs::exists(dst)) throw DatasetError("duplicate image name " + dst.string());
    fs::create_directories(dst.parent_path());
    fs::copy_file(src, dst);
    if (anomalous) {
      const fs::path mask = visa_root / f[c_mask];
      if (f[c_mask].empty() || !fs::is_regular_file(mask)) throw DatasetError("missing mask for " + src.string());
      const fs::path mdst = cdir / "ground_truth" / "bad" / (src.stem().string() + "_mask.png");
      fs::create_directories(mdst.parent_path());
      cv::Mat m = read_raw(mask, cv::IMREAD_GRAYSCALE);
      if (!cv::imwrite(mdst.string(), m)) throw DatasetError("cannot write " + mdst.string());
    }
    ++written;
  }
  return written;
}

// ------------------------------------------------------------ synthetic data

enum class AnomalyKind { RectOcclusion, ColorShift, PatchSwap };

inline std::string_view to_string(AnomalyKind k) {
  switch (k) {
    case AnomalyKind::RectOcclusion: return "rect_occlusion";
    case AnomalyKind::ColorShift: return "color_shift";
    case AnomalyKind::PatchSwap: return "patch_swap";
  }
  return "?";
}

inline AnomalyKind anomaly_kind_from_string(std::string_view s) {
  for (auto k : {AnomalyKind::RectOcclusion, AnomalyKind::ColorShift, AnomalyKind::PatchSwap})
    if (to_string(k) == s) return k;
  throw std::invalid_argument("unknown anomaly kind '" + std::string(s) + "'");
}

struct SyntheticConfig {
  int n_categories = 3;
  int images_per_split = 60;
  int test_images = 0;  // 0: same as images_per_split
  int resolution = 64;
  std::vector<AnomalyKind> anomaly_kinds{AnomalyKind::RectOcclusion, AnomalyKind::ColorShift, AnomalyKind::PatchSwap};
  double area_frac_min = 0.03;
  double area_frac_max = 0.10;
  double pixel_noise = 0.01;
  std::uint64_t seed = 0;

  int test_count() const { return test_images > 0 ? test_images : images_per_split; }

  void validate(int codec_factor = 8) const {
    if (n_categories < 1 || images_per_split < 1) throw std::invalid_argument("synthetic dataset needs images");
    if (resolution <= 0 || resolution % codec_factor != 0)
      throw std::invalid_argument("resolution " + std::to_string(resolution) + " not divisible by codec factor " +
                                  std::to_string(codec_factor));
    if (!(area_frac_min > 0.0 && area_frac_min <= area_frac_max && area_frac_max <= 0.5))
      throw std::invalid_argument("anomaly area fractions must satisfy 0 < min <= max <= 0.5");
    if (anomaly_kinds.empty()) throw std::invalid_argument("at least one anomaly kind required");
  }
};

namespace detail {

using Rgb = std::array<double, 3>;

struct Texture {
  int kind;  // 0 stripes, 1 checker, 2 gradient
  Rgb c1, c2;
  double period;
  double angle;
};

inline Texture category_texture(int index) {
  static const std::array<Rgb, 6> palette{{{0.85, 0.75, 0.30}, {0.20, 0.25, 0.55}, {0.80, 0.80, 0.80},
                                           {0.15, 0.45, 0.20}, {0.90, 0.50, 0.40}, {0.30, 0.20, 0.15}}};
  const int kind = index % 3;
  const int variant = index / 3;
  Texture t;
  t.kind = kind;
  t.c1 = palette[(2 * kind + variant) % palette.size()];
  t.c2 = palette[(2 * kind + 1 + variant) % palette.size()];
  t.period = 16.0 + 8.0 * (variant % 2);
  t.angle = kind == 0 ? 0.0 : (kind == 2 ? std::numbers::pi / 4 : 0.0);
  return t;
}

inline std::string category_name(int index) {
  static const std::array<const char*, 3> names{"stripes", "checker", "gradient"};
  std::string n = names[index % 3];
  if (index >= 3) n += "_" + std::to_string(index / 3);
  return n;
}

/// One normal image of texture `t` with per-image jitter (phase, offset,
/// colour, orientation) and small pixel noise.
inline ImageTensor render_texture(const Texture& t, int res, double noise, Rng& rng) {
  Rgb c1 = t.c1, c2 = t.c2;
  for (int c = 0; c < 3; ++c) {
    c1[c] = std::clamp(c1[c] + rng.uniform(-0.04, 0.04), 0.0, 1.0);
    c2[c] = std::clamp(c2[c] + rng.uniform(-0.04, 0.04), 0.0, 1.0);
  }
  const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const int ox = rng.uniform_int(0, static_cast<int>(t.period) - 1), oy = rng.uniform_int(0, static_cast<int>(t.period) - 1);
  const double angle = t.angle + rng.uniform(-0.25, 0.25);
  ImageTensor img(3, res, res);
  for (int y = 0; y < res; ++y)
    for (int x = 0; x < res; ++x) {
      double v = 0;
      switch (t.kind) {
        case 0: v = 0.5 + 0.5 * std::sin(2.0 * std::numbers::pi * x / t.period + phase); break;
        case 1: v = (((x + ox) / static_cast<int>(t.period / 2)) + ((y + oy) / static_cast<int>(t.period / 2))) % 2; break;
        default: {
          double u = ((x - res / 2.0) * std::cos(angle) + (y - res / 2.0) * std::sin(angle)) / (res * 0.75);
          v = std::clamp(0.5 + u, 0.0, 1.0);
        }
      }
      for (int c = 0; c < 3; ++c)
        img.at(c, y, x) = static_cast<float>(std::clamp(c1[c] * (1 - v) + c2[c] * v + noise * rng.normal(), 0.0, 1.0));
    }
  return img;
}

struct Rect {
  int y, x, h, w;
};

inline Rect sample_rect(int res, double fmin, double fmax, Rng& rng) {
  const double total = static_cast<double>(res) * res;
  for (int attempt = 0; attempt < 1000; ++attempt) {
    const double area = rng.uniform(fmin, fmax) * total;
    const double aspect = std::exp(rng.uniform(std::log(0.5), std::log(2.0)));
    int w = static_cast<int>(std::lround(std::sqrt(area * aspect)));
    int h = static_cast<int>(std::lround(area / std::max(w, 1)));
    if (w < 1 || h < 1 || w > res || h > res) continue;
    const double frac = static_cast<double>(w) * h / total;
    if (frac < fmin || frac > fmax) continue;
    return {rng.uniform_int(0, res - h), rng.uniform_int(0, res - w), h, w};
  }
  throw std::invalid_argument("cannot place a rectangle with the requested area fraction");
}

}  // namespace detail

/// Writes a procedural benchmark in MVTec layout under `out_root`, plus a
/// manifest.json recording the configuration. Each category has its own
/// texture family; every anomalous test image carries one defect whose
/// rectangle is exactly its ground-truth mask.
inline void synthesize_toy_dataset(const SyntheticConfig& cfg, const fs::path& out_root, int codec_factor = 8) {
  cfg.validate(codec_factor);
  const int res = cfg.resolution;
  for (int ci = 0; ci < cfg.n_categories; ++ci) {
    Rng rng(derive_seed(cfg.seed, {static_cast<std::uint64_t>(ci)}));
    const auto tex = detail::category_texture(ci);
    const auto other = detail::category_texture(ci + 1);
    const fs::path cdir = out_root / detail::category_name(ci);
    char name[32];
    for (int i = 0; i < cfg.images_per_split; ++i) {
      std::snprintf(name, sizeof name, "%03d.png", i);
      write_image(cdir / "train" / "good" / name, detail::render_texture(tex, res, cfg.pixel_noise, rng));
    }
    const int n_test = cfg.test_count();
    const int n_good = n_test / 2;
    for (int i = 0; i < n_test; ++i) {
      ImageTensor img = detail::render_texture(tex, res, cfg.pixel_noise, rng);
      if (i < n_good) {
        std::snprintf(name, sizeof name, "%03d.png", i);
        write_image(cdir / "test" / "good" / name, img);
        continue;
      }
      const int k = i - n_good;
      const AnomalyKind kind = cfg.anomaly_kinds[k % cfg.anomaly_kinds.size()];
      const auto r = detail::sample_rect(res, cfg.area_frac_min, cfg.area_frac_max, rng);
      ImageTensor mask(1, res, res, 0.0f);
      ImageTensor donor;
      detail::Rgb fill{};
      if (kind == AnomalyKind::PatchSwap) donor = detail::render_texture(other, res, cfg.pixel_noise, rng);
      if (kind == AnomalyKind::RectOcclusion)
        for (auto& v : fill) v = rng.uniform(0.0, 1.0);
      for (int y = r.y; y < r.y + r.h; ++y)
        for (int x = r.x; x < r.x + r.w; ++x) {
          mask.at(0, y, x) = 1.0f;
          for (int c = 0; c < 3; ++c) {
            float& p = img.at(c, y, x);
            switch (kind) {
              case AnomalyKind::RectOcclusion: p = static_cast<float>(fill[c]); break;
              case AnomalyKind::ColorShift: p = p > 0.5f ? p - 0.35f : p + 0.35f; break;
              case AnomalyKind::PatchSwap: p = donor.at(c, y, x); break;
            }
          }
        }
      std::snprintf(name, sizeof name, "%03d", k);
      const std::string defect(to_string(kind));
      write_image(cdir / "test" / defect / (std::string(name) + ".png"), img);
      write_image(cdir / "ground_truth" / defect / (std::string(name) + "_mask.png"), mask);
    }
  }
  nlohmann::json manifest;
  manifest["generator"] = "decodiff synthetic textures";
  manifest["n_categories"] = cfg.n_categories;
  manifest["images_per_split"] = cfg.images_per_split;
  manifest["test_images"] = cfg.test_count();
  manifest["resolution"] = res;
  manifest["anomaly_area_frac"] = {cfg.area_frac_min, cfg.area_frac_max};
  manifest["pixel_noise"] = cfg.pixel_noise;
  manifest["seed"] = cfg.seed;
  std::vector<std::string> kinds;
  for (auto k : cfg.anomaly_kinds) kinds.emplace_back(to_string(k));
  manifest["anomaly_kinds"] = kinds;
  std::ofstream(out_root / "manifest.json") << manifest.dump(2) << "\n";
}

}  // namespace decodiff
