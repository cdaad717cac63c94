#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "decodiff/tensor.hpp"

namespace decodiff {

enum class Fusion { Geometric, Arithmetic, PixelOnly, LatentOnly };
enum class ChannelNorm { MeanAbs, L2 };
enum class Upsampling { Bilinear, Nearest };

inline std::string_view to_string(Fusion f) {
  switch (f) {
    case Fusion::Geometric: return "geometric";
    case Fusion::Arithmetic: return "arithmetic";
    case Fusion::PixelOnly: return "pixel_only";
    case Fusion::LatentOnly: return "latent_only";
  }
  return "?";
}

inline Fusion fusion_from_string(std::string_view s) {
  for (auto f : {Fusion::Geometric, Fusion::Arithmetic, Fusion::PixelOnly, Fusion::LatentOnly})
    if (to_string(f) == s) return f;
  throw std::invalid_argument("unknown fusion '" + std::string(s) + "'");
}

inline ChannelNorm channel_norm_from_string(std::string_view s) {
  if (s == "mean_abs") return ChannelNorm::MeanAbs;
  if (s == "l2") return ChannelNorm::L2;
  throw std::invalid_argument("unknown channel norm '" + std::string(s) + "'");
}

inline Upsampling upsampling_from_string(std::string_view s) {
  if (s == "bilinear") return Upsampling::Bilinear;
  if (s == "nearest") return Upsampling::Nearest;
  throw std::invalid_argument("unknown upsampling '" + std::string(s) + "'");
}

struct DiscrepancyMaps {
  Map2D delta_z;  // latent discrepancy at image resolution
  Map2D delta_x;  // pixel discrepancy
};

struct AnomalyMap {
  Map2D scores;
  double image_score = 0.0;
  Fusion fusion = Fusion::Geometric;
  std::optional<double> gamma_l = 0.4;
  std::optional<double> gamma_p = 0.4;
};

namespace detail {

template <class Tag>
Map2D channel_discrepancy(const Planar<Tag>& a, const Planar<Tag>& b, ChannelNorm norm) {
  Map2D m(a.height, a.width);
  for (int y = 0; y < a.height; ++y)
    for (int x = 0; x < a.width; ++x) {
      double acc = 0;
      for (int c = 0; c < a.channels; ++c) {
        double d = static_cast<double>(a.at(c, y, x)) - b.at(c, y, x);
        acc += norm == ChannelNorm::MeanAbs ? std::abs(d) : d * d;
      }
      m.at(y, x) = norm == ChannelNorm::MeanAbs ? acc / a.channels : std::sqrt(acc);
    }
  return m;
}

/// Half-pixel-centred bilinear resize with edge clamping.
inline Map2D upsample(const Map2D& src, int factor, Upsampling mode) {
  Map2D out(src.height * factor, src.width * factor);
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x) {
      if (mode == Upsampling::Nearest) {
        out.at(y, x) = src.at(y / factor, x / factor);
        continue;
      }
      double sy = std::clamp((y + 0.5) / factor - 0.5, 0.0, src.height - 1.0);
      double sx = std::clamp((x + 0.5) / factor - 0.5, 0.0, src.width - 1.0);
      int y0 = static_cast<int>(std::floor(sy)), x0 = static_cast<int>(std::floor(sx));
      int y1 = std::min(y0 + 1, src.height - 1), x1 = std::min(x0 + 1, src.width - 1);
      double fy = sy - y0, fx = sx - x0;
      out.at(y, x) = (1 - fy) * ((1 - fx) * src.at(y0, x0) + fx * src.at(y0, x1)) +
                     fy * ((1 - fx) * src.at(y1, x0) + fx * src.at(y1, x1));
    }
  return out;
}

inline double clip_scale(double d, const std::optional<double>& gamma) {
  return gamma ? std::min(d, *gamma) / *gamma : d;
}

}  // namespace detail

/// Pixel and latent reconstruction discrepancies, aggregated over channels
/// and brought to image resolution.
inline DiscrepancyMaps compute_discrepancies(const ImageTensor& x0, const ImageTensor& x_tilde0, const LatentTensor& z0,
                                             const LatentTensor& z_tilde0, ChannelNorm norm = ChannelNorm::MeanAbs,
                                             Upsampling up = Upsampling::Bilinear) {
  if (!x0.same_shape(x_tilde0)) throw ShapeError("image and reconstruction shapes differ");
  if (!z0.same_shape(z_tilde0)) throw ShapeError("latent and corrected latent shapes differ");
  if (x0.height % z0.height != 0 || x0.width % z0.width != 0 || x0.height / z0.height != x0.width / z0.width)
    throw ShapeError("latent " + z0.shape_str() + " is not an integer downsampling of image " + x0.shape_str());
  const int f = x0.height / z0.height;
  DiscrepancyMaps m;
  m.delta_x = detail::channel_discrepancy(x0, x_tilde0, norm);
  m.delta_z = detail::upsample(detail::channel_discrepancy(z0, z_tilde0, norm), f, up);
  return m;
}

/// Maximum of the Gaussian-smoothed map (reflect boundary, kernel truncated
/// at 4 sigma). sigma == 0 gives the raw maximum.
inline double image_score(const Map2D& map, double sigma) {
  if (sigma < 0) throw std::invalid_argument("smoothing sigma must be non-negative");
  if (map.size() == 0) return 0.0;
  if (sigma == 0) return *std::max_element(map.values.begin(), map.values.end());
  const int radius = static_cast<int>(4.0 * sigma + 0.5);
  std::vector<double> k(2 * radius + 1);
  double ksum = 0;
  for (int i = -radius; i <= radius; ++i) ksum += k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (auto& v : k) v /= ksum;
  auto reflect = [](int i, int n) {
    if (n == 1) return 0;
    const int period = 2 * n;
    i %= period;
    if (i < 0) i += period;
    return i < n ? i : period - 1 - i;
  };
  Map2D tmp(map.height, map.width), out(map.height, map.width);
  for (int y = 0; y < map.height; ++y)
    for (int x = 0; x < map.width; ++x) {
      double s = 0;
      for (int i = -radius; i <= radius; ++i) s += k[i + radius] * map.at(y, reflect(x + i, map.width));
      tmp.at(y, x) = s;
    }
  for (int y = 0; y < map.height; ++y)
    for (int x = 0; x < map.width; ++x) {
      double s = 0;
      for (int i = -radius; i <= radius; ++i) s += k[i + radius] * tmp.at(reflect(y + i, map.height), x);
      out.at(y, x) = s;
    }
  return *std::max_element(out.values.begin(), out.values.end());
}

inline double image_score(const AnomalyMap& map, double sigma) { return image_score(map.scores, sigma); }

/// Fuses clipped discrepancies into an anomaly map. Geometric:
/// sqrt(min(dz, gl)/gl * min(dx, gp)/gp); arithmetic: the mean of the two
/// clipped terms; single-term variants use one of them. A missing gamma means
/// that term is neither clipped nor rescaled.
inline AnomalyMap fuse(const DiscrepancyMaps& maps, Fusion fusion, std::optional<double> gamma_l = 0.4,
                       std::optional<double> gamma_p = 0.4, double smoothing_sigma = 4.0) {
  for (const auto& g : {gamma_l, gamma_p})
    if (g && !(std::isfinite(*g) && *g > 0.0)) throw std::invalid_argument("gamma thresholds must be positive");
  if (maps.delta_z.height != maps.delta_x.height || maps.delta_z.width != maps.delta_x.width)
    throw ShapeError("discrepancy maps differ in size");
  AnomalyMap a;
  a.fusion = fusion;
  a.gamma_l = gamma_l;
  a.gamma_p = gamma_p;
  a.scores = Map2D(maps.delta_x.height, maps.delta_x.width);
  for (std::size_t i = 0; i < a.scores.size(); ++i) {
    const double lz = detail::clip_scale(maps.delta_z.values[i], gamma_l);
    const double lx = detail::clip_scale(maps.delta_x.values[i], gamma_p);
    double v = 0;
    switch (fusion) {
      case Fusion::Geometric: v = std::sqrt(lz * lx); break;
      case Fusion::Arithmetic: v = 0.5 * lz + 0.5 * lx; break;
      case Fusion::PixelOnly: v = lx; break;
      case Fusion::LatentOnly: v = lz; break;
    }
    a.scores.values[i] = v;
  }
  a.image_score = image_score(a.scores, smoothing_sigma);
  return a;
}

}  // namespace decodiff
