#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace decodiff {

struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Dense 4-D activation tensor stored channel-major: (channels, batch, height,
/// width). Keeping channels outermost lets a whole batch go through a
/// convolution as a single GEMM, and makes channel concatenation a plain
/// append.
template <class Real>
class Tensor {
 public:
  using value_type = Real;

  Tensor() = default;
  Tensor(int channels, int batch, int height, int width, Real fill = Real(0))
      : shape_{channels, batch, height, width},
        data_(static_cast<std::size_t>(channels) * batch * height * width, fill) {
    if (channels < 0 || batch < 0 || height < 0 || width < 0)
      throw ShapeError("negative tensor dimension");
  }

  int channels() const { return shape_[0]; }
  int batch() const { return shape_[1]; }
  int height() const { return shape_[2]; }
  int width() const { return shape_[3]; }
  int plane() const { return shape_[2] * shape_[3]; }
  const std::array<int, 4>& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  Real* data() { return data_.data(); }
  const Real* data() const { return data_.data(); }
  std::vector<Real>& values() { return data_; }
  const std::vector<Real>& values() const { return data_; }

  std::size_t index(int c, int n, int y, int x) const {
    return ((static_cast<std::size_t>(c) * shape_[1] + n) * shape_[2] + y) * shape_[3] + x;
  }
  Real& operator()(int c, int n, int y, int x) { return data_[index(c, n, y, x)]; }
  Real operator()(int c, int n, int y, int x) const { return data_[index(c, n, y, x)]; }
  Real& operator[](std::size_t i) { return data_[i]; }
  Real operator[](std::size_t i) const { return data_[i]; }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  void fill(Real v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](Real v) { return std::isfinite(v); });
  }

 private:
  std::array<int, 4> shape_{0, 0, 0, 0};
  std::vector<Real> data_;
};

inline std::string shape_string(const std::array<int, 4>& s) {
  return "(" + std::to_string(s[0]) + "," + std::to_string(s[1]) + "," + std::to_string(s[2]) + "," +
         std::to_string(s[3]) + ")";
}

template <class Real>
void require_same_shape(const Tensor<Real>& a, const Tensor<Real>& b, const char* what) {
  if (!a.same_shape(b))
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
}

/// Planar (channels, height, width) array of 32-bit values. `Tag` makes images
/// and latents distinct types.
template <class Tag>
struct Planar {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<float> values;

  Planar() = default;
  Planar(int c, int h, int w, float fill = 0.0f)
      : channels(c), height(h), width(w), values(static_cast<std::size_t>(c) * h * w, fill) {
    if (c <= 0 || h <= 0 || w <= 0) throw ShapeError("planar dimensions must be positive");
  }

  std::size_t size() const { return values.size(); }
  std::size_t index(int c, int y, int x) const {
    return (static_cast<std::size_t>(c) * height + y) * width + x;
  }
  float& at(int c, int y, int x) { return values[index(c, y, x)]; }
  float at(int c, int y, int x) const { return values[index(c, y, x)]; }

  bool same_shape(const Planar& o) const {
    return channels == o.channels && height == o.height && width == o.width;
  }
  bool all_finite() const {
    return std::all_of(values.begin(), values.end(), [](float v) { return std::isfinite(v); });
  }
  std::string shape_str() const {
    return std::to_string(height) + "x" + std::to_string(width) + "x" + std::to_string(channels);
  }
  friend bool operator==(const Planar&, const Planar&) = default;
};

struct ImageTag {};
struct LatentTag {};

/// Image with values in [0,1], logical shape H x W x C.
using ImageTensor = Planar<ImageTag>;
/// Latent code, logical shape H' x W' x C'.
using LatentTensor = Planar<LatentTag>;

/// Single-channel real map at image resolution.
struct Map2D {
  int height = 0;
  int width = 0;
  std::vector<double> values;

  Map2D() = default;
  Map2D(int h, int w, double fill = 0.0)
      : height(h), width(w), values(static_cast<std::size_t>(h) * w, fill) {}
  double& at(int y, int x) { return values[static_cast<std::size_t>(y) * width + x]; }
  double at(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x]; }
  std::size_t size() const { return values.size(); }
};

/// Stacks planar arrays into a (C, N, H, W) tensor.
template <class Real, class Tag>
Tensor<Real> stack(const std::vector<Planar<Tag>>& items) {
  if (items.empty()) throw ShapeError("cannot stack an empty batch");
  const auto& f = items.front();
  Tensor<Real> out(f.channels, static_cast<int>(items.size()), f.height, f.width);
  for (int n = 0; n < static_cast<int>(items.size()); ++n) {
    const auto& it = items[n];
    if (!it.same_shape(f)) throw ShapeError("stack: inconsistent item shapes");
    for (int c = 0; c < f.channels; ++c)
      for (int y = 0; y < f.height; ++y)
        for (int x = 0; x < f.width; ++x) out(c, n, y, x) = static_cast<Real>(it.at(c, y, x));
  }
  return out;
}

template <class Tag, class Real>
std::vector<Planar<Tag>> unstack(const Tensor<Real>& t) {
  std::vector<Planar<Tag>> out;
  out.reserve(t.batch());
  for (int n = 0; n < t.batch(); ++n) {
    Planar<Tag> p(t.channels(), t.height(), t.width());
    for (int c = 0; c < t.channels(); ++c)
      for (int y = 0; y < t.height(); ++y)
        for (int x = 0; x < t.width(); ++x) p.at(c, y, x) = static_cast<float>(t(c, n, y, x));
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace decodiff
