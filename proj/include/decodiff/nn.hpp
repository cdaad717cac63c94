#pragma once

#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "decodiff/autograd.hpp"

namespace decodiff {

/// Raised when a loss or activation becomes non-finite during optimization.
struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace decodiff

namespace decodiff::nn {

/// Ordered, named collection of trainable leaves.
template <class Real>
class ParamStore {
 public:
  ag::Var<Real> create(std::string name, Tensor<Real> init) {
    auto v = ag::leaf(std::move(init), true);
    entries_.emplace_back(std::move(name), v);
    return v;
  }

  const std::vector<std::pair<std::string, ag::Var<Real>>>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [_, v] : entries_) n += v->value.size();
    return n;
  }

  void zero_grad() {
    for (auto& [_, v] : entries_) v->zero_grad();
  }

 private:
  std::vector<std::pair<std::string, ag::Var<Real>>> entries_;
};

template <class Real>
Tensor<Real> uniform_tensor(int c, int n, int h, int w, double bound, Rng& rng) {
  Tensor<Real> t(c, n, h, w);
  for (auto& v : t.values()) v = static_cast<Real>(rng.uniform(-bound, bound));
  return t;
}

template <class Real>
struct Conv2d {
  ag::Var<Real> weight;
  ag::Var<Real> bias;
  int stride = 1;
  int pad = 0;

  static Conv2d make(ParamStore<Real>& ps, const std::string& name, int cin, int cout, int k, int stride,
                     Rng& rng, bool zero = false) {
    Conv2d c;
    const double bound = 1.0 / std::sqrt(static_cast<double>(cin * k * k));
    c.weight = ps.create(name + ".weight",
                         zero ? Tensor<Real>(cout, cin, k, k) : uniform_tensor<Real>(cout, cin, k, k, bound, rng));
    c.bias = ps.create(name + ".bias", zero ? Tensor<Real>(cout, 1, 1, 1) : uniform_tensor<Real>(cout, 1, 1, 1, bound, rng));
    c.stride = stride;
    c.pad = k / 2;
    return c;
  }

  ag::Var<Real> operator()(const ag::Var<Real>& x) const { return ag::conv2d(x, weight, bias, stride, pad); }
  int out_channels() const { return weight->value.channels(); }
};

inline int norm_groups(int channels) { return std::gcd(32, channels); }

template <class Real>
struct GroupNorm {
  ag::Var<Real> gamma;
  ag::Var<Real> beta;
  int groups = 1;

  static GroupNorm make(ParamStore<Real>& ps, const std::string& name, int channels) {
    GroupNorm g;
    g.gamma = ps.create(name + ".gamma", Tensor<Real>(channels, 1, 1, 1, Real(1)));
    g.beta = ps.create(name + ".beta", Tensor<Real>(channels, 1, 1, 1));
    g.groups = norm_groups(channels);
    return g;
  }

  ag::Var<Real> operator()(const ag::Var<Real>& x) const { return ag::group_norm(x, gamma, beta, groups); }
};

/// AdamW with decoupled weight decay applied to every parameter.
template <class Real>
class AdamW {
 public:
  struct Options {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
  };

  AdamW() = default;
  AdamW(const ParamStore<Real>& ps, Options opt) : opt_(opt) {
    for (const auto& [_, v] : ps.entries()) {
      m_.emplace_back(v->value.size(), 0.0);
      v_.emplace_back(v->value.size(), 0.0);
    }
  }

  void step(ParamStore<Real>& ps, double lr) {
    if (ps.size() != m_.size()) throw std::logic_error("AdamW: parameter set changed");
    ++steps_;
    const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(steps_));
    const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(steps_));
    std::size_t k = 0;
    for (auto& [_, p] : ps.entries()) {
      auto& m = m_[k];
      auto& v = v_[k];
      ++k;
      if (p->grad.empty()) continue;
      auto& val = p->value;
      const auto& g = p->grad;
      for (std::size_t i = 0; i < val.size(); ++i) {
        double gi = g[i];
        double w = val[i];
        w -= lr * opt_.weight_decay * w;
        m[i] = opt_.beta1 * m[i] + (1.0 - opt_.beta1) * gi;
        v[i] = opt_.beta2 * v[i] + (1.0 - opt_.beta2) * gi * gi;
        w -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + opt_.eps);
        val[i] = static_cast<Real>(w);
      }
    }
  }

  long long steps() const { return steps_; }
  const Options& options() const { return opt_; }
  std::vector<std::vector<double>>& first_moments() { return m_; }
  std::vector<std::vector<double>>& second_moments() { return v_; }
  const std::vector<std::vector<double>>& first_moments() const { return m_; }
  const std::vector<std::vector<double>>& second_moments() const { return v_; }
  void set_steps(long long s) { steps_ = s; }

 private:
  Options opt_{};
  long long steps_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

}  // namespace decodiff::nn
