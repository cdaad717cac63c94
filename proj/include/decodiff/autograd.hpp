#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <memory>
#include <numeric>
#include <unordered_set>
#include <vector>

#include "decodiff/rng.hpp"
#include "decodiff/tensor.hpp"

// Minimal reverse-mode differentiation over Tensor<Real>. Each op returns a
// node that owns its value and a closure that pushes its gradient into its
// parents. Graphs are freed when the last reference to the output dies.
namespace decodiff::ag {

template <class Real>
struct Node {
  Tensor<Real> value;
  Tensor<Real> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  Tensor<Real>& ensure_grad() {
    if (grad.size() != value.size()) {
      auto s = value.shape();
      grad = Tensor<Real>(s[0], s[1], s[2], s[3]);
    }
    return grad;
  }
  void zero_grad() {
    if (!grad.empty()) grad.fill(Real(0));
  }
};

template <class Real>
using Var = std::shared_ptr<Node<Real>>;

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

/// Disables graph recording in its scope.
class NoGradGuard {
 public:
  NoGradGuard() : prev_(grad_mode()) { grad_mode() = false; }
  ~NoGradGuard() { grad_mode() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

template <class Real>
Var<Real> leaf(Tensor<Real> value, bool requires_grad = false) {
  auto n = std::make_shared<Node<Real>>();
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  return n;
}

template <class Real>
Var<Real> constant(Tensor<Real> value) {
  return leaf(std::move(value), false);
}

namespace detail {

template <class Real>
bool any_requires(const std::vector<Var<Real>>& ps) {
  for (const auto& p : ps)
    if (p && p->requires_grad) return true;
  return false;
}

template <class Real, class Fn>
Var<Real> make(Tensor<Real> value, std::vector<Var<Real>> parents, Fn&& make_backward) {
  auto n = std::make_shared<Node<Real>>();
  n->value = std::move(value);
  if (grad_mode() && any_requires(parents)) {
    n->requires_grad = true;
    n->backward = make_backward();
    n->parents = std::move(parents);
  }
  return n;
}

template <class Real>
using RowMat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class Real>
using MapMat = Eigen::Map<RowMat<Real>>;
template <class Real>
using ConstMapMat = Eigen::Map<const RowMat<Real>>;

}  // namespace detail

/// Runs reverse accumulation from a scalar output.
template <class Real>
void backward(const Var<Real>& root) {
  if (root->value.size() != 1) throw ShapeError("backward() needs a scalar output");
  std::vector<Node<Real>*> order;
  std::unordered_set<Node<Real>*> seen;
  std::vector<std::pair<Node<Real>*, std::size_t>> stack{{root.get(), 0}};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<Real>* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root->ensure_grad()[0] += Real(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<Real>* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

// ---------------------------------------------------------------- elementwise

template <class Real>
Var<Real> add(const Var<Real>& a, const Var<Real>& b) {
  require_same_shape(a->value, b->value, "add");
  Tensor<Real> out = a->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b->value[i];
  return detail::make<Real>(std::move(out), {a, b}, [a, b] {
    return [a, b](Node<Real>& self) {
      for (auto* p : {a.get(), b.get()}) {
        if (!p->requires_grad) continue;
        auto& g = p->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      }
    };
  });
}

template <class Real>
Var<Real> scale(const Var<Real>& a, Real s) {
  Tensor<Real> out = a->value;
  for (auto& v : out.values()) v *= s;
  return detail::make<Real>(std::move(out), {a}, [a, s] {
    return [a, s](Node<Real>& self) {
      auto& g = a->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * self.grad[i];
    };
  });
}

template <class Real>
Var<Real> silu(const Var<Real>& a) {
  Tensor<Real> out = a->value;
  for (auto& v : out.values()) v = v / (Real(1) + std::exp(-v));
  return detail::make<Real>(std::move(out), {a}, [a] {
    return [a](Node<Real>& self) {
      auto& g = a->ensure_grad();
      const auto& x = a->value;
      for (std::size_t i = 0; i < g.size(); ++i) {
        Real sig = Real(1) / (Real(1) + std::exp(-x[i]));
        g[i] += self.grad[i] * sig * (Real(1) + x[i] * (Real(1) - sig));
      }
    };
  });
}

/// Adds a per-sample, per-channel vector of shape (C, N, 1, 1) to every
/// spatial position of `x` (C, N, H, W).
template <class Real>
Var<Real> add_channel_bias(const Var<Real>& x, const Var<Real>& v) {
  const auto& xs = x->value;
  if (v->value.channels() != xs.channels() || v->value.batch() != xs.batch() || v->value.plane() != 1)
    throw ShapeError("add_channel_bias: vector shape " + shape_string(v->value.shape()) +
                     " does not match " + shape_string(xs.shape()));
  Tensor<Real> out = xs;
  const int plane = xs.plane();
  const std::size_t cn = static_cast<std::size_t>(xs.channels()) * xs.batch();
  for (std::size_t k = 0; k < cn; ++k)
    for (int i = 0; i < plane; ++i) out[k * plane + i] += v->value[k];
  return detail::make<Real>(std::move(out), {x, v}, [x, v, plane, cn] {
    return [x, v, plane, cn](Node<Real>& self) {
      if (x->requires_grad) {
        auto& g = x->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      }
      if (v->requires_grad) {
        auto& g = v->ensure_grad();
        for (std::size_t k = 0; k < cn; ++k) {
          Real s = 0;
          for (int i = 0; i < plane; ++i) s += self.grad[k * plane + i];
          g[k] += s;
        }
      }
    };
  });
}

template <class Real>
Var<Real> concat_channels(const Var<Real>& a, const Var<Real>& b) {
  const auto& av = a->value;
  const auto& bv = b->value;
  if (av.batch() != bv.batch() || av.height() != bv.height() || av.width() != bv.width())
    throw ShapeError("concat_channels: " + shape_string(av.shape()) + " vs " + shape_string(bv.shape()));
  Tensor<Real> out(av.channels() + bv.channels(), av.batch(), av.height(), av.width());
  std::copy(av.values().begin(), av.values().end(), out.values().begin());
  std::copy(bv.values().begin(), bv.values().end(), out.values().begin() + av.size());
  const std::size_t split = av.size();
  return detail::make<Real>(std::move(out), {a, b}, [a, b, split] {
    return [a, b, split](Node<Real>& self) {
      if (a->requires_grad) {
        auto& g = a->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      }
      if (b->requires_grad) {
        auto& g = b->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[split + i];
      }
    };
  });
}

/// Channels [begin, end) of `a`.
template <class Real>
Var<Real> slice_channels(const Var<Real>& a, int begin, int end) {
  const auto& av = a->value;
  if (begin < 0 || end > av.channels() || begin >= end) throw ShapeError("slice_channels: bad range");
  Tensor<Real> out(end - begin, av.batch(), av.height(), av.width());
  const std::size_t stride = static_cast<std::size_t>(av.batch()) * av.plane();
  const std::size_t offset = begin * stride;
  std::copy(av.values().begin() + offset, av.values().begin() + offset + out.size(), out.values().begin());
  return detail::make<Real>(std::move(out), {a}, [a, offset] {
    return [a, offset](Node<Real>& self) {
      auto& g = a->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[offset + i] += self.grad[i];
    };
  });
}

template <class Real>
Var<Real> upsample_nearest2(const Var<Real>& a) {
  const auto& av = a->value;
  Tensor<Real> out(av.channels(), av.batch(), av.height() * 2, av.width() * 2);
  for (int c = 0; c < av.channels(); ++c)
    for (int n = 0; n < av.batch(); ++n)
      for (int y = 0; y < out.height(); ++y)
        for (int x = 0; x < out.width(); ++x) out(c, n, y, x) = av(c, n, y / 2, x / 2);
  return detail::make<Real>(std::move(out), {a}, [a] {
    return [a](Node<Real>& self) {
      auto& g = a->ensure_grad();
      const auto& go = self.grad;
      for (int c = 0; c < go.channels(); ++c)
        for (int n = 0; n < go.batch(); ++n)
          for (int y = 0; y < go.height(); ++y)
            for (int x = 0; x < go.width(); ++x) g(c, n, y / 2, x / 2) += go(c, n, y, x);
    };
  });
}

/// Inverted dropout; identity when `training` is false or p == 0.
template <class Real>
Var<Real> dropout(const Var<Real>& a, double p, bool training, Rng& rng) {
  if (!training || p <= 0.0) return a;
  const Real keep_scale = Real(1.0 / (1.0 - p));
  auto mask = std::make_shared<std::vector<Real>>(a->value.size());
  Tensor<Real> out = a->value;
  for (std::size_t i = 0; i < out.size(); ++i) {
    (*mask)[i] = rng.uniform() < p ? Real(0) : keep_scale;
    out[i] *= (*mask)[i];
  }
  return detail::make<Real>(std::move(out), {a}, [a, mask] {
    return [a, mask](Node<Real>& self) {
      auto& g = a->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * (*mask)[i];
    };
  });
}

// --------------------------------------------------------------- convolution

/// 2-D convolution. `w` has shape (C_out, C_in, k, k); `b` is (C_out,1,1,1) or
/// null. Runs the whole batch as one GEMM over an im2col buffer.
template <class Real>
Var<Real> conv2d(const Var<Real>& x, const Var<Real>& w, const Var<Real>& b, int stride, int pad) {
  const auto& xv = x->value;
  const auto& wv = w->value;
  const int cin = xv.channels(), nb = xv.batch(), h = xv.height(), wd = xv.width();
  const int cout = wv.channels(), k = wv.height();
  if (wv.batch() != cin || wv.width() != k)
    throw ShapeError("conv2d: weight " + shape_string(wv.shape()) + " incompatible with input " +
                     shape_string(xv.shape()));
  const int ho = (h + 2 * pad - k) / stride + 1;
  const int wo = (wd + 2 * pad - k) / stride + 1;
  if (ho <= 0 || wo <= 0) throw ShapeError("conv2d: empty output");
  const int kk = cin * k * k;
  const int m = nb * ho * wo;
  const bool direct = (k == 1 && stride == 1 && pad == 0);

  auto cols = std::make_shared<std::vector<Real>>();
  if (!direct) {
    cols->assign(static_cast<std::size_t>(kk) * m, Real(0));
    for (int ci = 0; ci < cin; ++ci)
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx) {
          Real* row = cols->data() + static_cast<std::size_t>((ci * k + ky) * k + kx) * m;
          for (int n = 0; n < nb; ++n)
            for (int oy = 0; oy < ho; ++oy) {
              const int iy = oy * stride + ky - pad;
              Real* dst = row + (static_cast<std::size_t>(n) * ho + oy) * wo;
              if (iy < 0 || iy >= h) continue;
              const Real* src = xv.data() + xv.index(ci, n, iy, 0);
              for (int ox = 0; ox < wo; ++ox) {
                const int ix = ox * stride + kx - pad;
                if (ix >= 0 && ix < wd) dst[ox] = src[ix];
              }
            }
        }
  }
  const Real* col_ptr = direct ? xv.data() : cols->data();

  Tensor<Real> out(cout, nb, ho, wo);
  {
    detail::ConstMapMat<Real> wm(wv.data(), cout, kk);
    detail::ConstMapMat<Real> cm(col_ptr, kk, m);
    detail::MapMat<Real> om(out.data(), cout, m);
    om.noalias() = wm * cm;
    if (b) {
      for (int co = 0; co < cout; ++co) om.row(co).array() += b->value[co];
    }
  }
  if (direct) cols.reset();

  std::vector<Var<Real>> parents{x, w};
  if (b) parents.push_back(b);
  return detail::make<Real>(std::move(out), parents, [=] {
    return [=](Node<Real>& self) {
      detail::ConstMapMat<Real> gm(self.grad.data(), cout, m);
      const Real* cptr = direct ? x->value.data() : cols->data();
      if (w->requires_grad) {
        detail::ConstMapMat<Real> cm(cptr, kk, m);
        detail::MapMat<Real> gw(w->ensure_grad().data(), cout, kk);
        gw.noalias() += gm * cm.transpose();
      }
      if (b && b->requires_grad) {
        auto& gb = b->ensure_grad();
        // Plain loop: Eigen's vectorised sum depends on the buffer's alignment,
        // which would make results vary between runs.
        for (int co = 0; co < cout; ++co) {
          const Real* row = self.grad.data() + static_cast<std::size_t>(co) * m;
          Real acc = 0;
          for (int i = 0; i < m; ++i) acc += row[i];
          gb[co] += acc;
        }
      }
      if (x->requires_grad) {
        detail::ConstMapMat<Real> wm(w->value.data(), cout, kk);
        auto& gx = x->ensure_grad();
        if (direct) {
          detail::MapMat<Real> gxm(gx.data(), kk, m);
          gxm.noalias() += wm.transpose() * gm;
        } else {
          detail::RowMat<Real> dcol = wm.transpose() * gm;
          for (int ci = 0; ci < cin; ++ci)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const Real* row = dcol.data() + static_cast<std::size_t>((ci * k + ky) * k + kx) * m;
                for (int n = 0; n < nb; ++n)
                  for (int oy = 0; oy < ho; ++oy) {
                    const int iy = oy * stride + ky - pad;
                    if (iy < 0 || iy >= h) continue;
                    const Real* src = row + (static_cast<std::size_t>(n) * ho + oy) * wo;
                    Real* dst = gx.data() + gx.index(ci, n, iy, 0);
                    for (int ox = 0; ox < wo; ++ox) {
                      const int ix = ox * stride + kx - pad;
                      if (ix >= 0 && ix < wd) dst[ix] += src[ox];
                    }
                  }
              }
        }
      }
    };
  });
}

// ------------------------------------------------------------- normalization

/// Group normalization over (channels-in-group, H, W) per sample, with a
/// per-channel affine (gamma, beta of shape (C,1,1,1)).
template <class Real>
Var<Real> group_norm(const Var<Real>& x, const Var<Real>& gamma, const Var<Real>& beta, int groups,
                     Real eps = Real(1e-5)) {
  const auto& xv = x->value;
  const int c = xv.channels(), nb = xv.batch(), plane = xv.plane();
  if (groups <= 0 || c % groups != 0) throw ShapeError("group_norm: channels not divisible by groups");
  const int cpg = c / groups;
  const Real count = Real(cpg) * plane;
  auto xhat = std::make_shared<Tensor<Real>>(c, nb, xv.height(), xv.width());
  auto inv_std = std::make_shared<std::vector<Real>>(static_cast<std::size_t>(groups) * nb);
  Tensor<Real> out(c, nb, xv.height(), xv.width());
  for (int n = 0; n < nb; ++n)
    for (int g = 0; g < groups; ++g) {
      double mean = 0, sq = 0;
      for (int ci = g * cpg; ci < (g + 1) * cpg; ++ci) {
        const Real* p = xv.data() + xv.index(ci, n, 0, 0);
        for (int i = 0; i < plane; ++i) mean += p[i];
      }
      mean /= count;
      for (int ci = g * cpg; ci < (g + 1) * cpg; ++ci) {
        const Real* p = xv.data() + xv.index(ci, n, 0, 0);
        for (int i = 0; i < plane; ++i) sq += (p[i] - mean) * (p[i] - mean);
      }
      const Real is = Real(1.0 / std::sqrt(sq / count + eps));
      (*inv_std)[static_cast<std::size_t>(n) * groups + g] = is;
      for (int ci = g * cpg; ci < (g + 1) * cpg; ++ci) {
        const std::size_t base = xv.index(ci, n, 0, 0);
        for (int i = 0; i < plane; ++i) {
          Real xh = (xv[base + i] - Real(mean)) * is;
          (*xhat)[base + i] = xh;
          out[base + i] = xh * gamma->value[ci] + beta->value[ci];
        }
      }
    }
  return detail::make<Real>(std::move(out), {x, gamma, beta}, [=] {
    return [=](Node<Real>& self) {
      const auto& gy = self.grad;
      if (gamma->requires_grad || beta->requires_grad) {
        auto& gg = gamma->ensure_grad();
        auto& gb = beta->ensure_grad();
        for (int ci = 0; ci < c; ++ci)
          for (int n = 0; n < nb; ++n) {
            const std::size_t base = gy.index(ci, n, 0, 0);
            Real sg = 0, sb = 0;
            for (int i = 0; i < plane; ++i) {
              sg += gy[base + i] * (*xhat)[base + i];
              sb += gy[base + i];
            }
            gg[ci] += sg;
            gb[ci] += sb;
          }
      }
      if (!x->requires_grad) return;
      auto& gx = x->ensure_grad();
      for (int n = 0; n < nb; ++n)
        for (int g = 0; g < groups; ++g) {
          Real mean_d = 0, mean_dx = 0;
          for (int ci = g * cpg; ci < (g + 1) * cpg; ++ci) {
            const std::size_t base = gy.index(ci, n, 0, 0);
            for (int i = 0; i < plane; ++i) {
              Real d = gy[base + i] * gamma->value[ci];
              mean_d += d;
              mean_dx += d * (*xhat)[base + i];
            }
          }
          mean_d /= count;
          mean_dx /= count;
          const Real is = (*inv_std)[static_cast<std::size_t>(n) * groups + g];
          for (int ci = g * cpg; ci < (g + 1) * cpg; ++ci) {
            const std::size_t base = gy.index(ci, n, 0, 0);
            for (int i = 0; i < plane; ++i) {
              Real d = gy[base + i] * gamma->value[ci];
              gx[base + i] += is * (d - mean_d - (*xhat)[base + i] * mean_dx);
            }
          }
        }
    };
  });
}

// ----------------------------------------------------------------- attention

/// Multi-head self-attention over spatial positions. `qkv` has 3C channels laid
/// out as [q | k | v]; head j uses channels [j*d, (j+1)*d) of each part.
template <class Real>
Var<Real> spatial_attention(const Var<Real>& qkv, int heads) {
  using Mat = detail::RowMat<Real>;
  const auto& in = qkv->value;
  if (in.channels() % 3 != 0) throw ShapeError("spatial_attention: channels must be 3C");
  const int c = in.channels() / 3, nb = in.batch(), tokens = in.plane();
  if (heads <= 0 || c % heads != 0) throw ShapeError("spatial_attention: C not divisible by heads");
  const int d = c / heads;
  const Real sc = Real(1.0 / std::sqrt(static_cast<double>(d)));

  auto gather = [&in, tokens, d](int n, int ch0) {
    Mat m(tokens, d);
    for (int j = 0; j < d; ++j) {
      const Real* p = in.data() + in.index(ch0 + j, n, 0, 0);
      for (int i = 0; i < tokens; ++i) m(i, j) = p[i];
    }
    return m;
  };

  auto probs = std::make_shared<std::vector<Mat>>();
  probs->reserve(static_cast<std::size_t>(nb) * heads);
  Tensor<Real> out(c, nb, in.height(), in.width());
  for (int n = 0; n < nb; ++n)
    for (int hh = 0; hh < heads; ++hh) {
      Mat q = gather(n, hh * d), k = gather(n, c + hh * d), v = gather(n, 2 * c + hh * d);
      Mat s = (q * k.transpose()) * sc;
      for (int i = 0; i < tokens; ++i) {
        Real mx = s.row(i).maxCoeff();
        s.row(i) = (s.row(i).array() - mx).exp();
        s.row(i) /= s.row(i).sum();
      }
      Mat o = s * v;
      for (int j = 0; j < d; ++j) {
        Real* p = out.data() + out.index(hh * d + j, n, 0, 0);
        for (int i = 0; i < tokens; ++i) p[i] = o(i, j);
      }
      probs->push_back(std::move(s));
    }

  return detail::make<Real>(std::move(out), {qkv}, [=] {
    return [=](Node<Real>& self) {
      const auto& src = qkv->value;
      auto& g = qkv->ensure_grad();
      auto gat = [&src, tokens, d](int n, int ch0) {
        Mat m(tokens, d);
        for (int j = 0; j < d; ++j) {
          const Real* p = src.data() + src.index(ch0 + j, n, 0, 0);
          for (int i = 0; i < tokens; ++i) m(i, j) = p[i];
        }
        return m;
      };
      auto scatter = [&g, tokens, d](int n, int ch0, const Mat& m) {
        for (int j = 0; j < d; ++j) {
          Real* p = g.data() + g.index(ch0 + j, n, 0, 0);
          for (int i = 0; i < tokens; ++i) p[i] += m(i, j);
        }
      };
      for (int n = 0; n < nb; ++n)
        for (int hh = 0; hh < heads; ++hh) {
          const Mat& p = (*probs)[static_cast<std::size_t>(n) * heads + hh];
          Mat q = gat(n, hh * d), k = gat(n, c + hh * d), v = gat(n, 2 * c + hh * d);
          Mat go(tokens, d);
          for (int j = 0; j < d; ++j) {
            const Real* gp = self.grad.data() + self.grad.index(hh * d + j, n, 0, 0);
            for (int i = 0; i < tokens; ++i) go(i, j) = gp[i];
          }
          Mat dv = p.transpose() * go;
          Mat dp = go * v.transpose();
          Mat ds = p.array() * (dp.colwise() - (dp.array() * p.array()).rowwise().sum().matrix()).array();
          ds *= sc;
          scatter(n, hh * d, ds * k);
          scatter(n, c + hh * d, ds.transpose() * q);
          scatter(n, 2 * c + hh * d, dv);
        }
    };
  });
}

// --------------------------------------------------------------------- losses

/// Mean squared error against a constant target, reduced to a scalar.
template <class Real>
Var<Real> mse_loss(const Var<Real>& pred, const Tensor<Real>& target) {
  require_same_shape(pred->value, target, "mse_loss");
  const std::size_t n = target.size();
  double acc = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double d = static_cast<double>(pred->value[i]) - target[i];
    acc += d * d;
  }
  Tensor<Real> out(1, 1, 1, 1, Real(acc / static_cast<double>(n)));
  auto tgt = std::make_shared<Tensor<Real>>(target);
  return detail::make<Real>(std::move(out), {pred}, [pred, tgt, n] {
    return [pred, tgt, n](Node<Real>& self) {
      auto& g = pred->ensure_grad();
      const Real f = Real(2) * self.grad[0] / Real(n);
      for (std::size_t i = 0; i < n; ++i) g[i] += f * (pred->value[i] - (*tgt)[i]);
    };
  });
}

template <class Real>
Var<Real> add_scalars(const Var<Real>& a, const Var<Real>& b) {
  return add(a, b);
}

/// mu + exp(logvar / 2) * noise, with `noise` held constant.
template <class Real>
Var<Real> reparameterize(const Var<Real>& mu, const Var<Real>& logvar, const Tensor<Real>& noise) {
  require_same_shape(mu->value, logvar->value, "reparameterize");
  require_same_shape(mu->value, noise, "reparameterize");
  Tensor<Real> out = mu->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += std::exp(logvar->value[i] / Real(2)) * noise[i];
  auto eps = std::make_shared<Tensor<Real>>(noise);
  return detail::make<Real>(std::move(out), {mu, logvar}, [mu, logvar, eps] {
    return [mu, logvar, eps](Node<Real>& self) {
      if (mu->requires_grad) {
        auto& g = mu->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      }
      if (logvar->requires_grad) {
        auto& g = logvar->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i)
          g[i] += self.grad[i] * Real(0.5) * std::exp(logvar->value[i] / Real(2)) * (*eps)[i];
      }
    };
  });
}

/// KL(N(mu, exp(logvar)) || N(0, 1)) averaged over elements.
template <class Real>
Var<Real> kl_standard_normal(const Var<Real>& mu, const Var<Real>& logvar) {
  require_same_shape(mu->value, logvar->value, "kl_standard_normal");
  const std::size_t n = mu->value.size();
  double acc = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double m = mu->value[i], lv = logvar->value[i];
    acc += 0.5 * (m * m + std::exp(lv) - 1.0 - lv);
  }
  Tensor<Real> out(1, 1, 1, 1, Real(acc / static_cast<double>(n)));
  return detail::make<Real>(std::move(out), {mu, logvar}, [mu, logvar, n] {
    return [mu, logvar, n](Node<Real>& self) {
      const Real f = self.grad[0] / Real(n);
      if (mu->requires_grad) {
        auto& g = mu->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) g[i] += f * mu->value[i];
      }
      if (logvar->requires_grad) {
        auto& g = logvar->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) g[i] += f * Real(0.5) * (std::exp(logvar->value[i]) - Real(1));
      }
    };
  });
}

}  // namespace decodiff::ag
