#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "decodiff/rng.hpp"
#include "decodiff/schedule.hpp"
#include "decodiff/tensor.hpp"

namespace decodiff {

inline long long round_half_up(double x) { return static_cast<long long>(std::floor(x + 0.5)); }

/// Patch-level partition of a latent. `visible` patches stay clean; the rest
/// are corrupted.
struct PatchMask {
  int patch_size = 1;
  int grid_h = 0;
  int grid_w = 0;
  std::vector<std::uint8_t> visible;  // row-major over the patch grid
  double visible_ratio = 0.0;

  int patches() const { return grid_h * grid_w; }
  bool patch_visible(int gy, int gx) const { return visible[static_cast<std::size_t>(gy) * grid_w + gx] != 0; }
  /// Visibility of latent cell (y, x).
  bool cell_visible(int y, int x) const { return patch_visible(y / patch_size, x / patch_size); }
  int visible_count() const { return static_cast<int>(std::count(visible.begin(), visible.end(), 1)); }
};

struct CorruptionConfig {
  double r_mask_max = 0.7;
  double r_shuffle_max = 0.3;
  std::vector<int> patch_sizes{1, 2, 4, 8};

  int max_patch_size() const { return *std::max_element(patch_sizes.begin(), patch_sizes.end()); }

  void validate() const {
    if (!(r_mask_max >= 0.0 && r_mask_max <= 1.0)) throw std::invalid_argument("R_mask must be in [0, 1]");
    if (!(r_shuffle_max >= 0.0 && r_shuffle_max <= 1.0)) throw std::invalid_argument("R_shuffle must be in [0, 1]");
    if (patch_sizes.empty()) throw std::invalid_argument("patch size set must not be empty");
    for (int p : patch_sizes)
      if (p <= 0) throw std::invalid_argument("patch sizes must be positive");
  }
};

struct CorruptionSample {
  LatentTensor z_t;
  LatentTensor eta_target;
  int t = 1;
  PatchMask mask;
  double shuffle_fraction_applied = 0.0;
  double r_mask_drawn = 0.0;
  double r_shuffle_drawn = 0.0;
};

inline void check_patch_grid(int h_lat, int w_lat, int patch_size) {
  if (patch_size <= 0 || h_lat % patch_size != 0 || w_lat % patch_size != 0)
    throw ShapeError("latent " + std::to_string(h_lat) + "x" + std::to_string(w_lat) +
                     " is not divisible by patch size " + std::to_string(patch_size));
}

/// Marks round(r_mask * n) patches visible, chosen uniformly without replacement.
inline PatchMask sample_mask(int h_lat, int w_lat, int patch_size, double r_mask, Rng& rng) {
  check_patch_grid(h_lat, w_lat, patch_size);
  if (!(r_mask >= 0.0 && r_mask <= 1.0)) throw std::invalid_argument("r_mask must be in [0, 1]");
  PatchMask m;
  m.patch_size = patch_size;
  m.grid_h = h_lat / patch_size;
  m.grid_w = w_lat / patch_size;
  const int n = m.patches();
  const int k = static_cast<int>(std::min<long long>(round_half_up(r_mask * n), n));
  m.visible.assign(n, 0);
  for (int idx : rng.choose(n, k)) m.visible[idx] = 1;
  m.visible_ratio = static_cast<double>(k) / n;
  return m;
}

/// Direction of deviation of a Gaussian-diffused element: eps - shift * z0,
/// with shift = dod_shift_coeff(t).
inline double gaussian_deviation(double z0, double eps, double shift) { return eps - shift * z0; }

/// Masked forward corruption with an explicit Gaussian draw `noise` (same
/// element layout as z0). Noisy patches are either replaced by a patch from a
/// batch-mate (a fraction round(r_shuffle * n_noisy) of them) or diffused as
/// sqrt(ab) z0 + sqrt(1 - ab) eps. Targets satisfy z_t = z0 + sqrt(1 - ab) eta.
inline CorruptionSample forward_corrupt_with_noise(const LatentTensor& z0, int t, const PatchMask& mask,
                                                   const NoiseSchedule& schedule, std::span<const double> noise,
                                                   Rng& rng, std::span<const LatentTensor> shuffle_pool,
                                                   double r_shuffle) {
  if (t < 1 || t > schedule.steps())
    throw std::out_of_range("corruption timestep " + std::to_string(t) + " outside [1, " +
                            std::to_string(schedule.steps()) + "]");
  if (!(r_shuffle >= 0.0 && r_shuffle <= 1.0)) throw std::invalid_argument("r_shuffle must be in [0, 1]");
  if (r_shuffle > 0.0 && shuffle_pool.empty())
    throw std::invalid_argument("patch shuffling requested with an empty shuffle pool");
  if (mask.grid_h * mask.patch_size != z0.height || mask.grid_w * mask.patch_size != z0.width)
    throw ShapeError("mask grid does not cover latent " + z0.shape_str());
  if (noise.size() != z0.size()) throw ShapeError("noise size does not match latent");
  for (const auto& other : shuffle_pool)
    if (!other.same_shape(z0)) throw ShapeError("shuffle pool latent shape mismatch");

  const double ab = schedule.alpha_bar(t);
  const double sqrt_ab = std::sqrt(ab);
  const double dev = schedule.deviation_scale(t);
  const double shift = schedule.dod_shift_coeff(t);
  const int p = mask.patch_size;

  CorruptionSample s;
  s.t = t;
  s.mask = mask;
  s.z_t = z0;
  s.eta_target = LatentTensor(z0.channels, z0.height, z0.width, 0.0f);

  std::vector<int> noisy;
  for (int i = 0; i < mask.patches(); ++i)
    if (!mask.visible[i]) noisy.push_back(i);
  const int n_shuffle = static_cast<int>(std::min<long long>(round_half_up(r_shuffle * noisy.size()),
                                                             static_cast<long long>(noisy.size())));
  std::vector<std::uint8_t> shuffled(mask.patches(), 0);
  for (int k : rng.choose(static_cast<int>(noisy.size()), n_shuffle)) shuffled[noisy[k]] = 1;
  s.shuffle_fraction_applied = noisy.empty() ? 0.0 : static_cast<double>(n_shuffle) / noisy.size();

  for (int idx : noisy) {
    const int gy = idx / mask.grid_w, gx = idx % mask.grid_w;
    if (shuffled[idx]) {
      const auto& src = shuffle_pool[rng.uniform_int(0, static_cast<int>(shuffle_pool.size()) - 1)];
      const int sy = rng.uniform_int(0, z0.height - p), sx = rng.uniform_int(0, z0.width - p);
      for (int c = 0; c < z0.channels; ++c)
        for (int dy = 0; dy < p; ++dy)
          for (int dx = 0; dx < p; ++dx) {
            const int y = gy * p + dy, x = gx * p + dx;
            const float zt = src.at(c, sy + dy, sx + dx);
            s.z_t.at(c, y, x) = zt;
            s.eta_target.at(c, y, x) = static_cast<float>((static_cast<double>(zt) - z0.at(c, y, x)) / dev);
          }
    } else {
      for (int c = 0; c < z0.channels; ++c)
        for (int dy = 0; dy < p; ++dy)
          for (int dx = 0; dx < p; ++dx) {
            const int y = gy * p + dy, x = gx * p + dx;
            const double z = z0.at(c, y, x);
            const double eps = noise[z0.index(c, y, x)];
            s.z_t.at(c, y, x) = static_cast<float>(sqrt_ab * z + dev * eps);
            s.eta_target.at(c, y, x) = static_cast<float>(gaussian_deviation(z, eps, shift));
          }
    }
  }
  return s;
}

/// As above, drawing the Gaussian noise from `rng`.
inline CorruptionSample forward_corrupt(const LatentTensor& z0, int t, const PatchMask& mask,
                                        const NoiseSchedule& schedule, Rng& rng,
                                        std::span<const LatentTensor> shuffle_pool, double r_shuffle) {
  std::vector<double> noise(z0.size());
  for (auto& v : noise) v = rng.normal();
  return forward_corrupt_with_noise(z0, t, mask, schedule, noise, rng, shuffle_pool, r_shuffle);
}

/// Independent per-sample draws of t ~ U{1..T}, r_mask ~ U[0, R_mask], patch
/// size ~ U(set) and r_shuffle ~ U[0, R_shuffle]; the shuffle pool for sample i
/// is the rest of the batch. Each sample uses its own derived rng stream.
inline std::vector<CorruptionSample> sample_training_corruption(const std::vector<LatentTensor>& z0_batch,
                                                                const CorruptionConfig& cfg,
                                                                const NoiseSchedule& schedule, Rng& rng) {
  cfg.validate();
  if (z0_batch.empty()) throw std::invalid_argument("corruption batch must not be empty");
  const auto& first = z0_batch.front();
  check_patch_grid(first.height, first.width, cfg.max_patch_size());
  for (const auto& z : z0_batch)
    if (!z.same_shape(first)) throw ShapeError("corruption batch has inconsistent latent shapes");

  const std::uint64_t base = rng.next();
  std::vector<CorruptionSample> out;
  out.reserve(z0_batch.size());
  for (std::size_t i = 0; i < z0_batch.size(); ++i) {
    Rng local(derive_seed(base, {i}));
    const int t = local.uniform_int(1, schedule.steps());
    const double r_mask = local.uniform(0.0, cfg.r_mask_max);
    const int p = cfg.patch_sizes[local.uniform_int(0, static_cast<int>(cfg.patch_sizes.size()) - 1)];
    const double r_shuffle = local.uniform(0.0, cfg.r_shuffle_max);
    auto mask = sample_mask(first.height, first.width, p, r_mask, local);
    std::vector<LatentTensor> pool;
    pool.reserve(z0_batch.size() - 1);
    for (std::size_t j = 0; j < z0_batch.size(); ++j)
      if (j != i) pool.push_back(z0_batch[j]);
    auto s = forward_corrupt(z0_batch[i], t, mask, schedule, local, pool, r_shuffle);
    s.r_mask_drawn = r_mask;
    s.r_shuffle_drawn = r_shuffle;
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace decodiff
