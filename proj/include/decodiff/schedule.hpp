#pragma once

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

namespace decodiff {

struct DomainError : std::domain_error {
  using std::domain_error::domain_error;
};

/// Discrete diffusion schedule. Index t = 0 is the clean latent (alpha_bar = 1);
/// betas/alphas are stored for t = 1..T at position t - 1.
class NoiseSchedule {
 public:
  NoiseSchedule() = default;

  int steps() const { return static_cast<int>(betas_.size()); }
  double offset() const { return offset_; }
  double beta(int t) const { return betas_.at(checked(t, 1) - 1); }
  double alpha(int t) const { return 1.0 - beta(t); }
  double alpha_bar(int t) const { return alpha_bars_.at(checked(t, 0)); }
  const std::vector<double>& betas() const { return betas_; }
  const std::vector<double>& alpha_bars() const { return alpha_bars_; }

  /// sqrt(1 - alpha_bar_t): the scale on the direction of deviation.
  double deviation_scale(int t) const { return std::sqrt(1.0 - alpha_bar(t)); }

  /// (1 - sqrt(alpha_bar_t)) / sqrt(1 - alpha_bar_t): coefficient of z0 in the
  /// direction of deviation. Undefined at t = 0.
  double dod_shift_coeff(int t) const {
    if (t == 0) throw DomainError("dod_shift_coeff is undefined at t = 0");
    return shift_coeff_from_alpha_bar(alpha_bar(t));
  }

  static double shift_coeff_from_alpha_bar(double ab) {
    if (!(ab < 1.0)) throw DomainError("dod_shift_coeff requires alpha_bar < 1");
    return (1.0 - std::sqrt(ab)) / std::sqrt(1.0 - ab);
  }

  friend NoiseSchedule build_cosine_schedule(int steps, double offset);

 private:
  int checked(int t, int lo) const {
    if (t < lo || t > steps())
      throw std::out_of_range("timestep " + std::to_string(t) + " outside [" + std::to_string(lo) +
                              ", " + std::to_string(steps()) + "]");
    return t;
  }

  double offset_ = 0.008;
  std::vector<double> betas_;
  std::vector<double> alpha_bars_;
};

inline constexpr double kMaxBeta = 0.999;

/// Squared-cosine schedule: f(t) = cos^2(((t/T + s)/(1 + s)) * pi/2),
/// beta_t = min(1 - f(t)/f(t-1), 0.999), alpha_bar_t = prod(1 - beta_i).
inline NoiseSchedule build_cosine_schedule(int steps, double offset = 0.008) {
  if (steps < 1) throw std::invalid_argument("schedule needs at least one step");
  if (!std::isfinite(offset) || offset <= 0.0 || offset >= 1.0)
    throw std::invalid_argument("cosine offset must be finite and in (0, 1)");
  auto f = [&](double t) {
    double c = std::cos(((t / steps + offset) / (1.0 + offset)) * std::numbers::pi / 2.0);
    return c * c;
  };
  NoiseSchedule s;
  s.offset_ = offset;
  s.betas_.resize(steps);
  s.alpha_bars_.resize(steps + 1);
  s.alpha_bars_[0] = 1.0;
  for (int t = 1; t <= steps; ++t) {
    double b = std::min(1.0 - f(t) / f(t - 1), kMaxBeta);
    s.betas_[t - 1] = b;
    s.alpha_bars_[t] = s.alpha_bars_[t - 1] * (1.0 - b);
  }
  return s;
}

}  // namespace decodiff
