#pragma once

#include <concepts>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "decodiff/dod_net.hpp"
#include "decodiff/schedule.hpp"
#include "decodiff/tensor.hpp"

namespace decodiff {

using LatentBatch = std::vector<LatentTensor>;

/// Anything that maps (z_t batch, t) to a predicted direction of deviation.
template <class P>
concept DoDPredictor = requires(const P& p, const LatentBatch& z, int t) {
  { p(z, t) } -> std::convertible_to<LatentBatch>;
};

using AnyPredictor = std::function<LatentBatch(const LatentBatch&, int)>;

/// Adapts a trained network to the predictor interface (inference mode).
class NetworkPredictor {
 public:
  explicit NetworkPredictor(const DoDNet<float>& net) : net_(&net) {}
  LatentBatch operator()(const LatentBatch& z, int t) const {
    for (const auto& item : z) net_->check_input(item.channels, item.height, item.width);
    return unstack<LatentTag>(net_->predict(stack<float>(z), t));
  }

 private:
  const DoDNet<float>* net_;
};

/// Predicts exactly zero deviation.
struct ZeroPredictor {
  LatentBatch operator()(const LatentBatch& z, int) const {
    LatentBatch out;
    for (const auto& item : z) out.emplace_back(item.channels, item.height, item.width, 0.0f);
    return out;
  }
};

/// Analytic direction of deviation relative to known clean latents:
/// eta = (z_t - z0) / sqrt(1 - alpha_bar_t).
class OraclePredictor {
 public:
  OraclePredictor(LatentBatch clean, const NoiseSchedule& schedule) : clean_(std::move(clean)), schedule_(&schedule) {}
  LatentBatch operator()(const LatentBatch& z, int t) const {
    if (z.size() != clean_.size()) throw ShapeError("oracle batch size mismatch");
    const double dev = schedule_->deviation_scale(t);
    LatentBatch out;
    for (std::size_t i = 0; i < z.size(); ++i) {
      if (!z[i].same_shape(clean_[i])) throw ShapeError("oracle latent shape mismatch");
      LatentTensor e(z[i].channels, z[i].height, z[i].width);
      for (std::size_t k = 0; k < e.size(); ++k)
        e.values[k] = static_cast<float>((static_cast<double>(z[i].values[k]) - clean_[i].values[k]) / dev);
      out.push_back(std::move(e));
    }
    return out;
  }

 private:
  LatentBatch clean_;
  const NoiseSchedule* schedule_;
};

enum class CorrectionStrategy { Progressive, DirectReplace };

inline std::string_view to_string(CorrectionStrategy s) {
  return s == CorrectionStrategy::Progressive ? "progressive" : "direct_replace";
}

inline CorrectionStrategy strategy_from_string(std::string_view s) {
  if (s == "progressive") return CorrectionStrategy::Progressive;
  if (s == "direct_replace") return CorrectionStrategy::DirectReplace;
  throw std::invalid_argument("unknown correction strategy '" + std::string(s) + "'");
}

struct ReverseTrace {
  std::vector<LatentBatch> latents;  // input first, corrected latent last
  std::vector<int> timesteps_visited;
};

namespace detail {

inline void check_t(const NoiseSchedule& s, int t) {
  if (t < 1 || t > s.steps())
    throw std::out_of_range("reverse timestep " + std::to_string(t) + " outside [1, " + std::to_string(s.steps()) + "]");
}

template <DoDPredictor P>
LatentBatch predict_checked(const P& model, const LatentBatch& z, int t) {
  LatentBatch eta = model(z, t);
  if (eta.size() != z.size()) throw ShapeError("predictor returned a batch of the wrong size");
  for (std::size_t i = 0; i < z.size(); ++i)
    if (!eta[i].same_shape(z[i])) throw ShapeError("predictor output shape differs from its input");
  return eta;
}

/// Returns base + coeff * eta elementwise, computed in double.
inline LatentBatch axpy(const LatentBatch& base, double coeff, const LatentBatch& eta) {
  LatentBatch out = base;
  for (std::size_t i = 0; i < out.size(); ++i)
    for (std::size_t k = 0; k < out[i].size(); ++k)
      out[i].values[k] = static_cast<float>(static_cast<double>(base[i].values[k]) + coeff * eta[i].values[k]);
  return out;
}

}  // namespace detail

/// z0_hat = z_t - sqrt(1 - alpha_bar_t) * eta(z_t, t).
template <DoDPredictor P>
LatentBatch predict_clean(const P& model, const LatentBatch& z_t, int t, const NoiseSchedule& schedule) {
  detail::check_t(schedule, t);
  return detail::axpy(z_t, -schedule.deviation_scale(t), detail::predict_checked(model, z_t, t));
}

/// One deterministic correction step from t to `t_next` (t - 1 by default).
/// Progressive: z0_hat + sqrt(1 - alpha_bar_{t_next}) * eta; direct replace:
/// z0_hat.
template <DoDPredictor P>
LatentBatch reverse_step(const P& model, const LatentBatch& z_t, int t, CorrectionStrategy strategy,
                         const NoiseSchedule& schedule, int t_next = -1) {
  detail::check_t(schedule, t);
  if (t_next < 0) t_next = t - 1;
  if (t_next >= t) throw std::out_of_range("reverse step must move to an earlier timestep");
  LatentBatch eta = detail::predict_checked(model, z_t, t);
  LatentBatch z0_hat = detail::axpy(z_t, -schedule.deviation_scale(t), eta);
  if (strategy == CorrectionStrategy::DirectReplace || t_next == 0) return z0_hat;
  return detail::axpy(z0_hat, schedule.deviation_scale(t_next), eta);
}

/// Timesteps visited by a `steps`-step correction: {T} for one step, otherwise
/// `steps` evenly spaced values from T down to 1 (rounded half up).
inline std::vector<int> correction_timesteps(int total, int steps) {
  if (steps < 1 || steps > total)
    throw std::out_of_range("correction steps " + std::to_string(steps) + " outside [1, " + std::to_string(total) + "]");
  if (steps == 1) return {total};
  std::vector<int> ts(steps);
  for (int i = 0; i < steps; ++i) {
    double v = total - (total - 1.0) * i / (steps - 1.0);
    ts[i] = static_cast<int>(std::floor(v + 0.5));
  }
  return ts;
}

/// Deterministic deviation correction. The input latent is taken as z_T with
/// no added noise, then corrected along correction_timesteps().
template <DoDPredictor P>
std::pair<LatentBatch, ReverseTrace> correct(const P& model, const LatentBatch& input, int steps,
                                             CorrectionStrategy strategy, const NoiseSchedule& schedule) {
  ReverseTrace trace;
  trace.timesteps_visited = correction_timesteps(schedule.steps(), steps);
  trace.latents.push_back(input);
  LatentBatch z = input;
  for (std::size_t i = 0; i < trace.timesteps_visited.size(); ++i) {
    const int t = trace.timesteps_visited[i];
    const int t_next = i + 1 < trace.timesteps_visited.size() ? trace.timesteps_visited[i + 1] : 0;
    z = reverse_step(model, z, t, strategy, schedule, t_next);
    trace.latents.push_back(z);
  }
  return {std::move(z), std::move(trace)};
}

}  // namespace decodiff
