#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "titok/params.hpp"
#include "titok/tensor.hpp"

namespace titok {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

template <class T>
struct MomentBuffers {
  std::vector<T> m;
  std::vector<T> v;
};

/// One decoupled-weight-decay Adam update of `param` in place; `step` is the
/// 1-based update count used for bias correction.
template <class T>
void adamw_update(Tensor<T>& param, std::span<const T> grad, MomentBuffers<T>& state, std::int64_t step,
                  const AdamWConfig& hyper, double lr, bool decay = true) {
  if (!param.requires_grad()) throw ContractError("adamw_update: attempt to update a frozen tensor");
  if (grad.size() != param.numel()) throw DimensionError("adamw_update: gradient size differs from parameter size");
  if (step < 1) throw ContractError("adamw_update: step counter must start at 1");
  for (T g : grad) {
    if (!std::isfinite(g)) throw NumericError("adamw_update: non-finite gradient");
  }
  if (state.m.empty()) {
    state.m.assign(param.numel(), T(0));
    state.v.assign(param.numel(), T(0));
  }
  if (state.m.size() != param.numel() || state.v.size() != param.numel()) {
    throw DimensionError("adamw_update: moment buffers do not match the parameter");
  }
  const double c1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(step));
  const double wd = decay ? hyper.weight_decay : 0.0;
  auto theta = param.mutable_values();
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double g = grad[i];
    const double m = hyper.beta1 * static_cast<double>(state.m[i]) + (1.0 - hyper.beta1) * g;
    const double v = hyper.beta2 * static_cast<double>(state.v[i]) + (1.0 - hyper.beta2) * g * g;
    state.m[i] = static_cast<T>(m);
    state.v[i] = static_cast<T>(v);
    const double m_hat = m / c1;
    const double v_hat = v / c2;
    const double p = theta[i];
    theta[i] = static_cast<T>(p - lr * (m_hat / (std::sqrt(v_hat) + hyper.eps) + wd * p));
  }
}

/// AdamW over a named parameter list. Moments are keyed by parameter name.
template <class T>
class AdamW {
 public:
  AdamWConfig hyper;
  std::int64_t step_count = 0;
  std::map<std::string, MomentBuffers<T>> state;

  AdamW() = default;
  explicit AdamW(AdamWConfig h) : hyper(h) {}

  /// Applies one update to every parameter that received a gradient. Frozen
  /// parameters in the list are a contract violation.
  void step(ParamList<T>& params, double lr) {
    ++step_count;
    for (auto& ref : params) {
      if (!ref.tensor->requires_grad()) {
        throw ContractError("AdamW: parameter '" + ref.name + "' is frozen and cannot be updated");
      }
      if (!ref.tensor->has_grad()) continue;
      adamw_update(*ref.tensor, ref.tensor->grad_view(), state[ref.name], step_count, hyper, lr * ref.lr_scale, ref.decay);
    }
  }
};

/// Linear warm-up to base_lr over warmup_steps, then cosine decay to floor_lr
/// at total_steps.
inline double lr_schedule(std::int64_t step, std::int64_t total_steps, double base_lr, std::int64_t warmup_steps,
                          double floor_lr = 0.0) {
  if (step < 0 || step > total_steps) throw ContractError("lr_schedule: step outside [0, total_steps]");
  if (warmup_steps > 0 && step < warmup_steps) {
    return base_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
  }
  const std::int64_t span = total_steps - warmup_steps;
  if (span <= 0) return base_lr;
  const double progress = static_cast<double>(step - warmup_steps) / static_cast<double>(span);
  return floor_lr + (base_lr - floor_lr) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

}  // namespace titok
