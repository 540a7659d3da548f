#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <utility>
#include <vector>

#include "titok/ops.hpp"
#include "titok/tensor.hpp"

namespace titok {

namespace detail {

inline double relative_gap(double ad, double fd) {
  return std::abs(ad - fd) / std::max({1.0, std::abs(ad), std::abs(fd)});
}

inline void check_fd_step(double eps) {
  if (!(eps >= 1e-7 && eps <= 1e-3)) {
    throw ContractError("grad_check: step " + std::to_string(eps) + " outside [1e-7, 1e-3]");
  }
}

inline double evaluate_scalar(const Tensor<double>& y) {
  if (y.numel() != 1) throw ContractError("grad_check: function must return a scalar");
  const double v = y.item();
  if (!std::isfinite(v)) throw NumericError("grad_check: non-finite function value");
  return v;
}

}  // namespace detail

/// Max over coordinates of |g_ad - g_fd| / max(1, |g_ad|, |g_fd|), where g_fd
/// is the central difference with step eps.
inline double grad_check(const std::function<Tensor<double>(const Tensor<double>&)>& f,
                         const Tensor<double>& x, double eps = 1e-6) {
  detail::check_fd_step(eps);
  Tensor<double> leaf = x.clone();
  leaf.set_requires_grad(true);
  const Tensor<double> y = f(leaf);
  detail::evaluate_scalar(y);
  y.backward();
  const std::vector<double> analytic = leaf.grad();

  double worst = 0.0;
  NoGradGuard no_grad;
  Tensor<double> probe = x.clone();
  for (std::size_t i = 0; i < probe.numel(); ++i) {
    const double original = probe.at(i);
    probe.mutable_values()[i] = original + eps;
    const double up = detail::evaluate_scalar(f(probe));
    probe.mutable_values()[i] = original - eps;
    const double down = detail::evaluate_scalar(f(probe));
    probe.mutable_values()[i] = original;
    worst = std::max(worst, detail::relative_gap(analytic[i], (up - down) / (2.0 * eps)));
  }
  return worst;
}

/// One checked coordinate: (parameter index, element index).
using GradCoordinate = std::pair<std::size_t, std::size_t>;

/// Finite-difference check of a loss against selected coordinates of tensors
/// that the loss closes over. Parameters are perturbed in place and restored.
inline double grad_check_params(const std::function<Tensor<double>()>& loss,
                                std::vector<Tensor<double>> params,
                                const std::vector<GradCoordinate>& coords, double eps = 1e-6) {
  detail::check_fd_step(eps);
  for (auto& p : params) {
    p.zero_grad();
    p.set_requires_grad(true);
  }
  const Tensor<double> y = loss();
  detail::evaluate_scalar(y);
  y.backward();

  double worst = 0.0;
  NoGradGuard no_grad;
  for (const auto& [pi, ei] : coords) {
    Tensor<double>& p = params.at(pi);
    const double analytic = p.grad().at(ei);
    const double original = p.at(ei);
    p.mutable_values()[ei] = original + eps;
    const double up = detail::evaluate_scalar(loss());
    p.mutable_values()[ei] = original - eps;
    const double down = detail::evaluate_scalar(loss());
    p.mutable_values()[ei] = original;
    worst = std::max(worst, detail::relative_gap(analytic, (up - down) / (2.0 * eps)));
  }
  return worst;
}

}  // namespace titok
