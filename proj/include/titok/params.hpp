#pragma once

#include <string>
#include <vector>

#include "titok/ops.hpp"
#include "titok/random.hpp"
#include "titok/tensor.hpp"

namespace titok {

/// Named handle to a trainable tensor. `decay` marks whether weight decay
/// applies; `lr_scale` multiplies the optimizer step size.
template <class T>
struct ParamRef {
  std::string name;
  Tensor<T>* tensor;
  bool decay;
  double lr_scale = 1.0;
};

template <class T>
using ParamList = std::vector<ParamRef<T>>;

/// Leaf tensor with truncated-normal(0, std) entries, requires grad.
template <class T>
Tensor<T> trunc_normal_tensor(Shape shape, double stddev, Rng& rng) {
  std::vector<T> v(numel(shape));
  for (auto& x : v) x = static_cast<T>(rng.truncated_normal(stddev));
  Tensor<T> t(std::move(shape), std::move(v));
  t.set_requires_grad(true);
  return t;
}

template <class T>
Tensor<T> filled_param(Shape shape, T value) {
  Tensor<T> t(std::move(shape), value);
  t.set_requires_grad(true);
  return t;
}

inline constexpr double kInitStd = 0.02;

template <class T>
struct Linear {
  Tensor<T> weight;  // [in x out]
  Tensor<T> bias;    // [out]

  static Linear init(std::size_t in, std::size_t out, Rng& rng) {
    return {trunc_normal_tensor<T>({in, out}, kInitStd, rng), filled_param<T>({out}, T(0))};
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return linear(x, weight, bias); }

  void collect(ParamList<T>& out, const std::string& prefix) {
    out.push_back({prefix + ".weight", &weight, true});
    out.push_back({prefix + ".bias", &bias, false});
  }
};

template <class T>
struct LayerNormParams {
  Tensor<T> gamma;
  Tensor<T> beta;

  static LayerNormParams init(std::size_t d) { return {filled_param<T>({d}, T(1)), filled_param<T>({d}, T(0))}; }

  Tensor<T> operator()(const Tensor<T>& x) const { return layer_norm(x, gamma, beta, T(1e-5)); }

  void collect(ParamList<T>& out, const std::string& prefix) {
    out.push_back({prefix + ".gamma", &gamma, false});
    out.push_back({prefix + ".beta", &beta, false});
  }
};

/// Replaces every tensor in `params` by an independent copy.
template <class P>
P deep_copy(const P& params) {
  P copy = params;
  for (auto& ref : copy.parameters()) *ref.tensor = ref.tensor->clone();
  return copy;
}

template <class T>
void set_trainable(ParamList<T>& list, bool on) {
  for (auto& ref : list) ref.tensor->set_requires_grad(on);
}

template <class T>
void zero_grads(ParamList<T>& list) {
  for (auto& ref : list) ref.tensor->zero_grad();
}

}  // namespace titok
