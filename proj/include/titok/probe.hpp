#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "titok/data.hpp"
#include "titok/ops.hpp"
#include "titok/optim.hpp"
#include "titok/random.hpp"
#include "titok/tokenizer.hpp"

namespace titok {

/// Mean over the K encoder latents (pre-quantization), one D-vector per image.
template <class T>
std::vector<std::vector<double>> probe_features(std::span<const Image> images, const TitokParams<T>& params,
                                                const TitokConfig& cfg, std::size_t chunk = 64) {
  NoGradGuard no_grad;
  std::vector<std::vector<double>> out;
  const auto k = static_cast<std::size_t>(cfg.latent_tokens);
  for (std::size_t start = 0; start < images.size(); start += chunk) {
    const auto part = images.subspan(start, std::min(chunk, images.size() - start));
    const Tensor<T> h = encode(part, params, cfg);
    const std::size_t d = h.dim(1);
    for (std::size_t b = 0; b < part.size(); ++b) {
      std::vector<double> f(d, 0.0);
      for (std::size_t i = 0; i < k; ++i)
        for (std::size_t e = 0; e < d; ++e) f[e] += static_cast<double>(h.at(b * k + i, e));
      for (auto& v : f) v /= static_cast<double>(k);
      out.push_back(std::move(f));
    }
  }
  return out;
}

struct ProbeOptions {
  int steps = 300;
  double lr = 0.05;
  bool shuffle_labels = false;  // chance-level control
  std::uint64_t seed = 0;
};

/// Softmax regression on standardized features. Standardization statistics
/// come from the training features only.
class LinearProbe {
 public:
  void fit(const std::vector<std::vector<double>>& features, std::vector<int> labels, int num_classes,
           const ProbeOptions& opts = {}) {
    if (num_classes < 2) throw ConfigError("linear_probe: need at least 2 classes");
    if (features.empty() || features.size() != labels.size()) throw DataError("linear_probe: features and labels differ in count");
    for (int l : labels) {
      if (l < 0 || l >= num_classes) throw DataError("linear_probe: label " + std::to_string(l) + " out of range");
    }
    if (opts.shuffle_labels) {
      Rng rng(opts.seed, 0x5417u);
      rng.shuffle(labels);
    }
    classes_ = num_classes;
    const std::size_t n = features.size(), d = features.front().size();
    mean_.assign(d, 0.0);
    inv_std_.assign(d, 0.0);
    for (const auto& f : features)
      for (std::size_t e = 0; e < d; ++e) mean_[e] += f[e] / static_cast<double>(n);
    for (const auto& f : features)
      for (std::size_t e = 0; e < d; ++e) inv_std_[e] += (f[e] - mean_[e]) * (f[e] - mean_[e]) / static_cast<double>(n);
    for (auto& v : inv_std_) v = 1.0 / std::sqrt(v + 1e-8);

    const Tensor<double> x({n, d}, standardize_all(features));
    weight_ = Tensor<double>({d, static_cast<std::size_t>(classes_)}, 0.0);
    bias_ = Tensor<double>({static_cast<std::size_t>(classes_)}, 0.0);
    weight_.set_requires_grad(true);
    bias_.set_requires_grad(true);
    ParamList<double> params = {{"weight", &weight_, true}, {"bias", &bias_, false}};
    AdamW<double> opt(AdamWConfig{0.9, 0.999, 1e-8, 0.0});
    for (int s = 0; s < opts.steps; ++s) {
      zero_grads(params);
      cross_entropy(linear(x, weight_, bias_), labels).backward();
      opt.step(params, opts.lr);
    }
  }

  int predict(const std::vector<double>& feature) const {
    if (classes_ == 0) throw ContractError("linear_probe: predict before fit");
    if (feature.size() != mean_.size()) throw DimensionError("linear_probe: feature width mismatch");
    const std::vector<double> f = standardize(feature);
    const std::size_t d = f.size();
    int best = 0;
    double best_score = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < classes_; ++c) {
      double s = bias_.at(static_cast<std::size_t>(c));
      for (std::size_t e = 0; e < d; ++e) s += f[e] * weight_.at(e, static_cast<std::size_t>(c));
      if (s > best_score) {
        best_score = s;
        best = c;
      }
    }
    return best;
  }

  double accuracy(const std::vector<std::vector<double>>& features, const std::vector<int>& labels) const {
    if (features.size() != labels.size() || features.empty()) throw DataError("linear_probe: features and labels differ in count");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < features.size(); ++i) hits += predict(features[i]) == labels[i];
    return static_cast<double>(hits) / static_cast<double>(features.size());
  }

  int num_classes() const { return classes_; }

 private:
  std::vector<double> standardize(const std::vector<double>& f) const {
    std::vector<double> out(f.size());
    for (std::size_t e = 0; e < f.size(); ++e) out[e] = (f[e] - mean_[e]) * inv_std_[e];
    return out;
  }

  std::vector<double> standardize_all(const std::vector<std::vector<double>>& features) const {
    std::vector<double> out;
    out.reserve(features.size() * mean_.size());
    for (const auto& f : features) {
      const auto s = standardize(f);
      out.insert(out.end(), s.begin(), s.end());
    }
    return out;
  }

  int classes_ = 0;
  std::vector<double> mean_, inv_std_;
  Tensor<double> weight_, bias_;
};

struct ProbeResult {
  double train_accuracy = 0.0;
  double eval_accuracy = 0.0;
};

/// Fits a probe on frozen tokenizer features of `train` and scores `eval`.
template <class T>
ProbeResult linear_probe(const TitokParams<T>& params, const TitokConfig& cfg, const Dataset& train,
                         const Dataset& eval, int num_classes, const ProbeOptions& opts = {},
                         LinearProbe* fitted = nullptr) {
  const auto train_images = train.images();
  const auto eval_images = eval.images();
  const auto train_f = probe_features<T>(train_images, params, cfg);
  const auto eval_f = probe_features<T>(eval_images, params, cfg);
  LinearProbe probe;
  probe.fit(train_f, train.labels(), num_classes, opts);
  ProbeResult r{probe.accuracy(train_f, train.labels()), probe.accuracy(eval_f, eval.labels())};
  if (fitted) *fitted = std::move(probe);
  return r;
}

}  // namespace titok
