#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "titok/ops.hpp"
#include "titok/random.hpp"
#include "titok/tensor.hpp"

namespace titok {

/// Codebook presets referenced by the configs.
inline constexpr int kCodebookSizeFinal = 4096;
inline constexpr int kCodebookSizePreliminary = 1024;
inline constexpr int kCodeDim = 16;

/// N x d_code table of code vectors.
template <class T>
struct Codebook {
  Tensor<T> codes;

  std::size_t size() const { return codes.dim(0); }
  std::size_t code_dim() const { return codes.dim(1); }
};

/// Codes drawn uniformly from [-1/N, 1/N], deterministic in the seed.
template <class T>
Codebook<T> init_codebook(std::uint64_t seed, int n, int code_dim) {
  if (n < 2 || code_dim < 1) throw ConfigError("init_codebook: need N >= 2 and d_code >= 1");
  Rng rng(seed);
  const double bound = 1.0 / n;
  std::vector<T> v(static_cast<std::size_t>(n) * code_dim);
  for (auto& x : v) x = static_cast<T>(rng.uniform(-bound, bound));
  Tensor<T> codes({static_cast<std::size_t>(n), static_cast<std::size_t>(code_dim)}, std::move(v));
  codes.set_requires_grad(true);
  return {codes};
}

/// argmin_j ||z - c_j||^2 over the rows of `codes` ([N x d]); exact squared
/// distances, ties go to the lowest index.
template <class T>
std::size_t nearest_code(std::span<const T> z, const Tensor<T>& codes) {
  if (codes.rank() != 2 || codes.dim(0) == 0) throw ConfigError("nearest_code: empty codebook");
  const std::size_t n = codes.dim(0), d = codes.dim(1);
  if (z.size() != d) {
    throw DimensionError("nearest_code: vector of " + std::to_string(z.size()) + " vs code width " +
                         std::to_string(d));
  }
  const auto cv = codes.values();
  std::size_t best = 0;
  T best_dist = std::numeric_limits<T>::infinity();
  for (std::size_t j = 0; j < n; ++j) {
    const T* c = cv.data() + j * d;
    T dist = T(0);
    for (std::size_t e = 0; e < d; ++e) {
      const T diff = z[e] - c[e];
      dist += diff * diff;
    }
    if (dist < best_dist) {
      best_dist = dist;
      best = j;
    }
  }
  return best;
}

template <class T>
std::size_t nearest_code(std::span<const T> z, const Codebook<T>& codebook) {
  return nearest_code(z, codebook.codes);
}

template <class T>
struct QuantResult {
  std::vector<int> ids;
  Tensor<T> quantized;        // forward value equals the selected codes
  Tensor<T> codebook_loss;    // mean_i ||sg(z_i) - c_i||^2
  Tensor<T> commitment_loss;  // beta * mean_i ||z_i - sg(c_i)||^2
};

/// Quantizer state captured at one point: the selection, the lookup-space
/// latents z0 and the selected codes c0. Passed to quantize, it replaces the
/// argmin by `ids` and every stop-gradient operand by these constants:
///   quantized = z + (c0 - z0), codebook = mean ||z0 - c||^2,
///   commitment = beta * mean ||z - c0||^2.
/// Values and reverse-mode gradients at the capture point are unchanged, and
/// the result is smooth, so finite differences measure the same gradients.
template <class T>
struct FrozenSelection {
  std::vector<int> ids;
  std::vector<T> latents;  // rows x d_code
  std::vector<T> codes;    // rows x d_code
};

namespace detail {

template <class T>
Tensor<T> lookup_space(const Tensor<T>& x, bool l2_normalize) {
  return l2_normalize ? l2_normalize_rows(x) : x;
}

}  // namespace detail

/// Nearest code per row of z ([R x d]). With l2_normalize both z and the
/// codes are projected onto the unit sphere before the Euclidean argmin.
template <class T>
std::vector<int> select_codes(const Tensor<T>& z, const Codebook<T>& codebook, bool l2_normalize = false) {
  NoGradGuard no_grad;
  const Tensor<T> zs = detail::lookup_space(z, l2_normalize);
  const Tensor<T> cs = detail::lookup_space(codebook.codes, l2_normalize);
  const std::size_t rows = z.dim(0), d = z.dim(1);
  std::vector<int> ids(rows);
  for (std::size_t i = 0; i < rows; ++i) ids[i] = static_cast<int>(nearest_code(zs.values().subspan(i * d, d), cs));
  return ids;
}

/// Code vectors for ids as seen by the decoder, [ids x d].
template <class T>
Tensor<T> gather_codes(const Codebook<T>& codebook, const std::vector<int>& ids, bool l2_normalize = false) {
  std::vector<std::size_t> index;
  index.reserve(ids.size());
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= codebook.size()) {
      throw DataError("quantize: code id " + std::to_string(id) + " out of range");
    }
    index.push_back(static_cast<std::size_t>(id));
  }
  return detail::lookup_space(gather_rows(codebook.codes, std::move(index)), l2_normalize);
}

/// Vector-quantises each row of z ([R x d_code]) with a straight-through
/// gradient. With l2_normalize the lookup, the losses and the output all live
/// on the unit sphere.
template <class T>
QuantResult<T> quantize(const Tensor<T>& z, const Codebook<T>& codebook, T beta, bool l2_normalize = false,
                        const FrozenSelection<T>* frozen = nullptr) {
  if (!(beta >= T(0))) throw ConfigError("quantize: beta must be >= 0");
  if (z.rank() != 2 || z.dim(1) != codebook.code_dim()) {
    throw DimensionError("quantize: latents " + to_string(z.shape()) + " vs codebook " +
                         to_string(codebook.codes.shape()));
  }
  for (T v : z.values()) {
    if (!std::isfinite(v)) throw NumericError("quantize: non-finite latent");
  }
  const std::size_t rows = z.dim(0);
  QuantResult<T> result;
  if (frozen) {
    if (frozen->ids.size() != rows || frozen->latents.size() != z.numel() || frozen->codes.size() != z.numel()) {
      throw DimensionError("quantize: frozen selection does not match the latents");
    }
    result.ids = frozen->ids;
  } else {
    result.ids = select_codes(z, codebook, l2_normalize);
  }
  const Tensor<T> zs = detail::lookup_space(z, l2_normalize);
  const Tensor<T> selected = gather_codes(codebook, result.ids, l2_normalize);
  const Tensor<T> z_stop = frozen ? Tensor<T>(z.shape(), frozen->latents) : zs.detach();
  const Tensor<T> c_stop = frozen ? Tensor<T>(z.shape(), frozen->codes) : selected.detach();
  const T inv_rows = T(1) / static_cast<T>(rows);
  result.codebook_loss = scale(sum(square(sub(z_stop, selected))), inv_rows);
  result.commitment_loss = scale(sum(square(sub(zs, c_stop))), beta * inv_rows);
  result.quantized = frozen ? add(zs, sub(c_stop, z_stop)) : straight_through(zs, selected);
  return result;
}

/// Captures the current selection for quantize(..., frozen).
template <class T>
FrozenSelection<T> freeze_selection(const Tensor<T>& z, const Codebook<T>& codebook, bool l2_normalize = false) {
  NoGradGuard no_grad;
  FrozenSelection<T> f;
  f.ids = select_codes(z, codebook, l2_normalize);
  f.latents = detail::lookup_space(z, l2_normalize).vector();
  f.codes = gather_codes(codebook, f.ids, l2_normalize).vector();
  return f;
}

struct Utilization {
  double usage_fraction = 0.0;
  double perplexity = 0.0;
};

/// Fraction of distinct codes used and exp(entropy) of the empirical id
/// distribution across all sequences.
inline Utilization codebook_utilization(const std::vector<std::vector<int>>& ids_batch, int n) {
  if (n <= 0) throw ConfigError("codebook_utilization: N must be positive");
  std::map<int, std::size_t> counts;
  std::size_t total = 0;
  for (const auto& seq : ids_batch) {
    for (int id : seq) {
      if (id < 0 || id >= n) {
        throw DataError("codebook_utilization: id " + std::to_string(id) + " outside [0, " + std::to_string(n) + ")");
      }
      ++counts[id];
      ++total;
    }
  }
  Utilization u;
  if (total == 0) return u;
  u.usage_fraction = static_cast<double>(counts.size()) / n;
  double entropy = 0.0;
  for (const auto& [id, c] : counts) {
    const double p = static_cast<double>(c) / static_cast<double>(total);
    entropy -= p * std::log(p);
  }
  u.perplexity = std::exp(entropy);
  return u;
}

}  // namespace titok
