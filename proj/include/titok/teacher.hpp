#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "titok/image.hpp"
#include "titok/quantizer.hpp"
#include "titok/random.hpp"

namespace titok {

/// Frozen discrete codec that supplies per-patch target codes for stage-1
/// training and turns predicted code grids back into RGB.
class ProxyTeacher {
 public:
  virtual ~ProxyTeacher() = default;
  virtual int vocab_size() const = 0;
  /// Codes per image side; encode_codes returns grid_side()^2 codes in raster order.
  virtual int grid_side() const = 0;
  virtual std::vector<int> encode_codes(const Image& image) const = 0;
  virtual Image decode_codes(std::span<const int> codes) const = 0;
};

struct TeacherConfig {
  int vocab = 64;
  int dim = 8;
  std::uint64_t seed = 0;
  int kmeans_iters = 20;
};

/// Patch codec: fixed random projection of each f x f x 3 patch to `dim`
/// features, nearest centroid among `vocab` k-means centroids, and a mean
/// patch per code for decoding.
class BuiltinPatchTeacher final : public ProxyTeacher {
 public:
  BuiltinPatchTeacher(const TeacherConfig& cfg, int image_size, int patch_size,
                      std::span<const Image> calibration)
      : cfg_(cfg), image_size_(image_size), patch_size_(patch_size) {
    validate();
    const std::size_t pd = patch_dim();
    const auto d = static_cast<std::size_t>(cfg_.dim);
    const auto v = static_cast<std::size_t>(cfg_.vocab);
    if (calibration.empty()) throw ConfigError("teacher: empty calibration batch");

    Rng rng(cfg_.seed);
    projection_.resize(pd * d);
    const double s = 1.0 / std::sqrt(static_cast<double>(pd));
    for (auto& x : projection_) x = rng.normal() * s;

    const Tensor<double> patches = patchify<double>(calibration, patch_size_);
    const std::size_t count = patches.dim(0);
    std::vector<double> feats(count * d);
    for (std::size_t i = 0; i < count; ++i) project(patches.values().subspan(i * pd, pd), feats.data() + i * d);

    // Seeds: a shuffled walk over the calibration patches, skipping exact
    // duplicates while enough distinct patches remain.
    std::vector<std::size_t> order(count);
    for (std::size_t i = 0; i < count; ++i) order[i] = i;
    rng.shuffle(order);
    std::vector<std::size_t> seeds;
    for (std::size_t i : order) {
      if (seeds.size() == v) break;
      bool dup = false;
      for (std::size_t s_i : seeds) dup = dup || std::equal(feats.begin() + i * d, feats.begin() + (i + 1) * d,
                                                             feats.begin() + s_i * d);
      if (!dup) seeds.push_back(i);
    }
    for (std::size_t k = 0; seeds.size() < v; ++k) seeds.push_back(order[k % count]);

    centroids_.resize(v * d);
    mean_patches_.resize(v * pd);
    for (std::size_t c = 0; c < v; ++c) {
      std::copy_n(feats.begin() + seeds[c] * d, d, centroids_.begin() + c * d);
      std::copy_n(patches.values().begin() + seeds[c] * pd, pd, mean_patches_.begin() + c * pd);
    }

    std::vector<std::size_t> assign(count);
    for (int it = 0; it <= cfg_.kmeans_iters; ++it) {
      const Tensor<double> cents({v, d}, centroids_);
      for (std::size_t i = 0; i < count; ++i)
        assign[i] = nearest_code(std::span<const double>(feats.data() + i * d, d), cents);
      if (it == cfg_.kmeans_iters) break;
      std::vector<double> acc(v * d, 0.0);
      std::vector<std::size_t> members(v, 0);
      for (std::size_t i = 0; i < count; ++i) {
        ++members[assign[i]];
        for (std::size_t e = 0; e < d; ++e) acc[assign[i] * d + e] += feats[i * d + e];
      }
      for (std::size_t c = 0; c < v; ++c) {
        if (members[c] == 0) continue;  // empty cluster keeps its centroid
        for (std::size_t e = 0; e < d; ++e) centroids_[c * d + e] = acc[c * d + e] / static_cast<double>(members[c]);
      }
    }

    std::vector<double> acc(v * pd, 0.0);
    std::vector<std::size_t> members(v, 0);
    for (std::size_t i = 0; i < count; ++i) {
      ++members[assign[i]];
      for (std::size_t e = 0; e < pd; ++e) acc[assign[i] * pd + e] += patches.values()[i * pd + e];
    }
    for (std::size_t c = 0; c < v; ++c) {
      if (members[c] == 0) continue;
      for (std::size_t e = 0; e < pd; ++e) mean_patches_[c * pd + e] = acc[c * pd + e] / static_cast<double>(members[c]);
    }
  }

  /// Rebuilds a teacher from previously exported tables.
  BuiltinPatchTeacher(const TeacherConfig& cfg, int image_size, int patch_size, std::vector<double> projection,
                      std::vector<double> centroids, std::vector<double> mean_patches)
      : cfg_(cfg),
        image_size_(image_size),
        patch_size_(patch_size),
        projection_(std::move(projection)),
        centroids_(std::move(centroids)),
        mean_patches_(std::move(mean_patches)) {
    validate();
    const auto d = static_cast<std::size_t>(cfg_.dim), v = static_cast<std::size_t>(cfg_.vocab);
    if (projection_.size() != patch_dim() * d || centroids_.size() != v * d || mean_patches_.size() != v * patch_dim()) {
      throw FormatError("teacher: table sizes do not match the configuration");
    }
  }

  int vocab_size() const override { return cfg_.vocab; }
  int grid_side() const override { return image_size_ / patch_size_; }
  int patch_size() const { return patch_size_; }
  int image_size() const { return image_size_; }
  const TeacherConfig& config() const { return cfg_; }

  const std::vector<double>& projection() const { return projection_; }
  const std::vector<double>& centroids() const { return centroids_; }
  const std::vector<double>& mean_patches() const { return mean_patches_; }

  std::vector<int> encode_codes(const Image& image) const override {
    if (image.height != image_size_ || image.width != image_size_) {
      throw ConfigError("teacher: expected " + std::to_string(image_size_) + "px images");
    }
    const Tensor<double> patches = patchify<double>(std::span<const Image>(&image, 1), patch_size_);
    const auto d = static_cast<std::size_t>(cfg_.dim);
    const Tensor<double> cents({static_cast<std::size_t>(cfg_.vocab), d}, centroids_);
    std::vector<int> codes(patches.dim(0));
    std::vector<double> feat(d);
    for (std::size_t i = 0; i < codes.size(); ++i) {
      project(patches.values().subspan(i * patch_dim(), patch_dim()), feat.data());
      codes[i] = static_cast<int>(nearest_code(std::span<const double>(feat), cents));
    }
    return codes;
  }

  Image decode_codes(std::span<const int> codes) const override {
    const auto g = static_cast<std::size_t>(grid_side());
    if (codes.size() != g * g) throw DimensionError("teacher: expected " + std::to_string(g * g) + " codes");
    std::vector<double> patches;
    patches.reserve(codes.size() * patch_dim());
    for (int c : codes) {
      if (c < 0 || c >= cfg_.vocab) throw DataError("teacher: code " + std::to_string(c) + " out of range");
      const auto off = static_cast<std::size_t>(c) * patch_dim();
      patches.insert(patches.end(), mean_patches_.begin() + off, mean_patches_.begin() + off + patch_dim());
    }
    return unpatchify<double>(patches, 1, image_size_, patch_size_).front();
  }

 private:
  std::size_t patch_dim() const { return static_cast<std::size_t>(patch_size_) * patch_size_ * 3; }

  void validate() const {
    if (cfg_.vocab < 2 || cfg_.dim < 1 || cfg_.kmeans_iters < 0) throw ConfigError("teacher: vocab >= 2, dim >= 1");
    if (patch_size_ <= 0 || image_size_ % patch_size_ != 0) throw ConfigError("teacher: patch size must divide image size");
  }

  void project(std::span<const double> patch, double* out) const {
    const auto d = static_cast<std::size_t>(cfg_.dim);
    for (std::size_t e = 0; e < d; ++e) out[e] = 0.0;
    for (std::size_t p = 0; p < patch.size(); ++p)
      for (std::size_t e = 0; e < d; ++e) out[e] += patch[p] * projection_[p * d + e];
  }

  TeacherConfig cfg_;
  int image_size_;
  int patch_size_;
  std::vector<double> projection_;    // [f*f*3 x dim]
  std::vector<double> centroids_;     // [vocab x dim]
  std::vector<double> mean_patches_;  // [vocab x f*f*3]
};

}  // namespace titok
