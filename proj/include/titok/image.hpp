#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "titok/error.hpp"
#include "titok/tensor.hpp"

namespace titok {

/// H x W x 3 image, row-major with channel fastest, values nominally in [0, 1].
struct Image {
  int height = 0;
  int width = 0;
  std::vector<double> pixels;

  Image() = default;
  Image(int h, int w, double fill = 0.0)
      : height(h), width(w), pixels(static_cast<std::size_t>(h) * w * 3, fill) {}

  double& at(int y, int x, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  double at(int y, int x, int c) const { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }

  bool operator==(const Image&) const = default;
};

/// Mirror left-right.
inline Image hflip(const Image& img) {
  Image out(img.height, img.width);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = img.at(y, img.width - 1 - x, c);
  return out;
}

/// Splits each image into non-overlapping f x f x 3 patches in raster order;
/// every patch is flattened row-major as (py, px, channel). Result rows are
/// grouped per image: [batch * (H/f * W/f)] x [f * f * 3].
template <class T>
Tensor<T> patchify(std::span<const Image> images, int f) {
  if (images.empty()) throw ConfigError("patchify: empty batch");
  const int h = images.front().height, w = images.front().width;
  if (f <= 0 || h % f != 0 || w % f != 0) {
    throw ConfigError("patchify: image " + std::to_string(h) + "x" + std::to_string(w) +
                      " is not divisible by patch size " + std::to_string(f));
  }
  const std::size_t gh = h / f, gw = w / f, pd = static_cast<std::size_t>(f) * f * 3;
  std::vector<T> out;
  out.reserve(images.size() * gh * gw * pd);
  for (const Image& img : images) {
    if (img.height != h || img.width != w) throw ConfigError("patchify: images in a batch differ in size");
    for (std::size_t gy = 0; gy < gh; ++gy)
      for (std::size_t gx = 0; gx < gw; ++gx)
        for (int py = 0; py < f; ++py)
          for (int px = 0; px < f; ++px)
            for (int c = 0; c < 3; ++c)
              out.push_back(static_cast<T>(img.at(static_cast<int>(gy) * f + py, static_cast<int>(gx) * f + px, c)));
  }
  return Tensor<T>({images.size() * gh * gw, pd}, std::move(out));
}

/// Inverse of patchify for square images of side `size`.
template <class T>
std::vector<Image> unpatchify(std::span<const T> patches, std::size_t batch, int size, int f) {
  const std::size_t g = static_cast<std::size_t>(size / f);
  const std::size_t pd = static_cast<std::size_t>(f) * f * 3;
  if (patches.size() != batch * g * g * pd) throw DimensionError("unpatchify: element count mismatch");
  std::vector<Image> out;
  std::size_t k = 0;
  for (std::size_t b = 0; b < batch; ++b) {
    Image img(size, size);
    for (std::size_t gy = 0; gy < g; ++gy)
      for (std::size_t gx = 0; gx < g; ++gx)
        for (int py = 0; py < f; ++py)
          for (int px = 0; px < f; ++px)
            for (int c = 0; c < 3; ++c)
              img.at(static_cast<int>(gy) * f + py, static_cast<int>(gx) * f + px, c) = static_cast<double>(patches[k++]);
    out.push_back(std::move(img));
  }
  return out;
}

}  // namespace titok
