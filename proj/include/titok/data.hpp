#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdio>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "titok/error.hpp"
#include "titok/image.hpp"
#include "titok/random.hpp"
#include "titok/token_file.hpp"

namespace titok {

enum class Figure { circle, square, triangle, stripes };

inline const char* to_string(Figure f) {
  switch (f) {
    case Figure::circle: return "circle";
    case Figure::square: return "square";
    case Figure::triangle: return "triangle";
    case Figure::stripes: return "stripes";
  }
  return "?";
}

struct SyntheticSpec {
  std::uint64_t seed = 0;
  int count = 64;
  int image_size = 32;
  int num_classes = 4;
  int first_index = 0;  // eval splits start past the train range
  double position_jitter = 0.18;  // fraction of the side
  double min_scale = 0.22;
  double max_scale = 0.34;
  double color_jitter = 0.08;
};

struct Sample {
  Image image;
  int label = 0;
  int index = 0;
};

struct Dataset {
  std::vector<Sample> items;
  std::string split = "train";

  std::size_t size() const { return items.size(); }

  std::vector<Image> images() const {
    std::vector<Image> out;
    out.reserve(items.size());
    for (const auto& s : items) out.push_back(s.image);
    return out;
  }

  std::vector<int> labels() const {
    std::vector<int> out;
    for (const auto& s : items) out.push_back(s.label);
    return out;
  }
};

namespace detail {

struct ClassStyle {
  Figure figure;
  std::array<double, 3> color;
};

// Classes beyond the fourth reuse the figures with a rotated palette.
inline ClassStyle class_style(int label) {
  static constexpr std::array<std::array<double, 3>, 4> palette = {
      {{0.90, 0.22, 0.20}, {0.22, 0.82, 0.30}, {0.25, 0.38, 0.95}, {0.95, 0.85, 0.22}}};
  const Figure figures[] = {Figure::circle, Figure::square, Figure::triangle, Figure::stripes};
  const auto color = palette[static_cast<std::size_t>((label + label / 4) % 4)];
  return {figures[label % 4], color};
}

inline double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

}  // namespace detail

/// Image number `index` of the synthetic set; a pure function of (spec.seed, index).
inline Sample synthetic_sample(const SyntheticSpec& spec, int index) {
  if (spec.num_classes < 1) throw ConfigError("synthetic: num_classes must be >= 1");
  if (spec.image_size < 4) throw ConfigError("synthetic: image_size must be >= 4");
  Rng rng(spec.seed, static_cast<std::uint64_t>(index));
  const int label = index % spec.num_classes;
  const detail::ClassStyle style = detail::class_style(label);
  const double n = spec.image_size;

  const double bg_level = rng.uniform(0.05, 0.2);
  std::array<double, 3> bg{};
  for (auto& c : bg) c = detail::clamp01(bg_level + rng.uniform(-0.03, 0.03));
  std::array<double, 3> fg{};
  for (int c = 0; c < 3; ++c) fg[c] = detail::clamp01(style.color[c] + rng.uniform(-spec.color_jitter, spec.color_jitter));
  const double cx = n / 2 + rng.uniform(-spec.position_jitter, spec.position_jitter) * n;
  const double cy = n / 2 + rng.uniform(-spec.position_jitter, spec.position_jitter) * n;
  const double r = rng.uniform(spec.min_scale, spec.max_scale) * n;
  const double period = rng.uniform(5.0, 8.0);
  const double phase = rng.uniform(0.0, period);

  Sample s{Image(spec.image_size, spec.image_size), label, index};
  for (int y = 0; y < spec.image_size; ++y) {
    for (int x = 0; x < spec.image_size; ++x) {
      const double px = x + 0.5 - cx, py = y + 0.5 - cy;
      bool inside = false;
      switch (style.figure) {
        case Figure::circle: inside = px * px + py * py <= r * r; break;
        case Figure::square: inside = std::abs(px) <= 0.8 * r && std::abs(py) <= 0.8 * r; break;
        case Figure::triangle:
          // Upward triangle: apex at (0, -r), base at y = +r.
          inside = py <= r && py >= -r && std::abs(px) <= (py + r) * 0.5;
          break;
        case Figure::stripes:
          inside = std::abs(px) <= r && std::abs(py) <= r && std::fmod(x + phase, period) < period / 2;
          break;
      }
      for (int c = 0; c < 3; ++c) s.image.at(y, x, c) = inside ? fg[c] : bg[c];
    }
  }
  return s;
}

/// Images first_index .. first_index+count-1; labels cycle so every class
/// count is within one of the others.
inline Dataset gen_synthetic(const SyntheticSpec& spec, const std::string& split = "train") {
  if (spec.count < 0) throw ConfigError("synthetic: count must be >= 0");
  Dataset d;
  d.split = split;
  d.items.reserve(static_cast<std::size_t>(spec.count));
  for (int i = 0; i < spec.count; ++i) d.items.push_back(synthetic_sample(spec, spec.first_index + i));
  return d;
}

// ---- PPM (binary P6, maxval 255) ----

inline std::uint8_t to_byte(double v) {
  const double scaled = std::floor(detail::clamp01(v) * 255.0 + 0.5);
  return static_cast<std::uint8_t>(scaled);
}

inline std::vector<std::uint8_t> ppm_bytes(const Image& img) {
  if (img.height <= 0 || img.width <= 0) throw DataError("ppm: empty image");
  const std::string header = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(out.size() + img.pixels.size());
  for (double v : img.pixels) out.push_back(to_byte(v));
  return out;
}

inline Image parse_ppm(const std::vector<std::uint8_t>& bytes) {
  std::size_t pos = 0;
  auto fail = [&](const std::string& what) -> FormatError {
    return FormatError("ppm: " + what + " at byte offset " + std::to_string(pos));
  };
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_int = [&](const char* field) {
    skip_space();
    if (pos >= bytes.size() || !std::isdigit(bytes[pos])) throw fail(std::string("expected ") + field);
    long long v = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      v = v * 10 + (bytes[pos] - '0');
      if (v > 1'000'000) throw fail(std::string(field) + " too large");
      ++pos;
    }
    return static_cast<int>(v);
  };
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') throw fail("missing P6 magic");
  pos = 2;
  const int w = read_int("width");
  const int h = read_int("height");
  const int maxval = read_int("maxval");
  if (w <= 0 || h <= 0) throw fail("non-positive dimensions");
  if (maxval != 255) throw fail("unsupported maxval " + std::to_string(maxval) + " (only 255)");
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) throw fail("expected whitespace after maxval");
  ++pos;
  const std::size_t need = static_cast<std::size_t>(w) * h * 3;
  if (bytes.size() - pos < need) {
    throw fail("short pixel data: need " + std::to_string(need) + " bytes, have " + std::to_string(bytes.size() - pos));
  }
  Image img(h, w);
  for (std::size_t i = 0; i < need; ++i) img.pixels[i] = bytes[pos + i] / 255.0;
  return img;
}

inline void save_ppm(const Image& img, const std::filesystem::path& path) { detail::write_file_bytes(path, ppm_bytes(img)); }

inline Image load_ppm(const std::filesystem::path& path) {
  try {
    return parse_ppm(detail::read_file_bytes(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

// ---- metrics ----

inline constexpr double kPsnrCap = 99.0;

inline double mse(const Image& a, const Image& b) {
  if (a.height != b.height || a.width != b.width) throw DimensionError("mse: image sizes differ");
  double s = 0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) {
    const double d = a.pixels[i] - b.pixels[i];
    s += d * d;
  }
  return s / static_cast<double>(a.pixels.size());
}

/// Peak signal-to-noise ratio for [0,1] images; identical images give kPsnrCap.
inline double psnr_from_mse(double m) {
  if (m <= 0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / m));
}

inline double psnr(const Image& a, const Image& b) { return psnr_from_mse(mse(a, b)); }

inline double mean_mse(const std::vector<Image>& a, const std::vector<Image>& b) {
  if (a.size() != b.size() || a.empty()) throw DimensionError("mean_mse: batch sizes differ or are empty");
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += mse(a[i], b[i]);
  return s / static_cast<double>(a.size());
}

// ---- dataset directory: manifest.csv (index,label,path) + PPM files ----

inline void save_dataset(const Dataset& d, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ostringstream csv;
  csv << "index,label,path\n";
  for (const auto& s : d.items) {
    char name[32];
    std::snprintf(name, sizeof name, "img_%06d.ppm", s.index);
    save_ppm(s.image, dir / name);
    csv << s.index << ',' << s.label << ',' << name << '\n';
  }
  const std::string text = csv.str();
  detail::write_file_bytes(dir / "manifest.csv", std::vector<std::uint8_t>(text.begin(), text.end()));
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.csv");
  if (!in) throw DataError("dataset: missing " + (dir / "manifest.csv").string());
  std::string line;
  if (!std::getline(in, line) || line != "index,label,path") throw FormatError("dataset: manifest.csv header must be 'index,label,path'");
  Dataset d;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string idx, label, path;
    if (!std::getline(row, idx, ',') || !std::getline(row, label, ',') || !std::getline(row, path)) {
      throw FormatError("dataset: manifest.csv line " + std::to_string(lineno) + " needs 3 fields");
    }
    Sample s;
    try {
      s.index = std::stoi(idx);
      s.label = std::stoi(label);
    } catch (const std::exception&) {
      throw FormatError("dataset: manifest.csv line " + std::to_string(lineno) + " has a non-integer field");
    }
    if (s.label < 0) throw DataError("dataset: negative label on line " + std::to_string(lineno));
    s.image = load_ppm(dir / path);
    d.items.push_back(std::move(s));
  }
  if (d.items.empty()) throw DataError("dataset: " + dir.string() + " is empty");
  return d;
}

}  // namespace titok
