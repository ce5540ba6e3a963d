#pragma once

#include <skyloc/geometry.hpp>
#include <skyloc/image.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace skyloc {

// One sparse map point: inverse-depth Gaussian at a reference-image pixel.
struct MapEntry {
  Vec2 pixel = Vec2::Zero();
  double inverse_depth = 1.0;  // 1/m
  double variance = 1.0;       // 1/m^2
};

// Reference image plus inverse-depth mean/variance at feature locations.
struct SparseDepthMap {
  IntensityImage reference;
  std::vector<MapEntry> entries;

  // Throws kInvalidArgument unless every entry has positive mean and variance
  // and lies at least `margin` pixels inside the reference image.
  void Validate(double margin) const;
};

// Dense z-depth raster; depth 0 marks unknown pixels.
struct DenseDepthMap {
  int width = 0;
  int height = 0;
  std::vector<double> depth;
  std::vector<double> variance;

  DenseDepthMap() = default;
  DenseDepthMap(int w, int h)
      : width(w), height(h), depth(static_cast<size_t>(w) * h, 0.0),
        variance(static_cast<size_t>(w) * h, 0.0) {}

  size_t Index(int x, int y) const { return static_cast<size_t>(y) * width + x; }
  bool Known(int x, int y) const { return depth[Index(x, y)] > 0.0; }
  size_t KnownCount() const;
};

// Binary little-endian layout: "DPTH", u32 width, u32 height, width*height
// float32 depths (0 = unknown), then width*height float32 variances.
void WriteDepthMap(const std::string& path, const DenseDepthMap& map);
DenseDepthMap ReadDepthMap(const std::string& path);
std::vector<std::uint8_t> EncodeDepthMap(const DenseDepthMap& map);
DenseDepthMap DecodeDepthMap(const std::vector<std::uint8_t>& bytes);

}  // namespace skyloc
