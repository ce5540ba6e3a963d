#pragma once

#include <skyloc/geometry.hpp>

#include <string>
#include <vector>

namespace skyloc {

// Row-major scalar image with intensities nominally in [0, 1].
class IntensityImage {
 public:
  IntensityImage() = default;
  IntensityImage(int width, int height, double fill = 0.0);
  IntensityImage(int width, int height, std::vector<double> values);

  int width() const { return width_; }
  int height() const { return height_; }
  bool empty() const { return values_.empty(); }
  const std::vector<double>& values() const { return values_; }

  double operator()(int x, int y) const { return values_[static_cast<size_t>(y) * width_ + x]; }
  double& operator()(int x, int y) { return values_[static_cast<size_t>(y) * width_ + x]; }

  // True when bilinear sampling at `p` (and `margin` pixels around it) stays
  // inside the pixel grid.
  bool Contains(const Vec2& p, double margin = 0.0) const {
    return p.x() >= margin && p.y() >= margin && p.x() <= width_ - 1 - margin &&
           p.y() <= height_ - 1 - margin;
  }

  // Bilinear interpolation. Caller guarantees Contains(p).
  double Sample(const Vec2& p) const;
  // Bilinear value plus its exact partial derivatives inside the cell.
  double SampleWithGradient(const Vec2& p, Vec2* gradient) const;

  // 2x2 box-filtered half-resolution image.
  IntensityImage HalfSample() const;

  bool operator==(const IntensityImage& other) const = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<double> values_;
};

// Square block of (2*half_size+1)^2 intensities sampled around a center.
struct PixelBlock {
  Vec2 center = Vec2::Zero();
  int half_size = 0;
  std::vector<double> values;

  int side() const { return 2 * half_size + 1; }
};

// Bilinearly samples a block; returns false if any tap falls outside.
bool ExtractBlock(const IntensityImage& image, const Vec2& center, int half_size, PixelBlock* block);

// Binary 8-bit PGM (P5). Values are mapped to [0,1] on load and clamped and
// rounded on save.
IntensityImage ReadPgm(const std::string& path);
void WritePgm(const std::string& path, const IntensityImage& image);

}  // namespace skyloc
