#include <skyloc/image.hpp>

#include <skyloc/error.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>

namespace skyloc {

IntensityImage::IntensityImage(int width, int height, double fill)
    : width_(width), height_(height) {
  Require(width > 0 && height > 0, ErrorKind::kInvalidArgument, "image dimensions must be positive");
  values_.assign(static_cast<size_t>(width) * height, fill);
}

IntensityImage::IntensityImage(int width, int height, std::vector<double> values)
    : width_(width), height_(height), values_(std::move(values)) {
  Require(width > 0 && height > 0, ErrorKind::kInvalidArgument, "image dimensions must be positive");
  Require(values_.size() == static_cast<size_t>(width) * height, ErrorKind::kInvalidArgument,
          "image value count does not match dimensions");
  for (double v : values_) {
    Require(std::isfinite(v), ErrorKind::kInvalidArgument, "image values must be finite");
  }
}

namespace {

struct Cell {
  int x0, y0;
  double fx, fy;
};

Cell Locate(const Vec2& p, int width, int height) {
  Cell c;
  c.x0 = std::clamp(static_cast<int>(std::floor(p.x())), 0, std::max(width - 2, 0));
  c.y0 = std::clamp(static_cast<int>(std::floor(p.y())), 0, std::max(height - 2, 0));
  c.fx = width > 1 ? p.x() - c.x0 : 0.0;
  c.fy = height > 1 ? p.y() - c.y0 : 0.0;
  return c;
}

}  // namespace

double IntensityImage::Sample(const Vec2& p) const {
  const Cell c = Locate(p, width_, height_);
  const int x1 = std::min(c.x0 + 1, width_ - 1);
  const int y1 = std::min(c.y0 + 1, height_ - 1);
  const double top = (1 - c.fx) * (*this)(c.x0, c.y0) + c.fx * (*this)(x1, c.y0);
  const double bottom = (1 - c.fx) * (*this)(c.x0, y1) + c.fx * (*this)(x1, y1);
  return (1 - c.fy) * top + c.fy * bottom;
}

double IntensityImage::SampleWithGradient(const Vec2& p, Vec2* gradient) const {
  const Cell c = Locate(p, width_, height_);
  const int x1 = std::min(c.x0 + 1, width_ - 1);
  const int y1 = std::min(c.y0 + 1, height_ - 1);
  const double i00 = (*this)(c.x0, c.y0), i10 = (*this)(x1, c.y0);
  const double i01 = (*this)(c.x0, y1), i11 = (*this)(x1, y1);
  if (gradient != nullptr) {
    gradient->x() = (1 - c.fy) * (i10 - i00) + c.fy * (i11 - i01);
    gradient->y() = (1 - c.fx) * (i01 - i00) + c.fx * (i11 - i10);
  }
  const double top = (1 - c.fx) * i00 + c.fx * i10;
  const double bottom = (1 - c.fx) * i01 + c.fx * i11;
  return (1 - c.fy) * top + c.fy * bottom;
}

IntensityImage IntensityImage::HalfSample() const {
  const int w = std::max(width_ / 2, 1);
  const int h = std::max(height_ / 2, 1);
  IntensityImage out(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const int x0 = std::min(2 * x, width_ - 1), x1 = std::min(2 * x + 1, width_ - 1);
      const int y0 = std::min(2 * y, height_ - 1), y1 = std::min(2 * y + 1, height_ - 1);
      out(x, y) = 0.25 * ((*this)(x0, y0) + (*this)(x1, y0) + (*this)(x0, y1) + (*this)(x1, y1));
    }
  }
  return out;
}

bool ExtractBlock(const IntensityImage& image, const Vec2& center, int half_size, PixelBlock* block) {
  if (!image.Contains(center, half_size)) return false;
  block->center = center;
  block->half_size = half_size;
  block->values.resize(static_cast<size_t>(block->side()) * block->side());
  size_t k = 0;
  for (int dy = -half_size; dy <= half_size; ++dy) {
    for (int dx = -half_size; dx <= half_size; ++dx) {
      block->values[k++] = image.Sample(center + Vec2(dx, dy));
    }
  }
  return true;
}

IntensityImage ReadPgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  Require(in.good(), ErrorKind::kIo, "cannot open image " + path);
  std::string magic;
  in >> magic;
  Require(magic == "P5", ErrorKind::kData, path + ": not a binary PGM (P5)");
  auto next_int = [&]() {
    in >> std::ws;
    while (in.peek() == '#') {
      std::string comment;
      std::getline(in, comment);
      in >> std::ws;
    }
    int v = 0;
    in >> v;
    return v;
  };
  const int width = next_int();
  const int height = next_int();
  const int max_value = next_int();
  Require(!in.fail() && width > 0 && height > 0 && max_value > 0 && max_value < 256, ErrorKind::kData,
          path + ": unsupported PGM header");
  in.get();  // single whitespace after header
  std::vector<unsigned char> raw(static_cast<size_t>(width) * height);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  Require(in.gcount() == static_cast<std::streamsize>(raw.size()), ErrorKind::kData,
          path + ": truncated PGM payload");
  std::vector<double> values(raw.size());
  for (size_t i = 0; i < raw.size(); ++i) values[i] = raw[i] / static_cast<double>(max_value);
  return IntensityImage(width, height, std::move(values));
}

void WritePgm(const std::string& path, const IntensityImage& image) {
  std::ofstream out(path, std::ios::binary);
  Require(out.good(), ErrorKind::kIo, "cannot write image " + path);
  out << "P5\n" << image.width() << ' ' << image.height() << "\n255\n";
  std::vector<unsigned char> raw(image.values().size());
  for (size_t i = 0; i < raw.size(); ++i) {
    raw[i] = static_cast<unsigned char>(std::lround(std::clamp(image.values()[i], 0.0, 1.0) * 255.0));
  }
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
}

}  // namespace skyloc
