#include <skyloc/maps.hpp>

#include <skyloc/error.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

namespace skyloc {

void SparseDepthMap::Validate(double margin) const {
  for (const auto& e : entries) {
    Require(e.inverse_depth > 0.0 && std::isfinite(e.inverse_depth), ErrorKind::kInvalidArgument,
            "map entry has non-positive inverse depth");
    Require(e.variance > 0.0 && std::isfinite(e.variance), ErrorKind::kInvalidArgument,
            "map entry has non-positive variance");
    Require(reference.Contains(e.pixel, margin), ErrorKind::kInvalidArgument,
            "map entry lies too close to the reference image border");
  }
}

size_t DenseDepthMap::KnownCount() const {
  return static_cast<size_t>(std::count_if(depth.begin(), depth.end(), [](double d) { return d > 0.0; }));
}

namespace {


void PutU32(std::vector<std::uint8_t>* out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out->push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void PutF32(std::vector<std::uint8_t>* out, double value) {
  const float f = static_cast<float>(value);
  std::uint32_t bits;
  std::memcpy(&bits, &f, sizeof bits);
  PutU32(out, bits);
}

std::uint32_t GetU32(const std::vector<std::uint8_t>& in, size_t offset) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in[offset + i]) << (8 * i);
  return v;
}

double GetF32(const std::vector<std::uint8_t>& in, size_t offset) {
  const std::uint32_t bits = GetU32(in, offset);
  float f;
  std::memcpy(&f, &bits, sizeof f);
  return f;
}

}  // namespace

std::vector<std::uint8_t> EncodeDepthMap(const DenseDepthMap& map) {
  std::vector<std::uint8_t> out;
  const size_t n = static_cast<size_t>(map.width) * map.height;
  out.reserve(12 + 8 * n);
  out.insert(out.end(), {'D', 'P', 'T', 'H'});
  PutU32(&out, static_cast<std::uint32_t>(map.width));
  PutU32(&out, static_cast<std::uint32_t>(map.height));
  for (size_t i = 0; i < n; ++i) PutF32(&out, map.depth[i]);
  for (size_t i = 0; i < n; ++i) PutF32(&out, map.variance[i]);
  return out;
}

DenseDepthMap DecodeDepthMap(const std::vector<std::uint8_t>& bytes) {
  Require(bytes.size() >= 12 && std::equal(bytes.begin(), bytes.begin() + 4, "DPTH"), ErrorKind::kData,
          "depth map is missing the DPTH header");
  const std::uint32_t w = GetU32(bytes, 4);
  const std::uint32_t h = GetU32(bytes, 8);
  const size_t n = static_cast<size_t>(w) * h;
  Require(bytes.size() == 12 + 8 * n, ErrorKind::kData, "depth map payload size mismatch");
  DenseDepthMap map(static_cast<int>(w), static_cast<int>(h));
  for (size_t i = 0; i < n; ++i) map.depth[i] = GetF32(bytes, 12 + 4 * i);
  for (size_t i = 0; i < n; ++i) map.variance[i] = GetF32(bytes, 12 + 4 * (n + i));
  return map;
}

void WriteDepthMap(const std::string& path, const DenseDepthMap& map) {
  const auto bytes = EncodeDepthMap(map);
  std::ofstream out(path, std::ios::binary);
  Require(out.good(), ErrorKind::kIo, "cannot write depth map " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

DenseDepthMap ReadDepthMap(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  Require(in.good(), ErrorKind::kIo, "cannot open depth map " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return DecodeDepthMap(bytes);
}

}  // namespace skyloc
