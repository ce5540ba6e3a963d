#pragma once

// Independent reference computations shared by the unit tests and the
// acceptance binary. They use only Eigen and the library's plain data types.

#include <skyloc/geometry.hpp>
#include <skyloc/ground_plane.hpp>

#include <Eigen/Dense>

#include <random>
#include <vector>

namespace skyloc::oracle {

// Range of the reference ray after rotating the current ray by exactly one
// pixel of angle (atan(1/f)) away from the reference camera, found by
// intersecting the two 3D lines.
inline double OnePixelRange(const Vec3& ray_ref, const Vec3& t, const Vec3& point, double f) {
  const Vec3 a = (point - t).normalized();
  const Vec3 w = (-t).normalized();
  const Vec3 away = (a * a.dot(w) - w).normalized();
  const Vec3 shifted = (f * a + away).normalized();
  Eigen::Matrix<double, 3, 2> m;
  m.col(0) = ray_ref.normalized();
  m.col(1) = -shifted;
  const Eigen::Vector2d su = m.colPivHouseholderQr().solve(t);
  return su(0);
}

// Least-squares z = a x + b y + c through centered samples, solved with a
// general dense solver.
inline Vec3 NormalEquationNormal(const std::vector<GroundSample>& samples) {
  Eigen::MatrixXd a(samples.size(), 3);
  Eigen::VectorXd z(samples.size());
  for (size_t i = 0; i < samples.size(); ++i) {
    a.row(static_cast<Eigen::Index>(i)) << samples[i].x, samples[i].y, 1.0;
    z(static_cast<Eigen::Index>(i)) = samples[i].z_bar;
  }
  const Eigen::Vector3d coef = (a.transpose() * a).ldlt().solve(a.transpose() * z);
  return Vec3(-coef(0), -coef(1), 1.0).normalized();
}

// Points p with n.p = h, spread over an 8 m square patch of the plane.
inline std::vector<GroundSample> PlanarSamples(const Vec3& n, double h, int count, std::mt19937_64& rng) {
  const Vec3 base = h * n;
  Vec3 u = n.cross(Vec3::UnitX());
  if (u.norm() < 0.1) u = n.cross(Vec3::UnitZ());
  u.normalize();
  const Vec3 v = n.cross(u).normalized();
  std::uniform_real_distribution<double> r(-4.0, 4.0);
  std::vector<GroundSample> samples;
  for (int i = 0; i < count; ++i) {
    const Vec3 p = base + r(rng) * u + r(rng) * v;
    samples.push_back({p.x(), p.y(), p.z()});
  }
  return samples;
}

// Mean of values[i-k+1 .. i].
inline double WindowedMean(const std::vector<double>& values, int i, int k) {
  double sum = 0.0;
  for (int j = i - k + 1; j <= i; ++j) sum += values[static_cast<size_t>(j)];
  return sum / k;
}

}  // namespace skyloc::oracle
