#include <skyloc/depth_filter.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

namespace skyloc {

double DepthHypothesis::sigma() const { return std::sqrt(sigma2); }

DepthHypothesis DepthHypothesis::FromInverseDepth(double inverse_depth, double inverse_variance) {
  Require(inverse_depth > 0.0 && inverse_variance > 0.0, ErrorKind::kInvalidArgument,
          "inverse depth and its variance must be positive");
  DepthHypothesis hyp;
  hyp.mu = 1.0 / inverse_depth;
  // First-order propagation through d = 1/rho.
  hyp.sigma2 = inverse_variance / std::pow(inverse_depth, 4);
  hyp.observation_count = 0;
  return hyp;
}

double NccScore(const PixelBlock& a, const PixelBlock& b, NccMode mode) {
  Require(a.values.size() == b.values.size() && !a.values.empty(), ErrorKind::kInvalidArgument,
          "NCC blocks must have equal, non-zero size");
  double mean_a = 0.0, mean_b = 0.0;
  if (mode == NccMode::kZeroMean) {
    mean_a = std::accumulate(a.values.begin(), a.values.end(), 0.0) / a.values.size();
    mean_b = std::accumulate(b.values.begin(), b.values.end(), 0.0) / b.values.size();
  }
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (size_t i = 0; i < a.values.size(); ++i) {
    const double va = a.values[i] - mean_a;
    const double vb = b.values[i] - mean_b;
    ab += va * vb;
    aa += va * va;
    bb += vb * vb;
  }
  Require(aa > 0.0 && bb > 0.0, ErrorKind::kUndefinedCorrelation, "NCC of a zero-energy block");
  return std::clamp(ab / std::sqrt(aa * bb), -1.0, 1.0);
}

namespace {

// Parameter range [s0, s1] of p0 + s*d that lies inside [lo, hi] per axis.
bool ClipToBox(const Vec2& p0, const Vec2& d, const Vec2& lo, const Vec2& hi, double* s0, double* s1) {
  for (int axis = 0; axis < 2; ++axis) {
    if (std::abs(d[axis]) < 1e-15) {
      if (p0[axis] < lo[axis] || p0[axis] > hi[axis]) return false;
      continue;
    }
    double a = (lo[axis] - p0[axis]) / d[axis];
    double b = (hi[axis] - p0[axis]) / d[axis];
    if (a > b) std::swap(a, b);
    *s0 = std::max(*s0, a);
    *s1 = std::min(*s1, b);
  }
  return *s0 <= *s1;
}

}  // namespace

DepthObservation EpipolarSearch(const DepthHypothesis& hyp, const PixelBlock& ref_block,
                                const IntensityImage& cur_frame, const PoseSE3& xi,
                                const CameraIntrinsics& camera, const DepthFilterOptions& options) {
  Require(xi.translation().norm() > 1e-12, ErrorKind::kDegenerateGeometry,
          "zero baseline: depth is unobservable under pure rotation");
  const double sigma = hyp.sigma();
  double near_depth = std::max(hyp.mu - 2.0 * sigma, options.min_depth);
  double far_depth = std::max(hyp.mu + 2.0 * sigma, near_depth);

  // Keep only depths that land in front of the current camera.
  const Vec3 ray = camera.Ray(ref_block.center);
  const double slope = (xi.rotation() * ray).z();
  const double offset = xi.translation().z();
  const double min_z = 1e-3;
  if (slope > 0.0) {
    near_depth = std::max(near_depth, (min_z - offset) / slope);
  } else if (slope < 0.0) {
    far_depth = std::min(far_depth, (min_z - offset) / slope);
  } else if (offset < min_z) {
    Fail(ErrorKind::kOutOfView, "epipolar segment lies behind the current camera");
  }
  Require(near_depth <= far_depth && far_depth > 0.0, ErrorKind::kOutOfView,
          "epipolar segment lies behind the current camera");

  const EpipolarSegment segment = EpipolarLine(camera, xi, ref_block.center, near_depth, far_depth);
  const double margin = ref_block.half_size;
  double s0 = 0.0, s1 = 1.0;
  const Vec2 lo(margin, margin);
  const Vec2 hi(cur_frame.width() - 1 - margin, cur_frame.height() - 1 - margin);
  Require(ClipToBox(segment.near_pixel, segment.far_pixel - segment.near_pixel, lo, hi, &s0, &s1),
          ErrorKind::kOutOfView, "epipolar segment falls outside the current frame");

  // The mean hypothesis must itself be visible; otherwise the clipped segment
  // only holds blocks of other surface points.
  const Vec3 mean_point = xi * (hyp.mu * ray);
  Require(mean_point.z() > min_z, ErrorKind::kOutOfView, "hypothesis mean lies behind the current camera");
  const Vec2 mean_pixel = camera.ProjectCameraPoint(mean_point);
  Require((mean_pixel.array() >= lo.array()).all() && (mean_pixel.array() <= hi.array()).all(),
          ErrorKind::kOutOfView, "hypothesis mean projects outside the current frame");

  // Throws kUndefinedCorrelation for a reference block without energy.
  NccScore(ref_block, ref_block, options.ncc_mode);

  const double visible_length = (s1 - s0) * segment.Length();
  const int steps = std::max(1, static_cast<int>(std::ceil(visible_length / options.sample_step_px)));
  double best_score = -std::numeric_limits<double>::infinity();
  double worst_score = std::numeric_limits<double>::infinity();
  Vec2 best_pixel = Vec2::Zero();
  int scored = 0;
  PixelBlock candidate;
  for (int i = 0; i <= steps; ++i) {
    const double s = s0 + (s1 - s0) * static_cast<double>(i) / steps;
    const Vec2 pixel = segment.At(s);
    if (!ExtractBlock(cur_frame, pixel, ref_block.half_size, &candidate)) continue;
    double score = -1.0;
    try {
      score = NccScore(ref_block, candidate, options.ncc_mode);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::kUndefinedCorrelation) throw;
    }
    ++scored;
    worst_score = std::min(worst_score, score);
    if (score > best_score) {
      best_score = score;
      best_pixel = pixel;
    }
  }
  Require(scored > 0, ErrorKind::kOutOfView, "no epipolar sample fits inside the current frame");
  const bool flat = scored >= 3 && best_score - worst_score < options.min_profile_contrast;
  Require(!flat && best_score >= options.ncc_threshold, ErrorKind::kLowCorrelation,
          "epipolar correlation below acceptance threshold");

  DepthObservation obs;
  obs.depth = Triangulate(PoseSE3::Identity(), xi.Inverse(), ref_block.center, best_pixel, camera,
                          options.min_ray_angle_deg);
  obs.matched_pixel = best_pixel;
  obs.ncc = best_score;
  Require(obs.depth > 0.0, ErrorKind::kDegenerateGeometry, "triangulated depth is not positive");
  return obs;
}

MeasurementMoments ComputeMeasurementMoments(double d_prev_norm, const Vec3& translation, double focal,
                                             const Vec3& ray_ref, const Vec3& ray_cur,
                                             double min_sin_gamma) {
  const double t_norm = translation.norm();
  Require(t_norm > 0.0, ErrorKind::kDegenerateGeometry, "zero translation");
  Require(ray_ref.norm() > 0.0 && ray_cur.norm() > 0.0 && focal > 0.0, ErrorKind::kInvalidArgument,
          "rays must be non-zero and focal length positive");
  auto angle = [](const Vec3& u, const Vec3& v) {
    return std::acos(std::clamp(u.dot(v) / (u.norm() * v.norm()), -1.0, 1.0));
  };
  const double alpha = angle(ray_ref, translation);
  const double beta = angle(ray_cur, -translation);
  const double beta_plus = beta + std::atan(1.0 / focal);
  const double gamma = std::numbers::pi - alpha - beta_plus;
  const double sin_gamma = std::sin(gamma);
  Require(gamma > 0.0 && sin_gamma > min_sin_gamma, ErrorKind::kDegenerateGeometry,
          "one-pixel perturbed rays do not intersect");
  const double d_plus = t_norm * std::sin(beta_plus) / sin_gamma;
  return {0.5 * (d_prev_norm + d_plus), std::abs(d_plus - d_prev_norm)};
}

DepthHypothesis Fuse(const DepthHypothesis& hyp, double obs_mu, double obs_sigma) {
  Require(obs_sigma > 0.0, ErrorKind::kInvalidArgument, "observation sigma must be positive");
  const double obs_var = obs_sigma * obs_sigma;
  const double sum = hyp.sigma2 + obs_var;
  DepthHypothesis out;
  out.mu = (obs_var * hyp.mu + hyp.sigma2 * obs_mu) / sum;
  out.sigma2 = hyp.sigma2 * obs_var / sum;
  out.observation_count = hyp.observation_count + 1;
  return out;
}

bool UpdateHypothesis(DepthHypothesis* hyp, const PixelBlock& ref_block, const IntensityImage& cur_frame,
                      const PoseSE3& xi, const CameraIntrinsics& camera, const DepthFilterOptions& options,
                      ErrorKind* failure) {
  try {
    const DepthObservation obs = EpipolarSearch(*hyp, ref_block, cur_frame, xi, camera, options);
    const Vec3 ray = camera.Ray(ref_block.center);
    const Vec3 point = obs.depth * ray;
    const Vec3 cur_center = xi.Inverse().translation();
    const MeasurementMoments m =
        ComputeMeasurementMoments(point.norm(), cur_center, camera.f, point, point - cur_center);
    // Moments are ranges along the ray; the hypothesis stores z-depth.
    const double scale = ray.norm();
    *hyp = Fuse(*hyp, m.mu / scale, std::max(m.sigma / scale, options.sigma_floor));
    return true;
  } catch (const Error& e) {
    if (failure != nullptr) *failure = e.kind();
    return false;
  }
}

int DepthWindowResult::ConvergedCount() const {
  return static_cast<int>(std::count_if(seeds.begin(), seeds.end(), [](const SeedState& s) { return s.converged; }));
}

DepthWindowResult RunDepthWindow(std::span<const WindowFrame> frames, const SparseDepthMap& seeds,
                                 const CameraIntrinsics& camera, const DepthFilterOptions& options) {
  Require(frames.size() >= 2, ErrorKind::kInvalidArgument, "depth window needs at least two frames");
  const WindowFrame& ref = frames.front();

  DepthWindowResult result;
  result.seeds.reserve(seeds.entries.size());
  PixelBlock ref_block;
  for (const MapEntry& entry : seeds.entries) {
    SeedState state;
    state.pixel = entry.pixel;
    state.hypothesis = DepthHypothesis::FromInverseDepth(entry.inverse_depth, entry.variance);
    if (!ExtractBlock(ref.image, entry.pixel, options.block_half_size, &ref_block)) {
      ++result.rejected[ErrorKind::kOutOfView];
      result.seeds.push_back(state);
      continue;
    }
    for (size_t k = 1; k < frames.size(); ++k) {
      const PoseSE3 xi = frames[k].pose.Inverse() * ref.pose;
      ErrorKind failure{};
      if (UpdateHypothesis(&state.hypothesis, ref_block, frames[k].image, xi, camera, options, &failure)) {
        ++result.accepted_observations;
      } else {
        ++result.rejected[failure];
      }
    }
    state.converged = state.hypothesis.observation_count >= std::max(1, options.min_observations) &&
                      state.hypothesis.sigma() / state.hypothesis.mu < options.convergence_ratio;
    result.seeds.push_back(state);
  }

  std::vector<SeedDepth> converged;
  for (const SeedState& s : result.seeds) {
    if (s.converged) converged.push_back({s.pixel, s.hypothesis.mu, s.hypothesis.sigma2});
  }
  if (converged.size() >= 3) {
    result.dense = Densify(converged, frames, camera, options.densify);
  } else {
    result.dense = DenseDepthMap(ref.image.width(), ref.image.height());
    for (const SeedDepth& s : converged) {
      const int x = static_cast<int>(std::lround(s.pixel.x()));
      const int y = static_cast<int>(std::lround(s.pixel.y()));
      result.dense.depth[result.dense.Index(x, y)] = s.depth;
      result.dense.variance[result.dense.Index(x, y)] = s.variance;
    }
  }
  return result;
}

namespace {

// Inverse depth modelled as rho(u, v) = a + b (u - u0) + c (v - v0).
struct AffinePlane {
  Vec2 origin = Vec2::Zero();
  double a = 0.0, b = 0.0, c = 0.0;

  double At(const Vec2& p) const { return a + b * (p.x() - origin.x()) + c * (p.y() - origin.y()); }
};

std::vector<size_t> NearestIndices(std::span<const Vec2> pixels, const Vec2& query, size_t count) {
  std::vector<size_t> order(pixels.size());
  std::iota(order.begin(), order.end(), size_t{0});
  count = std::min(count, order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(count), order.end(),
                    [&](size_t i, size_t j) {
                      const double di = (pixels[i] - query).squaredNorm();
                      const double dj = (pixels[j] - query).squaredNorm();
                      return di < dj || (di == dj && i < j);
                    });
  order.resize(count);
  return order;
}

// Returns false when the neighbourhood does not constrain a plane.
bool FitAffine(std::span<const Vec2> pixels, std::span<const double> values, const std::vector<size_t>& idx,
               const Vec2& origin, AffinePlane* plane) {
  if (idx.size() < 3) return false;
  Eigen::MatrixXd a(idx.size(), 3);
  Eigen::VectorXd b(idx.size());
  for (size_t r = 0; r < idx.size(); ++r) {
    const Vec2 d = pixels[idx[r]] - origin;
    a.row(static_cast<Eigen::Index>(r)) << 1.0, d.x(), d.y();
    b(static_cast<Eigen::Index>(r)) = values[idx[r]];
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
  qr.setThreshold(1e-6);
  if (qr.rank() < 3) return false;
  const Eigen::Vector3d x = qr.solve(b);
  plane->origin = origin;
  plane->a = x(0);
  plane->b = x(1);
  plane->c = x(2);
  return true;
}

double Cross(const Vec2& o, const Vec2& a, const Vec2& b) {
  return (a.x() - o.x()) * (b.y() - o.y()) - (a.y() - o.y()) * (b.x() - o.x());
}

// Andrew's monotone chain; counter-clockwise without repeated endpoint.
std::vector<Vec2> ConvexHull(std::vector<Vec2> pts) {
  std::sort(pts.begin(), pts.end(), [](const Vec2& a, const Vec2& b) {
    return a.x() < b.x() || (a.x() == b.x() && a.y() < b.y());
  });
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  if (pts.size() < 3) return pts;
  std::vector<Vec2> hull(2 * pts.size());
  size_t k = 0;
  for (const Vec2& p : pts) {
    while (k >= 2 && Cross(hull[k - 2], hull[k - 1], p) <= 0) --k;
    hull[k++] = p;
  }
  for (size_t i = pts.size() - 1, t = k + 1; i-- > 0;) {
    while (k >= t && Cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);
  return hull;
}

bool InsideHull(const std::vector<Vec2>& hull, const Vec2& p) {
  if (hull.size() < 3) return false;
  for (size_t i = 0; i < hull.size(); ++i) {
    if (Cross(hull[i], hull[(i + 1) % hull.size()], p) < -1e-9) return false;
  }
  return true;
}

}  // namespace

double InterpolateInverseDepth(std::span<const Vec2> pixels, std::span<const double> inverse_depths,
                               const Vec2& query, int neighbors) {
  Require(!pixels.empty() && pixels.size() == inverse_depths.size(), ErrorKind::kInvalidArgument,
          "interpolation needs matching, non-empty samples");
  const auto idx = NearestIndices(pixels, query, static_cast<size_t>(std::max(neighbors, 1)));
  AffinePlane plane;
  if (FitAffine(pixels, inverse_depths, idx, query, &plane) && plane.a > 0.0) return plane.a;
  double wsum = 0.0, vsum = 0.0;
  for (size_t i : idx) {
    const double d2 = (pixels[i] - query).squaredNorm();
    if (d2 == 0.0) return inverse_depths[i];
    wsum += 1.0 / d2;
    vsum += inverse_depths[i] / d2;
  }
  return vsum / wsum;
}

DenseDepthMap Densify(std::span<const SeedDepth> seeds, std::span<const WindowFrame> frames,
                      const CameraIntrinsics& camera, const DensifyOptions& options) {
  Require(seeds.size() >= 3, ErrorKind::kInsufficientSeeds, "densification needs at least three seeds");
  Require(!frames.empty(), ErrorKind::kInvalidArgument, "densification needs the reference frame");
  const IntensityImage& ref = frames.front().image;
  const int width = ref.width();
  const int height = ref.height();

  std::vector<Vec2> pixels;
  std::vector<double> inverse_depths;
  double min_depth = std::numeric_limits<double>::infinity();
  double max_depth = 0.0;
  for (const SeedDepth& s : seeds) {
    Require(s.depth > 0.0 && s.variance > 0.0, ErrorKind::kInvalidArgument, "seed depth and variance must be positive");
    pixels.push_back(s.pixel);
    inverse_depths.push_back(1.0 / s.depth);
    min_depth = std::min(min_depth, s.depth);
    max_depth = std::max(max_depth, s.depth);
  }

  // One inverse-depth plane per seed, fitted over its neighbourhood.
  std::vector<AffinePlane> planes(seeds.size());
  for (size_t i = 0; i < seeds.size(); ++i) {
    const auto idx = NearestIndices(pixels, pixels[i], static_cast<size_t>(options.plane_neighbors));
    if (!FitAffine(pixels, inverse_depths, idx, pixels[i], &planes[i])) {
      planes[i] = AffinePlane{pixels[i], inverse_depths[i], 0.0, 0.0};
    }
  }

  // Scoring frames, spread over the window (reference excluded).
  struct ScoreView {
    const IntensityImage* image;
    Mat3 rotation;
    Vec3 translation;
  };
  std::vector<ScoreView> views;
  const int others = static_cast<int>(frames.size()) - 1;
  const int wanted = std::min(options.score_frames, others);
  for (int i = 1; i <= wanted; ++i) {
    const size_t k = static_cast<size_t>(std::lround(static_cast<double>(i) * others / wanted));
    const PoseSE3 xi = frames[k].pose.Inverse() * frames.front().pose;
    if (!views.empty() && views.back().image == &frames[k].image) continue;
    views.push_back({&frames[k].image, xi.rotation(), xi.translation()});
  }

  const int r = options.block_half_size;
  auto photometric_cost = [&](int x, int y, double depth) {
    double ssd = 0.0;
    int valid = 0;
    for (const ScoreView& v : views) {
      for (int dy = -r; dy <= r; ++dy) {
        for (int dx = -r; dx <= r; ++dx) {
          const int qx = x + dx, qy = y + dy;
          if (qx < 0 || qy < 0 || qx >= width || qy >= height) continue;
          const Vec3 q = v.rotation * (depth * camera.Ray(Vec2(qx, qy))) + v.translation;
          if (q.z() <= 0.0) continue;
          const Vec2 u = camera.ProjectCameraPoint(q);
          if (!v.image->Contains(u)) continue;
          const double e = ref(qx, qy) - v.image->Sample(u);
          ssd += e * e;
          ++valid;
        }
      }
    }
    return valid > 0 ? ssd / valid : 1e9;
  };
  auto plane_depth = [&](int label, int x, int y) {
    const double rho = planes[static_cast<size_t>(label)].At(Vec2(x, y));
    if (rho <= 0.0) return max_depth;
    return std::clamp(1.0 / rho, min_depth, max_depth);
  };

  DenseDepthMap out(width, height);
  std::vector<int> label(static_cast<size_t>(width) * height, -1);
  std::vector<char> fixed(label.size(), 0);
  const std::vector<Vec2> hull = ConvexHull(pixels);

  // Initial labels: nearest seed plane for every hull pixel.
  int min_x = width, min_y = height, max_x = -1, max_y = -1;
  for (const Vec2& p : hull) {
    min_x = std::min(min_x, static_cast<int>(std::floor(p.x())));
    min_y = std::min(min_y, static_cast<int>(std::floor(p.y())));
    max_x = std::max(max_x, static_cast<int>(std::ceil(p.x())));
    max_y = std::max(max_y, static_cast<int>(std::ceil(p.y())));
  }
  min_x = std::max(min_x, 0);
  min_y = std::max(min_y, 0);
  max_x = std::min(max_x, width - 1);
  max_y = std::min(max_y, height - 1);
  for (int y = min_y; y <= max_y; ++y) {
    for (int x = min_x; x <= max_x; ++x) {
      if (!InsideHull(hull, Vec2(x, y))) continue;
      const Vec2 p(x, y);
      size_t nearest = 0;
      double best = std::numeric_limits<double>::infinity();
      for (size_t i = 0; i < pixels.size(); ++i) {
        const double d2 = (pixels[i] - p).squaredNorm();
        if (d2 < best) {
          best = d2;
          nearest = i;
        }
      }
      label[out.Index(x, y)] = static_cast<int>(nearest);
    }
  }
  for (size_t i = 0; i < seeds.size(); ++i) {
    const int x = static_cast<int>(std::lround(seeds[i].pixel.x()));
    const int y = static_cast<int>(std::lround(seeds[i].pixel.y()));
    if (x < 0 || y < 0 || x >= width || y >= height || fixed[out.Index(x, y)]) continue;
    label[out.Index(x, y)] = static_cast<int>(i);
    fixed[out.Index(x, y)] = 1;
  }

  // Two propagation sweeps. Candidates are tried in increasing pixel-index
  // order and only a strictly lower cost replaces the incumbent.
  auto visit = [&](int x, int y, std::initializer_list<std::pair<int, int>> neighbours) {
    const size_t idx = out.Index(x, y);
    if (label[idx] < 0 || fixed[idx]) return;
    int best_label = label[idx];
    double best_cost = photometric_cost(x, y, plane_depth(best_label, x, y));
    for (const auto& [nx, ny] : neighbours) {
      if (nx < 0 || ny < 0 || nx >= width || ny >= height) continue;
      const int candidate = label[out.Index(nx, ny)];
      if (candidate < 0 || candidate == best_label) continue;
      const double cost = photometric_cost(x, y, plane_depth(candidate, x, y));
      if (cost < best_cost) {
        best_cost = cost;
        best_label = candidate;
      }
    }
    label[idx] = best_label;
  };
  for (int y = min_y; y <= max_y; ++y) {
    for (int x = min_x; x <= max_x; ++x) visit(x, y, {{x, y - 1}, {x - 1, y}});
  }
  for (int y = max_y; y >= min_y; --y) {
    for (int x = max_x; x >= min_x; --x) visit(x, y, {{x + 1, y}, {x, y + 1}});
  }

  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const size_t idx = out.Index(x, y);
      if (label[idx] < 0) continue;
      const auto& seed = seeds[static_cast<size_t>(label[idx])];
      out.depth[idx] = fixed[idx] ? seed.depth : plane_depth(label[idx], x, y);
      out.variance[idx] = seed.variance;
    }
  }
  return out;
}

DenseDepthMap ReprojectDepthMap(const DenseDepthMap& source, const PoseSE3& xi, const CameraIntrinsics& camera) {
  DenseDepthMap out(source.width, source.height);
  for (int y = 0; y < source.height; ++y) {
    for (int x = 0; x < source.width; ++x) {
      const size_t idx = source.Index(x, y);
      if (source.depth[idx] <= 0.0) continue;
      const Vec3 q = xi * (source.depth[idx] * camera.Ray(Vec2(x, y)));
      if (q.z() <= 0.0) continue;
      const Vec2 u = camera.ProjectCameraPoint(q);
      const long tx = std::lround(u.x());
      const long ty = std::lround(u.y());
      if (tx < 0 || ty < 0 || tx >= out.width || ty >= out.height) continue;
      const size_t t = out.Index(static_cast<int>(tx), static_cast<int>(ty));
      if (out.depth[t] == 0.0 || q.z() < out.depth[t]) {
        out.depth[t] = q.z();
        out.variance[t] = source.variance[idx];
      }
    }
  }
  return out;
}

}  // namespace skyloc
