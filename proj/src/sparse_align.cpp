#include <skyloc/sparse_align.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

namespace skyloc {

std::vector<FeaturePoint> SelectFeatures(const IntensityImage& image, const FeatureSelectionOptions& options) {
  std::vector<FeaturePoint> features;
  const int w = image.width(), h = image.height();
  const int border = std::max(options.border, options.descriptor_half_size + 1);
  for (int cy = border; cy < h - border; cy += options.cell_size) {
    for (int cx = border; cx < w - border; cx += options.cell_size) {
      double best = options.min_gradient;
      int bx = -1, by = -1;
      for (int y = cy; y < std::min(cy + options.cell_size, h - border); ++y) {
        for (int x = cx; x < std::min(cx + options.cell_size, w - border); ++x) {
          const double gx = 0.5 * (image(x + 1, y) - image(x - 1, y));
          const double gy = 0.5 * (image(x, y + 1) - image(x, y - 1));
          const double mag = std::hypot(gx, gy);
          if (mag > best) {
            best = mag;
            bx = x;
            by = y;
          }
        }
      }
      if (bx < 0) continue;
      FeaturePoint f;
      f.pixel = Vec2(bx, by);
      PixelBlock block;
      ExtractBlock(image, f.pixel, options.descriptor_half_size, &block);
      double mean = 0.0;
      for (double v : block.values) mean += v;
      mean /= static_cast<double>(block.values.size());
      double norm = 0.0;
      for (double& v : block.values) {
        v -= mean;
        norm += v * v;
      }
      norm = std::sqrt(norm);
      for (double& v : block.values) v = norm > 0.0 ? v / norm : 0.0;
      f.descriptor = std::move(block.values);
      features.push_back(std::move(f));
    }
  }
  return features;
}

FeatureProvider GradientFeatureProvider(FeatureSelectionOptions options) {
  return [options](int, const IntensityImage& image) { return SelectFeatures(image, options); };
}

std::map<int, std::vector<FeaturePoint>> ReadFeatureFile(const std::string& path, int descriptor_length) {
  std::ifstream in(path);
  Require(in.good(), ErrorKind::kIo, "cannot open feature file " + path);
  std::map<int, std::vector<FeaturePoint>> out;
  std::string line;
  int line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.find_first_not_of(" \t\r") == std::string::npos || line[0] == '#') continue;
    std::istringstream fields(line);
    int frame = 0;
    FeaturePoint f;
    fields >> frame >> f.pixel.x() >> f.pixel.y();
    double v;
    while (fields >> v) f.descriptor.push_back(v);
    Require(!fields.bad() && fields.eof() && static_cast<int>(f.descriptor.size()) == descriptor_length,
            ErrorKind::kData,
            path + ":" + std::to_string(line_number) + ": expected frame, x, y and " +
                std::to_string(descriptor_length) + " descriptor values");
    out[frame].push_back(std::move(f));
  }
  return out;
}

void WriteFeatureFile(const std::string& path, const std::map<int, std::vector<FeaturePoint>>& features) {
  std::ofstream out(path);
  Require(out.good(), ErrorKind::kIo, "cannot write feature file " + path);
  out << std::setprecision(9);
  for (const auto& [frame, list] : features) {
    for (const auto& f : list) {
      out << frame << ' ' << f.pixel.x() << ' ' << f.pixel.y();
      for (double d : f.descriptor) out << ' ' << d;
      out << '\n';
    }
  }
}

SparseDepthMap InitializeDepthMap(const IntensityImage& frame, const std::vector<FeaturePoint>& features,
                                  std::uint64_t seed, const MapInitOptions& options) {
  Require(!features.empty(), ErrorKind::kInvalidArgument, "cannot initialize a depth map without features");
  Require(options.min_inverse_depth > 0.0 && options.max_inverse_depth >= options.min_inverse_depth &&
              options.initial_variance > 0.0,
          ErrorKind::kInvalidArgument, "invalid depth prior");
  SparseDepthMap map;
  map.reference = frame;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> prior(options.min_inverse_depth, options.max_inverse_depth);
  for (const auto& f : features) {
    const double inverse_depth = prior(rng);
    if (!frame.Contains(f.pixel, options.border)) continue;
    map.entries.push_back({f.pixel, inverse_depth, options.initial_variance});
  }
  return map;
}

namespace {

CameraIntrinsics LevelCamera(const CameraIntrinsics& camera, int level) {
  const double s = std::ldexp(1.0, -level);
  CameraIntrinsics c = camera;
  c.f = camera.f * s;
  c.cx = (camera.cx + 0.5) * s - 0.5;
  c.cy = (camera.cy + 0.5) * s - 0.5;
  c.width = std::max(camera.width >> level, 1);
  c.height = std::max(camera.height >> level, 1);
  return c;
}

Vec2 LevelPixel(const Vec2& p, int level) {
  const double s = std::ldexp(1.0, -level);
  return Vec2((p.x() + 0.5) * s - 0.5, (p.y() + 0.5) * s - 0.5);
}

Eigen::Matrix<double, 2, 6> ProjectionJacobian(const CameraIntrinsics& camera, const Vec3& p) {
  // d pixel / d [omega, v] for the left increment p' = exp(omega) p + v.
  const double inv_z = 1.0 / p.z();
  Eigen::Matrix<double, 2, 3> dproj;
  dproj << camera.f * inv_z, 0, -camera.f * p.x() * inv_z * inv_z, 0, camera.f * inv_z,
      -camera.f * p.y() * inv_z * inv_z;
  Eigen::Matrix<double, 3, 6> dpoint;
  dpoint << 0, p.z(), -p.y(), 1, 0, 0, -p.z(), 0, p.x(), 0, 1, 0, p.y(), -p.x(), 0, 0, 0, 1;
  return dproj * dpoint;
}

}  // namespace

PhotometricProblem::PhotometricProblem(const SparseDepthMap& map, const IntensityImage& reference,
                                       const IntensityImage& frame, const CameraIntrinsics& camera, int level,
                                       const AlignmentOptions& options)
    : frame_(frame), camera_(LevelCamera(camera, level)), margin_(0.0), huber_delta_(options.huber_delta) {
  const int n = options.block_size;
  taps_per_entry_ = n * n;
  for (size_t e = 0; e < map.entries.size(); ++e) {
    const MapEntry& entry = map.entries[e];
    if (entry.variance >= options.trust_variance) continue;
    const Vec2 center = LevelPixel(entry.pixel, level);
    std::vector<Tap> block;
    for (int j = 0; j < n; ++j) {
      for (int i = 0; i < n; ++i) {
        const Vec2 q = center + Vec2(i - 0.5 * (n - 1), j - 0.5 * (n - 1));
        if (!reference.Contains(q)) break;
        // Neighbouring taps share the feature's inverse depth.
        block.push_back({entries_, camera_.Ray(q) / entry.inverse_depth, reference.Sample(q)});
      }
    }
    if (static_cast<int>(block.size()) != taps_per_entry_) continue;
    taps_.insert(taps_.end(), block.begin(), block.end());
    ++entries_;
  }
}

void PhotometricProblem::Residuals(const PoseSE3& xi, Eigen::VectorXd* residuals, std::vector<bool>* visible,
                                   Eigen::MatrixXd* jacobian) const {
  const int m = ResidualCount();
  residuals->setZero(m);
  visible->assign(static_cast<size_t>(m), false);
  if (jacobian != nullptr) jacobian->setZero(m, 6);
  for (int e = 0; e < entries_; ++e) {
    const int first = e * taps_per_entry_;
    bool ok = true;
    for (int k = first; k < first + taps_per_entry_ && ok; ++k) {
      const Vec3 p = xi * taps_[static_cast<size_t>(k)].point;
      ok = p.z() > 0.0 && frame_.Contains(camera_.ProjectCameraPoint(p), margin_);
    }
    if (!ok) continue;
    for (int k = first; k < first + taps_per_entry_; ++k) {
      const Tap& tap = taps_[static_cast<size_t>(k)];
      const Vec3 p = xi * tap.point;
      Vec2 grad;
      const double value = frame_.SampleWithGradient(camera_.ProjectCameraPoint(p), &grad);
      (*residuals)(k) = value - tap.reference_intensity;
      (*visible)[static_cast<size_t>(k)] = true;
      if (jacobian != nullptr) jacobian->row(k) = grad.transpose() * ProjectionJacobian(camera_, p);
    }
  }
}

double PhotometricProblem::Cost(const PoseSE3& xi, int* visible_entries) const {
  Eigen::VectorXd r;
  std::vector<bool> vis;
  Residuals(xi, &r, &vis);
  double cost = 0.0;
  int count = 0;
  for (int k = 0; k < ResidualCount(); ++k) {
    if (!vis[static_cast<size_t>(k)]) continue;
    cost += HuberNorm(r(k), huber_delta_);
    if (k % taps_per_entry_ == 0) ++count;
  }
  if (visible_entries != nullptr) *visible_entries = count;
  return cost;
}

double PhotometricProblem::Linearize(const PoseSE3& xi, Eigen::Matrix<double, 6, 6>* h, Vec6* g,
                                     int* visible_entries) const {
  Eigen::VectorXd r;
  std::vector<bool> vis;
  Eigen::MatrixXd j;
  Residuals(xi, &r, &vis, &j);
  h->setZero();
  g->setZero();
  double cost = 0.0;
  int count = 0;
  for (int k = 0; k < ResidualCount(); ++k) {
    if (!vis[static_cast<size_t>(k)]) continue;
    const double w = HuberWeight(r(k), huber_delta_);
    const Eigen::Matrix<double, 1, 6> row = j.row(k);
    h->noalias() += w * row.transpose() * row;
    g->noalias() += w * r(k) * row.transpose();
    cost += HuberNorm(r(k), huber_delta_);
    if (k % taps_per_entry_ == 0) ++count;
  }
  if (visible_entries != nullptr) *visible_entries = count;
  return cost;
}

AlignmentResult EstimateRelativePose(const SparseDepthMap& map, const IntensityImage& new_frame,
                                     const CameraIntrinsics& camera, const PoseSE3& initial_guess,
                                     const AlignmentOptions& options) {
  const auto trusted = std::count_if(map.entries.begin(), map.entries.end(), [&](const MapEntry& e) {
    return e.variance < options.trust_variance && e.inverse_depth > 0.0;
  });
  Require(trusted >= options.min_entries, ErrorKind::kInsufficientConstraints,
          "alignment needs at least " + std::to_string(options.min_entries) + " trusted map entries, have " +
              std::to_string(trusted));

  std::vector<IntensityImage> ref_pyramid{map.reference};
  std::vector<IntensityImage> cur_pyramid{new_frame};
  for (int l = 1; l < options.pyramid_levels; ++l) {
    if (ref_pyramid.back().width() < 16 || ref_pyramid.back().height() < 16) break;
    ref_pyramid.push_back(ref_pyramid.back().HalfSample());
    cur_pyramid.push_back(cur_pyramid.back().HalfSample());
  }

  const PhotometricProblem finest(map, ref_pyramid[0], cur_pyramid[0], camera, 0, options);
  int visible = 0;
  AlignmentResult result;
  result.initial_cost = finest.Cost(initial_guess, &visible);
  Require(visible >= options.min_entries, ErrorKind::kInsufficientConstraints,
          "fewer than " + std::to_string(options.min_entries) + " map entries are visible in the new frame");

  PoseSE3 xi = initial_guess;
  for (int level = static_cast<int>(ref_pyramid.size()) - 1; level >= 0; --level) {
    const PhotometricProblem problem(map, ref_pyramid[static_cast<size_t>(level)],
                                     cur_pyramid[static_cast<size_t>(level)], camera, level, options);
    Eigen::Matrix<double, 6, 6> h;
    Vec6 g;
    double cost = problem.Linearize(xi, &h, &g, &visible);
    if (visible < options.min_entries) continue;
    double lambda = options.initial_damping;
    for (int it = 0; it < options.max_iterations; ++it) {
      ++result.iterations;
      Eigen::Matrix<double, 6, 6> a = h;
      a.diagonal() += lambda * (h.diagonal().array() + 1e-12).matrix();
      const Vec6 delta = -a.ldlt().solve(g);
      if (!delta.allFinite()) {
        throw NonConvergenceError("alignment produced a non-finite update", xi);
      }
      if (delta.norm() < options.min_update_norm) break;
      const PoseSE3 candidate = xi.LeftPerturb(delta);
      int candidate_visible = 0;
      const double candidate_cost = problem.Cost(candidate, &candidate_visible);
      if (candidate_visible >= options.min_entries && candidate_cost < cost) {
        xi = candidate;
        lambda = std::max(lambda / options.damping_factor, 1e-12);
        cost = problem.Linearize(xi, &h, &g, &visible);
      } else {
        lambda *= options.damping_factor;
        if (lambda > options.max_damping) {
          throw NonConvergenceError("alignment damping exceeded its cap", xi);
        }
      }
    }
  }

  result.final_cost = finest.Cost(xi, &visible);
  result.xi = xi;
  if (result.final_cost > result.initial_cost) {
    result.xi = initial_guess;
    result.final_cost = result.initial_cost;
  }
  finest.Cost(result.xi, &result.used_entries);
  return result;
}

namespace {

double Median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  return *mid;
}

// Best zero-mean NCC offset of `templ` around `guess` with parabolic
// sub-pixel refinement. Returns the score.
double MatchBlock(const IntensityImage& image, const PixelBlock& templ, const Vec2& guess, int radius,
                  Vec2* match) {
  const int gx = static_cast<int>(std::lround(guess.x()));
  const int gy = static_cast<int>(std::lround(guess.y()));
  const int side = 2 * radius + 1;
  std::vector<double> scores(static_cast<size_t>(side) * side, -2.0);
  PixelBlock candidate;
  double best = -2.0;
  int bi = -1, bj = -1;
  for (int j = 0; j < side; ++j) {
    for (int i = 0; i < side; ++i) {
      const Vec2 p(gx + i - radius, gy + j - radius);
      if (!ExtractBlock(image, p, templ.half_size, &candidate)) continue;
      double s = -2.0;
      try {
        s = NccScore(templ, candidate, NccMode::kZeroMean);
      } catch (const Error&) {
        continue;
      }
      scores[static_cast<size_t>(j) * side + i] = s;
      if (s > best) {
        best = s;
        bi = i;
        bj = j;
      }
    }
  }
  if (bi < 0) return -2.0;
  auto at = [&](int i, int j) { return scores[static_cast<size_t>(j) * side + i]; };
  auto refine = [](double l, double c, double r) {
    const double denom = l - 2.0 * c + r;
    if (l < -1.5 || r < -1.5 || denom >= 0.0) return 0.0;
    return std::clamp(0.5 * (l - r) / denom, -0.5, 0.5);
  };
  double dx = 0.0, dy = 0.0;
  if (bi > 0 && bi < side - 1) dx = refine(at(bi - 1, bj), best, at(bi + 1, bj));
  if (bj > 0 && bj < side - 1) dy = refine(at(bi, bj - 1), best, at(bi, bj + 1));
  *match = Vec2(gx + bi - radius + dx, gy + bj - radius + dy);
  return best;
}

enum class BootstrapOutcome { kInitialized, kNoMotion };

// Initializes inverse depths from the parallax accumulated while the camera
// translates parallel to the image plane, the assumption under which the map
// converges from its random prior.
BootstrapOutcome Bootstrap(SparseDepthMap* map, const std::vector<IntensityImage>& frames, int keyframe,
                           const TrackingOptions& options) {
  const int half = 3;
  std::vector<PixelBlock> templates(map->entries.size());
  std::vector<Vec2> positions(map->entries.size());
  std::vector<bool> alive(map->entries.size(), false);
  for (size_t i = 0; i < map->entries.size(); ++i) {
    positions[i] = map->entries[i].pixel;
    alive[i] = ExtractBlock(map->reference, positions[i], half, &templates[i]);
    if (alive[i]) {
      try {
        NccScore(templates[i], templates[i], NccMode::kZeroMean);
      } catch (const Error&) {
        alive[i] = false;
      }
    }
  }

  double median_disparity = 0.0;
  const int last = std::min(static_cast<int>(frames.size()) - 1, keyframe + options.bootstrap_max_frames);
  for (int j = keyframe + 1; j <= last; ++j) {
    std::vector<double> disparities;
    for (size_t i = 0; i < positions.size(); ++i) {
      if (!alive[i]) continue;
      Vec2 match;
      const double score = MatchBlock(frames[static_cast<size_t>(j)], templates[i], positions[i],
                                      options.bootstrap_search_radius, &match);
      if (score < options.bootstrap_min_ncc) {
        alive[i] = false;
        continue;
      }
      positions[i] = match;
      disparities.push_back((match - map->entries[i].pixel).norm());
    }
    median_disparity = Median(disparities);
    if (median_disparity >= options.bootstrap_min_disparity) break;
  }
  if (median_disparity < 0.5) return BootstrapOutcome::kNoMotion;

  Vec2 direction = Vec2::Zero();
  for (size_t i = 0; i < positions.size(); ++i) {
    if (alive[i]) direction += positions[i] - map->entries[i].pixel;
  }
  direction.normalize();
  std::vector<double> along(positions.size(), 0.0);
  std::vector<double> inliers;
  for (size_t i = 0; i < positions.size(); ++i) {
    if (!alive[i]) continue;
    const Vec2 flow = positions[i] - map->entries[i].pixel;
    along[i] = flow.dot(direction);
    const double across = std::abs(flow.x() * direction.y() - flow.y() * direction.x());
    if (along[i] > 0.2 && across < 0.5 + 0.1 * along[i]) {
      inliers.push_back(along[i]);
    } else {
      alive[i] = false;
    }
  }
  Require(static_cast<int>(inliers.size()) >= options.alignment.min_entries, ErrorKind::kInsufficientConstraints,
          "bootstrap kept too few consistent feature tracks");
  const double scale = options.scale_reference * Median(inliers);
  const double variance = std::pow(0.5 / scale, 2);
  std::vector<MapEntry> kept;
  for (size_t i = 0; i < positions.size(); ++i) {
    if (!alive[i]) continue;
    kept.push_back({map->entries[i].pixel, along[i] / scale, variance});
  }
  map->entries = std::move(kept);
  return BootstrapOutcome::kInitialized;
}

SparseDepthMap Reseed(const SparseDepthMap& old_map, const PoseSE3& xi, const IntensityImage& frame,
                      const std::vector<FeaturePoint>& features, const CameraIntrinsics& camera,
                      const TrackingOptions& options) {
  std::vector<Vec2> pixels;
  std::vector<double> inverse_depths;
  double mean_variance = 0.0;
  for (const MapEntry& e : old_map.entries) {
    const Vec3 p = xi * (camera.Ray(e.pixel) / e.inverse_depth);
    if (p.z() <= 0.0) continue;
    pixels.push_back(camera.ProjectCameraPoint(p));
    inverse_depths.push_back(1.0 / p.z());
    mean_variance += e.variance;
  }
  SparseDepthMap map;
  map.reference = frame;
  if (pixels.size() < 3) return map;
  mean_variance /= static_cast<double>(pixels.size());
  for (const FeaturePoint& f : features) {
    if (!frame.Contains(f.pixel, options.init.border)) continue;
    const double rho = InterpolateInverseDepth(pixels, inverse_depths, f.pixel);
    if (!(rho > 0.0)) continue;
    map.entries.push_back({f.pixel, rho, 2.0 * mean_variance});
  }
  return map;
}

void RefineMap(SparseDepthMap* map, const IntensityImage& frame, const PoseSE3& xi, const CameraIntrinsics& camera,
               const DepthFilterOptions& options) {
  PixelBlock block;
  for (MapEntry& e : map->entries) {
    if (!ExtractBlock(map->reference, e.pixel, options.block_half_size, &block)) continue;
    DepthHypothesis hyp = DepthHypothesis::FromInverseDepth(e.inverse_depth, e.variance);
    if (!UpdateHypothesis(&hyp, block, frame, xi, camera, options)) continue;
    e.inverse_depth = 1.0 / hyp.mu;
    e.variance = hyp.sigma2 / std::pow(hyp.mu, 4);
  }
}

}  // namespace

TrackingResult TrackSequence(const std::vector<IntensityImage>& frames, const CameraIntrinsics& camera,
                             const FeatureProvider& features, const TrackingOptions& options) {
  Require(frames.size() >= 2, ErrorKind::kInvalidArgument, "tracking needs at least two frames");
  Require(options.scale_reference > 0.0, ErrorKind::kInvalidArgument,
          "a positive scale reference (metres) is required for metric tracking");
  Require(options.keyframe_interval >= 1, ErrorKind::kInvalidArgument, "keyframe interval must be positive");

  TrackingResult result;
  result.poses.assign(frames.size(), PoseSE3::Identity());
  result.costs.assign(frames.size(), 0.0);
  result.keyframes.push_back(0);

  const auto first_features = features(0, frames[0]);
  if (static_cast<int>(first_features.size()) < options.alignment.min_entries) return result;
  SparseDepthMap map = InitializeDepthMap(frames[0], first_features, options.seed, options.init);
  if (Bootstrap(&map, frames, 0, options) == BootstrapOutcome::kNoMotion) return result;

  int keyframe = 0;
  PoseSE3 keyframe_pose;
  PoseSE3 relative;   // T_cur_kf of the previous frame
  PoseSE3 increment;  // T_cur_prev of the previous step
  for (size_t k = 1; k < frames.size(); ++k) {
    const PoseSE3 guess = increment * relative;
    AlignmentResult aligned;
    try {
      aligned = EstimateRelativePose(map, frames[k], camera, guess, options.alignment);
    } catch (const NonConvergenceError& e) {
      throw NonConvergenceError("frame " + std::to_string(k) + ": " + e.what(), e.best_pose());
    } catch (const Error& e) {
      throw Error(e.kind(), "frame " + std::to_string(k) + ": " + e.what());
    }
    increment = aligned.xi * relative.Inverse();
    relative = aligned.xi;
    result.poses[k] = keyframe_pose * aligned.xi.Inverse();
    result.costs[k] = aligned.final_cost;

    if (options.refine_map) RefineMap(&map, frames[k], aligned.xi, camera, options.depth_filter);

    if (static_cast<int>(k) - keyframe >= options.keyframe_interval && k + 1 < frames.size()) {
      SparseDepthMap next = Reseed(map, aligned.xi, frames[k], features(static_cast<int>(k), frames[k]), camera,
                                   options);
      if (static_cast<int>(next.entries.size()) >= options.alignment.min_entries) {
        map = std::move(next);
        keyframe = static_cast<int>(k);
        keyframe_pose = result.poses[k];
        relative = PoseSE3::Identity();
        result.keyframes.push_back(keyframe);
      }
    }
  }
  return result;
}

}  // namespace skyloc
