#pragma once

// Semi-direct front end: sparse inverse-depth map at feature locations and
// frame-to-keyframe pose estimation by robust photometric block alignment.

#include <skyloc/depth_filter.hpp>
#include <skyloc/error.hpp>
#include <skyloc/geometry.hpp>
#include <skyloc/image.hpp>
#include <skyloc/maps.hpp>

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

namespace skyloc {

struct FeaturePoint {
  Vec2 pixel = Vec2::Zero();
  std::vector<double> descriptor;
};

struct FeatureSelectionOptions {
  int cell_size = 16;            // one feature per grid cell
  int border = 8;                // px kept free at the image edge
  double min_gradient = 0.02;    // per-pixel gradient magnitude threshold
  int descriptor_half_size = 2;  // descriptor = normalized (2h+1)^2 patch
};

// Grid-bucketed maximum-gradient points; the descriptor is the zero-mean,
// unit-norm block around the point (all zeros on a flat block).
std::vector<FeaturePoint> SelectFeatures(const IntensityImage& image, const FeatureSelectionOptions& options = {});

// Text feature file: `frame_index x y d1 ... dN` per feature.
std::map<int, std::vector<FeaturePoint>> ReadFeatureFile(const std::string& path, int descriptor_length);
void WriteFeatureFile(const std::string& path, const std::map<int, std::vector<FeaturePoint>>& features);

struct MapInitOptions {
  double min_inverse_depth = 0.1;  // 1/m
  double max_inverse_depth = 2.0;  // 1/m
  double initial_variance = 4.0;   // 1/m^2
  int border = 3;                  // features closer to the edge are skipped
};

// Uniform random inverse depths with a large constant variance.
SparseDepthMap InitializeDepthMap(const IntensityImage& frame, const std::vector<FeaturePoint>& features,
                                  std::uint64_t seed, const MapInitOptions& options = {});

struct AlignmentOptions {
  int block_size = 4;  // photometric block is block_size x block_size
  double huber_delta = 0.1;
  double initial_damping = 1e-3;
  double damping_factor = 10.0;
  double max_damping = 1e10;
  int max_iterations = 50;
  double min_update_norm = 1e-8;
  double trust_variance = 1.0;  // entries above this inverse-depth variance are ignored
  int min_entries = 6;
  int pyramid_levels = 3;
};

struct AlignmentResult {
  PoseSE3 xi;  // T_cur_ref
  double initial_cost = 0.0;
  double final_cost = 0.0;
  int iterations = 0;
  int used_entries = 0;
};

class NonConvergenceError : public Error {
 public:
  NonConvergenceError(const std::string& message, const PoseSE3& best)
      : Error(ErrorKind::kNonConvergence, message), best_(best) {}
  const PoseSE3& best_pose() const { return best_; }

 private:
  PoseSE3 best_;
};

// Block-aggregated Huber photometric cost of a map against a frame at one
// pyramid level. Exposed so the Jacobian can be checked independently.
class PhotometricProblem {
 public:
  PhotometricProblem(const SparseDepthMap& map, const IntensityImage& reference, const IntensityImage& frame,
                     const CameraIntrinsics& camera, int level, const AlignmentOptions& options);

  int ResidualCount() const { return static_cast<int>(taps_.size()); }

  // Residuals I(w(x)) - I_M(x) per block tap; `visible[i]` is false for taps
  // of entries whose block leaves the frame (their residuals are zero).
  void Residuals(const PoseSE3& xi, Eigen::VectorXd* residuals, std::vector<bool>* visible,
                 Eigen::MatrixXd* jacobian = nullptr) const;

  // Sum of Huber norms over visible entries.
  double Cost(const PoseSE3& xi, int* visible_entries = nullptr) const;

  // Gauss-Newton system with IRLS Huber weights.
  double Linearize(const PoseSE3& xi, Eigen::Matrix<double, 6, 6>* h, Vec6* g, int* visible_entries) const;

 private:
  struct Tap {
    int entry;
    Vec3 point;  // reference camera-frame point, metres
    double reference_intensity;
  };
  std::vector<Tap> taps_;
  int entries_ = 0;
  int taps_per_entry_ = 0;
  const IntensityImage& frame_;
  CameraIntrinsics camera_;
  double margin_;
  double huber_delta_;
};

// Levenberg-Marquardt over the 6-dof relative pose, coarse to fine.
AlignmentResult EstimateRelativePose(const SparseDepthMap& map, const IntensityImage& new_frame,
                                     const CameraIntrinsics& camera, const PoseSE3& initial_guess,
                                     const AlignmentOptions& options = {});

using FeatureProvider = std::function<std::vector<FeaturePoint>(int frame, const IntensityImage& image)>;

struct TrackingOptions {
  AlignmentOptions alignment;
  MapInitOptions init;
  FeatureSelectionOptions features;
  DepthFilterOptions depth_filter;
  int keyframe_interval = 10;
  // Median scene depth at the first keyframe, metres; fixes monocular scale.
  double scale_reference = 0.0;
  double bootstrap_min_disparity = 8.0;  // px
  int bootstrap_search_radius = 6;       // px per frame step
  int bootstrap_max_frames = 15;
  double bootstrap_min_ncc = 0.9;
  bool refine_map = false;  // filter the map with each tracked frame
  std::uint64_t seed = 1;
};

struct TrackingResult {
  std::vector<PoseSE3> poses;  // world-from-camera, world = first camera
  std::vector<int> keyframes;
  std::vector<double> costs;
};

// Frame 0 is the identity; each later pose composes the keyframe pose with the
// inverse of the estimated relative pose.
TrackingResult TrackSequence(const std::vector<IntensityImage>& frames, const CameraIntrinsics& camera,
                             const FeatureProvider& features, const TrackingOptions& options);

// Provider backed by SelectFeatures.
FeatureProvider GradientFeatureProvider(FeatureSelectionOptions options = {});

}  // namespace skyloc
