#pragma once

// Per-block depth measurement along epipolar lines, recursive Gaussian depth
// fusion and multiview propagation into a dense raster.

#include <skyloc/error.hpp>
#include <skyloc/geometry.hpp>
#include <skyloc/image.hpp>
#include <skyloc/maps.hpp>

#include <map>
#include <span>
#include <vector>

namespace skyloc {

struct DepthHypothesis {
  double mu = 1.0;      // depth mean, m
  double sigma2 = 1.0;  // depth variance, m^2
  int observation_count = 0;

  double sigma() const;
  static DepthHypothesis FromInverseDepth(double inverse_depth, double inverse_variance);
};

struct DepthObservation {
  double depth = 0.0;  // reference z-depth, m
  int frame = -1;
  Vec2 matched_pixel = Vec2::Zero();
  double ncc = 0.0;
};

enum class NccMode {
  kPrinted,   // sum(a*b) / sqrt(sum(a^2) * sum(b^2)); no mean removal
  kZeroMean,  // same after subtracting each block's mean
};

// Throws kInvalidArgument on mismatched sizes and kUndefinedCorrelation when
// either block has zero energy.
double NccScore(const PixelBlock& a, const PixelBlock& b, NccMode mode = NccMode::kPrinted);

struct DensifyOptions {
  int block_half_size = 1;
  int score_frames = 4;
  int plane_neighbors = 6;
};

struct DepthFilterOptions {
  NccMode ncc_mode = NccMode::kPrinted;
  double ncc_threshold = 0.85;
  double sample_step_px = 0.7;
  int block_half_size = 2;
  double min_ray_angle_deg = kDefaultMinRayAngleDeg;
  double min_depth = 1e-2;        // lower clamp of the search interval, m
  double sigma_floor = 1e-4;      // m
  double convergence_ratio = 0.02;
  int min_observations = 1;  // accepted observations required before a seed may converge
  // A correlation profile whose spread is below this is treated as flat.
  double min_profile_contrast = 1e-6;
  DensifyOptions densify;
};

// Searches the epipolar segment of `ref_block.center` over [mu-2s, mu+2s] for
// the block with maximal NCC. xi = T_cur_ref.
DepthObservation EpipolarSearch(const DepthHypothesis& hyp, const PixelBlock& ref_block,
                                const IntensityImage& cur_frame, const PoseSE3& xi,
                                const CameraIntrinsics& camera, const DepthFilterOptions& options = {});

struct MeasurementMoments {
  double mu = 0.0;     // m
  double sigma = 0.0;  // m, |perturbed - triangulated|; no floor applied
};

// Law-of-sines one-pixel depth sensitivity. `d_prev_norm` is the triangulated
// range from the reference camera, `translation` the reference-to-current
// camera displacement, `ray_ref` and `ray_cur` directions of d^{k-1} and a
// (only their directions are used).
MeasurementMoments ComputeMeasurementMoments(double d_prev_norm, const Vec3& translation, double focal,
                                             const Vec3& ray_ref, const Vec3& ray_cur,
                                             double min_sin_gamma = 1e-9);

// Gaussian conjugate update. Throws kInvalidArgument unless obs_sigma > 0.
DepthHypothesis Fuse(const DepthHypothesis& hyp, double obs_mu, double obs_sigma);

struct WindowFrame {
  IntensityImage image;
  PoseSE3 pose;  // T_wc
};

struct SeedState {
  Vec2 pixel = Vec2::Zero();
  DepthHypothesis hypothesis;
  bool converged = false;
};

struct SeedDepth {
  Vec2 pixel = Vec2::Zero();
  double depth = 0.0;
  double variance = 0.0;
};

struct DepthWindowResult {
  std::vector<SeedState> seeds;
  DenseDepthMap dense;
  int accepted_observations = 0;
  std::map<ErrorKind, int> rejected;  // per failure kind
  int ConvergedCount() const;
};

// Runs search + moments + fusion for every seed against frames[1..] with
// frames[0] as the reference, then densifies the converged seeds.
DepthWindowResult RunDepthWindow(std::span<const WindowFrame> frames, const SparseDepthMap& seeds,
                                 const CameraIntrinsics& camera, const DepthFilterOptions& options = {});

// Filter update of a single hypothesis against one frame; returns false when
// the observation was rejected (the kind is stored in *failure if given).
bool UpdateHypothesis(DepthHypothesis* hyp, const PixelBlock& ref_block, const IntensityImage& cur_frame,
                      const PoseSE3& xi, const CameraIntrinsics& camera, const DepthFilterOptions& options,
                      ErrorKind* failure = nullptr);

// Multiview PatchMatch-style propagation inside the convex hull of `seeds`.
// frames[0] is the reference view the seeds live in.
DenseDepthMap Densify(std::span<const SeedDepth> seeds, std::span<const WindowFrame> frames,
                      const CameraIntrinsics& camera, const DensifyOptions& options = {});

// Local affine fit of inverse depth over the nearest samples; falls back to
// inverse-distance weighting when the neighbourhood is degenerate.
double InterpolateInverseDepth(std::span<const Vec2> pixels, std::span<const double> inverse_depths,
                               const Vec2& query, int neighbors = 6);

// Forward-splats a depth raster into another view (z-buffered, nearest pixel).
// xi = T_target_source.
DenseDepthMap ReprojectDepthMap(const DenseDepthMap& source, const PoseSE3& xi,
                                const CameraIntrinsics& camera);

}  // namespace skyloc
