#pragma once

// Tracklet-graph multi-object tracking: frame-to-frame tracklets under camera
// motion compensation, pairwise connectivity, greedy graph clustering and
// moving-average smoothing of unreliable boxes.

#include <skyloc/detection.hpp>
#include <skyloc/geometry.hpp>
#include <skyloc/ground_plane.hpp>

#include <memory>
#include <vector>

namespace skyloc {

struct Tracklet {
  int id = 0;
  std::vector<Detection> detections;  // contiguous frames

  int StartFrame() const { return detections.front().frame; }
  int EndFrame() const { return detections.back().frame; }
};

// Per-frame image motion: motion[t] maps frame t pixels into frame t+1.
// Frames beyond the vector use the identity.
using FrameMotion = std::vector<Mat3>;

// H = K (R + t n^T / h) K^-1 for xi = T_next_cur and the plane in the current
// camera frame.
Mat3 PlaneHomography(const CameraIntrinsics& camera, const PoseSE3& xi, const GroundPlane& plane);

// Ground-plane homographies between consecutive camera poses (T_wc). The
// plane is given in camera coordinates and assumed fixed relative to the camera.
FrameMotion MotionFromPoses(const std::vector<PoseSE3>& poses, const CameraIntrinsics& camera,
                            const GroundPlane& plane);

// Pure image translation, used when only the mean feature shift is known.
Mat3 ShiftHomography(const Vec2& shift);

struct TrackletOptions {
  double iou_threshold = 0.3;
  double min_similarity = 0.5;  // embedding cosine gate, when both have embeddings
};

std::vector<Tracklet> GenerateTracklets(const std::vector<Detection>& detections, const FrameMotion& motion,
                                        const TrackletOptions& options = {});

struct ConnectivityOptions {
  double w_appearance = 0.5;
  double w_motion = 0.4;
  double w_gap = 0.1;
  int window = 64;          // frames
  int velocity_frames = 5;  // tail length used for constant-velocity fits
};

// Likelihood in [0, 1] that two temporally disjoint tracklets are one object.
class ConnectivityScorer {
 public:
  virtual ~ConnectivityScorer() = default;
  virtual double Score(const Tracklet& a, const Tracklet& b) const = 0;
};

// w_app * max(0, cos(mean embeddings)) + w_mot * motion kernel
// + w_gap * (1 - gap / window). Without embeddings the appearance weight is
// spread over the other two terms. Throws kInvalidPair when the tracklets
// overlap in time; returns 0 when the gap exceeds the window.
class DefaultConnectivity : public ConnectivityScorer {
 public:
  explicit DefaultConnectivity(ConnectivityOptions options = {});
  double Score(const Tracklet& a, const Tracklet& b) const override;
  const ConnectivityOptions& options() const { return options_; }

 private:
  ConnectivityOptions options_;
};

struct GraphEdge {
  int a = 0;  // tracklet index, ends first
  int b = 0;
  double likelihood = 0.0;
};

struct TrackGraph {
  std::vector<Tracklet> vertices;
  std::vector<GraphEdge> edges;
};

// Scores every temporally disjoint pair whose gap is within `window`.
TrackGraph BuildTrackGraph(std::vector<Tracklet> tracklets, const ConnectivityScorer& scorer, int window);

// Sum of -log(l) over edges inside a cluster plus -log(1 - l) over edges
// between clusters, with l clamped away from 0 and 1.
double ClusteringCost(const TrackGraph& graph, const std::vector<int>& cluster_of);

struct Track {
  int id = 0;
  std::vector<Detection> boxes;  // one per frame, increasing
  std::vector<bool> interpolated;
  std::vector<bool> smoothed;
};

struct ClusterOptions {
  double merge_threshold = 0.5;
};

// Greedy agglomerative clustering. `cost_trace`, if given, receives the total
// cost before the first and after every accepted merge.
std::vector<Track> ClusterGraph(const TrackGraph& graph, const ClusterOptions& options = {},
                                std::vector<double>* cost_trace = nullptr);

// Recursive unweighted moving average s_t = s_{t-1} + (x_t - x_{t-k}) / k on
// the four corner coordinates, applied to boxes scoring below `score_thresh`.
// Returns the number of low-score boxes passed through for lack of history.
int SmoothBoxes(Track* track, double score_thresh, int k);

struct TrackerConfig {
  TrackletOptions tracklets;
  ConnectivityOptions connectivity;
  ClusterOptions cluster;
  double score_threshold = 0.2;
  int smooth_k = 5;
};

struct TrackerOutput {
  std::vector<Track> tracks;
  int tracklet_count = 0;
  int smoothing_warnings = 0;
};

// generate -> score -> cluster -> smooth. `scorer` defaults to
// DefaultConnectivity over config.connectivity.
TrackerOutput TrackPipeline(const std::vector<Detection>& detections, const FrameMotion& motion,
                            const TrackerConfig& config, const ConnectivityScorer* scorer = nullptr);

// Tracks as detections with id = track id, ordered by frame then id.
std::vector<Detection> FlattenTracks(const std::vector<Track>& tracks);

}  // namespace skyloc
