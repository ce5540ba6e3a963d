#pragma once

// CLEAR-MOT / identity metrics and distance-bucketed localization error.

#include <skyloc/detection.hpp>
#include <skyloc/ground_plane.hpp>
#include <skyloc/maps.hpp>
#include <skyloc/tracker.hpp>

#include <Eigen/Core>

#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace skyloc {

// Minimum-cost assignment (Kuhn-Munkres) on a rows x cols matrix. Returns
// the column of every row, or -1 when rows > cols leaves it unassigned.
std::vector<int> SolveAssignment(const Eigen::MatrixXd& cost);

struct MotMetrics {
  double mota = 0.0;
  double idf1 = 0.0;
  int mostly_tracked = 0;
  int mostly_lost = 0;
  int false_positives = 0;
  int false_negatives = 0;
  int id_switches = 0;
  int truth_boxes = 0;
  int truth_tracks = 0;
  int matches = 0;
  int id_true_positives = 0;
};

// Detections' `id` fields identify tracks. Throws kUndefinedMetrics on empty
// ground truth.
MotMetrics ComputeMotMetrics(const std::vector<Detection>& hypotheses, const std::vector<Detection>& truth,
                             double iou_threshold = 0.5);

// Per-frame one-to-one matching of hypothesis to truth boxes at the IOU
// threshold; returns (frame, hypothesis id) -> truth id.
std::vector<std::tuple<int, int, int>> MatchIdentities(const std::vector<Detection>& hypotheses,
                                                       const std::vector<Detection>& truth,
                                                       double iou_threshold = 0.5);

struct BucketStats {
  std::string label;
  int count = 0;
  double mean = 0.0;  // m
  double stddev = 0.0;  // population standard deviation, m
};

struct LocalizationReport {
  std::vector<BucketStats> buckets;  // populated distance buckets, then "overall"
  const BucketStats* Find(const std::string& label) const;
};

// Errors between estimates and truth matched by (frame, track id), bucketed
// by the true distance from the camera with upper edges `edges`. Throws
// kEmptyReport when nothing matches.
LocalizationReport ComputeLocalizationReport(const std::vector<LocalizationRecord>& estimates,
                                             const std::vector<LocalizationRecord>& truth,
                                             const std::vector<double>& edges = {10.0, 25.0});

std::vector<std::string> BucketLabels(const std::vector<double>& edges);

// (e_flat - e_other) / e_flat.
inline double RelativeImprovement(double before, double after) { return (before - after) / before; }

struct AblationInput {
  CameraIntrinsics camera;
  std::vector<Detection> detections;  // raw detector output
  std::vector<Track> tracks;          // tracker output with smoothed boxes
  std::vector<Detection> truth_boxes;  // id = truth object id
  std::vector<LocalizationRecord> truth_positions;  // camera frame, track_id = truth object id
  std::function<DenseDepthMap(int frame)> depth;
  double flat_height = 1.0;
  std::optional<double> height_ref;
  PatchOptions patch;
  std::vector<double> bucket_edges{10.0, 25.0};
};

struct AblationResult {
  static constexpr int kModes = 3;
  static constexpr const char* kModeNames[kModes] = {"Det+Flat_Ground", "Det+Ground_Est", "Det+Trk+Ground_Est"};
  LocalizationReport reports[kModes];
  std::vector<LocalizationRecord> estimates[kModes];  // on the common (frame, id) set, truth ids
  int common_pairs = 0;
};

// Localizes the same (frame, object) pairs under a fixed level plane, a
// per-frame estimated plane from raw detections, and the estimated plane
// with tracked and smoothed boxes.
AblationResult RunAblation(const AblationInput& input);

void WriteMotTable(std::ostream& out, const MotMetrics& m);
void WriteLocalizationTable(std::ostream& out, const std::vector<std::string>& row_names,
                            const std::vector<LocalizationReport>& reports, const std::vector<std::string>& labels);
void WriteLocalizationCsv(std::ostream& out, const std::vector<std::string>& row_names,
                          const std::vector<LocalizationReport>& reports);

}  // namespace skyloc
