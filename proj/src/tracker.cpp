#include <skyloc/tracker.hpp>

#include <skyloc/error.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <tuple>

namespace skyloc {

Mat3 PlaneHomography(const CameraIntrinsics& camera, const PoseSE3& xi, const GroundPlane& plane) {
  const Mat3 h = camera.Matrix() * (xi.rotation() + xi.translation() * plane.n.transpose() / plane.h_cam) *
                 camera.InverseMatrix();
  return h / h(2, 2);
}

FrameMotion MotionFromPoses(const std::vector<PoseSE3>& poses, const CameraIntrinsics& camera,
                            const GroundPlane& plane) {
  FrameMotion motion;
  for (size_t k = 0; k + 1 < poses.size(); ++k) {
    motion.push_back(PlaneHomography(camera, poses[k + 1].Inverse() * poses[k], plane));
  }
  return motion;
}

Mat3 ShiftHomography(const Vec2& shift) {
  Mat3 h = Mat3::Identity();
  h(0, 2) = shift.x();
  h(1, 2) = shift.y();
  return h;
}

namespace {

// Cosine similarity, or nullopt-like NaN when either side lacks an embedding.
double Cosine(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.empty() || a.size() != b.size()) return std::nan("");
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa <= 0.0 || bb <= 0.0) return std::nan("");
  return ab / std::sqrt(aa * bb);
}

std::vector<double> MeanEmbedding(const Tracklet& t) {
  std::vector<double> mean;
  int count = 0;
  for (const auto& d : t.detections) {
    if (d.embedding.empty()) continue;
    if (mean.empty()) mean.assign(d.embedding.size(), 0.0);
    if (d.embedding.size() != mean.size()) continue;
    // Unit-normalize first so every frame counts equally.
    double norm = 0.0;
    for (double v : d.embedding) norm += v * v;
    norm = std::sqrt(norm);
    if (norm <= 0.0) continue;
    for (size_t i = 0; i < mean.size(); ++i) mean[i] += d.embedding[i] / norm;
    ++count;
  }
  if (count == 0) mean.clear();
  return mean;
}

const Mat3& MotionAt(const FrameMotion& motion, int frame) {
  static const Mat3 identity = Mat3::Identity();
  return frame >= 0 && frame < static_cast<int>(motion.size()) ? motion[static_cast<size_t>(frame)] : identity;
}

}  // namespace

std::vector<Tracklet> GenerateTracklets(const std::vector<Detection>& detections, const FrameMotion& motion,
                                        const TrackletOptions& options) {
  Require(options.iou_threshold > 0.0 && options.iou_threshold < 1.0, ErrorKind::kInvalidArgument,
          "IOU threshold must lie in (0, 1)");
  std::map<int, std::vector<const Detection*>> by_frame;
  for (const auto& d : detections) by_frame[d.frame].push_back(&d);

  std::vector<Tracklet> tracklets;
  std::vector<int> active;  // tracklet indices ending at the previous frame
  int previous_frame = -2;
  for (const auto& [frame, dets] : by_frame) {
    std::vector<int> next_active;
    std::vector<bool> used(dets.size(), false);
    if (frame == previous_frame + 1 && !active.empty()) {
      const Mat3& h = MotionAt(motion, previous_frame);
      struct Candidate {
        double similarity, iou;
        int tracklet, det;
      };
      std::vector<Candidate> candidates;
      for (int ti : active) {
        const Detection& last = tracklets[static_cast<size_t>(ti)].detections.back();
        const Box predicted = WarpBox(last.box, h);
        for (size_t j = 0; j < dets.size(); ++j) {
          if (dets[j]->label != last.label) continue;
          const double iou = Iou(predicted, dets[j]->box);
          if (iou <= options.iou_threshold) continue;
          double similarity = Cosine(last.embedding, dets[j]->embedding);
          if (std::isnan(similarity)) {
            similarity = 0.0;
          } else if (similarity <= options.min_similarity) {
            continue;
          }
          candidates.push_back({similarity, iou, ti, static_cast<int>(j)});
        }
      }
      std::sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
        return std::tie(b.similarity, b.iou, a.tracklet, a.det) < std::tie(a.similarity, a.iou, b.tracklet, b.det);
      });
      std::vector<bool> extended(tracklets.size(), false);
      for (const auto& c : candidates) {
        if (extended[static_cast<size_t>(c.tracklet)] || used[static_cast<size_t>(c.det)]) continue;
        extended[static_cast<size_t>(c.tracklet)] = true;
        used[static_cast<size_t>(c.det)] = true;
        tracklets[static_cast<size_t>(c.tracklet)].detections.push_back(*dets[static_cast<size_t>(c.det)]);
        next_active.push_back(c.tracklet);
      }
      std::sort(next_active.begin(), next_active.end());
    }
    for (size_t j = 0; j < dets.size(); ++j) {
      if (used[j]) continue;
      Tracklet t;
      t.id = static_cast<int>(tracklets.size());
      t.detections.push_back(*dets[j]);
      next_active.push_back(t.id);
      tracklets.push_back(std::move(t));
    }
    active = std::move(next_active);
    previous_frame = frame;
  }
  return tracklets;
}

DefaultConnectivity::DefaultConnectivity(ConnectivityOptions options) : options_(options) {
  const double sum = options_.w_appearance + options_.w_motion + options_.w_gap;
  Require(options_.w_appearance >= 0.0 && options_.w_motion >= 0.0 && options_.w_gap >= 0.0 &&
              std::abs(sum - 1.0) < 1e-9,
          ErrorKind::kInvalidArgument, "connectivity weights must be non-negative and sum to 1");
  Require(options_.window >= 1 && options_.velocity_frames >= 1, ErrorKind::kInvalidArgument,
          "connectivity window must be positive");
}

namespace {

// Center velocity in px/frame over the `frames` boxes at one end.
Vec2 EndVelocity(const Tracklet& t, int frames, bool tail) {
  const int n = static_cast<int>(t.detections.size());
  const int m = std::min(frames, n - 1);
  if (m <= 0) return Vec2::Zero();
  const Detection& a = tail ? t.detections[static_cast<size_t>(n - 1 - m)] : t.detections.front();
  const Detection& b = tail ? t.detections.back() : t.detections[static_cast<size_t>(m)];
  return (b.box.Center() - a.box.Center()) / static_cast<double>(b.frame - a.frame);
}

double MotionKernel(const Detection& from, const Vec2& velocity, const Detection& to) {
  const Vec2 predicted = from.box.Center() + velocity * static_cast<double>(to.frame - from.frame);
  const double size = std::sqrt(0.5 * (from.box.Area() + to.box.Area()));
  return std::exp(-(predicted - to.box.Center()).norm() / size);
}

}  // namespace

double DefaultConnectivity::Score(const Tracklet& a, const Tracklet& b) const {
  Require(!a.detections.empty() && !b.detections.empty(), ErrorKind::kInvalidArgument, "empty tracklet");
  Require(a.EndFrame() < b.StartFrame(), ErrorKind::kInvalidPair, "tracklets overlap in time");
  const int gap = b.StartFrame() - a.EndFrame();
  if (gap > options_.window) return 0.0;

  const double motion =
      0.5 * (MotionKernel(a.detections.back(), EndVelocity(a, options_.velocity_frames, true), b.detections.front()) +
             MotionKernel(b.detections.front(), EndVelocity(b, options_.velocity_frames, false),
                          a.detections.back()));
  const double gap_term = 1.0 - static_cast<double>(gap) / options_.window;
  const double cosine = Cosine(MeanEmbedding(a), MeanEmbedding(b));
  if (std::isnan(cosine)) {
    const double w = options_.w_motion + options_.w_gap;
    return w > 0.0 ? (options_.w_motion * motion + options_.w_gap * gap_term) / w : 0.0;
  }
  const double value =
      options_.w_appearance * std::max(0.0, cosine) + options_.w_motion * motion + options_.w_gap * gap_term;
  return std::clamp(value, 0.0, 1.0);
}

TrackGraph BuildTrackGraph(std::vector<Tracklet> tracklets, const ConnectivityScorer& scorer, int window) {
  TrackGraph graph;
  graph.vertices = std::move(tracklets);
  const int n = static_cast<int>(graph.vertices.size());
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const Tracklet& a = graph.vertices[static_cast<size_t>(i)];
      const Tracklet& b = graph.vertices[static_cast<size_t>(j)];
      if (a.EndFrame() >= b.StartFrame() || b.StartFrame() - a.EndFrame() > window) continue;
      const double likelihood = scorer.Score(a, b);
      Require(likelihood >= 0.0 && likelihood <= 1.0, ErrorKind::kInvalidArgument,
              "connectivity scorer returned a value outside [0, 1]");
      graph.edges.push_back({i, j, likelihood});
    }
  }
  return graph;
}

namespace {

constexpr double kMinLikelihood = 1e-6;

double Clamped(double l) { return std::clamp(l, kMinLikelihood, 1.0 - kMinLikelihood); }

}  // namespace

double ClusteringCost(const TrackGraph& graph, const std::vector<int>& cluster_of) {
  double cost = 0.0;
  for (const auto& e : graph.edges) {
    const double l = Clamped(e.likelihood);
    cost += cluster_of[static_cast<size_t>(e.a)] == cluster_of[static_cast<size_t>(e.b)] ? -std::log(l)
                                                                                         : -std::log(1.0 - l);
  }
  return cost;
}

std::vector<Track> ClusterGraph(const TrackGraph& graph, const ClusterOptions& options,
                                std::vector<double>* cost_trace) {
  const int n = static_cast<int>(graph.vertices.size());
  std::vector<int> cluster_of(static_cast<size_t>(n));
  std::iota(cluster_of.begin(), cluster_of.end(), 0);
  std::vector<std::vector<int>> members(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) members[static_cast<size_t>(i)] = {i};

  std::vector<GraphEdge> edges = graph.edges;
  std::stable_sort(edges.begin(), edges.end(), [](const GraphEdge& x, const GraphEdge& y) {
    return x.likelihood != y.likelihood ? x.likelihood > y.likelihood
                                        : std::tie(x.a, x.b) < std::tie(y.a, y.b);
  });

  auto overlaps = [&](int ca, int cb) {
    for (int i : members[static_cast<size_t>(ca)]) {
      for (int j : members[static_cast<size_t>(cb)]) {
        const Tracklet& x = graph.vertices[static_cast<size_t>(i)];
        const Tracklet& y = graph.vertices[static_cast<size_t>(j)];
        if (x.StartFrame() <= y.EndFrame() && y.StartFrame() <= x.EndFrame()) return true;
      }
    }
    return false;
  };
  auto merge_delta = [&](int ca, int cb) {
    double delta = 0.0;
    for (const auto& e : graph.edges) {
      const int x = cluster_of[static_cast<size_t>(e.a)], y = cluster_of[static_cast<size_t>(e.b)];
      if ((x == ca && y == cb) || (x == cb && y == ca)) {
        const double l = Clamped(e.likelihood);
        delta += -std::log(l) + std::log(1.0 - l);
      }
    }
    return delta;
  };

  double cost = ClusteringCost(graph, cluster_of);
  if (cost_trace != nullptr) cost_trace->assign(1, cost);
  bool changed = true;
  while (changed) {
    changed = false;
    for (const auto& e : edges) {
      if (e.likelihood <= options.merge_threshold) break;
      const int ca = cluster_of[static_cast<size_t>(e.a)], cb = cluster_of[static_cast<size_t>(e.b)];
      if (ca == cb || overlaps(ca, cb)) continue;
      const double delta = merge_delta(ca, cb);
      if (delta > 0.0) continue;
      const int keep = std::min(ca, cb), drop = std::max(ca, cb);
      for (int m : members[static_cast<size_t>(drop)]) {
        cluster_of[static_cast<size_t>(m)] = keep;
        members[static_cast<size_t>(keep)].push_back(m);
      }
      members[static_cast<size_t>(drop)].clear();
      cost += delta;
      if (cost_trace != nullptr) cost_trace->push_back(ClusteringCost(graph, cluster_of));
      changed = true;
    }
  }

  struct Pending {
    int first_frame;
    int first_member;
    std::vector<int> members;
  };
  std::vector<Pending> clusters;
  for (auto& m : members) {
    if (m.empty()) continue;
    std::sort(m.begin(), m.end(), [&](int x, int y) {
      return graph.vertices[static_cast<size_t>(x)].StartFrame() < graph.vertices[static_cast<size_t>(y)].StartFrame();
    });
    clusters.push_back({graph.vertices[static_cast<size_t>(m.front())].StartFrame(),
                        *std::min_element(m.begin(), m.end()), m});
  }
  std::sort(clusters.begin(), clusters.end(), [](const Pending& x, const Pending& y) {
    return std::tie(x.first_frame, x.first_member) < std::tie(y.first_frame, y.first_member);
  });

  std::vector<Track> tracks;
  for (const auto& c : clusters) {
    Track track;
    track.id = static_cast<int>(tracks.size()) + 1;
    for (int m : c.members) {
      const Tracklet& t = graph.vertices[static_cast<size_t>(m)];
      if (!track.boxes.empty()) {
        const Detection from = track.boxes.back();
        const Detection& to = t.detections.front();
        for (int f = from.frame + 1; f < to.frame; ++f) {
          const double s = static_cast<double>(f - from.frame) / (to.frame - from.frame);
          Detection d;
          d.frame = f;
          d.label = from.label;
          d.box = {from.box.x + s * (to.box.x - from.box.x), from.box.y + s * (to.box.y - from.box.y),
                   from.box.w + s * (to.box.w - from.box.w), from.box.h + s * (to.box.h - from.box.h)};
          d.score = from.score + s * (to.score - from.score);
          track.boxes.push_back(d);
          track.interpolated.push_back(true);
        }
      }
      for (const auto& d : t.detections) {
        track.boxes.push_back(d);
        track.interpolated.push_back(false);
      }
    }
    for (auto& d : track.boxes) d.id = track.id;
    track.smoothed.assign(track.boxes.size(), false);
    tracks.push_back(std::move(track));
  }
  return tracks;
}

int SmoothBoxes(Track* track, double score_thresh, int k) {
  Require(k >= 1, ErrorKind::kInvalidArgument, "smoothing window must be at least one frame");
  const size_t n = track->boxes.size();
  track->smoothed.assign(n, false);
  auto corners = [](const Box& b) { return Eigen::Vector4d(b.x, b.y, b.x + b.w, b.y + b.h); };
  std::vector<Eigen::Vector4d> raw(n);
  for (size_t i = 0; i < n; ++i) raw[i] = corners(track->boxes[i].box);

  int warnings = 0;
  Eigen::Vector4d s = Eigen::Vector4d::Zero();
  bool have_s = false;
  for (size_t i = 0; i < n; ++i) {
    const bool low = !track->interpolated[i] && track->boxes[i].score < score_thresh;
    if (i < static_cast<size_t>(k)) {
      if (low) ++warnings;
      continue;
    }
    if (!have_s) {
      // s_{i-1}: mean of the k raw boxes ending at i-1.
      s.setZero();
      for (size_t j = i - k; j < i; ++j) s += raw[j];
      s /= k;
      have_s = true;
    }
    s += (raw[i] - raw[i - k]) / k;
    if (!low) continue;
    track->boxes[i].box = {s(0), s(1), s(2) - s(0), s(3) - s(1)};
    track->smoothed[i] = true;
  }
  return warnings;
}

TrackerOutput TrackPipeline(const std::vector<Detection>& detections, const FrameMotion& motion,
                            const TrackerConfig& config, const ConnectivityScorer* scorer) {
  TrackerOutput out;
  auto tracklets = GenerateTracklets(detections, motion, config.tracklets);
  out.tracklet_count = static_cast<int>(tracklets.size());
  const DefaultConnectivity fallback(config.connectivity);
  const TrackGraph graph =
      BuildTrackGraph(std::move(tracklets), scorer != nullptr ? *scorer : fallback, config.connectivity.window);
  out.tracks = ClusterGraph(graph, config.cluster);
  for (auto& t : out.tracks) out.smoothing_warnings += SmoothBoxes(&t, config.score_threshold, config.smooth_k);
  return out;
}

std::vector<Detection> FlattenTracks(const std::vector<Track>& tracks) {
  std::vector<Detection> out;
  for (const auto& t : tracks) out.insert(out.end(), t.boxes.begin(), t.boxes.end());
  SortByFrame(&out);
  return out;
}

}  // namespace skyloc
