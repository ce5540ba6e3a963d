#include <skyloc/evaluation.hpp>
#include <skyloc/synthetic_scene.hpp>
#include <skyloc/tracker.hpp>

#include "test_support.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <set>

using namespace skyloc;
using skyloc::testing::KindOf;

namespace {

Detection Det(int frame, double x, double y, std::vector<double> embedding = {}, double score = 1.0) {
  Detection d;
  d.frame = frame;
  d.box = {x, y, 40.0, 80.0};
  d.score = score;
  d.embedding = std::move(embedding);
  return d;
}

std::vector<double> Axis(int i, int dim = 8) {
  std::vector<double> e(static_cast<size_t>(dim), 0.0);
  e[static_cast<size_t>(i)] = 1.0;
  return e;
}

Tracklet Segment(int first, int last, double x0, double vx, std::vector<double> embedding = {}) {
  Tracklet t;
  for (int f = first; f <= last; ++f) t.detections.push_back(Det(f, x0 + vx * (f - first), 200.0, embedding));
  return t;
}

class ConstantScorer : public ConnectivityScorer {
 public:
  explicit ConstantScorer(double value) : value_(value) {}
  double Score(const Tracklet&, const Tracklet&) const override { return value_; }

 private:
  double value_;
};

SceneSpec TrackingScene() {
  SceneSpec spec;
  spec.width = 640;
  spec.height = 480;
  spec.object_size = Vec3(0.6, 1.8, 0.4);
  return spec;
}

}  // namespace

TEST(Tracklets, SlowObjectFormsOneTracklet) {
  std::vector<Detection> dets;
  for (int f = 0; f < 50; ++f) dets.push_back(Det(f, 100.0 + 2.0 * f, 200.0));
  const auto tracklets = GenerateTracklets(dets, {});
  ASSERT_EQ(tracklets.size(), 1u);
  EXPECT_EQ(tracklets[0].detections.size(), 50u);
}

TEST(Tracklets, PanFragmentsWithoutCompensation) {
  std::vector<Detection> dets;
  for (int f = 0; f < 10; ++f) dets.push_back(Det(f, 500.0 - 40.0 * f, 200.0));
  EXPECT_EQ(GenerateTracklets(dets, {}).size(), 10u);
  const FrameMotion pan(10, ShiftHomography(Vec2(-40.0, 0.0)));
  const auto compensated = GenerateTracklets(dets, pan);
  ASSERT_EQ(compensated.size(), 1u);
  EXPECT_EQ(compensated[0].detections.size(), 10u);
}

TEST(Tracklets, CrossingObjectsKeepIdentity) {
  std::vector<Detection> dets;
  for (int f = 0; f < 40; ++f) {
    Detection a = Det(f, 100.0 + 5.0 * f, 200.0, Axis(0));
    Detection b = Det(f, 300.0 - 5.0 * f, 200.0, Axis(1));
    a.id = 1;
    b.id = 2;
    dets.push_back(a);
    dets.push_back(b);
  }
  const auto tracklets = GenerateTracklets(dets, {});
  ASSERT_EQ(tracklets.size(), 2u);
  for (const auto& t : tracklets) {
    EXPECT_EQ(t.detections.size(), 40u);
    for (const auto& d : t.detections) EXPECT_EQ(d.id, t.detections.front().id);
  }
}

TEST(Tracklets, ContiguousAndDisjoint) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> pos(0.0, 600.0);
  std::bernoulli_distribution keep(0.8);
  std::vector<Detection> dets;
  int next = 0;
  for (int f = 0; f < 60; ++f) {
    for (int k = 0; k < 6; ++k) {
      if (!keep(rng)) continue;
      Detection d = Det(f, pos(rng), pos(rng) * 0.5);
      d.id = next++;
      dets.push_back(d);
    }
  }
  const auto tracklets = GenerateTracklets(dets, {});
  std::set<int> seen;
  size_t total = 0;
  for (const auto& t : tracklets) {
    for (size_t i = 1; i < t.detections.size(); ++i) {
      EXPECT_EQ(t.detections[i].frame, t.detections[i - 1].frame + 1);
    }
    for (const auto& d : t.detections) EXPECT_TRUE(seen.insert(d.id).second);
    total += t.detections.size();
  }
  EXPECT_EQ(total, dets.size());
}

TEST(Connectivity, SplitContinuationScoresHigh) {
  const DefaultConnectivity scorer;
  const Tracklet a = Segment(0, 19, 100.0, 2.0, Axis(0));
  const Tracklet b = Segment(25, 44, 150.0, 2.0, Axis(0));
  EXPECT_GT(scorer.Score(a, b), 0.8);
}

TEST(Connectivity, DistantOpposedObjectsScoreLow) {
  const DefaultConnectivity scorer;
  const Tracklet a = Segment(0, 19, 157.0, -3.0, Axis(0));
  const Tracklet b = Segment(60, 79, 500.0, 3.0, Axis(1));
  const double s = scorer.Score(a, b);
  EXPECT_LT(s, 0.2);
  EXPECT_GE(s, 0.0);
}

TEST(Connectivity, OverlapIsInvalidPair) {
  const DefaultConnectivity scorer;
  const Tracklet a = Segment(0, 19, 100.0, 2.0);
  const Tracklet b = Segment(19, 30, 140.0, 2.0);
  EXPECT_EQ(KindOf([&] { scorer.Score(a, b); }), ErrorKind::kInvalidPair);
  EXPECT_EQ(KindOf([&] { scorer.Score(b, a); }), ErrorKind::kInvalidPair);
}

TEST(Connectivity, GapBeyondWindowScoresZero) {
  const DefaultConnectivity scorer;
  EXPECT_EQ(scorer.Score(Segment(0, 9, 100.0, 0.0), Segment(80, 90, 100.0, 0.0)), 0.0);
}

TEST(Connectivity, InvariantToEmbeddingScale) {
  const DefaultConnectivity scorer;
  std::mt19937_64 rng(9);
  std::normal_distribution<double> g;
  std::vector<double> ea(8), eb(8);
  for (auto& v : ea) v = g(rng);
  for (auto& v : eb) v = g(rng);
  const Tracklet a = Segment(0, 19, 100.0, 2.0, ea);
  const Tracklet b = Segment(30, 44, 170.0, 2.0, eb);
  const double base = scorer.Score(a, b);
  for (double scale : {4.0, 0.5}) {
    Tracklet sa = a, sb = b;
    for (auto& d : sa.detections) for (auto& v : d.embedding) v *= scale;
    for (auto& d : sb.detections) for (auto& v : d.embedding) v *= scale;
    EXPECT_EQ(scorer.Score(sa, sb), base) << scale;
  }
}

TEST(Connectivity, RejectsBadWeights) {
  ConnectivityOptions o;
  o.w_gap = 0.5;
  EXPECT_EQ(KindOf([&] { DefaultConnectivity s(o); }), ErrorKind::kInvalidArgument);
}

TEST(Clustering, ConstantHighScoreJoinsAcrossGap) {
  const ConstantScorer scorer(0.9);
  const TrackGraph graph = BuildTrackGraph({Segment(0, 9, 100.0, 1.0), Segment(15, 24, 115.0, 1.0)}, scorer, 64);
  ASSERT_EQ(graph.edges.size(), 1u);
  const auto tracks = ClusterGraph(graph);
  ASSERT_EQ(tracks.size(), 1u);
  const Track& t = tracks[0];
  ASSERT_EQ(t.boxes.size(), 25u);
  for (int f = 0; f < 25; ++f) {
    EXPECT_EQ(t.boxes[static_cast<size_t>(f)].frame, f);
    EXPECT_EQ(t.interpolated[static_cast<size_t>(f)], f >= 10 && f < 15);
    EXPECT_NEAR(t.boxes[static_cast<size_t>(f)].box.x, 100.0 + f, 1e-9);
    EXPECT_EQ(t.boxes[static_cast<size_t>(f)].id, 1);
  }
}

TEST(Clustering, ZeroGraphKeepsTracklets) {
  const ConstantScorer scorer(0.0);
  std::vector<Tracklet> tracklets{Segment(0, 9, 100.0, 1.0), Segment(15, 24, 115.0, 1.0), Segment(30, 34, 0.0, 0.0)};
  const TrackGraph graph = BuildTrackGraph(tracklets, scorer, 64);
  const auto tracks = ClusterGraph(graph);
  ASSERT_EQ(tracks.size(), tracklets.size());
  for (size_t i = 0; i < tracks.size(); ++i) {
    ASSERT_EQ(tracks[i].boxes.size(), tracklets[i].detections.size());
    for (size_t j = 0; j < tracks[i].boxes.size(); ++j) {
      EXPECT_EQ(tracks[i].boxes[j].box, tracklets[i].detections[j].box);
      EXPECT_FALSE(tracks[i].interpolated[j]);
    }
  }
}

TEST(Clustering, EmptyGraph) {
  EXPECT_TRUE(ClusterGraph(TrackGraph{}).empty());
}

namespace {

// Fragmented tracklets of several objects with independent random gaps.
std::vector<Tracklet> RandomFragments(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> len(3, 15), gap(1, 12);
  std::uniform_real_distribution<double> jitter(-2.0, 2.0);
  std::vector<Tracklet> out;
  for (int obj = 0; obj < 4; ++obj) {
    int f = gap(rng) - 1;
    while (f < 120) {
      const int n = len(rng);
      Tracklet t;
      for (int k = 0; k < n; ++k, ++f) {
        std::vector<double> e = Axis(obj);
        e[static_cast<size_t>((obj + 1) % 8)] = 0.2 * jitter(rng);
        t.detections.push_back(Det(f, 60.0 + 120.0 * obj + 0.5 * f + jitter(rng), 200.0, e));
      }
      out.push_back(std::move(t));
      f += gap(rng);
    }
  }
  return out;
}

}  // namespace

TEST(Clustering, CostTraceNonIncreasingAndFixedPoint) {
  const DefaultConnectivity scorer;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const TrackGraph graph = BuildTrackGraph(RandomFragments(seed), scorer, 64);
    std::vector<double> trace;
    const ClusterOptions options;
    const auto tracks = ClusterGraph(graph, options, &trace);
    ASSERT_FALSE(trace.empty());
    for (size_t i = 1; i < trace.size(); ++i) EXPECT_LE(trace[i], trace[i - 1] + 1e-9) << seed;
    EXPECT_LT(tracks.size(), graph.vertices.size());

    // Recover the partition from the tracks and check that no admissible merge
    // remains: every non-overlapping cluster pair joined by an edge above the
    // threshold would raise the cost.
    std::vector<int> cluster_of(graph.vertices.size(), -1);
    for (size_t v = 0; v < graph.vertices.size(); ++v) {
      const Detection& first = graph.vertices[v].detections.front();
      for (size_t t = 0; t < tracks.size(); ++t) {
        for (size_t j = 0; j < tracks[t].boxes.size(); ++j) {
          if (!tracks[t].interpolated[j] && tracks[t].boxes[j].frame == first.frame &&
              tracks[t].boxes[j].box == first.box) {
            cluster_of[v] = static_cast<int>(t);
          }
        }
      }
      ASSERT_GE(cluster_of[v], 0);
    }
    EXPECT_NEAR(ClusteringCost(graph, cluster_of), trace.back(), 1e-9);
    const int c = static_cast<int>(tracks.size());
    for (int x = 0; x < c; ++x) {
      for (int y = x + 1; y < c; ++y) {
        const auto& tx = tracks[static_cast<size_t>(x)].boxes;
        const auto& ty = tracks[static_cast<size_t>(y)].boxes;
        if (tx.front().frame <= ty.back().frame && ty.front().frame <= tx.back().frame) continue;
        bool strong = false;
        double delta = 0.0;
        for (const auto& e : graph.edges) {
          const int ca = cluster_of[static_cast<size_t>(e.a)], cb = cluster_of[static_cast<size_t>(e.b)];
          if ((ca == x && cb == y) || (ca == y && cb == x)) {
            const double l = std::clamp(e.likelihood, 1e-6, 1.0 - 1e-6);
            delta += -std::log(l) + std::log(1.0 - l);
            strong = strong || e.likelihood > options.merge_threshold;
          }
        }
        if (strong) EXPECT_GT(delta, 0.0) << seed << " " << x << " " << y;
      }
    }
  }
}

TEST(Smoothing, WindowedMeanExample) {
  Track t;
  for (int f = 0; f < 4; ++f) {
    const double x[] = {0.0, 2.0, 4.0, 100.0};
    Detection d = Det(f, x[f], 0.0);
    d.score = f == 3 ? 0.05 : 0.9;
    t.boxes.push_back(d);
  }
  t.interpolated.assign(4, false);
  EXPECT_EQ(SmoothBoxes(&t, 0.2, 2), 0);
  EXPECT_DOUBLE_EQ(t.boxes[3].box.x, 52.0);
  EXPECT_TRUE(t.smoothed[3]);
  EXPECT_FALSE(t.smoothed[2]);
  EXPECT_EQ(t.boxes[2].box.x, 4.0);
}

TEST(Smoothing, MatchesWindowedMeanOracle) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int k : {1, 3, 5}) {
    Track t;
    for (int f = 0; f < 60; ++f) {
      Detection d;
      d.frame = f;
      d.box = {100.0 * u(rng), 100.0 * u(rng), 20.0 + 10.0 * u(rng), 40.0 + 10.0 * u(rng)};
      d.score = u(rng);
      t.boxes.push_back(d);
    }
    t.interpolated.assign(60, false);
    t.interpolated[7] = true;
    const Track raw = t;
    int expected_warnings = 0;
    for (int i = 0; i < k; ++i) expected_warnings += !raw.interpolated[static_cast<size_t>(i)] && raw.boxes[static_cast<size_t>(i)].score < 0.4;
    EXPECT_EQ(SmoothBoxes(&t, 0.4, k), expected_warnings);
    for (int i = 0; i < 60; ++i) {
      const auto& orig = raw.boxes[static_cast<size_t>(i)];
      const bool low = !raw.interpolated[static_cast<size_t>(i)] && orig.score < 0.4;
      const auto& out = t.boxes[static_cast<size_t>(i)].box;
      if (!low || i < k) {
        EXPECT_EQ(out, orig.box);
        EXPECT_FALSE(t.smoothed[static_cast<size_t>(i)]);
        continue;
      }
      double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
      for (int j = i - k + 1; j <= i; ++j) {
        const Box& b = raw.boxes[static_cast<size_t>(j)].box;
        x0 += b.x;
        y0 += b.y;
        x1 += b.x + b.w;
        y1 += b.y + b.h;
      }
      EXPECT_NEAR(out.x, x0 / k, 1e-9);
      EXPECT_NEAR(out.y, y0 / k, 1e-9);
      EXPECT_NEAR(out.x + out.w, x1 / k, 1e-9);
      EXPECT_NEAR(out.y + out.h, y1 / k, 1e-9);
      EXPECT_TRUE(t.smoothed[static_cast<size_t>(i)]);
    }
  }
}

TEST(Smoothing, ConstantAndReliableBoxesUnchanged) {
  Track constant;
  for (int f = 0; f < 20; ++f) constant.boxes.push_back(Det(f, 10.0, 20.0, {}, 0.05));
  constant.interpolated.assign(20, false);
  SmoothBoxes(&constant, 0.2, 5);
  for (const auto& d : constant.boxes) {
    EXPECT_NEAR(d.box.x, 10.0, 1e-12);
    EXPECT_NEAR(d.box.w, 40.0, 1e-12);
  }

  Track reliable;
  for (int f = 0; f < 20; ++f) reliable.boxes.push_back(Det(f, 7.0 * f * f, 20.0 - f, {}, 0.9));
  reliable.interpolated.assign(20, false);
  const Track before = reliable;
  EXPECT_EQ(SmoothBoxes(&reliable, 0.2, 5), 0);
  for (size_t i = 0; i < before.boxes.size(); ++i) EXPECT_EQ(reliable.boxes[i].box, before.boxes[i].box);
}

TEST(Smoothing, ShortHistoryWarns) {
  Track t;
  for (int f = 0; f < 3; ++f) t.boxes.push_back(Det(f, 0.0, 0.0, {}, 0.05));
  t.interpolated.assign(3, false);
  EXPECT_EQ(SmoothBoxes(&t, 0.2, 5), 3);
  EXPECT_EQ(KindOf([&] { SmoothBoxes(&t, 0.2, 0); }), ErrorKind::kInvalidArgument);
}

TEST(TrackPipeline, EmptyInput) {
  const TrackerOutput out = TrackPipeline({}, {}, TrackerConfig{});
  EXPECT_TRUE(out.tracks.empty());
  EXPECT_EQ(out.tracklet_count, 0);
  EXPECT_TRUE(FlattenTracks(out.tracks).empty());
}

TEST(TrackPipeline, FragmentedSceneWithoutIdentitySwitches) {
  const ScenarioTruth truth = BuildScene(TrackingScene());
  CorruptionConfig corruption;
  corruption.box_noise = 0.5;
  corruption.miss_probability = 0.05;
  corruption.embedding_noise = 0.05;
  const auto detections = CorruptDetections(truth, corruption);
  const FrameMotion motion = MotionFromPoses(truth.poses, truth.camera, truth.plane);
  const TrackerOutput out = TrackPipeline(detections, motion, TrackerConfig{});
  EXPECT_GT(out.tracklet_count, 5);
  const MotMetrics m = ComputeMotMetrics(FlattenTracks(out.tracks), truth.detections);
  EXPECT_EQ(m.id_switches, 0);
  EXPECT_GT(m.mota, 0.9);
  EXPECT_EQ(out.tracks.size(), 5u);

  const TrackerOutput again = TrackPipeline(detections, motion, TrackerConfig{});
  const auto a = FlattenTracks(out.tracks), b = FlattenTracks(again.tracks);
  ASSERT_EQ(a.size(), b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].id, b[i].id);
    EXPECT_EQ(a[i].box, b[i].box);
  }
}

TEST(TrackPipeline, RecoversLongOcclusion) {
  const ScenarioTruth truth = BuildScene(TrackingScene());
  CorruptionConfig corruption;
  corruption.occlusions = {{3, 12, 39}};
  const auto detections = CorruptDetections(truth, corruption);
  const TrackerOutput out =
      TrackPipeline(detections, MotionFromPoses(truth.poses, truth.camera, truth.plane), TrackerConfig{});
  std::map<int, Box> truth3;
  for (const auto& d : truth.detections) {
    if (d.id == 3) truth3[d.frame] = d.box;
  }
  ASSERT_TRUE(truth3.count(11) && truth3.count(40));
  int before = 0, after = 0;
  const Track* joined = nullptr;
  for (const auto& t : out.tracks) {
    for (size_t i = 0; i < t.boxes.size(); ++i) {
      if (t.boxes[i].frame == 11 && Iou(t.boxes[i].box, truth3[11]) > 0.5) before = t.id;
      if (t.boxes[i].frame == 40 && Iou(t.boxes[i].box, truth3[40]) > 0.5) after = t.id;
    }
    if (t.id == before) joined = &t;
  }
  ASSERT_NE(before, 0);
  EXPECT_EQ(before, after);
  ASSERT_NE(joined, nullptr);
  int interpolated = 0;
  for (size_t i = 0; i < joined->boxes.size(); ++i) {
    const int f = joined->boxes[i].frame;
    if (f >= 12 && f <= 39) {
      EXPECT_TRUE(joined->interpolated[i]);
      ++interpolated;
    }
  }
  EXPECT_EQ(interpolated, 28);
}
