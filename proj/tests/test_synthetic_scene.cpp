#include <skyloc/synthetic_scene.hpp>

#include "test_support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <random>
#include <sstream>

using namespace skyloc;
using skyloc::testing::KindOf;

namespace {

SceneSpec Small() {
  SceneSpec spec;
  spec.frames = 20;
  spec.width = 160;
  spec.height = 120;
  return spec;
}

}  // namespace

TEST(Scene, DefaultSceneSeesEveryObjectEveryFrame) {
  const ScenarioTruth truth = BuildScene(SceneSpec{});
  EXPECT_EQ(truth.objects.size(), 5u);
  EXPECT_EQ(truth.poses.size(), 300u);
  EXPECT_EQ(truth.detections.size(), 1500u);
  EXPECT_EQ(truth.positions.size(), 1500u);
  EXPECT_FALSE(truth.depth_degenerate);
  for (const auto& d : truth.detections) {
    EXPECT_GE(d.box.x, 0.0);
    EXPECT_LE(d.box.x + d.box.w, 640.0);
    EXPECT_EQ(d.score, 1.0);
  }
}

TEST(Scene, EmbeddingsAreOrthonormal) {
  const ScenarioTruth truth = BuildScene(SceneSpec{});
  for (const auto& a : truth.objects) {
    for (const auto& b : truth.objects) {
      double dot = 0.0;
      for (size_t i = 0; i < a.embedding.size(); ++i) dot += a.embedding[i] * b.embedding[i];
      EXPECT_NEAR(dot, a.id == b.id ? 1.0 : 0.0, 1e-12);
    }
  }
}

TEST(Scene, FootpointsProjectIntoBoxBottoms) {
  const ScenarioTruth truth = BuildScene(SceneSpec{});
  std::map<std::pair<int, int>, Vec3> pos;
  for (const auto& p : truth.positions) pos[{p.frame, p.track_id}] = p.position;
  for (const auto& d : truth.detections) {
    const Vec2 foot = truth.camera.ProjectCameraPoint(pos.at({d.frame, d.id}));
    EXPECT_GT(foot.x(), d.box.x);
    EXPECT_LT(foot.x(), d.box.x + d.box.w);
    // The near bottom edge of the box hangs below the footpoint.
    EXPECT_LE(foot.y(), d.box.y + d.box.h + 1e-9);
    EXPECT_GT(foot.y(), d.box.y + 0.8 * d.box.h);
    // Footpoints lie on the camera-frame ground plane.
    EXPECT_NEAR(truth.plane.n.dot(pos.at({d.frame, d.id})), truth.plane.h_cam, 1e-9);
  }
}

TEST(Scene, PureRotationIsDepthDegenerate) {
  SceneSpec spec = Small();
  spec.pure_rotation = true;
  const ScenarioTruth truth = BuildScene(spec);
  EXPECT_TRUE(truth.depth_degenerate);
  for (const auto& p : truth.poses) EXPECT_NEAR((p.translation() - truth.poses[0].translation()).norm(), 0.0, 1e-12);
  EXPECT_GT(truth.Relative(5, 0).rotation().trace(), 1.0);
  EXPECT_LT(truth.Relative(5, 0).rotation().trace(), 3.0 - 1e-6);
}

TEST(Scene, Deterministic) {
  const ScenarioTruth a = BuildScene(SceneSpec{});
  const ScenarioTruth b = BuildScene(SceneSpec{});
  ASSERT_EQ(a.detections.size(), b.detections.size());
  for (size_t i = 0; i < a.detections.size(); ++i) {
    EXPECT_EQ(a.detections[i].box, b.detections[i].box);
    EXPECT_EQ(a.detections[i].embedding, b.detections[i].embedding);
  }
  SceneSpec other;
  other.seed = 2;
  EXPECT_NE(BuildScene(other).objects[0].start, a.objects[0].start);
}

TEST(Scene, IdenticalPosesRenderIdentically) {
  SceneSpec spec = Small();
  spec.velocity = Vec3::Zero();
  const ScenarioTruth truth = BuildScene(spec);
  const IntensityImage a = truth.Render(0), b = truth.Render(7);
  for (int v = 0; v < spec.height; ++v) {
    for (int u = 0; u < spec.width; ++u) ASSERT_EQ(a(u, v), b(u, v));
  }
}

TEST(Scene, AdjacentFramesArePhotoConsistent) {
  SceneSpec spec = Small();
  spec.pitch_deg = 40.0;
  const ScenarioTruth truth = BuildScene(spec);
  const DenseDepthMap depth = truth.Depth(3);
  const PoseSE3 xi = truth.Relative(4, 3);
  int checked = 0;
  for (int v = 0; v < spec.height; v += 3) {
    for (int u = 0; u < spec.width; u += 3) {
      const double z = depth.depth[depth.Index(u, v)];
      if (z <= 0.0) continue;
      const Vec3 p = xi * (z * truth.camera.Ray(Vec2(u, v)));
      const Vec2 q = truth.camera.ProjectCameraPoint(p);
      if (q.x() < 0 || q.y() < 0 || q.x() > spec.width - 1 || q.y() > spec.height - 1) continue;
      EXPECT_NEAR(truth.RenderPixel(4, q), truth.RenderPixel(3, Vec2(u, v)), 1e-3);
      ++checked;
    }
  }
  EXPECT_GT(checked, 1000);
}

TEST(Scene, DepthIsZeroAboveHorizon) {
  SceneSpec spec = Small();
  spec.pitch_deg = 0.0;
  const ScenarioTruth truth = BuildScene(spec);
  const DenseDepthMap depth = truth.Depth(0);
  EXPECT_EQ(depth.depth[depth.Index(80, 10)], 0.0);
  const double below = depth.depth[depth.Index(80, 110)];
  EXPECT_NEAR(below, spec.camera_height * truth.camera.f / (110.0 - truth.camera.cy), 1e-9);
}

TEST(Scene, ZeroAmplitudeIsUniform) {
  SceneSpec spec = Small();
  spec.texture.amplitude = 0.0;
  const IntensityImage image = BuildScene(spec).Render(0);
  for (int v = 0; v < spec.height; ++v) {
    for (int u = 0; u < spec.width; ++u) ASSERT_EQ(image(u, v), 0.5);
  }
}

TEST(Scene, TextureStaysInRange) {
  TextureSpec texture;
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-100.0, 100.0);
  for (int i = 0; i < 2000; ++i) {
    const double t = TextureAt(texture, u(rng), u(rng));
    EXPECT_GE(t, 0.5 - texture.amplitude);
    EXPECT_LE(t, 0.5 + texture.amplitude);
  }
}

TEST(Scene, ValidationRejectsBadSpecs) {
  SceneSpec spec;
  spec.frames = 0;
  EXPECT_EQ(KindOf([&] { BuildScene(spec); }), ErrorKind::kInvalidArgument);
  spec = SceneSpec{};
  spec.object_count = -1;
  EXPECT_EQ(KindOf([&] { BuildScene(spec); }), ErrorKind::kInvalidArgument);
  spec = SceneSpec{};
  spec.object_count = 20;
  EXPECT_EQ(KindOf([&] { BuildScene(spec); }), ErrorKind::kInvalidArgument);
}

TEST(Scene, ParsesConfig) {
  std::istringstream in(
      "[scene]\nframes = 12\nwidth = 320\nheight = 240\n"
      "[camera]\nheight = 4\npitch_deg = 30\nvelocity = 1 0 2\n"
      "[objects]\ncount = 2\nsize = 0.5 1.7 0.5\n[texture]\ncell = 0.25\n");
  const SceneSpec spec = SceneSpec::FromConfig(Config::Parse(in, "scene.cfg"));
  EXPECT_EQ(spec.frames, 12);
  EXPECT_EQ(spec.width, 320);
  EXPECT_DOUBLE_EQ(spec.camera_height, 4.0);
  EXPECT_DOUBLE_EQ(spec.pitch_deg, 30.0);
  EXPECT_EQ(spec.velocity, Vec3(1.0, 0.0, 2.0));
  EXPECT_EQ(spec.object_count, 2);
  EXPECT_EQ(spec.object_size, Vec3(0.5, 1.7, 0.5));
  EXPECT_DOUBLE_EQ(spec.texture.cell, 0.25);
}

TEST(Corruption, NoneIsIdentityWithoutIds) {
  const ScenarioTruth truth = BuildScene(SceneSpec{});
  const auto out = CorruptDetections(truth, CorruptionConfig{});
  ASSERT_EQ(out.size(), truth.detections.size());
  for (size_t i = 0; i < out.size(); ++i) {
    EXPECT_EQ(out[i].id, -1);
    EXPECT_EQ(out[i].frame, truth.detections[i].frame);
    EXPECT_EQ(out[i].box, truth.detections[i].box);
    EXPECT_EQ(out[i].score, 1.0);
    EXPECT_EQ(out[i].embedding, truth.detections[i].embedding);
  }
}

TEST(Corruption, OcclusionRemovesInterval) {
  const ScenarioTruth truth = BuildScene(SceneSpec{});
  CorruptionConfig cfg;
  cfg.occlusions = {{3, 12, 40}};
  const auto out = CorruptDetections(truth, cfg);
  EXPECT_EQ(out.size(), truth.detections.size() - 29);
  // Four objects remain inside the interval, five outside.
  std::map<int, int> per_frame;
  for (const auto& d : out) ++per_frame[d.frame];
  for (int f = 0; f < 300; ++f) EXPECT_EQ(per_frame[f], f >= 12 && f <= 40 ? 4 : 5) << f;
}

TEST(Corruption, CertainMissDropsEverything) {
  const ScenarioTruth truth = BuildScene(Small());
  CorruptionConfig cfg;
  cfg.miss_probability = 1.0;
  EXPECT_TRUE(CorruptDetections(truth, cfg).empty());
}

TEST(Corruption, NoiseAndScores) {
  const ScenarioTruth truth = BuildScene(SceneSpec{});
  CorruptionConfig cfg;
  cfg.box_noise = 1.0;
  cfg.score_min = 0.5;
  cfg.score_max = 0.9;
  cfg.unreliable_probability = 0.2;
  cfg.embedding_noise = 0.1;
  const auto out = CorruptDetections(truth, cfg);
  ASSERT_EQ(out.size(), truth.detections.size());
  int low = 0;
  double sum_sq = 0.0;
  for (size_t i = 0; i < out.size(); ++i) {
    const double s = out[i].score;
    if (s < cfg.unreliable_score) {
      ++low;
    } else {
      EXPECT_GE(s, 0.5);
      EXPECT_LE(s, 0.9);
      sum_sq += std::pow(out[i].box.x - truth.detections[i].box.x, 2);
    }
    double norm = 0.0;
    for (double e : out[i].embedding) norm += e * e;
    EXPECT_NEAR(norm, 1.0, 1e-12);
  }
  EXPECT_NEAR(low / static_cast<double>(out.size()), 0.2, 0.04);
  EXPECT_NEAR(std::sqrt(sum_sq / (out.size() - low)), 1.0, 0.1);
  const auto again = CorruptDetections(truth, cfg);
  for (size_t i = 0; i < out.size(); ++i) EXPECT_EQ(out[i].box, again[i].box);
}

TEST(Corruption, ParsesOcclusions) {
  std::istringstream in("[corruption]\nocclusions = 3:12-39, 1:5-9\nmiss_probability = 0.1\n");
  const CorruptionConfig cfg = CorruptionConfig::FromConfig(Config::Parse(in, "c.cfg"));
  ASSERT_EQ(cfg.occlusions.size(), 2u);
  EXPECT_EQ(cfg.occlusions[0], std::make_tuple(3, 12, 39));
  EXPECT_EQ(cfg.occlusions[1], std::make_tuple(1, 5, 9));
  std::istringstream bad("[corruption]\nocclusions = 3:12\n");
  EXPECT_EQ(KindOf([&] { CorruptionConfig::FromConfig(Config::Parse(bad, "c.cfg")); }), ErrorKind::kConfig);
  std::istringstream reversed("[corruption]\nocclusions = 3:40-12\n");
  EXPECT_EQ(KindOf([&] { CorruptionConfig::FromConfig(Config::Parse(reversed, "c.cfg")); }),
            ErrorKind::kInvalidArgument);
}
