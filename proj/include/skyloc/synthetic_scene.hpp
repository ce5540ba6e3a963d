#pragma once

// Ground-truth generator: a textured ground plane seen by a pitched camera
// moving over it, upright box objects standing on the ground, and their exact
// projected detections.
//
// World frame: X right, Y down, Z forward; the ground is Y = 0 and the camera
// flies at Y = -height.

#include <skyloc/config.hpp>
#include <skyloc/detection.hpp>
#include <skyloc/geometry.hpp>
#include <skyloc/ground_plane.hpp>
#include <skyloc/image.hpp>
#include <skyloc/maps.hpp>

#include <cstdint>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

namespace skyloc {

struct TextureSpec {
  double amplitude = 0.2;  // intensity = 0.5 + amplitude * noise, noise in [-1, 1]
  double cell = 0.5;       // m, coarsest lattice spacing
  int octaves = 3;
  std::uint64_t seed = 11;
};

struct SceneSpec {
  int frames = 300;
  double fps = 30.0;
  int width = 640;
  int height = 480;
  double hfov_deg = 90.0;
  std::uint64_t seed = 1;

  double camera_height = 10.0;  // m
  double pitch_deg = 15.0;      // downward
  Vec3 velocity = Vec3(0.5, 0.0, 1.5);  // world m/s
  double yaw_rate_deg = 0.0;    // deg/s about the world vertical
  bool pure_rotation = false;   // zero translation, yaw only
  // Horizontal circle added to the linear motion, starting at the frame-0
  // position; one revolution per orbit_period seconds.
  double orbit_radius = 0.0;    // m
  double orbit_period = 1.0;    // s

  int object_count = 5;
  Vec3 object_size = Vec3(1.0, 1.8, 1.0);  // width, height, depth in m
  double min_distance = 11.0;   // m, ground distance ahead of the camera
  double max_distance = 32.0;
  double lateral_fraction = 0.35;  // |X| <= fraction * camera-frame depth
  double relative_speed = 0.25;    // m/s relative to the camera
  int embedding_dim = 16;

  TextureSpec texture;

  // Parses [scene], [camera], [objects] and [texture] sections.
  static SceneSpec FromConfig(const Config& config);
  void Validate() const;
};

struct SceneObject {
  int id = 0;  // 1-based
  Vec3 start = Vec3::Zero();     // world footpoint at frame 0
  Vec3 velocity = Vec3::Zero();  // world m/s, on the ground
  std::vector<double> embedding;  // unit, mutually orthogonal across objects

  Vec3 FootpointAt(double time) const { return start + velocity * time; }
};

struct ScenarioTruth {
  SceneSpec spec;
  CameraIntrinsics camera;
  GroundPlane plane;  // camera frame, identical for every frame
  std::vector<PoseSE3> poses;  // T_wc per frame
  std::vector<SceneObject> objects;
  std::vector<Detection> detections;  // exact boxes, id = object id, score 1
  std::vector<LocalizationRecord> positions;  // camera-frame footpoints, track_id = object id
  bool depth_degenerate = false;

  // Camera-frame z-depth of the ground at every pixel; 0 above the horizon.
  DenseDepthMap Depth(int frame) const;
  IntensityImage Render(int frame) const;
  // Intensity at a continuous pixel position, the value Render() samples at
  // pixel centers.
  double RenderPixel(int frame, const Vec2& pixel) const;
  // Relative pose T_cur_ref between two frames.
  PoseSE3 Relative(int cur, int ref) const { return poses[static_cast<size_t>(cur)].Inverse() * poses[static_cast<size_t>(ref)]; }
};

// Ground texture intensity at world (X, Z).
double TextureAt(const TextureSpec& texture, double x, double z);

ScenarioTruth BuildScene(const SceneSpec& spec);

struct CorruptionConfig {
  double box_noise = 0.0;        // px, std of the box-center offset
  double miss_probability = 0.0;
  double score_min = 1.0;        // reliable scores ~ U[score_min, score_max]
  double score_max = 1.0;
  double unreliable_probability = 0.0;  // chance of a low-score, noisier box
  double unreliable_score = 0.1;        // scores ~ U[0, unreliable_score)
  double unreliable_noise = 0.0;        // px, extra center noise on those
  double embedding_noise = 0.0;
  // (object id, first frame, last frame), inclusive.
  std::vector<std::tuple<int, int, int>> occlusions;
  std::uint64_t seed = 5;

  // Parses the [corruption] section; occlusions read as "3:12-40, 1:5-9".
  static CorruptionConfig FromConfig(const Config& config);
  void Validate() const;
};

std::vector<Detection> CorruptDetections(const ScenarioTruth& truth, const CorruptionConfig& config);

}  // namespace skyloc
