#include <skyloc/synthetic_scene.hpp>

#include <skyloc/error.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>

namespace skyloc {

namespace {

double Radians(double deg) { return deg * std::numbers::pi / 180.0; }

Vec3 ReadVec3(const Config& c, const std::string& section, const std::string& key, const Vec3& fallback) {
  const auto v = c.GetDoubles(section, key, {fallback.x(), fallback.y(), fallback.z()});
  Require(v.size() == 3, ErrorKind::kConfig, "[" + section + "] " + key + " needs three values");
  return {v[0], v[1], v[2]};
}

std::uint64_t SplitMix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

double Lattice(std::int64_t ix, std::int64_t iz, int octave, std::uint64_t seed) {
  std::uint64_t h = SplitMix(seed ^ static_cast<std::uint64_t>(octave) * 0x632be59bd9b4e019ULL);
  h = SplitMix(h ^ static_cast<std::uint64_t>(ix));
  h = SplitMix(h ^ static_cast<std::uint64_t>(iz));
  return static_cast<double>(h >> 11) * 0x1.0p-53 * 2.0 - 1.0;
}

double Fade(double t) { return t * t * t * (t * (t * 6.0 - 15.0) + 10.0); }

}  // namespace

SceneSpec SceneSpec::FromConfig(const Config& c) {
  SceneSpec s;
  s.frames = c.GetInt("scene", "frames", s.frames);
  s.fps = c.GetDouble("scene", "fps", s.fps);
  s.width = c.GetInt("scene", "width", s.width);
  s.height = c.GetInt("scene", "height", s.height);
  s.hfov_deg = c.GetDouble("scene", "hfov", s.hfov_deg);
  s.seed = c.GetU64("scene", "seed", s.seed);
  s.camera_height = c.GetDouble("camera", "height", s.camera_height);
  s.pitch_deg = c.GetDouble("camera", "pitch_deg", s.pitch_deg);
  s.velocity = ReadVec3(c, "camera", "velocity", s.velocity);
  s.yaw_rate_deg = c.GetDouble("camera", "yaw_rate_deg", s.yaw_rate_deg);
  s.pure_rotation = c.GetBool("camera", "pure_rotation", s.pure_rotation);
  s.orbit_radius = c.GetDouble("camera", "orbit_radius", s.orbit_radius);
  s.orbit_period = c.GetDouble("camera", "orbit_period", s.orbit_period);
  s.object_count = c.GetInt("objects", "count", s.object_count);
  s.object_size = ReadVec3(c, "objects", "size", s.object_size);
  s.min_distance = c.GetDouble("objects", "min_distance", s.min_distance);
  s.max_distance = c.GetDouble("objects", "max_distance", s.max_distance);
  s.lateral_fraction = c.GetDouble("objects", "lateral_fraction", s.lateral_fraction);
  s.relative_speed = c.GetDouble("objects", "relative_speed", s.relative_speed);
  s.embedding_dim = c.GetInt("objects", "embedding_dim", s.embedding_dim);
  s.texture.amplitude = c.GetDouble("texture", "amplitude", s.texture.amplitude);
  s.texture.cell = c.GetDouble("texture", "cell", s.texture.cell);
  s.texture.octaves = c.GetInt("texture", "octaves", s.texture.octaves);
  s.texture.seed = c.GetU64("texture", "seed", s.texture.seed);
  s.Validate();
  return s;
}

void SceneSpec::Validate() const {
  auto check = [](bool ok, const std::string& what) { Require(ok, ErrorKind::kInvalidArgument, "scene: " + what); };
  check(frames >= 1, "frames must be positive");
  check(fps > 0.0, "fps must be positive");
  check(width >= 8 && height >= 8, "image must be at least 8x8");
  check(hfov_deg > 0.0 && hfov_deg < 180.0, "hfov must lie in (0, 180)");
  check(camera_height > 0.0, "camera height must be positive");
  check(velocity.y() == 0.0, "vertical camera velocity must be zero");
  check(orbit_radius >= 0.0 && orbit_period > 0.0, "orbit radius must be non-negative and period positive");
  check(object_count >= 0, "object count must be non-negative");
  check(object_count <= embedding_dim, "embedding_dim must be at least the object count");
  check((object_size.array() > 0.0).all(), "object size must be positive");
  check(min_distance > 0.0 && max_distance >= min_distance, "object distance range is invalid");
  check(relative_speed >= 0.0 && lateral_fraction >= 0.0, "object motion parameters must be non-negative");
  check(texture.cell > 0.0 && texture.octaves >= 1, "texture cell and octaves must be positive");
}

double TextureAt(const TextureSpec& texture, double x, double z) {
  double sum = 0.0, norm = 0.0, amp = 1.0;
  for (int o = 0; o < texture.octaves; ++o) {
    const double scale = std::ldexp(1.0, o) / texture.cell;
    const double u = x * scale, v = z * scale;
    const double fu = std::floor(u), fv = std::floor(v);
    const auto iu = static_cast<std::int64_t>(fu), iv = static_cast<std::int64_t>(fv);
    const double su = Fade(u - fu), sv = Fade(v - fv);
    const double a = Lattice(iu, iv, o, texture.seed), b = Lattice(iu + 1, iv, o, texture.seed);
    const double c = Lattice(iu, iv + 1, o, texture.seed), d = Lattice(iu + 1, iv + 1, o, texture.seed);
    sum += amp * ((a + (b - a) * su) + ((c + (d - c) * su) - (a + (b - a) * su)) * sv);
    norm += amp;
    amp *= 0.5;
  }
  return 0.5 + texture.amplitude * sum / norm;
}

ScenarioTruth BuildScene(const SceneSpec& spec) {
  spec.Validate();
  ScenarioTruth truth;
  truth.spec = spec;
  truth.camera = ApproximateIntrinsics(spec.width, spec.height, spec.hfov_deg);
  const double pitch = Radians(spec.pitch_deg);
  truth.plane = GroundPlane::FromPitch(pitch, spec.camera_height);
  truth.depth_degenerate = spec.pure_rotation;

  Mat3 r_pitch;
  r_pitch.col(0) = Vec3(1, 0, 0);
  r_pitch.col(1) = Vec3(0, std::cos(pitch), -std::sin(pitch));
  r_pitch.col(2) = Vec3(0, std::sin(pitch), std::cos(pitch));
  const double yaw_rate =
      spec.pure_rotation && spec.yaw_rate_deg == 0.0 ? Radians(5.0) : Radians(spec.yaw_rate_deg);
  for (int k = 0; k < spec.frames; ++k) {
    const double t = k / spec.fps;
    const Mat3 yaw = Eigen::AngleAxisd(yaw_rate * t, Vec3::UnitY()).toRotationMatrix();
    Vec3 center(0.0, -spec.camera_height, 0.0);
    if (!spec.pure_rotation) {
      const double phase = 2.0 * std::numbers::pi * t / spec.orbit_period;
      center += spec.velocity * t + spec.orbit_radius * Vec3(std::cos(phase) - 1.0, 0.0, std::sin(phase));
    }
    truth.poses.emplace_back(yaw * r_pitch, center);
  }

  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<Eigen::VectorXd> basis;
  const Vec3 carrier = spec.pure_rotation ? Vec3::Zero() : spec.velocity;
  for (int i = 0; i < spec.object_count; ++i) {
    SceneObject obj;
    obj.id = i + 1;
    const double forward = spec.min_distance + (spec.max_distance - spec.min_distance) *
                                                   std::clamp((i + 0.5 + 0.3 * unit(rng)) / spec.object_count, 0.0, 1.0);
    const double depth = forward * std::cos(pitch) + spec.camera_height * std::sin(pitch);
    obj.start = Vec3(spec.lateral_fraction * depth * unit(rng), 0.0, forward);
    const double heading = std::numbers::pi * unit(rng);
    obj.velocity = carrier + spec.relative_speed * Vec3(std::cos(heading), 0.0, std::sin(heading));

    Eigen::VectorXd e(spec.embedding_dim);
    for (int d = 0; d < spec.embedding_dim; ++d) e(d) = gauss(rng);
    for (const auto& b : basis) e -= e.dot(b) * b;
    e.normalize();
    basis.push_back(e);
    obj.embedding.assign(e.data(), e.data() + e.size());
    truth.objects.push_back(std::move(obj));
  }

  const Vec3 half = 0.5 * spec.object_size;
  for (int k = 0; k < spec.frames; ++k) {
    const PoseSE3 cw = truth.poses[static_cast<size_t>(k)].Inverse();
    for (const auto& obj : truth.objects) {
      const Vec3 foot = obj.FootpointAt(k / spec.fps);
      truth.positions.push_back({k, obj.id, cw * foot});
      double x0 = std::numeric_limits<double>::infinity(), y0 = x0, x1 = -x0, y1 = -x0;
      bool in_front = true;
      for (int c = 0; c < 8; ++c) {
        const Vec3 corner = foot + Vec3(c & 1 ? half.x() : -half.x(), c & 2 ? -spec.object_size.y() : 0.0,
                                        c & 4 ? half.z() : -half.z());
        const Vec3 p = cw * corner;
        if (p.z() <= 1e-6) {
          in_front = false;
          break;
        }
        const Vec2 px = truth.camera.ProjectCameraPoint(p);
        x0 = std::min(x0, px.x());
        x1 = std::max(x1, px.x());
        y0 = std::min(y0, px.y());
        y1 = std::max(y1, px.y());
      }
      if (!in_front) continue;
      x0 = std::max(x0, 0.0);
      y0 = std::max(y0, 0.0);
      x1 = std::min(x1, static_cast<double>(spec.width));
      y1 = std::min(y1, static_cast<double>(spec.height));
      if (x1 - x0 <= 1.0 || y1 - y0 <= 1.0) continue;
      Detection d;
      d.frame = k;
      d.id = obj.id;
      d.box = {x0, y0, x1 - x0, y1 - y0};
      d.embedding = obj.embedding;
      truth.detections.push_back(std::move(d));
    }
  }
  return truth;
}

DenseDepthMap ScenarioTruth::Depth(int frame) const {
  const PoseSE3& pose = poses.at(static_cast<size_t>(frame));
  DenseDepthMap map(camera.width, camera.height);
  const double cy = pose.translation().y();
  for (int v = 0; v < camera.height; ++v) {
    for (int u = 0; u < camera.width; ++u) {
      const double dy = pose.rotation().row(1).dot(camera.Ray(Vec2(u, v)));
      if (dy <= 1e-12) continue;
      map.depth[map.Index(u, v)] = -cy / dy;
    }
  }
  return map;
}

double ScenarioTruth::RenderPixel(int frame, const Vec2& pixel) const {
  const PoseSE3& pose = poses.at(static_cast<size_t>(frame));
  const Vec3 d = pose.rotation() * camera.Ray(pixel);
  if (d.y() <= 1e-12) return 0.5;
  const Vec3 p = pose.translation() + d * (-pose.translation().y() / d.y());
  return TextureAt(spec.texture, p.x(), p.z());
}

IntensityImage ScenarioTruth::Render(int frame) const {
  IntensityImage image(camera.width, camera.height);
  for (int v = 0; v < camera.height; ++v) {
    for (int u = 0; u < camera.width; ++u) image(u, v) = RenderPixel(frame, Vec2(u, v));
  }
  return image;
}

CorruptionConfig CorruptionConfig::FromConfig(const Config& c) {
  CorruptionConfig cfg;
  const std::string s = "corruption";
  cfg.box_noise = c.GetDouble(s, "box_noise", cfg.box_noise);
  cfg.miss_probability = c.GetDouble(s, "miss_probability", cfg.miss_probability);
  cfg.score_min = c.GetDouble(s, "score_min", cfg.score_min);
  cfg.score_max = c.GetDouble(s, "score_max", cfg.score_max);
  cfg.unreliable_probability = c.GetDouble(s, "unreliable_probability", cfg.unreliable_probability);
  cfg.unreliable_score = c.GetDouble(s, "unreliable_score", cfg.unreliable_score);
  cfg.unreliable_noise = c.GetDouble(s, "unreliable_noise", cfg.unreliable_noise);
  cfg.embedding_noise = c.GetDouble(s, "embedding_noise", cfg.embedding_noise);
  cfg.seed = c.GetU64(s, "seed", cfg.seed);
  if (const auto raw = c.Raw(s, "occlusions")) {
    std::string text = *raw;
    std::replace(text.begin(), text.end(), ',', ' ');
    std::istringstream in(text);
    std::string item;
    while (in >> item) {
      int id = 0, first = 0, last = 0;
      char colon = 0, dash = 0;
      std::istringstream one(item);
      one >> id >> colon >> first >> dash >> last;
      Require(!one.fail() && colon == ':' && dash == '-' && one.peek() == EOF, ErrorKind::kConfig,
              "[corruption] occlusions entry '" + item + "' is not id:first-last");
      cfg.occlusions.emplace_back(id, first, last);
    }
  }
  cfg.Validate();
  return cfg;
}

void CorruptionConfig::Validate() const {
  auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
  Require(prob(miss_probability) && prob(unreliable_probability), ErrorKind::kInvalidArgument,
          "corruption probabilities must lie in [0, 1]");
  Require(box_noise >= 0.0 && unreliable_noise >= 0.0 && embedding_noise >= 0.0, ErrorKind::kInvalidArgument,
          "corruption noise levels must be non-negative");
  Require(prob(score_min) && prob(score_max) && score_min <= score_max && prob(unreliable_score),
          ErrorKind::kInvalidArgument, "corruption score range is invalid");
  for (const auto& [id, first, last] : occlusions) {
    Require(first <= last, ErrorKind::kInvalidArgument, "occlusion interval is reversed");
  }
}

std::vector<Detection> CorruptDetections(const ScenarioTruth& truth, const CorruptionConfig& config) {
  config.Validate();
  std::mt19937_64 rng(config.seed);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<Detection> out;
  for (const Detection& t : truth.detections) {
    const bool occluded = std::any_of(config.occlusions.begin(), config.occlusions.end(), [&](const auto& o) {
      return std::get<0>(o) == t.id && t.frame >= std::get<1>(o) && t.frame <= std::get<2>(o);
    });
    if (occluded) continue;
    if (config.miss_probability > 0.0 && uniform(rng) < config.miss_probability) continue;
    Detection d = t;
    d.id = -1;
    const bool unreliable = config.unreliable_probability > 0.0 && uniform(rng) < config.unreliable_probability;
    double noise = config.box_noise;
    if (unreliable) {
      d.score = config.unreliable_score * uniform(rng);
      noise = std::hypot(noise, config.unreliable_noise);
    } else if (config.score_max > config.score_min) {
      d.score = config.score_min + (config.score_max - config.score_min) * uniform(rng);
    } else {
      d.score = config.score_min;
    }
    if (noise > 0.0) {
      d.box.x += noise * gauss(rng);
      d.box.y += noise * gauss(rng);
    }
    if (config.embedding_noise > 0.0 && !d.embedding.empty()) {
      double norm = 0.0;
      for (double& e : d.embedding) {
        e += config.embedding_noise * gauss(rng);
        norm += e * e;
      }
      norm = std::sqrt(norm);
      for (double& e : d.embedding) e /= norm;
    }
    out.push_back(std::move(d));
  }
  return out;
}

}  // namespace skyloc
