#include <skyloc/pipeline.hpp>

#include <skyloc/error.hpp>
#include <skyloc/sparse_align.hpp>

#include <json.hpp>
#include <openssl/evp.h>

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <random>
#include <sstream>

namespace skyloc {

namespace fs = std::filesystem;

namespace {

NccMode ParseNccMode(const std::string& s) {
  if (s == "printed") return NccMode::kPrinted;
  if (s == "zero-mean") return NccMode::kZeroMean;
  Fail(ErrorKind::kConfig, "[depth] ncc_mode must be 'printed' or 'zero-mean', got '" + s + "'");
}

}  // namespace

PipelineConfig PipelineConfig::FromConfig(const Config& c) {
  PipelineConfig p;
  p.scene = c.GetString("paths", "scene", "");
  p.detections = c.GetString("paths", "detections", "");
  p.truth = c.GetString("paths", "truth", "");
  p.truth_positions = c.GetString("paths", "truth_positions", "");
  p.poses = c.GetString("paths", "poses", "");

  p.hfov_deg = c.GetDouble("camera", "hfov", p.hfov_deg);
  p.literal_intrinsics = c.GetBool("camera", "literal_intrinsics", p.literal_intrinsics);

  auto& t = p.tracker;
  t.tracklets.iou_threshold = c.GetDouble("tracker", "iou_thresh", t.tracklets.iou_threshold);
  t.tracklets.min_similarity = c.GetDouble("tracker", "min_similarity", t.tracklets.min_similarity);
  t.connectivity.window = c.GetInt("tracker", "time_window", t.connectivity.window);
  t.connectivity.w_appearance = c.GetDouble("tracker", "w_appearance", t.connectivity.w_appearance);
  t.connectivity.w_motion = c.GetDouble("tracker", "w_motion", t.connectivity.w_motion);
  t.connectivity.w_gap = c.GetDouble("tracker", "w_gap", t.connectivity.w_gap);
  t.cluster.merge_threshold = c.GetDouble("tracker", "merge_threshold", t.cluster.merge_threshold);
  t.score_threshold = c.GetDouble("tracker", "score_thresh", t.score_threshold);
  t.smooth_k = c.GetInt("tracker", "smooth_k", t.smooth_k);

  const std::string depth_source = c.GetString("depth", "source", "filter");
  if (depth_source == "truth") {
    p.depth_source = DepthSource::kTruth;
  } else if (depth_source == "filter") {
    p.depth_source = DepthSource::kFilter;
  } else {
    Fail(ErrorKind::kConfig, "[depth] source must be 'truth' or 'filter', got '" + depth_source + "'");
  }
  p.window = c.GetInt("depth", "window", p.window);
  p.filter.ncc_threshold = c.GetDouble("depth", "ncc", p.filter.ncc_threshold);
  p.filter.ncc_mode = ParseNccMode(c.GetString("depth", "ncc_mode", "printed"));
  p.filter.sample_step_px = c.GetDouble("depth", "sample_step", p.filter.sample_step_px);
  p.filter.convergence_ratio = c.GetDouble("depth", "convergence_ratio", p.filter.convergence_ratio);
  p.prior_depth = c.GetDouble("depth", "prior_depth", p.prior_depth);
  p.depth_noise = c.GetDouble("depth", "noise", p.depth_noise);

  const std::string pose_source = c.GetString("pose", "source", "truth");
  if (pose_source == "truth") {
    p.pose_source = PoseSource::kTruth;
  } else if (pose_source == "odometry") {
    p.pose_source = PoseSource::kOdometry;
  } else {
    Fail(ErrorKind::kConfig, "[pose] source must be 'truth' or 'odometry', got '" + pose_source + "'");
  }

  p.patch.height_fraction = c.GetDouble("ground", "patch_frac", p.patch.height_fraction);
  p.patch.block_size = c.GetInt("ground", "block_size", p.patch.block_size);
  p.flat_ground = c.GetBool("ground", "flat_ground", p.flat_ground);
  p.flat_height = c.GetDouble("ground", "flat_height", p.flat_height);
  if (c.Has("ground", "height_ref")) p.height_ref = c.GetDouble("ground", "height_ref", 0.0);

  p.buckets = c.GetDoubles("evaluate", "buckets", p.buckets);
  p.eval_iou = c.GetDouble("evaluate", "iou", p.eval_iou);
  p.ablation = c.GetBool("evaluate", "ablation", p.ablation);
  p.seed = c.GetU64("run", "seed", p.seed);

  auto check = [](bool ok, const std::string& what) { Require(ok, ErrorKind::kConfig, what); };
  check(t.tracklets.iou_threshold > 0.0 && t.tracklets.iou_threshold < 1.0, "[tracker] iou_thresh must lie in (0, 1)");
  check(t.connectivity.window >= 1, "[tracker] time_window must be positive");
  check(t.smooth_k >= 1, "[tracker] smooth_k must be positive");
  check(std::abs(t.connectivity.w_appearance + t.connectivity.w_motion + t.connectivity.w_gap - 1.0) < 1e-9,
        "[tracker] connectivity weights must sum to 1");
  check(p.window >= 2, "[depth] window must be at least 2 frames");
  check(p.filter.ncc_threshold > -1.0 && p.filter.ncc_threshold <= 1.0, "[depth] ncc must lie in (-1, 1]");
  check(p.patch.height_fraction > 0.0 && p.patch.block_size >= 1, "[ground] patch settings are invalid");
  check(p.flat_height > 0.0, "[ground] flat_height must be positive");
  check(!p.height_ref || *p.height_ref > 0.0, "[ground] height_ref must be positive");
  check(p.hfov_deg > 0.0 && p.hfov_deg < 180.0, "[camera] hfov must lie in (0, 180)");
  check(std::is_sorted(p.buckets.begin(), p.buckets.end()), "[evaluate] buckets must increase");
  check(p.eval_iou > 0.0 && p.eval_iou <= 1.0, "[evaluate] iou must lie in (0, 1]");
  check(p.depth_noise >= 0.0, "[depth] noise must be non-negative");
  return p;
}

std::set<std::string> PipelineConfig::KnownKeys() {
  return {"paths.scene", "paths.detections", "paths.truth", "paths.truth_positions", "paths.poses",
          "camera.hfov", "camera.literal_intrinsics", "camera.height", "camera.pitch_deg", "camera.velocity",
          "camera.yaw_rate_deg", "camera.pure_rotation", "camera.orbit_radius", "camera.orbit_period", "tracker.iou_thresh", "tracker.min_similarity",
          "tracker.time_window", "tracker.w_appearance", "tracker.w_motion", "tracker.w_gap",
          "tracker.merge_threshold", "tracker.score_thresh", "tracker.smooth_k", "depth.source", "depth.window",
          "depth.ncc", "depth.ncc_mode", "depth.sample_step", "depth.convergence_ratio", "depth.prior_depth",
          "depth.noise", "pose.source", "ground.patch_frac", "ground.block_size", "ground.flat_ground",
          "ground.flat_height", "ground.height_ref", "evaluate.buckets", "evaluate.iou", "evaluate.ablation",
          "run.seed", "scene.frames", "scene.fps", "scene.width", "scene.height", "scene.hfov", "scene.seed",
          "objects.count", "objects.size", "objects.min_distance", "objects.max_distance",
          "objects.lateral_fraction", "objects.relative_speed", "objects.embedding_dim", "texture.amplitude",
          "texture.cell", "texture.octaves", "texture.seed", "corruption.box_noise", "corruption.miss_probability",
          "corruption.score_min", "corruption.score_max", "corruption.unreliable_probability",
          "corruption.unreliable_score", "corruption.unreliable_noise", "corruption.embedding_noise",
          "corruption.occlusions", "corruption.seed"};
}

int ExitCodeFor(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kConfig:
    case ErrorKind::kInvalidArgument:
      return 2;
    case ErrorKind::kData:
    case ErrorKind::kIo:
    case ErrorKind::kEmptyReport:
    case ErrorKind::kUndefinedMetrics:
    case ErrorKind::kNoSupport:
    case ErrorKind::kInvalidPair:
      return 3;
    default:
      return 4;
  }
}

std::string Sha256File(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  Require(in.good(), ErrorKind::kIo, "cannot read " + path);
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  char buffer[1 << 15];
  while (in) {
    in.read(buffer, sizeof buffer);
    EVP_DigestUpdate(ctx, buffer, static_cast<size_t>(in.gcount()));
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int length = 0;
  EVP_DigestFinal_ex(ctx, digest, &length);
  EVP_MD_CTX_free(ctx);
  std::ostringstream hex;
  for (unsigned int i = 0; i < length; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << int{digest[i]};
  return hex.str();
}

void WriteFileAtomic(const std::string& path, const std::string& content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    Require(out.good(), ErrorKind::kIo, "cannot write " + tmp);
    out << content;
    Require(out.good(), ErrorKind::kIo, "write failed for " + tmp);
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  Require(!ec, ErrorKind::kIo, "cannot rename " + tmp + " to " + path + ": " + ec.message());
}

RunDirectory::RunDirectory(const std::string& path) : path_(path) {
  std::error_code ec;
  fs::create_directories(path_, ec);
  Require(!ec, ErrorKind::kIo, "cannot create output directory " + path_ + ": " + ec.message());
  lock_ = File(".lock");
  const int fd = ::open(lock_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd < 0) {
    const std::string reason = errno == EEXIST ? "is locked by another run (" + lock_ + ")" : std::strerror(errno);
    lock_.clear();
    Fail(ErrorKind::kIo, "output directory " + path_ + " " + reason);
  }
  const std::string pid = std::to_string(::getpid()) + "\n";
  [[maybe_unused]] const auto written = ::write(fd, pid.data(), pid.size());
  ::close(fd);
}

RunDirectory::~RunDirectory() {
  if (!lock_.empty()) std::remove(lock_.c_str());
}

std::string RunDirectory::File(const std::string& name) const { return (fs::path(path_) / name).string(); }

void RunDirectory::AddInput(const std::string& file) {
  if (std::find(inputs_.begin(), inputs_.end(), file) == inputs_.end()) inputs_.push_back(file);
}

void RunDirectory::AddOutput(const std::string& name) {
  if (std::find(outputs_.begin(), outputs_.end(), name) == outputs_.end()) outputs_.push_back(name);
}

void RunDirectory::AddTiming(const std::string& stage, double seconds) { timings_.emplace_back(stage, seconds); }

void RunDirectory::WriteManifest(const std::string& command, const Config& config, std::uint64_t seed) const {
  nlohmann::ordered_json j;
  j["command"] = command;
  j["seed"] = seed;
  j["config"] = config.ToString();
  j["inputs"] = nlohmann::ordered_json::object();
  for (const auto& f : inputs_) j["inputs"][f] = Sha256File(f);
  j["outputs"] = nlohmann::ordered_json::object();
  for (const auto& f : outputs_) j["outputs"][f] = Sha256File(File(f));
  j["timings_s"] = nlohmann::ordered_json::object();
  for (const auto& [stage, s] : timings_) j["timings_s"][stage] = s;
  WriteFileAtomic(File("manifest.json"), j.dump(2) + "\n");
}

namespace {

class StageClock {
 public:
  StageClock(RunDirectory* run, std::string stage)
      : run_(run), stage_(std::move(stage)), start_(std::chrono::steady_clock::now()) {}
  ~StageClock() {
    run_->AddTiming(stage_, std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count());
  }

 private:
  RunDirectory* run_;
  std::string stage_;
  std::chrono::steady_clock::time_point start_;
};

// Re-labels library errors with the stage that raised them.
template <typename F>
void Stage(const std::string& name, F&& body) {
  try {
    body();
  } catch (const NonConvergenceError& e) {
    throw Error(e.kind(), name + ": " + e.what());
  } catch (const Error& e) {
    throw Error(e.kind(), name + ": " + e.what());
  }
}

std::string Resolve(const std::string& configured, const RunDirectory* run, const std::string& run_dir,
                    const std::string& default_name) {
  if (!configured.empty()) return configured;
  if (run != nullptr) return run->File(default_name);
  return (fs::path(run_dir) / default_name).string();
}

void RequireFile(const std::string& path, const std::string& what) {
  Require(fs::is_regular_file(path), ErrorKind::kData, what + " not found: " + path);
}

struct SceneBundle {
  Config config;
  SceneSpec spec;
  CorruptionConfig corruption;
  ScenarioTruth truth;
};

SceneBundle LoadScene(const std::string& path, std::optional<std::uint64_t> seed = std::nullopt) {
  SceneBundle b;
  b.config = Config::Load(path);
  if (seed) {
    b.config.Set("scene", "seed", std::to_string(*seed));
    b.config.Set("corruption", "seed", std::to_string(*seed));
  }
  b.spec = SceneSpec::FromConfig(b.config);
  b.corruption = CorruptionConfig::FromConfig(b.config);
  b.truth = BuildScene(b.spec);
  return b;
}

std::string SceneText(const Config& config) {
  // Only the sections that define the scene, so pipeline settings do not
  // change the bundle bytes.
  Config scene;
  for (const auto& [section, keys] : config.sections()) {
    if (section != "scene" && section != "camera" && section != "objects" && section != "texture" &&
        section != "corruption") {
      continue;
    }
    for (const auto& [key, value] : keys) {
      if (section == "camera" && (key == "hfov" || key == "literal_intrinsics")) continue;
      scene.Set(section, key, value);
    }
  }
  return scene.ToString();
}

std::string ToText(const std::vector<Detection>& dets, bool embeddings) {
  std::ostringstream out;
  WriteDetections(out, dets, embeddings);
  return out.str();
}

std::vector<PoseSE3> LoadPoses(const std::string& path, int frames) {
  const auto records = ReadPoseFile(path);
  std::vector<PoseSE3> poses(static_cast<size_t>(frames));
  std::vector<bool> seen(static_cast<size_t>(frames), false);
  for (const auto& r : records) {
    Require(r.frame >= 0 && r.frame < frames, ErrorKind::kData, path + ": frame " + std::to_string(r.frame) + " out of range");
    poses[static_cast<size_t>(r.frame)] = r.pose;
    seen[static_cast<size_t>(r.frame)] = true;
  }
  Require(std::all_of(seen.begin(), seen.end(), [](bool s) { return s; }), ErrorKind::kData,
          path + ": every frame needs a pose");
  return poses;
}

std::vector<PoseRecord> ToRecords(const std::vector<PoseSE3>& poses) {
  std::vector<PoseRecord> out;
  for (size_t i = 0; i < poses.size(); ++i) out.push_back({static_cast<int>(i), poses[i]});
  return out;
}

std::vector<PoseSE3> EstimatePoses(const ScenarioTruth& scene, const PipelineConfig& config) {
  if (config.pose_source == PoseSource::kTruth) return scene.poses;
  std::vector<IntensityImage> frames;
  for (int k = 0; k < scene.spec.frames; ++k) frames.push_back(scene.Render(k));
  TrackingOptions opts;
  opts.seed = config.seed;
  opts.depth_filter = config.filter;
  // Metric scale from the median ground depth of the first frame, standing in
  // for an altimeter reading.
  const DenseDepthMap d0 = scene.Depth(0);
  std::vector<double> known;
  for (double d : d0.depth) {
    if (d > 0.0) known.push_back(d);
  }
  Require(!known.empty(), ErrorKind::kData, "first frame sees no ground");
  std::nth_element(known.begin(), known.begin() + static_cast<std::ptrdiff_t>(known.size() / 2), known.end());
  opts.scale_reference = known[known.size() / 2];
  const TrackingResult result = TrackSequence(frames, scene.camera, GradientFeatureProvider(opts.features), opts);
  std::vector<PoseSE3> poses;
  for (const auto& p : result.poses) poses.push_back(scene.poses.front() * p);
  return poses;
}


std::vector<Track> TracksFromDetections(const std::vector<Detection>& rows) {
  std::map<int, Track> by_id;
  for (const auto& d : rows) {
    Track& t = by_id[d.id];
    t.id = d.id;
    t.boxes.push_back(d);
  }
  std::vector<Track> out;
  for (auto& [id, t] : by_id) {
    std::stable_sort(t.boxes.begin(), t.boxes.end(), [](const Detection& a, const Detection& b) { return a.frame < b.frame; });
    t.interpolated.assign(t.boxes.size(), false);
    t.smoothed.assign(t.boxes.size(), false);
    out.push_back(std::move(t));
  }
  return out;
}

std::string Fixed(double v, int digits) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

}  // namespace

DepthProvider::DepthProvider(const ScenarioTruth& scene, const std::vector<PoseSE3>& poses,
                             const PipelineConfig& config)
    : scene_(scene), poses_(poses), config_(config) {}

DenseDepthMap DepthProvider::operator()(int frame) {
  if (config_.depth_source == DepthSource::kTruth) {
    DenseDepthMap d = scene_.Depth(frame);
    if (config_.depth_noise > 0.0) {
      std::mt19937_64 rng(config_.seed * 0x9e3779b97f4a7c15ULL + static_cast<std::uint64_t>(frame));
      std::normal_distribution<double> gauss(0.0, config_.depth_noise);
      for (double& z : d.depth) {
        if (z > 0.0) z *= std::max(0.1, 1.0 + gauss(rng));
      }
    }
    return d;
  }
  const int kf = (frame / config_.window) * config_.window;
  auto it = keyframes_.find(kf);
  if (it == keyframes_.end()) {
    const int last = std::min(scene_.spec.frames, kf + config_.window);
    std::vector<WindowFrame> window;
    for (int k = kf; k < last; ++k) window.push_back({scene_.Render(k), poses_[static_cast<size_t>(k)]});
    DenseDepthMap dense(scene_.camera.width, scene_.camera.height);
    if (window.size() >= 2) {
      const double prior = config_.prior_depth > 0.0
                               ? config_.prior_depth
                               : scene_.spec.camera_height /
                                     std::max(0.1, std::sin(scene_.spec.pitch_deg * std::numbers::pi / 180.0));
      SparseDepthMap seeds;
      seeds.reference = window.front().image;
      FeatureSelectionOptions fo;
      fo.border = config_.filter.block_half_size + 2;
      for (const auto& f : SelectFeatures(seeds.reference, fo)) {
        seeds.entries.push_back({f.pixel, 1.0 / prior, std::pow(0.5 / prior, 2)});
      }
      if (!seeds.entries.empty()) {
        try {
          dense = RunDepthWindow(window, seeds, scene_.camera, config_.filter).dense;
        } catch (const Error& e) {
          if (e.kind() != ErrorKind::kInsufficientSeeds) throw;
        }
      }
      ++windows_run_;
    }
    it = keyframes_.emplace(kf, std::move(dense)).first;
  }
  if (frame == kf) return it->second;
  const PoseSE3 xi = poses_[static_cast<size_t>(frame)].Inverse() * poses_[static_cast<size_t>(kf)];
  return ReprojectDepthMap(it->second, xi, scene_.camera);
}

std::string TopViewSvg(const std::vector<LocalizationRecord>& world) {
  std::map<int, std::vector<Vec2>> lines;
  double x0 = 1e300, x1 = -1e300, z0 = 1e300, z1 = -1e300;
  for (const auto& r : world) {
    lines[r.track_id].emplace_back(r.position.x(), r.position.z());
    x0 = std::min(x0, r.position.x());
    x1 = std::max(x1, r.position.x());
    z0 = std::min(z0, r.position.z());
    z1 = std::max(z1, r.position.z());
  }
  if (world.empty()) x0 = z0 = 0.0, x1 = z1 = 1.0;
  const double span = std::max({x1 - x0, z1 - z0, 1.0});
  const double size = 600.0, margin = 60.0;
  auto sx = [&](double x) { return margin + (x - x0) / span * size; };
  auto sz = [&](double z) { return margin + size - (z - z0) / span * size; };
  static const char* colors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                 "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  std::ostringstream svg;
  const double total = size + 2 * margin;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << total << "\" height=\"" << total
      << "\" viewBox=\"0 0 " << total << ' ' << total << "\">\n";
  svg << "<rect x=\"" << margin << "\" y=\"" << margin << "\" width=\"" << size << "\" height=\"" << size
      << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double fx = x0 + span * i / 4.0, fz = z0 + span * i / 4.0;
    svg << "<text x=\"" << Fixed(sx(fx), 1) << "\" y=\"" << Fixed(margin + size + 18, 1)
        << "\" font-size=\"11\" text-anchor=\"middle\">" << Fixed(fx, 1) << "</text>\n";
    svg << "<text x=\"" << Fixed(margin - 6, 1) << "\" y=\"" << Fixed(sz(fz) + 4, 1)
        << "\" font-size=\"11\" text-anchor=\"end\">" << Fixed(fz, 1) << "</text>\n";
  }
  svg << "<text x=\"" << Fixed(margin + size / 2, 1) << "\" y=\"" << Fixed(total - 12, 1)
      << "\" font-size=\"13\" text-anchor=\"middle\">X (m)</text>\n";
  svg << "<text x=\"16\" y=\"" << Fixed(margin + size / 2, 1) << "\" font-size=\"13\" text-anchor=\"middle\" "
      << "transform=\"rotate(-90 16 " << Fixed(margin + size / 2, 1) << ")\">Z (m)</text>\n";
  int index = 0;
  for (const auto& [id, points] : lines) {
    svg << "<polyline data-track-id=\"" << id << "\" fill=\"none\" stroke=\"" << colors[index++ % 10]
        << "\" stroke-width=\"1.5\" points=\"";
    for (size_t i = 0; i < points.size(); ++i) {
      svg << (i ? " " : "") << Fixed(sx(points[i].x()), 2) << ',' << Fixed(sz(points[i].y()), 2);
    }
    svg << "\"/>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

namespace {

// Stage bodies; `run` owns the output directory.

void SimulateInto(RunDirectory& run, const std::string& spec_path, const StageOptions& options) {
  StageClock clock(&run, "simulate");
  Stage("simulate", [&] {
    SceneBundle b = LoadScene(spec_path, options.seed_override);
    run.AddInput(spec_path);
    WriteFileAtomic(run.File("scene.cfg"), SceneText(b.config));
    std::ostringstream poses;
    WritePoses(poses, ToRecords(b.truth.poses));
    WriteFileAtomic(run.File("truth_poses.txt"), poses.str());
    WriteFileAtomic(run.File("truth_detections.csv"), ToText(b.truth.detections, true));
    std::ostringstream positions;
    WriteLocalization(positions, b.truth.positions);
    WriteFileAtomic(run.File("truth_positions.csv"), positions.str());
    WriteFileAtomic(run.File("detections.csv"), ToText(CorruptDetections(b.truth, b.corruption), true));
    for (const char* f : {"scene.cfg", "truth_poses.txt", "truth_detections.csv", "truth_positions.csv",
                          "detections.csv"}) {
      run.AddOutput(f);
    }
  });
}

std::optional<SceneBundle> OptionalScene(const RunDirectory& run, const PipelineConfig& config) {
  const std::string path = config.scene.empty() ? run.File("scene.cfg") : config.scene;
  if (!fs::is_regular_file(path)) return std::nullopt;
  return LoadScene(path);
}

void TrackInto(RunDirectory& run, const StageOptions& options) {
  StageClock clock(&run, "track");
  Stage("track", [&] {
    const PipelineConfig& cfg = options.pipeline;
    const std::string det_path = Resolve(cfg.detections, &run, run.path(), "detections.csv");
    RequireFile(det_path, "detections");
    const auto detections = ReadDetectionFile(det_path);
    run.AddInput(det_path);

    FrameMotion motion;
    if (auto scene = OptionalScene(run, cfg)) {
      const auto poses = EstimatePoses(scene->truth, cfg);
      std::ostringstream out;
      WritePoses(out, ToRecords(poses));
      WriteFileAtomic(run.File("poses.txt"), out.str());
      run.AddOutput("poses.txt");
      motion = MotionFromPoses(poses, scene->truth.camera,
                               GroundPlane::FromPitch(scene->spec.pitch_deg * std::numbers::pi / 180.0,
                                                      scene->spec.camera_height));
    } else if (!cfg.poses.empty()) {
      Fail(ErrorKind::kConfig, "pose-based motion compensation needs a scene for the camera model");
    }
    const TrackerOutput out = TrackPipeline(detections, motion, cfg.tracker);
    WriteFileAtomic(run.File("tracks.csv"), ToText(FlattenTracks(out.tracks), false));
    run.AddOutput("tracks.csv");
  });
}

void LocalizeInto(RunDirectory& run, const StageOptions& options) {
  StageClock clock(&run, "localize");
  Stage("localize", [&] {
    const PipelineConfig& cfg = options.pipeline;
    const std::string tracks_path = run.File("tracks.csv");
    RequireFile(tracks_path, "track file (run `track` first)");
    auto scene = OptionalScene(run, cfg);
    Require(scene.has_value(), ErrorKind::kData, "localization needs the scene bundle (scene.cfg) for imagery");
    const auto tracks = ReadDetectionFile(tracks_path);
    const std::string poses_path = run.File("poses.txt");
    const auto poses = fs::is_regular_file(poses_path) ? LoadPoses(poses_path, scene->spec.frames) : scene->truth.poses;
    CameraIntrinsics camera = ApproximateIntrinsics(scene->spec.width, scene->spec.height, cfg.hfov_deg,
                                                    cfg.literal_intrinsics ? FocalModel::kLiteral : FocalModel::kTangent);

    DepthProvider depth(scene->truth, poses, cfg);
    std::map<int, std::vector<Detection>> by_frame;
    for (const auto& d : tracks) by_frame[d.frame].push_back(d);
    std::vector<LocalizationRecord> records, world;
    const double flat_height = cfg.height_ref.value_or(cfg.flat_height);
    for (const auto& [frame, dets] : by_frame) {
      Require(frame < scene->spec.frames, ErrorKind::kData, "track frame " + std::to_string(frame) + " beyond the scene");
      GroundPlane plane;
      if (cfg.flat_ground) {
        plane = GroundPlane::FromNormal(Vec3::UnitY(), flat_height);
      } else {
        try {
          plane = EstimateGround(dets, depth(frame), camera, cfg.height_ref, cfg.patch).plane;
        } catch (const Error& e) {
          if (e.kind() != ErrorKind::kNoSupport && e.kind() != ErrorKind::kDegenerateSamples) throw;
          continue;
        }
      }
      for (const auto& d : dets) {
        try {
          const Vec3 c = BackprojectFootpoint(d.box.BottomCenter(), plane, camera);
          records.push_back({frame, d.id, c});
          world.push_back({frame, d.id, poses[static_cast<size_t>(frame)] * c});
        } catch (const Error& e) {
          if (e.kind() != ErrorKind::kHorizonOrAbove) throw;
        }
      }
    }
    std::ostringstream out;
    WriteLocalization(out, records);
    WriteFileAtomic(run.File("localization.csv"), out.str());
    run.AddOutput("localization.csv");
    if (options.plot) {
      WriteFileAtomic(run.File("topview.svg"), TopViewSvg(world));
      run.AddOutput("topview.svg");
    }
  });
}

void EvaluateInto(RunDirectory& run, const StageOptions& options) {
  StageClock clock(&run, "evaluate");
  Stage("evaluate", [&] {
    const PipelineConfig& cfg = options.pipeline;
    const std::string truth_path = Resolve(cfg.truth, &run, run.path(), "truth_detections.csv");
    RequireFile(truth_path, "truth detections");
    const std::string tracks_path = run.File("tracks.csv");
    RequireFile(tracks_path, "track file (run `track` first)");
    const auto truth = ReadDetectionFile(truth_path);
    const auto tracks = ReadDetectionFile(tracks_path);
    run.AddInput(truth_path);

    const MotMetrics m = ComputeMotMetrics(tracks, truth, cfg.eval_iou);
    std::ostringstream table;
    WriteMotTable(table, m);
    WriteFileAtomic(run.File("metrics.txt"), table.str());
    std::ostringstream csv;
    csv << std::setprecision(9) << "mota,idf1,mt,ml,fp,fn,idsw,gt_boxes,gt_tracks\n"
        << m.mota << ',' << m.idf1 << ',' << m.mostly_tracked << ',' << m.mostly_lost << ',' << m.false_positives
        << ',' << m.false_negatives << ',' << m.id_switches << ',' << m.truth_boxes << ',' << m.truth_tracks << '\n';
    WriteFileAtomic(run.File("metrics.csv"), csv.str());
    run.AddOutput("metrics.txt");
    run.AddOutput("metrics.csv");

    const std::string positions_path = Resolve(cfg.truth_positions, &run, run.path(), "truth_positions.csv");
    const std::string loc_path = run.File("localization.csv");
    const auto labels = BucketLabels(cfg.buckets);
    if (fs::is_regular_file(positions_path) && fs::is_regular_file(loc_path)) {
      const auto truth_positions = ReadLocalizationFile(positions_path);
      std::map<std::pair<int, int>, int> truth_of;
      for (const auto& [f, hid, tid] : MatchIdentities(tracks, truth, cfg.eval_iou)) truth_of[{f, hid}] = tid;
      std::vector<LocalizationRecord> matched;
      for (const auto& r : ReadLocalizationFile(loc_path)) {
        const auto it = truth_of.find({r.frame, r.track_id});
        if (it != truth_of.end()) matched.push_back({r.frame, it->second, r.position});
      }
      const auto report = ComputeLocalizationReport(matched, truth_positions, cfg.buckets);
      const std::string name = cfg.flat_ground ? "Det+Trk+Flat_Ground" : "Det+Trk+Ground_Est";
      std::ostringstream text, rows;
      WriteLocalizationTable(text, {name}, {report}, labels);
      WriteLocalizationCsv(rows, {name}, {report});
      WriteFileAtomic(run.File("localization_report.txt"), text.str());
      WriteFileAtomic(run.File("localization_report.csv"), rows.str());
      run.AddOutput("localization_report.txt");
      run.AddOutput("localization_report.csv");
    }

    auto scene = OptionalScene(run, cfg);
    if (cfg.ablation && scene) {
      const std::string det_path = Resolve(cfg.detections, &run, run.path(), "detections.csv");
      RequireFile(det_path, "detections");
      const std::string poses_path = run.File("poses.txt");
      const auto poses =
          fs::is_regular_file(poses_path) ? LoadPoses(poses_path, scene->spec.frames) : scene->truth.poses;
      DepthProvider depth(scene->truth, poses, cfg);
      AblationInput in;
      in.camera = ApproximateIntrinsics(scene->spec.width, scene->spec.height, cfg.hfov_deg,
                                        cfg.literal_intrinsics ? FocalModel::kLiteral : FocalModel::kTangent);
      in.detections = ReadDetectionFile(det_path);
      in.tracks = TracksFromDetections(tracks);
      in.truth_boxes = truth;
      in.truth_positions = scene->truth.positions;
      in.depth = [&depth](int f) { return depth(f); };
      in.flat_height = options.config.Has("ground", "flat_height") ? cfg.flat_height : scene->spec.camera_height;
      in.height_ref = cfg.height_ref;
      in.patch = cfg.patch;
      in.bucket_edges = cfg.buckets;
      const AblationResult r = RunAblation(in);
      const std::vector<std::string> names(std::begin(AblationResult::kModeNames), std::end(AblationResult::kModeNames));
      const std::vector<LocalizationReport> reports(std::begin(r.reports), std::end(r.reports));
      std::ostringstream text, rows;
      WriteLocalizationTable(text, names, reports, labels);
      WriteLocalizationCsv(rows, names, reports);
      WriteFileAtomic(run.File("ablation.txt"), text.str());
      WriteFileAtomic(run.File("ablation.csv"), rows.str());
      run.AddOutput("ablation.txt");
      run.AddOutput("ablation.csv");
    }
  });
}

void RequireSpec(const std::string& spec_path, const StageOptions& options) {
  Require(!spec_path.empty(), ErrorKind::kConfig, "no scene spec given");
  Require(fs::is_regular_file(spec_path), ErrorKind::kConfig, "scene spec not found: " + spec_path);
  // Parse now so that an invalid spec never creates the output directory.
  LoadScene(spec_path, options.seed_override);
}

}  // namespace

void RunSimulate(const std::string& spec_path, const std::string& out_dir, const StageOptions& options) {
  RequireSpec(spec_path, options);
  RunDirectory run(out_dir);
  SimulateInto(run, spec_path, options);
  run.WriteManifest("simulate", options.config, options.pipeline.seed);
}

void RunTrack(const std::string& out_dir, const StageOptions& options) {
  RequireFile(Resolve(options.pipeline.detections, nullptr, out_dir, "detections.csv"), "detections");
  RunDirectory run(out_dir);
  TrackInto(run, options);
  run.WriteManifest("track", options.config, options.pipeline.seed);
}

void RunLocalize(const std::string& out_dir, const StageOptions& options) {
  RequireFile((fs::path(out_dir) / "tracks.csv").string(), "track file (run `track` first)");
  RunDirectory run(out_dir);
  LocalizeInto(run, options);
  run.WriteManifest("localize", options.config, options.pipeline.seed);
}

void RunEvaluate(const std::string& out_dir, const StageOptions& options) {
  RequireFile(Resolve(options.pipeline.truth, nullptr, out_dir, "truth_detections.csv"), "truth detections");
  RequireFile((fs::path(out_dir) / "tracks.csv").string(), "track file (run `track` first)");
  RunDirectory run(out_dir);
  EvaluateInto(run, options);
  run.WriteManifest("evaluate", options.config, options.pipeline.seed);
}

void RunPipeline(const std::string& spec_path, const std::string& out_dir, const StageOptions& options) {
  RequireSpec(spec_path, options);
  RunDirectory run(out_dir);
  SimulateInto(run, spec_path, options);
  TrackInto(run, options);
  LocalizeInto(run, options);
  EvaluateInto(run, options);
  run.WriteManifest("pipeline", options.config, options.pipeline.seed);
}

}  // namespace skyloc
