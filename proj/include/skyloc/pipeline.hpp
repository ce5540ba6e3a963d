#pragma once

// Batch stages behind the command-line tool: simulate, track, localize,
// evaluate. Each stage reads its inputs from a run directory (or explicit
// paths) and writes plain-text outputs next to a manifest.

#include <skyloc/config.hpp>
#include <skyloc/depth_filter.hpp>
#include <skyloc/evaluation.hpp>
#include <skyloc/ground_plane.hpp>
#include <skyloc/synthetic_scene.hpp>
#include <skyloc/tracker.hpp>

#include <chrono>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace skyloc {

enum class DepthSource { kTruth, kFilter };
enum class PoseSource { kTruth, kOdometry };

struct PipelineConfig {
  // [paths]; empty means "inside the run directory".
  std::string scene;       // scene spec for `simulate`
  std::string detections;  // detector output CSV
  std::string truth;       // truth boxes CSV
  std::string truth_positions;
  std::string poses;

  // [camera]
  double hfov_deg = 90.0;
  bool literal_intrinsics = false;

  TrackerConfig tracker;  // [tracker]

  // [depth]
  DepthSource depth_source = DepthSource::kFilter;
  int window = 30;  // frames fused per keyframe
  DepthFilterOptions filter;
  double prior_depth = 0.0;  // m; 0 derives it from the scene geometry
  double depth_noise = 0.0;  // relative noise on truth depth rasters

  // [pose]
  PoseSource pose_source = PoseSource::kTruth;

  // [ground]
  PatchOptions patch;
  bool flat_ground = false;
  double flat_height = 10.0;
  std::optional<double> height_ref;

  // [evaluate]
  std::vector<double> buckets{10.0, 25.0};
  double eval_iou = 0.5;
  bool ablation = true;

  std::uint64_t seed = 1;

  static PipelineConfig FromConfig(const Config& config);
  // Known keys, "section.key".
  static std::set<std::string> KnownKeys();
};

// Stage-labelled failure; keeps the library error kind for exit codes.
int ExitCodeFor(ErrorKind kind);

// Exclusive owner of an output directory for one run. Creates the directory,
// takes `.lock` with O_EXCL and records outputs and stage timings for the
// manifest.
class RunDirectory {
 public:
  explicit RunDirectory(const std::string& path);
  ~RunDirectory();
  RunDirectory(const RunDirectory&) = delete;
  RunDirectory& operator=(const RunDirectory&) = delete;

  const std::string& path() const { return path_; }
  std::string File(const std::string& name) const;

  void AddInput(const std::string& file);
  void AddOutput(const std::string& name);
  void AddTiming(const std::string& stage, double seconds);

  // Writes manifest.json via a temporary file and rename.
  void WriteManifest(const std::string& command, const Config& config, std::uint64_t seed) const;

 private:
  std::string path_;
  std::string lock_;
  std::vector<std::string> inputs_;
  std::vector<std::string> outputs_;
  std::vector<std::pair<std::string, double>> timings_;
};

std::string Sha256File(const std::string& path);

// Writes `content` to `path` through a temporary file and rename.
void WriteFileAtomic(const std::string& path, const std::string& content);

struct StageOptions {
  Config config;
  PipelineConfig pipeline;
  // Replaces the scene and corruption seeds of the scene spec when set.
  std::optional<std::uint64_t> seed_override;
  bool plot = false;
};

// Each stage validates its inputs before creating or touching the run
// directory.
void RunSimulate(const std::string& spec_path, const std::string& out_dir, const StageOptions& options);
void RunTrack(const std::string& out_dir, const StageOptions& options);
void RunLocalize(const std::string& out_dir, const StageOptions& options);
void RunEvaluate(const std::string& out_dir, const StageOptions& options);
void RunPipeline(const std::string& spec_path, const std::string& out_dir, const StageOptions& options);

// Per-frame depth for localization: exact rasters, or the depth filter run
// over windows starting at every `window`-th frame and reprojected into the
// frames it covers.
class DepthProvider {
 public:
  DepthProvider(const ScenarioTruth& scene, const std::vector<PoseSE3>& poses, const PipelineConfig& config);
  DenseDepthMap operator()(int frame);
  int windows_run() const { return windows_run_; }

 private:
  const ScenarioTruth& scene_;
  std::vector<PoseSE3> poses_;
  PipelineConfig config_;
  std::map<int, DenseDepthMap> keyframes_;
  int windows_run_ = 0;
};

// Top view (world X right, Z forward, metres) with one polyline per track.
std::string TopViewSvg(const std::vector<LocalizationRecord>& world_positions);

}  // namespace skyloc
