// Command-line front end: simulate, track, localize, evaluate, pipeline.

#include <skyloc/error.hpp>
#include <skyloc/pipeline.hpp>

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>

namespace {

template <typename T>
void Override(skyloc::Config* config, const std::string& section, const std::string& key,
              const std::optional<T>& value) {
  if (value) config->Set(section, key, std::to_string(*value));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Monocular drone perception: tracking, depth, ground plane and 3D localization"};
  app.require_subcommand(1);

  std::string config_path, out_dir = "run";
  std::optional<std::uint64_t> seed;
  bool plot = false;
  app.add_option("--config", config_path, "key = value config file with [section] headers");
  app.add_option("--seed", seed, "seed for the scene generator and corruption");
  app.add_option("--out", out_dir, "run directory");
  app.add_flag("--plot", plot, "write an SVG top view of the localized tracks");
  app.fallthrough();

  std::string simulate_spec, pipeline_spec;
  auto* simulate = app.add_subcommand("simulate", "generate a synthetic scene bundle");
  simulate->add_option("spec", simulate_spec, "scene spec (defaults to [paths] scene or --config)");

  std::optional<double> iou, score_thresh, height_ref, patch_frac;
  std::optional<int> window, smooth_k;
  std::string detections, truth, buckets;
  bool flat = false, literal = false, no_ablation = false;
  auto* track = app.add_subcommand("track", "tracklet-graph tracking of a detection file");
  for (auto* sub : {track, app.add_subcommand("pipeline", "simulate, track, localize and evaluate")}) {
    sub->add_option("--detections", detections, "detection CSV (default: <out>/detections.csv)");
    sub->add_option("--iou-thresh", iou, "frame-to-frame IOU threshold");
    sub->add_option("--time-window", window, "maximum tracklet gap in frames");
    sub->add_option("--score-thresh", score_thresh, "boxes below this score are smoothed");
    sub->add_option("--smooth-k", smooth_k, "moving-average window in frames");
  }
  auto* pipeline = app.get_subcommand("pipeline");
  pipeline->add_option("spec", pipeline_spec, "scene spec (defaults to [paths] scene or --config)");
  auto* localize = app.add_subcommand("localize", "ground-plane estimation and footpoint back-projection");
  auto* evaluate = app.add_subcommand("evaluate", "tracking metrics and localization error tables");
  for (auto* sub : {localize, pipeline}) {
    sub->add_option("--height-ref", height_ref, "reference camera height in metres");
    sub->add_option("--patch-frac", patch_frac, "ground patch height as a fraction of the box height");
    sub->add_flag("--flat-ground", flat, "assume level ground at the configured height");
    sub->add_flag("--literal-intrinsics", literal, "use the literal focal-length approximation");
  }
  for (auto* sub : {evaluate, pipeline}) {
    sub->add_option("--truth", truth, "truth box CSV (default: <out>/truth_detections.csv)");
    sub->add_option("--buckets", buckets, "distance bucket edges in metres, e.g. 10,25");
    sub->add_flag("--no-ablation", no_ablation, "skip the three-mode localization ablation");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    skyloc::StageOptions options;
    if (!config_path.empty()) options.config = skyloc::Config::Load(config_path);
    skyloc::Config& c = options.config;
    Override(&c, "tracker", "iou_thresh", iou);
    Override(&c, "tracker", "time_window", window);
    Override(&c, "tracker", "score_thresh", score_thresh);
    Override(&c, "tracker", "smooth_k", smooth_k);
    Override(&c, "ground", "height_ref", height_ref);
    Override(&c, "ground", "patch_frac", patch_frac);
    if (flat) c.Set("ground", "flat_ground", "true");
    if (literal) c.Set("camera", "literal_intrinsics", "true");
    if (no_ablation) c.Set("evaluate", "ablation", "false");
    if (!detections.empty()) c.Set("paths", "detections", detections);
    if (!truth.empty()) c.Set("paths", "truth", truth);
    if (!buckets.empty()) c.Set("evaluate", "buckets", buckets);
    if (seed) c.Set("run", "seed", std::to_string(*seed));
    c.RejectUnknown(skyloc::PipelineConfig::KnownKeys());
    options.pipeline = skyloc::PipelineConfig::FromConfig(c);
    options.seed_override = seed;
    options.plot = plot;

    auto spec_for = [&](const std::string& positional) {
      if (!positional.empty()) return positional;
      if (!options.pipeline.scene.empty()) return options.pipeline.scene;
      return config_path;
    };
    if (*simulate) {
      skyloc::RunSimulate(spec_for(simulate_spec), out_dir, options);
    } else if (*track) {
      skyloc::RunTrack(out_dir, options);
    } else if (*localize) {
      skyloc::RunLocalize(out_dir, options);
    } else if (*evaluate) {
      skyloc::RunEvaluate(out_dir, options);
    } else {
      skyloc::RunPipeline(spec_for(pipeline_spec), out_dir, options);
    }
  } catch (const skyloc::Error& e) {
    std::cerr << "skyloc: " << e.what() << " [" << skyloc::ToString(e.kind()) << "]\n";
    return skyloc::ExitCodeFor(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "skyloc: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
