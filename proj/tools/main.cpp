#include <CLI11.hpp>

#include <cstdio>
#include <exception>
#include <iostream>
#include <string>

#include "flowstab/pipeline.hpp"

using namespace flowstab;

int main(int argc, char** argv) {
  CLI::App app{"Lie-group video stabilization from dense 3D scene flow"};
  app.require_subcommand(1);

  std::string config_path;
  std::string group = "se3";
  bool recenter = false;
  int keyframe_interval = 30;
  double alpha = 0.1;
  unsigned seed = 0;
  std::string out_dir;
  app.add_option("--config", config_path, "flat key=value config file");
  const auto* group_opt =
      app.add_option("--group", group, "motion group: se3|sim3|sa3|ga3");
  const auto* recenter_opt =
      app.add_flag("--recenter", recenter, "average induced twists about the centroid");
  const auto* interval_opt = app.add_option("--keyframe-interval",
                                            keyframe_interval, "frames per segment");
  const auto* alpha_opt =
      app.add_option("--alpha", alpha, "warp similarity weight");
  app.add_option("--seed", seed, "seed for synthetic trajectories");
  const auto* out_opt = app.add_option("--out", out_dir, "output directory");

  TrajectorySpec spec;
  spec.kind = "random-smooth";
  auto* synth = app.add_subcommand("synth", "render a synthetic plane dataset");
  synth->add_option("--trajectory", spec.kind,
                    "static|random-smooth|jitter|file");
  synth->add_option("--frames", spec.frames, "number of motion intervals");
  synth->add_option("--twists", spec.twists_path,
                    "per-interval twist rows (sets --trajectory file)");

  std::string data_dir, transforms_csv, render_csv, stabilized_csv,
      constraints_path;
  auto* estimate = app.add_subcommand("estimate", "recover per-interval motion");
  estimate->add_option("data_dir", data_dir, "dataset directory")->required();

  auto* stabilize = app.add_subcommand("stabilize", "solve the corrected path");
  stabilize->add_option("transforms_csv", transforms_csv, "per-interval motions")
      ->required();
  stabilize->add_option("--constraints", constraints_path,
                        "keyframe constraint rows: frame + 16 entries");

  auto* warp = app.add_subcommand("warp", "synthesize stabilized frames");
  warp->add_option("data_dir", data_dir, "dataset directory")->required();
  warp->add_option("render_csv", render_csv, "per-frame render transforms")
      ->required();

  auto* metrics = app.add_subcommand("metrics", "score a stabilized sequence");
  metrics->add_option("stabilized_csv", stabilized_csv, "per-frame poses")
      ->required();
  metrics->add_option("render_csv", render_csv, "per-frame render transforms")
      ->required();
  metrics->add_option("data_dir", data_dir, "dataset directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    PipelineConfig cfg;
    if (!config_path.empty()) cfg = load_pipeline_config(config_path);
    if (group_opt->count() > 0 || config_path.empty()) {
      cfg.group = parse_group_tag(group);
    }
    if (recenter_opt->count() > 0) cfg.recenter = recenter;
    if (interval_opt->count() > 0) cfg.keyframe_interval = keyframe_interval;
    if (alpha_opt->count() > 0) cfg.alpha = alpha;
    if (out_opt->count() > 0) cfg.out_dir = out_dir;

    if (synth->parsed()) {
      spec.seed = seed;
      if (!spec.twists_path.empty()) spec.kind = "file";
      cmd_synth(cfg, spec);
      std::cout << "wrote dataset to " << cfg.out_dir << "\n";
    } else if (estimate->parsed()) {
      const EstimateSummary s = cmd_estimate(cfg, data_dir);
      std::cout << "estimated " << s.intervals << " intervals ("
                << s.low_confidence << " low confidence) into " << cfg.out_dir
                << "\n";
    } else if (stabilize->parsed()) {
      const StabilizeSummary s =
          cmd_stabilize(cfg, transforms_csv, constraints_path);
      std::cout << "stabilized across " << s.keyframes.size() << " keyframes, "
                << (s.converged ? "converged" : "NOT converged")
                << ", total cost " << s.total_cost << "\n";
    } else if (warp->parsed()) {
      cmd_warp(cfg, data_dir, render_csv);
      std::cout << "wrote warped frames to " << cfg.out_dir << "\n";
    } else if (metrics->parsed()) {
      const MetricsReport r = cmd_metrics(cfg, stabilized_csv, render_csv,
                                          data_dir);
      std::cout << "cropping " << r.cropping << ", distortion " << r.distortion
                << ", stability " << r.stability << ", failed "
                << (r.failed ? "true" : "false") << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
