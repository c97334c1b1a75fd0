#pragma once

#include <map>
#include <string>
#include <vector>

#include "flowstab/path_solver.hpp"
#include "flowstab/render_metrics.hpp"
#include "flowstab/scene_io.hpp"
#include "flowstab/twist_estimation.hpp"

namespace flowstab {

// Everything a subcommand needs, filled from a flat key=value config file
// plus command-line overrides. Dataset directories written by cmd_synth carry
// their own intrinsics.txt, which takes precedence when present.
struct PipelineConfig {
  GroupTag group = GroupTag::SE3;
  Intrinsics K;
  FilterPolicy policy;
  bool recenter = false;
  int keyframe_interval = 30;
  double keyframe_angle = kDefaultKeyframeAngle;
  double keyframe_v_floor = kDefaultKeyframeVFloor;
  ShootOptions shoot;
  double alpha = 0.1;  // warp similarity weight, must stay positive
  int stride = 1;      // pixel subsampling for backprojection
  std::string out_dir = ".";
};

void validate_config(const PipelineConfig& cfg);

// Flat "key value" / "key = value" lines, '#' comments; unknown keys are
// errors. Starts from the built-in defaults.
PipelineConfig load_pipeline_config(const std::string& path);

GroupTag parse_group_tag(const std::string& name);  // se3|sim3|sa3|ga3
std::string group_tag_name(GroupTag tag);

// Per-frame transforms as CSV rows "index,m00,...,m33,tag" with a comment
// header; doubles are printed round-trip exact.
void write_transforms_csv(const std::string& path,
                          const std::vector<AffineTransform>& transforms,
                          int first_index = 0);
std::vector<AffineTransform> read_transforms_csv(const std::string& path);

// Twist rows "index,c0,...,c(n-1),tag,low_confidence".
void write_twists_csv(const std::string& path, const std::vector<Twist>& twists,
                      const std::vector<std::uint8_t>& low_confidence);
std::vector<Twist> read_twists_csv(const std::string& path);

struct TrajectorySpec {
  std::string kind = "static";  // static | random-smooth | jitter | file
  int frames = 30;              // motion intervals; frame count is one more
  unsigned seed = 0;
  std::string twists_path;      // per-interval twist rows when kind == file
};

// Ground-truth per-interval twists for a trajectory spec.
std::vector<Twist> make_trajectory(GroupTag tag, const TrajectorySpec& spec);

// Renders a textured fronto-parallel plane observed under the trajectory:
// depth_NNNNNN.png and intensity_NNNNNN.png per frame, flow_NNNNNN.qsf per
// interval, truth_transforms.csv, truth_twists.csv and intrinsics.txt in
// cfg.out_dir.
void cmd_synth(const PipelineConfig& cfg, const TrajectorySpec& spec);

struct EstimateSummary {
  int intervals = 0;
  int low_confidence = 0;
};

// Reads depth_NNNNNN.png + flow_NNNNNN.qsf from data_dir and writes
// transforms.csv + twists.csv into cfg.out_dir. A missing flow file is an
// error naming the frame index.
EstimateSummary cmd_estimate(const PipelineConfig& cfg, const std::string& data_dir);

struct StabilizeSummary {
  std::vector<int> keyframes;
  bool converged = true;
  double total_cost = 0.0;
};

// Reads a transforms CSV (group tag taken from the rows), solves the
// variational correction per keyframe segment and writes stabilized.csv,
// render.csv and diagnostics.json into cfg.out_dir. Non-converged segments
// are flagged in the diagnostics, not fatal.
StabilizeSummary cmd_stabilize(const PipelineConfig& cfg,
                               const std::string& transforms_csv,
                               const std::string& constraints_path = "");

// Warps intensity frames by the per-frame render transforms through the
// content-preserving grid; writes warped_NNNNNN.png + mask_NNNNNN.png.
void cmd_warp(const PipelineConfig& cfg, const std::string& data_dir,
              const std::string& render_csv);

// Aggregate + per-frame metrics as JSON (metrics.json in cfg.out_dir).
MetricsReport cmd_metrics(const PipelineConfig& cfg,
                          const std::string& stabilized_csv,
                          const std::string& render_csv,
                          const std::string& data_dir);

}  // namespace flowstab
