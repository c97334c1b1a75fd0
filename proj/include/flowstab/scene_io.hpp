#pragma once

#include <string>
#include <vector>

#include "flowstab/lie_core.hpp"
#include "flowstab/png_io.hpp"
#include "flowstab/twist_estimation.hpp"

namespace flowstab {

// Pinhole camera model. depth_scale is the integer raster units per meter.
struct Intrinsics {
  double fx = 0.0;
  double fy = 0.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 0;
  int height = 0;
  double depth_scale = 5000.0;
};

// Throws std::invalid_argument on non-positive focal lengths, dimensions or
// depth scale.
void validate_intrinsics(const Intrinsics& K);

// Text config with keys fx, fy, cx, cy, width, height, depth_scale, one
// "key value" or "key = value" entry per line, '#' starts a comment.
// Every key except depth_scale (default 5000) is required.
Intrinsics load_intrinsics(const std::string& path);

// Per-pixel z in meters; valid means z > 0 and finite.
struct DepthMap {
  int width = 0;
  int height = 0;
  std::vector<double> depth;
  std::vector<std::uint8_t> valid;

  int size() const { return width * height; }
};

// 16-bit single-channel PNG; z = raw / depth_scale, raw 0 marks an invalid
// pixel. Throws on a missing file, wrong bit depth, or size mismatch vs K.
DepthMap load_depth(const std::string& path, const Intrinsics& K);

// Back-projected camera-frame points on a (possibly subsampled) pixel grid.
// Grid cell (c, r) corresponds to source pixel (c * stride, r * stride).
struct PointGrid {
  int width = 0;
  int height = 0;
  int stride = 1;
  std::vector<Eigen::Vector3d> points;
  std::vector<std::uint8_t> valid;

  int size() const { return width * height; }
};

// x = ((i - cx) z / fx, (j - cy) z / fy, z) with i = column, j = row.
PointGrid backproject(const DepthMap& depth, const Intrinsics& K, int stride = 1);

// Pinhole projection to pixel coordinates (i, j); caller guards z > 0.
Eigen::Vector2d project(const Eigen::Vector3d& x, const Intrinsics& K);

// Dense per-pixel 3D velocities (m/frame) as read from or written to a scene
// flow file; an all-NaN triple marks an invalid pixel on disk.
struct FlowGrid {
  int width = 0;
  int height = 0;
  std::vector<Eigen::Vector3d> velocities;
  std::vector<std::uint8_t> valid;

  int size() const { return width * height; }
};

// Binary flow format: magic "QSF1", two unsigned 32-bit little-endian
// dimensions, then height*width*3 little-endian single-precision floats
// (dx, dy, dz), row-major. Round trips are byte-identical.
FlowGrid read_flow(const std::string& path);
void write_flow(const std::string& path, const FlowGrid& flow);

// Exact synthetic flow from a ground-truth motion: finite displacement
// v = L x + t - x for the transform overload, first-order field
// v = v_lin + V x for the twist overload.
PointFlowField synth_flow(const PointGrid& points, const AffineTransform& g_true);
PointFlowField synth_flow(const PointGrid& points, const Twist& xi_true);

// Pairs back-projected points with file flow at the same pixels; both rasters
// must share the full-resolution dimensions.
PointFlowField assemble_field(const DepthMap& depth, const FlowGrid& flow,
                              const Intrinsics& K, int stride = 1);

struct TumFrame {
  double timestamp = 0.0;  // depth timestamp, seconds
  std::string rgb_path;
  std::string depth_path;
  DepthMap depth;
};

// Association file lines are "ts_rgb rgb_path ts_depth depth_path"; '#'
// comments and blank lines are skipped; frames come back sorted by depth
// timestamp. Parse errors carry the line number, missing rasters the path.
std::vector<TumFrame> load_tum_sequence(const std::string& dir,
                                        const std::string& association_file,
                                        const Intrinsics& K);

}  // namespace flowstab
