#pragma once

#include <array>
#include <vector>

#include "flowstab/lie_core.hpp"
#include "flowstab/scene_io.hpp"

namespace flowstab {

// Single-channel float image, row-major, intensities nominally in [0, 1].
struct ImageF {
  int width = 0;
  int height = 0;
  std::vector<float> pixels;

  int size() const { return width * height; }
  float at(int x, int y) const { return pixels[y * width + x]; }
  float& at(int x, int y) { return pixels[y * width + x]; }

  static ImageF zero(int width, int height);
};

// 3x3 vertex lattice over the frame (2x2 cells). The source lattice is the
// uniform grid over [0, width-1] x [0, height-1]; vertices holds the warped
// positions of those lattice points, row-major (r * 3 + c). Cells keep
// positive signed area in the image orientation (y down) on success.
struct WarpGrid {
  int width = 0;
  int height = 0;
  std::array<Eigen::Vector2d, 9> vertices;

  Eigen::Vector2d source_vertex(int r, int c) const;
  const Eigen::Vector2d& vertex(int r, int c) const { return vertices[r * 3 + c]; }
  Eigen::Vector2d& vertex(int r, int c) { return vertices[r * 3 + c]; }

  static WarpGrid uniform(int width, int height);
};

struct ControlPair {
  Eigen::Vector2d src;
  Eigen::Vector2d dst;
};

// Projects each valid scene point x to src = project(x) and
// dst = project(r x), dropping points that land behind the camera. The
// surviving list is subsampled uniformly to at most max_points pairs.
std::vector<ControlPair> reproject_control_points(const PointGrid& points,
                                                  const AffineTransform& r,
                                                  const Intrinsics& K,
                                                  int max_points = 2000);

// Least-squares content-preserving warp: minimizes E_d + alpha E_s over the
// nine vertices, where E_d penalizes bilinear mismatch at the control pairs
// and E_s penalizes per-triangle deviation from a similarity of the source
// cells. Throws std::invalid_argument on fewer than four pairs and
// std::runtime_error on a rank-deficient system or a folded result cell.
WarpGrid cpw_solve(int width, int height, const std::vector<ControlPair>& pairs,
                   double alpha = 0.1);

struct WarpResult {
  ImageF image;
  std::vector<std::uint8_t> mask;  // true where the output pixel is covered
};

// Inverse bilinear resampling: every output pixel inside a warped cell is
// bilinearly sampled from the input at the cell preimage; uncovered pixels
// are zero with mask false. Throws std::runtime_error on a degenerate cell.
WarpResult warp_frame(const ImageF& image, const WarpGrid& grid);

struct MetricsReport {
  double cropping = 0.0;
  double distortion = 0.0;
  double stability = 0.0;
  bool failed = false;
};

// Frequency-domain smoothness of a pose sequence: for each of the three
// translation components and the rotation angle of the linear part, the
// fraction of AC energy (bins 2..N/2 of a direct DFT) that falls in bins
// 2..6; the score is the mean over the four components and a constant
// sequence scores 1. Throws std::invalid_argument on fewer than 8 poses.
double metric_stability(const std::vector<AffineTransform>& poses);

// Per frame, the four frame corners are lifted to the plane z = median
// depth, mapped by the render transform, clipped to z > 0 and projected
// back, giving a warped quad Q. Cropping is the mean of
// area(Q intersect frame) / area(frame); distortion is the worst-frame
// anisotropy (sigma_min / sigma_max) of the least-squares affine corner
// fit; failure is any frame whose quad misses the frame entirely.
// Throws std::invalid_argument on size mismatch or nonpositive depth.
double metric_cropping(const std::vector<AffineTransform>& renders,
                       const std::vector<double>& median_depths,
                       const Intrinsics& K);
double metric_distortion(const std::vector<AffineTransform>& renders,
                         const std::vector<double>& median_depths,
                         const Intrinsics& K);
bool detect_failure(const std::vector<AffineTransform>& renders,
                    const std::vector<double>& median_depths,
                    const Intrinsics& K);

// Aggregates the three metrics; a detected failure forces all of them to 0.
MetricsReport compute_metrics(const std::vector<AffineTransform>& stabilized_poses,
                              const std::vector<AffineTransform>& renders,
                              const std::vector<double>& median_depths,
                              const Intrinsics& K);

// Median z over the valid points of a grid; throws when none are valid.
double median_depth(const PointGrid& points);

}  // namespace flowstab
