#pragma once

#include <cstdint>
#include <vector>

#include "flowstab/lie_core.hpp"

namespace flowstab {

// Dense per-pixel 3D points (m, camera frame) and velocities (m/frame),
// row-major grid with a validity mask.
struct PointFlowField {
  int width = 0;
  int height = 0;
  std::vector<Eigen::Vector3d> points;
  std::vector<Eigen::Vector3d> velocities;
  std::vector<std::uint8_t> valid;

  int size() const { return width * height; }
  int valid_count() const;
};

PointFlowField make_field(int width, int height);

struct FilterPolicy {
  double z_min = 0.3;     // m
  double z_max = 10.0;    // m
  double v_abs_max = 1.0; // m/frame
  double mad_kappa = 5.0;
  int d_min = 100;        // minimum valid-pixel support
};

void validate_policy(const FilterPolicy& policy);  // throws on inconsistent bounds

struct LowConfidenceError : std::runtime_error {
  int support;
  explicit LowConfidenceError(int support_);
};

// Per-point twist induced by velocity v at point x: translation block v,
// linear block from the closed form per group.
Twist induced_twist(GroupTag tag, const Eigen::Vector3d& x, const Eigen::Vector3d& v);

// Invalidates pixels with depth outside [z_min, z_max], non-finite values,
// zero-norm points, ||v|| > v_abs_max, or ||v|| beyond median + kappa * MAD
// (MAD rule active only when MAD > 0).
PointFlowField filter_flow(const PointFlowField& field, const FilterPolicy& policy);

// Arithmetic mean of induced twists over valid pixels, fixed summation order.
// Throws LowConfidenceError when the usable support is below d_min.
Twist camera_twist(GroupTag tag, const PointFlowField& field, int d_min = 100);

// Mean induced twist measured about the valid-point centroid, mapped back to
// the camera frame through the adjoint of the centroid translation.
Twist recentered_camera_twist(GroupTag tag, const PointFlowField& field, int d_min = 100);

struct MotionEstimate {
  AffineTransform transform;
  Twist twist;
  bool low_confidence = false;
  int support = 0;  // valid pixels after filtering
};

// filter -> average -> exponentiate; degrades to identity with a flag when
// support is too low.
MotionEstimate motion_between_frames(GroupTag tag, const PointFlowField& field,
                                     const FilterPolicy& policy, bool recenter = false);

}  // namespace flowstab
