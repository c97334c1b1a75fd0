#pragma once

#include <map>
#include <string>
#include <vector>

#include "flowstab/lie_core.hpp"

namespace flowstab {

// Estimated camera trajectory: right-integrated poses g(t_{i+1}) = g(t_i)
// g(xi(t_i)) from per-interval twists, identity start.
struct CameraPath {
  GroupTag tag = GroupTag::SE3;
  std::vector<int> times;                // frame indices 0..N
  std::vector<AffineTransform> poses;    // size N + 1
  std::vector<Twist> steps;              // xi(t_i), size N

  int frames() const { return static_cast<int>(poses.size()); }
  int last() const { return static_cast<int>(poses.size()) - 1; }
};

CameraPath integrate_path(GroupTag tag, const std::vector<Twist>& twists);

// Inverse-increment twist: g(zeta_bar(xi)) is the exact group inverse of
// g(xi). Translation block -A^-1 v; linear block is -u for the rotation and
// similarity groups and a numeric retraction inverse for the affine ones
// (throws PhiInverseError if that fails to converge).
Twist zeta_bar(const Twist& xi);

// One end-constrained segment of the path: per-frame inverse-increment
// samples, their weighted momenta b = W zeta_bar with finite-difference
// derivatives, and the boundary offsets relative to the estimated path. The
// final sample repeats the last interval's value so the piecewise-linear
// b(t) is defined through the segment's distal frame.
struct PathSegment {
  GroupTag tag = GroupTag::SE3;
  int t0 = 0;
  int tf = 0;
  std::vector<Twist> zeta_bar_samples;  // frames t0..tf
  std::vector<TwistVec> b_samples;      // W * zeta_bar
  std::vector<TwistVec> b_dot_samples;  // central differences, one-sided ends
  CoeffMat W;
  std::vector<AffineTransform> step_transforms;  // g(xi_i), i in [t0, tf)
  AffineTransform start_constraint;
  AffineTransform end_constraint;

  int steps() const { return tf - t0; }
};

PathSegment make_segment(const CameraPath& path, int t0, int tf);
PathSegment make_segment(const CameraPath& path, int t0, int tf,
                         const AffineTransform& start, const AffineTransform& end);
// W must be symmetric positive definite (n x n); throws otherwise.
PathSegment make_segment(const CameraPath& path, int t0, int tf,
                         const AffineTransform& start, const AffineTransform& end,
                         const CoeffMat& W);

// Momentum-form optimality ODE right-hand side:
// zeta_dot = W^-1 [b_dot + ad(zeta)^T (W zeta - b)].
TwistVec ep_rhs(GroupTag tag, const TwistVec& zeta, const TwistVec& b,
                const TwistVec& b_dot, const CoeffMat& W);

// Classical RK4 over the segment, `substeps` steps per frame, b(t) piecewise
// linear between frame samples. Returns per-frame samples t0..tf. Throws on a
// non-finite state.
std::vector<Twist> integrate_ep(const PathSegment& seg, const Twist& zeta0,
                                int substeps = 4);

inline constexpr double kDefaultKeyframeAngle = 1.0471975511965976;  // 60 deg
inline constexpr double kDefaultKeyframeVFloor = 0.005;              // m/frame

// Frame indices of segment boundaries: 0, the last frame, every `interval`
// frames, and every frame where the per-step translation direction turns by
// more than angle_threshold while both step speeds exceed v_floor.
std::vector<int> select_keyframes(const CameraPath& path, int interval = 30,
                                  double angle_threshold = kDefaultKeyframeAngle,
                                  double v_floor = kDefaultKeyframeVFloor);

struct ShootOptions {
  double tolerance = 1e-8;    // distal residual: |t| + |sigma-log coords|
  int max_iterations = 200;   // trial steps, accepted or rejected
  double fd_epsilon = 1e-6;   // forward-difference Jacobian step
  double lambda0 = 1e-6;      // initial Levenberg damping
  int waypoints = 8;          // intermediate targets along the initial gap
  int substeps = 4;           // RK4 substeps per frame
};

struct StabilizationResult {
  std::vector<Twist> zeta_star;                   // per frame
  std::vector<AffineTransform> corrections;       // per step, g(zeta_star)
  std::vector<AffineTransform> stabilized_poses;  // per frame (global op only)
  std::vector<AffineTransform> render_transforms; // per frame (global op only)
  double cost = 0.0;        // quadratic deviation functional, trapezoidal
  int iterations = 0;
  double residual = 0.0;
  bool converged = false;
};

// Shooting solve of the end-constrained variational problem: iterate on the
// initial condition of integrate_ep until the distal mismatch vanishes,
// tracking intermediate waypoint targets with a damped least-squares update
// on a forward-difference Jacobian. Never throws on non-convergence: returns
// the best iterate with converged = false.
StabilizationResult shoot_segment(const PathSegment& seg, const ShootOptions& opts = {});

// Stitches per-segment solutions into the global stabilized pose sequence:
// g_stab(0) = g_c(0) * start_constraint, then
// g_stab(i+1) = g_stab(i) * g(xi_i) * g(zeta*_i), and per-frame render
// transforms r(i) = g_stab(i)^-1 * g_c(i). Segments must tile the path.
StabilizationResult stabilized_path(const CameraPath& path,
                                    const std::vector<PathSegment>& segments,
                                    const std::vector<StabilizationResult>& per_segment);

// Keyframe-constraints file: lines "frame_index m00 m01 ... m33" (16 row-major
// entries); '#' comments and blank lines skipped. Parse errors carry the line
// number.
std::map<int, Eigen::Matrix4d> load_keyframe_constraints(const std::string& path);

}  // namespace flowstab
