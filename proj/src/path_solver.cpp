#include "flowstab/path_solver.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace flowstab {

CameraPath integrate_path(GroupTag tag, const std::vector<Twist>& twists) {
  CameraPath path;
  path.tag = tag;
  path.times.resize(twists.size() + 1);
  for (std::size_t i = 0; i < path.times.size(); ++i) path.times[i] = static_cast<int>(i);
  path.poses.reserve(twists.size() + 1);
  path.poses.push_back(identity_transform(tag));
  path.steps = twists;
  for (std::size_t i = 0; i < twists.size(); ++i) {
    if (twists[i].tag != tag) {
      throw std::invalid_argument("integrate_path: twist " + std::to_string(i) +
                                  " has a different group tag");
    }
    if (!twists[i].coords.allFinite()) {
      throw std::invalid_argument("integrate_path: twist " + std::to_string(i) +
                                  " is not finite");
    }
    const AffineTransform g = group_from_twist(twists[i]);
    AffineTransform next;
    next.tag = tag;
    next.matrix = path.poses.back().matrix * g.matrix;
    path.poses.push_back(next);
  }
  return path;
}

Twist zeta_bar(const Twist& xi) {
  const int n = group_dim(xi.tag);
  const Eigen::Matrix3d A = group_from_twist(xi).linear();
  TwistVec z(n);
  z.head<3>() = -A.partialPivLu().solve(xi.translation());
  switch (xi.tag) {
    case GroupTag::SE3:
    case GroupTag::SIM3:
      // sigma(-u) is exactly the inverse linear block for these groups.
      z.tail(n - 3) = -xi.linear_coords();
      break;
    case GroupTag::SA3:
    case GroupTag::GA3:
      z.tail(n - 3) = sigma_inverse(Eigen::Matrix3d(A.inverse()), xi.tag);
      break;
  }
  return Twist(xi.tag, z);
}

TwistVec ep_rhs(GroupTag tag, const TwistVec& zeta, const TwistVec& b,
                const TwistVec& b_dot, const CoeffMat& W) {
  const int n = group_dim(tag);
  if (zeta.size() != n || b.size() != n || b_dot.size() != n || W.rows() != n ||
      W.cols() != n) {
    throw std::invalid_argument("ep_rhs: dimension mismatch");
  }
  const TwistVec momentum_gap = W * zeta - b;
  const TwistVec m = b_dot + ad_matrix(Twist(tag, zeta)).transpose() * momentum_gap;
  return W.ldlt().solve(m);
}

namespace {

CoeffMat validated_weight(GroupTag tag, const CoeffMat& W) {
  const int n = group_dim(tag);
  if (W.rows() != n || W.cols() != n) {
    throw std::invalid_argument("segment weight must be " + std::to_string(n) + "x" +
                                std::to_string(n));
  }
  if ((W - W.transpose()).cwiseAbs().maxCoeff() >
      1e-12 * std::max(1.0, W.cwiseAbs().maxCoeff())) {
    throw std::invalid_argument("segment weight must be symmetric");
  }
  const Eigen::LLT<CoeffMat> llt(W);
  if (llt.info() != Eigen::Success) {
    throw std::invalid_argument("segment weight must be positive definite");
  }
  return W;
}

PathSegment build_segment(const CameraPath& path, int t0, int tf,
                          const AffineTransform& start, const AffineTransform& end,
                          const CoeffMat& W) {
  if (t0 < 0 || tf <= t0 || tf > path.last()) {
    throw std::invalid_argument("segment range [" + std::to_string(t0) + ", " +
                                std::to_string(tf) + "] is outside the path");
  }
  if (start.tag != path.tag || end.tag != path.tag) {
    throw std::invalid_argument("segment constraints carry a different group tag");
  }

  PathSegment seg;
  seg.tag = path.tag;
  seg.t0 = t0;
  seg.tf = tf;
  seg.W = validated_weight(path.tag, W);
  seg.start_constraint = start;
  seg.end_constraint = end;

  const int m = tf - t0;
  const bool identity_w = seg.W.isIdentity(0.0);
  seg.zeta_bar_samples.reserve(m + 1);
  seg.b_samples.reserve(m + 1);
  for (int i = 0; i <= m; ++i) {
    // Final sample repeats the last interval so b(t) extends through tf.
    const int idx = t0 + std::min(i, m - 1);
    seg.zeta_bar_samples.push_back(zeta_bar(path.steps[static_cast<std::size_t>(idx)]));
    const TwistVec& c = seg.zeta_bar_samples.back().coords;
    seg.b_samples.push_back(identity_w ? c : TwistVec(seg.W * c));
  }
  seg.b_dot_samples.resize(m + 1);
  seg.b_dot_samples[0] = seg.b_samples[1] - seg.b_samples[0];
  seg.b_dot_samples[m] = seg.b_samples[m] - seg.b_samples[m - 1];
  for (int i = 1; i < m; ++i) {
    seg.b_dot_samples[i] = 0.5 * (seg.b_samples[i + 1] - seg.b_samples[i - 1]);
  }

  seg.step_transforms.reserve(m);
  for (int i = 0; i < m; ++i) {
    seg.step_transforms.push_back(group_from_twist(path.steps[t0 + i]));
  }
  return seg;
}

}  // namespace

PathSegment make_segment(const CameraPath& path, int t0, int tf) {
  return build_segment(path, t0, tf, identity_transform(path.tag),
                       identity_transform(path.tag),
                       CoeffMat::Identity(group_dim(path.tag), group_dim(path.tag)));
}

PathSegment make_segment(const CameraPath& path, int t0, int tf,
                         const AffineTransform& start, const AffineTransform& end) {
  return build_segment(path, t0, tf, start, end,
                       CoeffMat::Identity(group_dim(path.tag), group_dim(path.tag)));
}

PathSegment make_segment(const CameraPath& path, int t0, int tf,
                         const AffineTransform& start, const AffineTransform& end,
                         const CoeffMat& W) {
  return build_segment(path, t0, tf, start, end, W);
}

std::vector<Twist> integrate_ep(const PathSegment& seg, const Twist& zeta0,
                                int substeps) {
  const int n = group_dim(seg.tag);
  const int m = seg.steps();
  if (zeta0.tag != seg.tag) {
    throw std::invalid_argument("integrate_ep: initial twist has a different tag");
  }
  if (substeps < 1) throw std::invalid_argument("integrate_ep: substeps must be >= 1");
  if (m < 1 || seg.b_samples.size() != static_cast<std::size_t>(m + 1) ||
      seg.b_dot_samples.size() != static_cast<std::size_t>(m + 1)) {
    throw std::invalid_argument("integrate_ep: segment samples are inconsistent");
  }

  const bool identity_w = seg.W.isIdentity(0.0);
  Eigen::LDLT<CoeffMat> w_factor;
  if (!identity_w) w_factor.compute(seg.W);

  // b and b_dot are piecewise linear between the per-frame samples.
  const auto rhs = [&](double tau, const TwistVec& z) -> TwistVec {
    int k = static_cast<int>(std::floor(tau));
    if (k >= m) k = m - 1;
    if (k < 0) k = 0;
    const double th = tau - k;
    const TwistVec b = (1.0 - th) * seg.b_samples[k] + th * seg.b_samples[k + 1];
    const TwistVec bd =
        (1.0 - th) * seg.b_dot_samples[k] + th * seg.b_dot_samples[k + 1];
    const TwistVec gap = identity_w ? TwistVec(z - b) : TwistVec(seg.W * z - b);
    const TwistVec mo = bd + ad_matrix(Twist(seg.tag, z)).transpose() * gap;
    return identity_w ? mo : TwistVec(w_factor.solve(mo));
  };

  std::vector<Twist> out;
  out.reserve(m + 1);
  out.push_back(zeta0);
  TwistVec z = zeta0.coords;
  const double h = 1.0 / substeps;
  for (int i = 0; i < m; ++i) {
    for (int s = 0; s < substeps; ++s) {
      const double t = i + s * h;
      const TwistVec k1 = rhs(t, z);
      const TwistVec k2 = rhs(t + 0.5 * h, z + (0.5 * h) * k1);
      const TwistVec k3 = rhs(t + 0.5 * h, z + (0.5 * h) * k2);
      const TwistVec k4 = rhs(t + h, z + h * k3);
      z += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    if (!z.allFinite()) {
      throw std::runtime_error("integrate_ep: non-finite state after frame " +
                               std::to_string(seg.t0 + i + 1));
    }
    out.emplace_back(seg.tag, z);
  }
  (void)n;
  return out;
}

std::vector<int> select_keyframes(const CameraPath& path, int interval,
                                  double angle_threshold, double v_floor) {
  if (path.poses.empty()) throw std::invalid_argument("select_keyframes: empty path");
  if (interval < 1) throw std::invalid_argument("select_keyframes: interval must be >= 1");
  const int last = path.last();

  std::vector<int> keys;
  keys.push_back(0);
  for (int i = interval; i < last; i += interval) keys.push_back(i);
  for (int i = 1; i < last; ++i) {
    const Eigen::Vector3d a = path.steps[i - 1].translation();
    const Eigen::Vector3d b = path.steps[i].translation();
    const double na = a.norm(), nb = b.norm();
    if (na <= v_floor || nb <= v_floor) continue;
    const double c = std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
    if (std::acos(c) > angle_threshold) keys.push_back(i);
  }
  if (last > 0) keys.push_back(last);
  std::sort(keys.begin(), keys.end());
  keys.erase(std::unique(keys.begin(), keys.end()), keys.end());
  return keys;
}

namespace {

struct SegmentEval {
  TwistVec y;              // stacked distal mismatch: translation; sigma-log
  double residual = std::numeric_limits<double>::infinity();
  std::vector<Twist> trajectory;
  std::vector<AffineTransform> corrections;
};

SegmentEval evaluate_initial_condition(const PathSegment& seg, const Twist& zeta0,
                                       int substeps, const Eigen::Matrix4d& desired_inv) {
  SegmentEval ev;
  ev.trajectory = integrate_ep(seg, zeta0, substeps);
  const int m = seg.steps();
  Eigen::Matrix4d achieved = seg.start_constraint.matrix;
  ev.corrections.reserve(m);
  for (int i = 0; i < m; ++i) {
    ev.corrections.push_back(group_from_twist(ev.trajectory[i]));
    achieved = achieved * seg.step_transforms[i].matrix * ev.corrections.back().matrix;
  }
  const Eigen::Matrix4d mism = desired_inv * achieved;
  const int n = group_dim(seg.tag);
  ev.y.resize(n);
  ev.y.head<3>() = mism.topRightCorner<3, 1>();
  ev.y.tail(n - 3) = sigma_inverse(Eigen::Matrix3d(mism.topLeftCorner<3, 3>()), seg.tag);
  ev.residual = ev.y.head<3>().norm() + ev.y.tail(n - 3).norm();
  return ev;
}

double deviation_cost(const PathSegment& seg, const std::vector<Twist>& traj) {
  const bool identity_w = seg.W.isIdentity(0.0);
  const auto q = [&](int i) {
    const TwistVec d = traj[i].coords - seg.zeta_bar_samples[i].coords;
    return identity_w ? d.squaredNorm() : d.dot(TwistVec(seg.W * d));
  };
  double cost = 0.0;
  double prev = q(0);
  for (int i = 1; i <= seg.steps(); ++i) {
    const double cur = q(i);
    cost += 0.5 * (prev + cur);
    prev = cur;
  }
  return cost;
}

}  // namespace

StabilizationResult shoot_segment(const PathSegment& seg, const ShootOptions& opts) {
  const int n = group_dim(seg.tag);
  const int m = seg.steps();
  if (m < 1) throw std::invalid_argument("shoot_segment: segment needs >= 2 frames");
  if (opts.tolerance <= 0.0 || opts.max_iterations < 0 || opts.waypoints < 1 ||
      opts.substeps < 1 || opts.fd_epsilon <= 0.0 || opts.lambda0 <= 0.0) {
    throw std::invalid_argument("shoot_segment: invalid options");
  }

  Eigen::Matrix4d desired = Eigen::Matrix4d::Identity();
  for (const AffineTransform& s : seg.step_transforms) desired *= s.matrix;
  desired *= seg.end_constraint.matrix;
  AffineTransform desired_t;
  desired_t.tag = seg.tag;
  desired_t.matrix = desired;
  const Eigen::Matrix4d desired_inv = affine_inverse(desired_t).matrix;

  Twist zeta0 = seg.zeta_bar_samples.front();
  SegmentEval base = evaluate_initial_condition(seg, zeta0, opts.substeps, desired_inv);
  SegmentEval best = base;
  int iterations = 0;

  if (base.residual > opts.tolerance) {
    const TwistVec y_start = base.y;
    const double spacing = y_start.norm() / opts.waypoints;
    int wp = 1;
    double lambda = opts.lambda0;

    const auto target_of = [&](int k) -> TwistVec {
      if (k >= opts.waypoints) return TwistVec::Zero(n);
      return TwistVec(y_start * (1.0 - static_cast<double>(k) / opts.waypoints));
    };

    while (iterations < opts.max_iterations) {
      while (wp < opts.waypoints &&
             (base.y - target_of(wp)).norm() <= std::max(0.5 * spacing, opts.tolerance)) {
        ++wp;
      }
      const TwistVec target = target_of(wp);
      const Eigen::VectorXd F = base.y - target;

      Eigen::MatrixXd J(n, n);
      bool jacobian_ok = true;
      for (int k = 0; k < n; ++k) {
        TwistVec probe = zeta0.coords;
        probe[k] += opts.fd_epsilon;
        try {
          const SegmentEval ev = evaluate_initial_condition(seg, Twist(seg.tag, probe),
                                                            opts.substeps, desired_inv);
          J.col(k) = (ev.y - base.y) / opts.fd_epsilon;
        } catch (const std::exception&) {
          jacobian_ok = false;
          break;
        }
      }
      if (!jacobian_ok) break;

      bool accepted = false;
      while (iterations < opts.max_iterations) {
        Eigen::MatrixXd normal = J.transpose() * J;
        normal.diagonal().array() += lambda;
        const Eigen::VectorXd rhs_ls = -J.transpose() * F;
        TwistVec delta = normal.ldlt().solve(rhs_ls);
        Twist trial(seg.tag, TwistVec(zeta0.coords + delta));
        ++iterations;
        SegmentEval ev;
        bool ok = true;
        try {
          ev = evaluate_initial_condition(seg, trial, opts.substeps, desired_inv);
        } catch (const std::exception&) {
          ok = false;
        }
        if (ok && (ev.y - target).norm() < F.norm()) {
          zeta0 = trial;
          base = std::move(ev);
          lambda = std::max(lambda / 10.0, 1e-14);
          accepted = true;
          break;
        }
        lambda *= 10.0;
        if (lambda > 1e12) break;
      }
      if (!accepted) break;  // damping exhausted or budget spent

      if (base.residual < best.residual) best = base;
      if (base.residual <= opts.tolerance) break;
    }
  }

  StabilizationResult out;
  out.zeta_star = best.trajectory;
  out.corrections = best.corrections;
  out.cost = deviation_cost(seg, best.trajectory);
  out.iterations = iterations;
  out.residual = best.residual;
  out.converged = best.residual <= opts.tolerance;
  return out;
}

StabilizationResult stabilized_path(const CameraPath& path,
                                    const std::vector<PathSegment>& segments,
                                    const std::vector<StabilizationResult>& per_segment) {
  if (segments.empty() || segments.size() != per_segment.size()) {
    throw std::invalid_argument("stabilized_path: segment/result count mismatch");
  }
  if (segments.front().t0 != 0 || segments.back().tf != path.last()) {
    throw std::invalid_argument("stabilized_path: segments do not tile the path");
  }
  for (std::size_t j = 0; j < segments.size(); ++j) {
    const PathSegment& seg = segments[j];
    const StabilizationResult& res = per_segment[j];
    if (seg.tag != path.tag) {
      throw std::invalid_argument("stabilized_path: segment tag mismatch");
    }
    if (j + 1 < segments.size() && segments[j + 1].t0 != seg.tf) {
      throw std::invalid_argument("stabilized_path: segments are not contiguous");
    }
    const auto m = static_cast<std::size_t>(seg.steps());
    if (res.corrections.size() != m || res.zeta_star.size() != m + 1) {
      throw std::invalid_argument("stabilized_path: result size mismatch at segment " +
                                  std::to_string(j));
    }
  }

  const int total = path.frames();
  StabilizationResult out;
  out.converged = true;
  out.stabilized_poses.resize(total);
  out.render_transforms.resize(total);
  out.zeta_star.reserve(total);
  out.corrections.reserve(path.steps.size());

  Eigen::Matrix4d g = path.poses[0].matrix * segments[0].start_constraint.matrix;
  out.stabilized_poses[0] = AffineTransform{path.tag, g};
  for (std::size_t j = 0; j < segments.size(); ++j) {
    const PathSegment& seg = segments[j];
    const StabilizationResult& res = per_segment[j];
    for (int i = 0; i < seg.steps(); ++i) {
      g = g * seg.step_transforms[i].matrix * res.corrections[i].matrix;
      out.stabilized_poses[seg.t0 + i + 1] = AffineTransform{path.tag, g};
      out.zeta_star.push_back(res.zeta_star[i]);
      out.corrections.push_back(res.corrections[i]);
    }
    out.cost += res.cost;
    out.iterations += res.iterations;
    out.residual = std::max(out.residual, res.residual);
    out.converged = out.converged && res.converged;
  }
  out.zeta_star.push_back(per_segment.back().zeta_star.back());

  for (int i = 0; i < total; ++i) {
    AffineTransform r;
    r.tag = path.tag;
    r.matrix = affine_inverse(out.stabilized_poses[i]).matrix * path.poses[i].matrix;
    out.render_transforms[i] = r;
  }
  return out;
}

std::map<int, Eigen::Matrix4d> load_keyframe_constraints(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open constraints file: " + path);

  std::map<int, Eigen::Matrix4d> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    std::istringstream ss(line);
    long frame = 0;
    if (!(ss >> frame)) {
      std::string token;
      std::istringstream probe(line);
      if (!(probe >> token)) continue;  // blank line
      throw std::runtime_error(path + ": line " + std::to_string(line_no) +
                               ": bad frame index");
    }
    Eigen::Matrix4d M;
    for (int r = 0; r < 4; ++r) {
      for (int c = 0; c < 4; ++c) {
        double v = 0.0;
        if (!(ss >> v)) {
          throw std::runtime_error(path + ": line " + std::to_string(line_no) +
                                   ": expected 16 matrix entries");
        }
        M(r, c) = v;
      }
    }
    std::string extra;
    if (ss >> extra) {
      throw std::runtime_error(path + ": line " + std::to_string(line_no) +
                               ": trailing tokens after the 16 matrix entries");
    }
    if (frame < 0) {
      throw std::runtime_error(path + ": line " + std::to_string(line_no) +
                               ": negative frame index");
    }
    if (!out.emplace(static_cast<int>(frame), M).second) {
      throw std::runtime_error(path + ": line " + std::to_string(line_no) +
                               ": duplicate frame index " + std::to_string(frame));
    }
  }
  return out;
}

}  // namespace flowstab
