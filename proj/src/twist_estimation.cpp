#include "flowstab/twist_estimation.hpp"

#include <algorithm>
#include <cmath>

namespace flowstab {

int PointFlowField::valid_count() const {
  int count = 0;
  for (std::uint8_t f : valid) count += (f != 0);
  return count;
}

PointFlowField make_field(int width, int height) {
  if (width < 0 || height < 0)
    throw std::invalid_argument("make_field: negative dimensions");
  PointFlowField f;
  f.width = width;
  f.height = height;
  f.points.assign(static_cast<size_t>(width) * height, Eigen::Vector3d::Zero());
  f.velocities.assign(static_cast<size_t>(width) * height, Eigen::Vector3d::Zero());
  f.valid.assign(static_cast<size_t>(width) * height, 1);
  return f;
}

void validate_policy(const FilterPolicy& p) {
  if (!(p.z_min < p.z_max)) throw std::invalid_argument("filter policy: z_min must be below z_max");
  if (!(p.v_abs_max > 0)) throw std::invalid_argument("filter policy: v_abs_max must be positive");
  if (!(p.mad_kappa > 0)) throw std::invalid_argument("filter policy: mad_kappa must be positive");
  if (p.d_min < 1) throw std::invalid_argument("filter policy: d_min must be at least 1");
}

LowConfidenceError::LowConfidenceError(int support_)
    : std::runtime_error("camera twist support " + std::to_string(support_) +
                         " below the confidence floor"),
      support(support_) {}

namespace {

// Writes the linear-block coordinates induced at t = x/(x.x) into c[3..].
template <GroupTag TAG>
inline void accumulate_linear(const Eigen::Vector3d& t, const Eigen::Vector3d& v,
                              double* c) {
  if constexpr (TAG == GroupTag::SE3 || TAG == GroupTag::SIM3 || TAG == GroupTag::SA3) {
    c[3] += t.y() * v.z() - t.z() * v.y();
    c[4] += t.z() * v.x() - t.x() * v.z();
    c[5] += t.x() * v.y() - t.y() * v.x();
  }
  if constexpr (TAG == GroupTag::SIM3) {
    c[6] += t.dot(v);
  }
  if constexpr (TAG == GroupTag::SA3) {
    c[6] += t.y() * v.z() + t.z() * v.y();
    c[7] += t.x() * v.z() + t.z() * v.x();
    c[8] += t.x() * v.y() + t.y() * v.x();
    c[9] += t.x() * v.x() - t.y() * v.y();
    c[10] += t.y() * v.y() - t.z() * v.z();
  }
  if constexpr (TAG == GroupTag::GA3) {
    for (int col = 0; col < 3; ++col)
      for (int row = 0; row < 3; ++row) c[3 + 3 * col + row] += t[col] * v[row];
  }
}

template <GroupTag TAG>
void accumulate_row(const Eigen::Vector3d* xs, const Eigen::Vector3d* vs,
                    const std::uint8_t* valid, int w, const Eigen::Vector3d& center,
                    double* acc, long& support) {
  for (int i = 0; i < w; ++i) {
    if (!valid[i]) continue;
    const Eigen::Vector3d x = xs[i] - center;
    const double n2 = x.squaredNorm();
    if (!(n2 > 1e-18)) continue;  // zero-norm points carry no direction: skip, not error
    const Eigen::Vector3d& v = vs[i];
    const Eigen::Vector3d t = x / n2;
    acc[0] += v.x();
    acc[1] += v.y();
    acc[2] += v.z();
    accumulate_linear<TAG>(t, v, acc);
    ++support;
  }
}

Twist mean_induced_twist(GroupTag tag, const PointFlowField& field,
                         const Eigen::Vector3d& center, int d_min) {
  const int n = group_dim(tag);
  double total[12] = {0};
  long support = 0;
  for (int row = 0; row < field.height; ++row) {
    double acc[12] = {0};
    const size_t base = static_cast<size_t>(row) * field.width;
    const Eigen::Vector3d* xs = field.points.data() + base;
    const Eigen::Vector3d* vs = field.velocities.data() + base;
    const std::uint8_t* valid = field.valid.data() + base;
    switch (tag) {
      case GroupTag::SE3:
        accumulate_row<GroupTag::SE3>(xs, vs, valid, field.width, center, acc, support);
        break;
      case GroupTag::SIM3:
        accumulate_row<GroupTag::SIM3>(xs, vs, valid, field.width, center, acc, support);
        break;
      case GroupTag::SA3:
        accumulate_row<GroupTag::SA3>(xs, vs, valid, field.width, center, acc, support);
        break;
      case GroupTag::GA3:
        accumulate_row<GroupTag::GA3>(xs, vs, valid, field.width, center, acc, support);
        break;
    }
    for (int k = 0; k < n; ++k) total[k] += acc[k];
  }
  if (support < d_min) throw LowConfidenceError(static_cast<int>(support));
  TwistVec c(n);
  for (int k = 0; k < n; ++k) c[k] = total[k] / static_cast<double>(support);
  return Twist(tag, c);
}

}  // namespace

Twist induced_twist(GroupTag tag, const Eigen::Vector3d& x, const Eigen::Vector3d& v) {
  const double n2 = x.squaredNorm();
  if (!(n2 > 0.0) || !x.allFinite() || !v.allFinite())
    throw std::invalid_argument("induced_twist: point must be finite with positive norm");
  const Eigen::Vector3d t = x / n2;
  TwistVec c = TwistVec::Zero(group_dim(tag));
  c[0] = v.x();
  c[1] = v.y();
  c[2] = v.z();
  double raw[12] = {0};
  switch (tag) {
    case GroupTag::SE3: accumulate_linear<GroupTag::SE3>(t, v, raw); break;
    case GroupTag::SIM3: accumulate_linear<GroupTag::SIM3>(t, v, raw); break;
    case GroupTag::SA3: accumulate_linear<GroupTag::SA3>(t, v, raw); break;
    case GroupTag::GA3: accumulate_linear<GroupTag::GA3>(t, v, raw); break;
  }
  for (int k = 3; k < group_dim(tag); ++k) c[k] = raw[k];
  return Twist(tag, c);
}

PointFlowField filter_flow(const PointFlowField& field, const FilterPolicy& policy) {
  validate_policy(policy);
  PointFlowField out = field;
  const int total = out.size();
  for (int i = 0; i < total; ++i) {
    if (!out.valid[i]) continue;
    const Eigen::Vector3d& x = out.points[i];
    const Eigen::Vector3d& v = out.velocities[i];
    const bool finite = x.allFinite() && v.allFinite();
    if (!finite || x.z() < policy.z_min || x.z() > policy.z_max ||
        !(x.squaredNorm() > 0.0) || v.norm() > policy.v_abs_max) {
      out.valid[i] = 0;
    }
  }

  std::vector<double> norms;
  norms.reserve(out.valid.size());
  for (int i = 0; i < total; ++i)
    if (out.valid[i]) norms.push_back(out.velocities[i].norm());
  if (norms.empty()) return out;

  // Lower median, deterministic for even counts.
  const auto lower_median = [](std::vector<double>& xs) {
    const size_t mid = (xs.size() - 1) / 2;
    std::nth_element(xs.begin(), xs.begin() + mid, xs.end());
    return xs[mid];
  };
  std::vector<double> tmp = norms;
  const double median = lower_median(tmp);
  for (size_t i = 0; i < tmp.size(); ++i) tmp[i] = std::abs(norms[i] - median);
  const double mad = lower_median(tmp);
  if (mad > 0.0) {
    const double limit = median + policy.mad_kappa * mad;
    for (int i = 0; i < total; ++i)
      if (out.valid[i] && out.velocities[i].norm() > limit) out.valid[i] = 0;
  }
  return out;
}

Twist camera_twist(GroupTag tag, const PointFlowField& field, int d_min) {
  return mean_induced_twist(tag, field, Eigen::Vector3d::Zero(), d_min);
}

Twist recentered_camera_twist(GroupTag tag, const PointFlowField& field, int d_min) {
  Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
  long count = 0;
  for (int i = 0; i < field.size(); ++i) {
    if (!field.valid[i]) continue;
    centroid += field.points[i];
    ++count;
  }
  if (count < d_min) throw LowConfidenceError(static_cast<int>(count));
  centroid /= static_cast<double>(count);
  const Twist centered = mean_induced_twist(tag, field, centroid, d_min);
  return Twist(tag, translated_adjoint(tag, centroid) * centered.coords);
}

MotionEstimate motion_between_frames(GroupTag tag, const PointFlowField& field,
                                     const FilterPolicy& policy, bool recenter) {
  const PointFlowField filtered = filter_flow(field, policy);
  MotionEstimate est;
  est.support = filtered.valid_count();
  try {
    est.twist = recenter ? recentered_camera_twist(tag, filtered, policy.d_min)
                         : camera_twist(tag, filtered, policy.d_min);
    est.transform = group_from_twist(est.twist);
  } catch (const LowConfidenceError& e) {
    est.twist = zero_twist(tag);
    est.transform = identity_transform(tag);
    est.low_confidence = true;
    est.support = e.support;
  }
  return est;
}

}  // namespace flowstab
