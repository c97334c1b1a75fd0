#include "flowstab/twist_estimation.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

#include "test_util.hpp"

using namespace flowstab;
using testutil::max_abs_diff;

namespace {

const GroupTag kTags[] = {GroupTag::SE3, GroupTag::SIM3, GroupTag::SA3, GroupTag::GA3};

// Canonical-adjoint route: solve Lambda^T y = (v, 0) with t = x / (x.x).
TwistVec adjoint_route_twist(GroupTag tag, const Eigen::Vector3d& x,
                             const Eigen::Vector3d& v) {
  const int n = group_dim(tag);
  const Eigen::MatrixXd lam = translated_adjoint(tag, x / x.squaredNorm());
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n);
  rhs.head<3>() = v;
  const Eigen::VectorXd y = lam.transpose().partialPivLu().solve(rhs);
  return TwistVec(y);
}

// Point-symmetric planar cloud: pairs (p, -p) adjacent, at z-offset d.
PointFlowField symmetric_ring_field(int pairs, double radius, double z_offset) {
  PointFlowField f = make_field(2 * pairs, 1);
  for (int k = 0; k < pairs; ++k) {
    const double a = 2.0 * M_PI * k / pairs + 0.35;
    const Eigen::Vector3d p(radius * std::cos(a), radius * std::sin(a), 0.0);
    f.points[2 * k] = p + Eigen::Vector3d(0, 0, z_offset);
    f.points[2 * k + 1] = -p + Eigen::Vector3d(0, 0, z_offset);
  }
  return f;
}

}  // namespace

TEST_CASE("induced_twist closed forms") {
  const Twist a = induced_twist(GroupTag::SE3, {0, 0, 1}, {1, 0, 0});
  TwistVec ea(6);
  ea << 1, 0, 0, 0, 1, 0;
  CHECK((a.coords - ea).cwiseAbs().maxCoeff() == 0.0);

  const Twist b = induced_twist(GroupTag::SIM3, {0, 0, 1}, {0, 0, 0.1});
  TwistVec eb(7);
  eb << 0, 0, 0.1, 0, 0, 0, 0.1;
  CHECK((b.coords - eb).cwiseAbs().maxCoeff() == 0.0);

  CHECK_THROWS_AS((void)induced_twist(GroupTag::SE3, Eigen::Vector3d::Zero(), {1, 0, 0}),
                  std::invalid_argument);

  // GA3 linear block reshaped column-major equals v x^T / (x.x).
  std::mt19937 rng(31);
  for (int i = 0; i < 200; ++i) {
    Eigen::Vector3d x = testutil::random_vec3(rng, 2.0);
    if (x.norm() < 1e-3) x = Eigen::Vector3d(0.5, -0.2, 1.0);
    const Eigen::Vector3d v = testutil::random_vec3(rng, 1.0);
    const Twist g = induced_twist(GroupTag::GA3, x, v);
    const Eigen::Matrix3d outer = v * x.transpose() / x.squaredNorm();
    const Eigen::Matrix3d lin = linear_from_coords(GroupTag::GA3, g.linear_coords());
    CHECK(max_abs_diff(lin, outer) < 1e-14);
  }
}

TEST_CASE("induced_twist agrees with the canonical adjoint route") {
  std::mt19937 rng(32);
  for (GroupTag tag : kTags) {
    double worst = 0.0;
    for (int i = 0; i < 500; ++i) {
      Eigen::Vector3d x = testutil::random_vec3(rng, 3.0);
      if (x.norm() < 1e-2) x = Eigen::Vector3d(0.3, 0.1, 1.2);
      const Eigen::Vector3d v = testutil::random_vec3(rng, 2.0);
      const Twist closed = induced_twist(tag, x, v);
      const TwistVec canonical = adjoint_route_twist(tag, x, v);
      worst = std::max(worst, (closed.coords - canonical).cwiseAbs().maxCoeff());
    }
    CHECK(worst < 1e-10);
  }
}

TEST_CASE("filter_flow") {
  FilterPolicy policy;

  SUBCASE("equal velocities trigger no MAD rejections") {
    PointFlowField f = make_field(20, 20);
    for (int i = 0; i < f.size(); ++i) {
      f.points[i] = Eigen::Vector3d(0.1, 0.2, 2.0);
      f.velocities[i] = Eigen::Vector3d(0.01, 0, 0);
    }
    CHECK(filter_flow(f, policy).valid_count() == f.size());
  }

  SUBCASE("a gross velocity outlier is invalidated") {
    PointFlowField f = make_field(100, 100);
    std::mt19937 rng(33);
    std::uniform_real_distribution<double> mag(0.5e-4, 1.5e-4);
    for (int i = 0; i < f.size(); ++i) {
      f.points[i] = Eigen::Vector3d(0, 0, 1.0);
      f.velocities[i] = Eigen::Vector3d(mag(rng), 0, 0);
    }
    // Outlier at 1000x the median scale, still below v_abs_max.
    f.velocities[5050] = Eigen::Vector3d(0.1, 0, 0);
    const PointFlowField out = filter_flow(f, policy);
    CHECK(out.valid[5050] == 0);
    CHECK(out.valid_count() == f.size() - 1);

    // Brute-force oracle: lower median and MAD over the pre-MAD survivors.
    std::vector<double> norms;
    for (int i = 0; i < f.size(); ++i) norms.push_back(f.velocities[i].norm());
    std::vector<double> sorted = norms;
    std::sort(sorted.begin(), sorted.end());
    const double median = sorted[(sorted.size() - 1) / 2];
    std::vector<double> dev;
    for (double x : norms) dev.push_back(std::abs(x - median));
    std::sort(dev.begin(), dev.end());
    const double mad = dev[(dev.size() - 1) / 2];
    REQUIRE(mad > 0.0);
    for (int i = 0; i < f.size(); ++i) {
      const bool keep = norms[i] <= median + policy.mad_kappa * mad;
      CHECK(static_cast<bool>(out.valid[i]) == keep);
    }
  }

  SUBCASE("empty stays empty") {
    PointFlowField f = make_field(4, 4);
    std::fill(f.valid.begin(), f.valid.end(), 0);
    CHECK(filter_flow(f, policy).valid_count() == 0);
  }

  SUBCASE("depth, magnitude, and finiteness bounds") {
    PointFlowField f = make_field(6, 1);
    for (int i = 0; i < 6; ++i) f.points[i] = Eigen::Vector3d(0.1, 0.1, 2.0);
    f.points[0].z() = 0.1;    // below z_min
    f.points[1].z() = 11.0;   // above z_max
    f.points[2].z() = std::numeric_limits<double>::quiet_NaN();
    f.velocities[3] = Eigen::Vector3d(2.0, 0, 0);  // above v_abs_max
    f.points[4] = Eigen::Vector3d::Zero();         // zero norm (also below z_min)
    const PointFlowField out = filter_flow(f, policy);
    CHECK(out.valid[0] == 0);
    CHECK(out.valid[1] == 0);
    CHECK(out.valid[2] == 0);
    CHECK(out.valid[3] == 0);
    CHECK(out.valid[4] == 0);
    CHECK(out.valid[5] == 1);
  }

  SUBCASE("policy validation") {
    FilterPolicy bad = policy;
    bad.z_min = 5.0;
    bad.z_max = 1.0;
    CHECK_THROWS_AS((void)filter_flow(make_field(1, 1), bad), std::invalid_argument);
  }
}

TEST_CASE("camera_twist") {
  SUBCASE("zero flow gives the zero twist") {
    PointFlowField f = make_field(16, 16);
    for (int i = 0; i < f.size(); ++i) f.points[i] = Eigen::Vector3d(0.3, -0.1, 1.5);
    for (GroupTag tag : kTags) {
      CHECK(camera_twist(tag, f, 1).coords.cwiseAbs().maxCoeff() == 0.0);
    }
  }

  SUBCASE("symmetric pair cancels rotation exactly") {
    PointFlowField f = make_field(2, 1);
    const double delta = 0.01;
    f.points[0] = Eigen::Vector3d(1, 0, 1);
    f.points[1] = Eigen::Vector3d(-1, 0, 1);
    f.velocities[0] = f.velocities[1] = Eigen::Vector3d(0, 0, delta);
    const Twist t = camera_twist(GroupTag::SE3, f, 1);
    TwistVec expected(6);
    expected << 0, 0, delta, 0, 0, 0;
    CHECK((t.coords - expected).cwiseAbs().maxCoeff() == 0.0);
  }

  SUBCASE("matches the brute-force mean of induced twists") {
    std::mt19937 rng(34);
    PointFlowField f = make_field(40, 30);
    std::uniform_real_distribution<double> z(0.5, 5.0);
    for (int i = 0; i < f.size(); ++i) {
      f.points[i] = Eigen::Vector3d(testutil::random_vec3(rng, 1.0).x(),
                                    testutil::random_vec3(rng, 1.0).y(), z(rng));
      f.velocities[i] = testutil::random_vec3(rng, 0.05);
      f.valid[i] = (i % 7 != 0);
    }
    for (GroupTag tag : kTags) {
      TwistVec sum = TwistVec::Zero(group_dim(tag));
      long count = 0;
      for (int i = 0; i < f.size(); ++i) {
        if (!f.valid[i]) continue;
        sum += induced_twist(tag, f.points[i], f.velocities[i]).coords;
        ++count;
      }
      const TwistVec mean = sum / static_cast<double>(count);
      CHECK((camera_twist(tag, f, 1).coords - mean).cwiseAbs().maxCoeff() < 1e-12);
    }
  }

  SUBCASE("low support raises LowConfidenceError") {
    PointFlowField f = make_field(3, 1);
    for (int i = 0; i < 3; ++i) f.points[i] = Eigen::Vector3d(0, 0, 1);
    CHECK_THROWS_AS((void)camera_twist(GroupTag::SE3, f, 100), LowConfidenceError);
  }
}

TEST_CASE("forward-axis rotation fields recover exactly") {
  const double wz = 0.02;
  const Eigen::Vector3d w(0, 0, wz);

  SUBCASE("origin-centered planar cloud: full twist exact") {
    PointFlowField f = symmetric_ring_field(64, 0.8, 0.0);
    for (int i = 0; i < f.size(); ++i) f.velocities[i] = w.cross(f.points[i]);
    const Twist t = camera_twist(GroupTag::SE3, f, 1);
    TwistVec expected(6);
    expected << 0, 0, 0, 0, 0, wz;
    CHECK((t.coords - expected).cwiseAbs().maxCoeff() < 1e-12);
  }

  SUBCASE("offset centroid: axis and zero translation exact, magnitude attenuated") {
    PointFlowField f = symmetric_ring_field(64, 0.8, 2.0);
    for (int i = 0; i < f.size(); ++i) f.velocities[i] = w.cross(f.points[i]);
    const Twist t = camera_twist(GroupTag::SE3, f, 1);
    CHECK(t.translation().cwiseAbs().maxCoeff() < 1e-12);
    CHECK(std::abs(t.coords[3]) < 1e-12);
    CHECK(std::abs(t.coords[4]) < 1e-12);
    CHECK(t.coords[5] > 0.0);
    CHECK(t.coords[5] < wz);
  }
}

TEST_CASE("similarity scale recovery is exact on any cloud") {
  std::mt19937 rng(35);
  const double s = 0.003;
  PointFlowField f = make_field(50, 10);
  for (int i = 0; i < f.size(); ++i) {
    f.points[i] = testutil::random_vec3(rng, 1.0) + Eigen::Vector3d(0, 0, 3.0);
    f.velocities[i] = s * f.points[i];
  }
  const Twist t = camera_twist(GroupTag::SIM3, f, 1);
  CHECK(std::abs(t.coords[6] - s) < 1e-12);
  // x cross (s*x) is zero only up to the rounding of s*x.
  CHECK(t.coords.segment<3>(3).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("camera_twist is linear in the velocity field") {
  std::mt19937 rng(36);
  PointFlowField fa = make_field(20, 20), fb = make_field(20, 20), fc = make_field(20, 20);
  for (int i = 0; i < fa.size(); ++i) {
    const Eigen::Vector3d p = testutil::random_vec3(rng, 1.0) + Eigen::Vector3d(0, 0, 2.5);
    fa.points[i] = fb.points[i] = fc.points[i] = p;
    fa.velocities[i] = testutil::random_vec3(rng, 0.05);
    fb.velocities[i] = testutil::random_vec3(rng, 0.05);
    fc.velocities[i] = 2.0 * fa.velocities[i] - 0.5 * fb.velocities[i];
  }
  for (GroupTag tag : kTags) {
    const TwistVec combo = 2.0 * camera_twist(tag, fa, 1).coords -
                           0.5 * camera_twist(tag, fb, 1).coords;
    CHECK((camera_twist(tag, fc, 1).coords - combo).cwiseAbs().maxCoeff() < 1e-13);
  }
}

TEST_CASE("recentered_camera_twist") {
  SUBCASE("origin centroid reduces to camera_twist") {
    PointFlowField f = symmetric_ring_field(32, 0.7, 0.0);
    std::mt19937 rng(37);
    for (int i = 0; i < f.size(); ++i) f.velocities[i] = testutil::random_vec3(rng, 0.05);
    for (GroupTag tag : kTags) {
      CHECK((recentered_camera_twist(tag, f, 1).coords - camera_twist(tag, f, 1).coords)
                .cwiseAbs()
                .maxCoeff() < 1e-12);
    }
  }

  SUBCASE("octagon rotation field about an offset center recovers w exactly") {
    const Eigen::Vector3d w(0, 0, 0.05);
    PointFlowField f = make_field(8, 1);
    const Eigen::Vector3d c(0.4, -0.2, 2.0);
    for (int k = 0; k < 8; ++k) {
      const double a = 2.0 * M_PI * k / 8.0;
      f.points[k] = c + Eigen::Vector3d(std::cos(a), std::sin(a), 0.0);
      f.velocities[k] = w.cross(f.points[k] - c);
    }
    const Twist t = recentered_camera_twist(GroupTag::SE3, f, 1);
    // Camera-frame twist of a screw about the axis through c: v(x) = w x (x - c),
    // so the translation coordinate is -w x c.
    TwistVec expected(6);
    expected.head<3>() = -w.cross(c);
    expected.tail<3>() = w;
    CHECK((t.coords - expected).cwiseAbs().maxCoeff() < 1e-12);
  }

  SUBCASE("zero field gives zero twist") {
    PointFlowField f = symmetric_ring_field(16, 0.5, 1.0);
    CHECK(recentered_camera_twist(GroupTag::SE3, f, 1).coords.cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("motion_between_frames") {
  FilterPolicy policy;

  SUBCASE("zero flow gives identity") {
    PointFlowField f = make_field(20, 10);
    for (int i = 0; i < f.size(); ++i) f.points[i] = Eigen::Vector3d(0.2, 0.1, 2.0);
    const MotionEstimate est = motion_between_frames(GroupTag::SE3, f, policy);
    CHECK_FALSE(est.low_confidence);
    CHECK(max_abs_diff(est.transform.matrix, Eigen::Matrix4d::Identity()) == 0.0);
  }

  SUBCASE("pure translation along the ring axis") {
    // The ring is symmetric about the z axis, so per-pair rotation
    // contributions of a z-aligned constant field cancel exactly.
    const Eigen::Vector3d d(0, 0, 0.006);
    PointFlowField f = symmetric_ring_field(64, 0.6, 2.0);
    for (int i = 0; i < f.size(); ++i) f.velocities[i] = d;
    const MotionEstimate est = motion_between_frames(GroupTag::SE3, f, policy);
    CHECK_FALSE(est.low_confidence);
    CHECK((est.transform.translation() - d).cwiseAbs().maxCoeff() < 1e-15);
    CHECK(max_abs_diff(est.transform.linear(), Eigen::Matrix3d::Identity()) < 1e-15);
  }

  SUBCASE("low support degrades to identity with a flag") {
    PointFlowField f = make_field(3, 1);
    for (int i = 0; i < 3; ++i) {
      f.points[i] = Eigen::Vector3d(0.1, 0.1, 1.0);
      f.velocities[i] = Eigen::Vector3d(0.01, 0, 0);
    }
    const MotionEstimate est = motion_between_frames(GroupTag::SE3, f, policy);
    CHECK(est.low_confidence);
    CHECK(est.support == 3);
    CHECK(max_abs_diff(est.transform.matrix, Eigen::Matrix4d::Identity()) == 0.0);
  }
}
