#pragma once

#include <Eigen/Core>

#include <stdexcept>
#include <string>
#include <vector>

namespace flowstab {

// Motion groups: rigid (SE3), similarity (SIM3), volume-preserving affine
// (SA3) and orientation-preserving affine (GA3). Twist coordinates put the
// translation block first, then the linear-part coordinates.
enum class GroupTag { SE3, SIM3, SA3, GA3 };

constexpr int group_dim(GroupTag tag) {
  switch (tag) {
    case GroupTag::SE3: return 6;
    case GroupTag::SIM3: return 7;
    case GroupTag::SA3: return 11;
    default: return 12;
  }
}
constexpr int linear_dim(GroupTag tag) { return group_dim(tag) - 3; }

const char* group_name(GroupTag tag);
GroupTag group_from_name(const std::string& name);

// Stack-allocated coordinate vectors/matrices sized for the largest group.
using TwistVec = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, 12, 1>;
using CoeffMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, 12, 12>;

struct Twist {
  GroupTag tag = GroupTag::SE3;
  TwistVec coords;  // length group_dim(tag)

  Twist() : coords(TwistVec::Zero(6)) {}
  Twist(GroupTag t, const TwistVec& c);

  Eigen::Vector3d translation() const { return coords.head<3>(); }
  TwistVec linear_coords() const { return coords.tail(coords.size() - 3); }
};

Twist zero_twist(GroupTag tag);

struct AffineTransform {
  GroupTag tag = GroupTag::SE3;
  Eigen::Matrix4d matrix = Eigen::Matrix4d::Identity();  // bottom row (0,0,0,1)

  Eigen::Matrix3d linear() const { return matrix.topLeftCorner<3, 3>(); }
  Eigen::Vector3d translation() const { return matrix.topRightCorner<3, 1>(); }
};

AffineTransform identity_transform(GroupTag tag);
AffineTransform make_transform(GroupTag tag, const Eigen::Matrix3d& linear,
                               const Eigen::Vector3d& translation);

struct AlgebraBasis {
  GroupTag tag;
  std::vector<Eigen::Matrix4d> elements;         // E_1..E_n in homogeneous form
  std::vector<Eigen::Matrix3d> linear_elements;  // 3x3 sub-basis of the linear block
};

// Cached algebra basis. E_1..E_3 are unit translations; E_4..E_n carry the
// linear sub-basis: rotations for SE3; rotations then identity for SIM3;
// rotations, symmetric shears, then two diagonal traceless elements for SA3;
// column-major unit matrices for GA3.
const AlgebraBasis& algebra_basis(GroupTag tag);

Eigen::Matrix3d hat3(const Eigen::Vector3d& w);

Eigen::Matrix4d hat(GroupTag tag, const TwistVec& coords);
TwistVec vee(GroupTag tag, const Eigen::Matrix4d& X);  // throws if X is off the algebra

// Linear-block coordinate maps. coords_from_linear solves in the (possibly
// non-orthogonal) sub-basis; exact when M lies in its span.
Eigen::Matrix3d linear_from_coords(GroupTag tag, const TwistVec& u);
TwistVec coords_from_linear(GroupTag tag, const Eigen::Matrix3d& M,
                            double* residual = nullptr);

Eigen::Matrix3d exp_rot(const Eigen::Vector3d& w);
Eigen::Vector3d log_rot(const Eigen::Matrix3d& R);

// Scaling-and-squaring matrix exponential, truncated series (tol 1e-14).
Eigen::Matrix3d exp_series(const Eigen::Matrix3d& M);

// Surjective retraction onto SL(3)/GL+(3): phi(U) = exp(U^T) exp(U - U^T).
Eigen::Matrix3d phi(const Eigen::Matrix3d& U);

struct PhiInverseResult {
  Eigen::Matrix3d U = Eigen::Matrix3d::Zero();
  double residual = 0.0;  // ||phi(U) - A||_F at exit
  int iterations = 0;
  bool converged = false;
};

struct PhiInverseError : std::runtime_error {
  double residual;
  int iterations;
  PhiInverseError(double res, int iters);
};

// Numeric inverse of phi: gradient descent on ||phi(U) - A||_F^2 over the
// algebra coordinates, central-difference gradient, backtracking line search.
PhiInverseResult try_phi_inverse(const Eigen::Matrix3d& A, GroupTag tag);
Eigen::Matrix3d phi_inverse(const Eigen::Matrix3d& A, GroupTag tag);  // throws PhiInverseError

// Linear-block exponential and its inverse in coordinates.
Eigen::Matrix3d sigma(GroupTag tag, const TwistVec& u);
TwistVec sigma_inverse(const Eigen::Matrix3d& A, GroupTag tag);

// Decoupled exponential: linear block sigma(u), translation copied verbatim.
AffineTransform group_from_twist(const Twist& xi);

// Adjoint matrix of the pure translation by t, acting on twist coordinates.
CoeffMat translated_adjoint(GroupTag tag, const Eigen::Vector3d& t);

// Matrix of ad(zeta): column k holds vee([hat(zeta), E_k]).
CoeffMat ad_matrix(const Twist& zeta);

AffineTransform affine_inverse(const AffineTransform& g);

}  // namespace flowstab
