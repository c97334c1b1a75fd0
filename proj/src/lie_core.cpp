#include "flowstab/lie_core.hpp"

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>

namespace flowstab {

namespace {

Eigen::Matrix3d rot_generator(int k) {
  Eigen::Matrix3d m = Eigen::Matrix3d::Zero();
  if (k == 0) { m(1, 2) = -1; m(2, 1) = 1; }
  if (k == 1) { m(0, 2) = 1; m(2, 0) = -1; }
  if (k == 2) { m(0, 1) = -1; m(1, 0) = 1; }
  return m;
}

Eigen::Matrix3d shear_generator(int k) {
  // Symmetric counterpart of rot_generator: off-diagonal pattern with both
  // entries positive.
  Eigen::Matrix3d m = rot_generator(k).cwiseAbs();
  return m;
}

std::vector<Eigen::Matrix3d> linear_sub_basis(GroupTag tag) {
  std::vector<Eigen::Matrix3d> lin;
  switch (tag) {
    case GroupTag::SE3:
      for (int k = 0; k < 3; ++k) lin.push_back(rot_generator(k));
      break;
    case GroupTag::SIM3:
      for (int k = 0; k < 3; ++k) lin.push_back(rot_generator(k));
      lin.push_back(Eigen::Matrix3d::Identity());
      break;
    case GroupTag::SA3: {
      for (int k = 0; k < 3; ++k) lin.push_back(rot_generator(k));
      for (int k = 0; k < 3; ++k) lin.push_back(shear_generator(k));
      Eigen::Matrix3d d1 = Eigen::Matrix3d::Zero(), d2 = Eigen::Matrix3d::Zero();
      d1.diagonal() << 1, -1, 0;
      d2.diagonal() << 0, 1, -1;
      lin.push_back(d1);
      lin.push_back(d2);
      break;
    }
    case GroupTag::GA3:
      // Column-major unit matrices: index k = 3*col + row.
      for (int c = 0; c < 3; ++c)
        for (int r = 0; r < 3; ++r) {
          Eigen::Matrix3d m = Eigen::Matrix3d::Zero();
          m(r, c) = 1;
          lin.push_back(m);
        }
      break;
  }
  return lin;
}

struct TagData {
  AlgebraBasis basis;
  Eigen::MatrixXd B;  // 9 x m, column j = vec(linear_elements[j])
  Eigen::MatrixXd P;  // m x 9, left pseudo-inverse of B
};

TagData build_tag_data(GroupTag tag) {
  TagData d;
  d.basis.tag = tag;
  d.basis.linear_elements = linear_sub_basis(tag);
  for (int k = 0; k < 3; ++k) {
    Eigen::Matrix4d e = Eigen::Matrix4d::Zero();
    e(k, 3) = 1;
    d.basis.elements.push_back(e);
  }
  for (const auto& lin : d.basis.linear_elements) {
    Eigen::Matrix4d e = Eigen::Matrix4d::Zero();
    e.topLeftCorner<3, 3>() = lin;
    d.basis.elements.push_back(e);
  }
  const int m = static_cast<int>(d.basis.linear_elements.size());
  d.B.resize(9, m);
  for (int j = 0; j < m; ++j)
    d.B.col(j) = Eigen::Map<const Eigen::VectorXd>(d.basis.linear_elements[j].data(), 9);
  d.P = (d.B.transpose() * d.B).ldlt().solve(d.B.transpose());
  return d;
}

const TagData& tag_data(GroupTag tag) {
  static const TagData data[4] = {
      build_tag_data(GroupTag::SE3), build_tag_data(GroupTag::SIM3),
      build_tag_data(GroupTag::SA3), build_tag_data(GroupTag::GA3)};
  return data[static_cast<int>(tag)];
}

}  // namespace

const char* group_name(GroupTag tag) {
  switch (tag) {
    case GroupTag::SE3: return "se3";
    case GroupTag::SIM3: return "sim3";
    case GroupTag::SA3: return "sa3";
    default: return "ga3";
  }
}

GroupTag group_from_name(const std::string& name) {
  if (name == "se3") return GroupTag::SE3;
  if (name == "sim3") return GroupTag::SIM3;
  if (name == "sa3") return GroupTag::SA3;
  if (name == "ga3") return GroupTag::GA3;
  throw std::invalid_argument("unknown group name: " + name);
}

Twist::Twist(GroupTag t, const TwistVec& c) : tag(t), coords(c) {
  if (coords.size() != group_dim(tag))
    throw std::invalid_argument("twist coordinate length does not match group");
}

Twist zero_twist(GroupTag tag) { return Twist(tag, TwistVec::Zero(group_dim(tag))); }

AffineTransform identity_transform(GroupTag tag) {
  AffineTransform g;
  g.tag = tag;
  return g;
}

AffineTransform make_transform(GroupTag tag, const Eigen::Matrix3d& linear,
                               const Eigen::Vector3d& translation) {
  AffineTransform g;
  g.tag = tag;
  g.matrix.setIdentity();
  g.matrix.topLeftCorner<3, 3>() = linear;
  g.matrix.topRightCorner<3, 1>() = translation;
  return g;
}

const AlgebraBasis& algebra_basis(GroupTag tag) { return tag_data(tag).basis; }

Eigen::Matrix3d hat3(const Eigen::Vector3d& w) {
  Eigen::Matrix3d m;
  m << 0, -w.z(), w.y(), w.z(), 0, -w.x(), -w.y(), w.x(), 0;
  return m;
}

Eigen::Matrix4d hat(GroupTag tag, const TwistVec& coords) {
  if (coords.size() != group_dim(tag))
    throw std::invalid_argument("hat: coordinate length does not match group");
  Eigen::Matrix4d X = Eigen::Matrix4d::Zero();
  X.topLeftCorner<3, 3>() = linear_from_coords(tag, coords.tail(coords.size() - 3));
  X.topRightCorner<3, 1>() = coords.head<3>();
  return X;
}

TwistVec vee(GroupTag tag, const Eigen::Matrix4d& X) {
  if (X.row(3).cwiseAbs().maxCoeff() > 1e-9)
    throw std::invalid_argument("vee: nonzero bottom row");
  double residual = 0.0;
  TwistVec u = coords_from_linear(tag, X.topLeftCorner<3, 3>(), &residual);
  if (residual > 1e-9)
    throw std::invalid_argument("vee: linear block outside the algebra span");
  TwistVec out(group_dim(tag));
  out.head<3>() = X.topRightCorner<3, 1>();
  out.tail(u.size()) = u;
  return out;
}

Eigen::Matrix3d linear_from_coords(GroupTag tag, const TwistVec& u) {
  const TagData& d = tag_data(tag);
  if (u.size() != static_cast<Eigen::Index>(d.basis.linear_elements.size()))
    throw std::invalid_argument("linear_from_coords: coordinate length mismatch");
  Eigen::Matrix3d M = Eigen::Matrix3d::Zero();
  for (int j = 0; j < u.size(); ++j) M += u[j] * d.basis.linear_elements[j];
  return M;
}

TwistVec coords_from_linear(GroupTag tag, const Eigen::Matrix3d& M, double* residual) {
  const TagData& d = tag_data(tag);
  Eigen::Map<const Eigen::VectorXd> v(M.data(), 9);
  TwistVec u = d.P * v;
  if (residual) *residual = (d.B * Eigen::VectorXd(u) - v).norm();
  return u;
}

Eigen::Matrix3d exp_rot(const Eigen::Vector3d& w) {
  const double t2 = w.squaredNorm();
  const double theta = std::sqrt(t2);
  double a, b;  // R = I + a*hat(w) + b*hat(w)^2
  if (theta < 1e-4) {
    a = 1.0 - t2 / 6.0 + t2 * t2 / 120.0;
    b = 0.5 - t2 / 24.0 + t2 * t2 / 720.0;
  } else {
    a = std::sin(theta) / theta;
    b = (1.0 - std::cos(theta)) / t2;
  }
  const Eigen::Matrix3d K = hat3(w);
  return Eigen::Matrix3d::Identity() + a * K + b * (K * K);
}

Eigen::Vector3d log_rot(const Eigen::Matrix3d& R) {
  const Eigen::Vector3d s(R(2, 1) - R(1, 2), R(0, 2) - R(2, 0), R(1, 0) - R(0, 1));
  const double theta = std::atan2(0.5 * s.norm(), 0.5 * (R.trace() - 1.0));
  if (theta < 1e-7) {
    const double t2 = theta * theta;
    return 0.5 * (1.0 + t2 / 6.0 + 7.0 * t2 * t2 / 360.0) * s;
  }
  if (theta < M_PI - 1e-5) return (theta / (2.0 * std::sin(theta))) * s;
  // Branch cut: axis from the dominant diagonal of (R + I)/2.
  const Eigen::Matrix3d B = 0.5 * (R + Eigen::Matrix3d::Identity());
  int i = 0;
  B.diagonal().maxCoeff(&i);
  Eigen::Vector3d n = Eigen::Vector3d::Zero();
  n[i] = std::sqrt(std::max(B(i, i), 0.0));
  if (n[i] > 0) {
    // Symmetrized read: just below the cut it cancels the residual skew part.
    for (int j = 0; j < 3; ++j)
      if (j != i) n[j] = 0.5 * (B(j, i) + B(i, j)) / n[i];
  }
  n.normalize();
  if (s.cwiseAbs().maxCoeff() > 1e-12) {
    if (n.dot(s) < 0) n = -n;  // skew part still resolves the direction
  } else {
    for (int k = 0; k < 3; ++k) {
      if (std::abs(n[k]) > 1e-12) {
        if (n[k] < 0) n = -n;
        break;
      }
    }
  }
  return theta * n;
}

Eigen::Matrix3d exp_series(const Eigen::Matrix3d& M) {
  const double nrm = M.norm();
  int squarings = 0;
  if (nrm > 0.5) squarings = static_cast<int>(std::ceil(std::log2(nrm / 0.5)));
  const Eigen::Matrix3d A = M / std::exp2(squarings);
  Eigen::Matrix3d term = Eigen::Matrix3d::Identity();
  Eigen::Matrix3d sum = Eigen::Matrix3d::Identity();
  for (int k = 1; k <= 30; ++k) {
    term = (term * A) / static_cast<double>(k);
    sum += term;
    if (term.norm() <= 1e-14) break;
  }
  for (int k = 0; k < squarings; ++k) sum = sum * sum;
  return sum;
}

Eigen::Matrix3d phi(const Eigen::Matrix3d& U) {
  return exp_series(U.transpose()) * exp_series(U - U.transpose());
}

PhiInverseError::PhiInverseError(double res, int iters)
    : std::runtime_error("phi_inverse did not converge: residual " +
                         std::to_string(res) + " after " +
                         std::to_string(iters) + " iterations"),
      residual(res),
      iterations(iters) {}

namespace {

// Principal real logarithm via complex eigendecomposition. Returns false when
// A has an eigenvalue on the closed negative real axis or is too close to
// defective for the decomposition to be trusted.
bool principal_log(const Eigen::Matrix3d& A, Eigen::Matrix3d* out) {
  Eigen::EigenSolver<Eigen::Matrix3d> es(A);
  if (es.info() != Eigen::Success) return false;
  const Eigen::Vector3cd lam = es.eigenvalues();
  for (int k = 0; k < 3; ++k) {
    if (lam[k].real() <= 0.0 && std::abs(lam[k].imag()) <= 1e-12 * std::max(1.0, std::abs(lam[k])))
      return false;
  }
  const Eigen::Matrix3cd V = es.eigenvectors();
  Eigen::FullPivLU<Eigen::Matrix3cd> lu(V);
  if (!lu.isInvertible()) return false;
  Eigen::Vector3cd logs;
  for (int k = 0; k < 3; ++k) logs[k] = std::log(lam[k]);
  const Eigen::Matrix3cd L = V * logs.asDiagonal() * lu.inverse();
  *out = L.real();
  return out->allFinite() && (exp_series(*out) - A).norm() < 1e-6 * std::max(1.0, A.norm());
}

}  // namespace

PhiInverseResult try_phi_inverse(const Eigen::Matrix3d& A, GroupTag tag) {
  if (tag != GroupTag::SA3 && tag != GroupTag::GA3)
    throw std::invalid_argument("phi_inverse: tag must be SA3 or GA3");
  const int m = linear_dim(tag);
  const auto objective = [&](const TwistVec& u) {
    return (phi(linear_from_coords(tag, u)) - A).squaredNorm();
  };

  TwistVec u = TwistVec::Zero(m);
  Eigen::Matrix3d L;
  if (principal_log(A, &L)) {
    if (tag == GroupTag::SA3)
      L -= (L.trace() / 3.0) * Eigen::Matrix3d::Identity();
    u = coords_from_linear(tag, L);
  }

  const double tol = 1e-16;
  const double grad_step = 1e-6;
  double fv = objective(u);
  double last_step = 1.0;
  TwistVec grad(m), prev_u(m), prev_grad(m);
  bool have_prev = false;
  int it = 0;
  for (; it < 500 && fv > tol; ++it) {
    for (int k = 0; k < m; ++k) {
      TwistVec up = u, um = u;
      up[k] += grad_step;
      um[k] -= grad_step;
      grad[k] = (objective(up) - objective(um)) / (2.0 * grad_step);
    }
    const double g2 = grad.squaredNorm();
    if (!(g2 > 0.0)) break;
    // Trial step: spectral (Barzilai-Borwein) estimate when available, else
    // grow the last accepted step; Armijo halving below safeguards it.
    double s = 2.0 * last_step;
    if (have_prev) {
      const TwistVec du = u - prev_u;
      const TwistVec dg = grad - prev_grad;
      const double denom = du.dot(dg);
      if (denom > 0.0) s = du.squaredNorm() / denom;
    }
    s = std::clamp(s, 1e-12, 1e6);
    prev_u = u;
    prev_grad = grad;
    have_prev = true;
    bool accepted = false;
    while (s >= 1e-20) {
      const TwistVec cand = u - s * grad;
      const double fc = objective(cand);
      if (fc <= fv - 1e-4 * s * g2) {
        u = cand;
        fv = fc;
        last_step = s;
        accepted = true;
        break;
      }
      s *= 0.5;
    }
    if (!accepted) break;
  }

  PhiInverseResult r;
  r.U = linear_from_coords(tag, u);
  r.residual = std::sqrt(fv);
  r.iterations = it;
  r.converged = fv <= tol;
  return r;
}

Eigen::Matrix3d phi_inverse(const Eigen::Matrix3d& A, GroupTag tag) {
  PhiInverseResult r = try_phi_inverse(A, tag);
  if (!r.converged) throw PhiInverseError(r.residual, r.iterations);
  return r.U;
}

Eigen::Matrix3d sigma(GroupTag tag, const TwistVec& u) {
  if (u.size() != linear_dim(tag))
    throw std::invalid_argument("sigma: coordinate length mismatch");
  switch (tag) {
    case GroupTag::SE3:
      return exp_rot(u.head<3>());
    case GroupTag::SIM3:
      return std::exp(u[3]) * exp_rot(u.head<3>());
    default:
      return phi(linear_from_coords(tag, u));
  }
}

TwistVec sigma_inverse(const Eigen::Matrix3d& A, GroupTag tag) {
  switch (tag) {
    case GroupTag::SE3: {
      TwistVec u(3);
      u = log_rot(A);
      return u;
    }
    case GroupTag::SIM3: {
      const double det = A.determinant();
      if (!(det > 0.0))
        throw std::invalid_argument("sigma_inverse: nonpositive determinant");
      const double a = std::log(det) / 3.0;
      TwistVec u(4);
      u.head<3>() = log_rot(std::exp(-a) * A);
      u[3] = a;
      return u;
    }
    default:
      return coords_from_linear(tag, phi_inverse(A, tag));
  }
}

AffineTransform group_from_twist(const Twist& xi) {
  return make_transform(xi.tag, sigma(xi.tag, xi.linear_coords()), xi.translation());
}

CoeffMat translated_adjoint(GroupTag tag, const Eigen::Vector3d& t) {
  const int n = group_dim(tag);
  const auto& lin = algebra_basis(tag).linear_elements;
  CoeffMat L(n, n);
  L.setIdentity();
  for (int j = 0; j < n - 3; ++j) L.block<3, 1>(0, 3 + j) = -(lin[j] * t);
  return L;
}

CoeffMat ad_matrix(const Twist& zeta) {
  const int n = group_dim(zeta.tag);
  const int m = n - 3;
  const Eigen::Matrix3d Z = linear_from_coords(zeta.tag, zeta.linear_coords());
  const Eigen::Vector3d z = zeta.translation();
  const auto& lin = algebra_basis(zeta.tag).linear_elements;
  CoeffMat M(n, n);
  M.setZero();
  M.topLeftCorner<3, 3>() = Z;
  for (int j = 0; j < m; ++j) {
    M.block<3, 1>(0, 3 + j) = -(lin[j] * z);
    M.block(3, 3 + j, m, 1) = coords_from_linear(zeta.tag, Z * lin[j] - lin[j] * Z);
  }
  return M;
}

AffineTransform affine_inverse(const AffineTransform& g) {
  const Eigen::Matrix3d L = g.linear();
  Eigen::Matrix3d Li;
  if (g.tag == GroupTag::SE3) {
    Li = L.transpose();
  } else {
    const double det = L.determinant();
    const double scale = std::max(1.0, L.cwiseAbs().maxCoeff());
    if (!std::isfinite(det) || std::abs(det) < 1e-15 * scale * scale * scale)
      throw std::invalid_argument("affine_inverse: singular linear block");
    Li = L.inverse();
  }
  return make_transform(g.tag, Li, -(Li * g.translation()));
}

}  // namespace flowstab
