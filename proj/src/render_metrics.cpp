#include "flowstab/render_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <stdexcept>

#include <Eigen/Dense>

namespace flowstab {

namespace {

constexpr double kNearPlane = 1e-9;
constexpr double kCellTol = 1e-9;  // parameter slack for inverse bilinear

double cross2(const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
  return a.x() * b.y() - a.y() * b.x();
}

// Polygon area, orientation-agnostic.
double polygon_area(const std::vector<Eigen::Vector2d>& poly) {
  if (poly.size() < 3) return 0.0;
  double twice = 0.0;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const Eigen::Vector2d& p = poly[i];
    const Eigen::Vector2d& q = poly[(i + 1) % poly.size()];
    twice += cross2(p, q);
  }
  return 0.5 * std::abs(twice);
}

// Sutherland-Hodgman against one half-plane described by inside/intersect.
template <typename Point, typename InsideFn, typename CutFn>
std::vector<Point> clip_half_plane(const std::vector<Point>& poly,
                                   InsideFn inside, CutFn cut) {
  std::vector<Point> out;
  const std::size_t n = poly.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Point& cur = poly[i];
    const Point& nxt = poly[(i + 1) % n];
    const bool cin = inside(cur);
    const bool nin = inside(nxt);
    if (cin) out.push_back(cur);
    if (cin != nin) out.push_back(cut(cur, nxt));
  }
  return out;
}

std::vector<Eigen::Vector2d> clip_to_rect(std::vector<Eigen::Vector2d> poly,
                                          double w, double h) {
  const auto cut_x = [](double x0) {
    return [x0](const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
      const double t = (x0 - a.x()) / (b.x() - a.x());
      return Eigen::Vector2d(x0, a.y() + t * (b.y() - a.y()));
    };
  };
  const auto cut_y = [](double y0) {
    return [y0](const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
      const double t = (y0 - a.y()) / (b.y() - a.y());
      return Eigen::Vector2d(a.x() + t * (b.x() - a.x()), y0);
    };
  };
  poly = clip_half_plane(poly, [](const Eigen::Vector2d& p) { return p.x() >= 0.0; },
                         cut_x(0.0));
  poly = clip_half_plane(poly, [w](const Eigen::Vector2d& p) { return p.x() <= w; },
                         cut_x(w));
  poly = clip_half_plane(poly, [](const Eigen::Vector2d& p) { return p.y() >= 0.0; },
                         cut_y(0.0));
  poly = clip_half_plane(poly, [h](const Eigen::Vector2d& p) { return p.y() <= h; },
                         cut_y(h));
  return poly;
}

Eigen::Vector3d lift_to_plane(double u, double v, double depth,
                              const Intrinsics& K) {
  return {(u - K.cx) * depth / K.fx, (v - K.cy) * depth / K.fy, depth};
}

std::array<Eigen::Vector2d, 4> frame_corners(const Intrinsics& K) {
  const double w = K.width;
  const double h = K.height;
  return {Eigen::Vector2d(0, 0), Eigen::Vector2d(w, 0), Eigen::Vector2d(w, h),
          Eigen::Vector2d(0, h)};
}

// Frame corners lifted to the median-depth plane, mapped by r, clipped to
// the z > 0 half-space and projected; may come back with 0 to 5 vertices.
std::vector<Eigen::Vector2d> warped_corner_quad(const AffineTransform& r,
                                                double depth,
                                                const Intrinsics& K) {
  std::vector<Eigen::Vector3d> quad3;
  for (const Eigen::Vector2d& c : frame_corners(K)) {
    const Eigen::Vector3d x = lift_to_plane(c.x(), c.y(), depth, K);
    quad3.push_back(r.linear() * x + r.translation());
  }
  quad3 = clip_half_plane(
      quad3, [](const Eigen::Vector3d& p) { return p.z() >= kNearPlane; },
      [](const Eigen::Vector3d& a, const Eigen::Vector3d& b) {
        const double t = (kNearPlane - a.z()) / (b.z() - a.z());
        return Eigen::Vector3d(a + t * (b - a));
      });
  std::vector<Eigen::Vector2d> quad;
  quad.reserve(quad3.size());
  for (const Eigen::Vector3d& p : quad3) quad.push_back(project(p, K));
  return quad;
}

void validate_metric_inputs(const std::vector<AffineTransform>& renders,
                            const std::vector<double>& median_depths,
                            const Intrinsics& K) {
  validate_intrinsics(K);
  if (renders.size() != median_depths.size()) {
    throw std::invalid_argument(
        "render transform and median depth counts differ");
  }
  for (std::size_t i = 0; i < renders.size(); ++i) {
    if (!(median_depths[i] > 0.0) || !std::isfinite(median_depths[i])) {
      throw std::invalid_argument("nonpositive median depth at frame " +
                                  std::to_string(i));
    }
    if (!renders[i].matrix.allFinite()) {
      throw std::invalid_argument("non-finite render transform at frame " +
                                  std::to_string(i));
    }
  }
}

double frame_visible_area(const AffineTransform& r, double depth,
                          const Intrinsics& K) {
  const auto quad = warped_corner_quad(r, depth, K);
  return polygon_area(clip_to_rect(quad, K.width, K.height));
}

// Rotation angle of the orientation-preserving polar factor of L.
double rotation_angle(const Eigen::Matrix3d& L) {
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(
      L, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d R = svd.matrixU() * svd.matrixV().transpose();
  if (R.determinant() < 0.0) {
    Eigen::Matrix3d flip = Eigen::Matrix3d::Identity();
    flip(2, 2) = -1.0;
    R = svd.matrixU() * flip * svd.matrixV().transpose();
  }
  const double c = std::clamp(0.5 * (R.trace() - 1.0), -1.0, 1.0);
  return std::acos(c);
}

// Fraction of AC energy (bins 2..N/2) in bins 2..6, direct DFT.
double component_score(const std::vector<double>& s) {
  const int n = static_cast<int>(s.size());
  const int half = n / 2;
  double num = 0.0;
  double den = 0.0;
  double total = 0.0;
  for (double v : s) total += v * v;
  for (int k = 2; k <= half; ++k) {
    std::complex<double> x(0.0, 0.0);
    for (int i = 0; i < n; ++i) {
      const double ang = -2.0 * M_PI * k * i / n;
      x += s[i] * std::complex<double>(std::cos(ang), std::sin(ang));
    }
    const double e = std::norm(x);
    den += e;
    if (k <= 6) num += e;
  }
  if (den <= 1e-20 * std::max(1.0, total)) return 1.0;
  return num / den;
}

}  // namespace

ImageF ImageF::zero(int width, int height) {
  if (width <= 0 || height <= 0) {
    throw std::invalid_argument("image dimensions must be positive");
  }
  ImageF img;
  img.width = width;
  img.height = height;
  img.pixels.assign(static_cast<std::size_t>(width) * height, 0.0f);
  return img;
}

Eigen::Vector2d WarpGrid::source_vertex(int r, int c) const {
  return {c * (width - 1) / 2.0, r * (height - 1) / 2.0};
}

WarpGrid WarpGrid::uniform(int width, int height) {
  if (width < 2 || height < 2) {
    throw std::invalid_argument("warp grid needs at least a 2x2 pixel frame");
  }
  WarpGrid g;
  g.width = width;
  g.height = height;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) g.vertex(r, c) = g.source_vertex(r, c);
  }
  return g;
}

std::vector<ControlPair> reproject_control_points(const PointGrid& points,
                                                  const AffineTransform& r,
                                                  const Intrinsics& K,
                                                  int max_points) {
  validate_intrinsics(K);
  if (max_points <= 0) {
    throw std::invalid_argument("max_points must be positive");
  }
  if (!r.matrix.allFinite()) {
    throw std::invalid_argument("render transform must be finite");
  }
  std::vector<ControlPair> pairs;
  pairs.reserve(std::min<std::size_t>(points.points.size(), max_points));
  std::vector<ControlPair> all;
  all.reserve(points.points.size());
  const Eigen::Matrix3d L = r.linear();
  const Eigen::Vector3d t = r.translation();
  for (int i = 0; i < points.size(); ++i) {
    if (!points.valid[i]) continue;
    const Eigen::Vector3d& x = points.points[i];
    const Eigen::Vector3d y = L * x + t;
    if (y.z() <= 0.0) continue;
    all.push_back({project(x, K), project(y, K)});
  }
  const std::size_t n = all.size();
  if (n <= static_cast<std::size_t>(max_points)) return all;
  const std::size_t step = (n + max_points - 1) / max_points;
  for (std::size_t i = 0; i < n; i += step) pairs.push_back(all[i]);
  return pairs;
}

WarpGrid cpw_solve(int width, int height, const std::vector<ControlPair>& pairs,
                   double alpha) {
  if (pairs.size() < 4) {
    throw std::invalid_argument(
        "warp system is rank deficient: need at least 4 control pairs, got " +
        std::to_string(pairs.size()));
  }
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) {
    throw std::invalid_argument("alpha must be finite and nonnegative");
  }
  const WarpGrid source = WarpGrid::uniform(width, height);
  const double cell_w = (width - 1) / 2.0;
  const double cell_h = (height - 1) / 2.0;

  const int data_rows = 2 * static_cast<int>(pairs.size());
  const int smooth_rows = 2 * 4 * 4;  // 4 triangles per cell, 2 rows each
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(data_rows + smooth_rows, 18);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(data_rows + smooth_rows);
  const auto col_x = [](int r, int c) { return 2 * (3 * r + c); };
  const auto col_y = [](int r, int c) { return 2 * (3 * r + c) + 1; };

  int row = 0;
  for (const ControlPair& p : pairs) {
    if (!p.src.allFinite() || !p.dst.allFinite()) {
      throw std::invalid_argument("control pairs must be finite");
    }
    const int cc = std::clamp(static_cast<int>(p.src.x() / cell_w), 0, 1);
    const int cr = std::clamp(static_cast<int>(p.src.y() / cell_h), 0, 1);
    const double u = p.src.x() / cell_w - cc;
    const double v = p.src.y() / cell_h - cr;
    const double w00 = (1 - u) * (1 - v);
    const double w10 = u * (1 - v);
    const double w01 = (1 - u) * v;
    const double w11 = u * v;
    A(row, col_x(cr, cc)) = w00;
    A(row, col_x(cr, cc + 1)) = w10;
    A(row, col_x(cr + 1, cc)) = w01;
    A(row, col_x(cr + 1, cc + 1)) = w11;
    b(row++) = p.dst.x();
    A(row, col_y(cr, cc)) = w00;
    A(row, col_y(cr, cc + 1)) = w10;
    A(row, col_y(cr + 1, cc)) = w01;
    A(row, col_y(cr + 1, cc + 1)) = w11;
    b(row++) = p.dst.y();
  }

  // Each cell corner, expressed in the similarity frame of its two in-cell
  // neighbors; the residual vanishes exactly on any global similarity of the
  // source lattice because 2x2 rotation-scale matrices commute with the
  // quarter-turn used to build the local frame.
  const double sa = std::sqrt(alpha);
  const Eigen::Matrix2d rot90 = (Eigen::Matrix2d() << 0, -1, 1, 0).finished();
  for (int cr = 0; cr < 2; ++cr) {
    for (int cc = 0; cc < 2; ++cc) {
      const std::array<std::pair<int, int>, 4> quad = {
          std::pair<int, int>{cr, cc}, {cr, cc + 1}, {cr + 1, cc + 1},
          {cr + 1, cc}};
      for (int i = 0; i < 4; ++i) {
        const auto [r1, c1] = quad[i];
        const auto [r2, c2] = quad[(i + 1) % 4];
        const auto [r3, c3] = quad[(i + 3) % 4];
        const Eigen::Vector2d d = source.source_vertex(r3, c3) -
                                  source.source_vertex(r2, c2);
        const Eigen::Vector2d e = source.source_vertex(r1, c1) -
                                  source.source_vertex(r2, c2);
        const double dd = d.squaredNorm();
        const double u = e.dot(d) / dd;
        const double v = e.dot(rot90 * d) / dd;
        // Residual e_out - u d_out - v rot90 d_out, one row per coordinate.
        A(row, col_x(r1, c1)) += sa;
        A(row, col_x(r2, c2)) += sa * (u - 1.0);
        A(row, col_x(r3, c3)) += sa * -u;
        A(row, col_y(r2, c2)) += sa * -v;
        A(row, col_y(r3, c3)) += sa * v;
        ++row;
        A(row, col_y(r1, c1)) += sa;
        A(row, col_y(r2, c2)) += sa * (u - 1.0);
        A(row, col_y(r3, c3)) += sa * -u;
        A(row, col_x(r2, c2)) += sa * v;
        A(row, col_x(r3, c3)) += sa * -v;
        ++row;
      }
    }
  }

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A);
  if (qr.rank() < 18) {
    throw std::runtime_error(
        "warp system is rank deficient: degenerate control points (rank " +
        std::to_string(qr.rank()) + " of 18)");
  }
  const Eigen::VectorXd x = qr.solve(b);

  WarpGrid grid = source;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) {
      grid.vertex(r, c) = {x[col_x(r, c)], x[col_y(r, c)]};
    }
  }
  for (int cr = 0; cr < 2; ++cr) {
    for (int cc = 0; cc < 2; ++cc) {
      const std::vector<Eigen::Vector2d> cell = {
          grid.vertex(cr, cc), grid.vertex(cr, cc + 1),
          grid.vertex(cr + 1, cc + 1), grid.vertex(cr + 1, cc)};
      double twice = 0.0;
      for (int i = 0; i < 4; ++i) twice += cross2(cell[i], cell[(i + 1) % 4]);
      if (!(twice > 0.0)) {
        throw std::runtime_error("warp solve produced a folded cell");
      }
    }
  }
  return grid;
}

WarpResult warp_frame(const ImageF& image, const WarpGrid& grid) {
  if (image.width != grid.width || image.height != grid.height) {
    throw std::invalid_argument("image and warp grid dimensions differ");
  }
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) {
      if (!grid.vertex(r, c).allFinite()) {
        throw std::runtime_error("degenerate cell: non-finite vertex");
      }
    }
  }
  const double cell_w = (grid.width - 1) / 2.0;
  const double cell_h = (grid.height - 1) / 2.0;

  struct Cell {
    Eigen::Vector2d q00, a, b, c;  // p = q00 + u a + v b + uv c
    Eigen::Vector2d src00;
  };
  std::array<Cell, 4> cells;
  for (int cr = 0; cr < 2; ++cr) {
    for (int cc = 0; cc < 2; ++cc) {
      Cell& cell = cells[cr * 2 + cc];
      const Eigen::Vector2d q00 = grid.vertex(cr, cc);
      const Eigen::Vector2d q10 = grid.vertex(cr, cc + 1);
      const Eigen::Vector2d q01 = grid.vertex(cr + 1, cc);
      const Eigen::Vector2d q11 = grid.vertex(cr + 1, cc + 1);
      cell.q00 = q00;
      cell.a = q10 - q00;
      cell.b = q01 - q00;
      cell.c = q11 - q10 - q01 + q00;
      cell.src00 = grid.source_vertex(cr, cc);
      double twice = cross2(q00, q10) + cross2(q10, q11) + cross2(q11, q01) +
                     cross2(q01, q00);
      if (!(twice > 0.0)) {
        throw std::runtime_error("degenerate cell: non-positive area");
      }
    }
  }

  const auto sample = [&image](double sx, double sy) {
    const int x0 = std::clamp(static_cast<int>(std::floor(sx)), 0, image.width - 1);
    const int y0 = std::clamp(static_cast<int>(std::floor(sy)), 0, image.height - 1);
    const int x1 = std::min(x0 + 1, image.width - 1);
    const int y1 = std::min(y0 + 1, image.height - 1);
    const double fx = std::clamp(sx - x0, 0.0, 1.0);
    const double fy = std::clamp(sy - y0, 0.0, 1.0);
    const double top = (1 - fx) * image.at(x0, y0) + fx * image.at(x1, y0);
    const double bot = (1 - fx) * image.at(x0, y1) + fx * image.at(x1, y1);
    return static_cast<float>((1 - fy) * top + fy * bot);
  };

  WarpResult out;
  out.image = ImageF::zero(image.width, image.height);
  out.mask.assign(out.image.size(), 0);

  for (int py = 0; py < image.height; ++py) {
    for (int px = 0; px < image.width; ++px) {
      const Eigen::Vector2d point(px, py);
      for (const Cell& cell : cells) {
        const Eigen::Vector2d p = point - cell.q00;
        const double qa = -cross2(cell.a, cell.c);
        const double qb = cross2(p, cell.c) - cross2(cell.a, cell.b);
        const double qc = cross2(p, cell.b);
        double roots[2];
        int nroots = 0;
        if (std::abs(qa) <= 1e-10 * std::max(1.0, std::abs(qb))) {
          if (qb != 0.0) roots[nroots++] = -qc / qb;
        } else {
          const double disc = qb * qb - 4.0 * qa * qc;
          if (disc < 0.0) continue;
          const double sq = std::sqrt(disc);
          roots[nroots++] = (-qb + sq) / (2.0 * qa);
          roots[nroots++] = (-qb - sq) / (2.0 * qa);
        }
        bool hit = false;
        for (int k = 0; k < nroots && !hit; ++k) {
          const double u = roots[k];
          if (u < -kCellTol || u > 1.0 + kCellTol) continue;
          const Eigen::Vector2d denom = cell.b + u * cell.c;
          const double dd = denom.squaredNorm();
          if (dd < 1e-18) continue;
          const double v = (p - u * cell.a).dot(denom) / dd;
          if (v < -kCellTol || v > 1.0 + kCellTol) continue;
          const Eigen::Vector2d back =
              u * cell.a + v * cell.b + u * v * cell.c;
          if ((p - back).norm() > 1e-6 * (1.0 + p.norm())) continue;
          const double cu = std::clamp(u, 0.0, 1.0);
          const double cv = std::clamp(v, 0.0, 1.0);
          out.image.at(px, py) = sample(cell.src00.x() + cu * cell_w,
                                        cell.src00.y() + cv * cell_h);
          out.mask[py * image.width + px] = 1;
          hit = true;
        }
        if (hit) break;
      }
    }
  }
  return out;
}

double metric_stability(const std::vector<AffineTransform>& poses) {
  if (poses.size() < 8) {
    throw std::invalid_argument("stability needs at least 8 poses, got " +
                                std::to_string(poses.size()));
  }
  const int n = static_cast<int>(poses.size());
  std::array<std::vector<double>, 4> series;
  for (auto& s : series) s.resize(n);
  for (int i = 0; i < n; ++i) {
    const Eigen::Vector3d t = poses[i].translation();
    series[0][i] = t.x();
    series[1][i] = t.y();
    series[2][i] = t.z();
    series[3][i] = rotation_angle(poses[i].linear());
  }
  double sum = 0.0;
  for (const auto& s : series) sum += component_score(s);
  return sum / 4.0;
}

double metric_cropping(const std::vector<AffineTransform>& renders,
                       const std::vector<double>& median_depths,
                       const Intrinsics& K) {
  validate_metric_inputs(renders, median_depths, K);
  if (renders.empty()) {
    throw std::invalid_argument("cropping needs at least one frame");
  }
  const double frame_area = static_cast<double>(K.width) * K.height;
  double sum = 0.0;
  for (std::size_t i = 0; i < renders.size(); ++i) {
    sum += frame_visible_area(renders[i], median_depths[i], K) / frame_area;
  }
  return std::min(sum / renders.size(), 1.0);
}

double metric_distortion(const std::vector<AffineTransform>& renders,
                         const std::vector<double>& median_depths,
                         const Intrinsics& K) {
  validate_metric_inputs(renders, median_depths, K);
  if (renders.empty()) {
    throw std::invalid_argument("distortion needs at least one frame");
  }
  double worst = 1.0;
  for (std::size_t i = 0; i < renders.size(); ++i) {
    const auto corners = frame_corners(K);
    Eigen::Matrix<double, 4, 2> src;
    Eigen::Matrix<double, 4, 2> dst;
    bool behind = false;
    for (int k = 0; k < 4 && !behind; ++k) {
      const Eigen::Vector3d x =
          lift_to_plane(corners[k].x(), corners[k].y(), median_depths[i], K);
      const Eigen::Vector3d y =
          renders[i].linear() * x + renders[i].translation();
      if (y.z() <= kNearPlane) {
        behind = true;
        break;
      }
      src.row(k) = corners[k];
      dst.row(k) = project(y, K);
    }
    if (behind) {
      worst = 0.0;
      continue;
    }
    // Least-squares 2x2 linear part of the affine corner fit.
    const Eigen::RowVector2d src_mean = src.colwise().mean();
    const Eigen::RowVector2d dst_mean = dst.colwise().mean();
    const Eigen::Matrix<double, 4, 2> sc = src.rowwise() - src_mean;
    const Eigen::Matrix<double, 4, 2> dc = dst.rowwise() - dst_mean;
    const Eigen::Matrix2d cov = sc.transpose() * sc;
    const Eigen::Matrix2d lin =
        (cov.inverse() * (sc.transpose() * dc)).transpose();
    const Eigen::JacobiSVD<Eigen::Matrix2d> svd(lin);
    const double smax = svd.singularValues()(0);
    const double smin = svd.singularValues()(1);
    worst = std::min(worst, smax > 0.0 ? smin / smax : 0.0);
  }
  return worst;
}

bool detect_failure(const std::vector<AffineTransform>& renders,
                    const std::vector<double>& median_depths,
                    const Intrinsics& K) {
  validate_metric_inputs(renders, median_depths, K);
  const double frame_area = static_cast<double>(K.width) * K.height;
  for (std::size_t i = 0; i < renders.size(); ++i) {
    if (frame_visible_area(renders[i], median_depths[i], K) <=
        1e-12 * frame_area) {
      return true;
    }
  }
  return false;
}

MetricsReport compute_metrics(const std::vector<AffineTransform>& stabilized_poses,
                              const std::vector<AffineTransform>& renders,
                              const std::vector<double>& median_depths,
                              const Intrinsics& K) {
  if (stabilized_poses.size() != renders.size()) {
    throw std::invalid_argument("pose and render transform counts differ");
  }
  MetricsReport report;
  report.failed = detect_failure(renders, median_depths, K);
  if (report.failed) return report;  // failure zeroes every metric
  report.cropping = metric_cropping(renders, median_depths, K);
  report.distortion = metric_distortion(renders, median_depths, K);
  report.stability = metric_stability(stabilized_poses);
  return report;
}

double median_depth(const PointGrid& points) {
  std::vector<double> zs;
  zs.reserve(points.points.size());
  for (int i = 0; i < points.size(); ++i) {
    if (points.valid[i]) zs.push_back(points.points[i].z());
  }
  if (zs.empty()) {
    throw std::invalid_argument("median depth needs at least one valid point");
  }
  std::sort(zs.begin(), zs.end());
  const std::size_t n = zs.size();
  if (n % 2 == 1) return zs[n / 2];
  return 0.5 * (zs[n / 2 - 1] + zs[n / 2]);
}

}  // namespace flowstab
