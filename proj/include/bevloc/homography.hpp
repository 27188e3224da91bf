#pragma once

// Projective maps between planes: point projection, the four-corner
// displacement parameterization, exact and weighted DLT solvers, and the
// scale / rotation helpers used to place a BEV at network resolution.

#include <array>
#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bevloc/error.hpp"

namespace bevloc {

using Point2 = Eigen::Vector2d;

// Width x height of a pixel (or feature-cell) frame.
struct FrameSize {
  int width = 0;
  int height = 0;

  friend bool operator==(const FrameSize&, const FrameSize&) = default;
};

inline constexpr double kInfinityEps = 1e-12;
inline constexpr double kSingularEps = 1e-12;

// 3x3 projective map normalized so that entry (3,3) is one.
class Homography {
public:
  Homography() : m_(Eigen::Matrix3d::Identity()) {}

  explicit Homography(const Eigen::Matrix3d& m) : m_(m) {
    if (!m_.allFinite()) throw DegenerateError("homography has non-finite entries");
    if (std::abs(m_(2, 2)) < kSingularEps)
      throw DegenerateError("homography cannot be normalized: H33 is zero");
    m_ /= m_(2, 2);
    if (std::abs(m_.determinant()) <= kSingularEps)
      throw DegenerateError("homography is singular");
  }

  static Homography identity() { return Homography{}; }

  static Homography translation(double tx, double ty) {
    Eigen::Matrix3d m = Eigen::Matrix3d::Identity();
    m(0, 2) = tx;
    m(1, 2) = ty;
    return Homography(m);
  }

  // Row-major 9 numbers, as written in result documents.
  static Homography from_row_major(std::span<const double> v) {
    if (v.size() != 9) throw ContractError("homography needs 9 numbers");
    Eigen::Matrix3d m;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) m(r, c) = v[static_cast<std::size_t>(3 * r + c)];
    return Homography(m);
  }

  std::array<double, 9> row_major() const {
    std::array<double, 9> out{};
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) out[static_cast<std::size_t>(3 * r + c)] = m_(r, c);
    return out;
  }

  const Eigen::Matrix3d& matrix() const { return m_; }
  double operator()(int r, int c) const { return m_(r, c); }

  // Perspective-divided image of p. Throws when p lands on the line at infinity.
  Point2 apply(const Point2& p) const {
    const Eigen::Vector3d q = m_ * Eigen::Vector3d(p.x(), p.y(), 1.0);
    if (std::abs(q.z()) < kInfinityEps)
      throw DegenerateError("point projects to infinity");
    return {q.x() / q.z(), q.y() / q.z()};
  }

private:
  Eigen::Matrix3d m_;
};

inline Homography compose(const Homography& a, const Homography& b) {
  return Homography(a.matrix() * b.matrix());
}

inline Homography invert(const Homography& h) {
  return Homography(h.matrix().inverse());
}

// H1 of the BEV placement chain: isotropic scaling about the origin.
inline Homography scale_homography(double scale) {
  require(scale > 0.0 && std::isfinite(scale), "scale must be positive");
  Eigen::Matrix3d m = Eigen::Matrix3d::Identity();
  m(0, 0) = scale;
  m(1, 1) = scale;
  return Homography(m);
}

// H2 of the BEV placement chain: rotation by gamma degrees about (uc, vc).
// With v pointing down, positive gamma turns the image clockwise on screen.
inline Homography rotation_homography(double gamma_deg, const Point2& center) {
  const double g = gamma_deg * std::numbers::pi / 180.0;
  const double c = std::cos(g), s = std::sin(g);
  const double uc = center.x(), vc = center.y();
  Eigen::Matrix3d m;
  m << c, -s, uc * (1.0 - c) + vc * s,
       s, c, vc * (1.0 - c) - uc * s,
       0.0, 0.0, 1.0;
  return Homography(m);
}

// ---------------------------------------------------------------------------
// Point grids

// 2 x H x W coordinate set, stored row-major over (row, col).
struct PointGrid {
  int height = 0;
  int width = 0;
  std::vector<Point2> points;

  // The regular pixel-centre lattice: cell (row i, col j) sits at (u, v) = (j, i).
  static PointGrid lattice(int height, int width) {
    require(height > 0 && width > 0, "lattice needs a positive size");
    PointGrid g{height, width, {}};
    g.points.reserve(static_cast<std::size_t>(height) * static_cast<std::size_t>(width));
    for (int i = 0; i < height; ++i)
      for (int j = 0; j < width; ++j) g.points.emplace_back(j, i);
    return g;
  }

  const Point2& at(int i, int j) const {
    return points[static_cast<std::size_t>(i) * static_cast<std::size_t>(width) +
                  static_cast<std::size_t>(j)];
  }
  Point2& at(int i, int j) {
    return points[static_cast<std::size_t>(i) * static_cast<std::size_t>(width) +
                  static_cast<std::size_t>(j)];
  }
};

inline PointGrid project_points(const Homography& h, const PointGrid& x) {
  require(x.points.size() ==
              static_cast<std::size_t>(x.height) * static_cast<std::size_t>(x.width),
          "point grid size does not match its shape");
  PointGrid out{x.height, x.width, {}};
  out.points.reserve(x.points.size());
  for (const auto& p : x.points) out.points.push_back(h.apply(p));
  return out;
}

// ---------------------------------------------------------------------------
// Four-corner parameterization

// Displacements of the frame corners in the fixed order TL, TR, BR, BL.
struct CornerDisplacement {
  std::array<Point2, 4> d{Point2::Zero(), Point2::Zero(), Point2::Zero(), Point2::Zero()};

  static CornerDisplacement zero() { return {}; }

  CornerDisplacement& operator+=(const CornerDisplacement& o) {
    for (std::size_t k = 0; k < 4; ++k) d[k] += o.d[k];
    return *this;
  }
  friend CornerDisplacement operator+(CornerDisplacement a, const CornerDisplacement& b) {
    return a += b;
  }
  friend CornerDisplacement operator-(CornerDisplacement a, const CornerDisplacement& b) {
    for (std::size_t k = 0; k < 4; ++k) a.d[k] -= b.d[k];
    return a;
  }

  double max_abs() const {
    double m = 0.0;
    for (const auto& v : d) m = std::max(m, v.cwiseAbs().maxCoeff());
    return m;
  }
  bool all_finite() const {
    for (const auto& v : d)
      if (!v.allFinite()) return false;
    return true;
  }
};

// Lattice extremes of a frame: pixel centres (0,0), (W-1,0), (W-1,H-1), (0,H-1).
inline std::array<Point2, 4> frame_corners(FrameSize frame) {
  require(frame.width > 1 && frame.height > 1, "frame must be at least 2x2");
  const double w = frame.width - 1.0, h = frame.height - 1.0;
  return {Point2(0.0, 0.0), Point2(w, 0.0), Point2(w, h), Point2(0.0, h)};
}

namespace detail {

inline double cross2(const Point2& a, const Point2& b, const Point2& c) {
  const Point2 ab = b - a, ac = c - a;
  return ab.x() * ac.y() - ab.y() * ac.x();
}

inline bool has_collinear_triple(const std::array<Point2, 4>& q) {
  double scale = 0.0;
  for (const auto& p : q) scale = std::max(scale, p.cwiseAbs().maxCoeff());
  const double eps = 1e-9 * std::max(1.0, scale * scale);
  constexpr int triples[4][3] = {{0, 1, 2}, {0, 1, 3}, {0, 2, 3}, {1, 2, 3}};
  for (const auto& t : triples)
    if (std::abs(cross2(q[static_cast<std::size_t>(t[0])], q[static_cast<std::size_t>(t[1])],
                        q[static_cast<std::size_t>(t[2])])) <= eps)
      return true;
  return false;
}

// Exactly determined 4-point solve with h33 fixed to one.
inline Homography four_point_homography(const std::array<Point2, 4>& src,
                                        const std::array<Point2, 4>& dst) {
  if (has_collinear_triple(src) || has_collinear_triple(dst))
    throw DegenerateError("quadrilateral has three collinear corners");
  Eigen::Matrix<double, 8, 8> a;
  Eigen::Matrix<double, 8, 1> b;
  for (int k = 0; k < 4; ++k) {
    const double x = src[static_cast<std::size_t>(k)].x(), y = src[static_cast<std::size_t>(k)].y();
    const double u = dst[static_cast<std::size_t>(k)].x(), v = dst[static_cast<std::size_t>(k)].y();
    a.row(2 * k) << x, y, 1.0, 0.0, 0.0, 0.0, -x * u, -y * u;
    a.row(2 * k + 1) << 0.0, 0.0, 0.0, x, y, 1.0, -x * v, -y * v;
    b(2 * k) = u;
    b(2 * k + 1) = v;
  }
  Eigen::FullPivLU<Eigen::Matrix<double, 8, 8>> lu(a);
  if (!lu.isInvertible()) throw DegenerateError("degenerate four-point system");
  const Eigen::Matrix<double, 8, 1> h = lu.solve(b);
  Eigen::Matrix3d m;
  m << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), 1.0;
  return Homography(m);
}

} // namespace detail

// The unique homography taking each frame corner c_k to c_k + d_k.
inline Homography dlt_from_corners(const CornerDisplacement& d, FrameSize frame) {
  if (!d.all_finite()) throw DegenerateError("corner displacement is not finite");
  const auto src = frame_corners(frame);
  if (d.max_abs() == 0.0) return Homography::identity();
  std::array<Point2, 4> dst;
  for (std::size_t k = 0; k < 4; ++k) dst[k] = src[k] + d.d[k];
  return detail::four_point_homography(src, dst);
}

inline CornerDisplacement corners_from_homography(const Homography& h, FrameSize frame) {
  const auto src = frame_corners(frame);
  CornerDisplacement d;
  for (std::size_t k = 0; k < 4; ++k) d.d[k] = h.apply(src[k]) - src[k];
  return d;
}

// Mean distance between where a and b send the four frame corners.
inline double mean_corner_error(const Homography& a, const Homography& b, FrameSize frame) {
  double sum = 0.0;
  for (const auto& c : frame_corners(frame)) sum += (a.apply(c) - b.apply(c)).norm();
  return sum / 4.0;
}

namespace detail {

// Similarity taking the weighted centroid to the origin and the weighted mean
// distance to sqrt(2).
inline Eigen::Matrix3d hartley_normalizer(std::span<const Point2> pts,
                                          std::span<const double> w) {
  double wsum = 0.0;
  Point2 c = Point2::Zero();
  for (std::size_t i = 0; i < pts.size(); ++i) {
    c += w[i] * pts[i];
    wsum += w[i];
  }
  c /= wsum;
  double dist = 0.0;
  for (std::size_t i = 0; i < pts.size(); ++i) dist += w[i] * (pts[i] - c).norm();
  dist /= wsum;
  if (!(dist > 0.0)) throw DegenerateError("all weighted points coincide");
  const double s = std::numbers::sqrt2 / dist;
  Eigen::Matrix3d t;
  t << s, 0.0, -s * c.x(), 0.0, s, -s * c.y(), 0.0, 0.0, 1.0;
  return t;
}

} // namespace detail

// Least-squares homography minimizing the weighted algebraic error
// sum_i w_i |A_i h|^2 after Hartley normalization of both point sets.
inline Homography weighted_dlt(std::span<const Point2> src, std::span<const Point2> dst,
                               std::span<const double> weights) {
  require(src.size() == dst.size() && src.size() == weights.size(),
          "weighted_dlt: src, dst and weights must have equal length");
  std::vector<Point2> s, t;
  std::vector<double> w;
  for (std::size_t i = 0; i < src.size(); ++i) {
    require(weights[i] >= 0.0 && std::isfinite(weights[i]), "weights must be non-negative");
    if (weights[i] > 0.0) {
      if (!src[i].allFinite() || !dst[i].allFinite())
        throw DegenerateError("non-finite correspondence with positive weight");
      s.push_back(src[i]);
      t.push_back(dst[i]);
      w.push_back(weights[i]);
    }
  }
  if (s.size() < 4) throw DegenerateError("weighted_dlt needs at least 4 weighted points");
  // Exactly determined: weights cannot matter, solve directly.
  if (s.size() == 4) return detail::four_point_homography({s[0], s[1], s[2], s[3]}, {t[0], t[1], t[2], t[3]});

  const Eigen::Matrix3d ts = detail::hartley_normalizer(s, w);
  const Eigen::Matrix3d td = detail::hartley_normalizer(t, w);

  const auto n = static_cast<Eigen::Index>(s.size());
  Eigen::MatrixXd a(2 * n, 9);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(i);
    const Eigen::Vector3d p = ts * Eigen::Vector3d(s[k].x(), s[k].y(), 1.0);
    const Eigen::Vector3d q = td * Eigen::Vector3d(t[k].x(), t[k].y(), 1.0);
    const double sw = std::sqrt(w[k]);
    a.row(2 * i) << 0.0, 0.0, 0.0, -p.x(), -p.y(), -1.0, q.y() * p.x(), q.y() * p.y(), q.y();
    a.row(2 * i + 1) << p.x(), p.y(), 1.0, 0.0, 0.0, 0.0, -q.x() * p.x(), -q.x() * p.y(), -q.x();
    a.row(2 * i) *= sw;
    a.row(2 * i + 1) *= sw;
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  if (sv.size() < 9 || sv(7) <= 1e-10 * sv(0))
    throw DegenerateError("rank-deficient design matrix in weighted_dlt");
  const Eigen::VectorXd h = svd.matrixV().col(8);
  Eigen::Matrix3d hn;
  hn << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), h(8);
  return Homography(td.inverse() * hn * ts);
}

// ---------------------------------------------------------------------------
// Frame conversion

// Feature cell j covers image pixels [j*stride, (j+1)*stride); its centre in
// image pixel coordinates is j*stride + (stride-1)/2.
inline Eigen::Matrix3d feature_to_image_transform(double stride_x, double stride_y) {
  require(stride_x > 0.0 && stride_y > 0.0, "stride must be positive");
  Eigen::Matrix3d t;
  t << stride_x, 0.0, 0.5 * (stride_x - 1.0), 0.0, stride_y, 0.5 * (stride_y - 1.0), 0.0, 0.0, 1.0;
  return t;
}

inline Homography feature_to_image(const Homography& h_feature, double stride_x, double stride_y) {
  const Eigen::Matrix3d t = feature_to_image_transform(stride_x, stride_y);
  return Homography(t * h_feature.matrix() * t.inverse());
}
inline Homography feature_to_image(const Homography& h_feature, double stride) {
  return feature_to_image(h_feature, stride, stride);
}

inline Homography image_to_feature(const Homography& h_image, double stride_x, double stride_y) {
  const Eigen::Matrix3d t = feature_to_image_transform(stride_x, stride_y);
  return Homography(t.inverse() * h_image.matrix() * t);
}
inline Homography image_to_feature(const Homography& h_image, double stride) {
  return image_to_feature(h_image, stride, stride);
}

} // namespace bevloc
