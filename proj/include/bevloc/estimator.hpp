#pragma once

// Recurrent homography estimation on a coarse feature grid.
//
// Each iteration projects the feature lattice X through the current estimate
// H^{k-1}, samples (2r+1)^2 correlation windows around the projections at full
// and half resolution, asks a residual updater for a corner-displacement
// increment, and rebuilds H^k from the accumulated corner cube by DLT.
// Localization reads out where the BEV centre lands on the satellite image;
// heading comes from a second point on the BEV's forward axis.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "bevloc/correlation.hpp"
#include "bevloc/error.hpp"
#include "bevloc/geometry.hpp"
#include "bevloc/georef.hpp"
#include "bevloc/homography.hpp"
#include "bevloc/raster.hpp"

namespace bevloc {

// Everything a residual updater may look at in one iteration.
namespace detail {

// 1 where a pixel is observed: nonzero in any channel.
inline ImageBuffer observed_indicator(const ImageBuffer& img) {
  const ImageBuffer gray = to_grayscale(img);
  std::vector<double> seen(gray.data().size());
  for (std::size_t t = 0; t < seen.size(); ++t) seen[t] = gray.data()[t] != 0.0 ? 1.0 : 0.0;
  return ImageBuffer(img.height(), img.width(), 1, std::move(seen));
}

// Per cell (row-major): whether every in-image pixel of the cell's descriptor
// window is fully observed (indicator 1, up to rounding).
inline std::vector<bool> observed_cells(const ImageBuffer& indicator, int grid_h, int grid_w, int lead) {
  const int h = indicator.height(), w = indicator.width();
  std::vector<int> bad(static_cast<std::size_t>(h + 1) * static_cast<std::size_t>(w + 1), 0);
  auto at = [&](int y, int x) -> int& {
    return bad[static_cast<std::size_t>(y) * static_cast<std::size_t>(w + 1) + static_cast<std::size_t>(x)];
  };
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      at(y + 1, x + 1) = at(y, x + 1) + at(y + 1, x) - at(y, x) + (indicator.at(y, x) < 1.0 - 1e-9 ? 1 : 0);
  const int sy = h / grid_h, sx = w / grid_w;
  std::vector<bool> out(static_cast<std::size_t>(grid_h) * static_cast<std::size_t>(grid_w));
  for (int k = 0; k < grid_h; ++k)
    for (int l = 0; l < grid_w; ++l) {
      const int y0 = std::max(0, (k - lead) * sy), y1 = std::min(h, (k + lead + 1) * sy);
      const int x0 = std::max(0, (l - lead) * sx), x1 = std::min(w, (l + lead + 1) * sx);
      out[static_cast<std::size_t>(k) * static_cast<std::size_t>(grid_w) + static_cast<std::size_t>(l)] =
          at(y1, x1) - at(y0, x1) - at(y1, x0) + at(y0, x0) == 0;
    }
  return out;
}

// Subtracts the mean and scales to unit norm; false when the vector is flat.
inline bool center_unit(std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double n = 0.0;
  for (double& x : v) {
    x -= m;
    n += x * x;
  }
  if (n <= 1e-20) return false;
  n = 1.0 / std::sqrt(n);
  for (double& x : v) x *= n;
  return true;
}

inline int window_lead(FeatureMode mode, const PatchLayout& layout) {
  return mode == FeatureMode::patch ? layout.span / 2 : 0;
}

} // namespace detail

// Summed-area table of a single-channel image.
class IntegralImage {
public:
  IntegralImage() = default;
  explicit IntegralImage(const ImageBuffer& gray)
      : IntegralImage(gray.height(), gray.width(), [&](int y, int x) { return gray.at(y, x); }) {}
  // value(y, x) for every pixel
  template <class F>
  IntegralImage(int h, int w, F value)
      : h_(h), w_(w), t_(static_cast<std::size_t>(h_ + 1) * static_cast<std::size_t>(w_ + 1), 0.0) {
    for (int y = 0; y < h_; ++y)
      for (int x = 0; x < w_; ++x) at(y + 1, x + 1) = at(y, x + 1) + at(y + 1, x) - at(y, x) + value(y, x);
  }
  // Sum over rows [y, y+bh) and columns [x, x+bw); the block must be inside.
  double sum(int y, int x, int bh, int bw) const {
    return get(y + bh, x + bw) - get(y, x + bw) - get(y + bh, x) + get(y, x);
  }

private:
  double& at(int y, int x) { return t_[static_cast<std::size_t>(y) * static_cast<std::size_t>(w_ + 1) + static_cast<std::size_t>(x)]; }
  double get(int y, int x) const { return t_[static_cast<std::size_t>(y) * static_cast<std::size_t>(w_ + 1) + static_cast<std::size_t>(x)]; }
  int h_ = 0, w_ = 0;
  std::vector<double> t_;
};

struct BlockMatch {
  Point2 src;    // satellite feature cell centre
  Point2 dst;    // where the warped BEV content around src sits on the satellite, feature cells
  double score;  // normalized cross-correlation at the match
};

// Warps the BEV into the satellite frame with a feature frame homography and
// block-matches each cell's window of sub-block means against the satellite,
// hill-climbing over integer pixel shifts from zero in steps of 4, 2 and 1
// pixels, then a gradient sub-pixel step. Exact-zero BEV
// pixels count as unobservable, as do pixels warped in from outside the BEV;
// sub-blocks touching them are left out of the match.
class BevResampler {
public:
  BevResampler(const ImageBuffer& bev, const ImageBuffer& sat, int grid_h, int grid_w, PatchLayout layout,
               int search_px)
      : bev_(stack(to_grayscale(bev), detail::observed_indicator(bev))),
        grid_h_(grid_h), grid_w_(grid_w), layout_(layout), search_(search_px) {
    require(bev.size().width == sat.size().width && bev.size().height == sat.size().height,
            "BEV and satellite images must have equal size");
    require(search_px >= 2, "search range must be at least 2 pixels");
    const int h = sat.height(), w = sat.width(), by = h / grid_h / layout.per_cell, bx = w / grid_w / layout.per_cell;
    require(by >= 1 && bx >= 1, "sub-blocks must be at least one pixel");
    // mean of the sub-block whose top-left pixel is (y, x), where it fits
    const IntegralImage si(to_grayscale(sat));
    sat_means_.assign(static_cast<std::size_t>(h) * static_cast<std::size_t>(w), 0.0);
    for (int y = 0; y + by <= h; ++y)
      for (int x = 0; x + bx <= w; ++x)
        sat_means_[static_cast<std::size_t>(y) * static_cast<std::size_t>(w) + static_cast<std::size_t>(x)] =
            si.sum(y, x, by, bx) / (static_cast<double>(by) * bx);
  }

  std::vector<BlockMatch> match(const Homography& h_feature) const {
    const int h = bev_.height(), w = bev_.width();
    const int sy = h / grid_h_, sx = w / grid_w_, per = layout_.per_cell;
    require(sy % per == 0 && sx % per == 0, "stride must be divisible by the sub-block count");
    const int by = sy / per, bx = sx / per, side = per * layout_.span, lead = per * (layout_.span - 1) / 2;
    const Homography hi = feature_to_image(h_feature, sx, sy);
    const ImageBuffer warped = warp_by_homography(bev_, hi, bev_.size());
    const IntegralImage wi(h, w, [&](int y, int x) { return warped.at(y, x, 0); });
    const IntegralImage bi(h, w, [&](int y, int x) { return warped.at(y, x, 1) < 1.0 - 1e-9 ? 1.0 : 0.0; });
    const double area = static_cast<double>(by) * bx;
    const int r = search_;

    std::vector<BlockMatch> out;
    std::vector<int> ys, xs;
    std::vector<double> tmpl, raw, cand, memo(static_cast<std::size_t>((2 * r + 1) * (2 * r + 1)));
    for (int k = 0; k < grid_h_; ++k)
      for (int l = 0; l < grid_w_; ++l) {
        ys.clear();
        xs.clear();
        tmpl.clear();
        for (int a = 0; a < side; ++a)
          for (int b = 0; b < side; ++b) {
            const int y = (per * k - lead + a) * by, x = (per * l - lead + b) * bx;
            if (y - r < 0 || y + by + r > h || x - r < 0 || x + bx + r > w) continue;
            if (bi.sum(y, x, by, bx) > 0.0) continue;
            ys.push_back(y);
            xs.push_back(x);
            tmpl.push_back(wi.sum(y, x, by, bx) / area);
          }
        if (tmpl.size() * 3 < static_cast<std::size_t>(side * side)) continue;
        raw = tmpl;
        if (!detail::center_unit(tmpl)) continue;
        cand.resize(tmpl.size());
        std::fill(memo.begin(), memo.end(), std::numeric_limits<double>::quiet_NaN());
        auto ncc = [&](int dy, int dx) {
          double& m = memo[static_cast<std::size_t>((dy + r) * (2 * r + 1) + dx + r)];
          if (!std::isnan(m)) return m;
          for (std::size_t t = 0; t < cand.size(); ++t)
            cand[t] = sat_means_[static_cast<std::size_t>(ys[t] + dy) * static_cast<std::size_t>(w) +
                                 static_cast<std::size_t>(xs[t] + dx)];
          m = -1.0;
          if (!detail::center_unit(cand)) return m;
          double v = 0.0;
          for (std::size_t t = 0; t < cand.size(); ++t) v += tmpl[t] * cand[t];
          return m = v;
        };
        int best_y = 0, best_x = 0;
        double best = ncc(0, 0);
        for (int step : {4, 2, 1})
          for (bool moved = true; moved;) {
            moved = false;
            const int cy = best_y, cx = best_x;
            for (int dy = -step; dy <= step; dy += step)
              for (int dx = -step; dx <= step; dx += step) {
                const int y = cy + dy, x = cx + dx;
                if ((dy == 0 && dx == 0) || std::abs(y) > r || std::abs(x) > r) continue;
                const double v = ncc(y, x);
                if (v > best) {
                  best = v;
                  best_y = y;
                  best_x = x;
                  moved = true;
                }
              }
          }
        if (best <= 0.0 || std::abs(best_y) == r || std::abs(best_x) == r) continue;
        // Linearize the satellite sub-block means about the integer match and
        // solve t = a * (s + gx dx + gy dy) + b by least squares (centred, so b
        // drops out); an exact integer match returns dx = dy = 0.
        auto sample = [&](std::size_t t, int dy, int dx) {
          return sat_means_[static_cast<std::size_t>(ys[t] + best_y + dy) * static_cast<std::size_t>(w) +
                            static_cast<std::size_t>(xs[t] + best_x + dx)];
        };
        const std::size_t nd = tmpl.size();
        Eigen::MatrixXd design(static_cast<Eigen::Index>(nd), 3);
        Eigen::VectorXd rhs(static_cast<Eigen::Index>(nd));
        for (std::size_t t = 0; t < nd; ++t) {
          const auto row = static_cast<Eigen::Index>(t);
          design(row, 0) = sample(t, 0, 0);
          design(row, 1) = 0.5 * (sample(t, 0, 1) - sample(t, 0, -1));
          design(row, 2) = 0.5 * (sample(t, 1, 0) - sample(t, -1, 0));
          rhs(row) = raw[t];
        }
        design.rowwise() -= design.colwise().mean();
        rhs.array() -= rhs.mean();
        const Eigen::Vector3d sol = design.colPivHouseholderQr().solve(rhs);
        if (!(sol(0) > 0.0) || !sol.allFinite()) continue;
        const double fx = best_x + std::clamp(sol(1) / sol(0), -0.5, 0.5);
        const double fy = best_y + std::clamp(sol(2) / sol(0), -0.5, 0.5);
        out.push_back({Point2(l, k), Point2(l + fx / sx, k + fy / sy), best});
      }
    return out;
  }

private:
  static ImageBuffer stack(const ImageBuffer& a, const ImageBuffer& b) {
    std::vector<double> v(2 * a.data().size());
    for (std::size_t t = 0; t < a.data().size(); ++t) {
      v[2 * t] = a.data()[t];
      v[2 * t + 1] = b.data()[t];
    }
    return ImageBuffer(a.height(), a.width(), 2, std::move(v));
  }

  ImageBuffer bev_;  // intensity, observed indicator
  std::vector<double> sat_means_;
  int grid_h_, grid_w_;
  PatchLayout layout_;
  int search_;
};

struct UpdaterInput {
  const PointGrid& lattice;            // X
  const PointGrid& projected;          // X'^k = H^{k-1} X
  const CorrelationSlice& slice;       // S^k, full resolution
  const CorrelationSlice& slice_half;  // S^{1/2,k}, sampled at X'^k / 2
  const Homography& current;           // H^{k-1}
  FrameSize frame;                     // feature grid extent (cube frame)
  const FeatureMap* bev_features = nullptr;  // optional, for descriptor-level refinement
  const FeatureMap* sat_features = nullptr;
  const BevResampler* resampler = nullptr;  // optional, re-describes the warped BEV
};


// Produces the residual corner displacement for one iteration. Implementations
// must return finite values and a zero update when every correlation is zero.
class ResidualUpdater {
public:
  virtual ~ResidualUpdater() = default;
  virtual CornerDisplacement update(const UpdaterInput& in) const = 0;
};

struct CellFlow {
  std::vector<Point2> flow;      // per cell, in feature cells
  std::vector<double> weight;    // per cell max correlation of the full-res window
  std::vector<bool> extended;    // true where the half-res window supplied the flow
  std::vector<double> margin;    // peak minus the best tap outside the peak's 3x3 neighbourhood
};

// Sub-cell peak model for one correlation window.
//   window:        softmax expectation over all (2r+1)^2 taps
//   neighbourhood: softmax expectation over the 3x3 taps around the maximum
//   parabola:      separable parabola vertex through the maximum and its neighbours
// The two local models ignore taps that sample outside the satellite grid
// together with their mirror image about the maximum, so a clipped
// neighbourhood stays symmetric.
enum class PeakModel { window, neighbourhood, parabola };

inline std::string_view to_string(PeakModel m) {
  switch (m) {
    case PeakModel::window: return "window";
    case PeakModel::neighbourhood: return "neighbourhood";
    case PeakModel::parabola: return "parabola";
  }
  return "?";
}

inline PeakModel peak_model_from_string(std::string_view s) {
  if (s == "window") return PeakModel::window;
  if (s == "neighbourhood" || s == "neighborhood") return PeakModel::neighbourhood;
  if (s == "parabola") return PeakModel::parabola;
  throw ContractError("unknown peak model '" + std::string(s) + "'");
}

namespace detail {

inline int window_argmax(const double* w, int n, bool& flat) {
  int best = 0;
  double lo = w[0];
  for (int t = 1; t < n; ++t) {
    if (w[t] > w[best]) best = t;
    lo = std::min(lo, w[t]);
  }
  flat = w[best] == lo;
  return best;
}

// Expected tap offset under softmax(window / temperature).
inline Point2 soft_argmax(const double* w, int radius, double temperature, bool local = false,
                          const unsigned char* valid = nullptr) {
  const int side = 2 * radius + 1;
  bool flat = false;
  const int best = window_argmax(w, side * side, flat);
  if (flat) return Point2::Zero();
  const double m = w[best];
  const int bu = best % side, bv = best / side;
  double z = 0.0, su = 0.0, sv = 0.0;
  for (int t = 0; t < side * side; ++t) {
    const int tu = t % side, tv = t / side;
    if (local) {
      if (std::abs(tu - bu) > 1 || std::abs(tv - bv) > 1) continue;
      if (valid && t != best) {
        const int mu = 2 * bu - tu, mv = 2 * bv - tv;
        if (mu < 0 || mu >= side || mv < 0 || mv >= side) continue;
        if (!valid[t] || !valid[mv * side + mu]) continue;
      }
    }
    const double e = std::exp((w[t] - m) / temperature);
    z += e;
    su += e * (tu - radius);
    sv += e * (tv - radius);
  }
  return {su / z, sv / z};
}

// Vertex of the parabola through the maximum and its two neighbours on each
// axis, clamped to half a tap. An axis falls back to the integer peak when a
// neighbour is missing or the profile is not concave.
inline Point2 parabolic_peak(const double* w, int radius, const unsigned char* valid = nullptr) {
  const int side = 2 * radius + 1;
  bool flat = false;
  const int best = window_argmax(w, side * side, flat);
  if (flat) return Point2::Zero();
  const int bu = best % side, bv = best / side;
  auto ok = [&](int u, int v) {
    return u >= 0 && u < side && v >= 0 && v < side && (!valid || valid[v * side + u]);
  };
  auto vertex = [&](int u0, int v0, int u1, int v1) {
    if (!ok(u0, v0) || !ok(u1, v1)) return 0.0;
    const double a = w[v0 * side + u0], c = w[v1 * side + u1], b = w[best];
    const double den = a - 2.0 * b + c;
    if (!(den < 0.0)) return 0.0;
    return std::clamp(0.5 * (a - c) / den, -0.5, 0.5);
  };
  return {bu - radius + vertex(bu - 1, bv, bu + 1, bv), bv - radius + vertex(bu, bv - 1, bu, bv + 1)};
}

inline Point2 peak_offset(const double* w, int radius, double temperature, PeakModel model,
                          const unsigned char* valid) {
  switch (model) {
    case PeakModel::window: return soft_argmax(w, radius, temperature);
    case PeakModel::neighbourhood: return soft_argmax(w, radius, temperature, true, valid);
    case PeakModel::parabola: return parabolic_peak(w, radius, valid);
  }
  return Point2::Zero();
}

// Marks window taps that sample inside a grid of the given size.
inline void tap_validity(const Point2& centre, int radius, int height, int width, std::vector<unsigned char>& out) {
  const int side = 2 * radius + 1;
  out.resize(static_cast<std::size_t>(side) * static_cast<std::size_t>(side));
  for (int dv = -radius; dv <= radius; ++dv)
    for (int du = -radius; du <= radius; ++du) {
      const double x = centre.x() + du, y = centre.y() + dv;
      out[static_cast<std::size_t>((dv + radius) * side + du + radius)] =
          x >= 0.0 && x <= width - 1 && y >= 0.0 && y <= height - 1;
    }
}

} // namespace detail

// Where the slices were taken, so local peak models can skip taps that fall
// outside the satellite grid.
struct SliceFrame {
  const PointGrid* projected = nullptr;  // full-res window centres
  FrameSize grid;                        // satellite feature grid
};

// Per-cell flow from the correlation windows. Where the full-resolution
// maximum sits on the window rim the true match may lie outside it, so the
// flow is taken from the half-resolution window instead: a half-res tap
// offset q corresponds to 2q + 0.5 full-res cells, since pooled cell k' is
// centred on full cell 2k' + 0.5.
inline CellFlow softargmax_flow(const CorrelationSlice& s, const CorrelationSlice& s_half, double temperature,
                                PeakModel model = PeakModel::window, SliceFrame frame = {}) {
  require(temperature > 0.0, "soft-argmax temperature must be positive");
  require(s.height == s_half.height && s.width == s_half.width,
          "full and half resolution slices must cover the same cells");
  require(!frame.projected || (frame.projected->height == s.height && frame.projected->width == s.width),
          "slice frame must match the slices");
  const int r = s.radius, side = s.side();
  const std::size_t cells = static_cast<std::size_t>(s.height) * static_cast<std::size_t>(s.width);
  CellFlow out{std::vector<Point2>(cells, Point2::Zero()), std::vector<double>(cells, 0.0),
               std::vector<bool>(cells, false), std::vector<double>(cells, 0.0)};
  const bool masked = frame.projected && model != PeakModel::window;
  std::vector<unsigned char> valid;
  for (int i = 0; i < s.height; ++i)
    for (int j = 0; j < s.width; ++j) {
      const std::size_t c = static_cast<std::size_t>(i) * static_cast<std::size_t>(s.width) +
                            static_cast<std::size_t>(j);
      const double* w = s.window(i, j);
      bool flat = false;
      const auto best = static_cast<std::size_t>(detail::window_argmax(w, side * side, flat));
      const double peak = w[best];
      out.weight[c] = peak > 0.0 ? peak : 0.0;
      // A flat window carries no direction: zero flow, zero margin.
      if (!(peak > 0.0) || flat) continue;
      const int bu = static_cast<int>(best) % side - r, bv = static_cast<int>(best) / side - r;
      double rival = 0.0;
      for (std::size_t t = 0; t < s.taps(); ++t) {
        const int tu = static_cast<int>(t) % side - r, tv = static_cast<int>(t) / side - r;
        if (std::abs(tu - bu) > 1 || std::abs(tv - bv) > 1) rival = std::max(rival, w[t]);
      }
      out.margin[c] = peak - rival;
      if (std::abs(bu) == r || std::abs(bv) == r) {
        if (masked)
          detail::tap_validity(frame.projected->at(i, j) * 0.5, s_half.radius, frame.grid.height / 2,
                               frame.grid.width / 2, valid);
        const Point2 q =
            detail::peak_offset(s_half.window(i, j), s_half.radius, temperature, model, masked ? valid.data() : nullptr);
        out.flow[c] = 2.0 * q + Point2(0.5, 0.5);
        out.extended[c] = true;
      } else {
        if (masked) detail::tap_validity(frame.projected->at(i, j), r, frame.grid.height, frame.grid.width, valid);
        out.flow[c] = detail::peak_offset(w, r, temperature, model, masked ? valid.data() : nullptr);
      }
    }
  return out;
}

namespace detail {

// Position near `start` maximizing <b, s(x)> / |s(x)|, where s(x) is the
// bilinear interpolation of the satellite descriptors (zero outside the grid).
// When b is itself an interpolation of satellite descriptors the maximum is
// exactly where it came from, so this removes the bias of fitting a peak to
// correlation samples. Coarse-to-fine search within one cell of start.
inline Point2 refine_peak(const double* b, const FeatureMap& fs, const Point2& start,
                          double* best_out = nullptr) {
  const int d = fs.channels();
  const int x0 = static_cast<int>(std::floor(start.x())) - 1, y0 = static_cast<int>(std::floor(start.y())) - 1;
  constexpr int kN = 4;
  std::array<const double*, kN * kN> node{};
  std::array<double, kN * kN> dot{};
  for (int a = 0; a < kN; ++a)
    for (int c = 0; c < kN; ++c) {
      const int y = y0 + a, x = x0 + c;
      if (y < 0 || y >= fs.height() || x < 0 || x >= fs.width()) continue;
      const double* f = fs.vec(y, x);
      node[static_cast<std::size_t>(a * kN + c)] = f;
      double v = 0.0;
      for (int k = 0; k < d; ++k) v += b[k] * f[k];
      dot[static_cast<std::size_t>(a * kN + c)] = v;
    }
  std::array<double, kN * kN * kN * kN> gram{};
  for (std::size_t p = 0; p < node.size(); ++p)
    for (std::size_t q = p; q < node.size(); ++q) {
      if (!node[p] || !node[q]) continue;
      double v = 0.0;
      for (int k = 0; k < d; ++k) v += node[p][k] * node[q][k];
      gram[p * node.size() + q] = gram[q * node.size() + p] = v;
    }
  auto score = [&](double x, double y) {
    const double lx = x - x0, ly = y - y0;
    const int cx = std::clamp(static_cast<int>(std::floor(lx)), 0, kN - 2);
    const int cy = std::clamp(static_cast<int>(std::floor(ly)), 0, kN - 2);
    const double ax = lx - cx, ay = ly - cy;
    const std::array<std::size_t, 4> id{static_cast<std::size_t>(cy * kN + cx), static_cast<std::size_t>(cy * kN + cx + 1),
                                         static_cast<std::size_t>((cy + 1) * kN + cx),
                                         static_cast<std::size_t>((cy + 1) * kN + cx + 1)};
    const std::array<double, 4> w{(1 - ax) * (1 - ay), ax * (1 - ay), (1 - ax) * ay, ax * ay};
    double num = 0.0, den = 0.0;
    for (std::size_t p = 0; p < 4; ++p) {
      num += w[p] * dot[id[p]];
      for (std::size_t q = 0; q < 4; ++q) den += w[p] * w[q] * gram[id[p] * node.size() + id[q]];
    }
    return den > 1e-24 ? num / std::sqrt(den) : -2.0;
  };
  const double lo_x = x0, hi_x = x0 + kN - 1, lo_y = y0, hi_y = y0 + kN - 1;
  Point2 best = start;
  double best_score = score(start.x(), start.y());
  for (double step : {0.25, 0.0625, 0.015625}) {
    const Point2 centre = best;
    for (int dy = -2; dy <= 2; ++dy)
      for (int dx = -2; dx <= 2; ++dx) {
        const double x = std::clamp(centre.x() + dx * step, lo_x, hi_x);
        const double y = std::clamp(centre.y() + dy * step, lo_y, hi_y);
        const double v = score(x, y);
        if (v > best_score + 1e-12) {
          best_score = v;
          best = Point2(x, y);
        }
      }
  }
  if (best_out) *best_out = best_score;
  return best;
}

// Weights restricted to the consensus set of the best four-point hypothesis,
// scored by the weight within `threshold` of it. Draws are weight-proportional
// from a fixed seed, so results are reproducible.
inline std::vector<double> consensus_weights(const std::vector<Point2>& src, const std::vector<Point2>& dst,
                                             const std::vector<double>& base, int hypotheses, double threshold) {
  std::vector<double> out = base;
  if (hypotheses <= 0 || std::count_if(base.begin(), base.end(), [](double w) { return w > 0.0; }) < 4) return out;
  std::mt19937_64 gen(0x5eed);
  std::discrete_distribution<std::size_t> pick(base.begin(), base.end());
  double best = -1.0;
  Homography best_h;
  for (int t = 0; t < hypotheses; ++t) {
    std::array<std::size_t, 4> id{};
    for (std::size_t k = 0; k < 4; ++k) {
      do id[k] = pick(gen);
      while (std::find(id.begin(), id.begin() + static_cast<std::ptrdiff_t>(k), id[k]) != id.begin() + static_cast<std::ptrdiff_t>(k));
    }
    Homography h;
    double score = 0.0;
    try {
      h = four_point_homography({src[id[0]], src[id[1]], src[id[2]], src[id[3]]},
                                {dst[id[0]], dst[id[1]], dst[id[2]], dst[id[3]]});
      for (std::size_t c = 0; c < src.size(); ++c)
        if (base[c] > 0.0 && (h.apply(src[c]) - dst[c]).norm() < threshold) score += base[c];
    } catch (const DegenerateError&) {
      continue;  // hypothesis sends a cell to infinity
    }
    if (score > best) {
      best = score;
      best_h = h;
    }
  }
  if (best <= 0.0) return out;
  for (std::size_t c = 0; c < src.size(); ++c)
    if (!((best_h.apply(src[c]) - dst[c]).norm() < threshold)) out[c] = 0.0;
  return out;
}

// Weighted DLT followed by Cauchy reweighting passes with a halving scale.
inline Homography robust_fit(const std::vector<Point2>& src, const std::vector<Point2>& dst,
                             const std::vector<double>& base, int passes, double last_scale) {
  Homography fit = weighted_dlt(src, dst, base);
  std::vector<double> w(src.size());
  for (int pass = 0; pass < passes; ++pass) {
    const double scale = last_scale * std::ldexp(1.0, passes - 1 - pass);
    std::size_t kept = 0;
    for (std::size_t c = 0; c < src.size(); ++c) {
      const double e = (fit.apply(src[c]) - dst[c]).norm() / scale;
      w[c] = base[c] / (1.0 + e * e);
      if (w[c] > 0.0) ++kept;
    }
    if (kept < 4) break;
    fit = weighted_dlt(src, dst, w);
  }
  return fit;
}

} // namespace detail

// Per-cell fit weight: the window's peak correlation, or the peak scaled by
// its margin over the best tap outside the peak's 3x3 neighbourhood.
enum class FlowWeighting { peak, margin };

struct SoftArgmaxOptions {
  double temperature = 0.05;
  PeakModel peak_model = PeakModel::window;
  FlowWeighting weighting = FlowWeighting::peak;
  int irls_iterations = 0;  // Cauchy reweighting passes after the first fit
  double irls_scale = 0.5;  // feature cells, scale of the last pass; earlier passes double it
  bool refine = false;      // descriptor-level sub-cell refinement when features are supplied
  int ransac_hypotheses = 0;     // four-point hypotheses before the fit; 0 fits all cells
  double ransac_threshold = 1.0;  // cells
  int resample_passes = 0;  // warp-and-match passes when a resampler is supplied
  double resample_capture = 0.5;  // cells; below this median match shift the slice fit is skipped
  double resample_inlier = 0.1;   // cells
  double resample_consensus = 0.5;  // share of inliers needed to trust the matches

  // Whole-window soft-argmax, peak weights, one weighted DLT.
  static SoftArgmaxOptions plain() { return {}; }
  // Settings used by the estimator unless overridden.
  static SoftArgmaxOptions robust() {
    return {.temperature = 0.1,
            .peak_model = PeakModel::parabola,
            .weighting = FlowWeighting::margin,
            .irls_iterations = 5,
            .irls_scale = 0.12,
            .refine = true,
            .ransac_hypotheses = 256,
            .resample_passes = 1};
  }

  void validate() const {
    require(temperature > 0.0, "updater temperature must be positive");
    require(irls_iterations >= 0 && irls_scale > 0.0, "invalid reweighting options");
    require(ransac_hypotheses >= 0 && ransac_threshold > 0.0, "invalid consensus options");
    require(resample_passes >= 0, "resample passes must be non-negative");
    require(resample_capture > 0.0 && resample_inlier > 0.0 && resample_consensus >= 0.0 && resample_consensus <= 1.0,
            "invalid resampling gates");
  }
};

// Classical residual updater: a flow per cell from its correlation window, a
// weighted homography fit to the flowed points, and the induced corner
// increment. Cells whose windows are all zero (unobservable, or projected
// outside the satellite grid) carry zero weight.
class SoftArgmaxUpdater final : public ResidualUpdater {
public:
  explicit SoftArgmaxUpdater(double temperature = 0.05) : SoftArgmaxUpdater(SoftArgmaxOptions{temperature}) {}
  explicit SoftArgmaxUpdater(SoftArgmaxOptions opt) : opt_(opt) { opt_.validate(); }

  const SoftArgmaxOptions& options() const { return opt_; }

  CornerDisplacement update(const UpdaterInput& in) const override {
    const int side = in.slice.side(), r = in.slice.radius;
    std::size_t observed = 0;
    for (int i = 0; i < in.slice.height; ++i)
      for (int j = 0; j < in.slice.width; ++j) {
        const double* w = in.slice.window(i, j);
        if (*std::max_element(w, w + side * side) > 0.0) ++observed;
      }
    if (observed < 4) return CornerDisplacement::zero();
    const bool resample = in.resampler && opt_.resample_passes > 0;
    if (resample) {
      // Inside the matching range the slice fit only adds its own bias.
      const Resampled first = resample_step(in.current, *in.resampler);
      if (captured(first)) {
        Homography next = first.h;
        for (int pass = 1; pass < opt_.resample_passes; ++pass) next = resample_step(next, *in.resampler).h;
        return corners_from_homography(next, in.frame) - corners_from_homography(in.current, in.frame);
      }
    }

    const CellFlow f = softargmax_flow(in.slice, in.slice_half, opt_.temperature, opt_.peak_model,
                                       {&in.projected, in.frame});
    const std::size_t n = in.projected.points.size();
    std::vector<Point2> dst(n);
    std::vector<double> base(n);
    std::size_t positive = 0;
    const bool refine = opt_.refine && in.bev_features && in.sat_features;
    for (std::size_t c = 0; c < n; ++c) {
      dst[c] = in.projected.points[c] + f.flow[c];
      base[c] = opt_.weighting == FlowWeighting::peak ? f.weight[c] : std::max(0.0, f.margin[c]) * f.weight[c];
      if (base[c] > 0.0) ++positive;
      if (refine && base[c] > 0.0 && !f.extended[c]) {
        const int i = static_cast<int>(c) / in.slice.width, j = static_cast<int>(c) % in.slice.width;
        const double* w = in.slice.window(i, j);
        int best = 0;
        for (int t = 1; t < side * side; ++t)
          if (w[t] > w[best]) best = t;
        const Point2 start = in.projected.points[c] + Point2(best % side - r, best / side - r);
        dst[c] = detail::refine_peak(in.bev_features->vec(i, j), *in.sat_features, start);
      }
    }
    if (positive < 4) return CornerDisplacement::zero();
    const std::vector<double> kept =
        detail::consensus_weights(in.projected.points, dst, base, opt_.ransac_hypotheses, opt_.ransac_threshold);
    const Homography fit = detail::robust_fit(in.projected.points, dst, kept, opt_.irls_iterations, opt_.irls_scale);
    Homography next = compose(fit, in.current);
    if (resample) {
      Resampled r = resample_step(next, *in.resampler);
      for (int pass = 0; pass < opt_.resample_passes && captured(r); ++pass) {
        next = r.h;
        if (pass + 1 < opt_.resample_passes) r = resample_step(next, *in.resampler);
      }
    }
    const CornerDisplacement delta =
        corners_from_homography(next, in.frame) - corners_from_homography(in.current, in.frame);
    // No window reaches further than twice its radius at half resolution.
    if (delta.max_abs() > 2.0 * in.slice.radius) return CornerDisplacement::zero();
    return delta;
  }

private:
  // Warps the BEV into the satellite frame with h, matches each covered cell's
  // descriptor against the satellite descriptors near the same cell, and
  // composes the fitted residual onto h. As h approaches the truth the two
  // images agree locally, so the matches lose their distortion bias.
  struct Resampled {
    Homography h;
    std::size_t matched = 0;
    double median_shift = std::numeric_limits<double>::infinity();  // cells
    double inliers = 0.0;  // share of matches the fitted residual explains within resample_inlier
  };

  // Far from the truth the hill-climb still finds nearby correlation maxima,
  // but they do not agree on one homography.
  bool captured(const Resampled& r) const {
    return r.matched >= 8 && r.median_shift < opt_.resample_capture && r.inliers >= opt_.resample_consensus;
  }

  Resampled resample_step(const Homography& h, const BevResampler& rs) const {
    const std::vector<BlockMatch> m = rs.match(h);
    std::vector<Point2> src, dst;
    std::vector<double> base;
    for (const BlockMatch& b : m) {
      src.push_back(b.src);
      dst.push_back(b.dst);
      base.push_back(b.score);
    }
    Resampled out{h, src.size()};
    if (src.size() < 4) return out;
    std::vector<double> shift(src.size());
    for (std::size_t c = 0; c < src.size(); ++c) shift[c] = (dst[c] - src[c]).norm();
    std::nth_element(shift.begin(), shift.begin() + static_cast<std::ptrdiff_t>(shift.size() / 2), shift.end());
    out.median_shift = shift[shift.size() / 2];
    const Homography fit = detail::robust_fit(src, dst, base, opt_.irls_iterations, opt_.irls_scale);
    std::size_t good = 0;
    for (std::size_t c = 0; c < src.size(); ++c)
      if ((fit.apply(src[c]) - dst[c]).norm() < opt_.resample_inlier) ++good;
    out.inliers = static_cast<double>(good) / static_cast<double>(src.size());
    out.h = compose(fit, h);
    return out;
  }

  SoftArgmaxOptions opt_;
};

struct EstimatorConfig {
  int iterations = 6;   // K: 6 for panorama BEVs, 10 for front-view BEVs
  int radius = 4;       // r
  int grid_h = 16;
  int grid_w = 16;
  FeatureMode features = FeatureMode::patch;
  bool normalize_features = true;
  PatchLayout patch;
  SoftArgmaxOptions flow = SoftArgmaxOptions::robust();  // used when no updater is supplied
  int block_search = 0;                  // pixels; 0 picks three quarters of a cell
  bool mask_unobserved = true;           // zero BEV descriptors whose window holds exact-zero pixels
  double confidence_temperature = 0.1;   // softmax temperature of the confidence map
  std::optional<double> axis_offset;     // pixels; default H/4
  std::shared_ptr<const ResidualUpdater> updater;  // null: SoftArgmaxUpdater

  int search_px(FrameSize image) const;

  void validate() const {
    require(iterations >= 1, "iterations must be at least 1");
    require(radius >= 1, "radius must be at least 1");
    require(grid_h >= 2 && grid_w >= 2, "feature grid must be at least 2x2");
    require(grid_h % 2 == 0 && grid_w % 2 == 0, "feature grid must be even for half-res pooling");
    require(confidence_temperature > 0.0, "confidence temperature must be positive");
    require(block_search >= 0, "block search range must be non-negative");
    flow.validate();
    require(!axis_offset || *axis_offset > 0.0, "axis offset must be positive");
  }
};

inline int EstimatorConfig::search_px(FrameSize image) const {
  return block_search > 0 ? block_search : std::max(2, 3 * image.width / grid_w / 4);
}

struct IterationState {
  int step = 0;
  CornerDisplacement cube;
  Homography h;                         // feature frame, = dlt_from_corners(cube)
  std::optional<double> corner_error;   // feature cells, when ground truth is known
};

struct EstimationResult {
  Homography h_feature;
  Homography h_image;
  std::vector<IterationState> trace;  // step 0 (initial) .. K
  CorrelationVolume volume;
  FrameSize frame;                    // feature grid
  double stride_x = 1.0;
  double stride_y = 1.0;
};

// Thrown when an intermediate cube degenerates; carries the trace so far.
class EstimationError : public DegenerateError {
public:
  EstimationError(const std::string& what, std::vector<IterationState> trace)
      : DegenerateError(what), trace_(std::move(trace)) {}
  const std::vector<IterationState>& trace() const { return trace_; }

private:
  std::vector<IterationState> trace_;
};

// Estimates the homography taking BEV pixels to satellite pixels.
// gt_feature, when supplied, is the true map in the feature frame and fills
// the per-step corner errors.
inline EstimationResult run(const ImageBuffer& bev, const ImageBuffer& sat, const EstimatorConfig& cfg,
                            const std::optional<Homography>& gt_feature = std::nullopt) {
  cfg.validate();
  if (bev.height() != sat.height() || bev.width() != sat.width())
    throw ContractError("BEV and satellite images must have equal size");
  FeatureMap fg = extract_features(bev, cfg.grid_h, cfg.grid_w, cfg.features, cfg.normalize_features, cfg.patch);
  const FeatureMap fs = extract_features(sat, cfg.grid_h, cfg.grid_w, cfg.features, cfg.normalize_features, cfg.patch);

  if (cfg.mask_unobserved) {
    const std::vector<bool> seen = detail::observed_cells(detail::observed_indicator(bev), cfg.grid_h, cfg.grid_w,
                                                          detail::window_lead(cfg.features, cfg.patch));
    for (int i = 0; i < cfg.grid_h; ++i)
      for (int j = 0; j < cfg.grid_w; ++j)
        if (!seen[static_cast<std::size_t>(i) * static_cast<std::size_t>(cfg.grid_w) + static_cast<std::size_t>(j)])
          std::fill_n(fg.vec(i, j), fg.channels(), 0.0);
  }

  EstimationResult res;
  res.volume = correlate(fg, fs);
  const CorrelationVolume half = pool_half(res.volume);
  res.frame = {cfg.grid_w, cfg.grid_h};
  res.stride_x = static_cast<double>(bev.width()) / cfg.grid_w;
  res.stride_y = static_cast<double>(bev.height()) / cfg.grid_h;

  const SoftArgmaxUpdater fallback(cfg.flow);
  const ResidualUpdater& updater = cfg.updater ? *cfg.updater : fallback;

  const BevResampler resampler(bev, sat, cfg.grid_h, cfg.grid_w, cfg.patch, cfg.search_px(bev.size()));
  const PointGrid lattice = PointGrid::lattice(cfg.grid_h, cfg.grid_w);
  auto record = [&](int step, const CornerDisplacement& cube, const Homography& h) {
    IterationState st{step, cube, h, std::nullopt};
    if (gt_feature) st.corner_error = mean_corner_error(h, *gt_feature, res.frame);
    res.trace.push_back(std::move(st));
  };

  CornerDisplacement cube = CornerDisplacement::zero();
  Homography h = dlt_from_corners(cube, res.frame);
  record(0, cube, h);
  for (int k = 1; k <= cfg.iterations; ++k) {
    try {
      const PointGrid projected = project_points(h, lattice);
      const CorrelationSlice s = sample_slices(res.volume, projected, cfg.radius, 1.0);
      const CorrelationSlice s_half = sample_slices(half, projected, cfg.radius, 0.5);
      const CornerDisplacement delta = updater.update({lattice, projected, s, s_half, h, res.frame, &fg, &fs, &resampler});
      if (!delta.all_finite()) throw DegenerateError("updater returned a non-finite displacement");
      cube += delta;
      h = dlt_from_corners(cube, res.frame);
    } catch (const DegenerateError& e) {
      throw EstimationError(std::string("iteration ") + std::to_string(k) + ": " + e.what(), res.trace);
    }
    record(k, cube, h);
  }
  res.h_feature = h;
  res.h_image = feature_to_image(h, res.stride_x, res.stride_y);
  return res;
}

// ---------------------------------------------------------------------------
// Readout

struct ConfidenceMap {
  int height = 0;
  int width = 0;
  std::vector<double> prob;  // row-major over satellite feature cells
  double scalar = 0.0;       // mass of the cell holding the predicted location

  double at(int k, int l) const {
    return prob[static_cast<std::size_t>(k) * static_cast<std::size_t>(width) + static_cast<std::size_t>(l)];
  }
  std::pair<int, int> argmax() const {
    const auto it = std::max_element(prob.begin(), prob.end());
    const auto idx = static_cast<int>(it - prob.begin());
    return {idx / width, idx % width};
  }
};

// Centre cell of the BEV feature grid.
inline std::pair<int, int> center_cell(const CorrelationVolume& c) { return {c.dim(0) / 2, c.dim(1) / 2}; }

// softmax over (k,l) of C[i_c, j_c, k, l] / temperature. The scalar is the
// probability of satellite cell `cell` (row, col); zero when no cell is given
// or it lies outside the grid.
inline ConfidenceMap confidence(const CorrelationVolume& c, double temperature,
                                std::optional<std::pair<int, int>> cell = std::nullopt) {
  require(temperature > 0.0, "confidence temperature must be positive");
  const auto [ic, jc] = center_cell(c);
  const int h = c.dim(2), w = c.dim(3);
  const double* plane = c.plane(ic, jc);
  const std::size_t n = static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
  const double m = *std::max_element(plane, plane + n);
  ConfidenceMap out{h, w, std::vector<double>(n), 0.0};
  double z = 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    out.prob[t] = std::exp((plane[t] - m) / temperature);
    z += out.prob[t];
  }
  for (double& p : out.prob) p /= z;
  if (cell && cell->first >= 0 && cell->first < h && cell->second >= 0 && cell->second < w)
    out.scalar = out.at(cell->first, cell->second);
  return out;
}

// Satellite feature cell (row, col) containing image pixel p.
inline std::pair<int, int> pixel_to_cell(const Point2& p, double stride_x, double stride_y) {
  return {static_cast<int>(std::floor(p.y() / stride_y)), static_cast<int>(std::floor(p.x() / stride_x))};
}

struct LocalizationResult {
  Point2 sat_pixel = Point2::Zero();  // (u_s, v_s), satellite image pixels
  PixelLabel patch_pixel;             // same point in patch pixels (meta.size scale)
  GpsCoord gps;
  double heading_deg = 0.0;           // clockwise from north, [-180, 180)
  double confidence = 0.0;
  ConfidenceMap confidence_map;
  Homography h_image;                 // BEV pixels -> satellite pixels
  int rotation_deg = 0;               // BEV pre-rotation applied before estimation
};

inline double wrap_degrees(double deg) {
  double w = std::fmod(deg + 180.0, 360.0);
  if (w < 0.0) w += 360.0;
  return w - 180.0;
}

// Projects the BEV centre (W/2, H/2) and the forward-axis point
// (W/2, H/2 - axis_offset) through h. The satellite image is assumed to have
// the BEV's size and to cover the whole patch, so patch pixels are image
// pixels scaled by meta.size / W.
inline LocalizationResult localize(const Homography& h, const PatchMeta& meta, FrameSize bev_size,
                                   double axis_offset) {
  meta.validate();
  require(bev_size.width > 0 && bev_size.height > 0, "BEV size must be positive");
  require(axis_offset > 0.0, "axis offset must be positive");
  const Point2 centre(bev_size.width / 2.0, bev_size.height / 2.0);
  const Point2 axis(centre.x(), centre.y() - axis_offset);
  LocalizationResult out;
  out.h_image = h;
  out.sat_pixel = h.apply(centre);
  const Point2 a = h.apply(axis);
  const double k = static_cast<double>(meta.size) / bev_size.width;
  out.patch_pixel = {out.sat_pixel.x() * k, out.sat_pixel.y() * k};
  out.gps = patch_pixel_to_gps(meta, out.patch_pixel);
  const Point2 d = a - out.sat_pixel;
  out.heading_deg = wrap_degrees(rad2deg(std::atan2(d.x(), -d.y())));
  return out;
}

inline double default_axis_offset(const EstimatorConfig& cfg, FrameSize bev_size) {
  return cfg.axis_offset.value_or(bev_size.height / 4.0);
}

// Full readout for one estimation: GPS, heading and confidence.
inline LocalizationResult readout(const EstimationResult& est, const Homography& h_image,
                                  const PatchMeta& meta, FrameSize bev_size, const EstimatorConfig& cfg) {
  LocalizationResult loc = localize(h_image, meta, bev_size, default_axis_offset(cfg, bev_size));
  // The confidence row belongs to the centre feature cell, which sits half a
  // cell off the image centre on even grids; score the cell it lands in.
  const auto [ic, jc] = center_cell(est.volume);
  const Point2 lands = est.h_feature.apply(Point2(jc, ic));
  loc.confidence_map = confidence(est.volume, cfg.confidence_temperature,
                                  std::pair{static_cast<int>(std::lround(lands.y())),
                                            static_cast<int>(std::lround(lands.x()))});
  loc.confidence = loc.confidence_map.scalar;
  return loc;
}

inline LocalizationResult locate(const ImageBuffer& bev, const ImageBuffer& sat, const PatchMeta& meta,
                                 const EstimatorConfig& cfg) {
  const EstimationResult est = run(bev, sat, cfg);
  return readout(est, est.h_image, meta, bev.size(), cfg);
}

struct DisambiguationResult {
  LocalizationResult best;
  int best_branch = 0;                 // quarter turns clockwise
  std::array<double, 4> confidences{}; // per branch
  std::array<EstimationResult, 4> runs;
};

// Runs the estimator on the BEV turned by 0, 90, 180 and 270 degrees and keeps
// the most confident branch (ties go to the smallest rotation). The reported
// homography and heading are for the unrotated BEV.
inline DisambiguationResult disambiguate_rotations(const ImageBuffer& bev, const ImageBuffer& sat,
                                                   const PatchMeta& meta, const EstimatorConfig& cfg) {
  require(bev.height() == bev.width(), "rotation disambiguation needs a square BEV");
  DisambiguationResult out;
  const Point2 pivot((bev.width() - 1) / 2.0, (bev.height() - 1) / 2.0);
  double best = -1.0;
  for (int q = 0; q < 4; ++q) {
    const ImageBuffer turned = rotate_quarter_turns(bev, q);
    out.runs[static_cast<std::size_t>(q)] = run(turned, sat, cfg);
    const EstimationResult& est = out.runs[static_cast<std::size_t>(q)];
    const Homography full = compose(est.h_image, rotation_homography(90.0 * q, pivot));
    LocalizationResult loc = readout(est, full, meta, bev.size(), cfg);
    loc.rotation_deg = 90 * q;
    out.confidences[static_cast<std::size_t>(q)] = loc.confidence;
    if (loc.confidence > best) {
      best = loc.confidence;
      out.best = std::move(loc);
      out.best_branch = q;
    }
  }
  return out;
}

} // namespace bevloc
