#pragma once

// Training objective terms and evaluation metrics.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <utility>
#include <vector>

#include "bevloc/correlation.hpp"
#include "bevloc/error.hpp"
#include "bevloc/georef.hpp"

namespace bevloc {

struct LossWeights {
  double alpha_dis = 0.1;
  double alpha_ori = 10.0;
  double alpha_info = 1.0;
  double tau = 4.0;
};

// Squared pixel distance (no square root).
inline double loss_dis(const PixelLabel& pred, const PixelLabel& gt) {
  const double du = pred.u - gt.u, dv = pred.v - gt.v;
  return du * du + dv * dv;
}

// Signed angle difference wrapped to (-180, 180].
inline double angle_difference(double a_deg, double b_deg) {
  double d = std::fmod(a_deg - b_deg, 360.0);
  if (d > 180.0) d -= 360.0;
  if (d <= -180.0) d += 360.0;
  return d;
}

inline double loss_ori(double theta_deg, double theta_gt_deg) {
  return std::abs(angle_difference(theta_deg, theta_gt_deg));
}

// -log softmax_{(k,l)}(C[i_c, j_c, k, l] / tau) evaluated at gt_cell = (k+, l+).
inline double loss_info(const CorrelationVolume& c, std::pair<int, int> gt_cell, double tau) {
  require(tau > 0.0, "tau must be positive");
  const int h = c.dim(2), w = c.dim(3);
  require(gt_cell.first >= 0 && gt_cell.first < h && gt_cell.second >= 0 && gt_cell.second < w,
          "ground-truth cell outside the correlation map");
  const int ic = c.dim(0) / 2, jc = c.dim(1) / 2;
  const double* plane = c.plane(ic, jc);
  const std::size_t n = static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
  const double m = *std::max_element(plane, plane + n) / tau;
  double z = 0.0;
  for (std::size_t t = 0; t < n; ++t) z += std::exp(plane[t] / tau - m);
  return -(c.at(ic, jc, gt_cell.first, gt_cell.second) / tau - m - std::log(z));
}

struct LossParts {
  double dis = 0.0;
  double ori = 0.0;
  double info = 0.0;
};

inline double hybrid_loss(const LossParts& p, const LossWeights& w = {}) {
  return w.alpha_dis * p.dis + w.alpha_ori * p.ori + w.alpha_info * p.info;
}

// ---------------------------------------------------------------------------
// Evaluation

struct MetricOffset {
  double east_m = 0.0;
  double north_m = 0.0;
  double distance_m() const { return std::hypot(east_m, north_m); }
};

// pred - gt in the local Web Mercator metric at lat_ref.
inline MetricOffset metric_offset(const GpsCoord& pred, const GpsCoord& gt, double lat_ref, int zoom = 20) {
  const GlobalPixel a = gps_to_global(pred, zoom), b = gps_to_global(gt, zoom);
  const double res = ground_resolution(lat_ref, zoom);
  return {(a.x - b.x) * res, -(a.y - b.y) * res};
}

inline double localization_error_m(const GpsCoord& pred, const GpsCoord& gt, double lat_ref) {
  return metric_offset(pred, gt, lat_ref).distance_m();
}

struct LateralLongitudinal {
  double lateral_m = 0.0;
  double longitudinal_m = 0.0;
};

// Error split across / along a heading measured clockwise from north.
inline LateralLongitudinal lateral_longitudinal(double err_east, double err_north, double heading_deg) {
  const double t = heading_deg * std::numbers::pi / 180.0;
  const double fe = std::sin(t), fn = std::cos(t);
  return {std::abs(err_east * fn - err_north * fe), std::abs(err_east * fe + err_north * fn)};
}

struct EvalRecord {
  GpsCoord pred;
  double pred_heading_deg = 0.0;
  GpsCoord gt;
  double gt_heading_deg = 0.0;
  double lat_ref = 0.0;

  double localization_m = 0.0;
  double orientation_deg = 0.0;
  double lateral_m = 0.0;
  double longitudinal_m = 0.0;
};

inline EvalRecord make_record(const GpsCoord& pred, double pred_heading, const GpsCoord& gt,
                              double gt_heading, double lat_ref) {
  EvalRecord r{pred, pred_heading, gt, gt_heading, lat_ref, 0.0, 0.0, 0.0, 0.0};
  const MetricOffset off = metric_offset(pred, gt, lat_ref);
  r.localization_m = off.distance_m();
  r.orientation_deg = loss_ori(pred_heading, gt_heading);
  const auto ll = lateral_longitudinal(off.east_m, off.north_m, gt_heading);
  r.lateral_m = ll.lateral_m;
  r.longitudinal_m = ll.longitudinal_m;
  return r;
}

struct Thresholds {
  std::vector<double> meters{1.0, 5.0};
  std::vector<double> degrees{1.0, 5.0};
};

struct RecallAt {
  double threshold = 0.0;
  double recall = 0.0;  // fraction in [0, 1] with error strictly below threshold
};

struct EvalReport {
  std::size_t count = 0;
  double mean_m = 0.0;
  double median_m = 0.0;
  double mean_deg = 0.0;
  double median_deg = 0.0;
  std::vector<RecallAt> localization_recall;
  std::vector<RecallAt> lateral_recall;
  std::vector<RecallAt> longitudinal_recall;
  std::vector<RecallAt> orientation_recall;
};

// Mean of the two central values for even counts.
inline double median(std::vector<double> v) {
  require(!v.empty(), "median of an empty sample");
  const std::size_t n = v.size(), mid = n / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  const double hi = v[mid];
  if (n % 2 == 1) return hi;
  const double lo = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lo + hi);
}

inline double mean(std::span<const double> v) {
  require(!v.empty(), "mean of an empty sample");
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

inline EvalReport summarize(std::span<const EvalRecord> records, const Thresholds& th = {}) {
  if (records.empty()) throw ContractError("summarize needs at least one record");
  std::vector<double> loc, ori, lat, lon;
  for (const auto& r : records) {
    loc.push_back(r.localization_m);
    ori.push_back(r.orientation_deg);
    lat.push_back(r.lateral_m);
    lon.push_back(r.longitudinal_m);
  }
  auto recall = [](const std::vector<double>& v, double t) {
    const auto hits = std::count_if(v.begin(), v.end(), [t](double x) { return x < t; });
    return static_cast<double>(hits) / static_cast<double>(v.size());
  };
  EvalReport rep;
  rep.count = records.size();
  rep.mean_m = mean(loc);
  rep.median_m = median(loc);
  rep.mean_deg = mean(ori);
  rep.median_deg = median(ori);
  for (double t : th.meters) {
    rep.localization_recall.push_back({t, recall(loc, t)});
    rep.lateral_recall.push_back({t, recall(lat, t)});
    rep.longitudinal_recall.push_back({t, recall(lon, t)});
  }
  for (double t : th.degrees) rep.orientation_recall.push_back({t, recall(ori, t)});
  return rep;
}

} // namespace bevloc
