#pragma once

// Batch runner over synthetic trials.

#include <algorithm>
#include <chrono>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "bevloc/estimator.hpp"
#include "bevloc/losses_metrics.hpp"
#include "bevloc/synth.hpp"

namespace bevloc {

struct TrialResult {
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;                     // set when the trial threw
  double corner_error = 0.0;             // final, feature cells
  std::vector<double> step_errors;       // per iteration 0..K; empty with disambiguation
  std::optional<EvalRecord> record;
  double gps_error_m = 0.0;
  double corner_error_px = 0.0;          // final, image pixels
  double confidence = 0.0;
  int branch = 0;                        // chosen quarter turns when disambiguating
  double seconds = 0.0;
};

struct BenchmarkReport {
  std::vector<TrialResult> trials;
  double convergence_threshold = 0.25;
  double converged_fraction = 0.0;
  std::vector<double> mean_curve;        // mean corner error per step over traced trials
  std::optional<EvalReport> summary;
  double seconds = 0.0;
};

inline TrialResult run_trial(const TrialSpec& t) {
  const auto t0 = std::chrono::steady_clock::now();
  TrialResult r;
  r.seed = t.scene.seed;
  try {
    const ImageBuffer overhead = make_overhead(t.scene);
    const SyntheticPair p = make_pair(overhead, t);
    const FrameSize grid{t.estimator.grid_w, t.estimator.grid_h};
    const double sx = static_cast<double>(p.bev.width()) / grid.width;
    const double sy = static_cast<double>(p.bev.height()) / grid.height;
    LocalizationResult loc;
    if (t.disambiguate) {
      const DisambiguationResult d = disambiguate_rotations(p.bev, p.sat, p.meta, t.estimator);
      loc = d.best;
      r.branch = d.best_branch;
    } else {
      const EstimationResult est = run(p.bev, p.sat, t.estimator, p.gt_feature);
      for (const auto& s : est.trace) r.step_errors.push_back(*s.corner_error);
      loc = readout(est, est.h_image, p.meta, p.bev.size(), t.estimator);
    }
    r.corner_error = mean_corner_error(image_to_feature(loc.h_image, sx, sy), p.gt_feature, grid);
    r.corner_error_px = mean_corner_error(loc.h_image, p.gt_image, p.bev.size());
    r.record = make_record(loc.gps, loc.heading_deg, p.gt_gps, p.gt_heading_deg, p.meta.center.lat);
    r.gps_error_m = r.record->localization_m;
    r.confidence = loc.confidence;
    r.ok = true;
  } catch (const std::exception& e) {
    r.error = e.what();
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

inline BenchmarkReport run_benchmark(const std::vector<TrialSpec>& trials, double threshold = 0.25,
                                     unsigned threads = 0) {
  const auto t0 = std::chrono::steady_clock::now();
  BenchmarkReport rep;
  rep.convergence_threshold = threshold;
  rep.trials.resize(trials.size());
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(1, trials.size())));
  {
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < threads; ++w)
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < trials.size(); i += threads) rep.trials[i] = run_trial(trials[i]);
      });
  }
  std::size_t converged = 0;
  std::vector<EvalRecord> records;
  std::vector<double> curve_sum;
  std::size_t traced = 0;
  for (const auto& r : rep.trials) {
    if (!r.ok) continue;
    if (r.corner_error < threshold) ++converged;
    records.push_back(*r.record);
    if (!r.step_errors.empty()) {
      if (curve_sum.size() < r.step_errors.size()) curve_sum.resize(r.step_errors.size(), 0.0);
      for (std::size_t k = 0; k < r.step_errors.size(); ++k) curve_sum[k] += r.step_errors[k];
      ++traced;
    }
  }
  if (!trials.empty()) rep.converged_fraction = static_cast<double>(converged) / static_cast<double>(trials.size());
  if (traced > 0)
    for (double s : curve_sum) rep.mean_curve.push_back(s / static_cast<double>(traced));
  if (!records.empty()) rep.summary = summarize(records);
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

} // namespace bevloc
