#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "bevloc/bench.hpp"
#include "bevloc/synth.hpp"

using namespace bevloc;

namespace {

SceneSpec spec(std::uint64_t seed, TextureStyle style, int size = 256) {
  SceneSpec s;
  s.seed = seed;
  s.style = style;
  s.size = size;
  return s;
}

TrialSpec trial(std::uint64_t seed, double perturbation, double noise = 0.0) {
  TrialSpec t;
  t.scene = spec(seed, TextureStyle::blob_field);
  t.scene.noise_sigma = noise;
  t.perturbation = perturbation;
  return t;
}

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v.size() % 2 ? v[v.size() / 2] : 0.5 * (v[v.size() / 2 - 1] + v[v.size() / 2]);
}

} // namespace

TEST(Overhead, Deterministic) {
  for (TextureStyle s : {TextureStyle::checker, TextureStyle::blob_field, TextureStyle::road_grid}) {
    EXPECT_EQ(make_overhead(spec(5, s)), make_overhead(spec(5, s)));
    EXPECT_NE(make_overhead(spec(5, s)), make_overhead(spec(6, s)));
    EXPECT_EQ(texture_style_from_string(to_string(s)), s);
  }
  EXPECT_THROW(texture_style_from_string("plaid"), ContractError);
}

TEST(Overhead, CheckerPeriodFromAutocorrelation) {
  const ImageBuffer img = make_overhead(spec(2, TextureStyle::checker));
  const int n = img.width(), side = checker_side(n);
  // Row autocorrelation of the centred signal peaks (positively) at lag 2*side.
  auto corr = [&](int lag) {
    double s = 0.0;
    for (int y = 0; y < n; ++y)
      for (int x = 0; x + lag < n; ++x) s += (img.at(y, x) - 0.5) * (img.at(y, x + lag) - 0.5);
    return s / (n * (n - lag));
  };
  int best = 1;
  for (int lag = 1; lag < n / 2; ++lag)
    if (corr(lag) > corr(best)) best = lag;
  EXPECT_EQ(best, 2 * side);
  EXPECT_LT(corr(side), 0.0);
}

TEST(Overhead, BlobFieldMeanCalibrated) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const ImageBuffer img = make_overhead(spec(seed, TextureStyle::blob_field, 512));
    double m = 0.0;
    for (double v : img.data()) m += v;
    m /= static_cast<double>(img.data().size());
    EXPECT_GE(m, 0.3);
    EXPECT_LE(m, 0.7);
  }
}

TEST(Overhead, SpecValidation) {
  SceneSpec s;
  s.occlusion = 0.6;
  EXPECT_THROW(make_overhead(s), ContractError);
  s.occlusion = 0.0;
  s.noise_sigma = -1.0;
  EXPECT_THROW(make_overhead(s), ContractError);
}

TEST(RenderPano, RoundTripCentralDisk) {
  const BevCamera bev{256, 256, 85.0};
  const PanoCamera pano{1024, 512};
  for (TextureStyle st : {TextureStyle::checker, TextureStyle::blob_field, TextureStyle::road_grid}) {
    const ImageBuffer over = make_overhead(spec(3, st));
    const ImageBuffer back = panorama_to_bev(render_pano(over, bev, pano), bev);
    double err = 0.0;
    int cnt = 0;
    for (int v = 0; v < 256; ++v)
      for (int u = 0; u < 256; ++u)
        if (std::hypot(u - 128.0, v - 128.0) <= 32.0) {
          err += std::abs(back.at(v, u) - over.at(v, u));
          ++cnt;
        }
    EXPECT_LT(err / cnt, 0.05) << to_string(st);
  }
}

TEST(RenderPano, SkyAndNadir) {
  const BevCamera bev{256, 256, 85.0};
  const PanoCamera pano{1024, 512};
  const ImageBuffer over = make_overhead(spec(4, TextureStyle::blob_field));
  const ImageBuffer p = render_pano(over, bev, pano, 0.85);
  for (int v = 0; v < 256; ++v)
    for (int u = 0; u < 1024; u += 7) EXPECT_EQ(p.at(v, u), 0.85);
  // The bottom row looks almost straight down at the overhead centre.
  const double centre = bilinear_sample(over, 128.0, 128.0)[0];
  for (int u = 0; u < 1024; u += 64) EXPECT_NEAR(p.at(511, u), centre, 1e-2);
}

TEST(MakePair, IdentityIsCopy) {
  const TrialSpec t = trial(5, 0.0);
  const ImageBuffer over = make_overhead(t.scene);
  const SyntheticPair p = make_pair(over, t);
  for (std::size_t i = 0; i < over.data().size(); ++i) EXPECT_NEAR(p.bev.data()[i], over.data()[i], 1e-12);
  EXPECT_EQ(p.sat, over);
  EXPECT_NEAR(p.gt_gps.lat, t.center.lat, 1e-12);
  EXPECT_NEAR(p.gt_heading_deg, 0.0, 1e-12);
}

TEST(MakePair, OcclusionFraction) {
  TrialSpec t = trial(6, 0.0);
  t.scene.occlusion = 0.25;
  const SyntheticPair p = make_pair(make_overhead(t.scene), t);
  const auto [bh, bw] = occlusion_block_size(256, 256, 0.25);
  const double want = 0.25 * 256 * 256;
  EXPECT_LE(std::abs(static_cast<double>(p.occluded_pixels) - want), bw);
  std::size_t zeros = 0;
  for (double v : p.bev.data()) zeros += v == 0.0;
  EXPECT_EQ(zeros, p.occluded_pixels);
  EXPECT_EQ(p.occluded_pixels, static_cast<std::size_t>(bh * bw));
}

TEST(MakePair, GroundTruthConsistent) {
  TrialSpec t = trial(7, 3.0);
  t.rotation_deg = 40.0;
  const SyntheticPair p = make_pair(make_overhead(t.scene), t);
  EXPECT_TRUE(image_to_feature(p.gt_image, 16.0).matrix().isApprox(p.gt_feature.matrix(), 1e-12));
  EXPECT_LE(corners_from_homography(compose(p.gt_feature, rotation_homography(40.0, {7.5, 7.5})), {16, 16}).max_abs(),
            3.0 + 1e-9);
}

TEST(MakePair, NoiseDegradesAccuracy) {
  std::vector<double> clean, noisy;
  for (std::uint64_t seed = 1; seed <= 50; ++seed) {
    for (double sigma : {0.0, 0.1}) {
      const TrialSpec t = trial(seed, 2.0, sigma);
      const TrialResult r = run_trial(t);
      ASSERT_TRUE(r.ok) << r.error;
      (sigma == 0.0 ? clean : noisy).push_back(r.corner_error);
    }
  }
  EXPECT_LT(median_of(clean), median_of(noisy));
}

TEST(Benchmark, IdentitySuiteAndDeterminism) {
  std::vector<TrialSpec> suite;
  for (std::uint64_t s = 1; s <= 6; ++s) suite.push_back(trial(s, 0.0));
  const BenchmarkReport a = run_benchmark(suite, 0.25, 2);
  const BenchmarkReport b = run_benchmark(suite, 0.25, 3);
  ASSERT_EQ(a.trials.size(), 6u);
  double mean = 0.0;
  for (const auto& t : a.trials) {
    ASSERT_TRUE(t.ok) << t.error;
    mean += t.corner_error;
  }
  EXPECT_LT(mean / 6, 0.05);
  EXPECT_EQ(a.converged_fraction, 1.0);
  EXPECT_EQ(a.mean_curve, b.mean_curve);
  for (std::size_t i = 0; i < a.trials.size(); ++i) EXPECT_EQ(a.trials[i].corner_error, b.trials[i].corner_error);
  ASSERT_TRUE(a.summary.has_value());
  EXPECT_EQ(a.summary->count, 6u);
}

TEST(Benchmark, FailuresAreRecorded) {
  TrialSpec bad = trial(1, 0.0);
  bad.scene.size = 250;  // not divisible by the feature grid
  const BenchmarkReport r = run_benchmark({bad, trial(2, 0.0)}, 0.25, 1);
  EXPECT_FALSE(r.trials[0].ok);
  EXPECT_FALSE(r.trials[0].error.empty());
  EXPECT_TRUE(r.trials[1].ok);
  EXPECT_EQ(r.converged_fraction, 0.5);
}
