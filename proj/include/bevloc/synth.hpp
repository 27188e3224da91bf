#pragma once

// Synthetic scenes and aligned BEV / satellite pairs with known ground truth.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "bevloc/error.hpp"
#include "bevloc/estimator.hpp"
#include "bevloc/geometry.hpp"
#include "bevloc/georef.hpp"
#include "bevloc/homography.hpp"
#include "bevloc/random.hpp"
#include "bevloc/raster.hpp"

namespace bevloc {

enum class TextureStyle { checker, blob_field, road_grid };

inline std::string_view to_string(TextureStyle s) {
  switch (s) {
    case TextureStyle::checker: return "checker";
    case TextureStyle::blob_field: return "blob-field";
    case TextureStyle::road_grid: return "road-grid";
  }
  return "?";
}

inline TextureStyle texture_style_from_string(std::string_view s) {
  if (s == "checker") return TextureStyle::checker;
  if (s == "blob-field" || s == "blob_field") return TextureStyle::blob_field;
  if (s == "road-grid" || s == "road_grid") return TextureStyle::road_grid;
  throw ContractError("unknown texture style '" + std::string(s) + "'");
}

struct SceneSpec {
  std::uint64_t seed = 1;
  int size = 512;
  TextureStyle style = TextureStyle::blob_field;
  double noise_sigma = 0.0;
  double occlusion = 0.0;  // fraction of BEV pixels blacked out, [0, 0.5]
  double feature_scale = 1.0;  // multiplies blob and road sizes

  void validate() const {
    require(size >= 16, "texture size must be at least 16");
    require(noise_sigma >= 0.0, "noise sigma must be non-negative");
    require(occlusion >= 0.0 && occlusion <= 0.5, "occlusion fraction must lie in [0, 0.5]");
    require(feature_scale > 0.0, "feature scale must be positive");
  }
};

// Checker square side in pixels for a texture of the given size.
inline int checker_side(int size) { return std::max(2, size / 16); }

namespace detail {

inline void splat_gaussian(std::vector<double>& f, int n, double cx, double cy, double sigma, double amp) {
  const int rad = static_cast<int>(std::ceil(3.0 * sigma));
  const int x0 = std::max(0, static_cast<int>(cx) - rad), x1 = std::min(n - 1, static_cast<int>(cx) + rad);
  const int y0 = std::max(0, static_cast<int>(cy) - rad), y1 = std::min(n - 1, static_cast<int>(cy) + rad);
  if (x0 > x1 || y0 > y1) return;
  const double k = -0.5 / (sigma * sigma);
  std::vector<double> gx(static_cast<std::size_t>(x1 - x0 + 1));
  for (int x = x0; x <= x1; ++x) gx[static_cast<std::size_t>(x - x0)] = std::exp(k * (x - cx) * (x - cx));
  for (int y = y0; y <= y1; ++y) {
    const double gy = amp * std::exp(k * (y - cy) * (y - cy));
    double* row = f.data() + static_cast<std::size_t>(y) * static_cast<std::size_t>(n);
    for (int x = x0; x <= x1; ++x) row[x] += gy * gx[static_cast<std::size_t>(x - x0)];
  }
}

// Sum of random Gaussian blobs over a range of scales.
inline std::vector<double> blob_field(Rng& rng, int n, int count, double smin, double smax) {
  std::vector<double> f(static_cast<std::size_t>(n) * static_cast<std::size_t>(n), 0.0);
  for (int b = 0; b < count; ++b) {
    const double cx = rng.uniform(-0.05 * n, 1.05 * n), cy = rng.uniform(-0.05 * n, 1.05 * n);
    const double sigma = smin * std::pow(smax / smin, rng.uniform());
    const double amp = rng.uniform(-1.0, 1.0);
    splat_gaussian(f, n, cx, cy, sigma, amp);
  }
  return f;
}

// Maps a zero-centred field into (0, 1) around 0.5.
inline void squash(std::vector<double>& f, double gain) {
  double m = 0.0, s2 = 0.0;
  for (double v : f) m += v;
  m /= static_cast<double>(f.size());
  for (double v : f) s2 += (v - m) * (v - m);
  const double sd = std::sqrt(s2 / static_cast<double>(f.size()));
  for (double& v : f) v = 0.5 + 0.42 * std::tanh(gain * (v - m) / (sd > 0.0 ? sd : 1.0));
}

} // namespace detail

// Deterministic single-channel texture.
inline ImageBuffer make_overhead(const SceneSpec& spec) {
  spec.validate();
  const int n = spec.size;
  const double scale = n / 512.0 * spec.feature_scale;
  Rng rng = Rng::stream(spec.seed, 0x7e47);
  std::vector<double> f;
  switch (spec.style) {
    case TextureStyle::checker: {
      const int side = checker_side(n);
      const int ox = rng.uniform_int(0, side - 1), oy = rng.uniform_int(0, side - 1);
      f.resize(static_cast<std::size_t>(n) * static_cast<std::size_t>(n));
      for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x)
          f[static_cast<std::size_t>(y) * static_cast<std::size_t>(n) + static_cast<std::size_t>(x)] =
              (((x + ox) / side + (y + oy) / side) % 2 == 0) ? 0.2 : 0.8;
      break;
    }
    case TextureStyle::blob_field: {
      f = detail::blob_field(rng, n, static_cast<int>(450 * (n / 512.0) * (n / 512.0) / (spec.feature_scale * spec.feature_scale)) + 8, 7.0 * scale, 30.0 * scale);
      detail::squash(f, 1.2);
      break;
    }
    case TextureStyle::road_grid: {
      f = detail::blob_field(rng, n, static_cast<int>(250 * (n / 512.0) * (n / 512.0) / (spec.feature_scale * spec.feature_scale)) + 8, 10.0 * scale, 40.0 * scale);
      detail::squash(f, 0.8);
      for (double& v : f) v = 0.15 + 0.45 * v;
      auto road = [&](bool vertical, double pos, double width, double shade) {
        for (int a = 0; a < n; ++a)
          for (int b = std::max(0, static_cast<int>(pos - width / 2)); b < std::min(n, static_cast<int>(pos + width / 2) + 1); ++b) {
            const int x = vertical ? b : a, y = vertical ? a : b;
            f[static_cast<std::size_t>(y) * static_cast<std::size_t>(n) + static_cast<std::size_t>(x)] = shade;
          }
      };
      for (int dir = 0; dir < 2; ++dir) {
        double pos = rng.uniform(20.0, 90.0) * scale;
        while (pos < n) {
          road(dir == 1, pos, rng.uniform(6.0, 18.0) * scale, rng.uniform(0.7, 0.9));
          pos += rng.uniform(70.0, 170.0) * scale;
        }
      }
      for (int b = 0; b < static_cast<int>(40 * (n / 512.0) * (n / 512.0) / (spec.feature_scale * spec.feature_scale)) + 2; ++b) {
        const int w = static_cast<int>(rng.uniform(10.0, 40.0) * scale), h = static_cast<int>(rng.uniform(10.0, 40.0) * scale);
        const int x0 = rng.uniform_int(0, n - 1), y0 = rng.uniform_int(0, n - 1);
        const double shade = rng.uniform(0.05, 0.95);
        for (int y = y0; y < std::min(n, y0 + h); ++y)
          for (int x = x0; x < std::min(n, x0 + w); ++x)
            f[static_cast<std::size_t>(y) * static_cast<std::size_t>(n) + static_cast<std::size_t>(x)] = shade;
      }
      break;
    }
  }
  return ImageBuffer(n, n, 1, std::move(f));
}

// What a panoramic camera standing at the centre of `overhead` sees of the
// ground plane: each lower-hemisphere pano ray is intersected with the BEV
// plane and the overhead is sampled there. Rays at or above the horizon get
// the flat sky value. The overhead is centred on the BEV frame.
inline ImageBuffer render_pano(const ImageBuffer& overhead, const BevCamera& bev, const PanoCamera& pano,
                               double sky = 0.85) {
  bev.validate();
  require(pano.width > 0 && pano.height > 0, "panorama size must be positive");
  const double ox = (overhead.width() - bev.width) / 2.0, oy = (overhead.height() - bev.height) / 2.0;
  const int ch = overhead.channels();
  std::vector<double> out(static_cast<std::size_t>(pano.width) * static_cast<std::size_t>(pano.height) *
                          static_cast<std::size_t>(ch));
  for (int v = 0; v < pano.height; ++v)
    for (int u = 0; u < pano.width; ++u) {
      double* px = out.data() + (static_cast<std::size_t>(v) * static_cast<std::size_t>(pano.width) +
                                 static_cast<std::size_t>(u)) * static_cast<std::size_t>(ch);
      const auto p = pano_pixel_to_bev(u, v, bev, pano);
      if (!p) {
        std::fill(px, px + ch, sky);
        continue;
      }
      bilinear_sample_into(overhead, p->x() + ox, p->y() + oy, px);
    }
  return ImageBuffer(pano.height, pano.width, ch, std::move(out));
}

struct TrialSpec {
  SceneSpec scene;
  double perturbation = 0.0;    // max |corner displacement| per axis, feature cells
  double rotation_deg = 0.0;    // extra BEV rotation relative to the satellite
  GpsCoord center{40.7128, -74.0060};
  int zoom = 20;
  EstimatorConfig estimator;
  bool disambiguate = false;    // run the four-rotation search
};

struct SyntheticPair {
  ImageBuffer bev;
  ImageBuffer sat;
  Homography gt_image;     // BEV pixels -> satellite pixels
  Homography gt_feature;   // same map in the feature frame
  PatchMeta meta;
  GpsCoord gt_gps;
  double gt_heading_deg = 0.0;
  std::size_t occluded_pixels = 0;
};

// Corner cube with each component uniform in [-magnitude, magnitude].
inline CornerDisplacement random_cube(Rng& rng, double magnitude) {
  CornerDisplacement d;
  for (auto& v : d.d) v = Point2(rng.uniform(-magnitude, magnitude), rng.uniform(-magnitude, magnitude));
  return d;
}

// Occlusion block of the requested area fraction: width round(sqrt(f)*W),
// height chosen so the block area is within half a block row of f*H*W.
inline std::pair<int, int> occlusion_block_size(int height, int width, double fraction) {
  if (fraction <= 0.0) return {0, 0};
  const int bw = std::clamp(static_cast<int>(std::lround(std::sqrt(fraction) * width)), 1, width);
  const int bh = std::clamp(static_cast<int>(std::lround(fraction * height * width / bw)), 1, height);
  return {bh, bw};
}

inline SyntheticPair make_pair(const ImageBuffer& overhead, const TrialSpec& trial) {
  trial.scene.validate();
  trial.estimator.validate();
  const int h = overhead.height(), w = overhead.width();
  require(h % trial.estimator.grid_h == 0 && w % trial.estimator.grid_w == 0,
          "overhead size must be divisible by the feature grid");
  SyntheticPair p;
  p.sat = overhead;
  p.meta = PatchMeta{trial.center, trial.zoom, w};

  Rng geo = Rng::stream(trial.scene.seed, 0x6e0);
  const FrameSize grid{trial.estimator.grid_w, trial.estimator.grid_h};
  const double sx = static_cast<double>(w) / grid.width, sy = static_cast<double>(h) / grid.height;
  const Homography aligned = feature_to_image(dlt_from_corners(random_cube(geo, trial.perturbation), grid), sx, sy);
  const Point2 pivot((w - 1) / 2.0, (h - 1) / 2.0);
  p.gt_image = compose(aligned, rotation_homography(-trial.rotation_deg, pivot));
  p.gt_feature = image_to_feature(p.gt_image, sx, sy);

  p.bev = warp_by_homography(overhead, invert(p.gt_image), overhead.size());

  Rng noise = Rng::stream(trial.scene.seed, 0x9015e);
  if (trial.scene.noise_sigma > 0.0) {
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (int c = 0; c < p.bev.channels(); ++c)
          p.bev.set(y, x, c, p.bev.at(y, x, c) + trial.scene.noise_sigma * noise.normal());
  }

  const auto [bh, bw] = occlusion_block_size(h, w, trial.scene.occlusion);
  if (bh > 0) {
    Rng occ = Rng::stream(trial.scene.seed, 0x0cc);
    const int y0 = occ.uniform_int(0, h - bh), x0 = occ.uniform_int(0, w - bw);
    for (int y = y0; y < y0 + bh; ++y)
      for (int x = x0; x < x0 + bw; ++x)
        for (int c = 0; c < p.bev.channels(); ++c) p.bev.set(y, x, c, 0.0);
    p.occluded_pixels = static_cast<std::size_t>(bh) * static_cast<std::size_t>(bw);
  }

  const LocalizationResult truth =
      localize(p.gt_image, p.meta, p.bev.size(), default_axis_offset(trial.estimator, p.bev.size()));
  p.gt_gps = truth.gps;
  p.gt_heading_deg = truth.heading_deg;
  return p;
}

} // namespace bevloc
