#pragma once

// Web Mercator conversions between WGS84 GPS and global / patch pixels.
// All arithmetic is double precision: the GPS labels carry five decimals and
// pass through trigonometric functions, which float32 truncates.

#include <cmath>
#include <numbers>

#include "bevloc/error.hpp"

namespace bevloc {

inline constexpr double kMercatorMaxLat = 85.05113;
inline constexpr double kEarthRadiusM = 6378137.0;
inline constexpr double kTileSize = 256.0;

struct GpsCoord {
  double lat = 0.0;  // degrees
  double lon = 0.0;  // degrees
};

struct GlobalPixel {
  double x = 0.0;
  double y = 0.0;
  int zoom = 0;
};

// A square satellite patch centred on `center` at a fixed zoom level.
struct PatchMeta {
  GpsCoord center;
  int zoom = 20;
  int size = 512;

  void validate() const {
    require(size > 0, "patch size must be positive");
    require(zoom >= 0 && zoom <= 23, "zoom must lie in [0, 23]");
  }
};

struct PixelLabel {
  double u = 0.0;
  double v = 0.0;
};

namespace detail {
inline double world_pixels(int zoom) { return kTileSize * std::ldexp(1.0, zoom); }
inline double pixels_per_radian(int zoom) { return world_pixels(zoom) / (2.0 * std::numbers::pi); }
inline void check_zoom(int zoom) { require(zoom >= 0 && zoom <= 23, "zoom must lie in [0, 23]"); }
inline void check_lat(double lat) {
  if (!std::isfinite(lat) || std::abs(lat) >= kMercatorMaxLat)
    throw DomainError("latitude outside the Web Mercator range (|lat| < 85.05113)");
}
} // namespace detail

inline GlobalPixel gps_to_global(const GpsCoord& g, int zoom) {
  detail::check_zoom(zoom);
  detail::check_lat(g.lat);
  if (!std::isfinite(g.lon) || g.lon < -180.0 || g.lon > 180.0)
    throw DomainError("longitude outside [-180, 180]");
  const double pi = std::numbers::pi;
  const double k = detail::pixels_per_radian(zoom);
  const double lon = g.lon * pi / 180.0, lat = g.lat * pi / 180.0;
  return {k * (lon + pi), k * (pi - std::log(std::tan(pi / 4.0 + lat / 2.0))), zoom};
}

inline GpsCoord global_to_gps(const GlobalPixel& p) {
  detail::check_zoom(p.zoom);
  const double world = detail::world_pixels(p.zoom);
  if (!std::isfinite(p.x) || !std::isfinite(p.y) || p.x < 0.0 || p.x > world || p.y < 0.0 ||
      p.y > world)
    throw DomainError("global pixel outside [0, 256*2^zoom]");
  const double pi = std::numbers::pi;
  const double k = detail::pixels_per_radian(p.zoom);
  const double lon = p.x / k - pi;
  const double lat = 2.0 * std::atan(std::exp(pi - p.y / k)) - pi / 2.0;
  return {lat * 180.0 / pi, lon * 180.0 / pi};
}

// Patch centre plus the global-pixel difference to the patch centre.
inline PixelLabel gps_to_patch_pixel(const PatchMeta& meta, const GpsCoord& g) {
  meta.validate();
  const GlobalPixel c = gps_to_global(meta.center, meta.zoom);
  const GlobalPixel p = gps_to_global(g, meta.zoom);
  return {meta.size / 2.0 + (p.x - c.x), meta.size / 2.0 + (p.y - c.y)};
}

inline GpsCoord patch_pixel_to_gps(const PatchMeta& meta, const PixelLabel& px) {
  meta.validate();
  const GlobalPixel c = gps_to_global(meta.center, meta.zoom);
  return global_to_gps({c.x + (px.u - meta.size / 2.0), c.y + (px.v - meta.size / 2.0), meta.zoom});
}

// Metres per pixel of the local Web Mercator metric.
inline double ground_resolution(double lat_deg, int zoom) {
  detail::check_zoom(zoom);
  detail::check_lat(lat_deg);
  return 2.0 * std::numbers::pi * kEarthRadiusM * std::cos(lat_deg * std::numbers::pi / 180.0) /
         detail::world_pixels(zoom);
}

struct LabelCorrection {
  PixelLabel corrected;
  double correction_m = 0.0;  // distance between legacy and corrected labels
};

inline LabelCorrection correct_label(const PatchMeta& meta, const GpsCoord& ground,
                                     const PixelLabel& legacy) {
  const PixelLabel fixed = gps_to_patch_pixel(meta, ground);
  const double d = std::hypot(fixed.u - legacy.u, fixed.v - legacy.v);
  return {fixed, d * ground_resolution(meta.center.lat, meta.zoom)};
}

} // namespace bevloc
