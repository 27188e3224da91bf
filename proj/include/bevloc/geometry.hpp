#pragma once

// Camera-model projections into a bird's-eye view (BEV):
//   * panorama -> sphere -> equirectangular math and the spherical transform
//     that places a tangent imaging plane at the south pole of the panorama
//     sphere, optionally after rotating rays by a roll/pitch/yaw attitude;
//   * front-view -> BEV projection with camera tilt, plus the scale/rotation
//     homographies that resample the native BEV to network resolution.
//
// Angles are degrees at the API boundary and radians internally.

#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <tuple>

#include <Eigen/Dense>

#include "bevloc/error.hpp"
#include "bevloc/homography.hpp"
#include "bevloc/raster.hpp"

namespace bevloc {

inline constexpr double kPi = std::numbers::pi;

inline double deg2rad(double d) { return d * kPi / 180.0; }
inline double rad2deg(double r) { return r * 180.0 / kPi; }

// Equirectangular panorama of W_p x H_p pixels.
struct PanoCamera {
  int width = 2048;
  int height = 1024;

  // Standard panoramas are 2:1; cropped ones should go through complete_panorama().
  bool is_standard_aspect() const { return width == 2 * height; }
};

// BEV imaging plane tangent to the panorama sphere at the nadir.
struct BevCamera {
  int width = 512;
  int height = 512;
  double fov_deg = 85.0;

  void validate() const {
    require(width > 0 && height > 0, "BEV size must be positive");
    require(fov_deg > 0.0 && fov_deg < 90.0, "BEV fov must lie in (0, 90) degrees");
  }
  // f = 0.5 W_b / tan(fov)
  double focal() const {
    validate();
    return 0.5 * width / std::tan(deg2rad(fov_deg));
  }
};

// Forward-looking pinhole camera whose image plane may lean by tilt_deg.
struct FrontCamera {
  int width = 1242;
  int height = 375;
  double fov_deg = 17.5;
  double tilt_deg = 0.8;

  struct Derived {
    double f;        // focal length in pixels
    double varphi;   // angle between the image plane and the ray to its bottom edge
    double delta;    // angle between the BEV plane and that same ray
    double l0;       // optical centre to the image bottom edge
    double h;        // optical centre height above the BEV plane
    double f_prime;  // horizontal offset of the optical centre behind the image bottom
  };

  void validate() const {
    require(width > 0 && height > 0, "front image size must be positive");
    require(fov_deg > 0.0 && fov_deg < 90.0, "front fov must lie in (0, 90) degrees");
  }

  Derived derived() const {
    validate();
    const double fov = deg2rad(fov_deg), tilt = deg2rad(tilt_deg);
    Derived d{};
    d.f = 0.5 * height / std::tan(fov);
    d.varphi = 0.5 * kPi - fov;
    d.delta = 0.5 * kPi - (d.varphi - tilt);
    d.l0 = std::hypot(d.f, 0.5 * height);
    d.h = d.l0 * std::sin(d.delta);
    d.f_prime = d.l0 * std::cos(d.delta);
    return d;
  }
};

// Roll (alpha), pitch (beta), yaw (gamma) in degrees.
struct Attitude {
  double roll_deg = 0.0;
  double pitch_deg = 0.0;
  double yaw_deg = 0.0;

  bool is_zero() const { return roll_deg == 0.0 && pitch_deg == 0.0 && yaw_deg == 0.0; }
};

// R = Rz(yaw) Ry(pitch) Rx(roll), written out entrywise.
inline Eigen::Matrix3d rotation_matrix(const Attitude& att) {
  const double a = deg2rad(att.roll_deg), b = deg2rad(att.pitch_deg), g = deg2rad(att.yaw_deg);
  const double ca = std::cos(a), sa = std::sin(a);
  const double cb = std::cos(b), sb = std::sin(b);
  const double cg = std::cos(g), sg = std::sin(g);
  Eigen::Matrix3d r;
  r << cg * cb, cg * sb * sa - sg * ca, cg * sb * ca + sg * sa,
       sg * cb, sg * sb * sa + cg * ca, sg * sb * ca - cg * sa,
       -sb, cb * sa, cb * ca;
  return r;
}

using CameraRay = Eigen::Vector3d;

struct SphericalCoord {
  double phi = 0.0;    // longitude, [-pi, pi]
  double theta = 0.0;  // latitude, [-pi/2, pi/2]
};

struct EquirectCoord {
  double x = 0.0;  // [-1, 1]
  double y = 0.0;  // [-1, 1]
};

// atan2(0,0) is pinned to 0 so the nadir ray has a deterministic longitude.
inline SphericalCoord ray_to_spherical(const CameraRay& ray) {
  if (!ray.allFinite() || ray.isZero(0.0)) throw ContractError("ray must be finite and nonzero");
  const double x = ray.x(), y = ray.y(), z = ray.z();
  const double phi = (x == 0.0 && y == 0.0) ? 0.0 : std::atan2(y, x);
  return {phi, std::atan2(z, std::hypot(x, y))};
}

inline EquirectCoord spherical_to_equirect(const SphericalCoord& s) {
  return {-s.phi / kPi, s.theta / (0.5 * kPi)};
}

inline Point2 equirect_to_pano_pixel(const EquirectCoord& e, const PanoCamera& cam) {
  return {(e.x + 1.0) * cam.width / 2.0, (-e.y + 1.0) * cam.height / 2.0};
}

inline CameraRay bev_pixel_to_ray(double u_b, double v_b, const BevCamera& cam) {
  return {-v_b + cam.height / 2.0, -u_b + cam.width / 2.0, -cam.focal()};
}

// Composed path: BEV pixel -> ray -> (attitude rotation) -> sphere ->
// equirectangular -> panorama pixel.
inline Point2 spherical_map(double u_b, double v_b, const BevCamera& bev, const PanoCamera& pano,
                            const Attitude& attitude = {}) {
  CameraRay ray = bev_pixel_to_ray(u_b, v_b, bev);
  if (!attitude.is_zero()) ray = rotation_matrix(attitude) * ray;
  return equirect_to_pano_pixel(spherical_to_equirect(ray_to_spherical(ray)), pano);
}

// The same map at zero attitude, as a single closed-form expression.
inline Point2 spherical_map_closed_form(double u_b, double v_b, const BevCamera& bev,
                                        const PanoCamera& pano) {
  const double dy = bev.width / 2.0 - u_b;
  const double dx = bev.height / 2.0 - v_b;
  const double az = (dx == 0.0 && dy == 0.0) ? 0.0 : std::atan2(dy, dx);
  const double u_p = (1.0 - az / kPi) * pano.width / 2.0;
  const double v_p = (0.5 - std::atan2(-bev.focal(), std::hypot(dy, dx)) / kPi) * pano.height;
  return {u_p, v_p};
}

// Inverse of the zero-attitude spherical transform: where the ray through
// panorama pixel (u_p, v_p) meets the BEV plane. Upper-hemisphere and horizon
// rays have no intersection.
inline std::optional<Point2> pano_pixel_to_bev(double u_p, double v_p, const BevCamera& bev,
                                               const PanoCamera& pano) {
  const double phi = -(2.0 * u_p / pano.width - 1.0) * kPi;
  const double theta = (1.0 - 2.0 * v_p / pano.height) * 0.5 * kPi;
  if (!(theta < 0.0)) return std::nullopt;
  const double s = std::sin(theta);
  if (std::abs(s) < 1e-12) return std::nullopt;
  const double t = -bev.focal() / s;
  const double c = std::cos(theta);
  const double x1 = t * c * std::cos(phi), y1 = t * c * std::sin(phi);
  return Point2(bev.width / 2.0 - y1, bev.height / 2.0 - x1);
}

inline GridMap build_bev_grid(const BevCamera& bev, const PanoCamera& pano,
                              const Attitude& attitude = {}) {
  bev.validate();
  require(pano.width > 0 && pano.height > 0, "panorama size must be positive");
  GridMap grid(bev.height, bev.width);
  for (int v = 0; v < bev.height; ++v)
    for (int u = 0; u < bev.width; ++u) {
      const Point2 p = spherical_map(u, v, bev, pano, attitude);
      grid.set(v, u, p.x(), p.y());
    }
  return grid;
}

inline GridMap build_bev_grid_closed_form(const BevCamera& bev, const PanoCamera& pano) {
  bev.validate();
  GridMap grid(bev.height, bev.width);
  for (int v = 0; v < bev.height; ++v)
    for (int u = 0; u < bev.width; ++u) {
      const Point2 p = spherical_map_closed_form(u, v, bev, pano);
      grid.set(v, u, p.x(), p.y());
    }
  return grid;
}

// Zero-pads a cropped panorama to the 2:1 equirectangular ratio. The band is
// placed with its centre row on the horizon unless top_rows says otherwise.
inline ImageBuffer complete_panorama(const ImageBuffer& pano, std::optional<int> top_rows = {}) {
  require(!pano.empty(), "complete_panorama on an empty image");
  const int target_h = (pano.width() + 1) / 2;
  if (pano.height() >= target_h) return pano;
  const int top = top_rows.value_or((target_h - pano.height()) / 2);
  require(top >= 0 && top + pano.height() <= target_h, "band offset does not fit");
  ImageBuffer out(target_h, pano.width(), pano.channels());
  for (int y = 0; y < pano.height(); ++y)
    for (int x = 0; x < pano.width(); ++x)
      for (int c = 0; c < pano.channels(); ++c) out.set(y + top, x, c, pano.at(y, x, c));
  return out;
}

inline ImageBuffer panorama_to_bev(const ImageBuffer& pano_img, const BevCamera& bev,
                                   const Attitude& attitude = {}) {
  const PanoCamera pano{pano_img.width(), pano_img.height()};
  return warp_by_grid(pano_img, build_bev_grid(bev, pano, attitude));
}

// ---------------------------------------------------------------------------
// Front view

// Front-view pixel seen through BEV pixel (u_b, v_b) on a bev_size plane that
// touches the bottom edge of the front image. Grazing geometry yields NaN,
// which samples as zero fill.
inline Point2 front_view_map(double u_b, double v_b, const FrontCamera& front, FrameSize bev_size,
                             const FrontCamera::Derived& d) {
  const double tilt = deg2rad(front.tilt_deg);
  const double hb = bev_size.height, wb = bev_size.width;
  const double hf = front.height, wf = front.width;
  const double theta2 = std::atan(d.h / (d.f_prime + hb - v_b));
  const double theta3 = 0.5 * kPi + tilt - theta2;
  const double s3 = std::sin(theta3);
  const double nan = std::nan("");
  if (std::abs(s3) < 1e-12) return {nan, nan};
  const double v_f = hf - std::sin(theta2) / s3 * (hb - v_b);
  const double den = d.f_prime + hf / 2.0 - v_f;
  if (std::abs(den) < 1e-12) return {nan, v_f};
  const double ratio = (d.f_prime + (hf - v_f) * std::sin(tilt)) / den;
  const double u_f = wf / 2.0 - ratio * (wb / 2.0 - u_b);
  return {u_f, v_f};
}

inline Point2 front_view_map(double u_b, double v_b, const FrontCamera& front, FrameSize bev_size) {
  return front_view_map(u_b, v_b, front, bev_size, front.derived());
}

// Native BEV edge length: six front-image widths.
inline FrameSize native_front_bev_size(const FrontCamera& front) {
  return {6 * front.width, 6 * front.width};
}

inline GridMap build_front_grid(const FrontCamera& front, FrameSize target) {
  const auto d = front.derived();
  GridMap grid(target.height, target.width);
  for (int v = 0; v < target.height; ++v)
    for (int u = 0; u < target.width; ++u) {
      const Point2 p = front_view_map(u, v, front, target, d);
      grid.set(v, u, p.x(), p.y());
    }
  return grid;
}

// Native BEV pixel -> output BEV pixel: scale by out/native, then rotate by
// yaw about the output centre.
inline Homography front_bev_placement(FrameSize native, FrameSize out, double yaw_deg) {
  require(native.width > 0 && out.width > 0 && native.height > 0 && out.height > 0,
          "placement needs positive sizes");
  require(static_cast<long long>(native.width) * out.height ==
              static_cast<long long>(native.height) * out.width,
          "native and output BEV must share an aspect ratio");
  const double scale = static_cast<double>(out.width) / native.width;
  const Point2 centre(out.width / 2.0, out.height / 2.0);
  return compose(rotation_homography(yaw_deg, centre), scale_homography(scale));
}

// Grid for the output-resolution BEV: each output pixel is pulled back
// through the placement homography and evaluated on the native BEV plane.
inline GridMap build_front_bev_grid(const FrontCamera& front, FrameSize out, double yaw_deg = 0.0,
                                    std::optional<FrameSize> native = {}) {
  const FrameSize nat = native.value_or(native_front_bev_size(front));
  const Eigen::Matrix3d back = invert(front_bev_placement(nat, out, yaw_deg)).matrix();
  const auto d = front.derived();
  GridMap grid(out.height, out.width);
  for (int v = 0; v < out.height; ++v)
    for (int u = 0; u < out.width; ++u) {
      const Eigen::Vector3d q = back * Eigen::Vector3d(u, v, 1.0);
      const Point2 p = front_view_map(q.x() / q.z(), q.y() / q.z(), front, nat, d);
      grid.set(v, u, p.x(), p.y());
    }
  return grid;
}

// ---------------------------------------------------------------------------
// Grid cache

// Grids depend only on camera configuration, so they are built once and
// shared read-only.
class GridCache {
public:
  std::shared_ptr<const GridMap> bev(const BevCamera& bev, const PanoCamera& pano,
                                     const Attitude& att = {}) {
    std::ostringstream key;
    key.precision(17);
    key << "pano " << bev.width << ' ' << bev.height << ' ' << bev.fov_deg << ' ' << pano.width
        << ' ' << pano.height << ' ' << att.roll_deg << ' ' << att.pitch_deg << ' ' << att.yaw_deg;
    return lookup(key.str(), [&] { return build_bev_grid(bev, pano, att); });
  }

  std::shared_ptr<const GridMap> front(const FrontCamera& front, FrameSize out, double yaw_deg = 0.0) {
    std::ostringstream key;
    key.precision(17);
    key << "front " << front.width << ' ' << front.height << ' ' << front.fov_deg << ' '
        << front.tilt_deg << ' ' << out.width << ' ' << out.height << ' ' << yaw_deg;
    return lookup(key.str(), [&] { return build_front_bev_grid(front, out, yaw_deg); });
  }

  std::size_t size() const {
    std::lock_guard lock(mutex_);
    return grids_.size();
  }

private:
  template <class Build>
  std::shared_ptr<const GridMap> lookup(const std::string& key, Build&& build) {
    {
      std::lock_guard lock(mutex_);
      if (auto it = grids_.find(key); it != grids_.end()) return it->second;
    }
    auto grid = std::make_shared<const GridMap>(build());
    std::lock_guard lock(mutex_);
    return grids_.try_emplace(key, std::move(grid)).first->second;
  }

  mutable std::mutex mutex_;
  std::map<std::string, std::shared_ptr<const GridMap>> grids_;
};

} // namespace bevloc
