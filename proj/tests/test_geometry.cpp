#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "bevloc/geometry.hpp"

using namespace bevloc;

namespace {

constexpr double pi = std::numbers::pi;

Eigen::Matrix3d oracle_rotation(const Attitude& a) {
  using Eigen::AngleAxisd;
  using Eigen::Vector3d;
  return (AngleAxisd(deg2rad(a.yaw_deg), Vector3d::UnitZ()) *
          AngleAxisd(deg2rad(a.pitch_deg), Vector3d::UnitY()) *
          AngleAxisd(deg2rad(a.roll_deg), Vector3d::UnitX()))
      .toRotationMatrix();
}

// Project a ray straight to the panorama with nothing shared with the library path.
Point2 oracle_pano(const Eigen::Vector3d& r, const PanoCamera& pano) {
  const double lon = (r.x() == 0.0 && r.y() == 0.0) ? 0.0 : std::atan2(r.y(), r.x());
  const double lat = std::asin(r.z() / r.norm());
  return {pano.width * (0.5 - lon / (2.0 * pi)), pano.height * (0.5 - lat / pi)};
}

const BevCamera kBev{512, 512, 85.0};
const PanoCamera kPano{2048, 1024};

} // namespace

TEST(Spherical, RayToSpherical) {
  auto s = ray_to_spherical({1, 0, 0});
  EXPECT_EQ(s.phi, 0.0);
  EXPECT_EQ(s.theta, 0.0);
  s = ray_to_spherical({0, 0, -1});
  EXPECT_EQ(s.phi, 0.0);
  EXPECT_DOUBLE_EQ(s.theta, -pi / 2);
  s = ray_to_spherical({1, 1, std::sqrt(2.0)});
  EXPECT_DOUBLE_EQ(s.phi, pi / 4);
  EXPECT_DOUBLE_EQ(s.theta, pi / 4);
  EXPECT_THROW(ray_to_spherical({0, 0, 0}), ContractError);
}

TEST(Spherical, EquirectAndPanoPixel) {
  auto e = spherical_to_equirect({0, 0});
  EXPECT_EQ(e.x, 0.0);
  EXPECT_EQ(e.y, 0.0);
  e = spherical_to_equirect({pi, pi / 2});
  EXPECT_DOUBLE_EQ(e.x, -1.0);
  EXPECT_DOUBLE_EQ(e.y, 1.0);
  e = spherical_to_equirect({-pi / 2, -pi / 4});
  EXPECT_DOUBLE_EQ(e.x, 0.5);
  EXPECT_DOUBLE_EQ(e.y, -0.5);
  EXPECT_EQ(equirect_to_pano_pixel({0, 0}, kPano), Point2(1024, 512));
  EXPECT_EQ(equirect_to_pano_pixel({-1, 1}, kPano), Point2(0, 0));
  EXPECT_EQ(equirect_to_pano_pixel({1, -1}, kPano), Point2(2048, 1024));
}

TEST(Spherical, BevPixelToRay) {
  const double f = kBev.focal();
  EXPECT_NEAR(f, 256.0 / std::tan(deg2rad(85.0)), 1e-12);
  EXPECT_EQ(bev_pixel_to_ray(256, 256, kBev), Eigen::Vector3d(0, 0, -f));
  EXPECT_EQ(bev_pixel_to_ray(0, 0, kBev), Eigen::Vector3d(256, 256, -f));
  EXPECT_EQ(bev_pixel_to_ray(512, 256, kBev), Eigen::Vector3d(0, -256, -f));
}

TEST(SphericalMap, Examples) {
  const double edge = (0.5 + (90.0 - 85.0) / 180.0) * 1024.0;
  Point2 p = spherical_map(256, 256, kBev, kPano);
  EXPECT_DOUBLE_EQ(p.x(), 1024.0);
  EXPECT_DOUBLE_EQ(p.y(), 1024.0);
  p = spherical_map(256, 0, kBev, kPano);
  EXPECT_NEAR(p.x(), 1024.0, 1e-9);
  EXPECT_NEAR(p.y(), edge, 1e-9);
  EXPECT_NEAR(edge, 540.4444444444, 1e-9);
  p = spherical_map(0, 256, kBev, kPano);
  EXPECT_NEAR(p.x(), 512.0, 1e-9);
  EXPECT_NEAR(p.y(), edge, 1e-9);
}

TEST(SphericalMap, ClosedFormAgreesWithComposedPath) {
  const GridMap a = build_bev_grid(kBev, kPano);
  const GridMap b = build_bev_grid_closed_form(kBev, kPano);
  double worst = 0.0;
  for (std::size_t i = 0; i < a.source_x.size(); ++i)
    worst = std::max({worst, std::abs(a.source_x[i] - b.source_x[i]),
                      std::abs(a.source_y[i] - b.source_y[i])});
  EXPECT_LT(worst, 1e-9);
  EXPECT_EQ(a.at(0, 256), spherical_map(256, 0, kBev, kPano));
}

TEST(SphericalMap, LowerHemisphereOnly) {
  const GridMap g = build_bev_grid(kBev, kPano);
  for (double v : g.source_y) EXPECT_GE(v, 512.0);
}

TEST(SphericalMap, AttitudeMatchesIndependentRotation) {
  std::mt19937_64 gen(1);
  std::uniform_real_distribution<double> ang(-30.0, 30.0), pix(0.0, 512.0);
  for (int t = 0; t < 200; ++t) {
    const Attitude att{ang(gen), ang(gen), 6.0 * ang(gen)};
    const double u = pix(gen), v = pix(gen);
    const Eigen::Vector3d ray(-v + 256.0, -u + 256.0, -kBev.focal());
    Point2 want = oracle_pano(oracle_rotation(att) * ray, kPano);
    const Point2 got = spherical_map(u, v, kBev, kPano, att);
    // The seam at +-pi may wrap either way.
    double du = std::abs(got.x() - want.x());
    du = std::min(du, std::abs(du - kPano.width));
    EXPECT_LT(du, 1e-9);
    EXPECT_NEAR(got.y(), want.y(), 1e-9);
  }
}

TEST(SphericalMap, RotationIsOrthonormal) {
  std::mt19937_64 gen(2);
  std::uniform_real_distribution<double> ang(-180.0, 180.0);
  for (int t = 0; t < 100; ++t) {
    const Attitude att{ang(gen), ang(gen), ang(gen)};
    const Eigen::Matrix3d r = rotation_matrix(att);
    EXPECT_LT((r.transpose() * r - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_NEAR(r.determinant(), 1.0, 1e-12);
    EXPECT_LT((r - oracle_rotation(att)).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(SphericalMap, YawIsInPlaneRotation) {
  for (double yaw : {90.0, 37.0, -120.0}) {
    const double g = deg2rad(yaw);
    const Attitude att{0.0, 0.0, yaw};
    for (int v = 0; v < 512; v += 37)
      for (int u = 0; u < 512; u += 41) {
        if (u == 256 && v == 256) continue;
        const double x1 = -v + 256.0, y1 = -u + 256.0;
        const double xr = std::cos(g) * x1 - std::sin(g) * y1;
        const double yr = std::sin(g) * x1 + std::cos(g) * y1;
        const Point2 a = spherical_map(u, v, kBev, kPano, att);
        const Point2 b = spherical_map(256.0 - yr, 256.0 - xr, kBev, kPano);
        double du = std::abs(a.x() - b.x());
        du = std::min(du, std::abs(du - kPano.width));
        EXPECT_LT(du, 1e-9);
        EXPECT_NEAR(a.y(), b.y(), 1e-9);
      }
  }
}

TEST(SphericalMap, InverseMapRoundTrip) {
  for (int v = 0; v < 512; v += 31)
    for (int u = 0; u < 512; u += 29) {
      if (u == 256 && v == 256) continue;
      const Point2 p = spherical_map(u, v, kBev, kPano);
      const auto q = pano_pixel_to_bev(p.x(), p.y(), kBev, kPano);
      ASSERT_TRUE(q.has_value());
      EXPECT_NEAR(q->x(), u, 1e-8);
      EXPECT_NEAR(q->y(), v, 1e-8);
    }
  EXPECT_FALSE(pano_pixel_to_bev(100.0, 300.0, kBev, kPano).has_value());
}

TEST(Panorama, CompletionPadsToTwoToOne) {
  const ImageBuffer band(200, 1000, 1, 0.7);
  const ImageBuffer full = complete_panorama(band);
  EXPECT_EQ(full.height(), 500);
  EXPECT_EQ(full.width(), 1000);
  EXPECT_EQ(full.at(0, 0), 0.0);
  EXPECT_EQ(full.at(150, 10), 0.7);
  EXPECT_EQ(full.at(349, 10), 0.7);
  EXPECT_EQ(full.at(350, 10), 0.0);
}

TEST(BevCamera, RejectsBadFov) {
  EXPECT_THROW((BevCamera{512, 512, 90.0}.focal()), ContractError);
  EXPECT_THROW((BevCamera{512, 512, 0.0}.focal()), ContractError);
}

// ---------------------------------------------------------------------------
// Front view

TEST(FrontView, DerivedQuantities) {
  const FrontCamera cam{375, 375, 17.5, 0.8};
  const auto d = cam.derived();
  EXPECT_NEAR(d.f, 187.5 / std::tan(deg2rad(17.5)), 1e-12);
  EXPECT_NEAR(d.varphi, pi / 2 - deg2rad(17.5), 1e-15);
  EXPECT_NEAR(d.delta, pi / 2 - (d.varphi - deg2rad(0.8)), 1e-15);
  EXPECT_NEAR(d.h * d.h + d.f_prime * d.f_prime, d.l0 * d.l0, 1e-6);
}

TEST(FrontView, BottomEdgeAndCentre) {
  const FrontCamera cam{375, 375, 17.5, 0.8};
  const FrameSize bev{2250, 2250};
  const Point2 p = front_view_map(1125, 2250, cam, bev);
  EXPECT_NEAR(p.x(), 187.5, 1e-9);
  EXPECT_NEAR(p.y(), 375.0, 1e-9);
  for (double u : {0.0, 400.0, 2249.0}) EXPECT_NEAR(front_view_map(u, 2250, cam, bev).y(), 375.0, 1e-9);
}

TEST(FrontView, UntiltedMatchesRayPlaneIntersection) {
  // Camera at height h, f' behind a vertical image plane whose bottom edge
  // touches the ground; a ground point d ahead of the edge meets the image
  // plane at height h*d/(f'+d).
  const FrontCamera cam{375, 375, 17.5, 0.0};
  const FrameSize bev{2250, 2250};
  const double f = 187.5 / std::tan(deg2rad(17.5));
  const double h = 187.5, fp = f;  // camera sits on the optical axis
  for (double vb : {0.0, 500.0, 1800.0, 2200.0, 2249.5}) {
    const double d = 2250.0 - vb;
    const Point2 p = front_view_map(1125, vb, cam, bev);
    EXPECT_NEAR(p.x(), 187.5, 1e-9);
    EXPECT_NEAR(p.y(), 375.0 - h * d / (fp + d), 1e-6) << "v_b " << vb;
  }
}

TEST(FrontView, TiltChangesGrid) {
  const FrameSize target{60, 60};
  const GridMap a = build_front_grid(FrontCamera{375, 375, 17.5, 0.0}, target);
  const GridMap b = build_front_grid(FrontCamera{375, 375, 17.5, 0.8}, target);
  EXPECT_NE(a.source_y, b.source_y);
  const Point2 q = front_view_map(30, 60, FrontCamera{375, 375, 17.5, 0.8}, target);
  EXPECT_EQ(b.at(59, 30), front_view_map(30, 59, FrontCamera{375, 375, 17.5, 0.8}, target));
  EXPECT_NEAR(q.y(), 375.0, 1e-12);
}

TEST(FrontView, ConstantDepthLinesStayStraight) {
  const FrontCamera cam{1242, 375, 17.5, 0.8};
  const FrameSize bev = native_front_bev_size(cam);
  for (double vb : {1000.0, 5000.0, 7400.0}) {
    const Point2 a = front_view_map(0, vb, cam, bev);
    const Point2 b = front_view_map(bev.width - 1.0, vb, cam, bev);
    const Point2 dir = (b - a).normalized();
    for (double ub = 0; ub < bev.width; ub += 97) {
      const Point2 c = front_view_map(ub, vb, cam, bev) - a;
      EXPECT_LT(std::abs(dir.x() * c.y() - dir.y() * c.x()), 0.5);
    }
  }
}

TEST(FrontView, ContinuousAtBottomEdge) {
  const FrontCamera cam{375, 375, 17.5, 0.8};
  const FrameSize bev{2250, 2250};
  const Point2 below = front_view_map(700, 2250.0 - 1e-9, cam, bev);
  const Point2 above = front_view_map(700, 2250.0 + 1e-9, cam, bev);
  const Point2 at = front_view_map(700, 2250.0, cam, bev);
  EXPECT_LT((below - at).norm(), 1e-6);
  EXPECT_LT((above - at).norm(), 1e-6);
}

TEST(FrontView, PlacementGridMatchesPointwise) {
  const FrontCamera cam{60, 20, 17.5, 0.8};
  const FrameSize out{64, 64};
  const FrameSize nat = native_front_bev_size(cam);
  const GridMap g = build_front_bev_grid(cam, out, 30.0);
  const Homography back = invert(front_bev_placement(nat, out, 30.0));
  for (int v = 0; v < 64; v += 9)
    for (int u = 0; u < 64; u += 7) {
      const Point2 n = back.apply({u, v});
      const Point2 p = front_view_map(n.x(), n.y(), cam, nat);
      EXPECT_NEAR(g.at(v, u).x(), p.x(), 1e-9);
      EXPECT_NEAR(g.at(v, u).y(), p.y(), 1e-9);
    }
}

TEST(GridCache, ReusesGrids) {
  GridCache cache;
  const BevCamera bev{64, 64, 85.0};
  const PanoCamera pano{256, 128};
  auto a = cache.bev(bev, pano);
  auto b = cache.bev(bev, pano);
  EXPECT_EQ(a.get(), b.get());
  auto c = cache.bev(bev, pano, Attitude{0, 0, 10});
  EXPECT_NE(a.get(), c.get());
  EXPECT_EQ(cache.size(), 2u);
}
