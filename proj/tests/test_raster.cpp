#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "bevloc/raster.hpp"

using namespace bevloc;

namespace {

ImageBuffer random_image(int h, int w, int c, unsigned seed) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> data(static_cast<std::size_t>(h * w * c));
  for (double& v : data) v = u(gen);
  return ImageBuffer(h, w, c, std::move(data));
}

// Sum over every pixel of the image with the tent kernel; any pixel outside the
// 2x2 neighbourhood gets weight zero automatically.
double tent_oracle(const ImageBuffer& img, double x, double y, int c) {
  double s = 0.0;
  for (int r = 0; r < img.height(); ++r) {
    for (int q = 0; q < img.width(); ++q) {
      const double wx = std::max(0.0, 1.0 - std::abs(x - q));
      const double wy = std::max(0.0, 1.0 - std::abs(y - r));
      s += wx * wy * img.at(r, q, c);
    }
  }
  return s;
}

} // namespace

TEST(ImageBuffer, ClampsOnConstruction) {
  ImageBuffer img(1, 3, 1, std::vector<double>{-0.5, 0.25, 2.0});
  EXPECT_EQ(img.at(0, 0), 0.0);
  EXPECT_EQ(img.at(0, 1), 0.25);
  EXPECT_EQ(img.at(0, 2), 1.0);
}

TEST(ImageBuffer, RejectsWrongLengthAndNaN) {
  EXPECT_THROW(ImageBuffer(2, 2, 1, std::vector<double>(3, 0.0)), ContractError);
  EXPECT_THROW(ImageBuffer(1, 1, 1, std::vector<double>{std::nan("")}), ContractError);
}

TEST(BilinearSample, IntegerCoordinatesAreExact) {
  const ImageBuffer img = random_image(6, 7, 3, 1);
  for (int y = 0; y < 6; ++y)
    for (int x = 0; x < 7; ++x) {
      const auto v = bilinear_sample(img, x, y);
      for (int c = 0; c < 3; ++c) EXPECT_EQ(v[c], img.at(y, x, c));
    }
}

TEST(BilinearSample, MidpointOfTwoDarkTwoBright) {
  ImageBuffer img(2, 2, 1, std::vector<double>{0.0, 0.0, 1.0, 1.0});
  EXPECT_DOUBLE_EQ(bilinear_sample(img, 0.5, 0.5)[0], 0.5);
}

TEST(BilinearSample, MatchesTentKernelOracle) {
  const ImageBuffer img = random_image(9, 11, 2, 2);
  std::mt19937_64 gen(3);
  std::uniform_real_distribution<double> ux(-2.0, 12.0), uy(-2.0, 10.0);
  for (int t = 0; t < 500; ++t) {
    const double x = ux(gen), y = uy(gen);
    const auto v = bilinear_sample(img, x, y);
    for (int c = 0; c < 2; ++c) EXPECT_NEAR(v[c], tent_oracle(img, x, y, c), 1e-12);
  }
}

TEST(BilinearSample, FullyOutsideIsZero) {
  const ImageBuffer img(4, 4, 1, 1.0);
  EXPECT_EQ(bilinear_sample(img, -1.0, 2.0)[0], 0.0);
  EXPECT_EQ(bilinear_sample(img, 2.0, 4.0)[0], 0.0);
  EXPECT_EQ(bilinear_sample(img, 100.0, -50.0)[0], 0.0);
  // Half a pixel past the edge keeps half the weight.
  EXPECT_DOUBLE_EQ(bilinear_sample(img, 3.5, 1.0)[0], 0.5);
}

TEST(WarpByGrid, IdentityGrid) {
  const ImageBuffer img = random_image(5, 8, 3, 4);
  GridMap g(5, 8);
  for (int v = 0; v < 5; ++v)
    for (int u = 0; u < 8; ++u) g.set(v, u, u, v);
  EXPECT_EQ(warp_by_grid(img, g), img);
}

TEST(WarpByGrid, ShiftByOneColumn) {
  const ImageBuffer img = random_image(5, 8, 1, 5);
  GridMap g(5, 8);
  for (int v = 0; v < 5; ++v)
    for (int u = 0; u < 8; ++u) g.set(v, u, u + 1.0, v);
  const ImageBuffer out = warp_by_grid(img, g);
  for (int v = 0; v < 5; ++v) {
    for (int u = 0; u < 7; ++u) EXPECT_EQ(out.at(v, u), img.at(v, u + 1));
    EXPECT_EQ(out.at(v, 7), 0.0);
  }
}

TEST(WarpByGrid, ShapeMismatchIsContractError) {
  const ImageBuffer img(4, 4, 1, 0.5);
  GridMap g(3, 3);
  g.source_x.pop_back();
  EXPECT_THROW(warp_by_grid(img, g), ContractError);
}

TEST(WarpByHomography, IdentityAndTranslation) {
  const ImageBuffer img = random_image(10, 12, 1, 6);
  EXPECT_EQ(warp_by_homography(img, Homography::identity(), img.size()), img);
  const ImageBuffer shifted = warp_by_homography(img, Homography::translation(5, 0), img.size());
  for (int v = 0; v < 10; ++v) {
    for (int u = 0; u < 5; ++u) EXPECT_EQ(shifted.at(v, u), 0.0);
    for (int u = 5; u < 12; ++u) EXPECT_DOUBLE_EQ(shifted.at(v, u), img.at(v, u - 5));
  }
}

TEST(WarpByHomography, AgreesWithGridFromSameHomography) {
  const ImageBuffer img = random_image(20, 24, 2, 7);
  Eigen::Matrix3d m;
  m << 1.05, 0.04, -1.5, -0.03, 0.97, 2.0, 1e-3, -5e-4, 1.0;
  const Homography h(m);
  // Independent grid: inverse map computed per pixel with a fresh inverse.
  const Eigen::Matrix3d inv = m.inverse();
  GridMap g(20, 24);
  for (int v = 0; v < 20; ++v)
    for (int u = 0; u < 24; ++u) {
      const Eigen::Vector3d q = inv * Eigen::Vector3d(u, v, 1.0);
      g.set(v, u, q.x() / q.z(), q.y() / q.z());
    }
  const ImageBuffer a = warp_by_homography(img, h, img.size());
  const ImageBuffer b = warp_by_grid(img, g);
  for (std::size_t i = 0; i < a.data().size(); ++i) EXPECT_NEAR(a.data()[i], b.data()[i], 1e-12);
}

TEST(WarpByHomography, RoundTripInteriorError) {
  // Smooth content so double interpolation stays small.
  const int n = 64;
  ImageBuffer img(n, n, 1);
  for (int v = 0; v < n; ++v)
    for (int u = 0; u < n; ++u) img.set(v, u, 0, 0.5 + 0.4 * std::sin(u * 0.2) * std::cos(v * 0.15));
  Eigen::Matrix3d m;
  m << 0.98, 0.05, 1.2, -0.04, 1.01, -0.8, 2e-4, 1e-4, 1.0;
  const Homography h(m);
  const ImageBuffer back =
      warp_by_homography(warp_by_homography(img, h, img.size()), invert(h), img.size());
  double err = 0.0;
  int cnt = 0;
  for (int v = 8; v < n - 8; ++v)
    for (int u = 8; u < n - 8; ++u) {
      err += std::abs(back.at(v, u) - img.at(v, u));
      ++cnt;
    }
  EXPECT_LT(err / cnt, 0.02);
}

TEST(WarpByHomography, SingularRejected) {
  const ImageBuffer img(4, 4, 1, 0.5);
  Eigen::Matrix3d m = Eigen::Matrix3d::Zero();
  m(2, 2) = 1.0;
  EXPECT_THROW(warp_by_homography(img, Homography(m), img.size()), DegenerateError);
}

TEST(WarpByHomography, NeverExceedsInputMax) {
  ImageBuffer img = random_image(16, 16, 1, 8);
  double mx = 0.0;
  for (double v : img.data()) mx = std::max(mx, v);
  const ImageBuffer out = warp_by_homography(img, rotation_homography(17.0, {7.5, 7.5}), img.size());
  for (double v : out.data()) EXPECT_LE(v, mx + 1e-15);
}

TEST(Raster, GrayscaleAndQuarterTurns) {
  ImageBuffer rgb(1, 2, 3, std::vector<double>{0.0, 0.3, 0.6, 1.0, 1.0, 0.4});
  const ImageBuffer g = to_grayscale(rgb);
  EXPECT_NEAR(g.at(0, 0), 0.3, 1e-15);
  EXPECT_NEAR(g.at(0, 1), 0.8, 1e-15);

  const ImageBuffer img = random_image(3, 5, 1, 9);
  const ImageBuffer r1 = rotate_quarter_turns(img, 1);
  ASSERT_EQ(r1.height(), 5);
  ASSERT_EQ(r1.width(), 3);
  // Clockwise: the top-left pixel moves to the top-right corner.
  EXPECT_EQ(r1.at(0, 2), img.at(0, 0));
  EXPECT_EQ(rotate_quarter_turns(r1, 3), img);
  EXPECT_EQ(rotate_quarter_turns(rotate_quarter_turns(img, 2), 2), img);
}
