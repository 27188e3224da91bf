#pragma once

// Image containers, bilinear sampling with zero fill, and inverse warping by
// per-pixel coordinate grids or homographies.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <utility>
#include <vector>

#include "bevloc/error.hpp"
#include "bevloc/homography.hpp"

namespace bevloc {

// H x W x C raster of unit-interval intensities, row-major, channels interleaved.
class ImageBuffer {
public:
  ImageBuffer() = default;

  ImageBuffer(int height, int width, int channels, double fill = 0.0)
      : ImageBuffer(height, width, channels,
                    std::vector<double>(checked_size(height, width, channels), fill)) {}

  // Values are clamped to [0,1]; non-finite values are rejected.
  ImageBuffer(int height, int width, int channels, std::vector<double> data)
      : height_(height), width_(width), channels_(channels), data_(std::move(data)) {
    require(data_.size() == checked_size(height, width, channels),
            "image data length does not match height*width*channels");
    for (double& v : data_) {
      require(std::isfinite(v), "image data must be finite");
      v = std::clamp(v, 0.0, 1.0);
    }
  }

  int height() const { return height_; }
  int width() const { return width_; }
  int channels() const { return channels_; }
  bool empty() const { return data_.empty(); }
  FrameSize size() const { return {width_, height_}; }

  const std::vector<double>& data() const { return data_; }

  std::size_t index(int y, int x, int c = 0) const {
    return (static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) +
            static_cast<std::size_t>(x)) *
               static_cast<std::size_t>(channels_) +
           static_cast<std::size_t>(c);
  }

  double at(int y, int x, int c = 0) const { return data_[index(y, x, c)]; }

  // Writes are clamped so the unit-interval invariant survives mutation.
  void set(int y, int x, int c, double v) {
    data_[index(y, x, c)] = std::isfinite(v) ? std::clamp(v, 0.0, 1.0) : 0.0;
  }

  bool contains(int y, int x) const { return y >= 0 && y < height_ && x >= 0 && x < width_; }

  friend bool operator==(const ImageBuffer&, const ImageBuffer&) = default;

private:
  static std::size_t checked_size(int h, int w, int c) {
    require(h >= 0 && w >= 0 && c > 0, "image dimensions must be non-negative, channels positive");
    return static_cast<std::size_t>(h) * static_cast<std::size_t>(w) * static_cast<std::size_t>(c);
  }

  int height_ = 0;
  int width_ = 0;
  int channels_ = 1;
  std::vector<double> data_;
};

// Per-output-pixel fractional source coordinates. Coordinates outside the
// source image (or non-finite ones) sample as zero.
struct GridMap {
  int height = 0;
  int width = 0;
  std::vector<double> source_x;
  std::vector<double> source_y;

  GridMap() = default;
  GridMap(int h, int w)
      : height(h), width(w),
        source_x(static_cast<std::size_t>(h) * static_cast<std::size_t>(w), 0.0),
        source_y(static_cast<std::size_t>(h) * static_cast<std::size_t>(w), 0.0) {
    require(h > 0 && w > 0, "grid needs a positive size");
  }

  std::size_t index(int v, int u) const {
    return static_cast<std::size_t>(v) * static_cast<std::size_t>(width) +
           static_cast<std::size_t>(u);
  }
  void set(int v, int u, double sx, double sy) {
    source_x[index(v, u)] = sx;
    source_y[index(v, u)] = sy;
  }
  Point2 at(int v, int u) const { return {source_x[index(v, u)], source_y[index(v, u)]}; }
  FrameSize size() const { return {width, height}; }

  friend bool operator==(const GridMap&, const GridMap&) = default;
};

// Bilinear interpolation of the four enclosing pixels, writing channels() values
// to out. Neighbours outside the image contribute zero.
inline void bilinear_sample_into(const ImageBuffer& img, double x, double y, double* out) {
  const int ch = img.channels();
  std::fill(out, out + ch, 0.0);
  if (!std::isfinite(x) || !std::isfinite(y)) return;
  if (x <= -1.0 || y <= -1.0 || x >= img.width() || y >= img.height()) return;
  const double fx = std::floor(x), fy = std::floor(y);
  const int x0 = static_cast<int>(fx), y0 = static_cast<int>(fy);
  const double ax = x - fx, ay = y - fy;
  const double w[4] = {(1.0 - ax) * (1.0 - ay), ax * (1.0 - ay), (1.0 - ax) * ay, ax * ay};
  const int xs[4] = {x0, x0 + 1, x0, x0 + 1};
  const int ys[4] = {y0, y0, y0 + 1, y0 + 1};
  for (int k = 0; k < 4; ++k) {
    if (w[k] == 0.0 || !img.contains(ys[k], xs[k])) continue;
    const std::size_t base = img.index(ys[k], xs[k]);
    for (int c = 0; c < ch; ++c) out[c] += w[k] * img.data()[base + static_cast<std::size_t>(c)];
  }
}

inline std::vector<double> bilinear_sample(const ImageBuffer& img, double x, double y) {
  require(!img.empty(), "bilinear_sample on an empty image");
  std::vector<double> out(static_cast<std::size_t>(img.channels()));
  bilinear_sample_into(img, x, y, out.data());
  return out;
}

inline ImageBuffer warp_by_grid(const ImageBuffer& img, const GridMap& grid) {
  require(!img.empty(), "warp_by_grid on an empty image");
  require(grid.height > 0 && grid.width > 0 &&
              grid.source_x.size() == grid.index(grid.height - 1, grid.width - 1) + 1 &&
              grid.source_y.size() == grid.source_x.size(),
          "grid coordinate arrays do not match its declared shape");
  const int ch = img.channels();
  std::vector<double> out(grid.source_x.size() * static_cast<std::size_t>(ch));
  for (std::size_t i = 0; i < grid.source_x.size(); ++i)
    bilinear_sample_into(img, grid.source_x[i], grid.source_y[i],
                         out.data() + i * static_cast<std::size_t>(ch));
  return ImageBuffer(grid.height, grid.width, ch, std::move(out));
}

// Grid of inverse-mapped source locations h^-1 * target. Targets whose
// preimage is at infinity get NaN (zero fill).
inline GridMap homography_grid(const Homography& h, FrameSize out_size) {
  GridMap grid(out_size.height, out_size.width);
  const Eigen::Matrix3d inv = h.matrix().inverse();
  for (int v = 0; v < out_size.height; ++v) {
    for (int u = 0; u < out_size.width; ++u) {
      const Eigen::Vector3d q = inv * Eigen::Vector3d(u, v, 1.0);
      if (std::abs(q.z()) < kInfinityEps) {
        grid.set(v, u, std::nan(""), std::nan(""));
      } else {
        grid.set(v, u, q.x() / q.z(), q.y() / q.z());
      }
    }
  }
  return grid;
}

// out(u,v) = img(h^-1 (u,v)).
inline ImageBuffer warp_by_homography(const ImageBuffer& img, const Homography& h,
                                      FrameSize out_size) {
  return warp_by_grid(img, homography_grid(h, out_size));
}

inline ImageBuffer to_grayscale(const ImageBuffer& img) {
  if (img.channels() == 1) return img;
  std::vector<double> out(static_cast<std::size_t>(img.height()) *
                          static_cast<std::size_t>(img.width()));
  const auto ch = static_cast<std::size_t>(img.channels());
  for (std::size_t i = 0; i < out.size(); ++i) {
    double s = 0.0;
    for (std::size_t c = 0; c < ch; ++c) s += img.data()[i * ch + c];
    out[i] = s / static_cast<double>(ch);
  }
  return ImageBuffer(img.height(), img.width(), 1, std::move(out));
}

// Rotates by a multiple of 90 degrees clockwise (on screen, v down).
inline ImageBuffer rotate_quarter_turns(const ImageBuffer& img, int quarter_turns) {
  const int q = ((quarter_turns % 4) + 4) % 4;
  if (q == 0) return img;
  const int h = img.height(), w = img.width(), ch = img.channels();
  const int oh = (q % 2 == 0) ? h : w, ow = (q % 2 == 0) ? w : h;
  ImageBuffer out(oh, ow, ch);
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      int sy = 0, sx = 0;
      switch (q) {
        case 1: sy = h - 1 - x; sx = y; break;
        case 2: sy = h - 1 - y; sx = w - 1 - x; break;
        default: sy = x; sx = w - 1 - y; break;
      }
      for (int c = 0; c < ch; ++c) out.set(y, x, c, img.at(sy, sx, c));
    }
  }
  return out;
}

} // namespace bevloc
