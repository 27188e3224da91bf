#pragma once

// Dense features on a coarse grid, the all-pairs correlation volume
//   C[i,j,k,l] = ReLU(<f_g(i,j), f_s(k,l)>),
// its stride-2 pooled companion, and windowed slice sampling around
// projected coordinates.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include "bevloc/error.hpp"
#include "bevloc/homography.hpp"
#include "bevloc/raster.hpp"

namespace bevloc {

// D x H x W features. Stored position-major so each feature vector is
// contiguous; at(c, i, j) addresses channel c of cell (i, j).
class FeatureMap {
public:
  FeatureMap() = default;
  FeatureMap(int channels, int height, int width)
      : channels_(channels), height_(height), width_(width),
        data_(static_cast<std::size_t>(channels) * static_cast<std::size_t>(height) *
                  static_cast<std::size_t>(width),
              0.0) {
    require(channels > 0 && height > 0 && width > 0, "feature map dimensions must be positive");
  }

  int channels() const { return channels_; }
  int height() const { return height_; }
  int width() const { return width_; }

  const double* vec(int i, int j) const { return data_.data() + offset(i, j); }
  double* vec(int i, int j) { return data_.data() + offset(i, j); }
  double at(int c, int i, int j) const { return vec(i, j)[c]; }
  double& at(int c, int i, int j) { return vec(i, j)[c]; }

  const std::vector<double>& raw() const { return data_; }

  // Each position scaled to unit L2 norm; all-zero positions stay zero.
  void normalize() {
    for (int i = 0; i < height_; ++i)
      for (int j = 0; j < width_; ++j) {
        double* v = vec(i, j);
        double n = 0.0;
        for (int c = 0; c < channels_; ++c) n += v[c] * v[c];
        n = std::sqrt(n);
        if (n > 1e-12) {
          for (int c = 0; c < channels_; ++c) v[c] /= n;
        } else {
          for (int c = 0; c < channels_; ++c) v[c] = 0.0;
        }
      }
  }

  friend bool operator==(const FeatureMap&, const FeatureMap&) = default;

private:
  std::size_t offset(int i, int j) const {
    return (static_cast<std::size_t>(i) * static_cast<std::size_t>(width_) +
            static_cast<std::size_t>(j)) *
           static_cast<std::size_t>(channels_);
  }

  int channels_ = 0;
  int height_ = 0;
  int width_ = 0;
  std::vector<double> data_;
};

// Dense 4-D tensor indexed [i][j][k][l].
class CorrelationVolume {
public:
  CorrelationVolume() = default;
  CorrelationVolume(int h, int w, int h2, int w2)
      : dims_{h, w, h2, w2},
        data_(static_cast<std::size_t>(h) * static_cast<std::size_t>(w) *
                  static_cast<std::size_t>(h2) * static_cast<std::size_t>(w2),
              0.0) {
    require(h > 0 && w > 0 && h2 > 0 && w2 > 0, "volume dimensions must be positive");
  }

  int dim(int k) const { return dims_[static_cast<std::size_t>(k)]; }
  std::size_t index(int i, int j, int k, int l) const {
    return ((static_cast<std::size_t>(i) * static_cast<std::size_t>(dims_[1]) +
             static_cast<std::size_t>(j)) *
                static_cast<std::size_t>(dims_[2]) +
            static_cast<std::size_t>(k)) *
               static_cast<std::size_t>(dims_[3]) +
           static_cast<std::size_t>(l);
  }
  double at(int i, int j, int k, int l) const { return data_[index(i, j, k, l)]; }
  double& at(int i, int j, int k, int l) { return data_[index(i, j, k, l)]; }

  // Row-major (k, l) plane for source cell (i, j).
  const double* plane(int i, int j) const { return data_.data() + index(i, j, 0, 0); }

  std::vector<double>& raw() { return data_; }
  const std::vector<double>& raw() const { return data_; }

  friend bool operator==(const CorrelationVolume&, const CorrelationVolume&) = default;

private:
  std::array<int, 4> dims_{0, 0, 0, 0};
  std::vector<double> data_;
};

// H x W x (2r+1) x (2r+1) window of correlations, indexed [i][j][dv+r][du+r].
struct CorrelationSlice {
  int height = 0;
  int width = 0;
  int radius = 0;
  std::vector<double> data;

  int side() const { return 2 * radius + 1; }
  std::size_t taps() const { return static_cast<std::size_t>(side()) * static_cast<std::size_t>(side()); }
  const double* window(int i, int j) const {
    return data.data() + (static_cast<std::size_t>(i) * static_cast<std::size_t>(width) +
                          static_cast<std::size_t>(j)) *
                             taps();
  }
  double at(int i, int j, int dv, int du) const {
    return window(i, j)[static_cast<std::size_t>(dv + radius) * static_cast<std::size_t>(side()) +
                        static_cast<std::size_t>(du + radius)];
  }
};

// ---------------------------------------------------------------------------
// Feature extraction (stand-ins for a learned backbone)

enum class FeatureMode {
  avgpool,   // block mean of each image channel
  gradient,  // block mean intensity, mean |dI/dx|, mean |dI/dy|
  patch,     // zero-mean 4x4 half-cell block means around each cell centre
};

inline std::string_view to_string(FeatureMode m) {
  switch (m) {
    case FeatureMode::avgpool: return "avgpool";
    case FeatureMode::gradient: return "gradient";
    case FeatureMode::patch: return "patch";
  }
  return "?";
}

inline FeatureMode feature_mode_from_string(std::string_view s) {
  if (s == "avgpool") return FeatureMode::avgpool;
  if (s == "gradient") return FeatureMode::gradient;
  if (s == "patch") return FeatureMode::patch;
  throw ContractError("unknown feature mode '" + std::string(s) + "'");
}

namespace detail {

// Mean over rows [y0, y0+bh) and columns [x0, x0+bw) of a single-channel
// plane; cells outside the plane count as zero.
inline double block_mean(const std::vector<double>& plane, int h, int w, int y0, int x0, int bh,
                         int bw) {
  double s = 0.0;
  for (int y = std::max(y0, 0); y < std::min(y0 + bh, h); ++y)
    for (int x = std::max(x0, 0); x < std::min(x0 + bw, w); ++x)
      s += plane[static_cast<std::size_t>(y) * static_cast<std::size_t>(w) + static_cast<std::size_t>(x)];
  return s / (static_cast<double>(bh) * bw);
}

} // namespace detail

// Patch descriptor layout: sub-block means on a per_cell x per_cell grid per
// cell, over a window of span x span cells centred on the cell.
struct PatchLayout {
  int per_cell = 4;
  int span = 3;
};

inline FeatureMap extract_features(const ImageBuffer& img, int grid_h, int grid_w,
                                   FeatureMode mode = FeatureMode::patch, bool normalize = true,
                                   PatchLayout patch_layout = {}) {
  require(!img.empty(), "extract_features on an empty image");
  require(grid_h > 0 && grid_w > 0, "feature grid must be positive");
  if (img.height() % grid_h != 0 || img.width() % grid_w != 0)
    throw ContractError("image dimensions must be divisible by the feature grid");
  const int sy = img.height() / grid_h, sx = img.width() / grid_w;
  const int h = img.height(), w = img.width();

  FeatureMap out;
  if (mode == FeatureMode::avgpool) {
    const int ch = img.channels();
    out = FeatureMap(ch, grid_h, grid_w);
    for (int i = 0; i < grid_h; ++i)
      for (int j = 0; j < grid_w; ++j)
        for (int c = 0; c < ch; ++c) {
          double s = 0.0;
          for (int y = i * sy; y < (i + 1) * sy; ++y)
            for (int x = j * sx; x < (j + 1) * sx; ++x) s += img.at(y, x, c);
          out.at(c, i, j) = s / (static_cast<double>(sy) * sx);
        }
  } else {
    const ImageBuffer gray = to_grayscale(img);
    const auto& g = gray.data();
    if (mode == FeatureMode::gradient) {
      out = FeatureMap(3, grid_h, grid_w);
      for (int i = 0; i < grid_h; ++i)
        for (int j = 0; j < grid_w; ++j) {
          double m = 0.0, gx = 0.0, gy = 0.0;
          for (int y = i * sy; y < (i + 1) * sy; ++y)
            for (int x = j * sx; x < (j + 1) * sx; ++x) {
              const double v = gray.at(y, x);
              m += v;
              if (x + 1 < w) gx += std::abs(gray.at(y, x + 1) - v);
              if (y + 1 < h) gy += std::abs(gray.at(y + 1, x) - v);
            }
          const double n = static_cast<double>(sy) * sx;
          out.at(0, i, j) = m / n;
          out.at(1, i, j) = gx / n;
          out.at(2, i, j) = gy / n;
        }
    } else {
      const int per = patch_layout.per_cell, span = patch_layout.span;
      require(per >= 1 && span >= 1, "patch layout must be positive");
      if (sy % per != 0 || sx % per != 0) throw ContractError("patch features need a stride divisible by the sub-block count");
      const int by = sy / per, bx = sx / per;
      const int gh = per * grid_h, gw = per * grid_w;
      const int side = per * span;
      out = FeatureMap(side * side, grid_h, grid_w);
      std::vector<double> sub(static_cast<std::size_t>(gh) * static_cast<std::size_t>(gw));
      for (int a = 0; a < gh; ++a)
        for (int b = 0; b < gw; ++b)
          sub[static_cast<std::size_t>(a) * static_cast<std::size_t>(gw) + static_cast<std::size_t>(b)] =
              detail::block_mean(g, h, w, a * by, b * bx, by, bx);
      // window of `span` cells centred on the cell centre
      const int lead = per * (span - 1) / 2;
      for (int i = 0; i < grid_h; ++i)
        for (int j = 0; j < grid_w; ++j) {
          double* v = out.vec(i, j);
          double mean = 0.0;
          for (int a = 0; a < side; ++a)
            for (int b = 0; b < side; ++b) {
              const int ra = per * i - lead + a, cb = per * j - lead + b;
              const bool inside = ra >= 0 && ra < gh && cb >= 0 && cb < gw;
              const double s = inside ? sub[static_cast<std::size_t>(ra) * static_cast<std::size_t>(gw) +
                                            static_cast<std::size_t>(cb)]
                                      : 0.0;
              v[a * side + b] = s;
              mean += s;
            }
          mean /= side * side;
          for (int c = 0; c < side * side; ++c) v[c] -= mean;
        }
    }
  }
  if (normalize) out.normalize();
  return out;
}

// ---------------------------------------------------------------------------
// Correlation

inline CorrelationVolume correlate(const FeatureMap& fg, const FeatureMap& fs) {
  if (fg.channels() != fs.channels() || fg.height() != fs.height() || fg.width() != fs.width())
    throw ContractError("correlate: feature maps must have equal D, H, W");
  const int h = fg.height(), w = fg.width(), d = fg.channels();
  CorrelationVolume c(h, w, h, w);
  double* out = c.raw().data();
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      const double* a = fg.vec(i, j);
      for (int k = 0; k < h; ++k)
        for (int l = 0; l < w; ++l) {
          const double* b = fs.vec(k, l);
          double s = 0.0;
          for (int ch = 0; ch < d; ++ch) s += a[ch] * b[ch];
          *out++ = s > 0.0 ? s : 0.0;
        }
    }
  return c;
}

// 2x2 mean over the last two dimensions.
inline CorrelationVolume pool_half(const CorrelationVolume& c) {
  if (c.dim(2) % 2 != 0 || c.dim(3) % 2 != 0)
    throw ContractError("pool_half needs even trailing dimensions");
  const int h2 = c.dim(2) / 2, w2 = c.dim(3) / 2;
  CorrelationVolume out(c.dim(0), c.dim(1), h2, w2);
  for (int i = 0; i < c.dim(0); ++i)
    for (int j = 0; j < c.dim(1); ++j)
      for (int k = 0; k < h2; ++k)
        for (int l = 0; l < w2; ++l)
          out.at(i, j, k, l) = 0.25 * (c.at(i, j, 2 * k, 2 * l) + c.at(i, j, 2 * k, 2 * l + 1) +
                                       c.at(i, j, 2 * k + 1, 2 * l) + c.at(i, j, 2 * k + 1, 2 * l + 1));
  return out;
}

namespace detail {

// Bilinear read of a row-major h x w plane at column x, row y with zero fill.
inline double plane_bilinear(const double* plane, int h, int w, double x, double y) {
  if (!std::isfinite(x) || !std::isfinite(y)) return 0.0;
  if (x <= -1.0 || y <= -1.0 || x >= w || y >= h) return 0.0;
  const double fx = std::floor(x), fy = std::floor(y);
  const int x0 = static_cast<int>(fx), y0 = static_cast<int>(fy);
  const double ax = x - fx, ay = y - fy;
  auto px = [&](int yy, int xx) {
    return (yy >= 0 && yy < h && xx >= 0 && xx < w)
               ? plane[static_cast<std::size_t>(yy) * static_cast<std::size_t>(w) + static_cast<std::size_t>(xx)]
               : 0.0;
  };
  double s = 0.0;
  if ((1.0 - ax) * (1.0 - ay) != 0.0) s += (1.0 - ax) * (1.0 - ay) * px(y0, x0);
  if (ax * (1.0 - ay) != 0.0) s += ax * (1.0 - ay) * px(y0, x0 + 1);
  if ((1.0 - ax) * ay != 0.0) s += (1.0 - ax) * ay * px(y0 + 1, x0);
  if (ax * ay != 0.0) s += ax * ay * px(y0 + 1, x0 + 1);
  return s;
}

} // namespace detail

// For every source cell (i,j), taps the (k,l) plane of c at
// coords(i,j) * scale + (du, dv) for du, dv in [-r, r].
inline CorrelationSlice sample_slices(const CorrelationVolume& c, const PointGrid& coords, int radius,
                                      double scale = 1.0) {
  require(radius >= 1, "slice radius must be at least 1");
  require(coords.height == c.dim(0) && coords.width == c.dim(1),
          "slice coordinates must match the volume's leading dimensions");
  CorrelationSlice s{coords.height, coords.width, radius, {}};
  s.data.resize(static_cast<std::size_t>(coords.height) * static_cast<std::size_t>(coords.width) * s.taps());
  double* out = s.data.data();
  for (int i = 0; i < coords.height; ++i)
    for (int j = 0; j < coords.width; ++j) {
      const Point2 p = coords.at(i, j) * scale;
      const double* plane = c.plane(i, j);
      for (int dv = -radius; dv <= radius; ++dv)
        for (int du = -radius; du <= radius; ++du)
          *out++ = detail::plane_bilinear(plane, c.dim(2), c.dim(3), p.x() + du, p.y() + dv);
    }
  return s;
}

// ---------------------------------------------------------------------------
// Flat binary dumps: 8-byte magic, uint32 rank, uint32 dims[rank], then
// row-major float64 values, all little-endian.

inline constexpr std::string_view kTensorMagic = "BEVLOCT1";

struct Tensor {
  std::vector<std::uint32_t> dims;
  std::vector<double> values;
};

inline void write_tensor(const std::filesystem::path& path, const Tensor& t) {
  std::size_t n = 1;
  for (auto d : t.dims) n *= d;
  require(n == t.values.size(), "tensor dims do not match value count");
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot create " + tmp.string());
    out.write(kTensorMagic.data(), static_cast<std::streamsize>(kTensorMagic.size()));
    const auto rank = static_cast<std::uint32_t>(t.dims.size());
    out.write(reinterpret_cast<const char*>(&rank), sizeof rank);
    out.write(reinterpret_cast<const char*>(t.dims.data()),
              static_cast<std::streamsize>(t.dims.size() * sizeof(std::uint32_t)));
    out.write(reinterpret_cast<const char*>(t.values.data()),
              static_cast<std::streamsize>(t.values.size() * sizeof(double)));
    if (!out) throw IoError("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline Tensor read_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  char magic[8];
  in.read(magic, 8);
  if (!in || std::string_view(magic, 8) != kTensorMagic) throw IoError("bad tensor magic in " + path.string());
  std::uint32_t rank = 0;
  in.read(reinterpret_cast<char*>(&rank), sizeof rank);
  if (!in || rank > 8) throw IoError("bad tensor rank in " + path.string());
  Tensor t;
  t.dims.resize(rank);
  in.read(reinterpret_cast<char*>(t.dims.data()), static_cast<std::streamsize>(rank * sizeof(std::uint32_t)));
  std::size_t n = 1;
  for (auto d : t.dims) n *= d;
  t.values.resize(n);
  in.read(reinterpret_cast<char*>(t.values.data()), static_cast<std::streamsize>(n * sizeof(double)));
  if (!in) throw IoError("truncated tensor data in " + path.string());
  return t;
}

// D x H x W, channel-major.
inline Tensor to_tensor(const FeatureMap& f) {
  Tensor t{{static_cast<std::uint32_t>(f.channels()), static_cast<std::uint32_t>(f.height()),
            static_cast<std::uint32_t>(f.width())},
           {}};
  t.values.reserve(f.raw().size());
  for (int c = 0; c < f.channels(); ++c)
    for (int i = 0; i < f.height(); ++i)
      for (int j = 0; j < f.width(); ++j) t.values.push_back(f.at(c, i, j));
  return t;
}

inline Tensor to_tensor(const CorrelationVolume& c) {
  return {{static_cast<std::uint32_t>(c.dim(0)), static_cast<std::uint32_t>(c.dim(1)),
           static_cast<std::uint32_t>(c.dim(2)), static_cast<std::uint32_t>(c.dim(3))},
          c.raw()};
}

inline CorrelationVolume volume_from_tensor(const Tensor& t) {
  if (t.dims.size() != 4) throw IoError("correlation volume dump must have rank 4");
  CorrelationVolume c(static_cast<int>(t.dims[0]), static_cast<int>(t.dims[1]),
                      static_cast<int>(t.dims[2]), static_cast<int>(t.dims[3]));
  c.raw() = t.values;
  return c;
}

} // namespace bevloc
