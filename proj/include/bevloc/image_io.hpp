#pragma once

// 8-bit lossless raster I/O: PNG (gray, gray+alpha, RGB, RGBA; alpha is
// dropped) and binary netpbm (P5 / P6). Rasters convert to unit-interval
// doubles on load and round to the nearest 8-bit level on save.

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "bevloc/error.hpp"
#include "bevloc/raster.hpp"

namespace bevloc {

namespace detail {

inline std::string lower_extension(const std::filesystem::path& p) {
  std::string ext = p.extension().string();
  for (char& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return ext;
}

inline unsigned char to_byte(double v) {
  return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

inline std::vector<unsigned char> to_bytes(const ImageBuffer& img) {
  std::vector<unsigned char> out(img.data().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = to_byte(img.data()[i]);
  return out;
}

inline ImageBuffer from_bytes(int h, int w, int ch, const std::vector<unsigned char>& bytes) {
  std::vector<double> d(bytes.size());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = bytes[i] / 255.0;
  return ImageBuffer(h, w, ch, std::move(d));
}

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline ImageBuffer read_png(const std::filesystem::path& path) {
  FilePtr fp(std::fopen(path.string().c_str(), "rb"));
  if (!fp) throw IoError("cannot open " + path.string());
  unsigned char sig[8];
  if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0)
    throw IoError(path.string() + " is not a PNG file");

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("png_create_info_struct failed");
  }
  std::vector<unsigned char> bytes;
  int h = 0, w = 0, ch = 0;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("corrupt PNG " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  const png_byte color = png_get_color_type(png, info);
  const png_byte depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);

  h = static_cast<int>(png_get_image_height(png, info));
  w = static_cast<int>(png_get_image_width(png, info));
  ch = static_cast<int>(png_get_channels(png, info));
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  bytes.resize(rowbytes * static_cast<std::size_t>(h));
  std::vector<png_bytep> rows(static_cast<std::size_t>(h));
  for (int y = 0; y < h; ++y) rows[static_cast<std::size_t>(y)] = bytes.data() + rowbytes * static_cast<std::size_t>(y);
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  if (ch != 1 && ch != 3) throw IoError("unsupported PNG channel layout in " + path.string());
  return from_bytes(h, w, ch, bytes);
}

inline void write_png(const std::filesystem::path& path, const ImageBuffer& img) {
  if (img.channels() != 1 && img.channels() != 3)
    throw ContractError("PNG output supports 1 or 3 channels");
  FilePtr fp(std::fopen(path.string().c_str(), "wb"));
  if (!fp) throw IoError("cannot create " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("png_create_info_struct failed");
  }
  std::vector<unsigned char> bytes = to_bytes(img);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("failed writing PNG " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width()),
               static_cast<png_uint_32>(img.height()), 8,
               img.channels() == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const std::size_t rowbytes =
      static_cast<std::size_t>(img.width()) * static_cast<std::size_t>(img.channels());
  for (int y = 0; y < img.height(); ++y)
    png_write_row(png, bytes.data() + rowbytes * static_cast<std::size_t>(y));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

inline ImageBuffer read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string magic;
  in >> magic;
  if (magic != "P5" && magic != "P6") throw IoError(path.string() + " is not a binary PGM/PPM");
  auto next_int = [&]() {
    int v = 0;
    while (in >> std::ws && in.peek() == '#') {
      std::string comment;
      std::getline(in, comment);
    }
    if (!(in >> v)) throw IoError("malformed netpbm header in " + path.string());
    return v;
  };
  const int w = next_int(), h = next_int(), maxval = next_int();
  if (maxval != 255 || w <= 0 || h <= 0) throw IoError("only 8-bit netpbm is supported");
  in.get();
  const int ch = magic == "P5" ? 1 : 3;
  std::vector<unsigned char> bytes(static_cast<std::size_t>(w) * static_cast<std::size_t>(h) *
                                   static_cast<std::size_t>(ch));
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size()))
    throw IoError("truncated netpbm data in " + path.string());
  return from_bytes(h, w, ch, bytes);
}

inline void write_pnm(const std::filesystem::path& path, const ImageBuffer& img) {
  if (img.channels() != 1 && img.channels() != 3)
    throw ContractError("netpbm output supports 1 or 3 channels");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot create " + path.string());
  out << (img.channels() == 1 ? "P5" : "P6") << '\n'
      << img.width() << ' ' << img.height() << "\n255\n";
  const auto bytes = to_bytes(img);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

} // namespace detail

inline ImageBuffer read_image(const std::filesystem::path& path) {
  const std::string ext = detail::lower_extension(path);
  if (ext == ".png") return detail::read_png(path);
  if (ext == ".pgm" || ext == ".ppm" || ext == ".pnm") return detail::read_pnm(path);
  throw IoError("unsupported raster extension '" + ext + "' (use .png, .pgm or .ppm)");
}

// Writes through a temporary sibling file and renames it into place.
inline void write_image(const std::filesystem::path& path, const ImageBuffer& img) {
  const std::string ext = detail::lower_extension(path);
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  if (ext == ".png") {
    detail::write_png(tmp, img);
  } else if (ext == ".pgm" || ext == ".ppm" || ext == ".pnm") {
    detail::write_pnm(tmp, img);
  } else {
    throw IoError("unsupported raster extension '" + ext + "' (use .png, .pgm or .ppm)");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

// 8-bit quantization, the exact round trip of write_image followed by read_image.
inline ImageBuffer quantize8(const ImageBuffer& img) {
  return detail::from_bytes(img.height(), img.width(), img.channels(), detail::to_bytes(img));
}

} // namespace bevloc
