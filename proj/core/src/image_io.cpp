// SPDX-License-Identifier: Apache-2.0
#include "hexflow/image_io.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>

#include "hexflow/common.hpp"

namespace hexflow {

ImageF to_float(const ImageU8& img) {
  ImageF out;
  out.width = img.width;
  out.height = img.height;
  out.channels = img.channels;
  out.data.resize(img.data.size());
  for (size_t i = 0; i < img.data.size(); ++i) {
    out.data[i] = static_cast<float>(img.data[i]) / 255.0f;
  }
  return out;
}

ImageU8 to_u8(const ImageF& img) {
  ImageU8 out;
  out.width = img.width;
  out.height = img.height;
  out.channels = img.channels;
  out.data.resize(img.data.size());
  for (size_t i = 0; i < img.data.size(); ++i) {
    float v = img.data[i];
    v = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
    out.data[i] = static_cast<uint8_t>(std::lround(v * 255.0f));
  }
  return out;
}

namespace {

struct FileCloser {
  void operator()(FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

}  // namespace

void write_png_rgb8(const std::string& path, const ImageU8& img) {
  if (img.channels != 3) throw DataError("write_png_rgb8: need 3 channels");
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw DataError("write_png_rgb8: cannot open " + path);
  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DataError("write_png_rgb8: libpng failure for " + path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, img.width, img.height, 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < img.height; ++y) {
    png_write_row(png, const_cast<png_bytep>(
                           img.data.data() + static_cast<size_t>(y) * img.width * 3));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

ImageU8 read_png_rgb8(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw DataError("read_png_rgb8: cannot open " + path);
  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("read_png_rgb8: libpng failure for " + path);
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  png_set_expand(png);
  if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
  const int color = png_get_color_type(png, info);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) {
    png_set_gray_to_rgb(png);
  }
  png_set_strip_alpha(png);
  png_read_update_info(png, info);

  ImageU8 img;
  img.width = static_cast<int>(png_get_image_width(png, info));
  img.height = static_cast<int>(png_get_image_height(png, info));
  img.channels = 3;
  if (png_get_rowbytes(png, info) != static_cast<size_t>(img.width) * 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("read_png_rgb8: unexpected row size in " + path);
  }
  img.data.resize(static_cast<size_t>(img.width) * img.height * 3);
  for (int y = 0; y < img.height; ++y) {
    png_read_row(png, img.data.data() + static_cast<size_t>(y) * img.width * 3,
                 nullptr);
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

void write_depth_bin(const std::string& path, int width, int height,
                     const std::vector<float>& depth) {
  if (depth.size() != static_cast<size_t>(width) * height) {
    throw DataError("write_depth_bin: size mismatch for " + path);
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("write_depth_bin: cannot open " + path);
  const int32_t wh[2] = {width, height};
  os.write(reinterpret_cast<const char*>(wh), 8);
  os.write(reinterpret_cast<const char*>(depth.data()), 4 * depth.size());
  if (!os) throw DataError("write_depth_bin: write failed for " + path);
}

std::vector<float> read_depth_bin(const std::string& path, int* width,
                                  int* height) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("read_depth_bin: cannot open " + path);
  int32_t wh[2];
  is.read(reinterpret_cast<char*>(wh), 8);
  if (!is || wh[0] <= 0 || wh[1] <= 0 || wh[0] > 1 << 20 || wh[1] > 1 << 20) {
    throw DataError("read_depth_bin: bad header in " + path);
  }
  std::vector<float> depth(static_cast<size_t>(wh[0]) * wh[1]);
  is.read(reinterpret_cast<char*>(depth.data()), 4 * depth.size());
  if (!is) throw DataError("read_depth_bin: truncated data in " + path);
  *width = wh[0];
  *height = wh[1];
  return depth;
}

namespace {
constexpr float kFloMagic = 202021.25f;  // "PIEH" as float
}

void write_flo(const std::string& path, int width, int height,
               const std::vector<float>& uv) {
  if (uv.size() != static_cast<size_t>(width) * height * 2) {
    throw DataError("write_flo: size mismatch for " + path);
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("write_flo: cannot open " + path);
  os.write(reinterpret_cast<const char*>(&kFloMagic), 4);
  const int32_t wh[2] = {width, height};
  os.write(reinterpret_cast<const char*>(wh), 8);
  os.write(reinterpret_cast<const char*>(uv.data()), 4 * uv.size());
  if (!os) throw DataError("write_flo: write failed for " + path);
}

std::vector<float> read_flo(const std::string& path, int* width, int* height) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("read_flo: cannot open " + path);
  float magic = 0;
  is.read(reinterpret_cast<char*>(&magic), 4);
  if (!is || magic != kFloMagic) {
    throw DataError("read_flo: bad magic in " + path);
  }
  int32_t wh[2];
  is.read(reinterpret_cast<char*>(wh), 8);
  if (!is || wh[0] <= 0 || wh[1] <= 0 || wh[0] > 1 << 20 || wh[1] > 1 << 20) {
    throw DataError("read_flo: bad header in " + path);
  }
  std::vector<float> uv(static_cast<size_t>(wh[0]) * wh[1] * 2);
  is.read(reinterpret_cast<char*>(uv.data()), 4 * uv.size());
  if (!is) throw DataError("read_flo: truncated data in " + path);
  *width = wh[0];
  *height = wh[1];
  return uv;
}

}  // namespace hexflow
