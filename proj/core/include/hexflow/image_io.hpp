// SPDX-License-Identifier: Apache-2.0
//
// Pixel containers and the on-disk raster formats: 8-bit PNG images,
// raw float32 depth maps (8-byte width/height header), and two-channel
// float32 optical flow files (Middlebury .flo layout, "PIEH" magic).
// All binary formats are little-endian.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace hexflow {

struct ImageU8 {
  int width = 0, height = 0, channels = 0;
  std::vector<uint8_t> data;  // row-major, channel-interleaved
};

struct ImageF {
  int width = 0, height = 0, channels = 0;
  std::vector<float> data;

  float at(int x, int y, int c) const {
    return data[(static_cast<size_t>(y) * width + x) * channels + c];
  }
};

ImageF to_float(const ImageU8& img);  // value / 255
ImageU8 to_u8(const ImageF& img);     // clamp to [0,1], round

// 8-bit RGB PNG. Grayscale/palette/alpha inputs are expanded/stripped to
// RGB on read. Throws DataError on IO or format problems.
void write_png_rgb8(const std::string& path, const ImageU8& img);
ImageU8 read_png_rgb8(const std::string& path);

// Depth: int32 width, int32 height, then width*height float32 (z-depth,
// 0 marks invalid pixels).
void write_depth_bin(const std::string& path, int width, int height,
                     const std::vector<float>& depth);
std::vector<float> read_depth_bin(const std::string& path, int* width,
                                  int* height);

// Flow: float32 magic 202021.25, int32 width, int32 height, then
// interleaved (u, v) float32 pairs.
void write_flo(const std::string& path, int width, int height,
               const std::vector<float>& uv);
std::vector<float> read_flo(const std::string& path, int* width, int* height);

}  // namespace hexflow
