#pragma once

// File formats. All binary formats are little-endian.
//
//   LPG1  grid:   "LPG1", u32 kind (0 voxel, 1 triplane), u32 H, W, D, K,
//                 FP32 payload (triplanes: xy, yz, zx planes in order).
//   LPM1  MLP:    "LPM1", u32 layer count, per layer u32 out, u32 in,
//                 FP32 weight (out x in, row-major), FP32 bias (out),
//                 then u8 hidden activation, u8 output activation.
//                 A file may hold several records back to back.
//   LPI1  image:  "LPI1", u32 width, height, channels, FP32 planes.
//   PPM   P6 8-bit RGB.

#include <filesystem>
#include <string>
#include <vector>

#include "lightplane/hash3d.hpp"
#include "lightplane/rays.hpp"
#include "lightplane/tinymlp.hpp"

namespace lightplane::io {

// Planar float image: channel c, row y, column x at data[(c * height + y) * width + x].
struct Image {
  int width = 0, height = 0, channels = 0;
  std::vector<float> data;

  Image() = default;
  Image(int w, int h, int c) : width(w), height(h), channels(c), data(std::size_t(w) * h * c, 0.f) {}

  float& at(int c, int y, int x) { return data[(std::size_t(c) * height + y) * width + x]; }
  float at(int c, int y, int x) const { return data[(std::size_t(c) * height + y) * width + x]; }
};

// Converts per-ray features (ray-major, rays in row-major pixel order) to a planar image.
template <class Real>
Image image_from_rays(std::span<const Real> features, int width, int height, int channels);
// Inverse of image_from_rays.
std::vector<float> rays_from_image(const Image& image);

std::string encode_grid(const HashStructure<float>& grid);
HashStructure<float> decode_grid(const std::string& bytes);

std::string encode_mlps(const std::vector<MlpParams<float>>& mlps);
std::vector<MlpParams<float>> decode_mlps(const std::string& bytes);

std::string encode_lpi(const Image& image);
Image decode_lpi(const std::string& bytes);

// 3-channel image, values clamped to [0, 1] and rounded to 8 bits.
std::string encode_ppm(const Image& image);

Camera camera_from_json(const std::string& text);
std::string camera_to_json(const Camera& camera);

std::string read_file(const std::filesystem::path& path);
// Writes to a temporary sibling and renames it over path on success.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);

}  // namespace lightplane::io
