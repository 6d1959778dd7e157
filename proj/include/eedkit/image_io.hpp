#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "eedkit/image.hpp"

namespace eedkit {

using Bytes = std::vector<std::uint8_t>;

Bytes read_file(const std::filesystem::path& path);

/// Writes through a temporary sibling file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

/// Decodes PNG or JPEG (detected by signature) to samples in [0,1]. Gray
/// images give one channel, everything else three (alpha is dropped).
Image decode_image(std::span<const std::uint8_t> bytes);
Image load_image(const std::filesystem::path& path);

/// 8-bit PNG, one channel (gray) or three (RGB). Samples are clamped to
/// [0,1] and quantized with round-half-to-even.
Bytes encode_png(const Image& img);
void save_png(const std::filesystem::path& path, const Image& img);

/// Single-channel 8-bit raster, used for label masks.
struct GrayRaster {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> pixels;
};

/// Decodes an 8-bit single-channel PNG without conversion. Throws IoError
/// for color images.
GrayRaster decode_gray_png(std::span<const std::uint8_t> bytes);
Bytes encode_gray_png(const GrayRaster& raster);

/// Quantization used by the PNG encoder.
std::uint8_t quantize_sample(double v);

}  // namespace eedkit
