#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "knotseg/imagecore.hpp"

namespace knotseg {

/// Reads an 8/16-bit PNG or TIFF. Colour input is converted to luminance;
/// intensities are scaled to [0, 1] by the type's full range.
ImagePlane read_image(const std::filesystem::path& path);

/// Writes a [0, 1] plane as 16-bit grayscale PNG (values clamped).
void write_image_png16(const std::filesystem::path& path, const ImagePlane& plane);

/// Raw integer pixel values of an 8/16-bit grayscale image.
struct RawLabels {
  int width = 0;
  int height = 0;
  std::vector<std::int32_t> values;
};
RawLabels read_raw_labels(const std::filesystem::path& path);

/// Binary ground truth: value == ignore -> IGNORE, 0 -> -1, anything else -> +1.
LabelMap binary_labels_from_raw(const RawLabels& raw, std::optional<std::int32_t> ignore_value);
/// Multi-class ground truth: value is the class index; ignore -> IGNORE.
LabelMap class_labels_from_raw(const RawLabels& raw, int class_count, std::optional<std::int32_t> ignore_value);
Mask read_mask(const std::filesystem::path& path);

/// Writes labels as an 8-bit PNG: +1/foreground -> 255, IGNORE -> ignore_value, others 0
/// (binary) or the class index (multi-class).
void write_labels_png(const std::filesystem::path& path, const LabelMap& labels, bool binary,
                      std::uint8_t ignore_value = 128);

// Float plane container: 16-byte header ("KSEG", u32 version, u32 width,
// u32 height, all little-endian) followed by width*height little-endian
// float32 values in row-major order.
inline constexpr std::uint32_t kFloatPlaneVersion = 1;

std::vector<std::uint8_t> encode_float_plane(const ImagePlane& plane);
ImagePlane decode_float_plane(std::span<const std::uint8_t> bytes);
void write_float_plane(const std::filesystem::path& path, const ImagePlane& plane);
ImagePlane read_float_plane(const std::filesystem::path& path);

/// 8-bit visualization of a plane mapped linearly from [lo, hi] to [0, 255].
void write_visualization_png(const std::filesystem::path& path, const ImagePlane& plane, double lo, double hi);

/// 16-bit PNG whose pixel values are the given integer labels (must fit u16).
void write_label_index_png(const std::filesystem::path& path, int width, int height,
                           std::span<const std::int32_t> labels);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace knotseg
