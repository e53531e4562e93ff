#pragma once

// Window-max pooling, SLIC superpixels, and pooling over eroded/dilated
// superpixel regions.

#include <cstdint>
#include <string>
#include <vector>

#include "knotseg/imagecore.hpp"

namespace knotseg {

enum class PoolKind : std::uint8_t {
  None = 0,
  WindowMax = 1,
  Superpixel = 2,          // op over one region variant of the pixel's superpixel
  SuperpixelContrast = 3,  // combiner(op over eroded region, op over dilated region)
};

enum class RegionOp : std::uint8_t { Max = 0, Mean = 1 };
enum class RegionVariant : std::uint8_t { Whole = 0, Eroded = 1, Dilated = 2 };
enum class Combiner : std::uint8_t { Difference = 0, AbsDifference = 1, RatioSafe = 2 };

struct PoolSpec {
  PoolKind kind = PoolKind::None;
  int radius = 0;  // WindowMax
  RegionOp op = RegionOp::Max;
  RegionVariant variant = RegionVariant::Whole;
  Combiner combiner = Combiner::Difference;

  static PoolSpec none() { return {}; }
  static PoolSpec window_max(int r) { return {PoolKind::WindowMax, r}; }
  static PoolSpec superpixel(RegionOp op, RegionVariant v) { return {PoolKind::Superpixel, 0, op, v}; }
  static PoolSpec contrast(RegionOp op, Combiner c) {
    return {PoolKind::SuperpixelContrast, 0, op, RegionVariant::Whole, c};
  }

  bool uses_superpixels() const { return kind == PoolKind::Superpixel || kind == PoolKind::SuperpixelContrast; }
  std::string describe() const;

  friend bool operator==(const PoolSpec&, const PoolSpec&) = default;
  friend auto operator<=>(const PoolSpec&, const PoolSpec&) = default;
};

struct SuperpixelMap {
  int width = 0;
  int height = 0;
  std::vector<std::int32_t> labels;  // 0..count-1
  int count = 0;
  int region_size = 0;   // S
  double compactness = 0;  // m

  std::int32_t operator()(int x, int y) const { return labels[static_cast<std::size_t>(y) * width + x]; }
};

struct RegionTable {
  SuperpixelMap superpixels;
  int erosion = 0;
  int dilation = 0;
  std::vector<std::vector<std::int32_t>> original;  // pixel indices per superpixel
  std::vector<std::vector<std::int32_t>> eroded;
  std::vector<std::vector<std::int32_t>> dilated;
  std::vector<std::uint8_t> eroded_empty;  // flag per superpixel

  const std::vector<std::int32_t>& region(int sp, RegionVariant v) const;
};

/// out(x,y) = max over the (2r+1)^2 window clamped to the image, computed
/// with monotonic-deque sliding maxima along rows then columns.
ImagePlane max_pool(const ImagePlane& plane, int radius);

/// Grayscale SLIC with distance sqrt(d_I^2 + (m/S)^2 d_xy^2), `iterations`
/// assignment/update rounds and a final connectivity pass.
SuperpixelMap slic(const ImagePlane& image, int region_size, double compactness, int iterations = 10);

/// Square-element erosion by e and dilation by d of every superpixel mask.
RegionTable region_variants(const SuperpixelMap& spmap, int erosion, int dilation);

/// out(x,y) = op over the chosen region of the superpixel containing (x,y).
/// An empty eroded region falls back to the whole superpixel.
ImagePlane superpixel_pool(const ImagePlane& plane, const RegionTable& regions, RegionOp op, RegionVariant variant);

inline constexpr double kRatioEpsilon = 1e-6;
ImagePlane superpixel_feature(const ImagePlane& a, const ImagePlane& b, Combiner combiner);

/// Applies any PoolSpec; regions are required for the superpixel kinds.
ImagePlane apply_pool(const ImagePlane& plane, const PoolSpec& spec, const RegionTable* regions);

}  // namespace knotseg
