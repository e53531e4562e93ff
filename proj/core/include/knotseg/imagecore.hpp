#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "knotseg/common.hpp"

namespace knotseg {

/// Dense single-channel raster, row-major, x = column, y = row.
class ImagePlane {
 public:
  ImagePlane() = default;
  ImagePlane(int width, int height, double fill = 0.0);
  ImagePlane(int width, int height, std::vector<double> values);

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  double& operator()(int x, int y) { return values_[index(x, y)]; }
  double operator()(int x, int y) const { return values_[index(x, y)]; }
  std::size_t index(int x, int y) const {
    return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(x);
  }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  std::span<double> row(int y) { return std::span<double>(values_).subspan(index(0, y), width_); }
  std::span<const double> row(int y) const {
    return std::span<const double>(values_).subspan(index(0, y), width_);
  }

  bool same_shape(const ImagePlane& other) const {
    return width_ == other.width_ && height_ == other.height_;
  }
  /// Throws with the offending location if any value is NaN or infinite.
  void require_finite(const std::string& what) const;

  friend bool operator==(const ImagePlane&, const ImagePlane&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<double> values_;
};

enum class ChannelKind : std::uint8_t { Image = 0, Feature = 1, Score = 2, External = 3 };

const char* to_string(ChannelKind kind);

struct Channel {
  std::string name;
  std::shared_ptr<const ImagePlane> plane;
  ChannelKind kind = ChannelKind::Image;
};

/// Named, pixel-aligned set of planes. Planes are shared immutably, so
/// copying a stack and appending channels never touches pixel data.
class ChannelStack {
 public:
  ChannelStack() = default;

  void add(std::string name, ImagePlane plane, ChannelKind kind);
  void add(std::string name, std::shared_ptr<const ImagePlane> plane, ChannelKind kind);
  /// Appends every channel of other (names must stay unique).
  void append(const ChannelStack& other);

  bool contains(const std::string& name) const;
  const Channel& channel(const std::string& name) const;
  const ImagePlane& plane(const std::string& name) const { return *channel(name).plane; }
  const std::vector<Channel>& channels() const { return channels_; }
  std::size_t size() const { return channels_.size(); }
  bool empty() const { return channels_.empty(); }
  int width() const { return width_; }
  int height() const { return height_; }

  std::vector<std::string> names() const;
  std::vector<std::string> names_of_kind(ChannelKind kind) const;
  /// Sub-stack holding the named channels in the given order.
  ChannelStack select(const std::vector<std::string>& names) const;

 private:
  std::vector<Channel> channels_;
  int width_ = 0;
  int height_ = 0;
};

inline constexpr std::int32_t kIgnoreLabel = std::numeric_limits<std::int32_t>::min();
inline constexpr std::int32_t kPositive = 1;
inline constexpr std::int32_t kNegative = -1;

struct LabelMap {
  int width = 0;
  int height = 0;
  std::vector<std::int32_t> labels;

  LabelMap() = default;
  LabelMap(int w, int h, std::int32_t fill = kNegative)
      : width(w), height(h), labels(static_cast<std::size_t>(w) * h, fill) {}

  std::int32_t& operator()(int x, int y) { return labels[static_cast<std::size_t>(y) * width + x]; }
  std::int32_t operator()(int x, int y) const { return labels[static_cast<std::size_t>(y) * width + x]; }
  std::size_t size() const { return labels.size(); }

  friend bool operator==(const LabelMap&, const LabelMap&) = default;
};

/// true (1) = usable pixel.
struct Mask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> usable;

  Mask() = default;
  Mask(int w, int h, bool fill = true)
      : width(w), height(h), usable(static_cast<std::size_t>(w) * h, fill ? 1 : 0) {}

  bool operator()(int x, int y) const { return usable[static_cast<std::size_t>(y) * width + x] != 0; }
  std::size_t size() const { return usable.size(); }

  friend bool operator==(const Mask&, const Mask&) = default;
};

struct ScoreMap {
  ImagePlane plane;
  bool normalized = false;
};

enum class Axis : std::uint8_t { X = 0, Y = 1, Z = 2 };

/// Stack of equally sized slices. axes = (column axis, row axis, slice axis).
struct Volume {
  std::vector<ImagePlane> slices;
  std::array<Axis, 3> axes{Axis::X, Axis::Y, Axis::Z};

  int width() const { return slices.empty() ? 0 : slices.front().width(); }
  int height() const { return slices.empty() ? 0 : slices.front().height(); }
  int depth() const { return static_cast<int>(slices.size()); }
  void validate() const;
};

enum class ReslicePlane : std::uint8_t { XZ, YZ };

// --- score normalization --------------------------------------------------

/// 2 / (1 + exp(-2 s)) - 1, i.e. tanh(s). Maps raw boosting scores into the
/// confidence range [-1, 1] (saturates to +-1 for |s| beyond ~19 in double).
double normalize_score(double raw);
ScoreMap normalize_scores(const ScoreMap& raw);

// --- filtering ------------------------------------------------------------

/// Mirror index without edge repetition (dcb|abcd|cba), valid for any offset.
inline int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

/// Sampled, truncated (radius ceil(3 sigma)), unit-sum Gaussian.
std::vector<double> gaussian_kernel_1d(double sigma);
/// Derivative-of-Gaussian taps of the given order (1 or 2), zero-sum.
std::vector<double> gaussian_derivative_kernel_1d(double sigma, int order);
/// Separable correlation with reflect padding; kernels have odd length.
ImagePlane separable_filter(const ImagePlane& in, std::span<const double> kx, std::span<const double> ky);
ImagePlane gaussian_blur(const ImagePlane& in, double sigma);

enum class FeatureKind : std::uint8_t {
  Gaussian = 0,
  GradientMagnitude = 1,
  Laplacian = 2,
  StructureTensorEigenvalue = 3,
  HessianEigenvalue = 4,
};

const char* to_string(FeatureKind kind);
FeatureKind feature_kind_from_string(const std::string& s);

struct FeatureGenerator {
  FeatureKind kind;
  double sigma;

  friend bool operator==(const FeatureGenerator&, const FeatureGenerator&) = default;
};

struct FeatureSpec {
  std::vector<FeatureGenerator> generators;

  static std::vector<double> default_sigmas() { return {0.7, 1.0, 1.6, 3.5, 5.0, 10.0}; }
  /// Cartesian product of kinds and sigmas.
  static FeatureSpec grid(const std::vector<FeatureKind>& kinds, const std::vector<double>& sigmas);

  friend bool operator==(const FeatureSpec&, const FeatureSpec&) = default;
};

std::string feature_channel_name(const FeatureGenerator& g);

/// One Feature-kind channel per generator, in spec order. Eigenvalue
/// generators emit the larger eigenvalue.
ChannelStack compute_feature_channels(const ImagePlane& image, const FeatureSpec& spec);

// --- pyramids -------------------------------------------------------------

/// Output size along one axis for a given scale: ceil(dim * scale).
int scaled_extent(int dim, double scale);
/// Anti-aliased downscale: Gaussian blur (sigma = 0.5 / scale) then
/// subsample at floor(k / scale). scale == 1 returns the input unchanged.
ImagePlane downscale(const ImagePlane& image, double scale);
/// Nearest-neighbour upsample of a plane produced by downscale(..., scale).
ImagePlane upsample_nearest(const ImagePlane& coarse, int width, int height, double scale);
std::vector<ImagePlane> build_pyramid(const ImagePlane& image, const std::vector<double>& scales);

// --- volumes --------------------------------------------------------------

/// XZ: slice y holds voxel (x, y, z) at (x, z). YZ: slice x holds it at (z, y).
/// Both are involutions.
Volume reslice(const Volume& volume, ReslicePlane plane);

}  // namespace knotseg
