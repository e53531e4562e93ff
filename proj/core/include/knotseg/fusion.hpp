#pragma once

// Snowflake neighbourhood descriptors and the random-forest fusion classifier.

#include <array>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "knotseg/imagecore.hpp"

namespace knotseg {

struct SnowflakeSpec {
  std::vector<int> half_sides{2, 5};
  bool include_center = true;

  void validate() const;
  std::size_t points_per_channel() const { return (include_center ? 1 : 0) + 8 * half_sides.size(); }
  /// Sampling offsets in serialization order: centre, then for each square
  /// the corners and side midpoints clockwise from the top-left corner.
  std::vector<std::pair<int, int>> offsets() const;

  friend bool operator==(const SnowflakeSpec&, const SnowflakeSpec&) = default;
};

std::size_t descriptor_length(std::size_t channels, const SnowflakeSpec& spec);

/// Writes the descriptor of (x, y) into out (channel-major). Sample
/// positions outside the image are clamped to the border.
void snowflake_descriptor(std::span<const ImagePlane* const> planes, int x, int y, const SnowflakeSpec& spec,
                          double* out);
std::vector<double> snowflake_descriptor(const ChannelStack& stack, int x, int y, const SnowflakeSpec& spec);

/// Slices clamp(z - D), z, clamp(z + D) of a stack with `depth` slices.
std::array<int, 3> fake3d_slices(int z, int d, int depth);
/// Concatenated snowflake descriptors of the three fake3d_slices.
std::vector<double> fake3d_descriptor(std::span<const ChannelStack> slices, int z, int d, int x, int y,
                                      const SnowflakeSpec& spec);

/// Row-major descriptor matrix.
struct DescriptorSet {
  std::size_t dim = 0;
  std::vector<double> values;

  std::size_t rows() const { return dim == 0 ? 0 : values.size() / dim; }
  const double* row(std::size_t i) const { return values.data() + i * dim; }
  void append(std::span<const double> d);
};

struct ForestConfig {
  int n_trees = 100;
  int min_leaf = 5;
  int max_depth = 0;  // 0: unlimited
  int m_try = 0;      // 0: ceil(sqrt(dim))
  bool bootstrap = true;
  std::size_t max_per_class = 200000;
  std::uint64_t seed = 0;

  friend bool operator==(const ForestConfig&, const ForestConfig&) = default;
};

struct ForestNode {
  int feature = -1;  // -1: leaf
  double threshold = 0.0;  // value < threshold goes left
  int left = -1;
  int right = -1;
  std::vector<double> distribution;  // leaves: class frequencies summing to 1

  friend bool operator==(const ForestNode&, const ForestNode&) = default;
};

struct ForestTree {
  std::vector<ForestNode> nodes;
  friend bool operator==(const ForestTree&, const ForestTree&) = default;
};

struct ForestModel {
  std::size_t dim = 0;
  std::vector<std::int32_t> classes;  // sorted; distribution index -> label
  std::vector<ForestTree> trees;
  ForestConfig config;

  friend bool operator==(const ForestModel&, const ForestModel&) = default;
};

/// Gini-split classification forest. Tree i draws from derive_seed(seed, i).
ForestModel train_forest(const DescriptorSet& descriptors, std::span<const std::int32_t> labels,
                         const ForestConfig& cfg);

/// Mean leaf distribution across trees.
std::vector<double> predict_forest(const ForestModel& model, std::span<const double> descriptor);
/// Label with the highest probability; ties go to the smaller label.
std::int32_t predict_label(const ForestModel& model, std::span<const double> descriptor);

/// At most max_per_class indices per label, uniformly without replacement,
/// returned in increasing order.
std::vector<std::size_t> stratified_subsample(std::span<const std::int32_t> labels, std::size_t max_per_class,
                                              std::uint64_t seed);

}  // namespace knotseg
