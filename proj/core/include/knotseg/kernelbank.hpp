#pragma once

// Discriminative kernel generation: training-location sampling, positive
// patch clustering, weighted ridge kernels, and the POSNEG split.

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "knotseg/imagecore.hpp"

namespace knotseg {

struct TrainSample {
  int image = 0;
  int x = 0;
  int y = 0;
  int label = kPositive;  // +1 / -1
  double weight = 1.0;

  friend bool operator==(const TrainSample&, const TrainSample&) = default;
};

struct Patch {
  int side = 0;
  std::vector<double> values;  // side*side, row-major
  std::string channel;
};

struct Kernel {
  int id = 0;
  int side = 0;
  std::vector<double> weights;  // side*side, row-major, correlation orientation
  double bias = 0.0;
  std::string channel;
  double scale = 1.0;  // pyramid level the kernel is applied at

  bool all_zero() const;
  friend bool operator==(const Kernel&, const Kernel&) = default;
};

struct ClusterSet {
  int k = 0;
  int requested_k = 0;            // differs from k when fewer patches than clusters
  std::vector<int> assignment;    // one entry per input patch
  std::vector<std::vector<double>> centroids;
  std::vector<double> objective;  // within-cluster SSE after each Lloyd step
  int repairs = 0;                // empty clusters refilled by splitting the largest

  std::vector<int> members(int cluster) const;
};

/// Per-image view used when sampling across a dataset.
struct SampleSource {
  const LabelMap* labels = nullptr;
  const Mask* mask = nullptr;                         // optional
  const std::vector<std::uint8_t>* restrict = nullptr;  // optional pixel subset
};

/// Uniform draw without replacement of n_pos positive and n_neg negative
/// locations among eligible pixels (inside mask and restrict, not IGNORE, at
/// least `margin` pixels from every border). Positives come first.
std::vector<TrainSample> sample_locations(std::span<const SampleSource> images, std::size_t n_pos,
                                          std::size_t n_neg, int margin, std::uint64_t seed);
std::vector<TrainSample> sample_locations(const LabelMap& labels, const Mask& mask, std::size_t n_pos,
                                          std::size_t n_neg, const std::vector<std::uint8_t>* restrict,
                                          int margin, std::uint64_t seed);

/// side x side patch centred on (x, y) with reflect addressing at borders.
Patch extract_patch(const ImagePlane& plane, int x, int y, int side, std::string channel = {});
/// Subtracts the patch mean in place.
void center_patch(Patch& patch);

/// k-means (k-means++ seeding, Lloyd iterations) on the patch vectors as given.
ClusterSet cluster_positives(std::span<const Patch> patches, int k, std::uint64_t seed, int max_iterations = 50);

enum class LambdaMode : std::uint8_t {
  Absolute = 0,
  TraceNormalized = 1,  // lambda * trace(X^T W X) / dim, X centred
};

struct RidgeReport {
  double lambda_used = 0.0;
  bool singular = false;  // min-norm pseudo-solution was used
};

/// Weighted ridge: minimise sum_i w_i (y_i - k.x_i - b)^2 + lambda |k|^2 with
/// y = +1 for positives and -1 for negatives. Weights list positives first.
Kernel learn_kernel(std::span<const Patch> positives, std::span<const Patch> negatives,
                    std::span<const double> weights, double lambda, LambdaMode mode = LambdaMode::Absolute,
                    RidgeReport* report = nullptr);

/// Random access to training patches for a set of channel stacks, with
/// precomputed pyramid levels for every requested scale.
class PatchSource {
 public:
  PatchSource(std::vector<const ChannelStack*> stacks, const std::vector<double>& scales);

  const ImagePlane& plane(int image, const std::string& channel, double scale) const;
  /// Patch around the sample, sampled at the pyramid level for `scale`.
  Patch extract(const TrainSample& sample, const std::string& channel, double scale, int side) const;
  std::size_t image_count() const { return stacks_.size(); }
  const ChannelStack& stack(int image) const { return *stacks_.at(image); }

 private:
  std::vector<const ChannelStack*> stacks_;
  std::vector<std::map<std::pair<std::string, double>, ImagePlane>> levels_;
};

struct BankConfig {
  int bank_size = 30;
  std::vector<int> filter_sizes{5, 7, 9, 11, 15};
  double lambda = 1e-3;
  LambdaMode lambda_mode = LambdaMode::TraceNormalized;
  std::vector<std::string> channels;  // kernel source channels
  std::vector<double> scales{1.0};
  std::size_t max_negatives = 2000;
};

struct BankResult {
  std::vector<Kernel> kernels;
  std::vector<std::string> notes;  // skipped kernels, singular solves, subsampling
};

/// Builds cfg.bank_size kernels. Kernel i draws (filter size, channel, scale,
/// positive cluster) from a seed derived from (seed, i) and fits a ridge
/// kernel of that cluster's positives against all negatives, weighted by
/// |residual|. clusters.assignment is indexed by the order of positive
/// samples in `samples`.
BankResult generate_bank(const PatchSource& source, std::span<const TrainSample> samples,
                         std::span<const double> residuals, const ClusterSet& clusters, const BankConfig& cfg,
                         std::uint64_t seed, int first_id = 0);

/// Appearance clusters of the positive samples: centred patches of one
/// reference channel at scale 1.
ClusterSet cluster_training_positives(const PatchSource& source, std::span<const TrainSample> samples,
                                      const std::string& channel, int side, int k, std::uint64_t seed);

/// Positive part and negated negative part of a response.
std::pair<ImagePlane, ImagePlane> posneg(const ImagePlane& response);

/// Same-size correlation (no kernel flip) with reflect padding, plus bias.
ImagePlane convolve(const ImagePlane& channel, const Kernel& kernel);

}  // namespace knotseg
