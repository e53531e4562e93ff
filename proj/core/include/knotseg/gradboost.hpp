#pragma once

// GradientBoost with regression-tree weak learners whose node tests read
// (kernel, POSNEG part, pooling) response planes at a pixel.

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "knotseg/imagecore.hpp"
#include "knotseg/kernelbank.hpp"
#include "knotseg/pooling.hpp"

namespace knotseg {

enum class ResponsePart : std::uint8_t { Raw = 0, Pos = 1, Neg = 2 };
const char* to_string(ResponsePart part);

struct NodeTest {
  std::string channel;
  int kernel_id = 0;
  ResponsePart part = ResponsePart::Raw;
  PoolSpec pool;
  double threshold = 0.0;  // response < threshold goes left

  friend bool operator==(const NodeTest&, const NodeTest&) = default;
};

struct TreeNode {
  bool leaf = true;
  NodeTest test;
  int left = -1;
  int right = -1;
  double value = 0.0;

  friend bool operator==(const TreeNode&, const TreeNode&) = default;
};

struct RegressionTree {
  int max_depth = 0;
  std::vector<TreeNode> nodes;  // nodes[0] is the root

  std::size_t leaf_count() const;
  friend bool operator==(const RegressionTree&, const RegressionTree&) = default;
};

struct SuperpixelParams {
  int region_size = 16;
  double compactness = 0.1;
  int iterations = 10;
  int erosion = 2;
  int dilation = 2;

  friend bool operator==(const SuperpixelParams&, const SuperpixelParams&) = default;
};

struct TrainConfig {
  int rounds = 200;
  int depth = 3;
  double shrinkage = 0.1;
  int thresholds = 10;  // quantile thresholds per candidate test
  double leaf_cap = 4.0;
  std::size_t n_pos = 1000;
  std::size_t n_neg = 1000;
  int sample_margin = -1;  // -1: largest filter half-size + pool radius

  BankConfig bank;                       // bank.channels empty: derived from the data
  std::vector<ChannelKind> kernel_kinds;  // restrict derived kernel channels; empty = all

  bool clustering = true;
  int clusters = 5;
  int cluster_patch_side = 9;

  bool window_pooling = true;  // POSNEG + window max candidates
  int pool_radius = 3;
  bool superpixel_pooling = false;
  SuperpixelParams superpixels;

  std::uint64_t seed = 0;

  /// Border distance within which no training sample is drawn.
  int effective_margin() const;

  /// Plain KernelBoost: raw responses only, no clustering.
  static TrainConfig kernelboost();
  /// Improved KernelBoost: POSNEG/max pooling and positive clustering.
  static TrainConfig improved();
};

struct BoostModel {
  double base_score = 0.0;
  double shrinkage = 0.1;
  std::string loss = "binomial-deviance";
  std::vector<RegressionTree> trees;
  std::vector<Kernel> kernels;  // every kernel referenced by a node test
  TrainConfig config;

  const Kernel& kernel(int id) const;
  /// Channels named by the model's kernels, sorted.
  std::vector<std::string> required_channels() const;
  bool uses_superpixels() const;
};

// --- loss -----------------------------------------------------------------

/// log(1 + exp(-2 y F)), overflow-safe.
double deviance(int label, double score);
/// Negative gradient of the deviance: 2y / (1 + exp(2yF)).
std::vector<double> pseudo_residuals(std::span<const int> labels, std::span<const double> scores);
/// Newton leaf value sum(r) / sum(|r|(2-|r|)) clamped to [-cap, cap].
double newton_leaf_value(std::span<const double> residuals, double cap);

// --- tree induction over precomputed candidate responses -------------------

/// values[c][i] = response of candidate test c at sample i.
using CandidateValues = std::vector<std::vector<double>>;

/// Up to q distinct midpoints between order statistics at ranks floor(j n/(q+1)).
std::vector<double> quantile_thresholds(std::vector<double> values, int q);

struct SplitChoice {
  int candidate = -1;
  double threshold = 0.0;
  double sse = 0.0;  // residual SSE of the two children
};

/// Best (candidate, quantile threshold) for the samples in `subset`; candidate
/// stays -1 when nothing splits. Ties keep the earliest candidate/threshold.
SplitChoice best_split(const CandidateValues& values, std::span<const double> residuals,
                       std::span<const int> subset, int q);

struct FitNode {
  bool leaf = true;
  int candidate = -1;
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  double value = 0.0;
};

struct FitOptions {
  int depth = 3;
  int thresholds = 10;
  double leaf_cap = 4.0;
};

/// Greedy depth-first least-squares tree on the residuals with Newton leaves.
std::vector<FitNode> fit_tree(const CandidateValues& values, std::span<const double> residuals,
                              const FitOptions& options);
double evaluate_fit(const std::vector<FitNode>& nodes, const CandidateValues& values, std::size_t sample);

// --- dense responses --------------------------------------------------------

/// Lazily computed response planes for one channel stack. Each kernel's
/// convolution and each (kernel, part, pool) plane is computed once.
class ResponseCache {
 public:
  ResponseCache(const ChannelStack& stack, const RegionTable* regions);

  const ImagePlane& response(const Kernel& kernel);
  const ImagePlane& feature(const Kernel& kernel, ResponsePart part, const PoolSpec& pool);
  /// Drops every cached plane derived from the kernel.
  void release(int kernel_id);
  int width() const { return stack_.width(); }
  int height() const { return stack_.height(); }

 private:
  const ImagePlane& level(const std::string& channel, double scale);

  const ChannelStack& stack_;
  const RegionTable* regions_;
  std::mutex mutex_;
  std::map<std::pair<std::string, double>, std::unique_ptr<ImagePlane>> levels_;
  std::map<int, std::unique_ptr<ImagePlane>> responses_;
  std::map<std::tuple<int, ResponsePart, PoolSpec>, std::unique_ptr<ImagePlane>> features_;
};

/// Part and pooling applied to a raw kernel response.
ImagePlane derive_feature(const ImagePlane& response, ResponsePart part, const PoolSpec& pool,
                          const RegionTable* regions);

ImagePlane evaluate_tree(const RegressionTree& tree, const BoostModel& model, ResponseCache& cache);

/// Superpixel regions of the stack's first image channel.
RegionTable compute_regions(const ChannelStack& stack, const SuperpixelParams& params);

// --- training and inference -----------------------------------------------

struct BoostInput {
  const ChannelStack* stack = nullptr;
  const LabelMap* labels = nullptr;  // +1 / -1 / IGNORE
  const Mask* mask = nullptr;        // optional
  const std::vector<std::uint8_t>* restrict = nullptr;  // optional training subset
  const RegionTable* regions = nullptr;  // optional; computed when needed
};

struct RoundLog {
  int round = 0;
  int kernels = 0;
  std::size_t tree_nodes = 0;
  double loss_before = 0.0;
  double loss_after = 0.0;
};

struct TrainResult {
  BoostModel model;
  std::vector<TrainSample> samples;
  std::vector<double> sample_scores;     // tracked F at each sample
  std::vector<ImagePlane> train_scores;  // tracked dense raw F per input image
  std::vector<RoundLog> rounds;
  double initial_loss = 0.0;
  std::vector<std::string> notes;
};

/// Trains cfg.rounds boosting rounds. With `resume`, continues that model for
/// cfg.rounds more rounds; the outcome equals one uninterrupted run.
TrainResult train_kernelboost(std::span<const BoostInput> data, const TrainConfig& cfg,
                              const BoostModel* resume = nullptr);

/// Dense raw scores F0 + nu * sum(tree outputs), accumulated tree by tree.
ScoreMap predict_scores(const BoostModel& model, const ChannelStack& stack, const RegionTable* regions = nullptr);

}  // namespace knotseg
