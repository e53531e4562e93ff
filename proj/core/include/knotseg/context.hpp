#pragma once

// Context recursion over boosted classifiers: Auto-Context chains, Expanded
// Trees and Knotted Trees, followed by random-forest fusion of every map.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "knotseg/fusion.hpp"
#include "knotseg/gradboost.hpp"
#include "knotseg/imagecore.hpp"

namespace knotseg {

enum class Architecture : std::uint8_t { AutoContext = 0, Expanded = 1, Knotted = 2 };
const char* to_string(Architecture a);
Architecture architecture_from_string(const std::string& s);

struct SplitConfig {
  double epsilon = 0.5;
  int max_levels = 2;
  /// A level is followed by another while either branch misclassifies at
  /// least this fraction of its training set.
  double min_misclassified_fraction = 0.01;
  /// Expanded Trees: a node is not grown when its set has fewer pixels.
  std::size_t min_samples = 2000;
  /// Per-class sample count below which a branch counts as short.
  std::size_t min_class_samples = 50;
  /// false: later classifiers see raw scores (ablation only).
  bool normalize = true;

  void validate() const;
  friend bool operator==(const SplitConfig&, const SplitConfig&) = default;
};

/// Per-pixel membership (1 = member) of the positive and negative sets.
struct PixelSets {
  std::vector<std::uint8_t> positive;
  std::vector<std::uint8_t> negative;
};

/// P = {s > -eps}, N = {s < +eps} over eligible pixels (`eligible` may be
/// empty for "all"). Rejects un-normalized maps.
PixelSets split_sets(const ScoreMap& normalized, double epsilon, std::span<const std::uint8_t> eligible = {});

/// Channels handed to every classifier besides score maps, and how to
/// rebuild them from a raw image.
struct StackRecipe {
  std::string image_channel = "image";
  FeatureSpec features;                 // derived feature channels
  std::vector<std::string> externals;  // external channels supplied by the caller

  friend bool operator==(const StackRecipe&, const StackRecipe&) = default;
};

/// image channel, feature channels, then the externals in recipe order.
ChannelStack make_base_stack(const ImagePlane& image, const StackRecipe& recipe,
                             const std::vector<ImagePlane>& externals = {});

struct FusionConfig {
  SnowflakeSpec snowflake;
  ForestConfig forest;
  int fake3d = -1;  // slice offset D; negative disables fake-3D descriptors

  friend bool operator==(const FusionConfig&, const FusionConfig&) = default;
};

struct ContextConfig {
  Architecture architecture = Architecture::Knotted;
  SplitConfig split;
  int stages = 3;  // Auto-Context chain length
  TrainConfig boost;
  /// Kernel channel kinds for every classifier after the first; empty keeps boost.kernel_kinds.
  std::vector<ChannelKind> later_kernel_kinds;
  FusionConfig fusion;
  /// Label set for multi-label tasks (one 1-versus-all pipeline per label);
  /// empty means binary +1 / -1 ground truth.
  std::vector<std::int32_t> classes;
};

struct ClassifierNode {
  std::string name;     // path: "0" root, then P/N letters (or stage index)
  std::string map;      // output channel name
  int level = 0;
  int parent = -1;      // node whose sets and maps this one extends
  std::vector<std::string> inputs;  // score channels consumed, in chain order
  bool copied = false;  // shortfall: model copied from `parent`
  BoostModel model;
};

struct TaskModel {
  std::int32_t target = kPositive;
  std::vector<ClassifierNode> nodes;  // training order; parents precede children
};

struct ContextModel {
  Architecture architecture = Architecture::Knotted;
  SplitConfig split;
  StackRecipe recipe;
  std::vector<std::string> base_channels;    // non-map channels each classifier receives
  std::vector<std::string> fusion_channels;  // non-map channels fed to the forest
  std::vector<std::int32_t> classes;         // forest output labels
  std::vector<TaskModel> tasks;
  FusionConfig fusion;
  ForestModel forest;

  std::size_t map_count() const;
  std::vector<std::string> map_names() const;
};

struct ContextImage {
  ChannelStack stack;  // base channels
  LabelMap labels;     // +1 / -1 (binary) or class labels; IGNORE allowed
  std::optional<Mask> mask;
};

struct NodeLog {
  std::string task;
  std::string node;
  int level = 0;
  std::size_t inputs = 0;
  std::size_t set_size = 0;
  std::size_t positives = 0;
  std::size_t negatives = 0;
  std::size_t misclassified = 0;
  double train_accuracy = 0;  // over the node's set
  bool copied = false;
  std::vector<RoundLog> rounds;
  std::string note;
};

struct LevelLog {
  std::string task;
  int level = 0;
  std::size_t eligible = 0;
  std::size_t positive_set = 0;
  std::size_t negative_set = 0;
  std::size_t overlap = 0;
  std::size_t misclassified = 0;  // pixels whose level decision disagrees with the label
};

struct ContextTrainResult {
  ContextModel model;
  std::vector<NodeLog> nodes;
  std::vector<LevelLog> levels;
  std::vector<std::string> notes;
};

ContextTrainResult train_context(std::span<const ContextImage> data, const StackRecipe& recipe,
                                 const ContextConfig& cfg);
ContextTrainResult train_knotted(std::span<const ContextImage> data, const StackRecipe& recipe,
                                 const ContextConfig& cfg);
ContextTrainResult train_expanded(std::span<const ContextImage> data, const StackRecipe& recipe,
                                  const ContextConfig& cfg);
ContextTrainResult train_autocontext(std::span<const ContextImage> data, const StackRecipe& recipe,
                                     const ContextConfig& cfg);

struct ContextPrediction {
  std::vector<std::string> map_names;
  std::vector<ImagePlane> maps;  // as fed to later classifiers
  ScoreMap final;                 // binary: 2 P(+1) - 1; multi-label: max class probability
  LabelMap labels;                // forest argmax
  std::vector<ImagePlane> probabilities;  // per model class
};

/// Applies every classifier densely, then the forest.
ContextPrediction predict_context(const ContextModel& model, const ChannelStack& stack);
/// Slice-ordered prediction; required for fake-3D descriptors.
std::vector<ContextPrediction> predict_context_volume(const ContextModel& model, std::span<const ChannelStack> slices);

/// Training diagnostics: one row per boosting round and per level.
std::string training_log_csv(const ContextTrainResult& result);

// --- volumes ----------------------------------------------------------------

enum class CutPlane : std::uint8_t { XY = 0, XZ = 1, YZ = 2 };
const char* to_string(CutPlane p);

Volume reslice_to(const Volume& v, CutPlane p);
Volume reslice_from(const Volume& v, CutPlane p);
/// Per-slice labels resliced like the volume.
std::vector<LabelMap> reslice_labels(const std::vector<LabelMap>& labels, CutPlane p);

struct ZcutModel {
  std::vector<CutPlane> planes;
  std::vector<ContextModel> models;  // one per plane
  SnowflakeSpec snowflake;
  ForestModel forest;                // over the image plus every plane's final map
};

/// Final score of each plane's model, resliced back to X-Y geometry.
std::vector<Volume> zcut_maps(const Volume& volume, std::span<const CutPlane> planes,
                              std::span<const ContextModel> models);

ZcutModel train_zcut(const Volume& volume, const std::vector<LabelMap>& labels, std::span<const CutPlane> planes,
                     const StackRecipe& recipe, const ContextConfig& cfg);
/// Per-slice fused +1 / -1 labels and 2 P(+1) - 1 scores in X-Y geometry.
std::vector<ContextPrediction> predict_zcut(const ZcutModel& model, const Volume& volume);

}  // namespace knotseg
