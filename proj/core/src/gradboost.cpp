#include "knotseg/gradboost.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <set>

namespace knotseg {

namespace {
constexpr std::uint64_t kSampleStream = 0x53414d50;  // "SAMP"
constexpr std::uint64_t kClusterStream = 0x434c5553;  // "CLUS"
constexpr std::uint64_t kRoundStream = 0x524e4400;
}  // namespace

const char* to_string(ResponsePart part) {
  switch (part) {
    case ResponsePart::Raw: return "raw";
    case ResponsePart::Pos: return "pos";
    case ResponsePart::Neg: return "neg";
  }
  return "?";
}

std::size_t RegressionTree::leaf_count() const {
  return static_cast<std::size_t>(std::count_if(nodes.begin(), nodes.end(), [](const TreeNode& n) { return n.leaf; }));
}

int TrainConfig::effective_margin() const {
  if (sample_margin >= 0) return sample_margin;
  const int fmax = bank.filter_sizes.empty() ? 1 : *std::max_element(bank.filter_sizes.begin(), bank.filter_sizes.end());
  return fmax / 2 + (window_pooling ? pool_radius : 0);
}

TrainConfig TrainConfig::kernelboost() {
  TrainConfig c;
  c.clustering = false;
  c.window_pooling = false;
  c.superpixel_pooling = false;
  return c;
}

TrainConfig TrainConfig::improved() {
  TrainConfig c;
  c.clustering = true;
  c.window_pooling = true;
  return c;
}

const Kernel& BoostModel::kernel(int id) const {
  for (const auto& k : kernels)
    if (k.id == id) return k;
  throw Error("model has no kernel with id " + std::to_string(id));
}

std::vector<std::string> BoostModel::required_channels() const {
  std::set<std::string> names;
  for (const auto& k : kernels) names.insert(k.channel);
  return {names.begin(), names.end()};
}

bool BoostModel::uses_superpixels() const {
  for (const auto& t : trees)
    for (const auto& n : t.nodes)
      if (!n.leaf && n.test.pool.uses_superpixels()) return true;
  return false;
}

// --- loss -----------------------------------------------------------------

double deviance(int label, double score) {
  const double m = -2.0 * label * score;
  return m > 35.0 ? m : std::log1p(std::exp(m));
}

std::vector<double> pseudo_residuals(std::span<const int> labels, std::span<const double> scores) {
  if (labels.size() != scores.size()) throw Error("pseudo_residuals: label and score counts differ");
  std::vector<double> r(labels.size());
  for (std::size_t i = 0; i < r.size(); ++i) {
    const double y = labels[i];
    r[i] = 2.0 * y / (1.0 + std::exp(2.0 * y * scores[i]));
  }
  return r;
}

double newton_leaf_value(std::span<const double> residuals, double cap) {
  double num = 0, den = 0;
  for (double r : residuals) {
    num += r;
    den += std::abs(r) * (2.0 - std::abs(r));
  }
  if (!(den > 1e-300)) return 0.0;
  return std::clamp(num / den, -cap, cap);
}

// --- tree induction ---------------------------------------------------------

std::vector<double> quantile_thresholds(std::vector<double> values, int q) {
  std::vector<double> out;
  const auto n = values.size();
  if (n < 2 || q < 1) return out;
  std::sort(values.begin(), values.end());
  for (int j = 1; j <= q; ++j) {
    auto pos = static_cast<std::size_t>(static_cast<double>(j) * static_cast<double>(n) / (q + 1));
    pos = std::clamp<std::size_t>(pos, 1, n - 1);
    if (values[pos - 1] < values[pos]) {
      const double lo = values[pos - 1], hi = values[pos];
      const double mid = lo + 0.5 * (hi - lo);
      const double t = mid > lo ? mid : hi;
      if (out.empty() || t > out.back()) out.push_back(t);
    }
  }
  return out;
}

SplitChoice best_split(const CandidateValues& values, std::span<const double> residuals,
                       std::span<const int> subset, int q) {
  SplitChoice best;
  const auto n = subset.size();
  if (n < 2) return best;
  double total = 0, total_sq = 0;
  for (int i : subset) {
    total += residuals[i];
    total_sq += residuals[i] * residuals[i];
  }
  const double parent_score = total * total / static_cast<double>(n);
  // Gains within tol are ties, which keep the earliest candidate/threshold.
  const double tol = 1e-9 * std::max(1.0, total_sq - parent_score);
  double best_score = parent_score;

  std::vector<std::pair<double, double>> vr(n);  // (response, residual) sorted by response
  std::vector<double> column(n);
  for (std::size_t c = 0; c < values.size(); ++c) {
    const auto& col = values[c];
    for (std::size_t k = 0; k < n; ++k) {
      vr[k] = {col[subset[k]], residuals[subset[k]]};
      column[k] = vr[k].first;
    }
    const auto thresholds = quantile_thresholds(column, q);
    if (thresholds.empty()) continue;
    std::sort(vr.begin(), vr.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    std::size_t k = 0;
    double left_sum = 0;
    for (double t : thresholds) {
      while (k < n && vr[k].first < t) left_sum += vr[k++].second;
      if (k == 0 || k == n) continue;
      const double right_sum = total - left_sum;
      const double score = left_sum * left_sum / static_cast<double>(k) +
                           right_sum * right_sum / static_cast<double>(n - k);
      if (score > best_score + tol) {
        best_score = score;
        best.candidate = static_cast<int>(c);
        best.threshold = t;
        best.sse = total_sq - score;
      }
    }
  }
  return best;
}

namespace {

void grow(std::vector<FitNode>& nodes, int node, std::vector<int> subset, int depth_left,
          const CandidateValues& values, std::span<const double> residuals, const FitOptions& opt) {
  auto make_leaf = [&] {
    std::vector<double> r;
    r.reserve(subset.size());
    for (int i : subset) r.push_back(residuals[i]);
    nodes[node].leaf = true;
    nodes[node].value = newton_leaf_value(r, opt.leaf_cap);
  };
  if (depth_left == 0 || subset.size() < 2) {
    make_leaf();
    return;
  }
  const auto split = best_split(values, residuals, subset, opt.thresholds);
  if (split.candidate < 0) {
    make_leaf();
    return;
  }
  std::vector<int> left, right;
  for (int i : subset) (values[split.candidate][i] < split.threshold ? left : right).push_back(i);
  nodes[node].leaf = false;
  nodes[node].candidate = split.candidate;
  nodes[node].threshold = split.threshold;
  const int l = static_cast<int>(nodes.size());
  nodes.emplace_back();
  const int r = static_cast<int>(nodes.size());
  nodes.emplace_back();
  nodes[node].left = l;
  nodes[node].right = r;
  subset.clear();
  subset.shrink_to_fit();
  grow(nodes, l, std::move(left), depth_left - 1, values, residuals, opt);
  grow(nodes, r, std::move(right), depth_left - 1, values, residuals, opt);
}

}  // namespace

std::vector<FitNode> fit_tree(const CandidateValues& values, std::span<const double> residuals,
                              const FitOptions& options) {
  if (options.depth < 1 || options.thresholds < 1) throw Error("fit_tree: depth and thresholds must be >= 1");
  for (const auto& col : values)
    if (col.size() != residuals.size()) throw Error("fit_tree: candidate column length mismatch");
  std::vector<int> all(residuals.size());
  std::iota(all.begin(), all.end(), 0);
  std::vector<FitNode> nodes(1);
  grow(nodes, 0, std::move(all), options.depth, values, residuals, options);
  return nodes;
}

double evaluate_fit(const std::vector<FitNode>& nodes, const CandidateValues& values, std::size_t sample) {
  int n = 0;
  while (!nodes[n].leaf) n = values[nodes[n].candidate][sample] < nodes[n].threshold ? nodes[n].left : nodes[n].right;
  return nodes[n].value;
}

// --- dense responses --------------------------------------------------------

ImagePlane derive_feature(const ImagePlane& response, ResponsePart part, const PoolSpec& pool,
                          const RegionTable* regions) {
  if (part == ResponsePart::Raw) return apply_pool(response, pool, regions);
  auto [pos, neg] = posneg(response);
  return apply_pool(part == ResponsePart::Pos ? pos : neg, pool, regions);
}

ResponseCache::ResponseCache(const ChannelStack& stack, const RegionTable* regions)
    : stack_(stack), regions_(regions) {}

const ImagePlane& ResponseCache::level(const std::string& channel, double scale) {
  if (scale == 1.0) return stack_.plane(channel);
  {
    std::lock_guard<std::mutex> lock(mutex_);
    const auto it = levels_.find({channel, scale});
    if (it != levels_.end()) return *it->second;
  }
  auto plane = std::make_unique<ImagePlane>(downscale(stack_.plane(channel), scale));
  std::lock_guard<std::mutex> lock(mutex_);
  auto& slot = levels_[{channel, scale}];
  if (!slot) slot = std::move(plane);
  return *slot;
}

const ImagePlane& ResponseCache::response(const Kernel& kernel) {
  {
    std::lock_guard<std::mutex> lock(mutex_);
    const auto it = responses_.find(kernel.id);
    if (it != responses_.end()) return *it->second;
  }
  auto plane = std::make_unique<ImagePlane>(upsample_nearest(convolve(level(kernel.channel, kernel.scale), kernel),
                                                             stack_.width(), stack_.height(), kernel.scale));
  std::lock_guard<std::mutex> lock(mutex_);
  auto& slot = responses_[kernel.id];
  if (!slot) slot = std::move(plane);
  return *slot;
}

const ImagePlane& ResponseCache::feature(const Kernel& kernel, ResponsePart part, const PoolSpec& pool) {
  if (part == ResponsePart::Raw && pool.kind == PoolKind::None) return response(kernel);
  const auto key = std::make_tuple(kernel.id, part, pool);
  {
    std::lock_guard<std::mutex> lock(mutex_);
    const auto it = features_.find(key);
    if (it != features_.end()) return *it->second;
  }
  auto plane = std::make_unique<ImagePlane>(derive_feature(response(kernel), part, pool, regions_));
  std::lock_guard<std::mutex> lock(mutex_);
  auto& slot = features_[key];
  if (!slot) slot = std::move(plane);
  return *slot;
}

void ResponseCache::release(int kernel_id) {
  std::lock_guard<std::mutex> lock(mutex_);
  responses_.erase(kernel_id);
  std::erase_if(features_, [&](const auto& kv) { return std::get<0>(kv.first) == kernel_id; });
}

ImagePlane evaluate_tree(const RegressionTree& tree, const BoostModel& model, ResponseCache& cache) {
  if (tree.nodes.empty()) throw Error("evaluate_tree: empty tree");
  std::vector<const ImagePlane*> planes(tree.nodes.size(), nullptr);
  const ImagePlane* any = nullptr;
  for (std::size_t i = 0; i < tree.nodes.size(); ++i) {
    const auto& n = tree.nodes[i];
    if (n.leaf) continue;
    planes[i] = &cache.feature(model.kernel(n.test.kernel_id), n.test.part, n.test.pool);
    any = planes[i];
  }
  if (!any) return ImagePlane(cache.width(), cache.height(), tree.nodes[0].value);
  ImagePlane out(any->width(), any->height());
  for (std::size_t p = 0; p < out.size(); ++p) {
    int n = 0;
    while (!tree.nodes[n].leaf)
      n = planes[n]->values()[p] < tree.nodes[n].test.threshold ? tree.nodes[n].left : tree.nodes[n].right;
    out.values()[p] = tree.nodes[n].value;
  }
  return out;
}

RegionTable compute_regions(const ChannelStack& stack, const SuperpixelParams& params) {
  const auto images = stack.names_of_kind(ChannelKind::Image);
  const ImagePlane& base = images.empty() ? *stack.channels().front().plane : stack.plane(images.front());
  return region_variants(slic(base, params.region_size, params.compactness, params.iterations), params.erosion,
                         params.dilation);
}

// --- training -----------------------------------------------------------------

namespace {

struct Template {
  ResponsePart part;
  PoolSpec pool;
};

std::vector<Template> candidate_templates(const TrainConfig& cfg) {
  std::vector<Template> t{{ResponsePart::Raw, PoolSpec::none()}};
  if (cfg.window_pooling) {
    t.push_back({ResponsePart::Pos, PoolSpec::window_max(cfg.pool_radius)});
    t.push_back({ResponsePart::Neg, PoolSpec::window_max(cfg.pool_radius)});
  }
  if (cfg.superpixel_pooling) {
    for (auto part : {ResponsePart::Pos, ResponsePart::Neg}) {
      t.push_back({part, PoolSpec::superpixel(RegionOp::Max, RegionVariant::Eroded)});
      t.push_back({part, PoolSpec::superpixel(RegionOp::Max, RegionVariant::Dilated)});
      t.push_back({part, PoolSpec::contrast(RegionOp::Max, Combiner::Difference)});
    }
  }
  return t;
}

void validate(const TrainConfig& cfg) {
  if (cfg.rounds < 0) throw Error("rounds must be non-negative");
  if (cfg.depth < 1) throw Error("tree depth must be >= 1");
  if (cfg.thresholds < 1) throw Error("thresholds per test must be >= 1");
  if (!(cfg.shrinkage >= 0 && cfg.shrinkage <= 1)) throw Error("shrinkage must lie in [0, 1]");
  if (cfg.bank.bank_size < 1) throw Error("bank size must be >= 1");
  if (cfg.pool_radius < 0) throw Error("pool radius must be >= 0");
  if (cfg.bank.filter_sizes.empty()) throw Error("at least one filter size is required");
  for (int f : cfg.bank.filter_sizes)
    if (f < 1 || f % 2 == 0) throw Error("filter sizes must be odd and positive");
  if (cfg.clustering && cfg.clusters < 1) throw Error("cluster count must be >= 1");
}

}  // namespace

TrainResult train_kernelboost(std::span<const BoostInput> data, const TrainConfig& cfg_in, const BoostModel* resume) {
  validate(cfg_in);
  if (data.empty()) throw Error("train_kernelboost: no training images");
  TrainConfig cfg = cfg_in;
  for (const auto& d : data) {
    if (!d.stack || !d.labels) throw Error("train_kernelboost: image without stack or labels");
    if (d.labels->width != d.stack->width() || d.labels->height != d.stack->height())
      throw Error("train_kernelboost: labels and channels differ in size");
  }
  if (cfg.bank.channels.empty()) {
    for (const auto& c : data.front().stack->channels()) {
      if (cfg.kernel_kinds.empty() ||
          std::find(cfg.kernel_kinds.begin(), cfg.kernel_kinds.end(), c.kind) != cfg.kernel_kinds.end())
        cfg.bank.channels.push_back(c.name);
    }
    if (cfg.bank.channels.empty()) throw Error("train_kernelboost: no channel matches the kernel channel kinds");
  }
  for (const auto& d : data)
    for (const auto& ch : cfg.bank.channels)
      if (!d.stack->contains(ch)) throw Error("training image lacks channel '" + ch + "'");

  TrainResult result;
  const auto templates = candidate_templates(cfg);

  std::vector<std::optional<RegionTable>> owned_regions(data.size());
  std::vector<const RegionTable*> regions(data.size(), nullptr);
  for (std::size_t i = 0; i < data.size(); ++i) {
    regions[i] = data[i].regions;
    if (cfg.superpixel_pooling && !regions[i]) {
      owned_regions[i] = compute_regions(*data[i].stack, cfg.superpixels);
      regions[i] = &*owned_regions[i];
    }
  }

  const int margin = cfg.effective_margin();
  std::vector<SampleSource> sources;
  std::vector<const ChannelStack*> stacks;
  for (const auto& d : data) {
    sources.push_back({d.labels, d.mask, d.restrict});
    stacks.push_back(d.stack);
  }
  result.samples = sample_locations(sources, cfg.n_pos, cfg.n_neg, margin, derive_seed(cfg.seed, kSampleStream));
  const auto& samples = result.samples;
  if (samples.size() < 2) throw Error("train_kernelboost: need at least two samples");
  std::vector<int> labels(samples.size());
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    labels[i] = samples[i].label;
    n_pos += samples[i].label == kPositive ? 1 : 0;
  }
  if (n_pos == 0 || n_pos == samples.size()) throw Error("train_kernelboost: samples cover a single class");

  const PatchSource source(stacks, cfg.bank.scales);
  ClusterSet clusters;
  if (cfg.clustering) {
    const auto images = data.front().stack->names_of_kind(ChannelKind::Image);
    const std::string ref = !images.empty() && std::find(cfg.bank.channels.begin(), cfg.bank.channels.end(),
                                                         images.front()) != cfg.bank.channels.end()
                                ? images.front()
                                : cfg.bank.channels.front();
    clusters = cluster_training_positives(source, samples, ref, cfg.cluster_patch_side, cfg.clusters,
                                          derive_seed(cfg.seed, kClusterStream));
    if (clusters.k != clusters.requested_k)
      result.notes.push_back("cluster count lowered to " + std::to_string(clusters.k));
  } else {
    clusters.k = clusters.requested_k = 1;
    clusters.assignment.assign(n_pos, 0);
  }

  BoostModel& model = result.model;
  int start_round = 0;
  if (resume) {
    model = *resume;
    start_round = static_cast<int>(model.trees.size());
    for (std::size_t i = 0; i < data.size(); ++i)
      result.train_scores.push_back(predict_scores(model, *data[i].stack, regions[i]).plane);
  } else {
    // Class prior of the pixels the samples are drawn from, not of the balanced sample.
    std::size_t prior_pos = 0, prior_all = 0;
    for (const auto& src : sources) {
      const auto& l = *src.labels;
      for (int y = margin; y < l.height - margin; ++y)
        for (int x = margin; x < l.width - margin; ++x) {
          const std::size_t i = static_cast<std::size_t>(y) * l.width + x;
          if (l.labels[i] == kIgnoreLabel || (src.mask && !src.mask->usable[i]) ||
              (src.restrict && !(*src.restrict)[i]))
            continue;
          ++prior_all;
          prior_pos += l.labels[i] == kPositive;
        }
    }
    const double p = static_cast<double>(prior_pos) / static_cast<double>(prior_all);
    model.base_score = 0.5 * std::log(p / (1.0 - p));
    model.shrinkage = cfg.shrinkage;
    for (const auto& d : data) result.train_scores.emplace_back(d.stack->width(), d.stack->height(), model.base_score);
  }
  model.config = cfg;
  model.config.rounds = start_round + cfg.rounds;
  const double nu = model.shrinkage;

  auto& F = result.sample_scores;
  F.resize(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i)
    F[i] = result.train_scores[samples[i].image](samples[i].x, samples[i].y);
  auto total_loss = [&] {
    double l = 0;
    for (std::size_t i = 0; i < samples.size(); ++i) l += deviance(labels[i], F[i]);
    return l;
  };
  result.initial_loss = total_loss();

  std::vector<std::vector<std::size_t>> by_image(data.size());
  for (std::size_t i = 0; i < samples.size(); ++i) by_image[samples[i].image].push_back(i);

  for (int r = 0; r < cfg.rounds; ++r) {
    const int round = start_round + r;
    RoundLog log;
    log.round = round;
    log.loss_before = total_loss();
    const auto residuals = pseudo_residuals(labels, F);

    auto bank = generate_bank(source, samples, residuals, clusters, cfg.bank, derive_seed(cfg.seed, kRoundStream + round),
                              round * cfg.bank.bank_size);
    for (auto& note : bank.notes) result.notes.push_back("round " + std::to_string(round) + ": " + note);
    log.kernels = static_cast<int>(bank.kernels.size());

    const std::size_t per_kernel = templates.size();
    CandidateValues values(bank.kernels.size() * per_kernel, std::vector<double>(samples.size()));
    parallel_for(bank.kernels.size(), [&](std::size_t b) {
      const Kernel& k = bank.kernels[b];
      for (std::size_t img = 0; img < data.size(); ++img) {
        if (by_image[img].empty()) continue;
        const auto& stack = *data[img].stack;
        const auto response = upsample_nearest(convolve(source.plane(static_cast<int>(img), k.channel, k.scale), k),
                                               stack.width(), stack.height(), k.scale);
        for (std::size_t t = 0; t < per_kernel; ++t) {
          const auto plane = derive_feature(response, templates[t].part, templates[t].pool, regions[img]);
          auto& col = values[b * per_kernel + t];
          for (auto i : by_image[img]) col[i] = plane(samples[i].x, samples[i].y);
        }
      }
    });

    const auto fit = fit_tree(values, residuals, FitOptions{cfg.depth, cfg.thresholds, cfg.leaf_cap});
    RegressionTree tree;
    tree.max_depth = cfg.depth;
    tree.nodes.resize(fit.size());
    for (std::size_t n = 0; n < fit.size(); ++n) {
      auto& node = tree.nodes[n];
      node.leaf = fit[n].leaf;
      node.value = fit[n].value;
      node.left = fit[n].left;
      node.right = fit[n].right;
      if (!node.leaf) {
        const auto& k = bank.kernels[fit[n].candidate / per_kernel];
        const auto& t = templates[fit[n].candidate % per_kernel];
        node.test = NodeTest{k.channel, k.id, t.part, t.pool, fit[n].threshold};
        const bool known = std::any_of(model.kernels.begin(), model.kernels.end(),
                                       [&](const Kernel& m) { return m.id == k.id; });
        if (!known) model.kernels.push_back(k);
      }
    }

    for (std::size_t i = 0; i < samples.size(); ++i) F[i] += nu * evaluate_fit(fit, values, i);
    for (std::size_t img = 0; img < data.size(); ++img) {
      auto& dense = result.train_scores[img];
      if (tree.nodes.size() == 1) {
        for (double& v : dense.values()) v += nu * tree.nodes[0].value;
        continue;
      }
      ResponseCache cache(*data[img].stack, regions[img]);
      const auto out = evaluate_tree(tree, model, cache);
      for (std::size_t p = 0; p < dense.size(); ++p) dense.values()[p] += nu * out.values()[p];
    }
    model.trees.push_back(std::move(tree));
    log.tree_nodes = model.trees.back().nodes.size();
    log.loss_after = total_loss();
    result.rounds.push_back(log);
  }
  std::sort(model.kernels.begin(), model.kernels.end(), [](const Kernel& a, const Kernel& b) { return a.id < b.id; });
  return result;
}

ScoreMap predict_scores(const BoostModel& model, const ChannelStack& stack, const RegionTable* regions) {
  for (const auto& name : model.required_channels())
    if (!stack.contains(name)) throw Error("predict_scores: missing channel '" + name + "'");
  if (stack.empty()) throw Error("predict_scores: empty channel stack");
  std::optional<RegionTable> owned;
  if (!regions && model.uses_superpixels()) {
    owned = compute_regions(stack, model.config.superpixels);
    regions = &*owned;
  }
  // Planes stay cached until the last tree that references their kernel.
  std::map<int, std::size_t> last_use;
  for (std::size_t t = 0; t < model.trees.size(); ++t)
    for (const auto& n : model.trees[t].nodes)
      if (!n.leaf) last_use[n.test.kernel_id] = t;

  ScoreMap out{ImagePlane(stack.width(), stack.height(), model.base_score), false};
  ResponseCache cache(stack, regions);
  for (std::size_t t = 0; t < model.trees.size(); ++t) {
    const auto& tree = model.trees[t];
    if (tree.nodes.size() == 1) {
      for (double& v : out.plane.values()) v += model.shrinkage * tree.nodes[0].value;
      continue;
    }
    const auto plane = evaluate_tree(tree, model, cache);
    for (std::size_t p = 0; p < out.plane.size(); ++p) out.plane.values()[p] += model.shrinkage * plane.values()[p];
    for (const auto& [id, last] : last_use)
      if (last == t) cache.release(id);
  }
  return out;
}

}  // namespace knotseg
