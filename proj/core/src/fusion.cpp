#include "knotseg/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>

namespace knotseg {

void SnowflakeSpec::validate() const {
  if (half_sides.empty() && !include_center) throw Error("snowflake spec samples no points");
  for (std::size_t i = 0; i < half_sides.size(); ++i) {
    if (half_sides[i] < 1) throw Error("snowflake half-sides must be positive");
    if (i > 0 && half_sides[i] <= half_sides[i - 1]) throw Error("snowflake half-sides must be strictly increasing");
  }
}

std::vector<std::pair<int, int>> SnowflakeSpec::offsets() const {
  std::vector<std::pair<int, int>> out;
  if (include_center) out.emplace_back(0, 0);
  for (int h : half_sides) {
    const std::pair<int, int> ring[8] = {{-h, -h}, {0, -h}, {h, -h}, {h, 0}, {h, h}, {0, h}, {-h, h}, {-h, 0}};
    out.insert(out.end(), std::begin(ring), std::end(ring));
  }
  return out;
}

std::size_t descriptor_length(std::size_t channels, const SnowflakeSpec& spec) {
  return channels * spec.points_per_channel();
}

void snowflake_descriptor(std::span<const ImagePlane* const> planes, int x, int y, const SnowflakeSpec& spec,
                          double* out) {
  const auto offsets = spec.offsets();
  for (const ImagePlane* p : planes) {
    const int w = p->width(), h = p->height();
    for (const auto& [dx, dy] : offsets) *out++ = (*p)(std::clamp(x + dx, 0, w - 1), std::clamp(y + dy, 0, h - 1));
  }
}

std::vector<double> snowflake_descriptor(const ChannelStack& stack, int x, int y, const SnowflakeSpec& spec) {
  spec.validate();
  if (x < 0 || y < 0 || x >= stack.width() || y >= stack.height())
    throw Error("snowflake_descriptor: location outside the image");
  std::vector<const ImagePlane*> planes;
  for (const auto& c : stack.channels()) planes.push_back(c.plane.get());
  std::vector<double> out(descriptor_length(planes.size(), spec));
  snowflake_descriptor(planes, x, y, spec, out.data());
  return out;
}

std::array<int, 3> fake3d_slices(int z, int d, int depth) {
  if (d < 0) throw Error("fake-3D offset must be >= 0");
  if (depth < 1 || z < 0 || z >= depth) throw Error("fake-3D slice index outside the stack");
  return {std::max(0, z - d), z, std::min(depth - 1, z + d)};
}

std::vector<double> fake3d_descriptor(std::span<const ChannelStack> slices, int z, int d, int x, int y,
                                      const SnowflakeSpec& spec) {
  const auto idx = fake3d_slices(z, d, static_cast<int>(slices.size()));
  std::vector<double> out;
  for (int s : idx) {
    const auto part = snowflake_descriptor(slices[s], x, y, spec);
    out.insert(out.end(), part.begin(), part.end());
  }
  return out;
}

void DescriptorSet::append(std::span<const double> d) {
  if (dim == 0) dim = d.size();
  if (d.size() != dim || dim == 0) throw Error("descriptor length mismatch");
  values.insert(values.end(), d.begin(), d.end());
}

// --- forest -------------------------------------------------------------------

namespace {

struct Grower {
  const DescriptorSet& data;
  const std::vector<int>& cls;  // class index per row
  std::size_t n_classes;
  const ForestConfig& cfg;
  std::size_t m_try;
  std::mt19937_64 rng;
  std::vector<std::size_t> features;
  std::vector<std::pair<double, int>> column;

  std::vector<double> distribution(std::span<const std::size_t> rows) const {
    std::vector<double> d(n_classes, 0.0);
    for (auto r : rows) d[cls[r]] += 1.0;
    for (double& v : d) v /= static_cast<double>(rows.size());
    return d;
  }

  void grow(ForestTree& tree, std::vector<std::size_t>& rows) {
    struct Work {
      int node;
      std::size_t begin, end;
      int depth;
    };
    tree.nodes.emplace_back();
    std::vector<Work> stack{{0, 0, rows.size(), 0}};
    std::vector<std::int64_t> counts(n_classes), left(n_classes);
    while (!stack.empty()) {
      const Work w = stack.back();
      stack.pop_back();
      const std::span<std::size_t> span(rows.data() + w.begin, w.end - w.begin);
      const auto n = static_cast<std::int64_t>(span.size());

      std::fill(counts.begin(), counts.end(), 0);
      for (auto r : span) ++counts[cls[r]];
      const bool pure = std::count_if(counts.begin(), counts.end(), [](std::int64_t c) { return c > 0; }) <= 1;
      const bool depth_done = cfg.max_depth > 0 && w.depth >= cfg.max_depth;
      int best_feature = -1;
      double best_threshold = 0, best_score = 0;
      if (!pure && !depth_done && n >= 2 * cfg.min_leaf) {
        std::int64_t parent_sq = 0;
        for (auto c : counts) parent_sq += c * c;
        best_score = static_cast<double>(parent_sq) / static_cast<double>(n) + 1e-9;
        for (std::size_t i = 0; i < m_try; ++i) {
          std::uniform_int_distribution<std::size_t> pick(i, features.size() - 1);
          std::swap(features[i], features[pick(rng)]);
        }
        for (std::size_t fi = 0; fi < m_try; ++fi) {
          const std::size_t f = features[fi];
          column.resize(span.size());
          for (std::size_t k = 0; k < span.size(); ++k) column[k] = {data.row(span[k])[f], cls[span[k]]};
          std::sort(column.begin(), column.end());
          std::fill(left.begin(), left.end(), 0);
          std::int64_t left_sq = 0, right_sq = parent_sq;
          for (std::int64_t k = 1; k < n; ++k) {
            const int c = column[k - 1].second;
            const std::int64_t right_c = counts[c] - left[c];
            left_sq += 2 * left[c] + 1;
            right_sq -= 2 * right_c - 1;
            ++left[c];
            if (k < cfg.min_leaf || n - k < cfg.min_leaf) continue;
            if (!(column[k - 1].first < column[k].first)) continue;
            const double score = static_cast<double>(left_sq) / static_cast<double>(k) +
                                 static_cast<double>(right_sq) / static_cast<double>(n - k);
            if (score > best_score) {
              best_score = score;
              best_feature = static_cast<int>(f);
              const double lo = column[k - 1].first, hi = column[k].first;
              const double mid = lo + 0.5 * (hi - lo);
              best_threshold = mid > lo ? mid : hi;  // adjacent doubles: keep lo on the left
            }
          }
        }
      }
      if (best_feature < 0) {
        tree.nodes[w.node].distribution = distribution(span);
        continue;
      }
      const auto mid = std::stable_partition(span.begin(), span.end(), [&](std::size_t r) {
                         return data.row(r)[best_feature] < best_threshold;
                       }) - span.begin();
      const int l = static_cast<int>(tree.nodes.size());
      tree.nodes.emplace_back();
      tree.nodes.emplace_back();
      auto& node = tree.nodes[w.node];
      node.feature = best_feature;
      node.threshold = best_threshold;
      node.left = l;
      node.right = l + 1;
      // Right pushed first so the left subtree is expanded first.
      stack.push_back({l + 1, w.begin + static_cast<std::size_t>(mid), w.end, w.depth + 1});
      stack.push_back({l, w.begin, w.begin + static_cast<std::size_t>(mid), w.depth + 1});
    }
  }
};

}  // namespace

ForestModel train_forest(const DescriptorSet& descriptors, std::span<const std::int32_t> labels,
                         const ForestConfig& cfg) {
  const std::size_t n = descriptors.rows();
  if (n == 0 || labels.size() != n) throw Error("train_forest: one label per descriptor required");
  if (cfg.n_trees < 1 || cfg.min_leaf < 1) throw Error("train_forest: n_trees and min_leaf must be >= 1");
  for (double v : descriptors.values)
    if (!std::isfinite(v)) throw Error("train_forest: non-finite descriptor value");

  ForestModel model;
  model.dim = descriptors.dim;
  model.config = cfg;
  model.classes.assign(labels.begin(), labels.end());
  std::sort(model.classes.begin(), model.classes.end());
  model.classes.erase(std::unique(model.classes.begin(), model.classes.end()), model.classes.end());
  if (model.classes.size() < 2) throw Error("train_forest: at least two classes are required");
  std::vector<int> cls(n);
  for (std::size_t i = 0; i < n; ++i)
    cls[i] = static_cast<int>(std::lower_bound(model.classes.begin(), model.classes.end(), labels[i]) -
                              model.classes.begin());
  const std::size_t m_try =
      cfg.m_try > 0 ? std::min<std::size_t>(cfg.m_try, model.dim)
                    : static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(model.dim))));

  model.trees.resize(cfg.n_trees);
  parallel_for(model.trees.size(), [&](std::size_t t) {
    Grower g{descriptors, cls, model.classes.size(), cfg, m_try, std::mt19937_64(derive_seed(cfg.seed, t)), {}, {}};
    g.features.resize(model.dim);
    std::iota(g.features.begin(), g.features.end(), 0);
    std::vector<std::size_t> rows(n);
    if (cfg.bootstrap) {
      std::uniform_int_distribution<std::size_t> pick(0, n - 1);
      for (auto& r : rows) r = pick(g.rng);
    } else {
      std::iota(rows.begin(), rows.end(), 0);
    }
    g.grow(model.trees[t], rows);
  });
  return model;
}

std::vector<double> predict_forest(const ForestModel& model, std::span<const double> descriptor) {
  if (descriptor.size() != model.dim)
    throw Error("predict_forest: descriptor has " + std::to_string(descriptor.size()) + " values, model expects " +
                std::to_string(model.dim));
  if (model.trees.empty()) throw Error("predict_forest: empty forest");
  std::vector<double> p(model.classes.size(), 0.0);
  for (const auto& tree : model.trees) {
    int k = 0;
    while (tree.nodes[k].feature >= 0)
      k = descriptor[tree.nodes[k].feature] < tree.nodes[k].threshold ? tree.nodes[k].left : tree.nodes[k].right;
    const auto& d = tree.nodes[k].distribution;
    for (std::size_t c = 0; c < p.size(); ++c) p[c] += d[c];
  }
  double total = 0;
  for (double v : p) total += v;
  for (double& v : p) v /= total;
  return p;
}

std::int32_t predict_label(const ForestModel& model, std::span<const double> descriptor) {
  const auto p = predict_forest(model, descriptor);
  return model.classes[static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin())];
}

std::vector<std::size_t> stratified_subsample(std::span<const std::int32_t> labels, std::size_t max_per_class,
                                              std::uint64_t seed) {
  std::map<std::int32_t, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> out;
  for (auto& [label, idx] : by_class) {
    const std::size_t take = std::min(max_per_class, idx.size());
    for (std::size_t i = 0; i < take; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
      std::swap(idx[i], idx[pick(rng)]);
    }
    out.insert(out.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(take));
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace knotseg
