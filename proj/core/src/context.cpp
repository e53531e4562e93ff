#include "knotseg/context.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <sstream>

namespace knotseg {

const char* to_string(Architecture a) {
  switch (a) {
    case Architecture::AutoContext: return "autocontext";
    case Architecture::Expanded: return "expanded";
    case Architecture::Knotted: return "knotted";
  }
  return "?";
}

Architecture architecture_from_string(const std::string& s) {
  if (s == "autocontext") return Architecture::AutoContext;
  if (s == "expanded") return Architecture::Expanded;
  if (s == "knotted") return Architecture::Knotted;
  throw Error("unknown architecture '" + s + "' (expected autocontext, expanded or knotted)");
}

void SplitConfig::validate() const {
  if (!(epsilon > 0 && epsilon < 1)) throw Error("epsilon must lie in (0, 1)");
  if (max_levels < 0) throw Error("max_levels must be >= 0");
  if (!(min_misclassified_fraction >= 0)) throw Error("min_misclassified_fraction must be >= 0");
}

PixelSets split_sets(const ScoreMap& normalized, double epsilon, std::span<const std::uint8_t> eligible) {
  if (!normalized.normalized) throw Error("split_sets: score map is not normalized");
  if (!(epsilon > 0 && epsilon < 1)) throw Error("split_sets: epsilon must lie in (0, 1)");
  const auto& v = normalized.plane.values();
  if (!eligible.empty() && eligible.size() != v.size()) throw Error("split_sets: eligibility size mismatch");
  PixelSets s{std::vector<std::uint8_t>(v.size(), 0), std::vector<std::uint8_t>(v.size(), 0)};
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!eligible.empty() && !eligible[i]) continue;
    if (!(v[i] >= -1.0 && v[i] <= 1.0)) throw Error("split_sets: score outside [-1, 1] at pixel " + std::to_string(i));
    s.positive[i] = v[i] > -epsilon;
    s.negative[i] = v[i] < epsilon;
  }
  return s;
}

ChannelStack make_base_stack(const ImagePlane& image, const StackRecipe& recipe,
                             const std::vector<ImagePlane>& externals) {
  if (externals.size() != recipe.externals.size())
    throw Error("expected " + std::to_string(recipe.externals.size()) + " external channels, got " +
                std::to_string(externals.size()));
  ChannelStack s;
  s.add(recipe.image_channel, image, ChannelKind::Image);
  if (!recipe.features.generators.empty()) s.append(compute_feature_channels(image, recipe.features));
  for (std::size_t i = 0; i < externals.size(); ++i) s.add(recipe.externals[i], externals[i], ChannelKind::External);
  return s;
}

std::size_t ContextModel::map_count() const {
  std::size_t n = 0;
  for (const auto& t : tasks) n += t.nodes.size();
  return n;
}

std::vector<std::string> ContextModel::map_names() const {
  std::vector<std::string> out;
  for (const auto& t : tasks)
    for (const auto& n : t.nodes) out.push_back(n.map);
  return out;
}

namespace {

constexpr std::uint64_t kFusionStream = 0x46555345;  // "FUSE"

std::uint64_t name_hash(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Per-image training state for one 1-versus-all task.
struct Work {
  const ContextImage* src = nullptr;
  LabelMap labels;                     // +1 / -1 / IGNORE
  std::vector<std::uint8_t> eligible;  // in mask and labelled
  std::map<std::string, std::shared_ptr<const ImagePlane>> fed;   // maps as fed to classifiers
  std::map<std::string, std::shared_ptr<const ImagePlane>> norm;  // normalized maps
};

using Sets = std::vector<std::vector<std::uint8_t>>;  // per image

struct Trainer {
  std::span<const ContextImage> data;
  const ContextConfig& cfg;
  ContextTrainResult& result;
  TaskModel& task;
  std::string prefix;  // map-name prefix of the task
  std::uint64_t seed;
  std::vector<Work> works;

  Trainer(std::span<const ContextImage> d, const ContextConfig& c, ContextTrainResult& r, TaskModel& t, std::string p,
          std::uint64_t s)
      : data(d), cfg(c), result(r), task(t), prefix(std::move(p)), seed(s) {
    for (const auto& img : data) {
      Work w;
      w.src = &img;
      w.labels = LabelMap(img.labels.width, img.labels.height, kNegative);
      w.eligible.assign(img.labels.size(), 0);
      for (std::size_t i = 0; i < img.labels.size(); ++i) {
        const auto l = img.labels.labels[i];
        if (l == kIgnoreLabel) {
          w.labels.labels[i] = kIgnoreLabel;
          continue;
        }
        w.labels.labels[i] = cfg.classes.empty() ? (l == kPositive ? kPositive : kNegative)
                                                 : (l == task.target ? kPositive : kNegative);
        w.eligible[i] = !img.mask || img.mask->usable[i];
      }
      works.push_back(std::move(w));
    }
  }

  std::size_t count(const Sets* sets, std::size_t img) const {
    const auto& e = works[img].eligible;
    std::size_t n = 0;
    for (std::size_t i = 0; i < e.size(); ++i) n += e[i] && (!sets || (*sets)[img][i]);
    return n;
  }

  bool member(const Sets* sets, std::size_t img, std::size_t i) const {
    return works[img].eligible[i] && (!sets || (*sets)[img][i]);
  }

  /// Trains (or copies) one node and records its maps. Returns the node index
  /// or -1 when the branch was too small and `copy_on_shortfall` is false.
  int train_node(const std::string& name, int level, int parent, std::vector<std::string> inputs, const Sets* sets,
                 bool copy_on_shortfall) {
    NodeLog log;
    log.task = prefix;
    log.node = name;
    log.level = level;
    log.inputs = inputs.size();

    TrainConfig c = cfg.boost;
    c.seed = derive_seed(seed, name_hash(name));
    if (level > 0 && !cfg.later_kernel_kinds.empty()) c.kernel_kinds = cfg.later_kernel_kinds;

    // Available samples per class, honouring the sampling margin.
    const int margin = c.effective_margin();
    std::size_t avail_pos = 0, avail_neg = 0;
    for (std::size_t img = 0; img < works.size(); ++img) {
      const auto& w = works[img];
      for (int y = margin; y < w.labels.height - margin; ++y)
        for (int x = margin; x < w.labels.width - margin; ++x) {
          const std::size_t i = static_cast<std::size_t>(y) * w.labels.width + x;
          if (!member(sets, img, i)) continue;
          (w.labels.labels[i] == kPositive ? avail_pos : avail_neg) += 1;
        }
    }
    for (std::size_t img = 0; img < works.size(); ++img) {
      for (std::size_t i = 0; i < works[img].eligible.size(); ++i) {
        if (!member(sets, img, i)) continue;
        ++log.set_size;
        (works[img].labels.labels[i] == kPositive ? log.positives : log.negatives) += 1;
      }
    }

    ClassifierNode node;
    node.name = name;
    node.map = prefix + "map:" + name;
    node.level = level;
    node.parent = parent;
    // root: boosting minimum of two; branches: min_class_samples
    const std::size_t floor_n = parent < 0 ? 2 : std::max<std::size_t>(cfg.split.min_class_samples, 1);
    const bool short_branch = avail_pos < std::min(floor_n, c.n_pos) || avail_neg < std::min(floor_n, c.n_neg);
    if (short_branch) {
      const std::string why = "sample shortfall (" + std::to_string(avail_pos) + " positive, " +
                              std::to_string(avail_neg) + " negative available)";
      if (!copy_on_shortfall || parent < 0) {
        log.note = why + ", branch not grown";
        result.notes.push_back(prefix + name + ": " + log.note);
        result.nodes.push_back(std::move(log));
        return -1;
      }
      const ClassifierNode& src = task.nodes[parent];
      node.inputs = src.inputs;
      node.model = src.model;
      node.copied = true;
      log.copied = true;
      log.note = why + ", copied " + src.name;
      result.notes.push_back(prefix + name + ": " + log.note);
      for (auto& w : works) {
        w.fed[node.map] = w.fed.at(src.map);
        w.norm[node.map] = w.norm.at(src.map);
      }
    } else {
      if (avail_pos < c.n_pos || avail_neg < c.n_neg) {
        log.note = "samples reduced to " + std::to_string(std::min(c.n_pos, avail_pos)) + "/" +
                   std::to_string(std::min(c.n_neg, avail_neg));
        c.n_pos = std::min(c.n_pos, avail_pos);
        c.n_neg = std::min(c.n_neg, avail_neg);
      }
      node.inputs = std::move(inputs);
      std::vector<ChannelStack> stacks(works.size());
      std::vector<BoostInput> in(works.size());
      for (std::size_t img = 0; img < works.size(); ++img) {
        auto& w = works[img];
        stacks[img] = w.src->stack;
        for (const auto& m : node.inputs)
          stacks[img].add(m, w.fed.at(m), cfg.split.normalize ? ChannelKind::Score : ChannelKind::Feature);
        in[img] = BoostInput{&stacks[img], &w.labels, w.src->mask ? &*w.src->mask : nullptr,
                             sets ? &(*sets)[img] : nullptr, nullptr};
      }
      auto trained = train_kernelboost(in, c);
      node.model = std::move(trained.model);
      log.rounds = std::move(trained.rounds);
      for (auto& n : trained.notes) result.notes.push_back(prefix + name + ": " + n);
      for (std::size_t img = 0; img < works.size(); ++img) {
        auto& w = works[img];
        auto norm = normalize_scores(ScoreMap{trained.train_scores[img], false});
        auto norm_ptr = std::make_shared<const ImagePlane>(std::move(norm.plane));
        w.norm[node.map] = norm_ptr;
        w.fed[node.map] =
            cfg.split.normalize ? norm_ptr : std::make_shared<const ImagePlane>(std::move(trained.train_scores[img]));
      }
    }

    for (std::size_t img = 0; img < works.size(); ++img) {
      const auto& w = works[img];
      const auto& s = w.norm.at(node.map)->values();
      for (std::size_t i = 0; i < s.size(); ++i) {
        if (!member(sets, img, i)) continue;
        const int pred = s[i] > 0 ? kPositive : kNegative;
        log.misclassified += pred != w.labels.labels[i] ? 1 : 0;
      }
    }
    log.train_accuracy =
        log.set_size ? 1.0 - static_cast<double>(log.misclassified) / static_cast<double>(log.set_size) : 0.0;
    result.nodes.push_back(std::move(log));
    task.nodes.push_back(std::move(node));
    return static_cast<int>(task.nodes.size()) - 1;
  }

  std::vector<std::string> chain_of(int node) const {
    auto in = task.nodes[node].inputs;
    in.push_back(task.nodes[node].map);
    return in;
  }

  Sets split_node(int node, const Sets* within, bool positive) const {
    Sets out(works.size());
    const double eps = cfg.split.epsilon;
    for (std::size_t img = 0; img < works.size(); ++img) {
      const auto& s = works[img].norm.at(task.nodes[node].map)->values();
      out[img].assign(s.size(), 0);
      for (std::size_t i = 0; i < s.size(); ++i)
        if (member(within, img, i)) out[img][i] = positive ? s[i] > -eps : s[i] < eps;
    }
    return out;
  }

  LevelLog level_log(int level, const Sets& p, const Sets& n, std::size_t misclassified) const {
    LevelLog l;
    l.task = prefix;
    l.level = level;
    l.misclassified = misclassified;
    for (std::size_t img = 0; img < works.size(); ++img)
      for (std::size_t i = 0; i < works[img].eligible.size(); ++i) {
        if (!works[img].eligible[i]) continue;
        ++l.eligible;
        l.positive_set += p[img][i];
        l.negative_set += n[img][i];
        l.overlap += p[img][i] && n[img][i];
      }
    return l;
  }

  std::size_t misclassified_all(int node) const {
    std::size_t m = 0;
    for (std::size_t img = 0; img < works.size(); ++img) {
      const auto& s = works[img].norm.at(task.nodes[node].map)->values();
      for (std::size_t i = 0; i < s.size(); ++i)
        if (works[img].eligible[i]) m += (s[i] > 0 ? kPositive : kNegative) != works[img].labels.labels[i];
    }
    return m;
  }

  void knotted() {
    const int root = train_node("0", 0, -1, {}, nullptr, false);
    if (root < 0) throw Error("knotted: root classifier could not be trained: " + result.nodes.back().note);
    Sets p = split_node(root, nullptr, true), n = split_node(root, nullptr, false);
    result.levels.push_back(level_log(0, p, n, misclassified_all(root)));
    int prev_p = root, prev_n = root;
    for (int level = 1; level <= cfg.split.max_levels; ++level) {
      const std::string path_p(static_cast<std::size_t>(level), 'P'), path_n(static_cast<std::size_t>(level), 'N');
      const int np = train_node(path_p, level, prev_p, chain_of(prev_p), &p, true);
      const int nn = train_node(path_n, level, prev_n, chain_of(prev_n), &n, true);
      const auto& sp = task.nodes[np];
      const auto& sn = task.nodes[nn];

      // Union rule over the branches that processed each pixel.
      Sets next_p(works.size()), next_n(works.size());
      std::size_t level_miss = 0;
      std::size_t miss_p = 0, miss_n = 0, size_p = 0, size_n = 0;
      const double eps = cfg.split.epsilon;
      for (std::size_t img = 0; img < works.size(); ++img) {
        const auto& w = works[img];
        const auto& a = w.norm.at(sp.map)->values();
        const auto& b = w.norm.at(sn.map)->values();
        next_p[img].assign(a.size(), 0);
        next_n[img].assign(a.size(), 0);
        for (std::size_t i = 0; i < a.size(); ++i) {
          if (!w.eligible[i]) continue;
          const bool in_p = p[img][i], in_n = n[img][i];
          const int label = w.labels.labels[i];
          double sum = 0;
          int k = 0;
          if (in_p) {
            next_p[img][i] |= a[i] > -eps;
            next_n[img][i] |= a[i] < eps;
            sum += a[i];
            ++k;
            ++size_p;
            miss_p += (a[i] > 0 ? kPositive : kNegative) != label;
          }
          if (in_n) {
            next_p[img][i] |= b[i] > -eps;
            next_n[img][i] |= b[i] < eps;
            sum += b[i];
            ++k;
            ++size_n;
            miss_n += (b[i] > 0 ? kPositive : kNegative) != label;
          }
          if (k > 0) level_miss += (sum / k > 0 ? kPositive : kNegative) != label;
        }
      }
      p = std::move(next_p);
      n = std::move(next_n);
      result.levels.push_back(level_log(level, p, n, level_miss));
      prev_p = np;
      prev_n = nn;
      const double frac = cfg.split.min_misclassified_fraction;
      if (static_cast<double>(miss_p) < frac * static_cast<double>(size_p) &&
          static_cast<double>(miss_n) < frac * static_cast<double>(size_n)) {
        if (level < cfg.split.max_levels)
          result.notes.push_back(prefix + "stopped after level " + std::to_string(level) +
                                 ": misclassified counts below threshold in both branches");
        break;
      }
    }
  }

  void expanded() {
    const int root = train_node("0", 0, -1, {}, nullptr, false);
    if (root < 0) throw Error("expanded: root classifier could not be trained: " + result.nodes.back().note);
    struct Frontier {
      int node;
      std::string path;
      std::shared_ptr<Sets> set;  // null: every eligible pixel
    };
    std::vector<Frontier> frontier{{root, "", nullptr}};
    {
      const Sets p = split_node(root, nullptr, true), n = split_node(root, nullptr, false);
      result.levels.push_back(level_log(0, p, n, misclassified_all(root)));
    }
    for (int level = 1; level <= cfg.split.max_levels && !frontier.empty(); ++level) {
      std::vector<Frontier> next;
      for (const auto& f : frontier) {
        for (bool positive : {true, false}) {
          auto child = std::make_shared<Sets>(split_node(f.node, f.set.get(), positive));
          const std::string path = f.path + (positive ? 'P' : 'N');
          std::size_t size = 0;
          for (std::size_t img = 0; img < works.size(); ++img) size += count(child.get(), img);
          if (size < cfg.split.min_samples) {
            result.notes.push_back(prefix + path + ": " + std::to_string(size) + " pixels, below min_samples");
            continue;
          }
          const int id = train_node(path, level, f.node, chain_of(f.node), child.get(), false);
          if (id >= 0) next.push_back({id, path, child});
        }
      }
      frontier = std::move(next);
    }
  }

  void autocontext() {
    if (cfg.stages < 1) throw Error("autocontext: stages must be >= 1");
    int prev = -1;
    for (int s = 0; s < cfg.stages; ++s) {
      const int id = train_node(std::to_string(s), s, prev, prev < 0 ? std::vector<std::string>{} : chain_of(prev),
                                nullptr, false);
      if (id < 0) throw Error("autocontext: stage " + std::to_string(s) + " could not be trained");
      const std::size_t miss = misclassified_all(id);
      LevelLog l;
      l.task = prefix;
      l.level = s;
      l.misclassified = miss;
      for (const auto& w : works) l.eligible += static_cast<std::size_t>(std::count(w.eligible.begin(), w.eligible.end(), 1));
      result.levels.push_back(l);
      prev = id;
    }
  }
};

std::vector<std::int32_t> output_classes(const ContextConfig& cfg) {
  if (cfg.classes.empty()) return {kNegative, kPositive};
  auto c = cfg.classes;
  std::sort(c.begin(), c.end());
  if (std::adjacent_find(c.begin(), c.end()) != c.end()) throw Error("duplicate class labels");
  if (c.size() < 2) throw Error("multi-label tasks need at least two classes");
  return c;
}

/// Fusion planes of one image: non-map channels, then every map in model order.
std::vector<const ImagePlane*> fusion_planes(const ContextModel& model, const ChannelStack& stack,
                                             const std::map<std::string, std::shared_ptr<const ImagePlane>>& maps) {
  std::vector<const ImagePlane*> planes;
  for (const auto& c : model.fusion_channels) planes.push_back(&stack.plane(c));
  for (const auto& m : model.map_names()) planes.push_back(maps.at(m).get());
  return planes;
}

void fill_descriptor(const ContextModel& model, const std::vector<std::vector<const ImagePlane*>>& slices,
                     std::size_t z, int x, int y, double* out) {
  const auto& spec = model.fusion.snowflake;
  if (model.fusion.fake3d < 0) {
    snowflake_descriptor(slices[z], x, y, spec, out);
    return;
  }
  const auto idx = fake3d_slices(static_cast<int>(z), model.fusion.fake3d, static_cast<int>(slices.size()));
  const std::size_t block = descriptor_length(slices[z].size(), spec);
  for (int k = 0; k < 3; ++k) snowflake_descriptor(slices[idx[k]], x, y, spec, out + k * block);
}

std::size_t fusion_dim(const ContextModel& model) {
  const std::size_t single = descriptor_length(model.fusion_channels.size() + model.map_count(), model.fusion.snowflake);
  return model.fusion.fake3d < 0 ? single : 3 * single;
}

ContextTrainResult train_any(std::span<const ContextImage> data, const StackRecipe& recipe, const ContextConfig& cfg,
                             Architecture arch) {
  cfg.split.validate();
  cfg.fusion.snowflake.validate();
  if (data.empty()) throw Error("context training needs at least one image");
  for (const auto& d : data) {
    if (d.labels.width != d.stack.width() || d.labels.height != d.stack.height())
      throw Error("context training: labels and channels differ in size");
    if (d.mask && (d.mask->width != d.stack.width() || d.mask->height != d.stack.height()))
      throw Error("context training: mask and channels differ in size");
    if (d.stack.names() != data.front().stack.names())
      throw Error("context training: images have different channel lists");
  }

  ContextTrainResult result;
  ContextModel& model = result.model;
  model.architecture = arch;
  model.split = cfg.split;
  model.recipe = recipe;
  model.base_channels = data.front().stack.names();
  model.fusion_channels = data.front().stack.names_of_kind(ChannelKind::Image);
  model.classes = output_classes(cfg);
  model.fusion = cfg.fusion;

  std::vector<std::int32_t> targets = cfg.classes.empty() ? std::vector<std::int32_t>{kPositive} : model.classes;
  std::vector<std::vector<std::map<std::string, std::shared_ptr<const ImagePlane>>>> task_maps;
  for (std::size_t t = 0; t < targets.size(); ++t) {
    model.tasks.push_back(TaskModel{targets[t], {}});
    const std::string prefix = cfg.classes.empty() ? "" : "c" + std::to_string(targets[t]) + "/";
    Trainer trainer(data, cfg, result, model.tasks.back(), prefix, derive_seed(cfg.boost.seed, t));
    switch (arch) {
      case Architecture::Knotted: trainer.knotted(); break;
      case Architecture::Expanded: trainer.expanded(); break;
      case Architecture::AutoContext: trainer.autocontext(); break;
    }
    std::vector<std::map<std::string, std::shared_ptr<const ImagePlane>>> maps;
    for (auto& w : trainer.works) maps.push_back(std::move(w.fed));
    task_maps.push_back(std::move(maps));
  }

  // Fusion forest over all maps of all tasks.
  std::vector<std::map<std::string, std::shared_ptr<const ImagePlane>>> all_maps(data.size());
  for (const auto& per_task : task_maps)
    for (std::size_t img = 0; img < data.size(); ++img) all_maps[img].insert(per_task[img].begin(), per_task[img].end());
  std::vector<std::vector<const ImagePlane*>> planes;
  for (std::size_t img = 0; img < data.size(); ++img) planes.push_back(fusion_planes(model, data[img].stack, all_maps[img]));

  struct Pixel {
    std::size_t image;
    std::size_t index;
  };
  std::vector<Pixel> pixels;
  std::vector<std::int32_t> labels;
  for (std::size_t img = 0; img < data.size(); ++img) {
    const auto& d = data[img];
    for (std::size_t i = 0; i < d.labels.size(); ++i) {
      const auto l = d.labels.labels[i];
      if (l == kIgnoreLabel || (d.mask && !d.mask->usable[i])) continue;
      const std::int32_t cls = cfg.classes.empty() ? (l == kPositive ? kPositive : kNegative) : l;
      if (!std::binary_search(model.classes.begin(), model.classes.end(), cls))
        throw Error("label " + std::to_string(l) + " is not in the declared class set");
      pixels.push_back({img, i});
      labels.push_back(cls);
    }
  }
  ForestConfig fcfg = cfg.fusion.forest;
  fcfg.seed = derive_seed(cfg.boost.seed, kFusionStream + cfg.fusion.forest.seed);
  const auto chosen = stratified_subsample(labels, fcfg.max_per_class, derive_seed(fcfg.seed, 0));
  DescriptorSet set;
  set.dim = fusion_dim(model);
  set.values.resize(chosen.size() * set.dim);
  std::vector<std::int32_t> chosen_labels(chosen.size());
  for (std::size_t k = 0; k < chosen.size(); ++k) {
    const auto& px = pixels[chosen[k]];
    const int w = data[px.image].stack.width();
    fill_descriptor(model, planes, px.image, static_cast<int>(px.index % w), static_cast<int>(px.index / w),
                    set.values.data() + k * set.dim);
    chosen_labels[k] = labels[chosen[k]];
  }
  model.forest = train_forest(set, chosen_labels, fcfg);
  return result;
}

}  // namespace

ContextTrainResult train_context(std::span<const ContextImage> data, const StackRecipe& recipe,
                                 const ContextConfig& cfg) {
  return train_any(data, recipe, cfg, cfg.architecture);
}

ContextTrainResult train_knotted(std::span<const ContextImage> data, const StackRecipe& recipe,
                                 const ContextConfig& cfg) {
  return train_any(data, recipe, cfg, Architecture::Knotted);
}

ContextTrainResult train_expanded(std::span<const ContextImage> data, const StackRecipe& recipe,
                                  const ContextConfig& cfg) {
  return train_any(data, recipe, cfg, Architecture::Expanded);
}

ContextTrainResult train_autocontext(std::span<const ContextImage> data, const StackRecipe& recipe,
                                     const ContextConfig& cfg) {
  return train_any(data, recipe, cfg, Architecture::AutoContext);
}

std::vector<ContextPrediction> predict_context_volume(const ContextModel& model, std::span<const ChannelStack> slices) {
  if (slices.empty()) throw Error("predict_context: no input");
  std::vector<ContextPrediction> out(slices.size());
  std::vector<std::map<std::string, std::shared_ptr<const ImagePlane>>> maps(slices.size());
  for (std::size_t z = 0; z < slices.size(); ++z) {
    const auto& stack = slices[z];
    for (const auto& name : model.base_channels)
      if (!stack.contains(name)) throw Error("predict_context: missing channel '" + name + "'");
    for (const auto& task : model.tasks) {
      for (const auto& node : task.nodes) {
        ChannelStack s = stack;
        for (const auto& m : node.inputs)
          s.add(m, maps[z].at(m), model.split.normalize ? ChannelKind::Score : ChannelKind::Feature);
        auto raw = predict_scores(node.model, s);
        auto norm = normalize_scores(raw);
        maps[z][node.map] = std::make_shared<const ImagePlane>(model.split.normalize ? std::move(norm.plane)
                                                                                     : std::move(raw.plane));
      }
    }
    for (const auto& name : model.map_names()) {
      out[z].map_names.push_back(name);
      out[z].maps.push_back(*maps[z].at(name));
    }
  }

  std::vector<std::vector<const ImagePlane*>> planes;
  for (std::size_t z = 0; z < slices.size(); ++z) planes.push_back(fusion_planes(model, slices[z], maps[z]));
  const std::size_t dim = fusion_dim(model);
  const bool binary = model.classes == std::vector<std::int32_t>{kNegative, kPositive};
  for (std::size_t z = 0; z < slices.size(); ++z) {
    const int w = slices[z].width(), h = slices[z].height();
    auto& pred = out[z];
    pred.final = ScoreMap{ImagePlane(w, h), true};
    pred.labels = LabelMap(w, h, kNegative);
    pred.probabilities.assign(model.classes.size(), ImagePlane(w, h));
    parallel_for(static_cast<std::size_t>(h), [&](std::size_t yy) {
      const int y = static_cast<int>(yy);
      std::vector<double> d(dim);
      for (int x = 0; x < w; ++x) {
        fill_descriptor(model, planes, z, x, y, d.data());
        const auto p = predict_forest(model.forest, d);
        std::size_t best = 0;
        for (std::size_t c = 0; c < p.size(); ++c) {
          pred.probabilities[c](x, y) = p[c];
          if (p[c] > p[best]) best = c;
        }
        pred.labels(x, y) = model.classes[best];
        pred.final.plane(x, y) = binary ? 2.0 * p[1] - 1.0 : p[best];
      }
    });
  }
  return out;
}

ContextPrediction predict_context(const ContextModel& model, const ChannelStack& stack) {
  auto out = predict_context_volume(model, std::span<const ChannelStack>(&stack, 1));
  return std::move(out.front());
}

std::string training_log_csv(const ContextTrainResult& result) {
  std::ostringstream os;
  os.precision(10);
  os << "kind,task,level,node,round,loss_before,loss_after,kernels,set_size,positives,negatives,overlap,"
        "misclassified,note\n";
  for (const auto& n : result.nodes) {
    for (const auto& r : n.rounds)
      os << "round," << n.task << ',' << n.level << ',' << n.node << ',' << r.round << ',' << r.loss_before << ','
         << r.loss_after << ',' << r.kernels << ",,,,,,\n";
    os << "node," << n.task << ',' << n.level << ',' << n.node << ",,,,," << n.set_size << ',' << n.positives << ','
       << n.negatives << ",," << n.misclassified << ',' << (n.copied ? "copied" : "") << "\n";
  }
  for (const auto& l : result.levels)
    os << "level," << l.task << ',' << l.level << ",,,,,," << l.eligible << ",,," << l.overlap << ','
       << l.misclassified << ",P=" << l.positive_set << " N=" << l.negative_set << "\n";
  return os.str();
}

// --- volumes ----------------------------------------------------------------

const char* to_string(CutPlane p) {
  switch (p) {
    case CutPlane::XY: return "xy";
    case CutPlane::XZ: return "xz";
    case CutPlane::YZ: return "yz";
  }
  return "?";
}

Volume reslice_to(const Volume& v, CutPlane p) {
  if (p == CutPlane::XY) return v;
  return reslice(v, p == CutPlane::XZ ? ReslicePlane::XZ : ReslicePlane::YZ);
}

Volume reslice_from(const Volume& v, CutPlane p) { return reslice_to(v, p); }

std::vector<LabelMap> reslice_labels(const std::vector<LabelMap>& labels, CutPlane p) {
  if (labels.empty()) throw Error("reslice_labels: empty label stack");
  Volume v;
  for (const auto& l : labels) {
    ImagePlane plane(l.width, l.height);
    for (std::size_t i = 0; i < l.size(); ++i) plane.values()[i] = static_cast<double>(l.labels[i]);
    v.slices.push_back(std::move(plane));
  }
  const Volume r = reslice_to(v, p);
  std::vector<LabelMap> out;
  for (const auto& s : r.slices) {
    LabelMap l(s.width(), s.height());
    for (std::size_t i = 0; i < s.size(); ++i) l.labels[i] = static_cast<std::int32_t>(s.values()[i]);
    out.push_back(std::move(l));
  }
  return out;
}

namespace {

std::vector<ChannelStack> volume_stacks(const Volume& v, const StackRecipe& recipe) {
  std::vector<ChannelStack> out;
  for (const auto& s : v.slices) out.push_back(make_base_stack(s, recipe));
  return out;
}

std::string zcut_channel(CutPlane p) { return std::string("zcut:") + to_string(p); }

}  // namespace

std::vector<Volume> zcut_maps(const Volume& volume, std::span<const CutPlane> planes,
                              std::span<const ContextModel> models) {
  volume.validate();
  if (planes.size() != models.size()) throw Error("zcut_maps: one model per cut plane required");
  std::vector<Volume> out;
  for (std::size_t k = 0; k < planes.size(); ++k) {
    const Volume cut = reslice_to(volume, planes[k]);
    const auto stacks = volume_stacks(cut, models[k].recipe);
    const auto preds = predict_context_volume(models[k], stacks);
    Volume scores;
    for (const auto& p : preds) scores.slices.push_back(p.final.plane);
    Volume back = reslice_from(scores, planes[k]);
    if (back.width() != volume.width() || back.height() != volume.height() || back.depth() != volume.depth())
      throw Error("zcut_maps: resliced scores are misaligned with the volume");
    out.push_back(std::move(back));
  }
  return out;
}

ZcutModel train_zcut(const Volume& volume, const std::vector<LabelMap>& labels, std::span<const CutPlane> planes,
                     const StackRecipe& recipe, const ContextConfig& cfg) {
  volume.validate();
  if (labels.size() != volume.slices.size()) throw Error("train_zcut: one label map per slice required");
  if (planes.empty()) throw Error("train_zcut: no cut planes");
  if (!cfg.classes.empty()) throw Error("train_zcut: binary labels only");
  ZcutModel model;
  model.planes.assign(planes.begin(), planes.end());
  model.snowflake = cfg.fusion.snowflake;
  for (auto p : planes) {
    const Volume cut = reslice_to(volume, p);
    const auto cut_labels = reslice_labels(labels, p);
    std::vector<ContextImage> data;
    for (std::size_t z = 0; z < cut.slices.size(); ++z)
      data.push_back(ContextImage{make_base_stack(cut.slices[z], recipe), cut_labels[z], std::nullopt});
    ContextConfig c = cfg;
    c.fusion.fake3d = -1;
    model.models.push_back(train_context(data, recipe, c).model);
  }
  const auto maps = zcut_maps(volume, planes, model.models);

  std::vector<std::int32_t> all_labels;
  std::vector<std::pair<std::size_t, std::size_t>> where;
  for (std::size_t z = 0; z < labels.size(); ++z)
    for (std::size_t i = 0; i < labels[z].size(); ++i) {
      const auto l = labels[z].labels[i];
      if (l == kIgnoreLabel) continue;
      all_labels.push_back(l == kPositive ? kPositive : kNegative);
      where.emplace_back(z, i);
    }
  ForestConfig fcfg = cfg.fusion.forest;
  fcfg.seed = derive_seed(cfg.boost.seed, kFusionStream + 1 + cfg.fusion.forest.seed);
  const auto chosen = stratified_subsample(all_labels, fcfg.max_per_class, derive_seed(fcfg.seed, 0));
  DescriptorSet set;
  set.dim = descriptor_length(1 + planes.size(), model.snowflake);
  set.values.resize(chosen.size() * set.dim);
  std::vector<std::int32_t> y(chosen.size());
  const int w = volume.width();
  for (std::size_t k = 0; k < chosen.size(); ++k) {
    const auto [z, i] = where[chosen[k]];
    std::vector<const ImagePlane*> ps{&volume.slices[z]};
    for (const auto& m : maps) ps.push_back(&m.slices[z]);
    snowflake_descriptor(ps, static_cast<int>(i % w), static_cast<int>(i / w), model.snowflake,
                         set.values.data() + k * set.dim);
    y[k] = all_labels[chosen[k]];
  }
  model.forest = train_forest(set, y, fcfg);
  return model;
}

std::vector<ContextPrediction> predict_zcut(const ZcutModel& model, const Volume& volume) {
  const auto maps = zcut_maps(volume, model.planes, model.models);
  std::vector<ContextPrediction> out(volume.slices.size());
  const int w = volume.width(), h = volume.height();
  const std::size_t dim = descriptor_length(1 + model.planes.size(), model.snowflake);
  for (std::size_t z = 0; z < volume.slices.size(); ++z) {
    auto& pred = out[z];
    std::vector<const ImagePlane*> ps{&volume.slices[z]};
    for (std::size_t k = 0; k < maps.size(); ++k) {
      ps.push_back(&maps[k].slices[z]);
      pred.map_names.push_back(zcut_channel(model.planes[k]));
      pred.maps.push_back(maps[k].slices[z]);
    }
    pred.final = ScoreMap{ImagePlane(w, h), true};
    pred.labels = LabelMap(w, h, kNegative);
    pred.probabilities.assign(2, ImagePlane(w, h));
    std::vector<double> d(dim);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        snowflake_descriptor(ps, x, y, model.snowflake, d.data());
        const auto p = predict_forest(model.forest, d);
        pred.probabilities[0](x, y) = p[0];
        pred.probabilities[1](x, y) = p[1];
        pred.final.plane(x, y) = 2.0 * p[1] - 1.0;
        pred.labels(x, y) = p[1] > p[0] ? kPositive : kNegative;
      }
  }
  return out;
}

}  // namespace knotseg
