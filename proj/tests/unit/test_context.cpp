#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "knotseg/context.hpp"
#include "knotseg/synthetic.hpp"

using namespace knotseg;

namespace {

ContextConfig tiny_config(Architecture arch, int levels) {
  ContextConfig c;
  c.architecture = arch;
  c.split.max_levels = levels;
  c.split.min_misclassified_fraction = 0.0;
  c.split.min_samples = 10;
  c.split.min_class_samples = 10;
  c.stages = 3;
  c.boost = TrainConfig::improved();
  c.boost.rounds = 3;
  c.boost.depth = 2;
  c.boost.bank.bank_size = 3;
  c.boost.bank.filter_sizes = {3, 5};
  c.boost.n_pos = c.boost.n_neg = 60;
  c.boost.clusters = 2;
  c.boost.pool_radius = 1;
  c.boost.seed = 5;
  c.fusion.forest.n_trees = 5;
  c.fusion.forest.max_per_class = 1500;
  return c;
}

std::vector<ContextImage> blob_data(int n, int size) {
  std::vector<ContextImage> out;
  for (int i = 0; i < n; ++i) {
    SyntheticSpec s;
    s.kind = SyntheticKind::BlobWorld;
    s.size = size;
    s.seed = 100 + static_cast<std::uint64_t>(i);
    auto img = blob_world(s);
    out.push_back(ContextImage{make_base_stack(img.image, StackRecipe{}), img.labels, std::nullopt});
  }
  return out;
}

const ClassifierNode& node_named(const ContextModel& m, const std::string& name) {
  for (const auto& n : m.tasks.front().nodes)
    if (n.name == name) return n;
  throw Error("no node " + name);
}

}  // namespace

TEST_SUITE("context") {

TEST_CASE("split_sets: band membership and identities") {
  const ImagePlane p(5, 1, std::vector<double>{-0.9, -0.2, 0.0, 0.3, 0.8});
  const auto s = split_sets(ScoreMap{p, true}, 0.5);
  CHECK(s.positive == std::vector<std::uint8_t>{0, 1, 1, 1, 1});
  CHECK(s.negative == std::vector<std::uint8_t>{1, 1, 1, 1, 0});
  const std::vector<std::uint8_t> eligible{1, 1, 0, 1, 1};
  const auto e = split_sets(ScoreMap{p, true}, 0.5, eligible);
  CHECK(e.positive[2] == 0);
  CHECK(e.negative[2] == 0);

  std::vector<double> grid;
  for (int i = 0; i <= 200; ++i) grid.push_back(-1.0 + i / 100.0);
  const ImagePlane g(static_cast<int>(grid.size()), 1, grid);
  for (double eps : {0.05, 0.3, 0.5, 0.9}) {
    const auto t = split_sets(ScoreMap{g, true}, eps);
    for (std::size_t i = 0; i < grid.size(); ++i) {
      CHECK((t.positive[i] || t.negative[i]));
      CHECK(static_cast<bool>(t.positive[i] && t.negative[i]) == (std::fabs(grid[i]) < eps));
    }
  }
  CHECK_THROWS_AS(split_sets(ScoreMap{p, false}, 0.5), Error);
  CHECK_THROWS_AS(split_sets(ScoreMap{p, true}, 0.0), Error);
  CHECK_THROWS_AS(split_sets(ScoreMap{p, true}, 1.0), Error);
  CHECK_THROWS_AS(split_sets(ScoreMap{ImagePlane(1, 1, 1.5), true}, 0.5), Error);
}

TEST_CASE("architecture names round trip") {
  for (auto a : {Architecture::AutoContext, Architecture::Expanded, Architecture::Knotted})
    CHECK(architecture_from_string(to_string(a)) == a);
  CHECK_THROWS_AS(architecture_from_string("forest"), Error);
}

TEST_CASE("knotted: map counts, chains and naming") {
  const auto data = blob_data(2, 40);
  const auto zero = train_knotted(data, StackRecipe{}, tiny_config(Architecture::Knotted, 0));
  CHECK(zero.model.map_count() == 1);
  CHECK(zero.model.map_names() == std::vector<std::string>{"map:0"});

  const auto two = train_knotted(data, StackRecipe{}, tiny_config(Architecture::Knotted, 2));
  CHECK(two.model.map_count() == 5);
  CHECK(two.model.map_names() == std::vector<std::string>{"map:0", "map:P", "map:N", "map:PP", "map:NN"});
  CHECK(node_named(two.model, "0").inputs.empty());
  CHECK(node_named(two.model, "P").inputs == std::vector<std::string>{"map:0"});
  CHECK(node_named(two.model, "NN").inputs == std::vector<std::string>{"map:0", "map:N"});
  for (const auto& n : two.model.tasks.front().nodes) CHECK(n.inputs.size() == static_cast<std::size_t>(n.level));
  CHECK(two.levels.size() == 3);
  for (const auto& l : two.levels) CHECK(l.positive_set + l.negative_set - l.overlap == l.eligible);

  const auto pred = predict_context(two.model, data[0].stack);
  CHECK(pred.maps.size() == 5);
  CHECK(pred.map_names == two.model.map_names());
  for (std::size_t i = 0; i < pred.final.plane.size(); ++i) {
    const double f = pred.final.plane.values()[i];
    CHECK(f >= -1.0);
    CHECK(f <= 1.0);
    CHECK(f == doctest::Approx(2.0 * pred.probabilities[1].values()[i] - 1.0));
    CHECK(pred.probabilities[0].values()[i] + pred.probabilities[1].values()[i] == doctest::Approx(1.0));
  }
  for (const auto& m : pred.maps)
    for (double v : m.values()) CHECK(std::fabs(v) <= 1.0);
}

TEST_CASE("knotted: early stop and shortfall copies") {
  const auto data = blob_data(1, 40);
  auto cfg = tiny_config(Architecture::Knotted, 3);
  cfg.split.min_misclassified_fraction = 2.0;
  const auto stopped = train_knotted(data, StackRecipe{}, cfg);
  CHECK(stopped.model.map_count() == 3);

  cfg = tiny_config(Architecture::Knotted, 1);
  cfg.split.min_class_samples = 1000000;
  cfg.boost.n_pos = cfg.boost.n_neg = 1000000;
  const auto copied = train_knotted(data, StackRecipe{}, cfg);
  CHECK(copied.model.map_count() == 3);
  const auto& root = node_named(copied.model, "0");
  for (const char* name : {"P", "N"}) {
    const auto& n = node_named(copied.model, name);
    CHECK(n.copied);
    CHECK(n.model.trees == root.model.trees);
    CHECK(n.inputs == root.inputs);
  }
  const auto pred = predict_context(copied.model, data[0].stack);
  CHECK(pred.maps[1] == pred.maps[0]);
}

TEST_CASE("expanded: tree growth, min_samples, shortfall skips") {
  const auto data = blob_data(1, 40);
  const auto full = train_expanded(data, StackRecipe{}, tiny_config(Architecture::Expanded, 2));
  CHECK(full.model.map_count() == 7);
  CHECK(node_named(full.model, "PN").inputs == std::vector<std::string>{"map:0", "map:P"});

  auto cfg = tiny_config(Architecture::Expanded, 2);
  cfg.split.min_samples = 1000000;
  CHECK(train_expanded(data, StackRecipe{}, cfg).model.map_count() == 1);

  cfg = tiny_config(Architecture::Expanded, 2);
  cfg.split.min_class_samples = 1000000;
  cfg.boost.n_pos = cfg.boost.n_neg = 1000000;
  const auto skipped = train_expanded(data, StackRecipe{}, cfg);
  CHECK(skipped.model.map_count() == 1);
  CHECK(!skipped.notes.empty());
}

TEST_CASE("level-one branches agree across knotted and expanded") {
  const auto data = blob_data(1, 40);
  const auto k = train_knotted(data, StackRecipe{}, tiny_config(Architecture::Knotted, 1));
  const auto e = train_expanded(data, StackRecipe{}, tiny_config(Architecture::Expanded, 1));
  for (const char* name : {"0", "P", "N"}) {
    CHECK(node_named(k.model, name).model.trees == node_named(e.model, name).model.trees);
    CHECK(node_named(k.model, name).inputs == node_named(e.model, name).inputs);
  }
}

TEST_CASE("autocontext: chain length and score-only kernels") {
  const auto data = blob_data(1, 40);
  auto cfg = tiny_config(Architecture::AutoContext, 0);
  cfg.stages = 1;
  CHECK(train_autocontext(data, StackRecipe{}, cfg).model.map_count() == 1);
  cfg.stages = 3;
  cfg.later_kernel_kinds = {ChannelKind::Score};
  const auto res = train_autocontext(data, StackRecipe{}, cfg);
  CHECK(res.model.map_names() == std::vector<std::string>{"map:0", "map:1", "map:2"});
  CHECK(node_named(res.model, "2").inputs == std::vector<std::string>{"map:0", "map:1"});
  for (const auto& n : res.model.tasks.front().nodes) {
    if (n.level == 0) continue;
    for (const auto& k : n.model.kernels) CHECK(k.channel.rfind("map:", 0) == 0);
  }
  cfg.stages = 0;
  CHECK_THROWS_AS(train_autocontext(data, StackRecipe{}, cfg), Error);
}

TEST_CASE("context training is deterministic") {
  const auto data = blob_data(1, 36);
  const auto cfg = tiny_config(Architecture::Knotted, 1);
  const auto a = train_knotted(data, StackRecipe{}, cfg);
  const auto b = train_knotted(data, StackRecipe{}, cfg);
  CHECK(a.model.forest == b.model.forest);
  for (std::size_t i = 0; i < a.model.tasks.front().nodes.size(); ++i)
    CHECK(a.model.tasks.front().nodes[i].model.trees == b.model.tasks.front().nodes[i].model.trees);
  const auto pa = predict_context(a.model, data[0].stack);
  const auto pb = predict_context(b.model, data[0].stack);
  CHECK(pa.final.plane == pb.final.plane);
}

TEST_CASE("multi-label: one task per class") {
  auto data = blob_data(1, 36);
  for (int y = 0; y < 36; ++y)
    for (int x = 0; x < 36; ++x) {
      auto& l = data[0].labels(x, y);
      l = l == kPositive ? (x < 18 ? 1 : 2) : 0;
    }
  auto cfg = tiny_config(Architecture::Knotted, 0);
  cfg.classes = {0, 1, 2};
  const auto res = train_context(data, StackRecipe{}, cfg);
  CHECK(res.model.map_names() == std::vector<std::string>{"c0/map:0", "c1/map:0", "c2/map:0"});
  const auto pred = predict_context(res.model, data[0].stack);
  REQUIRE(pred.probabilities.size() == 3);
  for (std::size_t i = 0; i < pred.labels.size(); ++i) {
    const auto l = pred.labels.labels[i];
    CHECK((l == 0 || l == 1 || l == 2));
  }
  cfg.classes = {0, 1};
  data[0].labels(0, 0) = 7;
  CHECK_THROWS_AS(train_context(data, StackRecipe{}, cfg), Error);
}

TEST_CASE("zcut: reslicing geometry and fused prediction") {
  std::vector<LabelMap> labels;
  for (int z = 0; z < 4; ++z) {
    LabelMap l(5, 3);
    for (int y = 0; y < 3; ++y)
      for (int x = 0; x < 5; ++x) l(x, y) = (x + 2 * y + 3 * z) % 2 ? kPositive : kNegative;
    labels.push_back(l);
  }
  const auto xz = reslice_labels(labels, CutPlane::XZ);
  REQUIRE(xz.size() == 3);
  CHECK(xz[0].width == 5);
  CHECK(xz[0].height == 4);
  for (int z = 0; z < 4; ++z)
    for (int y = 0; y < 3; ++y)
      for (int x = 0; x < 5; ++x) CHECK(xz[y](x, z) == labels[z](x, y));
  CHECK(reslice_labels(xz, CutPlane::XZ) == labels);
  const auto yz = reslice_labels(labels, CutPlane::YZ);
  CHECK(reslice_labels(yz, CutPlane::YZ) == labels);
  CHECK(reslice_labels(labels, CutPlane::XY) == labels);

  SyntheticSpec s;
  s.kind = SyntheticKind::AnisotropicVolume;
  s.size = 24;
  s.depth = 12;
  s.seed = 3;
  const auto vol = anisotropic_volume(s);
  auto cfg = tiny_config(Architecture::Knotted, 0);
  cfg.boost.n_pos = cfg.boost.n_neg = 40;
  const std::vector<CutPlane> planes{CutPlane::XY, CutPlane::XZ};
  const auto model = train_zcut(vol.image, vol.labels, planes, StackRecipe{}, cfg);
  CHECK(model.models.size() == 2);
  const auto maps = zcut_maps(vol.image, planes, model.models);
  for (const auto& m : maps) {
    CHECK(m.width() == 24);
    CHECK(m.height() == 24);
    CHECK(m.depth() == 12);
  }
  const auto pred = predict_zcut(model, vol.image);
  REQUIRE(pred.size() == 12);
  CHECK(pred[0].map_names == std::vector<std::string>{"zcut:xy", "zcut:xz"});
  for (const auto& p : pred)
    for (double v : p.final.plane.values()) CHECK(std::fabs(v) <= 1.0);
  CHECK_THROWS_AS(train_zcut(vol.image, {}, planes, StackRecipe{}, cfg), Error);
}

}
