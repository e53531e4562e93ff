#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "knotseg/config.hpp"
#include "knotseg/dataset.hpp"
#include "knotseg/evaluation.hpp"
#include "knotseg/image_io.hpp"
#include "knotseg/model_io.hpp"
#include "knotseg/synthetic.hpp"
#include "oracles.hpp"

using namespace knotseg;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    std::random_device rd;
    path = fs::temp_directory_path() / ("knotseg_test_" + std::to_string(rd()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

BoostModel tiny_boost() {
  SyntheticSpec s;
  s.kind = SyntheticKind::BlobWorld;
  s.size = 32;
  s.seed = 1;
  const auto img = blob_world(s);
  ChannelStack stack;
  stack.add("image", img.image, ChannelKind::Image);
  auto cfg = TrainConfig::improved();
  cfg.rounds = 2;
  cfg.bank.bank_size = 2;
  cfg.bank.filter_sizes = {3};
  cfg.n_pos = cfg.n_neg = 30;
  cfg.clusters = 2;
  cfg.pool_radius = 1;
  const BoostInput in{&stack, &img.labels};
  return train_kernelboost(std::span(&in, 1), cfg).model;
}

}  // namespace

TEST_SUITE("harness") {

TEST_CASE("synthetic data: determinism, quadrant truth, periodicity") {
  SyntheticSpec s;
  s.size = 64;
  s.seed = 4;
  const auto a = texture_mosaic(s);
  const auto b = texture_mosaic(s);
  CHECK(a.image == b.image);
  CHECK(a.labels == b.labels);
  s.seed = 5;
  CHECK(!(texture_mosaic(s).image == a.image));
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x) CHECK(a.labels(x, y) == ((x < 32) == (y < 32) ? kPositive : kNegative));

  s.noise = 0.0;
  const auto clean = texture_mosaic(s);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x + 6 < 32; ++x) {
      CHECK(clean.image(x, y) == doctest::Approx(clean.image(x + 6, y)).epsilon(1e-9));
      CHECK(clean.image(x, y) == doctest::Approx(clean.image(x, 0)).epsilon(1e-9));
    }
  for (double v : clean.image.values()) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }

  SyntheticSpec bw;
  bw.kind = SyntheticKind::BlobWorld;
  bw.size = 48;
  bw.seed = 2;
  const auto blobs = blob_world(bw);
  const auto pos = std::count(blobs.labels.labels.begin(), blobs.labels.labels.end(), kPositive);
  CHECK(pos > 0);
  CHECK(pos < 48 * 48);
  CHECK(blob_world(bw).image == blobs.image);

  SyntheticSpec vs;
  vs.kind = SyntheticKind::AnisotropicVolume;
  vs.size = 20;
  vs.depth = 6;
  const auto vol = anisotropic_volume(vs);
  CHECK(vol.image.depth() == 6);
  CHECK(vol.labels.size() == 6);
  CHECK(synthetic_kind_from_string(to_string(SyntheticKind::BlobWorld)) == SyntheticKind::BlobWorld);
  s.size = 4;
  CHECK_THROWS_AS(texture_mosaic(s), Error);
}

TEST_CASE("model container round trip and corruption") {
  const PipelineModel m = tiny_boost();
  const auto bytes = encode_model(m);
  REQUIRE(bytes.size() > 25);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "KBST");
  const auto back = decode_model(bytes);
  CHECK(model_kind(back) == ModelKind::Boost);
  CHECK(encode_model(back) == bytes);
  CHECK(std::get<BoostModel>(back).trees == std::get<BoostModel>(m).trees);

  TempDir dir;
  save_model(dir.path / "m.kbst", m);
  CHECK(read_file_bytes(dir.path / "m.kbst") == bytes);
  CHECK(encode_model(load_model(dir.path / "m.kbst")) == bytes);

  for (std::size_t cut : {std::size_t{0}, std::size_t{3}, std::size_t{10}, bytes.size() / 2, bytes.size() - 1})
    CHECK_THROWS_AS(decode_model(std::span(bytes.data(), cut)), Error);
  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(decode_model(bad), Error);
  bad = bytes;
  bad[4] = static_cast<std::uint8_t>(kModelVersion + 1);
  CHECK_THROWS_AS(decode_model(bad), Error);
  bad = bytes;
  bad[bytes.size() / 2] ^= 0x40;
  CHECK_THROWS_AS(decode_model(bad), Error);
  bad = bytes;
  bad.push_back(0);
  CHECK_THROWS_AS(decode_model(bad), Error);
  CHECK_THROWS_AS(load_model(dir.path / "missing.kbst"), Error);
}

TEST_CASE("float plane container") {
  std::mt19937_64 rng(3);
  const auto p = oracle::random_plane(7, 5, rng);
  const auto back = decode_float_plane(encode_float_plane(p));
  CHECK(back.width() == 7);
  for (std::size_t i = 0; i < p.size(); ++i) CHECK(back.values()[i] == static_cast<double>(static_cast<float>(p.values()[i])));
  auto bytes = encode_float_plane(p);
  bytes.pop_back();
  CHECK_THROWS_AS(decode_float_plane(bytes), Error);
}

TEST_CASE("configuration: defaults, round trip, errors") {
  const auto defaults = parse_config(defaults_toml());
  CHECK(to_toml(defaults) == to_toml(AppConfig{}));
  CHECK(defaults.context.split == SplitConfig{});

  auto cfg = parse_config(R"(
[pipeline]
architecture = "expanded"
[boost]
rounds = 7
shrinkage = 0.25
[context]
epsilon = 0.3
max_levels = 4
[fusion]
half_sides = [1, 3, 6]
n_trees = 12
[evaluation]
threshold_mode = "global"
)");
  CHECK(cfg.architecture == "expanded");
  CHECK(cfg.context.boost.rounds == 7);
  CHECK(cfg.context.boost.shrinkage == 0.25);
  CHECK(cfg.context.split.epsilon == 0.3);
  CHECK(cfg.context.split.max_levels == 4);
  CHECK(cfg.context.fusion.snowflake.half_sides == std::vector<int>{1, 3, 6});
  CHECK(cfg.context.fusion.forest.n_trees == 12);
  CHECK(cfg.eval.mode == ThresholdMode::Global);
  const auto again = parse_config(to_toml(cfg));
  CHECK(to_toml(again) == to_toml(cfg));

  apply_superpixel_flag(cfg, "12,0.5");
  CHECK(cfg.context.boost.superpixel_pooling);
  CHECK(cfg.context.boost.superpixels.region_size == 12);
  CHECK(cfg.context.boost.superpixels.compactness == 0.5);
  apply_snowflake_flag(cfg, "2,4");
  CHECK(cfg.context.fusion.snowflake.half_sides == std::vector<int>{2, 4});
  CHECK_THROWS_AS(apply_superpixel_flag(cfg, "12"), Error);
  CHECK_THROWS_AS(apply_snowflake_flag(cfg, "4,2"), Error);

  CHECK_THROWS_AS(parse_config("[boost]\nroundz = 3\n"), Error);
  CHECK_THROWS_AS(parse_config("[nope]\n"), Error);
  CHECK_THROWS_AS(parse_config("[boost]\nrounds = \"many\"\n"), Error);
  CHECK_THROWS_AS(parse_config("[pipeline]\narchitecture = \"forest\"\n"), Error);
  CHECK_THROWS_AS(parse_config("[context\n"), Error);
  CHECK(threshold_mode_from_string(to_string(ThresholdMode::Fixed)) == ThresholdMode::Fixed);
}

TEST_CASE("dataset manifest parsing and validation") {
  TempDir dir;
  ImagePlane img(6, 4, 0.5);
  write_image_png16(dir.path / "a.png", img);
  write_image_png16(dir.path / "b.png", img);
  LabelMap gt(6, 4, kNegative);
  gt(1, 1) = kPositive;
  write_labels_png(dir.path / "a_gt.png", gt, true);
  write_labels_png(dir.path / "b_gt.png", gt, true);
  write_image_png16(dir.path / "small.png", ImagePlane(3, 3, 0.0));
  write_float_plane(dir.path / "a_ext.kseg", ImagePlane(6, 4, 0.25));

  const std::string text = R"(
classes = ["bg", "fg"]
ignore_value = 128
slice_order = "filename"
[[train]]
image = "b.png"
labels = "b_gt.png"
[[train]]
image = "a.png"
labels = "a_gt.png"
[[test]]
image = "a.png"
labels = "a_gt.png"
externals = { membrane = "a_ext.kseg" }
)";
  const auto m = parse_manifest(text, dir.path);
  CHECK(m.binary());
  CHECK(m.ignore_value == 128);
  REQUIRE(m.train.size() == 2);
  CHECK(m.train[0].image.filename() == "a.png");
  CHECK(m.test[0].externals.at("membrane") == dir.path / "a_ext.kseg");
  CHECK(m.class_labels() == std::vector<std::int32_t>{kNegative, kPositive});
  CHECK_NOTHROW(validate_manifest(m));
  const auto items = load_split(m, Split::Test);
  REQUIRE(items.size() == 1);
  CHECK(items[0].name == "a");
  CHECK(items[0].labels == gt);
  CHECK(items[0].externals_in({"membrane"})[0](0, 0) == 0.25);
  CHECK_THROWS_AS(items[0].externals_in({"other"}), Error);

  CHECK_THROWS_AS(parse_manifest("bogus = 1\n", dir.path), Error);
  CHECK_THROWS_AS(parse_manifest("[[train]]\nimage = \"a.png\"\n", dir.path), Error);
  CHECK_THROWS_AS(parse_manifest("classes = [\"one\"]\n", dir.path), Error);
  CHECK_THROWS_AS(parse_manifest("slice_order = \"random\"\n", dir.path), Error);
  auto missing = parse_manifest("[[train]]\nimage = \"zz.png\"\nlabels = \"a_gt.png\"\n", dir.path);
  CHECK_THROWS_AS(validate_manifest(missing), Error);
  auto mismatch = parse_manifest("[[train]]\nimage = \"small.png\"\nlabels = \"a_gt.png\"\n", dir.path);
  CHECK_THROWS_AS(validate_manifest(mismatch), Error);
}

TEST_CASE("evaluation threshold modes") {
  const ImagePlane s1(4, 1, std::vector<double>{-0.8, -0.6, 0.4, 0.6});
  const ImagePlane s2(4, 1, std::vector<double>{-0.2, -0.1, 0.1, 0.9});
  LabelMap gt1(4, 1), gt2(4, 1);
  gt1.labels = {kNegative, kPositive, kPositive, kPositive};
  gt2.labels = {kNegative, kNegative, kNegative, kPositive};
  const std::vector<EvalItem> items{{"one", &s1, nullptr, &gt1, nullptr}, {"two", &s2, nullptr, &gt2, nullptr}};

  const auto per = evaluate_items(items, true, EvalConfig{});
  CHECK(per[0].accuracy == 1.0);
  CHECK(per[1].accuracy == 1.0);
  CHECK(per[0].threshold == doctest::Approx(-0.7));
  CHECK(per[1].threshold == doctest::Approx(0.5));

  const auto fixed = evaluate_items(items, true, EvalConfig{ThresholdMetric::Accuracy, ThresholdMode::Fixed, 0.0});
  CHECK(fixed[0].accuracy == 0.75);
  CHECK(fixed[1].accuracy == 0.75);
  CHECK(fixed[0].threshold == 0.0);

  const auto global = evaluate_items(items, true, EvalConfig{ThresholdMetric::Accuracy, ThresholdMode::Global, 0.0});
  CHECK(global[0].threshold == global[1].threshold);
  CHECK((global[0].accuracy + global[1].accuracy) / 2 <= 1.0);
  CHECK((global[0].accuracy + global[1].accuracy) / 2 >= (fixed[0].accuracy + fixed[1].accuracy) / 2);

  const auto mean = mean_report(per);
  CHECK(mean.name == "mean");
  CHECK(mean.accuracy == 1.0);

  const std::vector<EvalItem> bad{{"x", nullptr, nullptr, &gt1, nullptr}};
  CHECK_THROWS_AS(evaluate_items(bad, true, EvalConfig{}), Error);
  const std::vector<EvalItem> classes{{"c", nullptr, &gt1, &gt1, nullptr}};
  CHECK(evaluate_items(classes, false, EvalConfig{})[0].accuracy == 1.0);
}

}
