#include <cmath>
#include <random>

#include "doctest.h"
#include "knotseg/imagecore.hpp"
#include "oracles.hpp"

using namespace knotseg;

TEST_SUITE("imagecore") {

TEST_CASE("normalize_score reference values") {
  CHECK(normalize_score(0.0) == 0.0);
  CHECK(normalize_score(1.0) == doctest::Approx(0.7615941559557649).epsilon(1e-15));
  CHECK(normalize_score(1.0) == doctest::Approx(oracle::precise_tanh(1.0)).epsilon(1e-15));
  for (double x : {0.1, 2.0, 10.0}) CHECK(normalize_score(-x) == -normalize_score(x));
}

TEST_CASE("normalize_score tracks tanh, is monotone and bounded") {
  double prev = -2.0;
  for (int i = 0; i <= 4000; ++i) {
    const double x = -20.0 + 40.0 * i / 4000.0;
    const double v = normalize_score(x);
    CHECK(std::fabs(v - std::tanh(x)) < 1e-12);
    CHECK(std::fabs(v - oracle::precise_tanh(x)) < 1e-12);
    CHECK(v >= prev);
    CHECK(std::fabs(v) <= 1.0);
    prev = v;
  }
}

TEST_CASE("normalize_scores sets the flag and rejects bad input") {
  ScoreMap raw{ImagePlane(3, 2, 0.5), false};
  const auto n = normalize_scores(raw);
  CHECK(n.normalized);
  CHECK(n.plane(2, 1) == normalize_score(0.5));
  CHECK_THROWS_AS(normalize_scores(n), Error);
  raw.plane(1, 1) = std::nan("");
  CHECK_THROWS_WITH_AS(normalize_scores(raw), doctest::Contains("(1, 1)"), Error);
}

TEST_CASE("channel stack keeps planes bit-exact and rejects mismatches") {
  std::mt19937_64 rng(1);
  const auto a = oracle::random_plane(7, 5, rng);
  ChannelStack s;
  s.add("image", a, ChannelKind::Image);
  s.add("f", oracle::random_plane(7, 5, rng), ChannelKind::Feature);
  CHECK(s.plane("image") == a);
  CHECK(s.names() == std::vector<std::string>{"image", "f"});
  CHECK(s.names_of_kind(ChannelKind::Feature) == std::vector<std::string>{"f"});
  CHECK_THROWS_AS(s.add("image", a, ChannelKind::Image), Error);
  CHECK_THROWS_AS(s.add("g", ImagePlane(6, 5), ChannelKind::Feature), Error);
  CHECK_THROWS_AS(s.add("score", ImagePlane(7, 5, 1.5), ChannelKind::Score), Error);
  CHECK_THROWS_AS(s.plane("missing"), Error);
  const auto sub = s.select({"f"});
  CHECK(sub.size() == 1);
}

TEST_CASE("feature channels: counts, constants, impulse response") {
  const auto kinds = std::vector<FeatureKind>{FeatureKind::Gaussian, FeatureKind::GradientMagnitude,
                                              FeatureKind::Laplacian, FeatureKind::StructureTensorEigenvalue,
                                              FeatureKind::HessianEigenvalue};
  const auto spec = FeatureSpec::grid(kinds, FeatureSpec::default_sigmas());
  CHECK(spec.generators.size() == 30);

  const ImagePlane flat(24, 24, 0.4);
  const auto stack = compute_feature_channels(flat, spec);
  CHECK(stack.size() == 30);
  for (const auto& c : stack.channels()) {
    CHECK(c.plane->width() == 24);
    CHECK(c.kind == ChannelKind::Feature);
    const bool smoothing = c.name.rfind("gaussian@", 0) == 0;
    for (double v : c.plane->values()) CHECK(std::fabs(v - (smoothing ? 0.4 : 0.0)) < 1e-12);
  }

  const double sigma = 1.6;
  const int c = 20;
  ImagePlane impulse(41, 41, 0.0);
  impulse(c, c) = 1.0;
  const auto g = compute_feature_channels(impulse, FeatureSpec{{{FeatureKind::Gaussian, sigma}}});
  const int radius = static_cast<int>(std::ceil(3 * sigma));
  double norm = 0;
  for (int i = -radius; i <= radius; ++i) norm += std::exp(-i * i / (2 * sigma * sigma));
  for (int dx = -radius; dx <= radius; ++dx) {
    const double expected = (1.0 / norm) * std::exp(-dx * dx / (2 * sigma * sigma)) / norm;
    CHECK(g.plane(feature_channel_name({FeatureKind::Gaussian, sigma}))(c + dx, c) ==
          doctest::Approx(expected).epsilon(1e-12));
  }
  CHECK_THROWS_AS(compute_feature_channels(flat, FeatureSpec{{{FeatureKind::Gaussian, 0.0}}}), Error);
}

TEST_CASE("feature channels are deterministic") {
  std::mt19937_64 rng(5);
  const auto img = oracle::random_plane(20, 17, rng, 0, 1);
  const auto spec = FeatureSpec::grid({FeatureKind::HessianEigenvalue, FeatureKind::Laplacian}, {0.7, 3.5});
  const auto a = compute_feature_channels(img, spec), b = compute_feature_channels(img, spec);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(*a.channels()[i].plane == *b.channels()[i].plane);
}

TEST_CASE("pyramid sizes, identity level and constants") {
  std::mt19937_64 rng(2);
  const auto img = oracle::random_plane(100, 100, rng);
  const auto p = build_pyramid(img, {1.0, 0.5, 0.25});
  REQUIRE(p.size() == 3);
  CHECK(p[0] == img);
  CHECK(p[1].width() == 50);
  CHECK(p[2].height() == 25);
  CHECK(build_pyramid(ImagePlane(33, 21, 0.25), {1.0, 1.0 / 3})[1].width() == 11);
  for (const auto& level : build_pyramid(ImagePlane(30, 30, 0.7), {1.0, 0.5}))
    for (double v : level.values()) CHECK(v == doctest::Approx(0.7).epsilon(1e-12));
  CHECK_THROWS_AS(build_pyramid(img, {}), Error);
  CHECK_THROWS_AS(build_pyramid(img, {0.5}), Error);
  CHECK_THROWS_AS(build_pyramid(img, {1.0, 1.5}), Error);
}

TEST_CASE("reslice geometry and involution") {
  std::mt19937_64 rng(3);
  Volume v;
  for (int z = 0; z < 3; ++z) v.slices.push_back(oracle::random_plane(5, 4, rng));
  const auto xz = reslice(v, ReslicePlane::XZ);
  CHECK(xz.depth() == 4);
  CHECK(xz.width() == 5);
  CHECK(xz.height() == 3);
  for (int z = 0; z < 3; ++z)
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 5; ++x) CHECK(xz.slices[y](x, z) == v.slices[z](x, y));
  const auto yz = reslice(v, ReslicePlane::YZ);
  CHECK(yz.depth() == 5);
  for (int z = 0; z < 3; ++z)
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 5; ++x) CHECK(yz.slices[x](z, y) == v.slices[z](x, y));
  for (auto plane : {ReslicePlane::XZ, ReslicePlane::YZ}) {
    const auto back = reslice(reslice(v, plane), plane);
    REQUIRE(back.depth() == v.depth());
    for (int z = 0; z < 3; ++z) CHECK(back.slices[z] == v.slices[z]);
    CHECK(back.axes == v.axes);
  }
  Volume one;
  one.slices.push_back(oracle::random_plane(6, 4, rng));
  const auto r = reslice(one, ReslicePlane::XZ);
  CHECK(r.depth() == 4);
  CHECK(r.width() == 6);
  CHECK(r.height() == 1);
}

TEST_CASE("reflect index folds without repeating the edge") {
  for (int n : {1, 2, 3, 7})
    for (int i = -20; i < 20; ++i) CHECK(reflect_index(i, n) == oracle::mirror(i, n));
  CHECK(reflect_index(-1, 4) == 1);
  CHECK(reflect_index(4, 4) == 2);
}

}
