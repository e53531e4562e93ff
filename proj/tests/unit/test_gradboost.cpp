#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "knotseg/gradboost.hpp"
#include "oracles.hpp"

using namespace knotseg;

namespace {

struct Toy {
  ChannelStack stack;
  LabelMap labels;
};

// Bright left half labelled +1, dark right half -1, mild noise.
Toy separable(int w, int h, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 0.05);
  ImagePlane img(w, h);
  Toy t{{}, LabelMap(w, h, kNegative)};
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const bool pos = x < w / 2;
      img(x, y) = (pos ? 0.7 : 0.2) + n(rng);
      if (pos) t.labels(x, y) = kPositive;
    }
  t.stack.add("image", img, ChannelKind::Image);
  return t;
}

TrainConfig small_config(int rounds) {
  auto cfg = TrainConfig::improved();
  cfg.rounds = rounds;
  cfg.depth = 2;
  cfg.bank.bank_size = 4;
  cfg.bank.filter_sizes = {3, 5};
  cfg.n_pos = 80;
  cfg.n_neg = 80;
  cfg.clusters = 2;
  cfg.pool_radius = 1;
  cfg.seed = 7;
  return cfg;
}

}  // namespace

TEST_SUITE("gradboost") {

TEST_CASE("pseudo residuals and deviance") {
  const std::vector<int> y{1, -1, 1, -1, 1};
  const std::vector<double> f{0.0, 0.0, 2.0, -2.0, -3.5};
  const auto r = pseudo_residuals(y, f);
  CHECK(r[0] == 1.0);
  CHECK(r[1] == -1.0);
  CHECK(r[2] == doctest::Approx(0.0359724).epsilon(1e-6));
  CHECK(r[3] == doctest::Approx(-0.0359724).epsilon(1e-6));
  for (std::size_t i = 0; i < y.size(); ++i) CHECK(r[i] == doctest::Approx(oracle::precise_residual(y[i], f[i])).epsilon(1e-14));

  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-8, 8);
  for (int i = 0; i < 200; ++i) {
    const double s = u(rng);
    const int lab = i % 2 ? 1 : -1;
    const double ri = pseudo_residuals(std::vector<int>{lab}, std::vector<double>{s})[0];
    CHECK(ri == doctest::Approx(oracle::precise_residual(lab, s)).epsilon(1e-12));
    CHECK(std::fabs(ri) <= 2.0);
    CHECK(ri * lab > 0);
    const double h = 1e-6;
    const double grad = (deviance(lab, s + h) - deviance(lab, s - h)) / (2 * h);
    CHECK(-grad == doctest::Approx(ri).epsilon(1e-5));
  }
  CHECK(deviance(1, 0.0) == doctest::Approx(std::log(2.0)));
  CHECK(deviance(-1, 400.0) == doctest::Approx(800.0));
  CHECK(std::isfinite(deviance(1, -1e6)));
  CHECK_THROWS_AS(pseudo_residuals(y, std::vector<double>{0.0}), Error);
}

TEST_CASE("newton leaf value") {
  CHECK(newton_leaf_value(std::vector<double>{1.0, 1.0}, 4.0) == 1.0);
  CHECK(newton_leaf_value(std::vector<double>{1.0, -1.0}, 4.0) == 0.0);
  CHECK(newton_leaf_value(std::vector<double>{}, 4.0) == 0.0);
  CHECK(newton_leaf_value(std::vector<double>{2.0, 2.0}, 4.0) == 0.0);
  CHECK(newton_leaf_value(std::vector<double>{1.9}, 4.0) == 4.0);
  CHECK(newton_leaf_value(std::vector<double>{-1.9}, 4.0) == -4.0);
  CHECK(newton_leaf_value(std::vector<double>{1.9}, 20.0) == doctest::Approx(10.0));
  const std::vector<double> r{0.5, -0.2, 1.5};
  const double num = 0.5 - 0.2 + 1.5, den = 0.5 * 1.5 + 0.2 * 1.8 + 1.5 * 0.5;
  CHECK(newton_leaf_value(r, 4.0) == doctest::Approx(num / den).epsilon(1e-14));
}

TEST_CASE("quantile thresholds") {
  CHECK(quantile_thresholds({1.0}, 5).empty());
  CHECK(quantile_thresholds({2.0, 2.0, 2.0}, 5).empty());
  const auto t = quantile_thresholds({4.0, 1.0, 3.0, 2.0}, 3);
  CHECK(t == std::vector<double>{1.5, 2.5, 3.5});
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n;
  for (int trial = 0; trial < 40; ++trial) {
    std::vector<double> v(3 + trial * 7);
    for (auto& x : v) x = std::round(n(rng) * 3) / 3;
    const int q = 1 + trial % 12;
    const auto got = quantile_thresholds(v, q);
    CHECK(got == oracle::quantile_cuts(v, q));
    CHECK(got.size() <= static_cast<std::size_t>(q));
    for (std::size_t i = 1; i < got.size(); ++i) CHECK(got[i] > got[i - 1]);
  }
  const double a = 1.0, b = std::nextafter(1.0, 2.0);
  const auto adj = quantile_thresholds({a, b}, 1);
  REQUIRE(adj.size() == 1);
  CHECK(adj[0] > a);
  CHECK(adj[0] <= b);
}

TEST_CASE("best_split: stump example and constant residuals") {
  const CandidateValues v{{0.0, 1.0, 2.0, 3.0}};
  const std::vector<double> r{-1.0, -1.0, 1.0, 1.0};
  const std::vector<int> all{0, 1, 2, 3};
  const auto s = best_split(v, r, all, 3);
  CHECK(s.candidate == 0);
  CHECK(s.threshold == 1.5);
  CHECK(s.sse == doctest::Approx(0.0));
  const std::vector<double> flat(4, 0.7);
  CHECK(best_split(v, flat, all, 3).candidate == -1);
  CHECK(best_split(v, r, std::vector<int>{2}, 3).candidate == -1);
}

TEST_CASE("best_split agrees with the brute-force scan") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n;
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t m = 10 + trial * 3;
    CandidateValues values(1 + trial % 6, std::vector<double>(m));
    for (auto& col : values)
      for (auto& x : col) x = trial % 3 == 0 ? std::round(n(rng) * 2) : n(rng);
    std::vector<double> r(m);
    for (std::size_t i = 0; i < m; ++i) r[i] = 0.8 * values[0][i] + n(rng);
    const int q = 1 + trial % 10;
    std::vector<int> all(m);
    std::iota(all.begin(), all.end(), 0);
    const auto got = best_split(values, r, all, q);
    const auto ref = oracle::brute_split(values, r, q);
    CHECK((got.candidate < 0) == (ref.candidate < 0));
    if (ref.candidate >= 0) {
      CHECK(got.sse == doctest::Approx(ref.sse).epsilon(1e-9));
      CHECK(got.candidate == ref.candidate);
      CHECK(got.threshold == ref.threshold);
    }
  }
}

TEST_CASE("fit_tree: depth limit, separable data, leaves") {
  std::vector<double> x(40), r(40);
  for (int i = 0; i < 40; ++i) {
    x[i] = i;
    r[i] = i < 20 ? -1.0 : 1.0;
  }
  const CandidateValues values{x};
  const auto stump = fit_tree(values, r, FitOptions{1, 5, 4.0});
  REQUIRE(stump.size() == 3);
  CHECK(!stump[0].leaf);
  CHECK(stump[0].threshold == 19.5);
  CHECK(stump[stump[0].left].value == -1.0);
  CHECK(stump[stump[0].right].value == 1.0);
  for (int i = 0; i < 40; ++i) CHECK(evaluate_fit(stump, values, i) == r[i]);

  const auto flat = fit_tree(values, std::vector<double>(40, 0.5), FitOptions{3, 5, 4.0});
  CHECK(flat.size() == 1);
  CHECK(flat[0].value == doctest::Approx(0.5 / 0.75));

  std::mt19937_64 rng(4);
  std::normal_distribution<double> n;
  CandidateValues noisy(3, std::vector<double>(200));
  std::vector<double> rn(200);
  for (auto& col : noisy)
    for (auto& v : col) v = n(rng);
  for (auto& v : rn) v = std::tanh(n(rng));
  for (int depth = 1; depth <= 4; ++depth) {
    const auto tree = fit_tree(noisy, rn, FitOptions{depth, 8, 4.0});
    CHECK(tree.size() <= static_cast<std::size_t>((1 << (depth + 1)) - 1));
    for (const auto& node : tree)
      if (node.leaf) CHECK(std::fabs(node.value) <= 4.0);
  }
  CHECK_THROWS_AS(fit_tree(noisy, rn, FitOptions{0, 8, 4.0}), Error);
  CHECK_THROWS_AS(fit_tree(noisy, std::vector<double>(5), FitOptions{2, 8, 4.0}), Error);
}

TEST_CASE("train: separable task is learned exactly, loss decreases") {
  auto toy = separable(32, 32, 11);
  const BoostInput in{&toy.stack, &toy.labels};
  const auto res = train_kernelboost(std::span(&in, 1), small_config(20));
  CHECK(res.model.trees.size() == 20);
  CHECK(res.rounds.size() == 20);
  for (const auto& log : res.rounds) CHECK(log.loss_after <= log.loss_before + 1e-9);
  CHECK(res.rounds.back().loss_after < res.initial_loss);

  const auto scores = predict_scores(res.model, toy.stack);
  for (std::size_t i = 0; i < res.samples.size(); ++i)
    CHECK((res.sample_scores[i] > 0) == (res.samples[i].label == kPositive));
  int correct = 0, counted = 0;
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) {
      if (std::abs(x - 16) < 3) continue;
      ++counted;
      correct += (scores.plane(x, y) > 0) == (toy.labels(x, y) == kPositive);
    }
  CHECK(correct == counted);

  for (std::size_t i = 0; i < scores.plane.size(); ++i)
    CHECK(scores.plane.values()[i] == doctest::Approx(res.train_scores[0].values()[i]).epsilon(1e-9));
  for (std::size_t i = 0; i < res.samples.size(); ++i) {
    const auto& s = res.samples[i];
    CHECK(res.sample_scores[i] == doctest::Approx(scores.plane(s.x, s.y)).epsilon(1e-9));
  }
}

TEST_CASE("train: determinism, resume, zero rounds, zero shrinkage") {
  auto toy = separable(24, 24, 12);
  const BoostInput in{&toy.stack, &toy.labels};
  const auto a = train_kernelboost(std::span(&in, 1), small_config(6));
  const auto b = train_kernelboost(std::span(&in, 1), small_config(6));
  CHECK(a.model.trees == b.model.trees);
  CHECK(a.model.kernels == b.model.kernels);

  const auto head = train_kernelboost(std::span(&in, 1), small_config(3));
  const auto tail = train_kernelboost(std::span(&in, 1), small_config(3), &head.model);
  REQUIRE(tail.model.trees.size() == 6);
  CHECK(tail.model.config.rounds == 6);
  for (std::size_t t = 0; t < 6; ++t) {
    const auto& x = a.model.trees[t].nodes;
    const auto& y = tail.model.trees[t].nodes;
    REQUIRE(x.size() == y.size());
    for (std::size_t n = 0; n < x.size(); ++n) {
      CHECK(x[n].leaf == y[n].leaf);
      CHECK(x[n].test == y[n].test);
      CHECK(x[n].value == doctest::Approx(y[n].value).epsilon(1e-9));
    }
  }

  const auto zero = train_kernelboost(std::span(&in, 1), small_config(0));
  CHECK(zero.model.trees.empty());
  const auto f0 = predict_scores(zero.model, toy.stack);
  for (double v : f0.plane.values()) CHECK(v == zero.model.base_score);
  CHECK(zero.model.base_score == doctest::Approx(0.0));  // half the pixels are positive

  auto cfg = small_config(4);
  cfg.shrinkage = 0.0;
  const auto frozen = train_kernelboost(std::span(&in, 1), cfg);
  const auto fs = predict_scores(frozen.model, toy.stack);
  for (double v : fs.plane.values()) CHECK(v == frozen.model.base_score);
}

TEST_CASE("train: base score is the class prior of the eligible pixels") {
  auto toy = separable(24, 24, 5);
  for (int y = 0; y < 24; ++y)
    for (int x = 6; x < 12; ++x) toy.labels(x, y) = kNegative;  // positives: x < 6
  for (int x = 0; x < 24; ++x) toy.labels(x, 10) = kIgnoreLabel;
  Mask mask(24, 24);
  for (int y = 0; y < 24; ++y) mask.usable[static_cast<std::size_t>(y) * 24 + 20] = 0;
  BoostInput in{&toy.stack, &toy.labels};
  in.mask = &mask;
  auto cfg = small_config(0);
  cfg.n_pos = 20;
  cfg.sample_margin = 2;

  int pos = 0, all = 0;
  for (int y = 2; y < 22; ++y)
    for (int x = 2; x < 22; ++x) {
      if (y == 10 || x == 20) continue;
      ++all;
      pos += x < 6;
    }
  const double p = static_cast<double>(pos) / all;
  const auto res = train_kernelboost(std::span(&in, 1), cfg);
  CHECK(res.model.base_score == doctest::Approx(0.5 * std::log(p / (1 - p))).epsilon(1e-12));
  CHECK(res.model.base_score < 0);
}

TEST_CASE("train: plain variant and configuration errors") {
  auto toy = separable(24, 24, 13);
  const BoostInput in{&toy.stack, &toy.labels};
  auto cfg = TrainConfig::kernelboost();
  cfg.rounds = 3;
  cfg.bank.bank_size = 3;
  cfg.bank.filter_sizes = {3};
  cfg.n_pos = cfg.n_neg = 50;
  const auto res = train_kernelboost(std::span(&in, 1), cfg);
  for (const auto& tree : res.model.trees)
    for (const auto& node : tree.nodes)
      if (!node.leaf) {
        CHECK(node.test.part == ResponsePart::Raw);
        CHECK(node.test.pool.kind == PoolKind::None);
      }
  auto bad = cfg;
  bad.bank.filter_sizes = {4};
  CHECK_THROWS_AS(train_kernelboost(std::span(&in, 1), bad), Error);
  bad = cfg;
  bad.shrinkage = 1.5;
  CHECK_THROWS_AS(train_kernelboost(std::span(&in, 1), bad), Error);
  LabelMap single(24, 24, kPositive);
  const BoostInput one{&toy.stack, &single};
  CHECK_THROWS(train_kernelboost(std::span(&one, 1), cfg));
  ChannelStack missing;
  missing.add("other", ImagePlane(24, 24, 0.0), ChannelKind::Image);
  CHECK_THROWS_AS(predict_scores(res.model, missing), Error);
}

}
