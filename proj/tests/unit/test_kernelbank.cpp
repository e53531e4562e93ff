#include <cmath>
#include <random>
#include <set>

#include "doctest.h"
#include "knotseg/kernelbank.hpp"
#include "oracles.hpp"

using namespace knotseg;

namespace {

Patch make_patch(int side, std::vector<double> v, std::string channel = "image") {
  return Patch{side, std::move(v), std::move(channel)};
}

Patch random_patch(int side, std::mt19937_64& rng, double offset = 0.0) {
  std::normal_distribution<double> n(offset, 1.0);
  Patch p{side, std::vector<double>(static_cast<std::size_t>(side) * side), "image"};
  for (auto& v : p.values) v = n(rng);
  return p;
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  return ab / std::sqrt(aa * bb);
}

}  // namespace

TEST_SUITE("kernelbank") {

TEST_CASE("sample_locations: shortfall, empty request, exhaustive draw") {
  LabelMap ignore(10, 10, kIgnoreLabel);
  const Mask all(10, 10, true);
  CHECK_THROWS_AS(sample_locations(ignore, all, 1, 1, nullptr, 0, 1), SamplingShortfall);
  CHECK(sample_locations(ignore, all, 0, 0, nullptr, 0, 1).empty());

  LabelMap half(10, 10, kNegative);
  for (int y = 0; y < 5; ++y)
    for (int x = 0; x < 10; ++x) half(x, y) = kPositive;
  const auto s = sample_locations(half, all, 50, 0, nullptr, 0, 7);
  REQUIRE(s.size() == 50);
  std::set<std::pair<int, int>> seen;
  for (const auto& t : s) {
    CHECK(t.label == kPositive);
    CHECK(half(t.x, t.y) == kPositive);
    seen.insert({t.x, t.y});
  }
  CHECK(seen.size() == 50);
  try {
    sample_locations(half, all, 51, 0, nullptr, 0, 7);
    FAIL("expected shortfall");
  } catch (const SamplingShortfall& e) {
    CHECK(e.label() == kPositive);
    CHECK(e.available() == 50);
  }
}

TEST_CASE("sample_locations honours mask, restrict and margin; deterministic") {
  LabelMap labels(12, 12, kNegative);
  for (int y = 0; y < 12; ++y)
    for (int x = 6; x < 12; ++x) labels(x, y) = kPositive;
  Mask mask(12, 12, true);
  mask.usable[static_cast<std::size_t>(5) * 12 + 8] = 0;
  std::vector<std::uint8_t> restrict(144, 1);
  restrict[static_cast<std::size_t>(6) * 12 + 3] = 0;
  const auto a = sample_locations(labels, mask, 10, 10, &restrict, 2, 99);
  const auto b = sample_locations(labels, mask, 10, 10, &restrict, 2, 99);
  CHECK(a == b);
  for (const auto& t : a) {
    CHECK(t.x >= 2);
    CHECK(t.x < 10);
    CHECK(t.y >= 2);
    CHECK(t.y < 10);
    CHECK(!(t.x == 8 && t.y == 5));
    CHECK(!(t.x == 3 && t.y == 6));
  }
  CHECK(a != sample_locations(labels, mask, 10, 10, &restrict, 2, 100));
}

TEST_CASE("cluster_positives: k=1 mean, separated groups, k=n, objective monotone") {
  std::mt19937_64 rng(11);
  std::vector<Patch> ps;
  for (int i = 0; i < 12; ++i) ps.push_back(random_patch(3, rng));

  const auto one = cluster_positives(ps, 1, 3);
  REQUIRE(one.centroids.size() == 1);
  for (std::size_t d = 0; d < 9; ++d) {
    double mean = 0;
    for (const auto& p : ps) mean += p.values[d];
    CHECK(one.centroids[0][d] == doctest::Approx(mean / 12).epsilon(1e-12));
  }

  std::vector<Patch> groups;
  for (int i = 0; i < 6; ++i) groups.push_back(make_patch(3, std::vector<double>(9, 0.0)));
  for (int i = 0; i < 6; ++i) groups.push_back(make_patch(3, std::vector<double>(9, 1.0)));
  const auto two = cluster_positives(groups, 2, 5);
  for (int i = 1; i < 6; ++i) CHECK(two.assignment[i] == two.assignment[0]);
  for (int i = 7; i < 12; ++i) CHECK(two.assignment[i] == two.assignment[6]);
  CHECK(two.assignment[0] != two.assignment[6]);

  const auto all = cluster_positives(ps, 12, 5);
  CHECK(all.k == 12);
  CHECK(all.objective.back() == doctest::Approx(0.0));
  std::set<int> distinct(all.assignment.begin(), all.assignment.end());
  CHECK(distinct.size() == 12);

  const auto lowered = cluster_positives(ps, 20, 5);
  CHECK(lowered.k == 12);
  CHECK(lowered.requested_k == 20);

  std::vector<Patch> many;
  for (int i = 0; i < 200; ++i) many.push_back(random_patch(5, rng, (i % 4) * 0.7));
  const auto km = cluster_positives(many, 5, 17);
  for (std::size_t i = 1; i < km.objective.size(); ++i) CHECK(km.objective[i] <= km.objective[i - 1] + 1e-9);
  for (int c = 0; c < km.k; ++c) CHECK(!km.members(c).empty());
  CHECK(km.assignment == cluster_positives(many, 5, 17).assignment);
}

TEST_CASE("learn_kernel: two opposite patches give a kernel along p") {
  std::mt19937_64 rng(21);
  const auto p = random_patch(5, rng);
  Patch n = p;
  for (auto& v : n.values) v = -v;
  RidgeReport rep;
  const std::vector<double> w{1.0, 1.0};
  const auto k = learn_kernel(std::span(&p, 1), std::span(&n, 1), w, 0.0, LambdaMode::Absolute, &rep);
  CHECK(cosine(k.weights, p.values) >= 0.999);
  CHECK(std::fabs(k.bias) < 1e-9);
  CHECK(rep.singular);
}

TEST_CASE("learn_kernel matches the dense ridge oracle") {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> uw(0.1, 2.0);
  for (int trial = 0; trial < 20; ++trial) {
    const int side = trial % 2 ? 3 : 5;
    std::vector<Patch> pos, neg;
    for (int i = 0; i < 30; ++i) pos.push_back(random_patch(side, rng, 0.3));
    for (int i = 0; i < 40; ++i) neg.push_back(random_patch(side, rng, -0.2));
    std::vector<double> w(70);
    for (auto& v : w) v = uw(rng);
    const double lambda = trial % 3 == 0 ? 0.5 : 1e-2;
    const auto k = learn_kernel(pos, neg, w, lambda, LambdaMode::Absolute);

    std::vector<std::vector<double>> x;
    std::vector<double> y;
    for (const auto& p : pos) x.push_back(p.values), y.push_back(1.0);
    for (const auto& p : neg) x.push_back(p.values), y.push_back(-1.0);
    const auto ref = oracle::dense_ridge(x, y, w, lambda);
    long double num = 0, den = 0;
    for (std::size_t i = 0; i < k.weights.size(); ++i) {
      num += (k.weights[i] - ref[i]) * (k.weights[i] - ref[i]);
      den += ref[i] * ref[i];
    }
    num += (k.bias - ref.back()) * (k.bias - ref.back());
    den += ref.back() * ref.back();
    CHECK(std::sqrt(static_cast<double>(num / den)) < 1e-8);
  }
}

TEST_CASE("learn_kernel: ridge limit, duplication and weight scaling") {
  std::mt19937_64 rng(41);
  std::vector<Patch> pos, neg;
  for (int i = 0; i < 8; ++i) pos.push_back(random_patch(3, rng, 0.5));
  for (int i = 0; i < 12; ++i) neg.push_back(random_patch(3, rng));
  std::vector<double> w(20);
  std::uniform_real_distribution<double> uw(0.5, 1.5);
  for (auto& v : w) v = uw(rng);

  const auto big = learn_kernel(pos, neg, w, 1e12, LambdaMode::Absolute);
  double wmean = 0, wsum = 0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    wmean += w[i] * (i < pos.size() ? 1.0 : -1.0);
    wsum += w[i];
  }
  for (double v : big.weights) CHECK(std::fabs(v) < 1e-9);
  CHECK(big.bias == doctest::Approx(wmean / wsum).epsilon(1e-6));

  const auto base = learn_kernel(pos, neg, w, 0.1, LambdaMode::Absolute);
  std::vector<Patch> pos2 = pos, neg2 = neg;
  pos2.insert(pos2.end(), pos.begin(), pos.end());
  neg2.insert(neg2.end(), neg.begin(), neg.end());
  std::vector<double> w2(w.begin(), w.begin() + 8);
  w2.insert(w2.end(), w.begin(), w.begin() + 8);
  w2.insert(w2.end(), w.begin() + 8, w.end());
  w2.insert(w2.end(), w.begin() + 8, w.end());
  // Duplicating doubles the data term, so lambda doubles to keep the same minimiser.
  const auto dup = learn_kernel(pos2, neg2, w2, 0.2, LambdaMode::Absolute);
  for (std::size_t i = 0; i < 9; ++i) CHECK(dup.weights[i] == doctest::Approx(base.weights[i]).epsilon(1e-9));

  const auto dup_tn = learn_kernel(pos2, neg2, w2, 0.1, LambdaMode::TraceNormalized);
  const auto base_tn = learn_kernel(pos, neg, w, 0.1, LambdaMode::TraceNormalized);
  std::vector<double> w3 = w;
  for (auto& v : w3) v *= 7.5;
  const auto scaled_tn = learn_kernel(pos, neg, w3, 0.1, LambdaMode::TraceNormalized);
  for (std::size_t i = 0; i < 9; ++i) {
    CHECK(dup_tn.weights[i] == doctest::Approx(base_tn.weights[i]).epsilon(1e-9));
    CHECK(scaled_tn.weights[i] == doctest::Approx(base_tn.weights[i]).epsilon(1e-9));
  }
  CHECK_THROWS_AS(learn_kernel(pos, neg, w, -1.0), Error);
  CHECK_THROWS_AS(learn_kernel(pos, {}, std::vector<double>(8, 1.0), 0.1), Error);
}

TEST_CASE("generate_bank: empty, deterministic, single cluster") {
  std::mt19937_64 rng(51);
  ChannelStack stack;
  stack.add("image", oracle::random_plane(40, 40, rng, 0, 1), ChannelKind::Image);
  LabelMap labels(40, 40, kNegative);
  for (int y = 0; y < 40; ++y)
    for (int x = 0; x < 20; ++x) labels(x, y) = kPositive;
  const Mask mask(40, 40, true);
  const auto samples = sample_locations(labels, mask, 60, 60, nullptr, 7, 3);
  const std::vector<double> residuals(samples.size(), 1.0);
  PatchSource source({&stack}, {1.0});

  BankConfig cfg;
  cfg.channels = {"image"};
  cfg.bank_size = 0;
  const auto clusters = cluster_training_positives(source, samples, "image", 5, 1, 9);
  CHECK(clusters.k == 1);
  CHECK(generate_bank(source, samples, residuals, clusters, cfg, 1).kernels.empty());

  cfg.bank_size = 8;
  const auto a = generate_bank(source, samples, residuals, clusters, cfg, 1);
  const auto b = generate_bank(source, samples, residuals, clusters, cfg, 1);
  REQUIRE(a.kernels.size() == 8);
  CHECK(a.kernels == b.kernels);
  for (std::size_t i = 0; i < 8; ++i) {
    CHECK(a.kernels[i].id == static_cast<int>(i));
    CHECK(!a.kernels[i].all_zero());
    CHECK(std::set<int>{5, 7, 9, 11, 15}.count(a.kernels[i].side) == 1);
  }
  CHECK(a.kernels != generate_bank(source, samples, residuals, clusters, cfg, 2).kernels);
}

TEST_CASE("posneg splits and reconstructs") {
  ImagePlane r(3, 1, std::vector<double>{1.0, -2.0, 0.0});
  const auto [pos, neg] = posneg(r);
  CHECK(pos.values()[0] == 1.0);
  CHECK(pos.values()[1] == 0.0);
  CHECK(neg.values()[1] == 2.0);
  CHECK(neg.values()[0] == 0.0);

  std::mt19937_64 rng(61);
  const auto all_neg = oracle::random_plane(6, 6, rng, -3.0, -0.1);
  const auto split = posneg(all_neg);
  for (double v : split.first.values()) CHECK(v == 0.0);
  const auto p = oracle::random_plane(9, 7, rng);
  const auto [a, b] = posneg(p);
  for (std::size_t i = 0; i < p.size(); ++i) {
    CHECK(a.values()[i] - b.values()[i] == p.values()[i]);
    CHECK(a.values()[i] * b.values()[i] == 0.0);
  }
}

TEST_CASE("convolve: identity, box, naive oracle") {
  std::mt19937_64 rng(71);
  const auto img = oracle::random_plane(7, 7, rng);
  Kernel id{0, 3, std::vector<double>(9, 0.0), 0.0, "image"};
  id.weights[4] = 1.0;
  CHECK(convolve(img, id) == img);
  Kernel box{0, 3, std::vector<double>(9, 1.0), 0.0, "image"};
  const auto boxed = convolve(ImagePlane(6, 5, 0.5), box);
  for (double v : boxed.values()) CHECK(v == 4.5);
  for (int t = 0; t < 50; ++t) {
    const auto k = oracle::random_kernel(t % 2 ? 3 : 5, rng);
    const auto p = oracle::random_plane(5 + t % 7, 5 + t % 5, rng);
    CHECK(convolve(p, k) == oracle::naive_convolve(p, k));
  }
  CHECK_THROWS_AS(convolve(ImagePlane(4, 4), oracle::random_kernel(5, rng)), Error);
}

}
