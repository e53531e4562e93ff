#include "knotseg/kernelbank.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include <Eigen/Dense>

namespace knotseg {

bool Kernel::all_zero() const {
  return std::all_of(weights.begin(), weights.end(), [](double w) { return w == 0.0; });
}

std::vector<int> ClusterSet::members(int cluster) const {
  std::vector<int> out;
  for (std::size_t i = 0; i < assignment.size(); ++i)
    if (assignment[i] == cluster) out.push_back(static_cast<int>(i));
  return out;
}

// --- sampling -------------------------------------------------------------

namespace {

struct Location {
  int image, x, y;
};

std::vector<Location> draw(std::vector<Location>& pool, std::size_t n, std::mt19937_64& rng) {
  // Partial Fisher-Yates: the first n entries become a uniform subset.
  for (std::size_t i = 0; i < n; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  return std::vector<Location>(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(n));
}

}  // namespace

std::vector<TrainSample> sample_locations(std::span<const SampleSource> images, std::size_t n_pos,
                                          std::size_t n_neg, int margin, std::uint64_t seed) {
  std::vector<Location> pos, neg;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto& src = images[i];
    if (!src.labels) throw Error("sample_locations: missing label map");
    const auto& lab = *src.labels;
    if (src.mask && (src.mask->width != lab.width || src.mask->height != lab.height))
      throw Error("sample_locations: mask and labels differ in size");
    if (src.restrict && src.restrict->size() != lab.size())
      throw Error("sample_locations: restriction and labels differ in size");
    for (int y = margin; y < lab.height - margin; ++y) {
      for (int x = margin; x < lab.width - margin; ++x) {
        const std::size_t idx = static_cast<std::size_t>(y) * lab.width + x;
        if (src.mask && !src.mask->usable[idx]) continue;
        if (src.restrict && !(*src.restrict)[idx]) continue;
        const auto l = lab.labels[idx];
        if (l == kPositive)
          pos.push_back({static_cast<int>(i), x, y});
        else if (l == kNegative)
          neg.push_back({static_cast<int>(i), x, y});
      }
    }
  }
  if (pos.size() < n_pos) throw SamplingShortfall(kPositive, n_pos, pos.size());
  if (neg.size() < n_neg) throw SamplingShortfall(kNegative, n_neg, neg.size());

  std::mt19937_64 rng(seed);
  std::vector<TrainSample> out;
  out.reserve(n_pos + n_neg);
  for (const auto& l : draw(pos, n_pos, rng)) out.push_back({l.image, l.x, l.y, kPositive, 1.0});
  for (const auto& l : draw(neg, n_neg, rng)) out.push_back({l.image, l.x, l.y, kNegative, 1.0});
  return out;
}

std::vector<TrainSample> sample_locations(const LabelMap& labels, const Mask& mask, std::size_t n_pos,
                                          std::size_t n_neg, const std::vector<std::uint8_t>* restrict,
                                          int margin, std::uint64_t seed) {
  const SampleSource src{&labels, &mask, restrict};
  return sample_locations(std::span<const SampleSource>(&src, 1), n_pos, n_neg, margin, seed);
}

// --- patches and clustering ---------------------------------------------

Patch extract_patch(const ImagePlane& plane, int x, int y, int side, std::string channel) {
  if (side < 1 || side % 2 == 0) throw Error("patch side must be odd and positive");
  Patch p{side, std::vector<double>(static_cast<std::size_t>(side) * side), std::move(channel)};
  const int h = side / 2;
  for (int j = 0; j < side; ++j) {
    const int yy = reflect_index(y + j - h, plane.height());
    for (int i = 0; i < side; ++i) p.values[j * side + i] = plane(reflect_index(x + i - h, plane.width()), yy);
  }
  return p;
}

void center_patch(Patch& patch) {
  if (patch.values.empty()) return;
  const double mean = std::accumulate(patch.values.begin(), patch.values.end(), 0.0) /
                      static_cast<double>(patch.values.size());
  for (double& v : patch.values) v -= mean;
}

namespace {

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double t = a[i] - b[i];
    d += t * t;
  }
  return d;
}

}  // namespace

ClusterSet cluster_positives(std::span<const Patch> patches, int k, std::uint64_t seed, int max_iterations) {
  if (patches.empty()) throw Error("cluster_positives: no patches");
  if (k < 1) throw Error("cluster_positives: k must be positive");
  const std::size_t dim = patches.front().values.size();
  for (const auto& p : patches) {
    if (p.values.size() != dim || p.side != patches.front().side || p.channel != patches.front().channel)
      throw Error("cluster_positives: patches differ in side or channel");
  }

  ClusterSet cs;
  cs.requested_k = k;
  cs.k = std::min<int>(k, static_cast<int>(patches.size()));
  const std::size_t n = patches.size();
  const auto kk = static_cast<std::size_t>(cs.k);

  // k-means++ seeding.
  std::mt19937_64 rng(seed);
  cs.centroids.reserve(kk);
  std::vector<std::uint8_t> chosen(n, 0);
  {
    std::uniform_int_distribution<std::size_t> first(0, n - 1);
    const auto i0 = first(rng);
    chosen[i0] = 1;
    cs.centroids.push_back(patches[i0].values);
  }
  std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
  while (cs.centroids.size() < kk) {
    double total = 0;
    for (std::size_t i = 0; i < n; ++i) {
      nearest[i] = std::min(nearest[i], squared_distance(patches[i].values, cs.centroids.back()));
      total += chosen[i] ? 0.0 : nearest[i];
    }
    std::size_t pick = n;
    if (total > 0) {
      std::uniform_real_distribution<double> u(0.0, total);
      double target = u(rng);
      for (std::size_t i = 0; i < n; ++i) {
        if (chosen[i]) continue;
        target -= nearest[i];
        if (target <= 0) {
          pick = i;
          break;
        }
      }
    }
    if (pick == n) {
      // Duplicates everywhere: take the first unchosen patch.
      for (std::size_t i = 0; i < n; ++i)
        if (!chosen[i]) {
          pick = i;
          break;
        }
    }
    chosen[pick] = 1;
    cs.centroids.push_back(patches[pick].values);
  }

  cs.assignment.assign(n, -1);
  auto assign = [&] {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      int best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < kk; ++c) {
        const double d = squared_distance(patches[i].values, cs.centroids[c]);
        if (d < best_d) {
          best_d = d;
          best = static_cast<int>(c);
        }
      }
      if (cs.assignment[i] != best) {
        cs.assignment[i] = best;
        changed = true;
      }
    }
    return changed;
  };
  auto recompute = [&] {
    std::vector<std::size_t> counts(kk, 0);
    for (auto& c : cs.centroids) std::fill(c.begin(), c.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      auto& c = cs.centroids[cs.assignment[i]];
      for (std::size_t d = 0; d < dim; ++d) c[d] += patches[i].values[d];
      ++counts[cs.assignment[i]];
    }
    // Empty clusters take the farthest member of the largest cluster.
    for (std::size_t c = 0; c < kk; ++c) {
      if (counts[c] > 0) continue;
      const auto largest = static_cast<std::size_t>(
          std::max_element(counts.begin(), counts.end()) - counts.begin());
      std::vector<double> mean(cs.centroids[largest]);
      for (double& v : mean) v /= static_cast<double>(counts[largest]);
      std::size_t far = n;
      double far_d = -1;
      for (std::size_t i = 0; i < n; ++i) {
        if (static_cast<std::size_t>(cs.assignment[i]) != largest) continue;
        const double d = squared_distance(patches[i].values, mean);
        if (d > far_d) {
          far_d = d;
          far = i;
        }
      }
      for (std::size_t d = 0; d < dim; ++d) cs.centroids[largest][d] -= patches[far].values[d];
      --counts[largest];
      cs.assignment[far] = static_cast<int>(c);
      cs.centroids[c] = patches[far].values;
      counts[c] = 1;
      ++cs.repairs;
    }
    for (std::size_t c = 0; c < kk; ++c)
      for (double& v : cs.centroids[c]) v /= static_cast<double>(counts[c]);
  };
  auto objective = [&] {
    double total = 0;
    for (std::size_t i = 0; i < n; ++i) total += squared_distance(patches[i].values, cs.centroids[cs.assignment[i]]);
    return total;
  };

  assign();
  recompute();
  cs.objective.push_back(objective());
  for (int it = 1; it < max_iterations; ++it) {
    if (!assign()) break;
    recompute();
    cs.objective.push_back(objective());
  }
  return cs;
}

// --- ridge kernels --------------------------------------------------------

Kernel learn_kernel(std::span<const Patch> positives, std::span<const Patch> negatives,
                    std::span<const double> weights, double lambda, LambdaMode mode, RidgeReport* report) {
  if (positives.empty() || negatives.empty()) throw Error("learn_kernel: need at least one patch per class");
  if (!(lambda >= 0)) throw Error("learn_kernel: lambda must be non-negative");
  const std::size_t n = positives.size() + negatives.size();
  if (weights.size() != n) throw Error("learn_kernel: one weight per patch required");
  const Patch& ref = positives.front();
  const auto dim = static_cast<Eigen::Index>(ref.values.size());
  auto patch_at = [&](std::size_t i) -> const Patch& {
    return i < positives.size() ? positives[i] : negatives[i - positives.size()];
  };
  for (std::size_t i = 0; i < n; ++i) {
    const auto& p = patch_at(i);
    if (p.side != ref.side || p.channel != ref.channel)
      throw Error("learn_kernel: patches differ in side or channel");
    if (!(weights[i] >= 0)) throw Error("learn_kernel: weights must be non-negative");
  }
  const double wsum = std::accumulate(weights.begin(), weights.end(), 0.0);
  if (!(wsum > 0)) throw Error("learn_kernel: all weights are zero");

  Eigen::VectorXd mean = Eigen::VectorXd::Zero(dim);
  double ymean = 0;
  for (std::size_t i = 0; i < n; ++i) {
    mean += weights[i] * Eigen::Map<const Eigen::VectorXd>(patch_at(i).values.data(), dim);
    ymean += weights[i] * (i < positives.size() ? 1.0 : -1.0);
  }
  mean /= wsum;
  ymean /= wsum;

  // Rows scaled by sqrt(w) so the Gram matrix is X^T W X.
  Eigen::MatrixXd xs(static_cast<Eigen::Index>(n), dim);
  Eigen::VectorXd ys(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    const double sw = std::sqrt(weights[i]);
    const auto row = static_cast<Eigen::Index>(i);
    xs.row(row) = sw * (Eigen::Map<const Eigen::VectorXd>(patch_at(i).values.data(), dim) - mean).transpose();
    ys(row) = sw * ((i < positives.size() ? 1.0 : -1.0) - ymean);
  }
  Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(dim, dim);
  gram.selfadjointView<Eigen::Lower>().rankUpdate(xs.transpose());
  gram = gram.selfadjointView<Eigen::Lower>();
  const Eigen::VectorXd rhs = xs.transpose() * ys;

  double lam = lambda;
  if (mode == LambdaMode::TraceNormalized) lam = lambda * gram.trace() / static_cast<double>(dim);

  Eigen::VectorXd k;
  bool singular = false;
  if (lam > 0) {
    Eigen::MatrixXd a = gram;
    a.diagonal().array() += lam;
    Eigen::LLT<Eigen::MatrixXd> llt(a);
    if (llt.info() == Eigen::Success) {
      k = llt.solve(rhs);
    } else {
      singular = true;
    }
  } else {
    singular = true;
  }
  if (singular) {
    Eigen::MatrixXd a = gram;
    a.diagonal().array() += lam;
    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(a);
    k = cod.solve(rhs);
    singular = cod.rank() < dim;
  }

  Kernel out;
  out.side = ref.side;
  out.channel = ref.channel;
  out.weights.assign(k.data(), k.data() + dim);
  out.bias = ymean - k.dot(mean);
  if (report) *report = RidgeReport{lam, singular};
  return out;
}

// --- bank generation ------------------------------------------------------

PatchSource::PatchSource(std::vector<const ChannelStack*> stacks, const std::vector<double>& scales)
    : stacks_(std::move(stacks)), levels_(stacks_.size()) {
  for (std::size_t i = 0; i < stacks_.size(); ++i) {
    for (double s : scales) {
      if (s == 1.0) continue;
      for (const auto& c : stacks_[i]->channels()) levels_[i].emplace(std::make_pair(c.name, s), downscale(*c.plane, s));
    }
  }
}

const ImagePlane& PatchSource::plane(int image, const std::string& channel, double scale) const {
  if (scale == 1.0) return stacks_.at(image)->plane(channel);
  const auto it = levels_.at(image).find({channel, scale});
  if (it == levels_.at(image).end())
    throw Error("no pyramid level " + std::to_string(scale) + " for channel '" + channel + "'");
  return it->second;
}

Patch PatchSource::extract(const TrainSample& s, const std::string& channel, double scale, int side) const {
  const auto& p = plane(s.image, channel, scale);
  const int cx = std::min(p.width() - 1, static_cast<int>(std::floor(s.x * scale + 1e-9)));
  const int cy = std::min(p.height() - 1, static_cast<int>(std::floor(s.y * scale + 1e-9)));
  return extract_patch(p, cx, cy, side, channel);
}

ClusterSet cluster_training_positives(const PatchSource& source, std::span<const TrainSample> samples,
                                      const std::string& channel, int side, int k, std::uint64_t seed) {
  std::vector<Patch> patches;
  for (const auto& s : samples) {
    if (s.label != kPositive) continue;
    patches.push_back(source.extract(s, channel, 1.0, side));
    center_patch(patches.back());
  }
  return cluster_positives(patches, k, seed);
}

BankResult generate_bank(const PatchSource& source, std::span<const TrainSample> samples,
                         std::span<const double> residuals, const ClusterSet& clusters, const BankConfig& cfg,
                         std::uint64_t seed, int first_id) {
  BankResult result;
  if (cfg.bank_size <= 0) return result;
  if (residuals.size() != samples.size()) throw Error("generate_bank: one residual per sample required");
  if (cfg.filter_sizes.empty() || cfg.channels.empty() || cfg.scales.empty())
    throw Error("generate_bank: empty filter-size, channel, or scale set");

  std::vector<std::size_t> pos_idx, neg_idx;
  for (std::size_t i = 0; i < samples.size(); ++i)
    (samples[i].label == kPositive ? pos_idx : neg_idx).push_back(i);
  if (clusters.assignment.size() != pos_idx.size())
    throw Error("generate_bank: cluster assignment does not match the positive samples");
  std::vector<std::vector<std::size_t>> cluster_members(static_cast<std::size_t>(clusters.k));
  for (std::size_t j = 0; j < pos_idx.size(); ++j)
    cluster_members.at(static_cast<std::size_t>(clusters.assignment[j])).push_back(pos_idx[j]);

  std::vector<std::optional<Kernel>> kernels(static_cast<std::size_t>(cfg.bank_size));
  std::vector<std::string> notes(kernels.size());
  parallel_for(kernels.size(), [&](std::size_t b) {
    std::mt19937_64 rng(derive_seed(seed, b));
    auto pick = [&](std::size_t count) { return std::uniform_int_distribution<std::size_t>(0, count - 1)(rng); };
    const int side = cfg.filter_sizes[pick(cfg.filter_sizes.size())];
    const auto& channel = cfg.channels[pick(cfg.channels.size())];
    const double scale = cfg.scales[pick(cfg.scales.size())];
    const auto& members = cluster_members[pick(cluster_members.size())];

    std::vector<std::size_t> negs = neg_idx;
    if (negs.size() > cfg.max_negatives) {
      for (std::size_t i = 0; i < cfg.max_negatives; ++i)
        std::swap(negs[i], negs[std::uniform_int_distribution<std::size_t>(i, negs.size() - 1)(rng)]);
      negs.resize(cfg.max_negatives);
      std::sort(negs.begin(), negs.end());
    }
    std::vector<Patch> pp, np;
    std::vector<double> w;
    for (auto i : members) {
      pp.push_back(source.extract(samples[i], channel, scale, side));
      w.push_back(std::abs(residuals[i]));
    }
    for (auto i : negs) {
      np.push_back(source.extract(samples[i], channel, scale, side));
      w.push_back(std::abs(residuals[i]));
    }
    try {
      if (pp.empty() || np.empty()) throw Error("no patches for one class");
      RidgeReport rep;
      Kernel k = learn_kernel(pp, np, w, cfg.lambda, cfg.lambda_mode, &rep);
      if (k.all_zero()) throw Error("degenerate all-zero kernel");
      k.id = first_id + static_cast<int>(b);
      k.scale = scale;
      if (rep.singular) notes[b] = "kernel " + std::to_string(k.id) + ": singular system, min-norm solution";
      kernels[b] = std::move(k);
    } catch (const Error& e) {
      notes[b] = "kernel slot " + std::to_string(first_id + static_cast<int>(b)) + " skipped: " + e.what();
    }
  });
  for (std::size_t b = 0; b < kernels.size(); ++b) {
    if (kernels[b]) result.kernels.push_back(std::move(*kernels[b]));
    if (!notes[b].empty()) result.notes.push_back(std::move(notes[b]));
  }
  if (neg_idx.size() > cfg.max_negatives)
    result.notes.push_back("negatives subsampled to " + std::to_string(cfg.max_negatives) + " per kernel");
  return result;
}

// --- responses ------------------------------------------------------------

std::pair<ImagePlane, ImagePlane> posneg(const ImagePlane& response) {
  ImagePlane pos = response, neg = response;
  for (std::size_t i = 0; i < response.size(); ++i) {
    const double v = response.values()[i];
    pos.values()[i] = v > 0 ? v : 0.0;
    neg.values()[i] = v < 0 ? -v : 0.0;
  }
  return {std::move(pos), std::move(neg)};
}

ImagePlane convolve(const ImagePlane& channel, const Kernel& kernel) {
  const int f = kernel.side;
  if (f < 1 || f % 2 == 0 || kernel.weights.size() != static_cast<std::size_t>(f) * f)
    throw Error("convolve: malformed kernel");
  if (f > std::min(channel.width(), channel.height()))
    throw Error("convolve: kernel side " + std::to_string(f) + " exceeds image size");
  const int w = channel.width();
  const int h = channel.height();
  const int r = f / 2;
  const int pw = w + 2 * r;

  std::vector<double> padded(static_cast<std::size_t>(pw) * (h + 2 * r));
  for (int y = -r; y < h + r; ++y) {
    const auto src = channel.row(reflect_index(y, h));
    double* dst = padded.data() + static_cast<std::size_t>(y + r) * pw;
    for (int x = -r; x < w + r; ++x) dst[x + r] = src[reflect_index(x, w)];
  }

  ImagePlane out(w, h, kernel.bias);
  for (int y = 0; y < h; ++y) {
    double* dst = out.row(y).data();
    for (int j = 0; j < f; ++j) {
      const double* src_row = padded.data() + static_cast<std::size_t>(y + j) * pw;
      for (int i = 0; i < f; ++i) {
        const double c = kernel.weights[static_cast<std::size_t>(j) * f + i];
        const double* src = src_row + i;
        for (int x = 0; x < w; ++x) dst[x] += c * src[x];
      }
    }
  }
  return out;
}

}  // namespace knotseg
