#include "knotseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <set>
#include <sstream>

namespace knotseg {

namespace {

void check_shapes(const LabelMap& pred, const LabelMap& gt, const Mask* mask) {
  if (pred.width != gt.width || pred.height != gt.height)
    throw Error("metrics: prediction and ground truth differ in size");
  if (mask && (mask->width != gt.width || mask->height != gt.height))
    throw Error("metrics: mask and ground truth differ in size");
}

bool eligible(const LabelMap& gt, const Mask* mask, std::size_t i) {
  return gt.labels[i] != kIgnoreLabel && (!mask || mask->usable[i]);
}

double ratio_or_one(double num, double den) { return den > 0 ? num / den : 1.0; }

std::uint64_t pairs(std::uint64_t n) { return n < 2 ? 0 : n * (n - 1) / 2; }

}  // namespace

double accuracy(const LabelMap& pred, const LabelMap& gt, const Mask* mask) {
  check_shapes(pred, gt, mask);
  std::uint64_t n = 0, hit = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (!eligible(gt, mask, i)) continue;
    ++n;
    hit += pred.labels[i] == gt.labels[i] ? 1 : 0;
  }
  if (n == 0) throw Error("accuracy: no eligible pixels");
  return static_cast<double>(hit) / static_cast<double>(n);
}

BinaryScores binary_metrics(const LabelMap& pred, const LabelMap& gt, const Mask* mask, std::int32_t positive) {
  check_shapes(pred, gt, mask);
  BinaryScores s;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (!eligible(gt, mask, i)) continue;
    const bool p = pred.labels[i] == positive;
    const bool g = gt.labels[i] == positive;
    if (p && g) ++s.tp;
    else if (p) ++s.fp;
    else if (g) ++s.fn;
    else ++s.tn;
  }
  const double tp = static_cast<double>(s.tp), fp = static_cast<double>(s.fp), fn = static_cast<double>(s.fn);
  s.voc = ratio_or_one(tp, tp + fp + fn);
  s.dice = ratio_or_one(2 * tp, 2 * tp + fp + fn);
  const double precision = ratio_or_one(tp, tp + fp);
  const double recall = ratio_or_one(tp, tp + fn);
  s.f = s.tp + s.fp + s.fn == 0 ? 1.0 : (precision + recall > 0 ? 2 * precision * recall / (precision + recall) : 0.0);
  return s;
}

double rand_index(const LabelMap& pred, const LabelMap& gt, const Mask* mask) {
  check_shapes(pred, gt, mask);
  std::map<std::pair<std::int32_t, std::int32_t>, std::uint64_t> joint;
  std::map<std::int32_t, std::uint64_t> a, b;
  std::uint64_t n = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (!eligible(gt, mask, i)) continue;
    ++n;
    ++joint[{pred.labels[i], gt.labels[i]}];
    ++a[pred.labels[i]];
    ++b[gt.labels[i]];
  }
  if (n < 2) throw Error("rand_index: fewer than two eligible pixels");
  std::uint64_t same_both = 0, same_a = 0, same_b = 0;
  for (const auto& [k, c] : joint) same_both += pairs(c);
  for (const auto& [k, c] : a) same_a += pairs(c);
  for (const auto& [k, c] : b) same_b += pairs(c);
  const std::uint64_t total = pairs(n);
  // agreements = pairs together in both + pairs apart in both
  const std::uint64_t agree = total + 2 * same_both - same_a - same_b;
  return static_cast<double>(agree) / static_cast<double>(total);
}

const char* to_string(ThresholdMetric m) { return m == ThresholdMetric::Accuracy ? "accuracy" : "voc"; }

ThresholdMetric threshold_metric_from_string(const std::string& s) {
  if (s == "accuracy") return ThresholdMetric::Accuracy;
  if (s == "voc") return ThresholdMetric::VOC;
  throw Error("unknown threshold metric '" + s + "'");
}

LabelMap threshold_labels(const ImagePlane& score, double threshold) {
  LabelMap out(score.width(), score.height(), kNegative);
  for (std::size_t i = 0; i < score.size(); ++i)
    if (score.values()[i] > threshold) out.labels[i] = kPositive;
  return out;
}

ThresholdChoice best_threshold(const ImagePlane& score, const LabelMap& gt, const Mask* mask, ThresholdMetric metric) {
  if (score.width() != gt.width || score.height() != gt.height)
    throw Error("best_threshold: score and ground truth differ in size");
  score.require_finite("best_threshold score");
  std::vector<std::pair<double, bool>> v;
  std::uint64_t total_pos = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (!eligible(gt, mask, i)) continue;
    const bool pos = gt.labels[i] == kPositive;
    v.emplace_back(score.values()[i], pos);
    total_pos += pos ? 1 : 0;
  }
  if (v.empty()) throw Error("best_threshold: no eligible pixels");
  std::sort(v.begin(), v.end(), [](const auto& x, const auto& y) { return x.first < y.first; });
  const auto n = v.size();
  const std::uint64_t total_neg = n - total_pos;

  // Cut k: the first k sorted pixels are background, the rest foreground.
  auto value_at = [&](std::uint64_t neg_below, std::uint64_t pos_below) {
    const std::uint64_t tp = total_pos - pos_below, fp = total_neg - neg_below, fn = pos_below;
    if (metric == ThresholdMetric::Accuracy)
      return static_cast<double>(neg_below + tp) / static_cast<double>(n);
    return ratio_or_one(static_cast<double>(tp), static_cast<double>(tp + fp + fn));
  };
  const double inf = std::numeric_limits<double>::infinity();
  ThresholdChoice best{-inf, value_at(0, 0)};
  std::uint64_t neg_below = 0, pos_below = 0;
  std::size_t k = 0;
  while (k < n) {
    const double cur = v[k].first;
    while (k < n && v[k].first == cur) {
      (v[k].second ? pos_below : neg_below) += 1;
      ++k;
    }
    double t = inf;
    if (k < n) {
      const double mid = cur + 0.5 * (v[k].first - cur);
      t = mid < v[k].first ? mid : cur;
    }
    const double val = value_at(neg_below, pos_below);
    if (val >= best.value) best = {t, val};
  }
  return best;
}

MetricsReport evaluate_labels(const LabelMap& pred, const LabelMap& gt, const Mask* mask) {
  MetricsReport r;
  r.accuracy = accuracy(pred, gt, mask);
  r.rand = rand_index(pred, gt, mask);
  std::set<std::int32_t> labels;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (!eligible(gt, mask, i)) continue;
    labels.insert(gt.labels[i]);
    labels.insert(pred.labels[i]);
  }
  labels.erase(kIgnoreLabel);
  for (auto l : labels) {
    const auto b = binary_metrics(pred, gt, mask, l);
    r.per_class.push_back({l, b.voc, b.f, b.dice});
  }
  const bool binary = std::all_of(labels.begin(), labels.end(), [](std::int32_t l) { return l == kPositive || l == kNegative; });
  if (binary) {
    const auto b = binary_metrics(pred, gt, mask, kPositive);
    r.voc = b.voc;
    r.f = b.f;
    r.dice = b.dice;
  } else if (!r.per_class.empty()) {
    for (const auto& c : r.per_class) {
      r.voc += c.voc;
      r.f += c.f;
      r.dice += c.dice;
    }
    const double k = static_cast<double>(r.per_class.size());
    r.voc /= k;
    r.f /= k;
    r.dice /= k;
  }
  return r;
}

std::string metrics_csv_header() { return "name,accuracy,voc,f_measure,dice,rand_index,threshold"; }

std::string metrics_csv_row(const MetricsReport& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, ",%.6f,%.6f,%.6f,%.6f,%.6f,%.6g", r.accuracy, r.voc, r.f, r.dice, r.rand, r.threshold);
  return r.name + buf;
}

std::string metrics_table(const std::vector<MetricsReport>& reports) {
  std::size_t w = 5;
  for (const auto& r : reports) w = std::max(w, r.name.size());
  std::ostringstream os;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-*s  %8s  %8s  %8s  %8s  %8s  %10s\n", static_cast<int>(w), "image", "accuracy",
                "VOC", "F", "Dice", "RI", "threshold");
  os << buf;
  for (const auto& r : reports) {
    std::snprintf(buf, sizeof buf, "%-*s  %8.4f  %8.4f  %8.4f  %8.4f  %8.4f  %10.4g\n", static_cast<int>(w),
                  r.name.c_str(), r.accuracy, r.voc, r.f, r.dice, r.rand, r.threshold);
    os << buf;
  }
  return os.str();
}

}  // namespace knotseg
