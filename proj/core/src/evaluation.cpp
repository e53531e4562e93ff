#include "knotseg/evaluation.hpp"

#include "knotseg/common.hpp"

namespace knotseg {

namespace {

/// Every item's eligible pixels laid out as one row, for a shared cut.
ThresholdChoice global_threshold(std::span<const EvalItem> items, ThresholdMetric metric) {
  std::size_t n = 0;
  for (const auto& it : items) n += it.gt->size();
  ImagePlane score(static_cast<int>(n), 1);
  LabelMap gt(static_cast<int>(n), 1);
  Mask mask(static_cast<int>(n), 1);
  std::size_t k = 0;
  for (const auto& it : items) {
    for (std::size_t i = 0; i < it.gt->size(); ++i, ++k) {
      score.values()[k] = it.score->values()[i];
      gt.labels[k] = it.gt->labels[i];
      mask.usable[k] = it.mask ? it.mask->usable[i] : 1;
    }
  }
  return best_threshold(score, gt, &mask, metric);
}

}  // namespace

std::vector<MetricsReport> evaluate_items(std::span<const EvalItem> items, bool binary, const EvalConfig& cfg) {
  for (const auto& it : items) {
    if (!it.gt) throw Error("evaluate: item '" + it.name + "' has no ground truth");
    if (binary ? !it.score : !it.labels) throw Error("evaluate: item '" + it.name + "' has no prediction");
    const std::size_t n = binary ? it.score->size() : it.labels->size();
    if (n != it.gt->size()) throw Error("evaluate: item '" + it.name + "' prediction and ground truth differ in size");
  }
  double shared = cfg.fixed_threshold;
  if (binary && cfg.mode == ThresholdMode::Global && !items.empty()) shared = global_threshold(items, cfg.metric).threshold;

  std::vector<MetricsReport> out(items.size());
  parallel_for(items.size(), [&](std::size_t i) {
    const auto& it = items[i];
    if (!binary) {
      out[i] = evaluate_labels(*it.labels, *it.gt, it.mask);
    } else {
      const double t = cfg.mode == ThresholdMode::PerImage
                           ? best_threshold(*it.score, *it.gt, it.mask, cfg.metric).threshold
                           : shared;
      out[i] = evaluate_labels(threshold_labels(*it.score, t), *it.gt, it.mask);
      out[i].threshold = t;
    }
    out[i].name = it.name;
  });
  return out;
}

MetricsReport mean_report(const std::vector<MetricsReport>& reports) {
  MetricsReport m;
  m.name = "mean";
  if (reports.empty()) return m;
  const double n = static_cast<double>(reports.size());
  for (const auto& r : reports) {
    m.accuracy += r.accuracy / n;
    m.voc += r.voc / n;
    m.f += r.f / n;
    m.dice += r.dice / n;
    m.rand += r.rand / n;
    m.threshold += r.threshold / n;
  }
  return m;
}

}  // namespace knotseg
