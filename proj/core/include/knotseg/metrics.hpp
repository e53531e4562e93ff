#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "knotseg/imagecore.hpp"

namespace knotseg {

/// Fraction of eligible pixels (not IGNORE in gt, usable in mask) whose
/// predicted label equals the ground truth.
double accuracy(const LabelMap& pred, const LabelMap& gt, const Mask* mask = nullptr);

struct BinaryScores {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;
  std::uint64_t tn = 0;
  double voc = 1.0;   // TP / (TP + FP + FN)
  double f = 1.0;     // 2PR / (P + R)
  double dice = 1.0;  // 2TP / (2TP + FP + FN)
};

/// Foreground is label +1 (or `positive` for per-class use). Empty foreground
/// in both maps scores 1.0 on every measure.
BinaryScores binary_metrics(const LabelMap& pred, const LabelMap& gt, const Mask* mask = nullptr,
                            std::int32_t positive = kPositive);

/// Standard (unadjusted) Rand index over eligible pixel pairs, from the
/// contingency table.
double rand_index(const LabelMap& pred, const LabelMap& gt, const Mask* mask = nullptr);

enum class ThresholdMetric : std::uint8_t { Accuracy = 0, VOC = 1 };
const char* to_string(ThresholdMetric m);
ThresholdMetric threshold_metric_from_string(const std::string& s);

/// Binary labels: +1 where score > threshold, -1 elsewhere.
LabelMap threshold_labels(const ImagePlane& score, double threshold);

struct ThresholdChoice {
  double threshold = 0.0;
  double value = 0.0;
};

/// Scans -inf, the midpoints between consecutive distinct eligible scores,
/// and +inf; returns the cut maximising the metric, ties to the larger cut.
ThresholdChoice best_threshold(const ImagePlane& score, const LabelMap& gt, const Mask* mask,
                               ThresholdMetric metric);

struct ClassScores {
  std::int32_t label = 0;
  double voc = 0;
  double f = 0;
  double dice = 0;
};

struct MetricsReport {
  std::string name;
  double accuracy = 0;
  double voc = 0;
  double f = 0;
  double dice = 0;
  double rand = 0;
  double threshold = 0;  // cut applied to the score map (binary tasks)
  std::vector<ClassScores> per_class;
};

/// Every measure for one prediction; per_class lists the labels present in
/// either map (excluding IGNORE).
MetricsReport evaluate_labels(const LabelMap& pred, const LabelMap& gt, const Mask* mask = nullptr);

std::string metrics_csv_header();
std::string metrics_csv_row(const MetricsReport& r);
std::string metrics_table(const std::vector<MetricsReport>& reports);

}  // namespace knotseg
