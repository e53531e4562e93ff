#pragma once

#include <span>
#include <string>
#include <vector>

#include "knotseg/config.hpp"
#include "knotseg/metrics.hpp"

namespace knotseg {

struct EvalItem {
  std::string name;
  const ImagePlane* score = nullptr;  // binary tasks: confidence in [-1, 1]
  const LabelMap* labels = nullptr;   // multi-class tasks: predicted labels
  const LabelMap* gt = nullptr;
  const Mask* mask = nullptr;
};

/// Binary items are thresholded according to cfg (per image, one cut shared
/// by all images, or a fixed cut); multi-class items use their labels as is.
std::vector<MetricsReport> evaluate_items(std::span<const EvalItem> items, bool binary, const EvalConfig& cfg);

/// Unweighted mean of every measure, named "mean".
MetricsReport mean_report(const std::vector<MetricsReport>& reports);

}  // namespace knotseg
