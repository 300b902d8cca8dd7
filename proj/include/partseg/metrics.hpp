#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "partseg/labelgrid.hpp"
#include "partseg/tensor.hpp"

namespace partseg {

// Streaming per-class counters; associative merge equals serial accumulation.
class ConfusionAccumulator {
 public:
  explicit ConfusionAccumulator(int n_classes);

  int n_classes() const { return static_cast<int>(inter_.size()); }
  void accumulate(const LabelGrid& pred, const LabelGrid& gt);
  void merge(const ConfusionAccumulator& other);

  bool defined(int k) const;  // class appears in pred or gt somewhere
  double iou(int k) const;
  std::int64_t tp(int k) const { return inter_[static_cast<std::size_t>(k)]; }
  std::int64_t fn(int k) const {
    return gt_count_[static_cast<std::size_t>(k)] - inter_[static_cast<std::size_t>(k)];
  }
  std::int64_t gt_count(int k) const { return gt_count_[static_cast<std::size_t>(k)]; }

 private:
  std::vector<std::int64_t> inter_, pred_count_, gt_count_;
};

double miou(const ConfusionAccumulator& acc, const std::vector<int>& class_subset);
double recall(const ConfusionAccumulator& acc, const std::vector<int>& class_subset);
double harmonic(double seen, double unseen);

// 4-connected erosion, out-of-grid treated as background.
Tensor erode4(const Tensor& mask, int iters);

int default_boundary_d(int h, int w);  // max(1, round(0.02 * diag))

// IoU of boundary bands (mask minus its d-fold erosion). Empty optional when
// the class is absent from both grids.
std::optional<double> boundary_iou(const LabelGrid& pred, const LabelGrid& gt, int k, int d);

// Band intersection/union counters for dataset-level boundary mIoU.
class BoundaryAccumulator {
 public:
  explicit BoundaryAccumulator(int n_classes, int d);
  void accumulate(const LabelGrid& pred, const LabelGrid& gt);
  void merge(const BoundaryAccumulator& other);
  bool defined(int k) const;
  double iou(int k) const;
  double mean_over(const std::vector<int>& class_subset) const;  // NoDefinedClasses if none
  int band_width() const { return d_; }

 private:
  int d_;
  std::vector<std::int64_t> inter_, uni_, touched_;
};

// |pixels covered more than once| / |pixels covered at least once|; 0 on
// empty union.
double overlap_fraction(const std::vector<Tensor>& binaries);

struct MetricReport {
  std::string protocol;
  int n_images = 0;
  double seen_miou = 0.0, unseen_miou = 0.0, harmonic_miou = 0.0;
  double seen_boundary = 0.0, unseen_boundary = 0.0, harmonic_boundary = 0.0;
  double seen_recall = 0.0, unseen_recall = 0.0, harmonic_recall = 0.0;
  int n_seen_defined = 0, n_unseen_defined = 0;
  std::map<int, double> per_class_iou;     // defined classes only
  std::map<int, double> per_class_recall;  // classes with ground-truth pixels
  bool include_background = false;
  bool has_overlap_diag = false;
  double overlap_fraction = 0.0;  // attention-map diagnostic, when computed
  std::string config_hash;
};

std::string metric_report_json(const MetricReport& r);
std::string metric_report_table(const MetricReport& r);

}  // namespace partseg
