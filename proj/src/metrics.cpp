#include "partseg/metrics.hpp"

#include <cmath>
#include <sstream>

#include <json.hpp>

namespace partseg {

ConfusionAccumulator::ConfusionAccumulator(int n_classes) {
  if (n_classes < 1) throw Error("confusion accumulator needs at least one class");
  inter_.assign(static_cast<std::size_t>(n_classes), 0);
  pred_count_.assign(static_cast<std::size_t>(n_classes), 0);
  gt_count_.assign(static_cast<std::size_t>(n_classes), 0);
}

void ConfusionAccumulator::accumulate(const LabelGrid& pred, const LabelGrid& gt) {
  if (!pred.same_shape(gt))
    throw ShapeMismatch("confusion: pred " + std::to_string(pred.h) + "x" +
                        std::to_string(pred.w) + " vs gt " + std::to_string(gt.h) + "x" +
                        std::to_string(gt.w));
  int k = n_classes();
  for (std::int64_t i = 0; i < pred.size(); ++i) {
    std::int32_t p = pred.v[static_cast<std::size_t>(i)];
    std::int32_t g = gt.v[static_cast<std::size_t>(i)];
    if (p < 0 || p >= k || g < 0 || g >= k)
      throw LabelOutOfRange("confusion: class id outside {0.." + std::to_string(k - 1) + "}");
    ++pred_count_[static_cast<std::size_t>(p)];
    ++gt_count_[static_cast<std::size_t>(g)];
    if (p == g) ++inter_[static_cast<std::size_t>(p)];
  }
}

void ConfusionAccumulator::merge(const ConfusionAccumulator& other) {
  if (other.n_classes() != n_classes())
    throw ShapeMismatch("confusion merge: class counts differ");
  for (std::size_t i = 0; i < inter_.size(); ++i) {
    inter_[i] += other.inter_[i];
    pred_count_[i] += other.pred_count_[i];
    gt_count_[i] += other.gt_count_[i];
  }
}

bool ConfusionAccumulator::defined(int k) const {
  return pred_count_[static_cast<std::size_t>(k)] + gt_count_[static_cast<std::size_t>(k)] > 0;
}

double ConfusionAccumulator::iou(int k) const {
  std::int64_t u = pred_count_[static_cast<std::size_t>(k)] +
                   gt_count_[static_cast<std::size_t>(k)] - inter_[static_cast<std::size_t>(k)];
  if (u == 0) throw NoDefinedClasses("iou of class absent from pred and gt");
  return static_cast<double>(inter_[static_cast<std::size_t>(k)]) / static_cast<double>(u);
}

double miou(const ConfusionAccumulator& acc, const std::vector<int>& class_subset) {
  double total = 0.0;
  int n = 0;
  for (int k : class_subset) {
    if (k < 0 || k >= acc.n_classes()) throw LabelOutOfRange("miou: class id out of range");
    if (!acc.defined(k)) continue;
    total += acc.iou(k);
    ++n;
  }
  if (n == 0) throw NoDefinedClasses("miou: no defined class in subset");
  return total / n;
}

double recall(const ConfusionAccumulator& acc, const std::vector<int>& class_subset) {
  double total = 0.0;
  int n = 0;
  for (int k : class_subset) {
    if (k < 0 || k >= acc.n_classes()) throw LabelOutOfRange("recall: class id out of range");
    if (acc.gt_count(k) == 0) continue;  // no positives anywhere, recall undefined
    total += static_cast<double>(acc.tp(k)) / static_cast<double>(acc.gt_count(k));
    ++n;
  }
  if (n == 0) throw NoDefinedClasses("recall: no class with ground-truth pixels in subset");
  return total / n;
}

double harmonic(double seen, double unseen) {
  if (seen < 0.0 || unseen < 0.0) throw Error("harmonic expects nonnegative inputs");
  double s = seen + unseen;
  if (s == 0.0) return 0.0;
  return 2.0 * seen * unseen / s;
}

Tensor erode4(const Tensor& mask, int iters) {
  if (mask.rank() != 2) throw ShapeMismatch("erode4 expects a rank-2 mask");
  Tensor cur = mask;
  int h = mask.dim(0), w = mask.dim(1);
  for (int it = 0; it < iters; ++it) {
    Tensor next({h, w});
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) {
        if (cur.at(i, j) <= 0.5) continue;
        bool keep = i > 0 && cur.at(i - 1, j) > 0.5 && i + 1 < h && cur.at(i + 1, j) > 0.5 &&
                    j > 0 && cur.at(i, j - 1) > 0.5 && j + 1 < w && cur.at(i, j + 1) > 0.5;
        next.at(i, j) = keep ? 1.0 : 0.0;
      }
    cur = std::move(next);
  }
  return cur;
}

int default_boundary_d(int h, int w) {
  double diag = std::sqrt(static_cast<double>(h) * h + static_cast<double>(w) * w);
  return std::max(1, static_cast<int>(std::lround(0.02 * diag)));
}

namespace {
Tensor class_mask(const LabelGrid& g, int k) {
  Tensor m({g.h, g.w});
  for (int i = 0; i < g.h; ++i)
    for (int j = 0; j < g.w; ++j)
      if (g.at(i, j) == k) m.at(i, j) = 1.0;
  return m;
}

Tensor boundary_band(const Tensor& mask, int d) {
  Tensor eroded = erode4(mask, d);
  Tensor band(mask.shape());
  for (std::int64_t i = 0; i < mask.size(); ++i)
    band[i] = (mask[i] > 0.5 && eroded[i] <= 0.5) ? 1.0 : 0.0;
  return band;
}
}  // namespace

std::optional<double> boundary_iou(const LabelGrid& pred, const LabelGrid& gt, int k, int d) {
  if (!pred.same_shape(gt)) throw ShapeMismatch("boundary_iou: shapes differ");
  if (d < 1) throw Error("boundary_iou: band width must be >= 1");
  Tensor mp = class_mask(pred, k), mg = class_mask(gt, k);
  if (mp.sum() == 0.0 && mg.sum() == 0.0) return std::nullopt;
  Tensor bp = boundary_band(mp, d), bg = boundary_band(mg, d);
  std::int64_t inter = 0, uni = 0;
  for (std::int64_t i = 0; i < bp.size(); ++i) {
    bool a = bp[i] > 0.5, b = bg[i] > 0.5;
    if (a && b) ++inter;
    if (a || b) ++uni;
  }
  if (uni == 0) return 0.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

BoundaryAccumulator::BoundaryAccumulator(int n_classes, int d) : d_(d) {
  if (n_classes < 1) throw Error("boundary accumulator needs at least one class");
  if (d < 1) throw Error("boundary accumulator band width must be >= 1");
  inter_.assign(static_cast<std::size_t>(n_classes), 0);
  uni_.assign(static_cast<std::size_t>(n_classes), 0);
  touched_.assign(static_cast<std::size_t>(n_classes), 0);
}

void BoundaryAccumulator::accumulate(const LabelGrid& pred, const LabelGrid& gt) {
  if (!pred.same_shape(gt)) throw ShapeMismatch("boundary accumulate: shapes differ");
  int n = static_cast<int>(inter_.size());
  std::vector<bool> present(static_cast<std::size_t>(n), false);
  for (std::int64_t i = 0; i < pred.size(); ++i) {
    std::int32_t p = pred.v[static_cast<std::size_t>(i)], g = gt.v[static_cast<std::size_t>(i)];
    if (p < 0 || p >= n || g < 0 || g >= n)
      throw LabelOutOfRange("boundary accumulate: class id out of range");
    present[static_cast<std::size_t>(p)] = true;
    present[static_cast<std::size_t>(g)] = true;
  }
  for (int k = 0; k < n; ++k) {
    if (!present[static_cast<std::size_t>(k)]) continue;
    ++touched_[static_cast<std::size_t>(k)];
    Tensor bp = boundary_band(class_mask(pred, k), d_);
    Tensor bg = boundary_band(class_mask(gt, k), d_);
    for (std::int64_t i = 0; i < bp.size(); ++i) {
      bool a = bp[i] > 0.5, b = bg[i] > 0.5;
      if (a && b) ++inter_[static_cast<std::size_t>(k)];
      if (a || b) ++uni_[static_cast<std::size_t>(k)];
    }
  }
}

void BoundaryAccumulator::merge(const BoundaryAccumulator& other) {
  if (other.inter_.size() != inter_.size() || other.d_ != d_)
    throw ShapeMismatch("boundary merge: accumulator layout differs");
  for (std::size_t i = 0; i < inter_.size(); ++i) {
    inter_[i] += other.inter_[i];
    uni_[i] += other.uni_[i];
    touched_[i] += other.touched_[i];
  }
}

bool BoundaryAccumulator::defined(int k) const {
  return touched_[static_cast<std::size_t>(k)] > 0;
}

double BoundaryAccumulator::iou(int k) const {
  if (!defined(k)) throw NoDefinedClasses("boundary iou of untouched class");
  if (uni_[static_cast<std::size_t>(k)] == 0) return 0.0;
  return static_cast<double>(inter_[static_cast<std::size_t>(k)]) /
         static_cast<double>(uni_[static_cast<std::size_t>(k)]);
}

double BoundaryAccumulator::mean_over(const std::vector<int>& class_subset) const {
  double total = 0.0;
  int n = 0;
  for (int k : class_subset) {
    if (k < 0 || k >= static_cast<int>(inter_.size()))
      throw LabelOutOfRange("boundary mean: class id out of range");
    if (!defined(k)) continue;
    total += iou(k);
    ++n;
  }
  if (n == 0) throw NoDefinedClasses("boundary mean: no defined class in subset");
  return total / n;
}

double overlap_fraction(const std::vector<Tensor>& binaries) {
  if (binaries.empty()) return 0.0;
  for (const auto& b : binaries) require_same_shape(binaries.front(), b, "overlap_fraction");
  std::int64_t over = 0, covered = 0;
  for (std::int64_t i = 0; i < binaries.front().size(); ++i) {
    int count = 0;
    for (const auto& b : binaries)
      if (b[i] > 0.5) ++count;
    if (count >= 1) ++covered;
    if (count > 1) ++over;
  }
  if (covered == 0) return 0.0;
  return static_cast<double>(over) / static_cast<double>(covered);
}

std::string metric_report_json(const MetricReport& r) {
  nlohmann::ordered_json j;
  j["protocol"] = r.protocol;
  j["n_images"] = r.n_images;
  j["miou"] = {{"seen", r.seen_miou}, {"unseen", r.unseen_miou}, {"harmonic", r.harmonic_miou}};
  j["boundary_iou"] = {{"seen", r.seen_boundary},
                       {"unseen", r.unseen_boundary},
                       {"harmonic", r.harmonic_boundary}};
  j["recall"] = {{"seen", r.seen_recall}, {"unseen", r.unseen_recall}, {"harmonic", r.harmonic_recall}};
  j["n_seen_defined"] = r.n_seen_defined;
  j["n_unseen_defined"] = r.n_unseen_defined;
  j["include_background"] = r.include_background;
  nlohmann::ordered_json iou_map = nlohmann::ordered_json::object();
  for (const auto& [k, v] : r.per_class_iou) iou_map[std::to_string(k)] = v;
  j["per_class_iou"] = iou_map;
  nlohmann::ordered_json rec_map = nlohmann::ordered_json::object();
  for (const auto& [k, v] : r.per_class_recall) rec_map[std::to_string(k)] = v;
  j["per_class_recall"] = rec_map;
  if (r.has_overlap_diag) j["overlap_fraction"] = r.overlap_fraction;
  if (!r.config_hash.empty()) j["config_hash"] = r.config_hash;
  return j.dump(2) + "\n";
}

std::string metric_report_table(const MetricReport& r) {
  std::ostringstream os;
  auto row = [&os](const std::string& name, double s, double u, double h) {
    char buf[96];
    std::snprintf(buf, sizeof(buf), "%-14s %8.4f %8.4f %8.4f\n", name.c_str(), s, u, h);
    os << buf;
  };
  os << "protocol: " << r.protocol << " (" << r.n_images << " images)\n";
  char head[96];
  std::snprintf(head, sizeof(head), "%-14s %8s %8s %8s\n", "metric", "Seen", "Unseen", "Harmonic");
  os << head;
  row("mIoU", r.seen_miou, r.unseen_miou, r.harmonic_miou);
  row("Boundary IoU", r.seen_boundary, r.unseen_boundary, r.harmonic_boundary);
  row("Recall", r.seen_recall, r.unseen_recall, r.harmonic_recall);
  if (r.has_overlap_diag) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "overlap_fraction %.4f\n", r.overlap_fraction);
    os << buf;
  }
  return os.str();
}

}  // namespace partseg
