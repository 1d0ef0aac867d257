#pragma once

// Point-wise segmentation metrics.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace asap::metrics {

/// K x K counts, rows = ground truth, columns = prediction.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t num_classes);

  std::size_t num_classes() const { return k_; }
  void add(int truth, int prediction, std::uint64_t count = 1);
  /// Adds every pair; labels equal to `ignore` are skipped.
  void add_all(std::span<const int> truth, std::span<const int> prediction, int ignore = -1);
  void merge(const ConfusionMatrix& other);

  std::uint64_t at(std::size_t truth, std::size_t prediction) const {
    return counts_[truth * k_ + prediction];
  }
  std::uint64_t total() const;
  std::uint64_t row_total(std::size_t c) const;
  std::uint64_t col_total(std::size_t c) const;

 private:
  std::size_t k_;
  std::vector<std::uint64_t> counts_;
};

struct IouReport {
  std::vector<double> iou;       // per class; 0 when TP + FP + FN == 0
  std::vector<double> accuracy;  // per-class recall; 0 for classes without ground truth
  std::vector<std::uint64_t> support;
  double miou = 0.0;  // mean over all classes, zero-denominator classes included
  double macc = 0.0;  // mean recall over classes that occur in the ground truth
};

IouReport compute_iou(const ConfusionMatrix& cm);

/// CSV with header "class,iou,accuracy,support", one row per class id, then a
/// "mean" row carrying mIoU and mAcc.
std::string to_csv(const IouReport& report);
/// Aligned text table for terminals.
std::string to_table(const IouReport& report);

}  // namespace asap::metrics
