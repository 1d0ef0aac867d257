#include "asap/metrics.hpp"

#include <cstdio>
#include <stdexcept>

namespace asap::metrics {

ConfusionMatrix::ConfusionMatrix(std::size_t num_classes)
    : k_(num_classes), counts_(num_classes * num_classes, 0) {
  if (num_classes == 0) throw std::invalid_argument("confusion matrix needs at least one class");
}

void ConfusionMatrix::add(int truth, int prediction, std::uint64_t count) {
  if (truth < 0 || prediction < 0 || static_cast<std::size_t>(truth) >= k_ ||
      static_cast<std::size_t>(prediction) >= k_) {
    throw std::out_of_range("confusion matrix: class pair (" + std::to_string(truth) + ", " +
                            std::to_string(prediction) + ") outside [0," + std::to_string(k_) +
                            ")");
  }
  counts_[static_cast<std::size_t>(truth) * k_ + static_cast<std::size_t>(prediction)] += count;
}

void ConfusionMatrix::add_all(std::span<const int> truth, std::span<const int> prediction,
                              int ignore) {
  if (truth.size() != prediction.size()) {
    throw std::invalid_argument("confusion matrix: label arrays differ in length");
  }
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] == ignore) continue;
    add(truth[i], prediction[i]);
  }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.k_ != k_) throw std::invalid_argument("confusion matrix: class counts differ");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t n = 0;
  for (auto c : counts_) n += c;
  return n;
}

std::uint64_t ConfusionMatrix::row_total(std::size_t c) const {
  std::uint64_t n = 0;
  for (std::size_t j = 0; j < k_; ++j) n += at(c, j);
  return n;
}

std::uint64_t ConfusionMatrix::col_total(std::size_t c) const {
  std::uint64_t n = 0;
  for (std::size_t i = 0; i < k_; ++i) n += at(i, c);
  return n;
}

IouReport compute_iou(const ConfusionMatrix& cm) {
  const std::size_t K = cm.num_classes();
  IouReport r;
  r.iou.assign(K, 0.0);
  r.accuracy.assign(K, 0.0);
  r.support.assign(K, 0);
  double acc_sum = 0.0;
  std::size_t acc_classes = 0;
  for (std::size_t c = 0; c < K; ++c) {
    const std::uint64_t tp = cm.at(c, c);
    const std::uint64_t row = cm.row_total(c), col = cm.col_total(c);
    const std::uint64_t denom = row + col - tp;
    r.iou[c] = denom == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(denom);
    r.support[c] = row;
    if (row > 0) {
      r.accuracy[c] = static_cast<double>(tp) / static_cast<double>(row);
      acc_sum += r.accuracy[c];
      ++acc_classes;
    }
  }
  double iou_sum = 0.0;
  for (double v : r.iou) iou_sum += v;
  r.miou = iou_sum / static_cast<double>(K);
  r.macc = acc_classes == 0 ? 0.0 : acc_sum / static_cast<double>(acc_classes);
  return r;
}

std::string to_csv(const IouReport& report) {
  std::string out = "class,iou,accuracy,support\n";
  char line[128];
  std::uint64_t total = 0;
  for (std::size_t c = 0; c < report.iou.size(); ++c) {
    std::snprintf(line, sizeof(line), "%zu,%.6f,%.6f,%llu\n", c, report.iou[c],
                  report.accuracy[c], static_cast<unsigned long long>(report.support[c]));
    out += line;
    total += report.support[c];
  }
  std::snprintf(line, sizeof(line), "mean,%.6f,%.6f,%llu\n", report.miou, report.macc,
                static_cast<unsigned long long>(total));
  out += line;
  return out;
}

std::string to_table(const IouReport& report) {
  std::string out = "class      IoU    Acc    points\n";
  char line[128];
  for (std::size_t c = 0; c < report.iou.size(); ++c) {
    std::snprintf(line, sizeof(line), "%-6zu  %6.2f  %6.2f  %8llu\n", c, 100.0 * report.iou[c],
                  100.0 * report.accuracy[c], static_cast<unsigned long long>(report.support[c]));
    out += line;
  }
  std::snprintf(line, sizeof(line), "mIoU %.2f  mAcc %.2f\n", 100.0 * report.miou,
                100.0 * report.macc);
  out += line;
  return out;
}

}  // namespace asap::metrics
