#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace provenance {

/// Index of the largest entry; the lowest index wins ties.
std::size_t argmax(std::span<const double> values);

/// Square count matrix, rows = ground truth, columns = prediction.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::vector<std::string> labels);

  void add(std::size_t truth, std::size_t predicted);

  const std::vector<std::string>& labels() const noexcept { return labels_; }
  std::size_t size() const noexcept { return labels_.size(); }
  std::size_t at(std::size_t truth, std::size_t predicted) const;
  std::size_t row_sum(std::size_t truth) const;
  std::size_t total() const noexcept { return total_; }
  std::size_t correct() const noexcept;
  /// correct / total; 0 for an empty matrix.
  double accuracy() const noexcept;
  /// Recall per ground-truth class; absent for classes with no samples.
  std::vector<std::optional<double>> per_class_accuracy() const;

  std::string render_markdown() const;
  std::string render_delimited() const;

 private:
  std::vector<std::string> labels_;
  std::vector<std::size_t> cells_;
  std::size_t total_ = 0;
};

}  // namespace provenance
