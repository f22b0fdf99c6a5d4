#include "provenance/metrics.hpp"

#include <fmt/format.h>

#include "provenance/error.hpp"

namespace provenance {

std::size_t argmax(std::span<const double> values) {
  if (values.empty()) throw ConfigError("argmax of an empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

ConfusionMatrix::ConfusionMatrix(std::vector<std::string> labels)
    : labels_(std::move(labels)), cells_(labels_.size() * labels_.size(), 0) {}

void ConfusionMatrix::add(std::size_t truth, std::size_t predicted) {
  if (truth >= size() || predicted >= size()) {
    throw ConfigError(fmt::format("confusion index ({}, {}) out of range {}", truth, predicted, size()));
  }
  ++cells_[truth * size() + predicted];
  ++total_;
}

std::size_t ConfusionMatrix::at(std::size_t truth, std::size_t predicted) const {
  return cells_.at(truth * size() + predicted);
}

std::size_t ConfusionMatrix::row_sum(std::size_t truth) const {
  std::size_t sum = 0;
  for (std::size_t p = 0; p < size(); ++p) sum += at(truth, p);
  return sum;
}

std::size_t ConfusionMatrix::correct() const noexcept {
  std::size_t sum = 0;
  for (std::size_t c = 0; c < size(); ++c) sum += cells_[c * size() + c];
  return sum;
}

double ConfusionMatrix::accuracy() const noexcept {
  return total_ == 0 ? 0.0 : static_cast<double>(correct()) / static_cast<double>(total_);
}

std::vector<std::optional<double>> ConfusionMatrix::per_class_accuracy() const {
  std::vector<std::optional<double>> out(size());
  for (std::size_t c = 0; c < size(); ++c) {
    const auto n = row_sum(c);
    if (n > 0) out[c] = static_cast<double>(at(c, c)) / static_cast<double>(n);
  }
  return out;
}

std::string ConfusionMatrix::render_markdown() const {
  std::string out = "| truth \\ predicted |";
  for (const auto& l : labels_) out += fmt::format(" {} |", l);
  out += "\n|---|";
  for (std::size_t i = 0; i < size(); ++i) out += "---:|";
  out += '\n';
  for (std::size_t t = 0; t < size(); ++t) {
    out += fmt::format("| {} |", labels_[t]);
    for (std::size_t p = 0; p < size(); ++p) {
      out += t == p ? fmt::format(" **{}** |", at(t, p)) : fmt::format(" {} |", at(t, p));
    }
    out += '\n';
  }
  return out;
}

std::string ConfusionMatrix::render_delimited() const {
  std::string out = "truth";
  for (const auto& l : labels_) out += '\t' + l;
  out += '\n';
  for (std::size_t t = 0; t < size(); ++t) {
    out += labels_[t];
    for (std::size_t p = 0; p < size(); ++p) out += fmt::format("\t{}", at(t, p));
    out += '\n';
  }
  return out;
}

}  // namespace provenance
