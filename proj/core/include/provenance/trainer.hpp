#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "provenance/manifest.hpp"
#include "provenance/metrics.hpp"
#include "provenance/model.hpp"
#include "provenance/preprocessing.hpp"

namespace provenance {

/// Optimization recipe for one level: SGD with momentum on cross-entropy,
/// no schedule, no weight decay, no early stopping.
struct TrainConfig {
  std::size_t batch_size = 30;
  double learning_rate = 1e-5;
  double momentum = 0.9;
  std::size_t epochs = 150;
  std::uint64_t seed = 0;
  std::string device = "cpu";

  /// 150 epochs for flat14, flat13 and L1; 100 for L2 and both L3 tasks.
  static TrainConfig defaults_for(Task task);
  void validate() const;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct EpochStats {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double eval_loss = 0.0;
  double eval_accuracy = 0.0;
};

/// Per-epoch series; eval_* are measured on the validation split.
struct TrainingCurves {
  std::vector<double> train_loss;
  std::vector<double> train_accuracy;
  std::vector<double> eval_loss;
  std::vector<double> eval_accuracy;

  std::size_t epochs() const noexcept { return train_loss.size(); }
  void append(const EpochStats& stats);
  EpochStats at(std::size_t index) const;

  /// TSV with header `epoch train_loss train_accuracy eval_loss eval_accuracy`.
  std::string serialize() const;
  static TrainingCurves parse(std::string_view text);
  void save(const std::filesystem::path& path) const;
  static TrainingCurves load(const std::filesystem::path& path);

  friend bool operator==(const TrainingCurves&, const TrainingCurves&) = default;
};

struct PredictionRow {
  std::string path;
  std::size_t truth = 0;
  std::size_t predicted = 0;
  Probabilities probabilities;
};

struct SplitEvaluation {
  ConfusionMatrix confusion{{}};
  double accuracy = 0.0;
  std::vector<std::optional<double>> per_class_accuracy;
  /// Mean cross-entropy of the ground-truth class.
  double loss = 0.0;
  std::vector<PredictionRow> predictions;
};

/// Argmax evaluation of `model` on one split.
SplitEvaluation evaluate_split(const Classifier& model, const SplitManifest& manifest, Split split,
                               const ImageLoader& loader, std::size_t batch_size = 30);

struct TrainOptions {
  ImageLoader loader;
  /// Called after every epoch (after validation).
  std::function<void(const EpochStats&)> on_epoch;
};

struct TrainResult {
  ClassifierModel best;
  ClassifierModel last;
  TrainingCurves curves;
  std::size_t best_epoch = 0;  // 1-based
  double best_val_accuracy = 0.0;
};

/// Runs exactly `config.epochs` epochs over the train split, validating
/// after each. Returns the highest-validation-accuracy weights (earliest
/// epoch on ties) and the final weights.
TrainResult train(ClassifierModel model, const SplitManifest& manifest, const TrainConfig& config,
                  const TrainOptions& options);

}  // namespace provenance
