#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "provenance/cascade.hpp"
#include "provenance/manifest.hpp"
#include "provenance/metrics.hpp"
#include "provenance/trainer.hpp"

namespace provenance {

struct AccuracyCount {
  std::size_t correct = 0;
  std::size_t total = 0;

  double value() const noexcept {
    return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
  }
};

/// Accuracy formatted as a percentage with two decimals ("97.63").
std::string format_percent(double fraction);

/// One model scored on its own task's test split.
struct LevelResult {
  Task task = Task::L1;
  SplitEvaluation evaluation;
};

/// Cascade scored on the flat14 test split with model routing.
struct CascadeEvaluation {
  std::vector<CascadeRecordResult> results;
  /// Rows: ground-truth leaf. Extra `undecided`/`error` labels appear only
  /// when such outcomes occurred.
  ConfusionMatrix leaf_confusion{{}};
  AccuracyCount leaf;
  /// Leaf accuracy restricted to synthetic (non-real) ground truth.
  AccuracyCount synthetic_leaf;
  /// L1 over all samples; L2 over samples routed to Level 2; L3_* over
  /// samples routed to that recognizer.
  std::map<Task, AccuracyCount> levels;
};

/// Recomputes the cascade metrics from results (used by the evaluator and
/// by tools that reload prediction files).
CascadeEvaluation score_cascade(const Taxonomy& taxonomy, std::vector<CascadeRecordResult> results);

struct HierarchyManifests {
  const SplitManifest* level1 = nullptr;
  const SplitManifest* level2 = nullptr;
  const SplitManifest* level3_gan = nullptr;
  const SplitManifest* level3_dm = nullptr;
  const SplitManifest* flat14 = nullptr;
};

struct HierarchyEvaluation {
  std::map<Task, LevelResult> ground_truth_routed;
  CascadeEvaluation cascade_routed;
};

/// Ground-truth-routed accuracy of every level on its own test manifest,
/// plus cascade-routed metrics on the flat14 test manifest.
HierarchyEvaluation evaluate_hierarchy(const Cascade& cascade, const HierarchyManifests& manifests,
                                       const ImageLoader& loader, std::size_t batch_size = 30);

/// Test-split accuracy and leaf-keyed confusion for a flat model.
LevelResult evaluate_flat(const Classifier& model, const SplitManifest& manifest,
                          const ImageLoader& loader, std::size_t batch_size = 30);

inline constexpr std::array<Task, 4> kHierarchyTasks = {Task::L1, Task::L2, Task::L3_gan, Task::L3_dm};

struct AblationRow {
  std::string backbone;
  /// L1, L2, L3_gan, L3_dm accuracies as fractions.
  std::array<std::optional<double>, 4> accuracies{};
};

struct AblationTable {
  std::vector<AblationRow> rows;
  /// Per column, whether each row holds the column maximum. All false
  /// when fewer than two rows are compared.
  std::vector<std::array<bool, 4>> best;

  std::string render_markdown() const;
};

AblationTable ablation_table(std::vector<AblationRow> rows);

/// Published ResNet rows and flat baselines, rendered as literature values.
std::vector<AblationRow> published_backbone_rows();

struct CurveReference {
  std::string task;
  std::string path;
};

struct EvalReport {
  std::map<Task, LevelResult> ground_truth_routed;
  std::optional<CascadeEvaluation> cascade_routed;
  std::map<Task, LevelResult> flat;
  std::vector<CountTable> count_tables;
  /// Ground-truth-routed level results per backbone, for the ablation table.
  std::map<std::string, std::map<Task, LevelResult>> backbone_runs;
  std::vector<CurveReference> curves;
  std::vector<std::pair<std::string, std::string>> provenance;
};

enum class ReportFormat { markdown, delimited };

/// Writes the requested report files into `dir` together with the raw
/// prediction files every accuracy is computed from:
///   predictions/<task>.tsv   (path truth predicted probabilities)
///   predictions/cascade.tsv  (cascade prediction format)
///   confusion/<name>.tsv
/// Returns the paths written.
std::vector<std::filesystem::path> render_report(const EvalReport& report,
                                                 const std::filesystem::path& dir,
                                                 const std::vector<ReportFormat>& formats);

/// One recountable accuracy of a report and the prediction file it came from.
struct AccuracyEntry {
  std::string section;  // ground_truth_routed, cascade_routed, flat, ablation/<backbone>
  std::string metric;   // task name, or leaf / synthetic_leaf for the cascade
  AccuracyCount count;
  std::string source;   // prediction file relative to the report directory
};

std::vector<AccuracyEntry> accuracy_entries(const EvalReport& report);

/// Name of the prediction file backing a task's accuracy.
std::string prediction_file_name(Task task);
inline constexpr std::string_view kCascadePredictionFile = "predictions/cascade.tsv";

}  // namespace provenance
