#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "provenance/manifest.hpp"
#include "provenance/model.hpp"
#include "provenance/preprocessing.hpp"
#include "provenance/taxonomy.hpp"

namespace provenance {

struct CascadeMember {
  std::shared_ptr<const Classifier> model;
  Task task = Task::L1;
  std::uint64_t taxonomy_hash = 0;
};

/// The four level classifiers: real/ai, gan/dm, and the two architecture
/// recognizers.
struct CascadeModels {
  CascadeMember level1;
  CascadeMember level2;
  CascadeMember level3_gan;
  CascadeMember level3_dm;
};

struct CascadeOptions {
  /// Optional minimum chosen-class probability per level (L1, L2, L3).
  /// Disabled by default; when set and unmet, routing stops and the final
  /// label is `undecided`.
  std::array<std::optional<double>, 3> thresholds{};
};

inline constexpr std::string_view kUndecidedLabel = "undecided";

struct LevelDecision {
  std::string label;
  std::size_t index = 0;
  Probabilities probabilities;

  double chosen_probability() const { return probabilities.at(index); }
};

struct CascadePrediction {
  LevelDecision level1;
  std::optional<LevelDecision> level2;
  std::optional<LevelDecision> level3;
  /// `real`, a generator leaf id, or `undecided`.
  std::string final_label;
  /// Product of the chosen probabilities along the routed path.
  double path_confidence = 0.0;
};

/// Hierarchical inference: Level 1 decides real vs ai and stops on real;
/// otherwise Level 2 picks gan or dm and exactly one Level-3 recognizer
/// names the generator. Immutable and safe for concurrent use.
class Cascade {
 public:
  /// Throws ConfigError if class counts, tasks or taxonomy hashes disagree.
  Cascade(Taxonomy taxonomy, CascadeModels models, CascadeOptions options = {});

  CascadePrediction classify(const ImageTensor& image) const;

  /// Per-level batched classification; equal to classify() per image.
  std::vector<CascadePrediction> classify_many(std::span<const ImageTensor> images) const;

  const Taxonomy& taxonomy() const noexcept { return taxonomy_; }
  const CascadeModels& models() const noexcept { return models_; }

 private:
  Taxonomy taxonomy_;
  CascadeModels models_;
  CascadeOptions options_;
  std::array<std::vector<std::string>, 4> labels_;
};

struct CascadeRecordResult {
  SampleRecord record;
  std::optional<CascadePrediction> prediction;
  /// Load error message when prediction is absent.
  std::string error;
};

/// Classifies every record of a split; load failures are reported per
/// record and do not stop the run.
std::vector<CascadeRecordResult> classify_batch(const Cascade& cascade, const SplitManifest& manifest,
                                                Split split, const ImageLoader& loader,
                                                std::size_t batch_size = 30);

/// Same for free-standing image paths (ground truth unknown).
std::vector<CascadeRecordResult> classify_paths(const Cascade& cascade,
                                                const std::vector<std::string>& paths,
                                                const ImageLoader& loader,
                                                std::size_t batch_size = 30);

/// Prediction file: TSV with header
/// `path truth l1_label l1_probs l2_label l2_probs l3_label l3_probs final_label path_confidence`.
/// Absent fields are `-`; probabilities are comma-joined.
std::string prediction_file_header();
std::string format_prediction_line(const CascadeRecordResult& result);
void write_predictions(const std::vector<CascadeRecordResult>& results,
                       const std::filesystem::path& path);

}  // namespace provenance
