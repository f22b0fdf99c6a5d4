#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "provenance/evaluator.hpp"
#include "provenance/manifest.hpp"
#include "provenance/model.hpp"
#include "provenance/preprocessing.hpp"
#include "provenance/taxonomy.hpp"
#include "provenance/trainer.hpp"

namespace provenance::cli {

struct TrainOverrides {
  std::optional<std::size_t> batch_size;
  std::optional<double> learning_rate;
  std::optional<double> momentum;
  std::optional<std::size_t> epochs;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> device;
};

/// `none`, `downsample_to_min`, `fixed_per_class` (with quota) or
/// `reference_quotas` (the published per-task quotas).
struct BalanceSetting {
  std::string mode = "none";
  std::optional<SplitQuota> quota;
};

/// Everything a command needs; parsed from one JSON file (comments allowed)
/// plus `--set key.path=value` overrides. Unknown keys are rejected.
struct RunConfig {
  std::string corpus_root;
  std::string output_dir = "run";
  std::uint64_t seed = 0;
  std::string dm4_id = "dm4";
  BackboneSpec backbone;
  Normalization normalization;
  SplitRatios split_ratios;
  BalanceSetting balance;
  std::map<Task, BalanceSetting> balance_per_task;
  TrainOverrides train_defaults;
  std::map<Task, TrainOverrides> train_tasks;
  std::array<std::optional<double>, 3> cascade_thresholds{};
  std::size_t eval_batch_size = 30;
  std::vector<ReportFormat> report_formats = {ReportFormat::markdown, ReportFormat::delimited};

  Taxonomy taxonomy() const;
  /// Task defaults, then `train.defaults`, then `train.tasks.<task>`.
  TrainConfig train_config(Task task) const;
  BalanceSetting balance_for(Task task) const;
  /// Resolves `reference_quotas` and validates quotas.
  BalancePolicy balance_policy(Task task) const;

  /// Canonical JSON (every field, resolved defaults).
  std::string to_json() const;
  std::uint64_t hash() const;
};

RunConfig parse_run_config(std::string_view json_text, const std::vector<std::string>& overrides = {});
RunConfig load_run_config(const std::filesystem::path& path,
                          const std::vector<std::string>& overrides = {});

}  // namespace provenance::cli
