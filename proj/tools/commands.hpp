#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "provenance/cascade.hpp"
#include "provenance/manifest.hpp"
#include "provenance/surrogate.hpp"
#include "provenance/trainer.hpp"
#include "run_config.hpp"

namespace provenance::cli {

enum ExitCode : int { kOk = 0, kConfigError = 2, kDataError = 3, kRuntimeError = 4 };

/// Exclusive ownership of an output directory for one command.
class RunLock {
 public:
  explicit RunLock(const std::filesystem::path& dir);
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;
  ~RunLock();

 private:
  std::filesystem::path path_;
};

std::filesystem::path manifest_path(const RunConfig& config, Task task);
std::filesystem::path run_dir(const RunConfig& config, Task task);
std::filesystem::path run_dir(const RunConfig& config, std::string_view backbone, Task task);

struct BuildManifestsResult {
  std::map<Task, SplitManifest> manifests;
  std::vector<std::string> warnings;
  std::vector<SkippedFile> skipped;
};

/// Scans the corpus, assigns splits and writes manifests/<task>.tsv for all
/// six tasks plus stats.md. Rewriting identical files is a no-op; differing
/// files are only replaced with `force`.
BuildManifestsResult cmd_build_manifests(const RunConfig& config, bool force = false);

SurrogateSummary cmd_make_surrogate(const std::filesystem::path& root, std::size_t images_per_leaf,
                                    int size, std::uint64_t seed, bool force = false);

struct TrainSummary {
  std::filesystem::path dir;
  std::size_t best_epoch = 0;
  double best_val_accuracy = 0.0;
  double test_accuracy = 0.0;
  std::size_t test_total = 0;
};

/// Trains one task into runs/<backbone>/<task>/. Refuses to replace an
/// existing run without `force`.
TrainSummary cmd_train(const RunConfig& config, Task task, bool force = false,
                       std::function<void(const EpochStats&)> on_epoch = {});

/// Loads the four level checkpoints of the configured backbone.
Cascade load_cascade(const RunConfig& config);

/// Writes the evaluation report into <output_dir>/eval and returns that dir.
std::filesystem::path cmd_eval(const RunConfig& config);

/// Classifies one image or every image under a directory. Writes the
/// prediction file to `output` (default <output_dir>/infer/predictions.tsv).
std::vector<CascadeRecordResult> cmd_infer(const RunConfig& config, const std::filesystem::path& input,
                                           const std::optional<std::filesystem::path>& output);

/// Renders loss.png and accuracy.png next to each curves.tsv under `dir`.
std::vector<std::filesystem::path> cmd_plot(const std::filesystem::path& dir);

/// Full command-line entry point; returns the process exit code.
int run_cli(int argc, char** argv);

}  // namespace provenance::cli
