#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "provenance/taxonomy.hpp"

namespace provenance {

enum class Split { train, val, test };
inline constexpr std::array<Split, 3> kAllSplits = {Split::train, Split::val, Split::test};

std::string_view to_string(Split split);
Split parse_split(std::string_view text);

/// One labeled image.
struct SampleRecord {
  std::string path;
  std::string leaf;
  std::string source_dataset;
  std::optional<Split> split;
  /// FNV-1a of the path relative to the corpus root.
  std::uint64_t stable_key = 0;
  /// Task-projected label; empty until derive_task_manifest.
  std::string label;
  /// Position in (0,1) of this record within its leaf's seeded ordering,
  /// set by assign_splits. In-memory only; quota mode partitions on it.
  double split_position = 0.0;
};

struct SplitRatios {
  double train = 0.50;
  double val = 0.20;
  double test = 0.30;
};

struct SplitQuota {
  std::size_t train = 0;
  std::size_t val = 0;
  std::size_t test = 0;

  std::size_t total() const noexcept { return train + val + test; }
  std::size_t of(Split s) const noexcept;
  friend bool operator==(const SplitQuota&, const SplitQuota&) = default;
};

enum class BalanceMode { none, downsample_to_min, fixed_per_class };

struct BalancePolicy {
  BalanceMode mode = BalanceMode::none;
  std::optional<SplitQuota> per_class_quota;

  /// `none`, `downsample_to_min` or `fixed_per_class:T,V,S`.
  std::string describe() const;
  static BalancePolicy parse(std::string_view text);

  static BalancePolicy none() { return {}; }
  static BalancePolicy downsample_to_min() { return {BalanceMode::downsample_to_min, {}}; }
  static BalancePolicy fixed(SplitQuota quota) { return {BalanceMode::fixed_per_class, quota}; }

  friend bool operator==(const BalancePolicy&, const BalancePolicy&) = default;
};

/// Per-class quotas of the published dataset breakdown (train/val/test per class).
SplitQuota reference_quota(Task task);

struct SkippedFile {
  std::string path;
  std::string reason;
};

struct ScanResult {
  std::vector<SampleRecord> records;
  std::map<std::string, std::size_t> counts;  // per leaf id
  std::vector<SkippedFile> skipped;
};

struct ScanOptions {
  /// Decode every file to make sure it is a usable image.
  bool verify_decode = true;
};

/// Walks `<root>/<family>/<leaf>/*` (`<root>/real/<source>/*` for the real
/// leaf). Undecodable files are skipped and reported. Records come back in
/// deterministic (leaf order, path) order with no split assigned.
ScanResult scan_corpus(const std::filesystem::path& root, const Taxonomy& taxonomy,
                       const ScanOptions& options = {});

/// Largest-remainder split sizes for `n` items. Exposed for tests/tools.
SplitQuota split_sizes(std::size_t n, const SplitRatios& ratios);

/// Assigns train/val/test within each leaf. The leaf's records are ordered
/// by a seeded mix of their stable keys; the first block goes to train, the
/// next to val and the tail to test.
std::vector<SampleRecord> assign_splits(std::vector<SampleRecord> records,
                                        const SplitRatios& ratios, std::uint64_t seed);

struct QuotaShortfall {
  std::string label;
  std::size_t required = 0;
  std::size_t available = 0;
};

/// Task classes whose pool cannot satisfy `quota`. Empty when feasible.
std::vector<QuotaShortfall> quota_shortfalls(const std::vector<SampleRecord>& records, Task task,
                                             const Taxonomy& taxonomy, const SplitQuota& quota);

/// The partition used to train/evaluate one task.
class SplitManifest {
 public:
  SplitManifest(Task task, std::vector<std::string> labels, std::uint64_t seed,
                BalancePolicy policy, std::uint64_t taxonomy_hash,
                std::vector<SampleRecord> records);

  Task task() const noexcept { return task_; }
  const std::vector<std::string>& labels() const noexcept { return labels_; }
  std::uint64_t seed() const noexcept { return seed_; }
  const BalancePolicy& policy() const noexcept { return policy_; }
  std::uint64_t taxonomy_hash() const noexcept { return taxonomy_hash_; }
  const std::vector<SampleRecord>& records() const noexcept { return records_; }

  std::vector<SampleRecord> records_in(Split split) const;
  std::size_t label_index(std::string_view label) const;
  std::size_t num_classes() const noexcept { return labels_.size(); }

 private:
  Task task_;
  std::vector<std::string> labels_;
  std::uint64_t seed_;
  BalancePolicy policy_;
  std::uint64_t taxonomy_hash_;
  std::vector<SampleRecord> records_;
};

/// Projects labels for `task`, drops excluded records and applies the
/// balance policy. Throws DataError if a task class is empty or a quota
/// cannot be met.
SplitManifest derive_task_manifest(const std::vector<SampleRecord>& records, Task task,
                                   const Taxonomy& taxonomy, const BalancePolicy& policy,
                                   std::uint64_t seed);

/// Per class x per split counts.
/// Balance policy of one task in a full manifest build.
struct TaskPolicy {
  BalancePolicy policy;
  /// When a fixed quota cannot be met, warn and use the ratio split
  /// instead of failing.
  bool fall_back_if_infeasible = false;
};

struct QuotaWarning {
  Task task = Task::flat14;
  SplitQuota quota;
  std::vector<QuotaShortfall> shortfalls;
  std::string message;
};

struct TaskManifestSet {
  std::map<Task, SplitManifest> manifests;
  std::vector<QuotaWarning> warnings;
};

/// Derives all six task manifests from one split assignment. Tasks missing
/// from `policies` use BalancePolicy::none().
TaskManifestSet derive_all_manifests(const std::vector<SampleRecord>& records, const Taxonomy& taxonomy,
                                     const std::map<Task, TaskPolicy>& policies, std::uint64_t seed);

struct CountTable {
  Task task = Task::flat14;
  std::vector<std::string> labels;
  std::vector<std::array<std::size_t, 3>> counts;  // [class][split]

  std::size_t total(Split split) const;
  std::size_t count(std::string_view label, Split split) const;
  /// Per-class table plus the Total / per-class summary rows.
  std::string render_markdown() const;
};

CountTable manifest_stats(const SplitManifest& manifest);

void save_manifest(const SplitManifest& manifest, const std::filesystem::path& path);
std::string serialize_manifest(const SplitManifest& manifest);
SplitManifest load_manifest(const std::filesystem::path& path, const Taxonomy& taxonomy);
SplitManifest parse_manifest(std::string_view text, const Taxonomy& taxonomy);

}  // namespace provenance
