#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace provenance {

enum class Family { real, gan, dm };

/// Label space a leaf can be projected onto.
enum class Level { L1, L2, L3, flat14, flat13 };

/// The six classification tasks that get their own manifest and model.
enum class Task { flat14, flat13, L1, L2, L3_gan, L3_dm };

inline constexpr std::array<Task, 6> kAllTasks = {Task::flat14, Task::flat13, Task::L1,
                                                  Task::L2,     Task::L3_gan, Task::L3_dm};

std::string_view to_string(Family family);
std::string_view to_string(Level level);
std::string_view to_string(Task task);
Family parse_family(std::string_view text);
Task parse_task(std::string_view text);

inline constexpr std::string_view kRealLabel = "real";
inline constexpr std::string_view kAiLabel = "ai";
inline constexpr std::string_view kGanLabel = "gan";
inline constexpr std::string_view kDmLabel = "dm";

/// Pristine sources collapsed into the single `real` leaf.
inline constexpr std::array<std::string_view, 3> kRealSources = {"celeba", "ffhq", "imagenet"};

struct LeafClass {
  std::string id;
  Family family = Family::real;
  std::string display_name;

  friend bool operator==(const LeafClass&, const LeafClass&) = default;
};

/// Fixed three-level label tree: real | ai -> gan -> {9} | ai -> dm -> {4}.
///
/// Leaves are ordered by family (real < gan < dm) and alphabetically by id
/// within a family, so class indices are stable for a given set of ids.
/// Immutable once built.
class Taxonomy {
 public:
  /// The 14-leaf default tree. `dm4_id` names the fourth diffusion engine.
  static Taxonomy build_default(std::string_view dm4_id = "dm4");

  /// Parses the text produced by serialize().
  static Taxonomy parse(std::string_view text);

  const std::vector<LeafClass>& leaves() const noexcept { return leaves_; }
  const LeafClass& leaf(std::string_view id) const;
  bool contains(std::string_view id) const noexcept;

  std::vector<std::string> leaf_ids(Family family) const;

  /// Projects a leaf onto a label space. Absent exactly for the real leaf
  /// under L2, L3 and flat13. Throws ConfigError for unknown ids.
  std::optional<std::string> project_label(std::string_view leaf_id, Level level) const;

  /// Label a leaf carries in a task manifest, or absent if the task
  /// excludes the leaf (e.g. DM leaves in L3_gan).
  std::optional<std::string> task_label(std::string_view leaf_id, Task task) const;

  /// Ordered class labels of a task; the index is the model output index.
  std::vector<std::string> task_labels(Task task) const;

  /// One leaf per line: id <TAB> family <TAB> display name.
  std::string serialize() const;

  /// FNV-1a of serialize(); recorded in manifests and checkpoints.
  std::uint64_t hash() const;

 private:
  explicit Taxonomy(std::vector<LeafClass> leaves);

  std::vector<LeafClass> leaves_;
};

/// Number of output classes a task model needs under the default tree.
std::size_t task_class_count(const Taxonomy& taxonomy, Task task);

}  // namespace provenance
