#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "provenance/preprocessing.hpp"
#include "provenance/taxonomy.hpp"

namespace provenance {

enum class Architecture { resnet34, resnet18, tiny };

std::string_view to_string(Architecture arch);
Architecture parse_architecture(std::string_view text);

struct BackboneSpec {
  Architecture architecture = Architecture::resnet34;
  bool pretrained = true;
  /// Directory holding `<architecture>.bin` ImageNet weights (see README).
  std::string weights_dir;
  /// Widths of the conv-pool blocks of the `tiny` test backbone.
  std::vector<int> tiny_channels = {16, 32, 64};

  friend bool operator==(const BackboneSpec&, const BackboneSpec&) = default;
};

using Probabilities = std::vector<double>;

/// Maps a batch of images to per-image class probability vectors.
/// Implementations must be safe for concurrent predict() calls.
class Classifier {
 public:
  virtual ~Classifier() = default;
  virtual std::size_t num_classes() const = 0;
  virtual std::vector<Probabilities> predict(std::span<const ImageTensor> images) const = 0;
};

struct CheckpointMetadata {
  Task task = Task::flat14;
  std::vector<std::string> labels;
  std::uint64_t taxonomy_hash = 0;
  std::size_t epoch = 0;
  std::uint64_t config_hash = 0;
  BackboneSpec backbone;
  std::size_t num_classes = 0;
};

/// Residual (or tiny) convolutional encoder + fully connected head whose
/// output passes through a softmax. Models are created in evaluation mode.
class ClassifierModel final : public Classifier {
 public:
  struct Impl;

  explicit ClassifierModel(std::unique_ptr<Impl> impl);
  ClassifierModel(ClassifierModel&&) noexcept;
  ClassifierModel& operator=(ClassifierModel&&) noexcept;
  ~ClassifierModel() override;

  const BackboneSpec& backbone() const noexcept;
  std::size_t num_classes() const override;
  std::vector<Probabilities> predict(std::span<const ImageTensor> images) const override;

  /// Forward on a contiguous NCHW buffer; throws ConfigError if the buffer
  /// is not `batch` x 3 x 256 x 256.
  std::vector<Probabilities> forward(std::span<const float> nchw, std::size_t batch) const;

  std::size_t parameter_count() const;
  /// Deep copy of weights and buffers.
  ClassifierModel clone() const;

  Impl& impl() noexcept { return *impl_; }
  const Impl& impl() const noexcept { return *impl_; }

 private:
  std::unique_ptr<Impl> impl_;
};

/// Fresh model with `num_classes` outputs. When `spec.pretrained` the
/// encoder weights are read from `spec.weights_dir`; the head is always
/// freshly initialized from `init_seed`.
ClassifierModel build_classifier(const BackboneSpec& spec, std::size_t num_classes,
                                 std::uint64_t init_seed = 0);

struct LoadedCheckpoint {
  ClassifierModel model;
  CheckpointMetadata metadata;
};

struct CheckpointExpectation {
  std::optional<Task> task;
  std::optional<std::uint64_t> taxonomy_hash;
};

/// Writes `<dir>/weights.bin` and `<dir>/metadata.json`.
void save_checkpoint(const ClassifierModel& model, const CheckpointMetadata& metadata,
                     const std::filesystem::path& dir);

LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir,
                                 const CheckpointExpectation& expect = {});

}  // namespace provenance
