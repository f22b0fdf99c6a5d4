#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "provenance/manifest.hpp"

namespace provenance {

/// Per-channel input statistics. Defaults are the ImageNet statistics the
/// residual backbones were pretrained with.
struct Normalization {
  std::array<float, 3> mean = {0.485f, 0.456f, 0.406f};
  std::array<float, 3> std = {0.229f, 0.224f, 0.225f};

  friend bool operator==(const Normalization&, const Normalization&) = default;
};

/// Normalized 3x256x256 CHW float image.
class ImageTensor {
 public:
  static constexpr int kChannels = 3;
  static constexpr int kHeight = 256;
  static constexpr int kWidth = 256;
  static constexpr std::size_t kElements = std::size_t{kChannels} * kHeight * kWidth;

  /// Throws DataError unless `data` has kElements finite values.
  ImageTensor(std::vector<float> data, std::string source_path);

  std::span<const float> data() const noexcept { return data_; }
  const std::string& source_path() const noexcept { return source_path_; }
  float at(int channel, int y, int x) const noexcept {
    return data_[(static_cast<std::size_t>(channel) * kHeight + y) * kWidth + x];
  }

 private:
  std::vector<float> data_;
  std::string source_path_;
};

bool is_decodable_image(const std::filesystem::path& path);

/// Decodes `path` (PNG/JPEG/BMP; grayscale is replicated to three
/// channels, alpha dropped), bilinearly resizes to 256x256 without
/// cropping, scales to [0,1] and normalizes per channel.
ImageTensor prepare(const std::filesystem::path& path, const Normalization& norm = {});

/// Same pipeline starting from interleaved 8-bit RGB pixels.
ImageTensor prepare_rgb8(std::span<const std::uint8_t> rgb, int width, int height,
                         const Normalization& norm, std::string source_path);

using ImageLoader = std::function<ImageTensor(const std::string& path)>;

ImageLoader make_loader(const Normalization& norm);

struct Batch {
  std::vector<ImageTensor> images;
  std::vector<std::size_t> labels;
  /// Indices into BatchIterator::records().
  std::vector<std::size_t> record_indices;

  std::size_t size() const noexcept { return images.size(); }
};

/// Streams one split of a manifest in batches. Each epoch visits every
/// record once; with a shuffle seed the order is a deterministic function
/// of (seed, epoch). Files that fail to load are skipped and reported.
class BatchIterator {
 public:
  BatchIterator(const SplitManifest& manifest, Split split, std::size_t batch_size,
                std::optional<std::uint64_t> shuffle_seed, ImageLoader loader);

  void start_epoch(std::size_t epoch);
  std::optional<Batch> next();

  const std::vector<SampleRecord>& records() const noexcept { return records_; }
  std::size_t batch_size() const noexcept { return batch_size_; }
  /// Nominal batch count assuming no skipped files.
  std::size_t batches_per_epoch() const noexcept;
  /// Record order for an epoch (identity when shuffling is off).
  std::vector<std::size_t> epoch_order(std::size_t epoch) const;
  /// Files skipped so far in the current epoch.
  const std::vector<SkippedFile>& skipped() const noexcept { return skipped_; }

 private:
  std::vector<SampleRecord> records_;
  std::vector<std::size_t> labels_;
  std::size_t batch_size_;
  std::optional<std::uint64_t> shuffle_seed_;
  ImageLoader loader_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  std::vector<SkippedFile> skipped_;
  bool reported_ = false;
};

}  // namespace provenance
