#include "provenance/preprocessing.hpp"

#include <cmath>

#include <fmt/format.h>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "provenance/error.hpp"
#include "provenance/hashing.hpp"
#include "provenance/log.hpp"

namespace provenance {

ImageTensor::ImageTensor(std::vector<float> data, std::string source_path)
    : data_(std::move(data)), source_path_(std::move(source_path)) {
  if (data_.size() != kElements) {
    throw DataError(fmt::format("image tensor for '{}' has {} values, expected {}", source_path_,
                                data_.size(), kElements));
  }
  for (float v : data_) {
    if (!std::isfinite(v)) {
      throw DataError(fmt::format("image tensor for '{}' has non-finite values", source_path_));
    }
  }
}

bool is_decodable_image(const std::filesystem::path& path) {
  try {
    const cv::Mat img = cv::imread(path.string(), cv::IMREAD_COLOR);
    return !img.empty();
  } catch (const cv::Exception&) {
    return false;
  }
}

namespace {

ImageTensor normalize_bgr(const cv::Mat& bgr, const Normalization& norm, std::string source) {
  cv::Mat resized;
  if (bgr.cols == ImageTensor::kWidth && bgr.rows == ImageTensor::kHeight) {
    resized = bgr;
  } else {
    cv::resize(bgr, resized, cv::Size(ImageTensor::kWidth, ImageTensor::kHeight), 0, 0,
               cv::INTER_LINEAR);
  }
  std::vector<float> data(ImageTensor::kElements);
  constexpr std::size_t plane = std::size_t{ImageTensor::kHeight} * ImageTensor::kWidth;
  std::array<float, 3> scale{}, shift{};
  for (int c = 0; c < 3; ++c) {
    scale[c] = 1.0f / (255.0f * norm.std[c]);
    shift[c] = norm.mean[c] / norm.std[c];
  }
  for (int y = 0; y < ImageTensor::kHeight; ++y) {
    const auto* row = resized.ptr<cv::Vec3b>(y);
    for (int x = 0; x < ImageTensor::kWidth; ++x) {
      const std::size_t off = static_cast<std::size_t>(y) * ImageTensor::kWidth + x;
      // OpenCV stores BGR; tensors are RGB.
      for (int c = 0; c < 3; ++c) {
        data[c * plane + off] = static_cast<float>(row[x][2 - c]) * scale[c] - shift[c];
      }
    }
  }
  return ImageTensor(std::move(data), std::move(source));
}

void validate(const Normalization& norm) {
  for (int c = 0; c < 3; ++c) {
    if (!(norm.std[c] > 0.0f) || !std::isfinite(norm.mean[c])) {
      throw ConfigError("normalization std must be positive and mean finite");
    }
  }
}

}  // namespace

ImageTensor prepare(const std::filesystem::path& path, const Normalization& norm) {
  validate(norm);
  cv::Mat img;
  try {
    img = cv::imread(path.string(), cv::IMREAD_COLOR);
  } catch (const cv::Exception& e) {
    throw DataError(fmt::format("cannot decode image '{}': {}", path.generic_string(), e.what()));
  }
  if (img.empty()) {
    throw DataError(fmt::format("cannot decode image '{}'", path.generic_string()));
  }
  return normalize_bgr(img, norm, path.generic_string());
}

ImageTensor prepare_rgb8(std::span<const std::uint8_t> rgb, int width, int height,
                         const Normalization& norm, std::string source_path) {
  validate(norm);
  if (width <= 0 || height <= 0 ||
      rgb.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height) * 3) {
    throw DataError(fmt::format("pixel buffer for '{}' does not match {}x{}x3", source_path, width,
                                height));
  }
  cv::Mat wrapped(height, width, CV_8UC3, const_cast<std::uint8_t*>(rgb.data()));
  cv::Mat bgr;
  cv::cvtColor(wrapped, bgr, cv::COLOR_RGB2BGR);
  return normalize_bgr(bgr, norm, std::move(source_path));
}

ImageLoader make_loader(const Normalization& norm) {
  validate(norm);
  return [norm](const std::string& path) { return prepare(path, norm); };
}

BatchIterator::BatchIterator(const SplitManifest& manifest, Split split, std::size_t batch_size,
                             std::optional<std::uint64_t> shuffle_seed, ImageLoader loader)
    : records_(manifest.records_in(split)),
      batch_size_(batch_size),
      shuffle_seed_(shuffle_seed),
      loader_(std::move(loader)) {
  if (batch_size_ == 0) throw ConfigError("batch size must be positive");
  if (records_.empty()) {
    throw DataError(fmt::format("split '{}' of task {} is empty", to_string(split),
                                to_string(manifest.task())));
  }
  labels_.reserve(records_.size());
  for (const auto& r : records_) labels_.push_back(manifest.label_index(r.label));
  start_epoch(0);
}

std::size_t BatchIterator::batches_per_epoch() const noexcept {
  return (records_.size() + batch_size_ - 1) / batch_size_;
}

std::vector<std::size_t> BatchIterator::epoch_order(std::size_t epoch) const {
  std::vector<std::size_t> order(records_.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  if (shuffle_seed_) {
    SplitMix64 rng(mix64(*shuffle_seed_) ^ mix64(0x5eed0000ULL + epoch));
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[rng.below(i)]);
    }
  }
  return order;
}

void BatchIterator::start_epoch(std::size_t epoch) {
  order_ = epoch_order(epoch);
  cursor_ = 0;
  skipped_.clear();
  reported_ = false;
}

std::optional<Batch> BatchIterator::next() {
  Batch batch;
  while (batch.size() < batch_size_ && cursor_ < order_.size()) {
    const std::size_t idx = order_[cursor_++];
    try {
      batch.images.push_back(loader_(records_[idx].path));
      batch.labels.push_back(labels_[idx]);
      batch.record_indices.push_back(idx);
    } catch (const DataError& e) {
      log_warn("skipping '{}': {}", records_[idx].path, e.what());
      skipped_.push_back({records_[idx].path, e.what()});
    }
  }
  if (cursor_ >= order_.size() && !skipped_.empty() && !reported_) {
    log_warn("epoch finished with {} skipped file(s)", skipped_.size());
    reported_ = true;
  }
  if (batch.size() == 0) return std::nullopt;
  return batch;
}

}  // namespace provenance
