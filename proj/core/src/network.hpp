#pragma once

// Internal: torch-backed networks. Only model.cpp and trainer.cpp see this.

#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "provenance/error.hpp"
#include "provenance/model.hpp"

namespace provenance::detail {

class Network : public torch::nn::Module {
 public:
  /// Returns logits of shape [N, num_classes].
  virtual torch::Tensor forward(torch::Tensor x) = 0;
};

class BasicBlockImpl : public torch::nn::Module {
 public:
  BasicBlockImpl(int in_planes, int planes, int stride);
  torch::Tensor forward(torch::Tensor x);

 private:
  torch::nn::Conv2d conv1{nullptr}, conv2{nullptr};
  torch::nn::BatchNorm2d bn1{nullptr}, bn2{nullptr};
  torch::nn::Sequential downsample{nullptr};
};
TORCH_MODULE(BasicBlock);

/// ResNet with BasicBlocks; parameter names follow torchvision so exported
/// ImageNet weights load by name.
class ResNet : public Network {
 public:
  ResNet(const std::vector<int>& blocks_per_stage, int num_classes);
  torch::Tensor forward(torch::Tensor x) override;

 private:
  torch::nn::Sequential make_stage(int& in_planes, int planes, int blocks, int stride);

  torch::nn::Conv2d conv1{nullptr};
  torch::nn::BatchNorm2d bn1{nullptr};
  torch::nn::Sequential layer1{nullptr}, layer2{nullptr}, layer3{nullptr}, layer4{nullptr};
  torch::nn::Linear fc{nullptr};
};

/// A few conv-BN-ReLU-maxpool blocks, global average pooling, linear head.
class TinyNet : public Network {
 public:
  TinyNet(const std::vector<int>& channels, int num_classes);
  torch::Tensor forward(torch::Tensor x) override;

 private:
  torch::nn::Sequential features{nullptr};
  torch::nn::Linear fc{nullptr};
};

std::shared_ptr<Network> make_network(const BackboneSpec& spec, int num_classes);

/// Every parameter and buffer, by dotted name.
std::vector<std::pair<std::string, torch::Tensor>> named_state(const torch::nn::Module& module);

void copy_state(const torch::nn::Module& from, torch::nn::Module& to);

/// Tensor file: "PROVTNSR" magic, u32 version, u32 count, then per tensor
/// u32 name length, name bytes, u32 dtype (0 float32, 1 int64), u32 ndim,
/// i64 dims[ndim], raw little-endian data.
void write_tensor_file(const std::filesystem::path& path,
                       const std::vector<std::pair<std::string, torch::Tensor>>& tensors);
std::map<std::string, torch::Tensor> read_tensor_file(const std::filesystem::path& path);

torch::Tensor images_to_tensor(std::span<const ImageTensor> images);

/// Rethrows torch failures as RuntimeError without the native backtrace.
template <typename F>
decltype(auto) torch_guard(F&& f) {
  try {
    return f();
  } catch (const c10::Error& e) {
    throw RuntimeError(e.what_without_backtrace());
  }
}

}  // namespace provenance::detail

namespace provenance {

struct ClassifierModel::Impl {
  BackboneSpec spec;
  std::size_t num_classes = 0;
  std::shared_ptr<detail::Network> net;
};

}  // namespace provenance
