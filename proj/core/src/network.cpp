#include "network.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <fmt/format.h>

#include "provenance/error.hpp"

namespace provenance::detail {

namespace nn = torch::nn;

namespace {

nn::Conv2d conv(int in, int out, int kernel, int stride, int padding) {
  return nn::Conv2d(nn::Conv2dOptions(in, out, kernel).stride(stride).padding(padding).bias(false));
}

void init_conv_bn(nn::Module& root) {
  for (auto& m : root.modules(/*include_self=*/false)) {
    if (auto* c = m->as<nn::Conv2d>()) {
      nn::init::kaiming_normal_(c->weight, 0.0, torch::kFanOut, torch::kReLU);
    } else if (auto* b = m->as<nn::BatchNorm2d>()) {
      nn::init::ones_(b->weight);
      nn::init::zeros_(b->bias);
    }
  }
}

}  // namespace

BasicBlockImpl::BasicBlockImpl(int in_planes, int planes, int stride) {
  conv1 = register_module("conv1", conv(in_planes, planes, 3, stride, 1));
  bn1 = register_module("bn1", nn::BatchNorm2d(planes));
  conv2 = register_module("conv2", conv(planes, planes, 3, 1, 1));
  bn2 = register_module("bn2", nn::BatchNorm2d(planes));
  if (stride != 1 || in_planes != planes) {
    downsample = register_module(
        "downsample", nn::Sequential(conv(in_planes, planes, 1, stride, 0), nn::BatchNorm2d(planes)));
  }
}

torch::Tensor BasicBlockImpl::forward(torch::Tensor x) {
  auto out = torch::relu(bn1(conv1(x)));
  out = bn2(conv2(out));
  auto identity = downsample ? downsample->forward(x) : x;
  return torch::relu(out + identity);
}

ResNet::ResNet(const std::vector<int>& blocks_per_stage, int num_classes) {
  conv1 = register_module("conv1", conv(3, 64, 7, 2, 3));
  bn1 = register_module("bn1", nn::BatchNorm2d(64));
  int in_planes = 64;
  layer1 = register_module("layer1", make_stage(in_planes, 64, blocks_per_stage[0], 1));
  layer2 = register_module("layer2", make_stage(in_planes, 128, blocks_per_stage[1], 2));
  layer3 = register_module("layer3", make_stage(in_planes, 256, blocks_per_stage[2], 2));
  layer4 = register_module("layer4", make_stage(in_planes, 512, blocks_per_stage[3], 2));
  fc = register_module("fc", nn::Linear(512, num_classes));
  init_conv_bn(*this);
}

nn::Sequential ResNet::make_stage(int& in_planes, int planes, int blocks, int stride) {
  nn::Sequential stage;
  for (int b = 0; b < blocks; ++b) {
    stage->push_back(BasicBlock(in_planes, planes, b == 0 ? stride : 1));
    in_planes = planes;
  }
  return stage;
}

torch::Tensor ResNet::forward(torch::Tensor x) {
  x = torch::relu(bn1(conv1(x)));
  x = torch::max_pool2d(x, 3, 2, 1);
  x = layer4->forward(layer3->forward(layer2->forward(layer1->forward(x))));
  x = torch::adaptive_avg_pool2d(x, {1, 1}).flatten(1);
  return fc(x);
}

TinyNet::TinyNet(const std::vector<int>& channels, int num_classes) {
  if (channels.empty()) throw ConfigError("tiny backbone needs at least one block");
  nn::Sequential seq;
  int in = 3;
  for (std::size_t i = 0; i < channels.size(); ++i) {
    if (channels[i] <= 0) throw ConfigError("tiny backbone widths must be positive");
    // The stem downsamples by 2 before pooling so the 256x256 input stays cheap.
    seq->push_back(i == 0 ? conv(in, channels[i], 5, 2, 2) : conv(in, channels[i], 3, 1, 1));
    seq->push_back(nn::BatchNorm2d(channels[i]));
    seq->push_back(nn::ReLU());
    seq->push_back(nn::MaxPool2d(nn::MaxPool2dOptions(2)));
    in = channels[i];
  }
  features = register_module("features", seq);
  fc = register_module("fc", nn::Linear(in, num_classes));
  init_conv_bn(*this);
}

torch::Tensor TinyNet::forward(torch::Tensor x) {
  x = features->forward(x);
  x = torch::adaptive_avg_pool2d(x, {1, 1}).flatten(1);
  return fc(x);
}

std::shared_ptr<Network> make_network(const BackboneSpec& spec, int num_classes) {
  switch (spec.architecture) {
    case Architecture::resnet34: return std::make_shared<ResNet>(std::vector<int>{3, 4, 6, 3}, num_classes);
    case Architecture::resnet18: return std::make_shared<ResNet>(std::vector<int>{2, 2, 2, 2}, num_classes);
    case Architecture::tiny: return std::make_shared<TinyNet>(spec.tiny_channels, num_classes);
  }
  throw ConfigError("unknown architecture");
}

std::vector<std::pair<std::string, torch::Tensor>> named_state(const torch::nn::Module& module) {
  std::vector<std::pair<std::string, torch::Tensor>> out;
  for (const auto& p : module.named_parameters(/*recurse=*/true)) out.emplace_back(p.key(), p.value());
  for (const auto& b : module.named_buffers(/*recurse=*/true)) out.emplace_back(b.key(), b.value());
  return out;
}

void copy_state(const torch::nn::Module& from, torch::nn::Module& to) {
  torch::NoGradGuard guard;
  auto src = named_state(from);
  auto dst = named_state(to);
  if (src.size() != dst.size()) throw RuntimeError("model state layouts differ");
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (src[i].first != dst[i].first || !src[i].second.sizes().equals(dst[i].second.sizes())) {
      throw RuntimeError(fmt::format("model state mismatch at '{}'", src[i].first));
    }
    dst[i].second.copy_(src[i].second);
  }
}

namespace {

constexpr char kTensorMagic[8] = {'P', 'R', 'O', 'V', 'T', 'N', 'S', 'R'};

template <typename T>
void put(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& in, const std::filesystem::path& path) {
  T value{};
  if (!in.read(reinterpret_cast<char*>(&value), sizeof(T))) {
    throw DataError(fmt::format("truncated tensor file '{}'", path.generic_string()));
  }
  return value;
}

}  // namespace

void write_tensor_file(const std::filesystem::path& path,
                       const std::vector<std::pair<std::string, torch::Tensor>>& tensors) {
  static_assert(std::endian::native == std::endian::little, "tensor files are little-endian");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw RuntimeError(fmt::format("cannot write '{}'", path.generic_string()));
  out.write(kTensorMagic, sizeof kTensorMagic);
  put<std::uint32_t>(out, 1);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, tensor] : tensors) {
    const auto t = tensor.detach().contiguous().cpu();
    std::uint32_t dtype = 0;
    if (t.scalar_type() == torch::kFloat32) {
      dtype = 0;
    } else if (t.scalar_type() == torch::kInt64) {
      dtype = 1;
    } else {
      throw RuntimeError(fmt::format("unsupported dtype for tensor '{}'", name));
    }
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint32_t>(out, dtype);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.dim()));
    for (auto d : t.sizes()) put<std::int64_t>(out, d);
    out.write(static_cast<const char*>(t.data_ptr()), static_cast<std::streamsize>(t.nbytes()));
  }
  if (!out) throw RuntimeError(fmt::format("failed writing '{}'", path.generic_string()));
}

std::map<std::string, torch::Tensor> read_tensor_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(fmt::format("cannot read '{}'", path.generic_string()));
  char magic[8];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kTensorMagic, sizeof magic) != 0) {
    throw DataError(fmt::format("'{}' is not a tensor file", path.generic_string()));
  }
  if (get<std::uint32_t>(in, path) != 1) {
    throw DataError(fmt::format("unsupported tensor file version in '{}'", path.generic_string()));
  }
  const auto count = get<std::uint32_t>(in, path);
  std::map<std::string, torch::Tensor> tensors;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = get<std::uint32_t>(in, path);
    if (len > 4096) throw DataError(fmt::format("corrupt tensor name in '{}'", path.generic_string()));
    std::string name(len, '\0');
    in.read(name.data(), len);
    const auto dtype = get<std::uint32_t>(in, path);
    const auto ndim = get<std::uint32_t>(in, path);
    if (dtype > 1 || ndim > 8) {
      throw DataError(fmt::format("corrupt tensor header for '{}' in '{}'", name, path.generic_string()));
    }
    std::vector<std::int64_t> dims(ndim);
    for (auto& d : dims) d = get<std::int64_t>(in, path);
    auto t = torch::empty(dims, dtype == 0 ? torch::kFloat32 : torch::kInt64);
    if (!in.read(static_cast<char*>(t.data_ptr()), static_cast<std::streamsize>(t.nbytes()))) {
      throw DataError(fmt::format("truncated tensor '{}' in '{}'", name, path.generic_string()));
    }
    tensors.emplace(std::move(name), std::move(t));
  }
  return tensors;
}

torch::Tensor images_to_tensor(std::span<const ImageTensor> images) {
  auto batch = torch::empty({static_cast<std::int64_t>(images.size()), ImageTensor::kChannels,
                             ImageTensor::kHeight, ImageTensor::kWidth});
  float* dst = batch.data_ptr<float>();
  for (const auto& img : images) {
    std::memcpy(dst, img.data().data(), ImageTensor::kElements * sizeof(float));
    dst += ImageTensor::kElements;
  }
  return batch;
}

}  // namespace provenance::detail
