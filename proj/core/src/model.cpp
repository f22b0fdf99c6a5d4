#include "provenance/model.hpp"

#include <fstream>

#include <fmt/format.h>
#include <json.hpp>

#include "network.hpp"
#include "provenance/error.hpp"
#include "provenance/hashing.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace provenance {

std::string_view to_string(Architecture arch) {
  switch (arch) {
    case Architecture::resnet34: return "resnet34";
    case Architecture::resnet18: return "resnet18";
    case Architecture::tiny: return "tiny";
  }
  return "?";
}

Architecture parse_architecture(std::string_view text) {
  if (text == "resnet34") return Architecture::resnet34;
  if (text == "resnet18") return Architecture::resnet18;
  if (text == "tiny") return Architecture::tiny;
  throw ConfigError(fmt::format("unknown architecture '{}' (resnet34, resnet18 or tiny)", text));
}

ClassifierModel::ClassifierModel(std::unique_ptr<Impl> impl) : impl_(std::move(impl)) {}
ClassifierModel::ClassifierModel(ClassifierModel&&) noexcept = default;
ClassifierModel& ClassifierModel::operator=(ClassifierModel&&) noexcept = default;
ClassifierModel::~ClassifierModel() = default;

const BackboneSpec& ClassifierModel::backbone() const noexcept { return impl_->spec; }
std::size_t ClassifierModel::num_classes() const { return impl_->num_classes; }

namespace {

std::vector<Probabilities> softmax_rows(const torch::Tensor& logits) {
  const auto probs = torch::softmax(logits.to(torch::kFloat64), 1).contiguous();
  const auto n = static_cast<std::size_t>(probs.size(0));
  const auto k = static_cast<std::size_t>(probs.size(1));
  const double* p = probs.data_ptr<double>();
  std::vector<Probabilities> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i].assign(p + i * k, p + (i + 1) * k);
  return out;
}

}  // namespace

std::vector<Probabilities> ClassifierModel::predict(std::span<const ImageTensor> images) const {
  if (images.empty()) return {};
  torch::NoGradGuard guard;
  return detail::torch_guard([&] { return softmax_rows(impl_->net->forward(detail::images_to_tensor(images))); });
}

std::vector<Probabilities> ClassifierModel::forward(std::span<const float> nchw,
                                                    std::size_t batch) const {
  if (batch == 0 || nchw.size() != batch * ImageTensor::kElements) {
    throw ConfigError(fmt::format("forward expects {} x 3 x 256 x 256 values, got {}", batch,
                                  nchw.size()));
  }
  torch::NoGradGuard guard;
  auto input = torch::from_blob(const_cast<float*>(nchw.data()),
                                {static_cast<std::int64_t>(batch), ImageTensor::kChannels,
                                 ImageTensor::kHeight, ImageTensor::kWidth});
  return detail::torch_guard([&] { return softmax_rows(impl_->net->forward(input)); });
}

std::size_t ClassifierModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : impl_->net->parameters()) n += static_cast<std::size_t>(p.numel());
  return n;
}

ClassifierModel ClassifierModel::clone() const {
  auto impl = std::make_unique<Impl>();
  impl->spec = impl_->spec;
  impl->num_classes = impl_->num_classes;
  impl->net = detail::make_network(impl_->spec, static_cast<int>(impl_->num_classes));
  detail::copy_state(*impl_->net, *impl->net);
  impl->net->train(impl_->net->is_training());
  return ClassifierModel(std::move(impl));
}

namespace {

void load_pretrained(detail::Network& net, const BackboneSpec& spec) {
  if (spec.architecture == Architecture::tiny) {
    throw ConfigError("the tiny backbone has no pretrained weights; set pretrained=false");
  }
  const fs::path file = fs::path(spec.weights_dir) / fmt::format("{}.bin", to_string(spec.architecture));
  if (spec.weights_dir.empty() || !fs::is_regular_file(file)) {
    throw ConfigError(fmt::format(
        "pretrained {} weights not found at '{}'. Export ImageNet weights with "
        "tools/export_torchvision_weights.py and set backbone.weights_dir, or set "
        "backbone.pretrained=false",
        to_string(spec.architecture), file.generic_string()));
  }
  const auto weights = detail::read_tensor_file(file);
  torch::NoGradGuard guard;
  std::size_t loaded = 0;
  for (auto& [name, tensor] : detail::named_state(net)) {
    if (name.starts_with("fc.")) continue;  // head stays freshly initialized
    const auto it = weights.find(name);
    if (it == weights.end()) {
      throw DataError(fmt::format("pretrained file '{}' lacks tensor '{}'", file.generic_string(), name));
    }
    if (!it->second.sizes().equals(tensor.sizes())) {
      throw DataError(fmt::format("pretrained tensor '{}' has the wrong shape", name));
    }
    tensor.copy_(it->second.to(tensor.scalar_type()));
    ++loaded;
  }
  if (loaded == 0) throw DataError("no pretrained tensors loaded");
}

}  // namespace

ClassifierModel build_classifier(const BackboneSpec& spec, std::size_t num_classes,
                                 std::uint64_t init_seed) {
  if (num_classes < 2) throw ConfigError("a classifier needs at least 2 classes");
  torch::manual_seed(init_seed);
  auto impl = std::make_unique<ClassifierModel::Impl>();
  impl->spec = spec;
  impl->num_classes = num_classes;
  impl->net = detail::make_network(spec, static_cast<int>(num_classes));
  if (spec.pretrained) load_pretrained(*impl->net, spec);
  impl->net->eval();
  return ClassifierModel(std::move(impl));
}

namespace {

json backbone_to_json(const BackboneSpec& spec) {
  return {{"architecture", to_string(spec.architecture)},
          {"pretrained", spec.pretrained},
          {"tiny_channels", spec.tiny_channels}};
}

BackboneSpec backbone_from_json(const json& j) {
  BackboneSpec spec;
  spec.architecture = parse_architecture(j.at("architecture").get<std::string>());
  spec.pretrained = j.at("pretrained").get<bool>();
  spec.tiny_channels = j.at("tiny_channels").get<std::vector<int>>();
  return spec;
}

}  // namespace

void save_checkpoint(const ClassifierModel& model, const CheckpointMetadata& metadata,
                     const fs::path& dir) {
  if (metadata.num_classes != model.num_classes() || metadata.labels.size() != model.num_classes()) {
    throw ConfigError("checkpoint metadata class count does not match the model");
  }
  fs::create_directories(dir);
  detail::write_tensor_file(dir / "weights.bin", detail::named_state(*model.impl().net));
  const json meta = {
      {"format", "provenance-checkpoint"},
      {"format_version", 1},
      {"task", to_string(metadata.task)},
      {"labels", metadata.labels},
      {"num_classes", metadata.num_classes},
      {"taxonomy_hash", to_hex(metadata.taxonomy_hash)},
      {"epoch", metadata.epoch},
      {"config_hash", to_hex(metadata.config_hash)},
      {"backbone", backbone_to_json(model.backbone())},
      {"weights", "weights.bin"},
  };
  std::ofstream out(dir / "metadata.json", std::ios::trunc);
  out << meta.dump(2) << '\n';
  if (!out) throw RuntimeError(fmt::format("failed writing checkpoint metadata in '{}'", dir.generic_string()));
}

LoadedCheckpoint load_checkpoint(const fs::path& dir, const CheckpointExpectation& expect) {
  const fs::path meta_path = dir / "metadata.json";
  std::ifstream in(meta_path);
  if (!in) throw DataError(fmt::format("no checkpoint at '{}'", dir.generic_string()));
  CheckpointMetadata meta;
  try {
    const json j = json::parse(in);
    if (j.at("format").get<std::string>() != "provenance-checkpoint" ||
        j.at("format_version").get<int>() != 1) {
      throw DataError("unsupported checkpoint format");
    }
    meta.task = parse_task(j.at("task").get<std::string>());
    meta.labels = j.at("labels").get<std::vector<std::string>>();
    meta.num_classes = j.at("num_classes").get<std::size_t>();
    meta.taxonomy_hash = from_hex(j.at("taxonomy_hash").get<std::string>());
    meta.epoch = j.at("epoch").get<std::size_t>();
    meta.config_hash = from_hex(j.at("config_hash").get<std::string>());
    meta.backbone = backbone_from_json(j.at("backbone"));
  } catch (const json::exception& e) {
    throw DataError(fmt::format("malformed checkpoint metadata '{}': {}", meta_path.generic_string(), e.what()));
  }
  if (expect.task && *expect.task != meta.task) {
    throw RuntimeError(fmt::format("checkpoint '{}' was trained for task {}, expected {}",
                                   dir.generic_string(), to_string(meta.task), to_string(*expect.task)));
  }
  if (expect.taxonomy_hash && *expect.taxonomy_hash != meta.taxonomy_hash) {
    throw RuntimeError(fmt::format("checkpoint '{}' taxonomy {} does not match active taxonomy {}",
                                   dir.generic_string(), to_hex(meta.taxonomy_hash),
                                   to_hex(*expect.taxonomy_hash)));
  }
  if (meta.labels.size() != meta.num_classes) throw DataError("checkpoint label count mismatch");

  BackboneSpec spec = meta.backbone;
  spec.pretrained = false;  // weights come from the checkpoint
  auto model = build_classifier(spec, meta.num_classes);
  model.impl().spec.pretrained = meta.backbone.pretrained;
  const auto tensors = detail::read_tensor_file(dir / "weights.bin");
  torch::NoGradGuard guard;
  auto state = detail::named_state(*model.impl().net);
  if (tensors.size() != state.size()) {
    throw DataError(fmt::format("checkpoint '{}' has {} tensors, model expects {}",
                                dir.generic_string(), tensors.size(), state.size()));
  }
  for (auto& [name, tensor] : state) {
    const auto it = tensors.find(name);
    if (it == tensors.end() || !it->second.sizes().equals(tensor.sizes()) ||
        it->second.scalar_type() != tensor.scalar_type()) {
      throw DataError(fmt::format("checkpoint tensor '{}' missing or mismatched", name));
    }
    tensor.copy_(it->second);
  }
  model.impl().net->eval();
  return {std::move(model), std::move(meta)};
}

}  // namespace provenance
