#include "provenance/trainer.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "network.hpp"
#include "provenance/error.hpp"
#include "provenance/log.hpp"

namespace provenance {

TrainConfig TrainConfig::defaults_for(Task task) {
  TrainConfig cfg;
  switch (task) {
    case Task::flat14:
    case Task::flat13:
    case Task::L1: cfg.epochs = 150; break;
    case Task::L2:
    case Task::L3_gan:
    case Task::L3_dm: cfg.epochs = 100; break;
  }
  return cfg;
}

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("learning_rate must be positive");
  }
  if (!(momentum >= 0.0) || momentum >= 1.0) throw ConfigError("momentum must be in [0, 1)");
  if (device != "cpu") throw ConfigError(fmt::format("unsupported device '{}'", device));
}

void TrainingCurves::append(const EpochStats& s) {
  train_loss.push_back(s.train_loss);
  train_accuracy.push_back(s.train_accuracy);
  eval_loss.push_back(s.eval_loss);
  eval_accuracy.push_back(s.eval_accuracy);
}

EpochStats TrainingCurves::at(std::size_t i) const {
  return {i + 1, train_loss.at(i), train_accuracy.at(i), eval_loss.at(i), eval_accuracy.at(i)};
}

std::string TrainingCurves::serialize() const {
  std::string out = "epoch\ttrain_loss\ttrain_accuracy\teval_loss\teval_accuracy\n";
  for (std::size_t i = 0; i < epochs(); ++i) {
    out += fmt::format("{}\t{:.17g}\t{:.17g}\t{:.17g}\t{:.17g}\n", i + 1, train_loss[i],
                       train_accuracy[i], eval_loss[i], eval_accuracy[i]);
  }
  return out;
}

TrainingCurves TrainingCurves::parse(std::string_view text) {
  TrainingCurves curves;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1 || line.empty()) continue;
    std::istringstream row(line);
    EpochStats s;
    if (!(row >> s.epoch >> s.train_loss >> s.train_accuracy >> s.eval_loss >> s.eval_accuracy) ||
        s.epoch != curves.epochs() + 1) {
      throw DataError(fmt::format("curves line {}: malformed", line_no));
    }
    curves.append(s);
  }
  return curves;
}

void TrainingCurves::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  out << serialize();
  if (!out) throw RuntimeError(fmt::format("cannot write curves '{}'", path.generic_string()));
}

TrainingCurves TrainingCurves::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError(fmt::format("cannot read curves '{}'", path.generic_string()));
  std::stringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

SplitEvaluation evaluate_split(const Classifier& model, const SplitManifest& manifest, Split split,
                               const ImageLoader& loader, std::size_t batch_size) {
  if (model.num_classes() != manifest.num_classes()) {
    throw ConfigError(fmt::format("model has {} classes, task {} has {}", model.num_classes(),
                                  to_string(manifest.task()), manifest.num_classes()));
  }
  BatchIterator it(manifest, split, batch_size, std::nullopt, loader);
  SplitEvaluation eval{ConfusionMatrix(manifest.labels()), 0.0, {}, 0.0, {}};
  double loss_sum = 0.0;
  while (auto batch = it.next()) {
    const auto probs = model.predict(batch->images);
    for (std::size_t i = 0; i < batch->size(); ++i) {
      const std::size_t truth = batch->labels[i];
      const std::size_t pred = argmax(probs[i]);
      eval.confusion.add(truth, pred);
      loss_sum += -std::log(std::max(probs[i][truth], 1e-300));
      eval.predictions.push_back({batch->images[i].source_path(), truth, pred, probs[i]});
    }
  }
  eval.accuracy = eval.confusion.accuracy();
  eval.per_class_accuracy = eval.confusion.per_class_accuracy();
  eval.loss = eval.confusion.total() ? loss_sum / static_cast<double>(eval.confusion.total()) : 0.0;
  return eval;
}

TrainResult train(ClassifierModel model, const SplitManifest& manifest, const TrainConfig& config,
                  const TrainOptions& options) {
  config.validate();
  if (config.epochs == 0) throw ConfigError("epochs = 0: no training performed");
  if (model.num_classes() != manifest.num_classes()) {
    throw ConfigError(fmt::format("model has {} outputs but task {} has {} classes",
                                  model.num_classes(), to_string(manifest.task()),
                                  manifest.num_classes()));
  }
  if (!options.loader) throw ConfigError("train needs an image loader");

  torch::manual_seed(config.seed);
  auto& net = *model.impl().net;
  torch::optim::SGD optimizer(
      net.parameters(), torch::optim::SGDOptions(config.learning_rate).momentum(config.momentum));

  BatchIterator train_it(manifest, Split::train, config.batch_size, config.seed, options.loader);
  // Fail on an empty validation split before spending an epoch.
  static_cast<void>(BatchIterator(manifest, Split::val, config.batch_size, std::nullopt, options.loader));

  TrainingCurves curves;
  std::optional<ClassifierModel> best;
  std::size_t best_epoch = 0;
  double best_acc = -1.0;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    net.train();
    train_it.start_epoch(epoch - 1);
    double loss_sum = 0.0;
    std::size_t correct = 0, seen = 0, batch_index = 0;
    while (auto batch = train_it.next()) {
      auto input = detail::images_to_tensor(batch->images);
      std::vector<std::int64_t> labels(batch->labels.begin(), batch->labels.end());
      auto target = torch::tensor(labels, torch::kInt64);
      optimizer.zero_grad();
      auto logits = detail::torch_guard([&] { return net.forward(input); });
      auto loss = torch::nn::functional::cross_entropy(logits, target);
      const double loss_value = loss.item<double>();
      if (!std::isfinite(loss_value)) {
        throw RuntimeError(fmt::format("non-finite loss {} at epoch {}, batch {}", loss_value,
                                       epoch, batch_index));
      }
      detail::torch_guard([&] {
        loss.backward();
        optimizer.step();
      });
      const auto n = batch->size();
      loss_sum += loss_value * static_cast<double>(n);
      correct += static_cast<std::size_t>(logits.argmax(1).eq(target).sum().item<std::int64_t>());
      seen += n;
      ++batch_index;
    }
    if (seen == 0) throw DataError("every training image failed to load");
    net.eval();

    const auto val = evaluate_split(model, manifest, Split::val, options.loader, config.batch_size);
    const EpochStats stats{epoch, loss_sum / static_cast<double>(seen),
                           static_cast<double>(correct) / static_cast<double>(seen), val.loss,
                           val.accuracy};
    if (!std::isfinite(stats.eval_loss) && val.confusion.total() > 0) {
      log_warn("epoch {}: validation loss is not finite", epoch);
    }
    curves.append(stats);
    if (val.accuracy > best_acc) {
      best_acc = val.accuracy;
      best_epoch = epoch;
      best = model.clone();
    }
    log_info("{} epoch {}/{}: train loss {:.4f} acc {:.4f} | val loss {:.4f} acc {:.4f}",
             to_string(manifest.task()), epoch, config.epochs, stats.train_loss,
             stats.train_accuracy, stats.eval_loss, stats.eval_accuracy);
    if (options.on_epoch) options.on_epoch(stats);
  }

  return TrainResult{std::move(*best), std::move(model), std::move(curves), best_epoch, best_acc};
}

}  // namespace provenance
