#include "provenance/cascade.hpp"

#include <fstream>

#include <fmt/format.h>

#include "provenance/error.hpp"
#include "provenance/hashing.hpp"
#include "provenance/metrics.hpp"

namespace provenance {

namespace {

void check_member(const CascadeMember& m, Task expected_task, std::size_t expected_classes,
                  std::uint64_t taxonomy_hash, std::string_view name) {
  if (!m.model) throw ConfigError(fmt::format("cascade {} model is missing", name));
  if (m.task != expected_task) {
    throw ConfigError(fmt::format("cascade {} model is for task {}, expected {}", name,
                                  to_string(m.task), to_string(expected_task)));
  }
  if (m.model->num_classes() != expected_classes) {
    throw ConfigError(fmt::format("cascade {} model has {} classes, expected {}", name,
                                  m.model->num_classes(), expected_classes));
  }
  if (m.taxonomy_hash != taxonomy_hash) {
    throw ConfigError(fmt::format("cascade {} model taxonomy {} differs from {}", name,
                                  to_hex(m.taxonomy_hash), to_hex(taxonomy_hash)));
  }
}

LevelDecision decide(const Probabilities& probs, const std::vector<std::string>& labels) {
  const std::size_t idx = argmax(probs);
  return {labels[idx], idx, probs};
}

bool below(const std::optional<double>& threshold, const LevelDecision& d) {
  return threshold && d.chosen_probability() < *threshold;
}

}  // namespace

Cascade::Cascade(Taxonomy taxonomy, CascadeModels models, CascadeOptions options)
    : taxonomy_(std::move(taxonomy)), models_(std::move(models)), options_(options) {
  const std::uint64_t h = taxonomy_.hash();
  labels_ = {taxonomy_.task_labels(Task::L1), taxonomy_.task_labels(Task::L2),
             taxonomy_.task_labels(Task::L3_gan), taxonomy_.task_labels(Task::L3_dm)};
  check_member(models_.level1, Task::L1, labels_[0].size(), h, "level1");
  check_member(models_.level2, Task::L2, labels_[1].size(), h, "level2");
  check_member(models_.level3_gan, Task::L3_gan, labels_[2].size(), h, "level3_gan");
  check_member(models_.level3_dm, Task::L3_dm, labels_[3].size(), h, "level3_dm");
  for (const auto& t : options_.thresholds) {
    if (t && !(*t >= 0.0 && *t <= 1.0)) throw ConfigError("cascade thresholds must be in [0, 1]");
  }
}

CascadePrediction Cascade::classify(const ImageTensor& image) const {
  return classify_many(std::span<const ImageTensor>(&image, 1)).front();
}

std::vector<CascadePrediction> Cascade::classify_many(std::span<const ImageTensor> images) const {
  std::vector<CascadePrediction> out(images.size());
  if (images.empty()) return out;

  auto run = [&](const CascadeMember& member, const std::vector<std::size_t>& subset) {
    std::vector<ImageTensor> batch;
    batch.reserve(subset.size());
    for (auto i : subset) batch.push_back(images[i]);
    return member.model->predict(batch);
  };

  const auto p1 = models_.level1.model->predict(images);
  if (p1.size() != images.size()) throw RuntimeError("level1 model returned a wrong batch size");
  std::vector<std::size_t> to_level2;
  for (std::size_t i = 0; i < images.size(); ++i) {
    auto& pred = out[i];
    pred.level1 = decide(p1[i], labels_[0]);
    pred.path_confidence = pred.level1.chosen_probability();
    if (below(options_.thresholds[0], pred.level1)) {
      pred.final_label = kUndecidedLabel;
    } else if (pred.level1.label == kRealLabel) {
      pred.final_label = kRealLabel;
    } else {
      to_level2.push_back(i);
    }
  }
  if (to_level2.empty()) return out;

  const auto p2 = run(models_.level2, to_level2);
  std::vector<std::size_t> to_gan, to_dm;
  for (std::size_t k = 0; k < to_level2.size(); ++k) {
    auto& pred = out[to_level2[k]];
    pred.level2 = decide(p2.at(k), labels_[1]);
    pred.path_confidence *= pred.level2->chosen_probability();
    if (below(options_.thresholds[1], *pred.level2)) {
      pred.final_label = kUndecidedLabel;
    } else if (pred.level2->label == kGanLabel) {
      to_gan.push_back(to_level2[k]);
    } else {
      to_dm.push_back(to_level2[k]);
    }
  }

  auto finish = [&](const CascadeMember& member, const std::vector<std::size_t>& subset,
                    const std::vector<std::string>& labels) {
    if (subset.empty()) return;
    const auto p3 = run(member, subset);
    for (std::size_t k = 0; k < subset.size(); ++k) {
      auto& pred = out[subset[k]];
      pred.level3 = decide(p3.at(k), labels);
      pred.path_confidence *= pred.level3->chosen_probability();
      pred.final_label =
          below(options_.thresholds[2], *pred.level3) ? std::string(kUndecidedLabel) : pred.level3->label;
    }
  };
  finish(models_.level3_gan, to_gan, labels_[2]);
  finish(models_.level3_dm, to_dm, labels_[3]);
  return out;
}

namespace {

std::vector<CascadeRecordResult> classify_records(const Cascade& cascade,
                                                  std::vector<SampleRecord> records,
                                                  const ImageLoader& loader, std::size_t batch_size) {
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  std::vector<CascadeRecordResult> results(records.size());
  for (std::size_t start = 0; start < records.size(); start += batch_size) {
    const std::size_t end = std::min(records.size(), start + batch_size);
    std::vector<ImageTensor> images;
    std::vector<std::size_t> owners;
    for (std::size_t i = start; i < end; ++i) {
      results[i].record = std::move(records[i]);
      try {
        images.push_back(loader(results[i].record.path));
        owners.push_back(i);
      } catch (const Error& e) {
        results[i].error = e.what();
      }
    }
    const auto preds = cascade.classify_many(images);
    for (std::size_t k = 0; k < owners.size(); ++k) results[owners[k]].prediction = preds[k];
  }
  return results;
}

std::string join_probs(const Probabilities& p) {
  std::string out;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (i) out += ',';
    out += fmt::format("{:.9g}", p[i]);
  }
  return out;
}

}  // namespace

std::vector<CascadeRecordResult> classify_batch(const Cascade& cascade, const SplitManifest& manifest,
                                                Split split, const ImageLoader& loader,
                                                std::size_t batch_size) {
  return classify_records(cascade, manifest.records_in(split), loader, batch_size);
}

std::vector<CascadeRecordResult> classify_paths(const Cascade& cascade,
                                                const std::vector<std::string>& paths,
                                                const ImageLoader& loader, std::size_t batch_size) {
  std::vector<SampleRecord> records;
  for (const auto& p : paths) {
    SampleRecord r;
    r.path = p;
    records.push_back(std::move(r));
  }
  return classify_records(cascade, std::move(records), loader, batch_size);
}

std::string prediction_file_header() {
  return "path\ttruth\tl1_label\tl1_probs\tl2_label\tl2_probs\tl3_label\tl3_probs\tfinal_label\t"
         "path_confidence";
}

std::string format_prediction_line(const CascadeRecordResult& r) {
  const std::string truth = r.record.leaf.empty() ? "-" : r.record.leaf;
  if (!r.prediction) {
    return fmt::format("{}\t{}\t-\t-\t-\t-\t-\t-\terror\t0", r.record.path, truth);
  }
  const auto& p = *r.prediction;
  auto level = [](const std::optional<LevelDecision>& d) {
    return d ? fmt::format("{}\t{}", d->label, join_probs(d->probabilities)) : std::string("-\t-");
  };
  return fmt::format("{}\t{}\t{}\t{}\t{}\t{}\t{}\t{:.17g}", r.record.path, truth, p.level1.label,
                     join_probs(p.level1.probabilities), level(p.level2), level(p.level3),
                     p.final_label, p.path_confidence);
}

void write_predictions(const std::vector<CascadeRecordResult>& results,
                       const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  out << prediction_file_header() << '\n';
  for (const auto& r : results) out << format_prediction_line(r) << '\n';
  if (!out) throw RuntimeError(fmt::format("cannot write predictions '{}'", path.generic_string()));
}

}  // namespace provenance
