#include "provenance/evaluator.hpp"

#include <algorithm>
#include <fstream>

#include <fmt/format.h>

#include "provenance/error.hpp"

namespace fs = std::filesystem;

namespace provenance {

std::string format_percent(double fraction) { return fmt::format("{:.2f}", fraction * 100.0); }

std::string prediction_file_name(Task task) {
  return fmt::format("predictions/{}.tsv", to_string(task));
}

CascadeEvaluation score_cascade(const Taxonomy& taxonomy, std::vector<CascadeRecordResult> results) {
  std::vector<std::string> labels = taxonomy.task_labels(Task::flat14);
  bool any_undecided = false, any_error = false;
  for (const auto& r : results) {
    if (!r.prediction) {
      any_error = true;
    } else if (r.prediction->final_label == kUndecidedLabel) {
      any_undecided = true;
    }
  }
  if (any_undecided) labels.emplace_back(kUndecidedLabel);
  if (any_error) labels.emplace_back("error");

  CascadeEvaluation eval;
  eval.leaf_confusion = ConfusionMatrix(labels);
  for (Task t : kHierarchyTasks) eval.levels[t] = {};
  auto index_of = [&](std::string_view label) {
    return static_cast<std::size_t>(std::find(labels.begin(), labels.end(), label) - labels.begin());
  };

  for (const auto& r : results) {
    const std::string& truth = r.record.leaf;
    if (truth.empty()) throw DataError(fmt::format("record '{}' has no ground truth", r.record.path));
    const std::string predicted = r.prediction ? r.prediction->final_label : std::string("error");
    const bool ok = predicted == truth;
    eval.leaf_confusion.add(index_of(truth), index_of(predicted));
    ++eval.leaf.total;
    eval.leaf.correct += ok;
    if (truth != kRealLabel) {
      ++eval.synthetic_leaf.total;
      eval.synthetic_leaf.correct += ok;
    }

    auto& l1 = eval.levels[Task::L1];
    ++l1.total;
    if (!r.prediction) continue;
    const auto& p = *r.prediction;
    l1.correct += p.level1.label == *taxonomy.project_label(truth, Level::L1);
    if (p.level2) {
      auto& l2 = eval.levels[Task::L2];
      ++l2.total;
      l2.correct += p.level2->label == taxonomy.project_label(truth, Level::L2);
      if (p.level3) {
        auto& l3 = eval.levels[p.level2->label == kGanLabel ? Task::L3_gan : Task::L3_dm];
        ++l3.total;
        l3.correct += p.level3->label == truth;
      }
    }
  }
  eval.results = std::move(results);
  return eval;
}

HierarchyEvaluation evaluate_hierarchy(const Cascade& cascade, const HierarchyManifests& manifests,
                                       const ImageLoader& loader, std::size_t batch_size) {
  const std::array<std::pair<const SplitManifest*, const CascadeMember*>, 4> levels = {{
      {manifests.level1, &cascade.models().level1},
      {manifests.level2, &cascade.models().level2},
      {manifests.level3_gan, &cascade.models().level3_gan},
      {manifests.level3_dm, &cascade.models().level3_dm},
  }};
  HierarchyEvaluation out;
  for (std::size_t i = 0; i < levels.size(); ++i) {
    const Task task = kHierarchyTasks[i];
    const auto* manifest = levels[i].first;
    if (!manifest) throw ConfigError(fmt::format("missing {} test manifest", to_string(task)));
    if (manifest->task() != task) {
      throw ConfigError(fmt::format("manifest for {} has task {}", to_string(task),
                                    to_string(manifest->task())));
    }
    out.ground_truth_routed[task] = {
        task, evaluate_split(*levels[i].second->model, *manifest, Split::test, loader, batch_size)};
  }
  if (!manifests.flat14 || manifests.flat14->task() != Task::flat14) {
    throw ConfigError("cascade-routed evaluation needs the flat14 manifest");
  }
  out.cascade_routed = score_cascade(
      cascade.taxonomy(), classify_batch(cascade, *manifests.flat14, Split::test, loader, batch_size));
  return out;
}

LevelResult evaluate_flat(const Classifier& model, const SplitManifest& manifest,
                          const ImageLoader& loader, std::size_t batch_size) {
  return {manifest.task(), evaluate_split(model, manifest, Split::test, loader, batch_size)};
}

AblationTable ablation_table(std::vector<AblationRow> rows) {
  if (rows.empty()) throw ConfigError("ablation table needs at least one backbone");
  AblationTable table;
  table.rows = std::move(rows);
  table.best.assign(table.rows.size(), {false, false, false, false});
  if (table.rows.size() < 2) return table;
  for (std::size_t col = 0; col < 4; ++col) {
    std::optional<double> best;
    for (const auto& r : table.rows) {
      if (r.accuracies[col] && (!best || *r.accuracies[col] > *best)) best = r.accuracies[col];
    }
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
      table.best[i][col] = best && table.rows[i].accuracies[col] == best;
    }
  }
  return table;
}

std::string AblationTable::render_markdown() const {
  std::string out =
      "| Backbone | Level 1 Real vs AI | Level 2 GANs vs DMs | Level 3 GANs | Level 3 DMs |\n"
      "|---|---:|---:|---:|---:|\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out += fmt::format("| {} |", rows[i].backbone);
    for (std::size_t col = 0; col < 4; ++col) {
      const auto& acc = rows[i].accuracies[col];
      if (!acc) {
        out += " - |";
      } else if (best[i][col]) {
        out += fmt::format(" **{}** |", format_percent(*acc));
      } else {
        out += fmt::format(" {} |", format_percent(*acc));
      }
    }
    out += '\n';
  }
  return out;
}

std::vector<AblationRow> published_backbone_rows() {
  return {
      {"resnet18", {0.9524, 0.9768, 0.9554, 0.9729}},
      {"resnet34", {0.9763, 0.9801, 0.9777, 0.9802}},
  };
}

std::vector<AccuracyEntry> accuracy_entries(const EvalReport& report) {
  std::vector<AccuracyEntry> entries;
  auto from_eval = [](const SplitEvaluation& e) {
    return AccuracyCount{e.confusion.correct(), e.confusion.total()};
  };
  for (const auto& [task, result] : report.ground_truth_routed) {
    entries.push_back({"ground_truth_routed", std::string(to_string(task)),
                       from_eval(result.evaluation), prediction_file_name(task)});
  }
  if (report.cascade_routed) {
    const auto& c = *report.cascade_routed;
    const std::string src(kCascadePredictionFile);
    entries.push_back({"cascade_routed", "leaf", c.leaf, src});
    entries.push_back({"cascade_routed", "synthetic_leaf", c.synthetic_leaf, src});
    for (const auto& [task, count] : c.levels) {
      entries.push_back({"cascade_routed", std::string(to_string(task)), count, src});
    }
  }
  for (const auto& [task, result] : report.flat) {
    entries.push_back(
        {"flat", std::string(to_string(task)), from_eval(result.evaluation), prediction_file_name(task)});
  }
  for (const auto& [backbone, runs] : report.backbone_runs) {
    for (const auto& [task, result] : runs) {
      entries.push_back({"ablation/" + backbone, std::string(to_string(task)),
                         from_eval(result.evaluation),
                         fmt::format("predictions/ablation/{}/{}.tsv", backbone, to_string(task))});
    }
  }
  return entries;
}

namespace {

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw RuntimeError(fmt::format("cannot write '{}'", path.generic_string()));
}

std::string level_predictions(const SplitEvaluation& e) {
  const auto& labels = e.confusion.labels();
  std::string out = "path\ttruth\tpredicted\tprobabilities\n";
  for (const auto& row : e.predictions) {
    std::string probs;
    for (std::size_t i = 0; i < row.probabilities.size(); ++i) {
      probs += fmt::format("{}{:.9g}", i ? "," : "", row.probabilities[i]);
    }
    out += fmt::format("{}\t{}\t{}\t{}\n", row.path, labels[row.truth], labels[row.predicted], probs);
  }
  return out;
}

const AccuracyEntry* find_entry(const std::vector<AccuracyEntry>& entries, std::string_view section,
                                std::string_view metric) {
  for (const auto& e : entries) {
    if (e.section == section && e.metric == metric) return &e;
  }
  return nullptr;
}

std::string cell(const AccuracyEntry* e) { return e ? format_percent(e->count.value()) : "-"; }

std::string render_markdown(const EvalReport& report, const std::vector<AccuracyEntry>& entries) {
  std::string md = "# Image provenance evaluation report\n\n";

  md += "## Provenance\n\n";
  for (const auto& [key, value] : report.provenance) md += fmt::format("- {}: `{}`\n", key, value);

  md += "\n## Dataset breakdown\n\n| Task | Train | Val | Test | Classes |\n|---|---:|---:|---:|---:|\n";
  for (const auto& t : report.count_tables) {
    md += fmt::format("| {} | {} | {} | {} | {} |\n", to_string(t.task), t.total(Split::train),
                      t.total(Split::val), t.total(Split::test), t.labels.size());
  }
  for (const auto& t : report.count_tables) md += "\n" + t.render_markdown();

  const std::array<std::string_view, 4> level_names = {"L1", "L2", "L3_gan", "L3_dm"};
  auto level_row = [&](std::string_view label, std::string_view section) {
    std::string row = fmt::format("| {} |", label);
    for (auto n : level_names) row += fmt::format(" {} |", cell(find_entry(entries, section, n)));
    return row + "\n";
  };
  const std::string level_header =
      "|  | Level 1 Real vs AI | Level 2 GANs vs DMs | Level 3 GANs | Level 3 DMs |\n"
      "|---|---:|---:|---:|---:|\n";

  md += "\n## Per-level accuracy (%), ground-truth routed\n\n" + level_header;
  md += level_row("Ours", "ground_truth_routed");

  if (report.cascade_routed) {
    md += "\n## Per-level accuracy (%), cascade routed\n\n" + level_header;
    md += level_row("Ours (cascade)", "cascade_routed");
  }

  md += "\n## Hierarchical vs flat (%)\n\n| Approach | Accuracy |\n|---|---:|\n";
  const auto* flat14 = find_entry(entries, "flat", "flat14");
  const auto* flat13 = find_entry(entries, "flat", "flat13");
  const auto* leaf = find_entry(entries, "cascade_routed", "leaf");
  const auto* synth = find_entry(entries, "cascade_routed", "synthetic_leaf");
  md += fmt::format("| Flat, 14 classes | {} |\n", cell(flat14));
  md += fmt::format("| Flat, 13 classes (synthetic only) | {} |\n", cell(flat13));
  md += fmt::format("| Hierarchical end-to-end, 14 classes | {} |\n", cell(leaf));
  md += fmt::format("| Hierarchical end-to-end, 13 synthetic classes | {} |\n", cell(synth));
  for (const auto& e : entries) {
    if (e.section == "ground_truth_routed") {
      md += fmt::format("| Hierarchical {} (ground-truth routed) | {} |\n", e.metric, cell(&e));
    }
  }
  if (flat14 && leaf) {
    md += fmt::format(
        "\nObserved ordering: hierarchical end-to-end {} flat 14-class ({} vs {}). Reported only; "
        "the ordering is an empirical observation at full scale, not a property checked here.\n",
        leaf->count.value() > flat14->count.value() ? ">" : "<=", cell(leaf), cell(flat14));
  }

  if (!report.backbone_runs.empty()) {
    std::vector<AblationRow> rows;
    for (const auto& [backbone, runs] : report.backbone_runs) {
      AblationRow row{backbone, {}};
      for (std::size_t i = 0; i < kHierarchyTasks.size(); ++i) {
        if (const auto it = runs.find(kHierarchyTasks[i]); it != runs.end()) {
          row.accuracies[i] = it->second.evaluation.confusion.accuracy();
        }
      }
      rows.push_back(std::move(row));
    }
    md += "\n## Backbone comparison (%), ground-truth routed\n\n" +
          ablation_table(std::move(rows)).render_markdown();
  }

  md += "\n## Reference values from the literature (%, not measured here)\n\n";
  md += "Published ResNet results on the original 83,000-image corpus:\n\n";
  md += ablation_table(published_backbone_rows()).render_markdown();
  md += "\nPublished flat baselines: 14 classes 94.85, 13 classes 95.40.\n\n";
  md += "| Method | Real vs AI | GANs | DMs |\n|---|---:|---:|---:|\n"
        "| AutoGAN | 68.50 | 80.30 | - |\n"
        "| Fakespotter | 74.22 | 95.32 | - |\n"
        "| EM | 86.57 | 95.02 | - |\n"
        "| DCT | 87.20 | 95.89 | - |\n"
        "| CNNDetection | 78.54 | 97.32 | - |\n"
        "| DE-FAKE | 90.52 | - | 93.45 |\n"
        "| Hierarchical ResNet-34 | 97.63 | 97.77 | 98.02 |\n";

  md += "\n## Accuracy details\n\n| Section | Metric | Correct | Total | Accuracy (%) | Prediction file |\n"
        "|---|---|---:|---:|---:|---|\n";
  for (const auto& e : entries) {
    md += fmt::format("| {} | {} | {} | {} | {} | {} |\n", e.section, e.metric, e.count.correct,
                      e.count.total, format_percent(e.count.value()), e.source);
  }

  md += "\n## Confusion matrices\n";
  for (const auto& [task, r] : report.ground_truth_routed) {
    md += fmt::format("\n### {} (ground-truth routed)\n\n{}", to_string(task), r.evaluation.confusion.render_markdown());
  }
  if (report.cascade_routed) {
    md += "\n### Cascade end-to-end (leaf)\n\n" + report.cascade_routed->leaf_confusion.render_markdown();
  }
  for (const auto& [task, r] : report.flat) {
    md += fmt::format("\n### {} (flat)\n\n{}", to_string(task), r.evaluation.confusion.render_markdown());
  }

  if (!report.curves.empty()) {
    md += "\n## Training curves\n\nPer-epoch train/validation loss and accuracy:\n\n";
    for (const auto& c : report.curves) md += fmt::format("- {}: `{}`\n", c.task, c.path);
  }
  return md;
}

std::string render_delimited(const EvalReport& report, const std::vector<AccuracyEntry>& entries) {
  std::string out = "section\tmetric\tcorrect\ttotal\taccuracy\tpercent\tsource\n";
  for (const auto& e : entries) {
    out += fmt::format("{}\t{}\t{}\t{}\t{:.17g}\t{}\t{}\n", e.section, e.metric, e.count.correct,
                       e.count.total, e.count.value(), format_percent(e.count.value()), e.source);
  }
  for (const auto& row : published_backbone_rows()) {
    for (std::size_t i = 0; i < kHierarchyTasks.size(); ++i) {
      out += fmt::format("reference\t{}/{}\t-\t-\t{:.4f}\t{}\tpublished\n", row.backbone,
                         to_string(kHierarchyTasks[i]), *row.accuracies[i],
                         format_percent(*row.accuracies[i]));
    }
  }
  out += "reference\tflat14\t-\t-\t0.9485\t94.85\tpublished\n";
  out += "reference\tflat13\t-\t-\t0.9540\t95.40\tpublished\n";
  for (const auto& t : report.count_tables) {
    for (std::size_t c = 0; c < t.labels.size(); ++c) {
      out += fmt::format("count\t{}/{}\t{}\t{}\t{}\t-\tmanifest\n", to_string(t.task), t.labels[c],
                         t.counts[c][0], t.counts[c][1], t.counts[c][2]);
    }
  }
  for (const auto& [key, value] : report.provenance) {
    out += fmt::format("provenance\t{}\t-\t-\t-\t-\t{}\n", key, value);
  }
  return out;
}

}  // namespace

std::vector<fs::path> render_report(const EvalReport& report, const fs::path& dir,
                                    const std::vector<ReportFormat>& formats) {
  std::vector<fs::path> written;
  auto emit = [&](const fs::path& rel, const std::string& text) {
    write_text(dir / rel, text);
    written.push_back(dir / rel);
  };

  for (const auto* group : {&report.ground_truth_routed, &report.flat}) {
    for (const auto& [task, r] : *group) {
      emit(prediction_file_name(task), level_predictions(r.evaluation));
      emit(fmt::format("confusion/{}.tsv", to_string(task)), r.evaluation.confusion.render_delimited());
    }
  }
  for (const auto& [backbone, runs] : report.backbone_runs) {
    for (const auto& [task, r] : runs) {
      emit(fmt::format("predictions/ablation/{}/{}.tsv", backbone, to_string(task)),
           level_predictions(r.evaluation));
    }
  }
  if (report.cascade_routed) {
    std::string text = prediction_file_header() + "\n";
    for (const auto& r : report.cascade_routed->results) text += format_prediction_line(r) + "\n";
    emit(std::string(kCascadePredictionFile), text);
    emit("confusion/cascade_leaf.tsv", report.cascade_routed->leaf_confusion.render_delimited());
  }

  const auto entries = accuracy_entries(report);
  for (auto format : formats) {
    if (format == ReportFormat::markdown) emit("report.md", render_markdown(report, entries));
    if (format == ReportFormat::delimited) emit("report.tsv", render_delimited(report, entries));
  }
  return written;
}

}  // namespace provenance
