#include "commands.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "provenance/error.hpp"
#include "provenance/evaluator.hpp"
#include "provenance/hashing.hpp"
#include "provenance/log.hpp"
#include "provenance/model.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace provenance::cli {

namespace {

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw RuntimeError(fmt::format("cannot write '{}'", path.generic_string()));
}

bool is_image_file(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp";
}

SplitManifest require_manifest(const RunConfig& config, const Taxonomy& taxonomy, Task task) {
  const fs::path path = manifest_path(config, task);
  if (!fs::exists(path)) {
    throw DataError(fmt::format("manifest for {} not found at '{}'; run build-manifests first", to_string(task),
                                path.generic_string()));
  }
  return load_manifest(path, taxonomy);
}

std::shared_ptr<const ClassifierModel> require_checkpoint(const fs::path& dir, Task task,
                                                          const Taxonomy& taxonomy,
                                                          const RunConfig& config) {
  if (!fs::exists(dir / "metadata.json")) {
    throw DataError(fmt::format("missing checkpoint for {} at '{}'; train it first", to_string(task),
                                dir.generic_string()));
  }
  LoadedCheckpoint loaded = load_checkpoint(dir, {task, taxonomy.hash()});
  if (loaded.metadata.config_hash != config.hash()) {
    log_warn("checkpoint {} was trained with config {} (current {})", dir.generic_string(),
             to_hex(loaded.metadata.config_hash), to_hex(config.hash()));
  }
  return std::make_shared<const ClassifierModel>(std::move(loaded.model));
}

}  // namespace

RunLock::RunLock(const fs::path& dir) : path_(dir / ".lock") {
  fs::create_directories(dir);
  const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd < 0) {
    throw RuntimeError(fmt::format("'{}' is locked by another command (remove the lock file if stale)",
                                   path_.generic_string()));
  }
  const std::string pid = std::to_string(::getpid()) + "\n";
  [[maybe_unused]] const auto written = ::write(fd, pid.data(), pid.size());
  ::close(fd);
}

RunLock::~RunLock() {
  std::error_code ec;
  fs::remove(path_, ec);
}

fs::path manifest_path(const RunConfig& config, Task task) {
  return fs::path(config.output_dir) / "manifests" / (std::string(to_string(task)) + ".tsv");
}

fs::path run_dir(const RunConfig& config, std::string_view backbone, Task task) {
  return fs::path(config.output_dir) / "runs" / std::string(backbone) / std::string(to_string(task));
}

fs::path run_dir(const RunConfig& config, Task task) {
  return run_dir(config, to_string(config.backbone.architecture), task);
}

BuildManifestsResult cmd_build_manifests(const RunConfig& config, bool force) {
  if (config.corpus_root.empty()) throw ConfigError("corpus_root is not set");
  const Taxonomy taxonomy = config.taxonomy();
  ScanResult scan = scan_corpus(config.corpus_root, taxonomy);
  BuildManifestsResult result;
  result.skipped = scan.skipped;
  for (const auto& s : scan.skipped) log_warn("skipped {}: {}", s.path, s.reason);
  const auto records = assign_splits(std::move(scan.records), config.split_ratios, config.seed);

  std::map<Task, TaskPolicy> policies;
  for (Task task : kAllTasks) {
    policies[task] = TaskPolicy{config.balance_policy(task), config.balance_for(task).mode == "reference_quotas"};
  }
  TaskManifestSet set = derive_all_manifests(records, taxonomy, policies, config.seed);
  for (const auto& w : set.warnings) result.warnings.push_back(w.message);

  std::map<fs::path, std::string> files;
  std::string stats = "# Manifest statistics\n\n";
  for (auto& [task, manifest] : set.manifests) {
    files[manifest_path(config, task)] = serialize_manifest(manifest);
    stats += fmt::format("## {} ({})\n\n{}\n", to_string(task), manifest.policy().describe(),
                         manifest_stats(manifest).render_markdown());
  }
  result.manifests = std::move(set.manifests);
  if (!result.warnings.empty()) {
    stats += "## Warnings\n\n";
    for (const auto& w : result.warnings) stats += "- " + w + "\n";
    stats += "\n";
  }
  const fs::path dir = fs::path(config.output_dir) / "manifests";
  files[dir / "stats.md"] = stats;
  std::string skipped = "path\treason\n";
  for (const auto& s : result.skipped) skipped += s.path + "\t" + s.reason + "\n";
  files[dir / "skipped.tsv"] = skipped;
  files[dir / "taxonomy.tsv"] = taxonomy.serialize();
  files[dir / "config.json"] = config.to_json();

  RunLock lock(config.output_dir);
  if (!force) {
    for (const auto& [path, text] : files) {
      if (fs::exists(path) && read_text(path) != text) {
        throw ConfigError(fmt::format("'{}' exists with different content; pass --force to overwrite",
                                      path.generic_string()));
      }
    }
  }
  for (const auto& [path, text] : files) write_text(path, text);
  log_info("wrote {} manifests to {}", result.manifests.size(), dir.generic_string());
  return result;
}

SurrogateSummary cmd_make_surrogate(const fs::path& root, std::size_t images_per_leaf, int size,
                                    std::uint64_t seed, bool force) {
  SurrogateOptions options;
  options.images_per_leaf = images_per_leaf;
  options.size = size;
  options.seed = seed;
  options.overwrite = force;
  return make_surrogate(root, Taxonomy::build_default(), options);
}

TrainSummary cmd_train(const RunConfig& config, Task task, bool force,
                       std::function<void(const EpochStats&)> on_epoch) {
  const Taxonomy taxonomy = config.taxonomy();
  const SplitManifest manifest = require_manifest(config, taxonomy, task);
  const TrainConfig train_config = config.train_config(task);
  train_config.validate();
  const fs::path dir = run_dir(config, task);
  if (fs::exists(dir / "best") && !force) {
    throw ConfigError(fmt::format("run '{}' already exists; pass --force to retrain", dir.generic_string()));
  }
  RunLock lock(dir);
  for (const char* sub : {"best", "last", "curves.tsv", "summary.json"}) fs::remove_all(dir / sub);
  write_text(dir / "config.json", config.to_json());
  write_text(dir / "train_config.json",
             json{{"task", to_string(task)},
                  {"batch_size", train_config.batch_size},
                  {"learning_rate", train_config.learning_rate},
                  {"momentum", train_config.momentum},
                  {"epochs", train_config.epochs},
                  {"seed", train_config.seed},
                  {"device", train_config.device}}
                     .dump(2) + "\n");

  ClassifierModel model = build_classifier(config.backbone, manifest.num_classes(), train_config.seed);
  TrainingCurves live;
  TrainOptions options;
  options.loader = make_loader(config.normalization);
  options.on_epoch = [&](const EpochStats& s) {
    live.append(s);
    live.save(dir / "curves.tsv");
    if (on_epoch) on_epoch(s);
  };
  TrainResult result = train(std::move(model), manifest, train_config, options);
  result.curves.save(dir / "curves.tsv");

  CheckpointMetadata meta;
  meta.task = task;
  meta.labels = manifest.labels();
  meta.taxonomy_hash = taxonomy.hash();
  meta.config_hash = config.hash();
  meta.backbone = config.backbone;
  meta.num_classes = manifest.num_classes();
  meta.epoch = result.best_epoch;
  save_checkpoint(result.best, meta, dir / "best");
  meta.epoch = train_config.epochs;
  save_checkpoint(result.last, meta, dir / "last");

  const SplitEvaluation test =
      evaluate_split(result.best, manifest, Split::test, options.loader, train_config.batch_size);
  TrainSummary summary{dir, result.best_epoch, result.best_val_accuracy, test.accuracy,
                       test.confusion.total()};
  write_text(dir / "summary.json", json{{"task", to_string(task)},
                                        {"epochs", train_config.epochs},
                                        {"best_epoch", summary.best_epoch},
                                        {"best_val_accuracy", summary.best_val_accuracy},
                                        {"test_accuracy", summary.test_accuracy},
                                        {"test_correct", test.confusion.correct()},
                                        {"test_total", summary.test_total}}
                                       .dump(2) + "\n");
  log_info("{}: best epoch {} val {:.4f} test {:.4f}", to_string(task), summary.best_epoch,
           summary.best_val_accuracy, summary.test_accuracy);
  return summary;
}

Cascade load_cascade(const RunConfig& config) {
  const Taxonomy taxonomy = config.taxonomy();
  auto member = [&](Task task) {
    return CascadeMember{require_checkpoint(run_dir(config, task) / "best", task, taxonomy, config), task,
                         taxonomy.hash()};
  };
  CascadeModels models{member(Task::L1), member(Task::L2), member(Task::L3_gan), member(Task::L3_dm)};
  CascadeOptions options;
  options.thresholds = config.cascade_thresholds;
  return Cascade(taxonomy, std::move(models), options);
}

fs::path cmd_eval(const RunConfig& config) {
  const Taxonomy taxonomy = config.taxonomy();
  std::map<Task, SplitManifest> manifests;
  for (Task task : kAllTasks) {
    if (task == Task::flat13 && !fs::exists(manifest_path(config, task))) continue;
    manifests.emplace(task, require_manifest(config, taxonomy, task));
  }
  const Cascade cascade = load_cascade(config);
  const ImageLoader loader = make_loader(config.normalization);
  const std::size_t batch = config.eval_batch_size;
  const std::string backbone(to_string(config.backbone.architecture));

  HierarchyManifests hm{&manifests.at(Task::L1), &manifests.at(Task::L2), &manifests.at(Task::L3_gan),
                        &manifests.at(Task::L3_dm), &manifests.at(Task::flat14)};
  HierarchyEvaluation hierarchy = evaluate_hierarchy(cascade, hm, loader, batch);

  EvalReport report;
  report.ground_truth_routed = hierarchy.ground_truth_routed;
  report.cascade_routed = std::move(hierarchy.cascade_routed);
  report.backbone_runs[backbone] = report.ground_truth_routed;
  for (Task task : {Task::flat14, Task::flat13}) {
    const fs::path ckpt = run_dir(config, task) / "best";
    if (!manifests.count(task)) continue;
    if (!fs::exists(ckpt / "metadata.json")) {
      log_warn("no {} checkpoint at {}; flat baseline omitted", to_string(task), ckpt.generic_string());
      continue;
    }
    const auto model = require_checkpoint(ckpt, task, taxonomy, config);
    report.flat[task] = evaluate_flat(*model, manifests.at(task), loader, batch);
  }

  const fs::path runs = fs::path(config.output_dir) / "runs";
  if (fs::exists(runs)) {
    std::vector<fs::path> others;
    for (const auto& entry : fs::directory_iterator(runs)) {
      if (entry.is_directory() && entry.path().filename() != backbone) others.push_back(entry.path());
    }
    std::sort(others.begin(), others.end());
    for (const auto& other : others) {
      const std::string name = other.filename().string();
      std::map<Task, LevelResult> levels;
      for (Task task : kHierarchyTasks) {
        const fs::path ckpt = other / std::string(to_string(task)) / "best";
        if (!fs::exists(ckpt / "metadata.json")) continue;
        const auto model = require_checkpoint(ckpt, task, taxonomy, config);
        levels[task] = LevelResult{task, evaluate_split(*model, manifests.at(task), Split::test, loader, batch)};
      }
      if (!levels.empty()) report.backbone_runs[name] = std::move(levels);
    }
  }

  for (const auto& [task, m] : manifests) report.count_tables.push_back(manifest_stats(m));
  const fs::path eval_dir = fs::path(config.output_dir) / "eval";
  for (Task task : kAllTasks) {
    const fs::path curves = run_dir(config, task) / "curves.tsv";
    if (fs::exists(curves)) {
      report.curves.push_back({std::string(to_string(task)), fs::relative(curves, eval_dir).generic_string()});
    }
  }
  report.provenance = {{"config_hash", to_hex(config.hash())},
                       {"seed", std::to_string(config.seed)},
                       {"taxonomy_hash", to_hex(taxonomy.hash())},
                       {"backbone", backbone},
                       {"corpus_root", config.corpus_root}};
  for (Task task : kAllTasks) {
    const fs::path meta = run_dir(config, task) / "best" / "metadata.json";
    if (!fs::exists(meta)) continue;
    const json j = json::parse(read_text(meta));
    report.provenance.emplace_back("checkpoint." + std::string(to_string(task)),
                                   fmt::format("{} epoch={}", fs::relative(meta.parent_path(), eval_dir).generic_string(),
                                               j.value("epoch", 0)));
  }

  RunLock lock(config.output_dir);
  render_report(report, eval_dir, config.report_formats);
  log_info("report written to {}", eval_dir.generic_string());
  return eval_dir;
}

std::vector<CascadeRecordResult> cmd_infer(const RunConfig& config, const fs::path& input,
                                           const std::optional<fs::path>& output) {
  if (!fs::exists(input)) throw DataError(fmt::format("input '{}' does not exist", input.generic_string()));
  std::vector<std::string> paths;
  if (fs::is_directory(input)) {
    for (const auto& entry : fs::recursive_directory_iterator(input)) {
      if (entry.is_regular_file() && is_image_file(entry.path())) paths.push_back(entry.path().generic_string());
    }
    std::sort(paths.begin(), paths.end());
    if (paths.empty()) throw DataError(fmt::format("no images under '{}'", input.generic_string()));
  } else {
    paths.push_back(input.generic_string());
  }
  const Cascade cascade = load_cascade(config);
  auto results = classify_paths(cascade, paths, make_loader(config.normalization), config.eval_batch_size);
  const fs::path out = output ? *output : fs::path(config.output_dir) / "infer" / "predictions.tsv";
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_predictions(results, out);
  return results;
}

namespace {

void draw_curves(const std::vector<std::pair<std::string, std::vector<double>>>& series, const std::string& title,
                 const fs::path& path) {
  const int w = 800, h = 500, left = 70, right = 20, top = 40, bottom = 60;
  cv::Mat img(h, w, CV_8UC3, cv::Scalar(255, 255, 255));
  double lo = 0.0, hi = 1.0;
  std::size_t n = 0;
  bool first = true;
  for (const auto& [name, values] : series) {
    n = std::max(n, values.size());
    for (double v : values) {
      if (first) {
        lo = hi = v;
        first = false;
      }
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  if (hi - lo < 1e-9) hi = lo + 1.0;
  const int pw = w - left - right, ph = h - top - bottom;
  cv::rectangle(img, {left, top}, {left + pw, top + ph}, cv::Scalar(0, 0, 0), 1);
  auto font = cv::FONT_HERSHEY_SIMPLEX;
  cv::putText(img, title, {left, 25}, font, 0.6, cv::Scalar(0, 0, 0), 1, cv::LINE_AA);
  for (int t = 0; t <= 4; ++t) {
    const double v = lo + (hi - lo) * t / 4.0;
    const int y = top + ph - static_cast<int>(ph * t / 4.0);
    cv::line(img, {left - 4, y}, {left, y}, cv::Scalar(0, 0, 0));
    cv::putText(img, fmt::format("{:.3g}", v), {5, y + 4}, font, 0.4, cv::Scalar(0, 0, 0), 1, cv::LINE_AA);
  }
  cv::putText(img, "epoch", {left + pw / 2 - 20, h - 15}, font, 0.5, cv::Scalar(0, 0, 0), 1, cv::LINE_AA);
  cv::putText(img, "1", {left - 3, top + ph + 18}, font, 0.4, cv::Scalar(0, 0, 0), 1, cv::LINE_AA);
  cv::putText(img, std::to_string(n), {left + pw - 10, top + ph + 18}, font, 0.4, cv::Scalar(0, 0, 0), 1,
              cv::LINE_AA);
  const std::array<cv::Scalar, 2> colors = {cv::Scalar(200, 80, 0), cv::Scalar(0, 100, 220)};
  for (std::size_t s = 0; s < series.size(); ++s) {
    const auto& values = series[s].second;
    std::vector<cv::Point> pts;
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double fx = n > 1 ? static_cast<double>(i) / static_cast<double>(n - 1) : 0.5;
      pts.emplace_back(left + static_cast<int>(fx * pw), top + ph - static_cast<int>((values[i] - lo) / (hi - lo) * ph));
    }
    cv::polylines(img, pts, false, colors[s % 2], 2, cv::LINE_AA);
    const int ly = top + 20 + 20 * static_cast<int>(s);
    cv::line(img, {left + pw - 150, ly - 4}, {left + pw - 120, ly - 4}, colors[s % 2], 2);
    cv::putText(img, series[s].first, {left + pw - 112, ly}, font, 0.45, cv::Scalar(0, 0, 0), 1, cv::LINE_AA);
  }
  if (!cv::imwrite(path.string(), img)) throw RuntimeError(fmt::format("cannot write '{}'", path.generic_string()));
}

}  // namespace

std::vector<fs::path> cmd_plot(const fs::path& dir) {
  if (!fs::exists(dir)) throw DataError(fmt::format("'{}' does not exist", dir.generic_string()));
  std::vector<fs::path> curve_files;
  if (fs::exists(dir / "curves.tsv")) {
    curve_files.push_back(dir / "curves.tsv");
  } else {
    for (const auto& entry : fs::recursive_directory_iterator(dir)) {
      if (entry.is_regular_file() && entry.path().filename() == "curves.tsv") curve_files.push_back(entry.path());
    }
    std::sort(curve_files.begin(), curve_files.end());
  }
  if (curve_files.empty()) throw DataError(fmt::format("no curves.tsv under '{}'", dir.generic_string()));
  std::vector<fs::path> written;
  for (const auto& file : curve_files) {
    const TrainingCurves c = TrainingCurves::load(file);
    const std::string name = file.parent_path().filename().string();
    const fs::path loss = file.parent_path() / "loss.png";
    const fs::path acc = file.parent_path() / "accuracy.png";
    draw_curves({{"train loss", c.train_loss}, {"val loss", c.eval_loss}}, name + " loss", loss);
    draw_curves({{"train accuracy", c.train_accuracy}, {"val accuracy", c.eval_accuracy}}, name + " accuracy", acc);
    written.push_back(loss);
    written.push_back(acc);
  }
  return written;
}

int run_cli(int argc, char** argv) {
  CLI::App app{"Hierarchical image provenance classifier"};
  app.require_subcommand(1);
  std::string config_path;
  std::vector<std::string> overrides;
  bool force = false;
  bool quiet = false;
  bool verbose = false;
  app.add_flag("-q,--quiet", quiet, "Only print warnings and errors");
  app.add_flag("-v,--verbose", verbose, "Print debug messages");

  auto add_config = [&](CLI::App* cmd) {
    cmd->add_option("-c,--config", config_path, "Run config file (JSON, comments allowed)")->required();
    cmd->add_option("-s,--set", overrides, "Override a config key, e.g. --set train.defaults.epochs=5");
  };

  auto* build = app.add_subcommand("build-manifests", "Scan the corpus and write the six task manifests");
  add_config(build);
  build->add_flag("-f,--force", force, "Overwrite manifests that differ from the existing ones");

  std::string surrogate_root;
  std::size_t per_leaf = 10;
  int size = 256;
  std::uint64_t surrogate_seed = 0;
  auto* surrogate = app.add_subcommand("make-surrogate", "Generate a procedural corpus in taxonomy layout");
  surrogate->add_option("-o,--output", surrogate_root, "Corpus root to create")->required();
  surrogate->add_option("-n,--images-per-leaf", per_leaf, "Images per leaf class")->capture_default_str();
  surrogate->add_option("--size", size, "Image side in pixels")->capture_default_str();
  surrogate->add_option("--seed", surrogate_seed, "Generator seed")->capture_default_str();
  surrogate->add_flag("-f,--force", force, "Replace an existing corpus");

  std::vector<std::string> tasks;
  auto* train_cmd = app.add_subcommand("train", "Train one or more tasks");
  add_config(train_cmd);
  train_cmd->add_option("-t,--task", tasks, "flat14, flat13, L1, L2, L3_gan, L3_dm (default: all)");
  train_cmd->add_flag("-f,--force", force, "Replace existing runs");

  auto* eval = app.add_subcommand("eval", "Evaluate the cascade and baselines and write the report");
  add_config(eval);

  std::string input;
  std::string output;
  auto* infer = app.add_subcommand("infer", "Classify an image or a directory of images");
  add_config(infer);
  infer->add_option("input", input, "Image file or directory")->required();
  infer->add_option("-o,--output", output, "Prediction file (default <output_dir>/infer/predictions.tsv)");

  std::string plot_dir;
  auto* plot = app.add_subcommand("plot", "Render loss and accuracy curves for training runs");
  plot->add_option("dir", plot_dir, "Run directory, or any directory containing runs")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }
  set_log_level(quiet ? LogLevel::warn : verbose ? LogLevel::debug : LogLevel::info);

  try {
    auto config = [&] { return load_run_config(config_path, overrides); };
    if (*build) {
      const auto r = cmd_build_manifests(config(), force);
      for (const auto& [task, m] : r.manifests) {
        std::cout << fmt::format("{}\t{} records\t{} classes\n", to_string(task), m.records().size(), m.num_classes());
      }
    } else if (*surrogate) {
      const auto s = cmd_make_surrogate(surrogate_root, per_leaf, size, surrogate_seed, force);
      std::cout << fmt::format("{} images written to {}\n", s.images, surrogate_root);
    } else if (*train_cmd) {
      const RunConfig c = config();
      std::vector<Task> selected;
      if (tasks.empty()) {
        selected.assign(kAllTasks.begin(), kAllTasks.end());
      } else {
        for (const auto& t : tasks) selected.push_back(parse_task(t));
      }
      for (Task t : selected) {
        const auto s = cmd_train(c, t, force);
        std::cout << fmt::format("{}\tbest_epoch={}\tval={:.4f}\ttest={:.4f}\t{}\n", to_string(t), s.best_epoch,
                                 s.best_val_accuracy, s.test_accuracy, s.dir.generic_string());
      }
    } else if (*eval) {
      const fs::path dir = cmd_eval(config());
      std::cout << (dir / "report.md").generic_string() << "\n";
    } else if (*infer) {
      std::optional<fs::path> out;
      if (!output.empty()) out = output;
      const auto results = cmd_infer(config(), input, out);
      std::cout << prediction_file_header() << "\n";
      for (const auto& r : results) std::cout << format_prediction_line(r) << "\n";
      for (const auto& r : results) {
        if (!r.prediction) return kDataError;
      }
    } else if (*plot) {
      for (const auto& p : cmd_plot(plot_dir)) std::cout << p.generic_string() << "\n";
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kDataError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntimeError;
  }
  return kOk;
}

}  // namespace provenance::cli
