#include "run_config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#include "provenance/error.hpp"
#include "provenance/hashing.hpp"

using json = nlohmann::json;

namespace provenance::cli {

namespace {

void reject_unknown(const json& obj, std::string_view where, std::initializer_list<std::string_view> allowed) {
  if (!obj.is_object()) throw ConfigError(fmt::format("config '{}' must be an object", where));
  for (const auto& [key, value] : obj.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw ConfigError(fmt::format("unknown config key '{}{}{}'", where, where.empty() ? "" : ".", key));
    }
  }
}

template <typename T>
T get_as(const json& j, std::string_view where) {
  try {
    return j.get<T>();
  } catch (const json::exception&) {
    throw ConfigError(fmt::format("config '{}' has the wrong type", where));
  }
}

SplitQuota parse_quota(const json& j, const std::string& where) {
  reject_unknown(j, where, {"train", "val", "test"});
  SplitQuota q;
  q.train = get_as<std::size_t>(j.at("train"), where + ".train");
  q.val = get_as<std::size_t>(j.at("val"), where + ".val");
  q.test = get_as<std::size_t>(j.at("test"), where + ".test");
  return q;
}

BalanceSetting parse_balance_setting(const json& j, const std::string& where) {
  reject_unknown(j, where, {"mode", "quota", "per_task"});
  BalanceSetting b;
  if (j.contains("mode")) b.mode = get_as<std::string>(j["mode"], where + ".mode");
  if (j.contains("quota") && !j["quota"].is_null()) b.quota = parse_quota(j["quota"], where + ".quota");
  static const std::set<std::string> modes = {"none", "downsample_to_min", "fixed_per_class",
                                              "reference_quotas"};
  if (!modes.count(b.mode)) throw ConfigError(fmt::format("config '{}.mode': unknown mode '{}'", where, b.mode));
  if (b.mode == "fixed_per_class" && !b.quota) {
    throw ConfigError(fmt::format("config '{}': fixed_per_class needs a quota", where));
  }
  return b;
}

TrainOverrides parse_train(const json& j, const std::string& where) {
  reject_unknown(j, where, {"batch_size", "learning_rate", "momentum", "epochs", "seed", "device"});
  TrainOverrides t;
  if (j.contains("batch_size")) t.batch_size = get_as<std::size_t>(j["batch_size"], where + ".batch_size");
  if (j.contains("learning_rate")) t.learning_rate = get_as<double>(j["learning_rate"], where + ".learning_rate");
  if (j.contains("momentum")) t.momentum = get_as<double>(j["momentum"], where + ".momentum");
  if (j.contains("epochs")) t.epochs = get_as<std::size_t>(j["epochs"], where + ".epochs");
  if (j.contains("seed")) t.seed = get_as<std::uint64_t>(j["seed"], where + ".seed");
  if (j.contains("device")) t.device = get_as<std::string>(j["device"], where + ".device");
  return t;
}

json train_to_json(const TrainOverrides& t) {
  json j = json::object();
  if (t.batch_size) j["batch_size"] = *t.batch_size;
  if (t.learning_rate) j["learning_rate"] = *t.learning_rate;
  if (t.momentum) j["momentum"] = *t.momentum;
  if (t.epochs) j["epochs"] = *t.epochs;
  if (t.seed) j["seed"] = *t.seed;
  if (t.device) j["device"] = *t.device;
  return j;
}

json balance_to_json(const BalanceSetting& b) {
  json j = {{"mode", b.mode}};
  if (b.quota) j["quota"] = {{"train", b.quota->train}, {"val", b.quota->val}, {"test", b.quota->test}};
  return j;
}

/// Applies `a.b.c=value`; value is parsed as JSON, falling back to a string.
void apply_override(json& root, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError(fmt::format("override '{}' must look like key.path=value", assignment));
  }
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::exception&) {
    value = raw;
  }
  json* node = &root;
  std::stringstream ss(key);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    if (!node->contains(parts[i])) (*node)[parts[i]] = json::object();
    node = &(*node)[parts[i]];
    if (!node->is_object()) throw ConfigError(fmt::format("override '{}' crosses a non-object", key));
  }
  (*node)[parts.back()] = value;
}

RunConfig from_json(const json& j) {
  reject_unknown(j, "", {"corpus_root", "output_dir", "seed", "taxonomy", "backbone", "normalization",
                         "split_ratios", "balance", "train", "cascade", "eval"});
  RunConfig c;
  if (j.contains("corpus_root")) c.corpus_root = get_as<std::string>(j["corpus_root"], "corpus_root");
  if (j.contains("output_dir")) c.output_dir = get_as<std::string>(j["output_dir"], "output_dir");
  if (j.contains("seed")) c.seed = get_as<std::uint64_t>(j["seed"], "seed");
  if (j.contains("taxonomy")) {
    reject_unknown(j["taxonomy"], "taxonomy", {"dm4_id"});
    if (j["taxonomy"].contains("dm4_id")) c.dm4_id = get_as<std::string>(j["taxonomy"]["dm4_id"], "taxonomy.dm4_id");
  }
  if (j.contains("backbone")) {
    const auto& b = j["backbone"];
    reject_unknown(b, "backbone", {"architecture", "pretrained", "weights_dir", "tiny_channels"});
    if (b.contains("architecture")) {
      c.backbone.architecture = parse_architecture(get_as<std::string>(b["architecture"], "backbone.architecture"));
    }
    if (b.contains("pretrained")) c.backbone.pretrained = get_as<bool>(b["pretrained"], "backbone.pretrained");
    if (b.contains("weights_dir")) c.backbone.weights_dir = get_as<std::string>(b["weights_dir"], "backbone.weights_dir");
    if (b.contains("tiny_channels")) {
      c.backbone.tiny_channels = get_as<std::vector<int>>(b["tiny_channels"], "backbone.tiny_channels");
    }
  }
  if (j.contains("normalization")) {
    const auto& n = j["normalization"];
    reject_unknown(n, "normalization", {"mean", "std"});
    if (n.contains("mean")) c.normalization.mean = get_as<std::array<float, 3>>(n["mean"], "normalization.mean");
    if (n.contains("std")) c.normalization.std = get_as<std::array<float, 3>>(n["std"], "normalization.std");
  }
  if (j.contains("split_ratios")) {
    const auto& r = j["split_ratios"];
    reject_unknown(r, "split_ratios", {"train", "val", "test"});
    c.split_ratios.train = get_as<double>(r.at("train"), "split_ratios.train");
    c.split_ratios.val = get_as<double>(r.at("val"), "split_ratios.val");
    c.split_ratios.test = get_as<double>(r.at("test"), "split_ratios.test");
    split_sizes(0, c.split_ratios);
  }
  if (j.contains("balance")) {
    c.balance = parse_balance_setting(j["balance"], "balance");
    if (j["balance"].contains("per_task")) {
      const auto& per = j["balance"]["per_task"];
      if (!per.is_object()) throw ConfigError("config 'balance.per_task' must be an object");
      for (const auto& [task, setting] : per.items()) {
        c.balance_per_task[parse_task(task)] = parse_balance_setting(setting, "balance.per_task." + task);
      }
    }
  }
  if (j.contains("train")) {
    const auto& t = j["train"];
    reject_unknown(t, "train", {"defaults", "tasks"});
    if (t.contains("defaults")) c.train_defaults = parse_train(t["defaults"], "train.defaults");
    if (t.contains("tasks")) {
      if (!t["tasks"].is_object()) throw ConfigError("config 'train.tasks' must be an object");
      for (const auto& [task, o] : t["tasks"].items()) {
        c.train_tasks[parse_task(task)] = parse_train(o, "train.tasks." + task);
      }
    }
  }
  if (j.contains("cascade")) {
    reject_unknown(j["cascade"], "cascade", {"thresholds"});
    if (j["cascade"].contains("thresholds")) {
      const auto& th = j["cascade"]["thresholds"];
      reject_unknown(th, "cascade.thresholds", {"L1", "L2", "L3"});
      const std::array<const char*, 3> keys = {"L1", "L2", "L3"};
      for (std::size_t i = 0; i < 3; ++i) {
        if (th.contains(keys[i]) && !th[keys[i]].is_null()) {
          c.cascade_thresholds[i] = get_as<double>(th[keys[i]], "cascade.thresholds");
        }
      }
    }
  }
  if (j.contains("eval")) {
    reject_unknown(j["eval"], "eval", {"batch_size", "formats"});
    if (j["eval"].contains("batch_size")) c.eval_batch_size = get_as<std::size_t>(j["eval"]["batch_size"], "eval.batch_size");
    if (j["eval"].contains("formats")) {
      c.report_formats.clear();
      for (const auto& f : get_as<std::vector<std::string>>(j["eval"]["formats"], "eval.formats")) {
        if (f == "markdown") {
          c.report_formats.push_back(ReportFormat::markdown);
        } else if (f == "delimited") {
          c.report_formats.push_back(ReportFormat::delimited);
        } else {
          throw ConfigError(fmt::format("unknown report format '{}'", f));
        }
      }
    }
  }
  if (c.eval_batch_size == 0) throw ConfigError("eval.batch_size must be positive");
  c.taxonomy();  // validates dm4_id
  for (Task t : kAllTasks) {
    c.train_config(t).validate();
    c.balance_policy(t);
  }
  return c;
}

}  // namespace

Taxonomy RunConfig::taxonomy() const { return Taxonomy::build_default(dm4_id); }

TrainConfig RunConfig::train_config(Task task) const {
  TrainConfig cfg = TrainConfig::defaults_for(task);
  cfg.seed = seed;
  auto apply = [&](const TrainOverrides& o) {
    if (o.batch_size) cfg.batch_size = *o.batch_size;
    if (o.learning_rate) cfg.learning_rate = *o.learning_rate;
    if (o.momentum) cfg.momentum = *o.momentum;
    if (o.epochs) cfg.epochs = *o.epochs;
    if (o.seed) cfg.seed = *o.seed;
    if (o.device) cfg.device = *o.device;
  };
  apply(train_defaults);
  if (const auto it = train_tasks.find(task); it != train_tasks.end()) apply(it->second);
  return cfg;
}

BalanceSetting RunConfig::balance_for(Task task) const {
  if (const auto it = balance_per_task.find(task); it != balance_per_task.end()) return it->second;
  return balance;
}

BalancePolicy RunConfig::balance_policy(Task task) const {
  const BalanceSetting b = balance_for(task);
  if (b.mode == "none") return BalancePolicy::none();
  if (b.mode == "downsample_to_min") return BalancePolicy::downsample_to_min();
  if (b.mode == "reference_quotas") return BalancePolicy::fixed(reference_quota(task));
  if (!b.quota) throw ConfigError("fixed_per_class needs a quota");
  if (b.quota->train == 0 || b.quota->val == 0 || b.quota->test == 0) {
    throw ConfigError("fixed_per_class quotas must be positive");
  }
  return BalancePolicy::fixed(*b.quota);
}

std::string RunConfig::to_json() const {
  json j;
  j["corpus_root"] = corpus_root;
  j["output_dir"] = output_dir;
  j["seed"] = seed;
  j["taxonomy"] = {{"dm4_id", dm4_id}};
  j["backbone"] = {{"architecture", to_string(backbone.architecture)},
                   {"pretrained", backbone.pretrained},
                   {"weights_dir", backbone.weights_dir},
                   {"tiny_channels", backbone.tiny_channels}};
  j["normalization"] = {{"mean", normalization.mean}, {"std", normalization.std}};
  j["split_ratios"] = {{"train", split_ratios.train}, {"val", split_ratios.val}, {"test", split_ratios.test}};
  j["balance"] = balance_to_json(balance);
  if (!balance_per_task.empty()) {
    json per = json::object();
    for (const auto& [task, b] : balance_per_task) per[std::string(to_string(task))] = balance_to_json(b);
    j["balance"]["per_task"] = per;
  }
  j["train"]["defaults"] = train_to_json(train_defaults);
  j["train"]["tasks"] = json::object();
  for (const auto& [task, o] : train_tasks) j["train"]["tasks"][std::string(to_string(task))] = train_to_json(o);
  const std::array<const char*, 3> keys = {"L1", "L2", "L3"};
  for (std::size_t i = 0; i < 3; ++i) {
    j["cascade"]["thresholds"][keys[i]] = cascade_thresholds[i] ? json(*cascade_thresholds[i]) : json(nullptr);
  }
  j["eval"]["batch_size"] = eval_batch_size;
  j["eval"]["formats"] = json::array();
  for (auto f : report_formats) j["eval"]["formats"].push_back(f == ReportFormat::markdown ? "markdown" : "delimited");
  return j.dump(2) + "\n";
}

std::uint64_t RunConfig::hash() const { return fnv1a64(to_json()); }

RunConfig parse_run_config(std::string_view json_text, const std::vector<std::string>& overrides) {
  json j;
  try {
    j = json::parse(json_text, nullptr, /*allow_exceptions=*/true, /*ignore_comments=*/true);
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("config is not valid JSON: {}", e.what()));
  }
  for (const auto& o : overrides) apply_override(j, o);
  try {
    return from_json(j);
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("config error: {}", e.what()));
  }
}

RunConfig load_run_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot read config '{}'", path.generic_string()));
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_run_config(buf.str(), overrides);
}

}  // namespace provenance::cli
