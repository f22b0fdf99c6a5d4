#include "provenance/manifest.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_set>

#include <fmt/format.h>

#include "provenance/error.hpp"
#include "provenance/hashing.hpp"
#include "provenance/log.hpp"
#include "provenance/preprocessing.hpp"

namespace fs = std::filesystem;

namespace provenance {

std::string_view to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

Split parse_split(std::string_view text) {
  if (text == "train") return Split::train;
  if (text == "val") return Split::val;
  if (text == "test") return Split::test;
  throw DataError(fmt::format("unknown split '{}'", text));
}

std::size_t SplitQuota::of(Split s) const noexcept {
  switch (s) {
    case Split::train: return train;
    case Split::val: return val;
    case Split::test: return test;
  }
  return 0;
}

std::string BalancePolicy::describe() const {
  switch (mode) {
    case BalanceMode::none: return "none";
    case BalanceMode::downsample_to_min: return "downsample_to_min";
    case BalanceMode::fixed_per_class: {
      const SplitQuota q = per_class_quota.value_or(SplitQuota{});
      return fmt::format("fixed_per_class:{},{},{}", q.train, q.val, q.test);
    }
  }
  return "?";
}

BalancePolicy BalancePolicy::parse(std::string_view text) {
  if (text == "none") return none();
  if (text == "downsample_to_min") return downsample_to_min();
  constexpr std::string_view prefix = "fixed_per_class:";
  if (text.starts_with(prefix)) {
    std::string rest(text.substr(prefix.size()));
    SplitQuota q;
    char c1 = 0, c2 = 0;
    std::istringstream in(rest);
    if ((in >> q.train >> c1 >> q.val >> c2 >> q.test) && c1 == ',' && c2 == ',' && in.eof()) {
      return fixed(q);
    }
  }
  throw ConfigError(fmt::format("invalid balance policy '{}'", text));
}

SplitQuota reference_quota(Task task) {
  switch (task) {
    case Task::flat14: return {2000, 300, 500};
    case Task::flat13: return {2000, 300, 500};
    case Task::L1: return {23240, 5810, 12450};
    case Task::L2: return {11900, 2975, 6375};
    case Task::L3_gan: return {1400, 350, 750};
    case Task::L3_dm: return {2800, 700, 1500};
  }
  return {};
}

namespace {

bool is_hidden(const fs::path& p) {
  const auto name = p.filename().string();
  return !name.empty() && name.front() == '.';
}

std::vector<fs::path> sorted_entries(const fs::path& dir) {
  std::vector<fs::path> entries;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!is_hidden(e.path())) entries.push_back(e.path());
  }
  std::sort(entries.begin(), entries.end());
  return entries;
}

void scan_leaf_dir(const fs::path& root, const fs::path& dir, const std::string& leaf,
                   const std::string& source, const ScanOptions& options, ScanResult& out,
                   std::size_t& found) {
  for (const auto& p : sorted_entries(dir)) {
    if (!fs::is_regular_file(p)) {
      out.skipped.push_back({p.generic_string(), "not a regular file"});
      continue;
    }
    if (options.verify_decode && !is_decodable_image(p)) {
      out.skipped.push_back({p.generic_string(), "not a decodable image"});
      continue;
    }
    SampleRecord r;
    r.path = p.generic_string();
    r.leaf = leaf;
    r.source_dataset = source;
    r.stable_key = fnv1a64(fs::relative(p, root).generic_string());
    out.records.push_back(std::move(r));
    ++found;
  }
}

}  // namespace

ScanResult scan_corpus(const fs::path& root, const Taxonomy& taxonomy, const ScanOptions& options) {
  if (!fs::is_directory(root)) {
    throw DataError(fmt::format("corpus root '{}' does not exist or is not a directory",
                                root.generic_string()));
  }
  bool any_family = false;
  for (Family f : {Family::real, Family::gan, Family::dm}) {
    any_family = any_family || fs::is_directory(root / std::string(to_string(f)));
  }
  if (!any_family) {
    throw DataError(fmt::format("no classes found under '{}'", root.generic_string()));
  }

  ScanResult result;
  for (const auto& leaf : taxonomy.leaves()) {
    std::size_t found = 0;
    if (leaf.family == Family::real) {
      const fs::path real_dir = root / std::string(kRealLabel);
      if (!fs::is_directory(real_dir)) {
        throw DataError(fmt::format("missing directory for class 'real': {}",
                                    real_dir.generic_string()));
      }
      for (const auto& p : sorted_entries(real_dir)) {
        if (fs::is_directory(p)) {
          scan_leaf_dir(root, p, leaf.id, p.filename().string(), options, result, found);
        } else {
          result.skipped.push_back({p.generic_string(), "outside a pristine-source directory"});
        }
      }
    } else {
      const fs::path dir = root / std::string(to_string(leaf.family)) / leaf.id;
      if (!fs::is_directory(dir)) {
        throw DataError(
            fmt::format("missing directory for class '{}': {}", leaf.id, dir.generic_string()));
      }
      scan_leaf_dir(root, dir, leaf.id, leaf.id, options, result, found);
    }
    if (found == 0) throw DataError(fmt::format("class '{}' has no readable images", leaf.id));
    result.counts[leaf.id] = found;
  }
  return result;
}

SplitQuota split_sizes(std::size_t n, const SplitRatios& ratios) {
  const std::array<double, 3> r = {ratios.train, ratios.val, ratios.test};
  for (double v : r) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError("split ratios must be non-negative");
  }
  if (std::abs(r[0] + r[1] + r[2] - 1.0) > 1e-9) {
    throw ConfigError(fmt::format("split ratios must sum to 1 (got {} + {} + {})", r[0], r[1], r[2]));
  }
  std::array<std::size_t, 3> sizes{};
  std::array<double, 3> frac{};
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    const double exact = static_cast<double>(n) * r[i];
    sizes[i] = static_cast<std::size_t>(std::floor(exact));
    frac[i] = exact - static_cast<double>(sizes[i]);
    assigned += sizes[i];
  }
  std::array<std::size_t, 3> order = {0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return frac[a] > frac[b]; });
  for (std::size_t k = 0; assigned < n; ++k, ++assigned) ++sizes[order[k % 3]];
  return {sizes[0], sizes[1], sizes[2]};
}

namespace {

/// Groups indices of `records` by leaf, each group in seeded order.
std::map<std::string, std::vector<std::size_t>> seeded_leaf_order(
    const std::vector<SampleRecord>& records, std::uint64_t seed) {
  std::map<std::string, std::vector<std::size_t>> by_leaf;
  for (std::size_t i = 0; i < records.size(); ++i) by_leaf[records[i].leaf].push_back(i);
  const std::uint64_t salt = mix64(seed);
  for (auto& [leaf, idx] : by_leaf) {
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      const auto ka = mix64(records[a].stable_key ^ salt);
      const auto kb = mix64(records[b].stable_key ^ salt);
      if (ka != kb) return ka < kb;
      return records[a].path < records[b].path;
    });
  }
  return by_leaf;
}

}  // namespace

std::vector<SampleRecord> assign_splits(std::vector<SampleRecord> records, const SplitRatios& ratios,
                                        std::uint64_t seed) {
  split_sizes(0, ratios);  // validates ratios
  for (const auto& [leaf, idx] : seeded_leaf_order(records, seed)) {
    if (idx.size() < 3) {
      throw DataError(fmt::format(
          "class '{}' has {} image(s); at least 3 are needed to populate train/val/test", leaf,
          idx.size()));
    }
    const SplitQuota sizes = split_sizes(idx.size(), ratios);
    for (std::size_t rank = 0; rank < idx.size(); ++rank) {
      SampleRecord& r = records[idx[rank]];
      r.split = rank < sizes.train                ? Split::train
                : rank < sizes.train + sizes.val ? Split::val
                                                  : Split::test;
      r.split_position = (static_cast<double>(rank) + 0.5) / static_cast<double>(idx.size());
    }
  }
  return records;
}

namespace {

std::vector<std::vector<std::size_t>> pools_by_label(const std::vector<SampleRecord>& records,
                                                     Task task, const Taxonomy& taxonomy,
                                                     const std::vector<std::string>& labels) {
  std::vector<std::vector<std::size_t>> pools(labels.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto label = taxonomy.task_label(records[i].leaf, task);
    if (!label) continue;
    const auto it = std::find(labels.begin(), labels.end(), *label);
    pools[static_cast<std::size_t>(it - labels.begin())].push_back(i);
  }
  return pools;
}

}  // namespace

std::vector<QuotaShortfall> quota_shortfalls(const std::vector<SampleRecord>& records, Task task,
                                             const Taxonomy& taxonomy, const SplitQuota& quota) {
  const auto labels = taxonomy.task_labels(task);
  const auto pools = pools_by_label(records, task, taxonomy, labels);
  std::vector<QuotaShortfall> out;
  for (std::size_t c = 0; c < labels.size(); ++c) {
    if (pools[c].size() < quota.total()) out.push_back({labels[c], quota.total(), pools[c].size()});
  }
  return out;
}

SplitManifest::SplitManifest(Task task, std::vector<std::string> labels, std::uint64_t seed,
                             BalancePolicy policy, std::uint64_t taxonomy_hash,
                             std::vector<SampleRecord> records)
    : task_(task),
      labels_(std::move(labels)),
      seed_(seed),
      policy_(std::move(policy)),
      taxonomy_hash_(taxonomy_hash),
      records_(std::move(records)) {
  std::unordered_set<std::string> paths;
  for (const auto& r : records_) {
    if (!r.split) throw DataError(fmt::format("record '{}' has no split", r.path));
    if (std::find(labels_.begin(), labels_.end(), r.label) == labels_.end()) {
      throw DataError(fmt::format("record '{}' has label '{}' outside task {}", r.path, r.label,
                                  to_string(task_)));
    }
    if (!paths.insert(r.path).second) {
      throw DataError(fmt::format("path '{}' appears more than once", r.path));
    }
  }
}

std::vector<SampleRecord> SplitManifest::records_in(Split split) const {
  std::vector<SampleRecord> out;
  for (const auto& r : records_) {
    if (r.split == split) out.push_back(r);
  }
  return out;
}

std::size_t SplitManifest::label_index(std::string_view label) const {
  const auto it = std::find(labels_.begin(), labels_.end(), label);
  if (it == labels_.end()) {
    throw DataError(fmt::format("label '{}' not in task {}", label, to_string(task_)));
  }
  return static_cast<std::size_t>(it - labels_.begin());
}

SplitManifest derive_task_manifest(const std::vector<SampleRecord>& records, Task task,
                                   const Taxonomy& taxonomy, const BalancePolicy& policy,
                                   std::uint64_t seed) {
  const auto labels = taxonomy.task_labels(task);
  for (const auto& r : records) {
    if (!r.split) throw DataError(fmt::format("record '{}' has no split assigned", r.path));
  }
  auto pools = pools_by_label(records, task, taxonomy, labels);
  for (std::size_t c = 0; c < labels.size(); ++c) {
    if (pools[c].empty()) {
      throw DataError(fmt::format("task {}: class '{}' has no records", to_string(task), labels[c]));
    }
  }

  std::vector<SampleRecord> kept;
  auto keep = [&](std::size_t idx, std::size_t label, Split split) {
    SampleRecord r = records[idx];
    r.label = labels[label];
    r.split = split;
    kept.push_back(std::move(r));
  };
  auto by_key = [&](std::size_t a, std::size_t b) {
    if (records[a].stable_key != records[b].stable_key) {
      return records[a].stable_key < records[b].stable_key;
    }
    return records[a].path < records[b].path;
  };

  switch (policy.mode) {
    case BalanceMode::none:
      for (std::size_t c = 0; c < labels.size(); ++c) {
        for (auto i : pools[c]) keep(i, c, *records[i].split);
      }
      break;

    case BalanceMode::downsample_to_min:
      for (Split s : kAllSplits) {
        std::vector<std::vector<std::size_t>> per_class(labels.size());
        for (std::size_t c = 0; c < labels.size(); ++c) {
          for (auto i : pools[c]) {
            if (records[i].split == s) per_class[c].push_back(i);
          }
        }
        std::size_t target = per_class.front().size();
        for (const auto& v : per_class) target = std::min(target, v.size());
        for (std::size_t c = 0; c < labels.size(); ++c) {
          auto& v = per_class[c];
          std::sort(v.begin(), v.end(), by_key);
          for (std::size_t k = 0; k < target; ++k) keep(v[k], c, s);
        }
      }
      break;

    case BalanceMode::fixed_per_class: {
      if (!policy.per_class_quota) throw ConfigError("fixed_per_class policy needs a quota");
      const SplitQuota q = *policy.per_class_quota;
      const auto shortfalls = quota_shortfalls(records, task, taxonomy, q);
      if (!shortfalls.empty()) {
        std::string msg = fmt::format("task {}: quota {},{},{} per class cannot be met:",
                                      to_string(task), q.train, q.val, q.test);
        for (const auto& s : shortfalls) {
          msg += fmt::format(" '{}' has {} of {} (short {});", s.label, s.available, s.required,
                             s.required - s.available);
        }
        throw DataError(msg);
      }
      for (std::size_t c = 0; c < labels.size(); ++c) {
        auto v = pools[c];
        std::sort(v.begin(), v.end(), [&](std::size_t a, std::size_t b) {
          if (records[a].split_position != records[b].split_position) {
            return records[a].split_position < records[b].split_position;
          }
          return by_key(a, b);
        });
        const std::size_t n = v.size();
        for (std::size_t k = 0; k < q.train; ++k) keep(v[k], c, Split::train);
        for (std::size_t k = n - q.test - q.val; k < n - q.test; ++k) keep(v[k], c, Split::val);
        for (std::size_t k = n - q.test; k < n; ++k) keep(v[k], c, Split::test);
      }
      break;
    }
  }

  std::sort(kept.begin(), kept.end(), [&](const SampleRecord& a, const SampleRecord& b) {
    if (a.split != b.split) return *a.split < *b.split;
    if (a.label != b.label) {
      return std::find(labels.begin(), labels.end(), a.label) <
             std::find(labels.begin(), labels.end(), b.label);
    }
    return a.path < b.path;
  });
  return SplitManifest(task, labels, seed, policy, taxonomy.hash(), std::move(kept));
}

std::size_t CountTable::total(Split split) const {
  std::size_t sum = 0;
  for (const auto& row : counts) sum += row[static_cast<std::size_t>(split)];
  return sum;
}

std::size_t CountTable::count(std::string_view label, Split split) const {
  for (std::size_t c = 0; c < labels.size(); ++c) {
    if (labels[c] == label) return counts[c][static_cast<std::size_t>(split)];
  }
  throw DataError(fmt::format("label '{}' not in count table", label));
}

std::string CountTable::render_markdown() const {
  std::string out = fmt::format("| {} | Train | Val | Test |\n|---|---:|---:|---:|\n", to_string(task));
  for (std::size_t c = 0; c < labels.size(); ++c) {
    out += fmt::format("| {} | {} | {} | {} |\n", labels[c], counts[c][0], counts[c][1], counts[c][2]);
  }
  out += fmt::format("| **Total Images** | {} | {} | {} |\n", total(Split::train),
                     total(Split::val), total(Split::test));
  auto per_class = [&](std::size_t s) {
    if (counts.empty()) return std::string("0");
    std::size_t lo = counts[0][s], hi = counts[0][s];
    for (const auto& row : counts) {
      lo = std::min(lo, row[s]);
      hi = std::max(hi, row[s]);
    }
    return lo == hi ? fmt::format("{}", lo) : fmt::format("{}-{}", lo, hi);
  };
  out += fmt::format("| **#Img per class** | {} | {} | {} |\n", per_class(0), per_class(1),
                     per_class(2));
  return out;
}

TaskManifestSet derive_all_manifests(const std::vector<SampleRecord>& records, const Taxonomy& taxonomy,
                                     const std::map<Task, TaskPolicy>& policies, std::uint64_t seed) {
  TaskManifestSet out;
  for (Task task : kAllTasks) {
    const auto it = policies.find(task);
    TaskPolicy tp = it == policies.end() ? TaskPolicy{} : it->second;
    if (tp.policy.mode == BalanceMode::fixed_per_class && tp.fall_back_if_infeasible && tp.policy.per_class_quota) {
      const SplitQuota q = *tp.policy.per_class_quota;
      auto shortfalls = quota_shortfalls(records, task, taxonomy, q);
      if (!shortfalls.empty()) {
        std::string detail;
        for (const auto& s : shortfalls) {
          detail += fmt::format("{}'{}' has {} of {}", detail.empty() ? "" : ", ", s.label, s.available,
                                s.required);
        }
        QuotaWarning w{task, q, std::move(shortfalls),
                       fmt::format("{}: quota {},{},{} per class is infeasible ({}); using the ratio split",
                                   to_string(task), q.train, q.val, q.test, detail)};
        log_warn("{}", w.message);
        out.warnings.push_back(std::move(w));
        tp.policy = BalancePolicy::none();
      }
    }
    out.manifests.emplace(task, derive_task_manifest(records, task, taxonomy, tp.policy, seed));
  }
  return out;
}

CountTable manifest_stats(const SplitManifest& manifest) {
  CountTable table;
  table.task = manifest.task();
  table.labels = manifest.labels();
  table.counts.assign(table.labels.size(), {0, 0, 0});
  for (const auto& r : manifest.records()) {
    ++table.counts[manifest.label_index(r.label)][static_cast<std::size_t>(*r.split)];
  }
  return table;
}

namespace {
constexpr std::string_view kMagic = "#provenance-manifest v1";
constexpr std::string_view kColumns = "#path\tleaf\tsource_dataset\tsplit\tlabel\tstable_key";

std::vector<std::string> split_tabs(std::string_view line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find('\t', start);
    fields.emplace_back(line.substr(start, pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return fields;
}

std::string join(const std::vector<std::string>& items, char sep) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += sep;
    out += items[i];
  }
  return out;
}
}  // namespace

std::string serialize_manifest(const SplitManifest& m) {
  std::string out = fmt::format("{}\ttask={}\tseed={}\tpolicy={}\ttaxonomy={}\tlabels={}\n", kMagic,
                                to_string(m.task()), m.seed(), m.policy().describe(),
                                to_hex(m.taxonomy_hash()), join(m.labels(), ','));
  out += kColumns;
  out += '\n';
  for (const auto& r : m.records()) {
    for (const auto* field : {&r.path, &r.leaf, &r.source_dataset, &r.label}) {
      if (field->find_first_of("\t\n\r") != std::string::npos) {
        throw DataError(fmt::format("cannot serialize field '{}' containing tab/newline", *field));
      }
    }
    out += fmt::format("{}\t{}\t{}\t{}\t{}\t{}\n", r.path, r.leaf, r.source_dataset,
                       to_string(*r.split), r.label, to_hex(r.stable_key));
  }
  return out;
}

void save_manifest(const SplitManifest& manifest, const fs::path& path) {
  const std::string text = serialize_manifest(manifest);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw RuntimeError(fmt::format("cannot write manifest '{}'", path.generic_string()));
  out << text;
  if (!out) throw RuntimeError(fmt::format("failed writing manifest '{}'", path.generic_string()));
}

SplitManifest parse_manifest(std::string_view text, const Taxonomy& taxonomy) {
  std::istringstream in{std::string(text)};
  std::string line;
  if (!std::getline(in, line) || !line.starts_with(kMagic)) {
    throw DataError("manifest line 1: missing '#provenance-manifest v1' header");
  }
  std::map<std::string, std::string> header;
  const auto head_fields = split_tabs(line);
  for (std::size_t i = 1; i < head_fields.size(); ++i) {
    const auto eq = head_fields[i].find('=');
    if (eq == std::string::npos) throw DataError("manifest line 1: malformed header field");
    header[head_fields[i].substr(0, eq)] = head_fields[i].substr(eq + 1);
  }
  for (const char* key : {"task", "seed", "policy", "taxonomy", "labels"}) {
    if (!header.count(key)) throw DataError(fmt::format("manifest line 1: missing '{}'", key));
  }
  const Task task = parse_task(header["task"]);
  const std::uint64_t tax_hash = from_hex(header["taxonomy"]);
  if (tax_hash != taxonomy.hash()) {
    throw DataError(fmt::format("manifest taxonomy {} does not match active taxonomy {}",
                                header["taxonomy"], to_hex(taxonomy.hash())));
  }
  const auto expected_labels = taxonomy.task_labels(task);
  if (header["labels"] != join(expected_labels, ',')) {
    throw DataError("manifest label order does not match the taxonomy");
  }
  std::uint64_t seed = 0;
  try {
    seed = std::stoull(header["seed"]);
  } catch (const std::exception&) {
    throw DataError("manifest line 1: invalid seed");
  }

  std::vector<SampleRecord> records;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line.front() == '#') continue;
    const auto f = split_tabs(line);
    if (f.size() != 6) {
      throw DataError(fmt::format("manifest line {}: expected 6 fields, got {}", line_no, f.size()));
    }
    SampleRecord r;
    r.path = f[0];
    r.leaf = f[1];
    r.source_dataset = f[2];
    try {
      r.split = parse_split(f[3]);
      r.stable_key = from_hex(f[5]);
    } catch (const DataError& e) {
      throw DataError(fmt::format("manifest line {}: {}", line_no, e.what()));
    }
    r.label = f[4];
    if (!taxonomy.contains(r.leaf)) {
      throw DataError(fmt::format("manifest line {}: leaf '{}' not in taxonomy", line_no, r.leaf));
    }
    const auto projected = taxonomy.task_label(r.leaf, task);
    if (!projected || *projected != r.label) {
      throw DataError(fmt::format("manifest line {}: label '{}' inconsistent with leaf '{}'",
                                  line_no, r.label, r.leaf));
    }
    records.push_back(std::move(r));
  }
  return SplitManifest(task, expected_labels, seed, BalancePolicy::parse(header["policy"]),
                       tax_hash, std::move(records));
}

SplitManifest load_manifest(const fs::path& path, const Taxonomy& taxonomy) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(fmt::format("cannot read manifest '{}'", path.generic_string()));
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_manifest(buf.str(), taxonomy);
}

}  // namespace provenance
