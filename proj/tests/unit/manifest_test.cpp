#include <gtest/gtest.h>

#include <fstream>
#include <set>

#include "provenance/error.hpp"
#include "provenance/manifest.hpp"
#include "provenance/surrogate.hpp"
#include "test_support.hpp"

namespace fs = std::filesystem;
using namespace provenance;
using testing_support::synthetic_records;
using testing_support::TempDir;

namespace {

std::map<std::string, std::size_t> published_availability(const Taxonomy& t) {
  std::map<std::string, std::size_t> counts;
  for (const auto& leaf : t.leaves()) {
    counts[leaf.id] = leaf.family == Family::real ? 3 * 13500 : leaf.family == Family::gan ? 2500 : 5000;
  }
  return counts;
}

std::size_t count(const SplitManifest& m, std::string_view label, Split s) {
  std::size_t n = 0;
  for (const auto& r : m.records()) n += r.label == label && r.split == s;
  return n;
}

}  // namespace

TEST(SplitSizes, LargestRemainder) {
  EXPECT_EQ(split_sizes(2500, {}), (SplitQuota{1250, 500, 750}));
  EXPECT_EQ(split_sizes(10, {}), (SplitQuota{5, 2, 3}));
  EXPECT_EQ(split_sizes(0, {}), (SplitQuota{0, 0, 0}));
  for (std::size_t n = 3; n < 200; ++n) {
    const auto q = split_sizes(n, {});
    EXPECT_EQ(q.total(), n);
    EXPECT_LT(std::abs(static_cast<double>(q.train) - 0.5 * n), 1.0);
    EXPECT_LT(std::abs(static_cast<double>(q.val) - 0.2 * n), 1.0);
    EXPECT_LT(std::abs(static_cast<double>(q.test) - 0.3 * n), 1.0);
  }
  EXPECT_THROW(split_sizes(10, {0.5, 0.5, 0.5}), ConfigError);
  EXPECT_THROW(split_sizes(10, {-0.1, 0.6, 0.5}), ConfigError);
}

TEST(AssignSplits, StyleGan2Counts) {
  const auto t = Taxonomy::build_default();
  const auto records = assign_splits(synthetic_records(t, {{"stylegan2", 2500}}), {}, 3);
  std::map<Split, std::size_t> n;
  for (const auto& r : records) n[*r.split]++;
  EXPECT_EQ(n[Split::train], 1250u);
  EXPECT_EQ(n[Split::val], 500u);
  EXPECT_EQ(n[Split::test], 750u);
}

TEST(AssignSplits, DeterministicAndSeedSensitive) {
  const auto t = Taxonomy::build_default();
  const auto base = synthetic_records(t, 10);
  const auto a = assign_splits(base, {}, 5);
  const auto b = assign_splits(base, {}, 5);
  const auto c = assign_splits(base, {}, 6);
  bool differs = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].split, b[i].split);
    differs = differs || a[i].split != c[i].split;
  }
  EXPECT_TRUE(differs);
}

TEST(AssignSplits, IndependentOfInputOrder) {
  const auto t = Taxonomy::build_default();
  auto base = synthetic_records(t, 20);
  const auto a = assign_splits(base, {}, 9);
  std::reverse(base.begin(), base.end());
  const auto b = assign_splits(base, {}, 9);
  std::map<std::string, Split> sa, sb;
  for (const auto& r : a) sa[r.path] = *r.split;
  for (const auto& r : b) sb[r.path] = *r.split;
  EXPECT_EQ(sa, sb);
}

TEST(AssignSplits, TooFewImagesRejected) {
  const auto t = Taxonomy::build_default();
  EXPECT_THROW(assign_splits(synthetic_records(t, {{"glide", 2}}), {}, 0), DataError);
}

TEST(DeriveTaskManifest, L3DmTableRowExactly) {
  const auto t = Taxonomy::build_default();
  const auto records = assign_splits(synthetic_records(t, published_availability(t)), {}, 1);
  const auto m = derive_task_manifest(records, Task::L3_dm, t, BalancePolicy::fixed({2800, 700, 1500}), 1);
  for (const auto& label : m.labels()) {
    EXPECT_EQ(count(m, label, Split::train), 2800u);
    EXPECT_EQ(count(m, label, Split::val), 700u);
    EXPECT_EQ(count(m, label, Split::test), 1500u);
  }
}

TEST(DeriveTaskManifest, L3GanTotals) {
  const auto t = Taxonomy::build_default();
  const auto records = assign_splits(synthetic_records(t, published_availability(t)), {}, 1);
  const auto m = derive_task_manifest(records, Task::L3_gan, t, BalancePolicy::fixed(reference_quota(Task::L3_gan)), 1);
  const auto table = manifest_stats(m);
  EXPECT_EQ(table.total(Split::train), 12600u);
  EXPECT_EQ(table.total(Split::val), 3150u);
  EXPECT_EQ(table.total(Split::test), 6750u);
}

TEST(DeriveTaskManifest, L2QuotaTotalsWhenAvailable) {
  const auto t = Taxonomy::build_default();
  std::map<std::string, std::size_t> counts;
  for (const auto& leaf : t.leaves()) counts[leaf.id] = leaf.family == Family::dm ? 5400 : 2400;
  const auto records = assign_splits(synthetic_records(t, counts), {}, 2);
  const auto m = derive_task_manifest(records, Task::L2, t, BalancePolicy::fixed({11900, 2975, 6375}), 2);
  const auto table = manifest_stats(m);
  EXPECT_EQ(table.total(Split::train), 23800u);
  EXPECT_EQ(table.total(Split::val), 5950u);
  EXPECT_EQ(table.total(Split::test), 12750u);
}

TEST(DeriveTaskManifest, InfeasibleQuotaListsShortfall) {
  const auto t = Taxonomy::build_default();
  const auto records = assign_splits(synthetic_records(t, published_availability(t)), {}, 1);
  try {
    derive_task_manifest(records, Task::flat14, t, BalancePolicy::fixed(reference_quota(Task::flat14)), 1);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("stylegan2"), std::string::npos);
  }
}

TEST(DeriveTaskManifest, QuotaTestBlockStaysInGlobalTest) {
  const auto t = Taxonomy::build_default();
  const auto records = assign_splits(synthetic_records(t, published_availability(t)), {}, 4);
  std::map<std::string, Split> global;
  for (const auto& r : records) global[r.path] = *r.split;
  for (Task task : {Task::L3_gan, Task::L3_dm}) {
    const auto m = derive_task_manifest(records, task, t, BalancePolicy::fixed(reference_quota(task)), 4);
    for (const auto& r : m.records_in(Split::test)) EXPECT_EQ(global[r.path], Split::test);
  }
}

TEST(DeriveTaskManifest, ZeroRealImagesIsAnError) {
  const auto t = Taxonomy::build_default();
  auto counts = published_availability(t);
  for (auto& [leaf, n] : counts) n = leaf == "real" ? 0 : 10;
  const auto records = assign_splits(synthetic_records(t, counts), {}, 0);
  EXPECT_THROW(derive_task_manifest(records, Task::L1, t, {}, 0), DataError);
  EXPECT_NO_THROW(derive_task_manifest(records, Task::L2, t, {}, 0));
}

TEST(DeriveTaskManifest, Flat13DropsReal) {
  const auto t = Taxonomy::build_default();
  const auto records = assign_splits(synthetic_records(t, 10), {}, 0);
  const auto m = derive_task_manifest(records, Task::flat13, t, {}, 0);
  EXPECT_EQ(m.num_classes(), 13u);
  EXPECT_EQ(m.records().size(), 130u);
  for (const auto& r : m.records()) EXPECT_NE(r.leaf, "real");
}

TEST(DeriveTaskManifest, ProjectionConsistency) {
  const auto t = Taxonomy::build_default();
  const auto records = assign_splits(synthetic_records(t, 20), {}, 0);
  const auto gan = derive_task_manifest(records, Task::L3_gan, t, {}, 0);
  for (const auto& r : gan.records()) {
    EXPECT_EQ(t.project_label(r.leaf, Level::L1), "ai");
    EXPECT_EQ(t.project_label(r.leaf, Level::L2), "gan");
    EXPECT_EQ(r.label, r.leaf);
  }
  const auto l1 = derive_task_manifest(records, Task::L1, t, {}, 0);
  for (const auto& r : l1.records()) EXPECT_EQ(t.project_label(r.leaf, Level::L1), r.label);
}

TEST(DeriveTaskManifest, ConservationWithoutBalancing) {
  const auto t = Taxonomy::build_default();
  const auto records = assign_splits(synthetic_records(t, 17), {}, 0);
  for (Task task : kAllTasks) {
    const auto m = derive_task_manifest(records, task, t, {}, 0);
    std::size_t eligible = 0;
    for (const auto& r : records) eligible += t.task_label(r.leaf, task).has_value();
    EXPECT_EQ(m.records().size(), eligible) << to_string(task);
  }
}

TEST(DeriveTaskManifest, DownsampleEqualizesPerSplit) {
  const auto t = Taxonomy::build_default();
  auto counts = published_availability(t);
  for (auto& [leaf, n] : counts) n = leaf == "real" ? 60 : 20;
  const auto records = assign_splits(synthetic_records(t, counts), {}, 0);
  const auto m = derive_task_manifest(records, Task::flat14, t, BalancePolicy::downsample_to_min(), 0);
  for (Split s : kAllSplits) {
    const auto n = count(m, "real", s);
    for (const auto& label : m.labels()) EXPECT_EQ(count(m, label, s), n);
  }
  EXPECT_EQ(count(m, "real", Split::train), 10u);
}

TEST(ManifestStats, AdditivityAndEmptyTable) {
  const auto t = Taxonomy::build_default();
  const auto records = assign_splits(synthetic_records(t, 13), {}, 0);
  const auto table = manifest_stats(derive_task_manifest(records, Task::flat14, t, {}, 0));
  for (Split s : kAllSplits) {
    std::size_t sum = 0;
    for (const auto& row : table.counts) sum += row[static_cast<std::size_t>(s)];
    EXPECT_EQ(table.total(s), sum);
  }
  const SplitManifest empty(Task::L2, t.task_labels(Task::L2), 0, {}, t.hash(), {});
  const auto zero = manifest_stats(empty);
  EXPECT_EQ(zero.labels.size(), 2u);
  for (Split s : kAllSplits) EXPECT_EQ(zero.total(s), 0u);
}

TEST(DeriveAllManifests, ReferenceQuotaWarnings) {
  const auto t = Taxonomy::build_default();
  const auto records = assign_splits(synthetic_records(t, published_availability(t)), {}, 1);
  std::map<Task, TaskPolicy> policies;
  for (Task task : kAllTasks) policies[task] = {BalancePolicy::fixed(reference_quota(task)), true};
  const auto set = derive_all_manifests(records, t, policies, 1);
  std::set<Task> warned;
  for (const auto& w : set.warnings) warned.insert(w.task);
  EXPECT_EQ(warned, (std::set<Task>{Task::flat14, Task::flat13, Task::L1, Task::L2}));
  EXPECT_EQ(set.manifests.at(Task::L1).policy(), BalancePolicy::none());
  EXPECT_EQ(set.manifests.at(Task::L3_gan).policy(), BalancePolicy::fixed({1400, 350, 750}));
}

TEST(ManifestIo, RoundTripAndDeterminism) {
  TempDir dir;
  const auto t = Taxonomy::build_default();
  const auto records = assign_splits(synthetic_records(t, 11), {}, 8);
  const auto m = derive_task_manifest(records, Task::L2, t, BalancePolicy::downsample_to_min(), 8);
  save_manifest(m, dir / "l2.tsv");
  const auto back = load_manifest(dir / "l2.tsv", t);
  EXPECT_EQ(serialize_manifest(back), serialize_manifest(m));
  EXPECT_EQ(back.task(), Task::L2);
  EXPECT_EQ(back.seed(), 8u);
  EXPECT_EQ(back.policy(), BalancePolicy::downsample_to_min());
  const auto again = derive_task_manifest(assign_splits(synthetic_records(t, 11), {}, 8), Task::L2, t,
                                          BalancePolicy::downsample_to_min(), 8);
  EXPECT_EQ(serialize_manifest(again), serialize_manifest(m));
}

TEST(ManifestIo, RejectsForeignTaxonomyAndBadLines) {
  const auto t = Taxonomy::build_default();
  const auto records = assign_splits(synthetic_records(t, 5), {}, 0);
  const std::string text = serialize_manifest(derive_task_manifest(records, Task::L1, t, {}, 0));
  EXPECT_THROW(parse_manifest(text, Taxonomy::build_default("sd")), DataError);
  std::string broken = text + "extra\tfields\n";
  EXPECT_THROW(parse_manifest(broken, t), DataError);
  EXPECT_THROW(parse_manifest("", t), DataError);
}

TEST(ManifestIo, DuplicatePathRejected) {
  const auto t = Taxonomy::build_default();
  auto records = assign_splits(synthetic_records(t, 5), {}, 0);
  for (auto& r : records) r.label = *t.task_label(r.leaf, Task::flat14);
  records.push_back(records.front());
  EXPECT_THROW(SplitManifest(Task::flat14, t.task_labels(Task::flat14), 0, {}, t.hash(), records), DataError);
}

TEST(ScanCorpus, SurrogateLayout) {
  TempDir dir;
  const auto t = Taxonomy::build_default();
  make_surrogate(dir.path(), t, {10, 32, 1, false});
  const auto scan = scan_corpus(dir.path(), t);
  EXPECT_EQ(scan.records.size(), 140u);
  EXPECT_TRUE(scan.skipped.empty());
  for (const auto& leaf : t.leaves()) EXPECT_EQ(scan.counts.at(leaf.id), 10u);
  std::set<std::string> sources;
  for (const auto& r : scan.records) {
    if (r.leaf == "real") sources.insert(r.source_dataset);
  }
  EXPECT_EQ(sources, (std::set<std::string>{"celeba", "ffhq", "imagenet"}));
}

TEST(ScanCorpus, SkipsUndecodableFiles) {
  TempDir dir;
  const auto t = Taxonomy::build_default();
  make_surrogate(dir.path(), t, {3, 32, 1, false});
  std::ofstream(dir / "gan/progan/broken.png") << "not an image";
  const auto scan = scan_corpus(dir.path(), t);
  EXPECT_EQ(scan.records.size(), 42u);
  ASSERT_EQ(scan.skipped.size(), 1u);
  EXPECT_NE(scan.skipped[0].path.find("broken.png"), std::string::npos);
}

TEST(ScanCorpus, Errors) {
  TempDir dir;
  const auto t = Taxonomy::build_default();
  EXPECT_THROW(scan_corpus(dir / "missing", t), DataError);
  try {
    scan_corpus(dir.path(), t);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("no classes found"), std::string::npos);
  }
  make_surrogate(dir / "c", t, {3, 32, 1, false});
  fs::remove_all(dir / "c/dm/glide");
  EXPECT_THROW(scan_corpus(dir / "c", t), DataError);
}

TEST(BalancePolicy, DescribeParseRoundTrip) {
  for (const auto& p : {BalancePolicy::none(), BalancePolicy::downsample_to_min(), BalancePolicy::fixed({1, 2, 3})}) {
    EXPECT_EQ(BalancePolicy::parse(p.describe()), p);
  }
  EXPECT_THROW(BalancePolicy::parse("fixed_per_class:1,2"), ConfigError);
}
