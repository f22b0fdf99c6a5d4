#include <gtest/gtest.h>

#include <sstream>

#include "provenance/cascade.hpp"
#include "provenance/error.hpp"
#include "provenance/hashing.hpp"
#include "test_support.hpp"

using namespace provenance;
using testing_support::peaked;
using testing_support::StubClassifier;
using testing_support::tagged_image;

namespace {

/// Per-image routing script: which branch each level picks and with what
/// probability. Images are tagged "<l1>/<l2>/<l3>/<index>".
struct Script {
  std::size_t l1 = 0, l2 = 0, l3 = 0;
  double p1 = 1.0, p2 = 1.0, p3 = 1.0;
};

struct Stubs {
  std::map<std::string, Script> scripts;
  std::shared_ptr<StubClassifier> level1, level2, gan, dm;

  Stubs() {
    auto lookup = [this](const std::string& p) -> const Script& { return scripts.at(p); };
    level1 = std::make_shared<StubClassifier>(2, [=](const std::string& p) { return peaked(2, lookup(p).l1, lookup(p).p1); });
    level2 = std::make_shared<StubClassifier>(2, [=](const std::string& p) { return peaked(2, lookup(p).l2, lookup(p).p2); });
    gan = std::make_shared<StubClassifier>(9, [=](const std::string& p) { return peaked(9, lookup(p).l3, lookup(p).p3); });
    dm = std::make_shared<StubClassifier>(4, [=](const std::string& p) { return peaked(4, lookup(p).l3, lookup(p).p3); });
  }

  Cascade cascade(CascadeOptions options = {}) const {
    const auto t = Taxonomy::build_default();
    return Cascade(t, {{level1, Task::L1, t.hash()}, {level2, Task::L2, t.hash()}, {gan, Task::L3_gan, t.hash()},
                       {dm, Task::L3_dm, t.hash()}},
                   options);
  }
};

/// Hand-enumerated expected outcome of a script.
std::string expected_final(const Script& s) {
  const auto t = Taxonomy::build_default();
  if (s.l1 == 0) return "real";
  if (s.l2 == 0) return t.task_labels(Task::L3_gan)[s.l3];
  return t.task_labels(Task::L3_dm)[s.l3];
}

}  // namespace

TEST(Cascade, EarlyExitOnReal) {
  Stubs stubs;
  stubs.scripts["x"] = {0, 0, 0, 0.9};
  const auto pred = stubs.cascade().classify(tagged_image("x"));
  EXPECT_EQ(pred.final_label, "real");
  EXPECT_DOUBLE_EQ(pred.path_confidence, 0.9);
  EXPECT_FALSE(pred.level2);
  EXPECT_FALSE(pred.level3);
  EXPECT_TRUE(stubs.level2->calls.empty());
}

TEST(Cascade, ProductRuleThroughDmBranch) {
  Stubs stubs;
  // glide is index 2 of (dalle2, dm4, glide, latent_diffusion).
  stubs.scripts["x"] = {1, 1, 2, 0.8, 0.75, 0.6};
  const auto pred = stubs.cascade().classify(tagged_image("x"));
  EXPECT_EQ(pred.final_label, "glide");
  EXPECT_EQ(pred.level1.label, "ai");
  EXPECT_EQ(pred.level2->label, "dm");
  EXPECT_EQ(pred.level3->label, "glide");
  EXPECT_EQ(pred.path_confidence, 0.8 * 0.75 * 0.6);
  EXPECT_NEAR(pred.path_confidence, 0.36, 1e-12);
  EXPECT_TRUE(stubs.gan->calls.empty());
}

TEST(Cascade, AllFourRoutingOutcomes) {
  Stubs stubs;
  std::vector<std::pair<std::string, Script>> cases = {
      {"real", {0, 0, 0, 0.7}},
      {"gan", {1, 0, 8, 0.6, 0.9, 0.5}},
      {"dm", {1, 1, 3, 0.99, 0.51, 0.4}},
      {"gan0", {1, 0, 0, 0.55, 0.6, 0.3}},
  };
  for (const auto& [name, s] : cases) stubs.scripts[name] = s;
  const auto cascade = stubs.cascade();
  for (const auto& [name, s] : cases) {
    const auto pred = cascade.classify(tagged_image(name));
    EXPECT_EQ(pred.final_label, expected_final(s)) << name;
    EXPECT_EQ(pred.level2.has_value(), s.l1 == 1);
    EXPECT_EQ(pred.level3.has_value(), s.l1 == 1);
    const double expected = s.l1 == 0 ? s.p1 : s.p1 * s.p2 * s.p3;
    EXPECT_EQ(pred.path_confidence, expected);
  }
}

TEST(Cascade, StructuralConsistencyAndRoutingLog) {
  Stubs stubs;
  SplitMix64 rng(17);
  std::vector<ImageTensor> images;
  for (int i = 0; i < 100; ++i) {
    Script s;
    s.l1 = rng.below(2);
    s.l2 = rng.below(2);
    s.l3 = rng.below(s.l2 == 0 ? 9 : 4);
    s.p1 = 0.5 + 0.5 * rng.uniform();
    s.p2 = 0.5 + 0.5 * rng.uniform();
    s.p3 = 0.5 + 0.5 * rng.uniform();
    const std::string tag = "img" + std::to_string(i);
    stubs.scripts[tag] = s;
    images.push_back(tagged_image(tag));
  }
  const auto t = Taxonomy::build_default();
  const auto preds = stubs.cascade().classify_many(images);
  std::size_t ai = 0, gan = 0, dm = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const auto& p = preds[i];
    const auto& s = stubs.scripts.at(images[i].source_path());
    EXPECT_EQ(p.final_label, expected_final(s));
    EXPECT_EQ(t.project_label(p.final_label, Level::L1), p.level1.label);
    if (p.level2) {
      ++ai;
      EXPECT_EQ(t.project_label(p.final_label, Level::L2), p.level2->label);
      (p.level2->label == "gan" ? gan : dm)++;
    }
    double min_p = p.level1.chosen_probability();
    if (p.level2) min_p = std::min(min_p, p.level2->chosen_probability());
    if (p.level3) min_p = std::min(min_p, p.level3->chosen_probability());
    EXPECT_LE(p.path_confidence, min_p);
    EXPECT_GT(p.path_confidence, 0.0);
  }
  EXPECT_EQ(stubs.level1->calls.size(), 100u);
  EXPECT_EQ(stubs.level2->calls.size(), ai);
  EXPECT_EQ(stubs.gan->calls.size(), gan);
  EXPECT_EQ(stubs.dm->calls.size(), dm);
  for (const auto& path : stubs.gan->calls) {
    const auto& s = stubs.scripts.at(path);
    EXPECT_EQ(s.l1, 1u);
    EXPECT_EQ(s.l2, 0u);
  }
}

TEST(Cascade, BatchMatchesOneByOne) {
  Stubs stubs;
  SplitMix64 rng(3);
  std::vector<ImageTensor> images;
  for (int i = 0; i < 50; ++i) {
    const std::size_t l2 = rng.below(2);
    stubs.scripts["f" + std::to_string(i)] = {rng.below(2), l2, rng.below(l2 == 0 ? 9 : 4), 0.6, 0.7, 0.8};
    images.push_back(tagged_image("f" + std::to_string(i)));
  }
  const auto cascade = stubs.cascade();
  const auto batch = cascade.classify_many(images);
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto single = cascade.classify(images[i]);
    EXPECT_EQ(single.final_label, batch[i].final_label);
    EXPECT_EQ(single.path_confidence, batch[i].path_confidence);
    EXPECT_EQ(single.level1.probabilities, batch[i].level1.probabilities);
  }
  EXPECT_TRUE(cascade.classify_many({}).empty());
}

TEST(Cascade, ThresholdsYieldUndecided) {
  Stubs stubs;
  stubs.scripts["weak1"] = {1, 0, 0, 0.55, 0.9, 0.9};
  stubs.scripts["weak3"] = {1, 1, 1, 0.95, 0.9, 0.3};
  stubs.scripts["strong"] = {1, 0, 4, 0.95, 0.9, 0.9};
  CascadeOptions options;
  options.thresholds = {0.6, std::nullopt, 0.5};
  const auto cascade = stubs.cascade(options);
  const auto w1 = cascade.classify(tagged_image("weak1"));
  EXPECT_EQ(w1.final_label, "undecided");
  EXPECT_FALSE(w1.level2);
  EXPECT_EQ(cascade.classify(tagged_image("weak3")).final_label, "undecided");
  EXPECT_EQ(cascade.classify(tagged_image("strong")).final_label, "progan");
  options.thresholds = {1.5, std::nullopt, std::nullopt};
  EXPECT_THROW(stubs.cascade(options), ConfigError);
}

TEST(Cascade, MembersAreValidated) {
  Stubs stubs;
  const auto t = Taxonomy::build_default();
  auto wrong = std::make_shared<StubClassifier>(3, [](const std::string&) { return peaked(3, 0); });
  CascadeModels models{{stubs.level1, Task::L1, t.hash()}, {stubs.level2, Task::L2, t.hash()},
                       {stubs.gan, Task::L3_gan, t.hash()}, {stubs.dm, Task::L3_dm, t.hash()}};
  auto bad_classes = models;
  bad_classes.level3_dm.model = wrong;
  EXPECT_THROW(Cascade(t, bad_classes), ConfigError);
  auto bad_task = models;
  bad_task.level2.task = Task::L1;
  EXPECT_THROW(Cascade(t, bad_task), ConfigError);
  auto bad_hash = models;
  bad_hash.level1.taxonomy_hash ^= 1;
  EXPECT_THROW(Cascade(t, bad_hash), ConfigError);
  auto missing = models;
  missing.level3_gan.model.reset();
  EXPECT_THROW(Cascade(t, missing), ConfigError);
}

TEST(CascadeBatch, EmptySplitAndLoadErrors) {
  Stubs stubs;
  const auto t = Taxonomy::build_default();
  std::vector<SampleRecord> records;
  for (int i = 0; i < 4; ++i) {
    SampleRecord r;
    r.path = "r" + std::to_string(i);
    r.leaf = "real";
    r.label = "real";
    r.source_dataset = "ffhq";
    r.split = Split::test;
    records.push_back(r);
    stubs.scripts[r.path] = {0, 0, 0, 0.8};
  }
  const SplitManifest m(Task::flat14, t.task_labels(Task::flat14), 0, {}, t.hash(), records);
  const auto cascade = stubs.cascade();
  EXPECT_TRUE(classify_batch(cascade, m, Split::train, testing_support::tagged_loader()).empty());
  ImageLoader flaky = [](const std::string& p) {
    if (p == "r2") throw DataError("unreadable");
    return tagged_image(p);
  };
  const auto results = classify_batch(cascade, m, Split::test, flaky, 3);
  ASSERT_EQ(results.size(), 4u);
  EXPECT_FALSE(results[2].prediction);
  EXPECT_EQ(results[2].error, "unreadable");
  EXPECT_EQ(results[3].prediction->final_label, "real");
}

TEST(PredictionFile, LineFormat) {
  Stubs stubs;
  stubs.scripts["/data/a.png"] = {0, 0, 0, 0.75};
  stubs.scripts["/data/b.png"] = {1, 0, 1, 0.6, 1.0, 1.0};
  const auto results = classify_paths(stubs.cascade(), {"/data/a.png", "/data/b.png"}, testing_support::tagged_loader());
  EXPECT_EQ(prediction_file_header(),
            "path\ttruth\tl1_label\tl1_probs\tl2_label\tl2_probs\tl3_label\tl3_probs\tfinal_label\tpath_confidence");
  EXPECT_EQ(format_prediction_line(results[0]), "/data/a.png\t-\treal\t0.75,0.25\t-\t-\t-\t-\treal\t0.75");
  const std::string b = format_prediction_line(results[1]);
  EXPECT_EQ(b.substr(0, b.find('\t', 14)), "/data/b.png\t-\tai");
  EXPECT_NE(b.find("\tgan\t"), std::string::npos);
  const std::string tail = "\tcyclegan\t0,1,0,0,0,0,0,0,0\tcyclegan\t0.59999999999999998";
  EXPECT_EQ(b.substr(b.size() - tail.size()), tail);
}
