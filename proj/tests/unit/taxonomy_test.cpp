#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include "provenance/error.hpp"
#include "provenance/taxonomy.hpp"

using namespace provenance;

namespace {

const std::vector<std::string> kGan = {"attgan", "cyclegan", "gdwct", "imle", "progan",
                                       "stargan", "stargan_v2", "stylegan", "stylegan2"};
const std::vector<std::string> kDm = {"dalle2", "dm4", "glide", "latent_diffusion"};

}  // namespace

TEST(Taxonomy, DefaultHasFourteenLeaves) {
  const auto t = Taxonomy::build_default();
  EXPECT_EQ(t.leaves().size(), 14u);
  EXPECT_EQ(t.leaf_ids(Family::real), std::vector<std::string>{"real"});
  EXPECT_EQ(t.leaf_ids(Family::gan), kGan);
  EXPECT_EQ(t.leaf_ids(Family::dm), kDm);
}

TEST(Taxonomy, LeafOrderIsFamilyThenAlphabetical) {
  const auto t = Taxonomy::build_default();
  std::vector<std::string> expected = {"real"};
  expected.insert(expected.end(), kGan.begin(), kGan.end());
  expected.insert(expected.end(), kDm.begin(), kDm.end());
  EXPECT_EQ(t.task_labels(Task::flat14), expected);
  expected.erase(expected.begin());
  EXPECT_EQ(t.task_labels(Task::flat13), expected);
}

TEST(Taxonomy, TaskLabels) {
  const auto t = Taxonomy::build_default();
  EXPECT_EQ(t.task_labels(Task::L1), (std::vector<std::string>{"real", "ai"}));
  EXPECT_EQ(t.task_labels(Task::L2), (std::vector<std::string>{"gan", "dm"}));
  EXPECT_EQ(t.task_labels(Task::L3_gan), kGan);
  EXPECT_EQ(t.task_labels(Task::L3_dm), kDm);
  EXPECT_EQ(task_class_count(t, Task::L1), 2u);
  EXPECT_EQ(task_class_count(t, Task::L3_gan), 9u);
  EXPECT_EQ(task_class_count(t, Task::L3_dm), 4u);
}

TEST(Taxonomy, Level1PartitionSizes) {
  const auto t = Taxonomy::build_default();
  std::size_t real = 0, ai = 0;
  for (const auto& leaf : t.leaves()) {
    const auto l1 = t.project_label(leaf.id, Level::L1);
    ASSERT_TRUE(l1);
    (*l1 == "real" ? real : ai)++;
  }
  EXPECT_EQ(real, 1u);
  EXPECT_EQ(ai, 13u);
}

TEST(Taxonomy, ProjectionExamples) {
  const auto t = Taxonomy::build_default();
  EXPECT_EQ(t.project_label("stylegan2", Level::L1), "ai");
  EXPECT_EQ(t.project_label("stylegan2", Level::L2), "gan");
  EXPECT_EQ(t.project_label("real", Level::L2), std::nullopt);
  EXPECT_EQ(t.project_label("glide", Level::L1), "ai");
  EXPECT_EQ(t.project_label("attgan", Level::flat13), "attgan");
}

TEST(Taxonomy, AbsenceExactlyForRealUnderL2L3Flat13) {
  const auto t = Taxonomy::build_default();
  const Level levels[] = {Level::L1, Level::L2, Level::L3, Level::flat14, Level::flat13};
  for (const auto& leaf : t.leaves()) {
    for (Level level : levels) {
      const bool expect_absent =
          leaf.id == "real" && (level == Level::L2 || level == Level::L3 || level == Level::flat13);
      EXPECT_EQ(!t.project_label(leaf.id, level).has_value(), expect_absent)
          << leaf.id << " " << to_string(level);
    }
  }
}

TEST(Taxonomy, L2ImpliesAiAndL3RoundTrips) {
  const auto t = Taxonomy::build_default();
  for (const auto& leaf : t.leaves()) {
    if (t.project_label(leaf.id, Level::L2)) EXPECT_EQ(t.project_label(leaf.id, Level::L1), "ai");
    if (leaf.family != Family::real) EXPECT_EQ(t.project_label(leaf.id, Level::L3), leaf.id);
  }
}

TEST(Taxonomy, TaskLabelRestrictsFamilies) {
  const auto t = Taxonomy::build_default();
  EXPECT_EQ(t.task_label("glide", Task::L3_gan), std::nullopt);
  EXPECT_EQ(t.task_label("progan", Task::L3_dm), std::nullopt);
  EXPECT_EQ(t.task_label("progan", Task::L3_gan), "progan");
  EXPECT_EQ(t.task_label("real", Task::L1), "real");
  EXPECT_EQ(t.task_label("real", Task::flat13), std::nullopt);
}

TEST(Taxonomy, Dm4IsConfigurable) {
  const auto t = Taxonomy::build_default("stable_diffusion");
  EXPECT_TRUE(t.contains("stable_diffusion"));
  EXPECT_FALSE(t.contains("dm4"));
  EXPECT_EQ(t.leaf_ids(Family::dm).size(), 4u);
  EXPECT_NE(t.hash(), Taxonomy::build_default().hash());
}

TEST(Taxonomy, Dm4CollisionRejected) {
  EXPECT_THROW(Taxonomy::build_default("glide"), ConfigError);
  EXPECT_THROW(Taxonomy::build_default(""), ConfigError);
}

TEST(Taxonomy, UnknownLeafThrows) {
  const auto t = Taxonomy::build_default();
  EXPECT_THROW(t.project_label("midjourney", Level::L1), ConfigError);
  EXPECT_THROW(t.leaf("midjourney"), ConfigError);
}

TEST(Taxonomy, SerializeRoundTrip) {
  const auto t = Taxonomy::build_default("sd");
  const auto back = Taxonomy::parse(t.serialize());
  EXPECT_EQ(back.leaves(), t.leaves());
  EXPECT_EQ(back.hash(), t.hash());
}

TEST(Taxonomy, ParseTaskNames) {
  for (Task task : kAllTasks) EXPECT_EQ(parse_task(to_string(task)), task);
  EXPECT_THROW(parse_task("L4"), ConfigError);
}
