#include <benchmark/benchmark.h>

#include <cstdlib>
#include <filesystem>
#include <memory>
#include <random>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "provenance/cascade.hpp"
#include "provenance/hashing.hpp"
#include "provenance/manifest.hpp"
#include "provenance/model.hpp"
#include "provenance/preprocessing.hpp"

namespace fs = std::filesystem;
using namespace provenance;

namespace {

fs::path sample_png(int side) {
  const fs::path path = fs::temp_directory_path() / ("provenance_bench_" + std::to_string(side) + ".png");
  if (!fs::exists(path)) {
    cv::Mat img(side, side, CV_8UC3);
    cv::randu(img, cv::Scalar::all(0), cv::Scalar::all(255));
    cv::imwrite(path.string(), img);
  }
  return path;
}

std::vector<ImageTensor> random_images(std::size_t n) {
  std::mt19937 rng(1);
  std::normal_distribution<float> normal;
  std::vector<ImageTensor> out;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<float> data(ImageTensor::kElements);
    for (auto& v : data) v = normal(rng);
    out.emplace_back(std::move(data), "img" + std::to_string(i));
  }
  return out;
}

BackboneSpec tiny_spec() {
  BackboneSpec spec;
  spec.architecture = Architecture::tiny;
  spec.pretrained = false;
  return spec;
}

void BM_Prepare(benchmark::State& state) {
  const fs::path path = sample_png(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(prepare(path));
}
BENCHMARK(BM_Prepare)->Arg(256)->Arg(1024)->Unit(benchmark::kMillisecond);

void BM_TinyForward(benchmark::State& state) {
  const auto model = build_classifier(tiny_spec(), 14, 1);
  const auto images = random_images(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(model.predict(images));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_TinyForward)->Arg(1)->Arg(30)->Unit(benchmark::kMillisecond);

void BM_CascadeClassify(benchmark::State& state) {
  const auto taxonomy = Taxonomy::build_default();
  const auto h = taxonomy.hash();
  auto member = [&](Task task, std::uint64_t seed) {
    return CascadeMember{std::make_shared<ClassifierModel>(
                             build_classifier(tiny_spec(), taxonomy.task_labels(task).size(), seed)),
                         task, h};
  };
  const Cascade cascade(taxonomy, {member(Task::L1, 1), member(Task::L2, 2), member(Task::L3_gan, 3),
                                   member(Task::L3_dm, 4)});
  const auto images = random_images(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(cascade.classify_many(images));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_CascadeClassify)->Arg(1)->Arg(30)->Unit(benchmark::kMillisecond);

void BM_AssignSplits(benchmark::State& state) {
  const auto taxonomy = Taxonomy::build_default();
  std::vector<SampleRecord> records;
  for (const auto& leaf : taxonomy.leaves()) {
    for (std::int64_t i = 0; i < state.range(0); ++i) {
      SampleRecord r;
      r.leaf = leaf.id;
      r.source_dataset = leaf.id;
      r.path = leaf.id + "/" + std::to_string(i) + ".png";
      r.stable_key = fnv1a64(r.path);
      records.push_back(std::move(r));
    }
  }
  for (auto _ : state) benchmark::DoNotOptimize(assign_splits(records, {}, 7));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(records.size()));
}
BENCHMARK(BM_AssignSplits)->Arg(100)->Arg(5000)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
