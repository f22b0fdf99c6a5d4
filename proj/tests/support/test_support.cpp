#include "test_support.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "provenance/evaluator.hpp"
#include "provenance/hashing.hpp"

namespace fs = std::filesystem;
using namespace provenance;

namespace testing_support {

TempDir::TempDir() {
  std::string templ = (fs::temp_directory_path() / "provenance-test-XXXXXX").string();
  if (::mkdtemp(templ.data()) == nullptr) throw std::runtime_error("mkdtemp failed");
  path_ = templ;
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

ImageTensor tagged_image(const std::string& path) {
  return ImageTensor(std::vector<float>(ImageTensor::kElements, 0.0f), path);
}

ImageLoader tagged_loader() {
  return [](const std::string& path) { return tagged_image(path); };
}

std::vector<Probabilities> StubClassifier::predict(std::span<const ImageTensor> images) const {
  std::vector<Probabilities> out;
  for (const auto& img : images) {
    calls.push_back(img.source_path());
    out.push_back(fn_(img.source_path()));
  }
  return out;
}

Probabilities peaked(std::size_t classes, std::size_t index, double p) {
  Probabilities out(classes, classes > 1 ? (1.0 - p) / static_cast<double>(classes - 1) : 0.0);
  out.at(index) = p;
  return out;
}

std::vector<SampleRecord> synthetic_records(const Taxonomy& taxonomy,
                                            const std::map<std::string, std::size_t>& per_leaf) {
  std::vector<SampleRecord> records;
  for (const auto& leaf : taxonomy.leaves()) {
    const auto it = per_leaf.find(leaf.id);
    const std::size_t n = it == per_leaf.end() ? 0 : it->second;
    for (std::size_t i = 0; i < n; ++i) {
      SampleRecord r;
      r.leaf = leaf.id;
      r.source_dataset = leaf.family == Family::real ? std::string(kRealSources[i % kRealSources.size()]) : leaf.id;
      r.path = leaf.id + "/" + r.source_dataset + "_" + std::to_string(i) + ".png";
      r.stable_key = fnv1a64(r.path);
      records.push_back(std::move(r));
    }
  }
  return records;
}

std::vector<SampleRecord> synthetic_records(const Taxonomy& taxonomy, std::size_t per_leaf) {
  std::map<std::string, std::size_t> counts;
  for (const auto& leaf : taxonomy.leaves()) counts[leaf.id] = per_leaf;
  return synthetic_records(taxonomy, counts);
}

void write_solid_png(const fs::path& path, int width, int height, std::uint8_t r, std::uint8_t g,
                     std::uint8_t b) {
  fs::create_directories(path.parent_path());
  cv::Mat img(height, width, CV_8UC3, cv::Scalar(b, g, r));
  cv::imwrite(path.string(), img);
}

std::vector<std::vector<std::string>> read_tsv(const fs::path& path) {
  std::ifstream in(path);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, '\t')) fields.push_back(f);
    rows.push_back(fields);
  }
  return rows;
}

bool RecountedRow::matches() const {
  const double fraction = total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
  return reported_correct == std::to_string(correct) && reported_total == std::to_string(total) &&
         std::strtod(reported_accuracy.c_str(), nullptr) == fraction && reported_percent == format_percent(fraction);
}

std::vector<RecountedRow> recount_report(const fs::path& dir, const Taxonomy& taxonomy) {
  const auto tsv = read_tsv(dir / "report.tsv");
  std::vector<RecountedRow> out;
  for (std::size_t i = 1; i < tsv.size(); ++i) {
    const auto& row = tsv[i];
    if (row[0] == "reference" || row[0] == "count" || row[0] == "provenance") continue;
    RecountedRow r{row[0], row[1], row[2], row[3], row[4], row[5]};
    const auto preds = read_tsv(dir / row[6]);
    if (row[6] == "predictions/cascade.tsv") {
      for (std::size_t k = 1; k < preds.size(); ++k) {
        const auto& p = preds[k];
        const std::string& truth = p[1];
        const std::string l1_truth = truth == "real" ? "real" : "ai";
        const bool is_gan = taxonomy.leaf(truth).family == Family::gan;
        if (row[1] == "leaf") {
          ++r.total;
          r.correct += p[8] == truth;
        } else if (row[1] == "synthetic_leaf") {
          if (truth == "real") continue;
          ++r.total;
          r.correct += p[8] == truth;
        } else if (row[1] == "L1") {
          ++r.total;
          r.correct += p[2] == l1_truth;
        } else if (row[1] == "L2") {
          if (p[4] == "-") continue;
          ++r.total;
          r.correct += truth != "real" && p[4] == (is_gan ? "gan" : "dm");
        } else if (row[1] == "L3_gan" || row[1] == "L3_dm") {
          if (p[6] == "-" || p[4] != (row[1] == "L3_gan" ? "gan" : "dm")) continue;
          ++r.total;
          r.correct += p[6] == truth;
        }
      }
    } else {
      for (std::size_t k = 1; k < preds.size(); ++k) {
        ++r.total;
        r.correct += preds[k][1] == preds[k][2];
      }
    }
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace testing_support
