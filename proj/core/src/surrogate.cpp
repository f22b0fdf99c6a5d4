#include "provenance/surrogate.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <fmt/format.h>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "provenance/error.hpp"
#include "provenance/hashing.hpp"

namespace fs = std::filesystem;

namespace provenance {

namespace {

struct LeafSignature {
  bool synthetic = false;
  Family family = Family::real;
  double period = 0.0;
  double angle = 0.0;
  std::array<double, 3> tint{};
  double grating_amplitude = 0.0;
  double checker_amplitude = 0.0;
  double noise_std = 1.5;
};

LeafSignature signature_for(const Taxonomy& taxonomy, std::string_view leaf) {
  const LeafClass& l = taxonomy.leaf(leaf);
  LeafSignature sig;
  sig.family = l.family;
  if (l.family == Family::real) return sig;

  std::vector<std::string> synthetic = taxonomy.task_labels(Task::flat13);
  const auto k = static_cast<std::size_t>(std::find(synthetic.begin(), synthetic.end(), l.id) -
                                          synthetic.begin());
  const auto n = static_cast<double>(synthetic.size());
  static constexpr std::array<double, 3> kPeriods = {5.0, 7.0, 10.0};
  sig.synthetic = true;
  sig.period = kPeriods[k % kPeriods.size()];
  sig.angle = std::numbers::pi * static_cast<double>(k) / n;
  const double hue = 2.0 * std::numbers::pi * static_cast<double>((k * 5) % synthetic.size()) / n;
  for (int c = 0; c < 3; ++c) {
    sig.tint[c] = 0.6 + 0.4 * std::cos(hue - 2.0 * std::numbers::pi * c / 3.0);
  }
  sig.grating_amplitude = 22.0;
  if (l.family == Family::gan) {
    sig.checker_amplitude = 7.0;
    sig.noise_std = 2.0 + static_cast<double>(k % 3);
  } else {
    sig.checker_amplitude = 0.0;
    sig.noise_std = 7.0 + 1.5 * static_cast<double>(k % 4);
  }
  return sig;
}

/// Bilinearly upsampled random grid: one octave of smooth noise.
void add_octave(std::vector<double>& plane, int size, int cells, double amplitude, SplitMix64& rng) {
  const int g = cells + 1;
  std::vector<double> grid(static_cast<std::size_t>(g) * g);
  for (auto& v : grid) v = rng.normal();
  const double scale = static_cast<double>(cells) / size;
  for (int y = 0; y < size; ++y) {
    const double fy = (y + 0.5) * scale;
    const int y0 = std::min(static_cast<int>(fy), cells - 1);
    const double ty = fy - y0;
    for (int x = 0; x < size; ++x) {
      const double fx = (x + 0.5) * scale;
      const int x0 = std::min(static_cast<int>(fx), cells - 1);
      const double tx = fx - x0;
      const double a = grid[y0 * g + x0], b = grid[y0 * g + x0 + 1];
      const double c = grid[(y0 + 1) * g + x0], d = grid[(y0 + 1) * g + x0 + 1];
      plane[static_cast<std::size_t>(y) * size + x] +=
          amplitude * ((a * (1 - tx) + b * tx) * (1 - ty) + (c * (1 - tx) + d * tx) * ty);
    }
  }
}

}  // namespace

std::vector<std::uint8_t> render_surrogate_image(const Taxonomy& taxonomy, std::string_view leaf,
                                                 std::string_view source, std::uint64_t image_seed,
                                                 int size) {
  if (size < 16) throw ConfigError("surrogate images must be at least 16 pixels wide");
  const LeafSignature sig = signature_for(taxonomy, leaf);
  SplitMix64 rng(mix64(image_seed ^ fnv1a64(source)));
  const auto pixels = static_cast<std::size_t>(size) * size;

  // Smooth content: shared luminance field plus weaker per-channel chroma.
  std::vector<double> luma(pixels, 0.0);
  double amp = 40.0;
  for (int cells = 2; cells <= std::max(2, size / 8); cells *= 2, amp *= 0.5) {
    add_octave(luma, size, cells, amp, rng);
  }
  std::array<std::vector<double>, 3> chroma;
  std::array<double, 3> base{};
  for (int c = 0; c < 3; ++c) {
    chroma[c].assign(pixels, 0.0);
    add_octave(chroma[c], size, 3, 12.0, rng);
    base[c] = 110.0 + 40.0 * rng.uniform();
  }

  const double phase = 2.0 * std::numbers::pi * rng.uniform();
  const double kx = std::cos(sig.angle) * 2.0 * std::numbers::pi / std::max(sig.period, 1.0);
  const double ky = std::sin(sig.angle) * 2.0 * std::numbers::pi / std::max(sig.period, 1.0);

  std::vector<std::uint8_t> rgb(pixels * 3);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * size + x;
      double grating = 0.0, checker = 0.0;
      if (sig.synthetic) {
        grating = sig.grating_amplitude * std::sin(kx * x + ky * y + phase);
        checker = sig.checker_amplitude * (((x + y) & 1) ? 1.0 : -1.0);
      }
      for (int c = 0; c < 3; ++c) {
        const double v = base[c] + luma[i] + chroma[c][i] + grating * sig.tint[c] + checker +
                         sig.noise_std * rng.normal();
        rgb[i * 3 + c] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
      }
    }
  }
  return rgb;
}

SurrogateSummary make_surrogate(const fs::path& root, const Taxonomy& taxonomy,
                                const SurrogateOptions& options) {
  if (options.images_per_leaf == 0) throw ConfigError("images_per_leaf must be positive");
  if (fs::exists(root) && !fs::is_directory(root)) {
    throw ConfigError(fmt::format("'{}' exists and is not a directory", root.generic_string()));
  }
  if (fs::is_directory(root) && !fs::is_empty(root)) {
    if (!options.overwrite) {
      throw ConfigError(fmt::format("'{}' is not empty; pass --force to regenerate", root.generic_string()));
    }
    for (Family f : {Family::real, Family::gan, Family::dm}) fs::remove_all(root / std::string(to_string(f)));
  }

  SurrogateSummary summary;
  const std::vector<int> png_params = {cv::IMWRITE_PNG_COMPRESSION, 3};
  auto write = [&](const fs::path& dir, const std::string& stem, std::string_view leaf,
                   std::string_view source, std::size_t index) {
    fs::create_directories(dir);
    const std::uint64_t image_seed =
        mix64(options.seed) ^ mix64(fnv1a64(leaf) + index * 0x9e3779b97f4a7c15ULL);
    auto rgb = render_surrogate_image(taxonomy, leaf, source, image_seed, options.size);
    cv::Mat img(options.size, options.size, CV_8UC3, rgb.data());
    cv::Mat bgr;
    cv::cvtColor(img, bgr, cv::COLOR_RGB2BGR);
    const fs::path file = dir / fmt::format("{}_{:05}.png", stem, index);
    if (!cv::imwrite(file.string(), bgr, png_params)) {
      throw RuntimeError(fmt::format("cannot write '{}'", file.generic_string()));
    }
    ++summary.images;
    ++summary.per_leaf[std::string(leaf)];
  };

  for (const auto& leaf : taxonomy.leaves()) {
    if (leaf.family == Family::real) {
      const std::size_t n_sources = kRealSources.size();
      std::size_t index = 0;
      for (std::size_t s = 0; s < n_sources; ++s) {
        const std::size_t count =
            options.images_per_leaf / n_sources + (s < options.images_per_leaf % n_sources ? 1 : 0);
        const std::string source(kRealSources[s]);
        for (std::size_t i = 0; i < count; ++i, ++index) {
          write(root / "real" / source, source, leaf.id, source, index);
        }
      }
    } else {
      for (std::size_t i = 0; i < options.images_per_leaf; ++i) {
        write(root / std::string(to_string(leaf.family)) / leaf.id, leaf.id, leaf.id, leaf.id, i);
      }
    }
  }
  return summary;
}

}  // namespace provenance
