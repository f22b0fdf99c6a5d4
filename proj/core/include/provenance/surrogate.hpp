#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "provenance/taxonomy.hpp"

namespace provenance {

/// Procedural stand-in corpus with one signature per leaf:
///  - every image: smooth multi-octave (roughly 1/f) colour noise;
///  - generator leaves: a sinusoidal grating whose period, orientation and
///    tint are unique to the leaf, plus leaf-specific pixel noise;
///  - GAN leaves: a period-2 checkerboard (transposed-convolution artefact);
///  - DM leaves: stronger white noise instead of the checkerboard.
struct SurrogateOptions {
  std::size_t images_per_leaf = 10;
  int size = 256;
  std::uint64_t seed = 0;
  /// Replace existing family directories under the root.
  bool overwrite = false;
};

struct SurrogateSummary {
  std::size_t images = 0;
  std::map<std::string, std::size_t> per_leaf;
};

/// Interleaved RGB8 pixels for one image. Deterministic in all arguments.
std::vector<std::uint8_t> render_surrogate_image(const Taxonomy& taxonomy, std::string_view leaf,
                                                 std::string_view source, std::uint64_t image_seed,
                                                 int size);

/// Writes `<root>/<family>/<leaf>/<leaf>_NNNNN.png` (real images under
/// `<root>/real/<source>/`). Refuses to touch a non-empty root unless
/// `overwrite` is set.
SurrogateSummary make_surrogate(const std::filesystem::path& root, const Taxonomy& taxonomy,
                                const SurrogateOptions& options);

}  // namespace provenance
