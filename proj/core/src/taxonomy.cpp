#include "provenance/taxonomy.hpp"

#include <algorithm>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "provenance/error.hpp"
#include "provenance/hashing.hpp"

namespace provenance {

std::string_view to_string(Family family) {
  switch (family) {
    case Family::real: return "real";
    case Family::gan: return "gan";
    case Family::dm: return "dm";
  }
  return "?";
}

std::string_view to_string(Level level) {
  switch (level) {
    case Level::L1: return "L1";
    case Level::L2: return "L2";
    case Level::L3: return "L3";
    case Level::flat14: return "flat14";
    case Level::flat13: return "flat13";
  }
  return "?";
}

std::string_view to_string(Task task) {
  switch (task) {
    case Task::flat14: return "flat14";
    case Task::flat13: return "flat13";
    case Task::L1: return "L1";
    case Task::L2: return "L2";
    case Task::L3_gan: return "L3_gan";
    case Task::L3_dm: return "L3_dm";
  }
  return "?";
}

Family parse_family(std::string_view text) {
  if (text == "real") return Family::real;
  if (text == "gan") return Family::gan;
  if (text == "dm") return Family::dm;
  throw ConfigError(fmt::format("unknown family '{}'", text));
}

Task parse_task(std::string_view text) {
  for (Task t : kAllTasks) {
    if (to_string(t) == text) return t;
  }
  throw ConfigError(fmt::format(
      "unknown task '{}' (expected flat14, flat13, L1, L2, L3_gan or L3_dm)", text));
}

Taxonomy::Taxonomy(std::vector<LeafClass> leaves) : leaves_(std::move(leaves)) {
  std::stable_sort(leaves_.begin(), leaves_.end(), [](const LeafClass& a, const LeafClass& b) {
    if (a.family != b.family) return a.family < b.family;
    return a.id < b.id;
  });
  std::set<std::string> seen;
  std::size_t real_count = 0;
  for (const auto& leaf : leaves_) {
    if (leaf.id.empty() || leaf.id.find_first_of("\t\n\r ") != std::string::npos) {
      throw ConfigError(fmt::format("invalid leaf id '{}'", leaf.id));
    }
    if (leaf.id == kAiLabel || leaf.id == kGanLabel || leaf.id == kDmLabel) {
      throw ConfigError(fmt::format("leaf id '{}' collides with a level label", leaf.id));
    }
    if (!seen.insert(leaf.id).second) {
      throw ConfigError(fmt::format("duplicate leaf id '{}'", leaf.id));
    }
    if (leaf.family == Family::real) {
      ++real_count;
      if (leaf.id != kRealLabel) {
        throw ConfigError(fmt::format("real leaf must be named '{}', got '{}'", kRealLabel, leaf.id));
      }
    } else if (leaf.id == kRealLabel) {
      throw ConfigError("leaf 'real' must belong to the real family");
    }
  }
  if (real_count != 1) throw ConfigError("taxonomy needs exactly one real leaf");
  if (leaf_ids(Family::gan).size() < 2 || leaf_ids(Family::dm).size() < 2) {
    throw ConfigError("taxonomy needs at least two gan and two dm leaves");
  }
}

Taxonomy Taxonomy::build_default(std::string_view dm4_id) {
  std::vector<LeafClass> leaves = {
      {"real", Family::real, "Real (CelebA, FFHQ, ImageNet)"},
      {"attgan", Family::gan, "AttGAN"},
      {"cyclegan", Family::gan, "CycleGAN"},
      {"gdwct", Family::gan, "GDWCT"},
      {"imle", Family::gan, "IMLE"},
      {"progan", Family::gan, "ProGAN"},
      {"stargan", Family::gan, "StarGAN"},
      {"stargan_v2", Family::gan, "StarGAN-v2"},
      {"stylegan", Family::gan, "StyleGAN"},
      {"stylegan2", Family::gan, "StyleGAN2"},
      {"dalle2", Family::dm, "DALL-E 2"},
      {"glide", Family::dm, "GLIDE"},
      {"latent_diffusion", Family::dm, "Latent Diffusion"},
      {std::string(dm4_id), Family::dm,
       dm4_id == "dm4" ? std::string("Unnamed fourth diffusion model") : std::string(dm4_id)},
  };
  return Taxonomy(std::move(leaves));
}

Taxonomy Taxonomy::parse(std::string_view text) {
  std::vector<LeafClass> leaves;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line.front() == '#') continue;
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
    if (t2 == std::string::npos) {
      throw DataError(fmt::format("taxonomy line {}: expected id<TAB>family<TAB>name", line_no));
    }
    leaves.push_back({line.substr(0, t1), parse_family(line.substr(t1 + 1, t2 - t1 - 1)),
                      line.substr(t2 + 1)});
  }
  return Taxonomy(std::move(leaves));
}

const LeafClass& Taxonomy::leaf(std::string_view id) const {
  for (const auto& l : leaves_) {
    if (l.id == id) return l;
  }
  throw ConfigError(fmt::format("unknown leaf id '{}'", id));
}

bool Taxonomy::contains(std::string_view id) const noexcept {
  return std::any_of(leaves_.begin(), leaves_.end(), [&](const LeafClass& l) { return l.id == id; });
}

std::vector<std::string> Taxonomy::leaf_ids(Family family) const {
  std::vector<std::string> ids;
  for (const auto& l : leaves_) {
    if (l.family == family) ids.push_back(l.id);
  }
  return ids;
}

std::optional<std::string> Taxonomy::project_label(std::string_view leaf_id, Level level) const {
  const LeafClass& l = leaf(leaf_id);
  const bool is_real = l.family == Family::real;
  switch (level) {
    case Level::L1:
      return std::string(is_real ? kRealLabel : kAiLabel);
    case Level::L2:
      if (is_real) return std::nullopt;
      return std::string(l.family == Family::gan ? kGanLabel : kDmLabel);
    case Level::L3:
    case Level::flat13:
      if (is_real) return std::nullopt;
      return l.id;
    case Level::flat14:
      return l.id;
  }
  return std::nullopt;
}

std::optional<std::string> Taxonomy::task_label(std::string_view leaf_id, Task task) const {
  switch (task) {
    case Task::flat14: return project_label(leaf_id, Level::flat14);
    case Task::flat13: return project_label(leaf_id, Level::flat13);
    case Task::L1: return project_label(leaf_id, Level::L1);
    case Task::L2: return project_label(leaf_id, Level::L2);
    case Task::L3_gan:
      if (leaf(leaf_id).family != Family::gan) return std::nullopt;
      return project_label(leaf_id, Level::L3);
    case Task::L3_dm:
      if (leaf(leaf_id).family != Family::dm) return std::nullopt;
      return project_label(leaf_id, Level::L3);
  }
  return std::nullopt;
}

std::vector<std::string> Taxonomy::task_labels(Task task) const {
  switch (task) {
    case Task::flat14: {
      std::vector<std::string> ids;
      for (const auto& l : leaves_) ids.push_back(l.id);
      return ids;
    }
    case Task::flat13: {
      std::vector<std::string> ids;
      for (const auto& l : leaves_) {
        if (l.family != Family::real) ids.push_back(l.id);
      }
      return ids;
    }
    case Task::L1: return {std::string(kRealLabel), std::string(kAiLabel)};
    case Task::L2: return {std::string(kGanLabel), std::string(kDmLabel)};
    case Task::L3_gan: return leaf_ids(Family::gan);
    case Task::L3_dm: return leaf_ids(Family::dm);
  }
  return {};
}

std::string Taxonomy::serialize() const {
  std::string out = "# id\tfamily\tdisplay_name\n";
  for (const auto& l : leaves_) {
    out += fmt::format("{}\t{}\t{}\n", l.id, to_string(l.family), l.display_name);
  }
  return out;
}

std::uint64_t Taxonomy::hash() const {
  // Display names are cosmetic; only ids and families define label order.
  std::string key;
  for (const auto& l : leaves_) key += fmt::format("{}:{};", l.id, to_string(l.family));
  return fnv1a64(key);
}

std::size_t task_class_count(const Taxonomy& taxonomy, Task task) {
  return taxonomy.task_labels(task).size();
}

}  // namespace provenance
