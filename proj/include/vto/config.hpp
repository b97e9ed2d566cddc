#pragma once

#include "vto/inpaint.hpp"
#include "vto/retrieval.hpp"
#include "vto/shape_matching.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace vto {

/// Parses the TOML subset used for run configs: `[section]` headers, `key = value` with
/// integer, float, boolean, quoted string or flat array values, and `#` comments.
nlohmann::json parse_toml(const std::string& text);

struct CorpusSection {
  int count = 1024;
  int image_size = 64;
  bool two_component = false;
  double split_ratio = 0.8;
};

struct SmnSection {
  smn::SmnConfig net;  // image_size follows corpus.image_size
  int steps = 500;
  int batch_size = 16;
  double learning_rate = 1e-3;
};

struct MtnSection {
  inpaint::MtnConfig net;  // warper.image_size follows corpus.image_size
  int steps = 1000;
  int batch_size = 8;
  double learning_rate = 1e-3;
};

struct MatchSection {
  int k = 25;
  int n = 2000;
  bool allow_ground_truth = false;
  std::vector<std::string> modes = {"random", "matched_color", "matched_grayscale"};
};

struct EvalSection {
  int fid_sizes = 8;
  std::uint64_t extractor_seed = 7;
  int batch_size = 64;
};

/// Every tunable of a run. Unknown keys are rejected when loading.
struct RunConfig {
  std::uint64_t seed = 0;
  std::string log_level = "info";
  CorpusSection corpus;
  SmnSection smn;
  MtnSection mtn;
  MatchSection match;
  EvalSection eval;

  nlohmann::json to_json() const;
  /// Applies the keys present in `j` ({section: {key: value}} or top-level scalars).
  void apply(const nlohmann::json& j);
  /// `section.key=value` override; the value is parsed as a TOML value.
  void apply_override(const std::string& assignment);
  /// Cross-field checks; throws ConfigError.
  void validate() const;

  static RunConfig load(const std::filesystem::path& path);
};

}  // namespace vto
