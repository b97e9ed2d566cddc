#pragma once

#include "vto/dataset.hpp"
#include "vto/evaluation.hpp"
#include "vto/inpaint.hpp"
#include "vto/retrieval.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace vto::eval {

struct ModeScores {
  std::string mode;
  std::size_t pairs = 0;
  std::size_t ground_truth_pairs = 0;  // pairs whose true try-on image can be rendered
  double fid_inf = 0.0;
  double fid_n = 0.0;                  // plain FID at the largest batch size
  double l1 = 0.0;                     // garment-region L1 against the true try-on image
  double l1_full = 0.0;                // whole-image L1
  double perceptual = 0.0;
};

struct EvalReport {
  std::vector<ModeScores> modes;
  std::size_t real_pool = 0;
  std::string extractor_id;
  nlohmann::json config;

  const ModeScores* find(const std::string& mode) const;
  nlohmann::json to_json() const;
  static EvalReport from_json(const nlohmann::json& j);
  void write_json(const std::filesystem::path& path) const;
  /// One row per metric, one column per mode, labelled with `method`.
  void write_csv(const std::filesystem::path& path, const std::string& method) const;
};

struct EvalOptions {
  int fid_sizes = 8;
  std::uint64_t seed = 0;
  int batch_size = 64;
};

/// The try-on image for a (product, model) pair when the corpus can render it: the model
/// itself for its own product, otherwise the product pasted onto the model's bare figure
/// at the model's generator pose. Undefined tensor when neither applies.
torch::Tensor ground_truth_tryon(const CorpusTensors& corpus, std::int64_t product_row, std::int64_t model_row);

/// Synthesizes every pair of every set, scores FID-inf / FID_N of the generated images
/// against `real_images`, and L1 / perceptual error on pairs with a renderable truth.
EvalReport evaluate_run(const std::vector<retrieval::TestPairSet>& sets, inpaint::MtnNet& net,
                        const CorpusTensors& corpus, const torch::Tensor& real_images,
                        const FeatureExtractor& extractor, const EvalOptions& options);

/// Renders one or more reports as a plain-text table (rows = run labels x metrics).
std::string format_report_table(const std::vector<std::pair<std::string, EvalReport>>& reports);

}  // namespace vto::eval
