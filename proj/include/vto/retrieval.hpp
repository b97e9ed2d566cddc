#pragma once

#include "vto/dataset.hpp"
#include "vto/shape_matching.hpp"

#include <Eigen/Dense>
#include <json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace vto::retrieval {

struct Neighbor {
  std::string id;
  double distance;  // squared Euclidean

  bool operator==(const Neighbor&) const = default;
};

/// Exact squared-Euclidean index. Each entry may carry a tag (the garment type) used to
/// restrict queries.
class EmbeddingIndex {
 public:
  EmbeddingIndex(std::vector<std::string> ids, Eigen::MatrixXd codes, std::vector<std::string> tags = {});

  std::size_t size() const { return ids_.size(); }
  Eigen::Index dim() const { return codes_.cols(); }
  const std::vector<std::string>& ids() const { return ids_; }
  const std::vector<std::string>& tags() const { return tags_; }
  const Eigen::MatrixXd& codes() const { return codes_; }
  nlohmann::json metadata;  // persisted with the index

  /// Ascending distance, ties broken by id; k is clamped to the number of candidates.
  std::vector<Neighbor> query(const Eigen::VectorXd& q, std::size_t k,
                              const std::optional<std::string>& tag = std::nullopt) const;

  void save(const std::filesystem::path& path) const;
  static EmbeddingIndex load(const std::filesystem::path& path);

 private:
  std::vector<std::string> ids_;
  Eigen::MatrixXd codes_;
  std::vector<std::string> tags_;
};

EmbeddingIndex build_index(const std::vector<std::pair<std::string, std::vector<double>>>& items);
std::vector<Neighbor> query_knn(const EmbeddingIndex& index, const std::vector<double>& q, int k);

enum class PairMode { random, matched_color, matched_grayscale };
std::string to_string(PairMode mode);
PairMode parse_pair_mode(const std::string& s);

struct TestPairSet {
  PairMode mode = PairMode::random;
  std::vector<std::pair<std::string, std::string>> pairs;  // (product_id, model_id)

  void write_csv(const std::filesystem::path& path) const;
};

/// Reads a pair CSV (product_id,model_id,mode); one set per mode present, in first-seen order.
std::vector<TestPairSet> read_pairs_csv(const std::filesystem::path& path);

/// Shape codes T(E_v(p)) of product images [N,d_s]; optionally grayscale first.
Eigen::MatrixXd product_shape_codes(smn::SmnNet& net, const torch::Tensor& products, bool grayscale);
/// Shape codes T(E_v(x)_t) of model images for the given per-row garment types.
Eigen::MatrixXd model_shape_codes(smn::SmnNet& net, const torch::Tensor& models,
                                  const std::vector<GarmentType>& types);

/// Index over model images keyed by id and tagged with garment type.
EmbeddingIndex build_model_index(smn::SmnNet& net, const CorpusTensors& models);

struct MatchOptions {
  int k = 25;
  bool grayscale = false;
  int n = 2000;
  std::uint64_t seed = 0;
  bool allow_ground_truth = false;  // permit (id, id) pairs
};

/// Draws n pairs: a product uniformly, then a model uniformly from its k nearest
/// same-type models in shape space.
TestPairSet build_matched_pairs(const CorpusTensors& products, const EmbeddingIndex& model_index,
                                smn::SmnNet& net, const MatchOptions& options);
TestPairSet build_matched_pairs(const CorpusTensors& products, const CorpusTensors& models,
                                smn::SmnNet& net, const MatchOptions& options);

/// Draws n pairs: a product uniformly, then a model uniformly among same-type models.
TestPairSet build_random_pairs(const CorpusTensors& products, const CorpusTensors& models, int n,
                               std::uint64_t seed, bool allow_ground_truth = false);

}  // namespace vto::retrieval
