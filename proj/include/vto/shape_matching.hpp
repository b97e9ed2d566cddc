#pragma once

#include "vto/checkpoint.hpp"
#include "vto/dataset.hpp"

#include <json.hpp>
#include <torch/torch.h>

#include <filesystem>
#include <functional>
#include <optional>

namespace vto::smn {

struct SmnConfig {
  int image_size = 64;
  int shape_dim = 64;
  int visual_dim = 128;
  int attention_grid = 8;
  int width = 16;
  double margin = 0.3;
  double lambda_reg = 1e-4;
};

nlohmann::json to_json(const SmnConfig& c);
SmnConfig smn_config_from_json(const nlohmann::json& j);

/// max(0, |a-p|^2 - |a-n|^2 + margin) for [d] or [B,d] inputs, averaged over the batch.
torch::Tensor triplet_loss(const torch::Tensor& anchor, const torch::Tensor& positive,
                           const torch::Tensor& negative, double margin);

/// mean((recon - contour)^2) + lambda * |code|^2 (squared norm averaged over the batch).
torch::Tensor autoencoder_loss(const torch::Tensor& recon, const torch::Tensor& contour,
                               const torch::Tensor& code, double lambda_reg);

/// Triplets anchored at the product code with the model's same-type code as positive,
/// against a same-type distractor product and a different-type model code, plus the
/// squared anchor-positive distance and lambda * sum of squared norms of all four codes.
torch::Tensor attention_loss(const torch::Tensor& product_code, const torch::Tensor& model_code,
                             const torch::Tensor& distractor_code, const torch::Tensor& other_type_code,
                             double margin, double lambda_reg);

/// mean((recon_from_mapped - contour)^2) + triplet(shape_code, mapped_code, distractor_shape_code).
torch::Tensor map_loss(const torch::Tensor& recon_from_mapped, const torch::Tensor& contour,
                       const torch::Tensor& shape_code, const torch::Tensor& mapped_code,
                       const torch::Tensor& distractor_shape_code, double margin);

using TensorFn = std::function<torch::Tensor(const torch::Tensor&)>;

/// Map loss for arbitrary encoder / decoder / mapper callables.
torch::Tensor map_loss(const TensorFn& shape_encoder, const TensorFn& shape_decoder,
                       const TensorFn& mapper, const torch::Tensor& product_visual_code,
                       const torch::Tensor& contour, const torch::Tensor& distractor_contour,
                       double margin);

class ShapeEncoderImpl : public torch::nn::Module {
 public:
  explicit ShapeEncoderImpl(const SmnConfig& c);
  torch::Tensor forward(const torch::Tensor& contours);  // [B,1,S,S] -> [B,d_s], unit norm

 private:
  torch::nn::Sequential convs_{nullptr};
  torch::nn::Linear fc_{nullptr};
};
TORCH_MODULE(ShapeEncoder);

class ShapeDecoderImpl : public torch::nn::Module {
 public:
  explicit ShapeDecoderImpl(const SmnConfig& c);
  torch::Tensor forward(const torch::Tensor& codes);  // [B,d_s] -> [B,1,S,S] in [0,1]

 private:
  int channels_, cells_;
  torch::nn::Linear fc_{nullptr};
  torch::nn::Sequential deconvs_{nullptr};
};
TORCH_MODULE(ShapeDecoder);

/// Per-type model codes and their spatial attention maps.
struct ModelParse {
  torch::Tensor codes;      // [B,4,d_v] (or [4,d_v] for a single image)
  torch::Tensor attention;  // [B,4,G,G], each map sums to 1
};

/// Shared conv trunk; products are average-pooled, models are pooled once per garment
/// type through a learned spatial softmax. Both go through the same projection.
class VisualEncoderImpl : public torch::nn::Module {
 public:
  explicit VisualEncoderImpl(const SmnConfig& c);
  torch::Tensor encode_products(const torch::Tensor& products);  // [B,3,S,S] -> [B,d_v]
  ModelParse parse_models(const torch::Tensor& models);

 private:
  torch::Tensor features(const torch::Tensor& images);
  int grid_;
  torch::nn::Sequential trunk_{nullptr};
  torch::nn::Conv2d attention_{nullptr};
  torch::nn::Linear project_{nullptr};
};
TORCH_MODULE(VisualEncoder);

class MapperImpl : public torch::nn::Module {
 public:
  explicit MapperImpl(const SmnConfig& c);
  torch::Tensor forward(const torch::Tensor& visual_codes);  // [B,d_v] -> [B,d_s], unit norm

 private:
  torch::nn::Linear fc1_{nullptr}, fc2_{nullptr};
};
TORCH_MODULE(Mapper);

class SmnNetImpl : public torch::nn::Module {
 public:
  explicit SmnNetImpl(const SmnConfig& c);

  torch::Tensor encode_shape(const torch::Tensor& contours);
  torch::Tensor decode_shape(const torch::Tensor& codes);
  torch::Tensor encode_products(const torch::Tensor& products);
  ModelParse parse_models(const torch::Tensor& models);
  torch::Tensor map_to_shape(const torch::Tensor& visual_codes);

  const SmnConfig& config() const { return config_; }
  ShapeEncoder shape_encoder{nullptr};
  ShapeDecoder shape_decoder{nullptr};
  VisualEncoder visual_encoder{nullptr};
  Mapper mapper{nullptr};

 private:
  void check_resolution(const torch::Tensor& images) const;
  SmnConfig config_;
};
TORCH_MODULE(SmnNet);

/// Eval-mode single-item inference.
torch::Tensor encode_shape(SmnNet& net, const torch::Tensor& contour);  // [1,S,S] -> [d_s]
torch::Tensor decode_shape(SmnNet& net, const torch::Tensor& code);     // [d_s] -> [1,S,S]
torch::Tensor encode_product(SmnNet& net, const torch::Tensor& product);
ModelParse encode_model(SmnNet& net, const torch::Tensor& model);
torch::Tensor map_to_shape(SmnNet& net, const torch::Tensor& visual_code);

/// Network-level attention loss for one (product, model, distractor) tuple.
torch::Tensor attention_loss(SmnNet& net, const torch::Tensor& product, const torch::Tensor& model,
                             const torch::Tensor& distractor, GarmentType type, GarmentType other_type);

struct SmnBatch {
  torch::Tensor products, models, contours;  // anchors
  torch::Tensor distractor_products, distractor_contours;
  torch::Tensor types, other_types;  // [B] long
};

struct SmnLosses {
  torch::Tensor autoencoder, attention, map, total;
};

/// Component losses (each batch-averaged) and their sum.
SmnLosses smn_total_loss(SmnNet& net, const SmnBatch& batch);

/// Anchors uniform over the corpus, distractors uniform over other items of the same
/// type, other types uniform over the remaining three. Pure function of (seed, step).
SmnBatch sample_smn_batch(const CorpusTensors& corpus, std::uint64_t seed, std::int64_t step,
                          int batch_size);

struct SmnTrainOptions {
  SmnConfig net;
  int steps = 500;
  int batch_size = 16;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
  std::optional<std::filesystem::path> checkpoint;
  std::optional<std::filesystem::path> resume_from;
  std::function<void(std::int64_t step, const std::vector<double>& losses)> on_step;
  nlohmann::json extra_config;  // recorded in the checkpoint snapshot
};

struct SmnTrainResult {
  SmnNet net{nullptr};
  LossHistory history;  // L_autoencoder, L_attention, L_map, total
};

/// Requires contours in the corpus and at least two items of every garment type present.
SmnTrainResult train_smn(const CorpusTensors& corpus, const SmnTrainOptions& options);

/// Rebuilds the network from a checkpoint; warns when it holds no training steps.
SmnNet load_smn(const std::filesystem::path& path);

}  // namespace vto::smn
