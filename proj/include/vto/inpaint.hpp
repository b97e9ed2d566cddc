#pragma once

#include "vto/affine.hpp"
#include "vto/checkpoint.hpp"
#include "vto/dataset.hpp"
#include "vto/evaluation.hpp"
#include "vto/warp.hpp"

#include <json.hpp>
#include <torch/torch.h>

#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

namespace vto::inpaint {

/// k parameter sets and the k warped product images.
struct WarpBundle {
  std::vector<AffineParams> thetas;
  torch::Tensor warps;  // [k,3,H,W]
};

/// [w_1 .. w_k, m*x, m] along channels: warps [B,k,3,H,W], model [B,3,H,W], mask [B,1,H,W]
/// -> [B,3k+4,H,W]. Single-image inputs (warps [k,3,H,W]) give [3k+4,H,W].
torch::Tensor compose_input(const torch::Tensor& warps, const torch::Tensor& model,
                            const torch::Tensor& mask);

/// Pixel mean over the warp axis: [k,3,H,W] -> [3,H,W] or [B,k,3,H,W] -> [B,3,H,W].
torch::Tensor blend_warps(const torch::Tensor& warps);

struct InpaintWeights {
  double valid = 1.0;
  double hole = 6.0;
  double perceptual = 0.05;
  double style = 120.0;
  double tv = 0.1;
};

struct InpaintLossTerms {
  torch::Tensor valid, hole, perceptual, style, tv, total;
};

/// Mean absolute difference over the elements where `region` [B,1,H,W] is 1 (0 if empty).
torch::Tensor region_l1(const torch::Tensor& a, const torch::Tensor& b, const torch::Tensor& region);

/// Mean absolute difference of horizontally and vertically adjacent pixels over the pairs
/// touching `region`, summed over both directions.
torch::Tensor total_variation(const torch::Tensor& image, const torch::Tensor& region);

/// Gram matrices of feature maps [B,C,H,W] -> [B,C,C], normalized by C*H*W.
torch::Tensor gram_matrix(const torch::Tensor& features);

/// Hole / valid L1, perceptual and style terms on both the raw output and the composite,
/// and total variation of the composite over the hole (m = 0).
InpaintLossTerms inpaint_loss(const torch::Tensor& generated, const torch::Tensor& target,
                              const torch::Tensor& mask, const InpaintWeights& weights,
                              const eval::FeatureExtractor& extractor);

struct UNetConfig {
  int in_channels = 10;
  int levels = 4;
  int width = 32;
};

/// Encoder-decoder with skip connections and a sigmoid RGB output.
class UNetImpl : public torch::nn::Module {
 public:
  explicit UNetImpl(const UNetConfig& c);
  torch::Tensor forward(const torch::Tensor& stacked);
  const UNetConfig& config() const { return config_; }

 private:
  UNetConfig config_;
  std::vector<torch::nn::Sequential> down_, up_;
  torch::nn::Conv2d out_{nullptr};
};
TORCH_MODULE(UNet);

struct MtnConfig {
  warp::WarperConfig warper;
  int unet_levels = 4;
  int unet_width = 32;
  InpaintWeights weights;
  double beta = 3.0;
  double alpha = 0.1;
  std::uint64_t extractor_seed = 7;
};

nlohmann::json to_json(const MtnConfig& c);
MtnConfig mtn_config_from_json(const nlohmann::json& j);

struct MtnForward {
  torch::Tensor thetas;  // [B,k,2,3]
  torch::Tensor warps;   // [B,k,3,H,W]
  torch::Tensor raw;     // [B,3,H,W]
};

/// Warper and inpainting U-Net trained jointly.
class MtnNetImpl : public torch::nn::Module {
 public:
  explicit MtnNetImpl(const MtnConfig& c);
  MtnForward forward(const torch::Tensor& products, const torch::Tensor& models, const torch::Tensor& masks);
  /// Raw U-Net output for a stacked input; rejects a channel count other than 3k+4.
  torch::Tensor generate(const torch::Tensor& stacked);

  const MtnConfig& config() const { return config_; }
  warp::WarpPredictor warper{nullptr};
  UNet unet{nullptr};

 private:
  MtnConfig config_;
};
TORCH_MODULE(MtnNet);

struct MtnLosses {
  torch::Tensor cascade;
  InpaintLossTerms inpaint;
  torch::Tensor total;
};

MtnLosses mtn_total_loss(const MtnConfig& config, const MtnForward& out, const torch::Tensor& models,
                         const torch::Tensor& masks, const eval::FeatureExtractor& extractor);

struct MtnTrainOptions {
  MtnConfig net;
  int steps = 1000;
  int batch_size = 8;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
  std::optional<std::filesystem::path> checkpoint;
  std::optional<std::filesystem::path> resume_from;
  std::function<void(std::int64_t step, const std::vector<double>& losses)> on_step;
  nlohmann::json extra_config;
};

struct MtnTrainResult {
  MtnNet net{nullptr};
  LossHistory history;  // L_cascade, L_inpaint, total
};

/// Joint training on (product, masked model) -> model reconstruction.
MtnTrainResult train_mtn(const CorpusTensors& corpus, const MtnTrainOptions& options);

MtnNet load_mtn(const std::filesystem::path& path);

struct SynthesisOutput {
  torch::Tensor image;  // m*x + (1-m)*raw, [3,H,W]
  torch::Tensor raw;    // U-Net output
  WarpBundle bundle;
  std::vector<double> warp_losses;  // mean pixel loss of each warp against the model's garment
};

/// Eval-mode synthesis of `product` onto `model`; pixels with m = 1 are copied from `model`.
SynthesisOutput synthesize(MtnNet& net, const torch::Tensor& product, const torch::Tensor& model,
                           const torch::Tensor& mask);

/// Batched synthesis [B,...] returning composited images [B,3,H,W].
torch::Tensor synthesize_batch(MtnNet& net, const torch::Tensor& products, const torch::Tensor& models,
                               const torch::Tensor& masks);

}  // namespace vto::inpaint
