#pragma once

#include "vto/affine.hpp"
#include "vto/checkpoint.hpp"
#include "vto/dataset.hpp"

#include <torch/torch.h>

#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

namespace vto::warp {

/// Bilinear sampling of `images` [B,C,H,W] on the grid produced by `thetas` [B,2,3]
/// (output position -> source position). Samples outside the source take `fill`.
/// Differentiable in both arguments.
torch::Tensor apply_affine(const torch::Tensor& images, const torch::Tensor& thetas,
                           double fill = 1.0);
/// Single image [C,H,W].
torch::Tensor apply_affine(const torch::Tensor& image, const AffineParams& theta,
                           double fill = 1.0);

/// products [B,3,H,W], thetas [B,k,2,3] -> warps [B,k,3,H,W].
torch::Tensor warp_all(const torch::Tensor& products, const torch::Tensor& thetas);

/// Per-pixel warp loss |w - (1-m) x| (1 + beta (1-m)), summed over channels.
/// w, x: [B,3,H,W]; m: [B,1,H,W]. Returns [B,H,W].
torch::Tensor pixel_loss(const torch::Tensor& warp, const torch::Tensor& model,
                         const torch::Tensor& mask, double beta);
/// Loss maps for every warp: warps [B,k,3,H,W] -> [B,k,H,W].
torch::Tensor pixel_loss_maps(const torch::Tensor& warps, const torch::Tensor& model,
                              const torch::Tensor& mask, double beta);

/// Mean over pixels of the pointwise minimum across maps [B,k,H,W]; averaged over the batch.
torch::Tensor cascade_warp_loss(const torch::Tensor& maps);
/// Same for a list of [H,W] (or [B,H,W]) maps.
torch::Tensor cascade_warp_loss(const std::vector<torch::Tensor>& maps);

/// Average of the cascade warp losses over the first 1..k maps plus
/// alpha * mean_{i>=2} ||theta_i - theta_1||^2. thetas [B,k,2,3], maps [B,k,H,W].
torch::Tensor cascade_loss(const torch::Tensor& thetas, const torch::Tensor& maps, double alpha);

struct WarperConfig {
  int k = 2;
  int image_size = 128;
  int width = 16;  // channels of the first conv layer
};

/// Predicts k affine parameter sets from the product image and garment mask.
/// The output layer starts at zero weights with an identity bias.
class WarpPredictorImpl : public torch::nn::Module {
 public:
  explicit WarpPredictorImpl(const WarperConfig& config);

  /// product [B,3,H,W], mask [B,1,H,W] -> thetas [B,k,2,3].
  torch::Tensor forward(const torch::Tensor& product, const torch::Tensor& mask);

  const WarperConfig& config() const { return config_; }

 private:
  WarperConfig config_;
  torch::nn::Sequential trunk_{nullptr};
  torch::nn::Linear hidden_{nullptr};
  torch::nn::Linear head_{nullptr};
};
TORCH_MODULE(WarpPredictor);

/// Eval-mode prediction for one (product [3,H,W], mask [1,H,W]) pair.
std::vector<AffineParams> predict_params(WarpPredictor& predictor, const torch::Tensor& product,
                                         const torch::Tensor& mask);

nlohmann::json to_json(const WarperConfig& c);
WarperConfig warper_config_from_json(const nlohmann::json& j);

struct WarpTrainOptions {
  WarperConfig warper;
  double beta = 3.0;
  double alpha = 0.1;
  int steps = 2000;
  int batch_size = 8;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
  std::optional<std::filesystem::path> checkpoint;  // written at the end
  std::optional<std::filesystem::path> resume_from;
  std::function<void(std::int64_t step, const std::vector<double>& losses)> on_step;
};

struct WarpTrainResult {
  WarpPredictor predictor{nullptr};
  LossHistory history;  // step, cascade, warp (min over all k), regularizer
};

/// Warp-only training under the cascade loss.
WarpTrainResult train_warper(const CorpusTensors& corpus, const WarpTrainOptions& options);

/// Mean cascade warp loss (min over all k warps) over the corpus, eval mode.
double evaluate_warp_loss(WarpPredictor& predictor, const CorpusTensors& corpus, double beta,
                          int batch_size = 16);

/// Row indices of one training batch; a pure function of (seed, step).
std::vector<std::int64_t> batch_indices(std::uint64_t seed, std::int64_t step, std::int64_t n,
                                        int batch_size);

}  // namespace vto::warp
