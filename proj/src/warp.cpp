#include "vto/warp.hpp"

#include "vto/errors.hpp"
#include "vto/image.hpp"
#include "vto/log.hpp"
#include "vto/random.hpp"


namespace F = torch::nn::functional;

namespace vto::warp {

torch::Tensor apply_affine(const torch::Tensor& images, const torch::Tensor& thetas, double fill) {
  TORCH_CHECK(images.dim() == 4, "apply_affine expects [B,C,H,W] images");
  TORCH_CHECK(thetas.dim() == 3 && thetas.size(1) == 2 && thetas.size(2) == 3,
              "apply_affine expects [B,2,3] parameters");
  auto grid = F::affine_grid(thetas.to(images.dtype()), images.sizes(), /*align_corners=*/false);
  // Sampling (image - fill) with zero padding and adding fill back yields `fill` outside.
  auto shifted = fill == 0.0 ? images : images - fill;
  auto out = F::grid_sample(shifted, grid,
                            F::GridSampleFuncOptions()
                                .mode(torch::kBilinear)
                                .padding_mode(torch::kZeros)
                                .align_corners(false));
  return fill == 0.0 ? out : out + fill;
}

torch::Tensor apply_affine(const torch::Tensor& image, const AffineParams& theta, double fill) {
  TORCH_CHECK(image.dim() == 3, "expected [C,H,W]");
  return apply_affine(image.unsqueeze(0), theta.to_tensor().unsqueeze(0), fill).squeeze(0);
}

torch::Tensor warp_all(const torch::Tensor& products, const torch::Tensor& thetas) {
  const auto b = products.size(0);
  const auto k = thetas.size(1);
  auto expanded = products.unsqueeze(1).expand({b, k, products.size(1), products.size(2),
                                                products.size(3)});
  auto flat = expanded.reshape({b * k, products.size(1), products.size(2), products.size(3)});
  auto warped = apply_affine(flat, thetas.reshape({b * k, 2, 3}), 1.0);
  return warped.view({b, k, products.size(1), products.size(2), products.size(3)});
}

torch::Tensor pixel_loss(const torch::Tensor& warp, const torch::Tensor& model,
                         const torch::Tensor& mask, double beta) {
  if (warp.sizes() != model.sizes()) throw std::invalid_argument("pixel_loss: warp/model shape mismatch");
  if (mask.dim() != warp.dim() || mask.size(0) != warp.size(0) || mask.size(1) != 1 ||
      mask.size(-1) != warp.size(-1) || mask.size(-2) != warp.size(-2)) {
    throw std::invalid_argument("pixel_loss: mask shape mismatch");
  }
  auto garment = 1.0 - mask;
  auto diff = (warp - garment * model).abs();
  return (diff * (1.0 + beta * garment)).sum(1);
}

torch::Tensor pixel_loss_maps(const torch::Tensor& warps, const torch::Tensor& model,
                              const torch::Tensor& mask, double beta) {
  TORCH_CHECK(warps.dim() == 5, "expected warps [B,k,3,H,W]");
  const auto k = warps.size(1);
  std::vector<torch::Tensor> maps;
  maps.reserve(k);
  for (std::int64_t i = 0; i < k; ++i) maps.push_back(pixel_loss(warps.select(1, i), model, mask, beta));
  return torch::stack(maps, 1);
}

namespace {

// Cumulative pointwise minimum over dim 1; ties keep the earlier warp.
std::vector<torch::Tensor> running_minima(const torch::Tensor& maps) {
  std::vector<torch::Tensor> out;
  auto running = maps.select(1, 0);
  out.push_back(running);
  for (std::int64_t i = 1; i < maps.size(1); ++i) {
    auto cur = maps.select(1, i);
    running = torch::where(cur < running, cur, running);
    out.push_back(running);
  }
  return out;
}

}  // namespace

torch::Tensor cascade_warp_loss(const torch::Tensor& maps) {
  if (maps.dim() != 4 || maps.size(1) < 1) {
    throw std::invalid_argument("cascade_warp_loss: expected at least one map");
  }
  return running_minima(maps).back().mean();
}

torch::Tensor cascade_warp_loss(const std::vector<torch::Tensor>& maps) {
  if (maps.empty()) throw std::invalid_argument("cascade_warp_loss: empty map list");
  for (const auto& m : maps) {
    if (m.sizes() != maps.front().sizes()) throw std::invalid_argument("cascade_warp_loss: shape mismatch");
  }
  auto stacked = torch::stack(maps, 0);  // [k, ...]
  if (maps.front().dim() == 2) return cascade_warp_loss(stacked.unsqueeze(0));
  return cascade_warp_loss(stacked.transpose(0, 1));
}

torch::Tensor cascade_loss(const torch::Tensor& thetas, const torch::Tensor& maps, double alpha) {
  const auto k = maps.size(1);
  if (thetas.size(1) != k || thetas.size(0) != maps.size(0)) {
    throw std::invalid_argument("cascade_loss: thetas and maps disagree on k or batch");
  }
  auto minima = running_minima(maps);
  auto total = minima.front().mean();
  for (std::size_t i = 1; i < minima.size(); ++i) total = total + minima[i].mean();
  total = total / static_cast<double>(k);
  if (k > 1 && alpha != 0.0) {
    auto first = thetas.select(1, 0).unsqueeze(1);
    auto later = thetas.slice(1, 1);
    // Sum over later warps and entries, mean over batch, divided by k-1.
    auto reg = (later - first).pow(2).sum({1, 2, 3}).mean() / static_cast<double>(k - 1);
    total = total + alpha * reg;
  }
  return total;
}

WarpPredictorImpl::WarpPredictorImpl(const WarperConfig& config) : config_(config) {
  if (config.k < 1) throw ConfigError("warp.k must be >= 1");
  if (config.image_size < 16) throw ConfigError("warper image size must be >= 16");
  const int w = config.width;
  using torch::nn::Conv2d;
  using torch::nn::Conv2dOptions;
  trunk_ = register_module(
      "trunk", torch::nn::Sequential(
                   Conv2d(Conv2dOptions(4, w, 5).stride(2).padding(2)), torch::nn::ReLU(),
                   Conv2d(Conv2dOptions(w, 2 * w, 3).stride(2).padding(1)), torch::nn::ReLU(),
                   Conv2d(Conv2dOptions(2 * w, 2 * w, 3).stride(2).padding(1)), torch::nn::ReLU(),
                   Conv2d(Conv2dOptions(2 * w, 2 * w, 3).stride(2).padding(1)), torch::nn::ReLU(),
                   torch::nn::AdaptiveAvgPool2d(torch::nn::AdaptiveAvgPool2dOptions({4, 4}))));
  hidden_ = register_module("hidden", torch::nn::Linear(2 * w * 16, 64));
  head_ = register_module("head", torch::nn::Linear(64, 6 * config.k));
  torch::NoGradGuard no_grad;
  head_->weight.zero_();
  auto bias = torch::tensor({1.0F, 0.0F, 0.0F, 0.0F, 1.0F, 0.0F}).repeat({config.k});
  head_->bias.copy_(bias);
}

torch::Tensor WarpPredictorImpl::forward(const torch::Tensor& product, const torch::Tensor& mask) {
  if (product.size(-1) != config_.image_size || product.size(-2) != config_.image_size ||
      mask.size(-1) != config_.image_size || mask.size(-2) != config_.image_size) {
    throw std::invalid_argument("warp predictor: input resolution does not match checkpoint");
  }
  auto x = trunk_->forward(torch::cat({product, mask}, 1)).flatten(1);
  x = torch::relu(hidden_->forward(x));
  return head_->forward(x).view({-1, config_.k, 2, 3});
}

std::vector<AffineParams> predict_params(WarpPredictor& predictor, const torch::Tensor& product,
                                         const torch::Tensor& mask) {
  torch::NoGradGuard no_grad;
  const bool was_training = predictor->is_training();
  predictor->eval();
  auto thetas = predictor->forward(product.unsqueeze(0), mask.unsqueeze(0)).squeeze(0);
  predictor->train(was_training);
  std::vector<AffineParams> out;
  for (std::int64_t i = 0; i < thetas.size(0); ++i) out.push_back(AffineParams::from_tensor(thetas[i]));
  return out;
}

nlohmann::json to_json(const WarperConfig& c) {
  return {{"k", c.k}, {"image_size", c.image_size}, {"width", c.width}};
}

WarperConfig warper_config_from_json(const nlohmann::json& j) {
  WarperConfig c;
  c.k = j.at("k").get<int>();
  c.image_size = j.at("image_size").get<int>();
  c.width = j.at("width").get<int>();
  return c;
}

std::vector<std::int64_t> batch_indices(std::uint64_t seed, std::int64_t step, std::int64_t n,
                                        int batch_size) {
  Rng rng(derive_seed(seed, static_cast<std::uint64_t>(step)));
  std::vector<std::int64_t> idx(batch_size);
  for (auto& i : idx) i = static_cast<std::int64_t>(rng.index(static_cast<std::size_t>(n)));
  return idx;
}

namespace {

nlohmann::json train_config_json(const WarpTrainOptions& o) {
  return {{"warper", to_json(o.warper)}, {"beta", o.beta},         {"alpha", o.alpha},
          {"batch_size", o.batch_size},  {"lr", o.learning_rate},   {"seed", o.seed}};
}

}  // namespace

WarpTrainResult train_warper(const CorpusTensors& corpus, const WarpTrainOptions& options) {
  if (corpus.size() == 0) throw DataError("train_warper: empty corpus");
  torch::manual_seed(options.seed);
  WarpTrainResult result;
  result.predictor = WarpPredictor(options.warper);
  auto& predictor = result.predictor;
  torch::optim::Adam optimizer(predictor->parameters(),
                               torch::optim::AdamOptions(options.learning_rate));
  result.history.columns = {"cascade", "warp", "regularizer"};

  std::int64_t start = 0;
  if (options.resume_from) {
    load_checkpoint(*options.resume_from, *predictor, &optimizer, &result.history);
    start = read_checkpoint_meta(*options.resume_from).step;
    result.history.truncate(start);
  }

  predictor->train();
  const auto idx_options = torch::TensorOptions().dtype(torch::kLong);
  for (std::int64_t step = start; step < options.steps; ++step) {
    auto idx_vec = batch_indices(options.seed, step, corpus.size(), options.batch_size);
    auto idx = torch::tensor(idx_vec, idx_options);
    auto products = corpus.products.index_select(0, idx);
    auto models = corpus.models.index_select(0, idx);
    auto masks = corpus.masks.index_select(0, idx);

    auto thetas = predictor->forward(products, masks);
    auto maps = pixel_loss_maps(warp_all(products, thetas), models, masks, options.beta);
    auto loss = cascade_loss(thetas, maps, options.alpha);
    optimizer.zero_grad();
    loss.backward();
    optimizer.step();

    const double total = loss.item<double>();
    const double warp_k = cascade_warp_loss(maps.detach()).item<double>();
    const double reg = total - cascade_loss(thetas.detach(), maps.detach(), 0.0).item<double>();
    std::vector<double> row = {total, warp_k, reg};
    if (options.on_step) options.on_step(step, row);
    result.history.append(step, std::move(row));
  }

  if (options.checkpoint) {
    CheckpointMeta meta{"warper", kVersion, train_config_json(options),
                        std::max<std::int64_t>(start, options.steps)};
    save_checkpoint(*options.checkpoint, meta, *predictor, &optimizer, result.history);
  }
  return result;
}

double evaluate_warp_loss(WarpPredictor& predictor, const CorpusTensors& corpus, double beta,
                          int batch_size) {
  torch::NoGradGuard no_grad;
  const bool was_training = predictor->is_training();
  predictor->eval();
  double sum = 0.0;
  for (std::int64_t begin = 0; begin < corpus.size(); begin += batch_size) {
    const auto end = std::min<std::int64_t>(begin + batch_size, corpus.size());
    auto p = corpus.products.slice(0, begin, end);
    auto x = corpus.models.slice(0, begin, end);
    auto m = corpus.masks.slice(0, begin, end);
    auto thetas = predictor->forward(p, m);
    auto maps = pixel_loss_maps(warp_all(p, thetas), x, m, beta);
    sum += cascade_warp_loss(maps).item<double>() * static_cast<double>(end - begin);
  }
  predictor->train(was_training);
  return sum / static_cast<double>(corpus.size());
}

}  // namespace vto::warp
