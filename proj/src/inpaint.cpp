#include "vto/inpaint.hpp"

#include "vto/errors.hpp"
#include "vto/image.hpp"
#include "vto/log.hpp"

namespace vto::inpaint {

torch::Tensor compose_input(const torch::Tensor& warps, const torch::Tensor& model,
                            const torch::Tensor& mask) {
  if (warps.dim() == 4) {
    return compose_input(warps.unsqueeze(0), model.unsqueeze(0), mask.unsqueeze(0)).squeeze(0);
  }
  if (warps.dim() != 5 || warps.size(2) != 3) throw std::invalid_argument("compose_input: warps must be [B,k,3,H,W]");
  const auto b = warps.size(0), h = warps.size(3), w = warps.size(4);
  if (model.size(0) != b || model.size(2) != h || model.size(3) != w || mask.size(0) != b ||
      mask.size(2) != h || mask.size(3) != w) {
    throw std::invalid_argument("compose_input: resolution mismatch between warps, model and mask");
  }
  return torch::cat({warps.flatten(1, 2), mask * model, mask}, 1);
}

torch::Tensor blend_warps(const torch::Tensor& warps) {
  if (warps.dim() != 4 && warps.dim() != 5) throw std::invalid_argument("blend_warps: expected [k,3,H,W] or [B,k,3,H,W]");
  return warps.mean(warps.dim() - 4);
}

torch::Tensor region_l1(const torch::Tensor& a, const torch::Tensor& b, const torch::Tensor& region) {
  auto weight = region.expand_as(a);
  auto count = weight.sum();
  return torch::where(count > 0, ((a - b).abs() * weight).sum() / count.clamp_min(1.0), torch::zeros_like(count));
}

torch::Tensor total_variation(const torch::Tensor& image, const torch::Tensor& region) {
  auto r = region.expand_as(image);
  auto rh = torch::max(r.narrow(-1, 0, r.size(-1) - 1), r.narrow(-1, 1, r.size(-1) - 1));
  auto rv = torch::max(r.narrow(-2, 0, r.size(-2) - 1), r.narrow(-2, 1, r.size(-2) - 1));
  auto dh = (image.narrow(-1, 1, image.size(-1) - 1) - image.narrow(-1, 0, image.size(-1) - 1)).abs();
  auto dv = (image.narrow(-2, 1, image.size(-2) - 1) - image.narrow(-2, 0, image.size(-2) - 1)).abs();
  auto term = [](const torch::Tensor& d, const torch::Tensor& w) {
    auto count = w.sum();
    return torch::where(count > 0, (d * w).sum() / count.clamp_min(1.0), torch::zeros_like(count));
  };
  return term(dh, rh) + term(dv, rv);
}

torch::Tensor gram_matrix(const torch::Tensor& features) {
  const auto b = features.size(0), c = features.size(1);
  auto f = features.reshape({b, c, -1});
  return torch::bmm(f, f.transpose(1, 2)) / static_cast<double>(c * f.size(2));
}

InpaintLossTerms inpaint_loss(const torch::Tensor& generated, const torch::Tensor& target,
                              const torch::Tensor& mask, const InpaintWeights& weights,
                              const eval::FeatureExtractor& extractor) {
  if (generated.sizes() != target.sizes()) throw std::invalid_argument("inpaint_loss: shape mismatch");
  auto hole = 1.0 - mask;
  InpaintLossTerms t;
  t.valid = region_l1(generated, target, mask);
  t.hole = region_l1(generated, target, hole);
  auto composite = mask * target + hole * generated;

  auto zero = torch::zeros({}, generated.options());
  t.perceptual = zero;
  t.style = zero;
  if (weights.perceptual != 0.0 || weights.style != 0.0) {
    const auto n = generated.size(0);
    auto feats = extractor.feature_maps(torch::cat({generated, composite, target}));
    for (const auto& f : feats) {
      auto out = f.slice(0, 0, n), comp = f.slice(0, n, 2 * n), gt = f.slice(0, 2 * n).detach();
      t.perceptual = t.perceptual + (out - gt).abs().mean() + (comp - gt).abs().mean();
      auto g_gt = gram_matrix(gt);
      t.style = t.style + (gram_matrix(out) - g_gt).abs().mean() + (gram_matrix(comp) - g_gt).abs().mean();
    }
  }
  t.tv = total_variation(composite, hole);
  t.total = weights.valid * t.valid + weights.hole * t.hole + weights.perceptual * t.perceptual +
            weights.style * t.style + weights.tv * t.tv;
  return t;
}

namespace {

torch::nn::Sequential conv_block(int in, int out) {
  using torch::nn::Conv2d;
  using torch::nn::Conv2dOptions;
  return torch::nn::Sequential(Conv2d(Conv2dOptions(in, out, 3).padding(1)), torch::nn::ReLU(),
                               Conv2d(Conv2dOptions(out, out, 3).padding(1)), torch::nn::ReLU());
}

}  // namespace

UNetImpl::UNetImpl(const UNetConfig& c) : config_(c) {
  if (c.levels < 1 || c.width < 1 || c.in_channels < 1) throw ConfigError("unet levels, width and channels must be >= 1");
  for (int i = 0; i < c.levels; ++i) {
    const int in = i == 0 ? c.in_channels : c.width << (i - 1);
    down_.push_back(register_module("down" + std::to_string(i), conv_block(in, c.width << i)));
  }
  for (int i = c.levels - 2; i >= 0; --i) {
    up_.push_back(register_module("up" + std::to_string(i), conv_block((c.width << (i + 1)) + (c.width << i), c.width << i)));
  }
  out_ = register_module("out", torch::nn::Conv2d(torch::nn::Conv2dOptions(c.width, 3, 1)));
}

torch::Tensor UNetImpl::forward(const torch::Tensor& stacked) {
  if (stacked.size(1) != config_.in_channels) {
    throw std::invalid_argument("unet: expected " + std::to_string(config_.in_channels) + " input channels, got " +
                                std::to_string(stacked.size(1)));
  }
  const std::int64_t factor = std::int64_t{1} << (config_.levels - 1);
  if (stacked.size(2) % factor != 0 || stacked.size(3) % factor != 0) {
    throw std::invalid_argument("unet: resolution must be divisible by 2^(levels-1)");
  }
  std::vector<torch::Tensor> skips;
  auto x = stacked;
  for (std::size_t i = 0; i < down_.size(); ++i) {
    if (i > 0) x = torch::avg_pool2d(x, 2);
    x = down_[i]->forward(x);
    skips.push_back(x);
  }
  for (std::size_t j = 0; j < up_.size(); ++j) {
    const auto& skip = skips[skips.size() - 2 - j];
    x = torch::upsample_nearest2d(x, {skip.size(2), skip.size(3)});
    x = up_[j]->forward(torch::cat({x, skip}, 1));
  }
  return torch::sigmoid(out_->forward(x));
}

nlohmann::json to_json(const MtnConfig& c) {
  return {{"warper", warp::to_json(c.warper)},
          {"unet_levels", c.unet_levels},
          {"unet_width", c.unet_width},
          {"unet_in_channels", 3 * c.warper.k + 4},
          {"weights",
           {{"valid", c.weights.valid},
            {"hole", c.weights.hole},
            {"perceptual", c.weights.perceptual},
            {"style", c.weights.style},
            {"tv", c.weights.tv}}},
          {"beta", c.beta},
          {"alpha", c.alpha},
          {"extractor_seed", c.extractor_seed}};
}

MtnConfig mtn_config_from_json(const nlohmann::json& j) {
  MtnConfig c;
  c.warper = warp::warper_config_from_json(j.at("warper"));
  c.unet_levels = j.at("unet_levels").get<int>();
  c.unet_width = j.at("unet_width").get<int>();
  if (j.contains("unet_in_channels") && j.at("unet_in_channels").get<int>() != 3 * c.warper.k + 4) {
    throw DataError("mtn checkpoint: U-Net input channels disagree with k (expected 3k+4)");
  }
  const auto& w = j.at("weights");
  c.weights = {w.at("valid").get<double>(), w.at("hole").get<double>(), w.at("perceptual").get<double>(),
               w.at("style").get<double>(), w.at("tv").get<double>()};
  c.beta = j.at("beta").get<double>();
  c.alpha = j.at("alpha").get<double>();
  c.extractor_seed = j.at("extractor_seed").get<std::uint64_t>();
  return c;
}

MtnNetImpl::MtnNetImpl(const MtnConfig& c) : config_(c) {
  warper = register_module("warper", warp::WarpPredictor(c.warper));
  unet = register_module("unet", UNet(UNetConfig{3 * c.warper.k + 4, c.unet_levels, c.unet_width}));
}

MtnForward MtnNetImpl::forward(const torch::Tensor& products, const torch::Tensor& models,
                               const torch::Tensor& masks) {
  MtnForward out;
  out.thetas = warper->forward(products, masks);
  out.warps = warp::warp_all(products, out.thetas);
  out.raw = generate(compose_input(out.warps, models, masks));
  return out;
}

torch::Tensor MtnNetImpl::generate(const torch::Tensor& stacked) {
  const auto expected = 3 * config_.warper.k + 4;
  if (stacked.size(1) != expected) {
    throw std::invalid_argument("generate: stacked input has " + std::to_string(stacked.size(1)) +
                                " channels, checkpoint expects " + std::to_string(expected));
  }
  return unet->forward(stacked);
}

MtnLosses mtn_total_loss(const MtnConfig& config, const MtnForward& out, const torch::Tensor& models,
                         const torch::Tensor& masks, const eval::FeatureExtractor& extractor) {
  MtnLosses l;
  auto maps = warp::pixel_loss_maps(out.warps, models, masks, config.beta);
  l.cascade = warp::cascade_loss(out.thetas, maps, config.alpha);
  l.inpaint = inpaint_loss(out.raw, models, masks, config.weights, extractor);
  l.total = l.cascade + l.inpaint.total;
  return l;
}

namespace {

nlohmann::json train_config_json(const MtnTrainOptions& o) {
  nlohmann::json j = {{"mtn", to_json(o.net)},
                      {"batch_size", o.batch_size},
                      {"lr", o.learning_rate},
                      {"seed", o.seed}};
  if (!o.extra_config.is_null()) j["run"] = o.extra_config;
  return j;
}

}  // namespace

MtnTrainResult train_mtn(const CorpusTensors& corpus, const MtnTrainOptions& options) {
  if (corpus.size() == 0) throw DataError("train_mtn: empty corpus");
  torch::manual_seed(options.seed);
  MtnTrainResult result;
  result.net = MtnNet(options.net);
  auto& net = result.net;
  const eval::RandomConvExtractor extractor(options.net.extractor_seed);
  torch::optim::Adam optimizer(net->parameters(), torch::optim::AdamOptions(options.learning_rate));
  result.history.columns = {"L_cascade", "L_inpaint", "total"};

  std::int64_t start = 0;
  if (options.resume_from) {
    load_checkpoint(*options.resume_from, *net, &optimizer, &result.history);
    start = read_checkpoint_meta(*options.resume_from).step;
    result.history.truncate(start);
  }

  net->train();
  const auto idx_options = torch::TensorOptions().dtype(torch::kLong);
  for (std::int64_t step = start; step < options.steps; ++step) {
    auto idx = torch::tensor(warp::batch_indices(options.seed, step, corpus.size(), options.batch_size), idx_options);
    auto products = corpus.products.index_select(0, idx);
    auto models = corpus.models.index_select(0, idx);
    auto masks = corpus.masks.index_select(0, idx);
    auto out = net->forward(products, models, masks);
    auto losses = mtn_total_loss(options.net, out, models, masks, extractor);
    optimizer.zero_grad();
    losses.total.backward();
    optimizer.step();
    std::vector<double> row = {losses.cascade.item<double>(), losses.inpaint.total.item<double>(),
                               losses.total.item<double>()};
    if (options.on_step) options.on_step(step, row);
    result.history.append(step, std::move(row));
  }

  if (options.checkpoint) {
    CheckpointMeta meta{"mtn", kVersion, train_config_json(options), std::max<std::int64_t>(start, options.steps)};
    save_checkpoint(*options.checkpoint, meta, *net, &optimizer, result.history);
  }
  return result;
}

MtnNet load_mtn(const std::filesystem::path& path) {
  const auto meta = read_checkpoint_meta(path);
  if (meta.kind != "mtn") throw DataError(path.string() + ": not a try-on network checkpoint");
  MtnNet net(mtn_config_from_json(meta.config.at("mtn")));
  load_checkpoint(path, *net, nullptr, nullptr);
  if (meta.step == 0) log::warn(path.string(), ": try-on checkpoint is untrained");
  net->eval();
  return net;
}

SynthesisOutput synthesize(MtnNet& net, const torch::Tensor& product, const torch::Tensor& model,
                           const torch::Tensor& mask) {
  torch::NoGradGuard no_grad;
  const bool was_training = net->is_training();
  net->eval();
  auto out = net->forward(product.unsqueeze(0), model.unsqueeze(0), mask.unsqueeze(0));
  net->train(was_training);

  SynthesisOutput s;
  s.raw = out.raw.squeeze(0);
  s.image = torch::where(mask.expand_as(model) > 0.5, model, s.raw);
  s.bundle.warps = out.warps.squeeze(0);
  auto thetas = out.thetas.squeeze(0);
  for (std::int64_t i = 0; i < thetas.size(0); ++i) s.bundle.thetas.push_back(AffineParams::from_tensor(thetas[i]));
  auto maps = warp::pixel_loss_maps(out.warps, model.unsqueeze(0), mask.unsqueeze(0), net->config().beta);
  for (std::int64_t i = 0; i < maps.size(1); ++i) s.warp_losses.push_back(maps[0][i].mean().item<double>());
  return s;
}

torch::Tensor synthesize_batch(MtnNet& net, const torch::Tensor& products, const torch::Tensor& models,
                               const torch::Tensor& masks) {
  torch::NoGradGuard no_grad;
  const bool was_training = net->is_training();
  net->eval();
  auto out = net->forward(products, models, masks);
  net->train(was_training);
  return torch::where(masks.expand_as(models) > 0.5, models, out.raw);
}

}  // namespace vto::inpaint
