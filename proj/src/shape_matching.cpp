#include "vto/shape_matching.hpp"

#include "vto/errors.hpp"
#include "vto/image.hpp"
#include "vto/log.hpp"
#include "vto/random.hpp"

#include <array>

namespace vto::smn {

nlohmann::json to_json(const SmnConfig& c) {
  return {{"image_size", c.image_size}, {"shape_dim", c.shape_dim},   {"visual_dim", c.visual_dim},
          {"attention_grid", c.attention_grid}, {"width", c.width}, {"margin", c.margin},
          {"lambda_reg", c.lambda_reg}};
}

SmnConfig smn_config_from_json(const nlohmann::json& j) {
  SmnConfig c;
  c.image_size = j.at("image_size").get<int>();
  c.shape_dim = j.at("shape_dim").get<int>();
  c.visual_dim = j.at("visual_dim").get<int>();
  c.attention_grid = j.at("attention_grid").get<int>();
  c.width = j.at("width").get<int>();
  c.margin = j.at("margin").get<double>();
  c.lambda_reg = j.at("lambda_reg").get<double>();
  return c;
}

namespace {

torch::Tensor as_batch(const torch::Tensor& t) { return t.dim() == 1 ? t.unsqueeze(0) : t; }

torch::Tensor sq_dist(const torch::Tensor& a, const torch::Tensor& b) { return (a - b).pow(2).sum(-1); }

void check_same_shape(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
  if (a.sizes() != b.sizes()) throw std::invalid_argument(std::string(what) + ": dimension mismatch");
}

}  // namespace

torch::Tensor triplet_loss(const torch::Tensor& anchor, const torch::Tensor& positive,
                           const torch::Tensor& negative, double margin) {
  check_same_shape(anchor, positive, "triplet_loss");
  check_same_shape(anchor, negative, "triplet_loss");
  auto a = as_batch(anchor), p = as_batch(positive), n = as_batch(negative);
  return torch::relu(sq_dist(a, p) - sq_dist(a, n) + margin).mean();
}

torch::Tensor autoencoder_loss(const torch::Tensor& recon, const torch::Tensor& contour,
                               const torch::Tensor& code, double lambda_reg) {
  check_same_shape(recon, contour, "autoencoder_loss");
  return (recon - contour).pow(2).mean() + lambda_reg * as_batch(code).pow(2).sum(-1).mean();
}

torch::Tensor attention_loss(const torch::Tensor& product_code, const torch::Tensor& model_code,
                             const torch::Tensor& distractor_code, const torch::Tensor& other_type_code,
                             double margin, double lambda_reg) {
  auto a = as_batch(product_code), p = as_batch(model_code);
  auto n1 = as_batch(distractor_code), n2 = as_batch(other_type_code);
  auto reg = (a.pow(2).sum(-1) + p.pow(2).sum(-1) + n1.pow(2).sum(-1) + n2.pow(2).sum(-1)).mean();
  return triplet_loss(a, p, n1, margin) + triplet_loss(a, p, n2, margin) + sq_dist(a, p).mean() +
         lambda_reg * reg;
}

torch::Tensor map_loss(const torch::Tensor& recon_from_mapped, const torch::Tensor& contour,
                       const torch::Tensor& shape_code, const torch::Tensor& mapped_code,
                       const torch::Tensor& distractor_shape_code, double margin) {
  check_same_shape(recon_from_mapped, contour, "map_loss");
  return (recon_from_mapped - contour).pow(2).mean() +
         triplet_loss(shape_code, mapped_code, distractor_shape_code, margin);
}

torch::Tensor map_loss(const TensorFn& shape_encoder, const TensorFn& shape_decoder,
                       const TensorFn& mapper, const torch::Tensor& product_visual_code,
                       const torch::Tensor& contour, const torch::Tensor& distractor_contour,
                       double margin) {
  auto mapped = mapper(product_visual_code);
  return map_loss(shape_decoder(mapped), contour, shape_encoder(contour), mapped,
                  shape_encoder(distractor_contour), margin);
}

namespace {

using torch::nn::Conv2d;
using torch::nn::Conv2dOptions;

torch::nn::Sequential down_stack(int in, int w) {
  return torch::nn::Sequential(Conv2d(Conv2dOptions(in, w, 4).stride(2).padding(1)), torch::nn::ReLU(),
                               Conv2d(Conv2dOptions(w, 2 * w, 4).stride(2).padding(1)), torch::nn::ReLU(),
                               Conv2d(Conv2dOptions(2 * w, 4 * w, 4).stride(2).padding(1)),
                               torch::nn::ReLU());
}

constexpr double kContourBiasInit = -2.5;  // sigmoid(-2.5) ~ 0.08

void validate(const SmnConfig& c) {
  if (c.image_size < 16 || c.image_size % 8 != 0) throw ConfigError("smn.image_size must be a multiple of 8, >= 16");
  if (c.shape_dim < 1 || c.visual_dim < 1 || c.width < 1) throw ConfigError("smn dimensions must be positive");
  if (c.attention_grid < 1 || c.attention_grid > c.image_size / 8) {
    throw ConfigError("smn.attention_grid must lie in [1, image_size/8]");
  }
  if (c.margin < 0.0 || c.lambda_reg < 0.0) throw ConfigError("smn margin and lambda_reg must be >= 0");
}

}  // namespace

ShapeEncoderImpl::ShapeEncoderImpl(const SmnConfig& c) {
  const int cells = c.image_size / 8;
  convs_ = register_module("convs", down_stack(1, c.width));
  fc_ = register_module("fc", torch::nn::Linear(4 * c.width * cells * cells, c.shape_dim));
}

torch::Tensor ShapeEncoderImpl::forward(const torch::Tensor& contours) {
  return torch::nn::functional::normalize(fc_->forward(convs_->forward(contours).flatten(1)),
                                         torch::nn::functional::NormalizeFuncOptions().dim(1));
}

ShapeDecoderImpl::ShapeDecoderImpl(const SmnConfig& c)
    : channels_(4 * c.width), cells_(c.image_size / 8) {
  using torch::nn::ConvTranspose2d;
  using torch::nn::ConvTranspose2dOptions;
  const int w = c.width;
  fc_ = register_module("fc", torch::nn::Linear(c.shape_dim, channels_ * cells_ * cells_));
  deconvs_ = register_module(
      "deconvs",
      torch::nn::Sequential(ConvTranspose2d(ConvTranspose2dOptions(4 * w, 2 * w, 4).stride(2).padding(1)),
                            torch::nn::ReLU(),
                            ConvTranspose2d(ConvTranspose2dOptions(2 * w, w, 4).stride(2).padding(1)),
                            torch::nn::ReLU(),
                            ConvTranspose2d(ConvTranspose2dOptions(w, 1, 4).stride(2).padding(1))));
  // Contours are sparse: start the output near their typical density instead of 0.5.
  torch::NoGradGuard no_grad;
  deconvs_->ptr<torch::nn::ConvTranspose2dImpl>(4)->bias.fill_(kContourBiasInit);
}

torch::Tensor ShapeDecoderImpl::forward(const torch::Tensor& codes) {
  auto x = torch::relu(fc_->forward(codes)).view({-1, channels_, cells_, cells_});
  return torch::sigmoid(deconvs_->forward(x));
}

VisualEncoderImpl::VisualEncoderImpl(const SmnConfig& c) : grid_(c.attention_grid) {
  trunk_ = register_module("trunk", down_stack(3, c.width));
  attention_ = register_module("attention", Conv2d(Conv2dOptions(4 * c.width, kGarmentTypes.size(), 1)));
  project_ = register_module("project", torch::nn::Linear(4 * c.width, c.visual_dim));
}

torch::Tensor VisualEncoderImpl::features(const torch::Tensor& images) {
  auto f = trunk_->forward((images - 0.5) * 2.0);
  return torch::adaptive_avg_pool2d(f, {grid_, grid_});
}

torch::Tensor VisualEncoderImpl::encode_products(const torch::Tensor& products) {
  return project_->forward(features(products).mean({2, 3}));
}

ModelParse VisualEncoderImpl::parse_models(const torch::Tensor& models) {
  auto f = features(models);  // [B,C,G,G]
  const auto b = f.size(0);
  auto logits = attention_->forward(f).flatten(2);  // [B,4,G*G]
  auto weights = torch::softmax(logits, -1);
  auto pooled = torch::bmm(weights, f.flatten(2).transpose(1, 2));  // [B,4,C]
  return {project_->forward(pooled), weights.view({b, -1, grid_, grid_})};
}

MapperImpl::MapperImpl(const SmnConfig& c) {
  fc1_ = register_module("fc1", torch::nn::Linear(c.visual_dim, c.visual_dim));
  fc2_ = register_module("fc2", torch::nn::Linear(c.visual_dim, c.shape_dim));
}

torch::Tensor MapperImpl::forward(const torch::Tensor& visual_codes) {
  return torch::nn::functional::normalize(fc2_->forward(torch::relu(fc1_->forward(visual_codes))),
                                         torch::nn::functional::NormalizeFuncOptions().dim(-1));
}

SmnNetImpl::SmnNetImpl(const SmnConfig& c) : config_(c) {
  validate(c);
  shape_encoder = register_module("shape_encoder", ShapeEncoder(c));
  shape_decoder = register_module("shape_decoder", ShapeDecoder(c));
  visual_encoder = register_module("visual_encoder", VisualEncoder(c));
  mapper = register_module("mapper", Mapper(c));
}

void SmnNetImpl::check_resolution(const torch::Tensor& images) const {
  if (images.size(-1) != config_.image_size || images.size(-2) != config_.image_size) {
    throw std::invalid_argument("shape matching net: input resolution does not match checkpoint");
  }
}

torch::Tensor SmnNetImpl::encode_shape(const torch::Tensor& contours) {
  check_resolution(contours);
  return shape_encoder->forward(contours);
}

torch::Tensor SmnNetImpl::decode_shape(const torch::Tensor& codes) { return shape_decoder->forward(codes); }

torch::Tensor SmnNetImpl::encode_products(const torch::Tensor& products) {
  check_resolution(products);
  return visual_encoder->encode_products(products);
}

ModelParse SmnNetImpl::parse_models(const torch::Tensor& models) {
  check_resolution(models);
  return visual_encoder->parse_models(models);
}

torch::Tensor SmnNetImpl::map_to_shape(const torch::Tensor& visual_codes) { return mapper->forward(visual_codes); }

namespace {

class EvalScope {
 public:
  explicit EvalScope(torch::nn::Module& m) : module_(m), was_training_(m.is_training()) { m.eval(); }
  ~EvalScope() { module_.train(was_training_); }
  EvalScope(const EvalScope&) = delete;
  EvalScope& operator=(const EvalScope&) = delete;

 private:
  torch::nn::Module& module_;
  bool was_training_;
  torch::NoGradGuard no_grad_;
};

}  // namespace

torch::Tensor encode_shape(SmnNet& net, const torch::Tensor& contour) {
  EvalScope scope(*net);
  return net->encode_shape(contour.unsqueeze(0)).squeeze(0);
}

torch::Tensor decode_shape(SmnNet& net, const torch::Tensor& code) {
  EvalScope scope(*net);
  return net->decode_shape(code.unsqueeze(0)).squeeze(0);
}

torch::Tensor encode_product(SmnNet& net, const torch::Tensor& product) {
  EvalScope scope(*net);
  return net->encode_products(product.unsqueeze(0)).squeeze(0);
}

ModelParse encode_model(SmnNet& net, const torch::Tensor& model) {
  EvalScope scope(*net);
  auto parse = net->parse_models(model.unsqueeze(0));
  return {parse.codes.squeeze(0), parse.attention.squeeze(0)};
}

torch::Tensor map_to_shape(SmnNet& net, const torch::Tensor& visual_code) {
  EvalScope scope(*net);
  return net->map_to_shape(visual_code.unsqueeze(0)).squeeze(0);
}

torch::Tensor attention_loss(SmnNet& net, const torch::Tensor& product, const torch::Tensor& model,
                             const torch::Tensor& distractor, GarmentType type, GarmentType other_type) {
  if (type == other_type) throw std::invalid_argument("attention_loss: other type must differ from the product type");
  auto products = torch::stack({product, distractor});
  auto codes = net->encode_products(products);
  auto parse = net->parse_models(model.unsqueeze(0));
  const auto& c = net->config();
  return attention_loss(codes[0], parse.codes[0][static_cast<int>(type)], codes[1],
                        parse.codes[0][static_cast<int>(other_type)], c.margin, c.lambda_reg);
}

SmnLosses smn_total_loss(SmnNet& net, const SmnBatch& batch) {
  const auto& c = net->config();
  const auto b = batch.products.size(0);
  auto rows = torch::arange(b, torch::kLong);

  auto shape_codes = net->encode_shape(torch::cat({batch.contours, batch.distractor_contours}));
  auto shape_code = shape_codes.slice(0, 0, b);
  auto distractor_shape = shape_codes.slice(0, b);
  SmnLosses out;
  out.autoencoder = autoencoder_loss(net->decode_shape(shape_code), batch.contours, shape_code, c.lambda_reg);

  auto product_codes = net->encode_products(torch::cat({batch.products, batch.distractor_products}));
  auto product_code = product_codes.slice(0, 0, b);
  auto distractor_code = product_codes.slice(0, b);
  auto parse = net->parse_models(batch.models);
  auto positive = parse.codes.index({rows, batch.types});
  auto other = parse.codes.index({rows, batch.other_types});
  out.attention = attention_loss(product_code, positive, distractor_code, other, c.margin, c.lambda_reg);

  auto mapped = net->map_to_shape(product_code);
  out.map = map_loss(net->decode_shape(mapped), batch.contours, shape_code.detach(), mapped, distractor_shape.detach(), c.margin);
  out.total = out.autoencoder + out.attention + out.map;
  return out;
}

namespace {

std::array<std::vector<std::int64_t>, 4> items_by_type(const CorpusTensors& corpus) {
  std::array<std::vector<std::int64_t>, 4> by_type;
  for (std::int64_t i = 0; i < corpus.size(); ++i) {
    by_type[static_cast<std::size_t>(corpus.types[static_cast<std::size_t>(i)])].push_back(i);
  }
  return by_type;
}

}  // namespace

SmnBatch sample_smn_batch(const CorpusTensors& corpus, std::uint64_t seed, std::int64_t step,
                          int batch_size) {
  const auto by_type = items_by_type(corpus);
  Rng rng(derive_seed(seed, static_cast<std::uint64_t>(step)));
  std::vector<std::int64_t> anchors, distractors, types, others;
  for (int i = 0; i < batch_size; ++i) {
    const auto a = static_cast<std::int64_t>(rng.index(static_cast<std::size_t>(corpus.size())));
    const int t = static_cast<int>(corpus.types[static_cast<std::size_t>(a)]);
    const auto& pool = by_type[static_cast<std::size_t>(t)];
    if (pool.size() < 2) throw DataError("sample_smn_batch: fewer than two items of a garment type");
    std::int64_t d = a;
    while (d == a) d = pool[rng.index(pool.size())];
    int o = static_cast<int>(rng.index(kGarmentTypes.size() - 1));
    if (o >= t) ++o;
    anchors.push_back(a);
    distractors.push_back(d);
    types.push_back(t);
    others.push_back(o);
  }
  const auto opts = torch::TensorOptions().dtype(torch::kLong);
  auto ai = torch::tensor(anchors, opts);
  auto di = torch::tensor(distractors, opts);
  return {corpus.products.index_select(0, ai),    corpus.models.index_select(0, ai),
          corpus.contours.index_select(0, ai),    corpus.products.index_select(0, di),
          corpus.contours.index_select(0, di),    torch::tensor(types, opts),
          torch::tensor(others, opts)};
}

SmnTrainResult train_smn(const CorpusTensors& corpus, const SmnTrainOptions& options) {
  if (!corpus.contours.defined() || corpus.contours.numel() == 0) {
    throw DataError("train_smn: corpus was loaded without contours");
  }
  const auto by_type = items_by_type(corpus);
  for (std::size_t t = 0; t < by_type.size(); ++t) {
    if (by_type[t].size() < 2) {
      throw DataError("train_smn: garment type \"" + std::string(to_string(kGarmentTypes[t])) +
                      "\" has fewer than two items; distractor sampling is impossible");
    }
  }
  if (corpus.products.size(-1) != options.net.image_size) {
    throw DataError("train_smn: corpus resolution does not match smn.image_size");
  }
  torch::manual_seed(options.seed);
  SmnTrainResult result;
  result.net = SmnNet(options.net);
  auto& net = result.net;
  torch::optim::Adam optimizer(net->parameters(), torch::optim::AdamOptions(options.learning_rate));
  result.history.columns = {"L_autoencoder", "L_attention", "L_map", "total"};

  std::int64_t start = 0;
  if (options.resume_from) {
    load_checkpoint(*options.resume_from, *net, &optimizer, &result.history);
    start = read_checkpoint_meta(*options.resume_from).step;
    result.history.truncate(start);
  }

  net->train();
  for (std::int64_t step = start; step < options.steps; ++step) {
    auto batch = sample_smn_batch(corpus, options.seed, step, options.batch_size);
    auto losses = smn_total_loss(net, batch);
    optimizer.zero_grad();
    losses.total.backward();
    optimizer.step();
    std::vector<double> row = {losses.autoencoder.item<double>(), losses.attention.item<double>(),
                               losses.map.item<double>(), losses.total.item<double>()};
    if (options.on_step) options.on_step(step, row);
    result.history.append(step, std::move(row));
  }

  if (options.checkpoint) {
    nlohmann::json config = {{"smn", to_json(options.net)},
                             {"batch_size", options.batch_size},
                             {"lr", options.learning_rate},
                             {"seed", options.seed}};
    if (!options.extra_config.is_null()) config["run"] = options.extra_config;
    CheckpointMeta meta{"smn", kVersion, config, std::max<std::int64_t>(start, options.steps)};
    save_checkpoint(*options.checkpoint, meta, *net, &optimizer, result.history);
  }
  return result;
}

SmnNet load_smn(const std::filesystem::path& path) {
  const auto meta = read_checkpoint_meta(path);
  if (meta.kind != "smn") throw DataError(path.string() + ": not a shape matching checkpoint");
  SmnNet net(smn_config_from_json(meta.config.at("smn")));
  load_checkpoint(path, *net, nullptr, nullptr);
  if (meta.step == 0) log::warn(path.string(), ": shape matching checkpoint is untrained");
  net->eval();
  return net;
}

}  // namespace vto::smn
