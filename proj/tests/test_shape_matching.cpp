#include "support.hpp"

#include "vto/contour.hpp"
#include "vto/errors.hpp"
#include "vto/image.hpp"
#include "vto/shape_matching.hpp"

#include <doctest.h>

#include <cmath>

using namespace vto;
using namespace vto::smn;

namespace {

double sq(double v) { return v * v; }

double sqdist(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += sq(a[i] - b[i]);
  return s;
}

double sqnorm(const std::vector<double>& a) { return sqdist(a, std::vector<double>(a.size(), 0.0)); }

double hinge(double v) { return v > 0.0 ? v : 0.0; }

std::vector<double> to_vec(const torch::Tensor& t) {
  auto c = t.to(torch::kFloat64).contiguous().view({-1});
  return {c.data_ptr<double>(), c.data_ptr<double>() + c.numel()};
}

/// Scalar evaluation of the attention loss for one tuple.
double attention_oracle(const std::vector<double>& a, const std::vector<double>& p, const std::vector<double>& n1,
                        const std::vector<double>& n2, double margin, double lambda) {
  return hinge(sqdist(a, p) - sqdist(a, n1) + margin) + hinge(sqdist(a, p) - sqdist(a, n2) + margin) +
         sqdist(a, p) + lambda * (sqnorm(a) + sqnorm(p) + sqnorm(n1) + sqnorm(n2));
}

/// Checks autograd gradients of `loss` w.r.t. every parameter against central differences.
void check_gradients(torch::nn::Module& module, const std::function<torch::Tensor()>& loss) {
  module.zero_grad();
  loss().backward();
  const double h = 1e-6;
  for (auto& p : module.parameters()) {
    auto analytic = p.grad().defined() ? p.grad().clone() : torch::zeros_like(p);
    auto numeric = torch::zeros_like(p);
    auto flat = p.data().view({-1});
    for (std::int64_t i = 0; i < flat.numel(); ++i) {
      const double orig = flat[i].item<double>();
      double plus = 0.0, minus = 0.0;
      {
        torch::NoGradGuard g;
        flat[i] = orig + h;
        plus = loss().item<double>();
        flat[i] = orig - h;
        minus = loss().item<double>();
        flat[i] = orig;
      }
      numeric.view({-1})[i] = (plus - minus) / (2 * h);
    }
    const double scale = std::max(analytic.abs().max().item<double>(), 1e-8);
    CHECK((analytic - numeric).abs().max().item<double>() / scale < 1e-3);
  }
}

/// Linear encoder / sigmoid decoder / linear mapper on 8x8 single-channel images.
struct Stubs : torch::nn::Module {
  torch::nn::Linear enc{nullptr}, dec{nullptr}, map{nullptr}, vis{nullptr};
  Stubs() {
    enc = register_module("enc", torch::nn::Linear(64, 3));
    dec = register_module("dec", torch::nn::Linear(3, 64));
    map = register_module("map", torch::nn::Linear(4, 3));
    vis = register_module("vis", torch::nn::Linear(3 * 64, 4));
    to(torch::kFloat64);
  }
  torch::Tensor encode(const torch::Tensor& c) { return enc->forward(c.flatten(1)); }
  torch::Tensor decode(const torch::Tensor& z) { return torch::sigmoid(dec->forward(z)).view({-1, 1, 8, 8}); }
  torch::Tensor visual(const torch::Tensor& x) { return vis->forward(x.flatten(1)); }
};

SmnConfig small_config() {
  SmnConfig c;
  c.image_size = 32;
  c.attention_grid = 4;
  c.width = 8;
  return c;
}

}  // namespace

TEST_CASE("triplet loss examples") {
  auto a = torch::tensor({0.0, 0.0});
  CHECK(triplet_loss(a, a, torch::tensor({1.0, 0.0}), 0.3).item<double>() == 0.0);
  CHECK(triplet_loss(a, a, a, 0.3).item<double>() == doctest::Approx(0.3));
  CHECK(triplet_loss(a, torch::tensor({1.0, 0.0}), torch::tensor({0.0, 2.0}), 0.3).item<double>() == 0.0);
  CHECK(triplet_loss(a, torch::tensor({1.0, 0.0}), torch::tensor({0.0, 0.5}), 0.3).item<double>() ==
        doctest::Approx(1.0 - 0.25 + 0.3));
  CHECK(triplet_loss(a, a, torch::tensor({0.0, 0.0}), 0.0).item<double>() == 0.0);
  CHECK_THROWS(triplet_loss(a, torch::zeros({3}), a, 0.3));

  torch::manual_seed(0);
  for (int i = 0; i < 20; ++i) {
    auto x = torch::randn({5, 4}), y = torch::randn({5, 4}), z = torch::randn({5, 4});
    const double v = triplet_loss(x, y, z, 0.3).item<double>();
    CHECK(v >= 0.0);
    CHECK(std::isfinite(v));
  }
}

TEST_CASE("autoencoder loss examples") {
  torch::manual_seed(1);
  auto c = (torch::rand({2, 1, 8, 8}) > 0.7).to(torch::kFloat32);
  auto zero = torch::zeros({2, 6});
  CHECK(autoencoder_loss(c, c, zero, 1e-4).item<double>() == 0.0);
  CHECK(autoencoder_loss(c + 0.2, c, zero, 1e-4).item<double>() == doctest::Approx(0.04));
  auto code = torch::ones({2, 6});
  CHECK(autoencoder_loss(c, c, code, 0.5).item<double>() == doctest::Approx(3.0));
  CHECK(autoencoder_loss(torch::rand({2, 1, 8, 8}), c, torch::randn({2, 6}), 1e-4).item<double>() >= 0.0);
}

TEST_CASE("attention loss examples") {
  auto e = torch::tensor({0.4, -0.2});
  CHECK(attention_loss(e, e, e, e, 0.0, 0.0).item<double>() == 0.0);

  // Anchor equals positive, both negatives far enough for inactive hinges.
  auto a = torch::tensor({0.0, 0.0});
  CHECK(attention_loss(a, a, torch::tensor({1.0, 0.0}), torch::tensor({0.0, -1.0}), 0.3, 0.0).item<double>() == 0.0);

  std::vector<std::array<std::vector<double>, 4>> cases = {
      {{{0.0, 0.0}, {0.5, 0.0}, {1.0, 0.0}, {0.0, 0.6}}},
      {{{0.2, -0.1}, {0.3, 0.4}, {0.25, 0.2}, {-0.5, 0.9}}},
      {{{1.0, 1.0}, {-1.0, 0.5}, {0.9, 1.1}, {1.2, 0.7}}},
  };
  for (const auto& t : cases) {
    auto T = [](const std::vector<double>& v) { return torch::tensor(v, torch::kFloat64); };
    const double got = attention_loss(T(t[0]), T(t[1]), T(t[2]), T(t[3]), 0.3, 0.01).item<double>();
    CHECK(got == doctest::Approx(attention_oracle(t[0], t[1], t[2], t[3], 0.3, 0.01)).epsilon(1e-12));
  }
  // First case by hand: 0 + 0.19 + 0.25 + 0.01 * 1.61.
  CHECK(attention_oracle(cases[0][0], cases[0][1], cases[0][2], cases[0][3], 0.3, 0.01) == doctest::Approx(0.4561));
}

TEST_CASE("map loss against a stub-network oracle") {
  torch::manual_seed(2);
  Stubs s;
  auto v = torch::randn({1, 4}, torch::kFloat64);
  auto c = (torch::rand({1, 1, 8, 8}, torch::kFloat64) > 0.6).to(torch::kFloat64);
  auto cj = (torch::rand({1, 1, 8, 8}, torch::kFloat64) > 0.6).to(torch::kFloat64);
  const double margin = 0.3;
  torch::NoGradGuard g;
  const double got = map_loss([&](const torch::Tensor& x) { return s.encode(x); },
                              [&](const torch::Tensor& z) { return s.decode(z); },
                              [&](const torch::Tensor& x) { return s.map->forward(x); }, v, c, cj, margin)
                         .item<double>();

  // Plain loops over the stub weights.
  auto We = to_vec(s.enc->weight), be = to_vec(s.enc->bias);
  auto Wd = to_vec(s.dec->weight), bd = to_vec(s.dec->bias);
  auto Wt = to_vec(s.map->weight), bt = to_vec(s.map->bias);
  auto vv = to_vec(v), cv = to_vec(c), cjv = to_vec(cj);
  auto encode = [&](const std::vector<double>& img) {
    std::vector<double> z(3);
    for (int o = 0; o < 3; ++o) {
      z[o] = be[o];
      for (int i = 0; i < 64; ++i) z[o] += We[o * 64 + i] * img[i];
    }
    return z;
  };
  std::vector<double> mapped(3);
  for (int o = 0; o < 3; ++o) {
    mapped[o] = bt[o];
    for (int i = 0; i < 4; ++i) mapped[o] += Wt[o * 4 + i] * vv[i];
  }
  double mse = 0.0;
  for (int o = 0; o < 64; ++o) {
    double z = bd[o];
    for (int i = 0; i < 3; ++i) z += Wd[o * 3 + i] * mapped[i];
    mse += sq(1.0 / (1.0 + std::exp(-z)) - cv[o]);
  }
  mse /= 64.0;
  auto ec = encode(cv), ecj = encode(cjv);
  const double expected = mse + hinge(sqdist(ec, mapped) - sqdist(ec, ecj) + margin);
  CHECK(got == doctest::Approx(expected).epsilon(1e-12));

  // Perfect stubs: mapper returns E_s(c), decoder returns c, distractor far away.
  auto code = s.encode(c);
  const double perfect = map_loss(c, c, code, code, code + 10.0, margin).item<double>();
  CHECK(perfect == 0.0);
  CHECK(map_loss(torch::rand({1, 1, 8, 8}), c.to(torch::kFloat32), torch::randn({1, 3}), torch::randn({1, 3}),
                 torch::randn({1, 3}), margin)
            .item<double>() >= 0.0);
}

TEST_CASE("loss gradients w.r.t. stub weights match central differences") {
  torch::manual_seed(3);
  Stubs s;
  auto c = (torch::rand({3, 1, 8, 8}, torch::kFloat64) > 0.6).to(torch::kFloat64);
  auto cj = (torch::rand({3, 1, 8, 8}, torch::kFloat64) > 0.6).to(torch::kFloat64);
  auto p = torch::rand({3, 3, 8, 8}, torch::kFloat64);
  auto pj = torch::rand({3, 3, 8, 8}, torch::kFloat64);
  auto x = torch::rand({3, 3, 8, 8}, torch::kFloat64);
  auto other = torch::rand({3, 3, 8, 8}, torch::kFloat64);

  SUBCASE("autoencoder") {
    check_gradients(s, [&] {
      auto z = s.encode(c);
      return autoencoder_loss(s.decode(z), c, z, 1e-2);
    });
  }
  SUBCASE("triplet") {
    check_gradients(s, [&] { return triplet_loss(s.encode(c), s.encode(cj), s.encode(c.flip(3)), 0.3); });
  }
  SUBCASE("attention") {
    check_gradients(s, [&] {
      return attention_loss(s.visual(p), s.visual(x), s.visual(pj), s.visual(other), 0.3, 1e-2);
    });
  }
  SUBCASE("map") {
    check_gradients(s, [&] {
      return map_loss([&](const torch::Tensor& t) { return s.encode(t); },
                      [&](const torch::Tensor& z) { return s.decode(z); },
                      [&](const torch::Tensor& v) { return s.map->forward(v); }, s.visual(p), c, cj, 0.3);
    });
  }
}

TEST_CASE("network contracts: resolution, dimensions, determinism") {
  torch::manual_seed(4);
  auto cfg = small_config();
  SmnNet net(cfg);
  auto contour = (torch::rand({1, 32, 32}) > 0.8).to(torch::kFloat32);
  auto code = encode_shape(net, contour);
  CHECK(code.sizes() == torch::IntArrayRef({cfg.shape_dim}));
  CHECK(torch::equal(code, encode_shape(net, contour)));
  auto recon = decode_shape(net, code);
  CHECK(recon.sizes() == contour.sizes());
  CHECK(recon.min().item<double>() >= 0.0);
  CHECK(recon.max().item<double>() <= 1.0);
  CHECK_THROWS(encode_shape(net, torch::zeros({1, 16, 16})));

  auto model = torch::rand({3, 32, 32});
  auto parse = encode_model(net, model);
  CHECK(parse.codes.sizes() == torch::IntArrayRef({4, cfg.visual_dim}));
  CHECK(parse.attention.sizes() == torch::IntArrayRef({4, 4, 4}));
  CHECK(parse.attention.min().item<double>() >= 0.0);
  for (int t = 0; t < 4; ++t) CHECK(parse.attention[t].sum().item<double>() == doctest::Approx(1.0).epsilon(1e-5));
  auto again = encode_model(net, model);
  CHECK(torch::equal(parse.codes, again.codes));
  CHECK(torch::equal(parse.attention, again.attention));
  CHECK_THROWS(encode_model(net, torch::rand({3, 64, 64})));

  auto visual = encode_product(net, model);
  CHECK(visual.sizes() == torch::IntArrayRef({cfg.visual_dim}));
  auto mapped = map_to_shape(net, visual);
  CHECK(mapped.sizes() == torch::IntArrayRef({cfg.shape_dim}));
  CHECK(torch::equal(mapped, map_to_shape(net, visual)));
  CHECK(code.norm().item<double>() == doctest::Approx(1.0).epsilon(1e-5));
  CHECK(mapped.norm().item<double>() == doctest::Approx(1.0).epsilon(1e-5));

  auto bad = cfg;
  bad.image_size = 30;
  CHECK_THROWS_AS(SmnNet{bad}, ConfigError);
  bad = cfg;
  bad.attention_grid = 8;
  CHECK_THROWS_AS(SmnNet{bad}, ConfigError);

  auto j = to_json(cfg);
  auto back = smn_config_from_json(j);
  CHECK(to_json(back) == j);
}

TEST_CASE("network-level attention loss rejects equal types") {
  torch::manual_seed(5);
  SmnNet net(small_config());
  auto p = torch::rand({3, 32, 32}), x = torch::rand({3, 32, 32}), d = torch::rand({3, 32, 32});
  CHECK_THROWS(attention_loss(net, p, x, d, GarmentType::top, GarmentType::top));
  CHECK(attention_loss(net, p, x, d, GarmentType::top, GarmentType::bottoms).item<double>() >= 0.0);
}

TEST_CASE("recoloured products with equal luma share shape codes") {
  torch::manual_seed(6);
  SmnNet net(small_config());
  auto product = torch::ones({3, 32, 32});
  product.index_put_({torch::indexing::Slice(), torch::indexing::Slice(8, 26), torch::indexing::Slice(9, 23)},
                     torch::rand({3, 18, 14}));
  auto recoloured = to_grayscale_rgb(product);
  REQUIRE(luma8(product).data == luma8(recoloured).data);
  auto a = encode_shape(net, to_tensor(contour::extract_contour(product)));
  auto b = encode_shape(net, to_tensor(contour::extract_contour(recoloured)));
  CHECK(torch::equal(a, b));
}

TEST_CASE("batch sampling and total loss decomposition") {
  vto::test::TempDir dir("smn_batch");
  auto corpus = vto::test::make_corpus(dir.path(), 24, 32, false, 4, true);
  auto batch = sample_smn_batch(corpus, 3, 5, 6);
  auto again = sample_smn_batch(corpus, 3, 5, 6);
  CHECK(torch::equal(batch.products, again.products));
  CHECK(torch::equal(batch.other_types, again.other_types));
  CHECK((batch.types != batch.other_types).all().item<bool>());
  CHECK_FALSE(torch::equal(batch.products, batch.distractor_products));

  torch::manual_seed(7);
  SmnNet net(small_config());
  auto losses = smn_total_loss(net, batch);
  const double sum = losses.autoencoder.item<double>() + losses.attention.item<double>() + losses.map.item<double>();
  CHECK(losses.total.item<double>() == doctest::Approx(sum).epsilon(1e-6));

  // Components recomputed from the public pieces.
  const auto& cfg = net->config();
  auto z = net->encode_shape(batch.contours);
  CHECK(losses.autoencoder.item<double>() ==
        doctest::Approx(autoencoder_loss(net->decode_shape(z), batch.contours, z, cfg.lambda_reg).item<double>()));
  auto pc = net->encode_products(batch.products);
  auto mapped = net->map_to_shape(pc);
  auto expected_map = map_loss(net->decode_shape(mapped), batch.contours, z, mapped,
                               net->encode_shape(batch.distractor_contours), cfg.margin);
  CHECK(losses.map.item<double>() == doctest::Approx(expected_map.item<double>()));
  CHECK(losses.total.item<double>() >= 0.0);

  // Contour codes are fixed targets for the mapping: the map loss leaves the shape encoder alone.
  net->zero_grad();
  losses.map.backward();
  for (const auto& p : net->shape_encoder->parameters()) {
    CHECK((!p.grad().defined() || p.grad().abs().max().item<double>() == 0.0));
  }
  double mapper_grad = 0.0;
  for (const auto& p : net->mapper->parameters()) mapper_grad += p.grad().abs().sum().item<double>();
  CHECK(mapper_grad > 0.0);
}

TEST_CASE("train_smn: preconditions, zero steps, resume") {
  vto::test::TempDir dir("smn_train");
  auto corpus = vto::test::make_corpus(dir / "corpus", 24, 32, false, 8, true);
  std::array<int, 4> per_type{};
  for (auto t : corpus.types) ++per_type[static_cast<std::size_t>(t)];
  for (int n : per_type) REQUIRE(n >= 2);

  SmnTrainOptions o;
  o.net = small_config();
  o.batch_size = 4;
  o.seed = 13;

  SUBCASE("missing contours") {
    auto no_contours = corpus;
    no_contours.contours = torch::Tensor();
    CHECK_THROWS_AS(train_smn(no_contours, o), DataError);
  }
  SUBCASE("fewer than two items of a type") {
    std::vector<std::int64_t> keep;
    bool kept_top = false;
    for (std::int64_t i = 0; i < corpus.size(); ++i) {
      if (corpus.types[static_cast<std::size_t>(i)] == GarmentType::top) {
        if (kept_top) continue;
        kept_top = true;
      }
      keep.push_back(i);
    }
    auto idx = torch::tensor(keep, torch::kLong);
    CorpusTensors small;
    for (auto i : keep) {
      small.ids.push_back(corpus.ids[static_cast<std::size_t>(i)]);
      small.types.push_back(corpus.types[static_cast<std::size_t>(i)]);
    }
    small.products = corpus.products.index_select(0, idx);
    small.models = corpus.models.index_select(0, idx);
    small.masks = corpus.masks.index_select(0, idx);
    small.contours = corpus.contours.index_select(0, idx);
    CHECK_THROWS_WITH_AS(train_smn(small, o), doctest::Contains("top"), DataError);
  }
  SUBCASE("zero steps leaves the initialization") {
    o.steps = 0;
    o.checkpoint = dir / "zero.pt";
    train_smn(corpus, o);
    auto loaded = load_smn(dir / "zero.pt");
    torch::manual_seed(o.seed);
    SmnNet fresh(o.net);
    auto a = loaded->named_parameters(), b = fresh->named_parameters();
    REQUIRE(a.size() == b.size());
    for (const auto& item : a) CHECK(torch::equal(item.value(), b[item.key()]));
  }
  SUBCASE("resume reproduces the uninterrupted run") {
    o.steps = 6;
    auto full = train_smn(corpus, o);
    o.steps = 3;
    o.checkpoint = dir / "half.pt";
    train_smn(corpus, o);
    o.steps = 6;
    o.checkpoint = dir / "resumed.pt";
    o.resume_from = dir / "half.pt";
    auto resumed = train_smn(corpus, o);
    CHECK(resumed.history.rows == full.history.rows);
    CHECK(resumed.history.steps == full.history.steps);
    auto a = full.net->parameters(), b = resumed.net->parameters();
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(torch::equal(a[i], b[i]));
    CHECK(read_checkpoint_meta(dir / "resumed.pt").step == 6);
    auto loaded = load_smn(dir / "resumed.pt");
    CHECK(torch::equal(loaded->parameters()[0], b[0]));
  }
}
