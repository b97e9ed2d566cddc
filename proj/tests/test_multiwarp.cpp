#include "support.hpp"

#include "vto/affine.hpp"
#include "vto/random.hpp"
#include "vto/warp.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>

using namespace vto;
using namespace vto::warp;
using vto::test::max_abs_diff;

namespace {

torch::Tensor random_theta(Rng& rng) {
  return torch::tensor({1.0 + rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2), rng.uniform(-0.3, 0.3),
                        rng.uniform(-0.2, 0.2), 1.0 + rng.uniform(-0.2, 0.2), rng.uniform(-0.3, 0.3)},
                       torch::kFloat64)
      .view({1, 2, 3});
}

torch::Tensor random_image(int size, std::uint64_t seed) {
  torch::manual_seed(seed);
  return torch::rand({1, 3, size, size}, torch::kFloat64);
}

/// Central differences of f over every entry of theta [1,2,3].
torch::Tensor finite_difference(const std::function<double(const torch::Tensor&)>& f,
                                const torch::Tensor& theta, double h) {
  auto grad = torch::zeros_like(theta);
  for (int i = 0; i < 6; ++i) {
    auto plus = theta.clone(), minus = theta.clone();
    plus.view({6})[i] += h;
    minus.view({6})[i] -= h;
    grad.view({6})[i] = (f(plus) - f(minus)) / (2 * h);
  }
  return grad;
}

double relative_error(const torch::Tensor& analytic, const torch::Tensor& numeric) {
  const double scale = std::max(analytic.abs().max().item<double>(), 1e-12);
  return (analytic - numeric).abs().max().item<double>() / scale;
}

}  // namespace

TEST_CASE("identity parameters reproduce the image") {
  auto img = random_image(16, 1).to(torch::kFloat32);
  auto out = apply_affine(img, AffineParams::identity().to_tensor().unsqueeze(0));
  CHECK(max_abs_diff(out, img) < 1e-6);
  auto single = apply_affine(img[0], AffineParams::identity());
  CHECK(max_abs_diff(single, img[0]) < 1e-6);
}

TEST_CASE("whole-pixel translation is an exact shift") {
  const int size = 16;
  auto img = torch::ones({1, 3, size, size});
  img.index_put_({0, torch::indexing::Slice(), torch::indexing::Slice(5, 11), torch::indexing::Slice(4, 12)},
                 torch::rand({3, 6, 8}));
  for (auto [dy, dx] : {std::pair{2, 3}, std::pair{-1, 2}, std::pair{3, -3}}) {
    // Output pixel (y, x) samples source (y + dy, x + dx).
    AffineParams t;
    t.m[2] = 2.0 * dx / size;
    t.m[5] = 2.0 * dy / size;
    auto out = apply_affine(img, t.to_tensor().unsqueeze(0));
    auto expected = torch::roll(img, {-dy, -dx}, {2, 3});
    CHECK(max_abs_diff(out, expected) < 1e-6);
  }
}

TEST_CASE("out-of-bounds samples are white") {
  auto img = torch::zeros({1, 3, 8, 8});
  AffineParams far;
  far.m[2] = 10.0;
  CHECK(max_abs_diff(apply_affine(img, far.to_tensor().unsqueeze(0)), torch::ones_like(img)) < 1e-6);
}

TEST_CASE("apply_affine gradient matches central differences with h = 1e-3") {
  auto img = random_image(8, 3);
  // Rotation by 10 degrees, scale 0.9, small translation.
  auto theta = placement(0.9, 0.9, 10.0 * std::numbers::pi / 180.0, 0.05, -0.03).to_tensor().to(torch::kFloat64).view({1, 2, 3});
  auto t = theta.clone().requires_grad_(true);
  apply_affine(img, t).mean().backward();
  auto numeric = finite_difference(
      [&](const torch::Tensor& th) { return apply_affine(img, th).mean().item<double>(); }, theta, 1e-3);
  CHECK(relative_error(t.grad(), numeric) < 1e-3);
}

TEST_CASE("apply_affine gradients match central differences at random parameters") {
  // Bilinear sampling is piecewise smooth in theta; a small step keeps the central
  // difference on one smooth piece.
  Rng rng(11);
  auto img = random_image(8, 3);
  for (int trial = 0; trial < 5; ++trial) {
    auto theta = random_theta(rng);
    auto t = theta.clone().requires_grad_(true);
    apply_affine(img, t).mean().backward();
    auto numeric = finite_difference(
        [&](const torch::Tensor& th) { return apply_affine(img, th).mean().item<double>(); }, theta, 1e-6);
    CHECK(relative_error(t.grad(), numeric) < 1e-3);
  }
}

TEST_CASE("full warp loss gradients match central differences") {
  Rng rng(5);
  auto product = random_image(8, 4);
  auto model = random_image(8, 6);
  auto mask = (torch::rand({1, 1, 8, 8}, torch::kFloat64) > 0.5).to(torch::kFloat64);
  for (int trial = 0; trial < 5; ++trial) {
    auto theta = random_theta(rng);
    auto loss = [&](const torch::Tensor& th) {
      return pixel_loss(apply_affine(product, th), model, mask, 3.0).mean();
    };
    auto t = theta.clone().requires_grad_(true);
    loss(t).backward();
    auto numeric = finite_difference([&](const torch::Tensor& th) { return loss(th).item<double>(); }, theta, 1e-6);
    CHECK(relative_error(t.grad(), numeric) < 1e-3);
  }
}

TEST_CASE("pixel_loss examples") {
  torch::manual_seed(0);
  auto x = torch::rand({2, 3, 4, 4});
  auto m = (torch::rand({2, 1, 4, 4}) > 0.5).to(torch::kFloat32);

  SUBCASE("perfect warp gives zero") {
    CHECK(pixel_loss((1 - m) * x, x, m, 3.0).abs().max().item<double>() == 0.0);
  }
  SUBCASE("beta zero is the plain absolute difference") {
    auto w = torch::rand({2, 3, 4, 4});
    auto expected = (w - (1 - m) * x).abs().sum(1);
    CHECK(max_abs_diff(pixel_loss(w, x, m, 0.0), expected) < 1e-6);
  }
  SUBCASE("single pixel, difference 0.5 in the garment, beta 3") {
    auto w = torch::zeros({1, 3, 1, 1});
    auto model = torch::zeros({1, 3, 1, 1});
    model[0][1][0][0] = 0.5;
    auto mask = torch::zeros({1, 1, 1, 1});
    CHECK(pixel_loss(w, model, mask, 3.0).item<double>() == doctest::Approx(2.0).epsilon(1e-12));
  }
  SUBCASE("shape mismatch") {
    CHECK_THROWS(pixel_loss(torch::zeros({2, 3, 4, 5}), x, m, 3.0));
    CHECK_THROWS(pixel_loss(x, x, torch::zeros({2, 1, 4, 5}), 3.0));
  }
  SUBCASE("nonnegative") {
    auto w = torch::rand({2, 3, 4, 4});
    CHECK(pixel_loss(w, x, m, 10.0).min().item<double>() >= 0.0);
  }
}

TEST_CASE("cascade_warp_loss examples") {
  torch::manual_seed(1);
  auto a = torch::rand({4, 4});
  CHECK(cascade_warp_loss(std::vector{a}).item<double>() == doctest::Approx(a.mean().item<double>()));
  CHECK(cascade_warp_loss(std::vector{a, a}).item<double>() == cascade_warp_loss(std::vector{a}).item<double>());

  // B < A on exactly the top half.
  auto A = torch::full({4, 4}, 0.6);
  auto B = torch::full({4, 4}, 0.9);
  B.index_put_({torch::indexing::Slice(0, 2)}, 0.2);
  // Eight pixels at 0.2 and eight at 0.6.
  CHECK(cascade_warp_loss(std::vector{A, B}).item<double>() == doctest::Approx((8 * 0.2 + 8 * 0.6) / 16.0));
  CHECK_THROWS(cascade_warp_loss(std::vector<torch::Tensor>{}));
  CHECK_THROWS(cascade_warp_loss(std::vector{A, torch::zeros({4, 5})}));
}

TEST_CASE("cascade_loss examples") {
  torch::manual_seed(2);
  auto maps1 = torch::rand({1, 1, 4, 4});
  auto theta1 = torch::rand({1, 1, 2, 3});
  CHECK(cascade_loss(theta1, maps1, 0.1).item<double>() == cascade_warp_loss(maps1).item<double>());

  auto maps2 = torch::rand({1, 2, 4, 4});
  auto same = AffineParams::identity().to_tensor().view({1, 1, 2, 3}).repeat({1, 2, 1, 1});
  auto no_reg = cascade_loss(same, maps2, 0.0).item<double>();
  CHECK(cascade_loss(same, maps2, 0.1).item<double>() == no_reg);

  auto apart = same.clone();
  apart[0][1][0][2] += 0.3;
  apart[0][1][1][2] += 0.4;  // ||theta2 - theta1||_F = 0.5
  CHECK(cascade_loss(apart, maps2, 0.1).item<double>() == doctest::Approx(no_reg + 0.025).epsilon(1e-6));
  CHECK_THROWS(cascade_loss(torch::zeros({1, 3, 2, 3}), maps2, 0.1));
}

TEST_CASE("cascade warp loss is non-increasing in the number of maps") {
  torch::manual_seed(3);
  for (int t = 0; t < 100; ++t) {
    auto maps = torch::rand({2, 4, 5, 5}) * 3;
    double prev = std::numeric_limits<double>::infinity();
    for (int j = 1; j <= 4; ++j) {
      const double v = cascade_warp_loss(maps.slice(1, 0, j)).item<double>();
      CHECK(v <= prev);
      prev = v;
    }
  }
}

TEST_CASE("earlier maps weigh at least as much as later ones") {
  const int k = 3, h = 3, w = 3;
  const double pixels = h * w;
  // Map 1 strictly smallest at pixel (1,1): it is the minimum of every prefix.
  auto maps = torch::full({1, k, h, w}, 1.0);
  for (int i = 0; i < k; ++i) maps[0][i].fill_(1.0 + i);
  auto a = maps.clone().requires_grad_(true);
  cascade_loss(torch::zeros({1, k, 2, 3}), a, 0.0).backward();
  const double g_first = a.grad()[0][0][1][1].item<double>();

  // Map k strictly smallest at the same pixel: only the last prefix sees it.
  auto flipped = torch::full({1, k, h, w}, 1.0);
  for (int i = 0; i < k; ++i) flipped[0][i].fill_(1.0 + (k - 1 - i));
  auto b = flipped.clone().requires_grad_(true);
  cascade_loss(torch::zeros({1, k, 2, 3}), b, 0.0).backward();
  const double g_last = b.grad()[0][k - 1][1][1].item<double>();

  CHECK(g_first == doctest::Approx(1.0 / pixels));
  CHECK(g_last == doctest::Approx(1.0 / (k * pixels)));
  CHECK(g_first >= g_last);

  // Same comparison by direct perturbation.
  const double base = cascade_loss(torch::zeros({1, k, 2, 3}), maps, 0.0).item<double>();
  auto bumped = maps.clone();
  bumped[0][0][1][1] += 1e-3;
  const double up_first = cascade_loss(torch::zeros({1, k, 2, 3}), bumped, 0.0).item<double>() - base;
  const double base2 = cascade_loss(torch::zeros({1, k, 2, 3}), flipped, 0.0).item<double>();
  auto bumped2 = flipped.clone();
  bumped2[0][k - 1][1][1] += 1e-3;
  const double up_last = cascade_loss(torch::zeros({1, k, 2, 3}), bumped2, 0.0).item<double>() - base2;
  CHECK(up_first >= up_last);
}

TEST_CASE("losses vanish at perfect reconstruction with coincident parameters") {
  torch::manual_seed(4);
  auto x = torch::rand({2, 3, 6, 6});
  auto m = (torch::rand({2, 1, 6, 6}) > 0.5).to(torch::kFloat32);
  auto target = (1 - m) * x;
  auto warps = torch::stack({target, target}, 1);
  auto maps = pixel_loss_maps(warps, x, m, 3.0);
  auto thetas = torch::rand({2, 1, 2, 3}).repeat({1, 2, 1, 1});
  CHECK(cascade_loss(thetas, maps, 0.1).item<double>() == 0.0);
}

TEST_CASE("two warps separate the two-component garment where one cannot") {
  vto::test::TempDir dir("separation");
  auto corpus = vto::test::make_corpus(dir.path(), 4, 64, true, 21, false);

  // Single-theta grid around the close-up placements the generator uses.
  std::vector<torch::Tensor> grid;
  for (double s = 1.4; s <= 2.0 + 1e-9; s += 0.1)
    for (double a = -15.0; a <= 15.0 + 1e-9; a += 5.0)
      for (double cx = -0.5; cx <= 0.5 + 1e-9; cx += 0.1)
        for (double cy = -0.4; cy <= 0.5 + 1e-9; cy += 0.1)
          grid.push_back(placement(s, s, a * std::numbers::pi / 180.0, cx, cy).to_tensor());

  for (std::int64_t r = 0; r < corpus.size(); ++r) {
    auto product = corpus.products[r];
    auto model = corpus.models[r].unsqueeze(0);
    auto mask = corpus.masks[r].unsqueeze(0);
    auto garment = (1 - mask[0][0]).to(torch::kBool);
    auto in_garment = [&](const torch::Tensor& map) { return map.masked_select(garment).mean().item<double>(); };

    const auto& gt = corpus.theta_gt[static_cast<std::size_t>(r)];
    REQUIRE(gt.size() == 2);
    auto pair_warps = torch::stack({apply_affine(product, gt[0]), apply_affine(product, gt[1])}).unsqueeze(0);
    auto pair_maps = pixel_loss_maps(pair_warps, model, mask, 3.0);
    const double pair = in_garment(std::get<0>(pair_maps[0].min(0)));

    std::vector<torch::Tensor> candidates = grid;
    candidates.push_back(gt[0].to_tensor());
    candidates.push_back(gt[1].to_tensor());
    candidates.push_back((gt[0].to_tensor() + gt[1].to_tensor()) / 2);
    double best_single = std::numeric_limits<double>::infinity();
    for (std::size_t begin = 0; begin < candidates.size(); begin += 256) {
      const auto end = std::min(candidates.size(), begin + 256);
      auto thetas = torch::stack(std::vector<torch::Tensor>(candidates.begin() + begin, candidates.begin() + end));
      const auto n = thetas.size(0);
      auto warps = apply_affine(product.unsqueeze(0).expand({n, 3, 64, 64}), thetas);
      auto maps = pixel_loss(warps, model.expand({n, 3, 64, 64}), mask.expand({n, 1, 64, 64}), 3.0);
      auto per = (maps * garment.to(torch::kFloat32)).sum({1, 2}) / garment.sum().item<double>();
      best_single = std::min(best_single, per.min().item<double>());
    }
    const double eps = std::max(2.0 * pair, 1e-4);
    MESSAGE("record " << r << ": pair " << pair << ", best single " << best_single);
    CHECK(pair < eps);
    CHECK(best_single >= 10.0 * eps);
  }
}

TEST_CASE("untrained predictor emits k identity parameter sets") {
  WarperConfig c;
  c.image_size = 32;
  CHECK(c.k == 2);
  torch::manual_seed(0);
  WarpPredictor p(c);
  auto product = torch::rand({3, 32, 32});
  auto mask = torch::ones({1, 32, 32});
  auto thetas = predict_params(p, product, mask);
  REQUIRE(thetas.size() == 2);
  for (const auto& t : thetas) CHECK((t == AffineParams::identity()));
  CHECK((predict_params(p, product, mask) == thetas));
  CHECK_THROWS(predict_params(p, torch::rand({3, 16, 16}), torch::ones({1, 16, 16})));
  c.k = 0;
  CHECK_THROWS(WarpPredictor(c));
}

TEST_CASE("batch composition is a pure function of seed and step") {
  CHECK(batch_indices(3, 17, 100, 8) == batch_indices(3, 17, 100, 8));
  CHECK(batch_indices(3, 17, 100, 8) != batch_indices(3, 18, 100, 8));
  for (auto i : batch_indices(1, 2, 5, 64)) CHECK((i >= 0 && i < 5));
}

TEST_CASE("warp training resumes exactly") {
  vto::test::TempDir dir("warp_resume");
  auto corpus = vto::test::make_corpus(dir / "corpus", 12, 32, true, 3, false);
  WarpTrainOptions o;
  o.warper.image_size = 32;
  o.warper.width = 8;
  o.batch_size = 4;
  o.seed = 9;
  o.steps = 6;
  auto full = train_warper(corpus, o);

  o.steps = 3;
  o.checkpoint = dir / "half.pt";
  train_warper(corpus, o);
  o.steps = 6;
  o.checkpoint.reset();
  o.resume_from = dir / "half.pt";
  auto resumed = train_warper(corpus, o);

  REQUIRE(resumed.history.size() == 6);
  CHECK(resumed.history.rows == full.history.rows);
  auto a = full.predictor->parameters(), b = resumed.predictor->parameters();
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(torch::equal(a[i], b[i]));
}
