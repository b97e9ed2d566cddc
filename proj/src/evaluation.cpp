#include "vto/evaluation.hpp"

#include "vto/random.hpp"

#include "vto/log.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace vto::eval {

Moments moments(const Eigen::MatrixXd& rows, double ridge) {
  if (rows.rows() < 2) throw std::invalid_argument("moments need at least two rows");
  Moments m;
  m.mean = rows.colwise().mean().transpose();
  const Eigen::MatrixXd centered = rows.rowwise() - m.mean.transpose();
  m.cov = (centered.transpose() * centered) / static_cast<double>(rows.rows() - 1);
  if (ridge > 0.0) m.cov.diagonal().array() += ridge;
  return m;
}

namespace {

void check_covariance(const Eigen::MatrixXd& s, const char* name) {
  if (s.rows() != s.cols()) throw std::invalid_argument(std::string(name) + " is not square");
  const double scale = std::max(1.0, s.cwiseAbs().maxCoeff());
  if ((s - s.transpose()).cwiseAbs().maxCoeff() > 1e-8 * scale) {
    throw std::invalid_argument(std::string(name) + " is not symmetric");
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(s, Eigen::EigenvaluesOnly);
  if (es.eigenvalues().minCoeff() < -1e-6 * scale) {
    throw std::invalid_argument(std::string(name) + " is not positive semidefinite");
  }
}

}  // namespace

Eigen::MatrixXd sqrtm_psd(const Eigen::MatrixXd& sigma) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (sigma + sigma.transpose()));
  const Eigen::VectorXd root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
}

double frechet_distance(const Eigen::VectorXd& mu1, const Eigen::MatrixXd& sigma1,
                        const Eigen::VectorXd& mu2, const Eigen::MatrixXd& sigma2) {
  if (mu1.size() != mu2.size() || sigma1.rows() != mu1.size() || sigma2.rows() != mu2.size()) {
    throw std::invalid_argument("frechet_distance: dimension mismatch");
  }
  check_covariance(sigma1, "sigma1");
  check_covariance(sigma2, "sigma2");
  const Eigen::MatrixXd root1 = sqrtm_psd(sigma1);
  const Eigen::MatrixXd inner = root1 * sigma2 * root1;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (inner + inner.transpose()),
                                                    Eigen::EigenvaluesOnly);
  const double trace_sqrt = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const double d = (mu1 - mu2).squaredNorm() + sigma1.trace() + sigma2.trace() - 2.0 * trace_sqrt;
  if (d < -1e-8) log::warn("frechet_distance: clamping negative value ", d);
  return std::max(0.0, d);
}

Eigen::MatrixXd sqrtm_product(const Eigen::MatrixXd& sigma1, const Eigen::MatrixXd& sigma2) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (sigma1 + sigma1.transpose()));
  const Eigen::VectorXd lambda = es.eigenvalues().cwiseMax(0.0);
  const double cutoff = 1e-12 * std::max(1.0, lambda.maxCoeff());
  Eigen::VectorXd root = lambda.cwiseSqrt();
  Eigen::VectorXd inv_root(root.size());
  for (Eigen::Index i = 0; i < root.size(); ++i) inv_root[i] = lambda[i] > cutoff ? 1.0 / root[i] : 0.0;
  const Eigen::MatrixXd& v = es.eigenvectors();
  const Eigen::MatrixXd root1 = v * root.asDiagonal() * v.transpose();
  const Eigen::MatrixXd inv_root1 = v * inv_root.asDiagonal() * v.transpose();
  return root1 * sqrtm_psd(root1 * sigma2 * root1) * inv_root1;
}

namespace {

std::vector<Eigen::Index> canonical_order(const Eigen::MatrixXd& rows) {
  std::vector<Eigen::Index> order(static_cast<std::size_t>(rows.rows()));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    for (Eigen::Index c = 0; c < rows.cols(); ++c) {
      if (rows(a, c) != rows(b, c)) return rows(a, c) < rows(b, c);
    }
    return false;
  });
  return order;
}

Eigen::MatrixXd subsample(const Eigen::MatrixXd& rows, Eigen::Index n, std::uint64_t seed) {
  auto order = canonical_order(rows);
  Rng rng(seed);
  rng.shuffle(order);
  Eigen::MatrixXd out(n, rows.cols());
  for (Eigen::Index i = 0; i < n; ++i) out.row(i) = rows.row(order[static_cast<std::size_t>(i)]);
  return out;
}

}  // namespace

double fid_at_n(const FeatureSet& a, const FeatureSet& b, Eigen::Index n, std::uint64_t seed) {
  if (a.dim() != b.dim()) throw std::invalid_argument("fid_at_n: feature dimensions differ");
  if (n < 2 || n > std::min(a.size(), b.size())) {
    throw std::invalid_argument("fid_at_n: n must lie in [2, min(|a|,|b|)]");
  }
  double ridge = 0.0;
  if (n <= a.dim()) {
    log::warn("fid_at_n: n=", n, " does not exceed feature dimension ", a.dim(), "; using ridge 1e-6");
    ridge = 1e-6;
  }
  const auto ma = moments(subsample(a.features, n, derive_seed(seed, 0)), ridge);
  const auto mb = moments(subsample(b.features, n, derive_seed(seed, 1)), ridge);
  return frechet_distance(ma.mean, ma.cov, mb.mean, mb.cov);
}

std::vector<Eigen::Index> default_batch_sizes(Eigen::Index n, int count) {
  std::vector<Eigen::Index> sizes;
  const double lo = static_cast<double>(n) / count;
  for (int i = 0; i < count; ++i) {
    const double v = count == 1 ? static_cast<double>(n) : lo + (n - lo) * i / (count - 1);
    sizes.push_back(static_cast<Eigen::Index>(std::llround(v)));
  }
  return sizes;
}

double fid_inf(const FeatureSet& a, const FeatureSet& b, const std::vector<Eigen::Index>& batch_sizes,
               std::uint64_t seed) {
  const auto limit = std::min(a.size(), b.size());
  std::vector<double> xs, ys;
  for (auto n : batch_sizes) {
    if (n < 2 || n > limit) continue;
    if (std::find(xs.begin(), xs.end(), 1.0 / static_cast<double>(n)) != xs.end()) continue;
    xs.push_back(1.0 / static_cast<double>(n));
    ys.push_back(fid_at_n(a, b, n, derive_seed(seed, static_cast<std::uint64_t>(n))));
  }
  if (xs.size() < 2) throw std::invalid_argument("fid_inf: fewer than two usable batch sizes");
  return ols_intercept(xs, ys);
}

double ols_intercept(const std::vector<double>& xs, const std::vector<double>& ys) {
  if (xs.size() != ys.size() || xs.size() < 2) throw std::invalid_argument("ols_intercept: need two or more points");
  const double k = static_cast<double>(xs.size());
  const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / k;
  const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / k;
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxy += (xs[i] - mx) * (ys[i] - my);
    sxx += (xs[i] - mx) * (xs[i] - mx);
  }
  if (sxx == 0.0) throw std::invalid_argument("ols_intercept: x values are all equal");
  return my - (sxy / sxx) * mx;
}

double l1_error(const torch::Tensor& generated, const torch::Tensor& target) {
  if (generated.sizes() != target.sizes()) throw std::invalid_argument("l1_error: shape mismatch");
  return (generated - target).abs().mean().item<double>();
}

double masked_l1_error(const torch::Tensor& generated, const torch::Tensor& target,
                       const torch::Tensor& region) {
  if (generated.sizes() != target.sizes()) throw std::invalid_argument("masked_l1_error: shape mismatch");
  const auto channels = static_cast<double>(generated.size(-3));
  const double count = region.sum().item<double>() * channels;
  if (count == 0.0) return 0.0;
  return ((generated - target).abs() * region).sum().item<double>() / count;
}

FeatureSet FeatureExtractor::features(const torch::Tensor& images, std::int64_t batch_size) const {
  torch::NoGradGuard no_grad;
  std::vector<torch::Tensor> parts;
  for (std::int64_t begin = 0; begin < images.size(0); begin += batch_size) {
    parts.push_back(pooled(images.slice(0, begin, std::min(begin + batch_size, images.size(0)))));
  }
  auto all = torch::cat(parts).to(torch::kFloat64).contiguous();
  FeatureSet fs;
  fs.extractor_id = id();
  fs.features.resize(all.size(0), all.size(1));
  auto acc = all.accessor<double, 2>();
  for (std::int64_t i = 0; i < all.size(0); ++i) {
    for (std::int64_t j = 0; j < all.size(1); ++j) fs.features(i, j) = acc[i][j];
  }
  return fs;
}

RandomConvExtractor::RandomConvExtractor(std::uint64_t seed, std::vector<int> widths)
    : seed_(seed), widths_(std::move(widths)) {
  Rng rng(derive_seed(seed, 0xFEA7));
  int in = 3;
  for (int out : widths_) {
    // He-scaled normal weights via Box-Muller.
    const double stddev = std::sqrt(2.0 / (in * 9.0));
    auto w = torch::empty({out, in, 3, 3}, torch::kFloat32);
    float* p = w.data_ptr<float>();
    for (std::int64_t i = 0; i < w.numel(); ++i) {
      const double u1 = std::max(rng.uniform(), 1e-300);
      const double u2 = rng.uniform();
      p[i] = static_cast<float>(stddev * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2));
    }
    weights_.push_back(w);
    biases_.push_back(torch::zeros({out}));
    in = out;
  }
}

std::string RandomConvExtractor::id() const {
  std::string s = "random-conv-" + std::to_string(seed_);
  for (int w : widths_) s += "-" + std::to_string(w);
  return s;
}

std::vector<torch::Tensor> RandomConvExtractor::feature_maps(const torch::Tensor& images) const {
  std::vector<torch::Tensor> maps;
  auto x = (images - 0.5) * 2.0;
  for (std::size_t i = 0; i < weights_.size(); ++i) {
    x = torch::relu(torch::conv2d(x, weights_[i], biases_[i], /*stride=*/2, /*padding=*/1));
    maps.push_back(x);
  }
  return maps;
}

torch::Tensor RandomConvExtractor::pooled(const torch::Tensor& images) const {
  return feature_maps(images).back().mean({2, 3});
}

double perceptual_error(const torch::Tensor& generated, const torch::Tensor& target,
                        const FeatureExtractor& extractor) {
  torch::NoGradGuard no_grad;
  auto a = generated.dim() == 3 ? generated.unsqueeze(0) : generated;
  auto b = target.dim() == 3 ? target.unsqueeze(0) : target;
  if (a.sizes() != b.sizes()) throw std::invalid_argument("perceptual_error: shape mismatch");
  auto fa = extractor.feature_maps(a);
  auto fb = extractor.feature_maps(b);
  double total = 0.0;
  for (std::size_t i = 0; i < fa.size(); ++i) total += (fa[i] - fb[i]).pow(2).mean().item<double>();
  return total / static_cast<double>(fa.size());
}

}  // namespace vto::eval
