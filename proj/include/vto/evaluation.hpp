#pragma once

#include <Eigen/Dense>
#include <torch/torch.h>

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

namespace vto::eval {

/// N x d feature rows from one extractor.
struct FeatureSet {
  Eigen::MatrixXd features;
  std::string extractor_id;

  Eigen::Index size() const { return features.rows(); }
  Eigen::Index dim() const { return features.cols(); }
};

struct Moments {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;  // unbiased (N-1) estimate
};

Moments moments(const Eigen::MatrixXd& rows, double ridge = 0.0);

/// ||mu1-mu2||^2 + tr(S1 + S2 - 2 (S1 S2)^{1/2}). The trace of the square root is
/// taken through the symmetric product S1^{1/2} S2 S1^{1/2}, eigenvalues clamped at 0.
double frechet_distance(const Eigen::VectorXd& mu1, const Eigen::MatrixXd& sigma1,
                        const Eigen::VectorXd& mu2, const Eigen::MatrixXd& sigma2);

/// (S1 S2)^{1/2} as a matrix, S1^{1/2} (S1^{1/2} S2 S1^{1/2})^{1/2} S1^{-1/2}.
Eigen::MatrixXd sqrtm_product(const Eigen::MatrixXd& sigma1, const Eigen::MatrixXd& sigma2);

/// Symmetric PSD square root with negative eigenvalues clamped to zero.
Eigen::MatrixXd sqrtm_psd(const Eigen::MatrixXd& sigma);

/// Frechet distance between moments of n-row subsamples of a and b. Rows are put in
/// canonical (lexicographic) order before the seeded shuffle, so the result does not
/// depend on input row order.
double fid_at_n(const FeatureSet& a, const FeatureSet& b, Eigen::Index n, std::uint64_t seed);

/// `count` evenly spaced sizes from n/count to n.
std::vector<Eigen::Index> default_batch_sizes(Eigen::Index n, int count = 8);

/// Intercept of the least-squares line through (1/n, fid_at_n) over the batch sizes.
double fid_inf(const FeatureSet& a, const FeatureSet& b, const std::vector<Eigen::Index>& batch_sizes,
               std::uint64_t seed);

/// Intercept of the least-squares line through (xs, ys).
double ols_intercept(const std::vector<double>& xs, const std::vector<double>& ys);

/// Mean absolute difference.
double l1_error(const torch::Tensor& generated, const torch::Tensor& target);
/// Mean absolute difference over pixels where `region` is 1 (region [B,1,H,W] or [1,H,W]).
double masked_l1_error(const torch::Tensor& generated, const torch::Tensor& target,
                       const torch::Tensor& region);

/// Maps image batches [B,3,H,W] in [0,1] to feature maps and pooled feature rows.
class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  virtual std::string id() const = 0;
  /// Differentiable activations at the designated layers.
  virtual std::vector<torch::Tensor> feature_maps(const torch::Tensor& images) const = 0;
  /// [B,d] pooled descriptors.
  virtual torch::Tensor pooled(const torch::Tensor& images) const = 0;

  FeatureSet features(const torch::Tensor& images, std::int64_t batch_size = 64) const;
};

/// Fixed random-weight conv stack (3x3 stride-2 convolutions with ReLU); weights are
/// drawn from a seeded generator independent of torch's global RNG.
class RandomConvExtractor final : public FeatureExtractor {
 public:
  explicit RandomConvExtractor(std::uint64_t seed = 7, std::vector<int> widths = {16, 32, 64});

  std::string id() const override;
  std::vector<torch::Tensor> feature_maps(const torch::Tensor& images) const override;
  torch::Tensor pooled(const torch::Tensor& images) const override;

 private:
  std::uint64_t seed_;
  std::vector<int> widths_;
  std::vector<torch::Tensor> weights_;
  std::vector<torch::Tensor> biases_;
};

/// Mean over layers of the mean squared feature difference.
double perceptual_error(const torch::Tensor& generated, const torch::Tensor& target,
                        const FeatureExtractor& extractor);

}  // namespace vto::eval
