#pragma once

#include <torch/torch.h>

#include <array>

namespace vto {

/// 2x3 affine map in normalized coordinates ([-1,1] across the image), taking
/// output-image positions to source-image positions (inverse mapping).
struct AffineParams {
  std::array<double, 6> m{1.0, 0.0, 0.0, 0.0, 1.0, 0.0};

  static AffineParams identity() { return {}; }
  /// Source position for output position (x, y).
  std::array<double, 2> apply(double x, double y) const {
    return {m[0] * x + m[1] * y + m[2], m[3] * x + m[4] * y + m[5]};
  }
  bool is_finite() const;
  /// [2,3] float tensor.
  torch::Tensor to_tensor() const;
  static AffineParams from_tensor(const torch::Tensor& t);

  bool operator==(const AffineParams&) const = default;
};

/// Squared Frobenius distance between two parameter sets.
double frobenius_sq(const AffineParams& a, const AffineParams& b);

/// Parameters placing a source image at `scale` (per axis), rotated by `angle`
/// radians and centred at (cx, cy) in the output image.
AffineParams placement(double scale_x, double scale_y, double angle, double cx, double cy);

}  // namespace vto
