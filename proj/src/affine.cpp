#include "vto/affine.hpp"

#include <cmath>

namespace vto {

bool AffineParams::is_finite() const {
  for (double v : m) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

torch::Tensor AffineParams::to_tensor() const {
  auto t = torch::empty({2, 3}, torch::kFloat32);
  auto a = t.accessor<float, 2>();
  for (int i = 0; i < 6; ++i) a[i / 3][i % 3] = static_cast<float>(m[i]);
  return t;
}

AffineParams AffineParams::from_tensor(const torch::Tensor& t) {
  auto c = t.detach().to(torch::kCPU, torch::kFloat64).reshape({6}).contiguous();
  AffineParams p;
  for (int i = 0; i < 6; ++i) p.m[i] = c[i].item<double>();
  return p;
}

double frobenius_sq(const AffineParams& a, const AffineParams& b) {
  double s = 0.0;
  for (int i = 0; i < 6; ++i) s += (a.m[i] - b.m[i]) * (a.m[i] - b.m[i]);
  return s;
}

AffineParams placement(double scale_x, double scale_y, double angle, double cx, double cy) {
  // Forward map: u = R S v + c, so the sampling map is v = S^-1 R^T (u - c).
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  const double a00 = c / scale_x, a01 = s / scale_x;
  const double a10 = -s / scale_y, a11 = c / scale_y;
  return AffineParams{{a00, a01, -(a00 * cx + a01 * cy), a10, a11, -(a10 * cx + a11 * cy)}};
}

}  // namespace vto
