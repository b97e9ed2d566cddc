#include "vto/contour.hpp"

#include "vto/errors.hpp"

#include <array>
#include <cmath>
#include <cstdlib>

namespace vto::contour {

void ContourParams::validate() const {
  if (mean_kernel < 1) throw ConfigError("contour.mean_kernel must be >= 1");
  if (block_size < 3 || block_size % 2 == 0) {
    throw ConfigError("contour.block_size must be odd and >= 3");
  }
}

namespace {

int clampi(int v, int lo, int hi) { return v < lo ? lo : (v > hi ? hi : v); }

// Separable correlation with replicated borders; `taps` has odd length.
GrayGrid separable_filter(const GrayGrid& in, const std::vector<double>& taps) {
  const int r = static_cast<int>(taps.size()) / 2;
  GrayGrid tmp(in.height, in.width);
  for (int y = 0; y < in.height; ++y) {
    for (int x = 0; x < in.width; ++x) {
      double acc = 0.0;
      for (int k = -r; k <= r; ++k) acc += taps[k + r] * in.at(y, clampi(x + k, 0, in.width - 1));
      tmp.at(y, x) = acc;
    }
  }
  GrayGrid out(in.height, in.width);
  for (int y = 0; y < in.height; ++y) {
    for (int x = 0; x < in.width; ++x) {
      double acc = 0.0;
      for (int k = -r; k <= r; ++k) acc += taps[k + r] * tmp.at(clampi(y + k, 0, in.height - 1), x);
      out.at(y, x) = acc;
    }
  }
  return out;
}

// Neighbour offsets, counter-clockwise on screen starting East.
constexpr std::array<int, 8> kDy = {0, -1, -1, -1, 0, 1, 1, 1};
constexpr std::array<int, 8> kDx = {1, 1, 0, -1, -1, -1, 0, 1};

int direction_of(int dy, int dx) {
  for (int d = 0; d < 8; ++d) {
    if (kDy[d] == dy && kDx[d] == dx) return d;
  }
  return -1;
}

}  // namespace

GrayGrid mean_filter(const GrayGrid& in, int kernel) {
  if (kernel < 1) throw ConfigError("mean filter kernel must be >= 1");
  if (kernel == 1) return in;
  // Even windows are anchored like an odd window of size kernel+1 with a zero last tap.
  const int len = kernel % 2 == 1 ? kernel : kernel + 1;
  std::vector<double> taps(len, 1.0 / kernel);
  if (len != kernel) taps.back() = 0.0;
  return separable_filter(in, taps);
}

GrayGrid gaussian_local_mean(const GrayGrid& in, int block) {
  const double sigma = 0.3 * ((block - 1) * 0.5 - 1.0) + 0.8;
  std::vector<double> taps(block);
  const int r = block / 2;
  double sum = 0.0;
  for (int k = -r; k <= r; ++k) {
    taps[k + r] = std::exp(-(k * k) / (2.0 * sigma * sigma));
    sum += taps[k + r];
  }
  for (auto& t : taps) t /= sum;
  return separable_filter(in, taps);
}

BinaryGrid adaptive_threshold(const GrayGrid& in, int block, double offset) {
  auto mean = gaussian_local_mean(in, block);
  BinaryGrid out(in.height, in.width);
  for (std::size_t i = 0; i < in.data.size(); ++i) {
    out.data[i] = (in.data[i] - mean.data[i]) <= -offset ? 1 : 0;
  }
  return out;
}

std::vector<Border> find_borders(const BinaryGrid& binary) {
  const int h = binary.height + 2;
  const int w = binary.width + 2;
  // Zero frame around the image; labels are NBD values (negative = right edge seen).
  std::vector<int> f(static_cast<std::size_t>(h) * w, 0);
  auto px = [&](int y, int x) -> int& { return f[static_cast<std::size_t>(y) * w + x]; };
  for (int y = 0; y < binary.height; ++y) {
    for (int x = 0; x < binary.width; ++x) px(y + 1, x + 1) = binary.at(y, x) ? 1 : 0;
  }

  std::vector<Border> borders;
  // Border ids start at 2; id 1 is the frame (a hole border with no parent).
  std::vector<bool> id_is_hole = {false, true};
  std::vector<int> id_parent = {-1, -1};
  int nbd = 1;

  for (int i = 1; i < h - 1; ++i) {
    int lnbd = 1;
    for (int j = 1; j < w - 1; ++j) {
      const int fij = px(i, j);
      bool start = false;
      bool hole = false;
      int i2 = 0, j2 = 0;
      if (fij == 1 && px(i, j - 1) == 0) {
        start = true;
        i2 = i;
        j2 = j - 1;
      } else if (fij >= 1 && px(i, j + 1) == 0) {
        start = true;
        hole = true;
        i2 = i;
        j2 = j + 1;
        if (fij > 1) lnbd = fij;
      }

      if (start) {
        ++nbd;
        const bool prev_hole = id_is_hole[lnbd];
        const int parent_id = (hole == prev_hole) ? id_parent[lnbd] : lnbd;
        id_is_hole.push_back(hole);
        id_parent.push_back(parent_id);

        Border border;
        border.is_hole = hole;
        border.parent = parent_id >= 2 ? parent_id - 2 : -1;

        // Clockwise search around (i, j) from (i2, j2) for the first nonzero pixel.
        const int d0 = direction_of(i2 - i, j2 - j);
        int i1 = -1, j1 = -1;
        for (int k = 0; k < 8; ++k) {
          const int d = ((d0 - k) % 8 + 8) % 8;
          if (px(i + kDy[d], j + kDx[d]) != 0) {
            i1 = i + kDy[d];
            j1 = j + kDx[d];
            break;
          }
        }
        if (i1 < 0) {
          px(i, j) = -nbd;
          border.points.push_back({i - 1, j - 1});
        } else {
          i2 = i1;
          j2 = j1;
          int i3 = i, j3 = j;
          while (true) {
            border.points.push_back({i3 - 1, j3 - 1});
            // Counter-clockwise search around (i3, j3) starting after (i2, j2).
            const int dprev = direction_of(i2 - i3, j2 - j3);
            bool east_zero_examined = false;
            int i4 = -1, j4 = -1;
            for (int k = 1; k <= 8; ++k) {
              const int d = (dprev + k) % 8;
              const int yy = i3 + kDy[d];
              const int xx = j3 + kDx[d];
              if (px(yy, xx) != 0) {
                i4 = yy;
                j4 = xx;
                break;
              }
              if (d == 0) east_zero_examined = true;
            }
            if (east_zero_examined) {
              px(i3, j3) = -nbd;
            } else if (px(i3, j3) == 1) {
              px(i3, j3) = nbd;
            }
            if (i4 == i && j4 == j && i3 == i1 && j3 == j1) break;
            i2 = i3;
            j2 = j3;
            i3 = i4;
            j3 = j4;
          }
        }
        borders.push_back(std::move(border));
      }

      const int after = px(i, j);
      if (after != 0 && after != 1) lnbd = std::abs(after);
    }
  }
  return borders;
}

BinaryGrid rasterize(const std::vector<Border>& borders, int height, int width) {
  BinaryGrid out(height, width);
  for (const auto& b : borders) {
    for (const auto& p : b.points) out.at(p.y, p.x) = 1;
  }
  return out;
}

ContourImage extract_contour(const torch::Tensor& product_rgb, const ContourParams& params) {
  params.validate();
  auto gray = luma8(product_rgb);
  auto smooth = mean_filter(gray, params.mean_kernel);
  auto binary = adaptive_threshold(smooth, params.block_size, params.offset);
  return rasterize(find_borders(binary), binary.height, binary.width);
}

ContourImage extract_contour_cached(const std::filesystem::path& product_path,
                                    const ContourParams& params) {
  auto cache = product_path;
  cache.replace_extension(".contour.png");
  if (std::filesystem::exists(cache)) return to_binary_grid(read_png_gray(cache));
  auto c = extract_contour(read_png_rgb(product_path), params);
  write_png(cache, to_tensor(c), {{"Software", std::string("vto ") + kVersion}});
  return c;
}

}  // namespace vto::contour
