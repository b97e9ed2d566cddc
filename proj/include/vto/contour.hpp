#pragma once

#include "vto/image.hpp"

#include <vector>

namespace vto::contour {

struct ContourParams {
  int mean_kernel = 5;   // box filter window
  int block_size = 11;   // Gaussian adaptive-threshold window, odd
  double offset = 2.0;   // subtracted from the local mean, 0..255 scale

  void validate() const;
};

struct Point {
  int y = 0;
  int x = 0;
  bool operator==(const Point&) const = default;
};

/// One closed 8-connected border found by topological border following.
struct Border {
  std::vector<Point> points;
  bool is_hole = false;
  int parent = -1;  // index into the border list, -1 for the image frame
};

/// Binary contour rendering (1 = contour pixel) of a product image.
using ContourImage = BinaryGrid;

GrayGrid mean_filter(const GrayGrid& in, int kernel);
/// Gaussian-weighted local mean over a block x block window (replicated border).
GrayGrid gaussian_local_mean(const GrayGrid& in, int block);
/// Foreground (1) where a pixel is at least `offset` darker than its Gaussian local mean.
BinaryGrid adaptive_threshold(const GrayGrid& in, int block, double offset);

/// Suzuki-Abe border following; borders are returned in raster discovery order.
std::vector<Border> find_borders(const BinaryGrid& binary);
BinaryGrid rasterize(const std::vector<Border>& borders, int height, int width);

/// Grayscale, mean filter, adaptive threshold, border following, rasterized borders.
ContourImage extract_contour(const torch::Tensor& product_rgb, const ContourParams& params = {});

/// Cached variant: reads `<product>.contour.png` when present, otherwise computes and writes it.
ContourImage extract_contour_cached(const std::filesystem::path& product_path,
                                    const ContourParams& params = {});

}  // namespace vto::contour
