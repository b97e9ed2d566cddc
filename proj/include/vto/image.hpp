#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace vto {

inline constexpr const char* kVersion = "0.1.0";

/// Row-major single-channel grid of 0/1 values.
struct BinaryGrid {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> data;

  BinaryGrid() = default;
  BinaryGrid(int h, int w) : height(h), width(w), data(static_cast<std::size_t>(h) * w, 0) {}

  std::uint8_t& at(int y, int x) { return data[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int y, int x) const { return data[static_cast<std::size_t>(y) * width + x]; }
  bool inside(int y, int x) const { return y >= 0 && x >= 0 && y < height && x < width; }
  std::size_t count() const;

  bool operator==(const BinaryGrid&) const = default;
};

/// Row-major single-channel float grid (intensities on the 0..255 scale).
struct GrayGrid {
  int height = 0;
  int width = 0;
  std::vector<double> data;

  GrayGrid() = default;
  GrayGrid(int h, int w, double fill = 0.0)
      : height(h), width(w), data(static_cast<std::size_t>(h) * w, fill) {}

  double& at(int y, int x) { return data[static_cast<std::size_t>(y) * width + x]; }
  double at(int y, int x) const { return data[static_cast<std::size_t>(y) * width + x]; }
};

// Images are float tensors in [0,1]: RGB as [3,H,W], masks and contours as [1,H,W].

/// Reads a PNG as [3,H,W] RGB (grayscale files are expanded).
torch::Tensor read_png_rgb(const std::filesystem::path& path);
/// Reads a PNG as [1,H,W] luminance.
torch::Tensor read_png_gray(const std::filesystem::path& path);
/// Writes a [1,H,W] or [3,H,W] tensor; values are clamped and rounded to 8 bits.
void write_png(const std::filesystem::path& path, const torch::Tensor& image,
               const std::map<std::string, std::string>& text = {});

/// Rounds to the 8-bit lattice k/255, the same values a PNG round trip yields.
torch::Tensor quantize8(const torch::Tensor& image);

/// Rec.601 luma rounded to 8 bits, on the 0..255 scale.
GrayGrid luma8(const torch::Tensor& rgb);
/// Three-channel grayscale image with the same luma as `rgb`.
torch::Tensor to_grayscale_rgb(const torch::Tensor& rgb);

BinaryGrid to_binary_grid(const torch::Tensor& single_channel, double threshold = 0.5);
torch::Tensor to_tensor(const BinaryGrid& grid);

}  // namespace vto

namespace vto {
/// (height, width) read from the PNG header only.
std::pair<int, int> png_dimensions(const std::filesystem::path& path);
}  // namespace vto
