#include "vto/image.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <memory>
#include <stdexcept>

namespace vto {

std::size_t BinaryGrid::count() const {
  std::size_t n = 0;
  for (auto v : data) n += v != 0;
  return n;
}

namespace {

std::vector<std::uint8_t> read_png_bytes(const std::filesystem::path& path, png_uint_32 format,
                                         int& height, int& width) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    throw std::runtime_error("cannot read PNG " + path.string() + ": " + image.message);
  }
  image.format = format;
  std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
    png_image_free(&image);
    throw std::runtime_error("cannot decode PNG " + path.string() + ": " + image.message);
  }
  height = static_cast<int>(image.height);
  width = static_cast<int>(image.width);
  return buffer;
}

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};

}  // namespace

torch::Tensor read_png_rgb(const std::filesystem::path& path) {
  int h = 0, w = 0;
  auto bytes = read_png_bytes(path, PNG_FORMAT_RGB, h, w);
  auto t = torch::from_blob(bytes.data(), {h, w, 3}, torch::kUInt8).clone();
  return t.permute({2, 0, 1}).contiguous().to(torch::kFloat32).div_(255.0);
}

torch::Tensor read_png_gray(const std::filesystem::path& path) {
  int h = 0, w = 0;
  auto bytes = read_png_bytes(path, PNG_FORMAT_GRAY, h, w);
  auto t = torch::from_blob(bytes.data(), {1, h, w}, torch::kUInt8).clone();
  return t.to(torch::kFloat32).div_(255.0);
}

void write_png(const std::filesystem::path& path, const torch::Tensor& image,
               const std::map<std::string, std::string>& text) {
  TORCH_CHECK(image.dim() == 3 && (image.size(0) == 1 || image.size(0) == 3),
              "write_png expects [1,H,W] or [3,H,W]");
  const int channels = static_cast<int>(image.size(0));
  const int h = static_cast<int>(image.size(1));
  const int w = static_cast<int>(image.size(2));
  auto bytes = image.detach()
                   .to(torch::kCPU, torch::kFloat32)
                   .clamp(0.0, 1.0)
                   .mul(255.0)
                   .round()
                   .to(torch::kUInt8)
                   .permute({1, 2, 0})
                   .contiguous();

  std::unique_ptr<std::FILE, FileCloser> file(std::fopen(path.c_str(), "wb"));
  if (!file) throw std::runtime_error("cannot open " + path.string() + " for writing");

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("libpng initialization failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("libpng failed writing " + path.string());
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
               channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);

  std::vector<png_text> chunks;
  std::vector<std::string> storage;
  storage.reserve(text.size() * 2);
  for (const auto& [key, value] : text) {
    storage.push_back(key);
    storage.push_back(value);
    png_text chunk{};
    chunk.compression = PNG_TEXT_COMPRESSION_NONE;
    chunk.key = storage[storage.size() - 2].data();
    chunk.text = storage.back().data();
    chunks.push_back(chunk);
  }
  if (!chunks.empty()) png_set_text(png, info, chunks.data(), static_cast<int>(chunks.size()));

  png_write_info(png, info);
  const auto* base = bytes.data_ptr<std::uint8_t>();
  for (int y = 0; y < h; ++y) {
    png_write_row(png, base + static_cast<std::size_t>(y) * w * channels);
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

torch::Tensor quantize8(const torch::Tensor& image) {
  return image.clamp(0.0, 1.0).mul(255.0).round().div(255.0);
}

GrayGrid luma8(const torch::Tensor& rgb) {
  TORCH_CHECK(rgb.dim() == 3 && rgb.size(0) == 3, "luma8 expects [3,H,W]");
  auto c = rgb.detach().to(torch::kCPU, torch::kFloat64).contiguous();
  const int h = static_cast<int>(c.size(1));
  const int w = static_cast<int>(c.size(2));
  GrayGrid out(h, w);
  const double* r = c.data_ptr<double>();
  const double* g = r + static_cast<std::size_t>(h) * w;
  const double* b = g + static_cast<std::size_t>(h) * w;
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    const double y = 255.0 * (0.299 * r[i] + 0.587 * g[i] + 0.114 * b[i]);
    out.data[i] = std::round(std::clamp(y, 0.0, 255.0));
  }
  return out;
}

torch::Tensor to_grayscale_rgb(const torch::Tensor& rgb) {
  auto l = luma8(rgb);
  auto t = torch::from_blob(l.data.data(), {1, l.height, l.width}, torch::kFloat64)
               .to(torch::kFloat32)
               .div(255.0);
  return t.expand({3, l.height, l.width}).contiguous();
}

BinaryGrid to_binary_grid(const torch::Tensor& single_channel, double threshold) {
  auto t = single_channel.detach().to(torch::kCPU, torch::kFloat32).contiguous();
  TORCH_CHECK(t.dim() == 3 && t.size(0) == 1, "expected [1,H,W]");
  BinaryGrid g(static_cast<int>(t.size(1)), static_cast<int>(t.size(2)));
  const float* p = t.data_ptr<float>();
  for (std::size_t i = 0; i < g.data.size(); ++i) g.data[i] = p[i] >= threshold ? 1 : 0;
  return g;
}

torch::Tensor to_tensor(const BinaryGrid& grid) {
  auto t = torch::empty({1, grid.height, grid.width}, torch::kFloat32);
  float* p = t.data_ptr<float>();
  for (std::size_t i = 0; i < grid.data.size(); ++i) p[i] = grid.data[i] ? 1.0F : 0.0F;
  return t;
}

}  // namespace vto

namespace vto {

std::pair<int, int> png_dimensions(const std::filesystem::path& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    throw std::runtime_error("cannot read PNG " + path.string() + ": " + image.message);
  }
  std::pair<int, int> hw{static_cast<int>(image.height), static_cast<int>(image.width)};
  png_image_free(&image);
  return hw;
}

}  // namespace vto
