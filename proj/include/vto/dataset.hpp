#pragma once

#include "vto/affine.hpp"
#include "vto/contour.hpp"

#include <torch/torch.h>

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace vto {

enum class GarmentType { top = 0, bottoms = 1, outerwear = 2, all_body = 3 };

inline constexpr std::array<GarmentType, 4> kGarmentTypes = {
    GarmentType::top, GarmentType::bottoms, GarmentType::outerwear, GarmentType::all_body};
inline constexpr int kNumGarmentTypes = 4;

std::string_view to_string(GarmentType t);
/// Throws DataError("unknown garment type ...") for anything outside the four tags.
GarmentType parse_garment_type(std::string_view tag);

struct PairRecord {
  std::string id;
  std::filesystem::path product;  // absolute after loading
  std::filesystem::path model;
  std::filesystem::path mask;
  GarmentType type = GarmentType::top;
  std::vector<AffineParams> theta_gt;         // generator ground truth, one per garment part
  std::optional<std::filesystem::path> figure;  // model without the garment (synthetic only)
};

struct Manifest {
  std::vector<PairRecord> records;
  int height = 0;
  int width = 0;
  std::string version = "1";
  std::filesystem::path root;  // directory relative paths resolve against
};

/// Parses a JSON-lines manifest and validates every record.
Manifest load_manifest(const std::filesystem::path& path);
/// Writes `m` as JSON lines with paths relative to the manifest directory.
void write_manifest(const Manifest& m, const std::filesystem::path& path);

/// Deterministic disjoint partition with |train| = round(ratio * N).
std::pair<Manifest, Manifest> split_records(const Manifest& m, double ratio, std::uint64_t seed);

struct SyntheticOptions {
  int count = 64;
  int image_size = 128;
  bool two_component = false;
  std::uint64_t seed = 0;
};

/// Renders product/model/mask/figure PNGs plus `manifest.jsonl` into `out_dir`.
Manifest generate_synthetic_corpus(const std::filesystem::path& out_dir,
                                   const SyntheticOptions& options);

/// Garment alpha of a product image: pixels that are not pure white background.
torch::Tensor product_alpha(const torch::Tensor& product);

struct Composite {
  torch::Tensor model;  // [3,H,W]
  torch::Tensor mask;   // [1,H,W], 0 on the pasted garment, 1 elsewhere
};

/// Pastes `product` onto `figure`. One parameter set pastes the whole garment;
/// two paste the left and right halves separately (open garment).
Composite composite_garment(const torch::Tensor& figure, const torch::Tensor& product,
                            const std::vector<AffineParams>& thetas);

/// Number of 8-connected components of the garment region (mask == 0).
int garment_components(const torch::Tensor& mask);

/// Records loaded into memory, in manifest order.
struct CorpusTensors {
  std::vector<std::string> ids;
  std::vector<GarmentType> types;
  torch::Tensor products;  // [N,3,H,W]
  torch::Tensor models;    // [N,3,H,W]
  torch::Tensor masks;     // [N,1,H,W], binary
  torch::Tensor contours;  // [N,1,H,W], binary; empty unless requested
  torch::Tensor figures;   // [N,3,H,W]; empty unless every record has one
  std::vector<std::vector<AffineParams>> theta_gt;

  std::int64_t size() const { return static_cast<std::int64_t>(ids.size()); }
  std::optional<std::int64_t> find(const std::string& id) const;
};

CorpusTensors load_corpus(const Manifest& m, bool with_contours,
                          const contour::ContourParams& params = {});

}  // namespace vto
