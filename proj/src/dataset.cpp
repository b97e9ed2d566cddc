#include "vto/dataset.hpp"

#include "vto/errors.hpp"
#include "vto/image.hpp"
#include "vto/random.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <unordered_set>

namespace vto {

std::string_view to_string(GarmentType t) {
  switch (t) {
    case GarmentType::top: return "top";
    case GarmentType::bottoms: return "bottoms";
    case GarmentType::outerwear: return "outerwear";
    case GarmentType::all_body: return "all_body";
  }
  return "top";
}

GarmentType parse_garment_type(std::string_view tag) {
  for (auto t : kGarmentTypes) {
    if (to_string(t) == tag) return t;
  }
  throw DataError("unknown garment type \"" + std::string(tag) + "\"");
}

namespace {

std::filesystem::path resolve(const std::filesystem::path& root, const std::string& rel) {
  std::filesystem::path p(rel);
  return p.is_absolute() ? p : root / p;
}

std::string relative_to(const std::filesystem::path& p, const std::filesystem::path& root) {
  auto rel = std::filesystem::relative(p, root);
  return rel.empty() ? p.string() : rel.generic_string();
}

}  // namespace

Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest " + path.string());
  Manifest m;
  m.root = std::filesystem::absolute(path).parent_path();

  std::unordered_set<std::string> seen;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); })) {
      continue;
    }
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError("manifest line " + std::to_string(line_no) + ": " + e.what());
    }
    PairRecord r;
    try {
      r.id = j.at("id").get<std::string>();
      r.product = resolve(m.root, j.at("product").get<std::string>());
      r.model = resolve(m.root, j.at("model").get<std::string>());
      r.mask = resolve(m.root, j.at("mask").get<std::string>());
      r.type = parse_garment_type(j.at("type").get<std::string>());
      if (j.contains("theta_gt")) {
        for (const auto& t : j.at("theta_gt")) {
          auto v = t.get<std::vector<double>>();
          if (v.size() != 6) throw DataError("theta_gt entries must have 6 values");
          AffineParams p;
          std::copy(v.begin(), v.end(), p.m.begin());
          r.theta_gt.push_back(p);
        }
      }
      if (j.contains("figure")) r.figure = resolve(m.root, j.at("figure").get<std::string>());
    } catch (const nlohmann::json::exception& e) {
      throw DataError("manifest line " + std::to_string(line_no) + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError("manifest line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!seen.insert(r.id).second) {
      throw DataError("manifest line " + std::to_string(line_no) + ": duplicate id " + r.id);
    }

    std::vector<std::filesystem::path> paths = {r.product, r.model, r.mask};
    if (r.figure) paths.push_back(*r.figure);
    for (const auto& p : paths) {
      if (!std::filesystem::exists(p)) {
        throw DataError("record " + r.id + ": missing image " + p.string());
      }
      auto [h, w] = png_dimensions(p);
      if (m.height == 0) {
        m.height = h;
        m.width = w;
      } else if (h != m.height || w != m.width) {
        throw DataError("record " + r.id + ": image " + p.string() + " is " + std::to_string(h) +
                        "x" + std::to_string(w) + ", expected " + std::to_string(m.height) + "x" +
                        std::to_string(m.width));
      }
    }
    m.records.push_back(std::move(r));
  }
  return m;
}

void write_manifest(const Manifest& m, const std::filesystem::path& path) {
  const auto root = std::filesystem::absolute(path).parent_path();
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write manifest " + path.string());
  for (const auto& r : m.records) {
    nlohmann::ordered_json j;
    j["id"] = r.id;
    j["product"] = relative_to(r.product, root);
    j["model"] = relative_to(r.model, root);
    j["mask"] = relative_to(r.mask, root);
    j["type"] = std::string(to_string(r.type));
    if (!r.theta_gt.empty()) {
      auto arr = nlohmann::ordered_json::array();
      for (const auto& t : r.theta_gt) arr.push_back(t.m);
      j["theta_gt"] = arr;
    }
    if (r.figure) j["figure"] = relative_to(*r.figure, root);
    out << j.dump() << '\n';
  }
}

std::pair<Manifest, Manifest> split_records(const Manifest& m, double ratio, std::uint64_t seed) {
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw std::invalid_argument("split ratio must lie in [0,1]");
  const std::size_t n = m.records.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, 0x5EED));
  rng.shuffle(order);
  const auto n_train = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(n)));
  std::vector<bool> in_train(n, false);
  for (std::size_t i = 0; i < n_train; ++i) in_train[order[i]] = true;

  Manifest train = m, test = m;
  train.records.clear();
  test.records.clear();
  for (std::size_t i = 0; i < n; ++i) (in_train[i] ? train : test).records.push_back(m.records[i]);
  return {std::move(train), std::move(test)};
}

std::optional<std::int64_t> CorpusTensors::find(const std::string& id) const {
  auto it = std::find(ids.begin(), ids.end(), id);
  if (it == ids.end()) return std::nullopt;
  return static_cast<std::int64_t>(it - ids.begin());
}

CorpusTensors load_corpus(const Manifest& m, bool with_contours,
                          const contour::ContourParams& params) {
  CorpusTensors c;
  std::vector<torch::Tensor> products, models, masks, contours, figures;
  bool all_figures = !m.records.empty();
  for (const auto& r : m.records) all_figures = all_figures && r.figure.has_value();
  for (const auto& r : m.records) {
    c.ids.push_back(r.id);
    c.types.push_back(r.type);
    c.theta_gt.push_back(r.theta_gt);
    auto product = read_png_rgb(r.product);
    products.push_back(product);
    models.push_back(read_png_rgb(r.model));
    masks.push_back(read_png_gray(r.mask).ge(0.5).to(torch::kFloat32));
    if (with_contours) contours.push_back(to_tensor(contour::extract_contour(product, params)));
    if (all_figures) figures.push_back(read_png_rgb(*r.figure));
  }
  if (!products.empty()) {
    c.products = torch::stack(products);
    c.models = torch::stack(models);
    c.masks = torch::stack(masks);
    if (with_contours) c.contours = torch::stack(contours);
    if (all_figures) c.figures = torch::stack(figures);
  }
  return c;
}

}  // namespace vto
