#include "vto/dataset.hpp"
#include "vto/errors.hpp"
#include "vto/image.hpp"
#include "vto/random.hpp"
#include "vto/warp.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <numbers>
#include <queue>

namespace vto {

namespace {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};
using Polygon = std::vector<Vec2>;

double px_to_norm(int i, int size) { return (2.0 * i + 1.0) / size - 1.0; }

bool inside(const Polygon& poly, double x, double y) {
  bool in = false;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    const auto& a = poly[i];
    const auto& b = poly[j];
    if ((a.y > y) != (b.y > y) && x < (b.x - a.x) * (y - a.y) / (b.y - a.y) + a.x) in = !in;
  }
  return in;
}

Polygon mirrored_outline(const std::vector<Vec2>& left_half) {
  // `left_half` runs from the centre top around the left side to the centre bottom.
  Polygon poly = left_half;
  for (auto it = left_half.rbegin(); it != left_half.rend(); ++it) {
    if (std::abs(it->x) < 1e-12) continue;
    poly.push_back({-it->x, it->y});
  }
  return poly;
}

void add_sleeve(std::vector<Vec2>& pts, double w, double shoulder_y, double len, double width) {
  if (len <= 0.0) return;
  pts.push_back({-w - len * 0.8, shoulder_y + len * 0.6});
  pts.push_back({-w - len * 0.8 + width * 0.6, shoulder_y + len * 0.6 + width * 0.8});
  pts.push_back({-w, shoulder_y + width * 1.3});
}

Polygon shirt_like(Rng& rng, double w, double top, double bottom, double sleeve_len,
                   double sleeve_w, double neck_w, double neck_depth, double flare) {
  std::vector<Vec2> half = {{0.0, top + neck_depth}, {-neck_w, top}, {-w, top + 0.06}};
  add_sleeve(half, w, top + 0.06, sleeve_len, sleeve_w);
  half.push_back({-w * flare, bottom});
  half.push_back({0.0, bottom + rng.uniform(0.0, 0.02)});
  return mirrored_outline(half);
}

Polygon garment_polygon(GarmentType type, Rng& rng) {
  switch (type) {
    case GarmentType::top: {
      const int family = static_cast<int>(rng.index(3));  // tank, tee, long sleeve
      const double sleeve = family == 0 ? 0.0 : (family == 1 ? rng.uniform(0.2, 0.28) : rng.uniform(0.36, 0.46));
      return shirt_like(rng, rng.uniform(0.38, 0.5), rng.uniform(-0.8, -0.7), rng.uniform(0.45, 0.85),
                        sleeve, rng.uniform(0.15, 0.2), rng.uniform(0.1, 0.16), rng.uniform(0.06, 0.15),
                        rng.uniform(0.95, 1.1));
    }
    case GarmentType::outerwear:
      return shirt_like(rng, rng.uniform(0.42, 0.52), rng.uniform(-0.85, -0.75), rng.uniform(0.6, 0.9),
                        rng.uniform(0.38, 0.46), rng.uniform(0.16, 0.2), rng.uniform(0.14, 0.2),
                        rng.uniform(0.25, 0.45), rng.uniform(1.0, 1.15));
    case GarmentType::bottoms: {
      const double top = rng.uniform(-0.85, -0.75);
      const double w = rng.uniform(0.3, 0.42);
      const int family = static_cast<int>(rng.index(3));  // trousers, shorts, skirt
      if (family == 2) {
        const double bottom = rng.uniform(0.1, 0.85);
        const double flare = rng.uniform(0.1, 0.35);
        return {{-w, top}, {w, top}, {w + flare, bottom}, {-w - flare, bottom}};
      }
      const double bottom = family == 0 ? rng.uniform(0.7, 0.9) : rng.uniform(-0.05, 0.2);
      const double crotch = std::min(top + rng.uniform(0.35, 0.45), bottom - 0.15);
      const double gap = rng.uniform(0.04, 0.1);
      const double flare = rng.uniform(0.0, 0.08);
      return {{-w, top}, {w, top}, {w + flare, bottom}, {gap, bottom}, {0.0, crotch}, {-gap, bottom},
              {-w - flare, bottom}};
    }
    case GarmentType::all_body: {
      const double top = rng.uniform(-0.88, -0.8);
      const double w = rng.uniform(0.34, 0.44);
      const double waist = rng.uniform(-0.1, 0.05);
      const double bottom = rng.uniform(0.7, 0.9);
      const double sleeve = rng.bernoulli(0.5) ? 0.0 : rng.uniform(0.2, 0.3);
      std::vector<Vec2> half = {{0.0, top + rng.uniform(0.06, 0.14)}, {-rng.uniform(0.1, 0.15), top},
                                {-w, top + 0.06}};
      add_sleeve(half, w, top + 0.06, sleeve, rng.uniform(0.15, 0.19));
      half.push_back({-w * 0.85, waist});
      if (rng.bernoulli(0.5)) {  // dress
        half.push_back({-w - rng.uniform(0.05, 0.35), bottom});
        half.push_back({0.0, bottom});
      } else {  // jumpsuit
        half.push_back({-w * 0.95 - rng.uniform(0.0, 0.06), bottom});
        half.push_back({-rng.uniform(0.04, 0.08), bottom});
        half.push_back({0.0, waist + rng.uniform(0.25, 0.35)});
      }
      return mirrored_outline(half);
    }
  }
  return {};
}

using Color = std::array<double, 3>;

// Colours with identical luma differ only in chroma; their contour is the silhouette.
Color chroma_color(double luma, double angle, double strength) {
  const std::array<double, 3> lw = {0.299, 0.587, 0.114};
  // Orthonormal basis of the plane orthogonal to the luma weights.
  const double n = std::sqrt(lw[0] * lw[0] + lw[1] * lw[1] + lw[2] * lw[2]);
  const std::array<double, 3> u = {lw[0] / n, lw[1] / n, lw[2] / n};
  std::array<double, 3> e1 = {u[1], -u[0], 0.0};
  const double n1 = std::hypot(e1[0], e1[1]);
  for (auto& v : e1) v /= n1;
  const std::array<double, 3> e2 = {u[1] * e1[2] - u[2] * e1[1], u[2] * e1[0] - u[0] * e1[2],
                                    u[0] * e1[1] - u[1] * e1[0]};
  std::array<double, 3> dir{};
  for (int c = 0; c < 3; ++c) dir[c] = std::cos(angle) * e1[c] + std::sin(angle) * e2[c];
  // Grey with the requested luma, pushed along `dir` as far as the gamut allows.
  double limit = 1e9;
  for (int c = 0; c < 3; ++c) {
    if (dir[c] > 1e-9) limit = std::min(limit, (0.95 - luma) / dir[c]);
    if (dir[c] < -1e-9) limit = std::min(limit, (luma - 0.03) / -dir[c]);
  }
  Color out{};
  for (int c = 0; c < 3; ++c) out[c] = luma + strength * limit * dir[c];
  return out;
}

torch::Tensor render_product(const Polygon& poly, int size, Rng& rng) {
  const double luma = rng.uniform(0.2, 0.5);
  const double hue = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const Color base = chroma_color(luma, hue, rng.uniform(0.5, 0.9));
  const Color accent = chroma_color(luma, hue + std::numbers::pi + rng.uniform(-0.6, 0.6),
                                    rng.uniform(0.7, 1.0));
  const double pick = rng.uniform();
  const int pattern = pick < 0.2 ? 0 : (pick < 0.65 ? 1 : 2);  // solid, stripes, dots
  const double angle = rng.uniform(0.0, std::numbers::pi);
  const double period = size * rng.uniform(0.06, 0.14);
  const double spacing = size * rng.uniform(0.08, 0.15);
  const double radius = spacing * rng.uniform(0.2, 0.35);
  const double ca = std::cos(angle), sa = std::sin(angle);

  auto img = torch::ones({3, size, size}, torch::kFloat32);
  auto a = img.accessor<float, 3>();
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      if (!inside(poly, px_to_norm(x, size), px_to_norm(y, size))) continue;
      bool use_accent = false;
      if (pattern == 1) {
        const double t = (x * ca + y * sa) / period;
        use_accent = (t - std::floor(t)) < 0.5;
      } else if (pattern == 2) {
        const double gx = std::fmod(x + 0.5, spacing) - spacing / 2;
        const double gy = std::fmod(y + 0.5, spacing) - spacing / 2;
        use_accent = gx * gx + gy * gy <= radius * radius;
      }
      const Color& c = use_accent ? accent : base;
      for (int ch = 0; ch < 3; ++ch) a[ch][y][x] = static_cast<float>(c[ch]);
    }
  }
  return quantize8(img);
}

torch::Tensor render_figure(int size, Rng& rng) {
  const double tint = rng.uniform(-0.03, 0.03);
  const Color bg = {0.92 + tint, 0.92 + tint * 0.5, 0.9};
  const double tone = rng.uniform(0.6, 1.05);
  const Color skin = {std::min(0.95, 0.86 * tone), 0.68 * tone, 0.56 * tone};
  const double g = rng.uniform(0.45, 0.7);
  const Color under_top = {g, g, g + 0.03};
  const double d = rng.uniform(0.12, 0.25);
  const Color under_bottom = {d, d, d + 0.02};
  const double bw = rng.uniform(0.9, 1.1);

  const Polygon torso = {{-0.42 * bw, -0.68}, {0.42 * bw, -0.68}, {0.36 * bw, 0.25}, {-0.36 * bw, 0.25}};
  const Polygon neck = {{-0.07, -0.82}, {0.07, -0.82}, {0.07, -0.64}, {-0.07, -0.64}};
  const Polygon arm_l = {{-0.42 * bw, -0.66}, {-0.3 * bw, -0.6}, {-0.5 * bw, 0.3}, {-0.64 * bw, 0.28}};
  const Polygon arm_r = {{0.42 * bw, -0.66}, {0.64 * bw, 0.28}, {0.5 * bw, 0.3}, {0.3 * bw, -0.6}};
  const Polygon leg_l = {{-0.36 * bw, 0.2}, {-0.02, 0.2}, {-0.06, 1.05}, {-0.32 * bw, 1.05}};
  const Polygon leg_r = {{0.02, 0.2}, {0.36 * bw, 0.2}, {0.32 * bw, 1.05}, {0.06, 1.05}};
  const Polygon shorts = {{-0.37 * bw, 0.15}, {0.37 * bw, 0.15}, {0.38 * bw, 0.45}, {-0.38 * bw, 0.45}};

  auto img = torch::empty({3, size, size}, torch::kFloat32);
  auto a = img.accessor<float, 3>();
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double u = px_to_norm(x, size), v = px_to_norm(y, size);
      const double shade = 1.0 - 0.05 * (v + 1.0) / 2.0;
      Color c = {bg[0] * shade, bg[1] * shade, bg[2] * shade};
      const double hx = u, hy = v + 0.92;
      if (hx * hx + hy * hy <= 0.16 * 0.16 || inside(neck, u, v) || inside(arm_l, u, v) ||
          inside(arm_r, u, v) || inside(leg_l, u, v) || inside(leg_r, u, v)) {
        c = skin;
      }
      if (inside(torso, u, v)) c = under_top;
      if (inside(shorts, u, v)) c = under_bottom;
      for (int ch = 0; ch < 3; ++ch) a[ch][y][x] = static_cast<float>(c[ch]);
    }
  }
  return quantize8(img);
}

struct Placement {
  double scale_x, scale_y, angle, cx, cy;
};

std::vector<AffineParams> sample_thetas(GarmentType type, bool two_component, Rng& rng) {
  const std::array<double, 4> centre_y = {-0.2, 0.3, -0.1, 0.05};
  // Two-component records are close-ups so the garment fills most of the frame.
  const double s = two_component ? rng.uniform(1.6, 1.8) : rng.uniform(0.78, 0.95);
  Placement p{s * rng.uniform(0.95, 1.05), s * rng.uniform(0.95, 1.05),
              rng.uniform(-6.0, 6.0) * std::numbers::pi / 180.0, rng.uniform(-0.06, 0.06),
              centre_y[static_cast<int>(type)] + rng.uniform(-0.06, 0.06)};
  if (!two_component) return {placement(p.scale_x, p.scale_y, p.angle, p.cx, p.cy)};
  const double shift = rng.uniform(0.16, 0.24);
  const double open = rng.uniform(8.0, 12.0) * std::numbers::pi / 180.0;
  return {placement(p.scale_x, p.scale_y, p.angle - open, p.cx - shift, p.cy),
          placement(p.scale_x, p.scale_y, p.angle + open, p.cx + shift, p.cy)};
}

}  // namespace

torch::Tensor product_alpha(const torch::Tensor& product) {
  return std::get<0>(product.min(0, /*keepdim=*/true)).lt(1.0).to(torch::kFloat32);
}

Composite composite_garment(const torch::Tensor& figure, const torch::Tensor& product,
                            const std::vector<AffineParams>& thetas) {
  if (thetas.empty() || thetas.size() > 2) {
    throw std::invalid_argument("composite_garment expects one or two parameter sets");
  }
  const auto size = product.size(2);
  auto alpha = product_alpha(product);
  std::vector<torch::Tensor> parts;
  if (thetas.size() == 1) {
    parts.push_back(alpha);
  } else {
    // Halves split at the vertical centre line with a 1.5 pixel gap on each side.
    auto xs = torch::arange(size, torch::kFloat32).add(0.5).mul(2.0 / static_cast<double>(size)).sub(1.0);
    const double gap = 3.0 / static_cast<double>(size);
    parts.push_back(alpha * xs.lt(-gap).to(torch::kFloat32).view({1, 1, size}));
    parts.push_back(alpha * xs.gt(gap).to(torch::kFloat32).view({1, 1, size}));
  }
  auto model = figure.clone();
  auto hole = torch::zeros_like(alpha);
  for (std::size_t i = 0; i < thetas.size(); ++i) {
    auto region = warp::apply_affine(parts[i], thetas[i], 0.0).ge(0.5);
    auto warped = warp::apply_affine(product, thetas[i], 1.0);
    model = torch::where(region, warped, model);
    hole = torch::where(region, torch::ones_like(hole), hole);
  }
  return {quantize8(model), 1.0 - hole};
}

int garment_components(const torch::Tensor& mask) {
  auto g = to_binary_grid(mask, 0.5);
  const int h = g.height, w = g.width;
  std::vector<int> label(g.data.size(), 0);
  int count = 0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (g.at(y, x) != 0 || label[static_cast<std::size_t>(y) * w + x] != 0) continue;
      ++count;
      std::queue<std::pair<int, int>> q;
      q.push({y, x});
      label[static_cast<std::size_t>(y) * w + x] = count;
      while (!q.empty()) {
        auto [cy, cx] = q.front();
        q.pop();
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const int ny = cy + dy, nx = cx + dx;
            if (!g.inside(ny, nx) || g.at(ny, nx) != 0) continue;
            auto& l = label[static_cast<std::size_t>(ny) * w + nx];
            if (l != 0) continue;
            l = count;
            q.push({ny, nx});
          }
        }
      }
    }
  }
  return count;
}

Manifest generate_synthetic_corpus(const std::filesystem::path& out_dir,
                                   const SyntheticOptions& options) {
  if (options.count < 1) throw ConfigError("corpus size must be >= 1");
  if (options.image_size < 32) throw ConfigError("corpus image size must be >= 32");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec || !std::filesystem::is_directory(out_dir)) {
    throw std::runtime_error("cannot create output directory " + out_dir.string());
  }
  const auto root = std::filesystem::absolute(out_dir);
  const std::map<std::string, std::string> text = {{"Software", std::string("vto ") + kVersion}};
  const int size = options.image_size;

  Manifest m;
  m.root = root;
  m.height = m.width = size;
  for (int i = 0; i < options.count; ++i) {
    Rng rng(derive_seed(options.seed, static_cast<std::uint64_t>(i)));
    char id_buf[16];
    std::snprintf(id_buf, sizeof id_buf, "s%05d", i);
    PairRecord r;
    r.id = id_buf;
    r.type = kGarmentTypes[static_cast<std::size_t>(i % kNumGarmentTypes)];

    const auto poly = garment_polygon(r.type, rng);
    const auto product = render_product(poly, size, rng);
    const auto figure = render_figure(size, rng);

    Composite comp;
    int attempts = 0;
    while (true) {
      r.theta_gt = sample_thetas(r.type, options.two_component, rng);
      comp = composite_garment(figure, product, r.theta_gt);
      if (!options.two_component || garment_components(comp.mask) == 2) break;
      if (++attempts > 100) {
        throw std::runtime_error("could not place a two-part garment for record " + r.id);
      }
    }

    r.product = root / (r.id + "_product.png");
    r.model = root / (r.id + "_model.png");
    r.mask = root / (r.id + "_mask.png");
    r.figure = root / (r.id + "_figure.png");
    write_png(r.product, product, text);
    write_png(r.model, comp.model, text);
    write_png(r.mask, comp.mask, text);
    write_png(*r.figure, figure, text);
    m.records.push_back(std::move(r));
  }
  write_manifest(m, root / "manifest.jsonl");

  nlohmann::ordered_json info = {{"version", kVersion},
                                 {"count", options.count},
                                 {"image_size", options.image_size},
                                 {"two_component", options.two_component},
                                 {"seed", options.seed}};
  std::ofstream(root / "corpus_info.json") << info.dump(2) << '\n';
  return m;
}

}  // namespace vto
