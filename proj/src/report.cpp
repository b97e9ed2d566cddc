#include "vto/report.hpp"

#include "vto/errors.hpp"
#include "vto/image.hpp"

#include <fstream>
#include <iomanip>
#include <sstream>

namespace vto::eval {

const ModeScores* EvalReport::find(const std::string& mode) const {
  for (const auto& m : modes) {
    if (m.mode == mode) return &m;
  }
  return nullptr;
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& m : modes) {
    rows.push_back({{"mode", m.mode},
                    {"pairs", m.pairs},
                    {"ground_truth_pairs", m.ground_truth_pairs},
                    {"fid_inf", m.fid_inf},
                    {"fid_n", m.fid_n},
                    {"l1", m.l1},
                    {"l1_full", m.l1_full},
                    {"perceptual", m.perceptual}});
  }
  return {{"version", kVersion},
          {"extractor", extractor_id},
          {"real_pool", real_pool},
          {"modes", rows},
          {"config", config},
          {"note",
           "Scores come from a seeded random-weight feature extractor on a synthetic corpus; "
           "they are comparable across runs of this tool only, not with published full-scale numbers."}};
}

EvalReport EvalReport::from_json(const nlohmann::json& j) {
  EvalReport r;
  r.extractor_id = j.at("extractor").get<std::string>();
  r.real_pool = j.at("real_pool").get<std::size_t>();
  r.config = j.value("config", nlohmann::json::object());
  for (const auto& row : j.at("modes")) {
    ModeScores m;
    m.mode = row.at("mode").get<std::string>();
    m.pairs = row.at("pairs").get<std::size_t>();
    m.ground_truth_pairs = row.at("ground_truth_pairs").get<std::size_t>();
    m.fid_inf = row.at("fid_inf").get<double>();
    m.fid_n = row.at("fid_n").get<double>();
    m.l1 = row.at("l1").get<double>();
    m.l1_full = row.at("l1_full").get<double>();
    m.perceptual = row.at("perceptual").get<double>();
    r.modes.push_back(m);
  }
  return r;
}

void EvalReport::write_json(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << to_json().dump(2) << '\n';
}

void EvalReport::write_csv(const std::filesystem::path& path, const std::string& method) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "method,metric";
  for (const auto& m : modes) out << ',' << m.mode;
  out << '\n' << std::setprecision(10);
  const std::vector<std::pair<std::string, double ModeScores::*>> metrics = {
      {"fid_inf", &ModeScores::fid_inf}, {"fid_n", &ModeScores::fid_n},     {"l1", &ModeScores::l1},
      {"l1_full", &ModeScores::l1_full}, {"perceptual", &ModeScores::perceptual}};
  for (const auto& [name, field] : metrics) {
    out << method << ',' << name;
    for (const auto& m : modes) out << ',' << m.*field;
    out << '\n';
  }
}

torch::Tensor ground_truth_tryon(const CorpusTensors& corpus, std::int64_t product_row, std::int64_t model_row) {
  if (product_row == model_row) return corpus.models[model_row];
  if (!corpus.figures.defined() || corpus.figures.numel() == 0) return {};
  const auto& thetas = corpus.theta_gt[static_cast<std::size_t>(model_row)];
  if (thetas.empty()) return {};
  return composite_garment(corpus.figures[model_row], corpus.products[product_row], thetas).model;
}

namespace {

std::int64_t resolve(const CorpusTensors& corpus, const std::string& id, std::vector<std::string>& missing) {
  const auto row = corpus.find(id);
  if (!row) {
    missing.push_back(id);
    return -1;
  }
  return *row;
}

}  // namespace

EvalReport evaluate_run(const std::vector<retrieval::TestPairSet>& sets, inpaint::MtnNet& net,
                        const CorpusTensors& corpus, const torch::Tensor& real_images,
                        const FeatureExtractor& extractor, const EvalOptions& options) {
  std::size_t total = 0;
  for (const auto& s : sets) total += s.pairs.size();
  if (total == 0) throw DataError("evaluate: empty pair set");

  std::vector<std::string> missing;
  std::vector<std::vector<std::pair<std::int64_t, std::int64_t>>> rows(sets.size());
  for (std::size_t s = 0; s < sets.size(); ++s) {
    for (const auto& [p, m] : sets[s].pairs) rows[s].emplace_back(resolve(corpus, p, missing), resolve(corpus, m, missing));
  }
  if (!missing.empty()) {
    std::string list;
    for (std::size_t i = 0; i < missing.size() && i < 20; ++i) list += (i ? ", " : "") + missing[i];
    if (missing.size() > 20) list += ", ...";
    throw DataError("evaluate: unresolvable pair ids: " + list);
  }

  EvalReport report;
  report.extractor_id = extractor.id();
  report.real_pool = static_cast<std::size_t>(real_images.size(0));
  const auto real = extractor.features(real_images, options.batch_size);

  for (std::size_t s = 0; s < sets.size(); ++s) {
    ModeScores scores;
    scores.mode = retrieval::to_string(sets[s].mode);
    scores.pairs = rows[s].size();
    if (rows[s].empty()) continue;

    std::vector<torch::Tensor> generated;
    double l1_sum = 0.0, l1_full_sum = 0.0, perceptual_sum = 0.0;
    for (std::size_t b = 0; b < rows[s].size(); b += static_cast<std::size_t>(options.batch_size)) {
      const auto e = std::min(rows[s].size(), b + static_cast<std::size_t>(options.batch_size));
      std::vector<std::int64_t> pi, mi;
      for (auto i = b; i < e; ++i) {
        pi.push_back(rows[s][i].first);
        mi.push_back(rows[s][i].second);
      }
      auto pidx = torch::tensor(pi, torch::kLong), midx = torch::tensor(mi, torch::kLong);
      auto masks = corpus.masks.index_select(0, midx);
      auto out = inpaint::synthesize_batch(net, corpus.products.index_select(0, pidx),
                                           corpus.models.index_select(0, midx), masks);
      out = quantize8(out);
      generated.push_back(out);
      for (std::size_t j = 0; j < pi.size(); ++j) {
        auto truth = ground_truth_tryon(corpus, pi[j], mi[j]);
        if (!truth.defined()) continue;
        auto gen = out[static_cast<std::int64_t>(j)];
        l1_sum += masked_l1_error(gen, truth, 1.0 - masks[static_cast<std::int64_t>(j)]);
        l1_full_sum += l1_error(gen, truth);
        perceptual_sum += perceptual_error(gen, truth, extractor);
        ++scores.ground_truth_pairs;
      }
    }
    if (scores.ground_truth_pairs > 0) {
      const auto n = static_cast<double>(scores.ground_truth_pairs);
      scores.l1 = l1_sum / n;
      scores.l1_full = l1_full_sum / n;
      scores.perceptual = perceptual_sum / n;
    }
    const auto fake = extractor.features(torch::cat(generated), options.batch_size);
    const auto n = std::min(fake.size(), real.size());
    const auto sizes = default_batch_sizes(n, options.fid_sizes);
    scores.fid_inf = fid_inf(fake, real, sizes, options.seed);
    scores.fid_n = fid_at_n(fake, real, n, options.seed);
    report.modes.push_back(scores);
  }
  return report;
}

std::string format_report_table(const std::vector<std::pair<std::string, EvalReport>>& reports) {
  std::vector<std::string> modes;
  for (const auto& [label, r] : reports) {
    for (const auto& m : r.modes) {
      if (std::find(modes.begin(), modes.end(), m.mode) == modes.end()) modes.push_back(m.mode);
    }
  }
  std::ostringstream os;
  os << std::left << std::setw(24) << "run" << std::setw(12) << "metric";
  for (const auto& m : modes) os << std::setw(20) << m;
  os << '\n';
  const std::vector<std::pair<std::string, double ModeScores::*>> metrics = {
      {"FID_inf", &ModeScores::fid_inf}, {"FID_N", &ModeScores::fid_n}, {"L1", &ModeScores::l1},
      {"perceptual", &ModeScores::perceptual}};
  for (const auto& [label, r] : reports) {
    for (const auto& [name, field] : metrics) {
      os << std::setw(24) << label << std::setw(12) << name;
      for (const auto& m : modes) {
        const auto* s = r.find(m);
        std::ostringstream cell;
        if (s != nullptr) cell << std::fixed << std::setprecision(4) << s->*field;
        os << std::setw(20) << (s != nullptr ? cell.str() : "-");
      }
      os << '\n';
    }
  }
  os << "Scores use a seeded random-weight feature extractor on synthetic data; they rank runs of this tool\n"
        "and are not comparable with published full-scale figures.\n";
  return os.str();
}

}  // namespace vto::eval
