#include "vto/checkpoint.hpp"

#include "vto/errors.hpp"
#include "vto/image.hpp"

#include <fstream>
#include <iomanip>

namespace vto {

void LossHistory::append(std::int64_t step, std::vector<double> values) {
  if (values.size() != columns.size()) throw std::invalid_argument("loss row width mismatch");
  steps.push_back(step);
  rows.push_back(std::move(values));
}

std::vector<double> LossHistory::column(const std::string& name) const {
  auto it = std::find(columns.begin(), columns.end(), name);
  if (it == columns.end()) throw std::out_of_range("no loss column " + name);
  const auto c = static_cast<std::size_t>(it - columns.begin());
  std::vector<double> out;
  out.reserve(rows.size());
  for (const auto& r : rows) out.push_back(r[c]);
  return out;
}

void LossHistory::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "step";
  for (const auto& c : columns) out << ',' << c;
  out << '\n' << std::setprecision(9);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out << steps[i];
    for (double v : rows[i]) out << ',' << v;
    out << '\n';
  }
}

void LossHistory::truncate(std::int64_t step) {
  std::size_t keep = 0;
  while (keep < steps.size() && steps[keep] < step) ++keep;
  steps.resize(keep);
  rows.resize(keep);
}

namespace {

torch::Tensor history_tensor(const LossHistory& h) {
  const auto n = static_cast<std::int64_t>(h.rows.size());
  const auto c = static_cast<std::int64_t>(h.columns.size());
  auto t = torch::zeros({n, c + 1}, torch::kFloat64);
  auto a = t.accessor<double, 2>();
  for (std::int64_t i = 0; i < n; ++i) {
    a[i][0] = static_cast<double>(h.steps[i]);
    for (std::int64_t j = 0; j < c; ++j) a[i][j + 1] = h.rows[i][j];
  }
  return t;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const CheckpointMeta& meta,
                     const torch::nn::Module& module, const torch::optim::Optimizer* optimizer,
                     const LossHistory& history) {
  torch::serialize::OutputArchive archive;
  nlohmann::json header = {{"kind", meta.kind},
                           {"version", meta.version.empty() ? kVersion : meta.version},
                           {"config", meta.config},
                           {"step", meta.step},
                           {"history_columns", history.columns}};
  archive.write("header", c10::IValue(header.dump()));

  torch::serialize::OutputArchive weights;
  module.save(weights);
  archive.write("weights", weights);
  if (optimizer != nullptr) {
    torch::serialize::OutputArchive opt;
    optimizer->save(opt);
    archive.write("optimizer", opt);
  }
  archive.write("history", history_tensor(history));

  // Write to a sibling then rename so an interrupted save never leaves a torn file.
  auto tmp = path;
  tmp += ".tmp";
  archive.save_to(tmp.string());
  std::filesystem::rename(tmp, path);
}

CheckpointMeta read_checkpoint_meta(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw std::runtime_error("missing checkpoint " + path.string());
  torch::serialize::InputArchive archive;
  archive.load_from(path.string());
  c10::IValue v;
  archive.read("header", v);
  auto header = nlohmann::json::parse(v.toStringRef());
  CheckpointMeta meta;
  meta.kind = header.at("kind").get<std::string>();
  meta.version = header.at("version").get<std::string>();
  meta.config = header.at("config");
  meta.step = header.at("step").get<std::int64_t>();
  return meta;
}

void load_checkpoint(const std::filesystem::path& path, torch::nn::Module& module,
                     torch::optim::Optimizer* optimizer, LossHistory* history) {
  torch::serialize::InputArchive archive;
  archive.load_from(path.string());
  torch::serialize::InputArchive weights;
  archive.read("weights", weights);
  module.load(weights);
  if (optimizer != nullptr) {
    torch::serialize::InputArchive opt;
    if (!archive.try_read("optimizer", opt)) {
      throw DataError("checkpoint " + path.string() + " has no optimizer state");
    }
    optimizer->load(opt);
  }
  if (history != nullptr) {
    c10::IValue v;
    archive.read("header", v);
    auto header = nlohmann::json::parse(v.toStringRef());
    history->columns = header.at("history_columns").get<std::vector<std::string>>();
    history->steps.clear();
    history->rows.clear();
    torch::Tensor t;
    archive.read("history", t);
    auto a = t.accessor<double, 2>();
    for (std::int64_t i = 0; i < t.size(0); ++i) {
      std::vector<double> row;
      for (std::int64_t j = 1; j < t.size(1); ++j) row.push_back(a[i][j]);
      history->append(static_cast<std::int64_t>(a[i][0]), std::move(row));
    }
  }
}

}  // namespace vto
