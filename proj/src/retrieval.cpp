#include "vto/retrieval.hpp"

#include "vto/errors.hpp"
#include "vto/image.hpp"
#include "vto/log.hpp"
#include "vto/random.hpp"

#include <algorithm>
#include <array>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

namespace vto::retrieval {

namespace {

constexpr char kMagic[8] = {'V', 'T', 'O', 'I', 'D', 'X', '1', '\n'};

}  // namespace

EmbeddingIndex::EmbeddingIndex(std::vector<std::string> ids, Eigen::MatrixXd codes, std::vector<std::string> tags)
    : ids_(std::move(ids)), codes_(std::move(codes)), tags_(std::move(tags)) {
  if (ids_.empty()) throw std::invalid_argument("build_index: no items");
  if (static_cast<Eigen::Index>(ids_.size()) != codes_.rows()) throw std::invalid_argument("build_index: id/code count mismatch");
  if (!tags_.empty() && tags_.size() != ids_.size()) throw std::invalid_argument("build_index: tag count mismatch");
  std::set<std::string> seen;
  for (const auto& id : ids_) {
    if (!seen.insert(id).second) throw std::invalid_argument("build_index: duplicate id \"" + id + "\"");
  }
  if (!codes_.allFinite()) throw std::invalid_argument("build_index: non-finite code");
}

std::vector<Neighbor> EmbeddingIndex::query(const Eigen::VectorXd& q, std::size_t k,
                                            const std::optional<std::string>& tag) const {
  if (ids_.empty()) throw std::invalid_argument("query_knn: empty index");
  if (q.size() != codes_.cols()) throw std::invalid_argument("query_knn: query dimension does not match index");
  if (k < 1) throw std::invalid_argument("query_knn: k must be >= 1");
  std::vector<Neighbor> all;
  all.reserve(ids_.size());
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    if (tag && (tags_.empty() || tags_[i] != *tag)) continue;
    all.push_back({ids_[i], (codes_.row(static_cast<Eigen::Index>(i)).transpose() - q).squaredNorm()});
  }
  const auto keep = std::min(k, all.size());
  auto less = [](const Neighbor& a, const Neighbor& b) {
    return a.distance != b.distance ? a.distance < b.distance : a.id < b.id;
  };
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(keep), all.end(), less);
  all.resize(keep);
  return all;
}

void EmbeddingIndex::save(const std::filesystem::path& path) const {
  nlohmann::ordered_json header = {{"dimension", codes_.cols()},
                                   {"count", ids_.size()},
                                   {"metric", "squared_euclidean"},
                                   {"dtype", "float64"},
                                   {"ids", ids_},
                                   {"tags", tags_},
                                   {"metadata", metadata}};
  const std::string text = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write index " + path.string());
  out.write(kMagic, sizeof(kMagic));
  const std::uint64_t length = text.size();
  out.write(reinterpret_cast<const char*>(&length), sizeof(length));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  // Row-major payload.
  for (Eigen::Index r = 0; r < codes_.rows(); ++r) {
    for (Eigen::Index c = 0; c < codes_.cols(); ++c) {
      const double v = codes_(r, c);
      out.write(reinterpret_cast<const char*>(&v), sizeof(v));
    }
  }
  if (!out) throw std::runtime_error("failed writing index " + path.string());
}

EmbeddingIndex EmbeddingIndex::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open index " + path.string());
  char magic[sizeof(kMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw DataError(path.string() + ": not an index file");
  std::uint64_t length = 0;
  in.read(reinterpret_cast<char*>(&length), sizeof(length));
  std::string text(length, '\0');
  in.read(text.data(), static_cast<std::streamsize>(length));
  if (!in) throw DataError(path.string() + ": truncated header");
  const auto header = nlohmann::json::parse(text);
  const auto count = header.at("count").get<Eigen::Index>();
  const auto dim = header.at("dimension").get<Eigen::Index>();
  Eigen::MatrixXd codes(count, dim);
  for (Eigen::Index r = 0; r < count; ++r) {
    for (Eigen::Index c = 0; c < dim; ++c) in.read(reinterpret_cast<char*>(&codes(r, c)), sizeof(double));
  }
  if (!in) throw DataError(path.string() + ": truncated payload");
  EmbeddingIndex index(header.at("ids").get<std::vector<std::string>>(), std::move(codes),
                       header.at("tags").get<std::vector<std::string>>());
  index.metadata = header.at("metadata");
  return index;
}

EmbeddingIndex build_index(const std::vector<std::pair<std::string, std::vector<double>>>& items) {
  if (items.empty()) throw std::invalid_argument("build_index: no items");
  const auto dim = static_cast<Eigen::Index>(items.front().second.size());
  Eigen::MatrixXd codes(static_cast<Eigen::Index>(items.size()), dim);
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (static_cast<Eigen::Index>(items[i].second.size()) != dim) throw std::invalid_argument("build_index: codes differ in dimension");
    ids.push_back(items[i].first);
    codes.row(static_cast<Eigen::Index>(i)) = Eigen::Map<const Eigen::RowVectorXd>(items[i].second.data(), dim);
  }
  return EmbeddingIndex(std::move(ids), std::move(codes));
}

std::vector<Neighbor> query_knn(const EmbeddingIndex& index, const std::vector<double>& q, int k) {
  if (k < 1) throw std::invalid_argument("query_knn: k must be >= 1");
  return index.query(Eigen::Map<const Eigen::VectorXd>(q.data(), static_cast<Eigen::Index>(q.size())),
                     static_cast<std::size_t>(k));
}

std::string to_string(PairMode mode) {
  switch (mode) {
    case PairMode::random: return "random";
    case PairMode::matched_color: return "matched_color";
    case PairMode::matched_grayscale: return "matched_grayscale";
  }
  return "random";
}

PairMode parse_pair_mode(const std::string& s) {
  if (s == "random") return PairMode::random;
  if (s == "matched_color") return PairMode::matched_color;
  if (s == "matched_grayscale") return PairMode::matched_grayscale;
  throw DataError("unknown pair mode \"" + s + "\"");
}

void TestPairSet::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "product_id,model_id,mode\n";
  for (const auto& [p, m] : pairs) out << p << ',' << m << ',' << to_string(mode) << '\n';
}

std::vector<TestPairSet> read_pairs_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != "product_id,model_id,mode") throw DataError(path.string() + ": unexpected pair CSV header");
  std::vector<TestPairSet> sets;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::array<std::string, 3> fields;
    std::stringstream ss(line);
    for (auto& f : fields) {
      if (!std::getline(ss, f, ',')) throw DataError(path.string() + ": line " + std::to_string(line_no) + ": expected 3 fields");
    }
    const auto mode = parse_pair_mode(fields[2]);
    auto it = std::find_if(sets.begin(), sets.end(), [&](const TestPairSet& s) { return s.mode == mode; });
    if (it == sets.end()) {
      sets.push_back({mode, {}});
      it = sets.end() - 1;
    }
    it->pairs.emplace_back(fields[0], fields[1]);
  }
  return sets;
}

namespace {

Eigen::MatrixXd to_eigen(const torch::Tensor& t) {
  auto d = t.to(torch::kFloat64).contiguous();
  Eigen::MatrixXd m(d.size(0), d.size(1));
  auto acc = d.accessor<double, 2>();
  for (std::int64_t i = 0; i < d.size(0); ++i) {
    for (std::int64_t j = 0; j < d.size(1); ++j) m(i, j) = acc[i][j];
  }
  return m;
}

constexpr std::int64_t kChunk = 64;

}  // namespace

Eigen::MatrixXd product_shape_codes(smn::SmnNet& net, const torch::Tensor& products, bool grayscale) {
  torch::NoGradGuard no_grad;
  const bool was_training = net->is_training();
  net->eval();
  std::vector<torch::Tensor> parts;
  for (std::int64_t b = 0; b < products.size(0); b += kChunk) {
    auto chunk = products.slice(0, b, std::min(b + kChunk, products.size(0)));
    if (grayscale) {
      std::vector<torch::Tensor> gray;
      for (std::int64_t i = 0; i < chunk.size(0); ++i) gray.push_back(to_grayscale_rgb(chunk[i]));
      chunk = torch::stack(gray);
    }
    parts.push_back(net->map_to_shape(net->encode_products(chunk)));
  }
  net->train(was_training);
  return to_eigen(torch::cat(parts));
}

Eigen::MatrixXd model_shape_codes(smn::SmnNet& net, const torch::Tensor& models,
                                  const std::vector<GarmentType>& types) {
  torch::NoGradGuard no_grad;
  const bool was_training = net->is_training();
  net->eval();
  std::vector<torch::Tensor> parts;
  for (std::int64_t b = 0; b < models.size(0); b += kChunk) {
    const auto e = std::min(b + kChunk, models.size(0));
    auto parse = net->parse_models(models.slice(0, b, e));
    std::vector<std::int64_t> t;
    for (auto i = b; i < e; ++i) t.push_back(static_cast<std::int64_t>(types[static_cast<std::size_t>(i)]));
    auto rows = torch::arange(e - b, torch::kLong);
    parts.push_back(net->map_to_shape(parse.codes.index({rows, torch::tensor(t, torch::kLong)})));
  }
  net->train(was_training);
  return to_eigen(torch::cat(parts));
}

EmbeddingIndex build_model_index(smn::SmnNet& net, const CorpusTensors& models) {
  std::vector<std::string> tags;
  for (auto t : models.types) tags.emplace_back(to_string(t));
  return EmbeddingIndex(models.ids, model_shape_codes(net, models.models, models.types), std::move(tags));
}

TestPairSet build_matched_pairs(const CorpusTensors& products, const EmbeddingIndex& model_index,
                                smn::SmnNet& net, const MatchOptions& options) {
  if (options.k < 1) throw ConfigError("match.k must be >= 1");
  if (options.n < 0) throw ConfigError("match.n must be >= 0");
  TestPairSet set;
  set.mode = options.grayscale ? PairMode::matched_grayscale : PairMode::matched_color;
  const auto codes = product_shape_codes(net, products.products, options.grayscale);
  std::vector<std::size_t> usable;
  std::vector<std::vector<std::string>> candidates(static_cast<std::size_t>(products.size()));
  for (std::int64_t i = 0; i < products.size(); ++i) {
    const auto& id = products.ids[static_cast<std::size_t>(i)];
    const auto extra = options.allow_ground_truth ? 0 : 1;
    auto neighbors = model_index.query(codes.row(i).transpose(), static_cast<std::size_t>(options.k + extra),
                                       std::string(to_string(products.types[static_cast<std::size_t>(i)])));
    auto& list = candidates[static_cast<std::size_t>(i)];
    for (const auto& nb : neighbors) {
      if (!options.allow_ground_truth && nb.id == id) continue;
      if (static_cast<int>(list.size()) < options.k) list.push_back(nb.id);
    }
    if (list.empty()) {
      log::info("match: product ", id, " has no same-type candidates; skipped");
      continue;
    }
    usable.push_back(static_cast<std::size_t>(i));
  }
  if (usable.empty() && options.n > 0) throw DataError("match: no product has a same-type candidate model");
  Rng rng(derive_seed(options.seed, 0x4D41));
  for (int j = 0; j < options.n; ++j) {
    const auto p = usable[rng.index(usable.size())];
    const auto& list = candidates[p];
    set.pairs.emplace_back(products.ids[p], list[rng.index(list.size())]);
  }
  return set;
}

TestPairSet build_matched_pairs(const CorpusTensors& products, const CorpusTensors& models,
                                smn::SmnNet& net, const MatchOptions& options) {
  return build_matched_pairs(products, build_model_index(net, models), net, options);
}

TestPairSet build_random_pairs(const CorpusTensors& products, const CorpusTensors& models, int n,
                               std::uint64_t seed, bool allow_ground_truth) {
  if (n < 0) throw ConfigError("pair count must be >= 0");
  TestPairSet set;
  set.mode = PairMode::random;
  if (n == 0) return set;
  std::map<GarmentType, std::vector<std::size_t>> by_type;
  for (std::size_t i = 0; i < models.types.size(); ++i) by_type[models.types[i]].push_back(i);
  std::vector<std::size_t> usable;
  for (std::size_t i = 0; i < products.ids.size(); ++i) {
    const auto it = by_type.find(products.types[i]);
    if (it == by_type.end()) continue;
    const bool only_self = it->second.size() == 1 && models.ids[it->second.front()] == products.ids[i];
    if (!allow_ground_truth && only_self) continue;
    usable.push_back(i);
  }
  if (usable.empty()) throw DataError("random pairs: no product has a same-type model");
  Rng rng(derive_seed(seed, 0x5241));
  for (int j = 0; j < n; ++j) {
    const auto p = usable[rng.index(usable.size())];
    const auto& pool = by_type[products.types[p]];
    std::size_t m = pool[rng.index(pool.size())];
    while (!allow_ground_truth && models.ids[m] == products.ids[p]) m = pool[rng.index(pool.size())];
    set.pairs.emplace_back(products.ids[p], models.ids[m]);
  }
  return set;
}

}  // namespace vto::retrieval
