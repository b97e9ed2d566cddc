#include "vto/cli.hpp"

#include "vto/config.hpp"
#include "vto/errors.hpp"
#include "vto/image.hpp"
#include "vto/log.hpp"
#include "vto/report.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

namespace fs = std::filesystem;

namespace vto::cli {

namespace {

struct Globals {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::string log_level;
};

struct Paths {
  std::string manifest;
  std::string run_dir;
};

log::Level parse_level(const std::string& s) {
  if (s == "debug") return log::Level::debug;
  if (s == "warn") return log::Level::warn;
  if (s == "error") return log::Level::error;
  return log::Level::info;
}

/// Defaults, then the run directory's snapshot (if any and no --config), then --config,
/// --set overrides and --seed.
RunConfig effective_config(const Globals& g, const std::string& run_dir) {
  RunConfig c;
  const auto snapshot = run_dir.empty() ? fs::path() : fs::path(run_dir) / "config.snapshot";
  if (!g.config_path.empty()) {
    c = RunConfig::load(g.config_path);
  } else if (!snapshot.empty() && fs::exists(snapshot)) {
    std::ifstream in(snapshot);
    auto j = nlohmann::json::parse(in);
    c.apply(j.at("config"));
  }
  for (const auto& o : g.overrides) c.apply_override(o);
  if (g.seed) c.seed = *g.seed;
  if (!g.log_level.empty()) c.log_level = g.log_level;
  c.validate();
  log::set_level(parse_level(c.log_level));
  return c;
}

nlohmann::json snapshot_json(const RunConfig& c) { return {{"version", kVersion}, {"config", c.to_json()}}; }

void prepare_run_dir(const fs::path& run_dir, const RunConfig& c) {
  for (const char* sub : {"checkpoints", "reports", "samples"}) fs::create_directories(run_dir / sub);
  std::ofstream out(run_dir / "config.snapshot");
  if (!out) throw std::runtime_error("cannot write " + (run_dir / "config.snapshot").string());
  out << snapshot_json(c).dump(2) << '\n';
  log::set_file((run_dir / "run.log").string());
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

/// Loads the manifest and takes the train or test side of the configured split.
CorpusTensors load_split(const std::string& manifest_path, RunConfig& c, bool train, bool with_contours) {
  const auto manifest = load_manifest(manifest_path);
  if (manifest.height != manifest.width) throw DataError("manifest images must be square");
  if (manifest.height != c.corpus.image_size) {
    log::info("using manifest resolution ", manifest.height, " (config had ", c.corpus.image_size, ")");
    c.corpus.image_size = manifest.height;
  }
  auto [tr, te] = split_records(manifest, c.corpus.split_ratio, c.seed);
  const auto& side = train ? tr : te;
  if (side.records.empty()) throw DataError(std::string(train ? "train" : "test") + " split is empty");
  log::info("loaded ", side.records.size(), " ", train ? "train" : "test", " records from ", manifest_path);
  return load_corpus(side, with_contours);
}

std::map<std::string, std::string> png_text(const RunConfig& c) {
  return {{"vto-version", kVersion}, {"vto-config", c.to_json().dump()}};
}

fs::path checkpoint(const Paths& p, const char* name) { return fs::path(p.run_dir) / "checkpoints" / name; }

void progress_line(const fs::path& path, std::int64_t step, const std::vector<double>& losses) {
  std::ofstream out(path, std::ios::app);
  out << "{\"step\":" << step << ",\"losses\":[";
  for (std::size_t i = 0; i < losses.size(); ++i) out << (i ? "," : "") << losses[i];
  out << "]}\n";
}

int cmd_gen(const Globals& g, const std::string& out_dir, std::optional<int> count, std::optional<int> size,
            bool two) {
  auto c = effective_config(g, "");
  if (count) c.corpus.count = *count;
  if (size) c.corpus.image_size = *size;
  if (two) c.corpus.two_component = true;
  c.validate();
  SyntheticOptions o{c.corpus.count, c.corpus.image_size, c.corpus.two_component, c.seed};
  const auto m = generate_synthetic_corpus(out_dir, o);
  write_json(fs::path(out_dir) / "config.snapshot", snapshot_json(c));
  log::info("wrote ", m.records.size(), " records to ", out_dir);
  return 0;
}

int cmd_train_smn(const Globals& g, const Paths& p, std::optional<int> steps, const std::string& resume) {
  auto c = effective_config(g, p.run_dir);
  if (steps) c.smn.steps = *steps;
  auto corpus = load_split(p.manifest, c, true, true);
  prepare_run_dir(p.run_dir, c);
  smn::SmnTrainOptions o;
  o.net = c.smn.net;
  o.net.image_size = c.corpus.image_size;
  o.steps = c.smn.steps;
  o.batch_size = c.smn.batch_size;
  o.learning_rate = c.smn.learning_rate;
  o.seed = c.seed;
  o.checkpoint = checkpoint(p, "smn.pt");
  if (!resume.empty()) o.resume_from = resume;
  o.extra_config = c.to_json();
  const auto progress = fs::path(p.run_dir) / "reports" / "smn_progress.jsonl";
  o.on_step = [&](std::int64_t step, const std::vector<double>& l) {
    progress_line(progress, step, l);
    if (step % 50 == 0) log::info("smn step ", step, " total ", l.back());
  };
  auto result = smn::train_smn(corpus, o);
  result.history.write_csv(fs::path(p.run_dir) / "reports" / "smn_history.csv");
  log::info("wrote ", o.checkpoint->string());
  return 0;
}

int cmd_train_mtn(const Globals& g, const Paths& p, std::optional<int> steps, const std::string& resume) {
  auto c = effective_config(g, p.run_dir);
  if (steps) c.mtn.steps = *steps;
  auto corpus = load_split(p.manifest, c, true, false);
  prepare_run_dir(p.run_dir, c);
  inpaint::MtnTrainOptions o;
  o.net = c.mtn.net;
  o.net.warper.image_size = c.corpus.image_size;
  o.net.extractor_seed = c.eval.extractor_seed;
  o.steps = c.mtn.steps;
  o.batch_size = c.mtn.batch_size;
  o.learning_rate = c.mtn.learning_rate;
  o.seed = c.seed;
  o.checkpoint = checkpoint(p, "mtn.pt");
  if (!resume.empty()) o.resume_from = resume;
  o.extra_config = c.to_json();
  const auto progress = fs::path(p.run_dir) / "reports" / "mtn_progress.jsonl";
  o.on_step = [&](std::int64_t step, const std::vector<double>& l) {
    progress_line(progress, step, l);
    if (step % 50 == 0) log::info("mtn step ", step, " total ", l.back());
  };
  auto result = inpaint::train_mtn(corpus, o);
  result.history.write_csv(fs::path(p.run_dir) / "reports" / "mtn_history.csv");
  log::info("wrote ", o.checkpoint->string());
  return 0;
}

int cmd_build_index(const Globals& g, const Paths& p) {
  auto c = effective_config(g, p.run_dir);
  auto corpus = load_split(p.manifest, c, false, false);
  prepare_run_dir(p.run_dir, c);
  auto net = smn::load_smn(checkpoint(p, "smn.pt"));
  auto index = retrieval::build_model_index(net, corpus);
  index.metadata = snapshot_json(c);
  index.save(checkpoint(p, "model_index.bin"));
  log::info("indexed ", index.size(), " model images");
  return 0;
}

int cmd_match(const Globals& g, const Paths& p, const std::string& out) {
  auto c = effective_config(g, p.run_dir);
  auto corpus = load_split(p.manifest, c, false, false);
  prepare_run_dir(p.run_dir, c);
  std::vector<retrieval::TestPairSet> sets;
  std::optional<smn::SmnNet> net;
  std::optional<retrieval::EmbeddingIndex> index;
  for (const auto& mode_name : c.match.modes) {
    const auto mode = retrieval::parse_pair_mode(mode_name);
    if (mode == retrieval::PairMode::random) {
      sets.push_back(retrieval::build_random_pairs(corpus, corpus, c.match.n, c.seed, c.match.allow_ground_truth));
      continue;
    }
    if (!net) net = smn::load_smn(checkpoint(p, "smn.pt"));
    if (!index) {
      const auto path = checkpoint(p, "model_index.bin");
      index = fs::exists(path) ? retrieval::EmbeddingIndex::load(path) : retrieval::build_model_index(*net, corpus);
    }
    retrieval::MatchOptions mo{c.match.k, mode == retrieval::PairMode::matched_grayscale, c.match.n, c.seed,
                               c.match.allow_ground_truth};
    sets.push_back(retrieval::build_matched_pairs(corpus, *index, *net, mo));
  }
  const fs::path path = out.empty() ? fs::path(p.run_dir) / "reports" / "pairs.csv" : fs::path(out);
  std::ofstream csv(path);
  if (!csv) throw std::runtime_error("cannot write " + path.string());
  csv << "product_id,model_id,mode\n";
  for (const auto& s : sets) {
    for (const auto& [a, b] : s.pairs) csv << a << ',' << b << ',' << retrieval::to_string(s.mode) << '\n';
  }
  log::info("wrote pairs to ", path.string());
  return 0;
}

int cmd_synthesize(const Globals& g, const Paths& p, const std::string& product_id, const std::string& model_id,
                   const std::string& out) {
  auto c = effective_config(g, p.run_dir);
  const auto manifest = load_manifest(p.manifest);
  const auto corpus = load_corpus(manifest, false);
  const auto pi = corpus.find(product_id);
  const auto mi = corpus.find(model_id);
  if (!pi || !mi) throw DataError("synthesize: unknown id " + (!pi ? product_id : model_id));
  prepare_run_dir(p.run_dir, c);
  auto net = inpaint::load_mtn(checkpoint(p, "mtn.pt"));
  auto s = inpaint::synthesize(net, corpus.products[*pi], corpus.models[*mi], corpus.masks[*mi]);
  const fs::path dir = out.empty() ? fs::path(p.run_dir) / "samples" : fs::path(out);
  fs::create_directories(dir);
  const auto stem = product_id + "_on_" + model_id;
  const auto text = png_text(c);
  write_png(dir / (stem + ".png"), s.image, text);
  write_png(dir / (stem + "_raw.png"), s.raw, text);
  nlohmann::json thetas = nlohmann::json::array();
  for (std::size_t i = 0; i < s.bundle.thetas.size(); ++i) {
    write_png(dir / (stem + "_warp" + std::to_string(i + 1) + ".png"), s.bundle.warps[static_cast<std::int64_t>(i)], text);
    thetas.push_back(s.bundle.thetas[i].m);
  }
  write_json(dir / (stem + ".json"), {{"product_id", product_id},
                                      {"model_id", model_id},
                                      {"thetas", thetas},
                                      {"warp_losses", s.warp_losses},
                                      {"version", kVersion},
                                      {"config", c.to_json()}});
  log::info("wrote ", (dir / (stem + ".png")).string());
  return 0;
}

int cmd_evaluate(const Globals& g, const Paths& p, const std::string& pairs_path, const std::string& label) {
  auto c = effective_config(g, p.run_dir);
  const auto manifest = load_manifest(p.manifest);
  c.corpus.image_size = manifest.height;
  auto [tr, te] = split_records(manifest, c.corpus.split_ratio, c.seed);
  auto test = load_corpus(te, false);
  prepare_run_dir(p.run_dir, c);
  const fs::path pairs = pairs_path.empty() ? fs::path(p.run_dir) / "reports" / "pairs.csv" : fs::path(pairs_path);
  const auto sets = retrieval::read_pairs_csv(pairs);
  auto net = inpaint::load_mtn(checkpoint(p, "mtn.pt"));
  // Real pool: every model image of the manifest.
  const auto all = load_corpus(manifest, false);
  const eval::RandomConvExtractor extractor(c.eval.extractor_seed);
  eval::EvalOptions eo{c.eval.fid_sizes, c.seed, c.eval.batch_size};
  auto report = eval::evaluate_run(sets, net, test, all.models, extractor, eo);
  report.config = c.to_json();
  const auto dir = fs::path(p.run_dir) / "reports";
  report.write_json(dir / "eval.json");
  report.write_csv(dir / "eval.csv", label);
  std::cout << eval::format_report_table({{label, report}});
  return 0;
}

int cmd_report(const Globals& g, const std::vector<std::string>& run_dirs) {
  (void)effective_config(g, "");
  std::vector<std::pair<std::string, eval::EvalReport>> reports;
  for (const auto& dir : run_dirs) {
    const auto path = fs::path(dir) / "reports" / "eval.json";
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    reports.emplace_back(fs::path(dir).filename().string(), eval::EvalReport::from_json(nlohmann::json::parse(in)));
  }
  const auto table = eval::format_report_table(reports);
  std::cout << table;
  std::ofstream(fs::path(run_dirs.front()) / "reports" / "summary.txt") << table;
  return 0;
}

}  // namespace

int dispatch(int argc, char** argv) {
  CLI::App app{"Shape-matched multi-warp virtual try-on (desk scale)", "vto"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  app.add_option("--config", g.config_path, "TOML run config");
  app.add_option("--set", g.overrides, "Override a config key: section.key=value (repeatable)");
  app.add_option("--seed", g.seed, "Seed for all randomness");
  app.add_option("--log-level", g.log_level, "debug, info, warn or error");

  auto add_paths = [](CLI::App* sub, Paths& p, bool manifest) {
    if (manifest) sub->add_option("--manifest", p.manifest, "Manifest (JSON lines)")->required()->check(CLI::ExistingFile);
    sub->add_option("--run-dir", p.run_dir, "Run directory")->required();
  };

  std::string out_dir;
  std::optional<int> count, size, steps;
  bool two = false;
  auto* gen = app.add_subcommand("gen-synthetic", "Generate the synthetic corpus");
  gen->add_option("--out", out_dir, "Output directory")->required();
  gen->add_option("--count", count, "Number of records");
  gen->add_option("--size", size, "Image size in pixels");
  gen->add_flag("--two-component", two, "Split each garment into two displaced halves");

  Paths smn_p, mtn_p, idx_p, match_p, syn_p, eval_p;
  std::string resume, pairs_out, product_id, model_id, syn_out, pairs_in, label = "ours";
  auto* tsmn = app.add_subcommand("train-smn", "Train the shape matching net");
  add_paths(tsmn, smn_p, true);
  tsmn->add_option("--steps", steps, "Training steps");
  tsmn->add_option("--resume", resume, "Checkpoint to resume from")->check(CLI::ExistingFile);

  auto* tmtn = app.add_subcommand("train-mtn", "Train the multi-warp try-on net");
  add_paths(tmtn, mtn_p, true);
  tmtn->add_option("--steps", steps, "Training steps");
  tmtn->add_option("--resume", resume, "Checkpoint to resume from")->check(CLI::ExistingFile);

  auto* bidx = app.add_subcommand("build-index", "Index test-split model images in shape space");
  add_paths(bidx, idx_p, true);

  auto* match = app.add_subcommand("match", "Build random / matched test pairs");
  add_paths(match, match_p, true);
  match->add_option("--out", pairs_out, "Pair CSV (default <run-dir>/reports/pairs.csv)");

  auto* syn = app.add_subcommand("synthesize", "Put one product on one model image");
  add_paths(syn, syn_p, true);
  syn->add_option("--product", product_id, "Product id")->required();
  syn->add_option("--model", model_id, "Model id")->required();
  syn->add_option("--out", syn_out, "Output directory (default <run-dir>/samples)");

  auto* ev = app.add_subcommand("evaluate", "Score synthesized test pairs");
  add_paths(ev, eval_p, true);
  ev->add_option("--pairs", pairs_in, "Pair CSV (default <run-dir>/reports/pairs.csv)");
  ev->add_option("--label", label, "Row label in the report");

  std::vector<std::string> report_dirs;
  auto* rep = app.add_subcommand("report", "Tabulate evaluation reports of one or more runs");
  rep->add_option("run_dirs", report_dirs, "Run directories")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) return cmd_gen(g, out_dir, count, size, two);
    if (tsmn->parsed()) return cmd_train_smn(g, smn_p, steps, resume);
    if (tmtn->parsed()) return cmd_train_mtn(g, mtn_p, steps, resume);
    if (bidx->parsed()) return cmd_build_index(g, idx_p);
    if (match->parsed()) return cmd_match(g, match_p, pairs_out);
    if (syn->parsed()) return cmd_synthesize(g, syn_p, product_id, model_id, syn_out);
    if (ev->parsed()) return cmd_evaluate(g, eval_p, pairs_in, label);
    if (rep->parsed()) return cmd_report(g, report_dirs);
  } catch (const ConfigError& e) {
    log::error(e.what());
    return 1;
  } catch (const std::exception& e) {
    log::error(e.what());
    return 2;
  }
  return 1;
}

}  // namespace vto::cli
