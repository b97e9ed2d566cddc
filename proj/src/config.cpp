#include "vto/config.hpp"

#include "vto/errors.hpp"

#include <cctype>
#include <fstream>
#include <functional>
#include <sstream>

namespace vto {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string strip_comment(const std::string& line) {
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') quoted = !quoted;
    if (line[i] == '#' && !quoted) return line.substr(0, i);
  }
  return line;
}

bool valid_key(const std::string& k) {
  if (k.empty()) return false;
  for (char c : k) {
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_' && c != '-') return false;
  }
  return true;
}

nlohmann::json parse_value(const std::string& raw, const std::string& where) {
  const auto v = trim(raw);
  if (v.empty()) throw ConfigError(where + ": missing value");
  if (v == "true") return true;
  if (v == "false") return false;
  if (v.front() == '"') {
    if (v.size() < 2 || v.back() != '"') throw ConfigError(where + ": unterminated string");
    const auto body = v.substr(1, v.size() - 2);
    if (body.find('"') != std::string::npos || body.find('\\') != std::string::npos) {
      throw ConfigError(where + ": escapes and embedded quotes are not supported");
    }
    return body;
  }
  if (v.front() == '[') {
    if (v.back() != ']') throw ConfigError(where + ": unterminated array");
    nlohmann::json arr = nlohmann::json::array();
    const auto body = trim(v.substr(1, v.size() - 2));
    if (body.empty()) return arr;
    std::stringstream ss(body);
    std::string item;
    while (std::getline(ss, item, ',')) {
      if (trim(item).empty()) continue;  // trailing comma
      arr.push_back(parse_value(item, where));
    }
    return arr;
  }
  std::string num;
  for (char c : v) {
    if (c != '_') num.push_back(c);
  }
  try {
    std::size_t used = 0;
    if (num.find_first_of(".eE") == std::string::npos || num.find("inf") != std::string::npos) {
      const long long i = std::stoll(num, &used);
      if (used == num.size()) return i;
    } else {
      const double d = std::stod(num, &used);
      if (used == num.size()) return d;
    }
  } catch (const std::exception&) {
  }
  throw ConfigError(where + ": cannot parse value \"" + v + "\"");
}

}  // namespace

nlohmann::json parse_toml(const std::string& text) {
  nlohmann::json doc = nlohmann::json::object();
  nlohmann::json* section = &doc;
  std::stringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto where = "config line " + std::to_string(line_no);
    const auto content = trim(strip_comment(line));
    if (content.empty()) continue;
    if (content.front() == '[') {
      if (content.back() != ']') throw ConfigError(where + ": malformed section header");
      const auto name = trim(content.substr(1, content.size() - 2));
      if (!valid_key(name)) throw ConfigError(where + ": invalid section name \"" + name + "\"");
      if (doc.contains(name)) throw ConfigError(where + ": duplicate section [" + name + "]");
      doc[name] = nlohmann::json::object();
      section = &doc[name];
      continue;
    }
    const auto eq = content.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
    const auto key = trim(content.substr(0, eq));
    if (!valid_key(key)) throw ConfigError(where + ": invalid key \"" + key + "\"");
    if (section->contains(key)) throw ConfigError(where + ": duplicate key \"" + key + "\"");
    (*section)[key] = parse_value(content.substr(eq + 1), where);
  }
  return doc;
}

namespace {

struct Field {
  std::function<nlohmann::json()> get;
  std::function<void(const nlohmann::json&)> set;
};

template <typename T>
Field bind(T& ref) {
  return {[&ref] { return nlohmann::json(ref); },
          [&ref](const nlohmann::json& v) {
            if constexpr (std::is_same_v<T, bool>) {
              if (!v.is_boolean()) throw ConfigError("expected a boolean");
            } else if constexpr (std::is_integral_v<T>) {
              if (!v.is_number_integer()) throw ConfigError("expected an integer");
              if (std::is_unsigned_v<T> && v.get<long long>() < 0) throw ConfigError("expected a non-negative integer");
            } else if constexpr (std::is_floating_point_v<T>) {
              if (!v.is_number()) throw ConfigError("expected a number");
            } else if constexpr (std::is_same_v<T, std::string>) {
              if (!v.is_string()) throw ConfigError("expected a string");
            }
            ref = v.get<T>();
          }};
}

using FieldTable = std::vector<std::pair<std::string, std::vector<std::pair<std::string, Field>>>>;

FieldTable fields(RunConfig& c) {
  auto& s = c.smn;
  auto& m = c.mtn;
  return {
      {"", {{"seed", bind(c.seed)}, {"log_level", bind(c.log_level)}}},
      {"corpus",
       {{"count", bind(c.corpus.count)},
        {"image_size", bind(c.corpus.image_size)},
        {"two_component", bind(c.corpus.two_component)},
        {"split_ratio", bind(c.corpus.split_ratio)}}},
      {"smn",
       {{"shape_dim", bind(s.net.shape_dim)},
        {"visual_dim", bind(s.net.visual_dim)},
        {"attention_grid", bind(s.net.attention_grid)},
        {"width", bind(s.net.width)},
        {"margin", bind(s.net.margin)},
        {"lambda_reg", bind(s.net.lambda_reg)},
        {"steps", bind(s.steps)},
        {"batch_size", bind(s.batch_size)},
        {"learning_rate", bind(s.learning_rate)}}},
      {"mtn",
       {{"k", bind(m.net.warper.k)},
        {"warper_width", bind(m.net.warper.width)},
        {"unet_levels", bind(m.net.unet_levels)},
        {"unet_width", bind(m.net.unet_width)},
        {"beta", bind(m.net.beta)},
        {"alpha", bind(m.net.alpha)},
        {"lambda_valid", bind(m.net.weights.valid)},
        {"lambda_hole", bind(m.net.weights.hole)},
        {"lambda_perceptual", bind(m.net.weights.perceptual)},
        {"lambda_style", bind(m.net.weights.style)},
        {"lambda_tv", bind(m.net.weights.tv)},
        {"steps", bind(m.steps)},
        {"batch_size", bind(m.batch_size)},
        {"learning_rate", bind(m.learning_rate)}}},
      {"match",
       {{"k", bind(c.match.k)},
        {"n", bind(c.match.n)},
        {"allow_ground_truth", bind(c.match.allow_ground_truth)},
        {"modes", bind(c.match.modes)}}},
      {"eval",
       {{"fid_sizes", bind(c.eval.fid_sizes)},
        {"extractor_seed", bind(c.eval.extractor_seed)},
        {"batch_size", bind(c.eval.batch_size)}}},
  };
}

Field* find_field(FieldTable& table, const std::string& section, const std::string& key) {
  for (auto& [name, entries] : table) {
    if (name != section) continue;
    for (auto& [k, f] : entries) {
      if (k == key) return &f;
    }
  }
  return nullptr;
}

void set_field(FieldTable& table, const std::string& section, const std::string& key, const nlohmann::json& v) {
  const auto label = section.empty() ? key : section + "." + key;
  auto* f = find_field(table, section, key);
  if (f == nullptr) throw ConfigError("unknown config key \"" + label + "\"");
  try {
    f->set(v);
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("config key \"" + label + "\": wrong value type");
  } catch (const ConfigError& e) {
    throw ConfigError("config key \"" + label + "\": " + e.what());
  }
}

}  // namespace

nlohmann::json RunConfig::to_json() const {
  auto& self = const_cast<RunConfig&>(*this);
  auto table = fields(self);
  nlohmann::ordered_json out;
  for (auto& [name, entries] : table) {
    for (auto& [k, f] : entries) {
      if (name.empty()) {
        out[k] = f.get();
      } else {
        out[name][k] = f.get();
      }
    }
  }
  return nlohmann::json::parse(out.dump());
}

void RunConfig::apply(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config document must be a table");
  auto table = fields(*this);
  for (const auto& [key, value] : j.items()) {
    if (value.is_object()) {
      bool known = false;
      for (const auto& entry : table) known = known || entry.first == key;
      if (!known || key.empty()) throw ConfigError("unknown config section [" + key + "]");
      for (const auto& [k, v] : value.items()) set_field(table, key, k, v);
    } else {
      set_field(table, "", key, value);
    }
  }
  validate();
}

void RunConfig::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override \"" + assignment + "\" must look like section.key=value");
  const auto path = trim(assignment.substr(0, eq));
  const auto dot = path.find('.');
  auto value = parse_value(assignment.substr(eq + 1), "override " + path);
  auto table = fields(*this);
  if (dot == std::string::npos) {
    set_field(table, "", path, value);
  } else {
    set_field(table, path.substr(0, dot), path.substr(dot + 1), value);
  }
  validate();
}

void RunConfig::validate() const {
  if (corpus.count < 1) throw ConfigError("corpus.count must be >= 1");
  if (corpus.image_size < 32) throw ConfigError("corpus.image_size must be >= 32");
  if (corpus.split_ratio < 0.0 || corpus.split_ratio > 1.0) throw ConfigError("corpus.split_ratio must lie in [0, 1]");
  if (smn.steps < 0 || mtn.steps < 0) throw ConfigError("training steps must be >= 0");
  if (smn.batch_size < 1 || mtn.batch_size < 1 || eval.batch_size < 1) throw ConfigError("batch sizes must be >= 1");
  if (smn.learning_rate <= 0.0 || mtn.learning_rate <= 0.0) throw ConfigError("learning rates must be > 0");
  if (mtn.net.warper.k < 1) throw ConfigError("mtn.k must be >= 1");
  if (mtn.net.beta < 0.0 || mtn.net.alpha < 0.0) throw ConfigError("mtn.beta and mtn.alpha must be >= 0");
  const auto& w = mtn.net.weights;
  if (w.valid < 0 || w.hole < 0 || w.perceptual < 0 || w.style < 0 || w.tv < 0) {
    throw ConfigError("inpainting loss weights must be >= 0");
  }
  if (match.k < 1) throw ConfigError("match.k must be >= 1");
  if (match.n < 0) throw ConfigError("match.n must be >= 0");
  for (const auto& mode : match.modes) {
    if (mode != "random" && mode != "matched_color" && mode != "matched_grayscale") {
      throw ConfigError("match.modes: unknown mode \"" + mode + "\"");
    }
  }
  if (eval.fid_sizes < 2) throw ConfigError("eval.fid_sizes must be >= 2");
  if (log_level != "debug" && log_level != "info" && log_level != "warn" && log_level != "error") {
    throw ConfigError("log_level must be one of debug, info, warn, error");
  }
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  RunConfig c;
  c.apply(parse_toml(ss.str()));
  return c;
}

}  // namespace vto
