#pragma once

#include <json.hpp>
#include <torch/torch.h>

#include <filesystem>
#include <string>
#include <vector>

namespace vto {

/// Per-step loss table; written as CSV with a `step` column first.
struct LossHistory {
  std::vector<std::string> columns;  // loss names, excluding `step`
  std::vector<std::int64_t> steps;
  std::vector<std::vector<double>> rows;

  void append(std::int64_t step, std::vector<double> values);
  std::size_t size() const { return steps.size(); }
  /// Column by name.
  std::vector<double> column(const std::string& name) const;
  void write_csv(const std::filesystem::path& path) const;
  /// Truncates to entries with step < `step`.
  void truncate(std::int64_t step);
};

struct CheckpointMeta {
  std::string kind;     // "smn", "warper" or "mtn"
  std::string version;  // code version string
  nlohmann::json config;
  std::int64_t step = 0;
};

/// Single-file archive: weights, optimizer state, loss history, config snapshot.
void save_checkpoint(const std::filesystem::path& path, const CheckpointMeta& meta,
                     const torch::nn::Module& module, const torch::optim::Optimizer* optimizer,
                     const LossHistory& history);

CheckpointMeta read_checkpoint_meta(const std::filesystem::path& path);

/// Restores weights (and optimizer state / history when given) into prebuilt objects.
void load_checkpoint(const std::filesystem::path& path, torch::nn::Module& module,
                     torch::optim::Optimizer* optimizer, LossHistory* history);

}  // namespace vto
