#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "cloud/control.hpp"
#include "cloud/dataset.hpp"
#include "cloud/eval.hpp"
#include "cloud/models.hpp"
#include "cloud/trainer.hpp"

namespace cloud::io {

using Json = nlohmann::json;

/// Malformed or unsupported artifact content.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid experiment configuration (unknown keys, bad values, missing paths).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline constexpr const char* kDatasetVersion = "cloud-dataset v1";
inline constexpr const char* kCheckpointVersion = "cloud-checkpoint v1";
inline constexpr const char* kDemoVersion = "cloud-demo v1";
inline constexpr const char* kEpisodesVersion = "cloud-episodes v1";
inline constexpr const char* kMetricsVersion = "cloud-metrics v1";

/// Shortest decimal that parses back to the same double.
std::string format_double(double value);
double parse_double(std::string_view text);

// Config echoes. Readers reject unknown keys; missing keys keep defaults.
Json to_json(const rope::EnvConfig& env);
rope::EnvConfig env_from_json(const Json& j);
Json to_json(const train::TrainConfig& config);
train::TrainConfig train_config_from_json(const Json& j);
Json to_json(const model::Architecture& arch);
model::Architecture architecture_from_json(const Json& j);

// Dataset: header line "cloud-dataset v1 <json>", then one line per transition:
// trajectory step, s_t coords, action, s_{t+1} coords, space separated.
void write_dataset(std::ostream& out, const data::Dataset& dataset);
data::Dataset read_dataset(std::istream& in);
void save_dataset(const std::filesystem::path& path, const data::Dataset& dataset);
data::Dataset load_dataset(const std::filesystem::path& path);

// Checkpoint: version line, one JSON header line, then little-endian f64
// payload in the header's tensor order.
struct Checkpoint {
  model::ModelBundle bundle;
  train::TrainConfig train;
};

void write_checkpoint(std::ostream& out, const model::ModelBundle& bundle,
                      const train::TrainConfig& train);
Checkpoint read_checkpoint(std::istream& in);
void save_checkpoint(const std::filesystem::path& path, const model::ModelBundle& bundle,
                     const train::TrainConfig& train);
Checkpoint load_checkpoint(const std::filesystem::path& path);

Json to_json(const control::Demo& demo);
control::Demo demo_from_json(const Json& j);

Json to_json(const control::EpisodeRecord& record);
Json episodes_to_json(const std::vector<control::EpisodeRecord>& records);

void write_loss_csv(std::ostream& out, const std::vector<train::EpochLoss>& curve);
/// Columns: method, env_mode, goal_kind, seed, episodes, successes, success_rate, mean_geom_error.
void write_metrics_csv(std::ostream& out, const std::vector<eval::MetricRow>& rows);
Json metrics_to_json(const std::vector<eval::MetricRow>& rows);

/// Writes `text` to `path`, creating parent directories.
void write_text(const std::filesystem::path& path, const std::string& text);

/// Binary PGM of the observation raster, for frame dumps.
std::string render_pgm(const rope::RopeState& state, std::size_t image_size);

struct DataConfig {
  std::size_t trajectories = 2000;
  std::size_t length = 20;
};

/// Checkpoint paths keyed by env mode, for one evaluated method.
using ModePaths = std::map<rope::EnvMode, std::filesystem::path>;

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "runs";
  rope::EnvConfig env;
  DataConfig data;
  train::TrainConfig train;
  control::PlanConfig plan;
  eval::SuiteConfig suite;
  /// Method name -> checkpoints for the eval subcommand.
  std::map<std::string, ModePaths> checkpoints;
  /// Training datasets for the nearest-neighbor baseline.
  ModePaths datasets;
};

/// Relative paths resolve against `base_dir`; every referenced path must exist.
ExperimentConfig experiment_from_json(const Json& j, const std::filesystem::path& base_dir);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

}  // namespace cloud::io
