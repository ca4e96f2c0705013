#include "cloud/io.hpp"

#include <array>
#include <bit>
#include <charconv>
#include <fstream>
#include <sstream>

#include "cloud/observation.hpp"

namespace cloud::io {

namespace fs = std::filesystem;

std::string format_double(double value) {
  std::array<char, 32> buf{};
  const auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), value);
  if (ec != std::errc{}) throw FormatError("cannot format double");
  return std::string(buf.data(), end);
}

double parse_double(std::string_view text) {
  double value = 0.0;
  const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || end != text.data() + text.size()) {
    throw FormatError("not a number: '" + std::string(text) + "'");
  }
  return value;
}

namespace {

template <typename E>
void check_keys(const Json& j, std::initializer_list<std::string_view> allowed, std::string_view where) {
  if (!j.is_object()) throw E(std::string(where) + ": expected an object");
  for (const auto& [key, _] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw E(std::string(where) + ": unknown key '" + key + "'");
    }
  }
}

template <typename T>
void read_key(const Json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

Json coords_json(const rope::RopeState& s) {
  Json out = Json::array();
  for (const auto& g : s.geoms) {
    out.push_back(g.x);
    out.push_back(g.y);
  }
  return out;
}

rope::RopeState coords_from_json(const Json& j) {
  const auto values = j.get<std::vector<double>>();
  if (values.size() % 2 != 0) throw FormatError("odd number of coordinates");
  rope::RopeState s;
  for (std::size_t i = 0; i < values.size(); i += 2) s.geoms.push_back({values[i], values[i + 1]});
  return s;
}

}  // namespace

Json to_json(const rope::EnvConfig& env) {
  return {{"mode", rope::to_string(env.mode)},
          {"noise_sigma", env.noise_sigma},
          {"pick_radius", env.pick_radius},
          {"segment_length", env.segment_length},
          {"image_size", env.image_size},
          {"geom_count", env.geom_count},
          {"burn_in", env.burn_in},
          {"goal_max_rotation", env.goal_max_rotation},
          {"goal_max_shift", env.goal_max_shift},
          {"seed", env.seed}};
}

rope::EnvConfig env_from_json(const Json& j) {
  check_keys<ConfigError>(j,
                          {"mode", "noise_sigma", "pick_radius", "segment_length", "image_size",
                           "geom_count", "burn_in", "goal_max_rotation", "goal_max_shift", "seed"},
                          "env");
  rope::EnvConfig env;
  if (j.contains("mode")) env.mode = rope::parse_env_mode(j.at("mode").get<std::string>());
  read_key(j, "noise_sigma", env.noise_sigma);
  read_key(j, "pick_radius", env.pick_radius);
  read_key(j, "segment_length", env.segment_length);
  read_key(j, "image_size", env.image_size);
  read_key(j, "geom_count", env.geom_count);
  read_key(j, "burn_in", env.burn_in);
  read_key(j, "goal_max_rotation", env.goal_max_rotation);
  read_key(j, "goal_max_shift", env.goal_max_shift);
  read_key(j, "seed", env.seed);
  return env;
}

Json to_json(const train::TrainConfig& c) {
  return {{"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate},
          {"weight_decay", c.weight_decay},
          {"epochs", c.epochs},
          {"temperature", c.temperature},
          {"decoder_weight", c.decoder_weight},
          {"variant", model::to_string(c.variant)},
          {"objective", train::to_string(c.objective)},
          {"denominator", train::to_string(c.denominator)},
          {"obs_kind", rope::to_string(c.obs_kind)},
          {"seed", c.seed}};
}

train::TrainConfig train_config_from_json(const Json& j) {
  check_keys<ConfigError>(j,
                          {"batch_size", "learning_rate", "weight_decay", "epochs", "temperature",
                           "decoder_weight", "variant", "objective", "denominator", "obs_kind",
                           "seed"},
                          "train");
  train::TrainConfig c;
  read_key(j, "batch_size", c.batch_size);
  read_key(j, "learning_rate", c.learning_rate);
  read_key(j, "weight_decay", c.weight_decay);
  read_key(j, "epochs", c.epochs);
  read_key(j, "temperature", c.temperature);
  read_key(j, "decoder_weight", c.decoder_weight);
  if (j.contains("variant")) {
    const auto v = j.at("variant").get<std::string>();
    if (v == "baseline") {
      c.variant = model::Variant::FI;
      c.objective = train::Objective::Regression;
    } else {
      c.variant = model::parse_variant(v);
    }
  }
  if (j.contains("objective")) c.objective = train::parse_objective(j.at("objective").get<std::string>());
  if (j.contains("denominator")) {
    c.denominator = train::parse_denominator(j.at("denominator").get<std::string>());
  }
  if (j.contains("obs_kind")) c.obs_kind = rope::parse_obs_kind(j.at("obs_kind").get<std::string>());
  read_key(j, "seed", c.seed);
  return c;
}

Json to_json(const model::Architecture& a) {
  return {{"variant", model::to_string(a.variant)},
          {"obs_kind", rope::to_string(a.obs_kind)},
          {"embed_dim", a.embed_dim},
          {"geom_count", a.geom_count},
          {"image_size", a.image_size},
          {"state_hidden", a.state_hidden},
          {"action_hidden", a.action_hidden}};
}

model::Architecture architecture_from_json(const Json& j) {
  check_keys<FormatError>(j,
                          {"variant", "obs_kind", "embed_dim", "geom_count", "image_size",
                           "state_hidden", "action_hidden"},
                          "architecture");
  model::Architecture a;
  a.variant = model::parse_variant(j.at("variant").get<std::string>());
  a.obs_kind = rope::parse_obs_kind(j.at("obs_kind").get<std::string>());
  a.embed_dim = j.at("embed_dim").get<std::size_t>();
  a.geom_count = j.at("geom_count").get<std::size_t>();
  a.image_size = j.at("image_size").get<std::size_t>();
  a.state_hidden = j.at("state_hidden").get<std::size_t>();
  a.action_hidden = j.at("action_hidden").get<std::size_t>();
  return a;
}

// ---------------------------------------------------------------------------
// Dataset

void write_dataset(std::ostream& out, const data::Dataset& d) {
  const Json header = {{"env", to_json(d.env)},
                       {"geom_count", d.env.geom_count},
                       {"seed", d.seed},
                       {"trajectories", d.trajectories},
                       {"length", d.length},
                       {"train_trajectories", d.train_trajectories},
                       {"records", d.records.size()}};
  out << kDatasetVersion << ' ' << header.dump() << '\n';
  std::string line;
  for (const auto& r : d.records) {
    line = std::to_string(r.trajectory) + ' ' + std::to_string(r.step);
    auto put = [&](double v) {
      line += ' ';
      line += format_double(v);
    };
    for (const auto& g : r.state.geoms) {
      put(g.x);
      put(g.y);
    }
    put(r.action.x1);
    put(r.action.y1);
    put(r.action.x2);
    put(r.action.y2);
    for (const auto& g : r.next_state.geoms) {
      put(g.x);
      put(g.y);
    }
    line += '\n';
    out << line;
  }
}

data::Dataset read_dataset(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError("dataset line 1: empty file");
  const std::string prefix = std::string(kDatasetVersion) + ' ';
  if (line.rfind(prefix, 0) != 0) {
    throw FormatError("dataset line 1: unsupported version '" + line.substr(0, line.find(' ', 14)) + "'");
  }
  data::Dataset d;
  std::size_t expected_records = 0;
  try {
    const Json header = Json::parse(line.substr(prefix.size()));
    check_keys<FormatError>(header,
                            {"env", "geom_count", "seed", "trajectories", "length",
                             "train_trajectories", "records"},
                            "dataset header");
    d.env = env_from_json(header.at("env"));
    if (header.at("geom_count").get<std::size_t>() != d.env.geom_count) {
      throw FormatError("geom_count disagrees with env echo");
    }
    d.seed = header.at("seed").get<std::uint64_t>();
    d.trajectories = header.at("trajectories").get<std::size_t>();
    d.length = header.at("length").get<std::size_t>();
    d.train_trajectories = header.at("train_trajectories").get<std::size_t>();
    expected_records = header.at("records").get<std::size_t>();
  } catch (const FormatError& e) {
    throw FormatError(std::string("dataset line 1: ") + e.what());
  } catch (const std::exception& e) {
    throw FormatError(std::string("dataset line 1: bad header: ") + e.what());
  }

  const std::size_t g = d.env.geom_count;
  const std::size_t fields = 2 + 4 * g + 4;
  std::size_t line_no = 1;
  std::vector<std::string_view> tokens;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    tokens.clear();
    std::string_view rest(line);
    while (!rest.empty()) {
      const auto space = rest.find(' ');
      tokens.push_back(rest.substr(0, space));
      if (space == std::string_view::npos) break;
      rest.remove_prefix(space + 1);
    }
    const std::string where = "dataset line " + std::to_string(line_no) + ": ";
    if (tokens.size() != fields) {
      throw FormatError(where + "expected " + std::to_string(fields) + " fields, got " +
                        std::to_string(tokens.size()));
    }
    data::Transition t;
    auto parse_index = [&](std::string_view s) {
      std::uint32_t v = 0;
      const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
      if (ec != std::errc{} || end != s.data() + s.size()) {
        throw FormatError(where + "bad index '" + std::string(s) + "'");
      }
      return v;
    };
    t.trajectory = parse_index(tokens[0]);
    t.step = parse_index(tokens[1]);
    try {
      std::size_t k = 2;
      auto next = [&] { return parse_double(tokens[k++]); };
      t.state.geoms.resize(g);
      for (auto& p : t.state.geoms) {
        p.x = next();
        p.y = next();
      }
      t.action = {next(), next(), next(), next()};
      t.next_state.geoms.resize(g);
      for (auto& p : t.next_state.geoms) {
        p.x = next();
        p.y = next();
      }
    } catch (const FormatError& e) {
      throw FormatError(where + e.what());
    }
    d.records.push_back(std::move(t));
  }
  if (d.records.size() != expected_records) {
    throw FormatError("dataset: header declares " + std::to_string(expected_records) +
                      " records, file has " + std::to_string(d.records.size()));
  }
  return d;
}

void save_dataset(const fs::path& path, const data::Dataset& dataset) {
  std::ostringstream out;
  write_dataset(out, dataset);
  write_text(path, out.str());
}

data::Dataset load_dataset(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open dataset " + path.string());
  return read_dataset(in);
}

// ---------------------------------------------------------------------------
// Checkpoint

void write_checkpoint(std::ostream& out, const model::ModelBundle& bundle,
                      const train::TrainConfig& train) {
  Json tensors = Json::array();
  for (const auto& p : bundle.parameters()) {
    tensors.push_back({{"name", p.name}, {"shape", p.tensor->shape()}});
  }
  const Json header = {{"architecture", to_json(bundle.arch)},
                       {"train", to_json(train)},
                       {"seed", train.seed},
                       {"tensors", tensors}};
  out << kCheckpointVersion << '\n' << header.dump() << '\n';
  std::array<char, 8> bytes{};
  for (const auto& p : bundle.parameters()) {
    for (double v : p.tensor->data()) {
      const auto bits = std::bit_cast<std::uint64_t>(v);
      for (std::size_t b = 0; b < 8; ++b) bytes[b] = static_cast<char>((bits >> (8 * b)) & 0xffu);
      out.write(bytes.data(), 8);
    }
  }
}

Checkpoint read_checkpoint(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kCheckpointVersion) {
    throw FormatError("checkpoint: unsupported version '" + line + "'");
  }
  if (!std::getline(in, line)) throw FormatError("checkpoint: missing header");
  Checkpoint ck;
  Json tensors;
  try {
    const Json header = Json::parse(line);
    check_keys<FormatError>(header, {"architecture", "train", "seed", "tensors"}, "checkpoint header");
    const auto arch = architecture_from_json(header.at("architecture"));
    ck.train = train_config_from_json(header.at("train"));
    ck.train.seed = header.at("seed").get<std::uint64_t>();
    ck.bundle = model::init_bundle(arch.variant, arch.obs_kind, 0, arch);
    tensors = header.at("tensors");
  } catch (const FormatError&) {
    throw;
  } catch (const std::exception& e) {
    throw FormatError(std::string("checkpoint: bad header: ") + e.what());
  }

  auto params = ck.bundle.parameters();
  if (!tensors.is_array() || tensors.size() != params.size()) {
    throw FormatError("checkpoint: header lists " + std::to_string(tensors.size()) +
                      " tensors, architecture has " + std::to_string(params.size()));
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    const auto name = tensors[k].at("name").get<std::string>();
    const auto shape = tensors[k].at("shape").get<Shape>();
    if (name != params[k].name || shape != params[k].tensor->shape()) {
      throw FormatError("checkpoint: tensor " + std::to_string(k) + " is '" + name + "' " +
                        to_string(shape) + ", expected '" + params[k].name + "' " +
                        to_string(params[k].tensor->shape()));
    }
  }
  std::array<char, 8> bytes{};
  for (auto& p : params) {
    auto values = p.tensor->data();
    const std::size_t expected = values.size() * 8;
    for (std::size_t i = 0; i < values.size(); ++i) {
      in.read(bytes.data(), 8);
      if (in.gcount() != 8) {
        throw FormatError("checkpoint: payload too short for tensor '" + p.name + "': expected " +
                          std::to_string(expected) + " bytes, got " +
                          std::to_string(i * 8 + static_cast<std::size_t>(in.gcount())));
      }
      std::uint64_t bits = 0;
      for (std::size_t b = 0; b < 8; ++b) {
        bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[b])) << (8 * b);
      }
      values[i] = std::bit_cast<double>(bits);
    }
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw FormatError("checkpoint: trailing bytes after the last tensor");
  }
  return ck;
}

void save_checkpoint(const fs::path& path, const model::ModelBundle& bundle,
                     const train::TrainConfig& train) {
  std::ostringstream out(std::ios::binary);
  write_checkpoint(out, bundle, train);
  write_text(path, out.str());
}

Checkpoint load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  return read_checkpoint(in);
}

// ---------------------------------------------------------------------------
// Demos, episodes, tables

Json to_json(const control::Demo& demo) {
  Json states = Json::array();
  for (const auto& s : demo.states) states.push_back(coords_json(s));
  return {{"format", kDemoVersion}, {"kind", rope::to_string(demo.kind)}, {"states", states}};
}

control::Demo demo_from_json(const Json& j) {
  try {
    check_keys<FormatError>(j, {"format", "kind", "states"}, "demo");
    if (j.at("format").get<std::string>() != kDemoVersion) {
      throw FormatError("demo: unsupported version '" + j.at("format").get<std::string>() + "'");
    }
    control::Demo demo;
    demo.kind = rope::parse_goal_kind(j.at("kind").get<std::string>());
    for (const auto& s : j.at("states")) demo.states.push_back(coords_from_json(s));
    return demo;
  } catch (const FormatError&) {
    throw;
  } catch (const std::exception& e) {
    throw FormatError(std::string("demo: ") + e.what());
  }
}

Json to_json(const control::EpisodeRecord& r) {
  Json steps = Json::array();
  for (const auto& s : r.steps) {
    steps.push_back({{"action", {s.action.x1, s.action.y1, s.action.x2, s.action.y2}},
                     {"state", coords_json(s.next_state)},
                     {"error", s.error}});
  }
  return {{"task", r.task},
          {"method", r.method},
          {"start", r.steps.empty() ? Json::array() : coords_json(r.steps.front().state)},
          {"initial_error", r.initial_error},
          {"final_error", r.final_error},
          {"trajectory_error", r.trajectory_error},
          {"steps", steps}};
}

Json episodes_to_json(const std::vector<control::EpisodeRecord>& records) {
  Json list = Json::array();
  for (const auto& r : records) list.push_back(to_json(r));
  return {{"format", kEpisodesVersion}, {"episodes", list}};
}

void write_loss_csv(std::ostream& out, const std::vector<train::EpochLoss>& curve) {
  out << "epoch,forward,inverse,decoder,total\n";
  for (const auto& e : curve) {
    out << e.epoch << ',' << format_double(e.forward) << ',' << format_double(e.inverse) << ','
        << format_double(e.decoder) << ',' << format_double(e.total) << '\n';
  }
}

void write_metrics_csv(std::ostream& out, const std::vector<eval::MetricRow>& rows) {
  out << "method,env_mode,goal_kind,seed,episodes,successes,success_rate,mean_geom_error\n";
  for (const auto& r : rows) {
    out << r.method << ',' << rope::to_string(r.env_mode) << ',' << r.goal_kind << ',' << r.seed
        << ',' << r.episodes << ',' << r.successes << ',' << format_double(r.success_rate) << ','
        << format_double(r.mean_geom_error) << '\n';
  }
}

Json metrics_to_json(const std::vector<eval::MetricRow>& rows) {
  Json table = Json::array();
  for (const auto& r : rows) {
    table.push_back({{"method", r.method},
                     {"env_mode", rope::to_string(r.env_mode)},
                     {"goal_kind", r.goal_kind},
                     {"seed", r.seed},
                     {"episodes", r.episodes},
                     {"successes", r.successes},
                     {"success_rate", r.success_rate},
                     {"mean_geom_error", r.mean_geom_error}});
  }
  Json summary = Json::array();
  for (const auto& s : eval::summarize(rows)) {
    summary.push_back({{"method", s.method},
                       {"env_mode", rope::to_string(s.env_mode)},
                       {"goal_kind", s.goal_kind},
                       {"seeds", s.seeds},
                       {"mean_success_rate", s.mean_success_rate},
                       {"std_success_rate", s.std_success_rate},
                       {"mean_geom_error", s.mean_geom_error}});
  }
  return {{"format", kMetricsVersion}, {"rows", table}, {"summary", summary}};
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

std::string render_pgm(const rope::RopeState& state, std::size_t image_size) {
  const auto obs = rope::render(state, rope::ObsKind::Raster, image_size);
  std::string out = "P5\n" + std::to_string(image_size) + ' ' + std::to_string(image_size) + "\n255\n";
  for (double v : obs.values) out += static_cast<char>(v > 0.5 ? 255 : 0);
  return out;
}

// ---------------------------------------------------------------------------
// Experiment config

namespace {

ModePaths mode_paths(const Json& j, const fs::path& base, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object of env mode -> path");
  ModePaths out;
  for (const auto& [key, value] : j.items()) {
    rope::EnvMode mode;
    try {
      mode = rope::parse_env_mode(key);
    } catch (const std::invalid_argument&) {
      throw ConfigError(where + ": unknown env mode '" + key + "'");
    }
    fs::path p = value.get<std::string>();
    if (p.is_relative()) p = base / p;
    if (!fs::exists(p)) throw ConfigError(where + ": path does not exist: " + p.string());
    out[mode] = p;
  }
  return out;
}

}  // namespace

ExperimentConfig experiment_from_json(const Json& j, const fs::path& base_dir) {
  try {
    check_keys<ConfigError>(j,
                            {"seed", "output_dir", "env", "data", "train", "plan", "suite",
                             "checkpoints", "datasets"},
                            "top level");
    ExperimentConfig c;
    read_key(j, "seed", c.seed);
    if (j.contains("output_dir")) {
      c.output_dir = j.at("output_dir").get<std::string>();
      if (c.output_dir.is_relative()) c.output_dir = base_dir / c.output_dir;
    }
    if (j.contains("env")) c.env = env_from_json(j.at("env"));
    if (j.contains("data")) {
      const auto& d = j.at("data");
      check_keys<ConfigError>(d, {"trajectories", "length"}, "data");
      read_key(d, "trajectories", c.data.trajectories);
      read_key(d, "length", c.data.length);
    }
    c.train.seed = c.seed;
    if (j.contains("train")) {
      c.train = train_config_from_json(j.at("train"));
      if (!j.at("train").contains("seed")) c.train.seed = c.seed;
    }
    c.plan.seed = c.seed;
    if (j.contains("plan")) {
      const auto& p = j.at("plan");
      check_keys<ConfigError>(p, {"horizon", "candidates"}, "plan");
      read_key(p, "horizon", c.plan.horizon);
      read_key(p, "candidates", c.plan.candidates);
    }
    if (j.contains("suite")) {
      const auto& s = j.at("suite");
      check_keys<ConfigError>(s,
                              {"task", "env_modes", "goal_sets", "seeds", "episodes",
                               "demo_length", "threshold"},
                              "suite");
      if (s.contains("task")) c.suite.task = eval::parse_task(s.at("task").get<std::string>());
      if (s.contains("env_modes")) {
        c.suite.env_modes.clear();
        for (const auto& m : s.at("env_modes")) {
          c.suite.env_modes.push_back(rope::parse_env_mode(m.get<std::string>()));
        }
      }
      read_key(s, "goal_sets", c.suite.goal_sets);
      read_key(s, "seeds", c.suite.seeds);
      read_key(s, "episodes", c.suite.episodes);
      read_key(s, "demo_length", c.suite.demo_length);
      read_key(s, "threshold", c.suite.threshold);
    }
    c.suite.horizon = c.plan.horizon;
    c.suite.candidates = c.plan.candidates;
    c.suite.env = c.env;
    if (j.contains("checkpoints")) {
      const auto& cks = j.at("checkpoints");
      if (!cks.is_object()) throw ConfigError("checkpoints: expected an object");
      for (const auto& [method, paths] : cks.items()) {
        c.checkpoints[method] = mode_paths(paths, base_dir, "checkpoints." + method);
      }
    }
    if (j.contains("datasets")) c.datasets = mode_paths(j.at("datasets"), base_dir, "datasets");

    c.env.validate();
    c.train.validate();
    c.plan.validate();
    c.suite.validate();
    return c;
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
}

ExperimentConfig load_experiment_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  Json j;
  try {
    j = Json::parse(in);
  } catch (const std::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return experiment_from_json(j, path.parent_path());
}

}  // namespace cloud::io
