#include "cloud/cli.hpp"

#include <algorithm>
#include <deque>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"

#include "cloud/control.hpp"
#include "cloud/eval.hpp"
#include "cloud/gradcheck.hpp"
#include "cloud/io.hpp"
#include "cloud/trainer.hpp"

namespace cloud::cli {

namespace fs = std::filesystem;

namespace {

struct Options {
  std::string config;
  std::optional<std::size_t> trajectories;
  std::optional<std::size_t> length;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> variant;
  std::optional<std::string> env;
  std::optional<std::string> goal;
  std::optional<std::string> denominator;
  std::optional<std::size_t> episodes;
  std::optional<std::size_t> epochs;
  std::optional<std::string> obs;
  std::string out;
  std::string data;
  std::string checkpoint;
  std::string demo;
  std::string frames;
  std::size_t points = 20;
};

/// Anything raised while assembling the run configuration is a config error.
io::ExperimentConfig resolve(const Options& o) {
  try {
    io::ExperimentConfig c = o.config.empty() ? io::experiment_from_json(io::Json::object(), ".")
                                              : io::load_experiment_config(o.config);
    if (o.seed) {
      c.seed = *o.seed;
      c.train.seed = *o.seed;
      c.plan.seed = *o.seed;
    }
    if (o.trajectories) c.data.trajectories = *o.trajectories;
    if (o.length) c.data.length = *o.length;
    if (o.env) {
      c.env.mode = rope::parse_env_mode(*o.env);
      c.suite.env_modes = {c.env.mode};
    }
    if (o.variant) {
      if (*o.variant == "baseline") {
        c.train.variant = model::Variant::FI;
        c.train.objective = train::Objective::Regression;
      } else {
        c.train.variant = model::parse_variant(*o.variant);
        c.train.objective = train::Objective::Contrastive;
      }
    }
    if (o.denominator) c.train.denominator = train::parse_denominator(*o.denominator);
    if (o.epochs) c.train.epochs = *o.epochs;
    if (o.obs) c.train.obs_kind = rope::parse_obs_kind(*o.obs);
    if (o.episodes) c.suite.episodes = *o.episodes;
    if (o.goal) c.suite.goal_sets = {*o.goal};
    c.suite.env = c.env;
    c.env.validate();
    c.train.validate();
    c.suite.validate();
    return c;
  } catch (const io::ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw io::ConfigError(e.what());
  }
}

fs::path output_path(const Options& o, const io::ExperimentConfig& c, const char* fallback) {
  return o.out.empty() ? c.output_dir / fallback : fs::path(o.out);
}

std::string method_name(const train::TrainConfig& t) {
  if (t.objective == train::Objective::Regression) return "baseline";
  return "cloud-" + std::string(model::to_string(t.variant));
}

void dump_frames(const fs::path& dir, std::size_t episode, const control::EpisodeRecord& r,
                 std::size_t image_size) {
  if (r.steps.empty()) return;
  auto name = [&](std::size_t t) {
    return dir / ("episode" + std::to_string(episode) + "_t" + std::to_string(t) + ".pgm");
  };
  io::write_text(name(0), io::render_pgm(r.steps.front().state, image_size));
  for (std::size_t t = 0; t < r.steps.size(); ++t) {
    io::write_text(name(t + 1), io::render_pgm(r.steps[t].next_state, image_size));
  }
}

int cmd_collect(const Options& o, std::ostream& out) {
  const auto c = resolve(o);
  const auto dataset = data::collect_dataset(c.env, c.data.trajectories, c.data.length, c.seed);
  const auto path = output_path(o, c, "dataset.txt");
  io::save_dataset(path, dataset);
  out << "collected " << dataset.records.size() << " transitions -> " << path.string() << '\n';
  return 0;
}

int cmd_train(const Options& o, std::ostream& out) {
  const auto c = resolve(o);
  const auto dataset = o.data.empty()
                           ? data::collect_dataset(c.env, c.data.trajectories, c.data.length, c.seed)
                           : io::load_dataset(o.data);
  const auto dir = output_path(o, c, method_name(c.train).c_str());
  const auto result = train::train(dataset, c.train, [&](const train::EpochLoss& e) {
    out << "epoch " << e.epoch << " total " << io::format_double(e.total) << '\n';
  });
  io::save_checkpoint(dir / "checkpoint.bin", result.bundle, c.train);
  std::ostringstream csv;
  io::write_loss_csv(csv, result.curve);
  io::write_text(dir / "loss.csv", csv.str());
  out << "checkpoint -> " << (dir / "checkpoint.bin").string() << '\n';
  return 0;
}

/// plan and imitate share everything but the episode runner.
int cmd_episodes(const Options& o, eval::Task task, std::ostream& out) {
  auto c = resolve(o);
  if (!o.goal) c.suite.goal_sets = {task == eval::Task::Goal ? "straight" : "shaped"};
  if (!o.episodes) c.suite.episodes = 1;
  const auto& set = c.suite.goal_sets.front();

  std::optional<io::Checkpoint> ck;
  if (!o.checkpoint.empty()) ck = io::load_checkpoint(o.checkpoint);
  std::optional<control::Demo> demo;
  if (!o.demo.empty()) {
    if (task != eval::Task::Imitation) throw io::ConfigError("--demo only applies to imitate");
    std::ifstream in(o.demo);
    if (!in) throw std::runtime_error("cannot open demo " + o.demo);
    demo = io::demo_from_json(io::Json::parse(in));
  }

  eval::Method method;
  if (task == eval::Task::Goal) {
    method.kind = ck ? eval::MethodKind::Planner : eval::MethodKind::Random;
    method.name = ck ? method_name(ck->train) : "random";
  } else {
    if (!ck) throw io::ConfigError("imitate needs --checkpoint");
    model::require_inverse(ck->bundle);
    method.kind = eval::MethodKind::Inverse;
    method.name = method_name(ck->train);
  }
  if (ck) method.bundles[c.env.mode] = &ck->bundle;

  std::vector<control::EpisodeRecord> records;
  std::size_t successes = 0;
  for (std::size_t e = 0; e < c.suite.episodes; ++e) {
    auto spec = eval::make_episode(task, set, c.seed, e, c.env, c.suite.demo_length);
    if (demo) {
      spec.demo = demo;
      spec.start = demo->states.front();
    }
    auto record = eval::run_episode(method, task, spec, c.suite, c.env.mode);
    successes += eval::success(record, task, c.suite.threshold) ? 1 : 0;
    if (!o.frames.empty()) dump_frames(o.frames, e, record, c.env.image_size);
    out << "episode " << e << " error " << io::format_double(eval::episode_error(record, task))
        << '\n';
    records.push_back(std::move(record));
  }
  if (!o.out.empty()) io::write_text(o.out, io::episodes_to_json(records).dump(1) + "\n");
  out << method.name << ' ' << successes << '/' << records.size() << " successful\n";
  return 0;
}

int cmd_eval(const Options& o, std::ostream& out) {
  auto c = resolve(o);
  if (o.seed) c.suite.seeds = {*o.seed};

  // Methods hold pointers into these, so they must not relocate.
  std::deque<io::Checkpoint> loaded;
  std::vector<eval::Method> methods;
  for (const auto& [name, paths] : c.checkpoints) {
    eval::Method m{name, c.suite.task == eval::Task::Goal ? eval::MethodKind::Planner
                                                          : eval::MethodKind::Inverse};
    for (const auto& [mode, path] : paths) {
      loaded.push_back(io::load_checkpoint(path));
      m.bundles[mode] = &loaded.back().bundle;
    }
    methods.push_back(std::move(m));
  }
  std::deque<data::Dataset> datasets;
  if (c.suite.task == eval::Task::Goal) {
    methods.push_back({"random", eval::MethodKind::Random});
  } else if (!c.datasets.empty()) {
    eval::Method nn{"nearest-neighbor", eval::MethodKind::NearestNeighbor};
    for (const auto& [mode, path] : c.datasets) {
      datasets.push_back(io::load_dataset(path));
      nn.datasets[mode] = &datasets.back();
    }
    methods.push_back(std::move(nn));
  }

  const auto rows = eval::evaluate(c.suite, methods, [&](const eval::MetricRow& r) {
    out << r.method << ' ' << rope::to_string(r.env_mode) << ' ' << r.goal_kind << " seed "
        << r.seed << ": " << r.successes << '/' << r.episodes << '\n';
  });
  const auto dir = output_path(o, c, "eval");
  std::ostringstream csv;
  io::write_metrics_csv(csv, rows);
  io::write_text(dir / "metrics.csv", csv.str());
  io::write_text(dir / "metrics.json", io::metrics_to_json(rows).dump(1) + "\n");
  out << "metrics -> " << (dir / "metrics.csv").string() << '\n';
  return 0;
}

int cmd_gradcheck(const Options& o, std::ostream& out) {
  check::GradCheckConfig config;
  config.seed = o.seed.value_or(0);
  config.points = o.points;
  bool ok = true;
  for (const auto& r : check::run_gradient_suite(config)) {
    out << r.composite << " points=" << r.points << " coords=" << r.coordinates
        << " max_rel_err=" << r.max_relative_error << (r.passed ? " PASS" : " FAIL") << '\n';
    ok = ok && r.passed;
  }
  return ok ? 0 : 1;
}

void fail(std::ostream& err, std::string_view kind, std::string_view message) {
  std::string flat(message);
  std::replace(flat.begin(), flat.end(), '\n', ' ');
  err << "error: " << kind << ": " << flat << '\n';
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Contrastive dynamics models for rope manipulation", "cloud"};
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* sub) { sub->add_option("--config", o.config, "Experiment config JSON"); };
  auto seed = [&](CLI::App* sub) { sub->add_option("--seed", o.seed, "Global seed"); };
  auto env = [&](CLI::App* sub) {
    sub->add_option("--env", o.env, "Environment mode")->check(CLI::IsMember({"det", "stoch"}));
  };
  auto out_opt = [&](CLI::App* sub, const char* what) { sub->add_option("--out", o.out, what); };

  auto* collect = app.add_subcommand("collect", "Collect a random-exploration dataset");
  common(collect);
  seed(collect);
  env(collect);
  collect->add_option("--trajectories", o.trajectories, "Trajectory count");
  collect->add_option("--length", o.length, "Steps per trajectory");
  out_opt(collect, "Dataset file");

  auto* train = app.add_subcommand("train", "Train a model bundle");
  common(train);
  seed(train);
  env(train);
  train->add_option("--data", o.data, "Dataset file (collected in memory when omitted)");
  train->add_option("--trajectories", o.trajectories, "Trajectory count when collecting");
  train->add_option("--length", o.length, "Steps per trajectory when collecting");
  train->add_option("--variant", o.variant, "Model variant")
      ->check(CLI::IsMember({"f", "i", "fi", "baseline"}));
  train->add_option("--denominator", o.denominator, "NCE denominator")
      ->check(CLI::IsMember({"paper", "standard"}));
  train->add_option("--epochs", o.epochs, "Training epochs");
  train->add_option("--obs", o.obs, "Observation kind")->check(CLI::IsMember({"coords", "raster"}));
  out_opt(train, "Output directory for checkpoint.bin and loss.csv");

  auto* plan = app.add_subcommand("plan", "Goal-directed MPC episodes");
  auto* imitate = app.add_subcommand("imitate", "Imitation from observation");
  for (auto* sub : {plan, imitate}) {
    common(sub);
    seed(sub);
    env(sub);
    sub->add_option("--checkpoint", o.checkpoint, "Checkpoint file");
    sub->add_option("--goal", o.goal, "Goal shape")
        ->check(CLI::IsMember({"straight", "c", "l", "s", "shaped"}));
    sub->add_option("--episodes", o.episodes, "Episode count");
    sub->add_option("--frames", o.frames, "Directory for PGM frames");
    out_opt(sub, "Episode records JSON");
  }
  imitate->add_option("--demo", o.demo, "Demo JSON (scripted demos when omitted)");

  auto* evaluate = app.add_subcommand("eval", "Run an evaluation suite");
  common(evaluate);
  seed(evaluate);
  env(evaluate);
  evaluate->add_option("--goal", o.goal, "Goal set")
      ->check(CLI::IsMember({"straight", "c", "l", "s", "shaped"}));
  evaluate->add_option("--episodes", o.episodes, "Episodes per cell");
  out_opt(evaluate, "Output directory for metrics.csv and metrics.json");

  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
  seed(gradcheck);
  gradcheck->add_option("--points", o.points, "Random points per composite");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << app.help();
    fail(err, "usage", e.what());
    return 2;
  }

  try {
    if (collect->parsed()) return cmd_collect(o, out);
    if (train->parsed()) return cmd_train(o, out);
    if (plan->parsed()) return cmd_episodes(o, eval::Task::Goal, out);
    if (imitate->parsed()) return cmd_episodes(o, eval::Task::Imitation, out);
    if (evaluate->parsed()) return cmd_eval(o, out);
    return cmd_gradcheck(o, out);
  } catch (const io::ConfigError& e) {
    fail(err, "config", e.what());
    return 2;
  } catch (const model::VariantMismatchError& e) {
    fail(err, "variant-mismatch", e.what());
  } catch (const io::FormatError& e) {
    fail(err, "format", e.what());
  } catch (const train::TrainingDivergedError& e) {
    fail(err, "diverged", e.what());
  } catch (const std::exception& e) {
    fail(err, "runtime", e.what());
  }
  return 1;
}

int run_cli(int argc, const char* const* argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run_cli(args, std::cout, std::cerr);
}

}  // namespace cloud::cli
