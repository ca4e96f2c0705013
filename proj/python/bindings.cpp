#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/operators.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "cloud/cli.hpp"
#include "cloud/control.hpp"
#include "cloud/dataset.hpp"
#include "cloud/eval.hpp"
#include "cloud/gradcheck.hpp"
#include "cloud/graph.hpp"
#include "cloud/io.hpp"
#include "cloud/losses.hpp"
#include "cloud/metrics.hpp"
#include "cloud/models.hpp"
#include "cloud/rng.hpp"
#include "cloud/trainer.hpp"

namespace py = pybind11;
using namespace cloud;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;
using ActionTuple = std::tuple<double, double, double, double>;

// States cross the boundary as (geoms, 2) float64 arrays.
Array to_array(const rope::RopeState& s) {
  Array out({s.geoms.size(), std::size_t{2}});
  auto v = out.mutable_unchecked<2>();
  for (std::size_t i = 0; i < s.geoms.size(); ++i) {
    v(i, 0) = s.geoms[i].x;
    v(i, 1) = s.geoms[i].y;
  }
  return out;
}

rope::RopeState to_state(const Array& a) {
  if (a.ndim() != 2 || a.shape(1) != 2) throw py::value_error("state must have shape (geoms, 2)");
  const auto v = a.unchecked<2>();
  rope::RopeState s;
  for (py::ssize_t i = 0; i < v.shape(0); ++i) s.geoms.push_back({v(i, 0), v(i, 1)});
  return s;
}

ActionTuple to_tuple(const rope::Action& a) { return {a.x1, a.y1, a.x2, a.y2}; }
rope::Action to_action(const ActionTuple& t) {
  return {std::get<0>(t), std::get<1>(t), std::get<2>(t), std::get<3>(t)};
}

Tensor to_tensor(const Array& a) {
  if (a.ndim() != 2) throw py::value_error("expected a 2-D array");
  const auto r = static_cast<std::size_t>(a.shape(0)), c = static_cast<std::size_t>(a.shape(1));
  return Tensor({r, c}, std::vector<double>(a.data(), a.data() + r * c));
}

Array tensor_array(const Tensor& t) {
  Array out({t.rows(), t.cols()});
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

py::dict episode_dict(const control::EpisodeRecord& r, eval::Task task) {
  py::list actions, states, errors;
  if (!r.steps.empty()) states.append(to_array(r.steps.front().state));
  for (const auto& s : r.steps) {
    actions.append(to_tuple(s.action));
    states.append(to_array(s.next_state));
    errors.append(s.error);
  }
  py::dict d;
  d["task"] = r.task;
  d["method"] = r.method;
  d["actions"] = actions;
  d["states"] = states;
  d["errors"] = errors;
  d["initial_error"] = r.initial_error;
  d["final_error"] = r.final_error;
  d["trajectory_error"] = r.trajectory_error;
  d["success"] = eval::success(r, task);
  return d;
}

rope::GoalKind goal_kind(const std::string& text) { return rope::parse_goal_kind(text); }

std::string io_json(const io::Json& j) { return j.dump(); }

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Contrastive forward/inverse dynamics models for a simulated rope";

  py::register_exception<model::VariantMismatchError>(m, "VariantMismatchError", PyExc_ValueError);
  py::register_exception<io::FormatError>(m, "FormatError", PyExc_RuntimeError);
  py::register_exception<rope::UnsupportedGoalError>(m, "UnsupportedGoalError", PyExc_ValueError);

  py::class_<rope::EnvConfig>(m, "EnvConfig")
      .def(py::init([](const std::string& mode, double noise_sigma, std::size_t burn_in) {
             rope::EnvConfig c;
             c.mode = rope::parse_env_mode(mode);
             c.noise_sigma = noise_sigma;
             c.burn_in = burn_in;
             c.validate();
             return c;
           }),
           py::arg("mode") = "det", py::arg("noise_sigma") = 0.5, py::arg("burn_in") = 10)
      .def_property(
          "mode", [](const rope::EnvConfig& c) { return std::string(rope::to_string(c.mode)); },
          [](rope::EnvConfig& c, const std::string& v) { c.mode = rope::parse_env_mode(v); })
      .def_readwrite("noise_sigma", &rope::EnvConfig::noise_sigma)
      .def_readwrite("pick_radius", &rope::EnvConfig::pick_radius)
      .def_readwrite("segment_length", &rope::EnvConfig::segment_length)
      .def_readwrite("image_size", &rope::EnvConfig::image_size)
      .def_readwrite("geom_count", &rope::EnvConfig::geom_count)
      .def_readwrite("burn_in", &rope::EnvConfig::burn_in)
      .def("to_json", [](const rope::EnvConfig& c) { return io_json(io::to_json(c)); })
      .def("__repr__", [](const rope::EnvConfig& c) { return "EnvConfig(" + io_json(io::to_json(c)) + ")"; });

  m.def("reset", [](const rope::EnvConfig& env, std::uint64_t seed) { return to_array(rope::reset(env, seed)); },
        py::arg("env") = rope::EnvConfig{}, py::arg("seed") = 0, "Rope state after burn-in random actions.");
  m.def(
      "step",
      [](const Array& state, const ActionTuple& action, const rope::EnvConfig& env, std::uint64_t noise_seed) {
        Rng noise = make_rng(noise_seed, "env-noise");
        return to_array(rope::step(to_state(state), to_action(action), env, noise));
      },
      py::arg("state"), py::arg("action"), py::arg("env") = rope::EnvConfig{}, py::arg("noise_seed") = 0);
  m.def(
      "sample_action",
      [](const Array& state, const rope::EnvConfig& env, std::uint64_t seed) {
        Rng rng(seed);
        return to_tuple(rope::sample_action(to_state(state), rng, env));
      },
      py::arg("state"), py::arg("env") = rope::EnvConfig{}, py::arg("seed") = 0);
  m.def(
      "make_goal",
      [](const std::string& kind, const rope::EnvConfig& env, std::uint64_t seed) {
        Rng rng(seed);
        return to_array(rope::make_goal(goal_kind(kind), rng, env));
      },
      py::arg("kind"), py::arg("env") = rope::EnvConfig{}, py::arg("seed") = 0);
  m.def("geom_error", [](const Array& a, const Array& b) { return eval::geom_error(to_state(a), to_state(b)); },
        py::arg("achieved"), py::arg("target"), "Mean per-geom distance, minimized over rope orientation.");
  m.def("cosine_sim", [](const std::vector<double>& u, const std::vector<double>& v) { return ad::cosine_sim(u, v); });

  auto denominator = [](const std::string& d) { return train::parse_denominator(d); };
  m.def(
      "forward_nce_loss",
      [=](const Array& pred, const Array& h_t, const Array& h_next, double tau, const std::string& d) {
        return train::forward_nce_loss(to_tensor(pred), to_tensor(h_t), to_tensor(h_next), tau, denominator(d));
      },
      py::arg("predicted"), py::arg("h_t"), py::arg("h_next"), py::arg("temperature") = 0.1,
      py::arg("denominator") = "paper");
  m.def(
      "inverse_nce_loss",
      [=](const Array& pred, const Array& z_t, const Array& z_next, double tau, const std::string& d) {
        return train::inverse_nce_loss(to_tensor(pred), to_tensor(z_t), to_tensor(z_next), tau, denominator(d));
      },
      py::arg("predicted"), py::arg("z_t"), py::arg("z_next"), py::arg("temperature") = 0.1,
      py::arg("denominator") = "paper");

  py::class_<data::Dataset>(m, "Dataset")
      .def("__len__", [](const data::Dataset& d) { return d.records.size(); })
      .def_readonly("trajectories", &data::Dataset::trajectories)
      .def_readonly("length", &data::Dataset::length)
      .def_readonly("seed", &data::Dataset::seed)
      .def_property_readonly("train_size", [](const data::Dataset& d) { return d.indices(data::Split::Train).size(); })
      .def_property_readonly("test_size", [](const data::Dataset& d) { return d.indices(data::Split::Test).size(); })
      .def("transition",
           [](const data::Dataset& d, std::size_t i) {
             const auto& r = d.records.at(i);
             return py::make_tuple(to_array(r.state), to_tuple(r.action), to_array(r.next_state));
           })
      .def("save", [](const data::Dataset& d, const std::filesystem::path& p) { io::save_dataset(p, d); })
      .def_static("load", &io::load_dataset)
      .def(py::self == py::self);

  m.def("collect", &data::collect_dataset, py::arg("env") = rope::EnvConfig{}, py::arg("trajectories") = 2000,
        py::arg("length") = 20, py::arg("seed") = 0, "Random-exploration transitions.");

  py::class_<model::ModelBundle>(m, "Model")
      .def_property_readonly("variant", [](const model::ModelBundle& b) { return std::string(model::to_string(b.arch.variant)); })
      .def_property_readonly("obs_kind", [](const model::ModelBundle& b) { return std::string(rope::to_string(b.arch.obs_kind)); })
      .def_property_readonly("parameter_count", &model::ModelBundle::parameter_count)
      .def("encode_state",
           [](const model::ModelBundle& b, const Array& state) {
             return model::encode_state(b, rope::render(to_state(state), b.arch.obs_kind, b.arch.image_size));
           })
      .def("encode_action",
           [](const model::ModelBundle& b, const ActionTuple& a) { return model::encode_action(b, to_action(a)); })
      .def("forward_predict",
           [](const model::ModelBundle& b, const Array& h, const Array& z) {
             return tensor_array(model::forward_predict(b, to_tensor(h), to_tensor(z)));
           })
      .def("inverse_predict",
           [](const model::ModelBundle& b, const Array& h_t, const Array& h_next) {
             return tensor_array(model::inverse_predict(b, to_tensor(h_t), to_tensor(h_next)));
           })
      .def("decode_action",
           [](const model::ModelBundle& b, const std::vector<double>& z) { return to_tuple(model::decode_action(b, z)); })
      .def("save",
           [](const model::ModelBundle& b, const std::filesystem::path& p) {
             train::TrainConfig c;
             c.variant = b.arch.variant;
             c.obs_kind = b.arch.obs_kind;
             io::save_checkpoint(p, b, c);
           })
      .def_static("load", [](const std::filesystem::path& p) { return io::load_checkpoint(p).bundle; })
      .def("bitwise_equal", [](const model::ModelBundle& a, const model::ModelBundle& b) { return model::bitwise_equal(a, b); });

  m.def(
      "init_model",
      [](const std::string& variant, const std::string& obs, std::uint64_t seed) {
        return model::init_bundle(model::parse_variant(variant), rope::parse_obs_kind(obs), seed);
      },
      py::arg("variant") = "fi", py::arg("obs") = "coords", py::arg("seed") = 0);

  m.def(
      "train",
      [](const data::Dataset& dataset, const std::string& variant, std::size_t epochs, std::size_t batch_size,
         double learning_rate, const std::string& denominator, const std::string& obs, std::uint64_t seed,
         const std::function<void(py::dict)>& on_epoch) {
        train::TrainConfig c;
        if (variant == "baseline") {
          c.objective = train::Objective::Regression;
        } else {
          c.variant = model::parse_variant(variant);
        }
        c.epochs = epochs;
        c.batch_size = batch_size;
        c.learning_rate = learning_rate;
        c.denominator = train::parse_denominator(denominator);
        c.obs_kind = rope::parse_obs_kind(obs);
        c.seed = seed;
        auto epoch_dict = [](const train::EpochLoss& e) {
          py::dict d;
          d["epoch"] = e.epoch;
          d["forward"] = e.forward;
          d["inverse"] = e.inverse;
          d["decoder"] = e.decoder;
          d["total"] = e.total;
          return d;
        };
        train::TrainResult result;
        {
          py::gil_scoped_release release;
          result = train::train(dataset, c, [&](const train::EpochLoss& e) {
            if (!on_epoch) return;
            py::gil_scoped_acquire acquire;
            on_epoch(epoch_dict(e));
          });
        }
        py::list curve;
        for (const auto& e : result.curve) curve.append(epoch_dict(e));
        return py::make_tuple(std::move(result.bundle), curve);
      },
      py::arg("dataset"), py::arg("variant") = "fi", py::arg("epochs") = 30, py::arg("batch_size") = 128,
      py::arg("learning_rate") = 1e-3, py::arg("denominator") = "paper", py::arg("obs") = "coords",
      py::arg("seed") = 0, py::arg("on_epoch") = nullptr, "Returns (model, loss curve).");

  m.def(
      "plan_episode",
      [](const model::ModelBundle& b, const Array& start, const Array& goal, const rope::EnvConfig& env,
         std::size_t horizon, std::size_t candidates, std::uint64_t seed) {
        const auto r = control::run_goal_directed(b, env, to_state(start), to_state(goal), {horizon, candidates, seed});
        return episode_dict(r, eval::Task::Goal);
      },
      py::arg("model"), py::arg("start"), py::arg("goal"), py::arg("env") = rope::EnvConfig{}, py::arg("horizon") = 20,
      py::arg("candidates") = 256, py::arg("seed") = 0);

  m.def(
      "make_demo",
      [](const std::string& kind, std::size_t length, const rope::EnvConfig& env, std::uint64_t seed) {
        py::list out;
        for (const auto& s : control::make_demo(env, goal_kind(kind), length, seed).states) out.append(to_array(s));
        return out;
      },
      py::arg("kind"), py::arg("length") = 10, py::arg("env") = rope::EnvConfig{}, py::arg("seed") = 0,
      "Demonstration states d_0..d_T; actions are not returned.");

  m.def(
      "imitate",
      [](const model::ModelBundle& b, const std::vector<Array>& states, const rope::EnvConfig& env, std::uint64_t seed) {
        control::Demo demo;
        for (const auto& s : states) demo.states.push_back(to_state(s));
        if (demo.states.size() < 2) throw py::value_error("a demo needs at least two states");
        return episode_dict(control::imitate(b, env, demo, seed), eval::Task::Imitation);
      },
      py::arg("model"), py::arg("demo"), py::arg("env") = rope::EnvConfig{}, py::arg("seed") = 0);

  m.def(
      "evaluate",
      [](const std::string& task, const std::map<std::string, const model::ModelBundle*>& models,
         const std::vector<std::string>& goal_sets, const std::vector<std::uint64_t>& seeds, std::size_t episodes,
         std::size_t horizon, std::size_t candidates, const rope::EnvConfig& env, bool include_random,
         const data::Dataset* nn_dataset) {
        eval::SuiteConfig c;
        c.task = eval::parse_task(task);
        c.env_modes = {env.mode};
        c.goal_sets = goal_sets;
        c.seeds = seeds;
        c.episodes = episodes;
        c.horizon = horizon;
        c.candidates = candidates;
        c.env = env;
        const auto kind = c.task == eval::Task::Goal ? eval::MethodKind::Planner : eval::MethodKind::Inverse;
        std::vector<eval::Method> methods;
        for (const auto& [name, bundle] : models) {
          eval::Method method{name, kind};
          method.bundles[env.mode] = bundle;
          methods.push_back(method);
        }
        if (include_random && c.task == eval::Task::Goal) methods.push_back({"random", eval::MethodKind::Random});
        if (nn_dataset != nullptr) {
          eval::Method nn{"nearest-neighbor", eval::MethodKind::NearestNeighbor};
          nn.datasets[env.mode] = nn_dataset;
          methods.push_back(nn);
        }
        std::vector<eval::MetricRow> rows;
        {
          py::gil_scoped_release release;
          rows = eval::evaluate(c, methods);
        }
        py::list out;
        for (const auto& r : rows) {
          py::dict d;
          d["method"] = r.method;
          d["env_mode"] = std::string(rope::to_string(r.env_mode));
          d["goal_kind"] = r.goal_kind;
          d["seed"] = r.seed;
          d["episodes"] = r.episodes;
          d["successes"] = r.successes;
          d["success_rate"] = r.success_rate;
          d["mean_geom_error"] = r.mean_geom_error;
          out.append(d);
        }
        return out;
      },
      py::arg("task"), py::arg("models"), py::arg("goal_sets") = std::vector<std::string>{"straight"},
      py::arg("seeds") = std::vector<std::uint64_t>{0, 1, 2}, py::arg("episodes") = 50, py::arg("horizon") = 20,
      py::arg("candidates") = 256, py::arg("env") = rope::EnvConfig{}, py::arg("include_random") = false,
      py::arg("nn_dataset") = nullptr);

  m.def(
      "gradcheck",
      [](std::uint64_t seed, std::size_t points) {
        check::GradCheckConfig c;
        c.seed = seed;
        c.points = points;
        py::list out;
        for (const auto& r : check::run_gradient_suite(c)) {
          py::dict d;
          d["composite"] = r.composite;
          d["points"] = r.points;
          d["max_relative_error"] = r.max_relative_error;
          d["passed"] = r.passed;
          out.append(d);
        }
        return out;
      },
      py::arg("seed") = 0, py::arg("points") = 20);

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        const int code = cli::run_cli(args, out, err);
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs the command-line interface in-process; returns (exit code, stdout, stderr).");
}
