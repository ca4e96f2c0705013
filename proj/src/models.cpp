#include "cloud/models.hpp"

#include <cmath>
#include <cstring>

#include "cloud/rng.hpp"

namespace cloud::model {

using ad::Graph;
using ad::NodeId;

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::F: return "f";
    case Variant::I: return "i";
    case Variant::FI: return "fi";
  }
  return "unknown";
}

Variant parse_variant(std::string_view text) {
  if (text == "f" || text == "F") return Variant::F;
  if (text == "i" || text == "I") return Variant::I;
  if (text == "fi" || text == "FI") return Variant::FI;
  throw std::invalid_argument("unknown variant '" + std::string(text) + "'");
}

bool has_forward(Variant v) { return v != Variant::I; }
bool has_inverse(Variant v) { return v != Variant::F; }
bool has_action_codec(Variant v) { return v != Variant::F; }

std::size_t Architecture::observation_features() const {
  return rope::observation_size(obs_kind, geom_count, image_size);
}

namespace {

DenseLayer xavier_layer(std::size_t in, std::size_t out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
  Tensor w({in, out});
  for (auto& v : w.data()) v = uniform(rng, -bound, bound);
  return {std::move(w), Tensor({1, out}, 0.0)};
}

Mlp xavier_mlp(std::initializer_list<std::size_t> dims, Rng& rng) {
  Mlp mlp;
  auto it = dims.begin();
  for (auto prev = *it++; it != dims.end(); prev = *it++) {
    mlp.layers.push_back(xavier_layer(prev, *it, rng));
  }
  return mlp;
}

ConvEncoder xavier_conv(const Architecture& a, Rng& rng) {
  ConvEncoder enc;
  std::size_t channels = 1;
  std::size_t size = a.image_size;
  for (std::size_t out_ch : {8, 16, 32}) {
    ad::ConvGeometry g{channels, size, size, out_ch, 3, 2, 1};
    const double bound = std::sqrt(6.0 / static_cast<double>(g.patch_size() + out_ch * 9));
    Tensor k({out_ch, g.patch_size()});
    for (auto& v : k.data()) v = uniform(rng, -bound, bound);
    enc.stages.push_back({std::move(k), Tensor({1, out_ch}, 0.0), g});
    channels = out_ch;
    size = g.out_height();
  }
  enc.head = xavier_layer(channels * size * size, a.embed_dim, rng);
  return enc;
}

void push_mlp(std::vector<NamedTensor>& out, const std::string& prefix, Mlp& mlp) {
  for (std::size_t i = 0; i < mlp.layers.size(); ++i) {
    out.push_back({prefix + ".l" + std::to_string(i) + ".weight", &mlp.layers[i].weight});
    out.push_back({prefix + ".l" + std::to_string(i) + ".bias", &mlp.layers[i].bias});
  }
}

BoundMlp bind_mlp(Graph& graph, const Mlp& mlp, std::vector<NodeId>& params) {
  BoundMlp b;
  for (const auto& l : mlp.layers) {
    auto w = graph.parameter(l.weight);
    auto bias = graph.parameter(l.bias);
    params.push_back(w);
    params.push_back(bias);
    b.layers.emplace_back(w, bias);
  }
  return b;
}

template <class Build>
Tensor eval_one(Build&& build) {
  Graph graph;
  graph.set_check_finite(true);
  NodeId out = build(graph);
  return graph.forward_eval(out);
}

}  // namespace

std::vector<NamedTensor> ModelBundle::parameters() {
  std::vector<NamedTensor> out;
  if (arch.obs_kind == rope::ObsKind::Coords) {
    push_mlp(out, "g", state_mlp);
  } else {
    for (std::size_t i = 0; i < state_conv.stages.size(); ++i) {
      out.push_back({"g.conv" + std::to_string(i) + ".kernel", &state_conv.stages[i].kernel});
      out.push_back({"g.conv" + std::to_string(i) + ".bias", &state_conv.stages[i].bias});
    }
    out.push_back({"g.head.weight", &state_conv.head.weight});
    out.push_back({"g.head.bias", &state_conv.head.bias});
  }
  if (action_encoder) push_mlp(out, "q", *action_encoder);
  if (action_decoder) push_mlp(out, "p", *action_decoder);
  if (forward_model) push_mlp(out, "F", *forward_model);
  if (inverse_model) push_mlp(out, "I", *inverse_model);
  return out;
}

std::vector<ConstNamedTensor> ModelBundle::parameters() const {
  std::vector<ConstNamedTensor> out;
  for (auto& p : const_cast<ModelBundle*>(this)->parameters()) out.push_back({p.name, p.tensor});
  return out;
}

std::size_t ModelBundle::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.tensor->size();
  return n;
}

bool bitwise_equal(const ModelBundle& a, const ModelBundle& b) {
  if (!(a.arch == b.arch)) return false;
  const auto pa = a.parameters();
  const auto pb = b.parameters();
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (pa[i].name != pb[i].name || pa[i].tensor->shape() != pb[i].tensor->shape()) return false;
    if (std::memcmp(pa[i].tensor->data().data(), pb[i].tensor->data().data(),
                    pa[i].tensor->size() * sizeof(double)) != 0) {
      return false;
    }
  }
  return true;
}

ModelBundle init_bundle(Variant variant, rope::ObsKind obs_kind, std::uint64_t seed,
                        const Architecture& dims) {
  ModelBundle b;
  b.arch = dims;
  b.arch.variant = variant;
  b.arch.obs_kind = obs_kind;
  const auto& a = b.arch;
  Rng rng = make_rng(seed, "init");
  const auto e = a.embed_dim;
  const auto sh = a.state_hidden;
  const auto ah = a.action_hidden;
  if (obs_kind == rope::ObsKind::Coords) {
    b.state_mlp = xavier_mlp({a.observation_features(), sh, sh, sh, e}, rng);
  } else {
    b.state_conv = xavier_conv(a, rng);
  }
  if (has_action_codec(variant)) {
    b.action_encoder = xavier_mlp({4, ah, ah, ah, e}, rng);
    b.action_decoder = xavier_mlp({e, ah, ah, ah, 4}, rng);
  }
  if (has_forward(variant)) {
    b.forward_model = xavier_mlp({e + a.forward_action_dim(), sh, sh, sh, e}, rng);
  }
  if (has_inverse(variant)) {
    b.inverse_model = xavier_mlp({2 * e, sh, sh, sh, e}, rng);
  }
  return b;
}

void require_forward(const ModelBundle& bundle) {
  if (!bundle.forward_model) {
    throw VariantMismatchError("variant '" + std::string(to_string(bundle.arch.variant)) +
                               "' has no forward model");
  }
}

void require_inverse(const ModelBundle& bundle) {
  if (!bundle.inverse_model || !bundle.action_decoder) {
    throw VariantMismatchError("variant '" + std::string(to_string(bundle.arch.variant)) +
                               "' has no inverse model and action decoder");
  }
}

BoundModel bind(Graph& graph, const ModelBundle& bundle) {
  BoundModel m;
  m.arch = bundle.arch;
  if (bundle.arch.obs_kind == rope::ObsKind::Coords) {
    m.state_mlp = bind_mlp(graph, bundle.state_mlp, m.parameters);
  } else {
    for (const auto& s : bundle.state_conv.stages) {
      auto k = graph.parameter(s.kernel);
      auto b = graph.parameter(s.bias);
      m.parameters.push_back(k);
      m.parameters.push_back(b);
      m.state_conv.stages.emplace_back(k, b);
      m.state_conv.geometry.push_back(s.geometry);
    }
    auto w = graph.parameter(bundle.state_conv.head.weight);
    auto b = graph.parameter(bundle.state_conv.head.bias);
    m.parameters.push_back(w);
    m.parameters.push_back(b);
    m.state_conv.head = {w, b};
  }
  if (bundle.action_encoder) m.action_encoder = bind_mlp(graph, *bundle.action_encoder, m.parameters);
  if (bundle.action_decoder) m.action_decoder = bind_mlp(graph, *bundle.action_decoder, m.parameters);
  if (bundle.forward_model) m.forward_model = bind_mlp(graph, *bundle.forward_model, m.parameters);
  if (bundle.inverse_model) m.inverse_model = bind_mlp(graph, *bundle.inverse_model, m.parameters);
  return m;
}

NodeId apply_mlp(Graph& graph, const BoundMlp& mlp, NodeId x) {
  for (std::size_t i = 0; i < mlp.layers.size(); ++i) {
    x = graph.add_row(graph.matmul(x, mlp.layers[i].first), mlp.layers[i].second);
    if (i + 1 < mlp.layers.size()) x = graph.relu(x);
  }
  return x;
}

NodeId encode_state(Graph& graph, const BoundModel& m, NodeId observations) {
  if (m.arch.obs_kind == rope::ObsKind::Coords) return apply_mlp(graph, m.state_mlp, observations);
  NodeId x = observations;
  for (std::size_t i = 0; i < m.state_conv.stages.size(); ++i) {
    const auto& [k, b] = m.state_conv.stages[i];
    x = graph.relu(graph.conv2d(x, k, b, m.state_conv.geometry[i]));
  }
  return graph.add_row(graph.matmul(x, m.state_conv.head.first), m.state_conv.head.second);
}

NodeId encode_action(Graph& graph, const BoundModel& m, NodeId actions) {
  if (!m.action_encoder) throw VariantMismatchError("bundle has no action encoder");
  return apply_mlp(graph, *m.action_encoder,
                   graph.scale(actions, 1.0 / static_cast<double>(m.arch.image_size)));
}

NodeId action_input(Graph& graph, const BoundModel& m, NodeId actions) {
  if (m.arch.variant == Variant::F) {
    return graph.scale(actions, 1.0 / static_cast<double>(m.arch.image_size));
  }
  return encode_action(graph, m, actions);
}

NodeId decode_action(Graph& graph, const BoundModel& m, NodeId z) {
  if (!m.action_decoder) throw VariantMismatchError("bundle has no action decoder");
  return apply_mlp(graph, *m.action_decoder, graph.normalize_rows(z));
}

NodeId forward_predict(Graph& graph, const BoundModel& m, NodeId h, NodeId z) {
  if (!m.forward_model) throw VariantMismatchError("bundle has no forward model");
  return apply_mlp(graph, *m.forward_model, graph.concat(h, z));
}

NodeId inverse_predict(Graph& graph, const BoundModel& m, NodeId h_t, NodeId h_next) {
  if (!m.inverse_model) throw VariantMismatchError("bundle has no inverse model");
  return apply_mlp(graph, *m.inverse_model, graph.concat(h_t, h_next));
}

Tensor encode_states(const ModelBundle& bundle, const Tensor& observations) {
  if (observations.cols() != bundle.arch.observation_features()) {
    throw ShapeError("encode_states: observation has " + std::to_string(observations.cols()) +
                     " features, model expects " +
                     std::to_string(bundle.arch.observation_features()));
  }
  return eval_one([&](Graph& g) {
    auto m = bind(g, bundle);
    return encode_state(g, m, g.constant(observations));
  });
}

std::vector<double> encode_state(const ModelBundle& bundle, const rope::Observation& obs) {
  if (obs.kind != bundle.arch.obs_kind) {
    throw ShapeError("encode_state: observation kind '" + std::string(rope::to_string(obs.kind)) +
                     "' does not match model kind '" +
                     std::string(rope::to_string(bundle.arch.obs_kind)) + "'");
  }
  return encode_states(bundle, Tensor::row(obs.values)).values();
}

Tensor actions_tensor(std::span<const rope::Action> actions) {
  std::vector<double> data;
  data.reserve(actions.size() * 4);
  for (const auto& a : actions) data.insert(data.end(), {a.x1, a.y1, a.x2, a.y2});
  return Tensor::matrix(actions.size(), 4, std::move(data));
}

Tensor encode_actions(const ModelBundle& bundle, const Tensor& actions) {
  return eval_one([&](Graph& g) {
    auto m = bind(g, bundle);
    return encode_action(g, m, g.constant(actions));
  });
}

std::vector<double> encode_action(const ModelBundle& bundle, const rope::Action& action) {
  return encode_actions(bundle, actions_tensor(std::span(&action, 1))).values();
}

Tensor action_inputs(const ModelBundle& bundle, const Tensor& actions) {
  return eval_one([&](Graph& g) {
    auto m = bind(g, bundle);
    return action_input(g, m, g.constant(actions));
  });
}

Tensor decode_actions(const ModelBundle& bundle, const Tensor& z) {
  return eval_one([&](Graph& g) {
    auto m = bind(g, bundle);
    return decode_action(g, m, g.constant(z));
  });
}

rope::Action decode_action(const ModelBundle& bundle, std::span<const double> z) {
  const Tensor out = decode_actions(bundle, Tensor::row({z.begin(), z.end()}));
  rope::EnvConfig bounds;
  bounds.image_size = bundle.arch.image_size;
  return rope::clamp_action({out[0], out[1], out[2], out[3]}, bounds);
}

Tensor forward_predict(const ModelBundle& bundle, const Tensor& h, const Tensor& z) {
  require_forward(bundle);
  if (z.cols() != bundle.arch.forward_action_dim()) {
    throw ShapeError("forward_predict: action representation has " + std::to_string(z.cols()) +
                     " columns, variant '" + std::string(to_string(bundle.arch.variant)) +
                     "' expects " + std::to_string(bundle.arch.forward_action_dim()));
  }
  return eval_one([&](Graph& g) {
    auto m = bind(g, bundle);
    return forward_predict(g, m, g.constant(h), g.constant(z));
  });
}

Tensor inverse_predict(const ModelBundle& bundle, const Tensor& h_t, const Tensor& h_next) {
  return eval_one([&](Graph& g) {
    auto m = bind(g, bundle);
    return inverse_predict(g, m, g.constant(h_t), g.constant(h_next));
  });
}

}  // namespace cloud::model
