#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cloud/graph.hpp"
#include "cloud/observation.hpp"
#include "cloud/rope.hpp"
#include "cloud/tensor.hpp"

namespace cloud::model {

/// Which dynamics models a bundle carries.
///   FI: state encoder g, action encoder q, action decoder p, forward F, inverse I.
///   F:  g and F; F consumes the raw (scaled) action instead of q(a).
///   I:  g, q, p and I.
enum class Variant { F, I, FI };

std::string_view to_string(Variant v);
Variant parse_variant(std::string_view text);

bool has_forward(Variant v);
bool has_inverse(Variant v);
bool has_action_codec(Variant v);

class VariantMismatchError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct DenseLayer {
  Tensor weight;  // [in, out]
  Tensor bias;    // [1, out]
};

/// ReLU between layers, identity on the last one.
struct Mlp {
  std::vector<DenseLayer> layers;
  std::size_t in_dim() const { return layers.front().weight.rows(); }
  std::size_t out_dim() const { return layers.back().weight.cols(); }
};

struct ConvStage {
  Tensor kernel;  // [out_channels, in_channels * k * k]
  Tensor bias;    // [1, out_channels]
  ad::ConvGeometry geometry;
};

struct ConvEncoder {
  std::vector<ConvStage> stages;
  DenseLayer head;
};

struct Architecture {
  Variant variant = Variant::FI;
  rope::ObsKind obs_kind = rope::ObsKind::Coords;
  std::size_t embed_dim = 16;
  std::size_t geom_count = 25;
  std::size_t image_size = 64;
  std::size_t state_hidden = 128;
  std::size_t action_hidden = 64;

  std::size_t observation_features() const;
  std::size_t forward_action_dim() const { return variant == Variant::F ? 4 : embed_dim; }
  friend bool operator==(const Architecture&, const Architecture&) = default;
};

struct NamedTensor {
  std::string name;
  Tensor* tensor;
};

struct ConstNamedTensor {
  std::string name;
  const Tensor* tensor;
};

struct ModelBundle {
  Architecture arch;
  Mlp state_mlp;           // coords observations
  ConvEncoder state_conv;  // raster observations
  std::optional<Mlp> action_encoder;
  std::optional<Mlp> action_decoder;
  std::optional<Mlp> forward_model;
  std::optional<Mlp> inverse_model;

  /// Every parameter tensor in a fixed canonical order (checkpoint order).
  std::vector<NamedTensor> parameters();
  std::vector<ConstNamedTensor> parameters() const;
  std::size_t parameter_count() const;
};

bool bitwise_equal(const ModelBundle& a, const ModelBundle& b);

/// Xavier-uniform weights, zero biases, reproducible from `seed`.
ModelBundle init_bundle(Variant variant, rope::ObsKind obs_kind, std::uint64_t seed,
                        const Architecture& dims = {});

/// Throws VariantMismatchError unless `bundle` has the named models.
void require_forward(const ModelBundle& bundle);
void require_inverse(const ModelBundle& bundle);

// ---------------------------------------------------------------------------
// Graph form. bind() adds every parameter as a trainable leaf in canonical
// order; the builders below wire a model onto existing nodes.

struct BoundMlp {
  std::vector<std::pair<ad::NodeId, ad::NodeId>> layers;
};

struct BoundConv {
  std::vector<std::pair<ad::NodeId, ad::NodeId>> stages;
  std::vector<ad::ConvGeometry> geometry;
  std::pair<ad::NodeId, ad::NodeId> head;
};

struct BoundModel {
  Architecture arch;
  BoundMlp state_mlp;
  BoundConv state_conv;
  std::optional<BoundMlp> action_encoder;
  std::optional<BoundMlp> action_decoder;
  std::optional<BoundMlp> forward_model;
  std::optional<BoundMlp> inverse_model;
  std::vector<ad::NodeId> parameters;  // canonical order
};

BoundModel bind(ad::Graph& graph, const ModelBundle& bundle);

ad::NodeId apply_mlp(ad::Graph& graph, const BoundMlp& mlp, ad::NodeId x);

/// h = g(o): [n, features] -> [n, embed_dim]
ad::NodeId encode_state(ad::Graph& graph, const BoundModel& m, ad::NodeId observations);
/// z = q(a / image_size): [n, 4] pixel actions -> [n, embed_dim]
ad::NodeId encode_action(ad::Graph& graph, const BoundModel& m, ad::NodeId actions);
/// Input F consumes for these actions: q(a) or, for variant F, a / image_size.
ad::NodeId action_input(ad::Graph& graph, const BoundModel& m, ad::NodeId actions);
/// p(z / |z|): [n, embed_dim] -> [n, 4] pixel actions, unclamped.
ad::NodeId decode_action(ad::Graph& graph, const BoundModel& m, ad::NodeId z);
/// F(h, z) on the concatenated input.
ad::NodeId forward_predict(ad::Graph& graph, const BoundModel& m, ad::NodeId h, ad::NodeId z);
/// I(h_t, h_{t+1}) on the concatenated input.
ad::NodeId inverse_predict(ad::Graph& graph, const BoundModel& m, ad::NodeId h_t,
                           ad::NodeId h_next);

// ---------------------------------------------------------------------------
// Eager form for inference. Rows are samples.

Tensor encode_states(const ModelBundle& bundle, const Tensor& observations);
std::vector<double> encode_state(const ModelBundle& bundle, const rope::Observation& obs);
Tensor actions_tensor(std::span<const rope::Action> actions);
Tensor encode_actions(const ModelBundle& bundle, const Tensor& actions);
std::vector<double> encode_action(const ModelBundle& bundle, const rope::Action& action);
Tensor action_inputs(const ModelBundle& bundle, const Tensor& actions);
Tensor decode_actions(const ModelBundle& bundle, const Tensor& z);
/// Decoded action clamped into the image.
rope::Action decode_action(const ModelBundle& bundle, std::span<const double> z);
Tensor forward_predict(const ModelBundle& bundle, const Tensor& h, const Tensor& z);
Tensor inverse_predict(const ModelBundle& bundle, const Tensor& h_t, const Tensor& h_next);

}  // namespace cloud::model
