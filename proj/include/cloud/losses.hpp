#pragma once

#include <optional>
#include <string_view>

#include "cloud/graph.hpp"
#include "cloud/models.hpp"
#include "cloud/tensor.hpp"

namespace cloud::train {

/// How the contrastive softmax denominator is formed for anchor i.
///   PaperLiteral:    only the 2(N-1) in-batch negatives, j != i in both sets.
///   StandardInfoNce: the same negatives plus the positive pair itself.
enum class Denominator { PaperLiteral, StandardInfoNce };

/// Contrastive estimation, or the deterministic regression baseline.
enum class Objective { Contrastive, Regression };

std::string_view to_string(Denominator d);
std::string_view to_string(Objective o);
Denominator parse_denominator(std::string_view text);
Objective parse_objective(std::string_view text);

/// One minibatch; rows are samples. Actions are in pixels.
struct Batch {
  Tensor observations;       // o_t
  Tensor next_observations;  // o_{t+1}
  Tensor actions;            // a_t
  Tensor next_actions;       // a_{t+1}, the action taken from s_{t+1}
  std::size_t size() const { return actions.rows(); }
};

struct LossConfig {
  double temperature = 0.1;
  double decoder_weight = 1.0;
  Denominator denominator = Denominator::PaperLiteral;
  Objective objective = Objective::Contrastive;
};

/// Mean over anchors of
///   -log exp(s(a_i, p_i)/t) / (sum_{j!=i} exp(s(a_i, p_j)/t) + sum_{j!=i} exp(s(a_i, o_j)/t))
/// with s the cosine similarity; StandardInfoNce adds exp(s(a_i, p_i)/t) below.
ad::NodeId nce_loss(ad::Graph& graph, ad::NodeId anchors, ad::NodeId positives, ad::NodeId others,
                    double temperature, Denominator mode);

/// Anchors h~_{t+1}, positives h_{t+1}, negatives drawn from h_t and h_{t+1}.
ad::NodeId forward_nce_loss(ad::Graph& graph, ad::NodeId predicted, ad::NodeId h_t,
                            ad::NodeId h_next, double temperature, Denominator mode);
/// Anchors z~_t, positives z_t, negatives drawn from z_t and z_{t+1}.
ad::NodeId inverse_nce_loss(ad::Graph& graph, ad::NodeId predicted, ad::NodeId z_t,
                            ad::NodeId z_next, double temperature, Denominator mode);
/// Mean over rows of |(decoded - actions) / image_size|^2.
ad::NodeId decoder_loss(ad::Graph& graph, ad::NodeId decoded, ad::NodeId actions,
                        double image_size);
/// Mean over rows of the squared Euclidean distance.
ad::NodeId mean_squared_distance(ad::Graph& graph, ad::NodeId a, ad::NodeId b);

struct BatchNodes {
  ad::NodeId observations;
  ad::NodeId next_observations;
  ad::NodeId actions;
  ad::NodeId next_actions;
};

BatchNodes batch_inputs(ad::Graph& graph, const Batch& batch, ad::Feed& feed);

struct LossNodes {
  std::optional<ad::NodeId> forward;
  std::optional<ad::NodeId> inverse;
  std::optional<ad::NodeId> decoder;
  ad::NodeId total;
};

/// Contrastive: FI -> l_F + l_I + w*l_dec, F -> l_F, I -> l_I + w*l_dec.
/// Regression (FI only): |h~ - h_{t+1}|^2 + |(p(z~) - a)/size|^2 + w*l_dec.
LossNodes total_loss(ad::Graph& graph, const model::BoundModel& model, const BatchNodes& batch,
                     const LossConfig& config);

struct LossValues {
  double forward = 0.0;
  double inverse = 0.0;
  double decoder = 0.0;
  double total = 0.0;
};

// Eager evaluation, mainly for tests and diagnostics.
double forward_nce_loss(const Tensor& predicted, const Tensor& h_t, const Tensor& h_next,
                        double temperature, Denominator mode);
double inverse_nce_loss(const Tensor& predicted, const Tensor& z_t, const Tensor& z_next,
                        double temperature, Denominator mode);
double decoder_loss(const Batch& batch, const model::ModelBundle& bundle);
LossValues total_loss(const Batch& batch, const model::ModelBundle& bundle,
                      const LossConfig& config);
double baseline_regression_loss(const Batch& batch, const model::ModelBundle& bundle,
                                double decoder_weight = 1.0);

}  // namespace cloud::train
