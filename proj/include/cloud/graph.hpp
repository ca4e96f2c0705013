#pragma once

#include <compare>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cloud/tensor.hpp"

namespace cloud::ad {

/// Handle to a node in a Graph. Only meaningful for the graph that issued it.
struct NodeId {
  std::uint32_t index = 0;
  friend auto operator<=>(const NodeId&, const NodeId&) = default;
};

/// Closed set of operations the engine differentiates.
enum class OpKind {
  Input,          // leaf bound at evaluation time through a Feed
  Parameter,      // trainable leaf
  Constant,       // non-trainable leaf with a fixed value
  MatMul,         // [n,k] x [k,m]
  Add,            // elementwise, equal shapes
  AddRow,         // [n,m] + [1,m] broadcast over rows
  Relu,
  Tanh,
  Exp,
  Log,
  Square,
  Scale,          // multiply by a fixed scalar
  Sum,            // all entries -> [1,1]
  Concat,         // along columns
  CosineRows,     // row i of a against row i of b -> [n,1]
  CosinePairwise, // every row of a against every row of b -> [n,m]
  NormalizeRows,  // x / sqrt(|x|^2 + eps), smooth at the origin
  MaskedLogSumExp,// per-row log-sum-exp over the entries a boolean mask keeps -> [n,1]
  Conv2d,         // 2D convolution on channel-major flattened images
};

const char* op_name(OpKind kind);

/// Raised when an evaluated value is NaN or infinite while finite checking is on.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when forward evaluation meets an Input leaf with no binding.
class UnboundInputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Geometry of a square-kernel convolution over channel-major images.
struct ConvGeometry {
  std::size_t in_channels = 1;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t out_channels = 1;
  std::size_t kernel = 3;
  std::size_t stride = 2;
  std::size_t padding = 1;

  std::size_t out_height() const { return (height + 2 * padding - kernel) / stride + 1; }
  std::size_t out_width() const { return (width + 2 * padding - kernel) / stride + 1; }
  std::size_t in_features() const { return in_channels * height * width; }
  std::size_t out_features() const { return out_channels * out_height() * out_width(); }
  std::size_t patch_size() const { return in_channels * kernel * kernel; }
};

/// Bindings of Input leaves to tensors for one evaluation.
class Feed {
 public:
  Feed& bind(NodeId node, Tensor value);
  const Tensor* find(NodeId node) const;

 private:
  std::map<NodeId, Tensor> bindings_;
};

/// Gradients of a scalar loss with respect to every trainable leaf.
class Gradients {
 public:
  const Tensor& of(NodeId node) const;
  bool contains(NodeId node) const { return grads_.contains(node); }
  const std::map<NodeId, Tensor>& all() const { return grads_; }

 private:
  friend class Graph;
  std::map<NodeId, Tensor> grads_;
};

/// Append-only computation graph with reverse-mode differentiation.
///
/// Nodes are added with shape inference, so wiring mistakes surface when the
/// graph is built. Inputs always carry smaller ids than the nodes consuming
/// them, which keeps evaluation and backpropagation a single linear sweep.
class Graph {
 public:
  Graph();

  NodeId input(Shape shape, std::string name = {});
  NodeId parameter(Tensor value, std::string name = {});
  NodeId constant(Tensor value);

  NodeId matmul(NodeId a, NodeId b);
  NodeId add(NodeId a, NodeId b);
  NodeId add_row(NodeId a, NodeId row);
  NodeId relu(NodeId a);
  NodeId tanh(NodeId a);
  NodeId exp(NodeId a);
  NodeId log(NodeId a);
  NodeId square(NodeId a);
  NodeId scale(NodeId a, double factor);
  NodeId sum(NodeId a);
  NodeId concat(NodeId a, NodeId b);
  NodeId cosine_rows(NodeId a, NodeId b);
  NodeId cosine_pairwise(NodeId a, NodeId b);
  NodeId normalize_rows(NodeId a);
  /// `keep` must have the same shape as `a`; each row needs at least one kept entry.
  NodeId masked_logsumexp(NodeId a, std::vector<bool> keep);
  NodeId conv2d(NodeId images, NodeId kernel, NodeId bias, const ConvGeometry& geometry);

  // Composites built from the op set above.
  NodeId sub(NodeId a, NodeId b) { return add(a, scale(b, -1.0)); }
  NodeId mean(NodeId a);

  /// Evaluates every node in id order. Parameter and Constant leaves use their
  /// stored values unless the feed rebinds them.
  void forward(const Feed& feed = {});
  /// Evaluates and returns the value of `output`.
  Tensor forward_eval(NodeId output, const Feed& feed = {});

  /// Backpropagates from a scalar node. forward() must have run.
  Gradients backward(NodeId loss) const;

  const Tensor& value(NodeId node) const;
  const Shape& shape(NodeId node) const;
  OpKind kind(NodeId node) const;
  bool trainable(NodeId node) const;
  std::size_t size() const noexcept { return nodes_.size(); }
  std::vector<NodeId> parameters() const;

  /// Smallest |x| fed to any Relu in the last evaluation (infinity without Relus).
  /// Finite-difference checks use it to stay away from kinks.
  double min_relu_margin() const;

  void set_check_finite(bool on) noexcept { check_finite_ = on; }
  bool evaluated() const noexcept { return evaluated_; }

 private:
  struct Node {
    Node(OpKind k, std::vector<NodeId> in, Shape s) : kind(k), inputs(std::move(in)), shape(std::move(s)) {}
    OpKind kind;
    std::vector<NodeId> inputs;
    Shape shape;
    Tensor value;
    std::string name;
    double factor = 0.0;
    std::shared_ptr<const std::vector<bool>> mask;
    std::optional<ConvGeometry> conv;
    bool needs_grad = false;
  };

  NodeId push(Node node);
  const Node& node(NodeId id) const;
  void evaluate(Node& n) const;
  void propagate(const Node& n, const Tensor& upstream, std::vector<Tensor>& grads) const;

  std::vector<Node> nodes_;
  bool evaluated_ = false;
  bool check_finite_;
};

/// Cosine similarity of two equal-length, nonzero vectors.
double cosine_sim(std::span<const double> u, std::span<const double> v);

}  // namespace cloud::ad
