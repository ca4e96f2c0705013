#include "cloud/graph.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>

namespace cloud::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

constexpr double kNormalizeEps = 1e-12;

ConstMap view(const Tensor& t) {
  return ConstMap(t.data().data(), static_cast<Eigen::Index>(t.rows()),
                  static_cast<Eigen::Index>(t.cols()));
}

MutMap view(Tensor& t) {
  return MutMap(t.data().data(), static_cast<Eigen::Index>(t.rows()),
                static_cast<Eigen::Index>(t.cols()));
}

void require_rank2(const Shape& s, const char* op) {
  if (s.size() != 2) {
    throw ShapeError(std::string(op) + ": expected rank-2 operand, got " + to_string(s));
  }
}

void require_same(const Shape& a, const Shape& b, const char* op) {
  if (a != b) {
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a) + " vs " + to_string(b));
  }
}

double row_norm(const double* row, std::size_t n) {
  double s = 0.0;
  for (std::size_t k = 0; k < n; ++k) s += row[k] * row[k];
  return std::sqrt(s);
}

double checked_norm(const double* row, std::size_t n, const char* op) {
  const double norm = row_norm(row, n);
  if (norm == 0.0) throw DomainError(std::string(op) + ": zero-norm vector");
  return norm;
}

// Rows of `t` scaled to unit length; norms written to `norms`.
RowMat unit_rows(const Tensor& t, std::vector<double>& norms, const char* op) {
  const auto n = t.rows();
  const auto d = t.cols();
  RowMat out(n, d);
  norms.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* r = t.data().data() + i * d;
    norms[i] = checked_norm(r, d, op);
    for (std::size_t k = 0; k < d; ++k) out(i, k) = r[k] / norms[i];
  }
  return out;
}

// Unrolls the receptive fields of one image into [patch_size, out_h*out_w].
void im2col(const double* image, const ConvGeometry& g, RowMat& cols) {
  const auto oh = g.out_height();
  const auto ow = g.out_width();
  cols.setZero(static_cast<Eigen::Index>(g.patch_size()), static_cast<Eigen::Index>(oh * ow));
  for (std::size_t c = 0; c < g.in_channels; ++c) {
    for (std::size_t ky = 0; ky < g.kernel; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel; ++kx) {
        const auto row = (c * g.kernel + ky) * g.kernel + kx;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                          static_cast<std::ptrdiff_t>(g.padding);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) continue;
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                            static_cast<std::ptrdiff_t>(g.padding);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.width)) continue;
            cols(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(oy * ow + ox)) =
                image[(c * g.height + static_cast<std::size_t>(iy)) * g.width +
                      static_cast<std::size_t>(ix)];
          }
        }
      }
    }
  }
}

void col2im(const RowMat& cols, const ConvGeometry& g, double* image) {
  const auto oh = g.out_height();
  const auto ow = g.out_width();
  for (std::size_t c = 0; c < g.in_channels; ++c) {
    for (std::size_t ky = 0; ky < g.kernel; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel; ++kx) {
        const auto row = (c * g.kernel + ky) * g.kernel + kx;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                          static_cast<std::ptrdiff_t>(g.padding);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) continue;
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                            static_cast<std::ptrdiff_t>(g.padding);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.width)) continue;
            image[(c * g.height + static_cast<std::size_t>(iy)) * g.width +
                  static_cast<std::size_t>(ix)] +=
                cols(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(oy * ow + ox));
          }
        }
      }
    }
  }
}

void accumulate(std::vector<Tensor>& grads, NodeId id, const Shape& shape, const auto& fill) {
  auto& g = grads[id.index];
  if (g.size() == 0) g = Tensor(shape, 0.0);
  fill(g);
}

}  // namespace

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::Input: return "input";
    case OpKind::Parameter: return "parameter";
    case OpKind::Constant: return "constant";
    case OpKind::MatMul: return "matmul";
    case OpKind::Add: return "add";
    case OpKind::AddRow: return "add_row";
    case OpKind::Relu: return "relu";
    case OpKind::Tanh: return "tanh";
    case OpKind::Exp: return "exp";
    case OpKind::Log: return "log";
    case OpKind::Square: return "square";
    case OpKind::Scale: return "scale";
    case OpKind::Sum: return "sum";
    case OpKind::Concat: return "concat";
    case OpKind::CosineRows: return "cosine_rows";
    case OpKind::CosinePairwise: return "cosine_pairwise";
    case OpKind::NormalizeRows: return "normalize_rows";
    case OpKind::MaskedLogSumExp: return "masked_logsumexp";
    case OpKind::Conv2d: return "conv2d";
  }
  return "unknown";
}

Feed& Feed::bind(NodeId node, Tensor value) {
  bindings_.insert_or_assign(node, std::move(value));
  return *this;
}

const Tensor* Feed::find(NodeId node) const {
  auto it = bindings_.find(node);
  return it == bindings_.end() ? nullptr : &it->second;
}

const Tensor& Gradients::of(NodeId node) const {
  auto it = grads_.find(node);
  if (it == grads_.end()) {
    throw std::out_of_range("no gradient for node " + std::to_string(node.index) +
                            " (not a trainable leaf)");
  }
  return it->second;
}

#ifdef NDEBUG
Graph::Graph() : check_finite_(false) {}
#else
Graph::Graph() : check_finite_(true) {}
#endif

NodeId Graph::push(Node n) {
  for (auto in : n.inputs) {
    if (in.index >= nodes_.size()) throw std::out_of_range("graph input refers to unknown node");
    n.needs_grad = n.needs_grad || nodes_[in.index].needs_grad;
  }
  n.needs_grad = n.needs_grad || n.kind == OpKind::Parameter;
  nodes_.push_back(std::move(n));
  evaluated_ = false;
  return NodeId{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

const Graph::Node& Graph::node(NodeId id) const {
  if (id.index >= nodes_.size()) throw std::out_of_range("unknown graph node");
  return nodes_[id.index];
}

const Tensor& Graph::value(NodeId id) const {
  if (!evaluated_) throw std::logic_error("graph has not been evaluated");
  return node(id).value;
}

const Shape& Graph::shape(NodeId id) const { return node(id).shape; }
OpKind Graph::kind(NodeId id) const { return node(id).kind; }
bool Graph::trainable(NodeId id) const { return node(id).kind == OpKind::Parameter; }

double Graph::min_relu_margin() const {
  double margin = std::numeric_limits<double>::infinity();
  for (const auto& n : nodes_) {
    if (n.kind != OpKind::Relu) continue;
    for (double x : nodes_[n.inputs[0].index].value.data()) margin = std::min(margin, std::abs(x));
  }
  return margin;
}

std::vector<NodeId> Graph::parameters() const {
  std::vector<NodeId> out;
  for (std::uint32_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].kind == OpKind::Parameter) out.push_back(NodeId{i});
  }
  return out;
}

NodeId Graph::input(Shape shape, std::string name) {
  require_rank2(shape, "input");
  Node n{OpKind::Input, {}, shape};
  n.name = std::move(name);
  return push(std::move(n));
}

NodeId Graph::parameter(Tensor value, std::string name) {
  require_rank2(value.shape(), "parameter");
  Shape s = value.shape();
  Node n{OpKind::Parameter, {}, std::move(s)};
  n.value = std::move(value);
  n.name = std::move(name);
  return push(std::move(n));
}

NodeId Graph::constant(Tensor value) {
  require_rank2(value.shape(), "constant");
  Shape s = value.shape();
  Node n{OpKind::Constant, {}, std::move(s)};
  n.value = std::move(value);
  return push(std::move(n));
}

NodeId Graph::matmul(NodeId a, NodeId b) {
  const auto& sa = shape(a);
  const auto& sb = shape(b);
  if (sa[1] != sb[0]) {
    throw ShapeError("matmul: inner dimensions differ " + to_string(sa) + " x " + to_string(sb));
  }
  return push(Node{OpKind::MatMul, {a, b}, {sa[0], sb[1]}});
}

NodeId Graph::add(NodeId a, NodeId b) {
  require_same(shape(a), shape(b), "add");
  return push(Node{OpKind::Add, {a, b}, shape(a)});
}

NodeId Graph::add_row(NodeId a, NodeId row) {
  const auto& sa = shape(a);
  const auto& sr = shape(row);
  if (sr[0] != 1 || sr[1] != sa[1]) {
    throw ShapeError("add_row: cannot broadcast " + to_string(sr) + " over " + to_string(sa));
  }
  return push(Node{OpKind::AddRow, {a, row}, sa});
}

NodeId Graph::relu(NodeId a) { return push(Node{OpKind::Relu, {a}, shape(a)}); }
NodeId Graph::tanh(NodeId a) { return push(Node{OpKind::Tanh, {a}, shape(a)}); }
NodeId Graph::exp(NodeId a) { return push(Node{OpKind::Exp, {a}, shape(a)}); }
NodeId Graph::log(NodeId a) { return push(Node{OpKind::Log, {a}, shape(a)}); }
NodeId Graph::square(NodeId a) { return push(Node{OpKind::Square, {a}, shape(a)}); }

NodeId Graph::scale(NodeId a, double factor) {
  Node n{OpKind::Scale, {a}, shape(a)};
  n.factor = factor;
  return push(std::move(n));
}

NodeId Graph::sum(NodeId a) { return push(Node{OpKind::Sum, {a}, {1, 1}}); }

NodeId Graph::mean(NodeId a) {
  return scale(sum(a), 1.0 / static_cast<double>(element_count(shape(a))));
}

NodeId Graph::concat(NodeId a, NodeId b) {
  const auto& sa = shape(a);
  const auto& sb = shape(b);
  if (sa[0] != sb[0]) {
    throw ShapeError("concat: row counts differ " + to_string(sa) + " vs " + to_string(sb));
  }
  return push(Node{OpKind::Concat, {a, b}, {sa[0], sa[1] + sb[1]}});
}

NodeId Graph::cosine_rows(NodeId a, NodeId b) {
  require_same(shape(a), shape(b), "cosine_rows");
  return push(Node{OpKind::CosineRows, {a, b}, {shape(a)[0], 1}});
}

NodeId Graph::cosine_pairwise(NodeId a, NodeId b) {
  const auto& sa = shape(a);
  const auto& sb = shape(b);
  if (sa[1] != sb[1]) {
    throw ShapeError("cosine_pairwise: feature sizes differ " + to_string(sa) + " vs " +
                     to_string(sb));
  }
  return push(Node{OpKind::CosinePairwise, {a, b}, {sa[0], sb[0]}});
}

NodeId Graph::normalize_rows(NodeId a) {
  return push(Node{OpKind::NormalizeRows, {a}, shape(a)});
}

NodeId Graph::masked_logsumexp(NodeId a, std::vector<bool> keep) {
  const auto& sa = shape(a);
  if (keep.size() != element_count(sa)) {
    throw ShapeError("masked_logsumexp: mask has " + std::to_string(keep.size()) +
                     " entries for operand " + to_string(sa));
  }
  for (std::size_t r = 0; r < sa[0]; ++r) {
    bool any = false;
    for (std::size_t c = 0; c < sa[1]; ++c) any = any || keep[r * sa[1] + c];
    if (!any) throw ShapeError("masked_logsumexp: row " + std::to_string(r) + " keeps nothing");
  }
  Node n{OpKind::MaskedLogSumExp, {a}, {sa[0], 1}};
  n.mask = std::make_shared<const std::vector<bool>>(std::move(keep));
  return push(std::move(n));
}

NodeId Graph::conv2d(NodeId images, NodeId kernel, NodeId bias, const ConvGeometry& g) {
  const auto& si = shape(images);
  const auto& sk = shape(kernel);
  const auto& sb = shape(bias);
  if (si[1] != g.in_features()) {
    throw ShapeError("conv2d: images have " + std::to_string(si[1]) + " features, geometry needs " +
                     std::to_string(g.in_features()));
  }
  if (sk != Shape{g.out_channels, g.patch_size()}) {
    throw ShapeError("conv2d: kernel shape " + to_string(sk) + " does not match geometry");
  }
  if (sb != Shape{1, g.out_channels}) {
    throw ShapeError("conv2d: bias shape " + to_string(sb) + " does not match geometry");
  }
  Node n{OpKind::Conv2d, {images, kernel, bias}, {si[0], g.out_features()}};
  n.conv = g;
  return push(std::move(n));
}

void Graph::forward(const Feed& feed) {
  for (std::uint32_t i = 0; i < nodes_.size(); ++i) {
    Node& n = nodes_[i];
    const bool leaf = n.kind == OpKind::Input || n.kind == OpKind::Parameter ||
                      n.kind == OpKind::Constant;
    if (leaf) {
      if (const Tensor* bound = feed.find(NodeId{i})) {
        if (bound->shape() != n.shape) {
          throw ShapeError("feed for node " + std::to_string(i) + (n.name.empty() ? "" : " (" + n.name + ")") +
                           " has shape " + to_string(bound->shape()) + ", expected " +
                           to_string(n.shape));
        }
        n.value = *bound;
      } else if (n.kind == OpKind::Input) {
        throw UnboundInputError("input node " + std::to_string(i) +
                                (n.name.empty() ? "" : " (" + n.name + ")") + " is not bound");
      }
    } else {
      evaluate(n);
    }
    if (check_finite_ && !n.value.all_finite()) {
      throw NumericError(std::string("non-finite value produced by ") + op_name(n.kind) +
                         " at node " + std::to_string(i));
    }
  }
  evaluated_ = true;
}

Tensor Graph::forward_eval(NodeId output, const Feed& feed) {
  forward(feed);
  return value(output);
}

void Graph::evaluate(Node& n) const {
  auto in = [&](std::size_t k) -> const Tensor& { return nodes_[n.inputs[k].index].value; };
  Tensor out(n.shape, 0.0);
  switch (n.kind) {
    case OpKind::MatMul:
      view(out).noalias() = view(in(0)) * view(in(1));
      break;
    case OpKind::Add:
      view(out) = view(in(0)) + view(in(1));
      break;
    case OpKind::AddRow:
      view(out) = view(in(0));
      view(out).rowwise() += view(in(1)).row(0);
      break;
    case OpKind::Relu:
      for (std::size_t k = 0; k < out.size(); ++k) out[k] = std::max(0.0, in(0)[k]);
      break;
    case OpKind::Tanh:
      for (std::size_t k = 0; k < out.size(); ++k) out[k] = std::tanh(in(0)[k]);
      break;
    case OpKind::Exp:
      for (std::size_t k = 0; k < out.size(); ++k) out[k] = std::exp(in(0)[k]);
      break;
    case OpKind::Log:
      for (std::size_t k = 0; k < out.size(); ++k) {
        if (!(in(0)[k] > 0.0)) throw DomainError("log of non-positive value");
        out[k] = std::log(in(0)[k]);
      }
      break;
    case OpKind::Square:
      for (std::size_t k = 0; k < out.size(); ++k) out[k] = in(0)[k] * in(0)[k];
      break;
    case OpKind::Scale:
      for (std::size_t k = 0; k < out.size(); ++k) out[k] = n.factor * in(0)[k];
      break;
    case OpKind::Sum: {
      double s = 0.0;
      for (double v : in(0).data()) s += v;
      out[0] = s;
      break;
    }
    case OpKind::Concat: {
      const auto& a = in(0);
      const auto& b = in(1);
      const auto ca = a.cols();
      const auto cb = b.cols();
      for (std::size_t r = 0; r < out.rows(); ++r) {
        std::copy_n(a.data().data() + r * ca, ca, out.data().data() + r * (ca + cb));
        std::copy_n(b.data().data() + r * cb, cb, out.data().data() + r * (ca + cb) + ca);
      }
      break;
    }
    case OpKind::CosineRows: {
      const auto& a = in(0);
      const auto& b = in(1);
      const auto d = a.cols();
      for (std::size_t r = 0; r < a.rows(); ++r) {
        const double* x = a.data().data() + r * d;
        const double* y = b.data().data() + r * d;
        const double nx = checked_norm(x, d, "cosine_rows");
        const double ny = checked_norm(y, d, "cosine_rows");
        double dot = 0.0;
        for (std::size_t k = 0; k < d; ++k) dot += x[k] * y[k];
        out[r] = dot / (nx * ny);
      }
      break;
    }
    case OpKind::CosinePairwise: {
      std::vector<double> na;
      std::vector<double> nb;
      const RowMat ua = unit_rows(in(0), na, "cosine_pairwise");
      const RowMat ub = unit_rows(in(1), nb, "cosine_pairwise");
      view(out).noalias() = ua * ub.transpose();
      break;
    }
    case OpKind::NormalizeRows: {
      const auto& a = in(0);
      const auto d = a.cols();
      for (std::size_t r = 0; r < a.rows(); ++r) {
        const double* x = a.data().data() + r * d;
        double sq = 0.0;
        for (std::size_t k = 0; k < d; ++k) sq += x[k] * x[k];
        const double inv = 1.0 / std::sqrt(sq + kNormalizeEps);
        for (std::size_t k = 0; k < d; ++k) out[r * d + k] = x[k] * inv;
      }
      break;
    }
    case OpKind::MaskedLogSumExp: {
      const auto& a = in(0);
      const auto& keep = *n.mask;
      const auto cols = a.cols();
      for (std::size_t r = 0; r < a.rows(); ++r) {
        double hi = -std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < cols; ++c) {
          if (keep[r * cols + c]) hi = std::max(hi, a.at(r, c));
        }
        double acc = 0.0;
        for (std::size_t c = 0; c < cols; ++c) {
          if (keep[r * cols + c]) acc += std::exp(a.at(r, c) - hi);
        }
        out[r] = hi + std::log(acc);
      }
      break;
    }
    case OpKind::Conv2d: {
      const auto& g = *n.conv;
      const auto& images = in(0);
      const auto kernel = view(in(1));
      const auto bias = view(in(2));
      const auto spatial = g.out_height() * g.out_width();
      RowMat cols;
      for (std::size_t s = 0; s < images.rows(); ++s) {
        im2col(images.data().data() + s * g.in_features(), g, cols);
        MutMap dst(out.data().data() + s * g.out_features(),
                   static_cast<Eigen::Index>(g.out_channels), static_cast<Eigen::Index>(spatial));
        dst.noalias() = kernel * cols;
        dst.colwise() += bias.row(0).transpose();
      }
      break;
    }
    case OpKind::Input:
    case OpKind::Parameter:
    case OpKind::Constant:
      return;
  }
  n.value = std::move(out);
}

Gradients Graph::backward(NodeId loss) const {
  if (!evaluated_) throw std::logic_error("backward() before forward()");
  const Node& root = node(loss);
  if (element_count(root.shape) != 1) {
    throw ShapeError("backward: loss must be scalar, got " + to_string(root.shape));
  }
  std::vector<Tensor> grads(loss.index + 1);
  grads[loss.index] = Tensor(root.shape, 1.0);
  for (std::int64_t i = loss.index; i >= 0; --i) {
    const auto& g = grads[static_cast<std::size_t>(i)];
    if (g.size() == 0) continue;
    propagate(nodes_[static_cast<std::size_t>(i)], g, grads);
  }
  Gradients out;
  for (std::uint32_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].kind != OpKind::Parameter) continue;
    if (i < grads.size() && grads[i].size() != 0) {
      out.grads_.emplace(NodeId{i}, std::move(grads[i]));
    } else {
      out.grads_.emplace(NodeId{i}, Tensor(nodes_[i].shape, 0.0));
    }
  }
  return out;
}

void Graph::propagate(const Node& n, const Tensor& up, std::vector<Tensor>& grads) const {
  auto in = [&](std::size_t k) -> const Node& { return nodes_[n.inputs[k].index]; };
  auto acc = [&](std::size_t k, const auto& fill) {
    if (!in(k).needs_grad) return;
    accumulate(grads, n.inputs[k], in(k).shape, fill);
  };
  const Tensor& y = n.value;
  switch (n.kind) {
    case OpKind::Input:
    case OpKind::Parameter:
    case OpKind::Constant:
      return;
    case OpKind::MatMul:
      acc(0, [&](Tensor& g) { view(g).noalias() += view(up) * view(in(1).value).transpose(); });
      acc(1, [&](Tensor& g) { view(g).noalias() += view(in(0).value).transpose() * view(up); });
      return;
    case OpKind::Add:
      acc(0, [&](Tensor& g) { view(g) += view(up); });
      acc(1, [&](Tensor& g) { view(g) += view(up); });
      return;
    case OpKind::AddRow:
      acc(0, [&](Tensor& g) { view(g) += view(up); });
      acc(1, [&](Tensor& g) { view(g).row(0) += view(up).colwise().sum(); });
      return;
    case OpKind::Relu:
      acc(0, [&](Tensor& g) {
        const auto& x = in(0).value;
        for (std::size_t k = 0; k < g.size(); ++k) g[k] += x[k] > 0.0 ? up[k] : 0.0;
      });
      return;
    case OpKind::Tanh:
      acc(0, [&](Tensor& g) {
        for (std::size_t k = 0; k < g.size(); ++k) g[k] += up[k] * (1.0 - y[k] * y[k]);
      });
      return;
    case OpKind::Exp:
      acc(0, [&](Tensor& g) {
        for (std::size_t k = 0; k < g.size(); ++k) g[k] += up[k] * y[k];
      });
      return;
    case OpKind::Log:
      acc(0, [&](Tensor& g) {
        const auto& x = in(0).value;
        for (std::size_t k = 0; k < g.size(); ++k) g[k] += up[k] / x[k];
      });
      return;
    case OpKind::Square:
      acc(0, [&](Tensor& g) {
        const auto& x = in(0).value;
        for (std::size_t k = 0; k < g.size(); ++k) g[k] += 2.0 * x[k] * up[k];
      });
      return;
    case OpKind::Scale:
      acc(0, [&](Tensor& g) {
        for (std::size_t k = 0; k < g.size(); ++k) g[k] += n.factor * up[k];
      });
      return;
    case OpKind::Sum:
      acc(0, [&](Tensor& g) {
        const double s = up[0];
        for (auto& v : g.data()) v += s;
      });
      return;
    case OpKind::Concat: {
      const auto ca = in(0).shape[1];
      const auto cb = in(1).shape[1];
      acc(0, [&](Tensor& g) {
        for (std::size_t r = 0; r < g.rows(); ++r)
          for (std::size_t c = 0; c < ca; ++c) g.at(r, c) += up.at(r, c);
      });
      acc(1, [&](Tensor& g) {
        for (std::size_t r = 0; r < g.rows(); ++r)
          for (std::size_t c = 0; c < cb; ++c) g.at(r, c) += up.at(r, ca + c);
      });
      return;
    }
    case OpKind::CosineRows: {
      const auto& a = in(0).value;
      const auto& b = in(1).value;
      const auto d = a.cols();
      Tensor ga(a.shape(), 0.0);
      Tensor gb(b.shape(), 0.0);
      for (std::size_t r = 0; r < a.rows(); ++r) {
        const double* x = a.data().data() + r * d;
        const double* z = b.data().data() + r * d;
        const double nx = row_norm(x, d);
        const double nz = row_norm(z, d);
        const double s = y[r];
        const double u = up[r];
        for (std::size_t k = 0; k < d; ++k) {
          ga[r * d + k] = u * (z[k] / (nx * nz) - s * x[k] / (nx * nx));
          gb[r * d + k] = u * (x[k] / (nx * nz) - s * z[k] / (nz * nz));
        }
      }
      acc(0, [&](Tensor& g) { view(g) += view(ga); });
      acc(1, [&](Tensor& g) { view(g) += view(gb); });
      return;
    }
    case OpKind::CosinePairwise: {
      std::vector<double> na;
      std::vector<double> nb;
      const RowMat ua = unit_rows(in(0).value, na, "cosine_pairwise");
      const RowMat ub = unit_rows(in(1).value, nb, "cosine_pairwise");
      // Gradient w.r.t. the unit rows, then through the normalization:
      // d/dx (x/|x|) applied to v is (v - (v.u)u)/|x|.
      RowMat dua = view(up) * ub;
      RowMat dub = view(up).transpose() * ua;
      for (Eigen::Index r = 0; r < dua.rows(); ++r) {
        const double proj = dua.row(r).dot(ua.row(r));
        dua.row(r) = (dua.row(r) - proj * ua.row(r)) / na[static_cast<std::size_t>(r)];
      }
      for (Eigen::Index r = 0; r < dub.rows(); ++r) {
        const double proj = dub.row(r).dot(ub.row(r));
        dub.row(r) = (dub.row(r) - proj * ub.row(r)) / nb[static_cast<std::size_t>(r)];
      }
      acc(0, [&](Tensor& g) { view(g) += dua; });
      acc(1, [&](Tensor& g) { view(g) += dub; });
      return;
    }
    case OpKind::NormalizeRows: {
      const auto& x = in(0).value;
      const auto d = x.cols();
      acc(0, [&](Tensor& g) {
        for (std::size_t r = 0; r < x.rows(); ++r) {
          const double* xr = x.data().data() + r * d;
          double sq = 0.0;
          double dot = 0.0;
          for (std::size_t k = 0; k < d; ++k) {
            sq += xr[k] * xr[k];
            dot += y[r * d + k] * up[r * d + k];
          }
          const double inv = 1.0 / std::sqrt(sq + kNormalizeEps);
          for (std::size_t k = 0; k < d; ++k) {
            g[r * d + k] += (up[r * d + k] - y[r * d + k] * dot) * inv;
          }
        }
      });
      return;
    }
    case OpKind::MaskedLogSumExp: {
      const auto& a = in(0).value;
      const auto& keep = *n.mask;
      const auto cols = a.cols();
      acc(0, [&](Tensor& g) {
        for (std::size_t r = 0; r < a.rows(); ++r) {
          for (std::size_t c = 0; c < cols; ++c) {
            if (keep[r * cols + c]) g.at(r, c) += up[r] * std::exp(a.at(r, c) - y[r]);
          }
        }
      });
      return;
    }
    case OpKind::Conv2d: {
      const auto& g = *n.conv;
      const auto& images = in(0).value;
      const auto kernel = view(in(1).value);
      const auto spatial = static_cast<Eigen::Index>(g.out_height() * g.out_width());
      const auto oc = static_cast<Eigen::Index>(g.out_channels);
      Tensor d_images(images.shape(), 0.0);
      RowMat d_kernel = RowMat::Zero(kernel.rows(), kernel.cols());
      Eigen::VectorXd d_bias = Eigen::VectorXd::Zero(oc);
      RowMat cols;
      RowMat d_cols;
      for (std::size_t s = 0; s < images.rows(); ++s) {
        ConstMap d_out(up.data().data() + s * g.out_features(), oc, spatial);
        im2col(images.data().data() + s * g.in_features(), g, cols);
        d_kernel.noalias() += d_out * cols.transpose();
        d_bias += d_out.rowwise().sum();
        if (in(0).needs_grad) {
          d_cols.noalias() = kernel.transpose() * d_out;
          col2im(d_cols, g, d_images.data().data() + s * g.in_features());
        }
      }
      acc(0, [&](Tensor& t) { view(t) += view(d_images); });
      acc(1, [&](Tensor& t) { view(t) += d_kernel; });
      acc(2, [&](Tensor& t) { view(t).row(0) += d_bias.transpose(); });
      return;
    }
  }
}

double cosine_sim(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size() || u.empty()) {
    throw ShapeError("cosine_sim: vectors must have equal nonzero length");
  }
  const double nu = checked_norm(u.data(), u.size(), "cosine_sim");
  const double nv = checked_norm(v.data(), v.size(), "cosine_sim");
  double dot = 0.0;
  for (std::size_t k = 0; k < u.size(); ++k) dot += u[k] * v[k];
  return dot / (nu * nv);
}

}  // namespace cloud::ad
