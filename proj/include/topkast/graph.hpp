#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "topkast/tensor.hpp"

namespace topkast {

/// Gradient values for one parameter tensor, present only at `indices`.
template <typename Scalar>
struct SparseGrad {
  IndexSet indices;
  std::vector<Scalar> values;

  std::size_t size() const { return indices.size(); }
  bool empty() const { return indices.empty(); }
};

/// Selects the parameter gradients backward() emits for one slot.
struct ActiveSet {
  const IndexSet* indices = nullptr;  // nullptr selects every offset

  static ActiveSet all() { return {}; }
  static ActiveSet of(const IndexSet& s) { return {&s}; }
};

enum class OpKind { Input, MatMul, BiasAdd, Relu, Add, Scale };
enum class LossKind { SoftmaxCrossEntropy, SquaredError };

struct ParamSlot {
  std::string name;
  std::vector<Index> shape;
  bool is_weight = true;  // matmul weights are maskable, biases are not
};

/// Tape of primitive ops over batch-major activations, terminated by a fused
/// loss head. Holds the activations of the last forward pass.
template <typename Scalar>
class ComputeGraph {
 public:
  struct Node {
    OpKind kind;
    int lhs = -1;
    int rhs = -1;
    int slot = -1;
    Scalar factor = Scalar(1);
    Index width = 0;
    std::string name;
  };

  // -- construction ---------------------------------------------------------

  int add_param_slot(std::string name, std::vector<Index> shape, bool is_weight) {
    for (Index d : shape) {
      if (d <= 0) throw DimensionError("parameter slot '" + name + "' has a non-positive dimension");
    }
    slots_.push_back({std::move(name), std::move(shape), is_weight});
    return static_cast<int>(slots_.size()) - 1;
  }

  int input(Index width, std::string name = "input") {
    if (!nodes_.empty()) throw StateError("the input node must come first");
    return push({OpKind::Input, -1, -1, -1, Scalar(1), width, std::move(name)});
  }

  /// y = x W^T with W of shape (out, in).
  int matmul(int x, int slot, std::string name = {}) {
    const ParamSlot& s = slot_at(slot);
    if (s.shape.size() != 2 || s.shape[1] != node_at(x).width) {
      throw DimensionError("matmul slot '" + s.name + "' shape " + shape_string(s.shape) +
                           " does not accept width " + std::to_string(node_at(x).width));
    }
    return push({OpKind::MatMul, x, -1, slot, Scalar(1), s.shape[0], default_name(name, "matmul")});
  }

  int bias_add(int x, int slot, std::string name = {}) {
    const ParamSlot& s = slot_at(slot);
    if (s.shape.size() != 1 || s.shape[0] != node_at(x).width) {
      throw DimensionError("bias slot '" + s.name + "' shape " + shape_string(s.shape) +
                           " does not match width " + std::to_string(node_at(x).width));
    }
    return push({OpKind::BiasAdd, x, -1, slot, Scalar(1), s.shape[0], default_name(name, "bias_add")});
  }

  int relu(int x, std::string name = {}) {
    return push({OpKind::Relu, x, -1, -1, Scalar(1), node_at(x).width, default_name(name, "relu")});
  }

  int add(int a, int b, std::string name = {}) {
    if (node_at(a).width != node_at(b).width) throw DimensionError("add of mismatched widths");
    return push({OpKind::Add, a, b, -1, Scalar(1), node_at(a).width, default_name(name, "add")});
  }

  int scale(int x, Scalar factor, std::string name = {}) {
    return push({OpKind::Scale, x, -1, -1, factor, node_at(x).width, default_name(name, "scale")});
  }

  void set_output(int node, LossKind loss) {
    node_at(node);
    output_ = node;
    loss_kind_ = loss;
  }

  // -- introspection --------------------------------------------------------

  const std::vector<Node>& nodes() const { return nodes_; }
  const std::vector<ParamSlot>& slots() const { return slots_; }
  Index input_width() const { return nodes_.empty() ? 0 : nodes_.front().width; }
  Index output_width() const { return node_at(output_).width; }
  LossKind loss_kind() const { return loss_kind_; }

  // -- evaluation -----------------------------------------------------------

  /// Runs the tape on `input` (batch, features). Activations are kept for backward().
  Tensor<Scalar> forward(std::span<const Tensor<Scalar>> params, const Tensor<Scalar>& input) {
    if (input.rank() != 2 || input.dim(1) != input_width()) {
      throw DimensionError("input shape " + shape_string(input.shape()) + " does not match input width " +
                           std::to_string(input_width()));
    }
    Matrix<Scalar> batch = input.matrix();
    forward_matrix(params, std::move(batch));
    return to_tensor<Scalar>(values_[static_cast<std::size_t>(output_)]);
  }

  /// Same as forward() but takes and returns batch-major matrices.
  const Matrix<Scalar>& forward_matrix(std::span<const Tensor<Scalar>> params, Matrix<Scalar> input) {
    if (output_ < 0) throw StateError("graph has no output node");
    check_params(params);
    if (input.cols() != input_width()) throw DimensionError("input width mismatch");
    params_ = params;
    loss_grad_.reset();
    values_.assign(nodes_.size(), Matrix<Scalar>());
    values_[0] = std::move(input);
    for (std::size_t i = 1; i < nodes_.size(); ++i) {
      const Node& n = nodes_[i];
      Matrix<Scalar>& out = values_[i];
      switch (n.kind) {
        case OpKind::MatMul:
          out.noalias() = values_[n.lhs] * params[n.slot].matrix().transpose();
          break;
        case OpKind::BiasAdd:
          out = values_[n.lhs].rowwise() + params[n.slot].values().transpose();
          break;
        case OpKind::Relu:
          out = values_[n.lhs].cwiseMax(Scalar(0));
          break;
        case OpKind::Add:
          out = values_[n.lhs] + values_[n.rhs];
          break;
        case OpKind::Scale:
          out = values_[n.lhs] * n.factor;
          break;
        case OpKind::Input:
          break;
      }
      if (!out.allFinite()) throw NumericError("non-finite value produced at node '" + n.name + "'");
    }
    has_forward_ = true;
    return values_[static_cast<std::size_t>(output_)];
  }

  /// Mean softmax cross-entropy over the batch.
  Scalar loss(std::span<const int> labels) {
    if (loss_kind_ != LossKind::SoftmaxCrossEntropy) throw StateError("graph loss head is not cross-entropy");
    const Matrix<Scalar>& logits = output_value();
    if (static_cast<Index>(labels.size()) != logits.rows()) throw DimensionError("label count does not match batch");
    const Index batch = logits.rows();
    Matrix<Scalar> grad(logits.rows(), logits.cols());
    Scalar total = 0;
    for (Index r = 0; r < batch; ++r) {
      const int label = labels[static_cast<std::size_t>(r)];
      if (label < 0 || label >= logits.cols()) throw ArgumentError("label out of range");
      const Scalar shift = logits.row(r).maxCoeff();
      auto shifted = (logits.row(r).array() - shift).eval();
      auto exps = shifted.exp().eval();
      const Scalar sum = exps.sum();
      total += std::log(sum) - shifted(label);
      grad.row(r) = exps / sum;
      grad(r, label) -= Scalar(1);
    }
    grad /= static_cast<Scalar>(batch);
    return finish_loss(total / static_cast<Scalar>(batch), std::move(grad));
  }

  /// Mean over the batch of the summed squared error.
  Scalar loss(const Tensor<Scalar>& targets) {
    if (loss_kind_ != LossKind::SquaredError) throw StateError("graph loss head is not squared error");
    const Matrix<Scalar>& out = output_value();
    if (targets.rank() != 2 || targets.dim(0) != out.rows() || targets.dim(1) != out.cols()) {
      throw DimensionError("target shape " + shape_string(targets.shape()) + " does not match output");
    }
    Matrix<Scalar> diff = out - Matrix<Scalar>(targets.matrix());
    const Scalar batch = static_cast<Scalar>(out.rows());
    const Scalar value = diff.squaredNorm() / batch;
    return finish_loss(value, (Scalar(2) / batch) * diff);
  }

  /// Reverse pass from the loss. Parameter gradients are produced only at the
  /// offsets of each slot's active set; activation gradients stay dense.
  std::vector<SparseGrad<Scalar>> backward(Scalar seed, std::span<const ActiveSet> active) {
    if (!has_forward_) throw StateError("backward called before forward");
    if (!loss_grad_) throw StateError("backward called before the loss was evaluated");
    if (active.size() != slots_.size()) throw DimensionError("one active set per parameter slot is required");
    for (std::size_t s = 0; s < slots_.size(); ++s) check_active(s, active[s]);

    std::vector<SparseGrad<Scalar>> grads(slots_.size());
    for (std::size_t s = 0; s < slots_.size(); ++s) {
      const Index n = shape_product(slots_[s].shape);
      if (active[s].indices) {
        grads[s].indices = *active[s].indices;
      } else {
        grads[s].indices.resize(static_cast<std::size_t>(n));
        std::iota(grads[s].indices.begin(), grads[s].indices.end(), 0u);
      }
      grads[s].values.assign(grads[s].indices.size(), Scalar(0));
    }

    std::vector<Matrix<Scalar>> dv(nodes_.size());
    dv[static_cast<std::size_t>(output_)] = seed * *loss_grad_;
    for (std::size_t i = nodes_.size(); i-- > 1;) {
      if (dv[i].size() == 0) continue;
      const Node& n = nodes_[i];
      const Matrix<Scalar>& dy = dv[i];
      switch (n.kind) {
        case OpKind::MatMul: {
          const Matrix<Scalar>& x = values_[n.lhs];
          const Index in = x.cols();
          SparseGrad<Scalar>& g = grads[n.slot];
          for (std::size_t k = 0; k < g.indices.size(); ++k) {
            const Index r = g.indices[k] / in;
            const Index c = g.indices[k] % in;
            g.values[k] += dy.col(r).dot(x.col(c));
          }
          if (needs_grad(n.lhs)) accumulate(dv, n.lhs, dy * params_[n.slot].matrix());
          break;
        }
        case OpKind::BiasAdd: {
          SparseGrad<Scalar>& g = grads[n.slot];
          for (std::size_t k = 0; k < g.indices.size(); ++k) g.values[k] += dy.col(g.indices[k]).sum();
          accumulate(dv, n.lhs, dy);
          break;
        }
        case OpKind::Relu:
          // subgradient 0 at exactly 0
          accumulate(dv, n.lhs, (values_[n.lhs].array() > Scalar(0)).select(dy, Scalar(0)));
          break;
        case OpKind::Add:
          accumulate(dv, n.lhs, dy);
          accumulate(dv, n.rhs, dy);
          break;
        case OpKind::Scale:
          accumulate(dv, n.lhs, n.factor * dy);
          break;
        case OpKind::Input:
          break;
      }
    }
    return grads;
  }

  /// Convenience overload: one explicit index set per slot.
  std::vector<SparseGrad<Scalar>> backward(Scalar seed, std::span<const IndexSet> active) {
    std::vector<ActiveSet> sets;
    sets.reserve(active.size());
    for (const IndexSet& s : active) sets.push_back(ActiveSet::of(s));
    return backward(seed, std::span<const ActiveSet>(sets));
  }

  /// Value of `node` in the most recent forward pass.
  const Matrix<Scalar>& value(int node) const {
    if (!has_forward_) throw StateError("no forward pass recorded");
    return values_.at(static_cast<std::size_t>(node));
  }

 private:
  int push(Node n) {
    if (n.kind != OpKind::Input && nodes_.empty()) throw StateError("graph needs an input node first");
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }

  std::string default_name(std::string& name, const char* kind) const {
    return name.empty() ? std::string(kind) + "#" + std::to_string(nodes_.size()) : std::move(name);
  }

  const Node& node_at(int i) const {
    if (i < 0 || static_cast<std::size_t>(i) >= nodes_.size()) throw ArgumentError("unknown node id");
    return nodes_[static_cast<std::size_t>(i)];
  }

  const ParamSlot& slot_at(int i) const {
    if (i < 0 || static_cast<std::size_t>(i) >= slots_.size()) throw ArgumentError("unknown parameter slot");
    return slots_[static_cast<std::size_t>(i)];
  }

  const Matrix<Scalar>& output_value() const {
    if (!has_forward_) throw StateError("loss evaluated before forward");
    return values_[static_cast<std::size_t>(output_)];
  }

  Scalar finish_loss(Scalar value, Matrix<Scalar> grad) {
    if (!std::isfinite(value)) throw NumericError("non-finite loss");
    loss_grad_ = std::move(grad);
    return value;
  }

  void check_params(std::span<const Tensor<Scalar>> params) const {
    if (params.size() != slots_.size()) {
      throw DimensionError("expected " + std::to_string(slots_.size()) + " parameter tensors, got " +
                           std::to_string(params.size()));
    }
    for (std::size_t s = 0; s < slots_.size(); ++s) {
      if (params[s].shape() != slots_[s].shape) {
        throw DimensionError("parameter '" + slots_[s].name + "' has shape " + shape_string(params[s].shape()) +
                             ", expected " + shape_string(slots_[s].shape));
      }
    }
  }

  void check_active(std::size_t slot, const ActiveSet& set) const {
    if (!set.indices) return;
    const Index n = shape_product(slots_[slot].shape);
    const IndexSet& idx = *set.indices;
    for (std::size_t k = 0; k < idx.size(); ++k) {
      if (idx[k] >= n) throw ArgumentError("active index out of bounds for '" + slots_[slot].name + "'");
      if (k && idx[k] <= idx[k - 1]) throw ArgumentError("active set for '" + slots_[slot].name + "' is not sorted");
    }
  }

  bool needs_grad(int node) const { return nodes_[static_cast<std::size_t>(node)].kind != OpKind::Input; }

  template <typename Expr>
  static void accumulate(std::vector<Matrix<Scalar>>& dv, int node, const Expr& g) {
    Matrix<Scalar>& slot = dv[static_cast<std::size_t>(node)];
    if (slot.size() == 0) {
      slot = g;
    } else {
      slot += g;
    }
  }

  std::vector<Node> nodes_;
  std::vector<ParamSlot> slots_;
  int output_ = -1;
  LossKind loss_kind_ = LossKind::SoftmaxCrossEntropy;

  std::vector<Matrix<Scalar>> values_;
  std::span<const Tensor<Scalar>> params_;
  std::optional<Matrix<Scalar>> loss_grad_;
  bool has_forward_ = false;
};

/// ReLU MLP: fc0..fc{L-1} with `sizes` = {input, hidden..., output}.
/// Slots are laid out as [fc0.weight, fc0.bias, fc1.weight, ...].
template <typename Scalar>
ComputeGraph<Scalar> make_mlp(std::span<const Index> sizes, LossKind loss) {
  if (sizes.size() < 2) throw ArgumentError("an MLP needs at least input and output sizes");
  ComputeGraph<Scalar> g;
  int x = g.input(sizes[0]);
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    const std::string name = "fc" + std::to_string(l);
    const int w = g.add_param_slot(name + ".weight", {sizes[l + 1], sizes[l]}, true);
    const int b = g.add_param_slot(name + ".bias", {sizes[l + 1]}, false);
    x = g.matmul(x, w, name + ".matmul");
    x = g.bias_add(x, b, name + ".bias_add");
    if (l + 2 < sizes.size()) x = g.relu(x, name + ".relu");
  }
  g.set_output(x, loss);
  return g;
}

template <typename Scalar>
ComputeGraph<Scalar> make_mlp(std::initializer_list<Index> sizes, LossKind loss) {
  return make_mlp<Scalar>(std::span<const Index>(sizes.begin(), sizes.size()), loss);
}

/// Location of one scalar parameter.
struct ParamIndex {
  std::size_t slot = 0;
  Index offset = 0;
};

/// (f(x + h) - f(x - h)) / 2h.
template <typename F>
double central_difference(F&& f, double x, double h) {
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

/// Central-difference derivative of the graph loss with respect to one
/// parameter. Targets are either class labels or a regression tensor.
template <typename Scalar, typename Targets>
Scalar finite_diff_grad(ComputeGraph<Scalar>& graph, std::vector<Tensor<Scalar>> params, const Tensor<Scalar>& input,
                        const Targets& targets, ParamIndex index, Scalar h) {
  if (index.slot >= params.size() || index.offset < 0 || index.offset >= params[index.slot].size()) {
    throw ArgumentError("finite-difference index out of range");
  }
  Scalar& w = params[index.slot][index.offset];
  const Scalar centre = w;
  auto eval = [&](Scalar v) {
    w = v;
    graph.forward(params, input);
    return graph.loss(targets);
  };
  const Scalar plus = eval(centre + h);
  const Scalar minus = eval(centre - h);
  w = centre;
  return (plus - minus) / (Scalar(2) * h);
}

}  // namespace topkast
