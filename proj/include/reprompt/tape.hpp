#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "reprompt/tensor.hpp"

namespace reprompt {

/// Reverse-mode gradient tape. Operations execute eagerly and record a node;
/// backward() walks the recording in reverse and accumulates dLoss/dTensor
/// into the grad buffer of every learnable tensor registered via leaf().
/// A tape covers one forward/backward pass and is then cleared or dropped.
class Tape {
 public:
  using NodeId = std::uint32_t;

  NodeId constant(Tensor value);
  /// Constant that borrows its storage; the tensor must outlive the tape.
  /// Used for frozen weights so forwards do not copy them.
  NodeId constant_view(const Tensor& frozen);
  NodeId leaf(Tensor& learnable);  // learnable.requires_grad() must hold

  NodeId add(NodeId a, NodeId b);
  NodeId scale(NodeId a, double s);
  NodeId matmul(NodeId a, NodeId b);
  NodeId transpose(NodeId a);
  NodeId add_col_broadcast(NodeId x, NodeId bias);
  NodeId slice_cols(NodeId x, std::size_t c0, std::size_t c1);
  NodeId concat_cols(std::span<const NodeId> xs);
  NodeId slice_rows(NodeId x, std::size_t r0, std::size_t r1);
  NodeId concat_rows(std::span<const NodeId> xs);
  NodeId gather_rows(NodeId x, std::vector<std::size_t> rows);
  NodeId softmax_rows(NodeId x);
  NodeId layer_norm(NodeId x, NodeId gain, NodeId bias, double eps);
  NodeId gelu(NodeId x);
  NodeId l2_normalize(NodeId x);
  NodeId conv2d(NodeId x, NodeId kernel, std::size_t padding);
  NodeId reshape(NodeId x, std::vector<std::size_t> shape);
  NodeId pick(NodeId v, std::size_t index);
  NodeId neg_log(NodeId x, double floor = 1e-12);

  const Tensor& value(NodeId id) const {
    const Node& n = nodes_[id];
    return n.view ? *n.view : n.value;
  }
  std::size_t node_count() const { return nodes_.size(); }
  void clear();

  /// Populates grads of all leaves reachable from loss. Repeated calls
  /// accumulate. Throws if loss is not a finite scalar.
  void backward(NodeId loss);

  /// Vector-Jacobian form: seeds the walk with an explicit same-shape
  /// cotangent instead of the scalar 1.
  void backward_seeded(NodeId node, const Tensor& seed);

 private:
  enum class Op : std::uint8_t {
    kConstant, kLeaf, kAdd, kScale, kMatmul, kTranspose, kAddColBroadcast,
    kSliceCols, kConcatCols, kSliceRows, kConcatRows, kGatherRows,
    kSoftmaxRows, kLayerNorm, kGelu, kL2Normalize, kConv2d, kReshape,
    kPick, kNegLog,
  };

  struct Node {
    Op op;
    std::uint8_t n_in = 0;
    bool needs_grad = false;         // any leaf reachable below this node
    std::array<NodeId, 3> in{};
    Tensor value;
    const Tensor* view = nullptr;    // borrowed constant storage
    double a = 0.0;                  // scale factor / eps / floor
    std::size_t p0 = 0, p1 = 0;      // slice range / padding / pick index
    Tensor* external = nullptr;      // leaf target
    std::vector<NodeId> many;        // concat inputs
    std::vector<std::size_t> rows;   // gather indices
    Tensor aux, aux2;                // layer_norm: x-hat, per-token inv stddev
  };

  NodeId push(Node n);
  const Tensor& in_value(const Node& n, std::size_t i) const { return value(n.in[i]); }
  bool wants(NodeId id) const { return nodes_[id].needs_grad; }
  Tensor& grad_buffer(std::vector<Tensor>& grads, NodeId id);

  // deque keeps value() references stable while new nodes are recorded
  std::deque<Node> nodes_;
};

/// Max relative error between analytic gradients and central finite
/// differences. fn(true) must compute the scalar loss and accumulate
/// gradients into params; fn(false) must compute the loss only.
double grad_check(const std::function<double(bool)>& fn,
                  std::span<Tensor* const> params, double step = 1e-5);

}  // namespace reprompt
