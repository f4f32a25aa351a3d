#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "sidecar/hippo.hpp"
#include "sidecar/linalg.hpp"

namespace sidecar {

using NodeId = std::size_t;

/// Eager reverse-mode recorder over matrices.
///
/// Every op computes its value immediately. A backward closure is recorded
/// only when at least one input requires a gradient, so a tape built from
/// constants alone is a plain forward evaluator.
class Tape {
 public:
  NodeId constant(Matrix value);
  NodeId parameter(Matrix value);

  const Matrix& value(NodeId id) const { return nodes_[id].value; }
  /// Empty matrix when nothing flowed into the node.
  const Matrix& grad(NodeId id) const { return nodes_[id].grad; }
  bool requires_grad(NodeId id) const { return nodes_[id].requires_grad; }

  NodeId matmul(NodeId a, NodeId b);
  /// a * b^T, the row-vector convention of a linear layer with weight b.
  NodeId matmul_bt(NodeId a, NodeId b);
  NodeId add(NodeId a, NodeId b);
  NodeId scale(NodeId a, double factor);
  /// s * a with s a 1x1 node.
  NodeId scalar_mul(NodeId s, NodeId a);
  /// Row-wise x / rms(x) * weight, weight is 1 x cols.
  NodeId rms_norm(NodeId x, NodeId weight, double eps = 1e-6);
  NodeId silu(NodeId x);
  /// Row-wise softmax over columns j <= i; masked entries are exactly 0.
  NodeId causal_softmax(NodeId scores);
  NodeId slice_cols(NodeId x, std::size_t begin, std::size_t count);
  NodeId concat_cols(std::span<const NodeId> parts);
  /// Column c of u drives an independent copy of the SSM from a zero state;
  /// output (t, c) = c_out.row(c) . x_c(t).
  NodeId ssm_readout(NodeId u, const SsmCore& core, NodeId c_out);
  /// 1x1 mean over rows of -log softmax(logits)[target].
  NodeId lm_loss(NodeId logits, std::span<const std::uint32_t> targets);

  /// Seeds d(root)/d(root) = 1 for a 1x1 root and propagates.
  void backward(NodeId root);

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    std::function<void()> backward;
  };

  NodeId push(Matrix value, bool requires_grad);
  void accumulate(NodeId id, const Matrix& g);
  bool any_requires(std::initializer_list<NodeId> ids) const;

  std::vector<Node> nodes_;
};

}  // namespace sidecar
