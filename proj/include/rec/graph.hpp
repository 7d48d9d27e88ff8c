#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "rec/tensor.hpp"

namespace rec {

using NodeId = std::uint32_t;

// Append-only tape of tensor operations. Nodes are topologically ordered by
// construction; backward() walks the tape once in reverse and frees
// intermediate values as it goes. Every op checks its output for NaN/Inf.
class DiffGraph {
 public:
  NodeId leaf(Tensor* param);
  NodeId constant(Tensor value);

  NodeId add(NodeId a, NodeId b);                 // elementwise, same shape
  NodeId concat(NodeId a, NodeId b);              // 1-D concatenation
  NodeId mean_over_set(std::span<const NodeId> xs);
  NodeId relu(NodeId a);
  NodeId square(NodeId a);                        // elementwise
  NodeId sum(NodeId a);                           // all elements -> scalar
  NodeId scale(NodeId a, double c);
  NodeId matmul(NodeId a, NodeId b);              // (m x k) * (k x n)
  NodeId dot(NodeId a, NodeId b);                 // 1-D inner product
  NodeId add_const(NodeId a, double c);
  NodeId sum_squares(NodeId a);                   // -> scalar

  // Batched building blocks for the generator nets.
  NodeId stack_rows(std::span<const NodeId> rows);            // n x K
  NodeId append_const_col(NodeId x, std::vector<double> col); // E x (K+1)
  NodeId linear(NodeId x, NodeId w, NodeId b);  // x W^T + 1 b^T
  NodeId mean_rows(NodeId x);                   // E x K -> K

  const Tensor& value(NodeId id) const { return nodes_[id].value; }
  std::size_t num_nodes() const { return nodes_.size(); }

  // Frees a node's value early. Inference-only: once any value has been
  // released the tape can no longer run backward.
  void release_value(NodeId id);

  // Gradients of the scalar at `loss` w.r.t. every leaf parameter. Leaves the
  // tape consumed: intermediate values are released during the sweep.
  void backward(NodeId loss);

  // Populated by backward(); leaves never reached get a zero tensor.
  const std::unordered_map<Tensor*, Tensor>& grads() const { return grads_; }

 private:
  enum class Op {
    kLeaf, kConst, kAdd, kConcat, kMeanOverSet, kRelu, kSquare, kSum, kScale,
    kMatmul, kDot, kAddConst, kSumSquares, kStackRows, kAppendConstCol,
    kLinear, kMeanRows,
  };

  struct Node {
    Op op;
    std::vector<NodeId> inputs;
    Tensor value;
    Tensor grad;  // allocated lazily during backward
    bool requires_grad = false;
    double scalar_arg = 0.0;
    std::vector<double> col;
    Tensor* param = nullptr;
  };

  NodeId push(Node n, const char* name);
  void accumulate(NodeId target, const double* g, std::size_t n,
                  double factor = 1.0);
  Tensor& ensure_grad(NodeId id);

  std::vector<Node> nodes_;
  std::unordered_map<Tensor*, Tensor> grads_;
  bool consumed_ = false;
  bool released_ = false;
};

}  // namespace rec
