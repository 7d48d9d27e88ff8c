#include "rec/graph.hpp"

#include <cmath>
#include <stdexcept>

namespace rec {

namespace {

std::string shape_str(const Tensor& t) {
  std::string s = "(";
  for (std::size_t i = 0; i < t.shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(t.shape[i]);
  }
  return s + ")";
}

[[noreturn]] void shape_error(const char* op, const Tensor& a,
                              const Tensor& b) {
  throw std::runtime_error(std::string("shape mismatch in ") + op + ": " +
                           shape_str(a) + " vs " + shape_str(b));
}

}  // namespace

NodeId DiffGraph::push(Node n, const char* name) {
  if (!n.value.all_finite()) {
    throw std::runtime_error(std::string("non-finite value produced by ") +
                             name);
  }
  nodes_.push_back(std::move(n));
  return static_cast<NodeId>(nodes_.size() - 1);
}

NodeId DiffGraph::leaf(Tensor* param) {
  Node n;
  n.op = Op::kLeaf;
  n.value = *param;
  n.param = param;
  n.requires_grad = true;
  grads_.try_emplace(param, Tensor::zeros(param->shape));
  return push(std::move(n), "leaf");
}

NodeId DiffGraph::constant(Tensor value) {
  Node n;
  n.op = Op::kConst;
  n.value = std::move(value);
  return push(std::move(n), "constant");
}

NodeId DiffGraph::add(NodeId a, NodeId b) {
  const Tensor& ta = nodes_[a].value;
  const Tensor& tb = nodes_[b].value;
  if (!ta.same_shape(tb)) shape_error("add", ta, tb);
  Node n;
  n.op = Op::kAdd;
  n.inputs = {a, b};
  n.requires_grad = nodes_[a].requires_grad || nodes_[b].requires_grad;
  n.value = ta;
  for (std::size_t i = 0; i < tb.size(); ++i) n.value.data[i] += tb.data[i];
  return push(std::move(n), "add");
}

NodeId DiffGraph::concat(NodeId a, NodeId b) {
  const Tensor& ta = nodes_[a].value;
  const Tensor& tb = nodes_[b].value;
  if (ta.shape.size() != 1 || tb.shape.size() != 1)
    shape_error("concat", ta, tb);
  Node n;
  n.op = Op::kConcat;
  n.inputs = {a, b};
  n.requires_grad = nodes_[a].requires_grad || nodes_[b].requires_grad;
  n.value.shape = {ta.size() + tb.size()};
  n.value.data = ta.data;
  n.value.data.insert(n.value.data.end(), tb.data.begin(), tb.data.end());
  return push(std::move(n), "concat");
}

NodeId DiffGraph::mean_over_set(std::span<const NodeId> xs) {
  if (xs.empty()) throw std::runtime_error("mean_over_set: empty set");
  Node n;
  n.op = Op::kMeanOverSet;
  n.value = nodes_[xs[0]].value;
  for (std::size_t i = 1; i < xs.size(); ++i) {
    const Tensor& t = nodes_[xs[i]].value;
    if (!t.same_shape(n.value)) shape_error("mean_over_set", n.value, t);
    for (std::size_t k = 0; k < t.size(); ++k) n.value.data[k] += t.data[k];
  }
  for (auto& v : n.value.data) v /= static_cast<double>(xs.size());
  for (NodeId id : xs) {
    n.inputs.push_back(id);
    n.requires_grad = n.requires_grad || nodes_[id].requires_grad;
  }
  return push(std::move(n), "mean_over_set");
}

NodeId DiffGraph::relu(NodeId a) {
  Node n;
  n.op = Op::kRelu;
  n.inputs = {a};
  n.requires_grad = nodes_[a].requires_grad;
  n.value = nodes_[a].value;
  for (auto& v : n.value.data) v = v > 0.0 ? v : 0.0;
  return push(std::move(n), "relu");
}

NodeId DiffGraph::square(NodeId a) {
  Node n;
  n.op = Op::kSquare;
  n.inputs = {a};
  n.requires_grad = nodes_[a].requires_grad;
  n.value = nodes_[a].value;
  for (auto& v : n.value.data) v *= v;
  return push(std::move(n), "square");
}

NodeId DiffGraph::sum(NodeId a) {
  Node n;
  n.op = Op::kSum;
  n.inputs = {a};
  n.requires_grad = nodes_[a].requires_grad;
  double s = 0.0;
  for (double v : nodes_[a].value.data) s += v;
  n.value = Tensor::scalar(s);
  return push(std::move(n), "sum");
}

NodeId DiffGraph::scale(NodeId a, double c) {
  Node n;
  n.op = Op::kScale;
  n.inputs = {a};
  n.scalar_arg = c;
  n.requires_grad = nodes_[a].requires_grad;
  n.value = nodes_[a].value;
  for (auto& v : n.value.data) v *= c;
  return push(std::move(n), "scale");
}

NodeId DiffGraph::matmul(NodeId a, NodeId b) {
  const Tensor& ta = nodes_[a].value;
  const Tensor& tb = nodes_[b].value;
  if (ta.shape.size() != 2 || tb.shape.size() != 2 || ta.shape[1] != tb.shape[0])
    shape_error("matmul", ta, tb);
  Node n;
  n.op = Op::kMatmul;
  n.inputs = {a, b};
  n.requires_grad = nodes_[a].requires_grad || nodes_[b].requires_grad;
  n.value = Tensor::zeros({ta.shape[0], tb.shape[1]});
  gemm(false, false, ta.shape[0], tb.shape[1], ta.shape[1], ta.data.data(),
       tb.data.data(), n.value.data.data(), false);
  return push(std::move(n), "matmul");
}

NodeId DiffGraph::dot(NodeId a, NodeId b) {
  const Tensor& ta = nodes_[a].value;
  const Tensor& tb = nodes_[b].value;
  if (ta.shape.size() != 1 || !ta.same_shape(tb)) shape_error("dot", ta, tb);
  Node n;
  n.op = Op::kDot;
  n.inputs = {a, b};
  n.requires_grad = nodes_[a].requires_grad || nodes_[b].requires_grad;
  double s = 0.0;
  for (std::size_t i = 0; i < ta.size(); ++i) s += ta.data[i] * tb.data[i];
  n.value = Tensor::scalar(s);
  return push(std::move(n), "dot");
}

NodeId DiffGraph::add_const(NodeId a, double c) {
  Node n;
  n.op = Op::kAddConst;
  n.inputs = {a};
  n.scalar_arg = c;
  n.requires_grad = nodes_[a].requires_grad;
  n.value = nodes_[a].value;
  for (auto& v : n.value.data) v += c;
  return push(std::move(n), "add_const");
}

NodeId DiffGraph::sum_squares(NodeId a) {
  Node n;
  n.op = Op::kSumSquares;
  n.inputs = {a};
  n.requires_grad = nodes_[a].requires_grad;
  double s = 0.0;
  for (double v : nodes_[a].value.data) s += v * v;
  n.value = Tensor::scalar(s);
  return push(std::move(n), "sum_squares");
}

NodeId DiffGraph::stack_rows(std::span<const NodeId> rows) {
  if (rows.empty()) throw std::runtime_error("stack_rows: empty set");
  std::size_t k = nodes_[rows[0]].value.size();
  Node n;
  n.op = Op::kStackRows;
  n.value = Tensor::zeros({rows.size(), k});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const Tensor& t = nodes_[rows[r]].value;
    if (t.shape.size() != 1 || t.size() != k)
      shape_error("stack_rows", nodes_[rows[0]].value, t);
    std::copy(t.data.begin(), t.data.end(), n.value.data.begin() + r * k);
    n.inputs.push_back(rows[r]);
    n.requires_grad = n.requires_grad || nodes_[rows[r]].requires_grad;
  }
  return push(std::move(n), "stack_rows");
}

NodeId DiffGraph::append_const_col(NodeId x, std::vector<double> col) {
  const Tensor& tx = nodes_[x].value;
  if (tx.shape.size() != 2 || tx.shape[0] != col.size())
    throw std::runtime_error("append_const_col: row count mismatch");
  Node n;
  n.op = Op::kAppendConstCol;
  n.inputs = {x};
  n.requires_grad = nodes_[x].requires_grad;
  std::size_t e = tx.shape[0], k = tx.shape[1];
  n.value = Tensor::zeros({e, k + 1});
  for (std::size_t r = 0; r < e; ++r) {
    std::copy(tx.data.begin() + r * k, tx.data.begin() + (r + 1) * k,
              n.value.data.begin() + r * (k + 1));
    n.value.data[r * (k + 1) + k] = col[r];
  }
  n.col = std::move(col);
  return push(std::move(n), "append_const_col");
}

NodeId DiffGraph::linear(NodeId x, NodeId w, NodeId b) {
  const Tensor& tx = nodes_[x].value;
  const Tensor& tw = nodes_[w].value;
  const Tensor& tb = nodes_[b].value;
  if (tx.shape.size() != 2 || tw.shape.size() != 2 ||
      tx.shape[1] != tw.shape[1])
    shape_error("linear", tx, tw);
  if (tb.shape.size() != 1 || tb.size() != tw.shape[0])
    shape_error("linear", tw, tb);
  std::size_t e = tx.shape[0], dout = tw.shape[0];
  Node n;
  n.op = Op::kLinear;
  n.inputs = {x, w, b};
  n.requires_grad = nodes_[x].requires_grad || nodes_[w].requires_grad ||
                    nodes_[b].requires_grad;
  n.value = Tensor::zeros({e, dout});
  for (std::size_t r = 0; r < e; ++r)
    std::copy(tb.data.begin(), tb.data.end(), n.value.data.begin() + r * dout);
  gemm(false, true, e, dout, tx.shape[1], tx.data.data(), tw.data.data(),
       n.value.data.data(), true);
  return push(std::move(n), "linear");
}

NodeId DiffGraph::mean_rows(NodeId x) {
  const Tensor& tx = nodes_[x].value;
  if (tx.shape.size() != 2) throw std::runtime_error("mean_rows: rank-2 input required");
  std::size_t e = tx.shape[0], k = tx.shape[1];
  Node n;
  n.op = Op::kMeanRows;
  n.inputs = {x};
  n.requires_grad = nodes_[x].requires_grad;
  n.value = Tensor::zeros({k});
  for (std::size_t r = 0; r < e; ++r)
    for (std::size_t c = 0; c < k; ++c) n.value.data[c] += tx(r, c);
  for (auto& v : n.value.data) v /= static_cast<double>(e);
  return push(std::move(n), "mean_rows");
}

Tensor& DiffGraph::ensure_grad(NodeId id) {
  Node& n = nodes_[id];
  if (n.grad.data.empty()) n.grad = Tensor::zeros(n.value.shape);
  return n.grad;
}

void DiffGraph::accumulate(NodeId target, const double* g, std::size_t count,
                           double factor) {
  if (!nodes_[target].requires_grad) return;
  Tensor& t = ensure_grad(target);
  for (std::size_t i = 0; i < count; ++i) t.data[i] += factor * g[i];
}

void DiffGraph::release_value(NodeId id) {
  released_ = true;
  nodes_[id].value = Tensor();
}

void DiffGraph::backward(NodeId loss) {
  if (consumed_) throw std::runtime_error("backward: tape already consumed");
  if (released_)
    throw std::runtime_error("backward: values were released (inference tape)");
  consumed_ = true;
  if (nodes_[loss].value.size() != 1)
    throw std::runtime_error("backward: loss must be scalar");
  ensure_grad(loss).data[0] = 1.0;

  for (NodeId id = loss + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (n.grad.data.empty() || !n.requires_grad) {
      n.value = Tensor();
      n.grad = Tensor();
      continue;
    }
    const Tensor& g = n.grad;
    switch (n.op) {
      case Op::kLeaf: {
        Tensor& acc = grads_[n.param];
        for (std::size_t i = 0; i < g.size(); ++i) acc.data[i] += g.data[i];
        break;
      }
      case Op::kConst:
        break;
      case Op::kAdd:
        accumulate(n.inputs[0], g.data.data(), g.size());
        accumulate(n.inputs[1], g.data.data(), g.size());
        break;
      case Op::kConcat: {
        std::size_t la = nodes_[n.inputs[0]].value.size();
        accumulate(n.inputs[0], g.data.data(), la);
        accumulate(n.inputs[1], g.data.data() + la, g.size() - la);
        break;
      }
      case Op::kMeanOverSet: {
        double f = 1.0 / static_cast<double>(n.inputs.size());
        for (NodeId in : n.inputs)
          accumulate(in, g.data.data(), g.size(), f);
        break;
      }
      case Op::kRelu: {
        const Tensor& x = nodes_[n.inputs[0]].value;
        if (nodes_[n.inputs[0]].requires_grad) {
          Tensor& t = ensure_grad(n.inputs[0]);
          for (std::size_t i = 0; i < g.size(); ++i)
            if (x.data[i] > 0.0) t.data[i] += g.data[i];
        }
        break;
      }
      case Op::kSquare: {
        const Tensor& x = nodes_[n.inputs[0]].value;
        if (nodes_[n.inputs[0]].requires_grad) {
          Tensor& t = ensure_grad(n.inputs[0]);
          for (std::size_t i = 0; i < g.size(); ++i)
            t.data[i] += 2.0 * x.data[i] * g.data[i];
        }
        break;
      }
      case Op::kSum: {
        Node& in = nodes_[n.inputs[0]];
        if (in.requires_grad) {
          Tensor& t = ensure_grad(n.inputs[0]);
          for (auto& v : t.data) v += g.data[0];
        }
        break;
      }
      case Op::kScale:
        accumulate(n.inputs[0], g.data.data(), g.size(), n.scalar_arg);
        break;
      case Op::kMatmul: {
        const Tensor& a = nodes_[n.inputs[0]].value;
        const Tensor& b = nodes_[n.inputs[1]].value;
        if (nodes_[n.inputs[0]].requires_grad) {
          Tensor& da = ensure_grad(n.inputs[0]);
          gemm(false, true, a.shape[0], a.shape[1], b.shape[1], g.data.data(),
               b.data.data(), da.data.data(), true);
        }
        if (nodes_[n.inputs[1]].requires_grad) {
          Tensor& db = ensure_grad(n.inputs[1]);
          gemm(true, false, b.shape[0], b.shape[1], a.shape[0], a.data.data(),
               g.data.data(), db.data.data(), true);
        }
        break;
      }
      case Op::kDot: {
        const Tensor& a = nodes_[n.inputs[0]].value;
        const Tensor& b = nodes_[n.inputs[1]].value;
        accumulate(n.inputs[0], b.data.data(), b.size(), g.data[0]);
        accumulate(n.inputs[1], a.data.data(), a.size(), g.data[0]);
        break;
      }
      case Op::kAddConst:
        accumulate(n.inputs[0], g.data.data(), g.size());
        break;
      case Op::kSumSquares: {
        const Tensor& x = nodes_[n.inputs[0]].value;
        accumulate(n.inputs[0], x.data.data(), x.size(), 2.0 * g.data[0]);
        break;
      }
      case Op::kStackRows: {
        std::size_t k = n.value.shape[1];
        for (std::size_t r = 0; r < n.inputs.size(); ++r)
          accumulate(n.inputs[r], g.data.data() + r * k, k);
        break;
      }
      case Op::kAppendConstCol: {
        std::size_t e = n.value.shape[0], kp1 = n.value.shape[1];
        if (nodes_[n.inputs[0]].requires_grad) {
          Tensor& t = ensure_grad(n.inputs[0]);
          for (std::size_t r = 0; r < e; ++r)
            for (std::size_t c = 0; c + 1 < kp1; ++c)
              t(r, c) += g.data[r * kp1 + c];
        }
        break;
      }
      case Op::kLinear: {
        const Tensor& x = nodes_[n.inputs[0]].value;
        const Tensor& w = nodes_[n.inputs[1]].value;
        std::size_t e = x.shape[0];
        if (nodes_[n.inputs[0]].requires_grad) {
          Tensor& dx = ensure_grad(n.inputs[0]);
          gemm(false, false, e, w.shape[1], w.shape[0], g.data.data(),
               w.data.data(), dx.data.data(), true);
        }
        if (nodes_[n.inputs[1]].requires_grad) {
          Tensor& dw = ensure_grad(n.inputs[1]);
          gemm(true, false, w.shape[0], w.shape[1], e, g.data.data(),
               x.data.data(), dw.data.data(), true);
        }
        if (nodes_[n.inputs[2]].requires_grad) {
          Tensor& db = ensure_grad(n.inputs[2]);
          for (std::size_t r = 0; r < e; ++r)
            for (std::size_t c = 0; c < w.shape[0]; ++c)
              db.data[c] += g.data[r * w.shape[0] + c];
        }
        break;
      }
      case Op::kMeanRows: {
        const Tensor& x = nodes_[n.inputs[0]].value;
        std::size_t e = x.shape[0], k = x.shape[1];
        if (nodes_[n.inputs[0]].requires_grad) {
          Tensor& t = ensure_grad(n.inputs[0]);
          double f = 1.0 / static_cast<double>(e);
          for (std::size_t r = 0; r < e; ++r)
            for (std::size_t c = 0; c < k; ++c) t(r, c) += f * g.data[c];
        }
        break;
      }
    }
    if (n.op != Op::kLeaf) {
      n.value = Tensor();
      n.grad = Tensor();
    }
  }
}

}  // namespace rec
