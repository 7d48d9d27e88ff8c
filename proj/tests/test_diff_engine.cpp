#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <array>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "rec/adam.hpp"
#include "rec/graph.hpp"
#include "rec/nets.hpp"

using namespace rec;

namespace {

Tensor rand_tensor(std::vector<std::size_t> shape, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> d(0.0, 1.0);
  for (auto& v : t.data) v = d(rng);
  return t;
}

// Central finite difference of a scalar-valued rebuildable expression.
double central_diff(const std::function<double()>& eval, double* x,
                    double eps = 1e-6) {
  double save = *x;
  *x = save + eps;
  double up = eval();
  *x = save - eps;
  double down = eval();
  *x = save;
  return (up - down) / (2.0 * eps);
}

}  // namespace

TEST_CASE("forward values of the primitive ops") {
  DiffGraph g;
  Tensor a = Tensor::vec({1.0, -2.0, 3.0});
  Tensor b = Tensor::vec({0.5, 4.0, -1.0});
  NodeId na = g.leaf(&a), nb = g.leaf(&b);

  CHECK(g.value(g.add(na, nb))(1) == 2.0);
  CHECK(g.value(g.relu(na)).data == std::vector<double>{1.0, 0.0, 3.0});
  CHECK(g.value(g.square(na))(2) == 9.0);
  CHECK(g.value(g.sum(na))(0) == 2.0);
  CHECK(g.value(g.scale(na, -2.0))(0) == -2.0);
  CHECK(g.value(g.dot(na, nb))(0) == doctest::Approx(0.5 - 8.0 - 3.0));
  CHECK(g.value(g.add_const(na, 10.0))(0) == 11.0);
  CHECK(g.value(g.sum_squares(na))(0) == doctest::Approx(1 + 4 + 9));

  NodeId cat = g.concat(na, nb);
  CHECK(g.value(cat).size() == 6);
  CHECK(g.value(cat)(4) == 4.0);

  std::array<NodeId, 2> set{na, nb};
  NodeId mean = g.mean_over_set(set);
  CHECK(g.value(mean)(0) == doctest::Approx(0.75));

  NodeId stacked = g.stack_rows(set);
  CHECK(g.value(stacked).rows() == 2);
  CHECK(g.value(stacked)(1, 2) == -1.0);

  NodeId with_col = g.append_const_col(stacked, {7.0, 8.0});
  CHECK(g.value(with_col).cols() == 4);
  CHECK(g.value(with_col)(1, 3) == 8.0);

  NodeId rows_mean = g.mean_rows(stacked);
  CHECK(g.value(rows_mean).size() == 3);
  CHECK(g.value(rows_mean)(1) == doctest::Approx(1.0));
}

TEST_CASE("matmul and linear match a hand computation") {
  DiffGraph g;
  Tensor a(std::vector<std::size_t>{2, 3});
  Tensor b(std::vector<std::size_t>{3, 2});
  for (std::size_t i = 0; i < 6; ++i) {
    a.data[i] = static_cast<double>(i + 1);       // [[1 2 3][4 5 6]]
    b.data[i] = static_cast<double>(6 - i) / 2.0; // [[3 2.5][2 1.5][1 0.5]]
  }
  NodeId prod = g.matmul(g.leaf(&a), g.leaf(&b));
  CHECK(g.value(prod)(0, 0) == doctest::Approx(1 * 3 + 2 * 2 + 3 * 1));
  CHECK(g.value(prod)(1, 1) == doctest::Approx(4 * 2.5 + 5 * 1.5 + 6 * 0.5));

  // linear: x W^T + bias broadcast over rows
  Tensor w(std::vector<std::size_t>{2, 3});
  for (std::size_t i = 0; i < 6; ++i) w.data[i] = 0.1 * (i + 1);
  Tensor bias = Tensor::vec({10.0, 20.0});
  NodeId lin = g.linear(g.leaf(&a), g.leaf(&w), g.leaf(&bias));
  CHECK(g.value(lin)(0, 0) ==
        doctest::Approx(1 * 0.1 + 2 * 0.2 + 3 * 0.3 + 10.0));
  CHECK(g.value(lin)(1, 1) ==
        doctest::Approx(4 * 0.4 + 5 * 0.5 + 6 * 0.6 + 20.0));
}

TEST_CASE("non-finite results are rejected at the offending op") {
  DiffGraph g;
  Tensor big = Tensor::vec({1e308, 1e308});
  NodeId n = g.leaf(&big);
  CHECK_THROWS_AS(g.add(n, n), std::runtime_error);
}

TEST_CASE("backward on simple closed forms") {
  Tensor x = Tensor::vec({2.0, -3.0});
  DiffGraph g;
  NodeId n = g.leaf(&x);
  // f = sum((2x)^2) = 4 sum(x^2), df/dx = 8x
  NodeId loss = g.sum(g.square(g.scale(n, 2.0)));
  g.backward(loss);
  const Tensor& grad = g.grads().at(&x);
  CHECK(grad(0) == doctest::Approx(16.0));
  CHECK(grad(1) == doctest::Approx(-24.0));
}

TEST_CASE("relu gradient is zero at zero") {
  Tensor x = Tensor::vec({0.0, -1.0, 2.0});
  DiffGraph g;
  NodeId loss = g.sum(g.relu(g.leaf(&x)));
  g.backward(loss);
  const Tensor& grad = g.grads().at(&x);
  CHECK(grad(0) == 0.0);
  CHECK(grad(1) == 0.0);
  CHECK(grad(2) == 1.0);
}

TEST_CASE("unreached leaves get zero gradients") {
  Tensor x = Tensor::vec({1.0});
  Tensor y = Tensor::vec({2.0});
  DiffGraph g;
  NodeId nx = g.leaf(&x);
  g.leaf(&y);  // never used downstream
  g.backward(g.sum(nx));
  CHECK(g.grads().at(&y)(0) == 0.0);
}

TEST_CASE("a consumed or released tape refuses backward") {
  Tensor x = Tensor::vec({1.0, 2.0});
  SUBCASE("backward twice") {
    DiffGraph g;
    NodeId loss = g.sum_squares(g.leaf(&x));
    g.backward(loss);
    CHECK_THROWS_WITH_AS(g.backward(loss), doctest::Contains("consumed"), std::runtime_error);
  }
  SUBCASE("release then backward") {
    DiffGraph g;
    NodeId mid = g.square(g.leaf(&x));
    NodeId loss = g.sum(mid);
    g.release_value(mid);
    CHECK_THROWS_WITH_AS(g.backward(loss), doctest::Contains("released"), std::runtime_error);
  }
  SUBCASE("backward needs a scalar") {
    DiffGraph g;
    NodeId n = g.leaf(&x);
    CHECK_THROWS_WITH_AS(g.backward(n), doctest::Contains("scalar"), std::runtime_error);
  }
}

TEST_CASE("gradients of random composite expressions match finite differences") {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> dim(1, 4);
  std::uniform_int_distribution<int> pick_op(0, 7);

  for (int instance = 0; instance < 100; ++instance) {
    std::size_t k = static_cast<std::size_t>(dim(rng));
    std::size_t e = static_cast<std::size_t>(dim(rng));
    Tensor v1 = rand_tensor({k}, rng);
    Tensor v2 = rand_tensor({k}, rng);
    Tensor w = rand_tensor({e, k}, rng);
    Tensor wt = rand_tensor({k, e}, rng);
    Tensor bias = rand_tensor({e}, rng);
    std::vector<double> col(2);
    for (auto& c : col) c = rand_tensor({1}, rng)(0);

    int op = pick_op(rng);
    auto build = [&](DiffGraph& g) -> NodeId {
      NodeId a = g.leaf(&v1), b = g.leaf(&v2);
      NodeId ww = g.leaf(&w), bb = g.leaf(&bias);
      switch (op) {
        case 0: return g.sum_squares(g.add(g.relu(a), b));
        case 1: return g.sum(g.square(g.concat(a, b)));
        case 2: {
          std::array<NodeId, 3> xs{a, b, g.scale(a, -1.5)};
          return g.sum_squares(g.mean_over_set(xs));
        }
        case 3: return g.square(g.dot(g.relu(a), b));
        case 4: return g.sum_squares(g.linear(g.stack_rows(std::array{a, b}),
                                              ww, bb));
        case 5: {
          NodeId x = g.append_const_col(g.stack_rows(std::array{a, b}), col);
          return g.sum(g.square(g.mean_rows(x)));
        }
        case 6: return g.sum_squares(
                    g.relu(g.matmul(g.stack_rows(std::array{a, b}),
                                    g.leaf(&wt))));
        default:
          return g.add(g.add_const(g.scale(g.sum_squares(b), 0.3), 1.0),
                       g.scale(g.sum(a), 0.25));
      }
    };
    auto eval = [&]() {
      DiffGraph g;
      return g.value(build(g))(0);
    };

    DiffGraph g;
    NodeId loss = build(g);
    g.backward(loss);

    for (Tensor* t : {&v1, &v2, &w, &wt, &bias}) {
      auto it = g.grads().find(t);
      if (it == g.grads().end()) continue;
      std::uniform_int_distribution<std::size_t> pe(0, t->size() - 1);
      std::size_t idx = pe(rng);
      double fd = central_diff(eval, &t->data[idx]);
      double an = it->second.data[idx];
      double denom = std::max({std::abs(fd), std::abs(an), 1e-6});
      CHECK(std::abs(fd - an) / denom < 1e-4);
    }
  }
}

TEST_CASE("mlp init is deterministic with glorot bounds and zero biases") {
  std::mt19937_64 rng(5);
  MLPParams p;
  p.init(16, rng);
  CHECK(p.w1.shape == std::vector<std::size_t>{200, 17});
  CHECK(p.w2.shape == std::vector<std::size_t>{200, 200});
  CHECK(p.w3.shape == std::vector<std::size_t>{16, 200});
  for (double v : p.b1.data) CHECK(v == 0.0);
  for (double v : p.b3.data) CHECK(v == 0.0);

  double bound1 = std::sqrt(6.0 / (17 + 200));
  for (double v : p.w1.data) {
    CHECK(v <= bound1);
    CHECK(v >= -bound1);
  }

  std::mt19937_64 rng2(5);
  MLPParams q;
  q.init(16, rng2);
  CHECK(q.w1.data == p.w1.data);
  CHECK(q.w3.data == p.w3.data);
}

TEST_CASE("mlp parameter count matches the allocation") {
  std::mt19937_64 rng(6);
  MLPParams p;
  p.init(100, rng);
  std::size_t expect = 0;
  for (Tensor* t : p.tensors()) expect += t->size();
  CHECK(p.param_count() == expect);
  CHECK(p.param_count() == 200 * 101 + 200 + 200 * 200 + 200 + 100 * 200 + 100);
}

TEST_CASE("mlp gradients match finite differences") {
  std::mt19937_64 rng(7);
  MLPParams p;
  p.init(5, rng);
  Tensor in1 = rand_tensor({5}, rng), in2 = rand_tensor({5}, rng);
  std::vector<double> ratings{0.3, -0.2};

  auto eval = [&]() {
    DiffGraph g;
    MLPLeaves net = bind_mlp(g, p);
    NodeId x = g.append_const_col(
        g.stack_rows(std::array{g.leaf(&in1), g.leaf(&in2)}), ratings);
    return g.value(g.sum_squares(mlp_apply_batch(g, net, x)))(0);
  };

  DiffGraph g;
  MLPLeaves net = bind_mlp(g, p);
  NodeId x = g.append_const_col(
      g.stack_rows(std::array{g.leaf(&in1), g.leaf(&in2)}), ratings);
  g.backward(g.sum_squares(mlp_apply_batch(g, net, x)));

  std::vector<Tensor*> all = p.tensors();
  all.push_back(&in1);
  all.push_back(&in2);
  for (Tensor* t : all) {
    std::uniform_int_distribution<std::size_t> pe(0, t->size() - 1);
    for (int reps = 0; reps < 3; ++reps) {
      std::size_t idx = pe(rng);
      double fd = central_diff(eval, &t->data[idx]);
      double an = g.grads().at(t).data[idx];
      double denom = std::max({std::abs(fd), std::abs(an), 1e-6});
      CHECK(std::abs(fd - an) / denom < 1e-4);
    }
  }
}

TEST_CASE("single-pair generator application equals the batched path") {
  std::mt19937_64 rng(9);
  MLPParams p;
  p.init(4, rng);
  Tensor emb = rand_tensor({4}, rng);

  DiffGraph g;
  MLPLeaves net = bind_mlp(g, p);
  NodeId single = mlp_apply(g, net, 0.7, g.leaf(&emb));

  NodeId batched = g.mean_rows(mlp_apply_batch(
      g, net,
      g.append_const_col(g.stack_rows(std::array{g.leaf(&emb)}), {0.7})));
  for (std::size_t i = 0; i < 4; ++i)
    CHECK(g.value(single)(i) == doctest::Approx(g.value(batched)(i)));
}

TEST_CASE("adam takes a lr-sized first step and descends a parabola") {
  Tensor x = Tensor::vec({3.0});
  std::vector<Tensor*> params{&x};
  Adam opt(params, 0.1);

  // f = x^2, grad = 2x
  auto grad_step = [&]() {
    DiffGraph g;
    g.backward(g.sum_squares(g.leaf(&x)));
    opt.step(params, g.grads());
  };

  grad_step();
  // bias-corrected first update is exactly lr * sign(grad)
  CHECK(x(0) == doctest::Approx(3.0 - 0.1).epsilon(1e-6));

  for (int i = 0; i < 400; ++i) grad_step();
  CHECK(std::abs(x(0)) < 0.05);
  CHECK(opt.step_count() == 401);
}

TEST_CASE("adam treats missing gradients as zero") {
  Tensor x = Tensor::vec({1.0});
  Tensor y = Tensor::vec({2.0});
  std::vector<Tensor*> params{&x, &y};
  Adam opt(params, 0.5);
  std::unordered_map<Tensor*, Tensor> grads;
  grads.emplace(&x, Tensor::vec({1.0}));
  opt.step(params, grads);
  CHECK(x(0) < 1.0);
  CHECK(y(0) == 2.0);
}
