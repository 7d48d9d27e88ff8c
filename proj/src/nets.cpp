#include "rec/nets.hpp"

#include <array>
#include <cmath>
#include <stdexcept>

namespace rec {

namespace {

Tensor glorot(std::size_t out, std::size_t in, std::mt19937_64& rng) {
  double s = std::sqrt(6.0 / static_cast<double>(in + out));
  std::uniform_real_distribution<double> dist(-s, s);
  Tensor t({out, in});
  for (auto& v : t.data) v = dist(rng);
  return t;
}

}  // namespace

void MLPParams::init(int latent_dim, std::mt19937_64& rng) {
  k = latent_dim;
  std::size_t h = kHidden, in = static_cast<std::size_t>(k) + 1;
  std::size_t out = static_cast<std::size_t>(k);
  w1 = glorot(h, in, rng);
  b1 = Tensor::zeros({h});
  w2 = glorot(h, h, rng);
  b2 = Tensor::zeros({h});
  w3 = glorot(out, h, rng);
  b3 = Tensor::zeros({out});
}

std::size_t MLPParams::param_count() const {
  std::size_t n = 0;
  for (const Tensor* t : tensors()) n += t->size();
  return n;
}

std::vector<Tensor*> MLPParams::tensors() {
  return {&w1, &b1, &w2, &b2, &w3, &b3};
}

std::vector<const Tensor*> MLPParams::tensors() const {
  return {&w1, &b1, &w2, &b2, &w3, &b3};
}

MLPLeaves bind_mlp(DiffGraph& g, MLPParams& p) {
  return {g.leaf(&p.w1), g.leaf(&p.b1), g.leaf(&p.w2),
          g.leaf(&p.b2), g.leaf(&p.w3), g.leaf(&p.b3)};
}

NodeId mlp_apply_batch(DiffGraph& g, const MLPLeaves& net, NodeId input) {
  NodeId h1 = g.relu(g.linear(input, net.w1, net.b1));
  NodeId h2 = g.relu(g.linear(h1, net.w2, net.b2));
  return g.linear(h2, net.w3, net.b3);
}

NodeId mlp_apply(DiffGraph& g, const MLPLeaves& net, double norm_rating,
                 NodeId embedding) {
  NodeId row = g.stack_rows(std::array{embedding});
  NodeId x = g.append_const_col(row, {norm_rating});
  return g.mean_rows(mlp_apply_batch(g, net, x));
}

}  // namespace rec
