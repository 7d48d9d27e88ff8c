#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "rec/graph.hpp"
#include "rec/tensor.hpp"

namespace rec {

// 3-layer feed-forward generator: (embedding ++ normalized rating) -> embedding.
// Hidden width 200, ReLU activations, linear output layer.
struct MLPParams {
  static constexpr int kHidden = 200;

  int k = 0;
  Tensor w1, b1, w2, b2, w3, b3;  // w: (out x in), row-major

  void init(int latent_dim, std::mt19937_64& rng);
  std::size_t param_count() const;
  std::vector<Tensor*> tensors();
  std::vector<const Tensor*> tensors() const;
};

// Per-graph leaf bindings for one net.
struct MLPLeaves {
  NodeId w1, b1, w2, b2, w3, b3;
};

MLPLeaves bind_mlp(DiffGraph& g, MLPParams& p);

// Runs the net over a batch of inputs, one row per evidence pair: E x (K+1) -> E x K.
NodeId mlp_apply_batch(DiffGraph& g, const MLPLeaves& net, NodeId input);

// Single (rating, embedding) pair -> K-vector.
NodeId mlp_apply(DiffGraph& g, const MLPLeaves& net, double norm_rating,
                 NodeId embedding);

}  // namespace rec
