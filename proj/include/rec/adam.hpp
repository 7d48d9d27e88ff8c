#pragma once

#include <unordered_map>
#include <vector>

#include "rec/graph.hpp"
#include "rec/tensor.hpp"

namespace rec {

// Adam with bias correction. Moment accumulators are kept per parameter
// tensor, in the order the parameters were registered.
class Adam {
 public:
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  Adam() = default;
  Adam(const std::vector<Tensor*>& params, double learning_rate);

  // Parameters absent from `grads` are treated as having zero gradient.
  void step(const std::vector<Tensor*>& params,
            const std::unordered_map<Tensor*, Tensor>& grads);

  long step_count() const { return t_; }

  // Checkpoint access.
  std::vector<Tensor>& first_moments() { return m_; }
  std::vector<Tensor>& second_moments() { return v_; }
  long& step_counter() { return t_; }

 private:
  std::vector<Tensor> m_, v_;
  long t_ = 0;
};

}  // namespace rec
