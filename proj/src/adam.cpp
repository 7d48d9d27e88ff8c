#include "rec/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace rec {

Adam::Adam(const std::vector<Tensor*>& params, double learning_rate)
    : lr(learning_rate) {
  m_.reserve(params.size());
  v_.reserve(params.size());
  for (Tensor* p : params) {
    m_.push_back(Tensor::zeros(p->shape));
    v_.push_back(Tensor::zeros(p->shape));
  }
}

void Adam::step(const std::vector<Tensor*>& params,
                const std::unordered_map<Tensor*, Tensor>& grads) {
  if (params.size() != m_.size())
    throw std::runtime_error("adam: parameter set changed size");
  ++t_;
  double c1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
  double c2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor& x = *params[p];
    auto it = grads.find(params[p]);
    const Tensor* g = it == grads.end() ? nullptr : &it->second;
    if (g && !g->same_shape(x))
      throw std::runtime_error("adam: gradient shape mismatch");
    Tensor& m = m_[p];
    Tensor& v = v_[p];
    for (std::size_t i = 0; i < x.size(); ++i) {
      double gi = g ? g->data[i] : 0.0;
      m.data[i] = beta1 * m.data[i] + (1.0 - beta1) * gi;
      v.data[i] = beta2 * v.data[i] + (1.0 - beta2) * gi * gi;
      double mhat = m.data[i] / c1;
      double vhat = v.data[i] / c2;
      x.data[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

}  // namespace rec
