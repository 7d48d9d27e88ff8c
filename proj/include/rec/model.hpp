#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rec/adam.hpp"
#include "rec/nets.hpp"
#include "rec/ratings_store.hpp"
#include "rec/tensor.hpp"

namespace rec {

struct ControlFlags {
  bool cycle_blocking = true;
  bool caching = true;
  // Negative caching of failed generations. Off by default: a None depends on
  // the depth at which the request was made, so caching it by id alone makes
  // later shallow requests fail spuriously.
  bool cache_none = false;
  bool evidence_limit = true;
  bool prototype_prioritization = true;
  bool telescoping = true;
};

struct RecHyper {
  int max_depth = 4;
  int evidence_limit = 80;
  ControlFlags flags;
};

// Full parameter set: prototype embedding tables plus the two generator nets.
struct RecModel {
  int k = 100;
  PrototypeSet protos;
  std::vector<Tensor> proto_u;  // one K-vector per prototype user, slot order
  std::vector<Tensor> proto_v;
  MLPParams phi;  // (item embedding, rating) -> user embedding
  MLPParams psi;  // (user embedding, rating) -> item embedding
  RecHyper hyper;

  // Train-split statistics used by the fallback and rating normalization.
  double mean_rating = 0.0;
  double scale_min = 1.0;
  double scale_max = 5.0;

  // Prototype tables first (normal(0, 0.1)), then nets (glorot uniform,
  // zero biases). Deterministic per seed.
  void init_params(std::uint64_t seed);

  std::vector<Tensor*> parameters();
  std::size_t param_count() const;
  double normalize_rating(double r) const;
};

void save_checkpoint(const RecModel& model, const Adam* adam,
                     const std::string& path);
void load_checkpoint(RecModel& model, Adam* adam, const std::string& path);

}  // namespace rec
