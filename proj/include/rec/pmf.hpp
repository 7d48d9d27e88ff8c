#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "rec/dataset.hpp"
#include "rec/graph.hpp"
#include "rec/ratings_store.hpp"
#include "rec/tensor.hpp"
#include "rec/training.hpp"

namespace rec {

// Dense latent-factor baseline: one trainable K-vector per user and per item.
struct PmfModel {
  int k = 100;
  std::vector<Tensor> user_rows, item_rows;
  double mean_rating = 0.0;
  double scale_min = 1.0;
  double scale_max = 5.0;

  void init(int num_users, int num_items, int latent_dim, std::uint64_t seed);
  std::vector<Tensor*> parameters();
};

struct FactorLossParts {
  double squared_error = 0.0;
  double reg = 0.0;
  NodeId total_node = 0;
};

// Squared-error + lambda * Frobenius loss over explicit row tables. Shared by
// the PMF baseline and prototype-block pretraining.
FactorLossParts build_factor_loss(DiffGraph& g, std::span<Tensor* const> u_rows,
                                  std::span<Tensor* const> v_rows,
                                  std::span<const RatingRecord> batch,
                                  double lambda);

using FactorIterHook = std::function<void(int iteration, const FactorLossParts&)>;

void train_factor_tables(const std::vector<Tensor*>& u_rows,
                         const std::vector<Tensor*>& v_rows,
                         const std::vector<RatingRecord>& records, double lr,
                         double lambda, int batch_size, int iterations,
                         std::uint64_t sampling_seed,
                         const FactorIterHook& hook);

// Prototype-block pretraining, matching the procedure used for the recursive
// model so convergence comparisons start from the same footing.
void pmf_pretrain_block(PmfModel& model, const RatingsStore& store,
                        const PrototypeSet& protos, const TrainConfig& cfg);

// Full PMF run: prototype-block pretraining (when configured) followed by
// mini-batch optimization of all rows.
void train_pmf(PmfModel& model, const RatingsStore& store, const Dataset& train,
               const Dataset* valid, const TrainConfig& cfg,
               const MetricsSink& sink);

double pmf_predict(const PmfModel& model, int user, int item);  // unclamped
double pmf_evaluate(const PmfModel& model, const Dataset& eval_set);

}  // namespace rec
