#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "rec/engine.hpp"
#include "rec/model.hpp"

namespace rec {

struct TrainConfig {
  int k = 100;
  int num_proto_users = 50;
  int num_proto_items = 50;
  int evidence_limit = 80;
  int max_depth = 4;
  int batch_size = 1000;
  double lr = 1e-3;
  double lambda = 1e-5;
  int iterations = 2000;
  int pretrain_iterations = 500;
  std::uint64_t init_seed = 1;
  std::uint64_t sampling_seed = 2;
  std::uint64_t split_seed = 3;
  ControlFlags flags;
  int eval_every = 10;  // validation RMSE cadence, in iterations
  int checkpoint_every = 0;
  std::string checkpoint_path;
};

struct LossTerms {
  double squared_error = 0.0;
  double reg_protos = 0.0;
  double reg_nets = 0.0;
  double total = 0.0;
  long fallback_count = 0;
  NodeId total_node = 0;
};

struct MetricsRow {
  int iteration = 0;
  double train_rmse = 0.0;
  double valid_rmse = 0.0;  // NaN when not evaluated this iteration
  long embeddings_generated = 0;
  long cache_hits = 0;
  long failed_requests = 0;
  double elapsed_seconds = 0.0;
  // Raw loss decomposition, for equivalence checks; not part of the CSV.
  double loss_sq = 0.0;
  double loss_reg_protos = 0.0;
  double loss_reg_nets = 0.0;
};

using MetricsSink = std::function<void(const MetricsRow&)>;

// Squared error over the batch (mean-fallback predictions enter as
// constants) plus lambda-regularizers over the prototype tables and both
// generator nets. Recorded into the context's graph.
LossTerms build_loss(const Engine& engine, Engine::Context& ctx,
                     std::span<const RatingRecord> batch, double lambda);

// Uniform with replacement over observed train ratings.
std::vector<RatingRecord> sample_batch(const std::vector<RatingRecord>& records,
                                       int batch_size, std::mt19937_64& rng);

// Mini-batch PMF on the prototype block only; generator nets untouched.
void pretrain_prototype_block(RecModel& model, const RatingsStore& store,
                              const TrainConfig& cfg);

// End-to-end optimization of the full parameter set.
void train_rec(RecModel& model, const RatingsStore& store,
               const Dataset& train, const Dataset* valid,
               const TrainConfig& cfg, const MetricsSink& sink);

// Clamped-prediction RMSE. Predictions are batched through a shared cache of
// `cache_batch` records at a time, mirroring the per-update cache lifetime of
// training; the evidence RNG is freshly seeded from `seed`.
double evaluate_rmse(RecModel& model, const RatingsStore& store,
                     const Dataset& eval_set, std::uint64_t seed,
                     int cache_batch = 1000, GenCounters* counters = nullptr);

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt);

}  // namespace rec
