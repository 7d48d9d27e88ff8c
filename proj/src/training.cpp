#include "rec/training.hpp"

#include <chrono>
#include <cmath>
#include <iostream>
#include <stdexcept>

#include "rec/pmf.hpp"

namespace rec {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed ^ (salt * 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::vector<RatingRecord> sample_batch(const std::vector<RatingRecord>& records,
                                       int batch_size, std::mt19937_64& rng) {
  if (records.empty()) throw std::invalid_argument("sample_batch: no records");
  std::uniform_int_distribution<std::size_t> pick(0, records.size() - 1);
  std::vector<RatingRecord> batch;
  batch.reserve(batch_size);
  for (int b = 0; b < batch_size; ++b) batch.push_back(records[pick(rng)]);
  return batch;
}

LossTerms build_loss(const Engine& engine, Engine::Context& ctx,
                     std::span<const RatingRecord> batch, double lambda) {
  DiffGraph& g = *ctx.graph;
  LossTerms out;

  std::vector<NodeId> sq_nodes;
  double fallback_const = 0.0;
  for (const auto& rec : batch) {
    auto pred = engine.predict_node(rec.user_id, rec.item_id, ctx);
    if (!pred) {
      // No gradient path exists through the mean fallback; its error enters
      // the reported loss as a constant.
      double d = rec.rating - engine.store().mean_rating;
      fallback_const += d * d;
      out.fallback_count++;
      continue;
    }
    sq_nodes.push_back(g.square(g.add_const(*pred, -rec.rating)));
  }
  NodeId sq = sq_nodes.empty()
                  ? g.constant(Tensor::scalar(fallback_const))
                  : g.add_const(g.sum(g.stack_rows(sq_nodes)), fallback_const);

  const RecModel& model = engine.model();
  std::vector<NodeId> proto_sumsq;
  for (std::size_t s = 0; s < model.proto_u.size(); ++s)
    proto_sumsq.push_back(g.sum_squares(engine.proto_node(true, static_cast<int>(s), ctx)));
  for (std::size_t s = 0; s < model.proto_v.size(); ++s)
    proto_sumsq.push_back(g.sum_squares(engine.proto_node(false, static_cast<int>(s), ctx)));
  NodeId reg_p = proto_sumsq.empty()
                     ? g.constant(Tensor::scalar(0.0))
                     : g.scale(g.sum(g.stack_rows(proto_sumsq)), lambda);

  std::vector<NodeId> net_sumsq;
  for (bool user_side : {true, false}) {
    const MLPLeaves& net = engine.net_leaves(user_side, ctx);
    for (NodeId id : {net.w1, net.b1, net.w2, net.b2, net.w3, net.b3})
      net_sumsq.push_back(g.sum_squares(id));
  }
  NodeId reg_n = g.scale(g.sum(g.stack_rows(net_sumsq)), lambda);

  out.total_node = g.add(g.add(sq, reg_p), reg_n);
  out.squared_error = g.value(sq)(0);
  out.reg_protos = g.value(reg_p)(0);
  out.reg_nets = g.value(reg_n)(0);
  out.total = g.value(out.total_node)(0);
  return out;
}

void pretrain_prototype_block(RecModel& model, const RatingsStore& store,
                              const TrainConfig& cfg) {
  if (cfg.pretrain_iterations <= 0) return;
  PrototypeBlock block = prototype_block(store, model.protos);
  if (block.block.records.empty()) {
    std::cerr << "warning: prototype block is empty; skipping pretraining\n";
    return;
  }
  std::vector<Tensor*> u_rows, v_rows;
  for (auto& t : model.proto_u) u_rows.push_back(&t);
  for (auto& t : model.proto_v) v_rows.push_back(&t);
  train_factor_tables(u_rows, v_rows, block.block.records, cfg.lr, cfg.lambda,
                      cfg.batch_size, cfg.pretrain_iterations,
                      mix_seed(cfg.sampling_seed, 0x70726531), nullptr);
}

void train_rec(RecModel& model, const RatingsStore& store,
               const Dataset& train, const Dataset* valid,
               const TrainConfig& cfg, const MetricsSink& sink) {
  Engine engine(model, store);
  auto params = model.parameters();
  Adam adam(params, cfg.lr);
  std::mt19937_64 srng(cfg.sampling_seed);
  auto t0 = std::chrono::steady_clock::now();

  for (int iter = 1; iter <= cfg.iterations; ++iter) {
    auto batch = sample_batch(train.records, cfg.batch_size, srng);
    DiffGraph g;
    auto ctx = engine.make_context(g, mix_seed(cfg.sampling_seed, 0xE11D + iter));
    LossTerms loss;
    try {
      loss = build_loss(engine, ctx, batch, cfg.lambda);
      g.backward(loss.total_node);
    } catch (const std::exception& e) {
      throw std::runtime_error("training aborted at iteration " +
                               std::to_string(iter) + ": " + e.what());
    }
    adam.step(params, g.grads());

    MetricsRow row;
    row.iteration = iter;
    row.train_rmse = std::sqrt(loss.squared_error / batch.size());
    row.valid_rmse = std::nan("");
    row.embeddings_generated = ctx.counters.embeddings_generated;
    row.cache_hits = ctx.counters.cache_hits;
    row.failed_requests = ctx.counters.failed_requests;
    row.loss_sq = loss.squared_error;
    row.loss_reg_protos = loss.reg_protos;
    row.loss_reg_nets = loss.reg_nets;
    if (valid && cfg.eval_every > 0 && iter % cfg.eval_every == 0) {
      row.valid_rmse = evaluate_rmse(model, store, *valid,
                                     mix_seed(cfg.sampling_seed, 0xEBA1 + iter),
                                     cfg.batch_size);
    }
    row.elapsed_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (sink) sink(row);

    if (cfg.checkpoint_every > 0 && !cfg.checkpoint_path.empty() &&
        iter % cfg.checkpoint_every == 0) {
      save_checkpoint(model, &adam, cfg.checkpoint_path);
    }
  }
}

double evaluate_rmse(RecModel& model, const RatingsStore& store,
                     const Dataset& eval_set, std::uint64_t seed,
                     int cache_batch, GenCounters* counters) {
  if (eval_set.records.empty())
    throw std::invalid_argument("evaluate_rmse: empty evaluation set");
  Engine engine(model, store);
  double sq = 0.0;
  std::size_t n = eval_set.records.size();
  std::size_t chunk_size = cache_batch > 0 ? cache_batch : n;
  std::size_t chunk_index = 0;
  for (std::size_t start = 0; start < n; start += chunk_size, ++chunk_index) {
    DiffGraph g;
    auto ctx = engine.make_context(g, mix_seed(seed, chunk_index));
    ctx.inference = true;
    std::size_t end = std::min(start + chunk_size, n);
    for (std::size_t r = start; r < end; ++r) {
      const auto& rec = eval_set.records[r];
      auto node = engine.predict_node(rec.user_id, rec.item_id, ctx);
      double pred = node ? g.value(*node)(0) : store.mean_rating;
      pred = engine.clamp_to_scale(pred);
      double d = rec.rating - pred;
      sq += d * d;
    }
    if (counters) counters->merge(ctx.counters);
  }
  return std::sqrt(sq / static_cast<double>(n));
}

}  // namespace rec
