#include "rec/pmf.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <optional>
#include <random>
#include <stdexcept>

#include "rec/adam.hpp"

namespace rec {

void PmfModel::init(int num_users, int num_items, int latent_dim,
                    std::uint64_t seed) {
  k = latent_dim;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, 0.1);
  user_rows.assign(num_users, Tensor::zeros({static_cast<std::size_t>(k)}));
  item_rows.assign(num_items, Tensor::zeros({static_cast<std::size_t>(k)}));
  for (auto& row : user_rows)
    for (auto& v : row.data) v = dist(rng);
  for (auto& row : item_rows)
    for (auto& v : row.data) v = dist(rng);
}

std::vector<Tensor*> PmfModel::parameters() {
  std::vector<Tensor*> out;
  out.reserve(user_rows.size() + item_rows.size());
  for (auto& t : user_rows) out.push_back(&t);
  for (auto& t : item_rows) out.push_back(&t);
  return out;
}

FactorLossParts build_factor_loss(DiffGraph& g, std::span<Tensor* const> u_rows,
                                  std::span<Tensor* const> v_rows,
                                  std::span<const RatingRecord> batch,
                                  double lambda) {
  std::vector<std::optional<NodeId>> u_leaves(u_rows.size()), v_leaves(v_rows.size());
  auto bind = [&](std::span<Tensor* const> rows,
                  std::vector<std::optional<NodeId>>& leaves, int idx) {
    if (!leaves[idx]) leaves[idx] = g.leaf(rows[idx]);
    return *leaves[idx];
  };

  std::vector<NodeId> sq_nodes;
  sq_nodes.reserve(batch.size());
  for (const auto& rec : batch) {
    NodeId u = bind(u_rows, u_leaves, rec.user_id);
    NodeId v = bind(v_rows, v_leaves, rec.item_id);
    sq_nodes.push_back(g.square(g.add_const(g.dot(u, v), -rec.rating)));
  }
  NodeId sq = sq_nodes.empty() ? g.constant(Tensor::scalar(0.0))
                               : g.sum(g.stack_rows(sq_nodes));

  std::vector<NodeId> sumsq;
  sumsq.reserve(u_rows.size() + v_rows.size());
  for (std::size_t i = 0; i < u_rows.size(); ++i)
    sumsq.push_back(g.sum_squares(bind(u_rows, u_leaves, static_cast<int>(i))));
  for (std::size_t j = 0; j < v_rows.size(); ++j)
    sumsq.push_back(g.sum_squares(bind(v_rows, v_leaves, static_cast<int>(j))));
  NodeId reg = sumsq.empty() ? g.constant(Tensor::scalar(0.0))
                             : g.scale(g.sum(g.stack_rows(sumsq)), lambda);

  FactorLossParts parts;
  parts.total_node = g.add(sq, reg);
  parts.squared_error = g.value(sq)(0);
  parts.reg = g.value(reg)(0);
  return parts;
}

void train_factor_tables(const std::vector<Tensor*>& u_rows,
                         const std::vector<Tensor*>& v_rows,
                         const std::vector<RatingRecord>& records, double lr,
                         double lambda, int batch_size, int iterations,
                         std::uint64_t sampling_seed,
                         const FactorIterHook& hook) {
  std::vector<Tensor*> params = u_rows;
  params.insert(params.end(), v_rows.begin(), v_rows.end());
  Adam adam(params, lr);
  std::mt19937_64 srng(sampling_seed);
  for (int iter = 1; iter <= iterations; ++iter) {
    auto batch = sample_batch(records, batch_size, srng);
    DiffGraph g;
    FactorLossParts parts;
    try {
      parts = build_factor_loss(g, u_rows, v_rows, batch, lambda);
      g.backward(parts.total_node);
    } catch (const std::exception& e) {
      throw std::runtime_error("factor training aborted at iteration " +
                               std::to_string(iter) + ": " + e.what());
    }
    adam.step(params, g.grads());
    if (hook) hook(iter, parts);
  }
}

void pmf_pretrain_block(PmfModel& model, const RatingsStore& store,
                        const PrototypeSet& protos, const TrainConfig& cfg) {
  if (cfg.pretrain_iterations <= 0) return;
  PrototypeBlock block = prototype_block(store, protos);
  if (block.block.records.empty()) return;
  std::vector<Tensor*> u_rows, v_rows;
  for (int u : block.local_to_global_user) u_rows.push_back(&model.user_rows[u]);
  for (int v : block.local_to_global_item) v_rows.push_back(&model.item_rows[v]);
  train_factor_tables(u_rows, v_rows, block.block.records, cfg.lr, cfg.lambda,
                      cfg.batch_size, cfg.pretrain_iterations,
                      mix_seed(cfg.sampling_seed, 0x70726531), nullptr);
}

void train_pmf(PmfModel& model, const RatingsStore& store, const Dataset& train,
               const Dataset* valid, const TrainConfig& cfg,
               const MetricsSink& sink) {
  auto protos = select_prototypes(store, cfg.num_proto_users, cfg.num_proto_items);
  pmf_pretrain_block(model, store, protos, cfg);

  std::vector<Tensor*> u_rows, v_rows;
  for (auto& t : model.user_rows) u_rows.push_back(&t);
  for (auto& t : model.item_rows) v_rows.push_back(&t);

  auto t0 = std::chrono::steady_clock::now();
  train_factor_tables(
      u_rows, v_rows, train.records, cfg.lr, cfg.lambda, cfg.batch_size,
      cfg.iterations, cfg.sampling_seed,
      [&](int iter, const FactorLossParts& parts) {
        if (!sink) return;
        MetricsRow row;
        row.iteration = iter;
        row.train_rmse = std::sqrt(parts.squared_error / cfg.batch_size);
        row.valid_rmse = std::nan("");
        row.loss_sq = parts.squared_error;
        row.loss_reg_protos = parts.reg;
        if (valid && cfg.eval_every > 0 && iter % cfg.eval_every == 0)
          row.valid_rmse = pmf_evaluate(model, *valid);
        row.elapsed_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                .count();
        sink(row);
      });
}

double pmf_predict(const PmfModel& model, int user, int item) {
  const Tensor& u = model.user_rows[user];
  const Tensor& v = model.item_rows[item];
  double s = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) s += u.data[i] * v.data[i];
  return s;
}

double pmf_evaluate(const PmfModel& model, const Dataset& eval_set) {
  if (eval_set.records.empty())
    throw std::invalid_argument("pmf_evaluate: empty evaluation set");
  double sq = 0.0;
  for (const auto& rec : eval_set.records) {
    double pred = std::clamp(pmf_predict(model, rec.user_id, rec.item_id),
                             model.scale_min, model.scale_max);
    double d = rec.rating - pred;
    sq += d * d;
  }
  return std::sqrt(sq / static_cast<double>(eval_set.records.size()));
}

}  // namespace rec
