#include "rec/engine.hpp"

#include <algorithm>
#include <stdexcept>

namespace rec {

namespace {

long long cache_key(bool user_side, int id) {
  return (static_cast<long long>(user_side) << 32) | static_cast<unsigned>(id);
}

}  // namespace

void GenCounters::merge(const GenCounters& o) {
  embeddings_generated += o.embeddings_generated;
  cache_hits += o.cache_hits;
  failed_requests += o.failed_requests;
  max_depth_seen = std::max(max_depth_seen, o.max_depth_seen);
  if (max_evidence_at_depth.size() < o.max_evidence_at_depth.size())
    max_evidence_at_depth.resize(o.max_evidence_at_depth.size(), 0);
  for (std::size_t d = 0; d < o.max_evidence_at_depth.size(); ++d)
    max_evidence_at_depth[d] =
        std::max(max_evidence_at_depth[d], o.max_evidence_at_depth[d]);
}

Engine::Engine(RecModel& model, const RatingsStore& store)
    : model_(model), store_(store) {
  if (model.protos.user_slot.size() != static_cast<std::size_t>(store.num_users) ||
      model.protos.item_slot.size() != static_cast<std::size_t>(store.num_items)) {
    throw std::invalid_argument("engine: prototype set does not match store dims");
  }
}

Engine::Context Engine::make_context(DiffGraph& graph,
                                     std::uint64_t evidence_seed) const {
  Context ctx;
  ctx.graph = &graph;
  ctx.rng.seed(evidence_seed);
  ctx.counters.reset_evidence(model_.hyper.max_depth);
  ctx.active_users.assign(store_.num_users, 0);
  ctx.active_items.assign(store_.num_items, 0);
  ctx.proto_u_leaves.assign(model_.proto_u.size(), std::nullopt);
  ctx.proto_v_leaves.assign(model_.proto_v.size(), std::nullopt);
  return ctx;
}

void Engine::clear_cache(Context& ctx, DiffGraph& fresh_graph) const {
  ctx.cache.clear();
  ctx.graph = &fresh_graph;
  ctx.proto_u_leaves.assign(model_.proto_u.size(), std::nullopt);
  ctx.proto_v_leaves.assign(model_.proto_v.size(), std::nullopt);
  ctx.phi_leaves.reset();
  ctx.psi_leaves.reset();
}

NodeId Engine::proto_node(bool user_side, int slot, Context& ctx) const {
  auto& leaves = user_side ? ctx.proto_u_leaves : ctx.proto_v_leaves;
  if (!leaves[slot]) {
    Tensor& row = user_side ? model_.proto_u[slot] : model_.proto_v[slot];
    leaves[slot] = ctx.graph->leaf(&row);
  }
  return *leaves[slot];
}

const MLPLeaves& Engine::net_leaves(bool user_side, Context& ctx) const {
  auto& leaves = user_side ? ctx.phi_leaves : ctx.psi_leaves;
  if (!leaves)
    leaves = bind_mlp(*ctx.graph, user_side ? model_.phi : model_.psi);
  return *leaves;
}

std::vector<std::pair<int, double>> Engine::select_evidence(
    const std::vector<std::pair<int, double>>& candidates, int depth,
    Context& ctx, bool counterpart_is_item) const {
  const ControlFlags& f = model_.hyper.flags;

  std::vector<std::pair<int, double>> eligible;
  eligible.reserve(candidates.size());
  if (f.cycle_blocking) {
    const auto& active = counterpart_is_item ? ctx.active_items : ctx.active_users;
    for (const auto& c : candidates)
      if (!active[c.first]) eligible.push_back(c);
  } else {
    eligible = candidates;
  }

  if (!f.evidence_limit) return eligible;

  std::size_t budget = static_cast<std::size_t>(model_.hyper.evidence_limit);
  if (f.telescoping) {
    budget >>= depth;
    // A zero budget would truncate recursion below max depth; keep one slot.
    if (budget == 0) budget = 1;
  }
  if (eligible.size() <= budget) return eligible;

  auto sample = [&](std::vector<std::pair<int, double>>& pool, std::size_t n) {
    // Partial Fisher-Yates; the first n entries end up as the sample.
    for (std::size_t i = 0; i < n; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
      std::swap(pool[i], pool[pick(ctx.rng)]);
    }
    pool.resize(n);
  };

  if (f.prototype_prioritization) {
    const auto& slot = counterpart_is_item ? model_.protos.item_slot
                                           : model_.protos.user_slot;
    std::vector<std::pair<int, double>> protos, rest;
    for (const auto& c : eligible)
      (slot[c.first] >= 0 ? protos : rest).push_back(c);
    if (protos.size() >= budget) {
      sample(protos, budget);
      return protos;
    }
    sample(rest, budget - protos.size());
    protos.insert(protos.end(), rest.begin(), rest.end());
    return protos;
  }

  sample(eligible, budget);
  return eligible;
}

std::optional<NodeId> Engine::generate(bool user_side, int id, int depth,
                                       Context& ctx) const {
  const RecHyper& h = model_.hyper;
  if (depth > h.max_depth)
    throw std::logic_error("engine: recursion exceeded max depth");
  ctx.counters.max_depth_seen = std::max(ctx.counters.max_depth_seen, depth);

  const auto& slot_map = user_side ? model_.protos.user_slot : model_.protos.item_slot;
  int slot = slot_map[id];
  if (slot >= 0) return proto_node(user_side, slot, ctx);

  long long key = cache_key(user_side, id);
  if (h.flags.caching) {
    auto it = ctx.cache.find(key);
    if (it != ctx.cache.end()) {
      ctx.counters.cache_hits++;
      return it->second;
    }
  }

  auto fail = [&]() -> std::optional<NodeId> {
    ctx.counters.failed_requests++;
    if (h.flags.caching && h.flags.cache_none) ctx.cache.emplace(key, std::nullopt);
    return std::nullopt;
  };

  if (depth >= h.max_depth) return fail();

  auto& active = user_side ? ctx.active_users : ctx.active_items;
  if (h.flags.cycle_blocking && active[id])
    throw std::logic_error("engine: re-entered an active embedding under cycle blocking");
  active[id] = 1;

  const auto& candidates = user_side ? store_.by_user[id] : store_.by_item[id];
  auto selected = select_evidence(candidates, depth, ctx, /*counterpart_is_item=*/user_side);
  if (static_cast<std::size_t>(depth) < ctx.counters.max_evidence_at_depth.size()) {
    ctx.counters.max_evidence_at_depth[depth] =
        std::max(ctx.counters.max_evidence_at_depth[depth],
                 static_cast<int>(selected.size()));
  }

  std::vector<NodeId> evidence;
  std::vector<char> child_generated;  // non-prototype children, releasable
  std::vector<double> ratings;
  evidence.reserve(selected.size());
  const auto& child_slots = user_side ? model_.protos.item_slot : model_.protos.user_slot;
  for (const auto& [counterpart, rating] : selected) {
    auto child = generate(!user_side, counterpart, depth + 1, ctx);
    if (!child) continue;
    evidence.push_back(*child);
    child_generated.push_back(child_slots[counterpart] < 0);
    ratings.push_back(model_.normalize_rating(rating));
  }
  active[id] = 0;

  if (evidence.empty()) return fail();

  DiffGraph& g = *ctx.graph;
  const MLPLeaves& net = net_leaves(user_side, ctx);
  bool free_values = ctx.inference;
  auto step = [&](NodeId prev, NodeId next) {
    if (free_values) g.release_value(prev);
    return next;
  };
  NodeId stacked = g.stack_rows(evidence);
  if (free_values && !h.flags.caching) {
    for (std::size_t e = 0; e < evidence.size(); ++e)
      if (child_generated[e]) g.release_value(evidence[e]);
  }
  NodeId x = step(stacked, g.append_const_col(stacked, std::move(ratings)));
  x = step(x, g.linear(x, net.w1, net.b1));
  x = step(x, g.relu(x));
  x = step(x, g.linear(x, net.w2, net.b2));
  x = step(x, g.relu(x));
  x = step(x, g.linear(x, net.w3, net.b3));
  NodeId out = step(x, g.mean_rows(x));

  ctx.counters.embeddings_generated++;
  if (h.flags.caching) ctx.cache.emplace(key, out);
  return out;
}

std::optional<NodeId> Engine::user_vector(int i, Context& ctx, int depth) const {
  return generate(true, i, depth, ctx);
}

std::optional<NodeId> Engine::item_vector(int j, Context& ctx, int depth) const {
  return generate(false, j, depth, ctx);
}

std::optional<NodeId> Engine::predict_node(int i, int j, Context& ctx) const {
  auto u = user_vector(i, ctx);
  auto v = item_vector(j, ctx);
  if (!u || !v) return std::nullopt;
  NodeId pred = ctx.graph->dot(*u, *v);
  if (ctx.inference && !model_.hyper.flags.caching) {
    if (model_.protos.user_slot[i] < 0) ctx.graph->release_value(*u);
    if (model_.protos.item_slot[j] < 0) ctx.graph->release_value(*v);
  }
  return pred;
}

double Engine::predict_rating(int i, int j, std::uint64_t evidence_seed,
                              GenCounters* counters) const {
  DiffGraph graph;
  Context ctx = make_context(graph, evidence_seed);
  ctx.inference = true;
  auto node = predict_node(i, j, ctx);
  if (counters) counters->merge(ctx.counters);
  if (!node) return store_.mean_rating;
  return graph.value(*node)(0);
}

double Engine::clamp_to_scale(double prediction) const {
  return std::clamp(prediction, store_.scale_min, store_.scale_max);
}

}  // namespace rec
