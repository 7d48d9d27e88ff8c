#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <unordered_map>
#include <vector>

#include "rec/graph.hpp"
#include "rec/model.hpp"
#include "rec/ratings_store.hpp"

namespace rec {

struct GenCounters {
  long embeddings_generated = 0;
  long cache_hits = 0;
  long failed_requests = 0;
  int max_depth_seen = 0;
  std::vector<int> max_evidence_at_depth;  // sized max_depth + 1

  void reset_evidence(int max_depth) {
    max_evidence_at_depth.assign(max_depth + 1, 0);
  }
  void merge(const GenCounters& o);
};

// Recursive embedding generation over one ratings store. The engine builds
// graph nodes so the recursion stays differentiable end to end; inference
// callers simply never run backward.
class Engine {
 public:
  Engine(RecModel& model, const RatingsStore& store);

  struct Context {
    DiffGraph* graph = nullptr;
    // When set, intermediate activations are freed as soon as they are
    // consumed; the tape then supports values only, not backward.
    bool inference = false;
    std::mt19937_64 rng;
    GenCounters counters;
    // (side, id) -> generated node, or nullopt for a cached failure.
    std::unordered_map<long long, std::optional<NodeId>> cache;
    std::vector<char> active_users, active_items;  // current call stack
    // Lazy per-graph leaf bindings.
    std::vector<std::optional<NodeId>> proto_u_leaves, proto_v_leaves;
    std::optional<MLPLeaves> phi_leaves, psi_leaves;
  };

  Context make_context(DiffGraph& graph, std::uint64_t evidence_seed) const;

  // Wipes the cache (after a gradient update); counters are preserved.
  // The context must be re-pointed at a fresh graph by the caller.
  void clear_cache(Context& ctx, DiffGraph& fresh_graph) const;

  std::optional<NodeId> user_vector(int i, Context& ctx, int depth = 0) const;
  std::optional<NodeId> item_vector(int j, Context& ctx, int depth = 0) const;

  // Evidence subset for one generation step: cycle-blocked candidates are
  // excluded first, then the depth budget and prototype prioritization apply.
  std::vector<std::pair<int, double>> select_evidence(
      const std::vector<std::pair<int, double>>& candidates, int depth,
      Context& ctx, bool counterpart_is_item) const;

  // Prediction node for one (user, item) pair, or nullopt when either
  // embedding failed (caller substitutes the dataset mean).
  std::optional<NodeId> predict_node(int i, int j, Context& ctx) const;

  // One-off prediction with a fresh context; unclamped.
  double predict_rating(int i, int j, std::uint64_t evidence_seed,
                        GenCounters* counters = nullptr) const;

  double clamp_to_scale(double prediction) const;

  // Leaf node for a prototype table row, bound at most once per graph.
  NodeId proto_node(bool user_side, int slot, Context& ctx) const;
  // Leaf bindings for one generator net, bound at most once per graph.
  const MLPLeaves& net_leaves(bool user_side, Context& ctx) const;

  const RecModel& model() const { return model_; }
  const RatingsStore& store() const { return store_; }

 private:
  std::optional<NodeId> generate(bool user_side, int id, int depth,
                                 Context& ctx) const;

  RecModel& model_;
  const RatingsStore& store_;
};

}  // namespace rec
