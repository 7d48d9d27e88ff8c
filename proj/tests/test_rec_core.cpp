#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "rec/engine.hpp"

using namespace rec;

namespace {

RecModel make_model(const RatingsStore& store, int k, int pu, int pi,
                    int max_depth, std::uint64_t seed = 11) {
  RecModel m;
  m.k = k;
  m.hyper.max_depth = max_depth;
  m.protos = select_prototypes(store, pu, pi);
  m.mean_rating = store.mean_rating;
  m.scale_min = store.scale_min;
  m.scale_max = store.scale_max;
  m.init_params(seed);
  return m;
}

// Plain loops over the raw net tensors; the oracle for what one generation
// step must compute.
std::vector<double> mlp_forward(const MLPParams& p,
                                const std::vector<double>& input) {
  auto layer = [](const Tensor& w, const Tensor& b,
                  const std::vector<double>& x) {
    std::vector<double> out(w.rows(), 0.0);
    for (std::size_t r = 0; r < w.rows(); ++r) {
      double s = b(r);
      for (std::size_t c = 0; c < w.cols(); ++c) s += w(r, c) * x[c];
      out[r] = s;
    }
    return out;
  };
  auto h1 = layer(p.w1, p.b1, input);
  for (auto& x : h1) x = std::max(x, 0.0);
  auto h2 = layer(p.w2, p.b2, h1);
  for (auto& x : h2) x = std::max(x, 0.0);
  return layer(p.w3, p.b3, h2);
}

struct BatchResult {
  std::vector<double> preds;
  GenCounters counters;
};

BatchResult run_batch(RecModel& model, const RatingsStore& store,
                      const std::vector<std::pair<int, int>>& pairs,
                      std::uint64_t seed) {
  Engine eng(model, store);
  DiffGraph g;
  auto ctx = eng.make_context(g, seed);
  ctx.inference = true;
  BatchResult out;
  for (auto [i, j] : pairs) {
    auto node = eng.predict_node(i, j, ctx);
    out.preds.push_back(node ? g.value(*node)(0) : store.mean_rating);
  }
  out.counters = ctx.counters;
  return out;
}

}  // namespace

TEST_CASE("prototype rows are returned directly, even at the depth cap") {
  Dataset ds = generate_synthetic(12, 10, 2, 0.6, 0.0, 2);
  RatingsStore store = build_store(ds);
  RecModel model = make_model(store, 4, 3, 3, 4);
  Engine eng(model, store);

  DiffGraph g;
  auto ctx = eng.make_context(g, 1);
  int pu = model.protos.proto_users[1];
  auto node = eng.user_vector(pu, ctx, model.hyper.max_depth);
  REQUIRE(node.has_value());
  const Tensor& v = g.value(*node);
  REQUIRE(v.size() == 4);
  for (int t = 0; t < 4; ++t) CHECK(v(t) == model.proto_u[1](t));
  CHECK(ctx.counters.embeddings_generated == 0);
  CHECK(ctx.counters.failed_requests == 0);
}

TEST_CASE("max depth zero leaves only prototype-to-prototype predictions") {
  Dataset ds = generate_synthetic(12, 10, 2, 0.6, 0.0, 2);
  RatingsStore store = build_store(ds);
  RecModel model = make_model(store, 4, 3, 3, 0);
  Engine eng(model, store);

  int pu = model.protos.proto_users[0], pi = model.protos.proto_items[0];
  int nu = -1, ni = -1;
  for (int u = 0; u < store.num_users; ++u)
    if (!model.protos.is_proto_user(u)) { nu = u; break; }
  for (int i = 0; i < store.num_items; ++i)
    if (!model.protos.is_proto_item(i)) { ni = i; break; }

  double expected = 0.0;
  for (int t = 0; t < 4; ++t) expected += model.proto_u[0](t) * model.proto_v[0](t);
  CHECK(eng.predict_rating(pu, pi, 1) == doctest::Approx(expected).epsilon(1e-12));

  GenCounters c;
  CHECK(eng.predict_rating(nu, pi, 1, &c) == store.mean_rating);
  CHECK(eng.predict_rating(pu, ni, 1, &c) == store.mean_rating);
  CHECK(c.failed_requests == 2);
  CHECK(c.embeddings_generated == 0);
}

TEST_CASE("one generation step matches a hand-rolled forward pass") {
  // All items prototypical, so a non-prototype user at depth 0 is exactly the
  // mean of per-rating net outputs over its full row.
  Dataset ds = generate_synthetic(15, 6, 2, 0.7, 0.0, 9);
  RatingsStore store = build_store(ds);
  RecModel model = make_model(store, 5, 2, 6, 1);
  Engine eng(model, store);

  int nu = -1;
  for (int u = 0; u < store.num_users; ++u)
    if (!model.protos.is_proto_user(u)) { nu = u; break; }
  REQUIRE(nu >= 0);
  REQUIRE(store.by_user[nu].size() >= 2);

  DiffGraph g;
  auto ctx = eng.make_context(g, 3);
  auto node = eng.user_vector(nu, ctx);
  REQUIRE(node.has_value());
  const Tensor& got = g.value(*node);

  std::vector<double> want(5, 0.0);
  for (auto [item, rating] : store.by_user[nu]) {
    int slot = model.protos.item_slot[item];
    REQUIRE(slot >= 0);
    std::vector<double> input(model.proto_v[slot].data.begin(),
                              model.proto_v[slot].data.end());
    input.push_back(model.normalize_rating(rating));
    auto out = mlp_forward(model.phi, input);
    for (int t = 0; t < 5; ++t) want[t] += out[t];
  }
  for (int t = 0; t < 5; ++t) {
    want[t] /= static_cast<double>(store.by_user[nu].size());
    CHECK(got(t) == doctest::Approx(want[t]).epsilon(1e-12));
  }
  CHECK(ctx.counters.embeddings_generated == 1);
  CHECK(ctx.counters.max_evidence_at_depth[0] ==
        static_cast<int>(store.by_user[nu].size()));
}

TEST_CASE("evidence budget telescopes with depth and never hits zero") {
  Dataset ds = generate_synthetic(10, 120, 1, 0.9, 0.0, 4);
  RatingsStore store = build_store(ds);
  RecModel model = make_model(store, 3, 2, 10, 4);
  model.hyper.evidence_limit = 8;
  Engine eng(model, store);

  DiffGraph g;
  auto ctx = eng.make_context(g, 7);
  const auto& candidates = store.by_user[0];
  REQUIRE(candidates.size() > 8);

  CHECK(eng.select_evidence(candidates, 0, ctx, true).size() == 8);
  CHECK(eng.select_evidence(candidates, 1, ctx, true).size() == 4);
  CHECK(eng.select_evidence(candidates, 2, ctx, true).size() == 2);
  CHECK(eng.select_evidence(candidates, 3, ctx, true).size() == 1);
  CHECK(eng.select_evidence(candidates, 4, ctx, true).size() == 1);

  SUBCASE("flat budget without telescoping") {
    model.hyper.flags.telescoping = false;
    for (int d = 0; d <= 4; ++d)
      CHECK(eng.select_evidence(candidates, d, ctx, true).size() == 8);
  }
  SUBCASE("no limit at all") {
    model.hyper.flags.evidence_limit = false;
    CHECK(eng.select_evidence(candidates, 2, ctx, true).size() ==
          candidates.size());
  }
}

TEST_CASE("prototype counterparts are kept ahead of sampled fill") {
  Dataset ds = generate_synthetic(10, 120, 1, 0.9, 0.0, 4);
  RatingsStore store = build_store(ds);
  RecModel model = make_model(store, 3, 2, 10, 4);
  model.hyper.evidence_limit = 16;
  Engine eng(model, store);

  DiffGraph g;
  auto ctx = eng.make_context(g, 7);
  const auto& candidates = store.by_user[0];
  std::size_t protos_present = 0;
  for (const auto& c : candidates)
    if (model.protos.is_proto_item(c.first)) protos_present++;
  REQUIRE(protos_present == 10);

  auto sel = eng.select_evidence(candidates, 0, ctx, true);
  REQUIRE(sel.size() == 16);
  std::size_t got_protos = 0;
  for (const auto& c : sel)
    if (model.protos.is_proto_item(c.first)) got_protos++;
  CHECK(got_protos == 10);  // every prototype made it in

  // budget below the prototype count: the whole sample is prototypical
  model.hyper.evidence_limit = 6;
  auto tight = eng.select_evidence(candidates, 0, ctx, true);
  REQUIRE(tight.size() == 6);
  for (const auto& c : tight) CHECK(model.protos.is_proto_item(c.first));

  // with prioritization off the sample is unconstrained but still in budget
  model.hyper.flags.prototype_prioritization = false;
  CHECK(eng.select_evidence(candidates, 0, ctx, true).size() == 6);
}

TEST_CASE("cycle blocking removes active counterparts from the pool") {
  Dataset ds = generate_synthetic(10, 20, 1, 0.8, 0.0, 6);
  RatingsStore store = build_store(ds);
  RecModel model = make_model(store, 3, 2, 2, 4);
  model.hyper.flags.evidence_limit = false;
  Engine eng(model, store);

  DiffGraph g;
  auto ctx = eng.make_context(g, 1);
  const auto& candidates = store.by_user[0];
  int blocked = candidates[0].first;
  ctx.active_items[blocked] = 1;

  auto sel = eng.select_evidence(candidates, 0, ctx, true);
  CHECK(sel.size() == candidates.size() - 1);
  for (const auto& c : sel) CHECK(c.first != blocked);

  model.hyper.flags.cycle_blocking = false;
  CHECK(eng.select_evidence(candidates, 0, ctx, true).size() ==
        candidates.size());
}

TEST_CASE("cache makes a repeated prediction free and clearing undoes it") {
  Dataset ds = generate_synthetic(30, 25, 2, 0.4, 0.0, 12);
  RatingsStore store = build_store(ds);
  RecModel model = make_model(store, 4, 5, 5, 3);
  Engine eng(model, store);

  int nu = -1, ni = -1;
  for (int u = 0; u < store.num_users; ++u)
    if (!model.protos.is_proto_user(u)) { nu = u; break; }
  for (int i = 0; i < store.num_items; ++i)
    if (!model.protos.is_proto_item(i)) { ni = i; break; }

  DiffGraph g;
  auto ctx = eng.make_context(g, 5);
  ctx.inference = true;
  auto first = eng.predict_node(nu, ni, ctx);
  REQUIRE(first.has_value());
  long gen_after_first = ctx.counters.embeddings_generated;
  long hits_after_first = ctx.counters.cache_hits;
  CHECK(gen_after_first >= 2);

  auto second = eng.predict_node(nu, ni, ctx);
  REQUIRE(second.has_value());
  CHECK(ctx.counters.embeddings_generated == gen_after_first);
  CHECK(ctx.counters.cache_hits == hits_after_first + 2);
  CHECK(g.value(*second)(0) == g.value(*first)(0));

  DiffGraph fresh;
  eng.clear_cache(ctx, fresh);
  CHECK(ctx.cache.empty());
  auto third = eng.predict_node(nu, ni, ctx);
  REQUIRE(third.has_value());
  CHECK(ctx.counters.embeddings_generated > gen_after_first);
}

TEST_CASE("caching leaves a single prediction unchanged at depth one") {
  // Restricted to pairs absent from the store: for an observed pair the cached
  // depth-0 user embedding is legitimately reused as depth-1 evidence for the
  // item, which an uncached run cannot reproduce.
  Dataset ds = generate_synthetic(25, 20, 2, 0.5, 0.0, 17);
  RatingsStore store = build_store(ds);
  RecModel model = make_model(store, 4, 4, 4, 1);
  Engine eng(model, store);

  int checked = 0;
  for (int u = 0; u < 25 && checked < 8; ++u) {
    for (int i = 0; i < 20 && checked < 8; ++i) {
      bool observed = false;
      for (auto [item, r] : store.by_user[u]) observed |= item == i;
      if (observed) continue;
      model.hyper.flags.caching = true;
      double with = eng.predict_rating(u, i, 99);
      model.hyper.flags.caching = false;
      double without = eng.predict_rating(u, i, 99);
      CHECK(with == without);  // bit exact
      checked++;
    }
  }
  CHECK(checked == 8);
}

TEST_CASE("a cached failure is depth-dependent only when negative caching is on") {
  Dataset ds = generate_synthetic(20, 20, 2, 0.5, 0.0, 8);
  RatingsStore store = build_store(ds);
  RecModel model = make_model(store, 4, 4, 4, 2);
  Engine eng(model, store);

  int ni = -1;
  for (int i = 0; i < store.num_items; ++i)
    if (!model.protos.is_proto_item(i)) { ni = i; break; }

  SUBCASE("default: a deep failure does not poison a shallow request") {
    DiffGraph g;
    auto ctx = eng.make_context(g, 2);
    CHECK(!eng.item_vector(ni, ctx, model.hyper.max_depth).has_value());
    CHECK(eng.item_vector(ni, ctx, 0).has_value());
  }
  SUBCASE("with negative caching the shallow request hits the stored failure") {
    model.hyper.flags.cache_none = true;
    DiffGraph g;
    auto ctx = eng.make_context(g, 2);
    CHECK(!eng.item_vector(ni, ctx, model.hyper.max_depth).has_value());
    long hits = ctx.counters.cache_hits;
    CHECK(!eng.item_vector(ni, ctx, 0).has_value());
    CHECK(ctx.counters.cache_hits == hits + 1);
  }
}

TEST_CASE("generation is deterministic per evidence seed") {
  Dataset ds = generate_synthetic(50, 40, 2, 0.2, 0.1, 23);
  RatingsStore store = build_store(ds);
  RecModel model = make_model(store, 6, 6, 6, 3);
  model.hyper.evidence_limit = 5;

  std::vector<std::pair<int, int>> pairs;
  std::mt19937_64 rng(1);
  for (int t = 0; t < 25; ++t)
    pairs.push_back({static_cast<int>(rng() % 50), static_cast<int>(rng() % 40)});

  auto a = run_batch(model, store, pairs, 77);
  auto b = run_batch(model, store, pairs, 77);
  CHECK(a.preds == b.preds);
  CHECK(a.counters.embeddings_generated == b.counters.embeddings_generated);
  CHECK(a.counters.cache_hits == b.counters.cache_hits);
  CHECK(a.counters.failed_requests == b.counters.failed_requests);
  CHECK(a.counters.max_evidence_at_depth == b.counters.max_evidence_at_depth);
}

TEST_CASE("every request terminates within the depth and budget envelope") {
  std::mt19937_64 meta(31);
  for (int trial = 0; trial < 12; ++trial) {
    int m = 15 + static_cast<int>(meta() % 30);
    int n = 15 + static_cast<int>(meta() % 30);
    double density = 0.1 + 0.3 * (static_cast<double>(meta() % 100) / 100.0);
    Dataset ds = generate_synthetic(m, n, 2, density, 0.2, meta());
    RatingsStore store = build_store(ds);
    int md = 1 + static_cast<int>(meta() % 4);
    RecModel model = make_model(store, 4, 3, 3, md, meta());
    model.hyper.evidence_limit = 6;
    Engine eng(model, store);

    DiffGraph g;
    auto ctx = eng.make_context(g, meta());
    ctx.inference = true;
    for (int t = 0; t < 20; ++t) {
      int i = static_cast<int>(meta() % m), j = static_cast<int>(meta() % n);
      eng.predict_node(i, j, ctx);  // throws on re-entry under cycle blocking
    }
    CHECK(ctx.counters.max_depth_seen <= md);
    for (std::size_t d = 0; d < ctx.counters.max_evidence_at_depth.size(); ++d) {
      int budget = std::max(model.hyper.evidence_limit >> d, 1);
      CHECK(ctx.counters.max_evidence_at_depth[d] <= budget);
    }
  }
}

TEST_CASE("controls do not hurt: fewer generations with caching, fewer failures with prioritization") {
  long gen_cached = 0, gen_uncached = 0;
  long fail_pp = 0, fail_nopp = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Dataset ds = generate_synthetic(60, 50, 2, 0.15, 0.1, 100 + seed);
    RatingsStore store = build_store(ds);
    RecModel model = make_model(store, 4, 6, 6, 3, seed);
    model.hyper.evidence_limit = 8;

    std::vector<std::pair<int, int>> pairs;
    std::mt19937_64 rng(seed);
    for (int t = 0; t < 30; ++t)
      pairs.push_back({static_cast<int>(rng() % 60), static_cast<int>(rng() % 50)});

    gen_cached += run_batch(model, store, pairs, seed).counters.embeddings_generated;
    model.hyper.flags.caching = false;
    auto un = run_batch(model, store, pairs, seed).counters;
    gen_uncached += un.embeddings_generated;
    CHECK(un.cache_hits == 0);

    model.hyper.flags.caching = true;
    fail_pp += run_batch(model, store, pairs, seed).counters.failed_requests;
    model.hyper.flags.prototype_prioritization = false;
    fail_nopp += run_batch(model, store, pairs, seed).counters.failed_requests;
  }
  CHECK(gen_cached < gen_uncached);
  CHECK(fail_pp <= fail_nopp);
}

TEST_CASE("fallback and clamping behave at the boundaries") {
  Dataset ds = generate_synthetic(12, 10, 2, 0.6, 0.0, 2);
  RatingsStore store = build_store(ds);
  RecModel model = make_model(store, 4, 3, 3, 2);
  Engine eng(model, store);

  CHECK(eng.clamp_to_scale(store.scale_max + 10.0) == store.scale_max);
  CHECK(eng.clamp_to_scale(store.scale_min - 10.0) == store.scale_min);
  double mid = 0.5 * (store.scale_min + store.scale_max);
  CHECK(eng.clamp_to_scale(mid) == mid);

  PrototypeSet wrong = model.protos;
  wrong.user_slot.pop_back();
  RecModel bad = model;
  bad.protos = wrong;
  CHECK_THROWS_AS(Engine(bad, store), std::invalid_argument);
}
