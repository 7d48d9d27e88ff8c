#include "rec/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

#include "rec/csv.hpp"
#include "rec/pmf.hpp"

namespace rec {

namespace {

const char* kMetricsHeader =
    "iteration,train_rmse,valid_rmse,embeddings_generated,cache_hits,"
    "failed_requests,elapsed_seconds";

std::string flags_string(const ControlFlags& f) {
  std::string s;
  auto tag = [&](bool on, const char* name) {
    if (!on) return;
    if (!s.empty()) s += '+';
    s += name;
  };
  tag(f.cycle_blocking, "cb");
  tag(f.caching, "cache");
  tag(f.evidence_limit, "el");
  tag(f.prototype_prioritization, "pp");
  tag(f.telescoping, "tel");
  return s.empty() ? "none" : s;
}

std::vector<std::pair<std::string, std::string>> config_comments(
    const ExperimentConfig& cfg, const Dataset& ds) {
  const TrainConfig& t = cfg.train;
  auto num = [](double v) { return CsvWriter::format_double(v); };
  std::vector<std::pair<std::string, std::string>> c;
  switch (cfg.format) {
    case DataFormat::kMl100k:
      c.emplace_back("dataset", cfg.dataset_path);
      break;
    case DataFormat::kMlDelim:
      c.emplace_back("dataset", cfg.dataset_path);
      break;
    case DataFormat::kSynthetic:
      c.emplace_back("dataset", "synthetic m=" + std::to_string(cfg.synth.m) +
                                    " n=" + std::to_string(cfg.synth.n) +
                                    " rank=" + std::to_string(cfg.synth.rank) +
                                    " density=" + num(cfg.synth.density) +
                                    " noise_sd=" + num(cfg.synth.noise_sd) +
                                    " seed=" + std::to_string(cfg.synth.seed));
      break;
  }
  c.emplace_back("num_users", std::to_string(ds.num_users));
  c.emplace_back("num_items", std::to_string(ds.num_items));
  c.emplace_back("num_ratings", std::to_string(ds.records.size()));
  c.emplace_back("k", std::to_string(t.k));
  c.emplace_back("proto_users", std::to_string(t.num_proto_users));
  c.emplace_back("proto_items", std::to_string(t.num_proto_items));
  c.emplace_back("evidence_limit", std::to_string(t.evidence_limit));
  c.emplace_back("max_depth", std::to_string(t.max_depth));
  c.emplace_back("controls", flags_string(t.flags));
  c.emplace_back("batch_size", std::to_string(t.batch_size));
  c.emplace_back("lr", num(t.lr));
  c.emplace_back("lambda", num(t.lambda));
  c.emplace_back("iterations", std::to_string(t.iterations));
  c.emplace_back("pretrain_iterations", std::to_string(t.pretrain_iterations));
  c.emplace_back("init_seed", std::to_string(t.init_seed));
  c.emplace_back("sampling_seed", std::to_string(t.sampling_seed));
  c.emplace_back("split_seed", std::to_string(t.split_seed));
  c.emplace_back("train_fraction", num(cfg.train_fraction));
  return c;
}

RecModel make_model(const RatingsStore& store, const TrainConfig& cfg) {
  RecModel model;
  model.k = cfg.k;
  model.hyper.max_depth = cfg.max_depth;
  model.hyper.evidence_limit = cfg.evidence_limit;
  model.hyper.flags = cfg.flags;
  model.protos = select_prototypes(store, cfg.num_proto_users, cfg.num_proto_items);
  model.mean_rating = store.mean_rating;
  model.scale_min = store.scale_min;
  model.scale_max = store.scale_max;
  model.init_params(cfg.init_seed);
  return model;
}

PmfModel make_pmf(const RatingsStore& store, const TrainConfig& cfg) {
  PmfModel model;
  model.init(store.num_users, store.num_items, cfg.k, cfg.init_seed);
  model.mean_rating = store.mean_rating;
  model.scale_min = store.scale_min;
  model.scale_max = store.scale_max;
  return model;
}

}  // namespace

Dataset load_dataset(const ExperimentConfig& cfg) {
  switch (cfg.format) {
    case DataFormat::kMl100k:
      return parse_tab_format(cfg.dataset_path);
    case DataFormat::kMlDelim:
      return parse_double_colon_format(cfg.dataset_path);
    case DataFormat::kSynthetic:
      return generate_synthetic(cfg.synth.m, cfg.synth.n, cfg.synth.rank,
                                cfg.synth.density, cfg.synth.noise_sd,
                                cfg.synth.seed);
  }
  throw std::logic_error("unknown data format");
}

std::string resolve_out_dir(const ExperimentConfig& cfg) {
  const char* env = std::getenv("REC_OUT_DIR");
  std::string dir = env && *env ? env : cfg.out_dir;
  std::filesystem::create_directories(dir);
  return dir;
}

int cmd_train(const ExperimentConfig& cfg) {
  Dataset full = load_dataset(cfg);
  std::string out = resolve_out_dir(cfg);
  Split sp = split(full, {cfg.train_fraction, cfg.train.split_seed});
  write_split_indices(sp.valid_indices, out + "/valid_indices.txt");

  RatingsStore store = build_store(sp.train);
  RecModel model = make_model(store, cfg.train);
  std::cout << "training on " << sp.train.records.size() << " ratings, "
            << model.param_count() << " parameters\n";
  pretrain_prototype_block(model, store, cfg.train);

  TrainConfig tc = cfg.train;
  if (tc.checkpoint_every > 0 && tc.checkpoint_path.empty())
    tc.checkpoint_path = out + "/model.ckpt";

  CsvWriter csv(out + "/train_metrics.csv", config_comments(cfg, full),
                kMetricsHeader);
  train_rec(model, store, sp.train, &sp.valid, tc, [&](const MetricsRow& row) {
    csv.metrics_row(row);
    if (!std::isnan(row.valid_rmse))
      std::cout << "iter " << row.iteration << " train_rmse "
                << CsvWriter::format_double(row.train_rmse) << " valid_rmse "
                << CsvWriter::format_double(row.valid_rmse) << "\n";
  });

  save_checkpoint(model, nullptr, out + "/model.ckpt");
  double rmse = evaluate_rmse(model, store, sp.valid,
                              mix_seed(tc.sampling_seed, 0xF1A1), tc.batch_size);
  std::cout << "final valid_rmse " << CsvWriter::format_double(rmse) << "\n";
  return 0;
}

int cmd_compare_pmf(const ExperimentConfig& cfg) {
  Dataset full = load_dataset(cfg);
  std::string out = resolve_out_dir(cfg);
  Split sp = split(full, {cfg.train_fraction, cfg.train.split_seed});
  RatingsStore store = build_store(sp.train);
  auto comments = config_comments(cfg, full);

  RecModel model = make_model(store, cfg.train);
  pretrain_prototype_block(model, store, cfg.train);
  CsvWriter rec_csv(out + "/compare_rec.csv", comments, kMetricsHeader);
  train_rec(model, store, sp.train, &sp.valid, cfg.train,
            [&](const MetricsRow& row) { rec_csv.metrics_row(row); });
  double rec_rmse =
      evaluate_rmse(model, store, sp.valid,
                    mix_seed(cfg.train.sampling_seed, 0xF1A1),
                    cfg.train.batch_size);

  PmfModel pmf = make_pmf(store, cfg.train);
  CsvWriter pmf_csv(out + "/compare_pmf.csv", comments, kMetricsHeader);
  train_pmf(pmf, store, sp.train, &sp.valid, cfg.train,
            [&](const MetricsRow& row) { pmf_csv.metrics_row(row); });
  double pmf_rmse = pmf_evaluate(pmf, sp.valid);

  std::cout << "final valid_rmse rec " << CsvWriter::format_double(rec_rmse)
            << " pmf " << CsvWriter::format_double(pmf_rmse) << "\n";
  return 0;
}

OnlineResult run_online(const Dataset& full, const ExperimentConfig& cfg) {
  const TrainConfig& tc = cfg.train;
  RatingsStore full_store = build_store(full);
  PrototypeSet protos =
      select_prototypes(full_store, tc.num_proto_users, tc.num_proto_items);

  // Visibility order per side: prototypes first (the initial block must
  // contain them), the rest shuffled.
  std::mt19937_64 rng(mix_seed(tc.split_seed, 0x0417));
  auto make_order = [&](int n, const std::vector<int>& slot) {
    std::vector<int> order, rest;
    for (int id = 0; id < n; ++id)
      (slot[id] >= 0 ? order : rest).push_back(id);
    std::shuffle(rest.begin(), rest.end(), rng);
    order.insert(order.end(), rest.begin(), rest.end());
    return order;
  };
  std::vector<int> user_order = make_order(full.num_users, protos.user_slot);
  std::vector<int> item_order = make_order(full.num_items, protos.item_slot);

  auto count_at = [&](double frac, int n, std::size_t proto_count) {
    auto c = static_cast<std::size_t>(std::llround(frac * n));
    return std::min(static_cast<std::size_t>(n), std::max(c, proto_count));
  };
  std::size_t nu0 = count_at(cfg.online_initial_fraction, full.num_users,
                             protos.proto_users.size());
  std::size_t nv0 = count_at(cfg.online_initial_fraction, full.num_items,
                             protos.proto_items.size());

  std::vector<char> user_vis(full.num_users, 0), item_vis(full.num_items, 0);
  for (std::size_t i = 0; i < nu0; ++i) user_vis[user_order[i]] = 1;
  for (std::size_t j = 0; j < nv0; ++j) item_vis[item_order[j]] = 1;

  Dataset evidence;  // everything the model may consult at prediction time
  evidence.num_users = full.num_users;
  evidence.num_items = full.num_items;
  evidence.scale_min = full.scale_min;
  evidence.scale_max = full.scale_max;
  evidence.user_orig_ids = full.user_orig_ids;
  evidence.item_orig_ids = full.item_orig_ids;

  std::vector<char> assigned(full.records.size(), 0);
  for (std::size_t r = 0; r < full.records.size(); ++r) {
    const auto& rec = full.records[r];
    if (user_vis[rec.user_id] && item_vis[rec.item_id]) {
      evidence.records.push_back(rec);
      assigned[r] = 1;
    }
  }
  evidence.recompute_mean();
  std::size_t initial_train_count = evidence.records.size();

  RatingsStore store = build_store(evidence);
  RecModel model;
  model.k = tc.k;
  model.hyper.max_depth = tc.max_depth;
  model.hyper.evidence_limit = tc.evidence_limit;
  model.hyper.flags = tc.flags;
  model.protos = protos;
  model.mean_rating = store.mean_rating;
  model.scale_min = store.scale_min;
  model.scale_max = store.scale_max;
  model.init_params(tc.init_seed);
  pretrain_prototype_block(model, store, tc);
  train_rec(model, store, evidence, nullptr, tc, nullptr);
  // No gradient updates past this point: growth only adds evidence.

  OnlineResult out;
  out.param_count = model.param_count();
  out.percent_seen_in_training =
      100.0 * static_cast<double>(initial_train_count) / full.records.size();
  out.new_rows_and_cols_in_test =
      (full.num_users - nu0) + (full.num_items - nv0);

  Dataset test = evidence;  // same dims/scale, different records
  test.records.clear();

  std::bernoulli_distribution to_evidence(0.8);
  double frac = cfg.online_initial_fraction;
  int stage = 0;
  while (frac < 1.0 - 1e-9) {
    frac = std::min(1.0, frac + cfg.online_increment);
    ++stage;
    std::size_t nu = count_at(frac, full.num_users, protos.proto_users.size());
    std::size_t nv = count_at(frac, full.num_items, protos.proto_items.size());
    for (std::size_t i = 0; i < nu; ++i) user_vis[user_order[i]] = 1;
    for (std::size_t j = 0; j < nv; ++j) item_vis[item_order[j]] = 1;

    // Newly visible ratings join either the evidence pool or the test set.
    for (std::size_t r = 0; r < full.records.size(); ++r) {
      if (assigned[r]) continue;
      const auto& rec = full.records[r];
      if (!user_vis[rec.user_id] || !item_vis[rec.item_id]) continue;
      assigned[r] = 1;
      (to_evidence(rng) ? evidence.records : test.records).push_back(rec);
    }
    evidence.recompute_mean();
    test.recompute_mean();
    store = build_store(evidence);

    OnlineStage row;
    row.fraction = frac;
    row.cumulative_test_size = test.records.size();
    row.rmse = test.records.empty()
                   ? 0.0
                   : evaluate_rmse(model, store, test,
                                   mix_seed(tc.sampling_seed, 0x0511 + stage),
                                   tc.batch_size);
    out.stages.push_back(row);
  }
  out.final_novel_rmse = out.stages.empty() ? 0.0 : out.stages.back().rmse;
  return out;
}

int cmd_online(const ExperimentConfig& cfg) {
  Dataset full = load_dataset(cfg);
  std::string out_dir = resolve_out_dir(cfg);
  OnlineResult res = run_online(full, cfg);

  auto comments = config_comments(cfg, full);
  comments.emplace_back("online_initial_fraction",
                        CsvWriter::format_double(cfg.online_initial_fraction));
  comments.emplace_back("online_increment",
                        CsvWriter::format_double(cfg.online_increment));
  CsvWriter csv(out_dir + "/online_stages.csv", comments,
                "fraction,cumulative_test_size,rmse");
  for (const auto& s : res.stages) {
    std::ostringstream row;
    row << CsvWriter::format_double(s.fraction) << "," << s.cumulative_test_size
        << "," << CsvWriter::format_double(s.rmse);
    csv.raw_row(row.str());
  }
  csv.raw_row("# final_novel_rmse=" + CsvWriter::format_double(res.final_novel_rmse));
  csv.raw_row("# percent_seen_in_training=" +
              CsvWriter::format_double(res.percent_seen_in_training));
  csv.raw_row("# new_rows_and_cols_in_test=" +
              std::to_string(res.new_rows_and_cols_in_test));
  csv.raw_row("# param_count=" + std::to_string(res.param_count));

  std::cout << "final novel rmse " << CsvWriter::format_double(res.final_novel_rmse)
            << " (seen in training " << CsvWriter::format_double(res.percent_seen_in_training)
            << "%, " << res.new_rows_and_cols_in_test
            << " new rows+cols, " << res.param_count << " parameters)\n";
  return 0;
}

std::vector<ColdStartCell> run_cold_start(const Dataset& full,
                                          const ExperimentConfig& cfg) {
  const TrainConfig& tc = cfg.train;
  Split sp = split(full, {cfg.train_fraction, tc.split_seed});

  auto train_and_score = [&](const Dataset& train_ds) {
    RatingsStore store = build_store(train_ds);
    RecModel model = make_model(store, tc);
    pretrain_prototype_block(model, store, tc);
    train_rec(model, store, train_ds, nullptr, tc, nullptr);
    return evaluate_rmse(model, store, sp.valid,
                         mix_seed(tc.sampling_seed, 0xF1A1), tc.batch_size);
  };

  std::vector<ColdStartCell> cells;
  double baseline_rmse = -1.0;  // nc = 0 leaves the train set untouched
  for (int nc : cfg.coldstart_nc) {
    for (int nr : cfg.coldstart_nr) {
      ColdStartCell cell{nc, nr, 0.0};
      if (nc == 0) {
        if (baseline_rmse < 0.0) baseline_rmse = train_and_score(sp.train);
        cell.rmse = baseline_rmse;
      } else {
        std::mt19937_64 rng(
            mix_seed(cfg.coldstart_seed, static_cast<std::uint64_t>(nc) * 31 + nr));
        // Cold users: nc random users, each stripped down to nr train ratings.
        std::vector<int> users(sp.train.num_users);
        std::iota(users.begin(), users.end(), 0);
        std::shuffle(users.begin(), users.end(), rng);
        std::vector<char> cold(sp.train.num_users, 0);
        for (int i = 0; i < nc && i < sp.train.num_users; ++i) cold[users[i]] = 1;

        std::vector<std::vector<std::size_t>> per_user(sp.train.num_users);
        for (std::size_t r = 0; r < sp.train.records.size(); ++r)
          if (cold[sp.train.records[r].user_id])
            per_user[sp.train.records[r].user_id].push_back(r);

        std::vector<char> drop(sp.train.records.size(), 0);
        for (int u = 0; u < sp.train.num_users; ++u) {
          if (!cold[u]) continue;
          auto& idx = per_user[u];
          std::shuffle(idx.begin(), idx.end(), rng);
          for (std::size_t i = nr; i < idx.size(); ++i) drop[idx[i]] = 1;
        }

        Dataset reduced = sp.train;
        reduced.records.clear();
        for (std::size_t r = 0; r < sp.train.records.size(); ++r)
          if (!drop[r]) reduced.records.push_back(sp.train.records[r]);
        reduced.recompute_mean();
        cell.rmse = train_and_score(reduced);
      }
      cells.push_back(cell);
      std::cout << "cold start nc=" << nc << " nr=" << nr << " rmse "
                << CsvWriter::format_double(cell.rmse) << "\n";
    }
  }
  return cells;
}

int cmd_cold_start(const ExperimentConfig& cfg) {
  Dataset full = load_dataset(cfg);
  std::string out_dir = resolve_out_dir(cfg);
  auto cells = run_cold_start(full, cfg);

  auto comments = config_comments(cfg, full);
  comments.emplace_back("coldstart_seed", std::to_string(cfg.coldstart_seed));
  CsvWriter csv(out_dir + "/cold_start.csv", comments, "nc,nr,rmse");
  for (const auto& c : cells) {
    std::ostringstream row;
    row << c.nc << "," << c.nr << "," << CsvWriter::format_double(c.rmse);
    csv.raw_row(row.str());
  }
  return 0;
}

std::vector<AblationRow> run_ablation(const Dataset& train,
                                      const ExperimentConfig& cfg) {
  const TrainConfig& tc = cfg.train;
  RatingsStore store = build_store(train);
  RecModel model = make_model(store, tc);
  model.hyper.max_depth = cfg.ablation_max_depth;

  // Identical prediction batches across flag combinations.
  std::vector<std::vector<RatingRecord>> batches;
  for (int s = 0; s < cfg.ablation_num_seeds; ++s) {
    std::mt19937_64 rng(mix_seed(tc.sampling_seed, 0xAB1A + s));
    batches.push_back(sample_batch(train.records, cfg.ablation_batch, rng));
  }

  struct Combo {
    const char* name;
    ControlFlags flags;
  };
  ControlFlags off{};
  off.cycle_blocking = off.caching = off.cache_none = false;
  off.evidence_limit = off.prototype_prioritization = off.telescoping = false;
  std::vector<Combo> combos;
  ControlFlags f = off;
  combos.push_back({"md", f});
  f.cycle_blocking = true;
  combos.push_back({"md+cb", f});
  f.evidence_limit = true;
  combos.push_back({"md+cb+el", f});
  f.prototype_prioritization = true;
  combos.push_back({"md+cb+el+pp", f});
  f.telescoping = true;
  combos.push_back({"md+cb+el+pp+tel", f});

  std::vector<AblationRow> rows;
  for (const auto& combo : combos) {
    for (bool caching : {false, true}) {
      model.hyper.flags = combo.flags;
      model.hyper.flags.caching = caching;
      Engine engine(model, store);

      AblationRow row;
      row.combo = combo.name;
      row.caching = caching;
      row.max_evidence_at_depth.assign(model.hyper.max_depth + 1, 0);
      for (int s = 0; s < cfg.ablation_num_seeds; ++s) {
        DiffGraph g;
        auto ctx = engine.make_context(g, mix_seed(tc.sampling_seed, 0xE71 + s));
        ctx.inference = true;
        for (const auto& rec : batches[s])
          engine.predict_node(rec.user_id, rec.item_id, ctx);
        row.mean_embeddings_generated += ctx.counters.embeddings_generated;
        row.mean_failed_requests += ctx.counters.failed_requests;
        row.mean_cache_hits += ctx.counters.cache_hits;
        for (std::size_t d = 0; d < row.max_evidence_at_depth.size(); ++d)
          row.max_evidence_at_depth[d] =
              std::max(row.max_evidence_at_depth[d],
                       ctx.counters.max_evidence_at_depth[d]);
      }
      row.mean_embeddings_generated /= cfg.ablation_num_seeds;
      row.mean_failed_requests /= cfg.ablation_num_seeds;
      row.mean_cache_hits /= cfg.ablation_num_seeds;
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

int cmd_ablation(const ExperimentConfig& cfg) {
  Dataset full = load_dataset(cfg);
  std::string out_dir = resolve_out_dir(cfg);
  auto rows = run_ablation(full, cfg);

  auto comments = config_comments(cfg, full);
  comments.emplace_back("ablation_batch", std::to_string(cfg.ablation_batch));
  comments.emplace_back("ablation_max_depth",
                        std::to_string(cfg.ablation_max_depth));
  comments.emplace_back("ablation_num_seeds",
                        std::to_string(cfg.ablation_num_seeds));
  CsvWriter csv(out_dir + "/ablation.csv", comments,
                "combo,caching,mean_embeddings_generated,mean_failed_requests,"
                "mean_cache_hits,max_evidence_at_depth");
  for (const auto& r : rows) {
    std::ostringstream row;
    row << r.combo << "," << (r.caching ? 1 : 0) << ","
        << CsvWriter::format_double(r.mean_embeddings_generated) << ","
        << CsvWriter::format_double(r.mean_failed_requests) << ","
        << CsvWriter::format_double(r.mean_cache_hits) << ",";
    for (std::size_t d = 0; d < r.max_evidence_at_depth.size(); ++d) {
      if (d) row << ';';
      row << r.max_evidence_at_depth[d];
    }
    csv.raw_row(row.str());
    std::cout << r.combo << (r.caching ? " +cache" : "") << ": "
              << CsvWriter::format_double(r.mean_embeddings_generated)
              << " embeddings, "
              << CsvWriter::format_double(r.mean_failed_requests)
              << " failures\n";
  }
  return 0;
}

}  // namespace rec
