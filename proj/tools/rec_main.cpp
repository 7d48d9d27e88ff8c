#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "rec/experiments.hpp"

namespace {

void add_common_options(CLI::App* sub, rec::ExperimentConfig& cfg,
                        std::string& format) {
  sub->add_option("--format", format, "ml100k | mldelim | synthetic")
      ->check(CLI::IsMember({"ml100k", "mldelim", "synthetic"}));
  sub->add_option("--data", cfg.dataset_path, "rating file (ml100k / mldelim)");
  sub->add_option("--out", cfg.out_dir, "output directory");
  sub->add_option("--train-fraction", cfg.train_fraction);

  sub->add_option("--synth-users", cfg.synth.m);
  sub->add_option("--synth-items", cfg.synth.n);
  sub->add_option("--synth-rank", cfg.synth.rank);
  sub->add_option("--synth-density", cfg.synth.density);
  sub->add_option("--synth-noise", cfg.synth.noise_sd);
  sub->add_option("--synth-seed", cfg.synth.seed);

  rec::TrainConfig& t = cfg.train;
  sub->add_option("--k", t.k, "latent dimension");
  sub->add_option("--proto-users", t.num_proto_users);
  sub->add_option("--proto-items", t.num_proto_items);
  sub->add_option("--evidence-limit", t.evidence_limit);
  sub->add_option("--max-depth", t.max_depth);
  sub->add_option("--batch-size", t.batch_size);
  sub->add_option("--lr", t.lr);
  sub->add_option("--lambda", t.lambda);
  sub->add_option("--iterations", t.iterations);
  sub->add_option("--pretrain-iterations", t.pretrain_iterations);
  sub->add_option("--init-seed", t.init_seed);
  sub->add_option("--sampling-seed", t.sampling_seed);
  sub->add_option("--split-seed", t.split_seed);
  sub->add_option("--eval-every", t.eval_every);
  sub->add_option("--checkpoint-every", t.checkpoint_every);
  sub->add_option("--checkpoint-path", t.checkpoint_path);

  rec::ControlFlags& f = t.flags;
  sub->add_flag("--no-cycle-blocking{false}", f.cycle_blocking);
  sub->add_flag("--no-caching{false}", f.caching);
  sub->add_flag("--cache-none", f.cache_none,
                "also cache failed generations (depth-sensitive, see docs)");
  sub->add_flag("--no-evidence-limit{false}", f.evidence_limit);
  sub->add_flag("--no-prototype-prioritization{false}",
                f.prototype_prioritization);
  sub->add_flag("--no-telescoping{false}", f.telescoping);
}

rec::DataFormat parse_format(const std::string& s) {
  if (s == "ml100k") return rec::DataFormat::kMl100k;
  if (s == "mldelim") return rec::DataFormat::kMlDelim;
  return rec::DataFormat::kSynthetic;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"recursive-evidence matrix completion"};
  app.require_subcommand(1);

  rec::ExperimentConfig cfg;
  std::string format = "synthetic";

  auto* train = app.add_subcommand("train", "train one model, log metrics");
  add_common_options(train, cfg, format);

  auto* compare = app.add_subcommand("compare-pmf",
                                     "race against the dense factor baseline");
  add_common_options(compare, cfg, format);

  auto* online = app.add_subcommand("online",
                                    "grow the ratings pool without retraining");
  add_common_options(online, cfg, format);
  online->add_option("--initial-fraction", cfg.online_initial_fraction);
  online->add_option("--increment", cfg.online_increment);

  auto* cold = app.add_subcommand("cold-start",
                                  "sweep users stripped to a few ratings");
  add_common_options(cold, cfg, format);
  cold->add_option("--nc", cfg.coldstart_nc, "cold user counts");
  cold->add_option("--nr", cfg.coldstart_nr, "ratings kept per cold user");
  cold->add_option("--cold-seed", cfg.coldstart_seed);

  auto* ablation = app.add_subcommand("ablation",
                                      "complexity-control counter sweep");
  add_common_options(ablation, cfg, format);
  ablation->add_option("--ablation-batch", cfg.ablation_batch);
  ablation->add_option("--ablation-max-depth", cfg.ablation_max_depth);
  ablation->add_option("--ablation-seeds", cfg.ablation_num_seeds);

  CLI11_PARSE(app, argc, argv);
  cfg.format = parse_format(format);
  if (cfg.format != rec::DataFormat::kSynthetic && cfg.dataset_path.empty()) {
    std::cerr << "--data is required for format " << format << "\n";
    return 1;
  }

  try {
    if (*train) return rec::cmd_train(cfg);
    if (*compare) return rec::cmd_compare_pmf(cfg);
    if (*online) return rec::cmd_online(cfg);
    if (*cold) return rec::cmd_cold_start(cfg);
    if (*ablation) return rec::cmd_ablation(cfg);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
