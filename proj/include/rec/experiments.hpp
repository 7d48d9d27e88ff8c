#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rec/dataset.hpp"
#include "rec/training.hpp"

namespace rec {

struct SyntheticSpec {
  int m = 100;
  int n = 100;
  int rank = 2;
  double density = 0.3;
  double noise_sd = 0.0;
  std::uint64_t seed = 7;
};

enum class DataFormat { kMl100k, kMlDelim, kSynthetic };

struct ExperimentConfig {
  DataFormat format = DataFormat::kSynthetic;
  std::string dataset_path;
  SyntheticSpec synth;
  TrainConfig train;
  double train_fraction = 0.8;

  // Online protocol.
  double online_initial_fraction = 0.2;
  double online_increment = 0.2;

  // Cold-start protocol.
  std::vector<int> coldstart_nc = {0, 50, 100, 150};
  std::vector<int> coldstart_nr = {1, 5, 10};
  std::uint64_t coldstart_seed = 11;

  // Complexity-control ablation workload.
  int ablation_batch = 10;
  int ablation_max_depth = 2;
  int ablation_num_seeds = 20;

  std::string out_dir = "out";  // REC_OUT_DIR overrides
};

Dataset load_dataset(const ExperimentConfig& cfg);
std::string resolve_out_dir(const ExperimentConfig& cfg);

// One ablation measurement: counters for a fixed prediction mini-batch under
// one flag combination, averaged over evidence-sampling seeds.
struct AblationRow {
  std::string combo;
  bool caching = false;
  double mean_embeddings_generated = 0.0;
  double mean_failed_requests = 0.0;
  double mean_cache_hits = 0.0;
  std::vector<int> max_evidence_at_depth;
};

std::vector<AblationRow> run_ablation(const Dataset& train,
                                      const ExperimentConfig& cfg);

// Result of the online protocol, one entry per growth stage.
struct OnlineStage {
  double fraction = 0.0;
  std::size_t cumulative_test_size = 0;
  double rmse = 0.0;
};

struct OnlineResult {
  std::vector<OnlineStage> stages;
  double final_novel_rmse = 0.0;
  double percent_seen_in_training = 0.0;
  std::size_t new_rows_and_cols_in_test = 0;
  std::size_t param_count = 0;
};

OnlineResult run_online(const Dataset& full, const ExperimentConfig& cfg);

struct ColdStartCell {
  int nc = 0;
  int nr = 0;
  double rmse = 0.0;
};

std::vector<ColdStartCell> run_cold_start(const Dataset& full,
                                          const ExperimentConfig& cfg);

int cmd_train(const ExperimentConfig& cfg);
int cmd_compare_pmf(const ExperimentConfig& cfg);
int cmd_online(const ExperimentConfig& cfg);
int cmd_cold_start(const ExperimentConfig& cfg);
int cmd_ablation(const ExperimentConfig& cfg);

}  // namespace rec
