#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace rec {

struct RatingRecord {
  int user_id = 0;  // dense, 0-based
  int item_id = 0;  // dense, 0-based
  double rating = 0.0;
  long timestamp = 0;  // parsed but unused downstream
};

struct Dataset {
  std::vector<RatingRecord> records;
  int num_users = 0;
  int num_items = 0;
  double scale_min = 1.0;
  double scale_max = 5.0;
  double mean_rating = 0.0;
  // dense index -> original file id, kept for reporting / round-trips
  std::vector<long> user_orig_ids;
  std::vector<long> item_orig_ids;

  void recompute_mean();
};

struct SplitSpec {
  double train_fraction = 0.8;
  std::uint64_t seed = 0;
};

struct Split {
  Dataset train;
  Dataset valid;
  std::vector<std::size_t> valid_indices;  // indices into the parent's records
};

// MovieLens-100K on-disk format: user<TAB>item<TAB>rating<TAB>timestamp,
// 1-based ids remapped to dense 0-based indices in order of first appearance.
Dataset parse_tab_format(const std::string& path);

// MovieLens-1M/10M format: user::item::rating::timestamp, real ratings allowed.
Dataset parse_double_colon_format(const std::string& path);

void write_tab_format(const Dataset& ds, const std::string& path);
void write_double_colon_format(const Dataset& ds, const std::string& path);

// Desk-scale synthetic data: R = clip(A B^T + noise) with A (m x k), B (n x k)
// i.i.d. unit normal, each entry observed independently with the given density.
// Resamples the observation mask until every user and item has >= 1 rating.
Dataset generate_synthetic(int m, int n, int true_rank, double density,
                           double noise_sd, std::uint64_t seed);

Split split(const Dataset& ds, const SplitSpec& spec);

// Sidecar persistence of the validation-record indices, one per line.
void write_split_indices(const std::vector<std::size_t>& valid_indices,
                         const std::string& path);
std::vector<std::size_t> read_split_indices(const std::string& path);
Split split_from_indices(const Dataset& ds,
                         const std::vector<std::size_t>& valid_indices);

}  // namespace rec
