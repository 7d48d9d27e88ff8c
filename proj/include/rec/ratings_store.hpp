#pragma once

#include <utility>
#include <vector>

#include "rec/dataset.hpp"

namespace rec {

// Dual-indexed sparse view of a rating set: for every user the ordered list
// of (item, rating) pairs, and for every item the ordered list of
// (user, rating) pairs. Immutable after build.
struct RatingsStore {
  int num_users = 0;
  int num_items = 0;
  double mean_rating = 0.0;
  double scale_min = 1.0;
  double scale_max = 5.0;
  std::size_t total = 0;
  std::vector<std::vector<std::pair<int, double>>> by_user;  // sorted by item
  std::vector<std::vector<std::pair<int, double>>> by_item;  // sorted by user
};

struct PrototypeSet {
  std::vector<int> proto_users;  // ascending ids
  std::vector<int> proto_items;  // ascending ids
  std::vector<int> user_slot;    // id -> row in the prototype table, or -1
  std::vector<int> item_slot;

  bool is_proto_user(int i) const { return user_slot[i] >= 0; }
  bool is_proto_item(int j) const { return item_slot[j] >= 0; }
};

struct PrototypeBlock {
  Dataset block;  // re-indexed to prototype-local coordinates
  std::vector<int> local_to_global_user;
  std::vector<int> local_to_global_item;
};

RatingsStore build_store(const Dataset& train);

// The num_users / num_items heaviest raters; ties broken by smaller id.
PrototypeSet select_prototypes(const RatingsStore& store, int num_users,
                               int num_items);

// Ratings with both endpoints prototypical, in prototype-local coordinates.
// An empty block is returned as-is; pretraining treats it as a no-op.
PrototypeBlock prototype_block(const RatingsStore& store,
                               const PrototypeSet& protos);

}  // namespace rec
