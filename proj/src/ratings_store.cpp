#include "rec/ratings_store.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace rec {

RatingsStore build_store(const Dataset& train) {
  RatingsStore s;
  s.num_users = train.num_users;
  s.num_items = train.num_items;
  s.mean_rating = train.mean_rating;
  s.scale_min = train.scale_min;
  s.scale_max = train.scale_max;
  s.total = train.records.size();
  s.by_user.resize(train.num_users);
  s.by_item.resize(train.num_items);
  for (const auto& r : train.records) {
    s.by_user[r.user_id].emplace_back(r.item_id, r.rating);
    s.by_item[r.item_id].emplace_back(r.user_id, r.rating);
  }
  for (auto& row : s.by_user) std::sort(row.begin(), row.end());
  for (auto& col : s.by_item) std::sort(col.begin(), col.end());
  return s;
}

namespace {

std::vector<int> top_by_count(
    const std::vector<std::vector<std::pair<int, double>>>& lists, int count) {
  std::vector<int> ids(lists.size());
  std::iota(ids.begin(), ids.end(), 0);
  std::stable_sort(ids.begin(), ids.end(), [&](int a, int b) {
    if (lists[a].size() != lists[b].size())
      return lists[a].size() > lists[b].size();
    return a < b;
  });
  ids.resize(count);
  std::sort(ids.begin(), ids.end());
  return ids;
}

}  // namespace

PrototypeSet select_prototypes(const RatingsStore& store, int num_users,
                               int num_items) {
  if (num_users > store.num_users || num_items > store.num_items) {
    throw std::invalid_argument("prototype count exceeds dimension");
  }
  PrototypeSet p;
  p.proto_users = top_by_count(store.by_user, num_users);
  p.proto_items = top_by_count(store.by_item, num_items);
  p.user_slot.assign(store.num_users, -1);
  p.item_slot.assign(store.num_items, -1);
  for (std::size_t s = 0; s < p.proto_users.size(); ++s)
    p.user_slot[p.proto_users[s]] = static_cast<int>(s);
  for (std::size_t s = 0; s < p.proto_items.size(); ++s)
    p.item_slot[p.proto_items[s]] = static_cast<int>(s);
  return p;
}

PrototypeBlock prototype_block(const RatingsStore& store,
                               const PrototypeSet& protos) {
  PrototypeBlock b;
  b.local_to_global_user = protos.proto_users;
  b.local_to_global_item = protos.proto_items;
  b.block.num_users = static_cast<int>(protos.proto_users.size());
  b.block.num_items = static_cast<int>(protos.proto_items.size());
  b.block.scale_min = store.scale_min;
  b.block.scale_max = store.scale_max;
  for (int u : protos.proto_users) {
    for (auto [item, rating] : store.by_user[u]) {
      if (!protos.is_proto_item(item)) continue;
      b.block.records.push_back(
          {protos.user_slot[u], protos.item_slot[item], rating, 0});
    }
  }
  b.block.recompute_mean();
  return b;
}

}  // namespace rec
