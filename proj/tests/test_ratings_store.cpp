#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <random>
#include <set>

#include "rec/ratings_store.hpp"

using namespace rec;

namespace {

Dataset tiny() {
  Dataset ds;
  ds.num_users = 4;
  ds.num_items = 3;
  // user 0 rates everything, user 1 rates two, users 2 and 3 one each
  ds.records = {
      {0, 0, 5.0, 0}, {0, 1, 3.0, 0}, {0, 2, 1.0, 0},
      {1, 0, 4.0, 0}, {1, 2, 2.0, 0},
      {2, 1, 2.5, 0},
      {3, 0, 3.5, 0},
  };
  ds.recompute_mean();
  return ds;
}

}  // namespace

TEST_CASE("store indexes both directions consistently") {
  Dataset ds = tiny();
  RatingsStore s = build_store(ds);

  CHECK(s.num_users == 4);
  CHECK(s.num_items == 3);
  CHECK(s.total == 7);
  CHECK(s.mean_rating == doctest::Approx(ds.mean_rating));

  REQUIRE(s.by_user[0].size() == 3);
  CHECK(s.by_user[0][1] == std::pair<int, double>{1, 3.0});
  REQUIRE(s.by_item[0].size() == 3);
  CHECK(s.by_item[0][2] == std::pair<int, double>{3, 3.5});

  // every (u, i, r) appears exactly once in each index
  std::multiset<std::tuple<int, int, double>> from_users, from_items;
  for (int u = 0; u < s.num_users; ++u)
    for (auto [i, r] : s.by_user[u]) from_users.insert({u, i, r});
  for (int i = 0; i < s.num_items; ++i)
    for (auto [u, r] : s.by_item[i]) from_items.insert({u, i, r});
  CHECK(from_users == from_items);
  CHECK(from_users.size() == ds.records.size());

  for (const auto& row : s.by_user)
    CHECK(std::is_sorted(row.begin(), row.end()));
  for (const auto& col : s.by_item)
    CHECK(std::is_sorted(col.begin(), col.end()));
}

TEST_CASE("store is invariant to record order") {
  Dataset ds = generate_synthetic(20, 15, 2, 0.4, 0.1, 21);
  RatingsStore a = build_store(ds);

  std::mt19937_64 rng(8);
  std::shuffle(ds.records.begin(), ds.records.end(), rng);
  RatingsStore b = build_store(ds);

  CHECK(a.by_user == b.by_user);
  CHECK(a.by_item == b.by_item);
}

TEST_CASE("prototype selection keeps the heaviest raters") {
  Dataset ds = tiny();
  RatingsStore s = build_store(ds);
  PrototypeSet p = select_prototypes(s, 2, 2);

  CHECK(p.proto_users == std::vector<int>{0, 1});
  // item counts: 0 -> 3, 1 -> 2, 2 -> 2; tie between items 1 and 2 goes to 1
  CHECK(p.proto_items == std::vector<int>{0, 1});

  CHECK(p.user_slot[0] == 0);
  CHECK(p.user_slot[1] == 1);
  CHECK(p.user_slot[2] == -1);
  CHECK(p.is_proto_item(0));
  CHECK(!p.is_proto_item(2));

  CHECK_THROWS_AS(select_prototypes(s, 5, 1), std::invalid_argument);
}

TEST_CASE("tie-break prefers the smaller id") {
  Dataset ds;
  ds.num_users = 3;
  ds.num_items = 3;
  // all users rate once; all items rated once
  ds.records = {{0, 2, 1.0, 0}, {1, 1, 2.0, 0}, {2, 0, 3.0, 0}};
  ds.recompute_mean();
  RatingsStore s = build_store(ds);
  PrototypeSet p = select_prototypes(s, 2, 2);
  CHECK(p.proto_users == std::vector<int>{0, 1});
  CHECK(p.proto_items == std::vector<int>{0, 1});
}

TEST_CASE("prototype ids are ascending and slots agree") {
  Dataset ds = generate_synthetic(40, 30, 2, 0.3, 0.0, 13);
  RatingsStore s = build_store(ds);
  PrototypeSet p = select_prototypes(s, 12, 9);

  CHECK(std::is_sorted(p.proto_users.begin(), p.proto_users.end()));
  CHECK(std::is_sorted(p.proto_items.begin(), p.proto_items.end()));
  for (std::size_t slot = 0; slot < p.proto_users.size(); ++slot)
    CHECK(p.user_slot[p.proto_users[slot]] == static_cast<int>(slot));

  // selected users' counts dominate every unselected user's count
  std::size_t min_selected = SIZE_MAX;
  for (int u : p.proto_users)
    min_selected = std::min(min_selected, s.by_user[u].size());
  for (int u = 0; u < s.num_users; ++u)
    if (p.user_slot[u] < 0) CHECK(s.by_user[u].size() <= min_selected);
}

TEST_CASE("prototype block keeps only prototype-to-prototype ratings") {
  Dataset ds = tiny();
  RatingsStore s = build_store(ds);
  PrototypeSet p = select_prototypes(s, 2, 2);
  PrototypeBlock b = prototype_block(s, p);

  CHECK(b.block.num_users == 2);
  CHECK(b.block.num_items == 2);
  CHECK(b.local_to_global_user == p.proto_users);
  REQUIRE(b.block.records.size() == 3);  // (0,0) (0,1) (1,0)
  for (const auto& r : b.block.records) {
    int gu = b.local_to_global_user[r.user_id];
    int gi = b.local_to_global_item[r.item_id];
    bool found = false;
    for (const auto& orig : ds.records)
      if (orig.user_id == gu && orig.item_id == gi)
        found = orig.rating == r.rating;
    CHECK(found);
  }
}

TEST_CASE("prototype block may be empty") {
  Dataset ds;
  ds.num_users = 2;
  ds.num_items = 2;
  ds.records = {{0, 1, 2.0, 0}, {1, 0, 3.0, 0}};
  ds.recompute_mean();
  RatingsStore s = build_store(ds);
  PrototypeSet p = select_prototypes(s, 1, 1);
  // proto user 0 rated only item 1; proto item 0 rated only by user 1
  PrototypeBlock b = prototype_block(s, p);
  CHECK(b.block.records.empty());
}
