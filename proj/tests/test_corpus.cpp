#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "csrec/corpus.hpp"
#include "csrec/error.hpp"

using namespace csrec;
using namespace csrec::corpus;

namespace {

// One user per entry, items given as raw ids, timestamps 1..n.
std::string log_text(const std::vector<std::vector<int>>& histories) {
  std::ostringstream os;
  for (std::size_t u = 0; u < histories.size(); ++u)
    for (std::size_t t = 0; t < histories[u].size(); ++t)
      os << u + 1 << '\t' << histories[u][t] << '\t' << t + 1 << '\n';
  return os.str();
}

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an error");
  return ErrorKind::Usage;
}

// Reference fixpoint over raw (user, item) pairs.
std::set<std::pair<int, int>> brute_filter(std::vector<std::pair<int, int>> events, int k) {
  for (;;) {
    std::map<int, int> uc, ic;
    for (auto [u, i] : events) ++uc[u], ++ic[i];
    std::vector<std::pair<int, int>> kept;
    for (auto e : events)
      if (uc[e.first] >= k && ic[e.second] >= k) kept.push_back(e);
    if (kept.size() == events.size()) return {kept.begin(), kept.end()};
    events = kept;
  }
}

}  // namespace

TEST_CASE("load: three rows, two users, two items") {
  const auto log = parse_interactions("1,10,5\n1,11,6\n2,10,7\n");
  CHECK(log.user_count == 2);
  CHECK(log.catalog_size == 2);
  CHECK(log.events.size() == 3);
  for (const auto& e : log.events) CHECK_FALSE(e.rating.has_value());
}

TEST_CASE("load: header, tabs, ratings and time ordering") {
  const auto log = parse_interactions("user\titem\tts\trating\nA\tx\t9\t4.5\nA\ty\t3\t-\nB\tx\t1\t2\n");
  REQUIRE(log.events.size() == 3);
  CHECK(log.ids.raw_users == std::vector<std::string>{"A", "B"});
  // A's events are re-sorted by timestamp.
  CHECK(log.events[0].timestamp == 3);
  CHECK_FALSE(log.events[0].rating.has_value());
  CHECK(log.events[1].rating.value() == doctest::Approx(4.5));
  for (const auto& e : log.events) {
    CHECK(e.item >= 1);
    CHECK(e.item <= log.catalog_size);
  }
}

TEST_CASE("load: errors name the line") {
  try {
    parse_interactions("1,1,1\n1,oops\n");
    FAIL("no error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Parse);
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
  CHECK(kind_of([] { parse_interactions(""); }) == ErrorKind::EmptyInput);
  CHECK(kind_of([] { parse_interactions("1,1,x\n"); }) == ErrorKind::Parse);
  CHECK(kind_of([] { parse_interactions("1,1,1,7\n"); }) == ErrorKind::Parse);
  CHECK(kind_of([] { load_interactions("/nonexistent/file.tsv"); }) == ErrorKind::Io);
}

TEST_CASE("load: tagged Last.FM layout reads user, artist and timestamp") {
  const auto log = parse_interactions("2\t51\t13\t1238536800000\n2\t52\t15\t1238536800001\n",
                                      ColumnSchema::lastfm_tagged());
  CHECK(log.events.size() == 2);
  CHECK(log.events[1].timestamp == 1238536800001LL);
  CHECK(log.ids.raw_items == std::vector<std::string>{"51", "52"});
}

TEST_CASE("filter: user with four events is removed") {
  std::vector<std::vector<int>> h(6, {1, 2, 3, 4, 5});
  h.push_back({1, 2, 3, 4});
  const auto log = filter_min_interactions(parse_interactions(log_text(h)), 5);
  CHECK(log.user_count == 6);
}

TEST_CASE("filter: already-dense log is unchanged up to remap") {
  std::vector<std::vector<int>> h(5, {1, 2, 3, 4, 5});
  const auto raw = parse_interactions(log_text(h));
  const auto log = filter_min_interactions(raw, 5);
  CHECK(log.events.size() == raw.events.size());
  CHECK(log.catalog_size == raw.catalog_size);
}

TEST_CASE("filter: chain removal matches brute-force fixpoint") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::vector<int>> h(12);
    std::uniform_int_distribution<int> len(2, 9), item(1, 9);
    for (auto& seq : h) {
      const int n = len(rng);
      for (int t = 0; t < n; ++t) seq.push_back(item(rng));
    }
    const auto raw = parse_interactions(log_text(h));
    std::vector<std::pair<int, int>> events;
    for (const auto& e : raw.events)
      events.emplace_back(e.user, std::stoi(raw.ids.raw_items[static_cast<std::size_t>(e.item - 1)]));
    const auto expected = brute_filter(events, 3);
    if (expected.empty()) {
      CHECK(kind_of([&] { filter_min_interactions(raw, 3); }) == ErrorKind::EmptyAfterFilter);
      continue;
    }
    const auto log = filter_min_interactions(raw, 3);
    std::set<std::pair<int, int>> got;
    for (const auto& e : log.events) {
      const auto raw_user = log.ids.raw_users[static_cast<std::size_t>(e.user - 1)];
      const int orig_user = static_cast<int>(std::find(raw.ids.raw_users.begin(), raw.ids.raw_users.end(), raw_user) -
                                             raw.ids.raw_users.begin()) + 1;
      got.emplace(orig_user, std::stoi(log.ids.raw_items[static_cast<std::size_t>(e.item - 1)]));
    }
    CHECK(got == expected);
    // Idempotence.
    const auto twice = filter_min_interactions(log, 3);
    CHECK(twice.events.size() == log.events.size());
  }
}

TEST_CASE("filter: an emptied log is an error") {
  CHECK(kind_of([] { filter_min_interactions(parse_interactions("1,1,1\n"), 5); }) ==
        ErrorKind::EmptyAfterFilter);
}

TEST_CASE("sequences: leave-one-out on [a, b, c, d]") {
  const auto log = parse_interactions(log_text({{1, 2, 3, 4}}));
  const auto sp = build_sequences(log, {10, true});
  REQUIRE(sp.test.size() == 1);
  REQUIRE(sp.valid.size() == 1);
  const Sequence test_in{0, 0, 0, 0, 0, 0, 0, 1, 2, 3};
  const Sequence valid_in{0, 0, 0, 0, 0, 0, 0, 0, 1, 2};
  CHECK(sp.test[0].sequence == test_in);
  CHECK(sp.test[0].target == 4);
  CHECK(sp.valid[0].sequence == valid_in);
  CHECK(sp.valid[0].target == 3);
  CHECK(sp.test[0].true_length() == 3);
}

TEST_CASE("sequences: L + 1 items give an unpadded test input") {
  std::vector<int> h;
  for (int i = 1; i <= 11; ++i) h.push_back(i);
  const auto sp = build_sequences(parse_interactions(log_text({h})), {10, true});
  CHECK(std::count(sp.test[0].sequence.begin(), sp.test[0].sequence.end(), 0) == 0);
}

TEST_CASE("sequences: 2L + 1 items give two training windows") {
  std::vector<int> h;
  for (int i = 1; i <= 21; ++i) h.push_back(i);
  const auto sp = build_sequences(parse_interactions(log_text({h})), {10, false});
  CHECK(sp.train_windows == 2);
  CHECK(sp.train.size() == 2);
  const auto expanded = build_sequences(parse_interactions(log_text({h})), {10, true});
  CHECK(expanded.train_windows == 2);
  // Windows [1..10] and [11..19]: 9 + 8 target positions.
  CHECK(expanded.train.size() == 17);
}

TEST_CASE("sequences: users with fewer than three events are skipped") {
  const auto sp = build_sequences(parse_interactions(log_text({{1, 2}, {1, 2, 3}})), {5, true});
  CHECK(sp.skipped_users == 1);
  CHECK(sp.test.size() == 1);
}

TEST_CASE("sequences: causality, disjointness, one eval sample per user") {
  std::mt19937_64 rng(3);
  std::vector<std::vector<int>> h(30);
  std::uniform_int_distribution<int> len(3, 40), item(1, 50);
  for (auto& seq : h) {
    const int n = len(rng);
    for (int t = 0; t < n; ++t) seq.push_back(item(rng));
  }
  const auto log = parse_interactions(log_text(h));
  const auto sp = build_sequences(log, {8, true});
  std::map<UserId, std::vector<ItemId>> hist;
  for (const auto& e : log.events) hist[e.user].push_back(e.item);
  std::map<UserId, int> test_count, valid_count;
  for (const auto& s : sp.test) ++test_count[s.user_id];
  for (const auto& s : sp.valid) ++valid_count[s.user_id];
  for (const auto& [u, items] : hist) {
    CHECK(test_count[u] == 1);
    CHECK(valid_count[u] == 1);
  }
  // Every sample's inputs are a contiguous run of history ending just before
  // some target position; positions are unique across splits.
  std::set<std::pair<UserId, std::size_t>> positions;
  for (const auto* split : {&sp.train, &sp.valid, &sp.test}) {
    for (const auto& s : *split) {
      const auto& items = hist[s.user_id];
      std::vector<ItemId> inputs;
      for (ItemId i : s.sequence)
        if (i != kPadding) inputs.push_back(i);
      CHECK(s.target != kPadding);
      bool found = false;
      for (std::size_t t = inputs.size(); t < items.size() && !found; ++t) {
        if (items[t] != s.target) continue;
        if (std::equal(inputs.begin(), inputs.end(), items.begin() + static_cast<std::ptrdiff_t>(t - inputs.size())) &&
            !positions.contains({s.user_id, t})) {
          positions.insert({s.user_id, t});
          found = true;
        }
      }
      CHECK(found);
      // Padding only on the left.
      const auto first_real = std::find_if(s.sequence.begin(), s.sequence.end(), [](ItemId i) { return i != 0; });
      CHECK(std::find(first_real, s.sequence.end(), 0) == s.sequence.end());
    }
  }
}

TEST_CASE("subsample: identity, exact size, determinism, domain") {
  std::vector<SequenceSample> samples(100);
  for (int i = 0; i < 100; ++i) samples[static_cast<std::size_t>(i)].target = i + 1;
  CHECK(subsample(samples, 1.0, 5).size() == 100);
  const auto a = subsample(samples, 0.8, 5);
  const auto b = subsample(samples, 0.8, 5);
  CHECK(a.size() == 80);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].target == b[i].target);
  std::set<ItemId> distinct;
  for (const auto& s : a) distinct.insert(s.target);
  CHECK(distinct.size() == 80);
  CHECK(kind_of([&] { subsample(samples, 0.0, 1); }) == ErrorKind::Parameter);
  CHECK(kind_of([&] { subsample(samples, 1.5, 1); }) == ErrorKind::Parameter);
  samples[3].split = Split::Test;
  CHECK_THROWS_AS(subsample(samples, 0.5, 1), Error);
}

TEST_CASE("popularity: uniform ties go to the lowest ids") {
  std::vector<SequenceSample> train;
  for (int i = 1; i <= 10; ++i) {
    SequenceSample s;
    s.sequence = {0, 0};
    s.target = i;
    train.push_back(s);
  }
  const auto bins = popularity_bins(train, 10);
  CHECK(bins.popular_items == std::vector<ItemId>{1, 2});
  CHECK(bins.niche_items.size() == 8);
}

TEST_CASE("popularity: dominant item is popular; Zipf top-20 matches sort oracle") {
  std::vector<SequenceSample> train;
  auto add = [&](ItemId target, int times) {
    for (int k = 0; k < times; ++k) {
      SequenceSample s;
      s.sequence = {0};
      s.target = target;
      train.push_back(s);
    }
  };
  add(4, 5);
  add(1, 1), add(2, 1), add(3, 2), add(5, 1);
  CHECK(popularity_bins(train, 5).popular(4));

  train.clear();
  std::vector<int> counts(101, 0);
  for (int i = 1; i <= 100; ++i) {
    counts[static_cast<std::size_t>(i)] = static_cast<int>(1000.0 / ((i * 37) % 100 + 1));
    add(i, counts[static_cast<std::size_t>(i)]);
  }
  const auto bins = popularity_bins(train, 100);
  std::vector<int> ids(100);
  std::iota(ids.begin(), ids.end(), 1);
  std::stable_sort(ids.begin(), ids.end(), [&](int a, int b) { return counts[static_cast<std::size_t>(a)] > counts[static_cast<std::size_t>(b)]; });
  std::vector<ItemId> top(ids.begin(), ids.begin() + 20);
  std::sort(top.begin(), top.end());
  CHECK(bins.popular_items == top);
  // Partition.
  std::set<ItemId> all(bins.popular_items.begin(), bins.popular_items.end());
  for (ItemId i : bins.niche_items) CHECK(all.insert(i).second);
  CHECK(all.size() == 100);
}

TEST_CASE("remove_users: zero fraction is identity; half of ten users") {
  std::vector<std::vector<int>> h(10, {1, 2, 3, 4, 5, 6});
  const auto log = parse_interactions(log_text(h));
  const auto same = remove_users(log, 0.0, 1);
  CHECK(same.log.events.size() == log.events.size());
  CHECK(same.sparsity == doctest::Approx(log.sparsity()));
  const auto half = remove_users(log, 0.5, 1);
  CHECK(half.removed_users == 5);
  CHECK(half.log.user_count == 5);
  CHECK(half.sparsity == doctest::Approx(1.0 - 30.0 / (5.0 * 6.0)));
  CHECK_THROWS_AS(remove_users(log, 1.0, 1), Error);
}

TEST_CASE("split and id-map files round-trip") {
  const auto tmp = std::filesystem::temp_directory_path() / "csrec_corpus_rt";
  std::filesystem::create_directories(tmp);
  const auto log = parse_interactions("7,x,1,4.25\n7,y,2,3\n7,z,3\n9,x,1,1\n9,y,2,5\n9,z,3,0.5\n");
  const auto sp = build_sequences(log, {4, true});
  write_split((tmp / "test.tsv").string(), sp.test);
  const auto back = read_split((tmp / "test.tsv").string(), Split::Test);
  REQUIRE(back.size() == sp.test.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].sequence == sp.test[i].sequence);
    CHECK(back[i].target == sp.test[i].target);
    CHECK(back[i].user_id == sp.test[i].user_id);
    CHECK(back[i].target_rating == sp.test[i].target_rating);
  }
  CHECK(format_sample(sp.test[1]) == "2\t0 0 1 2\t3\t0.5");
  CHECK(format_sample(sp.test[0]).ends_with("\t-"));
  write_id_map((tmp / "items.tsv").string(), log.ids.raw_items);
  CHECK(read_id_map((tmp / "items.tsv").string()) == log.ids.raw_items);
  std::filesystem::remove_all(tmp);
}
