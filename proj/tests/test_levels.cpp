#include <catch2/catch_amalgamated.hpp>
#include <random>

#include "finch/tensor.hpp"

using namespace finch;

TEST_CASE("runlist merges adjacent equal runs at freeze") {
  // runs (1..3 -> 5.0), (4..7 -> 5.0) merge into one run
  auto t = make_tensor("v", "RunList(Element(0.0))");
  t->declare(Value::of_float(0.0), {Extent::sized(7)});
  auto* rl = static_cast<RunListLevel*>(t->root().get());
  int64_t q = rl->builder_slot(1, 1);
  rl->child()->value_buffer()->set(q - 1, Value::of_float(5.0));
  rl->builder_commit(1, 1, 3);
  q = rl->builder_slot(1, 4);
  rl->child()->value_buffer()->set(q - 1, Value::of_float(5.0));
  rl->builder_commit(1, 4, 7);
  t->freeze();
  CHECK(rl->runs_in(1) == 1);
  for (int64_t i = 1; i <= 7; ++i) CHECK(t->read({i}).as_float() == 5.0);
}

TEST_CASE("runlist dedup over randomized run patterns") {
  std::mt19937 rng(99);
  for (int trial = 0; trial < 30; ++trial) {
    int64_t n = 40;
    // generate m runs with known adjacent-equal pairs
    std::vector<std::pair<int64_t, double>> runs;  // (end, value)
    int64_t at = 0;
    double prev = -1;
    int64_t dups = 0;
    while (at < n) {
      int64_t width = std::uniform_int_distribution<int64_t>(1, 6)(rng);
      int64_t end = std::min(n, at + width);
      double v = std::uniform_int_distribution<>(1, 3)(rng);
      if (!runs.empty() && v == prev) dups++;
      runs.push_back({end, v});
      prev = v;
      at = end;
    }
    auto t = make_tensor("v", "RunList(Element(0.0))");
    t->declare(Value::of_float(0.0), {Extent::sized(n)});
    auto* rl = static_cast<RunListLevel*>(t->root().get());
    int64_t start = 1;
    for (auto& [end, v] : runs) {
      int64_t q = rl->builder_slot(1, start);
      rl->child()->value_buffer()->set(q - 1, Value::of_float(v));
      rl->builder_commit(1, start, end);
      start = end + 1;
    }
    t->freeze();
    INFO("m=" << runs.size() << " d=" << dups);
    CHECK(rl->runs_in(1) == static_cast<int64_t>(runs.size()) - dups);
    // value check against the run description
    start = 1;
    for (auto& [end, v] : runs) {
      for (int64_t i = start; i <= end; ++i) CHECK(t->read({i}).as_float() == v);
      start = end + 1;
    }
  }
}

TEST_CASE("sparse hash sorts keys at freeze") {
  auto t = make_tensor("x", "SparseHash(Element(0.0))");
  t->declare(Value::of_float(0.0), {Extent::sized(5)});
  for (int64_t i : {3, 1, 2}) poke(*t, {i}, Value::of_float(static_cast<double>(i)));
  t->freeze();
  auto* idx = t->root()->int_buffer(BufRole::Idx);
  REQUIRE(idx->size() == 3);
  CHECK(idx->at(0) == 1);
  CHECK(idx->at(1) == 2);
  CHECK(idx->at(2) == 3);
  t->validate();
}

TEST_CASE("bytemap redeclare resets only dirty locations") {
  auto t = make_tensor("x", "SparseByteMap(Element(0.0))");
  t->declare(Value::of_float(0.0), {Extent::sized(8)});
  poke(*t, {2}, Value::of_float(1.0));
  poke(*t, {5}, Value::of_float(2.0));
  t->freeze();
  CHECK(t->countstored() == 2);
  auto* bm = static_cast<SparseByteMapLevel*>(t->root().get());
  t->thaw();
  bm->declare_reset(1);
  // full-scan oracle: all slots read back as fill
  auto* tbl = bm->byte_buffer();
  for (int64_t q = 0; q < tbl->size(); ++q) CHECK(tbl->at(q) == 0);
  t->freeze();
  for (int64_t i = 1; i <= 8; ++i) CHECK(t->read({i}).as_float() == 0.0);
  CHECK(t->countstored() == 0);
}

TEST_CASE("structural invariants hold after freeze for random tensors") {
  std::mt19937 rng(5);
  std::vector<std::string> formats = {
      "Dense(SparseList(Element(0.0)))",    "SparseList(SparseList(Element(0.0)))",
      "Dense(SparseRunList(Element(0.0)))", "Dense(SparseBlockList(Element(0.0)))",
      "Dense(SparseHash(Element(0.0)))",    "Dense(SparseByteMap(Element(0.0)))",
      "RunList(RunList(Element(0.0)))",     "Dense(RunList(Element(0.0)))"};
  for (auto& fmt : formats) {
    for (double density : {0.0, 0.1, 0.5, 1.0}) {
      int64_t n = 9;
      std::vector<CooEntry> entries;
      for (int64_t j = 1; j <= n; ++j)
        for (int64_t i = 1; i <= n; ++i)
          if (std::uniform_real_distribution<>(0, 1)(rng) < density)
            entries.push_back(
                {{i, j}, Value::of_float(std::uniform_int_distribution<>(1, 4)(rng))});
      auto t = tensor_from_coo("A", {Extent::sized(n), Extent::sized(n)}, entries,
                               Value::of_float(0.0), fmt);
      INFO(fmt << " density " << density);
      t->validate();
      // read-back agreement with the COO map
      std::map<std::pair<int64_t, int64_t>, double> coo;
      for (auto& e : entries) coo[{e.coords[0], e.coords[1]}] = e.value.as_float();
      bool ok = true;
      for (int64_t j = 1; j <= n && ok; ++j)
        for (int64_t i = 1; i <= n && ok; ++i) {
          auto it = coo.find({i, j});
          double want = it == coo.end() ? 0.0 : it->second;
          ok = t->read({i, j}).as_float() == want;
        }
      CHECK(ok);
    }
  }
}

TEST_CASE("pattern leaf comes back true") {
  std::vector<CooEntry> es = {{{1}, Value::of_bool(true)}, {{4}, Value::of_bool(true)}};
  auto t = tensor_from_coo("p", {Extent::sized(5)}, es, Value::of_bool(false),
                           "SparseList(Pattern())");
  CHECK(t->read({1}).as_bool());
  CHECK_FALSE(t->read({2}).as_bool());
  CHECK(t->read({4}).as_bool());
  CHECK(t->countstored() == 2);
}

TEST_CASE("scalar levels") {
  auto s = make_tensor("s", "Scalar(0.0)");
  s->declare(Value::of_float(0.0), {});
  s->root()->value_buffer()->set(0, Value::of_float(4.5));
  s->freeze();
  CHECK(s->scalar_value().as_float() == 4.5);

  auto ss = make_tensor("t", "SparseScalar(0.0)");
  ss->declare(Value::of_float(0.0), {});
  ss->freeze();
  CHECK(ss->scalar_value().as_float() == 0.0);
  CHECK(ss->countstored() == 0);
}

TEST_CASE("band and blocklist store contiguous blocks") {
  // band: one block per column of a tridiagonal-ish matrix
  std::vector<CooEntry> es;
  int64_t n = 6;
  for (int64_t j = 1; j <= n; ++j)
    for (int64_t i = std::max<int64_t>(1, j - 1); i <= std::min(n, j + 1); ++i)
      es.push_back({{i, j}, Value::of_float(static_cast<double>(i * 10 + j))});
  auto a = tensor_from_coo("A", {Extent::sized(n), Extent::sized(n)}, es, Value::of_float(0.0),
                           "Dense(SparseBand(Element(0.0)))");
  auto b = tensor_from_coo("A", {Extent::sized(n), Extent::sized(n)}, es, Value::of_float(0.0),
                           "Dense(SparseBlockList(Element(0.0)))");
  auto ref = tensor_from_coo("A", {Extent::sized(n), Extent::sized(n)}, es, Value::of_float(0.0),
                             "Dense(Dense(Element(0.0)))");
  CHECK(tensors_value_equal(*ref, *a));
  CHECK(tensors_value_equal(*ref, *b));
  a->validate();
  b->validate();
  // a column with two separated entries violates the band structure
  std::vector<CooEntry> gap = {{{1, 1}, Value::of_float(1.0)}, {{4, 1}, Value::of_float(2.0)}};
  CHECK_THROWS_AS(tensor_from_coo("A", {Extent::sized(4), Extent::sized(4)}, gap,
                                  Value::of_float(0.0), "Dense(SparseBand(Element(0.0)))"),
                  Error);
}

TEST_CASE("sparse interval holds one run per subfiber") {
  std::vector<CooEntry> es;
  for (int64_t i = 3; i <= 6; ++i) es.push_back({{i}, Value::of_bool(true)});
  auto t = tensor_from_coo("m", {Extent::sized(10)}, es, Value::of_bool(false),
                           "SparseInterval(Pattern())");
  for (int64_t i = 1; i <= 10; ++i) CHECK(t->read({i}).as_bool() == (i >= 3 && i <= 6));
}
