#include <catch2/catch_amalgamated.hpp>
#include <map>
#include <random>

#include "finch/tensor.hpp"

using namespace finch;

namespace {

TensorPtr coo_vector(const std::string& fmt, int64_t n,
                     const std::vector<std::pair<int64_t, double>>& entries) {
  std::vector<CooEntry> es;
  for (auto& [i, v] : entries) es.push_back({{i}, Value::of_float(v)});
  return tensor_from_coo("x", {Extent::sized(n)}, es, Value::of_float(0.0), fmt);
}

}  // namespace

TEST_CASE("level spec round-trips") {
  for (const char* spec :
       {"Dense(SparseList(Element(0.0)))", "SparseRunList(Pattern())",
        "Dense(Dense(Element(false)))", "SparseHash(SparseHash(Element(0)))",
        "Dense(SparseBand(Element(0.0)))", "ShortCircuitScalar(0)"}) {
    CHECK(parse_level_spec(spec)->spec() == spec);
  }
  CHECK_THROWS_AS(parse_level_spec("Dense(Sparse(Element(0)))"), Error);
}

TEST_CASE("declare empty vector reads all fill") {
  auto t = make_tensor("x", "SparseList(Element(0.0))");
  t->declare(Value::of_float(0.0), {Extent::sized(5)});
  t->freeze();
  CHECK(t->countstored() == 0);
  for (int64_t i = 1; i <= 5; ++i) CHECK(t->read({i}).as_float() == 0.0);
}

TEST_CASE("declare rejects non-fill init") {
  auto t = make_tensor("x", "SparseList(Element(0.0))");
  CHECK_THROWS_AS(t->declare(Value::of_float(1.0), {Extent::sized(5)}), Error);
}

TEST_CASE("write then freeze replays the write log") {
  auto t = coo_vector("SparseList(Element(0.0))", 5, {{2, 3.0}});
  std::vector<double> expect = {0, 3.0, 0, 0, 0};
  for (int64_t i = 1; i <= 5; ++i) CHECK(t->read({i}).as_float() == expect[i - 1]);
  CHECK(t->countstored() == 1);
}

TEST_CASE("lifecycle transitions are checked") {
  auto t = make_tensor("x", "Dense(Element(0.0))");
  t->declare(Value::of_float(0.0), {Extent::sized(2)});
  CHECK_THROWS_AS(t->thaw(), Error);  // update mode already
  t->freeze();
  CHECK_THROWS_AS(t->freeze(), Error);
  t->thaw();
  t->freeze();
}

TEST_CASE("thaw preserves content for += style updates") {
  auto t = coo_vector("Dense(Element(0.0))", 2, {{1, 1.0}, {2, 2.0}});
  t->thaw();
  auto* vb = t->leaf()->value_buffer();
  vb->set(0, Value::of_float(vb->at(0).as_float() + 1.0));
  t->freeze();
  CHECK(t->read({1}).as_float() == 2.0);
  CHECK(t->read({2}).as_float() == 2.0);
}

TEST_CASE("assemble uses capacity doubling") {
  auto lvl = std::make_shared<ElementLevel>(Value::of_float(0.0));
  alloc_stats().reset();
  int64_t n = 1000;
  for (int64_t p = 1; p <= n; ++p) lvl->assemble(p, p);
  double bound = std::ceil(std::log2(static_cast<double>(n))) + 1;
  CHECK(alloc_stats().reallocations <= static_cast<uint64_t>(bound));
  CHECK(lvl->value_buffer()->size() == n);
}

TEST_CASE("tensor_from_coo cross-format agreement") {
  std::mt19937 rng(7);
  std::vector<std::string> vec_formats = {
      "SparseList(Element(0.0))", "Dense(Element(0.0))", "SparseHash(Element(0.0))",
      "SparseByteMap(Element(0.0))", "RunList(Element(0.0))", "SparseRunList(Element(0.0))"};
  for (double density : {0.0, 0.1, 0.5, 1.0}) {
    int64_t n = 16;
    std::vector<std::pair<int64_t, double>> entries;
    for (int64_t i = 1; i <= n; ++i)
      if (std::uniform_real_distribution<>(0, 1)(rng) < density)
        entries.push_back({i, std::uniform_int_distribution<>(1, 9)(rng) * 1.0});
    auto ref = coo_vector(vec_formats[0], n, entries);
    for (auto& fmt : vec_formats) {
      auto t = coo_vector(fmt, n, entries);
      INFO(fmt << " at density " << density);
      CHECK(tensors_value_equal(*ref, *t));
      t->validate();
    }
  }
}

TEST_CASE("tensor_from_coo matrix formats agree") {
  std::mt19937 rng(13);
  std::vector<std::string> mat_formats = {
      "Dense(SparseList(Element(0.0)))", "Dense(Dense(Element(0.0)))",
      "SparseList(SparseList(Element(0.0)))", "SparseHash(SparseHash(Element(0.0)))",
      "Dense(SparseBlockList(Element(0.0)))", "Dense(SparseRunList(Element(0.0)))"};
  int64_t n = 8;
  std::vector<CooEntry> entries;
  for (int64_t j = 1; j <= n; ++j)
    for (int64_t i = 1; i <= n; ++i)
      if (std::uniform_real_distribution<>(0, 1)(rng) < 0.3)
        entries.push_back({{i, j}, Value::of_float(std::uniform_int_distribution<>(1, 9)(rng))});
  std::vector<Extent> dims = {Extent::sized(n), Extent::sized(n)};
  auto ref = tensor_from_coo("A", dims, entries, Value::of_float(0.0), mat_formats[0]);
  for (auto& fmt : mat_formats) {
    auto t = tensor_from_coo("A", dims, entries, Value::of_float(0.0), fmt);
    INFO(fmt);
    CHECK(tensors_value_equal(*ref, *t));
    t->validate();
  }
}

TEST_CASE("duplicate COO coordinates are an error") {
  std::vector<CooEntry> es = {{{1, 1}, Value::of_float(1.0)}, {{1, 1}, Value::of_float(2.0)}};
  CHECK_THROWS_AS(tensor_from_coo("A", {Extent::sized(2), Extent::sized(2)}, es,
                                  Value::of_float(0.0), "Dense(SparseList(Element(0.0)))"),
                  Error);
}

TEST_CASE("2x2 identity lands in per-column idx") {
  std::vector<CooEntry> es = {{{1, 1}, Value::of_float(1.0)}, {{2, 2}, Value::of_float(1.0)}};
  auto t = tensor_from_coo("A", {Extent::sized(2), Extent::sized(2)}, es, Value::of_float(0.0),
                           "Dense(SparseList(Element(0.0)))");
  CHECK(t->read({1, 1}).as_float() == 1.0);
  CHECK(t->read({2, 1}).as_float() == 0.0);
  CHECK(t->read({2, 2}).as_float() == 1.0);
  auto* sl = t->root()->child().get();
  auto* idx = sl->int_buffer(BufRole::Idx);
  REQUIRE(idx->size() == 2);
  CHECK(idx->at(0) == 1);
  CHECK(idx->at(1) == 2);
  auto hash = tensor_from_coo("A", {Extent::sized(2), Extent::sized(2)}, es,
                              Value::of_float(0.0), "SparseHash(SparseHash(Element(0.0)))");
  CHECK(tensors_value_equal(*t, *hash));
}

TEST_CASE("convert identity and structure violations") {
  std::vector<CooEntry> diag = {{{1, 1}, Value::of_float(2.0)}, {{2, 2}, Value::of_float(3.0)}};
  std::vector<Extent> dims = {Extent::sized(3), Extent::sized(3)};
  auto t = tensor_from_coo("D", dims, diag, Value::of_float(0.0),
                           "Dense(SparseList(Element(0.0)))");
  auto same = convert(*t, "Dense(SparseList(Element(0.0)))");
  CHECK(tensors_value_equal(*t, *same));
  auto pin = convert(*t, "Dense(SparsePinpoint(Element(0.0)))");
  CHECK(tensors_value_equal(*t, *pin));
  // two nonzeros in one column cannot convert to a pinpoint level
  std::vector<CooEntry> two = {{{1, 1}, Value::of_float(2.0)}, {{2, 1}, Value::of_float(3.0)}};
  auto t2 = tensor_from_coo("D", dims, two, Value::of_float(0.0),
                            "Dense(SparseList(Element(0.0)))");
  CHECK_THROWS_AS(convert(*t2, "Dense(SparsePinpoint(Element(0.0)))"), Error);
}

TEST_CASE("countstored on update-mode tensor errors") {
  auto t = make_tensor("x", "SparseList(Element(0.0))");
  t->declare(Value::of_float(0.0), {Extent::sized(5)});
  CHECK_THROWS_AS(t->countstored(), Error);
  t->freeze();
  CHECK(t->countstored() == 0);
}

TEST_CASE("freeze is idempotent through thaw round trips") {
  auto t = coo_vector("SparseRunList(Element(0.0))", 10,
                      {{2, 5.0}, {3, 5.0}, {4, 5.0}, {7, 1.0}});
  int64_t stored = t->countstored();
  t->thaw();
  t->freeze();
  CHECK(t->countstored() == stored);
  CHECK(t->read({3}).as_float() == 5.0);
  CHECK(t->read({7}).as_float() == 1.0);
  CHECK(t->read({5}).as_float() == 0.0);
}
