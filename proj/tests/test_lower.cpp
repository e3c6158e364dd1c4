#include <catch2/catch_amalgamated.hpp>

#include "finch/execute.hpp"

using namespace finch;

namespace {

TensorPtr from_coo2(const std::string& name, const std::string& fmt, int64_t m, int64_t n,
                    const std::vector<std::tuple<int64_t, int64_t, double>>& es) {
  std::vector<CooEntry> entries;
  for (auto& [i, j, v] : es) entries.push_back({{i, j}, Value::of_float(v)});
  return tensor_from_coo(name, {Extent::sized(m), Extent::sized(n)}, entries,
                         Value::of_float(0.0), fmt);
}

TensorPtr vec(const std::string& name, const std::string& fmt,
              const std::vector<double>& vals) {
  std::vector<CooEntry> entries;
  for (size_t i = 0; i < vals.size(); ++i)
    if (vals[i] != 0.0) entries.push_back({{(int64_t)i + 1}, Value::of_float(vals[i])});
  return tensor_from_coo(name, {Extent::sized((int64_t)vals.size())}, entries,
                         Value::of_float(0.0), fmt);
}

}  // namespace

TEST_CASE("dense vector sum") {
  ProgramEnv env;
  env.tensors["x"] = vec("x", "Dense(Element(0.0))", {1, 2, 3, 4});
  env.tensors["s"] = make_tensor("s", "Element(0.0)");
  auto r = run_program("s .= 0.0\nfor i = _\n  s[] += x[i]\nend\n", env);
  CHECK(r.outputs["s"]->scalar_value().as_float() == 10.0);
}

TEST_CASE("sparse vector sum skips fill") {
  ProgramEnv env;
  env.tensors["x"] = vec("x", "SparseList(Element(0.0))", {0, 2, 0, 0, 3, 0, 0, 5});
  env.tensors["s"] = make_tensor("s", "Element(0.0)");
  auto r = run_program("s .= 0.0\nfor i = _\n  s[] += x[i]\nend\n", env);
  CHECK(r.outputs["s"]->scalar_value().as_float() == 10.0);
  // three stored entries: three leaf visit pairs (read + accumulate)
  CHECK(r.counters.value_loads <= 3 + 3);
  CHECK(r.counters.leaf_visits <= 2 * 3);
}

TEST_CASE("spmv on identity returns x") {
  ProgramEnv env;
  env.tensors["A"] = from_coo2("A", "Dense(SparseList(Element(0.0)))", 4, 4,
                               {{1, 1, 1}, {2, 2, 1}, {3, 3, 1}, {4, 4, 1}});
  env.tensors["x"] = vec("x", "Dense(Element(0.0))", {1, 2, 3, 4});
  env.tensors["y"] = make_tensor("y", "Dense(Element(0.0))");
  auto r = run_program("y .= 0\nfor j = _, i = _\n  y[i] += A[i, j] * x[j]\nend\n", env);
  auto y = r.outputs["y"];
  for (int64_t i = 1; i <= 4; ++i) CHECK(y->read({i}).as_float() == (double)i);
}

TEST_CASE("upper triangle sum matches dense oracle and skips work") {
  std::vector<std::tuple<int64_t, int64_t, double>> entries = {
      {1, 1, 1}, {3, 2, 2}, {2, 3, 3}, {5, 3, 7}, {4, 4, 4},
      {6, 5, 9}, {1, 6, 5}, {6, 6, 6}};
  ProgramEnv env;
  env.tensors["A"] = from_coo2("A", "Dense(SparseList(Element(0.0)))", 6, 6, entries);
  env.tensors["s"] = make_tensor("s", "Element(0.0)");
  std::string src =
      "s .= 0.0\n"
      "for j = _\n"
      "  for i = _\n"
      "    if i <= j\n"
      "      s[] += A[i, j]\n"
      "    end\n"
      "  end\n"
      "end\n";
  auto r = run_program(src, env, {true, false});
  // dense oracle: sum of entries with i <= j
  double want = 0;
  for (auto& [i, j, v] : entries)
    if (i <= j) want += v;
  CHECK(r.outputs["s"]->scalar_value().as_float() == want);
  // leaf value reads stay within nnz(A)
  CHECK(r.counters.value_loads <= 8);
  // the kernel is a while loop over the ptr range with a guarded spike tail
  CHECK(r.kernel_text.find("while") != std::string::npos);
  CHECK(r.kernel_text.find("searchsorted") == std::string::npos);  // seek elided at lo=1
}

TEST_CASE("work skipping: leaf visits track nnz not dimension") {
  int64_t nnz = 50;
  std::vector<int64_t> visits;
  for (int64_t n : {1000, 10000, 100000}) {
    ProgramEnv env;
    std::vector<CooEntry> es;
    for (int64_t k = 0; k < nnz; ++k)
      es.push_back({{k * (n / nnz) + 1}, Value::of_float(1.0)});
    env.tensors["x"] = tensor_from_coo("x", {Extent::sized(n)}, es, Value::of_float(0.0),
                                       "SparseList(Element(0.0))");
    env.tensors["s"] = make_tensor("s", "Element(0.0)");
    auto r = run_program("s .= 0.0\nfor i = _\n  s[] += x[i]\nend\n", env);
    CHECK(r.outputs["s"]->scalar_value().as_float() == (double)nnz);
    visits.push_back(r.counters.leaf_visits);
  }
  CHECK(visits[0] == visits[1]);
  CHECK(visits[1] == visits[2]);
}

TEST_CASE("product reduction short circuits at the first zero") {
  int64_t n = 100;
  for (int64_t k : {1, 5, 50, 100}) {
    ProgramEnv env;
    std::vector<double> vals(n, 2.0);
    vals[k - 1] = 0.0;  // first zero at position k
    std::vector<CooEntry> es;
    for (int64_t i = 0; i < n; ++i) es.push_back({{i + 1}, Value::of_float(vals[i])});
    // dense element storage: explicit zeros stay stored
    auto x = make_tensor("x", "Dense(Element(1.0))");
    x->declare(Value::of_float(1.0), {Extent::sized(n)});
    for (int64_t i = 0; i < n; ++i)
      x->leaf()->value_buffer()->set(i, Value::of_float(vals[i]));
    x->freeze();
    env.tensors["x"] = x;
    env.tensors["p"] = make_tensor("p", "ShortCircuitScalar(0.0)");
    auto r = run_program("p .= 0.0\np[] = 1.0\nfor i = _\n  p[] *= x[i]\nend\n", env);
    CHECK(r.outputs["p"]->scalar_value().as_float() == 0.0);
    INFO("k=" << k);
    CHECK(r.counters.value_loads <= k + 1);
  }
}

TEST_CASE("mask false phase contributes zero leaf reads") {
  ProgramEnv env;
  env.tensors["A"] = from_coo2("A", "Dense(Dense(Element(0.0)))", 4, 4,
                               {{1, 1, 1}, {2, 1, 1}, {3, 1, 1}, {4, 1, 1}});
  env.tensors["s"] = make_tensor("s", "Element(0.0)");
  // strictly-lower mask: i > j never holds for column 4 rows 1..4 except below diagonal
  auto r = run_program(
      "s .= 0.0\nfor j = _, i = _\n  if i <= j\n    s[] += A[i, j]\n  end\nend\n", env);
  CHECK(r.outputs["s"]->scalar_value().as_float() == 1.0);
  // only the upper-triangle region of the dense matrix is read: 4+3+2+1 = 10
  CHECK(r.counters.value_loads <= 10);
}

TEST_CASE("bytemap scatter and copy through a sparse output") {
  // w .= 0; for k,i: w[i] += A[i,k]; then C[i] = w[i] reads only stored slots
  ProgramEnv env;
  env.tensors["A"] = from_coo2("A", "Dense(SparseList(Element(0.0)))", 100, 3,
                               {{7, 1, 1}, {7, 2, 2}, {50, 2, 3}, {9, 3, 4}});
  env.tensors["w"] = make_tensor("w", "SparseByteMap(Element(0.0))");
  env.tensors["C"] = make_tensor("C", "SparseList(Element(0.0))");
  std::string src =
      "w .= 0\n"
      "for k = _, i = _\n"
      "  w[i] += A[i, k]\n"
      "end\n"
      "C .= 0\n"
      "for i = _\n"
      "  C[i] = w[i]\n"
      "end\n";
  auto r = run_program(src, env);
  auto C = r.outputs["C"];
  CHECK(C->read({7}).as_float() == 3.0);
  CHECK(C->read({50}).as_float() == 3.0);
  CHECK(C->read({9}).as_float() == 4.0);
  CHECK(C->read({1}).as_float() == 0.0);
  CHECK(C->countstored() == 3);
  // the copy loop walks stored slots, not the full dimension of 100
  CHECK(r.counters.leaf_visits < 40);
}

TEST_CASE("gallop walk equivalence on sorted intersections") {
  std::vector<double> xs(64, 0.0), ys(64, 0.0);
  for (int i = 2; i < 64; i += 3) xs[i] = i;
  for (int i = 2; i < 64; i += 5) ys[i] = 1;
  double want = 0;
  for (int i = 0; i < 64; ++i) want += xs[i] * ys[i];
  for (const char* prog : {
           "s .= 0.0\nfor i = _\n  s[] += x[i] * y[i]\nend\n",
           "s .= 0.0\nfor i = _\n  s[] += x[gallop(i)] * y[i]\nend\n",
           "s .= 0.0\nfor i = _\n  s[] += x[gallop(i)] * y[gallop(i)]\nend\n",
       }) {
    ProgramEnv env;
    env.tensors["x"] = vec("x", "SparseList(Element(0.0))", xs);
    env.tensors["y"] = vec("y", "SparseList(Element(0.0))", ys);
    env.tensors["s"] = make_tensor("s", "Element(0.0)");
    auto r = run_program(prog, env);
    INFO(prog);
    CHECK(r.outputs["s"]->scalar_value().as_float() == want);
  }
}

TEST_CASE("same kernel is lowered once") {
  auto& cache = detail::KernelCache::instance();
  int64_t before = cache.lowerings;
  for (int rep = 0; rep < 2; ++rep) {
    ProgramEnv env;
    env.tensors["x"] = vec("x", "Dense(Element(0.0))", {1, 2, 5});
    env.tensors["s"] = make_tensor("s", "Element(0.0)");
    // whitespace differences parse to the same tree and key
    auto r = run_program(rep == 0 ? "s .= 0.0\nfor i = _\n  s[] += x[i]\nend\n"
                                  : "s .= 0.0\nfor i  =  _\n    s[] += x[i]\nend\n",
                         env);
    CHECK(r.outputs["s"]->scalar_value().as_float() == 8.0);
  }
  CHECK(cache.lowerings - before <= 1);
}
