#include <catch2/catch_amalgamated.hpp>

#include "finch/generators.hpp"

using namespace finch;

namespace {
TensorPtr dense_vec(const std::string& name, const std::vector<double>& vals) {
  auto t = make_tensor(name, "Dense(Element(0.0))");
  t->declare(Value::of_float(0.0), {Extent::sized((int64_t)vals.size())});
  for (size_t i = 0; i < vals.size(); ++i)
    t->leaf()->value_buffer()->set(i, Value::of_float(vals[i]));
  t->freeze();
  return t;
}
}  // namespace

TEST_CASE("reference eval walks the denotational semantics") {
  ProgramEnv env;
  env.tensors["x"] = dense_vec("x", {1, 2, 3});
  env.tensors["s"] = make_tensor("s", "Element(0.0)");
  auto out = reference_eval("s .= 0.0\nfor i = _\n  s[] += x[i]\nend\n", env);
  CHECK(out["s"]->scalar_value().as_float() == 6.0);
  // sieve(false) bodies are skipped
  ProgramEnv env2;
  env2.tensors["x"] = dense_vec("x", {1, 2, 3});
  env2.tensors["s"] = make_tensor("s", "Element(0.0)");
  auto out2 = reference_eval(
      "s .= 0.0\nfor i = _\n  if false\n    s[] += x[i]\n  end\nend\n", env2);
  CHECK(out2["s"]->scalar_value().as_float() == 0.0);
}

TEST_CASE("run_program matches reference on fixed seeds") {
  gen::Rng rng(2024);
  int checked = 0;
  for (int trial = 0; trial < 60; ++trial) {
    auto fc = gen::random_program(rng);
    INFO("trial " << trial << "\n" << fc.source);
    std::string err = gen::check_fuzz_case(fc);
    CHECK(err == "");
    if (err.empty()) ++checked;
  }
  CHECK(checked == 60);
}

TEST_CASE("determinism: identical inputs give identical counters") {
  for (int rep = 0; rep < 2; ++rep) {
    gen::Rng rng(77);
    auto fc1 = gen::random_program(rng);
    RunResult r1 = run_program(fc1.source, fc1.env);
    gen::Rng rng2(77);
    auto fc2 = gen::random_program(rng2);
    RunResult r2 = run_program(fc2.source, fc2.env);
    CHECK(r1.counters.to_json() == r2.counters.to_json());
  }
}

TEST_CASE("counter sanity on a fully dense program") {
  int64_t n = 6, m = 5;
  ProgramEnv env;
  gen::Rng rng(3);
  env.tensors["A"] = gen::random_tensor(rng, "A", "Dense(Dense(Element(0.0)))", {n, m}, 1.0);
  env.tensors["s"] = make_tensor("s", "Element(0.0)");
  auto r = run_program("s .= 0.0\nfor j = _, i = _\n  s[] += A[i, j]\nend\n", env);
  // each assign executes n*m times and touches the A leaf and the scalar
  CHECK(r.counters.leaf_visits == 2 * n * m);
  CHECK(r.counters.value_loads == n * m);
}

TEST_CASE("byte-identical kernels across runs") {
  std::string k1, k2;
  for (int rep = 0; rep < 2; ++rep) {
    ProgramEnv env;
    gen::Rng rng(11);
    env.tensors["A"] =
        gen::random_tensor(rng, "A", "Dense(SparseList(Element(0.0)))", {6, 6}, 0.4);
    env.tensors["s"] = make_tensor("s", "Element(0.0)");
    RunOptions opt;
    opt.emit_kernel = true;
    opt.emit_looplets = true;  // force a fresh lowering
    auto r = run_program(
        "s .= 0.0\nfor j = _\n  for i = _\n    if i <= j\n      s[] += A[i, j]\n    "
        "end\n  end\nend\n",
        env, opt);
    (rep == 0 ? k1 : k2) = r.kernel_text;
  }
  CHECK(k1 == k2);
}

TEST_CASE("lifecycle and dimension errors carry their kinds") {
  ProgramEnv env;
  env.tensors["x"] = dense_vec("x", {1, 2});
  try {
    run_program("for i = _\n  x[i] += x[i]\nend\n", env);
    FAIL("expected a lifecycle error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Lifecycle);
  }
}
