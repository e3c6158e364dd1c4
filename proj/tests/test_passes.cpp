#include <catch2/catch_amalgamated.hpp>

#include "finch/passes.hpp"

using namespace finch;

namespace {

TensorPtr bound(const std::string& name, const std::string& spec,
                std::vector<int64_t> dims = {}) {
  auto t = make_tensor(name, spec);
  if (!dims.empty()) {
    std::vector<Extent> es;
    for (int64_t n : dims) es.push_back(Extent::sized(n));
    t->declare(t->fill(), es);
    t->freeze();
  }
  return t;
}

}  // namespace

TEST_CASE("wrapperization of masks and offsets") {
  ProgramEnv env;
  env.tensors["A"] = bound("A", "Dense(SparseList(Element(0.0)))", {4, 4});
  env.tensors["s"] = bound("s", "Element(0.0)");
  auto prog = parse(
      "s .= 0.0\n"
      "for j = _, i = _\n"
      "  if i <= j\n"
      "    s[] += A[i - 1, j]\n"
      "  end\n"
      "end\n");
  auto w = passes::wrapperize(prog, env);
  std::string text = ast::to_text(w);
  CHECK(text.find("uptrimask()[i, j]") != std::string::npos);
  CHECK(text.find("offset(A, -1, 0)[i, j]") != std::string::npos);
}

TEST_CASE("wrapperization of toeplitz and permissive and protocols") {
  ProgramEnv env;
  env.tensors["A"] = bound("A", "SparseList(Element(0.0))", {8});
  env.tensors["x"] = bound("x", "Dense(Element(0.0))", {4});
  env.tensors["y"] = bound("y", "Dense(Element(0.0))", {4});
  auto t1 =
      passes::wrapperize(parse("for k = _, j = _\n  y[j] += A[j + k] * x[k]\nend\n"), env);
  CHECK(ast::to_text(t1).find("toeplitz(A, 2)[j, k]") != std::string::npos);

  auto t2 =
      passes::wrapperize(parse("for i = _\n  y[i] = coalesce(x[~(i - 1)], 0.0)\nend\n"), env);
  CHECK(ast::to_text(t2).find("permissive(offset(x, -1), true)[i]") != std::string::npos);

  auto t3 = passes::wrapperize(parse("for i = _\n  y[i] += A[gallop(i)]\nend\n"), env);
  CHECK(ast::to_text(t3).find("protocolized(A, gallop)[i]") != std::string::npos);

  auto bad = parse("for i = _, j = _\n  y[i] += A[i * j]\nend\n");
  CHECK_THROWS_AS(passes::wrapperize(bad, env), Error);
}

TEST_CASE("swizzle compiles away during wrapperization") {
  ProgramEnv env;
  env.tensors["A"] = bound("A", "Dense(Dense(Element(0.0)))", {3, 4});
  env.tensors["s"] = bound("s", "Element(0.0)");
  auto w = passes::wrapperize(parse("s[] += swizzle(A, 2, 1)[i, j]\n"), env);
  CHECK(ast::to_text(w).find("A[j, i]") != std::string::npos);
}

TEST_CASE("dimensionalization reproduces the 3x4 by 4x5 example") {
  ProgramEnv env;
  env.tensors["A"] = bound("A", "Dense(Dense(Element(0.0)))", {3, 4});
  env.tensors["B"] = bound("B", "Dense(Dense(Element(0.0)))", {4, 5});
  env.tensors["C"] = bound("C", "Dense(Dense(Element(0.0)))");
  auto prog = parse(
      "C .= 0\n"
      "for i = 1:3\n"
      "  for j = _\n"
      "    for k = _\n"
      "      C[i, j] += A[i, k] * B[k, j]\n"
      "    end\n"
      "  end\n"
      "end\n");
  auto w = passes::wrapperize(prog, env);
  auto [d, dims] = passes::dimensionalize(w, env);
  CHECK(dims.index_dims["i"] == Extent(1, 3));
  CHECK(dims.index_dims["j"] == Extent(1, 5));
  CHECK(dims.index_dims["k"] == Extent(1, 4));
  REQUIRE(dims.declare_dims.count("C"));
  REQUIRE(dims.declare_dims["C"].size() == 2);
  CHECK(dims.declare_dims["C"][0] == Extent(1, 3));
  CHECK(dims.declare_dims["C"][1] == Extent(1, 5));
}

TEST_CASE("single access resolves a dimensionless loop") {
  ProgramEnv env;
  env.tensors["x"] = bound("x", "Dense(Element(0.0))", {7});
  env.tensors["s"] = bound("s", "Element(0.0)");
  auto prog = parse("s .= 0.0\nfor i = _\n  s[] += x[i]\nend\n");
  auto [d, dims] = passes::dimensionalize(passes::wrapperize(prog, env), env);
  CHECK(dims.index_dims["i"] == Extent(1, 7));
}

TEST_CASE("conflicting dimensions raise an error naming both sources") {
  ProgramEnv env;
  env.tensors["x"] = bound("x", "Dense(Element(0.0))", {4});
  env.tensors["y"] = bound("y", "Dense(Element(0.0))", {5});
  env.tensors["s"] = bound("s", "Element(0.0)");
  auto prog = parse("s .= 0.0\nfor i = _\n  s[] += x[i] * y[i]\nend\n");
  CHECK_THROWS_WITH(passes::dimensionalize(passes::wrapperize(prog, env), env),
                    Catch::Matchers::ContainsSubstring("1:4") &&
                        Catch::Matchers::ContainsSubstring("1:5"));
}

TEST_CASE("unresolvable dimensionless loop errors") {
  ProgramEnv env;
  env.tensors["y"] = bound("y", "Dense(Element(0.0))");
  auto prog = parse("y .= 0.0\nfor i = _\n  y[i] += 1\nend\n");
  CHECK_THROWS_AS(passes::dimensionalize(passes::wrapperize(prog, env), env), Error);
}

TEST_CASE("offset shifts dimensions") {
  ProgramEnv env;
  env.tensors["x"] = bound("x", "Dense(Element(0.0))", {5});
  env.tensors["s"] = bound("s", "Element(0.0)");
  // offset(x, 1)[i] reads x[i + 1]; valid i runs 0:4
  auto prog = parse("s .= 0.0\nfor i = 0:4\n  s[] += x[i + 1]\nend\n");
  auto [d, dims] = passes::dimensionalize(passes::wrapperize(prog, env), env);
  CHECK(dims.index_dims["i"] == Extent(0, 4));
}

TEST_CASE("concordization inserts single-iteration loops") {
  ProgramEnv env;
  env.tensors["A"] = bound("A", "Dense(Dense(Element(0.0)))", {4, 4});
  env.tensors["s"] = bound("s", "Element(0.0)");
  auto prog = parse(
      "s .= 0.0\n"
      "for i = _\n"
      "  for j = _\n"
      "    s[] += A[i, j]\n"
      "  end\n"
      "end\n");
  auto norm =
      passes::concordize(passes::dimensionalize(passes::wrapperize(prog, env), env).first);
  std::string text = ast::to_text(norm);
  CHECK(text.find("for t0 = i:i") != std::string::npos);
  CHECK(text.find("A[t0, j]") != std::string::npos);

  auto good = parse(
      "s .= 0.0\n"
      "for j = _\n"
      "  for i = _\n"
      "    s[] += A[i, j]\n"
      "  end\n"
      "end\n");
  auto wd = passes::dimensionalize(passes::wrapperize(good, env), env).first;
  CHECK(ast::to_text(passes::concordize(wd)) == ast::to_text(wd));
}

TEST_CASE("concordization rewrites indirect accesses") {
  ProgramEnv env;
  env.tensors["A"] = bound("A", "Dense(Element(0.0))", {4});
  env.tensors["I"] = bound("I", "Dense(Element(0))", {4});
  auto prog = parse("for i = _\n  A[I[i]] += 1\nend\n");
  auto norm =
      passes::concordize(passes::dimensionalize(passes::wrapperize(prog, env), env).first);
  std::string text = ast::to_text(norm);
  CHECK(text.find("for t0 = I[i]:I[i]") != std::string::npos);
  CHECK(text.find("A[t0] += 1") != std::string::npos);
}

TEST_CASE("lifecycle automation reproduces the figure") {
  ProgramEnv env;
  env.tensors["x"] = bound("x", "Dense(Element(0.0))", {4});
  env.tensors["y"] = bound("y", "Dense(Element(0.0))", {4});
  auto prog = parse(
      "y .= 0\n"
      "for i = _\n"
      "  y[i] = x[i] + 1\n"
      "end\n"
      "for i = _\n"
      "  x[i] += 1\n"
      "  y[i] += 1\n"
      "end\n"
      "for i = _\n"
      "  x[i] += y[i]\n"
      "end\n");
  auto out = passes::insert_lifecycles(
      passes::dimensionalize(passes::wrapperize(prog, env), env).first, env);
  std::string text = ast::to_text(out);
  size_t thaw_x = text.find("@thaw(x)");
  size_t freeze_y = text.find("@freeze(y)");
  size_t freeze_x = text.find("@freeze(x)");
  REQUIRE(thaw_x != std::string::npos);
  REQUIRE(freeze_y != std::string::npos);
  REQUIRE(freeze_x != std::string::npos);
  CHECK(thaw_x < freeze_y);
  CHECK(freeze_y < freeze_x);
}

TEST_CASE("pure read program only freezes declared outputs") {
  ProgramEnv env;
  env.tensors["x"] = bound("x", "Dense(Element(0.0))", {4});
  env.tensors["s"] = bound("s", "Element(0.0)");
  auto prog = parse("s .= 0.0\nfor i = _\n  s[] += x[i]\nend\n");
  auto out = passes::insert_lifecycles(
      passes::dimensionalize(passes::wrapperize(prog, env), env).first, env);
  std::string text = ast::to_text(out);
  CHECK(text.find("@freeze(s)") != std::string::npos);
  CHECK(text.find("@freeze(x)") == std::string::npos);
  CHECK(text.find("@thaw") == std::string::npos);
}

TEST_CASE("mixed read and write in one child scope errors") {
  ProgramEnv env;
  env.tensors["x"] = bound("x", "Dense(Element(0.0))", {4});
  auto prog = parse("for i = _\n  x[i] += x[i]\nend\n");
  CHECK_THROWS_AS(
      passes::insert_lifecycles(
          passes::dimensionalize(passes::wrapperize(prog, env), env).first, env),
      Error);
}

TEST_CASE("manual lifecycle forms must agree with the pass") {
  ProgramEnv env;
  env.tensors["x"] = bound("x", "Dense(Element(0.0))", {4});
  auto bad = parse("@freeze(x)\n");
  CHECK_THROWS_AS(passes::insert_lifecycles(bad, env), Error);
  auto good = parse("@thaw(x)\nfor i = 1:4\n  x[i] += 1\nend\n@freeze(x)\n");
  auto out = passes::insert_lifecycles(
      passes::dimensionalize(passes::wrapperize(good, env), env).first, env);
  CHECK(ast::to_text(out).find("@thaw(x)") != std::string::npos);
}

TEST_CASE("full pipeline output passes the normal form check") {
  ProgramEnv env;
  env.tensors["A"] = bound("A", "Dense(SparseList(Element(0.0)))", {6, 6});
  env.tensors["s"] = bound("s", "Element(0.0)");
  auto prog = parse(
      "s .= 0.0\n"
      "for j = _\n"
      "  for i = _\n"
      "    if i <= j\n"
      "      s[] += A[i, j]\n"
      "    end\n"
      "  end\n"
      "end\n");
  auto norm = passes::normalize(prog, env);
  auto violations = passes::check_normal_form(norm.program, env);
  for (auto& v : violations) UNSCOPED_INFO(v);
  CHECK(violations.empty());
}

TEST_CASE("normal form check flags raw programs") {
  ProgramEnv env;
  env.tensors["A"] = bound("A", "Dense(Dense(Element(0.0)))", {4, 4});
  env.tensors["s"] = bound("s", "Element(0.0)");
  auto prog = parse("for i = 1:4\n  for j = 1:4\n    s[] += A[i, j]\n  end\nend\n");
  auto v1 = passes::check_normal_form(prog, env);
  CHECK(!v1.empty());
  auto prog2 = parse("for i = 1:4, j = 1:4\n  s[] += A[i + j, j]\nend\n");
  auto v2 = passes::check_normal_form(prog2, env);
  CHECK(!v2.empty());
}

TEST_CASE("passes are idempotent on their own output") {
  ProgramEnv env;
  env.tensors["A"] = bound("A", "Dense(SparseList(Element(0.0)))", {5, 5});
  env.tensors["x"] = bound("x", "Dense(Element(0.0))", {5});
  env.tensors["y"] = bound("y", "Dense(Element(0.0))");
  auto prog = parse("y .= 0\nfor j = _, i = _\n  y[i] += A[i, j] * x[j]\nend\n");
  auto w = passes::wrapperize(prog, env);
  CHECK(ast::to_text(passes::wrapperize(w, env)) == ast::to_text(w));
  auto d = passes::dimensionalize(w, env).first;
  CHECK(ast::to_text(passes::dimensionalize(d, env).first) == ast::to_text(d));
  auto c = passes::concordize(d);
  CHECK(ast::to_text(passes::concordize(c)) == ast::to_text(c));
}
