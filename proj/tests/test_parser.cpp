#include <catch2/catch_amalgamated.hpp>

#include "finch/parser.hpp"

using namespace finch;

namespace {
std::string rt(const std::string& src) { return ast::to_text(parse(src)); }
}  // namespace

TEST_CASE("spmv listing parses to declare + two loops + reduction assign") {
  auto prog = parse(R"(
y .= 0
for j = _, i = _
  y[i] += A[i, j] * x[j]
end
)");
  REQUIRE(prog->kind == ast::StmtKind::Block);
  REQUIRE(prog->stmts.size() == 2);
  CHECK(prog->stmts[0]->kind == ast::StmtKind::Declare);
  auto outer = prog->stmts[1];
  REQUIRE(outer->kind == ast::StmtKind::Loop);
  CHECK(outer->index == "j");
  auto inner = outer->body;
  REQUIRE(inner->kind == ast::StmtKind::Loop);
  CHECK(inner->index == "i");
  auto asg = inner->body;
  REQUIRE(asg->kind == ast::StmtKind::Assign);
  CHECK(asg->op.name == "+");
  CHECK(asg->lhs->idx.size() == 1);
  CHECK(asg->lhs->idx[0]->kind == ast::ExprKind::Index);
  CHECK(asg->rhs->args[0]->idx.size() == 2);
}

TEST_CASE("general reduction assignment with parameter") {
  auto prog = parse("s[] <<min>>= x[i]\n");
  REQUIRE(prog->kind == ast::StmtKind::Assign);
  CHECK(prog->op.name == "min");
  CHECK(prog->lhs->idx.empty());

  auto prog2 = parse("P[k] <<choose(0)>>= j\n");
  REQUIRE(prog2->kind == ast::StmtKind::Assign);
  CHECK(prog2->op.name == "choose");
  REQUIRE(prog2->op.param);
  CHECK(prog2->op.param->lit.as_int() == 0);
}

TEST_CASE("round trip on listing-style programs") {
  std::vector<std::string> sources = {
      "y .= 0\nfor j = _, i = _\n  y[i] += A[i, j] * x[j]\nend\n",
      "s .= 0.0\nfor j = _\n  for i = _\n    if i <= j\n      s[] += A[i, j]\n    end\n  "
      "end\nend\n",
      "output .= false\nfor y = _\n  tmp .= false\n  for x = _\n    tmp[x] = "
      "coalesce(input[x, ~(y - 1)], true) & input[x, y] & coalesce(input[x, ~(y + 1)], "
      "true)\n  end\nend\n",
      "for i = _\n  A[I[i]] += 1\nend\n",
      "bins .= 0\nfor x = _, y = _\n  if mask[y, x]\n    bins[div(img[y, x], 16) + 1] += "
      "1\n  end\nend\n",
      "let d = dists_prev[j] + edges[i, j]\n  dists[i] <<min>>= d\n  active[i] |= d < "
      "dists_prev[i]\nend\n",
      "for k = _\n  if F[follow(j)] && AT[j, k]\n    p[] <<choose(0)>>= j\n  end\nend\n",
      "@thaw(x)\nfor i = _\n  x[i] += 1\nend\n@freeze(x)\n",
      "for i = 1:3\n  C[i, j] += A[i, k] * B[k, j]\nend\n",
      "for t = I[i]:I[i]\n  A[t] += 1\nend\n",
      "s[] += offset(A, -1, 0)[i, j]\n",
      "s[] += uptrimask()[i, j]\n",
      "y[i] = coalesce(permissive(x, true)[i], 0.0)\n",
      "s[] += swizzle(A, 2, 1)[i, j]\n",
      "s[] += A[gallop(i)] * B[walk(i)]\n",
  };
  for (auto& src : sources) {
    INFO(src);
    std::string once = rt(src);
    std::string twice = rt(once);
    CHECK(once == twice);
  }
}

TEST_CASE("parse errors carry positions") {
  CHECK_THROWS_WITH(parse("for i = \n"), Catch::Matchers::ContainsSubstring(":1:"));
  CHECK_THROWS_AS(parse("x + 1 = 2\n"), Error);
  CHECK_THROWS_AS(parse("for i = 1:2\n  y[i] += 1\n"), Error);  // missing end
}

TEST_CASE("loop binders become indices, lets stay vars") {
  auto prog = parse("for i = _\n  let v = x[i]\n    y[i] += v\n  end\nend\n");
  auto loop = prog;
  REQUIRE(loop->kind == ast::StmtKind::Loop);
  auto let = loop->body;
  REQUIRE(let->kind == ast::StmtKind::Define);
  auto asg = let->body;
  CHECK(asg->rhs->kind == ast::ExprKind::Var);
  CHECK(asg->lhs->idx[0]->kind == ast::ExprKind::Index);
}

TEST_CASE("dimensionless extent prints as underscore") {
  CHECK(rt("for i = _\n  y[i] += 1\nend\n") == "for i = _\n  y[i] += 1\nend\n");
}
