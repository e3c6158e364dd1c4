#pragma once

#include "finch/kernel_ir.hpp"

namespace finch {
namespace kir {

// Algebraic simplification to a fixed point: constant folding, annihilator
// collapse, identity elision, branch pruning. Ticks attached to dropped
// subtrees vanish with them.

inline bool is_lit(const ExprP& e) { return e && e->kind == EK::Lit; }
inline bool is_lit(const ExprP& e, const Value& v) {
  return is_lit(e) && (bits_equal(e->lit, v) || values_equal(e->lit, v));
}
inline bool is_true(const ExprP& e) { return is_lit(e) && e->lit.is_bool() && e->lit.b; }
inline bool is_false(const ExprP& e) { return is_lit(e) && e->lit.is_bool() && !e->lit.b; }

inline ExprP simplify(const ExprP& e) {
  if (!e) return e;
  if (e->kind != EK::Call) {
    if (e->kind == EK::Load || e->kind == EK::Search || e->kind == EK::Read) {
      auto n = std::make_shared<Expr>(*e);
      int t = n->ticks;
      bool changed = false;
      for (auto& a : n->args) {
        auto sa = simplify(a);
        if (sa != a) changed = true;
        a = sa;
      }
      n->ticks = t;
      return changed ? ExprP(n) : e;
    }
    return e;
  }
  auto n = std::make_shared<Expr>(*e);
  for (auto& a : n->args) a = simplify(a);
  const std::string& op = n->op.name;

  // internal bit comparisons fold only on literals
  if (op == "__bitseq" || op == "__bitsne") {
    if (is_lit(n->args[0]) && is_lit(n->args[1])) {
      bool eq = bits_equal(n->args[0]->lit, n->args[1]->lit);
      return lit(Value::of_bool(op == "__bitseq" ? eq : !eq));
    }
    return n;
  }

  // all-literal arguments fold
  bool all_lit = true;
  for (auto& a : n->args) all_lit &= is_lit(a);
  if (all_lit && !n->args.empty()) {
    std::vector<Value> vals;
    for (auto& a : n->args) vals.push_back(a->lit);
    try {
      return lit(apply_op(n->op, vals));
    } catch (const Error&) {
      // leave unfolded; the evaluator will surface the error with context
    }
  }

  if (op == "ifelse" && n->args.size() == 3) {
    if (is_true(n->args[0])) return n->args[1];
    if (is_false(n->args[0])) return n->args[2];
  }
  if ((op == "&&" || op == "&") && n->args.size() == 2) {
    if (is_false(n->args[0]) || is_false(n->args[1])) return lit(Value::of_bool(false));
    if (is_true(n->args[0])) return n->args[1];
    if (is_true(n->args[1])) return n->args[0];
  }
  if ((op == "||" || op == "|") && n->args.size() == 2) {
    if (is_true(n->args[0]) || is_true(n->args[1])) return lit(Value::of_bool(true));
    if (is_false(n->args[0])) return n->args[1];
    if (is_false(n->args[1])) return n->args[0];
  }
  if (op == "!" && n->args.size() == 1 && is_lit(n->args[0]))
    return lit(Value::of_bool(!n->args[0]->lit.as_bool()));
  if (op == "coalesce") {
    // drop leading missing arguments; a leading non-missing literal wins
    std::vector<ExprP> args;
    for (auto& a : n->args) {
      if (is_lit(a) && a->lit.is_missing()) continue;
      args.push_back(a);
    }
    if (args.size() == 1) return args[0];
    if (args.empty()) return lit(Value::missing());
    if (args.size() != n->args.size()) return simplify(call(n->op, args));
  }

  if (n->args.size() == 2) {
    const OpInfo* info = OpRegistry::instance().find(op);
    if (info) {
      // annihilator collapse
      if (info->annihilator) {
        if (is_lit(n->args[0], *info->annihilator) || is_lit(n->args[1], *info->annihilator))
          return lit(*info->annihilator);
      }
      // identity elision
      if (info->identity) {
        if (is_lit(n->args[1], *info->identity)) return n->args[0];
        if (info->commutative && is_lit(n->args[0], *info->identity)) return n->args[1];
      }
    }
    // min(x, +Inf) handled through the identity above; x - 0 folds here
    if (op == "-" && is_lit(n->args[1], Value::of_int(0))) return n->args[0];
  }
  if (op == "initwrite" && n->args.size() == 2) return n->args[1];
  if (op == "choose" && n->args.size() == 2 && n->op.has_param) {
    if (is_lit(n->args[0]) && bits_equal(n->args[0]->lit, n->op.param)) return n->args[1];
    if (is_lit(n->args[0])) return n->args[0];
  }
  if (op == "neg" && n->args.size() == 1 && is_lit(n->args[0])) {
    const Value& v = n->args[0]->lit;
    if (v.is_int()) return lit(Value::of_int(-v.i));
    if (v.is_float()) return lit(Value::of_float(-v.f));
  }
  // min/max of syntactically equal arguments
  if ((op == "min" || op == "max") && n->args.size() == 2 &&
      KirPrinter::print(n->args[0]) == KirPrinter::print(n->args[1]))
    return n->args[0];

  int t = 0;
  for (auto& a : n->args) t += a->ticks;
  n->ticks = t;
  return n;
}

inline bool is_empty(const StmtP& s) {
  if (!s) return true;
  if (s->kind == SK::Seq) {
    for (auto& st : s->stmts)
      if (!is_empty(st)) return false;
    return true;
  }
  return false;
}

// Statement-level cleanup: prunes statically false branches, statically
// empty loops, and loops whose body vanished.
inline StmtP simplify_stmt(const StmtP& s) {
  if (!s) return s;
  switch (s->kind) {
    case SK::Seq: {
      std::vector<StmtP> out;
      for (auto& st : s->stmts) {
        auto t = simplify_stmt(st);
        if (is_empty(t)) continue;
        if (t->kind == SK::Seq && t->label < 0)
          for (auto& u : t->stmts) out.push_back(u);
        else
          out.push_back(t);
      }
      if (s->label >= 0) {
        if (out.empty()) return seq({});
        return seq_labeled(std::move(out), s->label);
      }
      if (out.empty()) return seq({});
      if (out.size() == 1) return out[0];
      return seq(std::move(out));
    }
    case SK::If: {
      auto c = simplify(s->cond);
      auto then_ = simplify_stmt(s->then_);
      auto else_ = simplify_stmt(s->else_);
      if (is_true(c)) return then_ ? then_ : seq({});
      if (is_false(c)) return else_ ? else_ : seq({});
      if (is_empty(then_) && is_empty(else_)) return seq({});
      auto n = std::make_shared<Stmt>(*s);
      n->cond = c;
      n->then_ = then_;
      n->else_ = is_empty(else_) ? nullptr : else_;
      return n;
    }
    case SK::For: {
      auto lo = simplify(s->lo), hi = simplify(s->hi);
      auto body = simplify_stmt(s->body);
      if (is_empty(body)) return seq({});
      if (is_lit(lo) && is_lit(hi) && lo->lit.as_int() > hi->lit.as_int()) return seq({});
      // single-iteration loops collapse to a binding
      bool single = (is_lit(lo) && is_lit(hi) && lo->lit.as_int() == hi->lit.as_int()) ||
                    KirPrinter::print(lo) == KirPrinter::print(hi);
      if (single && s->label < 0) return seq({let(s->var, lo), body});
      auto n = std::make_shared<Stmt>(*s);
      n->lo = lo;
      n->hi = hi;
      n->body = body;
      return n;
    }
    case SK::While: {
      auto n = std::make_shared<Stmt>(*s);
      n->bound = simplify(s->bound);
      n->budget = simplify(s->budget);
      n->body = simplify_stmt(s->body);
      return n;
    }
    case SK::Let:
    case SK::SetVar: {
      auto n = std::make_shared<Stmt>(*s);
      n->expr = simplify(s->expr);
      return n;
    }
    case SK::Store: {
      auto n = std::make_shared<Stmt>(*s);
      n->idx = simplify(s->idx);
      n->val = simplify(s->val);
      return n;
    }
    case SK::LetSlot:
    case SK::Intr: {
      auto n = std::make_shared<Stmt>(*s);
      for (auto& a : n->args) a = simplify(a);
      return n;
    }
    default: return s;
  }
}

// True when executing the statement can change observable state (stores,
// commits, ticks, breaks, variable updates). Pure lets are not effectful.
inline bool effectful(const StmtP& s) {
  if (!s) return false;
  switch (s->kind) {
    case SK::Let: return false;
    case SK::Seq:
      for (auto& st : s->stmts)
        if (effectful(st)) return true;
      return false;
    case SK::If: return effectful(s->then_) || effectful(s->else_);
    case SK::For:
    case SK::While: return effectful(s->body);
    default: return true;
  }
}

namespace detail {

inline void used_vars_expr(const ExprP& e, std::set<std::string>& out) {
  if (!e) return;
  if (e->kind == EK::Var) out.insert(e->var);
  for (auto& a : e->args) used_vars_expr(a, out);
}

inline void used_vars(const StmtP& s, std::set<std::string>& out) {
  if (!s) return;
  if (s->kind == SK::While || s->kind == SK::SetVar) out.insert(s->var);
  used_vars_expr(s->expr, out);
  used_vars_expr(s->idx, out);
  used_vars_expr(s->val, out);
  used_vars_expr(s->lo, out);
  used_vars_expr(s->hi, out);
  used_vars_expr(s->bound, out);
  used_vars_expr(s->budget, out);
  used_vars_expr(s->cond, out);
  for (auto& a : s->args) used_vars_expr(a, out);
  for (auto& st : s->stmts) used_vars(st, out);
  used_vars(s->body, out);
  used_vars(s->then_, out);
  used_vars(s->else_, out);
}

inline StmtP drop_dead_lets(const StmtP& s, const std::set<std::string>& used) {
  if (!s) return s;
  switch (s->kind) {
    case SK::Let:
      if (!used.count(s->var)) return seq({});
      return s;
    case SK::Seq: {
      auto n = std::make_shared<Stmt>(*s);
      for (auto& st : n->stmts) st = drop_dead_lets(st, used);
      return n;
    }
    case SK::If: {
      auto n = std::make_shared<Stmt>(*s);
      n->then_ = drop_dead_lets(s->then_, used);
      n->else_ = drop_dead_lets(s->else_, used);
      return n;
    }
    case SK::For:
    case SK::While: {
      auto n = std::make_shared<Stmt>(*s);
      n->body = drop_dead_lets(s->body, used);
      return n;
    }
    default: return s;
  }
}

}  // namespace detail

// Removes pure lets whose variable is never read, to a fixed point.
inline StmtP eliminate_dead_lets(StmtP s) {
  for (int round = 0; round < 8; ++round) {
    std::set<std::string> used;
    detail::used_vars(s, used);
    StmtP next = simplify_stmt(detail::drop_dead_lets(s, used));
    if (KirPrinter::print(next) == KirPrinter::print(s)) return next;
    s = next;
  }
  return s;
}

}  // namespace kir
}  // namespace finch
