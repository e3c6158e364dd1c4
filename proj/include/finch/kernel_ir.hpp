#pragma once

#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "finch/levels.hpp"
#include "finch/ops.hpp"
#include "finch/value.hpp"

namespace finch {
namespace kir {

// A buffer of one level of one tensor, addressed from kernel code.
struct BufRef {
  std::string tensor;
  int depth = 0;  // root level = 0
  BufRole role = BufRole::Val;

  std::string display() const {
    std::string s = tensor;
    for (int d = 0; d < depth; ++d) s += ".lvl";
    return s + "." + buf_role_name(role);
  }
};

struct LvlRef {
  std::string tensor;
  int depth = 0;

  std::string display() const {
    std::string s = tensor;
    for (int d = 0; d < depth; ++d) s += ".lvl";
    return s;
  }
};

struct Expr;
using ExprP = std::shared_ptr<const Expr>;

enum class EK {
  Lit,     // literal value
  Var,     // local variable
  Load,    // buf[idx]
  Len,     // length of a buffer
  Call,    // operator application
  Search,  // first position in [lo, hi) of a sorted int buffer with value >= key
  Read,    // random-access tensor read at full coordinates
};

struct Expr {
  EK kind;
  Value lit;
  std::string var;
  mutable int slot = -1;  // frame slot, resolved before execution
  BufRef buf;
  Op op;
  std::vector<ExprP> args;  // Load:{idx} Search:{lo,hi,key} Read: coords Call: operands
  std::string tensor;       // Read
  // Instrumentation weight: number of leaf visits this expression's
  // evaluation represents. Dropped subtrees drop their ticks.
  int ticks = 0;
};

inline ExprP lit(Value v) {
  auto e = std::make_shared<Expr>();
  e->kind = EK::Lit;
  e->lit = v;
  return e;
}
inline ExprP lit_int(int64_t v) { return lit(Value::of_int(v)); }
inline ExprP var(const std::string& name) {
  auto e = std::make_shared<Expr>();
  e->kind = EK::Var;
  e->var = name;
  return e;
}
inline ExprP load(BufRef buf, ExprP idx, int ticks = 0) {
  auto e = std::make_shared<Expr>();
  e->kind = EK::Load;
  e->buf = std::move(buf);
  e->args = {std::move(idx)};
  e->ticks = ticks;
  return e;
}
inline ExprP buflen(BufRef buf) {
  auto e = std::make_shared<Expr>();
  e->kind = EK::Len;
  e->buf = std::move(buf);
  return e;
}
inline ExprP call(Op op, std::vector<ExprP> args) {
  auto e = std::make_shared<Expr>();
  e->kind = EK::Call;
  e->op = std::move(op);
  int t = 0;
  for (auto& a : args) t += a->ticks;
  e->ticks = t;
  e->args = std::move(args);
  return e;
}
inline ExprP call(const std::string& op, std::vector<ExprP> args) {
  return call(Op(op), std::move(args));
}
inline ExprP search(BufRef buf, ExprP lo, ExprP hi, ExprP key) {
  auto e = std::make_shared<Expr>();
  e->kind = EK::Search;
  e->buf = std::move(buf);
  e->args = {std::move(lo), std::move(hi), std::move(key)};
  return e;
}
inline ExprP tread(std::string tensor, std::vector<ExprP> coords) {
  auto e = std::make_shared<Expr>();
  e->kind = EK::Read;
  e->tensor = std::move(tensor);
  e->args = std::move(coords);
  e->ticks = 1;
  return e;
}
inline ExprP with_ticks(const ExprP& e, int ticks) {
  auto n = std::make_shared<Expr>(*e);
  n->ticks = ticks;
  return n;
}

struct Stmt;
using StmtP = std::shared_ptr<const Stmt>;

enum class SK {
  Seq,
  Let,      // introduce a variable
  LetSlot,  // var = builder_slot(lvl, pos, i): probes the next write slot
  SetVar,   // update an existing variable
  Store,    // buf[idx] = value
  For,      // for var = lo..hi (inclusive)
  While,    // while var <= bound, with a non-termination budget
  If,
  Intr,  // declare/freeze/thaw/commit
  Break,
  Tick,  // counter bump
};

enum class Intr { Declare, Freeze, Thaw, Commit };

enum class Counter { LeafVisits, StepperAdvances };

struct Stmt {
  SK kind;
  std::vector<StmtP> stmts;  // Seq
  std::string var;
  mutable int slot = -1;
  ExprP expr;  // Let/SetVar value
  BufRef buf;
  ExprP idx, val;  // Store
  ExprP lo, hi;    // For bounds
  StmtP body;
  int label = -1;        // For/While label, Break target
  ExprP bound, budget;   // While
  ExprP cond;            // If
  StmtP then_, else_;    // If
  Intr intr;             // Intr kind
  LvlRef lvl;            // Intr/LetSlot target
  std::string tensor;    // Intr declare/freeze/thaw
  std::vector<ExprP> args;
  Counter counter;  // Tick
  int amount = 0;   // Tick
};

inline StmtP seq(std::vector<StmtP> stmts) {
  auto s = std::make_shared<Stmt>();
  s->kind = SK::Seq;
  s->stmts = std::move(stmts);
  return s;
}
inline StmtP seq_labeled(std::vector<StmtP> stmts, int label) {
  auto s = std::make_shared<Stmt>();
  s->kind = SK::Seq;
  s->stmts = std::move(stmts);
  s->label = label;
  return s;
}
inline StmtP let(std::string var, ExprP e) {
  auto s = std::make_shared<Stmt>();
  s->kind = SK::Let;
  s->var = std::move(var);
  s->expr = std::move(e);
  return s;
}
inline StmtP let_slot(std::string var, LvlRef lvl, ExprP pos, ExprP i) {
  auto s = std::make_shared<Stmt>();
  s->kind = SK::LetSlot;
  s->var = std::move(var);
  s->lvl = std::move(lvl);
  s->args = {std::move(pos), std::move(i)};
  return s;
}
inline StmtP set_var(std::string var, ExprP e) {
  auto s = std::make_shared<Stmt>();
  s->kind = SK::SetVar;
  s->var = std::move(var);
  s->expr = std::move(e);
  return s;
}
inline StmtP store(BufRef buf, ExprP idx, ExprP val) {
  auto s = std::make_shared<Stmt>();
  s->kind = SK::Store;
  s->buf = std::move(buf);
  s->idx = std::move(idx);
  s->val = std::move(val);
  return s;
}
inline StmtP for_range(std::string var, ExprP lo, ExprP hi, StmtP body, int label = -1) {
  auto s = std::make_shared<Stmt>();
  s->kind = SK::For;
  s->var = std::move(var);
  s->lo = std::move(lo);
  s->hi = std::move(hi);
  s->body = std::move(body);
  s->label = label;
  return s;
}
inline StmtP while_leq(std::string var, ExprP bound, ExprP budget, StmtP body, int label = -1) {
  auto s = std::make_shared<Stmt>();
  s->kind = SK::While;
  s->var = std::move(var);
  s->bound = std::move(bound);
  s->budget = std::move(budget);
  s->body = std::move(body);
  s->label = label;
  return s;
}
inline StmtP if_(ExprP cond, StmtP then_, StmtP else_ = nullptr) {
  auto s = std::make_shared<Stmt>();
  s->kind = SK::If;
  s->cond = std::move(cond);
  s->then_ = std::move(then_);
  s->else_ = std::move(else_);
  return s;
}
inline StmtP intr(Intr which, LvlRef lvl, std::vector<ExprP> args, std::string tensor = "") {
  auto s = std::make_shared<Stmt>();
  s->kind = SK::Intr;
  s->intr = which;
  s->lvl = std::move(lvl);
  s->args = std::move(args);
  s->tensor = std::move(tensor);
  return s;
}
inline StmtP brk(int label) {
  auto s = std::make_shared<Stmt>();
  s->kind = SK::Break;
  s->label = label;
  return s;
}
inline StmtP tick(Counter c, int amount) {
  auto s = std::make_shared<Stmt>();
  s->kind = SK::Tick;
  s->counter = c;
  s->amount = amount;
  return s;
}

// --- printing: the stable grammar used by --emit kernel and golden tests ----

class KirPrinter {
 public:
  static std::string print(const StmtP& s) {
    KirPrinter p;
    p.stmt(s, 0);
    return p.out_.str();
  }
  static std::string print(const ExprP& e) {
    KirPrinter p;
    return p.expr(e);
  }

 private:
  std::ostringstream out_;
  void line(int ind, const std::string& t) {
    for (int i = 0; i < ind; ++i) out_ << "  ";
    out_ << t << "\n";
  }

  std::string expr(const ExprP& e) {
    switch (e->kind) {
      case EK::Lit: return value_to_string(e->lit);
      case EK::Var: return e->var;
      case EK::Load: return e->buf.display() + "[" + expr(e->args[0]) + "]";
      case EK::Len: return "len(" + e->buf.display() + ")";
      case EK::Search:
        return "searchsorted(" + e->buf.display() + ", " + expr(e->args[0]) + ", " +
               expr(e->args[1]) + ", " + expr(e->args[2]) + ")";
      case EK::Read: {
        std::string s = "read(" + e->tensor;
        for (auto& c : e->args) s += ", " + expr(c);
        return s + ")";
      }
      case EK::Call: {
        const std::string& n = e->op.name;
        bool infix = n == "+" || n == "-" || n == "*" || n == "/" || n == "==" || n == "!=" ||
                     n == "<" || n == "<=" || n == ">" || n == ">=" || n == "&&" || n == "||" ||
                     n == "&" || n == "|";
        if (infix && e->args.size() == 2)
          return "(" + expr(e->args[0]) + " " + n + " " + expr(e->args[1]) + ")";
        if (n == "!" && e->args.size() == 1) return "!" + expr(e->args[0]);
        std::string s = e->op.display() + "(";
        for (size_t k = 0; k < e->args.size(); ++k) {
          if (k) s += ", ";
          s += expr(e->args[k]);
        }
        return s + ")";
      }
    }
    return "?";
  }

  void stmt(const StmtP& s, int ind) {
    if (!s) return;
    switch (s->kind) {
      case SK::Seq:
        for (auto& st : s->stmts) stmt(st, ind);
        break;
      case SK::Let: line(ind, s->var + " = " + expr(s->expr)); break;
      case SK::LetSlot:
        line(ind, s->var + " = probe(" + s->lvl.display() + ", " + expr(s->args[0]) + ", " +
                      expr(s->args[1]) + ")");
        break;
      case SK::SetVar: line(ind, s->var + " := " + expr(s->expr)); break;
      case SK::Store:
        line(ind, s->buf.display() + "[" + expr(s->idx) + "] = " + expr(s->val));
        break;
      case SK::For:
        line(ind, "for " + s->var + " = " + expr(s->lo) + ":" + expr(s->hi));
        stmt(s->body, ind + 1);
        line(ind, "end");
        break;
      case SK::While:
        line(ind, "while " + s->var + " <= " + expr(s->bound));
        stmt(s->body, ind + 1);
        line(ind, "end");
        break;
      case SK::If:
        line(ind, "if " + expr(s->cond));
        stmt(s->then_, ind + 1);
        if (s->else_) {
          line(ind, "else");
          stmt(s->else_, ind + 1);
        }
        line(ind, "end");
        break;
      case SK::Intr: {
        std::string name = s->intr == Intr::Declare  ? "declare"
                           : s->intr == Intr::Freeze ? "freeze"
                           : s->intr == Intr::Thaw   ? "thaw"
                                                     : "commit";
        std::string t = name + "(";
        t += s->intr == Intr::Commit ? s->lvl.display() : s->tensor;
        for (auto& a : s->args) t += ", " + expr(a);
        line(ind, t + ")");
        break;
      }
      case SK::Break: line(ind, "break"); break;
      case SK::Tick:
        line(ind, std::string("tick(") +
                      (s->counter == Counter::LeafVisits ? "leaf_visits" : "stepper_advances") +
                      ", " + std::to_string(s->amount) + ")");
        break;
    }
  }
};

}  // namespace kir
}  // namespace finch
