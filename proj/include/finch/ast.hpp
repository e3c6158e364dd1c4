#pragma once

#include <memory>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "finch/ops.hpp"
#include "finch/value.hpp"

namespace finch {
namespace ast {

struct SrcLoc {
  int line = 0, col = 0;
  std::string at() const {
    if (line == 0) return "";
    return std::to_string(line) + ":" + std::to_string(col);
  }
};

struct Expr;
using ExprP = std::shared_ptr<const Expr>;
struct Stmt;
using StmtP = std::shared_ptr<const Stmt>;

// A named operator reference with an optional literal parameter, resolved
// against the registry when compiled (e.g. choose(0)).
struct OpRef {
  std::string name;
  ExprP param;
  OpRef() = default;
  explicit OpRef(std::string n) : name(std::move(n)) {}
  OpRef(std::string n, ExprP p) : name(std::move(n)), param(std::move(p)) {}
};

enum class WrapKind {
  Base,
  Offset,
  Toeplitz,
  Permissive,
  Protocolized,
  Window,
  Swizzle,
  UpTriMask,
  DiagMask,
};

enum class Protocol { Walk, Follow, Gallop };

inline const char* protocol_name(Protocol p) {
  switch (p) {
    case Protocol::Walk: return "walk";
    case Protocol::Follow: return "follow";
    case Protocol::Gallop: return "gallop";
  }
  return "?";
}

// An access target: a tensor name wrapped in zero or more wrappers, or a
// mask tensor. Swizzles are compiled away during wrapperization so they
// never appear here.
struct Target {
  WrapKind kind = WrapKind::Base;
  std::shared_ptr<const Target> inner;
  std::string tensor;                            // Base
  std::vector<ExprP> deltas;                     // Offset, one per mode
  int toeplitz_mode = 0;                         // Toeplitz, 1-based inserted mode
  std::vector<bool> permissive;                  // Permissive, one per mode
  std::vector<Protocol> protocols;               // Protocolized, one per mode
  std::vector<std::pair<ExprP, ExprP>> windows;  // Window, one per mode
  std::vector<int> perm;                         // Swizzle, a permutation of 1..rank
};
using TargetP = std::shared_ptr<const Target>;

enum class ExprKind { Lit, Var, Index, Extent, Dimless, Call, Access };

struct Expr {
  ExprKind kind;
  SrcLoc loc;
  Value lit;                // Lit
  std::string name;         // Var / Index
  OpRef op;                 // Call
  std::vector<ExprP> args;  // Call
  TargetP target;           // Access
  std::vector<ExprP> idx;   // Access (innermost mode first)
  ExprP lo, hi;             // Extent
};

enum class StmtKind { Assign, Loop, Define, Sieve, Block, Declare, Freeze, Thaw };

struct Stmt {
  StmtKind kind;
  SrcLoc loc;
  ExprP lhs;  // Assign: an Access
  OpRef op;
  ExprP rhs;
  std::string index;  // Loop
  ExprP ext;
  StmtP body;  // Loop / Define / Sieve
  std::string var;
  ExprP val;                 // Define
  ExprP cond;                // Sieve
  std::vector<StmtP> stmts;  // Block
  std::string tensor;        // Declare / Freeze / Thaw
  ExprP init;
  std::vector<ExprP> dims;  // Declare, filled by dimensionalization
};

// --- constructors --------------------------------------------------------------

inline ExprP lit(Value v, SrcLoc loc = {}) {
  auto e = std::make_shared<Expr>();
  e->kind = ExprKind::Lit;
  e->lit = v;
  e->loc = loc;
  return e;
}
inline ExprP lit_int(int64_t v) { return lit(Value::of_int(v)); }
inline ExprP var(std::string name, SrcLoc loc = {}) {
  auto e = std::make_shared<Expr>();
  e->kind = ExprKind::Var;
  e->name = std::move(name);
  e->loc = loc;
  return e;
}
inline ExprP index(std::string name, SrcLoc loc = {}) {
  auto e = std::make_shared<Expr>();
  e->kind = ExprKind::Index;
  e->name = std::move(name);
  e->loc = loc;
  return e;
}
inline ExprP dimless(SrcLoc loc = {}) {
  auto e = std::make_shared<Expr>();
  e->kind = ExprKind::Dimless;
  e->loc = loc;
  return e;
}
inline ExprP extent(ExprP lo, ExprP hi, SrcLoc loc = {}) {
  auto e = std::make_shared<Expr>();
  e->kind = ExprKind::Extent;
  e->lo = std::move(lo);
  e->hi = std::move(hi);
  e->loc = loc;
  return e;
}
inline ExprP call(OpRef op, std::vector<ExprP> args, SrcLoc loc = {}) {
  auto e = std::make_shared<Expr>();
  e->kind = ExprKind::Call;
  e->op = std::move(op);
  e->args = std::move(args);
  e->loc = loc;
  return e;
}
inline ExprP call(const std::string& op, std::vector<ExprP> args, SrcLoc loc = {}) {
  return call(OpRef(op), std::move(args), loc);
}
inline TargetP base_target(std::string tensor) {
  auto t = std::make_shared<Target>();
  t->kind = WrapKind::Base;
  t->tensor = std::move(tensor);
  return t;
}
inline ExprP access(TargetP target, std::vector<ExprP> idx, SrcLoc loc = {}) {
  auto e = std::make_shared<Expr>();
  e->kind = ExprKind::Access;
  e->target = std::move(target);
  e->idx = std::move(idx);
  e->loc = loc;
  return e;
}

inline StmtP assign(ExprP lhs, OpRef op, ExprP rhs, SrcLoc loc = {}) {
  auto s = std::make_shared<Stmt>();
  s->kind = StmtKind::Assign;
  s->lhs = std::move(lhs);
  s->op = std::move(op);
  s->rhs = std::move(rhs);
  s->loc = loc;
  return s;
}
inline StmtP loop(std::string index, ExprP ext, StmtP body, SrcLoc loc = {}) {
  auto s = std::make_shared<Stmt>();
  s->kind = StmtKind::Loop;
  s->index = std::move(index);
  s->ext = std::move(ext);
  s->body = std::move(body);
  s->loc = loc;
  return s;
}
inline StmtP define(std::string var, ExprP val, StmtP body, SrcLoc loc = {}) {
  auto s = std::make_shared<Stmt>();
  s->kind = StmtKind::Define;
  s->var = std::move(var);
  s->val = std::move(val);
  s->body = std::move(body);
  s->loc = loc;
  return s;
}
inline StmtP sieve(ExprP cond, StmtP body, SrcLoc loc = {}) {
  auto s = std::make_shared<Stmt>();
  s->kind = StmtKind::Sieve;
  s->cond = std::move(cond);
  s->body = std::move(body);
  s->loc = loc;
  return s;
}
inline StmtP block(std::vector<StmtP> stmts, SrcLoc loc = {}) {
  auto s = std::make_shared<Stmt>();
  s->kind = StmtKind::Block;
  s->stmts = std::move(stmts);
  s->loc = loc;
  return s;
}
inline StmtP declare(std::string tensor, ExprP init, std::vector<ExprP> dims = {},
                     SrcLoc loc = {}) {
  auto s = std::make_shared<Stmt>();
  s->kind = StmtKind::Declare;
  s->tensor = std::move(tensor);
  s->init = std::move(init);
  s->dims = std::move(dims);
  s->loc = loc;
  return s;
}
inline StmtP freeze_stmt(std::string tensor, SrcLoc loc = {}) {
  auto s = std::make_shared<Stmt>();
  s->kind = StmtKind::Freeze;
  s->tensor = std::move(tensor);
  s->loc = loc;
  return s;
}
inline StmtP thaw_stmt(std::string tensor, SrcLoc loc = {}) {
  auto s = std::make_shared<Stmt>();
  s->kind = StmtKind::Thaw;
  s->tensor = std::move(tensor);
  s->loc = loc;
  return s;
}

// --- printing --------------------------------------------------------------------

// Canonical text form: re-parsing it yields an equal tree, and equal trees
// print identically, so printed text doubles as a structural equality key.
class Printer {
 public:
  static std::string print_program(const StmtP& s) {
    Printer p;
    if (s->kind == StmtKind::Block) {
      for (auto& st : s->stmts) p.stmt(st, 0);
    } else {
      p.stmt(s, 0);
    }
    return p.out_.str();
  }
  static std::string print_expr(const ExprP& e) {
    Printer p;
    return p.expr(e, 0);
  }

 private:
  std::ostringstream out_;

  void line(int ind, const std::string& text) {
    for (int i = 0; i < ind; ++i) out_ << "  ";
    out_ << text << "\n";
  }

  void stmt_body(const StmtP& s, int ind) {
    if (s->kind == StmtKind::Block) {
      for (auto& st : s->stmts) stmt(st, ind);
    } else {
      stmt(s, ind);
    }
  }

  void stmt(const StmtP& s, int ind) {
    switch (s->kind) {
      case StmtKind::Block: {
        line(ind, "begin");
        for (auto& st : s->stmts) stmt(st, ind + 1);
        line(ind, "end");
        break;
      }
      case StmtKind::Loop: {
        line(ind, "for " + s->index + " = " + expr(s->ext, 0));
        stmt_body(s->body, ind + 1);
        line(ind, "end");
        break;
      }
      case StmtKind::Define: {
        line(ind, "let " + s->var + " = " + expr(s->val, 0));
        stmt_body(s->body, ind + 1);
        line(ind, "end");
        break;
      }
      case StmtKind::Sieve: {
        line(ind, "if " + expr(s->cond, 0));
        stmt_body(s->body, ind + 1);
        line(ind, "end");
        break;
      }
      case StmtKind::Assign: {
        line(ind, expr(s->lhs, 0) + " " + assign_op(s->op) + " " + expr(s->rhs, 0));
        break;
      }
      case StmtKind::Declare: {
        std::string t = s->tensor + " .= " + expr(s->init, 0);
        if (!s->dims.empty()) {
          t += "  # dims(";
          for (size_t k = 0; k < s->dims.size(); ++k) {
            if (k) t += ", ";
            t += expr(s->dims[k], 0);
          }
          t += ")";
        }
        line(ind, t);
        break;
      }
      case StmtKind::Freeze: line(ind, "@freeze(" + s->tensor + ")"); break;
      case StmtKind::Thaw: line(ind, "@thaw(" + s->tensor + ")"); break;
    }
  }

  static std::string assign_op(const OpRef& op) {
    if (op.name == "initwrite") return "=";
    if (op.name == "+") return "+=";
    if (op.name == "*") return "*=";
    if (op.name == "|" || op.name == "||") return "|=";
    if (op.name == "&" || op.name == "&&") return "&=";
    std::string inner = op.name;
    if (op.param) inner += "(" + Printer().expr(op.param, 0) + ")";
    return "<<" + inner + ">>=";
  }

  // Precedence levels: 1 = ||, 2 = &&, 3 = comparisons, 4 = + -, 5 = * /,
  // 6 = unary, 7 = postfix/primary.
  static int prec_of(const std::string& op) {
    if (op == "||") return 1;
    if (op == "&&") return 2;
    if (op == "==" || op == "!=" || op == "<" || op == "<=" || op == ">" || op == ">=") return 3;
    if (op == "+" || op == "-") return 4;
    if (op == "*" || op == "/") return 5;
    return 0;
  }

  std::string expr(const ExprP& e, int parent_prec) {
    switch (e->kind) {
      case ExprKind::Lit: return value_to_string(e->lit);
      case ExprKind::Var:
      case ExprKind::Index: return e->name;
      case ExprKind::Dimless: return "_";
      case ExprKind::Extent:
        return expr(e->lo, 6) + ":" + expr(e->hi, 6);
      case ExprKind::Call: {
        const std::string& op = e->op.name;
        int p = prec_of(op);
        if (p > 0 && e->args.size() == 2) {
          std::string s = expr(e->args[0], p) + " " + op + " " + expr(e->args[1], p + 1);
          if (p < parent_prec) s = "(" + s + ")";
          return s;
        }
        if (op == "!" && e->args.size() == 1) return "!" + expr(e->args[0], 7);
        if (op == "neg" && e->args.size() == 1) return "-" + expr(e->args[0], 7);
        if (op == "~" && e->args.size() == 1) return "~(" + expr(e->args[0], 0) + ")";
        std::string s = op;
        if (e->op.param) s += "";  // parameters print inside the arg list
        s += "(";
        bool first = true;
        if (e->op.param) {
          s += expr(e->op.param, 0);
          first = false;
        }
        for (auto& a : e->args) {
          if (!first) s += ", ";
          s += expr(a, 0);
          first = false;
        }
        s += ")";
        return s;
      }
      case ExprKind::Access: {
        std::string s = target(e->target);
        s += "[";
        for (size_t k = 0; k < e->idx.size(); ++k) {
          if (k) s += ", ";
          s += expr(e->idx[k], 0);
        }
        s += "]";
        return s;
      }
    }
    return "?";
  }

  std::string target(const TargetP& t) {
    switch (t->kind) {
      case WrapKind::Base: return t->tensor;
      case WrapKind::UpTriMask: return "uptrimask()";
      case WrapKind::DiagMask: return "diagmask()";
      case WrapKind::Offset: {
        std::string s = "offset(" + target(t->inner);
        for (auto& d : t->deltas) s += ", " + expr(d, 0);
        return s + ")";
      }
      case WrapKind::Toeplitz:
        return "toeplitz(" + target(t->inner) + ", " + std::to_string(t->toeplitz_mode) + ")";
      case WrapKind::Permissive: {
        std::string s = "permissive(" + target(t->inner);
        for (bool b : t->permissive) s += std::string(", ") + (b ? "true" : "false");
        return s + ")";
      }
      case WrapKind::Protocolized: {
        std::string s = "protocolized(" + target(t->inner);
        for (auto p : t->protocols) s += std::string(", ") + protocol_name(p);
        return s + ")";
      }
      case WrapKind::Window: {
        std::string s = "window(" + target(t->inner);
        for (auto& [lo, hi] : t->windows) s += ", " + expr(lo, 6) + ":" + expr(hi, 6);
        return s + ")";
      }
      case WrapKind::Swizzle: {
        std::string s = "swizzle(" + target(t->inner);
        for (int p : t->perm) s += ", " + std::to_string(p);
        return s + ")";
      }
    }
    return "?";
  }
};

inline std::string to_text(const StmtP& s) { return Printer::print_program(s); }
inline std::string to_text(const ExprP& e) { return Printer::print_expr(e); }

inline bool equal(const StmtP& a, const StmtP& b) { return to_text(a) == to_text(b); }
inline bool equal(const ExprP& a, const ExprP& b) { return to_text(a) == to_text(b); }

// Rank of an access target chain given the base tensor rank lookup.
// Toeplitz adds one mode; everything else preserves rank.

}  // namespace ast
}  // namespace finch
