#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "finch/env.hpp"
#include "finch/parser.hpp"

namespace finch {

// ===========================================================================
// Wrapperization: index arithmetic, permissive markers, protocol calls, and
// two-index comparisons become wrapper/mask tensor accesses. Swizzles are
// compiled away here.
// ===========================================================================

namespace passes {

using namespace ast;

struct WrapperizeCtx {
  const ProgramEnv* env;
  std::vector<std::string> loop_order;  // outer to inner

  int loop_depth(const std::string& name) const {
    for (size_t d = 0; d < loop_order.size(); ++d)
      if (loop_order[d] == name) return static_cast<int>(d);
    return -1;
  }
};

inline int target_rank(const TargetP& t, const ProgramEnv& env) {
  switch (t->kind) {
    case WrapKind::Base: {
      if (!env.has_tensor(t->tensor)) fail(ErrorKind::Exec, "unbound tensor " + t->tensor);
      return env.tensor(t->tensor)->rank();
    }
    case WrapKind::UpTriMask:
    case WrapKind::DiagMask: return 2;
    case WrapKind::Toeplitz: return target_rank(t->inner, env) + 1;
    default: return target_rank(t->inner, env);
  }
}

namespace detail {

// Counts Index nodes appearing outside nested accesses.
inline void naked_indices(const ExprP& e, std::vector<std::string>& out) {
  switch (e->kind) {
    case ExprKind::Index: out.push_back(e->name); break;
    case ExprKind::Call:
      for (auto& a : e->args) naked_indices(a, out);
      break;
    case ExprKind::Extent:
      naked_indices(e->lo, out);
      naked_indices(e->hi, out);
      break;
    default: break;
  }
}

inline bool index_free(const ExprP& e) {
  std::vector<std::string> v;
  naked_indices(e, v);
  return v.empty();
}

struct ModePlan {
  ExprP index;             // resulting index expression (Index or raw expr)
  ExprP delta;             // offset delta or null
  bool permissive = false;
  Protocol protocol = Protocol::Walk;
  bool has_protocol = false;
  ExprP toeplitz_second;   // second index of a j+k pair
};

// Classifies one access index expression.
inline ModePlan plan_mode(const ExprP& e) {
  ModePlan plan;
  ExprP cur = e;
  if (cur->kind == ExprKind::Call && cur->op.name == "~") {
    plan.permissive = true;
    cur = cur->args[0];
  }
  if (cur->kind == ExprKind::Call &&
      (cur->op.name == "follow" || cur->op.name == "walk" || cur->op.name == "gallop")) {
    plan.has_protocol = true;
    plan.protocol = cur->op.name == "follow"  ? Protocol::Follow
                    : cur->op.name == "gallop" ? Protocol::Gallop
                                               : Protocol::Walk;
    if (cur->args.size() != 1) fail(ErrorKind::Parse, "protocol takes one index");
    cur = cur->args[0];
  }
  // peel affine shifts: i + c, i - c, c + i, and j + k
  if (cur->kind == ExprKind::Call && (cur->op.name == "+" || cur->op.name == "-")) {
    bool minus = cur->op.name == "-";
    ExprP a = cur->args[0], b = cur->args[1];
    auto as_delta = [&](const ExprP& d, bool negate) -> ExprP {
      if (!negate) return d;
      if (d->kind == ExprKind::Lit && d->lit.is_int()) return lit(Value::of_int(-d->lit.i));
      return call("neg", {d});
    };
    if (a->kind == ExprKind::Index && index_free(b)) {
      plan.index = a;
      plan.delta = as_delta(b, minus);
      return plan;
    }
    if (!minus && b->kind == ExprKind::Index && index_free(a)) {
      plan.index = b;
      plan.delta = a;
      return plan;
    }
    if (!minus && a->kind == ExprKind::Index && b->kind == ExprKind::Index) {
      plan.index = a;
      plan.toeplitz_second = b;
      return plan;
    }
    // (j + k) +- c
    if (a->kind == ExprKind::Call && a->op.name == "+" && a->args.size() == 2 &&
        a->args[0]->kind == ExprKind::Index && a->args[1]->kind == ExprKind::Index &&
        index_free(b)) {
      plan.index = a->args[0];
      plan.toeplitz_second = a->args[1];
      plan.delta = as_delta(b, minus);
      return plan;
    }
  }
  std::vector<std::string> naked;
  naked_indices(cur, naked);
  if (cur->kind == ExprKind::Index || naked.empty()) {
    plan.index = cur;  // plain index or an index-free expression for concordization
    return plan;
  }
  fail(ErrorKind::UnsupportedIndex,
       "unsupported index expression " + to_text(cur) + " at " + cur->loc.at());
}

inline ExprP wrapperize_expr(const ExprP& e, WrapperizeCtx& ctx);

inline TargetP wrapperize_target_exprs(const TargetP& t, WrapperizeCtx& ctx) {
  if (!t) return t;
  auto n = std::make_shared<Target>(*t);
  n->inner = wrapperize_target_exprs(t->inner, ctx);
  for (auto& d : n->deltas) d = wrapperize_expr(d, ctx);
  for (auto& [lo, hi] : n->windows) {
    lo = wrapperize_expr(lo, ctx);
    hi = wrapperize_expr(hi, ctx);
  }
  return n;
}

// Rewrites one access into wrapper form.
inline ExprP wrapperize_access(const ExprP& e, WrapperizeCtx& ctx) {
  TargetP target = wrapperize_target_exprs(e->target, ctx);
  std::vector<ExprP> idx;
  for (auto& i : e->idx) idx.push_back(wrapperize_expr(i, ctx));

  // Swizzle is compiled during wrapperization rather than introduced by it.
  while (target->kind == WrapKind::Swizzle) {
    const auto& perm = target->perm;
    if (perm.size() != idx.size())
      fail(ErrorKind::Contract, "swizzle permutation does not match access arity");
    std::vector<ExprP> new_idx(idx.size());
    std::vector<bool> seen(idx.size(), false);
    for (size_t m = 0; m < perm.size(); ++m) {
      int p = perm[m];
      if (p < 1 || p > static_cast<int>(idx.size()) || seen[p - 1])
        fail(ErrorKind::Contract, "swizzle permutation invalid");
      seen[p - 1] = true;
      new_idx[m] = idx[p - 1];
    }
    // swizzle(A, perm)[idx...] == A[idx[perm]...]
    idx = std::move(new_idx);
    target = target->inner;
  }

  int rank = static_cast<int>(idx.size());
  std::vector<ModePlan> plans;
  plans.reserve(idx.size());
  for (auto& i : idx) plans.push_back(plan_mode(i));

  // Assemble wrapper layers (innermost applied first): toeplitz splits a
  // mode, then offsets shift, permissive pads, protocols annotate.
  std::vector<ExprP> out_idx;
  std::vector<ExprP> deltas;
  std::vector<bool> perm_flags;
  std::vector<Protocol> protocols;
  bool any_delta = false, any_perm = false, any_proto = false;
  std::vector<int> toeplitz_modes;  // in output mode numbering
  for (int m = 0; m < rank; ++m) {
    ModePlan& p = plans[m];
    out_idx.push_back(p.index);
    deltas.push_back(p.delta ? p.delta : lit_int(0));
    perm_flags.push_back(p.permissive);
    protocols.push_back(p.protocol);
    any_delta |= p.delta != nullptr;
    any_perm |= p.permissive;
    any_proto |= p.has_protocol;
    if (p.toeplitz_second) {
      out_idx.push_back(p.toeplitz_second);
      toeplitz_modes.push_back(static_cast<int>(out_idx.size()));
      deltas.push_back(lit_int(0));
      perm_flags.push_back(false);
      protocols.push_back(Protocol::Walk);
    }
  }

  for (int tm : toeplitz_modes) {
    auto t = std::make_shared<Target>();
    t->kind = WrapKind::Toeplitz;
    t->inner = target;
    t->toeplitz_mode = tm;
    target = t;
  }
  if (any_delta) {
    auto t = std::make_shared<Target>();
    t->kind = WrapKind::Offset;
    t->inner = target;
    t->deltas = deltas;
    target = t;
  }
  if (any_perm) {
    auto t = std::make_shared<Target>();
    t->kind = WrapKind::Permissive;
    t->inner = target;
    t->permissive = perm_flags;
    target = t;
  }
  if (any_proto) {
    auto t = std::make_shared<Target>();
    t->kind = WrapKind::Protocolized;
    t->inner = target;
    t->protocols = protocols;
    target = t;
  }
  return access(target, out_idx, e->loc);
}

// Rewrites comparisons between two bound indices into mask accesses,
// column-major; when the first index binds deeper the arguments swap.
inline ExprP wrapperize_comparison(const ExprP& e, WrapperizeCtx& ctx) {
  const std::string& op = e->op.name;
  ExprP a = e->args[0], b = e->args[1];
  if (a->kind != ExprKind::Index || b->kind != ExprKind::Index) return e;
  int da = ctx.loop_depth(a->name), db = ctx.loop_depth(b->name);
  if (da < 0 || db < 0 || da == db) return e;

  auto mask_access = [&](WrapKind kind, ExprP inner_idx, ExprP outer_idx) {
    auto t = std::make_shared<Target>();
    t->kind = kind;
    return wrapperize_access(access(t, {inner_idx, outer_idx}, e->loc), ctx);
  };
  auto shift = [&](const ExprP& i) { return call("-", {i, lit_int(1)}, e->loc); };
  auto neg = [&](ExprP x) { return call("!", {x}, e->loc); };

  bool a_outer = da < db;  // mask arguments reverse when the row index binds first
  if (op == "<=")
    return a_outer ? neg(mask_access(WrapKind::UpTriMask, b, shift(a)))
                   : mask_access(WrapKind::UpTriMask, a, b);
  if (op == "<")
    return a_outer ? neg(mask_access(WrapKind::UpTriMask, b, a))
                   : mask_access(WrapKind::UpTriMask, a, shift(b));
  if (op == ">=")
    return a_outer ? mask_access(WrapKind::UpTriMask, b, a)
                   : neg(mask_access(WrapKind::UpTriMask, a, shift(b)));
  if (op == ">")
    return a_outer ? mask_access(WrapKind::UpTriMask, b, shift(a))
                   : neg(mask_access(WrapKind::UpTriMask, a, b));
  if (op == "==")
    return a_outer ? mask_access(WrapKind::DiagMask, b, a) : mask_access(WrapKind::DiagMask, a, b);
  if (op == "!=")
    return a_outer ? neg(mask_access(WrapKind::DiagMask, b, a))
                   : neg(mask_access(WrapKind::DiagMask, a, b));
  return e;
}

inline ExprP wrapperize_expr(const ExprP& e, WrapperizeCtx& ctx) {
  switch (e->kind) {
    case ExprKind::Access: return wrapperize_access(e, ctx);
    case ExprKind::Call: {
      const std::string& op = e->op.name;
      if ((op == "<=" || op == "<" || op == ">=" || op == ">" || op == "==" || op == "!=") &&
          e->args.size() == 2) {
        ExprP rewritten = wrapperize_comparison(e, ctx);
        if (rewritten != e) return rewritten;
      }
      auto n = std::make_shared<Expr>(*e);
      for (auto& a : n->args) a = wrapperize_expr(a, ctx);
      return n;
    }
    case ExprKind::Extent: {
      auto n = std::make_shared<Expr>(*e);
      n->lo = wrapperize_expr(e->lo, ctx);
      n->hi = wrapperize_expr(e->hi, ctx);
      return n;
    }
    default: return e;
  }
}

inline StmtP wrapperize_stmt(const StmtP& s, WrapperizeCtx& ctx) {
  auto n = std::make_shared<Stmt>(*s);
  switch (s->kind) {
    case StmtKind::Loop: {
      n->ext = s->ext->kind == ExprKind::Dimless ? s->ext : wrapperize_expr(s->ext, ctx);
      ctx.loop_order.push_back(s->index);
      n->body = wrapperize_stmt(s->body, ctx);
      ctx.loop_order.pop_back();
      break;
    }
    case StmtKind::Define:
      n->val = wrapperize_expr(s->val, ctx);
      n->body = wrapperize_stmt(s->body, ctx);
      break;
    case StmtKind::Sieve:
      n->cond = wrapperize_expr(s->cond, ctx);
      n->body = wrapperize_stmt(s->body, ctx);
      break;
    case StmtKind::Assign:
      n->lhs = wrapperize_expr(s->lhs, ctx);
      n->rhs = wrapperize_expr(s->rhs, ctx);
      break;
    case StmtKind::Block:
      for (auto& st : n->stmts) st = wrapperize_stmt(st, ctx);
      break;
    case StmtKind::Declare:
      n->init = wrapperize_expr(s->init, ctx);
      break;
    default: break;
  }
  return n;
}

}  // namespace detail

inline StmtP wrapperize(const StmtP& program, const ProgramEnv& env) {
  WrapperizeCtx ctx{&env, {}};
  return detail::wrapperize_stmt(program, ctx);
}

// ===========================================================================
// Dimensionalization: resolves `_` loop extents and declaration dimensions
// by meeting loop bounds with the dimensions of right-hand-side accesses.
// ===========================================================================

struct DimEnv {
  std::map<std::string, Extent> index_dims;
  std::map<std::string, std::vector<Extent>> declare_dims;
  std::map<std::string, std::string> sources;  // index -> description of binding source
};

namespace detail {

struct DimCtx {
  const ProgramEnv* env;
  DimEnv dims;
  std::map<std::string, std::vector<Extent>> tensor_dims;  // evolving view
  bool changed = false;

  void meet_index(const std::string& idx, const Extent& e, const std::string& source) {
    if (e.is_dimless()) return;
    Extent& cur = dims.index_dims[idx];
    if (cur.is_dimless()) {
      cur = e;
      dims.sources[idx] = source;
      changed = true;
      return;
    }
    if (!(cur == e))
      fail(ErrorKind::Dimension, "index " + idx + " has conflicting dimensions " +
                                     cur.to_string() + " (" + dims.sources[idx] + ") vs " +
                                     e.to_string() + " (" + source + ")");
  }
};

// Dimensions of a wrapped target per mode; `_` where the wrapper erases them.
inline std::vector<Extent> target_dims(const TargetP& t, DimCtx& ctx) {
  switch (t->kind) {
    case WrapKind::Base: {
      auto it = ctx.tensor_dims.find(t->tensor);
      if (it != ctx.tensor_dims.end()) return it->second;
      return std::vector<Extent>(ctx.env->tensor(t->tensor)->rank(), Extent::dimensionless());
    }
    case WrapKind::UpTriMask:
    case WrapKind::DiagMask: return {Extent::dimensionless(), Extent::dimensionless()};
    case WrapKind::Toeplitz: {
      // mode tm is the added shift index; it and the split mode tm-1 are
      // both dimensionless.
      auto inner = target_dims(t->inner, ctx);
      int tm = t->toeplitz_mode;
      std::vector<Extent> out(inner.size() + 1, Extent::dimensionless());
      for (int m = 1; m <= static_cast<int>(out.size()); ++m) {
        if (m == tm || m == tm - 1) continue;
        out[m - 1] = inner[m <= tm ? m - 1 : m - 2];
      }
      return out;
    }
    case WrapKind::Offset: {
      auto inner = target_dims(t->inner, ctx);
      for (size_t m = 0; m < inner.size() && m < t->deltas.size(); ++m) {
        if (inner[m].is_dimless()) continue;
        auto d = try_eval_const(t->deltas[m], *ctx.env);
        if (!d) {
          inner[m] = Extent::dimensionless();
          continue;
        }
        // offset(tns, d)[i] == tns[i + d], so valid i shift by -d
        inner[m] = Extent(inner[m].lo - d->as_int(), inner[m].hi - d->as_int());
      }
      return inner;
    }
    case WrapKind::Permissive: {
      auto inner = target_dims(t->inner, ctx);
      for (size_t m = 0; m < inner.size() && m < t->permissive.size(); ++m)
        if (t->permissive[m]) inner[m] = Extent::dimensionless();
      return inner;
    }
    case WrapKind::Window: {
      auto inner = target_dims(t->inner, ctx);
      for (size_t m = 0; m < inner.size() && m < t->windows.size(); ++m) {
        auto lo = try_eval_const(t->windows[m].first, *ctx.env);
        auto hi = try_eval_const(t->windows[m].second, *ctx.env);
        if (lo && hi)
          inner[m] = Extent(1, hi->as_int() - lo->as_int() + 1);
        else
          inner[m] = Extent::dimensionless();
      }
      return inner;
    }
    case WrapKind::Protocolized: return target_dims(t->inner, ctx);
    case WrapKind::Swizzle: fail(ErrorKind::Contract, "swizzle survived wrapperization");
  }
  return {};
}

// Collects index constraints from read-side accesses.
inline void scan_reads(const ExprP& e, DimCtx& ctx) {
  switch (e->kind) {
    case ExprKind::Access: {
      auto dims = target_dims(e->target, ctx);
      for (size_t m = 0; m < e->idx.size(); ++m) {
        if (e->idx[m]->kind != ExprKind::Index) continue;
        if (m < dims.size())
          ctx.meet_index(e->idx[m]->name, dims[m],
                         "mode " + std::to_string(m + 1) + " of " + to_text(e));
      }
      break;
    }
    case ExprKind::Call:
      for (auto& a : e->args) scan_reads(a, ctx);
      break;
    case ExprKind::Extent:
      scan_reads(e->lo, ctx);
      scan_reads(e->hi, ctx);
      break;
    default: break;
  }
}

struct DeclareInfo {
  std::vector<Extent> dims;
  bool open = false;  // between declare and first read
};

struct DeclareTracker {
  DimCtx* ctx;
  std::map<std::string, DeclareInfo> open;

  // A declaration's dims settle at its first read (or explicit freeze).
  void settle(const std::string& name) {
    auto it = open.find(name);
    if (it == open.end() || !it->second.open) return;
    it->second.open = false;
    auto fallback = ctx->env->tensor(name)->dims();
    auto& dd = it->second.dims;
    size_t rank = static_cast<size_t>(ctx->env->tensor(name)->rank());
    std::vector<Extent> resolved(rank, Extent::dimensionless());
    bool ok = true;
    for (size_t m = 0; m < rank; ++m) {
      Extent e = m < dd.size() ? dd[m] : Extent::dimensionless();
      // when no write pins a mode, fall back to the bound tensor's dim
      if (e.is_dimless() && m < fallback.size()) e = fallback[m];
      if (e.is_dimless()) ok = false;
      resolved[m] = e;
    }
    if (ok) {
      auto it2 = ctx->dims.declare_dims.find(name);
      bool same = it2 != ctx->dims.declare_dims.end() && it2->second.size() == resolved.size();
      if (same)
        for (size_t m = 0; m < resolved.size(); ++m)
          if (!(it2->second[m] == resolved[m])) same = false;
      if (!same) {
        ctx->dims.declare_dims[name] = resolved;
        ctx->tensor_dims[name] = resolved;
        ctx->changed = true;
      }
    }
  }

  void settle_reads_in(const ExprP& e) {
    switch (e->kind) {
      case ExprKind::Access: {
        const Target* t = e->target.get();
        while (t->kind != WrapKind::Base && t->kind != WrapKind::UpTriMask &&
               t->kind != WrapKind::DiagMask)
          t = t->inner.get();
        if (t->kind == WrapKind::Base) settle(t->tensor);
        for (auto& i : e->idx) settle_reads_in(i);
        break;
      }
      case ExprKind::Call:
        for (auto& a : e->args) settle_reads_in(a);
        break;
      case ExprKind::Extent:
        settle_reads_in(e->lo);
        settle_reads_in(e->hi);
        break;
      default: break;
    }
  }
};

inline void dim_stmt(const StmtP& s, DimCtx& ctx, DeclareTracker& tracker) {
  switch (s->kind) {
    case StmtKind::Loop: {
      if (s->ext->kind == ExprKind::Extent) {
        auto lo = try_eval_const(s->ext->lo, *ctx.env);
        auto hi = try_eval_const(s->ext->hi, *ctx.env);
        if (lo && hi)
          ctx.meet_index(s->index, Extent(lo->as_int(), hi->as_int()), "loop bound");
      }
      dim_stmt(s->body, ctx, tracker);
      break;
    }
    case StmtKind::Define:
      tracker.settle_reads_in(s->val);
      scan_reads(s->val, ctx);
      dim_stmt(s->body, ctx, tracker);
      break;
    case StmtKind::Sieve:
      tracker.settle_reads_in(s->cond);
      scan_reads(s->cond, ctx);
      dim_stmt(s->body, ctx, tracker);
      break;
    case StmtKind::Assign: {
      tracker.settle_reads_in(s->rhs);
      scan_reads(s->rhs, ctx);
      if (s->op.param) scan_reads(s->op.param, ctx);
      const ExprP& lhs = s->lhs;
      for (auto& i : lhs->idx) {
        tracker.settle_reads_in(i);
        scan_reads(i, ctx);
      }
      // writes contribute to the open declaration of the target
      if (lhs->target->kind == WrapKind::Base) {
        auto it = tracker.open.find(lhs->target->tensor);
        if (it != tracker.open.end() && it->second.open) {
          auto& dd = it->second.dims;
          if (dd.size() < lhs->idx.size()) dd.resize(lhs->idx.size(), Extent::dimensionless());
          for (size_t m = 0; m < lhs->idx.size(); ++m) {
            if (lhs->idx[m]->kind != ExprKind::Index) continue;
            auto di = ctx.dims.index_dims.find(lhs->idx[m]->name);
            if (di == ctx.dims.index_dims.end() || di->second.is_dimless()) continue;
            Extent& cur = dd[m];
            if (cur.is_dimless()) {
              cur = di->second;
            } else {
              cur = meet(cur, di->second,
                         lhs->target->tensor + " mode " + std::to_string(m + 1));
            }
          }
        }
      }
      break;
    }
    case StmtKind::Block:
      for (auto& st : s->stmts) dim_stmt(st, ctx, tracker);
      break;
    case StmtKind::Declare: {
      auto& info = tracker.open[s->tensor];
      info.open = true;
      info.dims.assign(ctx.env->tensor(s->tensor)->rank(), Extent::dimensionless());
      break;
    }
    case StmtKind::Freeze: tracker.settle(s->tensor); break;
    default: break;
  }
}

// Rewrites `_` extents and fills declare dims from the computed environment.
inline StmtP apply_dims(const StmtP& s, DimCtx& ctx) {
  auto n = std::make_shared<Stmt>(*s);
  switch (s->kind) {
    case StmtKind::Loop: {
      auto it = ctx.dims.index_dims.find(s->index);
      if (s->ext->kind == ExprKind::Dimless) {
        if (it == ctx.dims.index_dims.end() || it->second.is_dimless())
          fail(ErrorKind::Dimension,
               "cannot resolve dimension of loop index " + s->index + " at " + s->loc.at());
        n->ext = extent(lit_int(it->second.lo), lit_int(it->second.hi), s->loc);
      } else if (s->ext->kind != ExprKind::Extent) {
        // bare expression: a single-point extent e:e
        n->ext = extent(s->ext, s->ext, s->loc);
      }
      n->body = apply_dims(s->body, ctx);
      break;
    }
    case StmtKind::Define: n->body = apply_dims(s->body, ctx); break;
    case StmtKind::Sieve: n->body = apply_dims(s->body, ctx); break;
    case StmtKind::Block:
      for (auto& st : n->stmts) st = apply_dims(st, ctx);
      break;
    case StmtKind::Declare: {
      auto it = ctx.dims.declare_dims.find(s->tensor);
      if (it != ctx.dims.declare_dims.end()) {
        n->dims.clear();
        for (const Extent& e : it->second)
          n->dims.push_back(extent(lit_int(e.lo), lit_int(e.hi), s->loc));
      } else {
        // never frozen in-program: fall back to the bound tensor's dims
        auto fallback = ctx.env->tensor(s->tensor)->dims();
        n->dims.clear();
        for (const Extent& e : fallback) {
          if (e.is_dimless())
            fail(ErrorKind::Dimension, "cannot infer dimensions of " + s->tensor);
          n->dims.push_back(extent(lit_int(e.lo), lit_int(e.hi), s->loc));
        }
      }
      break;
    }
    default: break;
  }
  return n;
}

}  // namespace detail

// The program must already be wrapperized. Iterates the single-pass rules to
// a fixpoint so declared tensors read by later statements resolve too.
inline std::pair<StmtP, DimEnv> dimensionalize(const StmtP& program, const ProgramEnv& env) {
  detail::DimCtx ctx{&env, {}, {}, false};
  for (auto& [name, t] : env.tensors) {
    bool has = false;
    for (auto& d : t->dims())
      if (!d.is_dimless()) has = true;
    if (has) ctx.tensor_dims[name] = t->dims();
  }
  for (int iter = 0; iter < 8; ++iter) {
    ctx.changed = false;
    detail::DeclareTracker tracker{&ctx, {}};
    detail::dim_stmt(program, ctx, tracker);
    // update epochs still open at program end settle here
    for (auto& [name, info] : tracker.open)
      if (info.open) tracker.settle(name);
    if (!ctx.changed) break;
  }
  StmtP out = detail::apply_dims(program, ctx);
  return {out, ctx.dims};
}

// ===========================================================================
// Concordization: every access must list its indices in reverse loop-nesting
// order (the root mode binds outermost). Discordant or expression-valued
// index positions get a fresh single-iteration loop wrapped around the
// statement.
// ===========================================================================

namespace detail {

struct ConcordCtx {
  std::vector<std::string> loop_order;  // outer to inner
  int fresh = 0;
  int depth_of(const std::string& name) const {
    for (size_t d = 0; d < loop_order.size(); ++d)
      if (loop_order[d] == name) return static_cast<int>(d);
    return -1;
  }
};

struct PointLoop {
  std::string var;
  ExprP expr;
};

// Plans rewrites for one access; offending index positions are replaced by
// fresh indices and recorded as point loops (outermost first).
inline ExprP concord_access(const ExprP& e, ConcordCtx& ctx, std::vector<PointLoop>& wraps) {
  int k = static_cast<int>(e->idx.size());
  std::vector<ExprP> idx = e->idx;
  int prev_depth = -1;
  bool rewritten = false;
  const int kInserted = 1 << 20;
  for (int m = k - 1; m >= 0; --m) {
    const ExprP& cur = idx[m];
    bool ok = cur->kind == ExprKind::Index;
    int d = ok ? ctx.depth_of(cur->name) : -1;
    if (ok && d < 0) fail(ErrorKind::Contract, "unbound index " + cur->name);
    if (ok && d > prev_depth) {
      prev_depth = d;
      continue;
    }
    // offending: wrap in a single-iteration loop
    std::string t = "t" + std::to_string(ctx.fresh++);
    wraps.push_back({t, cur});
    idx[m] = index(t, cur->loc);
    prev_depth = kInserted + static_cast<int>(wraps.size());
    rewritten = true;
  }
  if (!rewritten) return e;
  return access(e->target, idx, e->loc);
}

inline ExprP concord_expr(const ExprP& e, ConcordCtx& ctx, std::vector<PointLoop>& wraps) {
  switch (e->kind) {
    case ExprKind::Access: return concord_access(e, ctx, wraps);
    case ExprKind::Call: {
      auto n = std::make_shared<Expr>(*e);
      for (auto& a : n->args) a = concord_expr(a, ctx, wraps);
      return n;
    }
    default: return e;
  }
}

inline StmtP concord_stmt(const StmtP& s, ConcordCtx& ctx) {
  auto wrap = [&](StmtP stmt, std::vector<PointLoop>& wraps) {
    // generated loops nest with rootward modes outermost
    for (auto it = wraps.rbegin(); it != wraps.rend(); ++it)
      stmt = loop(it->var, extent(it->expr, it->expr, stmt->loc), stmt, stmt->loc);
    return stmt;
  };
  switch (s->kind) {
    case StmtKind::Loop: {
      auto n = std::make_shared<Stmt>(*s);
      ctx.loop_order.push_back(s->index);
      n->body = concord_stmt(s->body, ctx);
      ctx.loop_order.pop_back();
      return n;
    }
    case StmtKind::Define: {
      std::vector<PointLoop> wraps;
      auto n = std::make_shared<Stmt>(*s);
      n->val = concord_expr(s->val, ctx, wraps);
      n->body = concord_stmt(s->body, ctx);
      return wrap(n, wraps);
    }
    case StmtKind::Sieve: {
      std::vector<PointLoop> wraps;
      auto n = std::make_shared<Stmt>(*s);
      n->cond = concord_expr(s->cond, ctx, wraps);
      n->body = concord_stmt(s->body, ctx);
      return wrap(n, wraps);
    }
    case StmtKind::Assign: {
      std::vector<PointLoop> wraps;
      auto n = std::make_shared<Stmt>(*s);
      n->lhs = concord_expr(s->lhs, ctx, wraps);
      n->rhs = concord_expr(s->rhs, ctx, wraps);
      return wrap(n, wraps);
    }
    case StmtKind::Block: {
      auto n = std::make_shared<Stmt>(*s);
      for (auto& st : n->stmts) st = concord_stmt(st, ctx);
      return n;
    }
    default: return s;
  }
}

}  // namespace detail

inline StmtP concordize(const StmtP& program) {
  detail::ConcordCtx ctx;
  return detail::concord_stmt(program, ctx);
}

// ===========================================================================
// Life cycle automation: freeze/thaw statements are inserted in each
// tensor's declaring scope so every child scope sees one mode per tensor.
// ===========================================================================

namespace detail {

enum Usage { kNone = 0, kRead = 1, kWrite = 2, kBoth = 3 };

inline void usage_expr(const ExprP& e, const std::set<std::string>& skip,
                       std::map<std::string, int>& out) {
  switch (e->kind) {
    case ExprKind::Access: {
      const Target* t = e->target.get();
      while (t->kind != WrapKind::Base && t->kind != WrapKind::UpTriMask &&
             t->kind != WrapKind::DiagMask)
        t = t->inner.get();
      if (t->kind == WrapKind::Base && !skip.count(t->tensor)) out[t->tensor] |= kRead;
      for (auto& i : e->idx) usage_expr(i, skip, out);
      break;
    }
    case ExprKind::Call:
      for (auto& a : e->args) usage_expr(a, skip, out);
      break;
    case ExprKind::Extent:
      usage_expr(e->lo, skip, out);
      usage_expr(e->hi, skip, out);
      break;
    default: break;
  }
}

// Tensors declared inside a subtree manage their lifecycle locally and are
// excluded from the parent's view.
inline void declared_inside(const StmtP& s, std::set<std::string>& out) {
  switch (s->kind) {
    case StmtKind::Declare: out.insert(s->tensor); break;
    case StmtKind::Loop:
    case StmtKind::Define:
    case StmtKind::Sieve: declared_inside(s->body, out); break;
    case StmtKind::Block:
      for (auto& st : s->stmts) declared_inside(st, out);
      break;
    default: break;
  }
}

inline void usage_stmt(const StmtP& s, const std::set<std::string>& skip,
                       std::map<std::string, int>& out) {
  switch (s->kind) {
    case StmtKind::Assign: {
      usage_expr(s->rhs, skip, out);
      const Target* t = s->lhs->target.get();
      while (t->kind != WrapKind::Base && t->kind != WrapKind::UpTriMask &&
             t->kind != WrapKind::DiagMask)
        t = t->inner.get();
      if (t->kind == WrapKind::Base && !skip.count(t->tensor)) out[t->tensor] |= kWrite;
      for (auto& i : s->lhs->idx) usage_expr(i, skip, out);
      break;
    }
    case StmtKind::Loop:
      if (s->ext) usage_expr(s->ext, skip, out);
      usage_stmt(s->body, skip, out);
      break;
    case StmtKind::Define:
      usage_expr(s->val, skip, out);
      usage_stmt(s->body, skip, out);
      break;
    case StmtKind::Sieve:
      usage_expr(s->cond, skip, out);
      usage_stmt(s->body, skip, out);
      break;
    case StmtKind::Block:
      for (auto& st : s->stmts) usage_stmt(st, skip, out);
      break;
    case StmtKind::Declare:
      if (!skip.count(s->tensor)) out[s->tensor] |= kWrite;
      break;
    case StmtKind::Freeze:
    case StmtKind::Thaw:
      if (!skip.count(s->tensor)) out[s->tensor] |= kBoth;  // manual forms pin the scope
      break;
  }
}

struct LifecycleCtx {
  const ProgramEnv* env;
};

// Rewrites one scope block, inserting freeze/thaw between statements.
inline std::vector<StmtP> lifecycle_scope(const std::vector<StmtP>& stmts, LifecycleCtx& ctx,
                                          bool root);

inline StmtP lifecycle_into(const StmtP& s, LifecycleCtx& ctx) {
  switch (s->kind) {
    case StmtKind::Loop:
    case StmtKind::Define:
    case StmtKind::Sieve: {
      auto n = std::make_shared<Stmt>(*s);
      n->body = lifecycle_into(s->body, ctx);
      return n;
    }
    case StmtKind::Block: {
      auto inner = lifecycle_scope(s->stmts, ctx, false);
      auto n = std::make_shared<Stmt>(*s);
      n->stmts = std::move(inner);
      return n;
    }
    default: return s;
  }
}

inline std::vector<StmtP> lifecycle_scope(const std::vector<StmtP>& stmts, LifecycleCtx& ctx,
                                          bool root) {
  // Tensors declared directly in this block are managed here; tensors
  // declared in nested blocks are managed there.
  std::set<std::string> local;
  for (auto& s : stmts)
    if (s->kind == StmtKind::Declare) local.insert(s->tensor);
  std::map<std::string, Mode> mode;
  std::set<std::string> managed = local;
  if (root)
    for (auto& [name, t] : ctx.env->tensors) managed.insert(name);
  for (auto& name : managed) mode[name] = Mode::Read;

  std::vector<StmtP> out;
  for (auto& s : stmts) {
    // tensors declared in nested scopes of this statement manage themselves
    std::set<std::string> skip;
    if (s->kind != StmtKind::Declare) declared_inside(s, skip);
    std::map<std::string, int> used;
    usage_stmt(s, skip, used);

    if (s->kind == StmtKind::Freeze || s->kind == StmtKind::Thaw) {
      // manual forms must agree with the automatic pass
      if (!managed.count(s->tensor))
        fail(ErrorKind::Lifecycle,
             "mode of " + s->tensor + " may only change in its declaring scope");
      Mode cur = mode[s->tensor];
      if (s->kind == StmtKind::Freeze && cur != Mode::Update)
        fail(ErrorKind::Lifecycle, "freeze of " + s->tensor + " which is not in update mode");
      if (s->kind == StmtKind::Thaw && cur != Mode::Read)
        fail(ErrorKind::Lifecycle, "thaw of " + s->tensor + " which is not in read mode");
      mode[s->tensor] = s->kind == StmtKind::Freeze ? Mode::Read : Mode::Update;
      out.push_back(s);
      continue;
    }

    for (auto& [name, u] : used) {
      if (u == kBoth)
        fail(ErrorKind::Lifecycle, name + " appears on both left and right hand sides within "
                                          "the same child scope at " +
                                       s->loc.at());
      if (!managed.count(name)) continue;
      if (s->kind == StmtKind::Declare && name == s->tensor) {
        if (mode[name] == Mode::Update) out.push_back(freeze_stmt(name, s->loc));
        mode[name] = Mode::Update;
        continue;
      }
      if (u == kRead && mode[name] == Mode::Update) {
        out.push_back(freeze_stmt(name, s->loc));
        mode[name] = Mode::Read;
      } else if (u == kWrite && mode[name] == Mode::Read) {
        out.push_back(thaw_stmt(name, s->loc));
        mode[name] = Mode::Update;
      }
    }
    out.push_back(lifecycle_into(s, ctx));
  }
  // close every update epoch opened in this scope
  for (auto& [name, m] : mode)
    if (m == Mode::Update) out.push_back(freeze_stmt(name));
  return out;
}

}  // namespace detail

inline StmtP insert_lifecycles(const StmtP& program, const ProgramEnv& env) {
  detail::LifecycleCtx ctx{&env};
  std::vector<StmtP> stmts =
      program->kind == StmtKind::Block ? program->stmts : std::vector<StmtP>{program};
  auto out = detail::lifecycle_scope(stmts, ctx, true);
  return block(std::move(out), program->loc);
}

// ===========================================================================
// Normal-form check: access-with-indices, evaluable dimensions, concordant,
// lifecycle constraints.
// ===========================================================================

namespace detail {

struct NfCtx {
  std::vector<std::string> loop_order;
  std::set<std::string> bound;  // loop indices and let vars in scope
  std::map<std::string, Mode> mode;
  const ProgramEnv* env;
  std::vector<std::string>* violations;

  void flag(const std::string& what) { violations->push_back(what); }
};

inline void nf_free_names(const ExprP& e, std::vector<std::string>& out) {
  switch (e->kind) {
    case ExprKind::Var:
    case ExprKind::Index: out.push_back(e->name); break;
    case ExprKind::Call:
      for (auto& a : e->args) nf_free_names(a, out);
      break;
    case ExprKind::Extent:
      nf_free_names(e->lo, out);
      nf_free_names(e->hi, out);
      break;
    case ExprKind::Access:
      for (auto& i : e->idx) nf_free_names(i, out);
      break;
    default: break;
  }
}

inline void nf_expr(const ExprP& e, NfCtx& ctx, bool lhs) {
  switch (e->kind) {
    case ExprKind::Access: {
      int prev = -1;
      bool concordant = true;
      for (int m = static_cast<int>(e->idx.size()) - 1; m >= 0; --m) {
        if (e->idx[m]->kind != ExprKind::Index) {
          ctx.flag("access with non-index expression: " + to_text(e));
          concordant = false;
          break;
        }
        int d = -1;
        for (size_t k = 0; k < ctx.loop_order.size(); ++k)
          if (ctx.loop_order[k] == e->idx[m]->name) d = static_cast<int>(k);
        if (d < 0) {
          ctx.flag("unbound index " + e->idx[m]->name);
          concordant = false;
          break;
        }
        if (d <= prev) {
          ctx.flag("discordant access " + to_text(e));
          concordant = false;
          break;
        }
        prev = d;
      }
      (void)concordant;
      const Target* t = e->target.get();
      while (t->kind != WrapKind::Base && t->kind != WrapKind::UpTriMask &&
             t->kind != WrapKind::DiagMask)
        t = t->inner.get();
      if (t->kind == WrapKind::Base) {
        auto it = ctx.mode.find(t->tensor);
        Mode m = it != ctx.mode.end() ? it->second : Mode::Read;
        if (lhs && m != Mode::Update) ctx.flag(t->tensor + " written in read mode");
        if (!lhs && m != Mode::Read) ctx.flag(t->tensor + " read in update mode");
      } else if (lhs) {
        ctx.flag("mask tensors cannot be written");
      }
      if (!lhs)
        for (auto& i : e->idx) nf_expr(i, ctx, false);
      break;
    }
    case ExprKind::Call:
      for (auto& a : e->args) nf_expr(a, ctx, false);
      break;
    default: break;
  }
}

inline void nf_stmt(const StmtP& s, NfCtx& ctx) {
  switch (s->kind) {
    case StmtKind::Loop: {
      if (s->ext->kind != ExprKind::Extent) {
        ctx.flag("loop extent of " + s->index + " is not evaluable");
      } else {
        std::vector<std::string> names;
        nf_free_names(s->ext, names);
        for (auto& n : names)
          if (!ctx.bound.count(n) && !ctx.env->scalars.count(n))
            ctx.flag("loop extent of " + s->index + " references unbound " + n);
        nf_expr(s->ext->lo, ctx, false);
        nf_expr(s->ext->hi, ctx, false);
      }
      ctx.loop_order.push_back(s->index);
      ctx.bound.insert(s->index);
      nf_stmt(s->body, ctx);
      ctx.loop_order.pop_back();
      ctx.bound.erase(s->index);
      break;
    }
    case StmtKind::Define: {
      nf_expr(s->val, ctx, false);
      bool had = ctx.bound.count(s->var) > 0;
      ctx.bound.insert(s->var);
      nf_stmt(s->body, ctx);
      if (!had) ctx.bound.erase(s->var);
      break;
    }
    case StmtKind::Sieve:
      nf_expr(s->cond, ctx, false);
      nf_stmt(s->body, ctx);
      break;
    case StmtKind::Assign:
      nf_expr(s->lhs, ctx, true);
      for (auto& i : s->lhs->idx) nf_expr(i, ctx, false);
      nf_expr(s->rhs, ctx, false);
      break;
    case StmtKind::Block:
      for (auto& st : s->stmts) nf_stmt(st, ctx);
      break;
    case StmtKind::Declare: {
      if (s->dims.size() != static_cast<size_t>(ctx.env->tensor(s->tensor)->rank()))
        ctx.flag("declare of " + s->tensor + " lacks resolved dimensions");
      ctx.mode[s->tensor] = Mode::Update;
      break;
    }
    case StmtKind::Freeze: ctx.mode[s->tensor] = Mode::Read; break;
    case StmtKind::Thaw: ctx.mode[s->tensor] = Mode::Update; break;
  }
}

}  // namespace detail

inline std::vector<std::string> check_normal_form(const StmtP& program, const ProgramEnv& env) {
  std::vector<std::string> violations;
  detail::NfCtx ctx{{}, {}, {}, &env, &violations};
  detail::nf_stmt(program, ctx);
  return violations;
}

// The full normalization pipeline: wrapperize, dimensionalize, concordize,
// insert lifecycles. Pass order is fixed; no re-entry.
struct Normalized {
  StmtP program;
  DimEnv dims;
};

inline Normalized normalize(const StmtP& program, const ProgramEnv& env) {
  StmtP p = wrapperize(program, env);
  auto [q, dims] = dimensionalize(p, env);
  p = concordize(q);
  p = insert_lifecycles(p, env);
  return {p, dims};
}

}  // namespace passes

}  // namespace finch
