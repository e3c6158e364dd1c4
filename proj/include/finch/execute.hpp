#pragma once

#include <mutex>

#include "finch/interp.hpp"
#include "finch/lower.hpp"
#include "finch/parser.hpp"

namespace finch {

struct RunOptions {
  bool emit_kernel = false;
  bool emit_looplets = false;
};

struct RunResult {
  std::map<std::string, TensorPtr> outputs;  // tensors declared by the program, frozen
  Counters counters;
  std::string kernel_text;
  std::string looplet_text;
  ast::StmtP normalized;
};

// Equal programs with equal formats produce equal keys; lowering is memoized
// on the key. Dimensions and scalar parameters are baked into the normalized
// text, so they participate naturally.
inline std::string kernel_cache_key(const ast::StmtP& normalized, const ProgramEnv& env) {
  std::string key = ast::to_text(normalized);
  key += "\n#formats:" + env.format_signature();
  for (auto& [name, v] : env.scalars) key += name + "=" + value_to_string(v) + ";";
  return key;
}

namespace detail {

class KernelCache {
 public:
  static KernelCache& instance() {
    static KernelCache c;
    return c;
  }
  kir::StmtP find(const std::string& key) {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = cache_.find(key);
    return it == cache_.end() ? nullptr : it->second;
  }
  void put(const std::string& key, kir::StmtP kernel) {
    std::lock_guard<std::mutex> lock(mu_);
    cache_[key] = std::move(kernel);
  }
  int64_t lowerings = 0;  // instrumentation for the memoization tests

 private:
  std::mutex mu_;
  std::map<std::string, kir::StmtP> cache_;
};

inline void collect_declared(const ast::StmtP& s, std::set<std::string>& out) {
  switch (s->kind) {
    case ast::StmtKind::Declare: out.insert(s->tensor); break;
    case ast::StmtKind::Block:
      for (auto& st : s->stmts) collect_declared(st, out);
      break;
    case ast::StmtKind::Loop:
    case ast::StmtKind::Define:
    case ast::StmtKind::Sieve: collect_declared(s->body, out); break;
    default: break;
  }
}

}  // namespace detail

inline RunResult run_program(const ast::StmtP& program, ProgramEnv& env, RunOptions opt = {}) {
  passes::Normalized norm = passes::normalize(program, env);
  auto violations = passes::check_normal_form(norm.program, env);
  if (!violations.empty())
    fail(ErrorKind::Contract, "normalized program violates normal form: " + violations[0]);

  std::string key = kernel_cache_key(norm.program, env);
  kir::StmtP kernel = detail::KernelCache::instance().find(key);
  RunResult result;
  if (!kernel || opt.emit_looplets) {
    Lowerer lowerer(env);
    lowerer.dump_looplets = opt.emit_looplets;
    kernel = lowerer.lower_program(norm.program);
    detail::KernelCache::instance().put(key, kernel);
    detail::KernelCache::instance().lowerings += 1;
    result.looplet_text = lowerer.looplet_dump;
  }
  result.normalized = norm.program;
  if (opt.emit_kernel) result.kernel_text = kir::KirPrinter::print(kernel);

  kir::Interp interp(kernel, env, result.counters);
  interp.run();

  std::set<std::string> declared;
  detail::collect_declared(norm.program, declared);
  for (auto& name : declared) result.outputs[name] = env.tensor(name);
  return result;
}

inline RunResult run_program(const std::string& source, ProgramEnv& env, RunOptions opt = {},
                             const std::string& file = "<input>") {
  return run_program(parse(source, file), env, opt);
}

// ===========================================================================
// Reference interpreter: direct dense evaluation of the wrapperized and
// dimensionalized program under the denotational semantics. Loops enumerate
// their full extents, tensors read as total functions, and no structure is
// exploited. This is the oracle the lowered path is checked against.
// ===========================================================================

class Reference {
 public:
  explicit Reference(ProgramEnv& env) : env_(env) {}

  static constexpr int64_t kStepLimit = 10000000;

  std::map<std::string, TensorPtr> eval(const ast::StmtP& program) {
    StmtP prepared;
    {
      ast::StmtP w = passes::wrapperize(program, env_);
      prepared = passes::dimensionalize(w, env_).first;
    }
    exec(prepared);
    std::map<std::string, TensorPtr> out;
    for (auto& [name, sh] : shadows_) out[name] = materialize(name, sh);
    return out;
  }

 private:
  using StmtP = ast::StmtP;
  using ExprP = ast::ExprP;

  struct Shadow {
    std::vector<Extent> dims;
    Value fill;
    std::map<std::vector<int64_t>, Value> data;
  };

  ProgramEnv& env_;
  std::map<std::string, Shadow> shadows_;
  std::map<std::string, Value> vars_;
  int64_t steps_ = 0;

  void budget() {
    if (++steps_ > kStepLimit)
      fail(ErrorKind::Exec, "reference interpreter exceeded its iteration budget");
  }

  TensorPtr materialize(const std::string& name, const Shadow& sh) {
    std::string spec;
    for (size_t m = 0; m < sh.dims.size(); ++m) spec += "Dense(";
    spec += "Element(" + value_to_string(sh.fill) + ")";
    for (size_t m = 0; m < sh.dims.size(); ++m) spec += ")";
    auto t = make_tensor(name, spec);
    t->declare(sh.fill, sh.dims);
    for (auto& [coords, v] : sh.data) {
      bool inside = true;
      for (size_t m = 0; m < coords.size(); ++m) inside &= sh.dims[m].contains(coords[m]);
      if (!inside) continue;
      poke(*t, coords, v);
    }
    t->freeze();
    return t;
  }

  Shadow& writable(const std::string& name) {
    auto it = shadows_.find(name);
    if (it != shadows_.end()) return it->second;
    // first write to a bound tensor: copy its content in (an implicit thaw)
    TensorPtr t = env_.tensor(name);
    Shadow sh;
    sh.dims = t->dims();
    sh.fill = t->fill();
    if (t->rank() == 0) {
      sh.data[{}] = t->scalar_value();
    } else {
      t->for_each_entry([&](const std::vector<int64_t>& coords, Value v) {
        sh.data[coords] = v;
      });
    }
    return shadows_[name] = std::move(sh);
  }

  Value read_tensor(const std::string& name, const std::vector<int64_t>& coords) {
    auto it = shadows_.find(name);
    if (it != shadows_.end()) {
      auto& sh = it->second;
      for (size_t m = 0; m < coords.size(); ++m)
        if (!sh.dims[m].contains(coords[m])) return sh.fill;
      auto d = sh.data.find(coords);
      return d == sh.data.end() ? sh.fill : d->second;
    }
    TensorPtr t = env_.tensor(name);
    for (size_t m = 0; m < coords.size(); ++m)
      if (!t->dims()[m].contains(coords[m])) return t->fill();
    if (t->rank() == 0) return t->scalar_value();
    return t->read(coords);
  }

  // Applies the wrapper chain to concrete index values; returns the base
  // tensor name or resolves masks, yielding missing for permissive
  // out-of-bounds coordinates.
  Value eval_access(const ast::ExprP& e) {
    std::vector<int64_t> coords;
    std::vector<bool> permissive(e->idx.size(), false);
    coords.reserve(e->idx.size());
    for (auto& i : e->idx) {
      Value v = eval_expr(i);
      if (v.is_missing()) return Value::missing();
      coords.push_back(v.as_int());
    }
    const ast::Target* t = e->target.get();
    while (true) {
      switch (t->kind) {
        case ast::WrapKind::Protocolized: t = t->inner.get(); continue;
        case ast::WrapKind::Permissive: {
          for (size_t m = 0; m < t->permissive.size() && m < permissive.size(); ++m)
            permissive[m] = permissive[m] || t->permissive[m];
          t = t->inner.get();
          continue;
        }
        case ast::WrapKind::Window: {
          for (size_t m = 0; m < t->windows.size() && m < coords.size(); ++m)
            coords[m] += eval_expr(t->windows[m].first).as_int() - 1;
          t = t->inner.get();
          continue;
        }
        case ast::WrapKind::Offset: {
          for (size_t m = 0; m < t->deltas.size() && m < coords.size(); ++m)
            coords[m] += eval_expr(t->deltas[m]).as_int();
          t = t->inner.get();
          continue;
        }
        case ast::WrapKind::Toeplitz: {
          int tm = t->toeplitz_mode;  // added mode folds into the one below
          coords[tm - 2] += coords[tm - 1];
          permissive[tm - 2] = permissive[tm - 2] || permissive[tm - 1];
          coords.erase(coords.begin() + (tm - 1));
          permissive.erase(permissive.begin() + (tm - 1));
          t = t->inner.get();
          continue;
        }
        case ast::WrapKind::UpTriMask:
          return Value::of_bool(coords[0] <= coords[1]);
        case ast::WrapKind::DiagMask: return Value::of_bool(coords[0] == coords[1]);
        case ast::WrapKind::Base: {
          std::vector<Extent> dims;
          auto sh = shadows_.find(t->tensor);
          if (sh != shadows_.end())
            dims = sh->second.dims;
          else
            dims = env_.tensor(t->tensor)->dims();
          for (size_t m = 0; m < coords.size(); ++m) {
            if (m < dims.size() && !dims[m].contains(coords[m])) {
              if (m < permissive.size() && permissive[m]) return Value::missing();
            }
          }
          return read_tensor(t->tensor, coords);
        }
        case ast::WrapKind::Swizzle:
          fail(ErrorKind::Contract, "swizzle in reference evaluation");
      }
    }
  }

  Value eval_expr(const ExprP& e) {
    using namespace ast;
    switch (e->kind) {
      case ExprKind::Lit: return e->lit;
      case ExprKind::Var:
      case ExprKind::Index: {
        auto it = vars_.find(e->name);
        if (it != vars_.end()) return it->second;
        auto sc = env_.scalars.find(e->name);
        if (sc != env_.scalars.end()) return sc->second;
        fail(ErrorKind::Exec, "unbound name " + e->name + " in reference evaluation");
      }
      case ExprKind::Access: return eval_access(e);
      case ExprKind::Call: {
        const std::string& n = e->op.name;
        if (n == "ifelse" && e->args.size() == 3)
          return eval_expr(e->args[0]).as_bool() ? eval_expr(e->args[1])
                                                 : eval_expr(e->args[2]);
        if (n == "&&" && e->args.size() == 2) {
          Value a = eval_expr(e->args[0]);
          if (a.is_bool() && !a.b) return Value::of_bool(false);
          return apply_op(Op("&&"), {a, eval_expr(e->args[1])});
        }
        if (n == "||" && e->args.size() == 2) {
          Value a = eval_expr(e->args[0]);
          if (a.is_bool() && a.b) return Value::of_bool(true);
          return apply_op(Op("||"), {a, eval_expr(e->args[1])});
        }
        Op op(n);
        if (e->op.param) op = Op(n, eval_expr(e->op.param));
        std::vector<Value> args;
        for (auto& a : e->args) args.push_back(eval_expr(a));
        return apply_op(op, args);
      }
      default: fail(ErrorKind::Exec, "unexpected expression in reference evaluation");
    }
  }

  void exec(const StmtP& s) {
    using namespace ast;
    budget();
    switch (s->kind) {
      case StmtKind::Block:
        for (auto& st : s->stmts) exec(st);
        break;
      case StmtKind::Declare: {
        TensorPtr t = env_.tensor(s->tensor);
        Value init = eval_expr(s->init);
        if (!bits_equal(init, t->fill()) && !values_equal(init, t->fill()))
          fail(ErrorKind::UnsupportedInit, s->tensor + ": declare init differs from fill");
        Shadow sh;
        sh.fill = t->fill();
        for (auto& d : s->dims)
          sh.dims.emplace_back(eval_expr(d->lo).as_int(), eval_expr(d->hi).as_int());
        shadows_[s->tensor] = std::move(sh);
        break;
      }
      case StmtKind::Freeze:
      case StmtKind::Thaw: break;  // modes are implicit here
      case StmtKind::Loop: {
        if (s->ext->kind != ExprKind::Extent)
          fail(ErrorKind::Dimension, "unresolved loop extent in reference evaluation");
        int64_t lo = eval_expr(s->ext->lo).as_int();
        int64_t hi = eval_expr(s->ext->hi).as_int();
        Value savedv;
        bool had = vars_.count(s->index);
        if (had) savedv = vars_[s->index];
        for (int64_t i = lo; i <= hi; ++i) {
          budget();
          vars_[s->index] = Value::of_int(i);
          exec(s->body);
        }
        if (had)
          vars_[s->index] = savedv;
        else
          vars_.erase(s->index);
        break;
      }
      case StmtKind::Define: {
        Value v = eval_expr(s->val);
        bool had = vars_.count(s->var);
        Value savedv;
        if (had) savedv = vars_[s->var];
        vars_[s->var] = v;
        exec(s->body);
        if (had)
          vars_[s->var] = savedv;
        else
          vars_.erase(s->var);
        break;
      }
      case StmtKind::Sieve:
        if (eval_expr(s->cond).as_bool()) exec(s->body);
        break;
      case StmtKind::Assign: {
        const ast::Target* base = s->lhs->target.get();
        std::vector<int64_t> coords;
        for (auto& i : s->lhs->idx) coords.push_back(eval_expr(i).as_int());
        while (base->kind == ast::WrapKind::Offset || base->kind == ast::WrapKind::Window ||
               base->kind == ast::WrapKind::Protocolized) {
          if (base->kind == ast::WrapKind::Offset)
            for (size_t m = 0; m < base->deltas.size() && m < coords.size(); ++m)
              coords[m] += eval_expr(base->deltas[m]).as_int();
          if (base->kind == ast::WrapKind::Window)
            for (size_t m = 0; m < base->windows.size() && m < coords.size(); ++m)
              coords[m] += eval_expr(base->windows[m].first).as_int() - 1;
          base = base->inner.get();
        }
        if (base->kind != ast::WrapKind::Base)
          fail(ErrorKind::Contract, "unsupported assignment target in reference evaluation");
        Shadow& sh = writable(base->tensor);
        Value rhs = eval_expr(s->rhs);
        Op op(s->op.name);
        if (s->op.param) op = Op(s->op.name, eval_expr(s->op.param));
        bool inside = true;
        for (size_t m = 0; m < coords.size() && m < sh.dims.size(); ++m)
          inside &= sh.dims[m].contains(coords[m]);
        if (!inside) break;  // writes outside the declared extent are dropped
        auto it = sh.data.find(coords);
        Value old = it == sh.data.end() ? sh.fill : it->second;
        sh.data[coords] = apply_op(op, {old, rhs});
        break;
      }
    }
  }
};

inline std::map<std::string, TensorPtr> reference_eval(const ast::StmtP& program,
                                                       ProgramEnv& env) {
  Reference ref(env);
  return ref.eval(program);
}

inline std::map<std::string, TensorPtr> reference_eval(const std::string& source,
                                                       ProgramEnv& env) {
  return reference_eval(parse(source), env);
}

}  // namespace finch
