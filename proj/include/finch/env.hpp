#pragma once

#include <map>
#include <optional>
#include <string>

#include "finch/ast.hpp"
#include "finch/tensor.hpp"

namespace finch {

// Bindings for one program run: tensors (inputs and outputs, outputs may be
// empty but carry their format) plus scalar parameters.
struct ProgramEnv {
  std::map<std::string, TensorPtr> tensors;
  std::map<std::string, Value> scalars;

  TensorPtr tensor(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) fail(ErrorKind::Exec, "unbound tensor " + name);
    return it->second;
  }
  bool has_tensor(const std::string& name) const { return tensors.count(name) > 0; }

  std::string format_signature() const {
    std::string s;
    for (auto& [name, t] : tensors) s += name + "=" + t->format_spec() + ";";
    for (auto& [name, v] : scalars) s += name + "=#;";
    return s;
  }
};

// Constant folding of surface expressions against scalar bindings; returns
// nullopt when the expression depends on indices or tensor data.
inline std::optional<Value> try_eval_const(const ast::ExprP& e, const ProgramEnv& env) {
  using namespace ast;
  switch (e->kind) {
    case ExprKind::Lit: return e->lit;
    case ExprKind::Var: {
      auto it = env.scalars.find(e->name);
      if (it != env.scalars.end()) return it->second;
      return std::nullopt;
    }
    case ExprKind::Call: {
      if (e->op.name == "~") return std::nullopt;
      Op op(e->op.name);
      if (e->op.param) {
        auto p = try_eval_const(e->op.param, env);
        if (!p) return std::nullopt;
        op = Op(e->op.name, *p);
      }
      std::vector<Value> args;
      for (auto& a : e->args) {
        auto v = try_eval_const(a, env);
        if (!v) return std::nullopt;
        args.push_back(*v);
      }
      try {
        return apply_op(op, args);
      } catch (const Error&) {
        return std::nullopt;
      }
    }
    default: return std::nullopt;
  }
}

}  // namespace finch
