#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "finch/error.hpp"
#include "finch/value.hpp"

namespace finch {

// An operator instance: a registry name plus an optional value parameter
// (choose(z), initwrite(z)). Parametrized families share one registry entry.
struct Op {
  std::string name;
  bool has_param = false;
  Value param;

  Op() = default;
  explicit Op(std::string n) : name(std::move(n)) {}
  Op(std::string n, Value p) : name(std::move(n)), has_param(true), param(p) {}

  bool operator==(const Op& o) const {
    return name == o.name && has_param == o.has_param &&
           (!has_param || bits_equal(param, o.param));
  }
  std::string display() const {
    if (!has_param) return name;
    return name + "(" + value_to_string(param) + ")";
  }
};

namespace detail {

inline bool both_numeric(const Value& a, const Value& b) {
  return a.is_numeric() && b.is_numeric();
}

inline Value num_binop(const Value& a, const Value& b, int64_t (*fi)(int64_t, int64_t),
                       double (*ff)(double, double)) {
  if (a.is_float() || b.is_float()) return Value::of_float(ff(a.as_float(), b.as_float()));
  return Value::of_int(fi(a.as_int(), b.as_int()));
}

}  // namespace detail

// Algebra facts about an operator, used by simplification. All facts are
// verified against a sample of values when the registry is built.
struct OpInfo {
  int arity = 2;  // -1: variadic
  bool commutative = false;
  bool idempotent = false;
  std::optional<Value> identity;
  std::optional<Value> annihilator;
  // Returns true when `v` absorbs all further reduction with this op. For
  // ops with a plain annihilator this is bitwise equality with it; choose(z)
  // absorbs on anything but z.
  std::function<bool(const Op&, const Value&)> absorbs;
};

inline Value apply_op(const Op& op, const std::vector<Value>& args);

class OpRegistry {
 public:
  static const OpRegistry& instance() {
    static OpRegistry reg;
    return reg;
  }

  const OpInfo* find(const std::string& name) const {
    auto it = table_.find(name);
    return it == table_.end() ? nullptr : &it->second;
  }

  const OpInfo& get(const std::string& name) const {
    const OpInfo* info = find(name);
    if (!info) fail(ErrorKind::Exec, "unknown operator " + name);
    return *info;
  }

 private:
  std::map<std::string, OpInfo> table_;

  void add(const std::string& name, OpInfo info) {
    verify(name, info);
    table_[name] = std::move(info);
  }

  // Spot-checks declared properties over a small sample so a bad registry
  // entry fails at startup instead of producing wrong kernels.
  void verify(const std::string& name, const OpInfo& info) const {
    if (info.arity != 2) return;
    std::vector<Value> sample = {
        Value::of_int(0),    Value::of_int(1),   Value::of_int(-3),
        Value::of_int(7),    Value::of_float(0.0), Value::of_float(2.5),
        Value::of_float(-1.5), Value::of_bool(false), Value::of_bool(true),
        value_inf()};
    Op op(name);
    auto ok = [&](const Value& a, const Value& b, Value* out) {
      try {
        *out = apply_op_raw(op, {a, b});
        return true;
      } catch (const Error&) {
        return false;
      }
    };
    auto finite_num = [](const Value& v) {
      return v.is_numeric() && std::isfinite(v.as_float());
    };
    for (const Value& x : sample) {
      Value r;
      if (info.identity && finite_num(x)) {
        if (ok(x, *info.identity, &r) && !values_equal(r, x) && info.identity->is_numeric())
          fail(ErrorKind::Exec, "operator " + name + " identity check failed");
      }
      if (info.annihilator && finite_num(x)) {
        if (ok(x, *info.annihilator, &r) && !values_equal(r, *info.annihilator))
          fail(ErrorKind::Exec, "operator " + name + " annihilator check failed");
      }
      if (info.commutative) {
        for (const Value& y : sample) {
          Value r1, r2;
          if (ok(x, y, &r1) && ok(y, x, &r2) && !values_equal(r1, r2) && !bits_equal(r1, r2))
            fail(ErrorKind::Exec, "operator " + name + " commutativity check failed");
        }
      }
      if (info.idempotent) {
        if (ok(x, x, &r) && !values_equal(r, x) &&
            (finite_num(x) || (x.is_bool() && r.is_bool())))
          fail(ErrorKind::Exec, "operator " + name + " idempotence check failed");
      }
    }
  }

 public:
  // Raw evaluation shared by the registry verifier and apply_op.
  static Value apply_op_raw(const Op& op, const std::vector<Value>& args) {
    const std::string& n = op.name;
    auto need = [&](size_t k) {
      if (args.size() != k)
        fail(ErrorKind::Exec, "operator " + n + " expects " + std::to_string(k) + " arguments");
    };
    // coalesce is the only operator that accepts missing.
    if (n != "coalesce") {
      for (const Value& a : args)
        if (a.is_missing())
          fail(ErrorKind::Exec, "missing value reached operator " + n);
    }
    if (n == "+") {
      need(2);
      return detail::num_binop(args[0], args[1], [](int64_t a, int64_t b) { return a + b; },
                               [](double a, double b) { return a + b; });
    }
    if (n == "-") {
      need(2);
      return detail::num_binop(args[0], args[1], [](int64_t a, int64_t b) { return a - b; },
                               [](double a, double b) { return a - b; });
    }
    if (n == "neg") {
      need(1);
      if (args[0].is_float()) return Value::of_float(-args[0].f);
      return Value::of_int(-args[0].as_int());
    }
    if (n == "*") {
      need(2);
      if (args[0].is_bool() && args[1].is_bool()) return Value::of_bool(args[0].b && args[1].b);
      return detail::num_binop(args[0], args[1], [](int64_t a, int64_t b) { return a * b; },
                               [](double a, double b) { return a * b; });
    }
    if (n == "/") {
      need(2);
      return Value::of_float(args[0].as_float() / args[1].as_float());
    }
    if (n == "min") {
      need(2);
      return detail::num_binop(args[0], args[1],
                               [](int64_t a, int64_t b) { return a < b ? a : b; },
                               [](double a, double b) { return a < b ? a : b; });
    }
    if (n == "max") {
      need(2);
      return detail::num_binop(args[0], args[1],
                               [](int64_t a, int64_t b) { return a > b ? a : b; },
                               [](double a, double b) { return a > b ? a : b; });
    }
    if (n == "div") {
      need(2);
      int64_t b = args[1].as_int();
      if (b == 0) fail(ErrorKind::Exec, "division by zero in div");
      int64_t a = args[0].as_int();
      int64_t q = a / b;
      if ((a % b != 0) && ((a < 0) != (b < 0))) q -= 1;  // floor division
      return Value::of_int(q);
    }
    if (n == "|" || n == "||") {
      need(2);
      if (args[0].is_int() && args[1].is_int()) return Value::of_int(args[0].i | args[1].i);
      return Value::of_bool(args[0].as_bool() || args[1].as_bool());
    }
    if (n == "&" || n == "&&") {
      need(2);
      if (args[0].is_int() && args[1].is_int()) return Value::of_int(args[0].i & args[1].i);
      return Value::of_bool(args[0].as_bool() && args[1].as_bool());
    }
    if (n == "!") {
      need(1);
      return Value::of_bool(!args[0].as_bool());
    }
    if (n == "==") {
      need(2);
      return Value::of_bool(values_equal(args[0], args[1]));
    }
    if (n == "!=") {
      need(2);
      return Value::of_bool(!values_equal(args[0], args[1]));
    }
    if (n == "<") {
      need(2);
      return Value::of_bool(args[0].as_float() < args[1].as_float());
    }
    if (n == "<=") {
      need(2);
      return Value::of_bool(args[0].as_float() <= args[1].as_float());
    }
    if (n == ">") {
      need(2);
      return Value::of_bool(args[0].as_float() > args[1].as_float());
    }
    if (n == ">=") {
      need(2);
      return Value::of_bool(args[0].as_float() >= args[1].as_float());
    }
    if (n == "ifelse") {
      need(3);
      return args[0].as_bool() ? args[1] : args[2];
    }
    if (n == "coalesce") {
      for (const Value& a : args)
        if (!a.is_missing()) return a;
      return Value::missing();
    }
    if (n == "choose") {
      need(2);
      if (!op.has_param) fail(ErrorKind::Exec, "choose requires a parameter");
      return bits_equal(args[0], op.param) ? args[1] : args[0];
    }
    if (n == "initwrite") {
      need(2);
      return args[1];
    }
    fail(ErrorKind::Exec, "unknown operator " + n);
  }

 private:
  OpRegistry() {
    auto abs_eq = [](const Op& op, const Value& v) -> bool {
      const OpInfo& info = OpRegistry::instance().get(op.name);
      return info.annihilator && bits_equal(v, *info.annihilator);
    };
    OpInfo plus;
    plus.commutative = true;
    plus.identity = Value::of_int(0);
    // Weights are nonnegative reals in the shortest-path kernels, so +Inf
    // absorbs addition; -Inf is never produced by the value domain we admit.
    plus.annihilator = value_inf();
    table_["+"] = plus;

    OpInfo minus;
    table_["-"] = minus;
    OpInfo neg;
    neg.arity = 1;
    table_["neg"] = neg;

    OpInfo times;
    times.commutative = true;
    times.identity = Value::of_int(1);
    times.annihilator = Value::of_int(0);
    table_["*"] = times;

    OpInfo divide;
    table_["/"] = divide;

    OpInfo vmin;
    vmin.commutative = true;
    vmin.idempotent = true;
    vmin.identity = value_inf();
    table_["min"] = vmin;

    OpInfo vmax;
    vmax.commutative = true;
    vmax.idempotent = true;
    vmax.identity = Value::of_float(-std::numeric_limits<double>::infinity());
    table_["max"] = vmax;

    OpInfo idiv;
    table_["div"] = idiv;

    OpInfo bor;
    bor.commutative = true;
    bor.idempotent = true;
    bor.identity = Value::of_bool(false);
    bor.annihilator = Value::of_bool(true);
    table_["|"] = bor;
    table_["||"] = bor;

    OpInfo band;
    band.commutative = true;
    band.idempotent = true;
    band.identity = Value::of_bool(true);
    band.annihilator = Value::of_bool(false);
    table_["&"] = band;
    table_["&&"] = band;

    OpInfo bnot;
    bnot.arity = 1;
    table_["!"] = bnot;

    for (const char* cmp : {"==", "!=", "<", "<=", ">", ">="}) {
      OpInfo c;
      table_[cmp] = c;
    }

    OpInfo ifelse;
    ifelse.arity = 3;
    table_["ifelse"] = ifelse;

    OpInfo coalesce;
    coalesce.arity = -1;
    table_["coalesce"] = coalesce;

    // choose(z) returns whichever argument is not z; once the accumulator is
    // anything but z it absorbs. Its identity is the parameter itself.
    OpInfo choose;
    choose.absorbs = [](const Op& op, const Value& v) {
      return op.has_param && !bits_equal(v, op.param);
    };
    table_["choose"] = choose;

    // initwrite(z) models `=` into a tensor declared with fill z: writing z
    // over an untouched location is the identity.
    OpInfo initwrite;
    table_["initwrite"] = initwrite;

    for (auto& [name, info] : table_) {
      if (!info.absorbs) info.absorbs = abs_eq;
      verify(name, info);
    }
  }
};

inline Value apply_op(const Op& op, const std::vector<Value>& args) {
  return OpRegistry::apply_op_raw(op, args);
}

inline const OpInfo& op_info(const Op& op) { return OpRegistry::instance().get(op.name); }

// Identity element for reductions with this op, if any. For parametrized
// families the identity can depend on the parameter.
inline std::optional<Value> op_identity(const Op& op) {
  if (op.name == "choose" && op.has_param) return op.param;
  return op_info(op).identity;
}

inline bool op_absorbs(const Op& op, const Value& v) {
  const OpInfo& info = op_info(op);
  return info.absorbs && info.absorbs(op, v);
}

}  // namespace finch
