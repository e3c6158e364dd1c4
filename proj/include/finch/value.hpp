#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <sstream>
#include <string>

#include "finch/error.hpp"

namespace finch {

// Runtime scalars are a small closed set of tagged values. `Missing` is the
// distinguished out-of-bounds value produced by permissive accesses; only
// coalesce may consume it.
enum class ValueKind : uint8_t { Int64, Float64, Bool, Missing };

struct Value {
  ValueKind kind = ValueKind::Int64;
  union {
    int64_t i;
    double f;
    bool b;
  };

  Value() : i(0) {}
  static Value of_int(int64_t v) {
    Value x;
    x.kind = ValueKind::Int64;
    x.i = v;
    return x;
  }
  static Value of_float(double v) {
    Value x;
    x.kind = ValueKind::Float64;
    x.f = v;
    return x;
  }
  static Value of_bool(bool v) {
    Value x;
    x.kind = ValueKind::Bool;
    x.b = v;
    return x;
  }
  static Value missing() {
    Value x;
    x.kind = ValueKind::Missing;
    x.i = 0;
    return x;
  }

  bool is_int() const { return kind == ValueKind::Int64; }
  bool is_float() const { return kind == ValueKind::Float64; }
  bool is_bool() const { return kind == ValueKind::Bool; }
  bool is_missing() const { return kind == ValueKind::Missing; }
  bool is_numeric() const { return is_int() || is_float(); }

  int64_t as_int() const {
    switch (kind) {
      case ValueKind::Int64: return i;
      case ValueKind::Bool: return b ? 1 : 0;
      case ValueKind::Float64:
        if (f == std::floor(f)) return static_cast<int64_t>(f);
        fail(ErrorKind::Exec, "non-integral float used as integer");
      default: fail(ErrorKind::Exec, "missing used as integer");
    }
  }
  double as_float() const {
    switch (kind) {
      case ValueKind::Int64: return static_cast<double>(i);
      case ValueKind::Float64: return f;
      case ValueKind::Bool: return b ? 1.0 : 0.0;
      default: fail(ErrorKind::Exec, "missing used as number");
    }
  }
  bool as_bool() const {
    switch (kind) {
      case ValueKind::Bool: return b;
      case ValueKind::Int64: return i != 0;
      default: fail(ErrorKind::Exec, "value is not a boolean");
    }
  }
};

// Dedup and fill comparisons are bitwise on the payload: floats compare by
// bit pattern, which sidesteps NaN ambiguity.
inline bool bits_equal(const Value& a, const Value& b) {
  if (a.kind != b.kind) return false;
  uint64_t pa = 0, pb = 0;
  std::memcpy(&pa, &a.i, sizeof(uint64_t));
  std::memcpy(&pb, &b.i, sizeof(uint64_t));
  if (a.kind == ValueKind::Bool) return a.b == b.b;
  if (a.kind == ValueKind::Missing) return true;
  return pa == pb;
}

// Numeric equality used by oracles and user-facing ==.
inline bool values_equal(const Value& a, const Value& b) {
  if (a.is_missing() || b.is_missing()) return a.is_missing() && b.is_missing();
  if (a.is_bool() && b.is_bool()) return a.b == b.b;
  if (a.is_numeric() && b.is_numeric()) {
    if (a.is_int() && b.is_int()) return a.i == b.i;
    return a.as_float() == b.as_float();
  }
  return false;
}

inline std::string value_to_string(const Value& v) {
  std::ostringstream os;
  switch (v.kind) {
    case ValueKind::Int64: os << v.i; break;
    case ValueKind::Float64: {
      if (std::isinf(v.f)) {
        os << (v.f > 0 ? "Inf" : "-Inf");
      } else {
        double d = v.f;
        if (d == std::floor(d) && std::abs(d) < 1e15) {
          os << static_cast<long long>(d) << ".0";
        } else {
          os.precision(17);
          os << d;
        }
      }
      break;
    }
    case ValueKind::Bool: os << (v.b ? "true" : "false"); break;
    case ValueKind::Missing: os << "missing"; break;
  }
  return os.str();
}

inline Value value_inf() { return Value::of_float(std::numeric_limits<double>::infinity()); }

}  // namespace finch
