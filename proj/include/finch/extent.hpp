#pragma once

#include <cstdint>
#include <string>

#include "finch/error.hpp"

namespace finch {

// A concrete index range `lo:hi`, inclusive on both ends, or the
// distinguished dimensionless value written `_`. Empty ranges are allowed as
// lo == hi + 1.
struct Extent {
  bool dimless = true;
  int64_t lo = 1;
  int64_t hi = 0;

  Extent() = default;
  Extent(int64_t l, int64_t h) : dimless(false), lo(l), hi(h) {
    if (l > h + 1) fail(ErrorKind::Dimension, "malformed extent " + to_string());
  }

  static Extent dimensionless() { return Extent(); }
  static Extent sized(int64_t n) { return Extent(1, n); }

  bool is_dimless() const { return dimless; }
  int64_t width() const { return dimless ? 0 : hi - lo + 1; }
  bool contains(int64_t i) const { return !dimless && lo <= i && i <= hi; }

  bool operator==(const Extent& o) const {
    if (dimless || o.dimless) return dimless == o.dimless;
    return lo == o.lo && hi == o.hi;
  }

  std::string to_string() const {
    if (dimless) return "_";
    return std::to_string(lo) + ":" + std::to_string(hi);
  }
};

// `meet` joins dimensions: `_` yields the other side, two concrete extents
// must agree exactly.
inline Extent meet(const Extent& a, const Extent& b, const std::string& what = "") {
  if (a.is_dimless()) return b;
  if (b.is_dimless()) return a;
  if (!(a == b)) {
    fail(ErrorKind::Dimension, "dimension mismatch" + (what.empty() ? "" : " on " + what) +
                                   ": " + a.to_string() + " vs " + b.to_string());
  }
  return a;
}

}  // namespace finch
