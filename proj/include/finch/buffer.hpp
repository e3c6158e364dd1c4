#pragma once

#include <cstdint>
#include <vector>

#include "finch/error.hpp"
#include "finch/value.hpp"

namespace finch {

// Tracks buffer reallocations so tests can assert on the doubling policy.
struct AllocStats {
  uint64_t reallocations = 0;
  void reset() { reallocations = 0; }
};

inline AllocStats& alloc_stats() {
  static AllocStats stats;
  return stats;
}

// A growable typed buffer with an explicit capacity-doubling policy. Levels
// size these with `grow_to` during assemble and trim them exactly at freeze.
template <typename T>
class Buffer {
 public:
  int64_t size() const { return static_cast<int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  const T& operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }
  T& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }

  const T& at(int64_t i) const {
    if (i < 0 || i >= size()) fail(ErrorKind::Exec, "buffer index out of bounds");
    return data_[static_cast<size_t>(i)];
  }
  void set(int64_t i, const T& v) {
    if (i < 0 || i >= size()) fail(ErrorKind::Exec, "buffer store out of bounds");
    data_[static_cast<size_t>(i)] = v;
  }

  // Extends to at least n elements, filling new slots with `fill`. Capacity
  // doubles so that n one-at-a-time extensions cost O(log n) reallocations.
  void grow_to(int64_t n, const T& fill) {
    if (n <= size()) return;
    size_t want = static_cast<size_t>(n);
    if (want > data_.capacity()) {
      size_t cap = data_.capacity() ? data_.capacity() : 1;
      while (cap < want) cap *= 2;
      data_.reserve(cap);
      alloc_stats().reallocations += 1;
    }
    data_.resize(want, fill);
  }

  void push_back(const T& v) {
    grow_to(size() + 1, v);
    data_.back() = v;
  }

  // Exact-size trim used at freeze time.
  void trim(int64_t n) {
    if (n < 0 || n > size()) fail(ErrorKind::Exec, "bad trim size");
    data_.resize(static_cast<size_t>(n));
    data_.shrink_to_fit();
  }

  void clear() {
    data_.clear();
    data_.shrink_to_fit();
  }

  void fill_range(int64_t lo, int64_t hi, const T& v) {
    for (int64_t i = lo; i < hi; ++i) data_[static_cast<size_t>(i)] = v;
  }

  std::vector<T>& raw() { return data_; }
  const std::vector<T>& raw() const { return data_; }

 private:
  std::vector<T> data_;
};

}  // namespace finch
