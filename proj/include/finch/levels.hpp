#pragma once

#include <algorithm>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "finch/buffer.hpp"
#include "finch/error.hpp"
#include "finch/extent.hpp"
#include "finch/value.hpp"

namespace finch {

enum class Mode { Read, Update };

enum class LevelKind {
  Dense,
  RunList,
  SparseList,
  SparsePinpoint,
  SparseRunList,
  SparseInterval,
  SparseBlockList,
  SparseBand,
  SparseHash,
  SparseByteMap,
  Element,
  Pattern,
  Scalar,
  SparseScalar,
  ShortCircuitScalar,
};

inline const char* level_kind_name(LevelKind k) {
  switch (k) {
    case LevelKind::Dense: return "Dense";
    case LevelKind::RunList: return "RunList";
    case LevelKind::SparseList: return "SparseList";
    case LevelKind::SparsePinpoint: return "SparsePinpoint";
    case LevelKind::SparseRunList: return "SparseRunList";
    case LevelKind::SparseInterval: return "SparseInterval";
    case LevelKind::SparseBlockList: return "SparseBlockList";
    case LevelKind::SparseBand: return "SparseBand";
    case LevelKind::SparseHash: return "SparseHash";
    case LevelKind::SparseByteMap: return "SparseByteMap";
    case LevelKind::Element: return "Element";
    case LevelKind::Pattern: return "Pattern";
    case LevelKind::Scalar: return "Scalar";
    case LevelKind::SparseScalar: return "SparseScalar";
    case LevelKind::ShortCircuitScalar: return "ShortCircuitScalar";
  }
  return "?";
}

// Buffer roles addressable from kernel code. `Ptr` is the ends array with
// ptr[0] = 0 and ptr[p] = end of subfiber p; coordinates stored in
// Idx/Left/Right are 1-based while buffer offsets are 0-based. That boundary
// stays inside the level implementations.
enum class BufRole { Ptr, Idx, Left, Right, Ofs, Pos, Val, Tbl };

inline const char* buf_role_name(BufRole r) {
  switch (r) {
    case BufRole::Ptr: return "ptr";
    case BufRole::Idx: return "idx";
    case BufRole::Left: return "left";
    case BufRole::Right: return "right";
    case BufRole::Ofs: return "ofs";
    case BufRole::Pos: return "pos";
    case BufRole::Val: return "val";
    case BufRole::Tbl: return "tbl";
  }
  return "?";
}

class Level;
using LevelPtr = std::shared_ptr<Level>;

class Level {
 public:
  virtual ~Level() = default;
  virtual LevelKind kind() const = 0;
  virtual bool is_leaf() const { return false; }

  virtual LevelPtr child() const { return nullptr; }
  virtual int64_t shape() const { return 0; }
  virtual void set_shape(int64_t) {}

  // Fresh level with the same format and no data.
  virtual LevelPtr clone_format() const = 0;

  // --- lifecycle ----------------------------------------------------------
  // Resets storage for `positions` subfibers and leaves the level writable.
  virtual void declare_reset(int64_t positions) = 0;
  // Makes positions pos_lo..pos_hi (1-based, inclusive) addressable.
  virtual void assemble(int64_t pos_lo, int64_t pos_hi) = 0;
  virtual void freeze(int64_t positions) = 0;
  virtual void thaw(int64_t positions) = 0;

  // --- reads ----------------------------------------------------------------
  // Child position of coordinate i within subfiber `pos`, or 0 if unstored.
  virtual int64_t find(int64_t pos, int64_t i) const {
    (void)pos;
    (void)i;
    fail(ErrorKind::Contract, "find on leaf level");
  }
  virtual Value leaf_read(int64_t pos) const {
    (void)pos;
    fail(ErrorKind::Contract, "leaf_read on non-leaf level");
  }
  virtual Value fill() const = 0;

  // Visits stored (coordinate, child position) pairs of one subfiber in
  // ascending coordinate order; runs visit each covered coordinate.
  virtual void for_each_stored(int64_t pos,
                               const std::function<void(int64_t, int64_t)>& fn) const {
    (void)pos;
    (void)fn;
    fail(ErrorKind::Contract, "for_each_stored on leaf level");
  }
  // Visits stored content as maximal runs (lo, hi, child position). Levels
  // without run structure yield width-1 runs.
  virtual void for_each_run(int64_t pos,
                            const std::function<void(int64_t, int64_t, int64_t)>& fn) const {
    for_each_stored(pos, [&](int64_t i, int64_t q) { fn(i, i, q); });
  }

  // Number of committed child positions given `positions` subfibers in use.
  virtual int64_t stored_children(int64_t positions) const = 0;

  virtual void validate(int64_t positions) const = 0;

  // --- in-order construction ------------------------------------------------
  // Used by the kernel acceptors, convert, file IO, and the dedup freeze.
  // builder_slot yields the child position that a write to coordinate i of
  // subfiber pos should target; builder_commit records the coordinate range
  // once a write actually happened. Probing without committing is allowed.
  virtual bool accepts_runs() const { return false; }
  virtual int64_t builder_slot(int64_t pos, int64_t i) {
    (void)pos;
    (void)i;
    fail(ErrorKind::Contract, "level does not support construction");
  }
  virtual void builder_commit(int64_t pos, int64_t lo, int64_t hi) {
    (void)pos;
    (void)lo;
    (void)hi;
    fail(ErrorKind::Contract, "level does not support construction");
  }

  // --- buffers ----------------------------------------------------------------
  virtual Buffer<int64_t>* int_buffer(BufRole) { return nullptr; }
  virtual Buffer<Value>* value_buffer() { return nullptr; }
  virtual Buffer<uint8_t>* byte_buffer() { return nullptr; }

  std::string spec() const {
    std::string s = level_kind_name(kind());
    s += "(";
    if (is_leaf()) {
      if (kind() != LevelKind::Pattern) s += value_to_string(fill());
    } else {
      s += child()->spec();
    }
    s += ")";
    return s;
  }
};

namespace detail {

inline void point_commit(int64_t lo, int64_t hi, const char* what) {
  if (lo != hi)
    fail(ErrorKind::Structure, std::string(what) + ": run writes are not supported");
}

// Shared machinery for levels that append committed subfibers in position
// order: lazily closes the ends array as commits move to later positions.
struct EndsBuilder {
  Buffer<int64_t> ends;  // ends[0] = 0, ends[p] = end of subfiber p
  int64_t last_pos = 0;  // highest position whose entries have begun

  void reset(int64_t positions) {
    ends.clear();
    ends.grow_to(positions + 1, 0);
    ends.fill_range(0, positions + 1, 0);
    last_pos = 0;
  }
  void assemble_to(int64_t positions) { ends.grow_to(positions + 1, 0); }
  // Called before recording an entry for `pos` when the current count is n.
  void advance(int64_t pos, int64_t n, const char* what) {
    if (pos < last_pos)
      fail(ErrorKind::Structure, std::string(what) + ": writes must visit positions in order");
    ends.grow_to(pos + 1, 0);
    for (int64_t q = last_pos; q < pos; ++q) ends.set(q, n);
    last_pos = pos;
  }
  void close(int64_t positions, int64_t n) {
    ends.grow_to(positions + 1, 0);
    for (int64_t q = last_pos; q <= positions; ++q) ends.set(q, n);
    last_pos = positions;
    ends.trim(positions + 1);
  }
  int64_t begin_of(int64_t p) const { return ends.at(p - 1); }
  int64_t end_of(int64_t p) const { return ends.at(p); }
};

inline bool subfiber_equal(const Level& lvl, int64_t pa, int64_t pb) {
  if (lvl.is_leaf()) return bits_equal(lvl.leaf_read(pa), lvl.leaf_read(pb));
  std::vector<std::pair<int64_t, int64_t>> ea, eb;
  lvl.for_each_stored(pa, [&](int64_t i, int64_t q) { ea.emplace_back(i, q); });
  lvl.for_each_stored(pb, [&](int64_t i, int64_t q) { eb.emplace_back(i, q); });
  if (ea.size() != eb.size()) return false;
  for (size_t k = 0; k < ea.size(); ++k) {
    if (ea[k].first != eb[k].first) return false;
    if (!subfiber_equal(*lvl.child(), ea[k].second, eb[k].second)) return false;
  }
  return true;
}

}  // namespace detail

// Copies the subfiber at `spos` of `src` into position `dpos` of `dst`,
// which must share the same format and be mid-construction. The destination
// position must already be assembled.
inline void copy_subfiber(Level& dst, int64_t dpos, const Level& src, int64_t spos);

// ---------------------------------------------------------------------------
// Leaf levels
// ---------------------------------------------------------------------------

class ElementLevel final : public Level {
 public:
  explicit ElementLevel(Value fill) : fill_(fill) {}
  LevelKind kind() const override { return LevelKind::Element; }
  bool is_leaf() const override { return true; }
  LevelPtr clone_format() const override { return std::make_shared<ElementLevel>(fill_); }

  void declare_reset(int64_t positions) override {
    val_.clear();
    val_.grow_to(positions, fill_);
  }
  void assemble(int64_t, int64_t pos_hi) override { val_.grow_to(pos_hi, fill_); }
  void freeze(int64_t positions) override { val_.trim(positions); }
  void thaw(int64_t) override {}

  Value leaf_read(int64_t pos) const override { return val_.at(pos - 1); }
  Value fill() const override { return fill_; }
  int64_t stored_children(int64_t positions) const override { return positions; }
  void validate(int64_t positions) const override {
    if (val_.size() < positions) fail(ErrorKind::Structure, "Element val too short");
  }
  Buffer<Value>* value_buffer() override { return &val_; }

  void clear_at(int64_t pos) { val_.set(pos - 1, fill_); }

 private:
  Value fill_;
  Buffer<Value> val_;
};

class PatternLevel final : public Level {
 public:
  LevelKind kind() const override { return LevelKind::Pattern; }
  bool is_leaf() const override { return true; }
  LevelPtr clone_format() const override { return std::make_shared<PatternLevel>(); }

  void declare_reset(int64_t) override {}
  void assemble(int64_t, int64_t) override {}
  void freeze(int64_t) override {}
  void thaw(int64_t) override {}

  Value leaf_read(int64_t) const override { return Value::of_bool(true); }
  Value fill() const override { return Value::of_bool(false); }
  int64_t stored_children(int64_t positions) const override { return positions; }
  void validate(int64_t) const override {}
};

// Rank-0 scalars; position is always 1.
class ScalarLevel : public Level {
 public:
  explicit ScalarLevel(Value fill) : fill_(fill) { val_.grow_to(1, fill_); }
  bool is_leaf() const override { return true; }

  void declare_reset(int64_t) override {
    val_.set(0, fill_);
    dirty_ = false;
  }
  void assemble(int64_t, int64_t) override {}
  void freeze(int64_t) override {}
  void thaw(int64_t) override {}

  Value leaf_read(int64_t) const override { return val_.at(0); }
  Value fill() const override { return fill_; }
  int64_t stored_children(int64_t) const override { return dirty_ ? 1 : 0; }
  void validate(int64_t) const override {}
  Buffer<Value>* value_buffer() override { return &val_; }

  bool dirty() const { return dirty_; }
  void mark_dirty() { dirty_ = true; }

 protected:
  Value fill_;
  Buffer<Value> val_;
  bool dirty_ = false;
};

class PlainScalarLevel final : public ScalarLevel {
 public:
  using ScalarLevel::ScalarLevel;
  LevelKind kind() const override { return LevelKind::Scalar; }
  LevelPtr clone_format() const override { return std::make_shared<PlainScalarLevel>(fill_); }
  int64_t stored_children(int64_t) const override { return 1; }
};

// A scalar that reads as fill until a non-fill write lands.
class SparseScalarLevel final : public ScalarLevel {
 public:
  using ScalarLevel::ScalarLevel;
  LevelKind kind() const override { return LevelKind::SparseScalar; }
  LevelPtr clone_format() const override { return std::make_shared<SparseScalarLevel>(fill_); }
  Value leaf_read(int64_t) const override { return dirty_ ? val_.at(0) : fill_; }
};

// A scalar reduction target that requests an early break once the reduction
// operator can no longer change its value.
class ShortCircuitScalarLevel final : public ScalarLevel {
 public:
  using ScalarLevel::ScalarLevel;
  LevelKind kind() const override { return LevelKind::ShortCircuitScalar; }
  LevelPtr clone_format() const override {
    return std::make_shared<ShortCircuitScalarLevel>(fill_);
  }
};

// ---------------------------------------------------------------------------
// Dense: positions map as (p-1)*shape + i; no buffers of its own.
// ---------------------------------------------------------------------------

class DenseLevel final : public Level {
 public:
  DenseLevel(int64_t shape, LevelPtr child) : shape_(shape), child_(std::move(child)) {}
  LevelKind kind() const override { return LevelKind::Dense; }
  LevelPtr child() const override { return child_; }
  int64_t shape() const override { return shape_; }
  void set_shape(int64_t s) override { shape_ = s; }
  LevelPtr clone_format() const override {
    return std::make_shared<DenseLevel>(shape_, child_->clone_format());
  }

  void declare_reset(int64_t positions) override { child_->declare_reset(positions * shape_); }
  void assemble(int64_t pos_lo, int64_t pos_hi) override {
    child_->assemble((pos_lo - 1) * shape_ + 1, pos_hi * shape_);
  }
  void freeze(int64_t positions) override { child_->freeze(positions * shape_); }
  void thaw(int64_t positions) override { child_->thaw(positions * shape_); }

  int64_t find(int64_t pos, int64_t i) const override {
    if (i < 1 || i > shape_) return 0;
    return (pos - 1) * shape_ + i;
  }
  Value fill() const override { return child_->fill(); }
  void for_each_stored(int64_t pos,
                       const std::function<void(int64_t, int64_t)>& fn) const override {
    for (int64_t i = 1; i <= shape_; ++i) fn(i, (pos - 1) * shape_ + i);
  }
  int64_t stored_children(int64_t positions) const override { return positions * shape_; }
  void validate(int64_t positions) const override { child_->validate(positions * shape_); }

  int64_t builder_slot(int64_t pos, int64_t i) override { return (pos - 1) * shape_ + i; }
  void builder_commit(int64_t, int64_t, int64_t) override {}

 private:
  int64_t shape_;
  LevelPtr child_;
};

// ---------------------------------------------------------------------------
// SparseList: idx[ptr[p]+q] is the coordinate of the q-th stored entry.
// ---------------------------------------------------------------------------

class SparseListLevel final : public Level {
 public:
  SparseListLevel(int64_t shape, LevelPtr child) : shape_(shape), child_(std::move(child)) {}
  LevelKind kind() const override { return LevelKind::SparseList; }
  LevelPtr child() const override { return child_; }
  int64_t shape() const override { return shape_; }
  void set_shape(int64_t s) override { shape_ = s; }
  LevelPtr clone_format() const override {
    return std::make_shared<SparseListLevel>(shape_, child_->clone_format());
  }

  void declare_reset(int64_t positions) override {
    idx_.clear();
    ends_.reset(positions);
    child_->declare_reset(0);
  }
  void assemble(int64_t, int64_t pos_hi) override { ends_.assemble_to(pos_hi); }
  void freeze(int64_t positions) override {
    ends_.close(positions, idx_.size());
    idx_.trim(idx_.size());
    child_->freeze(idx_.size());
  }
  void thaw(int64_t positions) override {
    ends_.last_pos = positions;
    child_->thaw(idx_.size());
  }

  int64_t builder_slot(int64_t, int64_t) override {
    int64_t q = idx_.size() + 1;
    child_->assemble(q, q);
    return q;
  }
  void builder_commit(int64_t pos, int64_t lo, int64_t hi) override {
    detail::point_commit(lo, hi, "SparseList");
    ends_.advance(pos, idx_.size(), "SparseList");
    if (idx_.size() > ends_.begin_of(pos) && idx_[idx_.size() - 1] >= lo)
      fail(ErrorKind::Structure, "SparseList: coordinates must be strictly increasing");
    idx_.push_back(lo);
  }

  int64_t find(int64_t pos, int64_t i) const override {
    int64_t lo = ends_.begin_of(pos), hi = ends_.end_of(pos);
    auto b = idx_.raw().begin();
    auto it = std::lower_bound(b + lo, b + hi, i);
    if (it != b + hi && *it == i) return static_cast<int64_t>(it - b) + 1;
    return 0;
  }
  Value fill() const override { return child_->fill(); }
  void for_each_stored(int64_t pos,
                       const std::function<void(int64_t, int64_t)>& fn) const override {
    for (int64_t q = ends_.begin_of(pos); q < ends_.end_of(pos); ++q) fn(idx_[q], q + 1);
  }
  int64_t stored_children(int64_t positions) const override {
    return positions == 0 ? 0 : ends_.end_of(positions);
  }
  void validate(int64_t positions) const override {
    int64_t prev_end = 0;
    for (int64_t p = 1; p <= positions; ++p) {
      int64_t lo = ends_.begin_of(p), hi = ends_.end_of(p);
      if (lo != prev_end || hi < lo) fail(ErrorKind::Structure, "SparseList ptr not monotone");
      for (int64_t q = lo; q < hi; ++q) {
        if (idx_.at(q) < 1 || idx_.at(q) > shape_)
          fail(ErrorKind::Structure, "SparseList idx out of range");
        if (q > lo && idx_.at(q) <= idx_.at(q - 1))
          fail(ErrorKind::Structure, "SparseList idx not strictly increasing");
      }
      prev_end = hi;
    }
    child_->validate(stored_children(positions));
  }

  Buffer<int64_t>* int_buffer(BufRole role) override {
    if (role == BufRole::Ptr) return &ends_.ends;
    if (role == BufRole::Idx) return &idx_;
    return nullptr;
  }

 private:
  int64_t shape_;
  LevelPtr child_;
  Buffer<int64_t> idx_;
  detail::EndsBuilder ends_;
};

// ---------------------------------------------------------------------------
// SparsePinpoint: at most one stored coordinate per subfiber; the child
// position equals the subfiber position. idx[p] = 0 marks an empty subfiber.
// ---------------------------------------------------------------------------

class SparsePinpointLevel final : public Level {
 public:
  SparsePinpointLevel(int64_t shape, LevelPtr child) : shape_(shape), child_(std::move(child)) {}
  LevelKind kind() const override { return LevelKind::SparsePinpoint; }
  LevelPtr child() const override { return child_; }
  int64_t shape() const override { return shape_; }
  void set_shape(int64_t s) override { shape_ = s; }
  LevelPtr clone_format() const override {
    return std::make_shared<SparsePinpointLevel>(shape_, child_->clone_format());
  }

  void declare_reset(int64_t positions) override {
    idx_.clear();
    idx_.grow_to(positions, 0);
    violation_.clear();
    child_->declare_reset(positions);
  }
  void assemble(int64_t pos_lo, int64_t pos_hi) override {
    idx_.grow_to(pos_hi, 0);
    child_->assemble(pos_lo, pos_hi);
  }
  void freeze(int64_t positions) override {
    if (!violation_.empty()) fail(ErrorKind::Structure, violation_);
    idx_.grow_to(positions, 0);
    idx_.trim(positions);
    child_->freeze(positions);
  }
  void thaw(int64_t positions) override { child_->thaw(positions); }

  int64_t builder_slot(int64_t pos, int64_t) override {
    assemble(pos, pos);
    return pos;
  }
  void builder_commit(int64_t pos, int64_t lo, int64_t hi) override {
    detail::point_commit(lo, hi, "SparsePinpoint");
    idx_.grow_to(pos, 0);
    int64_t cur = idx_.at(pos - 1);
    if (cur != 0 && cur != lo)
      violation_ = "SparsePinpoint: only one nonzero in each subfiber";
    idx_.set(pos - 1, lo);
  }

  int64_t find(int64_t pos, int64_t i) const override {
    return (pos <= idx_.size() && idx_.at(pos - 1) == i) ? pos : 0;
  }
  Value fill() const override { return child_->fill(); }
  void for_each_stored(int64_t pos,
                       const std::function<void(int64_t, int64_t)>& fn) const override {
    if (pos <= idx_.size() && idx_.at(pos - 1) != 0) fn(idx_.at(pos - 1), pos);
  }
  int64_t stored_children(int64_t positions) const override {
    int64_t n = 0;
    for (int64_t p = 1; p <= positions; ++p)
      if (idx_.at(p - 1) != 0) ++n;
    return n;
  }
  void validate(int64_t positions) const override {
    for (int64_t p = 1; p <= positions; ++p) {
      int64_t i = idx_.at(p - 1);
      if (i < 0 || i > shape_) fail(ErrorKind::Structure, "SparsePinpoint idx out of range");
    }
    child_->validate(positions);
  }
  Buffer<int64_t>* int_buffer(BufRole role) override {
    return role == BufRole::Idx ? &idx_ : nullptr;
  }

 private:
  int64_t shape_;
  LevelPtr child_;
  Buffer<int64_t> idx_;
  std::string violation_;
};

// ---------------------------------------------------------------------------
// RunList: runs tile 1..right[last]; the q-th run of subfiber p ends at
// right[ptr[p]+q]. Adjacent runs with equal child content merge at freeze
// via a fresh buffer sublevel.
// ---------------------------------------------------------------------------

class RunListLevel final : public Level {
 public:
  RunListLevel(int64_t shape, LevelPtr child) : shape_(shape), child_(std::move(child)) {}
  LevelKind kind() const override { return LevelKind::RunList; }
  LevelPtr child() const override { return child_; }
  int64_t shape() const override { return shape_; }
  void set_shape(int64_t s) override { shape_ = s; }
  LevelPtr clone_format() const override {
    return std::make_shared<RunListLevel>(shape_, child_->clone_format());
  }

  void declare_reset(int64_t positions) override {
    right_.clear();
    ends_.reset(positions);
    child_->declare_reset(0);
  }
  void assemble(int64_t, int64_t pos_hi) override { ends_.assemble_to(pos_hi); }
  void freeze(int64_t positions) override;
  void thaw(int64_t positions) override {
    ends_.last_pos = positions;
    child_->thaw(right_.size());
  }

  bool accepts_runs() const override { return true; }
  int64_t builder_slot(int64_t pos, int64_t lo) override {
    // A gap since the previous run is completed with a fill run first, so
    // runs stay contiguous from coordinate 1.
    ends_.advance(pos, right_.size(), "RunList");
    int64_t covered = last_right(pos);
    if (lo <= covered) fail(ErrorKind::Structure, "RunList: runs must arrive in order");
    if (lo > covered + 1) {
      int64_t q = right_.size() + 1;
      child_->assemble(q, q);
      right_.push_back(lo - 1);
    }
    int64_t q = right_.size() + 1;
    child_->assemble(q, q);
    return q;
  }
  void builder_commit(int64_t pos, int64_t lo, int64_t hi) override {
    ends_.advance(pos, right_.size(), "RunList");
    if (lo != last_right(pos) + 1)
      fail(ErrorKind::Structure, "RunList: commit does not match probed run");
    right_.push_back(hi);
  }

  int64_t find(int64_t pos, int64_t i) const override {
    int64_t lo = ends_.begin_of(pos), hi = ends_.end_of(pos);
    auto b = right_.raw().begin();
    auto it = std::lower_bound(b + lo, b + hi, i);
    if (it == b + hi) return 0;
    return static_cast<int64_t>(it - b) + 1;
  }
  Value fill() const override { return child_->fill(); }
  void for_each_stored(int64_t pos,
                       const std::function<void(int64_t, int64_t)>& fn) const override {
    for_each_run(pos, [&](int64_t lo, int64_t hi, int64_t q) {
      for (int64_t i = lo; i <= hi; ++i) fn(i, q);
    });
  }
  void for_each_run(int64_t pos,
                    const std::function<void(int64_t, int64_t, int64_t)>& fn) const override {
    int64_t start = 1;
    for (int64_t q = ends_.begin_of(pos); q < ends_.end_of(pos); ++q) {
      fn(start, right_[q], q + 1);
      start = right_[q] + 1;
    }
  }
  int64_t stored_children(int64_t positions) const override {
    return positions == 0 ? 0 : ends_.end_of(positions);
  }
  void validate(int64_t positions) const override {
    for (int64_t p = 1; p <= positions; ++p) {
      int64_t prev = 0;
      for (int64_t q = ends_.begin_of(p); q < ends_.end_of(p); ++q) {
        if (right_.at(q) <= prev || right_.at(q) > shape_)
          fail(ErrorKind::Structure, "RunList runs not ordered within shape");
        prev = right_.at(q);
      }
    }
    child_->validate(stored_children(positions));
  }
  Buffer<int64_t>* int_buffer(BufRole role) override {
    if (role == BufRole::Ptr) return &ends_.ends;
    if (role == BufRole::Right) return &right_;
    return nullptr;
  }

  int64_t runs_in(int64_t pos) const { return ends_.end_of(pos) - ends_.begin_of(pos); }

 private:
  int64_t last_right(int64_t pos) const {
    int64_t lo = ends_.begin_of(pos);
    int64_t n = right_.size();
    return n > lo ? right_[n - 1] : 0;
  }

  int64_t shape_;
  LevelPtr child_;
  Buffer<int64_t> right_;
  detail::EndsBuilder ends_;
};

// ---------------------------------------------------------------------------
// SparseRunList: ordered disjoint runs with explicit left endpoints;
// coordinates between runs read as fill. Deduplicates at freeze like RunList.
// ---------------------------------------------------------------------------

class SparseRunListLevel final : public Level {
 public:
  SparseRunListLevel(int64_t shape, LevelPtr child) : shape_(shape), child_(std::move(child)) {}
  LevelKind kind() const override { return LevelKind::SparseRunList; }
  LevelPtr child() const override { return child_; }
  int64_t shape() const override { return shape_; }
  void set_shape(int64_t s) override { shape_ = s; }
  LevelPtr clone_format() const override {
    return std::make_shared<SparseRunListLevel>(shape_, child_->clone_format());
  }

  void declare_reset(int64_t positions) override {
    left_.clear();
    right_.clear();
    ends_.reset(positions);
    child_->declare_reset(0);
  }
  void assemble(int64_t, int64_t pos_hi) override { ends_.assemble_to(pos_hi); }
  void freeze(int64_t positions) override;
  void thaw(int64_t positions) override {
    ends_.last_pos = positions;
    child_->thaw(left_.size());
  }

  bool accepts_runs() const override { return true; }
  int64_t builder_slot(int64_t, int64_t) override {
    int64_t q = left_.size() + 1;
    child_->assemble(q, q);
    return q;
  }
  void builder_commit(int64_t pos, int64_t lo, int64_t hi) override {
    ends_.advance(pos, left_.size(), "SparseRunList");
    int64_t n = left_.size();
    if (n > ends_.begin_of(pos) && lo <= right_[n - 1])
      fail(ErrorKind::Structure, "SparseRunList: runs must be ordered and disjoint");
    left_.push_back(lo);
    right_.push_back(hi);
  }

  int64_t find(int64_t pos, int64_t i) const override {
    int64_t lo = ends_.begin_of(pos), hi = ends_.end_of(pos);
    auto b = right_.raw().begin();
    auto it = std::lower_bound(b + lo, b + hi, i);
    if (it == b + hi) return 0;
    int64_t q = static_cast<int64_t>(it - b);
    return left_[q] <= i ? q + 1 : 0;
  }
  Value fill() const override { return child_->fill(); }
  void for_each_stored(int64_t pos,
                       const std::function<void(int64_t, int64_t)>& fn) const override {
    for_each_run(pos, [&](int64_t lo, int64_t hi, int64_t q) {
      for (int64_t i = lo; i <= hi; ++i) fn(i, q);
    });
  }
  void for_each_run(int64_t pos,
                    const std::function<void(int64_t, int64_t, int64_t)>& fn) const override {
    for (int64_t q = ends_.begin_of(pos); q < ends_.end_of(pos); ++q)
      fn(left_[q], right_[q], q + 1);
  }
  int64_t stored_children(int64_t positions) const override {
    return positions == 0 ? 0 : ends_.end_of(positions);
  }
  void validate(int64_t positions) const override {
    for (int64_t p = 1; p <= positions; ++p) {
      int64_t prev = 0;
      for (int64_t q = ends_.begin_of(p); q < ends_.end_of(p); ++q) {
        if (left_.at(q) <= prev || right_.at(q) < left_.at(q) || right_.at(q) > shape_)
          fail(ErrorKind::Structure, "SparseRunList runs not ordered within shape");
        prev = right_.at(q);
      }
    }
    child_->validate(stored_children(positions));
  }
  Buffer<int64_t>* int_buffer(BufRole role) override {
    if (role == BufRole::Ptr) return &ends_.ends;
    if (role == BufRole::Left) return &left_;
    if (role == BufRole::Right) return &right_;
    return nullptr;
  }

  int64_t runs_in(int64_t pos) const { return ends_.end_of(pos) - ends_.begin_of(pos); }

 private:
  int64_t shape_;
  LevelPtr child_;
  Buffer<int64_t> left_, right_;
  detail::EndsBuilder ends_;
};

// ---------------------------------------------------------------------------
// SparseInterval: at most one run per subfiber; the child position is the
// subfiber position. No dedup: it cannot hold intermediate multi-run states.
// ---------------------------------------------------------------------------

class SparseIntervalLevel final : public Level {
 public:
  SparseIntervalLevel(int64_t shape, LevelPtr child) : shape_(shape), child_(std::move(child)) {}
  LevelKind kind() const override { return LevelKind::SparseInterval; }
  LevelPtr child() const override { return child_; }
  int64_t shape() const override { return shape_; }
  void set_shape(int64_t s) override { shape_ = s; }
  LevelPtr clone_format() const override {
    return std::make_shared<SparseIntervalLevel>(shape_, child_->clone_format());
  }

  void declare_reset(int64_t positions) override {
    left_.clear();
    right_.clear();
    left_.grow_to(positions, 0);
    right_.grow_to(positions, 0);
    violation_.clear();
    child_->declare_reset(positions);
  }
  void assemble(int64_t pos_lo, int64_t pos_hi) override {
    left_.grow_to(pos_hi, 0);
    right_.grow_to(pos_hi, 0);
    child_->assemble(pos_lo, pos_hi);
  }
  void freeze(int64_t positions) override {
    if (!violation_.empty()) fail(ErrorKind::Structure, violation_);
    left_.grow_to(positions, 0);
    right_.grow_to(positions, 0);
    left_.trim(positions);
    right_.trim(positions);
    child_->freeze(positions);
  }
  void thaw(int64_t positions) override { child_->thaw(positions); }

  bool accepts_runs() const override { return true; }
  int64_t builder_slot(int64_t pos, int64_t) override {
    assemble(pos, pos);
    return pos;
  }
  void builder_commit(int64_t pos, int64_t lo, int64_t hi) override {
    assemble(pos, pos);
    if (left_.at(pos - 1) == 0) {
      left_.set(pos - 1, lo);
      right_.set(pos - 1, hi);
    } else if (lo == right_.at(pos - 1) + 1 && child_->kind() == LevelKind::Pattern) {
      right_.set(pos - 1, hi);
    } else {
      violation_ = "SparseInterval: only one run per subfiber";
    }
  }

  int64_t find(int64_t pos, int64_t i) const override {
    if (pos > left_.size() || left_.at(pos - 1) == 0) return 0;
    return (left_.at(pos - 1) <= i && i <= right_.at(pos - 1)) ? pos : 0;
  }
  Value fill() const override { return child_->fill(); }
  void for_each_stored(int64_t pos,
                       const std::function<void(int64_t, int64_t)>& fn) const override {
    for_each_run(pos, [&](int64_t lo, int64_t hi, int64_t q) {
      for (int64_t i = lo; i <= hi; ++i) fn(i, q);
    });
  }
  void for_each_run(int64_t pos,
                    const std::function<void(int64_t, int64_t, int64_t)>& fn) const override {
    if (pos > left_.size() || left_.at(pos - 1) == 0) return;
    fn(left_.at(pos - 1), right_.at(pos - 1), pos);
  }
  int64_t stored_children(int64_t positions) const override {
    int64_t n = 0;
    for (int64_t p = 1; p <= positions; ++p)
      if (left_.at(p - 1) != 0) ++n;
    return n;
  }
  void validate(int64_t positions) const override {
    for (int64_t p = 1; p <= positions; ++p) {
      if (left_.at(p - 1) == 0) continue;
      if (left_.at(p - 1) < 1 || right_.at(p - 1) < left_.at(p - 1) || right_.at(p - 1) > shape_)
        fail(ErrorKind::Structure, "SparseInterval run out of range");
    }
    child_->validate(positions);
  }
  Buffer<int64_t>* int_buffer(BufRole role) override {
    if (role == BufRole::Left) return &left_;
    if (role == BufRole::Right) return &right_;
    return nullptr;
  }

 private:
  int64_t shape_;
  LevelPtr child_;
  Buffer<int64_t> left_, right_;
  std::string violation_;
};

// ---------------------------------------------------------------------------
// SparseBlockList: blocks of adjacent coordinates. Block q of subfiber p ends
// at idx[ptr[p]+q] and occupies child positions ofs[ptr[p]+q]..ofs[ptr[p]+q+1]-1.
// ---------------------------------------------------------------------------

class SparseBlockListLevel final : public Level {
 public:
  SparseBlockListLevel(int64_t shape, LevelPtr child) : shape_(shape), child_(std::move(child)) {}
  LevelKind kind() const override { return LevelKind::SparseBlockList; }
  LevelPtr child() const override { return child_; }
  int64_t shape() const override { return shape_; }
  void set_shape(int64_t s) override { shape_ = s; }
  LevelPtr clone_format() const override {
    return std::make_shared<SparseBlockListLevel>(shape_, child_->clone_format());
  }

  void declare_reset(int64_t positions) override {
    idx_.clear();
    ofs_.clear();
    ofs_.push_back(1);
    ends_.reset(positions);
    nstored_ = 0;
    child_->declare_reset(0);
  }
  void assemble(int64_t, int64_t pos_hi) override { ends_.assemble_to(pos_hi); }
  void freeze(int64_t positions) override {
    ends_.close(positions, idx_.size());
    idx_.trim(idx_.size());
    ofs_.trim(idx_.size() + 1);
    child_->freeze(nstored_);
  }
  void thaw(int64_t positions) override {
    ends_.last_pos = positions;
    child_->thaw(nstored_);
  }

  int64_t builder_slot(int64_t, int64_t) override {
    int64_t q = nstored_ + 1;
    child_->assemble(q, q);
    return q;
  }
  void builder_commit(int64_t pos, int64_t lo, int64_t hi) override {
    detail::point_commit(lo, hi, "SparseBlockList");
    int64_t i = lo;
    bool same_pos = ends_.last_pos == pos && ends_.begin_of(pos) < idx_.size();
    ends_.advance(pos, idx_.size(), "SparseBlockList");
    if (same_pos && idx_[idx_.size() - 1] >= i)
      fail(ErrorKind::Structure, "SparseBlockList: coordinates must increase");
    nstored_ += 1;
    if (same_pos && idx_[idx_.size() - 1] == i - 1) {
      idx_.set(idx_.size() - 1, i);  // extend the current block
      ofs_.set(ofs_.size() - 1, nstored_ + 1);
    } else {
      idx_.push_back(i);
      ofs_.push_back(nstored_ + 1);
    }
  }

  int64_t find(int64_t pos, int64_t i) const override {
    int64_t lo = ends_.begin_of(pos), hi = ends_.end_of(pos);
    auto b = idx_.raw().begin();
    auto it = std::lower_bound(b + lo, b + hi, i);
    if (it == b + hi) return 0;
    int64_t q = static_cast<int64_t>(it - b);
    int64_t width = ofs_[q + 1] - ofs_[q];
    int64_t start = idx_[q] - width + 1;
    if (i < start) return 0;
    return ofs_[q] + (i - start);
  }
  Value fill() const override { return child_->fill(); }
  void for_each_stored(int64_t pos,
                       const std::function<void(int64_t, int64_t)>& fn) const override {
    for (int64_t q = ends_.begin_of(pos); q < ends_.end_of(pos); ++q) {
      int64_t width = ofs_[q + 1] - ofs_[q];
      int64_t start = idx_[q] - width + 1;
      for (int64_t k = 0; k < width; ++k) fn(start + k, ofs_[q] + k);
    }
  }
  int64_t stored_children(int64_t) const override { return nstored_; }
  void validate(int64_t positions) const override {
    for (int64_t p = 1; p <= positions; ++p) {
      int64_t prev = 0;
      for (int64_t q = ends_.begin_of(p); q < ends_.end_of(p); ++q) {
        int64_t width = ofs_.at(q + 1) - ofs_.at(q);
        if (width < 1) fail(ErrorKind::Structure, "SparseBlockList ofs not increasing");
        int64_t start = idx_.at(q) - width + 1;
        if (start <= prev || idx_.at(q) > shape_)
          fail(ErrorKind::Structure, "SparseBlockList blocks overlap or out of range");
        prev = idx_.at(q);
      }
    }
    child_->validate(nstored_);
  }
  Buffer<int64_t>* int_buffer(BufRole role) override {
    if (role == BufRole::Ptr) return &ends_.ends;
    if (role == BufRole::Idx) return &idx_;
    if (role == BufRole::Ofs) return &ofs_;
    return nullptr;
  }

 private:
  int64_t shape_;
  LevelPtr child_;
  Buffer<int64_t> idx_, ofs_;
  detail::EndsBuilder ends_;
  int64_t nstored_ = 0;
};

// ---------------------------------------------------------------------------
// SparseBand: exactly one block per subfiber; ofs[p]..ofs[p+1]-1 are the
// subpositions of the block ending at idx[p]. ofs is rebuilt at freeze from
// per-subfiber widths.
// ---------------------------------------------------------------------------

class SparseBandLevel final : public Level {
 public:
  SparseBandLevel(int64_t shape, LevelPtr child) : shape_(shape), child_(std::move(child)) {}
  LevelKind kind() const override { return LevelKind::SparseBand; }
  LevelPtr child() const override { return child_; }
  int64_t shape() const override { return shape_; }
  void set_shape(int64_t s) override { shape_ = s; }
  LevelPtr clone_format() const override {
    return std::make_shared<SparseBandLevel>(shape_, child_->clone_format());
  }

  void declare_reset(int64_t positions) override {
    idx_.clear();
    width_.clear();
    ofs_.clear();
    idx_.grow_to(positions, 0);
    width_.grow_to(positions, 0);
    last_pos_ = 0;
    nstored_ = 0;
    violation_.clear();
    child_->declare_reset(0);
  }
  void assemble(int64_t, int64_t pos_hi) override {
    idx_.grow_to(pos_hi, 0);
    width_.grow_to(pos_hi, 0);
  }
  void freeze(int64_t positions) override {
    if (!violation_.empty()) fail(ErrorKind::Structure, violation_);
    idx_.grow_to(positions, 0);
    width_.grow_to(positions, 0);
    idx_.trim(positions);
    width_.trim(positions);
    ofs_.clear();
    ofs_.grow_to(positions + 1, 1);
    ofs_.set(0, 1);
    for (int64_t p = 1; p <= positions; ++p) ofs_.set(p, ofs_.at(p - 1) + width_.at(p - 1));
    child_->freeze(nstored_);
  }
  void thaw(int64_t positions) override {
    last_pos_ = positions;
    child_->thaw(nstored_);
  }

  int64_t builder_slot(int64_t, int64_t) override {
    int64_t q = nstored_ + 1;
    child_->assemble(q, q);
    return q;
  }
  void builder_commit(int64_t pos, int64_t lo, int64_t hi) override {
    detail::point_commit(lo, hi, "SparseBand");
    int64_t i = lo;
    if (pos < last_pos_)
      fail(ErrorKind::Structure, "SparseBand: writes must visit positions in order");
    last_pos_ = pos;
    idx_.grow_to(pos, 0);
    width_.grow_to(pos, 0);
    int64_t cur = idx_.at(pos - 1);
    if (cur == 0) {
      idx_.set(pos - 1, i);
      width_.set(pos - 1, 1);
      nstored_ += 1;
    } else if (i == cur + 1) {
      idx_.set(pos - 1, i);
      width_.set(pos - 1, width_.at(pos - 1) + 1);
      nstored_ += 1;
    } else if (i <= cur) {
      fail(ErrorKind::Structure, "SparseBand: coordinates must increase");
    } else {
      violation_ = "SparseBand: only one block per subfiber";
    }
  }

  int64_t find(int64_t pos, int64_t i) const override {
    int64_t end = idx_.at(pos - 1);
    if (end == 0) return 0;
    int64_t width = ofs_.at(pos) - ofs_.at(pos - 1);
    int64_t start = end - width + 1;
    if (i < start || i > end) return 0;
    return ofs_.at(pos - 1) + (i - start);
  }
  Value fill() const override { return child_->fill(); }
  void for_each_stored(int64_t pos,
                       const std::function<void(int64_t, int64_t)>& fn) const override {
    int64_t end = idx_.at(pos - 1);
    if (end == 0) return;
    int64_t width = ofs_.at(pos) - ofs_.at(pos - 1);
    for (int64_t k = 0; k < width; ++k) fn(end - width + 1 + k, ofs_.at(pos - 1) + k);
  }
  int64_t stored_children(int64_t) const override { return nstored_; }
  void validate(int64_t positions) const override {
    for (int64_t p = 1; p <= positions; ++p) {
      int64_t end = idx_.at(p - 1);
      int64_t width = ofs_.at(p) - ofs_.at(p - 1);
      if (end == 0 && width != 0)
        fail(ErrorKind::Structure, "SparseBand empty subfiber with width");
      if (end != 0 && (width < 1 || end - width + 1 < 1 || end > shape_))
        fail(ErrorKind::Structure, "SparseBand block out of range");
    }
    child_->validate(nstored_);
  }
  Buffer<int64_t>* int_buffer(BufRole role) override {
    if (role == BufRole::Idx) return &idx_;
    if (role == BufRole::Ofs) return &ofs_;
    return nullptr;
  }

 private:
  int64_t shape_;
  LevelPtr child_;
  Buffer<int64_t> idx_, width_, ofs_;
  int64_t last_pos_ = 0;
  int64_t nstored_ = 0;
  std::string violation_;
};

// ---------------------------------------------------------------------------
// SparseByteMap: dense occupancy table plus an unsorted dirty list sorted at
// freeze. The child assembles the entire space of subfibers, so a re-declare
// only resets the dirty locations.
// ---------------------------------------------------------------------------

class SparseByteMapLevel final : public Level {
 public:
  SparseByteMapLevel(int64_t shape, LevelPtr child) : shape_(shape), child_(std::move(child)) {}
  LevelKind kind() const override { return LevelKind::SparseByteMap; }
  LevelPtr child() const override { return child_; }
  int64_t shape() const override { return shape_; }
  void set_shape(int64_t s) override { shape_ = s; }
  LevelPtr clone_format() const override {
    return std::make_shared<SparseByteMapLevel>(shape_, child_->clone_format());
  }

  void declare_reset(int64_t positions) override {
    int64_t space = positions * shape_;
    if (tbl_.size() == space && child_->kind() == LevelKind::Element) {
      for (auto& [p, i] : dirty_) {
        int64_t q = slot(p, i);
        tbl_.set(q - 1, 0);
        static_cast<ElementLevel*>(child_.get())->clear_at(q);
      }
    } else if (tbl_.size() == space && child_->kind() == LevelKind::Pattern) {
      for (auto& [p, i] : dirty_) tbl_.set(slot(p, i) - 1, 0);
    } else {
      tbl_.clear();
      tbl_.grow_to(space, 0);
      tbl_.fill_range(0, space, 0);
      child_->declare_reset(space);
    }
    dirty_.clear();
    idx_.clear();
    ends_.reset(positions);
    sorted_ = false;
  }
  void assemble(int64_t pos_lo, int64_t pos_hi) override {
    tbl_.grow_to(pos_hi * shape_, 0);
    ends_.assemble_to(pos_hi);
    child_->assemble((pos_lo - 1) * shape_ + 1, pos_hi * shape_);
  }
  void freeze(int64_t positions) override {
    // Sorting the dirty list gives concordant frozen iteration.
    std::sort(dirty_.begin(), dirty_.end());
    idx_.clear();
    ends_.reset(positions);
    for (auto& [p, i] : dirty_) {
      ends_.advance(p, idx_.size(), "SparseByteMap");
      idx_.push_back(i);
    }
    ends_.close(positions, idx_.size());
    sorted_ = true;
    child_->freeze(positions * shape_);
  }
  void thaw(int64_t positions) override {
    sorted_ = false;
    child_->thaw(positions * shape_);
  }

  int64_t slot(int64_t pos, int64_t i) const { return (pos - 1) * shape_ + i; }
  void mark(int64_t pos, int64_t i) {
    int64_t q = slot(pos, i);
    if (!tbl_.at(q - 1)) {
      tbl_.set(q - 1, 1);
      dirty_.emplace_back(pos, i);
    }
  }

  int64_t builder_slot(int64_t pos, int64_t i) override { return slot(pos, i); }
  void builder_commit(int64_t pos, int64_t lo, int64_t hi) override {
    detail::point_commit(lo, hi, "SparseByteMap");
    mark(pos, lo);
  }

  int64_t find(int64_t pos, int64_t i) const override {
    if (i < 1 || i > shape_) return 0;
    int64_t q = slot(pos, i);
    return tbl_.at(q - 1) ? q : 0;
  }
  Value fill() const override { return child_->fill(); }
  void for_each_stored(int64_t pos,
                       const std::function<void(int64_t, int64_t)>& fn) const override {
    if (sorted_) {
      for (int64_t q = ends_.begin_of(pos); q < ends_.end_of(pos); ++q)
        fn(idx_[q], slot(pos, idx_[q]));
      return;
    }
    for (int64_t i = 1; i <= shape_; ++i)
      if (tbl_.at(slot(pos, i) - 1)) fn(i, slot(pos, i));
  }
  int64_t stored_children(int64_t) const override {
    return static_cast<int64_t>(dirty_.size());
  }
  void validate(int64_t positions) const override {
    int64_t marked = 0;
    for (int64_t q = 0; q < tbl_.size(); ++q) marked += tbl_.at(q) ? 1 : 0;
    if (marked != static_cast<int64_t>(dirty_.size()))
      fail(ErrorKind::Structure, "SparseByteMap tbl disagrees with dirty list");
    for (auto& [p, i] : dirty_)
      if (p < 1 || p > positions || i < 1 || i > shape_ || !tbl_.at(slot(p, i) - 1))
        fail(ErrorKind::Structure, "SparseByteMap dirty entry out of range");
    child_->validate(positions * shape_);
  }
  Buffer<int64_t>* int_buffer(BufRole role) override {
    if (role == BufRole::Ptr) return &ends_.ends;
    if (role == BufRole::Idx) return &idx_;
    return nullptr;
  }
  Buffer<uint8_t>* byte_buffer() override { return &tbl_; }

  int64_t dirty_count() const { return static_cast<int64_t>(dirty_.size()); }

 private:
  int64_t shape_;
  LevelPtr child_;
  Buffer<uint8_t> tbl_;
  std::vector<std::pair<int64_t, int64_t>> dirty_;
  Buffer<int64_t> idx_;  // sorted coordinates after freeze
  detail::EndsBuilder ends_;
  bool sorted_ = false;
};

// ---------------------------------------------------------------------------
// SparseHash: random-access construction through a hash table; freeze sorts
// the committed keys into ptr/idx plus a parallel child-position buffer.
// ---------------------------------------------------------------------------

class SparseHashLevel final : public Level {
 public:
  SparseHashLevel(int64_t shape, LevelPtr child) : shape_(shape), child_(std::move(child)) {}
  LevelKind kind() const override { return LevelKind::SparseHash; }
  LevelPtr child() const override { return child_; }
  int64_t shape() const override { return shape_; }
  void set_shape(int64_t s) override { shape_ = s; }
  LevelPtr clone_format() const override {
    return std::make_shared<SparseHashLevel>(shape_, child_->clone_format());
  }

  void declare_reset(int64_t positions) override {
    tbl_.clear();
    idx_.clear();
    pos_.clear();
    ends_.reset(positions);
    nalloc_ = 0;
    child_->declare_reset(0);
  }
  void assemble(int64_t, int64_t pos_hi) override { ends_.assemble_to(pos_hi); }
  void freeze(int64_t positions) override {
    std::vector<std::pair<std::pair<int64_t, int64_t>, int64_t>> committed;
    committed.reserve(tbl_.size());
    for (auto& [key, ent] : tbl_)
      if (ent.dirty) committed.push_back({key, ent.child_pos});
    // Lexicographic (position, coordinate) order: concordant column-major
    // iteration after freeze.
    std::sort(committed.begin(), committed.end());
    idx_.clear();
    pos_.clear();
    ends_.reset(positions);
    for (auto& [key, q] : committed) {
      ends_.advance(key.first, idx_.size(), "SparseHash");
      idx_.push_back(key.second);
      pos_.push_back(q);
    }
    ends_.close(positions, idx_.size());
    child_->freeze(nalloc_);
  }
  void thaw(int64_t) override {
    ends_.last_pos = 0;
    child_->thaw(nalloc_);
  }

  int64_t slot(int64_t pos, int64_t i) {
    auto key = std::make_pair(pos, i);
    auto it = tbl_.find(key);
    if (it != tbl_.end()) return it->second.child_pos;
    nalloc_ += 1;
    child_->assemble(nalloc_, nalloc_);
    tbl_[key] = {nalloc_, false};
    return nalloc_;
  }
  void mark(int64_t pos, int64_t i) { tbl_[std::make_pair(pos, i)].dirty = true; }

  int64_t builder_slot(int64_t pos, int64_t i) override { return slot(pos, i); }
  void builder_commit(int64_t pos, int64_t lo, int64_t hi) override {
    detail::point_commit(lo, hi, "SparseHash");
    mark(pos, lo);
  }

  int64_t find(int64_t pos, int64_t i) const override {
    auto it = tbl_.find(std::make_pair(pos, i));
    if (it == tbl_.end() || !it->second.dirty) return 0;
    return it->second.child_pos;
  }
  Value fill() const override { return child_->fill(); }
  void for_each_stored(int64_t pos,
                       const std::function<void(int64_t, int64_t)>& fn) const override {
    for (int64_t q = ends_.begin_of(pos); q < ends_.end_of(pos); ++q) fn(idx_[q], pos_[q]);
  }
  int64_t stored_children(int64_t positions) const override {
    return positions == 0 ? 0 : ends_.end_of(positions);
  }
  void validate(int64_t positions) const override {
    for (int64_t p = 1; p <= positions; ++p) {
      for (int64_t q = ends_.begin_of(p); q < ends_.end_of(p); ++q) {
        if (idx_.at(q) < 1 || idx_.at(q) > shape_)
          fail(ErrorKind::Structure, "SparseHash idx out of range");
        if (q > ends_.begin_of(p) && idx_.at(q) <= idx_.at(q - 1))
          fail(ErrorKind::Structure, "SparseHash idx not sorted");
      }
    }
    child_->validate(nalloc_);
  }
  Buffer<int64_t>* int_buffer(BufRole role) override {
    if (role == BufRole::Ptr) return &ends_.ends;
    if (role == BufRole::Idx) return &idx_;
    if (role == BufRole::Pos) return &pos_;
    return nullptr;
  }

 private:
  struct Ent {
    int64_t child_pos = 0;
    bool dirty = false;
  };
  int64_t shape_;
  LevelPtr child_;
  std::map<std::pair<int64_t, int64_t>, Ent> tbl_;
  Buffer<int64_t> idx_, pos_;
  detail::EndsBuilder ends_;
  int64_t nalloc_ = 0;
};

// --- generic subfiber copy ---------------------------------------------------

inline void copy_subfiber(Level& dst, int64_t dpos, const Level& src, int64_t spos) {
  if (dst.is_leaf()) {
    if (auto* vb = dst.value_buffer()) vb->set(dpos - 1, src.leaf_read(spos));
    return;
  }
  src.for_each_run(spos, [&](int64_t lo, int64_t hi, int64_t sq) {
    if (dst.accepts_runs()) {
      int64_t dq = dst.builder_slot(dpos, lo);
      copy_subfiber(*dst.child(), dq, *src.child(), sq);
      dst.builder_commit(dpos, lo, hi);
    } else {
      for (int64_t i = lo; i <= hi; ++i) {
        int64_t dq = dst.builder_slot(dpos, i);
        copy_subfiber(*dst.child(), dq, *src.child(), sq);
        dst.builder_commit(dpos, i, i);
      }
    }
  });
}

// --- RunList / SparseRunList freeze-time dedup -------------------------------

inline void RunListLevel::freeze(int64_t positions) {
  ends_.close(positions, right_.size());
  child_->freeze(right_.size());
  // Merge adjacent runs whose child content is bitwise equal, copying the
  // survivors into a fresh buffer sublevel.
  LevelPtr buf = child_->clone_format();
  buf->declare_reset(0);
  Buffer<int64_t> new_right;
  detail::EndsBuilder new_ends;
  new_ends.reset(positions);
  int64_t out = 0;
  for (int64_t p = 1; p <= positions; ++p) {
    int64_t lo = ends_.begin_of(p), hi = ends_.end_of(p);
    for (int64_t q = lo; q < hi; ++q) {
      bool merge = q > lo && detail::subfiber_equal(*child_, q, q + 1);
      if (merge) {
        new_right.set(new_right.size() - 1, right_[q]);
      } else {
        new_ends.advance(p, new_right.size(), "RunList");
        buf->assemble(out + 1, out + 1);
        copy_subfiber(*buf, out + 1, *child_, q + 1);
        new_right.push_back(right_[q]);
        out += 1;
      }
    }
  }
  new_ends.close(positions, new_right.size());
  buf->freeze(out);
  right_ = std::move(new_right);
  ends_ = std::move(new_ends);
  child_ = buf;
}

inline void SparseRunListLevel::freeze(int64_t positions) {
  ends_.close(positions, right_.size());
  child_->freeze(right_.size());
  LevelPtr buf = child_->clone_format();
  buf->declare_reset(0);
  Buffer<int64_t> new_left, new_right;
  detail::EndsBuilder new_ends;
  new_ends.reset(positions);
  int64_t out = 0;
  for (int64_t p = 1; p <= positions; ++p) {
    int64_t lo = ends_.begin_of(p), hi = ends_.end_of(p);
    for (int64_t q = lo; q < hi; ++q) {
      bool merge = q > lo && left_[q] == right_[q - 1] + 1 &&
                   detail::subfiber_equal(*child_, q, q + 1);
      if (merge) {
        new_right.set(new_right.size() - 1, right_[q]);
      } else {
        new_ends.advance(p, new_right.size(), "SparseRunList");
        buf->assemble(out + 1, out + 1);
        copy_subfiber(*buf, out + 1, *child_, q + 1);
        new_left.push_back(left_[q]);
        new_right.push_back(right_[q]);
        out += 1;
      }
    }
  }
  new_ends.close(positions, new_right.size());
  buf->freeze(out);
  left_ = std::move(new_left);
  right_ = std::move(new_right);
  ends_ = std::move(new_ends);
  child_ = buf;
}

}  // namespace finch
