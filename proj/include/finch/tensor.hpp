#pragma once

#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "finch/extent.hpp"
#include "finch/levels.hpp"

namespace finch {

// One slice of a tensor at a given level, identified by a position into that
// level's bulk storage.
struct Fiber {
  Level* level = nullptr;
  int64_t pos = 1;
};

// A tensor is a root level tree plus shape and lifecycle mode. Index lists
// are column-major: coords[0] is the innermost (fastest) mode and the root
// level stores the outermost mode.
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::string name, LevelPtr root) : name_(std::move(name)), root_(std::move(root)) {
    dims_.assign(rank(), Extent::dimensionless());
  }

  const std::string& name() const { return name_; }
  void set_name(std::string n) { name_ = std::move(n); }
  LevelPtr root() const { return root_; }
  Mode mode() const { return mode_; }
  bool is_scalar() const { return root_->is_leaf(); }

  int rank() const {
    int r = 0;
    for (Level* l = root_.get(); !l->is_leaf(); l = l->child().get()) ++r;
    return r;
  }

  // Level at mode m (1-based, innermost first).
  Level* level_of_mode(int m) const {
    int depth = rank() - m;
    Level* l = root_.get();
    for (int d = 0; d < depth; ++d) l = l->child().get();
    return l;
  }

  Level* leaf() const {
    Level* l = root_.get();
    while (!l->is_leaf()) l = l->child().get();
    return l;
  }

  Value fill() const { return root_->fill(); }
  const std::vector<Extent>& dims() const { return dims_; }
  std::string format_spec() const { return root_->spec(); }

  // --- lifecycle -----------------------------------------------------------

  void declare(const Value& init, const std::vector<Extent>& dims) {
    if (mode_ != Mode::Read) fail(ErrorKind::Lifecycle, name_ + ": declare requires read mode");
    if (!bits_equal(init, fill()) && !values_equal(init, fill()))
      fail(ErrorKind::UnsupportedInit,
           name_ + ": declare init " + value_to_string(init) + " differs from fill " +
               value_to_string(fill()));
    if (static_cast<int>(dims.size()) != rank())
      fail(ErrorKind::Dimension, name_ + ": declare rank mismatch");
    for (const Extent& e : dims) {
      if (e.is_dimless()) fail(ErrorKind::Dimension, name_ + ": declare with dimensionless size");
      if (e.lo != 1)
        fail(ErrorKind::Dimension, name_ + ": tensor dimensions must start at 1");
    }
    dims_ = dims;
    Level* l = root_.get();
    for (int m = rank(); m >= 1; --m) {
      l->set_shape(dims_[m - 1].width());
      l = l->child().get();
    }
    root_->declare_reset(1);
    mode_ = Mode::Update;
  }

  void freeze() {
    if (mode_ != Mode::Update) fail(ErrorKind::Lifecycle, name_ + ": freeze requires update mode");
    root_->freeze(1);
    mode_ = Mode::Read;
  }

  void thaw() {
    if (mode_ != Mode::Read) fail(ErrorKind::Lifecycle, name_ + ": thaw requires read mode");
    root_->thaw(1);
    mode_ = Mode::Update;
  }

  // --- reads -----------------------------------------------------------------

  // Total read: any in-range coordinate yields a value, unstored ones the fill.
  Value read(const std::vector<int64_t>& coords) const {
    if (static_cast<int>(coords.size()) != rank())
      fail(ErrorKind::Contract, name_ + ": read rank mismatch");
    const Level* l = root_.get();
    int64_t pos = 1;
    for (int m = rank(); m >= 1; --m) {
      int64_t next = l->find(pos, coords[m - 1]);
      if (next == 0) return fill();
      pos = next;
      l = l->child().get();
    }
    return l->leaf_read(pos);
  }

  Value scalar_value() const {
    if (!is_scalar()) fail(ErrorKind::Contract, name_ + ": not a scalar tensor");
    return root_->leaf_read(1);
  }

  // Visits every stored leaf coordinate with its value, column-major.
  void for_each_entry(const std::function<void(const std::vector<int64_t>&, Value)>& fn) const {
    std::vector<int64_t> coords(rank(), 0);
    walk_entries(root_.get(), 1, coords, fn);
  }

  // Number of leaf positions explicitly materialized.
  int64_t countstored() const {
    if (mode_ != Mode::Read)
      fail(ErrorKind::Lifecycle, name_ + ": countstored requires a frozen tensor");
    if (is_scalar()) return root_->stored_children(1);
    return count_stored_rec(root_.get(), 1);
  }

  void validate() const { root_->validate(1); }

 private:
  static int64_t count_stored_rec(const Level* l, int64_t pos) {
    if (l->is_leaf()) return 1;
    int64_t total = 0;
    l->for_each_run(pos, [&](int64_t, int64_t, int64_t q) {
      total += count_stored_rec(l->child().get(), q);
    });
    return total;
  }

  void walk_entries(const Level* l, int64_t pos, std::vector<int64_t>& coords,
                    const std::function<void(const std::vector<int64_t>&, Value)>& fn) const {
    if (l->is_leaf()) {
      fn(coords, l->leaf_read(pos));
      return;
    }
    int m = 0;  // mode of this level
    {
      const Level* t = root_.get();
      int depth = 0;
      while (t != l) {
        t = t->child().get();
        ++depth;
      }
      m = rank() - depth;
    }
    l->for_each_stored(pos, [&](int64_t i, int64_t q) {
      coords[m - 1] = i;
      walk_entries(l->child().get(), q, coords, fn);
    });
  }

  std::string name_;
  LevelPtr root_;
  std::vector<Extent> dims_;
  Mode mode_ = Mode::Read;
};

using TensorPtr = std::shared_ptr<Tensor>;

// --- level spec parsing -------------------------------------------------------

// Parses the textual format syntax used by the CLI and tests, e.g.
// `Dense(SparseList(Element(0.0)))` or `SparseRunList(Pattern())`.
// Case-sensitive; the fill literal sits inside Element and the scalars.
inline LevelPtr parse_level_spec(const std::string& text) {
  size_t pos = 0;
  auto skip_ws = [&] {
    while (pos < text.size() && isspace(static_cast<unsigned char>(text[pos]))) ++pos;
  };
  std::function<LevelPtr()> parse_level;
  auto parse_value = [&]() -> Value {
    skip_ws();
    size_t start = pos;
    if (pos < text.size() && (text[pos] == '-' || text[pos] == '+')) ++pos;
    if (text.compare(pos, 3, "Inf") == 0) {
      pos += 3;
      double v = std::numeric_limits<double>::infinity();
      return Value::of_float(text[start] == '-' ? -v : v);
    }
    if (text.compare(pos, 4, "true") == 0) {
      pos += 4;
      return Value::of_bool(true);
    }
    if (text.compare(pos, 5, "false") == 0) {
      pos += 5;
      return Value::of_bool(false);
    }
    bool is_float = false;
    while (pos < text.size() &&
           (isdigit(static_cast<unsigned char>(text[pos])) || text[pos] == '.' ||
            text[pos] == 'e' || text[pos] == 'E' ||
            ((text[pos] == '-' || text[pos] == '+') && pos > start &&
             (text[pos - 1] == 'e' || text[pos - 1] == 'E')))) {
      if (text[pos] == '.' || text[pos] == 'e' || text[pos] == 'E') is_float = true;
      ++pos;
    }
    if (pos == start) fail(ErrorKind::Parse, "bad fill literal in level spec: " + text);
    std::string tok = text.substr(start, pos - start);
    if (is_float) return Value::of_float(std::stod(tok));
    return Value::of_int(std::stoll(tok));
  };
  parse_level = [&]() -> LevelPtr {
    skip_ws();
    size_t start = pos;
    while (pos < text.size() && (isalnum(static_cast<unsigned char>(text[pos])))) ++pos;
    std::string name = text.substr(start, pos - start);
    skip_ws();
    if (pos >= text.size() || text[pos] != '(')
      fail(ErrorKind::Parse, "expected '(' in level spec: " + text);
    ++pos;
    skip_ws();
    auto close = [&] {
      skip_ws();
      if (pos >= text.size() || text[pos] != ')')
        fail(ErrorKind::Parse, "expected ')' in level spec: " + text);
      ++pos;
    };
    if (name == "Element") {
      Value fill = parse_value();
      close();
      return std::make_shared<ElementLevel>(fill);
    }
    if (name == "Pattern") {
      close();
      return std::make_shared<PatternLevel>();
    }
    if (name == "Scalar") {
      Value fill = parse_value();
      close();
      return std::make_shared<PlainScalarLevel>(fill);
    }
    if (name == "SparseScalar") {
      Value fill = parse_value();
      close();
      return std::make_shared<SparseScalarLevel>(fill);
    }
    if (name == "ShortCircuitScalar") {
      Value fill = parse_value();
      close();
      return std::make_shared<ShortCircuitScalarLevel>(fill);
    }
    LevelPtr child = parse_level();
    close();
    if (name == "Dense") return std::make_shared<DenseLevel>(0, child);
    if (name == "SparseList") return std::make_shared<SparseListLevel>(0, child);
    if (name == "SparsePinpoint") return std::make_shared<SparsePinpointLevel>(0, child);
    if (name == "RunList") return std::make_shared<RunListLevel>(0, child);
    if (name == "SparseRunList") return std::make_shared<SparseRunListLevel>(0, child);
    if (name == "SparseInterval") return std::make_shared<SparseIntervalLevel>(0, child);
    if (name == "SparseBlockList") return std::make_shared<SparseBlockListLevel>(0, child);
    if (name == "SparseBand") return std::make_shared<SparseBandLevel>(0, child);
    if (name == "SparseHash") return std::make_shared<SparseHashLevel>(0, child);
    if (name == "SparseByteMap") return std::make_shared<SparseByteMapLevel>(0, child);
    fail(ErrorKind::Parse, "unknown level kind " + name);
  };
  LevelPtr lvl = parse_level();
  skip_ws();
  if (pos != text.size()) fail(ErrorKind::Parse, "trailing input in level spec: " + text);
  return lvl;
}

inline TensorPtr make_tensor(const std::string& name, const std::string& spec) {
  return std::make_shared<Tensor>(name, parse_level_spec(spec));
}

// --- random-access construction -------------------------------------------------

// Writes `value` at `coords` into an update-mode tensor whose levels all
// support random-access construction (hash, bytemap, dense chains).
inline void poke(Tensor& t, const std::vector<int64_t>& coords, const Value& value) {
  Level* l = t.root().get();
  int64_t pos = 1;
  std::vector<std::pair<Level*, std::pair<int64_t, int64_t>>> path;
  for (int m = t.rank(); m >= 1; --m) {
    path.push_back({l, {pos, coords[m - 1]}});
    pos = l->builder_slot(pos, coords[m - 1]);
    l = l->child().get();
  }
  if (auto* vb = l->value_buffer()) {
    vb->set(pos - 1, value);
  } else if (l->kind() == LevelKind::Pattern) {
    if (!(value.is_bool() && value.b))
      fail(ErrorKind::Structure, "Pattern level stores only true");
  }
  for (auto it = path.rbegin(); it != path.rend(); ++it)
    it->first->builder_commit(it->second.first, it->second.second, it->second.second);
}

// --- COO construction and conversion ---------------------------------------------

struct CooEntry {
  std::vector<int64_t> coords;  // mode order, innermost first
  Value value;
};

// Frozen tensor agreeing with the COO map; built through a SparseHash
// intermediate so entries need not be sorted, then converted to the target.
inline TensorPtr tensor_from_coo(const std::string& name, const std::vector<Extent>& dims,
                                 std::vector<CooEntry> entries, const Value& fill,
                                 const std::string& format);

// Frozen, value-identical copy of `t` in another format.
inline TensorPtr convert(const Tensor& t, const std::string& format) {
  if (t.mode() != Mode::Read) fail(ErrorKind::Lifecycle, "convert requires a frozen tensor");
  LevelPtr root = parse_level_spec(format);
  auto out = std::make_shared<Tensor>(t.name(), root);
  if (out->rank() != t.rank()) fail(ErrorKind::Contract, "convert rank mismatch");
  if (!bits_equal(out->fill(), t.fill()) && !values_equal(out->fill(), t.fill()))
    fail(ErrorKind::Contract, "convert must preserve the fill value");
  if (out->is_scalar()) {
    out->declare(out->fill(), {});
    if (auto* vb = out->root()->value_buffer()) vb->set(0, t.scalar_value());
    out->freeze();
    return out;
  }
  out->declare(out->fill(), t.dims());
  if (out->leaf()->kind() == LevelKind::Pattern) {
    // A pattern leaf can only represent stored `true`.
    t.for_each_entry([&](const std::vector<int64_t>&, Value v) {
      if (!(v.is_bool() && v.b))
        fail(ErrorKind::Structure, "convert: Pattern leaf requires boolean true entries");
    });
  }
  copy_subfiber(*out->root(), 1, *t.root(), 1);
  out->freeze();
  out->validate();
  return out;
}

inline TensorPtr tensor_from_coo(const std::string& name, const std::vector<Extent>& dims,
                                 std::vector<CooEntry> entries, const Value& fill,
                                 const std::string& format) {
  LevelPtr target_root = parse_level_spec(format);
  auto target = std::make_shared<Tensor>(name, target_root);
  int r = target->rank();
  if (static_cast<int>(dims.size()) != r) fail(ErrorKind::Dimension, "tensor_from_coo rank mismatch");
  if (!bits_equal(target->fill(), fill) && !values_equal(target->fill(), fill))
    fail(ErrorKind::Contract, "tensor_from_coo fill must match the leaf fill");

  // Validate coordinates and reject duplicates.
  {
    std::vector<std::vector<int64_t>> seen;
    seen.reserve(entries.size());
    for (auto& e : entries) {
      if (static_cast<int>(e.coords.size()) != r)
        fail(ErrorKind::Dimension, "tensor_from_coo entry rank mismatch");
      for (int m = 1; m <= r; ++m)
        if (!dims[m - 1].contains(e.coords[m - 1]))
          fail(ErrorKind::Dimension, "tensor_from_coo coordinate out of range");
      seen.push_back(e.coords);
    }
    std::sort(seen.begin(), seen.end());
    if (std::adjacent_find(seen.begin(), seen.end()) != seen.end())
      fail(ErrorKind::DuplicateEntry, "tensor_from_coo: duplicate coordinates");
  }

  if (r == 0) {
    target->declare(fill, {});
    for (auto& e : entries)
      if (auto* vb = target->root()->value_buffer()) vb->set(0, e.value);
    target->freeze();
    return target;
  }

  // SparseHash intermediate supports unsorted writes.
  std::string hash_spec;
  for (int m = 0; m < r; ++m) hash_spec += "SparseHash(";
  hash_spec += target->leaf()->spec();
  for (int m = 0; m < r; ++m) hash_spec += ")";
  auto inter = make_tensor(name, hash_spec);
  inter->declare(fill, dims);
  for (auto& e : entries) {
    if (bits_equal(e.value, fill)) continue;  // fill-valued entries are dropped
    poke(*inter, e.coords, e.value);
  }
  inter->freeze();
  inter->validate();
  return convert(*inter, format);
}

// Dense read-back comparison used across the test oracles.
inline bool tensors_value_equal(const Tensor& a, const Tensor& b, double rel_tol = 0.0) {
  if (a.rank() != b.rank()) return false;
  if (a.rank() == 0) {
    Value va = a.scalar_value(), vb = b.scalar_value();
    if (rel_tol == 0.0) return values_equal(va, vb);
    double fa = va.as_float(), fb = vb.as_float();
    return std::abs(fa - fb) <= rel_tol * std::max({1.0, std::abs(fa), std::abs(fb)});
  }
  std::vector<int64_t> coords(a.rank());
  std::function<bool(int)> walk = [&](int m) -> bool {
    if (m > a.rank()) {
      Value va = a.read(coords), vb = b.read(coords);
      if (rel_tol == 0.0) return values_equal(va, vb) || bits_equal(va, vb);
      if (va.is_numeric() && vb.is_numeric()) {
        double fa = va.as_float(), fb = vb.as_float();
        return std::abs(fa - fb) <= rel_tol * std::max({1.0, std::abs(fa), std::abs(fb)});
      }
      return values_equal(va, vb);
    }
    const Extent& e = a.dims()[m - 1];
    for (int64_t i = e.lo; i <= e.hi; ++i) {
      coords[m - 1] = i;
      if (!walk(m + 1)) return false;
    }
    return true;
  };
  return walk(1);
}

}  // namespace finch
