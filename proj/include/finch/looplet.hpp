#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "finch/ast.hpp"
#include "finch/kernel_ir.hpp"
#include "finch/simplify.hpp"

namespace finch {

class NameGen {
 public:
  std::string fresh(const std::string& base) { return base + std::to_string(counter_++); }
  void reset() { counter_ = 0; }

 private:
  int counter_ = 0;
};

// Statement sink used while materializing looplet bodies.
struct Emit {
  std::vector<kir::StmtP>* out = nullptr;
  NameGen* names = nullptr;
  void push(kir::StmtP s) { out->push_back(std::move(s)); }
  std::string fresh(const std::string& base) { return names->fresh(base); }
};

// Per-mode wrapper context carried by a fiber mid-unfurl.
struct ModeInfo {
  kir::ExprP delta;  // null means 0
  bool permissive = false;
  ast::Protocol protocol = ast::Protocol::Walk;
  std::optional<std::pair<kir::ExprP, kir::ExprP>> window;
  bool toeplitz_added = false;  // this mode is the inserted shift index
};

// A fiber being unfurled one mode at a time: a level, a position expression,
// and wrapper context for the remaining modes (back() is consumed next).
// Virtual fibers stand in for out-of-bounds (missing) and unstored (fill)
// subtrees.
struct FiberC {
  std::string tensor;
  const Level* level = nullptr;
  int depth = 0;
  kir::ExprP pos;
  Mode mode = Mode::Read;
  enum class Virt { None, Fill, Missing } virt = Virt::None;
  std::vector<ModeInfo> modes;
  std::string dirty;  // innermost enclosing dirty flag when updating
  Value fill;
  int remaining = 0;  // remaining mode count (tracked for virtual fibers)
};
using FiberP = std::shared_ptr<FiberC>;

struct MaskC {
  ast::WrapKind kind = ast::WrapKind::UpTriMask;
  kir::ExprP col;  // bound after the column lookup
  bool col_bound = false;
};

// A looplet leaf: either a value expression (with its leaf-visit weight on
// the expression) or a fiber awaiting further unfurling.
struct Slot {
  enum class K { Value, Fiber, Mask };
  K kind = K::Value;
  kir::ExprP value;
  FiberP fiber;
  MaskC mask;

  static Slot of_value(kir::ExprP e) {
    Slot s;
    s.kind = K::Value;
    s.value = std::move(e);
    return s;
  }
  static Slot of_fiber(FiberP f) {
    Slot s;
    s.kind = K::Fiber;
    s.fiber = std::move(f);
    return s;
  }
  static Slot of_mask(MaskC m) {
    Slot s;
    s.kind = K::Mask;
    s.mask = std::move(m);
    return s;
  }
};

struct Looplet;
using LoopletP = std::shared_ptr<const Looplet>;

struct LoopPhase {
  kir::ExprP hi;  // null = runs to the end of the enclosing extent
  LoopletP body;
};

// The hierarchical iterator IR consumed by the lowering engine.
struct Looplet {
  enum class K { Lookup, Run, Spike, Switch, Thunk, Sequence, Stepper, Acceptor };
  K kind;

  // Lookup: a randomly accessible region; body(i) may emit position lets.
  std::function<Slot(const kir::ExprP&, Emit&)> lookup;
  // Run: a constant region.
  Slot run;
  // Spike: a run followed by a single value; legal only as a stepper body.
  Slot spike_body, spike_tail;
  // Switch: a condition evaluated in the embedding context.
  kir::ExprP cond;
  LoopletP head, tail;
  // Thunk: cached state around a body.
  std::vector<kir::StmtP> pre, post;
  LoopletP inner;
  // Sequence: non-overlapping, covering, ordered phases.
  std::vector<LoopPhase> phases;
  // Stepper / Jumper: a variable number of concatenated looplets.
  bool jumper = false;
  std::function<std::vector<kir::StmtP>(const kir::ExprP&)> seek;  // may be null
  kir::ExprP stop;
  LoopletP sbody;
  std::vector<kir::StmtP> next;
  // Acceptor: update-mode visitation with probe/commit around each write.
  bool run_capable = false;
  std::function<Slot(const kir::ExprP&, Emit&)> probe;
  std::function<void(const kir::ExprP&, const kir::ExprP&, Emit&)> commit;
};

namespace lp {

inline LoopletP lookup(std::function<Slot(const kir::ExprP&, Emit&)> body) {
  auto l = std::make_shared<Looplet>();
  l->kind = Looplet::K::Lookup;
  l->lookup = std::move(body);
  return l;
}
inline LoopletP run(Slot s) {
  auto l = std::make_shared<Looplet>();
  l->kind = Looplet::K::Run;
  l->run = std::move(s);
  return l;
}
inline LoopletP spike(Slot body, Slot tail) {
  auto l = std::make_shared<Looplet>();
  l->kind = Looplet::K::Spike;
  l->spike_body = std::move(body);
  l->spike_tail = std::move(tail);
  return l;
}
inline LoopletP switch_(kir::ExprP cond, LoopletP head, LoopletP tail) {
  auto l = std::make_shared<Looplet>();
  l->kind = Looplet::K::Switch;
  l->cond = std::move(cond);
  l->head = std::move(head);
  l->tail = std::move(tail);
  return l;
}
inline LoopletP thunk(std::vector<kir::StmtP> pre, LoopletP inner,
                      std::vector<kir::StmtP> post = {}) {
  auto l = std::make_shared<Looplet>();
  l->kind = Looplet::K::Thunk;
  l->pre = std::move(pre);
  l->inner = std::move(inner);
  l->post = std::move(post);
  return l;
}
inline LoopletP sequence(std::vector<LoopPhase> phases) {
  auto l = std::make_shared<Looplet>();
  l->kind = Looplet::K::Sequence;
  l->phases = std::move(phases);
  return l;
}
inline LoopletP stepper(std::function<std::vector<kir::StmtP>(const kir::ExprP&)> seek,
                        kir::ExprP stop, LoopletP body, std::vector<kir::StmtP> next,
                        bool jumper = false) {
  auto l = std::make_shared<Looplet>();
  l->kind = Looplet::K::Stepper;
  l->jumper = jumper;
  l->seek = std::move(seek);
  l->stop = std::move(stop);
  l->sbody = std::move(body);
  l->next = std::move(next);
  return l;
}
inline LoopletP acceptor(bool run_capable, std::function<Slot(const kir::ExprP&, Emit&)> probe,
                         std::function<void(const kir::ExprP&, const kir::ExprP&, Emit&)> commit) {
  auto l = std::make_shared<Looplet>();
  l->kind = Looplet::K::Acceptor;
  l->run_capable = run_capable;
  l->probe = std::move(probe);
  l->commit = std::move(commit);
  return l;
}

}  // namespace lp

// Shifts a looplet: the result at coordinate i behaves as the source at
// i - c. Offsetting is achieved by modifying the ranges the looplets return.
inline LoopletP shift_looplet(const LoopletP& l, const kir::ExprP& c) {
  using kir::call;
  auto plus = [&](const kir::ExprP& e) {
    return e ? kir::simplify(call("+", {e, c})) : nullptr;
  };
  auto minus = [&](const kir::ExprP& e) { return kir::simplify(call("-", {e, c})); };
  auto n = std::make_shared<Looplet>(*l);
  switch (l->kind) {
    case Looplet::K::Lookup:
      n->lookup = [inner = l->lookup, minus](const kir::ExprP& i, Emit& em) {
        return inner(minus(i), em);
      };
      break;
    case Looplet::K::Run:
    case Looplet::K::Spike: break;
    case Looplet::K::Acceptor:
      n->probe = [inner = l->probe, minus](const kir::ExprP& i, Emit& em) {
        return inner(minus(i), em);
      };
      n->commit = [inner = l->commit, minus](const kir::ExprP& lo, const kir::ExprP& hi,
                                             Emit& em) { inner(minus(lo), minus(hi), em); };
      break;
    case Looplet::K::Switch:
      n->head = shift_looplet(l->head, c);
      n->tail = shift_looplet(l->tail, c);
      break;
    case Looplet::K::Thunk: n->inner = shift_looplet(l->inner, c); break;
    case Looplet::K::Sequence:
      for (auto& ph : n->phases) {
        ph.hi = plus(ph.hi);
        ph.body = shift_looplet(ph.body, c);
      }
      break;
    case Looplet::K::Stepper:
      if (l->seek)
        n->seek = [inner = l->seek, minus](const kir::ExprP& lo) { return inner(minus(lo)); };
      n->stop = plus(l->stop);
      n->sbody = shift_looplet(l->sbody, c);
      break;
  }
  return n;
}

}  // namespace finch
