#pragma once

#include "finch/looplet.hpp"
#include "finch/tensor.hpp"

namespace finch {

// Per-format canonical looplet nests. Read-mode unfurl yields the iterator
// structure (steppers over stored entries, runs over fill, lookups into
// random-access regions); update-mode unfurl yields an acceptor that probes
// a write slot per visit and commits it when the visit dirtied the subfiber.

namespace unfurl_detail {

using kir::BufRef;
using kir::ExprP;
using kir::LvlRef;
using kir::call;
using kir::lit;
using kir::lit_int;
using kir::load;
using kir::var;

inline ExprP add(ExprP a, ExprP b) { return kir::simplify(call("+", {std::move(a), std::move(b)})); }
inline ExprP sub(ExprP a, ExprP b) { return kir::simplify(call("-", {std::move(a), std::move(b)})); }
inline ExprP mul(ExprP a, ExprP b) { return kir::simplify(call("*", {std::move(a), std::move(b)})); }

inline BufRef bref(const FiberC& f, BufRole role) { return BufRef{f.tensor, f.depth, role}; }
inline LvlRef lref(const FiberC& f) { return LvlRef{f.tensor, f.depth}; }

// Child fiber continuation: one mode consumed.
inline FiberP child_fiber(const FiberC& f, ExprP pos) {
  auto c = std::make_shared<FiberC>(f);
  c->level = f.level->child().get();
  c->depth = f.depth + 1;
  c->pos = std::move(pos);
  c->modes.pop_back();
  c->remaining = f.remaining - 1;
  return c;
}

inline FiberP virtual_fiber(const FiberC& f, FiberC::Virt virt) {
  auto c = std::make_shared<FiberC>(f);
  c->virt = virt;
  c->level = nullptr;
  c->modes.pop_back();
  c->remaining = f.remaining - 1;
  return c;
}

// The slot a child continuation resolves to: leaf children resolve to value
// expressions right away.
inline Slot child_slot(const FiberC& f, ExprP pos) {
  const Level* child = f.level->child().get();
  if (child->is_leaf()) {
    if (child->kind() == LevelKind::Pattern)
      return Slot::of_value(kir::with_ticks(lit(Value::of_bool(true)), 1));
    return Slot::of_value(load(BufRef{f.tensor, f.depth + 1, BufRole::Val},
                               sub(pos, lit_int(1)), 1));
  }
  return Slot::of_fiber(child_fiber(f, std::move(pos)));
}

inline Slot fill_slot(const FiberC& f) {
  if (f.remaining <= 1) return Slot::of_value(lit(f.fill));
  return Slot::of_fiber(virtual_fiber(f, FiberC::Virt::Fill));
}

inline Slot missing_slot(const FiberC& f) {
  if (f.remaining <= 1) return Slot::of_value(lit(Value::missing()));
  return Slot::of_fiber(virtual_fiber(f, FiberC::Virt::Missing));
}

}  // namespace unfurl_detail

inline LoopletP unfurl_fiber(const FiberP& f, NameGen& names,
                             const std::vector<kir::ExprP>& follow_outer = {});

namespace unfurl_detail {

// --- read-mode templates -------------------------------------------------------

inline LoopletP read_dense(const FiberC& f) {
  int64_t shape = f.level->shape();
  ExprP base = mul(sub(f.pos, lit_int(1)), lit_int(shape));
  auto body = [f, base](const ExprP& i, Emit&) { return child_slot(f, add(base, i)); };
  return lp::sequence({{lit_int(shape), lp::lookup(body)}});
}

// Thunk(q = ptr[p]; Sequence(Phase(last stored coordinate,
//   Stepper(seek, stop = idx[q], Spike(fill, child@q+1), q += 1)),
//   Phase(Run(fill))))
inline LoopletP read_sparse_list(const FiberC& f, NameGen& names, bool gallop) {
  std::string q = names.fresh("q"), q1 = names.fresh("q");
  BufRef ptr = bref(f, BufRole::Ptr), idx = bref(f, BufRole::Idx);
  std::vector<kir::StmtP> pre = {kir::let(q, load(ptr, sub(f.pos, lit_int(1)))),
                                 kir::let(q1, load(ptr, f.pos))};
  ExprP last = call("ifelse", {call("<", {var(q), var(q1)}),
                               load(idx, sub(var(q1), lit_int(1))), lit_int(0)});
  auto seek = [q, q1, idx](const ExprP& lo) -> std::vector<kir::StmtP> {
    return {kir::set_var(q, kir::search(idx, var(q), var(q1), lo))};
  };
  LoopletP body = lp::spike(fill_slot(f), child_slot(f, add(var(q), lit_int(1))));
  LoopletP st = lp::stepper(seek, load(idx, var(q)), body,
                            {kir::set_var(q, add(var(q), lit_int(1)))}, gallop);
  return lp::thunk(std::move(pre), lp::sequence({{last, st}, {nullptr, lp::run(fill_slot(f))}}));
}

inline LoopletP read_pinpoint(const FiberC& f, NameGen& names) {
  std::string iv = names.fresh("i");
  std::vector<kir::StmtP> pre = {kir::let(iv, load(bref(f, BufRole::Idx), sub(f.pos, lit_int(1))))};
  Slot point = child_slot(f, f.pos);
  LoopletP present = lp::sequence({{sub(var(iv), lit_int(1)), lp::run(fill_slot(f))},
                                   {var(iv), lp::lookup([point](const ExprP&, Emit&) {
                                      return point;
                                    })},
                                   {nullptr, lp::run(fill_slot(f))}});
  // an unwritten subfiber has idx 0 and is all fill
  return lp::thunk(std::move(pre), lp::switch_(call("!=", {var(iv), lit_int(0)}), present,
                                               lp::run(fill_slot(f))));
}

inline LoopletP read_run_list(const FiberC& f, NameGen& names) {
  std::string q = names.fresh("q"), q1 = names.fresh("q");
  BufRef ptr = bref(f, BufRole::Ptr), right = bref(f, BufRole::Right);
  std::vector<kir::StmtP> pre = {kir::let(q, load(ptr, sub(f.pos, lit_int(1)))),
                                 kir::let(q1, load(ptr, f.pos))};
  ExprP last = call("ifelse", {call("<", {var(q), var(q1)}),
                               load(right, sub(var(q1), lit_int(1))), lit_int(0)});
  auto seek = [q, q1, right](const ExprP& lo) -> std::vector<kir::StmtP> {
    return {kir::set_var(q, kir::search(right, var(q), var(q1), lo))};
  };
  LoopletP body = lp::run(child_slot(f, add(var(q), lit_int(1))));
  LoopletP st = lp::stepper(seek, load(right, var(q)), body,
                            {kir::set_var(q, add(var(q), lit_int(1)))});
  return lp::thunk(std::move(pre), lp::sequence({{last, st}, {nullptr, lp::run(fill_slot(f))}}));
}

inline LoopletP read_sparse_run_list(const FiberC& f, NameGen& names) {
  std::string q = names.fresh("q"), q1 = names.fresh("q");
  BufRef ptr = bref(f, BufRole::Ptr), left = bref(f, BufRole::Left),
         right = bref(f, BufRole::Right);
  std::vector<kir::StmtP> pre = {kir::let(q, load(ptr, sub(f.pos, lit_int(1)))),
                                 kir::let(q1, load(ptr, f.pos))};
  ExprP last = call("ifelse", {call("<", {var(q), var(q1)}),
                               load(right, sub(var(q1), lit_int(1))), lit_int(0)});
  auto seek = [q, q1, right](const ExprP& lo) -> std::vector<kir::StmtP> {
    return {kir::set_var(q, kir::search(right, var(q), var(q1), lo))};
  };
  // each step covers fill up to left[q]-1 then the run through right[q]
  LoopletP step_body =
      lp::sequence({{sub(load(left, var(q)), lit_int(1)), lp::run(fill_slot(f))},
                    {nullptr, lp::run(child_slot(f, add(var(q), lit_int(1))))}});
  LoopletP st = lp::stepper(seek, load(right, var(q)), step_body,
                            {kir::set_var(q, add(var(q), lit_int(1)))});
  return lp::thunk(std::move(pre), lp::sequence({{last, st}, {nullptr, lp::run(fill_slot(f))}}));
}

inline LoopletP read_sparse_interval(const FiberC& f, NameGen& names) {
  std::string lv = names.fresh("l"), rv = names.fresh("r");
  std::vector<kir::StmtP> pre = {
      kir::let(lv, load(bref(f, BufRole::Left), sub(f.pos, lit_int(1)))),
      kir::let(rv, load(bref(f, BufRole::Right), sub(f.pos, lit_int(1))))};
  LoopletP seq = lp::sequence({{sub(var(lv), lit_int(1)), lp::run(fill_slot(f))},
                               {var(rv), lp::run(child_slot(f, f.pos))},
                               {nullptr, lp::run(fill_slot(f))}});
  return lp::thunk(std::move(pre), seq);
}

inline LoopletP read_block_list(const FiberC& f, NameGen& names) {
  std::string q = names.fresh("q"), q1 = names.fresh("q");
  BufRef ptr = bref(f, BufRole::Ptr), idx = bref(f, BufRole::Idx), ofs = bref(f, BufRole::Ofs);
  std::vector<kir::StmtP> pre = {kir::let(q, load(ptr, sub(f.pos, lit_int(1)))),
                                 kir::let(q1, load(ptr, f.pos))};
  ExprP last = call("ifelse", {call("<", {var(q), var(q1)}),
                               load(idx, sub(var(q1), lit_int(1))), lit_int(0)});
  auto seek = [q, q1, idx](const ExprP& lo) -> std::vector<kir::StmtP> {
    return {kir::set_var(q, kir::search(idx, var(q), var(q1), lo))};
  };
  // block start = idx[q] - (ofs[q+1] - ofs[q]) + 1; child at ofs[q] + i - start
  ExprP width = sub(load(ofs, add(var(q), lit_int(1))), load(ofs, var(q)));
  ExprP start = add(sub(load(idx, var(q)), width), lit_int(1));
  FiberC fc = f;
  auto block_body = [fc, ofs, q, start](const ExprP& i, Emit&) {
    return child_slot(fc, add(load(ofs, var(q)), sub(i, start)));
  };
  LoopletP step_body = lp::sequence(
      {{sub(start, lit_int(1)), lp::run(fill_slot(f))}, {nullptr, lp::lookup(block_body)}});
  LoopletP st = lp::stepper(seek, load(idx, var(q)), step_body,
                            {kir::set_var(q, add(var(q), lit_int(1)))});
  return lp::thunk(std::move(pre), lp::sequence({{last, st}, {nullptr, lp::run(fill_slot(f))}}));
}

inline LoopletP read_band(const FiberC& f, NameGen& names) {
  std::string ev = names.fresh("e"), wv = names.fresh("w");
  BufRef idx = bref(f, BufRole::Idx), ofs = bref(f, BufRole::Ofs);
  std::vector<kir::StmtP> pre = {
      kir::let(ev, load(idx, sub(f.pos, lit_int(1)))),
      kir::let(wv, sub(load(ofs, f.pos), load(ofs, sub(f.pos, lit_int(1)))))};
  ExprP start = add(sub(var(ev), var(wv)), lit_int(1));
  FiberC fc = f;
  ExprP pos = f.pos;
  auto block_body = [fc, ofs, pos, start](const ExprP& i, Emit&) {
    return child_slot(fc, add(load(ofs, sub(pos, lit_int(1))), sub(i, start)));
  };
  LoopletP present = lp::sequence({{sub(start, lit_int(1)), lp::run(fill_slot(f))},
                                   {var(ev), lp::lookup(block_body)},
                                   {nullptr, lp::run(fill_slot(f))}});
  return lp::thunk(std::move(pre), lp::switch_(call("!=", {var(ev), lit_int(0)}), present,
                                               lp::run(fill_slot(f))));
}

inline LoopletP read_bytemap(const FiberC& f, NameGen& names) {
  // walk the sorted dirty list; child positions are dense (p-1)*shape + i
  std::string q = names.fresh("q"), q1 = names.fresh("q");
  BufRef ptr = bref(f, BufRole::Ptr), idx = bref(f, BufRole::Idx);
  int64_t shape = f.level->shape();
  ExprP base = mul(sub(f.pos, lit_int(1)), lit_int(shape));
  std::vector<kir::StmtP> pre = {kir::let(q, load(ptr, sub(f.pos, lit_int(1)))),
                                 kir::let(q1, load(ptr, f.pos))};
  ExprP last = call("ifelse", {call("<", {var(q), var(q1)}),
                               load(idx, sub(var(q1), lit_int(1))), lit_int(0)});
  auto seek = [q, q1, idx](const ExprP& lo) -> std::vector<kir::StmtP> {
    return {kir::set_var(q, kir::search(idx, var(q), var(q1), lo))};
  };
  LoopletP body = lp::spike(fill_slot(f), child_slot(f, add(base, load(idx, var(q)))));
  LoopletP st = lp::stepper(seek, load(idx, var(q)), body,
                            {kir::set_var(q, add(var(q), lit_int(1)))});
  return lp::thunk(std::move(pre), lp::sequence({{last, st}, {nullptr, lp::run(fill_slot(f))}}));
}

inline LoopletP read_hash(const FiberC& f, NameGen& names, bool gallop) {
  std::string q = names.fresh("q"), q1 = names.fresh("q");
  BufRef ptr = bref(f, BufRole::Ptr), idx = bref(f, BufRole::Idx), pos = bref(f, BufRole::Pos);
  std::vector<kir::StmtP> pre = {kir::let(q, load(ptr, sub(f.pos, lit_int(1)))),
                                 kir::let(q1, load(ptr, f.pos))};
  ExprP last = call("ifelse", {call("<", {var(q), var(q1)}),
                               load(idx, sub(var(q1), lit_int(1))), lit_int(0)});
  auto seek = [q, q1, idx](const ExprP& lo) -> std::vector<kir::StmtP> {
    return {kir::set_var(q, kir::search(idx, var(q), var(q1), lo))};
  };
  LoopletP body = lp::spike(fill_slot(f), child_slot(f, load(pos, var(q))));
  LoopletP st = lp::stepper(seek, load(idx, var(q)), body,
                            {kir::set_var(q, add(var(q), lit_int(1)))}, gallop);
  return lp::thunk(std::move(pre), lp::sequence({{last, st}, {nullptr, lp::run(fill_slot(f))}}));
}

// --- update-mode acceptors -------------------------------------------------------

// Sparse in-order and random-access levels share one acceptor shape: probe a
// child slot, visit it, and commit when dirty. `commit` receives the actual
// coordinate range the write covered.
inline LoopletP accept_generic(const FiberC& f, NameGen& names, bool run_capable) {
  FiberC fc = f;
  kir::LvlRef lvl = lref(f);
  auto probe = [fc, lvl](const ExprP& i, Emit& em) -> Slot {
    std::string qv = em.fresh("s");
    em.push(kir::let_slot(qv, lvl, fc.pos, i));
    std::string dv = em.fresh("dirty");
    em.push(kir::let(dv, lit(Value::of_bool(false))));
    const Level* child = fc.level->child().get();
    auto cf = child_fiber(fc, var(qv));
    cf->dirty = dv;
    if (child->is_leaf()) return Slot::of_fiber(cf);  // leaf fibers resolve at the write
    return Slot::of_fiber(cf);
  };
  auto commit = [fc, lvl](const ExprP& lo, const ExprP& hi, Emit& em) {
    em.push(kir::intr(kir::Intr::Commit, lvl, {fc.pos, lo, hi}));
    if (!fc.dirty.empty()) em.push(kir::set_var(fc.dirty, lit(Value::of_bool(true))));
  };
  return lp::acceptor(run_capable, probe, commit);
}

inline LoopletP accept_dense(const FiberC& f) {
  int64_t shape = f.level->shape();
  ExprP base = mul(sub(f.pos, lit_int(1)), lit_int(shape));
  FiberC fc = f;
  auto probe = [fc, base](const ExprP& i, Emit&) -> Slot {
    return Slot::of_fiber(child_fiber(fc, add(base, i)));  // dirty flag passes through
  };
  auto commit = [](const ExprP&, const ExprP&, Emit&) {};
  return lp::acceptor(false, probe, commit);
}

}  // namespace unfurl_detail

// Mask tensors use predefined looplet nests instead of the level abstraction.
inline LoopletP mask_column_looplet(ast::WrapKind kind, const kir::ExprP& col) {
  using namespace unfurl_detail;
  Slot t = Slot::of_value(kir::with_ticks(lit(Value::of_bool(true)), 0));
  Slot fa = Slot::of_value(lit(Value::of_bool(false)));
  if (kind == ast::WrapKind::UpTriMask) {
    // Sequence(Phase(stop = j, Run(true)), Phase(Run(false)))
    return lp::sequence({{col, lp::run(t)}, {nullptr, lp::run(fa)}});
  }
  // DiagMask: false, true at j, false
  return lp::sequence({{sub(col, lit_int(1)), lp::run(fa)},
                       {col, lp::run(t)},
                       {nullptr, lp::run(fa)}});
}

// Unfurls one fiber over its next mode, returning the format's canonical
// looplet nest with the mode's wrapper context applied.
inline LoopletP unfurl_fiber(const FiberP& f, NameGen& names,
                             const std::vector<kir::ExprP>& follow_outer) {
  using namespace unfurl_detail;
  if (f->remaining < 1) fail(ErrorKind::Contract, "unfurl of a scalar; use unwrap");
  const ModeInfo mi = f->modes.back();

  if (f->virt == FiberC::Virt::Fill) {
    auto c = std::make_shared<FiberC>(*f);
    return lp::run(fill_slot(*c));
  }
  if (f->virt == FiberC::Virt::Missing) {
    auto c = std::make_shared<FiberC>(*f);
    return lp::run(missing_slot(*c));
  }

  // the inserted toeplitz mode consumes no level: it shifts the next mode
  if (mi.toeplitz_added) {
    FiberC fc = *f;
    auto body = [fc](const kir::ExprP& k, Emit&) {
      auto c = std::make_shared<FiberC>(fc);
      c->modes.pop_back();
      c->remaining -= 1;
      ModeInfo& next = c->modes.back();
      next.delta = next.delta ? kir::simplify(kir::call("+", {next.delta, k})) : k;
      return Slot::of_fiber(c);
    };
    return lp::lookup(body);
  }

  LoopletP base;
  if (f->mode == Mode::Update) {
    switch (f->level->kind()) {
      case LevelKind::Dense: base = accept_dense(*f); break;
      case LevelKind::RunList:
      case LevelKind::SparseRunList:
      case LevelKind::SparseInterval: base = accept_generic(*f, names, true); break;
      case LevelKind::SparseList:
      case LevelKind::SparsePinpoint:
      case LevelKind::SparseBlockList:
      case LevelKind::SparseBand:
      case LevelKind::SparseByteMap:
      case LevelKind::SparseHash: base = accept_generic(*f, names, false); break;
      default: fail(ErrorKind::Contract, "cannot update through " + f->level->spec());
    }
  } else {
    bool gallop = mi.protocol == ast::Protocol::Gallop;
    bool follow = mi.protocol == ast::Protocol::Follow;
    if (gallop && (f->level->kind() == LevelKind::Dense ||
                   f->level->kind() == LevelKind::SparseByteMap))
      fail(ErrorKind::ProtocolUnsupported,
           "gallop requires ordered index support, not " +
               std::string(level_kind_name(f->level->kind())));
    if (follow) {
      if (f->remaining != 1)
        fail(ErrorKind::ProtocolUnsupported, "follow is only supported on the innermost mode");
      std::string tname = f->tensor;
      std::vector<kir::ExprP> outer = follow_outer;
      auto body = [tname, outer](const kir::ExprP& i, Emit&) {
        std::vector<kir::ExprP> coords = {i};
        for (auto& c : outer) coords.push_back(c);
        return Slot::of_value(kir::tread(tname, coords));
      };
      base = lp::lookup(body);
    } else {
      switch (f->level->kind()) {
        case LevelKind::Dense: base = read_dense(*f); break;
        case LevelKind::SparseList: base = read_sparse_list(*f, names, gallop); break;
        case LevelKind::SparsePinpoint: base = read_pinpoint(*f, names); break;
        case LevelKind::RunList: base = read_run_list(*f, names); break;
        case LevelKind::SparseRunList: base = read_sparse_run_list(*f, names); break;
        case LevelKind::SparseInterval: base = read_sparse_interval(*f, names); break;
        case LevelKind::SparseBlockList: base = read_block_list(*f, names); break;
        case LevelKind::SparseBand: base = read_band(*f, names); break;
        case LevelKind::SparseByteMap: base = read_bytemap(*f, names); break;
        case LevelKind::SparseHash: base = read_hash(*f, names, gallop); break;
        default: fail(ErrorKind::Contract, "cannot unfurl " + f->level->spec());
      }
    }
  }

  // window: a shift by lo-1 within the clamped range
  kir::ExprP delta = mi.delta;
  if (mi.window) {
    kir::ExprP wlo = mi.window->first;
    delta = delta ? kir::simplify(kir::call("+", {delta, kir::simplify(kir::call(
                                                             "-", {wlo, kir::lit_int(1)}))}))
                  : kir::simplify(kir::call("-", {wlo, kir::lit_int(1)}));
  }
  if (delta && !(delta->kind == kir::EK::Lit && delta->lit.is_int() && delta->lit.i == 0)) {
    // offset(tns, d)[i] == tns[i + d]: the wrapped view shifts by -d
    kir::ExprP c = kir::simplify(kir::call("neg", {delta}));
    base = shift_looplet(base, c);
  }

  if (mi.permissive) {
    // out-of-bounds coordinates read as missing
    int64_t shape = f->level->shape();
    kir::ExprP lo = lit_int(1), hi = lit_int(shape);
    if (delta) {
      kir::ExprP c = kir::simplify(kir::call("neg", {delta}));
      lo = add(lo, c);
      hi = add(hi, c);
    }
    base = lp::sequence({{sub(lo, lit_int(1)), lp::run(missing_slot(*f))},
                         {hi, base},
                         {nullptr, lp::run(missing_slot(*f))}});
  }
  return base;
}

}  // namespace finch
