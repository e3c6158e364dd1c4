#pragma once

#include <map>
#include <set>
#include <vector>

#include "finch/env.hpp"
#include "finch/passes.hpp"
#include "finch/simplify.hpp"
#include "finch/unfurl.hpp"

namespace finch {

// Lowers a normalized program to kernel IR, one loop at a time from the
// outside in. Each loop substitutes the accesses on its index with looplet
// nests and consumes them by priority: thunks hoist state, switches hoist
// conditions, sequences split the loop, steppers become chunked while loops
// whose spikes bind to the chunk end, runs substitute values, and lookups
// expand to plain loops.
class Lowerer {
 public:
  explicit Lowerer(ProgramEnv& env) : env_(env) {
    for (auto& [name, t] : env.tensors) modes_[name] = Mode::Read;
  }

  kir::StmtP lower_program(const ast::StmtP& prog) {
    names_.reset();
    std::vector<kir::StmtP> out;
    SlotMap slots;
    lower_stmt(prog, slots, out);
    return kir::eliminate_dead_lets(kir::simplify_stmt(kir::seq(std::move(out))));
  }

  // Looplet nests per unfurl, recorded when dump mode is on.
  std::string looplet_dump;
  bool dump_looplets = false;

 private:
  struct SlotState {
    enum class K { Unfurled, Value, Fiber, Accept, Mask };
    K kind = K::Value;
    LoopletP looplet;   // Unfurled
    FiberP src;         // fiber that produced the looplet
    kir::ExprP value;   // Value
    FiberP fiber;       // Fiber awaiting a deeper loop, or a leaf fiber
    LoopletP acceptor;  // Accept: innermost acceptor pending its write
    kir::ExprP at;      // Accept: the visit coordinate
    MaskC mask;
  };
  // Slots are keyed by a deterministic id assigned in syntactic order so the
  // emitted kernel is byte-identical across runs.
  using SlotMap = std::map<int, SlotState>;

  ProgramEnv& env_;
  NameGen names_;
  std::map<std::string, Mode> modes_;
  std::map<std::string, kir::ExprP> binds_;
  std::map<const ast::Expr*, int> slot_ids_;
  int next_slot_id_ = 0;
  int label_counter_ = 0;
  std::vector<int> break_labels_;
  std::vector<bool> label_used_;

  int slot_id(const ast::Expr* a) {
    auto it = slot_ids_.find(a);
    if (it != slot_ids_.end()) return it->second;
    int id = next_slot_id_++;
    slot_ids_[a] = id;
    return id;
  }

  // --- small helpers -----------------------------------------------------------

  static kir::ExprP add(kir::ExprP a, kir::ExprP b) {
    return kir::simplify(kir::call("+", {std::move(a), std::move(b)}));
  }
  static kir::ExprP sub(kir::ExprP a, kir::ExprP b) {
    return kir::simplify(kir::call("-", {std::move(a), std::move(b)}));
  }
  static kir::ExprP min2(kir::ExprP a, kir::ExprP b) {
    return kir::simplify(kir::call("min", {std::move(a), std::move(b)}));
  }
  static kir::ExprP max2(kir::ExprP a, kir::ExprP b) {
    return kir::simplify(kir::call("max", {std::move(a), std::move(b)}));
  }
  static bool is_lit_one(const kir::ExprP& e) {
    return e->kind == kir::EK::Lit && e->lit.is_int() && e->lit.i == 1;
  }
  static bool expr_uses_var(const kir::ExprP& e, const std::string& v) {
    if (!e) return false;
    if (e->kind == kir::EK::Var && e->var == v) return true;
    for (auto& a : e->args)
      if (expr_uses_var(a, v)) return true;
    return false;
  }

  Op resolve_op(const ast::OpRef& op, SlotMap& slots) {
    if (!op.param) return Op(op.name);
    kir::ExprP p = kir::simplify(lower_expr(op.param, slots));
    if (p->kind != kir::EK::Lit)
      fail(ErrorKind::Contract, "operator parameter must be a constant");
    return Op(op.name, p->lit);
  }

  const ast::Target* base_of(const ast::TargetP& t) const {
    const ast::Target* cur = t.get();
    while (cur->kind != ast::WrapKind::Base && cur->kind != ast::WrapKind::UpTriMask &&
           cur->kind != ast::WrapKind::DiagMask)
      cur = cur->inner.get();
    return cur;
  }

  std::vector<ModeInfo> mode_infos(const ast::TargetP& target, SlotMap& slots) {
    switch (target->kind) {
      case ast::WrapKind::Base: {
        int rank = env_.tensor(target->tensor)->rank();
        return std::vector<ModeInfo>(static_cast<size_t>(rank));
      }
      case ast::WrapKind::UpTriMask:
      case ast::WrapKind::DiagMask: return std::vector<ModeInfo>(2);
      case ast::WrapKind::Offset: {
        auto infos = mode_infos(target->inner, slots);
        for (size_t m = 0; m < infos.size() && m < target->deltas.size(); ++m) {
          kir::ExprP d = kir::simplify(lower_expr(target->deltas[m], slots));
          if (d->kind == kir::EK::Lit && d->lit.is_int() && d->lit.i == 0) continue;
          infos[m].delta = infos[m].delta ? add(infos[m].delta, d) : d;
        }
        return infos;
      }
      case ast::WrapKind::Toeplitz: {
        auto infos = mode_infos(target->inner, slots);
        ModeInfo added;
        added.toeplitz_added = true;
        infos.insert(infos.begin() + (target->toeplitz_mode - 1), added);
        return infos;
      }
      case ast::WrapKind::Permissive: {
        auto infos = mode_infos(target->inner, slots);
        for (size_t m = 0; m < infos.size() && m < target->permissive.size(); ++m)
          infos[m].permissive = infos[m].permissive || target->permissive[m];
        return infos;
      }
      case ast::WrapKind::Protocolized: {
        auto infos = mode_infos(target->inner, slots);
        for (size_t m = 0; m < infos.size() && m < target->protocols.size(); ++m)
          infos[m].protocol = target->protocols[m];
        return infos;
      }
      case ast::WrapKind::Window: {
        auto infos = mode_infos(target->inner, slots);
        for (size_t m = 0; m < infos.size() && m < target->windows.size(); ++m)
          infos[m].window = {kir::simplify(lower_expr(target->windows[m].first, slots)),
                             kir::simplify(lower_expr(target->windows[m].second, slots))};
        return infos;
      }
      case ast::WrapKind::Swizzle:
        fail(ErrorKind::Contract, "swizzle must be compiled away before lowering");
    }
    return {};
  }

  // --- expressions ----------------------------------------------------------------

  kir::ExprP lower_expr(const ast::ExprP& e, SlotMap& slots) {
    using namespace ast;
    switch (e->kind) {
      case ExprKind::Lit: return kir::lit(e->lit);
      case ExprKind::Index:
      case ExprKind::Var: {
        auto it = binds_.find(e->name);
        if (it != binds_.end()) return it->second;
        auto sc = env_.scalars.find(e->name);
        if (sc != env_.scalars.end()) return kir::lit(sc->second);
        fail(ErrorKind::Exec, "unbound name " + e->name + " at " + e->loc.at());
      }
      case ExprKind::Call: {
        if (e->op.name == "~")
          fail(ErrorKind::Contract, "permissive marker survived wrapperization");
        std::vector<kir::ExprP> args;
        for (auto& a : e->args) args.push_back(lower_expr(a, slots));
        return kir::call(resolve_op(e->op, slots), std::move(args));
      }
      case ExprKind::Access: {
        auto idit = slot_ids_.find(e.get());
        auto it = idit == slot_ids_.end() ? slots.end() : slots.find(idit->second);
        if (it == slots.end()) {
          // fully bound by outer indices: a random-access read
          const ast::Target* base = base_of(e->target);
          if (base->kind != ast::WrapKind::Base)
            fail(ErrorKind::Contract, "mask access outside a loop");
          if (e->idx.empty())
            return kir::load(kir::BufRef{base->tensor, 0, BufRole::Val}, kir::lit_int(0), 1);
          if (e->target->kind != ast::WrapKind::Base)
            fail(ErrorKind::Contract, "wrapped access was not unfurled at its loop");
          std::vector<kir::ExprP> coords;
          for (auto& i : e->idx) coords.push_back(lower_expr(i, slots));
          return kir::tread(base->tensor, coords);
        }
        SlotState& st = it->second;
        switch (st.kind) {
          case SlotState::K::Value: return st.value;
          case SlotState::K::Fiber: {
            const FiberP& f = st.fiber;
            if (f->remaining != 0)
              fail(ErrorKind::Contract, "access read before all its loops were entered");
            if (f->virt == FiberC::Virt::Fill) return kir::lit(f->fill);
            if (f->virt == FiberC::Virt::Missing) return kir::lit(Value::missing());
            return leaf_read(*f);
          }
          default:
            fail(ErrorKind::Contract, "access used as a value before being resolved");
        }
      }
      default: fail(ErrorKind::Contract, "unexpected expression in lowering");
    }
  }

  kir::ExprP leaf_read(const FiberC& f) {
    if (f.level->kind() == LevelKind::Pattern)
      return kir::with_ticks(kir::lit(Value::of_bool(true)), 1);
    return kir::load(kir::BufRef{f.tensor, f.depth, BufRole::Val}, sub(f.pos, kir::lit_int(1)),
                     1);
  }

  // --- statements -----------------------------------------------------------------

  void lower_stmt(const ast::StmtP& s, SlotMap& slots, std::vector<kir::StmtP>& out) {
    using namespace ast;
    switch (s->kind) {
      case StmtKind::Block:
        for (auto& st : s->stmts) lower_stmt(st, slots, out);
        break;
      case StmtKind::Declare: {
        std::vector<kir::ExprP> args = {lower_expr(s->init, slots)};
        for (auto& d : s->dims) {
          args.push_back(lower_expr(d->lo, slots));
          args.push_back(lower_expr(d->hi, slots));
        }
        out.push_back(kir::intr(kir::Intr::Declare, {s->tensor, 0}, std::move(args), s->tensor));
        modes_[s->tensor] = Mode::Update;
        break;
      }
      case StmtKind::Freeze:
        out.push_back(kir::intr(kir::Intr::Freeze, {s->tensor, 0}, {}, s->tensor));
        modes_[s->tensor] = Mode::Read;
        break;
      case StmtKind::Thaw:
        out.push_back(kir::intr(kir::Intr::Thaw, {s->tensor, 0}, {}, s->tensor));
        modes_[s->tensor] = Mode::Update;
        break;
      case StmtKind::Define: {
        kir::ExprP v = kir::simplify(lower_expr(s->val, slots));
        if (v->ticks) out.push_back(kir::tick(kir::Counter::LeafVisits, v->ticks));
        std::string kv = names_.fresh(s->var + "_");
        out.push_back(kir::let(kv, v));
        auto saved = binds_;
        binds_[s->var] = kir::var(kv);
        lower_stmt(s->body, slots, out);
        binds_ = saved;
        break;
      }
      case StmtKind::Sieve: {
        kir::ExprP c = kir::simplify(lower_expr(s->cond, slots));
        if (kir::is_false(c)) break;
        std::vector<kir::StmtP> body;
        lower_stmt(s->body, slots, body);
        if (kir::is_true(c)) {
          for (auto& st : body) out.push_back(st);
          break;
        }
        if (body.empty()) break;
        if (c->ticks) out.push_back(kir::tick(kir::Counter::LeafVisits, c->ticks));
        out.push_back(kir::if_(c, kir::seq(std::move(body))));
        break;
      }
      case StmtKind::Assign: emit_assign(s, slots, out); break;
      case StmtKind::Loop: lower_loop(s, slots, out); break;
    }
  }

  // --- assignment emission ----------------------------------------------------------

  // Old-value load, operator application, store, dirty update, and the
  // short-circuit break when the target requests one.
  void emit_leaf_write(const FiberC& leaf, const Op& op, const kir::ExprP& rhs,
                       std::vector<kir::StmtP>& out) {
    Value fill = leaf.level->fill();
    kir::BufRef val{leaf.tensor, leaf.depth, BufRole::Val};
    kir::ExprP pos0 = sub(leaf.pos, kir::lit_int(1));
    bool pattern = leaf.level->kind() == LevelKind::Pattern;

    kir::ExprP newv;
    if (op.name == "initwrite") {
      newv = rhs;
    } else {
      kir::ExprP old;
      if (pattern) {
        old = pattern_old(leaf, pos0);
      } else {
        old = kir::load(val, pos0, 0);
      }
      newv = kir::call(op, {old, rhs});
    }
    newv = kir::simplify(newv);
    std::string nv = names_.fresh("v");
    out.push_back(kir::let(nv, newv));
    if (!pattern) out.push_back(kir::store(val, pos0, kir::var(nv)));
    kir::ExprP dirtied = kir::call("__bitsne", {kir::var(nv), kir::lit(fill)});
    if (!leaf.dirty.empty())
      out.push_back(kir::set_var(
          leaf.dirty, kir::simplify(kir::call("||", {kir::var(leaf.dirty), dirtied}))));

    if (leaf.level->kind() == LevelKind::SparseScalar) {
      out.push_back(kir::if_(kir::simplify(dirtied),
                             kir::intr(kir::Intr::Commit, {leaf.tensor, leaf.depth},
                                       {kir::lit_int(1), kir::lit_int(1), kir::lit_int(1)})));
    }
    if (leaf.level->kind() == LevelKind::ShortCircuitScalar && !break_labels_.empty()) {
      // once the reduction hits an absorbing value it can no longer change
      kir::ExprP hit;
      const OpInfo& info = op_info(op);
      if (op.name == "choose" && op.has_param) {
        hit = kir::call("!=", {kir::var(nv), kir::lit(op.param)});
      } else if (info.annihilator) {
        hit = kir::call("==", {kir::var(nv), kir::lit(*info.annihilator)});
      }
      if (hit) {
        label_used_.back() = true;
        out.push_back(kir::if_(hit, kir::brk(break_labels_.back())));
      }
    }
  }

  // Current value of a pattern leaf: under bytemap parents the occupancy
  // byte, otherwise the fill (in-order acceptors never revisit a slot).
  kir::ExprP pattern_old(const FiberC& leaf, const kir::ExprP& pos0) {
    if (leaf.depth > 0) {
      const Level* parent = env_.tensor(leaf.tensor)->root().get();
      for (int d = 0; d + 1 < leaf.depth; ++d) parent = parent->child().get();
      if (parent->kind() == LevelKind::SparseByteMap)
        return kir::load(kir::BufRef{leaf.tensor, leaf.depth - 1, BufRole::Tbl}, pos0, 0);
    }
    return kir::lit(Value::of_bool(false));
  }

  void emit_assign(const ast::StmtP& s, SlotMap& slots, std::vector<kir::StmtP>& out) {
    Op op = resolve_op(s->op, slots);
    kir::ExprP rhs = kir::simplify(lower_expr(s->rhs, slots));

    const ast::Target* base = base_of(s->lhs->target);
    if (base->kind != ast::WrapKind::Base)
      fail(ErrorKind::Contract, "mask tensors cannot be written");
    TensorPtr target = env_.tensor(base->tensor);
    Value fill = target->fill();

    // `x += neutral` and in-order `x = fill` writes vanish
    if (rhs->kind == kir::EK::Lit) {
      auto id = op_identity(op);
      if (id && (bits_equal(rhs->lit, *id) || values_equal(rhs->lit, *id))) return;
      if (op.name == "initwrite" && bits_equal(rhs->lit, fill) && elidable_fill_write(*target))
        return;
    }

    if (s->lhs->idx.empty()) {
      FiberC leaf;
      leaf.tensor = base->tensor;
      leaf.level = target->root().get();
      leaf.depth = 0;
      leaf.pos = kir::lit_int(1);
      leaf.fill = fill;
      out.push_back(kir::tick(kir::Counter::LeafVisits, rhs->ticks + 1));
      emit_leaf_write(leaf, op, rhs, out);
      return;
    }

    auto idit = slot_ids_.find(s->lhs.get());
    auto it = idit == slot_ids_.end() ? slots.end() : slots.find(idit->second);
    if (it == slots.end())
      fail(ErrorKind::Contract, "assignment target was not unfurled at its loop");
    SlotState& st = it->second;

    if (st.kind == SlotState::K::Fiber) {
      const FiberP& f = st.fiber;
      if (f->remaining != 0) fail(ErrorKind::Contract, "write before all loops were entered");
      out.push_back(kir::tick(kir::Counter::LeafVisits, rhs->ticks + 1));
      emit_leaf_write(*f, op, rhs, out);
      return;
    }
    if (st.kind != SlotState::K::Accept)
      fail(ErrorKind::Contract, "assignment target is not writable here");

    // innermost acceptor: probe a slot, write, commit when dirty
    std::vector<kir::StmtP> stmts;
    Emit em{&stmts, &names_};
    Slot child = st.acceptor->probe(st.at, em);
    if (child.kind != Slot::K::Fiber || child.fiber->remaining != 0)
      fail(ErrorKind::Contract, "acceptor probe did not yield a leaf");
    FiberP leaf = child.fiber;
    stmts.push_back(kir::tick(kir::Counter::LeafVisits, rhs->ticks + 1));
    emit_leaf_write(*leaf, op, rhs, stmts);
    if (!leaf->dirty.empty()) {
      std::vector<kir::StmtP> cs;
      Emit cem{&cs, &names_};
      st.acceptor->commit(st.at, st.at, cem);
      stmts.push_back(kir::if_(kir::var(leaf->dirty), kir::seq(std::move(cs))));
    }
    out.push_back(kir::seq(std::move(stmts)));
  }

  // In-order acceptors are write-once per location, so writing the fill with
  // `=` is a no-op there; random-access and dense targets must keep it.
  bool elidable_fill_write(const Tensor& t) {
    for (const Level* l = t.root().get(); l;
         l = l->child() ? l->child().get() : nullptr) {
      switch (l->kind()) {
        case LevelKind::SparseList:
        case LevelKind::SparsePinpoint:
        case LevelKind::SparseRunList:
        case LevelKind::RunList:
        case LevelKind::SparseInterval:
        case LevelKind::SparseBlockList:
        case LevelKind::SparseBand: return true;
        default: break;
      }
      if (l->is_leaf()) break;
    }
    return false;
  }

  // --- loop lowering ----------------------------------------------------------------

  void collect_accesses(const ast::StmtP& s, std::vector<const ast::Expr*>& out) {
    using namespace ast;
    std::function<void(const ExprP&)> ex = [&](const ExprP& e) {
      if (!e) return;
      switch (e->kind) {
        case ExprKind::Access:
          out.push_back(e.get());
          for (auto& i : e->idx) ex(i);
          break;
        case ExprKind::Call:
          for (auto& a : e->args) ex(a);
          break;
        case ExprKind::Extent:
          ex(e->lo);
          ex(e->hi);
          break;
        default: break;
      }
    };
    std::function<void(const StmtP&)> st = [&](const StmtP& t) {
      if (!t) return;
      switch (t->kind) {
        case StmtKind::Assign:
          ex(t->lhs);
          ex(t->rhs);
          break;
        case StmtKind::Loop:
          ex(t->ext);
          st(t->body);
          break;
        case StmtKind::Define:
          ex(t->val);
          st(t->body);
          break;
        case StmtKind::Sieve:
          ex(t->cond);
          st(t->body);
          break;
        case StmtKind::Block:
          for (auto& u : t->stmts) st(u);
          break;
        default: break;
      }
    };
    st(s);
  }

  bool contains_scs_write(const ast::StmtP& s) {
    bool found = false;
    std::function<void(const ast::StmtP&)> st = [&](const ast::StmtP& t) {
      if (!t || found) return;
      switch (t->kind) {
        case ast::StmtKind::Assign: {
          const ast::Target* b = base_of(t->lhs->target);
          if (b->kind == ast::WrapKind::Base && env_.has_tensor(b->tensor) &&
              env_.tensor(b->tensor)->root()->kind() == LevelKind::ShortCircuitScalar)
            found = true;
          break;
        }
        case ast::StmtKind::Loop:
        case ast::StmtKind::Define:
        case ast::StmtKind::Sieve: st(t->body); break;
        case ast::StmtKind::Block:
          for (auto& u : t->stmts) st(u);
          break;
        default: break;
      }
    };
    st(s);
    return found;
  }

  void lower_loop(const ast::StmtP& loop, SlotMap slots, std::vector<kir::StmtP>& out) {
    kir::ExprP lo, hi;
    {
      kir::ExprP l = kir::simplify(lower_expr(loop->ext->lo, slots));
      kir::ExprP h = kir::simplify(lower_expr(loop->ext->hi, slots));
      if (kir::KirPrinter::print(l) == kir::KirPrinter::print(h) && l->kind != kir::EK::Lit) {
        if (l->ticks) out.push_back(kir::tick(kir::Counter::LeafVisits, l->ticks));
        std::string bv = names_.fresh("b");
        out.push_back(kir::let(bv, l));
        lo = hi = kir::var(bv);
      } else {
        if (l->ticks + h->ticks)
          out.push_back(kir::tick(kir::Counter::LeafVisits, l->ticks + h->ticks));
        lo = l;
        hi = h;
      }
    }

    auto saved_binds = binds_;
    binds_[loop->index] = kir::var(loop->index);

    // unfurl every access whose next mode is this loop's index
    std::vector<const ast::Expr*> accesses;
    collect_accesses(loop->body, accesses);
    for (const ast::Expr* a : accesses) {
      if (a->idx.empty()) continue;
      int id = slot_id(a);
      auto it = slots.find(id);
      if (it == slots.end()) {
        const ast::ExprP& rooti = a->idx.back();
        if (rooti->kind != ast::ExprKind::Index || rooti->name != loop->index) continue;
        slots[id] = unfurl_fresh(a, slots);
      } else if (it->second.kind == SlotState::K::Fiber && it->second.fiber->remaining > 0) {
        int r = it->second.fiber->remaining;
        const ast::ExprP& next = a->idx[r - 1];
        if (next->kind != ast::ExprKind::Index || next->name != loop->index) continue;
        it->second = unfurl_state(it->second.fiber, a, slots);
      } else if (it->second.kind == SlotState::K::Mask && it->second.mask.col_bound) {
        const ast::ExprP& next = a->idx[0];
        if (next->kind != ast::ExprKind::Index || next->name != loop->index) continue;
        SlotState ns;
        ns.kind = SlotState::K::Unfurled;
        ns.looplet = mask_column_looplet(it->second.mask.kind, it->second.mask.col);
        it->second = ns;
      }
    }

    bool scs = contains_scs_write(loop->body);
    int label = -1;
    if (scs) {
      label = label_counter_++;
      break_labels_.push_back(label);
      label_used_.push_back(false);
    }
    std::vector<kir::StmtP> inner, posts;
    emit_extent(loop->index, lo, hi, loop->body, slots, inner, posts);
    for (auto it = posts.rbegin(); it != posts.rend(); ++it) inner.push_back(*it);
    bool used = false;
    if (scs) {
      used = label_used_.back();
      break_labels_.pop_back();
      label_used_.pop_back();
    }
    binds_ = saved_binds;
    if (used)
      out.push_back(kir::seq_labeled(std::move(inner), label));
    else
      for (auto& s : inner) out.push_back(s);
  }

  SlotState unfurl_fresh(const ast::Expr* a, SlotMap& slots) {
    const ast::Target* base = base_of(a->target);
    if (base->kind != ast::WrapKind::Base) {
      ast::WrapKind kind = base->kind;
      auto body = [kind](const kir::ExprP& j, Emit&) {
        return Slot::of_mask(MaskC{kind, j, true});
      };
      SlotState st;
      st.kind = SlotState::K::Unfurled;
      st.looplet = lp::lookup(body);
      return st;
    }
    TensorPtr t = env_.tensor(base->tensor);
    auto infos = mode_infos(a->target, slots);
    if (infos.size() != a->idx.size())
      fail(ErrorKind::Contract,
           "access arity does not match the wrapped tensor rank of " + base->tensor);
    auto f = std::make_shared<FiberC>();
    f->tensor = base->tensor;
    f->level = t->root().get();
    f->depth = 0;
    f->pos = kir::lit_int(1);
    f->mode = modes_.count(base->tensor) ? modes_[base->tensor] : Mode::Read;
    f->modes = infos;
    f->remaining = static_cast<int>(infos.size());
    f->fill = t->fill();
    return unfurl_state(f, a, slots);
  }

  SlotState unfurl_state(const FiberP& f, const ast::Expr* a, SlotMap& slots) {
    SlotState st;
    st.kind = SlotState::K::Unfurled;
    st.src = f;
    std::vector<kir::ExprP> follow_outer;
    if (!f->modes.empty() && f->modes.back().protocol == ast::Protocol::Follow &&
        f->remaining == 1 && a->idx.size() >= 2) {
      for (size_t m = 1; m < a->idx.size(); ++m)
        follow_outer.push_back(lower_expr(a->idx[m], slots));
    }
    st.looplet = unfurl_fiber(f, names_, follow_outer);
    if (dump_looplets) {
      looplet_dump += "unfurl " + f->tensor + " depth " + std::to_string(f->depth) + ":\n";
      looplet_dump += print_looplet(st.looplet, 1);
    }
    return st;
  }

  // --- extent machinery ---------------------------------------------------------------

  LoopletP spike_strip(const LoopletP& l) {
    switch (l->kind) {
      case Looplet::K::Spike: return lp::run(l->spike_body);
      case Looplet::K::Sequence: {
        auto n = std::make_shared<Looplet>(*l);
        for (auto& ph : n->phases) ph.body = spike_strip(ph.body);
        return n;
      }
      case Looplet::K::Switch: {
        auto n = std::make_shared<Looplet>(*l);
        n->head = spike_strip(l->head);
        n->tail = spike_strip(l->tail);
        return n;
      }
      case Looplet::K::Thunk: {
        auto n = std::make_shared<Looplet>(*l);
        n->inner = spike_strip(l->inner);
        return n;
      }
      default: return l;
    }
  }

  void emit_extent(const std::string& var, kir::ExprP lo, kir::ExprP hi, const ast::StmtP& body,
                   SlotMap slots, std::vector<kir::StmtP>& out,
                   std::vector<kir::StmtP>& posts) {
    // thunks hoist their preambles out of the loop
    for (auto& [id, st] : slots) {
      while (st.kind == SlotState::K::Unfurled && st.looplet->kind == Looplet::K::Thunk) {
        for (auto& p : st.looplet->pre) out.push_back(p);
        for (auto& p : st.looplet->post) posts.push_back(p);
        SlotState ns = st;
        ns.looplet = st.looplet->inner;
        st = ns;
      }
    }
    // switches lift their condition above the loop and lower both rules
    for (auto& [id, st] : slots) {
      if (st.kind == SlotState::K::Unfurled && st.looplet->kind == Looplet::K::Switch) {
        kir::ExprP cond = st.looplet->cond;
        SlotMap head = slots, tail = slots;
        head[id].looplet = st.looplet->head;
        tail[id].looplet = st.looplet->tail;
        std::vector<kir::StmtP> hs, ts;
        emit_extent(var, lo, hi, body, head, hs, posts);
        emit_extent(var, lo, hi, body, tail, ts, posts);
        out.push_back(kir::if_(cond, kir::seq(std::move(hs)), kir::seq(std::move(ts))));
        return;
      }
    }
    // the first sequence splits the loop into consecutive segments
    for (auto& [id, st] : slots) {
      if (st.kind == SlotState::K::Unfurled && st.looplet->kind == Looplet::K::Sequence) {
        const auto& phases = st.looplet->phases;
        kir::ExprP seg_lo = lo;
        for (size_t k = 0; k < phases.size(); ++k) {
          kir::ExprP seg_hi = phases[k].hi ? min2(hi, phases[k].hi) : hi;
          if (phases[k].hi && seg_hi->kind != kir::EK::Lit) {
            std::string hv = names_.fresh("h");
            out.push_back(kir::let(hv, seg_hi));
            seg_hi = kir::var(hv);
          }
          SlotMap seg = slots;
          seg[id].looplet = phases[k].body;
          emit_extent(var, seg_lo, seg_hi, body, seg, out, posts);
          if (k + 1 < phases.size()) {
            kir::ExprP nxt = max2(add(seg_hi, kir::lit_int(1)), seg_lo);
            std::string lv = names_.fresh("l");
            out.push_back(kir::let(lv, nxt));
            seg_lo = kir::var(lv);
          }
        }
        return;
      }
    }
    // steppers and jumpers coiterate through a chunked while loop
    std::vector<int> steppers;
    for (auto& [id, st] : slots)
      if (st.kind == SlotState::K::Unfurled && st.looplet->kind == Looplet::K::Stepper)
        steppers.push_back(id);
    if (!steppers.empty()) {
      emit_chunks(var, lo, hi, body, slots, steppers, out);
      return;
    }
    emit_for(var, lo, hi, body, slots, out);
  }

  void emit_chunks(const std::string& var, kir::ExprP lo, kir::ExprP hi, const ast::StmtP& body,
                   SlotMap& slots, const std::vector<int>& steppers,
                   std::vector<kir::StmtP>& out) {
    std::string curv = names_.fresh("cur");
    std::vector<kir::StmtP> w;

    // when jumpers interact the largest stride leads and the others seek
    // into its range (demoted to steppers within the chunk)
    bool any_jumper = false;
    for (int id : steppers) any_jumper |= slots[id].looplet->jumper;
    if (any_jumper) {
      kir::ExprP dj = nullptr;
      for (int id : steppers) {
        if (!slots[id].looplet->jumper) continue;
        dj = dj ? max2(dj, slots[id].looplet->stop) : slots[id].looplet->stop;
      }
      dj = min2(hi, dj);
      std::string djv = names_.fresh("dj");
      w.push_back(kir::let(djv, dj));
      for (int id : steppers) {
        if (!slots[id].looplet->jumper || !slots[id].looplet->seek) continue;
        for (auto& s : slots[id].looplet->seek(kir::var(djv))) w.push_back(s);
      }
    }

    kir::ExprP d = hi;
    for (int id : steppers) d = min2(d, slots[id].looplet->stop);
    std::string dv = names_.fresh("d");
    w.push_back(kir::let(dv, d));

    // run part [cur, d-1]
    std::vector<kir::StmtP> run_part;
    {
      SlotMap run_slots = slots;
      for (int id : steppers) run_slots[id].looplet = spike_strip(slots[id].looplet->sbody);
      std::vector<kir::StmtP> rposts;
      emit_extent(var, kir::var(curv), sub(kir::var(dv), kir::lit_int(1)), body, run_slots,
                  run_part, rposts);
      for (auto& p : rposts) run_part.push_back(p);
    }
    // point at d
    std::vector<kir::StmtP> point_part;
    {
      SlotMap pt_slots = slots;
      std::vector<PointGuard> guards;
      for (int id : steppers) {
        pt_slots[id].looplet = slots[id].looplet->sbody;
        guards.push_back({id, kir::call("==", {slots[id].looplet->stop, kir::var(dv)})});
      }
      emit_point(var, kir::var(dv), body, pt_slots, guards, point_part);
    }
    bool has_work = kir::effectful(kir::simplify_stmt(kir::seq(run_part))) ||
                    kir::effectful(kir::simplify_stmt(kir::seq(point_part)));
    if (!has_work) return;  // nothing happens inside the chunks: skip the loop

    for (auto& s : run_part) w.push_back(s);
    for (auto& s : point_part) w.push_back(s);

    for (int id : steppers) {
      const LoopletP& st = slots[id].looplet;
      std::vector<kir::StmtP> adv = st->next;
      adv.push_back(kir::tick(kir::Counter::StepperAdvances, 1));
      w.push_back(kir::if_(kir::call("==", {st->stop, kir::var(dv)}), kir::seq(std::move(adv))));
    }
    w.push_back(kir::set_var(curv, add(kir::var(dv), kir::lit_int(1))));

    // seek fast-forwards each stepper's state to the extent start
    for (int id : steppers) {
      const LoopletP& st = slots[id].looplet;
      if (st->seek && !is_lit_one(lo))
        for (auto& s : st->seek(lo)) out.push_back(s);
    }
    out.push_back(kir::let(curv, lo));
    kir::ExprP budget = add(sub(hi, lo), kir::lit_int(2));
    out.push_back(kir::while_leq(curv, hi, budget, kir::seq(std::move(w))));
  }

  struct PointGuard {
    int slot;
    kir::ExprP cond;
  };

  void emit_point(const std::string& var, kir::ExprP at, const ast::StmtP& body, SlotMap slots,
                  std::vector<PointGuard> guards, std::vector<kir::StmtP>& out) {
    out.push_back(kir::let(var, at));
    auto saved = binds_;
    binds_[var] = kir::var(var);
    resolve_point(var, kir::var(var), body, slots, guards, out);
    binds_ = saved;
  }

  // Lowers the loop body at a single coordinate. Spikes resolve to their
  // tail under the guard that their stop equals the chunk end; fiber-valued
  // tails branch the whole point body and both rules are lowered.
  void resolve_point(const std::string& var, kir::ExprP at, const ast::StmtP& body,
                     SlotMap slots, std::vector<PointGuard> guards,
                     std::vector<kir::StmtP>& out) {
    for (auto& [id, st] : slots) {
      if (st.kind != SlotState::K::Unfurled) continue;
      const LoopletP l = st.looplet;
      kir::ExprP guard;
      for (auto& g : guards)
        if (g.slot == id) guard = g.cond;
      switch (l->kind) {
        case Looplet::K::Thunk: {
          for (auto& p : l->pre) out.push_back(p);
          SlotMap next = slots;
          next[id].looplet = l->inner;
          resolve_point(var, at, body, next, guards, out);
          for (auto& p : l->post) out.push_back(p);
          return;
        }
        case Looplet::K::Switch: {
          SlotMap head = slots, tail = slots;
          head[id].looplet = l->head;
          tail[id].looplet = l->tail;
          std::vector<kir::StmtP> hs, ts;
          resolve_point(var, at, body, head, guards, hs);
          resolve_point(var, at, body, tail, guards, ts);
          out.push_back(kir::if_(l->cond, kir::seq(std::move(hs)), kir::seq(std::move(ts))));
          return;
        }
        case Looplet::K::Sequence: {
          std::vector<std::vector<kir::StmtP>> branches;
          size_t used = 0;
          for (size_t k = 0; k < l->phases.size(); ++k) {
            SlotMap next = slots;
            next[id].looplet = l->phases[k].body;
            std::vector<kir::StmtP> bs;
            resolve_point(var, at, body, next, guards, bs);
            branches.push_back(std::move(bs));
            used = k;
            if (!l->phases[k].hi) break;
          }
          kir::StmtP acc = kir::seq(std::move(branches.back()));
          for (int k = static_cast<int>(used) - 1; k >= 0; --k)
            acc = kir::if_(kir::simplify(kir::call("<=", {at, l->phases[k].hi})),
                           kir::seq(std::move(branches[k])), acc);
          out.push_back(acc);
          return;
        }
        case Looplet::K::Lookup: {
          Emit em{&out, &names_};
          st = resolve_slot(l->lookup(at, em));
          continue;
        }
        case Looplet::K::Run: {
          st = resolve_slot(l->run);
          continue;
        }
        case Looplet::K::Spike: {
          if (!guard) fail(ErrorKind::MalformedLooplet, "spike outside a stepper");
          Slot tail = l->spike_tail, sbody = l->spike_body;
          bool fiber_tail =
              tail.kind == Slot::K::Fiber && tail.fiber->virt == FiberC::Virt::None;
          if (!fiber_tail) {
            kir::ExprP tv =
                tail.kind == Slot::K::Value ? tail.value : kir::lit(tail.fiber->fill);
            kir::ExprP bv =
                sbody.kind == Slot::K::Value ? sbody.value : kir::lit(sbody.fiber->fill);
            SlotState ns;
            ns.kind = SlotState::K::Value;
            ns.value = kir::call("ifelse", {guard, tv, bv});
            st = ns;
            continue;
          }
          SlotMap taken = slots, other = slots;
          taken[id] = resolve_slot(tail);
          other[id] = resolve_slot(sbody);
          std::vector<kir::StmtP> ts, os;
          resolve_point(var, at, body, taken, guards, ts);
          resolve_point(var, at, body, other, guards, os);
          out.push_back(kir::if_(guard, kir::seq(std::move(ts)), kir::seq(std::move(os))));
          return;
        }
        case Looplet::K::Acceptor: {
          int remaining = st.src ? st.src->remaining : 0;
          if (remaining - 1 > 0) {
            Emit em{&out, &names_};
            Slot child = l->probe(at, em);
            SlotMap next = slots;
            next[id] = resolve_slot(child);
            std::vector<kir::StmtP> bs;
            resolve_point(var, at, body, next, guards, bs);
            for (auto& b : bs) out.push_back(b);
            if (child.kind == Slot::K::Fiber && !child.fiber->dirty.empty()) {
              std::vector<kir::StmtP> cs;
              Emit cem{&cs, &names_};
              l->commit(at, at, cem);
              out.push_back(kir::if_(kir::var(child.fiber->dirty), kir::seq(std::move(cs))));
            }
            return;
          }
          SlotState ns;
          ns.kind = SlotState::K::Accept;
          ns.acceptor = l;
          ns.at = at;
          ns.src = st.src;
          st = ns;
          continue;
        }
        default: fail(ErrorKind::MalformedLooplet, "unhandled looplet at a point");
      }
    }
    lower_stmt(body, slots, out);
  }

  SlotState resolve_slot(const Slot& s) {
    SlotState st;
    switch (s.kind) {
      case Slot::K::Value:
        st.kind = SlotState::K::Value;
        st.value = s.value;
        break;
      case Slot::K::Fiber:
        st.kind = SlotState::K::Fiber;
        st.fiber = s.fiber;
        break;
      case Slot::K::Mask:
        st.kind = SlotState::K::Mask;
        st.mask = s.mask;
        break;
    }
    return st;
  }

  void emit_for(const std::string& var, kir::ExprP lo, kir::ExprP hi, const ast::StmtP& body,
                SlotMap slots, std::vector<kir::StmtP>& out) {
    // hoist run values: one leaf visit per run, not per covered coordinate
    for (auto& [id, st] : slots) {
      if (st.kind != SlotState::K::Unfurled) continue;
      if (st.looplet->kind == Looplet::K::Run) {
        SlotState ns = resolve_slot(st.looplet->run);
        if (ns.kind == SlotState::K::Value && ns.value->kind != kir::EK::Lit) {
          if (ns.value->ticks)
            out.push_back(kir::tick(kir::Counter::LeafVisits, ns.value->ticks));
          std::string rv = names_.fresh("r");
          out.push_back(kir::let(rv, ns.value));
          ns.value = kir::var(rv);
        }
        st = ns;
      }
    }

    if (try_accept_run(var, lo, hi, body, slots, out)) return;

    std::vector<kir::StmtP> inner;
    Emit em{&inner, &names_};
    auto saved = binds_;
    binds_[var] = kir::var(var);
    SlotMap inner_slots = slots;
    std::vector<std::pair<int, FiberP>> middle_commits;
    for (auto& [id, st] : inner_slots) {
      if (st.kind != SlotState::K::Unfurled) continue;
      const LoopletP l = st.looplet;
      if (l->kind == Looplet::K::Lookup) {
        st = resolve_slot(l->lookup(kir::var(var), em));
      } else if (l->kind == Looplet::K::Acceptor) {
        int remaining = st.src ? st.src->remaining : 0;
        if (remaining - 1 > 0) {
          Slot child = l->probe(kir::var(var), em);
          if (child.kind == Slot::K::Fiber && !child.fiber->dirty.empty())
            middle_commits.push_back({id, child.fiber});
          st = resolve_slot(child);
        } else {
          SlotState ns;
          ns.kind = SlotState::K::Accept;
          ns.acceptor = l;
          ns.at = kir::var(var);
          ns.src = st.src;
          st = ns;
        }
      } else if (l->kind != Looplet::K::Run) {
        fail(ErrorKind::MalformedLooplet, "unexpected looplet in a plain loop");
      }
    }
    lower_stmt(body, inner_slots, inner);
    for (auto& [id, fiber] : middle_commits) {
      std::vector<kir::StmtP> cs;
      Emit cem{&cs, &names_};
      slots[id].looplet->commit(kir::var(var), kir::var(var), cem);
      inner.push_back(kir::if_(kir::var(fiber->dirty), kir::seq(std::move(cs))));
    }
    binds_ = saved;
    out.push_back(kir::for_range(var, lo, hi, kir::seq(std::move(inner))));
  }

  // A single assignment into a run-capable acceptor with a loop-invariant
  // right-hand side accepts the whole range as one run.
  bool try_accept_run(const std::string& var, kir::ExprP lo, kir::ExprP hi,
                      const ast::StmtP& body, SlotMap& slots, std::vector<kir::StmtP>& out) {
    const ast::Stmt* stmt = body.get();
    if (stmt->kind != ast::StmtKind::Assign) return false;
    auto idit = slot_ids_.find(stmt->lhs.get());
    if (idit == slot_ids_.end()) return false;
    auto it = slots.find(idit->second);
    if (it == slots.end() || it->second.kind != SlotState::K::Unfurled) return false;
    const LoopletP l = it->second.looplet;
    if (l->kind != Looplet::K::Acceptor || !l->run_capable) return false;
    int remaining = it->second.src ? it->second.src->remaining : 0;
    if (remaining != 1) return false;

    auto saved = binds_;
    binds_[var] = kir::var(var);
    kir::ExprP rhs;
    try {
      rhs = kir::simplify(lower_expr(stmt->rhs, slots));
    } catch (const Error&) {
      binds_ = saved;
      return false;
    }
    binds_ = saved;
    if (expr_uses_var(rhs, var)) return false;

    Op op = resolve_op(stmt->op, slots);
    Value fill = env_.tensor(base_of(stmt->lhs->target)->tensor)->fill();
    if (rhs->kind == kir::EK::Lit) {
      auto id = op_identity(op);
      if (id && (bits_equal(rhs->lit, *id) || values_equal(rhs->lit, *id))) return true;
      if (op.name == "initwrite" && bits_equal(rhs->lit, fill)) return true;
    }

    std::vector<kir::StmtP> stmts;
    Emit em{&stmts, &names_};
    Slot child = l->probe(lo, em);
    if (child.kind != Slot::K::Fiber || child.fiber->remaining != 0) return false;
    stmts.push_back(kir::tick(kir::Counter::LeafVisits, rhs->ticks + 1));
    emit_leaf_write(*child.fiber, op, rhs, stmts);
    if (!child.fiber->dirty.empty()) {
      std::vector<kir::StmtP> cs;
      Emit cem{&cs, &names_};
      l->commit(lo, hi, cem);
      stmts.push_back(kir::if_(kir::var(child.fiber->dirty), kir::seq(std::move(cs))));
    }
    out.push_back(kir::if_(kir::call("<=", {lo, hi}), kir::seq(std::move(stmts))));
    return true;
  }

  // --- looplet printing (--emit looplets) --------------------------------------------

  std::string print_looplet(const LoopletP& l, int ind) {
    std::string pad(static_cast<size_t>(ind) * 2, ' ');
    auto slot_str = [&](const Slot& s) -> std::string {
      switch (s.kind) {
        case Slot::K::Value: return kir::KirPrinter::print(s.value);
        case Slot::K::Fiber:
          if (s.fiber->virt == FiberC::Virt::Fill) return "fill";
          if (s.fiber->virt == FiberC::Virt::Missing) return "missing";
          return "fiber(" + s.fiber->tensor + ", depth " + std::to_string(s.fiber->depth) +
                 ", " + kir::KirPrinter::print(s.fiber->pos) + ")";
        case Slot::K::Mask: return "mask";
      }
      return "?";
    };
    switch (l->kind) {
      case Looplet::K::Run: return pad + "Run(" + slot_str(l->run) + ")\n";
      case Looplet::K::Lookup: {
        std::vector<kir::StmtP> scratch;
        Emit em{&scratch, &names_};
        Slot s = l->lookup(kir::var("i"), em);
        return pad + "Lookup(i -> " + slot_str(s) + ")\n";
      }
      case Looplet::K::Spike:
        return pad + "Spike(" + slot_str(l->spike_body) + ", " + slot_str(l->spike_tail) +
               ")\n";
      case Looplet::K::Switch:
        return pad + "Switch(" + kir::KirPrinter::print(l->cond) + ",\n" +
               print_looplet(l->head, ind + 1) + print_looplet(l->tail, ind + 1) + pad + ")\n";
      case Looplet::K::Thunk: {
        std::string s = pad + "Thunk(\n";
        for (auto& p : l->pre) s += pad + "  pre: " + kir::KirPrinter::print(p);
        s += print_looplet(l->inner, ind + 1);
        return s + pad + ")\n";
      }
      case Looplet::K::Sequence: {
        std::string s = pad + "Sequence(\n";
        for (auto& ph : l->phases) {
          s += pad + "  Phase(stop = " +
               (ph.hi ? kir::KirPrinter::print(ph.hi) : std::string("end")) + ",\n";
          s += print_looplet(ph.body, ind + 2);
          s += pad + "  )\n";
        }
        return s + pad + ")\n";
      }
      case Looplet::K::Stepper: {
        std::string s = pad + (l->jumper ? "Jumper(" : "Stepper(");
        s += "stop = " + kir::KirPrinter::print(l->stop) + ",\n";
        s += print_looplet(l->sbody, ind + 1);
        return s + pad + ")\n";
      }
      case Looplet::K::Acceptor: return pad + "Acceptor\n";
    }
    return pad + "?\n";
  }
};

}  // namespace finch
