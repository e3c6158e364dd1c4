#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "finch/env.hpp"
#include "finch/kernel_ir.hpp"

namespace finch {

// Work counters: the operation-count stand-in for wall-clock results.
// leaf_visits counts visits to leaf storage sites, including guarded
// endpoint attempts during coiteration; value_loads counts only actual
// loads of stored leaf values.
struct Counters {
  int64_t leaf_visits = 0;
  int64_t kernel_steps = 0;
  int64_t stepper_advances = 0;
  int64_t branches = 0;
  int64_t allocations = 0;
  int64_t value_loads = 0;

  std::string to_json() const {
    std::ostringstream os;
    os << "{\"leaf_visits\":" << leaf_visits << ",\"kernel_steps\":" << kernel_steps
       << ",\"stepper_advances\":" << stepper_advances << ",\"branches\":" << branches
       << ",\"allocations\":" << allocations << ",\"value_loads\":" << value_loads << "}";
    return os.str();
  }
};

namespace kir {

// A kernel instantiated against one set of bindings: variables resolved to
// frame slots, buffer references resolved to live buffers. Lifecycle
// intrinsics can swap level internals, so buffer sites re-resolve when their
// tensor's epoch bumps.
class Interp {
 public:
  Interp(const StmtP& program, ProgramEnv& env, Counters& counters)
      : env_(env), counters_(counters) {
    root_ = prep_stmt(program.get());
  }

  void run() {
    Frame frame(nslots_);
    frame_ = &frame;
    try {
      exec(root_.get());
    } catch (const BreakSignal&) {
      fail(ErrorKind::MalformedLooplet, "break escaped its loop");
    }
    frame_ = nullptr;
  }

 private:
  struct BreakSignal {
    int label;
  };
  using Frame = std::vector<Value>;

  // --- resolved program representation -------------------------------------

  struct RExpr {
    EK kind;
    Value lit;
    int slot = -1;
    int buf_site = -1;
    Op op;
    std::vector<std::unique_ptr<RExpr>> args;
    int tensor_site = -1;  // Read
    int ticks = 0;
  };
  struct RStmt {
    SK kind;
    std::vector<std::unique_ptr<RStmt>> stmts;
    int slot = -1;
    std::unique_ptr<RExpr> expr;
    int buf_site = -1;
    std::unique_ptr<RExpr> idx, val;
    std::unique_ptr<RExpr> lo, hi, bound, budget, cond;
    std::unique_ptr<RStmt> body, then_, else_;
    int label = -1;
    Intr intr = Intr::Declare;
    int lvl_site = -1;
    std::string tensor;
    std::vector<std::unique_ptr<RExpr>> args;
    Counter counter = Counter::LeafVisits;
    int amount = 0;
  };

  struct BufSite {
    std::string tensor;
    int depth;
    BufRole role;
    int epoch = -1;
    Buffer<int64_t>* ints = nullptr;
    Buffer<Value>* vals = nullptr;
    Buffer<uint8_t>* bytes = nullptr;
  };
  struct LvlSite {
    std::string tensor;
    int depth;
    int epoch = -1;
    Level* level = nullptr;
  };

  ProgramEnv& env_;
  Counters& counters_;
  std::unique_ptr<RStmt> root_;
  int nslots_ = 0;
  std::map<std::string, int> slot_of_;
  std::vector<BufSite> buf_sites_;
  std::vector<LvlSite> lvl_sites_;
  std::map<std::string, int> tensor_epoch_;
  Frame* frame_ = nullptr;

  int slot_for(const std::string& name) {
    auto it = slot_of_.find(name);
    if (it != slot_of_.end()) return it->second;
    int s = nslots_++;
    slot_of_[name] = s;
    return s;
  }

  int buf_site_for(const BufRef& ref) {
    buf_sites_.push_back({ref.tensor, ref.depth, ref.role});
    return static_cast<int>(buf_sites_.size()) - 1;
  }
  int lvl_site_for(const LvlRef& ref) {
    lvl_sites_.push_back({ref.tensor, ref.depth});
    return static_cast<int>(lvl_sites_.size()) - 1;
  }

  std::unique_ptr<RExpr> prep_expr(const Expr* e) {
    auto r = std::make_unique<RExpr>();
    r->kind = e->kind;
    r->lit = e->lit;
    r->op = e->op;
    r->ticks = e->ticks;
    if (e->kind == EK::Var) r->slot = slot_for(e->var);
    if (e->kind == EK::Load || e->kind == EK::Len || e->kind == EK::Search)
      r->buf_site = buf_site_for(e->buf);
    if (e->kind == EK::Read) r->tensor_site = lvl_site_for({e->tensor, 0});
    for (auto& a : e->args) r->args.push_back(prep_expr(a.get()));
    return r;
  }

  std::unique_ptr<RStmt> prep_stmt(const Stmt* s) {
    if (!s) return nullptr;
    auto r = std::make_unique<RStmt>();
    r->kind = s->kind;
    r->label = s->label;
    r->intr = s->intr;
    r->tensor = s->tensor;
    r->counter = s->counter;
    r->amount = s->amount;
    switch (s->kind) {
      case SK::Seq:
        for (auto& st : s->stmts) r->stmts.push_back(prep_stmt(st.get()));
        break;
      case SK::Let:
      case SK::SetVar:
        r->slot = slot_for(s->var);
        r->expr = prep_expr(s->expr.get());
        break;
      case SK::LetSlot:
        r->slot = slot_for(s->var);
        r->lvl_site = lvl_site_for(s->lvl);
        for (auto& a : s->args) r->args.push_back(prep_expr(a.get()));
        break;
      case SK::Store:
        r->buf_site = buf_site_for(s->buf);
        r->idx = prep_expr(s->idx.get());
        r->val = prep_expr(s->val.get());
        break;
      case SK::For:
        r->slot = slot_for(s->var);
        r->lo = prep_expr(s->lo.get());
        r->hi = prep_expr(s->hi.get());
        r->body = prep_stmt(s->body.get());
        break;
      case SK::While:
        r->slot = slot_for(s->var);
        r->bound = prep_expr(s->bound.get());
        if (s->budget) r->budget = prep_expr(s->budget.get());
        r->body = prep_stmt(s->body.get());
        break;
      case SK::If:
        r->cond = prep_expr(s->cond.get());
        r->then_ = prep_stmt(s->then_.get());
        r->else_ = prep_stmt(s->else_.get());
        break;
      case SK::Intr:
        r->lvl_site = lvl_site_for(s->lvl);
        for (auto& a : s->args) r->args.push_back(prep_expr(a.get()));
        break;
      default: break;
    }
    return r;
  }

  // --- site resolution -------------------------------------------------------

  int epoch_of(const std::string& tensor) {
    auto it = tensor_epoch_.find(tensor);
    return it == tensor_epoch_.end() ? 0 : it->second;
  }

  Level* resolve_level(const std::string& tensor, int depth) {
    Level* l = env_.tensor(tensor)->root().get();
    for (int d = 0; d < depth; ++d) {
      l = l->child().get();
      if (!l) fail(ErrorKind::Exec, "level depth out of range for " + tensor);
    }
    return l;
  }

  BufSite& buf(int site) {
    BufSite& b = buf_sites_[site];
    int epoch = epoch_of(b.tensor);
    if (b.epoch != epoch) {
      Level* l = resolve_level(b.tensor, b.depth);
      b.ints = l->int_buffer(b.role);
      b.vals = b.role == BufRole::Val ? l->value_buffer() : nullptr;
      b.bytes = b.role == BufRole::Tbl ? l->byte_buffer() : nullptr;
      if (!b.ints && !b.vals && !b.bytes)
        fail(ErrorKind::Exec, "no buffer " + std::string(buf_role_name(b.role)) + " at " +
                                  b.tensor + " depth " + std::to_string(b.depth));
      b.epoch = epoch;
    }
    return b;
  }

  Level* lvl(int site) {
    LvlSite& l = lvl_sites_[site];
    int epoch = epoch_of(l.tensor);
    if (l.epoch != epoch) {
      l.level = resolve_level(l.tensor, l.depth);
      l.epoch = epoch;
    }
    return l.level;
  }

  // --- evaluation -----------------------------------------------------------

  Value eval(const RExpr* e) {
    switch (e->kind) {
      case EK::Lit: return e->lit;
      case EK::Var: return (*frame_)[e->slot];
      case EK::Load: {
        BufSite& b = buf(e->buf_site);
        int64_t i = eval(e->args[0].get()).as_int();
        if (b.vals) {
          // semantic leaf reads carry a tick weight; accumulator re-reads
          // emitted by the write path do not
          if (e->ticks > 0) counters_.value_loads += 1;
          return b.vals->at(i);
        }
        if (b.ints) return Value::of_int(b.ints->at(i));
        return Value::of_bool(b.bytes->at(i) != 0);
      }
      case EK::Len: {
        BufSite& b = buf(e->buf_site);
        if (b.vals) return Value::of_int(b.vals->size());
        if (b.ints) return Value::of_int(b.ints->size());
        return Value::of_int(b.bytes->size());
      }
      case EK::Search: {
        BufSite& b = buf(e->buf_site);
        int64_t lo = eval(e->args[0].get()).as_int();
        int64_t hi = eval(e->args[1].get()).as_int();
        int64_t key = eval(e->args[2].get()).as_int();
        auto& raw = b.ints->raw();
        auto it = std::lower_bound(raw.begin() + lo, raw.begin() + hi, key);
        return Value::of_int(it - raw.begin());
      }
      case EK::Read: {
        const LvlSite& site = lvl_sites_[e->tensor_site];
        std::vector<int64_t> coords;
        coords.reserve(e->args.size());
        for (auto& a : e->args) coords.push_back(eval(a.get()).as_int());
        counters_.value_loads += 1;
        return env_.tensor(site.tensor)->read(coords);
      }
      case EK::Call: {
        const std::string& n = e->op.name;
        // short-circuit forms evaluate lazily
        if (n == "ifelse" && e->args.size() == 3)
          return eval(e->args[0].get()).as_bool() ? eval(e->args[1].get())
                                                  : eval(e->args[2].get());
        if (n == "&&" && e->args.size() == 2) {
          Value a = eval(e->args[0].get());
          if (a.is_bool() && !a.b) return Value::of_bool(false);
          if (a.is_bool()) return Value::of_bool(eval(e->args[1].get()).as_bool());
          // fall through to strict evaluation for integer operands
          return apply_op(e->op, {a, eval(e->args[1].get())});
        }
        if (n == "||" && e->args.size() == 2) {
          Value a = eval(e->args[0].get());
          if (a.is_bool() && a.b) return Value::of_bool(true);
          if (a.is_bool()) return Value::of_bool(eval(e->args[1].get()).as_bool());
          return apply_op(e->op, {a, eval(e->args[1].get())});
        }
        if (n == "coalesce") {
          for (auto& a : e->args) {
            Value v = eval(a.get());
            if (!v.is_missing()) return v;
          }
          return Value::missing();
        }
        if (n == "__bitseq" || n == "__bitsne") {
          Value a = eval(e->args[0].get()), b = eval(e->args[1].get());
          bool eq = bits_equal(a, b);
          return Value::of_bool(n == "__bitseq" ? eq : !eq);
        }
        std::vector<Value> args;
        args.reserve(e->args.size());
        for (auto& a : e->args) args.push_back(eval(a.get()));
        return apply_op(e->op, args);
      }
    }
    fail(ErrorKind::Exec, "bad expression");
  }

  void exec(const RStmt* s) {
    if (!s) return;
    counters_.kernel_steps += 1;
    switch (s->kind) {
      case SK::Seq:
        if (s->label >= 0) {
          try {
            for (auto& st : s->stmts) exec(st.get());
          } catch (const BreakSignal& b) {
            if (b.label != s->label) throw;
          }
          break;
        }
        for (auto& st : s->stmts) exec(st.get());
        break;
      case SK::Let:
      case SK::SetVar: (*frame_)[s->slot] = eval(s->expr.get()); break;
      case SK::LetSlot: {
        Level* l = lvl(s->lvl_site);
        int64_t pos = eval(s->args[0].get()).as_int();
        int64_t i = eval(s->args[1].get()).as_int();
        uint64_t before = alloc_stats().reallocations;
        (*frame_)[s->slot] = Value::of_int(l->builder_slot(pos, i));
        counters_.allocations += alloc_stats().reallocations - before;
        break;
      }
      case SK::Store: {
        BufSite& b = buf(s->buf_site);
        int64_t i = eval(s->idx.get()).as_int();
        Value v = eval(s->val.get());
        if (b.vals)
          b.vals->set(i, v);
        else if (b.ints)
          b.ints->set(i, v.as_int());
        else
          b.bytes->set(i, v.as_bool() ? 1 : 0);
        break;
      }
      case SK::For: {
        int64_t lo = eval(s->lo.get()).as_int();
        int64_t hi = eval(s->hi.get()).as_int();
        for (int64_t i = lo; i <= hi; ++i) {
          (*frame_)[s->slot] = Value::of_int(i);
          if (s->label >= 0) {
            try {
              exec(s->body.get());
            } catch (const BreakSignal& b) {
              if (b.label == s->label) return;
              throw;
            }
          } else {
            exec(s->body.get());
          }
        }
        break;
      }
      case SK::While: {
        int64_t budget = s->budget ? eval(s->budget.get()).as_int()
                                   : std::numeric_limits<int64_t>::max();
        int64_t iters = 0;
        while (true) {
          counters_.branches += 1;
          int64_t cur = (*frame_)[s->slot].as_int();
          int64_t bound = eval(s->bound.get()).as_int();
          if (cur > bound) break;
          if (++iters > budget)
            fail(ErrorKind::NonTermination,
                 "loop failed to advance within its extent budget");
          if (s->label >= 0) {
            try {
              exec(s->body.get());
            } catch (const BreakSignal& b) {
              if (b.label == s->label) return;
              throw;
            }
          } else {
            exec(s->body.get());
          }
        }
        break;
      }
      case SK::If: {
        counters_.branches += 1;
        if (eval(s->cond.get()).as_bool())
          exec(s->then_.get());
        else
          exec(s->else_.get());
        break;
      }
      case SK::Intr: {
        switch (s->intr) {
          case Intr::Declare: {
            TensorPtr t = env_.tensor(s->tensor);
            Value init = eval(s->args[0].get());
            std::vector<Extent> dims;
            for (size_t k = 1; k + 1 < s->args.size(); k += 2)
              dims.emplace_back(eval(s->args[k].get()).as_int(),
                                eval(s->args[k + 1].get()).as_int());
            uint64_t before = alloc_stats().reallocations;
            t->declare(init, dims);
            counters_.allocations += alloc_stats().reallocations - before;
            tensor_epoch_[s->tensor] = epoch_of(s->tensor) + 1;
            break;
          }
          case Intr::Freeze: {
            env_.tensor(s->tensor)->freeze();
            tensor_epoch_[s->tensor] = epoch_of(s->tensor) + 1;
            break;
          }
          case Intr::Thaw: {
            env_.tensor(s->tensor)->thaw();
            tensor_epoch_[s->tensor] = epoch_of(s->tensor) + 1;
            break;
          }
          case Intr::Commit: {
            Level* l = lvl(s->lvl_site);
            int64_t pos = eval(s->args[0].get()).as_int();
            int64_t lo = eval(s->args[1].get()).as_int();
            int64_t hi = eval(s->args[2].get()).as_int();
            uint64_t before = alloc_stats().reallocations;
            l->builder_commit(pos, lo, hi);
            counters_.allocations += alloc_stats().reallocations - before;
            break;
          }
        }
        break;
      }
      case SK::Break: throw BreakSignal{s->label};
      case SK::Tick:
        if (s->counter == Counter::LeafVisits)
          counters_.leaf_visits += s->amount;
        else
          counters_.stepper_advances += s->amount;
        break;
    }
  }
};

}  // namespace kir
}  // namespace finch
