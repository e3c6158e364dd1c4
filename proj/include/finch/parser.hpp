#pragma once

#include <cctype>
#include <set>
#include <string>
#include <vector>

#include "finch/ast.hpp"
#include "finch/error.hpp"

namespace finch {

// Recursive-descent parser for the surface language. The concrete syntax
// follows the loop-program listings: `for i = _`, `let v = e`, `if c`,
// `begin ... end`, `C .= 0`, `y[i] += e`, `s[] <<min>>= e`, `@freeze(t)`.
class Parser {
 public:
  static ast::StmtP parse_program(const std::string& text, const std::string& file = "<input>") {
    Parser p(text, file);
    std::vector<ast::StmtP> stmts;
    p.skip_newlines();
    while (!p.at_end()) {
      stmts.push_back(p.statement());
      p.skip_newlines();
    }
    auto prog = stmts.size() == 1 ? stmts[0] : ast::block(std::move(stmts));
    return prog;
  }

  static ast::ExprP parse_expression(const std::string& text) {
    Parser p(text, "<expr>");
    p.skip_newlines();
    auto e = p.expression();
    p.skip_newlines();
    if (!p.at_end()) p.err("trailing input after expression");
    return e;
  }

 private:
  enum class Tok {
    End,
    Ident,
    Int,
    Float,
    Newline,
    LParen,
    RParen,
    LBracket,
    RBracket,
    Comma,
    Colon,
    Underscore,
    At,
    Tilde,
    Bang,
    Plus,
    Minus,
    Star,
    Slash,
    Eq,
    PlusEq,
    StarEq,
    MinusEq,
    OrEq,
    AndEq,
    DotEq,
    EqEq,
    NotEq,
    Lt,
    LtEq,
    Gt,
    GtEq,
    AndAnd,
    OrOr,
    LtLt,
    GtGtEq,
  };

  struct Token {
    Tok kind;
    std::string text;
    int line, col;
  };

  Parser(const std::string& text, std::string file) : file_(std::move(file)) { lex(text); }

  [[noreturn]] void err(const std::string& msg) const {
    const Token& t = tokens_[std::min(pos_, tokens_.size() - 1)];
    fail(ErrorKind::Parse, file_ + ":" + std::to_string(t.line) + ":" + std::to_string(t.col) +
                               ": " + msg);
  }

  void lex(const std::string& s) {
    size_t i = 0;
    int line = 1, col = 1;
    auto push = [&](Tok k, std::string text, int l, int c) {
      tokens_.push_back({k, std::move(text), l, c});
    };
    while (i < s.size()) {
      char c = s[i];
      int l = line, co = col;
      auto adv = [&](size_t n) {
        for (size_t k = 0; k < n; ++k) {
          if (s[i] == '\n') {
            ++line;
            col = 1;
          } else {
            ++col;
          }
          ++i;
        }
      };
      if (c == '#') {
        while (i < s.size() && s[i] != '\n') adv(1);
        continue;
      }
      if (c == '\n') {
        push(Tok::Newline, "\n", l, co);
        adv(1);
        continue;
      }
      if (isspace(static_cast<unsigned char>(c))) {
        adv(1);
        continue;
      }
      if (isalpha(static_cast<unsigned char>(c)) || c == '_') {
        size_t start = i;
        while (i < s.size() && (isalnum(static_cast<unsigned char>(s[i])) || s[i] == '_')) adv(1);
        std::string word = s.substr(start, i - start);
        if (word == "_")
          push(Tok::Underscore, word, l, co);
        else
          push(Tok::Ident, word, l, co);
        continue;
      }
      if (isdigit(static_cast<unsigned char>(c))) {
        size_t start = i;
        bool is_float = false;
        while (i < s.size() && isdigit(static_cast<unsigned char>(s[i]))) adv(1);
        if (i < s.size() && s[i] == '.' && i + 1 < s.size() &&
            isdigit(static_cast<unsigned char>(s[i + 1]))) {
          is_float = true;
          adv(1);
          while (i < s.size() && isdigit(static_cast<unsigned char>(s[i]))) adv(1);
        }
        if (i < s.size() && (s[i] == 'e' || s[i] == 'E')) {
          is_float = true;
          adv(1);
          if (i < s.size() && (s[i] == '+' || s[i] == '-')) adv(1);
          while (i < s.size() && isdigit(static_cast<unsigned char>(s[i]))) adv(1);
        }
        push(is_float ? Tok::Float : Tok::Int, s.substr(start, i - start), l, co);
        continue;
      }
      auto two = s.substr(i, 2);
      auto three = s.substr(i, 3);
      if (three == ">>=") {
        push(Tok::GtGtEq, three, l, co);
        adv(3);
        continue;
      }
      if (two == ".=") {
        push(Tok::DotEq, two, l, co);
        adv(2);
        continue;
      }
      if (two == "+=") {
        push(Tok::PlusEq, two, l, co);
        adv(2);
        continue;
      }
      if (two == "*=") {
        push(Tok::StarEq, two, l, co);
        adv(2);
        continue;
      }
      if (two == "-=") {
        push(Tok::MinusEq, two, l, co);
        adv(2);
        continue;
      }
      if (two == "|=") {
        push(Tok::OrEq, two, l, co);
        adv(2);
        continue;
      }
      if (two == "&=") {
        push(Tok::AndEq, two, l, co);
        adv(2);
        continue;
      }
      if (two == "==") {
        push(Tok::EqEq, two, l, co);
        adv(2);
        continue;
      }
      if (two == "!=") {
        push(Tok::NotEq, two, l, co);
        adv(2);
        continue;
      }
      if (two == "<=") {
        push(Tok::LtEq, two, l, co);
        adv(2);
        continue;
      }
      if (two == ">=") {
        push(Tok::GtEq, two, l, co);
        adv(2);
        continue;
      }
      if (two == "&&") {
        push(Tok::AndAnd, two, l, co);
        adv(2);
        continue;
      }
      if (two == "||") {
        push(Tok::OrOr, two, l, co);
        adv(2);
        continue;
      }
      if (two == "<<") {
        push(Tok::LtLt, two, l, co);
        adv(2);
        continue;
      }
      switch (c) {
        case '(': push(Tok::LParen, "(", l, co); break;
        case ')': push(Tok::RParen, ")", l, co); break;
        case '[': push(Tok::LBracket, "[", l, co); break;
        case ']': push(Tok::RBracket, "]", l, co); break;
        case ',': push(Tok::Comma, ",", l, co); break;
        case ':': push(Tok::Colon, ":", l, co); break;
        case '@': push(Tok::At, "@", l, co); break;
        case '~': push(Tok::Tilde, "~", l, co); break;
        case '!': push(Tok::Bang, "!", l, co); break;
        case '+': push(Tok::Plus, "+", l, co); break;
        case '-': push(Tok::Minus, "-", l, co); break;
        case '*': push(Tok::Star, "*", l, co); break;
        case '/': push(Tok::Slash, "/", l, co); break;
        case '=': push(Tok::Eq, "=", l, co); break;
        case '<': push(Tok::Lt, "<", l, co); break;
        case '>': push(Tok::Gt, ">", l, co); break;
        case '|': push(Tok::OrOr, "|", l, co); break;
        case '&': push(Tok::AndAnd, "&", l, co); break;
        default:
          fail(ErrorKind::Parse, file_ + ":" + std::to_string(l) + ":" + std::to_string(co) +
                                     ": unexpected character '" + std::string(1, c) + "'");
      }
      adv(1);
    }
    tokens_.push_back({Tok::End, "", line, col});
  }

  const Token& peek(int ahead = 0) const {
    size_t k = pos_ + ahead;
    return tokens_[std::min(k, tokens_.size() - 1)];
  }
  bool at_end() const { return peek().kind == Tok::End; }
  bool check(Tok k) const { return peek().kind == k; }
  bool accept(Tok k) {
    if (check(k)) {
      ++pos_;
      return true;
    }
    return false;
  }
  Token expect(Tok k, const std::string& what) {
    if (!check(k)) err("expected " + what);
    return tokens_[pos_++];
  }
  void skip_newlines() {
    while (accept(Tok::Newline)) {
    }
  }
  ast::SrcLoc loc() const { return {peek().line, peek().col}; }

  bool is_kw(const char* kw) const { return check(Tok::Ident) && peek().text == kw; }

  // --- statements ---------------------------------------------------------------

  ast::StmtP statement() {
    ast::SrcLoc at = loc();
    if (is_kw("for")) return for_stmt();
    if (is_kw("let")) return let_stmt();
    if (is_kw("if")) return if_stmt();
    if (is_kw("begin")) {
      ++pos_;
      auto body = body_until_end();
      return body;
    }
    if (check(Tok::At)) {
      ++pos_;
      std::string which = expect(Tok::Ident, "freeze or thaw").text;
      expect(Tok::LParen, "'('");
      std::string t = expect(Tok::Ident, "tensor name").text;
      expect(Tok::RParen, "')'");
      if (which == "freeze") return ast::freeze_stmt(t, at);
      if (which == "thaw") return ast::thaw_stmt(t, at);
      err("unknown @ form '" + which + "'");
    }
    // assignment or declare
    ast::ExprP head = expression();
    if (accept(Tok::DotEq)) {
      if (head->kind != ast::ExprKind::Var && head->kind != ast::ExprKind::Index)
        err("declare target must be a tensor name");
      ast::ExprP init = expression();
      return ast::declare(head->name, init, {}, at);
    }
    ast::OpRef op;
    if (accept(Tok::Eq)) {
      op = ast::OpRef("initwrite");
    } else if (accept(Tok::PlusEq)) {
      op = ast::OpRef("+");
    } else if (accept(Tok::StarEq)) {
      op = ast::OpRef("*");
    } else if (accept(Tok::MinusEq)) {
      op = ast::OpRef("-");
    } else if (accept(Tok::OrEq)) {
      op = ast::OpRef("|");
    } else if (accept(Tok::AndEq)) {
      op = ast::OpRef("&");
    } else if (accept(Tok::LtLt)) {
      std::string name = expect(Tok::Ident, "operator name").text;
      ast::ExprP param;
      if (accept(Tok::LParen)) {
        param = expression();
        expect(Tok::RParen, "')'");
      }
      expect(Tok::GtGtEq, "'>>='");
      op = ast::OpRef(name, param);
    } else {
      err("expected a statement");
    }
    if (head->kind != ast::ExprKind::Access) err("assignment target must be a tensor access");
    ast::ExprP rhs = expression();
    return ast::assign(head, op, rhs, at);
  }

  ast::StmtP body_until_end() {
    std::vector<ast::StmtP> stmts;
    skip_newlines();
    while (!is_kw("end")) {
      if (at_end()) err("missing 'end'");
      stmts.push_back(statement());
      skip_newlines();
    }
    ++pos_;  // end
    if (stmts.size() == 1) return stmts[0];
    return ast::block(std::move(stmts));
  }

  ast::StmtP for_stmt() {
    ast::SrcLoc at = loc();
    ++pos_;  // for
    std::vector<std::pair<std::string, ast::ExprP>> binders;
    while (true) {
      std::string idx = expect(Tok::Ident, "loop index").text;
      expect(Tok::Eq, "'='");
      binders.push_back({idx, extent_expr()});
      if (!accept(Tok::Comma)) break;
    }
    auto body = body_until_end();
    for (auto it = binders.rbegin(); it != binders.rend(); ++it)
      body = ast::loop(it->first, it->second, body, at);
    return body;
  }

  ast::StmtP let_stmt() {
    ast::SrcLoc at = loc();
    ++pos_;  // let
    std::vector<std::pair<std::string, ast::ExprP>> binders;
    while (true) {
      std::string v = expect(Tok::Ident, "variable name").text;
      expect(Tok::Eq, "'='");
      binders.push_back({v, expression()});
      if (!accept(Tok::Comma)) break;
    }
    auto body = body_until_end();
    for (auto it = binders.rbegin(); it != binders.rend(); ++it)
      body = ast::define(it->first, it->second, body, at);
    return body;
  }

  ast::StmtP if_stmt() {
    ast::SrcLoc at = loc();
    ++pos_;  // if
    ast::ExprP cond = expression();
    auto body = body_until_end();
    return ast::sieve(cond, body, at);
  }

  // --- expressions ------------------------------------------------------------

  ast::ExprP extent_expr() {
    ast::SrcLoc at = loc();
    if (accept(Tok::Underscore)) return ast::dimless(at);
    ast::ExprP lo = expression();
    if (accept(Tok::Colon)) {
      ast::ExprP hi = expression();
      return ast::extent(lo, hi, at);
    }
    return lo;  // a bare expression extent (resolved by dimensionalization)
  }

  ast::ExprP expression() { return or_expr(); }

  ast::ExprP or_expr() {
    auto e = and_expr();
    while (check(Tok::OrOr)) {
      ast::SrcLoc at = loc();
      ++pos_;
      e = ast::call("||", {e, and_expr()}, at);
    }
    return e;
  }
  ast::ExprP and_expr() {
    auto e = cmp_expr();
    while (check(Tok::AndAnd)) {
      ast::SrcLoc at = loc();
      ++pos_;
      e = ast::call("&&", {e, cmp_expr()}, at);
    }
    return e;
  }
  ast::ExprP cmp_expr() {
    auto e = add_expr();
    while (true) {
      std::string op;
      if (check(Tok::EqEq)) op = "==";
      else if (check(Tok::NotEq)) op = "!=";
      else if (check(Tok::Lt)) op = "<";
      else if (check(Tok::LtEq)) op = "<=";
      else if (check(Tok::Gt)) op = ">";
      else if (check(Tok::GtEq)) op = ">=";
      else break;
      ast::SrcLoc at = loc();
      ++pos_;
      e = ast::call(op, {e, add_expr()}, at);
    }
    return e;
  }
  ast::ExprP add_expr() {
    auto e = mul_expr();
    while (check(Tok::Plus) || check(Tok::Minus)) {
      std::string op = peek().text;
      ast::SrcLoc at = loc();
      ++pos_;
      e = ast::call(op, {e, mul_expr()}, at);
    }
    return e;
  }
  ast::ExprP mul_expr() {
    auto e = unary_expr();
    while (check(Tok::Star) || check(Tok::Slash)) {
      std::string op = peek().text;
      ast::SrcLoc at = loc();
      ++pos_;
      e = ast::call(op, {e, unary_expr()}, at);
    }
    return e;
  }
  ast::ExprP unary_expr() {
    ast::SrcLoc at = loc();
    if (accept(Tok::Bang)) return ast::call("!", {unary_expr()}, at);
    if (accept(Tok::Tilde)) {
      expect(Tok::LParen, "'(' after ~");
      auto e = expression();
      expect(Tok::RParen, "')'");
      return ast::call("~", {e}, at);
    }
    if (accept(Tok::Minus)) {
      auto e = unary_expr();
      if (e->kind == ast::ExprKind::Lit && e->lit.is_int())
        return ast::lit(Value::of_int(-e->lit.i), at);
      if (e->kind == ast::ExprKind::Lit && e->lit.is_float())
        return ast::lit(Value::of_float(-e->lit.f), at);
      return ast::call("neg", {e}, at);
    }
    return postfix_expr();
  }

  ast::ExprP postfix_expr() {
    auto e = primary_expr();
    while (true) {
      if (check(Tok::LBracket)) {
        ast::SrcLoc at = loc();
        ++pos_;
        std::vector<ast::ExprP> idx;
        if (!check(Tok::RBracket)) {
          idx.push_back(expression());
          while (accept(Tok::Comma)) idx.push_back(expression());
        }
        expect(Tok::RBracket, "']'");
        e = ast::access(target_of(e), std::move(idx), at);
      } else {
        break;
      }
    }
    return e;
  }

  // Converts a parsed call/name expression into an access target. Accepts
  // the canonical wrapper call forms so printed programs re-parse.
  ast::TargetP target_of(const ast::ExprP& e) {
    using namespace ast;
    if (e->kind == ExprKind::Var || e->kind == ExprKind::Index)
      return base_target(e->name);
    if (e->kind != ExprKind::Call) err("bad access target");
    const std::string& f = e->op.name;
    auto t = std::make_shared<Target>();
    if (f == "uptrimask") {
      t->kind = WrapKind::UpTriMask;
      return t;
    }
    if (f == "diagmask") {
      t->kind = WrapKind::DiagMask;
      return t;
    }
    if (e->args.empty()) err("wrapper call needs an inner tensor");
    t->inner = target_of(e->args[0]);
    if (f == "offset") {
      t->kind = WrapKind::Offset;
      for (size_t k = 1; k < e->args.size(); ++k) t->deltas.push_back(e->args[k]);
      return t;
    }
    if (f == "toeplitz") {
      t->kind = WrapKind::Toeplitz;
      if (e->args.size() != 2 || e->args[1]->kind != ExprKind::Lit) err("toeplitz(tns, mode)");
      t->toeplitz_mode = static_cast<int>(e->args[1]->lit.as_int());
      return t;
    }
    if (f == "permissive") {
      t->kind = WrapKind::Permissive;
      for (size_t k = 1; k < e->args.size(); ++k) {
        if (e->args[k]->kind != ExprKind::Lit) err("permissive flags must be literals");
        t->permissive.push_back(e->args[k]->lit.as_bool());
      }
      return t;
    }
    if (f == "protocolized") {
      t->kind = WrapKind::Protocolized;
      for (size_t k = 1; k < e->args.size(); ++k) {
        const auto& a = e->args[k];
        if (a->kind != ExprKind::Var && a->kind != ExprKind::Index)
          err("protocol names must be identifiers");
        if (a->name == "walk") t->protocols.push_back(Protocol::Walk);
        else if (a->name == "follow") t->protocols.push_back(Protocol::Follow);
        else if (a->name == "gallop") t->protocols.push_back(Protocol::Gallop);
        else err("unknown protocol " + a->name);
      }
      return t;
    }
    if (f == "window") {
      t->kind = WrapKind::Window;
      for (size_t k = 1; k < e->args.size(); ++k) {
        if (e->args[k]->kind != ExprKind::Extent) err("window ranges must be lo:hi");
        t->windows.push_back({e->args[k]->lo, e->args[k]->hi});
      }
      return t;
    }
    if (f == "swizzle") {
      t->kind = WrapKind::Swizzle;
      for (size_t k = 1; k < e->args.size(); ++k) {
        if (e->args[k]->kind != ExprKind::Lit) err("swizzle permutation must be literal");
        t->perm.push_back(static_cast<int>(e->args[k]->lit.as_int()));
      }
      return t;
    }
    err("unknown wrapper '" + f + "'");
  }

  ast::ExprP primary_expr() {
    ast::SrcLoc at = loc();
    if (accept(Tok::LParen)) {
      auto e = expression();
      if (accept(Tok::Colon)) {
        auto hi = expression();
        expect(Tok::RParen, "')'");
        return ast::extent(e, hi, at);
      }
      expect(Tok::RParen, "')'");
      return e;
    }
    if (check(Tok::Int)) {
      Token t = tokens_[pos_++];
      return ast::lit(Value::of_int(std::stoll(t.text)), at);
    }
    if (check(Tok::Float)) {
      Token t = tokens_[pos_++];
      return ast::lit(Value::of_float(std::stod(t.text)), at);
    }
    if (check(Tok::Ident)) {
      Token t = tokens_[pos_++];
      if (t.text == "true") return ast::lit(Value::of_bool(true), at);
      if (t.text == "false") return ast::lit(Value::of_bool(false), at);
      if (t.text == "Inf") return ast::lit(value_inf(), at);
      if (t.text == "missing") return ast::lit(Value::missing(), at);
      if (check(Tok::LParen)) {
        ++pos_;
        std::vector<ast::ExprP> args;
        if (!check(Tok::RParen)) {
          args.push_back(argument());
          while (accept(Tok::Comma)) args.push_back(argument());
        }
        expect(Tok::RParen, "')'");
        return ast::call(t.text, std::move(args), at);
      }
      return ast::var(t.text, at);
    }
    err("expected an expression");
  }

  // Call arguments may be ranges (for window).
  ast::ExprP argument() {
    auto e = expression();
    if (accept(Tok::Colon)) {
      auto hi = expression();
      return ast::extent(e, hi);
    }
    return e;
  }

  std::string file_;
  std::vector<Token> tokens_;
  size_t pos_ = 0;
};

namespace detail {

// Rewrites identifiers bound by enclosing loops into Index nodes; names
// bound by `let` or free remain Var.
inline ast::ExprP bind_expr(const ast::ExprP& e, const std::set<std::string>& loops);

inline ast::TargetP bind_target(const ast::TargetP& t, const std::set<std::string>& loops) {
  if (!t) return t;
  auto n = std::make_shared<ast::Target>(*t);
  n->inner = bind_target(t->inner, loops);
  for (auto& d : n->deltas) d = bind_expr(d, loops);
  for (auto& [lo, hi] : n->windows) {
    lo = bind_expr(lo, loops);
    hi = bind_expr(hi, loops);
  }
  return n;
}

inline ast::ExprP bind_expr(const ast::ExprP& e, const std::set<std::string>& loops) {
  if (!e) return e;
  using namespace ast;
  auto n = std::make_shared<Expr>(*e);
  switch (e->kind) {
    case ExprKind::Var:
      if (loops.count(e->name)) n->kind = ExprKind::Index;
      break;
    case ExprKind::Call:
      for (auto& a : n->args) a = bind_expr(a, loops);
      if (n->op.param) n->op.param = bind_expr(n->op.param, loops);
      break;
    case ExprKind::Access:
      n->target = bind_target(e->target, loops);
      for (auto& i : n->idx) i = bind_expr(i, loops);
      break;
    case ExprKind::Extent:
      n->lo = bind_expr(e->lo, loops);
      n->hi = bind_expr(e->hi, loops);
      break;
    default: break;
  }
  return n;
}

inline ast::StmtP bind_stmt(const ast::StmtP& s, std::set<std::string> loops) {
  if (!s) return s;
  using namespace ast;
  auto n = std::make_shared<Stmt>(*s);
  switch (s->kind) {
    case StmtKind::Loop: {
      n->ext = bind_expr(s->ext, loops);
      loops.insert(s->index);
      n->body = bind_stmt(s->body, loops);
      break;
    }
    case StmtKind::Define: {
      n->val = bind_expr(s->val, loops);
      std::set<std::string> inner = loops;
      inner.erase(s->var);  // let shadows a loop binding
      n->body = bind_stmt(s->body, inner);
      break;
    }
    case StmtKind::Sieve:
      n->cond = bind_expr(s->cond, loops);
      n->body = bind_stmt(s->body, loops);
      break;
    case StmtKind::Assign:
      n->lhs = bind_expr(s->lhs, loops);
      n->rhs = bind_expr(s->rhs, loops);
      break;
    case StmtKind::Block:
      for (auto& st : n->stmts) st = bind_stmt(st, loops);
      break;
    case StmtKind::Declare:
      n->init = bind_expr(s->init, loops);
      for (auto& d : n->dims) d = bind_expr(d, loops);
      break;
    default: break;
  }
  return n;
}

}  // namespace detail

inline ast::StmtP parse(const std::string& text, const std::string& file = "<input>") {
  return detail::bind_stmt(Parser::parse_program(text, file), {});
}

}  // namespace finch
