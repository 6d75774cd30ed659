#pragma once

// .cvq circuit programs: a line-oriented, ';'-terminated text format with '#'
// comments, plus network { } and schedule { } blocks for the streaming and
// loop simulators.

#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "cvsim/fock.hpp"
#include "cvsim/gaussian.hpp"
#include "cvsim/loop.hpp"
#include "cvsim/tdm.hpp"

namespace cvsim::dsl {

struct SourcePos {
  int line = 1;
  int column = 1;
  // Positions describe where text came from; they never make two programs differ.
  friend bool operator==(const SourcePos&, const SourcePos&) { return true; }
};

struct ParseError {
  int line = 1;
  int column = 1;
  std::string message;
  std::string token;

  std::string to_string() const {
    std::string s = std::to_string(line) + ":" + std::to_string(column) + ": " + message;
    if (!token.empty()) s += " (at '" + token + "')";
    return s;
  }
};

enum class SqUnit { DB, R };

struct Squeezing {
  double value = 0.0;
  SqUnit unit = SqUnit::R;
  double r() const { return unit == SqUnit::DB ? squeezing_r(value) : value; }
  bool operator==(const Squeezing&) const = default;
};

using tdm::Quadrature;

struct ModeDecl {
  std::vector<std::string> ids;
  bool operator==(const ModeDecl&) const = default;
};
struct Sq {
  std::string mode;
  Squeezing amount;
  Quadrature quad = Quadrature::X;
  bool operator==(const Sq&) const = default;
};
struct Ps {
  std::string mode;
  double theta = 0.0;
  bool operator==(const Ps&) const = default;
};
struct Bs {
  std::string m1, m2;
  double t = 0.5;
  bool operator==(const Bs&) const = default;
};
struct Disp {
  std::string mode;
  double dx = 0.0, dp = 0.0;
  bool operator==(const Disp&) const = default;
};
struct Loss {
  std::string mode;
  double eta = 1.0;
  bool operator==(const Loss&) const = default;
};
struct Hom {
  std::string mode;
  double theta = 0.0;
  std::string outcome;
  bool operator==(const Hom&) const = default;
};
struct Ff {
  std::string outcome;
  std::string mode;
  double gx = 0.0, gp = 0.0;
  bool operator==(const Ff&) const = default;
};
struct Cubic {
  std::string mode;
  double gamma = 0.0;
  bool operator==(const Cubic&) const = default;
};
struct Cphase {
  std::string m1, m2;
  bool operator==(const Cphase&) const = default;
};
struct ReportCov {
  bool operator==(const ReportCov&) const = default;
};
/// Coefficients over (x, p) of every mode declared so far, in declaration order.
struct ReportForm {
  std::vector<double> coeffs;
  bool operator==(const ReportForm&) const = default;
};
/// Fidelity of one mode with the coherent state of mean (x, p).
struct ReportFidelity {
  std::string mode;
  double x = 0.0, p = 0.0;
  bool operator==(const ReportFidelity&) const = default;
};
struct Report {
  std::variant<ReportCov, ReportForm, ReportFidelity> what;
  bool operator==(const Report&) const = default;
};

struct NetworkArm {
  Quadrature quad = Quadrature::X;
  Squeezing amount;
  bool operator==(const NetworkArm&) const = default;
};
struct NetworkBlock {
  std::vector<NetworkArm> arms;
  std::vector<tdm::NetworkElement> elements;
  int width = 0;
  int slots = 1;
  double eta = 1.0;
  bool operator==(const NetworkBlock&) const = default;

  tdm::NetworkSpec spec() const {
    tdm::NetworkSpec s;
    for (const auto& a : arms) s.arms.push_back({a.quad, a.amount.r()});
    s.elements = elements;
    s.width = width;
    return s;
  }
};
struct ScheduleBlock {
  loop::LoopConfig config;
  std::vector<loop::ScheduleStep> steps;  // sorted by tick
  bool operator==(const ScheduleBlock& o) const {
    return config.n_data == o.config.n_data && config.m_anc == o.config.m_anc &&
           config.outer_transmission == o.config.outer_transmission &&
           config.inner_transmission == o.config.inner_transmission && steps == o.steps;
  }
  std::vector<std::string> outcomes() const {
    std::vector<std::string> out;
    for (const auto& s : steps)
      if (s.homodyne) out.push_back(s.homodyne->outcome);
    return out;
  }
};

using Statement =
    std::variant<ModeDecl, Sq, Ps, Bs, Disp, Loss, Hom, Ff, Cubic, Cphase, Report, NetworkBlock, ScheduleBlock>;

struct Instruction {
  Statement op;
  SourcePos pos;
  bool operator==(const Instruction&) const = default;
};

struct CircuitProgram {
  std::optional<std::string> backend;
  std::optional<std::uint64_t> seed;
  std::optional<int> cutoff;
  std::vector<std::string> modes;     // declaration order
  std::vector<std::string> outcomes;  // measurement order
  std::vector<Instruction> body;
  bool operator==(const CircuitProgram&) const = default;
};

struct ParseResult {
  std::optional<CircuitProgram> program;
  std::optional<ParseError> error;
  explicit operator bool() const { return program.has_value(); }
};

namespace detail {

enum class Tok { Word, Semi, LBrace, RBrace, LBracket, RBracket, Comma, Equals, Arrow, End };

struct Token {
  Tok kind = Tok::End;
  std::string text;
  SourcePos pos;
};

struct Failure {
  ParseError error;
};

[[noreturn]] inline void fail(const SourcePos& pos, std::string message, std::string token = {}) {
  if (token.size() > 40) token = token.substr(0, 40) + "...";
  throw Failure{{pos.line, pos.column, std::move(message), std::move(token)}};
}

inline bool is_punct(char c) {
  return c == ';' || c == '{' || c == '}' || c == '[' || c == ']' || c == ',' || c == '=' || c == '#';
}

inline std::vector<Token> lex(std::string_view src) {
  std::vector<Token> out;
  int line = 1, col = 1;
  std::size_t i = 0;
  const auto advance = [&](std::size_t n) {
    for (std::size_t k = 0; k < n; ++k) {
      if (src[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
      ++i;
    }
  };
  while (i < src.size()) {
    const char c = src[i];
    if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
      advance(1);
      continue;
    }
    if (c == '#') {
      while (i < src.size() && src[i] != '\n') advance(1);
      continue;
    }
    const SourcePos pos{line, col};
    const auto single = [&](Tok k) {
      out.push_back({k, std::string(1, c), pos});
      advance(1);
    };
    switch (c) {
      case ';': single(Tok::Semi); continue;
      case '{': single(Tok::LBrace); continue;
      case '}': single(Tok::RBrace); continue;
      case '[': single(Tok::LBracket); continue;
      case ']': single(Tok::RBracket); continue;
      case ',': single(Tok::Comma); continue;
      case '=': single(Tok::Equals); continue;
      default: break;
    }
    if (c == '-' && i + 1 < src.size() && src[i + 1] == '>') {
      out.push_back({Tok::Arrow, "->", pos});
      advance(2);
      continue;
    }
    if (static_cast<unsigned char>(c) < 0x20 || c == 0x7f) fail(pos, "unexpected control character");
    std::size_t j = i;
    while (j < src.size()) {
      const char d = src[j];
      if (d == ' ' || d == '\t' || d == '\r' || d == '\n' || is_punct(d)) break;
      if (static_cast<unsigned char>(d) < 0x20 || d == 0x7f) break;
      if (d == '-' && j + 1 < src.size() && src[j + 1] == '>') break;
      ++j;
    }
    out.push_back({Tok::Word, std::string(src.substr(i, j - i)), pos});
    advance(j - i);
  }
  out.push_back({Tok::End, "", {line, col}});
  return out;
}

inline std::optional<double> to_double(std::string_view w) {
  if (!w.empty() && w.front() == '+') w.remove_prefix(1);
  if (w.empty()) return std::nullopt;
  double v = 0.0;
  const auto [p, ec] = std::from_chars(w.data(), w.data() + w.size(), v);
  if (ec != std::errc() || p != w.data() + w.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

template <class Int>
std::optional<Int> to_int(std::string_view w) {
  if (w.empty()) return std::nullopt;
  Int v{};
  const auto [p, ec] = std::from_chars(w.data(), w.data() + w.size(), v);
  if (ec != std::errc() || p != w.data() + w.size()) return std::nullopt;
  return v;
}

inline bool is_identifier(std::string_view w) {
  if (w.empty()) return false;
  const auto alpha = [](char c) { return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c == '_'; };
  if (!alpha(w.front())) return false;
  for (char c : w)
    if (!alpha(c) && !(c >= '0' && c <= '9')) return false;
  return true;
}

struct NamedArg {
  Token key;
  std::vector<Token> values;
  bool is_list = false;
};

/// One statement split into head, positional words, key=value pairs and an optional -> target.
struct Stmt {
  Token head;
  std::vector<Token> positional;
  std::vector<NamedArg> named;
  std::optional<Token> arrow;
  std::set<std::string> used;

  const Token& pos_arg(std::size_t k) const { return positional[k]; }

  void expect_positional(std::size_t n, const char* usage) const {
    if (positional.size() != n) {
      const SourcePos at = positional.size() > n ? positional[n].pos : head.pos;
      fail(at, "'" + head.text + "' takes " + std::to_string(n) + " positional argument" + (n == 1 ? "" : "s") +
                   ", got " + std::to_string(positional.size()) + "; usage: " + usage,
           positional.size() > n ? positional[n].text : head.text);
    }
  }
  void expect_min_positional(std::size_t n, const char* usage) const {
    if (positional.size() < n) fail(head.pos, "'" + head.text + "' needs more arguments; usage: " + usage, head.text);
  }
  void no_arrow() const {
    if (arrow) fail(arrow->pos, "unexpected '->' after '" + head.text + "'", arrow->text);
  }
  const NamedArg* find(const std::string& key) {
    for (const auto& a : named) {
      if (a.key.text == key) {
        used.insert(key);
        return &a;
      }
    }
    return nullptr;
  }
  double number(const std::string& key, std::optional<double> fallback) {
    const NamedArg* a = find(key);
    if (!a) {
      if (!fallback) fail(head.pos, "'" + head.text + "' needs " + key + "=<value>", head.text);
      return *fallback;
    }
    if (a->is_list) fail(a->key.pos, "argument '" + key + "' expects a number, not a list", key);
    const auto v = to_double(a->values.front().text);
    if (!v) fail(a->values.front().pos, "argument '" + key + "' expects a finite number", a->values.front().text);
    return *v;
  }
  std::vector<double> list(const std::string& key) {
    const NamedArg* a = find(key);
    if (!a) fail(head.pos, "'" + head.text + "' needs " + key + "=[...]", head.text);
    if (!a->is_list) fail(a->key.pos, "argument '" + key + "' expects a list [a, b, ...]", key);
    std::vector<double> out;
    for (const Token& t : a->values) {
      const auto v = to_double(t.text);
      if (!v) fail(t.pos, "list entries must be finite numbers", t.text);
      out.push_back(*v);
    }
    return out;
  }
  void finish() const {
    for (const auto& a : named) {
      if (!used.contains(a.key.text)) fail(a.key.pos, "unknown argument '" + a.key.text + "' for '" + head.text + "'", a.key.text);
    }
  }
};

inline double number_at(const Token& t, const char* what) {
  const auto v = to_double(t.text);
  if (!v) fail(t.pos, std::string("expected a finite number for ") + what, t.text);
  return *v;
}

inline long long integer_at(const Token& t, const char* what, long long lo, long long hi) {
  const auto v = to_int<long long>(t.text);
  if (!v) fail(t.pos, std::string("expected an integer for ") + what, t.text);
  if (*v < lo || *v > hi) {
    fail(t.pos, std::string(what) + " must lie in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]", t.text);
  }
  return *v;
}

inline double unit_interval(double v, const Token& at, const char* what) {
  if (v < 0.0 || v > 1.0) fail(at.pos, std::string(what) + " must lie in [0, 1]", at.text);
  return v;
}

inline Squeezing squeezing_at(const Token& t) {
  std::string_view w = t.text;
  Squeezing s;
  if (w.size() > 2 && w.ends_with("dB")) {
    s.unit = SqUnit::DB;
    w.remove_suffix(2);
  } else if (w.size() > 1 && w.ends_with("r")) {
    s.unit = SqUnit::R;
    w.remove_suffix(1);
  } else {
    fail(t.pos, "expected a squeezing amount such as 15dB or 1.2r", t.text);
  }
  const auto v = to_double(w);
  if (!v) fail(t.pos, "expected a squeezing amount such as 15dB or 1.2r", t.text);
  s.value = *v;
  return s;
}

inline Quadrature quadrature_at(const Token& t) {
  if (t.text == "x") return Quadrature::X;
  if (t.text == "p") return Quadrature::P;
  fail(t.pos, "expected quadrature x or p", t.text);
}

class Parser {
 public:
  explicit Parser(std::string_view src) : toks_(lex(src)) {}

  CircuitProgram run() {
    while (peek().kind != Tok::End) statement();
    return std::move(prog_);
  }

 private:
  const Token& peek(std::size_t ahead = 0) const { return toks_[std::min(i_ + ahead, toks_.size() - 1)]; }
  const Token& take() {
    const Token& t = toks_[i_];
    if (i_ + 1 < toks_.size()) ++i_;
    return t;
  }

  Stmt read_stmt() {
    Stmt s;
    if (peek().kind != Tok::Word) fail(peek().pos, peek().kind == Tok::End ? "unexpected end of input" : "expected a statement", peek().text);
    s.head = take();
    for (;;) {
      const Token& t = peek();
      switch (t.kind) {
        case Tok::Semi: take(); return s;
        case Tok::End: fail(t.pos, "missing ';' after '" + s.head.text + "' statement");
        case Tok::Arrow: {
          const Token arrow = take();
          if (s.arrow) fail(arrow.pos, "only one '->' per statement", arrow.text);
          if (peek().kind != Tok::Word) fail(peek().pos, "expected an outcome name after '->'", peek().text);
          s.arrow = take();
          break;
        }
        case Tok::Word: {
          const Token w = take();
          if (peek().kind != Tok::Equals) {
            if (s.arrow) fail(w.pos, "nothing may follow the '->' target", w.text);
            s.positional.push_back(w);
            break;
          }
          take();
          NamedArg a{w, {}, false};
          for (const auto& prev : s.named)
            if (prev.key.text == w.text) fail(w.pos, "argument '" + w.text + "' given twice", w.text);
          if (peek().kind == Tok::LBracket) {
            take();
            a.is_list = true;
            while (peek().kind != Tok::RBracket) {
              if (peek().kind != Tok::Word) fail(peek().pos, "expected a list entry", peek().text);
              a.values.push_back(take());
              if (peek().kind == Tok::Comma) {
                take();
                if (peek().kind != Tok::Word) fail(peek().pos, "expected a list entry after ','", peek().text);
              } else if (peek().kind != Tok::RBracket) {
                fail(peek().pos, "expected ',' or ']' in list", peek().text);
              }
            }
            take();
          } else if (peek().kind == Tok::Word) {
            a.values.push_back(take());
          } else {
            fail(peek().pos, "expected a value after '" + w.text + "='", peek().text);
          }
          s.named.push_back(std::move(a));
          break;
        }
        default: fail(t.pos, "unexpected '" + t.text + "'", t.text);
      }
    }
  }

  std::string use_mode(const Token& t) {
    if (!is_identifier(t.text)) fail(t.pos, "expected a mode name", t.text);
    if (!declared_.contains(t.text)) fail(t.pos, "undeclared mode " + t.text, t.text);
    if (consumed_.contains(t.text)) fail(t.pos, "mode " + t.text + " consumed", t.text);
    return t.text;
  }

  void new_outcome(const Token& t) {
    if (!is_identifier(t.text)) fail(t.pos, "expected an outcome name", t.text);
    if (declared_.contains(t.text)) fail(t.pos, "outcome name " + t.text + " clashes with a mode", t.text);
    if (outcomes_.contains(t.text)) fail(t.pos, "outcome " + t.text + " measured twice", t.text);
    outcomes_.insert(t.text);
    prog_.outcomes.push_back(t.text);
  }

  void push(Statement s, const Token& head) { prog_.body.push_back({std::move(s), head.pos}); }

  void statement() {
    const Token& head = peek();
    if (head.kind == Tok::Word && (head.text == "network" || head.text == "schedule") && peek(1).kind == Tok::LBrace) {
      const Token h = take();
      take();
      if (h.text == "network") {
        push(network_block(), h);
      } else {
        push(schedule_block(h), h);
      }
      if (peek().kind == Tok::Semi) take();
      return;
    }
    Stmt s = read_stmt();
    const std::string& op = s.head.text;
    if (op == "mode") {
      s.expect_min_positional(1, "mode <id>+");
      s.no_arrow();
      s.finish();
      ModeDecl d;
      for (const Token& t : s.positional) {
        if (!is_identifier(t.text)) fail(t.pos, "mode names must be identifiers", t.text);
        if (declared_.contains(t.text)) fail(t.pos, "mode " + t.text + " declared twice", t.text);
        if (outcomes_.contains(t.text)) fail(t.pos, "mode name " + t.text + " clashes with an outcome", t.text);
        declared_.insert(t.text);
        prog_.modes.push_back(t.text);
        d.ids.push_back(t.text);
      }
      push(std::move(d), s.head);
    } else if (op == "backend") {
      s.expect_positional(1, "backend gaussian|fock");
      s.no_arrow();
      s.finish();
      if (prog_.backend) fail(s.head.pos, "backend given twice", op);
      const Token& t = s.pos_arg(0);
      if (t.text != "gaussian" && t.text != "fock") fail(t.pos, "backend must be gaussian or fock", t.text);
      prog_.backend = t.text;
    } else if (op == "seed") {
      s.expect_positional(1, "seed <integer>");
      s.no_arrow();
      s.finish();
      if (prog_.seed) fail(s.head.pos, "seed given twice", op);
      const auto v = to_int<std::uint64_t>(s.pos_arg(0).text);
      if (!v) fail(s.pos_arg(0).pos, "seed must be a non-negative 64-bit integer", s.pos_arg(0).text);
      prog_.seed = *v;
    } else if (op == "cutoff") {
      s.expect_positional(1, "cutoff <integer>");
      s.no_arrow();
      s.finish();
      if (prog_.cutoff) fail(s.head.pos, "cutoff given twice", op);
      prog_.cutoff = static_cast<int>(integer_at(s.pos_arg(0), "cutoff", 2, 100000));
    } else if (op == "sq") {
      s.expect_positional(3, "sq <mode> <value>(dB|r) (x|p)");
      s.no_arrow();
      s.finish();
      push(Sq{use_mode(s.pos_arg(0)), squeezing_at(s.pos_arg(1)), quadrature_at(s.pos_arg(2))}, s.head);
    } else if (op == "ps") {
      s.expect_positional(2, "ps <mode> <radians>");
      s.no_arrow();
      s.finish();
      push(Ps{use_mode(s.pos_arg(0)), number_at(s.pos_arg(1), "the phase")}, s.head);
    } else if (op == "bs") {
      s.expect_positional(2, "bs <m1> <m2> t=<T>");
      s.no_arrow();
      Bs b{use_mode(s.pos_arg(0)), use_mode(s.pos_arg(1)), s.number("t", std::nullopt)};
      if (b.m1 == b.m2) fail(s.pos_arg(1).pos, "bs needs two different modes", s.pos_arg(1).text);
      unit_interval(b.t, s.find("t")->values.front(), "t");
      s.finish();
      push(std::move(b), s.head);
    } else if (op == "disp") {
      s.expect_positional(1, "disp <mode> dx=<v> dp=<v>");
      s.no_arrow();
      Disp d{use_mode(s.pos_arg(0)), s.number("dx", 0.0), s.number("dp", 0.0)};
      s.finish();
      push(std::move(d), s.head);
    } else if (op == "loss") {
      s.expect_positional(2, "loss <mode> <eta>");
      s.no_arrow();
      s.finish();
      Loss l{use_mode(s.pos_arg(0)), number_at(s.pos_arg(1), "the transmission")};
      unit_interval(l.eta, s.pos_arg(1), "transmission");
      push(std::move(l), s.head);
    } else if (op == "hom") {
      s.expect_positional(1, "hom <mode> theta=<v> -> <outcome>");
      Hom h{use_mode(s.pos_arg(0)), s.number("theta", 0.0), {}};
      s.finish();
      if (!s.arrow) fail(s.head.pos, "hom needs '-> <outcome>'", op);
      new_outcome(*s.arrow);
      h.outcome = s.arrow->text;
      consumed_.insert(h.mode);
      push(std::move(h), s.head);
    } else if (op == "ff") {
      s.expect_positional(2, "ff <outcome> <mode> gx=<v> gp=<v>");
      s.no_arrow();
      const Token& o = s.pos_arg(0);
      if (!outcomes_.contains(o.text)) fail(o.pos, "unknown outcome " + o.text, o.text);
      Ff f{o.text, use_mode(s.pos_arg(1)), s.number("gx", 0.0), s.number("gp", 0.0)};
      s.finish();
      push(std::move(f), s.head);
    } else if (op == "cubic") {
      s.expect_positional(1, "cubic <mode> gamma=<v>");
      s.no_arrow();
      Cubic c{use_mode(s.pos_arg(0)), s.number("gamma", std::nullopt)};
      s.finish();
      push(std::move(c), s.head);
    } else if (op == "cphase") {
      s.expect_positional(2, "cphase <m1> <m2>");
      s.no_arrow();
      s.finish();
      Cphase c{use_mode(s.pos_arg(0)), use_mode(s.pos_arg(1))};
      if (c.m1 == c.m2) fail(s.pos_arg(1).pos, "cphase needs two different modes", s.pos_arg(1).text);
      push(std::move(c), s.head);
    } else if (op == "report") {
      s.expect_min_positional(1, "report cov | report form c=[...] | report fidelity <mode> x=<v> p=<v>");
      s.no_arrow();
      const Token& kind = s.pos_arg(0);
      if (kind.text == "cov") {
        s.expect_positional(1, "report cov");
        s.finish();
        push(Report{ReportCov{}}, s.head);
      } else if (kind.text == "form") {
        s.expect_positional(1, "report form c=[...]");
        ReportForm f{s.list("c")};
        const NamedArg* c = s.find("c");
        s.finish();
        if (f.coeffs.size() != 2 * prog_.modes.size()) {
          fail(c->key.pos, "form needs " + std::to_string(2 * prog_.modes.size()) + " coefficients (x and p of each declared mode), got " +
                               std::to_string(f.coeffs.size()), "c");
        }
        bool any = false;
        for (std::size_t m = 0; m < prog_.modes.size(); ++m) {
          const bool nonzero = f.coeffs[2 * m] != 0.0 || f.coeffs[2 * m + 1] != 0.0;
          any = any || nonzero;
          if (nonzero && consumed_.contains(prog_.modes[m])) fail(c->key.pos, "mode " + prog_.modes[m] + " consumed", "c");
        }
        if (!any) fail(c->key.pos, "form coefficients are all zero", "c");
        push(Report{std::move(f)}, s.head);
      } else if (kind.text == "fidelity") {
        s.expect_positional(2, "report fidelity <mode> x=<v> p=<v>");
        ReportFidelity f{use_mode(s.pos_arg(1)), s.number("x", 0.0), s.number("p", 0.0)};
        s.finish();
        push(Report{std::move(f)}, s.head);
      } else {
        fail(kind.pos, "unknown report kind (cov, form or fidelity)", kind.text);
      }
    } else {
      fail(s.head.pos, "unknown op '" + op + "'", op);
    }
  }

  Stmt block_stmt(const char* block) {
    if (peek().kind == Tok::End) fail(peek().pos, std::string("missing '}' to close the ") + block + " block");
    return read_stmt();
  }

  NetworkBlock network_block() {
    NetworkBlock nb;
    std::vector<std::pair<SourcePos, std::string>> where;  // per element
    bool width = false, slots = false, eta = false;
    while (peek().kind != Tok::RBrace) {
      Stmt s = block_stmt("network");
      s.no_arrow();
      const std::string& op = s.head.text;
      if (op == "arm") {
        s.expect_positional(2, "arm (x|p) <value>(dB|r)");
        s.finish();
        nb.arms.push_back({quadrature_at(s.pos_arg(0)), squeezing_at(s.pos_arg(1))});
      } else if (op == "bs") {
        s.expect_positional(2, "bs <arm> <arm> t=<T>");
        tdm::BeamSplitterElement e{static_cast<int>(integer_at(s.pos_arg(0), "arm index", 0, 1000)),
                                   static_cast<int>(integer_at(s.pos_arg(1), "arm index", 0, 1000)), s.number("t", std::nullopt)};
        unit_interval(e.t, s.find("t")->values.front(), "t");
        s.finish();
        if (e.a == e.b) fail(s.pos_arg(1).pos, "bs needs two different arms", s.pos_arg(1).text);
        nb.elements.push_back(e);
        where.push_back({s.head.pos, s.head.text});
      } else if (op == "delay") {
        s.expect_positional(2, "delay <arm> <length>");
        s.finish();
        nb.elements.push_back(tdm::DelayElement{static_cast<int>(integer_at(s.pos_arg(0), "arm index", 0, 1000)),
                                                static_cast<int>(integer_at(s.pos_arg(1), "delay length", 1, 100000))});
        where.push_back({s.head.pos, s.head.text});
      } else if (op == "width" || op == "slots") {
        s.expect_positional(1, "width <N> | slots <count>");
        s.finish();
        bool& seen = op == "width" ? width : slots;
        if (seen) fail(s.head.pos, op + " given twice", op);
        seen = true;
        if (op == "width") {
          nb.width = static_cast<int>(integer_at(s.pos_arg(0), "width", 0, 100000));
        } else {
          nb.slots = static_cast<int>(integer_at(s.pos_arg(0), "slots", 1, 2000000000));
        }
      } else if (op == "loss") {
        s.expect_positional(1, "loss <eta>");
        s.finish();
        if (eta) fail(s.head.pos, "loss given twice", op);
        eta = true;
        nb.eta = unit_interval(number_at(s.pos_arg(0), "the transmission"), s.pos_arg(0), "transmission");
      } else {
        fail(s.head.pos, "unknown network statement '" + op + "' (arm, bs, delay, width, slots, loss)", op);
      }
    }
    take();
    if (nb.arms.empty()) fail(peek().pos, "network block declares no arms");
    for (std::size_t k = 0; k < nb.elements.size(); ++k) {
      const auto check = [&](int arm) {
        if (arm >= static_cast<int>(nb.arms.size())) {
          fail(where[k].first, "network element references arm " + std::to_string(arm) + " but only " +
                                   std::to_string(nb.arms.size()) + " arms are declared", where[k].second);
        }
      };
      if (const auto* b = std::get_if<tdm::BeamSplitterElement>(&nb.elements[k])) {
        check(b->a);
        check(b->b);
      } else {
        check(std::get<tdm::DelayElement>(nb.elements[k]).arm);
      }
    }
    return nb;
  }

  ScheduleBlock schedule_block(const Token& head) {
    ScheduleBlock sb;
    bool configured = false;
    std::map<long long, loop::ScheduleStep> steps;
    std::set<long long> explicit_steps;
    std::vector<std::string> local_outcomes;
    while (peek().kind != Tok::RBrace) {
      Stmt s = block_stmt("schedule");
      const std::string& op = s.head.text;
      if (op == "config") {
        s.expect_positional(0, "config data=<n> anc=<m> outer=<eta> inner=<eta>");
        s.no_arrow();
        if (configured) fail(s.head.pos, "config given twice", op);
        configured = true;
        const auto count = [&](const char* key) {
          const NamedArg* a = s.find(key);
          if (!a) return 0LL;
          if (a->is_list) fail(a->key.pos, std::string(key) + " expects an integer", key);
          return integer_at(a->values.front(), key, 0, 100000);
        };
        sb.config.n_data = static_cast<int>(count("data"));
        sb.config.m_anc = static_cast<int>(count("anc"));
        sb.config.outer_transmission = s.number("outer", 1.0);
        sb.config.inner_transmission = s.number("inner", 1.0);
        s.finish();
        if (sb.config.n_data + sb.config.m_anc < 1) fail(s.head.pos, "config needs at least one slot", op);
        if (const NamedArg* a = s.find("outer")) unit_interval(sb.config.outer_transmission, a->values.front(), "outer");
        if (const NamedArg* a = s.find("inner")) unit_interval(sb.config.inner_transmission, a->values.front(), "inner");
      } else if (op == "step") {
        s.expect_positional(1, "step <slot> t=<T> theta=<v> dx=<v> dp=<v> [hom=<theta> -> <outcome>]");
        const long long tick = integer_at(s.pos_arg(0), "slot", 0, 1000000000000LL);
        if (!explicit_steps.insert(tick).second) fail(s.pos_arg(0).pos, "step for slot " + std::to_string(tick) + " given twice", s.pos_arg(0).text);
        loop::ScheduleStep& st = steps[tick];
        st.slot = tick;
        st.vbs_t = s.number("t", 1.0);
        if (const NamedArg* a = s.find("t")) unit_interval(st.vbs_t, a->values.front(), "t");
        st.vps_theta = s.number("theta", 0.0);
        st.eom_dx = s.number("dx", 0.0);
        st.eom_dp = s.number("dp", 0.0);
        const bool has_hom = s.find("hom") != nullptr;
        if (has_hom) {
          if (!s.arrow) fail(s.head.pos, "hom=<theta> needs '-> <outcome>'", op);
          new_outcome(*s.arrow);
          local_outcomes.push_back(s.arrow->text);
          st.homodyne = loop::HomodyneSpec{s.number("hom", std::nullopt), s.arrow->text};
        } else {
          s.no_arrow();
        }
        s.finish();
      } else if (op == "ff") {
        s.expect_positional(2, "ff <outcome> <slot> gx=<v> gp=<v>");
        s.no_arrow();
        const Token& o = s.pos_arg(0);
        if (std::find(local_outcomes.begin(), local_outcomes.end(), o.text) == local_outcomes.end()) {
          fail(o.pos, "unknown schedule outcome " + o.text, o.text);
        }
        const long long tick = integer_at(s.pos_arg(1), "slot", 0, 1000000000000LL);
        loop::ScheduleStep& st = steps[tick];
        st.slot = tick;
        st.feedforward.push_back({o.text, s.number("gx", 0.0), s.number("gp", 0.0)});
        s.finish();
      } else {
        fail(s.head.pos, "unknown schedule statement '" + op + "' (config, step, ff)", op);
      }
    }
    take();
    if (!configured) fail(head.pos, "schedule block needs a config statement", head.text);
    for (auto& [tick, st] : steps) sb.steps.push_back(std::move(st));
    loop::LoopProgram lp{sb.steps, sb.outcomes()};
    try {
      loop::detail::check_program(sb.config, lp);
    } catch (const std::invalid_argument& e) {
      fail(head.pos, e.what(), head.text);
    }
    return sb;
  }

  std::vector<Token> toks_;
  std::size_t i_ = 0;
  CircuitProgram prog_;
  std::set<std::string> declared_, consumed_, outcomes_;
};

}  // namespace detail

/// Parses a program. Never throws on malformed text: errors come back with a position.
inline ParseResult parse(std::string_view text) {
  try {
    return {detail::Parser(text).run(), std::nullopt};
  } catch (const detail::Failure& f) {
    return {std::nullopt, f.error};
  }
}

class ParseException : public std::runtime_error {
 public:
  explicit ParseException(ParseError e) : std::runtime_error(e.to_string()), error_(std::move(e)) {}
  const ParseError& error() const { return error_; }

 private:
  ParseError error_;
};

inline CircuitProgram parse_or_throw(std::string_view text) {
  ParseResult r = parse(text);
  if (!r) throw ParseException(*r.error);
  return std::move(*r.program);
}

// ---------------------------------------------------------------------------
// Printing.

namespace detail {

inline std::string fmt(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline std::string fmt(const Squeezing& s) { return fmt(s.value) + (s.unit == SqUnit::DB ? "dB" : "r"); }

struct Printer {
  std::ostringstream out;

  void operator()(const ModeDecl& d) {
    out << "mode";
    for (const auto& id : d.ids) out << ' ' << id;
    out << ";\n";
  }
  void operator()(const Sq& s) { out << "sq " << s.mode << ' ' << fmt(s.amount) << ' ' << tdm::to_char(s.quad) << ";\n"; }
  void operator()(const Ps& s) { out << "ps " << s.mode << ' ' << fmt(s.theta) << ";\n"; }
  void operator()(const Bs& s) { out << "bs " << s.m1 << ' ' << s.m2 << " t=" << fmt(s.t) << ";\n"; }
  void operator()(const Disp& s) { out << "disp " << s.mode << " dx=" << fmt(s.dx) << " dp=" << fmt(s.dp) << ";\n"; }
  void operator()(const Loss& s) { out << "loss " << s.mode << ' ' << fmt(s.eta) << ";\n"; }
  void operator()(const Hom& s) { out << "hom " << s.mode << " theta=" << fmt(s.theta) << " -> " << s.outcome << ";\n"; }
  void operator()(const Ff& s) { out << "ff " << s.outcome << ' ' << s.mode << " gx=" << fmt(s.gx) << " gp=" << fmt(s.gp) << ";\n"; }
  void operator()(const Cubic& s) { out << "cubic " << s.mode << " gamma=" << fmt(s.gamma) << ";\n"; }
  void operator()(const Cphase& s) { out << "cphase " << s.m1 << ' ' << s.m2 << ";\n"; }
  void operator()(const Report& r) {
    if (std::holds_alternative<ReportCov>(r.what)) {
      out << "report cov;\n";
    } else if (const auto* f = std::get_if<ReportForm>(&r.what)) {
      out << "report form c=[";
      for (std::size_t k = 0; k < f->coeffs.size(); ++k) out << (k ? ", " : "") << fmt(f->coeffs[k]);
      out << "];\n";
    } else {
      const auto& fid = std::get<ReportFidelity>(r.what);
      out << "report fidelity " << fid.mode << " x=" << fmt(fid.x) << " p=" << fmt(fid.p) << ";\n";
    }
  }
  void operator()(const NetworkBlock& nb) {
    out << "network {\n";
    for (const auto& a : nb.arms) out << "  arm " << tdm::to_char(a.quad) << ' ' << fmt(a.amount) << ";\n";
    for (const auto& e : nb.elements) {
      if (const auto* b = std::get_if<tdm::BeamSplitterElement>(&e)) {
        out << "  bs " << b->a << ' ' << b->b << " t=" << fmt(b->t) << ";\n";
      } else {
        const auto& d = std::get<tdm::DelayElement>(e);
        out << "  delay " << d.arm << ' ' << d.length << ";\n";
      }
    }
    out << "  width " << nb.width << ";\n  slots " << nb.slots << ";\n  loss " << fmt(nb.eta) << ";\n}\n";
  }
  void operator()(const ScheduleBlock& sb) {
    out << "schedule {\n  config data=" << sb.config.n_data << " anc=" << sb.config.m_anc
        << " outer=" << fmt(sb.config.outer_transmission) << " inner=" << fmt(sb.config.inner_transmission) << ";\n";
    for (const auto& st : sb.steps) {
      out << "  step " << st.slot << " t=" << fmt(st.vbs_t) << " theta=" << fmt(st.vps_theta) << " dx=" << fmt(st.eom_dx)
          << " dp=" << fmt(st.eom_dp);
      if (st.homodyne) out << " hom=" << fmt(st.homodyne->theta) << " -> " << st.homodyne->outcome;
      out << ";\n";
      for (const auto& f : st.feedforward) {
        out << "  ff " << f.outcome << ' ' << st.slot << " gx=" << fmt(f.gx) << " gp=" << fmt(f.gp) << ";\n";
      }
    }
    out << "}\n";
  }
};

}  // namespace detail

inline std::string pretty_print(const CircuitProgram& p) {
  detail::Printer pr;
  if (p.backend) pr.out << "backend " << *p.backend << ";\n";
  if (p.seed) pr.out << "seed " << *p.seed << ";\n";
  if (p.cutoff) pr.out << "cutoff " << *p.cutoff << ";\n";
  for (const auto& ins : p.body) std::visit(pr, ins.op);
  return pr.out.str();
}

// ---------------------------------------------------------------------------
// Validation against a backend.

enum class Backend { Gaussian, Fock };

inline const char* to_string(Backend b) { return b == Backend::Gaussian ? "gaussian" : "fock"; }

inline Backend backend_from_string(const std::string& s) {
  if (s == "gaussian") return Backend::Gaussian;
  if (s == "fock") return Backend::Fock;
  throw std::invalid_argument("unknown backend '" + s + "' (gaussian or fock)");
}

struct Diagnostic {
  SourcePos pos;
  std::string message;
  std::string to_string() const { return std::to_string(pos.line) + ":" + std::to_string(pos.column) + ": " + message; }
};

inline constexpr long long kMaxFockAmplitudes = 1LL << 24;

/// Every capability violation of `p` on `backend`; empty means runnable.
inline std::vector<Diagnostic> validate(const CircuitProgram& p, Backend backend) {
  std::vector<Diagnostic> out;
  const int n = static_cast<int>(p.modes.size());
  bool after_schedule = false;
  int networks = 0, schedules = 0;
  std::set<std::string> consumed;
  for (const auto& ins : p.body) {
    const Statement& op = ins.op;
    const bool is_report = std::holds_alternative<Report>(op);
    if (after_schedule && !is_report) out.push_back({ins.pos, "only report statements may follow a schedule block"});
    if (std::holds_alternative<Cubic>(op) || std::holds_alternative<Cphase>(op)) {
      if (backend == Backend::Gaussian) out.push_back({ins.pos, "non-Gaussian op on Gaussian backend"});
    }
    if (std::holds_alternative<Loss>(op) && backend == Backend::Fock) {
      out.push_back({ins.pos, "loss needs the gaussian backend (the Fock backend holds pure states)"});
    }
    if (const auto* h = std::get_if<Hom>(&op)) consumed.insert(h->mode);
    if (const auto* nb = std::get_if<NetworkBlock>(&op)) {
      ++networks;
      if (backend == Backend::Fock) out.push_back({ins.pos, "network block needs the gaussian backend"});
      if (n > 0) out.push_back({ins.pos, "a network block runs on its own pulses; remove the mode declarations"});
      try {
        const auto spec = nb->spec();
        spec.validate();
        std::vector<tdm::SqueezedForm> forms = tdm::derive_squeezed_forms(spec);
        int span = 0;
        for (const auto& f : forms) span = std::max(span, f.span());
        if (nb->slots <= span) {
          out.push_back({ins.pos, "network needs more than " + std::to_string(span) + " slots to evaluate any form"});
        }
      } catch (const std::exception& e) {
        out.push_back({ins.pos, e.what()});
      }
    }
    if (const auto* sb = std::get_if<ScheduleBlock>(&op)) {
      ++schedules;
      after_schedule = true;
      if (backend == Backend::Fock) out.push_back({ins.pos, "schedule block needs the gaussian backend"});
      const int live = n - static_cast<int>(consumed.size());
      if (sb->config.slots() != live) {
        out.push_back({ins.pos, "schedule config has " + std::to_string(sb->config.slots()) + " slots but " +
                                    std::to_string(live) + " modes are live"});
      }
    }
  }
  if (networks > 1) out.push_back({{}, "at most one network block per program"});
  if (schedules > 1) out.push_back({{}, "at most one schedule block per program"});
  if (backend == Backend::Fock) {
    if (n > fock::kMaxModes) {
      out.push_back({{}, "the Fock backend supports at most " + std::to_string(fock::kMaxModes) + " modes, program declares " +
                             std::to_string(n)});
    } else if (n > 0) {
      const long long d = p.cutoff.value_or(fock::kDefaultCutoff);
      long long size = 1;
      for (int k = 0; k < n; ++k) size *= d;
      if (size > kMaxFockAmplitudes) out.push_back({{}, "cutoff " + std::to_string(d) + " is too large for " + std::to_string(n) + " modes"});
    }
  }
  return out;
}

class ValidationError : public std::invalid_argument {
 public:
  explicit ValidationError(std::vector<Diagnostic> d) : std::invalid_argument(join(d)), diagnostics_(std::move(d)) {}
  const std::vector<Diagnostic>& diagnostics() const { return diagnostics_; }

 private:
  static std::string join(const std::vector<Diagnostic>& d) {
    std::string s = "invalid program:";
    for (const auto& x : d) s += "\n  " + x.to_string();
    return s;
  }
  std::vector<Diagnostic> diagnostics_;
};

// ---------------------------------------------------------------------------
// Execution.

struct OutcomeValue {
  std::string id;
  double value = 0.0;
};

struct ReportEntry {
  std::string kind;  // cov, form or fidelity
  int line = 0;
  std::vector<std::string> modes;  // cov: live modes in order; fidelity: the mode
  Vector mean;                     // cov
  Matrix cov;                      // cov
  double value = 0.0;              // form variance or fidelity
  double mean_value = 0.0;         // form mean
  double vacuum_value = 0.0;       // form variance on the vacuum
};

struct RunReport {
  Backend backend = Backend::Gaussian;
  std::uint64_t seed = 0;
  std::vector<OutcomeValue> outcomes;
  std::vector<ReportEntry> reports;
  std::optional<tdm::StreamStats> stream;
  std::vector<loop::PulseLoss> loop_loss;
  double wall_seconds = 0.0;
};

namespace detail {

inline std::size_t index_of(const std::vector<std::string>& v, const std::string& s) {
  return static_cast<std::size_t>(std::find(v.begin(), v.end(), s) - v.begin());
}

class GaussianRunner {
 public:
  GaussianRunner(const CircuitProgram& p, std::uint64_t seed, RunReport& rep)
      : p_(p), rng_(seed), rep_(rep), live_(p.modes.size(), true) {
    if (!p.modes.empty()) state_ = vacuum(static_cast<int>(p.modes.size()));
  }

  void run() {
    for (const auto& ins : p_.body) {
      line_ = ins.pos.line;
      std::visit([&](const auto& op) { exec(op); }, ins.op);
    }
  }

 private:
  int mode(const std::string& id) const {
    const auto k = index_of(p_.modes, id);
    if (!live_[k]) throw std::invalid_argument("line " + std::to_string(line_) + ": mode " + id + " consumed");
    return static_cast<int>(k);
  }
  GaussianState& st() { return *state_; }

  void exec(const ModeDecl&) {}
  void exec(const Sq& s) { state_ = squeeze(st(), mode(s.mode), s.quad == Quadrature::X ? s.amount.r() : -s.amount.r()); }
  void exec(const Ps& s) { state_ = phase_shift(st(), mode(s.mode), s.theta); }
  void exec(const Bs& s) { state_ = beam_splitter(st(), mode(s.m1), mode(s.m2), s.t); }
  void exec(const Disp& s) { state_ = displace(st(), mode(s.mode), s.dx, s.dp); }
  void exec(const Loss& s) { state_ = loss(st(), mode(s.mode), s.eta); }
  void exec(const Hom& h) {
    double v = 0.0;
    const int m = mode(h.mode);
    state_ = loop::detail::measure_and_reset(st(), m, h.theta, rng_, v);
    live_[static_cast<std::size_t>(m)] = false;
    values_[h.outcome] = v;
    rep_.outcomes.push_back({h.outcome, v});
  }
  void exec(const Ff& f) {
    const double v = values_.at(f.outcome);
    state_ = displace(st(), mode(f.mode), f.gx * v, f.gp * v);
  }
  void exec(const Cubic&) { throw std::logic_error("cubic on the gaussian backend"); }
  void exec(const Cphase&) { throw std::logic_error("cphase on the gaussian backend"); }
  void exec(const Report& r) {
    ReportEntry e;
    e.line = line_;
    if (std::holds_alternative<ReportCov>(r.what)) {
      e.kind = "cov";
      std::vector<int> idx;
      for (std::size_t k = 0; k < p_.modes.size(); ++k) {
        if (!live_[k]) continue;
        idx.push_back(static_cast<int>(k));
        e.modes.push_back(p_.modes[k]);
      }
      if (!idx.empty()) {
        const GaussianState red = reduced(st(), idx);
        e.mean = red.mean();
        e.cov = red.cov();
      }
    } else if (const auto* f = std::get_if<ReportForm>(&r.what)) {
      e.kind = "form";
      Vector c = Vector::Zero(st().mean().size());
      for (std::size_t k = 0; k < f->coeffs.size(); ++k) c(static_cast<Eigen::Index>(k)) = f->coeffs[k];
      for (std::size_t k = 0; k < p_.modes.size(); ++k) {
        if (!live_[k] && (c(2 * k) != 0.0 || c(2 * k + 1) != 0.0)) {
          throw std::invalid_argument("line " + std::to_string(line_) + ": mode " + p_.modes[k] + " consumed");
        }
      }
      const LinearForm form(c);
      const QuadStats q = quad_stats(st(), form);
      e.value = q.variance;
      e.mean_value = q.mean;
      e.vacuum_value = form.vacuum_variance();
    } else {
      const auto& fid = std::get<ReportFidelity>(r.what);
      e.kind = "fidelity";
      e.modes = {fid.mode};
      const int m = mode(fid.mode);
      e.value = fidelity(reduced(st(), std::vector<int>{m}), coherent(fid.x, fid.p));
    }
    rep_.reports.push_back(std::move(e));
  }
  void exec(const NetworkBlock& nb) {
    rep_.stream = tdm::run_stream(nb.spec(), nb.slots, {}, {.eta = nb.eta}).stats;
  }
  void exec(const ScheduleBlock& sb) {
    std::vector<int> live;
    for (std::size_t k = 0; k < live_.size(); ++k)
      if (live_[k]) live.push_back(static_cast<int>(k));
    if (live.empty()) throw std::invalid_argument("schedule block: no live modes");
    const loop::LoopProgram lp{sb.steps, sb.outcomes()};
    const loop::LoopResult res = loop::simulate(sb.config, lp, reduced(st(), live), rng_());
    for (const auto& o : res.outcomes) {
      values_[o.id] = o.value;
      rep_.outcomes.push_back({o.id, o.value});
    }
    rep_.loop_loss = res.loss;
    // write the occupied slots back; everything else becomes consumed vacuum
    const int n = static_cast<int>(p_.modes.size());
    Vector mean = Vector::Zero(2 * n);
    Matrix cov = kVacuumVariance * Matrix::Identity(2 * n, 2 * n);
    for (int k : live) live_[static_cast<std::size_t>(k)] = false;
    if (res.state) {
      std::vector<int> targets;
      for (int slot : res.slots) targets.push_back(live[static_cast<std::size_t>(slot)]);
      for (int t : targets) live_[static_cast<std::size_t>(t)] = true;
      const auto idx = cvsim::detail::quadrature_indices(targets);
      mean(idx) = res.state->mean();
      cov(idx, idx) = res.state->cov();
    }
    state_ = GaussianState(mean, cov);
  }

  const CircuitProgram& p_;
  Rng rng_;
  RunReport& rep_;
  std::vector<bool> live_;
  std::optional<GaussianState> state_;
  std::map<std::string, double> values_;
  int line_ = 0;
};

class FockRunner {
 public:
  FockRunner(const CircuitProgram& p, std::uint64_t seed, RunReport& rep)
      : p_(p), rng_(seed), rep_(rep), cutoff_(p.cutoff.value_or(fock::kDefaultCutoff)) {
    for (std::size_t k = 0; k < p.modes.size(); ++k) index_.push_back(static_cast<int>(k));
    if (!p.modes.empty()) state_ = fock::vacuum(static_cast<int>(p.modes.size()), cutoff_);
  }

  void run() {
    for (const auto& ins : p_.body) {
      line_ = ins.pos.line;
      std::visit([&](const auto& op) { exec(op); }, ins.op);
    }
  }

 private:
  int mode(const std::string& id) const {
    const int k = index_[index_of(p_.modes, id)];
    if (k < 0) throw std::invalid_argument("line " + std::to_string(line_) + ": mode " + id + " consumed");
    return k;
  }
  fock::FockState& st() { return *state_; }

  void exec(const ModeDecl&) {}
  void exec(const Sq& s) { state_ = fock::squeeze(st(), mode(s.mode), s.quad == Quadrature::X ? s.amount.r() : -s.amount.r()); }
  void exec(const Ps& s) { state_ = fock::phase_shift(st(), mode(s.mode), s.theta); }
  void exec(const Bs& s) { state_ = fock::beam_splitter(st(), mode(s.m1), mode(s.m2), s.t); }
  void exec(const Disp& s) { state_ = fock::displace(st(), mode(s.mode), s.dx, s.dp); }
  void exec(const Loss&) { throw std::logic_error("loss on the fock backend"); }
  void exec(const Hom& h) {
    const int m = mode(h.mode);
    fock::HomodyneResult r = fock::homodyne(st(), m, h.theta, rng_);
    state_ = std::move(r.state);
    for (int& k : index_) {
      if (k == m) {
        k = -1;
      } else if (k > m) {
        --k;
      }
    }
    values_[h.outcome] = r.outcome;
    rep_.outcomes.push_back({h.outcome, r.outcome});
  }
  void exec(const Ff& f) {
    const double v = values_.at(f.outcome);
    state_ = fock::displace(st(), mode(f.mode), f.gx * v, f.gp * v);
  }
  void exec(const Cubic& c) { state_ = fock::apply_cubic(st(), mode(c.mode), c.gamma); }
  void exec(const Cphase& c) { state_ = fock::apply_controlled_phase(st(), mode(c.m1), mode(c.m2)); }
  void exec(const Report& r) {
    ReportEntry e;
    e.line = line_;
    if (std::holds_alternative<ReportCov>(r.what)) {
      e.kind = "cov";
      for (std::size_t k = 0; k < p_.modes.size(); ++k)
        if (index_[k] >= 0) e.modes.push_back(p_.modes[k]);
      if (state_) {
        const fock::Moments m = fock::covariance_of(st());
        e.mean = m.mean;
        e.cov = m.cov;
      }
    } else if (const auto* f = std::get_if<ReportForm>(&r.what)) {
      e.kind = "form";
      const int live = state_ ? st().n_modes() : 0;
      Vector c = Vector::Zero(2 * live);
      for (std::size_t k = 0; k < p_.modes.size(); ++k) {
        const double cx = f->coeffs[2 * k], cp = f->coeffs[2 * k + 1];
        if (cx == 0.0 && cp == 0.0) continue;
        const int m = mode(p_.modes[k]);
        c(2 * m) = cx;
        c(2 * m + 1) = cp;
      }
      const fock::Moments m = fock::covariance_of(st());
      e.value = c.dot(m.cov * c);
      e.mean_value = c.dot(m.mean);
      e.vacuum_value = kVacuumVariance * c.squaredNorm();
    } else {
      const auto& fid = std::get<ReportFidelity>(r.what);
      e.kind = "fidelity";
      e.modes = {fid.mode};
      const fock::CMatrix rho = fock::reduced_density(st(), mode(fid.mode));
      const fock::FockState target = fock::coherent({fid.x / std::numbers::sqrt2, fid.p / std::numbers::sqrt2}, cutoff_);
      e.value = std::real(target.amps().dot(rho * target.amps()));
    }
    rep_.reports.push_back(std::move(e));
  }
  void exec(const NetworkBlock&) { throw std::logic_error("network on the fock backend"); }
  void exec(const ScheduleBlock&) { throw std::logic_error("schedule on the fock backend"); }

  const CircuitProgram& p_;
  Rng rng_;
  RunReport& rep_;
  int cutoff_;
  std::vector<int> index_;  // current position of each declared mode, -1 once measured
  std::optional<fock::FockState> state_;
  std::map<std::string, double> values_;
  int line_ = 0;
};

}  // namespace detail

/// Validates, then executes. Homodyne outcomes are drawn from one generator seeded with `seed`.
inline RunReport run(const CircuitProgram& program, Backend backend, std::uint64_t seed) {
  if (auto diags = validate(program, backend); !diags.empty()) throw ValidationError(std::move(diags));
  RunReport rep;
  rep.backend = backend;
  rep.seed = seed;
  const auto t0 = std::chrono::steady_clock::now();
  if (backend == Backend::Gaussian) {
    detail::GaussianRunner(program, seed, rep).run();
  } else {
    detail::FockRunner(program, seed, rep).run();
  }
  rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

}  // namespace cvsim::dsl
