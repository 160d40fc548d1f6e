#ifndef QBSVIE_EXPRESSION_HPP
#define QBSVIE_EXPRESSION_HPP

// Small arithmetic expression language for custom positions and generators.
//
//   expr   := term (('+' | '-') term)*
//   term   := unary (('*' | '/') unary)*
//   unary  := '-' unary | power
//   power  := atom ('^' unary)?
//   atom   := number | name | name '(' expr (',' expr)* ')' | '(' expr ')'
//
// Names are bound at compile time to slots of a variable array.

#include <cctype>
#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "qbsvie/errors.hpp"

namespace qbsvie {

class Expression {
 public:
  using Fn = std::function<double(std::span<const double>)>;

  /// Compiles `text` over the variables `names` (slot k = names[k]).
  static Expression compile(const std::string& text, const std::vector<std::string>& names) {
    Parser p{text, names, 0, {}};
    Fn f = p.expr();
    p.skip_ws();
    if (p.pos != text.size()) p.fail("unexpected '" + std::string(1, text[p.pos]) + "'");
    return Expression(text, std::move(f), std::move(p.used));
  }

  double operator()(std::span<const double> vars) const { return fn_(vars); }
  double operator()(std::initializer_list<double> vars) const {
    return fn_(std::span<const double>(vars.begin(), vars.size()));
  }

  const std::string& text() const noexcept { return text_; }
  /// Whether variable slot k appears in the expression.
  bool uses(std::size_t slot) const { return used_.count(slot) > 0; }

 private:
  Expression(std::string text, Fn fn, std::map<std::size_t, bool> used)
      : text_(std::move(text)), fn_(std::move(fn)), used_(std::move(used)) {}

  struct Parser {
    const std::string& s;
    const std::vector<std::string>& names;
    std::size_t pos;
    std::map<std::size_t, bool> used;

    [[noreturn]] void fail(const std::string& msg) const {
      throw ValidationError("expression '" + s + "': " + msg + " at position " + std::to_string(pos));
    }

    void skip_ws() {
      while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
    }

    bool eat(char c) {
      skip_ws();
      if (pos < s.size() && s[pos] == c) {
        ++pos;
        return true;
      }
      return false;
    }

    Fn expr() {
      Fn lhs = term();
      for (;;) {
        if (eat('+')) {
          lhs = [a = lhs, b = term()](std::span<const double> v) { return a(v) + b(v); };
        } else if (eat('-')) {
          lhs = [a = lhs, b = term()](std::span<const double> v) { return a(v) - b(v); };
        } else {
          return lhs;
        }
      }
    }

    Fn term() {
      Fn lhs = unary();
      for (;;) {
        if (eat('*')) {
          lhs = [a = lhs, b = unary()](std::span<const double> v) { return a(v) * b(v); };
        } else if (eat('/')) {
          lhs = [a = lhs, b = unary()](std::span<const double> v) { return a(v) / b(v); };
        } else {
          return lhs;
        }
      }
    }

    Fn unary() {
      if (eat('-')) return [a = unary()](std::span<const double> v) { return -a(v); };
      if (eat('+')) return unary();
      return power();
    }

    Fn power() {
      Fn base = atom();
      if (eat('^')) return [a = base, b = unary()](std::span<const double> v) { return std::pow(a(v), b(v)); };
      return base;
    }

    Fn atom() {
      skip_ws();
      if (pos >= s.size()) fail("unexpected end of input");
      if (eat('(')) {
        Fn e = expr();
        if (!eat(')')) fail("expected ')'");
        return e;
      }
      const char c = s[pos];
      if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
        std::size_t used_chars = 0;
        double value = 0.0;
        try {
          value = std::stod(s.substr(pos), &used_chars);
        } catch (const std::exception&) {
          fail("bad number");
        }
        pos += used_chars;
        return [value](std::span<const double>) { return value; };
      }
      if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
        const std::size_t start = pos;
        while (pos < s.size() && (std::isalnum(static_cast<unsigned char>(s[pos])) || s[pos] == '_')) ++pos;
        const std::string name = s.substr(start, pos - start);
        if (eat('(')) return call(name);
        for (std::size_t k = 0; k < names.size(); ++k) {
          if (names[k] == name) {
            used[k] = true;
            return [k](std::span<const double> v) { return v[k]; };
          }
        }
        if (name == "pi") return [](std::span<const double>) { return 3.14159265358979323846; };
        pos = start;
        fail("unknown variable '" + name + "'");
      }
      fail("unexpected '" + std::string(1, c) + "'");
    }

    Fn call(const std::string& name) {
      std::vector<Fn> args;
      if (!eat(')')) {
        do {
          args.push_back(expr());
        } while (eat(','));
        if (!eat(')')) fail("expected ')' after arguments of " + name);
      }
      static const std::map<std::string, double (*)(double)> unary_fns{
          {"sin", [](double x) { return std::sin(x); }},   {"cos", [](double x) { return std::cos(x); }},
          {"exp", [](double x) { return std::exp(x); }},   {"log", [](double x) { return std::log(x); }},
          {"sqrt", [](double x) { return std::sqrt(x); }}, {"abs", [](double x) { return std::abs(x); }},
          {"tanh", [](double x) { return std::tanh(x); }}, {"ceil", [](double x) { return std::ceil(x); }},
          {"floor", [](double x) { return std::floor(x); }}};
      if (auto it = unary_fns.find(name); it != unary_fns.end()) {
        if (args.size() != 1) fail(name + " takes one argument");
        return [f = it->second, a = args[0]](std::span<const double> v) { return f(a(v)); };
      }
      if (name == "min" || name == "max") {
        if (args.size() < 2) fail(name + " takes at least two arguments");
        const bool is_max = name == "max";
        return [args, is_max](std::span<const double> v) {
          double r = args[0](v);
          for (std::size_t k = 1; k < args.size(); ++k) r = is_max ? std::max(r, args[k](v)) : std::min(r, args[k](v));
          return r;
        };
      }
      fail("unknown function '" + name + "'");
    }
  };

  std::string text_;
  Fn fn_;
  std::map<std::size_t, bool> used_;
};

}  // namespace qbsvie

#endif  // QBSVIE_EXPRESSION_HPP
