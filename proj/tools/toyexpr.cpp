// toyexpr: evaluates a one-line integer expression over a and b read from stdin.
//   toyexpr FILE          read "a b" from stdin, print the value
//   toyexpr --check FILE  parse only; exit 0 when well formed
// Grammar: expr := term (('+'|'-') term)*, term := unary (('*'|'/'|'%') unary)*,
// unary := '-' unary | atom, atom := int | a | b | '(' expr ')' | f '(' expr ',' expr ')' | abs '(' expr ')'.
#include <cctype>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>
#include <string>

namespace {

struct SyntaxError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DivideByZero : std::runtime_error {
  using std::runtime_error::runtime_error;
};

class Parser {
 public:
  Parser(std::string src, std::int64_t a, std::int64_t b, bool eval) : s_(std::move(src)), a_(a), b_(b), eval_(eval) {}

  std::int64_t parse() {
    const std::int64_t v = expr();
    skip();
    if (i_ != s_.size()) throw SyntaxError("unexpected '" + std::string(1, s_[i_]) + "'");
    return v;
  }

 private:
  void skip() {
    while (i_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[i_]))) ++i_;
  }
  bool eat(char c) {
    skip();
    if (i_ < s_.size() && s_[i_] == c) {
      ++i_;
      return true;
    }
    return false;
  }
  void expect(char c) {
    if (!eat(c)) throw SyntaxError(std::string("expected '") + c + "'");
  }

  std::int64_t expr() {
    std::int64_t v = term();
    while (true) {
      if (eat('+')) {
        v += term();
      } else if (eat('-')) {
        v -= term();
      } else {
        return v;
      }
    }
  }

  std::int64_t term() {
    std::int64_t v = unary();
    while (true) {
      if (eat('*')) {
        v *= unary();
      } else if (eat('/') || eat('%')) {
        const bool mod = s_[i_ - 1] == '%';
        const std::int64_t d = unary();
        if (!eval_) continue;
        if (d == 0) throw DivideByZero("division by zero");
        v = mod ? v % d : v / d;
      } else {
        return v;
      }
    }
  }

  std::int64_t unary() {
    if (eat('-')) return -unary();
    return atom();
  }

  std::int64_t atom() {
    skip();
    if (i_ >= s_.size()) throw SyntaxError("unexpected end of expression");
    const char c = s_[i_];
    if (std::isdigit(static_cast<unsigned char>(c))) {
      std::int64_t v = 0;
      while (i_ < s_.size() && std::isdigit(static_cast<unsigned char>(s_[i_]))) v = v * 10 + (s_[i_++] - '0');
      return v;
    }
    if (eat('(')) {
      const std::int64_t v = expr();
      expect(')');
      return v;
    }
    std::string word;
    while (i_ < s_.size() && std::isalpha(static_cast<unsigned char>(s_[i_]))) word += s_[i_++];
    if (word == "a") return a_;
    if (word == "b") return b_;
    if (word == "abs") {
      expect('(');
      const std::int64_t v = expr();
      expect(')');
      return v < 0 ? -v : v;
    }
    if (word == "max" || word == "min") {
      expect('(');
      const std::int64_t x = expr();
      expect(',');
      const std::int64_t y = expr();
      expect(')');
      return word == "max" ? (x > y ? x : y) : (x < y ? x : y);
    }
    throw SyntaxError(word.empty() ? "unexpected '" + std::string(1, c) + "'" : "unknown name '" + word + "'");
  }

  std::string s_;
  std::size_t i_ = 0;
  std::int64_t a_, b_;
  bool eval_;
};

}  // namespace

int main(int argc, char** argv) {
  bool check_only = false;
  std::string path;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--check") {
      check_only = true;
    } else {
      path = arg;
    }
  }
  if (path.empty()) {
    std::cerr << "usage: toyexpr [--check] FILE\n";
    return 64;
  }
  std::ifstream in(path);
  if (!in) {
    std::cerr << "toyexpr: cannot open " << path << "\n";
    return 66;
  }
  std::stringstream buf;
  buf << in.rdbuf();
  std::string src = buf.str();

  try {
    if (check_only) {
      Parser(src, 0, 0, false).parse();
      return 0;
    }
    std::int64_t a = 0, b = 0;
    if (!(std::cin >> a >> b)) {
      std::cerr << "toyexpr: expected two integers on stdin\n";
      return 65;
    }
    std::cout << Parser(src, a, b, true).parse() << "\n";
    return 0;
  } catch (const SyntaxError& e) {
    std::cerr << "toyexpr: syntax error: " << e.what() << "\n";
    return 1;
  } catch (const DivideByZero& e) {
    std::cerr << "toyexpr: " << e.what() << "\n";
    return 2;
  }
}
