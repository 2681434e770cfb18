#include "mwpforge/expr.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <unordered_set>

namespace mwpforge::expr {

namespace {

bool is_op_char(char c) { return c == '+' || c == '-' || c == '*' || c == '/'; }

int precedence(char op) { return (op == '+' || op == '-') ? 1 : 2; }

// Expands a possible exponent form from std::to_chars into plain decimal
// notation so that number literals always re-parse.
std::string expand_scientific(const std::string& s) {
  auto e = s.find_first_of("eE");
  if (e == std::string::npos) return s;
  std::string mantissa = s.substr(0, e);
  int exp = std::atoi(s.c_str() + e + 1);
  std::string digits;
  int point = -1;
  for (char c : mantissa) {
    if (c == '.') {
      point = static_cast<int>(digits.size());
    } else {
      digits.push_back(c);
    }
  }
  if (point < 0) point = static_cast<int>(digits.size());
  point += exp;
  std::string out;
  if (point <= 0) {
    out = "0." + std::string(-point, '0') + digits;
  } else if (point >= static_cast<int>(digits.size())) {
    out = digits + std::string(point - digits.size(), '0');
  } else {
    out = digits.substr(0, point) + "." + digits.substr(point);
  }
  return out;
}

}  // namespace

std::string normalize_literal(const std::string& text) {
  std::size_t i = 0;
  std::string intpart, fracpart;
  while (i < text.size() && std::isdigit(static_cast<unsigned char>(text[i]))) {
    intpart.push_back(text[i++]);
  }
  if (i < text.size() && text[i] == '.') {
    ++i;
    while (i < text.size() && std::isdigit(static_cast<unsigned char>(text[i]))) {
      fracpart.push_back(text[i++]);
    }
    if (fracpart.empty()) {
      throw SyntaxError("digit expected after decimal point in '" + text + "'");
    }
  }
  if (i != text.size() || (intpart.empty() && fracpart.empty())) {
    throw SyntaxError("not a decimal literal: '" + text + "'");
  }
  std::size_t lead = 0;
  while (lead + 1 < intpart.size() && intpart[lead] == '0') ++lead;
  intpart = intpart.empty() ? "0" : intpart.substr(lead);
  while (!fracpart.empty() && fracpart.back() == '0') fracpart.pop_back();
  return fracpart.empty() ? intpart : intpart + "." + fracpart;
}

NodePtr make_number(const std::string& literal) {
  auto node = std::make_shared<ExprNode>();
  node->kind = ExprNode::Kind::Number;
  node->literal = normalize_literal(literal);
  node->value = std::strtod(node->literal.c_str(), nullptr);
  return node;
}

NodePtr make_number(double value) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), value);
  return make_number(expand_scientific(std::string(buf, res.ptr)));
}

NodePtr make_operator(char op, NodePtr left, NodePtr right) {
  if (!is_op_char(op)) throw SyntaxError(std::string("unknown operator '") + op + "'");
  auto node = std::make_shared<ExprNode>();
  node->kind = ExprNode::Kind::Operator;
  node->op = op;
  node->left = std::move(left);
  node->right = std::move(right);
  return node;
}

namespace {

class Parser {
public:
  explicit Parser(const std::string& text) : text_(text) {}

  NodePtr parse() {
    skip_ws();
    if (pos_ >= text_.size()) throw SyntaxError("empty equation");
    // Optional "x =" head.
    if (text_[pos_] == 'x' || text_[pos_] == 'X') {
      std::size_t save = pos_;
      ++pos_;
      skip_ws();
      if (pos_ < text_.size() && text_[pos_] == '=') {
        ++pos_;
      } else {
        pos_ = save;
        throw SyntaxError("expected '=' after 'x'");
      }
    }
    NodePtr root = parse_expr();
    skip_ws();
    if (pos_ != text_.size()) {
      throw SyntaxError("trailing input at position " + std::to_string(pos_));
    }
    return root;
  }

private:
  void skip_ws() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }

  NodePtr parse_expr() {
    NodePtr node = parse_term();
    for (;;) {
      skip_ws();
      if (pos_ < text_.size() && (text_[pos_] == '+' || text_[pos_] == '-')) {
        char op = text_[pos_++];
        node = make_operator(op, node, parse_term());
      } else {
        return node;
      }
    }
  }

  NodePtr parse_term() {
    NodePtr node = parse_factor();
    for (;;) {
      skip_ws();
      if (pos_ < text_.size() && (text_[pos_] == '*' || text_[pos_] == '/')) {
        char op = text_[pos_++];
        node = make_operator(op, node, parse_factor());
      } else {
        return node;
      }
    }
  }

  NodePtr parse_factor() {
    skip_ws();
    if (pos_ >= text_.size()) throw SyntaxError("dangling operator at end of input");
    char c = text_[pos_];
    if (c == '(') {
      ++pos_;
      NodePtr inner = parse_expr();
      skip_ws();
      if (pos_ >= text_.size() || text_[pos_] != ')') {
        throw SyntaxError("unbalanced parentheses");
      }
      ++pos_;
      return inner;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
      std::size_t start = pos_;
      while (pos_ < text_.size() &&
             (std::isdigit(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '.')) {
        ++pos_;
      }
      return make_number(text_.substr(start, pos_ - start));
    }
    throw SyntaxError(std::string("unexpected character '") + c + "' at position " +
                      std::to_string(pos_));
  }

  const std::string& text_;
  std::size_t pos_ = 0;
};

void render(const NodePtr& node, std::string& out) {
  if (node->is_number()) {
    out += node->literal;
    return;
  }
  int prec = precedence(node->op);
  bool lparen = node->left->is_operator() && precedence(node->left->op) < prec;
  // Right side also needs parens at equal precedence to keep left associativity.
  bool rparen = node->right->is_operator() && precedence(node->right->op) <= prec;
  if (lparen) out += '(';
  render(node->left, out);
  if (lparen) out += ')';
  out += node->op;
  if (rparen) out += '(';
  render(node->right, out);
  if (rparen) out += ')';
}

void pre_order(const NodePtr& node, std::vector<std::string>& out) {
  if (node->is_number()) {
    out.push_back(node->literal);
    return;
  }
  out.emplace_back(1, node->op);
  pre_order(node->left, out);
  pre_order(node->right, out);
}

}  // namespace

Equation make_equation(NodePtr rhs) {
  Equation eq;
  eq.rhs = std::move(rhs);
  eq.source_text = "x = " + render_infix(eq.rhs);
  return eq;
}

Equation parse_infix(const std::string& text) {
  return make_equation(Parser(text).parse());
}

std::string render_infix(const NodePtr& node) {
  std::string out;
  render(node, out);
  return out;
}

std::vector<std::string> to_pre_order(const Equation& eq) { return to_pre_order(eq.rhs); }

std::vector<std::string> to_pre_order(const NodePtr& node) {
  std::vector<std::string> out;
  pre_order(node, out);
  return out;
}

NodePtr from_pre_order(const std::vector<std::string>& labels) {
  std::size_t pos = 0;
  std::function<NodePtr()> build = [&]() -> NodePtr {
    if (pos >= labels.size()) throw SyntaxError("pre-order sequence truncated");
    const std::string& label = labels[pos++];
    if (label.size() == 1 && is_op_char(label[0])) {
      NodePtr left = build();
      NodePtr right = build();
      return make_operator(label[0], std::move(left), std::move(right));
    }
    return make_number(label);
  };
  NodePtr root = build();
  if (pos != labels.size()) throw SyntaxError("pre-order sequence has trailing labels");
  return root;
}

double evaluate(const Equation& eq) { return evaluate(eq.rhs); }

double evaluate(const NodePtr& node) {
  if (node->is_number()) return node->value;
  double l = evaluate(node->left);
  double r = evaluate(node->right);
  switch (node->op) {
    case '+': return l + r;
    case '-': return l - r;
    case '*': return l * r;
    default:
      if (std::abs(r) <= 1e-12) {
        throw DivisionByZero("zero divisor evaluating '" + render_infix(node) + "'");
      }
      return l / r;
  }
}

std::vector<Equation> sub_equations(const Equation& eq) {
  std::vector<Equation> out;
  std::unordered_set<std::string> seen;
  std::function<void(const NodePtr&, bool)> walk = [&](const NodePtr& node, bool is_root) {
    if (node->is_number()) return;
    if (!is_root) {
      std::string key = canonical_key(node);
      if (seen.insert(key).second) out.push_back(make_equation(node));
    }
    walk(node->left, false);
    walk(node->right, false);
  };
  walk(eq.rhs, true);
  return out;
}

std::string canonical_key(const Equation& eq) { return canonical_key(eq.rhs); }

std::string canonical_key(const NodePtr& node) {
  std::string key;
  for (const auto& label : to_pre_order(node)) {
    if (!key.empty()) key += '|';
    key += label;
  }
  return key;
}

bool tree_equal(const NodePtr& a, const NodePtr& b) {
  if (a->kind != b->kind) return false;
  if (a->is_number()) return a->literal == b->literal;
  return a->op == b->op && tree_equal(a->left, b->left) && tree_equal(a->right, b->right);
}

std::size_t count_operator_nodes(const NodePtr& node) {
  if (node->is_number()) return 0;
  return 1 + count_operator_nodes(node->left) + count_operator_nodes(node->right);
}

}  // namespace mwpforge::expr
