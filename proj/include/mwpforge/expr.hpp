#pragma once

#include <memory>
#include <string>
#include <vector>

#include "mwpforge/errors.hpp"

namespace mwpforge::expr {

// Binary expression tree over decimal literals and + - * /.
// Nodes are immutable after construction and shared by value;
// copying an Equation never copies the tree.
struct ExprNode;
using NodePtr = std::shared_ptr<const ExprNode>;

struct ExprNode {
  enum class Kind { Number, Operator };

  Kind kind;
  char op = 0;          // Operator nodes: one of + - * /
  double value = 0.0;   // Number nodes: parsed double
  std::string literal;  // Number nodes: normalized decimal text ("15.5", not "15.50")
  NodePtr left, right;  // Operator nodes only

  bool is_number() const { return kind == Kind::Number; }
  bool is_operator() const { return kind == Kind::Operator; }
};

NodePtr make_number(const std::string& literal);
NodePtr make_number(double value);
NodePtr make_operator(char op, NodePtr left, NodePtr right);

// Normalizes a decimal literal: strips redundant leading/trailing zeros,
// "15.50" -> "15.5", ".5" -> "0.5". Throws SyntaxError on malformed input.
std::string normalize_literal(const std::string& text);

struct Equation {
  NodePtr rhs;
  std::string source_text;  // canonical "x = <infix>" render; re-parses to rhs
};

Equation make_equation(NodePtr rhs);

// Parses "x = expr" or a bare "expr". Decimal literals, + - * /, parentheses,
// standard precedence, left associativity. Throws SyntaxError.
Equation parse_infix(const std::string& text);

// Minimal-parenthesis infix render of the right-hand side (no "x =" prefix).
std::string render_infix(const NodePtr& node);

// Pre-order node labels: operators as "+", numbers as normalized literals.
std::vector<std::string> to_pre_order(const Equation& eq);
std::vector<std::string> to_pre_order(const NodePtr& node);

// Rebuilds a tree from pre-order labels, arity-driven. Throws SyntaxError if
// the sequence is not a valid pre-order serialization.
NodePtr from_pre_order(const std::vector<std::string>& labels);

// Numeric value of the right-hand side in double precision. Throws
// DivisionByZero when any divisor lands within 1e-12 of zero.
double evaluate(const Equation& eq);
double evaluate(const NodePtr& node);

// All operator-rooted proper subtrees (root excluded), deduplicated by
// canonical key, in pre-order encounter order.
std::vector<Equation> sub_equations(const Equation& eq);

// Pre-order labels joined with '|'; equal trees map to equal keys.
std::string canonical_key(const Equation& eq);
std::string canonical_key(const NodePtr& node);

bool tree_equal(const NodePtr& a, const NodePtr& b);

std::size_t count_operator_nodes(const NodePtr& node);

}  // namespace mwpforge::expr
