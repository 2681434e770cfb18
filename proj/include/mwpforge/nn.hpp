#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "mwpforge/errors.hpp"

namespace mwpforge::nn {

// Row-major dense double matrix. Everything in this kernel is double
// precision; any op that produces a NaN or Inf throws NonFiniteValue.
struct Tensor2 {
  int rows = 0, cols = 0;
  std::vector<double> data;

  Tensor2() = default;
  Tensor2(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, 0.0) {}

  double& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  double at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }
  std::size_t size() const { return data.size(); }
  bool same_shape(const Tensor2& o) const { return rows == o.rows && cols == o.cols; }
  void fill(double v) { std::fill(data.begin(), data.end(), v); }
};

struct Param {
  std::string name;
  Tensor2 value;
  Tensor2 grad;  // same shape as value

  Param() = default;
  Param(std::string n, int rows, int cols)
      : name(std::move(n)), value(rows, cols), grad(rows, cols) {}
  void zero_grad() { grad.fill(0.0); }
};

// Seeded uniform(-0.08, 0.08) initialization.
void init_uniform(Param& p, std::mt19937_64& rng, double scale = 0.08);

// Reverse-mode tape. Forward calls record nodes; backward(root) sweeps the
// tape in reverse and accumulates into the grad of every bound Param.
// A tape instance is confined to one thread; call clear() to reuse it.
class Tape {
public:
  struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
  };

  Var input(Tensor2 v);   // constant leaf, no gradient
  Var param(Param& p);    // leaf bound to a Param; backward fills p.grad
  Var zeros(int rows, int cols);

  Var matmul(Var a, Var b);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);  // elementwise
  Var scale(Var a, double factor);
  Var sigmoid(Var a);
  Var tanh(Var a);
  Var softmax_row(Var a);
  Var transpose(Var a);
  Var concat_rows(const std::vector<Var>& parts);
  Var concat_cols(Var a, Var b);
  Var slice_row(Var a, int row);
  // Row `row` of an embedding table; backward scatters into that row only.
  Var embedding_lookup(Var table, int row);
  // Scalar loss: -log softmax(logits)[target]; logits must be 1 x V.
  Var cross_entropy(Var logits, int target);

  const Tensor2& value(Var v) const;
  double scalar(Var v) const;  // value of a 1x1 var
  void backward(Var root);     // root must be 1x1
  void clear();
  std::size_t node_count() const { return nodes_.size(); }

private:
  enum class Op : std::uint8_t {
    Input, ParamLeaf, MatMul, Add, Sub, Mul, Scale, Sigmoid, Tanh,
    SoftmaxRow, Transpose, ConcatRows, ConcatCols, SliceRow, CrossEntropy,
  };

  struct Node {
    Op op;
    Tensor2 val;
    Tensor2 grad;
    int a = -1, b = -1;
    int aux = 0;          // row index / target index
    double factor = 1.0;  // Scale
    std::vector<int> srcs;
    Param* bound = nullptr;
  };

  Var push(Node node);
  void check_finite(const Tensor2& t, const char* op_name) const;
  const Tensor2& val(int id) const { return nodes_[id].val; }

  std::vector<Node> nodes_;
};

Tensor2 matmul(const Tensor2& a, const Tensor2& b);
Tensor2 softmax_row(const Tensor2& a);

class Adam {
public:
  explicit Adam(std::vector<Param*> params, double lr = 1e-3, double beta1 = 0.9,
                double beta2 = 0.999, double eps = 1e-8);
  void step();
  void zero_grads();
  double lr() const { return lr_; }

private:
  std::vector<Param*> params_;
  std::vector<Tensor2> m_, v_;
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
};

// Central-difference gradient check. `loss_fn(with_grad)` must rebuild the
// computation from current param values, returning the loss; when with_grad
// it must also leave gradients in the params. Checks a sampled subset of at
// least min_coords coordinates (all of them when fewer exist).
struct GradCheckResult {
  double max_rel_err = 0.0;
  int coords_checked = 0;
};

GradCheckResult grad_check(const std::function<double(bool with_grad)>& loss_fn,
                           const std::vector<Param*>& params, double epsilon = 1e-5,
                           int min_coords = 50, std::uint64_t seed = 2024);

// Checkpoint: versioned file of name -> shape + little-endian f64 payload.
void save_checkpoint(const std::string& path, const std::vector<const Param*>& params);
void load_checkpoint(const std::string& path, const std::vector<Param*>& params);
std::vector<std::pair<std::string, Tensor2>> read_checkpoint(const std::string& path);

}  // namespace mwpforge::nn
