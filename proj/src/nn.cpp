#include "mwpforge/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

namespace mwpforge::nn {

void init_uniform(Param& p, std::mt19937_64& rng, double scale) {
  std::uniform_real_distribution<double> dist(-scale, scale);
  for (auto& x : p.value.data) x = dist(rng);
  p.zero_grad();
}

Tensor2 matmul(const Tensor2& a, const Tensor2& b) {
  if (a.cols != b.rows)
    throw ShapeMismatch("matmul: " + std::to_string(a.rows) + "x" + std::to_string(a.cols) +
                        " * " + std::to_string(b.rows) + "x" + std::to_string(b.cols));
  Tensor2 out(a.rows, b.cols);
  for (int i = 0; i < a.rows; ++i)
    for (int k = 0; k < a.cols; ++k) {
      double aik = a.at(i, k);
      if (aik == 0.0) continue;
      const double* brow = &b.data[static_cast<std::size_t>(k) * b.cols];
      double* orow = &out.data[static_cast<std::size_t>(i) * out.cols];
      for (int j = 0; j < b.cols; ++j) orow[j] += aik * brow[j];
    }
  return out;
}

Tensor2 softmax_row(const Tensor2& a) {
  Tensor2 out(a.rows, a.cols);
  for (int i = 0; i < a.rows; ++i) {
    double mx = -1e300;
    for (int j = 0; j < a.cols; ++j) mx = std::max(mx, a.at(i, j));
    double sum = 0.0;
    for (int j = 0; j < a.cols; ++j) {
      double e = std::exp(a.at(i, j) - mx);
      out.at(i, j) = e;
      sum += e;
    }
    for (int j = 0; j < a.cols; ++j) out.at(i, j) /= sum;
  }
  return out;
}

void Tape::check_finite(const Tensor2& t, const char* op_name) const {
  for (double x : t.data)
    if (!std::isfinite(x)) throw NonFiniteValue(std::string("non-finite value in ") + op_name);
}

Tape::Var Tape::push(Node node) {
  node.grad = Tensor2(node.val.rows, node.val.cols);
  nodes_.push_back(std::move(node));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Tape::Var Tape::input(Tensor2 v) {
  check_finite(v, "input");
  Node n;
  n.op = Op::Input;
  n.val = std::move(v);
  return push(std::move(n));
}

Tape::Var Tape::param(Param& p) {
  check_finite(p.value, "param");
  Node n;
  n.op = Op::ParamLeaf;
  n.val = p.value;
  n.bound = &p;
  return push(std::move(n));
}

Tape::Var Tape::zeros(int rows, int cols) { return input(Tensor2(rows, cols)); }

Tape::Var Tape::matmul(Var a, Var b) {
  Node n;
  n.op = Op::MatMul;
  n.a = a.id;
  n.b = b.id;
  n.val = nn::matmul(val(a.id), val(b.id));
  check_finite(n.val, "matmul");
  return push(std::move(n));
}

static void require_same_shape(const Tensor2& a, const Tensor2& b, const char* op_name) {
  if (!a.same_shape(b))
    throw ShapeMismatch(std::string(op_name) + ": " + std::to_string(a.rows) + "x" +
                        std::to_string(a.cols) + " vs " + std::to_string(b.rows) + "x" +
                        std::to_string(b.cols));
}

Tape::Var Tape::add(Var a, Var b) {
  require_same_shape(val(a.id), val(b.id), "add");
  Node n;
  n.op = Op::Add;
  n.a = a.id;
  n.b = b.id;
  n.val = val(a.id);
  for (std::size_t i = 0; i < n.val.size(); ++i) n.val.data[i] += val(b.id).data[i];
  check_finite(n.val, "add");
  return push(std::move(n));
}

Tape::Var Tape::sub(Var a, Var b) {
  require_same_shape(val(a.id), val(b.id), "sub");
  Node n;
  n.op = Op::Sub;
  n.a = a.id;
  n.b = b.id;
  n.val = val(a.id);
  for (std::size_t i = 0; i < n.val.size(); ++i) n.val.data[i] -= val(b.id).data[i];
  check_finite(n.val, "sub");
  return push(std::move(n));
}

Tape::Var Tape::mul(Var a, Var b) {
  require_same_shape(val(a.id), val(b.id), "mul");
  Node n;
  n.op = Op::Mul;
  n.a = a.id;
  n.b = b.id;
  n.val = val(a.id);
  for (std::size_t i = 0; i < n.val.size(); ++i) n.val.data[i] *= val(b.id).data[i];
  check_finite(n.val, "mul");
  return push(std::move(n));
}

Tape::Var Tape::scale(Var a, double factor) {
  Node n;
  n.op = Op::Scale;
  n.a = a.id;
  n.factor = factor;
  n.val = val(a.id);
  for (auto& x : n.val.data) x *= factor;
  check_finite(n.val, "scale");
  return push(std::move(n));
}

Tape::Var Tape::sigmoid(Var a) {
  Node n;
  n.op = Op::Sigmoid;
  n.a = a.id;
  n.val = val(a.id);
  for (auto& x : n.val.data) x = 1.0 / (1.0 + std::exp(-x));
  check_finite(n.val, "sigmoid");
  return push(std::move(n));
}

Tape::Var Tape::tanh(Var a) {
  Node n;
  n.op = Op::Tanh;
  n.a = a.id;
  n.val = val(a.id);
  for (auto& x : n.val.data) x = std::tanh(x);
  check_finite(n.val, "tanh");
  return push(std::move(n));
}

Tape::Var Tape::softmax_row(Var a) {
  Node n;
  n.op = Op::SoftmaxRow;
  n.a = a.id;
  n.val = nn::softmax_row(val(a.id));
  check_finite(n.val, "softmax_row");
  return push(std::move(n));
}

Tape::Var Tape::transpose(Var a) {
  const Tensor2& src = val(a.id);
  Node n;
  n.op = Op::Transpose;
  n.a = a.id;
  n.val = Tensor2(src.cols, src.rows);
  for (int i = 0; i < src.rows; ++i)
    for (int j = 0; j < src.cols; ++j) n.val.at(j, i) = src.at(i, j);
  return push(std::move(n));
}

Tape::Var Tape::concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeMismatch("concat_rows: empty part list");
  int cols = val(parts[0].id).cols;
  int rows = 0;
  for (Var p : parts) {
    if (val(p.id).cols != cols) throw ShapeMismatch("concat_rows: column mismatch");
    rows += val(p.id).rows;
  }
  Node n;
  n.op = Op::ConcatRows;
  n.val = Tensor2(rows, cols);
  int r = 0;
  for (Var p : parts) {
    const Tensor2& src = val(p.id);
    std::copy(src.data.begin(), src.data.end(),
              n.val.data.begin() + static_cast<std::size_t>(r) * cols);
    r += src.rows;
    n.srcs.push_back(p.id);
  }
  return push(std::move(n));
}

Tape::Var Tape::concat_cols(Var a, Var b) {
  const Tensor2& ta = val(a.id);
  const Tensor2& tb = val(b.id);
  if (ta.rows != tb.rows) throw ShapeMismatch("concat_cols: row mismatch");
  Node n;
  n.op = Op::ConcatCols;
  n.a = a.id;
  n.b = b.id;
  n.val = Tensor2(ta.rows, ta.cols + tb.cols);
  for (int i = 0; i < ta.rows; ++i) {
    for (int j = 0; j < ta.cols; ++j) n.val.at(i, j) = ta.at(i, j);
    for (int j = 0; j < tb.cols; ++j) n.val.at(i, ta.cols + j) = tb.at(i, j);
  }
  return push(std::move(n));
}

Tape::Var Tape::slice_row(Var a, int row) {
  const Tensor2& src = val(a.id);
  if (row < 0 || row >= src.rows)
    throw ShapeMismatch("slice_row: row " + std::to_string(row) + " of " +
                        std::to_string(src.rows));
  Node n;
  n.op = Op::SliceRow;
  n.a = a.id;
  n.aux = row;
  n.val = Tensor2(1, src.cols);
  for (int j = 0; j < src.cols; ++j) n.val.at(0, j) = src.at(row, j);
  return push(std::move(n));
}

Tape::Var Tape::embedding_lookup(Var table, int row) { return slice_row(table, row); }

Tape::Var Tape::cross_entropy(Var logits, int target) {
  const Tensor2& lg = val(logits.id);
  if (lg.rows != 1) throw ShapeMismatch("cross_entropy: logits must have one row");
  if (target < 0 || target >= lg.cols)
    throw ShapeMismatch("cross_entropy: target " + std::to_string(target) + " of " +
                        std::to_string(lg.cols));
  // loss = log(sum exp(l)) - l[target], computed stably
  double mx = -1e300;
  for (int j = 0; j < lg.cols; ++j) mx = std::max(mx, lg.at(0, j));
  double sum = 0.0;
  for (int j = 0; j < lg.cols; ++j) sum += std::exp(lg.at(0, j) - mx);
  Node n;
  n.op = Op::CrossEntropy;
  n.a = logits.id;
  n.aux = target;
  n.val = Tensor2(1, 1);
  n.val.at(0, 0) = mx + std::log(sum) - lg.at(0, target);
  check_finite(n.val, "cross_entropy");
  return push(std::move(n));
}

const Tensor2& Tape::value(Var v) const { return nodes_[v.id].val; }

double Tape::scalar(Var v) const {
  const Tensor2& t = nodes_[v.id].val;
  if (t.rows != 1 || t.cols != 1) throw ShapeMismatch("scalar: var is not 1x1");
  return t.at(0, 0);
}

void Tape::clear() { nodes_.clear(); }

void Tape::backward(Var root) {
  Node& r = nodes_[root.id];
  if (r.val.rows != 1 || r.val.cols != 1) throw ShapeMismatch("backward: root is not 1x1");
  for (auto& n : nodes_) n.grad.fill(0.0);
  r.grad.at(0, 0) = 1.0;

  for (int id = root.id; id >= 0; --id) {
    Node& n = nodes_[id];
    bool any = false;
    for (double g : n.grad.data)
      if (g != 0.0) { any = true; break; }
    if (!any) continue;
    switch (n.op) {
      case Op::Input:
        break;
      case Op::ParamLeaf:
        for (std::size_t i = 0; i < n.grad.size(); ++i) n.bound->grad.data[i] += n.grad.data[i];
        break;
      case Op::MatMul: {
        // dA += dC * B^T ; dB += A^T * dC
        const Tensor2& A = nodes_[n.a].val;
        const Tensor2& B = nodes_[n.b].val;
        Tensor2& dA = nodes_[n.a].grad;
        Tensor2& dB = nodes_[n.b].grad;
        const Tensor2& dC = n.grad;
        for (int i = 0; i < A.rows; ++i)
          for (int k = 0; k < A.cols; ++k) {
            double s = 0.0;
            for (int j = 0; j < B.cols; ++j) s += dC.at(i, j) * B.at(k, j);
            dA.at(i, k) += s;
          }
        for (int k = 0; k < B.rows; ++k)
          for (int j = 0; j < B.cols; ++j) {
            double s = 0.0;
            for (int i = 0; i < A.rows; ++i) s += A.at(i, k) * dC.at(i, j);
            dB.at(k, j) += s;
          }
        break;
      }
      case Op::Add:
        for (std::size_t i = 0; i < n.grad.size(); ++i) {
          nodes_[n.a].grad.data[i] += n.grad.data[i];
          nodes_[n.b].grad.data[i] += n.grad.data[i];
        }
        break;
      case Op::Sub:
        for (std::size_t i = 0; i < n.grad.size(); ++i) {
          nodes_[n.a].grad.data[i] += n.grad.data[i];
          nodes_[n.b].grad.data[i] -= n.grad.data[i];
        }
        break;
      case Op::Mul:
        for (std::size_t i = 0; i < n.grad.size(); ++i) {
          nodes_[n.a].grad.data[i] += n.grad.data[i] * nodes_[n.b].val.data[i];
          nodes_[n.b].grad.data[i] += n.grad.data[i] * nodes_[n.a].val.data[i];
        }
        break;
      case Op::Scale:
        for (std::size_t i = 0; i < n.grad.size(); ++i)
          nodes_[n.a].grad.data[i] += n.grad.data[i] * n.factor;
        break;
      case Op::Sigmoid:
        for (std::size_t i = 0; i < n.grad.size(); ++i) {
          double y = n.val.data[i];
          nodes_[n.a].grad.data[i] += n.grad.data[i] * y * (1.0 - y);
        }
        break;
      case Op::Tanh:
        for (std::size_t i = 0; i < n.grad.size(); ++i) {
          double y = n.val.data[i];
          nodes_[n.a].grad.data[i] += n.grad.data[i] * (1.0 - y * y);
        }
        break;
      case Op::SoftmaxRow: {
        // dx_j = y_j * (dy_j - sum_k dy_k y_k), per row
        Tensor2& dx = nodes_[n.a].grad;
        for (int i = 0; i < n.val.rows; ++i) {
          double dot = 0.0;
          for (int j = 0; j < n.val.cols; ++j) dot += n.grad.at(i, j) * n.val.at(i, j);
          for (int j = 0; j < n.val.cols; ++j)
            dx.at(i, j) += n.val.at(i, j) * (n.grad.at(i, j) - dot);
        }
        break;
      }
      case Op::Transpose: {
        Tensor2& dx = nodes_[n.a].grad;
        for (int i = 0; i < n.val.rows; ++i)
          for (int j = 0; j < n.val.cols; ++j) dx.at(j, i) += n.grad.at(i, j);
        break;
      }
      case Op::ConcatRows: {
        int r = 0;
        for (int src : n.srcs) {
          Tensor2& dx = nodes_[src].grad;
          for (int i = 0; i < dx.rows; ++i)
            for (int j = 0; j < dx.cols; ++j) dx.at(i, j) += n.grad.at(r + i, j);
          r += dx.rows;
        }
        break;
      }
      case Op::ConcatCols: {
        Tensor2& da = nodes_[n.a].grad;
        Tensor2& db = nodes_[n.b].grad;
        for (int i = 0; i < n.val.rows; ++i) {
          for (int j = 0; j < da.cols; ++j) da.at(i, j) += n.grad.at(i, j);
          for (int j = 0; j < db.cols; ++j) db.at(i, j) += n.grad.at(i, da.cols + j);
        }
        break;
      }
      case Op::SliceRow: {
        Tensor2& dx = nodes_[n.a].grad;
        for (int j = 0; j < n.val.cols; ++j) dx.at(n.aux, j) += n.grad.at(0, j);
        break;
      }
      case Op::CrossEntropy: {
        // d logits = softmax(logits) - onehot(target), scaled by upstream
        const Tensor2& lg = nodes_[n.a].val;
        Tensor2 sm = nn::softmax_row(lg);
        double g = n.grad.at(0, 0);
        Tensor2& dx = nodes_[n.a].grad;
        for (int j = 0; j < lg.cols; ++j)
          dx.at(0, j) += g * (sm.at(0, j) - (j == n.aux ? 1.0 : 0.0));
        break;
      }
    }
  }
}

Adam::Adam(std::vector<Param*> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (Param* p : params_) {
    m_.emplace_back(p->value.rows, p->value.cols);
    v_.emplace_back(p->value.rows, p->value.cols);
  }
}

void Adam::step() {
  ++t_;
  double bc1 = 1.0 - std::pow(beta1_, t_);
  double bc2 = 1.0 - std::pow(beta2_, t_);
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Param& p = *params_[k];
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      double g = p.grad.data[i];
      m_[k].data[i] = beta1_ * m_[k].data[i] + (1.0 - beta1_) * g;
      v_[k].data[i] = beta2_ * v_[k].data[i] + (1.0 - beta2_) * g * g;
      double mhat = m_[k].data[i] / bc1;
      double vhat = v_[k].data[i] / bc2;
      p.value.data[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
      if (!std::isfinite(p.value.data[i])) throw NonFiniteValue("non-finite parameter after adam step");
    }
  }
}

void Adam::zero_grads() {
  for (Param* p : params_) p->zero_grad();
}

GradCheckResult grad_check(const std::function<double(bool)>& loss_fn,
                           const std::vector<Param*>& params, double epsilon, int min_coords,
                           std::uint64_t seed) {
  for (Param* p : params) p->zero_grad();
  loss_fn(true);  // leaves analytic grads in params

  struct Coord { Param* p; std::size_t i; double analytic; };
  std::vector<Coord> all;
  for (Param* p : params)
    for (std::size_t i = 0; i < p->value.size(); ++i) all.push_back({p, i, p->grad.data[i]});

  std::vector<Coord> picked;
  if (static_cast<int>(all.size()) <= min_coords) {
    picked = all;
  } else {
    std::mt19937_64 rng(seed);
    std::vector<std::size_t> idx(all.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    for (int k = 0; k < min_coords; ++k) picked.push_back(all[idx[k]]);
  }

  GradCheckResult res;
  for (const Coord& c : picked) {
    double saved = c.p->value.data[c.i];
    c.p->value.data[c.i] = saved + epsilon;
    double lp = loss_fn(false);
    c.p->value.data[c.i] = saved - epsilon;
    double lm = loss_fn(false);
    c.p->value.data[c.i] = saved;
    double numeric = (lp - lm) / (2.0 * epsilon);
    double denom = std::max(std::abs(numeric), std::abs(c.analytic));
    // near-zero coordinates are compared absolutely: the finite-difference
    // noise floor (~1e-10 at eps=1e-5) swamps relative error down there
    double err = denom < 1e-6 ? std::abs(numeric - c.analytic)
                              : std::abs(numeric - c.analytic) / denom;
    res.max_rel_err = std::max(res.max_rel_err, err);
    ++res.coords_checked;
  }
  return res;
}

namespace {

constexpr char kMagic[4] = {'M', 'W', 'P', 'F'};
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw CheckpointError("truncated checkpoint");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void write_f64_array(std::ostream& os, const std::vector<double>& xs) {
  for (double x : xs) {
    std::uint64_t u;
    std::memcpy(&u, &x, 8);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(u >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
  }
}

void read_f64_array(std::istream& is, std::vector<double>& xs) {
  for (double& x : xs) {
    unsigned char b[8];
    if (!is.read(reinterpret_cast<char*>(b), 8)) throw CheckpointError("truncated checkpoint");
    std::uint64_t u = 0;
    for (int i = 0; i < 8; ++i) u |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    std::memcpy(&x, &u, 8);
  }
}

}  // namespace

void save_checkpoint(const std::string& path, const std::vector<const Param*>& params) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write checkpoint: " + path);
  os.write(kMagic, 4);
  write_u32(os, kVersion);
  write_u32(os, static_cast<std::uint32_t>(params.size()));
  for (const Param* p : params) {
    write_u32(os, static_cast<std::uint32_t>(p->name.size()));
    os.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
    write_u32(os, static_cast<std::uint32_t>(p->value.rows));
    write_u32(os, static_cast<std::uint32_t>(p->value.cols));
    write_f64_array(os, p->value.data);
  }
  if (!os) throw IoError("write failed: " + path);
}

std::vector<std::pair<std::string, Tensor2>> read_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read checkpoint: " + path);
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
    throw CheckpointError("bad checkpoint magic in " + path);
  std::uint32_t version = read_u32(is);
  if (version != kVersion)
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  std::uint32_t count = read_u32(is);
  std::vector<std::pair<std::string, Tensor2>> out;
  out.reserve(count);
  for (std::uint32_t k = 0; k < count; ++k) {
    std::uint32_t name_len = read_u32(is);
    std::string name(name_len, '\0');
    if (!is.read(name.data(), name_len)) throw CheckpointError("truncated checkpoint");
    std::uint32_t rows = read_u32(is);
    std::uint32_t cols = read_u32(is);
    Tensor2 t(static_cast<int>(rows), static_cast<int>(cols));
    read_f64_array(is, t.data);
    out.emplace_back(std::move(name), std::move(t));
  }
  return out;
}

void load_checkpoint(const std::string& path, const std::vector<Param*>& params) {
  auto entries = read_checkpoint(path);
  for (Param* p : params) {
    auto it = std::find_if(entries.begin(), entries.end(),
                           [&](const auto& e) { return e.first == p->name; });
    if (it == entries.end()) throw CheckpointError("checkpoint missing tensor: " + p->name);
    if (it->second.rows != p->value.rows || it->second.cols != p->value.cols)
      throw CheckpointError("checkpoint shape mismatch for " + p->name);
    p->value = it->second;
    p->zero_grad();
  }
}

}  // namespace mwpforge::nn
