#include "wstal/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <string>

#include "wstal/errors.hpp"

namespace wstal {

void require_finite(const Matrix& m, std::string_view where) {
  if (!m.allFinite()) {
    throw NumericError("non-finite value produced by " + std::string(where));
  }
}

namespace ad {
namespace {

std::string shape_str(const Matrix& m) {
  std::ostringstream os;
  os << m.rows() << "x" << m.cols();
  return os.str();
}

void require_same_shape(Var a, Var b, std::string_view op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(op) + ": shape mismatch " +
                         shape_str(a.value()) + " vs " + shape_str(b.value()));
  }
}

void require_same_tape(Var a, Var b) {
  if (a.tape() != b.tape()) {
    throw ContractError("operands recorded on different tapes");
  }
}

void require_axis(int axis) {
  if (axis != 0 && axis != 1) {
    throw DimensionError("axis must be 0 or 1, got " + std::to_string(axis));
  }
}

// Unary op helper: value computed by caller, gradient given as a functor of
// (tape, self id, input id).
template <typename Grad>
Var unary(Var a, Matrix value, std::string_view name, Grad grad) {
  Tape& tape = *a.tape();
  const int in = a.id();
  return tape.record(
      std::move(value), {in},
      [in, grad](Tape& t, int self) { grad(t, self, in); }, name);
}

template <typename Grad>
Var binary(Var a, Var b, Matrix value, std::string_view name, Grad grad) {
  require_same_tape(a, b);
  Tape& tape = *a.tape();
  const int ia = a.id();
  const int ib = b.id();
  return tape.record(
      std::move(value), {ia, ib},
      [ia, ib, grad](Tape& t, int self) { grad(t, self, ia, ib); }, name);
}

}  // namespace

// ---- Var / Tape ------------------------------------------------------------

const Matrix& Var::value() const { return tape_->value(id_); }
const Matrix& Var::grad() const { return tape_->grad(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

double Var::scalar() const {
  const Matrix& v = value();
  if (v.size() != 1) {
    throw ContractError("scalar() on a " + shape_str(v) + " value");
  }
  return v(0, 0);
}

Var Tape::constant(Matrix value) {
  require_finite(value, "constant");
  nodes_.push_back(Node{std::move(value), {}, false, {}, {}});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::variable(Matrix value) {
  require_finite(value, "variable");
  nodes_.push_back(Node{std::move(value), {}, true, {}, {}});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::record(Matrix value, std::vector<int> inputs, BackwardFn backward,
                 std::string_view op_name) {
  require_finite(value, op_name);
  bool needs = false;
  for (int in : inputs) needs = needs || nodes_[in].requires_grad;
  Node node{std::move(value), {}, needs, std::move(inputs), {}};
  if (needs) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

const Matrix& Tape::grad(int id) const {
  const Node& n = nodes_[id];
  if (!n.requires_grad || !backward_done_) {
    throw ContractError("gradient requested for a node without one");
  }
  return n.grad;
}

void Tape::accumulate(int id, const Matrix& delta) {
  if (!nodes_[id].requires_grad) return;
  nodes_[id].grad += delta;
}

void Tape::backward(Var loss) {
  if (loss.tape() != this) throw ContractError("loss belongs to another tape");
  const Matrix& lv = nodes_[loss.id()].value;
  if (lv.size() != 1) {
    throw ContractError("backward() needs a scalar loss, got " + shape_str(lv));
  }
  if (!std::isfinite(lv(0, 0))) throw ContractError("loss is not finite");

  for (Node& n : nodes_) {
    if (n.requires_grad) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
  }
  backward_done_ = true;
  if (!nodes_[loss.id()].requires_grad) return;
  nodes_[loss.id()].grad(0, 0) = 1.0;
  for (int id = loss.id(); id >= 0; --id) {
    Node& n = nodes_[id];
    if (n.requires_grad && n.backward) n.backward(*this, id);
  }
}

// ---- arithmetic ------------------------------------------------------------

Var matmul(Var a, Var b) {
  require_same_tape(a, b);
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner extents differ " +
                         shape_str(a.value()) + " * " + shape_str(b.value()));
  }
  Matrix out = a.value() * b.value();
  return binary(a, b, std::move(out), "matmul",
                [](Tape& t, int self, int ia, int ib) {
                  const Matrix& g = t.grad(self);
                  if (t.requires_grad(ia)) {
                    t.accumulate(ia, g * t.value(ib).transpose());
                  }
                  if (t.requires_grad(ib)) {
                    t.accumulate(ib, t.value(ia).transpose() * g);
                  }
                });
}

Var transpose(Var a) {
  Matrix out = a.value().transpose();
  return unary(a, std::move(out), "transpose", [](Tape& t, int self, int in) {
    t.accumulate(in, t.grad(self).transpose());
  });
}

Var add(Var a, Var b) {
  require_same_shape(a, b, "add");
  Matrix out = a.value() + b.value();
  return binary(a, b, std::move(out), "add",
                [](Tape& t, int self, int ia, int ib) {
                  t.accumulate(ia, t.grad(self));
                  t.accumulate(ib, t.grad(self));
                });
}

Var sub(Var a, Var b) {
  require_same_shape(a, b, "sub");
  Matrix out = a.value() - b.value();
  return binary(a, b, std::move(out), "sub",
                [](Tape& t, int self, int ia, int ib) {
                  t.accumulate(ia, t.grad(self));
                  t.accumulate(ib, -t.grad(self));
                });
}

Var mul(Var a, Var b) {
  require_same_shape(a, b, "mul");
  Matrix out = a.value().cwiseProduct(b.value());
  return binary(a, b, std::move(out), "mul",
                [](Tape& t, int self, int ia, int ib) {
                  const Matrix& g = t.grad(self);
                  t.accumulate(ia, g.cwiseProduct(t.value(ib)));
                  t.accumulate(ib, g.cwiseProduct(t.value(ia)));
                });
}

Var scale(Var a, double s) {
  Matrix out = a.value() * s;
  return unary(a, std::move(out), "scale", [s](Tape& t, int self, int in) {
    t.accumulate(in, t.grad(self) * s);
  });
}

Var add_scalar(Var a, double s) {
  Matrix out = a.value().array() + s;
  return unary(a, std::move(out), "add_scalar",
               [](Tape& t, int self, int in) { t.accumulate(in, t.grad(self)); });
}

Var relu(Var a) {
  Matrix out = a.value().cwiseMax(0.0);
  return unary(a, std::move(out), "relu", [](Tape& t, int self, int in) {
    const Matrix mask = (t.value(in).array() > 0.0).cast<double>();
    t.accumulate(in, t.grad(self).cwiseProduct(mask));
  });
}

Var sigmoid(Var a) {
  Matrix out = a.value().unaryExpr([](double x) {
    // Split by sign so exp never overflows.
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
  });
  return unary(a, std::move(out), "sigmoid", [](Tape& t, int self, int in) {
    const Matrix& y = t.value(self);
    t.accumulate(in, t.grad(self).cwiseProduct(
                         (y.array() * (1.0 - y.array())).matrix()));
  });
}

Var log_sigmoid(Var a) {
  Matrix out = a.value().unaryExpr(
      [](double x) { return std::min(x, 0.0) - std::log1p(std::exp(-std::abs(x))); });
  return unary(a, std::move(out), "log_sigmoid", [](Tape& t, int self, int in) {
    // d/dx log sigmoid(x) = sigmoid(-x) = exp(log_sigmoid(x) - x).
    const Matrix d = (t.value(self) - t.value(in)).array().exp().matrix();
    t.accumulate(in, t.grad(self).cwiseProduct(d));
  });
}

Var abs(Var a) {
  Matrix out = a.value().cwiseAbs();
  return unary(a, std::move(out), "abs", [](Tape& t, int self, int in) {
    // Subgradient 0 at 0.
    const Matrix sign = t.value(in).unaryExpr(
        [](double x) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
    t.accumulate(in, t.grad(self).cwiseProduct(sign));
  });
}

Var elementwise(Var a, Var b, Elementwise kind, double factor) {
  switch (kind) {
    case Elementwise::kMul:
      return mul(a, b);
    case Elementwise::kAdd:
      return add(a, b);
    case Elementwise::kSub:
      return sub(a, b);
    case Elementwise::kAbs:
      return abs(a);
    case Elementwise::kRelu:
      return relu(a);
    case Elementwise::kSigmoid:
      return sigmoid(a);
    case Elementwise::kScale:
      return scale(a, factor);
  }
  throw ArgumentError("unknown elementwise kind");
}

Var add_row(Var x, Var row) {
  require_same_tape(x, row);
  if (row.rows() != 1 || row.cols() != x.cols()) {
    throw DimensionError("add_row: row " + shape_str(row.value()) +
                         " does not match " + shape_str(x.value()));
  }
  Matrix out = x.value().rowwise() + row.value().row(0);
  return binary(x, row, std::move(out), "add_row",
                [](Tape& t, int self, int ix, int ir) {
                  const Matrix& g = t.grad(self);
                  t.accumulate(ix, g);
                  t.accumulate(ir, g.colwise().sum());
                });
}

Var mul_col(Var x, Var col) {
  require_same_tape(x, col);
  if (col.cols() != 1 || col.rows() != x.rows()) {
    throw DimensionError("mul_col: column " + shape_str(col.value()) +
                         " does not match " + shape_str(x.value()));
  }
  Matrix out = x.value().array().colwise() * col.value().col(0).array();
  return binary(x, col, std::move(out), "mul_col",
                [](Tape& t, int self, int ix, int ic) {
                  const Matrix& g = t.grad(self);
                  if (t.requires_grad(ix)) {
                    Matrix gx = g.array().colwise() * t.value(ic).col(0).array();
                    t.accumulate(ix, gx);
                  }
                  if (t.requires_grad(ic)) {
                    t.accumulate(ic, g.cwiseProduct(t.value(ix)).rowwise().sum());
                  }
                });
}

// ---- normalisation ---------------------------------------------------------

namespace {

// Row-wise softmax of m; callers transpose for axis 0.
Matrix row_softmax(const Matrix& m) {
  Matrix out(m.rows(), m.cols());
  for (Index i = 0; i < m.rows(); ++i) {
    const double mx = m.row(i).maxCoeff();
    out.row(i) = (m.row(i).array() - mx).exp();
    out.row(i) /= out.row(i).sum();
  }
  return out;
}

Matrix row_log_softmax(const Matrix& m) {
  Matrix out(m.rows(), m.cols());
  for (Index i = 0; i < m.rows(); ++i) {
    const double mx = m.row(i).maxCoeff();
    const double lse = mx + std::log((m.row(i).array() - mx).exp().sum());
    out.row(i) = m.row(i).array() - lse;
  }
  return out;
}

}  // namespace

Var softmax(Var x, int axis) {
  require_axis(axis);
  if (x.value().size() == 0) throw DimensionError("softmax over empty axis");
  Matrix out = axis == 1 ? row_softmax(x.value())
                         : Matrix(row_softmax(x.value().transpose()).transpose());
  return unary(x, std::move(out), "softmax",
               [axis](Tape& t, int self, int in) {
                 const Matrix& y = t.value(self);
                 const Matrix& g = t.grad(self);
                 const Matrix gy = g.cwiseProduct(y);
                 Matrix dx;
                 if (axis == 1) {
                   dx = gy - (y.array().colwise() * gy.rowwise().sum().array())
                                 .matrix();
                 } else {
                   dx = gy - (y.array().rowwise() * gy.colwise().sum().array())
                                 .matrix();
                 }
                 t.accumulate(in, dx);
               });
}

Var log_softmax(Var x, int axis) {
  require_axis(axis);
  if (x.value().size() == 0) throw DimensionError("log_softmax over empty axis");
  Matrix out =
      axis == 1 ? row_log_softmax(x.value())
                : Matrix(row_log_softmax(x.value().transpose()).transpose());
  return unary(x, std::move(out), "log_softmax",
               [axis](Tape& t, int self, int in) {
                 const Matrix p = t.value(self).array().exp();
                 const Matrix& g = t.grad(self);
                 Matrix dx;
                 if (axis == 1) {
                   dx = g - (p.array().colwise() * g.rowwise().sum().array())
                                .matrix();
                 } else {
                   dx = g - (p.array().rowwise() * g.colwise().sum().array())
                                .matrix();
                 }
                 t.accumulate(in, dx);
               });
}

// ---- reductions ------------------------------------------------------------

std::vector<Index> topk_indices(std::span<const double> values, Index k) {
  std::vector<Index> order(values.size());
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
    return values[a] > values[b];
  });
  order.resize(static_cast<std::size_t>(std::min<Index>(k, order.size())));
  return order;
}

Var reduce(Var x, int axis, Reduce kind, Index k) {
  require_axis(axis);
  const Matrix& v = x.value();
  const Index extent = axis == 0 ? v.rows() : v.cols();
  const Index lanes = axis == 0 ? v.cols() : v.rows();
  if (extent == 0) throw DimensionError("reduce over empty axis");
  if (kind == Reduce::kMax) k = 1;
  if (kind == Reduce::kTopkMean && (k < 1 || k > extent)) {
    throw ArgumentError("topk_mean: k=" + std::to_string(k) +
                        " outside [1, " + std::to_string(extent) + "]");
  }

  auto at = [&](Index lane, Index pos) -> double {
    return axis == 0 ? v(pos, lane) : v(lane, pos);
  };

  Matrix out = axis == 0 ? Matrix(1, lanes) : Matrix(lanes, 1);
  // Selected positions per lane for max/top-k routing.
  std::vector<std::vector<Index>> picked;
  if (kind == Reduce::kMax || kind == Reduce::kTopkMean) picked.resize(lanes);

  std::vector<double> buf(static_cast<std::size_t>(extent));
  for (Index lane = 0; lane < lanes; ++lane) {
    for (Index p = 0; p < extent; ++p) buf[p] = at(lane, p);
    double r = 0.0;
    switch (kind) {
      case Reduce::kSum:
        r = std::accumulate(buf.begin(), buf.end(), 0.0);
        break;
      case Reduce::kMean:
        r = std::accumulate(buf.begin(), buf.end(), 0.0) /
            static_cast<double>(extent);
        break;
      case Reduce::kMax:
      case Reduce::kTopkMean: {
        picked[lane] = topk_indices(buf, k);
        for (Index p : picked[lane]) r += buf[p];
        r /= static_cast<double>(k);
        break;
      }
    }
    if (axis == 0) {
      out(0, lane) = r;
    } else {
      out(lane, 0) = r;
    }
  }

  return unary(x, std::move(out), "reduce",
               [axis, kind, k, extent, lanes,
                picked = std::move(picked)](Tape& t, int self, int in) {
                 const Matrix& g = t.grad(self);
                 const Matrix& xv = t.value(in);
                 Matrix dx = Matrix::Zero(xv.rows(), xv.cols());
                 for (Index lane = 0; lane < lanes; ++lane) {
                   const double gl = axis == 0 ? g(0, lane) : g(lane, 0);
                   auto cell = [&](Index p) -> double& {
                     return axis == 0 ? dx(p, lane) : dx(lane, p);
                   };
                   switch (kind) {
                     case Reduce::kSum:
                       for (Index p = 0; p < extent; ++p) cell(p) += gl;
                       break;
                     case Reduce::kMean:
                       for (Index p = 0; p < extent; ++p) {
                         cell(p) += gl / static_cast<double>(extent);
                       }
                       break;
                     case Reduce::kMax:
                     case Reduce::kTopkMean:
                       for (Index p : picked[lane]) {
                         cell(p) += gl / static_cast<double>(k);
                       }
                       break;
                   }
                 }
                 t.accumulate(in, dx);
               });
}

Var sum(Var x, int axis) { return reduce(x, axis, Reduce::kSum); }
Var mean(Var x, int axis) { return reduce(x, axis, Reduce::kMean); }
Var max(Var x, int axis) { return reduce(x, axis, Reduce::kMax); }
Var topk_mean(Var x, int axis, Index k) {
  return reduce(x, axis, Reduce::kTopkMean, k);
}

Var sum_all(Var x) {
  Matrix out = Matrix::Constant(1, 1, x.value().sum());
  return unary(x, std::move(out), "sum_all", [](Tape& t, int self, int in) {
    const Matrix& xv = t.value(in);
    t.accumulate(in, Matrix::Constant(xv.rows(), xv.cols(), t.grad(self)(0, 0)));
  });
}

Var mean_all(Var x) {
  return scale(sum_all(x), 1.0 / static_cast<double>(x.value().size()));
}

// ---- structural ------------------------------------------------------------

Var gather_rows(Var x, std::span<const Index> rows) {
  const Matrix& v = x.value();
  std::vector<Index> idx(rows.begin(), rows.end());
  Matrix out(static_cast<Index>(idx.size()), v.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= v.rows()) {
      throw DimensionError("gather_rows: row " + std::to_string(idx[i]) +
                           " out of range " + std::to_string(v.rows()));
    }
    out.row(static_cast<Index>(i)) = v.row(idx[i]);
  }
  return unary(x, std::move(out), "gather_rows",
               [idx = std::move(idx)](Tape& t, int self, int in) {
                 const Matrix& g = t.grad(self);
                 const Matrix& xv = t.value(in);
                 Matrix dx = Matrix::Zero(xv.rows(), xv.cols());
                 for (std::size_t i = 0; i < idx.size(); ++i) {
                   dx.row(idx[i]) += g.row(static_cast<Index>(i));
                 }
                 t.accumulate(in, dx);
               });
}

Var shift_rows(Var x, Index offset) {
  const Matrix& v = x.value();
  const Index n = v.rows();
  Matrix out = Matrix::Zero(n, v.cols());
  for (Index r = 0; r < n; ++r) {
    const Index src = r + offset;
    if (src >= 0 && src < n) out.row(r) = v.row(src);
  }
  return unary(x, std::move(out), "shift_rows",
               [offset, n](Tape& t, int self, int in) {
                 const Matrix& g = t.grad(self);
                 Matrix dx = Matrix::Zero(g.rows(), g.cols());
                 for (Index r = 0; r < n; ++r) {
                   const Index src = r + offset;
                   if (src >= 0 && src < n) dx.row(src) += g.row(r);
                 }
                 t.accumulate(in, dx);
               });
}

Var detach(Var x) { return x.tape()->constant(x.value()); }

Var slice_cols(Var x, Index begin, Index count) {
  const Matrix& v = x.value();
  if (begin < 0 || count < 0 || begin + count > v.cols()) {
    throw DimensionError("slice_cols: columns [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") out of range " +
                         std::to_string(v.cols()));
  }
  Matrix out = v.middleCols(begin, count);
  return unary(x, std::move(out), "slice_cols", [begin, count](Tape& t, int self, int in) {
    Matrix dx = Matrix::Zero(t.value(in).rows(), t.value(in).cols());
    dx.middleCols(begin, count) = t.grad(self);
    t.accumulate(in, dx);
  });
}

Var concat_cols(Var a, Var b) {
  require_same_tape(a, b);
  if (a.rows() != b.rows()) {
    throw DimensionError("concat_cols: row mismatch " + shape_str(a.value()) + " vs " +
                         shape_str(b.value()));
  }
  Matrix out(a.rows(), a.cols() + b.cols());
  out << a.value(), b.value();
  const Index split = a.cols();
  return binary(a, b, std::move(out), "concat_cols",
                [split](Tape& t, int self, int ia, int ib) {
                  const Matrix& g = t.grad(self);
                  t.accumulate(ia, g.leftCols(split));
                  t.accumulate(ib, g.rightCols(g.cols() - split));
                });
}

}  // namespace ad
}  // namespace wstal
