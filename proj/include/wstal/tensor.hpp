#pragma once

// Dense matrices with tape-based reverse-mode differentiation.
//
// Every value lives in a row-major Eigen matrix; rank-1 quantities are
// carried as 1xn rows or nx1 columns. A Tape records operations in the order
// they are executed, which is a topological order of the graph, so backward()
// walks the records in reverse exactly once.

#include <Eigen/Dense>

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

namespace wstal {

template <typename Scalar>
using MatrixX =
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Matrix = MatrixX<double>;
using Index = Eigen::Index;

// Throws NumericError naming `where` if any entry is NaN or Inf.
void require_finite(const Matrix& m, std::string_view where);

namespace ad {

class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; only valid while the
// owning tape is alive.
class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  const Matrix& grad() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  double scalar() const;
  bool requires_grad() const;

  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  // Receives the tape and the id of the node whose gradient is being
  // propagated to its inputs.
  using BackwardFn = std::function<void(Tape&, int)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  Var variable(Matrix value);
  Var scalar(double value) { return constant(Matrix::Constant(1, 1, value)); }

  // Appends an operation result. `backward` may be empty when no input
  // requires a gradient.
  Var record(Matrix value, std::vector<int> inputs, BackwardFn backward,
             std::string_view op_name);

  // Populates grad() for every node that requires a gradient. `loss` must be
  // a finite 1x1 value.
  void backward(Var loss);

  const Matrix& value(int id) const { return nodes_[id].value; }
  const Matrix& grad(int id) const;
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }

  // Adds `delta` into the gradient slot of `id`, if it tracks one.
  void accumulate(int id, const Matrix& delta);
  template <typename Derived>
  void accumulate(int id, const Eigen::MatrixBase<Derived>& delta) {
    if (!nodes_[id].requires_grad) return;
    nodes_[id].grad += delta;
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    std::vector<int> inputs;
    BackwardFn backward;
  };

  // A deque keeps references from value()/grad() valid as the tape grows.
  std::deque<Node> nodes_;
  bool backward_done_ = false;
};

// ---- arithmetic ----------------------------------------------------------

Var matmul(Var a, Var b);
Var transpose(Var a);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);

Var relu(Var a);
Var sigmoid(Var a);
// log(sigmoid(a)), stable for large |a|.
Var log_sigmoid(Var a);
Var abs(Var a);

enum class Elementwise { kMul, kAdd, kSub, kAbs, kRelu, kSigmoid, kScale };

// Dispatcher over the pointwise kinds. `b` is ignored by the unary kinds;
// kScale multiplies `a` by `factor`.
Var elementwise(Var a, Var b, Elementwise kind, double factor = 1.0);

// x + 1 * row, with row of shape 1 x cols(x).
Var add_row(Var x, Var row);
// Scales row i of x by col(i), with col of shape rows(x) x 1.
Var mul_col(Var x, Var col);

// ---- normalisation -------------------------------------------------------

// Softmax along `axis` (0: down each column, 1: across each row). Uses max
// subtraction.
Var softmax(Var x, int axis);
Var log_softmax(Var x, int axis);

// ---- reductions ----------------------------------------------------------

enum class Reduce { kSum, kMean, kMax, kTopkMean };

// Reduces along `axis`; axis 0 yields 1 x cols, axis 1 yields rows x 1.
// kTopkMean averages the k largest entries; max and top-k route gradients to
// the selected entries and break ties by the lowest index.
Var reduce(Var x, int axis, Reduce kind, Index k = 1);
Var sum(Var x, int axis);
Var mean(Var x, int axis);
Var max(Var x, int axis);
Var topk_mean(Var x, int axis, Index k);
Var sum_all(Var x);
Var mean_all(Var x);

// ---- structural ----------------------------------------------------------

// Rows of x at `rows`, in order.
Var gather_rows(Var x, std::span<const Index> rows);
// y(t) = x(t + offset) when in range, zero otherwise.
Var shift_rows(Var x, Index offset);
// Same value, cut from the graph.
Var detach(Var x);
// Columns [begin, begin + count) of x.
Var slice_cols(Var x, Index begin, Index count);
// [a | b], side by side; row counts must match.
Var concat_cols(Var a, Var b);

// Indices of the k largest entries of `values`, descending, ties by lower
// index first.
std::vector<Index> topk_indices(std::span<const double> values, Index k);

}  // namespace ad
}  // namespace wstal
