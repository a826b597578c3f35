#pragma once

// Dense row-major matrices and a reverse-mode autodiff tape.
//
// Everything is double precision and reduces sequentially in row-major order,
// so a given computation is bit-reproducible across runs.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

namespace portraitid {

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  static Matrix identity(std::size_t n);
  static Matrix row_vector(std::span<const double> values);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  bool same_shape(const Matrix& other) const noexcept {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }
  bool all_finite() const noexcept;

  /// Exact element-wise comparison of shape and contents.
  friend bool operator==(const Matrix& a, const Matrix& b) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Matrix matmul(const Matrix& a, const Matrix& b);
/// a · bᵀ without materializing the transpose.
Matrix matmul_nt(const Matrix& a, const Matrix& b);
/// aᵀ · b without materializing the transpose.
Matrix matmul_tn(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& m);
Matrix add(const Matrix& a, const Matrix& b);
Matrix subtract(const Matrix& a, const Matrix& b);
Matrix scaled(const Matrix& m, double factor);
double max_abs_diff(const Matrix& a, const Matrix& b);

/// Row-wise softmax with per-row max subtraction.
Matrix softmax_rows(const Matrix& m);

inline constexpr double kLayerNormEps = 1e-5;

/// gain ⊙ (x − mean) / sqrt(var + eps) + bias, with the biased variance.
std::vector<double> layer_norm(std::span<const double> x, std::span<const double> gain,
                               std::span<const double> bias, double eps = kLayerNormEps);

double dot(std::span<const double> a, std::span<const double> b);
double l2_norm(std::span<const double> v);

// ---------------------------------------------------------------------------

/// Handle to a value recorded on a Tape.
struct Var {
  std::size_t id = 0;
};

/// Records primitive operations for reverse-mode gradient accumulation.
///
/// Leaves hold copies of their values. A node needs a gradient when it is a
/// trainable leaf or depends on one; nodes that do not are skipped during the
/// backward pass, so frozen leaves always end with an all-zero gradient.
class Tape {
 public:
  Var leaf(Matrix value, bool requires_grad = true);
  Var constant(Matrix value) { return leaf(std::move(value), false); }

  const Matrix& value(Var v) const { return nodes_.at(v.id).value; }
  /// Gradient accumulated by the last backward(); zeros for untouched nodes.
  const Matrix& grad(Var v) const;
  bool requires_grad(Var v) const { return nodes_.at(v.id).needs_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

  Var matmul(Var a, Var b);
  Var matmul_nt(Var a, Var b);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  /// Adds a 1×n row vector to every row of an m×n matrix.
  Var add_row(Var m, Var row);
  Var scale(Var a, double factor);
  Var add_scalar(Var a, double c);
  Var gelu(Var a);
  /// max(0, x) elementwise.
  Var hinge(Var a);
  Var softmax_rows(Var a);
  /// Row-wise layer normalization with 1×n gain and bias.
  Var layer_norm_rows(Var x, Var gain, Var bias, double eps = kLayerNormEps);
  Var slice_cols(Var a, std::size_t first, std::size_t count);
  Var concat_cols(std::span<const Var> parts);
  /// Mean over rows, giving a 1×n row.
  Var mean_rows(Var a);
  /// Each row divided by its L2 norm.
  Var l2_normalize_rows(Var a);
  /// Inner product of two same-shape operands, giving 1×1.
  Var dot(Var a, Var b);
  /// Sum of all entries, giving 1×1.
  Var sum(Var a);

  /// Accumulates d(output)/d(node) · loss_grad into every node that needs a
  /// gradient. The output must be 1×1. Gradients from earlier calls are reset.
  void backward(Var output, double loss_grad = 1.0);

  /// Re-executes every recorded operation from the leaves and reports whether
  /// all outputs reproduce bit-identically.
  bool replay_matches() const;

 private:
  using ForwardFn = std::function<Matrix(std::span<const Matrix* const>)>;
  using BackwardFn = std::function<void(std::span<const Matrix* const> inputs, const Matrix& out,
                                        const Matrix& out_grad, std::span<Matrix* const> in_grads)>;

  struct Node {
    Matrix value;
    mutable Matrix grad;
    std::vector<std::size_t> inputs;
    ForwardFn forward;
    BackwardFn backward;
    bool needs_grad = false;
  };

  Var record(std::vector<std::size_t> inputs, ForwardFn forward, BackwardFn backward);
  void check(Var v) const;

  std::vector<Node> nodes_;
};

}  // namespace portraitid
