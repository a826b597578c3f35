#include "portraitid/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "portraitid/error.hpp"

namespace portraitid {

namespace {

std::string shape_of(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (!a.same_shape(b)) {
    throw ContractError(std::string(op) + ": shape mismatch " + shape_of(a) + " vs " + shape_of(b));
  }
}

// Shared by the free function and the tape op so both produce identical bits.
void layer_norm_row(std::span<const double> x, std::span<const double> gain,
                    std::span<const double> bias, double eps, std::span<double> out,
                    std::span<double> xhat, double* rstd) {
  const auto n = static_cast<double>(x.size());
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= n;
  const double r = 1.0 / std::sqrt(var + eps);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double h = (x[i] - mean) * r;
    if (!xhat.empty()) xhat[i] = h;
    out[i] = gain[i] * h + bias[i];
  }
  if (rstd != nullptr) *rstd = r;
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluK = 0.044715;

double gelu_value(double x) {
  const double u = kGeluC * (x + kGeluK * x * x * x);
  return 0.5 * x * (1.0 + std::tanh(u));
}

double gelu_slope(double x) {
  const double u = kGeluC * (x + kGeluK * x * x * x);
  const double t = std::tanh(u);
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluK * x * x);
}

void accumulate(Matrix& into, const Matrix& from, double factor = 1.0) {
  auto dst = into.values();
  auto src = from.values();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += factor * src[i];
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw ContractError("Matrix: data length " + std::to_string(data_.size()) +
                        " does not match " + std::to_string(rows) + "x" + std::to_string(cols));
  }
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = rows.size();
  cols_ = rows_ == 0 ? 0 : rows.begin()->size();
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) throw ContractError("Matrix: ragged initializer");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::row_vector(std::span<const double> values) {
  return Matrix(1, values.size(), std::vector<double>(values.begin(), values.end()));
}

bool Matrix::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw ContractError("matmul: shape mismatch " + shape_of(a) + " · " + shape_of(b));
  }
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      for (std::size_t j = 0; j < b.cols(); ++j) c(i, j) += aik * b(k, j);
    }
  }
  return c;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) {
    throw ContractError("matmul_nt: shape mismatch " + shape_of(a) + " · " + shape_of(b) + "ᵀ");
  }
  Matrix c(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.rows(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(j, k);
      c(i, j) = s;
    }
  }
  return c;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) {
    throw ContractError("matmul_tn: shape mismatch " + shape_of(a) + "ᵀ · " + shape_of(b));
  }
  Matrix c(a.cols(), b.cols());
  for (std::size_t k = 0; k < a.rows(); ++k) {
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double aki = a(k, i);
      for (std::size_t j = 0; j < b.cols(); ++j) c(i, j) += aki * b(k, j);
    }
  }
  return c;
}

Matrix transpose(const Matrix& m) {
  Matrix t(m.cols(), m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) t(j, i) = m(i, j);
  return t;
}

Matrix add(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "add");
  Matrix c = a;
  accumulate(c, b);
  return c;
}

Matrix subtract(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "subtract");
  Matrix c = a;
  accumulate(c, b, -1.0);
  return c;
}

Matrix scaled(const Matrix& m, double factor) {
  Matrix c = m;
  for (double& v : c.values()) v *= factor;
  return c;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "max_abs_diff");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    worst = std::max(worst, std::abs(a.values()[i] - b.values()[i]));
  return worst;
}

Matrix softmax_rows(const Matrix& m) {
  Matrix out(m.rows(), m.cols());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto in = m.row(r);
    auto dst = out.row(r);
    const double peak = *std::max_element(in.begin(), in.end());
    double total = 0.0;
    for (std::size_t c = 0; c < in.size(); ++c) {
      dst[c] = std::exp(in[c] - peak);
      total += dst[c];
    }
    for (double& v : dst) v /= total;
  }
  return out;
}

std::vector<double> layer_norm(std::span<const double> x, std::span<const double> gain,
                               std::span<const double> bias, double eps) {
  if (x.empty()) throw ContractError("layer_norm: empty input");
  if (gain.size() != x.size() || bias.size() != x.size()) {
    throw ContractError("layer_norm: gain/bias length differs from input");
  }
  std::vector<double> out(x.size());
  layer_norm_row(x, gain, bias, eps, out, {}, nullptr);
  return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ContractError("dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double l2_norm(std::span<const double> v) { return std::sqrt(dot(v, v)); }

// ---------------------------------------------------------------------------
// Tape

void Tape::check(Var v) const {
  if (v.id >= nodes_.size()) throw ContractError("Tape: unknown variable");
}

Var Tape::leaf(Matrix value, bool requires_grad) {
  Node node;
  node.value = std::move(value);
  node.needs_grad = requires_grad;
  nodes_.push_back(std::move(node));
  return Var{nodes_.size() - 1};
}

const Matrix& Tape::grad(Var v) const {
  check(v);
  const Node& node = nodes_[v.id];
  if (node.grad.same_shape(node.value)) return node.grad;
  // Never touched by backward(): materialize a zero gradient on demand.
  node.grad = Matrix(node.value.rows(), node.value.cols());
  return node.grad;
}

Var Tape::record(std::vector<std::size_t> inputs, ForwardFn forward, BackwardFn backward) {
  std::vector<const Matrix*> in;
  in.reserve(inputs.size());
  bool needs = false;
  for (auto id : inputs) {
    if (id >= nodes_.size()) throw ContractError("Tape: unknown variable");
    in.push_back(&nodes_[id].value);
    needs = needs || nodes_[id].needs_grad;
  }
  Node node;
  node.value = forward(in);
  node.inputs = std::move(inputs);
  node.forward = std::move(forward);
  node.backward = std::move(backward);
  node.needs_grad = needs;
  nodes_.push_back(std::move(node));
  return Var{nodes_.size() - 1};
}

Var Tape::matmul(Var a, Var b) {
  return record(
      {a.id, b.id}, [](auto in) { return portraitid::matmul(*in[0], *in[1]); },
      [](auto in, const Matrix&, const Matrix& g, auto gin) {
        if (gin[0]) accumulate(*gin[0], portraitid::matmul_nt(g, *in[1]));
        if (gin[1]) accumulate(*gin[1], portraitid::matmul_tn(*in[0], g));
      });
}

Var Tape::matmul_nt(Var a, Var b) {
  return record(
      {a.id, b.id}, [](auto in) { return portraitid::matmul_nt(*in[0], *in[1]); },
      [](auto in, const Matrix&, const Matrix& g, auto gin) {
        if (gin[0]) accumulate(*gin[0], portraitid::matmul(g, *in[1]));
        if (gin[1]) accumulate(*gin[1], portraitid::matmul_tn(g, *in[0]));
      });
}

Var Tape::add(Var a, Var b) {
  return record(
      {a.id, b.id}, [](auto in) { return portraitid::add(*in[0], *in[1]); },
      [](auto, const Matrix&, const Matrix& g, auto gin) {
        if (gin[0]) accumulate(*gin[0], g);
        if (gin[1]) accumulate(*gin[1], g);
      });
}

Var Tape::sub(Var a, Var b) {
  return record(
      {a.id, b.id}, [](auto in) { return portraitid::subtract(*in[0], *in[1]); },
      [](auto, const Matrix&, const Matrix& g, auto gin) {
        if (gin[0]) accumulate(*gin[0], g);
        if (gin[1]) accumulate(*gin[1], g, -1.0);
      });
}

Var Tape::add_row(Var m, Var row) {
  return record(
      {m.id, row.id},
      [](auto in) {
        const Matrix& x = *in[0];
        const Matrix& r = *in[1];
        if (r.rows() != 1 || r.cols() != x.cols()) {
          throw ContractError("add_row: row shape " + shape_of(r) + " vs " + shape_of(x));
        }
        Matrix out = x;
        for (std::size_t i = 0; i < x.rows(); ++i)
          for (std::size_t j = 0; j < x.cols(); ++j) out(i, j) += r(0, j);
        return out;
      },
      [](auto, const Matrix&, const Matrix& g, auto gin) {
        if (gin[0]) accumulate(*gin[0], g);
        if (gin[1]) {
          for (std::size_t i = 0; i < g.rows(); ++i)
            for (std::size_t j = 0; j < g.cols(); ++j) (*gin[1])(0, j) += g(i, j);
        }
      });
}

Var Tape::scale(Var a, double factor) {
  return record(
      {a.id}, [factor](auto in) { return portraitid::scaled(*in[0], factor); },
      [factor](auto, const Matrix&, const Matrix& g, auto gin) {
        if (gin[0]) accumulate(*gin[0], g, factor);
      });
}

Var Tape::add_scalar(Var a, double c) {
  return record(
      {a.id},
      [c](auto in) {
        Matrix out = *in[0];
        for (double& v : out.values()) v += c;
        return out;
      },
      [](auto, const Matrix&, const Matrix& g, auto gin) {
        if (gin[0]) accumulate(*gin[0], g);
      });
}

Var Tape::gelu(Var a) {
  return record(
      {a.id},
      [](auto in) {
        Matrix out = *in[0];
        for (double& v : out.values()) v = gelu_value(v);
        return out;
      },
      [](auto in, const Matrix&, const Matrix& g, auto gin) {
        if (!gin[0]) return;
        auto x = in[0]->values();
        auto gv = g.values();
        auto dst = gin[0]->values();
        for (std::size_t i = 0; i < x.size(); ++i) dst[i] += gv[i] * gelu_slope(x[i]);
      });
}

Var Tape::hinge(Var a) {
  return record(
      {a.id},
      [](auto in) {
        Matrix out = *in[0];
        for (double& v : out.values()) v = std::max(0.0, v);
        return out;
      },
      [](auto in, const Matrix&, const Matrix& g, auto gin) {
        if (!gin[0]) return;
        auto x = in[0]->values();
        auto gv = g.values();
        auto dst = gin[0]->values();
        for (std::size_t i = 0; i < x.size(); ++i)
          if (x[i] > 0.0) dst[i] += gv[i];
      });
}

Var Tape::softmax_rows(Var a) {
  return record(
      {a.id}, [](auto in) { return portraitid::softmax_rows(*in[0]); },
      [](auto, const Matrix& y, const Matrix& g, auto gin) {
        if (!gin[0]) return;
        for (std::size_t r = 0; r < y.rows(); ++r) {
          double inner = 0.0;
          for (std::size_t c = 0; c < y.cols(); ++c) inner += g(r, c) * y(r, c);
          for (std::size_t c = 0; c < y.cols(); ++c)
            (*gin[0])(r, c) += y(r, c) * (g(r, c) - inner);
        }
      });
}

Var Tape::layer_norm_rows(Var x, Var gain, Var bias, double eps) {
  return record(
      {x.id, gain.id, bias.id},
      [eps](auto in) {
        const Matrix& xm = *in[0];
        const Matrix& gm = *in[1];
        const Matrix& bm = *in[2];
        if (gm.rows() != 1 || gm.cols() != xm.cols() || !gm.same_shape(bm)) {
          throw ContractError("layer_norm_rows: gain/bias shape mismatch");
        }
        Matrix out(xm.rows(), xm.cols());
        for (std::size_t r = 0; r < xm.rows(); ++r)
          layer_norm_row(xm.row(r), gm.row(0), bm.row(0), eps, out.row(r), {}, nullptr);
        return out;
      },
      [eps](auto in, const Matrix&, const Matrix& g, auto gin) {
        const Matrix& xm = *in[0];
        const Matrix& gm = *in[1];
        const std::size_t n = xm.cols();
        std::vector<double> xhat(n);
        std::vector<double> scratch(n);
        std::vector<double> dxhat(n);
        for (std::size_t r = 0; r < xm.rows(); ++r) {
          double rstd = 0.0;
          layer_norm_row(xm.row(r), gm.row(0), in[2]->row(0), eps, scratch, xhat, &rstd);
          double mean_d = 0.0;
          double mean_dx = 0.0;
          for (std::size_t c = 0; c < n; ++c) {
            const double gc = g(r, c);
            if (gin[1]) (*gin[1])(0, c) += gc * xhat[c];
            if (gin[2]) (*gin[2])(0, c) += gc;
            dxhat[c] = gc * gm(0, c);
            mean_d += dxhat[c];
            mean_dx += dxhat[c] * xhat[c];
          }
          if (!gin[0]) continue;
          mean_d /= static_cast<double>(n);
          mean_dx /= static_cast<double>(n);
          for (std::size_t c = 0; c < n; ++c)
            (*gin[0])(r, c) += rstd * (dxhat[c] - mean_d - xhat[c] * mean_dx);
        }
      });
}

Var Tape::slice_cols(Var a, std::size_t first, std::size_t count) {
  return record(
      {a.id},
      [first, count](auto in) {
        const Matrix& x = *in[0];
        if (first + count > x.cols()) throw ContractError("slice_cols: range exceeds columns");
        Matrix out(x.rows(), count);
        for (std::size_t r = 0; r < x.rows(); ++r)
          for (std::size_t c = 0; c < count; ++c) out(r, c) = x(r, first + c);
        return out;
      },
      [first, count](auto, const Matrix&, const Matrix& g, auto gin) {
        if (!gin[0]) return;
        for (std::size_t r = 0; r < g.rows(); ++r)
          for (std::size_t c = 0; c < count; ++c) (*gin[0])(r, first + c) += g(r, c);
      });
}

Var Tape::concat_cols(std::span<const Var> parts) {
  std::vector<std::size_t> ids;
  for (Var p : parts) ids.push_back(p.id);
  return record(
      std::move(ids),
      [](auto in) {
        std::size_t cols = 0;
        for (const Matrix* m : in) {
          if (m->rows() != in[0]->rows()) throw ContractError("concat_cols: row count mismatch");
          cols += m->cols();
        }
        Matrix out(in[0]->rows(), cols);
        std::size_t offset = 0;
        for (const Matrix* m : in) {
          for (std::size_t r = 0; r < m->rows(); ++r)
            for (std::size_t c = 0; c < m->cols(); ++c) out(r, offset + c) = (*m)(r, c);
          offset += m->cols();
        }
        return out;
      },
      [](auto in, const Matrix&, const Matrix& g, auto gin) {
        std::size_t offset = 0;
        for (std::size_t k = 0; k < in.size(); ++k) {
          const std::size_t cols = in[k]->cols();
          if (gin[k]) {
            for (std::size_t r = 0; r < g.rows(); ++r)
              for (std::size_t c = 0; c < cols; ++c) (*gin[k])(r, c) += g(r, offset + c);
          }
          offset += cols;
        }
      });
}

Var Tape::mean_rows(Var a) {
  return record(
      {a.id},
      [](auto in) {
        const Matrix& x = *in[0];
        Matrix out(1, x.cols());
        for (std::size_t r = 0; r < x.rows(); ++r)
          for (std::size_t c = 0; c < x.cols(); ++c) out(0, c) += x(r, c);
        for (double& v : out.values()) v /= static_cast<double>(x.rows());
        return out;
      },
      [](auto in, const Matrix&, const Matrix& g, auto gin) {
        if (!gin[0]) return;
        const double inv = 1.0 / static_cast<double>(in[0]->rows());
        for (std::size_t r = 0; r < in[0]->rows(); ++r)
          for (std::size_t c = 0; c < g.cols(); ++c) (*gin[0])(r, c) += g(0, c) * inv;
      });
}

Var Tape::l2_normalize_rows(Var a) {
  return record(
      {a.id},
      [](auto in) {
        Matrix out = *in[0];
        for (std::size_t r = 0; r < out.rows(); ++r) {
          const double norm = l2_norm(out.row(r));
          if (norm == 0.0) throw ContractError("l2_normalize_rows: zero row");
          for (double& v : out.row(r)) v /= norm;
        }
        return out;
      },
      [](auto in, const Matrix& y, const Matrix& g, auto gin) {
        if (!gin[0]) return;
        for (std::size_t r = 0; r < y.rows(); ++r) {
          const double norm = l2_norm(in[0]->row(r));
          const double proj = portraitid::dot(y.row(r), g.row(r));
          for (std::size_t c = 0; c < y.cols(); ++c)
            (*gin[0])(r, c) += (g(r, c) - y(r, c) * proj) / norm;
        }
      });
}

Var Tape::dot(Var a, Var b) {
  return record(
      {a.id, b.id},
      [](auto in) {
        require_same_shape(*in[0], *in[1], "dot");
        return Matrix(1, 1, std::vector<double>{portraitid::dot(in[0]->values(), in[1]->values())});
      },
      [](auto in, const Matrix&, const Matrix& g, auto gin) {
        const double s = g(0, 0);
        if (gin[0]) accumulate(*gin[0], *in[1], s);
        if (gin[1]) accumulate(*gin[1], *in[0], s);
      });
}

Var Tape::sum(Var a) {
  return record(
      {a.id},
      [](auto in) {
        double s = 0.0;
        for (double v : in[0]->values()) s += v;
        return Matrix(1, 1, std::vector<double>{s});
      },
      [](auto, const Matrix&, const Matrix& g, auto gin) {
        if (!gin[0]) return;
        for (double& v : gin[0]->values()) v += g(0, 0);
      });
}

void Tape::backward(Var output, double loss_grad) {
  check(output);
  const Matrix& out = nodes_[output.id].value;
  if (out.rows() != 1 || out.cols() != 1) {
    throw ContractError("backward: output must be a scalar, got " + shape_of(out));
  }
  for (Node& node : nodes_) node.grad = Matrix(node.value.rows(), node.value.cols());
  nodes_[output.id].grad(0, 0) = loss_grad;

  std::vector<const Matrix*> in;
  std::vector<Matrix*> gin;
  for (std::size_t id = output.id + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (!node.needs_grad || node.inputs.empty()) continue;
    in.clear();
    gin.clear();
    for (auto input : node.inputs) {
      in.push_back(&nodes_[input].value);
      gin.push_back(nodes_[input].needs_grad ? &nodes_[input].grad : nullptr);
    }
    node.backward(in, node.value, node.grad, gin);
  }
}

bool Tape::replay_matches() const {
  std::vector<Matrix> replayed(nodes_.size());
  std::vector<const Matrix*> in;
  for (std::size_t id = 0; id < nodes_.size(); ++id) {
    const Node& node = nodes_[id];
    if (node.inputs.empty()) {
      replayed[id] = node.value;
      continue;
    }
    in.clear();
    for (auto input : node.inputs) in.push_back(&replayed[input]);
    replayed[id] = node.forward(in);
    if (!(replayed[id] == node.value)) return false;
  }
  return true;
}

}  // namespace portraitid
