#include "evssl/numerics/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>

#include "evssl/errors.hpp"

namespace evssl::num {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

MatMap map(Array& a) {
  return MatMap(a.data(), static_cast<Eigen::Index>(a.rows()), static_cast<Eigen::Index>(a.cols()));
}
ConstMatMap cmap(const Array& a) {
  return ConstMatMap(a.data(), static_cast<Eigen::Index>(a.rows()), static_cast<Eigen::Index>(a.cols()));
}

[[noreturn]] void shape_mismatch(const char* op, const Array& a, const Array& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + to_string(a.shape()) + " and " +
                   to_string(b.shape()));
}

Tape& tape_of(const Var& v) {
  if (!v.valid()) throw Error("operation on an unrecorded Var");
  return *v.tape();
}

bool same_matrix_shape(const Array& a, const Array& b) {
  return a.rows() == b.rows() && a.cols() == b.cols();
}

Var finish(Tape& tape, Array out, const char* op, std::initializer_list<Var> inputs, Tape::Backward bw) {
  require_finite(out, op);
  return tape.record(std::move(out), inputs, std::move(bw));
}

Var finish(Tape& tape, Array out, const char* op, const std::vector<Var>& inputs, Tape::Backward bw) {
  require_finite(out, op);
  return tape.record(std::move(out), inputs, std::move(bw));
}

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

}  // namespace

double gelu_value(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }

Var matmul(const Var& a, const Var& b) {
  Tape& tape = tape_of(a);
  const Array& A = a.value();
  const Array& B = b.value();
  if (A.cols() != B.rows()) shape_mismatch("matmul", A, B);
  Array out = Array::matrix(A.rows(), B.cols());
  map(out).noalias() = cmap(A) * cmap(B);
  const std::size_t ia = a.id(), ib = b.id();
  return finish(tape, std::move(out), "matmul", {a, b}, [ia, ib](Tape& t, const Array& g) {
    if (t.requires_grad(ia)) map(t.grad_buffer(ia)).noalias() += cmap(g) * cmap(t.value(ib)).transpose();
    if (t.requires_grad(ib)) map(t.grad_buffer(ib)).noalias() += cmap(t.value(ia)).transpose() * cmap(g);
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  Tape& tape = tape_of(a);
  const Array& A = a.value();
  const Array& B = b.value();
  if (A.cols() != B.cols()) shape_mismatch("matmul_nt", A, B);
  Array out = Array::matrix(A.rows(), B.rows());
  map(out).noalias() = cmap(A) * cmap(B).transpose();
  const std::size_t ia = a.id(), ib = b.id();
  return finish(tape, std::move(out), "matmul_nt", {a, b}, [ia, ib](Tape& t, const Array& g) {
    if (t.requires_grad(ia)) map(t.grad_buffer(ia)).noalias() += cmap(g) * cmap(t.value(ib));
    if (t.requires_grad(ib)) map(t.grad_buffer(ib)).noalias() += cmap(g).transpose() * cmap(t.value(ia));
  });
}

Var affine(const Var& x, const Var& w, const Var& b) {
  Tape& tape = tape_of(x);
  const Array& X = x.value();
  const Array& W = w.value();
  const Array& B = b.value();
  if (X.cols() != W.rows()) shape_mismatch("affine", X, W);
  if (B.size() != W.cols()) shape_mismatch("affine bias", W, B);
  Array out = Array::matrix(X.rows(), W.cols());
  auto o = map(out);
  o.noalias() = cmap(X) * cmap(W);
  o.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(B.data(), static_cast<Eigen::Index>(B.size()));
  const std::size_t ix = x.id(), iw = w.id(), ib = b.id();
  return finish(tape, std::move(out), "affine", {x, w, b}, [ix, iw, ib](Tape& t, const Array& g) {
    auto G = cmap(g);
    if (t.requires_grad(ix)) map(t.grad_buffer(ix)).noalias() += G * cmap(t.value(iw)).transpose();
    if (t.requires_grad(iw)) map(t.grad_buffer(iw)).noalias() += cmap(t.value(ix)).transpose() * G;
    if (t.requires_grad(ib)) {
      Array& gb = t.grad_buffer(ib);
      Eigen::Map<Eigen::RowVectorXd>(gb.data(), static_cast<Eigen::Index>(gb.size())) += G.colwise().sum();
    }
  });
}

Var add(const Var& a, const Var& b) {
  Tape& tape = tape_of(a);
  const Array& A = a.value();
  const Array& B = b.value();
  if (!same_matrix_shape(A, B)) shape_mismatch("add", A, B);
  Array out = A;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += B[i];
  const std::size_t ia = a.id(), ib = b.id();
  return finish(tape, std::move(out), "add", {a, b}, [ia, ib](Tape& t, const Array& g) {
    for (std::size_t id : {ia, ib}) {
      if (!t.requires_grad(id)) continue;
      Array& d = t.grad_buffer(id);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
    }
  });
}

Var sub(const Var& a, const Var& b) {
  Tape& tape = tape_of(a);
  const Array& A = a.value();
  const Array& B = b.value();
  if (!same_matrix_shape(A, B)) shape_mismatch("sub", A, B);
  Array out = A;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= B[i];
  const std::size_t ia = a.id(), ib = b.id();
  return finish(tape, std::move(out), "sub", {a, b}, [ia, ib](Tape& t, const Array& g) {
    if (t.requires_grad(ia)) {
      Array& d = t.grad_buffer(ia);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
    }
    if (t.requires_grad(ib)) {
      Array& d = t.grad_buffer(ib);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] -= g[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  Tape& tape = tape_of(a);
  const Array& A = a.value();
  const Array& B = b.value();
  if (!same_matrix_shape(A, B)) shape_mismatch("mul", A, B);
  Array out = A;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= B[i];
  const std::size_t ia = a.id(), ib = b.id();
  return finish(tape, std::move(out), "mul", {a, b}, [ia, ib](Tape& t, const Array& g) {
    if (t.requires_grad(ia)) {
      Array& d = t.grad_buffer(ia);
      const Array& bv = t.value(ib);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * bv[i];
    }
    if (t.requires_grad(ib)) {
      Array& d = t.grad_buffer(ib);
      const Array& av = t.value(ia);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * av[i];
    }
  });
}

Var scale(const Var& a, double c) {
  Tape& tape = tape_of(a);
  Array out = a.value();
  for (double& v : out.values()) v *= c;
  const std::size_t ia = a.id();
  return finish(tape, std::move(out), "scale", {a}, [ia, c](Tape& t, const Array& g) {
    Array& d = t.grad_buffer(ia);
    for (std::size_t i = 0; i < g.size(); ++i) d[i] += c * g[i];
  });
}

Var add_row(const Var& a, const Var& row) {
  Tape& tape = tape_of(a);
  const Array& A = a.value();
  const Array& R = row.value();
  if (R.size() != A.cols()) shape_mismatch("add_row", A, R);
  Array out = A;
  const std::size_t n = A.rows(), m = A.cols();
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < m; ++c) out[r * m + c] += R[c];
  const std::size_t ia = a.id(), ir = row.id();
  return finish(tape, std::move(out), "add_row", {a, row}, [ia, ir, n, m](Tape& t, const Array& g) {
    if (t.requires_grad(ia)) {
      Array& d = t.grad_buffer(ia);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
    }
    if (t.requires_grad(ir)) {
      Array& d = t.grad_buffer(ir);
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < m; ++c) d[c] += g[r * m + c];
    }
  });
}

Var broadcast_rows(const Var& row, std::size_t n) {
  Tape& tape = tape_of(row);
  const Array& R = row.value();
  if (n == 0) throw ShapeError("broadcast_rows: row count must be positive");
  const std::size_t m = R.size();
  Array out = Array::matrix(n, m);
  for (std::size_t r = 0; r < n; ++r) std::copy(R.data(), R.data() + m, out.data() + r * m);
  const std::size_t ir = row.id();
  return finish(tape, std::move(out), "broadcast_rows", {row}, [ir, n, m](Tape& t, const Array& g) {
    Array& d = t.grad_buffer(ir);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < m; ++c) d[c] += g[r * m + c];
  });
}

Var gelu(const Var& a) {
  Tape& tape = tape_of(a);
  Array out = a.value();
  for (double& v : out.values()) v = gelu_value(v);
  const std::size_t ia = a.id();
  return finish(tape, std::move(out), "gelu", {a}, [ia](Tape& t, const Array& g) {
    Array& d = t.grad_buffer(ia);
    const Array& x = t.value(ia);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double xi = x[i];
      const double cdf = 0.5 * (1.0 + std::erf(xi * kInvSqrt2));
      const double pdf = kInvSqrt2Pi * std::exp(-0.5 * xi * xi);
      d[i] += g[i] * (cdf + xi * pdf);
    }
  });
}

namespace {

// Shared backward of (masked) row softmax: dx = y * (g - sum(g * y)).
void softmax_rows_backward(const Array& y, const Array& g, Array& d) {
  const std::size_t n = y.rows(), m = y.cols();
  for (std::size_t r = 0; r < n; ++r) {
    double dot = 0.0;
    for (std::size_t c = 0; c < m; ++c) dot += g[r * m + c] * y[r * m + c];
    for (std::size_t c = 0; c < m; ++c) d[r * m + c] += y[r * m + c] * (g[r * m + c] - dot);
  }
}

}  // namespace

Var softmax(const Var& a, int axis) {
  Tape& tape = tape_of(a);
  const Array& A = a.value();
  if (axis != 0 && axis != 1) throw ShapeError("softmax: axis must be 0 or 1");
  const std::size_t n = A.rows(), m = A.cols();
  Array out(A.shape());
  // Index helper: lane l, position k -> flat offset.
  const std::size_t lanes = axis == 1 ? n : m;
  const std::size_t len = axis == 1 ? m : n;
  auto at = [&](std::size_t lane, std::size_t k) { return axis == 1 ? lane * m + k : k * m + lane; };
  for (std::size_t l = 0; l < lanes; ++l) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < len; ++k) mx = std::max(mx, A[at(l, k)]);
    double z = 0.0;
    for (std::size_t k = 0; k < len; ++k) z += (out[at(l, k)] = std::exp(A[at(l, k)] - mx));
    for (std::size_t k = 0; k < len; ++k) out[at(l, k)] /= z;
  }
  const std::size_t ia = a.id(), self = tape.size();
  return finish(tape, std::move(out), "softmax", {a}, [ia, self, axis, n, m](Tape& t, const Array& g) {
    const Array& y = t.value(self);
    Array& d = t.grad_buffer(ia);
    if (axis == 1) {
      softmax_rows_backward(y, g, d);
      return;
    }
    for (std::size_t c = 0; c < m; ++c) {
      double dot = 0.0;
      for (std::size_t r = 0; r < n; ++r) dot += g[r * m + c] * y[r * m + c];
      for (std::size_t r = 0; r < n; ++r) d[r * m + c] += y[r * m + c] * (g[r * m + c] - dot);
    }
  });
}

Var masked_softmax(const Var& a, const std::vector<std::uint8_t>& allowed) {
  Tape& tape = tape_of(a);
  const Array& A = a.value();
  const std::size_t n = A.rows(), m = A.cols();
  if (allowed.size() != A.size())
    throw ShapeError("masked_softmax: mask has " + std::to_string(allowed.size()) + " entries for input " +
                     to_string(A.shape()));
  Array out(A.shape(), 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < m; ++c)
      if (allowed[r * m + c]) mx = std::max(mx, A[r * m + c]);
    if (!std::isfinite(mx)) throw ShapeError("masked_softmax: row " + std::to_string(r) + " has no allowed entry");
    double z = 0.0;
    for (std::size_t c = 0; c < m; ++c)
      if (allowed[r * m + c]) z += (out[r * m + c] = std::exp(A[r * m + c] - mx));
    for (std::size_t c = 0; c < m; ++c) out[r * m + c] /= z;
  }
  const std::size_t ia = a.id(), self = tape.size();
  return finish(tape, std::move(out), "masked_softmax", {a}, [ia, self](Tape& t, const Array& g) {
    softmax_rows_backward(t.value(self), g, t.grad_buffer(ia));
  });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  Tape& tape = tape_of(x);
  const Array& X = x.value();
  const std::size_t n = X.rows(), m = X.cols();
  if (gamma.value().size() != m) shape_mismatch("layer_norm gamma", X, gamma.value());
  if (beta.value().size() != m) shape_mismatch("layer_norm beta", X, beta.value());
  const Array& G = gamma.value();
  const Array& B = beta.value();
  Array out(X.shape());
  // Normalized rows and inverse std are kept for the backward pass.
  Array xhat(X.shape());
  std::vector<double> inv_std(n);
  for (std::size_t r = 0; r < n; ++r) {
    double mean = 0.0;
    for (std::size_t c = 0; c < m; ++c) mean += X[r * m + c];
    mean /= static_cast<double>(m);
    double var = 0.0;
    for (std::size_t c = 0; c < m; ++c) {
      const double d = X[r * m + c] - mean;
      var += d * d;
    }
    var /= static_cast<double>(m);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < m; ++c) {
      xhat[r * m + c] = (X[r * m + c] - mean) * inv_std[r];
      out[r * m + c] = xhat[r * m + c] * G[c] + B[c];
    }
  }
  const std::size_t ix = x.id(), ig = gamma.id(), ib = beta.id();
  return finish(tape, std::move(out), "layer_norm", {x, gamma, beta},
                [ix, ig, ib, n, m, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t, const Array& g) {
                  const Array& gam = t.value(ig);
                  if (t.requires_grad(ig)) {
                    Array& d = t.grad_buffer(ig);
                    for (std::size_t r = 0; r < n; ++r)
                      for (std::size_t c = 0; c < m; ++c) d[c] += g[r * m + c] * xhat[r * m + c];
                  }
                  if (t.requires_grad(ib)) {
                    Array& d = t.grad_buffer(ib);
                    for (std::size_t r = 0; r < n; ++r)
                      for (std::size_t c = 0; c < m; ++c) d[c] += g[r * m + c];
                  }
                  if (t.requires_grad(ix)) {
                    Array& d = t.grad_buffer(ix);
                    const double inv_m = 1.0 / static_cast<double>(m);
                    for (std::size_t r = 0; r < n; ++r) {
                      double mean_dh = 0.0, mean_dh_xh = 0.0;
                      for (std::size_t c = 0; c < m; ++c) {
                        const double dh = g[r * m + c] * gam[c];
                        mean_dh += dh;
                        mean_dh_xh += dh * xhat[r * m + c];
                      }
                      mean_dh *= inv_m;
                      mean_dh_xh *= inv_m;
                      for (std::size_t c = 0; c < m; ++c) {
                        const double dh = g[r * m + c] * gam[c];
                        d[r * m + c] += inv_std[r] * (dh - mean_dh - xhat[r * m + c] * mean_dh_xh);
                      }
                    }
                  }
                });
}

Var mean_rows(const Var& x) {
  Tape& tape = tape_of(x);
  const Array& X = x.value();
  const std::size_t n = X.rows(), m = X.cols();
  Array out = Array::matrix(1, m);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < m; ++c) out[c] += X[r * m + c];
  for (double& v : out.values()) v /= static_cast<double>(n);
  const std::size_t ix = x.id();
  return finish(tape, std::move(out), "mean_rows", {x}, [ix, n, m](Tape& t, const Array& g) {
    Array& d = t.grad_buffer(ix);
    const double inv = 1.0 / static_cast<double>(n);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < m; ++c) d[r * m + c] += g[c] * inv;
  });
}

Var gather_rows(const Var& x, const std::vector<std::size_t>& rows) {
  Tape& tape = tape_of(x);
  const Array& X = x.value();
  const std::size_t m = X.cols();
  if (rows.empty()) throw ShapeError("gather_rows: empty index set");
  Array out = Array::matrix(rows.size(), m);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= X.rows())
      throw ShapeError("gather_rows: index " + std::to_string(rows[i]) + " out of range for " + to_string(X.shape()));
    std::copy_n(X.data() + rows[i] * m, m, out.data() + i * m);
  }
  const std::size_t ix = x.id();
  return finish(tape, std::move(out), "gather_rows", {x}, [ix, rows, m](Tape& t, const Array& g) {
    Array& d = t.grad_buffer(ix);
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t c = 0; c < m; ++c) d[rows[i] * m + c] += g[i * m + c];
  });
}

Var slice_cols(const Var& x, std::size_t begin, std::size_t count) {
  Tape& tape = tape_of(x);
  const Array& X = x.value();
  const std::size_t n = X.rows(), m = X.cols();
  if (count == 0 || begin + count > m)
    throw ShapeError("slice_cols: columns [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                     ") out of range for " + to_string(X.shape()));
  Array out = Array::matrix(n, count);
  for (std::size_t r = 0; r < n; ++r) std::copy_n(X.data() + r * m + begin, count, out.data() + r * count);
  const std::size_t ix = x.id();
  return finish(tape, std::move(out), "slice_cols", {x}, [ix, n, m, begin, count](Tape& t, const Array& g) {
    Array& d = t.grad_buffer(ix);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < count; ++c) d[r * m + begin + c] += g[r * count + c];
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  Tape& tape = tape_of(parts.front());
  const std::size_t m = parts.front().value().cols();
  std::size_t n = 0;
  for (const auto& p : parts) {
    if (p.value().cols() != m) shape_mismatch("concat_rows", parts.front().value(), p.value());
    n += p.value().rows();
  }
  Array out = Array::matrix(n, m);
  std::vector<std::size_t> ids, offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy_n(p.value().data(), p.value().size(), out.data() + off);
    ids.push_back(p.id());
    offsets.push_back(off);
    off += p.value().size();
  }
  return finish(tape, std::move(out), "concat_rows", parts, [ids, offsets](Tape& t, const Array& g) {
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (!t.requires_grad(ids[k])) continue;
      Array& d = t.grad_buffer(ids[k]);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[offsets[k] + i];
    }
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  Tape& tape = tape_of(parts.front());
  const std::size_t n = parts.front().value().rows();
  std::size_t m = 0;
  for (const auto& p : parts) {
    if (p.value().rows() != n) shape_mismatch("concat_cols", parts.front().value(), p.value());
    m += p.value().cols();
  }
  Array out = Array::matrix(n, m);
  std::vector<std::size_t> ids, col_off, widths;
  std::size_t off = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.value().cols();
    for (std::size_t r = 0; r < n; ++r) std::copy_n(p.value().data() + r * w, w, out.data() + r * m + off);
    ids.push_back(p.id());
    col_off.push_back(off);
    widths.push_back(w);
    off += w;
  }
  return finish(tape, std::move(out), "concat_cols", parts, [ids, col_off, widths, n, m](Tape& t, const Array& g) {
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (!t.requires_grad(ids[k])) continue;
      Array& d = t.grad_buffer(ids[k]);
      const std::size_t w = widths[k];
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < w; ++c) d[r * w + c] += g[r * m + col_off[k] + c];
    }
  });
}

Var segment(const Var& flat, std::size_t offset, const Shape& shape) {
  Tape& tape = tape_of(flat);
  const Array& F = flat.value();
  const std::size_t count = element_count(shape);
  if (offset + count > F.size())
    throw ShapeError("segment: [" + std::to_string(offset) + ", " + std::to_string(offset + count) +
                     ") exceeds input " + to_string(F.shape()));
  std::vector<double> data(F.data() + offset, F.data() + offset + count);
  const std::size_t ifl = flat.id();
  return finish(tape, Array(shape, std::move(data)), "segment", {flat}, [ifl, offset](Tape& t, const Array& g) {
    Array& d = t.grad_buffer(ifl);
    for (std::size_t i = 0; i < g.size(); ++i) d[offset + i] += g[i];
  });
}

Var detach(const Var& x) { return tape_of(x).constant(x.value()); }

Var sum(const Var& x) {
  Tape& tape = tape_of(x);
  double s = 0.0;
  for (double v : x.value().values()) s += v;
  const std::size_t ix = x.id();
  return finish(tape, Array::scalar(s), "sum", {x}, [ix](Tape& t, const Array& g) {
    Array& d = t.grad_buffer(ix);
    for (double& v : d.values()) v += g[0];
  });
}

Var squared_error(const Var& a, const Var& b) {
  Tape& tape = tape_of(a);
  const Array& A = a.value();
  const Array& B = b.value();
  if (!same_matrix_shape(A, B)) shape_mismatch("squared_error", A, B);
  double s = 0.0;
  for (std::size_t i = 0; i < A.size(); ++i) {
    const double r = A[i] - B[i];
    s += r * r;
  }
  const std::size_t ia = a.id(), ib = b.id();
  return finish(tape, Array::scalar(s), "squared_error", {a, b}, [ia, ib](Tape& t, const Array& g) {
    const Array& av = t.value(ia);
    const Array& bv = t.value(ib);
    if (t.requires_grad(ia)) {
      Array& d = t.grad_buffer(ia);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += 2.0 * g[0] * (av[i] - bv[i]);
    }
    if (t.requires_grad(ib)) {
      Array& d = t.grad_buffer(ib);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] -= 2.0 * g[0] * (av[i] - bv[i]);
    }
  });
}

Var mse(const Var& a, const Var& b) {
  return scale(squared_error(a, b), 1.0 / static_cast<double>(a.value().size()));
}

Var cosine_distance_rows(const Var& a, const Var& b, double eps) {
  Tape& tape = tape_of(a);
  const Array& A = a.value();
  const Array& B = b.value();
  if (!same_matrix_shape(A, B)) shape_mismatch("cosine_distance_rows", A, B);
  const std::size_t n = A.rows(), m = A.cols();
  double total = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t c = 0; c < m; ++c) {
      dot += A[r * m + c] * B[r * m + c];
      na += A[r * m + c] * A[r * m + c];
      nb += B[r * m + c] * B[r * m + c];
    }
    total += 1.0 - dot / (std::max(std::sqrt(na), eps) * std::max(std::sqrt(nb), eps));
  }
  const std::size_t ia = a.id(), ib = b.id();
  return finish(tape, Array::scalar(total / static_cast<double>(n)), "cosine_distance_rows", {a, b},
                [ia, ib, n, m, eps](Tape& t, const Array& g) {
                  const Array& av = t.value(ia);
                  const Array& bv = t.value(ib);
                  const double w = -g[0] / static_cast<double>(n);
                  for (std::size_t r = 0; r < n; ++r) {
                    double dot = 0.0, na2 = 0.0, nb2 = 0.0;
                    for (std::size_t c = 0; c < m; ++c) {
                      dot += av[r * m + c] * bv[r * m + c];
                      na2 += av[r * m + c] * av[r * m + c];
                      nb2 += bv[r * m + c] * bv[r * m + c];
                    }
                    const double na = std::sqrt(na2), nb = std::sqrt(nb2);
                    const double da = std::max(na, eps), db = std::max(nb, eps);
                    const double cosv = dot / (da * db);
                    // d cos / d a = b / (da db) - [na > eps] cos a / (na da)
                    if (t.requires_grad(ia)) {
                      Array& d = t.grad_buffer(ia);
                      for (std::size_t c = 0; c < m; ++c) {
                        double v = bv[r * m + c] / (da * db);
                        if (na > eps) v -= cosv * av[r * m + c] / (na * da);
                        d[r * m + c] += w * v;
                      }
                    }
                    if (t.requires_grad(ib)) {
                      Array& d = t.grad_buffer(ib);
                      for (std::size_t c = 0; c < m; ++c) {
                        double v = av[r * m + c] / (da * db);
                        if (nb > eps) v -= cosv * bv[r * m + c] / (nb * db);
                        d[r * m + c] += w * v;
                      }
                    }
                  }
                });
}

Var softmax_cross_entropy(const Var& logits, const std::vector<int>& labels) {
  Tape& tape = tape_of(logits);
  const Array& L = logits.value();
  const std::size_t n = L.rows(), k = L.cols();
  if (labels.size() != n)
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for logits " +
                     to_string(L.shape()));
  Array prob(L.shape());
  double loss = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    if (labels[r] < 0 || static_cast<std::size_t>(labels[r]) >= k)
      throw ShapeError("softmax_cross_entropy: label " + std::to_string(labels[r]) + " out of range");
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c) mx = std::max(mx, L[r * k + c]);
    double z = 0.0;
    for (std::size_t c = 0; c < k; ++c) z += (prob[r * k + c] = std::exp(L[r * k + c] - mx));
    for (std::size_t c = 0; c < k; ++c) prob[r * k + c] /= z;
    loss -= (L[r * k + static_cast<std::size_t>(labels[r])] - mx) - std::log(z);
  }
  const std::size_t il = logits.id();
  return finish(tape, Array::scalar(loss / static_cast<double>(n)), "softmax_cross_entropy", {logits},
                [il, labels, n, k, prob = std::move(prob)](Tape& t, const Array& g) {
                  Array& d = t.grad_buffer(il);
                  const double w = g[0] / static_cast<double>(n);
                  for (std::size_t r = 0; r < n; ++r)
                    for (std::size_t c = 0; c < k; ++c) {
                      const double onehot = static_cast<int>(c) == labels[r] ? 1.0 : 0.0;
                      d[r * k + c] += w * (prob[r * k + c] - onehot);
                    }
                });
}

}  // namespace evssl::num
