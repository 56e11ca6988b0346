#include <Eigen/Core>
#include <cmath>

#include "hgwm/autodiff.hpp"
#include "hgwm/errors.hpp"

namespace hgwm::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

void require(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

std::string mismatch(const char* op, const Tensor& a, const Tensor& b) {
  return std::string(op) + ": incompatible shapes " + shape_str(a.shape()) + " and " +
         shape_str(b.shape());
}

// Accumulates into a parent's gradient, skipping constants.
template <typename F>
void accumulate(Node& self, std::size_t i, F&& fn) {
  Node& p = *self.parents[i];
  if (!p.requires_grad) return;
  p.ensure_grad();
  fn(p.grad);
}

std::size_t last_dim(const Tensor& x) {
  require(x.rank() >= 1, "op needs at least rank 1, got " + shape_str(x.shape()));
  return x.shape().back();
}

template <typename Fwd, typename Deriv>
Tensor unary(const char* name, const Tensor& x, Fwd fwd, Deriv deriv) {
  std::vector<double> out(x.numel());
  const auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(in[i]);
  return make_result(name, x.shape(), std::move(out), {x}, [deriv](Node& self) {
    const auto& xin = self.parents[0]->data;
    accumulate(self, 0, [&](std::vector<double>& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * deriv(xin[i], self.data[i]);
    });
  });
}

enum class Broadcast { kSame, kLeftScalar, kRightScalar };

Broadcast broadcast_kind(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) return Broadcast::kSame;
  if (b.numel() == 1) return Broadcast::kRightScalar;
  if (a.numel() == 1) return Broadcast::kLeftScalar;
  throw ShapeError(mismatch(op, a, b));
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.rank() == 2, "matmul: left operand must be rank 2, got " + shape_str(a.shape()));
  require(b.rank() == 1 || b.rank() == 2, "matmul: right operand must be rank 1 or 2, got " + shape_str(b.shape()));
  const std::size_t m = a.dim(0);
  const std::size_t k = a.dim(1);
  const std::size_t n = b.rank() == 2 ? b.dim(1) : 1;
  if (b.dim(0) != k) throw ShapeError(mismatch("matmul", a, b));
  std::vector<double> out(m * n);
  MapMat(out.data(), m, n).noalias() = CMapMat(a.data().data(), m, k) * CMapMat(b.data().data(), k, n);
  Shape shape = b.rank() == 2 ? Shape{m, n} : Shape{m};
  return make_result("matmul", std::move(shape), std::move(out), {a, b}, [m, k, n](Node& self) {
    const CMapMat g(self.grad.data(), m, n);
    const auto& A = self.parents[0]->data;
    const auto& B = self.parents[1]->data;
    accumulate(self, 0, [&](std::vector<double>& ga) {
      MapMat(ga.data(), m, k).noalias() += g * CMapMat(B.data(), k, n).transpose();
    });
    accumulate(self, 1, [&](std::vector<double>& gb) {
      MapMat(gb.data(), k, n).noalias() += CMapMat(A.data(), m, k).transpose() * g;
    });
  });
}

namespace {

template <typename Op, typename DA, typename DB>
Tensor binary(const char* name, const Tensor& a, const Tensor& b, Op op, DA da, DB db) {
  const Broadcast kind = broadcast_kind(name, a, b);
  const Shape shape = kind == Broadcast::kLeftScalar ? b.shape() : a.shape();
  const std::size_t n = numel(shape);
  const auto A = a.data();
  const auto B = b.data();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = kind == Broadcast::kLeftScalar ? A[0] : A[i];
    const double y = kind == Broadcast::kRightScalar ? B[0] : B[i];
    out[i] = op(x, y);
  }
  return make_result(name, shape, std::move(out), {a, b}, [kind, da, db](Node& self) {
    const auto& A = self.parents[0]->data;
    const auto& B = self.parents[1]->data;
    const std::size_t n = self.grad.size();
    auto xa = [&](std::size_t i) { return kind == Broadcast::kLeftScalar ? A[0] : A[i]; };
    auto yb = [&](std::size_t i) { return kind == Broadcast::kRightScalar ? B[0] : B[i]; };
    accumulate(self, 0, [&](std::vector<double>& g) {
      for (std::size_t i = 0; i < n; ++i) {
        g[kind == Broadcast::kLeftScalar ? 0 : i] += self.grad[i] * da(xa(i), yb(i));
      }
    });
    accumulate(self, 1, [&](std::vector<double>& g) {
      for (std::size_t i = 0; i < n; ++i) {
        g[kind == Broadcast::kRightScalar ? 0 : i] += self.grad[i] * db(xa(i), yb(i));
      }
    });
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary("add", a, b, [](double x, double y) { return x + y; },
                [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary("sub", a, b, [](double x, double y) { return x - y; },
                [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary("mul", a, b, [](double x, double y) { return x * y; },
                [](double, double y) { return y; }, [](double x, double) { return x; });
}

Tensor scale(const Tensor& a, double s) {
  return unary("scale", a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  require(x.rank() == 2 && bias.rank() == 1 && bias.dim(0) == x.dim(1), mismatch("add_bias", x, bias));
  const std::size_t m = x.dim(0);
  const std::size_t n = x.dim(1);
  std::vector<double> out(x.data().begin(), x.data().end());
  const auto b = bias.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += b[j];
  return make_result("add_bias", x.shape(), std::move(out), {x, bias}, [m, n](Node& self) {
    accumulate(self, 0, [&](std::vector<double>& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
    accumulate(self, 1, [&](std::vector<double>& g) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[i * n + j];
    });
  });
}

Tensor broadcast_rows(const Tensor& row, std::size_t rows) {
  require(row.rank() == 1, "broadcast_rows: expected rank 1, got " + shape_str(row.shape()));
  const std::size_t n = row.dim(0);
  std::vector<double> out(rows * n);
  for (std::size_t i = 0; i < rows; ++i)
    std::copy(row.data().begin(), row.data().end(), out.begin() + static_cast<std::ptrdiff_t>(i * n));
  return make_result("broadcast_rows", {rows, n}, std::move(out), {row}, [rows, n](Node& self) {
    accumulate(self, 0, [&](std::vector<double>& g) {
      for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[i * n + j];
    });
  });
}

Tensor relu(const Tensor& x) {
  return unary("relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
               [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor tanh(const Tensor& x) {
  return unary("tanh", x, [](double v) { return std::tanh(v); },
               [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& x) {
  return unary("sigmoid", x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
               [](double, double y) { return y * (1.0 - y); });
}

Tensor softplus(const Tensor& x) {
  return unary("softplus", x,
               [](double v) { return v > 30.0 ? v : std::log1p(std::exp(v)); },
               [](double v, double) { return 1.0 / (1.0 + std::exp(-v)); });
}

Tensor softmax(const Tensor& x) {
  const std::size_t n = last_dim(x);
  const std::size_t rows = x.numel() / n;
  std::vector<double> out(x.numel());
  const auto in = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = in.data() + r * n;
    double* yr = out.data() + r * n;
    double mx = xr[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, xr[j]);
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += (yr[j] = std::exp(xr[j] - mx));
    for (std::size_t j = 0; j < n; ++j) yr[j] /= s;
  }
  return make_result("softmax", x.shape(), std::move(out), {x}, [rows, n](Node& self) {
    accumulate(self, 0, [&](std::vector<double>& g) {
      for (std::size_t r = 0; r < rows; ++r) {
        const double* y = self.data.data() + r * n;
        const double* gy = self.grad.data() + r * n;
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += gy[j] * y[j];
        for (std::size_t j = 0; j < n; ++j) g[r * n + j] += y[j] * (gy[j] - dot);
      }
    });
  });
}

Tensor log_softmax(const Tensor& x) {
  const std::size_t n = last_dim(x);
  const std::size_t rows = x.numel() / n;
  std::vector<double> out(x.numel());
  const auto in = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = in.data() + r * n;
    double mx = xr[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, xr[j]);
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += std::exp(xr[j] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] = xr[j] - lse;
  }
  return make_result("log_softmax", x.shape(), std::move(out), {x}, [rows, n](Node& self) {
    accumulate(self, 0, [&](std::vector<double>& g) {
      for (std::size_t r = 0; r < rows; ++r) {
        const double* y = self.data.data() + r * n;
        const double* gy = self.grad.data() + r * n;
        double total = 0.0;
        for (std::size_t j = 0; j < n; ++j) total += gy[j];
        for (std::size_t j = 0; j < n; ++j) g[r * n + j] += gy[j] - std::exp(y[j]) * total;
      }
    });
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const std::size_t n = last_dim(x);
  require(gamma.shape() == Shape{n} && beta.shape() == Shape{n}, mismatch("layer_norm", x, gamma));
  const std::size_t rows = x.numel() / n;
  std::vector<double> out(x.numel());
  auto xhat = std::make_shared<std::vector<double>>(x.numel());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  const auto in = x.data();
  const auto gm = gamma.data();
  const auto bt = beta.data();
  for (std::size_t r = 0; r < rows; ++r) {
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += in[r * n + j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (in[r * n + j] - mu) * (in[r * n + j] - mu);
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t j = 0; j < n; ++j) {
      const double h = (in[r * n + j] - mu) * is;
      (*xhat)[r * n + j] = h;
      out[r * n + j] = gm[j] * h + bt[j];
    }
  }
  return make_result("layer_norm", x.shape(), std::move(out), {x, gamma, beta},
                     [rows, n, xhat, inv_std](Node& self) {
                       const auto& gm = self.parents[1]->data;
                       accumulate(self, 0, [&](std::vector<double>& g) {
                         for (std::size_t r = 0; r < rows; ++r) {
                           double m1 = 0.0;
                           double m2 = 0.0;
                           for (std::size_t j = 0; j < n; ++j) {
                             const double dh = self.grad[r * n + j] * gm[j];
                             m1 += dh;
                             m2 += dh * (*xhat)[r * n + j];
                           }
                           m1 /= static_cast<double>(n);
                           m2 /= static_cast<double>(n);
                           for (std::size_t j = 0; j < n; ++j) {
                             const double dh = self.grad[r * n + j] * gm[j];
                             g[r * n + j] += (*inv_std)[r] * (dh - m1 - (*xhat)[r * n + j] * m2);
                           }
                         }
                       });
                       accumulate(self, 1, [&](std::vector<double>& g) {
                         for (std::size_t i = 0; i < self.grad.size(); ++i)
                           g[i % n] += self.grad[i] * (*xhat)[i];
                       });
                       accumulate(self, 2, [&](std::vector<double>& g) {
                         for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % n] += self.grad[i];
                       });
                     });
}

Tensor normalize_rows(const Tensor& x) {
  const std::size_t n = last_dim(x);
  const std::size_t rows = x.numel() / n;
  std::vector<double> out(x.numel());
  auto norms = std::make_shared<std::vector<double>>(rows);
  const auto in = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += in[r * n + j] * in[r * n + j];
    const double nr = std::sqrt(s);
    if (!(nr > 0.0)) throw NonFiniteError("normalize_rows: zero-length row");
    (*norms)[r] = nr;
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] = in[r * n + j] / nr;
  }
  return make_result("normalize_rows", x.shape(), std::move(out), {x}, [rows, n, norms](Node& self) {
    accumulate(self, 0, [&](std::vector<double>& g) {
      for (std::size_t r = 0; r < rows; ++r) {
        const double* y = self.data.data() + r * n;
        const double* gy = self.grad.data() + r * n;
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += y[j] * gy[j];
        for (std::size_t j = 0; j < n; ++j) g[r * n + j] += (gy[j] - y[j] * dot) / (*norms)[r];
      }
    });
  });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  require(!parts.empty(), "concat: no inputs");
  const Shape& ref = parts.front().shape();
  require(axis < ref.size(), "concat: axis out of range for " + shape_str(ref));
  std::size_t outer = 1;
  std::size_t inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= ref[i];
  for (std::size_t i = axis + 1; i < ref.size(); ++i) inner *= ref[i];
  std::vector<std::size_t> widths;
  std::size_t total_axis = 0;
  for (const Tensor& p : parts) {
    bool ok = p.rank() == ref.size();
    for (std::size_t i = 0; ok && i < ref.size(); ++i) ok = i == axis || p.dim(i) == ref[i];
    if (!ok) throw ShapeError(mismatch("concat", parts.front(), p));
    widths.push_back(p.dim(axis) * inner);
    total_axis += p.dim(axis);
  }
  Shape shape = ref;
  shape[axis] = total_axis;
  const std::size_t row = total_axis * inner;
  std::vector<double> out(outer * row);
  std::size_t col = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto d = parts[k].data();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(d.data() + o * widths[k], widths[k], out.data() + o * row + col);
    col += widths[k];
  }
  return make_result("concat", std::move(shape), std::move(out), parts, [outer, row, widths](Node& self) {
    std::size_t col = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      accumulate(self, k, [&](std::vector<double>& g) {
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t j = 0; j < widths[k]; ++j) g[o * widths[k] + j] += self.grad[o * row + col + j];
      });
      col += widths[k];
    }
  });
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
  require(axis < x.rank(), "slice: axis out of range for " + shape_str(x.shape()));
  require(begin <= end && end <= x.dim(axis),
          "slice: range [" + std::to_string(begin) + ", " + std::to_string(end) + ") outside " +
              shape_str(x.shape()));
  std::size_t outer = 1;
  std::size_t inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  const std::size_t src_row = x.dim(axis) * inner;
  const std::size_t width = (end - begin) * inner;
  const std::size_t off = begin * inner;
  std::vector<double> out(outer * width);
  const auto d = x.data();
  for (std::size_t o = 0; o < outer; ++o) std::copy_n(d.data() + o * src_row + off, width, out.data() + o * width);
  Shape shape = x.shape();
  shape[axis] = end - begin;
  return make_result("slice", std::move(shape), std::move(out), {x}, [outer, src_row, width, off](Node& self) {
    accumulate(self, 0, [&](std::vector<double>& g) {
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t j = 0; j < width; ++j) g[o * src_row + off + j] += self.grad[o * width + j];
    });
  });
}

Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& rows) {
  require(x.rank() == 2, "gather_rows: expected rank 2, got " + shape_str(x.shape()));
  const std::size_t n = x.dim(1);
  std::vector<double> out(rows.size() * n);
  const auto d = x.data();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    require(rows[i] < x.dim(0), "gather_rows: row index out of range");
    std::copy_n(d.data() + rows[i] * n, n, out.data() + i * n);
  }
  return make_result("gather_rows", {rows.size(), n}, std::move(out), {x}, [rows, n](Node& self) {
    accumulate(self, 0, [&](std::vector<double>& g) {
      for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < n; ++j) g[rows[i] * n + j] += self.grad[i * n + j];
    });
  });
}

Tensor pick(const Tensor& x, const std::vector<std::size_t>& cols) {
  require(x.rank() == 2 && cols.size() == x.dim(0),
          "pick: need one column per row of " + shape_str(x.shape()));
  const std::size_t n = x.dim(1);
  std::vector<double> out(cols.size());
  for (std::size_t i = 0; i < cols.size(); ++i) {
    require(cols[i] < n, "pick: column " + std::to_string(cols[i]) + " out of range " + std::to_string(n));
    out[i] = x.data()[i * n + cols[i]];
  }
  return make_result("pick", {cols.size()}, std::move(out), {x}, [cols, n](Node& self) {
    accumulate(self, 0, [&](std::vector<double>& g) {
      for (std::size_t i = 0; i < cols.size(); ++i) g[i * n + cols[i]] += self.grad[i];
    });
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  require(numel(shape) == x.numel(), "reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  std::vector<double> out(x.data().begin(), x.data().end());
  return make_result("reshape", std::move(shape), std::move(out), {x}, [](Node& self) {
    accumulate(self, 0, [&](std::vector<double>& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
  });
}

Tensor transpose(const Tensor& x) {
  require(x.rank() == 2, "transpose: expected rank 2, got " + shape_str(x.shape()));
  const std::size_t m = x.dim(0);
  const std::size_t n = x.dim(1);
  std::vector<double> out(m * n);
  MapMat(out.data(), n, m) = CMapMat(x.data().data(), m, n).transpose();
  return make_result("transpose", {n, m}, std::move(out), {x}, [m, n](Node& self) {
    accumulate(self, 0, [&](std::vector<double>& g) {
      MapMat(g.data(), m, n) += CMapMat(self.grad.data(), n, m).transpose();
    });
  });
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  return make_result("sum", {}, {s}, {x}, [](Node& self) {
    accumulate(self, 0, [&](std::vector<double>& g) {
      for (double& v : g) v += self.grad[0];
    });
  });
}

Tensor mean(const Tensor& x) {
  require(x.numel() > 0, "mean of an empty tensor");
  const double inv = 1.0 / static_cast<double>(x.numel());
  double s = 0.0;
  for (double v : x.data()) s += v;
  return make_result("mean", {}, {s * inv}, {x}, [inv](Node& self) {
    accumulate(self, 0, [&](std::vector<double>& g) {
      for (double& v : g) v += self.grad[0] * inv;
    });
  });
}

Tensor sum_sq(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v * v;
  return make_result("sum_sq", {}, {s}, {x}, [](Node& self) {
    const auto& xin = self.parents[0]->data;
    accumulate(self, 0, [&](std::vector<double>& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += 2.0 * xin[i] * self.grad[0];
    });
  });
}

namespace {

// Padded grid of side g + 2; the conv is evaluated over a contiguous band of
// padded rows covering every interior cell, so each of the 27 taps is one GEMM
// over a shifted row window. Rows that land on the padding are discarded.
struct ConvLayout {
  std::size_t g;
  std::size_t p;
  std::size_t first;  // padded index of interior cell (0,0,0)
  std::size_t band;   // number of rows from first to the last interior cell
  std::array<std::ptrdiff_t, 27> taps;

  explicit ConvLayout(std::size_t grid) : g(grid), p(grid + 2) {
    first = (p + 1) * p + 1;
    const std::size_t last = (g * p + g) * p + g;
    band = last - first + 1;
    std::size_t k = 0;
    for (int dx = -1; dx <= 1; ++dx)
      for (int dy = -1; dy <= 1; ++dy)
        for (int dz = -1; dz <= 1; ++dz)
          taps[k++] = (static_cast<std::ptrdiff_t>(dx) * static_cast<std::ptrdiff_t>(p) + dy) *
                          static_cast<std::ptrdiff_t>(p) + dz;
  }
  std::size_t padded(std::size_t x, std::size_t y, std::size_t z) const {
    return ((x + 1) * p + (y + 1)) * p + (z + 1);
  }
  std::size_t cells() const { return g * g * g; }
  std::size_t padded_cells() const { return p * p * p; }
};

}  // namespace

Tensor conv3d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t grid) {
  const ConvLayout L(grid);
  require(x.rank() == 2 && x.dim(0) == L.cells(),
          "conv3d: input " + shape_str(x.shape()) + " is not a grid of side " + std::to_string(grid));
  const std::size_t cin = x.dim(1);
  require(weight.rank() == 2 && weight.dim(0) == 27 * cin, mismatch("conv3d", x, weight));
  const std::size_t cout = weight.dim(1);
  require(bias.shape() == Shape{cout}, mismatch("conv3d", weight, bias));

  auto padded = std::make_shared<RowMat>(RowMat::Zero(static_cast<Eigen::Index>(L.padded_cells()),
                                                      static_cast<Eigen::Index>(cin)));
  const auto xd = x.data();
  for (std::size_t a = 0; a < grid; ++a)
    for (std::size_t b = 0; b < grid; ++b)
      for (std::size_t c = 0; c < grid; ++c) {
        const std::size_t src = (a * grid + b) * grid + c;
        std::copy_n(xd.data() + src * cin, cin, padded->data() + L.padded(a, b, c) * cin);
      }

  const auto band = static_cast<Eigen::Index>(L.band);
  RowMat acc = RowMat::Zero(band, static_cast<Eigen::Index>(cout));
  const CMapMat W(weight.data().data(), 27 * cin, cout);
  for (std::size_t k = 0; k < 27; ++k) {
    const auto start = static_cast<Eigen::Index>(static_cast<std::ptrdiff_t>(L.first) + L.taps[k]);
    acc.noalias() += padded->middleRows(start, band) *
                     W.middleRows(static_cast<Eigen::Index>(k * cin), static_cast<Eigen::Index>(cin));
  }
  std::vector<double> out(L.cells() * cout);
  const auto bd = bias.data();
  for (std::size_t a = 0; a < grid; ++a)
    for (std::size_t b = 0; b < grid; ++b)
      for (std::size_t c = 0; c < grid; ++c) {
        const std::size_t dst = (a * grid + b) * grid + c;
        const std::size_t row = L.padded(a, b, c) - L.first;
        for (std::size_t o = 0; o < cout; ++o) out[dst * cout + o] = acc(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(o)) + bd[o];
      }

  return make_result("conv3d", {L.cells(), cout}, std::move(out), {x, weight, bias},
                     [L, cin, cout, padded](Node& self) {
                       const auto band = static_cast<Eigen::Index>(L.band);
                       RowMat gband = RowMat::Zero(band, static_cast<Eigen::Index>(cout));
                       for (std::size_t a = 0; a < L.g; ++a)
                         for (std::size_t b = 0; b < L.g; ++b)
                           for (std::size_t c = 0; c < L.g; ++c) {
                             const std::size_t src = (a * L.g + b) * L.g + c;
                             const auto row = static_cast<Eigen::Index>(L.padded(a, b, c) - L.first);
                             for (std::size_t o = 0; o < cout; ++o)
                               gband(row, static_cast<Eigen::Index>(o)) = self.grad[src * cout + o];
                           }
                       const auto ci = static_cast<Eigen::Index>(cin);
                       accumulate(self, 1, [&](std::vector<double>& gw) {
                         MapMat GW(gw.data(), 27 * ci, static_cast<Eigen::Index>(cout));
                         for (std::size_t k = 0; k < 27; ++k) {
                           const auto start = static_cast<Eigen::Index>(static_cast<std::ptrdiff_t>(L.first) + L.taps[k]);
                           GW.middleRows(static_cast<Eigen::Index>(k) * ci, ci).noalias() +=
                               padded->middleRows(start, band).transpose() * gband;
                         }
                       });
                       accumulate(self, 2, [&](std::vector<double>& gb) {
                         for (Eigen::Index r = 0; r < band; ++r)
                           for (std::size_t o = 0; o < cout; ++o) gb[o] += gband(r, static_cast<Eigen::Index>(o));
                       });
                       accumulate(self, 0, [&](std::vector<double>& gx) {
                         const auto& wd = self.parents[1]->data;
                         const CMapMat W(wd.data(), 27 * ci, static_cast<Eigen::Index>(cout));
                         RowMat gpad = RowMat::Zero(static_cast<Eigen::Index>(L.padded_cells()), ci);
                         for (std::size_t k = 0; k < 27; ++k) {
                           const auto start = static_cast<Eigen::Index>(static_cast<std::ptrdiff_t>(L.first) + L.taps[k]);
                           gpad.middleRows(start, band).noalias() +=
                               gband * W.middleRows(static_cast<Eigen::Index>(k) * ci, ci).transpose();
                         }
                         for (std::size_t a = 0; a < L.g; ++a)
                           for (std::size_t b = 0; b < L.g; ++b)
                             for (std::size_t c = 0; c < L.g; ++c) {
                               const std::size_t dst = (a * L.g + b) * L.g + c;
                               const std::size_t row = L.padded(a, b, c);
                               for (std::size_t i = 0; i < cin; ++i)
                                 gx[dst * cin + i] += gpad(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(i));
                             }
                       });
                     });
}

}  // namespace hgwm::ad
