// SPDX-License-Identifier: Apache-2.0
#include "fmdd/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace fmdd::ops {

using detail::grad_buffer;
using detail::make_result;

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw ShapeError(msg);
}

void require_same(const Tensor& a, const Tensor& b, const char* op) {
  require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                      " vs " + shape_str(b.shape()));
}

void require_rank(const Tensor& x, std::size_t r, const char* op) {
  require(x.rank() == r, std::string(op) + ": expected rank " + std::to_string(r) + ", got " +
                             shape_str(x.shape()));
}

// Elementwise unary op with derivative expressed through input and output.
template <class F, class D>
Tensor unary(std::string_view name, const Tensor& x, F f, D dfdx) {
  std::vector<double> out(x.size());
  auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xd[i]);
  auto xi = x.impl();
  auto yv = std::make_shared<std::vector<double>>(out);
  return make_result(name, x.shape(), std::move(out), {&x},
                     [xi, yv, dfdx](std::span<const double> g) {
                       if (!xi->requires_grad) return;
                       auto gx = grad_buffer(*xi);
                       for (std::size_t i = 0; i < g.size(); ++i)
                         gx[i] += g[i] * dfdx(xi->data[i], (*yv)[i]);
                     });
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  require(b.dim(0) == k, "matmul: inner extents differ, " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
  std::vector<double> out(m * n, 0.0);
  auto ad = a.data(), bd = b.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ad[i * k + p];
      if (av == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += av * bd[p * n + j];
    }
  auto ai = a.impl(), bi = b.impl();
  return make_result("matmul", {m, n}, std::move(out), {&a, &b},
                     [ai, bi, m, k, n](std::span<const double> g) {
                       if (ai->requires_grad) {
                         auto ga = grad_buffer(*ai);
                         for (std::size_t i = 0; i < m; ++i)
                           for (std::size_t p = 0; p < k; ++p) {
                             double s = 0.0;
                             for (std::size_t j = 0; j < n; ++j)
                               s += g[i * n + j] * bi->data[p * n + j];
                             ga[i * k + p] += s;
                           }
                       }
                       if (bi->requires_grad) {
                         auto gb = grad_buffer(*bi);
                         for (std::size_t i = 0; i < m; ++i)
                           for (std::size_t p = 0; p < k; ++p) {
                             const double av = ai->data[i * k + p];
                             if (av == 0.0) continue;
                             for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += av * g[i * n + j];
                           }
                       }
                     });
}

Tensor transpose(const Tensor& x) {
  require_rank(x, 2, "transpose");
  const std::size_t r = x.dim(0), c = x.dim(1);
  std::vector<double> out(r * c);
  auto xd = x.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = xd[i * c + j];
  auto xi = x.impl();
  return make_result("transpose", {c, r}, std::move(out), {&x},
                     [xi, r, c](std::span<const double> g) {
                       if (!xi->requires_grad) return;
                       auto gx = grad_buffer(*xi);
                       for (std::size_t i = 0; i < r; ++i)
                         for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += g[j * r + i];
                     });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  auto ai = a.impl(), bi = b.impl();
  return make_result("add", a.shape(), std::move(out), {&a, &b}, [ai, bi](std::span<const double> g) {
    for (auto* t : {ai.get(), bi.get()}) {
      if (!t->requires_grad) continue;
      auto gt = grad_buffer(*t);
      for (std::size_t i = 0; i < g.size(); ++i) gt[i] += g[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same(a, b, "sub");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  auto ai = a.impl(), bi = b.impl();
  return make_result("sub", a.shape(), std::move(out), {&a, &b}, [ai, bi](std::span<const double> g) {
    if (ai->requires_grad) {
      auto ga = grad_buffer(*ai);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (bi->requires_grad) {
      auto gb = grad_buffer(*bi);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same(a, b, "mul");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  auto ai = a.impl(), bi = b.impl();
  return make_result("mul", a.shape(), std::move(out), {&a, &b}, [ai, bi](std::span<const double> g) {
    if (ai->requires_grad) {
      auto ga = grad_buffer(*ai);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bi->data[i];
    }
    if (bi->requires_grad) {
      auto gb = grad_buffer(*bi);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * ai->data[i];
    }
  });
}

Tensor div(const Tensor& a, const Tensor& b) {
  require_same(a, b, "div");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] / b[i];
  auto ai = a.impl(), bi = b.impl();
  return make_result("div", a.shape(), std::move(out), {&a, &b}, [ai, bi](std::span<const double> g) {
    if (ai->requires_grad) {
      auto ga = grad_buffer(*ai);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / bi->data[i];
    }
    if (bi->requires_grad) {
      auto gb = grad_buffer(*bi);
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double bv = bi->data[i];
        gb[i] -= g[i] * ai->data[i] / (bv * bv);
      }
    }
  });
}

Tensor add_bias(const Tensor& x, const Tensor& b) {
  require_rank(b, 1, "add_bias");
  const std::size_t n = b.dim(0);
  require(x.shape().back() == n, "add_bias: bias " + shape_str(b.shape()) + " does not match " +
                                     shape_str(x.shape()));
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + b[i % n];
  auto xi = x.impl(), bi = b.impl();
  return make_result("add_bias", x.shape(), std::move(out), {&x, &b},
                     [xi, bi, n](std::span<const double> g) {
                       if (xi->requires_grad) {
                         auto gx = grad_buffer(*xi);
                         for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                       }
                       if (bi->requires_grad) {
                         auto gb = grad_buffer(*bi);
                         for (std::size_t i = 0; i < g.size(); ++i) gb[i % n] += g[i];
                       }
                     });
}

Tensor scale(const Tensor& x, double s) {
  return unary("scale", x, [s](double v) { return v * s; }, [s](double, double) { return s; });
}

Tensor add_scalar(const Tensor& x, double s) {
  return unary("add_scalar", x, [s](double v) { return v + s; }, [](double, double) { return 1.0; });
}

Tensor pow_scalar(const Tensor& x, double e) {
  return unary(
      "pow_scalar", x, [e](double v) { return std::pow(v, e); },
      [e](double v, double) { return e == 0.0 ? 0.0 : e * std::pow(v, e - 1.0); });
}

Tensor clamp_min(const Tensor& x, double lo) {
  return unary(
      "clamp_min", x, [lo](double v) { return std::max(v, lo); },
      [lo](double v, double) { return v >= lo ? 1.0 : 0.0; });
}

Tensor log(const Tensor& x) {
  return unary("log", x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor gelu(const Tensor& x) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  const double inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
  return unary(
      "gelu", x, [&](double v) { return 0.5 * v * (1.0 + std::erf(v * inv_sqrt2)); },
      [inv_sqrt_2pi](double v, double) {
        return 0.5 * (1.0 + std::erf(v * inv_sqrt2)) + v * inv_sqrt_2pi * std::exp(-0.5 * v * v);
      });
}

Tensor relu(const Tensor& x) {
  return unary(
      "relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      "sigmoid", x,
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor softmax(const Tensor& x) {
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.size() / n;
  std::vector<double> out(x.size());
  auto xd = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xd.data() + r * n;
    double* y = out.data() + r * n;
    const double mx = *std::max_element(in, in + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += (y[j] = std::exp(in[j] - mx));
    for (std::size_t j = 0; j < n; ++j) y[j] /= z;
  }
  auto xi = x.impl();
  auto yv = std::make_shared<std::vector<double>>(out);
  return make_result("softmax", x.shape(), std::move(out), {&x},
                     [xi, yv, n, rows](std::span<const double> g) {
                       if (!xi->requires_grad) return;
                       auto gx = grad_buffer(*xi);
                       for (std::size_t r = 0; r < rows; ++r) {
                         const double* y = yv->data() + r * n;
                         double dot = 0.0;
                         for (std::size_t j = 0; j < n; ++j) dot += g[r * n + j] * y[j];
                         for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += y[j] * (g[r * n + j] - dot);
                       }
                     });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  require_rank(gamma, 1, "layer_norm");
  require_same(gamma, beta, "layer_norm");
  const std::size_t d = gamma.dim(0);
  require(x.shape().back() == d, "layer_norm: gamma " + shape_str(gamma.shape()) +
                                     " does not match " + shape_str(x.shape()));
  const std::size_t rows = x.size() / d;
  auto xhat = std::make_shared<std::vector<double>>(x.size());
  auto inv = std::make_shared<std::vector<double>>(rows);
  std::vector<double> out(x.size());
  auto xd = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xd.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += in[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (in[j] - mu) * (in[j] - mu);
    var /= static_cast<double>(d);
    const double s = 1.0 / std::sqrt(var + eps);
    (*inv)[r] = s;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (in[j] - mu) * s;
      (*xhat)[r * d + j] = h;
      out[r * d + j] = h * gamma[j] + beta[j];
    }
  }
  auto xi = x.impl(), gi = gamma.impl(), bi = beta.impl();
  return make_result(
      "layer_norm", x.shape(), std::move(out), {&x, &gamma, &beta},
      [xi, gi, bi, xhat, inv, d, rows](std::span<const double> g) {
        if (gi->requires_grad) {
          auto gg = grad_buffer(*gi);
          for (std::size_t i = 0; i < g.size(); ++i) gg[i % d] += g[i] * (*xhat)[i];
        }
        if (bi->requires_grad) {
          auto gb = grad_buffer(*bi);
          for (std::size_t i = 0; i < g.size(); ++i) gb[i % d] += g[i];
        }
        if (!xi->requires_grad) return;
        auto gx = grad_buffer(*xi);
        std::vector<double> dh(d);
        for (std::size_t r = 0; r < rows; ++r) {
          double mean_dh = 0.0, mean_dh_h = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            dh[j] = g[r * d + j] * gi->data[j];
            mean_dh += dh[j];
            mean_dh_h += dh[j] * (*xhat)[r * d + j];
          }
          mean_dh /= static_cast<double>(d);
          mean_dh_h /= static_cast<double>(d);
          for (std::size_t j = 0; j < d; ++j)
            gx[r * d + j] += (*inv)[r] * (dh[j] - mean_dh - (*xhat)[r * d + j] * mean_dh_h);
        }
      });
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  auto xi = x.impl();
  return make_result("sum", {1}, {s}, {&x}, [xi](std::span<const double> g) {
    if (!xi->requires_grad) return;
    auto gx = grad_buffer(*xi);
    for (auto& v : gx) v += g[0];
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.size())); }

Tensor mean_rows(const Tensor& x) {
  require_rank(x, 2, "mean_rows");
  const std::size_t r = x.dim(0), c = x.dim(1);
  std::vector<double> out(c, 0.0);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j] += x[i * c + j];
  for (auto& v : out) v /= static_cast<double>(r);
  auto xi = x.impl();
  return make_result("mean_rows", {c}, std::move(out), {&x}, [xi, r, c](std::span<const double> g) {
    if (!xi->requires_grad) return;
    auto gx = grad_buffer(*xi);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += g[j] / static_cast<double>(r);
  });
}

Tensor global_avg_pool(const Tensor& x) {
  require_rank(x, 3, "global_avg_pool");
  const std::size_t c = x.dim(0), hw = x.dim(1) * x.dim(2);
  std::vector<double> out(c, 0.0);
  for (std::size_t ch = 0; ch < c; ++ch) {
    double s = 0.0;
    for (std::size_t i = 0; i < hw; ++i) s += x[ch * hw + i];
    out[ch] = s / static_cast<double>(hw);
  }
  auto xi = x.impl();
  return make_result("global_avg_pool", {c}, std::move(out), {&x},
                     [xi, c, hw](std::span<const double> g) {
                       if (!xi->requires_grad) return;
                       auto gx = grad_buffer(*xi);
                       for (std::size_t ch = 0; ch < c; ++ch)
                         for (std::size_t i = 0; i < hw; ++i)
                           gx[ch * hw + i] += g[ch] / static_cast<double>(hw);
                     });
}

Tensor reshape(const Tensor& x, Shape shape) {
  require(numel(shape) == x.size(),
          "reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  std::vector<double> out(x.data().begin(), x.data().end());
  auto xi = x.impl();
  return make_result("reshape", std::move(shape), std::move(out), {&x}, [xi](std::span<const double> g) {
    if (!xi->requires_grad) return;
    auto gx = grad_buffer(*xi);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end) {
  require(begin < end && end <= x.dim(0), "slice_rows: range [" + std::to_string(begin) + ", " +
                                              std::to_string(end) + ") outside " +
                                              shape_str(x.shape()));
  const std::size_t inner = x.size() / x.dim(0);
  Shape shape = x.shape();
  shape[0] = end - begin;
  std::vector<double> out(x.data().begin() + static_cast<std::ptrdiff_t>(begin * inner),
                          x.data().begin() + static_cast<std::ptrdiff_t>(end * inner));
  auto xi = x.impl();
  const std::size_t offset = begin * inner;
  return make_result("slice_rows", std::move(shape), std::move(out), {&x},
                     [xi, offset](std::span<const double> g) {
                       if (!xi->requires_grad) return;
                       auto gx = grad_buffer(*xi);
                       for (std::size_t i = 0; i < g.size(); ++i) gx[offset + i] += g[i];
                     });
}

Tensor select(const Tensor& x, std::size_t index) {
  require(x.rank() >= 2, "select: needs rank >= 2, got " + shape_str(x.shape()));
  Shape inner(x.shape().begin() + 1, x.shape().end());
  return reshape(slice_rows(x, index, index + 1), std::move(inner));
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end) {
  require_rank(x, 2, "slice_cols");
  const std::size_t r = x.dim(0), c = x.dim(1), w = end - begin;
  require(begin < end && end <= c, "slice_cols: range outside " + shape_str(x.shape()));
  std::vector<double> out(r * w);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < w; ++j) out[i * w + j] = x[i * c + begin + j];
  auto xi = x.impl();
  return make_result("slice_cols", {r, w}, std::move(out), {&x},
                     [xi, r, c, w, begin](std::span<const double> g) {
                       if (!xi->requires_grad) return;
                       auto gx = grad_buffer(*xi);
                       for (std::size_t i = 0; i < r; ++i)
                         for (std::size_t j = 0; j < w; ++j) gx[i * c + begin + j] += g[i * w + j];
                     });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  require(!parts.empty(), "concat_rows: no inputs");
  Shape shape = parts.front().shape();
  std::size_t rows = 0;
  for (const auto& p : parts) {
    require(p.rank() == shape.size() &&
                std::equal(p.shape().begin() + 1, p.shape().end(), shape.begin() + 1),
            "concat_rows: trailing extents differ, " + shape_str(p.shape()) + " vs " +
                shape_str(shape));
    rows += p.dim(0);
  }
  shape[0] = rows;
  std::vector<double> out;
  out.reserve(numel(shape));
  std::vector<std::shared_ptr<TensorImpl>> impls;
  for (const auto& p : parts) {
    out.insert(out.end(), p.data().begin(), p.data().end());
    impls.push_back(p.impl());
  }
  return make_result("concat_rows", std::move(shape), std::move(out), parts,
                     [impls](std::span<const double> g) {
                       std::size_t off = 0;
                       for (const auto& t : impls) {
                         if (t->requires_grad) {
                           auto gt = grad_buffer(*t);
                           for (std::size_t i = 0; i < gt.size(); ++i) gt[i] += g[off + i];
                         }
                         off += t->data.size();
                       }
                     });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  require(!parts.empty(), "concat_cols: no inputs");
  const std::size_t r = parts.front().dim(0);
  std::size_t c = 0;
  std::vector<std::size_t> widths;
  std::vector<std::shared_ptr<TensorImpl>> impls;
  for (const auto& p : parts) {
    require(p.rank() == 2 && p.dim(0) == r, "concat_cols: row counts differ, " +
                                                shape_str(p.shape()) + " vs " +
                                                shape_str(parts.front().shape()));
    widths.push_back(p.dim(1));
    impls.push_back(p.impl());
    c += p.dim(1);
  }
  std::vector<double> out(r * c);
  std::size_t col = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.dim(1);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < w; ++j) out[i * c + col + j] = p[i * w + j];
    col += w;
  }
  return make_result("concat_cols", {r, c}, std::move(out), parts,
                     [impls, widths, r, c](std::span<const double> g) {
                       std::size_t col0 = 0;
                       for (std::size_t k = 0; k < impls.size(); ++k) {
                         const std::size_t w = widths[k];
                         if (impls[k]->requires_grad) {
                           auto gt = grad_buffer(*impls[k]);
                           for (std::size_t i = 0; i < r; ++i)
                             for (std::size_t j = 0; j < w; ++j) gt[i * w + j] += g[i * c + col0 + j];
                         }
                         col0 += w;
                       }
                     });
}

Tensor stack(const std::vector<Tensor>& parts) {
  require(!parts.empty(), "stack: no inputs");
  std::vector<Tensor> lifted;
  lifted.reserve(parts.size());
  for (const auto& p : parts) {
    require(p.shape() == parts.front().shape(), "stack: shapes differ, " + shape_str(p.shape()) +
                                                    " vs " + shape_str(parts.front().shape()));
    Shape s{1};
    s.insert(s.end(), p.shape().begin(), p.shape().end());
    lifted.push_back(reshape(p, std::move(s)));
  }
  return concat_rows(lifted);
}

Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t padding) {
  require_rank(x, 2, "conv1d");
  require_rank(w, 3, "conv1d");
  require_rank(bias, 1, "conv1d");
  const std::size_t cin = x.dim(0), len = x.dim(1);
  const std::size_t cout = w.dim(0), k = w.dim(2);
  require(w.dim(1) == cin, "conv1d: channel mismatch, input " + shape_str(x.shape()) +
                               " vs weight " + shape_str(w.shape()));
  require(bias.dim(0) == cout, "conv1d: bias " + shape_str(bias.shape()) + " vs weight " +
                                   shape_str(w.shape()));
  require(len + 2 * padding >= k, "conv1d: non-positive output length for L=" +
                                      std::to_string(len) + ", k=" + std::to_string(k));
  const std::size_t lo = len + 2 * padding - k + 1;
  std::vector<double> out(cout * lo);
  auto xd = x.data(), wd = w.data();
  const auto pad = static_cast<std::ptrdiff_t>(padding);
  for (std::size_t o = 0; o < cout; ++o)
    for (std::size_t t = 0; t < lo; ++t) {
      double s = bias[o];
      for (std::size_t c = 0; c < cin; ++c)
        for (std::size_t j = 0; j < k; ++j) {
          const auto src = static_cast<std::ptrdiff_t>(t + j) - pad;
          if (src < 0 || src >= static_cast<std::ptrdiff_t>(len)) continue;
          s += wd[(o * cin + c) * k + j] * xd[c * len + static_cast<std::size_t>(src)];
        }
      out[o * lo + t] = s;
    }
  auto xi = x.impl(), wi = w.impl(), bi = bias.impl();
  return make_result(
      "conv1d", {cout, lo}, std::move(out), {&x, &w, &bias},
      [xi, wi, bi, cin, len, cout, k, lo, pad](std::span<const double> g) {
        std::span<double> gx, gw, gb;
        if (xi->requires_grad) gx = grad_buffer(*xi);
        if (wi->requires_grad) gw = grad_buffer(*wi);
        if (bi->requires_grad) gb = grad_buffer(*bi);
        for (std::size_t o = 0; o < cout; ++o)
          for (std::size_t t = 0; t < lo; ++t) {
            const double go = g[o * lo + t];
            if (!gb.empty()) gb[o] += go;
            for (std::size_t c = 0; c < cin; ++c)
              for (std::size_t j = 0; j < k; ++j) {
                const auto src = static_cast<std::ptrdiff_t>(t + j) - pad;
                if (src < 0 || src >= static_cast<std::ptrdiff_t>(len)) continue;
                const std::size_t xi_idx = c * len + static_cast<std::size_t>(src);
                const std::size_t wi_idx = (o * cin + c) * k + j;
                if (!gw.empty()) gw[wi_idx] += go * xi->data[xi_idx];
                if (!gx.empty()) gx[xi_idx] += go * wi->data[wi_idx];
              }
          }
      });
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t stride,
              std::size_t padding) {
  require_rank(x, 3, "conv2d");
  require_rank(w, 4, "conv2d");
  require_rank(bias, 1, "conv2d");
  require(stride >= 1, "conv2d: stride must be positive");
  const std::size_t cin = x.dim(0), h = x.dim(1), wd_ = x.dim(2);
  const std::size_t cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  require(w.dim(1) == cin, "conv2d: channel mismatch, input " + shape_str(x.shape()) +
                               " vs weight " + shape_str(w.shape()));
  require(bias.dim(0) == cout, "conv2d: bias " + shape_str(bias.shape()) + " vs weight " +
                                   shape_str(w.shape()));
  require(h + 2 * padding >= kh && wd_ + 2 * padding >= kw,
          "conv2d: non-positive output extent for input " + shape_str(x.shape()));
  const std::size_t ho = (h + 2 * padding - kh) / stride + 1;
  const std::size_t wo = (wd_ + 2 * padding - kw) / stride + 1;
  const auto pad = static_cast<std::ptrdiff_t>(padding);
  const auto ih = static_cast<std::ptrdiff_t>(h), iw = static_cast<std::ptrdiff_t>(wd_);

  std::vector<double> out(cout * ho * wo);
  auto xd = x.data(), wv = w.data();
  for (std::size_t o = 0; o < cout; ++o) {
    double* dst = out.data() + o * ho * wo;
    std::fill(dst, dst + ho * wo, bias[o]);
    for (std::size_t c = 0; c < cin; ++c)
      for (std::size_t a = 0; a < kh; ++a)
        for (std::size_t b = 0; b < kw; ++b) {
          const double wt = wv[((o * cin + c) * kh + a) * kw + b];
          if (wt == 0.0) continue;
          for (std::size_t y = 0; y < ho; ++y) {
            const auto sy = static_cast<std::ptrdiff_t>(y * stride + a) - pad;
            if (sy < 0 || sy >= ih) continue;
            const double* row = xd.data() + (c * h + static_cast<std::size_t>(sy)) * wd_;
            for (std::size_t xo = 0; xo < wo; ++xo) {
              const auto sx = static_cast<std::ptrdiff_t>(xo * stride + b) - pad;
              if (sx < 0 || sx >= iw) continue;
              dst[y * wo + xo] += wt * row[sx];
            }
          }
        }
  }
  auto xi = x.impl(), wi = w.impl(), bi = bias.impl();
  return make_result(
      "conv2d", {cout, ho, wo}, std::move(out), {&x, &w, &bias},
      [=](std::span<const double> g) {
        std::span<double> gx, gw, gb;
        if (xi->requires_grad) gx = grad_buffer(*xi);
        if (wi->requires_grad) gw = grad_buffer(*wi);
        if (bi->requires_grad) gb = grad_buffer(*bi);
        for (std::size_t o = 0; o < cout; ++o) {
          const double* go = g.data() + o * ho * wo;
          if (!gb.empty())
            for (std::size_t i = 0; i < ho * wo; ++i) gb[o] += go[i];
          for (std::size_t c = 0; c < cin; ++c)
            for (std::size_t a = 0; a < kh; ++a)
              for (std::size_t b = 0; b < kw; ++b) {
                const std::size_t widx = ((o * cin + c) * kh + a) * kw + b;
                const double wt = wi->data[widx];
                double acc = 0.0;
                for (std::size_t y = 0; y < ho; ++y) {
                  const auto sy = static_cast<std::ptrdiff_t>(y * stride + a) - pad;
                  if (sy < 0 || sy >= ih) continue;
                  const std::size_t rowoff = (c * h + static_cast<std::size_t>(sy)) * wd_;
                  for (std::size_t xo = 0; xo < wo; ++xo) {
                    const auto sx = static_cast<std::ptrdiff_t>(xo * stride + b) - pad;
                    if (sx < 0 || sx >= iw) continue;
                    const double gv = go[y * wo + xo];
                    acc += gv * xi->data[rowoff + static_cast<std::size_t>(sx)];
                    if (!gx.empty()) gx[rowoff + static_cast<std::size_t>(sx)] += gv * wt;
                  }
                }
                if (!gw.empty()) gw[widx] += acc;
              }
        }
      });
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  require_rank(logits, 2, "cross_entropy");
  const std::size_t b = logits.dim(0), c = logits.dim(1);
  require(labels.size() == b, "cross_entropy: " + std::to_string(labels.size()) +
                                  " labels for logits " + shape_str(logits.shape()));
  auto probs = std::make_shared<std::vector<double>>(b * c);
  double loss = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    const int y = labels[i];
    require(y >= 0 && static_cast<std::size_t>(y) < c, "cross_entropy: label out of range");
    const double* in = logits.data().data() + i * c;
    const double mx = *std::max_element(in, in + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(in[j] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < c; ++j) (*probs)[i * c + j] = std::exp(in[j] - lse);
    loss += lse - in[y];
  }
  loss /= static_cast<double>(b);
  auto li = logits.impl();
  return make_result("cross_entropy", {1}, {loss}, {&logits},
                     [li, probs, labels, b, c](std::span<const double> g) {
                       if (!li->requires_grad) return;
                       auto gl = grad_buffer(*li);
                       const double s = g[0] / static_cast<double>(b);
                       for (std::size_t i = 0; i < b; ++i)
                         for (std::size_t j = 0; j < c; ++j) {
                           const double onehot = static_cast<std::size_t>(labels[i]) == j ? 1.0 : 0.0;
                           gl[i * c + j] += s * ((*probs)[i * c + j] - onehot);
                         }
                     });
}

Tensor pick(const Tensor& x, const std::vector<int>& labels) {
  require_rank(x, 2, "pick");
  const std::size_t b = x.dim(0), c = x.dim(1);
  require(labels.size() == b, "pick: label count does not match " + shape_str(x.shape()));
  std::vector<double> out(b);
  for (std::size_t i = 0; i < b; ++i) {
    require(labels[i] >= 0 && static_cast<std::size_t>(labels[i]) < c, "pick: label out of range");
    out[i] = x[i * c + static_cast<std::size_t>(labels[i])];
  }
  auto xi = x.impl();
  return make_result("pick", {b}, std::move(out), {&x}, [xi, labels, c](std::span<const double> g) {
    if (!xi->requires_grad) return;
    auto gx = grad_buffer(*xi);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i * c + static_cast<std::size_t>(labels[i])] += g[i];
  });
}

}  // namespace fmdd::ops
