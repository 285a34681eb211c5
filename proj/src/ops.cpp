// Copyright 2026 The peftmix Authors
// SPDX-License-Identifier: Apache-2.0

#include "peftmix/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "peftmix/errors.hpp"
#include "peftmix/kernels.hpp"

namespace peftmix {

namespace {

using NodePtr = std::shared_ptr<detail::TensorNode>;

bool tracking(std::initializer_list<const Tensor*> inputs) {
  if (!Tape::active()) return false;
  return std::any_of(inputs.begin(), inputs.end(), [](const Tensor* t) { return t->requires_grad(); });
}

Tensor make_result(Shape shape, std::vector<double> values, bool track, const char* op) {
  for (double v : values) {
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite value produced by ") + op);
  }
  Tensor out(std::move(shape), std::move(values));
  if (track) {
    out.node()->requires_grad = true;
    out.node()->leaf = false;
  }
  return out;
}

void require_matrix(const Tensor& t, const char* op) {
  if (t.dim() != 2) {
    throw DimensionError(std::string(op) + " expects a matrix, got " + shape_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw DimensionError("matmul: inner dimensions disagree " + shape_string(a.shape()) + " · " +
                         shape_string(b.shape()));
  }
  std::vector<double> out(m * n);
  kernels::gemm_nn(a.values(), b.values(), out, m, k, n);
  const bool track = tracking({&a, &b});
  Tensor result = make_result({m, n}, std::move(out), track, "matmul");
  if (track) {
    Tape::active()->record([on = result.node(), an = a.node(), bn = b.node(), m, k, n] {
      if (on->grad.empty()) return;
      if (an->requires_grad) kernels::gemm_nt_acc(on->grad, bn->value, an->grad_buffer(), m, n, k);
      if (bn->requires_grad) kernels::gemm_tn_acc(an->value, on->grad, bn->grad_buffer(), k, m, n);
    });
  }
  return result;
}

Tensor transpose(const Tensor& a) {
  require_matrix(a, "transpose");
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(m * n);
  const auto av = a.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = av[i * n + j];
  const bool track = tracking({&a});
  Tensor result = make_result({n, m}, std::move(out), track, "transpose");
  if (track) {
    Tape::active()->record([on = result.node(), an = a.node(), m, n] {
      if (on->grad.empty()) return;
      auto g = an->grad_buffer();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g[i * n + j] += on->grad[j * m + i];
    });
  }
  return result;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  const auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  const bool track = tracking({&a, &b});
  Tensor result = make_result(a.shape(), std::move(out), track, "add");
  if (track) {
    Tape::active()->record([on = result.node(), an = a.node(), bn = b.node()] {
      if (on->grad.empty()) return;
      for (const NodePtr& in : {an, bn}) {
        if (!in->requires_grad) continue;
        auto g = in->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += on->grad[i];
      }
    });
  }
  return result;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  const auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  const bool track = tracking({&a, &b});
  Tensor result = make_result(a.shape(), std::move(out), track, "sub");
  if (track) {
    Tape::active()->record([on = result.node(), an = a.node(), bn = b.node()] {
      if (on->grad.empty()) return;
      if (an->requires_grad) {
        auto g = an->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += on->grad[i];
      }
      if (bn->requires_grad) {
        auto g = bn->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] -= on->grad[i];
      }
    });
  }
  return result;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  const auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  const bool track = tracking({&a, &b});
  Tensor result = make_result(a.shape(), std::move(out), track, "mul");
  if (track) {
    Tape::active()->record([on = result.node(), an = a.node(), bn = b.node()] {
      if (on->grad.empty()) return;
      if (an->requires_grad) {
        auto g = an->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += on->grad[i] * bn->value[i];
      }
      if (bn->requires_grad) {
        auto g = bn->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += on->grad[i] * an->value[i];
      }
    });
  }
  return result;
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.numel());
  const auto av = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * factor;
  const bool track = tracking({&a});
  Tensor result = make_result(a.shape(), std::move(out), track, "scale");
  if (track) {
    Tape::active()->record([on = result.node(), an = a.node(), factor] {
      if (on->grad.empty()) return;
      auto g = an->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += on->grad[i] * factor;
    });
  }
  return result;
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  require_matrix(x, "add_bias");
  const std::size_t m = x.rows(), n = x.cols();
  if (bias.numel() != n) {
    throw DimensionError("add_bias: bias " + shape_string(bias.shape()) + " vs input " +
                         shape_string(x.shape()));
  }
  std::vector<double> out(m * n);
  const auto xv = x.values(), bv = bias.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = xv[i * n + j] + bv[j];
  const bool track = tracking({&x, &bias});
  Tensor result = make_result({m, n}, std::move(out), track, "add_bias");
  if (track) {
    Tape::active()->record([on = result.node(), xn = x.node(), bn = bias.node(), m, n] {
      if (on->grad.empty()) return;
      if (xn->requires_grad) {
        auto g = xn->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += on->grad[i];
      }
      if (bn->requires_grad) {
        auto g = bn->grad_buffer();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) g[j] += on->grad[i * n + j];
      }
    });
  }
  return result;
}

Tensor scale_by(const Tensor& x, const Tensor& weights, std::size_t index) {
  if (index >= weights.numel()) throw DimensionError("scale_by: index out of range");
  const double w = weights[index];
  std::vector<double> out(x.numel());
  const auto xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * w;
  const bool track = tracking({&x, &weights});
  Tensor result = make_result(x.shape(), std::move(out), track, "scale_by");
  if (track) {
    Tape::active()->record([on = result.node(), xn = x.node(), wn = weights.node(), index] {
      if (on->grad.empty()) return;
      const double wv = wn->value[index];
      if (xn->requires_grad) {
        auto g = xn->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += on->grad[i] * wv;
      }
      if (wn->requires_grad) {
        double acc = 0.0;
        for (std::size_t i = 0; i < on->grad.size(); ++i) acc += on->grad[i] * xn->value[i];
        wn->grad_buffer()[index] += acc;
      }
    });
  }
  return result;
}

namespace {

struct AxisLayout {
  std::size_t outer, n, inner;
};

AxisLayout axis_layout(const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) throw DimensionError("axis " + std::to_string(axis) + " out of range");
  AxisLayout l{1, shape[axis], 1};
  for (std::size_t d = 0; d < axis; ++d) l.outer *= shape[d];
  for (std::size_t d = axis + 1; d < shape.size(); ++d) l.inner *= shape[d];
  return l;
}

}  // namespace

Tensor softmax(const Tensor& x, std::size_t axis) {
  const AxisLayout l = axis_layout(x.shape(), axis);
  const auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t o = 0; o < l.outer; ++o) {
    for (std::size_t in = 0; in < l.inner; ++in) {
      const std::size_t base = o * l.n * l.inner + in;
      double mx = xv[base];
      for (std::size_t j = 1; j < l.n; ++j) mx = std::max(mx, xv[base + j * l.inner]);
      double total = 0.0;
      for (std::size_t j = 0; j < l.n; ++j) {
        const double e = std::exp(xv[base + j * l.inner] - mx);
        out[base + j * l.inner] = e;
        total += e;
      }
      for (std::size_t j = 0; j < l.n; ++j) out[base + j * l.inner] /= total;
    }
  }
  const bool track = tracking({&x});
  Tensor result = make_result(x.shape(), std::move(out), track, "softmax");
  if (track) {
    Tape::active()->record([on = result.node(), xn = x.node(), l] {
      if (on->grad.empty()) return;
      auto g = xn->grad_buffer();
      const auto& y = on->value;
      const auto& gy = on->grad;
      for (std::size_t o = 0; o < l.outer; ++o) {
        for (std::size_t in = 0; in < l.inner; ++in) {
          const std::size_t base = o * l.n * l.inner + in;
          double dot = 0.0;
          for (std::size_t j = 0; j < l.n; ++j) dot += gy[base + j * l.inner] * y[base + j * l.inner];
          for (std::size_t j = 0; j < l.n; ++j) {
            const std::size_t idx = base + j * l.inner;
            g[idx] += y[idx] * (gy[idx] - dot);
          }
        }
      }
    });
  }
  return result;
}

Tensor log_softmax(const Tensor& x) {
  const AxisLayout l = axis_layout(x.shape(), x.dim() - 1);
  const auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t r = 0; r < l.outer; ++r) {
    const double* row = xv.data() + r * l.n;
    const double mx = *std::max_element(row, row + l.n);
    double total = 0.0;
    for (std::size_t j = 0; j < l.n; ++j) total += std::exp(row[j] - mx);
    const double lse = mx + std::log(total);
    for (std::size_t j = 0; j < l.n; ++j) out[r * l.n + j] = row[j] - lse;
  }
  const bool track = tracking({&x});
  Tensor result = make_result(x.shape(), std::move(out), track, "log_softmax");
  if (track) {
    Tape::active()->record([on = result.node(), xn = x.node(), rows = l.outer, n = l.n] {
      if (on->grad.empty()) return;
      auto g = xn->grad_buffer();
      for (std::size_t r = 0; r < rows; ++r) {
        double gsum = 0.0;
        for (std::size_t j = 0; j < n; ++j) gsum += on->grad[r * n + j];
        for (std::size_t j = 0; j < n; ++j) {
          const std::size_t idx = r * n + j;
          g[idx] += on->grad[idx] - std::exp(on->value[idx]) * gsum;
        }
      }
    });
  }
  return result;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  require_matrix(x, "layer_norm");
  const std::size_t m = x.rows(), n = x.cols();
  if (gamma.numel() != n || beta.numel() != n) throw DimensionError("layer_norm: parameter width mismatch");
  const auto xv = x.values(), gv = gamma.values(), bv = beta.values();
  std::vector<double> out(m * n);
  std::vector<double> xhat(m * n);
  std::vector<double> inv_std(m);
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = xv.data() + i * n;
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += row[j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<double>(n);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      const double h = (row[j] - mean) * inv_std[i];
      xhat[i * n + j] = h;
      out[i * n + j] = h * gv[j] + bv[j];
    }
  }
  const bool track = tracking({&x, &gamma, &beta});
  Tensor result = make_result({m, n}, std::move(out), track, "layer_norm");
  if (track) {
    Tape::active()->record([on = result.node(), xn = x.node(), gn = gamma.node(), bn = beta.node(),
                            xhat = std::move(xhat), inv_std = std::move(inv_std), m, n] {
      if (on->grad.empty()) return;
      const auto& gy = on->grad;
      if (gn->requires_grad) {
        auto g = gn->grad_buffer();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) g[j] += gy[i * n + j] * xhat[i * n + j];
      }
      if (bn->requires_grad) {
        auto g = bn->grad_buffer();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) g[j] += gy[i * n + j];
      }
      if (xn->requires_grad) {
        auto g = xn->grad_buffer();
        const double inv_n = 1.0 / static_cast<double>(n);
        for (std::size_t i = 0; i < m; ++i) {
          double mean_d = 0.0, mean_dx = 0.0;
          for (std::size_t j = 0; j < n; ++j) {
            const double d = gy[i * n + j] * gn->value[j];
            mean_d += d;
            mean_dx += d * xhat[i * n + j];
          }
          mean_d *= inv_n;
          mean_dx *= inv_n;
          for (std::size_t j = 0; j < n; ++j) {
            const double d = gy[i * n + j] * gn->value[j];
            g[i * n + j] += inv_std[i] * (d - mean_d - xhat[i * n + j] * mean_dx);
          }
        }
      }
    });
  }
  return result;
}

Tensor gelu(const Tensor& x) {
  constexpr double inv_sqrt2 = 1.0 / std::numbers::sqrt2;
  const auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = 0.5 * xv[i] * (1.0 + std::erf(xv[i] * inv_sqrt2));
  const bool track = tracking({&x});
  Tensor result = make_result(x.shape(), std::move(out), track, "gelu");
  if (track) {
    Tape::active()->record([on = result.node(), xn = x.node()] {
      if (on->grad.empty()) return;
      constexpr double inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
      auto g = xn->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double v = xn->value[i];
        const double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
        const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
        g[i] += on->grad[i] * (cdf + v * pdf);
      }
    });
  }
  return result;
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.values()) total += v;
  const bool track = tracking({&x});
  Tensor result = make_result({1}, {total}, track, "sum");
  if (track) {
    Tape::active()->record([on = result.node(), xn = x.node()] {
      if (on->grad.empty()) return;
      auto g = xn->grad_buffer();
      for (double& v : g) v += on->grad[0];
    });
  }
  return result;
}

Tensor mean_rows(const Tensor& x) {
  require_matrix(x, "mean_rows");
  const std::size_t m = x.rows(), n = x.cols();
  const auto xv = x.values();
  std::vector<double> out(n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j] += xv[i * n + j];
  for (double& v : out) v /= static_cast<double>(m);
  const bool track = tracking({&x});
  Tensor result = make_result({1, n}, std::move(out), track, "mean_rows");
  if (track) {
    Tape::active()->record([on = result.node(), xn = x.node(), m, n] {
      if (on->grad.empty()) return;
      auto g = xn->grad_buffer();
      const double inv_m = 1.0 / static_cast<double>(m);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g[i * n + j] += on->grad[j] * inv_m;
    });
  }
  return result;
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count) {
  require_matrix(x, "slice_rows");
  const std::size_t n = x.cols();
  if (count == 0 || begin + count > x.rows()) throw DimensionError("slice_rows: range out of bounds");
  const auto xv = x.values();
  std::vector<double> out(xv.begin() + static_cast<std::ptrdiff_t>(begin * n),
                          xv.begin() + static_cast<std::ptrdiff_t>((begin + count) * n));
  const bool track = tracking({&x});
  Tensor result = make_result({count, n}, std::move(out), track, "slice_rows");
  if (track) {
    Tape::active()->record([on = result.node(), xn = x.node(), begin, n] {
      if (on->grad.empty()) return;
      auto g = xn->grad_buffer();
      for (std::size_t i = 0; i < on->grad.size(); ++i) g[begin * n + i] += on->grad[i];
    });
  }
  return result;
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t count) {
  require_matrix(x, "slice_cols");
  const std::size_t m = x.rows(), n = x.cols();
  if (count == 0 || begin + count > n) throw DimensionError("slice_cols: range out of bounds");
  const auto xv = x.values();
  std::vector<double> out(m * count);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < count; ++j) out[i * count + j] = xv[i * n + begin + j];
  const bool track = tracking({&x});
  Tensor result = make_result({m, count}, std::move(out), track, "slice_cols");
  if (track) {
    Tape::active()->record([on = result.node(), xn = x.node(), begin, count, m, n] {
      if (on->grad.empty()) return;
      auto g = xn->grad_buffer();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < count; ++j) g[i * n + begin + j] += on->grad[i * count + j];
    });
  }
  return result;
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t m = parts.front().rows();
  std::size_t n = 0;
  for (const Tensor& p : parts) {
    if (p.rows() != m) throw DimensionError("concat_cols: row count mismatch");
    n += p.cols();
  }
  std::vector<double> out(m * n);
  std::size_t offset = 0;
  bool track = false;
  for (const Tensor& p : parts) {
    const auto pv = p.values();
    const std::size_t w = p.cols();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < w; ++j) out[i * n + offset + j] = pv[i * w + j];
    offset += w;
    track = track || tracking({&p});
  }
  Tensor result = make_result({m, n}, std::move(out), track, "concat_cols");
  if (track) {
    std::vector<NodePtr> nodes;
    for (const Tensor& p : parts) nodes.push_back(p.node());
    Tape::active()->record([on = result.node(), nodes = std::move(nodes), m, n] {
      if (on->grad.empty()) return;
      std::size_t off = 0;
      for (const NodePtr& pn : nodes) {
        const std::size_t w = pn->shape[1];
        if (pn->requires_grad) {
          auto g = pn->grad_buffer();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < w; ++j) g[i * w + j] += on->grad[i * n + off + j];
        }
        off += w;
      }
    });
  }
  return result;
}

Tensor nll_loss(const Tensor& log_probs, std::span<const int> labels) {
  require_matrix(log_probs, "nll_loss");
  const std::size_t m = log_probs.rows(), c = log_probs.cols();
  if (labels.size() != m) throw DimensionError("nll_loss: one label per row required");
  std::vector<std::size_t> cols(m);
  for (std::size_t i = 0; i < m; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= c) {
      throw DataError("nll_loss: label " + std::to_string(labels[i]) + " outside [0, " + std::to_string(c) + ")");
    }
    cols[i] = static_cast<std::size_t>(labels[i]);
  }
  const auto lp = log_probs.values();
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) total -= lp[i * c + cols[i]];
  const double inv_m = 1.0 / static_cast<double>(m);
  const bool track = tracking({&log_probs});
  Tensor result = make_result({1}, {total * inv_m}, track, "nll_loss");
  if (track) {
    Tape::active()->record([on = result.node(), ln = log_probs.node(), cols = std::move(cols), c, inv_m] {
      if (on->grad.empty()) return;
      auto g = ln->grad_buffer();
      for (std::size_t i = 0; i < cols.size(); ++i) g[i * c + cols[i]] -= on->grad[0] * inv_m;
    });
  }
  return result;
}

}  // namespace peftmix
