#include <algorithm>
#include <cmath>
#include <numbers>

#include "oclip/error.hpp"
#include "oclip/tensor.hpp"

namespace oclip {
namespace {

using Storage = std::shared_ptr<const std::vector<double>>;

struct AxisSplit {
  std::size_t outer = 1;
  std::size_t len = 1;
  std::size_t inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis, const char* op) {
  require(axis < shape.size(), ErrorKind::kDimension,
          std::string(op) + ": axis " + std::to_string(axis) + " out of range for shape " +
              shape_str(shape));
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.len = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

void same_shape(const Tensor& a, const Tensor& b, const char* op) {
  require(a.shape() == b.shape(), ErrorKind::kDimension,
          std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
              shape_str(b.shape()));
}

// Elementwise unary op with derivative evaluated from the saved input.
template <class F, class D>
Tensor unary(const Tensor& a, F f, D df) {
  const auto x = a.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  Storage xs = a.storage();
  return make_result(a.shape(), std::move(out), {&a},
                     [xs, df](std::span<const double> g, GradSink& sink) {
                       auto ga = sink.grad(0);
                       const auto& x = *xs;
                       for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * df(x[i]);
                     });
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(0), ErrorKind::kDimension,
          "matmul: cannot multiply " + shape_str(a.shape()) + " by " + shape_str(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  const double* A = a.data().data();
  const double* B = b.data().data();
  std::vector<double> out(m * n, 0.0);
  // i-k-j order: every output entry accumulates over k in the same order no
  // matter how many rows `a` has, which keeps row results independent of m.
  for (std::size_t i = 0; i < m; ++i) {
    double* c = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = A[i * k + p];
      const double* brow = B + p * n;
      for (std::size_t j = 0; j < n; ++j) c[j] += aip * brow[j];
    }
  }
  Storage as = a.storage(), bs = b.storage();
  return make_result({m, n}, std::move(out), {&a, &b},
                     [as, bs, m, k, n](std::span<const double> g, GradSink& sink) {
                       const double* A = as->data();
                       const double* B = bs->data();
                       if (sink.wants(0)) {
                         auto ga = sink.grad(0);
                         for (std::size_t i = 0; i < m; ++i) {
                           const double* gi = g.data() + i * n;
                           for (std::size_t p = 0; p < k; ++p) {
                             const double* bp = B + p * n;
                             // Four fixed partial sums let the loop vectorize.
                             double acc[4] = {0.0, 0.0, 0.0, 0.0};
                             std::size_t j = 0;
                             for (; j + 4 <= n; j += 4)
                               for (std::size_t u = 0; u < 4; ++u) acc[u] += gi[j + u] * bp[j + u];
                             for (; j < n; ++j) acc[0] += gi[j] * bp[j];
                             ga[i * k + p] += (acc[0] + acc[1]) + (acc[2] + acc[3]);
                           }
                         }
                       }
                       if (sink.wants(1)) {
                         auto gb = sink.grad(1);
                         for (std::size_t i = 0; i < m; ++i) {
                           const double* gi = g.data() + i * n;
                           for (std::size_t p = 0; p < k; ++p) {
                             const double aip = A[i * k + p];
                             double* gbp = gb.data() + p * n;
                             for (std::size_t j = 0; j < n; ++j) gbp[j] += aip * gi[j];
                           }
                         }
                       }
                     });
}

Tensor add(const Tensor& a, const Tensor& b) {
  const auto x = a.data();
  const auto y = b.data();
  if (a.shape() == b.shape()) {
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[i];
    return make_result(a.shape(), std::move(out), {&a, &b},
                       [](std::span<const double> g, GradSink& sink) {
                         for (std::size_t p = 0; p < 2; ++p) {
                           if (!sink.wants(p)) continue;
                           auto gp = sink.grad(p);
                           for (std::size_t i = 0; i < g.size(); ++i) gp[i] += g[i];
                         }
                       });
  }
  require(b.rank() == 1 && b.dim(0) == a.shape().back(), ErrorKind::kDimension,
          "add: cannot add " + shape_str(b.shape()) + " to " + shape_str(a.shape()));
  const std::size_t n = b.numel();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[i % n];
  return make_result(a.shape(), std::move(out), {&a, &b},
                     [n](std::span<const double> g, GradSink& sink) {
                       if (sink.wants(0)) {
                         auto ga = sink.grad(0);
                         for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                       }
                       if (sink.wants(1)) {
                         auto gb = sink.grad(1);
                         for (std::size_t i = 0; i < g.size(); ++i) gb[i % n] += g[i];
                       }
                     });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  same_shape(a, b, "sub");
  const auto x = a.data();
  const auto y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - y[i];
  return make_result(a.shape(), std::move(out), {&a, &b},
                     [](std::span<const double> g, GradSink& sink) {
                       if (sink.wants(0)) {
                         auto ga = sink.grad(0);
                         for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                       }
                       if (sink.wants(1)) {
                         auto gb = sink.grad(1);
                         for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
                       }
                     });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  same_shape(a, b, "mul");
  const auto x = a.data();
  const auto y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[i];
  Storage as = a.storage(), bs = b.storage();
  return make_result(a.shape(), std::move(out), {&a, &b},
                     [as, bs](std::span<const double> g, GradSink& sink) {
                       if (sink.wants(0)) {
                         auto ga = sink.grad(0);
                         for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (*bs)[i];
                       }
                       if (sink.wants(1)) {
                         auto gb = sink.grad(1);
                         for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * (*as)[i];
                       }
                     });
}

Tensor scale(const Tensor& a, double s) {
  const auto x = a.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * s;
  return make_result(a.shape(), std::move(out), {&a},
                     [s](std::span<const double> g, GradSink& sink) {
                       auto ga = sink.grad(0);
                       for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s;
                     });
}

Tensor divide_scalar(const Tensor& a, const Tensor& s) {
  require(s.numel() == 1, ErrorKind::kDimension,
          "divide_scalar: divisor must hold one value, got " + shape_str(s.shape()));
  const double d = s[0];
  const auto x = a.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] / d;
  Storage as = a.storage();
  return make_result(a.shape(), std::move(out), {&a, &s},
                     [as, d](std::span<const double> g, GradSink& sink) {
                       if (sink.wants(0)) {
                         auto ga = sink.grad(0);
                         for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / d;
                       }
                       if (sink.wants(1)) {
                         double acc = 0.0;
                         for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * (*as)[i];
                         sink.grad(1)[0] -= acc / (d * d);
                       }
                     });
}

Tensor relu(const Tensor& a) {
  return unary(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& a) {
  return unary(
      a,
      [](double x) { return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x))); },
      [](double x) {
        const double t = std::tanh(kGeluC * (x + kGeluA * x * x * x));
        return 0.5 * (1.0 + t) +
               0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
      });
}

Tensor reshape(const Tensor& a, Shape shape) {
  require(numel(shape) == a.numel(), ErrorKind::kDimension,
          "reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  std::vector<double> out(a.data().begin(), a.data().end());
  return make_result(std::move(shape), std::move(out), {&a},
                     [](std::span<const double> g, GradSink& sink) {
                       auto ga = sink.grad(0);
                       for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                     });
}

Tensor transpose(const Tensor& a) {
  require(a.rank() == 2, ErrorKind::kDimension,
          "transpose: expected a matrix, got " + shape_str(a.shape()));
  const std::size_t r = a.dim(0), c = a.dim(1);
  const auto x = a.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = x[i * c + j];
  return make_result({c, r}, std::move(out), {&a},
                     [r, c](std::span<const double> g, GradSink& sink) {
                       auto ga = sink.grad(0);
                       for (std::size_t i = 0; i < r; ++i)
                         for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[j * r + i];
                     });
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  require(!parts.empty(), ErrorKind::kContract, "concat: no operands");
  const Shape& first = parts[0].shape();
  Shape out_shape = first;
  require(axis < first.size(), ErrorKind::kDimension, "concat: axis out of range");
  std::size_t total = 0;
  std::vector<std::size_t> lens;
  for (const auto& p : parts) {
    require(p.rank() == first.size(), ErrorKind::kDimension, "concat: rank mismatch");
    for (std::size_t d = 0; d < first.size(); ++d) {
      require(d == axis || p.dim(d) == first[d], ErrorKind::kDimension,
              "concat: shape mismatch " + shape_str(first) + " vs " + shape_str(p.shape()));
    }
    lens.push_back(p.dim(axis));
    total += p.dim(axis);
  }
  out_shape[axis] = total;
  const AxisSplit s = split_at(out_shape, axis, "concat");
  std::vector<double> out(numel(out_shape));
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto x = parts[k].data();
    const std::size_t block = lens[k] * s.inner;
    for (std::size_t o = 0; o < s.outer; ++o) {
      std::copy_n(x.data() + o * block, block, out.data() + o * s.len * s.inner + offset * s.inner);
    }
    offset += lens[k];
  }
  std::vector<const Tensor*> parents;
  for (const auto& p : parts) parents.push_back(&p);
  return make_result(std::move(out_shape), std::move(out), std::move(parents),
                     [s, lens](std::span<const double> g, GradSink& sink) {
                       std::size_t offset = 0;
                       for (std::size_t k = 0; k < lens.size(); ++k) {
                         const std::size_t block = lens[k] * s.inner;
                         if (sink.wants(k)) {
                           auto gk = sink.grad(k);
                           for (std::size_t o = 0; o < s.outer; ++o) {
                             const double* src = g.data() + o * s.len * s.inner + offset * s.inner;
                             for (std::size_t i = 0; i < block; ++i) gk[o * block + i] += src[i];
                           }
                         }
                         offset += lens[k];
                       }
                     });
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t length) {
  const AxisSplit s = split_at(a.shape(), axis, "slice");
  require(length > 0 && start + length <= s.len, ErrorKind::kIndex,
          "slice: range [" + std::to_string(start) + ", " + std::to_string(start + length) +
              ") exceeds extent " + std::to_string(s.len));
  Shape out_shape = a.shape();
  out_shape[axis] = length;
  const auto x = a.data();
  const std::size_t block = length * s.inner;
  std::vector<double> out(s.outer * block);
  for (std::size_t o = 0; o < s.outer; ++o) {
    std::copy_n(x.data() + o * s.len * s.inner + start * s.inner, block, out.data() + o * block);
  }
  return make_result(std::move(out_shape), std::move(out), {&a},
                     [s, start, block](std::span<const double> g, GradSink& sink) {
                       auto ga = sink.grad(0);
                       for (std::size_t o = 0; o < s.outer; ++o) {
                         double* dst = ga.data() + o * s.len * s.inner + start * s.inner;
                         for (std::size_t i = 0; i < block; ++i) dst[i] += g[o * block + i];
                       }
                     });
}

Tensor embedding_gather(const Tensor& table, std::span<const std::size_t> ids) {
  require(table.rank() == 2, ErrorKind::kDimension,
          "embedding_gather: table must be a matrix, got " + shape_str(table.shape()));
  require(!ids.empty(), ErrorKind::kContract, "embedding_gather: no ids");
  const std::size_t rows = table.dim(0), d = table.dim(1);
  const auto t = table.data();
  std::vector<double> out(ids.size() * d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    require(ids[i] < rows, ErrorKind::kIndex,
            "embedding_gather: id " + std::to_string(ids[i]) + " outside table of " +
                std::to_string(rows) + " rows");
    std::copy_n(t.data() + ids[i] * d, d, out.data() + i * d);
  }
  std::vector<std::size_t> saved(ids.begin(), ids.end());
  return make_result({ids.size(), d}, std::move(out), {&table},
                     [saved, d](std::span<const double> g, GradSink& sink) {
                       auto gt = sink.grad(0);
                       for (std::size_t i = 0; i < saved.size(); ++i)
                         for (std::size_t j = 0; j < d; ++j) gt[saved[i] * d + j] += g[i * d + j];
                     });
}

Tensor mean(const Tensor& a, std::size_t axis) {
  const AxisSplit s = split_at(a.shape(), axis, "mean");
  Shape out_shape;
  for (std::size_t d = 0; d < a.rank(); ++d)
    if (d != axis) out_shape.push_back(a.dim(d));
  if (out_shape.empty()) out_shape = {1};
  const auto x = a.data();
  std::vector<double> out(s.outer * s.inner, 0.0);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t l = 0; l < s.len; ++l)
      for (std::size_t i = 0; i < s.inner; ++i)
        out[o * s.inner + i] += x[(o * s.len + l) * s.inner + i];
  const double inv = 1.0 / static_cast<double>(s.len);
  for (auto& v : out) v *= inv;
  return make_result(std::move(out_shape), std::move(out), {&a},
                     [s, inv](std::span<const double> g, GradSink& sink) {
                       auto ga = sink.grad(0);
                       for (std::size_t o = 0; o < s.outer; ++o)
                         for (std::size_t l = 0; l < s.len; ++l)
                           for (std::size_t i = 0; i < s.inner; ++i)
                             ga[(o * s.len + l) * s.inner + i] += g[o * s.inner + i] * inv;
                     });
}

Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.data()) acc += v;
  return make_result({1}, {acc}, {&a}, [](std::span<const double> g, GradSink& sink) {
    auto ga = sink.grad(0);
    for (auto& v : ga) v += g[0];
  });
}

Tensor l2_normalize(const Tensor& a, std::size_t axis) {
  const AxisSplit s = split_at(a.shape(), axis, "l2_normalize");
  const auto x = a.data();
  std::vector<double> out(x.size());
  std::vector<double> norms(s.outer * s.inner);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      double ss = 0.0;
      for (std::size_t l = 0; l < s.len; ++l) {
        const double v = x[(o * s.len + l) * s.inner + i];
        ss += v * v;
      }
      const double n = std::max(std::sqrt(ss), 1e-12);
      norms[o * s.inner + i] = n;
      for (std::size_t l = 0; l < s.len; ++l) {
        const std::size_t idx = (o * s.len + l) * s.inner + i;
        out[idx] = x[idx] / n;
      }
    }
  }
  auto ys = std::make_shared<const std::vector<double>>(out);
  return make_result(a.shape(), std::move(out), {&a},
                     [s, ys, norms](std::span<const double> g, GradSink& sink) {
                       auto ga = sink.grad(0);
                       const auto& y = *ys;
                       for (std::size_t o = 0; o < s.outer; ++o) {
                         for (std::size_t i = 0; i < s.inner; ++i) {
                           double dot = 0.0;
                           for (std::size_t l = 0; l < s.len; ++l) {
                             const std::size_t idx = (o * s.len + l) * s.inner + i;
                             dot += y[idx] * g[idx];
                           }
                           const double n = norms[o * s.inner + i];
                           for (std::size_t l = 0; l < s.len; ++l) {
                             const std::size_t idx = (o * s.len + l) * s.inner + i;
                             ga[idx] += (g[idx] - y[idx] * dot) / n;
                           }
                         }
                       }
                     });
}

Tensor softmax(const Tensor& a, std::size_t axis) {
  const AxisSplit s = split_at(a.shape(), axis, "softmax");
  const auto x = a.data();
  std::vector<double> out(x.size());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const auto at = [&](std::size_t l) { return (o * s.len + l) * s.inner + i; };
      double mx = x[at(0)];
      for (std::size_t l = 1; l < s.len; ++l) mx = std::max(mx, x[at(l)]);
      double z = 0.0;
      for (std::size_t l = 0; l < s.len; ++l) {
        out[at(l)] = std::exp(x[at(l)] - mx);
        z += out[at(l)];
      }
      for (std::size_t l = 0; l < s.len; ++l) out[at(l)] /= z;
    }
  }
  auto ys = std::make_shared<const std::vector<double>>(out);
  return make_result(a.shape(), std::move(out), {&a},
                     [s, ys](std::span<const double> g, GradSink& sink) {
                       auto ga = sink.grad(0);
                       const auto& y = *ys;
                       for (std::size_t o = 0; o < s.outer; ++o) {
                         for (std::size_t i = 0; i < s.inner; ++i) {
                           const auto at = [&](std::size_t l) {
                             return (o * s.len + l) * s.inner + i;
                           };
                           double dot = 0.0;
                           for (std::size_t l = 0; l < s.len; ++l) dot += y[at(l)] * g[at(l)];
                           for (std::size_t l = 0; l < s.len; ++l)
                             ga[at(l)] += y[at(l)] * (g[at(l)] - dot);
                         }
                       }
                     });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  require(eps > 0.0, ErrorKind::kContract, "layer_norm: eps must be positive");
  const std::size_t d = x.shape().back();
  require(gain.rank() == 1 && gain.dim(0) == d && bias.rank() == 1 && bias.dim(0) == d,
          ErrorKind::kDimension,
          "layer_norm: gain " + shape_str(gain.shape()) + " / bias " + shape_str(bias.shape()) +
              " do not match " + shape_str(x.shape()));
  const std::size_t rows = x.numel() / d;
  const auto xv = x.data();
  const auto gv = gain.data();
  const auto bv = bias.data();
  std::vector<double> out(xv.size());
  std::vector<double> xhat(xv.size());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (row[j] - mu) * is;
      xhat[r * d + j] = h;
      out[r * d + j] = h * gv[j] + bv[j];
    }
  }
  Storage gs = gain.storage();
  return make_result(
      x.shape(), std::move(out), {&x, &gain, &bias},
      [d, rows, gs, xhat = std::move(xhat), inv_std = std::move(inv_std)](
          std::span<const double> g, GradSink& sink) {
        const auto& gv = *gs;
        if (sink.wants(0)) {
          auto gx = sink.grad(0);
          for (std::size_t r = 0; r < rows; ++r) {
            double m1 = 0.0, m2 = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
              const double dh = g[r * d + j] * gv[j];
              m1 += dh;
              m2 += dh * xhat[r * d + j];
            }
            m1 /= static_cast<double>(d);
            m2 /= static_cast<double>(d);
            for (std::size_t j = 0; j < d; ++j) {
              const double dh = g[r * d + j] * gv[j];
              gx[r * d + j] += inv_std[r] * (dh - m1 - xhat[r * d + j] * m2);
            }
          }
        }
        if (sink.wants(1)) {
          auto gg = sink.grad(1);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < d; ++j) gg[j] += g[r * d + j] * xhat[r * d + j];
        }
        if (sink.wants(2)) {
          auto gb = sink.grad(2);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < d; ++j) gb[j] += g[r * d + j];
        }
      });
}

Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> targets) {
  require(logits.rank() == 2, ErrorKind::kDimension,
          "cross_entropy: logits must be [n,V], got " + shape_str(logits.shape()));
  const std::size_t n = logits.dim(0), v = logits.dim(1);
  require(targets.size() == n, ErrorKind::kDimension,
          "cross_entropy: " + std::to_string(targets.size()) + " targets for " +
              std::to_string(n) + " rows");
  const auto x = logits.data();
  std::vector<double> probs(x.size());
  double loss = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    require(targets[r] < v, ErrorKind::kIndex,
            "cross_entropy: target " + std::to_string(targets[r]) + " outside [0," +
                std::to_string(v) + ")");
    const double* row = x.data() + r * v;
    double mx = row[0];
    for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < v; ++j) {
      probs[r * v + j] = std::exp(row[j] - mx);
      z += probs[r * v + j];
    }
    for (std::size_t j = 0; j < v; ++j) probs[r * v + j] /= z;
    loss += (mx + std::log(z)) - row[targets[r]];
  }
  loss /= static_cast<double>(n);
  std::vector<std::size_t> saved(targets.begin(), targets.end());
  return make_result({1}, {loss}, {&logits},
                     [n, v, saved, probs = std::move(probs)](std::span<const double> g,
                                                             GradSink& sink) {
                       auto gl = sink.grad(0);
                       const double w = g[0] / static_cast<double>(n);
                       for (std::size_t r = 0; r < n; ++r) {
                         for (std::size_t j = 0; j < v; ++j) gl[r * v + j] += w * probs[r * v + j];
                         gl[r * v + saved[r]] -= w;
                       }
                     });
}

double finite_diff_check(const ScalarFn& f, const Tensor& x, double h) {
  std::vector<double> analytic;
  {
    Tape tape;
    Tensor xv = tape.variable(x);
    Tensor y = f(tape, xv);
    analytic = tape.backward(y).of(xv);
  }
  const auto eval = [&](const std::vector<double>& point) {
    Tape tape;
    Tensor xv = tape.variable(Tensor(x.shape(), point));
    return f(tape, xv).item();
  };
  std::vector<double> point(x.data().begin(), x.data().end());
  double worst = 0.0;
  for (std::size_t i = 0; i < point.size(); ++i) {
    const double orig = point[i];
    point[i] = orig + h;
    const double up = eval(point);
    point[i] = orig - h;
    const double down = eval(point);
    point[i] = orig;
    const double numeric = (up - down) / (2.0 * h);
    const double denom = std::max({1.0, std::abs(analytic[i]), std::abs(numeric)});
    worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
  }
  return worst;
}

}  // namespace oclip
