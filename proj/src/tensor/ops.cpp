// SPDX-License-Identifier: Apache-2.0
#include "tensor/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>
#include <vector>

#include "common/error.hpp"

namespace mtr::ad {

namespace {

Tape& same_tape(const Var& a, const Var& b, const char* op) {
  if (&a.tape() != &b.tape()) throw InvalidArgument(std::string(op) + ": operands on different tapes");
  return a.tape();
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) + " vs " +
                     shape_to_string(b.shape()));
  }
}

// Sizes of the blocks before, at and after `axis`.
struct AxisSplit {
  std::size_t outer = 1;
  std::size_t extent = 1;
  std::size_t inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis, const char* op) {
  if (axis >= shape.size()) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for " +
                     shape_to_string(shape));
  }
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

Shape drop_axis(const Shape& shape, std::size_t axis) {
  Shape out;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i != axis) out.push_back(shape[i]);
  }
  return out;
}

// Elementwise unary op. `deriv(x, y)` is dy/dx given input x and output y.
template <typename F, typename D>
Var unary(const char* name, const Var& x, F f, D deriv) {
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.numel(); ++i) out[i] = f(xv[i]);
  const std::size_t xid = x.id();
  return x.tape().record(name, std::move(out), {xid}, [xid, deriv](Tape& t, std::size_t self, const Tensor& g) {
    const Tensor& xin = t.value(xid);
    const Tensor& y = t.value(self);
    auto dx = t.grad_buffer(xid);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g[i] * deriv(xin[i], y[i]);
  });
}

}  // namespace

Var add(const Var& a, const Var& b) {
  Tape& tape = same_tape(a, b, "add");
  require_same_shape(a, b, "add");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += bv[i];
  const std::size_t aid = a.id(), bid = b.id();
  return tape.record("add", std::move(out), {aid, bid}, [aid, bid](Tape& t, std::size_t, const Tensor& g) {
    for (std::size_t id : {aid, bid}) {
      if (!t.requires_grad(id)) continue;
      auto d = t.grad_buffer(id);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
    }
  });
}

Var sub(const Var& a, const Var& b) {
  Tape& tape = same_tape(a, b, "sub");
  require_same_shape(a, b, "sub");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= bv[i];
  const std::size_t aid = a.id(), bid = b.id();
  return tape.record("sub", std::move(out), {aid, bid}, [aid, bid](Tape& t, std::size_t, const Tensor& g) {
    if (t.requires_grad(aid)) {
      auto d = t.grad_buffer(aid);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
    }
    if (t.requires_grad(bid)) {
      auto d = t.grad_buffer(bid);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] -= g[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  Tape& tape = same_tape(a, b, "mul");
  require_same_shape(a, b, "mul");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= bv[i];
  const std::size_t aid = a.id(), bid = b.id();
  return tape.record("mul", std::move(out), {aid, bid}, [aid, bid](Tape& t, std::size_t, const Tensor& g) {
    if (t.requires_grad(aid)) {
      const Tensor& other = t.value(bid);
      auto d = t.grad_buffer(aid);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * other[i];
    }
    if (t.requires_grad(bid)) {
      const Tensor& other = t.value(aid);
      auto d = t.grad_buffer(bid);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * other[i];
    }
  });
}

Var scale(const Var& a, double factor) {
  if (!std::isfinite(factor)) throw NumericError("scale: non-finite factor");
  Tensor out = a.value();
  for (double& v : out.data()) v *= factor;
  const std::size_t aid = a.id();
  return a.tape().record("scale", std::move(out), {aid}, [aid, factor](Tape& t, std::size_t, const Tensor& g) {
    auto d = t.grad_buffer(aid);
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * factor;
  });
}

Var matmul(const Var& a, const Var& b) {
  Tape& tape = same_tape(a, b, "matmul");
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.size() != 2 || bs.size() != 2 || as[1] != bs[0]) {
    throw ShapeError("matmul: incompatible shapes " + shape_to_string(as) + " and " + shape_to_string(bs));
  }
  const std::size_t m = as[0], k = as[1], n = bs[1];
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Tensor out(Shape{m, n}, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += aip * bv[p * n + j];
    }
  }
  const std::size_t aid = a.id(), bid = b.id();
  return tape.record("matmul", std::move(out), {aid, bid}, [aid, bid, m, k, n](Tape& t, std::size_t, const Tensor& g) {
    if (t.requires_grad(aid)) {
      const Tensor& bv = t.value(bid);
      auto da = t.grad_buffer(aid);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) s += g[i * n + j] * bv[p * n + j];
          da[i * k + p] += s;
        }
    }
    if (t.requires_grad(bid)) {
      const Tensor& av = t.value(aid);
      auto db = t.grad_buffer(bid);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = av[i * k + p];
          for (std::size_t j = 0; j < n; ++j) db[p * n + j] += aip * g[i * n + j];
        }
    }
  });
}

namespace {

// Valid output range [lo, hi) along one spatial axis for tap offset `off`.
inline void tap_range(long extent, long off, long& lo, long& hi) {
  lo = std::max(0L, -off);
  hi = std::min(extent, extent - off);
}

// col[(ci * 9 + tap) * HW + p] = input pixel feeding output p through `tap`,
// zero outside the image.
void im2col(const double* in, std::size_t Ci, long H, long W, double* col) {
  const std::size_t HW = static_cast<std::size_t>(H * W);
  std::fill(col, col + Ci * 9 * HW, 0.0);
  for (std::size_t ci = 0; ci < Ci; ++ci) {
    const double* plane = in + ci * HW;
    for (long ky = 0; ky < 3; ++ky) {
      long y0, y1;
      tap_range(H, ky - 1, y0, y1);
      for (long kx = 0; kx < 3; ++kx) {
        long x0, x1;
        tap_range(W, kx - 1, x0, x1);
        double* dst = col + (ci * 9 + static_cast<std::size_t>(ky * 3 + kx)) * HW;
        for (long yy = y0; yy < y1; ++yy) {
          const double* src = plane + (yy + ky - 1) * W + (kx - 1);
          std::copy(src + x0, src + x1, dst + yy * W + x0);
        }
      }
    }
  }
}

// Adds each column entry back onto the input pixel it was copied from.
void col2im_add(const double* col, std::size_t Ci, long H, long W, double* in) {
  const std::size_t HW = static_cast<std::size_t>(H * W);
  for (std::size_t ci = 0; ci < Ci; ++ci) {
    double* plane = in + ci * HW;
    for (long ky = 0; ky < 3; ++ky) {
      long y0, y1;
      tap_range(H, ky - 1, y0, y1);
      for (long kx = 0; kx < 3; ++kx) {
        long x0, x1;
        tap_range(W, kx - 1, x0, x1);
        const double* src = col + (ci * 9 + static_cast<std::size_t>(ky * 3 + kx)) * HW;
        for (long yy = y0; yy < y1; ++yy) {
          double* dst = plane + (yy + ky - 1) * W + (kx - 1);
          for (long xx = x0; xx < x1; ++xx) dst[xx] += src[yy * W + xx];
        }
      }
    }
  }
}

// Four doubles; lowered to whatever vector width the target offers.
typedef double v4d __attribute__((vector_size(32)));

inline v4d load4(const double* p) {
  v4d v;
  std::memcpy(&v, p, sizeof v);
  return v;
}

inline void store4(double* p, v4d v) { std::memcpy(p, &v, sizeof v); }

// Folds 8 lane sums lo = (c0..c3), hi = (c4..c7) as
// ((c0 + c4) + (c1 + c5)) + ((c2 + c6) + (c3 + c7)).
inline double fold8(v4d lo, v4d hi) {
  const v4d s = lo + hi;
  return (s[0] + s[1]) + (s[2] + s[3]);
}

// Dot product with a fixed 8-lane split of the accumulation, so the
// summation order does not depend on the target's vector width.
inline double dot8(std::size_t n, const double* a, const double* b) {
  v4d lo = {0, 0, 0, 0}, hi = {0, 0, 0, 0};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    lo += load4(a + i) * load4(b + i);
    hi += load4(a + i + 4) * load4(b + i + 4);
  }
  double tail = 0.0;
  for (; i < n; ++i) tail += a[i] * b[i];
  return fold8(lo, hi) + tail;
}

// C[M x N] += A[M x K] * B[K x N], all row-major. Every C entry sums over k
// in increasing order, whatever the blocking.
void gemm_nn(std::size_t M, std::size_t N, std::size_t K, const double* A, const double* B, double* C) {
  std::size_t m0 = 0;
  for (; m0 + 4 <= M; m0 += 4) {
    std::size_t n0 = 0;
    for (; n0 + 8 <= N; n0 += 8) {
      v4d acc[4][2] = {};
      for (std::size_t k = 0; k < K; ++k) {
        const v4d b0 = load4(B + k * N + n0);
        const v4d b1 = load4(B + k * N + n0 + 4);
        for (std::size_t i = 0; i < 4; ++i) {
          const double a = A[(m0 + i) * K + k];
          acc[i][0] += a * b0;
          acc[i][1] += a * b1;
        }
      }
      for (std::size_t i = 0; i < 4; ++i) {
        double* c = C + (m0 + i) * N + n0;
        store4(c, load4(c) + acc[i][0]);
        store4(c + 4, load4(c + 4) + acc[i][1]);
      }
    }
    for (; n0 < N; ++n0)
      for (std::size_t i = 0; i < 4; ++i) {
        double acc = 0.0;
        for (std::size_t k = 0; k < K; ++k) acc += A[(m0 + i) * K + k] * B[k * N + n0];
        C[(m0 + i) * N + n0] += acc;
      }
  }
  for (; m0 < M; ++m0) {
    std::size_t n0 = 0;
    for (; n0 + 8 <= N; n0 += 8) {
      v4d acc0 = {0, 0, 0, 0}, acc1 = {0, 0, 0, 0};
      for (std::size_t k = 0; k < K; ++k) {
        const double a = A[m0 * K + k];
        acc0 += a * load4(B + k * N + n0);
        acc1 += a * load4(B + k * N + n0 + 4);
      }
      double* c = C + m0 * N + n0;
      store4(c, load4(c) + acc0);
      store4(c + 4, load4(c + 4) + acc1);
    }
    for (; n0 < N; ++n0) {
      double acc = 0.0;
      for (std::size_t k = 0; k < K; ++k) acc += A[m0 * K + k] * B[k * N + n0];
      C[m0 * N + n0] += acc;
    }
  }
}

// C[M x N] += A[M x P] * B[N x P]^T, each entry summed in dot8 order.
void gemm_nt(std::size_t M, std::size_t N, std::size_t P, const double* A, const double* B, double* C) {
  const std::size_t P8 = P - P % 8;
  std::size_t m0 = 0;
  for (; m0 + 2 <= M; m0 += 2) {
    std::size_t n0 = 0;
    for (; n0 + 2 <= N; n0 += 2) {
      v4d lo[2][2] = {}, hi[2][2] = {};
      const double* a[2] = {A + m0 * P, A + (m0 + 1) * P};
      const double* b[2] = {B + n0 * P, B + (n0 + 1) * P};
      for (std::size_t p = 0; p < P8; p += 8) {
        const v4d a0l = load4(a[0] + p), a0h = load4(a[0] + p + 4);
        const v4d a1l = load4(a[1] + p), a1h = load4(a[1] + p + 4);
        const v4d b0l = load4(b[0] + p), b0h = load4(b[0] + p + 4);
        const v4d b1l = load4(b[1] + p), b1h = load4(b[1] + p + 4);
        lo[0][0] += a0l * b0l;
        hi[0][0] += a0h * b0h;
        lo[0][1] += a0l * b1l;
        hi[0][1] += a0h * b1h;
        lo[1][0] += a1l * b0l;
        hi[1][0] += a1h * b0h;
        lo[1][1] += a1l * b1l;
        hi[1][1] += a1h * b1h;
      }
      for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 2; ++j) {
          double tail = 0.0;
          for (std::size_t p = P8; p < P; ++p) tail += a[i][p] * b[j][p];
          C[(m0 + i) * N + n0 + j] += fold8(lo[i][j], hi[i][j]) + tail;
        }
    }
    for (; n0 < N; ++n0)
      for (std::size_t i = 0; i < 2; ++i) C[(m0 + i) * N + n0] += dot8(P, A + (m0 + i) * P, B + n0 * P);
  }
  for (; m0 < M; ++m0)
    for (std::size_t n0 = 0; n0 < N; ++n0) C[m0 * N + n0] += dot8(P, A + m0 * P, B + n0 * P);
}

}  // namespace

Var conv2d(const Var& x, const Var& w) {
  Tape& tape = same_tape(x, w, "conv2d");
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (xs.size() != 4) throw ShapeError("conv2d: input must be rank 4, got " + shape_to_string(xs));
  if (ws.size() != 4 || ws[2] != 3 || ws[3] != 3 || ws[1] != xs[1]) {
    throw ShapeError("conv2d: kernel " + shape_to_string(ws) + " incompatible with input " + shape_to_string(xs));
  }
  const std::size_t N = xs[0], Ci = xs[1], H = xs[2], W = xs[3], Co = ws[0];
  const std::size_t HW = H * W, K = Ci * 9;
  const long lH = static_cast<long>(H), lW = static_cast<long>(W);
  const double* xv = x.value().data().data();
  const double* wv = w.value().data().data();
  Tensor out(Shape{N, Co, H, W}, 0.0);
  std::vector<double> col(K * HW);
  for (std::size_t n = 0; n < N; ++n) {
    im2col(xv + n * Ci * HW, Ci, lH, lW, col.data());
    gemm_nn(Co, HW, K, wv, col.data(), out.data().data() + n * Co * HW);
  }
  const std::size_t xid = x.id(), wid = w.id();
  return tape.record("conv2d", std::move(out), {xid, wid},
                     [xid, wid, N, Ci, Co, lH, lW, HW, K](Tape& t, std::size_t, const Tensor& g) {
    const bool need_x = t.requires_grad(xid);
    const bool need_w = t.requires_grad(wid);
    const double* xv = t.value(xid).data().data();
    const double* wv = t.value(wid).data().data();
    double* dx = need_x ? t.grad_buffer(xid).data() : nullptr;
    double* dw = need_w ? t.grad_buffer(wid).data() : nullptr;
    std::vector<double> col(need_w ? K * HW : 0);
    std::vector<double> dcol(need_x ? K * HW : 0);
    std::vector<double> wt;
    if (need_x) {
      wt.resize(K * Co);
      for (std::size_t co = 0; co < Co; ++co)
        for (std::size_t r = 0; r < K; ++r) wt[r * Co + co] = wv[co * K + r];
    }
    for (std::size_t n = 0; n < N; ++n) {
      const double* gn = g.data().data() + n * Co * HW;
      if (dw) {
        im2col(xv + n * Ci * HW, Ci, lH, lW, col.data());
        gemm_nt(Co, K, HW, gn, col.data(), dw);
      }
      if (dx) {
        std::fill(dcol.begin(), dcol.end(), 0.0);
        gemm_nn(K, HW, Co, wt.data(), gn, dcol.data());
        col2im_add(dcol.data(), Ci, lH, lW, dx + n * Ci * HW);
      }
    }
  });
}

Var bias_add(const Var& x, const Var& b) {
  Tape& tape = same_tape(x, b, "bias_add");
  const Shape& xs = x.shape();
  if (xs.size() < 2 || b.shape().size() != 1 || b.shape()[0] != xs[1]) {
    throw ShapeError("bias_add: bias " + shape_to_string(b.shape()) + " does not match axis 1 of " +
                     shape_to_string(xs));
  }
  const AxisSplit s = split_at(xs, 1, "bias_add");
  Tensor out = x.value();
  const Tensor& bv = b.value();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t c = 0; c < s.extent; ++c) {
      double* p = out.data().data() + (o * s.extent + c) * s.inner;
      for (std::size_t i = 0; i < s.inner; ++i) p[i] += bv[c];
    }
  const std::size_t xid = x.id(), bid = b.id();
  return tape.record("bias_add", std::move(out), {xid, bid}, [xid, bid, s](Tape& t, std::size_t, const Tensor& g) {
    if (t.requires_grad(xid)) {
      auto d = t.grad_buffer(xid);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
    }
    if (t.requires_grad(bid)) {
      auto d = t.grad_buffer(bid);
      for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t c = 0; c < s.extent; ++c) {
          const double* p = g.data().data() + (o * s.extent + c) * s.inner;
          double acc = 0.0;
          for (std::size_t i = 0; i < s.inner; ++i) acc += p[i];
          d[c] += acc;
        }
    }
  });
}

Var relu(const Var& x) {
  // Subgradient 0 at x == 0.
  return unary(
      "relu", x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Var sigmoid(const Var& x) {
  return unary(
      "sigmoid", x,
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var abs(const Var& x) {
  return unary(
      "abs", x, [](double v) { return std::abs(v); },
      [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Var square(const Var& x) {
  return unary(
      "square", x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Var clamp(const Var& x, double lo, double hi) {
  if (!(lo <= hi)) throw InvalidArgument("clamp: lo must not exceed hi");
  return unary(
      "clamp", x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
      [lo, hi](double v, double) { return (v >= lo && v <= hi) ? 1.0 : 0.0; });
}

Var log_softmax(const Var& x, std::size_t axis) {
  const AxisSplit s = split_at(x.shape(), axis, "log_softmax");
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.extent * s.inner + i;
      double m = xv[base];
      for (std::size_t c = 1; c < s.extent; ++c) m = std::max(m, xv[base + c * s.inner]);
      double z = 0.0;
      for (std::size_t c = 0; c < s.extent; ++c) z += std::exp(xv[base + c * s.inner] - m);
      const double lse = m + std::log(z);
      for (std::size_t c = 0; c < s.extent; ++c) out[base + c * s.inner] = xv[base + c * s.inner] - lse;
    }
  const std::size_t xid = x.id();
  return x.tape().record("log_softmax", std::move(out), {xid}, [xid, s](Tape& t, std::size_t self, const Tensor& g) {
    const Tensor& y = t.value(self);
    auto d = t.grad_buffer(xid);
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t base = o * s.extent * s.inner + i;
        double gsum = 0.0;
        for (std::size_t c = 0; c < s.extent; ++c) gsum += g[base + c * s.inner];
        for (std::size_t c = 0; c < s.extent; ++c) {
          const std::size_t k = base + c * s.inner;
          d[k] += g[k] - std::exp(y[k]) * gsum;
        }
      }
  });
}

Var pick(const Var& x, std::size_t axis, std::span<const std::size_t> indices) {
  const AxisSplit s = split_at(x.shape(), axis, "pick");
  if (indices.size() != s.outer * s.inner) {
    throw ShapeError("pick: expected " + std::to_string(s.outer * s.inner) + " indices, got " +
                     std::to_string(indices.size()));
  }
  std::vector<std::size_t> flat(indices.size());
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t c = indices[o * s.inner + i];
      if (c >= s.extent) {
        throw InvalidArgument("pick: class index " + std::to_string(c) + " out of range [0, " +
                              std::to_string(s.extent) + ")");
      }
      flat[o * s.inner + i] = (o * s.extent + c) * s.inner + i;
    }
  Shape out_shape = drop_axis(x.shape(), axis);
  const Tensor& xv = x.value();
  Tensor out(out_shape);
  for (std::size_t j = 0; j < flat.size(); ++j) out[j] = xv[flat[j]];
  const std::size_t xid = x.id();
  return x.tape().record("pick", std::move(out), {xid}, [xid, flat = std::move(flat)](Tape& t, std::size_t, const Tensor& g) {
    auto d = t.grad_buffer(xid);
    for (std::size_t j = 0; j < flat.size(); ++j) d[flat[j]] += g[j];
  });
}

Var gather(const Var& x, std::span<const std::size_t> flat_indices) {
  if (flat_indices.empty()) throw ShapeError("gather: empty index set");
  const Tensor& xv = x.value();
  std::vector<std::size_t> idx(flat_indices.begin(), flat_indices.end());
  Tensor out(Shape{idx.size()});
  for (std::size_t j = 0; j < idx.size(); ++j) {
    if (idx[j] >= xv.numel()) throw InvalidArgument("gather: index out of range");
    out[j] = xv[idx[j]];
  }
  const std::size_t xid = x.id();
  return x.tape().record("gather", std::move(out), {xid}, [xid, idx = std::move(idx)](Tape& t, std::size_t, const Tensor& g) {
    auto d = t.grad_buffer(xid);
    for (std::size_t j = 0; j < idx.size(); ++j) d[idx[j]] += g[j];
  });
}

Var sum(const Var& x) {
  double acc = 0.0;
  for (double v : x.value().data()) acc += v;
  const std::size_t xid = x.id();
  return x.tape().record("sum", Tensor::scalar(acc), {xid}, [xid](Tape& t, std::size_t, const Tensor& g) {
    auto d = t.grad_buffer(xid);
    for (double& v : d) v += g[0];
  });
}

Var mean(const Var& x) {
  const double n = static_cast<double>(x.value().numel());
  double acc = 0.0;
  for (double v : x.value().data()) acc += v;
  const std::size_t xid = x.id();
  return x.tape().record("mean", Tensor::scalar(acc / n), {xid}, [xid, n](Tape& t, std::size_t, const Tensor& g) {
    auto d = t.grad_buffer(xid);
    const double share = g[0] / n;
    for (double& v : d) v += share;
  });
}

Var mean_axis(const Var& x, std::size_t axis) {
  const AxisSplit s = split_at(x.shape(), axis, "mean_axis");
  const Tensor& xv = x.value();
  Tensor out(drop_axis(x.shape(), axis), 0.0);
  const double n = static_cast<double>(s.extent);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.inner; ++i) {
      double acc = 0.0;
      for (std::size_t c = 0; c < s.extent; ++c) acc += xv[(o * s.extent + c) * s.inner + i];
      out[o * s.inner + i] = acc / n;
    }
  const std::size_t xid = x.id();
  return x.tape().record("mean_axis", std::move(out), {xid}, [xid, s, n](Tape& t, std::size_t, const Tensor& g) {
    auto d = t.grad_buffer(xid);
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t i = 0; i < s.inner; ++i) {
        const double share = g[o * s.inner + i] / n;
        for (std::size_t c = 0; c < s.extent; ++c) d[(o * s.extent + c) * s.inner + i] += share;
      }
  });
}

Var slice(const Var& x, std::size_t axis, std::size_t begin, std::size_t end) {
  const AxisSplit s = split_at(x.shape(), axis, "slice");
  if (begin >= end || end > s.extent) {
    throw ShapeError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) + ") invalid for extent " +
                     std::to_string(s.extent));
  }
  Shape out_shape = x.shape();
  out_shape[axis] = end - begin;
  const std::size_t len = end - begin;
  const Tensor& xv = x.value();
  Tensor out(out_shape);
  for (std::size_t o = 0; o < s.outer; ++o) {
    const double* src = xv.data().data() + (o * s.extent + begin) * s.inner;
    std::copy(src, src + len * s.inner, out.data().data() + o * len * s.inner);
  }
  const std::size_t xid = x.id();
  return x.tape().record("slice", std::move(out), {xid}, [xid, s, begin, len](Tape& t, std::size_t, const Tensor& g) {
    auto d = t.grad_buffer(xid);
    for (std::size_t o = 0; o < s.outer; ++o) {
      double* dst = d.data() + (o * s.extent + begin) * s.inner;
      const double* src = g.data().data() + o * len * s.inner;
      for (std::size_t i = 0; i < len * s.inner; ++i) dst[i] += src[i];
    }
  });
}

Var reshape(const Var& x, Shape shape) {
  if (shape_numel(shape) != x.value().numel()) {
    throw ShapeError("reshape: " + shape_to_string(x.shape()) + " -> " + shape_to_string(shape));
  }
  Tensor out(std::move(shape), x.value().values());
  const std::size_t xid = x.id();
  return x.tape().record("reshape", std::move(out), {xid}, [xid](Tape& t, std::size_t, const Tensor& g) {
    auto d = t.grad_buffer(xid);
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
  });
}

}  // namespace mtr::ad
