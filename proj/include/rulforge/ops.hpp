#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "rulforge/tape.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace rulforge::core {

// ---------------------------------------------------------------------------
// Elementwise and broadcast ops
// ---------------------------------------------------------------------------

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  detail::require_same_tape(a, b);
  Tape<T>& tape = *a.tape;
  const Tensor<T>& av = tape.value(a);
  const Tensor<T>& bv = tape.value(b);
  if (!av.same_shape(bv)) {
    throw ShapeError("add shape mismatch: " + shape_str(av.shape()) + " vs " +
                     shape_str(bv.shape()));
  }
  Tensor<T> out = av;
  const T* bp = bv.data();
  T* op = out.data();
  const std::int64_t n = out.numel();
  for (std::int64_t i = 0; i < n; ++i) op[i] += bp[i];
  const bool rg = tape.requires_grad(a.id) || tape.requires_grad(b.id);
  Var<T> y = tape.emit(std::move(out), rg);
  if (rg) {
    tape.set_backward(y, [tp = &tape, aid = a.id, bid = b.id, yid = y.id] {
      const Tensor<T>& gy = tp->grad_acc(yid);
      const std::int64_t m = gy.numel();
      if (Tensor<T>* ga = tp->grad_sink(aid)) {
        for (std::int64_t i = 0; i < m; ++i) (*ga)[i] += gy[i];
      }
      if (Tensor<T>* gb = tp->grad_sink(bid)) {
        for (std::int64_t i = 0; i < m; ++i) (*gb)[i] += gy[i];
      }
    });
  }
  return y;
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  detail::require_same_tape(a, b);
  Tape<T>& tape = *a.tape;
  const Tensor<T>& av = tape.value(a);
  const Tensor<T>& bv = tape.value(b);
  if (!av.same_shape(bv)) {
    throw ShapeError("sub shape mismatch: " + shape_str(av.shape()) + " vs " +
                     shape_str(bv.shape()));
  }
  Tensor<T> out = av;
  const T* bp = bv.data();
  T* op = out.data();
  const std::int64_t n = out.numel();
  for (std::int64_t i = 0; i < n; ++i) op[i] -= bp[i];
  const bool rg = tape.requires_grad(a.id) || tape.requires_grad(b.id);
  Var<T> y = tape.emit(std::move(out), rg);
  if (rg) {
    tape.set_backward(y, [tp = &tape, aid = a.id, bid = b.id, yid = y.id] {
      const Tensor<T>& gy = tp->grad_acc(yid);
      const std::int64_t m = gy.numel();
      if (Tensor<T>* ga = tp->grad_sink(aid)) {
        for (std::int64_t i = 0; i < m; ++i) (*ga)[i] += gy[i];
      }
      if (Tensor<T>* gb = tp->grad_sink(bid)) {
        for (std::int64_t i = 0; i < m; ++i) (*gb)[i] -= gy[i];
      }
    });
  }
  return y;
}

// Hadamard product. a == b is allowed and differentiates correctly (the two
// accumulations sum to 2x).
template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  detail::require_same_tape(a, b);
  Tape<T>& tape = *a.tape;
  const Tensor<T>& av = tape.value(a);
  const Tensor<T>& bv = tape.value(b);
  if (!av.same_shape(bv)) {
    throw ShapeError("mul shape mismatch: " + shape_str(av.shape()) + " vs " +
                     shape_str(bv.shape()));
  }
  Tensor<T> out = av;
  const T* bp = bv.data();
  T* op = out.data();
  const std::int64_t n = out.numel();
  for (std::int64_t i = 0; i < n; ++i) op[i] *= bp[i];
  const bool rg = tape.requires_grad(a.id) || tape.requires_grad(b.id);
  Var<T> y = tape.emit(std::move(out), rg);
  if (rg) {
    tape.set_backward(y, [tp = &tape, aid = a.id, bid = b.id, yid = y.id] {
      const Tensor<T>& gy = tp->grad_acc(yid);
      const Tensor<T>& av2 = tp->value(Var<T>{tp, aid});
      const Tensor<T>& bv2 = tp->value(Var<T>{tp, bid});
      const std::int64_t m = gy.numel();
      if (Tensor<T>* ga = tp->grad_sink(aid)) {
        for (std::int64_t i = 0; i < m; ++i) (*ga)[i] += gy[i] * bv2[i];
      }
      if (Tensor<T>* gb = tp->grad_sink(bid)) {
        for (std::int64_t i = 0; i < m; ++i) (*gb)[i] += gy[i] * av2[i];
      }
    });
  }
  return y;
}

template <typename T>
Var<T> scale(Var<T> a, T factor) {
  Tape<T>& tape = *a.tape;
  Tensor<T> out = tape.value(a);
  T* op = out.data();
  const std::int64_t n = out.numel();
  for (std::int64_t i = 0; i < n; ++i) op[i] *= factor;
  const bool rg = tape.requires_grad(a.id);
  Var<T> y = tape.emit(std::move(out), rg);
  if (rg) {
    tape.set_backward(y, [tp = &tape, aid = a.id, yid = y.id, factor] {
      const Tensor<T>& gy = tp->grad_acc(yid);
      if (Tensor<T>* ga = tp->grad_sink(aid)) {
        const std::int64_t m = gy.numel();
        for (std::int64_t i = 0; i < m; ++i) (*ga)[i] += factor * gy[i];
      }
    });
  }
  return y;
}

// Broadcast-add a length-N vector to every row of an R x N matrix.
template <typename T>
Var<T> add_rowvec(Var<T> m, Var<T> v) {
  detail::require_same_tape(m, v);
  Tape<T>& tape = *m.tape;
  const Tensor<T>& mv = tape.value(m);
  const Tensor<T>& vv = tape.value(v);
  if (mv.rank() != 2 || vv.rank() != 1 || mv.dim(1) != vv.dim(0)) {
    throw ShapeError("add_rowvec expects [RxN] and [N], got " + shape_str(mv.shape()) +
                     " and " + shape_str(vv.shape()));
  }
  const std::int64_t rows = mv.dim(0), cols = mv.dim(1);
  Tensor<T> out = mv;
  for (std::int64_t r = 0; r < rows; ++r) {
    T* orow = out.data() + r * cols;
    const T* vp = vv.data();
    for (std::int64_t j = 0; j < cols; ++j) orow[j] += vp[j];
  }
  const bool rg = tape.requires_grad(m.id) || tape.requires_grad(v.id);
  Var<T> y = tape.emit(std::move(out), rg);
  if (rg) {
    tape.set_backward(y, [tp = &tape, mid = m.id, vid = v.id, yid = y.id, rows, cols] {
      const Tensor<T>& gy = tp->grad_acc(yid);
      if (Tensor<T>* gm = tp->grad_sink(mid)) {
        const std::int64_t n = gy.numel();
        for (std::int64_t i = 0; i < n; ++i) (*gm)[i] += gy[i];
      }
      if (Tensor<T>* gv = tp->grad_sink(vid)) {
        for (std::int64_t r = 0; r < rows; ++r) {
          const T* grow = gy.data() + r * cols;
          for (std::int64_t j = 0; j < cols; ++j) (*gv)[j] += grow[j];
        }
      }
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// Matrix products
// ---------------------------------------------------------------------------

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  detail::require_same_tape(a, b);
  Tape<T>& tape = *a.tape;
  const Tensor<T>& av = tape.value(a);
  const Tensor<T>& bv = tape.value(b);
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0)) {
    throw ShapeError("matmul shape mismatch: " + shape_str(av.shape()) + " x " +
                     shape_str(bv.shape()));
  }
  const std::int64_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  Tensor<T> out({m, n});
  {
    const T* ap = av.data();
    const T* bp = bv.data();
    T* op = out.data();
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (m * k * n > (1 << 16))
#endif
    for (std::int64_t i = 0; i < m; ++i) {
      T* orow = op + i * n;
      const T* arow = ap + i * k;
      for (std::int64_t kk = 0; kk < k; ++kk) {
        detail::axpy(arow[kk], bp + kk * n, orow, n);
      }
    }
  }
  const bool rg = tape.requires_grad(a.id) || tape.requires_grad(b.id);
  Var<T> y = tape.emit(std::move(out), rg);
  if (rg) {
    tape.set_backward(y, [tp = &tape, aid = a.id, bid = b.id, yid = y.id, m, k, n] {
      const Tensor<T>& gy = tp->grad_acc(yid);
      const Tensor<T>& av2 = tp->value(Var<T>{tp, aid});
      const Tensor<T>& bv2 = tp->value(Var<T>{tp, bid});
      if (Tensor<T>* ga = tp->grad_sink(aid)) {
        // dA[i,kk] = dot(dY[i,:], B[kk,:])
        T* gp = ga->data();
        const T* gyp = gy.data();
        const T* bp = bv2.data();
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (m * k * n > (1 << 16))
#endif
        for (std::int64_t i = 0; i < m; ++i) {
          for (std::int64_t kk = 0; kk < k; ++kk) {
            gp[i * k + kk] += detail::dot(gyp + i * n, bp + kk * n, n);
          }
        }
      }
      if (Tensor<T>* gb = tp->grad_sink(bid)) {
        // dB[kk,:] += A[i,kk] * dY[i,:]
        T* gp = gb->data();
        const T* gyp = gy.data();
        const T* ap = av2.data();
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (m * k * n > (1 << 16))
#endif
        for (std::int64_t kk = 0; kk < k; ++kk) {
          T* grow = gp + kk * n;
          for (std::int64_t i = 0; i < m; ++i) {
            detail::axpy(ap[i * k + kk], gyp + i * n, grow, n);
          }
        }
      }
    });
  }
  return y;
}

// y[r] = dot(m[r,:], v)
template <typename T>
Var<T> matvec(Var<T> m, Var<T> v) {
  detail::require_same_tape(m, v);
  Tape<T>& tape = *m.tape;
  const Tensor<T>& mv = tape.value(m);
  const Tensor<T>& vv = tape.value(v);
  if (mv.rank() != 2 || vv.rank() != 1 || mv.dim(1) != vv.dim(0)) {
    throw ShapeError("matvec shape mismatch: " + shape_str(mv.shape()) + " x " +
                     shape_str(vv.shape()));
  }
  const std::int64_t rows = mv.dim(0), cols = mv.dim(1);
  Tensor<T> out({rows});
  for (std::int64_t r = 0; r < rows; ++r) {
    out[r] = detail::dot(mv.data() + r * cols, vv.data(), cols);
  }
  const bool rg = tape.requires_grad(m.id) || tape.requires_grad(v.id);
  Var<T> y = tape.emit(std::move(out), rg);
  if (rg) {
    tape.set_backward(y, [tp = &tape, mid = m.id, vid = v.id, yid = y.id, rows, cols] {
      const Tensor<T>& gy = tp->grad_acc(yid);
      const Tensor<T>& mv2 = tp->value(Var<T>{tp, mid});
      const Tensor<T>& vv2 = tp->value(Var<T>{tp, vid});
      if (Tensor<T>* gm = tp->grad_sink(mid)) {
        for (std::int64_t r = 0; r < rows; ++r) {
          detail::axpy(gy[r], vv2.data(), gm->data() + r * cols, cols);
        }
      }
      if (Tensor<T>* gv = tp->grad_sink(vid)) {
        for (std::int64_t r = 0; r < rows; ++r) {
          detail::axpy(gy[r], mv2.data() + r * cols, gv->data(), cols);
        }
      }
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// Convolution (cross-correlation, zero same-padding, odd kernel)
// ---------------------------------------------------------------------------

namespace detail {

// Lowered convolution patches: cols[(b*len + l)][ci*kern + kk] = padded x.
// The (ci, kk) ordering matches the direct accumulation order.
template <typename T>
std::vector<T> im2col(const T* xp, std::int64_t batch, std::int64_t cin, std::int64_t len,
                      std::int64_t kern, std::int64_t pad) {
  const std::int64_t depth = cin * kern;
  std::vector<T> cols(static_cast<std::size_t>(batch * len * depth), T(0));
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (batch > 1)
#endif
  for (std::int64_t b = 0; b < batch; ++b) {
    for (std::int64_t l = 0; l < len; ++l) {
      T* row = cols.data() + (b * len + l) * depth;
      for (std::int64_t ci = 0; ci < cin; ++ci) {
        const T* xrow = xp + (b * cin + ci) * len;
        for (std::int64_t kk = 0; kk < kern; ++kk) {
          const std::int64_t src = l + kk - pad;
          if (src >= 0 && src < len) row[ci * kern + kk] = xrow[src];
        }
      }
    }
  }
  return cols;
}

}  // namespace detail

// x: [Cin,L] or [B,Cin,L]; w: [Cout,Cin,k]; bias: [Cout]. Output length equals
// input length for any odd k. Lowered to patch-matrix products so the inner
// loops run over the channel depth rather than the (short) sequence axis.
template <typename T>
Var<T> conv1d(Var<T> x, Var<T> w, Var<T> bias) {
  detail::require_same_tape(x, w);
  detail::require_same_tape(x, bias);
  Tape<T>& tape = *x.tape;
  const Tensor<T>& xv = tape.value(x);
  const Tensor<T>& wv = tape.value(w);
  const Tensor<T>& bv = tape.value(bias);
  const bool batched = xv.rank() == 3;
  if (!batched && xv.rank() != 2) {
    throw ShapeError("conv1d input must be [Cin,L] or [B,Cin,L], got " + shape_str(xv.shape()));
  }
  if (wv.rank() != 3) throw ShapeError("conv1d weight must be [Cout,Cin,k], got " + shape_str(wv.shape()));
  const std::int64_t batch = batched ? xv.dim(0) : 1;
  const std::int64_t cin = batched ? xv.dim(1) : xv.dim(0);
  const std::int64_t len = batched ? xv.dim(2) : xv.dim(1);
  const std::int64_t cout = wv.dim(0), kern = wv.dim(2);
  if (kern % 2 == 0) throw ConfigError("conv1d kernel size must be odd, got " + std::to_string(kern));
  if (wv.dim(1) != cin) {
    throw ShapeError("conv1d channel mismatch: input " + shape_str(xv.shape()) + " vs weight " +
                     shape_str(wv.shape()));
  }
  if (bv.rank() != 1 || bv.dim(0) != cout) {
    throw ShapeError("conv1d bias must be [Cout], got " + shape_str(bv.shape()));
  }
  const std::int64_t pad = (kern - 1) / 2;
  const std::int64_t rows = batch * len;
  const std::int64_t depth = cin * kern;

  auto cols = std::make_shared<std::vector<T>>(detail::im2col(xv.data(), batch, cin, len, kern, pad));
  // w transposed to [depth, cout] so the product's inner loop is contiguous.
  std::vector<T> wt(static_cast<std::size_t>(depth * cout));
  for (std::int64_t co = 0; co < cout; ++co) {
    for (std::int64_t d = 0; d < depth; ++d) wt[d * cout + co] = wv[co * depth + d];
  }

  // out2[(b*len + l)][co] = bias[co] + cols row . w[co]
  std::vector<T> out2(static_cast<std::size_t>(rows * cout));
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (rows * depth * cout > (1 << 16))
#endif
  for (std::int64_t r = 0; r < rows; ++r) {
    T* orow = out2.data() + r * cout;
    for (std::int64_t co = 0; co < cout; ++co) orow[co] = bv[co];
    const T* crow = cols->data() + r * depth;
    for (std::int64_t d = 0; d < depth; ++d) {
      detail::axpy(crow[d], wt.data() + d * cout, orow, cout);
    }
  }
  Tensor<T> out(batched ? Shape{batch, cout, len} : Shape{cout, len});
  for (std::int64_t b = 0; b < batch; ++b) {
    for (std::int64_t co = 0; co < cout; ++co) {
      T* orow = out.data() + (b * cout + co) * len;
      for (std::int64_t l = 0; l < len; ++l) orow[l] = out2[(b * len + l) * cout + co];
    }
  }

  const bool rg =
      tape.requires_grad(x.id) || tape.requires_grad(w.id) || tape.requires_grad(bias.id);
  Var<T> y = tape.emit(std::move(out), rg);
  if (rg) {
    tape.set_backward(y, [tp = &tape, xid = x.id, wid = w.id, bid = bias.id, yid = y.id, cols,
                          batch, cin, cout, len, kern, pad, rows, depth] {
      const Tensor<T>& gy = tp->grad_acc(yid);
      const Tensor<T>& wv2 = tp->value(Var<T>{tp, wid});
      // Gather dY into row-major [rows, cout].
      std::vector<T> gy2(static_cast<std::size_t>(rows * cout));
      for (std::int64_t b = 0; b < batch; ++b) {
        for (std::int64_t co = 0; co < cout; ++co) {
          const T* grow = gy.data() + (b * cout + co) * len;
          for (std::int64_t l = 0; l < len; ++l) gy2[(b * len + l) * cout + co] = grow[l];
        }
      }
      if (Tensor<T>* gx = tp->grad_sink(xid)) {
        // dcols = dY2 . W  ([rows, cout] x [cout, depth]), then scatter-add.
        std::vector<T> dcols(static_cast<std::size_t>(rows * depth), T(0));
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (rows * depth * cout > (1 << 16))
#endif
        for (std::int64_t r = 0; r < rows; ++r) {
          T* drow = dcols.data() + r * depth;
          const T* grow = gy2.data() + r * cout;
          for (std::int64_t co = 0; co < cout; ++co) {
            detail::axpy(grow[co], wv2.data() + co * depth, drow, depth);
          }
        }
        T* gxp = gx->data();
        for (std::int64_t b = 0; b < batch; ++b) {
          for (std::int64_t l = 0; l < len; ++l) {
            const T* drow = dcols.data() + (b * len + l) * depth;
            for (std::int64_t ci = 0; ci < cin; ++ci) {
              T* gxrow = gxp + (b * cin + ci) * len;
              for (std::int64_t kk = 0; kk < kern; ++kk) {
                const std::int64_t src = l + kk - pad;
                if (src >= 0 && src < len) gxrow[src] += drow[ci * kern + kk];
              }
            }
          }
        }
      }
      if (Tensor<T>* gw = tp->grad_sink(wid)) {
        // dW[co][d] = sum_r dY2[r][co] * cols[r][d], accumulated row by row.
        std::vector<T> gwt(static_cast<std::size_t>(depth * cout), T(0));
        for (std::int64_t r = 0; r < rows; ++r) {
          const T* crow = cols->data() + r * depth;
          const T* grow = gy2.data() + r * cout;
          for (std::int64_t d = 0; d < depth; ++d) {
            detail::axpy(crow[d], grow, gwt.data() + d * cout, cout);
          }
        }
        T* gwp = gw->data();
        for (std::int64_t co = 0; co < cout; ++co) {
          for (std::int64_t d = 0; d < depth; ++d) gwp[co * depth + d] += gwt[d * cout + co];
        }
      }
      if (Tensor<T>* gb = tp->grad_sink(bid)) {
        for (std::int64_t r = 0; r < rows; ++r) {
          const T* grow = gy2.data() + r * cout;
          for (std::int64_t co = 0; co < cout; ++co) (*gb)[co] += grow[co];
        }
      }
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// Batch normalization over (B, L) per channel
// ---------------------------------------------------------------------------

// Running statistics live outside the tape (checkpointable buffers); train
// mode updates them in place with the given momentum. Normalization uses the
// biased batch variance; the running variance stores the unbiased estimate.
template <typename T>
Var<T> batchnorm1d(Var<T> x, Var<T> gamma, Var<T> beta, Tensor<T>& running_mean,
                   Tensor<T>& running_var, Mode mode, T momentum = T(0.1),
                   T eps = T(1e-5)) {
  detail::require_same_tape(x, gamma);
  detail::require_same_tape(x, beta);
  Tape<T>& tape = *x.tape;
  const Tensor<T>& xv = tape.value(x);
  if (xv.rank() != 3) {
    throw ShapeError("batchnorm1d input must be [B,C,L], got " + shape_str(xv.shape()));
  }
  const std::int64_t batch = xv.dim(0), chans = xv.dim(1), len = xv.dim(2);
  const Tensor<T>& gv = tape.value(gamma);
  const Tensor<T>& bv = tape.value(beta);
  if (gv.numel() != chans || bv.numel() != chans || running_mean.numel() != chans ||
      running_var.numel() != chans) {
    throw ShapeError("batchnorm1d channel mismatch: input has " + std::to_string(chans) +
                     " channels");
  }
  const std::int64_t n = batch * len;
  const bool train = mode == Mode::kTrain;
  if (train && n < 2) throw ContractError("batchnorm1d degenerate batch: B*L = " + std::to_string(n));

  auto xhat = std::make_shared<std::vector<T>>(xv.numel());
  auto istd = std::make_shared<std::vector<T>>(chans);
  Tensor<T> out(xv.shape());
  {
    const T* xp = xv.data();
    T* op = out.data();
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (chans > 1 && n > 1024)
#endif
    for (std::int64_t c = 0; c < chans; ++c) {
      T mean, var;
      if (train) {
        T sum = T(0);
        for (std::int64_t b = 0; b < batch; ++b) {
          const T* row = xp + (b * chans + c) * len;
          for (std::int64_t l = 0; l < len; ++l) sum += row[l];
        }
        mean = sum / static_cast<T>(n);
        T sq = T(0);
        for (std::int64_t b = 0; b < batch; ++b) {
          const T* row = xp + (b * chans + c) * len;
          for (std::int64_t l = 0; l < len; ++l) {
            const T d = row[l] - mean;
            sq += d * d;
          }
        }
        var = sq / static_cast<T>(n);
        running_mean[c] = (T(1) - momentum) * running_mean[c] + momentum * mean;
        running_var[c] = (T(1) - momentum) * running_var[c] +
                         momentum * var * static_cast<T>(n) / static_cast<T>(n - 1);
      } else {
        mean = running_mean[c];
        var = running_var[c];
      }
      const T is = T(1) / std::sqrt(var + eps);
      (*istd)[c] = is;
      const T g = gv[c], bta = bv[c];
      for (std::int64_t b = 0; b < batch; ++b) {
        const T* row = xp + (b * chans + c) * len;
        T* xh = xhat->data() + (b * chans + c) * len;
        T* orow = op + (b * chans + c) * len;
        for (std::int64_t l = 0; l < len; ++l) {
          xh[l] = (row[l] - mean) * is;
          orow[l] = g * xh[l] + bta;
        }
      }
    }
  }
  const bool rg =
      tape.requires_grad(x.id) || tape.requires_grad(gamma.id) || tape.requires_grad(beta.id);
  Var<T> y = tape.emit(std::move(out), rg);
  if (rg) {
    tape.set_backward(y, [tp = &tape, xid = x.id, gid = gamma.id, bid = beta.id, yid = y.id,
                          xhat, istd, batch, chans, len, n, train] {
      const Tensor<T>& gy = tp->grad_acc(yid);
      const Tensor<T>& gv2 = tp->value(Var<T>{tp, gid});
      const T* gyp = gy.data();
      Tensor<T>* gx = tp->grad_sink(xid);
      Tensor<T>* gg = tp->grad_sink(gid);
      Tensor<T>* gb = tp->grad_sink(bid);
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (chans > 1 && n > 1024)
#endif
      for (std::int64_t c = 0; c < chans; ++c) {
        T sum_dy = T(0), sum_dy_xhat = T(0);
        for (std::int64_t b = 0; b < batch; ++b) {
          const T* grow = gyp + (b * chans + c) * len;
          const T* xh = xhat->data() + (b * chans + c) * len;
          for (std::int64_t l = 0; l < len; ++l) {
            sum_dy += grow[l];
            sum_dy_xhat += grow[l] * xh[l];
          }
        }
        if (gg) (*gg)[c] += sum_dy_xhat;
        if (gb) (*gb)[c] += sum_dy;
        if (gx) {
          const T g = gv2[c];
          const T is = (*istd)[c];
          for (std::int64_t b = 0; b < batch; ++b) {
            const T* grow = gyp + (b * chans + c) * len;
            const T* xh = xhat->data() + (b * chans + c) * len;
            T* gxrow = gx->data() + (b * chans + c) * len;
            if (train) {
              const T inv_n = T(1) / static_cast<T>(n);
              for (std::int64_t l = 0; l < len; ++l) {
                gxrow[l] += g * is * (grow[l] - inv_n * sum_dy - inv_n * xh[l] * sum_dy_xhat);
              }
            } else {
              for (std::int64_t l = 0; l < len; ++l) gxrow[l] += g * is * grow[l];
            }
          }
        }
      }
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

template <typename T>
Var<T> activation(Var<T> x, Activation kind, T leaky_slope = T(0.01)) {
  Tape<T>& tape = *x.tape;
  const Tensor<T>& xv = tape.value(x);
  Tensor<T> out(xv.shape());
  const T* xp = xv.data();
  T* op = out.data();
  const std::int64_t n = xv.numel();
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  constexpr double kInvSqrt2Pi = 0.39894228040143267794;
  switch (kind) {
    case Activation::kLeakyRelu:
      for (std::int64_t i = 0; i < n; ++i) op[i] = xp[i] > T(0) ? xp[i] : leaky_slope * xp[i];
      break;
    case Activation::kRelu:
      for (std::int64_t i = 0; i < n; ++i) op[i] = xp[i] > T(0) ? xp[i] : T(0);
      break;
    case Activation::kGelu:
      for (std::int64_t i = 0; i < n; ++i) {
        op[i] = static_cast<T>(0.5) * xp[i] *
                static_cast<T>(1.0 + std::erf(static_cast<double>(xp[i]) * kInvSqrt2));
      }
      break;
    case Activation::kHardswish:
      for (std::int64_t i = 0; i < n; ++i) {
        if (xp[i] <= T(-3)) {
          op[i] = T(0);
        } else if (xp[i] >= T(3)) {
          op[i] = xp[i];
        } else {
          op[i] = xp[i] * (xp[i] + T(3)) / T(6);
        }
      }
      break;
    case Activation::kSigmoid:
      for (std::int64_t i = 0; i < n; ++i) {
        op[i] = static_cast<T>(1.0 / (1.0 + std::exp(-static_cast<double>(xp[i]))));
      }
      break;
    case Activation::kTanh:
      for (std::int64_t i = 0; i < n; ++i) op[i] = std::tanh(xp[i]);
      break;
  }
  const bool rg = tape.requires_grad(x.id);
  Var<T> y = tape.emit(std::move(out), rg);
  if (rg) {
    tape.set_backward(y, [tp = &tape, xid = x.id, yid = y.id, kind, leaky_slope] {
      const Tensor<T>& gy = tp->grad_acc(yid);
      Tensor<T>* gx = tp->grad_sink(xid);
      if (!gx) return;
      const Tensor<T>& xv2 = tp->value(Var<T>{tp, xid});
      const Tensor<T>& yv2 = tp->value(Var<T>{tp, yid});
      const std::int64_t m = gy.numel();
      for (std::int64_t i = 0; i < m; ++i) {
        T d;
        switch (kind) {
          case Activation::kLeakyRelu: d = xv2[i] > T(0) ? T(1) : leaky_slope; break;
          case Activation::kRelu: d = xv2[i] > T(0) ? T(1) : T(0); break;
          case Activation::kGelu: {
            const double xd = static_cast<double>(xv2[i]);
            d = static_cast<T>(0.5 * (1.0 + std::erf(xd * kInvSqrt2)) +
                               xd * kInvSqrt2Pi * std::exp(-0.5 * xd * xd));
            break;
          }
          case Activation::kHardswish:
            if (xv2[i] <= T(-3)) {
              d = T(0);
            } else if (xv2[i] >= T(3)) {
              d = T(1);
            } else {
              d = (T(2) * xv2[i] + T(3)) / T(6);
            }
            break;
          case Activation::kSigmoid: d = yv2[i] * (T(1) - yv2[i]); break;
          case Activation::kTanh: d = T(1) - yv2[i] * yv2[i]; break;
          default: d = T(0); break;
        }
        (*gx)[i] += gy[i] * d;
      }
    });
  }
  return y;
}

template <typename T>
Var<T> sigmoid(Var<T> x) {
  return activation(x, Activation::kSigmoid);
}

template <typename T>
Var<T> tanh_op(Var<T> x) {
  return activation(x, Activation::kTanh);
}

// ---------------------------------------------------------------------------
// Dropout (inverted: survivors scaled at train time, eval is the identity)
// ---------------------------------------------------------------------------

template <typename T>
Var<T> dropout(Var<T> x, double rate, Mode mode, rng::Stream& stream) {
  if (rate < 0.0 || rate >= 1.0) {
    throw ConfigError("dropout rate must be in [0,1), got " + std::to_string(rate));
  }
  if (mode == Mode::kEval || rate == 0.0) return x;
  Tape<T>& tape = *x.tape;
  const Tensor<T>& xv = tape.value(x);
  const std::int64_t n = xv.numel();
  auto mask = std::make_shared<std::vector<std::uint8_t>>(n);
  const T inv_keep = static_cast<T>(1.0 / (1.0 - rate));
  Tensor<T> out(xv.shape());
  for (std::int64_t i = 0; i < n; ++i) {
    const bool keep = stream.uniform() >= rate;
    (*mask)[i] = keep;
    out[i] = keep ? xv[i] * inv_keep : T(0);
  }
  const bool rg = tape.requires_grad(x.id);
  Var<T> y = tape.emit(std::move(out), rg);
  if (rg) {
    tape.set_backward(y, [tp = &tape, xid = x.id, yid = y.id, mask, inv_keep] {
      const Tensor<T>& gy = tp->grad_acc(yid);
      if (Tensor<T>* gx = tp->grad_sink(xid)) {
        const std::int64_t m = gy.numel();
        for (std::int64_t i = 0; i < m; ++i) {
          if ((*mask)[i]) (*gx)[i] += gy[i] * inv_keep;
        }
      }
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// Softmax, reductions, slicing, concatenation
// ---------------------------------------------------------------------------

// Row-wise softmax over the last dimension of [R,K].
template <typename T>
Var<T> softmax_rows(Var<T> x) {
  Tape<T>& tape = *x.tape;
  const Tensor<T>& xv = tape.value(x);
  if (xv.rank() != 2) throw ShapeError("softmax_rows expects [R,K], got " + shape_str(xv.shape()));
  const std::int64_t rows = xv.dim(0), cols = xv.dim(1);
  Tensor<T> out(xv.shape());
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* xrow = xv.data() + r * cols;
    T* orow = out.data() + r * cols;
    T mx = xrow[0];
    for (std::int64_t j = 1; j < cols; ++j) mx = std::max(mx, xrow[j]);
    T sum = T(0);
    for (std::int64_t j = 0; j < cols; ++j) {
      orow[j] = std::exp(xrow[j] - mx);
      sum += orow[j];
    }
    for (std::int64_t j = 0; j < cols; ++j) orow[j] /= sum;
  }
  const bool rg = tape.requires_grad(x.id);
  Var<T> y = tape.emit(std::move(out), rg);
  if (rg) {
    tape.set_backward(y, [tp = &tape, xid = x.id, yid = y.id, rows, cols] {
      const Tensor<T>& gy = tp->grad_acc(yid);
      if (Tensor<T>* gx = tp->grad_sink(xid)) {
        const Tensor<T>& yv2 = tp->value(Var<T>{tp, yid});
        for (std::int64_t r = 0; r < rows; ++r) {
          const T* grow = gy.data() + r * cols;
          const T* yrow = yv2.data() + r * cols;
          T* gxrow = gx->data() + r * cols;
          const T inner = detail::dot(grow, yrow, cols);
          for (std::int64_t j = 0; j < cols; ++j) gxrow[j] += (grow[j] - inner) * yrow[j];
        }
      }
    });
  }
  return y;
}

// Concatenate [R,Ci] matrices along columns.
template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw ContractError("concat_cols of zero parts");
  Tape<T>& tape = *parts[0].tape;
  const std::int64_t rows = tape.value(parts[0]).dim(0);
  std::int64_t total = 0;
  bool rg = false;
  for (const auto& p : parts) {
    detail::require_same_tape(parts[0], p);
    const Tensor<T>& pv = tape.value(p);
    if (pv.rank() != 2 || pv.dim(0) != rows) {
      throw ShapeError("concat_cols row mismatch at part of shape " + shape_str(pv.shape()));
    }
    total += pv.dim(1);
    rg = rg || tape.requires_grad(p.id);
  }
  Tensor<T> out({rows, total});
  std::int64_t off = 0;
  std::vector<std::int64_t> offsets, widths;
  std::vector<std::int32_t> ids;
  for (const auto& p : parts) {
    const Tensor<T>& pv = tape.value(p);
    const std::int64_t w = pv.dim(1);
    for (std::int64_t r = 0; r < rows; ++r) {
      const T* src = pv.data() + r * w;
      T* dst = out.data() + r * total + off;
      for (std::int64_t j = 0; j < w; ++j) dst[j] = src[j];
    }
    offsets.push_back(off);
    widths.push_back(w);
    ids.push_back(p.id);
    off += w;
  }
  Var<T> y = tape.emit(std::move(out), rg);
  if (rg) {
    tape.set_backward(y, [tp = &tape, yid = y.id, rows, total, offsets, widths, ids] {
      const Tensor<T>& gy = tp->grad_acc(yid);
      for (std::size_t p = 0; p < ids.size(); ++p) {
        if (Tensor<T>* gp = tp->grad_sink(ids[p])) {
          for (std::int64_t r = 0; r < rows; ++r) {
            const T* src = gy.data() + r * total + offsets[p];
            T* dst = gp->data() + r * widths[p];
            for (std::int64_t j = 0; j < widths[p]; ++j) dst[j] += src[j];
          }
        }
      }
    });
  }
  return y;
}

template <typename T>
Var<T> concat_cols(Var<T> a, Var<T> b) {
  return concat_cols(std::vector<Var<T>>{a, b});
}

// Stack K length-R vectors into [R,K] columns.
template <typename T>
Var<T> stack_cols(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw ContractError("stack_cols of zero parts");
  Tape<T>& tape = *parts[0].tape;
  const std::int64_t rows = tape.value(parts[0]).numel();
  const std::int64_t k = static_cast<std::int64_t>(parts.size());
  bool rg = false;
  std::vector<std::int32_t> ids;
  for (const auto& p : parts) {
    detail::require_same_tape(parts[0], p);
    const Tensor<T>& pv = tape.value(p);
    if (pv.rank() != 1 || pv.numel() != rows) {
      throw ShapeError("stack_cols expects equal-length vectors, got " + shape_str(pv.shape()));
    }
    rg = rg || tape.requires_grad(p.id);
    ids.push_back(p.id);
  }
  Tensor<T> out({rows, k});
  for (std::int64_t j = 0; j < k; ++j) {
    const Tensor<T>& pv = tape.value(parts[static_cast<std::size_t>(j)]);
    for (std::int64_t r = 0; r < rows; ++r) out[r * k + j] = pv[r];
  }
  Var<T> y = tape.emit(std::move(out), rg);
  if (rg) {
    tape.set_backward(y, [tp = &tape, yid = y.id, rows, k, ids] {
      const Tensor<T>& gy = tp->grad_acc(yid);
      for (std::int64_t j = 0; j < k; ++j) {
        if (Tensor<T>* gp = tp->grad_sink(ids[static_cast<std::size_t>(j)])) {
          for (std::int64_t r = 0; r < rows; ++r) (*gp)[r] += gy[r * k + j];
        }
      }
    });
  }
  return y;
}

// Column j of [R,K] as a length-R vector.
template <typename T>
Var<T> select_col(Var<T> x, std::int64_t j) {
  Tape<T>& tape = *x.tape;
  const Tensor<T>& xv = tape.value(x);
  if (xv.rank() != 2 || j < 0 || j >= xv.dim(1)) {
    throw ShapeError("select_col " + std::to_string(j) + " out of range for " +
                     shape_str(xv.shape()));
  }
  const std::int64_t rows = xv.dim(0), cols = xv.dim(1);
  Tensor<T> out({rows});
  for (std::int64_t r = 0; r < rows; ++r) out[r] = xv[r * cols + j];
  const bool rg = tape.requires_grad(x.id);
  Var<T> y = tape.emit(std::move(out), rg);
  if (rg) {
    tape.set_backward(y, [tp = &tape, xid = x.id, yid = y.id, j, rows, cols] {
      const Tensor<T>& gy = tp->grad_acc(yid);
      if (Tensor<T>* gx = tp->grad_sink(xid)) {
        for (std::int64_t r = 0; r < rows; ++r) (*gx)[r * cols + j] += gy[r];
      }
    });
  }
  return y;
}

// Slice [B,C,L] at position l of the last axis, giving [B,C].
template <typename T>
Var<T> select_last(Var<T> x, std::int64_t l) {
  Tape<T>& tape = *x.tape;
  const Tensor<T>& xv = tape.value(x);
  if (xv.rank() != 3 || l < 0 || l >= xv.dim(2)) {
    throw ShapeError("select_last " + std::to_string(l) + " out of range for " +
                     shape_str(xv.shape()));
  }
  const std::int64_t batch = xv.dim(0), chans = xv.dim(1), len = xv.dim(2);
  Tensor<T> out({batch, chans});
  for (std::int64_t b = 0; b < batch; ++b) {
    for (std::int64_t c = 0; c < chans; ++c) out[b * chans + c] = xv[(b * chans + c) * len + l];
  }
  const bool rg = tape.requires_grad(x.id);
  Var<T> y = tape.emit(std::move(out), rg);
  if (rg) {
    tape.set_backward(y, [tp = &tape, xid = x.id, yid = y.id, l, batch, chans, len] {
      const Tensor<T>& gy = tp->grad_acc(yid);
      if (Tensor<T>* gx = tp->grad_sink(xid)) {
        for (std::int64_t b = 0; b < batch; ++b) {
          for (std::int64_t c = 0; c < chans; ++c) {
            (*gx)[(b * chans + c) * len + l] += gy[b * chans + c];
          }
        }
      }
    });
  }
  return y;
}

// Scale row r of m by s[r].
template <typename T>
Var<T> colmul(Var<T> s, Var<T> m) {
  detail::require_same_tape(s, m);
  Tape<T>& tape = *s.tape;
  const Tensor<T>& sv = tape.value(s);
  const Tensor<T>& mv = tape.value(m);
  if (sv.rank() != 1 || mv.rank() != 2 || sv.numel() != mv.dim(0)) {
    throw ShapeError("colmul expects [R] and [RxH], got " + shape_str(sv.shape()) + " and " +
                     shape_str(mv.shape()));
  }
  const std::int64_t rows = mv.dim(0), cols = mv.dim(1);
  Tensor<T> out(mv.shape());
  for (std::int64_t r = 0; r < rows; ++r) {
    const T f = sv[r];
    const T* src = mv.data() + r * cols;
    T* dst = out.data() + r * cols;
    for (std::int64_t j = 0; j < cols; ++j) dst[j] = f * src[j];
  }
  const bool rg = tape.requires_grad(s.id) || tape.requires_grad(m.id);
  Var<T> y = tape.emit(std::move(out), rg);
  if (rg) {
    tape.set_backward(y, [tp = &tape, sid = s.id, mid = m.id, yid = y.id, rows, cols] {
      const Tensor<T>& gy = tp->grad_acc(yid);
      const Tensor<T>& sv2 = tp->value(Var<T>{tp, sid});
      const Tensor<T>& mv2 = tp->value(Var<T>{tp, mid});
      if (Tensor<T>* gm = tp->grad_sink(mid)) {
        for (std::int64_t r = 0; r < rows; ++r) {
          detail::axpy(sv2[r], gy.data() + r * cols, gm->data() + r * cols, cols);
        }
      }
      if (Tensor<T>* gs = tp->grad_sink(sid)) {
        for (std::int64_t r = 0; r < rows; ++r) {
          (*gs)[r] += detail::dot(gy.data() + r * cols, mv2.data() + r * cols, cols);
        }
      }
    });
  }
  return y;
}

// Broadcast-add a [1] tensor to every element.
template <typename T>
Var<T> add_scalar(Var<T> x, Var<T> s) {
  detail::require_same_tape(x, s);
  Tape<T>& tape = *x.tape;
  const Tensor<T>& xv = tape.value(x);
  const Tensor<T>& sv = tape.value(s);
  if (sv.numel() != 1) throw ShapeError("add_scalar expects a [1] addend, got " + shape_str(sv.shape()));
  Tensor<T> out = xv;
  const T c = sv[0];
  const std::int64_t n = out.numel();
  for (std::int64_t i = 0; i < n; ++i) out[i] += c;
  const bool rg = tape.requires_grad(x.id) || tape.requires_grad(s.id);
  Var<T> y = tape.emit(std::move(out), rg);
  if (rg) {
    tape.set_backward(y, [tp = &tape, xid = x.id, sid = s.id, yid = y.id] {
      const Tensor<T>& gy = tp->grad_acc(yid);
      const std::int64_t m = gy.numel();
      if (Tensor<T>* gx = tp->grad_sink(xid)) {
        for (std::int64_t i = 0; i < m; ++i) (*gx)[i] += gy[i];
      }
      if (Tensor<T>* gs = tp->grad_sink(sid)) {
        for (std::int64_t i = 0; i < m; ++i) (*gs)[0] += gy[i];
      }
    });
  }
  return y;
}

template <typename T>
Var<T> sum_all(Var<T> x) {
  Tape<T>& tape = *x.tape;
  const Tensor<T>& xv = tape.value(x);
  T acc = T(0);
  const std::int64_t n = xv.numel();
  for (std::int64_t i = 0; i < n; ++i) acc += xv[i];
  const bool rg = tape.requires_grad(x.id);
  Var<T> y = tape.emit(Tensor<T>::scalar(acc), rg);
  if (rg) {
    tape.set_backward(y, [tp = &tape, xid = x.id, yid = y.id] {
      const Tensor<T>& gy = tp->grad_acc(yid);
      if (Tensor<T>* gx = tp->grad_sink(xid)) {
        const std::int64_t m = gx->numel();
        for (std::int64_t i = 0; i < m; ++i) (*gx)[i] += gy[0];
      }
    });
  }
  return y;
}

template <typename T>
Var<T> mean_all(Var<T> x) {
  const std::int64_t n = x.value().numel();
  if (n == 0) throw ContractError("mean of empty tensor");
  return scale(sum_all(x), static_cast<T>(1.0 / static_cast<double>(n)));
}

}  // namespace rulforge::core
