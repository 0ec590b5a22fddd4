#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "rfn/diffcore/tape.hpp"

// Closed primitive set of the reverse-mode engine. Binary elementwise ops
// broadcast rank-2 operands whose extents are equal or 1.

namespace rfn::diff {

namespace detail {

inline std::size_t broadcast_extent(std::size_t a, std::size_t b, const char* op) {
  if (a == b) return a;
  if (a == 1) return b;
  if (b == 1) return a;
  throw UsageError(std::string(op) + ": incompatible extents " + std::to_string(a) +
                   " and " + std::to_string(b));
}

// slot (r x c) += sum of g over the dimensions that were broadcast.
inline void reduce_into(RealArray& slot, const RealArray& g, double factor = 1.0) {
  const std::size_t R = g.rows(), C = g.cols();
  const std::size_t r1 = slot.rows(), c1 = slot.cols();
  if (r1 == R && c1 == C) {
    for (std::size_t i = 0; i < g.size(); ++i) slot[i] += factor * g[i];
    return;
  }
  for (std::size_t r = 0; r < R; ++r) {
    const std::size_t rs = r1 == 1 ? 0 : r;
    for (std::size_t c = 0; c < C; ++c) {
      slot(rs, c1 == 1 ? 0 : c) += factor * g(r, c);
    }
  }
}

template <class F>
RealArray broadcast_apply(const RealArray& a, const RealArray& b, F f, const char* op) {
  const std::size_t R = broadcast_extent(a.rows(), b.rows(), op);
  const std::size_t C = broadcast_extent(a.cols(), b.cols(), op);
  RealArray out(R, C);
  if (a.same_shape(b)) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(a[i], b[i]);
    return out;
  }
  const bool ar = a.rows() == 1, ac = a.cols() == 1;
  const bool br = b.rows() == 1, bc = b.cols() == 1;
  for (std::size_t r = 0; r < R; ++r) {
    for (std::size_t c = 0; c < C; ++c) {
      out(r, c) = f(a(ar ? 0 : r, ac ? 0 : c), b(br ? 0 : r, bc ? 0 : c));
    }
  }
  return out;
}

// out = A * B for row-major arrays; optional transposes.
inline void gemm_accumulate(const RealArray& A, bool ta, const RealArray& B, bool tb,
                            RealArray& out) {
  const std::size_t M = ta ? A.cols() : A.rows();
  const std::size_t K = ta ? A.rows() : A.cols();
  const std::size_t N = tb ? B.rows() : B.cols();
  const double* a = A.values().data();
  const double* b = B.values().data();
  double* o = out.values().data();
  const std::size_t lda = A.cols(), ldb = B.cols();
  if (!ta && !tb) {
    for (std::size_t i = 0; i < M; ++i) {
      double* orow = o + i * N;
      for (std::size_t k = 0; k < K; ++k) {
        const double aik = a[i * lda + k];
        if (aik == 0.0) continue;
        const double* brow = b + k * ldb;
        for (std::size_t j = 0; j < N; ++j) orow[j] += aik * brow[j];
      }
    }
  } else if (!ta && tb) {
    for (std::size_t i = 0; i < M; ++i) {
      const double* arow = a + i * lda;
      for (std::size_t j = 0; j < N; ++j) {
        const double* brow = b + j * ldb;
        double s = 0.0;
        for (std::size_t k = 0; k < K; ++k) s += arow[k] * brow[k];
        o[i * N + j] += s;
      }
    }
  } else if (ta && !tb) {
    for (std::size_t k = 0; k < K; ++k) {
      const double* arow = a + k * lda;
      const double* brow = b + k * ldb;
      for (std::size_t i = 0; i < M; ++i) {
        const double aki = arow[i];
        if (aki == 0.0) continue;
        double* orow = o + i * N;
        for (std::size_t j = 0; j < N; ++j) orow[j] += aki * brow[j];
      }
    }
  } else {
    for (std::size_t i = 0; i < M; ++i)
      for (std::size_t j = 0; j < N; ++j) {
        double s = 0.0;
        for (std::size_t k = 0; k < K; ++k) s += a[k * lda + i] * b[j * ldb + k];
        o[i * N + j] += s;
      }
  }
}

inline double softplus_value(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline double sigmoid_value(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace detail

// ---- elementwise binary ---------------------------------------------------

inline Var add(Var a, Var b) {
  Tape& t = *a.tape;
  RealArray out = detail::broadcast_apply(
      a.value(), b.value(), [](double x, double y) { return x + y; }, "add");
  return t.record(std::move(out), {a, b}, [a, b](Tape& tp, const RealArray& g) {
    if (tp.requires_grad(a)) detail::reduce_into(tp.grad_slot(a.id), g);
    if (tp.requires_grad(b)) detail::reduce_into(tp.grad_slot(b.id), g);
  });
}

inline Var sub(Var a, Var b) {
  Tape& t = *a.tape;
  RealArray out = detail::broadcast_apply(
      a.value(), b.value(), [](double x, double y) { return x - y; }, "subtract");
  return t.record(std::move(out), {a, b}, [a, b](Tape& tp, const RealArray& g) {
    if (tp.requires_grad(a)) detail::reduce_into(tp.grad_slot(a.id), g);
    if (tp.requires_grad(b)) detail::reduce_into(tp.grad_slot(b.id), g, -1.0);
  });
}

inline Var mul(Var a, Var b) {
  Tape& t = *a.tape;
  RealArray out = detail::broadcast_apply(
      a.value(), b.value(), [](double x, double y) { return x * y; }, "multiply");
  return t.record(std::move(out), {a, b}, [a, b](Tape& tp, const RealArray& g) {
    const RealArray& av = tp.value(a);
    const RealArray& bv = tp.value(b);
    if (tp.requires_grad(a)) {
      RealArray ga = detail::broadcast_apply(g, bv, [](double x, double y) { return x * y; },
                                             "multiply");
      detail::reduce_into(tp.grad_slot(a.id), ga);
    }
    if (tp.requires_grad(b)) {
      RealArray gb = detail::broadcast_apply(g, av, [](double x, double y) { return x * y; },
                                             "multiply");
      detail::reduce_into(tp.grad_slot(b.id), gb);
    }
  });
}

inline Var div(Var a, Var b) {
  Tape& t = *a.tape;
  const RealArray& bv = b.value();
  for (std::size_t i = 0; i < bv.size(); ++i) {
    if (bv[i] == 0.0) {
      throw DomainError("divide: zero divisor at index " + std::to_string(i));
    }
  }
  RealArray out = detail::broadcast_apply(
      a.value(), bv, [](double x, double y) { return x / y; }, "divide");
  const std::size_t self = t.size();
  return t.record(std::move(out), {a, b}, [a, b, self](Tape& tp, const RealArray& g) {
    const RealArray& bv = tp.value(b);
    if (tp.requires_grad(a)) {
      RealArray ga = detail::broadcast_apply(g, bv, [](double x, double y) { return x / y; },
                                             "divide");
      detail::reduce_into(tp.grad_slot(a.id), ga);
    }
    if (tp.requires_grad(b)) {
      // d(a/b)/db = -(a/b)/b
      const RealArray& q = tp.value(self);
      RealArray qg = detail::broadcast_apply(g, q, [](double x, double y) { return x * y; },
                                             "divide");
      RealArray gb = detail::broadcast_apply(qg, bv, [](double x, double y) { return -x / y; },
                                             "divide");
      detail::reduce_into(tp.grad_slot(b.id), gb);
    }
  });
}

// ---- linear algebra -------------------------------------------------------

inline Var matmul(Var a, Var b) {
  Tape& t = *a.tape;
  const RealArray& av = a.value();
  const RealArray& bv = b.value();
  if (av.cols() != bv.rows()) {
    throw UsageError("matmul: inner extents " + std::to_string(av.cols()) + " and " +
                     std::to_string(bv.rows()) + " differ");
  }
  RealArray out(av.rows(), bv.cols());
  detail::gemm_accumulate(av, false, bv, false, out);
  return t.record(std::move(out), {a, b}, [a, b](Tape& tp, const RealArray& g) {
    if (tp.requires_grad(a)) detail::gemm_accumulate(g, false, tp.value(b), true, tp.grad_slot(a.id));
    if (tp.requires_grad(b)) detail::gemm_accumulate(tp.value(a), true, g, false, tp.grad_slot(b.id));
  });
}

// ---- elementwise unary ----------------------------------------------------

namespace detail {

// f computes the value, df computes the derivative from (input, output).
template <class F, class DF>
Var unary(Var x, F f, DF df) {
  Tape& t = *x.tape;
  const RealArray& xv = x.value();
  RealArray out(xv.rows(), xv.cols());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xv[i]);
  const std::size_t self = t.size();
  return t.record(std::move(out), {x}, [x, self, df](Tape& tp, const RealArray& g) {
    const RealArray& xv = tp.value(x);
    const RealArray& yv = tp.value(self);
    RealArray& slot = tp.grad_slot(x.id);
    for (std::size_t i = 0; i < g.size(); ++i) slot[i] += g[i] * df(xv[i], yv[i]);
  });
}

}  // namespace detail

inline Var exp(Var x) {
  return detail::unary(x, [](double v) { return std::exp(v); },
                       [](double, double y) { return y; });
}

inline Var log(Var x) {
  const RealArray& xv = x.value();
  for (std::size_t i = 0; i < xv.size(); ++i) {
    if (!(xv[i] > 0.0)) {
      throw DomainError("log: non-positive input " + std::to_string(xv[i]) + " at index " +
                        std::to_string(i));
    }
  }
  return detail::unary(x, [](double v) { return std::log(v); },
                       [](double v, double) { return 1.0 / v; });
}

inline Var tanh(Var x) {
  return detail::unary(x, [](double v) { return std::tanh(v); },
                       [](double, double y) { return 1.0 - y * y; });
}

inline Var sigmoid(Var x) {
  return detail::unary(x, detail::sigmoid_value,
                       [](double, double y) { return y * (1.0 - y); });
}

inline Var softplus(Var x) {
  return detail::unary(x, detail::softplus_value,
                       [](double v, double) { return detail::sigmoid_value(v); });
}

inline Var relu(Var x) {
  return detail::unary(x, [](double v) { return v > 0.0 ? v : 0.0; },
                       [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

// scale * x + shift with constant scale and shift.
inline Var affine(Var x, double scale, double shift = 0.0) {
  return detail::unary(x, [scale, shift](double v) { return scale * v + shift; },
                       [scale](double, double) { return scale; });
}

// ---- reductions -----------------------------------------------------------

inline Var sum(Var x) {
  Tape& t = *x.tape;
  RealArray out = RealArray::scalar(x.value().sum());
  return t.record(std::move(out), {x}, [x](Tape& tp, const RealArray& g) {
    RealArray& slot = tp.grad_slot(x.id);
    for (std::size_t i = 0; i < slot.size(); ++i) slot[i] += g[0];
  });
}

// Sum over rows: (R x C) -> (1 x C).
inline Var sum_rows(Var x) {
  Tape& t = *x.tape;
  const RealArray& xv = x.value();
  RealArray out(1, xv.cols());
  for (std::size_t r = 0; r < xv.rows(); ++r)
    for (std::size_t c = 0; c < xv.cols(); ++c) out[c] += xv(r, c);
  return t.record(std::move(out), {x}, [x](Tape& tp, const RealArray& g) {
    detail::reduce_into(tp.grad_slot(x.id),
                        detail::broadcast_apply(tp.value(x), g,
                                                [](double, double y) { return y; }, "sum"));
  });
}

// Sum over columns: (R x C) -> (R x 1).
inline Var sum_cols(Var x) {
  Tape& t = *x.tape;
  const RealArray& xv = x.value();
  RealArray out(xv.rows(), 1);
  for (std::size_t r = 0; r < xv.rows(); ++r)
    for (std::size_t c = 0; c < xv.cols(); ++c) out[r] += xv(r, c);
  return t.record(std::move(out), {x}, [x](Tape& tp, const RealArray& g) {
    RealArray& slot = tp.grad_slot(x.id);
    const std::size_t C = slot.cols();
    for (std::size_t r = 0; r < slot.rows(); ++r)
      for (std::size_t c = 0; c < C; ++c) slot(r, c) += g[r];
  });
}

// Row-wise log-sum-exp: (R x C) -> (R x 1).
inline Var logsumexp_cols(Var x) {
  Tape& t = *x.tape;
  const RealArray& xv = x.value();
  RealArray out(xv.rows(), 1);
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < xv.cols(); ++c) m = std::max(m, xv(r, c));
    double s = 0.0;
    for (std::size_t c = 0; c < xv.cols(); ++c) s += std::exp(xv(r, c) - m);
    out[r] = m + std::log(s);
  }
  const std::size_t self = t.size();
  return t.record(std::move(out), {x}, [x, self](Tape& tp, const RealArray& g) {
    const RealArray& xv = tp.value(x);
    const RealArray& lse = tp.value(self);
    RealArray& slot = tp.grad_slot(x.id);
    for (std::size_t r = 0; r < xv.rows(); ++r)
      for (std::size_t c = 0; c < xv.cols(); ++c)
        slot(r, c) += g[r] * std::exp(xv(r, c) - lse[r]);
  });
}

// ---- structural -----------------------------------------------------------

inline Var concat_cols(const std::vector<Var>& parts) {
  Tape& t = *parts.front().tape;
  const std::size_t R = parts.front().rows();
  std::size_t C = 0;
  for (const Var& p : parts) {
    if (p.rows() != R) throw UsageError("concatenate: row extents differ");
    C += p.cols();
  }
  RealArray out(R, C);
  std::size_t off = 0;
  for (const Var& p : parts) {
    const RealArray& v = p.value();
    for (std::size_t r = 0; r < R; ++r)
      for (std::size_t c = 0; c < v.cols(); ++c) out(r, off + c) = v(r, c);
    off += v.cols();
  }
  return t.record(std::move(out), parts, [parts](Tape& tp, const RealArray& g) {
    std::size_t off = 0;
    for (const Var& p : parts) {
      const std::size_t pc = tp.value(p).cols();
      if (tp.requires_grad(p)) {
        RealArray& slot = tp.grad_slot(p.id);
        for (std::size_t r = 0; r < slot.rows(); ++r)
          for (std::size_t c = 0; c < pc; ++c) slot(r, c) += g(r, off + c);
      }
      off += pc;
    }
  });
}

inline Var concat_rows(const std::vector<Var>& parts) {
  Tape& t = *parts.front().tape;
  const std::size_t C = parts.front().cols();
  std::size_t R = 0;
  for (const Var& p : parts) {
    if (p.cols() != C) throw UsageError("concatenate: column extents differ");
    R += p.rows();
  }
  RealArray out(R, C);
  std::size_t off = 0;
  for (const Var& p : parts) {
    const RealArray& v = p.value();
    std::copy(v.values().begin(), v.values().end(), out.values().begin() + off * C);
    off += v.rows();
  }
  return t.record(std::move(out), parts, [parts](Tape& tp, const RealArray& g) {
    std::size_t off = 0;
    const std::size_t C = g.cols();
    for (const Var& p : parts) {
      const std::size_t pr = tp.value(p).rows();
      if (tp.requires_grad(p)) {
        RealArray& slot = tp.grad_slot(p.id);
        for (std::size_t i = 0; i < pr * C; ++i) slot[i] += g[off * C + i];
      }
      off += pr;
    }
  });
}

// Columns [begin, end).
inline Var slice_cols(Var x, std::size_t begin, std::size_t end) {
  Tape& t = *x.tape;
  const RealArray& xv = x.value();
  if (begin > end || end > xv.cols()) throw UsageError("slice: column range out of bounds");
  RealArray out(xv.rows(), end - begin);
  for (std::size_t r = 0; r < xv.rows(); ++r)
    for (std::size_t c = begin; c < end; ++c) out(r, c - begin) = xv(r, c);
  return t.record(std::move(out), {x}, [x, begin, end](Tape& tp, const RealArray& g) {
    RealArray& slot = tp.grad_slot(x.id);
    for (std::size_t r = 0; r < slot.rows(); ++r)
      for (std::size_t c = begin; c < end; ++c) slot(r, c) += g(r, c - begin);
  });
}

// Rows [begin, end).
inline Var slice_rows(Var x, std::size_t begin, std::size_t end) {
  Tape& t = *x.tape;
  const RealArray& xv = x.value();
  if (begin > end || end > xv.rows()) throw UsageError("slice: row range out of bounds");
  const std::size_t C = xv.cols();
  RealArray out(end - begin, C);
  std::copy(xv.values().begin() + begin * C, xv.values().begin() + end * C,
            out.values().begin());
  return t.record(std::move(out), {x}, [x, begin, end](Tape& tp, const RealArray& g) {
    RealArray& slot = tp.grad_slot(x.id);
    const std::size_t C = slot.cols();
    for (std::size_t i = 0; i < (end - begin) * C; ++i) slot[begin * C + i] += g[i];
  });
}

// out row r = x row index[r]; lets per-group rows condition many points.
inline Var gather_rows(Var x, std::vector<std::size_t> index) {
  Tape& t = *x.tape;
  const RealArray& xv = x.value();
  const std::size_t C = xv.cols();
  RealArray out(index.size(), C);
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] >= xv.rows()) throw UsageError("gather_rows: index out of bounds");
    std::copy_n(xv.values().begin() + index[r] * C, C, out.values().begin() + r * C);
  }
  return t.record(std::move(out), {x}, [x, index = std::move(index)](Tape& tp, const RealArray& g) {
    RealArray& slot = tp.grad_slot(x.id);
    const std::size_t C = slot.cols();
    for (std::size_t r = 0; r < index.size(); ++r)
      for (std::size_t c = 0; c < C; ++c) slot(index[r], c) += g(r, c);
  });
}

// out row s = sum of x rows r with index[r] == s; the transpose of gather_rows.
inline Var segment_sum_rows(Var x, std::vector<std::size_t> index, std::size_t segments) {
  Tape& t = *x.tape;
  const RealArray& xv = x.value();
  if (index.size() != xv.rows()) throw UsageError("segment_sum_rows: index size mismatch");
  const std::size_t C = xv.cols();
  RealArray out(segments, C);
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] >= segments) throw UsageError("segment_sum_rows: index out of bounds");
    for (std::size_t c = 0; c < C; ++c) out(index[r], c) += xv(r, c);
  }
  return t.record(std::move(out), {x}, [x, index = std::move(index)](Tape& tp, const RealArray& g) {
    RealArray& slot = tp.grad_slot(x.id);
    const std::size_t C = slot.cols();
    for (std::size_t r = 0; r < index.size(); ++r)
      for (std::size_t c = 0; c < C; ++c) slot(r, c) += g(index[r], c);
  });
}

// ---- operator sugar -------------------------------------------------------

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return div(a, b); }
inline Var operator+(Var a, double s) { return affine(a, 1.0, s); }
inline Var operator-(Var a, double s) { return affine(a, 1.0, -s); }
inline Var operator*(Var a, double s) { return affine(a, s, 0.0); }
inline Var operator*(double s, Var a) { return affine(a, s, 0.0); }
inline Var operator-(Var a) { return affine(a, -1.0, 0.0); }

inline Var mean_rows(Var x) { return affine(sum_rows(x), 1.0 / static_cast<double>(x.rows())); }

}  // namespace rfn::diff
