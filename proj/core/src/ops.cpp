#include "anacto/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace anacto {

namespace {

Tape& tape_of(Var a, const char* op) {
  if (!a.valid()) throw std::invalid_argument(std::string(op) + ": null Var");
  return *a.tape();
}

void require_same_tape(Var a, Var b, const char* op) {
  if (a.tape() != b.tape()) throw std::invalid_argument(std::string(op) + ": Vars from different tapes");
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) +
                                " vs " + shape_to_string(b.shape()));
  }
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw std::invalid_argument(std::string(op) + ": expected rank " + std::to_string(rank) +
                                ", got shape " + shape_to_string(t.shape()));
  }
}

void axpy(Tensor& dst, const Tensor& src, double a = 1.0) {
  auto d = dst.data();
  auto s = src.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += a * s[i];
}

}  // namespace

Var add(Var a, Var b) {
  Tape& t = tape_of(a, "add");
  require_same_tape(a, b, "add");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_same_shape(av, bv, "add");
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return t.record("add", std::move(out), {a.node(), b.node()}, [](BackwardCtx& ctx) {
    if (ctx.needs_grad(0)) axpy(ctx.in_grad(0), ctx.out_grad());
    if (ctx.needs_grad(1)) axpy(ctx.in_grad(1), ctx.out_grad());
  });
}

Var sub(Var a, Var b) {
  Tape& t = tape_of(a, "sub");
  require_same_tape(a, b, "sub");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_same_shape(av, bv, "sub");
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return t.record("sub", std::move(out), {a.node(), b.node()}, [](BackwardCtx& ctx) {
    if (ctx.needs_grad(0)) axpy(ctx.in_grad(0), ctx.out_grad());
    if (ctx.needs_grad(1)) axpy(ctx.in_grad(1), ctx.out_grad(), -1.0);
  });
}

Var mul(Var a, Var b) {
  Tape& t = tape_of(a, "mul");
  require_same_tape(a, b, "mul");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_same_shape(av, bv, "mul");
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return t.record("mul", std::move(out), {a.node(), b.node()}, [](BackwardCtx& ctx) {
    const Tensor& g = ctx.out_grad();
    if (ctx.needs_grad(0)) {
      Tensor& da = ctx.in_grad(0);
      const Tensor& bv2 = ctx.in_value(1);
      for (std::size_t i = 0; i < da.size(); ++i) da[i] += g[i] * bv2[i];
    }
    if (ctx.needs_grad(1)) {
      Tensor& db = ctx.in_grad(1);
      const Tensor& av2 = ctx.in_value(0);
      for (std::size_t i = 0; i < db.size(); ++i) db[i] += g[i] * av2[i];
    }
  });
}

Var scale(Var a, double c) {
  Tape& t = tape_of(a, "scale");
  const Tensor& av = a.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * c;
  return t.record("scale", std::move(out), {a.node()}, [c](BackwardCtx& ctx) {
    if (ctx.needs_grad(0)) axpy(ctx.in_grad(0), ctx.out_grad(), c);
  });
}

Var add_rowvec(Var m, Var v) {
  Tape& t = tape_of(m, "add_rowvec");
  require_same_tape(m, v, "add_rowvec");
  const Tensor& mv = m.value();
  const Tensor& vv = v.value();
  require_rank(mv, 2, "add_rowvec");
  require_rank(vv, 1, "add_rowvec");
  const std::size_t rows = mv.extent(0), cols = mv.extent(1);
  if (vv.extent(0) != cols) {
    throw std::invalid_argument("add_rowvec: vector length " + std::to_string(vv.extent(0)) +
                                " does not match columns " + std::to_string(cols));
  }
  Tensor out(mv.shape());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = mv[r * cols + c] + vv[c];
  return t.record("add_rowvec", std::move(out), {m.node(), v.node()}, [rows, cols](BackwardCtx& ctx) {
    const Tensor& g = ctx.out_grad();
    if (ctx.needs_grad(0)) axpy(ctx.in_grad(0), g);
    if (ctx.needs_grad(1)) {
      Tensor& dv = ctx.in_grad(1);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) dv[c] += g[r * cols + c];
    }
  });
}

Var matmul(Var a, Var b) {
  Tape& t = tape_of(a, "matmul");
  require_same_tape(a, b, "matmul");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_rank(av, 2, "matmul");
  require_rank(bv, 2, "matmul");
  const std::size_t m = av.extent(0), k = av.extent(1), n = bv.extent(1);
  if (bv.extent(0) != k) {
    throw std::invalid_argument("matmul: inner dims differ, " + shape_to_string(av.shape()) + " x " +
                                shape_to_string(bv.shape()));
  }
  Tensor out(Shape{m, n});
  {
    const double* ap = av.data().data();
    const double* bp = bv.data().data();
    double* cp = out.data().data();
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t kk = 0; kk < k; ++kk) {
        const double aik = ap[i * k + kk];
        if (aik == 0.0) continue;
        const double* brow = bp + kk * n;
        double* crow = cp + i * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += aik * brow[j];
      }
    }
  }
  return t.record("matmul", std::move(out), {a.node(), b.node()}, [m, k, n](BackwardCtx& ctx) {
    const double* gp = ctx.out_grad().data().data();
    if (ctx.needs_grad(0)) {
      // dA = dC * B^T
      Tensor& da = ctx.in_grad(0);
      const double* bp = ctx.in_value(1).data().data();
      double* dap = da.data().data();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t kk = 0; kk < k; ++kk) {
          const double* grow = gp + i * n;
          const double* brow = bp + kk * n;
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
          dap[i * k + kk] += acc;
        }
      }
    }
    if (ctx.needs_grad(1)) {
      // dB = A^T * dC
      Tensor& db = ctx.in_grad(1);
      const double* ap = ctx.in_value(0).data().data();
      double* dbp = db.data().data();
      for (std::size_t i = 0; i < m; ++i) {
        const double* grow = gp + i * n;
        for (std::size_t kk = 0; kk < k; ++kk) {
          const double aik = ap[i * k + kk];
          if (aik == 0.0) continue;
          double* dbrow = dbp + kk * n;
          for (std::size_t j = 0; j < n; ++j) dbrow[j] += aik * grow[j];
        }
      }
    }
  });
}

Var transpose(Var a) {
  Tape& t = tape_of(a, "transpose");
  const Tensor& av = a.value();
  require_rank(av, 2, "transpose");
  const std::size_t r = av.extent(0), c = av.extent(1);
  Tensor out(Shape{c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = av[i * c + j];
  return t.record("transpose", std::move(out), {a.node()}, [r, c](BackwardCtx& ctx) {
    if (!ctx.needs_grad(0)) return;
    Tensor& da = ctx.in_grad(0);
    const Tensor& g = ctx.out_grad();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) da[i * c + j] += g[j * r + i];
  });
}

Var sum(Var a) {
  Tape& t = tape_of(a, "sum");
  const Tensor& av = a.value();
  double acc = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) acc += av[i];
  return t.record("sum", Tensor::scalar(acc), {a.node()}, [](BackwardCtx& ctx) {
    if (!ctx.needs_grad(0)) return;
    Tensor& da = ctx.in_grad(0);
    const double g = ctx.out_grad()[0];
    for (std::size_t i = 0; i < da.size(); ++i) da[i] += g;
  });
}

Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

Var softmax(Var x, std::size_t axis) {
  Tape& t = tape_of(x, "softmax");
  const Tensor& xv = x.value();
  if (axis >= std::max<std::size_t>(xv.rank(), 1)) {
    throw std::invalid_argument("softmax: axis " + std::to_string(axis) + " out of range for shape " +
                                shape_to_string(xv.shape()));
  }
  const Shape& s = xv.shape();
  std::size_t outer = 1, inner = 1;
  const std::size_t m = s.empty() ? 1 : s[axis];
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];

  Tensor out(xv.shape().empty() ? Shape{} : xv.shape());
  if (xv.rank() == 0) {
    out = Tensor::scalar(1.0);
  } else {
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * m * inner + in;
        double mx = xv[base];
        for (std::size_t j = 1; j < m; ++j) mx = std::max(mx, xv[base + j * inner]);
        double denom = 0.0;
        for (std::size_t j = 0; j < m; ++j) {
          const double e = std::exp(xv[base + j * inner] - mx);
          out[base + j * inner] = e;
          denom += e;
        }
        for (std::size_t j = 0; j < m; ++j) out[base + j * inner] /= denom;
      }
    }
  }
  return t.record("softmax", std::move(out), {x.node()}, [outer, inner, m](BackwardCtx& ctx) {
    if (!ctx.needs_grad(0)) return;
    Tensor& dx = ctx.in_grad(0);
    const Tensor& y = ctx.out_value();
    const Tensor& g = ctx.out_grad();
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * m * inner + in;
        double dot = 0.0;
        for (std::size_t j = 0; j < m; ++j) dot += g[base + j * inner] * y[base + j * inner];
        for (std::size_t j = 0; j < m; ++j) {
          const std::size_t idx = base + j * inner;
          dx[idx] += y[idx] * (g[idx] - dot);
        }
      }
    }
  });
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  Tape& t = tape_of(x, "layer_norm");
  require_same_tape(x, gamma, "layer_norm");
  require_same_tape(x, beta, "layer_norm");
  if (eps <= 0.0) throw std::invalid_argument("layer_norm: eps must be positive");
  const Tensor& xv = x.value();
  if (xv.rank() == 0) throw std::invalid_argument("layer_norm: scalar input");
  const std::size_t c = xv.shape().back();
  const std::size_t rows = xv.size() / c;
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();
  require_rank(gv, 1, "layer_norm(gamma)");
  require_rank(bv, 1, "layer_norm(beta)");
  if (gv.extent(0) != c || bv.extent(0) != c) {
    throw std::invalid_argument("layer_norm: gamma/beta length must match last axis extent " +
                                std::to_string(c));
  }

  Tensor out(xv.shape());
  Tensor xhat(xv.shape());
  Tensor inv_std(Shape{rows});
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t base = r * c;
    double mu = 0.0;
    for (std::size_t j = 0; j < c; ++j) mu += xv[base + j];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double d = xv[base + j] - mu;
      var += d * d;
    }
    var /= static_cast<double>(c);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t j = 0; j < c; ++j) {
      const double xh = (xv[base + j] - mu) * is;
      xhat[base + j] = xh;
      out[base + j] = gv[j] * xh + bv[j];
    }
  }
  return t.record("layer_norm", std::move(out), {x.node(), gamma.node(), beta.node()},
                  [rows, c, xhat = std::move(xhat), inv_std = std::move(inv_std)](BackwardCtx& ctx) {
                    const Tensor& g = ctx.out_grad();
                    const Tensor& gv2 = ctx.in_value(1);
                    if (ctx.needs_grad(1)) {
                      Tensor& dg = ctx.in_grad(1);
                      for (std::size_t r = 0; r < rows; ++r)
                        for (std::size_t j = 0; j < c; ++j) dg[j] += g[r * c + j] * xhat[r * c + j];
                    }
                    if (ctx.needs_grad(2)) {
                      Tensor& db = ctx.in_grad(2);
                      for (std::size_t r = 0; r < rows; ++r)
                        for (std::size_t j = 0; j < c; ++j) db[j] += g[r * c + j];
                    }
                    if (ctx.needs_grad(0)) {
                      Tensor& dx = ctx.in_grad(0);
                      const double cn = static_cast<double>(c);
                      for (std::size_t r = 0; r < rows; ++r) {
                        const std::size_t base = r * c;
                        double mean_gy = 0.0, mean_gyx = 0.0;
                        for (std::size_t j = 0; j < c; ++j) {
                          const double gy = g[base + j] * gv2[j];
                          mean_gy += gy;
                          mean_gyx += gy * xhat[base + j];
                        }
                        mean_gy /= cn;
                        mean_gyx /= cn;
                        for (std::size_t j = 0; j < c; ++j) {
                          const double gy = g[base + j] * gv2[j];
                          dx[base + j] += inv_std[r] * (gy - mean_gy - xhat[base + j] * mean_gyx);
                        }
                      }
                    }
                  });
}

namespace {

constexpr double kGeluCubic = 0.044715;
const double kGeluScale = std::sqrt(2.0 / std::numbers::pi);

}  // namespace

Var gelu(Var x) {
  Tape& t = tape_of(x, "gelu");
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = xv[i];
    const double u = kGeluScale * (v + kGeluCubic * v * v * v);
    out[i] = 0.5 * v * (1.0 + std::tanh(u));
  }
  return t.record("gelu", std::move(out), {x.node()}, [](BackwardCtx& ctx) {
    if (!ctx.needs_grad(0)) return;
    Tensor& dx = ctx.in_grad(0);
    const Tensor& xv2 = ctx.in_value(0);
    const Tensor& g = ctx.out_grad();
    for (std::size_t i = 0; i < dx.size(); ++i) {
      const double v = xv2[i];
      const double u = kGeluScale * (v + kGeluCubic * v * v * v);
      const double th = std::tanh(u);
      const double du = kGeluScale * (1.0 + 3.0 * kGeluCubic * v * v);
      dx[i] += g[i] * (0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * du);
    }
  });
}

Var sigmoid(Var x) {
  Tape& t = tape_of(x, "sigmoid");
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = xv[i];
    out[i] = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  }
  return t.record("sigmoid", std::move(out), {x.node()}, [](BackwardCtx& ctx) {
    if (!ctx.needs_grad(0)) return;
    Tensor& dx = ctx.in_grad(0);
    const Tensor& y = ctx.out_value();
    const Tensor& g = ctx.out_grad();
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g[i] * y[i] * (1.0 - y[i]);
  });
}

Var tanh_op(Var x) {
  Tape& t = tape_of(x, "tanh");
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(xv[i]);
  return t.record("tanh", std::move(out), {x.node()}, [](BackwardCtx& ctx) {
    if (!ctx.needs_grad(0)) return;
    Tensor& dx = ctx.in_grad(0);
    const Tensor& y = ctx.out_value();
    const Tensor& g = ctx.out_grad();
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g[i] * (1.0 - y[i] * y[i]);
  });
}

Var slice_cols(Var m, std::size_t c0, std::size_t c1) {
  Tape& t = tape_of(m, "slice_cols");
  const Tensor& mv = m.value();
  require_rank(mv, 2, "slice_cols");
  const std::size_t rows = mv.extent(0), cols = mv.extent(1);
  if (c0 >= c1 || c1 > cols) throw std::invalid_argument("slice_cols: bad column range");
  const std::size_t w = c1 - c0;
  Tensor out(Shape{rows, w});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < w; ++j) out[r * w + j] = mv[r * cols + c0 + j];
  return t.record("slice_cols", std::move(out), {m.node()}, [rows, cols, c0, w](BackwardCtx& ctx) {
    if (!ctx.needs_grad(0)) return;
    Tensor& dm = ctx.in_grad(0);
    const Tensor& g = ctx.out_grad();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < w; ++j) dm[r * cols + c0 + j] += g[r * w + j];
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no parts");
  Tape& t = tape_of(parts[0], "concat_cols");
  const std::size_t rows = parts[0].value().extent(0);
  std::size_t total = 0;
  std::vector<std::size_t> widths, node_ids;
  for (const Var& p : parts) {
    require_same_tape(parts[0], p, "concat_cols");
    require_rank(p.value(), 2, "concat_cols");
    if (p.value().extent(0) != rows) throw std::invalid_argument("concat_cols: row count mismatch");
    widths.push_back(p.value().extent(1));
    node_ids.push_back(p.node());
    total += p.value().extent(1);
  }
  Tensor out(Shape{rows, total});
  std::size_t off = 0;
  for (std::size_t pi = 0; pi < parts.size(); ++pi) {
    const Tensor& pv = parts[pi].value();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < widths[pi]; ++j) out[r * total + off + j] = pv[r * widths[pi] + j];
    off += widths[pi];
  }
  return t.record("concat_cols", std::move(out), std::move(node_ids),
                  [rows, total, widths = std::move(widths)](BackwardCtx& ctx) {
                    const Tensor& g = ctx.out_grad();
                    std::size_t off2 = 0;
                    for (std::size_t pi = 0; pi < widths.size(); ++pi) {
                      if (ctx.needs_grad(pi)) {
                        Tensor& dp = ctx.in_grad(pi);
                        for (std::size_t r = 0; r < rows; ++r)
                          for (std::size_t j = 0; j < widths[pi]; ++j)
                            dp[r * widths[pi] + j] += g[r * total + off2 + j];
                      }
                      off2 += widths[pi];
                    }
                  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no parts");
  Tape& t = tape_of(parts[0], "concat_rows");
  const std::size_t cols = parts[0].value().extent(1);
  std::size_t total = 0;
  std::vector<std::size_t> heights, node_ids;
  for (const Var& p : parts) {
    require_same_tape(parts[0], p, "concat_rows");
    require_rank(p.value(), 2, "concat_rows");
    if (p.value().extent(1) != cols) throw std::invalid_argument("concat_rows: column count mismatch");
    heights.push_back(p.value().extent(0));
    node_ids.push_back(p.node());
    total += p.value().extent(0);
  }
  Tensor out(Shape{total, cols});
  std::size_t off = 0;
  for (std::size_t pi = 0; pi < parts.size(); ++pi) {
    const Tensor& pv = parts[pi].value();
    std::copy(pv.data().begin(), pv.data().end(), out.data().begin() + off * cols);
    off += heights[pi];
  }
  return t.record("concat_rows", std::move(out), std::move(node_ids),
                  [cols, heights = std::move(heights)](BackwardCtx& ctx) {
                    const Tensor& g = ctx.out_grad();
                    std::size_t off2 = 0;
                    for (std::size_t pi = 0; pi < heights.size(); ++pi) {
                      if (ctx.needs_grad(pi)) {
                        Tensor& dp = ctx.in_grad(pi);
                        for (std::size_t i = 0; i < heights[pi] * cols; ++i) dp[i] += g[off2 * cols + i];
                      }
                      off2 += heights[pi];
                    }
                  });
}

Var select_row(Var m, std::size_t row) {
  Tape& t = tape_of(m, "select_row");
  const Tensor& mv = m.value();
  require_rank(mv, 2, "select_row");
  const std::size_t rows = mv.extent(0), cols = mv.extent(1);
  if (row >= rows) throw std::invalid_argument("select_row: row out of range");
  Tensor out(Shape{cols});
  for (std::size_t j = 0; j < cols; ++j) out[j] = mv[row * cols + j];
  return t.record("select_row", std::move(out), {m.node()}, [row, cols](BackwardCtx& ctx) {
    if (!ctx.needs_grad(0)) return;
    Tensor& dm = ctx.in_grad(0);
    const Tensor& g = ctx.out_grad();
    for (std::size_t j = 0; j < cols; ++j) dm[row * cols + j] += g[j];
  });
}

Var stack_rows(std::span<const Var> rows) {
  if (rows.empty()) throw std::invalid_argument("stack_rows: no rows");
  Tape& t = tape_of(rows[0], "stack_rows");
  const std::size_t cols = rows[0].value().extent(0);
  std::vector<std::size_t> node_ids;
  for (const Var& r : rows) {
    require_same_tape(rows[0], r, "stack_rows");
    require_rank(r.value(), 1, "stack_rows");
    if (r.value().extent(0) != cols) throw std::invalid_argument("stack_rows: length mismatch");
    node_ids.push_back(r.node());
  }
  Tensor out(Shape{rows.size(), cols});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const Tensor& rv = rows[i].value();
    std::copy(rv.data().begin(), rv.data().end(), out.data().begin() + i * cols);
  }
  const std::size_t n = rows.size();
  return t.record("stack_rows", std::move(out), std::move(node_ids), [n, cols](BackwardCtx& ctx) {
    const Tensor& g = ctx.out_grad();
    for (std::size_t i = 0; i < n; ++i) {
      if (!ctx.needs_grad(i)) continue;
      Tensor& dr = ctx.in_grad(i);
      for (std::size_t j = 0; j < cols; ++j) dr[j] += g[i * cols + j];
    }
  });
}

Var concat_vec(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_vec: no parts");
  Tape& t = tape_of(parts[0], "concat_vec");
  std::size_t total = 0;
  std::vector<std::size_t> lens, node_ids;
  for (const Var& p : parts) {
    require_same_tape(parts[0], p, "concat_vec");
    require_rank(p.value(), 1, "concat_vec");
    lens.push_back(p.value().extent(0));
    node_ids.push_back(p.node());
    total += p.value().extent(0);
  }
  Tensor out(Shape{total});
  std::size_t off = 0;
  for (std::size_t pi = 0; pi < parts.size(); ++pi) {
    const Tensor& pv = parts[pi].value();
    std::copy(pv.data().begin(), pv.data().end(), out.data().begin() + off);
    off += lens[pi];
  }
  return t.record("concat_vec", std::move(out), std::move(node_ids),
                  [lens = std::move(lens)](BackwardCtx& ctx) {
                    const Tensor& g = ctx.out_grad();
                    std::size_t off2 = 0;
                    for (std::size_t pi = 0; pi < lens.size(); ++pi) {
                      if (ctx.needs_grad(pi)) {
                        Tensor& dp = ctx.in_grad(pi);
                        for (std::size_t j = 0; j < lens[pi]; ++j) dp[j] += g[off2 + j];
                      }
                      off2 += lens[pi];
                    }
                  });
}

Var reshape(Var a, Shape shape) {
  Tape& t = tape_of(a, "reshape");
  const Tensor& av = a.value();
  Tensor out(std::move(shape), std::vector<double>(av.data().begin(), av.data().end()));
  return t.record("reshape", std::move(out), {a.node()}, [](BackwardCtx& ctx) {
    if (!ctx.needs_grad(0)) return;
    Tensor& da = ctx.in_grad(0);
    const Tensor& g = ctx.out_grad();
    for (std::size_t i = 0; i < da.size(); ++i) da[i] += g[i];
  });
}

Var detach(Var a) {
  Tape& t = tape_of(a, "detach");
  return t.constant(a.value());
}

Var linear(Var x, Var w, Var b) {
  const bool is_vec = x.value().rank() == 1;
  Var x2 = is_vec ? reshape(x, Shape{1, x.value().extent(0)}) : x;
  Var out = add_rowvec(matmul(x2, w), b);
  if (is_vec) out = reshape(out, Shape{out.value().extent(1)});
  return out;
}

Var squared_distance(Var a, Var b) {
  Var d = sub(a, b);
  return sum(mul(d, d));
}

AttnMask AttnMask::causal(std::size_t n) {
  AttnMask m;
  m.rows = m.cols = n;
  m.allow.assign(n * n, 0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j <= i; ++j) m.allow[i * n + j] = 1;
  return m;
}

AttnMask AttnMask::full(std::size_t rows, std::size_t cols) {
  AttnMask m;
  m.rows = rows;
  m.cols = cols;
  m.allow.assign(rows * cols, 1);
  return m;
}

Var masked_multi_head_attention(Var q, Var k, Var v, const AttnMask& mask, std::size_t heads,
                                const MhaParams& p, std::vector<Tensor>* attn_capture) {
  const Tensor& qv = q.value();
  const Tensor& kv = k.value();
  const Tensor& vv = v.value();
  require_rank(qv, 2, "masked_multi_head_attention");
  require_rank(kv, 2, "masked_multi_head_attention");
  require_rank(vv, 2, "masked_multi_head_attention");
  const std::size_t sq = qv.extent(0), sk = kv.extent(0), d = qv.extent(1);
  if (kv.extent(1) != d || vv.extent(1) != d || vv.extent(0) != sk) {
    throw std::invalid_argument("masked_multi_head_attention: q/k/v shape mismatch");
  }
  if (heads == 0 || d % heads != 0) {
    throw std::invalid_argument("masked_multi_head_attention: model dim " + std::to_string(d) +
                                " not divisible by heads " + std::to_string(heads));
  }
  if (mask.rows != sq || mask.cols != sk) {
    throw std::invalid_argument("masked_multi_head_attention: mask size mismatch");
  }
  for (std::size_t i = 0; i < sq; ++i) {
    bool any = false;
    for (std::size_t j = 0; j < sk && !any; ++j) any = mask.allowed(i, j);
    if (!any) {
      throw std::invalid_argument("masked_multi_head_attention: query " + std::to_string(i) +
                                  " is fully masked");
    }
  }

  Tape& t = tape_of(q, "masked_multi_head_attention");
  Tensor mask_fill(Shape{sq, sk});
  for (std::size_t i = 0; i < sq * sk; ++i) mask_fill[i] = mask.allow[i] ? 0.0 : kMaskFill;
  const Var mask_add = t.constant(std::move(mask_fill));

  const Var qp = add_rowvec(matmul(q, p.wq), p.bq);
  const Var kp = matmul(k, p.wk);
  const Var vp = add_rowvec(matmul(v, p.wv), p.bv);

  const std::size_t hd = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));

  Tensor avg_attn;
  if (attn_capture) avg_attn = Tensor(Shape{sq, sk});

  std::vector<Var> head_outs;
  head_outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const Var qh = slice_cols(qp, h * hd, (h + 1) * hd);
    const Var kh = slice_cols(kp, h * hd, (h + 1) * hd);
    const Var vh = slice_cols(vp, h * hd, (h + 1) * hd);
    const Var logits = add(scale(matmul(qh, transpose(kh)), inv_sqrt), mask_add);
    const Var attn = softmax(logits, 1);
    if (attn_capture) {
      const Tensor& a = attn.value();
      for (std::size_t i = 0; i < sq * sk; ++i) avg_attn[i] += a[i] / static_cast<double>(heads);
    }
    head_outs.push_back(matmul(attn, vh));
  }
  if (attn_capture) attn_capture->push_back(std::move(avg_attn));

  const Var merged = concat_cols(head_outs);
  return add_rowvec(matmul(merged, p.wo), p.bo);
}

}  // namespace anacto
