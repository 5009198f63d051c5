#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "pmoe/core/error.hpp"
#include "pmoe/diff/tape.hpp"
#include "pmoe/diff/tensor.hpp"

namespace pmoe {

namespace detail {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

inline ConstMap as_matrix(const Tensor& t) {
  return ConstMap(t.data().data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}
inline MutMap as_matrix(Tensor& t) {
  return MutMap(t.data().data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

inline void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw ConfigError(std::string(op) + " expects a matrix, got shape " + shape_string(t.shape()));
  }
}

// How the right operand of a binary op maps onto the left's elements.
enum class Broadcast { same, scalar, column };

inline Broadcast broadcast_kind(const Tensor& big, const Tensor& small, const char* op) {
  if (big.shape() == small.shape()) return Broadcast::same;
  if (small.size() == 1) return Broadcast::scalar;
  if (big.rank() == 2 && small.rank() == 2 && small.cols() == 1 && small.rows() == big.rows()) {
    return Broadcast::column;
  }
  throw ConfigError(std::string(op) + ": incompatible shapes " + shape_string(big.shape()) + " and " +
                    shape_string(small.shape()));
}

inline std::size_t broadcast_index(Broadcast kind, std::size_t i, std::size_t cols) {
  switch (kind) {
    case Broadcast::same: return i;
    case Broadcast::scalar: return 0;
    case Broadcast::column: return i / cols;
  }
  return i;
}

template <typename Forward, typename DLeft, typename DRight>
Var binary(Var a, Var b, const char* op, Forward f, DLeft dl, DRight dr) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  // The larger operand fixes the output shape; the other broadcasts.
  const bool swap = av.size() < bv.size();
  const Tensor& big = swap ? bv : av;
  const Tensor& small = swap ? av : bv;
  const Broadcast kind = broadcast_kind(big, small, op);
  const std::size_t cols = big.cols();
  Tensor out(big.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const std::size_t j = broadcast_index(kind, i, cols);
    out[i] = swap ? f(small[j], big[i]) : f(big[i], small[j]);
  }
  return a.tape().record(
      std::move(out), {a.id(), b.id()},
      [swap, kind, cols, dl, dr](BackwardContext& ctx) {
        const Tensor& g = ctx.grad();
        const Tensor& x = ctx.input(0);
        const Tensor& y = ctx.input(1);
        Tensor* gx = ctx.input_grad(0);
        Tensor* gy = ctx.input_grad(1);
        for (std::size_t i = 0; i < g.size(); ++i) {
          const std::size_t j = broadcast_index(kind, i, cols);
          const std::size_t xi = swap ? j : i;
          const std::size_t yi = swap ? i : j;
          if (gx) (*gx)[xi] += g[i] * dl(x[xi], y[yi]);
          if (gy) (*gy)[yi] += g[i] * dr(x[xi], y[yi]);
        }
      },
      op);
}

template <typename Forward, typename Derivative>
Var unary(Var a, const char* op, Forward f, Derivative df) {
  const Tensor& av = a.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(av[i]);
  return a.tape().record(
      std::move(out), {a.id()},
      [df](BackwardContext& ctx) {
        Tensor* gx = ctx.input_grad(0);
        if (!gx) return;
        const Tensor& g = ctx.grad();
        const Tensor& x = ctx.input(0);
        const Tensor& y = ctx.output();
        for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * df(x[i], y[i]);
      },
      op);
}

inline double softplus_value(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }
inline double sigmoid_value(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace detail

// ---- elementwise arithmetic -------------------------------------------------

inline Var add(Var a, Var b) {
  return detail::binary(a, b, "add", [](double x, double y) { return x + y; },
                        [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}
inline Var sub(Var a, Var b) {
  return detail::binary(a, b, "sub", [](double x, double y) { return x - y; },
                        [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}
inline Var mul(Var a, Var b) {
  return detail::binary(a, b, "mul", [](double x, double y) { return x * y; },
                        [](double, double y) { return y; }, [](double x, double) { return x; });
}
// Elementwise min; ties route the gradient to the left operand.
inline Var minimum(Var a, Var b) {
  return detail::binary(a, b, "minimum", [](double x, double y) { return std::min(x, y); },
                        [](double x, double y) { return x <= y ? 1.0 : 0.0; },
                        [](double x, double y) { return x <= y ? 0.0 : 1.0; });
}

inline Var scale(Var a, double c) {
  return detail::unary(a, "scale", [c](double x) { return c * x; }, [c](double, double) { return c; });
}
inline Var add_scalar(Var a, double c) {
  return detail::unary(a, "add_scalar", [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}
inline Var neg(Var a) { return scale(a, -1.0); }

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator-(Var a) { return neg(a); }
inline Var operator*(Var a, double c) { return scale(a, c); }
inline Var operator*(double c, Var a) { return scale(a, c); }
inline Var operator+(Var a, double c) { return add_scalar(a, c); }
inline Var operator-(Var a, double c) { return add_scalar(a, -c); }

// ---- elementwise functions -------------------------------------------------

inline Var relu(Var a) {
  return detail::unary(a, "relu", [](double x) { return x > 0 ? x : 0.0; },
                       [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}
inline Var tanh(Var a) {
  return detail::unary(a, "tanh", [](double x) { return std::tanh(x); },
                       [](double, double y) { return 1.0 - y * y; });
}
inline Var exp(Var a) {
  return detail::unary(a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}
inline Var log(Var a) {
  return detail::unary(a, "log", [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}
inline Var square(Var a) {
  return detail::unary(a, "square", [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}
inline Var sqrt(Var a) {
  return detail::unary(a, "sqrt", [](double x) { return std::sqrt(x); },
                       [](double, double y) { return 0.5 / y; });
}
inline Var softplus(Var a) {
  return detail::unary(a, "softplus", detail::softplus_value,
                       [](double x, double) { return detail::sigmoid_value(x); });
}
// Hard clamp; the gradient is zero where the bound is active.
inline Var clamp(Var a, double lo, double hi) {
  return detail::unary(a, "clamp", [lo, hi](double x) { return std::clamp(x, lo, hi); },
                       [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

// Identity forward, zero backward.
inline Var detach(Var a) { return a.tape().constant(a.value()); }

// ---- linear algebra ---------------------------------------------------------

inline Var matmul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  detail::require_matrix(av, "matmul");
  detail::require_matrix(bv, "matmul");
  if (av.cols() != bv.rows()) {
    throw ConfigError("matmul: inner dimensions differ, " + shape_string(av.shape()) + " x " +
                      shape_string(bv.shape()));
  }
  Tensor out(Shape{av.rows(), bv.cols()});
  detail::as_matrix(out).noalias() = detail::as_matrix(av) * detail::as_matrix(bv);
  return a.tape().record(
      std::move(out), {a.id(), b.id()},
      [](BackwardContext& ctx) {
        const auto g = detail::as_matrix(ctx.grad());
        if (Tensor* ga = ctx.input_grad(0)) {
          detail::as_matrix(*ga).noalias() += g * detail::as_matrix(ctx.input(1)).transpose();
        }
        if (Tensor* gb = ctx.input_grad(1)) {
          detail::as_matrix(*gb).noalias() += detail::as_matrix(ctx.input(0)).transpose() * g;
        }
      },
      "matmul");
}

// x [rows, cols] + bias [cols] broadcast over rows.
inline Var add_bias(Var x, Var bias) {
  const Tensor& xv = x.value();
  const Tensor& bv = bias.value();
  detail::require_matrix(xv, "add_bias");
  if (bv.size() != xv.cols()) {
    throw ConfigError("add_bias: bias " + shape_string(bv.shape()) + " vs input " + shape_string(xv.shape()));
  }
  Tensor out = xv;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] += bv[c];
  }
  return x.tape().record(
      std::move(out), {x.id(), bias.id()},
      [](BackwardContext& ctx) {
        const Tensor& g = ctx.grad();
        if (Tensor* gx = ctx.input_grad(0)) *gx += g;
        if (Tensor* gb = ctx.input_grad(1)) {
          for (std::size_t r = 0; r < g.rows(); ++r) {
            auto row = g.row(r);
            for (std::size_t c = 0; c < row.size(); ++c) (*gb)[c] += row[c];
          }
        }
      },
      "add_bias");
}

// ---- reductions -------------------------------------------------------------

inline Var sum(Var a) {
  double total = 0.0;
  for (double v : a.value().data()) total += v;
  return a.tape().record(
      Tensor::scalar(total), {a.id()},
      [](BackwardContext& ctx) {
        Tensor* gx = ctx.input_grad(0);
        if (!gx) return;
        const double g = ctx.grad()[0];
        for (double& v : gx->data()) v += g;
      },
      "sum");
}

inline Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

// [rows, cols] -> [rows, 1]
inline Var sum_rows(Var a) {
  const Tensor& av = a.value();
  detail::require_matrix(av, "sum_rows");
  Tensor out(Shape{av.rows(), 1});
  for (std::size_t r = 0; r < av.rows(); ++r) {
    double s = 0.0;
    for (double v : av.row(r)) s += v;
    out[r] = s;
  }
  return a.tape().record(
      std::move(out), {a.id()},
      [](BackwardContext& ctx) {
        Tensor* gx = ctx.input_grad(0);
        if (!gx) return;
        for (std::size_t r = 0; r < gx->rows(); ++r) {
          for (double& v : gx->row(r)) v += ctx.grad()[r];
        }
      },
      "sum_rows");
}

// Row-wise log(sum(exp(x))) with max shift; [rows, cols] -> [rows, 1].
inline Var logsumexp_rows(Var a) {
  const Tensor& av = a.value();
  detail::require_matrix(av, "logsumexp_rows");
  Tensor out(Shape{av.rows(), 1});
  for (std::size_t r = 0; r < av.rows(); ++r) {
    const auto row = av.row(r);
    const double m = *std::max_element(row.begin(), row.end());
    double s = 0.0;
    for (double v : row) s += std::exp(v - m);
    out[r] = m + std::log(s);
  }
  return a.tape().record(
      std::move(out), {a.id()},
      [](BackwardContext& ctx) {
        Tensor* gx = ctx.input_grad(0);
        if (!gx) return;
        const Tensor& x = ctx.input(0);
        const Tensor& y = ctx.output();
        for (std::size_t r = 0; r < x.rows(); ++r) {
          const auto row = x.row(r);
          auto grow = gx->row(r);
          for (std::size_t c = 0; c < row.size(); ++c) grow[c] += ctx.grad()[r] * std::exp(row[c] - y[r]);
        }
      },
      "logsumexp_rows");
}

inline Var softmax_rows(Var a) {
  const Tensor& av = a.value();
  detail::require_matrix(av, "softmax_rows");
  Tensor out(av.shape());
  for (std::size_t r = 0; r < av.rows(); ++r) {
    const auto row = av.row(r);
    auto orow = out.row(r);
    const double m = *std::max_element(row.begin(), row.end());
    double s = 0.0;
    for (std::size_t c = 0; c < row.size(); ++c) s += (orow[c] = std::exp(row[c] - m));
    for (double& v : orow) v /= s;
  }
  return a.tape().record(
      std::move(out), {a.id()},
      [](BackwardContext& ctx) {
        Tensor* gx = ctx.input_grad(0);
        if (!gx) return;
        const Tensor& y = ctx.output();
        const Tensor& g = ctx.grad();
        for (std::size_t r = 0; r < y.rows(); ++r) {
          const auto yr = y.row(r);
          const auto gr = g.row(r);
          double dot = 0.0;
          for (std::size_t c = 0; c < yr.size(); ++c) dot += yr[c] * gr[c];
          auto out = gx->row(r);
          for (std::size_t c = 0; c < yr.size(); ++c) out[c] += yr[c] * (gr[c] - dot);
        }
      },
      "softmax_rows");
}

inline Var log_softmax_rows(Var a) {
  const Tensor& av = a.value();
  detail::require_matrix(av, "log_softmax_rows");
  Tensor out(av.shape());
  for (std::size_t r = 0; r < av.rows(); ++r) {
    const auto row = av.row(r);
    const double m = *std::max_element(row.begin(), row.end());
    double s = 0.0;
    for (double v : row) s += std::exp(v - m);
    const double lse = m + std::log(s);
    auto orow = out.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) orow[c] = row[c] - lse;
  }
  return a.tape().record(
      std::move(out), {a.id()},
      [](BackwardContext& ctx) {
        Tensor* gx = ctx.input_grad(0);
        if (!gx) return;
        const Tensor& y = ctx.output();
        const Tensor& g = ctx.grad();
        for (std::size_t r = 0; r < y.rows(); ++r) {
          const auto yr = y.row(r);
          const auto gr = g.row(r);
          double gsum = 0.0;
          for (double v : gr) gsum += v;
          auto out = gx->row(r);
          for (std::size_t c = 0; c < yr.size(); ++c) out[c] += gr[c] - std::exp(yr[c]) * gsum;
        }
      },
      "log_softmax_rows");
}

// ---- structural ops ---------------------------------------------------------

inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw UsageError("concat_cols: no inputs");
  const std::size_t rows = parts.front().value().rows();
  std::size_t cols = 0;
  for (const Var& p : parts) {
    detail::require_matrix(p.value(), "concat_cols");
    if (p.value().rows() != rows) throw ConfigError("concat_cols: row counts differ");
    cols += p.value().cols();
  }
  Tensor out(Shape{rows, cols});
  std::vector<std::size_t> ids;
  std::vector<std::size_t> widths;
  for (std::size_t r = 0, offset = 0; r < rows; ++r, offset = 0) {
    for (const Var& p : parts) {
      const auto src = p.value().row(r);
      std::copy(src.begin(), src.end(), out.row(r).begin() + static_cast<std::ptrdiff_t>(offset));
      offset += src.size();
    }
  }
  for (const Var& p : parts) {
    ids.push_back(p.id());
    widths.push_back(p.value().cols());
  }
  return parts.front().tape().record(
      std::move(out), std::move(ids),
      [widths](BackwardContext& ctx) {
        const Tensor& g = ctx.grad();
        std::size_t offset = 0;
        for (std::size_t i = 0; i < widths.size(); ++i) {
          if (Tensor* gi = ctx.input_grad(i)) {
            for (std::size_t r = 0; r < g.rows(); ++r) {
              const auto src = g.row(r).subspan(offset, widths[i]);
              auto dst = gi->row(r);
              for (std::size_t c = 0; c < widths[i]; ++c) dst[c] += src[c];
            }
          }
          offset += widths[i];
        }
      },
      "concat_cols");
}

inline Var slice_cols(Var a, std::size_t start, std::size_t width) {
  const Tensor& av = a.value();
  detail::require_matrix(av, "slice_cols");
  if (start + width > av.cols()) throw ConfigError("slice_cols: range exceeds columns");
  Tensor out(Shape{av.rows(), width});
  for (std::size_t r = 0; r < av.rows(); ++r) {
    const auto src = av.row(r).subspan(start, width);
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  return a.tape().record(
      std::move(out), {a.id()},
      [start, width](BackwardContext& ctx) {
        Tensor* gx = ctx.input_grad(0);
        if (!gx) return;
        for (std::size_t r = 0; r < gx->rows(); ++r) {
          const auto src = ctx.grad().row(r);
          auto dst = gx->row(r).subspan(start, width);
          for (std::size_t c = 0; c < width; ++c) dst[c] += src[c];
        }
      },
      "slice_cols");
}

// Picks column index[r] from each row: [rows, cols] -> [rows, 1].
inline Var gather_cols(Var a, std::vector<std::size_t> index) {
  const Tensor& av = a.value();
  detail::require_matrix(av, "gather_cols");
  if (index.size() != av.rows()) throw ConfigError("gather_cols: one index per row required");
  Tensor out(Shape{av.rows(), 1});
  for (std::size_t r = 0; r < av.rows(); ++r) {
    if (index[r] >= av.cols()) throw ConfigError("gather_cols: index out of range");
    out[r] = av(r, index[r]);
  }
  return a.tape().record(
      std::move(out), {a.id()},
      [index = std::move(index)](BackwardContext& ctx) {
        Tensor* gx = ctx.input_grad(0);
        if (!gx) return;
        for (std::size_t r = 0; r < index.size(); ++r) (*gx)(r, index[r]) += ctx.grad()[r];
      },
      "gather_cols");
}

// [rows, blocks*width] -> [rows, blocks]: sums each contiguous block of `width` columns.
inline Var sum_blocks(Var a, std::size_t width) {
  const Tensor& av = a.value();
  detail::require_matrix(av, "sum_blocks");
  if (width == 0 || av.cols() % width != 0) throw ConfigError("sum_blocks: width must divide columns");
  const std::size_t blocks = av.cols() / width;
  Tensor out(Shape{av.rows(), blocks});
  for (std::size_t r = 0; r < av.rows(); ++r) {
    const auto row = av.row(r);
    for (std::size_t k = 0; k < blocks; ++k) {
      double s = 0.0;
      for (std::size_t d = 0; d < width; ++d) s += row[k * width + d];
      out(r, k) = s;
    }
  }
  return a.tape().record(
      std::move(out), {a.id()},
      [width, blocks](BackwardContext& ctx) {
        Tensor* gx = ctx.input_grad(0);
        if (!gx) return;
        for (std::size_t r = 0; r < gx->rows(); ++r) {
          auto dst = gx->row(r);
          for (std::size_t k = 0; k < blocks; ++k) {
            for (std::size_t d = 0; d < width; ++d) dst[k * width + d] += ctx.grad()(r, k);
          }
        }
      },
      "sum_blocks");
}

// [rows, blocks*width] -> [rows, width]: elementwise sum of the blocks.
inline Var sum_across_blocks(Var a, std::size_t width) {
  const Tensor& av = a.value();
  detail::require_matrix(av, "sum_across_blocks");
  if (width == 0 || av.cols() % width != 0) throw ConfigError("sum_across_blocks: width must divide columns");
  const std::size_t blocks = av.cols() / width;
  Tensor out(Shape{av.rows(), width});
  for (std::size_t r = 0; r < av.rows(); ++r) {
    const auto row = av.row(r);
    for (std::size_t k = 0; k < blocks; ++k) {
      for (std::size_t d = 0; d < width; ++d) out(r, d) += row[k * width + d];
    }
  }
  return a.tape().record(
      std::move(out), {a.id()},
      [width, blocks](BackwardContext& ctx) {
        Tensor* gx = ctx.input_grad(0);
        if (!gx) return;
        for (std::size_t r = 0; r < gx->rows(); ++r) {
          auto dst = gx->row(r);
          for (std::size_t k = 0; k < blocks; ++k) {
            for (std::size_t d = 0; d < width; ++d) dst[k * width + d] += ctx.grad()(r, d);
          }
        }
      },
      "sum_across_blocks");
}

// [rows, blocks] -> [rows, blocks*width]: each column repeated `width` times.
inline Var repeat_blocks(Var a, std::size_t width) {
  const Tensor& av = a.value();
  detail::require_matrix(av, "repeat_blocks");
  const std::size_t blocks = av.cols();
  Tensor out(Shape{av.rows(), blocks * width});
  for (std::size_t r = 0; r < av.rows(); ++r) {
    for (std::size_t k = 0; k < blocks; ++k) {
      for (std::size_t d = 0; d < width; ++d) out(r, k * width + d) = av(r, k);
    }
  }
  return a.tape().record(
      std::move(out), {a.id()},
      [width, blocks](BackwardContext& ctx) {
        Tensor* gx = ctx.input_grad(0);
        if (!gx) return;
        for (std::size_t r = 0; r < gx->rows(); ++r) {
          for (std::size_t k = 0; k < blocks; ++k) {
            for (std::size_t d = 0; d < width; ++d) (*gx)(r, k) += ctx.grad()(r, k * width + d);
          }
        }
      },
      "repeat_blocks");
}

// [rows, width] -> [rows, times*width]: the whole row tiled `times` times.
inline Var tile_cols(Var a, std::size_t times) {
  const Tensor& av = a.value();
  detail::require_matrix(av, "tile_cols");
  const std::size_t width = av.cols();
  Tensor out(Shape{av.rows(), times * width});
  for (std::size_t r = 0; r < av.rows(); ++r) {
    for (std::size_t k = 0; k < times; ++k) {
      for (std::size_t d = 0; d < width; ++d) out(r, k * width + d) = av(r, d);
    }
  }
  return a.tape().record(
      std::move(out), {a.id()},
      [width, times](BackwardContext& ctx) {
        Tensor* gx = ctx.input_grad(0);
        if (!gx) return;
        for (std::size_t r = 0; r < gx->rows(); ++r) {
          for (std::size_t k = 0; k < times; ++k) {
            for (std::size_t d = 0; d < width; ++d) (*gx)(r, d) += ctx.grad()(r, k * width + d);
          }
        }
      },
      "tile_cols");
}

// ---- losses -----------------------------------------------------------------

// Mean over rows of softmax cross-entropy against integer class targets.
inline Var softmax_cross_entropy(Var logits, const std::vector<std::size_t>& targets) {
  return -mean(gather_cols(log_softmax_rows(logits), targets));
}

}  // namespace pmoe
