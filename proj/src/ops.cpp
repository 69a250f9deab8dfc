#include <algorithm>
#include <cmath>
#include <numbers>

#include "flowify/diffarray.hpp"
#include "flowify/errors.hpp"
#include "flowify/kernels.hpp"

namespace flowify {
namespace {

using Index = std::shared_ptr<const std::vector<std::size_t>>;

constexpr double kHalfLog2Pi = 0.91893853320467274178;

// Per-axis strides of a and b inside the broadcast output (0 on broadcast axes).
struct BroadcastPlan {
  Shape out;
  std::vector<std::size_t> stride_a;
  std::vector<std::size_t> stride_b;
};

BroadcastPlan plan_broadcast(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  BroadcastPlan plan;
  plan.out.assign(rank, 1);
  plan.stride_a.assign(rank, 0);
  plan.stride_b.assign(rank, 0);
  std::size_t sa = 1, sb = 1;
  for (std::size_t r = 0; r < rank; ++r) {
    const std::size_t axis = rank - 1 - r;
    const std::size_t da = r < a.size() ? a[a.size() - 1 - r] : 1;
    const std::size_t db = r < b.size() ? b[b.size() - 1 - r] : 1;
    if (da != db && da != 1 && db != 1) {
      throw DimensionError("cannot broadcast " + shape_string(a) + " with " + shape_string(b));
    }
    plan.out[axis] = std::max(da, db);
    if (da == 0 || db == 0) plan.out[axis] = 0;
    plan.stride_a[axis] = da == 1 ? 0 : sa;
    plan.stride_b[axis] = db == 1 ? 0 : sb;
    sa *= da;
    sb *= db;
  }
  return plan;
}

// Calls f(out_index, a_index, b_index) over the broadcast output in row-major order.
template <class F>
void for_each_broadcast(const BroadcastPlan& plan, F&& f) {
  const std::size_t total = numel(plan.out);
  if (total == 0) return;
  const std::size_t rank = plan.out.size();
  if (rank == 0) {
    f(0, 0, 0);
    return;
  }
  std::vector<std::size_t> counter(rank, 0);
  std::size_t ia = 0, ib = 0;
  const std::size_t inner = plan.out[rank - 1];
  const std::size_t ea = plan.stride_a[rank - 1];
  const std::size_t eb = plan.stride_b[rank - 1];
  for (std::size_t i = 0; i < total; i += inner) {
    for (std::size_t j = 0; j < inner; ++j) f(i + j, ia + j * ea, ib + j * eb);
    // advance the odometer over the outer axes
    for (std::size_t axis = rank - 1; axis-- > 0;) {
      ++counter[axis];
      ia += plan.stride_a[axis];
      ib += plan.stride_b[axis];
      if (counter[axis] < plan.out[axis]) break;
      ia -= plan.stride_a[axis] * counter[axis];
      ib -= plan.stride_b[axis] * counter[axis];
      counter[axis] = 0;
    }
  }
}

// Binary elementwise op; dfa/dfb give d(out)/d(a), d(out)/d(b) given (x, y, out).
template <class F, class DA, class DB>
DiffArray binary(const DiffArray& a, const DiffArray& b, F f, DA dfa, DB dfb) {
  if (a.shape() == b.shape()) {
    const std::size_t n = a.size();
    std::vector<double> out(n);
    const double* x = a.data();
    const double* y = b.data();
    for (std::size_t i = 0; i < n; ++i) out[i] = f(x[i], y[i]);
    auto result_values = out;
    return Tape::record(a.shape(), std::move(out), {&a, &b},
                        [a, b, res = std::move(result_values), dfa, dfb](std::span<const double> g,
                                                                         Tape& t) {
                          const std::size_t n = g.size();
                          if (t.wants(a)) {
                            std::vector<double> ga(n);
                            for (std::size_t i = 0; i < n; ++i) ga[i] = g[i] * dfa(a[i], b[i], res[i]);
                            t.accumulate(a, ga);
                          }
                          if (t.wants(b)) {
                            std::vector<double> gb(n);
                            for (std::size_t i = 0; i < n; ++i) gb[i] = g[i] * dfb(a[i], b[i], res[i]);
                            t.accumulate(b, gb);
                          }
                        });
  }
  auto plan = std::make_shared<BroadcastPlan>(plan_broadcast(a.shape(), b.shape()));
  std::vector<double> out(numel(plan->out));
  const double* x = a.data();
  const double* y = b.data();
  for_each_broadcast(*plan, [&](std::size_t i, std::size_t ia, std::size_t ib) {
    out[i] = f(x[ia], y[ib]);
  });
  auto res = std::make_shared<const std::vector<double>>(out);
  return Tape::record(plan->out, std::move(out), {&a, &b},
                      [a, b, plan, res, dfa, dfb](std::span<const double> g, Tape& t) {
                        const bool wa = t.wants(a), wb = t.wants(b);
                        std::vector<double> ga(wa ? a.size() : 0), gb(wb ? b.size() : 0);
                        for_each_broadcast(*plan, [&](std::size_t i, std::size_t ia, std::size_t ib) {
                          if (wa) ga[ia] += g[i] * dfa(a[ia], b[ib], (*res)[i]);
                          if (wb) gb[ib] += g[i] * dfb(a[ia], b[ib], (*res)[i]);
                        });
                        if (wa) t.accumulate(a, ga);
                        if (wb) t.accumulate(b, gb);
                      });
}

// Unary elementwise op; df gives d(out)/d(x) given (x, out).
template <class F, class D>
DiffArray unary(const DiffArray& a, F f, D df) {
  const std::size_t n = a.size();
  std::vector<double> out(n);
  const double* x = a.data();
  for (std::size_t i = 0; i < n; ++i) out[i] = f(x[i]);
  if (!a.tracked()) return DiffArray(a.shape(), std::move(out));
  auto res = std::make_shared<const std::vector<double>>(out);
  return Tape::record(a.shape(), std::move(out), {&a}, [a, res, df](std::span<const double> g, Tape& t) {
    std::vector<double> ga(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] = g[i] * df(a[i], (*res)[i]);
    t.accumulate(a, ga);
  });
}

void require_rank(const DiffArray& a, std::size_t rank, const char* op) {
  if (a.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_string(a.shape()));
  }
}

}  // namespace

// ---- sampling ----------------------------------------------------------------

DiffArray standard_normal(Shape shape, Rng& rng) {
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = rng.normal();
  return DiffArray(std::move(shape), std::move(v));
}

DiffArray uniform(Shape shape, Rng& rng) {
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = rng.uniform();
  return DiffArray(std::move(shape), std::move(v));
}

// ---- elementwise ---------------------------------------------------------------

DiffArray add(const DiffArray& a, const DiffArray& b) {
  if (a.shape() == b.shape()) {
    std::vector<double> out(a.size());
    kernels::active().add(a.data(), b.data(), out.data(), out.size());
    return Tape::record(a.shape(), std::move(out), {&a, &b},
                        [a, b](std::span<const double> g, Tape& t) {
                          t.accumulate(a, g);
                          t.accumulate(b, g);
                        });
  }
  return binary(
      a, b, [](double x, double y) { return x + y; }, [](double, double, double) { return 1.0; },
      [](double, double, double) { return 1.0; });
}

DiffArray sub(const DiffArray& a, const DiffArray& b) {
  return binary(
      a, b, [](double x, double y) { return x - y; }, [](double, double, double) { return 1.0; },
      [](double, double, double) { return -1.0; });
}

DiffArray mul(const DiffArray& a, const DiffArray& b) {
  if (a.shape() == b.shape()) {
    std::vector<double> out(a.size());
    kernels::active().mul(a.data(), b.data(), out.data(), out.size());
    return Tape::record(a.shape(), std::move(out), {&a, &b},
                        [a, b](std::span<const double> g, Tape& t) {
                          std::vector<double> tmp(g.size());
                          if (t.wants(a)) {
                            kernels::active().mul(g.data(), b.data(), tmp.data(), tmp.size());
                            t.accumulate(a, tmp);
                          }
                          if (t.wants(b)) {
                            kernels::active().mul(g.data(), a.data(), tmp.data(), tmp.size());
                            t.accumulate(b, tmp);
                          }
                        });
  }
  return binary(
      a, b, [](double x, double y) { return x * y; }, [](double, double y, double) { return y; },
      [](double x, double, double) { return x; });
}

DiffArray div(const DiffArray& a, const DiffArray& b) {
  return binary(
      a, b, [](double x, double y) { return x / y; },
      [](double, double y, double) { return 1.0 / y; },
      [](double, double y, double z) { return -z / y; });
}

DiffArray add_scalar(const DiffArray& a, double c) {
  return unary(
      a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

DiffArray scale(const DiffArray& a, double c) {
  return unary(
      a, [c](double x) { return x * c; }, [c](double, double) { return c; });
}

DiffArray neg(const DiffArray& a) { return scale(a, -1.0); }

DiffArray exp(const DiffArray& a) {
  return unary(
      a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

DiffArray log(const DiffArray& a) {
  return unary(
      a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

DiffArray square(const DiffArray& a) {
  return unary(
      a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

DiffArray sqrt(const DiffArray& a) {
  return unary(
      a, [](double x) { return std::sqrt(x); }, [](double, double y) { return 0.5 / y; });
}

DiffArray softplus(const DiffArray& a) {
  return unary(
      a,
      [](double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); },
      [](double x, double) { return 1.0 / (1.0 + std::exp(-x)); });
}

DiffArray leaky_relu(const DiffArray& a, double slope) {
  return unary(
      a, [slope](double x) { return x >= 0 ? x : slope * x; },
      [slope](double x, double) { return x >= 0 ? 1.0 : slope; });
}

DiffArray smooth_leaky_relu(const DiffArray& a, double slope) {
  const double ln2 = std::log(2.0);
  return unary(
      a,
      [slope, ln2](double x) {
        const double sp = x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
        return slope * x + (1.0 - slope) * (sp - ln2);
      },
      [slope](double x, double) { return slope + (1.0 - slope) / (1.0 + std::exp(-x)); });
}

DiffArray clamp(const DiffArray& a, double lo, double hi) {
  return unary(
      a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
      [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

DiffArray probit(const DiffArray& a) {
  return unary(
      a, [](double p) { return inverse_normal_cdf(p); },
      [](double, double z) { return std::exp(0.5 * z * z + kHalfLog2Pi); });
}

DiffArray where(const std::vector<std::uint8_t>& select, const DiffArray& a, const DiffArray& b) {
  if (a.shape() != b.shape() || select.size() != a.size()) {
    throw DimensionError("where: shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = select[i] ? a[i] : b[i];
  auto mask = std::make_shared<const std::vector<std::uint8_t>>(select);
  return Tape::record(a.shape(), std::move(out), {&a, &b},
                      [a, b, mask](std::span<const double> g, Tape& t) {
                        std::vector<double> ga(g.size(), 0.0), gb(g.size(), 0.0);
                        for (std::size_t i = 0; i < g.size(); ++i) {
                          ((*mask)[i] ? ga : gb)[i] = g[i];
                        }
                        t.accumulate(a, ga);
                        t.accumulate(b, gb);
                      });
}

// ---- reductions ------------------------------------------------------------------

DiffArray sum(const DiffArray& a) {
  const double s = kernels::sum(a.values());
  return Tape::record({}, {s}, {&a}, [a](std::span<const double> g, Tape& t) {
    t.accumulate(a, std::vector<double>(a.size(), g[0]));
  });
}

DiffArray mean(const DiffArray& a) {
  if (a.size() == 0) throw DimensionError("mean of empty array");
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

DiffArray sum_axis(const DiffArray& a, std::size_t axis, bool keepdim) {
  if (axis >= a.rank()) {
    throw DimensionError("sum_axis: axis out of range for " + shape_string(a.shape()));
  }
  const auto& sh = a.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= sh[i];
  for (std::size_t i = axis + 1; i < sh.size(); ++i) inner *= sh[i];
  const std::size_t len = sh[axis];
  std::vector<double> out(outer * inner, 0.0);
  const double* x = a.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t l = 0; l < len; ++l) {
      const double* src = x + (o * len + l) * inner;
      double* dst = out.data() + o * inner;
      for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
    }
  }
  Shape out_shape = sh;
  if (keepdim) {
    out_shape[axis] = 1;
  } else {
    out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  }
  return Tape::record(std::move(out_shape), std::move(out), {&a},
                      [a, outer, len, inner](std::span<const double> g, Tape& t) {
                        std::vector<double> ga(a.size());
                        for (std::size_t o = 0; o < outer; ++o) {
                          for (std::size_t l = 0; l < len; ++l) {
                            std::copy_n(g.data() + o * inner, inner,
                                        ga.data() + (o * len + l) * inner);
                          }
                        }
                        t.accumulate(a, ga);
                      });
}

DiffArray sum_rows(const DiffArray& a) {
  if (a.rank() <= 1) return sum(a);
  const std::size_t rows = a.dim(0);
  const std::size_t cols = rows == 0 ? 0 : a.size() / rows;
  return sum_axis(reshape(a, {rows, cols}), 1);
}

// ---- structure ------------------------------------------------------------------

DiffArray reshape(const DiffArray& a, Shape shape) {
  if (numel(shape) != a.size()) {
    throw DimensionError("reshape " + shape_string(a.shape()) + " -> " + shape_string(shape));
  }
  if (!a.tracked()) return a.reshaped(std::move(shape));
  return Tape::record(std::move(shape), a.to_vector(), {&a},
                      [a](std::span<const double> g, Tape& t) { t.accumulate(a, g); });
}

DiffArray gather(const DiffArray& a, Index index, Shape shape) {
  if (numel(shape) != index->size()) {
    throw DimensionError("gather: index count does not match shape " + shape_string(shape));
  }
  std::vector<double> out(index->size());
  const double* x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const std::size_t j = (*index)[i];
    if (j >= a.size()) throw DimensionError("gather: index out of range");
    out[i] = x[j];
  }
  return Tape::record(std::move(shape), std::move(out), {&a},
                      [a, index](std::span<const double> g, Tape& t) {
                        std::vector<double> ga(a.size(), 0.0);
                        for (std::size_t i = 0; i < g.size(); ++i) ga[(*index)[i]] += g[i];
                        t.accumulate(a, ga);
                      });
}

DiffArray scatter_add(const DiffArray& a, Index index, Shape shape) {
  if (index->size() != a.size()) {
    throw DimensionError("scatter_add: index count does not match input size");
  }
  const std::size_t n = numel(shape);
  std::vector<double> out(n, 0.0);
  const double* x = a.data();
  for (std::size_t i = 0; i < a.size(); ++i) {
    const std::size_t j = (*index)[i];
    if (j >= n) throw DimensionError("scatter_add: index out of range");
    out[j] += x[i];
  }
  return Tape::record(std::move(shape), std::move(out), {&a},
                      [a, index](std::span<const double> g, Tape& t) {
                        std::vector<double> ga(a.size());
                        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] = g[(*index)[i]];
                        t.accumulate(a, ga);
                      });
}

DiffArray slice_last(const DiffArray& a, std::size_t begin, std::size_t end) {
  if (a.rank() == 0) throw DimensionError("slice_last on scalar");
  const std::size_t last = a.shape().back();
  if (begin > end || end > last) {
    throw DimensionError("slice_last: [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") out of range for " + shape_string(a.shape()));
  }
  const std::size_t rows = last == 0 ? 0 : a.size() / last;
  const std::size_t width = end - begin;
  std::vector<double> out(rows * width);
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(a.data() + r * last + begin, width, out.data() + r * width);
  }
  Shape shape = a.shape();
  shape.back() = width;
  return Tape::record(std::move(shape), std::move(out), {&a},
                      [a, rows, last, begin, width](std::span<const double> g, Tape& t) {
                        std::vector<double> ga(a.size(), 0.0);
                        for (std::size_t r = 0; r < rows; ++r) {
                          std::copy_n(g.data() + r * width, width, ga.data() + r * last + begin);
                        }
                        t.accumulate(a, ga);
                      });
}

DiffArray concat_last(const std::vector<DiffArray>& parts) {
  if (parts.empty()) throw DimensionError("concat_last: no inputs");
  Shape lead = parts[0].shape();
  if (lead.empty()) throw DimensionError("concat_last on scalars");
  lead.pop_back();
  std::size_t total = 0;
  for (const auto& p : parts) {
    Shape l = p.shape();
    if (l.empty()) throw DimensionError("concat_last on scalars");
    const std::size_t w = l.back();
    l.pop_back();
    if (l != lead) throw DimensionError("concat_last: leading shapes differ");
    total += w;
  }
  const std::size_t rows = numel(lead);
  std::vector<double> out(rows * total);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.shape().back();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(p.data() + r * w, w, out.data() + r * total + offset);
    }
    offset += w;
  }
  Shape shape = lead;
  shape.push_back(total);
  bool any = false;
  for (const auto& p : parts) any = any || p.tracked();
  if (!any) return DiffArray(std::move(shape), std::move(out));
  // record against the first tracked part; Tape::record checks the tape identity
  const DiffArray* tracked = nullptr;
  for (const auto& p : parts) {
    if (!p.tracked()) continue;
    if (tracked && tracked->tape() != p.tape()) throw Error("operands belong to different tapes");
    tracked = &p;
  }
  return Tape::record(std::move(shape), std::move(out), {tracked},
                      [parts, rows, total](std::span<const double> g, Tape& t) {
                        std::size_t offset = 0;
                        for (const auto& p : parts) {
                          const std::size_t w = p.shape().back();
                          if (t.wants(p)) {
                            std::vector<double> gp(rows * w);
                            for (std::size_t r = 0; r < rows; ++r) {
                              std::copy_n(g.data() + r * total + offset, w, gp.data() + r * w);
                            }
                            t.accumulate(p, gp);
                          }
                          offset += w;
                        }
                      });
}

DiffArray transpose(const DiffArray& a) {
  require_rank(a, 2, "transpose");
  const std::size_t r = a.dim(0), c = a.dim(1);
  auto index = std::make_shared<std::vector<std::size_t>>(r * c);
  for (std::size_t i = 0; i < c; ++i) {
    for (std::size_t j = 0; j < r; ++j) (*index)[i * r + j] = j * c + i;
  }
  return gather(a, index, {c, r});
}

// ---- linear algebra --------------------------------------------------------------

DiffArray matmul(const DiffArray& a, const DiffArray& b, bool trans_a, bool trans_b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = trans_a ? a.dim(1) : a.dim(0);
  const std::size_t k = trans_a ? a.dim(0) : a.dim(1);
  const std::size_t kb = trans_b ? b.dim(1) : b.dim(0);
  const std::size_t n = trans_b ? b.dim(0) : b.dim(1);
  if (k != kb) {
    throw DimensionError("matmul: inner dimensions differ: " + shape_string(a.shape()) +
                         (trans_a ? "^T" : "") + " x " + shape_string(b.shape()) +
                         (trans_b ? "^T" : ""));
  }
  const std::size_t lda = a.dim(1), ldb = b.dim(1);
  std::vector<double> out(m * n);
  kernels::gemm(m, n, k, {a.data(), lda, trans_a}, {b.data(), ldb, trans_b}, out.data(), n, false);
  return Tape::record(
      {m, n}, std::move(out), {&a, &b},
      [a, b, trans_a, trans_b, m, n, k, lda, ldb](std::span<const double> g, Tape& t) {
        const kernels::MatRef gm{g.data(), n, false};
        const kernels::MatRef gt{g.data(), n, true};
        if (t.wants(a)) {
          std::vector<double> ga(a.size());
          if (!trans_a) {
            kernels::gemm(m, k, n, gm, {b.data(), ldb, !trans_b}, ga.data(), k, false);
          } else {
            kernels::gemm(k, m, n, {b.data(), ldb, trans_b}, gt, ga.data(), m, false);
          }
          t.accumulate(a, ga);
        }
        if (t.wants(b)) {
          std::vector<double> gb(b.size());
          if (!trans_b) {
            kernels::gemm(k, n, m, {a.data(), lda, !trans_a}, gm, gb.data(), n, false);
          } else {
            kernels::gemm(n, k, m, gt, {a.data(), lda, trans_a}, gb.data(), k, false);
          }
          t.accumulate(b, gb);
        }
      });
}

double matrix_norm1(const DiffArray& s) {
  require_rank(s, 2, "matrix_norm1");
  const std::size_t r = s.dim(0), c = s.dim(1);
  double best = 0.0;
  for (std::size_t j = 0; j < c; ++j) {
    double col = 0.0;
    for (std::size_t i = 0; i < r; ++i) col += std::abs(s[i * c + j]);
    best = std::max(best, col);
  }
  return best;
}

int matrix_exp_squarings(double norm1) {
  if (!(norm1 > 0.0)) return 0;
  return std::max(0, static_cast<int>(std::ceil(std::log2(norm1))) + 1);
}

DiffArray matrix_exp(const DiffArray& s) {
  require_rank(s, 2, "matrix_exp");
  const std::size_t d = s.dim(0);
  if (s.dim(1) != d) throw DimensionError("matrix_exp: non-square " + shape_string(s.shape()));
  constexpr int kTerms = 18;  // I + A + ... + A^17/17!
  const int squarings = matrix_exp_squarings(matrix_norm1(s));
  const DiffArray scaled = scale(s, std::ldexp(1.0, -squarings));
  const DiffArray eye = DiffArray::identity(d);
  // Horner: I + A/1 (I + A/2 (I + ... (I + A/(n-1))))
  DiffArray acc = eye;
  for (int j = kTerms - 1; j >= 1; --j) {
    acc = add(eye, scale(matmul(scaled, acc), 1.0 / j));
  }
  for (int i = 0; i < squarings; ++i) acc = matmul(acc, acc);
  return acc;
}

DiffArray softmax_last(const DiffArray& a) {
  if (a.rank() == 0) throw DimensionError("softmax_last on scalar");
  const std::size_t w = a.shape().back();
  const std::size_t rows = w == 0 ? 0 : a.size() / w;
  std::vector<double> out(a.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = a.data() + r * w;
    double* y = out.data() + r * w;
    const double mx = *std::max_element(x, x + w);
    double z = 0.0;
    for (std::size_t i = 0; i < w; ++i) z += (y[i] = std::exp(x[i] - mx));
    for (std::size_t i = 0; i < w; ++i) y[i] /= z;
  }
  auto res = std::make_shared<const std::vector<double>>(out);
  return Tape::record(a.shape(), std::move(out), {&a},
                      [a, res, rows, w](std::span<const double> g, Tape& t) {
                        std::vector<double> ga(a.size());
                        for (std::size_t r = 0; r < rows; ++r) {
                          const double* s = res->data() + r * w;
                          const double* gr = g.data() + r * w;
                          double dot = 0.0;
                          for (std::size_t i = 0; i < w; ++i) dot += gr[i] * s[i];
                          for (std::size_t i = 0; i < w; ++i) ga[r * w + i] = s[i] * (gr[i] - dot);
                        }
                        t.accumulate(a, ga);
                      });
}

// ---- densities -------------------------------------------------------------------

DiffArray gaussian_logpdf(const DiffArray& x, const DiffArray& mean, const DiffArray& log_std) {
  const DiffArray t = (x - mean) * exp(neg(log_std));
  // broadcast log_std to the full shape of t before summing
  const DiffArray per_elem = add_scalar(scale(square(t), -0.5), -kHalfLog2Pi) - log_std;
  if (per_elem.shape() != x.shape()) {
    throw DimensionError("gaussian_logpdf: parameters broadcast beyond x " +
                         shape_string(x.shape()));
  }
  return sum_rows(per_elem);
}

DiffArray standard_normal_logpdf(const DiffArray& x) {
  if (x.rank() <= 1) {
    double acc = 0.0;
    for (double v : x.values()) acc += -0.5 * v * v - kHalfLog2Pi;
    return Tape::record({}, {acc}, {&x}, [x](std::span<const double> g, Tape& t) {
      std::vector<double> gx(x.size());
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = -g[0] * x[i];
      t.accumulate(x, gx);
    });
  }
  const std::size_t rows = x.dim(0);
  const std::size_t cols = rows == 0 ? 0 : x.size() / rows;
  std::vector<double> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* v = x.data() + r * cols;
    out[r] = -0.5 * kernels::active().dot(v, v, cols) - kHalfLog2Pi * static_cast<double>(cols);
  }
  return Tape::record({rows}, std::move(out), {&x}, [x, rows, cols](std::span<const double> g, Tape& t) {
    std::vector<double> gx(x.size());
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) gx[r * cols + c] = -g[r] * x[r * cols + c];
    }
    t.accumulate(x, gx);
  });
}

// ---- scalar helpers --------------------------------------------------------------

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

double inverse_normal_cdf(double p) {
  if (!(p > 0.0 && p < 1.0)) {
    if (p == 0.0) return -HUGE_VAL;
    if (p == 1.0) return HUGE_VAL;
    return std::nan("");
  }
  // Acklam's rational approximation followed by one Halley step.
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                 -2.759285104469687e+02, 1.383577518672690e+02,
                                 -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                 -1.556989798598866e+02, 6.680131188771972e+01,
                                 -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                 -2.400758277161838e+00, -2.549732539343734e+00,
                                 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                                 2.445134137142996e+00, 3.754408661907416e+00};
  constexpr double lo = 0.02425, hi = 1.0 - lo;
  double x;
  if (p < lo) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= hi) {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log1p(-p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  const double e = normal_cdf(x) - p;
  const double u = e * std::exp(0.5 * x * x + kHalfLog2Pi);
  return x - u / (1.0 + 0.5 * x * u);
}

}  // namespace flowify
