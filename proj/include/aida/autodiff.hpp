#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <utility>
#include <vector>

#include "aida/error.hpp"
#include "aida/tensor.hpp"

namespace aida {

namespace detail {

// Shapes normalized to (rows, cols); rank 0 -> (1,1), rank 1 -> (1,n).
struct Dims2 {
  std::size_t r, c;
};

inline Dims2 as2d(const Shape& s) {
  if (s.empty()) return {1, 1};
  if (s.size() == 1) return {1, s[0]};
  if (s.size() == 2) return {s[0], s[1]};
  throw ContractError("rank > 2 not supported, got shape " + shape_str(s));
}

inline Shape broadcast_shape(const Shape& a, const Shape& b) {
  const Dims2 da = as2d(a), db = as2d(b);
  if ((da.r != db.r && da.r != 1 && db.r != 1) || (da.c != db.c && da.c != 1 && db.c != 1)) {
    throw ContractError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
  }
  const std::size_t r = std::max(da.r, db.r), c = std::max(da.c, db.c);
  const std::size_t rank = std::max(a.size(), b.size());
  if (rank == 0) return {};
  if (rank == 1) return {c};
  return {r, c};
}

template <typename F>
Tensor bin_op(const Tensor& a, const Tensor& b, F&& f) {
  const Shape out_shape = broadcast_shape(a.shape(), b.shape());
  const Dims2 da = as2d(a.shape()), db = as2d(b.shape()), dz = as2d(out_shape);
  Tensor out = Tensor::zeros(out_shape);
  const std::size_t ars = (da.r == 1) ? 0 : da.c, acs = (da.c == 1) ? 0 : 1;
  const std::size_t brs = (db.r == 1) ? 0 : db.c, bcs = (db.c == 1) ? 0 : 1;
  for (std::size_t i = 0; i < dz.r; ++i) {
    for (std::size_t j = 0; j < dz.c; ++j) {
      out[i * dz.c + j] = f(a[i * ars + j * acs], b[i * brs + j * bcs]);
    }
  }
  return out;
}

// Sum g over the axes that were broadcast to reach g's shape from `target`.
inline Tensor reduce_to(const Tensor& g, const Shape& target) {
  if (g.shape() == target) return g;
  const Dims2 dg = as2d(g.shape()), dt = as2d(target);
  Tensor out = Tensor::zeros(target);
  for (std::size_t i = 0; i < dg.r; ++i) {
    for (std::size_t j = 0; j < dg.c; ++j) {
      const std::size_t ti = (dt.r == 1) ? 0 : i, tj = (dt.c == 1) ? 0 : j;
      out[ti * dt.c + tj] += g[i * dg.c + j];
    }
  }
  return out;
}

inline Tensor broadcast_to(const Tensor& t, const Shape& target) {
  return bin_op(t, Tensor::zeros(target), [](double a, double) { return a; });
}

inline Tensor t_matmul(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw ContractError("matmul shape mismatch " + shape_str(a.shape()) + " x " +
                        shape_str(b.shape()));
  }
  Tensor out = Tensor::zeros({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a(i, p);
      if (av == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) out(i, j) += av * b(p, j);
    }
  }
  return out;
}

inline Tensor t_transpose(const Tensor& a) {
  const std::size_t m = a.rows(), n = a.cols();
  Tensor out = Tensor::zeros({n, m});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out(j, i) = a(i, j);
  }
  return out;
}

}  // namespace detail

class Tape;

// Handle to a node on a tape. Cheap to copy; valid for the tape's lifetime.
struct Var {
  std::size_t idx = static_cast<std::size_t>(-1);
  Tape* tape = nullptr;
};

// Reverse-mode tape. Nodes are appended in evaluation order, which is a
// topological order by construction; backward() walks them in reverse.
// Rebuilt per training step; confined to one thread.
class Tape {
 public:
  Var leaf(Tensor value) { return push(std::move(value), {}, nullptr); }
  Var constant(Tensor value) { return push(std::move(value), {}, nullptr); }
  Var constant(double value) { return constant(Tensor::scalar(value)); }

  const Tensor& value(Var v) const { return nodes_[v.idx].value; }

  std::size_t size() const { return nodes_.size(); }

  // Propagates adjoints from a rank-0 output back to every reachable node.
  // Unreached nodes keep zero adjoints.
  void backward(Var output) {
    if (output.tape != this) throw ContractError("backward: var from another tape");
    if (!value(output).shape().empty()) {
      throw ContractError("backward requires a scalar output, got shape " +
                          shape_str(value(output).shape()));
    }
    adjoints_.assign(nodes_.size(), Tensor());
    touched_.assign(nodes_.size(), false);
    adjoints_[output.idx] = Tensor::scalar(1.0);
    touched_[output.idx] = true;
    for (std::size_t i = output.idx + 1; i-- > 0;) {
      if (!touched_[i] || !nodes_[i].back) continue;
      nodes_[i].back(*this, adjoints_[i]);
    }
    ran_backward_ = true;
  }

  // Adjoint of v after backward(); zeros if v was not reached.
  Tensor grad(Var v) const {
    if (!ran_backward_) throw ContractError("grad() before backward()");
    if (!touched_[v.idx]) return Tensor::zeros(nodes_[v.idx].value.shape());
    return adjoints_[v.idx];
  }

  // --- used by op implementations ---

  using BackFn = std::function<void(Tape&, const Tensor&)>;

  Var push(Tensor value, std::vector<std::size_t> parents, BackFn back) {
    nodes_.push_back(Node{std::move(value), std::move(back), std::move(parents)});
    return Var{nodes_.size() - 1, this};
  }

  void accumulate(std::size_t idx, const Tensor& g) {
    if (!touched_[idx]) {
      adjoints_[idx] = g;
      touched_[idx] = true;
      return;
    }
    Tensor& a = adjoints_[idx];
    if (!a.same_shape(g)) {
      throw ContractError("adjoint shape mismatch: " + shape_str(a.shape()) + " vs " +
                          shape_str(g.shape()));
    }
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += g[i];
  }

 private:
  struct Node {
    Tensor value;
    BackFn back;  // null for leaves/constants
    std::vector<std::size_t> parents;
  };

  // Deque keeps value() references stable while later ops push nodes.
  std::deque<Node> nodes_;
  std::vector<Tensor> adjoints_;
  std::vector<bool> touched_;
  bool ran_backward_ = false;
};

namespace detail {
inline Tape& same_tape(Var a, Var b) {
  if (a.tape == nullptr || a.tape != b.tape) throw ContractError("vars from different tapes");
  return *a.tape;
}
}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise binary ops with numpy-style broadcasting over rank <= 2.
// ---------------------------------------------------------------------------

inline Var add(Var a, Var b) {
  Tape& t = detail::same_tape(a, b);
  Tensor out = detail::bin_op(t.value(a), t.value(b), [](double x, double y) { return x + y; });
  const Shape sa = t.value(a).shape(), sb = t.value(b).shape();
  return t.push(std::move(out), {a.idx, b.idx}, [a, b, sa, sb](Tape& tp, const Tensor& g) {
    tp.accumulate(a.idx, detail::reduce_to(g, sa));
    tp.accumulate(b.idx, detail::reduce_to(g, sb));
  });
}

inline Var sub(Var a, Var b) {
  Tape& t = detail::same_tape(a, b);
  Tensor out = detail::bin_op(t.value(a), t.value(b), [](double x, double y) { return x - y; });
  const Shape sa = t.value(a).shape(), sb = t.value(b).shape();
  return t.push(std::move(out), {a.idx, b.idx}, [a, b, sa, sb](Tape& tp, const Tensor& g) {
    tp.accumulate(a.idx, detail::reduce_to(g, sa));
    Tensor ng = g;
    for (std::size_t i = 0; i < ng.size(); ++i) ng[i] = -ng[i];
    tp.accumulate(b.idx, detail::reduce_to(ng, sb));
  });
}

inline Var mul(Var a, Var b) {
  Tape& t = detail::same_tape(a, b);
  Tensor out = detail::bin_op(t.value(a), t.value(b), [](double x, double y) { return x * y; });
  const Shape sa = t.value(a).shape(), sb = t.value(b).shape();
  return t.push(std::move(out), {a.idx, b.idx}, [a, b, sa, sb](Tape& tp, const Tensor& g) {
    const Tensor& av = tp.value(a);
    const Tensor& bv = tp.value(b);
    tp.accumulate(a.idx, detail::reduce_to(
                             detail::bin_op(g, bv, [](double x, double y) { return x * y; }), sa));
    tp.accumulate(b.idx, detail::reduce_to(
                             detail::bin_op(g, av, [](double x, double y) { return x * y; }), sb));
  });
}

inline Var div(Var a, Var b) {
  Tape& t = detail::same_tape(a, b);
  Tensor out = detail::bin_op(t.value(a), t.value(b), [](double x, double y) { return x / y; });
  const Shape sa = t.value(a).shape(), sb = t.value(b).shape();
  return t.push(std::move(out), {a.idx, b.idx}, [a, b, sa, sb](Tape& tp, const Tensor& g) {
    const Tensor& av = tp.value(a);
    const Tensor& bv = tp.value(b);
    tp.accumulate(a.idx, detail::reduce_to(
                             detail::bin_op(g, bv, [](double x, double y) { return x / y; }), sa));
    Tensor gb = detail::bin_op(g, av, [](double x, double y) { return x * y; });
    gb = detail::bin_op(gb, bv, [](double x, double y) { return -x / (y * y); });
    tp.accumulate(b.idx, detail::reduce_to(gb, sb));
  });
}

inline Var neg(Var a) {
  Tape& t = *a.tape;
  Tensor out = t.value(a);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = -out[i];
  return t.push(std::move(out), {a.idx}, [a](Tape& tp, const Tensor& g) {
    Tensor ng = g;
    for (std::size_t i = 0; i < ng.size(); ++i) ng[i] = -ng[i];
    tp.accumulate(a.idx, ng);
  });
}

// Scalar-constant conveniences.
inline Var add(Var a, double c) { return add(a, a.tape->constant(c)); }
inline Var sub(Var a, double c) { return sub(a, a.tape->constant(c)); }
inline Var mul(Var a, double c) { return mul(a, a.tape->constant(c)); }
inline Var div(Var a, double c) { return div(a, a.tape->constant(c)); }

// ---------------------------------------------------------------------------
// Matrix ops.
// ---------------------------------------------------------------------------

inline Var matmul(Var a, Var b) {
  Tape& t = detail::same_tape(a, b);
  Tensor out = detail::t_matmul(t.value(a), t.value(b));
  return t.push(std::move(out), {a.idx, b.idx}, [a, b](Tape& tp, const Tensor& g) {
    tp.accumulate(a.idx, detail::t_matmul(g, detail::t_transpose(tp.value(b))));
    tp.accumulate(b.idx, detail::t_matmul(detail::t_transpose(tp.value(a)), g));
  });
}

inline Var transpose(Var a) {
  Tape& t = *a.tape;
  return t.push(detail::t_transpose(t.value(a)), {a.idx}, [a](Tape& tp, const Tensor& g) {
    tp.accumulate(a.idx, detail::t_transpose(g));
  });
}

// ---------------------------------------------------------------------------
// Elementwise unary ops.
// ---------------------------------------------------------------------------

// Subgradient at 0 is defined as 0.
inline Var relu(Var a) {
  Tape& t = *a.tape;
  Tensor out = t.value(a);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = out[i] > 0.0 ? out[i] : 0.0;
  return t.push(std::move(out), {a.idx}, [a](Tape& tp, const Tensor& g) {
    const Tensor& x = tp.value(a);
    Tensor gx = g;
    for (std::size_t i = 0; i < gx.size(); ++i) {
      if (x[i] <= 0.0) gx[i] = 0.0;
    }
    tp.accumulate(a.idx, gx);
  });
}

inline Var exp(Var a) {
  Tape& t = *a.tape;
  Tensor out = t.value(a);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(out[i]);
  Tensor saved = out;  // backward reuses the computed exp values
  return t.push(std::move(out), {a.idx}, [a, saved = std::move(saved)](Tape& tp, const Tensor& g) {
    Tensor gx = g;
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] *= saved[i];
    tp.accumulate(a.idx, gx);
  });
}

inline Var log(Var a) {
  Tape& t = *a.tape;
  Tensor out = t.value(a);
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (out[i] <= 0.0) throw MathDomainError("log of non-positive value " + std::to_string(out[i]));
    out[i] = std::log(out[i]);
  }
  return t.push(std::move(out), {a.idx}, [a](Tape& tp, const Tensor& g) {
    const Tensor& x = tp.value(a);
    Tensor gx = g;
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] /= x[i];
    tp.accumulate(a.idx, gx);
  });
}

inline Var sqrt(Var a) {
  Tape& t = *a.tape;
  Tensor out = t.value(a);
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (out[i] < 0.0) throw MathDomainError("sqrt of negative value " + std::to_string(out[i]));
    out[i] = std::sqrt(out[i]);
  }
  Tensor saved = out;
  return t.push(std::move(out), {a.idx}, [a, saved = std::move(saved)](Tape& tp, const Tensor& g) {
    Tensor gx = g;
    for (std::size_t i = 0; i < gx.size(); ++i) {
      // A zero upstream gradient contributes nothing even at sqrt(0), where
      // the local derivative is infinite.
      gx[i] = (gx[i] == 0.0) ? 0.0 : gx[i] * 0.5 / saved[i];
    }
    tp.accumulate(a.idx, gx);
  });
}

// Subgradient at 0 is defined as 0, mirroring relu.
inline Var abs(Var a) {
  Tape& t = *a.tape;
  Tensor out = t.value(a);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::abs(out[i]);
  return t.push(std::move(out), {a.idx}, [a](Tape& tp, const Tensor& g) {
    const Tensor& x = tp.value(a);
    Tensor gx = g;
    for (std::size_t i = 0; i < gx.size(); ++i) {
      gx[i] *= (x[i] > 0.0) ? 1.0 : (x[i] < 0.0 ? -1.0 : 0.0);
    }
    tp.accumulate(a.idx, gx);
  });
}

// Elementwise max(x, floor). Gradient passes only where x > floor.
inline Var clamp_min(Var a, double floor) {
  Tape& t = *a.tape;
  Tensor out = t.value(a);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(out[i], floor);
  return t.push(std::move(out), {a.idx}, [a, floor](Tape& tp, const Tensor& g) {
    const Tensor& x = tp.value(a);
    Tensor gx = g;
    for (std::size_t i = 0; i < gx.size(); ++i) {
      if (x[i] <= floor) gx[i] = 0.0;
    }
    tp.accumulate(a.idx, gx);
  });
}

// ---------------------------------------------------------------------------
// Reductions. Axis 0 reduces rows, axis 1 reduces columns.
// ---------------------------------------------------------------------------

inline Var sum(Var a) {
  Tape& t = *a.tape;
  const Tensor& x = t.value(a);
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += x[i];
  const Shape sa = x.shape();
  return t.push(Tensor::scalar(s), {a.idx}, [a, sa](Tape& tp, const Tensor& g) {
    tp.accumulate(a.idx, Tensor::full(sa, g.item()));
  });
}

inline Var sum(Var a, int axis, bool keepdim = false) {
  Tape& t = *a.tape;
  const Tensor& x = t.value(a);
  if (x.rank() == 1) {
    if (axis != 0) throw ContractError("axis out of range for rank-1 tensor");
    Var s = sum(a);
    return keepdim ? t.push(Tensor({1}, {t.value(s).item()}), {s.idx},
                            [s](Tape& tp, const Tensor& g) {
                              tp.accumulate(s.idx, Tensor::scalar(g[0]));
                            })
                   : s;
  }
  if (x.rank() != 2 || (axis != 0 && axis != 1)) {
    throw ContractError("sum: unsupported axis " + std::to_string(axis) + " for shape " +
                        shape_str(x.shape()));
  }
  const std::size_t r = x.rows(), c = x.cols();
  Shape out_shape;
  if (axis == 0) {
    out_shape = keepdim ? Shape{1, c} : Shape{c};
  } else {
    out_shape = keepdim ? Shape{r, 1} : Shape{r};
  }
  Tensor out = Tensor::zeros(out_shape);
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out[axis == 0 ? j : i] += x(i, j);
  }
  const Shape sa = x.shape();
  return t.push(std::move(out), {a.idx}, [a, sa, axis](Tape& tp, const Tensor& g) {
    const std::size_t r = sa[0], c = sa[1];
    Tensor gx = Tensor::zeros(sa);
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < c; ++j) gx(i, j) = g[axis == 0 ? j : i];
    }
    tp.accumulate(a.idx, gx);
  });
}

inline Var mean(Var a) {
  const double n = static_cast<double>(a.tape->value(a).size());
  return div(sum(a), n);
}

inline Var mean(Var a, int axis, bool keepdim = false) {
  const Tensor& x = a.tape->value(a);
  const double n = static_cast<double>(x.rank() == 1 ? x.size() : (axis == 0 ? x.rows() : x.cols()));
  return div(sum(a, axis, keepdim), n);
}

// Population variance (divide by N) along an axis.
inline Var variance(Var a, int axis, bool keepdim = false) {
  Var m = mean(a, axis, true);
  Var d = sub(a, m);
  return mean(mul(d, d), axis, keepdim);
}

inline Var variance(Var a) {
  Var m = mean(a);
  Var d = sub(a, m);
  return mean(mul(d, d));
}

// ---------------------------------------------------------------------------
// Row-structured ops.
// ---------------------------------------------------------------------------

// Numerically stable softmax over the last axis of a rank-2 tensor.
inline Var softmax_lastaxis(Var a) {
  Tape& t = *a.tape;
  const Tensor& x = t.value(a);
  const std::size_t r = x.rows(), c = x.cols();
  Tensor out = Tensor::zeros({r, c});
  for (std::size_t i = 0; i < r; ++i) {
    double mx = x(i, 0);
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, x(i, j));
    double denom = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      out(i, j) = std::exp(x(i, j) - mx);
      denom += out(i, j);
    }
    for (std::size_t j = 0; j < c; ++j) out(i, j) /= denom;
  }
  Tensor saved = out;
  return t.push(std::move(out), {a.idx}, [a, saved = std::move(saved)](Tape& tp, const Tensor& g) {
    const std::size_t r = saved.rows(), c = saved.cols();
    Tensor gx = Tensor::zeros({r, c});
    for (std::size_t i = 0; i < r; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += g(i, j) * saved(i, j);
      for (std::size_t j = 0; j < c; ++j) gx(i, j) = saved(i, j) * (g(i, j) - dot);
    }
    tp.accumulate(a.idx, gx);
  });
}

// out[i, :] = x[rows[i], :]
inline Var gather_rows(Var a, std::vector<std::size_t> rows) {
  Tape& t = *a.tape;
  const Tensor& x = t.value(a);
  const std::size_t c = x.cols();
  Tensor out = Tensor::zeros({rows.size(), c});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= x.rows()) throw ContractError("gather_rows index out of range");
    for (std::size_t j = 0; j < c; ++j) out(i, j) = x(rows[i], j);
  }
  const Shape sa = x.shape();
  return t.push(std::move(out), {a.idx},
                [a, sa, rows = std::move(rows)](Tape& tp, const Tensor& g) {
                  Tensor gx = Tensor::zeros(sa);
                  for (std::size_t i = 0; i < rows.size(); ++i) {
                    for (std::size_t j = 0; j < sa[1]; ++j) gx(rows[i], j) += g(i, j);
                  }
                  tp.accumulate(a.idx, gx);
                });
}

// out[i] = x[i, cols[i]]
inline Var take_per_row(Var a, std::vector<std::size_t> cols) {
  Tape& t = *a.tape;
  const Tensor& x = t.value(a);
  if (cols.size() != x.rows()) throw ContractError("take_per_row needs one column per row");
  Tensor out = Tensor::zeros({cols.size()});
  for (std::size_t i = 0; i < cols.size(); ++i) {
    if (cols[i] >= x.cols()) throw ContractError("take_per_row column out of range");
    out[i] = x(i, cols[i]);
  }
  const Shape sa = x.shape();
  return t.push(std::move(out), {a.idx},
                [a, sa, cols = std::move(cols)](Tape& tp, const Tensor& g) {
                  Tensor gx = Tensor::zeros(sa);
                  for (std::size_t i = 0; i < cols.size(); ++i) gx(i, cols[i]) += g[i];
                  tp.accumulate(a.idx, gx);
                });
}

// ---------------------------------------------------------------------------
// Composites.
// ---------------------------------------------------------------------------

// L2 norm of each row: [B, d] -> [B] (or [B, 1] with keepdim).
inline Var l2norm_lastaxis(Var a, bool keepdim = false) {
  return sqrt(sum(mul(a, a), 1, keepdim));
}

// Pairwise squared Euclidean distance matrix: [Q, d] x [G, d] -> [Q, G].
inline Var pairwise_sqdist(Var a, Var b) {
  Var a2 = sum(mul(a, a), 1, true);                    // [Q, 1]
  Var b2 = transpose(sum(mul(b, b), 1, true));         // [1, G]
  Var cross = mul(matmul(a, transpose(b)), -2.0);      // [Q, G]
  return add(add(cross, a2), b2);
}

// ---------------------------------------------------------------------------
// Gradient checking.
// ---------------------------------------------------------------------------

using TapedFn = std::function<Var(Tape&, const std::vector<Var>&)>;

// Max over all parameter components of
//   |analytic - central_difference| / max(1, |central_difference|).
inline double finite_diff_check(const TapedFn& fn, std::vector<Tensor> params, double h) {
  if (h <= 0.0) throw ContractError("finite_diff_check requires h > 0");
  const auto eval = [&](const std::vector<Tensor>& p) {
    Tape t;
    std::vector<Var> vars;
    vars.reserve(p.size());
    for (const Tensor& q : p) vars.push_back(t.leaf(q));
    const double v = t.value(fn(t, vars)).item();
    if (!std::isfinite(v)) throw MathDomainError("finite_diff_check: non-finite function value");
    return v;
  };

  // Analytic gradients.
  Tape t;
  std::vector<Var> vars;
  vars.reserve(params.size());
  for (const Tensor& q : params) vars.push_back(t.leaf(q));
  Var out = fn(t, vars);
  t.backward(out);
  std::vector<Tensor> analytic;
  analytic.reserve(vars.size());
  for (const Var v : vars) analytic.push_back(t.grad(v));

  double worst = 0.0;
  for (std::size_t p = 0; p < params.size(); ++p) {
    for (std::size_t i = 0; i < params[p].size(); ++i) {
      const double orig = params[p][i];
      params[p][i] = orig + h;
      const double fp = eval(params);
      params[p][i] = orig - h;
      const double fm = eval(params);
      params[p][i] = orig;
      const double cdiff = (fp - fm) / (2.0 * h);
      const double err = std::abs(analytic[p][i] - cdiff) / std::max(1.0, std::abs(cdiff));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace aida
