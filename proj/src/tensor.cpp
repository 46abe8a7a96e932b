#include "tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <utility>

namespace stpt {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

namespace {

using detail::TensorNode;

void check_dims_positive(const Shape& shape) {
  for (std::size_t d : shape)
    if (d == 0)
      throw ShapeError("tensor shape has zero-length dimension " +
                       shape_str(shape));
}

void check_finite(const char* op, const std::vector<double>& data) {
  for (double v : data)
    if (!std::isfinite(v))
      throw std::domain_error(std::string("op '") + op +
                              "' produced non-finite values");
}

[[noreturn]] void shape_fail(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) +
                   " and " + shape_str(b));
}

std::size_t norm_axis(const char* op, int axis, std::size_t rank) {
  const int r = static_cast<int>(rank);
  const int ax = axis < 0 ? axis + r : axis;
  if (ax < 0 || ax >= r)
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) +
                     " out of range for rank " + std::to_string(rank));
  return static_cast<std::size_t>(ax);
}

Shape broadcast_shape(const char* op, const Shape& a, const Shape& b) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const std::size_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1) shape_fail(op, a, b);
    out[i] = std::max(da, db);
  }
  return out;
}

// Element strides for reading shape `s` as if broadcast to `out`
// (trailing-aligned); 0 on broadcast axes.
std::vector<std::size_t> bcast_strides(const Shape& s, const Shape& out) {
  std::vector<std::size_t> st(out.size(), 0);
  std::vector<std::size_t> nat(s.size());
  std::size_t stride = 1;
  for (std::size_t i = s.size(); i-- > 0;) {
    nat[i] = stride;
    stride *= s[i];
  }
  const std::size_t off = out.size() - s.size();
  for (std::size_t i = 0; i < s.size(); ++i)
    st[off + i] = s[i] == 1 ? 0 : nat[i];
  return st;
}

// Visits every linear index of `out` together with the mapped offsets into
// two broadcast operands. visit(lin, oa, ob).
template <class F>
void broadcast_walk(const Shape& out, const std::vector<std::size_t>& sa,
                    const std::vector<std::size_t>& sb, F&& visit) {
  const std::size_t n = numel(out);
  const std::size_t r = out.size();
  if (r == 0) {
    visit(0, 0, 0);
    return;
  }
  std::vector<std::size_t> idx(r, 0);
  std::size_t oa = 0, ob = 0;
  for (std::size_t lin = 0; lin < n; ++lin) {
    visit(lin, oa, ob);
    for (std::size_t d = r; d-- > 0;) {
      ++idx[d];
      oa += sa[d];
      ob += sb[d];
      if (idx[d] < out[d]) break;
      idx[d] = 0;
      oa -= sa[d] * out[d];
      ob -= sb[d] * out[d];
    }
  }
}

bool recording(std::initializer_list<const Tensor*> inputs) {
  if (!Tape::active()) return false;
  for (const Tensor* t : inputs)
    if (t->requires_grad()) return true;
  return false;
}

// c[m,n] += a[m,k] * b[k,n]
void gemm_nn_acc(const double* a, const double* b, double* c, std::size_t m,
                 std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ar = a + i * k;
    double* cr = c + i * n;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double av = ar[kk];
      const double* br = b + kk * n;
      for (std::size_t j = 0; j < n; ++j) cr[j] += av * br[j];
    }
  }
}

// c[m,n] += a[m,k] * b[n,k]^T
void gemm_nt_acc(const double* a, const double* b, double* c, std::size_t m,
                 std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ar = a + i * k;
    double* cr = c + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const double* br = b + j * k;
      double s = 0.0;
      for (std::size_t kk = 0; kk < k; ++kk) s += ar[kk] * br[kk];
      cr[j] += s;
    }
  }
}

// c[m,n] += a[k,m]^T * b[k,n]
void gemm_tn_acc(const double* a, const double* b, double* c, std::size_t m,
                 std::size_t k, std::size_t n) {
  for (std::size_t kk = 0; kk < k; ++kk) {
    const double* ar = a + kk * m;
    const double* br = b + kk * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double av = ar[i];
      double* cr = c + i * n;
      for (std::size_t j = 0; j < n; ++j) cr[j] += av * br[j];
    }
  }
}

thread_local Tape* g_active_tape = nullptr;

}  // namespace

// --- Tensor -----------------------------------------------------------------

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad) {
  check_dims_positive(shape);
  if (numel(shape) != data.size())
    throw ShapeError("tensor shape " + shape_str(shape) + " expects " +
                     std::to_string(numel(shape)) + " values, got " +
                     std::to_string(data.size()));
  check_finite("tensor", data);
  node_ = std::make_shared<TensorNode>();
  node_->shape = std::move(shape);
  node_->data = std::move(data);
  node_->requires_grad = requires_grad;
}

namespace detail {

Tensor adopt_node(std::shared_ptr<TensorNode> node) {
  Tensor t;
  t.node_ = std::move(node);
  return t;
}

}  // namespace detail

namespace {

// Op results skip the constructor's re-validation; ops check their output.
Tensor wrap_result(Shape shape, std::vector<double> data, bool requires_grad) {
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->requires_grad = requires_grad;
  return detail::adopt_node(std::move(node));
}

}  // namespace

Tensor Tensor::zeros(Shape shape) {
  const std::size_t n = numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor Tensor::full(Shape shape, double value) {
  const std::size_t n = numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value) { return Tensor({}, {value}); }

std::size_t Tensor::dim(int axis) const {
  return node_->shape[norm_axis("dim", axis, node_->shape.size())];
}

double Tensor::item() const {
  if (size() != 1)
    throw ShapeError("item: tensor has " + std::to_string(size()) +
                     " elements, expected 1");
  return node_->data[0];
}

// --- Tape -------------------------------------------------------------------

Tape* Tape::active() { return g_active_tape; }

void Tape::record(std::string op, std::function<void()> backward) {
  records_.push_back({std::move(op), std::move(backward)});
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1)
    throw std::invalid_argument("backward: loss must be a scalar tensor");
  if (records_.empty())
    throw std::invalid_argument("backward: tape is empty");
  loss.node()->ensure_grad();
  loss.node()->grad[0] = 1.0;
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) it->backward();
}

TapeScope::TapeScope(Tape& tape) : prev_(g_active_tape) {
  g_active_tape = &tape;
}

TapeScope::~TapeScope() { g_active_tape = prev_; }

// --- Binary elementwise -----------------------------------------------------

namespace {

// True when `s` is a trailing suffix of `out`, so the operand repeats as a
// contiguous block. Covers every bias and positional-embedding broadcast.
bool is_suffix_shape(const Shape& s, const Shape& out) {
  if (s.size() > out.size()) return false;
  const std::size_t off = out.size() - s.size();
  for (std::size_t i = 0; i < s.size(); ++i)
    if (s[i] != out[off + i]) return false;
  return true;
}

// fa/fb give the local partials w.r.t each operand as functions of (a, b).
template <class F, class Fa, class Fb>
Tensor binary_op(const char* name, const Tensor& a, const Tensor& b, F f,
                 Fa fa, Fb fb) {
  const Shape out_shape = broadcast_shape(name, a.shape(), b.shape());
  const auto sa = bcast_strides(a.shape(), out_shape);
  const auto sb = bcast_strides(b.shape(), out_shape);
  std::vector<double> out(numel(out_shape));
  const double* ad = a.values().data();
  const double* bd = b.values().data();

  const bool same = a.shape() == out_shape && b.shape() == out_shape;
  const bool suffix_b =
      !same && a.shape() == out_shape && is_suffix_shape(b.shape(), out_shape);
  if (same) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(ad[i], bd[i]);
  } else if (suffix_b) {
    const std::size_t block = b.size();
    for (std::size_t base = 0; base < out.size(); base += block)
      for (std::size_t i = 0; i < block; ++i)
        out[base + i] = f(ad[base + i], bd[i]);
  } else {
    broadcast_walk(out_shape, sa, sb,
                   [&](std::size_t lin, std::size_t oa, std::size_t ob) {
                     out[lin] = f(ad[oa], bd[ob]);
                   });
  }
  check_finite(name, out);

  const bool rec = recording({&a, &b});
  Tensor result = wrap_result(out_shape, std::move(out), rec);
  if (rec) {
    auto an = a.node();
    auto bn = b.node();
    auto on = result.node();
    Shape oshape = out_shape;
    Tape::active()->record(name, [an, bn, on, oshape, sa, sb, fa, fb, same,
                                  suffix_b]() {
      if (on->grad.empty()) return;
      const double* go = on->grad.data();
      const double* ad = an->data.data();
      const double* bd = bn->data.data();
      const bool need_a = an->requires_grad;
      const bool need_b = bn->requires_grad;
      if (need_a) an->ensure_grad();
      if (need_b) bn->ensure_grad();
      double* ga = need_a ? an->grad.data() : nullptr;
      double* gb = need_b ? bn->grad.data() : nullptr;
      const std::size_t n = on->data.size();
      if (same) {
        for (std::size_t i = 0; i < n; ++i) {
          if (need_a) ga[i] += go[i] * fa(ad[i], bd[i]);
          if (need_b) gb[i] += go[i] * fb(ad[i], bd[i]);
        }
      } else if (suffix_b) {
        const std::size_t block = bn->data.size();
        for (std::size_t base = 0; base < n; base += block)
          for (std::size_t i = 0; i < block; ++i) {
            const double g = go[base + i];
            if (need_a) ga[base + i] += g * fa(ad[base + i], bd[i]);
            if (need_b) gb[i] += g * fb(ad[base + i], bd[i]);
          }
      } else {
        broadcast_walk(oshape, sa, sb,
                       [&](std::size_t lin, std::size_t oa, std::size_t ob) {
                         const double g = go[lin];
                         if (need_a) ga[oa] += g * fa(ad[oa], bd[ob]);
                         if (need_b) gb[ob] += g * fb(ad[oa], bd[ob]);
                       });
      }
    });
  }
  return result;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double, double y) { return y; }, [](double x, double) { return x; });
}

// --- Unary elementwise ------------------------------------------------------

namespace {

// dfn(x, y) is dy/dx given input x and output y.
template <class F, class D>
Tensor unary_op(const char* name, const Tensor& x, F f, D dfn) {
  std::vector<double> out(x.size());
  const double* xd = x.values().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xd[i]);
  check_finite(name, out);

  const bool rec = recording({&x});
  Tensor result = wrap_result(x.shape(), std::move(out), rec);
  if (rec) {
    auto xn = x.node();
    auto on = result.node();
    Tape::active()->record(name, [xn, on, dfn]() {
      if (on->grad.empty() || !xn->requires_grad) return;
      xn->ensure_grad();
      const double* go = on->grad.data();
      const double* xd = xn->data.data();
      const double* yd = on->data.data();
      double* gx = xn->grad.data();
      for (std::size_t i = 0; i < on->data.size(); ++i)
        gx[i] += go[i] * dfn(xd[i], yd[i]);
    });
  }
  return result;
}

}  // namespace

Tensor scale(const Tensor& x, double c) {
  return unary_op(
      "scale", x, [c](double v) { return v * c; },
      [c](double, double) { return c; });
}

Tensor relu(const Tensor& x) {
  return unary_op(
      "relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
  return unary_op(
      "sigmoid", x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor sqrt_elem(const Tensor& x) {
  return unary_op(
      "sqrt", x, [](double v) { return std::sqrt(v); },
      [](double, double y) { return 0.5 / y; });
}

Tensor abs_elem(const Tensor& x) {
  return unary_op(
      "abs", x, [](double v) { return std::fabs(v); },
      [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

// --- Reductions ---------------------------------------------------------

namespace {

Tensor reduce_all(const char* name, const Tensor& x, bool mean) {
  const double inv = mean ? 1.0 / static_cast<double>(x.size()) : 1.0;
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  acc *= inv;
  std::vector<double> out{acc};
  check_finite(name, out);

  const bool rec = recording({&x});
  Tensor result = wrap_result({}, std::move(out), rec);
  if (rec) {
    auto xn = x.node();
    auto on = result.node();
    Tape::active()->record(name, [xn, on, inv]() {
      if (on->grad.empty() || !xn->requires_grad) return;
      xn->ensure_grad();
      const double g = on->grad[0] * inv;
      for (double& v : xn->grad) v += g;
    });
  }
  return result;
}

}  // namespace

Tensor mean_all(const Tensor& x) { return reduce_all("mean_all", x, true); }
Tensor sum_all(const Tensor& x) { return reduce_all("sum_all", x, false); }

// --- Softmax / layer norm -----------------------------------------------

Tensor softmax_lastaxis(const Tensor& x) {
  if (x.rank() == 0)
    throw ShapeError("softmax_lastaxis: scalar input has no last axis");
  const std::size_t d = x.dim(-1);
  const std::size_t rows = x.size() / d;
  std::vector<double> out(x.size());
  const double* xd = x.values().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xd + r * d;
    double* yr = out.data() + r * d;
    double mx = xr[0];
    for (std::size_t i = 1; i < d; ++i) mx = std::max(mx, xr[i]);
    double sum = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      yr[i] = std::exp(xr[i] - mx);
      sum += yr[i];
    }
    for (std::size_t i = 0; i < d; ++i) yr[i] /= sum;
  }
  check_finite("softmax_lastaxis", out);

  const bool rec = recording({&x});
  Tensor result = wrap_result(x.shape(), std::move(out), rec);
  if (rec) {
    auto xn = x.node();
    auto on = result.node();
    Tape::active()->record("softmax_lastaxis", [xn, on, d]() {
      if (on->grad.empty() || !xn->requires_grad) return;
      xn->ensure_grad();
      const double* go = on->grad.data();
      const double* yd = on->data.data();
      double* gx = xn->grad.data();
      const std::size_t rows = on->data.size() / d;
      for (std::size_t r = 0; r < rows; ++r) {
        const double* yr = yd + r * d;
        const double* gr = go + r * d;
        double dot = 0.0;
        for (std::size_t i = 0; i < d; ++i) dot += gr[i] * yr[i];
        double* gxr = gx + r * d;
        for (std::size_t i = 0; i < d; ++i) gxr[i] += yr[i] * (gr[i] - dot);
      }
    });
  }
  return result;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias) {
  constexpr double kEps = 1e-5;
  if (x.rank() == 0)
    throw ShapeError("layer_norm: scalar input has no last axis");
  const std::size_t d = x.dim(-1);
  if (gain.shape() != Shape{d}) shape_fail("layer_norm", x.shape(), gain.shape());
  if (bias.shape() != Shape{d}) shape_fail("layer_norm", x.shape(), bias.shape());
  const std::size_t slices = x.size() / d;

  std::vector<double> out(x.size());
  std::vector<double> xhat(x.size());
  std::vector<double> inv_std(slices);
  const double* xd = x.values().data();
  const double* gd = gain.values().data();
  const double* bd = bias.values().data();
  for (std::size_t s = 0; s < slices; ++s) {
    const double* xs = xd + s * d;
    double mean = 0.0;
    for (std::size_t i = 0; i < d; ++i) mean += xs[i];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      const double c = xs[i] - mean;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + kEps);
    inv_std[s] = inv;
    double* hs = xhat.data() + s * d;
    double* ys = out.data() + s * d;
    for (std::size_t i = 0; i < d; ++i) {
      hs[i] = (xs[i] - mean) * inv;
      ys[i] = hs[i] * gd[i] + bd[i];
    }
  }
  check_finite("layer_norm", out);

  const bool rec = recording({&x, &gain, &bias});
  Tensor result = wrap_result(x.shape(), std::move(out), rec);
  if (rec) {
    auto xn = x.node();
    auto gn = gain.node();
    auto bn = bias.node();
    auto on = result.node();
    auto xh = std::make_shared<std::vector<double>>(std::move(xhat));
    auto iv = std::make_shared<std::vector<double>>(std::move(inv_std));
    Tape::active()->record("layer_norm", [xn, gn, bn, on, xh, iv, d]() {
      if (on->grad.empty()) return;
      const double* go = on->grad.data();
      const double* gd = gn->data.data();
      const double* hs = xh->data();
      const std::size_t slices = on->data.size() / d;
      if (xn->requires_grad) {
        xn->ensure_grad();
        double* gx = xn->grad.data();
        for (std::size_t s = 0; s < slices; ++s) {
          const double* gyr = go + s * d;
          const double* hr = hs + s * d;
          double m1 = 0.0, m2 = 0.0;
          for (std::size_t i = 0; i < d; ++i) {
            const double t = gd[i] * gyr[i];
            m1 += t;
            m2 += t * hr[i];
          }
          m1 /= static_cast<double>(d);
          m2 /= static_cast<double>(d);
          const double inv = (*iv)[s];
          double* gxr = gx + s * d;
          for (std::size_t i = 0; i < d; ++i)
            gxr[i] += inv * (gd[i] * gyr[i] - m1 - hr[i] * m2);
        }
      }
      if (gn->requires_grad) {
        gn->ensure_grad();
        double* gg = gn->grad.data();
        for (std::size_t s = 0; s < slices; ++s)
          for (std::size_t i = 0; i < d; ++i)
            gg[i] += go[s * d + i] * hs[s * d + i];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        double* gb = bn->grad.data();
        for (std::size_t s = 0; s < slices; ++s)
          for (std::size_t i = 0; i < d; ++i) gb[i] += go[s * d + i];
      }
    });
  }
  return result;
}

// --- Matmul -------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2)
    throw ShapeError("matmul: operands must have rank >= 2, got " +
                     shape_str(a.shape()) + " and " + shape_str(b.shape()));
  const std::size_t m = a.dim(-2), k = a.dim(-1);
  const std::size_t k2 = b.dim(-2), n = b.dim(-1);
  if (k != k2) shape_fail("matmul", a.shape(), b.shape());

  const Shape abatch(a.shape().begin(), a.shape().end() - 2);
  const Shape bbatch(b.shape().begin(), b.shape().end() - 2);
  const Shape batch = broadcast_shape("matmul", abatch, bbatch);
  Shape out_shape = batch;
  out_shape.push_back(m);
  out_shape.push_back(n);

  const std::size_t nbatch = numel(batch);
  std::vector<double> out(numel(out_shape), 0.0);
  const double* ad = a.values().data();
  const double* bd = b.values().data();

  // Rank-2 rhs broadcast over a contiguous lhs collapses to one product;
  // equal batch dims walk both sides in lockstep without the odometer.
  const bool fused = bbatch.empty();
  const bool lockstep = !fused && abatch == bbatch;
  const auto sa = bcast_strides(abatch, batch);
  const auto sb = bcast_strides(bbatch, batch);
  if (fused) {
    gemm_nn_acc(ad, bd, out.data(), nbatch * m, k, n);
  } else if (lockstep) {
    for (std::size_t cell = 0; cell < nbatch; ++cell)
      gemm_nn_acc(ad + cell * m * k, bd + cell * k * n,
                  out.data() + cell * m * n, m, k, n);
  } else {
    broadcast_walk(batch, sa, sb,
                   [&](std::size_t lin, std::size_t ca, std::size_t cb) {
                     gemm_nn_acc(ad + ca * m * k, bd + cb * k * n,
                                 out.data() + lin * m * n, m, k, n);
                   });
  }
  check_finite("matmul", out);

  const bool rec = recording({&a, &b});
  Tensor result = wrap_result(std::move(out_shape), std::move(out), rec);
  if (rec) {
    auto an = a.node();
    auto bn = b.node();
    auto on = result.node();
    Tape::active()->record("matmul", [an, bn, on, batch, sa, sb, fused,
                                      lockstep, m, k, n, nbatch]() {
      if (on->grad.empty()) return;
      const double* go = on->grad.data();
      const double* ad = an->data.data();
      const double* bd = bn->data.data();
      const bool need_a = an->requires_grad;
      const bool need_b = bn->requires_grad;
      if (need_a) an->ensure_grad();
      if (need_b) bn->ensure_grad();
      if (fused) {
        if (need_a) gemm_nt_acc(go, bd, an->grad.data(), nbatch * m, n, k);
        if (need_b) gemm_tn_acc(ad, go, bn->grad.data(), k, nbatch * m, n);
        return;
      }
      if (lockstep) {
        for (std::size_t cell = 0; cell < nbatch; ++cell) {
          const double* gc = go + cell * m * n;
          if (need_a)
            gemm_nt_acc(gc, bd + cell * k * n, an->grad.data() + cell * m * k,
                        m, n, k);
          if (need_b)
            gemm_tn_acc(ad + cell * m * k, gc, bn->grad.data() + cell * k * n,
                        k, m, n);
        }
        return;
      }
      broadcast_walk(batch, sa, sb,
                     [&](std::size_t lin, std::size_t ca, std::size_t cb) {
                       const double* gc = go + lin * m * n;
                       if (need_a)
                         gemm_nt_acc(gc, bd + cb * k * n,
                                     an->grad.data() + ca * m * k, m, n, k);
                       if (need_b)
                         gemm_tn_acc(ad + ca * m * k, gc,
                                     bn->grad.data() + cb * k * n, k, m, n);
                     });
    });
  }
  return result;
}

// --- Structure ops --------------------------------------------------------

Tensor concat_axis(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty())
    throw std::invalid_argument("concat_axis: no parts given");
  const Shape& first = parts[0].shape();
  const std::size_t ax = norm_axis("concat_axis", axis, first.size());
  std::size_t axis_total = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != first.size()) shape_fail("concat_axis", first, p.shape());
    for (std::size_t i = 0; i < first.size(); ++i)
      if (i != ax && p.shape()[i] != first[i])
        shape_fail("concat_axis", first, p.shape());
    axis_total += p.shape()[ax];
  }
  Shape out_shape = first;
  out_shape[ax] = axis_total;

  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= out_shape[i];
  for (std::size_t i = ax + 1; i < out_shape.size(); ++i)
    inner *= out_shape[i];

  std::vector<double> out(numel(out_shape));
  std::size_t offset = 0;
  for (const Tensor& p : parts) {
    const std::size_t plen = p.shape()[ax];
    const double* pd = p.values().data();
    for (std::size_t o = 0; o < outer; ++o)
      std::memcpy(out.data() + (o * axis_total + offset) * inner,
                  pd + o * plen * inner, plen * inner * sizeof(double));
    offset += plen;
  }

  bool rec = false;
  if (Tape::active())
    for (const Tensor& p : parts)
      if (p.requires_grad()) rec = true;
  Tensor result = wrap_result(std::move(out_shape), std::move(out), rec);
  if (rec) {
    std::vector<std::shared_ptr<TensorNode>> nodes;
    std::vector<std::size_t> lens;
    for (const Tensor& p : parts) {
      nodes.push_back(p.node());
      lens.push_back(p.shape()[ax]);
    }
    auto on = result.node();
    Tape::active()->record(
        "concat_axis", [nodes, lens, on, outer, inner, axis_total]() {
          if (on->grad.empty()) return;
          const double* go = on->grad.data();
          std::size_t offset = 0;
          for (std::size_t pi = 0; pi < nodes.size(); ++pi) {
            const std::size_t plen = lens[pi];
            if (nodes[pi]->requires_grad) {
              nodes[pi]->ensure_grad();
              double* gp = nodes[pi]->grad.data();
              for (std::size_t o = 0; o < outer; ++o) {
                const double* src = go + (o * axis_total + offset) * inner;
                double* dst = gp + o * plen * inner;
                for (std::size_t i = 0; i < plen * inner; ++i) dst[i] += src[i];
              }
            }
            offset += plen;
          }
        });
  }
  return result;
}

Tensor slice_axis(const Tensor& x, int axis, std::size_t start,
                  std::size_t stop) {
  const std::size_t ax = norm_axis("slice_axis", axis, x.rank());
  const std::size_t len = x.shape()[ax];
  if (start >= stop || stop > len)
    throw ShapeError("slice_axis: range [" + std::to_string(start) + "," +
                     std::to_string(stop) + ") out of bounds for axis length " +
                     std::to_string(len));
  Shape out_shape = x.shape();
  out_shape[ax] = stop - start;

  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= x.shape()[i];
  for (std::size_t i = ax + 1; i < x.rank(); ++i) inner *= x.shape()[i];
  const std::size_t span = stop - start;

  std::vector<double> out(numel(out_shape));
  const double* xd = x.values().data();
  for (std::size_t o = 0; o < outer; ++o)
    std::memcpy(out.data() + o * span * inner,
                xd + (o * len + start) * inner, span * inner * sizeof(double));

  const bool rec = recording({&x});
  Tensor result = wrap_result(std::move(out_shape), std::move(out), rec);
  if (rec) {
    auto xn = x.node();
    auto on = result.node();
    Tape::active()->record("slice_axis",
                           [xn, on, outer, inner, len, start, span]() {
                             if (on->grad.empty() || !xn->requires_grad) return;
                             xn->ensure_grad();
                             const double* go = on->grad.data();
                             double* gx = xn->grad.data();
                             for (std::size_t o = 0; o < outer; ++o) {
                               const double* src = go + o * span * inner;
                               double* dst = gx + (o * len + start) * inner;
                               for (std::size_t i = 0; i < span * inner; ++i)
                                 dst[i] += src[i];
                             }
                           });
  }
  return result;
}

Tensor transpose_last2(const Tensor& x) {
  if (x.rank() < 2)
    throw ShapeError("transpose_last2: rank must be >= 2, got " +
                     shape_str(x.shape()));
  const std::size_t r = x.dim(-2), c = x.dim(-1);
  Shape out_shape = x.shape();
  std::swap(out_shape[out_shape.size() - 2], out_shape[out_shape.size() - 1]);
  const std::size_t mats = x.size() / (r * c);

  std::vector<double> out(x.size());
  const double* xd = x.values().data();
  for (std::size_t b = 0; b < mats; ++b) {
    const double* xm = xd + b * r * c;
    double* ym = out.data() + b * r * c;
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) ym[j * r + i] = xm[i * c + j];
  }

  const bool rec = recording({&x});
  Tensor result = wrap_result(std::move(out_shape), std::move(out), rec);
  if (rec) {
    auto xn = x.node();
    auto on = result.node();
    Tape::active()->record("transpose_last2", [xn, on, r, c, mats]() {
      if (on->grad.empty() || !xn->requires_grad) return;
      xn->ensure_grad();
      const double* go = on->grad.data();
      double* gx = xn->grad.data();
      for (std::size_t b = 0; b < mats; ++b) {
        const double* gm = go + b * r * c;
        double* xm = gx + b * r * c;
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) xm[i * c + j] += gm[j * r + i];
      }
    });
  }
  return result;
}

Tensor reshape(const Tensor& x, Shape shape) {
  check_dims_positive(shape);
  if (numel(shape) != x.size())
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                     shape_str(shape));
  std::vector<double> out = x.values();

  const bool rec = recording({&x});
  Tensor result = wrap_result(std::move(shape), std::move(out), rec);
  if (rec) {
    auto xn = x.node();
    auto on = result.node();
    Tape::active()->record("reshape", [xn, on]() {
      if (on->grad.empty() || !xn->requires_grad) return;
      xn->ensure_grad();
      for (std::size_t i = 0; i < on->grad.size(); ++i)
        xn->grad[i] += on->grad[i];
    });
  }
  return result;
}

Tensor tile_leading(const Tensor& x, std::size_t n) {
  if (n == 0) throw ShapeError("tile_leading: repeat count must be positive");
  Shape out_shape;
  out_shape.push_back(n);
  for (std::size_t d : x.shape()) out_shape.push_back(d);
  const std::size_t block = x.size();
  std::vector<double> out(n * block);
  for (std::size_t i = 0; i < n; ++i)
    std::memcpy(out.data() + i * block, x.values().data(),
                block * sizeof(double));

  const bool rec = recording({&x});
  Tensor result = wrap_result(std::move(out_shape), std::move(out), rec);
  if (rec) {
    auto xn = x.node();
    auto on = result.node();
    Tape::active()->record("tile_leading", [xn, on, n, block]() {
      if (on->grad.empty() || !xn->requires_grad) return;
      xn->ensure_grad();
      const double* go = on->grad.data();
      double* gx = xn->grad.data();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < block; ++j) gx[j] += go[i * block + j];
    });
  }
  return result;
}

}  // namespace stpt
