#include "rescal/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <mutex>
#include <numeric>
#include <sstream>

#ifdef RESCAL_USE_OPENBLAS
#include <cblas.h>
extern "C" void openblas_set_num_threads(int);
#endif

namespace rescal::ad {

namespace {

// ---------------------------------------------------------------- gemm ----
// Row-major single-precision GEMM kernels, C = op(A)*op(B) + beta*C.
// BLAS runs pinned to one thread so training stays bit-reproducible.

void gemm_init_threads() {
#ifdef RESCAL_USE_OPENBLAS
  static std::once_flag once;
  std::call_once(once, [] { openblas_set_num_threads(1); });
#endif
}

void gemm_nn(int64_t m, int64_t n, int64_t k, const float* a, const float* b,
             float* c, float beta) {
  gemm_init_threads();
#ifdef RESCAL_USE_OPENBLAS
  cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, static_cast<int>(m),
              static_cast<int>(n), static_cast<int>(k), 1.0f, a,
              static_cast<int>(k), b, static_cast<int>(n), beta, c,
              static_cast<int>(n));
#else
  for (int64_t i = 0; i < m; ++i) {
    float* crow = c + i * n;
    if (beta == 0.0f) std::fill(crow, crow + n, 0.0f);
    for (int64_t p = 0; p < k; ++p) {
      const float av = a[i * k + p];
      const float* brow = b + p * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
#endif
}

void gemm_nt(int64_t m, int64_t n, int64_t k, const float* a, const float* b,
             float* c, float beta) {
  gemm_init_threads();
#ifdef RESCAL_USE_OPENBLAS
  cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasTrans, static_cast<int>(m),
              static_cast<int>(n), static_cast<int>(k), 1.0f, a,
              static_cast<int>(k), b, static_cast<int>(k), beta, c,
              static_cast<int>(n));
#else
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t j = 0; j < n; ++j) {
      float acc = 0.0f;
      const float* arow = a + i * k;
      const float* brow = b + j * k;
      for (int64_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      c[i * n + j] = acc + (beta == 0.0f ? 0.0f : c[i * n + j]);
    }
  }
#endif
}

void gemm_tn(int64_t m, int64_t n, int64_t k, const float* a, const float* b,
             float* c, float beta) {
  gemm_init_threads();
#ifdef RESCAL_USE_OPENBLAS
  cblas_sgemm(CblasRowMajor, CblasTrans, CblasNoTrans, static_cast<int>(m),
              static_cast<int>(n), static_cast<int>(k), 1.0f, a,
              static_cast<int>(m), b, static_cast<int>(n), beta, c,
              static_cast<int>(n));
#else
  if (beta == 0.0f) std::fill(c, c + m * n, 0.0f);
  for (int64_t p = 0; p < k; ++p) {
    const float* arow = a + p * m;
    const float* brow = b + p * n;
    for (int64_t i = 0; i < m; ++i) {
      const float av = arow[i];
      float* crow = c + i * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
#endif
}

int64_t numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

void check_shape_valid(const Shape& s, const char* who) {
  for (int64_t d : s) {
    if (d <= 0) {
      throw ShapeError(std::string(who) +
                       ": dimensions must be positive, got " + shape_str(s));
    }
  }
}

void check_finite(const std::vector<float>& v, const char* op) {
  for (float x : v) {
    if (!std::isfinite(x)) {
      throw NumericError(std::string(op) + ": non-finite value encountered");
    }
  }
}

}  // namespace

// ---------------------------------------------------------------- node ----

struct Tensor::Node {
  Shape shape;
  std::vector<float> values;
  std::vector<float> grad;  // empty until first accumulation
  bool requires_grad = false;
};

namespace {

using NodePtr = std::shared_ptr<Tensor::Node>;

struct TapeState {
  std::vector<std::function<void()>> entries;
  int no_grad_depth = 0;
  bool recording() const { return no_grad_depth == 0; }
};

TapeState& tape() {
  thread_local TapeState state;
  return state;
}

void ensure_grad(const NodePtr& n) {
  if (n->grad.empty()) n->grad.assign(n->values.size(), 0.0f);
}

}  // namespace

struct OpCtx {
  static const NodePtr& node_of(const Tensor& t) { return t.node_; }
  static Tensor wrap(NodePtr n) { return Tensor(std::move(n)); }
};

namespace {

const NodePtr& node_of(const Tensor& t) { return OpCtx::node_of(t); }

// Builds the output tensor: finite check plus grad-need resolution.
Tensor finish(const char* op, Shape shape, std::vector<float> values,
              std::initializer_list<const Tensor*> inputs) {
  auto n = std::make_shared<Tensor::Node>();
  n->shape = std::move(shape);
  n->values = std::move(values);
  check_finite(n->values, op);
  if (tape().recording()) {
    for (const Tensor* t : inputs) {
      if (t->defined() && t->requires_grad()) {
        n->requires_grad = true;
        break;
      }
    }
  }
  return OpCtx::wrap(std::move(n));
}

// Records fn on the tape if the op produced a grad-requiring output. fn is
// invoked with the output gradient during the reverse sweep.
template <typename F>
void record(const Tensor& out, F&& fn) {
  if (!out.requires_grad()) return;
  tape().entries.push_back(
      [fn = std::forward<F>(fn), on = node_of(out)]() {
        if (on->grad.empty()) return;  // branch not on the loss path
        fn(on->grad);
      });
}

}  // namespace

// -------------------------------------------------------------- tensor ----

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << ',';
    os << s[i];
  }
  os << ']';
  return os.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  check_shape_valid(shape, "zeros");
  auto n = std::make_shared<Node>();
  n->values.assign(static_cast<size_t>(numel(shape)), 0.0f);
  n->shape = std::move(shape);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::full(Shape shape, float value, bool requires_grad) {
  check_shape_valid(shape, "full");
  if (!std::isfinite(value)) throw NumericError("full: non-finite fill value");
  auto n = std::make_shared<Node>();
  n->values.assign(static_cast<size_t>(numel(shape)), value);
  n->shape = std::move(shape);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::from(Shape shape, std::vector<float> values, bool requires_grad) {
  check_shape_valid(shape, "from");
  if (numel(shape) != static_cast<int64_t>(values.size())) {
    throw ShapeError("from: shape " + shape_str(shape) + " wants " +
                     std::to_string(numel(shape)) + " values, got " +
                     std::to_string(values.size()));
  }
  check_finite(values, "from");
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->values = std::move(values);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::scalar(float value, bool requires_grad) {
  return from({1}, {value}, requires_grad);
}

const Shape& Tensor::shape() const {
  if (!node_) throw ContractError("tensor: undefined");
  return node_->shape;
}

int64_t Tensor::size() const {
  if (!node_) throw ContractError("tensor: undefined");
  return static_cast<int64_t>(node_->values.size());
}

std::span<const float> Tensor::values() const {
  if (!node_) throw ContractError("tensor: undefined");
  return node_->values;
}

std::span<float> Tensor::mutable_values() {
  if (!node_) throw ContractError("tensor: undefined");
  return node_->values;
}

float Tensor::item() const {
  if (!node_ || node_->values.size() != 1) {
    throw ContractError("item: tensor is not scalar-shaped");
  }
  return node_->values[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

std::span<const float> Tensor::grad() const {
  if (!node_ || node_->grad.empty()) {
    throw ContractError("grad: no gradient populated");
  }
  return node_->grad;
}

void Tensor::zero_grad() {
  if (node_) node_->grad.clear();
}

void Tensor::set_requires_grad(bool b) {
  if (!node_) throw ContractError("tensor: undefined");
  node_->requires_grad = b;
}

NoGradGuard::NoGradGuard() { tape().no_grad_depth++; }
NoGradGuard::~NoGradGuard() { tape().no_grad_depth--; }

size_t tape_size() { return tape().entries.size(); }

// ------------------------------------------------------------ backward ----

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw ContractError("backward: loss must be scalar-shaped");
  }
  auto& t = tape();
  if (t.entries.empty()) throw ContractError("backward: tape is empty");
  node_of(loss)->grad.assign(1, 1.0f);
  for (auto it = t.entries.rbegin(); it != t.entries.rend(); ++it) (*it)();
  t.entries.clear();
}

// ---------------------------------------------------------------- ops -----

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) +
                     " x " + shape_str(b.shape()));
  }
  const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<float> out(static_cast<size_t>(m * n));
  gemm_nn(m, n, k, a.values().data(), b.values().data(), out.data(), 0.0f);
  Tensor y = finish("matmul", {m, n}, std::move(out), {&a, &b});
  record(y, [an = node_of(a), bn = node_of(b), m, n, k](
                const std::vector<float>& g) {
    if (an->requires_grad) {
      ensure_grad(an);
      gemm_nt(m, k, n, g.data(), bn->values.data(), an->grad.data(), 1.0f);
    }
    if (bn->requires_grad) {
      ensure_grad(bn);
      gemm_tn(k, n, m, an->values.data(), g.data(), bn->grad.data(), 1.0f);
    }
  });
  return y;
}

namespace {

// Promotes rank-1 [T] and rank-2 [C,T] conv operands to rank 3.
Shape promote3(const Shape& s) {
  if (s.size() == 1) return {1, 1, s[0]};
  if (s.size() == 2) return {1, s[0], s[1]};
  return s;
}

// Gathers the causal receptive field: col[(i*kw+k), t] = x[i, t-(kw-1-k)*d].
void im2col(const float* x, int64_t cin, int64_t t_len, int64_t kw, int64_t dil,
            float* col) {
  for (int64_t i = 0; i < cin; ++i) {
    for (int64_t k = 0; k < kw; ++k) {
      const int64_t shift = (kw - 1 - k) * dil;
      float* dst = col + (i * kw + k) * t_len;
      const float* src = x + i * t_len;
      for (int64_t t = 0; t < t_len; ++t) {
        const int64_t s = t - shift;
        dst[t] = (s >= 0) ? src[s] : 0.0f;
      }
    }
  }
}

void col2im_accumulate(const float* col, int64_t cin, int64_t t_len, int64_t kw,
                       int64_t dil, float* dx) {
  for (int64_t i = 0; i < cin; ++i) {
    for (int64_t k = 0; k < kw; ++k) {
      const int64_t shift = (kw - 1 - k) * dil;
      const float* src = col + (i * kw + k) * t_len;
      float* dst = dx + i * t_len;
      for (int64_t t = 0; t < t_len; ++t) {
        const int64_t s = t - shift;
        if (s >= 0) dst[s] += src[t];
      }
    }
  }
}

}  // namespace

Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& bias,
              int dilation) {
  if (dilation < 1) throw ShapeError("conv1d: dilation must be >= 1");
  if (x.rank() < 1 || x.rank() > 3 || w.rank() < 1 || w.rank() > 3) {
    throw ShapeError("conv1d: input " + shape_str(x.shape()) + " and kernel " +
                     shape_str(w.shape()) + " must have rank 1..3");
  }
  const Shape xs = promote3(x.shape());
  const Shape ws = promote3(w.shape());
  const int64_t batch = xs[0], cin = xs[1], t_len = xs[2];
  const int64_t cout = ws[0], wcin = ws[1], kw = ws[2];
  if (cin != wcin) {
    throw ShapeError("conv1d: input channels of " + shape_str(x.shape()) +
                     " do not match kernel " + shape_str(w.shape()));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != cout)) {
    throw ShapeError("conv1d: bias " + shape_str(bias.shape()) +
                     " does not match kernel " + shape_str(w.shape()));
  }

  const float* xv = x.values().data();
  std::vector<float> col(static_cast<size_t>(cin * kw * t_len));
  std::vector<float> out(static_cast<size_t>(batch * cout * t_len));
  for (int64_t b = 0; b < batch; ++b) {
    im2col(xv + b * cin * t_len, cin, t_len, kw, dilation, col.data());
    gemm_nn(cout, t_len, cin * kw, w.values().data(), col.data(),
            out.data() + b * cout * t_len, 0.0f);
  }
  if (bias.defined()) {
    const float* bv = bias.values().data();
    for (int64_t b = 0; b < batch; ++b) {
      for (int64_t o = 0; o < cout; ++o) {
        float* row = out.data() + (b * cout + o) * t_len;
        for (int64_t t = 0; t < t_len; ++t) row[t] += bv[o];
      }
    }
  }

  // Output keeps the input's rank so scalar-series cases stay ergonomic.
  Shape out_shape;
  if (x.rank() == 3) {
    out_shape = {batch, cout, t_len};
  } else if (x.rank() == 2) {
    out_shape = {cout, t_len};
  } else {
    out_shape = cout == 1 ? Shape{t_len} : Shape{cout, t_len};
  }

  Tensor y = finish("conv1d", std::move(out_shape), std::move(out),
                    {&x, &w, &bias});
  record(y, [xn = node_of(x), wn = node_of(w),
             bn = bias.defined() ? node_of(bias) : nullptr, batch, cin, t_len,
             cout, kw, dilation](const std::vector<float>& g) {
    std::vector<float> col(static_cast<size_t>(cin * kw * t_len));
    std::vector<float> dcol(static_cast<size_t>(cin * kw * t_len));
    for (int64_t b = 0; b < batch; ++b) {
      const float* gb = g.data() + b * cout * t_len;
      if (wn->requires_grad) {
        ensure_grad(wn);
        im2col(xn->values.data() + b * cin * t_len, cin, t_len, kw, dilation,
               col.data());
        gemm_nt(cout, cin * kw, t_len, gb, col.data(), wn->grad.data(), 1.0f);
      }
      if (xn->requires_grad) {
        ensure_grad(xn);
        gemm_tn(cin * kw, t_len, cout, wn->values.data(), gb, dcol.data(),
                0.0f);
        col2im_accumulate(dcol.data(), cin, t_len, kw, dilation,
                          xn->grad.data() + b * cin * t_len);
      }
    }
    if (bn && bn->requires_grad) {
      ensure_grad(bn);
      for (int64_t b = 0; b < batch; ++b) {
        for (int64_t o = 0; o < cout; ++o) {
          double acc = 0.0;
          const float* row = g.data() + (b * cout + o) * t_len;
          for (int64_t t = 0; t < t_len; ++t) acc += row[t];
          bn->grad[static_cast<size_t>(o)] += static_cast<float>(acc);
        }
      }
    }
  });
  return y;
}

Tensor pointwise_conv(const Tensor& x, const Tensor& w, const Tensor& bias) {
  if (x.rank() != 3 || w.rank() != 2 || w.dim(1) != x.dim(1)) {
    throw ShapeError("pointwise_conv: input " + shape_str(x.shape()) +
                     " incompatible with kernel " + shape_str(w.shape()));
  }
  const int64_t batch = x.dim(0), cin = x.dim(1), t_len = x.dim(2);
  const int64_t cout = w.dim(0);
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != cout)) {
    throw ShapeError("pointwise_conv: bias " + shape_str(bias.shape()) +
                     " does not match kernel " + shape_str(w.shape()));
  }
  std::vector<float> out(static_cast<size_t>(batch * cout * t_len));
  for (int64_t b = 0; b < batch; ++b) {
    gemm_nn(cout, t_len, cin, w.values().data(),
            x.values().data() + b * cin * t_len, out.data() + b * cout * t_len,
            0.0f);
  }
  if (bias.defined()) {
    const float* bv = bias.values().data();
    for (int64_t b = 0; b < batch; ++b) {
      for (int64_t o = 0; o < cout; ++o) {
        float* row = out.data() + (b * cout + o) * t_len;
        for (int64_t t = 0; t < t_len; ++t) row[t] += bv[o];
      }
    }
  }
  Tensor y = finish("pointwise_conv", {batch, cout, t_len}, std::move(out),
                    {&x, &w, &bias});
  record(y, [xn = node_of(x), wn = node_of(w),
             bn = bias.defined() ? node_of(bias) : nullptr, batch, cin, t_len,
             cout](const std::vector<float>& g) {
    for (int64_t b = 0; b < batch; ++b) {
      const float* gb = g.data() + b * cout * t_len;
      if (wn->requires_grad) {
        ensure_grad(wn);
        gemm_nt(cout, cin, t_len, gb, xn->values.data() + b * cin * t_len,
                wn->grad.data(), 1.0f);
      }
      if (xn->requires_grad) {
        ensure_grad(xn);
        gemm_tn(cin, t_len, cout, wn->values.data(), gb,
                xn->grad.data() + b * cin * t_len, 1.0f);
      }
    }
    if (bn && bn->requires_grad) {
      ensure_grad(bn);
      for (int64_t b = 0; b < batch; ++b) {
        for (int64_t o = 0; o < cout; ++o) {
          double acc = 0.0;
          const float* row = g.data() + (b * cout + o) * t_len;
          for (int64_t t = 0; t < t_len; ++t) acc += row[t];
          bn->grad[static_cast<size_t>(o)] += static_cast<float>(acc);
        }
      }
    }
  });
  return y;
}

// ------------------------------------------------------- broadcast ops ----

namespace {

struct BroadcastPlan {
  Shape out_shape;
  std::vector<int64_t> stride_a;  // per output axis, 0 where broadcast
  std::vector<int64_t> stride_b;
  int64_t total = 0;
  bool same_shape = false;
};

BroadcastPlan make_broadcast(const char* op, const Shape& a, const Shape& b) {
  BroadcastPlan p;
  const int ra = static_cast<int>(a.size()), rb = static_cast<int>(b.size());
  const int r = std::max(ra, rb);
  p.out_shape.resize(static_cast<size_t>(r));
  for (int i = 0; i < r; ++i) {
    const int64_t da = (i >= r - ra) ? a[static_cast<size_t>(i - (r - ra))] : 1;
    const int64_t db = (i >= r - rb) ? b[static_cast<size_t>(i - (r - rb))] : 1;
    if (da != db && da != 1 && db != 1) {
      throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(a) +
                       " with " + shape_str(b));
    }
    p.out_shape[static_cast<size_t>(i)] = std::max(da, db);
  }
  p.total = numel(p.out_shape);
  p.same_shape = (a == b);
  // Row-major strides with 0 on broadcast axes.
  auto strides_for = [&](const Shape& s) {
    std::vector<int64_t> st(static_cast<size_t>(r), 0);
    int64_t acc = 1;
    const int rs = static_cast<int>(s.size());
    for (int i = rs - 1; i >= 0; --i) {
      const int out_axis = i + (r - rs);
      st[static_cast<size_t>(out_axis)] = (s[static_cast<size_t>(i)] == 1 &&
                                           p.out_shape[static_cast<size_t>(
                                               out_axis)] != 1)
                                              ? 0
                                              : acc;
      acc *= s[static_cast<size_t>(i)];
    }
    return st;
  };
  p.stride_a = strides_for(a);
  p.stride_b = strides_for(b);
  return p;
}

// Walks the output space, feeding (out_index, a_offset, b_offset).
template <typename F>
void broadcast_walk(const BroadcastPlan& p, F&& f) {
  const int r = static_cast<int>(p.out_shape.size());
  std::vector<int64_t> coord(static_cast<size_t>(r), 0);
  int64_t oa = 0, ob = 0;
  for (int64_t i = 0; i < p.total; ++i) {
    f(i, oa, ob);
    for (int ax = r - 1; ax >= 0; --ax) {
      coord[static_cast<size_t>(ax)]++;
      oa += p.stride_a[static_cast<size_t>(ax)];
      ob += p.stride_b[static_cast<size_t>(ax)];
      if (coord[static_cast<size_t>(ax)] < p.out_shape[static_cast<size_t>(ax)])
        break;
      coord[static_cast<size_t>(ax)] = 0;
      oa -= p.stride_a[static_cast<size_t>(ax)] *
            p.out_shape[static_cast<size_t>(ax)];
      ob -= p.stride_b[static_cast<size_t>(ax)] *
            p.out_shape[static_cast<size_t>(ax)];
    }
  }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  BroadcastPlan p = make_broadcast("add", a.shape(), b.shape());
  std::vector<float> out(static_cast<size_t>(p.total));
  if (p.same_shape) {
    const float* av = a.values().data();
    const float* bv = b.values().data();
    for (int64_t i = 0; i < p.total; ++i) out[static_cast<size_t>(i)] = av[i] + bv[i];
  } else {
    const float* av = a.values().data();
    const float* bv = b.values().data();
    broadcast_walk(p, [&](int64_t i, int64_t oa, int64_t ob) {
      out[static_cast<size_t>(i)] = av[oa] + bv[ob];
    });
  }
  Tensor y = finish("add", p.out_shape, std::move(out), {&a, &b});
  record(y, [an = node_of(a), bn = node_of(b), p](const std::vector<float>& g) {
    if (p.same_shape) {
      if (an->requires_grad) {
        ensure_grad(an);
        for (size_t i = 0; i < g.size(); ++i) an->grad[i] += g[i];
      }
      if (bn->requires_grad) {
        ensure_grad(bn);
        for (size_t i = 0; i < g.size(); ++i) bn->grad[i] += g[i];
      }
      return;
    }
    if (an->requires_grad) ensure_grad(an);
    if (bn->requires_grad) ensure_grad(bn);
    broadcast_walk(p, [&](int64_t i, int64_t oa, int64_t ob) {
      const float gv = g[static_cast<size_t>(i)];
      if (an->requires_grad) an->grad[static_cast<size_t>(oa)] += gv;
      if (bn->requires_grad) bn->grad[static_cast<size_t>(ob)] += gv;
    });
  });
  return y;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  BroadcastPlan p = make_broadcast("mul", a.shape(), b.shape());
  std::vector<float> out(static_cast<size_t>(p.total));
  const float* av = a.values().data();
  const float* bv = b.values().data();
  if (p.same_shape) {
    for (int64_t i = 0; i < p.total; ++i) out[static_cast<size_t>(i)] = av[i] * bv[i];
  } else {
    broadcast_walk(p, [&](int64_t i, int64_t oa, int64_t ob) {
      out[static_cast<size_t>(i)] = av[oa] * bv[ob];
    });
  }
  Tensor y = finish("mul", p.out_shape, std::move(out), {&a, &b});
  record(y, [an = node_of(a), bn = node_of(b), p](const std::vector<float>& g) {
    if (an->requires_grad) ensure_grad(an);
    if (bn->requires_grad) ensure_grad(bn);
    if (p.same_shape) {
      for (size_t i = 0; i < g.size(); ++i) {
        if (an->requires_grad) an->grad[i] += g[i] * bn->values[i];
        if (bn->requires_grad) bn->grad[i] += g[i] * an->values[i];
      }
      return;
    }
    broadcast_walk(p, [&](int64_t i, int64_t oa, int64_t ob) {
      const float gv = g[static_cast<size_t>(i)];
      if (an->requires_grad)
        an->grad[static_cast<size_t>(oa)] += gv * bn->values[static_cast<size_t>(ob)];
      if (bn->requires_grad)
        bn->grad[static_cast<size_t>(ob)] += gv * an->values[static_cast<size_t>(oa)];
    });
  });
  return y;
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const int r = parts[0].rank();
  if (axis < 0 || axis >= r) throw ShapeError("concat: axis out of range");
  Shape out_shape = parts[0].shape();
  int64_t axis_total = 0;
  for (const Tensor& t : parts) {
    if (t.rank() != r) {
      throw ShapeError("concat: rank mismatch between " +
                       shape_str(parts[0].shape()) + " and " +
                       shape_str(t.shape()));
    }
    for (int i = 0; i < r; ++i) {
      if (i != axis && t.dim(i) != out_shape[static_cast<size_t>(i)]) {
        throw ShapeError("concat: shape mismatch between " +
                         shape_str(parts[0].shape()) + " and " +
                         shape_str(t.shape()));
      }
    }
    axis_total += t.dim(axis);
  }
  out_shape[static_cast<size_t>(axis)] = axis_total;

  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= out_shape[static_cast<size_t>(i)];
  for (int i = axis + 1; i < r; ++i) inner *= out_shape[static_cast<size_t>(i)];

  std::vector<float> out(static_cast<size_t>(outer * axis_total * inner));
  int64_t offset = 0;
  for (const Tensor& t : parts) {
    const int64_t da = t.dim(axis);
    const float* src = t.values().data();
    for (int64_t o = 0; o < outer; ++o) {
      std::memcpy(out.data() + (o * axis_total + offset) * inner,
                  src + o * da * inner,
                  static_cast<size_t>(da * inner) * sizeof(float));
    }
    offset += da;
  }

  auto n = std::make_shared<Tensor::Node>();
  n->shape = out_shape;
  n->values = std::move(out);
  check_finite(n->values, "concat");
  if (tape().recording()) {
    for (const Tensor& t : parts) {
      if (t.requires_grad()) {
        n->requires_grad = true;
        break;
      }
    }
  }
  Tensor y = OpCtx::wrap(std::move(n));
  if (y.requires_grad()) {
    std::vector<NodePtr> nodes;
    std::vector<int64_t> axis_dims;
    for (const Tensor& t : parts) {
      nodes.push_back(node_of(t));
      axis_dims.push_back(t.dim(axis));
    }
    record(y, [nodes, axis_dims, outer, inner, axis_total](
                  const std::vector<float>& g) {
      int64_t offset = 0;
      for (size_t pi = 0; pi < nodes.size(); ++pi) {
        const int64_t da = axis_dims[pi];
        if (nodes[pi]->requires_grad) {
          ensure_grad(nodes[pi]);
          float* dst = nodes[pi]->grad.data();
          for (int64_t o = 0; o < outer; ++o) {
            const float* src = g.data() + (o * axis_total + offset) * inner;
            float* drow = dst + o * da * inner;
            for (int64_t i = 0; i < da * inner; ++i) drow[i] += src[i];
          }
        }
        offset += da;
      }
    });
  }
  return y;
}

// ------------------------------------------------------------ pointwise ----

namespace {

template <typename Fwd>
Tensor unary_op(const char* op, const Tensor& x, Fwd&& fwd) {
  std::vector<float> out(static_cast<size_t>(x.size()));
  const float* xv = x.values().data();
  for (int64_t i = 0; i < x.size(); ++i)
    out[static_cast<size_t>(i)] = fwd(xv[i]);
  return finish(op, x.shape(), std::move(out), {&x});
}

}  // namespace

Tensor relu(const Tensor& x) {
  Tensor y = unary_op("relu", x, [](float v) { return v > 0.0f ? v : 0.0f; });
  record(y, [xn = node_of(x)](const std::vector<float>& g) {
    ensure_grad(xn);
    for (size_t i = 0; i < g.size(); ++i) {
      if (xn->values[i] > 0.0f) xn->grad[i] += g[i];
    }
  });
  return y;
}

Tensor sigmoid(const Tensor& x) {
  Tensor y = unary_op("sigmoid", x, [](float v) {
    return static_cast<float>(1.0 / (1.0 + std::exp(-static_cast<double>(v))));
  });
  record(y, [xn = node_of(x), yn = node_of(y)](const std::vector<float>& g) {
    ensure_grad(xn);
    for (size_t i = 0; i < g.size(); ++i) {
      const float s = yn->values[i];
      xn->grad[i] += g[i] * s * (1.0f - s);
    }
  });
  return y;
}

Tensor tanh(const Tensor& x) {
  Tensor y = unary_op("tanh", x, [](float v) {
    return static_cast<float>(std::tanh(static_cast<double>(v)));
  });
  record(y, [xn = node_of(x), yn = node_of(y)](const std::vector<float>& g) {
    ensure_grad(xn);
    for (size_t i = 0; i < g.size(); ++i) {
      const float t = yn->values[i];
      xn->grad[i] += g[i] * (1.0f - t * t);
    }
  });
  return y;
}

Tensor abs(const Tensor& x) {
  Tensor y = unary_op("abs", x, [](float v) { return std::fabs(v); });
  record(y, [xn = node_of(x)](const std::vector<float>& g) {
    ensure_grad(xn);
    for (size_t i = 0; i < g.size(); ++i) {
      const float v = xn->values[i];
      if (v > 0.0f) {
        xn->grad[i] += g[i];
      } else if (v < 0.0f) {
        xn->grad[i] -= g[i];
      }
    }
  });
  return y;
}

Tensor softmax(const Tensor& x, int axis) {
  if (axis < 0 || axis >= x.rank()) {
    throw ShapeError("softmax: axis out of range for " + shape_str(x.shape()));
  }
  const int64_t d = x.dim(axis);
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= x.dim(i);
  for (int i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);

  std::vector<float> out(static_cast<size_t>(x.size()));
  const float* xv = x.values().data();
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t in = 0; in < inner; ++in) {
      const int64_t base = o * d * inner + in;
      float mx = xv[base];
      for (int64_t j = 1; j < d; ++j)
        mx = std::max(mx, xv[base + j * inner]);
      double denom = 0.0;
      for (int64_t j = 0; j < d; ++j) {
        const double e = std::exp(static_cast<double>(xv[base + j * inner] - mx));
        out[static_cast<size_t>(base + j * inner)] = static_cast<float>(e);
        denom += e;
      }
      for (int64_t j = 0; j < d; ++j) {
        out[static_cast<size_t>(base + j * inner)] =
            static_cast<float>(out[static_cast<size_t>(base + j * inner)] / denom);
      }
    }
  }
  Tensor y = finish("softmax", x.shape(), std::move(out), {&x});
  record(y, [xn = node_of(x), yn = node_of(y), d, outer,
             inner](const std::vector<float>& g) {
    ensure_grad(xn);
    for (int64_t o = 0; o < outer; ++o) {
      for (int64_t in = 0; in < inner; ++in) {
        const int64_t base = o * d * inner + in;
        double dot = 0.0;
        for (int64_t j = 0; j < d; ++j) {
          dot += static_cast<double>(g[static_cast<size_t>(base + j * inner)]) *
                 yn->values[static_cast<size_t>(base + j * inner)];
        }
        for (int64_t j = 0; j < d; ++j) {
          const size_t idx = static_cast<size_t>(base + j * inner);
          xn->grad[idx] += static_cast<float>(
              yn->values[idx] * (static_cast<double>(g[idx]) - dot));
        }
      }
    }
  });
  return y;
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (float v : x.values()) acc += v;
  Tensor y = finish("sum", {1}, {static_cast<float>(acc)}, {&x});
  record(y, [xn = node_of(x)](const std::vector<float>& g) {
    ensure_grad(xn);
    const float gv = g[0];
    for (float& gr : xn->grad) gr += gv;
  });
  return y;
}

Tensor mean(const Tensor& x) {
  double acc = 0.0;
  for (float v : x.values()) acc += v;
  const double inv = 1.0 / static_cast<double>(x.size());
  Tensor y = finish("mean", {1}, {static_cast<float>(acc * inv)}, {&x});
  record(y, [xn = node_of(x), inv](const std::vector<float>& g) {
    ensure_grad(xn);
    const float gv = static_cast<float>(g[0] * inv);
    for (float& gr : xn->grad) gr += gv;
  });
  return y;
}

Tensor slice(const Tensor& x, int axis, int64_t start, int64_t stop) {
  if (axis < 0 || axis >= x.rank()) {
    throw ShapeError("slice: axis out of range for " + shape_str(x.shape()));
  }
  if (start < 0 || stop > x.dim(axis) || start >= stop) {
    throw ShapeError("slice: range [" + std::to_string(start) + "," +
                     std::to_string(stop) + ") invalid for " +
                     shape_str(x.shape()));
  }
  const int64_t d = x.dim(axis), nd = stop - start;
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= x.dim(i);
  for (int i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);

  Shape out_shape = x.shape();
  out_shape[static_cast<size_t>(axis)] = nd;
  std::vector<float> out(static_cast<size_t>(outer * nd * inner));
  const float* xv = x.values().data();
  for (int64_t o = 0; o < outer; ++o) {
    std::memcpy(out.data() + o * nd * inner, xv + (o * d + start) * inner,
                static_cast<size_t>(nd * inner) * sizeof(float));
  }
  Tensor y = finish("slice", std::move(out_shape), std::move(out), {&x});
  record(y, [xn = node_of(x), outer, inner, d, nd,
             start](const std::vector<float>& g) {
    ensure_grad(xn);
    for (int64_t o = 0; o < outer; ++o) {
      const float* src = g.data() + o * nd * inner;
      float* dst = xn->grad.data() + (o * d + start) * inner;
      for (int64_t i = 0; i < nd * inner; ++i) dst[i] += src[i];
    }
  });
  return y;
}

Tensor reshape(const Tensor& x, Shape new_shape) {
  check_shape_valid(new_shape, "reshape");
  if (numel(new_shape) != x.size()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                     shape_str(new_shape));
  }
  std::vector<float> out(x.values().begin(), x.values().end());
  Tensor y = finish("reshape", std::move(new_shape), std::move(out), {&x});
  record(y, [xn = node_of(x)](const std::vector<float>& g) {
    ensure_grad(xn);
    for (size_t i = 0; i < g.size(); ++i) xn->grad[i] += g[i];
  });
  return y;
}

namespace {

// dst[perm-mapped coords] = src[coords]; returns strides used for mapping.
void permute_copy(const float* src, const Shape& in_shape,
                  const std::vector<int>& perm, float* dst, bool accumulate) {
  const int r = static_cast<int>(in_shape.size());
  Shape out_shape(static_cast<size_t>(r));
  for (int i = 0; i < r; ++i)
    out_shape[static_cast<size_t>(i)] = in_shape[static_cast<size_t>(perm[static_cast<size_t>(i)])];
  std::vector<int64_t> out_strides(static_cast<size_t>(r));
  int64_t acc = 1;
  for (int i = r - 1; i >= 0; --i) {
    out_strides[static_cast<size_t>(i)] = acc;
    acc *= out_shape[static_cast<size_t>(i)];
  }
  // For each input axis, the matching output stride.
  std::vector<int64_t> map(static_cast<size_t>(r));
  for (int i = 0; i < r; ++i)
    map[static_cast<size_t>(perm[static_cast<size_t>(i)])] = out_strides[static_cast<size_t>(i)];

  std::vector<int64_t> coord(static_cast<size_t>(r), 0);
  const int64_t total = numel(in_shape);
  int64_t out_off = 0;
  for (int64_t i = 0; i < total; ++i) {
    if (accumulate) {
      dst[out_off] += src[i];
    } else {
      dst[out_off] = src[i];
    }
    for (int ax = r - 1; ax >= 0; --ax) {
      coord[static_cast<size_t>(ax)]++;
      out_off += map[static_cast<size_t>(ax)];
      if (coord[static_cast<size_t>(ax)] < in_shape[static_cast<size_t>(ax)]) break;
      coord[static_cast<size_t>(ax)] = 0;
      out_off -= map[static_cast<size_t>(ax)] * in_shape[static_cast<size_t>(ax)];
    }
  }
}

}  // namespace

Tensor transpose(const Tensor& x, std::vector<int> perm) {
  const int r = x.rank();
  if (static_cast<int>(perm.size()) != r) {
    throw ShapeError("transpose: permutation size does not match rank of " +
                     shape_str(x.shape()));
  }
  std::vector<bool> seen(static_cast<size_t>(r), false);
  for (int p : perm) {
    if (p < 0 || p >= r || seen[static_cast<size_t>(p)]) {
      throw ShapeError("transpose: invalid permutation for " +
                       shape_str(x.shape()));
    }
    seen[static_cast<size_t>(p)] = true;
  }
  Shape out_shape(static_cast<size_t>(r));
  for (int i = 0; i < r; ++i)
    out_shape[static_cast<size_t>(i)] = x.dim(perm[static_cast<size_t>(i)]);
  std::vector<float> out(static_cast<size_t>(x.size()));
  permute_copy(x.values().data(), x.shape(), perm, out.data(), false);
  Tensor y = finish("transpose", std::move(out_shape), std::move(out), {&x});
  record(y, [xn = node_of(x), perm](const std::vector<float>& g) {
    ensure_grad(xn);
    // Gradient flows through the inverse permutation: walking the input
    // space with the same map accumulates grad[out_off] into grad_in[i].
    const int r = static_cast<int>(perm.size());
    Shape out_shape(static_cast<size_t>(r));
    for (int i = 0; i < r; ++i)
      out_shape[static_cast<size_t>(i)] =
          xn->shape[static_cast<size_t>(perm[static_cast<size_t>(i)])];
    std::vector<int64_t> out_strides(static_cast<size_t>(r));
    int64_t acc = 1;
    for (int i = r - 1; i >= 0; --i) {
      out_strides[static_cast<size_t>(i)] = acc;
      acc *= out_shape[static_cast<size_t>(i)];
    }
    std::vector<int64_t> map(static_cast<size_t>(r));
    for (int i = 0; i < r; ++i)
      map[static_cast<size_t>(perm[static_cast<size_t>(i)])] =
          out_strides[static_cast<size_t>(i)];
    std::vector<int64_t> coord(static_cast<size_t>(r), 0);
    int64_t out_off = 0;
    const int64_t total = static_cast<int64_t>(xn->values.size());
    for (int64_t i = 0; i < total; ++i) {
      xn->grad[static_cast<size_t>(i)] += g[static_cast<size_t>(out_off)];
      for (int ax = r - 1; ax >= 0; --ax) {
        coord[static_cast<size_t>(ax)]++;
        out_off += map[static_cast<size_t>(ax)];
        if (coord[static_cast<size_t>(ax)] < xn->shape[static_cast<size_t>(ax)]) break;
        coord[static_cast<size_t>(ax)] = 0;
        out_off -= map[static_cast<size_t>(ax)] * xn->shape[static_cast<size_t>(ax)];
      }
    }
  });
  return y;
}

Tensor embedding_lookup(const Tensor& table, const std::vector<int64_t>& indices) {
  if (table.rank() != 2) {
    throw ShapeError("embedding_lookup: table must be rank 2, got " +
                     shape_str(table.shape()));
  }
  const int64_t v = table.dim(0), d = table.dim(1);
  for (int64_t idx : indices) {
    if (idx < 0 || idx >= v) {
      throw ShapeError("embedding_lookup: index " + std::to_string(idx) +
                       " out of range for table " + shape_str(table.shape()));
    }
  }
  const int64_t n = static_cast<int64_t>(indices.size());
  if (n == 0) throw ShapeError("embedding_lookup: empty index list");
  std::vector<float> out(static_cast<size_t>(n * d));
  const float* tv = table.values().data();
  for (int64_t j = 0; j < n; ++j) {
    std::memcpy(out.data() + j * d, tv + indices[static_cast<size_t>(j)] * d,
                static_cast<size_t>(d) * sizeof(float));
  }
  Tensor y = finish("embedding_lookup", {n, d}, std::move(out), {&table});
  record(y, [tn = node_of(table), indices, d](const std::vector<float>& g) {
    ensure_grad(tn);
    for (size_t j = 0; j < indices.size(); ++j) {
      float* dst = tn->grad.data() + indices[j] * d;
      const float* src = g.data() + static_cast<int64_t>(j) * d;
      for (int64_t i = 0; i < d; ++i) dst[i] += src[i];
    }
  });
  return y;
}

Tensor st_gumbel(const Tensor& logits, const Tensor& noise, int64_t n_c,
                 float tau) {
  if (tau <= 0.0f) throw ContractError("st_gumbel: tau must be positive");
  if (!noise.defined() || noise.shape() != logits.shape()) {
    throw ShapeError("st_gumbel: noise shape must match logits " +
                     shape_str(logits.shape()));
  }
  const int64_t last = logits.dim(logits.rank() - 1);
  if (n_c < 1 || last % n_c != 0) {
    throw ShapeError("st_gumbel: last axis of " + shape_str(logits.shape()) +
                     " is not divisible into blocks of " + std::to_string(n_c));
  }
  const int64_t rows = logits.size() / last;
  const int64_t blocks_per_row = last / n_c;
  const float* lv = logits.values().data();
  const float* gv = noise.values().data();

  std::vector<float> out(static_cast<size_t>(logits.size()), 0.0f);
  for (int64_t r = 0; r < rows; ++r) {
    for (int64_t b = 0; b < blocks_per_row; ++b) {
      const int64_t base = r * last + b * n_c;
      int64_t best = 0;
      float best_v = lv[base] + gv[base];
      for (int64_t j = 1; j < n_c; ++j) {
        const float v = lv[base + j] + gv[base + j];
        if (v > best_v) {
          best_v = v;
          best = j;
        }
      }
      out[static_cast<size_t>(base + best)] = 1.0f;
    }
  }
  Tensor y = finish("st_gumbel", logits.shape(), std::move(out), {&logits});
  record(y, [ln = node_of(logits), nn = node_of(noise), n_c, tau, rows,
             blocks_per_row, last](const std::vector<float>& g) {
    ensure_grad(ln);
    // Substituted softmax((logits + noise)/tau) gradient per block.
    std::vector<double> soft(static_cast<size_t>(n_c));
    for (int64_t r = 0; r < rows; ++r) {
      for (int64_t b = 0; b < blocks_per_row; ++b) {
        const int64_t base = r * last + b * n_c;
        double mx = -1e300;
        for (int64_t j = 0; j < n_c; ++j) {
          const double z = (static_cast<double>(ln->values[static_cast<size_t>(base + j)]) +
                            nn->values[static_cast<size_t>(base + j)]) /
                           tau;
          soft[static_cast<size_t>(j)] = z;
          mx = std::max(mx, z);
        }
        double denom = 0.0;
        for (int64_t j = 0; j < n_c; ++j) {
          soft[static_cast<size_t>(j)] = std::exp(soft[static_cast<size_t>(j)] - mx);
          denom += soft[static_cast<size_t>(j)];
        }
        double dot = 0.0;
        for (int64_t j = 0; j < n_c; ++j) {
          soft[static_cast<size_t>(j)] /= denom;
          dot += soft[static_cast<size_t>(j)] * g[static_cast<size_t>(base + j)];
        }
        for (int64_t j = 0; j < n_c; ++j) {
          ln->grad[static_cast<size_t>(base + j)] += static_cast<float>(
              soft[static_cast<size_t>(j)] *
              (static_cast<double>(g[static_cast<size_t>(base + j)]) - dot) / tau);
        }
      }
    }
  });
  return y;
}

// -------------------------------------------------------- conveniences ----

Tensor neg(const Tensor& x) { return scale(x, -1.0f); }

Tensor scale(const Tensor& x, float c) { return mul(x, Tensor::scalar(c)); }

Tensor sub(const Tensor& a, const Tensor& b) { return add(a, neg(b)); }

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
  Tensor y = matmul(x, w);
  return bias.defined() ? add(y, bias) : y;
}

}  // namespace rescal::ad
