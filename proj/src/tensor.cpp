#include "dvp/tensor.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <sstream>
#include <unordered_set>

namespace dvp {

namespace {

thread_local int g_no_grad_depth = 0;
std::atomic<uint64_t> g_next_node_id{1};

using MatRM =
    Eigen::Matrix<real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatRM>;
using CMapRM = Eigen::Map<const MatRM>;
using Arr = Eigen::Array<real, Eigen::Dynamic, 1>;
using MapA = Eigen::Map<Arr>;
using CMapA = Eigen::Map<const Arr>;

MapA amap(std::vector<real>& v) { return MapA(v.data(), v.size()); }
CMapA amap(const std::vector<real>& v) { return CMapA(v.data(), v.size()); }

NodePtr make_node(Shape shape, std::vector<real> value) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->id = g_next_node_id.fetch_add(1);
  return n;
}

/// Attaches graph metadata unless grad mode is off or no parent needs it.
Tensor finish(NodePtr n, std::vector<NodePtr> parents,
              std::function<void(Node&)> backward_fn) {
  if (grad_enabled()) {
    bool needs = false;
    for (const auto& p : parents) needs = needs || p->requires_grad;
    if (needs) {
      n->requires_grad = true;
      n->parents = std::move(parents);
      n->backward_fn = std::move(backward_fn);
    }
  }
  return Tensor(std::move(n));
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

template <class F, class DF>
Tensor unary_op(const Tensor& x, F f, DF df) {
  const auto& xv = x.data();
  std::vector<real> out(xv.size());
  for (size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  NodePtr n = make_node(x.shape(), std::move(out));
  Node* xp = x.node();
  return finish(
      n, {x.ptr()}, [xp, df](Node& self) {
        xp->ensure_grad();
        for (size_t i = 0; i < self.value.size(); ++i)
          xp->grad[i] += self.grad[i] * df(xp->value[i], self.value[i]);
      });
}

}  // namespace

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

void Node::ensure_grad() {
  if (grad.empty()) grad.assign(value.size(), real(0));
}

NoGradGuard::NoGradGuard() { ++g_no_grad_depth; }
NoGradGuard::~NoGradGuard() { --g_no_grad_depth; }
bool grad_enabled() { return g_no_grad_depth == 0; }

Tensor Tensor::constant(Shape shape, std::vector<real> data) {
  if (shape_numel(shape) != int64_t(data.size()))
    throw ShapeError("constant: data length does not match shape " +
                     shape_str(shape));
  return Tensor(make_node(std::move(shape), std::move(data)));
}

Tensor Tensor::zeros(Shape shape) {
  std::vector<real> d(shape_numel(shape), real(0));
  return Tensor(make_node(std::move(shape), std::move(d)));
}

Tensor Tensor::full(Shape shape, real v) {
  std::vector<real> d(shape_numel(shape), v);
  return Tensor(make_node(std::move(shape), std::move(d)));
}

Tensor Tensor::scalar(real v) { return full({1}, v); }

Tensor Tensor::leaf(Shape shape, std::vector<real> data) {
  Tensor t = constant(std::move(shape), std::move(data));
  t.node()->requires_grad = true;
  t.node()->is_leaf = true;
  return t;
}

Tensor Tensor::randn(Shape shape, Rng& rng) {
  std::vector<real> d(shape_numel(shape));
  for (auto& v : d) v = real(rng.normal());
  return Tensor(make_node(std::move(shape), std::move(d)));
}

real Tensor::item() const {
  if (numel() != 1) throw UsageError("item: tensor is not scalar");
  return node_->value[0];
}

void backward(const Tensor& root) {
  if (root.numel() != 1)
    throw UsageError("backward: root must be a scalar tensor");
  Node* r = root.node();
  if (!r->requires_grad && !r->is_leaf) return;

  // Iterative post-order topological sort over grad-requiring ancestors.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, size_t>> stack{{r, 0}};
  visited.insert(r);
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Node* p = node->parents[idx++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  // Interior grads are scoped to this call; leaf grads accumulate. Interior
  // buffers are released as soon as their node has propagated, which keeps
  // the peak footprint near the live frontier instead of the whole graph.
  for (Node* n : order)
    if (!n->is_leaf && !n->grad.empty()) n->grad.assign(n->value.size(), real(0));
  r->ensure_grad();
  r->grad[0] += real(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
    if (!n->is_leaf) {
      n->grad.clear();
      n->grad.shrink_to_fit();
    }
  }
}

// -- dense kernels -----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2)
    throw ShapeError("matmul: expects rank-2 tensors");
  const int m = a.shape()[0], k = a.shape()[1];
  const int k2 = b.shape()[0], n = b.shape()[1];
  if (k != k2)
    throw ShapeError("matmul: inner extents differ, " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  std::vector<real> out(size_t(m) * n);
  {
    CMapRM A(a.data().data(), m, k), B(b.data().data(), k, n);
    MapRM C(out.data(), m, n);
    C.noalias() = A * B;
  }
  NodePtr node = make_node({m, n}, std::move(out));
  Node* ap = a.node();
  Node* bp = b.node();
  return finish(node, {a.ptr(), b.ptr()}, [ap, bp, m, k, n](Node& self) {
    CMapRM G(self.grad.data(), m, n);
    CMapRM A(ap->value.data(), m, k), B(bp->value.data(), k, n);
    if (ap->requires_grad) {
      ap->ensure_grad();
      MapRM GA(ap->grad.data(), m, k);
      GA.noalias() += G * B.transpose();
    }
    if (bp->requires_grad) {
      bp->ensure_grad();
      MapRM GB(bp->grad.data(), k, n);
      GB.noalias() += A.transpose() * G;
    }
  });
}

namespace {

// The spatial conv runs on a zero-padded canvas: every kernel tap is then a
// single GEMM over one contiguous column range, shifted by the tap offset.
// Interior outputs never cross sample boundaries (the pad ring absorbs the
// shift), and values landing in the pad ring are discarded by the crop.
struct ConvPlan {
  int n, ci, co, h, w, k, p;
  int ph, pw, canvas;  // padded extents and per-sample canvas size
  int chunk;
};

ConvPlan make_conv_plan(int n, int ci, int co, int h, int w, int k) {
  ConvPlan pl;
  pl.n = n;
  pl.ci = ci;
  pl.co = co;
  pl.h = h;
  pl.w = w;
  pl.k = k;
  pl.p = k / 2;
  pl.ph = h + 2 * pl.p;
  pl.pw = w + 2 * pl.p;
  pl.canvas = pl.ph * pl.pw;
  const int64_t per_sample = int64_t(ci + co) * pl.canvas * sizeof(real);
  pl.chunk = std::max(1, std::min<int>(n, int(8'000'000 / per_sample)));
  return pl;
}

// strided view of all co x ci weights for one kernel tap
using TapMap = Eigen::Map<const MatRM, 0, Eigen::Stride<Eigen::Dynamic, Eigen::Dynamic>>;
TapMap tap_view(const real* k, const ConvPlan& pl, int ky, int kx) {
  return TapMap(k + int64_t(ky) * pl.k + kx, pl.co, pl.ci,
                Eigen::Stride<Eigen::Dynamic, Eigen::Dynamic>(
                    int64_t(pl.ci) * pl.k * pl.k, pl.k * pl.k));
}

// interior <-> canvas copies for a chunk of samples
void fill_canvas(const real* src, int s0, int s1, const ConvPlan& pl, int ch,
                 real* canvas) {
  std::fill(canvas, canvas + size_t(ch) * (s1 - s0) * pl.canvas, real(0));
  for (int s = s0; s < s1; ++s)
    for (int c = 0; c < ch; ++c) {
      const real* in = src + (int64_t(s) * ch + c) * pl.h * pl.w;
      real* dst = canvas + (int64_t(c) * (s1 - s0) + (s - s0)) * pl.canvas;
      for (int y = 0; y < pl.h; ++y)
        std::memcpy(dst + (y + pl.p) * pl.pw + pl.p, in + int64_t(y) * pl.w,
                    size_t(pl.w) * sizeof(real));
    }
}

void crop_canvas(const real* canvas, int s0, int s1, const ConvPlan& pl, int ch,
                 real* dst, bool accumulate) {
  for (int s = s0; s < s1; ++s)
    for (int c = 0; c < ch; ++c) {
      const real* in = canvas + (int64_t(c) * (s1 - s0) + (s - s0)) * pl.canvas;
      real* out = dst + (int64_t(s) * ch + c) * pl.h * pl.w;
      for (int y = 0; y < pl.h; ++y) {
        const real* row = in + (y + pl.p) * pl.pw + pl.p;
        real* orow = out + int64_t(y) * pl.w;
        if (accumulate)
          for (int x = 0; x < pl.w; ++x) orow[x] += row[x];
        else
          std::memcpy(orow, row, size_t(pl.w) * sizeof(real));
      }
    }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& k) { return conv2d(x, k, Tensor()); }

Tensor conv2d(const Tensor& x, const Tensor& k, const Tensor& bias) {
  if (x.shape().size() != 4 || k.shape().size() != 4)
    throw ShapeError("conv2d: expects x [n,ci,h,w] and k [co,ci,kh,kw]");
  const int n = x.shape()[0], ci = x.shape()[1], h = x.shape()[2],
            w = x.shape()[3];
  const int co = k.shape()[0], kci = k.shape()[1], kh = k.shape()[2],
            kw = k.shape()[3];
  if (kci != ci)
    throw ShapeError("conv2d: channel mismatch, input has " +
                     std::to_string(ci) + ", kernel expects " +
                     std::to_string(kci));
  if (kh != kw || kh % 2 == 0)
    throw ShapeError("conv2d: kernel must be square with odd extent");
  const bool has_bias = bias.defined();
  if (has_bias && (bias.shape().size() != 1 || bias.shape()[0] != co))
    throw ShapeError("conv2d: bias must have shape [co]");
  const bool pointwise = kh == 1;
  const int hw = h * w;
  const real* bv = has_bias ? bias.data().data() : nullptr;

  std::vector<real> out(size_t(n) * co * hw);
  if (pointwise) {
    // columns are already contiguous per sample; no canvas needed
    CMapRM K(k.data().data(), co, ci);
    for (int s = 0; s < n; ++s) {
      CMapRM X(x.data().data() + int64_t(s) * ci * hw, ci, hw);
      MapRM O(out.data() + int64_t(s) * co * hw, co, hw);
      O.noalias() = K * X;
    }
  } else {
    const ConvPlan pl = make_conv_plan(n, ci, co, h, w, kh);
    std::vector<real> Xp(size_t(ci) * pl.chunk * pl.canvas);
    std::vector<real> Op(size_t(co) * pl.chunk * pl.canvas);
    for (int s0 = 0; s0 < n; s0 += pl.chunk) {
      const int s1 = std::min(n, s0 + pl.chunk);
      const int64_t cols = int64_t(s1 - s0) * pl.canvas;
      fill_canvas(x.data().data(), s0, s1, pl, ci, Xp.data());
      MapRM O(Op.data(), co, cols);
      O.setZero();
      CMapRM X(Xp.data(), ci, cols);
      for (int ky = 0; ky < kh; ++ky)
        for (int kx = 0; kx < kw; ++kx) {
          const int64_t off = int64_t(ky - pl.p) * pl.pw + (kx - pl.p);
          const int64_t a = std::max<int64_t>(0, -off);
          const int64_t len = cols - std::abs(off);
          O.middleCols(a, len).noalias() +=
              tap_view(k.data().data(), pl, ky, kx) * X.middleCols(a + off, len);
        }
      crop_canvas(Op.data(), s0, s1, pl, co, out.data(), false);
    }
  }
  if (has_bias) {
    for (int s = 0; s < n; ++s)
      for (int c = 0; c < co; ++c) {
        real* dst = out.data() + (int64_t(s) * co + c) * hw;
        const real b = bv[c];
        for (int i = 0; i < hw; ++i) dst[i] += b;
      }
  }

  NodePtr node = make_node({n, co, h, w}, std::move(out));
  Node* xp = x.node();
  Node* kp = k.node();
  Node* bp = has_bias ? bias.node() : nullptr;
  std::vector<NodePtr> parents{x.ptr(), k.ptr()};
  if (has_bias) parents.push_back(bias.ptr());
  return finish(node, std::move(parents),
                [xp, kp, bp, n, ci, h, w, kh, kw, co, hw, pointwise](Node& self) {
    if (bp && bp->requires_grad) {
      bp->ensure_grad();
      for (int s = 0; s < n; ++s)
        for (int c = 0; c < co; ++c) {
          const real* g = self.grad.data() + (int64_t(s) * co + c) * hw;
          real acc = 0;
          for (int i = 0; i < hw; ++i) acc += g[i];
          bp->grad[c] += acc;
        }
    }
    if (pointwise) {
      CMapRM K(kp->value.data(), co, ci);
      if (xp->requires_grad) xp->ensure_grad();
      if (kp->requires_grad) kp->ensure_grad();
      for (int s = 0; s < n; ++s) {
        CMapRM G(self.grad.data() + int64_t(s) * co * hw, co, hw);
        if (xp->requires_grad) {
          MapRM GX(xp->grad.data() + int64_t(s) * ci * hw, ci, hw);
          GX.noalias() += K.transpose() * G;
        }
        if (kp->requires_grad) {
          CMapRM X(xp->value.data() + int64_t(s) * ci * hw, ci, hw);
          MapRM GK(kp->grad.data(), co, ci);
          GK.noalias() += G * X.transpose();
        }
      }
      return;
    }

    const ConvPlan pl = make_conv_plan(n, ci, co, h, w, kh);
    std::vector<real> Gp(size_t(co) * pl.chunk * pl.canvas);
    std::vector<real> GXp, Xp;
    if (xp->requires_grad) {
      xp->ensure_grad();
      GXp.resize(size_t(ci) * pl.chunk * pl.canvas);
    }
    if (kp->requires_grad) {
      kp->ensure_grad();
      Xp.resize(size_t(ci) * pl.chunk * pl.canvas);
    }
    MatRM gk_tap(co, ci);
    for (int s0 = 0; s0 < n; s0 += pl.chunk) {
      const int s1 = std::min(n, s0 + pl.chunk);
      const int64_t cols = int64_t(s1 - s0) * pl.canvas;
      fill_canvas(self.grad.data(), s0, s1, pl, co, Gp.data());
      CMapRM G(Gp.data(), co, cols);
      if (xp->requires_grad) {
        MapRM GX(GXp.data(), ci, cols);
        GX.setZero();
        for (int ky = 0; ky < kh; ++ky)
          for (int kx = 0; kx < kw; ++kx) {
            const int64_t off = int64_t(ky - pl.p) * pl.pw + (kx - pl.p);
            const int64_t a = std::max<int64_t>(0, -off);
            const int64_t len = cols - std::abs(off);
            GX.middleCols(a + off, len).noalias() +=
                tap_view(kp->value.data(), pl, ky, kx).transpose() *
                G.middleCols(a, len);
          }
        crop_canvas(GXp.data(), s0, s1, pl, ci, xp->grad.data(), true);
      }
      if (kp->requires_grad) {
        fill_canvas(xp->value.data(), s0, s1, pl, ci, Xp.data());
        CMapRM X(Xp.data(), ci, cols);
        for (int ky = 0; ky < kh; ++ky)
          for (int kx = 0; kx < kw; ++kx) {
            const int64_t off = int64_t(ky - pl.p) * pl.pw + (kx - pl.p);
            const int64_t a = std::max<int64_t>(0, -off);
            const int64_t len = cols - std::abs(off);
            gk_tap.noalias() = G.middleCols(a, len) * X.middleCols(a + off, len).transpose();
            real* gk = kp->grad.data() + int64_t(ky) * kw + kx;
            for (int c = 0; c < co; ++c)
              for (int d = 0; d < ci; ++d)
                gk[(int64_t(c) * ci + d) * kh * kw] += gk_tap(c, d);
          }
      }
    }
  });
}

// -- elementwise -------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  const auto& av = a.data();
  const auto& bv = b.data();
  std::vector<real> out(av.size());
  for (size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i];
  NodePtr n = make_node(a.shape(), std::move(out));
  Node* ap = a.node();
  Node* bp = b.node();
  return finish(n, {a.ptr(), b.ptr()}, [ap, bp](Node& self) {
    if (ap->requires_grad) {
      ap->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) ap->grad[i] += self.grad[i];
    }
    if (bp->requires_grad) {
      bp->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) bp->grad[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  const auto& av = a.data();
  const auto& bv = b.data();
  std::vector<real> out(av.size());
  for (size_t i = 0; i < av.size(); ++i) out[i] = av[i] - bv[i];
  NodePtr n = make_node(a.shape(), std::move(out));
  Node* ap = a.node();
  Node* bp = b.node();
  return finish(n, {a.ptr(), b.ptr()}, [ap, bp](Node& self) {
    if (ap->requires_grad) {
      ap->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) ap->grad[i] += self.grad[i];
    }
    if (bp->requires_grad) {
      bp->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) bp->grad[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  const auto& av = a.data();
  const auto& bv = b.data();
  std::vector<real> out(av.size());
  for (size_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[i];
  NodePtr n = make_node(a.shape(), std::move(out));
  Node* ap = a.node();
  Node* bp = b.node();
  return finish(n, {a.ptr(), b.ptr()}, [ap, bp](Node& self) {
    if (ap->requires_grad) {
      ap->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i)
        ap->grad[i] += self.grad[i] * bp->value[i];
    }
    if (bp->requires_grad) {
      bp->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i)
        bp->grad[i] += self.grad[i] * ap->value[i];
    }
  });
}

Tensor add_scalar(const Tensor& a, real c) {
  return unary_op(
      a, [c](real x) { return x + c; }, [](real, real) { return real(1); });
}

Tensor mul_scalar(const Tensor& a, real c) {
  return unary_op(
      a, [c](real x) { return x * c; }, [c](real, real) { return c; });
}

Tensor scale(const Tensor& x, const Tensor& s) {
  if (s.numel() != 1) throw ShapeError("scale: s must have a single element");
  const real sv = s.data()[0];
  const auto& xv = x.data();
  std::vector<real> out(xv.size());
  for (size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] * sv;
  NodePtr n = make_node(x.shape(), std::move(out));
  Node* xp = x.node();
  Node* sp = s.node();
  return finish(n, {x.ptr(), s.ptr()}, [xp, sp, sv](Node& self) {
    if (xp->requires_grad) {
      xp->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i)
        xp->grad[i] += self.grad[i] * sv;
    }
    if (sp->requires_grad) {
      sp->ensure_grad();
      real acc = 0;
      for (size_t i = 0; i < self.grad.size(); ++i)
        acc += self.grad[i] * xp->value[i];
      sp->grad[0] += acc;
    }
  });
}

Tensor add_channel_bias(const Tensor& x, const Tensor& b) {
  if (x.shape().size() != 4 || b.shape().size() != 1 ||
      b.shape()[0] != x.shape()[1])
    throw ShapeError("add_channel_bias: x must be [n,c,h,w] and b [c]");
  const int n = x.shape()[0], c = x.shape()[1];
  const int hw = x.shape()[2] * x.shape()[3];
  const auto& xv = x.data();
  const auto& bv = b.data();
  std::vector<real> out(xv.size());
  for (int s = 0; s < n; ++s)
    for (int ch = 0; ch < c; ++ch) {
      const real bias = bv[ch];
      const int64_t base = (int64_t(s) * c + ch) * hw;
      for (int i = 0; i < hw; ++i) out[base + i] = xv[base + i] + bias;
    }
  NodePtr node = make_node(x.shape(), std::move(out));
  Node* xp = x.node();
  Node* bp = b.node();
  return finish(node, {x.ptr(), b.ptr()}, [xp, bp, n, c, hw](Node& self) {
    if (xp->requires_grad) {
      xp->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) xp->grad[i] += self.grad[i];
    }
    if (bp->requires_grad) {
      bp->ensure_grad();
      for (int s = 0; s < n; ++s)
        for (int ch = 0; ch < c; ++ch) {
          const int64_t base = (int64_t(s) * c + ch) * hw;
          real acc = 0;
          for (int i = 0; i < hw; ++i) acc += self.grad[base + i];
          bp->grad[ch] += acc;
        }
    }
  });
}

Tensor broadcast_batch(const Tensor& p, int n) {
  if (n < 1) throw UsageError("broadcast_batch: n must be >= 1");
  const auto& pv = p.data();
  const int64_t m = p.numel();
  std::vector<real> out(size_t(n) * m);
  for (int s = 0; s < n; ++s)
    std::memcpy(out.data() + int64_t(s) * m, pv.data(), m * sizeof(real));
  Shape shape;
  shape.push_back(n);
  for (int d : p.shape()) shape.push_back(d);
  NodePtr node = make_node(std::move(shape), std::move(out));
  Node* pp = p.node();
  return finish(node, {p.ptr()}, [pp, n, m](Node& self) {
    pp->ensure_grad();
    for (int s = 0; s < n; ++s) {
      const real* g = self.grad.data() + int64_t(s) * m;
      for (int64_t i = 0; i < m; ++i) pp->grad[i] += g[i];
    }
  });
}

namespace {

// 1/(1+exp(-x)) saturates cleanly at both ends under IEEE arithmetic
void sigmoid_values(const std::vector<real>& x, std::vector<real>& out) {
  amap(out) = real(1) / (real(1) + (-amap(x)).exp());
}

}  // namespace

Tensor silu(const Tensor& x) {
  std::vector<real> out(x.data().size());
  sigmoid_values(x.data(), out);
  amap(out) *= amap(x.data());
  NodePtr n = make_node(x.shape(), std::move(out));
  Node* xp = x.node();
  return finish(n, {x.ptr()}, [xp](Node& self) {
    xp->ensure_grad();
    std::vector<real> sig(xp->value.size());
    sigmoid_values(xp->value, sig);
    amap(xp->grad) +=
        amap(self.grad) * amap(sig) *
        (real(1) + amap(xp->value) * (real(1) - amap(sig)));
  });
}

Tensor sigmoid(const Tensor& x) {
  std::vector<real> out(x.data().size());
  sigmoid_values(x.data(), out);
  NodePtr n = make_node(x.shape(), std::move(out));
  Node* xp = x.node();
  return finish(n, {x.ptr()}, [xp](Node& self) {
    xp->ensure_grad();
    amap(xp->grad) += amap(self.grad) * amap(self.value) *
                      (real(1) - amap(self.value));
  });
}

Tensor exp(const Tensor& x) {
  std::vector<real> out(x.data().size());
  amap(out) = amap(x.data()).exp();
  NodePtr n = make_node(x.shape(), std::move(out));
  Node* xp = x.node();
  return finish(n, {x.ptr()}, [xp](Node& self) {
    xp->ensure_grad();
    amap(xp->grad) += amap(self.grad) * amap(self.value);
  });
}

Tensor log(const Tensor& x) {
  std::vector<real> out(x.data().size());
  amap(out) = amap(x.data()).log();
  NodePtr n = make_node(x.shape(), std::move(out));
  Node* xp = x.node();
  return finish(n, {x.ptr()}, [xp](Node& self) {
    xp->ensure_grad();
    amap(xp->grad) += amap(self.grad) / amap(xp->value);
  });
}

Tensor softplus(const Tensor& x) {
  std::vector<real> out(x.data().size());
  amap(out) = amap(x.data()).max(real(0)) + (-amap(x.data()).abs()).exp().log1p();
  NodePtr n = make_node(x.shape(), std::move(out));
  Node* xp = x.node();
  return finish(n, {x.ptr()}, [xp](Node& self) {
    xp->ensure_grad();
    std::vector<real> sig(xp->value.size());
    sigmoid_values(xp->value, sig);
    amap(xp->grad) += amap(self.grad) * amap(sig);
  });
}

Tensor clamp(const Tensor& x, real lo, real hi) {
  if (lo > hi) throw UsageError("clamp: lo > hi");
  return unary_op(
      x, [lo, hi](real v) { return std::min(hi, std::max(lo, v)); },
      [lo, hi](real v, real) {
        return (v >= lo && v <= hi) ? real(1) : real(0);
      });
}

// -- reductions --------------------------------------------------------------

Tensor sum_all(const Tensor& x) {
  const auto& xv = x.data();
  real acc = 0;
  for (real v : xv) acc += v;
  NodePtr n = make_node({1}, {acc});
  Node* xp = x.node();
  return finish(n, {x.ptr()}, [xp](Node& self) {
    xp->ensure_grad();
    const real g = self.grad[0];
    for (auto& gv : xp->grad) gv += g;
  });
}

Tensor mean_all(const Tensor& x) {
  return mul_scalar(sum_all(x), real(1) / real(x.numel()));
}

Tensor sum_per_sample(const Tensor& x) {
  if (x.shape().empty()) throw ShapeError("sum_per_sample: rank-0 tensor");
  const int n = x.shape()[0];
  const int64_t m = x.numel() / n;
  const auto& xv = x.data();
  std::vector<real> out(n);
  for (int s = 0; s < n; ++s) {
    real acc = 0;
    const real* base = xv.data() + int64_t(s) * m;
    for (int64_t i = 0; i < m; ++i) acc += base[i];
    out[s] = acc;
  }
  NodePtr node = make_node({n}, std::move(out));
  Node* xp = x.node();
  return finish(node, {x.ptr()}, [xp, n, m](Node& self) {
    xp->ensure_grad();
    for (int s = 0; s < n; ++s) {
      const real g = self.grad[s];
      real* base = xp->grad.data() + int64_t(s) * m;
      for (int64_t i = 0; i < m; ++i) base[i] += g;
    }
  });
}

Tensor mean_batch(const Tensor& x) {
  if (x.shape().size() != 1) throw ShapeError("mean_batch: expects rank-1");
  return mean_all(x);
}

// -- spatial -----------------------------------------------------------------

Tensor avg_pool2d(const Tensor& x, int stride) {
  if (x.shape().size() != 4) throw ShapeError("avg_pool2d: expects [n,c,h,w]");
  if (stride < 1) throw UsageError("avg_pool2d: stride must be >= 1");
  const int n = x.shape()[0], c = x.shape()[1], h = x.shape()[2],
            w = x.shape()[3];
  if (h % stride != 0 || w % stride != 0)
    throw ShapeError("avg_pool2d: extent not divisible by stride");
  const int oh = h / stride, ow = w / stride;
  const auto& xv = x.data();
  std::vector<real> out(size_t(n) * c * oh * ow);
  const real inv = real(1) / real(stride * stride);
  for (int s = 0; s < n; ++s)
    for (int ch = 0; ch < c; ++ch) {
      const real* in = xv.data() + (int64_t(s) * c + ch) * h * w;
      real* o = out.data() + (int64_t(s) * c + ch) * oh * ow;
      for (int y = 0; y < oh; ++y)
        for (int xo = 0; xo < ow; ++xo) {
          real acc = 0;
          for (int dy = 0; dy < stride; ++dy)
            for (int dx = 0; dx < stride; ++dx)
              acc += in[(y * stride + dy) * w + xo * stride + dx];
          o[y * ow + xo] = acc * inv;
        }
    }
  NodePtr node = make_node({n, c, oh, ow}, std::move(out));
  Node* xp = x.node();
  return finish(node, {x.ptr()}, [xp, n, c, h, w, oh, ow, stride,
                                  inv](Node& self) {
    xp->ensure_grad();
    for (int s = 0; s < n; ++s)
      for (int ch = 0; ch < c; ++ch) {
        real* gin = xp->grad.data() + (int64_t(s) * c + ch) * h * w;
        const real* go = self.grad.data() + (int64_t(s) * c + ch) * oh * ow;
        for (int y = 0; y < oh; ++y)
          for (int xo = 0; xo < ow; ++xo) {
            const real g = go[y * ow + xo] * inv;
            for (int dy = 0; dy < stride; ++dy)
              for (int dx = 0; dx < stride; ++dx)
                gin[(y * stride + dy) * w + xo * stride + dx] += g;
          }
      }
  });
}

Tensor nearest_upsample(const Tensor& x, int factor) {
  if (x.shape().size() != 4)
    throw ShapeError("nearest_upsample: expects [n,c,h,w]");
  if (factor < 1) throw UsageError("nearest_upsample: factor must be >= 1");
  const int n = x.shape()[0], c = x.shape()[1], h = x.shape()[2],
            w = x.shape()[3];
  const int oh = h * factor, ow = w * factor;
  const auto& xv = x.data();
  std::vector<real> out(size_t(n) * c * oh * ow);
  for (int s = 0; s < n; ++s)
    for (int ch = 0; ch < c; ++ch) {
      const real* in = xv.data() + (int64_t(s) * c + ch) * h * w;
      real* o = out.data() + (int64_t(s) * c + ch) * oh * ow;
      for (int y = 0; y < oh; ++y)
        for (int xo = 0; xo < ow; ++xo)
          o[y * ow + xo] = in[(y / factor) * w + (xo / factor)];
    }
  NodePtr node = make_node({n, c, oh, ow}, std::move(out));
  Node* xp = x.node();
  return finish(node, {x.ptr()},
                [xp, n, c, h, w, oh, ow, factor](Node& self) {
                  xp->ensure_grad();
                  for (int s = 0; s < n; ++s)
                    for (int ch = 0; ch < c; ++ch) {
                      real* gin = xp->grad.data() + (int64_t(s) * c + ch) * h * w;
                      const real* go =
                          self.grad.data() + (int64_t(s) * c + ch) * oh * ow;
                      for (int y = 0; y < oh; ++y)
                        for (int xo = 0; xo < ow; ++xo)
                          gin[(y / factor) * w + (xo / factor)] +=
                              go[y * ow + xo];
                    }
                });
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  if (a.shape().size() != 4 || b.shape().size() != 4)
    throw ShapeError("concat_channels: expects [n,c,h,w]");
  if (a.shape()[0] != b.shape()[0] || a.shape()[2] != b.shape()[2] ||
      a.shape()[3] != b.shape()[3])
    throw ShapeError("concat_channels: non-channel extents differ");
  const int n = a.shape()[0], ca = a.shape()[1], cb = b.shape()[1];
  const int hw = a.shape()[2] * a.shape()[3];
  const auto& av = a.data();
  const auto& bv = b.data();
  std::vector<real> out(size_t(n) * (ca + cb) * hw);
  for (int s = 0; s < n; ++s) {
    std::memcpy(out.data() + int64_t(s) * (ca + cb) * hw,
                av.data() + int64_t(s) * ca * hw, size_t(ca) * hw * sizeof(real));
    std::memcpy(out.data() + (int64_t(s) * (ca + cb) + ca) * hw,
                bv.data() + int64_t(s) * cb * hw, size_t(cb) * hw * sizeof(real));
  }
  NodePtr node =
      make_node({n, ca + cb, a.shape()[2], a.shape()[3]}, std::move(out));
  Node* ap = a.node();
  Node* bp = b.node();
  return finish(node, {a.ptr(), b.ptr()}, [ap, bp, n, ca, cb, hw](Node& self) {
    for (int s = 0; s < n; ++s) {
      if (ap->requires_grad) {
        ap->ensure_grad();
        const real* g = self.grad.data() + int64_t(s) * (ca + cb) * hw;
        real* ga = ap->grad.data() + int64_t(s) * ca * hw;
        for (int i = 0; i < ca * hw; ++i) ga[i] += g[i];
      }
      if (bp->requires_grad) {
        bp->ensure_grad();
        const real* g = self.grad.data() + (int64_t(s) * (ca + cb) + ca) * hw;
        real* gb = bp->grad.data() + int64_t(s) * cb * hw;
        for (int i = 0; i < cb * hw; ++i) gb[i] += g[i];
      }
    }
  });
}

Tensor slice_channels(const Tensor& x, int c0, int c1) {
  if (x.shape().size() != 4) throw ShapeError("slice_channels: expects [n,c,h,w]");
  const int n = x.shape()[0], c = x.shape()[1];
  const int hw = x.shape()[2] * x.shape()[3];
  if (c0 < 0 || c1 > c || c0 >= c1)
    throw UsageError("slice_channels: invalid channel range");
  const int cs = c1 - c0;
  const auto& xv = x.data();
  std::vector<real> out(size_t(n) * cs * hw);
  for (int s = 0; s < n; ++s)
    std::memcpy(out.data() + int64_t(s) * cs * hw,
                xv.data() + (int64_t(s) * c + c0) * hw,
                size_t(cs) * hw * sizeof(real));
  NodePtr node = make_node({n, cs, x.shape()[2], x.shape()[3]}, std::move(out));
  Node* xp = x.node();
  return finish(node, {x.ptr()}, [xp, n, c, c0, cs, hw](Node& self) {
    xp->ensure_grad();
    for (int s = 0; s < n; ++s) {
      const real* g = self.grad.data() + int64_t(s) * cs * hw;
      real* gx = xp->grad.data() + (int64_t(s) * c + c0) * hw;
      for (int i = 0; i < cs * hw; ++i) gx[i] += g[i];
    }
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    throw ShapeError("reshape: element count mismatch");
  NodePtr node = make_node(std::move(shape), x.data());
  Node* xp = x.node();
  return finish(node, {x.ptr()}, [xp](Node& self) {
    xp->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) xp->grad[i] += self.grad[i];
  });
}

}  // namespace dvp
