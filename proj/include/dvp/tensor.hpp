#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "dvp/common.hpp"
#include "dvp/rng.hpp"

namespace dvp {

using Shape = std::vector<int>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

struct Node;
using NodePtr = std::shared_ptr<Node>;

/// One vertex of the reverse-mode graph. Values are immutable once the op
/// that produced them has run; only `grad` is written afterwards.
struct Node {
  Shape shape;
  std::vector<real> value;
  std::vector<real> grad;  // allocated lazily by backward()
  bool requires_grad = false;
  bool is_leaf = false;
  std::vector<NodePtr> parents;
  std::function<void(Node&)> backward_fn;
  uint64_t id = 0;

  int64_t numel() const { return int64_t(value.size()); }
  void ensure_grad();
};

/// Value-semantic handle to a graph node.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(NodePtr n) : node_(std::move(n)) {}

  /// Constant (non-differentiable) tensors.
  static Tensor constant(Shape shape, std::vector<real> data);
  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, real v);
  static Tensor scalar(real v);
  /// Leaf with requires_grad set; used for parameters and gradient checks.
  static Tensor leaf(Shape shape, std::vector<real> data);
  /// Standard-normal fill drawn from `rng` in row-major order.
  static Tensor randn(Shape shape, Rng& rng);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int64_t numel() const { return node_->numel(); }
  const std::vector<real>& data() const { return node_->value; }
  std::vector<real>& mutable_data() { return node_->value; }
  const std::vector<real>& grad() const { return node_->grad; }
  std::vector<real>& mutable_grad() { return node_->grad; }
  bool requires_grad() const { return node_->requires_grad; }
  real item() const;
  Node* node() const { return node_.get(); }
  const NodePtr& ptr() const { return node_; }

 private:
  NodePtr node_;
};

/// While a guard is alive, ops run value-only (no graph edges, no backward
/// closures). Used for sampling and evaluation passes.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};
bool grad_enabled();

/// Runs reverse-mode accumulation from a scalar root. Leaf gradients
/// accumulate across calls; interior gradients are reset internally.
void backward(const Tensor& root);

// -- kernels ---------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
/// 2-D cross-correlation, stride 1, zero padding k/2 (odd square kernels),
/// so spatial extent is preserved. x: [n,ci,h,w], k: [co,ci,kh,kw]. The
/// overload fuses an optional per-channel bias [co].
Tensor conv2d(const Tensor& x, const Tensor& k);
Tensor conv2d(const Tensor& x, const Tensor& k, const Tensor& bias);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, real c);
Tensor mul_scalar(const Tensor& a, real c);
/// Multiplies every element of x by a graph scalar s of shape [1].
Tensor scale(const Tensor& x, const Tensor& s);
/// b has shape [c]; added to every spatial position of x: [n,c,h,w].
Tensor add_channel_bias(const Tensor& x, const Tensor& b);
/// p has shape [c,h,w]; replicated across a batch of size n.
Tensor broadcast_batch(const Tensor& p, int n);

Tensor silu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor softplus(const Tensor& x);
Tensor clamp(const Tensor& x, real lo, real hi);

Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);
/// [n, ...] -> [n], summing every non-batch dimension.
Tensor sum_per_sample(const Tensor& x);
/// [n] -> scalar mean.
Tensor mean_batch(const Tensor& x);

Tensor avg_pool2d(const Tensor& x, int stride);
Tensor nearest_upsample(const Tensor& x, int factor);
Tensor concat_channels(const Tensor& a, const Tensor& b);
Tensor slice_channels(const Tensor& x, int c0, int c1);
Tensor reshape(const Tensor& x, Shape shape);

}  // namespace dvp
