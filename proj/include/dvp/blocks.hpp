#pragma once

#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "dvp/tensor.hpp"

namespace dvp {

/// Named trainable tensor plus its EMA shadow.
struct Parameter {
  std::string name;
  Tensor value;
  std::vector<real> ema;
};

/// Registry of model parameters; names are unique, order is registration
/// order and fixed for the life of the model (the optimizer and checkpoints
/// rely on it).
class ParamStore {
 public:
  Tensor add(const std::string& name, Shape shape, std::vector<real> init);
  Tensor add_randn(const std::string& name, Shape shape, double stddev, Rng& rng);
  Tensor add_zeros(const std::string& name, Shape shape);

  bool has(const std::string& name) const;
  Parameter& at(const std::string& name);
  const Parameter& at(const std::string& name) const;
  std::vector<Parameter>& all() { return params_; }
  const std::vector<Parameter>& all() const { return params_; }
  size_t size() const { return params_.size(); }
  int64_t scalar_count() const;

  void zero_grad();

  void init_ema();
  void ema_update(double rate);
  /// Exchanges parameter values with their EMA shadows (call in pairs).
  void swap_ema();

 private:
  std::vector<Parameter> params_;
  std::unordered_map<std::string, size_t> index_;
};

/// 3x3 or 1x1 convolution with per-channel bias.
class Conv2dLayer {
 public:
  Conv2dLayer() = default;
  /// weight_scale = 0 zero-initializes the kernel (used for residual tails
  /// and distribution heads so blocks start as identity maps).
  Conv2dLayer(ParamStore& ps, const std::string& name, int c_in, int c_out,
              int ksize, Rng& rng, double weight_scale = 1.0);
  Tensor forward(const Tensor& x) const;

 private:
  Tensor w_, b_;
};

/// SiLU pre-activation residual block with two convolutions and an optional
/// 1x1 projection when channel counts differ.
class ResBlock {
 public:
  ResBlock() = default;
  ResBlock(ParamStore& ps, const std::string& name, int c_in, int c_hid,
           int c_out, Rng& rng, bool zero_last = true);
  Tensor forward(const Tensor& x) const;
  /// Adds a per-channel conditioning bias after the first convolution.
  Tensor forward(const Tensor& x, const Tensor& channel_bias) const;

 private:
  Tensor apply(const Tensor& x, const Tensor* channel_bias) const;
  Conv2dLayer conv1_, conv2_;
  std::optional<Conv2dLayer> proj_;
};

}  // namespace dvp
