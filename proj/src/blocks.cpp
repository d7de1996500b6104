#include "dvp/blocks.hpp"

#include <cmath>

namespace dvp {

Tensor ParamStore::add(const std::string& name, Shape shape,
                       std::vector<real> init) {
  if (index_.count(name))
    throw UsageError("ParamStore: duplicate parameter name " + name);
  Parameter p;
  p.name = name;
  p.value = Tensor::leaf(std::move(shape), std::move(init));
  index_[name] = params_.size();
  params_.push_back(std::move(p));
  return params_.back().value;
}

Tensor ParamStore::add_randn(const std::string& name, Shape shape,
                             double stddev, Rng& rng) {
  std::vector<real> init(shape_numel(shape));
  for (auto& v : init) v = real(rng.normal() * stddev);
  return add(name, std::move(shape), std::move(init));
}

Tensor ParamStore::add_zeros(const std::string& name, Shape shape) {
  std::vector<real> init(shape_numel(shape), real(0));
  return add(name, std::move(shape), std::move(init));
}

bool ParamStore::has(const std::string& name) const {
  return index_.count(name) > 0;
}

Parameter& ParamStore::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw UsageError("ParamStore: unknown parameter " + name);
  return params_[it->second];
}

const Parameter& ParamStore::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw UsageError("ParamStore: unknown parameter " + name);
  return params_[it->second];
}

int64_t ParamStore::scalar_count() const {
  int64_t n = 0;
  for (const auto& p : params_) n += p.value.numel();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& p : params_) {
    auto& g = p.value.mutable_grad();
    g.assign(p.value.numel(), real(0));
  }
}

void ParamStore::init_ema() {
  for (auto& p : params_) p.ema = p.value.data();
}

void ParamStore::ema_update(double rate) {
  for (auto& p : params_) {
    const auto& v = p.value.data();
    if (p.ema.size() != v.size()) p.ema = v;
    for (size_t i = 0; i < v.size(); ++i)
      p.ema[i] = real(rate) * p.ema[i] + real(1.0 - rate) * v[i];
  }
}

void ParamStore::swap_ema() {
  for (auto& p : params_) {
    if (p.ema.size() != p.value.data().size())
      throw UsageError("swap_ema: shadows not initialized");
    p.value.mutable_data().swap(p.ema);
  }
}

Conv2dLayer::Conv2dLayer(ParamStore& ps, const std::string& name, int c_in,
                         int c_out, int ksize, Rng& rng, double weight_scale) {
  const double fan_in = double(c_in) * ksize * ksize;
  const double stddev = weight_scale / std::sqrt(fan_in);
  if (weight_scale == 0.0)
    w_ = ps.add_zeros(name + ".w", {c_out, c_in, ksize, ksize});
  else
    w_ = ps.add_randn(name + ".w", {c_out, c_in, ksize, ksize}, stddev, rng);
  b_ = ps.add_zeros(name + ".b", {c_out});
}

Tensor Conv2dLayer::forward(const Tensor& x) const {
  return conv2d(x, w_, b_);
}

ResBlock::ResBlock(ParamStore& ps, const std::string& name, int c_in,
                   int c_hid, int c_out, Rng& rng, bool zero_last) {
  conv1_ = Conv2dLayer(ps, name + ".conv1", c_in, c_hid, 3, rng);
  conv2_ = Conv2dLayer(ps, name + ".conv2", c_hid, c_out, 3, rng,
                       zero_last ? 0.0 : 1.0);
  if (c_in != c_out) proj_ = Conv2dLayer(ps, name + ".proj", c_in, c_out, 1, rng);
}

Tensor ResBlock::apply(const Tensor& x, const Tensor* channel_bias) const {
  Tensor h = conv1_.forward(silu(x));
  if (channel_bias) h = add_channel_bias(h, *channel_bias);
  h = conv2_.forward(silu(h));
  Tensor skip = proj_ ? proj_->forward(x) : x;
  return add(skip, h);
}

Tensor ResBlock::forward(const Tensor& x) const { return apply(x, nullptr); }

Tensor ResBlock::forward(const Tensor& x, const Tensor& channel_bias) const {
  return apply(x, &channel_bias);
}

}  // namespace dvp
