#include "dvp/distributions.hpp"

#include <cmath>

namespace dvp {

DiagGaussian make_gaussian(Tensor mu, Tensor logvar) {
  if (mu.shape() != logvar.shape())
    throw ShapeError("make_gaussian: mu and logvar shapes differ");
  return {std::move(mu), clamp(logvar, real(-10), real(10))};
}

Tensor rsample(const DiagGaussian& g, real temperature, Rng& rng) {
  if (temperature < 0) throw UsageError("rsample: temperature must be >= 0");
  if (temperature == 0) return g.mu;
  Tensor eps = Tensor::randn(g.mu.shape(), rng);
  Tensor std = exp(mul_scalar(g.logvar, real(0.5)));
  return add(g.mu, mul_scalar(mul(std, eps), temperature));
}

Tensor kl_elems(const DiagGaussian& q, const DiagGaussian& p) {
  if (q.mu.shape() != p.mu.shape() || q.logvar.shape() != p.logvar.shape())
    throw ShapeError("kl_elems: distribution shapes differ");
  Tensor dl = sub(q.logvar, p.logvar);
  Tensor var_ratio = exp(dl);
  Tensor dmu = sub(q.mu, p.mu);
  Tensor maha = mul(mul(dmu, dmu), exp(mul_scalar(p.logvar, real(-1))));
  // 0.5 * (sq^2/sp^2 + (mq-mp)^2/sp^2 - 1 - ln(sq^2/sp^2))
  return mul_scalar(
      add(add(var_ratio, maha), add_scalar(mul_scalar(dl, real(-1)), real(-1))),
      real(0.5));
}

Tensor kl_per_sample(const DiagGaussian& q, const DiagGaussian& p) {
  return sum_per_sample(kl_elems(q, p));
}

Tensor gaussian_log_prob(const DiagGaussian& g, const Tensor& x) {
  if (x.shape() != g.mu.shape())
    throw ShapeError("gaussian_log_prob: x shape differs from mu");
  Tensor dx = sub(x, g.mu);
  Tensor maha = mul(mul(dx, dx), exp(mul_scalar(g.logvar, real(-1))));
  Tensor terms = add_scalar(add(g.logvar, maha), real(std::log(2.0 * M_PI)));
  return mul_scalar(sum_per_sample(terms), real(-0.5));
}

Tensor gaussian_entropy(const Tensor& logsig, int64_t dims) {
  if (dims < 1) throw UsageError("gaussian_entropy: dims must be >= 1");
  if (logsig.numel() != 1)
    throw ShapeError("gaussian_entropy: logsig must be scalar");
  // dims/2 * ln(2*pi*e*sigma^2) = dims * (0.5*ln(2*pi*e) + log sigma)
  const real c = real(0.5 * std::log(2.0 * M_PI * std::exp(1.0)));
  return mul_scalar(add_scalar(logsig, c), real(dims));
}

Tensor bernoulli_log_prob(const BernoulliLikelihood& lik, const Tensor& x) {
  if (x.shape() != lik.logits.shape())
    throw ShapeError("bernoulli_log_prob: x shape differs from logits");
  for (real v : x.data())
    if (v != real(0) && v != real(1))
      throw UsageError("bernoulli_log_prob: x must be binary");
  // x*log(sigmoid(l)) + (1-x)*log(1-sigmoid(l))
  //   = -(x*softplus(-l) + (1-x)*softplus(l))
  Tensor sp_neg = softplus(mul_scalar(lik.logits, real(-1)));
  Tensor sp_pos = softplus(lik.logits);
  Tensor one_minus_x = add_scalar(mul_scalar(x, real(-1)), real(1));
  Tensor nll = add(mul(x, sp_neg), mul(one_minus_x, sp_pos));
  return mul_scalar(sum_per_sample(nll), real(-1));
}

}  // namespace dvp
