#pragma once

#include "dvp/tensor.hpp"

namespace dvp {

/// Diagonal Gaussian given by mean and log-variance tensors of equal shape.
struct DiagGaussian {
  Tensor mu;
  Tensor logvar;
};

/// Constructor for learned parameterizations: clamps logvar to [-10, 10].
/// Analytic distributions (e.g. diffusion transitions) build the struct
/// directly with exact variances.
DiagGaussian make_gaussian(Tensor mu, Tensor logvar);

/// mu + temperature * exp(logvar/2) * eps, reparameterized.
Tensor rsample(const DiagGaussian& g, real temperature, Rng& rng);

/// Per-element KL(q || p); nonnegative up to rounding.
Tensor kl_elems(const DiagGaussian& q, const DiagGaussian& p);
/// KL summed over every non-batch dimension: [n,...] -> [n].
Tensor kl_per_sample(const DiagGaussian& q, const DiagGaussian& p);

/// log N(x | mu, exp(logvar)) summed per sample -> [n].
Tensor gaussian_log_prob(const DiagGaussian& g, const Tensor& x);

/// Entropy of an isotropic Gaussian over `dims` dimensions with the given
/// log standard deviation (scalar tensor): dims/2 * ln(2*pi*e*sigma^2).
Tensor gaussian_entropy(const Tensor& logsig, int64_t dims);

/// Per-pixel Bernoulli.
struct BernoulliLikelihood {
  Tensor logits;
};

/// Sum of x*log(p) + (1-x)*log(1-p) per sample via the stable softplus form.
/// x must be exactly binary.
Tensor bernoulli_log_prob(const BernoulliLikelihood& lik, const Tensor& x);

}  // namespace dvp
