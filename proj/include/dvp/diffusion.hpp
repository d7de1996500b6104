#pragma once

#include <memory>
#include <vector>

#include "dvp/blocks.hpp"
#include "dvp/distributions.hpp"
#include "dvp/tensor.hpp"

namespace dvp {

/// Variance-preserving noise schedule with log-SNR linear in t over [0, 1]:
/// alpha(t)^2 = sigmoid(logsnr(t)), sigma(t)^2 = sigmoid(-logsnr(t)), so
/// alpha^2 + sigma^2 = 1 and the SNR decreases strictly in t.
struct DiffusionSchedule {
  int steps = 50;
  double logsnr_max = 7.0;  // t = 0
  double logsnr_min = -6.0;  // t = 1

  DiffusionSchedule() = default;
  DiffusionSchedule(int steps_count, double snr_max, double snr_min);

  double logsnr(double t) const { return logsnr_max + t * (logsnr_min - logsnr_max); }
  double alpha2(double t) const;
  double alpha(double t) const;
  double sigma2(double t) const { return 1.0 - alpha2(t); }
};

/// Noise-prediction interface; tests substitute analytic denoisers.
class Denoiser {
 public:
  virtual ~Denoiser() = default;
  virtual Tensor predict_eps(const Tensor& y, double t) const = 0;
};

/// Small residual conv net with a sinusoidal time embedding added per block.
class EpsNet : public Denoiser {
 public:
  EpsNet(ParamStore& ps, const std::string& prefix, int data_channels,
         int hidden_channels, int num_blocks, Rng& rng);
  Tensor predict_eps(const Tensor& y, double t) const override;

 private:
  Tensor time_bias(int block, double t) const;
  int hidden_ = 0;
  Conv2dLayer stem_, out_;
  std::vector<ResBlock> blocks_;
  std::vector<Tensor> temb_w_, temb_b_;
};

struct QSample {
  Tensor y;
  Tensor eps;
};

/// y_t = alpha_t * u + sigma_t * eps with fresh standard normal eps.
QSample q_sample(const DiffusionSchedule& sched, const Tensor& u, double t,
                 Rng& rng);

struct PosteriorCoeffs {
  double coef_y = 0;  // weight of y_t in the posterior mean
  double coef_u = 0;  // weight of u
  double var = 0;
};
/// Coefficients of q(y_s | y_t, u) as a function of alpha_s^2, alpha_t^2.
PosteriorCoeffs forward_posterior_coeffs(double alpha_s2, double alpha_t2);

/// q(y_s | y_t, u) for s < t; exact Gaussian conditioning of the forward
/// process (variance is analytic, not clamped).
DiagGaussian forward_posterior(const DiffusionSchedule& sched, const Tensor& y_t,
                               const Tensor& u, double t, double s);

/// r(y_s | y_t): posterior mean with u replaced by the epsilon-prediction
/// estimate u_hat = (y_t - sigma_t * eps_hat) / alpha_t; same variance.
DiagGaussian reverse_transition(const DiffusionSchedule& sched, const Tensor& y_t,
                                double t, double s, const Denoiser& net);

/// log N(u | y_0/alpha_0, sigma_0^2/alpha_0^2 I) per sample -> [n].
Tensor likelihood_term(const DiffusionSchedule& sched, const Tensor& u,
                       const Tensor& y0);

struct LvlbTerms {
  Tensor l0;  // E_q(y0|u) log r(u|y0), single-sample estimate
  Tensor l1;  // KL(q(y1|u) || N(0, I)), analytic
  Tensor lt;  // sum of T diffusion KL terms (or an unbiased 1-term estimate)
};
enum class LvlbMode { kFull, kStochastic };

/// Diffusion lower bound log r(u) >= l0 - l1 - lt, per sample.
LvlbTerms l_vlb(const DiffusionSchedule& sched, const Tensor& u,
                const Denoiser& net, Rng& rng, LvlbMode mode);

/// Ancestral sampling over the uniform grid 1 -> 0; the returned pseudoinput
/// is the mean y_0 / alpha_0 of the likelihood term.
Tensor sample_prior(const DiffusionSchedule& sched, int n, int channels,
                    int side, const Denoiser& net, Rng& rng);

}  // namespace dvp
