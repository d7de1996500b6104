#include "dvp/diffusion.hpp"

#include <cmath>

namespace dvp {

namespace {

double sigmoid_d(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

DiffusionSchedule::DiffusionSchedule(int steps_count, double snr_max,
                                     double snr_min)
    : steps(steps_count), logsnr_max(snr_max), logsnr_min(snr_min) {
  if (steps < 1) throw UsageError("DiffusionSchedule: steps must be >= 1");
  if (!(logsnr_min < logsnr_max))
    throw UsageError("DiffusionSchedule: logsnr_min must be < logsnr_max");
}

double DiffusionSchedule::alpha2(double t) const { return sigmoid_d(logsnr(t)); }

double DiffusionSchedule::alpha(double t) const { return std::sqrt(alpha2(t)); }

EpsNet::EpsNet(ParamStore& ps, const std::string& prefix, int data_channels,
               int hidden_channels, int num_blocks, Rng& rng)
    : hidden_(hidden_channels) {
  stem_ = Conv2dLayer(ps, prefix + ".stem", data_channels, hidden_channels, 3, rng);
  for (int b = 0; b < num_blocks; ++b) {
    const std::string base = prefix + ".block" + std::to_string(b);
    blocks_.emplace_back(ps, base, hidden_channels, hidden_channels,
                         hidden_channels, rng);
    temb_w_.push_back(ps.add_randn(base + ".temb.w",
                                   {hidden_channels, hidden_channels},
                                   1.0 / std::sqrt(double(hidden_channels)), rng));
    temb_b_.push_back(ps.add_zeros(base + ".temb.b", {hidden_channels}));
  }
  // Zero-initialized head: an untrained net predicts eps = 0.
  out_ = Conv2dLayer(ps, prefix + ".out", hidden_channels, data_channels, 3, rng,
                     0.0);
}

Tensor EpsNet::time_bias(int block, double t) const {
  // Sinusoidal features of the (scaled) time, mixed by a learned linear map.
  const int f = hidden_;
  std::vector<real> feat(f);
  const int half = f / 2;
  for (int j = 0; j < half; ++j) {
    const double freq = std::exp(-std::log(10000.0) * j / std::max(1, half - 1));
    feat[j] = real(std::sin(1000.0 * t * freq));
    feat[half + j] = real(std::cos(1000.0 * t * freq));
  }
  Tensor row = Tensor::constant({1, f}, std::move(feat));
  Tensor mixed = matmul(row, temb_w_[block]);
  return add(reshape(mixed, {f}), temb_b_[block]);
}

Tensor EpsNet::predict_eps(const Tensor& y, double t) const {
  Tensor h = stem_.forward(y);
  for (size_t b = 0; b < blocks_.size(); ++b)
    h = blocks_[b].forward(h, time_bias(int(b), t));
  return out_.forward(silu(h));
}

QSample q_sample(const DiffusionSchedule& sched, const Tensor& u, double t,
                 Rng& rng) {
  if (t < 0.0 || t > 1.0) throw UsageError("q_sample: t must lie in [0, 1]");
  QSample out;
  out.eps = Tensor::randn(u.shape(), rng);
  const double a = sched.alpha(t);
  const double s = std::sqrt(sched.sigma2(t));
  out.y = add(mul_scalar(u, real(a)), mul_scalar(out.eps, real(s)));
  return out;
}

PosteriorCoeffs forward_posterior_coeffs(double alpha_s2, double alpha_t2) {
  PosteriorCoeffs c;
  const double alpha_s = std::sqrt(alpha_s2);
  const double alpha_t = std::sqrt(alpha_t2);
  c.coef_y = alpha_t * (1.0 - alpha_s2) / (alpha_s * (1.0 - alpha_t2));
  c.coef_u = (alpha_s2 - alpha_t2) / ((1.0 - alpha_t2) * alpha_s);
  c.var = (alpha_s2 - alpha_t2) / alpha_s2 * (1.0 - alpha_s2) / (1.0 - alpha_t2);
  return c;
}

DiagGaussian forward_posterior(const DiffusionSchedule& sched, const Tensor& y_t,
                               const Tensor& u, double t, double s) {
  if (!(s >= 0.0 && s < t && t <= 1.0))
    throw UsageError("forward_posterior: requires 0 <= s < t <= 1");
  const PosteriorCoeffs c = forward_posterior_coeffs(sched.alpha2(s), sched.alpha2(t));
  DiagGaussian g;
  g.mu = add(mul_scalar(y_t, real(c.coef_y)), mul_scalar(u, real(c.coef_u)));
  g.logvar = Tensor::full(y_t.shape(), real(std::log(c.var)));
  return g;
}

DiagGaussian reverse_transition(const DiffusionSchedule& sched, const Tensor& y_t,
                                double t, double s, const Denoiser& net) {
  if (!(s >= 0.0 && s < t && t <= 1.0))
    throw UsageError("reverse_transition: requires 0 <= s < t <= 1");
  Tensor eps_hat = net.predict_eps(y_t, t);
  if (eps_hat.shape() != y_t.shape())
    throw ShapeError("reverse_transition: denoiser changed the shape");
  const double a_t = sched.alpha(t);
  const double s_t = std::sqrt(sched.sigma2(t));
  Tensor u_hat =
      mul_scalar(sub(y_t, mul_scalar(eps_hat, real(s_t))), real(1.0 / a_t));
  return forward_posterior(sched, y_t, u_hat, t, s);
}

Tensor likelihood_term(const DiffusionSchedule& sched, const Tensor& u,
                       const Tensor& y0) {
  if (u.shape() != y0.shape())
    throw ShapeError("likelihood_term: u and y0 shapes differ");
  const double a0 = sched.alpha(0.0);
  const double c = sched.sigma2(0.0) / (a0 * a0);  // likelihood variance
  Tensor dev = sub(u, mul_scalar(y0, real(1.0 / a0)));
  Tensor maha = mul_scalar(mul(dev, dev), real(1.0 / c));
  Tensor terms = add_scalar(maha, real(std::log(2.0 * M_PI * c)));
  return mul_scalar(sum_per_sample(terms), real(-0.5));
}

LvlbTerms l_vlb(const DiffusionSchedule& sched, const Tensor& u,
                const Denoiser& net, Rng& rng, LvlbMode mode) {
  LvlbTerms out;
  const int T = sched.steps;

  QSample q0 = q_sample(sched, u, 0.0, rng);
  out.l0 = likelihood_term(sched, u, q0.y);

  // KL(N(a1*u, s1^2) || N(0,1)) elementwise, then per sample.
  const double a1_2 = sched.alpha2(1.0);
  const double s1_2 = sched.sigma2(1.0);
  out.l1 = sum_per_sample(add_scalar(mul_scalar(mul(u, u), real(0.5 * a1_2)),
                                     real(0.5 * (s1_2 - 1.0 - std::log(s1_2)))));

  auto step_kl = [&](int i) {
    const double t = double(i) / T;
    const double s = double(i - 1) / T;
    QSample qt = q_sample(sched, u, t, rng);
    DiagGaussian post = forward_posterior(sched, qt.y, u, t, s);
    DiagGaussian rev = reverse_transition(sched, qt.y, t, s, net);
    return kl_per_sample(post, rev);
  };

  if (mode == LvlbMode::kFull) {
    Tensor acc = step_kl(1);
    for (int i = 2; i <= T; ++i) acc = add(acc, step_kl(i));
    out.lt = acc;
  } else {
    const int i = rng.uniform_int(T) + 1;
    out.lt = mul_scalar(step_kl(i), real(T));
  }
  return out;
}

Tensor sample_prior(const DiffusionSchedule& sched, int n, int channels,
                    int side, const Denoiser& net, Rng& rng) {
  NoGradGuard ng;
  const int T = sched.steps;
  Tensor y = Tensor::randn({n, channels, side, side}, rng);
  for (int i = T; i >= 1; --i) {
    const double t = double(i) / T;
    const double s = double(i - 1) / T;
    DiagGaussian g = reverse_transition(sched, y, t, s, net);
    y = rsample(g, real(1), rng);
  }
  return mul_scalar(y, real(1.0 / sched.alpha(0.0)));
}

}  // namespace dvp
