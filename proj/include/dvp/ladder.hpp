#pragma once

#include <string>
#include <vector>

#include "dvp/blocks.hpp"
#include "dvp/dct.hpp"
#include "dvp/diffusion.hpp"
#include "dvp/distributions.hpp"
#include "dvp/tensor.hpp"

namespace dvp {

struct ScaleSpec {
  int side = 0;
  int layers = 0;
};

struct ModelConfig {
  int image_side = 28;
  int image_channels = 1;
  std::vector<ScaleSpec> scales = {{14, 4}, {7, 4}};  // ordered large -> small
  int latent_width = 1;                               // channels of each z_l
  int enc_blocks = 3;
  int ch_in = 32;
  int ch_hid = 32;
  std::string likelihood = "bernoulli";
  bool latent_aggregation = true;  // likelihood input: aggregated z vs h_dec
  bool use_pseudoinput = true;
  int pseudo_side = 7;
  int diff_steps = 50;
  int diff_blocks = 2;
  int diff_channels = 16;
  double logsnr_min = -6.0;
  double logsnr_max = 7.0;
  double logsig_init = -3.0;

  int total_layers() const;
  int pseudo_dims() const { return image_channels * pseudo_side * pseudo_side; }
  void validate() const;
};

/// Numeric decomposition of the per-batch objective (means over the batch).
struct ElboParts {
  double recon = 0;
  std::vector<double> kl_per_layer;
  double entropy = 0;
  double l0 = 0, l1 = 0, lt = 0;
  double objective = 0;

  double kl_total() const;
  /// recon - kl_total + entropy + (l0 - l1 - lt); equals `objective` up to
  /// rounding, asserted in tests.
  double sum_of_parts() const;
};

struct ForwardResult {
  Tensor objective;  // scalar; the quantity being maximized
  ElboParts parts;
};

struct GenerateResult {
  Tensor u;      // [n,c,d,d] pseudoinputs drawn from the prior
  Tensor u_x;    // [n,c,D,D] data-domain lifts
  Tensor means;  // [n,c,D,D] Bernoulli means
};

/// TopDown hierarchical VAE with pseudoinput-conditioned priors, a diffusion
/// prior over pseudoinputs, and latent aggregation in the likelihood.
class LadderVae {
 public:
  LadderVae(const ModelConfig& cfg, ParamStore& ps, Rng& init_rng);

  /// Training pass. Consumes randomness in a fixed order: pseudoinput noise,
  /// then posterior noise per layer top to bottom, then the diffusion bound
  /// (y_0 noise, then the timestep index in stochastic mode, then y_t noise).
  ForwardResult forward_train(const Tensor& x, const NormMatrix& S, Rng& rng,
                              LvlbMode mode = LvlbMode::kStochastic) const;

  GenerateResult generate(int n, double temperature, const NormMatrix& S,
                          Rng& rng) const;

  /// Layers whose scale side appears in posterior_sides sample from the
  /// posterior; all others sample from the u-conditioned prior at the given
  /// temperature. u is always drawn from r(u|x).
  Tensor generative_reconstruction(const Tensor& x, const NormMatrix& S,
                                   const std::vector<int>& posterior_sides,
                                   double temperature, Rng& rng) const;

  /// Posterior means per layer for one inference chain (ancestors sampled
  /// from q); layer-major, each entry holds n * M_l values.
  std::vector<std::vector<real>> posterior_means(const Tensor& x,
                                                 Rng& rng) const;

  /// Upsamples every latent to the output resolution, projects each with its
  /// 1x1 convolution and returns the 1/sqrt(L)-scaled sum.
  Tensor aggregate_latents(const std::vector<Tensor>& zs) const;

  const ModelConfig& config() const { return cfg_; }
  const DiffusionSchedule& schedule() const { return sched_; }
  const Denoiser& prior_net() const { return *eps_net_; }
  /// Spatial side of each stochastic layer, top-down order.
  const std::vector<int>& layer_sides() const { return layer_sides_; }

 private:
  struct TopDownRun {
    std::vector<Tensor> z;
    std::vector<Tensor> post_mu;
    std::vector<Tensor> kl;  // per layer, [n]
    Tensor h_dec;
  };
  std::vector<Tensor> bottom_up(const Tensor& x) const;
  /// posterior_mask[l] selects q over the prior at layer l.
  TopDownRun run_topdown(int n, const std::vector<Tensor>* h_encs,
                         const Tensor& u_x, const std::vector<bool>& posterior_mask,
                         double prior_temperature, bool need_kl, Rng& rng) const;
  Tensor likelihood_logits(const TopDownRun& run) const;
  Tensor pooled_pseudoinput(const Tensor& u_x, int side) const;

  ModelConfig cfg_;
  DiffusionSchedule sched_;
  Tensor logsig_;
  Conv2dLayer stem_;
  std::vector<std::vector<ResBlock>> enc_;  // [scale][block]
  std::vector<Tensor> h0_;                  // learned constant per scale entry

  struct TopDownLayer {
    int scale_idx = 0;
    int side = 0;
    ResBlock prior_rb, post_rb, update_rb;
    Conv2dLayer prior_head, post_head, z_in;
  };
  std::vector<TopDownLayer> layers_;
  std::vector<int> layer_sides_;
  std::vector<Conv2dLayer> agg_;  // per-layer 1x1 projections
  ResBlock head_rb_;
  Conv2dLayer head_out_;
  std::unique_ptr<EpsNet> eps_net_;
};

}  // namespace dvp
