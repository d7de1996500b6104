#include "dvp/ladder.hpp"

#include <cmath>
#include <sstream>

namespace dvp {

namespace {

bool pow2_ratio(int big, int small) {
  if (small < 1 || big < small || big % small != 0) return false;
  int r = big / small;
  while (r % 2 == 0) r /= 2;
  return r == 1;
}

double mean_value(const Tensor& per_sample) {
  double acc = 0;
  for (real v : per_sample.data()) acc += double(v);
  return acc / double(per_sample.numel());
}

}  // namespace

int ModelConfig::total_layers() const {
  int n = 0;
  for (const auto& s : scales) n += s.layers;
  return n;
}

void ModelConfig::validate() const {
  if (image_side < 4 || image_channels < 1)
    throw UsageError("config: invalid image extents");
  if (scales.empty()) throw UsageError("config: at least one scale required");
  int prev = image_side;
  for (const auto& s : scales) {
    if (s.layers < 1) throw UsageError("config: scale with no layers");
    if (!pow2_ratio(prev, s.side))
      throw UsageError("config: scale sides must divide the image side by powers of 2");
    prev = s.side;
  }
  if (latent_width < 1 || ch_in < 1 || ch_hid < 1 || enc_blocks < 1)
    throw UsageError("config: invalid channel or block counts");
  if (likelihood != "bernoulli")
    throw UsageError("config: unsupported likelihood " + likelihood);
  if (pseudo_side < 1 || pseudo_side > image_side)
    throw UsageError("config: pseudoinput side must lie in [1, image side]");
  if (diff_steps < 1 || diff_blocks < 1 || diff_channels < 1)
    throw UsageError("config: invalid diffusion prior settings");
  if (!(logsnr_min < logsnr_max))
    throw UsageError("config: logsnr_min must be < logsnr_max");
}

double ElboParts::kl_total() const {
  double acc = 0;
  for (double k : kl_per_layer) acc += k;
  return acc;
}

double ElboParts::sum_of_parts() const {
  return recon - kl_total() + entropy + (l0 - l1 - lt);
}

LadderVae::LadderVae(const ModelConfig& cfg, ParamStore& ps, Rng& rng)
    : cfg_(cfg), sched_(cfg.diff_steps, cfg.logsnr_max, cfg.logsnr_min) {
  cfg_.validate();
  const int cz = cfg_.latent_width;
  const int ci = cfg_.ch_in;
  const int ch = cfg_.ch_hid;

  logsig_ = ps.add("model.logsig", {1}, {real(cfg_.logsig_init)});
  stem_ = Conv2dLayer(ps, "model.stem", cfg_.image_channels, ci, 3, rng);

  for (size_t si = 0; si < cfg_.scales.size(); ++si) {
    enc_.emplace_back();
    for (int b = 0; b < cfg_.enc_blocks; ++b)
      enc_.back().emplace_back(ps, "model.enc" + std::to_string(si) + "." +
                                       std::to_string(b),
                               ci, ch, ci, rng);
  }

  for (size_t si = 0; si < cfg_.scales.size(); ++si) {
    const int side = cfg_.scales[si].side;
    h0_.push_back(ps.add_randn("model.h0." + std::to_string(si),
                               {ci, side, side}, 0.05, rng));
  }

  // TopDown layers, top (smallest scale) first.
  int li = 0;
  for (int si = int(cfg_.scales.size()) - 1; si >= 0; --si) {
    const int side = cfg_.scales[si].side;
    for (int l = 0; l < cfg_.scales[si].layers; ++l, ++li) {
      TopDownLayer layer;
      layer.scale_idx = si;
      layer.side = side;
      const std::string base = "model.td" + std::to_string(li);
      layer.prior_rb = ResBlock(ps, base + ".prior", ci + cfg_.image_channels,
                                ch, ci, rng);
      layer.prior_head = Conv2dLayer(ps, base + ".prior_out", ci, 2 * cz, 1,
                                     rng, 0.0);
      layer.post_rb = ResBlock(ps, base + ".post", ci, ch, ci, rng);
      layer.post_head = Conv2dLayer(ps, base + ".post_out", ci, 2 * cz, 1, rng,
                                    0.0);
      layer.z_in = Conv2dLayer(ps, base + ".zin", cz, ci, 1, rng);
      layer.update_rb = ResBlock(ps, base + ".update", ci, ch, ci, rng);
      layer_sides_.push_back(side);
      layers_.push_back(std::move(layer));
    }
  }

  for (int l = 0; l < cfg_.total_layers(); ++l)
    agg_.push_back(Conv2dLayer(ps, "model.agg" + std::to_string(l), cz, ci, 1, rng));
  // the likelihood head runs at full image resolution; keep it narrow
  head_rb_ = ResBlock(ps, "model.head", ci, std::max(4, ch / 2), ci, rng);
  head_out_ = Conv2dLayer(ps, "model.head_out", ci, cfg_.image_channels, 1, rng,
                          0.0);

  eps_net_ = std::make_unique<EpsNet>(ps, "prior", cfg_.image_channels,
                                      cfg_.diff_channels, cfg_.diff_blocks, rng);
}

std::vector<Tensor> LadderVae::bottom_up(const Tensor& x) const {
  if (x.shape().size() != 4 || x.shape()[1] != cfg_.image_channels ||
      x.shape()[2] != cfg_.image_side || x.shape()[3] != cfg_.image_side)
    throw ShapeError("bottom_up: input does not match the configured image shape");
  std::vector<Tensor> features;
  Tensor h = stem_.forward(x);
  int side = cfg_.image_side;
  for (size_t si = 0; si < cfg_.scales.size(); ++si) {
    const int target = cfg_.scales[si].side;
    if (side != target) {
      h = avg_pool2d(h, side / target);
      side = target;
    }
    for (const auto& block : enc_[si]) h = block.forward(h);
    features.push_back(h);
  }
  return features;
}

Tensor LadderVae::pooled_pseudoinput(const Tensor& u_x, int side) const {
  if (side == cfg_.image_side) return u_x;
  return avg_pool2d(u_x, cfg_.image_side / side);
}

LadderVae::TopDownRun LadderVae::run_topdown(
    int n, const std::vector<Tensor>* h_encs, const Tensor& u_x,
    const std::vector<bool>& posterior_mask, double prior_temperature,
    bool need_kl, Rng& rng) const {
  TopDownRun run;
  Tensor h_dec;
  int prev_scale = -1;
  int prev_side = 0;
  // pooled pseudoinput per scale entry, computed on first use
  std::vector<Tensor> u_pooled(cfg_.scales.size());

  for (size_t li = 0; li < layers_.size(); ++li) {
    const TopDownLayer& layer = layers_[li];
    if (layer.scale_idx != prev_scale) {
      Tensor base = broadcast_batch(h0_[layer.scale_idx], n);
      if (prev_scale < 0)
        h_dec = base;
      else
        h_dec = add(nearest_upsample(h_dec, layer.side / prev_side), base);
      prev_scale = layer.scale_idx;
      prev_side = layer.side;
    }

    const bool want_posterior = posterior_mask[li];
    const bool want_prior = need_kl || !want_posterior;

    DiagGaussian prior, posterior;
    if (want_prior) {
      if (!u_pooled[layer.scale_idx].defined())
        u_pooled[layer.scale_idx] = pooled_pseudoinput(u_x, layer.side);
      Tensor pin = concat_channels(h_dec, u_pooled[layer.scale_idx]);
      Tensor pf = layer.prior_head.forward(layer.prior_rb.forward(pin));
      prior = make_gaussian(slice_channels(pf, 0, cfg_.latent_width),
                            slice_channels(pf, cfg_.latent_width,
                                           2 * cfg_.latent_width));
    }
    if (want_posterior || need_kl) {
      if (!h_encs)
        throw UsageError("run_topdown: posterior requested without encoder features");
      Tensor qin = add(h_dec, (*h_encs)[layer.scale_idx]);
      Tensor qf = layer.post_head.forward(layer.post_rb.forward(qin));
      posterior = make_gaussian(slice_channels(qf, 0, cfg_.latent_width),
                                slice_channels(qf, cfg_.latent_width,
                                               2 * cfg_.latent_width));
    }

    Tensor z = want_posterior ? rsample(posterior, real(1), rng)
                              : rsample(prior, real(prior_temperature), rng);
    if (need_kl) run.kl.push_back(kl_per_sample(posterior, prior));
    if (want_posterior || need_kl) run.post_mu.push_back(posterior.mu);

    h_dec = layer.update_rb.forward(add(h_dec, layer.z_in.forward(z)));
    run.z.push_back(z);
  }
  run.h_dec = h_dec;
  return run;
}

Tensor LadderVae::aggregate_latents(const std::vector<Tensor>& zs) const {
  if (zs.size() != layers_.size())
    throw ShapeError("aggregate_latents: expects one latent per layer");
  Tensor acc;
  for (size_t l = 0; l < zs.size(); ++l) {
    Tensor zl = zs[l];
    const int factor = cfg_.image_side / zl.shape()[2];
    if (factor > 1) zl = nearest_upsample(zl, factor);
    Tensor proj = agg_[l].forward(zl);
    acc = l == 0 ? proj : add(acc, proj);
  }
  return mul_scalar(acc, real(1.0 / std::sqrt(double(zs.size()))));
}

Tensor LadderVae::likelihood_logits(const TopDownRun& run) const {
  Tensor in;
  if (cfg_.latent_aggregation) {
    in = aggregate_latents(run.z);
  } else {
    Tensor h = run.h_dec;
    const int factor = cfg_.image_side / h.shape()[2];
    if (factor > 1) h = nearest_upsample(h, factor);
    in = h;
  }
  return head_out_.forward(silu(head_rb_.forward(in)));
}

ForwardResult LadderVae::forward_train(const Tensor& x, const NormMatrix& S,
                                       Rng& rng, LvlbMode mode) const {
  const int n = x.shape()[0];
  PseudoinputPair pair;
  Tensor u_x;
  if (cfg_.use_pseudoinput) {
    pair = sample_pseudoinput(x, S, logsig_, rng);
    u_x = pair.u_x;
  } else {
    u_x = Tensor::zeros({n, cfg_.image_channels, cfg_.image_side, cfg_.image_side});
  }

  std::vector<Tensor> h_encs = bottom_up(x);
  std::vector<bool> mask(layers_.size(), true);
  TopDownRun run = run_topdown(n, &h_encs, u_x, mask, 1.0, true, rng);

  Tensor logits = likelihood_logits(run);
  Tensor recon = bernoulli_log_prob(BernoulliLikelihood{logits}, x);

  Tensor obj_n = recon;
  for (const Tensor& kl : run.kl) obj_n = sub(obj_n, kl);

  ForwardResult res;
  res.parts.recon = mean_value(recon);
  for (const Tensor& kl : run.kl) res.parts.kl_per_layer.push_back(mean_value(kl));

  Tensor objective;
  if (cfg_.use_pseudoinput) {
    LvlbTerms lv = l_vlb(sched_, pair.u, *eps_net_, rng, mode);
    obj_n = add(obj_n, sub(lv.l0, add(lv.l1, lv.lt)));
    Tensor entropy = gaussian_entropy(pair.logsig, cfg_.pseudo_dims());
    objective = add(mean_batch(obj_n), entropy);
    res.parts.l0 = mean_value(lv.l0);
    res.parts.l1 = mean_value(lv.l1);
    res.parts.lt = mean_value(lv.lt);
    res.parts.entropy = double(entropy.item());
  } else {
    objective = mean_batch(obj_n);
  }
  res.parts.objective = double(objective.item());
  res.objective = objective;

  if (!std::isfinite(res.parts.objective)) {
    std::ostringstream os;
    os << "forward_train: non-finite objective; recon=" << res.parts.recon
       << " kl_total=" << res.parts.kl_total() << " entropy=" << res.parts.entropy
       << " l0=" << res.parts.l0 << " l1=" << res.parts.l1
       << " lt=" << res.parts.lt;
    throw TrainFault(os.str());
  }
  return res;
}

GenerateResult LadderVae::generate(int n, double temperature,
                                   const NormMatrix& S, Rng& rng) const {
  NoGradGuard ng;
  GenerateResult out;
  if (cfg_.use_pseudoinput) {
    out.u = sample_prior(sched_, n, cfg_.image_channels, cfg_.pseudo_side,
                         *eps_net_, rng);
    out.u_x = dct_lift(out.u, S, cfg_.image_side);
  } else {
    out.u = Tensor::zeros({n, cfg_.image_channels, cfg_.pseudo_side, cfg_.pseudo_side});
    out.u_x = Tensor::zeros({n, cfg_.image_channels, cfg_.image_side, cfg_.image_side});
  }
  std::vector<bool> mask(layers_.size(), false);
  TopDownRun run = run_topdown(n, nullptr, out.u_x, mask, temperature, false, rng);
  out.means = sigmoid(likelihood_logits(run));
  return out;
}

Tensor LadderVae::generative_reconstruction(const Tensor& x, const NormMatrix& S,
                                            const std::vector<int>& posterior_sides,
                                            double temperature, Rng& rng) const {
  NoGradGuard ng;
  for (int side : posterior_sides) {
    bool known = false;
    for (const auto& s : cfg_.scales) known = known || s.side == side;
    if (!known)
      throw UsageError("generative_reconstruction: unknown scale side " +
                       std::to_string(side));
  }
  const int n = x.shape()[0];
  Tensor u_x;
  if (cfg_.use_pseudoinput) {
    PseudoinputPair pair = sample_pseudoinput(x, S, logsig_, rng);
    u_x = pair.u_x;
  } else {
    u_x = Tensor::zeros({n, cfg_.image_channels, cfg_.image_side, cfg_.image_side});
  }

  std::vector<bool> mask;
  bool any_posterior = false;
  for (const auto& layer : layers_) {
    bool use_q = false;
    for (int side : posterior_sides) use_q = use_q || side == layer.side;
    mask.push_back(use_q);
    any_posterior = any_posterior || use_q;
  }
  std::vector<Tensor> h_encs;
  if (any_posterior) h_encs = bottom_up(x);
  TopDownRun run = run_topdown(n, any_posterior ? &h_encs : nullptr, u_x, mask,
                               temperature, false, rng);
  return sigmoid(likelihood_logits(run));
}

std::vector<std::vector<real>> LadderVae::posterior_means(const Tensor& x,
                                                          Rng& rng) const {
  NoGradGuard ng;
  const int n = x.shape()[0];
  Tensor u_x = Tensor::zeros({n, cfg_.image_channels, cfg_.image_side, cfg_.image_side});
  std::vector<Tensor> h_encs = bottom_up(x);
  std::vector<bool> mask(layers_.size(), true);
  TopDownRun run = run_topdown(n, &h_encs, u_x, mask, 1.0, false, rng);
  std::vector<std::vector<real>> out;
  for (const Tensor& mu : run.post_mu) out.push_back(mu.data());
  return out;
}

}  // namespace dvp
