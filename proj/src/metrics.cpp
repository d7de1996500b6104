#include "dvp/metrics.hpp"

#include <cmath>

namespace dvp {

AuReport active_units(const PosteriorMeanFn& posterior_means,
                      const std::vector<int>& layer_dims, const Dataset& test,
                      double delta, int chains, uint64_t seed, int batch_size) {
  if (test.count < 1) throw UsageError("active_units: test set is empty");
  if (chains < 1) throw UsageError("active_units: need at least one chain");

  const int layers = int(layer_dims.size());
  std::vector<std::vector<double>> sum(layers), sum_sq(layers);
  for (int l = 0; l < layers; ++l) {
    sum[l].assign(layer_dims[l], 0.0);
    sum_sq[l].assign(layer_dims[l], 0.0);
  }

  Rng bin_rng(seed);
  Rng chain_rng(seed + 1);
  for (int start = 0; start < test.count; start += batch_size) {
    const int stop = std::min(test.count, start + batch_size);
    const int b = stop - start;
    std::vector<int> idx;
    for (int i = start; i < stop; ++i) idx.push_back(i);
    Tensor x = binarize_dynamic(test, idx, bin_rng);

    // chain-averaged posterior means, laid out [n][dims] per layer
    std::vector<std::vector<double>> acc(layers);
    for (int l = 0; l < layers; ++l) acc[l].assign(size_t(b) * layer_dims[l], 0.0);
    for (int c = 0; c < chains; ++c) {
      auto means = posterior_means(x, chain_rng);
      if (int(means.size()) != layers)
        throw UsageError("active_units: layer count mismatch");
      for (int l = 0; l < layers; ++l)
        for (size_t j = 0; j < acc[l].size(); ++j)
          acc[l][j] += double(means[l][j]) / chains;
    }
    for (int l = 0; l < layers; ++l)
      for (int i = 0; i < b; ++i)
        for (int d = 0; d < layer_dims[l]; ++d) {
          const double m = acc[l][size_t(i) * layer_dims[l] + d];
          sum[l][d] += m;
          sum_sq[l][d] += m * m;
        }
  }

  AuReport report;
  report.threshold = delta;
  report.chains = chains;
  int64_t active = 0;
  for (int l = 0; l < layers; ++l) {
    report.variance_per_layer.emplace_back(layer_dims[l]);
    int64_t layer_active = 0;
    for (int d = 0; d < layer_dims[l]; ++d) {
      const double mean = sum[l][d] / test.count;
      const double var = std::max(0.0, sum_sq[l][d] / test.count - mean * mean);
      report.variance_per_layer[l][d] = var;
      if (var > delta) ++layer_active;
    }
    active += layer_active;
    report.total_dims += layer_dims[l];
    report.per_layer_fraction.push_back(double(layer_active) / layer_dims[l]);
  }
  report.au_fraction = double(active) / double(report.total_dims);
  return report;
}

AuReport active_units(const LadderVae& model, const Dataset& test, double delta,
                      int chains, uint64_t seed, int batch_size) {
  std::vector<int> dims;
  const int cz = model.config().latent_width;
  for (int side : model.layer_sides()) dims.push_back(cz * side * side);
  return active_units(
      [&model](const Tensor& x, Rng& rng) { return model.posterior_means(x, rng); },
      dims, test, delta, chains, seed, batch_size);
}

double eval_nll_bound(const LadderVae& model, const NormMatrix& S,
                      const Dataset& test, int seeds, uint64_t base_seed,
                      int batch_size) {
  if (test.count < 1) throw UsageError("eval_nll_bound: test set is empty");
  if (seeds < 1) throw UsageError("eval_nll_bound: need at least one seed");
  NoGradGuard ng;
  double acc = 0;
  for (int s = 0; s < seeds; ++s) {
    Rng rng(base_seed + uint64_t(s));
    for (int start = 0; start < test.count; start += batch_size) {
      const int stop = std::min(test.count, start + batch_size);
      std::vector<int> idx;
      for (int i = start; i < stop; ++i) idx.push_back(i);
      Tensor x = binarize_dynamic(test, idx, rng);
      ForwardResult res = model.forward_train(x, S, rng, LvlbMode::kFull);
      acc += res.parts.objective * double(idx.size());
    }
  }
  return -acc / (double(test.count) * seeds);
}

}  // namespace dvp
