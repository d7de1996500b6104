#pragma once

#include <functional>
#include <vector>

#include "dvp/data.hpp"
#include "dvp/ladder.hpp"

namespace dvp {

struct AuReport {
  double threshold = 0.01;
  int chains = 5;
  int64_t total_dims = 0;
  double au_fraction = 0;                 // active share over all dimensions
  std::vector<double> per_layer_fraction; // top-down layer order
  std::vector<std::vector<double>> variance_per_layer;  // A_l per dimension
};

/// Returns posterior means per layer for a batch of binary inputs; one call
/// is one inference chain (fresh ancestor samples). Layer-major, each entry
/// n * M_l values.
using PosteriorMeanFn =
    std::function<std::vector<std::vector<real>>(const Tensor& x, Rng& rng)>;

/// Active-units statistic: variance across the dataset of the chain-averaged
/// posterior means, thresholded at delta. Inputs are binarized once per
/// image with a fixed seed; each of the k chains resamples ancestors.
AuReport active_units(const PosteriorMeanFn& posterior_means,
                      const std::vector<int>& layer_dims, const Dataset& test,
                      double delta, int chains, uint64_t seed,
                      int batch_size = 250);

AuReport active_units(const LadderVae& model, const Dataset& test,
                      double delta = 0.01, int chains = 5, uint64_t seed = 9000,
                      int batch_size = 250);

/// Mean negative ELBO bound in nats per datapoint, averaged over `seeds`
/// noise draws; the diffusion term uses the full T-step sum.
double eval_nll_bound(const LadderVae& model, const NormMatrix& S,
                      const Dataset& test, int seeds, uint64_t base_seed,
                      int batch_size = 250);

}  // namespace dvp
