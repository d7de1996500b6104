#pragma once

#include <string>
#include <vector>

#include "dvp/blocks.hpp"
#include "dvp/config.hpp"
#include "dvp/data.hpp"
#include "dvp/ladder.hpp"

namespace dvp {

/// Linear warmup from zero to lr0, then cosine from lr0 down to lr1.
double cosine_lr(int64_t step, int64_t total_steps, int64_t warmup_steps,
                 double lr0, double lr1);

/// Scales all gradients so the global L2 norm is at most max_norm; returns
/// the pre-clip norm for logging.
double clip_global_norm(std::vector<Parameter>& params, double max_norm);

/// Adamax with bias-corrected first moment and decoupled weight decay
/// (applied before the update).
class Adamax {
 public:
  explicit Adamax(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-7);
  void step(std::vector<Parameter>& params, double lr, double weight_decay);
  int64_t steps_taken() const { return t_; }

 private:
  double beta1_, beta2_, eps_;
  int64_t t_ = 0;
  std::vector<std::vector<real>> m_, v_;
};

struct FitResult {
  int64_t steps = 0;
  double final_val_nll = 0;  // nats per datapoint, lower is better
  double best_val_nll = 0;
  double first_epoch_train_loss = 0;
  double last_epoch_train_loss = 0;
  std::string best_ckpt;
  std::string last_ckpt;
};

/// Seed used for every validation pass so train-time and eval-time numbers
/// are directly comparable.
constexpr uint64_t kEvalSeed = 9000;

/// Full optimization loop: shuffled batches with dynamic binarization,
/// Adamax + cosine LR + global-norm clipping + EMA, a JSONL line per step,
/// a validation record per epoch, periodic and best checkpoints under
/// out_dir. config_text is embedded in every checkpoint.
FitResult fit(const LadderVae& model, ParamStore& ps, const Dataset& train,
              const Dataset& val, const NormMatrix& S, const TrainConfig& tc,
              const std::string& config_text, const std::string& out_dir,
              const std::string& log_path);

/// Mean negative ELBO over a dataset in nats per datapoint; uses EMA
/// weights and the full diffusion sum.
double validation_nll(const LadderVae& model, ParamStore& ps, const Dataset& ds,
                      const NormMatrix& S, int batch_size, uint64_t seed);

}  // namespace dvp
