#include "dvp/trainer.hpp"

#include <cmath>
#include <fstream>
#include <json.hpp>

#include "dvp/checkpoint.hpp"

namespace dvp {

double cosine_lr(int64_t step, int64_t total_steps, int64_t warmup_steps,
                 double lr0, double lr1) {
  if (step < 0 || step > total_steps) throw UsageError("cosine_lr: step out of range");
  if (warmup_steps > 0 && step < warmup_steps)
    return lr0 * double(step) / double(warmup_steps);
  const double span = double(total_steps - warmup_steps);
  const double progress = span > 0 ? double(step - warmup_steps) / span : 1.0;
  return lr1 + 0.5 * (lr0 - lr1) * (1.0 + std::cos(M_PI * progress));
}

double clip_global_norm(std::vector<Parameter>& params, double max_norm) {
  if (max_norm <= 0) throw UsageError("clip_global_norm: max_norm must be > 0");
  double sq = 0;
  for (const auto& p : params)
    for (real g : p.value.grad()) sq += double(g) * double(g);
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const real scale = real(max_norm / norm);
    for (auto& p : params)
      for (real& g : p.value.mutable_grad()) g *= scale;
  }
  return norm;
}

Adamax::Adamax(double beta1, double beta2, double eps)
    : beta1_(beta1), beta2_(beta2), eps_(eps) {}

void Adamax::step(std::vector<Parameter>& params, double lr,
                  double weight_decay) {
  if (m_.empty()) {
    for (const auto& p : params) {
      m_.emplace_back(p.value.numel(), real(0));
      v_.emplace_back(p.value.numel(), real(0));
    }
  }
  if (m_.size() != params.size())
    throw UsageError("Adamax: parameter set changed between steps");
  ++t_;
  const double bias = 1.0 - std::pow(beta1_, double(t_));
  for (size_t i = 0; i < params.size(); ++i) {
    auto& value = params[i].value.mutable_data();
    const auto& grad = params[i].value.grad();
    if (grad.empty()) continue;
    auto& m = m_[i];
    auto& v = v_[i];
    for (size_t j = 0; j < value.size(); ++j) {
      const double g = double(grad[j]);
      if (!std::isfinite(g)) throw TrainFault("Adamax: non-finite gradient");
      if (weight_decay != 0) value[j] -= real(lr * weight_decay) * value[j];
      m[j] = real(beta1_) * m[j] + real(1.0 - beta1_) * real(g);
      v[j] = std::max(real(beta2_) * v[j], real(std::abs(g)));
      value[j] -= real(lr) * (m[j] / real(bias)) / (v[j] + real(eps_));
    }
  }
}

double validation_nll(const LadderVae& model, ParamStore& ps, const Dataset& ds,
                      const NormMatrix& S, int batch_size, uint64_t seed) {
  NoGradGuard ng;
  const bool have_ema = !ps.all().empty() && !ps.all()[0].ema.empty();
  if (have_ema) ps.swap_ema();
  Rng rng(seed);
  double acc = 0;
  for (int start = 0; start < ds.count; start += batch_size) {
    const int stop = std::min(ds.count, start + batch_size);
    std::vector<int> idx;
    for (int i = start; i < stop; ++i) idx.push_back(i);
    Tensor x = binarize_dynamic(ds, idx, rng);
    ForwardResult res = model.forward_train(x, S, rng, LvlbMode::kFull);
    acc += res.parts.objective * double(idx.size());
  }
  if (have_ema) ps.swap_ema();
  return -acc / double(ds.count);
}

FitResult fit(const LadderVae& model, ParamStore& ps, const Dataset& train,
              const Dataset& val, const NormMatrix& S, const TrainConfig& tc,
              const std::string& config_text, const std::string& out_dir,
              const std::string& log_path) {
  tc.validate();
  std::ofstream log(log_path);
  if (!log) throw UsageError("cannot open training log " + log_path);

  const int n_train = tc.subset > 0 ? std::min(tc.subset, train.count) : train.count;
  const int steps_per_epoch = std::max(1, n_train / tc.batch_size);
  const int64_t total_steps = int64_t(steps_per_epoch) * tc.epochs;
  const int64_t warmup_steps = int64_t(steps_per_epoch) * tc.warmup_epochs;

  Rng rng(tc.seed);
  Adamax opt;
  ps.init_ema();

  FitResult out;
  out.best_val_nll = std::numeric_limits<double>::infinity();
  int64_t step = 0;
  std::vector<int> order(n_train);

  auto save = [&](const std::string& name) {
    const std::string path = out_dir + "/" + name;
    save_checkpoint(path, build_checkpoint(config_text, ps, S, rng.state(),
                                           uint64_t(step)));
    return path;
  };

  for (int epoch = 1; epoch <= tc.epochs; ++epoch) {
    for (int i = 0; i < n_train; ++i) order[i] = i;
    for (int i = n_train - 1; i > 0; --i)
      std::swap(order[i], order[rng.uniform_int(i + 1)]);

    double epoch_loss = 0;
    const int micro = tc.micro_batch > 0 ? std::min(tc.micro_batch, tc.batch_size)
                                         : tc.batch_size;
    for (int b = 0; b < steps_per_epoch; ++b, ++step) {
      const auto batch_begin = order.begin() + int64_t(b) * tc.batch_size;

      // gradient accumulation over micro-batches; grads of the mean loss
      // over the full batch accumulate on the leaves across backward calls
      ps.zero_grad();
      ElboParts parts;
      parts.kl_per_layer.assign(model.layer_sides().size(), 0.0);
      try {
        for (int off = 0; off < tc.batch_size; off += micro) {
          const int m = std::min(micro, tc.batch_size - off);
          std::vector<int> idx(batch_begin + off, batch_begin + off + m);
          Tensor x = binarize_dynamic(train, idx, rng);
          ForwardResult res = model.forward_train(x, S, rng, LvlbMode::kStochastic);
          const double w = double(m) / double(tc.batch_size);
          backward(mul_scalar(res.objective, real(-w)));
          parts.recon += w * res.parts.recon;
          for (size_t l = 0; l < parts.kl_per_layer.size(); ++l)
            parts.kl_per_layer[l] += w * res.parts.kl_per_layer[l];
          parts.entropy += w * res.parts.entropy;
          parts.l0 += w * res.parts.l0;
          parts.l1 += w * res.parts.l1;
          parts.lt += w * res.parts.lt;
          parts.objective += w * res.parts.objective;
        }
      } catch (const TrainFault& fault) {
        // last periodic/best checkpoints stay on disk untouched
        log << nlohmann::ordered_json{{"step", step}, {"fault", fault.what()}}
            << "\n";
        throw;
      }

      const double lr = cosine_lr(step, total_steps, warmup_steps, tc.lr_start,
                                  tc.lr_end);
      const double grad_norm = clip_global_norm(ps.all(), tc.clip_norm);
      opt.step(ps.all(), lr, tc.weight_decay);
      ps.ema_update(tc.ema_rate);

      const double loss_value = -parts.objective;
      epoch_loss += loss_value;
      nlohmann::ordered_json parts_json;
      parts_json["recon"] = parts.recon;
      parts_json["kl"] = parts.kl_per_layer;
      parts_json["entropy"] = parts.entropy;
      parts_json["l0"] = parts.l0;
      parts_json["l1"] = parts.l1;
      parts_json["lt"] = parts.lt;
      log << nlohmann::ordered_json{{"step", step},
                                    {"epoch", epoch},
                                    {"lr", lr},
                                    {"loss", loss_value},
                                    {"parts", parts_json},
                                    {"grad_norm", grad_norm}}
          << "\n";
    }
    epoch_loss /= double(steps_per_epoch);
    if (epoch == 1) out.first_epoch_train_loss = epoch_loss;
    out.last_epoch_train_loss = epoch_loss;

    const double val_nll =
        validation_nll(model, ps, val, S, tc.batch_size, kEvalSeed);
    log << nlohmann::ordered_json{{"epoch", epoch},
                                  {"train_loss", epoch_loss},
                                  {"val_nll", val_nll}}
        << "\n";
    log.flush();

    if (val_nll < out.best_val_nll) {
      out.best_val_nll = val_nll;
      out.best_ckpt = save("best.ckpt");
    }
    if (epoch % tc.ckpt_every == 0) save("epoch_" + std::to_string(epoch) + ".ckpt");
    out.final_val_nll = val_nll;
  }
  out.last_ckpt = save("last.ckpt");
  out.steps = step;
  return out;
}

}  // namespace dvp
