#pragma once

#include <string>

#include "dvp/diffusion.hpp"
#include "dvp/ladder.hpp"

namespace dvp {

struct TrainConfig {
  int epochs = 300;
  int batch_size = 250;
  int micro_batch = 50;  // gradient-accumulation slice; 0 = whole batch
  double lr_start = 1e-2;
  double lr_end = 1e-5;
  int warmup_epochs = 2;
  double weight_decay = 1e-6;
  double ema_rate = 0.999;
  double clip_norm = 5.0;
  uint64_t seed = 1;
  int subset = 0;  // 0 = use every training image
  int val_images = 10000;
  int ckpt_every = 50;  // epochs

  void validate() const;
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
};

/// Flat `key = value` text, one setting per line, '#' comments. Unknown or
/// repeated keys are hard errors; every key has an Appendix-table default.
RunConfig parse_config(const std::string& text);
RunConfig load_config_file(const std::string& path);
/// Canonical serialization (fixed key order); stored inside checkpoints.
std::string serialize_config(const RunConfig& cfg);

}  // namespace dvp
