#pragma once

#include <string>
#include <vector>

#include "dvp/blocks.hpp"
#include "dvp/dct.hpp"
#include "dvp/rng.hpp"

namespace dvp {

/// Binary container: magic "DVPV1", version, config snapshot, RNG state,
/// step counter, string metadata, then a named tensor table (dtype, shape,
/// raw little-endian data). Loading and re-saving is byte-identical.
struct Checkpoint {
  enum Dtype : uint8_t { kF64 = 0, kF32 = 1 };
  struct Entry {
    std::string name;
    Dtype dtype = kF64;
    Shape shape;
    std::vector<uint8_t> raw;

    std::vector<double> values() const;
    static Entry from_values(std::string name, Shape shape,
                             const std::vector<real>& v);
    static Entry from_doubles(std::string name, Shape shape,
                              const std::vector<double>& v);
  };

  uint32_t version = 1;
  std::string config_text;
  Rng::State rng;
  uint64_t step = 0;
  std::vector<std::pair<std::string, std::string>> meta;
  std::vector<Entry> tensors;

  const Entry* find(const std::string& name) const;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

/// Collects parameters (and EMA shadows as "ema.<name>") plus the
/// normalization matrix as "dct.S" with its digest in the metadata.
Checkpoint build_checkpoint(const std::string& config_text, const ParamStore& ps,
                            const NormMatrix& S, const Rng::State& rng,
                            uint64_t step);

/// Restores parameter values and EMA shadows by name; every model parameter
/// must be present exactly once.
void restore_params(const Checkpoint& ckpt, ParamStore& ps);
NormMatrix restore_norm_matrix(const Checkpoint& ckpt);

}  // namespace dvp
