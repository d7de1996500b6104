#pragma once

#include <array>
#include <cstdint>

namespace dvp {

/// Counter-based generator (Philox 4x32-10). A single seeded instance is
/// threaded through every sampling site so runs are reproducible; the full
/// state is small enough to persist in checkpoints.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0);

  uint32_t next_u32();
  uint64_t next_u64();

  /// Uniform in [0, 1).
  double uniform();

  /// Standard normal via Box-Muller (second draw cached).
  double normal();

  /// Uniform integer in {0, ..., n-1}, n >= 1.
  int uniform_int(int n);

  struct State {
    uint64_t key = 0;
    uint64_t counter = 0;
    std::array<uint32_t, 4> block{};
    int32_t block_pos = 4;  // 4 = exhausted
    int32_t have_spare = 0;
    double spare = 0.0;
  };
  State state() const;
  void set_state(const State& s);

 private:
  void refill();

  State s_;
};

}  // namespace dvp
