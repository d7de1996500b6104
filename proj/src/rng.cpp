#include "dvp/rng.hpp"

#include <cmath>

#include "dvp/common.hpp"

namespace dvp {
namespace {

constexpr uint32_t kPhiloxM0 = 0xD2511F53u;
constexpr uint32_t kPhiloxM1 = 0xCD9E8D57u;
constexpr uint32_t kWeyl0 = 0x9E3779B9u;
constexpr uint32_t kWeyl1 = 0xBB67AE85u;

inline void philox_round(std::array<uint32_t, 4>& ctr, uint32_t k0, uint32_t k1) {
  const uint64_t p0 = uint64_t(kPhiloxM0) * ctr[0];
  const uint64_t p1 = uint64_t(kPhiloxM1) * ctr[2];
  const uint32_t hi0 = uint32_t(p0 >> 32), lo0 = uint32_t(p0);
  const uint32_t hi1 = uint32_t(p1 >> 32), lo1 = uint32_t(p1);
  ctr = {hi1 ^ ctr[1] ^ k0, lo1, hi0 ^ ctr[3] ^ k1, lo0};
}

std::array<uint32_t, 4> philox10(uint64_t counter, uint64_t key) {
  std::array<uint32_t, 4> ctr = {uint32_t(counter), uint32_t(counter >> 32), 0u, 0u};
  uint32_t k0 = uint32_t(key), k1 = uint32_t(key >> 32);
  for (int round = 0; round < 10; ++round) {
    philox_round(ctr, k0, k1);
    k0 += kWeyl0;
    k1 += kWeyl1;
  }
  return ctr;
}

}  // namespace

Rng::Rng(uint64_t seed) { s_.key = seed; }

void Rng::refill() {
  s_.block = philox10(s_.counter, s_.key);
  s_.counter++;
  s_.block_pos = 0;
}

uint32_t Rng::next_u32() {
  if (s_.block_pos >= 4) refill();
  return s_.block[s_.block_pos++];
}

uint64_t Rng::next_u64() {
  const uint64_t lo = next_u32();
  const uint64_t hi = next_u32();
  return (hi << 32) | lo;
}

double Rng::uniform() {
  // 53 random bits -> [0, 1)
  return double(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::normal() {
  if (s_.have_spare) {
    s_.have_spare = 0;
    return s_.spare;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * M_PI * u2;
  s_.spare = r * std::sin(theta);
  s_.have_spare = 1;
  return r * std::cos(theta);
}

int Rng::uniform_int(int n) {
  if (n < 1) throw UsageError("uniform_int: n must be >= 1");
  // rejection sampling to avoid modulo bias
  const uint64_t limit = (~uint64_t(0) / uint64_t(n)) * uint64_t(n);
  uint64_t v = next_u64();
  while (v >= limit) v = next_u64();
  return int(v % uint64_t(n));
}

Rng::State Rng::state() const { return s_; }

void Rng::set_state(const State& s) { s_ = s; }

}  // namespace dvp
