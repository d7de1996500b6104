#include "dvp/checkpoint.hpp"

#include <cstdio>
#include <cstring>

namespace dvp {

namespace {

constexpr char kMagic[5] = {'D', 'V', 'P', 'V', '1'};

void put_u32(std::vector<uint8_t>& b, uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(uint8_t(v >> (8 * i)));
}

void put_u64(std::vector<uint8_t>& b, uint64_t v) {
  for (int i = 0; i < 8; ++i) b.push_back(uint8_t(v >> (8 * i)));
}

void put_f64(std::vector<uint8_t>& b, double v) {
  uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64(b, bits);
}

void put_str(std::vector<uint8_t>& b, const std::string& s) {
  put_u32(b, uint32_t(s.size()));
  b.insert(b.end(), s.begin(), s.end());
}

struct Reader {
  const std::vector<uint8_t>& b;
  size_t off = 0;
  std::string path;

  void need(size_t n) const {
    if (off + n > b.size())
      throw FormatError(path + ": truncated checkpoint at byte offset " +
                        std::to_string(off));
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= uint32_t(b[off + i]) << (8 * i);
    off += 4;
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= uint64_t(b[off + i]) << (8 * i);
    off += 8;
    return v;
  }
  double f64() {
    const uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  std::string str() {
    const uint32_t n = u32();
    need(n);
    std::string s(b.begin() + off, b.begin() + off + n);
    off += n;
    return s;
  }
  std::vector<uint8_t> bytes(size_t n) {
    need(n);
    std::vector<uint8_t> out(b.begin() + off, b.begin() + off + n);
    off += n;
    return out;
  }
};

size_t dtype_size(Checkpoint::Dtype d) { return d == Checkpoint::kF64 ? 8 : 4; }

}  // namespace

std::vector<double> Checkpoint::Entry::values() const {
  const size_t n = raw.size() / dtype_size(dtype);
  std::vector<double> out(n);
  if (dtype == kF64) {
    for (size_t i = 0; i < n; ++i) {
      double v;
      std::memcpy(&v, raw.data() + 8 * i, 8);
      out[i] = v;
    }
  } else {
    for (size_t i = 0; i < n; ++i) {
      float v;
      std::memcpy(&v, raw.data() + 4 * i, 4);
      out[i] = double(v);
    }
  }
  return out;
}

Checkpoint::Entry Checkpoint::Entry::from_values(std::string name, Shape shape,
                                                 const std::vector<real>& v) {
  Entry e;
  e.name = std::move(name);
  e.shape = std::move(shape);
  e.dtype = sizeof(real) == 8 ? kF64 : kF32;
  e.raw.resize(v.size() * sizeof(real));
  std::memcpy(e.raw.data(), v.data(), e.raw.size());
  return e;
}

Checkpoint::Entry Checkpoint::Entry::from_doubles(std::string name, Shape shape,
                                                  const std::vector<double>& v) {
  Entry e;
  e.name = std::move(name);
  e.shape = std::move(shape);
  e.dtype = kF64;
  e.raw.resize(v.size() * 8);
  std::memcpy(e.raw.data(), v.data(), e.raw.size());
  return e;
}

const Checkpoint::Entry* Checkpoint::find(const std::string& name) const {
  for (const auto& e : tensors)
    if (e.name == name) return &e;
  return nullptr;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::vector<uint8_t> out;
  out.insert(out.end(), kMagic, kMagic + 5);
  put_u32(out, ckpt.version);
  put_str(out, ckpt.config_text);
  put_u64(out, ckpt.rng.key);
  put_u64(out, ckpt.rng.counter);
  for (uint32_t w : ckpt.rng.block) put_u32(out, w);
  put_u32(out, uint32_t(ckpt.rng.block_pos));
  put_u32(out, uint32_t(ckpt.rng.have_spare));
  put_f64(out, ckpt.rng.spare);
  put_u64(out, ckpt.step);
  put_u32(out, uint32_t(ckpt.meta.size()));
  for (const auto& [k, v] : ckpt.meta) {
    put_str(out, k);
    put_str(out, v);
  }
  put_u32(out, uint32_t(ckpt.tensors.size()));
  for (const auto& e : ckpt.tensors) {
    put_str(out, e.name);
    out.push_back(uint8_t(e.dtype));
    out.push_back(uint8_t(e.shape.size()));
    for (int d : e.shape) put_u32(out, uint32_t(d));
    put_u64(out, e.raw.size());
    out.insert(out.end(), e.raw.begin(), e.raw.end());
  }

  FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw FormatError("cannot write checkpoint " + path);
  const size_t n = std::fwrite(out.data(), 1, out.size(), f);
  std::fclose(f);
  if (n != out.size()) throw FormatError("short write to " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw FormatError("cannot open checkpoint " + path);
  std::vector<uint8_t> buf;
  uint8_t tmp[1 << 16];
  size_t n;
  while ((n = std::fread(tmp, 1, sizeof(tmp), f)) > 0) buf.insert(buf.end(), tmp, tmp + n);
  std::fclose(f);

  Reader r{buf, 0, path};
  r.need(5);
  if (std::memcmp(buf.data(), kMagic, 5) != 0)
    throw FormatError(path + ": bad magic at byte offset 0 (want DVPV1)");
  r.off = 5;

  Checkpoint ckpt;
  ckpt.version = r.u32();
  if (ckpt.version != 1)
    throw FormatError(path + ": unsupported checkpoint version " +
                      std::to_string(ckpt.version));
  ckpt.config_text = r.str();
  ckpt.rng.key = r.u64();
  ckpt.rng.counter = r.u64();
  for (auto& w : ckpt.rng.block) w = r.u32();
  ckpt.rng.block_pos = int32_t(r.u32());
  ckpt.rng.have_spare = int32_t(r.u32());
  ckpt.rng.spare = r.f64();
  ckpt.step = r.u64();
  const uint32_t nmeta = r.u32();
  for (uint32_t i = 0; i < nmeta; ++i) {
    std::string k = r.str();
    std::string v = r.str();
    ckpt.meta.emplace_back(std::move(k), std::move(v));
  }
  const uint32_t ntensors = r.u32();
  for (uint32_t i = 0; i < ntensors; ++i) {
    Checkpoint::Entry e;
    e.name = r.str();
    r.need(2);
    e.dtype = Checkpoint::Dtype(buf[r.off++]);
    const int rank = buf[r.off++];
    for (int d = 0; d < rank; ++d) e.shape.push_back(int(r.u32()));
    const uint64_t bytes = r.u64();
    if (bytes != uint64_t(shape_numel(e.shape)) * dtype_size(e.dtype))
      throw FormatError(path + ": tensor " + e.name + " has inconsistent size");
    e.raw = r.bytes(bytes);
    ckpt.tensors.push_back(std::move(e));
  }
  if (r.off != buf.size())
    throw FormatError(path + ": trailing bytes at offset " + std::to_string(r.off));
  return ckpt;
}

Checkpoint build_checkpoint(const std::string& config_text, const ParamStore& ps,
                            const NormMatrix& S, const Rng::State& rng,
                            uint64_t step) {
  Checkpoint ckpt;
  ckpt.config_text = config_text;
  ckpt.rng = rng;
  ckpt.step = step;
  ckpt.meta.emplace_back("dct.digest", S.source_digest);
  for (const auto& p : ps.all())
    ckpt.tensors.push_back(
        Checkpoint::Entry::from_values(p.name, p.value.shape(), p.value.data()));
  for (const auto& p : ps.all()) {
    if (p.ema.empty()) continue;
    ckpt.tensors.push_back(
        Checkpoint::Entry::from_values("ema." + p.name, p.value.shape(), p.ema));
  }
  ckpt.tensors.push_back(Checkpoint::Entry::from_doubles(
      "dct.S", {S.channels, S.side, S.side}, S.s));
  return ckpt;
}

void restore_params(const Checkpoint& ckpt, ParamStore& ps) {
  for (auto& p : ps.all()) {
    const Checkpoint::Entry* e = ckpt.find(p.name);
    if (!e) throw FormatError("checkpoint is missing parameter " + p.name);
    if (e->shape != p.value.shape())
      throw FormatError("checkpoint parameter " + p.name + " has shape " +
                        shape_str(e->shape) + ", model expects " +
                        shape_str(p.value.shape()));
    const std::vector<double> v = e->values();
    auto& dst = p.value.mutable_data();
    for (size_t i = 0; i < v.size(); ++i) dst[i] = real(v[i]);

    const Checkpoint::Entry* ema = ckpt.find("ema." + p.name);
    if (ema) {
      const std::vector<double> ev = ema->values();
      p.ema.resize(ev.size());
      for (size_t i = 0; i < ev.size(); ++i) p.ema[i] = real(ev[i]);
    }
  }
}

NormMatrix restore_norm_matrix(const Checkpoint& ckpt) {
  const Checkpoint::Entry* e = ckpt.find("dct.S");
  if (!e) throw FormatError("checkpoint is missing dct.S");
  if (e->shape.size() != 3) throw FormatError("dct.S must have extents [c,d,d]");
  NormMatrix S;
  S.channels = e->shape[0];
  S.side = e->shape[1];
  S.s = e->values();
  for (const auto& [k, v] : ckpt.meta)
    if (k == "dct.digest") S.source_digest = v;
  return S;
}

}  // namespace dvp
