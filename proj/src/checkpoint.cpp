#include "dualspec/checkpoint.h"

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "dualspec/error.h"
#include "dualspec/run_config.h"

namespace dualspec::checkpoint {

using nn::Index;

namespace {

constexpr char kMagic[8] = {'D', 'S', 'P', 'C', 'K', 'P', 'T', '\0'};

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  template <typename U>
  void uint(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) out_.push_back((v >> (8 * i)) & 0xFF);
  }
  void f32(float f) {
    std::uint32_t u;
    std::memcpy(&u, &f, 4);
    uint(u);
  }
  void f64(double d) {
    std::uint64_t u;
    std::memcpy(&u, &d, 8);
    uint(u);
  }
  std::vector<unsigned char>& out() { return out_; }

 private:
  std::vector<unsigned char> out_;
};

class Reader {
 public:
  Reader(const std::vector<unsigned char>& b, std::size_t end, std::string origin)
      : b_(b), end_(end), origin_(std::move(origin)) {}

  const unsigned char* take(std::size_t n, const char* what) {
    if (pos_ + n > end_)
      throw IoError(origin_ + ": checkpoint truncated while reading " + what);
    const unsigned char* p = b_.data() + pos_;
    pos_ += n;
    return p;
  }
  template <typename U>
  U uint(const char* what) {
    const unsigned char* p = take(sizeof(U), what);
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= U(p[i]) << (8 * i);
    return v;
  }
  float f32(const char* what) {
    const auto u = uint<std::uint32_t>(what);
    float f;
    std::memcpy(&f, &u, 4);
    return f;
  }
  double f64(const char* what) {
    const auto u = uint<std::uint64_t>(what);
    double d;
    std::memcpy(&d, &u, 8);
    return d;
  }
  bool done() const { return pos_ == end_; }

 private:
  const std::vector<unsigned char>& b_;
  std::size_t end_;
  std::string origin_;
  std::size_t pos_ = 0;
};

std::string optimizer_name(const std::string& prefix, const std::string& name) {
  return "opt.v." + prefix + name;
}

}  // namespace

std::string stage_name(StageTag tag) {
  switch (tag) {
    case StageTag::kFme: return "fme";
    case StageTag::kDsr: return "dsr";
    case StageTag::kFull: return "full";
  }
  return "unknown";
}

const StoredTensor* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

bool bit_identical(const Checkpoint& a, const Checkpoint& b) {
  return serialize(a) == serialize(b);
}

std::vector<unsigned char> serialize(const Checkpoint& c) {
  Writer w;
  w.bytes(kMagic, sizeof kMagic);
  w.uint(c.version);
  w.uint(static_cast<std::uint32_t>(c.stage));
  w.uint(c.fingerprint);
  w.uint(c.parent_fingerprint);
  w.uint(static_cast<std::uint32_t>(c.epoch));
  w.f64(c.best_val_loss);
  w.uint(static_cast<std::uint32_t>(c.config_json.size()));
  w.bytes(c.config_json.data(), c.config_json.size());
  w.uint(static_cast<std::uint32_t>(c.tensors.size()));
  for (const auto& t : c.tensors) {
    if (t.name.size() > 0xFFFF) throw UsageError("tensor name too long: " + t.name);
    if (t.shape.size() > 0xFF) throw UsageError("tensor rank too large: " + t.name);
    if (Index(t.values.size()) != nn::shape_size(t.shape))
      throw ShapeError("tensor " + t.name + ": value count does not match shape");
    w.uint(static_cast<std::uint16_t>(t.name.size()));
    w.bytes(t.name.data(), t.name.size());
    w.uint(static_cast<std::uint8_t>(t.kind));
    w.uint(static_cast<std::uint8_t>(t.shape.size()));
    for (auto d : t.shape) w.uint(static_cast<std::uint64_t>(d));
    for (float v : t.values) w.f32(v);
  }
  const std::uint64_t sum = config::fnv1a(w.out().data(), w.out().size());
  w.uint(sum);
  return std::move(w.out());
}

Checkpoint deserialize(const std::vector<unsigned char>& bytes, const std::string& origin) {
  if (bytes.size() < sizeof kMagic + 8 || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0)
    throw IoError(origin + ": not a dualspec checkpoint (bad magic)");
  const std::size_t body = bytes.size() - 8;
  std::uint64_t stored = 0;
  for (int i = 0; i < 8; ++i) stored |= std::uint64_t(bytes[body + i]) << (8 * i);
  if (config::fnv1a(bytes.data(), body) != stored)
    throw IoError(origin + ": checkpoint checksum mismatch (file corrupt or truncated)");

  Reader r(bytes, body, origin);
  r.take(sizeof kMagic, "magic");
  Checkpoint c;
  c.version = r.uint<std::uint32_t>("version");
  if (c.version != kFormatVersion)
    throw IoError(origin + ": unsupported checkpoint version " + std::to_string(c.version));
  const auto stage = r.uint<std::uint32_t>("stage");
  if (stage < 1 || stage > 3) throw IoError(origin + ": unknown stage tag " + std::to_string(stage));
  c.stage = static_cast<StageTag>(stage);
  c.fingerprint = r.uint<std::uint64_t>("fingerprint");
  c.parent_fingerprint = r.uint<std::uint64_t>("parent fingerprint");
  c.epoch = static_cast<std::int32_t>(r.uint<std::uint32_t>("epoch"));
  c.best_val_loss = r.f64("best validation loss");
  const auto cfg_len = r.uint<std::uint32_t>("config length");
  const unsigned char* cfg = r.take(cfg_len, "config");
  c.config_json.assign(reinterpret_cast<const char*>(cfg), cfg_len);
  const auto count = r.uint<std::uint32_t>("tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    StoredTensor t;
    const auto name_len = r.uint<std::uint16_t>("tensor name length");
    const unsigned char* name = r.take(name_len, "tensor name");
    t.name.assign(reinterpret_cast<const char*>(name), name_len);
    const auto kind = r.uint<std::uint8_t>("tensor kind");
    if (kind > 2) throw IoError(origin + ": tensor " + t.name + " has unknown kind");
    t.kind = static_cast<TensorKind>(kind);
    const auto rank = r.uint<std::uint8_t>("tensor rank");
    std::uint64_t n = 1;
    for (int d = 0; d < rank; ++d) {
      const auto dim = r.uint<std::uint64_t>("tensor dims");
      if (dim > (1ULL << 32)) throw IoError(origin + ": tensor " + t.name + " has absurd dims");
      t.shape.push_back(Index(dim));
      n *= dim;
    }
    if (n * 4 > bytes.size()) throw IoError(origin + ": tensor " + t.name + " exceeds the file");
    t.values.resize(n);
    for (auto& v : t.values) v = r.f32("tensor values");
    c.tensors.push_back(std::move(t));
  }
  if (!r.done()) throw IoError(origin + ": trailing bytes after the tensor table");
  return c;
}

void save(const std::string& path, const Checkpoint& c) {
  const auto bytes = serialize(c);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError(path + ": cannot open for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
    if (!f) {
      std::filesystem::remove(tmp);
      throw IoError(path + ": write failed");
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    throw IoError(path + ": rename failed: " + ec.message());
  }
}

Checkpoint load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError(path + ": cannot open checkpoint");
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)),
                                         std::istreambuf_iterator<char>());
  return deserialize(bytes, path);
}

void store_parameters(Checkpoint& c, const nn::ParameterSet& params, const std::string& prefix) {
  for (const auto& e : params.entries()) {
    StoredTensor t;
    t.name = prefix + e.name;
    t.kind = e.role == nn::TensorRole::kParameter ? TensorKind::kParameter : TensorKind::kBuffer;
    t.shape = e.tensor.shape();
    t.values.assign(e.tensor.data(), e.tensor.data() + e.tensor.size());
    c.tensors.push_back(std::move(t));
  }
}

void store_optimizer(Checkpoint& c, const nn::ParameterSet& params, const std::string& prefix,
                     const std::vector<nn::Array<float>>& state) {
  const auto& entries = params.entries();
  if (state.size() != entries.size())
    throw ShapeError("optimizer state does not match the parameter set");
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (entries[i].role != nn::TensorRole::kParameter) continue;
    if (state[i].size() != entries[i].tensor.size())
      throw ShapeError("optimizer state for " + entries[i].name + " has the wrong size");
    c.tensors.push_back({optimizer_name(prefix, entries[i].name), TensorKind::kOptimizerState,
                         entries[i].tensor.shape(),
                         std::vector<float>(state[i].data(), state[i].data() + state[i].size())});
  }
}

void restore_parameters(const Checkpoint& c, nn::ParameterSet& params, const std::string& prefix) {
  for (auto& e : params.entries()) {
    const StoredTensor* t = c.find(prefix + e.name);
    if (t == nullptr) throw IoError("checkpoint lacks tensor " + prefix + e.name);
    if (t->shape != e.tensor.shape())
      throw ShapeError("checkpoint tensor " + t->name + " has shape " +
                       nn::shape_string(t->shape) + ", model expects " +
                       nn::shape_string(e.tensor.shape()));
    std::copy(t->values.begin(), t->values.end(), e.tensor.data());
  }
}

std::vector<nn::Array<float>> restore_optimizer(const Checkpoint& c,
                                                const nn::ParameterSet& params,
                                                const std::string& prefix) {
  std::vector<nn::Array<float>> state;
  bool any = false;
  for (const auto& e : params.entries()) {
    if (e.role != nn::TensorRole::kParameter) {
      state.emplace_back();
      continue;
    }
    const StoredTensor* t = c.find(optimizer_name(prefix, e.name));
    if (t == nullptr) {
      state.push_back(nn::Array<float>::Zero(e.tensor.size()));
      continue;
    }
    if (t->shape != e.tensor.shape())
      throw ShapeError("optimizer state " + t->name + " has the wrong shape");
    state.push_back(Eigen::Map<const nn::Array<float>>(t->values.data(), Index(t->values.size())));
    any = true;
  }
  if (!any) state.clear();
  return state;
}

void check_fingerprint(const Checkpoint& c, std::uint64_t expected, bool allow_mismatch,
                       const std::string& what) {
  if (c.fingerprint == expected || allow_mismatch) return;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%016llx vs %016llx",
                static_cast<unsigned long long>(c.fingerprint),
                static_cast<unsigned long long>(expected));
  throw UsageError(what + ": config fingerprint mismatch (" + buf +
                   "); the checkpoint was built for a different model configuration");
}

}  // namespace dualspec::checkpoint
