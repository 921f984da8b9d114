#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dualspec/params.h"

// Versioned binary container:
//   "DSPCKPT\0" | u32 version | u32 stage | u64 fingerprint | u64 parent
//   | i32 epoch | f64 best_val | u32 len + config JSON
//   | u32 count + tensors (u16 len + name, u8 kind, u8 rank, u64 dims..., f32 values...)
//   | u64 FNV-1a of everything before it
// All integers and floats little-endian.
namespace dualspec::checkpoint {

inline constexpr std::uint32_t kFormatVersion = 1;

enum class StageTag : std::uint32_t { kFme = 1, kDsr = 2, kFull = 3 };
enum class TensorKind : std::uint8_t { kParameter = 0, kBuffer = 1, kOptimizerState = 2 };

struct StoredTensor {
  std::string name;
  TensorKind kind = TensorKind::kParameter;
  nn::Shape shape;
  std::vector<float> values;

  friend bool operator==(const StoredTensor&, const StoredTensor&) = default;
};

struct Checkpoint {
  std::uint32_t version = kFormatVersion;
  StageTag stage = StageTag::kFme;
  std::uint64_t fingerprint = 0;         // of the model-defining config
  std::uint64_t parent_fingerprint = 0;  // stage-1 checkpoint a later stage builds on
  std::int32_t epoch = 0;
  double best_val_loss = 0.0;
  std::string config_json;
  std::vector<StoredTensor> tensors;

  const StoredTensor* find(const std::string& name) const;
};

// Exact equality, comparing floats by bit pattern.
bool bit_identical(const Checkpoint& a, const Checkpoint& b);

std::vector<unsigned char> serialize(const Checkpoint& c);
Checkpoint deserialize(const std::vector<unsigned char>& bytes, const std::string& origin = "");

// Temp-file-then-rename so a failed save never leaves a partial file.
void save(const std::string& path, const Checkpoint& c);
Checkpoint load(const std::string& path);

// Copies every entry of `params` under "<prefix><name>".
void store_parameters(Checkpoint& c, const nn::ParameterSet& params, const std::string& prefix);
// Optimizer accumulators as "opt.v.<prefix><name>", one per learnable entry.
void store_optimizer(Checkpoint& c, const nn::ParameterSet& params, const std::string& prefix,
                     const std::vector<nn::Array<float>>& state);
// Fills `params` in place; every entry must be present with a matching shape.
void restore_parameters(const Checkpoint& c, nn::ParameterSet& params, const std::string& prefix);
// Empty when the checkpoint holds no optimizer state for this prefix.
std::vector<nn::Array<float>> restore_optimizer(const Checkpoint& c,
                                                const nn::ParameterSet& params,
                                                const std::string& prefix);

// Throws UsageError unless the fingerprints agree or allow_mismatch is set.
void check_fingerprint(const Checkpoint& c, std::uint64_t expected, bool allow_mismatch,
                       const std::string& what);

std::string stage_name(StageTag tag);

}  // namespace dualspec::checkpoint
