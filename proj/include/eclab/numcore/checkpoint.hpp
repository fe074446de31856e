#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "eclab/numcore/adam.hpp"

namespace eclab::num {

inline constexpr int kCheckpointFormatVersion = 1;

// Named-tensor bundle. On disk: <dir>/manifest.json + <dir>/tensors.bin
// (little-endian row-major buffers, concatenated in table order).
struct Checkpoint {
  ParamList tensors;
  std::int64_t step = 0;
  nlohmann::json config = nlohmann::json::object();
  nlohmann::json meta = nlohmann::json::object();

  bool has(const std::string& name) const;
  const Tensor& get(const std::string& name) const;
  void put(const std::string& name, const Tensor& t);
};

// Snapshot of parameter values (detached copies).
Checkpoint snapshot(const ParamList& params, std::int64_t step, nlohmann::json config,
                    nlohmann::json meta);

// Copies values of the named tensors into `params` (shapes must match).
void restore(const Checkpoint& ckpt, const ParamList& params);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& dir);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

// True when both bundles hold the same names, shapes, dtypes and bit patterns.
bool tensors_bit_equal(const Tensor& a, const Tensor& b);
bool checkpoints_bit_equal(const Checkpoint& a, const Checkpoint& b);

}  // namespace eclab::num
