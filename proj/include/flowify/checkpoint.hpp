#pragma once
// Versioned binary checkpoints.
//
// Layout: 8-byte magic "FLOWCKPT", u32 version, u64 manifest length, UTF-8
// JSON manifest, then little-endian f64 payload. The manifest carries the
// effective run config, the model description, one record per parameter
// {name, shape, offset, count} and the optimizer state records.

#include <cstdint>
#include <string>
#include <vector>

#include "flowify/trainer.hpp"

namespace flowify {

inline constexpr char kCheckpointMagic[8] = {'F', 'L', 'O', 'W', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  nlohmann::json manifest;
  std::vector<double> payload;

  const nlohmann::json& config() const { return manifest.at("config"); }
  std::size_t epoch() const { return manifest.value("epoch", std::size_t{0}); }
  std::size_t step() const { return manifest.value("step", std::size_t{0}); }
  bool has_optimizer() const { return manifest.contains("optimizer"); }
};

/// Serializes the model parameters, and the optimizer state when `trainer` is given.
std::vector<std::uint8_t> encode_checkpoint(const nlohmann::json& config, const FlowModel& model,
                                            Trainer* trainer = nullptr);
/// Throws ParseError (with the byte offset) on a malformed blob.
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

/// Writes atomically via a temporary file. Throws Error if the path is unwritable.
void save_checkpoint(const std::string& path, const nlohmann::json& config, const FlowModel& model,
                     Trainer* trainer = nullptr);
Checkpoint load_checkpoint(const std::string& path);

/// Copies stored values into the model; names, order and shapes must match.
/// Throws ConfigError on any mismatch.
void restore_parameters(const Checkpoint& ckpt, FlowModel& model);
/// Restores Adam moments and the epoch / step counters.
void restore_optimizer(const Checkpoint& ckpt, Trainer& trainer);

}  // namespace flowify
