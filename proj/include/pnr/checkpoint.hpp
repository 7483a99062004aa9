#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <vector>

#include "pnr/model.hpp"
#include "pnr/trainer.hpp"

namespace pnr {

// Layout: "PNRDIFF1", u64 LE metadata length, UTF-8 JSON metadata, then f32 LE
// blobs (predictor values, predictor EMA, denoiser values, denoiser EMA) in
// parameter declaration order, then a u64 LE FNV-1a checksum of everything
// before it.
inline constexpr char kCheckpointMagic[8] = {'P', 'N', 'R', 'D', 'I', 'F', 'F', '1'};
inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  TrainerConfig config;
  std::int64_t step = 0;
  std::uint64_t rng_digest = 0;
  std::unique_ptr<Model<float>> model;  // with EMA shadows
};

std::vector<std::uint8_t> encode_checkpoint(const TrainerConfig& config, std::int64_t step,
                                            std::uint64_t rng_digest, const Model<float>& model);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const std::filesystem::path& path, const Trainer& trainer);
void save_checkpoint(const std::filesystem::path& path, const TrainerConfig& config, std::int64_t step,
                     std::uint64_t rng_digest, const Model<float>& model);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace pnr
