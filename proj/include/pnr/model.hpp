#pragma once

#include <cstdint>

#include "pnr/rng.hpp"
#include "pnr/unet.hpp"

namespace pnr {

struct ModelShape {
  int channels = 1;
  int base_ch_pred = 32;
  int base_ch_den = 16;
  int blocks = 1;

  void validate() const {
    if (channels != 1 && channels != 3) throw UsageError("model channels must be 1 or 3");
    if (base_ch_pred < 1 || base_ch_den < 1) throw UsageError("base channels must be positive");
    if (blocks < 1) throw UsageError("blocks per depth must be positive");
  }
};

// Predictor g and denoiser f, initialized from one seed.
template <class T>
struct Model {
  ModelShape shape;
  InitPredictor<T> predictor;
  Denoiser<T> denoiser;

  Model(const ModelShape& s, std::uint64_t seed)
      : shape((s.validate(), s)),
        predictor(s.channels, s.base_ch_pred, s.blocks, derive_seed(seed, {0x9e11})),
        denoiser(s.channels, s.base_ch_den, s.blocks, derive_seed(seed, {0xde05})) {}

  void enable_ema() {
    predictor.net().params().enable_ema();
    denoiser.net().params().enable_ema();
  }
};

}  // namespace pnr
