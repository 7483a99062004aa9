#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pnr/nn/gradcheck.hpp"

namespace pnr {

struct SubstrateCheck {
  std::string name;
  nn::GradcheckReport report;
};

struct SubstrateSuite {
  std::vector<SubstrateCheck> checks;

  bool passed() const;
  double worst() const;
  std::string format() const;
};

// Finite-difference checks, in double precision, of every differentiable op,
// residual blocks in all resample modes, and a tiny predictor and denoiser.
// Each fragment is reduced to a scalar by a fixed random linear functional.
SubstrateSuite run_substrate_checks(std::uint64_t seed = 0, double tolerance = 1e-4);

}  // namespace pnr
