#pragma once

#include <functional>
#include <string>
#include <vector>

#include "pnr/nn/params.hpp"
#include "pnr/tensor.hpp"

namespace pnr::nn {

// A network fragment reduced to a scalar. `loss` evaluates the scalar only;
// `backward` evaluates it, accumulates parameter gradients into the store and
// returns dL/d(input).
struct Fragment {
  std::function<double(const Tensor<double>& input)> loss;
  std::function<Tensor<double>(const Tensor<double>& input)> backward;
};

struct GradcheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  // Elements probed per tensor; 0 probes every element.
  std::size_t max_probes = 0;
  std::uint64_t seed = 0;
  bool check_input = true;
};

struct TensorCheck {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t probes = 0;
  bool passed = false;
};

struct GradcheckReport {
  std::vector<TensorCheck> tensors;

  bool passed() const {
    for (const auto& t : tensors)
      if (!t.passed) return false;
    return !tensors.empty();
  }
  double worst() const {
    double w = 0.0;
    for (const auto& t : tensors) w = std::max(w, t.max_rel_error);
    return w;
  }
};

// Compares analytic gradients against central differences.
// Per element, rel = |a - n| / max(|a|, |n|, floor) where floor is 1e-3 of the
// largest numeric magnitude in that tensor (so near-zero entries of an
// otherwise large gradient are judged on the tensor's scale).
GradcheckReport gradcheck(ParamStore<double>& store, const Fragment& fragment, const Tensor<double>& input,
                          const GradcheckOptions& options = {});

std::string format_report(const GradcheckReport& report);

}  // namespace pnr::nn
