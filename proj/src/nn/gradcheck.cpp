#include "pnr/nn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "pnr/rng.hpp"

namespace pnr::nn {
namespace {

std::vector<std::size_t> probe_indices(std::size_t n, std::size_t max_probes, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (max_probes == 0 || max_probes >= n) return idx;
  // partial Fisher-Yates
  for (std::size_t i = 0; i < max_probes; ++i) std::swap(idx[i], idx[i + rng.below(n - i)]);
  idx.resize(max_probes);
  std::sort(idx.begin(), idx.end());
  return idx;
}

TensorCheck compare(std::string name, const std::vector<double>& analytic, const std::vector<double>& numeric,
                    double tolerance) {
  double scale = 0.0;
  for (double v : numeric) scale = std::max(scale, std::abs(v));
  const double floor = std::max(1e-3 * scale, 1e-12);
  TensorCheck tc;
  tc.name = std::move(name);
  tc.probes = analytic.size();
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double a = analytic[i], n = numeric[i];
    const double denom = std::max({std::abs(a), std::abs(n), floor});
    tc.max_rel_error = std::max(tc.max_rel_error, std::abs(a - n) / denom);
  }
  tc.passed = std::isfinite(tc.max_rel_error) && tc.max_rel_error < tolerance;
  return tc;
}

}  // namespace

GradcheckReport gradcheck(ParamStore<double>& store, const Fragment& fragment, const Tensor<double>& input,
                          const GradcheckOptions& options) {
  Rng rng(options.seed);
  const double h = options.step;

  store.zero_grad();
  const Tensor<double> input_grad = fragment.backward(input);

  GradcheckReport report;
  for (std::size_t t = 0; t < store.tensor_count(); ++t) {
    auto& p = store[t];
    const auto idx = probe_indices(p.size(), options.max_probes, rng);
    std::vector<double> analytic, numeric;
    for (std::size_t i : idx) {
      const double orig = p.value[i];
      p.value[i] = orig + h;
      const double up = fragment.loss(input);
      p.value[i] = orig - h;
      const double down = fragment.loss(input);
      p.value[i] = orig;
      analytic.push_back(p.grad[i]);
      numeric.push_back((up - down) / (2.0 * h));
    }
    report.tensors.push_back(compare(p.name, analytic, numeric, options.tolerance));
  }

  if (options.check_input) {
    Tensor<double> x = input;
    const auto idx = probe_indices(x.size(), options.max_probes, rng);
    std::vector<double> analytic, numeric;
    for (std::size_t i : idx) {
      const double orig = x[i];
      x[i] = orig + h;
      const double up = fragment.loss(x);
      x[i] = orig - h;
      const double down = fragment.loss(x);
      x[i] = orig;
      analytic.push_back(input_grad.empty() ? 0.0 : input_grad[i]);
      numeric.push_back((up - down) / (2.0 * h));
    }
    report.tensors.push_back(compare("<input>", analytic, numeric, options.tolerance));
  }
  return report;
}

std::string format_report(const GradcheckReport& report) {
  std::string out;
  char line[256];
  for (const auto& t : report.tensors) {
    std::snprintf(line, sizeof line, "  %-40s probes=%-6zu max_rel=%.3e  %s\n", t.name.c_str(), t.probes,
                  t.max_rel_error, t.passed ? "ok" : "FAIL");
    out += line;
  }
  return out;
}

}  // namespace pnr::nn
