#pragma once

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "pnr/rng.hpp"
#include "pnr/tensor.hpp"

namespace testing {

namespace fs = std::filesystem;

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = fs::temp_directory_path() /
            ("pnr_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& s) const { return path_ / s; }

 private:
  fs::path path_;
};

inline std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Every regular file under a, compared by relative path and bytes.
inline bool same_tree(const fs::path& a, const fs::path& b) {
  std::vector<fs::path> fa, fb;
  for (const auto& e : fs::recursive_directory_iterator(a))
    if (e.is_regular_file()) fa.push_back(fs::relative(e.path(), a));
  for (const auto& e : fs::recursive_directory_iterator(b))
    if (e.is_regular_file()) fb.push_back(fs::relative(e.path(), b));
  std::sort(fa.begin(), fa.end());
  std::sort(fb.begin(), fb.end());
  if (fa != fb || fa.empty()) return false;
  for (const auto& rel : fa)
    if (slurp(a / rel) != slurp(b / rel)) return false;
  return true;
}

// Exit code of a shell command; output discarded.
inline int run(const std::string& cmd) {
  const int rc = std::system((cmd + " >/dev/null 2>&1").c_str());
  if (rc == -1) return -1;
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

inline pnr::Tensor<double> random_tensor(pnr::Shape s, pnr::Rng& rng, double lo = -1.0, double hi = 1.0) {
  pnr::Tensor<double> t(s);
  for (auto& v : t.span()) v = rng.uniform(lo, hi);
  return t;
}

inline pnr::ImageTensor random_image(pnr::Shape s, pnr::Rng& rng, double lo = -1.0, double hi = 1.0) {
  pnr::ImageTensor t(s);
  for (auto& v : t.span()) v = static_cast<float>(rng.uniform(lo, hi));
  return t;
}

inline double normal_pdf(double x, double mean, double var) {
  const double d = x - mean;
  return std::exp(-0.5 * d * d / var) / std::sqrt(2.0 * M_PI * var);
}

struct Moments {
  double mean = 0.0;
  double var = 0.0;
};

// Mean and variance of p(x) proportional to N(xt; sqrt(a) x, 1 - a) N(x; sqrt(ab_prev) x0, 1 - ab_prev),
// by trapezoidal integration. A coarse pass over a wide window locates the
// mass, a fine pass over +-12 sd measures it.
inline Moments integrate_posterior(double alpha_t, double alphabar_prev, double x0, double xt) {
  const auto density = [&](double x) {
    return normal_pdf(xt, std::sqrt(alpha_t) * x, 1.0 - alpha_t) *
           normal_pdf(x, std::sqrt(alphabar_prev) * x0, 1.0 - alphabar_prev);
  };
  const auto moments = [&](double lo, double hi, int n) {
    double z = 0.0, m1 = 0.0, m2 = 0.0;
    const double h = (hi - lo) / n;
    for (int i = 0; i <= n; ++i) {
      const double x = lo + h * i;
      const double w = (i == 0 || i == n) ? 0.5 : 1.0;
      const double p = w * density(x);
      z += p;
      m1 += p * x;
    }
    const double mean = m1 / z;
    for (int i = 0; i <= n; ++i) {
      const double x = lo + h * i;
      const double w = (i == 0 || i == n) ? 0.5 : 1.0;
      m2 += w * density(x) * (x - mean) * (x - mean);
    }
    return Moments{mean, m2 / z};
  };
  const double prior_sd = std::sqrt(1.0 - alphabar_prev);
  const double centre = std::sqrt(alphabar_prev) * x0;
  Moments coarse = moments(centre - 40.0 * prior_sd - std::abs(xt) * 4.0, centre + 40.0 * prior_sd + std::abs(xt) * 4.0,
                           400000);
  const double sd = std::sqrt(coarse.var);
  return moments(coarse.mean - 12.0 * sd, coarse.mean + 12.0 * sd, 200000);
}

// Optimal eps for a 1-pixel residual with prior N(m, s^2) observed through
// z = a r + sqrt(1 - a^2) eps: E[eps | z].
inline double optimal_eps(double z, double a, double m, double s) {
  const double a2 = a * a;
  return (z - a * m) * std::sqrt(1.0 - a2) / (1.0 - a2 + a2 * s * s);
}

}  // namespace testing
