#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "talnet/numerics/random.hpp"
#include "talnet/numerics/tensor.hpp"

namespace talnet {

struct GradCheckOptions {
  double eps = 1e-5;
  double tol = 1e-4;
  // Gradients smaller than this are compared absolutely against it, so
  // round-off in near-zero entries does not read as a relative failure.
  double magnitude_floor = 1e-4;
  // Parameters larger than this are checked on a random subsample of this
  // many coordinates.
  std::size_t max_coords_per_param = 200;
  std::uint64_t seed = 1;
};

struct GradCheckOffender {
  std::string param;
  std::size_t index = 0;
  double analytic = 0, numeric = 0, rel_error = 0;
};

struct GradCheckReport {
  bool passed = true;
  std::string failure;  // set on non-finite values
  double max_rel_error = 0;
  std::size_t checked = 0;
  std::size_t skipped_at_kinks = 0;
  std::vector<GradCheckOffender> worst;  // descending by error, at most 5

  std::string summary() const {
    std::ostringstream os;
    os << (passed ? "PASS" : "FAIL") << " max_rel_error=" << max_rel_error << " checked=" << checked
       << " skipped_at_kinks=" << skipped_at_kinks;
    if (!failure.empty()) os << " failure=\"" << failure << "\"";
    for (const auto& w : worst)
      os << "\n  " << w.param << "[" << w.index << "] analytic=" << w.analytic << " numeric=" << w.numeric
         << " rel=" << w.rel_error;
    return os.str();
  }
};

using NamedTensor = std::pair<std::string, Tensor<double>>;

/// Compares reverse-mode gradients of a scalar function against central
/// differences. `f` must rebuild its graph from the current parameter values
/// on every call. Perturbations that change which side of a kink (relu,
/// clamp, argmax, bilinear cell) any op lands on are skipped and counted.
inline GradCheckReport grad_check(const std::function<Tensor<double>()>& f, std::vector<NamedTensor> params,
                                  const GradCheckOptions& opt = {}) {
  GradCheckReport report;
  auto& trace = detail::branch_trace();

  auto evaluate = [&](std::uint64_t* hash) {
    trace.active = true;
    trace.hash = 1469598103934665603ull;
    double v = 0;
    {
      NoGradGuard guard;
      v = f().item();
    }
    trace.active = false;
    if (hash) *hash = trace.hash;
    return v;
  };

  for (auto& [name, t] : params) t.zero_grad();
  Tensor<double> loss = f();
  if (const auto* bad = first_non_finite(loss)) {
    report.passed = false;
    report.failure = "non-finite value produced by op '" + bad->op + "'";
    return report;
  }
  loss.backward();

  std::uint64_t base_hash = 0;
  evaluate(&base_hash);

  Rng rng(opt.seed);
  for (auto& [name, t] : params) {
    std::vector<double> analytic(t.grad().begin(), t.grad().end());
    if (analytic.empty()) analytic.assign(t.size(), 0.0);
    std::vector<std::size_t> coords(t.size());
    std::iota(coords.begin(), coords.end(), 0);
    if (coords.size() > opt.max_coords_per_param) {
      for (std::size_t i = 0; i < opt.max_coords_per_param; ++i)
        std::swap(coords[i], coords[i + uniform_index(rng, coords.size() - i)]);
      coords.resize(opt.max_coords_per_param);
    }
    for (std::size_t idx : coords) {
      const double orig = t[idx];
      std::uint64_t hp = 0, hm = 0;
      t[idx] = orig + opt.eps;
      const double fp = evaluate(&hp);
      t[idx] = orig - opt.eps;
      const double fm = evaluate(&hm);
      t[idx] = orig;
      if (!std::isfinite(fp) || !std::isfinite(fm)) {
        report.passed = false;
        report.failure = "non-finite loss while perturbing " + name;
        return report;
      }
      if (hp != base_hash || hm != base_hash) {
        ++report.skipped_at_kinks;
        continue;
      }
      const double numeric = (fp - fm) / (2 * opt.eps);
      const double a = analytic[idx];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), opt.magnitude_floor});
      ++report.checked;
      report.max_rel_error = std::max(report.max_rel_error, rel);
      report.worst.push_back({name, idx, a, numeric, rel});
      std::sort(report.worst.begin(), report.worst.end(),
                [](const auto& x, const auto& y) { return x.rel_error > y.rel_error; });
      if (report.worst.size() > 5) report.worst.pop_back();
    }
  }
  report.passed = report.max_rel_error <= opt.tol && report.checked > 0;
  // A check that lands on kinks for most coordinates proves nothing.
  if (report.skipped_at_kinks > report.checked) report.passed = false;
  return report;
}

}  // namespace talnet
