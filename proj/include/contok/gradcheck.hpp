#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "contok/autodiff.hpp"
#include "contok/rng.hpp"

namespace contok::ad {

struct GradCheckEntry {
  std::string name;
  double rel_error = 0.0;
  double analytic_norm = 0.0;
  double numeric_norm = 0.0;
  std::size_t checked = 0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0.0;
  std::string worst;
};

struct GradCheckOptions {
  double step = 1e-5;
  /// Coordinates probed per parameter; 0 probes all of them.
  std::size_t max_entries = 0;
  /// Norms below this are compared in absolute terms.
  double norm_floor = 1e-7;
  std::uint64_t seed = 0;
};

/// Compares tape gradients of the scalar `f` with central differences.
///
/// Relative error per parameter is ||analytic - numeric|| / max(||analytic||,
/// ||numeric||, norm_floor), taken over the probed coordinates. `f` must be
/// deterministic: it is re-evaluated twice per probed coordinate.
template <class T>
GradCheckReport check_gradients(const std::function<Var<T>()>& f,
                                const std::vector<std::pair<std::string, Var<T>>>& params,
                                const GradCheckOptions& options = {}) {
  for (const auto& [name, p] : params) p.zero_grad();
  {
    Tape<T> tape;
    Var<T> y = f();
    if (!std::isfinite(static_cast<double>(y.item()))) throw DomainError("check_gradients: non-finite function value");
    tape.backward(y);
  }

  GradCheckReport report;
  Rng rng(options.seed);
  const T h = static_cast<T>(options.step);
  for (const auto& [name, p] : params) {
    const std::size_t n = p.size();
    std::vector<std::size_t> probe(n);
    std::iota(probe.begin(), probe.end(), std::size_t{0});
    if (options.max_entries > 0 && n > options.max_entries) {
      for (std::size_t i = 0; i < options.max_entries; ++i) {
        std::swap(probe[i], probe[i + rng.below(n - i)]);
      }
      probe.resize(options.max_entries);
    }
    double diff2 = 0, a2 = 0, n2 = 0;
    auto values = p.node()->value.data();
    for (std::size_t idx : probe) {
      const T saved = values[idx];
      values[idx] = saved + h;
      const double up = static_cast<double>(f().item());
      values[idx] = saved - h;
      const double down = static_cast<double>(f().item());
      values[idx] = saved;
      const double numeric = (up - down) / (2.0 * static_cast<double>(h));
      const double analytic = p.has_grad() ? static_cast<double>(p.grad()[idx]) : 0.0;
      if (!std::isfinite(numeric) || !std::isfinite(analytic)) {
        throw DomainError("check_gradients: non-finite derivative for parameter '" + name + "' at index " + std::to_string(idx));
      }
      diff2 += (analytic - numeric) * (analytic - numeric);
      a2 += analytic * analytic;
      n2 += numeric * numeric;
    }
    GradCheckEntry e;
    e.name = name;
    e.checked = probe.size();
    e.analytic_norm = std::sqrt(a2);
    e.numeric_norm = std::sqrt(n2);
    e.rel_error = std::sqrt(diff2) / std::max({e.analytic_norm, e.numeric_norm, options.norm_floor});
    if (e.rel_error >= report.max_rel_error) {
      report.max_rel_error = e.rel_error;
      report.worst = name;
    }
    report.entries.push_back(std::move(e));
  }
  return report;
}

}  // namespace contok::ad
