#pragma once

// Optimal-transport conditional probability paths and the Euler sampler.
//
// The path from N(0, I) to a point x1 keeps its mean at t*x1 and shrinks its
// standard deviation linearly from 1 to sigma_min. Every sample moves on a
// straight line, so the conditional field is constant along its trajectory.

#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "contok/array.hpp"
#include "contok/errors.hpp"
#include "contok/rng.hpp"

namespace contok::flow {

template <class T>
using Frame = std::vector<T>;

struct OTPathSpec {
  double sigma_min = 1e-2;
  std::size_t frame_dim = 20;

  void validate() const {
    if (!(sigma_min >= 0.0 && sigma_min < 1.0)) throw ConfigError("sigma_min must lie in [0, 1)");
    if (frame_dim == 0) throw ConfigError("frame_dim must be positive");
  }
};

struct SamplerConfig {
  std::size_t num_steps = 10;
  double temperature = 1.0;

  void validate() const {
    if (num_steps < 1) throw ConfigError("sampler num_steps must be >= 1");
    if (!(temperature >= 0.0)) throw ConfigError("sampler temperature must be >= 0");
  }
};

/// Largest training time; keeps the network away from the schedule endpoint.
inline constexpr double kMaxTrainTime = 1.0 - 1e-4;

namespace detail {

inline void check_time(double t) {
  if (!(t >= 0.0 && t <= 1.0)) throw DomainError("time " + std::to_string(t) + " outside [0, 1]");
}

template <class T>
void check_same_dim(std::span<const T> a, std::span<const T> b) {
  if (a.size() != b.size()) {
    throw DimensionError("frame dimension mismatch: " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  }
}

}  // namespace detail

/// sigma_t = 1 - (1 - sigma_min) t
inline double path_std(double t, const OTPathSpec& spec) { return 1.0 - (1.0 - spec.sigma_min) * t; }

template <class T>
struct MeanStd {
  Frame<T> mean;
  T std;
};

template <class T>
MeanStd<T> mu_sigma(double t, std::span<const T> x1, const OTPathSpec& spec) {
  detail::check_time(t);
  MeanStd<T> out{Frame<T>(x1.size()), static_cast<T>(path_std(t, spec))};
  for (std::size_t i = 0; i < x1.size(); ++i) out.mean[i] = static_cast<T>(t) * x1[i];
  return out;
}

/// phi_t(x) = (1 - (1 - sigma_min) t) x + t x1
template <class T>
Frame<T> conditional_flow(double t, std::span<const T> x, std::span<const T> x1, const OTPathSpec& spec) {
  detail::check_time(t);
  detail::check_same_dim(x, x1);
  const T a = static_cast<T>(path_std(t, spec));
  const T tt = static_cast<T>(t);
  Frame<T> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = a * x[i] + tt * x1[i];
  return out;
}

/// u_t(x | x1) = (x1 - (1 - sigma_min) x) / (1 - (1 - sigma_min) t)
template <class T>
Frame<T> conditional_field(double t, std::span<const T> x, std::span<const T> x1, const OTPathSpec& spec) {
  detail::check_time(t);
  detail::check_same_dim(x, x1);
  const double denom = path_std(t, spec);
  if (!(denom > 1e-12)) throw SingularityError("conditional field denominator vanishes at t=" + std::to_string(t));
  const T c = static_cast<T>(1.0 - spec.sigma_min);
  const T d = static_cast<T>(denom);
  Frame<T> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = (x1[i] - c * x[i]) / d;
  return out;
}

template <class T>
struct CfmPair {
  T t;
  Frame<T> x0;
  Frame<T> x_t;
  Frame<T> target;
};

/// Training triple at a given time: x0 ~ N(0, I), x_t on the path, and the
/// conditional field there.
template <class T>
CfmPair<T> cfm_training_pair_at(double t, std::span<const T> x1, const OTPathSpec& spec, Rng& rng) {
  CfmPair<T> p;
  p.t = static_cast<T>(t);
  p.x0.resize(x1.size());
  for (auto& v : p.x0) v = static_cast<T>(rng.normal());
  p.x_t = conditional_flow<T>(t, p.x0, x1, spec);
  p.target = conditional_field<T>(t, p.x_t, x1, spec);
  return p;
}

/// Same, with t ~ U[0, kMaxTrainTime).
template <class T>
CfmPair<T> cfm_training_pair(std::span<const T> x1, const OTPathSpec& spec, Rng& rng) {
  const double t = rng.uniform() * kMaxTrainTime;
  return cfm_training_pair_at<T>(t, x1, spec, rng);
}

/// Integrates dx/dt = v(x, t) from t=0 to t=1 with uniform Euler steps for a
/// batch of `count` frames. The start point is temperature * N(0, I).
///
/// `v(x, t)` takes and returns [count, d] arrays. `observe(step, t, x)` sees the
/// state before the first step and after every step.
template <class T, class Field, class Observer>
Array<T> euler_sample_batch(Field&& v, std::size_t count, const SamplerConfig& cfg, const OTPathSpec& spec, Rng& rng,
                            Observer&& observe) {
  cfg.validate();
  const std::size_t d = spec.frame_dim;
  Array<T> x(Shape{count, d});
  for (auto& e : x.data()) e = static_cast<T>(cfg.temperature * rng.normal());
  const T dt = static_cast<T>(1.0 / static_cast<double>(cfg.num_steps));
  observe(std::size_t{0}, T{0}, x);
  for (std::size_t step = 0; step < cfg.num_steps; ++step) {
    const T t = static_cast<T>(static_cast<double>(step) / static_cast<double>(cfg.num_steps));
    Array<T> vel = v(x, t);
    if (vel.shape() != x.shape()) {
      throw DimensionError("field returned " + shape_str(vel.shape()) + ", expected " + shape_str(x.shape()));
    }
    auto xs = x.data();
    auto vs = vel.data();
    for (std::size_t i = 0; i < xs.size(); ++i) {
      xs[i] += vs[i] * dt;
      if (!std::isfinite(static_cast<double>(xs[i]))) {
        throw DivergenceError("Euler sampler produced a non-finite value at step " + std::to_string(step), step);
      }
    }
    observe(step + 1, static_cast<T>(static_cast<double>(step + 1) / static_cast<double>(cfg.num_steps)), x);
  }
  return x;
}

template <class T, class Field>
Array<T> euler_sample_batch(Field&& v, std::size_t count, const SamplerConfig& cfg, const OTPathSpec& spec, Rng& rng) {
  return euler_sample_batch<T>(std::forward<Field>(v), count, cfg, spec, rng, [](std::size_t, T, const Array<T>&) {});
}

/// Single-frame sampler: `v(x, t, cond)` maps a frame to a velocity frame.
template <class T, class Field, class Cond>
Frame<T> euler_sample(Field&& v, const Cond& cond, const SamplerConfig& cfg, const OTPathSpec& spec, Rng& rng) {
  auto batch_field = [&](const Array<T>& x, T t) {
    Frame<T> out = v(std::span<const T>(x.data()), t, cond);
    return Array<T>(x.shape(), std::move(out));
  };
  Array<T> x = euler_sample_batch<T>(batch_field, 1, cfg, spec, rng);
  return x.vec();
}

/// Brute-force estimate of E_{t, x ~ p_t} ||u_t(x) - v(x, t)||^2 where u_t is
/// the marginal field of the mixture of conditional paths over `data`.
///
/// Time uses the midpoint rule with `time_points` nodes on [0, 1]. For each
/// mixture component the expectation over x = t x1 + sigma_t z is a
/// normal-weighted grid over z in [-8, 8] with `grid_points` nodes per axis.
/// Only meant for frame_dim <= 2 and at most 8 data points.
inline double fm_loss_oracle(const std::function<Frame<double>(std::span<const double>, double)>& v,
                             const std::vector<Frame<double>>& data, const OTPathSpec& spec,
                             std::size_t time_points = 64, std::size_t grid_points = 201) {
  if (data.empty() || data.size() > 8) throw DimensionError("fm_loss_oracle: dataset must hold 1..8 points");
  const std::size_t d = data.front().size();
  if (d == 0 || d > 2) throw DimensionError("fm_loss_oracle: frame_dim " + std::to_string(d) + " not supported (max 2)");
  for (const auto& p : data) {
    if (p.size() != d) throw DimensionError("fm_loss_oracle: inconsistent point dimensions");
  }
  if (time_points == 0 || grid_points < 2) throw DomainError("fm_loss_oracle: grid sizes too small");

  constexpr double kHalfWidth = 8.0;
  std::vector<double> z(grid_points), w(grid_points);
  double wsum = 0;
  for (std::size_t i = 0; i < grid_points; ++i) {
    z[i] = -kHalfWidth + 2.0 * kHalfWidth * static_cast<double>(i) / static_cast<double>(grid_points - 1);
    w[i] = std::exp(-0.5 * z[i] * z[i]);
    wsum += w[i];
  }
  for (auto& wi : w) wi /= wsum;

  const std::size_t nodes = d == 1 ? grid_points : grid_points * grid_points;
  const double c = 1.0 - spec.sigma_min;
  double total = 0;
  for (std::size_t ti = 0; ti < time_points; ++ti) {
    const double t = (static_cast<double>(ti) + 0.5) / static_cast<double>(time_points);
    const double st = path_std(t, spec);
    double at_t = 0;
    for (const auto& center : data) {
      for (std::size_t node = 0; node < nodes; ++node) {
        const std::size_t i0 = d == 1 ? node : node / grid_points;
        const std::size_t i1 = d == 1 ? 0 : node % grid_points;
        const double weight = d == 1 ? w[i0] : w[i0] * w[i1];
        double x[2] = {t * center[0] + st * z[i0], 0.0};
        if (d == 2) x[1] = t * center[1] + st * z[i1];

        // Marginal field: posterior-weighted conditional fields (log-sum-exp weights).
        std::vector<double> logp(data.size());
        double mx = -1e300;
        for (std::size_t j = 0; j < data.size(); ++j) {
          double q = 0;
          for (std::size_t k = 0; k < d; ++k) {
            const double r = x[k] - t * data[j][k];
            q += r * r;
          }
          logp[j] = -0.5 * q / (st * st);
          mx = std::max(mx, logp[j]);
        }
        double norm = 0;
        double u[2] = {0.0, 0.0};
        for (std::size_t j = 0; j < data.size(); ++j) {
          const double pj = std::exp(logp[j] - mx);
          norm += pj;
          for (std::size_t k = 0; k < d; ++k) u[k] += pj * (data[j][k] - c * x[k]) / st;
        }
        Frame<double> pred = v(std::span<const double>(x, d), t);
        if (pred.size() != d) throw DimensionError("fm_loss_oracle: field returned wrong dimension");
        double err = 0;
        for (std::size_t k = 0; k < d; ++k) {
          const double diff = u[k] / norm - pred[k];
          err += diff * diff;
        }
        at_t += weight * err;
      }
    }
    total += at_t / static_cast<double>(data.size());
  }
  return total / static_cast<double>(time_points);
}

}  // namespace contok::flow
