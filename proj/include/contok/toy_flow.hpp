#pragma once

// Stand-alone flow MLP under a fixed condition, trained with the CFM
// objective on samples from a small target distribution.

#include <functional>
#include <string>
#include <vector>

#include "contok/model.hpp"
#include "contok/ot_flow.hpp"
#include "contok/rng.hpp"
#include "contok/trainer.hpp"

namespace contok::toy {

using ad::Var;
using flow::Frame;

struct ToyFlowConfig {
  std::size_t dim = 2;
  std::size_t hidden = 64;
  std::size_t layers = 3;
  std::size_t time_embed_dim = 16;
  std::size_t cond_dim = 4;
  std::size_t steps = 3000;
  std::size_t batch = 256;
  double lr_init = 3e-3;
  double lr_min = 1e-5;
  std::uint64_t seed = 0;
};

template <class T>
class ToyFlow {
 public:
  ToyFlow(const ToyFlowConfig& cfg, std::uint64_t init_seed) : cfg_(cfg) {
    Rng rng{init_seed, 0x746f79ULL};
    flow_ = model::FlowMlp<T>(store_, "flow", cfg.dim, cfg.time_embed_dim, cfg.cond_dim, cfg.layers, cfg.hidden, rng);
    Array<T> c(Shape{cfg.cond_dim});
    for (auto& v : c.data()) v = static_cast<T>(rng.normal());
    cond_ = c.vec();
  }

  model::ParamStore<T>& params() noexcept { return store_; }
  const ToyFlowConfig& config() const noexcept { return cfg_; }

  /// Network field for rows x [M, dim] sharing time t.
  Var<T> field(const Var<T>& x, const std::vector<T>& t) const {
    const std::size_t rows = x.shape()[0];
    Array<T> cond(Shape{rows, cfg_.cond_dim});
    for (std::size_t r = 0; r < rows; ++r) std::copy(cond_.begin(), cond_.end(), cond.data().begin() + static_cast<std::ptrdiff_t>(r * cfg_.cond_dim));
    return flow_(x, t, Var<T>(std::move(cond)));
  }

  Array<T> field_at(const Array<T>& x, T t) const {
    return field(Var<T>(x), std::vector<T>(x.shape()[0], t)).value();
  }

 private:
  ToyFlowConfig cfg_;
  model::ParamStore<T> store_;
  model::FlowMlp<T> flow_;
  std::vector<T> cond_;
};

/// CFM training; `sample` draws one target point. Returns the per-step losses.
template <class T>
std::vector<double> train_toy_flow(ToyFlow<T>& f, const std::function<Frame<T>(Rng&)>& sample, const flow::OTPathSpec& spec) {
  const auto& cfg = f.config();
  train::TrainConfig tc;
  tc.lr_init = cfg.lr_init;
  tc.lr_min = cfg.lr_min;
  tc.total_steps = cfg.steps;
  tc.batch_size = cfg.batch;
  tc.seed = cfg.seed;
  train::Adam<T> adam(f.params());
  std::vector<double> losses;
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    Rng rng{cfg.seed, 0x636666ULL, step};
    Array<T> xt(Shape{cfg.batch, cfg.dim}), target(Shape{cfg.batch, cfg.dim});
    std::vector<T> times(cfg.batch);
    for (std::size_t r = 0; r < cfg.batch; ++r) {
      const Frame<T> x1 = sample(rng);
      const auto pair = flow::cfm_training_pair<T>(x1, spec, rng);
      times[r] = pair.t;
      std::copy(pair.x_t.begin(), pair.x_t.end(), xt.data().begin() + static_cast<std::ptrdiff_t>(r * cfg.dim));
      std::copy(pair.target.begin(), pair.target.end(), target.data().begin() + static_cast<std::ptrdiff_t>(r * cfg.dim));
    }
    ad::Tape<T> tape;
    const Var<T> loss = ad::mse(f.field(Var<T>(std::move(xt)), times), Var<T>(std::move(target)));
    losses.push_back(static_cast<double>(loss.item()));
    if (!std::isfinite(losses.back())) throw NumericAbort("toy flow loss is not finite at step " + std::to_string(step), step);
    f.params().zero_grad();
    tape.backward(loss);
    adam.step(f.params(), train::lr_at(step, tc), tc);
    f.params().zero_grad();
  }
  return losses;
}

/// Draws `count` samples with the Euler sampler; `observe` sees every step.
template <class T, class Observer>
Array<T> sample_toy_flow(const ToyFlow<T>& f, std::size_t count, const flow::SamplerConfig& sampler, const flow::OTPathSpec& spec,
                         Rng& rng, Observer&& observe) {
  return flow::euler_sample_batch<T>([&](const Array<T>& x, T t) { return f.field_at(x, t); }, count, sampler, spec, rng,
                                     std::forward<Observer>(observe));
}

template <class T>
Array<T> sample_toy_flow(const ToyFlow<T>& f, std::size_t count, const flow::SamplerConfig& sampler, const flow::OTPathSpec& spec,
                         Rng& rng) {
  return sample_toy_flow(f, count, sampler, spec, rng, [](std::size_t, T, const Array<T>&) {});
}

}  // namespace contok::toy
