#pragma once

// Finite-difference checks of every differentiable op and of the full joint
// loss on the tiny model configuration, all in double precision.

#include <string>
#include <vector>

#include "contok/autodiff.hpp"
#include "contok/gradcheck.hpp"
#include "contok/model.hpp"
#include "contok/parallel_seq.hpp"
#include "contok/trainer.hpp"

namespace contok::ad {

struct SuiteResult {
  std::string name;
  double max_rel_error = 0.0;
  std::string worst;
};

namespace detail {

inline Var<double> random_param(const Shape& shape, Rng& rng, double scale = 1.0) {
  Array<double> a(shape);
  for (auto& v : a.data()) v = scale * rng.normal();
  return Var<double>(std::move(a), true);
}

/// Weighted sum with fixed random weights, so every output element matters.
inline Var<double> probe_sum(const Var<double>& y, std::uint64_t seed) {
  Rng rng{seed, 0x77ULL};
  Array<double> w(y.shape());
  for (auto& v : w.data()) v = rng.normal();
  return sum(mul(y, Var<double>(std::move(w))));
}

}  // namespace detail

/// Tiny batch covering all four task kinds.
inline seq::Batch<double> tiny_batch(const model::ModelConfig& mc, std::uint64_t seed) {
  Rng rng{seed, 0x62ULL};
  auto frame = [&] {
    flow::Frame<double> f(mc.frame_dim);
    for (auto& v : f) v = rng.normal();
    return f;
  };
  auto word = [&] { return static_cast<std::int64_t>(seq::text::kFirstWord + rng.below(mc.text_vocab - seq::text::kFirstWord)); };
  std::vector<seq::ParallelSequence<double>> items;
  for (auto task : seq::kAllTasks) {
    seq::Utterance<double> prompt, response;
    if (seq::speech_in(task)) {
      for (int i = 0; i < 3; ++i) prompt.frames.push_back(frame());
    } else {
      prompt.text = {word(), word()};
    }
    response.text = {word(), word()};
    if (seq::speech_out(task)) {
      for (int i = 0; i < 2; ++i) response.frames.push_back(frame());
    }
    items.push_back(seq::build_sequence(task, prompt, response, mc.max_seq_len));
  }
  std::vector<const seq::ParallelSequence<double>*> ptrs;
  for (const auto& s : items) ptrs.push_back(&s);
  return seq::collate(ptrs, seq::max_length(ptrs), mc.frame_dim);
}

/// Runs every check; each result holds the worst parameter of one check.
inline std::vector<SuiteResult> run_gradcheck_suite(std::uint64_t seed = 0, double step = 1e-5) {
  std::vector<SuiteResult> out;
  GradCheckOptions opt;
  opt.step = step;
  opt.seed = seed;
  Rng rng{seed, 0x67ULL};
  using P = std::vector<std::pair<std::string, Var<double>>>;
  auto run = [&](const std::string& name, const std::function<Var<double>()>& f, const P& params) {
    const auto rep = check_gradients<double>(f, params, opt);
    out.push_back({name, rep.max_rel_error, rep.worst});
  };
  using detail::probe_sum;
  using detail::random_param;

  {
    auto a = random_param({3, 4}, rng), b = random_param({4, 5}, rng);
    run("matmul", [=] { return probe_sum(matmul(a, b), 1); }, {{"a", a}, {"b", b}});
  }
  {
    auto a = random_param({2, 3, 4}, rng), b = random_param({4, 2}, rng);
    run("matmul_shared_rhs", [=] { return probe_sum(matmul(a, b), 2); }, {{"a", a}, {"b", b}});
  }
  {
    auto a = random_param({2, 2, 3, 4}, rng), b = random_param({2, 2, 4, 3}, rng);
    run("matmul_batched", [=] { return probe_sum(matmul(a, b), 3); }, {{"a", a}, {"b", b}});
  }
  {
    auto a = random_param({2, 3, 4}, rng), b = random_param({4}, rng);
    run("add_broadcast", [=] { return probe_sum(add(a, b), 4); }, {{"a", a}, {"b", b}});
    run("sub_broadcast", [=] { return probe_sum(sub(a, b), 5); }, {{"a", a}, {"b", b}});
    run("mul_broadcast", [=] { return probe_sum(mul(a, b), 6); }, {{"a", a}, {"b", b}});
    run("scale", [=] { return probe_sum(scale(a, 0.7), 7); }, {{"a", a}});
    run("silu", [=] { return probe_sum(silu(a), 8); }, {{"a", a}});
    run("softmax", [=] { return probe_sum(softmax(a), 9); }, {{"a", a}});
    run("sum", [=] { return sum(mul(a, a)); }, {{"a", a}});
    run("mean", [=] { return mean(mul(a, a)); }, {{"a", a}});
    run("reshape", [=] { return probe_sum(reshape(a, {6, 4}), 10); }, {{"a", a}});
    run("permute", [=] { return probe_sum(permute(a, {2, 0, 1}), 11); }, {{"a", a}});
    run("slice", [=] { return probe_sum(slice(a, 1, 1, 2), 12); }, {{"a", a}});
  }
  {
    auto x = random_param({2, 3, 5}, rng), g = random_param({5}, rng), b = random_param({5}, rng);
    run("layer_norm", [=] { return probe_sum(layer_norm(x, g, b), 13); }, {{"x", x}, {"gain", g}, {"bias", b}});
  }
  {
    auto table = random_param({6, 3}, rng);
    run("embedding_lookup", [=] { return probe_sum(embedding_lookup(table, {0, 5, -1, 2, 0, 3}, {2, 3}), 14); }, {{"table", table}});
  }
  {
    auto a = random_param({2, 3}, rng), b = random_param({2, 2}, rng), c = random_param({1, 3}, rng);
    run("concat_axis1", [=] { return probe_sum(concat<double>({a, b}, 1), 15); }, {{"a", a}, {"b", b}});
    run("concat_axis0", [=] { return probe_sum(concat<double>({a, c}, 0), 16); }, {{"a", a}, {"c", c}});
  }
  {
    auto logits = random_param({5, 4}, rng);
    run("cross_entropy", [=] { return cross_entropy(logits, {0, 3, -1, 2, 1}); }, {{"logits", logits}});
    auto pred = random_param({3, 2}, rng), target = random_param({3, 2}, rng);
    run("mse", [=] { return mse(pred, target); }, {{"pred", pred}, {"target", target}});
  }
  {
    const auto mc = model::ModelConfig::tiny();
    model::SequenceModel<double> m(mc, seed);
    // Perturb the deterministic initialization so layer norms and biases are generic.
    for (auto& [name, v] : m.params().items()) {
      for (auto& x : v.mutable_value().data()) x += 0.1 * rng.normal();
    }
    const auto batch = tiny_batch(mc, seed);
    flow::OTPathSpec spec;
    spec.frame_dim = mc.frame_dim;
    auto f = [&m, batch, spec, seed] {
      Rng noise{seed, 0x6a6cULL};
      return train::joint_loss(m, batch, spec, noise).total;
    };
    run("joint_loss", f, m.params().items());
  }
  return out;
}

}  // namespace contok::ad
