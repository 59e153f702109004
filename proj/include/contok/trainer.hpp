#pragma once

// Joint LM + CFM objective, Adam with cosine annealing, two-stage training and
// the CTCK1 checkpoint format.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <numbers>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "contok/binary_io.hpp"
#include "contok/model.hpp"
#include "contok/ot_flow.hpp"
#include "contok/parallel_seq.hpp"

namespace contok::train {

using ad::Var;
using seq::Batch;
using seq::ParallelSequence;

struct TrainConfig {
  int stage = 1;
  double lr_init = 1e-4;
  double lr_min = 5e-6;
  std::size_t total_steps = 4000;
  std::size_t batch_size = 16;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t seed = 0;
  double cfm_weight = 1.0;
  double grad_clip_norm = 1.0;
  std::size_t checkpoint_every = 500;
  std::size_t dev_eval_size = 256;

  void validate() const {
    if (stage != 1 && stage != 2) throw ConfigError("train: stage must be 1 or 2");
    if (!(lr_min < lr_init) || !(lr_min >= 0.0)) throw ConfigError("train: require 0 <= lr_min < lr_init");
    if (total_steps < 1) throw ConfigError("train: total_steps must be >= 1");
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("train: betas must lie in [0, 1)");
    if (!(eps > 0.0)) throw ConfigError("train: eps must be > 0");
    if (!(cfm_weight >= 0.0)) throw ConfigError("train: cfm_weight must be >= 0");
    if (!(grad_clip_norm > 0.0)) throw ConfigError("train: grad_clip_norm must be > 0");
    if (dev_eval_size < 1) throw ConfigError("train: dev_eval_size must be >= 1");
  }
};

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"stage", c.stage},           {"lr_init", c.lr_init},
          {"lr_min", c.lr_min},         {"total_steps", c.total_steps},
          {"batch_size", c.batch_size}, {"beta1", c.beta1},
          {"beta2", c.beta2},           {"eps", c.eps},
          {"seed", c.seed},             {"cfm_weight", c.cfm_weight},
          {"grad_clip_norm", c.grad_clip_norm}, {"checkpoint_every", c.checkpoint_every},
          {"dev_eval_size", c.dev_eval_size}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  constexpr std::string_view s = "train";
  json_util::reject_unknown(j,
                            {"stage", "lr_init", "lr_min", "total_steps", "batch_size", "beta1", "beta2", "eps", "seed",
                             "cfm_weight", "grad_clip_norm", "checkpoint_every", "dev_eval_size"},
                            s);
  TrainConfig c;
  json_util::read(j, "stage", c.stage, s);
  json_util::read(j, "lr_init", c.lr_init, s);
  json_util::read(j, "lr_min", c.lr_min, s);
  json_util::read(j, "total_steps", c.total_steps, s);
  json_util::read(j, "batch_size", c.batch_size, s);
  json_util::read(j, "beta1", c.beta1, s);
  json_util::read(j, "beta2", c.beta2, s);
  json_util::read(j, "eps", c.eps, s);
  json_util::read(j, "seed", c.seed, s);
  json_util::read(j, "cfm_weight", c.cfm_weight, s);
  json_util::read(j, "grad_clip_norm", c.grad_clip_norm, s);
  json_util::read(j, "checkpoint_every", c.checkpoint_every, s);
  json_util::read(j, "dev_eval_size", c.dev_eval_size, s);
  c.validate();
  return c;
}

/// Cosine annealing from lr_init at step 0 to lr_min at total_steps.
inline double lr_at(std::size_t step, const TrainConfig& cfg) {
  if (step > cfg.total_steps) {
    throw DomainError("lr_at: step " + std::to_string(step) + " outside [0, " + std::to_string(cfg.total_steps) + "]");
  }
  const double frac = static_cast<double>(step) / static_cast<double>(cfg.total_steps);
  return cfg.lr_min + 0.5 * (cfg.lr_init - cfg.lr_min) * (1.0 + std::cos(std::numbers::pi * frac));
}

// ---------------------------------------------------------------------------
// Loss

template <class T>
struct LossParts {
  Var<T> total;
  double lm = 0.0;
  double cfm = 0.0;
  std::size_t text_targets = 0;
  std::size_t state_targets = 0;
  std::size_t frame_targets = 0;
};

/// Next-step targets: position i predicts the tokens of step i + 1; -1 where
/// the mask of step i + 1 is off.
template <class T>
std::vector<std::int64_t> shifted_targets(const Batch<T>& b, const std::vector<std::int64_t>& ids,
                                          const std::vector<std::uint8_t>& mask) {
  std::vector<std::int64_t> out(b.batch * b.length, -1);
  for (std::size_t k = 0; k < b.batch; ++k) {
    for (std::size_t i = 0; i + 1 < b.length; ++i) {
      const std::size_t next = b.flat(k, i + 1);
      if (mask[next]) out[b.flat(k, i)] = ids[next];
    }
  }
  return out;
}

/// Rows (flattened positions) whose condition predicts a frame at the next step.
template <class T>
std::vector<std::size_t> frame_condition_rows(const Batch<T>& b) {
  std::vector<std::size_t> rows;
  for (std::size_t k = 0; k < b.batch; ++k) {
    for (std::size_t i = 0; i + 1 < b.length; ++i) {
      if (b.frame_loss_mask[b.flat(k, i + 1)]) rows.push_back(b.flat(k, i));
    }
  }
  return rows;
}

/// CFM regression of the flow MLP on the frames of a batch given conditions [B, n, D].
template <class T>
Var<T> cfm_loss(const model::SequenceModel<T>& m, const Batch<T>& b, const Var<T>& condition,
                const flow::OTPathSpec& spec, Rng& rng, std::size_t* count = nullptr) {
  const auto rows = frame_condition_rows(b);
  if (count) *count = rows.size();
  if (rows.empty()) return Var<T>(Array<T>::scalar(T{0}));
  const std::size_t d = b.frame_dim, D = condition.shape()[2];
  Array<T> xt(Shape{rows.size(), d}), target(Shape{rows.size(), d});
  std::vector<T> times(rows.size());
  std::vector<std::int64_t> gather(rows.size());
  auto fr = b.frames.data();
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const std::size_t next = rows[r] + 1;
    const std::span<const T> x1(fr.data() + next * d, d);
    const auto pair = flow::cfm_training_pair<T>(x1, spec, rng);
    times[r] = pair.t;
    std::copy(pair.x_t.begin(), pair.x_t.end(), xt.data().begin() + static_cast<std::ptrdiff_t>(r * d));
    std::copy(pair.target.begin(), pair.target.end(), target.data().begin() + static_cast<std::ptrdiff_t>(r * d));
    gather[r] = static_cast<std::int64_t>(rows[r]);
  }
  const Var<T> cond = ad::embedding_lookup(ad::reshape(condition, {b.batch * b.length, D}), std::move(gather), {rows.size()});
  return ad::mse(m.flow_mlp(Var<T>(std::move(xt)), times, cond), Var<T>(std::move(target)));
}

/// total = CE(text) + CE(state) + cfm_weight * CFM, each averaged over its own targets.
template <class T>
LossParts<T> joint_loss(const model::SequenceModel<T>& m, const Batch<T>& b, const flow::OTPathSpec& spec, Rng& rng,
                        double cfm_weight = 1.0) {
  LossParts<T> out;
  const auto text_t = shifted_targets(b, b.text_ids, b.text_loss_mask);
  const auto state_t = shifted_targets(b, b.state_ids, b.state_loss_mask);
  out.text_targets = static_cast<std::size_t>(std::count_if(text_t.begin(), text_t.end(), [](auto v) { return v >= 0; }));
  out.state_targets = static_cast<std::size_t>(std::count_if(state_t.begin(), state_t.end(), [](auto v) { return v >= 0; }));
  out.frame_targets = frame_condition_rows(b).size();
  if (out.text_targets == 0 && out.state_targets == 0 && out.frame_targets == 0) {
    throw DomainError("joint_loss: batch has no loss positions");
  }
  const auto fwd = m.forward(b);
  const Var<T> lm = ad::add(ad::cross_entropy(fwd.text_logits, text_t), ad::cross_entropy(fwd.state_logits, state_t));
  const Var<T> cfm = cfm_loss(m, b, fwd.condition, spec, rng);
  out.lm = static_cast<double>(lm.item());
  out.cfm = static_cast<double>(cfm.item());
  out.total = ad::add(lm, ad::scale(cfm, static_cast<T>(cfm_weight)));
  return out;
}

// ---------------------------------------------------------------------------
// Optimizer

/// Adam with global-norm gradient clipping. Parameters that do not require
/// gradients are skipped and keep their moments.
template <class T>
class Adam {
 public:
  Adam() = default;
  explicit Adam(const model::ParamStore<T>& store) {
    for (const auto& [name, v] : store.items()) {
      m_.emplace(name, Array<T>(v.shape()));
      v_.emplace(name, Array<T>(v.shape()));
    }
  }

  std::size_t steps() const noexcept { return t_; }
  void set_steps(std::size_t t) noexcept { t_ = t; }
  Array<T>& first_moment(const std::string& name) { return lookup(m_, name); }
  Array<T>& second_moment(const std::string& name) { return lookup(v_, name); }
  const Array<T>& first_moment(const std::string& name) const { return lookup(m_, name); }
  const Array<T>& second_moment(const std::string& name) const { return lookup(v_, name); }

  /// Applies one update and returns the pre-clipping global gradient norm.
  double step(model::ParamStore<T>& store, double lr, const TrainConfig& cfg) {
    double sq = 0.0;
    for (const auto& [name, p] : store.items()) {
      if (!p.requires_grad() || !p.has_grad()) continue;
      for (T g : p.grad().data()) sq += static_cast<double>(g) * static_cast<double>(g);
    }
    const double norm = std::sqrt(sq);
    const double clip = norm > cfg.grad_clip_norm ? cfg.grad_clip_norm / norm : 1.0;
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t_));
    const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
    const T step_size = static_cast<T>(lr / bc1);
    const T inv_bc2 = static_cast<T>(1.0 / bc2);
    const T eps = static_cast<T>(cfg.eps);
    const T c = static_cast<T>(clip);
    for (auto& [name, p] : store.items()) {
      if (!p.requires_grad()) continue;
      auto w = p.mutable_value().data();
      auto m = lookup(m_, name).data();
      auto v = lookup(v_, name).data();
      if (!p.has_grad()) {
        for (std::size_t i = 0; i < w.size(); ++i) {
          m[i] = b1 * m[i];
          v[i] = b2 * v[i];
          w[i] -= step_size * m[i] / (std::sqrt(v[i] * inv_bc2) + eps);
        }
        continue;
      }
      auto g = p.grad().data();
      for (std::size_t i = 0; i < w.size(); ++i) {
        const T gi = g[i] * c;
        m[i] = b1 * m[i] + (T{1} - b1) * gi;
        v[i] = b2 * v[i] + (T{1} - b2) * gi * gi;
        w[i] -= step_size * m[i] / (std::sqrt(v[i] * inv_bc2) + eps);
      }
    }
    return norm;
  }

 private:
  template <class Map>
  static auto& lookup(Map& map, const std::string& name) {
    auto it = map.find(name);
    if (it == map.end()) throw ConfigError("optimizer has no state for parameter '" + name + "'");
    return it->second;
  }

  std::unordered_map<std::string, Array<T>> m_, v_;
  std::size_t t_ = 0;
};

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr std::string_view kCheckpointMagic = "CTCK1";
inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class DType : std::uint8_t { F32 = 0, F64 = 1 };

/// Array stored in a checkpoint. Values are kept as doubles; f32 arrays
/// round-trip exactly because every float is representable as a double.
struct NamedArray {
  std::string name;
  DType dtype = DType::F32;
  Shape shape;
  std::vector<double> values;
};

struct Checkpoint {
  nlohmann::json config;
  std::vector<NamedArray> arrays;

  const NamedArray* find(const std::string& name) const {
    for (const auto& a : arrays) {
      if (a.name == name) return &a;
    }
    return nullptr;
  }
  int stage() const { return config.value("stage", 0); }
  std::size_t step() const { return config.value("step", std::size_t{0}); }
};

template <class T>
constexpr DType dtype_of() {
  return std::is_same_v<T, double> ? DType::F64 : DType::F32;
}

template <class T>
NamedArray to_named(const std::string& name, const Array<T>& a) {
  NamedArray n{name, dtype_of<T>(), a.shape(), {}};
  n.values.assign(a.data().begin(), a.data().end());
  return n;
}

template <class T>
Array<T> from_named(const NamedArray& n) {
  std::vector<T> values(n.values.size());
  std::transform(n.values.begin(), n.values.end(), values.begin(), [](double v) { return static_cast<T>(v); });
  return Array<T>(n.shape, std::move(values));
}

inline std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& c) {
  io::ByteWriter w;
  w.bytes(kCheckpointMagic);
  w.u32(kCheckpointVersion);
  w.string(c.config.dump());
  w.u32(static_cast<std::uint32_t>(c.arrays.size()));
  for (const auto& a : c.arrays) {
    if (numel(a.shape) != a.values.size()) throw DimensionError("checkpoint array '" + a.name + "' has inconsistent size");
    w.string(a.name);
    w.u8(static_cast<std::uint8_t>(a.dtype));
    w.u8(static_cast<std::uint8_t>(a.shape.size()));
    for (auto d : a.shape) w.u32(static_cast<std::uint32_t>(d));
    for (double v : a.values) {
      if (a.dtype == DType::F32) {
        w.f32(static_cast<float>(v));
      } else {
        w.f64(v);
      }
    }
  }
  return w.buffer();
}

inline Checkpoint decode_checkpoint(std::vector<std::uint8_t> bytes) {
  io::ByteReader r(std::move(bytes));
  if (r.bytes(kCheckpointMagic.size()) != kCheckpointMagic) throw IoError("not a checkpoint file (bad magic)");
  const auto version = r.u32();
  if (version != kCheckpointVersion) throw IoError("unsupported checkpoint version " + std::to_string(version));
  Checkpoint c;
  try {
    c.config = nlohmann::json::parse(r.string());
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("malformed checkpoint config: ") + e.what());
  }
  const auto count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedArray a;
    a.name = r.string();
    const auto tag = r.u8();
    if (tag > 1) throw IoError("checkpoint array '" + a.name + "' has unknown dtype " + std::to_string(tag));
    a.dtype = static_cast<DType>(tag);
    const auto rank = r.u8();
    for (std::uint8_t k = 0; k < rank; ++k) a.shape.push_back(r.u32());
    const std::size_t n = numel(a.shape);
    const std::size_t width = a.dtype == DType::F32 ? 4 : 8;
    if (r.remaining() < n * width) throw IoError("checkpoint array '" + a.name + "' is truncated");
    a.values.resize(n);
    for (auto& v : a.values) v = a.dtype == DType::F32 ? static_cast<double>(r.f32()) : r.f64();
    c.arrays.push_back(std::move(a));
  }
  if (!r.at_end()) throw IoError("trailing bytes after checkpoint arrays");
  return c;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  io::write_file_atomic(path, encode_checkpoint(c));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(io::read_file(path)); }

/// Snapshot of parameters, optimizer moments and normalization constants.
template <class T>
Checkpoint make_checkpoint(const model::SequenceModel<T>& m, const Adam<T>* adam, int stage, std::size_t step,
                           const nlohmann::json& extra_config, const std::vector<double>& norm_mean,
                           const std::vector<double>& norm_std) {
  Checkpoint c;
  c.config = extra_config;
  c.config["model"] = model::to_json(m.config());
  c.config["stage"] = stage;
  c.config["step"] = step;
  c.config["adam_steps"] = adam ? adam->steps() : 0;
  c.config["dtype"] = std::is_same_v<T, double> ? "f64" : "f32";
  for (const auto& [name, v] : m.params().items()) c.arrays.push_back(to_named(name, v.value()));
  if (adam) {
    for (const auto& [name, v] : m.params().items()) c.arrays.push_back(to_named("adam.m." + name, adam->first_moment(name)));
    for (const auto& [name, v] : m.params().items()) c.arrays.push_back(to_named("adam.v." + name, adam->second_moment(name)));
  }
  if (!norm_mean.empty()) {
    c.arrays.push_back({"norm.mean", DType::F64, {norm_mean.size()}, norm_mean});
    c.arrays.push_back({"norm.std", DType::F64, {norm_std.size()}, norm_std});
  }
  return c;
}

inline model::ModelConfig model_config_of(const Checkpoint& c) {
  if (!c.config.contains("model")) throw IoError("checkpoint has no model configuration");
  try {
    return model::model_config_from_json(c.config.at("model"));
  } catch (const ConfigError& e) {
    throw IoError(std::string("checkpoint model configuration: ") + e.what());
  }
}

/// Copies every parameter (and optionally the optimizer moments) out of a checkpoint.
template <class T>
void restore(const Checkpoint& c, model::SequenceModel<T>& m, Adam<T>* adam = nullptr) {
  std::unordered_map<std::string, int> seen;
  for (const auto& a : c.arrays) {
    if (++seen[a.name] > 1) throw IoError("checkpoint array '" + a.name + "' appears twice");
  }
  for (auto& [name, v] : m.params().items()) {
    const NamedArray* a = c.find(name);
    if (!a) throw IoError("checkpoint is missing parameter '" + name + "'");
    if (a->shape != v.shape()) {
      throw IoError("checkpoint parameter '" + name + "' has shape " + shape_str(a->shape) + ", model expects " + shape_str(v.shape()));
    }
    v.mutable_value() = from_named<T>(*a);
    v.zero_grad();
  }
  if (adam) {
    for (const auto& [name, v] : m.params().items()) {
      const NamedArray* mm = c.find("adam.m." + name);
      const NamedArray* vv = c.find("adam.v." + name);
      if (!mm || !vv) throw IoError("checkpoint is missing optimizer state for '" + name + "'");
      adam->first_moment(name) = from_named<T>(*mm);
      adam->second_moment(name) = from_named<T>(*vv);
    }
    adam->set_steps(c.config.value("adam_steps", std::size_t{0}));
  }
}

inline std::pair<std::vector<double>, std::vector<double>> norm_stats_of(const Checkpoint& c) {
  const NamedArray* m = c.find("norm.mean");
  const NamedArray* s = c.find("norm.std");
  if (!m || !s) return {};
  return {m->values, s->values};
}

// ---------------------------------------------------------------------------
// Training loop

struct StepMetrics {
  std::size_t step = 0;
  double lr = 0.0;
  double lm = 0.0;
  double cfm = 0.0;
  double total = 0.0;
};

/// "step<TAB>lr<TAB>lm<TAB>cfm<TAB>total" with round-trippable reals.
inline std::string format_metric_line(const StepMetrics& s) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%zu\t%.17g\t%.17g\t%.17g\t%.17g", s.step, s.lr, s.lm, s.cfm, s.total);
  return buf;
}

struct DevLoss {
  double lm = 0.0;
  double cfm = 0.0;
  double total = 0.0;
};

/// Training record indices for one step, sampled with replacement.
inline std::vector<std::size_t> batch_indices(std::size_t batch_size, std::size_t corpus_size, Rng& rng) {
  std::vector<std::size_t> idx(batch_size);
  for (auto& i : idx) i = rng.below(corpus_size);
  return idx;
}

template <class T>
Batch<T> make_batch(const std::vector<ParallelSequence<T>>& records, const std::vector<std::size_t>& idx, std::size_t frame_dim) {
  std::vector<const ParallelSequence<T>*> items;
  for (auto i : idx) items.push_back(&records.at(i));
  return seq::collate(items, seq::max_length(items), frame_dim);
}

/// Record-weighted loss over the first dev_eval_size dev records with a fixed noise seed.
template <class T>
DevLoss dev_loss(const model::SequenceModel<T>& m, const std::vector<ParallelSequence<T>>& dev, const TrainConfig& cfg,
                 const flow::OTPathSpec& spec) {
  if (dev.empty()) throw DomainError("dev_loss: empty dev set");
  const std::size_t n = std::min(cfg.dev_eval_size, dev.size());
  DevLoss out;
  for (std::size_t start = 0, chunk = 0; start < n; start += cfg.batch_size, ++chunk) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(n, start + cfg.batch_size); ++i) idx.push_back(i);
    Rng rng{cfg.seed, 0x646576ULL, chunk};
    const auto parts = joint_loss(m, make_batch(dev, idx, m.config().frame_dim), spec, rng, cfg.cfm_weight);
    const double w = static_cast<double>(idx.size()) / static_cast<double>(n);
    out.lm += w * parts.lm;
    out.cfm += w * parts.cfm;
    out.total += w * static_cast<double>(parts.total.item());
  }
  return out;
}

struct TrainHooks {
  /// Called after every step with its metrics.
  std::function<void(const StepMetrics&)> on_step;
  /// Called with the number of completed steps every checkpoint_every steps and at the end.
  std::function<void(std::size_t)> on_checkpoint;
  /// Stops after this many completed steps (the schedule still spans total_steps).
  std::optional<std::size_t> stop_after;
};

struct StageResult {
  std::vector<StepMetrics> metrics;
  std::size_t steps_done = 0;
};

/// Runs steps [start_step, total_steps) of one stage. Each step draws its batch
/// and noise from Rng{seed, stage, step}, so a resumed run repeats the
/// uninterrupted one exactly.
template <class T>
StageResult train_stage(model::SequenceModel<T>& m, Adam<T>& adam, const std::vector<ParallelSequence<T>>& train,
                        const TrainConfig& cfg, const flow::OTPathSpec& spec, std::size_t start_step = 0,
                        const TrainHooks& hooks = {}) {
  cfg.validate();
  if (train.empty()) throw DomainError("train_stage: empty training set");
  if (cfg.stage == 1) {
    for (const auto& s : train) {
      if (s.task != seq::TaskKind::SpeechInTextOut && s.task != seq::TaskKind::TextInSpeechOut) {
        throw ConfigError("stage 1 trains on ASR and TTS records only, found " + std::string(seq::to_string(s.task)));
      }
    }
  }
  if (start_step > cfg.total_steps) throw ConfigError("train_stage: start step beyond total_steps");
  m.set_stage(cfg.stage);

  StageResult result;
  result.steps_done = start_step;
  std::optional<StepMetrics> last_finite;
  const std::size_t end = hooks.stop_after ? std::min(cfg.total_steps, *hooks.stop_after) : cfg.total_steps;
  for (std::size_t step = start_step; step < end; ++step) {
    Rng rng{cfg.seed, static_cast<std::uint64_t>(cfg.stage), step};
    const auto batch = make_batch(train, batch_indices(cfg.batch_size, train.size(), rng), m.config().frame_dim);
    StepMetrics sm;
    sm.step = step;
    sm.lr = lr_at(step, cfg);
    {
      ad::Tape<T> tape;
      const auto parts = joint_loss(m, batch, spec, rng, cfg.cfm_weight);
      sm.lm = parts.lm;
      sm.cfm = parts.cfm;
      sm.total = static_cast<double>(parts.total.item());
      if (!std::isfinite(sm.total)) {
        std::string msg = "non-finite loss at step " + std::to_string(step);
        if (last_finite) msg += "; last finite metrics: " + format_metric_line(*last_finite);
        throw NumericAbort(msg, step);
      }
      m.params().zero_grad();
      tape.backward(parts.total);
    }
    adam.step(m.params(), sm.lr, cfg);
    m.params().zero_grad();
    last_finite = sm;
    result.metrics.push_back(sm);
    result.steps_done = step + 1;
    if (hooks.on_step) hooks.on_step(sm);
    if (hooks.on_checkpoint && cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 && step + 1 != cfg.total_steps) {
      hooks.on_checkpoint(step + 1);
    }
  }
  if (hooks.on_checkpoint && result.steps_done > start_step) hooks.on_checkpoint(result.steps_done);
  return result;
}

}  // namespace contok::train
