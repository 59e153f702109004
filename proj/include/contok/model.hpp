#pragma once

// Speech/text sequence model: input frame encoder with adapter, causal
// backbone with a text head, and a speech output module (transformer blocks,
// state head, flow-matching MLP).

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "contok/autodiff.hpp"
#include "contok/json_util.hpp"
#include "contok/parallel_seq.hpp"
#include "contok/rng.hpp"

namespace contok::model {

using ad::Var;

struct ModelConfig {
  std::size_t backbone_layers = 4;
  std::size_t backbone_dim = 128;
  std::size_t backbone_heads = 4;
  std::size_t out_blocks = 2;
  std::size_t mlp_layers = 3;
  std::size_t mlp_hidden = 256;
  std::size_t frame_dim = 20;
  std::size_t text_vocab = 64;
  std::size_t state_vocab = 8;
  std::size_t in_enc_layers = 2;
  std::size_t adapter_layers = 2;
  std::size_t max_seq_len = 256;
  std::size_t time_embed_dim = 32;

  void validate() const {
    if (backbone_layers < 1 || backbone_dim < 1 || backbone_heads < 1 || mlp_layers < 1 || mlp_hidden < 1 ||
        frame_dim < 1 || in_enc_layers < 1 || adapter_layers < 1 || max_seq_len < 1 || time_embed_dim < 2) {
      throw ConfigError("model: every size and count must be >= 1");
    }
    if (backbone_dim % backbone_heads != 0) throw ConfigError("model: backbone_dim must be divisible by backbone_heads");
    if (time_embed_dim % 2 != 0) throw ConfigError("model: time_embed_dim must be even");
    if (state_vocab < seq::kNumStates) throw ConfigError("model: state_vocab must be >= 6");
    if (text_vocab < static_cast<std::size_t>(seq::text::kFirstWord) + 1) throw ConfigError("model: text_vocab too small");
  }

  /// Tiny configuration used by gradient checks.
  static ModelConfig tiny() {
    ModelConfig c;
    c.backbone_layers = 1;
    c.backbone_dim = 8;
    c.backbone_heads = 2;
    c.out_blocks = 1;
    c.mlp_layers = 2;
    c.mlp_hidden = 8;
    c.frame_dim = 3;
    c.text_vocab = 7;
    c.state_vocab = 6;
    c.in_enc_layers = 1;
    c.adapter_layers = 1;
    c.max_seq_len = 16;
    c.time_embed_dim = 4;
    return c;
  }
};

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"backbone_layers", c.backbone_layers}, {"backbone_dim", c.backbone_dim}, {"backbone_heads", c.backbone_heads},
          {"out_blocks", c.out_blocks},           {"mlp_layers", c.mlp_layers},     {"mlp_hidden", c.mlp_hidden},
          {"frame_dim", c.frame_dim},             {"text_vocab", c.text_vocab},     {"state_vocab", c.state_vocab},
          {"in_enc_layers", c.in_enc_layers},     {"adapter_layers", c.adapter_layers}, {"max_seq_len", c.max_seq_len},
          {"time_embed_dim", c.time_embed_dim}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  constexpr std::string_view s = "model";
  json_util::reject_unknown(j,
                            {"backbone_layers", "backbone_dim", "backbone_heads", "out_blocks", "mlp_layers", "mlp_hidden",
                             "frame_dim", "text_vocab", "state_vocab", "in_enc_layers", "adapter_layers", "max_seq_len",
                             "time_embed_dim"},
                            s);
  ModelConfig c;
  json_util::read(j, "backbone_layers", c.backbone_layers, s);
  json_util::read(j, "backbone_dim", c.backbone_dim, s);
  json_util::read(j, "backbone_heads", c.backbone_heads, s);
  json_util::read(j, "out_blocks", c.out_blocks, s);
  json_util::read(j, "mlp_layers", c.mlp_layers, s);
  json_util::read(j, "mlp_hidden", c.mlp_hidden, s);
  json_util::read(j, "frame_dim", c.frame_dim, s);
  json_util::read(j, "text_vocab", c.text_vocab, s);
  json_util::read(j, "state_vocab", c.state_vocab, s);
  json_util::read(j, "in_enc_layers", c.in_enc_layers, s);
  json_util::read(j, "adapter_layers", c.adapter_layers, s);
  json_util::read(j, "max_seq_len", c.max_seq_len, s);
  json_util::read(j, "time_embed_dim", c.time_embed_dim, s);
  c.validate();
  return c;
}

/// Named, ordered parameter registry.
template <class T>
class ParamStore {
 public:
  Var<T> add(std::string name, Array<T> init) {
    if (index_.count(name)) throw ConfigError("duplicate parameter name '" + name + "'");
    Var<T> v(std::move(init), true);
    index_.emplace(name, items_.size());
    items_.emplace_back(std::move(name), v);
    return v;
  }

  const std::vector<std::pair<std::string, Var<T>>>& items() const noexcept { return items_; }
  std::vector<std::pair<std::string, Var<T>>>& items() noexcept { return items_; }

  const Var<T>& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
    return items_[it->second].second;
  }
  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [name, v] : items_) n += v.size();
    return n;
  }

  void zero_grad() {
    for (auto& [name, v] : items_) v.zero_grad();
  }

 private:
  std::vector<std::pair<std::string, Var<T>>> items_;
  std::unordered_map<std::string, std::size_t> index_;
};

namespace detail {

template <class T>
Array<T> normal_init(const Shape& shape, Rng& rng, double stddev = 0.02) {
  Array<T> a(shape);
  for (auto& v : a.data()) v = static_cast<T>(stddev * rng.normal());
  return a;
}

/// Additive mask value for blocked attention scores.
template <class T>
constexpr T kBlocked = T(-1e9);

}  // namespace detail

template <class T>
struct Linear {
  Var<T> w, b;

  Linear() = default;
  Linear(ParamStore<T>& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng)
      : w(store.add(name + ".w", detail::normal_init<T>({in, out}, rng))), b(store.add(name + ".b", Array<T>(Shape{out}))) {}

  Var<T> operator()(const Var<T>& x) const { return ad::add(ad::matmul(x, w), b); }
};

template <class T>
struct LayerNorm {
  Var<T> gain, bias;

  LayerNorm() = default;
  LayerNorm(ParamStore<T>& store, const std::string& name, std::size_t dim)
      : gain(store.add(name + ".g", Array<T>(Shape{dim}, T{1}))), bias(store.add(name + ".b", Array<T>(Shape{dim}))) {}

  Var<T> operator()(const Var<T>& x) const { return ad::layer_norm(x, gain, bias); }
};

/// Pre-norm transformer block: x + attn(ln(x)), then x + mlp(ln(x)).
template <class T>
struct Block {
  LayerNorm<T> ln1, ln2;
  Linear<T> q, k, v, o, fc1, fc2;
  std::size_t heads = 1;

  Block() = default;
  Block(ParamStore<T>& store, const std::string& name, std::size_t dim, std::size_t heads_, Rng& rng)
      : ln1(store, name + ".ln1", dim),
        ln2(store, name + ".ln2", dim),
        q(store, name + ".attn.q", dim, dim, rng),
        k(store, name + ".attn.k", dim, dim, rng),
        v(store, name + ".attn.v", dim, dim, rng),
        o(store, name + ".attn.o", dim, dim, rng),
        fc1(store, name + ".mlp.fc1", dim, 4 * dim, rng),
        fc2(store, name + ".mlp.fc2", 4 * dim, dim, rng),
        heads(heads_) {}

  /// `mask` is additive, shaped [n, n] or [B, heads, n, n].
  Var<T> operator()(const Var<T>& x, const Var<T>& mask, std::vector<Array<T>>* attention_trace = nullptr) const {
    const std::size_t B = x.shape()[0], n = x.shape()[1], D = x.shape()[2], hd = D / heads;
    const Var<T> h = ln1(x);
    const Var<T> qh = ad::permute(ad::reshape(q(h), {B, n, heads, hd}), {0, 2, 1, 3});
    const Var<T> kt = ad::permute(ad::reshape(k(h), {B, n, heads, hd}), {0, 2, 3, 1});
    const Var<T> vh = ad::permute(ad::reshape(v(h), {B, n, heads, hd}), {0, 2, 1, 3});
    const T inv = T{1} / std::sqrt(static_cast<T>(hd));
    const Var<T> probs = ad::softmax(ad::add(ad::scale(ad::matmul(qh, kt), inv), mask));
    if (attention_trace) attention_trace->push_back(probs.value());
    const Var<T> ctx = ad::reshape(ad::permute(ad::matmul(probs, vh), {0, 2, 1, 3}), {B, n, D});
    const Var<T> x1 = ad::add(x, o(ctx));
    return ad::add(x1, fc2(ad::silu(fc1(ln2(x1)))));
  }
};

template <class T>
Var<T> causal_mask(std::size_t n) {
  Array<T> m(Shape{n, n});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) m[i * n + j] = detail::kBlocked<T>;
  }
  return Var<T>(std::move(m));
}

/// Bidirectional mask hiding keys past each item's length.
template <class T>
Var<T> key_padding_mask(const std::vector<std::size_t>& lengths, std::size_t heads, std::size_t n) {
  Array<T> m(Shape{lengths.size(), heads, n, n});
  auto d = m.data();
  for (std::size_t b = 0; b < lengths.size(); ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = lengths[b]; j < n; ++j) d[((b * heads + h) * n + i) * n + j] = detail::kBlocked<T>;
      }
    }
  }
  return Var<T>(std::move(m));
}

/// Sinusoidal embedding of t in [0, 1], [M, dim].
template <class T>
Array<T> time_embedding(const std::vector<T>& t, std::size_t dim) {
  const std::size_t half = dim / 2;
  Array<T> out(Shape{t.size(), dim});
  auto o = out.data();
  for (std::size_t m = 0; m < t.size(); ++m) {
    const double scaled = 1000.0 * static_cast<double>(t[m]);
    for (std::size_t i = 0; i < half; ++i) {
      const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
      o[m * dim + i] = static_cast<T>(std::sin(scaled * freq));
      o[m * dim + half + i] = static_cast<T>(std::cos(scaled * freq));
    }
  }
  return out;
}

/// v_theta(x, t, cond): MLP over [x, time embedding, condition] with SiLU activations.
template <class T>
struct FlowMlp {
  std::vector<Linear<T>> layers;
  std::size_t frame_dim = 0, time_dim = 0, cond_dim = 0;

  FlowMlp() = default;
  FlowMlp(ParamStore<T>& store, const std::string& name, std::size_t frame_dim_, std::size_t time_dim_, std::size_t cond_dim_,
          std::size_t num_layers, std::size_t hidden, Rng& rng)
      : frame_dim(frame_dim_), time_dim(time_dim_), cond_dim(cond_dim_) {
    std::size_t in = frame_dim + time_dim + cond_dim;
    for (std::size_t l = 0; l < num_layers; ++l) {
      const std::size_t out = l + 1 == num_layers ? frame_dim : hidden;
      layers.emplace_back(store, name + ".layers." + std::to_string(l), in, out, rng);
      in = out;
    }
  }

  Var<T> operator()(const Var<T>& x, const std::vector<T>& t, const Var<T>& cond) const {
    if (x.shape().size() != 2 || x.shape()[1] != frame_dim) {
      throw DimensionError("flow_mlp: x has shape " + shape_str(x.shape()) + ", expected [M," + std::to_string(frame_dim) + "]");
    }
    const std::size_t rows = x.shape()[0];
    if (t.size() != rows || cond.shape() != Shape{rows, cond_dim}) {
      throw DimensionError("flow_mlp: t/cond do not match " + std::to_string(rows) + " rows");
    }
    for (T tv : t) {
      if (!(tv >= T{0} && tv <= T{1})) throw DomainError("flow_mlp: t outside [0, 1]");
    }
    Var<T> h = ad::concat<T>({x, Var<T>(time_embedding(t, time_dim)), cond}, 1);
    for (std::size_t l = 0; l < layers.size(); ++l) {
      h = layers[l](h);
      if (l + 1 < layers.size()) h = ad::silu(h);
    }
    for (T v : h.value().data()) {
      if (!std::isfinite(static_cast<double>(v))) throw ParameterHealthError("flow_mlp produced a non-finite value");
    }
    return h;
  }
};

template <class T>
struct BackboneOutput {
  Var<T> hidden;       // [B, n, D] after the final norm
  Var<T> text_logits;  // [B, n, V_t]
};

template <class T>
struct SpeechHeadOutput {
  Var<T> condition;     // [B, n, D]
  Var<T> state_logits;  // [B, n, V_s]
};

template <class T>
struct ForwardOutput {
  Var<T> text_logits;
  Var<T> state_logits;
  Var<T> condition;
};

/// Parameter groups frozen during modality alignment.
inline bool frozen_in_stage1(std::string_view name) {
  return name.starts_with("backbone.") || name.starts_with("encoder.");
}

template <class T>
class SequenceModel {
 public:
  explicit SequenceModel(const ModelConfig& config, std::uint64_t seed = 0) : config_(config) {
    config_.validate();
    Rng rng{seed, 0x6d6f64656cULL};
    const std::size_t D = config_.backbone_dim;
    const std::size_t H = config_.backbone_heads;

    text_embed_ = store_.add("embed.text", detail::normal_init<T>({config_.text_vocab, D}, rng));
    state_embed_ = store_.add("embed.state", detail::normal_init<T>({config_.state_vocab, D}, rng));
    frame_in_ = Linear<T>(store_, "embed.frame", config_.frame_dim, D, rng);

    conv1_ = Linear<T>(store_, "encoder.conv1", 3 * config_.frame_dim, D, rng);
    conv2_ = Linear<T>(store_, "encoder.conv2", 3 * D, D, rng);
    enc_pos_ = store_.add("encoder.pos", detail::normal_init<T>({config_.max_seq_len, D}, rng));
    for (std::size_t l = 0; l < config_.in_enc_layers; ++l) {
      enc_blocks_.emplace_back(store_, "encoder.blocks." + std::to_string(l), D, H, rng);
    }
    enc_norm_ = LayerNorm<T>(store_, "encoder.norm", D);
    for (std::size_t l = 0; l < config_.adapter_layers; ++l) {
      adapter_.emplace_back(store_, "adapter." + std::to_string(l), D, D, rng);
    }

    pos_embed_ = store_.add("backbone.pos", detail::normal_init<T>({config_.max_seq_len, D}, rng));
    for (std::size_t l = 0; l < config_.backbone_layers; ++l) {
      blocks_.emplace_back(store_, "backbone.blocks." + std::to_string(l), D, H, rng);
    }
    final_norm_ = LayerNorm<T>(store_, "backbone.norm", D);
    text_head_ = Linear<T>(store_, "text_head", D, config_.text_vocab, rng);

    for (std::size_t l = 0; l < config_.out_blocks; ++l) {
      out_blocks_.emplace_back(store_, "output.blocks." + std::to_string(l), D, H, rng);
    }
    if (config_.out_blocks > 0) out_norm_ = LayerNorm<T>(store_, "output.norm", D);
    state_norm_ = LayerNorm<T>(store_, "output.state_norm", D);
    state_head_ = Linear<T>(store_, "output.state_head", D, config_.state_vocab, rng);

    flow_ = FlowMlp<T>(store_, "flow", config_.frame_dim, config_.time_embed_dim, D, config_.mlp_layers, config_.mlp_hidden, rng);
  }

  const ModelConfig& config() const noexcept { return config_; }
  ParamStore<T>& params() noexcept { return store_; }
  const ParamStore<T>& params() const noexcept { return store_; }
  std::size_t parameter_count() const { return store_.scalar_count(); }

  /// Stage 1 freezes the backbone and the input encoder core; stage 2 trains everything.
  void set_stage(int stage) {
    for (auto& [name, v] : store_.items()) v.set_requires_grad(stage != 1 || !frozen_in_stage1(name));
  }

  /// [B, T, d] frames (items shorter than T are zero-padded) to [B, T, D].
  Var<T> encode_input_frames(const Var<T>& frames, const std::vector<std::size_t>& lengths) const {
    const Shape& s = frames.shape();
    if (s.size() != 3 || s[2] != config_.frame_dim) {
      throw DimensionError("encode_input_frames: frames " + shape_str(s) + " do not match frame_dim " + std::to_string(config_.frame_dim));
    }
    const std::size_t B = s[0], Tn = s[1], D = config_.backbone_dim;
    if (Tn > config_.max_seq_len) throw DimensionError("encode_input_frames: sequence longer than max_seq_len");
    if (lengths.size() != B) throw DimensionError("encode_input_frames: lengths do not match batch");
    Array<T> valid(Shape{B, Tn, D});
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t i = 0; i < std::min(lengths[b], Tn); ++i) std::fill_n(valid.data().begin() + (b * Tn + i) * D, D, T{1});
    }
    const Var<T> valid_v(std::move(valid));

    Var<T> h = ad::mul(ad::silu(conv1_(conv_window(frames))), valid_v);
    h = ad::mul(ad::silu(conv2_(conv_window(h))), valid_v);
    h = ad::add(h, ad::slice(enc_pos_, 0, 0, Tn));
    const Var<T> mask = key_padding_mask<T>(lengths, config_.backbone_heads, Tn);
    for (const auto& blk : enc_blocks_) h = blk(h, mask);
    h = enc_norm_(h);
    for (std::size_t l = 0; l < adapter_.size(); ++l) {
      h = adapter_[l](h);
      if (l + 1 < adapter_.size()) h = ad::silu(h);
    }
    return h;
  }

  /// Affine projection of frames [..., d] into the backbone width.
  Var<T> project_frame_in(const Var<T>& frames) const {
    if (frames.shape().empty() || frames.shape().back() != config_.frame_dim) {
      throw DimensionError("project_frame_in: frame shape " + shape_str(frames.shape()) + " does not match frame_dim");
    }
    return frame_in_(frames);
  }

  /// Per-step input: text embedding + state embedding + frame contribution.
  /// Predicted-stream frames go through project_frame_in, prompt frames through
  /// the input encoder; steps without a frame add nothing.
  Var<T> embed(const seq::Batch<T>& batch) const {
    const std::size_t B = batch.batch, n = batch.length, D = config_.backbone_dim, d = config_.frame_dim;
    if (batch.frame_dim != d) throw DimensionError("embed: batch frame_dim does not match model");
    Var<T> e = ad::add(ad::embedding_lookup(text_embed_, batch.text_ids, {B, n}),
                       ad::embedding_lookup(state_embed_, batch.state_ids, {B, n}));

    std::vector<std::int64_t> proj_rows(B * n, -1);
    bool any_proj = false;
    for (std::size_t f = 0; f < B * n; ++f) {
      if (batch.frame_present[f] && !batch.input_frame[f]) {
        proj_rows[f] = static_cast<std::int64_t>(f);
        any_proj = true;
      }
    }
    if (any_proj) {
      const Var<T> proj = project_frame_in(Var<T>(batch.frames.reshaped({B * n, d})));
      e = ad::add(e, ad::embedding_lookup(proj, std::move(proj_rows), {B, n}));
    }

    // Compact the prompt frames of the items that have them.
    std::vector<std::vector<std::size_t>> positions(B);
    std::vector<std::size_t> speakers;
    std::size_t longest = 0;
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t i = 0; i < n; ++i) {
        if (batch.input_frame[batch.flat(b, i)]) positions[b].push_back(i);
      }
      if (!positions[b].empty()) {
        speakers.push_back(b);
        longest = std::max(longest, positions[b].size());
      }
    }
    if (!speakers.empty()) {
      Array<T> enc_in(Shape{speakers.size(), longest, d});
      std::vector<std::size_t> lengths;
      std::vector<std::int64_t> rows(B * n, -1);
      auto src = batch.frames.data();
      for (std::size_t k = 0; k < speakers.size(); ++k) {
        const std::size_t b = speakers[k];
        lengths.push_back(positions[b].size());
        for (std::size_t j = 0; j < positions[b].size(); ++j) {
          const std::size_t f = batch.flat(b, positions[b][j]);
          std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(f * d), d, enc_in.data().begin() + static_cast<std::ptrdiff_t>((k * longest + j) * d));
          rows[f] = static_cast<std::int64_t>(k * longest + j);
        }
      }
      const Var<T> enc = encode_input_frames(Var<T>(std::move(enc_in)), lengths);
      e = ad::add(e, ad::embedding_lookup(ad::reshape(enc, {speakers.size() * longest, D}), std::move(rows), {B, n}));
    }
    return e;
  }

  /// Causal transformer over embedded steps [B, n, D].
  BackboneOutput<T> backbone_forward(const Var<T>& embedded, std::vector<Array<T>>* attention_trace = nullptr) const {
    const Shape& s = embedded.shape();
    if (s.size() != 3 || s[2] != config_.backbone_dim) throw DimensionError("backbone_forward: bad input shape " + shape_str(s));
    const std::size_t n = s[1];
    if (n > config_.max_seq_len) {
      throw DimensionError("backbone_forward: length " + std::to_string(n) + " exceeds max_seq_len " + std::to_string(config_.max_seq_len));
    }
    Var<T> h = ad::add(embedded, ad::slice(pos_embed_, 0, 0, n));
    const Var<T> mask = causal_mask<T>(n);
    for (const auto& blk : blocks_) h = blk(h, mask, attention_trace);
    h = final_norm_(h);
    return {h, text_head_(h)};
  }

  /// Refines backbone hidden states into flow conditions and emits state logits.
  SpeechHeadOutput<T> speech_output_head(const Var<T>& hidden, std::vector<Array<T>>* attention_trace = nullptr) const {
    Var<T> c = hidden;
    if (!out_blocks_.empty()) {
      const Var<T> mask = causal_mask<T>(hidden.shape()[1]);
      for (const auto& blk : out_blocks_) c = blk(c, mask, attention_trace);
      c = out_norm_(c);
    }
    return {c, state_head_(state_norm_(c))};
  }

  /// Flow field for rows of frames x [M, d] at times t (M) under conditions [M, D].
  Var<T> flow_mlp(const Var<T>& x, const std::vector<T>& t, const Var<T>& cond) const { return flow_(x, t, cond); }

  ForwardOutput<T> forward(const seq::Batch<T>& batch, std::vector<Array<T>>* attention_trace = nullptr) const {
    const auto bb = backbone_forward(embed(batch), attention_trace);
    const auto sp = speech_output_head(bb.hidden, attention_trace);
    return {bb.text_logits, sp.state_logits, sp.condition};
  }

 private:
  /// [B, T, C] -> [B, T, 3C]: previous, current and next step (zero at the edges).
  static Var<T> conv_window(const Var<T>& x) {
    const std::size_t B = x.shape()[0], Tn = x.shape()[1], C = x.shape()[2];
    if (Tn == 1) {
      const Var<T> zero(Array<T>(Shape{B, 1, C}));
      return ad::concat<T>({zero, x, zero}, 2);
    }
    const Var<T> zero(Array<T>(Shape{B, 1, C}));
    const Var<T> prev = ad::concat<T>({zero, ad::slice(x, 1, 0, Tn - 1)}, 1);
    const Var<T> next = ad::concat<T>({ad::slice(x, 1, 1, Tn - 1), zero}, 1);
    return ad::concat<T>({prev, x, next}, 2);
  }

  ModelConfig config_;
  ParamStore<T> store_;
  Var<T> text_embed_, state_embed_, enc_pos_, pos_embed_;
  Linear<T> frame_in_, conv1_, conv2_, text_head_, state_head_;
  std::vector<Block<T>> enc_blocks_, blocks_, out_blocks_;
  std::vector<Linear<T>> adapter_;
  LayerNorm<T> enc_norm_, final_norm_, out_norm_, state_norm_;
  FlowMlp<T> flow_;
};

}  // namespace contok::model
