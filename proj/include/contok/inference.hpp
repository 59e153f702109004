#pragma once

// Autoregressive generation over the parallel streams and desk-scale evaluation.
//
// Every step runs the model over the sequence so far and reads the outputs of
// the last position: the state token is decoded first, then the text token,
// and when the state is GENERATING a frame is sampled with the Euler sampler
// from the last position's condition. The new step is appended and fed back.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "contok/model.hpp"
#include "contok/ot_flow.hpp"
#include "contok/parallel_seq.hpp"
#include "contok/rng.hpp"
#include "contok/synth_data.hpp"

namespace contok::infer {

using ad::Var;
using flow::Frame;
using seq::ParallelSequence;
using seq::StateToken;
using seq::TaskKind;

struct GenConfig {
  std::size_t max_new_steps = 64;
  flow::SamplerConfig sampler{10, 1.0};
  /// 0 selects greedy text decoding.
  std::size_t top_k = 0;
  double text_temperature = 1.0;
  std::uint64_t seed = 0;

  void validate(std::size_t text_vocab) const {
    if (max_new_steps < 1) throw ConfigError("generate: max_new_steps must be >= 1");
    if (top_k > text_vocab) throw ConfigError("generate: top_k exceeds the text vocabulary");
    if (!(text_temperature > 0.0)) throw ConfigError("generate: text_temperature must be > 0");
    sampler.validate();
  }
};

enum class EventKind { State, Text, Frame, Done };

inline std::string_view to_string(EventKind k) {
  switch (k) {
    case EventKind::State: return "state_token";
    case EventKind::Text: return "text_token";
    case EventKind::Frame: return "frame";
    case EventKind::Done: return "done";
  }
  return "unknown";
}

template <class T>
struct GenEvent {
  std::size_t step = 0;
  EventKind kind = EventKind::Done;
  std::int64_t token = -1;
  Frame<T> frame;
  bool truncated = false;
};

template <class T>
struct GenResult {
  ParallelSequence<T> sequence;
  std::vector<std::int64_t> text;  // response words, without EOS
  std::vector<Frame<T>> frames;
  bool truncated = false;
};

/// Optional hooks into the loop: forced state tokens per response step, forced
/// text tokens per response step, a replacement flow field given the frame
/// index, and an observer of every Euler step of every frame.
template <class T>
struct GenOverrides {
  std::vector<std::int64_t> states;
  std::vector<std::int64_t> text;
  std::function<Frame<T>(std::size_t frame_index, std::span<const T> x, T t)> field;
  std::function<void(std::size_t frame_index, std::size_t step, T t, const Array<T>& x)> observe;
};

namespace detail {

template <class T>
std::int64_t pick_text(std::span<const T> logits, const std::vector<std::uint8_t>& allowed, const GenConfig& cfg, Rng& rng) {
  std::vector<std::int64_t> ids;
  for (std::size_t j = 0; j < logits.size(); ++j) {
    if (allowed[j]) ids.push_back(static_cast<std::int64_t>(j));
  }
  if (ids.empty()) throw DomainError("generate: no admissible text token");
  // Highest logit first, ties broken by the smaller id.
  std::stable_sort(ids.begin(), ids.end(), [&](auto a, auto b) { return logits[a] > logits[b]; });
  if (cfg.top_k <= 1) return ids.front();
  const std::size_t k = std::min(cfg.top_k, ids.size());
  std::vector<double> w(k);
  const double top = static_cast<double>(logits[ids.front()]);
  for (std::size_t i = 0; i < k; ++i) w[i] = std::exp((static_cast<double>(logits[ids[i]]) - top) / cfg.text_temperature);
  std::discrete_distribution<std::size_t> dist(w.begin(), w.end());
  return ids[dist(rng.engine())];
}

template <class T>
std::int64_t pick_state(std::span<const T> logits, std::initializer_list<StateToken> allowed) {
  StateToken best = *allowed.begin();
  for (auto s : allowed) {
    if (logits[seq::id(s)] > logits[seq::id(best)]) best = s;
  }
  return seq::id(best);
}

}  // namespace detail

/// Generates the response for `prompt`. Events reach `on_event` as they are
/// produced, per step in the order state, text, frame; the last event is done.
template <class T>
GenResult<T> generate(const model::SequenceModel<T>& m, TaskKind task, const seq::Utterance<T>& prompt, const GenConfig& cfg,
                      const std::function<void(const GenEvent<std::type_identity_t<T>>&)>& on_event = {}, const GenOverrides<std::type_identity_t<T>>* overrides = nullptr) {
  const auto& mc = m.config();
  cfg.validate(mc.text_vocab);
  const std::size_t d = mc.frame_dim, D = mc.backbone_dim;
  for (const auto& f : prompt.frames) {
    if (f.size() != d) throw DimensionError("generate: prompt frame dimension does not match the model");
  }
  for (auto t : prompt.text) {
    if (t < seq::text::kFirstWord || t >= static_cast<std::int64_t>(mc.text_vocab)) {
      throw DomainError("generate: prompt token " + std::to_string(t) + " is not a word id");
    }
  }

  GenResult<T> out;
  out.sequence = seq::build_prompt(task, prompt);
  auto& s = out.sequence;
  Rng rng{cfg.seed, 0x67656eULL};
  flow::OTPathSpec spec;
  spec.frame_dim = d;
  auto emit = [&](GenEvent<T> e) {
    if (on_event) on_event(e);
  };

  const bool sp_out = seq::speech_out(task);
  bool text_ended = false, stopped = false, done = false;
  std::vector<std::uint8_t> allowed(mc.text_vocab, 0);

  for (std::size_t r = 0; r < cfg.max_new_steps && s.size() < mc.max_seq_len; ++r) {
    // The step after STOP closes both streams without consulting the model.
    if (stopped) {
      s.push(seq::text::kEos, StateToken::Eos, std::nullopt, true);
      emit({r, EventKind::State, seq::id(StateToken::Eos), {}, false});
      emit({r, EventKind::Text, seq::text::kEos, {}, false});
      done = true;
      break;
    }

    const auto batch = seq::collate(std::vector<const ParallelSequence<T>*>{&s}, s.size(), d);
    const auto fwd = m.forward(batch);
    const std::size_t last = s.size() - 1;
    const std::span<const T> text_logits(fwd.text_logits.value().data().data() + last * mc.text_vocab, mc.text_vocab);
    const std::span<const T> state_logits(fwd.state_logits.value().data().data() + last * mc.state_vocab, mc.state_vocab);

    std::int64_t state;
    if (overrides && r < overrides->states.size()) {
      state = overrides->states[r];
    } else if (!sp_out) {
      state = seq::id(StateToken::Pad);
    } else if (r == 0) {
      state = seq::id(StateToken::Start);
    } else if (out.frames.empty()) {
      state = seq::id(StateToken::Generating);
    } else {
      state = detail::pick_state(state_logits, {StateToken::Generating, StateToken::Stop});
    }
    emit({r, EventKind::State, state, {}, false});

    std::int64_t text;
    if (overrides && r < overrides->text.size()) {
      text = overrides->text[r];
    } else if (text_ended) {
      text = seq::text::kPad;
    } else if (state == seq::id(StateToken::Stop)) {
      text = seq::text::kEos;
    } else {
      std::fill(allowed.begin(), allowed.end(), 0);
      std::fill(allowed.begin() + seq::text::kFirstWord, allowed.end(), 1);
      if (r > 0) allowed[seq::text::kEos] = 1;
      text = detail::pick_text(text_logits, allowed, cfg, rng);
    }
    emit({r, EventKind::Text, text, {}, false});

    std::optional<Frame<T>> frame;
    if (state == seq::id(StateToken::Generating)) {
      const std::size_t frame_index = out.frames.size();
      const auto cv = fwd.condition.value().data();
      const Var<T> cond(Array<T>(Shape{1, D}, std::vector<T>(cv.begin() + static_cast<std::ptrdiff_t>(last * D),
                                                             cv.begin() + static_cast<std::ptrdiff_t>((last + 1) * D))));
      auto field = [&](const Array<T>& x, T t) {
        if (overrides && overrides->field) return Array<T>(x.shape(), overrides->field(frame_index, x.data(), t));
        return m.flow_mlp(Var<T>(x), std::vector<T>{t}, cond).value();
      };
      Array<T> x;
      try {
        x = flow::euler_sample_batch<T>(field, 1, cfg.sampler, spec, rng, [&](std::size_t step, T t, const Array<T>& xs) {
          if (overrides && overrides->observe) overrides->observe(frame_index, step, t, xs);
        });
      } catch (const DivergenceError& e) {
        throw DivergenceError(std::string("generate: ") + e.what() + " (response step " + std::to_string(r) + ")", r);
      }
      frame = x.vec();
      out.frames.push_back(*frame);
      emit({r, EventKind::Frame, -1, *frame, false});
    }

    if (!text_ended) {
      if (text == seq::text::kEos) {
        text_ended = true;
      } else if (text >= seq::text::kFirstWord) {
        out.text.push_back(text);
      }
    }
    const bool frame_loss = frame.has_value();
    s.push(text, static_cast<StateToken>(state), std::move(frame), true, frame_loss);
    if (state == seq::id(StateToken::Stop)) stopped = true;
    if (!sp_out && text_ended) {
      done = true;
      break;
    }
  }
  out.truncated = !done;
  emit({s.size() - s.response_start, EventKind::Done, -1, {}, out.truncated});
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation

/// Nearest-template decoding of normalized frames, one word per
/// frames_per_word chunk; a partial trailing chunk is dropped.
template <class T>
std::vector<std::int64_t> frames_to_text_eval(const std::vector<Frame<T>>& frames, const data::ToyLexicon& lex,
                                              const data::FrameStats& stats) {
  const std::size_t k = lex.frames_per_word(), d = lex.frame_dim();
  std::vector<std::int64_t> words;
  std::vector<double> chunk(k * d);
  for (std::size_t start = 0; start + k <= frames.size(); start += k) {
    for (std::size_t j = 0; j < k; ++j) {
      if (frames[start + j].size() != d) throw DimensionError("frames_to_text_eval: frame dimension mismatch");
      for (std::size_t c = 0; c < d; ++c) {
        const double mean = stats.mean.empty() ? 0.0 : stats.mean[c];
        const double sd = stats.std.empty() ? 1.0 : stats.std[c];
        chunk[j * d + c] = static_cast<double>(frames[start + j][c]) * sd + mean;
      }
    }
    std::size_t best = 0;
    double best_dist = std::numeric_limits<double>::infinity();
    for (std::size_t w = 0; w < lex.num_words(); ++w) {
      const double dist = data::ToyLexicon::distance(chunk, lex.word_template(w));
      if (dist < best_dist) {
        best_dist = dist;
        best = w;
      }
    }
    words.push_back(data::word_id(best));
  }
  return words;
}

inline std::size_t edit_distance(const std::vector<std::int64_t>& a, const std::vector<std::int64_t>& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

/// Response words of a record (text stream from the response start up to EOS).
template <class T>
std::vector<std::int64_t> response_words(const ParallelSequence<T>& s) {
  std::vector<std::int64_t> w;
  for (std::size_t i = s.response_start; i < s.size(); ++i) {
    if (s.text_ids[i] == seq::text::kEos) break;
    if (s.text_ids[i] >= seq::text::kFirstWord) w.push_back(s.text_ids[i]);
  }
  return w;
}

/// Prompt of a record: its words, or its input frames for speech prompts.
template <class T>
seq::Utterance<T> prompt_of(const ParallelSequence<T>& s) {
  seq::Utterance<T> u;
  for (std::size_t i = 1; i + 1 < s.response_start; ++i) {
    if (s.input_frame_mask[i] && s.frames[i]) {
      u.frames.push_back(*s.frames[i]);
    } else if (s.text_ids[i] >= seq::text::kFirstWord) {
      u.text.push_back(s.text_ids[i]);
    }
  }
  return u;
}

struct EvalOptions {
  std::size_t per_kind = 200;
  GenConfig gen{64, {10, 0.0}, 0, 1.0, 0};
};

struct EvalReport {
  std::size_t text_prompts = 0;
  double text_exact_match = 0.0;
  std::size_t asr_prompts = 0;
  double asr_token_accuracy = 0.0;
  std::size_t tts_prompts = 0;
  double tts_fwer = 0.0;
  std::size_t s2s_prompts = 0;
  double s2s_fwer = 0.0;
  std::size_t truncated = 0;
};

/// Generates answers for up to per_kind dev records of each task kind and
/// scores them against the records' responses.
template <class T>
EvalReport evaluate(const model::SequenceModel<T>& m, const std::vector<ParallelSequence<T>>& dev, const data::ToyLexicon& lex,
                    const data::FrameStats& stats, const EvalOptions& opt) {
  EvalReport rep;
  std::size_t exact = 0, asr_hits = 0, asr_total = 0, tts_err = 0, tts_total = 0, s2s_err = 0, s2s_total = 0;
  for (std::size_t i = 0; i < dev.size(); ++i) {
    const auto& rec = dev[i];
    std::size_t* counter = nullptr;
    switch (rec.task) {
      case TaskKind::TextInTextOut: counter = &rep.text_prompts; break;
      case TaskKind::SpeechInTextOut: counter = &rep.asr_prompts; break;
      case TaskKind::TextInSpeechOut: counter = &rep.tts_prompts; break;
      case TaskKind::SpeechInSpeechOut: counter = &rep.s2s_prompts; break;
    }
    if (*counter >= opt.per_kind) continue;
    ++*counter;
    GenConfig gen = opt.gen;
    gen.seed = opt.gen.seed + i;
    const auto res = generate(m, rec.task, prompt_of(rec), gen);
    rep.truncated += res.truncated;
    const auto expected = response_words(rec);
    switch (rec.task) {
      case TaskKind::TextInTextOut:
        exact += res.text == expected;
        break;
      case TaskKind::SpeechInTextOut:
        for (std::size_t j = 0; j < expected.size(); ++j) asr_hits += j < res.text.size() && res.text[j] == expected[j];
        asr_total += expected.size();
        break;
      case TaskKind::TextInSpeechOut:
        tts_err += edit_distance(frames_to_text_eval(res.frames, lex, stats), expected);
        tts_total += expected.size();
        break;
      case TaskKind::SpeechInSpeechOut:
        s2s_err += edit_distance(frames_to_text_eval(res.frames, lex, stats), expected);
        s2s_total += expected.size();
        break;
    }
  }
  auto ratio = [](std::size_t a, std::size_t b) { return b ? static_cast<double>(a) / static_cast<double>(b) : 0.0; };
  rep.text_exact_match = ratio(exact, rep.text_prompts);
  rep.asr_token_accuracy = ratio(asr_hits, asr_total);
  rep.tts_fwer = ratio(tts_err, tts_total);
  rep.s2s_fwer = ratio(s2s_err, s2s_total);
  return rep;
}

}  // namespace contok::infer
