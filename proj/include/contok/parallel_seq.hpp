#pragma once

// Parallel text / speech-state / frame streams for the four task layouts.
//
// Every sequence starts with a BOS step, then the prompt, then a separator step
// (EOS on both streams), then the response. Inactive modalities are PAD-filled.
// A speech response looks like this (W text tokens, F frames, W <= F + 1):
//
//   text   T1    T2   ... TW  EOS  PAD ... PAD   EOS
//   state  START GEN  ...          GEN   STOP    EOS
//   frame  -     f1   ...          fF    -       -
//
// so the first frame sits exactly one step after the first response text token.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "contok/array.hpp"
#include "contok/errors.hpp"
#include "contok/ot_flow.hpp"

namespace contok::seq {

using flow::Frame;

enum class StateToken : std::int64_t { Bos = 0, Eos = 1, Start = 2, Pad = 3, Stop = 4, Generating = 5 };
inline constexpr std::size_t kNumStates = 6;

constexpr std::int64_t id(StateToken s) noexcept { return static_cast<std::int64_t>(s); }

/// Reserved text ids; toy words start at kFirstWord.
namespace text {
inline constexpr std::int64_t kPad = 0;
inline constexpr std::int64_t kBos = 1;
inline constexpr std::int64_t kEos = 2;
inline constexpr std::int64_t kFirstWord = 3;
}  // namespace text

enum class TaskKind : std::uint8_t { SpeechInTextOut = 0, SpeechInSpeechOut = 1, TextInTextOut = 2, TextInSpeechOut = 3 };
inline constexpr TaskKind kAllTasks[] = {TaskKind::SpeechInTextOut, TaskKind::SpeechInSpeechOut, TaskKind::TextInTextOut,
                                         TaskKind::TextInSpeechOut};

constexpr bool speech_in(TaskKind k) noexcept { return k == TaskKind::SpeechInTextOut || k == TaskKind::SpeechInSpeechOut; }
constexpr bool speech_out(TaskKind k) noexcept { return k == TaskKind::SpeechInSpeechOut || k == TaskKind::TextInSpeechOut; }

inline std::string_view to_string(TaskKind k) {
  switch (k) {
    case TaskKind::SpeechInTextOut: return "speech_in_text_out";
    case TaskKind::SpeechInSpeechOut: return "speech_in_speech_out";
    case TaskKind::TextInTextOut: return "text_in_text_out";
    case TaskKind::TextInSpeechOut: return "text_in_speech_out";
  }
  return "unknown";
}

inline TaskKind parse_task_kind(std::string_view s) {
  for (auto k : kAllTasks) {
    if (to_string(k) == s) return k;
  }
  throw ConfigError("unknown task kind '" + std::string(s) + "'");
}

inline TaskKind task_kind_from_byte(std::uint8_t b) {
  if (b > 3) throw IoError("invalid task kind byte " + std::to_string(b));
  return static_cast<TaskKind>(b);
}

/// Words and/or frames on one side of an exchange.
template <class T>
struct Utterance {
  std::vector<std::int64_t> text;
  std::vector<Frame<T>> frames;
};

template <class T>
struct ParallelSequence {
  TaskKind task = TaskKind::TextInTextOut;
  std::vector<std::int64_t> text_ids;
  std::vector<std::int64_t> state_ids;
  std::vector<std::optional<Frame<T>>> frames;
  std::vector<std::uint8_t> text_loss_mask;
  std::vector<std::uint8_t> state_loss_mask;
  std::vector<std::uint8_t> frame_loss_mask;
  /// Prompt-side frames, consumed by the input encoder rather than predicted.
  std::vector<std::uint8_t> input_frame_mask;
  std::size_t response_start = 0;

  std::size_t size() const noexcept { return text_ids.size(); }

  void push(std::int64_t text_id, StateToken state, std::optional<Frame<T>> frame = std::nullopt, bool loss = false,
            bool frame_loss = false, bool input_frame = false) {
    text_ids.push_back(text_id);
    state_ids.push_back(id(state));
    frames.push_back(std::move(frame));
    text_loss_mask.push_back(loss);
    state_loss_mask.push_back(loss);
    frame_loss_mask.push_back(frame_loss);
    input_frame_mask.push_back(input_frame);
  }
};

/// BOS, the prompt and the separator step; response_start points one past it.
template <class T>
ParallelSequence<T> build_prompt(TaskKind task, const Utterance<T>& prompt) {
  ParallelSequence<T> s;
  s.task = task;
  s.push(text::kBos, StateToken::Bos);
  if (speech_in(task)) {
    if (prompt.frames.empty()) throw DomainError("speech prompt has no frames");
    for (const auto& f : prompt.frames) s.push(text::kPad, StateToken::Pad, f, false, false, true);
  } else {
    if (prompt.text.empty()) throw DomainError("text prompt is empty");
    for (auto t : prompt.text) s.push(t, StateToken::Pad);
  }
  s.push(text::kEos, StateToken::Eos);
  s.response_start = s.size();
  return s;
}

template <class T>
ParallelSequence<T> build_sequence(TaskKind task, const Utterance<T>& prompt, const Utterance<T>& response,
                                   std::size_t max_len) {
  if (response.text.empty()) throw DomainError("response text is empty");
  ParallelSequence<T> s = build_prompt(task, prompt);
  if (!speech_out(task)) {
    for (auto t : response.text) s.push(t, StateToken::Pad, std::nullopt, true);
    s.push(text::kEos, StateToken::Pad, std::nullopt, true);
  } else {
    const std::size_t words = response.text.size();
    const std::size_t frames = response.frames.size();
    if (frames == 0) throw DomainError("speech response has no frames");
    if (words > frames + 1) {
      throw DomainError("speech response text (" + std::to_string(words) + " tokens) must end by the STOP step (" +
                        std::to_string(frames) + " frames)");
    }
    // START, F x GENERATING, STOP, then the closing EOS step.
    for (std::size_t r = 0; r < frames + 2; ++r) {
      const std::int64_t t = r < words ? response.text[r] : (r == words ? text::kEos : text::kPad);
      if (r == 0) {
        s.push(t, StateToken::Start, std::nullopt, true);
      } else if (r <= frames) {
        s.push(t, StateToken::Generating, response.frames[r - 1], true, true);
      } else {
        s.push(t, StateToken::Stop, std::nullopt, true);
      }
    }
    s.push(text::kEos, StateToken::Eos, std::nullopt, true);
  }
  if (s.size() > max_len) {
    throw DimensionError("sequence length " + std::to_string(s.size()) + " exceeds max_seq_len " + std::to_string(max_len));
  }
  return s;
}

struct Violation {
  std::string kind;
  std::size_t position = 0;
  std::string message;
  std::optional<std::size_t> expected;
  std::optional<std::size_t> actual;
};

/// Checks stream alignment, frame placement, masks and the speech delay rule.
/// An empty result means the sequence is valid.
template <class T>
std::vector<Violation> validate_sequence(const ParallelSequence<T>& s) {
  std::vector<Violation> out;
  auto report = [&](std::string kind, std::size_t pos, std::string msg, std::optional<std::size_t> expected = std::nullopt,
                    std::optional<std::size_t> actual = std::nullopt) {
    out.push_back({std::move(kind), pos, std::move(msg), expected, actual});
  };

  const std::size_t n = s.text_ids.size();
  if (s.state_ids.size() != n || s.frames.size() != n || s.text_loss_mask.size() != n || s.state_loss_mask.size() != n ||
      s.frame_loss_mask.size() != n || s.input_frame_mask.size() != n) {
    report("length", 0, "streams have different lengths");
    return out;
  }
  if (n == 0) {
    report("length", 0, "empty sequence");
    return out;
  }
  if (s.response_start > n) {
    report("length", n, "response start beyond the sequence end");
    return out;
  }

  const bool sp_in = speech_in(s.task);
  const bool sp_out = speech_out(s.task);
  const auto gen = id(StateToken::Generating);

  for (std::size_t i = 0; i < n; ++i) {
    const bool response = i >= s.response_start;
    const auto st = s.state_ids[i];
    if (st < 0 || st >= static_cast<std::int64_t>(kNumStates)) report("token_range", i, "state id out of range");
    if (s.text_ids[i] < 0) report("token_range", i, "negative text id");

    const bool has_frame = s.frames[i].has_value();
    const bool want_frame = response ? st == gen : static_cast<bool>(s.input_frame_mask[i]);
    if (has_frame != want_frame) {
      report("frame_presence", i, has_frame ? "frame at a position that is neither GENERATING nor an input frame"
                                            : "GENERATING or input-frame position without a frame");
    }
    if (s.input_frame_mask[i] && response) report("frame_presence", i, "input frame on the response side");
    if (s.frame_loss_mask[i] && !(has_frame && response && st == gen)) {
      report("frame_mask", i, "frame loss at a position without a predicted frame");
    }
    if (!response && (s.text_loss_mask[i] || s.state_loss_mask[i] || s.frame_loss_mask[i])) {
      report("prompt_mask", i, "loss mask set on the prompt side");
    }
    if (!response && s.input_frame_mask[i] && !sp_in) report("modality", i, "input frame in a text prompt");
    if (response && !sp_out && (st == gen || st == id(StateToken::Start) || st == id(StateToken::Stop))) {
      report("modality", i, "speech state in a text response");
    }
  }

  if (sp_in) {
    bool any = false;
    for (std::size_t i = 0; i < s.response_start; ++i) any = any || s.input_frame_mask[i];
    if (!any) report("modality", 0, "speech prompt without input frames");
  }

  if (!sp_out) return out;

  std::optional<std::size_t> start, stop, first_gen, last_gen, first_text;
  std::size_t starts = 0, stops = 0;
  for (std::size_t i = s.response_start; i < n; ++i) {
    const auto st = s.state_ids[i];
    if (st == id(StateToken::Start)) {
      ++starts;
      if (!start) start = i;
    } else if (st == id(StateToken::Stop)) {
      ++stops;
      if (!stop) stop = i;
    } else if (st == gen) {
      if (!first_gen) first_gen = i;
      last_gen = i;
    }
    if (!first_text && s.text_ids[i] >= text::kFirstWord) first_text = i;
  }
  if (starts != 1) report("start", start.value_or(s.response_start), "speech response needs exactly one START", 1, starts);
  if (stops > 1) report("stop", *stop, "more than one STOP", 1, stops);
  if (stops == 0) report("stop", n - 1, "speech response has no STOP (truncated?)", 1, 0);
  if (first_gen) {
    for (std::size_t i = *first_gen; i <= *last_gen; ++i) {
      if (s.state_ids[i] != gen) {
        report("contiguity", i, "GENERATING positions are not contiguous");
        break;
      }
    }
    if (start && *first_gen != *start + 1) report("contiguity", *first_gen, "GENERATING run does not follow START", *start + 1, *first_gen);
    if (stop && *stop != *last_gen + 1) report("contiguity", *stop, "STOP does not close the GENERATING run", *last_gen + 1, *stop);
    if (!first_text) {
      report("delay", *first_gen, "speech response has no text token");
    } else if (*first_gen != *first_text + 1) {
      report("delay", *first_gen, "first frame must come one step after the first response text token", *first_text + 1, *first_gen);
    }
  }
  return out;
}

/// Right-padded batch of sequences; positions past a sequence's end carry PAD
/// ids, zero frames and cleared masks.
template <class T>
struct Batch {
  std::size_t batch = 0;
  std::size_t length = 0;
  std::size_t frame_dim = 0;
  std::vector<std::int64_t> text_ids;
  std::vector<std::int64_t> state_ids;
  Array<T> frames;
  std::vector<std::uint8_t> frame_present;
  std::vector<std::uint8_t> input_frame;
  std::vector<std::uint8_t> text_loss_mask;
  std::vector<std::uint8_t> state_loss_mask;
  std::vector<std::uint8_t> frame_loss_mask;
  std::vector<std::size_t> lengths;

  std::size_t flat(std::size_t b, std::size_t i) const noexcept { return b * length + i; }
};

template <class T>
Batch<T> collate(const std::vector<const ParallelSequence<T>*>& items, std::size_t pad_to, std::size_t frame_dim) {
  if (items.empty()) throw DimensionError("collate: empty batch");
  for (const auto* s : items) {
    if (s->size() > pad_to) {
      throw DimensionError("collate: sequence of length " + std::to_string(s->size()) + " exceeds pad_to " + std::to_string(pad_to));
    }
  }
  Batch<T> b;
  b.batch = items.size();
  b.length = pad_to;
  b.frame_dim = frame_dim;
  const std::size_t total = b.batch * pad_to;
  b.text_ids.assign(total, text::kPad);
  b.state_ids.assign(total, id(StateToken::Pad));
  b.frames = Array<T>(Shape{b.batch, pad_to, frame_dim});
  b.frame_present.assign(total, 0);
  b.input_frame.assign(total, 0);
  b.text_loss_mask.assign(total, 0);
  b.state_loss_mask.assign(total, 0);
  b.frame_loss_mask.assign(total, 0);
  auto fr = b.frames.data();
  for (std::size_t k = 0; k < b.batch; ++k) {
    const auto& s = *items[k];
    b.lengths.push_back(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
      const std::size_t f = b.flat(k, i);
      b.text_ids[f] = s.text_ids[i];
      b.state_ids[f] = s.state_ids[i];
      b.text_loss_mask[f] = s.text_loss_mask[i];
      b.state_loss_mask[f] = s.state_loss_mask[i];
      b.frame_loss_mask[f] = s.frame_loss_mask[i];
      b.input_frame[f] = s.input_frame_mask[i];
      if (s.frames[i]) {
        if (s.frames[i]->size() != frame_dim) {
          throw DimensionError("collate: frame of dimension " + std::to_string(s.frames[i]->size()) + ", expected " +
                               std::to_string(frame_dim));
        }
        b.frame_present[f] = 1;
        std::copy(s.frames[i]->begin(), s.frames[i]->end(), fr.begin() + static_cast<std::ptrdiff_t>(f * frame_dim));
      }
    }
  }
  return b;
}

template <class T>
Batch<T> collate(const std::vector<ParallelSequence<T>>& items, std::size_t pad_to, std::size_t frame_dim) {
  std::vector<const ParallelSequence<T>*> ptrs;
  for (const auto& s : items) ptrs.push_back(&s);
  return collate(ptrs, pad_to, frame_dim);
}

template <class T>
std::size_t max_length(const std::vector<const ParallelSequence<T>*>& items) {
  std::size_t n = 0;
  for (const auto* s : items) n = std::max(n, s->size());
  return n;
}

}  // namespace contok::seq
