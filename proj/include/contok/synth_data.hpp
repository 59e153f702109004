#pragma once

// Deterministic toy speech/text corpus.
//
// Each toy word owns a short run of pseudo-spectrogram frames built from a
// harmonic stack whose frequencies depend on the word id modulo small primes.
// Utterances concatenate word templates and add Gaussian jitter.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "contok/binary_io.hpp"
#include "contok/errors.hpp"
#include "contok/parallel_seq.hpp"
#include "contok/rng.hpp"

namespace contok::data {

using flow::Frame;
using seq::ParallelSequence;
using seq::TaskKind;

class ToyLexicon {
 public:
  static constexpr double kMinTemplateDistance = 1.0;

  ToyLexicon(std::size_t num_words, std::size_t frames_per_word, std::size_t frame_dim, std::uint64_t seed)
      : num_words_(num_words), frames_per_word_(frames_per_word), frame_dim_(frame_dim) {
    if (num_words < 2 || frames_per_word == 0 || frame_dim == 0) throw ConfigError("lexicon needs >= 2 words and positive sizes");
    constexpr double kAmp[3] = {1.0, 0.6, 0.35};
    constexpr std::size_t kPrimes[3] = {3, 5, 7};
    for (std::size_t w = 0; w < num_words; ++w) {
      Rng rng{seed, 0x1e71c0ULL, w};
      for (std::size_t attempt = 0;; ++attempt) {
        std::vector<double> tpl(frames_per_word * frame_dim, 0.0);
        for (std::size_t h = 0; h < 3; ++h) {
          const double freq = 1.0 + static_cast<double>(w % kPrimes[h]) + static_cast<double>(h);
          const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
          const double drift = rng.uniform(0.5, 2.0);
          for (std::size_t j = 0; j < frames_per_word; ++j) {
            for (std::size_t c = 0; c < frame_dim; ++c) {
              const double x = (static_cast<double>(c) + 0.5) / static_cast<double>(frame_dim);
              tpl[j * frame_dim + c] += kAmp[h] * std::sin(2.0 * std::numbers::pi * freq * x + phase + drift * static_cast<double>(j));
            }
          }
        }
        bool separated = true;
        for (std::size_t o = 0; o < w && separated; ++o) separated = distance(tpl, templates_[o]) > kMinTemplateDistance;
        if (separated) {
          templates_.push_back(std::move(tpl));
          break;
        }
        if (attempt > 1000) throw ConfigError("could not separate lexicon templates");
      }
    }
  }

  std::size_t num_words() const noexcept { return num_words_; }
  std::size_t frames_per_word() const noexcept { return frames_per_word_; }
  std::size_t frame_dim() const noexcept { return frame_dim_; }

  /// Raw template of a word index, frames_per_word * frame_dim values.
  const std::vector<double>& word_template(std::size_t word) const {
    if (word >= num_words_) throw DomainError("unknown word index " + std::to_string(word));
    return templates_[word];
  }

  static double distance(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s);
  }

 private:
  std::size_t num_words_, frames_per_word_, frame_dim_;
  std::vector<std::vector<double>> templates_;
};

inline std::size_t word_index(std::int64_t text_id, const ToyLexicon& lex) {
  if (text_id < seq::text::kFirstWord || text_id - seq::text::kFirstWord >= static_cast<std::int64_t>(lex.num_words())) {
    throw DomainError("text id " + std::to_string(text_id) + " is not a lexicon word");
  }
  return static_cast<std::size_t>(text_id - seq::text::kFirstWord);
}

inline std::int64_t word_id(std::size_t index) { return static_cast<std::int64_t>(index) + seq::text::kFirstWord; }

/// Raw frames for a word-id sequence: templates plus N(0, jitter^2) noise.
inline std::vector<Frame<double>> synth_frames(const std::vector<std::int64_t>& words, const ToyLexicon& lex,
                                               std::uint64_t jitter_seed, double jitter = 0.05) {
  std::vector<Frame<double>> out;
  Rng rng(jitter_seed);
  const std::size_t d = lex.frame_dim();
  for (auto w : words) {
    const auto& tpl = lex.word_template(word_index(w, lex));
    for (std::size_t j = 0; j < lex.frames_per_word(); ++j) {
      Frame<double> f(d);
      for (std::size_t c = 0; c < d; ++c) f[c] = tpl[j * d + c] + jitter * rng.normal();
      out.push_back(std::move(f));
    }
  }
  return out;
}

/// Question/answer pair; the answer is the reversed question followed by the marker word.
struct QAPair {
  std::vector<std::int64_t> question;
  std::vector<std::int64_t> answer;
  std::vector<Frame<double>> question_frames;
  std::vector<Frame<double>> answer_frames;
};

inline constexpr std::size_t kMarkerWord = 0;

inline std::vector<std::int64_t> answer_rule(const std::vector<std::int64_t>& question) {
  std::vector<std::int64_t> a(question.rbegin(), question.rend());
  a.push_back(word_id(kMarkerWord));
  return a;
}

inline bool satisfies_answer_rule(const QAPair& qa) { return qa.answer == answer_rule(qa.question); }

/// Per-dimension affine normalization applied to every stored frame.
struct FrameStats {
  std::vector<double> mean;
  std::vector<double> std;

  template <class T>
  Frame<T> normalize(const Frame<double>& raw) const {
    Frame<T> out(raw.size());
    for (std::size_t c = 0; c < raw.size(); ++c) out[c] = static_cast<T>((raw[c] - mean[c]) / std[c]);
    return out;
  }
};

struct CorpusConfig {
  int stage = 1;
  std::size_t train_size = 4096;
  std::size_t dev_size = 1024;
  std::uint64_t seed = 7;
  std::size_t frames_per_word = 2;
  std::size_t frame_dim = 20;
  std::size_t text_vocab = 64;
  std::size_t state_vocab = 8;
  std::size_t question_min = 3;
  std::size_t question_max = 3;
  std::size_t utterance_min = 3;
  std::size_t utterance_max = 4;
  double jitter = 0.05;
  std::size_t max_seq_len = 256;

  std::size_t num_words() const { return text_vocab - static_cast<std::size_t>(seq::text::kFirstWord); }

  void validate() const {
    if (stage != 1 && stage != 2) throw ConfigError("corpus stage must be 1 or 2");
    if (train_size < 1 || dev_size < 1) throw ConfigError("corpus sizes must be >= 1");
    if (text_vocab < static_cast<std::size_t>(seq::text::kFirstWord) + 2) throw ConfigError("text_vocab too small");
    if (state_vocab < seq::kNumStates) throw ConfigError("state_vocab must be >= 6");
    if (question_min < 1 || question_min > question_max) throw ConfigError("bad question length range");
    if (utterance_min < 1 || utterance_min > utterance_max) throw ConfigError("bad utterance length range");
    if (text_vocab > 65535) throw ConfigError("text_vocab must fit in 16 bits");
  }
};

inline nlohmann::json to_json(const CorpusConfig& c) {
  return {{"stage", c.stage},
          {"train_size", c.train_size},
          {"dev_size", c.dev_size},
          {"seed", c.seed},
          {"frames_per_word", c.frames_per_word},
          {"frame_dim", c.frame_dim},
          {"text_vocab", c.text_vocab},
          {"state_vocab", c.state_vocab},
          {"question_min", c.question_min},
          {"question_max", c.question_max},
          {"utterance_min", c.utterance_min},
          {"utterance_max", c.utterance_max},
          {"jitter", c.jitter},
          {"max_seq_len", c.max_seq_len}};
}

struct Corpus {
  CorpusConfig config;
  FrameStats stats;
  std::vector<ParallelSequence<float>> train;
  std::vector<ParallelSequence<float>> dev;
};

inline ToyLexicon make_lexicon(const CorpusConfig& c) {
  return ToyLexicon(c.num_words(), c.frames_per_word, c.frame_dim, c.seed);
}

namespace detail {

inline std::vector<std::int64_t> random_words(Rng& rng, std::size_t lo, std::size_t hi, std::size_t num_words, bool avoid_marker) {
  const std::size_t len = lo + rng.below(hi - lo + 1);
  std::vector<std::int64_t> w(len);
  const std::size_t first = avoid_marker ? 1 : 0;
  for (auto& x : w) x = word_id(first + rng.below(num_words - first));
  return w;
}

/// Raw (unnormalized) exchange for record `index` of a split.
struct RawRecord {
  TaskKind task;
  std::vector<std::int64_t> prompt_text;
  std::vector<Frame<double>> prompt_frames;
  std::vector<std::int64_t> response_text;
  std::vector<Frame<double>> response_frames;
};

inline RawRecord make_raw_record(const CorpusConfig& c, const ToyLexicon& lex, std::uint64_t split, std::size_t index) {
  Rng rng{c.seed, split, index};
  RawRecord r;
  std::vector<std::int64_t> prompt_words, response_words;
  if (c.stage == 1) {
    // ASR and TTS: the response transcribes or speaks the prompt.
    r.task = index % 2 == 0 ? TaskKind::SpeechInTextOut : TaskKind::TextInSpeechOut;
    prompt_words = random_words(rng, c.utterance_min, c.utterance_max, c.num_words(), false);
    response_words = prompt_words;
  } else {
    r.task = seq::kAllTasks[index % 4];
    prompt_words = random_words(rng, c.question_min, c.question_max, c.num_words(), true);
    response_words = answer_rule(prompt_words);
  }
  const std::uint64_t jitter_seed_prompt = rng.engine()();
  const std::uint64_t jitter_seed_response = rng.engine()();
  if (seq::speech_in(r.task)) {
    r.prompt_frames = synth_frames(prompt_words, lex, jitter_seed_prompt, c.jitter);
  } else {
    r.prompt_text = prompt_words;
  }
  r.response_text = response_words;
  if (seq::speech_out(r.task)) r.response_frames = synth_frames(response_words, lex, jitter_seed_response, c.jitter);
  return r;
}

template <class T>
ParallelSequence<T> assemble(const RawRecord& r, const FrameStats& stats, std::size_t max_len) {
  seq::Utterance<T> prompt, response;
  prompt.text = r.prompt_text;
  for (const auto& f : r.prompt_frames) prompt.frames.push_back(stats.normalize<T>(f));
  response.text = r.response_text;
  for (const auto& f : r.response_frames) response.frames.push_back(stats.normalize<T>(f));
  return seq::build_sequence(r.task, prompt, response, max_len);
}

}  // namespace detail

/// Generates train/dev splits. Stage 1 mixes ASR and TTS; stage 2 cycles through
/// all four task kinds with question/answer pairs. Frames are normalized with
/// per-dimension statistics of the raw train frames.
inline Corpus make_corpus(const CorpusConfig& config) {
  config.validate();
  const ToyLexicon lex = make_lexicon(config);
  std::vector<detail::RawRecord> train_raw, dev_raw;
  for (std::size_t i = 0; i < config.train_size; ++i) train_raw.push_back(detail::make_raw_record(config, lex, 0, i));
  for (std::size_t i = 0; i < config.dev_size; ++i) dev_raw.push_back(detail::make_raw_record(config, lex, 1, i));

  const std::size_t d = config.frame_dim;
  std::vector<double> s1(d, 0.0), s2(d, 0.0);
  std::size_t count = 0;
  for (const auto& r : train_raw) {
    for (const auto* fs : {&r.prompt_frames, &r.response_frames}) {
      for (const auto& f : *fs) {
        for (std::size_t c = 0; c < d; ++c) {
          s1[c] += f[c];
          s2[c] += f[c] * f[c];
        }
        ++count;
      }
    }
  }
  Corpus corpus;
  corpus.config = config;
  corpus.stats.mean.assign(d, 0.0);
  corpus.stats.std.assign(d, 1.0);
  if (count > 1) {
    for (std::size_t c = 0; c < d; ++c) {
      const double m = s1[c] / static_cast<double>(count);
      const double var = s2[c] / static_cast<double>(count) - m * m;
      corpus.stats.mean[c] = m;
      corpus.stats.std[c] = var > 1e-12 ? std::sqrt(var) : 1.0;
    }
  }
  for (const auto& r : train_raw) corpus.train.push_back(detail::assemble<float>(r, corpus.stats, config.max_seq_len));
  for (const auto& r : dev_raw) corpus.dev.push_back(detail::assemble<float>(r, corpus.stats, config.max_seq_len));
  return corpus;
}

// ---------------------------------------------------------------------------
// Dataset file format (little-endian):
//   "CTOK1", u32 record count, u16 frame_dim, u16 text vocab, u16 state vocab
//   per record: u8 task kind, u32 n, u16 x n text ids, u8 x n state ids,
//   frame-presence bitmap (n bits, LSB first, padded to a byte), f32 x frame_dim
//   per present frame, then text / state / frame loss-mask bitmaps.
// Input-frame flags are implied: a present frame on a non-GENERATING step.

inline constexpr std::string_view kDatasetMagic = "CTOK1";

struct DatasetHeader {
  std::size_t frame_dim = 0;
  std::size_t text_vocab = 0;
  std::size_t state_vocab = 0;
};

template <class T>
std::vector<std::uint8_t> encode_dataset(const std::vector<ParallelSequence<T>>& records, const DatasetHeader& h) {
  io::ByteWriter w;
  w.bytes(kDatasetMagic);
  w.u32(static_cast<std::uint32_t>(records.size()));
  w.u16(static_cast<std::uint16_t>(h.frame_dim));
  w.u16(static_cast<std::uint16_t>(h.text_vocab));
  w.u16(static_cast<std::uint16_t>(h.state_vocab));
  for (const auto& s : records) {
    const std::size_t n = s.size();
    w.u8(static_cast<std::uint8_t>(s.task));
    w.u32(static_cast<std::uint32_t>(n));
    for (auto t : s.text_ids) {
      if (t < 0 || t >= static_cast<std::int64_t>(h.text_vocab)) throw IoError("text id out of vocabulary in record");
      w.u16(static_cast<std::uint16_t>(t));
    }
    for (auto st : s.state_ids) w.u8(static_cast<std::uint8_t>(st));
    std::vector<std::uint8_t> present(n);
    for (std::size_t i = 0; i < n; ++i) present[i] = s.frames[i].has_value();
    w.bitmap(present);
    for (const auto& f : s.frames) {
      if (!f) continue;
      if (f->size() != h.frame_dim) throw IoError("frame dimension does not match dataset header");
      for (T v : *f) w.f32(static_cast<float>(v));
    }
    w.bitmap(s.text_loss_mask);
    w.bitmap(s.state_loss_mask);
    w.bitmap(s.frame_loss_mask);
  }
  return w.buffer();
}

template <class T>
std::vector<ParallelSequence<T>> decode_dataset(std::vector<std::uint8_t> bytes, DatasetHeader* header_out = nullptr) {
  io::ByteReader r(std::move(bytes));
  if (r.bytes(kDatasetMagic.size()) != kDatasetMagic) throw IoError("not a CTOK1 dataset");
  const std::uint32_t count = r.u32();
  DatasetHeader h;
  h.frame_dim = r.u16();
  h.text_vocab = r.u16();
  h.state_vocab = r.u16();
  std::vector<ParallelSequence<T>> out;
  out.reserve(count);
  for (std::uint32_t k = 0; k < count; ++k) {
    ParallelSequence<T> s;
    s.task = seq::task_kind_from_byte(r.u8());
    const std::size_t n = r.u32();
    s.text_ids.resize(n);
    s.state_ids.resize(n);
    for (auto& t : s.text_ids) t = r.u16();
    for (auto& st : s.state_ids) st = r.u8();
    const auto present = r.bitmap(n);
    s.frames.resize(n);
    s.input_frame_mask.assign(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
      if (!present[i]) continue;
      Frame<T> f(h.frame_dim);
      for (auto& v : f) v = static_cast<T>(r.f32());
      s.frames[i] = std::move(f);
      s.input_frame_mask[i] = s.state_ids[i] != seq::id(seq::StateToken::Generating);
    }
    s.text_loss_mask = r.bitmap(n);
    s.state_loss_mask = r.bitmap(n);
    s.frame_loss_mask = r.bitmap(n);
    s.response_start = n;
    for (std::size_t i = 1; i < n; ++i) {
      if (s.text_ids[i] == seq::text::kEos && s.state_ids[i] == seq::id(seq::StateToken::Eos)) {
        s.response_start = i + 1;
        break;
      }
    }
    out.push_back(std::move(s));
  }
  if (!r.at_end()) throw IoError("trailing bytes after dataset records");
  if (header_out) *header_out = h;
  return out;
}

inline nlohmann::json corpus_manifest(const Corpus& c) {
  nlohmann::json j = to_json(c.config);
  j["norm_mean"] = c.stats.mean;
  j["norm_std"] = c.stats.std;
  j["num_words"] = c.config.num_words();
  return j;
}

/// Writes train.ctok, dev.ctok and corpus.json into `dir`.
inline void write_corpus(const Corpus& c, const std::filesystem::path& dir) {
  const DatasetHeader h{c.config.frame_dim, c.config.text_vocab, c.config.state_vocab};
  io::write_file_atomic(dir / "train.ctok", encode_dataset(c.train, h));
  io::write_file_atomic(dir / "dev.ctok", encode_dataset(c.dev, h));
  io::write_text_atomic(dir / "corpus.json", corpus_manifest(c).dump(2) + "\n");
}

inline CorpusConfig corpus_config_from_manifest(const nlohmann::json& j) {
  CorpusConfig c;
  try {
    c.stage = j.at("stage").get<int>();
    c.train_size = j.at("train_size").get<std::size_t>();
    c.dev_size = j.at("dev_size").get<std::size_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.frames_per_word = j.at("frames_per_word").get<std::size_t>();
    c.frame_dim = j.at("frame_dim").get<std::size_t>();
    c.text_vocab = j.at("text_vocab").get<std::size_t>();
    c.state_vocab = j.at("state_vocab").get<std::size_t>();
    c.question_min = j.at("question_min").get<std::size_t>();
    c.question_max = j.at("question_max").get<std::size_t>();
    c.utterance_min = j.at("utterance_min").get<std::size_t>();
    c.utterance_max = j.at("utterance_max").get<std::size_t>();
    c.jitter = j.at("jitter").get<double>();
    c.max_seq_len = j.at("max_seq_len").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("malformed corpus manifest: ") + e.what());
  }
  return c;
}

/// Loads a corpus directory written by write_corpus.
template <class T>
struct LoadedCorpus {
  CorpusConfig config;
  FrameStats stats;
  std::vector<ParallelSequence<T>> train;
  std::vector<ParallelSequence<T>> dev;
};

template <class T>
LoadedCorpus<T> read_corpus(const std::filesystem::path& dir) {
  LoadedCorpus<T> c;
  nlohmann::json j;
  try {
    const auto text = io::read_file(dir / "corpus.json");
    j = nlohmann::json::parse(text.begin(), text.end());
    c.stats.mean = j.at("norm_mean").get<std::vector<double>>();
    c.stats.std = j.at("norm_std").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("malformed corpus manifest: ") + e.what());
  }
  c.config = corpus_config_from_manifest(j);
  c.train = decode_dataset<T>(io::read_file(dir / "train.ctok"));
  c.dev = decode_dataset<T>(io::read_file(dir / "dev.ctok"));
  return c;
}

}  // namespace contok::data
