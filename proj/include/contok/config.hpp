#pragma once

// Run configuration: one JSON document with a section per component.
// Unknown keys are rejected everywhere; missing keys keep their defaults.

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "contok/binary_io.hpp"
#include "contok/inference.hpp"
#include "contok/json_util.hpp"
#include "contok/model.hpp"
#include "contok/ot_flow.hpp"
#include "contok/synth_data.hpp"
#include "contok/trainer.hpp"

namespace contok::config {

using nlohmann::json;

inline data::CorpusConfig corpus_config_from_json(const json& j) {
  constexpr std::string_view s = "corpus";
  json_util::reject_unknown(j,
                            {"stage", "train_size", "dev_size", "seed", "frames_per_word", "frame_dim", "text_vocab",
                             "state_vocab", "question_min", "question_max", "utterance_min", "utterance_max", "jitter",
                             "max_seq_len"},
                            s);
  data::CorpusConfig c;
  json_util::read(j, "stage", c.stage, s);
  json_util::read(j, "train_size", c.train_size, s);
  json_util::read(j, "dev_size", c.dev_size, s);
  json_util::read(j, "seed", c.seed, s);
  json_util::read(j, "frames_per_word", c.frames_per_word, s);
  json_util::read(j, "frame_dim", c.frame_dim, s);
  json_util::read(j, "text_vocab", c.text_vocab, s);
  json_util::read(j, "state_vocab", c.state_vocab, s);
  json_util::read(j, "question_min", c.question_min, s);
  json_util::read(j, "question_max", c.question_max, s);
  json_util::read(j, "utterance_min", c.utterance_min, s);
  json_util::read(j, "utterance_max", c.utterance_max, s);
  json_util::read(j, "jitter", c.jitter, s);
  json_util::read(j, "max_seq_len", c.max_seq_len, s);
  c.validate();
  return c;
}

inline json to_json(const infer::GenConfig& g) {
  return {{"max_new_steps", g.max_new_steps}, {"num_steps", g.sampler.num_steps}, {"temperature", g.sampler.temperature},
          {"top_k", g.top_k},                 {"text_temperature", g.text_temperature}};
}

inline infer::GenConfig gen_config_from_json(const json& j) {
  constexpr std::string_view s = "generate";
  json_util::reject_unknown(j, {"max_new_steps", "num_steps", "temperature", "top_k", "text_temperature"}, s);
  infer::GenConfig g;
  json_util::read(j, "max_new_steps", g.max_new_steps, s);
  json_util::read(j, "num_steps", g.sampler.num_steps, s);
  json_util::read(j, "temperature", g.sampler.temperature, s);
  json_util::read(j, "top_k", g.top_k, s);
  json_util::read(j, "text_temperature", g.text_temperature, s);
  if (g.max_new_steps < 1) throw ConfigError("generate.max_new_steps must be >= 1");
  if (!(g.text_temperature > 0.0)) throw ConfigError("generate.text_temperature must be > 0");
  g.sampler.validate();
  return g;
}

/// Runs require a strictly positive sigma_min.
inline flow::OTPathSpec path_spec_from_json(const json& j, std::size_t frame_dim) {
  constexpr std::string_view s = "path";
  json_util::reject_unknown(j, {"sigma_min"}, s);
  flow::OTPathSpec p;
  json_util::read(j, "sigma_min", p.sigma_min, s);
  p.frame_dim = frame_dim;
  p.validate();
  if (!(p.sigma_min > 0.0)) throw ConfigError("path.sigma_min must be > 0 for training and sampling runs");
  return p;
}

struct RunConfig {
  std::uint64_t seed = 0;
  data::CorpusConfig corpus;
  model::ModelConfig model;
  train::TrainConfig train;
  infer::GenConfig generate{64, {10, 1.0}, 0, 1.0, 0};
  flow::OTPathSpec path;

  /// Model and corpus must agree on frame and vocabulary sizes.
  void check_consistency() const {
    if (corpus.frame_dim != model.frame_dim) throw ConfigError("corpus.frame_dim differs from model.frame_dim");
    if (corpus.text_vocab != model.text_vocab) throw ConfigError("corpus.text_vocab differs from model.text_vocab");
    if (corpus.state_vocab != model.state_vocab) throw ConfigError("corpus.state_vocab differs from model.state_vocab");
    if (corpus.max_seq_len > model.max_seq_len) throw ConfigError("corpus.max_seq_len exceeds model.max_seq_len");
  }
};

inline json to_json(const RunConfig& c) {
  return {{"seed", c.seed},
          {"corpus", data::to_json(c.corpus)},
          {"model", model::to_json(c.model)},
          {"train", train::to_json(c.train)},
          {"generate", to_json(c.generate)},
          {"path", {{"sigma_min", c.path.sigma_min}}}};
}

inline RunConfig run_config_from_json(const json& j) {
  json_util::reject_unknown(j, {"seed", "corpus", "model", "train", "generate", "path"}, "config");
  RunConfig c;
  json_util::read(j, "seed", c.seed, "config");
  if (j.contains("corpus")) c.corpus = corpus_config_from_json(j.at("corpus"));
  if (j.contains("model")) c.model = model::model_config_from_json(j.at("model"));
  if (j.contains("train")) c.train = train::train_config_from_json(j.at("train"));
  if (j.contains("generate")) c.generate = gen_config_from_json(j.at("generate"));
  c.path = path_spec_from_json(j.contains("path") ? j.at("path") : json::object(), c.model.frame_dim);
  c.check_consistency();
  return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  json j;
  try {
    j = json::parse(bytes.begin(), bytes.end());
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return run_config_from_json(j);
}

}  // namespace contok::config
