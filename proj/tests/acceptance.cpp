// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.
//
// Criteria 7 to 10 share one two-stage training run on the desk corpus; its
// artifacts (corpora, checkpoints, metric logs) and a copy of the report
// (acceptance_report.txt) are written to --work-dir.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "contok/contok.hpp"

namespace fs = std::filesystem;
using namespace contok;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

class Report {
 public:
  explicit Report(std::set<int> only) : only_(std::move(only)) {}

  bool wanted(int id) const { return only_.empty() || only_.count(id) > 0; }

  void run(int id, const std::string& name, const std::function<Outcome()>& body) {
    if (!wanted(id)) return;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = body();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::ostringstream line;
    line << (o.pass ? "PASS" : "FAIL") << "  criterion " << id << "  " << name << "  [" << o.detail << "; " << fmt(s, 3) << " s]";
    std::cout << line.str() << std::endl;
    lines_.push_back(line.str());
    all_pass_ = all_pass_ && o.pass;
  }

  bool all_pass() const { return all_pass_; }

  void write(const fs::path& path) const {
    std::ofstream out(path);
    for (const auto& l : lines_) out << l << "\n";
  }

 private:
  std::vector<std::string> lines_;
  std::set<int> only_;
  bool all_pass_ = true;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

flow::Frame<double> random_frame(Rng& rng, std::size_t d, double scale = 1.0) {
  flow::Frame<double> f(d);
  for (auto& v : f) v = scale * rng.normal();
  return f;
}

// ---------------------------------------------------------------------------
// 1. Gradient correctness

Outcome gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto results = ad::run_gradcheck_suite(0, 1e-5);
  double worst = 0;
  std::string where;
  for (const auto& r : results) {
    if (r.max_rel_error > worst) {
      worst = r.max_rel_error;
      where = r.name + "/" + r.worst;
    }
  }
  const double s = seconds_since(t0);
  const bool joint = std::any_of(results.begin(), results.end(), [](const auto& r) { return r.name == "joint_loss"; });
  return {worst < 1e-4 && joint && s < 120.0,
          std::to_string(results.size()) + " checks, max rel err " + fmt(worst) + " at " + where + " (tol 1e-4, h 1e-5)"};
}

// ---------------------------------------------------------------------------
// 2. OT-path algebra

Outcome path_algebra() {
  flow::OTPathSpec spec;
  spec.sigma_min = 1e-2;
  spec.frame_dim = 20;
  Rng rng(2024);
  bool identity = true;
  double max_const = 0, max_deriv = 0;
  const double h = 1e-5;
  for (int trial = 0; trial < 100; ++trial) {
    const auto x0 = random_frame(rng, 20), x1 = random_frame(rng, 20, 2.0);
    identity = identity && flow::conditional_flow<double>(0.0, x0, x1, spec) == x0;
    for (int i = 0; i < 100; ++i) {
      const double t = (i + 0.5) / 100.0;
      const auto xt = flow::conditional_flow<double>(t, x0, x1, spec);
      const auto u = flow::conditional_field<double>(t, xt, x1, spec);
      const auto ahead = flow::conditional_flow<double>(t + h, x0, x1, spec);
      const auto behind = flow::conditional_flow<double>(t - h, x0, x1, spec);
      for (std::size_t c = 0; c < 20; ++c) {
        max_const = std::max(max_const, std::abs(u[c] - (x1[c] - (1.0 - spec.sigma_min) * x0[c])));
        max_deriv = std::max(max_deriv, std::abs((ahead[c] - behind[c]) / (2 * h) - u[c]));
      }
    }
  }
  return {identity && max_const < 1e-10 && max_deriv < 1e-6,
          std::string("phi_0 identity ") + (identity ? "exact" : "broken") + ", field drift " + fmt(max_const) +
              " (tol 1e-10), d/dt error " + fmt(max_deriv) + " (tol 1e-6) over 100 pairs x 100 times"};
}

// ---------------------------------------------------------------------------
// 3. Euler exactness

Outcome euler_exactness() {
  flow::OTPathSpec spec;
  spec.sigma_min = 1e-2;
  spec.frame_dim = 20;
  Rng data(99);
  double spread = 0, zero_temp = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const auto x1 = random_frame(data, 20, 2.0);
    auto field = [&](std::span<const double> x, double t, int) { return flow::conditional_field<double>(t, x, x1, spec); };
    std::vector<flow::Frame<double>> outs;
    for (std::size_t steps : {1, 4, 64}) {
      Rng rng{7, static_cast<std::uint64_t>(trial)};
      outs.push_back(flow::euler_sample<double>(field, 0, flow::SamplerConfig{steps, 1.0}, spec, rng));
      Rng rng0{7, static_cast<std::uint64_t>(trial)};
      const auto cold = flow::euler_sample<double>(field, 0, flow::SamplerConfig{steps, 0.0}, spec, rng0);
      for (std::size_t c = 0; c < 20; ++c) zero_temp = std::max(zero_temp, std::abs(cold[c] - x1[c]));
    }
    for (std::size_t c = 0; c < 20; ++c) {
      spread = std::max({spread, std::abs(outs[0][c] - outs[1][c]), std::abs(outs[0][c] - outs[2][c])});
    }
  }
  return {spread < 1e-12 && zero_temp == 0.0,
          "max spread over num_steps {1,4,64} " + fmt(spread) + " (tol 1e-12), temperature-0 deviation from x1 " + fmt(zero_temp) +
              " (required 0)"};
}

// ---------------------------------------------------------------------------
// 4. CFM learning on a 2-D Gaussian

Outcome toy_gaussian() {
  toy::ToyFlowConfig cfg;
  cfg.seed = 4;
  toy::ToyFlow<double> f(cfg, 4);
  flow::OTPathSpec spec;
  spec.sigma_min = 1e-2;
  spec.frame_dim = 2;
  const double mu[2] = {2.0, -1.0};
  toy::train_toy_flow<double>(f, [&](Rng& r) { return flow::Frame<double>{mu[0] + 0.5 * r.normal(), mu[1] + 0.5 * r.normal()}; }, spec);
  Rng rng(44);
  const auto x = toy::sample_toy_flow(f, 10000, flow::SamplerConfig{50, 1.0}, spec, rng);
  double mean[2] = {0, 0}, var[2] = {0, 0};
  for (std::size_t i = 0; i < 10000; ++i) {
    for (int c = 0; c < 2; ++c) mean[c] += x.data()[i * 2 + c] / 10000.0;
  }
  for (std::size_t i = 0; i < 10000; ++i) {
    for (int c = 0; c < 2; ++c) var[c] += std::pow(x.data()[i * 2 + c] - mean[c], 2) / 9999.0;
  }
  const double expected = 0.25 + spec.sigma_min * spec.sigma_min;
  bool ok = true;
  for (int c = 0; c < 2; ++c) ok = ok && std::abs(mean[c] - mu[c]) <= 0.1 && std::abs(var[c] - expected) <= 0.3 * expected;
  return {ok, "mean (" + fmt(mean[0]) + ", " + fmt(mean[1]) + ") vs (2, -1) tol 0.1; var (" + fmt(var[0]) + ", " + fmt(var[1]) +
                  ") vs " + fmt(expected) + " tol 30%"};
}

// ---------------------------------------------------------------------------
// 5. Marginal-field oracle on the two-point dataset

Outcome two_point_oracle() {
  toy::ToyFlowConfig cfg;
  cfg.dim = 1;
  cfg.seed = 5;
  toy::ToyFlow<double> f(cfg, 5);
  flow::OTPathSpec spec;
  spec.sigma_min = 1e-2;
  spec.frame_dim = 1;
  const std::vector<flow::Frame<double>> points{{-1.0}, {1.0}};
  toy::train_toy_flow<double>(f, [&](Rng& r) { return points[r.below(2)]; }, spec);
  const double loss = flow::fm_loss_oracle(
      [&](std::span<const double> x, double t) { return f.field_at(Array<double>(Shape{1, 1}, {x[0]}), t).vec(); }, points, spec);
  return {loss < 0.05, "oracle loss of the trained field " + fmt(loss) + " (tol 0.05) on {-1, +1}"};
}

// ---------------------------------------------------------------------------
// 6. Sequence-layout invariants

Outcome layout() {
  using namespace seq;
  Rng rng(6);
  std::size_t valid = 0, total = 0;
  bool delay = true;
  for (auto task : kAllTasks) {
    for (int k = 0; k < 1000; ++k) {
      Utterance<double> prompt, response;
      const std::size_t words = 1 + rng.below(5);
      if (speech_in(task)) {
        for (std::size_t i = 0, n = 1 + rng.below(10); i < n; ++i) prompt.frames.push_back(random_frame(rng, 4));
      } else {
        for (std::size_t i = 0, n = 1 + rng.below(6); i < n; ++i) prompt.text.push_back(text::kFirstWord + static_cast<std::int64_t>(rng.below(30)));
      }
      for (std::size_t i = 0; i < words; ++i) response.text.push_back(text::kFirstWord + static_cast<std::int64_t>(rng.below(30)));
      if (speech_out(task)) {
        for (std::size_t i = 0, n = std::max<std::size_t>(1, words - 1) + rng.below(8); i < n; ++i) response.frames.push_back(random_frame(rng, 4));
      }
      const auto s = build_sequence(task, prompt, response, 256);
      ++total;
      valid += validate_sequence(s).empty();
      if (speech_out(task)) {
        std::size_t first_text = 0, first_frame = 0;
        for (std::size_t i = s.size(); i-- > s.response_start;) {
          if (s.text_ids[i] >= text::kFirstWord) first_text = i;
          if (s.frames[i]) first_frame = i;
        }
        delay = delay && first_frame == first_text + 1;
      }
    }
  }

  // Each mutation injects one violation class into a valid speech response.
  Rng fr(61);
  Utterance<double> prompt{{5, 6}, {}}, response{{7, 8}, {random_frame(fr, 4), random_frame(fr, 4), random_frame(fr, 4)}};
  const auto base = build_sequence(TaskKind::TextInSpeechOut, prompt, response, 64);
  const std::vector<std::pair<std::string, std::function<void(ParallelSequence<double>&)>>> mutations{
      {"length", [](auto& s) { s.state_ids.pop_back(); }},
      {"token_range", [](auto& s) { s.state_ids[5] = 17; }},
      {"frame_presence", [](auto& s) { s.frames[5].reset(); }},
      {"frame_mask", [](auto& s) { s.frame_loss_mask[4] = 1; }},
      {"prompt_mask", [](auto& s) { s.text_loss_mask[1] = 1; }},
      {"modality", [](auto& s) {
         s.input_frame_mask[1] = 1;
         s.frames[1] = flow::Frame<double>(4, 0.0);
       }},
      {"start", [](auto& s) { s.state_ids[4] = id(StateToken::Pad); }},
      {"stop", [](auto& s) { s.state_ids[8] = id(StateToken::Pad); }},
      {"contiguity", [](auto& s) {
         s.state_ids[6] = id(StateToken::Pad);
         s.frames[6].reset();
         s.frame_loss_mask[6] = 0;
       }},
      {"delay", [](auto& s) { s.text_ids[4] = text::kPad; }},
  };
  std::size_t detected = 0;
  std::string missed;
  for (const auto& [kind, mutate] : mutations) {
    auto s = base;
    mutate(s);
    const auto v = validate_sequence(s);
    if (std::any_of(v.begin(), v.end(), [&](const Violation& x) { return x.kind == kind; })) {
      ++detected;
    } else {
      missed += " " + kind;
    }
  }
  return {valid == total && delay && detected == mutations.size(),
          std::to_string(valid) + "/" + std::to_string(total) + " random sequences valid, delay rule " + (delay ? "holds" : "broken") +
              ", " + std::to_string(detected) + "/" + std::to_string(mutations.size()) + " mutation classes detected" + missed};
}

// ---------------------------------------------------------------------------
// 7-10. Desk-scale two-stage run

struct DeskRun {
  data::Corpus c1, c2;
  model::ModelConfig mc;
  train::TrainConfig tc1, tc2;
  flow::OTPathSpec spec;
  std::optional<model::SequenceModel<float>> m;
  train::DevLoss s1_before, s1_after, s2_before, s2_after;
  bool frozen_bitwise = false;
  std::size_t frozen_count = 0;
  double train_seconds = 0;
  fs::path dir;
};

std::vector<std::vector<float>> frozen_values(const model::SequenceModel<float>& m) {
  std::vector<std::vector<float>> out;
  for (const auto& [name, v] : m.params().items()) {
    if (model::frozen_in_stage1(name)) out.push_back(v.value().vec());
  }
  return out;
}

void write_log(const fs::path& path, const std::vector<train::StepMetrics>& metrics) {
  std::ofstream out(path);
  for (const auto& s : metrics) out << train::format_metric_line(s) << "\n";
}

void run_desk(DeskRun& r, std::uint64_t corpus_seed, std::uint64_t train_seed) {
  data::CorpusConfig cc;
  cc.seed = corpus_seed;
  cc.stage = 1;
  r.c1 = data::make_corpus(cc);
  cc.stage = 2;
  r.c2 = data::make_corpus(cc);
  data::write_corpus(r.c1, r.dir / "corpus-stage1");
  data::write_corpus(r.c2, r.dir / "corpus-stage2");

  r.spec.frame_dim = r.mc.frame_dim;
  r.tc1.stage = 1;
  r.tc1.seed = train_seed;
  r.tc2 = r.tc1;
  r.tc2.stage = 2;

  const auto t0 = std::chrono::steady_clock::now();
  r.m.emplace(r.mc, train_seed);
  auto& m = *r.m;
  m.set_stage(1);
  const auto frozen = frozen_values(m);
  r.frozen_count = frozen.size();
  r.s1_before = train::dev_loss(m, r.c1.dev, r.tc1, r.spec);
  {
    train::Adam<float> adam(m.params());
    const auto res = train::train_stage(m, adam, r.c1.train, r.tc1, r.spec);
    write_log(r.dir / "stage1-metrics.tsv", res.metrics);
    train::save_checkpoint(r.dir / "stage1.ctck", train::make_checkpoint(m, &adam, 1, res.steps_done, {}, r.c1.stats.mean, r.c1.stats.std));
  }
  r.frozen_bitwise = frozen_values(m) == frozen;
  r.s1_after = train::dev_loss(m, r.c1.dev, r.tc1, r.spec);

  r.s2_before = train::dev_loss(m, r.c2.dev, r.tc2, r.spec);
  {
    train::Adam<float> adam(m.params());
    const auto res = train::train_stage(m, adam, r.c2.train, r.tc2, r.spec);
    write_log(r.dir / "stage2-metrics.tsv", res.metrics);
    train::save_checkpoint(r.dir / "stage2.ctck", train::make_checkpoint(m, &adam, 2, res.steps_done, {}, r.c2.stats.mean, r.c2.stats.std));
  }
  r.s2_after = train::dev_loss(m, r.c2.dev, r.tc2, r.spec);
  r.train_seconds = seconds_since(t0);
}

Outcome two_stage(const DeskRun& r) {
  const double drop1 = 1.0 - r.s1_after.total / r.s1_before.total;
  const double drop2 = 1.0 - r.s2_after.total / r.s2_before.total;
  const bool ok = r.frozen_bitwise && r.frozen_count > 0 && drop1 >= 0.5 && drop2 >= 0.2 && r.train_seconds < 1800.0;
  return {ok, std::to_string(r.frozen_count) + " frozen tensors " + (r.frozen_bitwise ? "bitwise unchanged" : "CHANGED") +
                  "; stage 1 dev total " + fmt(r.s1_before.total) + " -> " + fmt(r.s1_after.total) + " (drop " + fmt(100 * drop1, 3) +
                  "%, need 50%); stage 2 dev total " + fmt(r.s2_before.total) + " -> " + fmt(r.s2_after.total) + " (drop " +
                  fmt(100 * drop2, 3) + "%, need 20%); training " + fmt(r.train_seconds, 4) + " s (limit 1800)"};
}

Outcome desk_quality(const DeskRun& r) {
  const auto t0 = std::chrono::steady_clock::now();
  infer::EvalOptions opt;
  opt.per_kind = 200;
  const auto rep = infer::evaluate(*r.m, r.c2.dev, data::make_lexicon(r.c2.config), r.c2.stats, opt);
  const double s = seconds_since(t0);
  const bool ok = rep.text_prompts == 200 && rep.tts_prompts == 200 && rep.asr_prompts == 200 && rep.text_exact_match >= 0.9 &&
                  rep.tts_fwer <= 0.15 && rep.asr_token_accuracy >= 0.9 && s < 300.0;
  return {ok, "text exact match " + fmt(rep.text_exact_match) + " (need 0.9), TTS FWER " + fmt(rep.tts_fwer) +
                  " (need <= 0.15), ASR token accuracy " + fmt(rep.asr_token_accuracy) + " (need 0.9); speech-to-speech FWER " +
                  fmt(rep.s2s_fwer) + ", truncated " + std::to_string(rep.truncated) + ", eval " + fmt(s, 3) + " s"};
}

Outcome temperature(const DeskRun& r) {
  const auto& m = *r.m;
  const std::size_t d = r.mc.frame_dim;
  const seq::Utterance<float> prompt{{data::word_id(3), data::word_id(1), data::word_id(4)}, {}};
  auto first_frames = [&](double temp) {
    std::vector<flow::Frame<float>> out;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      infer::GenConfig g;
      g.max_new_steps = 2;
      g.sampler = {10, temp};
      g.seed = seed;
      const auto res = infer::generate(m, seq::TaskKind::TextInSpeechOut, prompt, g);
      if (res.frames.empty()) throw DomainError("no frame generated");
      out.push_back(res.frames.front());
    }
    return out;
  };
  auto variance = [&](const std::vector<flow::Frame<float>>& xs) {
    std::vector<double> mean(d, 0.0), var(d, 0.0);
    for (const auto& x : xs) {
      for (std::size_t c = 0; c < d; ++c) mean[c] += x[c] / static_cast<double>(xs.size());
    }
    for (const auto& x : xs) {
      for (std::size_t c = 0; c < d; ++c) var[c] += std::pow(x[c] - mean[c], 2) / static_cast<double>(xs.size() - 1);
    }
    return var;
  };
  const auto lo = variance(first_frames(0.5)), hi = variance(first_frames(1.5));
  std::size_t larger = 0;
  double min_ratio = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < d; ++c) {
    larger += hi[c] > lo[c];
    min_ratio = std::min(min_ratio, hi[c] / lo[c]);
  }

  infer::GenConfig cold;
  cold.sampler = {10, 0.0};
  auto full = [&](std::uint64_t seed) {
    cold.seed = seed;
    const auto res = infer::generate(m, seq::TaskKind::TextInSpeechOut, prompt, cold);
    return std::make_pair(res.sequence.text_ids, res.frames);
  };
  const auto a = full(0);
  const bool deterministic = a == full(0) && a == full(17);
  return {larger == d && deterministic, std::to_string(larger) + "/" + std::to_string(d) +
                                            " dimensions with variance(T=1.5) > variance(T=0.5) over 100 seeds, min ratio " +
                                            fmt(min_ratio) + "; temperature 0 " + (deterministic ? "bit-deterministic" : "NOT deterministic")};
}

Outcome reproducibility(const DeskRun& r) {
  // Seeded 64-bit reruns of the same stage produce identical metric logs.
  data::CorpusConfig cc = r.c1.config;
  const data::DatasetHeader h{cc.frame_dim, cc.text_vocab, cc.state_vocab};
  const auto train64 = data::decode_dataset<double>(data::encode_dataset(r.c1.train, h));
  auto run = [&] {
    model::SequenceModel<double> m(r.mc, 11);
    train::Adam<double> adam(m.params());
    auto tc = r.tc1;
    tc.seed = 11;
    tc.total_steps = 20;
    std::string log;
    train::TrainHooks hooks;
    hooks.on_step = [&](const train::StepMetrics& s) { log += train::format_metric_line(s) + "\n"; };
    train::train_stage(m, adam, train64, tc, r.spec, 0, hooks);
    return log;
  };
  const auto log_a = run(), log_b = run();
  const bool logs = !log_a.empty() && log_a == log_b;

  // Checkpoint file round trip and bitwise forward outputs.
  const auto path = r.dir / "stage2.ctck";
  const auto bytes = io::read_file(path);
  const auto ck = train::load_checkpoint(path);
  const bool ck_bytes = train::encode_checkpoint(ck) == bytes;
  model::SequenceModel<float> loaded(train::model_config_of(ck), 999);
  train::restore(ck, loaded);
  std::vector<const seq::ParallelSequence<float>*> items;
  for (std::size_t i = 0; i < 8; ++i) items.push_back(&r.c2.dev[i]);
  const auto batch = seq::collate(items, seq::max_length(items), r.mc.frame_dim);
  const auto fa = r.m->forward(batch), fb = loaded.forward(batch);
  const bool forward = fa.text_logits.value().vec() == fb.text_logits.value().vec() &&
                       fa.state_logits.value().vec() == fb.state_logits.value().vec() &&
                       fa.condition.value().vec() == fb.condition.value().vec();

  // Dataset files decode and re-encode to the same bytes.
  bool datasets = true;
  for (const char* dir : {"corpus-stage1", "corpus-stage2"}) {
    for (const char* file : {"train.ctok", "dev.ctok"}) {
      const auto raw = io::read_file(r.dir / dir / file);
      data::DatasetHeader hh;
      const auto records = data::decode_dataset<float>(raw, &hh);
      datasets = datasets && data::encode_dataset(records, hh) == raw;
    }
  }
  const auto back = data::read_corpus<float>(r.dir / "corpus-stage2");
  datasets = datasets && data::encode_dataset(back.dev, h) == data::encode_dataset(r.c2.dev, h);

  return {logs && ck_bytes && forward && datasets,
          std::string("64-bit metric logs ") + (logs ? "identical" : "DIFFER") + ", checkpoint bytes " + (ck_bytes ? "round-trip" : "DIFFER") +
              ", forward after load " + (forward ? "bitwise equal" : "DIFFERS") + ", dataset files " + (datasets ? "round-trip" : "DIFFER")};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  std::string work_dir = "acceptance_run";
  std::vector<int> only;
  std::uint64_t corpus_seed = 7, train_seed = 1;
  app.add_option("--work-dir", work_dir, "directory for corpora, checkpoints and logs");
  app.add_option("--only", only, "run only these criteria");
  app.add_option("--corpus-seed", corpus_seed, "desk corpus seed");
  app.add_option("--train-seed", train_seed, "desk training seed");
  CLI11_PARSE(app, argc, argv);

  fs::create_directories(work_dir);
  Report report({only.begin(), only.end()});
  report.run(1, "gradient correctness", gradients);
  report.run(2, "OT-path algebra", path_algebra);
  report.run(3, "Euler exactness", euler_exactness);
  report.run(4, "CFM learning on a 2-D Gaussian", toy_gaussian);
  report.run(5, "marginal-field oracle", two_point_oracle);
  report.run(6, "sequence-layout invariants", layout);

  if (report.wanted(7) || report.wanted(8) || report.wanted(9) || report.wanted(10)) {
    DeskRun desk;
    desk.dir = work_dir;
    std::optional<std::string> failure;
    try {
      run_desk(desk, corpus_seed, train_seed);
    } catch (const std::exception& e) {
      failure = e.what();
    }
    auto guarded = [&](const std::function<Outcome(const DeskRun&)>& f) {
      return [&, f] { return failure ? Outcome{false, "desk run failed: " + *failure} : f(desk); };
    };
    report.run(7, "two-stage training contract", guarded(two_stage));
    report.run(8, "end-to-end desk quality", guarded(desk_quality));
    report.run(9, "temperature behavior", guarded(temperature));
    report.run(10, "reproducibility and persistence", guarded(reproducibility));
  }
  report.write(fs::path(work_dir) / "acceptance_report.txt");
  return report.all_pass() ? 0 : 1;
}
