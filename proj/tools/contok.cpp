// contok: corpus synthesis, training, generation, evaluation and plot export.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "contok/contok.hpp"

namespace fs = std::filesystem;
using namespace contok;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;
constexpr int kExitNumeric = 4;
constexpr int kExitDivergence = 5;

std::string fmt_real(double v, int digits = 9) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

std::vector<double> parse_reals(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (item.find_first_not_of(" \t\r", used) != std::string::npos) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("cannot parse number '" + item + "'");
    }
  }
  return out;
}

/// "w3 w1 w4" -> text ids.
std::vector<std::int64_t> parse_prompt_words(const std::string& prompt, std::size_t text_vocab) {
  std::vector<std::int64_t> ids;
  std::stringstream ss(prompt);
  std::string tok;
  while (ss >> tok) {
    if (tok.size() < 2 || tok[0] != 'w' || tok.find_first_not_of("0123456789", 1) != std::string::npos) {
      throw ConfigError("prompt token '" + tok + "' is not of the form w<index>");
    }
    const auto idx = std::stoll(tok.substr(1));
    const auto id = idx + seq::text::kFirstWord;
    if (id >= static_cast<std::int64_t>(text_vocab)) throw ConfigError("prompt word '" + tok + "' outside the vocabulary");
    ids.push_back(id);
  }
  if (ids.empty()) throw ConfigError("empty prompt");
  return ids;
}

std::string text_token_name(std::int64_t id) {
  if (id == seq::text::kPad) return "<pad>";
  if (id == seq::text::kBos) return "<bos>";
  if (id == seq::text::kEos) return "<eos>";
  return "w" + std::to_string(id - seq::text::kFirstWord);
}

std::string state_token_name(std::int64_t id) {
  static const char* names[] = {"BOS", "EOS", "START", "PAD", "STOP", "GENERATING"};
  return id >= 0 && id < 6 ? names[id] : std::to_string(id);
}

fs::path resolve_run_dir(const std::string& explicit_dir, std::uint64_t seed) {
  if (!explicit_dir.empty()) return explicit_dir;
  const char* env = std::getenv("CONTOK_RUN_DIR");
  const fs::path root = env && *env ? fs::path(env) : fs::path("runs");
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y%m%dT%H%M%SZ", &tm);
  return root / (std::string(stamp) + "-seed" + std::to_string(seed));
}

config::RunConfig load_config(const std::string& path) {
  return path.empty() ? config::run_config_from_json(json::object()) : config::load_run_config(path);
}

// ---------------------------------------------------------------------------
// synth

struct SynthArgs {
  std::string config, out;
  std::optional<int> stage;
  std::optional<std::size_t> train, dev;
  std::optional<std::uint64_t> seed;
};

int cmd_synth(const SynthArgs& a) {
  auto rc = load_config(a.config);
  auto cc = rc.corpus;
  if (a.stage) cc.stage = *a.stage;
  if (a.train) cc.train_size = *a.train;
  if (a.dev) cc.dev_size = *a.dev;
  if (a.seed) cc.seed = *a.seed;
  cc.validate();
  const auto corpus = data::make_corpus(cc);
  data::write_corpus(corpus, a.out);
  std::cout << "wrote " << corpus.train.size() << " train and " << corpus.dev.size() << " dev records (stage " << cc.stage
            << ") to " << a.out << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  std::string config, data, init, resume, run_dir;
  std::optional<int> stage;
  std::optional<std::size_t> steps, batch, stop_after;
  std::optional<std::uint64_t> seed;
  bool f64 = false, dry_run = false, quiet = false;
};

template <class T>
int run_train(const TrainArgs& a, config::RunConfig rc) {
  auto tc = rc.train;
  if (a.stage) tc.stage = *a.stage;
  if (a.steps) tc.total_steps = *a.steps;
  if (a.batch) tc.batch_size = *a.batch;
  tc.seed = a.seed.value_or(rc.seed);
  rc.seed = tc.seed;
  tc.validate();

  std::optional<train::Checkpoint> init, resume;
  if (!a.init.empty()) init = train::load_checkpoint(a.init);
  if (!a.resume.empty()) resume = train::load_checkpoint(a.resume);
  if (init && resume) throw ConfigError("--init and --resume are mutually exclusive");
  if (tc.stage == 2 && !init && !resume) throw ConfigError("stage 2 needs a stage-1 checkpoint via --init");
  const train::Checkpoint* source = resume ? &*resume : init ? &*init : nullptr;
  if (source) rc.model = train::model_config_of(*source);

  const auto corpus = data::read_corpus<T>(a.data);
  rc.corpus = corpus.config;
  rc.check_consistency();
  rc.path.frame_dim = rc.model.frame_dim;
  rc.train = tc;

  model::SequenceModel<T> m(rc.model, tc.seed);
  train::Adam<T> adam(m.params());
  std::size_t start = 0;
  if (resume) {
    if (resume->stage() != tc.stage) throw ConfigError("--resume checkpoint is from stage " + std::to_string(resume->stage()));
    train::restore(*resume, m, &adam);
    start = resume->step();
  } else if (init) {
    train::restore(*init, m);
  }
  m.set_stage(tc.stage);

  std::size_t trainable = 0;
  for (const auto& [name, v] : m.params().items()) trainable += v.requires_grad() ? v.size() : 0;
  if (a.dry_run) {
    std::cout << "parameters\t" << m.parameter_count() << "\n"
              << "trainable\t" << trainable << "\n"
              << "stage\t" << tc.stage << "\n"
              << "steps\t" << start << ".." << tc.total_steps << "\n"
              << "batch_size\t" << tc.batch_size << "\n"
              << "lr\t" << fmt_real(train::lr_at(start, tc)) << " -> " << fmt_real(tc.lr_min) << " (cosine)\n"
              << "checkpoint_every\t" << tc.checkpoint_every << "\n"
              << "train_records\t" << corpus.train.size() << "\n"
              << "dev_records\t" << corpus.dev.size() << "\n";
    return kExitOk;
  }

  const fs::path dir = resolve_run_dir(a.run_dir, tc.seed);
  fs::create_directories(dir);
  json effective = config::to_json(rc);
  effective["data"] = a.data;
  effective["dtype"] = std::is_same_v<T, double> ? "f64" : "f32";
  if (init) effective["init"] = a.init;
  if (resume) effective["resume"] = a.resume;
  io::write_text_atomic(dir / "config.json", effective.dump(2) + "\n");

  std::ofstream metrics(dir / "metrics.tsv", std::ios::app);
  if (!metrics) throw IoError("cannot write " + (dir / "metrics.tsv").string());
  const json ckpt_extra = {{"train", train::to_json(tc)}, {"path", {{"sigma_min", rc.path.sigma_min}}}, {"corpus", data::to_json(rc.corpus)}};
  auto save = [&](std::size_t step) {
    const auto ck = train::make_checkpoint(m, &adam, tc.stage, step, ckpt_extra, corpus.stats.mean, corpus.stats.std);
    train::save_checkpoint(dir / ("ckpt-" + std::to_string(step) + ".ctck"), ck);
    if (step == tc.total_steps) train::save_checkpoint(dir / "final.ctck", ck);
  };

  const auto before = train::dev_loss(m, corpus.dev, tc, rc.path);
  const auto t0 = std::chrono::steady_clock::now();
  train::TrainHooks hooks;
  hooks.stop_after = a.stop_after;
  hooks.on_step = [&](const train::StepMetrics& s) {
    metrics << train::format_metric_line(s) << "\n";
    metrics.flush();
    if (!a.quiet && (s.step + 1) % 100 == 0) {
      std::cerr << "step " << s.step + 1 << "/" << tc.total_steps << " total " << fmt_real(s.total, 5) << "\n";
    }
  };
  hooks.on_checkpoint = save;
  const auto res = train::train_stage(m, adam, corpus.train, tc, rc.path, start, hooks);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const auto after = train::dev_loss(m, corpus.dev, tc, rc.path);

  const json summary = {{"stage", tc.stage},
                        {"steps_done", res.steps_done},
                        {"dev_before", {{"lm", before.lm}, {"cfm", before.cfm}, {"total", before.total}}},
                        {"dev_after", {{"lm", after.lm}, {"cfm", after.cfm}, {"total", after.total}}},
                        {"seconds", seconds}};
  io::write_text_atomic(dir / "summary.json", summary.dump(2) + "\n");
  std::cout << "run_dir\t" << dir.string() << "\n"
            << "steps_done\t" << res.steps_done << "\n"
            << "dev_total_before\t" << fmt_real(before.total) << "\n"
            << "dev_total_after\t" << fmt_real(after.total) << "\n";
  return kExitOk;
}

int cmd_train(const TrainArgs& a) {
  auto rc = load_config(a.config);
  return a.f64 ? run_train<double>(a, rc) : run_train<float>(a, rc);
}

// ---------------------------------------------------------------------------
// generate

struct GenerateArgs {
  std::string ckpt, prompt, frames, task, out;
  std::optional<double> temp, text_temp;
  std::optional<std::size_t> euler_steps, max_steps, top_k;
  std::uint64_t seed = 0;
  bool binary = false;
};

template <class T>
model::SequenceModel<T> load_model(const train::Checkpoint& ck) {
  model::SequenceModel<T> m(train::model_config_of(ck), 0);
  train::restore(ck, m);
  return m;
}

data::FrameStats stats_of(const train::Checkpoint& ck) {
  auto [mean, sd] = train::norm_stats_of(ck);
  return {mean, sd};
}

std::vector<flow::Frame<double>> read_frames_file(const std::string& path, std::size_t dim) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::vector<flow::Frame<double>> frames;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto f = parse_reals(line);
    if (f.size() != dim) throw ConfigError("frame with " + std::to_string(f.size()) + " values, expected " + std::to_string(dim));
    frames.push_back(std::move(f));
  }
  if (frames.empty()) throw ConfigError("frames file " + path + " is empty");
  return frames;
}

template <class T>
int run_generate(const GenerateArgs& a, const train::Checkpoint& ck, infer::GenConfig gen) {
  const auto m = load_model<T>(ck);
  const auto stats = stats_of(ck);
  const auto& mc = m.config();
  seq::Utterance<T> prompt;
  seq::TaskKind task;
  if (!a.frames.empty()) {
    task = seq::parse_task_kind(a.task.empty() ? "speech_in_text_out" : a.task);
    if (!seq::speech_in(task)) throw ConfigError("--frames needs a speech_in task");
    for (const auto& raw : read_frames_file(a.frames, mc.frame_dim)) {
      prompt.frames.push_back(stats.mean.empty() ? flow::Frame<T>(raw.begin(), raw.end()) : stats.template normalize<T>(raw));
    }
  } else {
    if (a.prompt.empty()) throw ConfigError("either --prompt or --frames is required");
    task = seq::parse_task_kind(a.task.empty() ? "text_in_text_out" : a.task);
    if (seq::speech_in(task)) throw ConfigError("--prompt needs a text_in task");
    prompt.text = parse_prompt_words(a.prompt, mc.text_vocab);
  }

  std::ofstream file;
  if (!a.out.empty()) {
    file.open(a.out, std::ios::binary | std::ios::trunc);
    if (!file) throw IoError("cannot write " + a.out);
  }
  std::ostream& os = a.out.empty() ? std::cout : file;
  auto on_event = [&](const infer::GenEvent<T>& e) {
    os << e.step << '\t' << infer::to_string(e.kind) << '\t';
    switch (e.kind) {
      case infer::EventKind::State: os << state_token_name(e.token); break;
      case infer::EventKind::Text: os << text_token_name(e.token); break;
      case infer::EventKind::Frame: {
        if (a.binary) {
          io::ByteWriter w;
          for (std::size_t c = 0; c < e.frame.size(); ++c) {
            const double raw = stats.mean.empty() ? static_cast<double>(e.frame[c]) : static_cast<double>(e.frame[c]) * stats.std[c] + stats.mean[c];
            w.f32(static_cast<float>(raw));
          }
          os.write(reinterpret_cast<const char*>(w.buffer().data()), static_cast<std::streamsize>(w.buffer().size()));
        } else {
          for (std::size_t c = 0; c < e.frame.size(); ++c) {
            const double raw = stats.mean.empty() ? static_cast<double>(e.frame[c]) : static_cast<double>(e.frame[c]) * stats.std[c] + stats.mean[c];
            os << (c ? "," : "") << fmt_real(static_cast<float>(raw));
          }
        }
        break;
      }
      case infer::EventKind::Done: os << (e.truncated ? "truncated" : "complete"); break;
    }
    os << '\n';
    os.flush();
  };
  infer::generate<T>(m, task, prompt, gen, on_event);
  return kExitOk;
}

int cmd_generate(const GenerateArgs& a) {
  auto gen = infer::GenConfig{};
  if (a.temp) gen.sampler.temperature = *a.temp;
  if (a.euler_steps) gen.sampler.num_steps = *a.euler_steps;
  if (a.max_steps) gen.max_new_steps = *a.max_steps;
  if (a.top_k) gen.top_k = *a.top_k;
  if (a.text_temp) gen.text_temperature = *a.text_temp;
  gen.seed = a.seed;
  const auto ck = train::load_checkpoint(a.ckpt);
  return ck.config.value("dtype", "f32") == "f64" ? run_generate<double>(a, ck, gen) : run_generate<float>(a, ck, gen);
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
  std::string ckpt, data;
  std::size_t per_kind = 200;
  double temp = 0.0;
  std::size_t euler_steps = 10;
  std::uint64_t seed = 0;
};

template <class T>
int run_eval(const EvalArgs& a, const train::Checkpoint& ck) {
  const auto m = load_model<T>(ck);
  const auto corpus = data::read_corpus<T>(a.data);
  if (corpus.config.frame_dim != m.config().frame_dim || corpus.config.text_vocab != m.config().text_vocab) {
    throw ConfigError("dev set does not match the checkpoint's model sizes");
  }
  train::TrainConfig tc;
  tc.seed = a.seed;
  flow::OTPathSpec spec;
  spec.frame_dim = m.config().frame_dim;
  if (ck.config.contains("path")) spec.sigma_min = ck.config["path"].value("sigma_min", spec.sigma_min);
  const auto dl = train::dev_loss(m, corpus.dev, tc, spec);

  infer::EvalOptions opt;
  opt.per_kind = a.per_kind;
  opt.gen.sampler = {a.euler_steps, a.temp};
  opt.gen.seed = a.seed;
  const auto lex = data::make_lexicon(corpus.config);
  const auto rep = infer::evaluate(m, corpus.dev, lex, corpus.stats, opt);
  std::cout << "dev_lm\t" << fmt_real(dl.lm) << "\n"
            << "dev_cfm\t" << fmt_real(dl.cfm) << "\n"
            << "dev_total\t" << fmt_real(dl.total) << "\n"
            << "text_prompts\t" << rep.text_prompts << "\n"
            << "text_exact_match\t" << fmt_real(rep.text_exact_match) << "\n"
            << "asr_prompts\t" << rep.asr_prompts << "\n"
            << "asr_token_accuracy\t" << fmt_real(rep.asr_token_accuracy) << "\n"
            << "tts_prompts\t" << rep.tts_prompts << "\n"
            << "tts_fwer\t" << fmt_real(rep.tts_fwer) << "\n"
            << "s2s_prompts\t" << rep.s2s_prompts << "\n"
            << "s2s_fwer\t" << fmt_real(rep.s2s_fwer) << "\n"
            << "truncated\t" << rep.truncated << "\n";
  return kExitOk;
}

int cmd_eval(const EvalArgs& a) {
  const auto ck = train::load_checkpoint(a.ckpt);
  return ck.config.value("dtype", "f32") == "f64" ? run_eval<double>(a, ck) : run_eval<float>(a, ck);
}

// ---------------------------------------------------------------------------
// plot

struct PlotArgs {
  std::string out, ckpt, prompt, task = "text_in_speech_out", target = "2,-1";
  bool oracle = false, toy = false;
  std::size_t samples = 256, trajectories = 16, euler_steps = 10, toy_steps = 3000;
  double temp = 1.0, sigma_min = 1e-2;
  std::uint64_t seed = 0;
};

class CsvWriter {
 public:
  CsvWriter(const fs::path& path, std::size_t dims) : out_(path) {
    if (!out_) throw IoError("cannot write " + path.string());
    out_ << "t";
    for (std::size_t c = 0; c < dims; ++c) out_ << ",dim" << c;
    out_ << "\n";
  }
  template <class T>
  void row(double t, std::span<const T> x) {
    out_ << fmt_real(t);
    for (T v : x) out_ << "," << fmt_real(static_cast<double>(v));
    out_ << "\n";
  }

 private:
  std::ofstream out_;
};

int cmd_plot(const PlotArgs& a) {
  if (static_cast<int>(a.oracle) + static_cast<int>(a.toy) + static_cast<int>(!a.ckpt.empty()) != 1) {
    throw ConfigError("choose exactly one of --oracle, --toy, --ckpt");
  }
  fs::create_directories(a.out);
  const flow::SamplerConfig sampler{a.euler_steps, a.temp};
  Rng rng{a.seed, 0x706c6fULL};

  if (!a.ckpt.empty()) {
    const auto ck = train::load_checkpoint(a.ckpt);
    const auto m = load_model<double>(ck);
    const auto task = seq::parse_task_kind(a.task);
    if (!seq::speech_out(task) || seq::speech_in(task)) throw ConfigError("--ckpt plots need a text_in_speech_out task");
    if (a.prompt.empty()) throw ConfigError("--ckpt plots need --prompt");
    seq::Utterance<double> prompt;
    prompt.text = parse_prompt_words(a.prompt, m.config().text_vocab);
    const std::size_t d = m.config().frame_dim;
    CsvWriter traj(fs::path(a.out) / "trajectories.csv", d), samples(fs::path(a.out) / "samples.csv", d);
    infer::GenOverrides<double> ov;
    ov.observe = [&](std::size_t, std::size_t, double t, const Array<double>& x) { traj.row<double>(t, x.data()); };
    infer::GenConfig gen;
    gen.sampler = sampler;
    gen.seed = a.seed;
    const auto res = infer::generate<double>(m, task, prompt, gen, {}, &ov);
    for (const auto& f : res.frames) samples.row<double>(1.0, f);
    std::cout << "frames\t" << res.frames.size() << "\n";
    return kExitOk;
  }

  const auto target = parse_reals(a.target);
  if (target.empty()) throw ConfigError("--target needs at least one coordinate");
  flow::OTPathSpec spec;
  spec.sigma_min = a.sigma_min;
  spec.frame_dim = target.size();
  spec.validate();
  const std::size_t d = target.size();
  std::function<Array<double>(const Array<double>&, double)> field;
  std::optional<toy::ToyFlow<double>> toy_model;
  if (a.oracle) {
    field = [&](const Array<double>& x, double t) {
      Array<double> v(x.shape());
      for (std::size_t r = 0; r < x.shape()[0]; ++r) {
        const std::span<const double> row(x.data().data() + r * d, d);
        const auto u = flow::conditional_field<double>(t, row, target, spec);
        std::copy(u.begin(), u.end(), v.data().begin() + static_cast<std::ptrdiff_t>(r * d));
      }
      return v;
    };
  } else {
    toy::ToyFlowConfig tcfg;
    tcfg.dim = d;
    tcfg.steps = a.toy_steps;
    tcfg.seed = a.seed;
    toy_model.emplace(tcfg, a.seed);
    toy::train_toy_flow<double>(*toy_model, [&](Rng& r) {
      flow::Frame<double> x(d);
      for (std::size_t c = 0; c < d; ++c) x[c] = target[c] + 0.5 * r.normal();
      return x;
    }, spec);
    field = [&](const Array<double>& x, double t) { return toy_model->field_at(x, t); };
  }

  CsvWriter traj(fs::path(a.out) / "trajectories.csv", d), samples(fs::path(a.out) / "samples.csv", d);
  const std::size_t n = std::max(a.samples, a.trajectories);
  std::vector<std::vector<std::pair<double, std::vector<double>>>> paths(std::min(a.trajectories, n));
  const auto x = flow::euler_sample_batch<double>(field, n, sampler, spec, rng, [&](std::size_t, double t, const Array<double>& xs) {
    for (std::size_t s = 0; s < paths.size(); ++s) paths[s].emplace_back(t, std::vector<double>(xs.data().begin() + static_cast<std::ptrdiff_t>(s * d), xs.data().begin() + static_cast<std::ptrdiff_t>((s + 1) * d)));
  });
  for (const auto& p : paths) {
    for (const auto& [t, v] : p) traj.row<double>(t, v);
  }
  for (std::size_t s = 0; s < n; ++s) samples.row<double>(1.0, std::span<const double>(x.data().data() + s * d, d));
  std::cout << "samples\t" << n << "\ntrajectories\t" << paths.size() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// gradcheck

struct GradcheckArgs {
  double step = 1e-5, tolerance = 1e-4;
  std::uint64_t seed = 0;
};

int cmd_gradcheck(const GradcheckArgs& a) {
  const auto results = ad::run_gradcheck_suite(a.seed, a.step);
  double worst = 0.0;
  for (const auto& r : results) {
    std::cout << r.name << '\t' << fmt_real(r.max_rel_error, 3) << '\t' << r.worst << "\n";
    worst = std::max(worst, r.max_rel_error);
  }
  std::cout << "max\t" << fmt_real(worst, 3) << "\n";
  return worst < a.tolerance ? kExitOk : kExitNumeric;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"contok: joint text / speech-state token and flow-matching frame model"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "generate a toy corpus");
  s->add_option("--config", synth.config, "run configuration (JSON)");
  s->add_option("--stage", synth.stage, "1: ASR+TTS, 2: all four tasks");
  s->add_option("--train", synth.train, "number of train records");
  s->add_option("--dev", synth.dev, "number of dev records");
  s->add_option("--seed", synth.seed, "corpus seed");
  s->add_option("--out", synth.out, "output directory")->required();

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "run one training stage");
  t->add_option("--config", tr.config, "run configuration (JSON)");
  t->add_option("--data", tr.data, "corpus directory")->required();
  t->add_option("--stage", tr.stage, "training stage (1 or 2)");
  t->add_option("--steps", tr.steps, "total steps of the stage");
  t->add_option("--batch", tr.batch, "batch size");
  t->add_option("--seed", tr.seed, "training seed");
  t->add_option("--init", tr.init, "checkpoint to initialize parameters from");
  t->add_option("--resume", tr.resume, "checkpoint to resume this stage from");
  t->add_option("--stop-after", tr.stop_after, "stop after this many completed steps");
  t->add_option("--run-dir", tr.run_dir, "run directory (default: $CONTOK_RUN_DIR or runs/, plus timestamp and seed)");
  t->add_flag("--f64", tr.f64, "train in 64-bit floating point");
  t->add_flag("--dry-run", tr.dry_run, "print the parameter count and step plan only");
  t->add_flag("--quiet", tr.quiet, "no progress output");

  GenerateArgs ge;
  auto* g = app.add_subcommand("generate", "stream a response for one prompt");
  g->add_option("--ckpt", ge.ckpt, "checkpoint")->required();
  g->add_option("--prompt", ge.prompt, "text prompt, e.g. \"w3 w1 w4\"");
  g->add_option("--frames", ge.frames, "speech prompt: one comma-separated raw frame per line");
  g->add_option("--task", ge.task, "task kind");
  g->add_option("--temp", ge.temp, "flow-matching noise temperature");
  g->add_option("--euler-steps", ge.euler_steps, "Euler steps per frame");
  g->add_option("--max-steps", ge.max_steps, "maximum response steps");
  g->add_option("--top-k", ge.top_k, "top-k text sampling (0: greedy)");
  g->add_option("--text-temp", ge.text_temp, "softmax temperature for top-k text sampling");
  g->add_option("--seed", ge.seed, "sampling seed");
  g->add_option("--out", ge.out, "write events to this file instead of stdout");
  g->add_flag("--binary", ge.binary, "frame payloads as little-endian f32 bytes");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "dev losses and generation metrics");
  e->add_option("--ckpt", ev.ckpt, "checkpoint")->required();
  e->add_option("--data", ev.data, "corpus directory")->required();
  e->add_option("--per-kind", ev.per_kind, "prompts per task kind");
  e->add_option("--temp", ev.temp, "flow-matching noise temperature");
  e->add_option("--euler-steps", ev.euler_steps, "Euler steps per frame");
  e->add_option("--seed", ev.seed, "seed");

  PlotArgs pl;
  auto* p = app.add_subcommand("plot", "export flow trajectories and samples as CSV");
  p->add_option("--out", pl.out, "output directory")->required();
  p->add_flag("--oracle", pl.oracle, "exact conditional field towards --target");
  p->add_flag("--toy", pl.toy, "train a toy flow on N(target, 0.25 I) first");
  p->add_option("--ckpt", pl.ckpt, "checkpoint (frames of one generated response)");
  p->add_option("--prompt", pl.prompt, "text prompt for --ckpt");
  p->add_option("--task", pl.task, "task kind for --ckpt");
  p->add_option("--target", pl.target, "comma-separated target point");
  p->add_option("--samples", pl.samples, "number of samples");
  p->add_option("--trajectories", pl.trajectories, "number of trajectories to export");
  p->add_option("--euler-steps", pl.euler_steps, "Euler steps");
  p->add_option("--toy-steps", pl.toy_steps, "toy training steps");
  p->add_option("--temp", pl.temp, "noise temperature");
  p->add_option("--sigma-min", pl.sigma_min, "terminal path standard deviation");
  p->add_option("--seed", pl.seed, "seed");

  GradcheckArgs gc;
  auto* c = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  c->add_option("--step", gc.step, "central difference step");
  c->add_option("--tol", gc.tolerance, "maximum admissible relative error");
  c->add_option("--seed", gc.seed, "seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::ParseError& ex) {
    std::cerr << ex.what() << "\n\n" << app.help();
    return kExitConfig;
  }

  try {
    if (*s) return cmd_synth(synth);
    if (*t) return cmd_train(tr);
    if (*g) return cmd_generate(ge);
    if (*e) return cmd_eval(ev);
    if (*p) return cmd_plot(pl);
    if (*c) return cmd_gradcheck(gc);
  } catch (const IoError& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return kExitIo;
  } catch (const NumericAbort& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return kExitNumeric;
  } catch (const ParameterHealthError& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return kExitNumeric;
  } catch (const DivergenceError& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return kExitDivergence;
  } catch (const Error& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return kExitConfig;
  } catch (const fs::filesystem_error& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return kExitIo;
  }
  return kExitConfig;
}
