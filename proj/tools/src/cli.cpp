// SPDX-License-Identifier: Apache-2.0
#include "stgd/cli.hpp"

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <functional>
#include <iostream>
#include <memory>
#include <sstream>
#include <system_error>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "stgd/bench.hpp"
#include "stgd/dataset.hpp"
#include "stgd/denoiser.hpp"
#include "stgd/diffusion.hpp"
#include "stgd/errors.hpp"
#include "stgd/grad_check.hpp"
#include "stgd/io.hpp"
#include "stgd/metrics.hpp"
#include "stgd/rng.hpp"
#include "stgd/training.hpp"

namespace stgd::cli {

namespace fs = std::filesystem;

namespace {

constexpr const char* kVersion = "0.1.0";

struct ArtifactMismatch : Error {
  using Error::Error;
};

// ------------------------------------------------------------------ settings

/// Flat key=value settings: defaults, then --config file, then --set, then
/// dedicated flags. Keys outside the defaults are rejected.
class Settings {
 public:
  explicit Settings(io::KeyValues defaults) : kv_(std::move(defaults)) {}

  void apply(const std::string& key, const std::string& value, const std::string& origin) {
    if (!kv_.has(key)) throw ConfigError("unknown config key '" + key + "' (" + origin + ")");
    kv_.set(key, value);
  }
  void apply_file(const std::string& path) {
    if (path.empty()) return;
    const auto parsed = io::KeyValues::parse(io::read_file(path));
    for (const auto& [k, v] : parsed.entries()) apply(k, v, path);
  }
  void apply_sets(const std::vector<std::string>& sets) {
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key=value, got '" + s + "'");
      apply(io::trim(s.substr(0, eq)), io::trim(s.substr(eq + 1)), "--set");
    }
  }

  const std::string& str(const std::string& key) const { return kv_.get(key); }
  std::size_t size(const std::string& key) const {
    const long long v = io::parse_int(kv_.get(key));
    if (v < 0) throw ConfigError(key + " must be non-negative");
    return static_cast<std::size_t>(v);
  }
  std::uint64_t u64(const std::string& key) const {
    const std::string& s = kv_.get(key);
    std::uint64_t v = 0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) throw ConfigError(key + ": expected an unsigned integer, got '" + s + "'");
    return v;
  }
  double real(const std::string& key) const { return io::parse_double(kv_.get(key)); }
  bool flag(const std::string& key) const {
    const auto& v = kv_.get(key);
    if (v == "1" || v == "true") return true;
    if (v == "0" || v == "false") return false;
    throw ConfigError(key + ": expected true/false, got '" + v + "'");
  }
  const io::KeyValues& values() const { return kv_; }

 private:
  io::KeyValues kv_;
};

struct Common {
  std::string config;
  std::vector<std::string> sets;
  std::string out = ".";
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "flat key=value config file");
  cmd->add_option("--set", c.sets, "override a config key (key=value), repeatable");
  cmd->add_option("--out", c.out, "output directory")->capture_default_str();
}

/// Dedicated flags bound to config keys; applied when given on the command line.
struct FlagBinding {
  CLI::Option* option;
  std::string key;
  std::shared_ptr<std::string> value;
};

class Flags {
 public:
  void bind(CLI::App* cmd, const std::string& flag, const std::string& key, const std::string& help) {
    auto value = std::make_shared<std::string>();
    bindings_.push_back({cmd->add_option(flag, *value, help), key, value});
  }
  void apply(Settings& s) const {
    for (const auto& b : bindings_)
      if (b.option->count() > 0) s.apply(b.key, *b.value, b.option->get_name());
  }

 private:
  std::vector<FlagBinding> bindings_;
};

Settings resolve(io::KeyValues defaults, const Common& c, const Flags& flags) {
  Settings s(std::move(defaults));
  s.apply_file(c.config);
  s.apply_sets(c.sets);
  flags.apply(s);
  return s;
}

void print_config(std::ostream& out, const Settings& s) {
  out << "effective config:\n";
  for (const auto& [k, v] : s.values().entries()) out << "  " << k << '=' << v << '\n';
}

fs::path prepare_out(const std::string& dir) {
  fs::path p(dir);
  fs::create_directories(p);
  return p;
}

// ------------------------------------------------------------------ manifest

class Manifest {
 public:
  explicit Manifest(std::string command) : command_(std::move(command)) {}
  void input(const std::string& what, std::string_view bytes) {
    lines_.push_back("# input " + what + " fnv1a=" + io::hex64(io::fnv1a(bytes)));
  }
  void output(const std::string& what, std::string_view bytes) {
    lines_.push_back("# output " + what + " fnv1a=" + io::hex64(io::fnv1a(bytes)));
  }
  void note(const std::string& text) { lines_.push_back("# " + text); }

  /// Comment lines followed by the effective config, so the manifest can be
  /// passed back through --config.
  std::string text(const Settings& s) const {
    std::string t = "# stgd " + std::string(kVersion) + " " + command_ + "\n";
    for (const auto& l : lines_) t += l + "\n";
    t += s.values().to_text();
    return t;
  }

 private:
  std::string command_;
  std::vector<std::string> lines_;
};

void write_output(const fs::path& dir, const std::string& name, const std::string& bytes, Manifest* m,
                  std::ostream& out) {
  io::write_file_atomic(dir / name, bytes);
  if (m) m->output(name, bytes);
  out << "wrote " << (dir / name).string() << '\n';
}

// ------------------------------------------------------------------ gen-data

io::KeyValues gen_defaults() {
  io::KeyValues kv;
  kv.set("seed", "0");
  kv.set("preset", "short");
  kv.set("style", "circle");
  kv.set("dancers", "0");
  kv.set("frames", "0");
  kv.set("tempo", io::format_double(data::kDefaultTempo));
  kv.set("channels", std::to_string(data::kDefaultChannels));
  return kv;
}

int cmd_gen_data(const Settings& s, const Common& c, std::ostream& out) {
  const auto preset = data::preset(s.str("preset"));
  data::SynthOptions o;
  o.style = data::parse_style(s.str("style"));
  o.seed = s.u64("seed");
  o.n_dancers = s.size("dancers") ? s.size("dancers") : preset.n_dancers;
  o.length = s.size("frames") ? s.size("frames") : preset.length;
  o.tempo = s.real("tempo");
  o.channels = s.size("channels");
  const auto sample = data::gen_synthetic(o);

  const fs::path dir = prepare_out(c.out);
  Manifest m("gen-data");
  write_output(dir, "motion.stgd", data::encode_motion(sample), &m, out);
  io::write_file_atomic(dir / "manifest.txt", m.text(s));
  out << "shape " << sample.n_dancers() << " x " << sample.length() << " x " << sample.channels()
      << ", style " << sample.style << ", min clearance "
      << io::format_double(data::min_pairwise_distance(sample.motion, sample.position_channels)) << '\n';
  return kOk;
}

// ------------------------------------------------------------------ train

io::KeyValues train_defaults() {
  const train::TrainConfig t;
  io::KeyValues kv;
  kv.set("seed", "0");
  kv.set("epochs", std::to_string(t.epochs));
  kv.set("lr", io::format_double(t.lr));
  kv.set("schedule", "step");
  kv.set("diffusion_steps", std::to_string(t.diffusion_steps));
  kv.set("lambda_pos", io::format_double(t.lambda_pos));
  kv.set("lambda_vel", io::format_double(t.lambda_vel));
  kv.set("lambda_contact", io::format_double(t.lambda_contact));
  kv.set("clip_norm", io::format_double(t.clip_norm));
  kv.set("checkpoint_every", "0");
  kv.set("dataset_count", "8");
  kv.set("dataset_dancers", "3");
  kv.set("dataset_frames", "120");
  const io::KeyValues model_kv = model::DenoiserConfig{}.to_key_values();
  for (const auto& [k, v] : model_kv.entries()) kv.set("model." + k, v);
  return kv;
}

model::DenoiserConfig model_config_from(const Settings& s) {
  io::KeyValues m;
  for (const auto& [k, v] : s.values().entries())
    if (k.rfind("model.", 0) == 0) m.set(k.substr(6), v);
  return model::DenoiserConfig::from_key_values(m);
}

train::TrainConfig train_config_from(const Settings& s, const fs::path& ckpt_path) {
  train::TrainConfig t;
  t.seed = s.u64("seed");
  t.epochs = s.size("epochs");
  t.lr = s.real("lr");
  const auto& sched = s.str("schedule");
  if (sched == "step") t.schedule = train::LrSchedule::kStepDecay;
  else if (sched == "constant") t.schedule = train::LrSchedule::kConstant;
  else throw ConfigError("schedule must be 'step' or 'constant'");
  t.diffusion_steps = s.size("diffusion_steps");
  t.lambda_pos = s.real("lambda_pos");
  t.lambda_vel = s.real("lambda_vel");
  t.lambda_contact = s.real("lambda_contact");
  t.clip_norm = s.real("clip_norm");
  t.checkpoint_every = s.size("checkpoint_every");
  t.checkpoint_path = ckpt_path;
  t.validate();
  return t;
}

double mean_total(const std::vector<diffusion::LossParts>& curve, std::size_t begin, std::size_t end) {
  double sum = 0.0;
  for (std::size_t e = begin; e < end; ++e) sum += curve[e].total;
  return sum / static_cast<double>(end - begin);
}

int cmd_train(const Settings& s, const Common& c, const std::vector<std::string>& data_files,
              const std::string& resume_path, std::ostream& out) {
  const fs::path dir = prepare_out(c.out);
  const auto model_cfg = model_config_from(s);
  const auto cfg = train_config_from(s, dir / "model.ckpt");
  Manifest m("train");

  data::SyntheticDataset ds;
  if (data_files.empty()) {
    ds = data::make_dataset(s.size("dataset_dancers"), s.size("dataset_frames"), s.size("dataset_count"),
                            cfg.seed);
    std::string all;
    for (const auto& smp : ds.samples) all += data::encode_motion(smp);
    m.input("synthetic-dataset", all);
  } else {
    for (const auto& f : data_files) {
      const std::string bytes = io::read_file(f);
      ds.samples.push_back(data::decode_motion(bytes));
      m.input(f, bytes);
    }
    data::assign_pooled_stats(ds);
  }

  std::unique_ptr<train::TrainResult> resume;
  if (!resume_path.empty()) {
    const std::string bytes = io::read_file(resume_path);
    m.input(resume_path, bytes);
    try {
      resume = std::make_unique<train::TrainResult>(train::from_checkpoint(model::decode_checkpoint(bytes)));
    } catch (const FormatError& e) {
      throw ArtifactMismatch(std::string("resume checkpoint unreadable: ") + e.what());
    } catch (const ConfigError& e) {
      throw ArtifactMismatch(std::string("resume checkpoint: ") + e.what());
    }
    if (!(resume->model_config == model_cfg)) {
      throw ArtifactMismatch("resume checkpoint model config differs from the effective config");
    }
    out << "resuming at step " << resume->optimizer.step << '\n';
  }

  print_config(out, s);
  const auto result = train::train_toy(ds, cfg, model_cfg, resume.get(),
                                       [&](std::size_t e, const diffusion::LossParts& l) {
                                         if (e % 10 == 0 || e + 1 == cfg.epochs)
                                           out << "epoch " << e << " loss " << io::format_double(l.total) << '\n';
                                       });
  write_output(dir, "model.ckpt", model::encode_checkpoint(train::to_checkpoint(result, cfg)), &m, out);
  write_output(dir, "loss.csv", train::loss_curve_csv(result.curve), &m, out);
  io::write_file_atomic(dir / "manifest.txt", m.text(s));

  const auto& curve = result.curve;
  if (!curve.empty()) {
    const std::size_t w = std::min<std::size_t>(10, curve.size());
    const double first = mean_total(curve, 0, w);
    const double last = mean_total(curve, curve.size() - w, curve.size());
    out << "summary: steps " << result.optimizer.step << ", initial loss " << io::format_double(first)
        << ", final loss " << io::format_double(last) << ", final/initial ratio "
        << io::format_double(last / first) << '\n';
  }
  return kOk;
}

// ------------------------------------------------------------------ generate

io::KeyValues generate_defaults() {
  io::KeyValues kv;
  kv.set("seed", "0");
  kv.set("checkpoint", "model.ckpt");
  kv.set("frames", "120");
  kv.set("dancers", "3");
  kv.set("steps", "0");
  kv.set("style", "circle");
  kv.set("tempo", io::format_double(data::kDefaultTempo));
  kv.set("samples", "1");
  kv.set("metrics", "false");
  kv.set("delta", io::format_double(metrics::kDefaultDelta));
  return kv;
}

int cmd_generate(const Settings& s, const Common& c, std::ostream& out) {
  const fs::path dir = prepare_out(c.out);
  Manifest m("generate");
  fs::path ckpt_path = s.str("checkpoint");
  if (ckpt_path.is_relative() && !fs::exists(ckpt_path) && fs::exists(dir / ckpt_path)) ckpt_path = dir / ckpt_path;
  const std::string bytes = io::read_file(ckpt_path);
  m.input(ckpt_path.string(), bytes);

  train::TrainResult trained;
  std::size_t trained_steps = 0;
  try {
    const auto ckpt = model::decode_checkpoint(bytes);
    trained = train::from_checkpoint(ckpt);
    trained_steps = ckpt.meta.has("diffusion_steps")
                        ? static_cast<std::size_t>(io::parse_int(ckpt.meta.get("diffusion_steps")))
                        : 50;
  } catch (const FormatError& e) {
    throw ArtifactMismatch(std::string("checkpoint unreadable: ") + e.what());
  } catch (const ConfigError& e) {
    throw ArtifactMismatch(std::string("checkpoint: ") + e.what());
  }
  const auto& cfg = trained.model_config;
  const std::size_t dancers = s.size("dancers"), frames = s.size("frames");
  if (dancers == 0 || frames < 2) throw ConfigError("generate: need dancers >= 1 and frames >= 2");
  if (dancers > cfg.max_dancers) {
    throw ArtifactMismatch("generate: checkpoint supports at most " + std::to_string(cfg.max_dancers) +
                           " dancers, requested " + std::to_string(dancers));
  }
  if (cfg.cond_dim != data::kConditionChannels) {
    throw ArtifactMismatch("generate: checkpoint expects " + std::to_string(cfg.cond_dim) +
                           " music channels, synthetic music provides " +
                           std::to_string(data::kConditionChannels));
  }
  const std::size_t steps = s.size("steps") ? s.size("steps") : trained_steps;
  const auto schedule = train::default_schedule(steps);
  const std::size_t count = std::max<std::size_t>(1, s.size("samples"));
  const std::uint64_t seed = s.u64("seed");

  data::SynthOptions music_opts;
  music_opts.n_dancers = dancers;
  music_opts.length = frames;
  music_opts.style = data::parse_style(s.str("style"));
  music_opts.tempo = s.real("tempo");
  music_opts.seed = seed;
  music_opts.channels = cfg.d_in;
  const auto conditioning = data::gen_synthetic(music_opts);

  print_config(out, s);
  out << "sampling with T=" << steps << " (checkpoint trained with T=" << trained_steps << ")\n";
  std::vector<Tensor> motions;
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint64_t sample_seed = mix_seed(seed, 0x6E0 + i);
    const Tensor x = diffusion::generate(conditioning.music, dancers, frames, trained.state, cfg, schedule,
                                         sample_seed);
    motions.push_back(data::denormalize(x, trained.norm_mean, trained.norm_std));
  }
  m.note("sampling seed " + std::to_string(seed));

  data::MotionSample result = conditioning;
  result.motion = motions.front();
  result.mean = trained.norm_mean;
  result.std = trained.norm_std;
  result.style = "generated-" + conditioning.style;
  write_output(dir, "motion.stgd", data::encode_motion(result), &m, out);

  if (s.flag("metrics")) {
    const auto report = metrics::evaluate(motions, s.real("delta"), cfg.position_channels);
    write_output(dir, "metrics.json", report.to_json() + "\n", &m, out);
    out << report.to_json() << '\n';
  }
  io::write_file_atomic(dir / "manifest.txt", m.text(s));
  out << "generated " << count << " sample(s) of shape " << dancers << " x " << frames << " x " << cfg.d_in
      << '\n';
  return kOk;
}

// ------------------------------------------------------------------ metrics

io::KeyValues metrics_defaults() {
  io::KeyValues kv;
  kv.set("delta", io::format_double(metrics::kDefaultDelta));
  return kv;
}

int cmd_metrics(const Settings& s, const Common& c, const std::vector<std::string>& inputs, std::ostream& out) {
  if (inputs.empty()) throw ConfigError("metrics: at least one --input motion file is required");
  const fs::path dir = prepare_out(c.out);
  Manifest m("metrics");
  std::vector<Tensor> motions;
  std::pair<std::size_t, std::size_t> channels{0, 1};
  for (const auto& f : inputs) {
    const std::string bytes = io::read_file(f);
    m.input(f, bytes);
    const auto sample = data::decode_motion(bytes);
    channels = sample.position_channels;
    motions.push_back(sample.motion);
  }
  print_config(out, s);
  const auto report = metrics::evaluate(motions, s.real("delta"), channels);
  write_output(dir, "metrics.json", report.to_json() + "\n", &m, out);
  io::write_file_atomic(dir / "manifest.txt", m.text(s));
  out << report.to_json() << '\n';
  return kOk;
}

// ------------------------------------------------------------------ validate

io::KeyValues validate_defaults() {
  io::KeyValues kv;
  kv.set("seed", "0");
  kv.set("perturb_block", "");
  return kv;
}

int cmd_validate(const Settings& s, std::ostream& out, std::ostream& err) {
  print_config(out, s);
  ValidateOptions o;
  o.seed = s.u64("seed");
  o.perturb_block = s.str("perturb_block");
  const auto lines = run_validation(o);
  nlohmann::ordered_json summary;
  std::vector<std::string> failed, suites;
  for (const auto& l : lines) {
    out << (l.passed ? "PASS " : "FAIL ") << l.name << (l.detail.empty() ? "" : "  " + l.detail) << '\n';
    if (!l.passed) failed.push_back(l.name);
    const std::string suite = l.name.substr(0, l.name.find('/'));
    if (std::find(suites.begin(), suites.end(), suite) == suites.end()) suites.push_back(suite);
  }
  std::vector<std::string> blocks;
  for (const auto& [name, check] : gradcheck::registry()) blocks.push_back(name);
  summary["passed"] = failed.empty();
  summary["checks"] = lines.size();
  summary["suites"] = suites;
  summary["gradient_blocks"] = blocks;
  summary["failed"] = failed;
  out << summary.dump() << '\n';
  if (!failed.empty()) {
    err << "validation failed: " << failed.front() << '\n';
    return kValidationFailed;
  }
  return kOk;
}

// ------------------------------------------------------------------ bench

io::KeyValues bench_defaults() {
  io::KeyValues kv;
  kv.set("seed", "0");
  kv.set("kernels", "full,ldt,diff,gcn");
  kv.set("grid", "");
  kv.set("gcn_grid", "4,8,16,32,64");
  kv.set("reps", "5");
  kv.set("d", "64");
  kv.set("gcn_d", "32");
  kv.set("window", "64");
  kv.set("length", "64");
  return kv;
}

std::vector<std::size_t> parse_grid(const std::string& text) {
  std::vector<std::size_t> out;
  for (const auto& part : io::split(text, ',')) {
    const long long v = io::parse_int(io::trim(part));
    if (v <= 0) throw ConfigError("grid values must be positive");
    out.push_back(static_cast<std::size_t>(v));
  }
  return out;
}

int cmd_bench(const Settings& s, const Common& c, std::ostream& out, std::ostream& err) {
  const fs::path dir = prepare_out(c.out);
  Manifest m("bench");
  bench::Options o;
  o.seed = s.u64("seed");
  o.repetitions = s.size("reps");
  std::vector<std::string> attn_kernels;
  bool gcn = false;
  for (const auto& k : io::split(s.str("kernels"), ',')) {
    if (k == "gcn") gcn = true;
    else if (k == "full" || k == "ldt" || k == "diff") attn_kernels.push_back(k);
    else throw ConfigError("unknown kernel '" + k + "' (valid: full,ldt,diff,gcn)");
  }
  print_config(out, s);
  const std::string grid_text = s.str("grid");
  std::vector<bench::BenchResult> results;
  if (!attn_kernels.empty()) {
    const auto grid = grid_text.empty() ? std::vector<std::size_t>{512, 1024, 2048, 4096} : parse_grid(grid_text);
    results = bench::bench_attention(grid, s.size("d"), s.size("window"), o, attn_kernels);
  }
  if (gcn) {
    const auto grid = parse_grid(attn_kernels.empty() && !grid_text.empty() ? grid_text : s.str("gcn_grid"));
    results.push_back(bench::bench_gcn(grid, s.size("length"), s.size("gcn_d"), o));
  }
  for (const auto& r : results) {
    for (const auto& w : r.warnings) err << "warning: " << w << '\n';
    out << r.kernel << ": slope " << io::format_double(r.fit.slope) << ", R^2 " << io::format_double(r.fit.r2)
        << (r.stable() ? "" : " (unstable fit)") << '\n';
  }
  const std::string det = bench::deterministic_summary(results);
  io::write_file_atomic(dir / "bench.csv", bench::to_csv(results));
  out << "wrote " << (dir / "bench.csv").string() << '\n';
  m.output("bench.csv[deterministic columns]", det);
  io::write_file_atomic(dir / "manifest.txt", m.text(s));
  return kOk;
}

// ------------------------------------------------------------------ dispatch

int guarded(const std::function<int()>& body, std::ostream& err) {
  try {
    return body();
  } catch (const ArtifactMismatch& e) {
    err << "error: " << e.what() << '\n';
    return kArtifactMismatch;
  } catch (const DivergenceError& e) {
    err << "error: " << e.what() << " (step " << e.step() << ")\n";
    return kDivergence;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const FormatError& e) {
    err << "error: " << e.what() << " (offset " << e.offset() << ")\n";
    return kIo;
  } catch (const std::system_error& e) {
    err << "error: " << e.what() << '\n';
    return kIo;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kValidationFailed;
  }
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Spatial-temporal group dance diffusion toolkit", "stgd"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  Common c_gen, c_train, c_generate, c_metrics, c_validate, c_bench;
  Flags f_gen, f_train, f_generate, f_metrics, f_validate, f_bench;

  auto* gen = app.add_subcommand("gen-data", "synthesize a motion file");
  add_common(gen, c_gen);
  f_gen.bind(gen, "--seed", "seed", "random seed");
  f_gen.bind(gen, "--preset", "preset", "short (3x120) or long (3x400)");
  f_gen.bind(gen, "--style", "style", "circle, line, figure8 or crossover");
  f_gen.bind(gen, "--dancers", "dancers", "override the preset dancer count");
  f_gen.bind(gen, "--frames", "frames", "override the preset frame count");
  f_gen.bind(gen, "--tempo", "tempo", "beats per frame");

  std::vector<std::string> train_data;
  std::string resume;
  auto* tr = app.add_subcommand("train", "train the denoiser on synthetic data");
  add_common(tr, c_train);
  tr->add_option("--data", train_data, "motion files (default: built-in synthetic set)");
  tr->add_option("--resume", resume, "checkpoint to resume from");
  f_train.bind(tr, "--seed", "seed", "random seed");
  f_train.bind(tr, "--epochs", "epochs", "total epochs");
  f_train.bind(tr, "--lr", "lr", "learning rate");
  f_train.bind(tr, "--steps", "diffusion_steps", "diffusion steps T");

  auto* gn = app.add_subcommand("generate", "sample motion from a checkpoint");
  add_common(gn, c_generate);
  f_generate.bind(gn, "--checkpoint", "checkpoint", "checkpoint path");
  f_generate.bind(gn, "--seed", "seed", "sampling seed");
  f_generate.bind(gn, "--frames", "frames", "frames to generate");
  f_generate.bind(gn, "--dancers", "dancers", "dancers to generate");
  f_generate.bind(gn, "--steps", "steps", "diffusion steps (0: as trained)");
  f_generate.bind(gn, "--style", "style", "music style for conditioning");
  f_generate.bind(gn, "--samples", "samples", "number of samples");
  auto* with_metrics = gn->add_flag("--metrics", "also write metrics.json");

  std::vector<std::string> metric_inputs;
  auto* me = app.add_subcommand("metrics", "group metric proxies for motion files");
  add_common(me, c_metrics);
  me->add_option("--input", metric_inputs, "motion files")->required();
  f_metrics.bind(me, "--delta", "delta", "intersection distance threshold");

  auto* va = app.add_subcommand("validate", "run the invariant suite");
  add_common(va, c_validate);
  f_validate.bind(va, "--seed", "seed", "seed for randomized checks");
  f_validate.bind(va, "--perturb-block", "perturb_block", "corrupt one block's gradient (self-test)");

  auto* be = app.add_subcommand("bench", "kernel scaling benchmarks");
  add_common(be, c_bench);
  f_bench.bind(be, "--seed", "seed", "input seed");
  f_bench.bind(be, "--kernel", "kernels", "comma list of full,ldt,diff,gcn");
  f_bench.bind(be, "--grid", "grid", "comma list of sizes");
  f_bench.bind(be, "--reps", "reps", "timed repetitions per point (>= 5)");

  std::vector<std::string> argv_store{"stgd"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_store) argv.push_back(a.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  return guarded(
      [&]() -> int {
        if (gen->parsed()) return cmd_gen_data(resolve(gen_defaults(), c_gen, f_gen), c_gen, out);
        if (tr->parsed()) {
          auto s = resolve(train_defaults(), c_train, f_train);
          return cmd_train(s, c_train, train_data, resume, out);
        }
        if (gn->parsed()) {
          auto s = resolve(generate_defaults(), c_generate, f_generate);
          if (with_metrics->count() > 0) s.apply("metrics", "true", "--metrics");
          return cmd_generate(s, c_generate, out);
        }
        if (me->parsed()) return cmd_metrics(resolve(metrics_defaults(), c_metrics, f_metrics), c_metrics, metric_inputs, out);
        if (va->parsed()) return cmd_validate(resolve(validate_defaults(), c_validate, f_validate), out, err);
        if (be->parsed()) return cmd_bench(resolve(bench_defaults(), c_bench, f_bench), c_bench, out, err);
        return kUsage;
      },
      err);
}

}  // namespace stgd::cli
