// revcd: train, sample and evaluate the reversed conditional diffusion model.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "revcd/binary_io.hpp"
#include "revcd/checkpoint.hpp"
#include "revcd/config.hpp"
#include "revcd/error.hpp"
#include "revcd/pipeline.hpp"
#include "revcd/sampling.hpp"
#include "revcd/training.hpp"
#include "revcd/verify.hpp"
#include "revcd/zsl_eval.hpp"

namespace fs = std::filesystem;
using namespace revcd;

namespace {

enum Exit { kOk = 0, kFailure = 1, kUsage = 2, kIo = 3 };

// Values given on the command line; unset options leave the file/defaults alone.
struct Overrides {
  std::string config_file;
  std::string dataset;
  std::string synthetic;
  std::optional<std::uint64_t> seed;
  bool deterministic = false;
  std::string output_dir;
  std::optional<int> T;
  std::optional<int> epochs;
  std::optional<std::size_t> batch_size;
  std::optional<double> lr;
  std::optional<double> lambda3;
  std::optional<double> p_conditional;
  std::optional<std::string> w_mode;
  std::optional<double> g;
  std::optional<std::string> noise_mode;
  std::optional<int> steps;
  std::optional<int> n_draws;
  std::optional<std::int64_t> max_steps;
  std::optional<std::int64_t> checkpoint_interval;
  bool dump_config = false;
};

void add_common(CLI::App* cmd, Overrides& o, bool data, bool training, bool guidance, bool lambda3 = true) {
  cmd->add_option("--config", o.config_file, "JSON run configuration");
  cmd->add_option("--seed", o.seed, "Run seed");
  cmd->add_flag("--deterministic", o.deterministic, "Single-threaded, bit-reproducible execution");
  cmd->add_option("--output-dir", o.output_dir, "Directory for outputs");
  cmd->add_flag("--dump-config", o.dump_config, "Print the effective configuration as JSON and exit");
  cmd->add_option("--T", o.T, "Diffusion steps");
  if (data) {
    cmd->add_option("--dataset", o.dataset, "RZD v1 dataset directory");
    cmd->add_option("--synthetic", o.synthetic, "Use the built-in synthetic dataset and its profile")
        ->check(CLI::IsMember({"default"}));
  }
  if (training) {
    cmd->add_option("--epochs", o.epochs, "Training epochs");
    cmd->add_option("--batch-size", o.batch_size, "Batch size");
    cmd->add_option("--lr", o.lr, "Adam learning rate");
    if (lambda3) cmd->add_option("--lambda3", o.lambda3, "Classification loss weight");
    cmd->add_option("--p-conditional", o.p_conditional, "Condition dropout rate");
    cmd->add_option("--w-mode", o.w_mode, "Loss weights: unit or analytic");
    cmd->add_option("--max-steps", o.max_steps, "Stop after this many optimizer steps");
    cmd->add_option("--checkpoint-interval", o.checkpoint_interval, "Save a checkpoint every N steps");
  }
  if (guidance) {
    cmd->add_option("--guidance,--g", o.g, "Guidance strength g");
    cmd->add_option("--noise-mode", o.noise_mode, "posterior_sqrt, beta_sqrt or beta_literal");
    cmd->add_option("--steps", o.steps, "Reverse steps (0 = T)");
    cmd->add_option("--n-draws", o.n_draws, "Samples averaged per image");
  }
}

// Precedence: flag > file > defaults. --synthetic selects the synthetic
// profile as the default layer.
RunConfig effective_config(const Overrides& o) {
  RunConfig c = o.synthetic.empty() ? RunConfig{} : RunConfig::synthetic_defaults();
  if (!o.synthetic.empty()) c.dataset = "synthetic";
  if (!o.config_file.empty()) c = load_run_config(o.config_file, c);
  if (!o.synthetic.empty()) c.dataset = "synthetic";
  if (!o.dataset.empty()) c.dataset = o.dataset;
  if (o.seed) c.seed = *o.seed;
  if (o.deterministic) c.deterministic = true;
  if (!o.output_dir.empty()) c.output_dir = o.output_dir;
  if (o.T) c.schedule.steps = *o.T;
  if (o.epochs) c.train.epochs = *o.epochs;
  if (o.batch_size) c.train.batch_size = *o.batch_size;
  if (o.lr) c.train.lr = *o.lr;
  if (o.lambda3) c.loss.lambda3 = *o.lambda3;
  if (o.p_conditional) c.loss.p_conditional = *o.p_conditional;
  if (o.w_mode) c.loss.w_mode = weight_mode_from_string(*o.w_mode);
  if (o.max_steps) c.train.max_steps = *o.max_steps;
  if (o.checkpoint_interval) c.train.checkpoint_interval = *o.checkpoint_interval;
  if (o.g) c.guidance.g = *o.g;
  if (o.noise_mode) c.guidance.noise_mode = noise_mode_from_string(*o.noise_mode);
  if (o.steps) c.guidance.steps = *o.steps;
  if (o.n_draws) c.n_draws = *o.n_draws;
  if (const char* env = std::getenv("REVCD_THREADS")) {
    int threads = 0;
    try {
      threads = std::stoi(env);
    } catch (const std::exception&) {
      throw ConfigError(std::string("REVCD_THREADS must be a positive integer, got \"") + env + "\"");
    }
    if (threads < 1) throw ConfigError("REVCD_THREADS must be >= 1");
    if (threads == 1) c.deterministic = true;
  }
  c.validate();
  return c;
}

bool dump_if_requested(const Overrides& o, const RunConfig& c) {
  if (!o.dump_config) return false;
  std::cout << to_json(c).dump(2) << '\n';
  return true;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir);
}

std::string default_checkpoint(const RunConfig& c) { return (fs::path(c.output_dir) / "model.ckpt").string(); }

Checkpoint read_checkpoint(const std::string& path) {
  if (!fs::exists(path)) throw IoError("checkpoint not found: " + path);
  return load_checkpoint(path);
}

void check_compatible(const Denoiser<float>& model, const GzslDataset& ds) {
  const auto& m = model.config();
  if (m.d_s != ds.d_s() || m.d_x != ds.d_x())
    throw ShapeError("checkpoint dims (d_s=" + std::to_string(m.d_s) + ", d_x=" + std::to_string(m.d_x) +
                     ") do not match the dataset (d_s=" + std::to_string(ds.d_s()) +
                     ", d_x=" + std::to_string(ds.d_x()) + ")");
}

int cmd_train(const Overrides& o, const std::string& resume) {
  const RunConfig c = effective_config(o);
  if (dump_if_requested(o, c)) return kOk;
  const auto ds = resolve_dataset(c);
  ensure_dir(c.output_dir);
  TrainConfig tc = c.effective_train();
  if (tc.checkpoint_interval > 0) tc.checkpoint_dir = (fs::path(c.output_dir) / "checkpoints").string();
  Trainer trainer(model_config_for(c, ds), tc);
  if (!resume.empty()) trainer.restore(read_checkpoint(resume));

  TrainHooks hooks;
  hooks.progress = &std::cout;
  const auto history = trainer.train(ds, hooks);

  std::ostringstream csv;
  csv << "step,rec,noise,cls,total\n";
  csv.precision(9);
  for (const auto& r : history)
    csv << r.step << ',' << r.rec << ',' << r.noise << ',' << r.cls << ',' << r.total << '\n';
  io::write_file_atomic(fs::path(c.output_dir) / "loss_history.csv", csv.str());

  auto ckpt = trainer.checkpoint();
  ckpt.config["run"] = to_json(c);
  save_checkpoint(default_checkpoint(c), ckpt);
  std::cout << "wrote " << default_checkpoint(c) << " after " << trainer.step() << " steps\n";
  return kOk;
}

int cmd_eval(const Overrides& o, const std::string& checkpoint, const std::string& mode_name, bool oracle) {
  const RunConfig c = effective_config(o);
  if (dump_if_requested(o, c)) return kOk;
  const auto mode = search_mode_from_string(mode_name);
  const auto ds = resolve_dataset(c);
  ensure_dir(c.output_dir);

  GzslMetrics metrics;
  if (oracle) {
    metrics = evaluate(ds, oracle_sampler(ds), mode);
  } else {
    const auto ckpt = read_checkpoint(checkpoint.empty() ? default_checkpoint(c) : checkpoint);
    const auto model = model_from_checkpoint(ckpt);
    check_compatible(model, ds);
    const auto schedule = schedule_from_checkpoint(ckpt);
    metrics = evaluate(ds, diffusion_sampler(model, schedule, guidance_for(c), c.n_draws), mode);
  }
  io::write_file_atomic(fs::path(c.output_dir) / "metrics.json", to_json(metrics).dump(2) + "\n");
  print_metrics(std::cout, metrics);
  return kOk;
}

std::vector<std::uint32_t> split_rows(const GzslDataset& ds, const std::string& split) {
  if (split == "test_seen") return ds.test_seen;
  if (split == "test_unseen") return ds.test_unseen;
  if (split == "test") {
    auto rows = ds.test_seen;
    rows.insert(rows.end(), ds.test_unseen.begin(), ds.test_unseen.end());
    return rows;
  }
  throw ConfigError("unknown split \"" + split + "\" (expected test_seen, test_unseen or test)");
}

int cmd_sample(const Overrides& o, const std::string& checkpoint, const std::string& features_file,
               const std::string& split, bool log_trajectory, bool no_guidance) {
  const RunConfig c = effective_config(o);
  if (dump_if_requested(o, c)) return kOk;
  const auto ckpt = read_checkpoint(checkpoint.empty() ? default_checkpoint(c) : checkpoint);
  const auto model = model_from_checkpoint(ckpt);
  const auto schedule = schedule_from_checkpoint(ckpt);
  const std::size_t d_x = model.config().d_x;

  Tensor<float> x;
  std::optional<Tensor<float>> truth;
  if (!features_file.empty()) {
    if (log_trajectory) throw ConfigError("--log-trajectory needs labelled rows: use --dataset/--synthetic with --split");
    if (!fs::exists(features_file)) throw IoError("features file not found: " + features_file);
    auto values = io::decode_f32(io::read_file(features_file), features_file);
    if (values.empty() || values.size() % d_x != 0)
      throw ShapeError(features_file + ": " + std::to_string(values.size()) + " floats is not a multiple of d_x=" +
                       std::to_string(d_x));
    const std::size_t n = values.size() / d_x;
    x = Tensor<float>({n, d_x}, std::move(values));
  } else {
    const auto ds = resolve_dataset(c);
    check_compatible(model, ds);
    const auto rows = split_rows(ds, split);
    if (rows.empty()) throw ConfigError("split " + split + " is empty");
    std::vector<std::size_t> idx(rows.begin(), rows.end());
    x = ds.features.rows_subset(idx);
    Tensor<float> t({rows.size(), ds.d_s()});
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto a = ds.attributes.row(ds.labels[rows[i]]);
      std::copy(a.begin(), a.end(), t.row(i).begin());
    }
    truth = std::move(t);
  }

  GuidanceConfig g = guidance_for(c);
  g.conditional_only = no_guidance;
  const auto result = sample(model, x, schedule, g, log_trajectory);
  ensure_dir(c.output_dir);
  const auto out = fs::path(c.output_dir) / "semantics.bin";
  io::write_file_atomic(out, io::encode_f32(result.semantics.data()));
  nlohmann::json summary = {{"file", out.filename().string()},
                            {"n", result.semantics.rows()},
                            {"d_s", result.semantics.cols()},
                            {"g", g.g},
                            {"guidance", !no_guidance},
                            {"noise_mode", to_string(g.noise_mode)},
                            {"steps", g.steps == 0 ? schedule.steps() : g.steps},
                            {"seed", g.seed}};
  if (log_trajectory) {
    const auto dist = trajectory_distances(result.trajectory, *truth);
    // One row per reverse step: the state it produced, t = steps-1 .. 0.
    std::ostringstream csv;
    csv << "t,mean_cos_dist\n";
    csv.precision(9);
    for (std::size_t k = 1; k < dist.size(); ++k) csv << result.trajectory_t[k] << ',' << dist[k] << '\n';
    io::write_file_atomic(fs::path(c.output_dir) / "trajectory.csv", csv.str());
    summary["trajectory"] = {{"file", "trajectory.csv"}, {"start", dist.front()}, {"end", dist.back()}};
  }
  io::write_file_atomic(fs::path(c.output_dir) / "sample_summary.json", summary.dump(2) + "\n");
  std::cout << "wrote " << result.semantics.rows() << " rows to " << out.string() << '\n';
  return kOk;
}

std::vector<double> parse_grid(const std::string& text) {
  std::vector<double> grid;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      grid.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("bad --lambda3 value \"" + item + "\"");
    }
  }
  if (grid.empty()) throw ConfigError("--lambda3 grid is empty");
  return grid;
}

int cmd_sweep(const Overrides& o, const std::string& grid_text) {
  const RunConfig c = effective_config(o);
  if (dump_if_requested(o, c)) return kOk;
  const auto grid = parse_grid(grid_text);
  const auto ds = resolve_dataset(c);
  ensure_dir(c.output_dir);
  const auto rows = lambda3_sweep(ds, c, grid);
  std::ostringstream csv;
  csv << "lambda3,S,U,H,zsl_unseen\n";
  for (const auto& r : rows)
    csv << r.lambda3 << ',' << r.metrics.S << ',' << r.metrics.U << ',' << r.metrics.H << ','
        << r.metrics.zsl_unseen << '\n';
  io::write_file_atomic(fs::path(c.output_dir) / "sweep.csv", csv.str());
  std::cout << csv.str();
  return kOk;
}

int cmd_verify(const std::vector<std::string>& negate) {
  std::set<std::string> neg;
  for (const auto& n : negate) {
    if (!kVerifySuites.count(n)) throw ConfigError("unknown suite \"" + n + "\" for --negate");
    neg.insert(n);
  }
  bool ok = true;
  for (const auto& r : run_verify_suites(neg)) {
    std::cout << (r.passed ? "PASS " : "FAIL ") << r.name << ": " << r.detail << '\n';
    ok = ok && r.passed;
  }
  return ok ? kOk : kFailure;
}

int cmd_gen_synthetic(const SyntheticSpec& spec, const std::string& out) {
  const auto ds = generate_synthetic(spec);
  save_dataset(ds, out);
  std::cout << "wrote " << ds.n() << " rows (" << ds.seen_classes.size() << " seen, " << ds.unseen_classes.size()
            << " unseen classes) to " << out << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Reversed conditional diffusion for generalized zero-shot learning"};
  app.require_subcommand(1);

  Overrides o;
  std::string resume, checkpoint, mode = "gzsl", features, split = "test", grid = "0,0.001,0.01,0.1,1", out;
  bool oracle = false, log_trajectory = false, no_guidance = false;
  std::vector<std::string> negate;
  SyntheticSpec spec;

  auto* train = app.add_subcommand("train", "Train a model");
  add_common(train, o, true, true, false);
  train->add_option("--resume", resume, "Continue from a checkpoint");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint (S, U, H)");
  add_common(eval, o, true, false, true);
  eval->add_option("--checkpoint", checkpoint, "Checkpoint file (default <output-dir>/model.ckpt)");
  eval->add_option("--mode", mode, "Prototype search: zsl or gzsl")->check(CLI::IsMember({"zsl", "gzsl"}));
  eval->add_flag("--oracle-sampler", oracle, "Echo the true class attributes instead of sampling");

  auto* samp = app.add_subcommand("sample", "Sample semantics for visual features");
  add_common(samp, o, true, false, true);
  samp->add_option("--checkpoint", checkpoint, "Checkpoint file (default <output-dir>/model.ckpt)");
  samp->add_option("--features", features, "Raw float32 [n x d_x] feature file");
  samp->add_option("--split", split, "Dataset rows to sample: test_seen, test_unseen or test");
  samp->add_flag("--log-trajectory", log_trajectory, "Write per-step mean cosine distance to trajectory.csv");
  samp->add_flag("--no-guidance", no_guidance, "Conditional predictions only");

  auto* sweep = app.add_subcommand("sweep", "Train and evaluate over a lambda3 grid");
  add_common(sweep, o, true, true, true, false);
  sweep->add_option("--lambda3", grid, "Comma-separated lambda3 values");

  auto* verify = app.add_subcommand("verify", "Run the 64-bit verification suites");
  verify->add_option("--negate", negate, "Inject a fault into the named suite (expected to fail)");

  auto* gen = app.add_subcommand("gen-synthetic", "Write the synthetic dataset in RZD v1 format");
  gen->add_option("--out", out, "Output directory")->required();
  gen->add_option("--n-seen", spec.n_seen);
  gen->add_option("--n-unseen", spec.n_unseen);
  gen->add_option("--d-s", spec.d_s);
  gen->add_option("--d-x", spec.d_x);
  gen->add_option("--per-class", spec.per_class);
  gen->add_option("--noise-sigma", spec.noise_sigma);
  gen->add_option("--seed", spec.seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*sweep) return cmd_sweep(o, grid);
    if (*train) return cmd_train(o, resume);
    if (*eval) return cmd_eval(o, checkpoint, mode, oracle);
    if (*samp) return cmd_sample(o, checkpoint, features, split, log_trajectory, no_guidance);
    if (*verify) return cmd_verify(negate);
    if (*gen) return cmd_gen_synthetic(spec, out);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const ShapeError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kIo;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kUsage;
}
