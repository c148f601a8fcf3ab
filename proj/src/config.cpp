#include "revcd/config.hpp"

#include <set>

#include "revcd/binary_io.hpp"
#include "revcd/error.hpp"

namespace revcd {

using nlohmann::json;

std::string to_string(WeightMode mode) { return mode == WeightMode::unit ? "unit" : "analytic"; }

WeightMode weight_mode_from_string(const std::string& name) {
  if (name == "unit") return WeightMode::unit;
  if (name == "analytic") return WeightMode::analytic;
  throw ConfigError("unknown w_mode \"" + name + "\" (expected unit or analytic)");
}

namespace {

// Reads keys of one JSON object, rejecting any key that is never asked for.
class Section {
 public:
  Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw ConfigError("config: " + name_ + " must be an object");
  }
  ~Section() = default;

  template <typename V>
  void get(const char* key, V& out) {
    known_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<V>();
    } catch (const json::exception&) {
      throw ConfigError("config: " + name_ + "." + key + " has the wrong type");
    }
  }

  const json* sub(const char* key) {
    known_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!known_.count(k)) throw ConfigError("config: unknown key " + (name_.empty() ? k : name_ + "." + k));
  }

 private:
  const json& j_;
  std::string name_;
  std::set<std::string> known_;
};

}  // namespace

json to_json(const DenoiserConfig& c) {
  return {{"d_s", c.d_s},         {"d_x", c.d_x},         {"hidden", c.hidden},   {"d_t", c.d_t},
          {"d_c", c.d_c},         {"n_heads", c.n_heads}, {"n_tokens", c.n_tokens}, {"d_ff", c.d_ff},
          {"dropout", c.dropout}, {"n_seen_classes", c.n_seen_classes},           {"max_t", c.max_t}};
}

DenoiserConfig denoiser_config_from_json(const json& j) {
  DenoiserConfig c;
  Section s(j, "model");
  s.get("d_s", c.d_s);
  s.get("d_x", c.d_x);
  s.get("hidden", c.hidden);
  s.get("d_t", c.d_t);
  s.get("d_c", c.d_c);
  s.get("n_heads", c.n_heads);
  s.get("n_tokens", c.n_tokens);
  s.get("d_ff", c.d_ff);
  s.get("dropout", c.dropout);
  s.get("n_seen_classes", c.n_seen_classes);
  s.get("max_t", c.max_t);
  s.finish();
  return c;
}

json to_json(const ScheduleConfig& c) {
  return {{"T", c.steps}, {"beta_start", c.beta_start}, {"beta_end", c.beta_end}};
}

ScheduleConfig schedule_config_from_json(const json& j) {
  ScheduleConfig c;
  Section s(j, "schedule");
  s.get("T", c.steps);
  s.get("beta_start", c.beta_start);
  s.get("beta_end", c.beta_end);
  s.finish();
  return c;
}

json to_json(const SyntheticSpec& s) {
  return {{"n_seen", s.n_seen},       {"n_unseen", s.n_unseen},   {"d_s", s.d_s},     {"d_x", s.d_x},
          {"per_class", s.per_class}, {"noise_sigma", s.noise_sigma}, {"seed", s.seed}};
}

SyntheticSpec synthetic_spec_from_json(const json& j, SyntheticSpec c) {
  Section s(j, "synthetic");
  s.get("n_seen", c.n_seen);
  s.get("n_unseen", c.n_unseen);
  s.get("d_s", c.d_s);
  s.get("d_x", c.d_x);
  s.get("per_class", c.per_class);
  s.get("noise_sigma", c.noise_sigma);
  s.get("seed", c.seed);
  s.finish();
  return c;
}

RunConfig RunConfig::synthetic_defaults() {
  RunConfig c;
  c.schedule.steps = 200;
  c.model.hidden = {64, 32, 16};
  c.model.d_t = 16;
  c.model.d_c = 32;
  c.model.n_heads = 2;
  c.model.n_tokens = 4;
  c.model.d_ff = 64;
  c.train.lr = 1e-3;
  return c;
}

void RunConfig::validate() const {
  schedule.build();
  loss.validate();
  // A run with no objective would silently do nothing.
  if (loss.lambda1 == 0 && loss.lambda2 == 0 && loss.lambda3 == 0)
    throw ConfigError("at least one of lambda1, lambda2, lambda3 must be > 0");
  effective_train().validate();
  guidance.validate(schedule.steps);
  if (n_draws < 1) throw ConfigError("n_draws must be >= 1");
  if (model.hidden.empty()) throw ConfigError("model.hidden must not be empty");
  if (model.d_t == 0 || model.d_t % 2) throw ConfigError("model.d_t must be positive and even");
}

TrainConfig RunConfig::effective_train() const {
  TrainConfig t = train;
  t.schedule = schedule;
  t.loss = loss;
  t.seed = seed;
  return t;
}

json to_json(const RunConfig& c) {
  json j;
  j["dataset"] = c.dataset;
  j["synthetic"] = to_json(c.synthetic);
  j["schedule"] = to_json(c.schedule);
  j["model"] = {{"hidden", c.model.hidden}, {"d_t", c.model.d_t},         {"d_c", c.model.d_c},
                {"n_heads", c.model.n_heads}, {"n_tokens", c.model.n_tokens}, {"d_ff", c.model.d_ff},
                {"dropout", c.model.dropout}};
  j["loss"] = {{"lambda1", c.loss.lambda1},
               {"lambda2", c.loss.lambda2},
               {"lambda3", c.loss.lambda3},
               {"w_mode", to_string(c.loss.w_mode)},
               {"p_conditional", c.loss.p_conditional}};
  j["train"] = {{"epochs", c.train.epochs},
                {"batch_size", c.train.batch_size},
                {"lr", c.train.lr},
                {"checkpoint_interval", c.train.checkpoint_interval},
                {"max_steps", c.train.max_steps},
                {"log_interval", c.train.log_interval}};
  j["guidance"] = {{"g", c.guidance.g},
                   {"noise_mode", to_string(c.guidance.noise_mode)},
                   {"steps", c.guidance.steps},
                   {"n_draws", c.n_draws}};
  j["output_dir"] = c.output_dir;
  j["seed"] = c.seed;
  j["deterministic"] = c.deterministic;
  return j;
}

RunConfig run_config_from_json(const json& j, RunConfig c) {
  Section top(j, "");
  top.get("dataset", c.dataset);
  if (const auto* s = top.sub("synthetic")) c.synthetic = synthetic_spec_from_json(*s, c.synthetic);
  if (const auto* s = top.sub("schedule")) {
    Section sec(*s, "schedule");
    sec.get("T", c.schedule.steps);
    sec.get("beta_start", c.schedule.beta_start);
    sec.get("beta_end", c.schedule.beta_end);
    sec.finish();
  }
  if (const auto* s = top.sub("model")) {
    Section sec(*s, "model");
    sec.get("hidden", c.model.hidden);
    sec.get("d_t", c.model.d_t);
    sec.get("d_c", c.model.d_c);
    sec.get("n_heads", c.model.n_heads);
    sec.get("n_tokens", c.model.n_tokens);
    sec.get("d_ff", c.model.d_ff);
    sec.get("dropout", c.model.dropout);
    sec.finish();
  }
  if (const auto* s = top.sub("loss")) {
    Section sec(*s, "loss");
    sec.get("lambda1", c.loss.lambda1);
    sec.get("lambda2", c.loss.lambda2);
    sec.get("lambda3", c.loss.lambda3);
    std::string mode = to_string(c.loss.w_mode);
    sec.get("w_mode", mode);
    c.loss.w_mode = weight_mode_from_string(mode);
    sec.get("p_conditional", c.loss.p_conditional);
    sec.finish();
  }
  if (const auto* s = top.sub("train")) {
    Section sec(*s, "train");
    sec.get("epochs", c.train.epochs);
    sec.get("batch_size", c.train.batch_size);
    sec.get("lr", c.train.lr);
    sec.get("checkpoint_interval", c.train.checkpoint_interval);
    sec.get("max_steps", c.train.max_steps);
    sec.get("log_interval", c.train.log_interval);
    sec.finish();
  }
  if (const auto* s = top.sub("guidance")) {
    Section sec(*s, "guidance");
    sec.get("g", c.guidance.g);
    std::string mode = to_string(c.guidance.noise_mode);
    sec.get("noise_mode", mode);
    c.guidance.noise_mode = noise_mode_from_string(mode);
    sec.get("steps", c.guidance.steps);
    sec.get("n_draws", c.n_draws);
    sec.finish();
  }
  top.get("output_dir", c.output_dir);
  top.get("seed", c.seed);
  top.get("deterministic", c.deterministic);
  top.finish();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path, RunConfig base) {
  if (!std::filesystem::exists(path)) throw ConfigError("config file not found: " + path.string());
  json j;
  try {
    j = json::parse(io::read_file(path));
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": malformed JSON: " + e.what());
  }
  return run_config_from_json(j, std::move(base));
}

}  // namespace revcd
