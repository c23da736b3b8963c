#pragma once

// Declarative experiment configuration: a small key-value format with
// [section] tables, task-dependent defaults, strict unknown-key checking,
// and a stable hash of the resolved configuration.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "shooting/csv.hpp"
#include "shooting/datasets.hpp"
#include "shooting/optim.hpp"

namespace shooting {

// ---------------------------------------------------------------------------
// raw key-value parsing
// ---------------------------------------------------------------------------

struct ConfigValue {
  enum class Kind { integer, real, boolean, text, list } kind;
  long long i = 0;
  double r = 0.0;
  bool b = false;
  std::string s;
  std::vector<ConfigValue> items;
};

namespace detail {

inline std::string strip(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

inline ConfigValue parse_scalar(const std::string& tok, int line_no) {
  ConfigValue v;
  if (tok.size() >= 2 && tok.front() == '"' && tok.back() == '"') {
    v.kind = ConfigValue::Kind::text;
    v.s = tok.substr(1, tok.size() - 2);
    return v;
  }
  if (tok == "true" || tok == "false") {
    v.kind = ConfigValue::Kind::boolean;
    v.b = tok == "true";
    return v;
  }
  if (tok.find_first_of(".eE") == std::string::npos) {
    try {
      std::size_t pos = 0;
      long long i = std::stoll(tok, &pos, 0);
      if (pos == tok.size()) {
        v.kind = ConfigValue::Kind::integer;
        v.i = i;
        v.r = static_cast<double>(i);
        return v;
      }
    } catch (...) {
    }
  }
  try {
    std::size_t pos = 0;
    double r = std::stod(tok, &pos);
    if (pos == tok.size()) {
      v.kind = ConfigValue::Kind::real;
      v.r = r;
      return v;
    }
  } catch (...) {
  }
  throw ConfigError("config line " + std::to_string(line_no) + ": cannot parse value '" + tok +
                    "'");
}

inline ConfigValue parse_value(const std::string& raw, int line_no) {
  std::string tok = strip(raw);
  if (tok.empty()) throw ConfigError("config line " + std::to_string(line_no) + ": empty value");
  if (tok.front() == '[') {
    if (tok.back() != ']')
      throw ConfigError("config line " + std::to_string(line_no) + ": unterminated list");
    ConfigValue v;
    v.kind = ConfigValue::Kind::list;
    std::string inner = tok.substr(1, tok.size() - 2);
    std::string cell;
    std::stringstream ss(inner);
    while (std::getline(ss, cell, ',')) {
      cell = strip(cell);
      if (!cell.empty()) v.items.push_back(parse_scalar(cell, line_no));
    }
    return v;
  }
  return parse_scalar(tok, line_no);
}

}  // namespace detail

class ConfigTable {
 public:
  static ConfigTable parse_string(const std::string& text) {
    ConfigTable t;
    std::stringstream ss(text);
    std::string line, section;
    int line_no = 0;
    while (std::getline(ss, line)) {
      ++line_no;
      // strip comments outside string literals
      bool quoted = false;
      for (std::size_t i = 0; i < line.size(); ++i) {
        if (line[i] == '"') quoted = !quoted;
        if (line[i] == '#' && !quoted) {
          line = line.substr(0, i);
          break;
        }
      }
      line = detail::strip(line);
      if (line.empty()) continue;
      if (line.front() == '[') {
        if (line.back() != ']')
          throw ConfigError("config line " + std::to_string(line_no) + ": malformed section");
        section = detail::strip(line.substr(1, line.size() - 2));
        if (section.empty())
          throw ConfigError("config line " + std::to_string(line_no) + ": empty section name");
        continue;
      }
      const std::size_t eq = line.find('=');
      if (eq == std::string::npos)
        throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
      std::string key = detail::strip(line.substr(0, eq));
      if (key.empty())
        throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
      if (!section.empty()) key = section + "." + key;
      if (t.values_.count(key))
        throw ConfigError("config line " + std::to_string(line_no) + ": duplicate key '" + key +
                          "'");
      t.values_[key] = detail::parse_value(line.substr(eq + 1), line_no);
    }
    return t;
  }

  static ConfigTable parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_string(ss.str());
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  long long get_int(const std::string& key, long long def) const {
    auto it = values_.find(key);
    if (it == values_.end()) return def;
    mark(key);
    if (it->second.kind != ConfigValue::Kind::integer)
      throw ConfigError("config: '" + key + "' must be an integer");
    return it->second.i;
  }
  double get_real(const std::string& key, double def) const {
    auto it = values_.find(key);
    if (it == values_.end()) return def;
    mark(key);
    if (it->second.kind != ConfigValue::Kind::integer &&
        it->second.kind != ConfigValue::Kind::real)
      throw ConfigError("config: '" + key + "' must be a number");
    return it->second.r;
  }
  bool get_bool(const std::string& key, bool def) const {
    auto it = values_.find(key);
    if (it == values_.end()) return def;
    mark(key);
    if (it->second.kind != ConfigValue::Kind::boolean)
      throw ConfigError("config: '" + key + "' must be true or false");
    return it->second.b;
  }
  std::string get_str(const std::string& key, const std::string& def) const {
    auto it = values_.find(key);
    if (it == values_.end()) return def;
    mark(key);
    if (it->second.kind != ConfigValue::Kind::text)
      throw ConfigError("config: '" + key + "' must be a quoted string");
    return it->second.s;
  }
  std::vector<long long> get_int_list(const std::string& key,
                                      std::vector<long long> def) const {
    auto it = values_.find(key);
    if (it == values_.end()) return def;
    mark(key);
    std::vector<long long> out;
    if (it->second.kind == ConfigValue::Kind::integer) {
      out.push_back(it->second.i);
      return out;
    }
    if (it->second.kind != ConfigValue::Kind::list)
      throw ConfigError("config: '" + key + "' must be a list of integers");
    for (const auto& item : it->second.items) {
      if (item.kind != ConfigValue::Kind::integer)
        throw ConfigError("config: '" + key + "' must be a list of integers");
      out.push_back(item.i);
    }
    return out;
  }
  std::vector<std::string> get_str_list(const std::string& key,
                                        std::vector<std::string> def) const {
    auto it = values_.find(key);
    if (it == values_.end()) return def;
    mark(key);
    std::vector<std::string> out;
    if (it->second.kind == ConfigValue::Kind::text) {
      out.push_back(it->second.s);
      return out;
    }
    if (it->second.kind != ConfigValue::Kind::list)
      throw ConfigError("config: '" + key + "' must be a list of strings");
    for (const auto& item : it->second.items) {
      if (item.kind != ConfigValue::Kind::text)
        throw ConfigError("config: '" + key + "' must be a list of strings");
      out.push_back(item.s);
    }
    return out;
  }

  // every present key must have been consumed by a getter
  void check_all_consumed() const {
    for (const auto& [key, value] : values_)
      if (!consumed_.count(key)) throw ConfigError("config: unknown key '" + key + "'");
  }

 private:
  void mark(const std::string& key) const { consumed_.insert(key); }
  std::map<std::string, ConfigValue> values_;
  mutable std::set<std::string> consumed_;
};

// ---------------------------------------------------------------------------
// experiment configuration
// ---------------------------------------------------------------------------

enum class Task : std::uint8_t { quadratic_like, cubic, spiral, circles };

inline const char* task_name(Task t) {
  switch (t) {
    case Task::quadratic_like: return "quadratic_like";
    case Task::cubic: return "cubic";
    case Task::spiral: return "spiral";
    case Task::circles: return "circles";
  }
  return "?";
}

inline Task task_from_name(const std::string& s) {
  for (Task t : {Task::quadratic_like, Task::cubic, Task::spiral, Task::circles})
    if (s == task_name(t)) return t;
  throw ConfigError("unknown task: " + s);
}

struct DataSpec {
  std::size_t n_train = 500, n_val = 1000, n_test = 1000;
  double range_lo = -1.5, range_hi = 1.5;
  std::size_t n_per_class = 50;  // circles
  AnnulusSpec annuli;            // circles
  SpiralSpec spiral;             // spiral
  std::size_t train_per_epoch = 100;  // spiral resampling
};

struct ExperimentConfig {
  Task task = Task::quadratic_like;
  ModeSpec mode;
  IntegratorSpec integ;
  ObjectiveSpec objective;
  OptimSpec optim;
  DataSpec data;
  std::vector<std::uint64_t> seeds = {0};
  std::string out_dir = "runs/experiment";
  bool record_trajectory = false;
  std::size_t trajectory_samples = 20;
  bool resample_train_per_epoch = false;

  std::vector<Mode> sweep_modes;
  std::vector<std::size_t> sweep_alphas;
  std::vector<std::uint64_t> sweep_seeds;

  static ExperimentConfig from_table(const ConfigTable& t);
  static ExperimentConfig from_file(const std::string& path) {
    return from_table(ConfigTable::parse_file(path));
  }
  static ExperimentConfig from_string(const std::string& text) {
    return from_table(ConfigTable::parse_string(text));
  }

  void validate() const;
  std::string canonical() const;
  std::uint64_t hash() const;
  std::string hash_hex() const;
};

inline void apply_task_defaults(ExperimentConfig& c) {
  switch (c.task) {
    case Task::quadratic_like:
    case Task::cubic:
      c.mode.d = 1;
      c.mode.particles = 15;
      c.mode.alpha = 16;
      c.integ = {Scheme::rk4, 0.1, 1.0};
      c.objective.loss = LossKind::mse;
      c.objective.gamma = 100.0;
      c.objective.lambda_reg = 1.0;
      c.optim.epochs = 500;
      c.optim.batch_size = 50;
      c.data.n_train = 500;
      c.data.n_val = 1000;
      c.data.n_test = 1000;
      break;
    case Task::spiral:
      c.mode.d = 2;
      c.mode.particles = 25;
      c.mode.alpha = 16;
      c.integ = {Scheme::rk4, 0.05, 0.25};
      c.objective.loss = LossKind::mse_trajectory;
      c.objective.gamma = 100.0;
      c.objective.lambda_reg = 0.01;
      c.optim.epochs = 1500;
      c.optim.batch_size = 100;
      c.data.n_val = 100;
      c.data.n_test = 1000;
      c.resample_train_per_epoch = true;
      break;
    case Task::circles:
      c.mode.d = 2;
      c.mode.particles = 20;
      c.mode.alpha = 8;
      c.integ = {Scheme::rk4, 0.1, 1.0};
      c.objective.loss = LossKind::binary_cross_entropy;
      c.objective.with_readout = true;
      c.objective.gamma = 100.0;
      c.objective.lambda_reg = 1.0;
      c.optim.epochs = 500;
      c.optim.batch_size = 50;
      c.data.n_per_class = 50;
      break;
  }
}

inline ExperimentConfig ExperimentConfig::from_table(const ConfigTable& t) {
  ExperimentConfig c;
  c.task = task_from_name(t.get_str("task", "quadratic_like"));
  apply_task_defaults(c);

  c.mode.mode = mode_from_name(t.get_str("mode", mode_name(c.mode.mode)));
  c.mode.alpha = static_cast<std::size_t>(t.get_int("alpha", c.mode.alpha));
  if (mode_uses_particles(c.mode.mode))
    c.mode.particles = static_cast<std::size_t>(t.get_int("particles", c.mode.particles));
  else
    c.mode.particles = 0;
  c.mode.blocks = c.mode.mode == Mode::dynamic_direct
                      ? static_cast<std::size_t>(t.get_int("blocks", 5))
                      : 1;
  const std::string act = t.get_str("activation", "relu");
  if (act != "relu" && act != "tanh") throw ConfigError("activation must be relu or tanh");
  c.mode.act = act == "relu" ? Act::relu : Act::tanh;

  c.mode.weights.t1 = t.get_real("penalty.theta1", c.mode.weights.t1);
  c.mode.weights.b1 = t.get_real("penalty.bias1", c.mode.weights.b1);
  c.mode.weights.t2 = t.get_real("penalty.theta2", c.mode.weights.t2);
  c.mode.weights.b2 = t.get_real("penalty.bias2", c.mode.weights.b2);
  c.mode.weights.t3 = t.get_real("penalty.theta3", c.mode.weights.t3);

  const std::string scheme = t.get_str("integrator.scheme", scheme_name(c.integ.scheme));
  if (scheme != "rk4" && scheme != "euler")
    throw ConfigError("integrator.scheme must be rk4 or euler");
  c.integ.scheme = scheme == "rk4" ? Scheme::rk4 : Scheme::euler;
  c.integ.step = t.get_real("integrator.step", c.integ.step);
  c.integ.horizon = t.get_real("integrator.horizon", c.integ.horizon);

  const std::string loss = t.get_str("objective.loss", loss_name(c.objective.loss));
  if (loss == "mse")
    c.objective.loss = LossKind::mse;
  else if (loss == "mse_trajectory")
    c.objective.loss = LossKind::mse_trajectory;
  else if (loss == "binary_cross_entropy")
    c.objective.loss = LossKind::binary_cross_entropy;
  else
    throw ConfigError("objective.loss must be mse, mse_trajectory or binary_cross_entropy");
  c.objective.with_readout = c.objective.loss == LossKind::binary_cross_entropy;
  c.objective.gamma = t.get_real("objective.gamma", c.objective.gamma);
  c.objective.lambda_reg = t.get_real("objective.lambda_reg", c.objective.lambda_reg);

  c.optim.learning_rate = t.get_real("optimizer.learning_rate", c.optim.learning_rate);
  c.optim.epochs = static_cast<std::size_t>(t.get_int("optimizer.epochs", c.optim.epochs));
  c.optim.batch_size =
      static_cast<std::size_t>(t.get_int("optimizer.batch_size", c.optim.batch_size));
  const std::string sched =
      t.get_str("optimizer.scheduler", scheduler_name(c.optim.scheduler));
  if (sched == "none")
    c.optim.scheduler = SchedulerKind::none;
  else if (sched == "plateau")
    c.optim.scheduler = SchedulerKind::plateau;
  else if (sched == "cosine")
    c.optim.scheduler = SchedulerKind::cosine;
  else
    throw ConfigError("optimizer.scheduler must be none, plateau or cosine");
  c.optim.plateau_factor = t.get_real("optimizer.plateau_factor", c.optim.plateau_factor);
  c.optim.plateau_patience = static_cast<std::size_t>(
      t.get_int("optimizer.plateau_patience", c.optim.plateau_patience));
  c.optim.plateau_threshold =
      t.get_real("optimizer.plateau_threshold", c.optim.plateau_threshold);
  c.optim.cosine_t_max =
      static_cast<std::size_t>(t.get_int("optimizer.cosine_t_max", c.optim.cosine_t_max));
  c.optim.freeze_particle_positions_epochs = static_cast<std::size_t>(t.get_int(
      "optimizer.freeze_particle_positions_epochs", c.optim.freeze_particle_positions_epochs));

  c.data.n_train = static_cast<std::size_t>(t.get_int("data.n_train", c.data.n_train));
  c.data.n_val = static_cast<std::size_t>(t.get_int("data.n_val", c.data.n_val));
  c.data.n_test = static_cast<std::size_t>(t.get_int("data.n_test", c.data.n_test));
  c.data.range_lo = t.get_real("data.range_lo", c.data.range_lo);
  c.data.range_hi = t.get_real("data.range_hi", c.data.range_hi);
  c.data.n_per_class =
      static_cast<std::size_t>(t.get_int("data.n_per_class", c.data.n_per_class));
  c.data.annuli.inner_lo = t.get_real("data.inner_lo", c.data.annuli.inner_lo);
  c.data.annuli.inner_hi = t.get_real("data.inner_hi", c.data.annuli.inner_hi);
  c.data.annuli.outer_lo = t.get_real("data.outer_lo", c.data.annuli.outer_lo);
  c.data.annuli.outer_hi = t.get_real("data.outer_hi", c.data.annuli.outer_hi);
  c.data.spiral.snippet_len = t.get_real("data.snippet_len", c.data.spiral.snippet_len);
  c.data.train_per_epoch =
      static_cast<std::size_t>(t.get_int("data.train_per_epoch", c.data.train_per_epoch));
  c.resample_train_per_epoch =
      t.get_bool("resample_train_per_epoch", c.resample_train_per_epoch);

  auto seeds = t.get_int_list("seeds", {0});
  c.seeds.clear();
  for (long long s : seeds) c.seeds.push_back(static_cast<std::uint64_t>(s));
  c.out_dir = t.get_str("out_dir", c.out_dir);
  c.record_trajectory = t.get_bool("record_trajectory", c.record_trajectory);
  c.trajectory_samples =
      static_cast<std::size_t>(t.get_int("trajectory_samples", c.trajectory_samples));

  for (const std::string& m : t.get_str_list("sweep.modes", {}))
    c.sweep_modes.push_back(mode_from_name(m));
  for (long long a : t.get_int_list("sweep.alphas", {}))
    c.sweep_alphas.push_back(static_cast<std::size_t>(a));
  for (long long s : t.get_int_list("sweep.seeds", {}))
    c.sweep_seeds.push_back(static_cast<std::uint64_t>(s));

  t.check_all_consumed();
  c.validate();
  return c;
}

inline void ExperimentConfig::validate() const {
  mode.validate();
  objective.validate();
  optim.validate();
  if (seeds.empty()) throw ConfigError("config: at least one seed required");
  if (!(integ.step > 0.0) || !(integ.horizon > 0.0))
    throw ConfigError("config: integrator step and horizon must be positive");
  if (task == Task::circles) {
    if (objective.loss != LossKind::binary_cross_entropy)
      throw ConfigError("config: circles task requires the classification loss");
    data.annuli.validate();
  } else if (objective.loss == LossKind::binary_cross_entropy) {
    throw ConfigError("config: classification loss requires the circles task");
  }
  if (task == Task::spiral) {
    if (objective.loss != LossKind::mse_trajectory)
      throw ConfigError("config: spiral task requires the trajectory loss");
    data.spiral.snippet_steps();
  }
}

inline std::string ExperimentConfig::canonical() const {
  std::vector<std::pair<std::string, std::string>> kv;
  auto put = [&](const std::string& k, const std::string& v) { kv.emplace_back(k, v); };
  put("task", task_name(task));
  put("mode", mode_name(mode.mode));
  put("alpha", std::to_string(mode.alpha));
  put("particles", std::to_string(mode.particles));
  put("blocks", std::to_string(mode.blocks));
  put("d", std::to_string(mode.d));
  put("activation", mode.act == Act::relu ? "relu" : "tanh");
  put("penalty.theta1", csv_double(mode.weights.t1));
  put("penalty.bias1", csv_double(mode.weights.b1));
  put("penalty.theta2", csv_double(mode.weights.t2));
  put("penalty.bias2", csv_double(mode.weights.b2));
  put("penalty.theta3", csv_double(mode.weights.t3));
  put("integrator.scheme", scheme_name(integ.scheme));
  put("integrator.step", csv_double(integ.step));
  put("integrator.horizon", csv_double(integ.horizon));
  put("objective.loss", loss_name(objective.loss));
  put("objective.gamma", csv_double(objective.gamma));
  put("objective.lambda_reg", csv_double(objective.lambda_reg));
  put("optimizer.learning_rate", csv_double(optim.learning_rate));
  put("optimizer.epochs", std::to_string(optim.epochs));
  put("optimizer.batch_size", std::to_string(optim.batch_size));
  put("optimizer.scheduler", scheduler_name(optim.scheduler));
  put("optimizer.plateau_factor", csv_double(optim.plateau_factor));
  put("optimizer.plateau_patience", std::to_string(optim.plateau_patience));
  put("optimizer.plateau_threshold", csv_double(optim.plateau_threshold));
  put("optimizer.cosine_t_max", std::to_string(optim.cosine_t_max));
  put("optimizer.freeze", std::to_string(optim.freeze_particle_positions_epochs));
  put("data.n_train", std::to_string(data.n_train));
  put("data.n_val", std::to_string(data.n_val));
  put("data.n_test", std::to_string(data.n_test));
  put("data.range_lo", csv_double(data.range_lo));
  put("data.range_hi", csv_double(data.range_hi));
  put("data.n_per_class", std::to_string(data.n_per_class));
  put("data.inner_lo", csv_double(data.annuli.inner_lo));
  put("data.inner_hi", csv_double(data.annuli.inner_hi));
  put("data.outer_lo", csv_double(data.annuli.outer_lo));
  put("data.outer_hi", csv_double(data.annuli.outer_hi));
  put("data.snippet_len", csv_double(data.spiral.snippet_len));
  put("data.train_per_epoch", std::to_string(data.train_per_epoch));
  put("resample_train_per_epoch", resample_train_per_epoch ? "true" : "false");
  put("record_trajectory", record_trajectory ? "true" : "false");
  put("trajectory_samples", std::to_string(trajectory_samples));
  {
    std::string s;
    for (std::uint64_t v : seeds) s += std::to_string(v) + ";";
    put("seeds", s);
  }
  put("out_dir", out_dir);
  {
    std::string m, a, s;
    for (Mode v : sweep_modes) m += std::string(mode_name(v)) + ";";
    for (std::size_t v : sweep_alphas) a += std::to_string(v) + ";";
    for (std::uint64_t v : sweep_seeds) s += std::to_string(v) + ";";
    put("sweep.modes", m);
    put("sweep.alphas", a);
    put("sweep.seeds", s);
  }
  std::sort(kv.begin(), kv.end());
  std::string out;
  for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
  return out;
}

inline std::uint64_t ExperimentConfig::hash() const {
  // FNV-1a 64
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : canonical()) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string ExperimentConfig::hash_hex() const {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(hash()));
  return std::string(buf);
}

}  // namespace shooting
