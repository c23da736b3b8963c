#pragma once

// Experiment runner: task data assembly, per-seed training runs with their
// output artifacts (history.csv, theta_t.csv, trajectory.csv, summary.json),
// the replay evaluator, and the sweep grid.

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <mutex>
#include <optional>
#include <thread>

#include <json.hpp>

#include "shooting/config.hpp"
#include "shooting/csv.hpp"
#include "shooting/datasets.hpp"
#include "shooting/optim.hpp"

namespace shooting {

// ---------------------------------------------------------------------------
// task data
// ---------------------------------------------------------------------------

struct TaskData {
  Batch train, val, test;
  EpochSampler sampler;               // set when the train split resamples per epoch
  std::optional<SpiralData> spiral;   // carries the reference trace
};

inline TaskData make_task_data(const ExperimentConfig& c, std::uint64_t seed) {
  TaskData out;
  Rng rng(seed ^ 0x9e3779b97f4a7c15ull);
  switch (c.task) {
    case Task::quadratic_like:
    case Task::cubic: {
      const FunctionKind kind =
          c.task == Task::quadratic_like ? FunctionKind::quadratic_like : FunctionKind::cubic;
      out.train = gen_function_1d(kind, c.data.n_train, c.data.range_lo, c.data.range_hi, rng);
      out.val = gen_function_1d(kind, c.data.n_val, c.data.range_lo, c.data.range_hi, rng);
      out.test = gen_function_1d(kind, c.data.n_test, c.data.range_lo, c.data.range_hi, rng);
      break;
    }
    case Task::spiral: {
      SpiralData sd = gen_spiral(c.data.train_per_epoch, c.data.spiral, rng);
      out.train = sd.data;
      out.val = gen_spiral(c.data.n_val, c.data.spiral, rng).data;
      out.test = gen_spiral(c.data.n_test, c.data.spiral, rng).data;
      out.spiral = std::move(sd);
      if (c.resample_train_per_epoch) {
        const SpiralSpec spec = c.data.spiral;
        const std::size_t n = c.data.train_per_epoch;
        out.sampler = [spec, n](Rng& r) { return gen_spiral(n, spec, r).data; };
      }
      break;
    }
    case Task::circles: {
      out.train = gen_concentric_circles(c.data.n_per_class, c.data.annuli, rng);
      out.val = gen_concentric_circles(c.data.n_per_class, c.data.annuli, rng);
      out.test = gen_concentric_circles(c.data.n_per_class, c.data.annuli, rng);
      break;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// artifact writers
// ---------------------------------------------------------------------------

inline std::vector<std::pair<std::string, std::vector<std::size_t>>> theta_layout(
    const ModeSpec& spec) {
  const std::size_t d = spec.d, h = spec.alpha * spec.d;
  return {{"theta1", {d, h}}, {"bias1", {d}}, {"theta2", {h, d}}, {"bias2", {h}},
          {"theta3", {h, h}}};
}

inline void write_history_csv(const std::string& path, const FitResult& fit) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& e : fit.history)
    rows.push_back({std::to_string(e.epoch), csv_double(e.train_loss), csv_double(e.val_loss),
                    csv_double(e.lr), csv_double(e.complexity)});
  write_csv(path, {"epoch", "train_loss", "val_loss", "lr", "complexity"}, rows);
}

inline void write_theta_csv(const std::string& path, const Trajectory<Tensor>& traj,
                            const ModeSpec& spec) {
  std::vector<std::string> header = {"segment", "step", "stage", "t"};
  for (const auto& [name, shape] : theta_layout(spec)) {
    if (shape.size() == 2)
      for (std::size_t r = 0; r < shape[0]; ++r)
        for (std::size_t c = 0; c < shape[1]; ++c)
          header.push_back(name + "_" + std::to_string(r) + "_" + std::to_string(c));
    else
      for (std::size_t i = 0; i < shape[0]; ++i) header.push_back(name + "_" + std::to_string(i));
  }
  std::vector<std::vector<std::string>> rows;
  for (std::size_t s = 0; s < traj.segments.size(); ++s)
    for (const auto& rec : traj.segments[s].stages) {
      std::vector<std::string> row = {std::to_string(s), std::to_string(rec.step),
                                      std::to_string(rec.stage), csv_double(rec.t)};
      for (const Tensor& part : rec.theta)
        for (double v : part.data) row.push_back(csv_double(v));
      rows.push_back(std::move(row));
    }
  write_csv(path, header, rows);
}

inline void write_trajectory_csv(const std::string& path, const Trajectory<Tensor>& traj,
                                 const ModeSpec& spec) {
  const std::size_t d = spec.d, h = spec.alpha * spec.d;
  const std::size_t n = traj.segments[0].states.at(0).slots[slot::x].rows();
  std::vector<std::string> header = {"segment", "step", "t"};
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < d; ++c)
      header.push_back("x" + std::to_string(i) + "_" + std::to_string(c));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < h; ++c)
      header.push_back("v" + std::to_string(i) + "_" + std::to_string(c));
  std::vector<std::vector<std::string>> rows;
  for (std::size_t s = 0; s < traj.segments.size(); ++s) {
    const auto& seg = traj.segments[s];
    for (std::size_t k = 0; k < seg.states.size(); ++k) {
      std::vector<std::string> row = {std::to_string(s), std::to_string(k),
                                      csv_double(seg.times[k])};
      for (double v : seg.states[k].slots[slot::x].data) row.push_back(csv_double(v));
      for (double v : seg.states[k].slots[slot::v].data) row.push_back(csv_double(v));
      rows.push_back(std::move(row));
    }
  }
  write_csv(path, header, rows);
}

// ---------------------------------------------------------------------------
// single training run
// ---------------------------------------------------------------------------

struct RunSummary {
  std::uint64_t seed = 0;
  double test_loss = std::numeric_limits<double>::quiet_NaN();
  double final_train_loss = std::numeric_limits<double>::quiet_NaN();
  double final_val_loss = std::numeric_limits<double>::quiet_NaN();
  double complexity = std::numeric_limits<double>::quiet_NaN();
  double hamiltonian_drift = std::numeric_limits<double>::quiet_NaN();
  double test_accuracy = std::numeric_limits<double>::quiet_NaN();
  double longrange_error = std::numeric_limits<double>::quiet_NaN();
  long long parameter_count = 0;
  std::string dir;
};

inline double hamiltonian_drift_of(const Trajectory<Tensor>& traj) {
  double drift = 0.0, h0 = 0.0;
  bool first = true;
  for (const auto& seg : traj.segments)
    for (const auto* rec : seg.node_records()) {
      if (!rec->has_hamiltonian) return std::numeric_limits<double>::quiet_NaN();
      const double h = rec->hamiltonian.data[0];
      if (first) {
        h0 = h;
        first = false;
      }
      drift = std::max(drift, std::abs(h - h0) / std::max(std::abs(h0), 1e-12));
    }
  return first ? std::numeric_limits<double>::quiet_NaN() : drift;
}

// Pasted long-range reconstruction: repeatedly apply the learned
// snippet-horizon flow, restarting the hidden state (and the particles) at
// every chunk boundary. Returns the mean pointwise distance to the
// reference trace.
inline double spiral_longrange_error(const ModeParams<Tensor>& params, const ModeSpec& spec,
                                     const IntegratorSpec& integ, const SpiralSpec& sspec,
                                     const Tensor& reference) {
  const std::size_t m = sspec.snippet_steps();
  const std::size_t chunks =
      static_cast<std::size_t>(std::llround(sspec.horizon / sspec.snippet_len));
  Tensor x = Tensor::matrix({{sspec.x0, sspec.y0}});
  double err_sum = 0.0;
  std::size_t count = 1;  // the start point matches by construction
  std::size_t node = 0;
  for (std::size_t chunk = 0; chunk < chunks; ++chunk) {
    Trajectory<Tensor> traj = mode_forward(params, x, spec, integ, true);
    auto xs = traj.grid_x();
    for (std::size_t j = 1; j <= m; ++j) {
      ++node;
      const Tensor& pt = *xs[j];
      const double dx = pt(0, 0) - reference(node, 0);
      const double dy = pt(0, 1) - reference(node, 1);
      err_sum += std::sqrt(dx * dx + dy * dy);
      ++count;
    }
    x = *xs[m];
  }
  return err_sum / static_cast<double>(count);
}

inline RunSummary run_fit_seed(const ExperimentConfig& c, std::uint64_t seed,
                               const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  TaskData data = make_task_data(c, seed);

  Rng rng(seed);
  ModeParams<Tensor> params =
      init_parameters(c.mode, c.objective, {c.data.range_lo, c.data.range_hi}, rng);
  FitResult fit_res =
      fit(params, data.train, data.val, c.mode, c.integ, c.objective, c.optim, rng, data.sampler);

  RunSummary out;
  out.seed = seed;
  out.dir = dir;
  out.parameter_count = count_parameters(c.mode);
  out.final_val_loss = fit_res.final_val_loss;
  if (!fit_res.history.empty()) out.final_train_loss = fit_res.history.back().train_loss;
  out.test_loss = evaluate_data_loss(params, data.test, c.mode, c.integ, c.objective);

  // recorded rollout on a test subset: weight schedule, states, H(t)
  const std::size_t n_rec = std::min<std::size_t>(c.trajectory_samples, data.test.inputs.rows());
  Tensor x_rec({n_rec, c.mode.d});
  for (std::size_t i = 0; i < n_rec; ++i)
    for (std::size_t j = 0; j < c.mode.d; ++j) x_rec(i, j) = data.test.inputs(i, j);
  Trajectory<Tensor> recorded = mode_forward(params, x_rec, c.mode, c.integ, true);
  out.complexity = [&] {
    try {
      return complexity_metric(recorded);
    } catch (const UndefinedMetricError&) {
      return std::numeric_limits<double>::quiet_NaN();
    }
  }();
  out.hamiltonian_drift = hamiltonian_drift_of(recorded);

  if (c.task == Task::circles) {
    Trajectory<Tensor> test_traj = mode_forward(params, data.test.inputs, c.mode, c.integ, false);
    out.test_accuracy =
        classification_accuracy(test_traj.final_x(), params.readout, data.test.targets);
  }
  if (c.task == Task::spiral && data.spiral)
    out.longrange_error =
        spiral_longrange_error(params, c.mode, c.integ, c.data.spiral, data.spiral->reference);

  write_history_csv(dir + "/history.csv", fit_res);
  write_theta_csv(dir + "/theta_t.csv", recorded, c.mode);
  if (c.record_trajectory) write_trajectory_csv(dir + "/trajectory.csv", recorded, c.mode);

  nlohmann::json j;
  j["task"] = task_name(c.task);
  j["mode"] = mode_name(c.mode.mode);
  j["alpha"] = c.mode.alpha;
  j["particles"] = c.mode.particles;
  j["blocks"] = c.mode.blocks;
  j["seed"] = seed;
  j["generator"] = Rng::kGeneratorName;
  j["parameter_count"] = out.parameter_count;
  j["epochs_run"] = fit_res.history.size();
  j["final_train_loss"] = out.final_train_loss;
  j["final_val_loss"] = out.final_val_loss;
  j["test_loss"] = out.test_loss;
  j["complexity"] = out.complexity;
  if (std::isfinite(out.hamiltonian_drift)) j["hamiltonian_drift"] = out.hamiltonian_drift;
  if (std::isfinite(out.test_accuracy)) j["test_accuracy"] = out.test_accuracy;
  if (std::isfinite(out.longrange_error)) j["longrange_error"] = out.longrange_error;
  j["config_hash"] = c.hash_hex();
  std::ofstream js(dir + "/summary.json");
  js << j.dump(2) << "\n";
  return out;
}

inline std::vector<RunSummary> run_fit(const ExperimentConfig& c) {
  std::vector<RunSummary> out;
  for (std::uint64_t seed : c.seeds)
    out.push_back(run_fit_seed(c, seed, c.out_dir + "/seed_" + std::to_string(seed)));
  return out;
}

// ---------------------------------------------------------------------------
// replay evaluation: re-integrate the data trajectory under recorded theta
// ---------------------------------------------------------------------------

struct EvalReport {
  double max_deviation = 0.0;
  std::size_t states_checked = 0;
};

inline EvalReport run_eval(const ExperimentConfig& c, const std::string& dir) {
  CsvFile theta = read_csv(dir + "/theta_t.csv");
  CsvFile traj = read_csv(dir + "/trajectory.csv");
  const auto layout = theta_layout(c.mode);
  const UpDownModel model = c.mode.model();
  const std::size_t d = c.mode.d, h = model.hidden_dim();

  const std::size_t theta_cols = theta.header.size() - 4;
  std::size_t expect = 0;
  for (const auto& [name, shape] : layout) expect += Tensor::numel_of(shape);
  if (theta_cols != expect) throw ConfigError("eval: theta_t.csv does not match the config");

  const std::size_t seg_col_t = theta.column("segment");
  const std::size_t seg_col_s = traj.column("segment");
  const std::size_t n =
      (traj.header.size() - 3) / (d + h);  // recorded samples per state row

  EvalReport report;
  std::size_t n_segments = 0;
  for (const auto& row : theta.rows)
    n_segments = std::max(n_segments, static_cast<std::size_t>(std::stoull(row[seg_col_t]) + 1));

  for (std::size_t seg = 0; seg < n_segments; ++seg) {
    // recorded stage thetas, in call order
    std::vector<UpDownTheta<Tensor>> stage_thetas;
    for (const auto& row : theta.rows) {
      if (std::stoull(row[seg_col_t]) != seg) continue;
      std::vector<Tensor> parts;
      std::size_t off = 4;
      for (const auto& [name, shape] : layout) {
        Tensor part(shape);
        for (std::size_t i = 0; i < part.numel(); ++i)
          part.data[i] = csv_parse_double(row[off + i]);
        off += part.numel();
        parts.push_back(std::move(part));
      }
      stage_thetas.push_back(pack_theta(parts, model));
    }

    // recorded states for this segment
    std::vector<std::vector<std::string>> state_rows;
    for (const auto& row : traj.rows)
      if (std::stoull(row[seg_col_s]) == seg) state_rows.push_back(row);
    if (state_rows.empty()) throw ConfigError("eval: no states recorded for segment");

    auto parse_state = [&](const std::vector<std::string>& row) {
      Tensor x({n, d}), v({n, h});
      for (std::size_t i = 0; i < n * d; ++i) x.data[i] = csv_parse_double(row[3 + i]);
      for (std::size_t i = 0; i < n * h; ++i) v.data[i] = csv_parse_double(row[3 + n * d + i]);
      return std::pair{x, v};
    };

    auto [x0, v0] = parse_state(state_rows.front());
    const double t0 = csv_parse_double(state_rows.front()[2]);
    const double t1 = csv_parse_double(state_rows.back()[2]);

    // replay: the rhs consumes recorded thetas in the exact call order the
    // original rollout produced them, so the arithmetic is bit-identical
    std::size_t cursor = 0;
    Rhs<Tensor> replay = [&](double, const Bundle<Tensor>& y, StageRecord<Tensor>&) {
      if (cursor >= stage_thetas.size()) throw ConfigError("eval: theta log too short");
      const UpDownTheta<Tensor>& th = stage_thetas[cursor++];
      UpDownDeriv<Tensor> f = updown_field(y.slots[0], y.slots[1], th, model.act);
      Bundle<Tensor> out;
      out.slots = {f.xdot, f.vdot};
      return out;
    };
    Bundle<Tensor> y0;
    y0.slots = {x0, v0};
    IntegratorSpec seg_integ = c.integ;
    seg_integ.horizon = t1 - t0;
    auto roll = integrate<Tensor>(replay, y0, seg_integ, true);

    if (roll.states.size() != state_rows.size())
      throw ConfigError("eval: grid size mismatch against trajectory.csv");
    for (std::size_t k = 0; k < state_rows.size(); ++k) {
      auto [xw, vw] = parse_state(state_rows[k]);
      report.max_deviation =
          std::max(report.max_deviation, max_abs_diff(roll.states[k].slots[0], xw));
      report.max_deviation =
          std::max(report.max_deviation, max_abs_diff(roll.states[k].slots[1], vw));
      ++report.states_checked;
    }
  }

  nlohmann::json j;
  j["max_deviation"] = report.max_deviation;
  j["states_checked"] = report.states_checked;
  std::ofstream js(dir + "/eval.json");
  js << j.dump(2) << "\n";
  return report;
}

// ---------------------------------------------------------------------------
// sweep grid
// ---------------------------------------------------------------------------

// flags values outside [Q1 - 1.5 IQR, Q3 + 1.5 IQR] (linear-interpolation
// quartiles)
inline std::vector<bool> iqr_outliers(const std::vector<double>& values) {
  std::vector<bool> out(values.size(), false);
  if (values.size() < 2) return out;
  std::vector<double> sorted = values;
  std::sort(sorted.begin(), sorted.end());
  auto quantile = [&](double q) {
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const std::size_t i = static_cast<std::size_t>(pos);
    const double frac = pos - static_cast<double>(i);
    return i + 1 < sorted.size() ? sorted[i] * (1.0 - frac) + sorted[i + 1] * frac : sorted[i];
  };
  const double q1 = quantile(0.25), q3 = quantile(0.75);
  const double iqr = q3 - q1;
  for (std::size_t i = 0; i < values.size(); ++i)
    out[i] = values[i] < q1 - 1.5 * iqr || values[i] > q3 + 1.5 * iqr;
  return out;
}

inline double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

struct SweepRow {
  Mode mode;
  std::size_t alpha = 0;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  RunSummary summary;
  bool outlier_loss = false, outlier_complexity = false;
};

inline std::size_t sweep_thread_budget(std::size_t cells) {
  std::size_t n = std::thread::hardware_concurrency();
  if (const char* env = std::getenv("SHOOTING_NUM_THREADS")) {
    try {
      n = std::stoul(env);
    } catch (...) {
      throw ConfigError("SHOOTING_NUM_THREADS must be an integer");
    }
  }
  return std::max<std::size_t>(1, std::min(n, cells));
}

inline std::vector<SweepRow> run_sweep(const ExperimentConfig& c) {
  if (c.sweep_modes.empty() || c.sweep_alphas.empty() || c.sweep_seeds.empty())
    throw ConfigError("sweep: [sweep] modes, alphas and seeds must be non-empty");

  std::vector<SweepRow> rows;
  for (Mode m : c.sweep_modes)
    for (std::size_t a : c.sweep_alphas)
      for (std::uint64_t s : c.sweep_seeds) {
        SweepRow r;
        r.mode = m;
        r.alpha = a;
        r.seed = s;
        rows.push_back(r);
      }

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= rows.size()) return;
      SweepRow& r = rows[i];
      ExperimentConfig cell = c;
      cell.mode.mode = r.mode;
      cell.mode.alpha = r.alpha;
      cell.mode.particles = mode_uses_particles(r.mode) ? c.mode.particles : 0;
      cell.mode.blocks =
          r.mode == Mode::dynamic_direct ? (c.mode.blocks > 1 ? c.mode.blocks : 5) : 1;
      cell.seeds = {r.seed};
      const std::string dir = c.out_dir + "/" + mode_name(r.mode) + "_a" +
                              std::to_string(r.alpha) + "_s" + std::to_string(r.seed);
      try {
        r.summary = run_fit_seed(cell, r.seed, dir);
        r.ok = true;
      } catch (const std::exception& e) {
        r.error = e.what();
      }
    }
  };
  std::vector<std::thread> pool;
  const std::size_t nthreads = sweep_thread_budget(rows.size());
  for (std::size_t i = 0; i < nthreads; ++i) pool.emplace_back(worker);
  for (auto& th : pool) th.join();

  // outlier flags within each (mode, alpha) group
  for (Mode m : c.sweep_modes)
    for (std::size_t a : c.sweep_alphas) {
      std::vector<std::size_t> members;
      std::vector<double> losses, cplx;
      for (std::size_t i = 0; i < rows.size(); ++i)
        if (rows[i].ok && rows[i].mode == m && rows[i].alpha == a) {
          members.push_back(i);
          losses.push_back(rows[i].summary.test_loss);
          cplx.push_back(rows[i].summary.complexity);
        }
      auto ol = iqr_outliers(losses);
      auto oc = iqr_outliers(cplx);
      for (std::size_t k = 0; k < members.size(); ++k) {
        rows[members[k]].outlier_loss = ol[k];
        rows[members[k]].outlier_complexity = oc[k];
      }
    }
  return rows;
}

inline void write_sweep_csv(const std::string& path, const std::vector<SweepRow>& rows) {
  std::vector<std::vector<std::string>> out;
  for (const auto& r : rows) {
    out.push_back({mode_name(r.mode), std::to_string(r.alpha), std::to_string(r.seed),
                   r.ok ? "ok" : "failed", r.ok ? csv_double(r.summary.test_loss) : "",
                   r.ok ? csv_double(r.summary.complexity) : "",
                   r.ok ? std::to_string(r.summary.parameter_count) : "",
                   r.outlier_loss ? "1" : "0", r.outlier_complexity ? "1" : "0"});
  }
  write_csv(path,
            {"mode", "alpha", "seed", "status", "test_loss", "complexity", "param_count",
             "outlier_loss", "outlier_complexity"},
            out);
}

// ---------------------------------------------------------------------------
// dataset export
// ---------------------------------------------------------------------------

inline void write_dataset_csv(const ExperimentConfig& c, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  TaskData data = make_task_data(c, c.seeds.front());
  auto dump = [&](const std::string& name, const Batch& b) {
    std::vector<std::string> header;
    const std::size_t d_in = b.inputs.cols();
    for (std::size_t j = 0; j < d_in; ++j) header.push_back("x_" + std::to_string(j));
    const bool labels = b.targets.rank() == 1;
    if (labels) {
      header.push_back("label");
    } else {
      for (std::size_t j = 0; j < b.targets.cols(); ++j)
        header.push_back("y_" + std::to_string(j));
    }
    std::vector<std::vector<std::string>> rows;
    for (std::size_t i = 0; i < b.inputs.rows(); ++i) {
      std::vector<std::string> row;
      for (std::size_t j = 0; j < d_in; ++j) row.push_back(csv_double(b.inputs(i, j)));
      if (labels)
        row.push_back(csv_double(b.targets.data[i]));
      else
        for (std::size_t j = 0; j < b.targets.cols(); ++j)
          row.push_back(csv_double(b.targets(i, j)));
      rows.push_back(std::move(row));
    }
    write_csv(dir + "/" + name, header, rows);
  };
  dump("train.csv", data.train);
  dump("val.csv", data.val);
  dump("test.csv", data.test);
  if (data.spiral) {
    std::vector<std::vector<std::string>> rows;
    for (std::size_t k = 0; k < data.spiral->reference.shape[0]; ++k)
      rows.push_back({std::to_string(k), csv_double(static_cast<double>(k) * c.data.spiral.step),
                      csv_double(data.spiral->reference(k, 0)),
                      csv_double(data.spiral->reference(k, 1))});
    write_csv(dir + "/reference.csv", {"step", "t", "x", "y"}, rows);
  }
}

}  // namespace shooting
