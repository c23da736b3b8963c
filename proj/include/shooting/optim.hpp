#pragma once

// Minibatch Adam over the learnable parameter set (particle initial
// conditions, affine lift, direct theta blocks, readout), with the
// plateau/cosine schedulers and the particle-position freeze window.

#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "shooting/objective.hpp"
#include "shooting/random.hpp"

namespace shooting {

enum class SchedulerKind : std::uint8_t { none, plateau, cosine };

inline const char* scheduler_name(SchedulerKind k) {
  switch (k) {
    case SchedulerKind::none: return "none";
    case SchedulerKind::plateau: return "plateau";
    case SchedulerKind::cosine: return "cosine";
  }
  return "?";
}

struct OptimSpec {
  double learning_rate = 0.01;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  SchedulerKind scheduler = SchedulerKind::plateau;
  double plateau_factor = 0.5;
  std::size_t plateau_patience = 10;
  double plateau_threshold = 1e-4;  // relative improvement that resets patience
  std::size_t cosine_t_max = 0;     // 0: use the epoch count
  std::size_t epochs = 500;
  std::size_t batch_size = 50;
  std::size_t freeze_particle_positions_epochs = 50;

  void validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("optim: learning rate must be positive");
    if (!(plateau_factor > 0.0 && plateau_factor < 1.0))
      throw ConfigError("optim: plateau factor must lie in (0,1)");
    if (batch_size == 0) throw ConfigError("optim: batch size must be positive");
  }
};

// ---------------------------------------------------------------------------
// parameter registry
// ---------------------------------------------------------------------------

struct ParamRef {
  std::string name;
  Tensor* tensor;
};

// Fixed visitation order; initialization and optimizer state depend on it.
inline std::vector<ParamRef> learnables(ModeParams<Tensor>& p) {
  std::vector<ParamRef> out;
  if (p.ensemble.q.numel() > 0) {
    out.push_back({"particles_q", &p.ensemble.q});
    out.push_back({"particles_p", &p.ensemble.p});
  }
  for (std::size_t b = 0; b < p.theta_blocks.size(); ++b) {
    auto& th = p.theta_blocks[b];
    const std::string tag = "block" + std::to_string(b) + "_";
    out.push_back({tag + "theta1", &th.t1});
    out.push_back({tag + "bias1", &th.b1});
    out.push_back({tag + "theta2", &th.t2});
    out.push_back({tag + "bias2", &th.b2});
    out.push_back({tag + "theta3", &th.t3});
  }
  out.push_back({"lift_weight", &p.lift.weight});
  out.push_back({"lift_bias", &p.lift.bias});
  if (p.has_readout) {
    out.push_back({"readout_weight", &p.readout.weight});
    out.push_back({"readout_bias", &p.readout.bias});
  }
  return out;
}

inline std::size_t learnable_count(ModeParams<Tensor>& p) {
  std::size_t n = 0;
  for (const auto& ref : learnables(p)) n += ref.tensor->numel();
  return n;
}

// leaves for one objective evaluation, aligned with learnables()
inline ModeParams<Var> tape_params(Tape& tape, const ModeParams<Tensor>& p,
                                   std::vector<Var>& leaves) {
  ModeParams<Var> out;
  auto push = [&](const Tensor& t) {
    leaves.push_back(tape.leaf(t));
    return leaves.back();
  };
  if (p.ensemble.q.numel() > 0) out.ensemble = {push(p.ensemble.q), push(p.ensemble.p)};
  for (const auto& b : p.theta_blocks)
    out.theta_blocks.push_back({push(b.t1), push(b.b1), push(b.t2), push(b.b2), push(b.t3)});
  out.lift = {push(p.lift.weight), push(p.lift.bias)};
  out.has_readout = p.has_readout;
  if (p.has_readout) out.readout = {push(p.readout.weight), push(p.readout.bias)};
  return out;
}

// ---------------------------------------------------------------------------
// initialization
// ---------------------------------------------------------------------------

struct DataRange {
  double lo = -1.5, hi = 1.5;
};

// Particle x-parts are uniform over the data range; v-parts, momenta, lift,
// direct theta and readout draw from N(0, 0.1^2). Draw order is the registry
// order, entries row-major.
inline ModeParams<Tensor> init_parameters(const ModeSpec& spec, const ObjectiveSpec& ospec,
                                          const DataRange& range, Rng& rng) {
  spec.validate();
  const std::size_t d = spec.d, hid = spec.alpha * spec.d, s = (spec.alpha + 1) * spec.d;
  const double kStd = 0.1;
  ModeParams<Tensor> p;
  if (spec.uses_particles()) {
    p.ensemble.q = Tensor({spec.particles, s});
    for (std::size_t i = 0; i < spec.particles; ++i)
      for (std::size_t j = 0; j < s; ++j)
        p.ensemble.q(i, j) = j < d ? rng.uniform(range.lo, range.hi) : rng.normal(0.0, kStd);
    p.ensemble.p = Tensor({spec.particles, s});
    for (auto& v : p.ensemble.p.data) v = rng.normal(0.0, kStd);
  } else {
    const std::size_t blocks = spec.mode == Mode::dynamic_direct ? spec.blocks : 1;
    for (std::size_t b = 0; b < blocks; ++b) {
      UpDownTheta<Tensor> th{Tensor({d, hid}), Tensor({d}), Tensor({hid, d}), Tensor({hid}),
                             Tensor({hid, hid})};
      th.for_each([&](const Tensor& t) {
        for (auto& v : const_cast<Tensor&>(t).data) v = rng.normal(0.0, kStd);
      });
      p.theta_blocks.push_back(std::move(th));
    }
  }
  p.lift.weight = Tensor({hid, d});
  for (auto& v : p.lift.weight.data) v = rng.normal(0.0, kStd);
  p.lift.bias = Tensor({hid});
  for (auto& v : p.lift.bias.data) v = rng.normal(0.0, kStd);
  if (ospec.with_readout) {
    p.has_readout = true;
    p.readout.weight = Tensor({d});
    for (auto& v : p.readout.weight.data) v = rng.normal(0.0, kStd);
    p.readout.bias = Tensor::scalar(rng.normal(0.0, kStd));
  }
  return p;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

class Adam {
 public:
  Adam(const std::vector<ParamRef>& params, const OptimSpec& spec) : spec_(spec) {
    for (const auto& ref : params) {
      m_.push_back(Tensor::zeros(ref.tensor->shape));
      v_.push_back(Tensor::zeros(ref.tensor->shape));
    }
  }

  void step(const std::vector<ParamRef>& params, const std::vector<Tensor>& grads, double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(spec_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(spec_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params.size(); ++k) {
      Tensor& x = *params[k].tensor;
      const Tensor& g = grads[k];
      for (std::size_t i = 0; i < x.numel(); ++i) {
        m_[k].data[i] = spec_.beta1 * m_[k].data[i] + (1.0 - spec_.beta1) * g.data[i];
        v_[k].data[i] = spec_.beta2 * v_[k].data[i] + (1.0 - spec_.beta2) * g.data[i] * g.data[i];
        const double mhat = m_[k].data[i] / c1;
        const double vhat = v_[k].data[i] / c2;
        x.data[i] -= lr * mhat / (std::sqrt(vhat) + spec_.eps);
      }
    }
  }

 private:
  OptimSpec spec_;
  std::vector<Tensor> m_, v_;
  std::size_t t_ = 0;
};

// ---------------------------------------------------------------------------
// fit
// ---------------------------------------------------------------------------

struct EpochStats {
  std::size_t epoch;
  double train_loss;  // mean minibatch objective
  double val_loss;    // unweighted data loss on the validation set
  double lr;
  double complexity;  // NaN when theta(t) has zero norm
};

struct FitResult {
  std::vector<EpochStats> history;
  double final_val_loss = std::numeric_limits<double>::quiet_NaN();
};

// optional per-epoch regeneration of the training set
using EpochSampler = std::function<Batch(Rng&)>;

inline Batch gather_rows(const Batch& b, const std::vector<std::size_t>& idx, std::size_t lo,
                         std::size_t hi) {
  const std::size_t d_in = b.inputs.cols();
  const bool vec_targets = b.targets.rank() == 1;
  const std::size_t d_out = vec_targets ? 1 : b.targets.cols();
  Batch out;
  out.inputs = Tensor({hi - lo, d_in});
  out.targets = vec_targets ? Tensor({hi - lo}) : Tensor({hi - lo, d_out});
  for (std::size_t r = lo; r < hi; ++r) {
    for (std::size_t c = 0; c < d_in; ++c) out.inputs(r - lo, c) = b.inputs(idx[r], c);
    if (vec_targets)
      out.targets.data[r - lo] = b.targets.data[idx[r]];
    else
      for (std::size_t c = 0; c < d_out; ++c) out.targets(r - lo, c) = b.targets(idx[r], c);
  }
  return out;
}

// complexity of the current parameters: theta(t) does not depend on the
// data, so an empty-batch rollout carries the full schedule
inline double params_complexity(const ModeParams<Tensor>& params, const ModeSpec& spec,
                                const IntegratorSpec& integ) {
  Tensor empty({0, spec.d});
  try {
    return complexity_metric(mode_forward(params, empty, spec, integ, false));
  } catch (const UndefinedMetricError&) {
    return std::numeric_limits<double>::quiet_NaN();
  }
}

inline double evaluate_data_loss(const ModeParams<Tensor>& params, const Batch& data,
                                 const ModeSpec& mspec, const IntegratorSpec& integ,
                                 const ObjectiveSpec& ospec) {
  return total_objective(params, data, mspec, integ, ospec).data_loss.data[0];
}

inline bool spec_freezes_positions(const ModeSpec& mspec, const OptimSpec& optim,
                                   std::size_t epoch) {
  return mspec.uses_particles() && epoch < optim.freeze_particle_positions_epochs;
}

inline FitResult fit(ModeParams<Tensor>& params, const Batch& train, const Batch& val,
                     const ModeSpec& mspec, const IntegratorSpec& integ,
                     const ObjectiveSpec& ospec, const OptimSpec& optim, Rng& rng,
                     const EpochSampler& sampler = nullptr) {
  optim.validate();
  auto refs = learnables(params);
  Adam adam(refs, optim);
  double lr = optim.learning_rate;

  // plateau state
  double best_val = std::numeric_limits<double>::infinity();
  std::size_t stale = 0;

  FitResult out;
  Batch working = train;
  for (std::size_t epoch = 0; epoch < optim.epochs; ++epoch) {
    if (sampler) working = sampler(rng);
    const std::size_t n = working.inputs.rows();
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    rng.shuffle(idx);

    const bool freeze = spec_freezes_positions(mspec, optim, epoch);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t lo = 0; lo < n; lo += optim.batch_size) {
      const std::size_t hi = std::min(n, lo + optim.batch_size);
      Batch mb = gather_rows(working, idx, lo, hi);

      Tape tape;
      std::vector<Var> leaves;
      ModeParams<Var> taped = tape_params(tape, params, leaves);
      auto parts = total_objective(taped, mb, mspec, integ, ospec);
      const double loss = parts.total.value().data[0];
      if (!std::isfinite(loss))
        throw DivergenceError(epoch, "fit: non-finite loss at epoch " + std::to_string(epoch) +
                                         ", batch " + std::to_string(batches));
      auto grads = tape.gradients(parts.total, leaves);
      std::vector<Tensor> gvals;
      gvals.reserve(grads.size());
      for (std::size_t k = 0; k < grads.size(); ++k) {
        Tensor g = grads[k].value();
        if (freeze && refs[k].name == "particles_q") g = Tensor::zeros(g.shape);
        gvals.push_back(std::move(g));
      }
      adam.step(refs, gvals, lr);
      loss_sum += loss;
      ++batches;
    }

    const double val_loss = evaluate_data_loss(params, val, mspec, integ, ospec);
    EpochStats st;
    st.epoch = epoch;
    st.train_loss = batches ? loss_sum / static_cast<double>(batches) : 0.0;
    st.val_loss = val_loss;
    st.lr = lr;
    st.complexity = params_complexity(params, mspec, integ);
    out.history.push_back(st);

    switch (optim.scheduler) {
      case SchedulerKind::none:
        break;
      case SchedulerKind::plateau: {
        if (val_loss < best_val * (1.0 - optim.plateau_threshold)) {
          best_val = val_loss;
          stale = 0;
        } else {
          if (++stale > optim.plateau_patience) {
            lr *= optim.plateau_factor;
            stale = 0;
          }
        }
        break;
      }
      case SchedulerKind::cosine: {
        const double tmax =
            static_cast<double>(optim.cosine_t_max ? optim.cosine_t_max : optim.epochs);
        const double frac = static_cast<double>(epoch + 1) / tmax;
        lr = optim.learning_rate * 0.5 *
             (1.0 + std::cos(3.141592653589793238462643383279502884 * std::min(frac, 1.0)));
        break;
      }
    }
  }
  out.final_val_loss =
      out.history.empty() ? evaluate_data_loss(params, val, mspec, integ, ospec)
                          : out.history.back().val_loss;
  return out;
}

}  // namespace shooting
