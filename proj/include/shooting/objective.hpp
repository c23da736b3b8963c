#pragma once

// Losses, the time-integrated weight penalty, the assembled training
// objective, and the reported complexity metric.

#include <cmath>
#include <optional>
#include <vector>

#include "shooting/modes.hpp"

namespace shooting {

enum class LossKind : std::uint8_t { mse, mse_trajectory, binary_cross_entropy };

inline const char* loss_name(LossKind k) {
  switch (k) {
    case LossKind::mse: return "mse";
    case LossKind::mse_trajectory: return "mse_trajectory";
    case LossKind::binary_cross_entropy: return "binary_cross_entropy";
  }
  return "?";
}

struct ObjectiveSpec {
  LossKind loss = LossKind::mse;
  double gamma = 100.0;      // data-loss weight
  double lambda_reg = 1.0;   // penalty-integral weight
  bool with_readout = false; // classification: affine readout R^d -> R on x(T)

  void validate() const {
    if (!(gamma > 0.0)) throw ConfigError("objective: gamma must be positive");
    if (lambda_reg < 0.0) throw ConfigError("objective: lambda_reg must be nonnegative");
    if ((loss == LossKind::binary_cross_entropy) != with_readout)
      throw ConfigError("objective: readout is required exactly for classification");
  }
};

template <typename T>
LinearFieldTheta<T> pack_theta(const std::vector<T>& parts, const LinearModel&) {
  return {parts[0], parts[1]};
}
template <typename T>
UpDownTheta<T> pack_theta(const std::vector<T>& parts, const UpDownModel&) {
  return {parts[0], parts[1], parts[2], parts[3], parts[4]};
}

// Trapezoidal quadrature of R(theta(t)) over the recorded grid, segment by
// segment so piecewise-constant schedules integrate exactly.
template <typename T, typename Model>
T regularizer_integral(const Trajectory<T>& traj, const Model& model, const Ctx<T>& ctx) {
  if (traj.segments.empty()) throw ShapeError("regularizer_integral: empty trajectory");
  std::optional<T> acc;
  for (const auto& seg : traj.segments) {
    auto nodes = seg.node_records();
    if (nodes.size() != seg.times.size())
      throw ShapeError("regularizer_integral: missing node records");
    std::vector<T> rs;
    rs.reserve(nodes.size());
    for (const auto* rec : nodes) rs.push_back(penalty_value(pack_theta(rec->theta, model), model, ctx));
    for (std::size_t k = 1; k < rs.size(); ++k) {
      const double w = 0.5 * (seg.times[k] - seg.times[k - 1]);
      T piece = scale(add(rs[k - 1], rs[k]), w);
      acc = acc ? add(*acc, piece) : piece;
    }
  }
  return *acc;
}

// time-integral of log2 ||theta(t)||_F with theta(t) the unweighted
// concatenation of all weight and bias components
inline double complexity_metric(const Trajectory<Tensor>& traj) {
  if (traj.segments.empty()) throw ShapeError("complexity_metric: empty trajectory");
  double acc = 0.0;
  for (const auto& seg : traj.segments) {
    auto nodes = seg.node_records();
    std::vector<double> integrand;
    integrand.reserve(nodes.size());
    for (const auto* rec : nodes) {
      double sq = 0.0;
      for (const Tensor& part : rec->theta) sq += frobenius_norm_sq(part);
      if (sq <= 0.0)
        throw UndefinedMetricError("complexity_metric: zero-norm theta at t=" +
                                   std::to_string(rec->t));
      integrand.push_back(std::log2(std::sqrt(sq)));
    }
    for (std::size_t k = 1; k < integrand.size(); ++k)
      acc += 0.5 * (seg.times[k] - seg.times[k - 1]) * (integrand[k - 1] + integrand[k]);
  }
  return acc;
}

// spread of the complexity integrand over the grid (conserved flows keep it
// constant)
inline double complexity_integrand_spread(const Trajectory<Tensor>& traj) {
  double lo = 0.0, hi = 0.0;
  bool first = true;
  for (const auto& seg : traj.segments)
    for (const auto* rec : seg.node_records()) {
      double sq = 0.0;
      for (const Tensor& part : rec->theta) sq += frobenius_norm_sq(part);
      const double v = std::log2(std::sqrt(sq));
      lo = first ? v : std::min(lo, v);
      hi = first ? v : std::max(hi, v);
      first = false;
    }
  return hi - lo;
}

// ---------------------------------------------------------------------------
// data losses
// ---------------------------------------------------------------------------

// mean over all entries of the squared difference
template <typename T>
T mse_of(const T& pred, const T& target_like) {
  T diff = sub(pred, target_like);
  const double n = static_cast<double>(value_of(pred).numel());
  return scale(sum_all(mul(diff, diff)), 1.0 / n);
}

template <typename T>
T readout_logits(const T& x_rows, const Readout<T>& r) {
  T z = matmul(x_rows, r.weight);
  return add(z, bcast(r.bias, value_of(z).shape));
}

template <typename T>
struct ObjectiveParts {
  T total;      // lambda_reg * integral R + gamma * data loss
  T data_loss;  // unweighted data term
  T reg_integral;
};

struct Batch {
  Tensor inputs;   // n x d
  Tensor targets;  // mse: n x d_out; mse_trajectory: n x (steps*d); bce: n (labels)
};

// Runs the mode forward and assembles the full training objective.
template <typename T>
ObjectiveParts<T> total_objective(const ModeParams<T>& params, const Batch& batch,
                                  const ModeSpec& mspec, const IntegratorSpec& integ,
                                  const ObjectiveSpec& ospec) {
  ospec.validate();
  Ctx<T> ctx = ctx_for(params.lift.bias);
  T x0 = ctx.constant(batch.inputs);

  const bool need_states = ospec.loss == LossKind::mse_trajectory;
  Trajectory<T> traj = mode_forward(params, x0, mspec, integ, need_states);

  T data;
  switch (ospec.loss) {
    case LossKind::mse: {
      data = mse_of(traj.final_x(), ctx.constant(batch.targets));
      break;
    }
    case LossKind::mse_trajectory: {
      // targets hold the states at grid nodes 1..N, row-concatenated
      auto xs = traj.grid_x();
      std::optional<T> pred;
      for (std::size_t k = 1; k < xs.size(); ++k)
        pred = pred ? concat_cols(*pred, *xs[k]) : *xs[k];
      if (!pred) throw ShapeError("total_objective: trajectory loss needs at least one step");
      data = mse_of(*pred, ctx.constant(batch.targets));
      break;
    }
    case LossKind::binary_cross_entropy: {
      if (!params.has_readout) throw ConfigError("total_objective: readout parameters missing");
      T z = readout_logits(traj.final_x(), params.readout);
      const double n = static_cast<double>(batch.targets.numel());
      data = scale(bce_logits_sum(z, ctx.constant(batch.targets)), 1.0 / n);
      break;
    }
  }

  ObjectiveParts<T> out;
  out.data_loss = data;
  out.reg_integral = regularizer_integral(traj, mspec.model(), ctx);
  out.total = add(scale(out.reg_integral, ospec.lambda_reg), scale(data, ospec.gamma));
  return out;
}

// fraction of rows whose thresholded readout matches the 0/1 label
inline double classification_accuracy(const Tensor& x_rows, const Readout<Tensor>& r,
                                      const Tensor& labels) {
  Tensor z = readout_logits(x_rows, r);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < z.numel(); ++i)
    if ((z.data[i] > 0.0) == (labels.data[i] > 0.5)) ++hits;
  return static_cast<double>(hits) / static_cast<double>(z.numel());
}

}  // namespace shooting
