#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "topkast/baselines.hpp"
#include "topkast/graph.hpp"
#include "topkast/masking.hpp"
#include "topkast/param_store.hpp"

namespace topkast {

/// Penalty on the active set plus a 1/D-scaled penalty on the exploration
/// set B \ A. Offsets outside B contribute nothing.
template <typename Scalar>
double exploration_loss(std::span<const Scalar> theta, const IndexSet& a, const IndexSet& b, double density,
                        int exponent) {
  if (!(density > 0.0)) throw ArgumentError("density must be positive");
  if (exponent != 1 && exponent != 2) throw ArgumentError("regulariser exponent must be 1 or 2");
  double active = 0.0;
  double explore = 0.0;
  std::size_t ai = 0;
  for (std::uint32_t i : b) {
    while (ai < a.size() && a[ai] < i) ++ai;
    const double w = std::abs(static_cast<double>(theta[i]));
    const double term = exponent == 1 ? w : w * w;
    if (ai < a.size() && a[ai] == i) {
      active += term;
    } else {
      explore += term;
    }
  }
  return active + explore / density;
}

/// Gradient of exploration_loss, supported on B. sign(0) = 0 for p = 1.
template <typename Scalar>
SparseGrad<Scalar> exploration_grad(std::span<const Scalar> theta, const IndexSet& a, const IndexSet& b,
                                    double density, int exponent) {
  if (!(density > 0.0)) throw ArgumentError("density must be positive");
  if (exponent != 1 && exponent != 2) throw ArgumentError("regulariser exponent must be 1 or 2");
  SparseGrad<Scalar> g;
  g.indices = b;
  g.values.resize(b.size());
  const Scalar inv_density = static_cast<Scalar>(1.0 / density);
  std::size_t ai = 0;
  for (std::size_t k = 0; k < b.size(); ++k) {
    const std::uint32_t i = b[k];
    while (ai < a.size() && a[ai] < i) ++ai;
    const Scalar w = theta[i];
    const Scalar d = exponent == 1 ? static_cast<Scalar>((w > 0) - (w < 0)) : Scalar(2) * w;
    g.values[k] = (ai < a.size() && a[ai] == i) ? d : d * inv_density;
  }
  return g;
}

/// Linear warmup followed by multiplicative step decays.
struct LrSchedule {
  double base = 0.1;
  std::int64_t warmup_steps = 0;
  std::vector<std::int64_t> decay_steps;
  double decay_factor = 0.1;

  static LrSchedule constant(double lr) { return {lr, 0, {}, 1.0}; }

  /// Warmup over `warmup_fraction` of the run, decays at the given fractions.
  static LrSchedule for_run(double lr, std::int64_t total_steps, double warmup_fraction,
                            const std::vector<double>& decay_fractions, double factor) {
    LrSchedule s{lr, round_count(warmup_fraction, total_steps), {}, factor};
    for (double f : decay_fractions) s.decay_steps.push_back(round_count(f, total_steps));
    return s;
  }

  double at(std::int64_t step) const {
    double lr = base;
    if (warmup_steps > 0 && step < warmup_steps) {
      lr *= static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
    }
    for (std::int64_t d : decay_steps) {
      if (step >= d) lr *= decay_factor;
    }
    return lr;
  }
};

enum class BSelection { TopK, Random };

struct Ablation {
  BSelection b_selection = BSelection::TopK;
  /// From this step on, B collapses to A.
  std::optional<std::int64_t> stop_exploration_at_step;
};

struct OptimizerSettings {
  LrSchedule schedule;
  double reg_coeff = 1e-4;
  int reg_exponent = 1;
  double momentum = 0.0;  // 0 disables the accumulator
  bool zero_momentum_on_mask_change = false;
};

template <typename Scalar>
struct OptimizerState {
  DenseParamStore<Scalar> store;
  MaskPair masks;
  std::int64_t step = 0;
  SparsitySpec sparsity;
  std::vector<bool> exempt;
  OptimizerSettings settings;
  Ablation ablation;
  BaselineKind baseline;
  std::uint64_t seed = 0;
  std::vector<Vector<Scalar>> momentum;  // dense-shaped; only B entries are meaningful

  double learning_rate() const { return settings.schedule.at(step); }

  bool exploration_stopped() const {
    return ablation.stop_exploration_at_step && step >= *ablation.stop_exploration_at_step;
  }
};

template <typename Scalar>
OptimizerState<Scalar> make_state(DenseParamStore<Scalar> store, SparsitySpec sparsity, OptimizerSettings settings,
                                  Ablation ablation, BaselineKind baseline, std::uint64_t seed) {
  sparsity.validate();
  baseline.validate();
  OptimizerState<Scalar> s;
  s.exempt = exempt_flags(store, sparsity);
  s.store = std::move(store);
  s.sparsity = std::move(sparsity);
  s.settings = settings;
  s.ablation = ablation;
  s.baseline = baseline;
  s.seed = seed;
  if (settings.momentum > 0.0) {
    for (const auto& layer : s.store) s.momentum.push_back(Vector<Scalar>::Zero(layer.value.size()));
  }
  return s;
}

/// theta_i -= lr * (primary_i + reg_coeff * reg_i) for i in B, through the
/// momentum accumulator when enabled. Every record must be supported on B.
template <typename Scalar>
void apply_update(OptimizerState<Scalar>& state, std::span<const SparseGrad<Scalar>> primary,
                  std::span<const SparseGrad<Scalar>> reg) {
  const std::size_t layers = state.store.size();
  if (primary.size() != layers || (!reg.empty() && reg.size() != layers) || state.masks.layers.size() != layers) {
    throw DimensionError("gradient records do not match the parameter store");
  }
  const Scalar lr = static_cast<Scalar>(state.learning_rate());
  const Scalar lambda = static_cast<Scalar>(state.settings.reg_coeff);
  const Scalar mu = static_cast<Scalar>(state.settings.momentum);
  std::vector<Scalar> delta;
  for (std::size_t l = 0; l < layers; ++l) {
    const IndexSet& b = state.masks.layers[l].b;
    auto scatter = [&](const SparseGrad<Scalar>& g, Scalar scale, const char* what) {
      if (g.values.size() != g.indices.size()) throw DimensionError("malformed gradient record");
      std::size_t bi = 0;
      for (std::size_t k = 0; k < g.indices.size(); ++k) {
        const std::uint32_t i = g.indices[k];
        while (bi < b.size() && b[bi] < i) ++bi;
        if (bi == b.size() || b[bi] != i) {
          throw ContractError(std::string(what) + " gradient for '" + state.store[l].name + "' touches offset " +
                              std::to_string(i) + " outside the backward set");
        }
        if (scale == Scalar(1)) {
          delta[bi] += g.values[k];
        } else {
          delta[bi] += scale * g.values[k];
        }
      }
    };
    delta.assign(b.size(), Scalar(0));
    scatter(primary[l], Scalar(1), "primary");
    if (!reg.empty()) scatter(reg[l], lambda, "regulariser");

    Scalar* theta = state.store[l].value.values().data();
    if (state.momentum.empty()) {
      for (std::size_t k = 0; k < b.size(); ++k) theta[b[k]] -= lr * delta[k];
    } else {
      Scalar* v = state.momentum[l].data();
      for (std::size_t k = 0; k < b.size(); ++k) {
        v[b[k]] = mu * v[b[k]] + delta[k];
        theta[b[k]] -= lr * v[b[k]];
      }
    }
  }
  ++state.step;
}

namespace detail {

template <typename Scalar>
void zero_momentum_outside(OptimizerState<Scalar>& state, const MaskPair& before) {
  if (state.momentum.empty() || !state.settings.zero_momentum_on_mask_change || before.layers.empty()) return;
  for (std::size_t l = 0; l < state.store.size(); ++l) {
    const IndexSet& old_b = before.layers[l].b;
    const IndexSet& new_b = state.masks.layers[l].b;
    std::size_t ni = 0;
    for (std::uint32_t i : old_b) {
      while (ni < new_b.size() && new_b[ni] < i) ++ni;
      if (ni == new_b.size() || new_b[ni] != i) state.momentum[l][i] = Scalar(0);
    }
  }
}

template <typename Scalar>
std::vector<Index> layer_sizes(const DenseParamStore<Scalar>& store) {
  std::vector<Index> sizes;
  for (const auto& layer : store) sizes.push_back(layer.value.size());
  return sizes;
}

/// Top-k masks at the current step, with the random-B and stop-exploration
/// ablations applied.
template <typename Scalar>
void rebuild_topkast_masks(OptimizerState<Scalar>& state) {
  state.masks = compute_mask_pair(state.store, state.sparsity, state.exempt, state.step);
  if (state.exploration_stopped()) {
    for (LayerMask& m : state.masks.layers) m.b = m.a;
    return;
  }
  if (state.ablation.b_selection != BSelection::Random) return;
  for (std::size_t l = 0; l < state.store.size(); ++l) {
    if (state.exempt[l]) continue;
    LayerMask& m = state.masks.layers[l];
    const Index extra = static_cast<Index>(m.b.size()) - static_cast<Index>(m.a.size());
    std::mt19937_64 rng = derive_rng(state.seed, Stream::RandomBackward, static_cast<std::uint64_t>(state.step), l);
    m.b = random_b_complement(state.store[l].value.size(), m.a, extra, rng);
  }
}

}  // namespace detail

/// Builds the step-0 masks for the state's method.
template <typename Scalar>
void initialize_masks(OptimizerState<Scalar>& state) {
  switch (state.baseline.kind) {
    case Method::Dense: {
      state.masks.layers.clear();
      for (const auto& layer : state.store) {
        state.masks.layers.push_back({all_indices(layer.value.size()), all_indices(layer.value.size())});
      }
      break;
    }
    case Method::Static:
    case Method::Set: {
      const std::vector<Index> sizes = detail::layer_sizes(state.store);
      state.masks = static_mask_init(sizes, state.sparsity.s_fwd, state.seed, state.exempt);
      break;
    }
    case Method::TopKast:
      detail::rebuild_topkast_masks(state);
      break;
  }
  state.masks.step_built = state.step;
}

/// Applies the method's mask schedule for the current step. Returns true when
/// any mask changed.
template <typename Scalar>
bool refresh_masks(OptimizerState<Scalar>& state) {
  if (state.masks.layers.empty()) {
    initialize_masks(state);
    return true;
  }
  const MaskPair before = state.masks;
  switch (state.baseline.kind) {
    case Method::Dense:
    case Method::Static:
      return false;
    case Method::Set: {
      if (state.step == 0 || state.step % state.baseline.set_update_period != 0) return false;
      for (std::size_t l = 0; l < state.store.size(); ++l) {
        if (state.exempt[l]) continue;
        auto& layer = state.store[l];
        std::mt19937_64 rng = derive_rng(state.seed, Stream::SetRegrow, static_cast<std::uint64_t>(state.step), l);
        IndexSet a = set_regrow(layer.value.flat(), state.masks.layers[l].a, state.baseline.set_prune_fraction,
                                init_sampler(layer.init_std), rng);
        state.masks.layers[l] = {a, a};
      }
      state.masks.step_built = state.step;
      break;
    }
    case Method::TopKast: {
      if (refresh_due(state.step, state.sparsity)) {
        detail::rebuild_topkast_masks(state);
      } else if (state.exploration_stopped()) {
        for (LayerMask& m : state.masks.layers) m.b = m.a;
      }
      break;
    }
  }
  const bool changed = !(state.masks.layers == before.layers);
  if (changed) detail::zero_momentum_outside(state, before);
  return changed;
}

/// Forward-view alpha for every layer.
template <typename Scalar>
std::vector<Tensor<Scalar>> masked_params(const OptimizerState<Scalar>& state) {
  std::vector<Tensor<Scalar>> alpha;
  alpha.reserve(state.store.size());
  for (std::size_t l = 0; l < state.store.size(); ++l) {
    if (state.masks.layers[l].a.size() == static_cast<std::size_t>(state.store[l].value.size())) {
      alpha.push_back(state.store[l].value);
    } else {
      alpha.push_back(apply_mask(state.store[l].value, state.masks.layers[l].a));
    }
  }
  return alpha;
}

/// Total exploration penalty over weight layers (biases are not penalised).
template <typename Scalar>
double total_exploration_loss(const OptimizerState<Scalar>& state) {
  double total = 0.0;
  for (std::size_t l = 0; l < state.store.size(); ++l) {
    if (!state.store[l].is_weight) continue;
    const LayerMask& m = state.masks.layers[l];
    total += exploration_loss(state.store[l].value.flat(), m.a, m.b, state.sparsity.density(),
                              state.settings.reg_exponent);
  }
  return total;
}

/// Per-layer exploration gradients; bias layers get empty records.
template <typename Scalar>
std::vector<SparseGrad<Scalar>> total_exploration_grad(const OptimizerState<Scalar>& state) {
  std::vector<SparseGrad<Scalar>> out(state.store.size());
  for (std::size_t l = 0; l < state.store.size(); ++l) {
    if (!state.store[l].is_weight) continue;
    const LayerMask& m = state.masks.layers[l];
    out[l] = exploration_grad(state.store[l].value.flat(), m.a, m.b, state.sparsity.density(),
                              state.settings.reg_exponent);
  }
  return out;
}

/// Inputs and targets of one minibatch.
template <typename Scalar>
struct Batch {
  Matrix<Scalar> inputs;              // (batch, features)
  std::vector<int> labels;            // classification
  std::optional<Tensor<Scalar>> targets;  // regression
};

template <typename Scalar>
Scalar evaluate_loss(ComputeGraph<Scalar>& graph, const Batch<Scalar>& batch) {
  return batch.targets ? graph.loss(*batch.targets) : graph.loss(std::span<const int>(batch.labels));
}

struct StepMetrics {
  double loss = 0.0;
  double reg_loss = 0.0;
  double seconds = 0.0;
  bool finite = true;
  bool masks_changed = false;
};

/// One training step: refresh masks when due, forward on alpha, backward on
/// B, add the exploration gradient, update theta on B.
template <typename Scalar>
StepMetrics train_step(OptimizerState<Scalar>& state, ComputeGraph<Scalar>& graph, const Batch<Scalar>& batch) {
  const auto start = std::chrono::steady_clock::now();
  StepMetrics metrics;
  metrics.masks_changed = refresh_masks(state);

  const std::vector<Tensor<Scalar>> alpha = masked_params(state);
  std::vector<SparseGrad<Scalar>> primary;
  try {
    graph.forward_matrix(alpha, batch.inputs);
    metrics.loss = static_cast<double>(evaluate_loss(graph, batch));
    std::vector<ActiveSet> active;
    active.reserve(state.masks.layers.size());
    for (const LayerMask& m : state.masks.layers) active.push_back(ActiveSet::of(m.b));
    primary = graph.backward(Scalar(1), active);
  } catch (const NumericError&) {
    metrics.finite = false;
    metrics.loss = std::numeric_limits<double>::quiet_NaN();
    ++state.step;
    metrics.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return metrics;
  }
  metrics.reg_loss = total_exploration_loss(state);
  const std::vector<SparseGrad<Scalar>> reg = total_exploration_grad(state);
  apply_update<Scalar>(state, primary, reg);
  metrics.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return metrics;
}

}  // namespace topkast
