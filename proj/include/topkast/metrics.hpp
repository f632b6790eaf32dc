#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "topkast/graph.hpp"
#include "topkast/masking.hpp"

namespace topkast {

/// Forward-mask bitmaps of the tracked layers at one step.
struct MaskSnapshot {
  std::int64_t step = 0;
  std::vector<std::vector<std::uint8_t>> layers;

  static MaskSnapshot from_sets(std::int64_t step, const std::vector<IndexSet>& active, const std::vector<Index>& sizes);

  std::size_t popcount(std::size_t layer) const;
};

struct ChurnReport {
  std::vector<double> per_layer;
  double min = 0.0;
  double mean = 0.0;
  double max = 0.0;
};

/// Per layer: |m xor m'| / n. Aggregates are over layers; all zero when no
/// layer is tracked.
ChurnReport mask_churn(const MaskSnapshot& first, const MaskSnapshot& second);

/// |c0 ∩ history| / |c0|, defined as 0 for an empty reservoir.
double reservoir_activation(const IndexSet& c0, const IndexSet& a_history);

/// Follows which initially-unused weights (outside B at step 0) have ever
/// entered the forward set.
class ReservoirTracker {
 public:
  ReservoirTracker() = default;
  ReservoirTracker(const std::vector<IndexSet>& initial_a, const std::vector<IndexSet>& initial_b,
                   const std::vector<Index>& sizes);

  void observe(const std::vector<IndexSet>& active);
  double fraction() const;

  const std::vector<std::vector<std::uint8_t>>& reservoir() const { return reservoir_; }
  const std::vector<std::vector<std::uint8_t>>& history() const { return history_; }
  static ReservoirTracker restore(std::vector<std::vector<std::uint8_t>> reservoir,
                                  std::vector<std::vector<std::uint8_t>> history);

  friend bool operator==(const ReservoirTracker&, const ReservoirTracker&) = default;

 private:
  std::vector<std::vector<std::uint8_t>> reservoir_;
  std::vector<std::vector<std::uint8_t>> history_;
  std::uint64_t reservoir_size_ = 0;
  std::uint64_t activated_ = 0;
};

/// FLOP costs of one matmul layer, per example, 2 FLOPs per multiply-add.
struct LayerFlops {
  std::string name;
  Index rows = 0;
  Index cols = 0;
  double density = 1.0;           // forward density D
  double backward_density = 1.0;  // D + M
  double dense_fwd = 0.0;
  double sparse_fwd = 0.0;
  double input_grad = 0.0;   // at forward density
  double weight_grad = 0.0;  // at backward density
  double dense_bwd = 0.0;
  double sparse_bwd = 0.0;
  double topk_overhead = 0.0;  // comparisons per step, amortised over the refresh period

  double fwd_ratio = 1.0;
  double input_grad_ratio = 1.0;
  double weight_grad_ratio = 1.0;
  double bwd_ratio = 1.0;
};

struct FlopReport {
  static constexpr const char* kConvention =
      "2 FLOPs per multiply-add, per example, matmul weights only; forward = 2*D*n*m; "
      "backward = 2*D*n*m (input grad) + 2*(D+M)*n*m (weight grad); top-k overhead = "
      "|W|*log2|W| comparisons per refresh, amortised over the refresh period";

  std::vector<LayerFlops> layers;
  LayerFlops total;
};

/// Closed-form training cost of every matmul in `graph` under `spec`.
/// `exempt` is indexed by parameter slot; exempt layers count as dense.
template <typename Scalar>
FlopReport flop_estimate(const ComputeGraph<Scalar>& graph, const SparsitySpec& spec,
                         const std::vector<bool>& exempt = {}) {
  FlopReport report;
  report.total.name = "total";
  for (const auto& node : graph.nodes()) {
    if (node.kind != OpKind::MatMul) continue;
    const ParamSlot& slot = graph.slots()[static_cast<std::size_t>(node.slot)];
    const bool dense = !exempt.empty() && exempt[static_cast<std::size_t>(node.slot)];
    LayerFlops f;
    f.name = slot.name;
    f.rows = slot.shape[0];
    f.cols = slot.shape[1];
    f.density = dense ? 1.0 : spec.density();
    f.backward_density = dense ? 1.0 : spec.backward_density();
    const double nm = static_cast<double>(f.rows) * static_cast<double>(f.cols);
    f.dense_fwd = 2.0 * nm;
    f.sparse_fwd = f.dense_fwd * f.density;
    f.input_grad = f.dense_fwd * f.density;
    f.weight_grad = f.dense_fwd * f.backward_density;
    f.dense_bwd = 2.0 * f.dense_fwd;
    f.sparse_bwd = f.input_grad + f.weight_grad;
    f.topk_overhead = dense ? 0.0 : nm * std::log2(nm) / static_cast<double>(spec.refresh_period);
    f.fwd_ratio = f.density;
    f.input_grad_ratio = f.density;
    f.weight_grad_ratio = f.backward_density;
    f.bwd_ratio = f.sparse_bwd / f.dense_bwd;
    report.layers.push_back(f);
  }
  LayerFlops& t = report.total;
  for (const LayerFlops& f : report.layers) {
    t.rows += f.rows;
    t.cols += f.cols;
    t.dense_fwd += f.dense_fwd;
    t.sparse_fwd += f.sparse_fwd;
    t.input_grad += f.input_grad;
    t.weight_grad += f.weight_grad;
    t.dense_bwd += f.dense_bwd;
    t.sparse_bwd += f.sparse_bwd;
    t.topk_overhead += f.topk_overhead;
  }
  if (t.dense_fwd > 0) {
    t.fwd_ratio = t.sparse_fwd / t.dense_fwd;
    t.input_grad_ratio = t.input_grad / t.dense_fwd;
    t.weight_grad_ratio = t.weight_grad / t.dense_fwd;
    t.bwd_ratio = t.sparse_bwd / t.dense_bwd;
    t.density = t.fwd_ratio;
    t.backward_density = t.weight_grad_ratio;
  }
  return report;
}

}  // namespace topkast
