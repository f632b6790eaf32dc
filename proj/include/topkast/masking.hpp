#pragma once

#include <algorithm>
#include <bit>
#include <type_traits>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "topkast/param_store.hpp"
#include "topkast/rng.hpp"
#include "topkast/tensor.hpp"

namespace topkast {

/// Forward/backward sparsity levels and refresh cadence.
///
/// Forward density D = 1 - s_fwd, exploration fraction M = s_fwd - s_bwd,
/// so the backward set covers a (D + M) = 1 - s_bwd fraction of each layer.
struct SparsitySpec {
  double s_fwd = 0.0;
  double s_bwd = 0.0;
  std::int64_t refresh_period = 1;
  /// Layer names ("fc0"), full slot names ("fc0.weight"), or "first"/"last".
  std::set<std::string> dense_exempt;

  double density() const { return 1.0 - s_fwd; }
  double exploration() const { return s_fwd - s_bwd; }
  double backward_density() const { return 1.0 - s_bwd; }

  void validate() const {
    if (!(s_fwd >= 0.0 && s_fwd < 1.0)) throw ArgumentError("forward sparsity must lie in [0, 1)");
    if (!(s_bwd >= 0.0 && s_bwd < 1.0)) throw ArgumentError("backward sparsity must lie in [0, 1)");
    if (s_bwd > s_fwd) throw ArgumentError("backward sparsity may not exceed forward sparsity");
    if (refresh_period < 1) throw ArgumentError("refresh period must be at least 1");
  }
};

/// Active (forward) and updatable (backward) offsets of one parameter tensor.
struct LayerMask {
  IndexSet a;
  IndexSet b;

  friend bool operator==(const LayerMask&, const LayerMask&) = default;
};

struct MaskPair {
  std::vector<LayerMask> layers;
  std::int64_t step_built = 0;

  friend bool operator==(const MaskPair&, const MaskPair&) = default;
};

inline IndexSet all_indices(Index n) {
  IndexSet out(static_cast<std::size_t>(n));
  std::iota(out.begin(), out.end(), 0u);
  return out;
}

/// round-half-up(fraction * n) with a small guard against representation error.
inline Index round_count(double fraction, Index n) {
  return static_cast<Index>(std::floor(fraction * static_cast<double>(n) + 0.5 + 1e-9));
}

namespace detail {

/// Sort key ordering by descending magnitude, then ascending offset.
struct WideKey {
  std::uint64_t inv_magnitude;
  std::uint32_t index;

  friend bool operator<(const WideKey& x, const WideKey& y) {
    return x.inv_magnitude < y.inv_magnitude || (x.inv_magnitude == y.inv_magnitude && x.index < y.index);
  }
};

// The bit pattern of a non-negative IEEE value is monotone in the value, so
// 32-bit magnitudes pack with the offset into a single integer key.
template <typename Scalar>
using RankKey = std::conditional_t<sizeof(Scalar) == 4, std::uint64_t, WideKey>;

template <typename Scalar>
RankKey<Scalar> rank_key(Scalar v, std::uint32_t index) {
  if constexpr (sizeof(Scalar) == 4) {
    const std::uint32_t mag = std::bit_cast<std::uint32_t>(static_cast<float>(v)) & 0x7fffffffu;
    return (static_cast<std::uint64_t>(~mag & 0x7fffffffu) << 32) | index;
  } else {
    const double mag = std::abs(static_cast<double>(v));
    return {~std::bit_cast<std::uint64_t>(mag), index};
  }
}

template <typename Scalar>
std::vector<RankKey<Scalar>> rank_keys(std::span<const Scalar> values) {
  std::vector<RankKey<Scalar>> keys(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) keys[i] = rank_key(values[i], static_cast<std::uint32_t>(i));
  return keys;
}

/// Offsets whose key ranks within the first `k` (keys are unique), ascending.
template <typename Scalar>
IndexSet select_upto(std::span<const Scalar> values, const RankKey<Scalar>& kth, Index k) {
  IndexSet out;
  out.reserve(static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!(kth < rank_key(values[i], static_cast<std::uint32_t>(i)))) out.push_back(static_cast<std::uint32_t>(i));
  }
  return out;
}

}  // namespace detail

/// Offsets of the k largest-magnitude entries, ties going to the lower
/// offset, returned in ascending order.
template <typename Scalar>
IndexSet topk_indices(std::span<const Scalar> values, Index k) {
  const Index n = static_cast<Index>(values.size());
  if (k < 0 || k > n) throw ArgumentError("top-k count " + std::to_string(k) + " outside [0, " + std::to_string(n) + "]");
  if (k == n) return all_indices(n);
  if (k == 0) return {};
  std::vector<detail::RankKey<Scalar>> keys = detail::rank_keys(values);
  std::nth_element(keys.begin(), keys.begin() + (k - 1), keys.end());
  return detail::select_upto(values, keys[static_cast<std::size_t>(k - 1)], k);
}

/// Both nested top-k sets from one partition pass; k_small <= k_large.
template <typename Scalar>
LayerMask topk_nested(std::span<const Scalar> values, Index k_small, Index k_large) {
  const Index n = static_cast<Index>(values.size());
  if (k_small < 0 || k_small > k_large || k_large > n) throw ArgumentError("invalid nested top-k counts");
  if (k_small == n) return {all_indices(n), all_indices(n)};
  std::vector<detail::RankKey<Scalar>> keys = detail::rank_keys(values);
  LayerMask m;
  if (k_large == n) {
    m.b = all_indices(n);
  } else if (k_large > 0) {
    std::nth_element(keys.begin(), keys.begin() + (k_large - 1), keys.end());
    m.b = detail::select_upto(values, keys[static_cast<std::size_t>(k_large - 1)], k_large);
  }
  if (k_small > 0) {
    std::nth_element(keys.begin(), keys.begin() + (k_small - 1), keys.begin() + k_large);
    m.a = detail::select_upto(values, keys[static_cast<std::size_t>(k_small - 1)], k_small);
  }
  return m;
}

struct MaskCounts {
  Index k_a = 0;
  Index k_b = 0;
};

inline MaskCounts mask_counts(const SparsitySpec& spec, Index n) {
  if (n < 1) throw ArgumentError("layer size must be positive");
  const Index k_a = std::max<Index>(1, round_count(spec.density(), n));
  const Index k_b = std::min(n, std::max(k_a, round_count(spec.backward_density(), n)));
  return {std::min(k_a, n), k_b};
}

/// Forward set A and backward set B for one layer by magnitude. A is always
/// a subset of B.
template <typename Scalar>
LayerMask compute_masks(std::span<const Scalar> theta, const SparsitySpec& spec, bool dense_exempt = false) {
  const Index n = static_cast<Index>(theta.size());
  if (dense_exempt) {
    if (n < 1) throw ArgumentError("layer size must be positive");
    return {all_indices(n), all_indices(n)};
  }
  const MaskCounts counts = mask_counts(spec, n);
  return topk_nested(theta, counts.k_a, counts.k_b);
}

/// alpha: theta at offsets in `a`, zero elsewhere.
template <typename Scalar>
Tensor<Scalar> apply_mask(const Tensor<Scalar>& theta, const IndexSet& a) {
  Tensor<Scalar> alpha(theta.shape());
  for (std::uint32_t i : a) {
    if (static_cast<Index>(i) >= theta.size()) throw ArgumentError("mask index out of bounds");
    alpha[i] = theta[i];
  }
  return alpha;
}

/// Mask recomputation is due on step 0 and every refresh_period steps after.
inline bool refresh_due(std::int64_t step, const SparsitySpec& spec) {
  if (step < 0) throw ArgumentError("step must be non-negative");
  return step % spec.refresh_period == 0;
}

/// B = A plus k_extra offsets drawn uniformly without replacement from the
/// complement of A.
inline IndexSet random_b_complement(Index n, const IndexSet& a, Index k_extra, std::mt19937_64& rng) {
  const Index available = n - static_cast<Index>(a.size());
  if (k_extra < 0 || k_extra > available) throw ArgumentError("cannot draw " + std::to_string(k_extra) +
                                                              " extra offsets from a complement of " +
                                                              std::to_string(available));
  std::vector<std::uint32_t> complement;
  complement.reserve(static_cast<std::size_t>(available));
  std::size_t cursor = 0;
  for (std::uint32_t i = 0; i < static_cast<std::uint32_t>(n); ++i) {
    if (cursor < a.size() && a[cursor] == i) {
      ++cursor;
    } else {
      complement.push_back(i);
    }
  }
  for (Index k = 0; k < k_extra; ++k) {
    std::uniform_int_distribution<Index> pick(k, available - 1);
    std::swap(complement[static_cast<std::size_t>(k)], complement[static_cast<std::size_t>(pick(rng))]);
  }
  IndexSet b = a;
  b.insert(b.end(), complement.begin(), complement.begin() + k_extra);
  std::sort(b.begin(), b.end());
  return b;
}

inline IndexSet random_b_complement(Index n, const IndexSet& a, Index k_extra, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return random_b_complement(n, a, k_extra, rng);
}

/// Whether each layer of `store` bypasses masking. Non-weight tensors always do.
template <typename Scalar>
std::vector<bool> exempt_flags(const DenseParamStore<Scalar>& store, const SparsitySpec& spec) {
  std::vector<bool> out(store.size(), false);
  std::size_t first = store.size(), last = store.size();
  for (std::size_t l = 0; l < store.size(); ++l) {
    if (!store[l].is_weight) continue;
    if (first == store.size()) first = l;
    last = l;
  }
  for (std::size_t l = 0; l < store.size(); ++l) {
    const std::string& name = store[l].name;
    const std::string layer = name.substr(0, name.find('.'));
    out[l] = !store[l].is_weight || spec.dense_exempt.contains(name) || spec.dense_exempt.contains(layer) ||
             (l == first && spec.dense_exempt.contains("first")) || (l == last && spec.dense_exempt.contains("last"));
  }
  return out;
}

/// Top-k masks for every layer of the store.
template <typename Scalar>
MaskPair compute_mask_pair(const DenseParamStore<Scalar>& store, const SparsitySpec& spec,
                           const std::vector<bool>& exempt, std::int64_t step) {
  MaskPair masks;
  masks.step_built = step;
  masks.layers.reserve(store.size());
  for (std::size_t l = 0; l < store.size(); ++l) {
    masks.layers.push_back(compute_masks(store[l].value.flat(), spec, exempt[l]));
  }
  return masks;
}

}  // namespace topkast
