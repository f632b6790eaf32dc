#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "topkast/masking.hpp"

namespace topkast {

enum class Method { TopKast, Dense, Static, Set };

inline std::string to_string(Method m) {
  switch (m) {
    case Method::TopKast: return "topkast";
    case Method::Dense: return "dense";
    case Method::Static: return "static";
    case Method::Set: return "set";
  }
  return "?";
}

inline Method parse_method(const std::string& s) {
  if (s == "topkast") return Method::TopKast;
  if (s == "dense") return Method::Dense;
  if (s == "static" || s == "static_random") return Method::Static;
  if (s == "set") return Method::Set;
  throw ArgumentError("unknown method '" + s + "' (expected topkast, dense, static or set)");
}

/// Parameters of the SET prune/regrow baseline.
struct BaselineKind {
  Method kind = Method::TopKast;
  double set_prune_fraction = 0.3;
  std::int64_t set_update_period = 100;

  void validate() const {
    if (!(set_prune_fraction >= 0.0 && set_prune_fraction < 1.0)) {
      throw ArgumentError("SET prune fraction must lie in [0, 1)");
    }
    if (set_update_period < 1) throw ArgumentError("SET update period must be at least 1");
  }
};

/// `k` offsets of [0, n) chosen uniformly without replacement, sorted.
inline IndexSet sample_without_replacement(Index n, Index k, std::mt19937_64& rng) {
  if (k < 0 || k > n) throw ArgumentError("sample size exceeds population");
  std::vector<std::uint32_t> pool(static_cast<std::size_t>(n));
  std::iota(pool.begin(), pool.end(), 0u);
  for (Index i = 0; i < k; ++i) {
    std::uniform_int_distribution<Index> pick(i, n - 1);
    std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(pick(rng))]);
  }
  IndexSet out(pool.begin(), pool.begin() + k);
  std::sort(out.begin(), out.end());
  return out;
}

/// Uniformly random forward mask per layer with B = A. Exempt layers are dense.
inline MaskPair static_mask_init(std::span<const Index> layer_sizes, double s_fwd, std::uint64_t seed,
                                 const std::vector<bool>& exempt = {}) {
  if (!(s_fwd >= 0.0 && s_fwd < 1.0)) throw ArgumentError("forward sparsity must lie in [0, 1)");
  SparsitySpec spec;
  spec.s_fwd = s_fwd;
  spec.s_bwd = s_fwd;
  MaskPair masks;
  for (std::size_t l = 0; l < layer_sizes.size(); ++l) {
    const Index n = layer_sizes[l];
    if (!exempt.empty() && exempt[l]) {
      masks.layers.push_back({all_indices(n), all_indices(n)});
      continue;
    }
    std::mt19937_64 rng = derive_rng(seed, Stream::StaticMask, 0, l);
    IndexSet a = sample_without_replacement(n, mask_counts(spec, n).k_a, rng);
    masks.layers.push_back({a, a});
  }
  return masks;
}

/// One SET prune/regrow round on a single layer.
///
/// Drops the floor(prune_fraction * |A|) smallest-magnitude members of A
/// (zeroing them in theta), then activates the same number of offsets drawn
/// uniformly from outside the old A, each re-initialised by `sampler(rng)`.
template <typename Scalar, typename Sampler>
IndexSet set_regrow(std::span<Scalar> theta, const IndexSet& a, double prune_fraction, Sampler&& sampler,
                    std::mt19937_64& rng) {
  if (!(prune_fraction >= 0.0 && prune_fraction < 1.0)) throw ArgumentError("prune fraction must lie in [0, 1)");
  const Index n = static_cast<Index>(theta.size());
  const Index count = static_cast<Index>(std::floor(prune_fraction * static_cast<double>(a.size())));
  const Index inactive = n - static_cast<Index>(a.size());
  if (count > inactive) {
    throw ArgumentError("cannot regrow " + std::to_string(count) + " weights from " + std::to_string(inactive) +
                        " inactive offsets");
  }
  if (count == 0) return a;

  std::vector<Scalar> active_values;
  active_values.reserve(a.size());
  for (std::uint32_t i : a) active_values.push_back(theta[i]);
  const IndexSet keep_pos = topk_indices<Scalar>(active_values, static_cast<Index>(a.size()) - count);

  IndexSet kept;
  kept.reserve(keep_pos.size());
  for (std::uint32_t p : keep_pos) kept.push_back(a[p]);
  std::vector<bool> was_active(static_cast<std::size_t>(n), false);
  for (std::uint32_t i : a) was_active[i] = true;
  std::vector<bool> still_active(static_cast<std::size_t>(n), false);
  for (std::uint32_t i : kept) still_active[i] = true;
  for (std::uint32_t i : a) {
    if (!still_active[i]) theta[i] = Scalar(0);
  }

  std::vector<std::uint32_t> candidates;
  candidates.reserve(static_cast<std::size_t>(inactive));
  for (std::uint32_t i = 0; i < static_cast<std::uint32_t>(n); ++i) {
    if (!was_active[i]) candidates.push_back(i);
  }
  for (Index k = 0; k < count; ++k) {
    std::uniform_int_distribution<Index> pick(k, inactive - 1);
    std::swap(candidates[static_cast<std::size_t>(k)], candidates[static_cast<std::size_t>(pick(rng))]);
  }
  std::sort(candidates.begin(), candidates.begin() + count);
  for (Index k = 0; k < count; ++k) theta[candidates[static_cast<std::size_t>(k)]] = sampler(rng);

  IndexSet out;
  out.reserve(a.size());
  std::merge(kept.begin(), kept.end(), candidates.begin(), candidates.begin() + count, std::back_inserter(out));
  return out;
}

/// Zero-mean normal sampler with the layer's original init std.
template <typename Scalar>
auto init_sampler(Scalar init_std) {
  return [init_std](std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, static_cast<double>(init_std));
    return static_cast<Scalar>(normal(rng));
  };
}

}  // namespace topkast
