#include "topkast/metrics.hpp"

namespace topkast {

namespace {

std::vector<std::uint8_t> to_bitmap(const IndexSet& set, Index n) {
  std::vector<std::uint8_t> bits(static_cast<std::size_t>(n), 0);
  for (std::uint32_t i : set) {
    if (static_cast<Index>(i) >= n) throw ArgumentError("mask index out of bounds");
    bits[i] = 1;
  }
  return bits;
}

}  // namespace

MaskSnapshot MaskSnapshot::from_sets(std::int64_t step, const std::vector<IndexSet>& active,
                                     const std::vector<Index>& sizes) {
  if (active.size() != sizes.size()) throw DimensionError("one size per tracked layer is required");
  MaskSnapshot snap;
  snap.step = step;
  for (std::size_t l = 0; l < active.size(); ++l) snap.layers.push_back(to_bitmap(active[l], sizes[l]));
  return snap;
}

std::size_t MaskSnapshot::popcount(std::size_t layer) const {
  return static_cast<std::size_t>(std::count(layers.at(layer).begin(), layers.at(layer).end(), 1));
}

ChurnReport mask_churn(const MaskSnapshot& first, const MaskSnapshot& second) {
  if (first.layers.size() != second.layers.size()) throw ArgumentError("snapshots track different layer counts");
  ChurnReport report;
  for (std::size_t l = 0; l < first.layers.size(); ++l) {
    const auto& x = first.layers[l];
    const auto& y = second.layers[l];
    if (x.size() != y.size()) throw ArgumentError("snapshot layer " + std::to_string(l) + " sizes differ");
    std::size_t diff = 0;
    for (std::size_t i = 0; i < x.size(); ++i) diff += (x[i] != y[i]);
    report.per_layer.push_back(x.empty() ? 0.0 : static_cast<double>(diff) / static_cast<double>(x.size()));
  }
  if (!report.per_layer.empty()) {
    report.min = *std::min_element(report.per_layer.begin(), report.per_layer.end());
    report.max = *std::max_element(report.per_layer.begin(), report.per_layer.end());
    double sum = 0.0;
    for (double c : report.per_layer) sum += c;
    report.mean = sum / static_cast<double>(report.per_layer.size());
  }
  return report;
}

double reservoir_activation(const IndexSet& c0, const IndexSet& a_history) {
  if (c0.empty()) return 0.0;
  std::size_t hits = 0;
  std::size_t h = 0;
  for (std::uint32_t i : c0) {
    while (h < a_history.size() && a_history[h] < i) ++h;
    if (h < a_history.size() && a_history[h] == i) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(c0.size());
}

ReservoirTracker::ReservoirTracker(const std::vector<IndexSet>& initial_a, const std::vector<IndexSet>& initial_b,
                                   const std::vector<Index>& sizes) {
  if (initial_a.size() != sizes.size() || initial_b.size() != sizes.size()) {
    throw DimensionError("one size per tracked layer is required");
  }
  for (std::size_t l = 0; l < sizes.size(); ++l) {
    std::vector<std::uint8_t> c0 = to_bitmap(initial_b[l], sizes[l]);
    for (auto& bit : c0) bit ^= 1;
    history_.push_back(to_bitmap(initial_a[l], sizes[l]));
    for (std::size_t i = 0; i < c0.size(); ++i) {
      reservoir_size_ += c0[i];
      activated_ += c0[i] & history_[l][i];
    }
    reservoir_.push_back(std::move(c0));
  }
}

ReservoirTracker ReservoirTracker::restore(std::vector<std::vector<std::uint8_t>> reservoir,
                                           std::vector<std::vector<std::uint8_t>> history) {
  if (reservoir.size() != history.size()) throw DimensionError("reservoir and history layer counts differ");
  ReservoirTracker t;
  for (std::size_t l = 0; l < reservoir.size(); ++l) {
    if (reservoir[l].size() != history[l].size()) throw DimensionError("reservoir and history sizes differ");
    for (std::size_t i = 0; i < reservoir[l].size(); ++i) {
      t.reservoir_size_ += reservoir[l][i];
      t.activated_ += reservoir[l][i] & history[l][i];
    }
  }
  t.reservoir_ = std::move(reservoir);
  t.history_ = std::move(history);
  return t;
}

void ReservoirTracker::observe(const std::vector<IndexSet>& active) {
  if (active.size() != history_.size()) throw DimensionError("tracked layer count changed");
  for (std::size_t l = 0; l < active.size(); ++l) {
    auto& hist = history_[l];
    const auto& res = reservoir_[l];
    for (std::uint32_t i : active[l]) {
      if (!hist[i]) {
        hist[i] = 1;
        activated_ += res[i];
      }
    }
  }
}

double ReservoirTracker::fraction() const {
  return reservoir_size_ == 0 ? 0.0 : static_cast<double>(activated_) / static_cast<double>(reservoir_size_);
}

}  // namespace topkast
