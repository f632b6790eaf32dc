// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fail.
//
// Training criteria (6-10, 12, 13) run the reference image config in
// configs/mnist_topkast.cfg with per-criterion overrides. Set
// TOPKAST_ACCEPTANCE_ONLY=1,4,11 to run a subset.

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "topkast/checkpoint.hpp"
#include "topkast/config.hpp"
#include "topkast/experiment.hpp"

using namespace topkast;
namespace fs = std::filesystem;

namespace {

// Tolerances and thresholds.
constexpr double kTopKMaxSeconds = 5.0;
constexpr double kGradRelTol = 1e-5;
constexpr double kGradKink = 1e-6;
constexpr double kExplorationAbsTol = 1e-12;
constexpr double kChurnRatio = 0.25;
constexpr double kReservoirMax = 0.15;
constexpr double kReservoirEarlyShare = 0.6;
constexpr double kStaticMargin = 0.010;
constexpr double kAblationMargin = 0.005;
constexpr double kRefreshBand = 0.005;
constexpr std::uint64_t kSeeds[] = {1, 2, 3};

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

fs::path work_root() {
  const fs::path p = fs::temp_directory_path() / "topkast_acceptance";
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

TrainConfig reference_config(const std::string& tag, const ConfigOverrides& extra) {
  ConfigOverrides ov = extra;
  const fs::path out = work_root() / tag;
  fs::remove_all(out);
  ov.emplace_back("out_dir", out.string());
  return parse_config(std::string(TOPKAST_SOURCE_DIR) + "/configs/mnist_topkast.cfg", ov);
}

// Cache of finished training runs keyed by tag.
std::map<std::string, RunResult>& run_cache() {
  static std::map<std::string, RunResult> cache;
  return cache;
}

const RunResult& train(const std::string& tag, const ConfigOverrides& ov) {
  auto& cache = run_cache();
  if (auto it = cache.find(tag); it != cache.end()) return it->second;
  const auto start = std::chrono::steady_clock::now();
  RunResult r = run_experiment(reference_config(tag, ov));
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::printf("  run %-28s acc=%.4f reservoir=%.4f (%.0fs)\n", tag.c_str(), r.rows.back().eval_accuracy,
              r.rows.back().reservoir_frac, secs);
  std::fflush(stdout);
  return cache.emplace(tag, std::move(r)).first->second;
}

double final_accuracy(const RunResult& r) { return r.rows.back().eval_accuracy; }

std::string seed_tag(const std::string& name, std::uint64_t seed) { return name + "_s" + std::to_string(seed); }

ConfigOverrides with_seed(ConfigOverrides ov, std::uint64_t seed) {
  ov.emplace_back("seed", std::to_string(seed));
  return ov;
}

// ---------------------------------------------------------------------------

Outcome topk_oracle() {
  std::mt19937_64 rng(1001);
  int mismatches = 0;
  double seconds = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const Index n = std::uniform_int_distribution<Index>(1, 10000)(rng);
    const int levels = std::uniform_int_distribution<int>(1, 12)(rng);
    std::uniform_int_distribution<int> level(-levels, levels);
    std::vector<double> v(static_cast<std::size_t>(n));
    for (double& x : v) x = 0.125 * level(rng);
    const Index k = std::uniform_int_distribution<Index>(0, n)(rng);

    std::vector<std::uint32_t> order(v.size());
    std::iota(order.begin(), order.end(), 0u);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::uint32_t a, std::uint32_t b) { return std::fabs(v[a]) > std::fabs(v[b]); });
    IndexSet expected(order.begin(), order.begin() + k);
    std::sort(expected.begin(), expected.end());

    const std::vector<float> f(v.begin(), v.end());
    const auto start = std::chrono::steady_clock::now();
    const IndexSet got64 = topk_indices<double>(v, k);
    const IndexSet got32 = topk_indices<float>(f, k);
    seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (got64 != expected || got32 != expected) ++mismatches;
  }
  return {mismatches == 0 && seconds < kTopKMaxSeconds,
          std::to_string(mismatches) + " mismatches / 1000, top-k time " + fmt("%.3f", seconds) + "s (< " +
              fmt("%.0f", kTopKMaxSeconds) + "s)"};
}

struct RandomProblem {
  ComputeGraph<double> graph;
  OptimizerState<double> state;
  Batch<double> batch;
};

RandomProblem random_problem(std::uint64_t seed, double reg_coeff, int exponent, double lr) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<Index> width(3, 24);
  std::vector<Index> sizes{width(rng)};
  const int hidden = std::uniform_int_distribution<int>(1, 3)(rng);
  for (int i = 0; i < hidden; ++i) sizes.push_back(width(rng));
  sizes.push_back(std::uniform_int_distribution<Index>(2, 6)(rng));
  RandomProblem p{make_mlp<double>(sizes, LossKind::SoftmaxCrossEntropy), {}, {}};
  DenseParamStore<double> store(p.graph);
  store.init_he(seed);
  // Non-zero biases keep fully masked hidden units away from the ReLU kink.
  std::uniform_real_distribution<double> bias(0.05, 0.5);
  for (auto& layer : store) {
    if (!layer.is_weight) {
      for (double& v : layer.value.flat()) v = bias(rng);
    }
  }
  SparsitySpec spec;
  spec.s_fwd = std::uniform_real_distribution<double>(0.3, 0.95)(rng);
  spec.s_bwd = spec.s_fwd * std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  OptimizerSettings settings;
  settings.schedule = LrSchedule::constant(lr);
  settings.reg_coeff = reg_coeff;
  settings.reg_exponent = exponent;
  settings.momentum = seed % 2 ? 0.9 : 0.0;
  Ablation ablation;
  if (seed % 3 == 0) ablation.b_selection = BSelection::Random;
  p.state = make_state(std::move(store), spec, settings, ablation, {}, seed);
  const Index batch = std::uniform_int_distribution<Index>(1, 8)(rng);
  std::normal_distribution<double> normal(0.0, 1.0);
  p.batch.inputs = Matrix<double>(batch, sizes.front());
  for (Index i = 0; i < p.batch.inputs.size(); ++i) p.batch.inputs.data()[i] = normal(rng);
  std::uniform_int_distribution<int> label(0, static_cast<int>(sizes.back()) - 1);
  for (Index i = 0; i < batch; ++i) p.batch.labels.push_back(label(rng));
  return p;
}

bool contains(const IndexSet& s, std::uint32_t i) { return std::binary_search(s.begin(), s.end(), i); }

Outcome forward_sparsity() {
  int violations = 0;
  int perturbed = 0;
  for (std::uint64_t seed = 1; seed <= 50; ++seed) {
    RandomProblem p = random_problem(seed, 1e-4, 1, 0.1);
    refresh_masks(p.state);
    const Tensor<double> input = to_tensor<double>(p.batch.inputs);
    const Tensor<double> before = p.graph.forward(masked_params(p.state), input);
    std::mt19937_64 rng(seed + 500);
    std::normal_distribution<double> normal(0.0, 10.0);
    std::vector<std::pair<std::size_t, std::uint32_t>> outside;
    for (std::size_t l = 0; l < p.state.store.size(); ++l) {
      for (Index i = 0; i < p.state.store[l].value.size(); ++i) {
        if (!contains(p.state.masks.layers[l].a, static_cast<std::uint32_t>(i))) {
          outside.emplace_back(l, static_cast<std::uint32_t>(i));
        }
      }
    }
    for (int k = 0; k < 100; ++k) {
      const auto [l, i] = outside[rng() % outside.size()];
      p.state.store[l].value[i] += normal(rng);
      ++perturbed;
    }
    const Tensor<double> after = p.graph.forward(masked_params(p.state), input);
    if (!(after.values() - before.values()).isZero(0.0)) ++violations;
  }
  return {violations == 0, std::to_string(violations) + " / 50 models changed output after " +
                               std::to_string(perturbed) + " perturbations outside A (tolerance exactly 0)"};
}

Outcome backward_sparsity() {
  int violations = 0;
  std::int64_t checked = 0;
  for (std::uint64_t seed = 1; seed <= 50; ++seed) {
    RandomProblem p = random_problem(seed, 1e-2, 1 + static_cast<int>(seed % 2), 0.5);
    for (int step = 0; step < 3; ++step) {
      refresh_masks(p.state);
      const MaskPair masks = p.state.masks;
      const DenseParamStore<double> before = p.state.store;
      train_step(p.state, p.graph, p.batch);
      for (std::size_t l = 0; l < before.size(); ++l) {
        for (Index i = 0; i < before[l].value.size(); ++i) {
          if (contains(masks.layers[l].b, static_cast<std::uint32_t>(i))) continue;
          ++checked;
          if (std::bit_cast<std::uint64_t>(before[l].value[i]) != std::bit_cast<std::uint64_t>(p.state.store[l].value[i])) {
            ++violations;
          }
        }
      }
    }
  }
  return {violations == 0 && checked > 0, std::to_string(violations) + " of " + std::to_string(checked) +
                                              " entries outside B changed (50 configs x 3 steps, bitwise)"};
}

Outcome gradient_correctness() {
  double worst = 0.0;
  int checked = 0;
  int skipped = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const int p_exp = 1 + static_cast<int>(seed % 2);
    const double lambda = 0.05;
    RandomProblem p = random_problem(seed * 7919, lambda, p_exp, 1.0);
    p.state.settings.momentum = 0.0;
    p.state.momentum.clear();
    refresh_masks(p.state);
    const DenseParamStore<double> theta = p.state.store;
    const MaskPair masks = p.state.masks;
    const std::vector<Tensor<double>> alpha = masked_params(p.state);
    train_step(p.state, p.graph, p.batch);

    // Objective seen by the update: alpha and theta move together along a B coordinate.
    auto objective = [&](std::size_t l, Index i, double x) {
      std::vector<Tensor<double>> a = alpha;
      a[l][i] += x - theta[l].value[i];
      p.graph.forward_matrix(a, p.batch.inputs);
      double total = p.graph.loss(std::span<const int>(p.batch.labels));
      for (std::size_t k = 0; k < theta.size(); ++k) {
        if (!theta[k].is_weight) continue;
        Tensor<double> t = theta[k].value;
        if (k == l) t[i] = x;
        total += lambda * exploration_loss<double>(t.flat(), masks.layers[k].a, masks.layers[k].b,
                                                   p.state.sparsity.density(), p_exp);
      }
      return total;
    };

    std::vector<std::pair<std::size_t, std::uint32_t>> coords;
    for (std::size_t l = 0; l < theta.size(); ++l) {
      for (std::uint32_t i : masks.layers[l].b) coords.emplace_back(l, i);
    }
    std::mt19937_64 rng(seed);
    std::shuffle(coords.begin(), coords.end(), rng);
    int taken = 0;
    for (const auto& [l, i] : coords) {
      if (taken == 20) break;
      const double x = theta[l].value[i];
      if (p_exp == 1 && theta[l].is_weight && std::fabs(x) < kGradKink) {
        ++skipped;
        continue;
      }
      const double update = theta[l].value[i] - p.state.store[l].value[i];
      const double fd = central_difference([&](double v) { return objective(l, i, v); }, x, 1e-6);
      const double rel = std::fabs(update - fd) / std::max({std::fabs(update), std::fabs(fd), 1e-8});
      worst = std::max(worst, rel);
      ++checked;
      ++taken;
    }
  }
  return {worst <= kGradRelTol && checked >= 300,
          "max relative error " + fmt("%.2e", worst) + " over " + std::to_string(checked) +
              " B-coordinates in 20 configs (tolerance " + fmt("%.0e", kGradRelTol) + ", " +
              std::to_string(skipped) + " kink skips)"};
}

Outcome exploration_values() {
  std::mt19937_64 rng(4242);
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const Index n = std::uniform_int_distribution<Index>(1, 500)(rng);
    std::normal_distribution<double> normal(0.0, std::uniform_real_distribution<double>(0.01, 3.0)(rng));
    std::vector<double> theta(static_cast<std::size_t>(n));
    for (double& v : theta) v = normal(rng);
    std::vector<int> role(static_cast<std::size_t>(n));  // 0 = A, 1 = B \ A, 2 = outside B
    IndexSet a, b;
    for (Index i = 0; i < n; ++i) {
      role[static_cast<std::size_t>(i)] = static_cast<int>(rng() % 3);
      if (role[static_cast<std::size_t>(i)] == 0) a.push_back(static_cast<std::uint32_t>(i));
      if (role[static_cast<std::size_t>(i)] <= 1) b.push_back(static_cast<std::uint32_t>(i));
    }
    const double d = std::uniform_real_distribution<double>(0.01, 1.0)(rng);
    const int p = 1 + static_cast<int>(rng() % 2);
    // brute force with long double accumulation
    long double expected = 0.0L;
    for (Index i = 0; i < n; ++i) {
      const long double term = std::pow(std::fabs(static_cast<long double>(theta[static_cast<std::size_t>(i)])), p);
      if (role[static_cast<std::size_t>(i)] == 0) expected += term;
      if (role[static_cast<std::size_t>(i)] == 1) expected += term / d;
    }
    const double got = exploration_loss<double>(theta, a, b, d, p);
    worst = std::max(worst, static_cast<double>(std::fabs(got - expected) / std::max(1.0L, std::fabs(expected))));
  }
  return {worst <= kExplorationAbsTol,
          "max error " + fmt("%.2e", worst) + " on 200 instances (tolerance " + fmt("%.0e", kExplorationAbsTol) +
              ", relative above magnitude 1)"};
}

// Runs at s_fwd = 0.8, s_bwd = 0.5 with churn measured every 100 steps.
const ConfigOverrides kStabilityRun{{"fwd_sparsity", "0.8"}, {"bwd_sparsity", "0.5"}, {"refresh_period", "1"},
                                    {"eval_period", "100"}, {"churn_period", "100"}};

Outcome mask_stabilization() {
  int ok = 0;
  std::string detail;
  for (std::uint64_t seed : kSeeds) {
    const RunResult& r = train(seed_tag("topkast80_n1", seed), with_seed(kStabilityRun, seed));
    const std::size_t windows = r.rows.size();
    const std::size_t tenth = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(0.1 * windows)));
    double early = 0.0, late = 0.0;
    for (std::size_t i = 0; i < tenth; ++i) {
      early += r.rows[i].churn_mean;
      late += r.rows[windows - 1 - i].churn_mean;
    }
    early /= static_cast<double>(tenth);
    late /= static_cast<double>(tenth);
    const bool pass = late <= kChurnRatio * early;
    ok += pass;
    detail += " seed " + std::to_string(seed) + ": " + fmt("%.4f", late) + "/" + fmt("%.4f", early) + " = " +
              fmt("%.3f", early > 0 ? late / early : INFINITY) + ";";
  }
  return {ok == 3, "late/early mean churn (limit " + fmt("%.2f", kChurnRatio) + ", " + std::to_string(ok) +
                       "/3 seeds)" + detail};
}

Outcome reservoir_analogue() {
  int ok = 0;
  std::string detail;
  for (std::uint64_t seed : kSeeds) {
    const RunResult& r = train(seed_tag("topkast80_n1", seed), with_seed(kStabilityRun, seed));
    const double final_frac = r.rows.back().reservoir_frac;
    const std::int64_t third = r.rows.back().step / 3;
    double at_third = 0.0;
    for (const MetricsRecord& row : r.rows) {
      if (row.step <= third) at_third = row.reservoir_frac;
    }
    const bool pass = final_frac <= kReservoirMax && at_third >= kReservoirEarlyShare * final_frac;
    ok += pass;
    detail += " seed " + std::to_string(seed) + ": final " + fmt("%.4f", final_frac) + ", at step " +
              std::to_string(third) + " " + fmt("%.4f", at_third) + ";";
  }
  return {ok == 3, "final reservoir activation <= " + fmt("%.2f", kReservoirMax) + " with >= " +
                       fmt("%.0f%%", 100 * kReservoirEarlyShare) + " reached in the first third (" +
                       std::to_string(ok) + "/3 seeds)" + detail};
}

const ConfigOverrides kSparse90{{"fwd_sparsity", "0.9"}, {"bwd_sparsity", "0.5"}, {"refresh_period", "1"},
                                {"eval_period", "500"}};

double mean_accuracy(const std::string& name, ConfigOverrides ov) {
  double total = 0.0;
  for (std::uint64_t seed : kSeeds) total += final_accuracy(train(seed_tag(name, seed), with_seed(ov, seed)));
  return total / 3.0;
}

ConfigOverrides plus(ConfigOverrides base, const ConfigOverrides& extra) {
  base.insert(base.end(), extra.begin(), extra.end());
  return base;
}

Outcome method_ordering() {
  const double topkast = mean_accuracy("topkast90_n1", kSparse90);
  const double stat = mean_accuracy("static90", plus(kSparse90, {{"method", "static"}}));
  return {topkast - stat >= kStaticMargin, "topkast " + fmt("%.4f", topkast) + " vs static " + fmt("%.4f", stat) +
                                               " (margin " + fmt("%+.4f", topkast - stat) + ", need >= " +
                                               fmt("%.3f", kStaticMargin) + ")"};
}

Outcome exploration_ablation() {
  const double topkast = mean_accuracy("topkast90_n1", kSparse90);
  const double stopped = mean_accuracy("stop0_90", plus(kSparse90, {{"stop_exploration_at_step", "0"}}));
  return {topkast - stopped >= kAblationMargin,
          "topkast " + fmt("%.4f", topkast) + " vs exploration stopped at 0 " + fmt("%.4f", stopped) + " (gap " +
              fmt("%+.4f", topkast - stopped) + ", need >= " + fmt("%.3f", kAblationMargin) + ")"};
}

Outcome refresh_robustness() {
  bool pass = true;
  std::string detail;
  const double n1_90 = mean_accuracy("topkast90_n1", kSparse90);
  const double n100_90 = mean_accuracy("topkast90_n100", plus(kSparse90, {{"refresh_period", "100"}}));
  const double n1_80 = mean_accuracy("topkast80_n1", kStabilityRun);
  const double n100_80 = mean_accuracy("topkast80_n100", plus(kStabilityRun, {{"refresh_period", "100"}}));
  for (auto [label, n1, n100] : {std::tuple{"0.9", n1_90, n100_90}, std::tuple{"0.8", n1_80, n100_80}}) {
    pass = pass && std::fabs(n100 - n1) <= kRefreshBand;
    detail += std::string(" s_fwd ") + label + ": N=1 " + fmt("%.4f", n1) + ", N=100 " + fmt("%.4f", n100) + " (" +
              fmt("%+.4f", n100 - n1) + ");";
  }
  return {pass, "|N=100 - N=1| <= " + fmt("%.3f", kRefreshBand) + ";" + detail};
}

Outcome flop_accounting() {
  std::mt19937_64 rng(11);
  int mismatches = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const Index in = std::uniform_int_distribution<Index>(1, 2000)(rng);
    const Index out = std::uniform_int_distribution<Index>(1, 2000)(rng);
    const std::vector<Index> sizes{in, out};
    const auto graph = make_mlp<float>(sizes, LossKind::SoftmaxCrossEntropy);
    SparsitySpec spec;
    spec.s_fwd = std::uniform_real_distribution<double>(0.0, 0.99)(rng);
    spec.s_bwd = spec.s_fwd * std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    spec.refresh_period = std::uniform_int_distribution<std::int64_t>(1, 200)(rng);
    const FlopReport r = flop_estimate(graph, spec);
    const double d = 1.0 - spec.s_fwd;
    const double dm = 1.0 - spec.s_bwd;
    const double nm = static_cast<double>(in) * static_cast<double>(out);
    const LayerFlops& f = r.layers.at(0);
    const bool ratios = f.fwd_ratio == d && f.input_grad_ratio == d && f.weight_grad_ratio == dm;
    auto close = [](double x, double y) { return std::fabs(x - y) <= 1e-12 * std::max(1.0, std::fabs(y)); };
    const bool counts = close(f.sparse_fwd, 2 * d * nm) && close(f.sparse_bwd, 2 * d * nm + 2 * dm * nm) &&
                        close(f.dense_fwd, 2 * nm) &&
                        close(f.topk_overhead, nm * std::log2(nm) / static_cast<double>(spec.refresh_period));
    const bool totals = close(r.total.sparse_fwd, f.sparse_fwd) && close(r.total.fwd_ratio, d) &&
                        close(r.total.weight_grad_ratio, dm);
    if (!(ratios && counts && totals)) ++mismatches;
  }
  return {mismatches == 0, std::to_string(mismatches) + " / 20 random layer shapes disagree with the closed form"};
}

const ConfigOverrides kShortRun{{"layers", "784, 64, 10"}, {"steps", "400"}, {"eval_period", "50"}};

Outcome dense_equivalence() {
  const ConfigOverrides common = plus(kShortRun, {{"fwd_sparsity", "0"}, {"bwd_sparsity", "0"}, {"reg_coeff", "0"}});
  const RunResult& a = train("dense_eq_topkast", plus(common, {{"method", "topkast"}}));
  const RunResult& b = train("dense_eq_dense", plus(common, {{"method", "dense"}}));
  const std::string ca = slurp(a.metrics_path);
  const std::string cb = slurp(b.metrics_path);
  return {!ca.empty() && ca == cb, std::string("metrics.csv ") + (ca == cb ? "byte-identical" : "differs") + " (" +
                                       std::to_string(ca.size()) + " vs " + std::to_string(cb.size()) + " bytes)"};
}

Outcome checkpoint_resume() {
  const ConfigOverrides ov =
      plus(kShortRun, {{"checkpoint_period", "200"}, {"fwd_sparsity", "0.9"}, {"bwd_sparsity", "0.8"}});
  const RunResult& full = train("resume_full", ov);
  const fs::path ckpt = fs::path(full.metrics_path).parent_path() / "ckpt-200.tkas";

  const Checkpoint<float> loaded = load_checkpoint<float>(ckpt.string());
  const bool roundtrip = decode_checkpoint<float>(encode_checkpoint(loaded)) == loaded &&
                         encode_checkpoint(loaded) == std::vector<std::uint8_t>(
                                                          [&] {
                                                            const std::string s = slurp(ckpt);
                                                            return std::vector<std::uint8_t>(s.begin(), s.end());
                                                          }());

  TrainConfig cfg = reference_config("resume_part", ov);
  fs::create_directories(cfg.out_dir);
  fs::copy_file(ckpt, fs::path(cfg.out_dir) / "ckpt-200.tkas");
  const RunResult resumed = run_experiment(cfg, (fs::path(cfg.out_dir) / "ckpt-200.tkas").string());
  const bool same_final = resumed.rows.back().eval_loss == full.rows.back().eval_loss &&
                          resumed.rows.back().eval_accuracy == full.rows.back().eval_accuracy;
  const bool same_ckpt = slurp(resumed.final_checkpoint) == slurp(full.final_checkpoint);
  const bool same_tail = [&] {
    for (std::size_t i = 0; i < resumed.rows.size(); ++i) {
      const MetricsRecord& x = resumed.rows[resumed.rows.size() - 1 - i];
      const MetricsRecord& y = full.rows[full.rows.size() - 1 - i];
      if (format_metrics_row(x) != format_metrics_row(y)) return false;
    }
    return true;
  }();
  return {roundtrip && same_final && same_ckpt && same_tail,
          std::string("roundtrip ") + (roundtrip ? "exact" : "differs") + ", resumed final metrics " +
              (same_final && same_tail ? "identical" : "differ") + ", final checkpoint " +
              (same_ckpt ? "identical" : "differs")};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"top-k oracle equivalence", topk_oracle},
      {"forward-sparsity property", forward_sparsity},
      {"backward-sparsity property", backward_sparsity},
      {"gradient correctness", gradient_correctness},
      {"exploration-loss values", exploration_values},
      {"mask stabilization", mask_stabilization},
      {"reservoir activation", reservoir_analogue},
      {"method ordering vs static", method_ordering},
      {"exploration ablation", exploration_ablation},
      {"refresh-period robustness", refresh_robustness},
      {"FLOP accounting", flop_accounting},
      {"dense equivalence", dense_equivalence},
      {"checkpoint and resume", checkpoint_resume},
  };

  std::set<int> only;
  if (const char* env = std::getenv("TOPKAST_ACCEPTANCE_ONLY"); env && *env) {
    std::stringstream s(env);
    std::string item;
    while (std::getline(s, item, ',')) only.insert(std::stoi(item));
  }

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.contains(id)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s [%2d] %s: %s\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d criteria failed\n", failed);
  return failed == 0 ? 0 : 1;
}
