#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "topkast/baselines.hpp"
#include "topkast/masking.hpp"
#include "topkast/optimizer.hpp"

namespace topkast {

/// Everything one training run needs. Parsed from flat `key = value` text.
struct TrainConfig {
  Method method = Method::TopKast;
  SparsitySpec sparsity;
  std::vector<Index> layers;

  double learning_rate = 0.1;
  double warmup_fraction = 0.05;
  std::vector<double> decay_points{0.6, 0.85};
  double decay_factor = 0.1;
  double reg_coeff = 1e-4;
  int reg_exponent = 1;
  double momentum = 0.9;
  bool zero_momentum_on_mask_change = false;

  std::int64_t steps = 3000;
  Index batch_size = 128;
  std::int64_t eval_period = 200;
  std::int64_t churn_period = 0;  // 0 follows eval_period
  std::int64_t checkpoint_period = 0;  // 0 writes only the final checkpoint
  std::uint64_t seed = 1;
  int precision = 32;

  std::string dataset = "idx";  // idx | synthetic
  std::string train_images, train_labels, test_images, test_labels;
  Index synth_train_examples = 8192;
  Index synth_eval_examples = 2048;
  double teacher_sparsity = 0.9;
  double noise_sigma = 0.1;
  std::uint64_t teacher_seed = 1;

  Ablation ablation;
  BaselineKind baseline;

  std::string out_dir = "out";

  std::int64_t effective_churn_period() const { return churn_period > 0 ? churn_period : eval_period; }
  LrSchedule schedule() const {
    return LrSchedule::for_run(learning_rate, steps, warmup_fraction, decay_points, decay_factor);
  }
  OptimizerSettings optimizer_settings() const {
    return {schedule(), reg_coeff, reg_exponent, momentum, zero_momentum_on_mask_change};
  }

  void validate() const;
};

using ConfigOverrides = std::vector<std::pair<std::string, std::string>>;

/// Environment variable that overrides `out_dir` (command-line flags still win).
inline constexpr const char* kOutDirEnv = "TOPKAST_OUT_DIR";

/// Parses config text. Relative dataset paths resolve against `base_dir`.
/// Overrides are applied after the file; unknown keys are rejected.
TrainConfig parse_config_text(const std::string& text, const std::string& base_dir = ".",
                              const ConfigOverrides& overrides = {});

TrainConfig parse_config(const std::string& path, const ConfigOverrides& overrides = {});

/// Serialises every key back to config text.
std::string to_config_text(const TrainConfig& config);

}  // namespace topkast
