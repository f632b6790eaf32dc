#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "topkast/config.hpp"

namespace topkast {

/// One row of metrics.csv.
struct MetricsRecord {
  std::int64_t step = 0;
  double train_loss = 0.0;
  double eval_loss = 0.0;
  double eval_accuracy = 0.0;  // NaN for regression tasks
  double churn_min = 0.0;
  double churn_mean = 0.0;
  double churn_max = 0.0;
  double reservoir_frac = 0.0;
  double fwd_flop_ratio = 1.0;
  double bwd_flop_ratio = 1.0;
};

/// Column order of metrics.csv; stable within a format version.
inline constexpr const char* kMetricsHeader =
    "step,train_loss,eval_loss,eval_accuracy,churn_min,churn_mean,churn_max,reservoir_frac,fwd_flop_ratio,"
    "bwd_flop_ratio";

std::string format_metrics_row(const MetricsRecord& r);

struct RunResult {
  std::vector<MetricsRecord> rows;
  std::int64_t final_step = 0;
  std::string metrics_path;
  std::string final_checkpoint;
};

struct EvalResult {
  std::int64_t step = 0;
  double loss = 0.0;
  double accuracy = 0.0;
  std::int64_t examples = 0;
};

/// Trains per `config`, writing metrics.csv, checkpoints, flops.txt and
/// summary.txt under config.out_dir. With `resume_from`, training continues
/// from that checkpoint; rows of an existing metrics.csv up to the resume
/// step are kept.
RunResult run_experiment(const TrainConfig& config, const std::optional<std::string>& resume_from = {});

/// Evaluates a checkpoint on the config's held-out split.
EvalResult evaluate_checkpoint(const TrainConfig& config, const std::string& checkpoint_path);

}  // namespace topkast
