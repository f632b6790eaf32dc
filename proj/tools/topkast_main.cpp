// Command-line front end: `topkast train ...` and `topkast eval ...`.
#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <iostream>
#include <optional>
#include <sstream>

#include "topkast/experiment.hpp"

namespace {

template <typename T>
void add_override(topkast::ConfigOverrides& out, const char* key, const std::optional<T>& value) {
  if (!value) return;
  if constexpr (std::is_same_v<T, std::string>) {
    out.emplace_back(key, *value);
  } else {
    std::ostringstream s;
    s.precision(17);
    s << *value;
    out.emplace_back(key, s.str());
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sparse MLP training with magnitude top-k masks"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::int64_t> seed;
  std::optional<double> fwd_sparsity;
  std::optional<double> bwd_sparsity;
  std::optional<std::string> method;
  std::optional<std::int64_t> steps;
  std::optional<std::string> out_dir;
  std::optional<std::string> resume;

  CLI::App* train = app.add_subcommand("train", "Run a training experiment");
  train->add_option("--config", config_path, "Config file (key = value lines)")->required()->check(CLI::ExistingFile);
  train->add_option("--seed", seed, "Override 'seed'");
  train->add_option("--fwd-sparsity", fwd_sparsity, "Override 'fwd_sparsity'");
  train->add_option("--bwd-sparsity", bwd_sparsity, "Override 'bwd_sparsity'");
  train->add_option("--method", method, "Override 'method' (topkast, dense, static, set)");
  train->add_option("--steps", steps, "Override 'steps'");
  train->add_option("--out-dir", out_dir, "Override 'out_dir' (also settable via TOPKAST_OUT_DIR)");
  train->add_option("--resume", resume, "Continue from a checkpoint")->check(CLI::ExistingFile);

  std::string checkpoint_path;
  std::string eval_config;
  CLI::App* eval = app.add_subcommand("eval", "Evaluate a checkpoint on the held-out split");
  eval->add_option("--checkpoint", checkpoint_path, "Checkpoint file")->required()->check(CLI::ExistingFile);
  eval->add_option("--config", eval_config, "Config the checkpoint was trained with")->required()->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) {
      topkast::ConfigOverrides overrides;
      add_override(overrides, "seed", seed);
      add_override(overrides, "fwd_sparsity", fwd_sparsity);
      add_override(overrides, "bwd_sparsity", bwd_sparsity);
      add_override(overrides, "method", method);
      add_override(overrides, "steps", steps);
      add_override(overrides, "out_dir", out_dir);
      const topkast::TrainConfig config = topkast::parse_config(config_path, overrides);
      const topkast::RunResult result = topkast::run_experiment(config, resume);
      std::cout << "finished " << result.final_step << " steps; metrics: " << result.metrics_path
                << "; checkpoint: " << result.final_checkpoint << "\n";
      if (!result.rows.empty()) {
        const auto& last = result.rows.back();
        std::printf("final eval_loss=%.6f eval_accuracy=%.4f reservoir_frac=%.4f\n", last.eval_loss,
                    last.eval_accuracy, last.reservoir_frac);
      }
    } else if (*eval) {
      const topkast::TrainConfig config = topkast::parse_config(eval_config);
      const topkast::EvalResult r = topkast::evaluate_checkpoint(config, checkpoint_path);
      std::printf("step=%lld examples=%lld eval_loss=%.9g eval_accuracy=%.9g\n", static_cast<long long>(r.step),
                  static_cast<long long>(r.examples), r.loss, r.accuracy);
    }
  } catch (const topkast::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
