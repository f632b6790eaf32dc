#include "topkast/experiment.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "topkast/checkpoint.hpp"
#include "topkast/data.hpp"
#include "topkast/metrics.hpp"
#include "topkast/optimizer.hpp"

namespace topkast {

namespace {

constexpr int kMaxNonFiniteSteps = 10;
constexpr Index kEvalChunk = 512;

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

template <typename Scalar>
struct Splits {
  Dataset<Scalar> train;
  Dataset<Scalar> eval;
};

template <typename Scalar>
Splits<Scalar> load_data(const TrainConfig& c) {
  if (c.dataset == "idx") {
    return {load_idx_pair<Scalar>(c.train_images, c.train_labels, "train"),
            load_idx_pair<Scalar>(c.test_images, c.test_labels, "test")};
  }
  TeacherSpec spec;
  spec.sizes = c.layers;
  spec.teacher_sparsity = c.teacher_sparsity;
  spec.noise_sigma = c.noise_sigma;
  spec.seed = c.teacher_seed;
  SyntheticTask<Scalar> task = synth_teacher_student<Scalar>(spec, c.synth_train_examples + c.synth_eval_examples);
  Splits<Scalar> s;
  const Dataset<Scalar>& d = task.data;
  s.train.inputs = d.inputs.topRows(c.synth_train_examples);
  s.train.targets = d.targets.topRows(c.synth_train_examples);
  s.train.split = "train";
  s.eval.inputs = d.inputs.bottomRows(c.synth_eval_examples);
  s.eval.targets = d.targets.bottomRows(c.synth_eval_examples);
  s.eval.split = "eval";
  return s;
}

template <typename Scalar>
EvalResult evaluate(ComputeGraph<Scalar>& graph, const std::vector<Tensor<Scalar>>& alpha, const Dataset<Scalar>& data) {
  EvalResult r;
  double loss_sum = 0.0;
  Index correct = 0;
  for (Index begin = 0; begin < data.size(); begin += kEvalChunk) {
    const Index end = std::min(data.size(), begin + kEvalChunk);
    const Batch<Scalar> batch = data.slice(begin, end);
    const Matrix<Scalar>& out = graph.forward_matrix(alpha, batch.inputs);
    loss_sum += static_cast<double>(evaluate_loss(graph, batch)) * static_cast<double>(end - begin);
    if (data.is_classification()) {
      for (Index row = 0; row < out.rows(); ++row) {
        Index best = 0;
        out.row(row).maxCoeff(&best);
        correct += (best == batch.labels[static_cast<std::size_t>(row)]);
      }
    }
  }
  r.examples = data.size();
  r.loss = loss_sum / static_cast<double>(data.size());
  r.accuracy = data.is_classification() ? static_cast<double>(correct) / static_cast<double>(data.size())
                                        : std::numeric_limits<double>::quiet_NaN();
  return r;
}

template <typename Scalar>
class Trainer {
 public:
  explicit Trainer(const TrainConfig& config)
      : config_(config),
        graph_(make_mlp<Scalar>(std::span<const Index>(config.layers),
                                config.dataset == "idx" ? LossKind::SoftmaxCrossEntropy : LossKind::SquaredError)),
        data_(load_data<Scalar>(config)) {
    if (data_.train.features() != config.layers.front()) {
      throw ConfigError("first entry of 'layers' (" + std::to_string(config.layers.front()) +
                        ") does not match the dataset's " + std::to_string(data_.train.features()) + " features");
    }
    DenseParamStore<Scalar> store(graph_);
    store.init_he(config.seed);
    state_ = make_state(std::move(store), config.sparsity, config.optimizer_settings(), config.ablation,
                        config.baseline, config.seed);
    initialize_masks(state_);
    batches_ = BatchIterator(data_.train.size(), config.batch_size, config.seed);

    for (std::size_t l = 0; l < state_.store.size(); ++l) {
      if (state_.store[l].is_weight && (!state_.exempt[l] || config.method == Method::Dense)) tracked_.push_back(l);
    }
    for (std::size_t l : tracked_) sizes_.push_back(state_.store[l].value.size());
    churn_reference_ = snapshot();
    reservoir_ = ReservoirTracker(tracked_sets(true), tracked_sets(false), sizes_);
  }

  RunResult run(const std::optional<std::string>& resume_from) {
    namespace fs = std::filesystem;
    fs::create_directories(config_.out_dir);
    RunResult result;
    result.metrics_path = (fs::path(config_.out_dir) / "metrics.csv").string();

    std::vector<std::string> kept_rows;
    if (resume_from) {
      restore(load_checkpoint<Scalar>(*resume_from));
      kept_rows = previous_rows(result.metrics_path, state_.step);
    }
    std::ofstream csv(result.metrics_path, std::ios::trunc);
    if (!csv) throw IoError("cannot write " + result.metrics_path);
    csv << kMetricsHeader << "\n";
    for (const std::string& row : kept_rows) csv << row << "\n";
    write_flops();

    while (state_.step < config_.steps) {
      const std::vector<std::uint32_t> rows = batches_.next();
      const Batch<Scalar> batch = data_.train.gather(rows);
      const StepMetrics m = train_step(state_, graph_, batch);
      if (!m.finite) {
        if (++nonfinite_streak_ >= kMaxNonFiniteSteps) {
          throw NumericError("loss was non-finite for " + std::to_string(kMaxNonFiniteSteps) +
                             " consecutive steps (last at step " + std::to_string(state_.step - 1) + ")");
        }
      } else {
        nonfinite_streak_ = 0;
        window_loss_sum_ += m.loss;
        ++window_count_;
      }
      if (m.masks_changed) reservoir_.observe(tracked_sets(true));

      const std::int64_t step = state_.step;
      if (step % config_.effective_churn_period() == 0) {
        MaskSnapshot now = snapshot();
        const ChurnReport churn = mask_churn(churn_reference_, now);
        churn_min_ = churn.min;
        churn_mean_ = churn.mean;
        churn_max_ = churn.max;
        churn_reference_ = std::move(now);
      }
      if (step % config_.eval_period == 0 || step == config_.steps) {
        const MetricsRecord record = make_record();
        csv << format_metrics_row(record) << "\n";
        csv.flush();
        if (!csv) throw IoError("write failed for " + result.metrics_path);
        result.rows.push_back(record);
      }
      if (config_.checkpoint_period > 0 && step % config_.checkpoint_period == 0 && step != config_.steps) {
        save_checkpoint((fs::path(config_.out_dir) / ("ckpt-" + std::to_string(step) + ".tkas")).string(),
                        checkpoint());
      }
    }

    result.final_step = state_.step;
    result.final_checkpoint = (fs::path(config_.out_dir) / "final.tkas").string();
    save_checkpoint(result.final_checkpoint, checkpoint());
    write_summary(result);
    return result;
  }

  EvalResult evaluate_from(const std::string& path) {
    restore(load_checkpoint<Scalar>(path));
    EvalResult r = evaluate(graph_, masked_params(state_), data_.eval);
    r.step = state_.step;
    return r;
  }

 private:
  std::vector<IndexSet> tracked_sets(bool forward) const {
    std::vector<IndexSet> out;
    for (std::size_t l : tracked_) out.push_back(forward ? state_.masks.layers[l].a : state_.masks.layers[l].b);
    return out;
  }

  MaskSnapshot snapshot() const { return MaskSnapshot::from_sets(state_.step, tracked_sets(true), sizes_); }

  SparsitySpec effective_spec() const {
    SparsitySpec spec = state_.sparsity;
    switch (config_.method) {
      case Method::Dense:
        spec.s_fwd = spec.s_bwd = 0.0;
        break;
      case Method::Static:
      case Method::Set:
        spec.s_bwd = spec.s_fwd;
        break;
      case Method::TopKast:
        if (state_.exploration_stopped()) spec.s_bwd = spec.s_fwd;
        break;
    }
    return spec;
  }

  MetricsRecord make_record() {
    MetricsRecord r;
    r.step = state_.step;
    r.train_loss = window_count_ > 0 ? window_loss_sum_ / static_cast<double>(window_count_)
                                     : std::numeric_limits<double>::quiet_NaN();
    window_loss_sum_ = 0.0;
    window_count_ = 0;
    const EvalResult e = evaluate(graph_, masked_params(state_), data_.eval);
    r.eval_loss = e.loss;
    r.eval_accuracy = e.accuracy;
    r.churn_min = churn_min_;
    r.churn_mean = churn_mean_;
    r.churn_max = churn_max_;
    r.reservoir_frac = reservoir_.fraction();
    const FlopReport flops = flop_estimate(graph_, effective_spec(), state_.exempt);
    r.fwd_flop_ratio = flops.total.fwd_ratio;
    r.bwd_flop_ratio = flops.total.bwd_ratio;
    return r;
  }

  Checkpoint<Scalar> checkpoint() const {
    Checkpoint<Scalar> c;
    c.step = state_.step;
    c.seed = config_.seed;
    c.store = state_.store;
    c.masks = state_.masks;
    c.momentum = state_.momentum;
    c.batch_epoch = batches_.epoch();
    c.batch_cursor = batches_.cursor();
    c.churn_reference = churn_reference_;
    c.churn_min = churn_min_;
    c.churn_mean = churn_mean_;
    c.churn_max = churn_max_;
    c.reservoir = reservoir_;
    c.window_loss_sum = window_loss_sum_;
    c.window_count = window_count_;
    c.nonfinite_streak = nonfinite_streak_;
    return c;
  }

  void restore(Checkpoint<Scalar> c) {
    if (c.seed != config_.seed) throw ConfigError("checkpoint was written with a different seed");
    if (c.store.size() != state_.store.size()) throw DimensionError("checkpoint layer count does not match the model");
    for (std::size_t l = 0; l < c.store.size(); ++l) {
      if (c.store[l].name != state_.store[l].name || c.store[l].value.shape() != state_.store[l].value.shape()) {
        throw DimensionError("checkpoint layer '" + c.store[l].name + "' does not match the model");
      }
    }
    if (c.masks.layers.size() != state_.store.size()) throw FormatError("checkpoint mask count does not match the model");
    if (c.momentum.size() != state_.momentum.size()) throw ConfigError("checkpoint momentum setting differs from config");
    state_.step = c.step;
    state_.store = std::move(c.store);
    state_.masks = std::move(c.masks);
    state_.momentum = std::move(c.momentum);
    batches_.seek(c.batch_epoch, c.batch_cursor);
    churn_reference_ = std::move(c.churn_reference);
    churn_min_ = c.churn_min;
    churn_mean_ = c.churn_mean;
    churn_max_ = c.churn_max;
    reservoir_ = std::move(c.reservoir);
    window_loss_sum_ = c.window_loss_sum;
    window_count_ = c.window_count;
    nonfinite_streak_ = c.nonfinite_streak;
  }

  static std::vector<std::string> previous_rows(const std::string& path, std::int64_t upto) {
    std::vector<std::string> rows;
    std::ifstream in(path);
    std::string line;
    bool header = true;
    while (std::getline(in, line)) {
      if (header) {
        header = false;
        if (line != kMetricsHeader) return {};
        continue;
      }
      if (line.empty()) continue;
      if (std::stoll(line.substr(0, line.find(','))) <= upto) rows.push_back(line);
    }
    return rows;
  }

  void write_flops() const {
    const FlopReport report = flop_estimate(graph_, effective_spec(), state_.exempt);
    const std::string path = (std::filesystem::path(config_.out_dir) / "flops.txt").string();
    std::ofstream out(path, std::ios::trunc);
    out << "# " << FlopReport::kConvention << "\n";
    out << "layer,rows,cols,density,backward_density,dense_fwd,sparse_fwd,input_grad,weight_grad,dense_bwd,"
           "sparse_bwd,topk_overhead,fwd_ratio,bwd_ratio\n";
    auto line = [&](const LayerFlops& f) {
      out << f.name << "," << f.rows << "," << f.cols << "," << fmt(f.density) << "," << fmt(f.backward_density)
          << "," << fmt(f.dense_fwd) << "," << fmt(f.sparse_fwd) << "," << fmt(f.input_grad) << ","
          << fmt(f.weight_grad) << "," << fmt(f.dense_bwd) << "," << fmt(f.sparse_bwd) << ","
          << fmt(f.topk_overhead) << "," << fmt(f.fwd_ratio) << "," << fmt(f.bwd_ratio) << "\n";
    };
    for (const LayerFlops& f : report.layers) line(f);
    line(report.total);
    if (!out) throw IoError("write failed for " + path);
  }

  void write_summary(const RunResult& result) const {
    const std::string path = (std::filesystem::path(config_.out_dir) / "summary.txt").string();
    std::ofstream out(path, std::ios::trunc);
    out << "method = " << to_string(config_.method) << "\n";
    out << "steps = " << result.final_step << "\n";
    if (!result.rows.empty()) {
      const MetricsRecord& last = result.rows.back();
      out << "final_eval_loss = " << fmt(last.eval_loss) << "\n";
      out << "final_eval_accuracy = " << fmt(last.eval_accuracy) << "\n";
      out << "final_reservoir_frac = " << fmt(last.reservoir_frac) << "\n";
      out << "fwd_flop_ratio = " << fmt(last.fwd_flop_ratio) << "\n";
      out << "bwd_flop_ratio = " << fmt(last.bwd_flop_ratio) << "\n";
    }
    out << "checkpoint = " << result.final_checkpoint << "\n";
    out << "\n# config\n" << to_config_text(config_);
    if (!out) throw IoError("write failed for " + path);
  }

  TrainConfig config_;
  ComputeGraph<Scalar> graph_;
  Splits<Scalar> data_;
  OptimizerState<Scalar> state_;
  BatchIterator batches_;

  std::vector<std::size_t> tracked_;
  std::vector<Index> sizes_;
  MaskSnapshot churn_reference_;
  double churn_min_ = 0.0;
  double churn_mean_ = 0.0;
  double churn_max_ = 0.0;
  ReservoirTracker reservoir_;
  double window_loss_sum_ = 0.0;
  std::int64_t window_count_ = 0;
  std::int64_t nonfinite_streak_ = 0;
};

}  // namespace

std::string format_metrics_row(const MetricsRecord& r) {
  std::ostringstream out;
  out << r.step << "," << fmt(r.train_loss) << "," << fmt(r.eval_loss) << "," << fmt(r.eval_accuracy) << ","
      << fmt(r.churn_min) << "," << fmt(r.churn_mean) << "," << fmt(r.churn_max) << "," << fmt(r.reservoir_frac)
      << "," << fmt(r.fwd_flop_ratio) << "," << fmt(r.bwd_flop_ratio);
  return out.str();
}

RunResult run_experiment(const TrainConfig& config, const std::optional<std::string>& resume_from) {
  config.validate();
  if (config.precision == 64) return Trainer<double>(config).run(resume_from);
  return Trainer<float>(config).run(resume_from);
}

EvalResult evaluate_checkpoint(const TrainConfig& config, const std::string& checkpoint_path) {
  config.validate();
  const int width = checkpoint_scalar_bytes(checkpoint_path);
  if (width == 8) return Trainer<double>(config).evaluate_from(checkpoint_path);
  return Trainer<float>(config).evaluate_from(checkpoint_path);
}

}  // namespace topkast
