#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "topkast/graph.hpp"
#include "topkast/optimizer.hpp"
#include "topkast/rng.hpp"

namespace topkast {

/// Raw contents of an IDX file.
struct IdxFile {
  std::uint32_t magic = 0;
  std::vector<Index> dims;
  std::vector<std::uint8_t> payload;
};

constexpr std::uint32_t kIdxImageMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

/// Reads an unsigned-byte IDX file (plain or gzip-compressed).
IdxFile read_idx(const std::string& path);

/// Writes an uncompressed IDX file.
void write_idx(const std::string& path, const IdxFile& file);

/// Examples in rows. Classification sets fill `labels`, regression sets fill `targets`.
template <typename Scalar>
struct Dataset {
  RowMajorMatrix<Scalar> inputs;
  std::vector<int> labels;
  RowMajorMatrix<Scalar> targets;
  std::string split;

  Index size() const { return inputs.rows(); }
  Index features() const { return inputs.cols(); }
  bool is_classification() const { return targets.size() == 0; }

  /// Gathers `rows` into a batch.
  Batch<Scalar> gather(std::span<const std::uint32_t> rows) const {
    Batch<Scalar> b;
    b.inputs.resize(static_cast<Index>(rows.size()), features());
    for (std::size_t r = 0; r < rows.size(); ++r) b.inputs.row(static_cast<Index>(r)) = inputs.row(rows[r]);
    if (is_classification()) {
      b.labels.reserve(rows.size());
      for (std::uint32_t r : rows) b.labels.push_back(labels.at(r));
    } else {
      Tensor<Scalar> t({static_cast<Index>(rows.size()), targets.cols()});
      for (std::size_t r = 0; r < rows.size(); ++r) t.matrix().row(static_cast<Index>(r)) = targets.row(rows[r]);
      b.targets = std::move(t);
    }
    return b;
  }

  Batch<Scalar> slice(Index begin, Index end) const {
    std::vector<std::uint32_t> rows(static_cast<std::size_t>(end - begin));
    std::iota(rows.begin(), rows.end(), static_cast<std::uint32_t>(begin));
    return gather(rows);
  }
};

/// Images scale to [0, 1] and flatten to one row per image; label files fill `labels`.
template <typename Scalar>
Dataset<Scalar> load_idx(const std::string& path) {
  const IdxFile f = read_idx(path);
  Dataset<Scalar> d;
  const Index count = f.dims.at(0);
  if (f.magic == kIdxImageMagic) {
    const Index features = static_cast<Index>(f.payload.size()) / count;
    d.inputs.resize(count, features);
    for (Index i = 0; i < d.inputs.size(); ++i) {
      d.inputs.data()[i] = static_cast<Scalar>(f.payload[static_cast<std::size_t>(i)]) / Scalar(255);
    }
  } else {
    d.labels.assign(f.payload.begin(), f.payload.end());
  }
  return d;
}

/// Image file plus matching label file.
template <typename Scalar>
Dataset<Scalar> load_idx_pair(const std::string& images, const std::string& labels, std::string split) {
  Dataset<Scalar> d = load_idx<Scalar>(images);
  Dataset<Scalar> l = load_idx<Scalar>(labels);
  if (d.inputs.size() == 0) throw FormatError(images + " is not an image file");
  if (l.inputs.size() != 0 || static_cast<Index>(l.labels.size()) != d.size()) {
    throw FormatError(labels + " does not hold one label per image in " + images);
  }
  d.labels = std::move(l.labels);
  d.split = std::move(split);
  return d;
}

/// Random sparse ReLU teacher used to label synthetic regression data.
struct TeacherSpec {
  std::vector<Index> sizes{64, 64, 32, 1};
  double teacher_sparsity = 0.9;
  double noise_sigma = 0.1;
  std::uint64_t seed = 1;

  void validate() const {
    if (sizes.size() < 2) throw ArgumentError("teacher needs input and output sizes");
    if (!(teacher_sparsity >= 0.0 && teacher_sparsity < 1.0)) throw ArgumentError("teacher sparsity in [0, 1)");
    if (!(noise_sigma >= 0.0)) throw ArgumentError("noise sigma must be non-negative");
  }
};

template <typename Scalar>
struct SyntheticTask {
  Dataset<Scalar> data;
  std::vector<Tensor<Scalar>> teacher;  // slot order of make_mlp(sizes)
};

/// Teacher weights: He-normal, then exactly round(sparsity * n) entries per
/// weight tensor zeroed at random; biases N(0, 0.1). Inputs are standard
/// normal, standardised per feature; targets = teacher(x) + N(0, sigma).
template <typename Scalar>
SyntheticTask<Scalar> synth_teacher_student(const TeacherSpec& spec, Index num_examples) {
  spec.validate();
  SyntheticTask<Scalar> task;
  ComputeGraph<Scalar> graph = make_mlp<Scalar>(std::span<const Index>(spec.sizes), LossKind::SquaredError);
  for (std::size_t s = 0; s < graph.slots().size(); ++s) {
    const ParamSlot& slot = graph.slots()[s];
    Tensor<Scalar> t(slot.shape);
    std::mt19937_64 rng = derive_rng(spec.seed, Stream::Teacher, 0, s);
    if (slot.is_weight) {
      std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / static_cast<double>(slot.shape[1])));
      for (Scalar& w : t.flat()) w = static_cast<Scalar>(normal(rng));
      const Index zeros = round_count(spec.teacher_sparsity, t.size());
      const Index n = t.size();
      std::vector<std::uint32_t> order(static_cast<std::size_t>(n));
      std::iota(order.begin(), order.end(), 0u);
      for (Index k = 0; k < zeros; ++k) {
        std::uniform_int_distribution<Index> pick(k, n - 1);
        std::swap(order[static_cast<std::size_t>(k)], order[static_cast<std::size_t>(pick(rng))]);
        t[order[static_cast<std::size_t>(k)]] = Scalar(0);
      }
    } else {
      std::normal_distribution<double> normal(0.0, 0.1);
      for (Scalar& b : t.flat()) b = static_cast<Scalar>(normal(rng));
    }
    task.teacher.push_back(std::move(t));
  }

  Dataset<Scalar>& d = task.data;
  d.split = "synthetic";
  d.inputs.resize(num_examples, spec.sizes.front());
  std::mt19937_64 rng = derive_rng(spec.seed, Stream::TeacherData, 0, 0);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Index i = 0; i < d.inputs.size(); ++i) d.inputs.data()[i] = static_cast<Scalar>(normal(rng));
  for (Index c = 0; c < d.inputs.cols(); ++c) {
    auto col = d.inputs.col(c);
    const Scalar mean = col.mean();
    col.array() -= mean;
    const Scalar sd = std::sqrt(col.squaredNorm() / static_cast<Scalar>(std::max<Index>(1, num_examples)));
    if (sd > Scalar(0)) col /= sd;
  }
  graph.forward_matrix(task.teacher, Matrix<Scalar>(d.inputs));
  d.targets = graph.value(static_cast<int>(graph.nodes().size()) - 1);
  if (spec.noise_sigma > 0.0) {
    std::normal_distribution<double> noise(0.0, spec.noise_sigma);
    for (Index i = 0; i < d.targets.size(); ++i) d.targets.data()[i] += static_cast<Scalar>(noise(rng));
  }
  return task;
}

/// Seeded epoch-wise shuffling; every example is visited once per epoch,
/// the last batch of an epoch may be short.
class BatchIterator {
 public:
  BatchIterator() = default;
  BatchIterator(Index num_examples, Index batch_size, std::uint64_t seed)
      : n_(num_examples), batch_(batch_size), seed_(seed) {
    if (num_examples < 1 || batch_size < 1) throw ArgumentError("batch iterator needs examples and a batch size");
    shuffle();
  }

  std::vector<std::uint32_t> next() {
    if (cursor_ >= n_) {
      ++epoch_;
      cursor_ = 0;
      shuffle();
    }
    const Index end = std::min(n_, cursor_ + batch_);
    std::vector<std::uint32_t> rows(order_.begin() + cursor_, order_.begin() + end);
    cursor_ = end;
    return rows;
  }

  std::uint64_t epoch() const { return epoch_; }
  Index cursor() const { return cursor_; }

  /// Repositions to (epoch, cursor), regenerating that epoch's permutation.
  void seek(std::uint64_t epoch, Index cursor) {
    if (cursor < 0 || cursor > n_) throw ArgumentError("batch cursor out of range");
    epoch_ = epoch;
    cursor_ = cursor;
    shuffle();
  }

 private:
  void shuffle() {
    order_.resize(static_cast<std::size_t>(n_));
    std::iota(order_.begin(), order_.end(), 0u);
    std::mt19937_64 rng = derive_rng(seed_, Stream::Shuffle, epoch_, 0);
    for (Index i = n_ - 1; i > 0; --i) {
      std::uniform_int_distribution<Index> pick(0, i);
      std::swap(order_[static_cast<std::size_t>(i)], order_[static_cast<std::size_t>(pick(rng))]);
    }
  }

  Index n_ = 0;
  Index batch_ = 1;
  std::uint64_t seed_ = 0;
  std::uint64_t epoch_ = 0;
  Index cursor_ = 0;
  std::vector<std::uint32_t> order_;
};

}  // namespace topkast
