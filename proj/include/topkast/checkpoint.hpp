#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "topkast/masking.hpp"
#include "topkast/metrics.hpp"
#include "topkast/param_store.hpp"

namespace topkast {

inline constexpr char kCheckpointMagic[4] = {'T', 'K', 'A', 'S'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Everything needed to continue a run bit-exactly.
///
/// Random draws are derived from (seed, stream, step, layer), so the seed
/// together with the batch position stands in for generator state.
template <typename Scalar>
struct Checkpoint {
  std::int64_t step = 0;
  std::uint64_t seed = 0;
  DenseParamStore<Scalar> store;
  MaskPair masks;
  std::vector<Vector<Scalar>> momentum;

  std::uint64_t batch_epoch = 0;
  std::int64_t batch_cursor = 0;

  MaskSnapshot churn_reference;
  double churn_min = 0.0;
  double churn_mean = 0.0;
  double churn_max = 0.0;
  ReservoirTracker reservoir;
  double window_loss_sum = 0.0;
  std::int64_t window_count = 0;
  std::int64_t nonfinite_streak = 0;

  friend bool operator==(const Checkpoint& a, const Checkpoint& b) {
    if (a.momentum.size() != b.momentum.size()) return false;
    for (std::size_t l = 0; l < a.momentum.size(); ++l) {
      if (a.momentum[l].size() != b.momentum[l].size() ||
          !std::equal(a.momentum[l].data(), a.momentum[l].data() + a.momentum[l].size(), b.momentum[l].data())) {
        return false;
      }
    }
    return a.step == b.step && a.seed == b.seed && a.store == b.store && a.masks == b.masks &&
           a.batch_epoch == b.batch_epoch && a.batch_cursor == b.batch_cursor &&
           a.churn_reference.step == b.churn_reference.step && a.churn_reference.layers == b.churn_reference.layers &&
           a.churn_min == b.churn_min && a.churn_mean == b.churn_mean && a.churn_max == b.churn_max &&
           a.reservoir == b.reservoir && a.window_loss_sum == b.window_loss_sum && a.window_count == b.window_count &&
           a.nonfinite_streak == b.nonfinite_streak;
  }
};

/// Little-endian binary encoding, starting with "TKAS" and the format version.
template <typename Scalar>
std::vector<std::uint8_t> encode_checkpoint(const Checkpoint<Scalar>& ckpt);

/// Inverse of encode_checkpoint. Throws FormatError on a bad magic or scalar
/// width, VersionError on a version mismatch, TruncationError on short input.
template <typename Scalar>
Checkpoint<Scalar> decode_checkpoint(const std::vector<std::uint8_t>& bytes);

template <typename Scalar>
void save_checkpoint(const std::string& path, const Checkpoint<Scalar>& ckpt);

template <typename Scalar>
Checkpoint<Scalar> load_checkpoint(const std::string& path);

/// Scalar width in bytes recorded in a checkpoint file (4 or 8).
int checkpoint_scalar_bytes(const std::string& path);

}  // namespace topkast
