#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace snd {

using Scalar = double;
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

/// Frame-level feature sequences produced along the front-end -> encoder path.
/// PerChannel holds one T x F matrix per input channel; Fused and Encoded hold
/// a single matrix.
enum class FeatureRole { PerChannel, Fused, Encoded };

struct FeatureSequence {
  std::vector<Matrix> channels;
  FeatureRole role = FeatureRole::Fused;
  double frame_period = 0.010;

  int frames() const { return channels.empty() ? 0 : static_cast<int>(channels[0].rows()); }
  int dim() const { return channels.empty() ? 0 : static_cast<int>(channels[0].cols()); }
  int channel_count() const { return static_cast<int>(channels.size()); }
  const Matrix& single() const {
    if (channels.size() != 1) throw std::logic_error("FeatureSequence: expected a single fused matrix");
    return channels[0];
  }
};

void check_feature_sequence(const FeatureSequence& f);

enum class ActivityKind { GroundTruth, Probability };

/// Per-speaker frame activity, one row per speaker slot.
struct ActivityMatrix {
  Matrix values;  // N x T'
  ActivityKind kind = ActivityKind::GroundTruth;
  double frame_period = 0.010;

  int speakers() const { return static_cast<int>(values.rows()); }
  int frames() const { return static_cast<int>(values.cols()); }
};

void check_activity_matrix(const ActivityMatrix& a);

/// A set of fixed-dimension speaker embeddings; rows with valid=false are
/// padded or null slots.
struct EmbeddingSet {
  Matrix vectors;  // N x S
  std::vector<bool> valid;

  int size() const { return static_cast<int>(vectors.rows()); }
  int dim() const { return static_cast<int>(vectors.cols()); }
};

void check_embedding_set(const EmbeddingSet& e);

/// Learnable global embedding table plus the non-speech padding embedding.
struct SpeakerTable {
  Matrix table;          // N_all x S
  RowVector non_speech;  // 1 x S

  int size() const { return static_cast<int>(table.rows()); }
  int dim() const { return static_cast<int>(table.cols()); }
};

/// Local speaker labels for one training sample, as indices into the global
/// table. one_hot() materializes the equivalent selection matrix.
struct SpeakerSelection {
  std::vector<int> labels;
  int num_classes = 0;

  int size() const { return static_cast<int>(labels.size()); }
  Matrix one_hot() const;
};

void check_speaker_selection(const SpeakerSelection& s);

struct Segment {
  std::string speaker;
  double onset = 0.0;
  double duration = 0.0;

  double end() const { return onset + duration; }
};

/// Labeled speech segments for one recording.
struct DiarizationResult {
  std::string recording_id;
  std::vector<Segment> segments;

  bool empty() const { return segments.empty(); }
  double max_end() const;
  double total_speech() const;
};

void check_diarization_result(const DiarizationResult& r);

/// Speakers ordered by the onset of their first segment.
std::vector<std::string> speakers_in_order(const DiarizationResult& r);

/// Sorts by (onset, speaker) and merges overlapping or touching segments of
/// the same speaker.
DiarizationResult normalize_result(const DiarizationResult& r);

/// Restrict a result to [t0, t1) and shift onsets so t0 becomes 0.
DiarizationResult crop_result(const DiarizationResult& r, double t0, double t1);

/// Blockwise processing geometry. Lengths must sit on the frame grid.
struct BlockPlan {
  double block_length = 8.0;
  double block_shift = 2.0;
  double frame_period = 0.010;

  int length_frames() const;
  int shift_frames() const;
};

void check_block_plan(const BlockPlan& p);

// ---------------------------------------------------------------------------
// Deterministic random numbers. All sampling in the project goes through Rng
// so results do not depend on the standard library's distribution internals.

uint64_t splitmix64(uint64_t& state);

/// Combine seed material into a new stream seed.
uint64_t mix_seed(uint64_t a, uint64_t b);
uint64_t mix_seed(uint64_t a, uint64_t b, uint64_t c);
uint64_t hash_string(const std::string& s);

class Rng {
 public:
  explicit Rng(uint64_t seed);

  uint64_t next_u64();
  double uniform();                      // [0, 1)
  double uniform(double lo, double hi);  // [lo, hi)
  int uniform_int(int n);                // [0, n)
  double normal();
  std::vector<int> permutation(int n);
  /// k distinct values from [0, n), order random.
  std::vector<int> sample_without_replacement(int n, int k);

 private:
  uint64_t s_[4];
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace snd
