#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "snd/features.hpp"
#include "snd/model.hpp"
#include "snd/types.hpp"

namespace snd {

struct ArcFaceParams {
  double scale = 32.0;
  double margin = 0.2;  // radians

  void validate() const;
};

struct TrainConfig {
  double learning_rate = 1e-4;
  int batch_size = 2;
  int max_steps = 500;
  uint64_t seed = 1;
  bool shuffle_speakers = true;
  double distractor_padding_prob = 0.5;
  ArcFaceParams arcface;
  // Optimizer constants, pinned for reproducibility.
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.01;

  void validate() const;
};

// ----- enrollment protocol -----

// Row n of the result is table row sel.labels[n]; computed as the one-hot
// selection matrix times the table.
EmbeddingSet lookup_embeddings(const SpeakerSelection& sel, const SpeakerTable& table);

// Appends capacity - N_loc slots: each independently a distinct random
// absent-speaker table row with probability distractor_padding_prob (while the
// pool lasts), otherwise the non-speech embedding. Appended activity rows are
// zero and appended slots are marked invalid. The caller guarantees
// absent_pool is disjoint from the present labels.
void pad_speakers(EmbeddingSet& emb, ActivityMatrix& acts, const SpeakerTable& table,
                  const std::vector<int>& absent_pool, int capacity,
                  double distractor_padding_prob, Rng& rng);

// Applies one random permutation to embedding rows, validity flags, and
// activity rows; returns it (new row i was old row perm[i]).
std::vector<int> shuffle_speakers(EmbeddingSet& emb, ActivityMatrix& acts, Rng& rng);

// ----- losses (plain values; the tape ops compute the same numbers) -----

double bce_loss(const ActivityMatrix& pred, const ActivityMatrix& truth);

// Mean over valid rows; labels align with embedding rows and entries at
// invalid rows are ignored. No valid rows -> 0.
double arcface_loss(const EmbeddingSet& emb, const SpeakerSelection& labels,
                    const SpeakerTable& table, const ArcFaceParams& ap);

struct LossParts {
  double bce = 0.0;
  double arc = 0.0;
  double total = 0.0;
};

LossParts total_loss(const ActivityMatrix& pred, const ActivityMatrix& truth,
                     const EmbeddingSet& emb, const SpeakerSelection& labels,
                     const SpeakerTable& table, const ArcFaceParams& ap);

// ----- optimizer -----

// Adam with decoupled weight decay. Moment state is created lazily per tensor
// name; tensors absent from a step's gradient map are untouched.
class AdamW {
 public:
  AdamW(double beta1, double beta2, double eps, double weight_decay);
  explicit AdamW(const TrainConfig& tc)
      : AdamW(tc.adam_beta1, tc.adam_beta2, tc.adam_eps, tc.weight_decay) {}

  void step(Parameters& params, const std::map<std::string, Matrix>& grads, double lr);
  int64_t steps() const { return step_; }

 private:
  double beta1_, beta2_, eps_, weight_decay_;
  int64_t step_ = 0;
  std::map<std::string, Matrix> m_, v_;
};

// ----- staged training -----

struct StageSpec {
  std::string name = "s2snd-1";
  std::vector<std::string> frozen;  // parameter name prefixes
  double learning_rate = 1e-4;
  double sim_fraction = 1.0;  // probability an example is drawn from the sim pool
  int steps = 500;
};

// The staged schedule: s2snd-1 (frozen extractor, sim only), s2snd-2 (all
// weights, 50/50 mix), s2snd-3 (decayed lr), mc-1 (only the channel attention
// module trains), mc-2 (all weights, decayed lr), adapt (fine-tune mix).
StageSpec stage_defaults(const std::string& name);

// One block of one conversation, ready for the training graph.
struct TrainExample {
  std::vector<Matrix> channels;  // per-channel log-mel, frames x feature_dim
  Matrix activity;               // N_loc x T' ground truth on the extractor frame grid
  std::vector<int> labels;       // global table row per activity row
};

struct DataMix {
  const std::vector<TrainExample>* sim = nullptr;
  const std::vector<TrainExample>* real = nullptr;
};

const TrainExample& sample_example(const DataMix& mix, double sim_fraction, Rng& rng,
                                   bool* from_sim = nullptr);

struct LossGraph {
  ad::Var total;
  ad::Var bce;
  ad::Var arc;  // only meaningful when has_arc
  bool has_arc = false;
};

// Full training graph for one example: front end, enrollment lookup with
// padding and joint speaker shuffling, detection BCE over all slots plus
// representation ArcFace over the slots with speech.
LossGraph example_loss_graph(Binder& b, const TrainExample& ex, const TrainConfig& tc, Rng& rng);

struct StepRecord {
  int step = 0;
  double lr = 0.0;
  double bce = 0.0;
  double arc = 0.0;
  double total = 0.0;
};

// Optimizes the unfrozen parameter groups in place for stage.steps steps.
// Frozen tensors are bound as constants and verified bit-identical afterwards.
// Throws on a non-finite loss.
std::vector<StepRecord> train_stage(Parameters& params, const StageSpec& stage,
                                    const DataMix& mix, const TrainConfig& tc,
                                    std::ostream* log = nullptr);

// Blockwise examples for one conversation: per-channel normalized log-mel
// plus rasterized ground-truth activity and the speakers' table labels.
std::vector<TrainExample> build_examples(const Audio& audio, const DiarizationResult& truth,
                                         const std::map<std::string, int>& speaker_labels,
                                         const ModelConfig& cfg, const BlockPlan& plan,
                                         const FeatureOptions& fo = {});

// ----- extractor pretraining -----

struct LabeledFeatures {
  Matrix features;  // frames x feature_dim log-mel
  int label = 0;
};

// Log-mel features for one pretraining clip, normalized the same way as
// feature_blocks normalizes training blocks. Multichannel clips use channel 0.
Matrix clip_features(const Audio& audio, const FeatureOptions& fo = {});

// Trains extractor + temporal statistics pooling + linear head as a
// closed-set speaker classifier under the ArcFace loss. Returns the full
// parameter set (extractor weights are what later stages reuse). A batch_size
// at or above the clip count switches to deterministic full-batch steps.
Parameters pretrain_extractor(const std::vector<LabeledFeatures>& train_set, int num_classes,
                              const ModelConfig& cfg, const TrainConfig& tc,
                              std::ostream* log = nullptr,
                              std::vector<StepRecord>* history = nullptr);

// Top-1 accuracy of the pretrained classifier (cosine to its class table).
double pretrain_accuracy(const Parameters& params, const std::vector<LabeledFeatures>& eval_set);

// Copies tensors whose name starts with prefix from src into dst; returns the
// count. Shape conflicts with existing dst tensors are errors.
int copy_tensors(const Parameters& src, Parameters& dst, const std::string& prefix);

}  // namespace snd
