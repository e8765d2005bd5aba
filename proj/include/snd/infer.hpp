#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "snd/features.hpp"
#include "snd/model.hpp"
#include "snd/types.hpp"
#include "snd/wav.hpp"

namespace snd {

// Settings shared by both passes of the blockwise pipeline. The boot_* fields
// drive the first-pass bootstrap that produces an initial roster when no
// external RTTM is supplied.
struct PipelineConfig {
  BlockPlan plan;
  FeatureOptions features;
  double binarize_threshold = 0.5;
  int median_filter_frames = 11;  // odd; 1 disables smoothing
  int kmeans_max_iters = 50;
  double min_segment = 0.0;       // drop output segments shorter than this
  bool use_clustering = true;     // false: enroll plain per-speaker means

  double boot_window = 1.0;           // bootstrap embedding window (seconds)
  double boot_hop = 0.5;              // hop between bootstrap windows
  double boot_min_window = 0.25;      // discard shorter trailing windows
  double boot_merge_threshold = 0.6;  // keep merging clusters above this cosine
  int boot_vad_iters = 20;            // 2-means iterations for the energy VAD

  void validate() const;
};

// One representation-decoder output attributed to a roster speaker.
struct BlockEmbedding {
  int block_index = 0;
  std::string speaker;
  RowVector vector;  // unit length, embedding_dim wide
};

// Initial segmentation with no enrollment: energy VAD, sliding embedding
// windows over the speech regions, agglomerative cosine clustering down to
// the model capacity. Channel 0 only; speakers are named spk1..spkK in order
// of first appearance. Returns an empty result for silent audio.
DiarizationResult bootstrap_segments(const Audio& audio, const Network& model,
                                     const PipelineConfig& cfg);

// Per block: rasterize `init` onto the block's output grid, run the
// representation decoder, and keep the rows with any activity. Errors if
// `init` is empty or has more speakers than the model capacity.
std::vector<BlockEmbedding> extract_block_embeddings(const std::vector<FeatureBlock>& blocks,
                                                     const DiarizationResult& init,
                                                     const Network& model);

// Cosine K-means over the block embeddings, one cluster per roster speaker,
// centroids initialized at the per-speaker means. Returns the refined means
// renormalized to unit length, rows ordered like `speakers`. A cluster that
// empties keeps its previous centroid and logs a warning (std::cerr when
// `warnings` is null). `objective` (when given) receives the within-cluster
// cosine distance sum after each assignment step, a non-increasing sequence.
// Every speaker must own at least one embedding.
EmbeddingSet cluster_embeddings(const std::vector<BlockEmbedding>& embeddings,
                                const std::vector<std::string>& speakers,
                                const PipelineConfig& cfg,
                                std::vector<double>* objective = nullptr,
                                std::ostream* warnings = nullptr);

// Runs detection on every block with one shared enrollment, padded to the
// model capacity with the normalized non-speech embedding. Returns one
// capacity x T' probability matrix per block.
std::vector<ActivityMatrix> detect_blockwise(const std::vector<FeatureBlock>& blocks,
                                             const EmbeddingSet& enrolled, const Network& model);

// Stitches overlapped block outputs along time: each global frame is the mean
// of all block predictions covering it. Block i starts at i * block_shift;
// frames at or beyond `total_frames` are discarded.
ActivityMatrix fuse_scores(const std::vector<ActivityMatrix>& block_outputs,
                           const BlockPlan& plan, int total_frames);

// Per row: zero-padded median filter, threshold, then maximal 1-runs become
// segments; segments shorter than cfg.min_segment are dropped. Rows are named
// by `speakers`, or spk1..spkN when it is empty.
DiarizationResult binarize(const ActivityMatrix& scores, const PipelineConfig& cfg,
                           const std::vector<std::string>& speakers = {});

// One enrollment/detection pass: embeddings from `init`, clustering,
// blockwise detection, fusion, binarization. Roster speakers that yield no
// embedding are dropped with a warning. `fused_out` (when given) receives the
// full capacity-row fused score matrix.
DiarizationResult refine(const Audio& audio, const Network& model, const DiarizationResult& init,
                         const PipelineConfig& cfg, ActivityMatrix* fused_out = nullptr,
                         std::ostream* warnings = nullptr);

// First pass: bootstrap on channel 0, then refine with the same model.
DiarizationResult run_first_pass(const Audio& audio, const Network& model,
                                 const PipelineConfig& cfg);

// Two-pass pipeline: a first pass with `first_pass` seeds the roster (unless
// `init` is given), then `mc_model` refines it on all channels.
DiarizationResult run_pipeline(const Audio& audio, const Network& first_pass,
                               const Network& mc_model, const PipelineConfig& cfg,
                               const DiarizationResult* init = nullptr,
                               ActivityMatrix* fused_out = nullptr,
                               std::ostream* warnings = nullptr);

// Raw score matrix container: "SNDTNSR1", row/column counts, row-major
// doubles, all little-endian.
void write_score_matrix(const Matrix& scores, const std::string& path);
Matrix read_score_matrix(const std::string& path);

}  // namespace snd
