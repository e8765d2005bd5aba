#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "snd/autodiff.hpp"
#include "snd/features.hpp"
#include "snd/types.hpp"

namespace snd {

// Desk-scale MC-S2SND architecture knobs. Defaults are the toy configuration;
// the paper-scale values are {64,128,256,512} widths, D=512, 8 heads,
// 6 encoder / 6 decoder blocks, S=256, N=30.
struct ModelConfig {
  int feature_dim = 80;  // log-mel bins fed to the extractor
  std::vector<int> extractor_widths = {8, 16, 32, 64};
  int extractor_time_stride = 1;
  int frontend_dim = 64;   // F: extractor output / channel-attention width
  int attention_dim = 64;  // D: encoder and decoder width
  int heads = 4;
  int ff_dim = 128;
  int conv_kernel = 15;
  int ch_attn_blocks = 0;  // 0 = plain S2SND without a fusion module
  int encoder_blocks = 2;
  int decoder_blocks = 2;
  int embedding_dim = 32;  // S
  int capacity = 8;        // N speaker slots
  int table_size = 64;     // rows of the learnable speaker table

  void validate() const;
  // Frequency bins remaining after the stride-2 stages.
  int final_freq_bins() const;
  // Frames the extractor emits for an input of `frames` rows.
  int output_frames(int frames) const;
};

struct Parameters {
  ModelConfig config;
  std::map<std::string, Matrix> tensors;

  const Matrix& at(const std::string& name) const;
  Matrix& at(const std::string& name);
  bool has(const std::string& name) const { return tensors.count(name) != 0; }
};

// Tensor name -> (rows, cols) for everything the network requires. Names are
// grouped by trainable prefix: extractor. chattn. encoder. detdec. repdec.
// spktable.
std::map<std::string, std::pair<int, int>> expected_shapes(const ModelConfig& cfg);

// Shapes for the extractor-pretraining head (statistics pooling classifier).
std::map<std::string, std::pair<int, int>> pretrain_head_shapes(const ModelConfig& cfg,
                                                                int num_classes);

// Fresh parameters; every tensor is seeded by (seed, name) so initialization
// is independent of iteration order.
Parameters init_parameters(const ModelConfig& cfg, uint64_t seed);

// Adds freshly initialized tensors for `shapes` entries missing from params.
void init_missing(Parameters& params, const std::map<std::string, std::pair<int, int>>& shapes,
                  uint64_t seed);

// ----- checkpoints -----
struct Checkpoint {
  Parameters params;
  std::map<std::string, std::string> meta;
};

void save_checkpoint(const Parameters& params, const std::string& path,
                     const std::map<std::string, std::string>& meta = {});
Checkpoint load_checkpoint(const std::string& path);

// ----- tape-graph builders -----
// Binds named parameter tensors onto a tape on first use. Tensors whose name
// starts with a frozen prefix are bound as constants, so backward skips them.
class Binder {
 public:
  Binder(ad::Tape& tape, const Parameters& params,
         std::vector<std::string> frozen_prefixes = {});

  ad::Var operator()(const std::string& name);
  bool frozen(const std::string& name) const;
  ad::Tape& tape() { return tape_; }
  const Parameters& params() const { return params_; }
  // Every tensor bound so far (insertion order irrelevant; map is by name).
  const std::map<std::string, ad::Var>& bound() const { return bound_; }

 private:
  ad::Tape& tape_;
  const Parameters& params_;
  std::vector<std::string> frozen_;
  std::map<std::string, ad::Var> bound_;
};

// Extractor applied to one channel's T x feature_dim log-mel matrix.
ad::Var extract_channel_graph(Binder& b, const ModelConfig& cfg, ad::Var feats);

// Channel fusion: per-frame attention along the channel axis, then the mean
// over channels. C=1 inputs pass through the blocks unchanged in shape.
ad::Var channel_attention_graph(Binder& b, const ModelConfig& cfg,
                                const std::vector<ad::Var>& channels);

ad::Var encode_graph(Binder& b, const ModelConfig& cfg, ad::Var x);

// xhat: T' x D, emb: N x S. Returns N x T' activity probabilities.
ad::Var detect_graph(Binder& b, const ModelConfig& cfg, ad::Var xhat, ad::Var emb);

// x: T' x F memory, acts: N x T' activity mask source. Returns N x S
// unit-length embeddings; rows with empty activity become the null embedding
// and are reported invalid through valid_out when given.
ad::Var represent_graph(Binder& b, const ModelConfig& cfg, ad::Var x, const Matrix& acts,
                        std::vector<bool>* valid_out = nullptr);

// Pretraining head: extractor frames -> utterance embedding (1 x S).
ad::Var pretrain_embed_graph(Binder& b, const ModelConfig& cfg, ad::Var frames);

// ----- plain-value forward passes (inference) -----
class Network {
 public:
  explicit Network(Parameters params);

  const ModelConfig& config() const { return params_.config; }
  const Parameters& params() const { return params_; }
  Parameters& params() { return params_; }
  SpeakerTable speaker_table() const;

  FeatureSequence extract_per_channel(const FeatureBlock& block) const;
  FeatureSequence channel_attention(const FeatureSequence& xprime) const;
  FeatureSequence encode(const FeatureSequence& x) const;
  ActivityMatrix detect(const FeatureSequence& xhat, const EmbeddingSet& emb) const;
  EmbeddingSet represent(const FeatureSequence& x, const ActivityMatrix& acts) const;

 private:
  Parameters params_;
};

}  // namespace snd
