#pragma once

#include <vector>

#include "snd/types.hpp"
#include "snd/wav.hpp"

namespace snd {

struct FeatureOptions {
  double frame_length = 0.025;
  double frame_shift = 0.010;
  int num_mels = 80;
  double log_floor = 1e-10;
  bool normalize_waveform = true;
  bool normalize_features = true;
};

struct AudioBlock {
  Audio audio;
  int block_index = 0;
  double start_time = 0.0;
};

struct FeatureBlock {
  FeatureSequence features;
  int block_index = 0;
  double start_time = 0.0;
};

// Scales all channels jointly so the recording's peak magnitude is 1.
// Relative channel gains are preserved. Silent audio is returned unchanged.
Audio peak_normalize(const Audio& audio);

// Number of blocks a recording of `total_samples` yields under the plan.
int block_count(Eigen::Index total_samples, int sample_rate, const BlockPlan& plan);

// Cuts the recording into blocks of plan.block_length every plan.block_shift.
// The final partial block is zero-padded to full length.
std::vector<AudioBlock> split_blocks(const Audio& audio, const BlockPlan& plan);

// Log Mel-filterbank energies per channel: Hann window, power spectrum,
// triangular filters on the HTK Mel scale spanning 0 Hz to Nyquist.
// The result is padded (repeating the last frame) or truncated to
// `nominal_frames`; pass -1 to use round(duration / frame_shift).
FeatureSequence logmel(const Audio& audio, const FeatureOptions& opt = {},
                       int nominal_frames = -1);

// Per channel, over all time-frequency values: mean 0, std 1 (std floor 1e-8).
FeatureSequence normalize_block(const FeatureSequence& feat);

// Full front end: optional peak normalization, blocking, log Mel features,
// optional per-block per-channel normalization.
std::vector<FeatureBlock> feature_blocks(const Audio& audio, const BlockPlan& plan,
                                         const FeatureOptions& opt = {});

// Center frequencies in Hz of the Mel filters (useful for diagnostics).
std::vector<double> mel_center_frequencies(int sample_rate, const FeatureOptions& opt = {});

}  // namespace snd
