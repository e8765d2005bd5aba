#pragma once

#include <limits>
#include <string>
#include <vector>

#include "snd/types.hpp"
#include "snd/wav.hpp"

namespace snd {

struct Resonator {
  double center_hz = 0;
  double bandwidth_hz = 0;
  double gain = 0;
};

// A synthetic speaker: resonator-filtered pulse train. Identity is carried by
// the formant positions, which are drawn from disjoint per-index grid cells.
struct SyntheticVoice {
  std::string speaker_id;
  std::vector<Resonator> resonators;
  double base_pitch = 100.0;
};

struct ChannelSpec {
  int delay_samples = 0;
  double gain = 1.0;
  double noise_snr_db = std::numeric_limits<double>::infinity();
};

struct ConversationSpec {
  int num_speakers = 2;
  double duration = 60.0;
  double overlap_ratio = 0.2;
  int channel_count = 1;
  std::vector<ChannelSpec> per_channel;
  uint64_t seed = 1;
  int sample_rate = 16000;
  std::string recording_id = "rec";
};

struct TurnSynthesis {
  std::vector<std::vector<Scalar>> sources;
  DiarizationResult truth;
  double achieved_overlap = 0.0;
};

SyntheticVoice make_voice(int speaker_index, uint64_t seed);

// Fraction of speech time (>=1 speaker active) where >=2 speakers are active.
double measure_overlap(const DiarizationResult& result);

// Draws alternating speech/pause turns per speaker, scaling pauses to hit the
// overlap target, and synthesizes one mono source per speaker whose nonzero
// support equals that speaker's segments (20 ms raised-cosine fades inside).
TurnSynthesis synthesize_turns(const ConversationSpec& spec,
                               const std::vector<SyntheticVoice>& voices);

// Channel c = sum over speakers of delayed, scaled source + white noise at the
// channel's SNR. Noise draws depend only on (seed, channel), not on the SNR,
// so the clean part is stable when SNRs change.
Audio render_multichannel(const std::vector<std::vector<Scalar>>& sources,
                          const ConversationSpec& spec);

struct Conversation {
  Audio audio;
  DiarizationResult truth;
  double achieved_overlap = 0.0;
  std::vector<int> voice_indices;
};

// Per-channel randomization ranges used when generating a corpus.
struct ChannelProfile {
  double snr_lo = std::numeric_limits<double>::infinity();
  double snr_hi = std::numeric_limits<double>::infinity();
  double gain_lo = 1.0;
  double gain_hi = 1.0;
  int delay_lo = 0;
  int delay_hi = 0;
};

struct CorpusOptions {
  int num_conversations = 8;
  double duration = 60.0;
  int min_speakers = 2;
  int max_speakers = 4;
  double overlap_ratio = 0.2;
  int sample_rate = 16000;
  uint64_t seed = 1;
  uint64_t voice_seed = 7;
  int voice_pool = 32;
  std::vector<ChannelProfile> channels;  // empty -> one clean channel
  std::string prefix = "conv";
};

// Builds conversation i of a corpus entirely in memory.
Conversation make_conversation(const CorpusOptions& opt, int index);

struct ManifestEntry {
  std::string recording_id;
  std::string audio_path;
  std::string rttm_path;
  int num_speakers = 0;
  uint64_t seed = 0;
  double duration = 0.0;
  double overlap = 0.0;
  int channels = 1;
  std::vector<int> voice_indices;
};

struct CorpusSummary {
  std::string manifest_path;
  int num_conversations = 0;
  double total_hours = 0.0;
  double mean_overlap = 0.0;
  int voice_pool = 0;
};

// Writes WAV + RTTM per conversation plus manifest.jsonl under out_dir.
CorpusSummary write_corpus(const CorpusOptions& opt, const std::string& out_dir);

std::vector<ManifestEntry> load_manifest(const std::string& path);

// Single-voice clips for speaker-classification pretraining.
struct ClipOptions {
  int num_voices = 32;
  int clips_per_voice = 12;
  double clip_duration = 3.0;
  int sample_rate = 16000;
  uint64_t seed = 1;
  uint64_t voice_seed = 7;
};

struct Clip {
  Audio audio;
  int voice_index = 0;
};

Clip make_clip(const ClipOptions& opt, int voice_index, int clip_index);

struct ClipManifestEntry {
  std::string audio_path;
  int voice_index = 0;
};

// Writes clip WAVs plus clips.jsonl under out_dir.
CorpusSummary write_clips(const ClipOptions& opt, const std::string& out_dir);

std::vector<ClipManifestEntry> load_clip_manifest(const std::string& path);

}  // namespace snd
