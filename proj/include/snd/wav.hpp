#pragma once

#include <string>
#include <vector>

#include "snd/types.hpp"

namespace snd {

// Multi-channel audio held as one vector per channel, all the same length.
struct Audio {
  std::vector<std::vector<Scalar>> channels;
  int sample_rate = 16000;

  Eigen::Index frames() const {
    return channels.empty() ? 0 : static_cast<Eigen::Index>(channels[0].size());
  }
  int channel_count() const { return static_cast<int>(channels.size()); }
  double duration() const {
    return sample_rate > 0 ? static_cast<double>(frames()) / sample_rate : 0.0;
  }
};

// Reads a RIFF/WAVE file holding 16-bit PCM or 32-bit IEEE float samples.
Audio read_wav(const std::string& path);

// Writes 16-bit PCM. Samples are clipped to [-1, 1] before quantization.
void write_wav(const std::string& path, const Audio& audio);

}  // namespace snd
