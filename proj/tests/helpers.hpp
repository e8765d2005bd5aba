#pragma once

#include <filesystem>
#include <string>

#include "snd/types.hpp"

namespace snd::test {

// Fresh per-test scratch directory under the build tree.
inline std::string temp_dir(const std::string& name) {
  const std::filesystem::path dir = std::filesystem::path("snd_test_tmp") / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir.string();
}

// Random segment list quantized to the 10 ms grid.
inline DiarizationResult random_result(Rng& rng, int max_speakers, double max_time,
                                       const std::string& recording_id = "rec") {
  DiarizationResult r;
  r.recording_id = recording_id;
  const int ns = 1 + rng.uniform_int(max_speakers);
  for (int k = 0; k < ns; ++k) {
    const int segs = rng.uniform_int(4);
    for (int j = 0; j < segs; ++j) {
      const double onset = 0.01 * rng.uniform_int(static_cast<int>(max_time * 100.0) - 10);
      const double dur = 0.01 * (1 + rng.uniform_int(200));
      r.segments.push_back({"spk" + std::to_string(k), onset, dur});
    }
  }
  return r;
}

}  // namespace snd::test
