#pragma once

#include <string>
#include <utility>
#include <vector>

#include "snd/types.hpp"

namespace snd {

// Collar-free diarization error rate with component breakdown. All fractions
// are of total reference speech time; der = missed + false_alarm + confusion.
struct DerReport {
  double der = 0.0;
  double missed = 0.0;
  double false_alarm = 0.0;
  double confusion = 0.0;
  double scored_time = 0.0;
  std::vector<std::pair<std::string, std::string>> mapping;  // hyp -> ref
};

// Rasterizes both results to the frame grid, finds the one-to-one hyp<->ref
// speaker mapping maximizing correctly attributed speech, and counts missed,
// false-alarm, and confused frames with standard multi-speaker handling (each
// reference frame contributes its active-speaker count to the denominator).
DerReport score_der(const DiarizationResult& ref, const DiarizationResult& hyp,
                    double frame_period = 0.010);

// Time-weighted aggregate over (ref, hyp) pairs: summed error frames over
// summed denominator frames.
DerReport score_corpus(
    const std::vector<std::pair<DiarizationResult, DiarizationResult>>& pairs,
    double frame_period = 0.010);

// "DER 12.34% (miss 1.00%, fa 0.34%, conf 11.00%)" style line.
std::string format_der(const DerReport& report);

}  // namespace snd
