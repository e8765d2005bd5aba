#pragma once

#include "snd/types.hpp"

#include <map>
#include <string>
#include <vector>

namespace snd {

/// Parse NIST RTTM text. Only SPEAKER lines are read; everything else is
/// ignored. All SPEAKER lines must share one recording id.
DiarizationResult parse_rttm(const std::string& text);

/// Parse RTTM text that may contain several recordings, keyed by id.
std::map<std::string, DiarizationResult> parse_rttm_collection(const std::string& text);

/// One SPEAKER line per segment, ordered by (onset, speaker), times with two
/// decimals. An empty result produces an empty string.
std::string emit_rttm(const DiarizationResult& result);

DiarizationResult read_rttm_file(const std::string& path);
void write_rttm_file(const DiarizationResult& result, const std::string& path);

/// Rasterize segments onto the frame grid. A frame belongs to a segment iff
/// its midpoint lies inside [onset, onset + duration). speaker_order fixes the
/// row assignment; pass an empty list to use first-appearance order.
ActivityMatrix activity_from_segments(const DiarizationResult& result, double frame_period,
                                      int total_frames, const std::vector<std::string>& speaker_order);

}  // namespace snd
