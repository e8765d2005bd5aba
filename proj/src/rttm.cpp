#include "snd/rttm.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace snd {

namespace {

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::istringstream in(line);
  std::string f;
  while (in >> f) fields.push_back(f);
  return fields;
}

double parse_seconds(const std::string& s, int line_no, const char* what) {
  size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != s.size())
    throw std::runtime_error("rttm parse error at line " + std::to_string(line_no) +
                             ": non-numeric " + what + " '" + s + "'");
  return v;
}

}  // namespace

DiarizationResult parse_rttm(const std::string& text) {
  DiarizationResult out;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto fields = split_fields(line);
    if (fields.empty() || fields[0] != "SPEAKER") continue;
    if (fields.size() < 9)
      throw std::runtime_error("rttm parse error at line " + std::to_string(line_no) +
                               ": SPEAKER line has " + std::to_string(fields.size()) +
                               " fields, expected at least 9");
    Segment seg;
    seg.onset = parse_seconds(fields[3], line_no, "onset");
    seg.duration = parse_seconds(fields[4], line_no, "duration");
    seg.speaker = fields[7];
    if (out.segments.empty()) {
      out.recording_id = fields[1];
    } else if (out.recording_id != fields[1]) {
      throw std::runtime_error("rttm parse error at line " + std::to_string(line_no) +
                               ": mixed recording ids ('" + out.recording_id + "' vs '" +
                               fields[1] + "'); use parse_rttm_collection");
    }
    out.segments.push_back(seg);
  }
  return out;
}

std::map<std::string, DiarizationResult> parse_rttm_collection(const std::string& text) {
  std::map<std::string, DiarizationResult> out;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto fields = split_fields(line);
    if (fields.empty() || fields[0] != "SPEAKER") continue;
    if (fields.size() < 9)
      throw std::runtime_error("rttm parse error at line " + std::to_string(line_no) +
                               ": SPEAKER line has " + std::to_string(fields.size()) +
                               " fields, expected at least 9");
    Segment seg;
    seg.onset = parse_seconds(fields[3], line_no, "onset");
    seg.duration = parse_seconds(fields[4], line_no, "duration");
    seg.speaker = fields[7];
    auto& r = out[fields[1]];
    r.recording_id = fields[1];
    r.segments.push_back(seg);
  }
  return out;
}

std::string emit_rttm(const DiarizationResult& result) {
  check_diarization_result(result);
  std::vector<Segment> segs = result.segments;
  std::sort(segs.begin(), segs.end(), [](const Segment& a, const Segment& b) {
    if (a.onset != b.onset) return a.onset < b.onset;
    return a.speaker < b.speaker;
  });
  std::string out;
  char buf[512];
  for (const auto& s : segs) {
    std::snprintf(buf, sizeof(buf), "SPEAKER %s 1 %.2f %.2f <NA> <NA> %s <NA> <NA>\n",
                  result.recording_id.c_str(), s.onset, s.duration, s.speaker.c_str());
    out += buf;
  }
  return out;
}

DiarizationResult read_rttm_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open rttm file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_rttm(ss.str());
}

void write_rttm_file(const DiarizationResult& result, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write rttm file: " + path);
  out << emit_rttm(result);
}

ActivityMatrix activity_from_segments(const DiarizationResult& result, double frame_period,
                                      int total_frames,
                                      const std::vector<std::string>& speaker_order) {
  if (frame_period <= 0) throw std::invalid_argument("activity_from_segments: frame_period must be > 0");
  if (total_frames <= 0) throw std::invalid_argument("activity_from_segments: total_frames must be > 0");
  std::vector<std::string> order = speaker_order.empty() ? speakers_in_order(result) : speaker_order;
  std::map<std::string, int> row;
  for (size_t i = 0; i < order.size(); ++i) row[order[i]] = static_cast<int>(i);

  ActivityMatrix out;
  out.kind = ActivityKind::GroundTruth;
  out.frame_period = frame_period;
  out.values = Matrix::Zero(std::max<size_t>(order.size(), 1), total_frames);
  for (const auto& s : result.segments) {
    auto it = row.find(s.speaker);
    if (it == row.end())
      throw std::invalid_argument("activity_from_segments: unknown speaker id '" + s.speaker + "'");
    // Frames whose midpoint (t + 0.5) * period falls inside [onset, end).
    int first = static_cast<int>(std::ceil(s.onset / frame_period - 0.5));
    int last = static_cast<int>(std::ceil(s.end() / frame_period - 0.5));  // exclusive
    first = std::max(first, 0);
    last = std::min(last, total_frames);
    for (int t = first; t < last; ++t) out.values(it->second, t) = 1.0;
  }
  return out;
}

}  // namespace snd
