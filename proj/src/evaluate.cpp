#include "snd/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <stdexcept>

#include "snd/rttm.hpp"

namespace snd {

namespace {

struct FrameCounts {
  int64_t miss = 0;
  int64_t fa = 0;
  int64_t conf = 0;
  int64_t denom = 0;
  std::vector<std::pair<std::string, std::string>> mapping;
};

Eigen::Index raster_frames(const DiarizationResult& r, double frame_period) {
  Eigen::Index last = 0;
  for (const Segment& s : r.segments)
    last = std::max(last, static_cast<Eigen::Index>(std::ceil(s.end() / frame_period - 0.5)));
  return last;
}

// Maximum-total assignment between hyp and ref speakers on the overlap
// matrix, by layered bitmask DP over the smaller side. Entries are integer
// frame counts held in doubles, so sums and equality tests are exact.
std::vector<int> best_assignment(const Matrix& overlap) {
  const int rows = static_cast<int>(overlap.rows());
  const int cols = static_cast<int>(overlap.cols());
  const bool transpose = rows > cols;
  const int small = transpose ? cols : rows;
  const int large = transpose ? rows : cols;
  if (small > 16) throw std::runtime_error("score_der: too many speakers for exact mapping");

  const auto value = [&](int s, int l) { return transpose ? overlap(l, s) : overlap(s, l); };

  constexpr double kUnreachable = -1.0;
  const size_t states = size_t(1) << small;
  std::vector<std::vector<double>> dp(static_cast<size_t>(large) + 1,
                                      std::vector<double>(states, kUnreachable));
  dp[0][0] = 0.0;
  for (int l = 0; l < large; ++l) {
    const auto& cur = dp[static_cast<size_t>(l)];
    auto& next = dp[static_cast<size_t>(l) + 1];
    for (size_t mask = 0; mask < states; ++mask) {
      if (cur[mask] == kUnreachable) continue;
      next[mask] = std::max(next[mask], cur[mask]);
      for (int s = 0; s < small; ++s) {
        if (mask & (size_t(1) << s)) continue;
        const size_t m2 = mask | (size_t(1) << s);
        next[m2] = std::max(next[m2], cur[mask] + value(s, l));
      }
    }
  }

  size_t mask = 0;
  for (size_t m = 0; m < states; ++m)
    if (dp[static_cast<size_t>(large)][m] > dp[static_cast<size_t>(large)][mask]) mask = m;

  std::vector<int> small_to_large(static_cast<size_t>(small), -1);
  for (int l = large; l-- > 0;) {
    const double target = dp[static_cast<size_t>(l) + 1][mask];
    if (dp[static_cast<size_t>(l)][mask] == target) continue;  // item l unmatched
    for (int s = 0; s < small; ++s) {
      if (!(mask & (size_t(1) << s))) continue;
      const size_t prev = mask & ~(size_t(1) << s);
      if (dp[static_cast<size_t>(l)][prev] != kUnreachable &&
          dp[static_cast<size_t>(l)][prev] + value(s, l) == target) {
        small_to_large[static_cast<size_t>(s)] = l;
        mask = prev;
        break;
      }
    }
  }

  std::vector<int> hyp_to_ref(static_cast<size_t>(rows), -1);
  for (int s = 0; s < small; ++s) {
    const int l = small_to_large[static_cast<size_t>(s)];
    if (l < 0) continue;
    if (transpose)
      hyp_to_ref[static_cast<size_t>(l)] = s;
    else
      hyp_to_ref[static_cast<size_t>(s)] = l;
  }
  return hyp_to_ref;
}

FrameCounts count_frames(const DiarizationResult& ref, const DiarizationResult& hyp,
                         double frame_period) {
  const DiarizationResult refn = normalize_result(ref);
  const DiarizationResult hypn = normalize_result(hyp);
  const Eigen::Index total =
      std::max(raster_frames(refn, frame_period), raster_frames(hypn, frame_period));

  const std::vector<std::string> ref_speakers = speakers_in_order(refn);
  const std::vector<std::string> hyp_speakers = speakers_in_order(hypn);
  const ActivityMatrix ra =
      activity_from_segments(refn, frame_period, total, ref_speakers);
  const ActivityMatrix ha =
      activity_from_segments(hypn, frame_period, total, hyp_speakers);
  const int R = static_cast<int>(ref_speakers.size());
  const int H = static_cast<int>(hyp_speakers.size());

  FrameCounts counts;
  for (Eigen::Index t = 0; t < total; ++t)
    for (int r = 0; r < R; ++r) counts.denom += ra.values(r, t) > 0.5 ? 1 : 0;
  if (counts.denom == 0) throw std::runtime_error("score_der: zero reference speech, undefined DER");

  Matrix overlap = Matrix::Zero(std::max(H, 1), std::max(R, 1));
  for (int h = 0; h < H; ++h)
    for (int r = 0; r < R; ++r)
      for (Eigen::Index t = 0; t < total; ++t)
        if (ha.values(h, t) > 0.5 && ra.values(r, t) > 0.5) overlap(h, r) += 1.0;

  std::vector<int> hyp_to_ref(static_cast<size_t>(H), -1);
  if (H > 0 && R > 0) hyp_to_ref = best_assignment(overlap);

  int64_t correct = 0;
  for (int h = 0; h < H; ++h) {
    const int r = hyp_to_ref[static_cast<size_t>(h)];
    if (r < 0) continue;
    correct += static_cast<int64_t>(std::llround(overlap(h, r)));
    if (overlap(h, r) > 0)
      counts.mapping.push_back({hyp_speakers[static_cast<size_t>(h)],
                                ref_speakers[static_cast<size_t>(r)]});
  }

  int64_t min_sum = 0;
  for (Eigen::Index t = 0; t < total; ++t) {
    int nr = 0, nh = 0;
    for (int r = 0; r < R; ++r) nr += ra.values(r, t) > 0.5 ? 1 : 0;
    for (int h = 0; h < H; ++h) nh += ha.values(h, t) > 0.5 ? 1 : 0;
    counts.miss += std::max(0, nr - nh);
    counts.fa += std::max(0, nh - nr);
    min_sum += std::min(nr, nh);
  }
  counts.conf = min_sum - correct;
  return counts;
}

DerReport report_from(const FrameCounts& c, double frame_period) {
  DerReport rep;
  const double den = static_cast<double>(c.denom);
  rep.missed = static_cast<double>(c.miss) / den;
  rep.false_alarm = static_cast<double>(c.fa) / den;
  rep.confusion = static_cast<double>(c.conf) / den;
  rep.der = rep.missed + rep.false_alarm + rep.confusion;
  rep.scored_time = den * frame_period;
  rep.mapping = c.mapping;
  return rep;
}

}  // namespace

DerReport score_der(const DiarizationResult& ref, const DiarizationResult& hyp,
                    double frame_period) {
  return report_from(count_frames(ref, hyp, frame_period), frame_period);
}

DerReport score_corpus(
    const std::vector<std::pair<DiarizationResult, DiarizationResult>>& pairs,
    double frame_period) {
  if (pairs.empty()) throw std::runtime_error("score_corpus: no recordings");
  FrameCounts total;
  for (const auto& [ref, hyp] : pairs) {
    const FrameCounts c = count_frames(ref, hyp, frame_period);
    total.miss += c.miss;
    total.fa += c.fa;
    total.conf += c.conf;
    total.denom += c.denom;
  }
  return report_from(total, frame_period);
}

std::string format_der(const DerReport& report) {
  std::ostringstream out;
  out.setf(std::ios::fixed);
  out.precision(2);
  out << "DER " << report.der * 100.0 << "% (miss " << report.missed * 100.0 << "%, fa "
      << report.false_alarm * 100.0 << "%, conf " << report.confusion * 100.0 << "%)";
  return out.str();
}

}  // namespace snd
