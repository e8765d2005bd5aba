#include "snd/types.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

namespace snd {

namespace {

bool all_finite(const Matrix& m) { return m.allFinite(); }

long frames_from_seconds(double seconds, double frame_period) {
  return std::lround(seconds / frame_period);
}

}  // namespace

void check_feature_sequence(const FeatureSequence& f) {
  if (f.channels.empty()) throw std::invalid_argument("FeatureSequence: no channels");
  if (f.frame_period <= 0) throw std::invalid_argument("FeatureSequence: frame_period must be > 0");
  const auto rows = f.channels[0].rows();
  const auto cols = f.channels[0].cols();
  if (rows <= 0 || cols <= 0) throw std::invalid_argument("FeatureSequence: empty dimensions");
  for (const auto& c : f.channels) {
    if (c.rows() != rows || c.cols() != cols)
      throw std::invalid_argument("FeatureSequence: inconsistent channel shapes");
    if (!all_finite(c)) throw std::invalid_argument("FeatureSequence: non-finite entries");
  }
  if (f.role != FeatureRole::PerChannel && f.channels.size() != 1)
    throw std::invalid_argument("FeatureSequence: fused/encoded roles carry a single matrix");
}

void check_activity_matrix(const ActivityMatrix& a) {
  if (a.values.rows() <= 0 || a.values.cols() <= 0)
    throw std::invalid_argument("ActivityMatrix: empty");
  if (a.frame_period <= 0) throw std::invalid_argument("ActivityMatrix: frame_period must be > 0");
  if (!all_finite(a.values)) throw std::invalid_argument("ActivityMatrix: non-finite entries");
  if (a.kind == ActivityKind::GroundTruth) {
    for (Eigen::Index i = 0; i < a.values.size(); ++i) {
      const Scalar v = a.values.data()[i];
      if (v != 0.0 && v != 1.0)
        throw std::invalid_argument("ActivityMatrix: ground truth entries must be 0 or 1");
    }
  } else {
    if ((a.values.array() < 0.0).any() || (a.values.array() > 1.0).any())
      throw std::invalid_argument("ActivityMatrix: probabilities must lie in [0,1]");
  }
}

void check_embedding_set(const EmbeddingSet& e) {
  if (static_cast<int>(e.valid.size()) != e.size())
    throw std::invalid_argument("EmbeddingSet: valid mask size mismatch");
  if (e.vectors.size() > 0 && !all_finite(e.vectors))
    throw std::invalid_argument("EmbeddingSet: non-finite entries");
}

Matrix SpeakerSelection::one_hot() const {
  Matrix m = Matrix::Zero(size(), num_classes);
  for (int i = 0; i < size(); ++i) {
    if (labels[i] < 0 || labels[i] >= num_classes)
      throw std::out_of_range("SpeakerSelection: label out of range");
    m(i, labels[i]) = 1.0;
  }
  return m;
}

void check_speaker_selection(const SpeakerSelection& s) {
  std::set<int> seen;
  for (int l : s.labels) {
    if (l < 0 || l >= s.num_classes) throw std::invalid_argument("SpeakerSelection: label out of range");
    if (!seen.insert(l).second) throw std::invalid_argument("SpeakerSelection: duplicate label");
  }
}

double DiarizationResult::max_end() const {
  double m = 0.0;
  for (const auto& s : segments) m = std::max(m, s.end());
  return m;
}

double DiarizationResult::total_speech() const {
  double t = 0.0;
  for (const auto& s : segments) t += s.duration;
  return t;
}

void check_diarization_result(const DiarizationResult& r) {
  for (const auto& s : r.segments) {
    if (s.duration <= 0) throw std::invalid_argument("DiarizationResult: duration must be > 0");
    if (s.onset < 0) throw std::invalid_argument("DiarizationResult: onset must be >= 0");
    if (s.speaker.empty()) throw std::invalid_argument("DiarizationResult: empty speaker id");
  }
}

std::vector<std::string> speakers_in_order(const DiarizationResult& r) {
  std::map<std::string, double> first;
  for (const auto& s : r.segments) {
    auto it = first.find(s.speaker);
    if (it == first.end() || s.onset < it->second) first[s.speaker] = s.onset;
  }
  std::vector<std::string> order;
  order.reserve(first.size());
  for (const auto& [id, _] : first) order.push_back(id);
  std::sort(order.begin(), order.end(), [&](const std::string& a, const std::string& b) {
    if (first[a] != first[b]) return first[a] < first[b];
    return a < b;
  });
  return order;
}

DiarizationResult normalize_result(const DiarizationResult& r) {
  DiarizationResult out;
  out.recording_id = r.recording_id;
  std::map<std::string, std::vector<Segment>> by_speaker;
  for (const auto& s : r.segments) by_speaker[s.speaker].push_back(s);
  for (auto& [id, segs] : by_speaker) {
    std::sort(segs.begin(), segs.end(),
              [](const Segment& a, const Segment& b) { return a.onset < b.onset; });
    Segment cur = segs[0];
    for (size_t i = 1; i < segs.size(); ++i) {
      if (segs[i].onset <= cur.end() + 1e-9) {
        cur.duration = std::max(cur.end(), segs[i].end()) - cur.onset;
      } else {
        out.segments.push_back(cur);
        cur = segs[i];
      }
    }
    out.segments.push_back(cur);
  }
  std::sort(out.segments.begin(), out.segments.end(), [](const Segment& a, const Segment& b) {
    if (a.onset != b.onset) return a.onset < b.onset;
    return a.speaker < b.speaker;
  });
  return out;
}

DiarizationResult crop_result(const DiarizationResult& r, double t0, double t1) {
  DiarizationResult out;
  out.recording_id = r.recording_id;
  for (const auto& s : r.segments) {
    const double a = std::max(s.onset, t0);
    const double b = std::min(s.end(), t1);
    if (b - a > 1e-9) out.segments.push_back({s.speaker, a - t0, b - a});
  }
  return out;
}

int BlockPlan::length_frames() const { return static_cast<int>(frames_from_seconds(block_length, frame_period)); }
int BlockPlan::shift_frames() const { return static_cast<int>(frames_from_seconds(block_shift, frame_period)); }

void check_block_plan(const BlockPlan& p) {
  if (p.frame_period <= 0) throw std::invalid_argument("BlockPlan: frame_period must be > 0");
  if (p.block_shift <= 0 || p.block_shift > p.block_length)
    throw std::invalid_argument("BlockPlan: need 0 < shift <= length");
  for (double v : {p.block_length, p.block_shift}) {
    const double k = v / p.frame_period;
    if (std::abs(k - std::lround(k)) > 1e-6)
      throw std::invalid_argument("BlockPlan: lengths must be integer multiples of frame_period");
  }
}

// ---------------------------------------------------------------------------

uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

uint64_t mix_seed(uint64_t a, uint64_t b) {
  uint64_t s = a;
  uint64_t x = splitmix64(s);
  s ^= b + 0x9e3779b97f4a7c15ULL + (x << 6) + (x >> 2);
  return splitmix64(s);
}

uint64_t mix_seed(uint64_t a, uint64_t b, uint64_t c) { return mix_seed(mix_seed(a, b), c); }

uint64_t hash_string(const std::string& s) {
  uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

Rng::Rng(uint64_t seed) {
  uint64_t s = seed;
  for (auto& w : s_) w = splitmix64(s);
}

uint64_t Rng::next_u64() {
  // xoshiro256**
  auto rotl = [](uint64_t x, int k) { return (x << k) | (x >> (64 - k)); };
  const uint64_t result = rotl(s_[1] * 5, 7) * 9;
  const uint64_t t = s_[1] << 17;
  s_[2] ^= s_[0];
  s_[3] ^= s_[1];
  s_[1] ^= s_[2];
  s_[0] ^= s_[3];
  s_[2] ^= t;
  s_[3] = rotl(s_[3], 45);
  return result;
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

int Rng::uniform_int(int n) {
  if (n <= 0) throw std::invalid_argument("Rng::uniform_int: n must be positive");
  return static_cast<int>(next_u64() % static_cast<uint64_t>(n));
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u = 0.0;
  do { u = uniform(); } while (u <= 0.0);
  const double v = uniform();
  const double r = std::sqrt(-2.0 * std::log(u));
  const double theta = 2.0 * M_PI * v;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

std::vector<int> Rng::permutation(int n) {
  std::vector<int> p(n);
  for (int i = 0; i < n; ++i) p[i] = i;
  for (int i = n - 1; i > 0; --i) std::swap(p[i], p[uniform_int(i + 1)]);
  return p;
}

std::vector<int> Rng::sample_without_replacement(int n, int k) {
  if (k > n) throw std::invalid_argument("sample_without_replacement: k > n");
  std::vector<int> p = permutation(n);
  p.resize(k);
  return p;
}

}  // namespace snd
