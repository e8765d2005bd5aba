#include "snd/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "snd/rttm.hpp"

namespace snd {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kMinSegment = 0.05;
constexpr double kFade = 0.020;

struct TurnDraws {
  double init = 0.0;
  std::vector<double> speech;
  std::vector<double> pause;
};

// Segments for one speaker given the pause scale; draws are fixed so the
// construction is monotone in alpha.
std::vector<Segment> build_turns(const TurnDraws& d, const std::string& speaker, double duration,
                                 double alpha) {
  std::vector<Segment> segs;
  double t = d.init * std::min(2.0 * alpha, 0.5 * duration);
  for (size_t j = 0; j < d.speech.size() && t < duration; ++j) {
    const double speech = 0.5 + 3.5 * d.speech[j];
    const double len = std::min(t + speech, duration) - t;
    if (len >= kMinSegment) segs.push_back({speaker, t, len});
    t += speech;
    t += (0.2 + 1.8 * d.pause[j]) * alpha;
  }
  return segs;
}

double overlap_of(const std::vector<Segment>& segs) {
  std::vector<std::pair<double, int>> events;
  events.reserve(segs.size() * 2);
  for (const Segment& s : segs) {
    events.push_back({s.onset, +1});
    events.push_back({s.end(), -1});
  }
  std::sort(events.begin(), events.end());
  double speech = 0, overlap = 0, prev = 0;
  int active = 0;
  for (const auto& [time, delta] : events) {
    if (active >= 1) speech += time - prev;
    if (active >= 2) overlap += time - prev;
    active += delta;
    prev = time;
  }
  return speech > 0 ? overlap / speech : 0.0;
}

// One-pole-pair resonator bank excited by a pitch-period pulse train with a
// touch of aspiration noise.
std::vector<Scalar> voiced_signal(const SyntheticVoice& voice, Eigen::Index length,
                                  int sample_rate, Rng& rng) {
  std::vector<Scalar> excitation(static_cast<size_t>(length), Scalar(0));
  double phase = 1.0;
  for (Eigen::Index n = 0; n < length; ++n) {
    phase += voice.base_pitch / sample_rate;
    if (phase >= 1.0) {
      phase -= 1.0;
      excitation[static_cast<size_t>(n)] = 1.0;
    }
    excitation[static_cast<size_t>(n)] += 0.015 * (2.0 * rng.uniform() - 1.0);
  }

  std::vector<Scalar> out(static_cast<size_t>(length), Scalar(0));
  for (const Resonator& res : voice.resonators) {
    const double r = std::exp(-kPi * res.bandwidth_hz / sample_rate);
    const double w = 2.0 * kPi * res.center_hz / sample_rate;
    const double a1 = 2.0 * r * std::cos(w);
    const double a2 = -r * r;
    const double b0 = (1.0 - r) * res.gain;
    double y1 = 0, y2 = 0;
    for (Eigen::Index n = 0; n < length; ++n) {
      const double y = b0 * excitation[static_cast<size_t>(n)] + a1 * y1 + a2 * y2;
      out[static_cast<size_t>(n)] += y;
      y2 = y1;
      y1 = y;
    }
  }
  return out;
}

void apply_envelope(std::vector<Scalar>& signal, const std::vector<Segment>& segs,
                    int sample_rate) {
  std::vector<Scalar> env(signal.size(), Scalar(0));
  for (const Segment& s : segs) {
    const auto a = static_cast<Eigen::Index>(std::llround(s.onset * sample_rate));
    const auto b = std::min<Eigen::Index>(static_cast<Eigen::Index>(std::llround(s.end() * sample_rate)),
                                          static_cast<Eigen::Index>(signal.size()));
    if (b <= a) continue;
    const double fade = std::min(kFade, 0.5 * s.duration);
    const auto f = std::max<Eigen::Index>(1, static_cast<Eigen::Index>(std::llround(fade * sample_rate)));
    for (Eigen::Index n = a; n < b; ++n) {
      double e = 1.0;
      if (n - a < f) e = 0.5 - 0.5 * std::cos(kPi * static_cast<double>(n - a) / static_cast<double>(f));
      if (b - 1 - n < f)
        e = std::min(e, 0.5 - 0.5 * std::cos(kPi * static_cast<double>(b - 1 - n) / static_cast<double>(f)));
      env[static_cast<size_t>(n)] = std::max(env[static_cast<size_t>(n)], Scalar(e));
    }
  }
  for (size_t n = 0; n < signal.size(); ++n) signal[n] *= env[n];
}

nlohmann::json manifest_json(const ManifestEntry& e) {
  return nlohmann::json{{"recording_id", e.recording_id},
                        {"audio", e.audio_path},
                        {"rttm", e.rttm_path},
                        {"num_speakers", e.num_speakers},
                        {"seed", e.seed},
                        {"duration", e.duration},
                        {"overlap", e.overlap},
                        {"channels", e.channels},
                        {"voices", e.voice_indices}};
}

}  // namespace

SyntheticVoice make_voice(int speaker_index, uint64_t seed) {
  Rng rng(mix_seed(seed, hash_string("voice"), static_cast<uint64_t>(speaker_index)));
  const int a = speaker_index % 10;
  const int b = (speaker_index / 10) % 10;
  const int c = (speaker_index / 100) % 8;

  SyntheticVoice voice;
  std::ostringstream id;
  id << "v" << std::setw(4) << std::setfill('0') << speaker_index;
  voice.speaker_id = id.str();
  voice.resonators = {
      {320.0 + 70.0 * a + rng.uniform(-15.0, 15.0), 60.0 + rng.uniform(-10.0, 10.0), 1.0},
      {1150.0 + 150.0 * b + rng.uniform(-30.0, 30.0), 90.0 + rng.uniform(-10.0, 10.0),
       0.63 + rng.uniform(-0.07, 0.07)},
      {2500.0 + 130.0 * c + rng.uniform(-35.0, 35.0), 120.0 + rng.uniform(-10.0, 10.0),
       0.35 + rng.uniform(-0.05, 0.05)},
  };
  voice.base_pitch = 85.0 + 4.2 * ((speaker_index * 7) % 37) + rng.uniform(-0.8, 0.8);
  return voice;
}

double measure_overlap(const DiarizationResult& result) { return overlap_of(result.segments); }

TurnSynthesis synthesize_turns(const ConversationSpec& spec,
                               const std::vector<SyntheticVoice>& voices) {
  if (static_cast<int>(voices.size()) != spec.num_speakers)
    throw std::runtime_error("synthesize_turns: voice count does not match num_speakers");
  if (spec.num_speakers < 1) throw std::runtime_error("synthesize_turns: need at least one speaker");
  if (spec.num_speakers == 1 && spec.overlap_ratio > 0)
    throw std::runtime_error("synthesize_turns: overlap target infeasible with one speaker");
  if (spec.overlap_ratio < 0 || spec.overlap_ratio >= 1)
    throw std::runtime_error("synthesize_turns: overlap target must be in [0, 1)");

  const int ns = spec.num_speakers;
  std::vector<Segment> all;

  if (spec.overlap_ratio <= 0.0) {
    // Strictly sequential turn taking: zero overlap by construction.
    Rng rng(mix_seed(spec.seed, hash_string("turns")));
    std::vector<int> order = rng.permutation(ns);
    double t = rng.uniform(0.0, 1.0);
    int prev = -1;
    size_t pos = 0;
    while (t < spec.duration) {
      int who;
      if (pos < order.size()) {
        who = order[pos++];
      } else {
        do {
          who = rng.uniform_int(ns);
        } while (ns > 1 && who == prev);
      }
      prev = who;
      const double speech = rng.uniform(0.5, 4.0);
      const double len = std::min(t + speech, spec.duration) - t;
      if (len >= kMinSegment) all.push_back({voices[static_cast<size_t>(who)].speaker_id, t, len});
      t += speech + rng.uniform(0.2, 2.0);
    }
  } else {
    // Independent per-speaker turn processes; binary search on the pause
    // scale hits the overlap target with fixed draws.
    const auto max_turns = static_cast<size_t>(spec.duration / 0.5) + 8;
    std::vector<TurnDraws> draws(static_cast<size_t>(ns));
    for (int k = 0; k < ns; ++k) {
      Rng rng(mix_seed(spec.seed, hash_string("turns"), static_cast<uint64_t>(k)));
      draws[static_cast<size_t>(k)].init = rng.uniform();
      for (size_t j = 0; j < max_turns; ++j) {
        draws[static_cast<size_t>(k)].speech.push_back(rng.uniform());
        draws[static_cast<size_t>(k)].pause.push_back(rng.uniform());
      }
    }
    const auto realize = [&](double alpha) {
      std::vector<Segment> segs;
      for (int k = 0; k < ns; ++k) {
        auto s = build_turns(draws[static_cast<size_t>(k)], voices[static_cast<size_t>(k)].speaker_id,
                             spec.duration, alpha);
        segs.insert(segs.end(), s.begin(), s.end());
      }
      return segs;
    };
    double lo = 0.005, hi = 16.0;
    if (overlap_of(realize(hi)) > spec.overlap_ratio) {
      all = realize(hi);
    } else if (overlap_of(realize(lo)) < spec.overlap_ratio) {
      all = realize(lo);
    } else {
      for (int it = 0; it < 48; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (overlap_of(realize(mid)) > spec.overlap_ratio)
          lo = mid;
        else
          hi = mid;
      }
      all = realize(0.5 * (lo + hi));
    }
  }

  TurnSynthesis out;
  out.truth.recording_id = spec.recording_id;
  out.truth.segments = std::move(all);
  out.truth = normalize_result(out.truth);
  out.achieved_overlap = overlap_of(out.truth.segments);

  const auto length = static_cast<Eigen::Index>(std::llround(spec.duration * spec.sample_rate));
  out.sources.assign(static_cast<size_t>(ns), {});
  for (int k = 0; k < ns; ++k) {
    Rng rng(mix_seed(spec.seed, hash_string("excite"), static_cast<uint64_t>(k)));
    std::vector<Scalar> sig = voiced_signal(voices[static_cast<size_t>(k)], length, spec.sample_rate, rng);
    std::vector<Segment> mine;
    for (const Segment& s : out.truth.segments)
      if (s.speaker == voices[static_cast<size_t>(k)].speaker_id) mine.push_back(s);
    apply_envelope(sig, mine, spec.sample_rate);
    Scalar peak = 0;
    for (Scalar x : sig) peak = std::max(peak, std::abs(x));
    if (peak > 0)
      for (Scalar& x : sig) x *= Scalar(0.5) / peak;
    out.sources[static_cast<size_t>(k)] = std::move(sig);
  }
  return out;
}

Audio render_multichannel(const std::vector<std::vector<Scalar>>& sources,
                          const ConversationSpec& spec) {
  const auto length = static_cast<Eigen::Index>(std::llround(spec.duration * spec.sample_rate));
  std::vector<ChannelSpec> channels = spec.per_channel;
  if (channels.empty()) channels.assign(static_cast<size_t>(spec.channel_count), ChannelSpec{});
  if (static_cast<int>(channels.size()) != spec.channel_count)
    throw std::runtime_error("render_multichannel: per_channel size does not match channel_count");

  Audio audio;
  audio.sample_rate = spec.sample_rate;
  audio.channels.assign(channels.size(), std::vector<Scalar>(static_cast<size_t>(length), Scalar(0)));
  for (size_t c = 0; c < channels.size(); ++c) {
    auto& ch = audio.channels[c];
    for (const auto& src : sources) {
      const Eigen::Index delay = channels[c].delay_samples;
      const auto avail = static_cast<Eigen::Index>(src.size());
      for (Eigen::Index n = delay; n < length; ++n) {
        const Eigen::Index m = n - delay;
        if (m < avail) ch[static_cast<size_t>(n)] += channels[c].gain * src[static_cast<size_t>(m)];
      }
    }
    if (std::isfinite(channels[c].noise_snr_db)) {
      double power = 0;
      for (Scalar x : ch) power += x * x;
      power /= static_cast<double>(length);
      if (power > 0) {
        const double sigma = std::sqrt(power / std::pow(10.0, channels[c].noise_snr_db / 10.0));
        Rng rng(mix_seed(spec.seed, hash_string("chnoise"), static_cast<uint64_t>(c)));
        for (Scalar& x : ch) x += sigma * rng.normal();
      }
    }
  }
  return audio;
}

Conversation make_conversation(const CorpusOptions& opt, int index) {
  Rng rng(mix_seed(opt.seed, hash_string("conv"), static_cast<uint64_t>(index)));
  const int span = opt.max_speakers - opt.min_speakers + 1;
  if (span < 1 || opt.min_speakers < 1)
    throw std::runtime_error("make_conversation: bad speaker count range");
  const int ns = opt.min_speakers + rng.uniform_int(span);
  if (opt.voice_pool < ns)
    throw std::runtime_error("make_conversation: voice pool smaller than speaker count");

  ConversationSpec spec;
  spec.num_speakers = ns;
  spec.duration = opt.duration;
  spec.overlap_ratio = opt.overlap_ratio;
  spec.sample_rate = opt.sample_rate;
  spec.seed = mix_seed(opt.seed, hash_string("convseed"), static_cast<uint64_t>(index));
  std::ostringstream id;
  id << opt.prefix << std::setw(4) << std::setfill('0') << index;
  spec.recording_id = id.str();

  std::vector<ChannelProfile> profiles = opt.channels;
  if (profiles.empty()) profiles.push_back(ChannelProfile{});
  spec.channel_count = static_cast<int>(profiles.size());
  for (size_t c = 0; c < profiles.size(); ++c) {
    const ChannelProfile& p = profiles[c];
    ChannelSpec ch;
    if (c == 0) {
      ch.delay_samples = 0;
      ch.gain = 1.0;
    } else {
      ch.delay_samples = p.delay_lo + (p.delay_hi > p.delay_lo ? rng.uniform_int(p.delay_hi - p.delay_lo + 1) : 0);
      ch.gain = p.gain_hi > p.gain_lo ? rng.uniform(p.gain_lo, p.gain_hi) : p.gain_lo;
    }
    if (std::isfinite(p.snr_lo))
      ch.noise_snr_db = p.snr_hi > p.snr_lo ? rng.uniform(p.snr_lo, p.snr_hi) : p.snr_lo;
    spec.per_channel.push_back(ch);
  }

  Conversation conv;
  conv.voice_indices = rng.sample_without_replacement(opt.voice_pool, ns);
  std::vector<SyntheticVoice> voices;
  voices.reserve(static_cast<size_t>(ns));
  for (int idx : conv.voice_indices) voices.push_back(make_voice(idx, opt.voice_seed));

  TurnSynthesis turns = synthesize_turns(spec, voices);
  conv.truth = std::move(turns.truth);
  conv.achieved_overlap = turns.achieved_overlap;
  conv.audio = render_multichannel(turns.sources, spec);
  return conv;
}

CorpusSummary write_corpus(const CorpusOptions& opt, const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);

  CorpusSummary summary;
  summary.num_conversations = opt.num_conversations;
  summary.voice_pool = opt.voice_pool;
  summary.manifest_path = (fs::path(out_dir) / "manifest.jsonl").string();

  std::ofstream manifest(summary.manifest_path);
  if (!manifest) throw std::runtime_error("cannot write manifest: " + summary.manifest_path);
  for (int i = 0; i < opt.num_conversations; ++i) {
    Conversation conv = make_conversation(opt, i);
    ManifestEntry e;
    e.recording_id = conv.truth.recording_id;
    e.audio_path = (fs::path(out_dir) / (e.recording_id + ".wav")).string();
    e.rttm_path = (fs::path(out_dir) / (e.recording_id + ".rttm")).string();
    e.num_speakers = static_cast<int>(speakers_in_order(conv.truth).size());
    e.seed = opt.seed;
    e.duration = opt.duration;
    e.overlap = conv.achieved_overlap;
    e.channels = conv.audio.channel_count();
    e.voice_indices = conv.voice_indices;
    write_wav(e.audio_path, conv.audio);
    write_rttm_file(conv.truth, e.rttm_path);
    manifest << manifest_json(e).dump() << "\n";
    summary.total_hours += opt.duration / 3600.0;
    summary.mean_overlap += conv.achieved_overlap;
  }
  if (opt.num_conversations > 0) summary.mean_overlap /= opt.num_conversations;
  return summary;
}

std::vector<ManifestEntry> load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest: " + path);
  std::vector<ManifestEntry> entries;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const nlohmann::json j = nlohmann::json::parse(line);
    ManifestEntry e;
    e.recording_id = j.at("recording_id").get<std::string>();
    e.audio_path = j.at("audio").get<std::string>();
    e.rttm_path = j.at("rttm").get<std::string>();
    e.num_speakers = j.at("num_speakers").get<int>();
    e.seed = j.at("seed").get<uint64_t>();
    e.duration = j.at("duration").get<double>();
    e.overlap = j.at("overlap").get<double>();
    e.channels = j.at("channels").get<int>();
    e.voice_indices = j.at("voices").get<std::vector<int>>();
    entries.push_back(std::move(e));
  }
  return entries;
}

Clip make_clip(const ClipOptions& opt, int voice_index, int clip_index) {
  const SyntheticVoice voice = make_voice(voice_index, opt.voice_seed);
  const uint64_t seed =
      mix_seed(opt.seed, hash_string("clip"), mix_seed(static_cast<uint64_t>(voice_index),
                                                       static_cast<uint64_t>(clip_index)));
  const auto length = static_cast<Eigen::Index>(std::llround(opt.clip_duration * opt.sample_rate));
  Rng rng(seed);
  std::vector<Scalar> sig = voiced_signal(voice, length, opt.sample_rate, rng);
  const std::vector<Segment> segs = {{voice.speaker_id, 0.0, opt.clip_duration}};
  apply_envelope(sig, segs, opt.sample_rate);
  Scalar peak = 0;
  for (Scalar x : sig) peak = std::max(peak, std::abs(x));
  if (peak > 0)
    for (Scalar& x : sig) x *= Scalar(0.5) / peak;

  Clip clip;
  clip.voice_index = voice_index;
  clip.audio.sample_rate = opt.sample_rate;
  clip.audio.channels.push_back(std::move(sig));
  return clip;
}

CorpusSummary write_clips(const ClipOptions& opt, const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);

  CorpusSummary summary;
  summary.voice_pool = opt.num_voices;
  summary.manifest_path = (fs::path(out_dir) / "clips.jsonl").string();
  std::ofstream manifest(summary.manifest_path);
  if (!manifest) throw std::runtime_error("cannot write manifest: " + summary.manifest_path);
  for (int v = 0; v < opt.num_voices; ++v) {
    for (int k = 0; k < opt.clips_per_voice; ++k) {
      const Clip clip = make_clip(opt, v, k);
      std::ostringstream name;
      name << "clip_v" << std::setw(4) << std::setfill('0') << v << "_" << std::setw(3)
           << std::setfill('0') << k << ".wav";
      const std::string path = (fs::path(out_dir) / name.str()).string();
      write_wav(path, clip.audio);
      manifest << nlohmann::json{{"audio", path}, {"speaker", v}}.dump() << "\n";
      ++summary.num_conversations;
      summary.total_hours += opt.clip_duration / 3600.0;
    }
  }
  return summary;
}

std::vector<ClipManifestEntry> load_clip_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest: " + path);
  std::vector<ClipManifestEntry> entries;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const nlohmann::json j = nlohmann::json::parse(line);
    entries.push_back({j.at("audio").get<std::string>(), j.at("speaker").get<int>()});
  }
  return entries;
}

}  // namespace snd
