#include "snd/features.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <stdexcept>

namespace snd {

namespace {

constexpr double kPi = 3.14159265358979323846;

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

int next_pow2(int n) {
  int p = 1;
  while (p < n) p <<= 1;
  return p;
}

// In-place iterative radix-2 FFT.
void fft(std::vector<std::complex<double>>& a) {
  const size_t n = a.size();
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * kPi / static_cast<double>(len);
    const std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (size_t k = 0; k < len / 2; ++k) {
        const std::complex<double> u = a[i + k];
        const std::complex<double> v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wl;
      }
    }
  }
}

// Triangular Mel filters as dense weights over FFT bins 0..nfft/2.
Matrix mel_filterbank(int sample_rate, int nfft, int num_mels) {
  const int num_bins = nfft / 2 + 1;
  const double mel_lo = hz_to_mel(0.0);
  const double mel_hi = hz_to_mel(sample_rate / 2.0);
  std::vector<double> edges(static_cast<size_t>(num_mels) + 2);
  for (int i = 0; i < num_mels + 2; ++i)
    edges[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * i / (num_mels + 1));

  Matrix weights = Matrix::Zero(num_mels, num_bins);
  for (int m = 0; m < num_mels; ++m) {
    const double left = edges[m], center = edges[m + 1], right = edges[m + 2];
    for (int b = 0; b < num_bins; ++b) {
      const double hz = static_cast<double>(b) * sample_rate / nfft;
      if (hz <= left || hz >= right) continue;
      weights(m, b) = hz < center ? (hz - left) / (center - left) : (right - hz) / (right - center);
    }
  }
  return weights;
}

}  // namespace

std::vector<double> mel_center_frequencies(int sample_rate, const FeatureOptions& opt) {
  const double mel_lo = hz_to_mel(0.0);
  const double mel_hi = hz_to_mel(sample_rate / 2.0);
  std::vector<double> centers(static_cast<size_t>(opt.num_mels));
  for (int m = 0; m < opt.num_mels; ++m)
    centers[m] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * (m + 1) / (opt.num_mels + 1));
  return centers;
}

Audio peak_normalize(const Audio& audio) {
  Scalar peak = 0;
  for (const auto& ch : audio.channels)
    for (Scalar x : ch) peak = std::max(peak, std::abs(x));
  if (peak <= 0) return audio;
  Audio out = audio;
  for (auto& ch : out.channels)
    for (Scalar& x : ch) x /= peak;
  return out;
}

int block_count(Eigen::Index total_samples, int sample_rate, const BlockPlan& plan) {
  const auto length = static_cast<Eigen::Index>(std::llround(plan.block_length * sample_rate));
  const auto shift = static_cast<Eigen::Index>(std::llround(plan.block_shift * sample_rate));
  if (total_samples <= length) return 1;
  const Eigen::Index extra = total_samples - length;
  return static_cast<int>((extra + shift - 1) / shift) + 1;
}

std::vector<AudioBlock> split_blocks(const Audio& audio, const BlockPlan& plan) {
  if (audio.channels.empty() || audio.frames() == 0)
    throw std::runtime_error("split_blocks: empty waveform");
  const auto length = static_cast<Eigen::Index>(std::llround(plan.block_length * audio.sample_rate));
  const auto shift = static_cast<Eigen::Index>(std::llround(plan.block_shift * audio.sample_rate));
  const Eigen::Index total = audio.frames();
  const int count = block_count(total, audio.sample_rate, plan);

  std::vector<AudioBlock> blocks;
  blocks.reserve(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i) {
    const Eigen::Index start = static_cast<Eigen::Index>(i) * shift;
    AudioBlock block;
    block.block_index = i;
    block.start_time = static_cast<double>(start) / audio.sample_rate;
    block.audio.sample_rate = audio.sample_rate;
    block.audio.channels.reserve(audio.channels.size());
    for (const auto& ch : audio.channels) {
      std::vector<Scalar> seg(static_cast<size_t>(length), Scalar(0));
      const Eigen::Index avail = std::min(length, total - start);
      for (Eigen::Index t = 0; t < avail; ++t) seg[static_cast<size_t>(t)] = ch[static_cast<size_t>(start + t)];
      block.audio.channels.push_back(std::move(seg));
    }
    blocks.push_back(std::move(block));
  }
  return blocks;
}

FeatureSequence logmel(const Audio& audio, const FeatureOptions& opt, int nominal_frames) {
  if (audio.sample_rate < 8000) throw std::runtime_error("logmel: sample rate below 8 kHz");
  const int frame_len = static_cast<int>(std::llround(opt.frame_length * audio.sample_rate));
  const int frame_shift = static_cast<int>(std::llround(opt.frame_shift * audio.sample_rate));
  const Eigen::Index total = audio.frames();
  if (total < frame_len) throw std::runtime_error("logmel: waveform shorter than one frame");

  const int num_frames = static_cast<int>((total - frame_len) / frame_shift) + 1;
  const int nominal =
      nominal_frames >= 0 ? nominal_frames
                          : static_cast<int>(std::llround(static_cast<double>(total) / frame_shift));
  const int nfft = next_pow2(frame_len);
  const int num_bins = nfft / 2 + 1;
  const Matrix bank = mel_filterbank(audio.sample_rate, nfft, opt.num_mels);

  Vector window(frame_len);
  for (int i = 0; i < frame_len; ++i)
    window[i] = 0.5 - 0.5 * std::cos(2.0 * kPi * i / (frame_len - 1));

  FeatureSequence feat;
  feat.role = FeatureRole::PerChannel;
  feat.frame_period = opt.frame_shift;
  std::vector<std::complex<double>> buf(static_cast<size_t>(nfft));
  Vector power(num_bins);
  for (const auto& ch : audio.channels) {
    Matrix out(nominal, opt.num_mels);
    const int computed = std::min(num_frames, nominal);
    for (int f = 0; f < computed; ++f) {
      const Eigen::Index start = static_cast<Eigen::Index>(f) * frame_shift;
      for (int i = 0; i < frame_len; ++i)
        buf[static_cast<size_t>(i)] = ch[static_cast<size_t>(start + i)] * window[i];
      std::fill(buf.begin() + frame_len, buf.end(), std::complex<double>(0.0, 0.0));
      fft(buf);
      for (int b = 0; b < num_bins; ++b) power[b] = std::norm(buf[static_cast<size_t>(b)]);
      out.row(f) = (bank * power).cwiseMax(opt.log_floor).array().log().transpose();
    }
    for (int f = computed; f < nominal; ++f)
      out.row(f) = computed > 0 ? out.row(computed - 1).eval()
                                : RowVector::Constant(opt.num_mels, std::log(opt.log_floor));
    feat.channels.push_back(std::move(out));
  }
  return feat;
}

FeatureSequence normalize_block(const FeatureSequence& feat) {
  FeatureSequence out = feat;
  for (auto& ch : out.channels) {
    const double mean = ch.mean();
    const double var = (ch.array() - mean).square().mean();
    const double std = std::max(std::sqrt(var), 1e-8);
    ch = ((ch.array() - mean) / std).matrix();
  }
  return out;
}

std::vector<FeatureBlock> feature_blocks(const Audio& audio, const BlockPlan& plan,
                                         const FeatureOptions& opt) {
  if (std::abs(plan.frame_period - opt.frame_shift) > 1e-9)
    throw std::runtime_error("feature_blocks: plan frame period does not match feature frame shift");
  const Audio& prepared = opt.normalize_waveform ? peak_normalize(audio) : audio;

  std::vector<FeatureBlock> out;
  for (const AudioBlock& block : split_blocks(prepared, plan)) {
    FeatureBlock fb;
    fb.block_index = block.block_index;
    fb.start_time = block.start_time;
    fb.features = logmel(block.audio, opt, static_cast<int>(plan.length_frames()));
    if (opt.normalize_features) fb.features = normalize_block(fb.features);
    out.push_back(std::move(fb));
  }
  return out;
}

}  // namespace snd
