#include "snd/infer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iostream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "snd/rttm.hpp"

namespace snd {

namespace {

constexpr char kScoreMagic[8] = {'S', 'N', 'D', 'T', 'N', 'S', 'R', '1'};

void write_u64(std::ostream& os, uint64_t v) {
  unsigned char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(buf), 8);
}

uint64_t read_u64(std::istream& is) {
  unsigned char buf[8];
  is.read(reinterpret_cast<char*>(buf), 8);
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(buf[i]) << (8 * i);
  return v;
}

using RowMajorM = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Per-row median with a fixed window; samples outside the row count as zero.
Matrix median_filter_rows(const Matrix& m, int window) {
  if (window <= 1) return m;
  const int half = window / 2;
  Matrix out(m.rows(), m.cols());
  std::vector<Scalar> buf(static_cast<size_t>(window));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index t = 0; t < m.cols(); ++t) {
      for (int k = -half; k <= half; ++k) {
        const Eigen::Index s = t + k;
        buf[static_cast<size_t>(k + half)] = (s >= 0 && s < m.cols()) ? m(r, s) : 0.0;
      }
      std::nth_element(buf.begin(), buf.begin() + half, buf.end());
      out(r, t) = buf[static_cast<size_t>(half)];
    }
  return out;
}

FeatureSequence fused_features(const Network& model, const FeatureBlock& fb) {
  return model.channel_attention(model.extract_per_channel(fb));
}

// Block geometry on the extractor output grid.
struct OutGrid {
  int shift = 0;
  int length = 0;
  double period = 0.0;
};

OutGrid out_grid(const ModelConfig& mc, const BlockPlan& plan) {
  OutGrid g;
  g.length = mc.output_frames(plan.length_frames());
  g.period = plan.frame_period * mc.extractor_time_stride;
  const double shift = plan.block_shift / g.period;
  g.shift = static_cast<int>(std::llround(shift));
  if (g.shift < 1 || std::abs(shift - g.shift) > 1e-6)
    throw std::invalid_argument("pipeline: block shift is not a whole number of output frames");
  return g;
}

int nominal_feature_frames(const Audio& audio, const PipelineConfig& cfg) {
  const auto frames = std::llround(audio.duration() / cfg.features.frame_shift);
  return std::max<int>(1, static_cast<int>(frames));
}

// Speech mask on the feature frame grid: 2-means on log frame energy with an
// absolute silence floor, median-smoothed. When the two energy centers sit
// too close together the recording has no reliable pause structure and every
// audible frame counts as speech.
std::vector<char> energy_vad(const std::vector<Scalar>& x, int sample_rate,
                             const PipelineConfig& cfg, int total_frames) {
  const auto n = static_cast<Eigen::Index>(x.size());
  const auto win = std::max<Eigen::Index>(1, std::llround(cfg.features.frame_length * sample_rate));
  const auto hop = std::max<Eigen::Index>(1, std::llround(cfg.features.frame_shift * sample_rate));
  Vector energy(total_frames);
  for (int t = 0; t < total_frames; ++t) {
    const Eigen::Index start = t * hop;
    Scalar e = 0.0;
    const Eigen::Index stop = std::min(start + win, n);
    for (Eigen::Index s = start; s < stop; ++s) e += x[static_cast<size_t>(s)] * x[static_cast<size_t>(s)];
    energy[t] = std::log(e + 1e-10);
  }

  std::vector<char> mask(static_cast<size_t>(total_frames), 0);
  const Scalar lo = energy.minCoeff(), hi = energy.maxCoeff();
  if (hi - lo < 1e-6) return mask;

  Scalar clo = lo, chi = hi;
  std::vector<char> assign(static_cast<size_t>(total_frames), 0), prev;
  for (int iter = 0; iter < cfg.boot_vad_iters; ++iter) {
    const Scalar mid = 0.5 * (clo + chi);
    for (int t = 0; t < total_frames; ++t)
      assign[static_cast<size_t>(t)] = energy[t] > mid ? 1 : 0;
    if (assign == prev) break;
    prev = assign;
    Scalar sum_lo = 0.0, sum_hi = 0.0;
    int n_lo = 0, n_hi = 0;
    for (int t = 0; t < total_frames; ++t) {
      if (assign[static_cast<size_t>(t)]) {
        sum_hi += energy[t];
        ++n_hi;
      } else {
        sum_lo += energy[t];
        ++n_lo;
      }
    }
    if (n_lo > 0) clo = sum_lo / n_lo;
    if (n_hi > 0) chi = sum_hi / n_hi;
  }

  const Scalar floor_log = std::log(1e-8);
  const bool split = (chi - clo) >= 1.0;
  for (int t = 0; t < total_frames; ++t) {
    const bool voiced = split ? assign[static_cast<size_t>(t)] != 0 : true;
    mask[static_cast<size_t>(t)] = (voiced && energy[t] >= floor_log) ? 1 : 0;
  }

  Matrix m(1, total_frames);
  for (int t = 0; t < total_frames; ++t) m(0, t) = mask[static_cast<size_t>(t)];
  m = median_filter_rows(m, cfg.median_filter_frames);
  for (int t = 0; t < total_frames; ++t) mask[static_cast<size_t>(t)] = m(0, t) > 0.5 ? 1 : 0;
  return mask;
}

Audio first_channel(const Audio& audio) {
  Audio mono;
  mono.sample_rate = audio.sample_rate;
  mono.channels.push_back(audio.channels.front());
  return mono;
}

}  // namespace

void PipelineConfig::validate() const {
  check_block_plan(plan);
  if (std::abs(plan.frame_period - features.frame_shift) > 1e-9)
    throw std::invalid_argument("pipeline: plan frame period does not match the feature frame shift");
  if (!(binarize_threshold > 0.0 && binarize_threshold < 1.0))
    throw std::invalid_argument("pipeline: binarize threshold must lie in (0, 1)");
  if (median_filter_frames < 1 || median_filter_frames % 2 == 0)
    throw std::invalid_argument("pipeline: median filter length must be odd and positive");
  if (kmeans_max_iters < 0)
    throw std::invalid_argument("pipeline: kmeans iteration limit must be non-negative");
  if (min_segment < 0.0)
    throw std::invalid_argument("pipeline: minimum segment length must be non-negative");
  if (boot_window <= 0.0 || boot_hop <= 0.0 || boot_min_window <= 0.0 ||
      boot_min_window > boot_window + 1e-12)
    throw std::invalid_argument("pipeline: bootstrap window settings are inconsistent");
  if (!(boot_merge_threshold > -1.0 && boot_merge_threshold < 1.0))
    throw std::invalid_argument("pipeline: bootstrap merge threshold must lie in (-1, 1)");
  if (boot_vad_iters < 1)
    throw std::invalid_argument("pipeline: bootstrap VAD needs at least one iteration");
}

std::vector<BlockEmbedding> extract_block_embeddings(const std::vector<FeatureBlock>& blocks,
                                                     const DiarizationResult& init,
                                                     const Network& model) {
  if (init.empty()) throw std::invalid_argument("embeddings: initial diarization is empty");
  const std::vector<std::string> order = speakers_in_order(init);
  const int k = static_cast<int>(order.size());
  const int cap = model.config().capacity;
  if (k > cap)
    throw std::invalid_argument("embeddings: initial diarization names " + std::to_string(k) +
                                " speakers but the model capacity is " + std::to_string(cap));

  std::vector<BlockEmbedding> out;
  for (const FeatureBlock& fb : blocks) {
    const FeatureSequence x = fused_features(model, fb);
    const double t0 = fb.start_time;
    const double t1 = t0 + x.frames() * x.frame_period;
    const ActivityMatrix acts =
        activity_from_segments(crop_result(init, t0, t1), x.frame_period, x.frames(), order);
    if (acts.values.sum() == 0.0) continue;
    const EmbeddingSet emb = model.represent(x, acts);
    for (int i = 0; i < k; ++i)
      if (emb.valid[static_cast<size_t>(i)])
        out.push_back({fb.block_index, order[static_cast<size_t>(i)], emb.vectors.row(i)});
  }
  return out;
}

EmbeddingSet cluster_embeddings(const std::vector<BlockEmbedding>& embeddings,
                                const std::vector<std::string>& speakers,
                                const PipelineConfig& cfg, std::vector<double>* objective,
                                std::ostream* warnings) {
  cfg.validate();
  const int k = static_cast<int>(speakers.size());
  if (k == 0) throw std::invalid_argument("cluster: no speakers");
  if (embeddings.empty()) throw std::invalid_argument("cluster: no embedding vectors");
  std::ostream& warn = warnings ? *warnings : std::cerr;

  std::map<std::string, int> index;
  for (int c = 0; c < k; ++c)
    if (!index.emplace(speakers[static_cast<size_t>(c)], c).second)
      throw std::invalid_argument("cluster: duplicate speaker '" + speakers[static_cast<size_t>(c)] + "'");

  const auto n = static_cast<int>(embeddings.size());
  const auto dim = static_cast<Eigen::Index>(embeddings[0].vector.size());
  Matrix v(n, dim);
  std::vector<int> home(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    const BlockEmbedding& e = embeddings[static_cast<size_t>(i)];
    if (e.vector.size() != dim)
      throw std::invalid_argument("cluster: embedding dimensions disagree");
    const auto it = index.find(e.speaker);
    if (it == index.end())
      throw std::invalid_argument("cluster: embedding for unknown speaker '" + e.speaker + "'");
    const double norm = e.vector.norm();
    if (norm < 1e-12) throw std::invalid_argument("cluster: embedding with zero norm");
    v.row(i) = e.vector / norm;
    home[static_cast<size_t>(i)] = it->second;
  }

  Matrix centroids = Matrix::Zero(k, dim);
  std::vector<int> counts(static_cast<size_t>(k), 0);
  for (int i = 0; i < n; ++i) {
    centroids.row(home[static_cast<size_t>(i)]) += v.row(i);
    ++counts[static_cast<size_t>(home[static_cast<size_t>(i)])];
  }
  for (int c = 0; c < k; ++c) {
    if (counts[static_cast<size_t>(c)] == 0)
      throw std::invalid_argument("cluster: speaker '" + speakers[static_cast<size_t>(c)] +
                                  "' has no embedding vectors");
    const double norm = centroids.row(c).norm();
    if (norm < 1e-12)
      throw std::invalid_argument("cluster: speaker '" + speakers[static_cast<size_t>(c)] +
                                  "' has a degenerate mean");
    centroids.row(c) /= norm;
  }

  if (cfg.use_clustering) {
    std::vector<int> assign(static_cast<size_t>(n), -1), prev;
    for (int iter = 0; iter < cfg.kmeans_max_iters; ++iter) {
      double obj = 0.0;
      for (int i = 0; i < n; ++i) {
        int best = 0;
        double best_dot = v.row(i).dot(centroids.row(0));
        for (int c = 1; c < k; ++c) {
          const double d = v.row(i).dot(centroids.row(c));
          if (d > best_dot) {
            best_dot = d;
            best = c;
          }
        }
        assign[static_cast<size_t>(i)] = best;
        obj += 1.0 - best_dot;
      }
      if (objective) objective->push_back(obj);
      if (assign == prev) break;
      prev = assign;

      Matrix sums = Matrix::Zero(k, dim);
      std::vector<int> sizes(static_cast<size_t>(k), 0);
      for (int i = 0; i < n; ++i) {
        sums.row(assign[static_cast<size_t>(i)]) += v.row(i);
        ++sizes[static_cast<size_t>(assign[static_cast<size_t>(i)])];
      }
      for (int c = 0; c < k; ++c) {
        const double norm = sums.row(c).norm();
        if (sizes[static_cast<size_t>(c)] == 0 || norm < 1e-12) {
          warn << "kmeans: cluster for '" << speakers[static_cast<size_t>(c)]
               << "' emptied at iteration " << iter + 1 << "; keeping its previous centroid\n";
          continue;
        }
        centroids.row(c) = sums.row(c) / norm;
      }
    }
  }

  EmbeddingSet out;
  out.vectors = centroids;
  out.valid.assign(static_cast<size_t>(k), true);
  return out;
}

std::vector<ActivityMatrix> detect_blockwise(const std::vector<FeatureBlock>& blocks,
                                             const EmbeddingSet& enrolled, const Network& model) {
  const ModelConfig& mc = model.config();
  const int k = enrolled.size();
  if (k < 1) throw std::invalid_argument("detect: no enrolled speakers");
  if (enrolled.dim() != mc.embedding_dim)
    throw std::invalid_argument("detect: enrollment dimension mismatch");
  if (k > mc.capacity)
    throw std::invalid_argument("detect: " + std::to_string(k) +
                                " enrolled speakers exceed the model capacity " +
                                std::to_string(mc.capacity));

  RowVector null = model.speaker_table().non_speech;
  const double norm = null.norm();
  if (norm < 1e-12) throw std::runtime_error("detect: the non-speech embedding has zero norm");
  null /= norm;

  EmbeddingSet padded;
  padded.vectors = Matrix(mc.capacity, mc.embedding_dim);
  padded.vectors.topRows(k) = enrolled.vectors;
  for (int r = k; r < mc.capacity; ++r) padded.vectors.row(r) = null;
  padded.valid.assign(static_cast<size_t>(mc.capacity), false);
  for (int r = 0; r < k; ++r) padded.valid[static_cast<size_t>(r)] = true;

  std::vector<ActivityMatrix> out;
  out.reserve(blocks.size());
  for (const FeatureBlock& fb : blocks) {
    const FeatureSequence xhat = model.encode(fused_features(model, fb));
    out.push_back(model.detect(xhat, padded));
  }
  return out;
}

ActivityMatrix fuse_scores(const std::vector<ActivityMatrix>& block_outputs,
                           const BlockPlan& plan, int total_frames) {
  if (block_outputs.empty()) throw std::invalid_argument("fusion: no block outputs");
  if (total_frames < 1) throw std::invalid_argument("fusion: total frame count must be positive");
  const int rows = block_outputs[0].speakers();
  const int cols = block_outputs[0].frames();
  const double fp = block_outputs[0].frame_period;
  for (const ActivityMatrix& o : block_outputs)
    if (o.speakers() != rows || o.frames() != cols || std::abs(o.frame_period - fp) > 1e-9)
      throw std::invalid_argument("fusion: block outputs disagree in shape or frame period");

  const double shift_exact = plan.block_shift / fp;
  const int shift = static_cast<int>(std::llround(shift_exact));
  if (shift < 1 || std::abs(shift_exact - shift) > 1e-6)
    throw std::invalid_argument("fusion: block shift is not a whole number of output frames");
  const auto b = static_cast<int>(block_outputs.size());
  const int covered = (b - 1) * shift + cols;
  if (total_frames > covered)
    throw std::invalid_argument("fusion: " + std::to_string(total_frames) +
                                " frames requested but " + std::to_string(b) +
                                " blocks cover only " + std::to_string(covered));

  Matrix sum = Matrix::Zero(rows, total_frames);
  std::vector<int> count(static_cast<size_t>(total_frames), 0);
  for (int i = 0; i < b; ++i)
    for (int t = 0; t < cols; ++t) {
      const int g = i * shift + t;
      if (g >= total_frames) break;
      sum.col(g) += block_outputs[static_cast<size_t>(i)].values.col(t);
      ++count[static_cast<size_t>(g)];
    }
  for (int g = 0; g < total_frames; ++g) sum.col(g) /= count[static_cast<size_t>(g)];

  ActivityMatrix out;
  out.values = std::move(sum);
  out.kind = ActivityKind::Probability;
  out.frame_period = fp;
  return out;
}

DiarizationResult binarize(const ActivityMatrix& scores, const PipelineConfig& cfg,
                           const std::vector<std::string>& speakers) {
  cfg.validate();
  const int n = scores.speakers();
  const int frames = scores.frames();
  if (!speakers.empty() && static_cast<int>(speakers.size()) != n)
    throw std::invalid_argument("binarize: speaker name count does not match score rows");

  DiarizationResult out;
  if (n == 0 || frames == 0) return out;
  const Matrix filt = median_filter_rows(scores.values, cfg.median_filter_frames);
  for (int r = 0; r < n; ++r) {
    const std::string name =
        speakers.empty() ? "spk" + std::to_string(r + 1) : speakers[static_cast<size_t>(r)];
    int t = 0;
    while (t < frames) {
      if (!(filt(r, t) > cfg.binarize_threshold)) {
        ++t;
        continue;
      }
      const int start = t;
      while (t < frames && filt(r, t) > cfg.binarize_threshold) ++t;
      const double duration = (t - start) * scores.frame_period;
      if (duration >= cfg.min_segment - 1e-12)
        out.segments.push_back({name, start * scores.frame_period, duration});
    }
  }
  return normalize_result(out);
}

DiarizationResult bootstrap_segments(const Audio& audio, const Network& model,
                                     const PipelineConfig& cfg) {
  cfg.validate();
  if (audio.channels.empty() || audio.frames() == 0)
    throw std::invalid_argument("first pass: audio is empty");
  Audio mono = first_channel(audio);
  if (cfg.features.normalize_waveform) mono = peak_normalize(mono);

  const int total_feat = nominal_feature_frames(mono, cfg);
  const std::vector<char> speech =
      energy_vad(mono.channels[0], mono.sample_rate, cfg, total_feat);

  DiarizationResult out;
  if (std::find(speech.begin(), speech.end(), char(1)) == speech.end()) return out;

  const ModelConfig& mc = model.config();
  const OutGrid grid = out_grid(mc, cfg.plan);
  const int total_out = mc.output_frames(total_feat);
  std::vector<char> speech_out(static_cast<size_t>(total_out), 0);
  for (int t = 0; t < total_feat; ++t)
    if (speech[static_cast<size_t>(t)]) speech_out[static_cast<size_t>(t / mc.extractor_time_stride)] = 1;

  const int w = std::max<int>(1, static_cast<int>(std::llround(cfg.boot_window / grid.period)));
  const int hop = std::max<int>(1, static_cast<int>(std::llround(cfg.boot_hop / grid.period)));
  const int w_min = std::max<int>(1, static_cast<int>(std::llround(cfg.boot_min_window / grid.period)));

  struct Window {
    int t0 = 0, t1 = 0, block = 0;
  };
  std::vector<Window> wins;
  int t = 0;
  while (t < total_out) {
    if (!speech_out[static_cast<size_t>(t)]) {
      ++t;
      continue;
    }
    int e = t;
    while (e < total_out && speech_out[static_cast<size_t>(e)]) ++e;
    for (int s = t; s + w_min <= e; s += hop) {
      wins.push_back({s, std::min(s + w, e), 0});
      if (s + w >= e) break;
    }
    t = e;
  }
  if (wins.empty()) return out;

  const std::vector<FeatureBlock> blocks = feature_blocks(mono, cfg.plan, cfg.features);
  const auto num_blocks = static_cast<int>(blocks.size());
  for (Window& win : wins) {
    win.block = std::min(win.t0 / grid.shift, num_blocks - 1);
    win.t1 = std::min(win.t1, win.block * grid.shift + grid.length);
  }

  const auto num_wins = static_cast<int>(wins.size());
  Matrix emb(num_wins, mc.embedding_dim);
  std::vector<char> have(static_cast<size_t>(num_wins), 0);
  for (int bi = 0; bi < num_blocks; ++bi) {
    std::vector<int> members;
    for (int i = 0; i < num_wins; ++i)
      if (wins[static_cast<size_t>(i)].block == bi &&
          wins[static_cast<size_t>(i)].t1 > wins[static_cast<size_t>(i)].t0)
        members.push_back(i);
    if (members.empty()) continue;

    const FeatureSequence x = fused_features(model, blocks[static_cast<size_t>(bi)]);
    ActivityMatrix acts;
    acts.values = Matrix::Zero(static_cast<Eigen::Index>(members.size()), x.frames());
    acts.kind = ActivityKind::GroundTruth;
    acts.frame_period = x.frame_period;
    const int base = bi * grid.shift;
    for (size_t j = 0; j < members.size(); ++j) {
      const Window& win = wins[static_cast<size_t>(members[j])];
      acts.values.row(static_cast<Eigen::Index>(j))
          .segment(win.t0 - base, win.t1 - win.t0)
          .setOnes();
    }
    const EmbeddingSet rep = model.represent(x, acts);
    for (size_t j = 0; j < members.size(); ++j)
      if (rep.valid[j]) {
        emb.row(members[j]) = rep.vectors.row(static_cast<Eigen::Index>(j));
        have[static_cast<size_t>(members[j])] = 1;
      }
  }

  struct Cluster {
    RowVector sum;
    RowVector centroid;
    std::vector<int> members;
    int first = 0;
  };
  std::vector<Cluster> clusters;
  for (int i = 0; i < num_wins; ++i) {
    if (!have[static_cast<size_t>(i)]) continue;
    Cluster c;
    c.sum = emb.row(i);
    c.centroid = emb.row(i);
    c.members = {i};
    c.first = wins[static_cast<size_t>(i)].t0;
    clusters.push_back(std::move(c));
  }
  if (clusters.empty()) return out;

  while (clusters.size() > 1) {
    size_t best_a = 0, best_b = 1;
    double best = -2.0;
    for (size_t a = 0; a < clusters.size(); ++a)
      for (size_t b = a + 1; b < clusters.size(); ++b) {
        const double d = clusters[a].centroid.dot(clusters[b].centroid);
        if (d > best) {
          best = d;
          best_a = a;
          best_b = b;
        }
      }
    const bool over_capacity = static_cast<int>(clusters.size()) > mc.capacity;
    if (!over_capacity && best <= cfg.boot_merge_threshold) break;

    Cluster& a = clusters[best_a];
    const Cluster& b = clusters[best_b];
    a.sum += b.sum;
    a.members.insert(a.members.end(), b.members.begin(), b.members.end());
    a.first = std::min(a.first, b.first);
    const double norm = a.sum.norm();
    if (norm >= 1e-12) a.centroid = a.sum / norm;
    clusters.erase(clusters.begin() + static_cast<std::ptrdiff_t>(best_b));
  }

  std::sort(clusters.begin(), clusters.end(),
            [](const Cluster& a, const Cluster& b) { return a.first < b.first; });
  for (size_t c = 0; c < clusters.size(); ++c) {
    const std::string name = "spk" + std::to_string(c + 1);
    for (const int i : clusters[c].members) {
      const Window& win = wins[static_cast<size_t>(i)];
      out.segments.push_back({name, win.t0 * grid.period, (win.t1 - win.t0) * grid.period});
    }
  }
  return normalize_result(out);
}

DiarizationResult refine(const Audio& audio, const Network& model, const DiarizationResult& init,
                         const PipelineConfig& cfg, ActivityMatrix* fused_out,
                         std::ostream* warnings) {
  cfg.validate();
  if (audio.channels.empty() || audio.frames() == 0)
    throw std::invalid_argument("pipeline: audio is empty");
  if (init.empty()) throw std::invalid_argument("pipeline: initial diarization is empty");
  std::ostream& warn = warnings ? *warnings : std::cerr;

  const std::vector<FeatureBlock> blocks = feature_blocks(audio, cfg.plan, cfg.features);
  const std::vector<BlockEmbedding> embeddings = extract_block_embeddings(blocks, init, model);

  std::vector<std::string> speakers;
  for (const std::string& name : speakers_in_order(init)) {
    const bool found = std::any_of(embeddings.begin(), embeddings.end(),
                                   [&](const BlockEmbedding& e) { return e.speaker == name; });
    if (found)
      speakers.push_back(name);
    else
      warn << "pipeline: speaker '" << name << "' produced no embeddings; dropping it\n";
  }
  DiarizationResult out;
  out.recording_id = init.recording_id;
  if (speakers.empty()) return out;

  const EmbeddingSet enrolled = cluster_embeddings(embeddings, speakers, cfg, nullptr, warnings);
  const std::vector<ActivityMatrix> scores = detect_blockwise(blocks, enrolled, model);
  const int total_out = model.config().output_frames(nominal_feature_frames(audio, cfg));
  const ActivityMatrix fused = fuse_scores(scores, cfg.plan, total_out);
  if (fused_out) *fused_out = fused;

  ActivityMatrix top;
  top.values = fused.values.topRows(static_cast<Eigen::Index>(speakers.size()));
  top.kind = ActivityKind::Probability;
  top.frame_period = fused.frame_period;
  DiarizationResult hyp = binarize(top, cfg, speakers);
  hyp.recording_id = init.recording_id;
  return hyp;
}

DiarizationResult run_first_pass(const Audio& audio, const Network& model,
                                 const PipelineConfig& cfg) {
  cfg.validate();
  if (audio.channels.empty() || audio.frames() == 0)
    throw std::invalid_argument("first pass: audio is empty");
  const Audio mono = first_channel(audio);
  const DiarizationResult init = bootstrap_segments(mono, model, cfg);
  if (init.empty()) return init;
  return refine(mono, model, init, cfg);
}

DiarizationResult run_pipeline(const Audio& audio, const Network& first_pass,
                               const Network& mc_model, const PipelineConfig& cfg,
                               const DiarizationResult* init, ActivityMatrix* fused_out,
                               std::ostream* warnings) {
  cfg.validate();
  if (audio.channels.empty() || audio.frames() == 0)
    throw std::invalid_argument("pipeline: audio is empty");
  const DiarizationResult roster = init ? *init : run_first_pass(audio, first_pass, cfg);
  if (roster.empty()) return roster;
  return refine(audio, mc_model, roster, cfg, fused_out, warnings);
}

void write_score_matrix(const Matrix& scores, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error(path + ": cannot open for writing");
  f.write(kScoreMagic, 8);
  write_u64(f, static_cast<uint64_t>(scores.rows()));
  write_u64(f, static_cast<uint64_t>(scores.cols()));
  const RowMajorM row_major = scores;
  f.write(reinterpret_cast<const char*>(row_major.data()),
          static_cast<std::streamsize>(sizeof(Scalar) * row_major.size()));
  if (!f) throw std::runtime_error(path + ": write failed");
}

Matrix read_score_matrix(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error(path + ": cannot open");
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, kScoreMagic, 8) != 0)
    throw std::runtime_error(path + ": not a score matrix (bad magic)");
  const uint64_t rows = read_u64(f);
  const uint64_t cols = read_u64(f);
  if (!f || rows > (uint64_t(1) << 30) || cols > (uint64_t(1) << 30))
    throw std::runtime_error(path + ": corrupt score matrix header");
  RowMajorM row_major(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  f.read(reinterpret_cast<char*>(row_major.data()),
         static_cast<std::streamsize>(sizeof(Scalar) * row_major.size()));
  if (f.gcount() != static_cast<std::streamsize>(sizeof(Scalar) * row_major.size()))
    throw std::runtime_error(path + ": truncated score matrix");
  return row_major;
}

}  // namespace snd
