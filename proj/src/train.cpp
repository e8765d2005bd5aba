#include "snd/train.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <set>
#include <stdexcept>

#include "snd/rttm.hpp"

namespace snd {

namespace {

bool starts_with(const std::string& s, const std::string& prefix) {
  return s.rfind(prefix, 0) == 0;
}

}  // namespace

void ArcFaceParams::validate() const {
  if (!(scale > 0)) throw std::invalid_argument("arcface: scale must be positive");
  if (!(margin >= 0) || !(margin < 1.5707963267948966))
    throw std::invalid_argument("arcface: margin must lie in [0, pi/2)");
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0)) throw std::invalid_argument("train: learning_rate must be positive");
  if (batch_size < 1) throw std::invalid_argument("train: batch_size must be positive");
  if (max_steps < 1) throw std::invalid_argument("train: max_steps must be positive");
  if (!(distractor_padding_prob >= 0) || !(distractor_padding_prob <= 1))
    throw std::invalid_argument("train: distractor_padding_prob must lie in [0, 1]");
  arcface.validate();
}

EmbeddingSet lookup_embeddings(const SpeakerSelection& sel, const SpeakerTable& table) {
  if (sel.num_classes != table.size())
    throw std::invalid_argument("lookup: selection has " + std::to_string(sel.num_classes) +
                                " classes, table has " + std::to_string(table.size()) + " rows");
  for (int label : sel.labels)
    if (label < 0 || label >= table.size())
      throw std::invalid_argument("lookup: label " + std::to_string(label) +
                                  " outside table of " + std::to_string(table.size()) + " rows");
  EmbeddingSet out;
  out.vectors = sel.one_hot() * table.table;
  out.valid.assign(sel.labels.size(), true);
  return out;
}

void pad_speakers(EmbeddingSet& emb, ActivityMatrix& acts, const SpeakerTable& table,
                  const std::vector<int>& absent_pool, int capacity,
                  double distractor_padding_prob, Rng& rng) {
  const int n_loc = emb.size();
  if (n_loc > capacity)
    throw std::invalid_argument("pad_speakers: capacity exceeded (" + std::to_string(n_loc) +
                                " speakers, capacity " + std::to_string(capacity) + ")");
  if (acts.values.rows() != n_loc)
    throw std::invalid_argument("pad_speakers: embedding and activity row counts differ");
  if (n_loc > 0 && emb.dim() != table.dim())
    throw std::invalid_argument("pad_speakers: embedding dimension mismatch");
  if (!(distractor_padding_prob >= 0) || !(distractor_padding_prob <= 1))
    throw std::invalid_argument("pad_speakers: probability must lie in [0, 1]");
  for (int label : absent_pool)
    if (label < 0 || label >= table.size())
      throw std::invalid_argument("pad_speakers: absent label " + std::to_string(label) +
                                  " outside the table");
  if (n_loc == capacity) return;

  Matrix vectors(capacity, table.dim());
  vectors.topRows(n_loc) = emb.vectors;
  Matrix values = Matrix::Zero(capacity, acts.values.cols());
  values.topRows(n_loc) = acts.values;
  emb.valid.resize(static_cast<size_t>(capacity), false);

  std::vector<int> pool = absent_pool;
  for (int slot = n_loc; slot < capacity; ++slot) {
    const bool distractor = rng.uniform() < distractor_padding_prob && !pool.empty();
    if (distractor) {
      const int pick = rng.uniform_int(static_cast<int>(pool.size()));
      vectors.row(slot) = table.table.row(pool[static_cast<size_t>(pick)]);
      pool.erase(pool.begin() + pick);
    } else {
      vectors.row(slot) = table.non_speech;
    }
    emb.valid[static_cast<size_t>(slot)] = false;
  }
  emb.vectors = std::move(vectors);
  acts.values = std::move(values);
}

std::vector<int> shuffle_speakers(EmbeddingSet& emb, ActivityMatrix& acts, Rng& rng) {
  const int n = emb.size();
  if (acts.values.rows() != n)
    throw std::invalid_argument("shuffle_speakers: embedding and activity row counts differ");
  if (emb.valid.size() != static_cast<size_t>(n))
    throw std::invalid_argument("shuffle_speakers: validity mask size mismatch");
  const std::vector<int> perm = rng.permutation(n);
  Matrix vectors(n, emb.vectors.cols());
  Matrix values(n, acts.values.cols());
  std::vector<bool> valid(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    vectors.row(i) = emb.vectors.row(perm[static_cast<size_t>(i)]);
    values.row(i) = acts.values.row(perm[static_cast<size_t>(i)]);
    valid[static_cast<size_t>(i)] = emb.valid[static_cast<size_t>(perm[static_cast<size_t>(i)])];
  }
  emb.vectors = std::move(vectors);
  acts.values = std::move(values);
  emb.valid = std::move(valid);
  return perm;
}

double bce_loss(const ActivityMatrix& pred, const ActivityMatrix& truth) {
  if (pred.kind != ActivityKind::Probability)
    throw std::invalid_argument("bce: predictions must be probabilities");
  if (truth.kind != ActivityKind::GroundTruth)
    throw std::invalid_argument("bce: targets must be ground truth");
  if (pred.values.rows() != truth.values.rows() || pred.values.cols() != truth.values.cols())
    throw std::invalid_argument("bce: shape mismatch");
  ad::Tape t;
  return t.value(ad::bce_loss(t, t.constant(pred.values), truth.values))(0, 0);
}

double arcface_loss(const EmbeddingSet& emb, const SpeakerSelection& labels,
                    const SpeakerTable& table, const ArcFaceParams& ap) {
  ap.validate();
  if (labels.labels.size() != static_cast<size_t>(emb.size()))
    throw std::invalid_argument("arcface: one label per embedding row required");
  if (emb.valid.size() != static_cast<size_t>(emb.size()))
    throw std::invalid_argument("arcface: validity mask size mismatch");
  if (emb.size() > 0 && emb.dim() != table.dim())
    throw std::invalid_argument("arcface: embedding dimension mismatch");

  std::vector<int> rows;
  std::vector<int> valid_labels;
  for (int i = 0; i < emb.size(); ++i) {
    if (!emb.valid[static_cast<size_t>(i)]) continue;
    const int label = labels.labels[static_cast<size_t>(i)];
    if (label < 0 || label >= table.size())
      throw std::invalid_argument("arcface: label " + std::to_string(label) +
                                  " outside table of " + std::to_string(table.size()) + " rows");
    rows.push_back(i);
    valid_labels.push_back(label);
  }
  if (rows.empty()) return 0.0;

  Matrix valid_rows(rows.size(), emb.dim());
  for (size_t i = 0; i < rows.size(); ++i) valid_rows.row(i) = emb.vectors.row(rows[i]);
  ad::Tape t;
  return t.value(ad::arcface_loss(t, t.constant(valid_rows), t.constant(table.table),
                                  valid_labels, ap.scale, ap.margin))(0, 0);
}

LossParts total_loss(const ActivityMatrix& pred, const ActivityMatrix& truth,
                     const EmbeddingSet& emb, const SpeakerSelection& labels,
                     const SpeakerTable& table, const ArcFaceParams& ap) {
  LossParts parts;
  parts.bce = bce_loss(pred, truth);
  parts.arc = arcface_loss(emb, labels, table, ap);
  parts.total = parts.bce + parts.arc;
  return parts;
}

AdamW::AdamW(double beta1, double beta2, double eps, double weight_decay)
    : beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1))
    throw std::invalid_argument("adamw: betas must lie in [0, 1)");
  if (!(eps > 0)) throw std::invalid_argument("adamw: eps must be positive");
  if (!(weight_decay >= 0)) throw std::invalid_argument("adamw: weight decay must be nonnegative");
}

void AdamW::step(Parameters& params, const std::map<std::string, Matrix>& grads, double lr) {
  if (!(lr > 0)) throw std::invalid_argument("adamw: learning rate must be positive");
  ++step_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));
  for (const auto& [name, g] : grads) {
    Matrix& p = params.at(name);
    if (g.rows() != p.rows() || g.cols() != p.cols())
      throw std::invalid_argument("adamw: gradient shape mismatch for '" + name + "'");
    Matrix& m = m_.try_emplace(name, Matrix::Zero(p.rows(), p.cols())).first->second;
    Matrix& v = v_.try_emplace(name, Matrix::Zero(p.rows(), p.cols())).first->second;
    m = beta1_ * m + (1.0 - beta1_) * g;
    v = beta2_ * v + (1.0 - beta2_) * g.cwiseProduct(g);
    const auto mhat = m.array() / bc1;
    const auto vhat = v.array() / bc2;
    p.array() -= lr * (mhat / (vhat.sqrt() + eps_) + weight_decay_ * p.array());
  }
}

StageSpec stage_defaults(const std::string& name) {
  StageSpec s;
  s.name = name;
  if (name == "s2snd-1") {
    s.frozen = {"extractor."};
    s.learning_rate = 1e-4;
    s.sim_fraction = 1.0;
    s.steps = 500;
  } else if (name == "s2snd-2") {
    s.learning_rate = 1e-4;
    s.sim_fraction = 0.5;
    s.steps = 500;
  } else if (name == "s2snd-3") {
    s.learning_rate = 1e-5;
    s.sim_fraction = 0.5;
    s.steps = 250;
  } else if (name == "mc-1") {
    s.frozen = {"extractor.", "encoder.", "detdec.", "repdec.", "spktable."};
    s.learning_rate = 1e-4;
    s.sim_fraction = 1.0;
    s.steps = 300;
  } else if (name == "mc-2") {
    s.learning_rate = 1e-5;
    s.sim_fraction = 1.0;
    s.steps = 250;
  } else if (name == "adapt") {
    s.learning_rate = 1e-5;
    s.sim_fraction = 0.5;
    s.steps = 150;
  } else {
    throw std::invalid_argument(
        "unknown stage '" + name +
        "' (expected s2snd-1, s2snd-2, s2snd-3, mc-1, mc-2, or adapt)");
  }
  return s;
}

const TrainExample& sample_example(const DataMix& mix, double sim_fraction, Rng& rng,
                                   bool* from_sim) {
  if (!(sim_fraction >= 0) || !(sim_fraction <= 1))
    throw std::invalid_argument("data mix: sim_fraction must lie in [0, 1]");
  const bool has_sim = mix.sim && !mix.sim->empty();
  const bool has_real = mix.real && !mix.real->empty();
  if (sim_fraction > 0 && !has_sim)
    throw std::invalid_argument("data mix: simulated pool is empty");
  if (sim_fraction < 1 && !has_real)
    throw std::invalid_argument("data mix: real pool is empty");
  bool use_sim;
  if (sim_fraction >= 1)
    use_sim = true;
  else if (sim_fraction <= 0)
    use_sim = false;
  else
    use_sim = rng.uniform() < sim_fraction;
  if (from_sim) *from_sim = use_sim;
  const std::vector<TrainExample>& pool = use_sim ? *mix.sim : *mix.real;
  return pool[static_cast<size_t>(rng.uniform_int(static_cast<int>(pool.size())))];
}

LossGraph example_loss_graph(Binder& b, const TrainExample& ex, const TrainConfig& tc, Rng& rng) {
  ad::Tape& t = b.tape();
  const ModelConfig& cfg = b.params().config;
  if (ex.channels.empty()) throw std::invalid_argument("example: no feature channels");
  const int frames = static_cast<int>(ex.channels[0].rows());
  for (const Matrix& ch : ex.channels)
    if (ch.rows() != frames || ch.cols() != cfg.feature_dim)
      throw std::invalid_argument("example: inconsistent feature channel shapes");
  const int n_loc = static_cast<int>(ex.labels.size());
  if (ex.activity.rows() != n_loc)
    throw std::invalid_argument("example: one label per activity row required");
  if (n_loc > cfg.capacity)
    throw std::invalid_argument("example: capacity exceeded (" + std::to_string(n_loc) +
                                " speakers, capacity " + std::to_string(cfg.capacity) + ")");
  const int out_frames = cfg.output_frames(frames);
  if (ex.activity.cols() != out_frames)
    throw std::invalid_argument("example: activity has " + std::to_string(ex.activity.cols()) +
                                " frames, extractor emits " + std::to_string(out_frames));
  std::set<int> present;
  for (int label : ex.labels) {
    if (label < 0 || label >= cfg.table_size)
      throw std::invalid_argument("example: label " + std::to_string(label) +
                                  " outside table of " + std::to_string(cfg.table_size) +
                                  " rows");
    present.insert(label);
  }

  // Slot bookkeeping: present speakers first, then padding decisions.
  const int n = cfg.capacity;
  std::vector<int> lab(static_cast<size_t>(n), 0);
  std::vector<bool> from_table(static_cast<size_t>(n), false);
  for (int i = 0; i < n_loc; ++i) {
    lab[static_cast<size_t>(i)] = ex.labels[static_cast<size_t>(i)];
    from_table[static_cast<size_t>(i)] = true;
  }
  std::vector<int> pool;
  for (int label = 0; label < cfg.table_size; ++label)
    if (!present.count(label)) pool.push_back(label);
  for (int slot = n_loc; slot < n; ++slot) {
    const bool distractor = rng.uniform() < tc.distractor_padding_prob && !pool.empty();
    if (distractor) {
      const int pick = rng.uniform_int(static_cast<int>(pool.size()));
      lab[static_cast<size_t>(slot)] = pool[static_cast<size_t>(pick)];
      from_table[static_cast<size_t>(slot)] = true;
      pool.erase(pool.begin() + pick);
    }
  }
  Matrix truth = Matrix::Zero(n, out_frames);
  truth.topRows(n_loc) = ex.activity;
  std::vector<bool> is_present(static_cast<size_t>(n), false);
  for (int i = 0; i < n_loc; ++i) is_present[static_cast<size_t>(i)] = true;

  if (tc.shuffle_speakers) {
    const std::vector<int> perm = rng.permutation(n);
    std::vector<int> lab2(static_cast<size_t>(n));
    std::vector<bool> table2(static_cast<size_t>(n)), present2(static_cast<size_t>(n));
    Matrix truth2(n, out_frames);
    for (int i = 0; i < n; ++i) {
      const auto j = static_cast<size_t>(perm[static_cast<size_t>(i)]);
      lab2[static_cast<size_t>(i)] = lab[j];
      table2[static_cast<size_t>(i)] = from_table[j];
      present2[static_cast<size_t>(i)] = is_present[j];
      truth2.row(i) = truth.row(static_cast<Eigen::Index>(j));
    }
    lab = std::move(lab2);
    from_table = std::move(table2);
    is_present = std::move(present2);
    truth = std::move(truth2);
  }

  std::vector<ad::Var> chans;
  chans.reserve(ex.channels.size());
  for (const Matrix& ch : ex.channels)
    chans.push_back(extract_channel_graph(b, cfg, t.constant(ch)));
  ad::Var x = channel_attention_graph(b, cfg, chans);
  ad::Var xhat = encode_graph(b, cfg, x);

  // Enrollment rows are length-normalized so the detection decoder sees the
  // same scale here as at inference, where enrollment comes from the unit-norm
  // representation decoder outputs and their cluster means.
  ad::Var table = b("spktable.e_all");
  ad::Var picked = ad::gather_rows(t, table, lab);
  ad::Var padding = ad::tile_rows(t, b("spktable.e_non"), n);
  ad::Var enrollment = ad::normalize_rows(t, ad::select_rows(t, picked, padding, from_table));

  LossGraph out;
  ad::Var probs = detect_graph(b, cfg, xhat, enrollment);
  out.bce = ad::bce_loss(t, probs, truth);

  std::vector<bool> valid;
  ad::Var rep = represent_graph(b, cfg, x, truth, &valid);
  std::vector<int> rows;
  std::vector<int> arc_labels;
  for (int i = 0; i < n; ++i)
    if (valid[static_cast<size_t>(i)] && is_present[static_cast<size_t>(i)]) {
      rows.push_back(i);
      arc_labels.push_back(lab[static_cast<size_t>(i)]);
    }
  if (!rows.empty()) {
    ad::Var valid_rows = ad::gather_rows(t, rep, rows);
    out.arc = ad::arcface_loss(t, valid_rows, table, arc_labels, tc.arcface.scale,
                               tc.arcface.margin);
    out.total = ad::add(t, out.bce, out.arc);
    out.has_arc = true;
  } else {
    out.total = out.bce;
  }
  return out;
}

std::vector<StepRecord> train_stage(Parameters& params, const StageSpec& stage,
                                    const DataMix& mix, const TrainConfig& tc,
                                    std::ostream* log) {
  tc.validate();
  if (stage.steps < 1) throw std::invalid_argument("stage: steps must be positive");
  if (!(stage.learning_rate > 0))
    throw std::invalid_argument("stage: learning rate must be positive");

  for (const std::string& prefix : stage.frozen) {
    bool any = false;
    for (const auto& [name, tensor] : params.tensors)
      if (starts_with(name, prefix)) {
        any = true;
        break;
      }
    if (!any)
      throw std::invalid_argument("stage '" + stage.name +
                                  "' references unknown parameter group: " + prefix);
  }

  std::map<std::string, Matrix> frozen_before;
  for (const auto& [name, tensor] : params.tensors)
    for (const std::string& prefix : stage.frozen)
      if (starts_with(name, prefix)) {
        frozen_before[name] = tensor;
        break;
      }

  AdamW opt(tc);
  Rng rng(mix_seed(tc.seed, hash_string(stage.name)));
  std::vector<StepRecord> records;
  records.reserve(static_cast<size_t>(stage.steps));

  for (int step = 1; step <= stage.steps; ++step) {
    ad::Tape tape;
    Binder bind(tape, params, stage.frozen);
    ad::Var total_sum, bce_sum;
    for (int i = 0; i < tc.batch_size; ++i) {
      const TrainExample& ex = sample_example(mix, stage.sim_fraction, rng);
      const LossGraph lg = example_loss_graph(bind, ex, tc, rng);
      total_sum = i == 0 ? lg.total : ad::add(tape, total_sum, lg.total);
      bce_sum = i == 0 ? lg.bce : ad::add(tape, bce_sum, lg.bce);
    }
    const ad::Var total = ad::scale(tape, total_sum, 1.0 / tc.batch_size);
    StepRecord rec;
    rec.step = step;
    rec.lr = stage.learning_rate;
    rec.total = tape.value(total)(0, 0);
    rec.bce = tape.value(bce_sum)(0, 0) / tc.batch_size;
    rec.arc = rec.total - rec.bce;
    if (!std::isfinite(rec.total))
      throw std::runtime_error("training diverged: non-finite loss at step " +
                               std::to_string(step) + " of stage '" + stage.name + "'");
    tape.backward(total);

    std::map<std::string, Matrix> grads;
    for (const auto& [name, var] : bind.bound())
      if (!bind.frozen(name) && tape.requires_grad(var)) grads[name] = tape.grad(var);
    opt.step(params, grads, stage.learning_rate);

    if (log)
      *log << "step=" << step << " lr=" << rec.lr << " bce=" << rec.bce << " arc=" << rec.arc
           << " total=" << rec.total << "\n";
    records.push_back(rec);
  }

  for (const auto& [name, before] : frozen_before)
    if ((params.at(name).array() != before.array()).any())
      throw std::logic_error("stage '" + stage.name + "': frozen tensor '" + name +
                             "' changed during training");
  return records;
}

std::vector<TrainExample> build_examples(const Audio& audio, const DiarizationResult& truth,
                                         const std::map<std::string, int>& speaker_labels,
                                         const ModelConfig& cfg, const BlockPlan& plan,
                                         const FeatureOptions& fo) {
  if (fo.num_mels != cfg.feature_dim)
    throw std::invalid_argument("examples: feature bins (" + std::to_string(fo.num_mels) +
                                ") do not match the model (" + std::to_string(cfg.feature_dim) +
                                ")");
  const std::vector<std::string> order = speakers_in_order(truth);
  if (order.empty()) throw std::invalid_argument("examples: conversation has no speech");
  std::vector<int> labels;
  labels.reserve(order.size());
  for (const std::string& speaker : order) {
    auto it = speaker_labels.find(speaker);
    if (it == speaker_labels.end())
      throw std::invalid_argument("examples: no table label for speaker '" + speaker + "'");
    labels.push_back(it->second);
  }

  const double out_period = fo.frame_shift * cfg.extractor_time_stride;
  std::vector<TrainExample> out;
  for (const FeatureBlock& block : feature_blocks(audio, plan, fo)) {
    TrainExample ex;
    ex.channels = block.features.channels;
    ex.labels = labels;
    const int out_frames = cfg.output_frames(block.features.frames());
    const DiarizationResult cropped =
        crop_result(truth, block.start_time, block.start_time + plan.block_length);
    ex.activity =
        activity_from_segments(cropped, out_period, out_frames, order).values;
    out.push_back(std::move(ex));
  }
  return out;
}

Matrix clip_features(const Audio& audio, const FeatureOptions& fo) {
  const Audio normalized = fo.normalize_waveform ? peak_normalize(audio) : audio;
  FeatureSequence f = logmel(normalized, fo);
  if (fo.normalize_features) f = normalize_block(f);
  return f.channels.at(0);
}

Parameters pretrain_extractor(const std::vector<LabeledFeatures>& train_set, int num_classes,
                              const ModelConfig& cfg, const TrainConfig& tc,
                              std::ostream* log, std::vector<StepRecord>* history) {
  tc.validate();
  if (num_classes < 2)
    throw std::invalid_argument("pretraining needs at least 2 classes, got " +
                                std::to_string(num_classes));
  if (train_set.empty()) throw std::invalid_argument("pretraining needs a nonempty clip set");
  for (const LabeledFeatures& clip : train_set) {
    if (clip.features.cols() != cfg.feature_dim)
      throw std::invalid_argument("pretraining: clip feature bins do not match the model");
    if (clip.label < 0 || clip.label >= num_classes)
      throw std::invalid_argument("pretraining: label " + std::to_string(clip.label) +
                                  " outside [0, " + std::to_string(num_classes) + ")");
  }

  Parameters params = init_parameters(cfg, tc.seed);
  init_missing(params, pretrain_head_shapes(cfg, num_classes), tc.seed);
  AdamW opt(tc);
  Rng rng(mix_seed(tc.seed, hash_string("pretrain")));

  const bool full_batch = tc.batch_size >= static_cast<int>(train_set.size());
  const int batch = full_batch ? static_cast<int>(train_set.size()) : tc.batch_size;

  for (int step = 1; step <= tc.max_steps; ++step) {
    ad::Tape tape;
    Binder bind(tape, params, {});
    std::vector<ad::Var> embeddings;
    std::vector<int> labels;
    for (int i = 0; i < batch; ++i) {
      const LabeledFeatures& clip =
          full_batch
              ? train_set[static_cast<size_t>(i)]
              : train_set[static_cast<size_t>(rng.uniform_int(static_cast<int>(train_set.size())))];
      ad::Var frames = extract_channel_graph(bind, cfg, tape.constant(clip.features));
      embeddings.push_back(pretrain_embed_graph(bind, cfg, frames));
      labels.push_back(clip.label);
    }
    ad::Var batch = ad::interleave_channels(tape, embeddings);
    ad::Var loss = ad::arcface_loss(tape, batch, bind("pretrain.table"), labels,
                                    tc.arcface.scale, tc.arcface.margin);
    StepRecord rec;
    rec.step = step;
    rec.lr = tc.learning_rate;
    rec.arc = tape.value(loss)(0, 0);
    rec.total = rec.arc;
    if (!std::isfinite(rec.total))
      throw std::runtime_error("pretraining diverged: non-finite loss at step " +
                               std::to_string(step));
    tape.backward(loss);
    std::map<std::string, Matrix> grads;
    for (const auto& [name, var] : bind.bound())
      if (tape.requires_grad(var)) grads[name] = tape.grad(var);
    opt.step(params, grads, tc.learning_rate);
    if (log)
      *log << "step=" << step << " lr=" << rec.lr << " bce=" << rec.bce << " arc=" << rec.arc
           << " total=" << rec.total << "\n";
    if (history) history->push_back(rec);
  }
  return params;
}

double pretrain_accuracy(const Parameters& params, const std::vector<LabeledFeatures>& eval_set) {
  if (eval_set.empty()) throw std::invalid_argument("pretraining: empty evaluation set");
  const Matrix& table = params.at("pretrain.table");
  Matrix classes = table;
  for (int i = 0; i < classes.rows(); ++i) {
    const double norm = classes.row(i).norm();
    if (norm < 1e-12) throw std::runtime_error("pretraining: zero-norm class row");
    classes.row(i) /= norm;
  }
  int correct = 0;
  for (const LabeledFeatures& clip : eval_set) {
    ad::Tape tape;
    Binder bind(tape, params, {""});
    ad::Var frames = extract_channel_graph(bind, params.config, tape.constant(clip.features));
    const Matrix emb = tape.value(pretrain_embed_graph(bind, params.config, frames));
    const double norm = emb.row(0).norm();
    if (norm < 1e-12) throw std::runtime_error("pretraining: zero-norm clip embedding");
    Eigen::Index best = 0;
    (classes * emb.row(0).transpose() / norm).col(0).maxCoeff(&best);
    if (static_cast<int>(best) == clip.label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(eval_set.size());
}

int copy_tensors(const Parameters& src, Parameters& dst, const std::string& prefix) {
  int copied = 0;
  for (const auto& [name, tensor] : src.tensors) {
    if (!starts_with(name, prefix)) continue;
    auto it = dst.tensors.find(name);
    if (it != dst.tensors.end() &&
        (it->second.rows() != tensor.rows() || it->second.cols() != tensor.cols()))
      throw std::invalid_argument("copy: tensor '" + name + "' has conflicting shapes");
    dst.tensors[name] = tensor;
    ++copied;
  }
  return copied;
}

}  // namespace snd
