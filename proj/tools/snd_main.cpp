#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "snd/evaluate.hpp"
#include "snd/features.hpp"
#include "snd/infer.hpp"
#include "snd/kvconfig.hpp"
#include "snd/model.hpp"
#include "snd/rttm.hpp"
#include "snd/simulate.hpp"
#include "snd/train.hpp"
#include "snd/types.hpp"
#include "snd/wav.hpp"

namespace fs = std::filesystem;
using namespace snd;

namespace {

// Input problems exit with status 2; everything else nonzero is a runtime
// failure (status 1).
struct CliError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Mirrors a log stream onto stdout and a file.
class TeeBuf : public std::streambuf {
 public:
  TeeBuf(std::streambuf* a, std::streambuf* b) : a_(a), b_(b) {}

 protected:
  int overflow(int c) override {
    if (c == traits_type::eof()) return traits_type::not_eof(c);
    const int ra = a_->sputc(static_cast<char>(c));
    const int rb = b_->sputc(static_cast<char>(c));
    return (ra == traits_type::eof() || rb == traits_type::eof()) ? traits_type::eof() : c;
  }
  int sync() override { return (a_->pubsync() == 0 && b_->pubsync() == 0) ? 0 : -1; }

 private:
  std::streambuf* a_;
  std::streambuf* b_;
};

// ----- configuration -----

KvConfig default_config() {
  KvConfig c;
  c.set("model.feature_dim", "80");
  c.set("model.widths", "8,16,32,64");
  c.set("model.time_stride", "1");
  c.set("model.frontend_dim", "64");
  c.set("model.attention_dim", "64");
  c.set("model.heads", "4");
  c.set("model.ff_dim", "128");
  c.set("model.conv_kernel", "15");
  c.set("model.ch_attn_blocks", "0");
  c.set("model.encoder_blocks", "2");
  c.set("model.decoder_blocks", "2");
  c.set("model.embedding_dim", "32");
  c.set("model.capacity", "8");
  c.set("model.table_size", "64");

  c.set("features.frame_length", "0.025");
  c.set("features.frame_shift", "0.010");
  c.set("features.normalize_waveform", "true");
  c.set("features.normalize_features", "true");

  c.set("plan.block_length", "8.0");
  c.set("plan.block_shift", "2.0");

  c.set("sim.conversations", "8");
  c.set("sim.duration", "60.0");
  c.set("sim.min_speakers", "2");
  c.set("sim.max_speakers", "4");
  c.set("sim.overlap", "0.2");
  c.set("sim.sample_rate", "16000");
  c.set("sim.seed", "1");
  c.set("sim.voice_seed", "7");
  c.set("sim.voice_pool", "32");
  c.set("sim.channels", "1");
  c.set("sim.prefix", "conv");
  c.set("sim.snr_lo", "inf");
  c.set("sim.snr_hi", "inf");
  c.set("sim.gain_lo", "1.0");
  c.set("sim.gain_hi", "1.0");
  c.set("sim.delay_lo", "0");
  c.set("sim.delay_hi", "0");

  c.set("clips.voices", "32");
  c.set("clips.per_voice", "12");
  c.set("clips.duration", "3.0");
  c.set("clips.sample_rate", "16000");
  c.set("clips.seed", "1");
  c.set("clips.voice_seed", "7");

  c.set("pretrain.steps", "300");
  c.set("pretrain.lr", "0.001");
  c.set("pretrain.batch", "8");
  c.set("pretrain.seed", "1");

  c.set("train.steps", "0");          // 0: keep the stage default
  c.set("train.lr", "0");             // 0: keep the stage default
  c.set("train.sim_fraction", "-1");  // negative: keep the stage default
  c.set("train.batch", "2");
  c.set("train.seed", "1");
  c.set("train.shuffle", "true");
  c.set("train.distractor_prob", "0.5");
  c.set("train.arc_scale", "32");
  c.set("train.arc_margin", "0.2");
  c.set("train.weight_decay", "0.01");

  c.set("infer.threshold", "0.5");
  c.set("infer.median_frames", "11");
  c.set("infer.kmeans_iters", "50");
  c.set("infer.min_segment", "0.0");
  c.set("infer.boot_window", "1.0");
  c.set("infer.boot_hop", "0.5");
  c.set("infer.boot_min_window", "0.25");
  c.set("infer.boot_merge", "0.6");
  return c;
}

// defaults < file < --set overrides; unknown keys are input errors.
KvConfig resolve_config(const std::string& file, const std::vector<std::string>& sets) {
  KvConfig cfg = default_config();
  const auto check_known = [&cfg](const KvConfig& layer, const std::string& where) {
    for (const auto& [key, value] : layer.entries()) {
      (void)value;
      if (!cfg.has(key)) throw CliError("unknown config key '" + key + "' " + where);
    }
  };
  if (!file.empty()) {
    KvConfig layer = KvConfig::from_file(file);
    check_known(layer, "in " + file);
    cfg.merge(layer);
  }
  for (const std::string& s : sets) {
    KvConfig layer;
    layer.set_assignment(s);
    check_known(layer, "from --set");
    cfg.merge(layer);
  }
  return cfg;
}

ModelConfig model_from(const KvConfig& c) {
  ModelConfig m;
  m.feature_dim = c.get_int("model.feature_dim", m.feature_dim);
  m.extractor_widths = c.get_ints("model.widths", m.extractor_widths);
  m.extractor_time_stride = c.get_int("model.time_stride", m.extractor_time_stride);
  m.frontend_dim = c.get_int("model.frontend_dim", m.frontend_dim);
  m.attention_dim = c.get_int("model.attention_dim", m.attention_dim);
  m.heads = c.get_int("model.heads", m.heads);
  m.ff_dim = c.get_int("model.ff_dim", m.ff_dim);
  m.conv_kernel = c.get_int("model.conv_kernel", m.conv_kernel);
  m.ch_attn_blocks = c.get_int("model.ch_attn_blocks", m.ch_attn_blocks);
  m.encoder_blocks = c.get_int("model.encoder_blocks", m.encoder_blocks);
  m.decoder_blocks = c.get_int("model.decoder_blocks", m.decoder_blocks);
  m.embedding_dim = c.get_int("model.embedding_dim", m.embedding_dim);
  m.capacity = c.get_int("model.capacity", m.capacity);
  m.table_size = c.get_int("model.table_size", m.table_size);
  return m;
}

FeatureOptions features_from(const KvConfig& c, int num_mels) {
  FeatureOptions o;
  o.num_mels = num_mels;
  o.frame_length = c.get_double("features.frame_length", o.frame_length);
  o.frame_shift = c.get_double("features.frame_shift", o.frame_shift);
  o.normalize_waveform = c.get_bool("features.normalize_waveform", o.normalize_waveform);
  o.normalize_features = c.get_bool("features.normalize_features", o.normalize_features);
  return o;
}

BlockPlan plan_from(const KvConfig& c) {
  BlockPlan p;
  p.block_length = c.get_double("plan.block_length", p.block_length);
  p.block_shift = c.get_double("plan.block_shift", p.block_shift);
  p.frame_period = c.get_double("features.frame_shift", p.frame_period);
  return p;
}

PipelineConfig pipeline_from(const KvConfig& c, int num_mels) {
  PipelineConfig p;
  p.plan = plan_from(c);
  p.features = features_from(c, num_mels);
  p.binarize_threshold = c.get_double("infer.threshold", p.binarize_threshold);
  p.median_filter_frames = c.get_int("infer.median_frames", p.median_filter_frames);
  p.kmeans_max_iters = c.get_int("infer.kmeans_iters", p.kmeans_max_iters);
  p.min_segment = c.get_double("infer.min_segment", p.min_segment);
  p.boot_window = c.get_double("infer.boot_window", p.boot_window);
  p.boot_hop = c.get_double("infer.boot_hop", p.boot_hop);
  p.boot_min_window = c.get_double("infer.boot_min_window", p.boot_min_window);
  p.boot_merge_threshold = c.get_double("infer.boot_merge", p.boot_merge_threshold);
  return p;
}

// One value broadcasts to every channel; otherwise one value per channel.
template <typename T>
T per_channel(const std::vector<T>& values, size_t channel, const std::string& key) {
  if (values.size() == 1) return values[0];
  if (channel < values.size()) return values[channel];
  throw CliError("config key '" + key + "' needs one value or one per channel");
}

CorpusOptions corpus_from(const KvConfig& c) {
  CorpusOptions o;
  o.num_conversations = c.get_int("sim.conversations", o.num_conversations);
  o.duration = c.get_double("sim.duration", o.duration);
  o.min_speakers = c.get_int("sim.min_speakers", o.min_speakers);
  o.max_speakers = c.get_int("sim.max_speakers", o.max_speakers);
  o.overlap_ratio = c.get_double("sim.overlap", o.overlap_ratio);
  o.sample_rate = c.get_int("sim.sample_rate", o.sample_rate);
  o.seed = c.get_u64("sim.seed", o.seed);
  o.voice_seed = c.get_u64("sim.voice_seed", o.voice_seed);
  o.voice_pool = c.get_int("sim.voice_pool", o.voice_pool);
  o.prefix = c.get("sim.prefix", o.prefix);

  const int channels = c.get_int("sim.channels", 1);
  if (channels < 1) throw CliError("sim.channels must be at least 1");
  const auto snr_lo = c.get_doubles("sim.snr_lo", {});
  const auto snr_hi = c.get_doubles("sim.snr_hi", {});
  const auto gain_lo = c.get_doubles("sim.gain_lo", {});
  const auto gain_hi = c.get_doubles("sim.gain_hi", {});
  const auto delay_lo = c.get_ints("sim.delay_lo", {});
  const auto delay_hi = c.get_ints("sim.delay_hi", {});
  for (size_t ch = 0; ch < static_cast<size_t>(channels); ++ch) {
    ChannelProfile p;
    p.snr_lo = per_channel(snr_lo, ch, "sim.snr_lo");
    p.snr_hi = per_channel(snr_hi, ch, "sim.snr_hi");
    p.gain_lo = per_channel(gain_lo, ch, "sim.gain_lo");
    p.gain_hi = per_channel(gain_hi, ch, "sim.gain_hi");
    p.delay_lo = per_channel(delay_lo, ch, "sim.delay_lo");
    p.delay_hi = per_channel(delay_hi, ch, "sim.delay_hi");
    o.channels.push_back(p);
  }
  return o;
}

ClipOptions clips_from(const KvConfig& c) {
  ClipOptions o;
  o.num_voices = c.get_int("clips.voices", o.num_voices);
  o.clips_per_voice = c.get_int("clips.per_voice", o.clips_per_voice);
  o.clip_duration = c.get_double("clips.duration", o.clip_duration);
  o.sample_rate = c.get_int("clips.sample_rate", o.sample_rate);
  o.seed = c.get_u64("clips.seed", o.seed);
  o.voice_seed = c.get_u64("clips.voice_seed", o.voice_seed);
  return o;
}

TrainConfig traincfg_from(const KvConfig& c) {
  TrainConfig tc;
  tc.batch_size = c.get_int("train.batch", tc.batch_size);
  tc.seed = c.get_u64("train.seed", tc.seed);
  tc.shuffle_speakers = c.get_bool("train.shuffle", tc.shuffle_speakers);
  tc.distractor_padding_prob = c.get_double("train.distractor_prob", tc.distractor_padding_prob);
  tc.arcface.scale = c.get_double("train.arc_scale", tc.arcface.scale);
  tc.arcface.margin = c.get_double("train.arc_margin", tc.arcface.margin);
  tc.weight_decay = c.get_double("train.weight_decay", tc.weight_decay);
  return tc;
}

std::string output_dir(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("SND_OUTPUT_ROOT"); env && *env) return env;
  return ".";
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw CliError("cannot create output directory '" + dir + "': " + ec.message());
}

// Manifest paths may be absolute from another machine; fall back to siblings
// of the manifest itself.
std::string resolve_path(const std::string& stored, const std::string& dir) {
  if (fs::exists(stored)) return stored;
  const fs::path local = fs::path(dir) / fs::path(stored).filename();
  if (fs::exists(local)) return local.string();
  throw CliError("cannot find corpus file '" + stored + "'");
}

// ----- simulate -----

int cmd_simulate(const KvConfig& cfg, const std::string& out, bool clips) {
  ensure_dir(out);
  if (clips) {
    const ClipOptions opt = clips_from(cfg);
    const CorpusSummary s = write_clips(opt, out);
    std::cout << "wrote " << s.num_conversations << " clips for " << s.voice_pool
              << " voices to " << s.manifest_path << "\n";
    return 0;
  }
  const CorpusOptions opt = corpus_from(cfg);
  const CorpusSummary s = write_corpus(opt, out);
  std::cout.setf(std::ios::fixed);
  std::cout.precision(3);
  std::cout << "wrote " << s.num_conversations << " conversations (" << s.total_hours
            << " h, voice pool " << s.voice_pool << ", mean overlap " << s.mean_overlap
            << ") to " << s.manifest_path << "\n";
  return 0;
}

// ----- pretrain -----

std::vector<LabeledFeatures> load_clip_features(const std::string& dir, const FeatureOptions& fo,
                                                int* num_classes) {
  const std::string manifest = (fs::path(dir) / "clips.jsonl").string();
  if (!fs::exists(manifest)) throw CliError("no clip manifest at '" + manifest + "'");
  const auto entries = load_clip_manifest(manifest);
  if (entries.empty()) throw CliError("the clip manifest is empty");
  std::vector<LabeledFeatures> set;
  int max_label = 0;
  for (const ClipManifestEntry& e : entries) {
    const Audio audio = read_wav(resolve_path(e.audio_path, dir));
    set.push_back({clip_features(audio, fo), e.voice_index});
    max_label = std::max(max_label, e.voice_index);
  }
  *num_classes = max_label + 1;
  return set;
}

int cmd_pretrain(const KvConfig& cfg, const std::string& clips_dir, const std::string& out) {
  ensure_dir(out);
  ModelConfig mc = model_from(cfg);
  mc.validate();
  const FeatureOptions fo = features_from(cfg, mc.feature_dim);

  int num_classes = 0;
  const auto train_set = load_clip_features(clips_dir, fo, &num_classes);

  TrainConfig tc = traincfg_from(cfg);
  tc.learning_rate = cfg.get_double("pretrain.lr", 1e-3);
  tc.max_steps = cfg.get_int("pretrain.steps", 300);
  tc.batch_size = cfg.get_int("pretrain.batch", 8);
  tc.seed = cfg.get_u64("pretrain.seed", 1);

  const std::string log_path = (fs::path(out) / "pretrain.log").string();
  std::ofstream log_file(log_path);
  TeeBuf tee(std::cout.rdbuf(), log_file.rdbuf());
  std::ostream log(&tee);

  const Parameters params = pretrain_extractor(train_set, num_classes, mc, tc, &log);
  const double acc = pretrain_accuracy(params, train_set);

  const std::string ckpt = (fs::path(out) / "pretrain.ckpt").string();
  save_checkpoint(params, ckpt,
                  {{"stage", "pretrain"}, {"train_accuracy", std::to_string(acc)}});
  std::cout.setf(std::ios::fixed);
  std::cout.precision(4);
  std::cout << "pretrain done: train accuracy " << acc << " over " << train_set.size()
            << " clips; wrote " << ckpt << "\n";
  return 0;
}

// ----- train -----

struct LoadedConversation {
  Audio audio;
  DiarizationResult truth;
};

std::vector<LoadedConversation> load_corpus(const std::string& dir) {
  const std::string manifest = (fs::path(dir) / "manifest.jsonl").string();
  if (!fs::exists(manifest)) throw CliError("no corpus manifest at '" + manifest + "'");
  std::vector<LoadedConversation> out;
  for (const ManifestEntry& e : load_manifest(manifest)) {
    LoadedConversation lc;
    lc.audio = read_wav(resolve_path(e.audio_path, dir));
    lc.truth = read_rttm_file(resolve_path(e.rttm_path, dir));
    out.push_back(std::move(lc));
  }
  if (out.empty()) throw CliError("the corpus manifest at '" + manifest + "' is empty");
  return out;
}

// Table rows are assigned to the sorted global speaker names so the mapping
// depends only on the data, not on load order.
std::map<std::string, int> assign_table_rows(const std::vector<LoadedConversation>& a,
                                             const std::vector<LoadedConversation>& b,
                                             int table_size) {
  std::set<std::string> names;
  for (const auto* corpus : {&a, &b})
    for (const LoadedConversation& lc : *corpus)
      for (const Segment& s : lc.truth.segments) names.insert(s.speaker);
  if (static_cast<int>(names.size()) > table_size)
    throw CliError("the corpus has " + std::to_string(names.size()) +
                   " speakers but model.table_size is " + std::to_string(table_size));
  std::map<std::string, int> rows;
  int next = 0;
  for (const std::string& n : names) rows[n] = next++;
  return rows;
}

std::vector<TrainExample> corpus_examples(const std::vector<LoadedConversation>& corpus,
                                          const std::map<std::string, int>& rows,
                                          const ModelConfig& mc, const BlockPlan& plan,
                                          const FeatureOptions& fo) {
  std::vector<TrainExample> out;
  for (const LoadedConversation& lc : corpus) {
    auto ex = build_examples(lc.audio, lc.truth, rows, mc, plan, fo);
    out.insert(out.end(), std::make_move_iterator(ex.begin()), std::make_move_iterator(ex.end()));
  }
  return out;
}

int cmd_train(const KvConfig& cfg, const std::string& stage_name, const std::string& init_path,
              const std::string& resume_path, const std::string& sim_dir,
              const std::string& real_dir, const std::string& out) {
  ensure_dir(out);
  StageSpec stage;
  try {
    stage = stage_defaults(stage_name);
  } catch (const std::invalid_argument& e) {
    throw CliError(e.what());
  }
  if (const int steps = cfg.get_int("train.steps", 0); steps > 0) stage.steps = steps;
  if (const double lr = cfg.get_double("train.lr", 0.0); lr > 0.0) stage.learning_rate = lr;
  if (const double f = cfg.get_double("train.sim_fraction", -1.0); f >= 0.0)
    stage.sim_fraction = f;

  TrainConfig tc = traincfg_from(cfg);
  tc.learning_rate = stage.learning_rate;
  tc.max_steps = stage.steps;

  Parameters params;
  if (!resume_path.empty()) {
    // Weight-only restart: optimizer state is not serialized.
    params = load_checkpoint(resume_path).params;
  } else if (stage_name == "s2snd-1") {
    if (init_path.empty())
      throw CliError("stage s2snd-1 needs --init pointing at the extractor pretraining checkpoint");
    ModelConfig mc = model_from(cfg);
    mc.ch_attn_blocks = 0;  // the single-channel stages have no fusion module
    mc.validate();
    params = init_parameters(mc, tc.seed);
    const Checkpoint ck = load_checkpoint(init_path);
    if (copy_tensors(ck.params, params, "extractor.") == 0)
      throw CliError("the --init checkpoint has no extractor tensors");
  } else if (stage_name == "mc-1") {
    if (init_path.empty())
      throw CliError("stage mc-1 requires an S2SND checkpoint (--init with a trained s2snd stage)");
    params = load_checkpoint(init_path).params;
    if (params.config.ch_attn_blocks == 0) {
      const int blocks = cfg.get_int("model.ch_attn_blocks", 0);
      if (blocks < 1)
        throw CliError("stage mc-1 adds channel attention; set model.ch_attn_blocks >= 1");
      params.config.ch_attn_blocks = blocks;
      init_missing(params, expected_shapes(params.config), tc.seed);
    }
  } else {
    if (init_path.empty())
      throw CliError("stage " + stage_name + " continues from an earlier checkpoint; pass --init");
    params = load_checkpoint(init_path).params;
    if ((stage_name == "mc-2") && params.config.ch_attn_blocks == 0)
      throw CliError("stage mc-2 needs a multi-channel checkpoint (run mc-1 first)");
  }
  try {
    (void)Network(params);  // validates completeness and shapes up front
  } catch (const std::exception& e) {
    throw CliError(std::string("checkpoint does not form a valid model: ") + e.what());
  }

  if (sim_dir.empty()) throw CliError("--sim-dir is required");
  const FeatureOptions fo = features_from(cfg, params.config.feature_dim);
  const BlockPlan plan = plan_from(cfg);
  const auto sim_corpus = load_corpus(sim_dir);
  const auto real_corpus = real_dir.empty() ? std::vector<LoadedConversation>{} : load_corpus(real_dir);
  if (stage.sim_fraction < 1.0 && real_corpus.empty()) {
    std::ostringstream msg;
    msg << "stage " << stage_name << " mixes in real data (sim fraction " << stage.sim_fraction
        << "); pass --real-dir";
    throw CliError(msg.str());
  }

  const auto rows = assign_table_rows(sim_corpus, real_corpus, params.config.table_size);
  const auto sim_examples = corpus_examples(sim_corpus, rows, params.config, plan, fo);
  const auto real_examples = corpus_examples(real_corpus, rows, params.config, plan, fo);
  DataMix mix{&sim_examples, &real_examples};

  const std::string log_path = (fs::path(out) / ("train_" + stage_name + ".log")).string();
  std::ofstream log_file(log_path);
  TeeBuf tee(std::cout.rdbuf(), log_file.rdbuf());
  std::ostream log(&tee);
  log << "stage " << stage_name << ": steps " << stage.steps << " lr " << stage.learning_rate
      << " sim_fraction " << stage.sim_fraction << " examples " << sim_examples.size() << "+"
      << real_examples.size() << "\n";

  const auto records = train_stage(params, stage, mix, tc, &log);

  const std::string ckpt = (fs::path(out) / (stage_name + ".ckpt")).string();
  std::map<std::string, std::string> meta = {{"stage", stage_name},
                                             {"steps", std::to_string(stage.steps)}};
  if (!records.empty()) meta["final_loss"] = std::to_string(records.back().total);
  save_checkpoint(params, ckpt, meta);
  std::cout << "stage " << stage_name << " done; wrote " << ckpt << "\n";
  return 0;
}

// ----- infer -----

int cmd_infer(const KvConfig& cfg, const std::string& model_path, const std::string& first_path,
              const std::string& wav_path, const std::string& rttm_path,
              const std::string& init_rttm, int block_shift, bool no_clustering,
              bool single_channel, const std::string& scores_path, const std::string& out) {
  const Network model(load_checkpoint(model_path).params);
  std::optional<Network> first;
  if (!first_path.empty()) first.emplace(load_checkpoint(first_path).params);
  const Network& first_pass = first ? *first : model;

  Audio audio = read_wav(wav_path);
  if (audio.channels.empty() || audio.frames() == 0)
    throw CliError("audio file '" + wav_path + "' is empty");
  if (single_channel) audio.channels.resize(1);
  if (model.config().ch_attn_blocks == 0 && audio.channel_count() > 1)
    throw CliError("the model has no channel fusion module but the audio has " +
                   std::to_string(audio.channel_count()) +
                   " channels; pass --single-channel or a multi-channel checkpoint");

  PipelineConfig pc = pipeline_from(cfg, model.config().feature_dim);
  if (block_shift > 0) {
    if (block_shift != 2 && block_shift != 8) throw CliError("--block-shift must be 2 or 8");
    pc.plan.block_shift = block_shift;
  }
  if (no_clustering) pc.use_clustering = false;

  std::optional<DiarizationResult> init;
  if (!init_rttm.empty()) {
    init = read_rttm_file(init_rttm);
    if (init->empty()) throw CliError("initial RTTM '" + init_rttm + "' has no segments");
  }

  ActivityMatrix fused;
  DiarizationResult result =
      run_pipeline(audio, first_pass, model, pc, init ? &*init : nullptr,
                   scores_path.empty() ? nullptr : &fused);
  const std::string stem = fs::path(wav_path).stem().string();
  if (result.recording_id.empty()) result.recording_id = stem;

  ensure_dir(out);
  const std::string target =
      rttm_path.empty() ? (fs::path(out) / (stem + ".rttm")).string() : rttm_path;
  write_rttm_file(result, target);
  if (!scores_path.empty()) write_score_matrix(fused.values, scores_path);

  std::cout.setf(std::ios::fixed);
  std::cout.precision(2);
  std::cout << "wrote " << target << ": " << speakers_in_order(result).size() << " speakers, "
            << result.total_speech() << " s speech\n";
  return 0;
}

// ----- eval -----

std::map<std::string, DiarizationResult> load_rttm_side(const std::string& path) {
  std::map<std::string, DiarizationResult> out;
  const auto merge_file = [&out](const std::string& file) {
    std::ifstream f(file);
    if (!f) throw CliError("cannot open RTTM file '" + file + "'");
    std::ostringstream text;
    text << f.rdbuf();
    for (auto& [id, result] : parse_rttm_collection(text.str()))
      if (!out.emplace(id, std::move(result)).second)
        throw CliError("recording '" + id + "' appears twice under '" + file + "'");
  };
  if (fs::is_directory(path)) {
    std::vector<std::string> files;
    for (const auto& entry : fs::directory_iterator(path))
      if (entry.path().extension() == ".rttm") files.push_back(entry.path().string());
    std::sort(files.begin(), files.end());
    for (const std::string& f : files) merge_file(f);
  } else if (fs::exists(path)) {
    merge_file(path);
  } else {
    throw CliError("no RTTM input at '" + path + "'");
  }
  return out;
}

int cmd_eval(const std::string& ref_path, const std::string& hyp_path, double frame_period) {
  const auto ref = load_rttm_side(ref_path);
  const auto hyp = load_rttm_side(hyp_path);
  if (ref.empty()) throw CliError("no reference recordings found under '" + ref_path + "'");

  std::vector<std::pair<DiarizationResult, DiarizationResult>> pairs;
  for (const auto& [id, r] : ref) {
    const auto it = hyp.find(id);
    if (it == hyp.end()) throw CliError("the hypothesis is missing recording '" + id + "'");
    pairs.emplace_back(r, it->second);
  }
  for (const auto& [id, h] : hyp) {
    (void)h;
    if (!ref.count(id))
      std::cerr << "warning: hypothesis recording '" << id << "' has no reference; ignored\n";
  }

  DerReport total;
  try {
    std::cout.setf(std::ios::fixed);
    std::cout.precision(2);
    size_t i = 0;
    for (const auto& [id, r] : ref) {
      std::cout << id << ": " << format_der(score_der(r, pairs[i].second, frame_period)) << "\n";
      ++i;
    }
    total = score_corpus(pairs, frame_period);
  } catch (const std::runtime_error& e) {
    throw CliError(e.what());
  }
  std::cout << "ALL: " << format_der(total) << "\n";
  std::cout << "RESULT der=" << total.der * 100.0 << " miss=" << total.missed * 100.0
            << " fa=" << total.false_alarm * 100.0 << " conf=" << total.confusion * 100.0 << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-channel sequence-to-sequence neural diarization toolkit"};
  app.require_subcommand(1);
  app.fallthrough();  // global options may follow the subcommand name

  std::string config_file, out_flag;
  std::vector<std::string> sets;
  app.add_option("--config", config_file, "Flat key=value config file")
      ->check(CLI::ExistingFile);
  app.add_option("--set", sets, "Override one config key (key=value); repeatable");
  app.add_option("--out", out_flag, "Output directory (default: $SND_OUTPUT_ROOT or .)");

  auto* sim = app.add_subcommand("simulate", "Generate a synthetic corpus");
  bool clips = false;
  sim->add_flag("--clips", clips, "Write single-voice pretraining clips instead");

  auto* pre = app.add_subcommand("pretrain", "Train the extractor as a voice classifier");
  std::string clips_dir;
  pre->add_option("--clips-dir", clips_dir, "Directory holding clips.jsonl")->required();

  auto* trn = app.add_subcommand("train", "Run one stage of the training schedule");
  std::string stage, init_path, resume_path, sim_dir, real_dir;
  trn->add_option("--stage", stage, "s2snd-1|s2snd-2|s2snd-3|mc-1|mc-2|adapt")->required();
  trn->add_option("--init", init_path, "Checkpoint that seeds this stage");
  trn->add_option("--resume", resume_path, "Restart this stage from its own checkpoint");
  trn->add_option("--sim-dir", sim_dir, "Simulated corpus directory");
  trn->add_option("--real-dir", real_dir, "Real (adaptation) corpus directory");

  auto* inf = app.add_subcommand("infer", "Diarize one recording");
  std::string model_path, first_path, wav_path, rttm_path, init_rttm, scores_path;
  int block_shift = 0;
  bool no_clustering = false, single_channel = false;
  inf->add_option("--model", model_path, "Model checkpoint")->required();
  inf->add_option("--first-pass", first_path, "Checkpoint for the first pass (default: --model)");
  inf->add_option("--wav", wav_path, "Input recording")->required();
  inf->add_option("--rttm", rttm_path, "Output RTTM path (default: <out>/<stem>.rttm)");
  inf->add_option("--init-rttm", init_rttm, "Initial diarization; skips the first pass");
  inf->add_option("--block-shift", block_shift, "Block shift in seconds (2 or 8)");
  inf->add_flag("--no-clustering", no_clustering, "Enroll plain per-speaker means");
  inf->add_flag("--single-channel", single_channel, "Use channel 0 only");
  inf->add_option("--scores", scores_path, "Also dump the fused score matrix");

  auto* evl = app.add_subcommand("eval", "Score hypothesis RTTM against reference");
  std::string ref_path, hyp_path;
  double frame_period = 0.010;
  evl->add_option("--ref", ref_path, "Reference RTTM file or directory")->required();
  evl->add_option("--hyp", hyp_path, "Hypothesis RTTM file or directory")->required();
  evl->add_option("--frame-period", frame_period, "Scoring grid in seconds");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    const KvConfig cfg = resolve_config(config_file, sets);
    const std::string out = output_dir(out_flag);
    if (app.got_subcommand(sim)) return cmd_simulate(cfg, out, clips);
    if (app.got_subcommand(pre)) return cmd_pretrain(cfg, clips_dir, out);
    if (app.got_subcommand(trn))
      return cmd_train(cfg, stage, init_path, resume_path, sim_dir, real_dir, out);
    if (app.got_subcommand(inf))
      return cmd_infer(cfg, model_path, first_path, wav_path, rttm_path, init_rttm, block_shift,
                       no_clustering, single_channel, scores_path, out);
    if (app.got_subcommand(evl)) return cmd_eval(ref_path, hyp_path, frame_period);
    std::cerr << "no subcommand given\n";
    return 2;
  } catch (const CliError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
