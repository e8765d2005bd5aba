#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "doctest.h"
#include "helpers.hpp"
#include "snd/infer.hpp"
#include "snd/rttm.hpp"

using namespace snd;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.feature_dim = 16;
  c.extractor_widths = {2, 3};
  c.extractor_time_stride = 1;
  c.frontend_dim = 8;
  c.attention_dim = 8;
  c.heads = 2;
  c.ff_dim = 16;
  c.conv_kernel = 5;
  c.ch_attn_blocks = 0;
  c.encoder_blocks = 1;
  c.decoder_blocks = 1;
  c.embedding_dim = 6;
  c.capacity = 3;
  c.table_size = 10;
  return c;
}

Network tiny_net(int ch_attn_blocks = 0, uint64_t seed = 11) {
  ModelConfig c = tiny_config();
  c.ch_attn_blocks = ch_attn_blocks;
  return Network(init_parameters(c, seed));
}

PipelineConfig tiny_pipeline() {
  PipelineConfig cfg;
  cfg.plan = {2.0, 1.0, 0.010};
  cfg.features.num_mels = 16;
  return cfg;
}

// Silence plus sine bursts, one channel.
Audio burst_audio(double duration, const std::vector<std::tuple<double, double, double>>& bursts,
                  double noise = 0.0, uint64_t seed = 3) {
  Audio a;
  a.sample_rate = 16000;
  a.channels.assign(1, std::vector<Scalar>(static_cast<size_t>(duration * 16000), 0.0));
  Rng rng(seed);
  auto& x = a.channels[0];
  if (noise > 0.0)
    for (auto& s : x) s = noise * rng.normal();
  for (const auto& [t0, t1, freq] : bursts) {
    const auto lo = static_cast<size_t>(t0 * 16000);
    const auto hi = std::min(x.size(), static_cast<size_t>(t1 * 16000));
    for (size_t s = lo; s < hi; ++s)
      x[s] += 0.5 * std::sin(2.0 * M_PI * freq * static_cast<double>(s) / 16000.0);
  }
  return a;
}

BlockEmbedding make_emb(const std::string& speaker, std::initializer_list<double> values) {
  BlockEmbedding e;
  e.speaker = speaker;
  e.vector.resize(static_cast<Eigen::Index>(values.size()));
  Eigen::Index i = 0;
  for (const double v : values) e.vector[i++] = v;
  return e;
}

ActivityMatrix random_scores(Rng& rng, int rows, int cols, double fp = 0.010) {
  ActivityMatrix m;
  m.values = Matrix(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int t = 0; t < cols; ++t) m.values(r, t) = rng.uniform();
  m.kind = ActivityKind::Probability;
  m.frame_period = fp;
  return m;
}

}  // namespace

TEST_SUITE("infer") {

TEST_CASE("pipeline config validation") {
  PipelineConfig cfg = tiny_pipeline();
  CHECK_NOTHROW(cfg.validate());
  SUBCASE("threshold outside (0,1)") {
    cfg.binarize_threshold = 1.0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  }
  SUBCASE("even median filter") {
    cfg.median_filter_frames = 10;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  }
  SUBCASE("negative minimum segment") {
    cfg.min_segment = -0.1;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  }
  SUBCASE("bootstrap window shorter than its minimum") {
    cfg.boot_min_window = 2.0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  }
  SUBCASE("plan and features disagree on the frame grid") {
    cfg.features.frame_shift = 0.020;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  }
}

// ----- fusion -----

TEST_CASE("single covering block passes through") {
  Rng rng(101);
  const ActivityMatrix block = random_scores(rng, 3, 40);
  const BlockPlan plan{0.40, 0.40, 0.010};
  const ActivityMatrix fused = fuse_scores({block}, plan, 40);
  CHECK((fused.values - block.values).cwiseAbs().maxCoeff() == 0.0);
  CHECK(fused.kind == ActivityKind::Probability);
  CHECK(fused.frame_period == doctest::Approx(0.010));
}

TEST_CASE("two overlapping blocks average on the overlap") {
  ActivityMatrix a, b;
  a.values = Matrix::Constant(1, 4, 0.2);
  b.values = Matrix::Constant(1, 4, 0.8);
  a.kind = b.kind = ActivityKind::Probability;
  a.frame_period = b.frame_period = 0.010;
  const BlockPlan plan{0.04, 0.02, 0.010};
  const ActivityMatrix fused = fuse_scores({a, b}, plan, 6);
  REQUIRE(fused.values.cols() == 6);
  CHECK(fused.values(0, 0) == doctest::Approx(0.2));
  CHECK(fused.values(0, 1) == doctest::Approx(0.2));
  CHECK(fused.values(0, 2) == doctest::Approx(0.5));
  CHECK(fused.values(0, 3) == doctest::Approx(0.5));
  CHECK(fused.values(0, 4) == doctest::Approx(0.8));
  CHECK(fused.values(0, 5) == doctest::Approx(0.8));
}

TEST_CASE("fusion matches the frame-loop oracle") {
  Rng rng(102);
  const BlockPlan plan{0.80, 0.20, 0.010};
  const int cols = plan.length_frames();
  const int shift = plan.shift_frames();
  for (int trial = 0; trial < 10; ++trial) {
    const int nb = 1 + rng.uniform_int(6);
    const int rows = 1 + rng.uniform_int(4);
    std::vector<ActivityMatrix> blocks;
    for (int i = 0; i < nb; ++i) blocks.push_back(random_scores(rng, rows, cols));
    const int covered = (nb - 1) * shift + cols;
    const int total = covered - rng.uniform_int(std::min(covered, shift + 1));
    if (total < 1) continue;
    const ActivityMatrix fused = fuse_scores(blocks, plan, total);

    for (int g = 0; g < total; ++g)
      for (int r = 0; r < rows; ++r) {
        double sum = 0.0;
        int cnt = 0;
        for (int i = 0; i < nb; ++i) {
          const int local = g - i * shift;
          if (local >= 0 && local < cols) {
            sum += blocks[static_cast<size_t>(i)].values(r, local);
            ++cnt;
          }
        }
        REQUIRE(cnt > 0);
        CHECK(fused.values(r, g) == doctest::Approx(sum / cnt).epsilon(1e-9));
      }
  }
}

TEST_CASE("fusion discards the padded tail") {
  Rng rng(103);
  const BlockPlan plan{0.04, 0.02, 0.010};
  const ActivityMatrix a = random_scores(rng, 2, 4);
  const ActivityMatrix b = random_scores(rng, 2, 4);
  const ActivityMatrix fused = fuse_scores({a, b}, plan, 3);
  CHECK(fused.values.cols() == 3);
  CHECK(fused.values(0, 2) == doctest::Approx(0.5 * (a.values(0, 2) + b.values(0, 0))));
}

TEST_CASE("fusion input validation") {
  Rng rng(104);
  const BlockPlan plan{0.04, 0.02, 0.010};
  CHECK_THROWS_AS(fuse_scores({}, plan, 4), std::invalid_argument);

  const ActivityMatrix a = random_scores(rng, 2, 4);
  CHECK_THROWS_AS(fuse_scores({a}, plan, 5), std::invalid_argument);  // beyond coverage

  ActivityMatrix odd = random_scores(rng, 3, 4);
  CHECK_THROWS_AS(fuse_scores({a, odd}, plan, 4), std::invalid_argument);

  ActivityMatrix coarse = random_scores(rng, 2, 4, 0.030);
  CHECK_THROWS_AS(fuse_scores({coarse}, plan, 4), std::invalid_argument);  // shift not integral
}

// ----- binarization -----

TEST_CASE("all-zero scores give an empty result") {
  PipelineConfig cfg = tiny_pipeline();
  ActivityMatrix scores;
  scores.values = Matrix::Zero(2, 100);
  scores.kind = ActivityKind::Probability;
  CHECK(binarize(scores, cfg).empty());
}

TEST_CASE("one run becomes one segment with exact times") {
  PipelineConfig cfg = tiny_pipeline();
  ActivityMatrix scores;
  scores.values = Matrix::Zero(1, 300);
  scores.values.row(0).segment(100, 100).setOnes();
  scores.kind = ActivityKind::Probability;
  const DiarizationResult r = binarize(scores, cfg);
  REQUIRE(r.segments.size() == 1);
  CHECK(r.segments[0].speaker == "spk1");
  CHECK(r.segments[0].onset == doctest::Approx(1.0));
  CHECK(r.segments[0].duration == doctest::Approx(1.0));
}

TEST_CASE("median filter bridges sub-window gaps") {
  PipelineConfig cfg = tiny_pipeline();
  ActivityMatrix scores;
  scores.values = Matrix::Zero(1, 60);
  scores.values.row(0).segment(0, 20).setOnes();
  scores.values.row(0).segment(25, 20).setOnes();
  scores.kind = ActivityKind::Probability;
  const DiarizationResult r = binarize(scores, cfg);
  REQUIRE(r.segments.size() == 1);
  CHECK(r.segments[0].onset == doctest::Approx(0.0));
  CHECK(r.segments[0].duration == doctest::Approx(0.45));
}

TEST_CASE("minimum segment length drops short runs") {
  PipelineConfig cfg = tiny_pipeline();
  cfg.median_filter_frames = 1;
  cfg.min_segment = 0.1;
  ActivityMatrix scores;
  scores.values = Matrix::Zero(1, 100);
  scores.values.row(0).segment(10, 30).setOnes();
  scores.values.row(0).segment(60, 8).setOnes();
  scores.kind = ActivityKind::Probability;
  const DiarizationResult r = binarize(scores, cfg);
  REQUIRE(r.segments.size() == 1);
  CHECK(r.segments[0].onset == doctest::Approx(0.10));
  CHECK(r.segments[0].duration == doctest::Approx(0.30));
}

TEST_CASE("speaker names label the rows") {
  PipelineConfig cfg = tiny_pipeline();
  ActivityMatrix scores;
  scores.values = Matrix::Zero(2, 50);
  scores.values.row(1).segment(5, 20).setOnes();
  scores.kind = ActivityKind::Probability;
  const DiarizationResult r = binarize(scores, cfg, {"alice", "bob"});
  REQUIRE(r.segments.size() == 1);
  CHECK(r.segments[0].speaker == "bob");
  CHECK_THROWS_AS(binarize(scores, cfg, {"alice"}), std::invalid_argument);
}

TEST_CASE("binarize inverts rasterization for clean segments") {
  PipelineConfig cfg = tiny_pipeline();
  Rng rng(105);
  for (int trial = 0; trial < 50; ++trial) {
    DiarizationResult truth;
    const int speakers = 1 + rng.uniform_int(3);
    std::vector<std::string> order;
    for (int k = 0; k < speakers; ++k) {
      const std::string name = "spk" + std::to_string(k + 1);
      order.push_back(name);
      int t = 0;
      while (true) {
        const int gap = 11 + rng.uniform_int(40);
        const int dur = 11 + rng.uniform_int(70);
        if (t + gap + dur > 1000) break;
        truth.segments.push_back({name, (t + gap) * 0.010, dur * 0.010});
        t += gap + dur;
      }
    }
    if (truth.empty()) continue;

    ActivityMatrix acts = activity_from_segments(truth, 0.010, 1000, order);
    acts.kind = ActivityKind::Probability;
    const DiarizationResult back = binarize(acts, cfg, order);
    const DiarizationResult want = normalize_result(truth);
    REQUIRE(back.segments.size() == want.segments.size());
    for (size_t i = 0; i < want.segments.size(); ++i) {
      CHECK(back.segments[i].speaker == want.segments[i].speaker);
      CHECK(back.segments[i].onset == doctest::Approx(want.segments[i].onset).epsilon(1e-12));
      CHECK(back.segments[i].duration ==
            doctest::Approx(want.segments[i].duration).epsilon(1e-12));
    }
  }
}

// ----- clustering -----

TEST_CASE("separated clusters keep their initial means") {
  PipelineConfig cfg = tiny_pipeline();
  std::vector<BlockEmbedding> embs = {
      make_emb("a", {1.0, 0.0, 0.0, 0.0}), make_emb("a", {0.9, 0.1, 0.0, 0.0}),
      make_emb("b", {0.0, 0.0, 1.0, 0.0}), make_emb("b", {0.0, 0.0, 0.9, -0.1})};
  std::vector<double> objective;
  const EmbeddingSet out = cluster_embeddings(embs, {"a", "b"}, cfg, &objective);

  Matrix want(2, 4);
  want.row(0) = (embs[0].vector.normalized() + embs[1].vector.normalized()).normalized();
  want.row(1) = (embs[2].vector.normalized() + embs[3].vector.normalized()).normalized();
  CHECK((out.vectors - want).cwiseAbs().maxCoeff() <= 1e-15);
  REQUIRE(objective.size() >= 2);
  for (size_t i = 1; i < objective.size(); ++i) CHECK(objective[i] <= objective[i - 1] + 1e-12);
}

TEST_CASE("one speaker yields the normalized global mean") {
  PipelineConfig cfg = tiny_pipeline();
  std::vector<BlockEmbedding> embs = {make_emb("solo", {1.0, 0.0, 0.0}),
                                      make_emb("solo", {0.0, 1.0, 0.0}),
                                      make_emb("solo", {1.0, 1.0, 0.0})};
  const EmbeddingSet out = cluster_embeddings(embs, {"solo"}, cfg);
  Matrix want(1, 3);
  want.row(0) = (embs[0].vector.normalized() + embs[1].vector.normalized() +
                 embs[2].vector.normalized())
                    .normalized();
  REQUIRE(out.size() == 1);
  CHECK((out.vectors - want).cwiseAbs().maxCoeff() <= 1e-15);
}

TEST_CASE("a mislabeled outlier moves to the nearer centroid") {
  PipelineConfig cfg = tiny_pipeline();
  const double a80 = 80.0 * M_PI / 180.0;
  std::vector<BlockEmbedding> embs = {make_emb("a", {1.0, 0.0, 0.0}),
                                      make_emb("a", {std::cos(a80), std::sin(a80), 0.0}),
                                      make_emb("b", {0.0, 1.0, 0.0})};
  std::vector<double> objective;
  const EmbeddingSet out = cluster_embeddings(embs, {"a", "b"}, cfg, &objective);

  Matrix want(2, 3);
  want.row(0) << 1.0, 0.0, 0.0;
  want.row(1) = (embs[1].vector + embs[2].vector).normalized();
  CHECK((out.vectors - want).cwiseAbs().maxCoeff() <= 1e-12);
  REQUIRE(objective.size() >= 2);
  CHECK(objective.back() < objective.front());
}

TEST_CASE("an emptied cluster keeps its centroid and warns") {
  PipelineConfig cfg = tiny_pipeline();
  std::vector<BlockEmbedding> embs = {make_emb("a", {1.0, 0.0}), make_emb("a", {1.0, 0.0}),
                                      make_emb("b", {1.0, 0.0})};
  std::ostringstream warn;
  const EmbeddingSet out = cluster_embeddings(embs, {"a", "b"}, cfg, nullptr, &warn);
  REQUIRE(out.size() == 2);
  CHECK(out.vectors(0, 0) == doctest::Approx(1.0));
  CHECK(out.vectors(1, 0) == doctest::Approx(1.0));
  CHECK(warn.str().find("emptied") != std::string::npos);
  CHECK(warn.str().find("'b'") != std::string::npos);
}

TEST_CASE("clustering disabled returns the plain means") {
  PipelineConfig cfg = tiny_pipeline();
  cfg.use_clustering = false;
  const double a80 = 80.0 * M_PI / 180.0;
  std::vector<BlockEmbedding> embs = {make_emb("a", {1.0, 0.0, 0.0}),
                                      make_emb("a", {std::cos(a80), std::sin(a80), 0.0}),
                                      make_emb("b", {0.0, 1.0, 0.0})};
  const EmbeddingSet out = cluster_embeddings(embs, {"a", "b"}, cfg);
  Matrix want(2, 3);
  want.row(0) = (embs[0].vector + embs[1].vector).normalized();
  want.row(1) << 0.0, 1.0, 0.0;
  CHECK((out.vectors - want).cwiseAbs().maxCoeff() <= 1e-15);
}

TEST_CASE("clustering objective never increases on random data") {
  PipelineConfig cfg = tiny_pipeline();
  Rng rng(106);
  std::vector<BlockEmbedding> embs;
  const std::vector<std::string> speakers = {"a", "b", "c"};
  for (int i = 0; i < 40; ++i) {
    BlockEmbedding e;
    e.speaker = speakers[static_cast<size_t>(rng.uniform_int(3))];
    e.vector.resize(8);
    for (int d = 0; d < 8; ++d) e.vector[d] = rng.normal();
    embs.push_back(e);
  }
  for (const std::string& s : speakers) embs.push_back(make_emb(s, {1, 1, 1, 1, 1, 1, 1, 1}));
  std::vector<double> objective;
  std::ostringstream warn;
  cluster_embeddings(embs, speakers, cfg, &objective, &warn);
  REQUIRE(!objective.empty());
  for (size_t i = 1; i < objective.size(); ++i) CHECK(objective[i] <= objective[i - 1] + 1e-12);
}

TEST_CASE("clustering input validation") {
  PipelineConfig cfg = tiny_pipeline();
  std::vector<BlockEmbedding> embs = {make_emb("a", {1.0, 0.0})};
  CHECK_THROWS_WITH_AS(cluster_embeddings(embs, {"a", "b"}, cfg),
                       "cluster: speaker 'b' has no embedding vectors", std::invalid_argument);
  CHECK_THROWS_AS(cluster_embeddings(embs, {"ghost"}, cfg), std::invalid_argument);
  CHECK_THROWS_AS(cluster_embeddings({}, {"a"}, cfg), std::invalid_argument);
  CHECK_THROWS_AS(cluster_embeddings(embs, {}, cfg), std::invalid_argument);
}

// ----- block embeddings and detection -----

TEST_CASE("block embeddings follow the initial segments") {
  const Network net = tiny_net();
  const PipelineConfig cfg = tiny_pipeline();
  const Audio audio = burst_audio(4.0, {{0.0, 4.0, 330.0}}, 0.02);
  const auto blocks = feature_blocks(audio, cfg.plan, cfg.features);

  DiarizationResult init;
  init.segments = {{"alice", 0.2, 0.8}, {"bob", 2.5, 1.0}};

  const auto embs = extract_block_embeddings(blocks, init, net);
  int alice = 0, bob = 0;
  for (const BlockEmbedding& e : embs) {
    CHECK(e.vector.norm() == doctest::Approx(1.0).epsilon(1e-9));
    if (e.speaker == "alice") ++alice;
    if (e.speaker == "bob") ++bob;
  }
  CHECK(alice == 1);  // alice lives entirely in block 0
  CHECK(bob == 2);    // bob overlaps blocks 1 and 2
  CHECK(static_cast<int>(embs.size()) == alice + bob);
}

TEST_CASE("too many initial speakers is an explicit error") {
  const Network net = tiny_net();
  const PipelineConfig cfg = tiny_pipeline();
  const Audio audio = burst_audio(2.0, {}, 0.02);
  const auto blocks = feature_blocks(audio, cfg.plan, cfg.features);

  DiarizationResult init;
  for (int k = 0; k < 4; ++k)
    init.segments.push_back({"s" + std::to_string(k), 0.1 * k, 0.5});
  try {
    extract_block_embeddings(blocks, init, net);
    FAIL("expected an exception");
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    CHECK(msg.find("4") != std::string::npos);
    CHECK(msg.find("3") != std::string::npos);
  }
  CHECK_THROWS_AS(extract_block_embeddings(blocks, {}, net), std::invalid_argument);
}

TEST_CASE("blockwise detection pads the roster to capacity") {
  const Network net = tiny_net();
  const PipelineConfig cfg = tiny_pipeline();
  const Audio audio = burst_audio(3.0, {{0.0, 3.0, 330.0}}, 0.02);
  const auto blocks = feature_blocks(audio, cfg.plan, cfg.features);

  EmbeddingSet enrolled;
  enrolled.vectors = Matrix::Zero(2, 6);
  enrolled.vectors(0, 0) = 1.0;
  enrolled.vectors(1, 1) = 1.0;
  enrolled.valid = {true, true};

  const auto outs = detect_blockwise(blocks, enrolled, net);
  REQUIRE(outs.size() == blocks.size());
  for (const ActivityMatrix& o : outs) {
    CHECK(o.speakers() == 3);
    CHECK(o.frames() == 200);
    CHECK(o.kind == ActivityKind::Probability);
    CHECK(o.values.minCoeff() > 0.0);
    CHECK(o.values.maxCoeff() < 1.0);
  }

  const std::vector<FeatureBlock> twice = {blocks[0], blocks[0]};
  const auto pair = detect_blockwise(twice, enrolled, net);
  CHECK((pair[0].values - pair[1].values).cwiseAbs().maxCoeff() == 0.0);

  EmbeddingSet four;
  four.vectors = Matrix::Zero(4, 6);
  four.valid.assign(4, true);
  CHECK_THROWS_AS(detect_blockwise(blocks, four, net), std::invalid_argument);
  EmbeddingSet thin;
  thin.vectors = Matrix::Zero(2, 5);
  thin.valid.assign(2, true);
  CHECK_THROWS_AS(detect_blockwise(blocks, thin, net), std::invalid_argument);
}

// ----- bootstrap and full pipeline -----

TEST_CASE("bootstrap returns nothing for silence") {
  const Network net = tiny_net();
  const PipelineConfig cfg = tiny_pipeline();
  const Audio silence = burst_audio(3.0, {});
  CHECK(bootstrap_segments(silence, net, cfg).empty());

  Audio empty;
  CHECK_THROWS_AS(bootstrap_segments(empty, net, cfg), std::invalid_argument);
}

TEST_CASE("bootstrap covers the voiced regions") {
  const Network net = tiny_net();
  const PipelineConfig cfg = tiny_pipeline();
  const Audio audio = burst_audio(4.0, {{0.3, 1.3, 440.0}, {2.0, 3.2, 220.0}});
  const DiarizationResult init = bootstrap_segments(audio, net, cfg);

  REQUIRE(!init.empty());
  CHECK(init.total_speech() > 1.6);
  CHECK(init.total_speech() < 2.8);
  CHECK(crop_result(init, 1.5, 1.9).empty());       // the silent gap stays silent
  CHECK(!crop_result(init, 0.6, 1.0).empty());      // inside burst one
  CHECK(!crop_result(init, 2.4, 3.0).empty());      // inside burst two
  const auto speakers = speakers_in_order(init);
  CHECK(static_cast<int>(speakers.size()) <= net.config().capacity);
  CHECK(speakers[0] == "spk1");

  const DiarizationResult again = bootstrap_segments(audio, net, cfg);
  REQUIRE(again.segments.size() == init.segments.size());
  for (size_t i = 0; i < init.segments.size(); ++i) {
    CHECK(again.segments[i].speaker == init.segments[i].speaker);
    CHECK(again.segments[i].onset == init.segments[i].onset);
    CHECK(again.segments[i].duration == init.segments[i].duration);
  }
}

TEST_CASE("first pass is deterministic end to end") {
  const Network net = tiny_net();
  const PipelineConfig cfg = tiny_pipeline();
  const Audio audio = burst_audio(4.0, {{0.2, 1.4, 440.0}, {1.9, 3.4, 220.0}}, 0.01);

  const DiarizationResult a = run_first_pass(audio, net, cfg);
  const DiarizationResult b = run_first_pass(audio, net, cfg);
  CHECK(emit_rttm(a) == emit_rttm(b));
  for (const std::string& s : speakers_in_order(a)) CHECK(s.rfind("spk", 0) == 0);

  const Audio silence = burst_audio(3.0, {});
  CHECK(run_first_pass(silence, net, cfg).empty());
  Audio empty;
  CHECK_THROWS_AS(run_first_pass(empty, net, cfg), std::invalid_argument);
}

TEST_CASE("identical channels match the single-channel pipeline") {
  const Network net = tiny_net(1, 17);
  const PipelineConfig cfg = tiny_pipeline();
  const Audio mono = burst_audio(4.0, {{0.2, 1.6, 440.0}, {2.0, 3.6, 220.0}}, 0.01);
  Audio stereo = mono;
  stereo.channels.push_back(mono.channels[0]);

  DiarizationResult init;
  init.recording_id = "rec";
  init.segments = {{"spk1", 0.2, 1.4}, {"spk2", 2.0, 1.6}};

  ActivityMatrix fused1, fused2;
  std::ostringstream warn;
  refine(mono, net, init, cfg, &fused1, &warn);
  refine(stereo, net, init, cfg, &fused2, &warn);
  REQUIRE(fused1.values.rows() == fused2.values.rows());
  REQUIRE(fused1.values.cols() == fused2.values.cols());
  CHECK((fused1.values - fused2.values).cwiseAbs().maxCoeff() < 1e-4);
}

TEST_CASE("two-pass pipeline composes and stays deterministic") {
  const Network sc = tiny_net(0, 11);
  const Network mc = tiny_net(1, 13);
  const PipelineConfig cfg = tiny_pipeline();
  Audio audio = burst_audio(4.0, {{0.2, 1.5, 440.0}, {2.0, 3.5, 260.0}}, 0.01);
  audio.channels.push_back(audio.channels[0]);

  ActivityMatrix fused;
  std::ostringstream warn;
  const DiarizationResult a = run_pipeline(audio, sc, mc, cfg, nullptr, &fused, &warn);
  const DiarizationResult b = run_pipeline(audio, sc, mc, cfg, nullptr, nullptr, &warn);
  CHECK(emit_rttm(a) == emit_rttm(b));
  CHECK(fused.values.rows() == mc.config().capacity);
  CHECK(fused.values.cols() == 400);

  DiarizationResult init;
  init.recording_id = "given";
  init.segments = {{"alice", 0.2, 1.3}, {"bob", 2.0, 1.5}};
  const DiarizationResult c = run_pipeline(audio, sc, mc, cfg, &init, nullptr, &warn);
  CHECK(c.recording_id == "given");
  for (const Segment& s : c.segments)
    CHECK((s.speaker == "alice" || s.speaker == "bob"));

  Audio empty;
  CHECK_THROWS_AS(run_pipeline(empty, sc, mc, cfg), std::invalid_argument);
}

// ----- score matrix container -----

TEST_CASE("score matrices survive a round trip") {
  const std::string dir = test::temp_dir("scorefile");
  Rng rng(107);
  Matrix m(3, 17);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 17; ++c) m(r, c) = rng.normal();
  const std::string path = dir + "/scores.bin";
  write_score_matrix(m, path);
  const Matrix back = read_score_matrix(path);
  REQUIRE(back.rows() == 3);
  REQUIRE(back.cols() == 17);
  CHECK((back - m).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("score matrix corruption is reported") {
  const std::string dir = test::temp_dir("scorebad");
  CHECK_THROWS_AS(read_score_matrix(dir + "/missing.bin"), std::runtime_error);

  const std::string path = dir + "/scores.bin";
  write_score_matrix(Matrix::Ones(2, 2), path);
  {
    std::ofstream f(path, std::ios::binary);
    f.write("WRONGMAG", 8);
  }
  CHECK_THROWS_AS(read_score_matrix(path), std::runtime_error);

  write_score_matrix(Matrix::Ones(2, 2), path);
  {
    std::ifstream in(path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 9));
  }
  CHECK_THROWS_AS(read_score_matrix(path), std::runtime_error);
}

}  // TEST_SUITE
