#include <sys/wait.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <regex>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "helpers.hpp"
#include "snd/model.hpp"
#include "snd/infer.hpp"
#include "snd/rttm.hpp"
#include "snd/simulate.hpp"
#include "snd/wav.hpp"

using namespace snd;
namespace fs = std::filesystem;

namespace {

struct RunResult {
  int code = -1;
  std::string out;  // stdout and stderr interleaved
};

RunResult run(const std::string& cmd) {
  const std::string full = cmd + " 2>&1";
  FILE* pipe = popen(full.c_str(), "r");
  REQUIRE(pipe != nullptr);
  std::string text;
  char buf[4096];
  size_t n;
  while ((n = fread(buf, 1, sizeof buf, pipe)) > 0) text.append(buf, n);
  const int status = pclose(pipe);
  RunResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = text;
  return r;
}

std::string read_text(const fs::path& path) {
  std::ifstream f(path);
  REQUIRE(f.good());
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

std::vector<std::string> step_lines(const std::string& text) {
  std::vector<std::string> lines;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);)
    if (line.rfind("step=", 0) == 0) lines.push_back(line);
  return lines;
}

bool step_lines_well_formed(const std::vector<std::string>& lines) {
  static const std::regex pattern(
      R"(step=[0-9]+ lr=[0-9.eE+-]+ bce=[0-9.eE+-]+ arc=[0-9.eE+-]+ total=[0-9.eE+-]+)");
  for (const std::string& l : lines)
    if (!std::regex_match(l, pattern)) return false;
  return !lines.empty();
}

bool same_bytes(const fs::path& a, const fs::path& b) {
  return read_text(a) == read_text(b);
}

// Everything the CLI cases share: a sandbox with a toy config, a simulated
// corpus, pretraining clips, and the first two checkpoints of the schedule.
// Built once by driving the real binary.
struct CliWorld {
  std::string bin = SND_CLI_PATH;
  fs::path root;
  fs::path cfg;
  fs::path sim;
  fs::path clips;
  fs::path pre_ckpt;
  fs::path s1_ckpt;

  std::string snd(const std::string& args) const {
    return "\"" + bin + "\" --config \"" + cfg.string() + "\" " + args;
  }
};

const CliWorld& world() {
  static const CliWorld w = [] {
    CliWorld o;
    o.root = test::temp_dir("cli_world");
    o.cfg = o.root / "toy.cfg";
    o.sim = o.root / "sim";
    o.clips = o.root / "clips";
    o.pre_ckpt = o.root / "pre" / "pretrain.ckpt";
    o.s1_ckpt = o.root / "run" / "s2snd-1.ckpt";

    std::ofstream cfg(o.cfg);
    cfg << "model.feature_dim = 16\n"
           "model.widths = 2,3\n"
           "model.frontend_dim = 8\n"
           "model.attention_dim = 8\n"
           "model.heads = 2\n"
           "model.ff_dim = 16\n"
           "model.conv_kernel = 5\n"
           "model.encoder_blocks = 1\n"
           "model.decoder_blocks = 1\n"
           "model.embedding_dim = 6\n"
           "model.capacity = 4\n"
           "model.table_size = 10\n"
           "plan.block_length = 2.0\n"
           "plan.block_shift = 1.0\n"
           "train.steps = 3\n"
           "train.batch = 1\n"
           "pretrain.steps = 3\n"
           "pretrain.batch = 8\n"
           "sim.conversations = 2\n"
           "sim.duration = 16\n"
           "sim.min_speakers = 2\n"
           "sim.max_speakers = 3\n"
           "sim.voice_pool = 6\n"
           "clips.voices = 4\n"
           "clips.per_voice = 2\n"
           "clips.duration = 1.5\n";
    cfg.close();

    RunResult r = run(o.snd("--out \"" + o.sim.string() + "\" simulate"));
    REQUIRE_MESSAGE(r.code == 0, r.out);
    r = run(o.snd("--out \"" + o.clips.string() + "\" simulate --clips"));
    REQUIRE_MESSAGE(r.code == 0, r.out);
    r = run(o.snd("--out \"" + (o.root / "pre").string() + "\" pretrain --clips-dir \"" +
                  o.clips.string() + "\""));
    REQUIRE_MESSAGE(r.code == 0, r.out);
    r = run(o.snd("--out \"" + (o.root / "run").string() + "\" train --stage s2snd-1 --init \"" +
                  o.pre_ckpt.string() + "\" --sim-dir \"" + o.sim.string() + "\""));
    REQUIRE_MESSAGE(r.code == 0, r.out);
    return o;
  }();
  return w;
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("input errors exit with code 2") {
  const CliWorld& w = world();

  SUBCASE("unknown override key") {
    const RunResult r = run(std::string("\"") + w.bin + "\" --set bogus.key=1 simulate");
    CHECK(r.code == 2);
    CHECK(r.out.find("unknown config key 'bogus.key'") != std::string::npos);
  }
  SUBCASE("unknown key in a config file") {
    const fs::path bad = w.root / "bad.cfg";
    std::ofstream(bad) << "model.no_such_knob = 3\n";
    const RunResult r =
        run(std::string("\"") + w.bin + "\" --config \"" + bad.string() + "\" simulate");
    CHECK(r.code == 2);
    CHECK(r.out.find("no_such_knob") != std::string::npos);
  }
  SUBCASE("block shift outside the supported grid") {
    const RunResult r = run(w.snd("infer --model \"" + w.s1_ckpt.string() +
                                  "\" --wav \"" + (w.sim / "conv0000.wav").string() +
                                  "\" --block-shift 3"));
    CHECK(r.code == 2);
    CHECK(r.out.find("--block-shift") != std::string::npos);
  }
  SUBCASE("mc-1 without an S2SND checkpoint") {
    const RunResult r = run(w.snd("train --stage mc-1 --sim-dir \"" + w.sim.string() + "\""));
    CHECK(r.code == 2);
    CHECK(r.out.find("S2SND checkpoint") != std::string::npos);
  }
  SUBCASE("mixing stage without real data") {
    const RunResult r = run(w.snd("train --stage s2snd-2 --init \"" + w.s1_ckpt.string() +
                                  "\" --sim-dir \"" + w.sim.string() + "\""));
    CHECK(r.code == 2);
    CHECK(r.out.find("--real-dir") != std::string::npos);
  }
  SUBCASE("train without a corpus") {
    const RunResult r = run(w.snd("train --stage s2snd-1 --init \"" + w.pre_ckpt.string() + "\""));
    CHECK(r.code == 2);
    CHECK(r.out.find("--sim-dir") != std::string::npos);
  }
  SUBCASE("unknown stage name") {
    const RunResult r = run(w.snd("train --stage warmup --sim-dir \"" + w.sim.string() + "\""));
    CHECK(r.code == 2);
  }
}

TEST_CASE("simulate is deterministic and honors the output root") {
  const CliWorld& w = world();

  SUBCASE("summary line and bit-exact rerun") {
    const fs::path again = w.root / "sim_again";
    const RunResult r = run(w.snd("--out \"" + again.string() + "\" simulate"));
    REQUIRE_MESSAGE(r.code == 0, r.out);
    CHECK(r.out.find("wrote 2 conversations") != std::string::npos);
    CHECK(r.out.find("voice pool 6") != std::string::npos);
    CHECK(r.out.find("mean overlap") != std::string::npos);
    CHECK(same_bytes(w.sim / "conv0000.wav", again / "conv0000.wav"));
    CHECK(same_bytes(w.sim / "conv0001.wav", again / "conv0001.wav"));
    CHECK(same_bytes(w.sim / "conv0000.rttm", again / "conv0000.rttm"));
    // Manifests embed their own output paths; everything else must agree.
    const auto m1 = load_manifest((w.sim / "manifest.jsonl").string());
    const auto m2 = load_manifest((again / "manifest.jsonl").string());
    REQUIRE(m1.size() == m2.size());
    for (size_t i = 0; i < m1.size(); ++i) {
      CHECK(m1[i].recording_id == m2[i].recording_id);
      CHECK(m1[i].num_speakers == m2[i].num_speakers);
      CHECK(m1[i].seed == m2[i].seed);
      CHECK(m1[i].overlap == m2[i].overlap);
      CHECK(m1[i].voice_indices == m2[i].voice_indices);
    }
  }
  SUBCASE("zero conversations still succeed") {
    const fs::path empty = w.root / "sim_empty";
    const RunResult r =
        run(w.snd("--out \"" + empty.string() + "\" simulate --set sim.conversations=0"));
    CHECK(r.code == 0);
    CHECK(fs::exists(empty / "manifest.jsonl"));
    CHECK(fs::file_size(empty / "manifest.jsonl") == 0);
  }
  SUBCASE("environment variable supplies the output root") {
    const fs::path env_root = w.root / "env_root";
    const RunResult r = run("SND_OUTPUT_ROOT=\"" + env_root.string() + "\" " +
                            w.snd("simulate --set sim.conversations=1 --set sim.duration=5"));
    CHECK(r.code == 0);
    CHECK(fs::exists(env_root / "manifest.jsonl"));
  }
}

TEST_CASE("pretrain writes a loadable checkpoint and a stable log") {
  const CliWorld& w = world();

  const Checkpoint ck = load_checkpoint(w.pre_ckpt.string());
  CHECK(ck.meta.at("stage") == "pretrain");
  CHECK(ck.meta.count("train_accuracy") == 1);
  bool has_extractor = false;
  for (const auto& [name, tensor] : ck.params.tensors) {
    (void)tensor;
    if (name.rfind("extractor.", 0) == 0) has_extractor = true;
  }
  CHECK(has_extractor);

  const auto lines = step_lines(read_text(w.root / "pre" / "pretrain.log"));
  CHECK(lines.size() == 3);
  CHECK(step_lines_well_formed(lines));
}

TEST_CASE("a training stage checkpoints and logs in a stable format") {
  const CliWorld& w = world();

  const Checkpoint ck = load_checkpoint(w.s1_ckpt.string());
  CHECK(ck.meta.at("stage") == "s2snd-1");
  CHECK(ck.params.config.ch_attn_blocks == 0);
  CHECK(ck.params.config.attention_dim == 8);

  const std::string log = read_text(w.root / "run" / "train_s2snd-1.log");
  CHECK(log.find("stage s2snd-1:") != std::string::npos);
  const auto lines = step_lines(log);
  CHECK(lines.size() == 3);
  CHECK(step_lines_well_formed(lines));
}

TEST_CASE("resume restarts a stage deterministically") {
  const CliWorld& w = world();

  const fs::path r1 = w.root / "resume1";
  const fs::path r2 = w.root / "resume2";
  for (const fs::path& out : {r1, r2}) {
    const RunResult r = run(w.snd("--out \"" + out.string() +
                                  "\" train --stage s2snd-1 --resume \"" + w.s1_ckpt.string() +
                                  "\" --sim-dir \"" + w.sim.string() + "\""));
    REQUIRE_MESSAGE(r.code == 0, r.out);
  }
  const auto lines1 = step_lines(read_text(r1 / "train_s2snd-1.log"));
  const auto lines2 = step_lines(read_text(r2 / "train_s2snd-1.log"));
  REQUIRE(!lines1.empty());
  CHECK(lines1 == lines2);
  CHECK(same_bytes(r1 / "s2snd-1.ckpt", r2 / "s2snd-1.ckpt"));
}

TEST_CASE("mc-1 grows the channel attention module") {
  const CliWorld& w = world();

  SUBCASE("missing width key is rejected") {
    const RunResult r = run(w.snd("--out \"" + (w.root / "mc_bad").string() +
                                  "\" train --stage mc-1 --init \"" + w.s1_ckpt.string() +
                                  "\" --sim-dir \"" + w.sim.string() + "\""));
    CHECK(r.code == 2);
    CHECK(r.out.find("model.ch_attn_blocks") != std::string::npos);
  }
  SUBCASE("promotion adds tensors and records the config") {
    const fs::path out = w.root / "mc_run";
    const RunResult r = run(w.snd("--out \"" + out.string() + "\" train --stage mc-1 --init \"" +
                                  w.s1_ckpt.string() + "\" --sim-dir \"" + w.sim.string() +
                                  "\" --set model.ch_attn_blocks=1"));
    REQUIRE_MESSAGE(r.code == 0, r.out);
    const Checkpoint ck = load_checkpoint((out / "mc-1.ckpt").string());
    CHECK(ck.params.config.ch_attn_blocks == 1);
    bool has_chattn = false;
    for (const auto& [name, tensor] : ck.params.tensors) {
      (void)tensor;
      if (name.rfind("chattn.", 0) == 0) has_chattn = true;
    }
    CHECK(has_chattn);
  }
}

TEST_CASE("broken checkpoints are rejected and divergence exits nonzero") {
  const CliWorld& w = world();

  SUBCASE("non-finite weights fail checkpoint validation") {
    Checkpoint ck = load_checkpoint(w.s1_ckpt.string());
    REQUIRE(!ck.params.tensors.empty());
    ck.params.tensors.begin()->second.setConstant(std::numeric_limits<double>::quiet_NaN());
    const fs::path poisoned = w.root / "poisoned.ckpt";
    save_checkpoint(ck.params, poisoned.string());

    const RunResult r = run(w.snd("--out \"" + (w.root / "nan_run").string() +
                                  "\" train --stage s2snd-1 --resume \"" + poisoned.string() +
                                  "\" --sim-dir \"" + w.sim.string() + "\""));
    CHECK(r.code == 2);
    CHECK(r.out.find("non-finite") != std::string::npos);
  }
  SUBCASE("overflow during the forward pass reports divergence") {
    Checkpoint ck = load_checkpoint(w.s1_ckpt.string());
    for (auto& [name, tensor] : ck.params.tensors) {
      (void)name;
      tensor.setConstant(1e200);  // finite, but any product overflows
    }
    const fs::path exploded = w.root / "exploded.ckpt";
    save_checkpoint(ck.params, exploded.string());

    const RunResult r = run(w.snd("--out \"" + (w.root / "inf_run").string() +
                                  "\" train --stage s2snd-1 --resume \"" + exploded.string() +
                                  "\" --sim-dir \"" + w.sim.string() + "\""));
    CHECK(r.code == 1);
    CHECK(r.out.find("diverged") != std::string::npos);
  }
}

TEST_CASE("infer writes a parseable deterministic RTTM and score matrix") {
  const CliWorld& w = world();

  const fs::path out = w.root / "infer";
  const std::string base = "infer --model \"" + w.s1_ckpt.string() + "\" --wav \"" +
                           (w.sim / "conv0000.wav").string() + "\" --init-rttm \"" +
                           (w.sim / "conv0000.rttm").string() +
                           "\" --set infer.threshold=0.1";
  const RunResult a = run(w.snd("--out \"" + out.string() + "\" " + base + " --rttm \"" +
                                (out / "a.rttm").string() + "\" --scores \"" +
                                (out / "a.scores").string() + "\""));
  REQUIRE_MESSAGE(a.code == 0, a.out);
  const RunResult b = run(w.snd("--out \"" + out.string() + "\" " + base + " --rttm \"" +
                                (out / "b.rttm").string() + "\""));
  REQUIRE_MESSAGE(b.code == 0, b.out);
  CHECK(same_bytes(out / "a.rttm", out / "b.rttm"));

  const DiarizationResult parsed = read_rttm_file((out / "a.rttm").string());
  CHECK(!parsed.empty());
  CHECK(parsed.recording_id == "conv0000");

  const Matrix scores = read_score_matrix((out / "a.scores").string());
  CHECK(scores.rows() == 4);
  CHECK(scores.cols() > 0);
  CHECK(scores.allFinite());
  CHECK(scores.minCoeff() >= 0.0);
  CHECK(scores.maxCoeff() <= 1.0);

  SUBCASE("ablation flags are accepted together") {
    const RunResult r = run(w.snd("--out \"" + out.string() + "\" " + base +
                                  " --block-shift 2 --no-clustering --single-channel --rttm \"" +
                                  (out / "c.rttm").string() + "\""));
    CHECK_MESSAGE(r.code == 0, r.out);
    CHECK(fs::exists(out / "c.rttm"));
  }
}

TEST_CASE("infer rejects multichannel audio for a fusion-free model") {
  const CliWorld& w = world();

  Audio stereo;
  stereo.sample_rate = 16000;
  stereo.channels.assign(2, std::vector<Scalar>(16000, 0.0));
  for (int t = 0; t < 16000; ++t)
    stereo.channels[0][t] = 0.3 * std::sin(2.0 * M_PI * 440.0 * t / 16000.0);
  const fs::path wav = w.root / "stereo.wav";
  write_wav(wav.string(), stereo);

  const std::string base =
      "infer --model \"" + w.s1_ckpt.string() + "\" --wav \"" + wav.string() + "\"";
  const RunResult bad = run(w.snd("--out \"" + (w.root / "infer").string() + "\" " + base));
  CHECK(bad.code == 2);
  CHECK(bad.out.find("channel") != std::string::npos);

  const RunResult ok =
      run(w.snd("--out \"" + (w.root / "infer").string() + "\" " + base + " --single-channel"));
  CHECK_MESSAGE(ok.code == 0, ok.out);
}

TEST_CASE("eval scores identity at zero and a known miss at twenty percent") {
  const CliWorld& w = world();
  const fs::path dir = w.root / "eval";
  fs::create_directories(dir);

  DiarizationResult ref;
  ref.recording_id = "meet0";
  ref.segments = {{"alice", 0.0, 10.0}};
  DiarizationResult hyp_miss;
  hyp_miss.recording_id = "meet0";
  hyp_miss.segments = {{"alice", 0.0, 8.0}};
  write_rttm_file(ref, (dir / "ref.rttm").string());
  write_rttm_file(hyp_miss, (dir / "hyp.rttm").string());

  SUBCASE("identical files score zero") {
    const RunResult r = run(std::string("\"") + w.bin + "\" eval --ref \"" +
                            (dir / "ref.rttm").string() + "\" --hyp \"" +
                            (dir / "ref.rttm").string() + "\"");
    CHECK(r.code == 0);
    CHECK(r.out.find("DER 0.00%") != std::string::npos);
  }
  SUBCASE("a two second miss of ten seconds is twenty percent") {
    const RunResult r = run(std::string("\"") + w.bin + "\" eval --ref \"" +
                            (dir / "ref.rttm").string() + "\" --hyp \"" +
                            (dir / "hyp.rttm").string() + "\"");
    CHECK(r.code == 0);
    CHECK(r.out.find("DER 20.00%") != std::string::npos);
    CHECK(r.out.find("RESULT der=20.00 miss=20.00 fa=0.00 conf=0.00") != std::string::npos);
  }
  SUBCASE("directory mode scores the corpus") {
    const RunResult r = run(std::string("\"") + w.bin + "\" eval --ref \"" + w.sim.string() +
                            "\" --hyp \"" + w.sim.string() + "\"");
    CHECK(r.code == 0);
    CHECK(r.out.find("ALL: DER 0.00%") != std::string::npos);
  }
  SUBCASE("a missing hypothesis recording is an input error") {
    DiarizationResult other = hyp_miss;
    other.recording_id = "meet1";
    other.segments[0].speaker = "bob";
    write_rttm_file(other, (dir / "other.rttm").string());
    const RunResult r = run(std::string("\"") + w.bin + "\" eval --ref \"" +
                            (dir / "ref.rttm").string() + "\" --hyp \"" +
                            (dir / "other.rttm").string() + "\"");
    CHECK(r.code == 2);
    CHECK(r.out.find("meet0") != std::string::npos);
  }
}

}  // TEST_SUITE
