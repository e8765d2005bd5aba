#include "snd/model.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>
#include <utility>

#include "json.hpp"

namespace snd {

namespace {

using nlohmann::json;

constexpr char kMagic[8] = {'S', 'N', 'D', 'M', 'O', 'D', 'L', '1'};

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

bool starts_with(const std::string& s, const std::string& prefix) {
  return s.rfind(prefix, 0) == 0;
}

void require(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument("model config: " + what);
}

}  // namespace

void ModelConfig::validate() const {
  require(feature_dim >= 1, "feature_dim must be positive");
  require(!extractor_widths.empty(), "extractor_widths must not be empty");
  for (int w : extractor_widths) require(w >= 1, "extractor widths must be positive");
  require(extractor_time_stride >= 1, "extractor_time_stride must be positive");
  require(frontend_dim >= 1, "frontend_dim must be positive");
  require(attention_dim >= 1, "attention_dim must be positive");
  require(heads >= 1, "heads must be positive");
  require(attention_dim % heads == 0, "attention_dim must be divisible by heads");
  require(frontend_dim % heads == 0, "frontend_dim must be divisible by heads");
  require(ff_dim >= 1, "ff_dim must be positive");
  require(conv_kernel >= 1 && conv_kernel % 2 == 1, "conv_kernel must be odd and positive");
  require(ch_attn_blocks >= 0, "ch_attn_blocks must be nonnegative");
  require(encoder_blocks >= 1, "encoder_blocks must be positive");
  require(decoder_blocks >= 1, "decoder_blocks must be positive");
  require(embedding_dim >= 1, "embedding_dim must be positive");
  require(capacity >= 1, "capacity must be positive");
  require(table_size >= 1, "table_size must be positive");
  require(final_freq_bins() >= 1, "too many stride-2 stages for feature_dim");
}

int ModelConfig::final_freq_bins() const {
  int bins = feature_dim;
  for (size_t i = 0; i < extractor_widths.size(); ++i) bins = (bins - 1) / 2 + 1;
  return bins;
}

int ModelConfig::output_frames(int frames) const {
  if (frames < 1) throw std::invalid_argument("output_frames: need at least one frame");
  return (frames - 1) / extractor_time_stride + 1;
}

const Matrix& Parameters::at(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw std::invalid_argument("model: missing tensor '" + name + "'");
  return it->second;
}

Matrix& Parameters::at(const std::string& name) {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw std::invalid_argument("model: missing tensor '" + name + "'");
  return it->second;
}

std::map<std::string, std::pair<int, int>> expected_shapes(const ModelConfig& cfg) {
  cfg.validate();
  std::map<std::string, std::pair<int, int>> m;
  const auto add = [&m](const std::string& name, int rows, int cols) {
    m[name] = {rows, cols};
  };
  const auto add_linear = [&](const std::string& prefix, int out, int in) {
    add(prefix + ".w", out, in);
    add(prefix + ".b", 1, out);
  };
  const auto add_ln = [&](const std::string& prefix, int dim) {
    add(prefix + ".g", 1, dim);
    add(prefix + ".b", 1, dim);
  };
  const auto add_ff = [&](const std::string& prefix, int dim) {
    add(prefix + ".w1", cfg.ff_dim, dim);
    add(prefix + ".b1", 1, cfg.ff_dim);
    add(prefix + ".w2", dim, cfg.ff_dim);
    add(prefix + ".b2", 1, dim);
  };

  const auto& w = cfg.extractor_widths;
  add("extractor.stem.w", w[0], 9);
  add("extractor.stem.b", 1, w[0]);
  int in_ch = w[0];
  for (size_t i = 0; i < w.size(); ++i) {
    const std::string p = "extractor.res" + std::to_string(i);
    add(p + ".conv1.w", w[i], in_ch * 9);
    add(p + ".conv1.b", 1, w[i]);
    add(p + ".conv2.w", w[i], w[i] * 9);
    add(p + ".conv2.b", 1, w[i]);
    add(p + ".proj.w", w[i], in_ch);
    add(p + ".proj.b", 1, w[i]);
    in_ch = w[i];
  }
  add_linear("extractor.ssp", cfg.frontend_dim, 2 * w.back());

  const int f = cfg.frontend_dim;
  const int d = cfg.attention_dim;
  for (int i = 0; i < cfg.ch_attn_blocks; ++i) {
    const std::string p = "chattn." + std::to_string(i);
    add_ln(p + ".ln1", f);
    add_linear(p + ".q", f, f);
    add_linear(p + ".k", f, f);
    add_linear(p + ".v", f, f);
    add_linear(p + ".o", f, f);
    add_ln(p + ".ln2", f);
    add_ff(p + ".ff", f);
  }

  add_linear("encoder.in", d, f);
  for (int i = 0; i < cfg.encoder_blocks; ++i) {
    const std::string p = "encoder." + std::to_string(i);
    add_ln(p + ".ffa.ln", d);
    add_ff(p + ".ffa", d);
    add_ln(p + ".attn.ln", d);
    add_linear(p + ".attn.q", d, d);
    add_linear(p + ".attn.k", d, d);
    add_linear(p + ".attn.v", d, d);
    add_linear(p + ".attn.o", d, d);
    add_ln(p + ".conv.ln", d);
    add_linear(p + ".conv.pw1", 2 * d, d);
    add(p + ".conv.dw.w", cfg.conv_kernel, d);
    add_linear(p + ".conv.pw2", d, d);
    add_ln(p + ".ffb.ln", d);
    add_ff(p + ".ffb", d);
    add_ln(p + ".out.ln", d);
  }

  add_linear("detdec.embproj", d, cfg.embedding_dim);
  for (int i = 0; i < cfg.decoder_blocks; ++i) {
    const std::string p = "detdec." + std::to_string(i);
    add_ln(p + ".time.ln", d);
    add_linear(p + ".time.q", d, d);
    add_linear(p + ".time.k", d, d);
    add_linear(p + ".time.v", d, d);
    add_linear(p + ".time.o", d, d);
    add_ln(p + ".spk.ln", d);
    add_linear(p + ".spk.q", d, d);
    add_linear(p + ".spk.k", d, d);
    add_linear(p + ".spk.v", d, d);
    add_linear(p + ".spk.o", d, d);
    add_ln(p + ".ff.ln", d);
    add_ff(p + ".ff", d);
  }
  add("detdec.head.w", 1, d);
  add("detdec.head.b", 1, 1);

  add("repdec.base", 1, d);
  for (int i = 0; i < cfg.decoder_blocks; ++i) {
    const std::string p = "repdec." + std::to_string(i);
    add_ln(p + ".lnq", d);
    add_linear(p + ".q", d, d);
    add(p + ".k.w", d, f);
    add(p + ".k.b", 1, d);
    add(p + ".v.w", d, f);
    add(p + ".v.b", 1, d);
    add_linear(p + ".o", d, d);
    add_ln(p + ".ff.ln", d);
    add_ff(p + ".ff", d);
  }
  add_linear("repdec.out", cfg.embedding_dim, d);
  add_linear("repdec.null", cfg.embedding_dim, cfg.embedding_dim);

  add("spktable.e_all", cfg.table_size, cfg.embedding_dim);
  add("spktable.e_non", 1, cfg.embedding_dim);
  return m;
}

std::map<std::string, std::pair<int, int>> pretrain_head_shapes(const ModelConfig& cfg,
                                                                int num_classes) {
  if (num_classes < 2)
    throw std::invalid_argument("pretraining needs at least 2 classes, got " +
                                std::to_string(num_classes));
  std::map<std::string, std::pair<int, int>> m;
  m["pretrain.emb.w"] = {cfg.embedding_dim, 2 * cfg.frontend_dim};
  m["pretrain.emb.b"] = {1, cfg.embedding_dim};
  m["pretrain.table"] = {num_classes, cfg.embedding_dim};
  return m;
}

namespace {

Matrix init_tensor(const std::string& name, int rows, int cols, uint64_t seed) {
  Rng rng(mix_seed(seed, hash_string(name)));
  Matrix m(rows, cols);
  if (ends_with(name, ".g")) {
    m.setOnes();
    return m;
  }
  if (ends_with(name, ".b") || ends_with(name, ".b1") || ends_with(name, ".b2")) {
    m.setZero();
    return m;
  }
  double sd = std::sqrt(1.0 / cols);
  if (name == "spktable.e_all" || name == "spktable.e_non" || name == "repdec.base" ||
      name == "pretrain.table")
    sd = 1.0;
  else if (starts_with(name, "extractor.") && ends_with(name, ".w") &&
           name.find(".ssp") == std::string::npos)
    sd = std::sqrt(2.0 / cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = sd * rng.normal();
  return m;
}

}  // namespace

Parameters init_parameters(const ModelConfig& cfg, uint64_t seed) {
  Parameters p;
  p.config = cfg;
  for (const auto& [name, shape] : expected_shapes(cfg))
    p.tensors[name] = init_tensor(name, shape.first, shape.second, seed);
  return p;
}

void init_missing(Parameters& params,
                  const std::map<std::string, std::pair<int, int>>& shapes, uint64_t seed) {
  for (const auto& [name, shape] : shapes) {
    auto it = params.tensors.find(name);
    if (it == params.tensors.end()) {
      params.tensors[name] = init_tensor(name, shape.first, shape.second, seed);
    } else if (it->second.rows() != shape.first || it->second.cols() != shape.second) {
      throw std::invalid_argument("model: tensor '" + name + "' has shape " +
                                  std::to_string(it->second.rows()) + "x" +
                                  std::to_string(it->second.cols()) + ", expected " +
                                  std::to_string(shape.first) + "x" +
                                  std::to_string(shape.second));
    }
  }
}

// ----- checkpoint I/O -----

namespace {

json config_to_json(const ModelConfig& c) {
  json j;
  j["feature_dim"] = c.feature_dim;
  j["extractor_widths"] = c.extractor_widths;
  j["extractor_time_stride"] = c.extractor_time_stride;
  j["frontend_dim"] = c.frontend_dim;
  j["attention_dim"] = c.attention_dim;
  j["heads"] = c.heads;
  j["ff_dim"] = c.ff_dim;
  j["conv_kernel"] = c.conv_kernel;
  j["ch_attn_blocks"] = c.ch_attn_blocks;
  j["encoder_blocks"] = c.encoder_blocks;
  j["decoder_blocks"] = c.decoder_blocks;
  j["embedding_dim"] = c.embedding_dim;
  j["capacity"] = c.capacity;
  j["table_size"] = c.table_size;
  return j;
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  c.feature_dim = j.at("feature_dim").get<int>();
  c.extractor_widths = j.at("extractor_widths").get<std::vector<int>>();
  c.extractor_time_stride = j.at("extractor_time_stride").get<int>();
  c.frontend_dim = j.at("frontend_dim").get<int>();
  c.attention_dim = j.at("attention_dim").get<int>();
  c.heads = j.at("heads").get<int>();
  c.ff_dim = j.at("ff_dim").get<int>();
  c.conv_kernel = j.at("conv_kernel").get<int>();
  c.ch_attn_blocks = j.at("ch_attn_blocks").get<int>();
  c.encoder_blocks = j.at("encoder_blocks").get<int>();
  c.decoder_blocks = j.at("decoder_blocks").get<int>();
  c.embedding_dim = j.at("embedding_dim").get<int>();
  c.capacity = j.at("capacity").get<int>();
  c.table_size = j.at("table_size").get<int>();
  return c;
}

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

}  // namespace

void save_checkpoint(const Parameters& params, const std::string& path,
                     const std::map<std::string, std::string>& meta) {
  json header;
  header["format"] = 1;
  header["config"] = config_to_json(params.config);
  header["meta"] = json::object();
  for (const auto& [k, v] : meta) header["meta"][k] = v;
  json tensors = json::array();
  for (const auto& [name, m] : params.tensors) {
    json t;
    t["name"] = name;
    t["rows"] = static_cast<int64_t>(m.rows());
    t["cols"] = static_cast<int64_t>(m.cols());
    tensors.push_back(t);
  }
  header["tensors"] = tensors;
  const std::string hs = header.dump();

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write checkpoint: " + path);
  f.write(kMagic, 8);
  write_u64(f, hs.size());
  f.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  for (const auto& [name, m] : params.tensors) {
    RowMajorM rm = m;  // little-endian doubles on disk
    f.write(reinterpret_cast<const char*>(rm.data()),
            static_cast<std::streamsize>(sizeof(Scalar)) * rm.size());
  }
  if (!f) throw std::runtime_error("checkpoint write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, kMagic, 8) != 0)
    throw std::runtime_error(path + ": not a model checkpoint (bad magic)");
  const uint64_t hlen = read_u64(f);
  if (!f || hlen == 0 || hlen > (1ull << 30))
    throw std::runtime_error(path + ": corrupt checkpoint header length");
  std::string hs(hlen, '\0');
  f.read(hs.data(), static_cast<std::streamsize>(hlen));
  if (!f) throw std::runtime_error(path + ": truncated checkpoint header");

  json header;
  try {
    header = json::parse(hs);
  } catch (const json::exception&) {
    throw std::runtime_error(path + ": corrupt checkpoint header");
  }
  if (header.at("format").get<int>() != 1)
    throw std::runtime_error(path + ": unsupported checkpoint format version " +
                             header.at("format").dump());

  Checkpoint out;
  out.params.config = config_from_json(header.at("config"));
  for (const auto& [k, v] : header.at("meta").items())
    out.meta[k] = v.get<std::string>();
  for (const auto& t : header.at("tensors")) {
    const std::string name = t.at("name").get<std::string>();
    const auto rows = t.at("rows").get<int64_t>();
    const auto cols = t.at("cols").get<int64_t>();
    if (rows < 0 || cols < 0 || rows * cols > (1ll << 32))
      throw std::runtime_error(path + ": corrupt tensor shape for '" + name + "'");
    RowMajorM rm(rows, cols);
    f.read(reinterpret_cast<char*>(rm.data()),
           static_cast<std::streamsize>(sizeof(Scalar)) * rm.size());
    if (!f) throw std::runtime_error(path + ": truncated checkpoint data (tensor '" + name + "')");
    out.params.tensors[name] = rm;
  }
  return out;
}

// ----- graph builders -----

Binder::Binder(ad::Tape& tape, const Parameters& params, std::vector<std::string> frozen_prefixes)
    : tape_(tape), params_(params), frozen_(std::move(frozen_prefixes)) {}

bool Binder::frozen(const std::string& name) const {
  for (const auto& p : frozen_)
    if (starts_with(name, p)) return true;
  return false;
}

ad::Var Binder::operator()(const std::string& name) {
  auto it = bound_.find(name);
  if (it != bound_.end()) return it->second;
  const Matrix& m = params_.at(name);
  const ad::Var v = frozen(name) ? tape_.constant(m) : tape_.leaf(m);
  bound_.emplace(name, v);
  return v;
}

namespace {

ad::Var linear_p(Binder& b, ad::Var x, const std::string& prefix) {
  return ad::linear(b.tape(), x, b(prefix + ".w"), b(prefix + ".b"));
}

ad::Var ln_p(Binder& b, ad::Var x, const std::string& prefix) {
  return ad::layer_norm(b.tape(), x, b(prefix + ".g"), b(prefix + ".b"));
}

ad::Var ff_p(Binder& b, ad::Var x, const std::string& prefix) {
  ad::Tape& t = b.tape();
  ad::Var h = ad::linear(t, x, b(prefix + ".w1"), b(prefix + ".b1"));
  return ad::linear(t, ad::silu(t, h), b(prefix + ".w2"), b(prefix + ".b2"));
}

}  // namespace

ad::Var extract_channel_graph(Binder& b, const ModelConfig& cfg, ad::Var feats) {
  ad::Tape& t = b.tape();
  if (t.value(feats).cols() != cfg.feature_dim)
    throw std::invalid_argument("extractor: input has " +
                                std::to_string(t.value(feats).cols()) +
                                " feature bins, config expects " +
                                std::to_string(cfg.feature_dim));
  ad::Conv2dSpec stem;
  stem.in_channels = 1;
  stem.out_channels = cfg.extractor_widths[0];
  stem.stride_h = cfg.extractor_time_stride;
  stem.width = cfg.feature_dim;
  ad::Var x = ad::silu(t, ad::conv2d(t, feats, b("extractor.stem.w"), b("extractor.stem.b"), stem));

  int width = cfg.feature_dim;
  int in_ch = cfg.extractor_widths[0];
  for (size_t i = 0; i < cfg.extractor_widths.size(); ++i) {
    const int out_ch = cfg.extractor_widths[i];
    const std::string p = "extractor.res" + std::to_string(i);
    ad::Conv2dSpec c1;
    c1.in_channels = in_ch;
    c1.out_channels = out_ch;
    c1.stride_w = 2;
    c1.width = width;
    const int new_width = c1.out_width();
    ad::Conv2dSpec c2;
    c2.in_channels = out_ch;
    c2.out_channels = out_ch;
    c2.width = new_width;
    ad::Conv2dSpec cp;
    cp.in_channels = in_ch;
    cp.out_channels = out_ch;
    cp.kernel_h = 1;
    cp.kernel_w = 1;
    cp.stride_w = 2;
    cp.width = width;

    ad::Var h = ad::silu(t, ad::conv2d(t, x, b(p + ".conv1.w"), b(p + ".conv1.b"), c1));
    h = ad::conv2d(t, h, b(p + ".conv2.w"), b(p + ".conv2.b"), c2);
    ad::Var sc = ad::conv2d(t, x, b(p + ".proj.w"), b(p + ".proj.b"), cp);
    x = ad::silu(t, ad::add(t, h, sc));
    width = new_width;
    in_ch = out_ch;
  }
  ad::Var stats = ad::freq_stats(t, x, in_ch, 1e-5);
  return ad::linear(t, stats, b("extractor.ssp.w"), b("extractor.ssp.b"));
}

ad::Var channel_attention_graph(Binder& b, const ModelConfig& cfg,
                                const std::vector<ad::Var>& channels) {
  ad::Tape& t = b.tape();
  if (channels.empty()) throw std::invalid_argument("channel_attention: no channels");
  const int c = static_cast<int>(channels.size());
  if (cfg.ch_attn_blocks == 0) {
    if (c > 1)
      throw std::invalid_argument(
          "channel_attention: this model has no channel attention module "
          "(ch_attn_blocks=0) and cannot fuse " + std::to_string(c) + " channels");
    return channels[0];
  }
  ad::Var x = ad::interleave_channels(t, channels);
  for (int i = 0; i < cfg.ch_attn_blocks; ++i) {
    const std::string p = "chattn." + std::to_string(i);
    ad::Var n = ln_p(b, x, p + ".ln1");
    ad::Var q = linear_p(b, n, p + ".q");
    ad::Var k = linear_p(b, n, p + ".k");
    ad::Var v = linear_p(b, n, p + ".v");
    ad::Var a = ad::blockwise_attention(t, q, k, v, cfg.heads, c, c);
    x = ad::add(t, x, linear_p(b, a, p + ".o"));
    n = ln_p(b, x, p + ".ln2");
    x = ad::add(t, x, ff_p(b, n, p + ".ff"));
  }
  return ad::mean_over_row_blocks(t, x, c);
}

ad::Var encode_graph(Binder& b, const ModelConfig& cfg, ad::Var x) {
  ad::Tape& t = b.tape();
  ad::Var h = ad::linear(t, x, b("encoder.in.w"), b("encoder.in.b"));
  h = ad::add(t, h,
              t.constant(ad::sinusoidal_positions(static_cast<int>(t.value(h).rows()),
                                                  cfg.attention_dim)));
  for (int i = 0; i < cfg.encoder_blocks; ++i) {
    const std::string p = "encoder." + std::to_string(i);
    h = ad::add_scaled(t, h, ff_p(b, ln_p(b, h, p + ".ffa.ln"), p + ".ffa"), 0.5);
    {
      ad::Var n = ln_p(b, h, p + ".attn.ln");
      ad::Var q = linear_p(b, n, p + ".attn.q");
      ad::Var k = linear_p(b, n, p + ".attn.k");
      ad::Var v = linear_p(b, n, p + ".attn.v");
      ad::Var a = ad::multihead_attention(t, q, k, v, cfg.heads);
      h = ad::add(t, h, linear_p(b, a, p + ".attn.o"));
    }
    {
      ad::Var n = ln_p(b, h, p + ".conv.ln");
      ad::Var conv = linear_p(b, n, p + ".conv.pw1");
      conv = ad::glu(t, conv);
      conv = ad::depthwise_conv1d(t, conv, b(p + ".conv.dw.w"));
      conv = ad::silu(t, conv);
      conv = linear_p(b, conv, p + ".conv.pw2");
      h = ad::add(t, h, conv);
    }
    h = ad::add_scaled(t, h, ff_p(b, ln_p(b, h, p + ".ffb.ln"), p + ".ffb"), 0.5);
    h = ln_p(b, h, p + ".out.ln");
  }
  return h;
}

ad::Var detect_graph(Binder& b, const ModelConfig& cfg, ad::Var xhat, ad::Var emb) {
  ad::Tape& t = b.tape();
  const int n = static_cast<int>(t.value(emb).rows());
  if (n != cfg.capacity)
    throw std::invalid_argument("detect: expected " + std::to_string(cfg.capacity) +
                                " embedding rows, got " + std::to_string(n));
  if (t.value(emb).cols() != cfg.embedding_dim)
    throw std::invalid_argument("detect: embedding dim mismatch");
  const int frames = static_cast<int>(t.value(xhat).rows());

  ad::Var eproj = ad::linear(t, emb, b("detdec.embproj.w"), b("detdec.embproj.b"));
  ad::Var s = ad::add_block_rowvec(t, ad::tile_rows(t, xhat, n), eproj, frames);

  std::vector<int> to_frame(static_cast<size_t>(n) * frames);
  std::vector<int> to_speaker(static_cast<size_t>(n) * frames);
  for (int spk = 0; spk < n; ++spk)
    for (int fr = 0; fr < frames; ++fr) {
      to_frame[static_cast<size_t>(fr) * n + spk] = spk * frames + fr;
      to_speaker[static_cast<size_t>(spk) * frames + fr] = fr * n + spk;
    }

  for (int i = 0; i < cfg.decoder_blocks; ++i) {
    const std::string p = "detdec." + std::to_string(i);
    {
      ad::Var nrm = ln_p(b, s, p + ".time.ln");
      ad::Var q = linear_p(b, nrm, p + ".time.q");
      ad::Var k = linear_p(b, nrm, p + ".time.k");
      ad::Var v = linear_p(b, nrm, p + ".time.v");
      ad::Var a = ad::blockwise_attention(t, q, k, v, cfg.heads, frames, frames);
      s = ad::add(t, s, linear_p(b, a, p + ".time.o"));
    }
    {
      ad::Var y = ad::permute_rows(t, s, to_frame);
      ad::Var nrm = ln_p(b, y, p + ".spk.ln");
      ad::Var q = linear_p(b, nrm, p + ".spk.q");
      ad::Var k = linear_p(b, nrm, p + ".spk.k");
      ad::Var v = linear_p(b, nrm, p + ".spk.v");
      ad::Var a = ad::blockwise_attention(t, q, k, v, cfg.heads, n, n);
      ad::Var z = linear_p(b, a, p + ".spk.o");
      s = ad::add(t, s, ad::permute_rows(t, z, to_speaker));
    }
    s = ad::add(t, s, ff_p(b, ln_p(b, s, p + ".ff.ln"), p + ".ff"));
  }
  ad::Var logits = ad::linear(t, s, b("detdec.head.w"), b("detdec.head.b"));
  return ad::sigmoid(t, ad::reshape(t, logits, n, frames));
}

ad::Var represent_graph(Binder& b, const ModelConfig& cfg, ad::Var x, const Matrix& acts,
                        std::vector<bool>* valid_out) {
  ad::Tape& t = b.tape();
  const int n = static_cast<int>(acts.rows());
  const int frames = static_cast<int>(t.value(x).rows());
  if (n < 1) throw std::invalid_argument("represent: no activity rows");
  if (static_cast<int>(acts.cols()) != frames)
    throw std::invalid_argument("represent: activity has " + std::to_string(acts.cols()) +
                                " frames, memory has " + std::to_string(frames));

  Matrix mask(n, frames);
  std::vector<bool> valid(static_cast<size_t>(n), false);
  for (int i = 0; i < n; ++i)
    for (int fr = 0; fr < frames; ++fr) {
      const bool active = acts(i, fr) > 0.5;
      mask(i, fr) = active ? 0.0 : -1e9;
      if (active) valid[static_cast<size_t>(i)] = true;
    }

  ad::Var q = ad::tile_rows(t, b("repdec.base"), n);
  for (int i = 0; i < cfg.decoder_blocks; ++i) {
    const std::string p = "repdec." + std::to_string(i);
    {
      ad::Var nrm = ln_p(b, q, p + ".lnq");
      ad::Var qq = linear_p(b, nrm, p + ".q");
      ad::Var kk = linear_p(b, x, p + ".k");
      ad::Var vv = linear_p(b, x, p + ".v");
      ad::Var a = ad::multihead_attention(t, qq, kk, vv, cfg.heads, &mask);
      q = ad::add(t, q, linear_p(b, a, p + ".o"));
    }
    q = ad::add(t, q, ff_p(b, ln_p(b, q, p + ".ff.ln"), p + ".ff"));
  }
  ad::Var emb = ad::normalize_rows(t, ad::linear(t, q, b("repdec.out.w"), b("repdec.out.b")));
  ad::Var null = ad::normalize_rows(
      t, ad::linear(t, b("spktable.e_non"), b("repdec.null.w"), b("repdec.null.b")));
  ad::Var out = ad::select_rows(t, emb, ad::tile_rows(t, null, n), valid);
  if (valid_out) *valid_out = valid;
  return out;
}

ad::Var pretrain_embed_graph(Binder& b, const ModelConfig& cfg, ad::Var frames) {
  (void)cfg;
  ad::Tape& t = b.tape();
  ad::Var stats = ad::time_stats(t, frames, 1e-5);
  return ad::linear(t, stats, b("pretrain.emb.w"), b("pretrain.emb.b"));
}

// ----- plain-value wrappers -----

Network::Network(Parameters params) : params_(std::move(params)) {
  params_.config.validate();
  for (const auto& [name, shape] : expected_shapes(params_.config)) {
    const Matrix& m = params_.at(name);
    if (m.rows() != shape.first || m.cols() != shape.second)
      throw std::invalid_argument("model: tensor '" + name + "' has shape " +
                                  std::to_string(m.rows()) + "x" + std::to_string(m.cols()) +
                                  ", expected " + std::to_string(shape.first) + "x" +
                                  std::to_string(shape.second));
    if (!m.allFinite())
      throw std::invalid_argument("model: tensor '" + name + "' contains non-finite values");
  }
}

SpeakerTable Network::speaker_table() const {
  SpeakerTable st;
  st.table = params_.at("spktable.e_all");
  st.non_speech = params_.at("spktable.e_non").row(0);
  return st;
}

FeatureSequence Network::extract_per_channel(const FeatureBlock& block) const {
  ad::Tape t;
  Binder b(t, params_, {""});
  FeatureSequence out;
  out.role = FeatureRole::PerChannel;
  out.frame_period = block.features.frame_period * params_.config.extractor_time_stride;
  for (const Matrix& ch : block.features.channels) {
    ad::Var v = extract_channel_graph(b, params_.config, t.constant(ch));
    out.channels.push_back(t.value(v));
  }
  return out;
}

FeatureSequence Network::channel_attention(const FeatureSequence& xprime) const {
  ad::Tape t;
  Binder b(t, params_, {""});
  std::vector<ad::Var> channels;
  channels.reserve(xprime.channels.size());
  for (const Matrix& ch : xprime.channels) channels.push_back(t.constant(ch));
  ad::Var v = channel_attention_graph(b, params_.config, channels);
  FeatureSequence out;
  out.role = FeatureRole::Fused;
  out.frame_period = xprime.frame_period;
  out.channels = {t.value(v)};
  return out;
}

FeatureSequence Network::encode(const FeatureSequence& x) const {
  ad::Tape t;
  Binder b(t, params_, {""});
  ad::Var v = encode_graph(b, params_.config, t.constant(x.single()));
  FeatureSequence out;
  out.role = FeatureRole::Encoded;
  out.frame_period = x.frame_period;
  out.channels = {t.value(v)};
  return out;
}

ActivityMatrix Network::detect(const FeatureSequence& xhat, const EmbeddingSet& emb) const {
  ad::Tape t;
  Binder b(t, params_, {""});
  ad::Var v = detect_graph(b, params_.config, t.constant(xhat.single()), t.constant(emb.vectors));
  ActivityMatrix out;
  out.values = t.value(v);
  out.kind = ActivityKind::Probability;
  out.frame_period = xhat.frame_period;
  return out;
}

EmbeddingSet Network::represent(const FeatureSequence& x, const ActivityMatrix& acts) const {
  ad::Tape t;
  Binder b(t, params_, {""});
  std::vector<bool> valid;
  ad::Var v = represent_graph(b, params_.config, t.constant(x.single()), acts.values, &valid);
  EmbeddingSet out;
  out.vectors = t.value(v);
  out.valid = std::move(valid);
  return out;
}

}  // namespace snd
