#include "snd/wav.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace snd {

namespace {

uint32_t read_u32(const unsigned char* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
         (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

uint16_t read_u16(const unsigned char* p) {
  return static_cast<uint16_t>(p[0] | (p[1] << 8));
}

void put_u32(std::vector<unsigned char>& buf, uint32_t v) {
  buf.push_back(static_cast<unsigned char>(v & 0xff));
  buf.push_back(static_cast<unsigned char>((v >> 8) & 0xff));
  buf.push_back(static_cast<unsigned char>((v >> 16) & 0xff));
  buf.push_back(static_cast<unsigned char>((v >> 24) & 0xff));
}

void put_u16(std::vector<unsigned char>& buf, uint16_t v) {
  buf.push_back(static_cast<unsigned char>(v & 0xff));
  buf.push_back(static_cast<unsigned char>((v >> 8) & 0xff));
}

}  // namespace

Audio read_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open wav file: " + path);
  std::vector<unsigned char> data((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (data.size() < 44 || std::memcmp(data.data(), "RIFF", 4) != 0 ||
      std::memcmp(data.data() + 8, "WAVE", 4) != 0)
    throw std::runtime_error("not a RIFF/WAVE file: " + path);

  uint16_t format = 0, num_channels = 0, bits = 0;
  uint32_t sample_rate = 0;
  const unsigned char* samples = nullptr;
  size_t sample_bytes = 0;

  size_t pos = 12;
  while (pos + 8 <= data.size()) {
    const char* id = reinterpret_cast<const char*>(data.data() + pos);
    const uint32_t size = read_u32(data.data() + pos + 4);
    if (pos + 8 + size > data.size())
      throw std::runtime_error("truncated wav chunk in: " + path);
    const unsigned char* body = data.data() + pos + 8;
    if (std::memcmp(id, "fmt ", 4) == 0) {
      if (size < 16) throw std::runtime_error("malformed fmt chunk in: " + path);
      format = read_u16(body);
      num_channels = read_u16(body + 2);
      sample_rate = read_u32(body + 4);
      bits = read_u16(body + 14);
    } else if (std::memcmp(id, "data", 4) == 0) {
      samples = body;
      sample_bytes = size;
    }
    pos += 8 + size + (size & 1);
  }

  if (num_channels == 0 || sample_rate == 0)
    throw std::runtime_error("wav file missing fmt chunk: " + path);
  if (!samples) throw std::runtime_error("wav file missing data chunk: " + path);
  const bool pcm16 = format == 1 && bits == 16;
  const bool float32 = format == 3 && bits == 32;
  if (!pcm16 && !float32)
    throw std::runtime_error("unsupported wav encoding (want 16-bit PCM or 32-bit float): " + path);

  const size_t bytes_per_sample = pcm16 ? 2 : 4;
  const size_t frame_bytes = bytes_per_sample * num_channels;
  const size_t frames = sample_bytes / frame_bytes;

  Audio audio;
  audio.sample_rate = static_cast<int>(sample_rate);
  audio.channels.assign(num_channels, std::vector<Scalar>(frames));
  for (size_t t = 0; t < frames; ++t) {
    for (int c = 0; c < num_channels; ++c) {
      const unsigned char* p = samples + t * frame_bytes + c * bytes_per_sample;
      if (pcm16) {
        const int16_t v = static_cast<int16_t>(read_u16(p));
        audio.channels[c][t] = static_cast<Scalar>(v) / 32768.0;
      } else {
        float f;
        std::memcpy(&f, p, 4);
        audio.channels[c][t] = static_cast<Scalar>(f);
      }
    }
  }
  return audio;
}

void write_wav(const std::string& path, const Audio& audio) {
  if (audio.channels.empty()) throw std::runtime_error("refusing to write wav with no channels");
  const size_t frames = audio.channels[0].size();
  for (const auto& ch : audio.channels)
    if (ch.size() != frames) throw std::runtime_error("wav channels differ in length");
  const int num_channels = audio.channel_count();

  const uint32_t data_size = static_cast<uint32_t>(frames * num_channels * 2);
  std::vector<unsigned char> buf;
  buf.reserve(44 + data_size);
  buf.insert(buf.end(), {'R', 'I', 'F', 'F'});
  put_u32(buf, 36 + data_size);
  buf.insert(buf.end(), {'W', 'A', 'V', 'E'});
  buf.insert(buf.end(), {'f', 'm', 't', ' '});
  put_u32(buf, 16);
  put_u16(buf, 1);
  put_u16(buf, static_cast<uint16_t>(num_channels));
  put_u32(buf, static_cast<uint32_t>(audio.sample_rate));
  put_u32(buf, static_cast<uint32_t>(audio.sample_rate * num_channels * 2));
  put_u16(buf, static_cast<uint16_t>(num_channels * 2));
  put_u16(buf, 16);
  buf.insert(buf.end(), {'d', 'a', 't', 'a'});
  put_u32(buf, data_size);

  for (size_t t = 0; t < frames; ++t) {
    for (int c = 0; c < num_channels; ++c) {
      const double x = std::clamp(audio.channels[c][t], Scalar(-1), Scalar(1));
      const int v = static_cast<int>(std::lround(x * 32768.0));
      put_u16(buf, static_cast<uint16_t>(static_cast<int16_t>(std::clamp(v, -32768, 32767))));
    }
  }

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open wav file for writing: " + path);
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!out) throw std::runtime_error("failed writing wav file: " + path);
}

}  // namespace snd
