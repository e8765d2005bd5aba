#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

#include "doctest.h"
#include "helpers.hpp"
#include "snd/wav.hpp"

using namespace snd;

namespace {

void put32(std::vector<unsigned char>& b, uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xff));
}
void put16(std::vector<unsigned char>& b, uint16_t v) {
  b.push_back(static_cast<unsigned char>(v & 0xff));
  b.push_back(static_cast<unsigned char>((v >> 8) & 0xff));
}

}  // namespace

TEST_SUITE("wav") {

TEST_CASE("16-bit round trip within quantization error") {
  const std::string dir = test::temp_dir("wav_rt");
  Audio a;
  a.sample_rate = 16000;
  a.channels.resize(2);
  Rng rng(3);
  for (int t = 0; t < 1600; ++t) {
    a.channels[0].push_back(std::sin(2 * 3.14159265358979 * 440.0 * t / 16000.0) * 0.8);
    a.channels[1].push_back(rng.uniform(-0.9, 0.9));
  }
  write_wav(dir + "/a.wav", a);
  const Audio b = read_wav(dir + "/a.wav");
  REQUIRE(b.channel_count() == 2);
  REQUIRE(b.frames() == 1600);
  CHECK(b.sample_rate == 16000);
  double max_err = 0;
  for (int c = 0; c < 2; ++c)
    for (int t = 0; t < 1600; ++t)
      max_err = std::max(max_err,
                         std::abs(a.channels[static_cast<size_t>(c)][static_cast<size_t>(t)] -
                                  b.channels[static_cast<size_t>(c)][static_cast<size_t>(t)]));
  CHECK(max_err <= 1.0 / 32768.0 + 1e-12);
}

TEST_CASE("clipping on write") {
  const std::string dir = test::temp_dir("wav_clip");
  Audio a;
  a.channels = {{2.0, -2.0, 0.0}};
  write_wav(dir + "/c.wav", a);
  const Audio b = read_wav(dir + "/c.wav");
  CHECK(b.channels[0][0] == doctest::Approx(32767.0 / 32768.0));
  CHECK(b.channels[0][1] == doctest::Approx(-1.0));
  CHECK(b.channels[0][2] == doctest::Approx(0.0));
}

TEST_CASE("reads 32-bit float files") {
  const std::string dir = test::temp_dir("wav_float");
  const std::vector<float> samples = {0.5f, -0.25f, 1.0f, -1.0f};
  std::vector<unsigned char> bytes;
  bytes.insert(bytes.end(), {'R', 'I', 'F', 'F'});
  put32(bytes, 36 + 16);
  bytes.insert(bytes.end(), {'W', 'A', 'V', 'E'});
  bytes.insert(bytes.end(), {'f', 'm', 't', ' '});
  put32(bytes, 16);
  put16(bytes, 3);
  put16(bytes, 1);
  put32(bytes, 8000);
  put32(bytes, 8000 * 4);
  put16(bytes, 4);
  put16(bytes, 32);
  bytes.insert(bytes.end(), {'d', 'a', 't', 'a'});
  put32(bytes, 16);
  for (float f : samples) {
    uint32_t u;
    std::memcpy(&u, &f, 4);
    put32(bytes, u);
  }
  std::ofstream out(dir + "/f.wav", std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  out.close();

  const Audio a = read_wav(dir + "/f.wav");
  REQUIRE(a.channel_count() == 1);
  REQUIRE(a.frames() == 4);
  CHECK(a.sample_rate == 8000);
  for (int i = 0; i < 4; ++i)
    CHECK(a.channels[0][static_cast<size_t>(i)] == doctest::Approx(samples[static_cast<size_t>(i)]));
}

TEST_CASE("rejects bad input") {
  const std::string dir = test::temp_dir("wav_bad");
  CHECK_THROWS(read_wav(dir + "/missing.wav"));
  std::ofstream out(dir + "/junk.wav", std::ios::binary);
  out << "this is not a wav file at all, not even close";
  out.close();
  CHECK_THROWS(read_wav(dir + "/junk.wav"));
  Audio empty;
  CHECK_THROWS(write_wav(dir + "/e.wav", empty));
}

}  // TEST_SUITE
