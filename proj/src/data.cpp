// SPDX-License-Identifier: Apache-2.0
#include "fmdd/data.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <iterator>

#include "fmdd/binary_io.hpp"
#include "fmdd/random.hpp"

namespace fmdd {

namespace io {

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("short write to " + path);
}

}  // namespace io

std::size_t Dataset::frame_values() const {
  return static_cast<std::size_t>(time_steps) * frame_dims[0] * frame_dims[1] * frame_dims[2];
}

std::size_t Dataset::spec_values() const {
  return static_cast<std::size_t>(spec_dims[0]) * spec_dims[1] * spec_dims[2];
}

VisualClip Dataset::clip(std::size_t i) const {
  const auto& f = samples.at(i).frames;
  return {Tensor({time_steps, frame_dims[0], frame_dims[1], frame_dims[2]},
                 std::vector<double>(f.begin(), f.end()))};
}

AudioSpectrogram Dataset::spectrogram(std::size_t i) const {
  const auto& s = samples.at(i).spectrogram;
  return {Tensor({spec_dims[0], spec_dims[1], spec_dims[2]}, std::vector<double>(s.begin(), s.end()))};
}

ModalityMask Dataset::effective_mask(std::size_t i, const ModalityMask& scenario) const {
  const auto avail = samples.at(i).availability;
  return {scenario.vision && (avail & kVisionAvailable), scenario.audio && (avail & kAudioAvailable)};
}

std::vector<int> Dataset::labels() const {
  std::vector<int> y;
  y.reserve(samples.size());
  for (const auto& s : samples) y.push_back(s.label);
  return y;
}

void Dataset::check_compatible(const ModelConfig& cfg) const {
  const bool ok = time_steps == cfg.time_steps &&
                  std::equal(frame_dims.begin(), frame_dims.end(), cfg.frame_dims.begin()) &&
                  std::equal(spec_dims.begin(), spec_dims.end(), cfg.spec_dims.begin());
  if (!ok)
    throw std::invalid_argument("dataset dims (T=" + std::to_string(time_steps) +
                                ") do not match preset '" + cfg.preset + "'");
}

Dataset subset(const Dataset& data, const std::vector<std::size_t>& indices) {
  Dataset out = data;
  out.samples.clear();
  out.samples.reserve(indices.size());
  for (auto i : indices) out.samples.push_back(data.samples.at(i));
  return out;
}

std::string to_string(SignalMode mode) {
  switch (mode) {
    case SignalMode::kXor: return "xor";
    case SignalMode::kRedundant: return "redundant";
    case SignalMode::kComplementary: return "complementary";
  }
  return "?";
}

SignalMode parse_signal_mode(const std::string& s) {
  if (s == "xor") return SignalMode::kXor;
  if (s == "redundant") return SignalMode::kRedundant;
  if (s == "complementary") return SignalMode::kComplementary;
  throw std::invalid_argument("unknown signal mode: " + s + " (expected xor|redundant|complementary)");
}

SynthSpec SynthSpec::for_config(const ModelConfig& cfg) {
  SynthSpec s;
  s.time_steps = cfg.time_steps;
  s.frame_dims = cfg.frame_dims;
  s.spec_dims = cfg.spec_dims;
  return s;
}

void SynthSpec::validate() const {
  if (n_samples == 0) throw std::invalid_argument("synth: n_samples must be >= 1");
  if (time_steps == 0) throw std::invalid_argument("synth: time_steps must be >= 1");
  for (auto e : frame_dims)
    if (e == 0) throw std::invalid_argument("synth: frame dims must be positive");
  for (auto e : spec_dims)
    if (e == 0) throw std::invalid_argument("synth: spectrogram dims must be positive");
  if (spec_dims[2] < 8) throw std::invalid_argument("synth: need at least 8 frequency bins for the band pattern");
  if (noise_sigma < 0.0) throw std::invalid_argument("synth: noise_sigma must be >= 0");
}

Dataset gen_synthetic(const SynthSpec& spec, std::vector<PlantedBits>* bits) {
  spec.validate();
  Dataset data;
  data.time_steps = static_cast<std::uint32_t>(spec.time_steps);
  for (int i = 0; i < 3; ++i) {
    data.frame_dims[i] = static_cast<std::uint32_t>(spec.frame_dims[i]);
    data.spec_dims[i] = static_cast<std::uint32_t>(spec.spec_dims[i]);
  }
  const std::size_t frame_px = spec.frame_dims[0] * spec.frame_dims[1] * spec.frame_dims[2];
  const std::size_t spec_c = spec.spec_dims[0], spec_t = spec.spec_dims[1], spec_f = spec.spec_dims[2];
  const double offset = spec.domain_shift ? spec.domain_shift->brightness_offset : 0.0;
  const double sigma = spec.noise_sigma * (spec.domain_shift ? spec.domain_shift->noise_scale : 1.0);

  SplitMix64 rng(spec.seed);
  if (bits) bits->clear();
  data.samples.reserve(spec.n_samples);
  for (std::size_t n = 0; n < spec.n_samples; ++n) {
    PlantedBits b;
    int label = 0;
    switch (spec.mode) {
      case SignalMode::kXor:
        b.vision_bit = rng.bit();
        b.audio_bit = rng.bit();
        label = b.vision_bit ^ b.audio_bit;
        break;
      case SignalMode::kRedundant:
        b.vision_bit = rng.bit();
        b.audio_bit = b.vision_bit;
        label = b.vision_bit;
        break;
      case SignalMode::kComplementary: {
        label = rng.bit();
        const bool vision_carries = rng.bit();
        b.vision_bit = b.audio_bit = label;
        b.vision_planted = vision_carries;
        b.audio_planted = !vision_carries;
        break;
      }
    }

    Sample s;
    s.label = static_cast<std::uint8_t>(label);
    s.frames.resize(spec.time_steps * frame_px);
    for (std::size_t t = 0; t < spec.time_steps; ++t) {
      const double level =
          b.vision_planted ? spec.amplitude * (((t + static_cast<std::size_t>(b.vision_bit)) % 2 == 0) ? 1.0 : -1.0)
                           : 0.0;
      for (std::size_t p = 0; p < frame_px; ++p)
        s.frames[t * frame_px + p] = static_cast<float>(level + offset + sigma * rng.normal());
    }

    // Band over [f/8, 3f/8) for bit 0 and [5f/8, 7f/8) for bit 1, all time rows.
    const std::size_t band_lo = b.audio_bit ? 5 * spec_f / 8 : spec_f / 8;
    const std::size_t band_hi = b.audio_bit ? 7 * spec_f / 8 : 3 * spec_f / 8;
    s.spectrogram.resize(spec_c * spec_t * spec_f);
    for (std::size_t c = 0; c < spec_c; ++c)
      for (std::size_t t = 0; t < spec_t; ++t)
        for (std::size_t f = 0; f < spec_f; ++f) {
          const bool in_band = b.audio_planted && f >= band_lo && f < band_hi;
          const double level = in_band ? spec.amplitude : 0.0;
          s.spectrogram[(c * spec_t + t) * spec_f + f] =
              static_cast<float>(level + offset + sigma * rng.normal());
        }
    data.samples.push_back(std::move(s));
    if (bits) bits->push_back(b);
  }
  return data;
}

namespace {

constexpr std::size_t kHeaderBytes = 8 + 8 * 4;

}  // namespace

std::vector<std::uint8_t> encode_dataset(const Dataset& data) {
  std::vector<std::uint8_t> out;
  const std::size_t fv = data.frame_values(), sv = data.spec_values();
  out.reserve(kHeaderBytes + data.size() * (2 + 4 * (fv + sv)));
  io::put_bytes(out, kDatasetMagic, sizeof kDatasetMagic);
  io::put_u32(out, static_cast<std::uint32_t>(data.size()));
  io::put_u32(out, data.time_steps);
  for (auto e : data.frame_dims) io::put_u32(out, e);
  for (auto e : data.spec_dims) io::put_u32(out, e);
  for (const auto& s : data.samples) {
    if (s.frames.size() != fv || s.spectrogram.size() != sv)
      throw DatasetError(DatasetError::Code::kSizeMismatch, "sample payload does not match header dims");
    io::put_u8(out, s.label);
    io::put_u8(out, s.availability);
    for (float f : s.frames) io::put_f32(out, f);
    for (float f : s.spectrogram) io::put_f32(out, f);
  }
  return out;
}

Dataset decode_dataset(const std::vector<std::uint8_t>& bytes) {
  using Code = DatasetError::Code;
  if (bytes.size() < sizeof kDatasetMagic || std::memcmp(bytes.data(), kDatasetMagic, sizeof kDatasetMagic) != 0)
    throw DatasetError(Code::kBadMagic, "bad magic: not an FMDD0001 dataset");
  auto on_short = [](std::size_t) -> void {
    throw DatasetError(Code::kTruncatedPayload, "truncated payload");
  };
  io::Reader in(bytes, on_short);
  in.str(sizeof kDatasetMagic);

  Dataset data;
  const std::uint32_t count = in.u32();
  data.time_steps = in.u32();
  for (auto& e : data.frame_dims) e = in.u32();
  for (auto& e : data.spec_dims) e = in.u32();

  const std::size_t per_sample = 2 + 4 * (data.frame_values() + data.spec_values());
  const std::size_t expected = kHeaderBytes + static_cast<std::size_t>(count) * per_sample;
  if (bytes.size() < expected)
    throw DatasetError(Code::kTruncatedPayload, "truncated payload: header declares " + std::to_string(expected) +
                                                    " bytes, file has " + std::to_string(bytes.size()));
  if (bytes.size() > expected)
    throw DatasetError(Code::kSizeMismatch, "size mismatch: " + std::to_string(bytes.size() - expected) +
                                                " trailing bytes after declared payload");

  data.samples.resize(count);
  for (auto& s : data.samples) {
    s.label = in.u8();
    s.availability = in.u8();
    s.frames.resize(data.frame_values());
    for (auto& f : s.frames) f = in.f32();
    s.spectrogram.resize(data.spec_values());
    for (auto& f : s.spectrogram) f = in.f32();
  }
  return data;
}

void write_dataset(const std::string& path, const Dataset& data) {
  const auto bytes = encode_dataset(data);
  try {
    io::write_file(path, bytes);
  } catch (const std::runtime_error& e) {
    throw DatasetError(DatasetError::Code::kIo, e.what());
  }
}

Dataset read_dataset(const std::string& path) {
  std::vector<std::uint8_t> bytes;
  try {
    bytes = io::read_file(path);
  } catch (const std::runtime_error& e) {
    throw DatasetError(DatasetError::Code::kIo, e.what());
  }
  return decode_dataset(bytes);
}

}  // namespace fmdd
