// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "fmdd/backbone.hpp"
#include "fmdd/config.hpp"
#include "fmdd/model.hpp"

namespace fmdd {

/// Availability byte bits.
inline constexpr std::uint8_t kVisionAvailable = 0x1;
inline constexpr std::uint8_t kAudioAvailable = 0x2;

struct Sample {
  std::uint8_t label = 0;  // 1 = lie (positive class)
  std::uint8_t availability = kVisionAvailable | kAudioAvailable;
  std::vector<float> frames;       // T x C x H x W
  std::vector<float> spectrogram;  // C x time x frequency

  friend bool operator==(const Sample&, const Sample&) = default;
};

struct Dataset {
  std::uint32_t time_steps = 0;
  std::array<std::uint32_t, 3> frame_dims{};
  std::array<std::uint32_t, 3> spec_dims{};
  std::vector<Sample> samples;

  std::size_t size() const { return samples.size(); }
  std::size_t frame_values() const;
  std::size_t spec_values() const;

  VisualClip clip(std::size_t i) const;
  AudioSpectrogram spectrogram(std::size_t i) const;
  /// Scenario mask restricted further by the sample's availability byte.
  ModalityMask effective_mask(std::size_t i, const ModalityMask& scenario) const;
  std::vector<int> labels() const;

  /// Throws std::invalid_argument when dims differ from the model's.
  void check_compatible(const ModelConfig& cfg) const;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

/// Subset by index.
Dataset subset(const Dataset& data, const std::vector<std::size_t>& indices);

// ---- Synthetic planted-signal data --------------------------------------

enum class SignalMode { kXor, kRedundant, kComplementary };

std::string to_string(SignalMode mode);
SignalMode parse_signal_mode(const std::string& s);

struct DomainShift {
  double brightness_offset = 0.5;
  double noise_scale = 1.5;
};

struct SynthSpec {
  std::size_t n_samples = 64;
  std::size_t time_steps = 4;
  std::array<std::size_t, 3> frame_dims{1, 16, 16};
  std::array<std::size_t, 3> spec_dims{1, 64, 48};
  SignalMode mode = SignalMode::kXor;
  double amplitude = 1.0;
  double noise_sigma = 0.5;
  std::optional<DomainShift> domain_shift;
  std::uint64_t seed = 0;

  /// Dims taken from a model preset.
  static SynthSpec for_config(const ModelConfig& cfg);
  void validate() const;
};

/// Hidden bits drawn for one sample, kept for tests of the construction.
struct PlantedBits {
  int vision_bit = 0;
  int audio_bit = 0;
  bool vision_planted = true;
  bool audio_planted = true;
};

/// Vision bit: phase of a per-frame brightness square wave. Audio bit:
/// position of a bright frequency band (lower vs upper part of the
/// spectrum). Label per mode: XOR -> v ^ a; REDUNDANT -> v (== a);
/// COMPLEMENTARY -> on each sample exactly one modality carries the label
/// and the other carries no planted pattern.
Dataset gen_synthetic(const SynthSpec& spec, std::vector<PlantedBits>* bits = nullptr);

// ---- Dataset file --------------------------------------------------------

inline constexpr char kDatasetMagic[8] = {'F', 'M', 'D', 'D', '0', '0', '0', '1'};

class DatasetError : public std::runtime_error {
 public:
  enum class Code { kIo, kBadMagic, kTruncatedPayload, kSizeMismatch };
  DatasetError(Code code, const std::string& msg) : std::runtime_error(msg), code_(code) {}
  Code code() const { return code_; }

 private:
  Code code_;
};

std::vector<std::uint8_t> encode_dataset(const Dataset& data);
Dataset decode_dataset(const std::vector<std::uint8_t>& bytes);
void write_dataset(const std::string& path, const Dataset& data);
Dataset read_dataset(const std::string& path);

}  // namespace fmdd
