// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

#include "fmdd/model.hpp"

namespace fmdd {

inline constexpr char kCheckpointMagic[8] = {'F', 'M', 'D', 'D', 'C', 'K', 'P', '1'};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Layout (little-endian): magic, u32 config length, config text (key=value
// lines), u32 parameter count, then per parameter: u32 name length, name,
// u32 rank, u32 extents, u8 trainable, float32 values.

void save_checkpoint(const Model& model, const std::string& path);

/// Rebuilds the model from the stored config, then loads values and flags.
Model load_checkpoint(const std::string& path);

/// Loads into an existing model. Throws CheckpointError on unknown names,
/// missing names, or shape mismatches (naming the parameter).
void load_checkpoint_into(Model& model, const std::string& path);

}  // namespace fmdd
