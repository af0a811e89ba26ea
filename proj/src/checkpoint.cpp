// SPDX-License-Identifier: Apache-2.0
#include "fmdd/checkpoint.hpp"

#include <cstring>
#include <set>

#include "fmdd/binary_io.hpp"

namespace fmdd {

namespace {

struct StoredParam {
  std::string name;
  Shape shape;
  bool trainable = false;
  std::vector<float> values;
};

struct StoredCheckpoint {
  std::string config_text;
  std::vector<StoredParam> params;
};

StoredCheckpoint read_stored(const std::string& path) {
  std::vector<std::uint8_t> bytes;
  try {
    bytes = io::read_file(path);
  } catch (const std::runtime_error& e) {
    throw CheckpointError(e.what());
  }
  if (bytes.size() < sizeof kCheckpointMagic ||
      std::memcmp(bytes.data(), kCheckpointMagic, sizeof kCheckpointMagic) != 0)
    throw CheckpointError("bad magic: " + path + " is not a checkpoint");
  io::Reader in(bytes, [&](std::size_t) -> void { throw CheckpointError("truncated checkpoint: " + path); });
  in.str(sizeof kCheckpointMagic);

  StoredCheckpoint ck;
  ck.config_text = in.str(in.u32());
  const std::uint32_t count = in.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    StoredParam p;
    p.name = in.str(in.u32());
    const std::uint32_t rank = in.u32();
    for (std::uint32_t r = 0; r < rank; ++r) p.shape.push_back(in.u32());
    p.trainable = in.u8() != 0;
    p.values.resize(numel(p.shape));
    for (auto& v : p.values) v = in.f32();
    ck.params.push_back(std::move(p));
  }
  if (in.remaining() != 0) throw CheckpointError("trailing bytes in checkpoint: " + path);
  return ck;
}

}  // namespace

void save_checkpoint(const Model& model, const std::string& path) {
  std::vector<std::uint8_t> out;
  io::put_bytes(out, kCheckpointMagic, sizeof kCheckpointMagic);
  const std::string cfg = serialize_config(model.config());
  io::put_u32(out, static_cast<std::uint32_t>(cfg.size()));
  io::put_bytes(out, cfg.data(), cfg.size());
  const auto& params = model.params().params();
  io::put_u32(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    io::put_u32(out, static_cast<std::uint32_t>(p.name.size()));
    io::put_bytes(out, p.name.data(), p.name.size());
    io::put_u32(out, static_cast<std::uint32_t>(p.value.rank()));
    for (auto e : p.value.shape()) io::put_u32(out, static_cast<std::uint32_t>(e));
    io::put_u8(out, p.trainable() ? 1 : 0);
    for (double v : p.value.data()) io::put_f32(out, static_cast<float>(v));
  }
  try {
    io::write_file(path, out);
  } catch (const std::runtime_error& e) {
    throw CheckpointError(e.what());
  }
}

namespace {

void apply_stored(Model& model, const StoredCheckpoint& ck) {
  auto& store = model.params();
  std::set<std::string> seen;
  for (const auto& sp : ck.params) {
    if (!store.contains(sp.name)) throw CheckpointError("unknown parameter name in checkpoint: " + sp.name);
    Parameter& p = store.param(sp.name);
    if (p.value.shape() != sp.shape)
      throw CheckpointError("shape mismatch for parameter " + sp.name + ": checkpoint " +
                            shape_str(sp.shape) + " vs model " + shape_str(p.value.shape()));
    auto dst = p.value.mutable_data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = sp.values[i];
    p.set_trainable(sp.trainable);
    p.value.zero_grad();
    seen.insert(sp.name);
  }
  for (const auto& p : store.params())
    if (!seen.count(p.name)) throw CheckpointError("checkpoint is missing parameter " + p.name);
}

}  // namespace

Model load_checkpoint(const std::string& path) {
  const StoredCheckpoint ck = read_stored(path);
  ModelConfig cfg;
  try {
    cfg = parse_config(ck.config_text);
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("bad checkpoint config: ") + e.what());
  }
  Model model(cfg, 0);
  apply_stored(model, ck);
  return model;
}

void load_checkpoint_into(Model& model, const std::string& path) { apply_stored(model, read_stored(path)); }

}  // namespace fmdd
