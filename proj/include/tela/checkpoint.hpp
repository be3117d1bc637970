#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "tela/deform.hpp"
#include "tela/field.hpp"
#include "tela/scene.hpp"

namespace tela {

// On-disk layout (little-endian):
//   "TELA" | version u32 | scene hash 32 bytes |
//   repeated { name length u32 | name bytes | count u64 | float32 * count } |
//   crc32 of everything above
constexpr uint32_t kCheckpointVersion = 1;

struct CheckpointBlock {
  std::string name;
  std::vector<float> values;
};

struct Checkpoint {
  std::array<uint8_t, 32> scene_hash{};
  std::vector<CheckpointBlock> blocks;

  const CheckpointBlock* find(const std::string& name) const;
};

std::array<uint8_t, 32> scene_hash(const SceneConfig& scene);

// Writes to a temporary file in the same directory, then renames, so a crash
// never leaves a half-written checkpoint at `path`.
void save_checkpoint(const std::string& path, const Checkpoint& ck);

// Verifies magic, version and trailing crc; throws IoError on any mismatch
// or truncation.
Checkpoint load_checkpoint(const std::string& path);

// A checkpoint stores one named layer: its field parameters, enough spec
// blocks to rebuild the field without outside knowledge, and optionally a
// deformation.
Checkpoint pack_layer(const std::string& layer_name, const RadianceField& field,
                      const DeformationField* deform, const SceneConfig& scene);

struct UnpackedLayer {
  std::string name;
  RadianceField field;
  std::optional<DeformationField> deform;
};

// When `expect` is given the stored scene hash must match it.
UnpackedLayer unpack_layer(const Checkpoint& ck, const SceneConfig* expect);

}  // namespace tela
