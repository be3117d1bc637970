#include "tela/checkpoint.hpp"

#include <openssl/sha.h>
#include <zlib.h>

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "tela/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint serialization assumes a little-endian host");

namespace tela {

const CheckpointBlock* Checkpoint::find(const std::string& name) const {
  for (const auto& b : blocks)
    if (b.name == name) return &b;
  return nullptr;
}

std::array<uint8_t, 32> scene_hash(const SceneConfig& scene) {
  std::string canon = canonical_scene_string(scene);
  std::array<uint8_t, 32> out{};
  SHA256(reinterpret_cast<const unsigned char*>(canon.data()), canon.size(), out.data());
  return out;
}

namespace {

void append(std::string& buf, const void* data, size_t n) {
  buf.append(reinterpret_cast<const char*>(data), n);
}

template <typename T>
void append_scalar(std::string& buf, T v) {
  append(buf, &v, sizeof v);
}

uint32_t crc_of(const std::string& buf) {
  return static_cast<uint32_t>(
      ::crc32(0L, reinterpret_cast<const Bytef*>(buf.data()), static_cast<uInt>(buf.size())));
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::string buf;
  append(buf, "TELA", 4);
  append_scalar(buf, kCheckpointVersion);
  append(buf, ck.scene_hash.data(), ck.scene_hash.size());
  for (const auto& b : ck.blocks) {
    append_scalar(buf, static_cast<uint32_t>(b.name.size()));
    append(buf, b.name.data(), b.name.size());
    append_scalar(buf, static_cast<uint64_t>(b.values.size()));
    append(buf, b.values.data(), b.values.size() * sizeof(float));
  }
  append_scalar(buf, crc_of(buf));

  std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp + " for writing");
    out.write(buf.data(), std::streamsize(buf.size()));
    if (!out) throw IoError("short write to " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    std::remove(tmp.c_str());
    throw IoError("cannot rename " + tmp + " to " + path);
  }
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path);
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  const size_t header = 4 + 4 + 32;
  if (buf.size() < header + 4) throw IoError("checkpoint " + path + " is truncated");
  if (std::memcmp(buf.data(), "TELA", 4) != 0)
    throw IoError("checkpoint " + path + " has a bad magic number");

  uint32_t version;
  std::memcpy(&version, buf.data() + 4, 4);
  if (version != kCheckpointVersion)
    throw IoError("checkpoint " + path + " has unsupported version " + std::to_string(version));

  std::string body = buf.substr(0, buf.size() - 4);
  uint32_t stored_crc;
  std::memcpy(&stored_crc, buf.data() + buf.size() - 4, 4);
  if (crc_of(body) != stored_crc) throw IoError("checkpoint " + path + " fails its crc check");

  Checkpoint ck;
  std::memcpy(ck.scene_hash.data(), buf.data() + 8, 32);

  size_t off = header;
  const size_t end = buf.size() - 4;
  while (off < end) {
    if (off + 4 > end) throw IoError("checkpoint " + path + " is truncated inside a block header");
    uint32_t name_len;
    std::memcpy(&name_len, buf.data() + off, 4);
    off += 4;
    if (name_len > 1u << 16 || off + name_len > end)
      throw IoError("checkpoint " + path + " has an oversized block name");
    std::string name(buf.data() + off, name_len);
    off += name_len;
    if (off + 8 > end) throw IoError("checkpoint " + path + " is truncated inside a block header");
    uint64_t count;
    std::memcpy(&count, buf.data() + off, 8);
    off += 8;
    if (count > (end - off) / sizeof(float))
      throw IoError("checkpoint " + path + " block \"" + name + "\" overruns the file");
    CheckpointBlock blk;
    blk.name = std::move(name);
    blk.values.resize(size_t(count));
    std::memcpy(blk.values.data(), buf.data() + off, size_t(count) * sizeof(float));
    off += size_t(count) * sizeof(float);
    ck.blocks.push_back(std::move(blk));
  }
  return ck;
}

namespace {

std::vector<float> name_to_floats(const std::string& s) {
  std::vector<float> v;
  v.reserve(s.size());
  for (unsigned char c : s) v.push_back(float(c));
  return v;
}

std::string floats_to_name(const std::vector<float>& v) {
  std::string s;
  for (float f : v) {
    int c = int(f);
    if (c < 1 || c > 255) throw IoError("checkpoint layer name holds a bad character code");
    s.push_back(char(c));
  }
  return s;
}

void copy_params(const Checkpoint& ck, const std::string& prefix, ParamPack& pack) {
  for (const auto& b : pack.blocks) {
    const CheckpointBlock* src = ck.find(prefix + b.name);
    if (!src) throw IoError("checkpoint is missing block \"" + prefix + b.name + "\"");
    if (src->values.size() != b.size)
      throw IoError("checkpoint block \"" + prefix + b.name + "\" has " +
                    std::to_string(src->values.size()) + " values, expected " +
                    std::to_string(b.size));
    std::copy(src->values.begin(), src->values.end(), pack.values.begin() + b.offset);
  }
}

}  // namespace

Checkpoint pack_layer(const std::string& layer_name, const RadianceField& field,
                      const DeformationField* deform, const SceneConfig& scene) {
  Checkpoint ck;
  ck.scene_hash = scene_hash(scene);
  ck.blocks.push_back({"meta/name", name_to_floats(layer_name)});
  ck.blocks.push_back({"spec/grid",
                       {float(field.grid.levels), float(field.grid.features),
                        float(field.grid.table_size), float(field.grid.base_resolution),
                        float(field.grid.max_resolution)}});
  ck.blocks.push_back({"spec/mlp", {float(field.mlp.hidden_layers), float(field.mlp.hidden_width)}});
  ck.blocks.push_back({"aabb",
                       {float(field.aabb.lo.x), float(field.aabb.lo.y), float(field.aabb.lo.z),
                        float(field.aabb.hi.x), float(field.aabb.hi.y), float(field.aabb.hi.z)}});
  for (const auto& b : field.params.blocks) {
    CheckpointBlock blk;
    blk.name = b.name;
    blk.values.assign(field.params.values.begin() + b.offset,
                      field.params.values.begin() + b.offset + b.size);
    ck.blocks.push_back(std::move(blk));
  }
  if (deform) {
    ck.blocks.push_back({"deform/spec",
                         {float(deform->spec.frequencies), float(deform->spec.hidden_layers),
                          float(deform->spec.hidden_width), float(deform->spec.max_displacement)}});
    for (const auto& b : deform->params.blocks) {
      CheckpointBlock blk;
      blk.name = "deform/" + b.name;
      blk.values.assign(deform->params.values.begin() + b.offset,
                        deform->params.values.begin() + b.offset + b.size);
      ck.blocks.push_back(std::move(blk));
    }
  }
  return ck;
}

UnpackedLayer unpack_layer(const Checkpoint& ck, const SceneConfig* expect) {
  if (expect) {
    if (ck.scene_hash != scene_hash(*expect))
      throw IoError("checkpoint was written for a different scene (hash mismatch)");
  }
  const CheckpointBlock* name = ck.find("meta/name");
  const CheckpointBlock* sgrid = ck.find("spec/grid");
  const CheckpointBlock* smlp = ck.find("spec/mlp");
  const CheckpointBlock* aabb = ck.find("aabb");
  if (!name || !sgrid || !smlp || !aabb)
    throw IoError("checkpoint lacks the layer description blocks");
  if (sgrid->values.size() != 5 || smlp->values.size() != 2 || aabb->values.size() != 6)
    throw IoError("checkpoint layer description has the wrong shape");

  UnpackedLayer out;
  out.name = floats_to_name(name->values);

  GridSpec grid;
  grid.levels = int(sgrid->values[0]);
  grid.features = int(sgrid->values[1]);
  grid.table_size = uint32_t(sgrid->values[2]);
  grid.base_resolution = int(sgrid->values[3]);
  grid.max_resolution = int(sgrid->values[4]);
  MlpSpec mlp;
  mlp.hidden_layers = int(smlp->values[0]);
  mlp.hidden_width = int(smlp->values[1]);
  Aabb box{{double(aabb->values[0]), double(aabb->values[1]), double(aabb->values[2])},
           {double(aabb->values[3]), double(aabb->values[4]), double(aabb->values[5])}};

  out.field = init_field(grid, mlp, box, 0);
  copy_params(ck, "", out.field.params);

  if (const CheckpointBlock* dspec = ck.find("deform/spec")) {
    if (dspec->values.size() != 4) throw IoError("checkpoint deform description has the wrong shape");
    DeformSpec ds;
    ds.frequencies = int(dspec->values[0]);
    ds.hidden_layers = int(dspec->values[1]);
    ds.hidden_width = int(dspec->values[2]);
    ds.max_displacement = double(dspec->values[3]);
    out.deform = init_deform(ds, 0);
    copy_params(ck, "deform/", out.deform->params);
  }
  return out;
}

}  // namespace tela
