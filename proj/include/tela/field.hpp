#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tela/math.hpp"
#include "tela/rng.hpp"

namespace tela {

// Named view into a flat float32 parameter store. Offsets index `values`.
struct BlockInfo {
  std::string name;
  size_t offset = 0;
  size_t size = 0;
};

struct ParamPack {
  std::vector<float> values;
  std::vector<BlockInfo> blocks;

  size_t size() const { return values.size(); }
  size_t add_block(const std::string& name, size_t count);
  const BlockInfo* find(const std::string& name) const;
};

struct GridSpec {
  int levels = 16;
  int features = 2;               // per corner
  uint32_t table_size = 1u << 19; // every level is hashed into a full table
  int base_resolution = 16;
  int max_resolution = 512;

  // geometric growth factor between consecutive level resolutions
  double per_level_scale() const;
  int resolution(int level) const;
  size_t param_count() const {
    return size_t(levels) * table_size * size_t(features);
  }
};

struct MlpSpec {
  int hidden_layers = 3;
  int hidden_width = 64;
};

// One radiance layer: hashed feature grid feeding a small MLP with a density
// head (softplus) and a color head (sigmoid). Queries outside `aabb` are
// exactly zero, with zero gradient.
struct RadianceField {
  GridSpec grid;
  MlpSpec mlp;
  Aabb aabb;
  ParamPack params;

  int encoding_dim() const { return grid.levels * grid.features; }
};

RadianceField init_field(const GridSpec& grid, const MlpSpec& mlp, const Aabb& aabb,
                         uint64_t seed);

// Spatial hash of an integer lattice corner (xor of prime multiplies).
uint32_t grid_hash(uint32_t x, uint32_t y, uint32_t z, uint32_t table_size);

struct FieldOutput {
  double sigma = 0;
  Vec3 color;
};

// Reusable per-thread workspace; contents are owned by the field functions.
struct FieldScratch {
  std::vector<uint32_t> corner_index;  // levels * 8
  std::vector<double> corner_weight;   // levels * 8
  std::vector<double> encoded;         // levels * features
  std::vector<double> pre;             // preactivations, all hidden layers
  std::vector<double> post;            // activations, all hidden layers
  std::vector<double> d_buf;           // backward temporaries
  std::vector<double> d_buf2;
};

// Interpolated grid features at `pos`; fills corner bookkeeping in `scratch`.
// `out` must hold encoding_dim() values.
void hash_encode(const RadianceField& field, const Vec3& pos, double* out,
                 FieldScratch& scratch);

FieldOutput field_eval(const RadianceField& field, const Vec3& pos, FieldScratch& scratch);

// Accumulates d(loss)/d(params) into `grad` (size params.size(), may be null
// when only the position gradient is wanted) given upstream derivatives at
// one query point. Recomputes the forward pass internally, so no state from
// a prior field_eval is required. When `d_pos` is non-null the derivative
// with respect to the query position is added to it (used when a deformation
// field feeds this query).
void field_backward(const RadianceField& field, const Vec3& pos, double d_sigma,
                    const Vec3& d_color, std::vector<double>* grad, FieldScratch& scratch,
                    Vec3* d_pos = nullptr);

// softplus with its overflow guard shared between eval and tests
inline double softplus(double x) { return x > 30 ? x : std::log1p(std::exp(x)); }
inline double sigmoid(double x) {
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

// density-head bias giving softplus(bias) = 0.1 at init
double density_bias_init();

}  // namespace tela
