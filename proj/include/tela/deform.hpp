#pragma once

#include <cstdint>
#include <vector>

#include "tela/field.hpp"
#include "tela/math.hpp"

namespace tela {

// Sinusoidal positional encoding feeding a small ReLU MLP whose bounded
// output displaces query points. The zero-initialized output layer makes a
// fresh field the exact identity.
struct DeformSpec {
  int frequencies = 8;
  int hidden_layers = 4;
  int hidden_width = 64;
  double max_displacement = 0.15;

  int encoding_dim() const { return 6 * frequencies; }
};

struct DeformationField {
  DeformSpec spec;
  ParamPack params;
};

DeformationField init_deform(const DeformSpec& spec, uint64_t seed);

Vec3 deform_eval(const DeformationField& d, const Vec3& pos, FieldScratch& scratch);

// Accumulates d(loss)/d(params) into `grad` given the upstream derivative of
// the displacement. Recomputes the forward pass internally.
void deform_backward(const DeformationField& d, const Vec3& pos, const Vec3& d_out,
                     std::vector<double>& grad, FieldScratch& scratch);

}  // namespace tela
