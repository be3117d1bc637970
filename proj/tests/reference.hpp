// Independent oracles used by the tests. Everything here recomputes results
// from first principles, separately from the production code paths.
#pragma once

#include <functional>
#include <string>
#include <vector>

#include "tela/field.hpp"
#include "tela/image.hpp"
#include "tela/render.hpp"
#include "tela/scene.hpp"

namespace ref {

// Term-by-term emission integral in long double: every partial sum for T_i
// is recomputed from scratch, no running products.
tela::RenderResult volume_render_oracle(const std::vector<double>& sigma,
                                        const std::vector<tela::Vec3>& color, double delta);

// Brute-force multi-layer composition: builds each stack's transmittance
// independently and assembles the assigned profile sample by sample.
tela::RenderResult compose_render_oracle(const tela::RayProfile& prof, double delta,
                                         double threshold, std::vector<int>* assignment_out);

// Fresh reimplementation of the multiresolution hash lookup.
void hash_encode_oracle(const tela::RadianceField& f, const tela::Vec3& pos, double* out);

// Length of the intersection of a unit-direction ray with a solid sphere.
double ray_sphere_chord(const tela::Vec3& origin, const tela::Vec3& dir, const tela::Vec3& center,
                        double radius);

// Constant-density analytic layers for driving the production renderer.
tela::Layer analytic_ball(const std::string& name, const tela::Vec3& center, double radius,
                          double sigma, const tela::Vec3& color);
tela::Layer analytic_shell(const std::string& name, const tela::Vec3& center, double r_inner,
                           double r_outer, double sigma, const tela::Vec3& color);

// Closed-form render of constant-density spheres under the camera: per pixel
// the exact opacity 1 - exp(-sigma * chord). Layers are composited
// back-to-front assuming the shell fully surrounds the ball.
struct AnalyticBall {
  tela::Vec3 center;
  double r_inner = 0;  // zero for a solid ball
  double r_outer = 0;
  double sigma = 0;
  tela::Vec3 color;
};
tela::Image ideal_image(const std::vector<AnalyticBall>& balls, const tela::Camera& camera,
                        const tela::Vec3& background);
tela::GrayImage ideal_mask(const std::vector<AnalyticBall>& balls, const tela::Camera& camera);

// Supervised fit of a field to an analytic target (density and color
// regression on random points). Builds test fixtures that behave like
// trained layers.
void fit_field(tela::RadianceField& field,
               const std::function<tela::FieldOutput(const tela::Vec3&)>& target, int steps,
               int batch, double lr, uint64_t seed);

// fnv-1a over the raw float bits, for bitwise comparisons
uint64_t hash_floats(const std::vector<float>& v);

double soft_iou(const tela::GrayImage& a, const tela::GrayImage& b);

}  // namespace ref
