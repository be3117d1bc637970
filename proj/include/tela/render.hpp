#pragma once

#include <functional>
#include <string>
#include <vector>

#include "tela/field.hpp"
#include "tela/image.hpp"
#include "tela/math.hpp"
#include "tela/rng.hpp"
#include "tela/scene.hpp"

namespace tela {

struct DeformationField;

// One renderable layer. Exactly one of `field` or `analytic` must be set;
// analytic evaluators exist so tests can render closed-form scenes through
// the production pipeline. `scale` resizes the layer about its box center
// (rigid-resize baseline); `deform` warps query points before the field
// lookup (trained cloth transfer).
struct Layer {
  std::string name;
  const RadianceField* field = nullptr;
  const DeformationField* deform = nullptr;
  double scale = 1.0;
  std::function<FieldOutput(const Vec3&)> analytic;

  Aabb bounds() const;
};

Aabb enclosing_bounds(const std::vector<Layer>& layers);

// Stratified samples along a ray restricted to `bounds`. `delta` is the bin
// width (constant across the ray); `t` holds one position per bin, at the
// bin center when jitter is off.
struct RaySamples {
  std::vector<double> t;
  double delta = 0;
  double t_near = 0, t_far = 0;
  bool miss = true;
};

RaySamples sample_ray(const Vec3& origin, const Vec3& dir, const Aabb& bounds, int n, bool jitter,
                      Rng& rng);

// T[i] = exp(-sum_{j<i} sigma_j * delta), alpha[i] = 1 - exp(-sigma_i * delta).
// Throws on negative densities.
void transmittance(const std::vector<double>& sigma, double delta, std::vector<double>& trans,
                   std::vector<double>& alpha);

// Largest sample index whose entry transmittance under `sigma` still exceeds
// the threshold. Always >= 0 because T[0] = 1.
int partition_index(const std::vector<double>& sigma, double delta, double threshold);

// Per-layer density and color profiles along one ray, innermost layer first.
struct RayProfile {
  int n = 0;
  int layers = 0;
  std::vector<double> sigma;  // layers * n
  std::vector<Vec3> color;    // layers * n

  double sig(int layer, int i) const { return sigma[size_t(layer) * n + i]; }
  const Vec3& col(int layer, int i) const { return color[size_t(layer) * n + i]; }
};

FieldOutput eval_layer(const Layer& layer, const Vec3& pos, FieldScratch& scratch);

void eval_layers(const std::vector<Layer>& layers, const Vec3& origin, const Vec3& dir,
                 const RaySamples& s, RayProfile& out, FieldScratch& scratch);

// Entry transmittance of the stack of layers 0..count-1 (elementwise max
// density). count = 0 gives all ones.
void stack_transmittance(const RayProfile& prof, int count, double delta,
                         std::vector<double>& trans);

// Assigns every sample to the outermost layer whose inner stack is still
// transparent there. Assignments are treated as constants by the backward
// pass. Result is non-increasing along the ray.
void assign_layers(const RayProfile& prof, double delta, double threshold,
                   std::vector<int>& assignment);

struct RenderResult {
  Vec3 color;        // accumulated radiance (not composited)
  double alpha = 0;  // accumulated opacity
};

RenderResult volume_render(const std::vector<double>& sigma, const std::vector<Vec3>& color,
                           double delta);

// Gradient of (d_color . C + d_alpha * A) with respect to the per-sample
// densities and colors, accumulated into d_sigma / d_col.
void volume_render_backward(const std::vector<double>& sigma, const std::vector<Vec3>& color,
                            double delta, const Vec3& d_color, double d_alpha,
                            std::vector<double>& d_sigma, std::vector<Vec3>& d_col);

RenderResult compose_render(const RayProfile& prof, double delta, double threshold,
                            std::vector<int>* assignment_out = nullptr);

// Outermost layer rendered on its own, truncated at the inner stack's
// opacity frontier so the hidden interior never contributes.
RenderResult cloth_only_render(const RayProfile& prof, double delta, double threshold);

// Pointwise max-density composition (no stratification); ties go to the
// innermost layer. Ablation baseline, forward only.
RenderResult compose_render_max(const RayProfile& prof, double delta);

enum class RenderMode { kComposed, kClothOnly, kBaselineMax };

struct RenderOptions {
  int samples = 64;
  double threshold = 0.5;
  bool jitter = false;
  uint64_t seed = 0;
  uint64_t iteration = 0;  // mixed into the per-pixel jitter stream
  Vec3 background{1, 1, 1};
  RenderMode mode = RenderMode::kComposed;
  bool parallel = true;
};

struct RenderOutput {
  Image color;      // composited over the background
  GrayImage alpha;  // accumulated opacity (the rendered mask)
};

// Per-thread workspace; reuse across rays to avoid reallocation.
struct RayWorkspace {
  FieldScratch scratch;
  RayProfile prof;
  std::vector<int> assignment;
  std::vector<double> sigma, d_sigma, trans, alpha;
  std::vector<Vec3> color, d_col;
};

RenderResult render_ray(const std::vector<Layer>& layers, const Vec3& origin, const Vec3& dir,
                        const RaySamples& s, double threshold, RenderMode mode, RayWorkspace& ws);

// Per-layer parameter gradients, parallel to a layer vector. Analytic layers
// keep empty slots.
struct GradSink {
  std::vector<std::vector<double>> field_grads;
  std::vector<std::vector<double>> deform_grads;

  void init(const std::vector<Layer>& layers);
  void add(const GradSink& other);
  void scale_all(double s);
};

// Backpropagates d_color / d_alpha of one ray into layer parameters.
// Recomputes the forward pass internally; pass the same samples.
void render_ray_backward(const std::vector<Layer>& layers, const Vec3& origin, const Vec3& dir,
                         const RaySamples& s, double threshold, RenderMode mode,
                         const Vec3& d_color, double d_alpha, GradSink& sink, RayWorkspace& ws);

// Parallel image renderer. Identical output to render_image_reference for
// the same options; per-pixel sample jitter comes from a stateless stream
// keyed on (seed, iteration, pixel), so results do not depend on the thread
// count or schedule.
RenderOutput render_image(const std::vector<Layer>& layers, const Camera& camera,
                          const RenderOptions& opt);

// Straight-line serial implementation kept as the comparison oracle.
RenderOutput render_image_reference(const std::vector<Layer>& layers, const Camera& camera,
                                    const RenderOptions& opt);

}  // namespace tela
