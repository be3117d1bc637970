#pragma once

#include <functional>
#include <string>
#include <vector>

#include "tela/deform.hpp"
#include "tela/field.hpp"
#include "tela/losses.hpp"
#include "tela/scene.hpp"

namespace tela {

struct AdamConfig {
  double lr = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double eps = 1e-15;  // added outside the square root
  double clip = 1.0;   // global gradient norm bound, applied before the moments
};

struct AdamState {
  std::vector<double> m, v;
  int64_t step = 0;
};

// Bias-corrected Adam on float32 parameters with double moments.
void adam_step(std::vector<float>& params, const std::vector<double>& grad, AdamState& state,
               const AdamConfig& cfg);

struct TrainConfig {
  int iterations = 500;
  int samples = 64;
  int res_initial = 64;
  int res_final = 128;
  double res_switch = 0.5;  // fraction of iterations rendered at res_initial
  double threshold = 0.5;
  double t_min = 0.02, t_max = 0.98;
  RegTerms reg;
  AdamConfig adam;
  GridSpec grid;
  MlpSpec mlp;
  uint64_t seed = 0;

  static TrainConfig desk();  // small tables, minutes on a CPU
  static TrainConfig full();  // full-size run
  int resolution_at(int iter) const;
  void validate() const;
};

struct TrainCallbacks {
  // called after every iteration (0-based)
  std::function<void(int iter, const StepStats&)> on_iteration;
};

struct TrainHistory {
  std::vector<double> reg;
  std::vector<double> grad_rms;
};

// Stage one: optimize the innermost layer under the body prompt.
TrainHistory train_body(RadianceField& body, const SceneConfig& scene, const TrainConfig& cfg,
                        const GuidanceProvider& provider, const TrainCallbacks& cb = {});

// Stage two for scene layer `layer_index`: the inner stack stays frozen while
// the new layer trains under both the dressed prompt (composed render) and
// the garment prompt (isolated render).
TrainHistory train_cloth(RadianceField& cloth, const std::vector<const RadianceField*>& inner,
                         const SceneConfig& scene, int layer_index, const TrainConfig& cfg,
                         const GuidanceProvider& provider, const TrainCallbacks& cb = {});

// Cloth transfer: every radiance field stays frozen; only the deformation
// warping the cloth onto the new inner stack trains.
TrainHistory train_transfer(DeformationField& deform, const RadianceField& cloth,
                            const std::vector<const RadianceField*>& inner,
                            const SceneConfig& scene, int layer_index, const TrainConfig& cfg,
                            const GuidanceProvider& provider, const TrainCallbacks& cb = {});

// Scalar loss and matching analytic gradient for one optimization step with
// the guidance residual frozen at the current parameters. Freezing turns the
// step into a plain function of the parameters, which is what a finite
// difference can probe; the gradient closure drives the production backward
// pass. `target_layer` picks which layer's parameters the gradient reports
// (its deformation instead when `target_deform`).
struct FrozenStepClosures {
  std::function<double()> loss;
  std::function<std::vector<double>()> grad;
};

FrozenStepClosures make_frozen_step(const std::vector<Layer>& layers, const Camera& camera,
                                    const RenderOptions& opt, const GuidanceProvider& provider,
                                    const std::vector<SdsTerm>& terms, double t,
                                    uint64_t noise_seed, const RegTerms& reg, int target_layer,
                                    bool target_deform = false);

struct GradCheckReport {
  double max_rel_err = 0;
  std::string worst_block;
  size_t checked = 0;
  bool deterministic = true;  // loss evaluated twice at the same point agreed bitwise
};

// Central-difference check of an analytic gradient. Parameters are perturbed
// in float32 exactly as they are stored; the divisor is the realized double
// difference of the perturbed values. `pick_per_block` caps how many entries
// of each named block are probed.
GradCheckReport grad_check(const std::function<double()>& loss,
                           const std::function<std::vector<double>()>& grad,
                           std::vector<float>& params, const std::vector<BlockInfo>& blocks,
                           int pick_per_block, double h = 1e-4, uint64_t seed = 0);

}  // namespace tela
