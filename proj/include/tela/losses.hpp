#pragma once

#include <string>
#include <vector>

#include "tela/guidance.hpp"
#include "tela/image.hpp"
#include "tela/render.hpp"

namespace tela {

struct RegTerms {
  double lambda1 = 0.5;   // binary-entropy weight (pushes mask pixels to 0 or 1)
  double lambda2 = 0.05;  // coverage weight (pushes mean opacity down)
};

// Mask regularizer: lambda1 * mean(BE(m)) + lambda2 * mean(m) with the
// entropy clamped at 1e-5 from both ends. When d_mask is non-null the
// per-pixel derivative is accumulated into it.
double reg_loss(const GrayImage& mask, const RegTerms& terms, GrayImage* d_mask);

// One guidance term: render the layer stack in `mode`, ask the provider for
// a residual under `prompt`, and feed weight * sds_pixel_grad back through
// the renderer. The mask regularizer applies to the same render with weight
// `reg_weight`.
struct SdsTerm {
  std::string prompt;
  RenderMode mode = RenderMode::kComposed;
  double weight = 1.0;
  double reg_weight = 1.0;
};

struct StepStats {
  double reg = 0;           // summed regularizer value across terms
  double grad_rms = 0;      // rms of the per-pixel loss gradient
};

// Runs every term (forward render, provider query, regularizer) and then
// backpropagates through the renderer into `sink`. Both passes draw ray
// jitter from streams keyed on (opt.seed, opt.iteration, pixel), so the
// backward pass resamples the exact rays of the forward pass.
StepStats loss_step(const std::vector<Layer>& layers, const Camera& camera,
                    const RenderOptions& opt, const GuidanceProvider& provider,
                    const std::vector<SdsTerm>& terms, const Image* skeleton, double t,
                    uint64_t noise_seed, const RegTerms& reg, GradSink& sink);

}  // namespace tela
