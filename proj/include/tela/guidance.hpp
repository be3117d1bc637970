#pragma once

#include <functional>
#include <string>

#include "tela/image.hpp"
#include "tela/math.hpp"
#include "tela/rng.hpp"
#include "tela/scene.hpp"

namespace tela {

// Cosine noise schedule on t in [0, 1].
double alpha_bar(double t);   // cos^2(pi t / 2)
double sds_weight(double t);  // 1 - alpha_bar(t)

double sample_timestep(Rng& rng, double t_min, double t_max);

// Maps [0,1] pixels to [-1,1] and mixes in unit Gaussian noise at level t.
// The noise stream is keyed on `seed` alone, so the same seed reproduces the
// same epsilon.
Image noise_image(const Image& clean, double t, uint64_t seed);

// Everything a guidance backend may condition on. Camera and background are
// available to in-process providers only; they are not part of the wire
// format.
struct GuidanceContext {
  std::string prompt;
  double t = 0.5;
  uint64_t seed = 0;
  const Image* skeleton = nullptr;
  const Camera* camera = nullptr;
  Vec3 background{1, 1, 1};
};

// A provider receives the clean rendering and returns the denoiser residual
// (noise prediction minus the injected noise), same shape as the input.
using GuidanceProvider = std::function<Image(const Image& clean, const GuidanceContext&)>;

// Deterministic stand-in for a diffusion backend: noises the input, then
// "denoises" toward a reference image, so the residual pulls the render
// toward the reference. The injected noise cancels analytically; the
// residual is noise-free.
GuidanceProvider make_synthetic_provider(const Image& reference);

// Reference image chosen per query (e.g. view-dependent ground truth).
using ReferenceFn = std::function<Image(const GuidanceContext&)>;
GuidanceProvider make_synthetic_provider_fn(ReferenceFn reference);

struct RemoteOptions {
  std::string endpoint;  // http://host:port
  int timeout_ms = 10000;
  int retries = 2;  // additional attempts after the first
};

// HTTP backend speaking the JSON residual protocol (POST /v1/residual).
// Connection failures after all retries raise RetriableError, malformed
// responses ProtocolError, HTTP error statuses ServiceError.
GuidanceProvider make_remote_provider(const RemoteOptions& opt);

// Per-pixel loss gradient: weight(t) * residual.
Image sds_pixel_grad(const Image& residual, double t);

}  // namespace tela
