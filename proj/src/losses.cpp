#include "tela/losses.hpp"

#include <cmath>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "tela/errors.hpp"

namespace tela {

double reg_loss(const GrayImage& mask, const RegTerms& terms, GrayImage* d_mask) {
  if (mask.pixels() == 0) return 0.0;
  if (d_mask && (d_mask->width != mask.width || d_mask->height != mask.height))
    throw Error("reg_loss: gradient image shape mismatch");
  const double eps = 1e-5;
  const double n = double(mask.pixels());
  double be_sum = 0, m_sum = 0;
  for (size_t i = 0; i < mask.data.size(); ++i) {
    double m = mask.data[i];
    double mc = std::clamp(m, eps, 1.0 - eps);
    be_sum += -(mc * std::log(mc) + (1.0 - mc) * std::log(1.0 - mc));
    m_sum += m;
    if (d_mask) {
      double d = terms.lambda2;
      // entropy slope vanishes where the clamp is active
      if (m > eps && m < 1.0 - eps) d += terms.lambda1 * std::log((1.0 - mc) / mc);
      d_mask->data[i] += d / n;
    }
  }
  return terms.lambda1 * be_sum / n + terms.lambda2 * m_sum / n;
}

namespace {

struct PixelGrads {
  Image d_color;      // upstream gradient on the composited pixel
  GrayImage d_alpha;  // extra gradient on the mask (regularizer)
};

}  // namespace

StepStats loss_step(const std::vector<Layer>& layers, const Camera& camera,
                    const RenderOptions& opt, const GuidanceProvider& provider,
                    const std::vector<SdsTerm>& terms, const Image* skeleton, double t,
                    uint64_t noise_seed, const RegTerms& reg, GradSink& sink) {
  StepStats stats;
  if (terms.empty()) return stats;
  const int W = camera.width, H = camera.height;
  Aabb bounds = enclosing_bounds(layers);

  double sq_sum = 0;
  size_t sq_n = 0;

  for (size_t ti = 0; ti < terms.size(); ++ti) {
    const SdsTerm& term = terms[ti];
    RenderOptions o = opt;
    o.mode = term.mode;

    RenderOutput rendered = render_image(layers, camera, o);

    GuidanceContext ctx;
    ctx.prompt = term.prompt;
    ctx.t = t;
    ctx.seed = mix64(noise_seed, ti);  // distinct noise per term
    ctx.skeleton = skeleton;
    ctx.camera = &camera;
    ctx.background = opt.background;
    Image residual = provider(rendered.color, ctx);
    if (!residual.same_shape(rendered.color))
      throw ProtocolError("guidance residual shape differs from the rendered image");
    Image g_pix = sds_pixel_grad(residual, t);

    GrayImage d_mask(W, H, 0.0);
    double reg_val = reg_loss(rendered.alpha, reg, &d_mask);
    stats.reg += term.reg_weight * reg_val;

    for (size_t i = 0; i < g_pix.data.size(); ++i) {
      double g = term.weight * g_pix.data[i];
      sq_sum += g * g;
    }
    sq_n += g_pix.data.size();

    // Backward pass re-renders each ray with the jitter stream of the
    // forward pass and pushes the combined gradient into the layers.
    const int npix = W * H;
#ifdef _OPENMP
    int nthreads = o.parallel ? omp_get_max_threads() : 1;
#else
    int nthreads = 1;
#endif
    std::vector<GradSink> partial(static_cast<size_t>(nthreads));
    std::vector<RayWorkspace> ws(static_cast<size_t>(nthreads));
    for (auto& p : partial) {
      p.field_grads.resize(sink.field_grads.size());
      p.deform_grads.resize(sink.deform_grads.size());
      for (size_t i = 0; i < sink.field_grads.size(); ++i) {
        p.field_grads[i].assign(sink.field_grads[i].size(), 0.0);
        p.deform_grads[i].assign(sink.deform_grads[i].size(), 0.0);
      }
    }
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (o.parallel)
#endif
    for (int pix = 0; pix < npix; ++pix) {
#ifdef _OPENMP
      int tid = omp_get_thread_num();
#else
      int tid = 0;
#endif
      int py = pix / W, px = pix % W;
      Rng rng(mix64(o.seed, o.iteration, uint64_t(pix)));
      Vec3 dir = camera.ray_direction(px + 0.5, py + 0.5);
      RaySamples s = sample_ray(camera.position, dir, bounds, o.samples, o.jitter, rng);
      if (s.miss) continue;
      Vec3 g_u = g_pix.get_index(size_t(pix)) * term.weight;
      Vec3 d_color = g_u;
      double d_alpha = -dot(g_u, o.background) + term.reg_weight * d_mask.data[size_t(pix)];
      render_ray_backward(layers, camera.position, dir, s, o.threshold, o.mode, d_color, d_alpha,
                          partial[size_t(tid)], ws[size_t(tid)]);
    }
    // fixed reduction order keeps results reproducible for a given thread count
    for (int tid = 0; tid < nthreads; ++tid) sink.add(partial[size_t(tid)]);
  }

  stats.grad_rms = sq_n ? std::sqrt(sq_sum / double(sq_n)) : 0.0;
  return stats;
}

}  // namespace tela
