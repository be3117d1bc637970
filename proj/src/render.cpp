#include "tela/render.hpp"

#include <algorithm>
#include <cmath>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "tela/deform.hpp"
#include "tela/errors.hpp"

namespace tela {

Aabb Layer::bounds() const {
  if (analytic) return scene_bounds();
  if (!field) throw Error("layer \"" + name + "\" has neither a field nor an analytic evaluator");
  Aabb b = field->aabb;
  if (deform) b = b.dilated(deform->spec.max_displacement);
  if (scale != 1.0) {
    Vec3 c = field->aabb.center();
    Vec3 a = c + (b.lo - c) * scale;
    Vec3 d = c + (b.hi - c) * scale;
    b = Aabb{min(a, d), max(a, d)};
  }
  return b;
}

Aabb enclosing_bounds(const std::vector<Layer>& layers) {
  if (layers.empty()) throw Error("enclosing_bounds: no layers");
  Aabb u = layers[0].bounds();
  for (size_t i = 1; i < layers.size(); ++i) {
    Aabb b = layers[i].bounds();
    u.lo = min(u.lo, b.lo);
    u.hi = max(u.hi, b.hi);
  }
  return u;
}

RaySamples sample_ray(const Vec3& origin, const Vec3& dir, const Aabb& bounds, int n, bool jitter,
                      Rng& rng) {
  if (n < 1) throw Error("sample_ray: need at least one sample");
  RaySamples s;
  double t0 = 1e-4, t1 = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    double o = origin[a], d = dir[a];
    if (std::abs(d) < 1e-12) {
      if (o < bounds.lo[a] || o > bounds.hi[a]) return s;  // parallel and outside the slab
      continue;
    }
    double ta = (bounds.lo[a] - o) / d;
    double tb = (bounds.hi[a] - o) / d;
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
  }
  if (t1 <= t0) return s;
  s.miss = false;
  s.t_near = t0;
  s.t_far = t1;
  s.delta = (t1 - t0) / n;
  s.t.resize(size_t(n));
  for (int i = 0; i < n; ++i) {
    double u = jitter ? rng.uniform() : 0.5;
    s.t[size_t(i)] = t0 + (i + u) * s.delta;
  }
  return s;
}

namespace {

void require_densities(const std::vector<double>& sigma) {
  for (double v : sigma)
    if (!(v >= 0)) throw Error("volume rendering requires non-negative finite densities");
}

void require_threshold(double th) {
  if (!(th > 0 && th < 1)) throw Error("opacity threshold must lie strictly inside (0, 1)");
}

}  // namespace

void transmittance(const std::vector<double>& sigma, double delta, std::vector<double>& trans,
                   std::vector<double>& alpha) {
  require_densities(sigma);
  size_t n = sigma.size();
  trans.resize(n);
  alpha.resize(n);
  double T = 1;
  for (size_t i = 0; i < n; ++i) {
    double e = exp_neg(sigma[i] * delta);
    trans[i] = T;
    alpha[i] = 1 - e;
    T *= e;
  }
}

int partition_index(const std::vector<double>& sigma, double delta, double threshold) {
  require_threshold(threshold);
  require_densities(sigma);
  double T = 1;
  int k = 0;
  for (size_t i = 0; i < sigma.size(); ++i) {
    if (T > threshold) k = static_cast<int>(i);
    T *= exp_neg(sigma[i] * delta);
  }
  return k;
}

FieldOutput eval_layer(const Layer& layer, const Vec3& pos, FieldScratch& scratch) {
  if (layer.analytic) return layer.analytic(pos);
  Vec3 q = pos;
  if (layer.scale != 1.0) {
    Vec3 c = layer.field->aabb.center();
    q = c + (q - c) / layer.scale;
  }
  if (layer.deform) {
    if (!layer.field->aabb.dilated(layer.deform->spec.max_displacement).contains(q))
      return FieldOutput{};
    q = q + deform_eval(*layer.deform, q, scratch);
  }
  return field_eval(*layer.field, q, scratch);
}

void eval_layers(const std::vector<Layer>& layers, const Vec3& origin, const Vec3& dir,
                 const RaySamples& s, RayProfile& out, FieldScratch& scratch) {
  int n = static_cast<int>(s.t.size());
  out.n = n;
  out.layers = static_cast<int>(layers.size());
  out.sigma.assign(size_t(out.layers) * n, 0.0);
  out.color.assign(size_t(out.layers) * n, Vec3{});
  for (size_t l = 0; l < layers.size(); ++l) {
    Aabb b = layers[l].bounds();
    for (int i = 0; i < n; ++i) {
      Vec3 x = origin + dir * s.t[size_t(i)];
      if (!b.contains(x)) continue;  // exact zero outside the layer
      FieldOutput f = eval_layer(layers[l], x, scratch);
      if (!(f.sigma >= 0))
        throw Error("layer \"" + layers[l].name + "\" produced a negative density");
      out.sigma[l * size_t(n) + i] = f.sigma;
      out.color[l * size_t(n) + i] = f.color;
    }
  }
}

void stack_transmittance(const RayProfile& prof, int count, double delta,
                         std::vector<double>& trans) {
  if (count < 0 || count > prof.layers) throw Error("stack_transmittance: bad layer count");
  trans.resize(size_t(prof.n));
  double T = 1;
  for (int i = 0; i < prof.n; ++i) {
    trans[size_t(i)] = T;
    double m = 0;
    for (int l = 0; l < count; ++l) m = std::max(m, prof.sig(l, i));
    T *= exp_neg(m * delta);
  }
}

void assign_layers(const RayProfile& prof, double delta, double threshold,
                   std::vector<int>& assignment) {
  require_threshold(threshold);
  assignment.assign(size_t(prof.n), 0);
  std::vector<double> maxsig(size_t(prof.n), 0.0);
  for (int l = 0; l + 1 < prof.layers; ++l) {
    for (int i = 0; i < prof.n; ++i)
      maxsig[size_t(i)] = std::max(maxsig[size_t(i)], prof.sig(l, i));
    // entry transmittance of the stack 0..l decides membership in layer l+1
    double T = 1;
    for (int i = 0; i < prof.n; ++i) {
      if (T > threshold) assignment[size_t(i)] = l + 1;
      T *= exp_neg(maxsig[size_t(i)] * delta);
    }
  }
}

RenderResult volume_render(const std::vector<double>& sigma, const std::vector<Vec3>& color,
                           double delta) {
  if (sigma.size() != color.size()) throw Error("volume_render: size mismatch");
  if (!(delta > 0)) throw Error("volume_render: bin width must be positive");
  require_densities(sigma);
  double T = 1;
  Vec3 C;
  for (size_t i = 0; i < sigma.size(); ++i) {
    double e = exp_neg(sigma[i] * delta);
    double w = T * (1 - e);
    C = C + color[i] * w;
    T *= e;
  }
  return RenderResult{C, 1 - T};
}

void volume_render_backward(const std::vector<double>& sigma, const std::vector<Vec3>& color,
                            double delta, const Vec3& d_color, double d_alpha,
                            std::vector<double>& d_sigma, std::vector<Vec3>& d_col) {
  size_t n = sigma.size();
  if (color.size() != n || d_sigma.size() != n || d_col.size() != n)
    throw Error("volume_render_backward: size mismatch");
  require_densities(sigma);
  std::vector<double> e(n), T(n), w(n);
  double t = 1;
  for (size_t i = 0; i < n; ++i) {
    e[i] = exp_neg(sigma[i] * delta);
    T[i] = t;
    w[i] = t * (1 - e[i]);
    t *= e[i];
  }
  // suffix accumulates sum_{j>i} w_j G_j with G_j = d_color . c_j + d_alpha
  double suffix = 0;
  for (size_t i = n; i-- > 0;) {
    double G = dot(d_color, color[i]) + d_alpha;
    d_sigma[i] += delta * (e[i] * T[i] * G - suffix);
    d_col[i] = d_col[i] + d_color * w[i];
    suffix += w[i] * G;
  }
}

namespace {

// Fills ws.assignment and the assembled single profile in ws.sigma / ws.color.
void compose_into(const RayProfile& prof, double delta, double threshold, RayWorkspace& ws) {
  assign_layers(prof, delta, threshold, ws.assignment);
  ws.sigma.resize(size_t(prof.n));
  ws.color.resize(size_t(prof.n));
  for (int i = 0; i < prof.n; ++i) {
    int l = ws.assignment[size_t(i)];
    ws.sigma[size_t(i)] = prof.sig(l, i);
    ws.color[size_t(i)] = prof.col(l, i);
  }
}

void max_compose_into(const RayProfile& prof, RayWorkspace& ws) {
  ws.assignment.resize(size_t(prof.n));
  ws.sigma.resize(size_t(prof.n));
  ws.color.resize(size_t(prof.n));
  for (int i = 0; i < prof.n; ++i) {
    int best = 0;
    double bs = prof.sig(0, i);
    for (int l = 1; l < prof.layers; ++l) {
      if (prof.sig(l, i) > bs) {  // strict, so ties keep the innermost layer
        bs = prof.sig(l, i);
        best = l;
      }
    }
    ws.assignment[size_t(i)] = best;
    ws.sigma[size_t(i)] = bs;
    ws.color[size_t(i)] = prof.col(best, i);
  }
}

// k and the truncated outer-layer profile for the isolated-garment render
int cloth_only_into(const RayProfile& prof, double delta, double threshold, RayWorkspace& ws) {
  if (prof.layers < 2) throw Error("cloth-only rendering needs at least two layers");
  ws.trans.resize(size_t(prof.n));
  for (int i = 0; i < prof.n; ++i) {
    double m = 0;
    for (int l = 0; l + 1 < prof.layers; ++l) m = std::max(m, prof.sig(l, i));
    ws.trans[size_t(i)] = m;
  }
  int k = partition_index(ws.trans, delta, threshold);
  int outer = prof.layers - 1;
  ws.sigma.assign(size_t(k) + 1, 0.0);
  ws.color.assign(size_t(k) + 1, Vec3{});
  for (int i = 0; i <= k; ++i) {
    ws.sigma[size_t(i)] = prof.sig(outer, i);
    ws.color[size_t(i)] = prof.col(outer, i);
  }
  return k;
}

}  // namespace

RenderResult compose_render(const RayProfile& prof, double delta, double threshold,
                            std::vector<int>* assignment_out) {
  RayWorkspace ws;
  compose_into(prof, delta, threshold, ws);
  if (assignment_out) *assignment_out = ws.assignment;
  return volume_render(ws.sigma, ws.color, delta);
}

RenderResult cloth_only_render(const RayProfile& prof, double delta, double threshold) {
  RayWorkspace ws;
  cloth_only_into(prof, delta, threshold, ws);
  return volume_render(ws.sigma, ws.color, delta);
}

RenderResult compose_render_max(const RayProfile& prof, double delta) {
  RayWorkspace ws;
  max_compose_into(prof, ws);
  return volume_render(ws.sigma, ws.color, delta);
}

RenderResult render_ray(const std::vector<Layer>& layers, const Vec3& origin, const Vec3& dir,
                        const RaySamples& s, double threshold, RenderMode mode,
                        RayWorkspace& ws) {
  eval_layers(layers, origin, dir, s, ws.prof, ws.scratch);
  switch (mode) {
    case RenderMode::kComposed:
      compose_into(ws.prof, s.delta, threshold, ws);
      break;
    case RenderMode::kClothOnly:
      cloth_only_into(ws.prof, s.delta, threshold, ws);
      break;
    case RenderMode::kBaselineMax:
      max_compose_into(ws.prof, ws);
      break;
  }
  return volume_render(ws.sigma, ws.color, s.delta);
}

void GradSink::init(const std::vector<Layer>& layers) {
  field_grads.assign(layers.size(), {});
  deform_grads.assign(layers.size(), {});
  for (size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].field) field_grads[i].assign(layers[i].field->params.size(), 0.0);
    if (layers[i].deform) deform_grads[i].assign(layers[i].deform->params.size(), 0.0);
  }
}

void GradSink::add(const GradSink& other) {
  for (size_t i = 0; i < field_grads.size(); ++i) {
    for (size_t j = 0; j < field_grads[i].size(); ++j) field_grads[i][j] += other.field_grads[i][j];
    for (size_t j = 0; j < deform_grads[i].size(); ++j)
      deform_grads[i][j] += other.deform_grads[i][j];
  }
}

void GradSink::scale_all(double s) {
  for (auto& g : field_grads)
    for (double& v : g) v *= s;
  for (auto& g : deform_grads)
    for (double& v : g) v *= s;
}

namespace {

void backprop_sample(const std::vector<Layer>& layers, size_t li, const Vec3& x, double d_sigma,
                     const Vec3& d_color, GradSink& sink, FieldScratch& scratch) {
  const Layer& l = layers[li];
  if (l.analytic || !l.field) return;
  if (d_sigma == 0 && d_color.x == 0 && d_color.y == 0 && d_color.z == 0) return;
  // frozen layers have empty gradient buffers
  bool want_field = !sink.field_grads[li].empty();
  bool want_deform = l.deform && !sink.deform_grads[li].empty();
  if (!want_field && !want_deform) return;
  Vec3 q = x;
  if (l.scale != 1.0) {
    Vec3 c = l.field->aabb.center();
    q = c + (q - c) / l.scale;
  }
  if (l.deform) {
    if (!l.field->aabb.dilated(l.deform->spec.max_displacement).contains(q)) return;
    Vec3 disp = deform_eval(*l.deform, q, scratch);
    Vec3 d_pos{};
    field_backward(*l.field, q + disp, d_sigma, d_color,
                   want_field ? &sink.field_grads[li] : nullptr, scratch,
                   want_deform ? &d_pos : nullptr);
    if (want_deform) deform_backward(*l.deform, q, d_pos, sink.deform_grads[li], scratch);
  } else {
    field_backward(*l.field, q, d_sigma, d_color, &sink.field_grads[li], scratch);
  }
}

}  // namespace

void render_ray_backward(const std::vector<Layer>& layers, const Vec3& origin, const Vec3& dir,
                         const RaySamples& s, double threshold, RenderMode mode,
                         const Vec3& d_color, double d_alpha, GradSink& sink, RayWorkspace& ws) {
  eval_layers(layers, origin, dir, s, ws.prof, ws.scratch);
  switch (mode) {
    case RenderMode::kComposed:
      compose_into(ws.prof, s.delta, threshold, ws);
      break;
    case RenderMode::kClothOnly:
      // truncated profile covers samples 0..k, all owned by the outer layer
      cloth_only_into(ws.prof, s.delta, threshold, ws);
      ws.assignment.assign(ws.sigma.size(), ws.prof.layers - 1);
      break;
    case RenderMode::kBaselineMax:
      max_compose_into(ws.prof, ws);
      break;
  }
  size_t n = ws.sigma.size();
  ws.d_sigma.assign(n, 0.0);
  ws.d_col.assign(n, Vec3{});
  volume_render_backward(ws.sigma, ws.color, s.delta, d_color, d_alpha, ws.d_sigma, ws.d_col);
  for (size_t i = 0; i < n; ++i) {
    Vec3 x = origin + dir * s.t[i];
    backprop_sample(layers, size_t(ws.assignment[i]), x, ws.d_sigma[i], ws.d_col[i], sink,
                    ws.scratch);
  }
}

namespace {

void validate_render_args(const std::vector<Layer>& layers, const Camera& camera,
                          const RenderOptions& opt) {
  if (layers.empty()) throw Error("render: no layers");
  if (!camera.valid()) throw Error("render: invalid camera");
  if (opt.samples < 1) throw Error("render: need at least one sample per ray");
  if (opt.mode != RenderMode::kBaselineMax) require_threshold(opt.threshold);
}

}  // namespace

RenderOutput render_image(const std::vector<Layer>& layers, const Camera& camera,
                          const RenderOptions& opt) {
  validate_render_args(layers, camera, opt);
  Aabb bounds = enclosing_bounds(layers);
  const int W = camera.width, H = camera.height;
  RenderOutput out{Image(W, H), GrayImage(W, H)};
  const int npix = W * H;
#ifdef _OPENMP
  int nthreads = opt.parallel ? omp_get_max_threads() : 1;
#else
  int nthreads = 1;
#endif
  std::vector<RayWorkspace> ws(static_cast<size_t>(nthreads));
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (opt.parallel)
#endif
  for (int pix = 0; pix < npix; ++pix) {
#ifdef _OPENMP
    RayWorkspace& w = ws[size_t(omp_get_thread_num())];
#else
    RayWorkspace& w = ws[0];
#endif
    int py = pix / W, px = pix % W;
    Rng rng(mix64(opt.seed, opt.iteration, uint64_t(pix)));
    Vec3 dir = camera.ray_direction(px + 0.5, py + 0.5);
    RaySamples s = sample_ray(camera.position, dir, bounds, opt.samples, opt.jitter, rng);
    Vec3 u = opt.background;
    double a = 0;
    if (!s.miss) {
      RenderResult r = render_ray(layers, camera.position, dir, s, opt.threshold, opt.mode, w);
      u = r.color + opt.background * (1 - r.alpha);
      a = r.alpha;
    }
    out.color.set(px, py, u);
    out.alpha.data[size_t(pix)] = a;
  }
  return out;
}

RenderOutput render_image_reference(const std::vector<Layer>& layers, const Camera& camera,
                                    const RenderOptions& opt) {
  validate_render_args(layers, camera, opt);
  Aabb bounds = enclosing_bounds(layers);
  const int W = camera.width, H = camera.height;
  RenderOutput out{Image(W, H), GrayImage(W, H)};
  FieldScratch scratch;
  for (int py = 0; py < H; ++py) {
    for (int px = 0; px < W; ++px) {
      int pix = py * W + px;
      Rng rng(mix64(opt.seed, opt.iteration, uint64_t(pix)));
      Vec3 dir = camera.ray_direction(px + 0.5, py + 0.5);
      RaySamples s = sample_ray(camera.position, dir, bounds, opt.samples, opt.jitter, rng);
      Vec3 u = opt.background;
      double a = 0;
      if (!s.miss) {
        RayProfile prof;
        eval_layers(layers, camera.position, dir, s, prof, scratch);
        RenderResult r;
        switch (opt.mode) {
          case RenderMode::kComposed:
            r = compose_render(prof, s.delta, opt.threshold);
            break;
          case RenderMode::kClothOnly:
            r = cloth_only_render(prof, s.delta, opt.threshold);
            break;
          case RenderMode::kBaselineMax:
            r = compose_render_max(prof, s.delta);
            break;
        }
        u = r.color + opt.background * (1 - r.alpha);
        a = r.alpha;
      }
      out.color.set(px, py, u);
      out.alpha.data[size_t(pix)] = a;
    }
  }
  return out;
}

}  // namespace tela
