#include "tela/train.hpp"

#include <cmath>
#include <memory>

#include "tela/errors.hpp"
#include "tela/render.hpp"

namespace tela {

void adam_step(std::vector<float>& params, const std::vector<double>& grad, AdamState& state,
               const AdamConfig& cfg) {
  size_t n = params.size();
  if (grad.size() != n) throw Error("adam_step: gradient size mismatch");
  if (state.m.empty()) {
    state.m.assign(n, 0.0);
    state.v.assign(n, 0.0);
  }
  if (state.m.size() != n || state.v.size() != n)
    throw Error("adam_step: optimizer state belongs to a different parameter vector");

  double norm2 = 0;
  for (double g : grad) norm2 += g * g;
  double norm = std::sqrt(norm2);
  double scale = (cfg.clip > 0 && norm > cfg.clip) ? cfg.clip / norm : 1.0;

  state.step += 1;
  double c1 = 1.0 - std::pow(cfg.beta1, double(state.step));
  double c2 = 1.0 - std::pow(cfg.beta2, double(state.step));
  for (size_t i = 0; i < n; ++i) {
    double g = grad[i] * scale;
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
    double mhat = state.m[i] / c1;
    double vhat = state.v[i] / c2;
    params[i] = static_cast<float>(double(params[i]) - cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps));
  }
}

TrainConfig TrainConfig::desk() {
  TrainConfig c;
  c.iterations = 500;
  c.samples = 64;
  c.res_initial = 64;
  c.res_final = 128;
  c.grid.table_size = 1u << 14;
  return c;
}

TrainConfig TrainConfig::full() {
  TrainConfig c;
  c.iterations = 10000;
  c.samples = 64;
  c.res_initial = 256;
  c.res_final = 512;
  c.grid.table_size = 1u << 19;
  return c;
}

int TrainConfig::resolution_at(int iter) const {
  return iter < int(res_switch * iterations) ? res_initial : res_final;
}

void TrainConfig::validate() const {
  if (iterations < 1) throw ConfigError("train: iterations must be positive");
  if (samples < 1) throw ConfigError("train: samples must be positive");
  if (res_initial < 1 || res_final < 1) throw ConfigError("train: resolutions must be positive");
  if (!(res_switch >= 0 && res_switch <= 1)) throw ConfigError("train: res_switch out of [0,1]");
  if (!(threshold > 0 && threshold < 1)) throw ConfigError("train: threshold out of (0,1)");
  if (!(t_min > 0 && t_max < 1 && t_min <= t_max)) throw ConfigError("train: bad timestep range");
  if (!(adam.lr > 0)) throw ConfigError("train: learning rate must be positive");
}

namespace {

// fixed stream tags so every per-iteration random draw is independent
constexpr uint64_t kCameraStream = 0x63616d5ull;
constexpr uint64_t kTimestepStream = 0x7374657ull;
constexpr uint64_t kBackgroundStream = 0x6267ull;
constexpr uint64_t kNoiseStream = 0x6e6f69ull;

struct IterationDraws {
  Camera camera;
  double t = 0.5;
  Vec3 background;
  uint64_t noise_seed = 0;
};

IterationDraws draw_iteration(const SceneConfig& scene, const TrainConfig& cfg, int iter,
                              int res) {
  IterationDraws d;
  Rng cam_rng(mix64(cfg.seed, uint64_t(iter), kCameraStream));
  d.camera = sample_camera(scene.camera, res, res, cam_rng);
  Rng t_rng(mix64(cfg.seed, uint64_t(iter), kTimestepStream));
  d.t = sample_timestep(t_rng, cfg.t_min, cfg.t_max);
  Rng bg_rng(mix64(cfg.seed, uint64_t(iter), kBackgroundStream));
  double gray = bg_rng.uniform();
  d.background = Vec3{gray, gray, gray};
  d.noise_seed = mix64(cfg.seed, uint64_t(iter), kNoiseStream);
  return d;
}

RenderOptions options_for(const TrainConfig& cfg, int iter, const IterationDraws& d) {
  RenderOptions o;
  o.samples = cfg.samples;
  o.threshold = cfg.threshold;
  o.jitter = true;
  o.seed = cfg.seed;
  o.iteration = uint64_t(iter);
  o.background = d.background;
  return o;
}

TrainHistory run_loop(std::vector<Layer>& layers, const SceneConfig& scene,
                      const std::vector<SdsTerm>& terms, const TrainConfig& cfg,
                      const GuidanceProvider& provider, const TrainCallbacks& cb,
                      const std::function<void(GradSink&)>& freeze,
                      const std::function<void(const GradSink&)>& apply) {
  cfg.validate();
  bool use_skeleton = !scene.skeleton.empty() && !scene.bones.empty();
  TrainHistory hist;
  for (int iter = 0; iter < cfg.iterations; ++iter) {
    int res = cfg.resolution_at(iter);
    IterationDraws d = draw_iteration(scene, cfg, iter, res);
    RenderOptions opt = options_for(cfg, iter, d);

    Image skeleton;
    const Image* skel = nullptr;
    if (use_skeleton) {
      skeleton = project_skeleton(scene.skeleton, scene.bones, d.camera);
      skel = &skeleton;
    }

    GradSink sink;
    sink.init(layers);
    freeze(sink);
    StepStats st = loss_step(layers, d.camera, opt, provider, terms, skel, d.t, d.noise_seed,
                             cfg.reg, sink);
    apply(sink);

    hist.reg.push_back(st.reg);
    hist.grad_rms.push_back(st.grad_rms);
    if (cb.on_iteration) cb.on_iteration(iter, st);
  }
  return hist;
}

}  // namespace

TrainHistory train_body(RadianceField& body, const SceneConfig& scene, const TrainConfig& cfg,
                        const GuidanceProvider& provider, const TrainCallbacks& cb) {
  if (scene.layers.empty()) throw ConfigError("train_body: scene has no layers");
  PromptSet prompts = derive_prompts(scene.base_prompt, scene.layers);
  std::vector<Layer> layers(1);
  layers[0].name = scene.layers[0].name;
  layers[0].field = &body;
  std::vector<SdsTerm> terms{{prompts.body, RenderMode::kComposed, 1.0, 1.0}};
  AdamState adam;
  return run_loop(
      layers, scene, terms, cfg, provider, cb, [](GradSink&) {},
      [&](const GradSink& sink) { adam_step(body.params.values, sink.field_grads[0], adam, cfg.adam); });
}

TrainHistory train_cloth(RadianceField& cloth, const std::vector<const RadianceField*>& inner,
                         const SceneConfig& scene, int layer_index, const TrainConfig& cfg,
                         const GuidanceProvider& provider, const TrainCallbacks& cb) {
  if (layer_index < 1 || layer_index >= int(scene.layers.size()))
    throw ConfigError("train_cloth: layer index does not name a cloth layer of the scene");
  if (int(inner.size()) != layer_index)
    throw ConfigError("train_cloth: need one frozen field per inner layer");
  PromptSet prompts = derive_prompts(scene.base_prompt, scene.layers);
  const auto& [dressed, garment] = prompts.cloth[size_t(layer_index - 1)];

  std::vector<Layer> layers(inner.size() + 1);
  for (size_t i = 0; i < inner.size(); ++i) {
    layers[i].name = scene.layers[i].name;
    layers[i].field = inner[i];
  }
  layers.back().name = scene.layers[size_t(layer_index)].name;
  layers.back().field = &cloth;

  std::vector<SdsTerm> terms{{dressed, RenderMode::kComposed, 1.0, 1.0},
                             {garment, RenderMode::kClothOnly, 1.0, 1.0}};
  AdamState adam;
  return run_loop(
      layers, scene, terms, cfg, provider, cb,
      [&](GradSink& sink) {
        for (size_t i = 0; i + 1 < sink.field_grads.size(); ++i) sink.field_grads[i].clear();
      },
      [&](const GradSink& sink) {
        adam_step(cloth.params.values, sink.field_grads.back(), adam, cfg.adam);
      });
}

TrainHistory train_transfer(DeformationField& deform, const RadianceField& cloth,
                            const std::vector<const RadianceField*>& inner,
                            const SceneConfig& scene, int layer_index, const TrainConfig& cfg,
                            const GuidanceProvider& provider, const TrainCallbacks& cb) {
  if (layer_index < 1 || layer_index >= int(scene.layers.size()))
    throw ConfigError("train_transfer: layer index does not name a cloth layer of the scene");
  if (int(inner.size()) != layer_index)
    throw ConfigError("train_transfer: need one frozen field per inner layer");
  PromptSet prompts = derive_prompts(scene.base_prompt, scene.layers);
  const auto& [dressed, garment] = prompts.cloth[size_t(layer_index - 1)];

  std::vector<Layer> layers(inner.size() + 1);
  for (size_t i = 0; i < inner.size(); ++i) {
    layers[i].name = scene.layers[i].name;
    layers[i].field = inner[i];
  }
  layers.back().name = scene.layers[size_t(layer_index)].name;
  layers.back().field = &cloth;
  layers.back().deform = &deform;

  std::vector<SdsTerm> terms{{dressed, RenderMode::kComposed, 1.0, 1.0},
                             {garment, RenderMode::kClothOnly, 1.0, 1.0}};
  AdamState adam;
  return run_loop(
      layers, scene, terms, cfg, provider, cb,
      [&](GradSink& sink) {
        for (auto& g : sink.field_grads) g.clear();  // every radiance field stays frozen
      },
      [&](const GradSink& sink) {
        adam_step(deform.params.values, sink.deform_grads.back(), adam, cfg.adam);
      });
}

FrozenStepClosures make_frozen_step(const std::vector<Layer>& layers, const Camera& camera,
                                    const RenderOptions& opt, const GuidanceProvider& provider,
                                    const std::vector<SdsTerm>& terms, double t,
                                    uint64_t noise_seed, const RegTerms& reg, int target_layer,
                                    bool target_deform) {
  if (target_layer < 0 || target_layer >= int(layers.size()))
    throw ConfigError("make_frozen_step: bad target layer");

  // one residual per term, captured now and held constant from here on
  auto frozen = std::make_shared<std::vector<Image>>();
  for (size_t ti = 0; ti < terms.size(); ++ti) {
    RenderOptions o = opt;
    o.mode = terms[ti].mode;
    RenderOutput r = render_image(layers, camera, o);
    GuidanceContext ctx;
    ctx.prompt = terms[ti].prompt;
    ctx.t = t;
    ctx.seed = mix64(noise_seed, ti);
    ctx.camera = &camera;
    ctx.background = opt.background;
    frozen->push_back(provider(r.color, ctx));
  }

  FrozenStepClosures c;
  c.loss = [=]() {
    double total = 0;
    for (size_t ti = 0; ti < terms.size(); ++ti) {
      RenderOptions o = opt;
      o.mode = terms[ti].mode;
      RenderOutput r = render_image(layers, camera, o);
      Image g_pix = sds_pixel_grad((*frozen)[ti], t);
      double dotp = 0;
      for (size_t i = 0; i < g_pix.data.size(); ++i) dotp += g_pix.data[i] * r.color.data[i];
      total += terms[ti].weight * dotp;
      total += terms[ti].reg_weight * reg_loss(r.alpha, reg, nullptr);
    }
    return total;
  };
  c.grad = [=]() {
    // a provider that replays the captured residuals, matched by noise seed
    GuidanceProvider replay = [=](const Image&, const GuidanceContext& ctx) -> Image {
      for (size_t ti = 0; ti < terms.size(); ++ti)
        if (ctx.seed == mix64(noise_seed, ti)) return (*frozen)[ti];
      throw Error("frozen step: unexpected guidance query");
    };
    GradSink sink;
    sink.init(layers);
    for (int i = 0; i < int(sink.field_grads.size()); ++i) {
      if (i != target_layer || target_deform) sink.field_grads[size_t(i)].clear();
      if (i != target_layer || !target_deform) sink.deform_grads[size_t(i)].clear();
    }
    loss_step(layers, camera, opt, replay, terms, nullptr, t, noise_seed, reg, sink);
    return target_deform ? sink.deform_grads[size_t(target_layer)]
                         : sink.field_grads[size_t(target_layer)];
  };
  return c;
}

GradCheckReport grad_check(const std::function<double()>& loss,
                           const std::function<std::vector<double>()>& grad,
                           std::vector<float>& params, const std::vector<BlockInfo>& blocks,
                           int pick_per_block, double h, uint64_t seed) {
  GradCheckReport rep;
  double base = loss();
  rep.deterministic = (base == loss());
  std::vector<double> g = grad();
  if (g.size() != params.size()) throw Error("grad_check: gradient size mismatch");

  Rng rng(mix64(seed, 0x67636bull));
  for (const auto& block : blocks) {
    if (block.size == 0) continue;
    int picks = std::min<int>(pick_per_block, int(block.size));
    for (int p = 0; p < picks; ++p) {
      size_t idx = block.offset + size_t(rng.next_u64() % block.size);
      float orig = params[idx];
      params[idx] = static_cast<float>(double(orig) + h);
      double theta_p = double(params[idx]);
      double lp = loss();
      params[idx] = static_cast<float>(double(orig) - h);
      double theta_m = double(params[idx]);
      double lm = loss();
      params[idx] = orig;
      double denom = theta_p - theta_m;  // realized float32 step
      if (denom == 0) continue;
      double fd = (lp - lm) / denom;
      double rel = std::abs(fd - g[idx]) / std::max({std::abs(fd), std::abs(g[idx]), 1e-6});
      rep.checked += 1;
      if (rel > rep.max_rel_err) {
        rep.max_rel_err = rel;
        rep.worst_block = block.name;
      }
    }
  }
  return rep;
}

}  // namespace tela
