#include <doctest.h>

#include <cmath>
#include <vector>

#include "reference.hpp"
#include "tela/errors.hpp"
#include "tela/guidance.hpp"
#include "tela/render.hpp"
#include "tela/rng.hpp"
#include "tela/train.hpp"

using namespace tela;

namespace {

const char* kBodyScene = R"({
  "base_prompt": "a man",
  "seed": 5,
  "layers": [
    { "name": "body", "aabb": [[-0.5, -0.8, -0.4], [0.5, 0.8, 0.4]] }
  ]
})";

const char* kTwoScene = R"({
  "base_prompt": "a man wearing a coat",
  "seed": 5,
  "layers": [
    { "name": "body", "aabb": [[-0.4, -0.7, -0.3], [0.4, 0.7, 0.3]] },
    { "name": "coat", "phrase": "coat", "aabb": [[-0.55, -0.5, -0.45], [0.55, 0.75, 0.45]] }
  ]
})";

GridSpec tiny_grid() {
  GridSpec g;
  g.levels = 3;
  g.features = 2;
  g.table_size = 1u << 9;
  g.base_resolution = 4;
  g.max_resolution = 16;
  return g;
}

void scramble(ParamPack& p, uint64_t seed) {
  Rng rng(seed);
  for (auto& v : p.values) v = static_cast<float>(rng.uniform(-0.4, 0.4));
}

Image solid(int w, int h, const Vec3& c) {
  Image img(w, h);
  for (int i = 0; i < w * h; ++i) {
    img.data[size_t(3 * i) + 0] = c.x;
    img.data[size_t(3 * i) + 1] = c.y;
    img.data[size_t(3 * i) + 2] = c.z;
  }
  return img;
}

TrainConfig smoke_config() {
  TrainConfig cfg;
  cfg.iterations = 3;
  cfg.samples = 8;
  cfg.res_initial = 8;
  cfg.res_final = 8;
  cfg.adam.lr = 0.02;
  cfg.seed = 11;
  return cfg;
}

}  // namespace

TEST_CASE("adam_step reproduces the update arithmetic step by step") {
  std::vector<float> params{0.5f, -0.25f, 1.5f};
  std::vector<float> mine = params;
  AdamConfig cfg;
  cfg.lr = 0.1;
  cfg.beta1 = 0.9;
  cfg.beta2 = 0.99;
  cfg.eps = 1e-15;
  cfg.clip = 0;  // disabled, the bare recursion
  AdamState st;

  std::vector<double> m(3, 0.0), v(3, 0.0);
  for (int step = 1; step <= 3; ++step) {
    std::vector<double> grad{0.3 * step, -1.2, 0.05 * step * step};
    adam_step(params, grad, st, cfg);
    double c1 = 1.0 - std::pow(cfg.beta1, double(step));
    double c2 = 1.0 - std::pow(cfg.beta2, double(step));
    for (size_t i = 0; i < mine.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
      double mhat = m[i] / c1;
      double vhat = v[i] / c2;
      mine[i] = static_cast<float>(double(mine[i]) - cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps));
      CHECK(params[i] == mine[i]);
    }
    CHECK(st.step == step);
  }
}

TEST_CASE("gradient clipping equals pre-scaling the gradient to the norm bound") {
  std::vector<float> a{0.2f, -0.7f, 1.1f, 0.4f};
  std::vector<float> b = a;
  std::vector<double> grad{3.0, -4.0, 1.0, -2.0};

  double norm2 = 0;
  for (double g : grad) norm2 += g * g;
  double scale = 1.0 / std::sqrt(norm2);  // clip = 1 < norm
  std::vector<double> scaled = grad;
  for (double& g : scaled) g = g * scale;

  AdamConfig clip_on;
  clip_on.clip = 1.0;
  AdamConfig clip_off = clip_on;
  clip_off.clip = 0;

  AdamState sa, sb;
  adam_step(a, grad, sa, clip_on);
  adam_step(b, scaled, sb, clip_off);
  for (size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);

  // below the bound the clip is a no-op
  std::vector<float> c{0.2f, -0.7f, 1.1f, 0.4f};
  std::vector<float> d = c;
  std::vector<double> small{1e-3, -2e-3, 0.5e-3, 0.0};
  AdamState sc, sd;
  adam_step(c, small, sc, clip_on);
  adam_step(d, small, sd, clip_off);
  for (size_t i = 0; i < c.size(); ++i) CHECK(c[i] == d[i]);
}

TEST_CASE("adam_step rejects mismatched shapes") {
  std::vector<float> params{1.0f, 2.0f};
  AdamState st;
  CHECK_THROWS_AS(adam_step(params, {1.0, 2.0, 3.0}, st, AdamConfig{}), Error);

  adam_step(params, {1.0, 2.0}, st, AdamConfig{});
  std::vector<float> bigger{1.0f, 2.0f, 3.0f};
  CHECK_THROWS_AS(adam_step(bigger, {1.0, 2.0, 3.0}, st, AdamConfig{}), Error);
}

TEST_CASE("train config presets and the resolution schedule") {
  TrainConfig desk = TrainConfig::desk();
  CHECK(desk.iterations == 500);
  CHECK(desk.samples == 64);
  CHECK(desk.res_initial == 64);
  CHECK(desk.res_final == 128);
  CHECK(desk.grid.table_size == (1u << 14));
  desk.validate();

  TrainConfig full = TrainConfig::full();
  CHECK(full.iterations == 10000);
  CHECK(full.res_initial == 256);
  CHECK(full.res_final == 512);
  CHECK(full.grid.table_size == (1u << 19));
  full.validate();

  TrainConfig c;
  c.iterations = 10;
  c.res_initial = 32;
  c.res_final = 64;
  c.res_switch = 0.5;
  CHECK(c.resolution_at(0) == 32);
  CHECK(c.resolution_at(4) == 32);
  CHECK(c.resolution_at(5) == 64);
  CHECK(c.resolution_at(9) == 64);
  c.res_switch = 0.0;
  CHECK(c.resolution_at(0) == 64);
  c.res_switch = 1.0;
  CHECK(c.resolution_at(9) == 32);
}

TEST_CASE("train config validation rejects out-of-range settings") {
  auto broken = [](auto mutate) {
    TrainConfig c;
    mutate(c);
    return c;
  };
  CHECK_THROWS_AS(broken([](TrainConfig& c) { c.iterations = 0; }).validate(), ConfigError);
  CHECK_THROWS_AS(broken([](TrainConfig& c) { c.samples = 0; }).validate(), ConfigError);
  CHECK_THROWS_AS(broken([](TrainConfig& c) { c.res_initial = 0; }).validate(), ConfigError);
  CHECK_THROWS_AS(broken([](TrainConfig& c) { c.res_final = -1; }).validate(), ConfigError);
  CHECK_THROWS_AS(broken([](TrainConfig& c) { c.res_switch = 1.5; }).validate(), ConfigError);
  CHECK_THROWS_AS(broken([](TrainConfig& c) { c.threshold = 0.0; }).validate(), ConfigError);
  CHECK_THROWS_AS(broken([](TrainConfig& c) { c.threshold = 1.0; }).validate(), ConfigError);
  CHECK_THROWS_AS(broken([](TrainConfig& c) { c.t_min = 0.0; }).validate(), ConfigError);
  CHECK_THROWS_AS(broken([](TrainConfig& c) { c.t_max = 1.0; }).validate(), ConfigError);
  CHECK_THROWS_AS(broken([](TrainConfig& c) { c.t_min = 0.9; c.t_max = 0.1; }).validate(),
                  ConfigError);
  CHECK_THROWS_AS(broken([](TrainConfig& c) { c.adam.lr = 0.0; }).validate(), ConfigError);
}

TEST_CASE("grad_check accepts an exact gradient and flags a corrupted block") {
  // quadratic in float32 parameters: loss = sum c_i p_i^2, grad_i = 2 c_i p_i
  std::vector<float> params(8);
  Rng rng(3);
  for (auto& p : params) p = static_cast<float>(rng.uniform(0.3, 1.0));
  std::vector<double> coef(8);
  for (size_t i = 0; i < coef.size(); ++i) coef[i] = 0.5 + 0.1 * double(i);
  std::vector<BlockInfo> blocks{{"a", 0, 3}, {"b", 3, 5}};

  auto loss = [&]() {
    double total = 0;
    for (size_t i = 0; i < params.size(); ++i) total += coef[i] * double(params[i]) * double(params[i]);
    return total;
  };
  bool corrupt = false;
  auto grad = [&]() {
    std::vector<double> g(params.size());
    for (size_t i = 0; i < params.size(); ++i) g[i] = 2.0 * coef[i] * double(params[i]);
    if (corrupt)
      for (size_t i = 3; i < 8; ++i) g[i] *= 1.5;
    return g;
  };

  GradCheckReport rep = grad_check(loss, grad, params, blocks, 3, 1e-4, 7);
  CHECK(rep.deterministic);
  CHECK(rep.checked == 6);
  CHECK(rep.max_rel_err < 1e-6);

  corrupt = true;
  GradCheckReport bad = grad_check(loss, grad, params, blocks, 3, 1e-4, 7);
  CHECK(bad.max_rel_err > 0.2);
  CHECK(bad.worst_block == "b");

  auto short_grad = [&]() { return std::vector<double>(3, 0.0); };
  CHECK_THROWS_AS(grad_check(loss, short_grad, params, blocks, 1), Error);
}

TEST_CASE("frozen step closures agree with the production backward pass") {
  SceneConfig scene = load_scene(kTwoScene);
  RadianceField body = init_field(tiny_grid(), MlpSpec{2, 16}, scene.layers[0].aabb, 21);
  RadianceField coat = init_field(tiny_grid(), MlpSpec{2, 16}, scene.layers[1].aabb, 22);
  scramble(body.params, 31);
  scramble(coat.params, 32);
  // a dense inner layer, so rear samples are assigned to it and its
  // gradient is populated in composed mode
  body.params.values[body.params.find("mlp/sigma_b")->offset] = 3.0f;

  std::vector<Layer> layers{{"body", &body, nullptr, 1.0, nullptr},
                            {"coat", &coat, nullptr, 1.0, nullptr}};
  Camera cam = Camera::look_at({0.3, 0.2, -2.2}, {0, 0, 0}, 55, 8, 8);
  RenderOptions opt;
  opt.samples = 12;
  opt.jitter = true;
  opt.seed = 9;
  opt.background = {0.4, 0.4, 0.4};
  Image ref = solid(8, 8, {0.8, 0.2, 0.3});
  GuidanceProvider provider = make_synthetic_provider(ref);
  std::vector<SdsTerm> terms{{"dressed", RenderMode::kComposed, 0.7, 0.3},
                             {"garment", RenderMode::kClothOnly, 1.0, 0.5}};
  RegTerms reg;

  SUBCASE("outer field gradient") {
    FrozenStepClosures c =
        make_frozen_step(layers, cam, opt, provider, terms, 0.37, 99, reg, 1);
    // h small enough that no ReLU preactivation crosses zero inside the step
    GradCheckReport rep =
        grad_check(c.loss, c.grad, coat.params.values, coat.params.blocks, 2, 1e-5, 5);
    CHECK(rep.deterministic);
    CHECK(rep.checked > 0);
    CHECK(rep.max_rel_err < 2e-3);
  }

  SUBCASE("inner field gradient") {
    FrozenStepClosures c =
        make_frozen_step(layers, cam, opt, provider, terms, 0.37, 99, reg, 0);
    GradCheckReport rep =
        grad_check(c.loss, c.grad, body.params.values, body.params.blocks, 1, 1e-5, 5);
    CHECK(rep.deterministic);
    CHECK(rep.max_rel_err < 2e-3);
  }

  SUBCASE("deformation gradient") {
    DeformationField deform = init_deform(DeformSpec{4, 2, 12, 0.1}, 23);
    scramble(deform.params, 33);
    std::vector<Layer> warped = layers;
    warped[1].deform = &deform;
    FrozenStepClosures c =
        make_frozen_step(warped, cam, opt, provider, terms, 0.37, 99, reg, 1, true);
    // deform parameters move sample positions, and the trilinear grid is only
    // C0 across cell faces; the narrower probe keeps the step inside a cell
    GradCheckReport rep =
        grad_check(c.loss, c.grad, deform.params.values, deform.params.blocks, 2, 1e-5, 5);
    CHECK(rep.deterministic);
    CHECK(rep.max_rel_err < 2e-3);
  }

  SUBCASE("bad target layer") {
    CHECK_THROWS_AS(make_frozen_step(layers, cam, opt, provider, terms, 0.37, 99, reg, 2),
                    ConfigError);
  }
}

TEST_CASE("train_body runs, moves parameters and repeats bitwise") {
  SceneConfig scene = load_scene(kBodyScene);
  TrainConfig cfg = smoke_config();
  GuidanceProvider provider = make_synthetic_provider(solid(4, 4, {0.7, 0.3, 0.2}));

  RadianceField a = init_field(tiny_grid(), MlpSpec{2, 16}, scene.layers[0].aabb, 5);
  std::vector<float> before = a.params.values;
  int calls = 0;
  TrainCallbacks cb;
  cb.on_iteration = [&](int iter, const StepStats&) { CHECK(iter == calls++); };
  TrainHistory hist = train_body(a, scene, cfg, provider, cb);

  CHECK(calls == cfg.iterations);
  CHECK(hist.reg.size() == size_t(cfg.iterations));
  CHECK(hist.grad_rms.size() == size_t(cfg.iterations));
  for (double r : hist.reg) CHECK(std::isfinite(r));
  for (double g : hist.grad_rms) {
    CHECK(std::isfinite(g));
    CHECK(g >= 0);
  }
  CHECK(a.params.values != before);

  RadianceField b = init_field(tiny_grid(), MlpSpec{2, 16}, scene.layers[0].aabb, 5);
  train_body(b, scene, cfg, provider);
  CHECK(ref::hash_floats(a.params.values) == ref::hash_floats(b.params.values));

  SUBCASE("empty scenes are rejected") {
    SceneConfig none = scene;
    none.layers.clear();
    RadianceField f = init_field(tiny_grid(), MlpSpec{2, 16}, scene.layers[0].aabb, 5);
    CHECK_THROWS_AS(train_body(f, none, cfg, provider), ConfigError);
  }
}

TEST_CASE("train_cloth leaves the frozen body untouched") {
  SceneConfig scene = load_scene(kTwoScene);
  TrainConfig cfg = smoke_config();
  GuidanceProvider provider = make_synthetic_provider(solid(4, 4, {0.2, 0.5, 0.8}));

  RadianceField body = init_field(tiny_grid(), MlpSpec{2, 16}, scene.layers[0].aabb, 6);
  scramble(body.params, 61);
  body.params.values[body.params.find("mlp/sigma_b")->offset] = 2.0f;
  std::vector<float> body_before = body.params.values;

  RadianceField coat = init_field(tiny_grid(), MlpSpec{2, 16}, scene.layers[1].aabb, 7);
  std::vector<float> coat_before = coat.params.values;

  TrainHistory hist = train_cloth(coat, {&body}, scene, 1, cfg, provider);
  CHECK(hist.reg.size() == size_t(cfg.iterations));
  CHECK(body.params.values == body_before);
  CHECK(coat.params.values != coat_before);

  CHECK_THROWS_AS(train_cloth(coat, {&body}, scene, 0, cfg, provider), ConfigError);
  CHECK_THROWS_AS(train_cloth(coat, {&body}, scene, 2, cfg, provider), ConfigError);
  CHECK_THROWS_AS(train_cloth(coat, {}, scene, 1, cfg, provider), ConfigError);
}

TEST_CASE("train_transfer trains the deformation and nothing else") {
  SceneConfig scene = load_scene(kTwoScene);
  TrainConfig cfg = smoke_config();
  GuidanceProvider provider = make_synthetic_provider(solid(4, 4, {0.6, 0.6, 0.1}));

  RadianceField body = init_field(tiny_grid(), MlpSpec{2, 16}, scene.layers[0].aabb, 8);
  scramble(body.params, 81);
  body.params.values[body.params.find("mlp/sigma_b")->offset] = 2.0f;
  RadianceField coat = init_field(tiny_grid(), MlpSpec{2, 16}, scene.layers[1].aabb, 9);
  scramble(coat.params, 91);
  coat.params.values[coat.params.find("mlp/sigma_b")->offset] = 1.5f;
  std::vector<float> body_before = body.params.values;
  std::vector<float> coat_before = coat.params.values;

  DeformationField deform = init_deform(DeformSpec{4, 2, 12, 0.1}, 10);
  std::vector<float> deform_before = deform.params.values;

  TrainHistory hist = train_transfer(deform, coat, {&body}, scene, 1, cfg, provider);
  CHECK(hist.grad_rms.size() == size_t(cfg.iterations));
  CHECK(body.params.values == body_before);
  CHECK(coat.params.values == coat_before);
  CHECK(deform.params.values != deform_before);

  CHECK_THROWS_AS(train_transfer(deform, coat, {&body}, scene, 0, cfg, provider), ConfigError);
  CHECK_THROWS_AS(train_transfer(deform, coat, {}, scene, 1, cfg, provider), ConfigError);
}
