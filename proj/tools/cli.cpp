#include "cli.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <optional>

#include <CLI11.hpp>

#include "tela/checkpoint.hpp"
#include "tela/errors.hpp"
#include "tela/guidance.hpp"
#include "tela/image.hpp"
#include "tela/render.hpp"
#include "tela/scene.hpp"
#include "tela/train.hpp"

namespace tela {

namespace {

namespace fs = std::filesystem;

GuidanceProvider resolve_provider(std::string spec) {
  if (spec.empty()) {
    const char* env = std::getenv("TELA_GUIDANCE_URL");
    if (env && *env) spec = std::string("remote:") + env;
  }
  if (spec.empty())
    throw ConfigError("no guidance provider: pass --provider or set TELA_GUIDANCE_URL");
  if (spec.rfind("synthetic:", 0) == 0) {
    std::string path = spec.substr(10);
    if (path.empty()) throw ConfigError("--provider synthetic: needs an image path");
    return make_synthetic_provider(read_ppm(path));
  }
  if (spec.rfind("remote:", 0) == 0) {
    RemoteOptions o;
    o.endpoint = spec.substr(7);
    if (o.endpoint.empty()) throw ConfigError("--provider remote: needs a url");
    return make_remote_provider(o);
  }
  throw ConfigError("provider must be synthetic:PATH or remote:URL, got \"" + spec + "\"");
}

void check_overwrite(const std::string& path, bool force) {
  if (!force && fs::exists(path))
    throw ConfigError("output " + path + " already exists (pass --force to overwrite)");
}

struct CameraParams {
  double az = 0, el = 15, r = 2.6, fov = 50;
};

CameraParams parse_camera_string(const std::string& s) {
  CameraParams p;
  if (s.empty()) return p;
  size_t pos = 0;
  while (pos < s.size()) {
    size_t comma = s.find(',', pos);
    std::string item = s.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
    size_t eq = item.find('=');
    if (eq == std::string::npos) throw ConfigError("--camera expects key=value pairs, got \"" + item + "\"");
    std::string key = item.substr(0, eq);
    double val;
    try {
      val = std::stod(item.substr(eq + 1));
    } catch (const std::exception&) {
      throw ConfigError("--camera value for \"" + key + "\" is not a number");
    }
    if (key == "az")
      p.az = val;
    else if (key == "el")
      p.el = val;
    else if (key == "r")
      p.r = val;
    else if (key == "fov")
      p.fov = val;
    else
      throw ConfigError("--camera key must be az, el, r or fov, got \"" + key + "\"");
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  if (p.r <= 0) throw ConfigError("--camera r must be positive");
  return p;
}

Camera make_view(const CameraParams& p, const Vec3& look_at, int res) {
  double az = deg_to_rad(p.az), el = deg_to_rad(p.el);
  Vec3 pos = look_at + Vec3{std::cos(el) * std::sin(az), std::sin(el), std::cos(el) * std::cos(az)} * p.r;
  return Camera::look_at(pos, look_at, p.fov, res, res);
}

RenderMode parse_mode(const std::string& s) {
  if (s == "composed") return RenderMode::kComposed;
  if (s == "cloth-only") return RenderMode::kClothOnly;
  if (s == "baseline-max") return RenderMode::kBaselineMax;
  throw ConfigError("--mode must be composed, cloth-only or baseline-max, got \"" + s + "\"");
}

std::map<std::string, double> parse_scales(const std::vector<std::string>& specs) {
  std::map<std::string, double> scales;
  for (const auto& s : specs) {
    size_t eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--scale expects NAME=FACTOR, got \"" + s + "\"");
    double f;
    try {
      f = std::stod(s.substr(eq + 1));
    } catch (const std::exception&) {
      throw ConfigError("--scale factor is not a number in \"" + s + "\"");
    }
    if (!(f > 0)) throw ConfigError("--scale factor must be positive in \"" + s + "\"");
    scales[s.substr(0, eq)] = f;
  }
  return scales;
}

struct LoadedLayer {
  UnpackedLayer data;
  std::string source_stem;
};

std::vector<LoadedLayer> load_stack(const std::vector<std::string>& paths,
                                    const SceneConfig* expect) {
  std::vector<LoadedLayer> out;
  out.reserve(paths.size());
  for (const auto& p : paths) {
    LoadedLayer l{unpack_layer(load_checkpoint(p), expect), fs::path(p).stem().string()};
    out.push_back(std::move(l));
  }
  return out;
}

// Layers view over loaded checkpoints. The vector must outlive the view.
std::vector<Layer> stack_view(std::vector<LoadedLayer>& stack,
                              const std::map<std::string, double>& scales) {
  std::vector<Layer> layers;
  layers.reserve(stack.size());
  for (auto& l : stack) {
    Layer lay;
    lay.name = l.data.name;
    lay.field = &l.data.field;
    if (l.data.deform) lay.deform = &*l.data.deform;
    auto it = scales.find(l.data.name);
    if (it != scales.end()) lay.scale = it->second;
    layers.push_back(lay);
  }
  return layers;
}

struct TrainFlags {
  std::string scene, out, provider, preset = "desk";
  std::vector<std::string> ckpts;
  std::string layer;
  std::string cloth;  // transfer only
  int iters = -1;
  int res = -1;
  int samples = -1;
  double lambda1 = -1, lambda2 = -1, th = -1;
  std::optional<uint64_t> seed;
  bool force = false;
};

TrainConfig build_config(const TrainFlags& f, const SceneConfig& scene) {
  TrainConfig cfg;
  if (f.preset == "desk")
    cfg = TrainConfig::desk();
  else if (f.preset == "full")
    cfg = TrainConfig::full();
  else
    throw ConfigError("--preset must be desk or full, got \"" + f.preset + "\"");
  if (f.iters > 0) cfg.iterations = f.iters;
  if (f.res > 0) {
    cfg.res_final = f.res;
    cfg.res_initial = std::min(cfg.res_initial, f.res);
  }
  if (f.samples > 0) cfg.samples = f.samples;
  if (f.lambda1 >= 0) cfg.reg.lambda1 = f.lambda1;
  if (f.lambda2 >= 0) cfg.reg.lambda2 = f.lambda2;
  if (f.th > 0) cfg.threshold = f.th;
  cfg.seed = f.seed.value_or(scene.seed);
  cfg.validate();
  return cfg;
}

TrainCallbacks progress(const TrainConfig& cfg) {
  int total = cfg.iterations;
  TrainCallbacks cb;
  cb.on_iteration = [total](int iter, const StepStats& st) {
    if ((iter + 1) % 10 == 0 || iter + 1 == total)
      std::fprintf(stderr, "iter %d/%d reg=%.5f grad_rms=%.4g\n", iter + 1, total, st.reg,
                   st.grad_rms);
  };
  return cb;
}

void add_train_flags(CLI::App* cmd, TrainFlags& f, bool wants_layer, bool wants_ckpts) {
  cmd->add_option("--scene", f.scene, "scene json file")->required();
  cmd->add_option("--out", f.out, "output checkpoint path")->required();
  cmd->add_option("--provider", f.provider,
                  "guidance backend, synthetic:PATH or remote:URL "
                  "(default: remote via TELA_GUIDANCE_URL)");
  cmd->add_option("--preset", f.preset, "desk or full (default desk)");
  cmd->add_option("--iters", f.iters, "override iteration count");
  cmd->add_option("--res", f.res, "override final render resolution");
  cmd->add_option("--samples", f.samples, "override samples per ray");
  cmd->add_option("--lambda1", f.lambda1, "mask entropy weight");
  cmd->add_option("--lambda2", f.lambda2, "mask coverage weight");
  cmd->add_option("--th", f.th, "opacity partition threshold");
  cmd->add_option("--seed", f.seed, "override the scene seed");
  cmd->add_flag("--force", f.force, "overwrite existing outputs");
  if (wants_layer) cmd->add_option("--layer", f.layer, "scene layer to train")->required();
  if (wants_ckpts)
    cmd->add_option("--ckpt", f.ckpts, "frozen inner-layer checkpoints, innermost first")
        ->required();
}

void verify_inner_stack(const std::vector<LoadedLayer>& stack, const SceneConfig& scene,
                        int layer_index) {
  if (int(stack.size()) != layer_index)
    throw ConfigError("expected " + std::to_string(layer_index) +
                      " inner checkpoints for layer index " + std::to_string(layer_index) +
                      ", got " + std::to_string(stack.size()));
  for (int i = 0; i < layer_index; ++i)
    if (stack[size_t(i)].data.name != scene.layers[size_t(i)].name)
      throw ConfigError("checkpoint " + std::to_string(i) + " holds layer \"" +
                        stack[size_t(i)].data.name + "\" but the scene expects \"" +
                        scene.layers[size_t(i)].name + "\"");
}

int cmd_train_body(const TrainFlags& f) {
  SceneConfig scene = load_scene_file(f.scene);
  TrainConfig cfg = build_config(f, scene);
  check_overwrite(f.out, f.force);
  GuidanceProvider provider = resolve_provider(f.provider);
  RadianceField body =
      init_field(cfg.grid, cfg.mlp, scene.layers[0].aabb, mix64(cfg.seed, 0x626f6479ull));
  train_body(body, scene, cfg, provider, progress(cfg));
  save_checkpoint(f.out, pack_layer(scene.layers[0].name, body, nullptr, scene));
  std::printf("%s\n", f.out.c_str());
  return 0;
}

int cmd_train_cloth(const TrainFlags& f) {
  SceneConfig scene = load_scene_file(f.scene);
  TrainConfig cfg = build_config(f, scene);
  check_overwrite(f.out, f.force);
  int idx = scene.layer_index(f.layer);
  if (idx < 0) throw ConfigError("scene has no layer named \"" + f.layer + "\"");
  if (idx == 0) throw ConfigError("layer \"" + f.layer + "\" is the body; use train-body");
  GuidanceProvider provider = resolve_provider(f.provider);
  std::vector<LoadedLayer> stack = load_stack(f.ckpts, &scene);
  verify_inner_stack(stack, scene, idx);
  std::vector<const RadianceField*> inner;
  for (auto& l : stack) inner.push_back(&l.data.field);
  RadianceField cloth = init_field(cfg.grid, cfg.mlp, scene.layers[size_t(idx)].aabb,
                                   mix64(cfg.seed, uint64_t(idx)));
  train_cloth(cloth, inner, scene, idx, cfg, provider, progress(cfg));
  save_checkpoint(f.out, pack_layer(f.layer, cloth, nullptr, scene));
  std::printf("%s\n", f.out.c_str());
  return 0;
}

int cmd_transfer(const TrainFlags& f) {
  SceneConfig scene = load_scene_file(f.scene);
  TrainConfig cfg = build_config(f, scene);
  if (f.iters <= 0) cfg.iterations = f.preset == "full" ? 2500 : 250;
  check_overwrite(f.out, f.force);
  int idx = scene.layer_index(f.layer);
  if (idx <= 0) throw ConfigError("--layer must name a cloth layer of the target scene");
  GuidanceProvider provider = resolve_provider(f.provider);
  std::vector<LoadedLayer> stack = load_stack(f.ckpts, &scene);
  verify_inner_stack(stack, scene, idx);
  std::vector<const RadianceField*> inner;
  for (auto& l : stack) inner.push_back(&l.data.field);
  // the garment comes from another scene, so its hash is not checked
  UnpackedLayer cloth = unpack_layer(load_checkpoint(f.cloth), nullptr);
  DeformationField deform = init_deform(DeformSpec{}, mix64(cfg.seed, 0xdef0ull));
  train_transfer(deform, cloth.field, inner, scene, idx, cfg, provider, progress(cfg));
  save_checkpoint(f.out, pack_layer(scene.layers[size_t(idx)].name, cloth.field, &deform, scene));
  std::printf("%s\n", f.out.c_str());
  return 0;
}

struct RenderFlags {
  std::vector<std::string> ckpts;
  std::string scene, out, mode = "composed", camera, layers_csv;
  std::vector<std::string> scales;
  int res = 256, samples = 64;
  double th = 0.5;
  bool force = false;
};

int cmd_render(const RenderFlags& f) {
  std::optional<SceneConfig> scene;
  if (!f.scene.empty()) scene = load_scene_file(f.scene);
  check_overwrite(f.out, f.force);
  std::vector<LoadedLayer> stack = load_stack(f.ckpts, scene ? &*scene : nullptr);

  if (!f.layers_csv.empty()) {
    std::vector<LoadedLayer> filtered;
    size_t pos = 0;
    while (pos <= f.layers_csv.size()) {
      size_t comma = f.layers_csv.find(',', pos);
      std::string name = f.layers_csv.substr(
          pos, comma == std::string::npos ? std::string::npos : comma - pos);
      bool found = false;
      for (auto& l : stack)
        if (l.data.name == name) {
          filtered.push_back(std::move(l));
          l.data.name.clear();
          found = true;
          break;
        }
      if (!found) throw ConfigError("--layers names \"" + name + "\" but no checkpoint holds it");
      if (comma == std::string::npos) break;
      pos = comma + 1;
    }
    stack = std::move(filtered);
  }

  std::vector<Layer> layers = stack_view(stack, parse_scales(f.scales));
  Vec3 look_at = scene ? scene->camera.look_at : Vec3{0, 0, 0};
  Camera cam = make_view(parse_camera_string(f.camera), look_at, f.res);
  RenderOptions opt;
  opt.samples = f.samples;
  opt.threshold = f.th;
  opt.mode = parse_mode(f.mode);
  RenderOutput img = render_image(layers, cam, opt);
  write_image_auto(f.out, img.color);
  std::printf("%s\n", f.out.c_str());
  return 0;
}

int cmd_compose(const RenderFlags& f) {
  std::optional<SceneConfig> scene;
  if (!f.scene.empty()) scene = load_scene_file(f.scene);
  std::vector<LoadedLayer> stack = load_stack(f.ckpts, scene ? &*scene : nullptr);
  if (stack.empty()) throw ConfigError("compose needs at least one checkpoint");

  // group alternatives by layer name, keeping first-appearance order
  std::vector<std::string> group_names;
  std::map<std::string, std::vector<LoadedLayer*>> groups;
  for (auto& l : stack) {
    if (!groups.count(l.data.name)) group_names.push_back(l.data.name);
    groups[l.data.name].push_back(&l);
  }

  fs::create_directories(f.out);
  std::map<std::string, double> scales = parse_scales(f.scales);
  Vec3 look_at = scene ? scene->camera.look_at : Vec3{0, 0, 0};
  Camera cam = make_view(parse_camera_string(f.camera), look_at, f.res);
  RenderOptions opt;
  opt.samples = f.samples;
  opt.threshold = f.th;

  std::vector<size_t> pick(group_names.size(), 0);
  while (true) {
    std::vector<LoadedLayer> combo_storage;  // none, pointers suffice
    std::vector<Layer> layers;
    std::string stem;
    for (size_t g = 0; g < group_names.size(); ++g) {
      LoadedLayer* l = groups[group_names[g]][pick[g]];
      Layer lay;
      lay.name = l->data.name;
      lay.field = &l->data.field;
      if (l->data.deform) lay.deform = &*l->data.deform;
      auto it = scales.find(lay.name);
      if (it != scales.end()) lay.scale = it->second;
      layers.push_back(lay);
      if (!stem.empty()) stem += "+";
      stem += l->source_stem;
    }
    std::string path = (fs::path(f.out) / (stem + ".ppm")).string();
    RenderOutput img = render_image(layers, cam, opt);
    write_image_auto(path, img.color);
    std::printf("%s\n", path.c_str());

    size_t g = 0;
    for (; g < pick.size(); ++g) {
      pick[g] += 1;
      if (pick[g] < groups[group_names[g]].size()) break;
      pick[g] = 0;
    }
    if (g == pick.size()) break;
  }
  return 0;
}

int cmd_gradcheck(uint64_t seed) {
  GridSpec grid;
  grid.levels = 4;
  grid.features = 2;
  grid.table_size = 1u << 10;
  grid.base_resolution = 4;
  grid.max_resolution = 16;
  MlpSpec mlp{2, 16};
  Aabb inner_box{{-0.4, -0.4, -0.4}, {0.4, 0.4, 0.4}};
  Aabb outer_box{{-0.5, -0.5, -0.5}, {0.5, 0.5, 0.5}};
  RadianceField body = init_field(grid, mlp, inner_box, mix64(seed, 1));
  RadianceField cloth = init_field(grid, mlp, outer_box, mix64(seed, 2));
  // fresh fields sit on relu kinks; scramble into general position
  Rng scramble(mix64(seed, 3));
  for (float& v : body.params.values) v = float(scramble.uniform(-0.4, 0.4));
  for (float& v : cloth.params.values) v = float(scramble.uniform(-0.4, 0.4));

  std::vector<Layer> layers(2);
  layers[0] = {"body", &body, nullptr, 1.0, nullptr};
  layers[1] = {"cloth", &cloth, nullptr, 1.0, nullptr};

  Camera cam = Camera::look_at(Vec3{0, 0, -2.2}, Vec3{0, 0, 0}, 50, 4, 4);
  RenderOptions opt;
  opt.samples = 8;
  opt.background = Vec3{0.5, 0.5, 0.5};

  Image target(4, 4);
  Rng trng(mix64(seed, 4));
  for (double& v : target.data) v = trng.uniform();
  GuidanceProvider provider = make_synthetic_provider(target);

  std::vector<SdsTerm> terms{{"subject", RenderMode::kComposed, 1.0, 1.0},
                             {"garment", RenderMode::kClothOnly, 1.0, 1.0}};
  FrozenStepClosures c = make_frozen_step(layers, cam, opt, provider, terms, 0.5,
                                          mix64(seed, 5), RegTerms{}, 1);
  GradCheckReport rep =
      grad_check(c.loss, c.grad, cloth.params.values, cloth.params.blocks, 30, 1e-4, seed);
  std::printf("checked=%zu max_rel_err=%.3e worst_block=%s deterministic=%s\n", rep.checked,
              rep.max_rel_err, rep.worst_block.empty() ? "-" : rep.worst_block.c_str(),
              rep.deterministic ? "yes" : "no");
  bool ok = rep.deterministic && rep.max_rel_err < 1e-3;
  if (!ok) std::fprintf(stderr, "gradient check failed\n");
  return ok ? 0 : 3;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"layered avatar training, rendering and transfer"};
  app.require_subcommand(1);

  TrainFlags tb, tc, tr;
  RenderFlags rf, cf;
  uint64_t gc_seed = 1;

  CLI::App* body = app.add_subcommand("train-body", "optimize the innermost layer");
  add_train_flags(body, tb, false, false);

  CLI::App* cloth = app.add_subcommand("train-cloth", "optimize one cloth layer over a frozen stack");
  add_train_flags(cloth, tc, true, true);

  CLI::App* trans = app.add_subcommand("transfer", "fit a deformation carrying a garment onto a new stack");
  add_train_flags(trans, tr, true, true);
  trans->add_option("--cloth", tr.cloth, "garment checkpoint to transfer")->required();

  CLI::App* render = app.add_subcommand("render", "render a checkpoint stack to an image");
  render->add_option("--ckpt", rf.ckpts, "layer checkpoints, innermost first")->required();
  render->add_option("--out", rf.out, "output image (.ppm or .png)")->required();
  render->add_option("--scene", rf.scene, "scene json, verifies checkpoint provenance");
  render->add_option("--res", rf.res, "image resolution (default 256)");
  render->add_option("--samples", rf.samples, "samples per ray (default 64)");
  render->add_option("--mode", rf.mode, "composed | cloth-only | baseline-max");
  render->add_option("--camera", rf.camera, "view as az=DEG,el=DEG,r=DIST[,fov=DEG]");
  render->add_option("--layers", rf.layers_csv, "comma-separated subset of layers to keep");
  render->add_option("--scale", rf.scales, "NAME=FACTOR rigid resize of one layer");
  render->add_option("--th", rf.th, "opacity partition threshold (default 0.5)");
  render->add_flag("--force", rf.force, "overwrite existing output");

  CLI::App* compose = app.add_subcommand(
      "compose", "render every combination of alternative layer checkpoints");
  compose->add_option("--ckpt", cf.ckpts, "layer checkpoints; same-name layers are alternatives")
      ->required();
  compose->add_option("--out", cf.out, "output directory")->required();
  compose->add_option("--scene", cf.scene, "scene json, verifies checkpoint provenance");
  compose->add_option("--res", cf.res, "image resolution (default 256)");
  compose->add_option("--samples", cf.samples, "samples per ray (default 64)");
  compose->add_option("--camera", cf.camera, "view as az=DEG,el=DEG,r=DIST[,fov=DEG]");
  compose->add_option("--scale", cf.scales, "NAME=FACTOR rigid resize of one layer");
  compose->add_option("--th", cf.th, "opacity partition threshold (default 0.5)");

  CLI::App* gradcheck =
      app.add_subcommand("gradcheck", "finite-difference audit of the training gradients");
  gradcheck->add_option("--seed", gc_seed, "rng seed (default 1)");

  try {
    // CLI11 consumes the vector back to front
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (body->parsed()) return cmd_train_body(tb);
    if (cloth->parsed()) return cmd_train_cloth(tc);
    if (trans->parsed()) return cmd_transfer(tr);
    if (render->parsed()) return cmd_render(rf);
    if (compose->parsed()) return cmd_compose(cf);
    if (gradcheck->parsed()) return cmd_gradcheck(gc_seed);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
  return 0;
}

}  // namespace tela
