#include "tela/scene.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

#include "tela/errors.hpp"

namespace tela {

using nlohmann::json;

Camera Camera::look_at(const Vec3& eye, const Vec3& target, double fov_y_deg, int width,
                       int height) {
  Vec3 f = target - eye;
  if (f.norm() < 1e-12) throw ConfigError("camera eye coincides with look-at target");
  f = f.normalized();
  Vec3 up{0, 1, 0};
  if (cross(f, up).norm() < 1e-8) up = Vec3{0, 0, 1};  // looking straight up or down
  Vec3 r = cross(f, up).normalized();
  Vec3 d = cross(f, r);  // unit by construction, points down in image space
  Camera cam;
  cam.position = eye;
  cam.rotation = Mat3::from_rows(r, d, f);
  cam.fov_y_deg = fov_y_deg;
  cam.width = width;
  cam.height = height;
  return cam;
}

Vec3 Camera::project(const Vec3& world) const {
  Vec3 pc = rotation * (world - position);
  double fpx = focal_px();
  double u = fpx * pc.x / pc.z + 0.5 * width;
  double v = fpx * pc.y / pc.z + 0.5 * height;
  return Vec3{u, v, pc.z};
}

Vec3 Camera::ray_direction(double px, double py) const {
  double fpx = focal_px();
  Vec3 dc{(px - 0.5 * width) / fpx, (py - 0.5 * height) / fpx, 1.0};
  return (rotation.transposed() * dc).normalized();
}

const LayerSpec* SceneConfig::find_layer(const std::string& name) const {
  for (const auto& l : layers)
    if (l.name == name) return &l;
  return nullptr;
}

int SceneConfig::layer_index(const std::string& name) const {
  for (size_t i = 0; i < layers.size(); ++i)
    if (layers[i].name == name) return static_cast<int>(i);
  return -1;
}

namespace {

[[noreturn]] void fail(const std::string& path, const std::string& what) {
  throw ConfigError("scene: " + path + ": " + what);
}

void check_keys(const json& obj, const std::string& path,
                std::initializer_list<const char*> allowed) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool ok = false;
    for (const char* k : allowed)
      if (it.key() == k) ok = true;
    if (!ok) fail(path, "unknown key \"" + it.key() + "\"");
  }
}

double get_number(const json& obj, const std::string& path, const char* key) {
  if (!obj.contains(key)) fail(path, std::string("missing key \"") + key + "\"");
  const json& v = obj[key];
  if (!v.is_number()) fail(path + "." + key, "expected a number");
  return v.get<double>();
}

Vec3 get_vec3(const json& v, const std::string& path) {
  if (!v.is_array() || v.size() != 3) fail(path, "expected an array of 3 numbers");
  for (const auto& e : v)
    if (!e.is_number()) fail(path, "expected an array of 3 numbers");
  return Vec3{v[0].get<double>(), v[1].get<double>(), v[2].get<double>()};
}

void get_range(const json& obj, const std::string& path, const char* key, double& lo, double& hi) {
  if (!obj.contains(key)) return;  // keep defaults
  const json& v = obj[key];
  if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number())
    fail(path + "." + key, "expected [min, max]");
  lo = v[0].get<double>();
  hi = v[1].get<double>();
  if (!(lo <= hi)) fail(path + "." + key, "min exceeds max");
}

}  // namespace

SceneConfig load_scene(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("scene: invalid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ConfigError("scene: top level must be an object");
  check_keys(doc, "scene", {"base_prompt", "seed", "camera", "layers", "skeleton", "bones"});

  SceneConfig scene;

  if (!doc.contains("base_prompt") || !doc["base_prompt"].is_string())
    fail("scene.base_prompt", "required string");
  scene.base_prompt = doc["base_prompt"].get<std::string>();
  if (scene.base_prompt.empty()) fail("scene.base_prompt", "must be non-empty");

  if (doc.contains("seed")) {
    if (!doc["seed"].is_number_unsigned()) fail("scene.seed", "expected a non-negative integer");
    scene.seed = doc["seed"].get<uint64_t>();
  }

  if (doc.contains("camera")) {
    const json& c = doc["camera"];
    if (!c.is_object()) fail("scene.camera", "expected an object");
    check_keys(c, "scene.camera",
               {"azimuth_deg", "elevation_deg", "radius", "fov_y_deg", "look_at"});
    auto& cd = scene.camera;
    get_range(c, "scene.camera", "azimuth_deg", cd.azimuth_min_deg, cd.azimuth_max_deg);
    get_range(c, "scene.camera", "elevation_deg", cd.elevation_min_deg, cd.elevation_max_deg);
    get_range(c, "scene.camera", "radius", cd.radius_min, cd.radius_max);
    if (c.contains("fov_y_deg")) cd.fov_y_deg = get_number(c, "scene.camera", "fov_y_deg");
    if (c.contains("look_at")) cd.look_at = get_vec3(c["look_at"], "scene.camera.look_at");
    if (cd.radius_min <= 0) fail("scene.camera.radius", "must be positive");
    if (cd.fov_y_deg <= 0 || cd.fov_y_deg >= 180) fail("scene.camera.fov_y_deg", "out of (0, 180)");
    if (cd.elevation_min_deg < -90 || cd.elevation_max_deg > 90)
      fail("scene.camera.elevation_deg", "out of [-90, 90]");
  }

  if (!doc.contains("layers") || !doc["layers"].is_array() || doc["layers"].empty())
    fail("scene.layers", "required non-empty array");
  std::unordered_set<std::string> names;
  for (size_t i = 0; i < doc["layers"].size(); ++i) {
    const json& l = doc["layers"][i];
    std::string path = "scene.layers[" + std::to_string(i) + "]";
    if (!l.is_object()) fail(path, "expected an object");
    check_keys(l, path, {"name", "phrase", "aabb"});
    LayerSpec spec;
    if (!l.contains("name") || !l["name"].is_string()) fail(path + ".name", "required string");
    spec.name = l["name"].get<std::string>();
    if (spec.name.empty()) fail(path + ".name", "must be non-empty");
    if (!names.insert(spec.name).second) fail(path + ".name", "duplicate layer name");
    if (l.contains("phrase")) {
      if (!l["phrase"].is_string()) fail(path + ".phrase", "expected a string");
      spec.cloth_phrase = l["phrase"].get<std::string>();
    }
    if (i == 0 && !spec.cloth_phrase.empty())
      fail(path + ".phrase", "the first layer is the body and takes no phrase");
    if (i > 0 && spec.cloth_phrase.empty()) fail(path + ".phrase", "required for cloth layers");
    if (!l.contains("aabb") || !l["aabb"].is_array() || l["aabb"].size() != 2)
      fail(path + ".aabb", "required [[x,y,z],[x,y,z]]");
    spec.aabb.lo = get_vec3(l["aabb"][0], path + ".aabb[0]");
    spec.aabb.hi = get_vec3(l["aabb"][1], path + ".aabb[1]");
    if (!spec.aabb.valid()) fail(path + ".aabb", "lower corner must be below upper corner");
    if (!scene_bounds().contains(spec.aabb.lo) || !scene_bounds().contains(spec.aabb.hi))
      fail(path + ".aabb", "must lie inside the unit scene box [-1, 1]^3");
    scene.layers.push_back(spec);
  }

  if (doc.contains("skeleton")) {
    const json& sk = doc["skeleton"];
    if (!sk.is_array()) fail("scene.skeleton", "expected an array");
    for (size_t i = 0; i < sk.size(); ++i) {
      std::string path = "scene.skeleton[" + std::to_string(i) + "]";
      const json& j = sk[i];
      if (!j.is_object()) fail(path, "expected an object");
      check_keys(j, path, {"name", "pos"});
      Joint joint;
      if (!j.contains("name") || !j["name"].is_string()) fail(path + ".name", "required string");
      joint.name = j["name"].get<std::string>();
      if (!j.contains("pos")) fail(path + ".pos", "required");
      joint.pos = get_vec3(j["pos"], path + ".pos");
      scene.skeleton.push_back(joint);
    }
  }

  if (doc.contains("bones")) {
    const json& bs = doc["bones"];
    if (!bs.is_array()) fail("scene.bones", "expected an array");
    for (size_t i = 0; i < bs.size(); ++i) {
      std::string path = "scene.bones[" + std::to_string(i) + "]";
      const json& b = bs[i];
      if (!b.is_array() || b.size() != 2 || !b[0].is_number_integer() || !b[1].is_number_integer())
        fail(path, "expected [joint_index, joint_index]");
      int a = b[0].get<int>(), c = b[1].get<int>();
      int n = static_cast<int>(scene.skeleton.size());
      if (a < 0 || a >= n || c < 0 || c >= n) fail(path, "joint index out of range");
      if (a == c) fail(path, "bone endpoints must differ");
      scene.bones.push_back({a, c});
    }
  }

  return scene;
}

SceneConfig load_scene_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("scene: cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return load_scene(ss.str());
}

namespace {

// Words that name garments grammatically plural even when singular in number.
bool plural_garment(const std::string& phrase) {
  static const std::unordered_set<std::string> words = {"jeans",     "pants",  "shorts",
                                                        "trousers",  "leggings", "slacks"};
  size_t pos = phrase.find_last_of(' ');
  std::string last = pos == std::string::npos ? phrase : phrase.substr(pos + 1);
  std::transform(last.begin(), last.end(), last.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return words.count(last) > 0;
}

}  // namespace

PromptSet derive_prompts(const std::string& base_prompt, const std::vector<LayerSpec>& layers) {
  std::string subject = base_prompt;
  size_t pos = base_prompt.find(" wearing");
  if (pos != std::string::npos) subject = base_prompt.substr(0, pos);
  PromptSet p;
  p.body = subject + " only wearing underwear";
  for (size_t i = 1; i < layers.size(); ++i) {
    const std::string& phrase = layers[i].cloth_phrase;
    std::string on_body = subject + " only wearing " + phrase;
    std::string alone = (plural_garment(phrase) ? "a pair of " : "a piece of ") + phrase;
    p.cloth.emplace_back(on_body, alone);
  }
  return p;
}

Camera sample_camera(const CameraDistribution& dist, int width, int height, Rng& rng) {
  double az = deg_to_rad(rng.uniform(dist.azimuth_min_deg, dist.azimuth_max_deg));
  double el = deg_to_rad(rng.uniform(dist.elevation_min_deg, dist.elevation_max_deg));
  double r = rng.uniform(dist.radius_min, dist.radius_max);
  Vec3 offset{std::cos(el) * std::sin(az), std::sin(el), std::cos(el) * std::cos(az)};
  return Camera::look_at(dist.look_at + offset * r, dist.look_at, dist.fov_y_deg, width, height);
}

double skeleton_line_width(int height) { return 4.0 * height / 512.0; }

Vec3 skeleton_bone_color(int bone_index) {
  static const std::array<std::array<int, 3>, 18> palette = {{{255, 0, 0},
                                                              {255, 85, 0},
                                                              {255, 170, 0},
                                                              {255, 255, 0},
                                                              {170, 255, 0},
                                                              {85, 255, 0},
                                                              {0, 255, 0},
                                                              {0, 255, 85},
                                                              {0, 255, 170},
                                                              {0, 255, 255},
                                                              {0, 170, 255},
                                                              {0, 85, 255},
                                                              {0, 0, 255},
                                                              {85, 0, 255},
                                                              {170, 0, 255},
                                                              {255, 0, 255},
                                                              {255, 0, 170},
                                                              {255, 0, 85}}};
  const auto& c = palette[static_cast<size_t>(bone_index) % palette.size()];
  return Vec3{c[0] / 255.0, c[1] / 255.0, c[2] / 255.0};
}

namespace {

// distance from point p to segment [a, b] in 2D (xy components)
double segment_distance(double px, double py, const Vec3& a, const Vec3& b) {
  double vx = b.x - a.x, vy = b.y - a.y;
  double wx = px - a.x, wy = py - a.y;
  double vv = vx * vx + vy * vy;
  double t = vv > 0 ? std::clamp((wx * vx + wy * vy) / vv, 0.0, 1.0) : 0.0;
  double dx = wx - t * vx, dy = wy - t * vy;
  return std::sqrt(dx * dx + dy * dy);
}

}  // namespace

Image project_skeleton(const std::vector<Joint>& skeleton,
                       const std::vector<std::array<int, 2>>& bones, const Camera& camera) {
  if (!camera.valid()) throw ConfigError("project_skeleton: invalid camera");
  if (skeleton.empty()) throw ConfigError("project_skeleton: empty skeleton");

  const double near = 1e-4;
  std::vector<Vec3> cam_space(skeleton.size());
  bool any_in_front = false;
  for (size_t i = 0; i < skeleton.size(); ++i) {
    cam_space[i] = camera.rotation * (skeleton[i].pos - camera.position);
    if (cam_space[i].z > near) any_in_front = true;
  }
  if (!any_in_front) throw ConfigError("project_skeleton: every joint is behind the camera");

  Image img(camera.width, camera.height);
  double fpx = camera.focal_px();
  double cx = 0.5 * camera.width, cy = 0.5 * camera.height;
  auto to_pixel = [&](const Vec3& pc) {
    return Vec3{fpx * pc.x / pc.z + cx, fpx * pc.y / pc.z + cy, pc.z};
  };
  double half = 0.5 * skeleton_line_width(camera.height);

  for (size_t bi = 0; bi < bones.size(); ++bi) {
    Vec3 a = cam_space[static_cast<size_t>(bones[bi][0])];
    Vec3 b = cam_space[static_cast<size_t>(bones[bi][1])];
    if (a.z <= near && b.z <= near) continue;
    if (a.z <= near || b.z <= near) {  // clip at the near plane
      double t = (near - a.z) / (b.z - a.z);
      Vec3 c = a + (b - a) * t;
      (a.z <= near ? a : b) = c;
    }
    Vec3 pa = to_pixel(a), pb = to_pixel(b);
    Vec3 color = skeleton_bone_color(static_cast<int>(bi));

    int x0 = std::max(0, static_cast<int>(std::floor(std::min(pa.x, pb.x) - half - 1)));
    int x1 = std::min(camera.width - 1, static_cast<int>(std::ceil(std::max(pa.x, pb.x) + half + 1)));
    int y0 = std::max(0, static_cast<int>(std::floor(std::min(pa.y, pb.y) - half - 1)));
    int y1 = std::min(camera.height - 1, static_cast<int>(std::ceil(std::max(pa.y, pb.y) + half + 1)));
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        double d = segment_distance(x + 0.5, y + 0.5, pa, pb);
        double alpha = clamp01(half + 0.5 - d);  // one-pixel feather at the edge
        if (alpha <= 0) continue;
        Vec3 cur = img.get(x, y);
        // lighten blend keeps the result independent of bone order
        img.set(x, y, max(cur, color * alpha));
      }
    }
  }
  return img;
}

std::string canonical_scene_string(const SceneConfig& scene) {
  std::ostringstream ss;
  auto num = [&](double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    ss << buf;
  };
  auto vec = [&](const Vec3& v) {
    num(v.x);
    ss << ',';
    num(v.y);
    ss << ',';
    num(v.z);
  };
  ss << "prompt=" << scene.base_prompt << ";seed=" << scene.seed << ";camera=";
  num(scene.camera.azimuth_min_deg);
  ss << ',';
  num(scene.camera.azimuth_max_deg);
  ss << ',';
  num(scene.camera.elevation_min_deg);
  ss << ',';
  num(scene.camera.elevation_max_deg);
  ss << ',';
  num(scene.camera.radius_min);
  ss << ',';
  num(scene.camera.radius_max);
  ss << ',';
  num(scene.camera.fov_y_deg);
  ss << ',';
  vec(scene.camera.look_at);
  ss << ";layers=";
  for (const auto& l : scene.layers) {
    ss << '{' << l.name << '|' << l.cloth_phrase << '|';
    vec(l.aabb.lo);
    ss << '|';
    vec(l.aabb.hi);
    ss << '}';
  }
  ss << ";skeleton=";
  for (const auto& j : scene.skeleton) {
    ss << '{' << j.name << '|';
    vec(j.pos);
    ss << '}';
  }
  ss << ";bones=";
  for (const auto& b : scene.bones) ss << '{' << b[0] << ',' << b[1] << '}';
  return ss.str();
}

}  // namespace tela
