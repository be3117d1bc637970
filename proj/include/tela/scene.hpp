#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "tela/image.hpp"
#include "tela/math.hpp"
#include "tela/rng.hpp"

namespace tela {

// Pinhole camera, computer-vision convention: +z forward, image y grows
// downward, world-to-camera rotation stored row-major.
struct Camera {
  Vec3 position;
  Mat3 rotation;  // world-to-camera
  double fov_y_deg = 50.0;
  int width = 0, height = 0;

  static Camera look_at(const Vec3& eye, const Vec3& target, double fov_y_deg, int width,
                        int height);

  double focal_px() const { return 0.5 * height / std::tan(0.5 * deg_to_rad(fov_y_deg)); }

  // world point -> (u, v, z_cam); u/v in continuous pixel coordinates
  Vec3 project(const Vec3& world) const;
  // unit world-space direction through the center of pixel (px, py)
  Vec3 ray_direction(double px, double py) const;

  bool valid() const {
    return width > 0 && height > 0 && fov_y_deg > 0 && fov_y_deg < 180 &&
           rotation.orthonormality_error() < 1e-6;
  }
};

struct CameraDistribution {
  double azimuth_min_deg = 0.0, azimuth_max_deg = 360.0;
  double elevation_min_deg = -10.0, elevation_max_deg = 45.0;
  double radius_min = 2.2, radius_max = 3.0;
  double fov_y_deg = 50.0;
  Vec3 look_at{0, 0, 0};
};

struct LayerSpec {
  std::string name;
  std::string cloth_phrase;  // empty for the body layer
  Aabb aabb;
};

struct Joint {
  std::string name;
  Vec3 pos;
};

struct SceneConfig {
  std::string base_prompt;
  uint64_t seed = 0;
  std::vector<LayerSpec> layers;  // layers[0] is the body
  std::vector<Joint> skeleton;
  std::vector<std::array<int, 2>> bones;
  CameraDistribution camera;

  const LayerSpec* find_layer(const std::string& name) const;
  int layer_index(const std::string& name) const;  // -1 when absent
};

struct PromptSet {
  std::string body;                                           // y_b
  std::vector<std::pair<std::string, std::string>> cloth;     // per non-body layer: (y_bp, y_p)
};

// Parses and validates a scene document (JSON text). Unknown keys are
// rejected; validation failures name the offending key.
SceneConfig load_scene(const std::string& json_text);
SceneConfig load_scene_file(const std::string& path);

// Fixed slot-substitution templates; see README for the exact strings.
PromptSet derive_prompts(const std::string& base_prompt, const std::vector<LayerSpec>& layers);

Camera sample_camera(const CameraDistribution& dist, int width, int height, Rng& rng);

// Projects the 3D skeleton and rasterizes each bone as an anti-aliased line
// in a fixed per-bone palette color. Joints behind the camera are clipped;
// throws ConfigError when every joint is behind the camera.
Image project_skeleton(const std::vector<Joint>& skeleton,
                       const std::vector<std::array<int, 2>>& bones, const Camera& camera);

// line width is 4 px at 512^2 and scales with resolution
double skeleton_line_width(int height);
Vec3 skeleton_bone_color(int bone_index);

// Deterministic textual form of every field that affects optimization.
// Checkpoints store a hash of this string so a checkpoint can refuse to load
// into a different scene.
std::string canonical_scene_string(const SceneConfig& scene);

}  // namespace tela
