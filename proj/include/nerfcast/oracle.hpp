#pragma once

#include <optional>
#include <string>
#include <vector>

#include "nerfcast/dataset.hpp"
#include "nerfcast/rng.hpp"
#include "nerfcast/vec.hpp"

namespace nerfcast {

enum class MaterialKind { kLambertian, kMirror, kGlossy };

struct Material {
  MaterialKind kind = MaterialKind::kLambertian;
  Vec3d color;        // albedo for lambertian, tint otherwise
  double vmf_width = 0.0;  // glossy lobe width rho
};

struct SphereSpec {
  Vec3d center;
  double radius = 1.0;
  Material material;
};

struct PlaneSpec {
  double height = 0.0;
  Vec3d albedo1{0.8, 0.8, 0.8};
  Vec3d albedo2{0.15, 0.15, 0.15};
  double checker_scale = 0.5;
};

struct SkySpec {
  Vec3d top{0.35, 0.55, 0.85};
  Vec3d bottom{0.85, 0.8, 0.75};
};

struct DiskLightSpec {
  Vec3d direction{-0.35, 0.25, 1.0};  // toward the light
  Vec3d color{1.0, 0.97, 0.9};
  double angular_radius = 0.08;
};

struct CameraSpec {
  double orbit_radius = 2.3;
  double elevation_deg = 28.0;
  double fov_deg = 50.0;
  Vec3d look_at{0, 0, 0.4};
};

struct SceneSpec {
  std::vector<SphereSpec> spheres;
  std::optional<PlaneSpec> plane;
  SkySpec sky;
  DiskLightSpec light;
  CameraSpec camera;

  void validate() const;  // non-overlapping primitives, colors in [0,1], rho >= 0
  static SceneSpec from_json_file(const std::string& path);
  void to_json_file(const std::string& path) const;

  // Mirror sphere resting over a checkered ground plane; the stock scene for
  // near-field reflection experiments.
  static SceneSpec mirror_sphere_over_checker();
};

struct OracleHit {
  bool hit = false;
  bool shiny = false;  // primary hit is mirror or glossy
};

// Whitted-style reference: analytic intersections, one directional disk
// light, recursive mirror bounces, seeded vMF-jittered glossy bounces.
Vec3d trace_reference(const Vec3d& origin, const Vec3d& dir, const SceneSpec& scene,
                      int depth_budget, Rng& rng, OracleHit* primary = nullptr);

inline constexpr int kGlossyOracleSamples = 64;

// Renders an orbit of posed frames plus shiny-region masks and the
// transforms.json manifest; every 8th frame is tagged test.
Dataset generate_dataset(const SceneSpec& scene, int n_views, int width, int height,
                         uint64_t seed, const std::string& out_dir);

}  // namespace nerfcast
