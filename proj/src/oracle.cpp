#include "nerfcast/oracle.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <json.hpp>

#include "nerfcast/geom.hpp"
#include "nerfcast/parallel.hpp"

namespace nerfcast {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kRayEps = 1e-4;

struct Hit {
  double t = -1;
  Vec3d point, normal;
  const Material* material = nullptr;
  Vec3d albedo;  // resolved color (checker already evaluated)
};

bool intersect_sphere(const Vec3d& o, const Vec3d& d, const SphereSpec& s, Hit& hit) {
  Vec3d oc = o - s.center;
  double b = dot(oc, d);
  double c = dot(oc, oc) - s.radius * s.radius;
  double disc = b * b - c;
  if (disc < 0) return false;
  double sq = std::sqrt(disc);
  double t = -b - sq;
  if (t < kRayEps) t = -b + sq;
  if (t < kRayEps) return false;
  if (hit.t > 0 && t >= hit.t) return false;
  hit.t = t;
  hit.point = o + d * t;
  hit.normal = normalize(hit.point - s.center);
  hit.material = &s.material;
  hit.albedo = s.material.color;
  return true;
}

bool intersect_plane(const Vec3d& o, const Vec3d& d, const PlaneSpec& p, Hit& hit,
                     Material& plane_material) {
  if (std::abs(d.z) < 1e-12) return false;
  double t = (p.height - o.z) / d.z;
  if (t < kRayEps) return false;
  if (hit.t > 0 && t >= hit.t) return false;
  hit.t = t;
  hit.point = o + d * t;
  hit.normal = Vec3d(0, 0, d.z > 0 ? -1.0 : 1.0);
  int parity = (int(std::floor(hit.point.x / p.checker_scale)) +
                int(std::floor(hit.point.y / p.checker_scale))) &
               1;
  hit.albedo = parity ? p.albedo2 : p.albedo1;
  plane_material.kind = MaterialKind::kLambertian;
  plane_material.color = hit.albedo;
  hit.material = &plane_material;
  return true;
}

bool nearest_hit(const Vec3d& o, const Vec3d& d, const SceneSpec& scene, Hit& hit,
                 Material& plane_material) {
  hit.t = -1;
  for (const auto& s : scene.spheres) intersect_sphere(o, d, s, hit);
  if (scene.plane) intersect_plane(o, d, *scene.plane, hit, plane_material);
  return hit.t > 0;
}

bool occluded(const Vec3d& o, const Vec3d& d, const SceneSpec& scene) {
  Hit h;
  Material m;
  return nearest_hit(o, d, scene, h, m);
}

Vec3d sky_radiance(const Vec3d& d, const SceneSpec& scene) {
  double t = clamp(0.5 * (d.z + 1.0), 0.0, 1.0);
  Vec3d c = scene.sky.bottom * (1.0 - t) + scene.sky.top * t;
  Vec3d l = normalize(scene.light.direction);
  if (dot(d, l) > std::cos(scene.light.angular_radius)) c += scene.light.color;
  return c;
}

Vec3d ambient_term(const SceneSpec& scene) {
  return (scene.sky.top + scene.sky.bottom) * 0.25;
}

}  // namespace

Vec3d trace_reference(const Vec3d& origin, const Vec3d& dir, const SceneSpec& scene,
                      int depth_budget, Rng& rng, OracleHit* primary) {
  Hit hit;
  Material plane_material;
  if (!nearest_hit(origin, dir, scene, hit, plane_material)) {
    if (primary) *primary = {false, false};
    return sky_radiance(dir, scene);
  }
  if (primary) {
    primary->hit = true;
    primary->shiny = hit.material->kind != MaterialKind::kLambertian;
  }

  switch (hit.material->kind) {
    case MaterialKind::kLambertian: {
      Vec3d l = normalize(scene.light.direction);
      double ndotl = std::max(0.0, dot(hit.normal, l));
      Vec3d direct(0, 0, 0);
      if (ndotl > 0 && !occluded(hit.point + hit.normal * kRayEps, l, scene))
        direct = scene.light.color * ndotl;
      return hit.albedo * (direct + ambient_term(scene));
    }
    case MaterialKind::kMirror: {
      if (depth_budget <= 1) return hit.albedo * sky_radiance(reflect(dir, hit.normal), scene);
      Vec3d r = reflect(dir, hit.normal);
      return hit.albedo * trace_reference(hit.point + r * kRayEps, r, scene, depth_budget - 1, rng);
    }
    case MaterialKind::kGlossy: {
      Vec3d r = reflect(dir, hit.normal);
      double kappa = clamp(1.0 / std::max(hit.material->vmf_width, 1e-12), kKappaMin, kKappaMax);
      VmfLobe<double> lobe{r, kappa};
      Vec3d acc(0, 0, 0);
      for (int s = 0; s < kGlossyOracleSamples; ++s) {
        Vec3d w = vmf_sample(lobe, rng);
        if (depth_budget <= 1) {
          acc += sky_radiance(w, scene);
        } else {
          acc += trace_reference(hit.point + w * kRayEps, w, scene, depth_budget - 1, rng);
        }
      }
      return hit.albedo * (acc / double(kGlossyOracleSamples));
    }
  }
  return {0, 0, 0};
}

void SceneSpec::validate() const {
  auto check_color = [](const Vec3d& c, const char* what) {
    for (int i = 0; i < 3; ++i)
      if (c[i] < 0.0 || c[i] > 1.0) throw std::runtime_error(std::string(what) + " outside [0,1]");
  };
  for (size_t i = 0; i < spheres.size(); ++i) {
    const auto& s = spheres[i];
    if (s.radius <= 0) throw std::runtime_error("sphere radius must be positive");
    if (s.material.vmf_width < 0) throw std::runtime_error("glossy width must be >= 0");
    check_color(s.material.color, "sphere color");
    for (size_t j = i + 1; j < spheres.size(); ++j)
      if (norm(s.center - spheres[j].center) < s.radius + spheres[j].radius)
        throw std::runtime_error("spheres overlap");
    if (plane && s.center.z - s.radius < plane->height - 1e-9)
      throw std::runtime_error("sphere overlaps the ground plane");
  }
  if (plane) {
    check_color(plane->albedo1, "plane albedo");
    check_color(plane->albedo2, "plane albedo");
    if (plane->checker_scale <= 0) throw std::runtime_error("checker scale must be positive");
  }
  check_color(light.color, "light color");
}

namespace {

json vec_to_json(const Vec3d& v) { return json::array({v.x, v.y, v.z}); }
Vec3d vec_from_json(const json& j) { return {j.at(0), j.at(1), j.at(2)}; }

json material_to_json(const Material& m) {
  json j;
  switch (m.kind) {
    case MaterialKind::kLambertian: j["type"] = "lambertian"; break;
    case MaterialKind::kMirror: j["type"] = "mirror"; break;
    case MaterialKind::kGlossy: j["type"] = "glossy"; break;
  }
  j["color"] = vec_to_json(m.color);
  if (m.kind == MaterialKind::kGlossy) j["vmf_width"] = m.vmf_width;
  return j;
}

Material material_from_json(const json& j) {
  Material m;
  std::string type = j.at("type").get<std::string>();
  if (type == "lambertian") m.kind = MaterialKind::kLambertian;
  else if (type == "mirror") m.kind = MaterialKind::kMirror;
  else if (type == "glossy") m.kind = MaterialKind::kGlossy;
  else throw std::runtime_error("unknown material type: " + type);
  m.color = vec_from_json(j.at("color"));
  m.vmf_width = j.value("vmf_width", 0.0);
  return m;
}

}  // namespace

SceneSpec SceneSpec::from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open scene spec: " + path);
  json j = json::parse(in);
  SceneSpec s;
  for (const auto& js : j.value("spheres", json::array())) {
    SphereSpec sp;
    sp.center = vec_from_json(js.at("center"));
    sp.radius = js.at("radius").get<double>();
    sp.material = material_from_json(js.at("material"));
    s.spheres.push_back(sp);
  }
  if (j.contains("plane")) {
    PlaneSpec p;
    const auto& jp = j["plane"];
    p.height = jp.value("height", 0.0);
    if (jp.contains("albedo1")) p.albedo1 = vec_from_json(jp["albedo1"]);
    if (jp.contains("albedo2")) p.albedo2 = vec_from_json(jp["albedo2"]);
    p.checker_scale = jp.value("scale", 0.5);
    s.plane = p;
  }
  if (j.contains("sky")) {
    if (j["sky"].contains("top")) s.sky.top = vec_from_json(j["sky"]["top"]);
    if (j["sky"].contains("bottom")) s.sky.bottom = vec_from_json(j["sky"]["bottom"]);
  }
  if (j.contains("light")) {
    const auto& jl = j["light"];
    if (jl.contains("direction")) s.light.direction = vec_from_json(jl["direction"]);
    if (jl.contains("color")) s.light.color = vec_from_json(jl["color"]);
    s.light.angular_radius = jl.value("angular_radius", s.light.angular_radius);
  }
  if (j.contains("camera")) {
    const auto& jc = j["camera"];
    s.camera.orbit_radius = jc.value("orbit_radius", s.camera.orbit_radius);
    s.camera.elevation_deg = jc.value("elevation_deg", s.camera.elevation_deg);
    s.camera.fov_deg = jc.value("fov_deg", s.camera.fov_deg);
    if (jc.contains("look_at")) s.camera.look_at = vec_from_json(jc["look_at"]);
  }
  s.validate();
  return s;
}

void SceneSpec::to_json_file(const std::string& path) const {
  json j;
  j["spheres"] = json::array();
  for (const auto& s : spheres) {
    json js;
    js["center"] = vec_to_json(s.center);
    js["radius"] = s.radius;
    js["material"] = material_to_json(s.material);
    j["spheres"].push_back(js);
  }
  if (plane) {
    j["plane"] = {{"height", plane->height},
                  {"albedo1", vec_to_json(plane->albedo1)},
                  {"albedo2", vec_to_json(plane->albedo2)},
                  {"scale", plane->checker_scale}};
  }
  j["sky"] = {{"top", vec_to_json(sky.top)}, {"bottom", vec_to_json(sky.bottom)}};
  j["light"] = {{"direction", vec_to_json(light.direction)},
                {"color", vec_to_json(light.color)},
                {"angular_radius", light.angular_radius}};
  j["camera"] = {{"orbit_radius", camera.orbit_radius},
                 {"elevation_deg", camera.elevation_deg},
                 {"fov_deg", camera.fov_deg},
                 {"look_at", vec_to_json(camera.look_at)}};
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write scene spec: " + path);
  out << j.dump(1) << "\n";
}

SceneSpec SceneSpec::mirror_sphere_over_checker() {
  SceneSpec s;
  SphereSpec sphere;
  sphere.center = {0, 0, 0.5};
  sphere.radius = 0.5;
  sphere.material.kind = MaterialKind::kMirror;
  sphere.material.color = {0.92, 0.92, 0.92};
  s.spheres.push_back(sphere);
  s.plane = PlaneSpec{};
  s.plane->checker_scale = 0.35;
  s.camera.look_at = {0, 0, 0.45};
  return s;
}

Dataset generate_dataset(const SceneSpec& scene, int n_views, int width, int height,
                         uint64_t seed, const std::string& out_dir) {
  if (n_views < 9) throw std::runtime_error("generate_dataset: need at least 9 views");
  scene.validate();
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (!fs::is_directory(out_dir)) throw std::runtime_error("cannot create directory: " + out_dir);

  Dataset ds;
  ds.dir = out_dir;
  ds.intrinsics.width = width;
  ds.intrinsics.height = height;
  ds.intrinsics.cx = width / 2.0;
  ds.intrinsics.cy = height / 2.0;
  ds.intrinsics.focal_px = width / (2.0 * std::tan(scene.camera.fov_deg * M_PI / 360.0));

  auto poses = orbit_poses(n_views, seed, scene.camera.orbit_radius, scene.camera.elevation_deg,
                           scene.camera.look_at);
  ds.has_masks = true;
  for (int i = 0; i < n_views; ++i) {
    char name[64];
    std::snprintf(name, sizeof(name), "frame_%04d.png", i);
    char mask_name[64];
    std::snprintf(mask_name, sizeof(mask_name), "mask_%04d.png", i);
    ds.frames.push_back(Frame{name, mask_name, poses[i], i % 8 == 0 ? "test" : "train"});
  }

  for (int i = 0; i < n_views; ++i) {
    Image img(width, height);
    Mask mask(width, height);
    parallel_for(height, [&](int y) {
      for (int x = 0; x < width; ++x) {
        ConeRay ray = ray_through_pixel(ds.intrinsics, poses[i], x, y);
        Rng rng(seed_combine(seed, uint64_t(i), uint64_t(y) * width + x));
        OracleHit primary;
        Vec3d c = trace_reference(ray.origin, ray.dir, scene, 4, rng, &primary);
        float* px = img.px(x, y);
        px[0] = float(clamp(c.x, 0.0, 1.0));
        px[1] = float(clamp(c.y, 0.0, 1.0));
        px[2] = float(clamp(c.z, 0.0, 1.0));
        mask.at(x, y) = primary.shiny ? 255 : 0;
      }
    });
    save_png((fs::path(out_dir) / ds.frames[i].file).string(), img);
    save_mask_png((fs::path(out_dir) / ds.frames[i].mask).string(), mask);
    ds.images.push_back(std::move(img));
    ds.masks.push_back(std::move(mask));
  }
  save_manifest(out_dir, ds);
  return ds;
}

}  // namespace nerfcast
