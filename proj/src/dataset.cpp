#include "nerfcast/dataset.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <json.hpp>

#include "nerfcast/rng.hpp"

namespace nerfcast {

namespace fs = std::filesystem;
using nlohmann::json;

Pose Pose::look_at(const Vec3d& eye, const Vec3d& target, const Vec3d& up) {
  Vec3d back = normalize(eye - target);  // camera +z
  Vec3d right = cross(up, back);
  if (norm(right) < 1e-9) right = cross(Vec3d(0, 1, 0), back);
  right = normalize(right);
  Vec3d cam_up = cross(back, right);
  Pose p;
  p.m = {right.x, cam_up.x, back.x, eye.x,  //
         right.y, cam_up.y, back.y, eye.y,  //
         right.z, cam_up.z, back.z, eye.z,  //
         0,       0,        0,      1};
  return p;
}

bool Pose::is_rigid(double tol) const {
  Vec3d c0{m[0], m[4], m[8]}, c1{m[1], m[5], m[9]}, c2{m[2], m[6], m[10]};
  const Vec3d cols[3] = {c0, c1, c2};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      if (std::abs(dot(cols[i], cols[j]) - (i == j ? 1.0 : 0.0)) > tol) return false;
  if (std::abs(dot(cross(c0, c1), c2) - 1.0) > tol) return false;  // det +1
  if (std::abs(m[12]) > tol || std::abs(m[13]) > tol || std::abs(m[14]) > tol ||
      std::abs(m[15] - 1.0) > tol)
    return false;
  return true;
}

ConeRay ray_through_pixel(const Intrinsics& in, const Pose& pose, double px, double py) {
  Vec3d dir_cam{(px + 0.5 - in.cx) / in.focal_px, -(py + 0.5 - in.cy) / in.focal_px, -1.0};
  ConeRay ray;
  ray.origin = pose.origin();
  ray.dir = normalize(pose.rotate(dir_cam));
  ray.radius = pixel_cone_radius(in);
  return ray;
}

std::vector<Pose> orbit_poses(int n, uint64_t seed, double radius, double elevation_deg,
                              const Vec3d& center) {
  Rng rng(seed_combine(seed, 0x0b17));
  std::vector<Pose> poses;
  poses.reserve(n);
  for (int i = 0; i < n; ++i) {
    double azimuth = 2.0 * M_PI * double(i) / double(n);
    double elev = (elevation_deg + rng.uniform(-8.0, 8.0)) * M_PI / 180.0;
    Vec3d eye = center + Vec3d(radius * std::cos(azimuth) * std::cos(elev),
                               radius * std::sin(azimuth) * std::cos(elev),
                               radius * std::sin(elev));
    poses.push_back(Pose::look_at(eye, center));
  }
  return poses;
}

std::vector<int> Dataset::split_indices(const std::string& split) const {
  std::vector<int> idx;
  for (int i = 0; i < int(frames.size()); ++i)
    if (frames[i].split == split) idx.push_back(i);
  return idx;
}

void save_manifest(const std::string& dir, const Dataset& ds) {
  json j;
  j["focal_px"] = ds.intrinsics.focal_px;
  j["cx"] = ds.intrinsics.cx;
  j["cy"] = ds.intrinsics.cy;
  j["width"] = ds.intrinsics.width;
  j["height"] = ds.intrinsics.height;
  j["frames"] = json::array();
  for (const auto& f : ds.frames) {
    json jf;
    jf["file"] = f.file;
    if (!f.mask.empty()) jf["mask"] = f.mask;
    jf["transform"] = f.pose.m;
    jf["split"] = f.split;
    j["frames"].push_back(jf);
  }
  std::ofstream out(fs::path(dir) / "transforms.json");
  if (!out) throw std::runtime_error("cannot write manifest in " + dir);
  out << j.dump(1) << "\n";
}

Dataset load_dataset(const std::string& dir) {
  fs::path manifest = fs::path(dir) / "transforms.json";
  std::ifstream in(manifest);
  if (!in) throw std::runtime_error("missing manifest: " + manifest.string());
  json j = json::parse(in);

  Dataset ds;
  ds.dir = dir;
  ds.intrinsics.focal_px = j.at("focal_px").get<double>();
  ds.intrinsics.cx = j.at("cx").get<double>();
  ds.intrinsics.cy = j.at("cy").get<double>();
  ds.intrinsics.width = j.at("width").get<int>();
  ds.intrinsics.height = j.at("height").get<int>();

  ds.has_masks = true;
  for (const auto& jf : j.at("frames")) {
    Frame f;
    f.file = jf.at("file").get<std::string>();
    if (jf.contains("mask")) f.mask = jf.at("mask").get<std::string>();
    auto t = jf.at("transform").get<std::vector<double>>();
    if (t.size() != 16) throw std::runtime_error("frame transform must hold 16 floats: " + f.file);
    std::copy(t.begin(), t.end(), f.pose.m.begin());
    if (!f.pose.is_rigid())
      throw std::runtime_error("non-rigid camera pose for frame " + f.file);
    f.split = jf.value("split", "train");
    if (f.mask.empty()) ds.has_masks = false;
    ds.frames.push_back(std::move(f));
  }
  if (ds.frames.empty()) throw std::runtime_error("dataset has no frames: " + dir);

  for (const auto& f : ds.frames) {
    fs::path p = fs::path(dir) / f.file;
    if (!fs::exists(p)) throw std::runtime_error("missing frame file: " + p.string());
    Image img = load_png(p.string());
    if (img.width != ds.intrinsics.width || img.height != ds.intrinsics.height)
      throw std::runtime_error("frame size mismatch for " + f.file + ": got " +
                               std::to_string(img.width) + "x" + std::to_string(img.height));
    ds.images.push_back(std::move(img));
    if (ds.has_masks) {
      fs::path mp = fs::path(dir) / f.mask;
      if (!fs::exists(mp)) throw std::runtime_error("missing mask file: " + mp.string());
      Mask m = load_mask_png(mp.string());
      if (m.width != ds.intrinsics.width || m.height != ds.intrinsics.height)
        throw std::runtime_error("mask size mismatch for " + f.mask);
      ds.masks.push_back(std::move(m));
    }
  }
  return ds;
}

}  // namespace nerfcast
