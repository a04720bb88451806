#pragma once

#include <array>
#include <string>
#include <vector>

#include "nerfcast/geom.hpp"
#include "nerfcast/image.hpp"
#include "nerfcast/vec.hpp"

namespace nerfcast {

struct Intrinsics {
  double focal_px = 0, cx = 0, cy = 0;
  int width = 0, height = 0;
};

// Rigid camera-to-world transform, row-major 4x4. Camera looks along -z with
// +x right and +y up.
struct Pose {
  std::array<double, 16> m{1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1};

  Vec3d origin() const { return {m[3], m[7], m[11]}; }
  Vec3d rotate(const Vec3d& v) const {
    return {m[0] * v.x + m[1] * v.y + m[2] * v.z, m[4] * v.x + m[5] * v.y + m[6] * v.z,
            m[8] * v.x + m[9] * v.y + m[10] * v.z};
  }
  static Pose look_at(const Vec3d& eye, const Vec3d& target, const Vec3d& up = {0, 0, 1});
  bool is_rigid(double tol = 1e-6) const;
};

struct Frame {
  std::string file;
  std::string mask;  // empty when absent
  Pose pose;
  std::string split;  // "train" or "test"
};

struct Dataset {
  Intrinsics intrinsics;
  std::vector<Frame> frames;
  std::string dir;
  std::vector<Image> images;
  std::vector<Mask> masks;  // empty when the manifest carries no masks
  bool has_masks = false;

  std::vector<int> split_indices(const std::string& split) const;
};

// Pixel cone slope for a unit-focal pixel footprint (mip-NeRF convention).
inline double pixel_cone_radius(const Intrinsics& in) {
  return 1.0 / (2.0 * in.focal_px * std::sqrt(12.0));
}

// Cone through pixel center (px+0.5, py+0.5).
ConeRay ray_through_pixel(const Intrinsics& in, const Pose& pose, double px, double py);

// Orbit around `center` with seeded elevation jitter; shared by the dataset
// generator and `render --orbit`.
std::vector<Pose> orbit_poses(int n, uint64_t seed, double radius, double elevation_deg,
                              const Vec3d& center);

void save_manifest(const std::string& dir, const Dataset& ds);

// Reads transforms.json, validates poses, decodes every image to linear RGB.
Dataset load_dataset(const std::string& dir);

}  // namespace nerfcast
