#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "nerfcast/rng.hpp"
#include "nerfcast/vec.hpp"

namespace nerfcast {

// Camera or reflected ray with a pixel-cone slope: cross-section radius
// grows as radius * distance.
struct ConeRay {
  Vec3d origin;
  Vec3d dir;     // unit
  double radius = 1e-3;
};

// von Mises-Fisher lobe over reflected directions.
template <typename T>
struct VmfLobe {
  Vec3<T> mean_dir;  // unit
  T kappa = T(1);    // concentration, clamped positive
};

template <typename T>
struct TangentBasis {
  Vec3<T> t1, t2, axis;
};

inline constexpr double kKappaMin = 1e-3;
inline constexpr double kKappaMax = 1e5;

// Squashes all of R^3 into the radius-2 ball; identity inside the unit ball.
template <typename T>
Vec3<T> contract(const Vec3<T>& x) {
  T r = norm(x);
  if (r <= T(1)) return x;
  return x * ((T(2) - T(1) / r) / r);
}

// det of the contraction Jacobian: 1 inside the unit ball, then the radial
// derivative 1/r^2 times the squared tangential stretch ((2r-1)/r^2)^2.
template <typename T>
T contraction_jacobian_det(const Vec3<T>& x) {
  T r = norm(x);
  if (r <= T(1)) return T(1);
  T tangential = (T(2) * r - T(1)) / (r * r);
  return tangential * tangential / (r * r);
}

// Jacobian det restricted to the 2D directional domain.
template <typename T>
T directional_jacobian_det(const Vec3<T>& x) {
  T r = std::max(T(1), norm(x));
  T g = (T(2) * r - T(1)) / (r * r);
  return g * g;
}

// sqrt of the directional Jacobian det, plus its radial derivative; shared
// with the autodiff op.
template <typename T>
T directional_jacobian_sqrt(T r) {
  T m = std::max(T(1), r);
  return (T(2) * m - T(1)) / (m * m);
}
template <typename T>
T directional_jacobian_sqrt_dr(T r) {
  if (r <= T(1)) return T(0);
  return (T(2) - T(2) * r) / (r * r * r);
}

template <typename T>
Vec3<T> reflect(const Vec3<T>& d, const Vec3<T>& n) {
  return d - n * (T(2) * dot(n, d));
}

// kappa = 1 / (pixel cone slope + composited roughness), clamped so both the
// mirror and fully-rough limits stay finite.
template <typename T>
VmfLobe<T> reflection_lobe(T cone_radius, T roughness, const Vec3<T>& reflected_dir) {
  T kappa = T(1) / (cone_radius + roughness);
  kappa = clamp(kappa, T(kKappaMin), T(kKappaMax));
  return {reflected_dir, kappa};
}

// Shifted reflected-cone origin; the reflected cone with slope r+rho matches
// the incident cross-section r*|x-o| at the surface point.
template <typename T>
Vec3<T> reflected_origin(const Vec3<T>& origin, const Vec3<T>& surface_point,
                         const Vec3<T>& reflected_dir, T cone_radius, T roughness) {
  T dist = norm(origin - surface_point);
  if (dist < T(1e-9)) throw std::runtime_error("reflected_origin: camera origin on the surface point");
  return surface_point - reflected_dir * (dist * cone_radius / (cone_radius + roughness));
}

// Orthonormal basis around an axis; the up-vector switch keeps the cross
// product well away from zero for every direction.
template <typename T>
TangentBasis<T> tangent_basis(const Vec3<T>& axis) {
  Vec3<T> u = std::abs(axis.z) < T(0.9) ? Vec3<T>(0, 0, 1) : Vec3<T>(0, 1, 0);
  Vec3<T> t1 = normalize(cross(u, axis));
  Vec3<T> t2 = cross(axis, t1);
  return {t1, t2, axis};
}

// Mean resultant length of a vMF lobe, A(kappa) = coth(kappa) - 1/kappa,
// evaluated in branches that stay accurate at both extremes.
template <typename T>
T vmf_mean_resultant(T kappa) {
  if (kappa < T(1e-3)) return kappa / T(3) - kappa * kappa * kappa / T(45);
  if (kappa > T(20)) return T(1) - T(1) / kappa;
  return T(1) / std::tanh(kappa) - T(1) / kappa;
}

// d/dkappa of vmf_mean_resultant, matching its branch structure.
template <typename T>
T vmf_mean_resultant_dk(T kappa) {
  if (kappa < T(1e-3)) return T(1) / T(3) - kappa * kappa / T(15);
  if (kappa > T(20)) return T(1) / (kappa * kappa);
  T sh = std::sinh(kappa);
  return T(1) / (kappa * kappa) - T(1) / (sh * sh);
}

// Deterministic K-point directional sampling that preserves the lobe's mean
// direction and mean resultant length: the mean direction plus K-1 points on
// a circle at angle psi, rigidly rotated by `rotation`.
template <typename T>
std::vector<Vec3<T>> unscented_directions(const VmfLobe<T>& lobe, int k, T rotation) {
  if (k < 2) throw std::runtime_error("unscented_directions: need K >= 2");
  if (!std::isfinite(lobe.kappa) || lobe.kappa <= T(0))
    throw std::runtime_error("unscented_directions: non-finite or non-positive kappa");
  T a = vmf_mean_resultant(lobe.kappa);
  T cos_psi = clamp((T(k) * a - T(1)) / T(k - 1), T(-1), T(1));
  T sin_psi = std::sqrt(std::max(T(0), T(1) - cos_psi * cos_psi));
  TangentBasis<T> basis = tangent_basis(lobe.mean_dir);

  std::vector<Vec3<T>> dirs;
  dirs.reserve(k);
  dirs.push_back(lobe.mean_dir);
  for (int j = 0; j < k - 1; ++j) {
    T theta = rotation + T(2) * T(M_PI) * T(j) / T(k - 1);
    dirs.push_back(lobe.mean_dir * cos_psi +
                   (basis.t1 * std::cos(theta) + basis.t2 * std::sin(theta)) * sin_psi);
  }
  return dirs;
}

// Exact vMF draw via inverse-CDF on the cosine and uniform azimuth.
template <typename T>
Vec3<T> vmf_sample(const VmfLobe<T>& lobe, Rng& rng) {
  T u = T(rng.uniform());
  // w = 1 + log(u + (1-u) e^{-2k}) / k, written with expm1/log1p so the
  // near-uniform limit does not cancel.
  T a = std::expm1(T(-2) * lobe.kappa);
  T w = T(1) + std::log1p((T(1) - u) * a) / lobe.kappa;
  w = clamp(w, T(-1), T(1));
  T s = std::sqrt(std::max(T(0), T(1) - w * w));
  T phi = T(rng.uniform()) * T(2) * T(M_PI);
  TangentBasis<T> basis = tangent_basis(lobe.mean_dir);
  return lobe.mean_dir * w + (basis.t1 * std::cos(phi) + basis.t2 * std::sin(phi)) * s;
}

// Reflected-cone feature scale (directional Jacobian flavour); approaches
// 2*gamma*(r+rho) far from the origin instead of vanishing.
template <typename T>
T downweight_scale(const Vec3<T>& x, const Vec3<T>& origin, T cone_radius, T roughness, T gamma) {
  return gamma * (cone_radius + roughness) * norm(x - origin) *
         directional_jacobian_sqrt(norm(x));
}

// Camera-ray feature scale (full 3D Jacobian flavour); decays to zero far
// from the origin.
template <typename T>
T primary_scale(const Vec3<T>& x, const Vec3<T>& origin, T cone_radius, T gamma) {
  return gamma * cone_radius * norm(x - origin) * std::cbrt(contraction_jacobian_det(x));
}

// Per-level feature multiplier erf(1/(sqrt(8) nu sigma)); 1 at sigma = 0.
template <typename T>
T downweight_factor(T sigma, T resolution) {
  T denom = std::sqrt(T(8)) * resolution * sigma;
  if (denom <= T(1e-12)) return T(1);
  return std::erf(T(1) / denom);
}

template <typename T>
std::vector<T> downweight_factors(T sigma, const std::vector<T>& resolutions) {
  std::vector<T> out(resolutions.size());
  for (size_t i = 0; i < resolutions.size(); ++i) out[i] = downweight_factor(sigma, resolutions[i]);
  return out;
}

}  // namespace nerfcast
