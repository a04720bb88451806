#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "nerfcast/autodiff.hpp"
#include "nerfcast/rng.hpp"

namespace nerfcast {

struct GradientReport {
  double max_rel_err = 0.0;
  long evaluations = 0;
  std::string worst_param;
};

// One differentiable leaf of a built tape: the bound storage, the gradient
// accumulator it was registered with, and a label for reporting.
template <typename T>
struct LeafBinding {
  std::string name;
  T* data = nullptr;
  T* grad = nullptr;
  size_t count = 0;
};

// Central-difference check of an already-recorded tape. backward() fills the
// analytic gradients once; each parameter entry is then perturbed and the
// tape replayed, so the comparison covers exactly the function the tape
// differentiates (stop-gradient branches stay frozen on both sides).
// max_per_leaf < 0 checks every entry, otherwise a seeded random subset.
template <typename T>
GradientReport check_gradients(Tape<T>& tape, int root, std::vector<LeafBinding<T>> leaves,
                               T step, long max_per_leaf = -1, uint64_t subsample_seed = 0,
                               double eps_abs = 1e-6) {
  GradientReport report;
  for (auto& leaf : leaves)
    for (size_t i = 0; i < leaf.count; ++i) leaf.grad[i] = T(0);
  tape.forward();
  tape.backward(root);

  std::vector<std::vector<T>> analytic(leaves.size());
  for (size_t l = 0; l < leaves.size(); ++l)
    analytic[l].assign(leaves[l].grad, leaves[l].grad + leaves[l].count);

  Rng rng(seed_combine(subsample_seed, 0x9c6));
  for (size_t l = 0; l < leaves.size(); ++l) {
    auto& leaf = leaves[l];
    std::vector<size_t> idx;
    if (max_per_leaf < 0 || size_t(max_per_leaf) >= leaf.count) {
      idx.resize(leaf.count);
      for (size_t i = 0; i < leaf.count; ++i) idx[i] = i;
    } else {
      for (long i = 0; i < max_per_leaf; ++i) idx.push_back(rng.uniform_u32(uint32_t(leaf.count)));
    }
    for (size_t i : idx) {
      T saved = leaf.data[i];
      leaf.data[i] = saved + step;
      tape.forward();
      double fp = double(tape.scalar_value(root));
      leaf.data[i] = saved - step;
      tape.forward();
      double fm = double(tape.scalar_value(root));
      leaf.data[i] = saved;
      report.evaluations += 2;
      double fd = (fp - fm) / (2.0 * double(step));
      double an = double(analytic[l][i]);
      if (!std::isfinite(fd) || !std::isfinite(an))
        throw std::runtime_error("check_gradients: non-finite value for parameter " + leaf.name +
                                 "[" + std::to_string(i) + "]");
      double rel = std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), eps_abs});
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_param = leaf.name + "[" + std::to_string(i) + "]";
      }
    }
  }
  tape.forward();  // leave values consistent with the unperturbed bindings
  return report;
}

}  // namespace nerfcast
