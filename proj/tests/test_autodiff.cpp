#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>

#include "nerfcast/autodiff.hpp"
#include "nerfcast/gradcheck.hpp"
#include "nerfcast/rng.hpp"

using namespace nerfcast;

namespace {

struct Param {
  Array<double> value;
  Array<double> grad;
  int id = -1;
};

Param make_param(Tape<double>& t, Array<double> v) {
  Param p;
  p.value = std::move(v);
  p.grad = Array<double>::zeros(p.value.rows, p.value.cols);
  p.id = t.leaf(p.value.data.data(), p.value.rows, p.value.cols, p.grad.data.data());
  return p;
}

Array<double> random_array(int r, int c, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Array<double> a(r, c);
  for (auto& v : a.data) v = rng.uniform(lo, hi);
  return a;
}

LeafBinding<double> bind(const char* name, Param& p) {
  return {name, p.value.data.data(), p.grad.data.data(), p.value.size()};
}

// Reduces any node to a scalar against fixed random weights so every output
// entry gets a nontrivial cotangent.
int weighted_sum(Tape<double>& t, int node, Rng& rng) {
  Array<double> w = random_array(t.rows(node), t.cols(node), rng, 0.5, 1.5);
  return t.sum(t.mul(node, t.constant(w)));
}

void check_unary(const char* name, double lo, double hi,
                 int (Tape<double>::*op)(int), double tol = 1e-6) {
  Rng rng(seed_combine(0xabcdef, std::strlen(name), uint64_t(lo * 1000 + hi)));
  Tape<double> t;
  Param x = make_param(t, random_array(4, 5, rng, lo, hi));
  int root = weighted_sum(t, (t.*op)(x.id), rng);
  auto rep = check_gradients(t, root, {bind("x", x)}, 1e-6);
  INFO(name << " worst " << rep.worst_param);
  CHECK(rep.max_rel_err < tol);
}

}  // namespace

TEST_CASE("forward examples") {
  Tape<double> t;
  CHECK(t.scalar_value(t.add(t.scalar(2), t.scalar(3))) == 5.0);

  Array<double> eye(3, 3);
  for (int i = 0; i < 3; ++i) eye(i, i) = 1.0;
  Array<double> v(3, 1);
  v(0, 0) = 1.5;
  v(1, 0) = -2.0;
  v(2, 0) = 0.25;
  int mv = t.matmul(t.constant(eye), t.constant(v));
  for (int i = 0; i < 3; ++i) CHECK(t.value(mv)[i] == v(i, 0));

  CHECK(t.scalar_value(t.sigmoid(t.scalar(0))) == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("closed-form derivatives") {
  // d/dx x^2 at x=3
  {
    Tape<double> t;
    Param x = make_param(t, Array<double>::scalar(3.0));
    t.backward(t.mul(x.id, x.id));
    CHECK(x.grad.data[0] == doctest::Approx(6.0).epsilon(1e-14));
  }
  // d/dx softplus(x) at 0
  {
    Tape<double> t;
    Param x = make_param(t, Array<double>::scalar(0.0));
    t.backward(t.softplus(x.id));
    CHECK(x.grad.data[0] == doctest::Approx(0.5).epsilon(1e-14));
  }
  // d/dx erf(x) at 1 = 2 e^{-1} / sqrt(pi), against central differences
  {
    Tape<double> t;
    Param x = make_param(t, Array<double>::scalar(1.0));
    int root = t.erf_(x.id);
    auto rep = check_gradients(t, root, {bind("x", x)}, 1e-6);
    CHECK(rep.max_rel_err < 1e-8);
    x.grad.fill(0.0);
    t.backward(root);
    CHECK(x.grad.data[0] == doctest::Approx(2.0 * std::exp(-1.0) / std::sqrt(M_PI)).epsilon(1e-12));
    CHECK(x.grad.data[0] == doctest::Approx(0.41511).epsilon(1e-4));
  }
}

TEST_CASE("stop_gradient semantics") {
  // d/dx [sg(x) * x] at x=2: only the live factor contributes
  {
    Tape<double> t;
    Param x = make_param(t, Array<double>::scalar(2.0));
    t.backward(t.mul(t.stop_gradient(x.id), x.id));
    CHECK(x.grad.data[0] == 2.0);
  }
  // d/dx sg(x^2) is exactly zero
  {
    Tape<double> t;
    Param x = make_param(t, Array<double>::scalar(2.0));
    int root = t.stop_gradient(t.mul(x.id, x.id));
    CHECK(!t.requires_grad(root));
    t.backward(root);
    CHECK(x.grad.data[0] == 0.0);
  }
  // value is unchanged
  {
    Tape<double> t;
    Param x = make_param(t, Array<double>::scalar(1.75));
    CHECK(t.scalar_value(t.stop_gradient(x.id)) == 1.75);
  }
}

TEST_CASE("elementwise and reduction primitives match finite differences") {
  check_unary("exp", -1.0, 1.0, &Tape<double>::exp_);
  check_unary("log", 0.5, 3.0, &Tape<double>::log_);
  check_unary("sqrt", 0.5, 3.0, &Tape<double>::sqrt_);
  check_unary("softplus", -2.0, 2.0, &Tape<double>::softplus);
  check_unary("sigmoid", -2.0, 2.0, &Tape<double>::sigmoid);
  check_unary("erf", -1.5, 1.5, &Tape<double>::erf_);
  check_unary("relu", 0.2, 2.0, &Tape<double>::relu);
  check_unary("normalize_rows", 0.4, 2.0, &Tape<double>::normalize_rows);
  check_unary("row_norm", 0.4, 2.0, &Tape<double>::row_norm);
  check_unary("sum_rows", -1.0, 1.0, &Tape<double>::sum_rows);
  check_unary("sum_cols", -1.0, 1.0, &Tape<double>::sum_cols);
  check_unary("vmf_mean_resultant", 2.0, 15.0, &Tape<double>::vmf_mean_resultant_);
}

TEST_CASE("binary primitives match finite differences") {
  Rng rng(77);
  auto binary_case = [&](const char* name, auto make_root) {
    Tape<double> t;
    Param a = make_param(t, random_array(4, 3, rng, 0.5, 2.0));
    Param b = make_param(t, random_array(4, 3, rng, 0.5, 2.0));
    int root = weighted_sum(t, make_root(t, a.id, b.id), rng);
    auto rep = check_gradients(t, root, {bind("a", a), bind("b", b)}, 1e-6);
    INFO(name << " worst " << rep.worst_param);
    CHECK(rep.max_rel_err < 1e-6);
  };
  binary_case("add", [](Tape<double>& t, int a, int b) { return t.add(a, b); });
  binary_case("sub", [](Tape<double>& t, int a, int b) { return t.sub(a, b); });
  binary_case("mul", [](Tape<double>& t, int a, int b) { return t.mul(a, b); });
  binary_case("div", [](Tape<double>& t, int a, int b) { return t.div(a, b); });
  binary_case("row_dot", [](Tape<double>& t, int a, int b) { return t.row_dot(a, b); });
  binary_case("cross_rows", [](Tape<double>& t, int a, int b) { return t.cross_rows(a, b); });
  binary_case("concat_cols", [](Tape<double>& t, int a, int b) { return t.concat_cols(a, b); });
}

TEST_CASE("broadcasting add/mul match finite differences") {
  Rng rng(78);
  for (auto shape : {std::pair{1, 3}, std::pair{4, 1}, std::pair{1, 1}}) {
    Tape<double> t;
    Param a = make_param(t, random_array(4, 3, rng));
    Param b = make_param(t, random_array(shape.first, shape.second, rng, 0.5, 1.5));
    int root = weighted_sum(t, t.add(t.mul(a.id, b.id), b.id), rng);
    auto rep = check_gradients(t, root, {bind("a", a), bind("b", b)}, 1e-6);
    CHECK(rep.max_rel_err < 1e-6);
  }
}

TEST_CASE("matmul matches finite differences") {
  Rng rng(79);
  Tape<double> t;
  Param a = make_param(t, random_array(3, 4, rng));
  Param b = make_param(t, random_array(4, 2, rng));
  int root = weighted_sum(t, t.matmul(a.id, b.id), rng);
  auto rep = check_gradients(t, root, {bind("a", a), bind("b", b)}, 1e-6);
  CHECK(rep.max_rel_err < 1e-8);
}

TEST_CASE("structural ops match finite differences") {
  Rng rng(80);
  {
    Tape<double> t;
    Param a = make_param(t, random_array(6, 1, rng));
    int root = weighted_sum(t, t.cumsum_exclusive(a.id), rng);
    CHECK(check_gradients(t, root, {bind("a", a)}, 1e-6).max_rel_err < 1e-8);
  }
  {
    Tape<double> t;
    Param a = make_param(t, random_array(3, 6, rng));
    int root = weighted_sum(t, t.slice_cols(a.id, 2, 3), rng);
    CHECK(check_gradients(t, root, {bind("a", a)}, 1e-6).max_rel_err < 1e-8);
  }
  {
    Tape<double> t;
    Param a = make_param(t, random_array(6, 3, rng));
    int root = weighted_sum(t, t.slice_rows(a.id, 1, 4), rng);
    CHECK(check_gradients(t, root, {bind("a", a)}, 1e-6).max_rel_err < 1e-8);
  }
  {
    Tape<double> t;
    Param a = make_param(t, random_array(3, 5, rng));
    int root = weighted_sum(t, t.transpose(a.id), rng);
    CHECK(check_gradients(t, root, {bind("a", a)}, 1e-6).max_rel_err < 1e-8);
  }
  {
    Tape<double> t;
    Param a = make_param(t, random_array(1, 4, rng));
    int root = weighted_sum(t, t.broadcast_rows(a.id, 5), rng);
    CHECK(check_gradients(t, root, {bind("a", a)}, 1e-6).max_rel_err < 1e-8);
  }
  {
    Tape<double> t;
    Param a = make_param(t, random_array(8, 1, rng, 0.1, 1.0));
    std::vector<std::pair<int, int>> ranges = {{0, 3}, {2, 7}, {5, 8}};
    int root = weighted_sum(t, t.interval_sum(a.id, ranges), rng);
    CHECK(check_gradients(t, root, {bind("a", a)}, 1e-6).max_rel_err < 1e-8);
  }
  {
    Tape<double> t;
    Param a = make_param(t, random_array(4, 5, rng, -0.8, 0.8));
    int root = weighted_sum(t, t.clamp_(a.id, -0.9, 0.9), rng);
    CHECK(check_gradients(t, root, {bind("a", a)}, 1e-6).max_rel_err < 1e-8);
  }
}

TEST_CASE("geometry ops match finite differences") {
  Rng rng(81);
  // points both inside and outside the unit ball, away from the r=1 seam
  auto points = [&](double lo, double hi) {
    Array<double> p(6, 3);
    for (int r = 0; r < 6; ++r) {
      Vec3d d = normalize(Vec3d(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)));
      double rad = rng.uniform(lo, hi);
      for (int c = 0; c < 3; ++c) p(r, c) = d[c] * rad;
    }
    return p;
  };
  {
    Tape<double> t;
    Param x = make_param(t, points(1.3, 5.0));
    int root = weighted_sum(t, t.contract_rows(x.id), rng);
    CHECK(check_gradients(t, root, {bind("x", x)}, 1e-6).max_rel_err < 1e-6);
  }
  {
    Tape<double> t;
    Param x = make_param(t, points(0.2, 0.8));
    int root = weighted_sum(t, t.contract_rows(x.id), rng);
    CHECK(check_gradients(t, root, {bind("x", x)}, 1e-6).max_rel_err < 1e-8);
  }
  {
    Tape<double> t;
    Param x = make_param(t, points(1.5, 20.0));
    int root = weighted_sum(t, t.dirjac_sqrt(x.id), rng);
    CHECK(check_gradients(t, root, {bind("x", x)}, 1e-6).max_rel_err < 1e-6);
  }
  {
    Tape<double> t;
    Param sigma = make_param(t, random_array(5, 1, rng, 0.05, 2.0));
    int root = weighted_sum(t, t.erf_recip(sigma.id, 0.21), rng);
    CHECK(check_gradients(t, root, {bind("sigma", sigma)}, 1e-6).max_rel_err < 1e-6);
  }
}

TEST_CASE("trilinear gather matches finite differences") {
  Rng rng(82);
  const int res = 5;
  const int entries = res * res * res;
  Tape<double> t;
  Param table = make_param(t, random_array(entries, 2, rng));
  // positions with local cell coordinates away from corner seams
  Array<double> pos(6, 3);
  for (int r = 0; r < 6; ++r)
    for (int c = 0; c < 3; ++c) {
      double s = rng.uniform_u32(res - 1) + rng.uniform(0.1, 0.9);
      pos(r, c) = (s / (res - 1)) * 4.0 - 2.0;
    }
  Param p = make_param(t, std::move(pos));
  int root = weighted_sum(t, t.gather(table.id, p.id, res, entries, /*dense=*/true), rng);
  auto rep = check_gradients(t, root, {bind("table", table), bind("pos", p)}, 1e-6);
  CHECK(rep.max_rel_err < 1e-6);

  // hashed level
  Tape<double> t2;
  Param table2 = make_param(t2, random_array(64, 2, rng));
  Array<double> pos2(4, 3);
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 3; ++c) {
      double s = rng.uniform_u32(31) + rng.uniform(0.1, 0.9);
      pos2(r, c) = (s / 31.0) * 4.0 - 2.0;
    }
  Param p2 = make_param(t2, std::move(pos2));
  int root2 = weighted_sum(t2, t2.gather(table2.id, p2.id, 32, 64, /*dense=*/false), rng);
  auto rep2 = check_gradients(t2, root2, {bind("table", table2), bind("pos", p2)}, 1e-6);
  CHECK(rep2.max_rel_err < 1e-6);
}

TEST_CASE("quadratic form gradient check is tight") {
  Rng rng(83);
  Tape<double> t;
  Param x = make_param(t, random_array(1, 4, rng));
  Array<double> a = random_array(4, 4, rng);
  int root = t.row_dot(t.matmul(x.id, t.constant(a)), x.id);
  auto rep = check_gradients(t, root, {bind("x", x)}, 1e-5);
  CHECK(rep.max_rel_err < 1e-8);
  CHECK(rep.evaluations == 8);
}

TEST_CASE("constant function has exactly zero gradients") {
  Tape<double> t;
  Rng rng(84);
  Param x = make_param(t, random_array(3, 3, rng));
  int root = t.sum(t.mul(x.id, t.constant(Array<double>::zeros(3, 3))));
  t.backward(root);
  for (double g : x.grad.data) CHECK(g == 0.0);
}

TEST_CASE("backward is linear in the root") {
  Rng rng(85);
  Array<double> xv = random_array(4, 1, rng);
  Array<double> c1 = random_array(4, 1, rng);
  Array<double> c2 = random_array(4, 1, rng);

  auto run = [&](bool first, bool second) {
    Tape<double> t;
    Array<double> grad = Array<double>::zeros(4, 1);
    int x = t.leaf(xv.data.data(), 4, 1, grad.data.data());
    int r1 = t.sum(t.mul(x, t.constant(c1)));
    int r2 = t.sum(t.mul(x, t.constant(c2)));
    int root = first && second ? t.add(r1, r2) : (first ? r1 : r2);
    t.backward(root);
    return grad;
  };

  Array<double> gsum = run(true, true);
  Array<double> g1 = run(true, false);
  Array<double> g2 = run(false, true);
  for (int i = 0; i < 4; ++i) CHECK(gsum.data[i] == g1.data[i] + g2.data[i]);
}

TEST_CASE("replayed evaluation is bit-identical") {
  Rng rng(86);
  Tape<double> t;
  Param x = make_param(t, random_array(4, 4, rng, 0.1, 2.0));
  int root = t.sum(t.sigmoid(t.matmul(x.id, t.log_(x.id))));
  double v0 = t.scalar_value(root);
  for (int i = 0; i < 3; ++i) {
    t.forward();
    CHECK(t.scalar_value(root) == v0);
  }
}

TEST_CASE("shape mismatches raise structured errors") {
  Tape<double> t;
  Array<double> a(2, 3), b(3, 2);
  int ia = t.constant(a);
  int ib = t.constant(b);
  CHECK_THROWS_AS(t.add(ia, ib), ShapeError);
  CHECK_THROWS_WITH_AS(t.add(ia, ib), doctest::Contains("add"), ShapeError);
  CHECK_THROWS_AS(t.matmul(ia, ia), ShapeError);
  CHECK_THROWS_AS(t.backward(ia), ShapeError);  // non-scalar root
}

TEST_CASE("tape reset reuses memory") {
  Tape<double> t;
  Rng rng(87);
  for (int iter = 0; iter < 3; ++iter) {
    t.reset();
    Param x = make_param(t, random_array(8, 8, rng));
    int root = t.sum(t.mul(x.id, x.id));
    t.backward(root);
    CHECK(t.size() > 0);
  }
}
