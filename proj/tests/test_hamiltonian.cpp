#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mfg/hamiltonian.hpp"
#include "mfg/monotonicity.hpp"
#include "mfg/rng.hpp"

using namespace mfg;

namespace {

Vec scalar(double v) {
  Vec out(1);
  out << v;
  return out;
}

std::vector<DiscreteMeasure> test_clouds(int dim, int count, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<DiscreteMeasure> out;
  for (int i = 0; i < count; ++i)
    out.push_back(sample_mixture_cloud(dim, rng, 2, 16));
  return out;
}

// Grid brute-force sup over p in [-10, 10], step 1e-3; the independent oracle
// for the Legendre value.
double brute_force_legendre(const HamiltonianModel& h, const Vec& x,
                            const DiscreteMeasure& mu, double a) {
  double best = -std::numeric_limits<double>::infinity();
  for (double p = -10.0; p <= 10.0; p += 1e-3)
    best = std::max(best, -a * p - h.value(x, mu, scalar(p)));
  return best;
}

}  // namespace

TEST_CASE("shipped models match finite differences of their own values") {
  auto clouds1 = test_clouds(1, 5, 101);
  SUBCASE("lq") {
    auto rep = check_hamiltonian_consistency(lq_hamiltonian(1.0, 0.5), clouds1,
                                             20, 7);
    CHECK(rep.max_rel_error < 1e-5);
    CHECK(rep.min_pp_eigenvalue >= 1.0 - 1e-12);
  }
  SUBCASE("constructed, d=1") {
    auto rep = check_hamiltonian_consistency(
        constructed_hamiltonian(ConstructedParams{}), clouds1, 20, 7);
    CHECK(rep.max_rel_error < 1e-5);
    CHECK(rep.min_pp_eigenvalue >= 2.0 - 0.05 - 1e-12);
    CHECK(rep.max_growth_ratio <= 1.0);
  }
  SUBCASE("constructed, d=2") {
    ConstructedParams prm;
    prm.dim = 2;
    auto rep = check_hamiltonian_consistency(constructed_hamiltonian(prm),
                                             test_clouds(2, 4, 202), 15, 7);
    CHECK(rep.max_rel_error < 1e-5);
  }
  SUBCASE("separable") {
    auto rep = check_hamiltonian_consistency(
        separable_hamiltonian(lq_coupling_surface(1.0, -2.0)), clouds1, 20, 7);
    CHECK(rep.max_rel_error < 1e-5);
  }
  SUBCASE("quadratic terminal") {
    auto rep =
        check_terminal_consistency(quadratic_terminal(0.7), clouds1, 20, 7);
    CHECK(rep.max_rel_error < 1e-5);
  }
  SUBCASE("concave shift surface") {
    auto rep =
        check_terminal_consistency(concave_shift_surface(1), clouds1, 20, 7);
    CHECK(rep.max_rel_error < 1e-5);
  }
}

TEST_CASE("legendre transform of |p|^2/2") {
  auto h = separable_hamiltonian(quadratic_terminal(0.0));  // H = |p|^2/2
  auto mu = DiscreteMeasure::uniform1d({0.0});
  SUBCASE("a = 0 gives 0 (sup at p = 0)") {
    CHECK(legendre_lagrangian(h, scalar(0.0), mu, scalar(0.0)) ==
          doctest::Approx(0.0).epsilon(1e-12));
  }
  SUBCASE("L(a) = a^2/2 against the grid oracle") {
    for (double a : {-1.7, -0.4, 0.9, 2.3}) {
      double expected = brute_force_legendre(h, scalar(0.3), mu, a);
      double got = legendre_lagrangian(h, scalar(0.3), mu, scalar(a));
      CHECK(got == doctest::Approx(expected).epsilon(1e-6));
      CHECK(got == doctest::Approx(0.5 * a * a).epsilon(1e-9));
    }
  }
}

TEST_CASE("double legendre transform recovers H") {
  Rng rng(5);
  auto h = constructed_hamiltonian(ConstructedParams{});
  auto l = dual_lagrangian_model(h);
  auto mu = sample_mixture_cloud(1, rng);
  for (int trial = 0; trial < 10; ++trial) {
    Vec x = scalar(normal(rng)), p = scalar(normal(rng));
    Vec a_star = -h.dp(x, mu, p);
    double recovered = -p.dot(a_star) - l.value(x, mu, a_star);
    CHECK(recovered == doctest::Approx(h.value(x, mu, p)).epsilon(1e-8));
    // maximizer property: nearby a do not beat it
    for (double da : {-1e-3, 1e-3}) {
      Vec a = a_star + scalar(da);
      CHECK(-p.dot(a) - l.value(x, mu, a) <= recovered + 1e-9);
    }
  }
}

TEST_CASE("legendre identities on the LQ model (analytic Lagrangian)") {
  Rng rng(9);
  auto h = lq_hamiltonian(1.0, 0.5);
  auto l = lq_lagrangian(1.0, 0.5);
  auto mu = sample_mixture_cloud(1, rng);
  for (int trial = 0; trial < 20; ++trial) {
    Vec x = scalar(2.0 * normal(rng)), p = scalar(2.0 * normal(rng));
    Vec xt = mu.atom(uniform_int(rng, 0, mu.size() - 1));
    auto err = legendre_identity_errors(h, l, x, mu, xt, p);
    CHECK(err.max() < 1e-6);
  }
}

TEST_CASE("legendre identities on the constructed model (dual Lagrangian)") {
  Rng rng(13);
  auto h = constructed_hamiltonian(ConstructedParams{});
  auto l = dual_lagrangian_model(h);
  auto mu = sample_mixture_cloud(1, rng);
  double worst = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    Vec x = scalar(normal(rng)), p = scalar(normal(rng));
    Vec xt = scalar(0.5 * normal(rng));
    auto err = legendre_identity_errors(h, l, x, mu, xt, p);
    worst = std::max(worst, err.max());
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("first-order legendre identity against pure value differences") {
  // dxH = -dxL with L evaluated only through the sup (no envelope shortcut),
  // an independent computational path.
  Rng rng(17);
  auto h = constructed_hamiltonian(ConstructedParams{});
  auto mu = sample_mixture_cloud(1, rng);
  for (int trial = 0; trial < 5; ++trial) {
    Vec x = scalar(normal(rng)), p = scalar(normal(rng));
    Vec a_star = -h.dp(x, mu, p);
    double step = 1e-5;
    double dxL = (legendre_lagrangian(h, scalar(x(0) + step), mu, a_star) -
                  legendre_lagrangian(h, scalar(x(0) - step), mu, a_star)) /
                 (2.0 * step);
    CHECK(h.dx(x, mu, p)(0) == doctest::Approx(-dxL).epsilon(1e-6));
  }
}

TEST_CASE("fd_lions_derivative") {
  Rng rng(21);
  auto mu = sample_mixture_cloud(1, rng, 3, 10);
  SUBCASE("mean functional has derivative 1") {
    auto mean_fn = [](const DiscreteMeasure& m) { return m.mean()(0); };
    for (int k = 0; k < mu.size(); ++k) {
      Vec d = fd_lions_derivative(mean_fn, mu, k, 1e-4);
      CHECK(d(0) == doctest::Approx(1.0).epsilon(1e-9));
    }
  }
  SUBCASE("second moment has derivative 2 x_k") {
    auto m2 = [](const DiscreteMeasure& m) { return m.second_moment_sq(); };
    for (int k = 0; k < mu.size(); ++k) {
      Vec coarse = fd_lions_derivative(m2, mu, k, 1e-3, false);
      Vec fine = fd_lions_derivative(m2, mu, k, 5e-4, false);
      Vec rich = fd_lions_derivative(m2, mu, k, 1e-3);
      double want = 2.0 * mu.atom1d(k);
      CHECK(rich(0) == doctest::Approx(want).epsilon(1e-8));
      CHECK(std::abs(fine(0) - want) <= std::abs(coarse(0) - want) + 1e-10);
    }
  }
  SUBCASE("constant functional gives 0") {
    auto ones = [](const DiscreteMeasure&) { return 4.2; };
    Vec d = fd_lions_derivative(ones, mu, 0, 1e-4);
    CHECK(d(0) == doctest::Approx(0.0));
  }
  SUBCASE("weight floor") {
    Mat a(2, 1);
    a << 0.0, 1.0;
    Vec w(2);
    w << 1.0 - 1e-13, 1e-13;
    DiscreteMeasure tiny(a, w);
    auto mean_fn = [](const DiscreteMeasure& m) { return m.mean()(0); };
    CHECK_THROWS_AS(fd_lions_derivative(mean_fn, tiny, 1, 1e-4),
                    std::invalid_argument);
  }
}

TEST_CASE("analytic Lions derivatives match the FD oracle on shipped models") {
  Rng rng(25);
  auto h = constructed_hamiltonian(ConstructedParams{});
  auto lq = lq_hamiltonian(1.0, 0.5);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    auto mu = sample_mixture_cloud(1, rng, 2, 12);
    int k = uniform_int(rng, 0, mu.size() - 1);
    Vec x = scalar(normal(rng)), p = scalar(normal(rng));
    const HamiltonianModel& model = trial % 2 == 0 ? h : lq;
    auto U = [&](const DiscreteMeasure& m) { return model.value(x, m, p); };
    Vec fd = fd_lions_derivative(U, mu, k, 1e-4);
    Vec an = model.dmu(x, mu, mu.atom(k), p);
    worst = std::max(worst, (fd - an).norm() / (1e-3 + an.norm()));
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("constructed family") {
  SUBCASE("H0 = 0, C0 = 1 gives |p|^2 - psi_1(x)") {
    ConstructedParams prm;
    prm.alpha = 0.0;  // switches the bump core off
    prm.C0 = 1.0;
    auto h = constructed_hamiltonian(prm);
    auto mu = DiscreteMeasure::uniform1d({0.3});
    Vec x = scalar(0.4), p = scalar(1.3);
    ConvexWell well{1.0, 1.0};
    CHECK(h.value(x, mu, p) ==
          doctest::Approx(p.squaredNorm() - well.value(x)).epsilon(1e-12));
    CHECK(h.dpp(x, mu, p)(0, 0) == doctest::Approx(2.0).epsilon(1e-12));
  }
  SUBCASE("C0 below threshold reports the minimal admissible value") {
    ConstructedParams prm;
    prm.C0 = 1e-3;
    double min_c0 = constructed_min_admissible_c0(prm);
    CHECK(min_c0 > prm.C0);
    try {
      constructed_hamiltonian(prm);
      FAIL("expected a threshold error");
    } catch (const std::invalid_argument& err) {
      CHECK(std::string(err.what()).find("minimal admissible C0") !=
            std::string::npos);
    }
  }
  SUBCASE("dmu equals the chain rule through the measure statistic") {
    Rng rng(29);
    auto h = constructed_hamiltonian(ConstructedParams{});
    for (int trial = 0; trial < 20; ++trial) {
      auto mu = sample_mixture_cloud(1, rng, 2, 8);
      int k = uniform_int(rng, 0, mu.size() - 1);
      Vec x = scalar(0.5 * normal(rng)), p = scalar(normal(rng));
      auto U = [&](const DiscreteMeasure& m) { return h.value(x, m, p); };
      Vec fd = fd_lions_derivative(U, mu, k, 1e-4);
      CHECK(fd(0) ==
            doctest::Approx(h.dmu(x, mu, mu.atom(k), p)(0)).epsilon(1e-4));
    }
  }
}

TEST_CASE("convex well blend is C2 and convex") {
  ConvexWell well{2.0, 1.5};
  for (double r : {1.5, 2.5}) {
    double below = well.radial_dd(r - 1e-9);
    double above = well.radial_dd(r + 1e-9);
    CHECK(below == doctest::Approx(above).epsilon(1e-5));
  }
  for (double r = 0.0; r < 4.0; r += 0.01) {
    CHECK(well.radial_dd(r) >= -1e-12);
    if (r > 0.01) {
      double fd = (well.radial(r + 1e-6) - well.radial(r - 1e-6)) / 2e-6;
      CHECK(fd == doctest::Approx(well.radial_d(r)).epsilon(1e-5));
    }
  }
  CHECK(well.radial_dd(2.6) == 0.0);
  CHECK(well.radial_dd(10.0) == 0.0);
}

TEST_CASE("registry") {
  CHECK(make_hamiltonian("lq", {{"q", 1.0}, {"c", 0.5}}).name == "lq");
  CHECK(make_hamiltonian("constructed", {}).name == "constructed");
  CHECK(make_hamiltonian("separable", {{"q", 1.0}, {"c", -2.0}}).dim == 1);
  CHECK_THROWS_AS(make_hamiltonian("nope", {}), std::invalid_argument);
  CHECK(make_terminal("quadratic", {{"g", 0.5}}).dim == 1);
  CHECK_THROWS_AS(make_terminal("nope", {}), std::invalid_argument);
}
