#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mfg/lq.hpp"
#include "mfg/master.hpp"
#include "mfg/rng.hpp"

using namespace mfg;

namespace {

MasterEvalConfig light_config(double T = 1.0, int n = 100) {
  MasterEvalConfig cfg;
  cfg.horizon = T;
  cfg.nx = n;
  cfg.nt = n;
  cfg.tol = 1e-10;
  cfg.threads = 2;
  return cfg;
}

MasterSurface lq_master(const LqSpec& spec, int n = 100) {
  return MasterSurface(lq_hamiltonian(spec.q, spec.c),
                       quadratic_terminal(spec.g), light_config(spec.T, n));
}

}  // namespace

TEST_CASE("measure-independent free game has the zero surface") {
  MasterSurface master(separable_hamiltonian(quadratic_terminal(0.0)),
                       quadratic_terminal(0.0), light_config(0.5, 64));
  auto mu = sample_gaussian1d(12, 0.2, 0.4, 3);
  for (double t0 : {0.0, 0.2})
    for (double x : {-0.5, 0.0, 1.0}) {
      CHECK(master.eval_V(t0, x, mu) == doctest::Approx(0.0).epsilon(1e-12));
    }
  CHECK(master.d_mu_V(0.0, 0.3, mu, 2) == doctest::Approx(0.0));
  CHECK(master.d_x_mu_V(0.0, 0.3, mu, 2) == doctest::Approx(0.0));
}

TEST_CASE("lq value surface matches the oracle") {
  LqSpec spec;
  spec.q = 1.0;
  spec.c = 0.5;
  spec.g = 1.0;
  auto mu = sample_gaussian1d(24, 1.0, 0.5, 11);
  spec.m0 = mu.mean()(0);
  auto oracle = solve_lq(spec);
  auto master = lq_master(spec, 140);
  for (double x : {0.0, 0.8, 1.6})
    CHECK(master.eval_V(0.0, x, mu) ==
          doctest::Approx(oracle_V(oracle, 0.0, x)).epsilon(0.02));
}

TEST_CASE("terminal continuity: V(T - dt) approaches G") {
  LqSpec spec;
  spec.q = 1.0;
  spec.c = 0.5;
  spec.g = 1.0;
  auto mu = sample_gaussian1d(24, 1.0, 0.5, 11);
  auto master = lq_master(spec, 64);
  auto g = quadratic_terminal(spec.g);
  for (double gap : {0.02, 0.01}) {
    double x = 0.7;
    Vec xv(1);
    xv << x;
    double got = master.eval_V(spec.T - gap, x, mu);
    CHECK(std::abs(got - g.value(xv, mu)) < 3.0 * gap + 1e-3);
  }
}

TEST_CASE("probe point must lie inside the solver window") {
  LqSpec spec;
  auto master = lq_master(spec, 64);
  auto mu = sample_gaussian1d(8, 0.0, 0.3, 5);
  CHECK_THROWS_AS(master.eval_V(0.0, 50.0, mu), std::invalid_argument);
}

TEST_CASE("atom weight floor for measure derivatives") {
  LqSpec spec;
  auto master = lq_master(spec, 64);
  Mat atoms(2, 1);
  atoms << 0.0, 1.0;
  Vec w(2);
  w << 1.0 - 1e-7, 1e-7;
  DiscreteMeasure mu(atoms, w);
  CHECK_THROWS_AS(master.d_mu_V(0.0, 0.5, mu, 1), std::invalid_argument);
}

TEST_CASE("perturbation step validation") {
  MasterEvalConfig cfg = light_config(1.0, 64);
  cfg.eps = 10.0;  // far above dx/2
  MasterSurface master(lq_hamiltonian(1.0, 0.5), quadratic_terminal(1.0), cfg);
  auto mu = sample_gaussian1d(8, 0.0, 0.3, 5);
  CHECK_THROWS_AS(master.d_mu_V(0.0, 0.0, mu, 0), std::invalid_argument);
}

TEST_CASE("lq measure derivative matches the sensitivity oracle") {
  LqSpec spec;
  spec.q = 1.0;
  spec.c = 0.5;
  spec.g = 1.0;
  auto mu = sample_gaussian1d(16, 1.0, 0.5, 21);
  spec.m0 = mu.mean()(0);
  auto oracle = solve_lq(spec);
  auto master = lq_master(spec, 120);
  Grid1D grid = master.make_grid(0.0, mu);
  auto base = master.solve_on(grid, mu);
  Rng rng(5);
  for (int probe = 0; probe < 4; ++probe) {
    int k = uniform_int(rng, 0, mu.size() - 1);
    auto surf = master.dmu_surface_on(grid, 0.0, mu, k, base);
    double x = uniform(rng, 0.0, 1.8);
    double want = x * oracle.db_dm_at(0.0) + oracle.dc_dm_at(0.0);
    CHECK(surf.value_at(x) == doctest::Approx(want).epsilon(0.05));
    CHECK(surf.xderiv_at(x) ==
          doctest::Approx(oracle.db_dm_at(0.0)).epsilon(0.05));
  }
}

TEST_CASE("coincident atoms: derivative is insensitive to weight splitting") {
  LqSpec spec;
  spec.q = 1.0;
  spec.c = 0.5;
  spec.g = 1.0;
  auto master = lq_master(spec, 100);
  // two coincident atoms sharing the mass of one
  std::vector<double> xs{0.4, 0.4, 1.0, 1.6};
  auto split = DiscreteMeasure::uniform1d(xs);
  Mat merged_atoms(3, 1);
  merged_atoms << 0.4, 1.0, 1.6;
  Vec merged_w(3);
  merged_w << 0.5, 0.25, 0.25;
  DiscreteMeasure merged(merged_atoms, merged_w);
  double split_value = master.d_mu_V(0.0, 0.9, split, 0);
  double merged_value = master.d_mu_V(0.0, 0.9, merged, 0);
  CHECK(split_value == doctest::Approx(merged_value).epsilon(1e-3));
}

TEST_CASE("first differences are predicted by the measure gradient") {
  LqSpec spec;
  spec.q = 1.0;
  spec.c = 0.5;
  spec.g = 1.0;
  auto mu = sample_gaussian1d(6, 1.0, 0.5, 31);
  auto master = lq_master(spec, 100);
  Grid1D grid = master.make_grid(0.0, mu);
  auto base = master.solve_on(grid, mu);
  const double x = 0.8;
  double v0 = interp_value(grid, base.u[0], x);

  Rng rng(7);
  Vec delta(mu.size());
  for (int i = 0; i < mu.size(); ++i) delta(i) = normal(rng);
  double directional = 0.0;
  for (int k = 0; k < mu.size(); ++k) {
    auto surf = master.dmu_surface_on(grid, 0.0, mu, k, base);
    directional += mu.weight(k) * surf.value_at(x) * delta(k);
  }
  auto shifted_value = [&](double s) {
    Mat atoms = mu.atoms();
    atoms.col(0) += s * delta;
    DiscreteMeasure shifted(atoms, mu.weights());
    auto sol = master.solve_on(grid, shifted, &base.rho);
    return interp_value(grid, sol.u[0], x);
  };
  double s = 0.08;
  double r1 = std::abs(shifted_value(s) - v0 - s * directional);
  double r2 = std::abs(shifted_value(s / 2.0) - v0 - (s / 2.0) * directional);
  double ratio = r1 / r2;
  CHECK(ratio >= 3.0);
  CHECK(ratio <= 5.0);
}

TEST_CASE("hessian-in-measure proxy is symmetric (d=2 analytic functional)") {
  // Lemma-style oracle on mu -> exp(int sin(x0+2x1) dmu) + (int x0 x1 dmu)^2:
  // the numerical x~-derivative of the Lions derivative at an atom, including
  // its measure self-interaction, must be a symmetric 2x2 matrix.
  auto U = [](const DiscreteMeasure& m) {
    double s1 = 0.0, s2 = 0.0;
    for (int i = 0; i < m.size(); ++i) {
      s1 += m.weight(i) * std::sin(m.atoms()(i, 0) + 2.0 * m.atoms()(i, 1));
      s2 += m.weight(i) * m.atoms()(i, 0) * m.atoms()(i, 1);
    }
    return std::exp(s1) + s2 * s2;
  };
  Rng rng(13);
  Mat atoms(6, 2);
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 2; ++j) atoms(i, j) = normal(rng);
  DiscreteMeasure mu = DiscreteMeasure::uniform(atoms);
  const int k = 2;
  const double h = 1e-4;
  Mat proxy(2, 2);
  for (int l = 0; l < 2; ++l) {
    Vec e = Vec::Zero(2);
    e(l) = h;
    Vec up = fd_lions_derivative(U, perturb_atom(mu, k, e), k, 1e-4);
    Vec dn = fd_lions_derivative(U, perturb_atom(mu, k, Vec(-e)), k, 1e-4);
    proxy.row(l) = ((up - dn) / (2.0 * h)).transpose();
  }
  double asym = (proxy - proxy.transpose()).norm();
  CHECK(asym <= 1e-3 * (1.0 + proxy.norm()));
}

TEST_CASE("the solved surface is displacement monotone for monotone data") {
  // direct form E[(dxV(xi1, L1) - dxV(xi2, L2)) . (xi1 - xi2)] >= -tol with
  // dxV from grid interpolation, over random perturbation pairs
  LqSpec spec;
  spec.q = 1.0;
  spec.c = 0.5;
  spec.g = 1.0;
  REQUIRE(spec.displacement_monotone());
  auto master = lq_master(spec, 100);
  Rng rng(61);
  for (int pair = 0; pair < 4; ++pair) {
    auto mu1 = sample_gaussian1d(12, 1.0, 0.4, derive_seed(62, pair));
    Mat shifted = mu1.atoms();
    for (int i = 0; i < shifted.rows(); ++i) shifted(i, 0) += 0.4 * normal(rng);
    DiscreteMeasure mu2(shifted, mu1.weights());
    Grid1D grid = master.make_grid(0.0, mu1);
    auto sol1 = master.solve_on(grid, mu1);
    auto sol2 = master.solve_on(grid, mu2, &sol1.rho);
    double form = 0.0;
    for (int i = 0; i < mu1.size(); ++i) {
      double x1 = mu1.atom1d(i), x2 = mu2.atom1d(i);
      double d1 = interp_derivative(grid, sol1.u[0], x1);
      double d2 = interp_derivative(grid, sol2.u[0], x2);
      form += mu1.weight(i) * (d1 - d2) * (x1 - x2);
    }
    CHECK(form >= -1e-6);
  }
}

TEST_CASE("lipschitz ratios") {
  SUBCASE("measure-independent data gives zero ratios") {
    MasterSurface master(separable_hamiltonian(quadratic_terminal(0.3)),
                         quadratic_terminal(0.4), light_config(0.5, 64));
    auto mu = sample_gaussian1d(10, 0.0, 0.4, 17);
    auto report =
        master.lipschitz_estimate(0.0, 0.3, mu, TransportMetric::W2, 6, 5);
    CHECK(report.max_ratio == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(report.max_dx_ratio == doctest::Approx(0.0).epsilon(1e-9));
  }
  SUBCASE("lq ratios stay under the oracle sensitivity bound") {
    LqSpec spec;
    spec.q = 1.0;
    spec.c = 0.5;
    spec.g = 1.0;
    auto mu = sample_gaussian1d(16, 1.0, 0.5, 19);
    spec.m0 = mu.mean()(0);
    auto oracle = solve_lq(spec);
    auto master = lq_master(spec, 100);
    const double x = 0.9;
    auto report =
        master.lipschitz_estimate(0.0, x, mu, TransportMetric::W2, 12, 23);
    double bound = 0.0;
    for (double t = 0.0; t <= spec.T; t += 0.05)
      bound = std::max(bound, std::abs(x * oracle.db_dm_at(t) +
                                       oracle.dc_dm_at(t)));
    CHECK(report.max_ratio <= 1.1 * bound);
    CHECK(report.trials == 12);
    REQUIRE(report.witness.has_value());
    // ratios do not blow up as the jitter scale shrinks
    CHECK(report.ratio_by_scale.back() <=
          2.0 * report.ratio_by_scale.front() + 1e-9);
  }
}
