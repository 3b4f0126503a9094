#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mfg/lq.hpp"
#include "mfg/propagation.hpp"
#include "mfg/rng.hpp"

using namespace mfg;

namespace {

struct Setup {
  MasterSurface master;
  MfgSolution base;
  Vec particles;
  Vec tangents;
};

MasterEvalConfig master_cfg(double T, int n) {
  MasterEvalConfig cfg;
  cfg.horizon = T;
  cfg.nx = n;
  cfg.nt = n;
  cfg.tol = 1e-9;
  cfg.threads = 2;
  return cfg;
}

Setup make_setup(const HamiltonianModel& h, const TerminalCostModel& g,
                 double T, int n_particles, double mean, double sd,
                 std::uint64_t seed, double drift_bound, int grid_n) {
  MasterEvalConfig cfg = master_cfg(T, grid_n);
  cfg.drift_bound = drift_bound;
  MasterSurface master(h, g, cfg);
  Rng rng(seed);
  Vec particles(n_particles), tangents(n_particles);
  for (int i = 0; i < n_particles; ++i) {
    particles(i) = mean + sd * normal(rng);
    tangents(i) = normal(rng);
  }
  Mat atoms(n_particles, 1);
  atoms.col(0) = particles;
  DiscreteMeasure mu0 = DiscreteMeasure::uniform(std::move(atoms));
  Grid1D grid = master.make_grid(0.0, mu0);
  MfgSolution base = master.solve_on(grid, mu0);
  return Setup{std::move(master), std::move(base), std::move(particles),
               std::move(tangents)};
}

}  // namespace

TEST_CASE("zero tangents stay zero and dissipate nothing") {
  auto h = lq_hamiltonian(1.0, 0.5);
  auto g = quadratic_terminal(1.0);
  Setup s = make_setup(h, g, 1.0, 200, 1.0, 0.5, 5, 3.0, 80);
  PropagationConfig cfg;
  cfg.n_particles = 200;
  cfg.n_checkpoints = 3;
  cfg.derivative_atoms = 8;
  cfg.substeps_per_interval = 10;
  cfg.seed = 7;
  cfg.threads = 2;
  Vec zeros = Vec::Zero(200);
  auto traj = simulate_flow(s.master, s.base, s.particles, zeros, cfg);
  for (const Vec& dx : traj.dX) CHECK(dx.lpNorm<Eigen::Infinity>() == 0.0);
  auto profile = dissipation_profile(traj);
  for (double v : profile.values) CHECK(v == 0.0);
  CHECK(profile.pass());
  auto rate = rate_check(traj, h, profile);
  for (std::size_t k = 0; k < rate.bounds.size(); ++k) {
    CHECK(rate.bounds[k] == 0.0);
    CHECK(rate.decrements[k] == 0.0);
  }
  CHECK(rate.pass);
}

TEST_CASE("free hamiltonian rides a pure brownian motion") {
  auto h = separable_hamiltonian(quadratic_terminal(0.0));
  auto g = quadratic_terminal(0.0);
  Setup s = make_setup(h, g, 1.0, 2000, 0.0, 0.4, 11, 1.0, 80);
  PropagationConfig cfg;
  cfg.n_particles = 2000;
  cfg.n_checkpoints = 5;
  cfg.derivative_atoms = 8;
  cfg.substeps_per_interval = 12;
  cfg.seed = 13;
  cfg.threads = 2;
  auto traj = simulate_flow(s.master, s.base, s.particles, s.tangents, cfg);
  double v0 = 0.16;  // initial variance
  for (std::size_t k = 1; k < traj.times.size(); ++k) {
    double mean = traj.X[k].mean();
    double var = (traj.X[k].array() - mean).square().mean();
    CHECK(var - v0 == doctest::Approx(traj.times[k]).epsilon(0.10));
  }
  // tangents are frozen for measure-independent quadratic-free data
  for (std::size_t k = 0; k < traj.times.size(); ++k)
    CHECK((traj.dX[k] - s.tangents).lpNorm<Eigen::Infinity>() < 1e-12);
}

TEST_CASE("seed determinism is bitwise") {
  auto h = lq_hamiltonian(1.0, 0.5);
  auto g = quadratic_terminal(1.0);
  Setup s = make_setup(h, g, 1.0, 300, 1.0, 0.5, 17, 3.0, 80);
  PropagationConfig cfg;
  cfg.n_particles = 300;
  cfg.n_checkpoints = 3;
  cfg.derivative_atoms = 8;
  cfg.substeps_per_interval = 8;
  cfg.seed = 99;
  cfg.threads = 2;
  auto a = simulate_flow(s.master, s.base, s.particles, s.tangents, cfg);
  auto b = simulate_flow(s.master, s.base, s.particles, s.tangents, cfg);
  for (std::size_t k = 0; k < a.times.size(); ++k) {
    CHECK((a.X[k] - b.X[k]).lpNorm<Eigen::Infinity>() == 0.0);
    CHECK((a.dX[k] - b.dX[k]).lpNorm<Eigen::Infinity>() == 0.0);
  }
}

TEST_CASE("lq tangent flow follows the closed-form linear system") {
  LqSpec spec;
  spec.q = 1.0;
  spec.c = 0.5;
  spec.g = 1.0;
  auto h = lq_hamiltonian(spec.q, spec.c);
  auto g = quadratic_terminal(spec.g);
  Setup s = make_setup(h, g, spec.T, 1000, 1.0, 0.5, 23, 3.0, 120);
  spec.m0 = s.particles.mean();
  auto oracle = solve_lq(spec);

  PropagationConfig cfg;
  cfg.n_particles = 1000;
  cfg.n_checkpoints = 6;
  cfg.derivative_atoms = 16;
  cfg.substeps_per_interval = 25;
  cfg.seed = 29;
  cfg.threads = 2;
  auto traj = simulate_flow(s.master, s.base, s.particles, s.tangents, cfg);

  // d dX = -(a_t dX + db_t mean(dX)) dt integrated per particle with the
  // oracle coefficients (RK4 on the shared linear system)
  Vec ode = s.tangents;
  const int steps = 4000;
  double dt = spec.T / steps;
  auto rhs = [&](double t, const Vec& v) {
    double mean = v.mean();
    return Vec(-(oracle.a_at(t) * v.array() + oracle.db_dm_at(t) * mean)
                    .matrix());
  };
  double t = 0.0;
  std::vector<Vec> ode_at_checkpoints{ode};
  std::size_t next_ck = 1;
  for (int step = 0; step < steps; ++step) {
    Vec k1 = rhs(t, ode);
    Vec k2 = rhs(t + dt / 2, ode + dt / 2 * k1);
    Vec k3 = rhs(t + dt / 2, ode + dt / 2 * k2);
    Vec k4 = rhs(t + dt, ode + dt * k3);
    ode += dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
    t += dt;
    if (next_ck < traj.times.size() && t >= traj.times[next_ck] - 1e-12) {
      ode_at_checkpoints.push_back(ode);
      ++next_ck;
    }
  }
  double scale = s.tangents.lpNorm<Eigen::Infinity>();
  for (std::size_t k = 0; k < traj.times.size(); ++k) {
    double gap =
        (traj.dX[k] - ode_at_checkpoints[k]).lpNorm<Eigen::Infinity>();
    CHECK(gap <= 0.02 * scale);
  }
}

TEST_CASE("lq dissipation profile matches the closed form") {
  LqSpec spec;
  spec.q = 1.0;
  spec.c = 0.5;
  spec.g = 1.0;
  auto h = lq_hamiltonian(spec.q, spec.c);
  auto g = quadratic_terminal(spec.g);
  Setup s = make_setup(h, g, spec.T, 1000, 1.0, 0.5, 31, 3.0, 120);
  spec.m0 = s.particles.mean();
  auto oracle = solve_lq(spec);

  PropagationConfig cfg;
  cfg.n_particles = 1000;
  cfg.n_checkpoints = 5;
  cfg.derivative_atoms = 16;
  cfg.substeps_per_interval = 20;
  cfg.seed = 37;
  cfg.threads = 2;
  auto traj = simulate_flow(s.master, s.base, s.particles, s.tangents, cfg);
  auto profile = dissipation_profile(traj);

  for (std::size_t k = 0; k < traj.times.size(); ++k) {
    double mean = traj.dX[k].mean();
    double second = traj.dX[k].array().square().mean();
    double want = oracle.a_at(traj.times[k]) * second +
                  oracle.db_dm_at(traj.times[k]) * mean * mean;
    CHECK(profile.values[k] == doctest::Approx(want).epsilon(0.05));
  }
  CHECK(profile.nonincreasing);
  CHECK(profile.terminal_ok);

  auto rate = rate_check(traj, h, profile);
  CHECK(rate.pass);
  // separable displacement-monotone coupling: the integrand is <= 0 and the
  // decrement exceeds the integral of its negation
  for (double v : profile.rate_values) CHECK(v <= 1e-10);
  for (std::size_t k = 0; k < rate.bounds.size(); ++k)
    CHECK(rate.decrements[k] >= rate.bounds[k] - rate.tol);
}

TEST_CASE("constructed model dissipates monotonically (light run)") {
  auto h = constructed_hamiltonian(ConstructedParams{});
  auto g = quadratic_terminal(0.2);
  Setup s = make_setup(h, g, 0.75, 600, 0.0, 0.5, 41, 2.0, 100);
  PropagationConfig cfg;
  cfg.n_particles = 600;
  cfg.n_checkpoints = 4;
  cfg.derivative_atoms = 12;
  cfg.substeps_per_interval = 15;
  cfg.seed = 43;
  cfg.threads = 2;
  auto traj = simulate_flow(s.master, s.base, s.particles, s.tangents, cfg);
  auto profile = dissipation_profile(traj, 1e-3, 1e-6);
  CHECK(profile.values.front() > 0.0);  // displacement monotone start
  CHECK(profile.nonincreasing);
  CHECK(profile.terminal_ok);
  // terminal value equals the displacement form of G on (X_T, dX_T)
  {
    Mat atoms(traj.X.back().size(), 1);
    atoms.col(0) = traj.X.back();
    Mat tangents(traj.dX.back().size(), 1);
    tangents.col(0) = traj.dX.back();
    TangentSample terminal_sample(DiscreteMeasure::uniform(std::move(atoms)),
                                  std::move(tangents));
    double g_form = displacement_form_surface(g, terminal_sample);
    CHECK(profile.values.back() ==
          doctest::Approx(g_form).epsilon(1e-3));
  }

  auto rate = rate_check(traj, h, profile);
  CHECK(rate.pass);
  write_profile_csv(profile, &rate, "/tmp/profile_test.csv");
  std::ifstream in("/tmp/profile_test.csv");
  std::string header;
  std::getline(in, header);
  CHECK(header == "time,I_plus_Ibar,rate_bound,decrement");
}

TEST_CASE("particle count scaling sanity") {
  auto h = lq_hamiltonian(1.0, 0.5);
  auto g = quadratic_terminal(1.0);
  PropagationConfig cfg;
  cfg.n_checkpoints = 3;
  cfg.derivative_atoms = 10;
  cfg.substeps_per_interval = 10;
  cfg.seed = 47;
  cfg.threads = 2;
  std::vector<double> values;
  for (int n : {800, 1600}) {
    Setup s = make_setup(h, g, 1.0, n, 1.0, 0.5, 53, 3.0, 80);
    cfg.n_particles = n;
    auto traj = simulate_flow(s.master, s.base, s.particles, s.tangents, cfg);
    auto profile = dissipation_profile(traj);
    values.push_back(profile.values.front());
  }
  double scale = std::abs(values.back()) + 1.0;
  CHECK(std::abs(values[0] - values[1]) <= 3.0 * scale / std::sqrt(800.0));
}

TEST_CASE("compress_particles builds equal-mass sorted bins") {
  Rng rng(59);
  Vec particles(103);
  for (int i = 0; i < particles.size(); ++i) particles(i) = normal(rng);
  auto summary = compress_particles(particles, 10);
  CHECK(summary.size() == 10);
  for (int b = 1; b < summary.size(); ++b)
    CHECK(summary.atom1d(b) >= summary.atom1d(b - 1));
  CHECK(std::abs(summary.mean()(0) - particles.mean()) < 1e-12);
}
