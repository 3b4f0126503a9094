#include "mfg/propagation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "mfg/parallel.hpp"
#include "mfg/rng.hpp"

namespace mfg {

namespace {

Vec scalar(double v) {
  Vec out(1);
  out << v;
  return out;
}

// Hat weights over the sorted site list; clamped at the ends.
void site_weights(const Vec& sites, double x, int* left, double* w_left) {
  const int m = static_cast<int>(sites.size());
  if (x <= sites(0)) {
    *left = 0;
    *w_left = 1.0;
    return;
  }
  if (x >= sites(m - 1)) {
    *left = m - 2 >= 0 ? m - 2 : 0;
    *w_left = m >= 2 ? 0.0 : 1.0;
    return;
  }
  int lo = 0;
  while (lo + 1 < m && sites(lo + 1) < x) ++lo;
  double span = sites(lo + 1) - sites(lo);
  *left = lo;
  *w_left = span > 1e-300 ? (sites(lo + 1) - x) / span : 1.0;
}

}  // namespace

double CheckpointContext::mixed_derivative(double x, double x_tilde) const {
  int left;
  double w_left;
  site_weights(sites, x_tilde, &left, &w_left);
  double out = w_left * dmu[left].xderiv_at(x);
  if (w_left < 1.0 && left + 1 < static_cast<int>(dmu.size()))
    out += (1.0 - w_left) * dmu[left + 1].xderiv_at(x);
  return out;
}

DiscreteMeasure compress_particles(const Vec& particles, int bins) {
  const int n = static_cast<int>(particles.size());
  bins = std::min(bins, n);
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](int a, int b) { return particles(a) < particles(b); });
  Mat atoms(bins, 1);
  Vec weights(bins);
  int start = 0;
  for (int b = 0; b < bins; ++b) {
    int count = n / bins + (b < n % bins ? 1 : 0);
    double mean = 0.0;
    for (int k = start; k < start + count; ++k) mean += particles(order[k]);
    atoms(b, 0) = mean / count;
    weights(b) = static_cast<double>(count) / n;
    start += count;
  }
  return DiscreteMeasure(std::move(atoms), std::move(weights));
}

namespace {

// Equal-mass bins over the current particle positions; used to compress the
// dpmu H expectation to O(n * bins) per substep.
struct TangentBins {
  Vec sites;       // bin mean positions
  Vec tangent_sum; // sum of tangents per bin / n
};

TangentBins bin_tangents(const Vec& particles, const Vec& tangents, int bins) {
  const int n = static_cast<int>(particles.size());
  bins = std::min(bins, n);
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](int a, int b) { return particles(a) < particles(b); });
  TangentBins out;
  out.sites.resize(bins);
  out.tangent_sum.resize(bins);
  int start = 0;
  for (int b = 0; b < bins; ++b) {
    int count = n / bins + (b < n % bins ? 1 : 0);
    double pos = 0.0, tan = 0.0;
    for (int k = start; k < start + count; ++k) {
      pos += particles(order[k]);
      tan += tangents(order[k]);
    }
    out.sites(b) = pos / count;
    out.tangent_sum(b) = tan / n;
    start += count;
  }
  return out;
}

bool model_has_p_measure_coupling(const HamiltonianModel& h,
                                  const DiscreteMeasure& probe) {
  for (double x : {-0.7, 0.2, 1.1})
    for (double p : {-0.5, 0.8})
      if (h.dpmu(scalar(x), probe, scalar(0.3), scalar(p)).cwiseAbs().maxCoeff() >
          0.0)
        return true;
  return false;
}

CheckpointContext build_context(const MasterSurface& master,
                                const MfgSolution& base, double time,
                                const Vec& particles,
                                const PropagationConfig& cfg) {
  DiscreteMeasure summary = compress_particles(particles, cfg.derivative_atoms);
  const double horizon = master.config().horizon;
  std::vector<MasterSurface::DmuSurface> dmu;
  dmu.reserve(summary.size());
  if (time >= horizon - 1e-12 * std::max(1.0, horizon)) {
    // At the horizon the surface IS the terminal cost; read its Lions
    // derivative directly instead of solving a zero-length game.
    const TerminalCostModel& g = master.terminal();
    for (int k = 0; k < summary.size(); ++k) {
      Vec row(base.grid.nx);
      for (int j = 0; j < base.grid.nx; ++j)
        row(j) = g.dmu(scalar(base.grid.node(j)), summary, summary.atom(k))(0);
      dmu.push_back(MasterSurface::DmuSurface{base.grid, std::move(row)});
    }
  } else {
    Grid1D grid = master.make_grid(time, summary);
    MfgSolution anchor = master.solve_on(grid, summary);
    std::vector<std::optional<MasterSurface::DmuSurface>> slots(summary.size());
    parallel_for(summary.size(), cfg.threads, [&](std::size_t k) {
      slots[k].emplace(master.dmu_surface_on(grid, time, summary,
                                             static_cast<int>(k), anchor));
    });
    for (auto& s : slots) dmu.push_back(std::move(*s));
  }

  // value slice of the base solution at the checkpoint time (linear blend of
  // the neighboring rows)
  const Grid1D& bg = base.grid;
  double s = (time - bg.t0) / bg.dt();
  int row = std::clamp(static_cast<int>(std::floor(s)), 0, bg.nt - 1);
  double frac = std::clamp(s - row, 0.0, 1.0);
  Vec u_row = (1.0 - frac) * base.u[row] + frac * base.u[row + 1];

  CheckpointContext ctx{time, summary.atoms().col(0), std::move(dmu), bg,
                        std::move(u_row)};
  return ctx;
}

}  // namespace

FlowTrajectory simulate_flow(const MasterSurface& master,
                             const MfgSolution& base, const Vec& particles,
                             const Vec& tangents, const PropagationConfig& cfg) {
  if (particles.size() != tangents.size())
    throw std::invalid_argument("simulate_flow: particle/tangent mismatch");
  if (cfg.n_checkpoints < 2)
    throw std::invalid_argument("simulate_flow: need at least 2 checkpoints");
  const Grid1D& grid = base.grid;
  const HamiltonianModel& h = master.hamiltonian();
  const int n = static_cast<int>(particles.size());

  FlowTrajectory traj;
  traj.seed = cfg.seed;
  for (int k = 0; k < cfg.n_checkpoints; ++k)
    traj.times.push_back(grid.t0 + (grid.T - grid.t0) * k /
                                       (cfg.n_checkpoints - 1));

  Rng rng(cfg.seed);
  Vec X = particles, dX = tangents;
  bool p_measure_coupled =
      model_has_p_measure_coupling(h, compress_particles(particles, 4));

  for (int k = 0; k < cfg.n_checkpoints; ++k) {
    CheckpointContext ctx = build_context(master, base, traj.times[k], X, cfg);

    // diagnostic N at the checkpoint
    Vec N(n);
    {
      DiscreteMeasure mu_row = measure_from_density(
          grid, base.rho[std::min<int>(
                    grid.nt, static_cast<int>(std::round(
                                 (traj.times[k] - grid.t0) / grid.dt())))]);
      TangentBins bins = bin_tangents(X, dX, cfg.derivative_atoms);
      for (int i = 0; i < n; ++i) {
        double cross = 0.0;
        // E[dxmu V eta~] via the context surfaces (tangent_sum is already
        // the bin sum divided by the particle count)
        double mixed = 0.0;
        for (int b = 0; b < bins.sites.size(); ++b)
          mixed += ctx.mixed_derivative(X(i), bins.sites(b)) *
                   bins.tangent_sum(b);
        double hpp =
            h.dpp(scalar(X(i)), mu_row, scalar(ctx.dx_u(X(i))))(0, 0);
        if (p_measure_coupled) {
          for (int b = 0; b < bins.sites.size(); ++b)
            cross += h.dpmu(scalar(X(i)), mu_row, scalar(bins.sites(b)),
                            scalar(ctx.dx_u(X(i))))(0, 0) *
                     bins.tangent_sum(b);
        }
        N(i) = mixed + ctx.dxx_u(X(i)) * dX(i) + 0.5 / hpp * cross;
      }
    }

    traj.X.push_back(X);
    traj.dX.push_back(dX);
    traj.N_diag.push_back(std::move(N));
    traj.contexts.push_back(std::move(ctx));
    if (k + 1 == cfg.n_checkpoints) break;

    const CheckpointContext& frozen = traj.contexts.back();
    double t = traj.times[k];
    double dt_sub = (traj.times[k + 1] - traj.times[k]) / cfg.substeps_per_interval;
    for (int step = 0; step < cfg.substeps_per_interval; ++step) {
      int row = std::clamp(static_cast<int>(std::floor((t - grid.t0) / grid.dt())),
                           0, grid.nt);
      DiscreteMeasure mu_row = measure_from_density(grid, base.rho[row]);
      // time-blended value slice for dx u / dxx u
      double fr = std::clamp((t - grid.t0) / grid.dt() - row, 0.0, 1.0);
      Vec u_t = row < grid.nt
                    ? Vec((1.0 - fr) * base.u[row] + fr * base.u[row + 1])
                    : base.u[grid.nt];

      TangentBins bins = bin_tangents(X, dX, cfg.derivative_atoms);
      Vec newX(n), newdX(n);
      for (int i = 0; i < n; ++i) {
        double xi = X(i);
        if (xi < grid.x_min || xi > grid.x_max)
          throw std::runtime_error("simulate_flow: particle " +
                                   std::to_string(i) + " escaped the grid at t = " +
                                   std::to_string(t));
        double p = interp_derivative(grid, u_t, xi);
        double drift = -h.dp(scalar(xi), mu_row, scalar(p))(0);
        newX(i) = xi + drift * dt_sub + std::sqrt(dt_sub) * normal(rng);

        double mixed = 0.0;
        for (int b = 0; b < bins.sites.size(); ++b)
          mixed += frozen.mixed_derivative(xi, bins.sites(b)) *
                   bins.tangent_sum(b);
        double cross = 0.0;
        double hpp = h.dpp(scalar(xi), mu_row, scalar(p))(0, 0);
        if (p_measure_coupled) {
          for (int b = 0; b < bins.sites.size(); ++b)
            cross += h.dpmu(scalar(xi), mu_row, scalar(bins.sites(b)),
                            scalar(p))(0, 0) *
                     bins.tangent_sum(b);
        }
        double dxx = interp_second_derivative(grid, u_t, xi);
        double N_i = mixed + dxx * dX(i) + 0.5 / hpp * cross;
        double hpx = h.dxp(scalar(xi), mu_row, scalar(p))(0, 0);
        newdX(i) = dX(i) - dt_sub * (hpx * dX(i) + 0.5 * cross + hpp * N_i);
      }
      X = std::move(newX);
      dX = std::move(newdX);
      t += dt_sub;
    }
  }
  return traj;
}

DissipationProfile dissipation_profile(const FlowTrajectory& traj,
                                       double mono_tol_rel,
                                       double terminal_tol) {
  DissipationProfile profile;
  profile.times = traj.times;
  profile.terminal_tol = terminal_tol;
  const int K = static_cast<int>(traj.times.size());
  for (int k = 0; k < K; ++k) {
    const Vec& X = traj.X[k];
    const Vec& dX = traj.dX[k];
    const CheckpointContext& ctx = traj.contexts[k];
    const int n = static_cast<int>(X.size());
    // I: factorized double sum over the compressed x_tilde sites
    TangentBins bins = bin_tangents(X, dX, static_cast<int>(ctx.sites.size()));
    double I = 0.0, Ibar = 0.0;
    for (int i = 0; i < n; ++i) {
      double mixed = 0.0;
      for (int b = 0; b < bins.sites.size(); ++b)
        mixed += ctx.mixed_derivative(X(i), bins.sites(b)) * bins.tangent_sum(b);
      I += mixed * dX(i) / n;
      Ibar += ctx.dxx_u(X(i)) * dX(i) * dX(i) / n;
    }
    profile.values.push_back(I + Ibar);
  }
  profile.mono_tol = mono_tol_rel * std::abs(profile.values.front());
  profile.nonincreasing = true;
  for (int k = 0; k + 1 < K; ++k)
    if (profile.values[k + 1] > profile.values[k] + profile.mono_tol)
      profile.nonincreasing = false;
  profile.terminal_ok = profile.values.back() >= -terminal_tol;
  return profile;
}

RateReport rate_check(const FlowTrajectory& traj, const HamiltonianModel& h,
                      DissipationProfile& profile, double tol_rel) {
  const int K = static_cast<int>(traj.times.size());
  profile.rate_values.assign(K, 0.0);
  for (int k = 0; k < K; ++k) {
    const Vec& X = traj.X[k];
    const CheckpointContext& ctx = traj.contexts[k];
    Mat atoms(X.size(), 1);
    atoms.col(0) = X;
    Mat tangents(X.size(), 1);
    tangents.col(0) = traj.dX[k];
    TangentSample sample(DiscreteMeasure::uniform(std::move(atoms)),
                         std::move(tangents));
    auto phi = [&ctx](const Vec& x) { return scalar(ctx.dx_u(x(0))); };
    profile.rate_values[k] = displacement_form_hamiltonian(h, sample, phi);
  }

  RateReport report;
  double scale = 1.0 + std::abs(profile.values.front());
  report.tol = tol_rel * scale;
  report.pass = true;
  for (int k = 0; k + 1 < K; ++k) {
    double dt = traj.times[k + 1] - traj.times[k];
    double decrement = profile.values[k] - profile.values[k + 1];
    double bound = -0.5 * (profile.rate_values[k] + profile.rate_values[k + 1]) * dt;
    report.interval_start.push_back(traj.times[k]);
    report.decrements.push_back(decrement);
    report.bounds.push_back(bound);
    if (decrement < bound - report.tol) report.pass = false;
  }
  return report;
}

void write_profile_csv(const DissipationProfile& profile,
                       const RateReport* rate, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_profile_csv: cannot open " + path);
  out << "time,I_plus_Ibar,rate_bound,decrement\n";
  char line[160];
  for (std::size_t k = 0; k < profile.times.size(); ++k) {
    double bound = 0.0, decrement = 0.0;
    if (rate && k < rate->bounds.size()) {
      bound = rate->bounds[k];
      decrement = rate->decrements[k];
    }
    std::snprintf(line, sizeof(line), "%.12g,%.17g,%.17g,%.17g\n",
                  profile.times[k], profile.values[k], bound, decrement);
    out << line;
  }
}

}  // namespace mfg
