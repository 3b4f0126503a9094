#include "mfg/master.hpp"

#include <cmath>

#include "mfg/parallel.hpp"
#include "mfg/rng.hpp"

namespace mfg {

double MasterEvalConfig::step_for(const Grid1D& grid) const {
  double step = eps > 0.0 ? eps : 0.25 * grid.dx();
  if (step <= 0.0 || step > 0.5 * grid.dx())
    throw std::invalid_argument(
        "master: perturbation step must lie in (0, dx/2], got " +
        std::to_string(step));
  return step;
}

MasterSurface::MasterSurface(HamiltonianModel h, TerminalCostModel g,
                             MasterEvalConfig cfg)
    : h_(std::move(h)), g_(std::move(g)), cfg_(std::move(cfg)) {
  if (h_.dim != 1)
    throw std::invalid_argument("master: the PDE core is 1-d only");
}

Grid1D MasterSurface::make_grid(double t0, const DiscreteMeasure& mu) const {
  if (t0 >= cfg_.horizon)
    throw std::invalid_argument("master: t0 must be below the horizon");
  return Grid1D::for_support(mu, cfg_.drift_bound, t0, cfg_.horizon, cfg_.nx,
                             cfg_.nt);
}

MfgSolution MasterSurface::solve_on(const Grid1D& grid,
                                    const DiscreteMeasure& mu,
                                    const std::vector<Vec>* warm) const {
  MfgOptions opt;
  opt.damping = cfg_.damping;
  opt.tol = cfg_.tol;
  opt.max_iter = cfg_.max_iter;
  opt.scheme = cfg_.scheme;
  opt.initial_flow = warm;
  return solve_mfg(h_, g_, mu, grid, opt);
}

double MasterSurface::eval_V(double t0, double x,
                             const DiscreteMeasure& mu) const {
  Grid1D grid = make_grid(t0, mu);
  if (!grid.contains(x))
    throw std::invalid_argument("master: probe point outside the solver grid");
  MfgSolution sol = solve_on(grid, mu);
  return interp_value(grid, sol.u[0], x);
}

MasterSurface::DmuSurface MasterSurface::dmu_surface_on(
    const Grid1D& grid, double t0, const DiscreteMeasure& mu, int k,
    const MfgSolution& base) const {
  if (k < 0 || k >= mu.size())
    throw std::out_of_range("master: atom index out of range");
  if (mu.weight(k) < 1e-6)
    throw std::invalid_argument(
        "master: atom weight below 1e-6, the 1/w scaling is ill-conditioned");
  (void)t0;
  double eps = cfg_.step_for(grid);
  Vec e(1);
  auto difference = [&](double step) {
    MfgSolution up = solve_on(grid, perturb_atom1d(mu, k, step), &base.rho);
    MfgSolution dn = solve_on(grid, perturb_atom1d(mu, k, -step), &base.rho);
    return Vec((up.u[0] - dn.u[0]) / (2.0 * step * mu.weight(k)));
  };
  Vec row = difference(eps);
  if (cfg_.richardson) {
    Vec finer = difference(eps / 2.0);
    row = (4.0 * finer - row) / 3.0;
  }
  return DmuSurface{grid, std::move(row)};
}

MasterSurface::DmuSurface MasterSurface::dmu_surface(
    double t0, const DiscreteMeasure& mu, int k) const {
  Grid1D grid = make_grid(t0, mu);
  MfgSolution base = solve_on(grid, mu);
  return dmu_surface_on(grid, t0, mu, k, base);
}

double MasterSurface::d_mu_V(double t0, double x, const DiscreteMeasure& mu,
                             int k) const {
  return dmu_surface(t0, mu, k).value_at(x);
}

double MasterSurface::d_x_mu_V(double t0, double x, const DiscreteMeasure& mu,
                               int k) const {
  return dmu_surface(t0, mu, k).xderiv_at(x);
}

LipschitzReport MasterSurface::lipschitz_estimate(double t0, double x,
                                                  const DiscreteMeasure& base_mu,
                                                  TransportMetric metric,
                                                  int trials,
                                                  std::uint64_t seed) const {
  if (trials < 1) throw std::invalid_argument("lipschitz_estimate: trials < 1");
  LipschitzReport report;
  report.metric = metric;
  report.trials = trials;
  report.scales = {1e-1, 1e-2, 1e-3};
  report.ratio_by_scale.assign(report.scales.size(), 0.0);

  Grid1D grid = make_grid(t0, base_mu);
  MfgSolution base = solve_on(grid, base_mu);
  double v_base = interp_value(grid, base.u[0], x);
  double dv_base = interp_derivative(grid, base.u[0], x);

  struct Trial {
    double ratio = 0.0, dx_ratio = 0.0;
    int scale_idx = 0;
    std::optional<DiscreteMeasure> nu;
  };
  std::vector<Trial> results(trials);

  parallel_for(trials, cfg_.threads, [&](std::size_t trial) {
    Rng rng(derive_seed(seed, trial));
    int scale_idx = static_cast<int>(trial % report.scales.size());
    double scale = report.scales[scale_idx];
    Mat atoms = base_mu.atoms();
    for (int i = 0; i < atoms.rows(); ++i) atoms(i, 0) += scale * normal(rng);
    DiscreteMeasure nu(atoms, base_mu.weights());
    double dist = metric == TransportMetric::W2 ? w2_distance(base_mu, nu)
                                                : w1_distance(base_mu, nu);
    Trial out;
    out.scale_idx = scale_idx;
    out.nu = nu;
    if (dist > 1e-14) {
      MfgSolution sol = solve_on(grid, nu, &base.rho);
      out.ratio = std::abs(interp_value(grid, sol.u[0], x) - v_base) / dist;
      out.dx_ratio =
          std::abs(interp_derivative(grid, sol.u[0], x) - dv_base) / dist;
    }
    results[trial] = std::move(out);
  });

  for (const Trial& t : results) {
    if (t.ratio > report.max_ratio) {
      report.max_ratio = t.ratio;
      if (t.nu) report.witness = std::make_pair(base_mu, *t.nu);
    }
    report.max_dx_ratio = std::max(report.max_dx_ratio, t.dx_ratio);
    report.ratio_by_scale[t.scale_idx] =
        std::max(report.ratio_by_scale[t.scale_idx], t.ratio);
  }
  return report;
}

}  // namespace mfg
