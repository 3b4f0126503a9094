#pragma once

#include <optional>

#include "mfg/solver.hpp"

namespace mfg {

enum class TransportMetric { W1, W2 };

struct MasterEvalConfig {
  double horizon = 1.0;  // T; solves run on [t0, T]
  int nx = 120;
  int nt = 120;
  double drift_bound = 3.0;
  double damping = 0.5;
  double tol = 1e-10;
  int max_iter = 300;
  GradientScheme scheme = GradientScheme::UpwindSecondOrder;
  double eps = 0.0;  // atom-perturbation step; 0 selects 0.25 dx
  bool richardson = true;
  int threads = 1;

  double step_for(const Grid1D& grid) const;  // validates eps <= dx/2
};

struct LipschitzReport {
  TransportMetric metric = TransportMetric::W2;
  int trials = 0;
  double max_ratio = 0.0;     // |V(nu) - V(mu)| / W(mu, nu)
  double max_dx_ratio = 0.0;  // same for dx V
  std::vector<double> scales;
  std::vector<double> ratio_by_scale;  // max value ratio per jitter scale
  std::optional<std::pair<DiscreteMeasure, DiscreteMeasure>> witness;
};

// Master value surface realized by re-solving the mean field game from
// perturbed initial data. All perturbation solves of one query share the
// base grid so interpolation bias cancels in differences.
class MasterSurface {
 public:
  MasterSurface(HamiltonianModel h, TerminalCostModel g, MasterEvalConfig cfg);

  const MasterEvalConfig& config() const { return cfg_; }
  const HamiltonianModel& hamiltonian() const { return h_; }
  const TerminalCostModel& terminal() const { return g_; }

  Grid1D make_grid(double t0, const DiscreteMeasure& mu) const;

  // V(t0, x, mu): grid-interpolated u(t0, x) of the solved game.
  double eval_V(double t0, double x, const DiscreteMeasure& mu) const;

  // dmu V(t0, x, mu, x_k) by the +-eps atom shift scaled with 1/(2 eps w_k),
  // Richardson-extrapolated when enabled. Requires w_k >= 1e-6.
  double d_mu_V(double t0, double x, const DiscreteMeasure& mu, int k) const;

  // Central x-difference of d_mu_V with step dx.
  double d_x_mu_V(double t0, double x, const DiscreteMeasure& mu, int k) const;

  // The whole node row x -> dmu V(t0, x, mu, x_k) from one pair of solves;
  // the cheap bulk interface behind d_mu_V / d_x_mu_V and the propagation
  // checkpoint sweeps.
  struct DmuSurface {
    Grid1D grid;
    Vec values;  // node values of dmu V(t0, ., mu, x_k)
    double value_at(double x) const { return interp_value(grid, values, x); }
    double xderiv_at(double x) const {
      return (interp_value(grid, values, x + grid.dx()) -
              interp_value(grid, values, x - grid.dx())) /
             (2.0 * grid.dx());
    }
  };
  DmuSurface dmu_surface(double t0, const DiscreteMeasure& mu, int k) const;
  DmuSurface dmu_surface_on(const Grid1D& grid, double t0,
                            const DiscreteMeasure& mu, int k,
                            const MfgSolution& base) const;

  MfgSolution solve_on(const Grid1D& grid, const DiscreteMeasure& mu,
                       const std::vector<Vec>* warm = nullptr) const;

  // Ratio study |V(., nu) - V(., mu)| / W(mu, nu) over atom jitters at
  // scales {1e-1, 1e-2, 1e-3}; also tracks the dx V ratios.
  LipschitzReport lipschitz_estimate(double t0, double x,
                                     const DiscreteMeasure& base_mu,
                                     TransportMetric metric, int trials,
                                     std::uint64_t seed) const;

 private:
  HamiltonianModel h_;
  TerminalCostModel g_;
  MasterEvalConfig cfg_;
};

}  // namespace mfg
