#pragma once

#include "mfg/hamiltonian.hpp"

namespace mfg {

// Uniform 1-d cell-centered grid on [x_min, x_max] x [t0, T].
struct Grid1D {
  double x_min, x_max;
  int nx;  // interior cell count
  double t0, T;
  int nt;
  // core window for error norms: the region insulated from the artificial
  // Neumann walls (defaults to the full window)
  double core_lo, core_hi;

  Grid1D(double x_min_, double x_max_, int nx_, double t0_, double T_, int nt_);

  // [min atom - pad, max atom + pad] with pad = drift_bound (T - t0)
  // + 5 sqrt(T - t0); the core window uses 2 sqrt(T - t0) instead of 5.
  static Grid1D for_support(const DiscreteMeasure& mu0, double drift_bound,
                            double t0, double T, int nx, int nt);

  double dx() const { return (x_max - x_min) / nx; }
  double dt() const { return (T - t0) / nt; }
  double node(int j) const { return x_min + (j + 0.5) * dx(); }
  double time(int n) const { return t0 + n * dt(); }
  double cfl_record() const { return dt() / (dx() * dx()); }
  bool contains(double x) const { return x >= x_min && x <= x_max; }
};

// Time-space value/density tables for one solved mean field game.
struct MfgSolution {
  Grid1D grid;
  std::vector<Vec> u;    // (nt+1) rows of nx node values
  std::vector<Vec> rho;  // (nt+1) rows of nx cell densities
  std::vector<double> residual_history;
  int iterations = 0;
  std::vector<double> partition;  // window start times (empty: no partition)
  bool mu0_projected = false;     // initial atoms clamped into the window

  double mass(int n) const;  // sum rho[n] dx
};

class MfgConvergenceError : public std::runtime_error {
 public:
  MfgConvergenceError(const std::string& what, std::vector<double> history)
      : std::runtime_error(what), residual_history(std::move(history)) {}
  std::vector<double> residual_history;
};

enum class GradientScheme {
  UpwindSecondOrder,  // upwind-biased 3-point one-sided differences (default)
  MonotoneFirstOrder, // Engquist-Osher flux with the convex minimizer
  Central,
};

struct MfgOptions {
  double damping = 0.5;
  double tol = 1e-9;
  int max_iter = 200;
  double partition_len = 0.0;  // > 0: windowed solve in the partition style
  GradientScheme scheme = GradientScheme::UpwindSecondOrder;
  const std::vector<Vec>* initial_flow = nullptr;  // warm start (nt+1 rows)
};

// Grid helpers --------------------------------------------------------------

// Hat-function deposition of the atoms onto cell centers; returns densities.
// projected set when atoms had to be clamped into the window.
Vec deposit_measure(const Grid1D& grid, const DiscreteMeasure& mu0,
                    bool* projected = nullptr);
// Grid cells as atoms with cell masses rho * dx (renormalized).
DiscreteMeasure measure_from_density(const Grid1D& grid, const Vec& rho);

// Local cubic (4-point Lagrange) interpolation of a node row, clamped to the
// window; value and x-derivative.
double interp_value(const Grid1D& grid, const Vec& row, double x);
double interp_derivative(const Grid1D& grid, const Vec& row, double x);
// Second difference of the row interpolated at x (for dxx u probes).
double interp_second_derivative(const Grid1D& grid, const Vec& row, double x);

// Node gradient by central differences (one-sided at the walls).
Vec node_gradient(const Grid1D& grid, const Vec& row);

// PDE sweeps ------------------------------------------------------------------

// Backward value sweep: -du/dt - 1/2 dxx u + H(x, rho_t, dx u) = 0 with
// homogeneous Neumann walls, implicit diffusion, Hamiltonian evaluated on the
// already-computed later time slice (semi-implicit lag). rho_flow supplies
// the measure argument row by row.
std::vector<Vec> solve_hjb(const HamiltonianModel& h, const Vec& terminal,
                           const std::vector<Vec>& rho_flow, const Grid1D& grid,
                           GradientScheme scheme = GradientScheme::UpwindSecondOrder);

// Forward density sweep: d rho/dt = 1/2 dxx rho - dx(rho b) for particle
// drift b(t,x), zero-flux walls, implicit exponentially fitted two-point
// fluxes (positivity preserving, mass conserving). drift rows are node
// values, one row per time level.
std::vector<Vec> solve_fp(const std::vector<Vec>& drift,
                          const DiscreteMeasure& mu0, const Grid1D& grid,
                          bool* projected = nullptr);
std::vector<Vec> solve_fp_density(const std::vector<Vec>& drift,
                                  const Vec& rho0, const Grid1D& grid,
                                  int n_lo = 0, int n_hi = -1);

// Damped Picard iteration between the two sweeps. Drift of the density is
// -dpH(x, rho_t, dx u). If opt.partition_len > 0 the horizon is split into
// windows solved backward, each window running its own local fixed point fed
// by the later window's value slice.
MfgSolution solve_mfg(const HamiltonianModel& h, const TerminalCostModel& g,
                      const DiscreteMeasure& mu0, const Grid1D& grid,
                      const MfgOptions& opt = {});

void dump_solution_csv(const MfgSolution& sol, const std::string& path,
                       int stride_t = 1, int stride_x = 1);

}  // namespace mfg
