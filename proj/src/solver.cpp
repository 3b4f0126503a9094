#include "mfg/solver.hpp"

#include <cmath>
#include <fstream>

namespace mfg {

Grid1D::Grid1D(double x_min_, double x_max_, int nx_, double t0_, double T_,
               int nt_)
    : x_min(x_min_), x_max(x_max_), nx(nx_), t0(t0_), T(T_), nt(nt_),
      core_lo(x_min_), core_hi(x_max_) {
  if (!(x_min < x_max)) throw std::invalid_argument("grid: x_min >= x_max");
  if (nx < 8) throw std::invalid_argument("grid: nx < 8");
  if (nt < 4) throw std::invalid_argument("grid: nt < 4");
  if (!(t0 < T)) throw std::invalid_argument("grid: t0 >= T");
}

Grid1D Grid1D::for_support(const DiscreteMeasure& mu0, double drift_bound,
                           double t0, double T, int nx, int nt) {
  if (mu0.dim() != 1)
    throw std::invalid_argument("grid: support construction needs d = 1");
  double lo = mu0.atoms().col(0).minCoeff();
  double hi = mu0.atoms().col(0).maxCoeff();
  double horizon = T - t0;
  double pad = std::abs(drift_bound) * horizon + 5.0 * std::sqrt(horizon);
  Grid1D grid(lo - pad, hi + pad, nx, t0, T, nt);
  double core_pad = std::abs(drift_bound) * horizon + 2.0 * std::sqrt(horizon);
  grid.core_lo = lo - core_pad;
  grid.core_hi = hi + core_pad;
  return grid;
}

double MfgSolution::mass(int n) const { return rho[n].sum() * grid.dx(); }

// --- grid helpers --------------------------------------------------------------

Vec deposit_measure(const Grid1D& grid, const DiscreteMeasure& mu0,
                    bool* projected) {
  if (mu0.dim() != 1)
    throw std::invalid_argument("deposit_measure: d = 1 only");
  const double dx = grid.dx();
  Vec rho = Vec::Zero(grid.nx);
  bool clamped = false;
  for (int i = 0; i < mu0.size(); ++i) {
    double x = mu0.atom1d(i);
    double lo = grid.node(0), hi = grid.node(grid.nx - 1);
    if (x < lo || x > hi) {
      clamped = true;
      x = std::clamp(x, lo, hi);
    }
    double s = (x - grid.node(0)) / dx;
    int j = std::clamp(static_cast<int>(std::floor(s)), 0, grid.nx - 2);
    double frac = std::clamp(s - j, 0.0, 1.0);
    rho(j) += mu0.weight(i) * (1.0 - frac) / dx;
    rho(j + 1) += mu0.weight(i) * frac / dx;
  }
  if (projected) *projected = clamped;
  return rho;
}

DiscreteMeasure measure_from_density(const Grid1D& grid, const Vec& rho) {
  Mat atoms(grid.nx, 1);
  Vec weights(grid.nx);
  for (int j = 0; j < grid.nx; ++j) {
    atoms(j, 0) = grid.node(j);
    weights(j) = std::max(rho(j), 0.0) * grid.dx();
  }
  double total = weights.sum();
  if (total <= 0.0)
    throw std::runtime_error("measure_from_density: zero mass row");
  weights /= total;
  return DiscreteMeasure(std::move(atoms), std::move(weights));
}

namespace {

// 4-point Lagrange weights on the uniform node grid.
struct CubicStencil {
  int base;         // index of the second stencil node
  double w[4];      // value weights
  double dw[4];     // derivative weights
  double ddw[4];
};

CubicStencil cubic_stencil(const Grid1D& grid, double x) {
  const double dx = grid.dx();
  double s = (x - grid.node(0)) / dx;
  int j = static_cast<int>(std::floor(s));
  j = std::clamp(j, 1, grid.nx - 3);
  double t = s - j;  // offset from node j in cell units, in [0,1] inside
  CubicStencil st;
  st.base = j - 1;
  // Lagrange basis on nodes {-1, 0, 1, 2} evaluated at t
  st.w[0] = -t * (t - 1.0) * (t - 2.0) / 6.0;
  st.w[1] = (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0;
  st.w[2] = -(t + 1.0) * t * (t - 2.0) / 2.0;
  st.w[3] = (t + 1.0) * t * (t - 1.0) / 6.0;
  st.dw[0] = -(3.0 * t * t - 6.0 * t + 2.0) / 6.0 / dx;
  st.dw[1] = (3.0 * t * t - 4.0 * t - 1.0) / 2.0 / dx;
  st.dw[2] = -(3.0 * t * t - 2.0 * t - 2.0) / 2.0 / dx;
  st.dw[3] = (3.0 * t * t - 1.0) / 6.0 / dx;
  st.ddw[0] = -(t - 1.0) / dx / dx;
  st.ddw[1] = (3.0 * t - 2.0) / dx / dx;
  st.ddw[2] = -(3.0 * t - 1.0) / dx / dx;
  st.ddw[3] = t / dx / dx;
  return st;
}

double tail_clamp(const Grid1D& grid, double x, double* x_eff) {
  *x_eff = std::clamp(x, grid.node(0), grid.node(grid.nx - 1));
  return x - *x_eff;
}

void thomas_solve(std::vector<double>& lower, std::vector<double>& diag,
                  std::vector<double>& upper, Vec& rhs) {
  const int n = static_cast<int>(diag.size());
  for (int i = 1; i < n; ++i) {
    if (std::abs(diag[i - 1]) < 1e-300)
      throw std::runtime_error("tridiagonal solver degeneracy");
    double m = lower[i] / diag[i - 1];
    diag[i] -= m * upper[i - 1];
    rhs(i) -= m * rhs(i - 1);
  }
  rhs(n - 1) /= diag[n - 1];
  for (int i = n - 2; i >= 0; --i)
    rhs(i) = (rhs(i) - upper[i] * rhs(i + 1)) / diag[i];
}

}  // namespace

double interp_value(const Grid1D& grid, const Vec& row, double x) {
  double x_eff;
  double overhang = tail_clamp(grid, x, &x_eff);
  CubicStencil st = cubic_stencil(grid, x_eff);
  double v = 0.0, d = 0.0;
  for (int k = 0; k < 4; ++k) {
    v += st.w[k] * row(st.base + k);
    d += st.dw[k] * row(st.base + k);
  }
  return v + overhang * d;  // linear continuation outside the node span
}

double interp_derivative(const Grid1D& grid, const Vec& row, double x) {
  double x_eff;
  tail_clamp(grid, x, &x_eff);
  CubicStencil st = cubic_stencil(grid, x_eff);
  double d = 0.0;
  for (int k = 0; k < 4; ++k) d += st.dw[k] * row(st.base + k);
  return d;
}

double interp_second_derivative(const Grid1D& grid, const Vec& row, double x) {
  double x_eff;
  tail_clamp(grid, x, &x_eff);
  CubicStencil st = cubic_stencil(grid, x_eff);
  double d = 0.0;
  for (int k = 0; k < 4; ++k) d += st.ddw[k] * row(st.base + k);
  return d;
}

Vec node_gradient(const Grid1D& grid, const Vec& row) {
  const int nx = grid.nx;
  const double dx = grid.dx();
  Vec g(nx);
  for (int j = 1; j + 1 < nx; ++j) g(j) = (row(j + 1) - row(j - 1)) / (2.0 * dx);
  g(0) = (row(1) - row(0)) / dx;
  g(nx - 1) = (row(nx - 1) - row(nx - 2)) / dx;
  return g;
}

// --- backward value sweep --------------------------------------------------------

namespace {

Vec scalar(double v) {
  Vec out(1);
  out << v;
  return out;
}

double upwind_gradient_2nd(const Vec& u, int j, int nx, double dx,
                           bool from_left) {
  if (from_left) {
    if (j >= 2) return (3.0 * u(j) - 4.0 * u(j - 1) + u(j - 2)) / (2.0 * dx);
    if (j == 1) return (u(1) - u(0)) / dx;
    return (u(1) - u(0)) / dx;
  }
  if (j <= nx - 3) return (-3.0 * u(j) + 4.0 * u(j + 1) - u(j + 2)) / (2.0 * dx);
  if (j == nx - 2) return (u(nx - 1) - u(nx - 2)) / dx;
  return (u(nx - 1) - u(nx - 2)) / dx;
}

}  // namespace

std::vector<Vec> solve_hjb(const HamiltonianModel& h, const Vec& terminal,
                           const std::vector<Vec>& rho_flow, const Grid1D& grid,
                           GradientScheme scheme) {
  if (h.dim != 1) throw std::invalid_argument("solve_hjb: d = 1 only");
  if (static_cast<int>(rho_flow.size()) != grid.nt + 1)
    throw std::invalid_argument("solve_hjb: rho_flow must have nt+1 rows");
  if (!terminal.allFinite())
    throw std::invalid_argument("solve_hjb: non-finite terminal row");

  const int nx = grid.nx;
  const double dx = grid.dx(), dt = grid.dt();
  const double r = 0.5 * dt / (dx * dx);

  std::vector<Vec> u(grid.nt + 1);
  u[grid.nt] = terminal;

  std::vector<double> lower(nx), diag(nx), upper(nx);
  for (int n = grid.nt - 1; n >= 0; --n) {
    const Vec& next = u[n + 1];
    DiscreteMeasure mu = measure_from_density(grid, rho_flow[n]);
    Vec central = node_gradient(grid, next);
    Vec rhs(nx);
    for (int j = 0; j < nx; ++j) {
      Vec x = scalar(grid.node(j));
      double hval = 0.0;
      switch (scheme) {
        case GradientScheme::Central:
          hval = h.value(x, mu, scalar(central(j)));
          break;
        case GradientScheme::UpwindSecondOrder: {
          // Characteristics move with speed -dpH; the state information for
          // a backward value sweep comes from the side the state moves to.
          double speed = h.dp(x, mu, scalar(central(j)))(0);
          double p = upwind_gradient_2nd(next, j, nx, dx, speed >= 0.0);
          hval = h.value(x, mu, scalar(p));
          break;
        }
        case GradientScheme::MonotoneFirstOrder: {
          double pbar = hamiltonian_argmin(h, x, mu)(0);
          double pm = j >= 1 ? (next(j) - next(j - 1)) / dx : 0.0;
          double pp = j + 1 < nx ? (next(j + 1) - next(j)) / dx : 0.0;
          hval = h.value(x, mu, scalar(std::max(pm, pbar))) +
                 h.value(x, mu, scalar(std::min(pp, pbar))) -
                 h.value(x, mu, scalar(pbar));
          break;
        }
      }
      rhs(j) = next(j) - dt * hval;
    }
    // (I - dt/2 Dxx) u = rhs with mirrored ghosts
    for (int j = 0; j < nx; ++j) {
      lower[j] = -r;
      upper[j] = -r;
      diag[j] = 1.0 + 2.0 * r;
    }
    diag[0] = 1.0 + r;
    diag[nx - 1] = 1.0 + r;
    thomas_solve(lower, diag, upper, rhs);
    if (!rhs.allFinite())
      throw std::runtime_error("solve_hjb: NaN at time step " +
                               std::to_string(n));
    u[n] = std::move(rhs);
  }
  return u;
}

// --- forward density sweep ---------------------------------------------------------

namespace {

// Exponential fitting weight: flux b[(1-delta) rho_j + delta rho_j+1]
// - D (rho_j+1 - rho_j)/dx reproduces the exact two-point stationary
// solution; delta(w) = 1/w - 1/(e^w - 1) for the cell Peclet number w.
double fitting_delta(double w) {
  if (std::abs(w) < 1e-8) return 0.5 - w / 12.0;
  if (w > 500.0) return 1.0 / w;
  if (w < -500.0) return 1.0 + 1.0 / w;
  return 1.0 / w - 1.0 / std::expm1(w);
}

}  // namespace

std::vector<Vec> solve_fp_density(const std::vector<Vec>& drift,
                                  const Vec& rho0, const Grid1D& grid,
                                  int n_lo, int n_hi) {
  const int nx = grid.nx;
  const double dx = grid.dx(), dt = grid.dt();
  const double D = 0.5;
  if (n_hi < 0) n_hi = grid.nt;
  if (static_cast<int>(drift.size()) != grid.nt + 1)
    throw std::invalid_argument("solve_fp: drift must have nt+1 rows");

  std::vector<Vec> rho(grid.nt + 1);
  rho[n_lo] = rho0;
  std::vector<double> lower(nx), diag(nx), upper(nx);
  std::vector<double> A(nx + 1), B(nx + 1);  // flux coefficients at faces
  for (int n = n_lo; n < n_hi; ++n) {
    const Vec& b_row = drift[n + 1];
    for (int f = 1; f < nx; ++f) {  // interior faces f-1/2 between f-1, f
      double b = 0.5 * (b_row(f - 1) + b_row(f));
      double w = b * dx / D;
      double delta = fitting_delta(w);
      A[f] = b * (1.0 - delta) + D / dx;   // multiplies rho_{f-1}
      B[f] = b * delta - D / dx;           // multiplies rho_f
    }
    A[0] = B[0] = A[nx] = B[nx] = 0.0;  // zero-flux walls
    for (int j = 0; j < nx; ++j) {
      // rho_j + dt/dx (F_{j+1/2} - F_{j-1/2}) = rho^n_j
      diag[j] = 1.0 + dt / dx * (A[j + 1] - B[j]);
      upper[j] = dt / dx * B[j + 1];
      lower[j] = -dt / dx * A[j];
    }
    Vec rhs = rho[n];
    thomas_solve(lower, diag, upper, rhs);
    if (!rhs.allFinite())
      throw std::runtime_error("solve_fp: NaN at time step " +
                               std::to_string(n + 1));
    double neg = rhs.minCoeff();
    if (neg < -1e-12)
      throw std::runtime_error(
          "solve_fp: negative density " + std::to_string(neg) +
          " at time step " + std::to_string(n + 1) +
          " (positivity-preserving scheme violated, likely a bug)");
    rho[n + 1] = std::move(rhs);
  }
  return rho;
}

std::vector<Vec> solve_fp(const std::vector<Vec>& drift,
                          const DiscreteMeasure& mu0, const Grid1D& grid,
                          bool* projected) {
  Vec rho0 = deposit_measure(grid, mu0, projected);
  return solve_fp_density(drift, rho0, grid);
}

// --- coupled fixed point -------------------------------------------------------------

namespace {

struct PicardState {
  std::vector<Vec> flow;  // density rows
  std::vector<Vec> u;
  std::vector<double> residuals;
  int iterations = 0;
};

Vec terminal_row(const TerminalCostModel& g, const Grid1D& grid,
                 const Vec& rho_T) {
  DiscreteMeasure muT = measure_from_density(grid, rho_T);
  Vec row(grid.nx);
  for (int j = 0; j < grid.nx; ++j) {
    Vec x(1);
    x << grid.node(j);
    row(j) = g.value(x, muT);
  }
  return row;
}

std::vector<Vec> drift_rows(const HamiltonianModel& h, const Grid1D& grid,
                            const std::vector<Vec>& u,
                            const std::vector<Vec>& flow, int n_lo, int n_hi) {
  std::vector<Vec> drift(grid.nt + 1);
  for (int n = n_lo; n <= n_hi; ++n) {
    DiscreteMeasure mu = measure_from_density(grid, flow[n]);
    Vec grad = node_gradient(grid, u[n]);
    Vec row(grid.nx);
    for (int j = 0; j < grid.nx; ++j) {
      Vec x(1);
      x << grid.node(j);
      row(j) = -h.dp(x, mu, scalar(grad(j)))(0);
    }
    drift[n] = std::move(row);
  }
  return drift;
}

double flow_gap(const Grid1D& grid, const std::vector<Vec>& a,
                const std::vector<Vec>& b, int n_lo, int n_hi) {
  double worst = 0.0;
  for (int n = n_lo; n <= n_hi; ++n)
    worst = std::max(worst, (a[n] - b[n]).lpNorm<1>() * grid.dx());
  return worst;
}

void check_row_invariants(const Grid1D& grid, const std::vector<Vec>& flow,
                          int n_lo, int n_hi) {
  for (int n = n_lo; n <= n_hi; ++n) {
    double mass = flow[n].sum() * grid.dx();
    if (std::abs(mass - 1.0) > 1e-10)
      throw std::runtime_error("mfg: mass drift " + std::to_string(mass - 1.0) +
                               " at time step " + std::to_string(n));
    if (flow[n].minCoeff() < -1e-12)
      throw std::runtime_error("mfg: negative density at time step " +
                               std::to_string(n));
  }
}

// One damped fixed point on the window [n_lo, n_hi]. The terminal condition
// is either the cost model evaluated on the window's own terminal density
// (use_terminal_model) or the fixed row `terminal_fixed` handed down from
// the window to the right. The residual is the genuine fixed-point defect
// |FP(HJB(flow)) - flow|, measured before damping, so a measure-independent
// Hamiltonian converges in exactly one update. The first update is undamped
// (there is nothing worth blending an arbitrary initial guess into).
PicardState picard_window(const HamiltonianModel& h, const TerminalCostModel& g,
                          const Grid1D& grid, const Vec& rho_lo, int n_lo,
                          int n_hi, bool use_terminal_model,
                          const Vec& terminal_fixed,
                          std::vector<Vec> flow_guess, const MfgOptions& opt) {
  PicardState st;
  st.flow = std::move(flow_guess);
  double lambda = opt.damping;
  int rising = 0;
  for (int it = 0; it <= opt.max_iter; ++it) {
    Vec terminal = use_terminal_model
                       ? terminal_row(g, grid, st.flow[n_hi])
                       : terminal_fixed;
    // The window HJB runs on a sub-time-grid; reuse the full-grid sweep by
    // building a shifted grid with the same spacing.
    Grid1D wgrid(grid.x_min, grid.x_max, grid.nx, grid.time(n_lo),
                 grid.time(n_hi), n_hi - n_lo);
    std::vector<Vec> wflow(st.flow.begin() + n_lo, st.flow.begin() + n_hi + 1);
    std::vector<Vec> wu = solve_hjb(h, terminal, wflow, wgrid, opt.scheme);
    std::vector<Vec> full_u(grid.nt + 1);
    for (int n = n_lo; n <= n_hi; ++n) full_u[n] = wu[n - n_lo];

    std::vector<Vec> wdrift(n_hi - n_lo + 1);
    {
      std::vector<Vec> full_drift =
          drift_rows(h, grid, full_u, st.flow, n_lo, n_hi);
      for (int n = n_lo; n <= n_hi; ++n) wdrift[n - n_lo] = full_drift[n];
    }
    std::vector<Vec> image = st.flow;
    {
      std::vector<Vec> wrho = solve_fp_density(wdrift, rho_lo, wgrid);
      for (int n = n_lo; n <= n_hi; ++n) image[n] = wrho[n - n_lo];
    }

    double defect = flow_gap(grid, image, st.flow, n_lo, n_hi);
    if (!st.residuals.empty() && defect > st.residuals.back()) {
      if (++rising >= 2) {
        lambda *= 0.5;
        rising = 0;
      }
    } else {
      rising = 0;
    }
    st.residuals.push_back(defect);
    st.u = std::move(full_u);
    if (defect <= opt.tol) return st;  // flow is a fixed point within tol
    if (it == opt.max_iter) break;

    double blend = it == 0 ? 1.0 : lambda;
    for (int n = n_lo; n <= n_hi; ++n)
      st.flow[n] = (1.0 - blend) * st.flow[n] + blend * image[n];
    st.iterations = it + 1;
    check_row_invariants(grid, st.flow, n_lo, n_hi);
  }
  throw MfgConvergenceError(
      "mfg: fixed point did not reach tol within max_iter (last residual " +
          std::to_string(st.residuals.back()) + ")",
      st.residuals);
}

}  // namespace

MfgSolution solve_mfg(const HamiltonianModel& h, const TerminalCostModel& g,
                      const DiscreteMeasure& mu0, const Grid1D& grid,
                      const MfgOptions& opt) {
  bool projected = false;
  Vec rho0 = deposit_measure(grid, mu0, &projected);

  std::vector<Vec> flow(grid.nt + 1, rho0);
  if (opt.initial_flow) {
    if (static_cast<int>(opt.initial_flow->size()) != grid.nt + 1)
      throw std::invalid_argument("solve_mfg: initial flow shape mismatch");
    flow = *opt.initial_flow;
  }

  MfgSolution sol{grid, {}, {}, {}, 0, {}, projected};

  if (opt.partition_len <= 0.0) {
    PicardState st = picard_window(h, g, grid, rho0, 0, grid.nt, true, Vec(),
                                   std::move(flow), opt);
    // One consistency sweep so u corresponds to the converged flow and the
    // terminal row equals G sampled on the final density exactly.
    Vec terminal = terminal_row(g, grid, st.flow[grid.nt]);
    sol.u = solve_hjb(h, terminal, st.flow, grid, opt.scheme);
    sol.rho = std::move(st.flow);
    sol.residual_history = std::move(st.residuals);
    sol.iterations = st.iterations;
    return sol;
  }

  // Windowed construction: windows of length <= partition_len processed
  // backward, each feeding its value slice to the window on its left;
  // an outer loop renews the global flow until self-consistency.
  int steps_per_window =
      std::max(4, static_cast<int>(std::floor(opt.partition_len / grid.dt())));
  std::vector<int> starts;
  for (int n = 0; n < grid.nt; n += steps_per_window) starts.push_back(n);
  while (starts.size() > 1 && grid.nt - starts.back() < 4) starts.pop_back();
  for (int s : starts) sol.partition.push_back(grid.time(s));

  std::vector<Vec> u(grid.nt + 1);
  std::vector<double> outer_residuals;
  for (int sweep = 0; sweep < opt.max_iter; ++sweep) {
    // Backward pass of local solves.
    for (int w = static_cast<int>(starts.size()) - 1; w >= 0; --w) {
      int n_lo = starts[w];
      int n_hi = w + 1 < static_cast<int>(starts.size()) ? starts[w + 1]
                                                         : grid.nt;
      bool last = n_hi == grid.nt;
      std::vector<Vec> guess = flow;
      PicardState st = picard_window(h, g, grid, flow[n_lo], n_lo, n_hi, last,
                                     last ? Vec() : u[n_hi], std::move(guess),
                                     opt);
      for (int n = n_lo; n <= n_hi; ++n) u[n] = st.u[n];
      sol.iterations += st.iterations;
    }
    // Forward reconstruction of the global flow under the stitched value.
    std::vector<Vec> drift = drift_rows(h, grid, u, flow, 0, grid.nt);
    std::vector<Vec> fresh = solve_fp_density(drift, rho0, grid);
    double gap = flow_gap(grid, fresh, flow, 0, grid.nt);
    outer_residuals.push_back(gap);
    if (gap <= opt.tol) {
      Vec terminal = terminal_row(g, grid, flow[grid.nt]);
      sol.u = solve_hjb(h, terminal, flow, grid, opt.scheme);
      sol.rho = std::move(flow);
      sol.residual_history = std::move(outer_residuals);
      return sol;
    }
    double blend = sweep == 0 ? 1.0 : opt.damping;
    for (int n = 0; n <= grid.nt; ++n)
      flow[n] = (1.0 - blend) * flow[n] + blend * fresh[n];
    check_row_invariants(grid, flow, 0, grid.nt);
  }
  throw MfgConvergenceError(
      "mfg: partitioned solve did not reach tol within max_iter",
      outer_residuals);
}

void dump_solution_csv(const MfgSolution& sol, const std::string& path,
                       int stride_t, int stride_x) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("dump_solution_csv: cannot open " + path);
  out << "t,x,u,rho\n";
  char line[160];
  for (int n = 0; n <= sol.grid.nt; n += stride_t)
    for (int j = 0; j < sol.grid.nx; j += stride_x) {
      std::snprintf(line, sizeof(line), "%.12g,%.12g,%.17g,%.17g\n",
                    sol.grid.time(n), sol.grid.node(j), sol.u[n](j),
                    sol.rho[n](j));
      out << line;
    }
}

}  // namespace mfg
