#pragma once

#include "mfg/master.hpp"
#include "mfg/monotonicity.hpp"

namespace mfg {

struct PropagationConfig {
  int n_particles = 2000;
  int n_checkpoints = 5;       // includes both endpoints
  int derivative_atoms = 20;   // measure compression for the dmu V sweeps
  int substeps_per_interval = 20;
  std::uint64_t seed = 0;
  int threads = 1;
};

// Everything frozen at one checkpoint: the compressed measure, the node rows
// of dmu V per compressed atom (with their solver grid), and the value slice
// used for dx u / dxx u probes.
struct CheckpointContext {
  double time;
  Vec sites;  // sorted compressed atom positions
  std::vector<MasterSurface::DmuSurface> dmu;  // one surface per site
  Grid1D value_grid;
  Vec u_row;  // value slice at the checkpoint time on value_grid

  // dxmu V(time, x, mu, x_tilde) with piecewise-linear interpolation across
  // the compressed sites in the x_tilde slot.
  double mixed_derivative(double x, double x_tilde) const;
  double dx_u(double x) const { return interp_derivative(value_grid, u_row, x); }
  double dxx_u(double x) const {
    return interp_second_derivative(value_grid, u_row, x);
  }
};

struct FlowTrajectory {
  std::vector<double> times;  // checkpoint times, strictly increasing
  std::vector<Vec> X;         // particle positions per checkpoint
  std::vector<Vec> dX;        // tangent particles, aligned with X
  std::vector<Vec> N_diag;    // diagnostic: the N combination per checkpoint
  std::vector<CheckpointContext> contexts;
  std::uint64_t seed = 0;
};

// Euler-Maruyama for the state (drift -dpH(x, rho_t, dx u), unit noise) and
// exact-expectation Euler for the linear tangent system, with the mixed
// master derivative refreshed at checkpoints and held in between.
// `base` must be solved on the full horizon from the particles' law.
FlowTrajectory simulate_flow(const MasterSurface& master,
                             const MfgSolution& base, const Vec& particles,
                             const Vec& tangents, const PropagationConfig& cfg);

struct DissipationProfile {
  std::vector<double> times;
  std::vector<double> values;       // I(t) + Ibar(t) per checkpoint
  std::vector<double> rate_values;  // displacement form of H (filled by
                                    // rate_check; empty otherwise)
  double mono_tol = 0.0;
  double terminal_tol = 0.0;
  bool nonincreasing = false;
  bool terminal_ok = false;
  bool pass() const { return nonincreasing && terminal_ok; }
};

// I + Ibar along the trajectory from the frozen checkpoint data. Verdict:
// nonincreasing within mono_tol_rel * |initial value| and terminal value
// >= -terminal_tol.
DissipationProfile dissipation_profile(const FlowTrajectory& traj,
                                       double mono_tol_rel = 1e-3,
                                       double terminal_tol = 1e-6);

struct RateReport {
  std::vector<double> interval_start;
  std::vector<double> decrements;   // P(t_k) - P(t_k+1)
  std::vector<double> bounds;       // -trapezoid of the displacement form
  double tol = 0.0;
  bool pass = false;
};

// Per-interval check that the profile dissipates at least as fast as the
// time-integrated displacement form of H along the flow, with feedback
// phi = dx u(t, .). Fills profile.rate_values as a side effect.
RateReport rate_check(const FlowTrajectory& traj, const HamiltonianModel& h,
                      DissipationProfile& profile, double tol_rel = 1e-3);

void write_profile_csv(const DissipationProfile& profile,
                       const RateReport* rate, const std::string& path);

// n-bin quantile compression of a particle cloud (equal-mass bins, bin mean
// positions as atoms).
DiscreteMeasure compress_particles(const Vec& particles, int bins);

}  // namespace mfg
