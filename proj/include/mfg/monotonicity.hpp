#pragma once

#include <optional>

#include "mfg/hamiltonian.hpp"
#include "mfg/rng.hpp"

namespace mfg {

// Bounded C^1 feedback built from clipped tanh ridge features:
// phi(x) = sum_i a_i tanh(b_i . x + c_i), |phi| <= bound_value,
// |dx phi| <= bound_slope by construction.
struct FeedbackFunction {
  Mat a;  // n_features x dim
  Mat b;  // n_features x dim
  Vec c;  // n_features
  double bound_value = 10.0;
  double bound_slope = 10.0;

  Vec eval(const Vec& x) const;
  Mat jacobian(const Vec& x) const;  // (i,j) = d phi_j / d x_i
  std::function<Vec(const Vec&)> fn() const;

  static FeedbackFunction random(int dim, Rng& rng, int n_features = 8,
                                 double bound_value = 10.0,
                                 double bound_slope = 10.0);
  static FeedbackFunction zero(int dim);
};

using FeedbackFn = std::function<Vec(const Vec&)>;

// Random cloud used by certification: 2..32 atoms from a 1-3 component
// Gaussian mixture, uniform weights.
DiscreteMeasure sample_mixture_cloud(int dim, Rng& rng, int min_atoms = 2,
                                     int max_atoms = 32);

// --- bilinear forms -----------------------------------------------------------

// sum_ij w_i w_j <dxmu U(x_i,mu,x_j) eta_j, eta_i>
//   + sum_i w_i <dxx U(x_i,mu) eta_i, eta_i>.
// Nonnegative for every sample iff U is displacement monotone.
double displacement_form_surface(const TerminalCostModel& surface,
                                 const TangentSample& s);

// sum_ij w_i w_j <dxmu U(x_i,mu,x_j) eta_j, eta_i>; nonnegative for every
// sample iff U is Lasry-Lions monotone.
double lasry_lions_form(const TerminalCostModel& surface,
                        const TangentSample& s);

// Displacement form of a Hamiltonian at feedback phi:
//   sum_ij w_i w_j <dxmu H(x_i,mu,x_j,phi(x_i)) eta_j, eta_i>
// + sum_i w_i <dxx H(x_i,mu,phi(x_i)) eta_i, eta_i>
// + 1/4 sum_i w_i | dpp H(x_i)^{-1/2} sum_j w_j dpmu H(x_i,mu,x_j,phi(x_i)) eta_j |^2.
// Nonpositive for every (sample, phi) iff H is displacement monotone.
// Throws std::runtime_error("convexity floor violated") if an eigenvalue of
// dpp H drops below convexity/2 at an atom.
double displacement_form_hamiltonian(const HamiltonianModel& h,
                                     const TangentSample& s,
                                     const FeedbackFn& phi);

// Lagrangian-side criterion: returns (lhs, rhs) with
// lhs = E[<dxmu L eta~, eta> + <dxx L eta, eta>],
// rhs = E[ |daa L^{-1/2} (1/2 E[damu L eta~] + dax L eta)|^2 ],
// all at a-arguments psi_values (row i = psi(x_i)). H is displacement
// monotone iff lhs >= rhs for all inputs.
std::pair<double, double> lagrangian_form(const LagrangianModel& l,
                                          const TangentSample& s,
                                          const Mat& psi_values);

// --- certification -------------------------------------------------------------

struct MonotonicityWitness {
  DiscreteMeasure cloud;
  Mat tangents;
  std::optional<FeedbackFunction> feedback;  // present for Hamiltonian forms
  double form_value = 0.0;                   // raw (unnormalized) form value
};

struct MonotonicityReport {
  std::string form_name;
  int trials = 0;
  // Margin normalized by (1 + sum w|eta|^2); positive margins are fine.
  // For ">= 0" forms margin = value, for "<= 0" forms margin = -value.
  double min_value = 0.0;
  double tol = 1e-8;
  bool pass = false;
  std::optional<MonotonicityWitness> witness;
  // Random + adversarial sampling can refute monotonicity or accumulate
  // evidence for it; a pass is not a proof. Recorded in every report.
  std::string disclaimer =
      "sampling evidence only: a pass does not prove monotonicity";
};

struct CertifyOptions {
  int trials = 500;
  std::uint64_t seed = 0;
  double tol = 1e-8;
  int threads = 1;
  int min_atoms = 2;
  int max_atoms = 32;
};

MonotonicityReport certify(const HamiltonianModel& h, const CertifyOptions& opt);
MonotonicityReport certify(const TerminalCostModel& surface,
                           const CertifyOptions& opt);

struct SearchOptions {
  int steps = 200;
  std::uint64_t seed = 0;
  double tol = 1e-8;
  int atoms = 6;
  int restarts = 4;
  int threads = 1;
};

// Projected gradient ascent on (atom positions, normalized tangents, feedback
// parameters) maximizing the Hamiltonian displacement form; reports the best
// (= most violating) value found.
MonotonicityReport search_violation(const HamiltonianModel& h,
                                    const SearchOptions& opt);

}  // namespace mfg
