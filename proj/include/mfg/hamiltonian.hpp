#pragma once

#include <functional>
#include <map>
#include <string>

#include "mfg/measures.hpp"

namespace mfg {

// Matrix conventions: dxp(i,j) = d2 H / dx_i dp_j, dxmu(i,j) = dx_i dmu_j,
// dpmu(i,j) = dp_i dmu_j. Mixed-derivative matrices act on the tilde/second
// argument from the right: (dxmu * eta_tilde) dotted with eta.

// Hamiltonian with analytic first/second derivatives in (x, p) and Lions
// derivatives in mu. Immutable after construction; evaluators are pure.
struct HamiltonianModel {
  int dim = 1;
  double convexity = 0.0;  // c0: dpp >= convexity * I everywhere
  double x_growth = 0.0;   // C0: |dx| <= x_growth * (1 + |p|)
  std::function<double(double)> lipschitz_envelope;  // L^H(R)

  std::function<double(const Vec&, const DiscreteMeasure&, const Vec&)> value;
  std::function<Vec(const Vec&, const DiscreteMeasure&, const Vec&)> dx, dp;
  std::function<Mat(const Vec&, const DiscreteMeasure&, const Vec&)> dxx, dxp,
      dpp;
  std::function<Vec(const Vec&, const DiscreteMeasure&, const Vec&, const Vec&)>
      dmu;  // (x, mu, x_tilde, p)
  std::function<Mat(const Vec&, const DiscreteMeasure&, const Vec&, const Vec&)>
      dxmu, dpmu;

  std::string name;
};

// Terminal cost / generic surface U(x, mu) with the derivatives the
// monotonicity forms consume.
struct TerminalCostModel {
  int dim = 1;
  double grad_bound = 0.0;     // L0: |dx| cap
  double mu_grad_bound = 0.0;  // L1: |dmu| cap (W1 Lipschitz constant)
  double w2_lipschitz = 0.0;   // L2 <= L1

  std::function<double(const Vec&, const DiscreteMeasure&)> value;
  std::function<Vec(const Vec&, const DiscreteMeasure&)> dx;
  std::function<Mat(const Vec&, const DiscreteMeasure&)> dxx;
  std::function<Vec(const Vec&, const DiscreteMeasure&, const Vec&)> dmu;
  std::function<Mat(const Vec&, const DiscreteMeasure&, const Vec&)> dxmu;

  std::string name;
};

struct LagrangianModel {
  int dim = 1;
  std::function<double(const Vec&, const DiscreteMeasure&, const Vec&)> value;
  std::function<Vec(const Vec&, const DiscreteMeasure&, const Vec&)> dx, da;
  std::function<Mat(const Vec&, const DiscreteMeasure&, const Vec&)> dxx, dxa,
      daa;
  std::function<Vec(const Vec&, const DiscreteMeasure&, const Vec&, const Vec&)>
      dmu;
  std::function<Mat(const Vec&, const DiscreteMeasure&, const Vec&, const Vec&)>
      dxmu, damu;
  std::string name;
};

// --- Legendre transform -----------------------------------------------------

class NewtonFailure : public std::runtime_error {
 public:
  NewtonFailure(const std::string& what, Vec last)
      : std::runtime_error(what), last_iterate(std::move(last)) {}
  Vec last_iterate;
};

// Maximizer of p -> -a.p - H(x,mu,p); damped Newton, |dpH + a| <= 1e-10.
Vec legendre_argmax(const HamiltonianModel& h, const Vec& x,
                    const DiscreteMeasure& mu, const Vec& a,
                    double grad_tol = 1e-10, int max_iter = 100);

// L(x,mu,a) = sup_p [ -a.p - H(x,mu,p) ].
double legendre_lagrangian(const HamiltonianModel& h, const Vec& x,
                           const DiscreteMeasure& mu, const Vec& a);

// Minimizer of p -> H(x,mu,p) (used by the monotone HJB flux).
Vec hamiltonian_argmin(const HamiltonianModel& h, const Vec& x,
                       const DiscreteMeasure& mu);

// Lagrangian dual to h: value through the sup, first derivatives through the
// envelope theorem, second derivatives by central differences of the first.
// Independent of the closed-form Lagrangians, so duality identities checked
// against it are real checks.
LagrangianModel dual_lagrangian_model(const HamiltonianModel& h,
                                      double fd_step = 1e-5);

// Max relative error per duality identity between a Hamiltonian and a
// Lagrangian at one probe point (a* = -dpH(x,mu,p), x_tilde for the
// mu-identities).
struct LegendreIdentityErrors {
  double first_order_x;   // dxH = -dxL(a*)
  double first_order_mu;  // dmuH = -dmuL(a*)
  double curvature;       // dppH = daaL(a*)^-1
  double mixed_xp;        // dxpH = dxaL daaL^-1
  double mixed_xx;        // dxxH = -dxxL + dxaL daaL^-1 daxL
  double mixed_xmu;       // dxmuH = -dxmuL + dxaL daaL^-1 damuL
  double mixed_pmu;       // dpmuH = daaL^-1 damuL
  double max() const;
};
LegendreIdentityErrors legendre_identity_errors(const HamiltonianModel& h,
                                                const LagrangianModel& l,
                                                const Vec& x,
                                                const DiscreteMeasure& mu,
                                                const Vec& x_tilde,
                                                const Vec& p);

// --- Lions derivative by atom perturbation ----------------------------------

// Central difference [U(mu with atom k shifted by +eps e_j) - U(-eps e_j)]
// / (2 eps w_k) per coordinate j, Richardson-extrapolated with eps and eps/2.
// The 1/w_k scaling is what makes this the Wasserstein gradient at atom k.
Vec fd_lions_derivative(const std::function<double(const DiscreteMeasure&)>& U,
                        const DiscreteMeasure& mu, int k, double eps,
                        bool richardson = true);

// --- constructed displacement-monotone family --------------------------------

// Smooth convex well: C|x|^2 inside |x| <= R0, C^2 blend on [R0, R0+1],
// linear growth beyond.
struct ConvexWell {
  double strength = 1.0;  // C
  double radius = 1.0;    // R0
  double value(const Vec& x) const;
  Vec grad(const Vec& x) const;
  Mat hess(const Vec& x) const;
  double radial(double r) const;
  double radial_d(double r) const;
  double radial_dd(double r) const;
};

// H = H0 + C0|p|^2 - psi_{C0}(x) for a compactly supported H0. Requires
// 2 C0 > 3 * deriv_bound and pp_lower + 2 C0 >= 1, where deriv_bound caps
// |dxmu H0|, |dxx H0|, |dpmu H0| and pp_lower is a lower bound on the
// eigenvalues of dpp H0. Throws std::invalid_argument reporting the minimal
// admissible C0 otherwise.
HamiltonianModel build_example_hamiltonian(const HamiltonianModel& h0,
                                           double R0, double C0,
                                           double deriv_bound,
                                           double pp_lower);

// --- shipped models ----------------------------------------------------------

// H(x,mu,p) = |p|^2/2 - (q/2)|x|^2 - c x.m(mu), d = 1.
HamiltonianModel lq_hamiltonian(double q, double c);
// Closed-form Lagrangian of the LQ Hamiltonian.
LagrangianModel lq_lagrangian(double q, double c);
// G(x,mu) = (g/2)|x|^2.
TerminalCostModel quadratic_terminal(double g, int dim = 1);
// F(x,mu) = (q/2)|x|^2 + c x.m(mu), d = 1 (the LQ coupling as a surface).
TerminalCostModel lq_coupling_surface(double q, double c);
// U(x,mu) = x.m(mu), d = 1.
TerminalCostModel mean_product_surface();
// Smooth non-quadratic couplings (third derivatives alive), d = 1:
// sin(x) m(mu), x . int tanh dmu, cos(x) . int sin dmu.
TerminalCostModel sine_mean_surface();
TerminalCostModel tanh_stat_surface();
TerminalCostModel cos_sin_surface();
// U(x,mu) = -|x|^2/2 + M2^2(mu) (Lasry-Lions monotone, not displacement).
TerminalCostModel concave_shift_surface(int dim = 1);
// base + C|x|^2.
TerminalCostModel shifted_surface(const TerminalCostModel& base, double C);
// H = |p|^2/2 - F(x,mu).
HamiltonianModel separable_hamiltonian(const TerminalCostModel& coupling);

struct ConstructedParams {
  int dim = 1;
  double R0 = 1.0;
  double C0 = 1.0;
  double alpha = 0.05;  // coupling amplitude of H0
  double kappa = 0.5;   // x-p phase coupling inside H0
};
// Compactly supported non-separable H0 (bump(x) sin(sum p + kappa sum x)
// times a bump statistic of mu) pushed through build_example_hamiltonian.
HamiltonianModel constructed_hamiltonian(const ConstructedParams& params);
// The H0 ingredient alone, plus its certified bounds.
struct ConstructedCore {
  HamiltonianModel h0;
  double deriv_bound;
  double pp_lower;
};
ConstructedCore constructed_core(const ConstructedParams& params);
double constructed_min_admissible_c0(const ConstructedParams& params);

// name -> model for the CLI registry: "lq" (q, c), "constructed"
// (dim, R0, C0, alpha, kappa), "separable" (q, c).
HamiltonianModel make_hamiltonian(const std::string& name,
                                  const std::map<std::string, double>& params);
TerminalCostModel make_terminal(const std::string& name,
                                const std::map<std::string, double>& params);

// --- model validation ---------------------------------------------------------

struct ConsistencyReport {
  double max_rel_error = 0.0;     // worst FD mismatch across derivatives
  double min_pp_eigenvalue = 0.0; // over sampled points
  double max_growth_ratio = 0.0;  // |dx| / (x_growth (1+|p|))
  bool passed(double tol = 1e-5) const;
};

// FD-checks every supplied derivative of h at random (x, p) probes against
// the supplied clouds.
ConsistencyReport check_hamiltonian_consistency(
    const HamiltonianModel& h, const std::vector<DiscreteMeasure>& clouds,
    int probes_per_cloud, std::uint64_t seed);
ConsistencyReport check_terminal_consistency(
    const TerminalCostModel& g, const std::vector<DiscreteMeasure>& clouds,
    int probes_per_cloud, std::uint64_t seed);

}  // namespace mfg
