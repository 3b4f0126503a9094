#include "mfg/hamiltonian.hpp"

#include <cmath>

#include "mfg/rng.hpp"

namespace mfg {

namespace {

Vec basis(int dim, int j) {
  Vec e = Vec::Zero(dim);
  e(j) = 1.0;
  return e;
}

double rel_err(const Mat& got, const Mat& want, double scale = 1.0) {
  return (got - want).norm() / (scale + want.norm());
}

double rel_err(const Vec& got, const Vec& want, double scale = 1.0) {
  return (got - want).norm() / (scale + want.norm());
}

}  // namespace

// --- Legendre ----------------------------------------------------------------

Vec legendre_argmax(const HamiltonianModel& h, const Vec& x,
                    const DiscreteMeasure& mu, const Vec& a, double grad_tol,
                    int max_iter) {
  Vec p = Vec::Zero(h.dim);
  Vec g = h.dp(x, mu, p) + a;
  for (int iter = 0; iter < max_iter; ++iter) {
    if (g.norm() <= grad_tol) return p;
    Mat hess = h.dpp(x, mu, p);
    Vec step = -hess.ldlt().solve(g);
    double alpha = 1.0;
    double g0 = g.norm();
    for (int bt = 0; bt < 40; ++bt) {
      Vec cand = p + alpha * step;
      Vec gc = h.dp(x, mu, cand) + a;
      if (gc.norm() <= (1.0 - 0.25 * alpha) * g0) {
        p = cand;
        g = gc;
        break;
      }
      alpha *= 0.5;
      if (bt == 39) {
        p = cand;
        g = gc;
      }
    }
  }
  if (g.norm() <= grad_tol) return p;
  throw NewtonFailure(
      "legendre transform: Newton did not converge (|grad| = " +
          std::to_string(g.norm()) + ")",
      p);
}

double legendre_lagrangian(const HamiltonianModel& h, const Vec& x,
                           const DiscreteMeasure& mu, const Vec& a) {
  Vec p = legendre_argmax(h, x, mu, a);
  return -a.dot(p) - h.value(x, mu, p);
}

Vec hamiltonian_argmin(const HamiltonianModel& h, const Vec& x,
                       const DiscreteMeasure& mu) {
  return legendre_argmax(h, x, mu, Vec::Zero(h.dim));
}

LagrangianModel dual_lagrangian_model(const HamiltonianModel& h,
                                      double fd_step) {
  LagrangianModel l;
  l.dim = h.dim;
  l.name = h.name + "-dual";
  // shared_ptr so the closures stay valid after the local h goes away
  auto hp = std::make_shared<HamiltonianModel>(h);

  l.value = [hp](const Vec& x, const DiscreteMeasure& mu, const Vec& a) {
    return legendre_lagrangian(*hp, x, mu, a);
  };
  // Envelope theorem at the maximizer p* = argmax(-a.p - H).
  l.da = [hp](const Vec& x, const DiscreteMeasure& mu, const Vec& a) {
    return Vec(-legendre_argmax(*hp, x, mu, a));
  };
  l.dx = [hp](const Vec& x, const DiscreteMeasure& mu, const Vec& a) {
    Vec p = legendre_argmax(*hp, x, mu, a);
    return Vec(-hp->dx(x, mu, p));
  };
  l.dmu = [hp](const Vec& x, const DiscreteMeasure& mu, const Vec& xt,
               const Vec& a) {
    Vec p = legendre_argmax(*hp, x, mu, a);
    return Vec(-hp->dmu(x, mu, xt, p));
  };

  const double step = fd_step;
  const int dim = h.dim;
  l.daa = [l, dim, step](const Vec& x, const DiscreteMeasure& mu, const Vec& a) {
    Mat out(dim, dim);
    for (int j = 0; j < dim; ++j) {
      Vec e = basis(dim, j) * step;
      out.col(j) = (l.da(x, mu, a + e) - l.da(x, mu, a - e)) / (2.0 * step);
    }
    return Mat(0.5 * (out + out.transpose()));
  };
  l.dxa = [l, dim, step](const Vec& x, const DiscreteMeasure& mu, const Vec& a) {
    Mat out(dim, dim);
    for (int i = 0; i < dim; ++i) {
      Vec e = basis(dim, i) * step;
      out.row(i) = ((l.da(x + e, mu, a) - l.da(x - e, mu, a)) / (2.0 * step))
                       .transpose();
    }
    return out;
  };
  l.dxx = [l, dim, step](const Vec& x, const DiscreteMeasure& mu, const Vec& a) {
    Mat out(dim, dim);
    for (int j = 0; j < dim; ++j) {
      Vec e = basis(dim, j) * step;
      out.col(j) = (l.dx(x + e, mu, a) - l.dx(x - e, mu, a)) / (2.0 * step);
    }
    return Mat(0.5 * (out + out.transpose()));
  };
  l.dxmu = [l, dim, step](const Vec& x, const DiscreteMeasure& mu, const Vec& xt,
                          const Vec& a) {
    Mat out(dim, dim);
    for (int i = 0; i < dim; ++i) {
      Vec e = basis(dim, i) * step;
      out.row(i) =
          ((l.dmu(x + e, mu, xt, a) - l.dmu(x - e, mu, xt, a)) / (2.0 * step))
              .transpose();
    }
    return out;
  };
  l.damu = [l, dim, step](const Vec& x, const DiscreteMeasure& mu, const Vec& xt,
                          const Vec& a) {
    Mat out(dim, dim);
    for (int i = 0; i < dim; ++i) {
      Vec e = basis(dim, i) * step;
      out.row(i) =
          ((l.dmu(x, mu, xt, a + e) - l.dmu(x, mu, xt, a - e)) / (2.0 * step))
              .transpose();
    }
    return out;
  };
  return l;
}

double LegendreIdentityErrors::max() const {
  double m = first_order_x;
  for (double v : {first_order_mu, curvature, mixed_xp, mixed_xx, mixed_xmu,
                   mixed_pmu})
    m = std::max(m, v);
  return m;
}

LegendreIdentityErrors legendre_identity_errors(const HamiltonianModel& h,
                                                const LagrangianModel& l,
                                                const Vec& x,
                                                const DiscreteMeasure& mu,
                                                const Vec& x_tilde,
                                                const Vec& p) {
  Vec a_star = -h.dp(x, mu, p);
  Mat daa = l.daa(x, mu, a_star);
  Mat daa_inv = daa.inverse();
  Mat dxa = l.dxa(x, mu, a_star);
  Mat damu = l.damu(x, mu, x_tilde, a_star);

  LegendreIdentityErrors e;
  e.first_order_x = rel_err(h.dx(x, mu, p), Vec(-l.dx(x, mu, a_star)));
  e.first_order_mu =
      rel_err(h.dmu(x, mu, x_tilde, p), Vec(-l.dmu(x, mu, x_tilde, a_star)));
  e.curvature = rel_err(h.dpp(x, mu, p), Mat(daa_inv));
  e.mixed_xp = rel_err(h.dxp(x, mu, p), Mat(dxa * daa_inv));
  e.mixed_xx = rel_err(
      h.dxx(x, mu, p),
      Mat(-l.dxx(x, mu, a_star) + dxa * daa_inv * dxa.transpose()));
  e.mixed_xmu = rel_err(h.dxmu(x, mu, x_tilde, p),
                        Mat(-l.dxmu(x, mu, x_tilde, a_star) +
                            dxa * daa_inv * damu));
  e.mixed_pmu = rel_err(h.dpmu(x, mu, x_tilde, p), Mat(daa_inv * damu));
  return e;
}

// --- Lions derivative ---------------------------------------------------------

Vec fd_lions_derivative(const std::function<double(const DiscreteMeasure&)>& U,
                        const DiscreteMeasure& mu, int k, double eps,
                        bool richardson) {
  if (k < 0 || k >= mu.size())
    throw std::out_of_range("fd_lions_derivative: atom index out of range");
  if (eps <= 0.0) throw std::invalid_argument("fd_lions_derivative: eps <= 0");
  double wk = mu.weight(k);
  if (wk < 1e-12)
    throw std::invalid_argument(
        "fd_lions_derivative: atom weight below 1e-12, 1/w scaling ill-posed");
  auto central = [&](double step) {
    Vec d(mu.dim());
    for (int j = 0; j < mu.dim(); ++j) {
      Vec e = basis(mu.dim(), j) * step;
      double up = U(perturb_atom(mu, k, e));
      double dn = U(perturb_atom(mu, k, Vec(-e)));
      d(j) = (up - dn) / (2.0 * step * wk);
    }
    return d;
  };
  Vec d1 = central(eps);
  if (!richardson) return d1;
  Vec d2 = central(eps / 2.0);
  return (4.0 * d2 - d1) / 3.0;
}

// --- convex well ---------------------------------------------------------------

double ConvexWell::radial(double r) const {
  const double C = strength, R0 = radius;
  if (r <= R0) return C * r * r;
  if (r >= R0 + 1.0) {
    double t = 1.0;
    double v1 = C * R0 * R0 + 2.0 * C * R0 * t +
                2.0 * C * (t * t / 2.0 - std::pow(t, 4) / 4.0 + std::pow(t, 5) / 10.0);
    return v1 + (2.0 * C * R0 + C) * (r - R0 - 1.0);
  }
  double t = r - R0;
  return C * R0 * R0 + 2.0 * C * R0 * t +
         2.0 * C * (t * t / 2.0 - std::pow(t, 4) / 4.0 + std::pow(t, 5) / 10.0);
}

double ConvexWell::radial_d(double r) const {
  const double C = strength, R0 = radius;
  if (r <= R0) return 2.0 * C * r;
  if (r >= R0 + 1.0) return 2.0 * C * R0 + C;
  double t = r - R0;
  return 2.0 * C * R0 + 2.0 * C * (t - std::pow(t, 3) + std::pow(t, 4) / 2.0);
}

double ConvexWell::radial_dd(double r) const {
  const double C = strength, R0 = radius;
  if (r <= R0) return 2.0 * C;
  if (r >= R0 + 1.0) return 0.0;
  double t = r - R0;
  return 2.0 * C * (1.0 - 3.0 * t * t + 2.0 * t * t * t);
}

double ConvexWell::value(const Vec& x) const { return radial(x.norm()); }

Vec ConvexWell::grad(const Vec& x) const {
  double r = x.norm();
  if (r <= radius) return Vec(2.0 * strength * x);
  return Vec((radial_d(r) / r) * x);
}

Mat ConvexWell::hess(const Vec& x) const {
  double r = x.norm();
  int d = static_cast<int>(x.size());
  if (r <= radius) return Mat(2.0 * strength * Mat::Identity(d, d));
  Vec u = x / r;
  return radial_dd(r) * u * u.transpose() +
         (radial_d(r) / r) * (Mat::Identity(d, d) - u * u.transpose());
}

// --- constructed family ---------------------------------------------------------

HamiltonianModel build_example_hamiltonian(const HamiltonianModel& h0,
                                           double R0, double C0,
                                           double deriv_bound,
                                           double pp_lower) {
  double min_c0 = std::max(1.5 * deriv_bound, (1.0 - pp_lower) / 2.0);
  if (!(2.0 * C0 > 3.0 * deriv_bound) || pp_lower + 2.0 * C0 < 1.0)
    throw std::invalid_argument(
        "constructed Hamiltonian: C0 = " + std::to_string(C0) +
        " too small, minimal admissible C0 = " + std::to_string(min_c0));

  auto base = std::make_shared<HamiltonianModel>(h0);
  auto well = std::make_shared<ConvexWell>(ConvexWell{C0, R0});
  const int dim = h0.dim;

  HamiltonianModel h;
  h.dim = dim;
  h.name = "constructed(" + h0.name + ")";
  h.convexity = pp_lower + 2.0 * C0;
  // |dx| <= |dx H0| + sup |psi'|; p-independent, so it fits the (1+|p|) form.
  h.x_growth = h0.x_growth + 2.0 * C0 * R0 + C0;
  double h0_lip_cap = deriv_bound;
  h.lipschitz_envelope = [h0_env = h0.lipschitz_envelope, C0, R0,
                          h0_lip_cap](double R) {
    double base_env = h0_env ? h0_env(R) : h0_lip_cap;
    return base_env + 2.0 * C0 * (R + 1.0) + 2.0 * C0 * R0 + C0 + 2.0 * C0;
  };

  h.value = [base, well, C0](const Vec& x, const DiscreteMeasure& mu,
                             const Vec& p) {
    return base->value(x, mu, p) + C0 * p.squaredNorm() - well->value(x);
  };
  h.dx = [base, well](const Vec& x, const DiscreteMeasure& mu, const Vec& p) {
    return Vec(base->dx(x, mu, p) - well->grad(x));
  };
  h.dp = [base, C0](const Vec& x, const DiscreteMeasure& mu, const Vec& p) {
    return Vec(base->dp(x, mu, p) + 2.0 * C0 * p);
  };
  h.dxx = [base, well](const Vec& x, const DiscreteMeasure& mu, const Vec& p) {
    return Mat(base->dxx(x, mu, p) - well->hess(x));
  };
  h.dxp = [base](const Vec& x, const DiscreteMeasure& mu, const Vec& p) {
    return base->dxp(x, mu, p);
  };
  h.dpp = [base, C0, dim](const Vec& x, const DiscreteMeasure& mu,
                          const Vec& p) {
    return Mat(base->dpp(x, mu, p) + 2.0 * C0 * Mat::Identity(dim, dim));
  };
  h.dmu = [base](const Vec& x, const DiscreteMeasure& mu, const Vec& xt,
                 const Vec& p) { return base->dmu(x, mu, xt, p); };
  h.dxmu = [base](const Vec& x, const DiscreteMeasure& mu, const Vec& xt,
                  const Vec& p) { return base->dxmu(x, mu, xt, p); };
  h.dpmu = [base](const Vec& x, const DiscreteMeasure& mu, const Vec& xt,
                  const Vec& p) { return base->dpmu(x, mu, xt, p); };
  return h;
}

namespace {

// Polynomial bump (1 - |x|^2/R0^2)^4 on |x| <= R0; C^3 across the support edge.
struct Bump {
  double R0;
  double value(const Vec& x) const {
    double s = 1.0 - x.squaredNorm() / (R0 * R0);
    return s <= 0.0 ? 0.0 : s * s * s * s;
  }
  Vec grad(const Vec& x) const {
    double s = 1.0 - x.squaredNorm() / (R0 * R0);
    if (s <= 0.0) return Vec::Zero(x.size());
    return Vec(-8.0 * s * s * s / (R0 * R0) * x);
  }
  Mat hess(const Vec& x) const {
    int d = static_cast<int>(x.size());
    double s = 1.0 - x.squaredNorm() / (R0 * R0);
    if (s <= 0.0) return Mat::Zero(d, d);
    return Mat(-8.0 * s * s * s / (R0 * R0) * Mat::Identity(d, d) +
               48.0 * s * s / std::pow(R0, 4) * x * x.transpose());
  }
};

}  // namespace

ConstructedCore constructed_core(const ConstructedParams& prm) {
  const int d = prm.dim;
  const double alpha = prm.alpha, kappa = prm.kappa, R0 = prm.R0;
  auto bump = std::make_shared<Bump>(Bump{R0});
  auto stat = std::make_shared<MeasureStatistic>();
  stat->f = [bump](const Vec& x) { return bump->value(x); };

  auto phase = [kappa](const Vec& x, const Vec& p) {
    return p.sum() + kappa * x.sum();
  };

  HamiltonianModel h0;
  h0.dim = d;
  h0.name = "bump-core";
  h0.convexity = -alpha * d;
  h0.x_growth = alpha * (8.0 / R0 + kappa * std::sqrt(double(d)));
  h0.lipschitz_envelope = [alpha, R0, kappa, d](double) {
    return alpha * (8.0 / (R0 * R0) + 8.0 / R0 + kappa * kappa * d + 2.0);
  };

  h0.value = [bump, stat, alpha, phase](const Vec& x, const DiscreteMeasure& mu,
                                        const Vec& p) {
    return alpha * bump->value(x) * std::sin(phase(x, p)) *
           evaluate_statistic(mu, *stat);
  };
  h0.dx = [bump, stat, alpha, kappa, phase, d](const Vec& x,
                                               const DiscreteMeasure& mu,
                                               const Vec& p) {
    double Q = evaluate_statistic(mu, *stat);
    double S = std::sin(phase(x, p)), C = std::cos(phase(x, p));
    return Vec(alpha * Q *
               (bump->grad(x) * S + bump->value(x) * kappa * C * Vec::Ones(d)));
  };
  h0.dp = [bump, stat, alpha, phase, d](const Vec& x, const DiscreteMeasure& mu,
                                        const Vec& p) {
    double Q = evaluate_statistic(mu, *stat);
    double C = std::cos(phase(x, p));
    return Vec(alpha * Q * bump->value(x) * C * Vec::Ones(d));
  };
  h0.dxx = [bump, stat, alpha, kappa, phase, d](const Vec& x,
                                                const DiscreteMeasure& mu,
                                                const Vec& p) {
    double Q = evaluate_statistic(mu, *stat);
    double S = std::sin(phase(x, p)), C = std::cos(phase(x, p));
    Vec ones = Vec::Ones(d);
    Vec g = bump->grad(x);
    return Mat(alpha * Q *
               (bump->hess(x) * S +
                kappa * C * (g * ones.transpose() + ones * g.transpose()) -
                bump->value(x) * kappa * kappa * S * ones * ones.transpose()));
  };
  h0.dxp = [bump, stat, alpha, kappa, phase, d](const Vec& x,
                                                const DiscreteMeasure& mu,
                                                const Vec& p) {
    double Q = evaluate_statistic(mu, *stat);
    double S = std::sin(phase(x, p)), C = std::cos(phase(x, p));
    Vec ones = Vec::Ones(d);
    Vec col = alpha * Q * (bump->grad(x) * C - bump->value(x) * kappa * S * ones);
    return Mat(col * ones.transpose());
  };
  h0.dpp = [bump, stat, alpha, phase, d](const Vec& x, const DiscreteMeasure& mu,
                                         const Vec& p) {
    double Q = evaluate_statistic(mu, *stat);
    double S = std::sin(phase(x, p));
    Vec ones = Vec::Ones(d);
    return Mat(-alpha * Q * bump->value(x) * S * ones * ones.transpose());
  };
  h0.dmu = [bump, alpha, phase](const Vec& x, const DiscreteMeasure&,
                                const Vec& xt, const Vec& p) {
    return Vec(alpha * bump->value(x) * std::sin(phase(x, p)) * bump->grad(xt));
  };
  h0.dxmu = [bump, alpha, kappa, phase, d](const Vec& x, const DiscreteMeasure&,
                                           const Vec& xt, const Vec& p) {
    double S = std::sin(phase(x, p)), C = std::cos(phase(x, p));
    Vec lhs = alpha * (bump->grad(x) * S +
                       bump->value(x) * kappa * C * Vec::Ones(d));
    return Mat(lhs * bump->grad(xt).transpose());
  };
  h0.dpmu = [bump, alpha, phase, d](const Vec& x, const DiscreteMeasure&,
                                    const Vec& xt, const Vec& p) {
    double C = std::cos(phase(x, p));
    Vec lhs = alpha * bump->value(x) * C * Vec::Ones(d);
    return Mat(lhs * bump->grad(xt).transpose());
  };

  // Tight closed-form sups of the bump derivatives: |q| <= 1,
  // |grad q| <= 8 r (1-r^2)^3 / R0 maximized at r = 1/sqrt(7),
  // |hess q| <= 8/R0^2 (attained at the origin).
  double g_max = 8.0 / std::sqrt(7.0) * std::pow(6.0 / 7.0, 3) / R0;
  double hess_max = 8.0 / (R0 * R0);
  double rd = std::sqrt(double(d));
  double dxx_bound = alpha * (hess_max + 2.0 * kappa * rd * g_max + kappa * kappa * d);
  double dxmu_bound = alpha * (g_max + kappa * rd) * g_max;
  double dpmu_bound = alpha * rd * g_max;

  ConstructedCore core;
  core.h0 = std::move(h0);
  core.deriv_bound = std::max({dxx_bound, dxmu_bound, dpmu_bound});
  core.pp_lower = -alpha * d;
  return core;
}

double constructed_min_admissible_c0(const ConstructedParams& prm) {
  ConstructedCore core = constructed_core(prm);
  return std::max(1.5 * core.deriv_bound, (1.0 - core.pp_lower) / 2.0);
}

HamiltonianModel constructed_hamiltonian(const ConstructedParams& prm) {
  ConstructedCore core = constructed_core(prm);
  HamiltonianModel h = build_example_hamiltonian(core.h0, prm.R0, prm.C0,
                                                 core.deriv_bound, core.pp_lower);
  h.name = "constructed";
  return h;
}

// --- shipped models -------------------------------------------------------------

namespace {

std::shared_ptr<MeasureStatistic> mean1d_statistic() {
  auto stat = std::make_shared<MeasureStatistic>();
  stat->f = [](const Vec& x) { return x(0); };
  return stat;
}

}  // namespace

HamiltonianModel lq_hamiltonian(double q, double c) {
  auto stat = mean1d_statistic();
  HamiltonianModel h;
  h.dim = 1;
  h.name = "lq";
  h.convexity = 1.0;
  h.x_growth = 1e3;  // nominal desk-scale cap; the LQ benchmark is not
                     // globally Lipschitz in x
  h.lipschitz_envelope = [q, c](double R) {
    return std::abs(q) + std::abs(c) + R + 1.0;
  };
  h.value = [stat, q, c](const Vec& x, const DiscreteMeasure& mu, const Vec& p) {
    double m = evaluate_statistic(mu, *stat);
    return 0.5 * p.squaredNorm() - 0.5 * q * x.squaredNorm() - c * x(0) * m;
  };
  h.dx = [stat, q, c](const Vec& x, const DiscreteMeasure& mu, const Vec&) {
    double m = evaluate_statistic(mu, *stat);
    Vec out(1);
    out << -q * x(0) - c * m;
    return out;
  };
  h.dp = [](const Vec&, const DiscreteMeasure&, const Vec& p) { return p; };
  h.dxx = [q](const Vec&, const DiscreteMeasure&, const Vec&) {
    Mat out(1, 1);
    out << -q;
    return out;
  };
  h.dxp = [](const Vec&, const DiscreteMeasure&, const Vec&) {
    return Mat::Zero(1, 1);
  };
  h.dpp = [](const Vec&, const DiscreteMeasure&, const Vec&) {
    return Mat::Identity(1, 1);
  };
  h.dmu = [c](const Vec& x, const DiscreteMeasure&, const Vec&, const Vec&) {
    Vec out(1);
    out << -c * x(0);
    return out;
  };
  h.dxmu = [c](const Vec&, const DiscreteMeasure&, const Vec&, const Vec&) {
    Mat out(1, 1);
    out << -c;
    return out;
  };
  h.dpmu = [](const Vec&, const DiscreteMeasure&, const Vec&, const Vec&) {
    return Mat::Zero(1, 1);
  };
  return h;
}

LagrangianModel lq_lagrangian(double q, double c) {
  auto stat = mean1d_statistic();
  LagrangianModel l;
  l.dim = 1;
  l.name = "lq";
  l.value = [stat, q, c](const Vec& x, const DiscreteMeasure& mu, const Vec& a) {
    double m = evaluate_statistic(mu, *stat);
    return 0.5 * a.squaredNorm() + 0.5 * q * x.squaredNorm() + c * x(0) * m;
  };
  l.da = [](const Vec&, const DiscreteMeasure&, const Vec& a) { return a; };
  l.dx = [stat, q, c](const Vec& x, const DiscreteMeasure& mu, const Vec&) {
    double m = evaluate_statistic(mu, *stat);
    Vec out(1);
    out << q * x(0) + c * m;
    return out;
  };
  l.dxx = [q](const Vec&, const DiscreteMeasure&, const Vec&) {
    Mat out(1, 1);
    out << q;
    return out;
  };
  l.dxa = [](const Vec&, const DiscreteMeasure&, const Vec&) {
    return Mat::Zero(1, 1);
  };
  l.daa = [](const Vec&, const DiscreteMeasure&, const Vec&) {
    return Mat::Identity(1, 1);
  };
  l.dmu = [c](const Vec& x, const DiscreteMeasure&, const Vec&, const Vec&) {
    Vec out(1);
    out << c * x(0);
    return out;
  };
  l.dxmu = [c](const Vec&, const DiscreteMeasure&, const Vec&, const Vec&) {
    Mat out(1, 1);
    out << c;
    return out;
  };
  l.damu = [](const Vec&, const DiscreteMeasure&, const Vec&, const Vec&) {
    return Mat::Zero(1, 1);
  };
  return l;
}

TerminalCostModel quadratic_terminal(double g, int dim) {
  TerminalCostModel t;
  t.dim = dim;
  t.name = "quadratic";
  t.grad_bound = 1e3;
  t.mu_grad_bound = 0.0;
  t.w2_lipschitz = 0.0;
  t.value = [g](const Vec& x, const DiscreteMeasure&) {
    return 0.5 * g * x.squaredNorm();
  };
  t.dx = [g](const Vec& x, const DiscreteMeasure&) { return Vec(g * x); };
  t.dxx = [g, dim](const Vec&, const DiscreteMeasure&) {
    return Mat(g * Mat::Identity(dim, dim));
  };
  t.dmu = [dim](const Vec&, const DiscreteMeasure&, const Vec&) {
    return Vec(Vec::Zero(dim));
  };
  t.dxmu = [dim](const Vec&, const DiscreteMeasure&, const Vec&) {
    return Mat(Mat::Zero(dim, dim));
  };
  return t;
}

TerminalCostModel lq_coupling_surface(double q, double c) {
  auto stat = mean1d_statistic();
  TerminalCostModel t;
  t.dim = 1;
  t.name = "lq-coupling";
  t.grad_bound = 1e3;
  t.mu_grad_bound = std::abs(c) * 1e3;
  t.w2_lipschitz = t.mu_grad_bound;
  t.value = [stat, q, c](const Vec& x, const DiscreteMeasure& mu) {
    double m = evaluate_statistic(mu, *stat);
    return 0.5 * q * x.squaredNorm() + c * x(0) * m;
  };
  t.dx = [stat, q, c](const Vec& x, const DiscreteMeasure& mu) {
    double m = evaluate_statistic(mu, *stat);
    Vec out(1);
    out << q * x(0) + c * m;
    return out;
  };
  t.dxx = [q](const Vec&, const DiscreteMeasure&) {
    Mat out(1, 1);
    out << q;
    return out;
  };
  t.dmu = [c](const Vec& x, const DiscreteMeasure&, const Vec&) {
    Vec out(1);
    out << c * x(0);
    return out;
  };
  t.dxmu = [c](const Vec&, const DiscreteMeasure&, const Vec&) {
    Mat out(1, 1);
    out << c;
    return out;
  };
  return t;
}

TerminalCostModel mean_product_surface() {
  auto stat = mean1d_statistic();
  TerminalCostModel t;
  t.dim = 1;
  t.name = "mean-product";
  t.value = [stat](const Vec& x, const DiscreteMeasure& mu) {
    return x(0) * evaluate_statistic(mu, *stat);
  };
  t.dx = [stat](const Vec&, const DiscreteMeasure& mu) {
    Vec out(1);
    out << evaluate_statistic(mu, *stat);
    return out;
  };
  t.dxx = [](const Vec&, const DiscreteMeasure&) { return Mat::Zero(1, 1); };
  t.dmu = [](const Vec& x, const DiscreteMeasure&, const Vec&) {
    Vec out(1);
    out << x(0);
    return out;
  };
  t.dxmu = [](const Vec&, const DiscreteMeasure&, const Vec&) {
    return Mat::Identity(1, 1);
  };
  return t;
}

TerminalCostModel sine_mean_surface() {
  auto stat = mean1d_statistic();
  TerminalCostModel t;
  t.dim = 1;
  t.name = "sine-mean";
  t.value = [stat](const Vec& x, const DiscreteMeasure& mu) {
    return std::sin(x(0)) * evaluate_statistic(mu, *stat);
  };
  t.dx = [stat](const Vec& x, const DiscreteMeasure& mu) {
    Vec out(1);
    out << std::cos(x(0)) * evaluate_statistic(mu, *stat);
    return out;
  };
  t.dxx = [stat](const Vec& x, const DiscreteMeasure& mu) {
    Mat out(1, 1);
    out << -std::sin(x(0)) * evaluate_statistic(mu, *stat);
    return out;
  };
  t.dmu = [](const Vec& x, const DiscreteMeasure&, const Vec&) {
    Vec out(1);
    out << std::sin(x(0));
    return out;
  };
  t.dxmu = [](const Vec& x, const DiscreteMeasure&, const Vec&) {
    Mat out(1, 1);
    out << std::cos(x(0));
    return out;
  };
  return t;
}

TerminalCostModel tanh_stat_surface() {
  auto stat = std::make_shared<MeasureStatistic>();
  stat->f = [](const Vec& x) { return std::tanh(x(0)); };
  TerminalCostModel t;
  t.dim = 1;
  t.name = "tanh-stat";
  t.value = [stat](const Vec& x, const DiscreteMeasure& mu) {
    return x(0) * evaluate_statistic(mu, *stat);
  };
  t.dx = [stat](const Vec&, const DiscreteMeasure& mu) {
    Vec out(1);
    out << evaluate_statistic(mu, *stat);
    return out;
  };
  t.dxx = [](const Vec&, const DiscreteMeasure&) { return Mat::Zero(1, 1); };
  t.dmu = [](const Vec& x, const DiscreteMeasure&, const Vec& xt) {
    double c = std::cosh(xt(0));
    Vec out(1);
    out << x(0) / (c * c);
    return out;
  };
  t.dxmu = [](const Vec&, const DiscreteMeasure&, const Vec& xt) {
    double c = std::cosh(xt(0));
    Mat out(1, 1);
    out << 1.0 / (c * c);
    return out;
  };
  return t;
}

TerminalCostModel cos_sin_surface() {
  auto stat = std::make_shared<MeasureStatistic>();
  stat->f = [](const Vec& x) { return std::sin(x(0)); };
  TerminalCostModel t;
  t.dim = 1;
  t.name = "cos-sin";
  t.value = [stat](const Vec& x, const DiscreteMeasure& mu) {
    return std::cos(x(0)) * evaluate_statistic(mu, *stat);
  };
  t.dx = [stat](const Vec& x, const DiscreteMeasure& mu) {
    Vec out(1);
    out << -std::sin(x(0)) * evaluate_statistic(mu, *stat);
    return out;
  };
  t.dxx = [stat](const Vec& x, const DiscreteMeasure& mu) {
    Mat out(1, 1);
    out << -std::cos(x(0)) * evaluate_statistic(mu, *stat);
    return out;
  };
  t.dmu = [](const Vec& x, const DiscreteMeasure&, const Vec& xt) {
    Vec out(1);
    out << std::cos(x(0)) * std::cos(xt(0));
    return out;
  };
  t.dxmu = [](const Vec& x, const DiscreteMeasure&, const Vec& xt) {
    Mat out(1, 1);
    out << -std::sin(x(0)) * std::cos(xt(0));
    return out;
  };
  return t;
}

TerminalCostModel concave_shift_surface(int dim) {
  TerminalCostModel t;
  t.dim = dim;
  t.name = "concave-shift";
  t.value = [](const Vec& x, const DiscreteMeasure& mu) {
    return -0.5 * x.squaredNorm() + mu.second_moment_sq();
  };
  t.dx = [](const Vec& x, const DiscreteMeasure&) { return Vec(-x); };
  t.dxx = [dim](const Vec&, const DiscreteMeasure&) {
    return Mat(-Mat::Identity(dim, dim));
  };
  t.dmu = [](const Vec&, const DiscreteMeasure&, const Vec& xt) {
    return Vec(2.0 * xt);
  };
  t.dxmu = [dim](const Vec&, const DiscreteMeasure&, const Vec&) {
    return Mat(Mat::Zero(dim, dim));
  };
  return t;
}

TerminalCostModel shifted_surface(const TerminalCostModel& base, double C) {
  auto b = std::make_shared<TerminalCostModel>(base);
  TerminalCostModel t;
  t.dim = base.dim;
  t.name = base.name + "+C|x|^2";
  t.grad_bound = base.grad_bound;
  t.mu_grad_bound = base.mu_grad_bound;
  t.w2_lipschitz = base.w2_lipschitz;
  t.value = [b, C](const Vec& x, const DiscreteMeasure& mu) {
    return b->value(x, mu) + C * x.squaredNorm();
  };
  t.dx = [b, C](const Vec& x, const DiscreteMeasure& mu) {
    return Vec(b->dx(x, mu) + 2.0 * C * x);
  };
  t.dxx = [b, C](const Vec& x, const DiscreteMeasure& mu) {
    int d = b->dim;
    return Mat(b->dxx(x, mu) + 2.0 * C * Mat::Identity(d, d));
  };
  t.dmu = [b](const Vec& x, const DiscreteMeasure& mu, const Vec& xt) {
    return b->dmu(x, mu, xt);
  };
  t.dxmu = [b](const Vec& x, const DiscreteMeasure& mu, const Vec& xt) {
    return b->dxmu(x, mu, xt);
  };
  return t;
}

HamiltonianModel separable_hamiltonian(const TerminalCostModel& coupling) {
  auto f = std::make_shared<TerminalCostModel>(coupling);
  const int dim = coupling.dim;
  HamiltonianModel h;
  h.dim = dim;
  h.name = "separable(" + coupling.name + ")";
  h.convexity = 1.0;
  h.x_growth = coupling.grad_bound;
  h.lipschitz_envelope = [gb = coupling.grad_bound](double R) {
    return gb + R + 1.0;
  };
  h.value = [f](const Vec& x, const DiscreteMeasure& mu, const Vec& p) {
    return 0.5 * p.squaredNorm() - f->value(x, mu);
  };
  h.dx = [f](const Vec& x, const DiscreteMeasure& mu, const Vec&) {
    return Vec(-f->dx(x, mu));
  };
  h.dp = [](const Vec&, const DiscreteMeasure&, const Vec& p) { return p; };
  h.dxx = [f](const Vec& x, const DiscreteMeasure& mu, const Vec&) {
    return Mat(-f->dxx(x, mu));
  };
  h.dxp = [dim](const Vec&, const DiscreteMeasure&, const Vec&) {
    return Mat(Mat::Zero(dim, dim));
  };
  h.dpp = [dim](const Vec&, const DiscreteMeasure&, const Vec&) {
    return Mat(Mat::Identity(dim, dim));
  };
  h.dmu = [f](const Vec& x, const DiscreteMeasure& mu, const Vec& xt,
              const Vec&) { return Vec(-f->dmu(x, mu, xt)); };
  h.dxmu = [f](const Vec& x, const DiscreteMeasure& mu, const Vec& xt,
               const Vec&) { return Mat(-f->dxmu(x, mu, xt)); };
  h.dpmu = [dim](const Vec&, const DiscreteMeasure&, const Vec&, const Vec&) {
    return Mat(Mat::Zero(dim, dim));
  };
  return h;
}

namespace {

double param(const std::map<std::string, double>& params, const std::string& key,
             double fallback) {
  auto it = params.find(key);
  return it == params.end() ? fallback : it->second;
}

}  // namespace

HamiltonianModel make_hamiltonian(const std::string& name,
                                  const std::map<std::string, double>& params) {
  if (name == "lq")
    return lq_hamiltonian(param(params, "q", 1.0), param(params, "c", 0.5));
  if (name == "constructed") {
    ConstructedParams prm;
    prm.dim = static_cast<int>(param(params, "dim", 1));
    prm.R0 = param(params, "R0", 1.0);
    prm.C0 = param(params, "C0", 1.0);
    prm.alpha = param(params, "alpha", 0.05);
    prm.kappa = param(params, "kappa", 0.5);
    return constructed_hamiltonian(prm);
  }
  if (name == "separable")
    return separable_hamiltonian(
        lq_coupling_surface(param(params, "q", 1.0), param(params, "c", 0.5)));
  throw std::invalid_argument("unknown Hamiltonian model: " + name);
}

TerminalCostModel make_terminal(const std::string& name,
                                const std::map<std::string, double>& params) {
  if (name == "quadratic")
    return quadratic_terminal(param(params, "g", 1.0),
                              static_cast<int>(param(params, "dim", 1)));
  if (name == "lq-coupling")
    return lq_coupling_surface(param(params, "q", 1.0), param(params, "c", 0.5));
  if (name == "mean-product") return mean_product_surface();
  if (name == "sine-mean") return sine_mean_surface();
  if (name == "tanh-stat") return tanh_stat_surface();
  if (name == "cos-sin") return cos_sin_surface();
  if (name == "concave-shift")
    return concave_shift_surface(static_cast<int>(param(params, "dim", 1)));
  if (name == "zero") {
    TerminalCostModel t = quadratic_terminal(0.0, static_cast<int>(param(params, "dim", 1)));
    t.name = "zero";
    return t;
  }
  throw std::invalid_argument("unknown terminal model: " + name);
}

// --- consistency checks -----------------------------------------------------------

bool ConsistencyReport::passed(double tol) const {
  return max_rel_error <= tol;
}

namespace {

template <typename F>
Vec fd_grad(const F& f, const Vec& at, double step) {
  Vec out(at.size());
  for (int j = 0; j < at.size(); ++j) {
    Vec e = basis(static_cast<int>(at.size()), j) * step;
    out(j) = (f(at + e) - f(at - e)) / (2.0 * step);
  }
  return out;
}

template <typename F>
Mat fd_jacobian_rows(const F& f, const Vec& at, double step, int dim) {
  // row i = d/d at_i of f (f vector-valued); matches the dxmu/dxp convention
  Mat out(dim, dim);
  for (int i = 0; i < dim; ++i) {
    Vec e = basis(dim, i) * step;
    out.row(i) = ((f(at + e) - f(at - e)) / (2.0 * step)).transpose();
  }
  return out;
}

}  // namespace

ConsistencyReport check_hamiltonian_consistency(
    const HamiltonianModel& h, const std::vector<DiscreteMeasure>& clouds,
    int probes_per_cloud, std::uint64_t seed) {
  Rng rng(seed);
  ConsistencyReport rep;
  rep.min_pp_eigenvalue = std::numeric_limits<double>::infinity();
  const int d = h.dim;
  const double step = 1e-5;
  auto track = [&](double err) {
    rep.max_rel_error = std::max(rep.max_rel_error, err);
  };
  for (const auto& mu : clouds) {
    for (int probe = 0; probe < probes_per_cloud; ++probe) {
      Vec x(d), p(d);
      for (int j = 0; j < d; ++j) {
        x(j) = 2.0 * normal(rng);
        p(j) = 2.0 * normal(rng);
      }
      Vec xt = mu.atom(uniform_int(rng, 0, mu.size() - 1));

      auto value_x = [&](const Vec& xx) { return h.value(xx, mu, p); };
      auto value_p = [&](const Vec& pp) { return h.value(x, mu, pp); };
      track(rel_err(h.dx(x, mu, p), fd_grad(value_x, x, step)));
      track(rel_err(h.dp(x, mu, p), fd_grad(value_p, p, step)));

      auto dx_in_x = [&](const Vec& xx) { return h.dx(xx, mu, p); };
      auto dp_in_x = [&](const Vec& xx) { return h.dp(xx, mu, p); };
      auto dp_in_p = [&](const Vec& pp) { return h.dp(x, mu, pp); };
      track(rel_err(h.dxx(x, mu, p), fd_jacobian_rows(dx_in_x, x, step, d)));
      track(rel_err(h.dxp(x, mu, p), fd_jacobian_rows(dp_in_x, x, step, d)));
      track(rel_err(h.dpp(x, mu, p), fd_jacobian_rows(dp_in_p, p, step, d)));

      int k = uniform_int(rng, 0, mu.size() - 1);
      auto U = [&](const DiscreteMeasure& m) { return h.value(x, m, p); };
      Vec lions = fd_lions_derivative(U, mu, k, 1e-4);
      track(rel_err(h.dmu(x, mu, mu.atom(k), p), lions, 1e-3));

      auto dmu_in_x = [&](const Vec& xx) { return h.dmu(xx, mu, xt, p); };
      auto dmu_in_p = [&](const Vec& pp) { return h.dmu(x, mu, xt, pp); };
      track(rel_err(h.dxmu(x, mu, xt, p),
                    fd_jacobian_rows(dmu_in_x, x, step, d)));
      track(rel_err(h.dpmu(x, mu, xt, p),
                    fd_jacobian_rows(dmu_in_p, p, step, d)));

      Eigen::SelfAdjointEigenSolver<Mat> es(h.dpp(x, mu, p));
      rep.min_pp_eigenvalue =
          std::min(rep.min_pp_eigenvalue, es.eigenvalues().minCoeff());
      if (h.x_growth > 0.0)
        rep.max_growth_ratio =
            std::max(rep.max_growth_ratio,
                     h.dx(x, mu, p).norm() / (h.x_growth * (1.0 + p.norm())));
    }
  }
  return rep;
}

ConsistencyReport check_terminal_consistency(
    const TerminalCostModel& g, const std::vector<DiscreteMeasure>& clouds,
    int probes_per_cloud, std::uint64_t seed) {
  Rng rng(seed);
  ConsistencyReport rep;
  rep.min_pp_eigenvalue = 0.0;
  const int d = g.dim;
  const double step = 1e-5;
  auto track = [&](double err) {
    rep.max_rel_error = std::max(rep.max_rel_error, err);
  };
  for (const auto& mu : clouds) {
    for (int probe = 0; probe < probes_per_cloud; ++probe) {
      Vec x(d);
      for (int j = 0; j < d; ++j) x(j) = 2.0 * normal(rng);
      Vec xt = mu.atom(uniform_int(rng, 0, mu.size() - 1));

      auto value_x = [&](const Vec& xx) { return g.value(xx, mu); };
      track(rel_err(g.dx(x, mu), fd_grad(value_x, x, step)));
      auto dx_in_x = [&](const Vec& xx) { return g.dx(xx, mu); };
      track(rel_err(g.dxx(x, mu), fd_jacobian_rows(dx_in_x, x, step, d)));

      int k = uniform_int(rng, 0, mu.size() - 1);
      auto U = [&](const DiscreteMeasure& m) { return g.value(x, m); };
      Vec lions = fd_lions_derivative(U, mu, k, 1e-4);
      track(rel_err(g.dmu(x, mu, mu.atom(k)), lions, 1e-3));

      auto dmu_in_x = [&](const Vec& xx) { return g.dmu(xx, mu, xt); };
      track(rel_err(g.dxmu(x, mu, xt), fd_jacobian_rows(dmu_in_x, x, step, d)));
    }
  }
  return rep;
}

}  // namespace mfg
