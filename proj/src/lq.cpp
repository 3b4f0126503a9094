#include "mfg/lq.hpp"

#include <array>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace mfg {

namespace {

double lerp(const std::vector<double>& grid, const std::vector<double>& f,
            double time) {
  double T = grid.back();
  if (time <= 0.0) return f.front();
  if (time >= T) return f.back();
  double h = grid[1] - grid[0];
  int i = std::min(static_cast<int>(time / h), static_cast<int>(grid.size()) - 2);
  double s = (time - grid[i]) / h;
  return (1.0 - s) * f[i] + s * f[i + 1];
}

// State for the joint backward sweep: (a, m, b, M, B, c, Gamma). Autonomous,
// so plain RK4 substeps are exact in the coefficients.
using State = std::array<double, 7>;

State rhs(const State& s, double q, double cpl) {
  const double a = s[0], m = s[1], b = s[2], M = s[3], B = s[4];
  State d;
  d[0] = a * a - q;
  d[1] = -(a * m + b);
  d[2] = a * b - cpl * m;
  d[3] = -(a * M + B);
  d[4] = a * B - cpl * M;
  d[5] = 0.5 * b * b - 0.5 * a;
  d[6] = b * B;
  return d;
}

State rk4_step(const State& s, double dt, double q, double cpl) {
  State k1 = rhs(s, q, cpl);
  State t2, t3, t4;
  for (int i = 0; i < 7; ++i) t2[i] = s[i] + 0.5 * dt * k1[i];
  State k2 = rhs(t2, q, cpl);
  for (int i = 0; i < 7; ++i) t3[i] = s[i] + 0.5 * dt * k2[i];
  State k3 = rhs(t3, q, cpl);
  for (int i = 0; i < 7; ++i) t4[i] = s[i] + dt * k3[i];
  State k4 = rhs(t4, q, cpl);
  State out;
  for (int i = 0; i < 7; ++i)
    out[i] = s[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
  return out;
}

// Backward fundamental solution of the (mean, linear-coefficient) pair
// coupled to the Riccati path: z(t) = Phi(t) z(T), Phi(T) = I.
struct Fundamental {
  double p11, p12, p21, p22;  // Phi(0)
};

Fundamental backward_fundamental(const LqSpec& spec, int steps) {
  double dt = spec.T / steps;
  // State: (a, e1 = Phi col 1, e2 = Phi col 2), integrated jointly backward.
  double a = spec.g;
  double e1m = 1.0, e1b = 0.0, e2m = 0.0, e2b = 1.0;
  auto deriv = [&spec](double a_, double m_, double b_, double* dm, double* db) {
    *dm = -(a_ * m_ + b_);
    *db = a_ * b_ - spec.c * m_;
  };
  for (int i = 0; i < steps; ++i) {
    const double h = -dt;
    double ka1 = a * a - spec.q;
    double k1m1, k1b1, k1m2, k1b2;
    deriv(a, e1m, e1b, &k1m1, &k1b1);
    deriv(a, e2m, e2b, &k1m2, &k1b2);
    double a2 = a + 0.5 * h * ka1;
    double ka2 = a2 * a2 - spec.q;
    double k2m1, k2b1, k2m2, k2b2;
    deriv(a2, e1m + 0.5 * h * k1m1, e1b + 0.5 * h * k1b1, &k2m1, &k2b1);
    deriv(a2, e2m + 0.5 * h * k1m2, e2b + 0.5 * h * k1b2, &k2m2, &k2b2);
    double a3 = a + 0.5 * h * ka2;
    double ka3 = a3 * a3 - spec.q;
    double k3m1, k3b1, k3m2, k3b2;
    deriv(a3, e1m + 0.5 * h * k2m1, e1b + 0.5 * h * k2b1, &k3m1, &k3b1);
    deriv(a3, e2m + 0.5 * h * k2m2, e2b + 0.5 * h * k2b2, &k3m2, &k3b2);
    double a4 = a + h * ka3;
    double ka4 = a4 * a4 - spec.q;
    double k4m1, k4b1, k4m2, k4b2;
    deriv(a4, e1m + h * k3m1, e1b + h * k3b1, &k4m1, &k4b1);
    deriv(a4, e2m + h * k3m2, e2b + h * k3b2, &k4m2, &k4b2);
    a += h / 6.0 * (ka1 + 2.0 * ka2 + 2.0 * ka3 + ka4);
    e1m += h / 6.0 * (k1m1 + 2.0 * k2m1 + 2.0 * k3m1 + k4m1);
    e1b += h / 6.0 * (k1b1 + 2.0 * k2b1 + 2.0 * k3b1 + k4b1);
    e2m += h / 6.0 * (k1m2 + 2.0 * k2m2 + 2.0 * k3m2 + k4m2);
    e2b += h / 6.0 * (k1b2 + 2.0 * k2b2 + 2.0 * k3b2 + k4b2);
    if (std::abs(a) > 1e8)
      throw RiccatiBlowUp("Riccati blow-up at t = " +
                              std::to_string(spec.T - (i + 1) * dt),
                          spec.T - (i + 1) * dt);
  }
  return {e1m, e2m, e1b, e2b};
}

}  // namespace

LqCoefficients solve_lq(const LqSpec& spec, int ode_steps) {
  if (ode_steps < 100) throw std::invalid_argument("solve_lq: ode_steps < 100");
  if (spec.g < 0.0) throw std::invalid_argument("solve_lq: g < 0");

  Fundamental phi0 = backward_fundamental(spec, ode_steps);
  // z(0) = Phi(0) z(T) with z = (m, b) and b(T) = 0:
  //   m0 = phi0.p11 * m_T  =>  m_T = m0 / p11, and sensitivity M_T = 1 / p11.
  if (std::abs(phi0.p11) < 1e-12)
    throw std::runtime_error("solve_lq: mean shooting is degenerate");
  double mT = spec.m0 / phi0.p11;
  double MT = 1.0 / phi0.p11;

  const int n = ode_steps;
  double dt = spec.T / n;
  LqCoefficients out;
  out.T = spec.T;
  out.m0 = spec.m0;
  out.t.resize(n + 1);
  out.a.resize(n + 1);
  out.b.resize(n + 1);
  out.c_off.resize(n + 1);
  out.m.resize(n + 1);
  out.dm.resize(n + 1);
  out.db.resize(n + 1);
  out.dc.resize(n + 1);

  State s{spec.g, mT, 0.0, MT, 0.0, 0.0, 0.0};
  auto store = [&](int i, const State& st) {
    out.t[i] = i * dt;
    out.a[i] = st[0];
    out.m[i] = st[1];
    out.b[i] = st[2];
    out.dm[i] = st[3];
    out.db[i] = st[4];
    out.c_off[i] = st[5];
    out.dc[i] = st[6];
  };
  store(n, s);
  for (int i = n - 1; i >= 0; --i) {
    s = rk4_step(s, -dt, spec.q, spec.c);
    if (std::abs(s[0]) > 1e8)
      throw RiccatiBlowUp("Riccati blow-up at t = " + std::to_string(i * dt),
                          i * dt);
    store(i, s);
  }

  // Shooting consistency: the two backward integrations must reproduce the
  // prescribed initial mean and unit sensitivity.
  double scale = 1.0 + std::abs(spec.m0);
  if (std::abs(out.m[0] - spec.m0) > 1e-9 * scale ||
      std::abs(out.dm[0] - 1.0) > 1e-9)
    throw std::runtime_error("solve_lq: mean shooting residual too large: " +
                             std::to_string(out.m[0] - spec.m0));
  return out;
}

double LqCoefficients::a_at(double time) const { return lerp(t, a, time); }
double LqCoefficients::b_at(double time) const { return lerp(t, b, time); }
double LqCoefficients::c_at(double time) const { return lerp(t, c_off, time); }
double LqCoefficients::m_at(double time) const { return lerp(t, m, time); }
double LqCoefficients::dm_at(double time) const { return lerp(t, dm, time); }
double LqCoefficients::db_dm_at(double time) const { return lerp(t, db, time); }
double LqCoefficients::dc_dm_at(double time) const { return lerp(t, dc, time); }

double oracle_V(const LqCoefficients& coeffs, double t, double x) {
  return 0.5 * coeffs.a_at(t) * x * x + coeffs.b_at(t) * x + coeffs.c_at(t);
}

double oracle_dx_V(const LqCoefficients& coeffs, double t, double x) {
  return coeffs.a_at(t) * x + coeffs.b_at(t);
}

double oracle_dmu_V(const LqCoefficients& coeffs, double t, double x) {
  return x * coeffs.db_dm_at(t) + coeffs.dc_dm_at(t);
}

std::vector<double> oracle_flow(const LqCoefficients& coeffs,
                                const DiscreteMeasure& mu0) {
  double mean = mu0.mean()(0);
  std::vector<double> path(coeffs.t.size());
  for (std::size_t i = 0; i < path.size(); ++i)
    path[i] = coeffs.dm[i] * mean;  // m_t is linear homogeneous in m0
  return path;
}

void dump_csv(const LqCoefficients& coeffs, const std::string& path, int stride) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("dump_csv: cannot open " + path);
  out << "t,a,b,c,m,dm_dm0,db_dm0,dc_dm0\n";
  char line[256];
  for (std::size_t i = 0; i < coeffs.t.size(); i += stride) {
    std::snprintf(line, sizeof(line),
                  "%.12g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                  coeffs.t[i], coeffs.a[i], coeffs.b[i], coeffs.c_off[i],
                  coeffs.m[i], coeffs.dm[i], coeffs.db[i], coeffs.dc[i]);
    out << line;
  }
}

}  // namespace mfg
