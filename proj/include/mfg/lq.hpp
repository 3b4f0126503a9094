#pragma once

#include <string>
#include <vector>

#include "mfg/measures.hpp"

namespace mfg {

// Linear-quadratic benchmark: H(x,mu,p) = |p|^2/2 - (q/2)x^2 - c x m(mu),
// G = (g/2) x^2, d = 1. The value function is quadratic,
// V(t,x) = a_t x^2 / 2 + b_t x + c_t, with
//   a' = a^2 - q            a_T = g      (Riccati)
//   m' = -(a m + b)         m_0 = m0     (equilibrium mean)
//   b' = a b - c m          b_T = 0
//   c' = b^2/2 - a/2        c_T = 0.
struct LqSpec {
  double q = 1.0;
  double c = 0.5;
  double g = 1.0;
  double T = 1.0;
  double m0 = 1.0;
  double var0 = 0.25;

  // q E|eta|^2 + c |E eta|^2 >= 0 for all eta iff q >= 0 and q + c >= 0.
  bool displacement_monotone() const { return q >= 0.0 && q + c >= 0.0; }
};

class RiccatiBlowUp : public std::runtime_error {
 public:
  RiccatiBlowUp(const std::string& what, double time)
      : std::runtime_error(what), blow_up_time(time) {}
  double blow_up_time;
};

struct LqCoefficients {
  double T = 1.0;
  double m0 = 1.0;
  std::vector<double> t;      // uniform grid 0..T
  std::vector<double> a;      // Riccati path
  std::vector<double> b;      // linear coefficient
  std::vector<double> c_off;  // constant offset
  std::vector<double> m;      // equilibrium mean path
  std::vector<double> dm;     // d m_t / d m0  (m_t = m0 * dm_t)
  std::vector<double> db;     // d b_t / d m0
  std::vector<double> dc;     // d c_t / d m0

  double a_at(double time) const;
  double b_at(double time) const;
  double c_at(double time) const;
  double m_at(double time) const;
  double dm_at(double time) const;
  double db_dm_at(double time) const;
  double dc_dm_at(double time) const;
};

// RK4 on the joint autonomous system; shooting on the mean through the
// backward fundamental solution. ode_steps >= 100 (default 10000).
LqCoefficients solve_lq(const LqSpec& spec, int ode_steps = 10000);

double oracle_V(const LqCoefficients& coeffs, double t, double x);
double oracle_dx_V(const LqCoefficients& coeffs, double t, double x);
// x_tilde-independent because the coupling acts through the mean.
double oracle_dmu_V(const LqCoefficients& coeffs, double t, double x);
// Equilibrium mean path started from the cloud's mean.
std::vector<double> oracle_flow(const LqCoefficients& coeffs,
                                const DiscreteMeasure& mu0);

void dump_csv(const LqCoefficients& coeffs, const std::string& path,
              int stride = 10);

}  // namespace mfg
