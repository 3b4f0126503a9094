#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <vector>

namespace mfg {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

class TransportCapExceeded : public std::runtime_error {
 public:
  explicit TransportCapExceeded(const std::string& what)
      : std::runtime_error(what) {}
};

// Memo for scalar statistics of the form mu -> sum_i w_i f(x_i), keyed by the
// address of the statistic definition. Lets Hamiltonian models whose measure
// dependence factors through a few statistics evaluate in O(1) per call after
// the first touch of a given measure.
struct StatisticCache {
  std::mutex mutex;
  std::vector<std::pair<const void*, double>> entries;
};

// Weighted atom cloud in R^d with positive weights summing to one. The one
// measure representation used across the toolkit.
class DiscreteMeasure {
 public:
  // atoms: n x d (one row per atom). Zero-weight atoms are dropped; negative
  // weights or a total mass off 1 by more than 1e-12 are rejected.
  DiscreteMeasure(Mat atoms, Vec weights);

  // Uniform weights over the given points.
  static DiscreteMeasure uniform(Mat atoms);
  static DiscreteMeasure dirac(const Vec& point);

  // 1-d convenience.
  static DiscreteMeasure from_points(const std::vector<double>& xs,
                                     const std::vector<double>& ws);
  static DiscreteMeasure uniform1d(const std::vector<double>& xs);

  int size() const { return static_cast<int>(atoms_.rows()); }
  int dim() const { return static_cast<int>(atoms_.cols()); }
  const Mat& atoms() const { return atoms_; }
  const Vec& weights() const { return weights_; }
  Vec atom(int i) const { return atoms_.row(i).transpose(); }
  double atom1d(int i) const { return atoms_(i, 0); }
  double weight(int i) const { return weights_(i); }

  Vec mean() const;
  double second_moment_sq() const;  // sum_i w_i |x_i|^2

  StatisticCache& cache() const;

 private:
  Mat atoms_;
  Vec weights_;
  mutable std::shared_ptr<StatisticCache> cache_;
};

// Scalar statistic sum_i w_i f(x_i); identity of the object is the cache key,
// so definitions should outlive the measures they are evaluated on (models
// hold them in shared_ptrs).
struct MeasureStatistic {
  std::function<double(const Vec&)> f;
};

double evaluate_statistic(const DiscreteMeasure& mu, const MeasureStatistic& s);

// Law of a pair (xi, eta) with eta = v(xi): one tangent vector per atom.
struct TangentSample {
  DiscreteMeasure base;
  Mat tangents;  // n x d, row i attached to atom i

  TangentSample(DiscreteMeasure b, Mat t);
  // sum_i w_i |eta_i|^2; the natural squared scale of every bilinear form.
  double tangent_scale_sq() const;
};

// --- distances -------------------------------------------------------------

// Exact 2-Wasserstein distance. d = 1: sorted (monotone) coupling, any sizes.
// d > 1: optimal assignment for equal-size uniform clouds up to 64 atoms,
// dense transport LP up to 256 atoms per side otherwise; beyond that throws
// TransportCapExceeded.
double w2_distance(const DiscreteMeasure& mu, const DiscreteMeasure& nu);

// Exact 1-Wasserstein distance; d = 1 computed as the integral of
// |F_mu - F_nu|, d > 1 via the same assignment/LP paths as w2_distance.
double w1_distance(const DiscreteMeasure& mu, const DiscreteMeasure& nu);

// --- perturbations and sampling ---------------------------------------------

// Same measure with atom k translated by delta; weights unchanged.
DiscreteMeasure perturb_atom(const DiscreteMeasure& mu, int k, const Vec& delta);
DiscreteMeasure perturb_atom1d(const DiscreteMeasure& mu, int k, double delta);

// n uniform-weight atoms from N(mean, sd^2 I); reproducible per seed.
DiscreteMeasure sample_gaussian(int n, const Vec& mean, double sd,
                                std::uint64_t seed);
DiscreteMeasure sample_gaussian1d(int n, double mean, double sd,
                                  std::uint64_t seed);

// Equality up to reordering: sorted (atom, weight) lists within tol.
bool approx_equal(const DiscreteMeasure& mu, const DiscreteMeasure& nu,
                  double tol = 1e-12);

}  // namespace mfg
