#include "mfg/measures.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mfg/rng.hpp"
#include "mfg/transport.hpp"

namespace mfg {

DiscreteMeasure::DiscreteMeasure(Mat atoms, Vec weights) {
  if (atoms.rows() != weights.size())
    throw std::invalid_argument("measure: atom/weight count mismatch");
  if (atoms.rows() == 0) throw std::invalid_argument("measure: empty cloud");
  if (atoms.cols() < 1) throw std::invalid_argument("measure: dimension < 1");
  double total = 0.0;
  int kept = 0;
  for (int i = 0; i < weights.size(); ++i) {
    if (weights(i) < 0.0)
      throw std::invalid_argument("measure: negative weight");
    total += weights(i);
    if (weights(i) > 0.0) ++kept;
  }
  if (std::abs(total - 1.0) > 1e-12)
    throw std::invalid_argument("measure: weights sum to " +
                                std::to_string(total) + ", expected 1");
  if (kept == 0) throw std::invalid_argument("measure: all weights zero");
  atoms_.resize(kept, atoms.cols());
  weights_.resize(kept);
  int j = 0;
  for (int i = 0; i < weights.size(); ++i) {
    if (weights(i) > 0.0) {
      atoms_.row(j) = atoms.row(i);
      weights_(j) = weights(i);
      ++j;
    }
  }
}

DiscreteMeasure DiscreteMeasure::uniform(Mat atoms) {
  int n = static_cast<int>(atoms.rows());
  return DiscreteMeasure(std::move(atoms), Vec::Constant(n, 1.0 / n));
}

DiscreteMeasure DiscreteMeasure::dirac(const Vec& point) {
  Mat a(1, point.size());
  a.row(0) = point.transpose();
  return DiscreteMeasure(std::move(a), Vec::Ones(1));
}

DiscreteMeasure DiscreteMeasure::from_points(const std::vector<double>& xs,
                                             const std::vector<double>& ws) {
  Mat a(static_cast<int>(xs.size()), 1);
  Vec w(static_cast<int>(ws.size()));
  for (std::size_t i = 0; i < xs.size(); ++i) a(static_cast<int>(i), 0) = xs[i];
  for (std::size_t i = 0; i < ws.size(); ++i) w(static_cast<int>(i)) = ws[i];
  return DiscreteMeasure(std::move(a), std::move(w));
}

DiscreteMeasure DiscreteMeasure::uniform1d(const std::vector<double>& xs) {
  Mat a(static_cast<int>(xs.size()), 1);
  for (std::size_t i = 0; i < xs.size(); ++i) a(static_cast<int>(i), 0) = xs[i];
  return uniform(std::move(a));
}

Vec DiscreteMeasure::mean() const { return atoms_.transpose() * weights_; }

double DiscreteMeasure::second_moment_sq() const {
  double s = 0.0;
  for (int i = 0; i < size(); ++i) s += weights_(i) * atoms_.row(i).squaredNorm();
  return s;
}

StatisticCache& DiscreteMeasure::cache() const {
  if (!cache_) cache_ = std::make_shared<StatisticCache>();
  return *cache_;
}

double evaluate_statistic(const DiscreteMeasure& mu, const MeasureStatistic& s) {
  StatisticCache& cache = mu.cache();
  {
    std::lock_guard<std::mutex> lock(cache.mutex);
    for (const auto& [key, value] : cache.entries)
      if (key == &s) return value;
  }
  double acc = 0.0;
  for (int i = 0; i < mu.size(); ++i) acc += mu.weight(i) * s.f(mu.atom(i));
  {
    std::lock_guard<std::mutex> lock(cache.mutex);
    cache.entries.emplace_back(&s, acc);
  }
  return acc;
}

TangentSample::TangentSample(DiscreteMeasure b, Mat t) : base(std::move(b)), tangents(std::move(t)) {
  if (tangents.rows() != base.size() || tangents.cols() != base.dim())
    throw std::invalid_argument("tangent sample: shape mismatch with base cloud");
}

double TangentSample::tangent_scale_sq() const {
  double s = 0.0;
  for (int i = 0; i < base.size(); ++i)
    s += base.weight(i) * tangents.row(i).squaredNorm();
  return s;
}

namespace {

void check_same_dim(const DiscreteMeasure& mu, const DiscreteMeasure& nu) {
  if (mu.dim() != nu.dim())
    throw std::invalid_argument("wasserstein: dimension mismatch (" +
                                std::to_string(mu.dim()) + " vs " +
                                std::to_string(nu.dim()) + ")");
}

struct SortedCloud {
  std::vector<double> x, w;
};

SortedCloud sorted1d(const DiscreteMeasure& mu) {
  std::vector<int> idx(mu.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(),
            [&](int a, int b) { return mu.atom1d(a) < mu.atom1d(b); });
  SortedCloud out;
  out.x.reserve(idx.size());
  out.w.reserve(idx.size());
  for (int i : idx) {
    out.x.push_back(mu.atom1d(i));
    out.w.push_back(mu.weight(i));
  }
  return out;
}

// Monotone coupling walk; exact for every convex cost, here |x-y|^2.
double w2_sq_1d(const DiscreteMeasure& mu, const DiscreteMeasure& nu) {
  SortedCloud a = sorted1d(mu), b = sorted1d(nu);
  std::size_t i = 0, j = 0;
  double wa = a.w[0], wb = b.w[0], acc = 0.0;
  while (i < a.x.size() && j < b.x.size()) {
    double m = std::min(wa, wb);
    double d = a.x[i] - b.x[j];
    acc += m * d * d;
    wa -= m;
    wb -= m;
    if (wa <= 1e-15 && ++i < a.x.size()) wa = a.w[i];
    if (wb <= 1e-15 && ++j < b.x.size()) wb = b.w[j];
  }
  return acc;
}

// Integral of |F_mu - F_nu| over the merged breakpoints.
double w1_cdf_1d(const DiscreteMeasure& mu, const DiscreteMeasure& nu) {
  SortedCloud a = sorted1d(mu), b = sorted1d(nu);
  std::vector<double> grid;
  grid.reserve(a.x.size() + b.x.size());
  grid.insert(grid.end(), a.x.begin(), a.x.end());
  grid.insert(grid.end(), b.x.begin(), b.x.end());
  std::sort(grid.begin(), grid.end());
  double acc = 0.0, fa = 0.0, fb = 0.0;
  std::size_t i = 0, j = 0;
  for (std::size_t g = 0; g + 1 < grid.size(); ++g) {
    while (i < a.x.size() && a.x[i] <= grid[g]) fa += a.w[i++];
    while (j < b.x.size() && b.x[j] <= grid[g]) fb += b.w[j++];
    acc += std::abs(fa - fb) * (grid[g + 1] - grid[g]);
  }
  return acc;
}

constexpr int kAssignmentCap = 64;
constexpr int kLpCap = 256;

bool uniform_weights(const DiscreteMeasure& mu) {
  double w0 = 1.0 / mu.size();
  for (int i = 0; i < mu.size(); ++i)
    if (std::abs(mu.weight(i) - w0) > 1e-12) return false;
  return true;
}

// exponent 1 or 2; returns W_q
double transport_distance(const DiscreteMeasure& mu, const DiscreteMeasure& nu,
                          int q) {
  const int n = mu.size(), m = nu.size();
  auto pair_cost = [&](int i, int j) {
    double d = (mu.atoms().row(i) - nu.atoms().row(j)).norm();
    return q == 2 ? d * d : d;
  };
  if (n == m && n <= kAssignmentCap && uniform_weights(mu) &&
      uniform_weights(nu)) {
    Mat cost(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) cost(i, j) = pair_cost(i, j);
    double total = assignment_cost(cost) / n;
    return q == 2 ? std::sqrt(total) : total;
  }
  if (n > kLpCap || m > kLpCap)
    throw TransportCapExceeded(
        "exact transport cap exceeded: " + std::to_string(n) + " x " +
        std::to_string(m) + " atoms without the d=1 or assignment fast path");
  Mat cost(n, m);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) cost(i, j) = pair_cost(i, j);
  std::vector<double> supply(mu.weights().data(), mu.weights().data() + n);
  std::vector<double> demand(nu.weights().data(), nu.weights().data() + m);
  double total = transport_lp_cost(cost, supply, demand);
  return q == 2 ? std::sqrt(total) : total;
}

}  // namespace

double w2_distance(const DiscreteMeasure& mu, const DiscreteMeasure& nu) {
  check_same_dim(mu, nu);
  if (mu.dim() == 1) return std::sqrt(w2_sq_1d(mu, nu));
  return transport_distance(mu, nu, 2);
}

double w1_distance(const DiscreteMeasure& mu, const DiscreteMeasure& nu) {
  check_same_dim(mu, nu);
  if (mu.dim() == 1) return w1_cdf_1d(mu, nu);
  return transport_distance(mu, nu, 1);
}

DiscreteMeasure perturb_atom(const DiscreteMeasure& mu, int k, const Vec& delta) {
  if (k < 0 || k >= mu.size())
    throw std::out_of_range("perturb_atom: index " + std::to_string(k) +
                            " out of range for " + std::to_string(mu.size()) +
                            " atoms");
  if (delta.size() != mu.dim())
    throw std::invalid_argument("perturb_atom: shift dimension mismatch");
  Mat atoms = mu.atoms();
  atoms.row(k) += delta.transpose();
  return DiscreteMeasure(std::move(atoms), mu.weights());
}

DiscreteMeasure perturb_atom1d(const DiscreteMeasure& mu, int k, double delta) {
  Vec d(1);
  d << delta;
  return perturb_atom(mu, k, d);
}

DiscreteMeasure sample_gaussian(int n, const Vec& mean, double sd,
                                std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("sample_gaussian: n < 1");
  if (sd < 0.0) throw std::invalid_argument("sample_gaussian: sd < 0");
  Rng rng(seed);
  Mat atoms(n, mean.size());
  for (int i = 0; i < n; ++i)
    for (int d = 0; d < mean.size(); ++d)
      atoms(i, d) = mean(d) + sd * normal(rng);
  return DiscreteMeasure::uniform(std::move(atoms));
}

DiscreteMeasure sample_gaussian1d(int n, double mean, double sd,
                                  std::uint64_t seed) {
  Vec m(1);
  m << mean;
  return sample_gaussian(n, m, sd, seed);
}

bool approx_equal(const DiscreteMeasure& mu, const DiscreteMeasure& nu,
                  double tol) {
  if (mu.dim() != nu.dim() || mu.size() != nu.size()) return false;
  auto key = [](const DiscreteMeasure& m) {
    std::vector<int> idx(m.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](int a, int b) {
      for (int d = 0; d < m.dim(); ++d) {
        if (m.atoms()(a, d) != m.atoms()(b, d))
          return m.atoms()(a, d) < m.atoms()(b, d);
      }
      return m.weight(a) < m.weight(b);
    });
    return idx;
  };
  std::vector<int> ia = key(mu), ib = key(nu);
  for (int r = 0; r < mu.size(); ++r) {
    if (std::abs(mu.weight(ia[r]) - nu.weight(ib[r])) > tol) return false;
    if ((mu.atoms().row(ia[r]) - nu.atoms().row(ib[r])).lpNorm<Eigen::Infinity>() > tol)
      return false;
  }
  return true;
}

}  // namespace mfg
