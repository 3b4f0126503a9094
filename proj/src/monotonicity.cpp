#include "mfg/monotonicity.hpp"

#include <cmath>

#include "mfg/parallel.hpp"

namespace mfg {

Vec FeedbackFunction::eval(const Vec& x) const {
  Vec out = Vec::Zero(x.size());
  for (int i = 0; i < a.rows(); ++i)
    out += a.row(i).transpose() * std::tanh(b.row(i).dot(x) + c(i));
  return out;
}

Mat FeedbackFunction::jacobian(const Vec& x) const {
  Mat out = Mat::Zero(x.size(), x.size());
  for (int i = 0; i < a.rows(); ++i) {
    double t = std::tanh(b.row(i).dot(x) + c(i));
    out += (1.0 - t * t) * b.row(i).transpose() * a.row(i);
  }
  return out;
}

std::function<Vec(const Vec&)> FeedbackFunction::fn() const {
  FeedbackFunction copy = *this;
  return [copy](const Vec& x) { return copy.eval(x); };
}

FeedbackFunction FeedbackFunction::random(int dim, Rng& rng, int n_features,
                                          double bound_value,
                                          double bound_slope) {
  FeedbackFunction phi;
  phi.bound_value = bound_value;
  phi.bound_slope = bound_slope;
  phi.a.resize(n_features, dim);
  phi.b.resize(n_features, dim);
  phi.c.resize(n_features);
  for (int i = 0; i < n_features; ++i) {
    for (int j = 0; j < dim; ++j) {
      phi.a(i, j) = normal(rng);
      phi.b(i, j) = normal(rng);
    }
    phi.c(i) = normal(rng);
  }
  // |phi| <= sum |a_i| and |dphi| <= sum |a_i||b_i|; rescale to the caps.
  double sa = 0.0;
  for (int i = 0; i < n_features; ++i) sa += phi.a.row(i).norm();
  if (sa > bound_value) phi.a *= bound_value / sa;
  double sab = 0.0;
  for (int i = 0; i < n_features; ++i)
    sab += phi.a.row(i).norm() * phi.b.row(i).norm();
  if (sab > bound_slope) phi.b *= bound_slope / sab;
  return phi;
}

FeedbackFunction FeedbackFunction::zero(int dim) {
  FeedbackFunction phi;
  phi.a = Mat::Zero(1, dim);
  phi.b = Mat::Zero(1, dim);
  phi.c = Vec::Zero(1);
  return phi;
}

DiscreteMeasure sample_mixture_cloud(int dim, Rng& rng, int min_atoms,
                                     int max_atoms) {
  int n = uniform_int(rng, min_atoms, max_atoms);
  int components = uniform_int(rng, 1, 3);
  Mat centers(components, dim);
  Vec sds(components);
  for (int cpt = 0; cpt < components; ++cpt) {
    for (int j = 0; j < dim; ++j) centers(cpt, j) = 2.0 * normal(rng);
    sds(cpt) = uniform(rng, 0.2, 1.5);
  }
  Mat atoms(n, dim);
  for (int i = 0; i < n; ++i) {
    int cpt = uniform_int(rng, 0, components - 1);
    for (int j = 0; j < dim; ++j)
      atoms(i, j) = centers(cpt, j) + sds(cpt) * normal(rng);
  }
  return DiscreteMeasure::uniform(std::move(atoms));
}

double displacement_form_surface(const TerminalCostModel& surface,
                                 const TangentSample& s) {
  const DiscreteMeasure& mu = s.base;
  const int n = mu.size();
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    Vec xi = mu.atom(i);
    Vec eta_i = s.tangents.row(i).transpose();
    double wi = mu.weight(i);
    for (int j = 0; j < n; ++j) {
      Vec eta_j = s.tangents.row(j).transpose();
      acc += wi * mu.weight(j) *
             eta_i.dot(surface.dxmu(xi, mu, mu.atom(j)) * eta_j);
    }
    acc += wi * eta_i.dot(surface.dxx(xi, mu) * eta_i);
  }
  return acc;
}

double lasry_lions_form(const TerminalCostModel& surface,
                        const TangentSample& s) {
  const DiscreteMeasure& mu = s.base;
  const int n = mu.size();
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    Vec xi = mu.atom(i);
    Vec eta_i = s.tangents.row(i).transpose();
    for (int j = 0; j < n; ++j)
      acc += mu.weight(i) * mu.weight(j) *
             eta_i.dot(surface.dxmu(xi, mu, mu.atom(j)) * s.tangents.row(j).transpose());
  }
  return acc;
}

double displacement_form_hamiltonian(const HamiltonianModel& h,
                                     const TangentSample& s,
                                     const FeedbackFn& phi) {
  const DiscreteMeasure& mu = s.base;
  const int n = mu.size();
  const int d = h.dim;
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    Vec xi = mu.atom(i);
    Vec eta_i = s.tangents.row(i).transpose();
    Vec pi = phi(xi);
    double wi = mu.weight(i);

    Vec cross = Vec::Zero(d);  // sum_j w_j dpmu H(x_i, mu, x_j, p_i) eta_j
    for (int j = 0; j < n; ++j) {
      Vec xj = mu.atom(j);
      Vec eta_j = s.tangents.row(j).transpose();
      acc += wi * mu.weight(j) * eta_i.dot(h.dxmu(xi, mu, xj, pi) * eta_j);
      cross += mu.weight(j) * (h.dpmu(xi, mu, xj, pi) * eta_j);
    }
    acc += wi * eta_i.dot(h.dxx(xi, mu, pi) * eta_i);

    Eigen::SelfAdjointEigenSolver<Mat> es(h.dpp(xi, mu, pi));
    if (es.eigenvalues().minCoeff() < 0.5 * h.convexity)
      throw std::runtime_error("convexity floor violated: dpp eigenvalue " +
                               std::to_string(es.eigenvalues().minCoeff()) +
                               " below c0/2 at atom " + std::to_string(i));
    Vec inv_sqrt_cross =
        es.eigenvectors() *
        (es.eigenvalues().array().rsqrt().matrix().asDiagonal()) *
        (es.eigenvectors().transpose() * cross);
    acc += 0.25 * wi * inv_sqrt_cross.squaredNorm();
  }
  return acc;
}

std::pair<double, double> lagrangian_form(const LagrangianModel& l,
                                          const TangentSample& s,
                                          const Mat& psi_values) {
  const DiscreteMeasure& mu = s.base;
  const int n = mu.size();
  if (psi_values.rows() != n || psi_values.cols() != l.dim)
    throw std::invalid_argument("lagrangian_form: psi_values shape mismatch");
  double lhs = 0.0, rhs = 0.0;
  for (int i = 0; i < n; ++i) {
    Vec xi = mu.atom(i);
    Vec eta_i = s.tangents.row(i).transpose();
    Vec ai = psi_values.row(i).transpose();
    double wi = mu.weight(i);

    Vec cross = Vec::Zero(l.dim);  // sum_j w_j damu L(x_i,mu,x_j,a_i) eta_j
    for (int j = 0; j < n; ++j) {
      Vec eta_j = s.tangents.row(j).transpose();
      lhs += wi * mu.weight(j) *
             eta_i.dot(l.dxmu(xi, mu, mu.atom(j), ai) * eta_j);
      cross += mu.weight(j) * (l.damu(xi, mu, mu.atom(j), ai) * eta_j);
    }
    lhs += wi * eta_i.dot(l.dxx(xi, mu, ai) * eta_i);

    Mat daa = l.daa(xi, mu, ai);
    Eigen::SelfAdjointEigenSolver<Mat> es(daa);
    if (es.eigenvalues().minCoeff() <= 0.0)
      throw std::runtime_error(
          "lagrangian_form: daa L not positive definite at atom " +
          std::to_string(i));
    Vec arg = 0.5 * cross + l.dxa(xi, mu, ai).transpose() * eta_i;
    Vec half = es.eigenvectors() *
               (es.eigenvalues().array().rsqrt().matrix().asDiagonal()) *
               (es.eigenvectors().transpose() * arg);
    rhs += wi * half.squaredNorm();
  }
  return {lhs, rhs};
}

namespace {

struct TrialResult {
  double margin = std::numeric_limits<double>::infinity();  // normalized
  double raw = 0.0;
  DiscreteMeasure* cloud = nullptr;
};

Mat random_tangents(int n, int dim, Rng& rng) {
  Mat t(n, dim);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < dim; ++j) t(i, j) = normal(rng);
  return t;
}

template <typename FormFn>
MonotonicityReport run_certify(const std::string& form_name, int dim,
                               bool with_feedback, const CertifyOptions& opt,
                               const FormFn& form) {
  // form(sample, feedback) -> margin-oriented value (>= 0 means fine)
  MonotonicityReport report;
  report.form_name = form_name;
  report.trials = opt.trials;
  report.tol = opt.tol;

  std::vector<double> margins(opt.trials);
  std::vector<double> raws(opt.trials);
  std::vector<std::optional<TangentSample>> samples(opt.trials);
  std::vector<std::optional<FeedbackFunction>> feedbacks(opt.trials);

  parallel_for(opt.trials, opt.threads, [&](std::size_t t) {
    Rng rng(derive_seed(opt.seed, t));
    DiscreteMeasure cloud =
        sample_mixture_cloud(dim, rng, opt.min_atoms, opt.max_atoms);
    Mat tangents = random_tangents(cloud.size(), dim, rng);
    TangentSample sample(cloud, tangents);
    FeedbackFunction phi = with_feedback ? FeedbackFunction::random(dim, rng)
                                         : FeedbackFunction::zero(dim);
    double raw = form(sample, phi);
    margins[t] = raw / (1.0 + sample.tangent_scale_sq());
    raws[t] = raw;
    samples[t].emplace(std::move(sample));
    if (with_feedback) feedbacks[t].emplace(std::move(phi));
  });

  int arg = 0;
  for (int t = 1; t < opt.trials; ++t)
    if (margins[t] < margins[arg]) arg = t;
  report.min_value = margins[arg];
  report.pass = report.min_value >= -opt.tol;
  MonotonicityWitness w{samples[arg]->base, samples[arg]->tangents,
                        feedbacks[arg], raws[arg]};
  report.witness = std::move(w);
  return report;
}

}  // namespace

MonotonicityReport certify(const HamiltonianModel& h, const CertifyOptions& opt) {
  // "<= 0" form: margin is the negated value.
  return run_certify("displacement(H)", h.dim, true, opt,
                     [&](const TangentSample& s, const FeedbackFunction& phi) {
                       return -displacement_form_hamiltonian(
                           h, s, [&phi](const Vec& x) { return phi.eval(x); });
                     });
}

MonotonicityReport certify(const TerminalCostModel& surface,
                           const CertifyOptions& opt) {
  return run_certify("displacement(U)", surface.dim, false, opt,
                     [&](const TangentSample& s, const FeedbackFunction&) {
                       return displacement_form_surface(surface, s);
                     });
}

namespace {

// Flattened ascent variables: atom positions, tangents, feedback (a, b, c).
struct AscentState {
  Mat atoms;
  Mat tangents;
  FeedbackFunction phi;
};

double eval_state(const HamiltonianModel& h, const AscentState& st) {
  Mat t = st.tangents;
  double norm_sq = 0.0;
  int n = static_cast<int>(st.atoms.rows());
  for (int i = 0; i < n; ++i) norm_sq += t.row(i).squaredNorm() / n;
  if (norm_sq < 1e-14) return 0.0;
  t /= std::sqrt(norm_sq);  // fix the scale: sum w |eta|^2 = 1
  TangentSample sample(DiscreteMeasure::uniform(st.atoms), t);
  FeedbackFunction phi = st.phi;
  return displacement_form_hamiltonian(
      h, sample, [&phi](const Vec& x) { return phi.eval(x); });
}

}  // namespace

MonotonicityReport search_violation(const HamiltonianModel& h,
                                    const SearchOptions& opt) {
  MonotonicityReport report;
  report.form_name = "displacement(H) ascent";
  report.trials = opt.steps;
  report.tol = opt.tol;

  std::vector<double> best_by_restart(opt.restarts,
                                      -std::numeric_limits<double>::infinity());
  std::vector<std::optional<AscentState>> state_by_restart(opt.restarts);

  int steps_per_restart = std::max(1, opt.steps / std::max(1, opt.restarts));
  parallel_for(opt.restarts, opt.threads, [&](std::size_t restart) {
    Rng rng(derive_seed(opt.seed, restart));
    AscentState st;
    st.atoms = Mat(opt.atoms, h.dim);
    for (int i = 0; i < opt.atoms; ++i)
      for (int j = 0; j < h.dim; ++j) st.atoms(i, j) = 1.5 * normal(rng);
    // Equal tangents seed one restart; it is the extremal direction for
    // mean-coupled models.
    if (restart == 0)
      st.tangents = Mat::Ones(opt.atoms, h.dim);
    else
      st.tangents = random_tangents(opt.atoms, h.dim, rng);
    st.phi = FeedbackFunction::random(h.dim, rng);

    double value = eval_state(h, st);
    double step = 0.1;
    const double fd = 1e-4;
    for (int it = 0; it < steps_per_restart; ++it) {
      // Forward-difference gradient over all coordinates.
      AscentState trial = st;
      auto bump_all = [&](AscentState& s, const AscentState& base, double scale,
                          const AscentState& grad) {
        s.atoms = base.atoms + scale * grad.atoms;
        s.tangents = base.tangents + scale * grad.tangents;
        s.phi = base.phi;
        s.phi.a = base.phi.a + scale * grad.phi.a;
        s.phi.b = base.phi.b + scale * grad.phi.b;
        s.phi.c = base.phi.c + scale * grad.phi.c;
      };
      AscentState grad = st;
      grad.atoms.setZero();
      grad.tangents.setZero();
      grad.phi.a.setZero();
      grad.phi.b.setZero();
      grad.phi.c.setZero();
      auto fd_slot = [&](double* slot, double* gslot) {
        double saved = *slot;
        *slot = saved + fd;
        double up = eval_state(h, trial);
        *slot = saved;
        *gslot = (up - value) / fd;
      };
      trial = st;
      for (int i = 0; i < trial.atoms.size(); ++i)
        fd_slot(trial.atoms.data() + i, grad.atoms.data() + i);
      for (int i = 0; i < trial.tangents.size(); ++i)
        fd_slot(trial.tangents.data() + i, grad.tangents.data() + i);
      for (int i = 0; i < trial.phi.a.size(); ++i)
        fd_slot(trial.phi.a.data() + i, grad.phi.a.data() + i);
      for (int i = 0; i < trial.phi.b.size(); ++i)
        fd_slot(trial.phi.b.data() + i, grad.phi.b.data() + i);
      for (int i = 0; i < trial.phi.c.size(); ++i)
        fd_slot(trial.phi.c.data() + i, grad.phi.c.data() + i);

      double gnorm = std::sqrt(grad.atoms.squaredNorm() +
                               grad.tangents.squaredNorm() +
                               grad.phi.a.squaredNorm() +
                               grad.phi.b.squaredNorm() + grad.phi.c.squaredNorm());
      if (gnorm < 1e-12) break;
      AscentState cand = st;
      bump_all(cand, st, step / gnorm, grad);
      double cand_value = eval_state(h, cand);
      if (cand_value > value) {
        st = cand;
        value = cand_value;
        step *= 1.5;
      } else {
        step *= 0.5;
        if (step < 1e-10) break;
      }
    }
    best_by_restart[restart] = value;
    state_by_restart[restart] = std::move(st);
  });

  int arg = 0;
  for (int r = 1; r < opt.restarts; ++r)
    if (best_by_restart[r] > best_by_restart[arg]) arg = r;
  double best = best_by_restart[arg];
  std::optional<AscentState>& best_state = state_by_restart[arg];

  report.min_value = -best;  // margin convention: negative margin = violation
  report.pass = best <= opt.tol;
  if (best_state) {
    Mat t = best_state->tangents;
    double norm_sq = 0.0;
    int n = static_cast<int>(best_state->atoms.rows());
    for (int i = 0; i < n; ++i) norm_sq += t.row(i).squaredNorm() / n;
    if (norm_sq > 1e-14) t /= std::sqrt(norm_sq);
    MonotonicityWitness w{DiscreteMeasure::uniform(best_state->atoms), t,
                          best_state->phi, best};
    report.witness = std::move(w);
  }
  return report;
}

}  // namespace mfg
