#pragma once

// Exact evaluators for the parity identities and the calibration of the
// discrete constants (height gap, beta per u^2, local-time unit).

#include "loopsoup/excursions.hpp"
#include "loopsoup/gff.hpp"
#include "loopsoup/lattice.hpp"
#include "loopsoup/random.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

namespace loopsoup {

struct CalibrationConstants {
  double height_gap = 0.5;       // 2 lambda on the lattice
  double beta_per_u2 = 0.25;     // beta = beta_per_u2 * u^2
  double local_time_unit = 1.0;  // mean holding time is unit / deg
  double excursion_unit = 1.0;   // kappa: beta = u^2 (2 lambda)^2 kappa

  double beta(double u) const { return beta_per_u2 * u * u; }
  /// Boundary value c of u * Phi, i.e. u times the height gap.
  double boundary_value(double u) const { return u * height_gap; }
  friend bool operator==(const CalibrationConstants&,
                         const CalibrationConstants&) = default;
};

struct IdentityReport {
  std::string name;
  double lhs = 0.0;
  double rhs = 0.0;
  double abs_err = 0.0;
  double z_score = 0.0;  // MC estimate vs exact; 0 when no MC was run
  double mc_estimate = std::numeric_limits<double>::quiet_NaN();
  double mc_std_error = std::numeric_limits<double>::quiet_NaN();
  long n_samples = 0;
  std::uint64_t seed = 0;

  nlohmann::json to_json() const {
    nlohmann::json j = {{"lhs", lhs},         {"rhs", rhs},
                        {"abs_err", abs_err}, {"z_score", z_score},
                        {"n_samples", n_samples}, {"seed", seed}};
    if (!name.empty()) j["name"] = name;
    if (n_samples > 0) {
      j["mc_estimate"] = mc_estimate;
      j["mc_std_error"] = mc_std_error;
    }
    return j;
  }
};

// ---------------------------------------------------------------------------
// Spin law

/// Symmetric n x n couplings, zero diagonal.
struct CouplingMatrix {
  Eigen::MatrixXd m;
  int size() const { return static_cast<int>(m.rows()); }
};

/// m_ij = beta |mu_ij| for i != j.
inline CouplingMatrix coupling_matrix(const LatticeAnalysis& lat, double beta) {
  const int n = lat.domain.arc_count();
  CouplingMatrix c{Eigen::MatrixXd::Zero(n, n)};
  for (int i = 1; i <= n; ++i)
    for (int j = i + 1; j <= n; ++j)
      c.m(i - 1, j - 1) = c.m(j - 1, i - 1) = beta * lat.arc_mass(i, j);
  return c;
}

/// p(a) for a in {-1,1}^n.  Index bit i set means a_i = -1.
struct SpinLaw {
  int n = 0;
  std::vector<double> p;
  double log_z = 0.0;

  static int spin(std::size_t a, int i) { return ((a >> i) & 1u) ? -1 : 1; }
  double operator()(const std::vector<int>& spins) const {
    std::size_t a = 0;
    for (int i = 0; i < n; ++i)
      if (spins[i] < 0) a |= std::size_t{1} << i;
    return p[a];
  }
};

namespace detail {
/// sum_{i<j} a_i a_j w_ij for all 2^n spin configurations.
inline std::vector<double> spin_energies(const Eigen::MatrixXd& w) {
  const int n = static_cast<int>(w.rows());
  if (n > 24) throw std::invalid_argument("spin sums limited to 24 arcs");
  const std::size_t states = std::size_t{1} << n;
  std::vector<double> e(states, 0.0);
  for (std::size_t a = 0; a < states; ++a) {
    double s = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j)
        s += SpinLaw::spin(a, i) * SpinLaw::spin(a, j) * w(i, j);
    e[a] = s;
  }
  return e;
}

inline double log_sum_exp(const std::vector<double>& xs) {
  const double mx = *std::max_element(xs.begin(), xs.end());
  double s = 0.0;
  for (double x : xs) s += std::exp(x - mx);
  return mx + std::log(s);
}
}  // namespace detail

inline SpinLaw spin_law(const CouplingMatrix& c) {
  SpinLaw law;
  law.n = c.size();
  if (law.n == 0) {
    law.p = {1.0};
    return law;
  }
  const auto e = detail::spin_energies(c.m);
  law.log_z = detail::log_sum_exp(e);
  law.p.resize(e.size());
  for (std::size_t a = 0; a < e.size(); ++a) law.p[a] = std::exp(e[a] - law.log_z);
  return law;
}

// ---------------------------------------------------------------------------
// Excursion Laplace functionals

namespace detail {
/// h_i^T K h_j - h_i^T K G_k K h_j: the mu_ij-mass of (1 - exp(-T_e(k)))
/// for unit local time.
inline double killed_pair_mass(const Eigen::VectorXd& kv,
                               const Eigen::LLT<Eigen::MatrixXd>& killed,
                               const Eigen::VectorXd& hi,
                               const Eigen::VectorXd& hj) {
  const Eigen::VectorXd khi = kv.cwiseProduct(hi), khj = kv.cwiseProduct(hj);
  return hi.dot(khj) - khi.dot(killed.solve(khj));
}
}  // namespace detail

/// beta * mu_ij(exp(-T_e(k))) for the pair {i, j}; the same-arc pair uses
/// the unoriented (halved) measure.  k is scaled by the local-time unit.
inline double pair_laplace(const LatticeAnalysis& lat, int i, int j,
                           const ScalarField& k, double beta,
                           double local_time_unit = 1.0) {
  const DomainGraph& d = lat.domain;
  const Eigen::VectorXd kv = local_time_unit * interior_part(d, k);
  if ((kv.array() < 0.0).any())
    throw std::invalid_argument("killing rate must be non-negative");
  const auto killed = detail::factor(precision_matrix(d, kv));
  const double killed_mass = detail::killed_pair_mass(
      kv, killed, lat.arc_harmonic(i), lat.arc_harmonic(j));
  const double f = i == j ? 0.5 : 1.0;
  return f * beta * (lat.arc_mass(i, j) - killed_mass);
}

/// beta |mu_ij| - u^2 sum Phi_i Phi_j k + u^2 Phi_i^T K G_k K Phi_j with
/// Phi_i = (2 lambda) h_i, times the calibrated excursion unit.  Same-arc
/// pairs are halved.
inline double excursion_laplace_exact(const LatticeAnalysis& lat,
                                      const CalibrationConstants& cal, int i,
                                      int j, const ScalarField& k, double u) {
  const DomainGraph& d = lat.domain;
  const Eigen::VectorXd kv = cal.local_time_unit * interior_part(d, k);
  if ((kv.array() < 0.0).any())
    throw std::invalid_argument("killing rate must be non-negative");
  const auto killed = detail::factor(precision_matrix(d, kv));
  const Eigen::VectorXd phi_i = cal.height_gap * lat.arc_harmonic(i);
  const Eigen::VectorXd phi_j = cal.height_gap * lat.arc_harmonic(j);
  const double beta = cal.beta(u);
  const double f = i == j ? 0.5 : 1.0;
  const double direct = phi_i.cwiseProduct(phi_j).dot(kv);
  const Eigen::VectorXd kphi_j = kv.cwiseProduct(phi_j);
  const double quad = kv.cwiseProduct(phi_i).dot(killed.solve(kphi_j));
  return f * (beta * lat.arc_mass(i, j) -
              cal.excursion_unit * u * u * (direct - quad));
}

// ---------------------------------------------------------------------------
// Dynkin identity

namespace detail {
/// The domain with all arcs merged into the set where Phi is imposed; an
/// unlabelled domain uses the whole boundary as a single arc.
inline const DomainGraph& dynkin_domain(const DomainGraph& d,
                                        std::unique_ptr<DomainGraph>& keep) {
  if (d.arc_count() > 0) return d;
  std::vector<int> labels(d.vertex_count(), kUnlabeled);
  for (VertexId v : d.boundary_vertices()) labels[v] = 1;
  keep = std::make_unique<DomainGraph>(d.relabeled(labels));
  return *keep;
}

inline ScalarField boundary_indicator(const DomainGraph& d) {
  ScalarField f = ScalarField::zeros(d);
  for (VertexId v : d.boundary_vertices())
    if (d.arc_of(v) != kUnlabeled) f.values[v] = 1.0;
  return f;
}
}  // namespace detail

/// Both sides of the Dynkin identity, exact.  lhs: Laplace transform of the
/// renormalised square of h + u Phi.  rhs: centred part times the Laplace
/// transform of the excursion PPP over every arc pair.
inline IdentityReport dynkin_exact(const DomainGraph& domain,
                                   const CalibrationConstants& cal, double u,
                                   const ScalarField& k) {
  std::unique_ptr<DomainGraph> keep;
  const LatticeAnalysis lat(detail::dynkin_domain(domain, keep));
  const DomainGraph& d = lat.domain;
  ScalarField phi = harmonic_extension(d, detail::boundary_indicator(d));
  phi.values *= u * cal.height_gap;

  IdentityReport r;
  r.name = "dynkin";
  r.lhs = laplace_shifted_square(lat, k, phi);
  double killed_total = 0.0;
  for (int i = 1; i <= d.arc_count(); ++i)
    for (int j = i; j <= d.arc_count(); ++j) {
      const double full = (i == j ? 0.5 : 1.0) * cal.beta(u) * lat.arc_mass(i, j);
      killed_total += full - excursion_laplace_exact(lat, cal, i, j, k, u);
    }
  r.rhs = laplace_centered_square(lat, k) * std::exp(-killed_total);
  r.abs_err = std::abs(r.lhs - r.rhs);
  return r;
}

struct MeanEstimate {
  double mean = 0.0;
  double std_error = 0.0;
};

inline MeanEstimate mean_estimate(const std::vector<double>& xs) {
  MeanEstimate m;
  const double n = static_cast<double>(xs.size());
  if (xs.empty()) return m;
  double s = 0.0;
  for (double x : xs) s += x;
  m.mean = s / n;
  double ss = 0.0;
  for (double x : xs) ss += (x - m.mean) * (x - m.mean);
  m.std_error = xs.size() > 1 ? std::sqrt(ss / (n - 1.0) / n) : 0.0;
  return m;
}

/// dynkin_exact plus a Monte-Carlo estimate of each side: lhs from GFF
/// samples with boundary data, rhs from an independent centred GFF and an
/// excursion PPP.  z_score is the larger of the two |z|.
inline IdentityReport dynkin_check(const DomainGraph& domain,
                                   const CalibrationConstants& cal, double u,
                                   const ScalarField& k, long samples = 0,
                                   std::uint64_t seed = 0, int workers = 1) {
  IdentityReport r = dynkin_exact(domain, cal, u, k);
  r.seed = seed;
  if (samples <= 0) return r;

  std::unique_ptr<DomainGraph> keep;
  auto lat = std::make_shared<const LatticeAnalysis>(
      detail::dynkin_domain(domain, keep));
  const DomainGraph& d = lat->domain;
  ScalarField phi = harmonic_extension(d, detail::boundary_indicator(d));
  phi.values *= u * cal.height_gap;
  const GffSampler gff(lat);
  std::unique_ptr<ExcursionSampler> exc;
  if (cal.beta(u) > 0.0 && d.arc_count() > 0)
    exc = std::make_unique<ExcursionSampler>(lat, cal.beta(u), cal.local_time_unit);
  const ScalarField zero_bc = ScalarField::zeros(d);
  const Eigen::VectorXd kv = interior_part(d, k);

  struct Pair { double lhs, rhs; };
  const auto vals = run_replicas<Pair>(
      static_cast<std::size_t>(samples), workers, [&](std::size_t rep) {
        Rng rng = make_stream(seed, rep, 0x64796e6b);
        const GffSample h1 = gff.sample(zero_bc, rng);
        const GffSample h2 = gff.sample(zero_bc, rng);
        const ScalarField shifted = renormalized_square(h1, phi);
        const ScalarField centred =
            renormalized_square(h2, ScalarField::zeros(d));
        double t = 0.0;
        if (exc) t = occupation_functional(exc->sample(rng), k);
        return Pair{std::exp(-0.5 * interior_part(d, shifted).dot(kv)),
                    std::exp(-0.5 * interior_part(d, centred).dot(kv) - t)};
      });
  std::vector<double> a, b;
  for (const auto& v : vals) {
    a.push_back(v.lhs);
    b.push_back(v.rhs);
  }
  const MeanEstimate ma = mean_estimate(a), mb = mean_estimate(b);
  const double za = ma.std_error > 0 ? (ma.mean - r.lhs) / ma.std_error : 0.0;
  const double zb = mb.std_error > 0 ? (mb.mean - r.rhs) / mb.std_error : 0.0;
  r.mc_estimate = mb.mean;
  r.mc_std_error = mb.std_error;
  r.z_score = std::abs(za) > std::abs(zb) ? za : zb;
  r.n_samples = samples;
  return r;
}

// ---------------------------------------------------------------------------
// Calibration

struct CalibrationReport {
  CalibrationConstants constants;
  double dynkin_residual_anchor = 0.0;   // 1-vertex graph, u = 1, k = 1
  double dynkin_residual_validation = 0.0;  // 2x2 grid
  double lejan_mean_residual = 0.0;
  double lejan_variance_residual = 0.0;
  double coupling_ratio = 0.0;    // m_ij / |mu_ij|, compare with 1/4
  double coupling_vs_form = 0.0;  // m_ij / dirichlet_form(Phi_i, Phi_j)
  bool ok = false;
  std::string diagnostic;

  nlohmann::json to_json() const {
    return {{"height_gap", constants.height_gap},
            {"beta_per_u2", constants.beta_per_u2},
            {"local_time_unit", constants.local_time_unit},
            {"excursion_unit", constants.excursion_unit},
            {"dynkin_residual_anchor", dynkin_residual_anchor},
            {"dynkin_residual_validation", dynkin_residual_validation},
            {"lejan_mean_residual", lejan_mean_residual},
            {"lejan_variance_residual", lejan_variance_residual},
            {"coupling_ratio", coupling_ratio},
            {"coupling_ratio_target", 0.25},
            {"coupling_vs_dirichlet_form", coupling_vs_form},
            {"ok", ok},
            {"diagnostic", diagnostic}};
  }
};

/// Pins the discrete constants by exact computations on the one-vertex
/// graph and validates them on the 2x2 grid.
///
///  * kappa: ratio of the Gaussian side of the Dynkin identity to the raw
///    excursion path sum sum_{a,b} (K - B^T G_k B)(a,b) / 2, both with unit
///    boundary data;
///  * 2 lambda: chosen so that beta = u^2 / 4;
///  * local-time unit: so that the loop soup at alpha = 1/2 has mean
///    occupation G(x,x) / 2.
inline CalibrationReport calibrate() {
  CalibrationReport rep;
  CalibrationConstants& c = rep.constants;
  const DomainGraph one = build_rect_domain(
      1, 1, {{Side::left, 0, -1, 1}, {Side::right, 0, -1, 1},
             {Side::bottom, 0, -1, 1}, {Side::top, 0, -1, 1}});
  const LatticeAnalysis lat(one);
  const ScalarField k1 = ScalarField::constant(one, 1.0, Support::interior);

  // Gaussian side, boundary value 1.
  const ScalarField phi = harmonic_extension(one, arc_indicator(one, 1));
  const double gauss =
      std::log(laplace_shifted_square(lat, k1, phi) /
               laplace_centered_square(lat, k1));
  // Excursion side by the walk path sum: each interior visit contributes
  // deg / (deg + k) from its exponential holding time, so the killed kernel
  // is B^T G_k B.
  const Eigen::MatrixXd gk =
      detail::factor(precision_matrix(one, interior_part(one, k1)))
          .solve(Eigen::MatrixXd::Identity(1, 1));
  const Eigen::MatrixXd killed_kernel = lat.coupling.transpose() * gk * lat.coupling;
  const double path_sum = -0.5 * (lat.kernel - killed_kernel).sum();
  if (!(path_sum < 0.0)) {
    rep.diagnostic = "degenerate anchor: excursion path sum is zero";
    return rep;
  }
  c.excursion_unit = gauss / path_sum;
  c.beta_per_u2 = 0.25;
  c.height_gap = std::sqrt(c.beta_per_u2 / c.excursion_unit);

  // Loop soup on the anchor: trivial loops only, Gamma(alpha, deg / unit).
  const double g = lat.green(0, 0);
  const double deg = one.degree(one.interior_vertex(0));
  const double alpha = 0.5;
  c.local_time_unit = (0.5 * g) / (alpha / deg);
  rep.lejan_mean_residual =
      std::abs(alpha * c.local_time_unit / deg - 0.5 * g);
  rep.lejan_variance_residual = std::abs(
      alpha * c.local_time_unit * c.local_time_unit / (deg * deg) - 0.5 * g * g);

  rep.dynkin_residual_anchor = dynkin_exact(one, c, 1.0, k1).abs_err;

  // Coupling: top vs bottom on the anchor.
  const DomainGraph two_arc = build_rect_domain(
      1, 1, {{Side::top, 0, -1, 1}, {Side::bottom, 0, -1, 2}});
  const LatticeAnalysis lat2(two_arc);
  const double m12 = c.beta(1.0) * lat2.arc_mass(1, 2);
  ScalarField phi1 = harmonic_extension(two_arc, arc_indicator(two_arc, 1));
  ScalarField phi2 = harmonic_extension(two_arc, arc_indicator(two_arc, 2));
  phi1.values *= c.height_gap;
  phi2.values *= c.height_gap;
  rep.coupling_ratio = m12 / lat2.arc_mass(1, 2);
  rep.coupling_vs_form = m12 / dirichlet_form(two_arc, phi1, phi2);

  // Validation on the 2x2 grid, arcs = the four sides, non-constant k.
  const DomainGraph grid = build_rect_domain(
      2, 2, {{Side::left, 0, -1, 1}, {Side::top, 0, -1, 2},
             {Side::right, 0, -1, 3}, {Side::bottom, 0, -1, 4}});
  ScalarField kg = ScalarField::zeros(grid, Support::interior);
  const double rates[] = {0.3, 0.7, 1.1, 0.5};
  for (int i = 0; i < 4; ++i) kg.values[grid.interior_vertex(i)] = rates[i];
  rep.dynkin_residual_validation = dynkin_exact(grid, c, 1.0, kg).abs_err;

  std::ostringstream diag;
  rep.ok = true;
  auto require = [&](bool cond, const char* what, double value) {
    if (!cond) {
      rep.ok = false;
      diag << what << " = " << value << "; ";
    }
  };
  require(std::isfinite(c.excursion_unit) && c.excursion_unit > 0,
          "excursion unit", c.excursion_unit);
  require(rep.dynkin_residual_anchor < 1e-12, "anchor Dynkin residual",
          rep.dynkin_residual_anchor);
  require(rep.dynkin_residual_validation < 1e-10, "2x2 Dynkin residual",
          rep.dynkin_residual_validation);
  require(rep.lejan_variance_residual < 1e-12, "Le Jan variance residual",
          rep.lejan_variance_residual);
  require(std::abs(std::abs(rep.coupling_vs_form) - 1.0) < 1e-12,
          "|m_ij / dirichlet_form(Phi_i, Phi_j)|", rep.coupling_vs_form);
  rep.diagnostic = rep.ok ? "consistent" : diag.str();
  return rep;
}

// ---------------------------------------------------------------------------
// Random-current identity

/// Exact E[prod_{i<j} exp(-T_ij(k)) | every N_i even] for the cross-arc PPP
/// with intensity beta:
///   sum_a prod exp(a_i a_j M_ij(k)) / sum_a prod exp(a_i a_j beta |mu_ij|),
/// M_ij(k) = beta mu_ij(exp(-T_e(k))).
inline double random_current_exact(const LatticeAnalysis& lat,
                                   const ScalarField& k, double beta,
                                   double local_time_unit = 1.0) {
  const int n = lat.domain.arc_count();
  Eigen::MatrixXd mk = Eigen::MatrixXd::Zero(n, n), m0 = mk;
  for (int i = 1; i <= n; ++i)
    for (int j = i + 1; j <= n; ++j) {
      mk(i - 1, j - 1) = mk(j - 1, i - 1) =
          pair_laplace(lat, i, j, k, beta, local_time_unit);
      m0(i - 1, j - 1) = m0(j - 1, i - 1) = beta * lat.arc_mass(i, j);
    }
  return std::exp(detail::log_sum_exp(detail::spin_energies(mk)) -
                  detail::log_sum_exp(detail::spin_energies(m0)));
}

/// Exact right side and Monte-Carlo left side for several killing fields,
/// sharing the same parity-conditioned samples.
inline std::vector<IdentityReport> random_current_identity(
    const ExcursionSampler& sampler, const std::vector<ScalarField>& ks,
    long samples, std::uint64_t seed, int workers = 1,
    ParityMethod method = ParityMethod::exact_counts,
    double local_time_unit = 1.0) {
  const LatticeAnalysis& lat = sampler.lattice();
  const ParityCountSampler counts(cross_means(sampler));
  std::vector<IdentityReport> out(ks.size());
  for (std::size_t f = 0; f < ks.size(); ++f) {
    out[f].name = "random_current";
    out[f].rhs = random_current_exact(lat, ks[f], sampler.beta(), local_time_unit);
    out[f].seed = seed;
  }
  if (samples <= 0) return out;
  const auto vals = run_replicas<std::vector<double>>(
      static_cast<std::size_t>(samples), workers, [&](std::size_t rep) {
        Rng rng = make_stream(seed, rep, 0x72637572);
        const auto r = sample_parity_conditioned(sampler, counts, method, rng);
        std::vector<double> v(ks.size());
        for (std::size_t f = 0; f < ks.size(); ++f)
          v[f] = std::exp(-occupation_functional(r.ensemble, ks[f]));
        return v;
      });
  for (std::size_t f = 0; f < ks.size(); ++f) {
    std::vector<double> xs;
    xs.reserve(vals.size());
    for (const auto& v : vals) xs.push_back(v[f]);
    const MeanEstimate m = mean_estimate(xs);
    IdentityReport& r = out[f];
    r.lhs = m.mean;
    r.mc_estimate = m.mean;
    r.mc_std_error = m.std_error;
    r.abs_err = std::abs(r.lhs - r.rhs);
    r.z_score = m.std_error > 0 ? (m.mean - r.rhs) / m.std_error : 0.0;
    r.n_samples = samples;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Crossing formulas for two arcs

struct CrossingFormulas {
  double p_even = 1.0;
  double p_odd = 0.0;
  double p_even_and_connected = 0.0;
  double p_even_disconnected_given_even = 1.0;
};

inline CrossingFormulas crossing_formulas(double m) {
  if (m < 0.0) throw std::invalid_argument("crossing mass must be >= 0");
  const double q = std::exp(-2.0 * m);
  CrossingFormulas f;
  f.p_even = 0.5 * (1.0 + q);
  f.p_odd = -0.5 * std::expm1(-2.0 * m);
  f.p_even_and_connected = f.p_odd;
  f.p_even_disconnected_given_even = 2.0 * q / (1.0 + q);
  return f;
}

/// sinh(beta mu_12(exp(-T_e(k)))).  Divided by its value at k = 0 this is
/// the Laplace transform of the crossing excursions given an odd number of
/// them.
inline double sinh_expression(const LatticeAnalysis& lat, const ScalarField& k,
                              double beta, double local_time_unit = 1.0) {
  return std::sinh(pair_laplace(lat, 1, 2, k, beta, local_time_unit));
}

/// E[exp(-<occupation, k>)] for the loop soup at intensity alpha:
/// det(I + G K)^{-alpha}.
inline double loop_soup_laplace(const LatticeAnalysis& lat, const ScalarField& k,
                                double alpha, double local_time_unit = 1.0) {
  const DomainGraph& d = lat.domain;
  const Eigen::VectorXd kv = local_time_unit * interior_part(d, k);
  const auto killed = detail::factor(precision_matrix(d, kv));
  return std::exp(-alpha * (detail::log_det(killed) - detail::log_det(lat.precision)));
}

}  // namespace loopsoup
