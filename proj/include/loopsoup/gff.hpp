#pragma once

// Discrete Gaussian free field: sampling, renormalised squares and exact
// Laplace functionals of squared fields.

#include "loopsoup/lattice.hpp"
#include "loopsoup/random.hpp"

#include <cmath>
#include <cstdint>
#include <memory>

namespace loopsoup {

struct GffSample {
  ScalarField field;               // interior + boundary
  ScalarField boundary_condition;  // boundary values that were imposed
  std::shared_ptr<const LatticeAnalysis> lattice;
  std::uint64_t seed = 0;  // set by callers that track provenance
};

/// Centered Gaussian with covariance G on the interior, plus the harmonic
/// extension of the boundary condition.  The Cholesky factor of the
/// precision is computed once and reused for every draw.
class GffSampler {
 public:
  explicit GffSampler(std::shared_ptr<const LatticeAnalysis> lattice)
      : lattice_(std::move(lattice)),
        upper_(lattice_->precision.matrixU()) {}

  const LatticeAnalysis& lattice() const { return *lattice_; }

  /// Interior values only, zero boundary condition.
  Eigen::VectorXd sample_centered(Rng& rng) const {
    const int n = lattice_->domain.interior_count();
    Eigen::VectorXd z(n);
    std::normal_distribution<double> normal;
    for (int i = 0; i < n; ++i) z[i] = normal(rng);
    // Q = L L^T, so x = L^{-T} z has covariance Q^{-1}.
    return upper_.triangularView<Eigen::Upper>().solve(z);
  }

  GffSample sample(const ScalarField& boundary_condition, Rng& rng) const {
    const DomainGraph& d = lattice_->domain;
    ScalarField field = harmonic_extension(d, boundary_condition);
    const Eigen::VectorXd h = sample_centered(rng);
    for (int i = 0; i < d.interior_count(); ++i)
      field.values[d.interior_vertex(i)] += h[i];
    return {std::move(field), boundary_condition, lattice_};
  }

 private:
  std::shared_ptr<const LatticeAnalysis> lattice_;
  Eigen::MatrixXd upper_;
};

inline GffSample sample_gff(const DomainGraph& domain,
                            const ScalarField& boundary_condition, Rng& rng) {
  GffSampler sampler(std::make_shared<const LatticeAnalysis>(domain));
  return sampler.sample(boundary_condition, rng);
}

/// (h + shift)^2 - G(x,x) at every interior vertex.  The sample must have
/// zero boundary condition; any boundary data is carried by `shift`.
inline ScalarField renormalized_square(const GffSample& sample,
                                       const ScalarField& shift) {
  const DomainGraph& d = sample.lattice->domain;
  ScalarField out = ScalarField::zeros(d, Support::interior);
  for (int i = 0; i < d.interior_count(); ++i) {
    const VertexId v = d.interior_vertex(i);
    const double s = sample.field[v] + shift[v];
    out.values[v] = s * s - sample.lattice->green(i, i);
  }
  return out;
}

namespace detail {
inline double log_det(const Eigen::LLT<Eigen::MatrixXd>& llt) {
  return 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
}
}  // namespace detail

/// E[exp(-1/2 [[h^2]](k))] = det(I + G K)^{-1/2} exp(1/2 tr(G K)).
inline double laplace_centered_square(const LatticeAnalysis& lat,
                                      const ScalarField& k) {
  const DomainGraph& d = lat.domain;
  const Eigen::VectorXd kv = interior_part(d, k);
  if ((kv.array() < 0.0).any())
    throw std::invalid_argument("killing rate must be non-negative");
  const auto killed = detail::factor(precision_matrix(d, kv));
  // det(I + G K) = det(Q + K) / det(Q)
  const double log_det_ratio =
      detail::log_det(killed) - detail::log_det(lat.precision);
  const double trace = (lat.green.diagonal().array() * kv.array()).sum();
  return std::exp(-0.5 * log_det_ratio + 0.5 * trace);
}

inline double laplace_centered_square(const DomainGraph& d,
                                      const ScalarField& k) {
  return laplace_centered_square(LatticeAnalysis(d), k);
}

/// E[exp(-1/2 [[(h + shift)^2]](k))]
///   = exp(-1/2 sum shift^2 k) * laplace_centered_square(k)
///     * exp(1/2 shift^T K G_k K shift).
inline double laplace_shifted_square(const LatticeAnalysis& lat,
                                     const ScalarField& k,
                                     const ScalarField& shift) {
  const DomainGraph& d = lat.domain;
  const Eigen::VectorXd kv = interior_part(d, k);
  const Eigen::VectorXd phi = interior_part(d, shift);
  const auto killed = detail::factor(precision_matrix(d, kv));
  const Eigen::VectorXd kphi = kv.cwiseProduct(phi);
  const double quad = kphi.dot(killed.solve(kphi));
  const double direct = phi.cwiseProduct(phi).dot(kv);
  return std::exp(-0.5 * direct + 0.5 * quad) *
         laplace_centered_square(lat, k);
}

inline double laplace_shifted_square(const DomainGraph& d,
                                     const ScalarField& k,
                                     const ScalarField& shift) {
  return laplace_shifted_square(LatticeAnalysis(d), k, shift);
}

}  // namespace loopsoup
