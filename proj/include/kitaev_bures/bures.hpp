#pragma once

// Bures / Uhlmann machinery for small dense density matrices.
//
// Conventions: F(rho, sigma) = Tr sqrt(sqrt(rho) sigma sqrt(rho)) and the
// line element ds^2 = 2 (1 - F(rho, rho + drho)). In the eigenbasis
// rho = sum_i p_i |i><i| the metric splits into
//   classical_{mu nu}    = 1/4 sum_i d_mu p_i d_nu p_i / p_i
//   nonclassical_{mu nu} = 1/2 sum_{i != j} <i|d_mu rho|j> <j|d_nu rho|i> / (p_i + p_j)
// where the second form uses (p_i - p_j) <i|d j> = <i|d rho|j>, finite at
// degenerate eigenvalues.

#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "errors.hpp"

namespace kitaev_bures::bures {

template <class Real>
using ComplexMatrix = Eigen::Matrix<std::complex<Real>, Eigen::Dynamic, Eigen::Dynamic>;
template <class Real>
using RealMatrix = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic>;
template <class Real>
using RealVector = Eigen::Matrix<Real, Eigen::Dynamic, 1>;

inline constexpr double kStateTolerance = 1e-12;
inline constexpr double kEigenvalueFloor = 1e-14;
inline constexpr double kFloorNumerator = 1e-10;

/// Hermitian, positive semidefinite, unit-trace matrix.
template <class Real = double>
class DensityMatrix {
 public:
  using Matrix = ComplexMatrix<Real>;

  explicit DensityMatrix(Matrix m) : m_(std::move(m)) {
    if (m_.rows() == 0 || m_.rows() != m_.cols())
      throw InvalidArgument("density matrix must be square and non-empty");
    const Real tol = Real(kStateTolerance);
    if ((m_ - m_.adjoint()).cwiseAbs().maxCoeff() > tol)
      throw InvalidArgument("density matrix is not Hermitian");
    m_ = (m_ + m_.adjoint()) / Real(2);
    if (std::abs(m_.trace().real() - Real(1)) > tol)
      throw InvalidArgument("density matrix trace differs from 1");
    Eigen::SelfAdjointEigenSolver<Matrix> es(m_, Eigen::EigenvaluesOnly);
    if (es.eigenvalues().minCoeff() < -tol)
      throw InvalidArgument("density matrix is not positive semidefinite");
  }

  const Matrix& matrix() const { return m_; }
  Eigen::Index dim() const { return m_.rows(); }

 private:
  Matrix m_;
};

/// Eigen-decomposition with eigenvalues sorted in descending order.
template <class Real = double>
struct SpectralDecomposition {
  RealVector<Real> eigenvalues;
  ComplexMatrix<Real> eigenvectors;  // columns

  static SpectralDecomposition of(const DensityMatrix<Real>& rho) {
    Eigen::SelfAdjointEigenSolver<ComplexMatrix<Real>> es(rho.matrix());
    const Eigen::Index n = rho.dim();
    SpectralDecomposition d;
    d.eigenvalues.resize(n);
    d.eigenvectors.resize(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      d.eigenvalues(i) = std::max(Real(0), es.eigenvalues()(n - 1 - i));
      d.eigenvectors.col(i) = es.eigenvectors().col(n - 1 - i);
    }
    return d;
  }

  ComplexMatrix<Real> reconstruct() const {
    return eigenvectors * eigenvalues.template cast<std::complex<Real>>().asDiagonal() *
           eigenvectors.adjoint();
  }
};

template <class Real = double>
struct MetricDecomposition {
  RealMatrix<Real> classical;
  RealMatrix<Real> nonclassical;

  RealMatrix<Real> total() const { return classical + nonclassical; }
};

/// Square root of a PSD Hermitian matrix; eigenvalues in [-1e-12, 0) are
/// clipped, anything more negative is rejected.
template <class Real>
ComplexMatrix<Real> sqrt_psd(const ComplexMatrix<Real>& m) {
  Eigen::SelfAdjointEigenSolver<ComplexMatrix<Real>> es(m);
  RealVector<Real> ev = es.eigenvalues();
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (ev(i) < -Real(kStateTolerance))
      throw InvalidArgument("matrix square root of a non-PSD matrix");
    ev(i) = std::sqrt(std::max(Real(0), ev(i)));
  }
  return es.eigenvectors() * ev.template cast<std::complex<Real>>().asDiagonal() *
         es.eigenvectors().adjoint();
}

template <class Real>
Real uhlmann_fidelity(const DensityMatrix<Real>& rho, const DensityMatrix<Real>& sigma) {
  if (rho.dim() != sigma.dim()) throw InvalidArgument("fidelity: dimension mismatch");
  const ComplexMatrix<Real> s = sqrt_psd<Real>(rho.matrix());
  ComplexMatrix<Real> inner = s * sigma.matrix() * s;
  inner = (inner + inner.adjoint()) / Real(2);
  Eigen::SelfAdjointEigenSolver<ComplexMatrix<Real>> es(inner, Eigen::EigenvaluesOnly);
  Real f = 0;
  for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i)
    f += std::sqrt(std::max(Real(0), es.eigenvalues()(i)));
  return std::min(f, Real(1));
}

/// Squared Bures distance 2 (1 - F). For qubits 1 - F^2 equals
/// (|r - r'|^2 + (s - s')^2) / 4 in Bloch vectors r with s = sqrt(4 det rho),
/// which avoids the cancellation in 1 - F when the states are close.
template <class Real>
Real bures_distance_squared(const DensityMatrix<Real>& rho, const DensityMatrix<Real>& sigma) {
  if (rho.dim() != sigma.dim()) throw InvalidArgument("fidelity: dimension mismatch");
  if (rho.dim() != 2) return Real(2) * (Real(1) - uhlmann_fidelity(rho, sigma));
  const auto& a = rho.matrix();
  const auto& b = sigma.matrix();
  const Real dx = Real(2) * (a(0, 1).real() - b(0, 1).real());
  const Real dy = Real(2) * (a(0, 1).imag() - b(0, 1).imag());
  const Real dz = (a(0, 0).real() - a(1, 1).real()) - (b(0, 0).real() - b(1, 1).real());
  auto root_det = [](const ComplexMatrix<Real>& m) {
    const Real det = m(0, 0).real() * m(1, 1).real() - std::norm(m(0, 1));
    return std::sqrt(std::max(Real(0), Real(4) * det));
  };
  const Real ds = root_det(a) - root_det(b);
  // q = 1 - F^2, and 2 (1 - F) = 2 q / (1 + sqrt(1 - q)).
  const Real q = std::min(Real(1), (dx * dx + dy * dy + dz * dz + ds * ds) / Real(4));
  return Real(2) * q / (Real(1) + std::sqrt(Real(1) - q));
}

/// How the off-diagonal nonclassical terms combine the two matrix elements.
/// `ModuliProduct` takes |<i|d_mu rho|j>| |<i|d_nu rho|j>| literally; it
/// agrees with `RealPart` on the diagonal but loses the sign of cross terms.
/// Only `RealPart` agrees with the finite-difference fidelity metric.
enum class CrossTerm { RealPart, ModuliProduct };

template <class Real>
MetricDecomposition<Real> analytic_metric(const SpectralDecomposition<Real>& decomp,
                                          std::span<const ComplexMatrix<Real>> drho,
                                          CrossTerm convention = CrossTerm::RealPart) {
  const Eigen::Index n = decomp.eigenvalues.size();
  const auto k = static_cast<Eigen::Index>(drho.size());
  std::vector<ComplexMatrix<Real>> a;
  a.reserve(drho.size());
  for (const auto& d : drho) {
    if (d.rows() != n || d.cols() != n) throw InvalidArgument("analytic_metric: dimension mismatch");
    if ((d - d.adjoint()).cwiseAbs().maxCoeff() > Real(kFloorNumerator))
      throw InvalidArgument("analytic_metric: derivative is not Hermitian");
    if (std::abs(d.trace()) > Real(kFloorNumerator))
      throw InvalidArgument("analytic_metric: derivative is not traceless");
    a.push_back(decomp.eigenvectors.adjoint() * d * decomp.eigenvectors);
  }

  MetricDecomposition<Real> out;
  out.classical = RealMatrix<Real>::Zero(k, k);
  out.nonclassical = RealMatrix<Real>::Zero(k, k);
  const auto& p = decomp.eigenvalues;

  for (Eigen::Index i = 0; i < n; ++i) {
    bool negligible = true;
    for (Eigen::Index mu = 0; mu < k; ++mu)
      negligible = negligible && std::abs(a[mu](i, i).real()) < Real(kFloorNumerator);
    if (p(i) < Real(kEigenvalueFloor)) {
      if (negligible) continue;
      throw InvalidArgument("analytic_metric: population derivative at a vanishing eigenvalue");
    }
    for (Eigen::Index mu = 0; mu < k; ++mu)
      for (Eigen::Index nu = 0; nu <= mu; ++nu)
        out.classical(mu, nu) += a[mu](i, i).real() * a[nu](i, i).real() / p(i);
  }

  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      if (i == j) continue;
      const Real s = p(i) + p(j);
      if (s < Real(kEigenvalueFloor)) {
        bool negligible = true;
        for (Eigen::Index mu = 0; mu < k; ++mu)
          negligible = negligible && std::abs(a[mu](i, j)) < Real(kFloorNumerator);
        if (negligible) continue;
        throw InvalidArgument("analytic_metric: coherence between vanishing eigenvalues");
      }
      for (Eigen::Index mu = 0; mu < k; ++mu) {
        for (Eigen::Index nu = 0; nu <= mu; ++nu) {
          const auto x = a[mu](i, j);
          const auto y = a[nu](i, j);
          const Real term = convention == CrossTerm::RealPart
                                ? (x * std::conj(y)).real()
                                : std::abs(x) * std::abs(y);
          out.nonclassical(mu, nu) += term / s;
        }
      }
    }
  }

  out.classical *= Real(0.25);
  out.nonclassical *= Real(0.5);
  for (Eigen::Index mu = 0; mu < k; ++mu) {
    for (Eigen::Index nu = 0; nu < mu; ++nu) {
      out.classical(nu, mu) = out.classical(mu, nu);
      out.nonclassical(nu, mu) = out.nonclassical(mu, nu);
    }
  }
  return out;
}

template <class Real>
using Family = std::function<DensityMatrix<Real>(const RealVector<Real>&)>;

/// Parameter derivatives d rho / d lambda_mu by central differences with one
/// Richardson level. `step` is relative to max(1, |lambda_mu|).
template <class Real>
std::vector<ComplexMatrix<Real>> family_derivatives(const Family<Real>& family,
                                                    const RealVector<Real>& lambda0,
                                                    Real step) {
  if (!(step > 0)) throw InvalidArgument("family_derivatives: step must be positive");
  std::vector<ComplexMatrix<Real>> out;
  for (Eigen::Index mu = 0; mu < lambda0.size(); ++mu) {
    const Real h = step * std::max(Real(1), std::abs(lambda0(mu)));
    auto central = [&](Real hh) {
      RealVector<Real> lp = lambda0, lm = lambda0;
      lp(mu) += hh;
      lm(mu) -= hh;
      return ComplexMatrix<Real>((family(lp).matrix() - family(lm).matrix()) / (lp(mu) - lm(mu)));
    };
    ComplexMatrix<Real> d = (Real(4) * central(h / 2) - central(h)) / Real(3);
    out.push_back((d + d.adjoint()) / Real(2));
  }
  return out;
}

/// Bures metric from fidelities between symmetric neighbours:
/// D(h) = 2 (1 - F(rho(l - h u/2), rho(l + h u/2))) / h^2, refined as
/// (4 D(h/2) - D(h)) / 3. Off-diagonal entries by polarization along
/// e_mu + e_nu.
template <class Real>
RealMatrix<Real> finite_difference_metric(const Family<Real>& family,
                                          const RealVector<Real>& lambda0, Real step) {
  if (!(step > 0)) throw InvalidArgument("finite_difference_metric: step must be positive");
  const Eigen::Index k = lambda0.size();

  auto along = [&](const RealVector<Real>& u) {
    auto d = [&](Real h) {
      const RealVector<Real> lp = lambda0 + (h / 2) * u;
      const RealVector<Real> lm = lambda0 - (h / 2) * u;
      return bures_distance_squared(family(lm), family(lp)) / (h * h);
    };
    return (Real(4) * d(step / 2) - d(step)) / Real(3);
  };

  RealMatrix<Real> g = RealMatrix<Real>::Zero(k, k);
  for (Eigen::Index mu = 0; mu < k; ++mu) g(mu, mu) = along(RealVector<Real>::Unit(k, mu));
  for (Eigen::Index mu = 0; mu < k; ++mu) {
    for (Eigen::Index nu = 0; nu < mu; ++nu) {
      const RealVector<Real> u = RealVector<Real>::Unit(k, mu) + RealVector<Real>::Unit(k, nu);
      g(mu, nu) = g(nu, mu) = (along(u) - g(mu, mu) - g(nu, nu)) / 2;
    }
  }
  return g;
}

/// Observable whose projective measurement attains the Bures bound:
/// M = rho^{-1/2} sqrt(sqrt(rho) sigma sqrt(rho)) rho^{-1/2}, so that
/// Tr(rho M) = F(rho, sigma).
template <class Real>
ComplexMatrix<Real> optimal_observable(const DensityMatrix<Real>& rho,
                                       const DensityMatrix<Real>& sigma) {
  if (rho.dim() != sigma.dim()) throw InvalidArgument("optimal_observable: dimension mismatch");
  Eigen::SelfAdjointEigenSolver<ComplexMatrix<Real>> es(rho.matrix());
  if (es.eigenvalues().minCoeff() <= Real(kEigenvalueFloor))
    throw InvalidArgument("optimal_observable: rho is singular");
  const RealVector<Real> root = es.eigenvalues().cwiseSqrt();
  const auto& v = es.eigenvectors();
  const ComplexMatrix<Real> s = v * root.template cast<std::complex<Real>>().asDiagonal() * v.adjoint();
  const ComplexMatrix<Real> s_inv =
      v * root.cwiseInverse().template cast<std::complex<Real>>().asDiagonal() * v.adjoint();
  ComplexMatrix<Real> inner = s * sigma.matrix() * s;
  inner = (inner + inner.adjoint()) / Real(2);
  ComplexMatrix<Real> m = s_inv * sqrt_psd<Real>(inner) * s_inv;
  return (m + m.adjoint()) / Real(2);
}

}  // namespace kitaev_bures::bures
