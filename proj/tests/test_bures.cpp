#include <cmath>
#include <complex>
#include <random>

#include <gtest/gtest.h>

#include "kitaev_bures/bures.hpp"

using namespace kitaev_bures;
using namespace kitaev_bures::bures;
using C = std::complex<double>;
using CM = ComplexMatrix<double>;
using RV = RealVector<double>;

namespace {

CM random_complex(std::mt19937_64& rng, int n) {
  std::normal_distribution<double> g;
  CM m(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) m(i, j) = C(g(rng), g(rng));
  return m;
}

CM random_hermitian(std::mt19937_64& rng, int n) {
  const CM a = random_complex(rng, n);
  return (a + a.adjoint()) / 2.0;
}

DensityMatrix<double> normalized(const CM& psd) { return DensityMatrix<double>(psd / psd.trace().real()); }

DensityMatrix<double> random_state(std::mt19937_64& rng, int n, double mix = 0.05) {
  const CM a = random_complex(rng, n);
  CM m = a * a.adjoint();
  m /= m.trace().real();
  m = (1 - mix) * m + mix * CM::Identity(n, n) / double(n);
  return DensityMatrix<double>(m);
}

CM random_unitary(std::mt19937_64& rng, int n) {
  Eigen::HouseholderQR<CM> qr(random_complex(rng, n));
  return qr.householderQ() * CM::Identity(n, n);
}

// exp(i H) for Hermitian H.
CM expi(const CM& h) {
  Eigen::SelfAdjointEigenSolver<CM> es(h);
  CM d = CM::Zero(h.rows(), h.cols());
  for (Eigen::Index i = 0; i < h.rows(); ++i) d(i, i) = std::exp(C(0, es.eigenvalues()(i)));
  return es.eigenvectors() * d * es.eigenvectors().adjoint();
}

DensityMatrix<double> diag_state(std::initializer_list<double> p) {
  CM m = CM::Zero(p.size(), p.size());
  int i = 0;
  for (double x : p) m(i, i) = x, ++i;
  return DensityMatrix<double>(m);
}

// Qubit (I + r (cos t sx + sin t sy)) / 2.
DensityMatrix<double> qubit(double r, double t) {
  CM m(2, 2);
  m << 0.5, C(r * std::cos(t) / 2, -r * std::sin(t) / 2), C(r * std::cos(t) / 2, r * std::sin(t) / 2), 0.5;
  return DensityMatrix<double>(m);
}

MetricDecomposition<double> analytic_of(const Family<double>& f, const RV& l0,
                                        CrossTerm conv = CrossTerm::RealPart) {
  const auto d = SpectralDecomposition<double>::of(f(l0));
  const auto drho = family_derivatives<double>(f, l0, 1e-3);
  return analytic_metric<double>(d, std::span<const CM>(drho), conv);
}

double min_eigen(const RealMatrix<double>& m) {
  Eigen::SelfAdjointEigenSolver<RealMatrix<double>> es(m);
  return es.eigenvalues().minCoeff();
}

// Entry (a, b) against the Cauchy-Schwarz scale sqrt(g_aa g_bb).
void expect_close_metric(const RealMatrix<double>& got, const RealMatrix<double>& want, double tol) {
  for (Eigen::Index a = 0; a < got.rows(); ++a)
    for (Eigen::Index b = 0; b < got.cols(); ++b) {
      const double scale = std::max({std::abs(want(a, b)), std::sqrt(std::abs(want(a, a) * want(b, b))), 1e-12});
      EXPECT_LE(std::abs(got(a, b) - want(a, b)) / scale, tol) << "entry " << a << "," << b;
    }
}

}  // namespace

TEST(DensityMatrix, Validation) {
  CM m(2, 2);
  m << 0.5, 0.1, 0.2, 0.5;
  EXPECT_THROW(DensityMatrix<double>{m}, InvalidArgument);
  m << 0.6, 0, 0, 0.6;
  EXPECT_THROW(DensityMatrix<double>{m}, InvalidArgument);
  m << 1.2, 0, 0, -0.2;
  EXPECT_THROW(DensityMatrix<double>{m}, InvalidArgument);
  EXPECT_THROW(DensityMatrix<double>{CM(2, 3)}, InvalidArgument);
  m << 0.7, 0, 0, 0.3;
  EXPECT_NO_THROW(DensityMatrix<double>{m});
}

TEST(SpectralDecomposition, SortedAndReconstructs) {
  std::mt19937_64 rng(21);
  for (int n = 2; n <= 8; ++n) {
    const auto rho = random_state(rng, n);
    const auto d = SpectralDecomposition<double>::of(rho);
    for (int i = 0; i + 1 < n; ++i) EXPECT_GE(d.eigenvalues(i), d.eigenvalues(i + 1));
    EXPECT_LT((d.reconstruct() - rho.matrix()).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(Fidelity, Examples) {
  std::mt19937_64 rng(22);
  for (int n = 2; n <= 6; ++n) {
    const auto rho = random_state(rng, n);
    EXPECT_NEAR(uhlmann_fidelity(rho, rho), 1.0, 1e-10);
  }
  EXPECT_NEAR(uhlmann_fidelity(diag_state({0.7, 0.3}), diag_state({0.4, 0.6})),
              std::sqrt(0.28) + std::sqrt(0.18), 1e-14);
  CM plus(2, 2);
  plus << 0.5, 0.5, 0.5, 0.5;
  EXPECT_NEAR(uhlmann_fidelity(diag_state({1, 0}), DensityMatrix<double>(plus)), 1 / std::sqrt(2.0), 1e-12);
}

TEST(Fidelity, BoundsSymmetryUnitaryInvariance) {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 2 + trial % 5;
    const auto rho = random_state(rng, n), sigma = random_state(rng, n);
    const double f = uhlmann_fidelity(rho, sigma);
    EXPECT_GE(f, 0.0);
    EXPECT_LE(f, 1.0);
    EXPECT_NEAR(f, uhlmann_fidelity(sigma, rho), 1e-10);
    const CM u = random_unitary(rng, n);
    const DensityMatrix<double> r2(u * rho.matrix() * u.adjoint()), s2(u * sigma.matrix() * u.adjoint());
    EXPECT_NEAR(f, uhlmann_fidelity(r2, s2), 1e-10);
  }
}

TEST(Fidelity, QubitDistanceMatchesGeneralForm) {
  std::mt19937_64 rng(29);
  for (int trial = 0; trial < 50; ++trial) {
    const auto rho = random_state(rng, 2, trial % 2 ? 0.05 : 1e-6), sigma = random_state(rng, 2);
    EXPECT_NEAR(bures_distance_squared(rho, sigma), 2 * (1 - uhlmann_fidelity(rho, sigma)), 1e-9);
  }
  const auto rho = random_state(rng, 3), sigma = random_state(rng, 3);
  EXPECT_EQ(bures_distance_squared(rho, sigma), 2 * (1 - uhlmann_fidelity(rho, sigma)));
  EXPECT_EQ(bures_distance_squared(rho, rho), 2 * (1 - uhlmann_fidelity(rho, rho)));
  EXPECT_THROW(bures_distance_squared(rho, random_state(rng, 2)), InvalidArgument);
}

TEST(AnalyticMetric, ZeroDerivativesGiveZero) {
  std::mt19937_64 rng(24);
  const auto d = SpectralDecomposition<double>::of(random_state(rng, 3));
  std::vector<CM> drho(2, CM::Zero(3, 3));
  const auto m = analytic_metric<double>(d, std::span<const CM>(drho));
  EXPECT_EQ(m.classical.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(m.nonclassical.cwiseAbs().maxCoeff(), 0.0);
}

TEST(AnalyticMetric, RejectsInvalidDerivatives) {
  std::mt19937_64 rng(25);
  const auto d = SpectralDecomposition<double>::of(random_state(rng, 2));
  std::vector<CM> bad = {CM::Identity(2, 2)};
  EXPECT_THROW(analytic_metric<double>(d, std::span<const CM>(bad)), InvalidArgument);
  CM nh(2, 2);
  nh << 0, 1, 0, 0;
  bad = {nh};
  EXPECT_THROW(analytic_metric<double>(d, std::span<const CM>(bad)), InvalidArgument);
}

TEST(AnalyticMetric, QubitRotationIsPurelyNonclassical) {
  for (double r : {0.2, 0.5, 0.9}) {
    const Family<double> f = [r](const RV& l) { return qubit(r, l(0)); };
    const RV l0 = RV::Constant(1, 0.4);
    const auto m = analytic_of(f, l0);
    EXPECT_NEAR(m.nonclassical(0, 0), r * r / 4, 1e-9);
    EXPECT_NEAR(m.classical(0, 0), 0.0, 1e-10);
    // Fidelity roundoff over h^2 bounds the difference quotient near 1e-6.
    EXPECT_NEAR(finite_difference_metric<double>(f, l0, 1e-4)(0, 0), r * r / 4, 2e-6);
    EXPECT_NEAR(finite_difference_metric<double>(f, l0, 1e-2)(0, 0), r * r / 4, 1e-7);
  }
}

TEST(AnalyticMetric, QubitRadialIsFisherInformation) {
  for (double r : {0.1, 0.5, 0.8}) {
    const Family<double> f = [](const RV& l) { return qubit(l(0), 0.3); };
    const RV l0 = RV::Constant(1, r);
    const auto m = analytic_of(f, l0);
    EXPECT_NEAR(m.classical(0, 0), 1 / (4 * (1 - r * r)), 1e-8);
    EXPECT_NEAR(m.nonclassical(0, 0), 0.0, 1e-10);
  }
}

TEST(FiniteDifferenceMetric, ConstantFamilyIsZero) {
  std::mt19937_64 rng(26);
  const auto rho = random_state(rng, 3);
  const Family<double> f = [rho](const RV&) { return rho; };
  EXPECT_LT(finite_difference_metric<double>(f, RV::Zero(3), 1e-4).cwiseAbs().maxCoeff(), 2e-6);
  EXPECT_LT(finite_difference_metric<double>(f, RV::Zero(3), 1e-2).cwiseAbs().maxCoeff(), 1e-10);
}

// Random families rho(l) ~ A(l) A(l)^+ + mix, dimensions 2..8, three parameters.
TEST(FiniteDifferenceMetric, MatchesAnalyticOnRandomFamilies) {
  std::mt19937_64 rng(27);
  for (int n = 2; n <= 8; ++n) {
    for (int trial = 0; trial < 3; ++trial) {
      const CM a0 = random_complex(rng, n);
      const std::vector<CM> ak = {random_complex(rng, n), random_complex(rng, n), random_complex(rng, n)};
      const Family<double> f = [=](const RV& l) {
        CM a = a0;
        for (int k = 0; k < 3; ++k) a += l(k) * ak[k];
        CM m = a * a.adjoint();
        m /= m.trace().real();
        return normalized(0.9 * m + 0.1 * CM::Identity(n, n) / double(n));
      };
      std::uniform_real_distribution<double> u(-0.3, 0.3);
      RV l0(3);
      l0 << u(rng), u(rng), u(rng);
      const auto an = analytic_of(f, l0);
      const auto fd = finite_difference_metric<double>(f, l0, 1e-4);
      expect_close_metric(an.total(), fd, 1e-4);
      EXPECT_GE(min_eigen(an.classical), -1e-10);
      EXPECT_GE(min_eigen(an.nonclassical), -1e-10);
      EXPECT_GE(min_eigen(an.total()), -1e-10);
    }
  }
}

TEST(AnalyticMetric, FixedEigenbasisHasNoNonclassicalPart) {
  std::mt19937_64 rng(28);
  const int n = 4;
  const CM v = random_unitary(rng, n);
  const Family<double> f = [v, n](const RV& l) {
    RV p(n);
    for (int i = 0; i < n; ++i) p(i) = std::exp(l(0) * i + l(1) * i * i * 0.1);
    p /= p.sum();
    return DensityMatrix<double>(v * p.cast<C>().asDiagonal() * v.adjoint());
  };
  RV l0(2);
  l0 << 0.2, -0.1;
  const auto m = analytic_of(f, l0);
  EXPECT_LT(m.nonclassical.cwiseAbs().maxCoeff(), 1e-10);
  expect_close_metric(m.classical, finite_difference_metric<double>(f, l0, 1e-4), 1e-4);
}

TEST(AnalyticMetric, UnitaryOrbitHasNoClassicalPart) {
  std::mt19937_64 rng(29);
  const int n = 3;
  const CM rho0 = random_state(rng, n, 0.2).matrix();
  const CM h1 = random_hermitian(rng, n), h2 = random_hermitian(rng, n);
  const Family<double> f = [=](const RV& l) {
    const CM u = expi(l(0) * h1 + l(1) * h2);
    return DensityMatrix<double>(u * rho0 * u.adjoint());
  };
  RV l0(2);
  l0 << 0.1, 0.2;
  const auto m = analytic_of(f, l0);
  EXPECT_LT(m.classical.cwiseAbs().maxCoeff(), 1e-10);
  expect_close_metric(m.nonclassical, finite_difference_metric<double>(f, l0, 1e-4), 1e-4);
}

// The moduli-product reading of the cross terms coincides on the diagonal
// but not off it; finite differences side with the real-part form.
TEST(AnalyticMetric, CrossTermConventionAgainstFiniteDifferences) {
  std::mt19937_64 rng(30);
  const int n = 3;
  const CM rho0 = random_state(rng, n, 0.2).matrix();
  const CM h1 = random_hermitian(rng, n), h2 = random_hermitian(rng, n);
  const Family<double> f = [=](const RV& l) {
    const CM u = expi(l(0) * h1 + l(1) * h2);
    return DensityMatrix<double>(u * rho0 * u.adjoint());
  };
  const RV l0 = RV::Zero(2);
  const auto real_part = analytic_of(f, l0, CrossTerm::RealPart);
  const auto moduli = analytic_of(f, l0, CrossTerm::ModuliProduct);
  const auto fd = finite_difference_metric<double>(f, l0, 1e-4);
  EXPECT_NEAR(moduli.nonclassical(0, 0), real_part.nonclassical(0, 0), 1e-12);
  EXPECT_NEAR(moduli.nonclassical(1, 1), real_part.nonclassical(1, 1), 1e-12);
  const double scale = std::sqrt(fd(0, 0) * fd(1, 1));
  const double err_real = std::abs(real_part.total()(0, 1) - fd(0, 1)) / scale;
  const double err_moduli = std::abs(moduli.total()(0, 1) - fd(0, 1)) / scale;
  RecordProperty("offdiag_rel_error_real_part", std::to_string(err_real));
  RecordProperty("offdiag_rel_error_moduli_product", std::to_string(err_moduli));
  EXPECT_LT(err_real, 1e-5);
  EXPECT_GT(err_moduli, 1e-3);
}

TEST(AnalyticMetric, EigenvalueFloorRules) {
  // Pure state with a population derivative pointing out of the state space.
  CM pure = CM::Zero(2, 2);
  pure(0, 0) = 1;
  const auto d = SpectralDecomposition<double>::of(DensityMatrix<double>(pure));
  CM dr = CM::Zero(2, 2);
  dr(0, 0) = -1e-3;
  dr(1, 1) = 1e-3;
  std::vector<CM> drho = {dr};
  EXPECT_THROW(analytic_metric<double>(d, std::span<const CM>(drho)), InvalidArgument);
  // Pure-state rotation is fine: the zero population does not move.
  CM rot = CM::Zero(2, 2);
  rot(0, 1) = rot(1, 0) = 0.5;
  drho = {rot};
  const auto m = analytic_metric<double>(d, std::span<const CM>(drho));
  EXPECT_NEAR(m.nonclassical(0, 0), 0.25, 1e-14);
  EXPECT_EQ(m.classical(0, 0), 0.0);
}

TEST(OptimalObservable, IdentityForEqualStates) {
  std::mt19937_64 rng(31);
  const auto rho = random_state(rng, 3);
  EXPECT_LT((optimal_observable(rho, rho) - CM::Identity(3, 3)).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(OptimalObservable, CommutingPair) {
  const auto m = optimal_observable(diag_state({0.7, 0.3}), diag_state({0.4, 0.6}));
  EXPECT_NEAR(m(0, 0).real(), std::sqrt(0.4 / 0.7), 1e-12);
  EXPECT_NEAR(m(1, 1).real(), std::sqrt(0.6 / 0.3), 1e-12);
  EXPECT_NEAR(std::abs(m(0, 1)), 0.0, 1e-12);
}

TEST(OptimalObservable, AttainsFidelity) {
  std::mt19937_64 rng(32);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 2 + trial % 3;
    const auto rho = random_state(rng, n), sigma = random_state(rng, n);
    const CM m = optimal_observable(rho, sigma);
    EXPECT_LT((m - m.adjoint()).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_NEAR((rho.matrix() * m).trace().real(), uhlmann_fidelity(rho, sigma), 1e-9);
  }
}

TEST(OptimalObservable, RejectsSingularRho) {
  EXPECT_THROW(optimal_observable(diag_state({1, 0}), diag_state({0.5, 0.5})), InvalidArgument);
}
