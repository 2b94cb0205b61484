#pragma once

// Bures metric over the thermal states of the vortex-free Kitaev honeycomb
// model in the four-parameter space (beta, Jx, Jy, Jz).
//
// Per-site tensor elements are momentum averages of closed-form integrands
// with the 1/(32 pi^2) measure of the thermodynamic limit. Writing x = beta
// Lambda:
//   classical (beta,beta) : Lambda^2               / (cosh x + 1)
//   classical (beta,J_a)  : beta Omega_a           / (cosh x + 1)
//   classical (J_a,J_b)   : beta^2 Omega_a Omega_b / (Lambda^2 (cosh x + 1))
//   nonclassical (J_a,J_b): tanh^2(x/2) Theta_a Theta_b / Lambda^4
// with Omega_z = 2 epsilon. The nonclassical beta row vanishes because the
// eigenstates do not depend on beta.

#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bures.hpp"
#include "errors.hpp"
#include "parallel.hpp"
#include "quadrature.hpp"
#include "spectrum.hpp"

namespace kitaev_bures {

/// Tensor index order: Beta, Jx, Jy, Jz.
enum class Param : int { Beta = 0, Jx = 1, Jy = 2, Jz = 3 };

inline constexpr std::array<Param, 4> kParams = {Param::Beta, Param::Jx, Param::Jy, Param::Jz};

inline std::string_view to_string(Param p) {
  switch (p) {
    case Param::Beta: return "Beta";
    case Param::Jx: return "Jx";
    case Param::Jy: return "Jy";
    case Param::Jz: return "Jz";
  }
  return "?";
}

/// Couplings plus inverse temperature. T = 0 is a separate limit flag:
/// classical weights vanish and tanh^2 -> 1.
struct ThermoPoint {
  Couplings couplings;
  double beta = 1.0;
  bool zero_temperature = false;

  static ThermoPoint at_beta(const Couplings& j, double beta) {
    if (!(beta > 0.0) || !std::isfinite(beta))
      throw InvalidArgument("beta must be positive and finite");
    return {j, beta, false};
  }
  static ThermoPoint at_temperature(const Couplings& j, double t) {
    if (t == 0.0) return {j, std::numeric_limits<double>::infinity(), true};
    if (!(t > 0.0) || !std::isfinite(t))
      throw InvalidArgument("temperature must be non-negative and finite");
    return {j, 1.0 / t, false};
  }
  double temperature() const { return zero_temperature ? 0.0 : 1.0 / beta; }
};

struct Evaluation {
  std::string method;  // "finite", "thermodynamic" or "oracle"
  int size = 0;        // L for finite sums and the oracle
  GridSpec grid;
  Eigen::Matrix4d classical_error = Eigen::Matrix4d::Zero();
  Eigen::Matrix4d nonclassical_error = Eigen::Matrix4d::Zero();
  std::size_t evaluations = 0;
  std::size_t refinement_sites = 0;
};

/// Per-site 4x4 metric, split into classical and nonclassical parts.
struct BuresTensor {
  Eigen::Matrix4d classical = Eigen::Matrix4d::Zero();
  Eigen::Matrix4d nonclassical = Eigen::Matrix4d::Zero();
  Evaluation evaluation;

  Eigen::Matrix4d total() const { return classical + nonclassical; }
  double classical_at(Param a, Param b) const {
    return classical(static_cast<int>(a), static_cast<int>(b));
  }
  double nonclassical_at(Param a, Param b) const {
    return nonclassical(static_cast<int>(a), static_cast<int>(b));
  }
};

namespace detail {

/// 1 / (cosh x + 1) for x >= 0 without forming cosh.
inline double occupation_weight(double x) {
  const double e = std::exp(-x);
  return 2.0 * e / ((1.0 + e) * (1.0 + e));
}

/// (cosh x - 1) / (cosh x + 1) = tanh^2(x/2).
inline double coherence_weight(double x) {
  const double e = std::exp(-x);
  const double t = -std::expm1(-x) / (1.0 + e);
  return t * t;
}

/// 1 - tanh^2(x/2) = sech^2(x/2); the thermal deficit of the coherence weight.
inline double coherence_deficit(double x) {
  const double e = std::exp(-x);
  return 4.0 * e / ((1.0 + e) * (1.0 + e));
}

inline int coupling_slot(Param p) {
  if (p == Param::Beta) throw InvalidArgument("nonclassical elements take coupling indices only");
  return static_cast<int>(p) - 1;
}

// Packed layout: 10 classical upper-triangle entries then 6 nonclassical
// coupling entries.
inline constexpr std::size_t kPacked = 16;
inline constexpr std::array<std::array<int, 2>, 10> kClassicalPairs = {
    {{0, 0}, {0, 1}, {0, 2}, {0, 3}, {1, 1}, {1, 2}, {1, 3}, {2, 2}, {2, 3}, {3, 3}}};
inline constexpr std::array<std::array<int, 2>, 6> kNonclassicalPairs = {
    {{1, 1}, {1, 2}, {1, 3}, {2, 2}, {2, 3}, {3, 3}}};

enum class CoherenceMode { Full, ThermalDeficit };

inline std::array<double, kPacked> packed_integrand(const Momentum& p, const ThermoPoint& tp,
                                                    CoherenceMode mode = CoherenceMode::Full) {
  const SpectralPoint s = spectral_point(p, tp.couplings);
  std::array<double, kPacked> out{};
  const double nan = std::numeric_limits<double>::quiet_NaN();
  if (s.lambda == 0.0) {
    out.fill(nan);
    return out;
  }
  const double beta = tp.beta;
  const double x = tp.zero_temperature ? std::numeric_limits<double>::infinity() : beta * s.lambda;

  // d x / d lambda_mu: Lambda for beta, beta Omega_a / Lambda for couplings.
  if (!tp.zero_temperature) {
    const double w = occupation_weight(x);
    std::array<double, 4> dx = {s.lambda, beta * s.omega[0] / s.lambda,
                                beta * s.omega[1] / s.lambda, beta * s.omega[2] / s.lambda};
    for (std::size_t k = 0; k < kClassicalPairs.size(); ++k)
      out[k] = w * dx[kClassicalPairs[k][0]] * dx[kClassicalPairs[k][1]];
  }

  double c = 0.0;
  if (mode == CoherenceMode::Full)
    c = tp.zero_temperature ? 1.0 : coherence_weight(x);
  else
    c = tp.zero_temperature ? 0.0 : -coherence_deficit(x);
  const double l2 = s.lambda * s.lambda;
  const std::array<double, 3> dtheta = {s.twist[0] / l2, s.twist[1] / l2, s.twist[2] / l2};
  for (std::size_t k = 0; k < kNonclassicalPairs.size(); ++k)
    out[10 + k] = c * dtheta[kNonclassicalPairs[k][0] - 1] * dtheta[kNonclassicalPairs[k][1] - 1];
  return out;
}

inline void unpack(const std::array<double, kPacked>& v, Eigen::Matrix4d& classical,
                   Eigen::Matrix4d& nonclassical) {
  classical.setZero();
  nonclassical.setZero();
  for (std::size_t k = 0; k < kClassicalPairs.size(); ++k) {
    const auto [a, b] = kClassicalPairs[k];
    classical(a, b) = classical(b, a) = v[k];
  }
  for (std::size_t k = 0; k < kNonclassicalPairs.size(); ++k) {
    const auto [a, b] = kNonclassicalPairs[k];
    nonclassical(a, b) = nonclassical(b, a) = v[10 + k];
  }
}

}  // namespace detail

/// Classical integrand without the 1/(32 pi^2) prefactor. NaN exactly at a
/// Dirac point, where the coupling entries have no limit.
inline double classical_integrand(Param mu, Param nu, const Momentum& p, const ThermoPoint& tp) {
  const auto v = detail::packed_integrand(p, tp);
  const int a = std::min(static_cast<int>(mu), static_cast<int>(nu));
  const int b = std::max(static_cast<int>(mu), static_cast<int>(nu));
  if (spectral_point(p, tp.couplings).lambda == 0.0) {
    if (a == 0) return 0.0;
    return std::numeric_limits<double>::quiet_NaN();
  }
  for (std::size_t k = 0; k < detail::kClassicalPairs.size(); ++k)
    if (detail::kClassicalPairs[k][0] == a && detail::kClassicalPairs[k][1] == b) return v[k];
  return 0.0;
}

/// Nonclassical integrand tanh^2(beta Lambda / 2) Theta_a Theta_b / Lambda^4.
inline double nonclassical_integrand(Param a, Param b, const Momentum& p, const ThermoPoint& tp) {
  const int i = detail::coupling_slot(a) + 1, j = detail::coupling_slot(b) + 1;
  const auto v = detail::packed_integrand(p, tp);
  for (std::size_t k = 0; k < detail::kNonclassicalPairs.size(); ++k) {
    const auto [x, y] = detail::kNonclassicalPairs[k];
    if ((x == i && y == j) || (x == j && y == i)) return v[10 + k];
  }
  return 0.0;
}

/// Thermal state of the quasiparticle mode at p in the fixed (c1, c2)
/// reference basis: rho = (1 - tanh(beta Lambda / 2) (eps sx + delta sy) / Lambda) / 2.
/// Its Bloch vector has length tanh(beta Lambda / 2) and lies in the x-y
/// plane at the angle theta + pi.
template <class Real = double>
bures::DensityMatrix<Real> mode_density_matrix(const Momentum& p, Real beta, Real jx, Real jy,
                                               Real jz, bool zero_temperature = false) {
  using C = std::complex<Real>;
  const Real px = p.px(), py = p.py();
  const Real eps = 2 * (jx * std::cos(px) + jy * std::cos(py) + jz);
  const Real del = 2 * (jx * std::sin(px) + jy * std::sin(py));
  const Real lam = std::hypot(eps, del);
  bures::ComplexMatrix<Real> m(2, 2);
  if (lam == 0) {
    m << C(0.5), C(0), C(0), C(0.5);
    return bures::DensityMatrix<Real>(m);
  }
  const Real r = zero_temperature ? Real(1) : std::tanh(beta * lam / 2);
  const Real nx = eps / lam, ny = del / lam;
  m << C(0.5), C(-r * nx / 2, r * ny / 2), C(-r * nx / 2, -r * ny / 2), C(0.5);
  return bures::DensityMatrix<Real>(m);
}

inline bures::DensityMatrix<double> mode_density_matrix(const Momentum& p, const ThermoPoint& tp) {
  return mode_density_matrix<double>(p, tp.beta, tp.couplings.jx, tp.couplings.jy,
                                     tp.couplings.jz, tp.zero_temperature);
}

namespace detail {

inline void require_odd_size(int size) {
  if (size < 3 || size % 2 == 0) throw InvalidArgument("lattice size L must be odd and >= 3");
}

inline double finite_momentum(int n, int size) { return kTwoPi * n / size; }

/// Rejects finite grids that sample a zero of Lambda.
inline void require_gapped_grid(const Couplings& j, int size) {
  const double floor = 1e-12 * std::max(1.0, j.max_abs());
  const int half = (size - 1) / 2;
  for (int nx = -half; nx <= half; ++nx)
    for (int ny = -half; ny <= half; ++ny)
      if (spectral_point(Momentum(finite_momentum(nx, size), finite_momentum(ny, size)), j).lambda <= floor)
        throw InvalidArgument("momentum grid of size " + std::to_string(size) +
                              " contains a Dirac point; choose another L");
}

}  // namespace detail

/// Sum over the L x L momentum grid p = 2 pi n / L, n = -(L-1)/2..(L-1)/2,
/// with weight (2 pi / L)^2 / (32 pi^2) per momentum, so that the result
/// converges to the thermodynamic per-site tensor.
inline BuresTensor tensor_finite(const ThermoPoint& tp, int size, unsigned threads = 1) {
  detail::require_odd_size(size);
  detail::require_gapped_grid(tp.couplings, size);
  const int half = (size - 1) / 2;
  std::vector<std::array<CompensatedSum, detail::kPacked>> rows(size);
  parallel_for(static_cast<std::size_t>(size), threads, [&](std::size_t i) {
    const double px = detail::finite_momentum(static_cast<int>(i) - half, size);
    for (int ny = -half; ny <= half; ++ny) {
      const auto v = detail::packed_integrand(Momentum(px, detail::finite_momentum(ny, size)), tp);
      for (std::size_t c = 0; c < detail::kPacked; ++c) rows[i][c].add(v[c]);
    }
  });
  std::array<double, detail::kPacked> total{};
  const double weight = 1.0 / (8.0 * size * static_cast<double>(size));
  for (std::size_t c = 0; c < detail::kPacked; ++c) {
    CompensatedSum s;
    for (const auto& r : rows) s.add(r[c]);
    total[c] = weight * s.value();
  }
  BuresTensor t;
  detail::unpack(total, t.classical, t.nonclassical);
  t.evaluation.method = "finite";
  t.evaluation.size = size;
  t.evaluation.evaluations = static_cast<std::size_t>(size) * size;
  return t;
}

/// Refinement sites for the thermodynamic quadrature: Dirac points in the
/// gapless phase and on the boundary, the band minimum of a nearly closed
/// gap. Dirac points closer than `kMergeDistance` share one patch.
inline constexpr double kMergeDistance = 1.0;
inline constexpr double kNarrowGapFraction = 0.5;

struct RefinementPlan {
  std::vector<RefinementSite> sites;
  double patch_radius = 0.0;
  double width = 0.0;
};

inline RefinementPlan refinement_plan(const ThermoPoint& tp, const GridSpec& grid) {
  const Couplings& j = tp.couplings;
  RefinementPlan plan;
  plan.patch_radius = grid.patch_radius;
  const double t = tp.temperature();
  const PhaseRegion region = classify_phase(j);

  if (is_gapped(region)) {
    const double gap = fermion_gap(j);
    if (gap >= kNarrowGapFraction * j.max_abs()) return plan;
    const Momentum m = band_minimum(j);
    plan.sites.push_back({m, stiff_direction(m, j), {{0.0, 0.0}}});
    plan.width = tp.zero_temperature ? std::max(gap, 1e-8) : std::min(t, std::max(gap, 1e-8));
    return plan;
  }

  const std::vector<Momentum> dirac = dirac_points(j);
  plan.width = tp.zero_temperature ? 1e-8 : t;
  if (dirac.size() == 1) {
    plan.sites.push_back({dirac[0], stiff_direction(dirac[0], j), {{0.0, 0.0}}});
  } else if (dirac.size() == 2) {
    const double dx = wrap_angle(dirac[1].px() - dirac[0].px());
    const double dy = wrap_angle(dirac[1].py() - dirac[0].py());
    const double d = std::hypot(dx, dy);
    if (d < kMergeDistance) {
      const Momentum mid(dirac[0].px() + dx / 2, dirac[0].py() + dy / 2);
      // Second patch axis along the separation of the two cones.
      const double angle = std::atan2(dy, dx) - kPi / 2;
      plan.sites.push_back({mid, angle, {{0.0, 0.0}, {0.0, d / 2}, {0.0, -d / 2}}});
      plan.patch_radius = std::max(grid.patch_radius, 1.6 * d);
    } else {
      for (const auto& p : dirac) plan.sites.push_back({p, stiff_direction(p, j), {{0.0, 0.0}}});
    }
  }
  return plan;
}

namespace detail {

inline BuresTensor integrate_tensor(const ThermoPoint& tp, const GridSpec& grid, unsigned threads,
                                    CoherenceMode mode) {
  grid.validate();
  // Theta^2 / Lambda^4 is not integrable at a gap closing; a graded rule
  // would still return a finite, self-consistent number.
  if (tp.zero_temperature && mode == CoherenceMode::Full && !is_gapped(classify_phase(tp.couplings)))
    throw NonConvergence("nonclassical elements diverge at T = 0 where the gap closes");
  const RefinementPlan plan = refinement_plan(tp, grid);
  GridSpec g = grid;
  g.patch_radius = plan.patch_radius;
  auto f = [&tp, mode](const Momentum& p) { return packed_integrand(p, tp, mode); };
  const auto res = plan.sites.empty()
                       ? integrate_bz_multi<kPacked>(f, g, threads)
                       : integrate_bz_refined_multi<kPacked>(
                             f, std::span<const RefinementSite>(plan.sites), plan.width, g, threads);

  constexpr double kMeasure = 1.0 / (32.0 * kPi * kPi);
  std::array<double, kPacked> value{}, error{};
  for (std::size_t c = 0; c < kPacked; ++c) {
    value[c] = kMeasure * res[c].value;
    error[c] = kMeasure * res[c].error_estimate;
  }
  BuresTensor t;
  unpack(value, t.classical, t.nonclassical);
  unpack(error, t.evaluation.classical_error, t.evaluation.nonclassical_error);
  t.evaluation.method = "thermodynamic";
  t.evaluation.grid = g;
  t.evaluation.evaluations = res[0].evaluations;
  t.evaluation.refinement_sites = plan.sites.size();

  // Off-diagonal entries are judged against sqrt(g_aa g_bb), their
  // Cauchy-Schwarz bound.
  auto check = [&](const Eigen::Matrix4d& m, const Eigen::Matrix4d& e, const char* part) {
    for (int a = 0; a < 4; ++a) {
      for (int b = a; b < 4; ++b) {
        const double scale = std::max(std::abs(m(a, b)), std::sqrt(std::abs(m(a, a) * m(b, b))));
        if (!std::isfinite(m(a, b)) || e(a, b) > grid.target_rel_tol * scale) {
          throw NonConvergence(std::string("quadrature did not converge for ") + part + " (" +
                               std::string(to_string(kParams[a])) + "," +
                               std::string(to_string(kParams[b])) + "): value " +
                               std::to_string(m(a, b)) + ", error estimate " +
                               std::to_string(e(a, b)));
        }
      }
    }
  };
  check(t.classical, t.evaluation.classical_error, "classical");
  check(t.nonclassical, t.evaluation.nonclassical_error, "nonclassical");
  return t;
}

}  // namespace detail

/// Thermodynamic-limit tensor by Brillouin-zone quadrature. Throws
/// NonConvergence when an element's error estimate exceeds
/// grid.target_rel_tol relative to its scale.
inline BuresTensor tensor_thermodynamic(const ThermoPoint& tp, const GridSpec& grid = {},
                                        unsigned threads = 1) {
  return detail::integrate_tensor(tp, grid, threads, detail::CoherenceMode::Full);
}

/// g^nc(T) - g^nc(T = 0), integrated directly from -sech^2(x/2) Theta Theta / Lambda^4
/// so that the exponentially small difference is not lost to cancellation.
/// Only meaningful in gapped phases, where g^nc(T = 0) is finite.
inline Eigen::Matrix4d nonclassical_thermal_deficit(const ThermoPoint& tp, const GridSpec& grid = {},
                                                    unsigned threads = 1) {
  if (tp.zero_temperature) return Eigen::Matrix4d::Zero();
  return detail::integrate_tensor(tp, grid, threads, detail::CoherenceMode::ThermalDeficit)
      .nonclassical;
}

/// Independent reference built from per-mode density matrices.
struct OracleTensor {
  BuresTensor analytic;                   // from bures::analytic_metric
  Eigen::Matrix4d fd_classical;           // fidelity differences of the mode populations
  Eigen::Matrix4d fd_nonclassical;        // full fidelity differences minus fd_classical
  double max_mode_discrepancy = 0.0;      // max |fd total - analytic total| over modes
};

/// For every momentum of the L x L grid the mode state is viewed as a function
/// of (beta, Jx, Jy, Jz); its Bures metric is taken both from the eigen
/// decomposition and from finite differences of the Uhlmann fidelity.
///
/// Mode sums are normalized per unit cell for the populations (1/L^2) and per
/// site for the coherences (1/N = 1/(2 L^2)): the populations at p and -p are
/// independent, while theta(-p) = -theta(p) makes their eigenbasis rotation a
/// single Majorana degree of freedom counted once per pair.
template <class Real = double>
OracleTensor tensor_oracle(const ThermoPoint& tp, int size, double step = 1e-4,
                           unsigned threads = 1) {
  detail::require_odd_size(size);
  if (!(step > 0.0)) throw InvalidArgument("oracle step must be positive");
  if (tp.zero_temperature) throw InvalidArgument("oracle needs a finite beta");
  detail::require_gapped_grid(tp.couplings, size);

  using Vec = bures::RealVector<Real>;
  const int half = (size - 1) / 2;
  Vec lambda0(4);
  lambda0 << Real(tp.beta), Real(tp.couplings.jx), Real(tp.couplings.jy), Real(tp.couplings.jz);

  struct Partial {
    std::array<CompensatedSum, 16> classical, nonclassical, fd_classical, fd_total;
    double discrepancy = 0.0;
  };
  std::vector<Partial> rows(size);

  parallel_for(static_cast<std::size_t>(size), threads, [&](std::size_t i) {
    const double px = detail::finite_momentum(static_cast<int>(i) - half, size);
    for (int ny = -half; ny <= half; ++ny) {
      const Momentum p(px, detail::finite_momentum(ny, size));
      const bures::Family<Real> family = [&p](const Vec& l) {
        return mode_density_matrix<Real>(p, l(0), l(1), l(2), l(3));
      };
      const bures::Family<Real> populations = [&p](const Vec& l) {
        const auto d = bures::SpectralDecomposition<Real>::of(
            mode_density_matrix<Real>(p, l(0), l(1), l(2), l(3)));
        return bures::DensityMatrix<Real>(
            d.eigenvalues.template cast<std::complex<Real>>().asDiagonal().toDenseMatrix());
      };

      const auto decomp = bures::SpectralDecomposition<Real>::of(family(lambda0));
      const auto drho = bures::family_derivatives<Real>(family, lambda0, Real(1e-3));
      const auto an = bures::analytic_metric<Real>(
          decomp, std::span<const bures::ComplexMatrix<Real>>(drho));
      const auto fd_total = bures::finite_difference_metric<Real>(family, lambda0, Real(step));
      const auto fd_cl = bures::finite_difference_metric<Real>(populations, lambda0, Real(step));

      Partial& row = rows[i];
      for (int a = 0; a < 4; ++a) {
        for (int b = 0; b < 4; ++b) {
          row.classical[4 * a + b].add(static_cast<double>(an.classical(a, b)));
          row.nonclassical[4 * a + b].add(static_cast<double>(an.nonclassical(a, b)));
          row.fd_classical[4 * a + b].add(static_cast<double>(fd_cl(a, b)));
          row.fd_total[4 * a + b].add(static_cast<double>(fd_total(a, b)));
          row.discrepancy = std::max(
              row.discrepancy,
              static_cast<double>(std::abs(fd_total(a, b) - an.classical(a, b) - an.nonclassical(a, b))));
        }
      }
    }
  });

  const double n_cells = static_cast<double>(size) * size;
  OracleTensor out;
  Eigen::Matrix4d fd_total = Eigen::Matrix4d::Zero();
  out.fd_classical.setZero();
  for (int k = 0; k < 16; ++k) {
    CompensatedSum c, nc, fc, ft;
    for (const auto& r : rows) {
      c.add(r.classical[k]);
      nc.add(r.nonclassical[k]);
      fc.add(r.fd_classical[k]);
      ft.add(r.fd_total[k]);
    }
    out.analytic.classical(k / 4, k % 4) = c.value() / n_cells;
    out.analytic.nonclassical(k / 4, k % 4) = nc.value() / (2.0 * n_cells);
    out.fd_classical(k / 4, k % 4) = fc.value() / n_cells;
    fd_total(k / 4, k % 4) = ft.value();
  }
  out.fd_nonclassical = (fd_total - n_cells * out.fd_classical) / (2.0 * n_cells);
  for (const auto& r : rows) out.max_mode_discrepancy = std::max(out.max_mode_discrepancy, r.discrepancy);
  out.analytic.evaluation.method = "oracle";
  out.analytic.evaluation.size = size;
  out.analytic.evaluation.evaluations = static_cast<std::size_t>(size) * size;
  return out;
}

}  // namespace kitaev_bures
