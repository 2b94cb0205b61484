#pragma once

// Vortex-free Kitaev honeycomb model in momentum space: quasiparticle
// dispersion, coupling derivatives of the spectrum, phase classification and
// Dirac points.

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "errors.hpp"

namespace kitaev_bures {

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

/// Wraps an angle into [-pi, pi).
inline double wrap_angle(double x) {
  double y = x - kTwoPi * std::floor((x + kPi) / kTwoPi);
  if (y >= kPi) y -= kTwoPi;
  if (y < -kPi) y += kTwoPi;
  return y;
}

/// Link couplings (Jx, Jy, Jz). Any finite real values are admitted; the
/// phase diagram depends on absolute values only.
struct Couplings {
  double jx = 0.0;
  double jy = 0.0;
  double jz = 0.0;

  Couplings() = default;
  Couplings(double x, double y, double z) : jx(x), jy(y), jz(z) {
    if (!std::isfinite(x) || !std::isfinite(y) || !std::isfinite(z))
      throw InvalidArgument("couplings must be finite");
  }

  double operator[](int a) const { return a == 0 ? jx : (a == 1 ? jy : jz); }
  double max_abs() const {
    return std::max({std::abs(jx), std::abs(jy), std::abs(jz)});
  }
  /// Jx <-> Jy mirror.
  Couplings swapped_xy() const { return {jy, jx, jz}; }
};

/// Crystal momentum, normalized into [-pi, pi)^2 on construction.
class Momentum {
 public:
  Momentum() = default;
  Momentum(double px, double py) : px_(wrap_angle(px)), py_(wrap_angle(py)) {}

  double px() const { return px_; }
  double py() const { return py_; }

 private:
  double px_ = 0.0;
  double py_ = 0.0;
};

/// Everything the metric integrands need at one momentum.
///
/// `omega[a]` is Omega_a = Lambda * dLambda/dJ_a, with the z component equal
/// to 2*epsilon; `twist[a]` is Theta_a = Lambda^2 * dtheta/dJ_a.
struct SpectralPoint {
  double epsilon = 0.0;
  double delta = 0.0;
  double lambda = 0.0;
  double theta = 0.0;  // arg(epsilon + i delta); 0 at Dirac points
  std::array<double, 3> omega{};
  std::array<double, 3> twist{};
};

inline SpectralPoint spectral_point(const Momentum& p, const Couplings& j) {
  const double cx = std::cos(p.px()), sx = std::sin(p.px());
  const double cy = std::cos(p.py()), sy = std::sin(p.py());
  // sin(px - py) without a third sine evaluation.
  const double sxy = sx * cy - cx * sy;

  SpectralPoint s;
  s.epsilon = 2.0 * (j.jx * cx + j.jy * cy + j.jz);
  s.delta = 2.0 * (j.jx * sx + j.jy * sy);
  s.lambda = std::hypot(s.epsilon, s.delta);
  s.theta = s.lambda > 0.0 ? std::atan2(s.delta, s.epsilon) : 0.0;
  s.omega = {2.0 * (cx * s.epsilon + sx * s.delta),
             2.0 * (cy * s.epsilon + sy * s.delta), 2.0 * s.epsilon};
  s.twist = {4.0 * (j.jz * sx + j.jy * sxy), -4.0 * (j.jx * sxy - j.jz * sy),
             -2.0 * s.delta};
  return s;
}

enum class PhaseRegion { GaplessB, GappedAx, GappedAy, GappedAz, CriticalBoundary };

inline std::string_view to_string(PhaseRegion r) {
  switch (r) {
    case PhaseRegion::GaplessB: return "gapless-B";
    case PhaseRegion::GappedAx: return "gapped-Ax";
    case PhaseRegion::GappedAy: return "gapped-Ay";
    case PhaseRegion::GappedAz: return "gapped-Az";
    case PhaseRegion::CriticalBoundary: return "critical";
  }
  return "unknown";
}

inline bool is_gapped(PhaseRegion r) {
  return r == PhaseRegion::GappedAx || r == PhaseRegion::GappedAy ||
         r == PhaseRegion::GappedAz;
}

inline double default_phase_tolerance(const Couplings& j) {
  return 1e-9 * j.max_abs();
}

/// Triangle-inequality classification of the coupling point. Margins within
/// `tol` of zero count as the critical boundary.
inline PhaseRegion classify_phase(const Couplings& j, double tol) {
  if (!(tol >= 0.0)) throw InvalidArgument("phase tolerance must be non-negative");
  const double a = std::abs(j.jx), b = std::abs(j.jy), c = std::abs(j.jz);
  const double mx = b + c - a;
  const double my = c + a - b;
  const double mz = a + b - c;
  // At most one margin can be negative.
  if (mx < -tol) return PhaseRegion::GappedAx;
  if (my < -tol) return PhaseRegion::GappedAy;
  if (mz < -tol) return PhaseRegion::GappedAz;
  if (mx <= tol || my <= tol || mz <= tol) return PhaseRegion::CriticalBoundary;
  return PhaseRegion::GaplessB;
}

inline PhaseRegion classify_phase(const Couplings& j) {
  return classify_phase(j, default_phase_tolerance(j));
}

/// Fermionic gap min_p Lambda(p), e.g. 2(|Jz| - |Jx| - |Jy|) in the Az phase.
inline double fermion_gap(const Couplings& j, double tol) {
  const double a = std::abs(j.jx), b = std::abs(j.jy), c = std::abs(j.jz);
  switch (classify_phase(j, tol)) {
    case PhaseRegion::GappedAx: return 2.0 * (a - b - c);
    case PhaseRegion::GappedAy: return 2.0 * (b - c - a);
    case PhaseRegion::GappedAz: return 2.0 * (c - a - b);
    case PhaseRegion::CriticalBoundary: return 0.0;
    case PhaseRegion::GaplessB: break;
  }
  throw InvalidArgument("fermion gap is undefined in the gapless B phase");
}

inline double fermion_gap(const Couplings& j) {
  return fermion_gap(j, default_phase_tolerance(j));
}

/// Momentum of the band minimum in a gapped phase. The minimum of
/// |Jx e^{ipx} + Jy e^{ipy} + Jz| is reached with all three terms collinear,
/// so it sits on one of the four corners px, py in {0, pi}.
inline Momentum band_minimum(const Couplings& j) {
  Momentum best(0.0, 0.0);
  double best_lambda = spectral_point(best, j).lambda;
  for (double px : {0.0, kPi}) {
    for (double py : {0.0, kPi}) {
      const Momentum p(px, py);
      const double l = spectral_point(p, j).lambda;
      if (l < best_lambda) {
        best_lambda = l;
        best = p;
      }
    }
  }
  return best;
}

/// Jacobian of (epsilon, delta) with respect to (px, py).
inline Eigen::Matrix2d dispersion_jacobian(const Momentum& p, const Couplings& j) {
  Eigen::Matrix2d m;
  m << -2.0 * j.jx * std::sin(p.px()), -2.0 * j.jy * std::sin(p.py()),
      2.0 * j.jx * std::cos(p.px()), 2.0 * j.jy * std::cos(p.py());
  return m;
}

/// Angle of the momentum direction along which Lambda grows fastest near `p`.
/// On a phase boundary the orthogonal direction is the quadratic one.
inline double stiff_direction(const Momentum& p, const Couplings& j) {
  Eigen::JacobiSVD<Eigen::Matrix2d> svd(dispersion_jacobian(p, j), Eigen::ComputeFullV);
  const Eigen::Vector2d v = svd.matrixV().col(0);
  if (svd.singularValues()(0) == 0.0) return 0.0;
  return std::atan2(v(1), v(0));
}

namespace detail {

inline double torus_distance(const Momentum& a, const Momentum& b) {
  return std::hypot(wrap_angle(a.px() - b.px()), wrap_angle(a.py() - b.py()));
}

// Gauss-Newton polish of a zero of f(p) = epsilon + i delta.
inline Momentum polish_zero(Momentum p, const Couplings& j) {
  for (int it = 0; it < 8; ++it) {
    const SpectralPoint s = spectral_point(p, j);
    if (s.lambda == 0.0) break;
    const Eigen::Matrix2d jac = dispersion_jacobian(p, j);
    const Eigen::Vector2d step =
        jac.completeOrthogonalDecomposition().solve(Eigen::Vector2d(-s.epsilon, -s.delta));
    const Momentum next(p.px() + step(0), p.py() + step(1));
    if (spectral_point(next, j).lambda >= s.lambda) break;
    p = next;
  }
  return p;
}

}  // namespace detail

inline constexpr double kDiracTolerance = 1e-10;

/// Zeros of Lambda(p). Two points (p0 and -p0) in the gapless phase, a single
/// merged point on most of the critical boundary, none in gapped phases.
/// Degenerate couplings with a vanishing Jx, Jy or Jz give zero lines rather
/// than points and return an empty list.
inline std::vector<Momentum> dirac_points(const Couplings& j) {
  const PhaseRegion region = classify_phase(j);
  if (is_gapped(region)) return {};
  if (j.jx == 0.0 || j.jy == 0.0 || j.jz == 0.0) return {};

  const double jx2 = j.jx * j.jx, jy2 = j.jy * j.jy, jz2 = j.jz * j.jz;
  const double cx = std::clamp((jx2 + jz2 - jy2) / (2.0 * j.jx * j.jz), -1.0, 1.0);
  const double cy = std::clamp((jy2 + jz2 - jx2) / (2.0 * j.jy * j.jz), -1.0, 1.0);
  const double ax = std::acos(cx), ay = std::acos(cy);

  // Solutions come as a +/- pair; pick the correlated sign by checking Lambda.
  const double scale = std::max(1.0, j.max_abs());
  std::vector<Momentum> best;
  double best_residual = 0.0;
  for (double s : {1.0, -1.0}) {
    std::vector<Momentum> pair = {Momentum(kPi + ax, kPi + s * ay),
                                  Momentum(kPi - ax, kPi - s * ay)};
    double residual = 0.0;
    for (auto& p : pair) {
      p = detail::polish_zero(p, j);
      residual = std::max(residual, spectral_point(p, j).lambda);
    }
    if (best.empty() || residual < best_residual) {
      best = pair;
      best_residual = residual;
    }
  }
  if (best_residual >= kDiracTolerance * scale) return {};

  if (detail::torus_distance(best[0], best[1]) < 1e-7) {
    // Merged pair on the boundary; report the symmetric representative.
    best.resize(1);
  }
  return best;
}

}  // namespace kitaev_bures
