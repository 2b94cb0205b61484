#pragma once

// Temperature-scaling fits of metric elements, classical/nonclassical ratio
// maps along a coupling trajectory and iso-ratio contours.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "errors.hpp"
#include "parallel.hpp"
#include "quadrature.hpp"
#include "spectrum.hpp"
#include "thermal_metric.hpp"

namespace kitaev_bures {

struct Sample {
  double t = 0.0;
  double g = 0.0;
};

/// ln g = log_prefactor + alpha ln T - gap / T.
struct GappedClassicalFit {
  double alpha = 0.0;
  double gap = 0.0;
  double log_prefactor = 0.0;
  // Present when the gap was supplied: the same model with gap held fixed.
  std::optional<double> constrained_alpha;
  std::optional<double> constrained_log_prefactor;
  bool outside_quasiclassical_window = false;  // max T > gap / 3
};

/// g(T) - g(0) = -exp(log_prefactor) T^exponent exp(-gap / T) + ...
struct GappedNonclassicalFit {
  double gap = 0.0;
  double exponent = 0.0;
  double log_prefactor = 0.0;
  double offset = 0.0;  // g(0), as supplied
};

/// g = a ln(1/T) + b.
struct LogDivergenceFit {
  double a = 0.0;
  double b = 0.0;
};

/// g = prefactor T^exponent.
struct PowerLawFit {
  double exponent = 0.0;
  double prefactor = 0.0;
};

using ScalingModel = std::variant<GappedClassicalFit, GappedNonclassicalFit, LogDivergenceFit, PowerLawFit>;

struct ScalingFitResult {
  ScalingModel model;
  double r_squared = 0.0;          // in the fit's linearized coordinates
  std::vector<double> residuals;   // linearized, one per sample
  std::vector<Sample> samples;

  std::string_view model_name() const {
    switch (model.index()) {
      case 0: return "gapped-classical";
      case 1: return "gapped-nonclassical";
      case 2: return "log-divergence";
      default: return "power-law";
    }
  }
};

inline constexpr std::size_t kMinFitSamples = 6;

namespace detail {

inline void require_samples(std::span<const Sample> s) {
  if (s.size() < kMinFitSamples)
    throw InvalidArgument("scaling fit needs at least " + std::to_string(kMinFitSamples) + " samples");
  for (const auto& x : s)
    if (!(x.t > 0.0) || !std::isfinite(x.t)) throw InvalidArgument("scaling fit: temperatures must be positive");
  for (const auto& x : s)
    if (!std::isfinite(x.g)) throw FitFailure("scaling fit: non-finite sample value");
}

inline void require_positive(std::span<const Sample> s) {
  for (const auto& x : s)
    if (!(x.g > 0.0)) throw FitFailure("scaling fit: sample values must be positive");
}

struct LinearFit {
  Eigen::VectorXd coef;
  double r_squared = 0.0;
  std::vector<double> residuals;
};

inline LinearFit least_squares(const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
  qr.setThreshold(1e-12);
  if (qr.rank() < x.cols()) throw FitFailure("scaling fit: degenerate design matrix");
  LinearFit out;
  out.coef = qr.solve(y);
  const Eigen::VectorXd r = y - x * out.coef;
  out.residuals.assign(r.data(), r.data() + r.size());
  const double ss_res = r.squaredNorm();
  const double ss_tot = (y.array() - y.mean()).matrix().squaredNorm();
  if (ss_tot > 0.0)
    out.r_squared = std::clamp(1.0 - ss_res / ss_tot, 0.0, 1.0);
  else
    out.r_squared = ss_res == 0.0 ? 1.0 : 0.0;
  return out;
}

}  // namespace detail

/// Regression of ln g on (1, ln T, 1/T).
inline ScalingFitResult fit_gapped_classical(std::span<const Sample> samples,
                                             std::optional<double> known_gap = std::nullopt) {
  detail::require_samples(samples);
  detail::require_positive(samples);
  const auto n = static_cast<Eigen::Index>(samples.size());
  Eigen::MatrixXd x(n, 3);
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& s = samples[i];
    x.row(i) << 1.0, std::log(s.t), 1.0 / s.t;
    y(i) = std::log(s.g);
  }
  const auto lf = detail::least_squares(x, y);
  GappedClassicalFit m;
  m.log_prefactor = lf.coef(0);
  m.alpha = lf.coef(1);
  m.gap = -lf.coef(2);
  if (known_gap) {
    if (!(*known_gap > 0.0)) throw InvalidArgument("scaling fit: known gap must be positive");
    const Eigen::VectorXd yc = y + (*known_gap) * x.col(2);
    const auto cf = detail::least_squares(x.leftCols(2), yc);
    m.constrained_log_prefactor = cf.coef(0);
    m.constrained_alpha = cf.coef(1);
    double t_max = 0.0;
    for (const auto& s : samples) t_max = std::max(t_max, s.t);
    m.outside_quasiclassical_window = t_max > *known_gap / 3.0;
  }
  return {m, lf.r_squared, lf.residuals, {samples.begin(), samples.end()}};
}

/// Fits ln|excess| + gap / T against ln T, where excess = g(T) - g(0) is
/// supplied directly (see nonclassical_thermal_deficit).
inline ScalingFitResult fit_gapped_nonclassical(std::span<const Sample> excess, double gap,
                                                double offset = 0.0) {
  detail::require_samples(excess);
  if (!(gap > 0.0)) throw InvalidArgument("scaling fit: gap must be positive");
  const bool negative = excess.front().g < 0.0;
  for (const auto& s : excess)
    if (s.g == 0.0 || (s.g < 0.0) != negative)
      throw FitFailure("scaling fit: thermal excess must be nonzero with a fixed sign");
  const auto n = static_cast<Eigen::Index>(excess.size());
  Eigen::MatrixXd x(n, 2);
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    x.row(i) << 1.0, std::log(excess[i].t);
    y(i) = std::log(std::abs(excess[i].g)) + gap / excess[i].t;
  }
  const auto lf = detail::least_squares(x, y);
  GappedNonclassicalFit m{gap, lf.coef(1), lf.coef(0), offset};
  return {m, lf.r_squared, lf.residuals, {excess.begin(), excess.end()}};
}

inline ScalingFitResult fit_log_divergence(std::span<const Sample> samples) {
  detail::require_samples(samples);
  const auto n = static_cast<Eigen::Index>(samples.size());
  Eigen::MatrixXd x(n, 2);
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    x.row(i) << std::log(1.0 / samples[i].t), 1.0;
    y(i) = samples[i].g;
  }
  const auto lf = detail::least_squares(x, y);
  return {LogDivergenceFit{lf.coef(0), lf.coef(1)}, lf.r_squared, lf.residuals,
          {samples.begin(), samples.end()}};
}

inline ScalingFitResult fit_power_law(std::span<const Sample> samples) {
  detail::require_samples(samples);
  detail::require_positive(samples);
  const auto n = static_cast<Eigen::Index>(samples.size());
  Eigen::MatrixXd x(n, 2);
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    x.row(i) << 1.0, std::log(samples[i].t);
    y(i) = std::log(samples[i].g);
  }
  const auto lf = detail::least_squares(x, y);
  return {PowerLawFit{lf.coef(1), std::exp(lf.coef(0))}, lf.r_squared, lf.residuals,
          {samples.begin(), samples.end()}};
}

/// n log-spaced temperatures from t_min to t_max inclusive.
inline std::vector<double> log_spaced(double t_min, double t_max, std::size_t n) {
  if (!(t_min > 0.0) || !(t_max >= t_min)) throw InvalidArgument("log_spaced: need 0 < t_min <= t_max");
  if (n == 0) return {};
  if (n == 1) return {t_min};
  std::vector<double> out(n);
  const double a = std::log(t_min), b = std::log(t_max);
  for (std::size_t i = 0; i < n; ++i) out[i] = std::exp(a + (b - a) * static_cast<double>(i) / (n - 1));
  out.front() = t_min;
  out.back() = t_max;
  return out;
}

/// Coupling path J(s).
using Trajectory = std::function<Couplings(double)>;

/// Jx = Jy = (1 - Jz) / 2, parameterized by Jz; crosses the boundary at Jz = 1/2.
inline Couplings symmetric_trajectory(double jz) { return {(1.0 - jz) / 2.0, (1.0 - jz) / 2.0, jz}; }

/// Ratio g^c_ab / g^nc_ab on a (path parameter) x (temperature) grid.
/// Temperatures are log-spaced; cells whose evaluation failed are marked
/// invalid, carry ratio 0 and keep the failure message.
struct RatioMap {
  std::vector<double> axis1;  // path parameter
  std::vector<double> axis2;  // temperature
  std::vector<double> values;  // row-major: index = i2 * axis1.size() + i1
  std::vector<std::uint8_t> valid;
  std::vector<std::string> failures;

  double at(std::size_t i1, std::size_t i2) const { return values[i2 * axis1.size() + i1]; }
  bool is_valid(std::size_t i1, std::size_t i2) const { return valid[i2 * axis1.size() + i1] != 0; }
  std::size_t invalid_count() const {
    return static_cast<std::size_t>(std::count(valid.begin(), valid.end(), std::uint8_t{0}));
  }
};

struct RatioMapSpec {
  double s_min = 0.48;
  double s_max = 0.52;
  double t_min = 0.002;
  double t_max = 0.05;
  std::size_t n1 = 16;
  std::size_t n2 = 16;
  Param a = Param::Jz;
  Param b = Param::Jz;

  void validate() const {
    if (!(s_max > s_min)) throw InvalidArgument("ratio map: parameter range must be increasing");
    if (!(t_min > 0.0) || !(t_max > t_min)) throw InvalidArgument("ratio map: temperature range must be positive and increasing");
    if (n1 < 8 || n2 < 8) throw InvalidArgument("ratio map: resolution must be at least 8 per axis");
    if (a == Param::Beta || b == Param::Beta) throw InvalidArgument("ratio map: element must be a coupling pair");
  }
};

/// Computes every cell with tensor_thermodynamic, cells in parallel.
inline RatioMap ratio_map(const Trajectory& path, const RatioMapSpec& spec, const GridSpec& grid = {},
                          unsigned threads = 1) {
  spec.validate();
  grid.validate();
  RatioMap m;
  m.axis1.resize(spec.n1);
  for (std::size_t i = 0; i < spec.n1; ++i)
    m.axis1[i] = spec.s_min + (spec.s_max - spec.s_min) * static_cast<double>(i) / (spec.n1 - 1);
  m.axis2 = log_spaced(spec.t_min, spec.t_max, spec.n2);
  const std::size_t cells = spec.n1 * spec.n2;
  m.values.assign(cells, 0.0);
  m.valid.assign(cells, 0);
  m.failures.assign(cells, {});
  const int ia = static_cast<int>(spec.a), ib = static_cast<int>(spec.b);
  parallel_for(cells, threads, [&](std::size_t k) {
    const double s = m.axis1[k % spec.n1], t = m.axis2[k / spec.n1];
    try {
      const BuresTensor g = tensor_thermodynamic(ThermoPoint::at_temperature(path(s), t), grid, 1);
      const double r = std::abs(g.classical(ia, ib)) / std::abs(g.nonclassical(ia, ib));
      if (!std::isfinite(r)) throw NonConvergence("ratio is not finite");
      m.values[k] = r;
      m.valid[k] = 1;
    } catch (const std::exception& e) {
      m.failures[k] = e.what();
    }
  });
  return m;
}

struct ContourPoint {
  double s = 0.0;
  double t = 0.0;
};

/// T = prefactor |s - s_c|^exponent fitted on crossing points.
struct ContourExponent {
  double exponent = 0.0;
  double prefactor = 0.0;
  double r_squared = 0.0;
  std::size_t points = 0;
};

struct Contour {
  double level = 0.0;
  std::vector<std::array<ContourPoint, 2>> segments;  // marching-squares output
  // Lowest-temperature crossing of each fixed-s column, ordered by s.
  std::vector<ContourPoint> column_crossings;
  std::optional<ContourExponent> lower;   // s < s_c
  std::optional<ContourExponent> upper;   // s > s_c
  std::optional<ContourExponent> pooled;
  double asymmetry = 0.0;  // |upper - lower| exponent difference when both exist

  bool empty() const { return segments.empty() && column_crossings.empty(); }
};

namespace detail {

inline std::optional<ContourExponent> fit_contour_branch(const std::vector<ContourPoint>& pts, double s_c) {
  std::vector<double> lx, ly;
  for (const auto& p : pts) {
    const double d = std::abs(p.s - s_c);
    if (d > 1e-12 * std::max(1.0, std::abs(s_c)) && p.t > 0.0) {
      lx.push_back(std::log(d));
      ly.push_back(std::log(p.t));
    }
  }
  if (lx.size() < 2) return std::nullopt;
  const auto n = static_cast<Eigen::Index>(lx.size());
  Eigen::MatrixXd x(n, 2);
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    x.row(i) << 1.0, lx[i];
    y(i) = ly[i];
  }
  try {
    const auto lf = least_squares(x, y);
    return ContourExponent{lf.coef(1), std::exp(lf.coef(0)), lf.r_squared, lx.size()};
  } catch (const FitFailure&) {
    return std::nullopt;
  }
}

}  // namespace detail

/// Level set of the ratio map by marching squares on ln(ratio / level) over
/// (s, ln T); the temperature coordinate is interpolated in ln T. The
/// crossover exponent is fitted on the lowest-temperature crossing of each
/// column, separately for the two sides of s_c and pooled.
inline Contour crossover_contour(const RatioMap& map, double level, double s_c = 0.5) {
  if (!(level > 0.0)) throw InvalidArgument("contour level must be positive");
  Contour c;
  c.level = level;
  const std::size_t n1 = map.axis1.size(), n2 = map.axis2.size();
  auto phi = [&](std::size_t i, std::size_t j) { return std::log(map.at(i, j) / level); };
  auto usable = [&](std::size_t i, std::size_t j) {
    return map.is_valid(i, j) && map.at(i, j) > 0.0 && std::isfinite(map.at(i, j));
  };
  auto lerp = [](double a, double b, double fa, double fb) { return a + (b - a) * fa / (fa - fb); };

  for (std::size_t i = 0; i < n1; ++i) {
    for (std::size_t j = 0; j + 1 < n2; ++j) {
      if (!usable(i, j) || !usable(i, j + 1)) continue;
      const double f0 = phi(i, j), f1 = phi(i, j + 1);
      if ((f0 < 0.0) != (f1 < 0.0) || f0 == 0.0) {
        const double lt = f0 == f1 ? std::log(map.axis2[j])
                                   : lerp(std::log(map.axis2[j]), std::log(map.axis2[j + 1]), f0, f1);
        c.column_crossings.push_back({map.axis1[i], std::exp(lt)});
        break;
      }
    }
  }

  for (std::size_t j = 0; j + 1 < n2; ++j) {
    for (std::size_t i = 0; i + 1 < n1; ++i) {
      if (!usable(i, j) || !usable(i + 1, j) || !usable(i, j + 1) || !usable(i + 1, j + 1)) continue;
      const double s0 = map.axis1[i], s1 = map.axis1[i + 1];
      const double l0 = std::log(map.axis2[j]), l1 = std::log(map.axis2[j + 1]);
      // Corners counter-clockwise from (s0, l0).
      const std::array<double, 4> f = {phi(i, j), phi(i + 1, j), phi(i + 1, j + 1), phi(i, j + 1)};
      const std::array<std::array<double, 2>, 4> xy = {{{s0, l0}, {s1, l0}, {s1, l1}, {s0, l1}}};
      std::vector<ContourPoint> cross;
      for (int e = 0; e < 4; ++e) {
        const int a = e, b = (e + 1) % 4;
        if ((f[a] < 0.0) == (f[b] < 0.0)) continue;
        const double s = lerp(xy[a][0], xy[b][0], f[a], f[b]);
        const double l = lerp(xy[a][1], xy[b][1], f[a], f[b]);
        cross.push_back({s, std::exp(l)});
      }
      if (cross.size() == 2) {
        c.segments.push_back({cross[0], cross[1]});
      } else if (cross.size() == 4) {
        // Saddle: pair edges according to the sign of the cell average.
        const bool centre_negative = (f[0] + f[1] + f[2] + f[3]) < 0.0;
        const bool corner0_negative = f[0] < 0.0;
        if (centre_negative == corner0_negative) {
          c.segments.push_back({cross[0], cross[1]});
          c.segments.push_back({cross[2], cross[3]});
        } else {
          c.segments.push_back({cross[0], cross[3]});
          c.segments.push_back({cross[1], cross[2]});
        }
      }
    }
  }

  std::vector<ContourPoint> lo, hi;
  for (const auto& p : c.column_crossings) (p.s < s_c ? lo : hi).push_back(p);
  c.lower = detail::fit_contour_branch(lo, s_c);
  c.upper = detail::fit_contour_branch(hi, s_c);
  c.pooled = detail::fit_contour_branch(c.column_crossings, s_c);
  if (c.lower && c.upper) c.asymmetry = std::abs(c.upper->exponent - c.lower->exponent);
  return c;
}

/// Ratio map filled from a closed-form function, for self-checks of the
/// contour machinery.
inline RatioMap synthetic_ratio_map(const RatioMapSpec& spec, const std::function<double(double, double)>& ratio) {
  spec.validate();
  RatioMap m;
  m.axis1.resize(spec.n1);
  for (std::size_t i = 0; i < spec.n1; ++i)
    m.axis1[i] = spec.s_min + (spec.s_max - spec.s_min) * static_cast<double>(i) / (spec.n1 - 1);
  m.axis2 = log_spaced(spec.t_min, spec.t_max, spec.n2);
  for (std::size_t j = 0; j < spec.n2; ++j) {
    for (std::size_t i = 0; i < spec.n1; ++i) {
      const double r = ratio(m.axis1[i], m.axis2[j]);
      m.values.push_back(std::isfinite(r) ? r : 0.0);
      m.valid.push_back(std::isfinite(r) && r >= 0.0 ? 1 : 0);
      m.failures.emplace_back();
    }
  }
  return m;
}

}  // namespace kitaev_bures
