#pragma once

// Brillouin-zone quadrature over [-pi, pi)^2.
//
// The plain rule is the tensor-product periodic trapezoid, which converges
// spectrally for smooth periodic integrands. Near isolated singular points
// (Dirac points, a nearly closed gap) the integrand is split with a smooth
// partition of unity: the part away from each point stays on the periodic
// grid, the part near it is integrated on a local square patch with
// tensor-product Gauss-Legendre panels graded geometrically toward the
// point. Patch axes follow the local dispersion so that the anisotropic
// features on a phase boundary (linear along one axis, quadratic along the
// other) are resolved by the grading of each axis.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "errors.hpp"
#include "parallel.hpp"
#include "spectrum.hpp"

namespace kitaev_bures {

struct GridSpec {
  int base_n = 256;          // trapezoid points per axis (the estimate uses 2 * base_n)
  int refine_levels = 3;     // Gauss-Legendre order per graded panel is 4 + 2 * refine_levels
  double patch_radius = 0.6; // half-width of refinement patches (shrunk to avoid overlaps)
  double grading_floor = 0.01;  // finest panel = grading_floor * width
  double target_rel_tol = 1e-6;

  void validate() const {
    if (base_n < 16) throw InvalidArgument("grid: base_n must be at least 16");
    if (refine_levels < 0) throw InvalidArgument("grid: refine_levels must be non-negative");
    if (!(patch_radius > 0.0)) throw InvalidArgument("grid: patch_radius must be positive");
    if (!(grading_floor > 0.0)) throw InvalidArgument("grid: grading_floor must be positive");
    if (!(target_rel_tol > 0.0)) throw InvalidArgument("grid: target_rel_tol must be positive");
  }
};

struct IntegrationResult {
  double value = 0.0;
  double error_estimate = 0.0;
  std::size_t evaluations = 0;
  bool converged = true;
};

/// A refinement patch: centre, rotation of its first axis, and the points
/// (in patch coordinates) toward which both axes are graded.
struct RefinementSite {
  Momentum center;
  double axis_angle = 0.0;
  std::vector<std::array<double, 2>> foci{{0.0, 0.0}};
};

namespace detail {

struct Rule1d {
  std::vector<double> nodes;
  std::vector<double> weights;
};

/// Gauss-Legendre nodes and weights on [-1, 1].
inline Rule1d gauss_legendre(int m) {
  Rule1d r;
  r.nodes.resize(m);
  r.weights.resize(m);
  for (int i = 0; i < (m + 1) / 2; ++i) {
    double x = std::cos(kPi * (i + 0.75) / (m + 0.5));
    double dp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = x;
      for (int k = 2; k <= m; ++k) {
        const double pk = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = pk;
      }
      dp = m * (x * p1 - p0) / (x * x - 1.0);
      const double dx = p1 / dp;
      x -= dx;
      if (std::abs(dx) < 1e-16) break;
    }
    r.nodes[i] = -x;
    r.nodes[m - 1 - i] = x;
    r.weights[i] = r.weights[m - 1 - i] = 2.0 / ((1.0 - x * x) * dp * dp);
  }
  return r;
}

/// Weight of the patch region: 1 for |t| <= r/3, erfc roll-off to 0 at r.
inline double patch_window(double t, double r) {
  const double inner = r / 3.0;
  const double sigma = (r - inner) / 12.0;
  const double x = (std::abs(t) - 0.5 * (inner + r)) / sigma;
  if (x <= -6.0) return 1.0;
  if (x >= 6.0) return 0.0;
  return 0.5 * std::erfc(x);
}

/// Composite Gauss-Legendre rule on [-r, r]: uniform panels across the
/// roll-off band, geometric panels toward every focus down to `floor`.
inline Rule1d graded_rule(std::span<const double> foci, double r, double floor, int order) {
  std::vector<double> bp{-r, r};
  const double inner = r / 3.0;
  const double sigma = (r - inner) / 12.0;
  for (int k = 0; k <= 12; ++k) {
    bp.push_back(inner + k * sigma);
    bp.push_back(-inner - k * sigma);
  }
  for (double c : foci) {
    bp.push_back(c);
    for (double s = floor; s < 2.0 * r; s *= 2.0) {
      bp.push_back(c + s);
      bp.push_back(c - s);
    }
  }
  std::erase_if(bp, [r](double b) { return b < -r || b > r; });
  std::sort(bp.begin(), bp.end());
  std::vector<double> merged;
  for (double b : bp)
    if (merged.empty() || b - merged.back() > 0.25 * floor) merged.push_back(b);
  merged.back() = r;

  const Rule1d gl = gauss_legendre(order);
  Rule1d out;
  for (std::size_t i = 0; i + 1 < merged.size(); ++i) {
    const double mid = 0.5 * (merged[i] + merged[i + 1]);
    const double half = 0.5 * (merged[i + 1] - merged[i]);
    for (int k = 0; k < order; ++k) {
      out.nodes.push_back(mid + half * gl.nodes[k]);
      out.weights.push_back(half * gl.weights[k]);
    }
  }
  return out;
}

template <std::size_t K>
using Sums = std::array<CompensatedSum, K>;

// Periodic trapezoid on the 2n grid; the even-even subset gives the n grid.
// `owned(p)` returns the fraction of the integrand owned by patches.
template <std::size_t K, class F, class Owned>
void trapezoid(const F& f, int n, unsigned threads, const Owned& owned, Sums<K>& fine,
               Sums<K>& coarse, std::size_t& evaluations) {
  const int nf = 2 * n;
  const double h = kTwoPi / nf;
  std::vector<Sums<K>> row_fine(nf), row_coarse(nf);
  std::vector<std::size_t> row_evals(nf, 0);
  parallel_for(static_cast<std::size_t>(nf), threads, [&](std::size_t i) {
    const double px = -kPi + h * static_cast<double>(i);
    for (int j = 0; j < nf; ++j) {
      const Momentum p(px, -kPi + h * j);
      const double keep = 1.0 - owned(p);
      if (keep <= 0.0) continue;
      const std::array<double, K> v = f(p);
      ++row_evals[i];
      for (std::size_t c = 0; c < K; ++c) {
        const double x = keep * v[c];
        row_fine[i][c].add(x);
        if (i % 2 == 0 && j % 2 == 0) row_coarse[i][c].add(x);
      }
    }
  });
  for (int i = 0; i < nf; ++i) {
    evaluations += row_evals[i];
    for (std::size_t c = 0; c < K; ++c) {
      fine[c].add(row_fine[i][c]);
      coarse[c].add(row_coarse[i][c]);
    }
  }
}

inline double patch_half_width(std::span<const RefinementSite> sites, double requested) {
  double r = std::min(requested, 0.99 * kPi / std::sqrt(2.0));
  for (std::size_t a = 0; a < sites.size(); ++a) {
    for (std::size_t b = a + 1; b < sites.size(); ++b) {
      const double d = std::hypot(wrap_angle(sites[a].center.px() - sites[b].center.px()),
                                  wrap_angle(sites[a].center.py() - sites[b].center.py()));
      r = std::min(r, 0.49 * d / std::sqrt(2.0));
    }
  }
  return r;
}

}  // namespace detail

/// Periodic trapezoid with 2 * base_n points per axis; the error estimate is
/// the difference to the base_n rule.
template <std::size_t K, class F>
std::array<IntegrationResult, K> integrate_bz_multi(const F& f, const GridSpec& grid,
                                                    unsigned threads = 1) {
  grid.validate();
  detail::Sums<K> fine{}, coarse{};
  std::size_t evals = 0;
  detail::trapezoid<K>(f, grid.base_n, threads, [](const Momentum&) { return 0.0; }, fine,
                       coarse, evals);
  const double hf = kTwoPi / (2 * grid.base_n);
  const double hc = 2.0 * hf;
  std::array<IntegrationResult, K> out;
  for (std::size_t c = 0; c < K; ++c) {
    out[c].value = hf * hf * fine[c].value();
    out[c].error_estimate = std::abs(out[c].value - hc * hc * coarse[c].value());
    out[c].evaluations = evals;
    out[c].converged = std::isfinite(out[c].value) &&
                       out[c].error_estimate <= grid.target_rel_tol * std::abs(out[c].value);
  }
  return out;
}

template <class F>
IntegrationResult integrate_bz(const F& f, const GridSpec& grid, unsigned threads = 1) {
  auto wrapped = [&f](const Momentum& p) { return std::array<double, 1>{f(p)}; };
  return integrate_bz_multi<1>(wrapped, grid, threads)[0];
}

/// Trapezoid rule away from the sites plus graded patches around them.
/// `width` is the smallest feature size expected near a site (typically the
/// temperature); panels are graded down to grid.grading_floor * width.
template <std::size_t K, class F>
std::array<IntegrationResult, K> integrate_bz_refined_multi(const F& f,
                                                            std::span<const RefinementSite> sites,
                                                            double width, const GridSpec& grid,
                                                            unsigned threads = 1) {
  grid.validate();
  if (sites.empty()) return integrate_bz_multi<K>(f, grid, threads);
  if (!(width > 0.0)) throw InvalidArgument("refined quadrature: width must be positive");

  const double r = detail::patch_half_width(sites, grid.patch_radius);
  for (const auto& s : sites)
    for (const auto& fc : s.foci)
      if (std::max(std::abs(fc[0]), std::abs(fc[1])) > r / 3.0)
        throw InvalidArgument("refined quadrature: focus outside the patch core");

  struct Frame {
    double cx, cy, ux, uy, vx, vy;
  };
  std::vector<Frame> frames;
  for (const auto& s : sites) {
    const double c = std::cos(s.axis_angle), sn = std::sin(s.axis_angle);
    frames.push_back({s.center.px(), s.center.py(), c, sn, -sn, c});
  }

  auto owned = [&](const Momentum& p) {
    double w = 0.0;
    for (const auto& fr : frames) {
      const double dx = wrap_angle(p.px() - fr.cx), dy = wrap_angle(p.py() - fr.cy);
      const double a = dx * fr.ux + dy * fr.uy;
      const double b = dx * fr.vx + dy * fr.vy;
      w += detail::patch_window(a, r) * detail::patch_window(b, r);
    }
    return w;
  };

  detail::Sums<K> fine{}, coarse{};
  std::size_t evals = 0;
  detail::trapezoid<K>(f, grid.base_n, threads, owned, fine, coarse, evals);
  const double hf = kTwoPi / (2 * grid.base_n);
  const double hc = 2.0 * hf;

  const double floor = grid.grading_floor * width;
  const int order_hi = 4 + 2 * grid.refine_levels;
  const int order_lo = order_hi - 2;

  std::array<double, K> patch_hi{}, patch_lo{};
  for (std::size_t s = 0; s < sites.size(); ++s) {
    const Frame& fr = frames[s];
    std::vector<double> fa, fb;
    for (const auto& fc : sites[s].foci) {
      fa.push_back(fc[0]);
      fb.push_back(fc[1]);
    }
    for (int pass = 0; pass < 2; ++pass) {
      const int order = pass == 0 ? order_hi : order_lo;
      const detail::Rule1d ra = detail::graded_rule(fa, r, floor, order);
      const detail::Rule1d rb = detail::graded_rule(fb, r, floor, order);
      std::vector<detail::Sums<K>> rows(ra.nodes.size());
      parallel_for(ra.nodes.size(), threads, [&](std::size_t i) {
        const double a = ra.nodes[i];
        const double wa = ra.weights[i] * detail::patch_window(a, r);
        if (wa == 0.0) return;
        for (std::size_t j = 0; j < rb.nodes.size(); ++j) {
          const double b = rb.nodes[j];
          const double w = wa * rb.weights[j] * detail::patch_window(b, r);
          if (w == 0.0) continue;
          const Momentum p(fr.cx + a * fr.ux + b * fr.vx, fr.cy + a * fr.uy + b * fr.vy);
          const std::array<double, K> v = f(p);
          for (std::size_t c = 0; c < K; ++c) rows[i][c].add(w * v[c]);
        }
      });
      detail::Sums<K> total{};
      for (const auto& row : rows)
        for (std::size_t c = 0; c < K; ++c) total[c].add(row[c]);
      for (std::size_t c = 0; c < K; ++c)
        (pass == 0 ? patch_hi : patch_lo)[c] += total[c].value();
      evals += ra.nodes.size() * rb.nodes.size();
    }
  }

  std::array<IntegrationResult, K> out;
  for (std::size_t c = 0; c < K; ++c) {
    const double base_fine = hf * hf * fine[c].value();
    const double base_coarse = hc * hc * coarse[c].value();
    out[c].value = base_fine + patch_hi[c];
    out[c].error_estimate =
        std::abs(base_fine - base_coarse) + std::abs(patch_hi[c] - patch_lo[c]);
    out[c].evaluations = evals;
    out[c].converged = std::isfinite(out[c].value) &&
                       out[c].error_estimate <= grid.target_rel_tol * std::abs(out[c].value);
  }
  return out;
}

template <class F>
IntegrationResult integrate_bz_refined(const F& f, std::span<const RefinementSite> sites,
                                       double width, const GridSpec& grid, unsigned threads = 1) {
  auto wrapped = [&f](const Momentum& p) { return std::array<double, 1>{f(p)}; };
  return integrate_bz_refined_multi<1>(wrapped, sites, width, grid, threads)[0];
}

/// Refinement around bare points with axis-aligned patches.
template <class F>
IntegrationResult integrate_bz_refined(const F& f, std::span<const Momentum> points,
                                       double width, const GridSpec& grid, unsigned threads = 1) {
  std::vector<RefinementSite> sites;
  for (const auto& p : points) sites.push_back(RefinementSite{p, 0.0, {{0.0, 0.0}}});
  return integrate_bz_refined(f, std::span<const RefinementSite>(sites), width, grid, threads);
}

}  // namespace kitaev_bures
