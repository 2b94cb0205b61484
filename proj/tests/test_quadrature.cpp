#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "kitaev_bures/quadrature.hpp"
#include "kitaev_bures/spectrum.hpp"

using namespace kitaev_bures;

namespace {

constexpr double kArea = 4 * kPi * kPi;

struct TrigPoly {
  std::vector<std::array<int, 2>> k;
  std::vector<double> a, b;
  double constant = 0;

  double operator()(const Momentum& p) const {
    double v = constant;
    for (std::size_t i = 0; i < k.size(); ++i) {
      const double ph = k[i][0] * p.px() + k[i][1] * p.py();
      v += a[i] * std::cos(ph) + b[i] * std::sin(ph);
    }
    return v;
  }
};

TrigPoly random_trig_poly(std::mt19937_64& rng, int kmax, int terms) {
  std::uniform_int_distribution<int> kd(-kmax, kmax);
  std::normal_distribution<double> g;
  TrigPoly t;
  t.constant = g(rng);
  for (int i = 0; i < terms; ++i) {
    std::array<int, 2> k = {kd(rng), kd(rng)};
    if (k[0] == 0 && k[1] == 0) k[0] = 1;
    t.k.push_back(k);
    t.a.push_back(g(rng));
    t.b.push_back(g(rng));
  }
  return t;
}

}  // namespace

TEST(GridSpec, Validation) {
  GridSpec g;
  EXPECT_NO_THROW(g.validate());
  g.base_n = 8;
  EXPECT_THROW(g.validate(), InvalidArgument);
  g = {};
  g.target_rel_tol = 0;
  EXPECT_THROW(g.validate(), InvalidArgument);
  g = {};
  g.patch_radius = -1;
  EXPECT_THROW(g.validate(), InvalidArgument);
}

TEST(GaussLegendre, IntegratesPolynomialsExactly) {
  for (int m : {1, 2, 5, 10, 20}) {
    const auto r = detail::gauss_legendre(m);
    for (int deg = 0; deg < 2 * m; ++deg) {
      double s = 0;
      for (int i = 0; i < m; ++i) s += r.weights[i] * std::pow(r.nodes[i], deg);
      const double exact = deg % 2 ? 0.0 : 2.0 / (deg + 1);
      EXPECT_NEAR(s, exact, 1e-14) << "m=" << m << " deg=" << deg;
    }
  }
}

TEST(IntegrateBz, Examples) {
  GridSpec g;
  g.base_n = 16;
  EXPECT_NEAR(integrate_bz([](const Momentum&) { return 1.0; }, g).value, kArea, 1e-12);
  EXPECT_NEAR(integrate_bz([](const Momentum& p) { return std::pow(std::sin(p.px()), 2); }, g).value,
              2 * kPi * kPi, 1e-12);
  EXPECT_NEAR(integrate_bz([](const Momentum& p) { return std::cos(p.px()) * std::cos(p.py()); }, g).value,
              0.0, 1e-13);
  const auto r = integrate_bz([](const Momentum&) { return 1.0; }, g);
  EXPECT_GT(r.evaluations, 0u);
  EXPECT_TRUE(std::isfinite(r.error_estimate));
}

TEST(IntegrateBz, ExactOnTrigonometricPolynomials) {
  std::mt19937_64 rng(41);
  for (int base : {16, 32, 64}) {
    GridSpec g;
    g.base_n = base;
    for (int trial = 0; trial < 10; ++trial) {
      const TrigPoly t = random_trig_poly(rng, base - 1, 12);
      const auto r = integrate_bz(t, g);
      EXPECT_NEAR(r.value, kArea * t.constant, 1e-12 * kArea * std::max(1.0, std::abs(t.constant)));
      EXPECT_LT(r.error_estimate, 1e-12 * kArea);
    }
  }
}

TEST(IntegrateBz, ErrorEstimateIsConservative) {
  std::mt19937_64 rng(42);
  std::uniform_real_distribution<double> u(0.5, 3.0), ph(-kPi, kPi);
  int ok = 0, total = 0;
  for (int trial = 0; trial < 60; ++trial) {
    const double a = u(rng), b = u(rng), c = ph(rng), d = ph(rng);
    auto f = [=](const Momentum& p) { return std::exp(a * std::cos(p.px() + c) + b * std::sin(p.py() + d) * std::cos(p.px())); };
    GridSpec g;
    g.base_n = 16;
    const auto r = integrate_bz(f, g);
    GridSpec g2 = g;
    g2.base_n = 2 * g.base_n;
    const double truth = integrate_bz(f, g2).value;
    ++total;
    if (std::abs(r.value - truth) <= r.error_estimate) ++ok;
  }
  EXPECT_GE(ok, 0.95 * total);
}

TEST(IntegrateBzRefined, NoSitesEqualsPlainRule) {
  std::mt19937_64 rng(43);
  const TrigPoly t = random_trig_poly(rng, 10, 8);
  auto f = [&](const Momentum& p) { return std::exp(0.3 * t(p)); };
  GridSpec g;
  g.base_n = 64;
  const auto plain = integrate_bz(f, g);
  const auto refined = integrate_bz_refined(f, std::span<const Momentum>{}, 1e-3, g);
  EXPECT_NEAR(refined.value, plain.value, 1e-12 * std::abs(plain.value));
}

TEST(IntegrateBzRefined, SmoothIntegrandUnchangedByPatches) {
  auto f = [](const Momentum& p) { return std::exp(std::cos(p.px()) + 0.5 * std::sin(p.py() - 0.3)); };
  GridSpec g;
  const auto plain = integrate_bz(f, g);
  const std::vector<Momentum> pts = {{2.0, -2.0}, {-2.0, 2.0}};
  const auto refined = integrate_bz_refined(f, std::span<const Momentum>(pts), 1e-3, g);
  EXPECT_NEAR(refined.value, plain.value, 1e-12 * std::abs(plain.value));
  std::vector<RefinementSite> merged = {{Momentum(kPi, kPi), 0.7, {{0, 0}, {0, 0.2}, {0, -0.2}}}};
  g.patch_radius = 0.9;
  const auto merged_refined = integrate_bz_refined(f, std::span<const RefinementSite>(merged), 1e-4, g);
  EXPECT_NEAR(merged_refined.value, plain.value, 1e-12 * std::abs(plain.value));
}

TEST(IntegrateBzRefined, RejectsFociOutsideCore) {
  std::vector<RefinementSite> s = {{Momentum(0, 0), 0.0, {{0, 0.5}}}};
  GridSpec g;
  g.patch_radius = 0.6;
  EXPECT_THROW(integrate_bz_refined([](const Momentum&) { return 1.0; }, std::span<const RefinementSite>(s), 1e-3, g),
               InvalidArgument);
}

// A kink |p - p0| is handled by the graded patch; the plain rule converges slowly.
TEST(IntegrateBzRefined, ResolvesConicalPoint) {
  const Momentum p0(0.3, -0.4);
  // Periodic everywhere, conical at p0 only.
  auto f = [&](const Momentum& p) {
    return std::sqrt(4 - 2 * std::cos(p.px() - p0.px()) - 2 * std::cos(p.py() - p0.py()) + 1e-8);
  };
  GridSpec g;
  g.base_n = 128;
  const std::vector<Momentum> pts = {p0};
  const auto coarse = integrate_bz_refined(f, std::span<const Momentum>(pts), 1e-4, g);
  GridSpec fine = g;
  fine.base_n = 512;
  fine.refine_levels = 5;
  const auto reference = integrate_bz_refined(f, std::span<const Momentum>(pts), 1e-4, fine);
  EXPECT_NEAR(coarse.value, reference.value, 1e-9 * reference.value);
  EXPECT_LE(std::abs(coarse.value - reference.value), coarse.error_estimate + 1e-12 * reference.value);
}

// tanh^2(beta Lambda / 2) / Lambda^2 at the symmetric gapless point.
TEST(IntegrateBzRefined, ModelIntegrandStableAcrossRefineLevels) {
  const double third = 1.0 / 3.0;
  const Couplings j(third, third, third);
  const double t = 1e-3;
  auto f = [&](const Momentum& p) {
    const double l = spectral_point(p, j).lambda;
    const double th = std::tanh(l / (2 * t));
    return th * th / (l * l);
  };
  std::vector<RefinementSite> sites;
  for (const auto& p : dirac_points(j)) sites.push_back({p, stiff_direction(p, j), {{0, 0}}});
  std::vector<double> values;
  GridSpec g;
  g.target_rel_tol = 1e-6;
  for (int levels : {2, 3, 4}) {
    g.refine_levels = levels;
    const auto r = integrate_bz_refined(f, std::span<const RefinementSite>(sites), t, g);
    EXPECT_LE(r.error_estimate, g.target_rel_tol * std::abs(r.value)) << "levels=" << levels;
    values.push_back(r.value);
  }
  for (double v : values) EXPECT_NEAR(v, values.back(), g.target_rel_tol * std::abs(values.back()));
}

TEST(IntegrateBzRefined, DeterministicAcrossThreadCounts) {
  const Couplings j(0.3, 0.3, 0.4);
  auto f = [&](const Momentum& p) {
    const auto s = spectral_point(p, j);
    return std::array<double, 2>{std::tanh(s.lambda / 0.02), s.twist[2] * s.twist[2] / std::pow(s.lambda, 4) *
                                                                 std::pow(std::tanh(s.lambda / 0.02), 2)};
  };
  std::vector<RefinementSite> sites;
  for (const auto& p : dirac_points(j)) sites.push_back({p, stiff_direction(p, j), {{0, 0}}});
  GridSpec g;
  g.base_n = 128;
  const auto ref = integrate_bz_refined_multi<2>(f, std::span<const RefinementSite>(sites), 0.01, g, 1);
  for (unsigned threads : {2u, 3u, 8u}) {
    const auto r = integrate_bz_refined_multi<2>(f, std::span<const RefinementSite>(sites), 0.01, g, threads);
    for (int c = 0; c < 2; ++c) {
      EXPECT_EQ(r[c].value, ref[c].value) << "threads=" << threads;
      EXPECT_EQ(r[c].error_estimate, ref[c].error_estimate);
    }
  }
}

TEST(Parallel, CompensatedSumRecoversSmallTerms) {
  CompensatedSum s;
  s.add(1.0);
  for (int i = 0; i < 1000; ++i) s.add(1e-16);
  s.add(-1.0);
  EXPECT_NEAR(s.value(), 1e-13, 1e-20);
}

TEST(Parallel, PropagatesExceptions) {
  EXPECT_THROW(parallel_for(100, 4, [](std::size_t i) {
                 if (i == 37) throw std::runtime_error("boom");
               }),
               std::runtime_error);
}
