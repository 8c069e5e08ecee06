#include "mvf/generators.hpp"
#include "mvf/hypotheses.hpp"
#include "mvf/presets.hpp"
#include "mvf/wasserstein.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

using namespace mvf;
using namespace mvf::testing;

namespace {

// Brute-force W2 over all permutations; only for tiny equal-size uniform clouds.
double brute_w2(const EmpiricalMeasure& a, const EmpiricalMeasure& b) {
  std::vector<std::size_t> perm(a.size());
  std::iota(perm.begin(), perm.end(), 0);
  double best = 1e300;
  do {
    double cost = 0.0;
    for (std::size_t i = 0; i < perm.size(); ++i) cost += (a.point(i) - b.point(perm[i])).squaredNorm();
    best = std::min(best, cost);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return std::sqrt(best / static_cast<double>(a.size()));
}

// E[f(Z)] for Z ~ N(0,1) by a wide trapezoid rule; spectrally accurate for smooth f.
double normal_expectation(const std::function<double(double)>& f) {
  const int nodes = 1601;
  const double lo = -10.0, h = 20.0 / (nodes - 1);
  double acc = 0.0;
  for (int i = 0; i < nodes; ++i) {
    const double z = lo + h * i;
    const double w = (i == 0 || i == nodes - 1) ? 0.5 : 1.0;
    acc += w * f(z) * std::exp(-0.5 * z * z);
  }
  return acc * h / std::sqrt(2.0 * M_PI);
}

}  // namespace

// ---------------------------------------------------------------- measures

TEST(EmpiricalMeasure, RejectsNegativeWeights) {
  EXPECT_THROW(EmpiricalMeasure(1, {0.0, 1.0}, {0.5, -0.1}), InvalidArgument);
  EXPECT_THROW(EmpiricalMeasure(1, {0.0, 1.0}, {0.5}), DimensionMismatch);
}

TEST(EmpiricalMeasure, CachedMomentsMatchDirectSums) {
  const EmpiricalMeasure mu(2, {1, 2, -1, 0, 3, 1}, {0.2, 0.5, 0.3});
  EXPECT_NEAR(mu.mass(), 1.0, 1e-15);
  EXPECT_NEAR(mu.mean()(0), 0.2 * 1 - 0.5 * 1 + 0.3 * 3, 1e-14);
  EXPECT_NEAR(mu.mean()(1), 0.2 * 2 + 0.3 * 1, 1e-14);
  EXPECT_NEAR(mu.second_moment(), 0.2 * 5 + 0.5 * 1 + 0.3 * 10, 1e-14);
}

TEST(EmpiricalMeasure, ProbabilityViewOfZeroMassThrows) {
  const EmpiricalMeasure mu(1, {0.0}, {0.0});
  EXPECT_THROW(mu.as_probability(), ZeroMassError);
}

// ---------------------------------------------------------------- W2

TEST(Wasserstein, DiracPairIsEuclideanDistance) {
  const auto r = wasserstein2(EmpiricalMeasure::dirac(vec2(0, 0)), EmpiricalMeasure::dirac(vec2(3, 4)));
  EXPECT_NEAR(r.value, 5.0, 1e-12);
}

TEST(Wasserstein, IdenticalCloudsAreAtZero) {
  const auto mu = gaussian_cloud(2, 40, 3);
  EXPECT_NEAR(wasserstein2(mu, mu).value, 0.0, 1e-12);
  const auto nu = gaussian_cloud(1, 40, 3);
  EXPECT_NEAR(wasserstein2(nu, nu).value, 0.0, 1e-12);
}

TEST(Wasserstein, OneDimensionalMatchesPermutationSearch) {
  for (std::uint64_t s = 1; s <= 5; ++s) {
    const auto a = gaussian_cloud(1, 5, s);
    const auto b = gaussian_cloud(1, 5, 100 + s, 2.0, 1.0);
    const auto r = wasserstein2(a, b);
    EXPECT_EQ(r.method, W2Method::quantile_1d);
    EXPECT_NEAR(r.value, brute_w2(a, b), 1e-12);
  }
}

TEST(Wasserstein, AssignmentMatchesPermutationSearch) {
  for (std::uint64_t s = 1; s <= 5; ++s) {
    const auto a = gaussian_cloud(3, 5, s);
    const auto b = gaussian_cloud(3, 5, 200 + s, 0.5, -1.0);
    const auto r = wasserstein2(a, b);
    EXPECT_EQ(r.method, W2Method::assignment);
    EXPECT_NEAR(r.value, brute_w2(a, b), 1e-12);
  }
}

TEST(Wasserstein, SymmetricAndTriangular) {
  const auto a = gaussian_cloud(2, 12, 1);
  const auto b = gaussian_cloud(2, 12, 2, 1.5);
  const auto c = gaussian_cloud(2, 12, 3, 0.7, 2.0);
  const double ab = wasserstein2(a, b).value, ba = wasserstein2(b, a).value;
  EXPECT_NEAR(ab, ba, 1e-12);
  EXPECT_LE(wasserstein2(a, c).value, ab + wasserstein2(b, c).value + 1e-12);
}

TEST(Wasserstein, UnequalCloudsInPlaneUseSlicedMethod) {
  const auto r = wasserstein2(gaussian_cloud(2, 7, 1), gaussian_cloud(2, 9, 2));
  EXPECT_EQ(r.method, W2Method::sliced);
  EXPECT_GT(r.projections, 0);
}

TEST(Wasserstein, WeightedOneDimensional) {
  // mass 1/4 at 0, 3/4 at 1 against mass 1 at 1: only the 1/4 at 0 moves a unit distance.
  const EmpiricalMeasure a(1, {0.0, 1.0}, {0.25, 0.75});
  const auto b = EmpiricalMeasure::dirac(scalar_vec(1.0));
  EXPECT_NEAR(wasserstein2(a, b).value, 0.5, 1e-12);
}

TEST(Wasserstein, ErrorsOnZeroMassAndDimension) {
  const EmpiricalMeasure zero(1, {0.0}, {0.0});
  EXPECT_THROW(wasserstein2(zero, EmpiricalMeasure::dirac(scalar_vec(1))), ZeroMassError);
  EXPECT_THROW(wasserstein2(EmpiricalMeasure::dirac(vec2(0, 0)), EmpiricalMeasure::dirac(scalar_vec(1))),
               DimensionMismatch);
}

// ---------------------------------------------------------------- test functions

TEST(TestFunctions, AnalyticDerivativesMatchFiniteDifferences) {
  const Vec c = vec2(0.3, -0.2);
  Mat q(2, 2);
  q << 2.0, 0.5, 0.5, -1.0;
  const std::vector<TestFunction> fns = {
      bump(c, 1.5),
      plateau(c, 0.5, 2.0),
      gaussian_fn(c, 0.7, 2.0),
      windowed_coordinate(2, 1, 1.0, 3.0),
      product(gaussian_fn(c, 1.0), affine_fn(vec2(1, -2), 0.5)),
      quadratic_fn(q, vec2(1, 1), 0.2),
  };
  const std::vector<Vec> pts = {vec2(0.1, 0.2), vec2(-0.6, 0.9), vec2(1.1, -0.4), vec2(0.0, 1.8)};
  for (const auto& f : fns)
    for (const auto& x : pts) {
      EXPECT_LT((f.grad(x) - fd_grad(f.value, x)).norm(), 1e-6) << f.label;
      EXPECT_LT((f.hess(x) - fd_hess(f.value, x)).norm(), 1e-4) << f.label;
    }
}

TEST(TestFunctions, CompactSupportIsRespected) {
  const auto b = bump(vec2(1, 1), 0.5);
  EXPECT_EQ(b.value(vec2(1.6, 1.0)), 0.0);
  EXPECT_EQ(b.grad(vec2(1.6, 1.0)).norm(), 0.0);
  EXPECT_NEAR(b.value(vec2(1, 1)), 1.0, 1e-15);
  const auto w = windowed_coordinate(1, 0, 1.0, 2.0);
  EXPECT_NEAR(w.value(scalar_vec(0.7)), 0.7, 1e-15);
  EXPECT_EQ(w.value(scalar_vec(2.5)), 0.0);
}

TEST(TestFunctions, OuterDerivativesMatchFiniteDifferences) {
  Coords a(3), m(3);
  a << 0.4, -1.0, 0.3;
  m << 0.1, 0.2, -0.3;
  CoordMat q(3, 3);
  q << 1, 0.2, 0, 0.2, -0.5, 0.1, 0, 0.1, 2;
  const std::vector<OuterFunction> gs = {outer_affine(a, 1.0), outer_quadratic(q, a), outer_tanh(a, 0.2, 1.5),
                                         outer_gauss(m, 0.4, 2.0)};
  Coords z(3);
  z << 0.3, -0.1, 0.5;
  const double h = 1e-5;
  for (const auto& g : gs) {
    for (int i = 0; i < 3; ++i) {
      Coords p = z, mm = z;
      p(i) += h;
      mm(i) -= h;
      EXPECT_NEAR(g.grad(z)(i), (g.value(p) - g.value(mm)) / (2 * h), 1e-7) << g.label;
      EXPECT_LT((g.hess(z).col(i) - (g.grad(p) - g.grad(mm)) / (2 * h)).norm(), 1e-6) << g.label;
    }
  }
}

TEST(CylindricalFunctional, LDerivativeIsFirstOrderTermOfPushforward) {
  // F(x, mu o (I + eps v)^-1) - F(x, mu) - eps <mu, d_mu F . v> = o(eps).
  const auto mu = gaussian_cloud(1, 25, 9);
  Coords a(2);
  a << 0.8, -0.5;
  const auto F = product_form(gaussian_fn(scalar_vec(0.0), 1.0), outer_tanh(a, 0.1, 1.0),
                              {bump(scalar_vec(0.2), 2.5), gaussian_fn(scalar_vec(-0.4), 0.6)});
  const Vec x = scalar_vec(0.35);
  auto v = [](const Vec& y) { return scalar_vec(std::sin(y(0)) + 0.3); };
  const double lin = mu.integrate([&](const Vec& y) { return F.mu_derivative(x, mu, y).dot(v(y)); });
  double prev = 1e300;
  for (double eps : {1e-2, 5e-3, 2.5e-3, 1.25e-3}) {
    const auto moved = mu.pushed_forward([&](const Vec& y) -> Vec { return y + eps * v(y); });
    const double rem = std::abs(F(x, moved) - F(x, mu) - eps * lin) / eps;
    EXPECT_LT(rem, prev);
    prev = rem;
  }
  EXPECT_LT(prev, 2e-3);
}

// ---------------------------------------------------------------- generators

TEST(Generators, LcalMatchesFiniteDifferenceFormula) {
  CoefficientSet c;
  c.n = 2;
  c.d = 2;
  c.m = 1;
  c.b1 = [](double t, const Vec& x, const EmpiricalMeasure& mu) -> Vec {
    return vec2(-x(0) + mu.mean()(1), std::sin(x(1)) + t);
  };
  c.sigma0 = [](double, const Vec& x, const EmpiricalMeasure&) -> Mat {
    Mat s(2, 2);
    s << 1.0, 0.2 * x(0), 0.0, 0.7;
    return s;
  };
  c.sigma1 = [](double, const Vec&, const EmpiricalMeasure&) -> Mat {
    Mat s(2, 1);
    s << 0.3, -0.4;
    return s;
  };
  c.b2 = [](double, const Vec& x, const EmpiricalMeasure&) -> Vec { return scalar_vec(x(0)); };
  c.sigma2 = [](double) { return scalar_mat(1.0); };
  c.finalize();
  const auto mu = gaussian_cloud(2, 10, 4);
  const auto phi = gaussian_fn(vec2(0.2, 0.1), 0.8, 1.3);
  const Vec x = vec2(0.4, -0.3);
  const double t = 0.25;
  const Vec g = fd_grad(phi.value, x);
  const Mat h = fd_hess(phi.value, x);
  const Mat s0 = c.sigma0(t, x, mu), s1 = c.sigma1(t, x, mu);
  const Mat a = s0 * s0.transpose() + s1 * s1.transpose();
  double expect = g.dot(c.b1(t, x, mu));
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) expect += 0.5 * a(i, j) * h(i, j);
  EXPECT_NEAR(generator_Lcal(c, t, phi, mu, x), expect, 1e-6);
}

TEST(Generators, LbbOnDiracWithUnitDrift) {
  const auto c = scalar_system([](double, const Vec&, const EmpiricalMeasure&) { return scalar_vec(1.0); }, 0.0,
                               0.0, [](double, const Vec&, const EmpiricalMeasure&) { return scalar_vec(0.0); });
  Coords one(1);
  one << 1.0;
  const auto F = product_form(constant_fn(1, 1.0), outer_affine(one), {windowed_coordinate(1, 0, 2.0, 4.0)});
  const auto mu = EmpiricalMeasure::dirac(scalar_vec(0.0));
  EXPECT_NEAR(generator_Lbb(c, 0.0, F, mu, scalar_vec(0.0)), 1.0, 1e-14);
}

TEST(Generators, LbbReducesToLcalForMeasureFreeFunctional) {
  const auto& pr = make_preset("tanh-observation");
  const auto mu = gaussian_cloud(1, 20, 2);
  const auto phi = gaussian_fn(scalar_vec(0.3), 0.5);
  for (double x : {-1.0, 0.2, 1.4})
    EXPECT_EQ(generator_Lbb(pr.coeffs, 0.1, measure_free(phi), mu, scalar_vec(x)),
              generator_Lcal(pr.coeffs, 0.1, phi, mu, scalar_vec(x)));
}

TEST(Generators, LbbMatchesOneStepItoExpansion) {
  // Oracle: E[F(X_d, mu_d)] after one Euler step of the state and of every atom of the law,
  // integrated exactly over the Gaussian increment; Richardson in d removes the O(d) term.
  const auto pr = make_preset("tanh-observation");
  const auto& c = pr.coeffs;
  const auto mu = gaussian_cloud(1, 8, 11, 0.8, 0.2);
  Coords a(2);
  a << 0.7, -1.1;
  const auto F = product_form(gaussian_fn(scalar_vec(0.1), 1.2), outer_tanh(a, 0.3, 1.0),
                              {gaussian_fn(scalar_vec(0.5), 0.4), windowed_coordinate(1, 0, 3.0, 5.0)});
  const Vec x = scalar_vec(-0.45);
  const double t = 0.2;
  auto stepped = [&](const Vec& y, double d, double z) {
    const double s = std::sqrt(diffusion_sum(c, t, y, mu)(0, 0));
    return y(0) + c.b1(t, y, mu)(0) * d + s * std::sqrt(d) * z;
  };
  auto quotient = [&](double d) {
    Coords zd(2);
    for (int j = 0; j < 2; ++j) {
      double acc = 0.0;
      for (std::size_t i = 0; i < mu.size(); ++i) {
        const Vec y = mu.point(i);
        acc += mu.weight(i) *
               normal_expectation([&](double z) { return F.inner[j].value(scalar_vec(stepped(y, d, z))); });
      }
      zd(j) = acc;
    }
    const double after = normal_expectation([&](double z) { return F.f(scalar_vec(stepped(x, d, z)), zd); });
    return (after - F(x, mu)) / d;
  };
  const double d = 2e-3;
  const double oracle = 2.0 * quotient(d / 2) - quotient(d);
  EXPECT_NEAR(generator_Lbb(c, t, F, mu, x), oracle, 1e-5);
}

TEST(Generators, LbfWithLinearOuterIsIntegratedLcal) {
  const auto pr = make_preset("mean-field-linear");
  const auto nu = gaussian_cloud(1, 30, 5, 1.0, 0.5);
  const auto law = gaussian_cloud(1, 30, 6);
  const auto phi = gaussian_fn(scalar_vec(0.2), 0.9);
  Coords one(1);
  one << 1.0;
  const MeasureFunctional G{{phi}, outer_affine(one), "lin"};
  const double expect = nu.integrate([&](const Vec& y) { return generator_Lcal(pr.coeffs, 0.3, phi, law, y); });
  EXPECT_NEAR(generator_Lbf(pr.coeffs, 0.3, G, nu, law), expect, 1e-13);
}

TEST(Generators, LbfMatchesChainRuleExpansion) {
  const auto pr = make_preset("correlated-linear");
  const auto& c = pr.coeffs;
  const auto nu = gaussian_cloud(1, 15, 7).scaled(1.3);
  const auto law = gaussian_cloud(1, 15, 8);
  const std::vector<TestFunction> phis = {gaussian_fn(scalar_vec(0.0), 1.0), bump(scalar_vec(0.5), 2.0),
                                          windowed_coordinate(1, 0, 2.0, 4.0)};
  Coords m(3);
  m << 0.3, 0.1, -0.2;
  const MeasureFunctional G{phis, outer_gauss(m, 0.5, 1.0), "g"};
  const double t = 0.0;
  // coordinates, drifts and diffusion loadings assembled atom by atom
  Coords xi = Coords::Zero(3), beta = Coords::Zero(3), gam = Coords::Zero(3);
  for (std::size_t i = 0; i < nu.size(); ++i) {
    const Vec y = nu.point(i);
    const double h = c.b2(t, y, law)(0) / c.sigma2(t)(0, 0);
    for (int u = 0; u < 3; ++u) {
      const double v = phis[u].value(y);
      const double dv = fd_grad(phis[u].value, y)(0);
      const double d2v = fd_hess(phis[u].value, y)(0, 0);
      xi(u) += nu.weight(i) * v;
      beta(u) += nu.weight(i) * (dv * c.b1(t, y, law)(0) + 0.5 * d2v * diffusion_sum(c, t, y, law)(0, 0));
      gam(u) += nu.weight(i) * (v * h + dv * c.sigma1(t, y, law)(0, 0));
    }
  }
  const std::function<double(const Vec&)> g3 = [&](const Vec& z) {
    Coords zz(3);
    zz << z(0), z(1), z(2);
    return G.g.value(zz);
  };
  Vec z3(3);
  z3 << xi(0), xi(1), xi(2);
  const Vec dg = fd_grad(g3, z3);
  const Mat d2g = fd_hess(g3, z3);
  double expect = 0.0;
  for (int u = 0; u < 3; ++u) {
    expect += dg(u) * beta(u);
    for (int v = 0; v < 3; ++v) expect += 0.5 * d2g(u, v) * gam(u) * gam(v);
  }
  EXPECT_NEAR(generator_Lbf(c, t, G, nu, law), expect, 1e-5);
}

TEST(Generators, EvalHSolvesAgainstSigma2) {
  CoefficientSet c;
  c.n = 1;
  c.d = 1;
  c.m = 3;
  Mat s2(3, 3);
  s2 << 2.0, 0.3, -0.1, 0.0, 1.5, 0.4, 0.2, -0.3, 1.0;
  c.b1 = [](double, const Vec& x, const EmpiricalMeasure&) -> Vec { return -x; };
  c.sigma0 = [](double, const Vec&, const EmpiricalMeasure&) { return scalar_mat(1.0); };
  c.sigma1 = [](double, const Vec&, const EmpiricalMeasure&) -> Mat { return Mat::Zero(1, 3); };
  c.b2 = [](double, const Vec& x, const EmpiricalMeasure&) -> Vec {
    Vec v(3);
    v << x(0), std::sin(x(0)), 1.0;
    return v;
  };
  c.sigma2 = [s2](double) { return s2; };
  c.finalize();
  const Vec x = scalar_vec(0.7);
  const auto mu = EmpiricalMeasure::dirac(x);
  const Eigen::Vector3d rhs = Eigen::Vector3d(0.7, std::sin(0.7), 1.0);
  const Eigen::Vector3d oracle = Eigen::Matrix3d(s2).colPivHouseholderQr().solve(rhs);
  EXPECT_LT((Eigen::Vector3d(eval_h(c, 0.0, x, mu)) - oracle).norm(), 1e-13);

  c.sigma2 = [](double) { return Mat::Zero(3, 3); };
  EXPECT_THROW(eval_h(c, 0.0, x, mu), SingularMatrixError);
}

TEST(Generators, TanhObservationDriftFormula) {
  const auto pr = make_preset("tanh-observation", {{"obs_mean_gain", 0.0}});
  const auto mu = gaussian_cloud(1, 5, 1);
  EXPECT_NEAR(eval_h(pr.coeffs, 0, scalar_vec(0.4), mu)(0), 1.5 * std::tanh(0.4), 1e-15);
  const auto zero = make_preset("constant-h", {{"h", 0.0}});
  EXPECT_EQ(eval_h(zero.coeffs, 0, scalar_vec(0.4), mu)(0), 0.0);
}

// ---------------------------------------------------------------- coefficient sets and hypotheses

TEST(CoefficientSet, SensorMixingMustCompleteTheIdentity) {
  EXPECT_THROW(make_preset("sensor-correlated", {{"S2", 0.6}, {"S3", 0.7}}), InvalidArgument);
  EXPECT_NO_THROW(make_preset("sensor-correlated"));
  const auto pr = make_preset("sensor-correlated");
  EXPECT_NEAR(pr.coeffs.sensor_orth_root(0, 0), 0.8, 1e-12);
}

TEST(CoefficientSet, UseBeforeFinalizeIsRejected) {
  CoefficientSet c;
  EXPECT_THROW(c.require_finalized(), InvalidArgument);
  EXPECT_THROW(c.finalize(), InvalidArgument);
  EXPECT_THROW(make_preset("no-such-preset"), ConfigError);
}

TEST(Hypotheses, LinearSystemPassesItsDeclaredConstants) {
  const auto pr = make_preset("linear-gaussian", {{"a", -1.5}});
  const auto r = estimate_hypotheses(pr.coeffs);
  EXPECT_NEAR(r.lipschitz.at("b1").state, 1.5, 1e-9);
  EXPECT_NEAR(r.lipschitz.at("b1").measure, 0.0, 1e-12);
  EXPECT_TRUE(r.all_pass());
}

TEST(Hypotheses, MeanFieldLipschitzInMeasureIsBoundedByCoefficient) {
  const auto pr = make_preset("mean-field-linear", {{"abar", 0.5}});
  const auto r = estimate_hypotheses(pr.coeffs);
  // |mean(mu) - mean(nu)| <= W2(mu, nu)
  EXPECT_LE(r.lipschitz.at("b1").measure, 0.5 * (1 + 1e-9));
  EXPECT_GT(r.lipschitz.at("b1").measure, 0.1);
}

TEST(Hypotheses, SuperlinearDriftFailsDeclaredLipschitz) {
  auto c = scalar_system([](double, const Vec& x, const EmpiricalMeasure&) { return scalar_vec(x(0) * x(0)); },
                         1.0, 0.0, [](double, const Vec& x, const EmpiricalMeasure&) { return x; });
  c.constants.lipschitz = 1.0;
  const auto r = estimate_hypotheses(c);
  EXPECT_FALSE(r.passes("H1'"));
  EXPECT_FALSE(r.all_pass());
  EXPECT_TRUE(r.passes("H3"));  // not declared
}

TEST(Hypotheses, EstimatesGrowWithSampleCount) {
  const auto pr = make_preset("tanh-observation");
  HypothesisSampler small, large;
  small.pairs = 50;
  large.pairs = 200;
  const auto a = estimate_hypotheses(pr.coeffs, small), b = estimate_hypotheses(pr.coeffs, large);
  for (const auto& [key, est] : a.lipschitz) {
    EXPECT_LE(est.state, b.lipschitz.at(key).state);
    EXPECT_LE(est.measure, b.lipschitz.at(key).measure);
  }
  EXPECT_LE(a.bound_sup, b.bound_sup);
  EXPECT_TRUE(b.all_pass());
}
