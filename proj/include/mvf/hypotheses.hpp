#pragma once

#include "mvf/coefficients.hpp"
#include "mvf/wasserstein.hpp"

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace mvf {

struct HypothesisSampler {
  double box = 3.0;       // states drawn uniformly from [-box, box]^n
  double horizon = 1.0;   // times drawn uniformly from [0, horizon]
  int pairs = 200;
  int atoms = 8;          // atoms per sampled measure (equal sizes -> exact W2)
  std::uint64_t seed = 7;
};

struct LipschitzEstimate {
  double state = 0.0;
  double measure = 0.0;
};

enum class Verdict { pass, fail, not_declared };

inline const char* to_string(Verdict v) {
  switch (v) {
    case Verdict::pass: return "pass";
    case Verdict::fail: return "fail";
    case Verdict::not_declared: return "not-declared";
  }
  return "?";
}

struct HypothesisVerdict {
  std::string family;
  std::optional<double> declared;
  double observed = 0.0;
  Verdict verdict = Verdict::not_declared;
};

struct HypothesisReport {
  std::map<std::string, LipschitzEstimate> lipschitz;
  double growth_ratio = 0.0;   // sup (|b1|^2+|s0|^2+|s1|^2) / (1+|x|+|mu|_2)^2
  double bound_sup = 0.0;      // sup |b1|+|s0|+|s1|
  double b2_sup = 0.0;
  double sigma2_inv_sup = 0.0;
  double sigma2_sup = 0.0;
  std::vector<HypothesisVerdict> verdicts;

  double k2_estimate() const { return std::max({b2_sup, sigma2_inv_sup, sigma2_sup}); }
  bool passes(const std::string& family) const {
    for (const auto& v : verdicts)
      if (v.family == family) return v.verdict != Verdict::fail;
    return true;
  }
  bool all_pass() const {
    return std::none_of(verdicts.begin(), verdicts.end(),
                        [](const HypothesisVerdict& v) { return v.verdict == Verdict::fail; });
  }
};

namespace detail {

inline EmpiricalMeasure random_cloud(std::mt19937_64& rng, int n, int atoms, double box) {
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::uniform_real_distribution<double> scale(0.1, 1.0);
  std::normal_distribution<double> gauss;
  Vec centre(n);
  for (int j = 0; j < n; ++j) centre(j) = 0.5 * box * unit(rng);
  const double s = scale(rng);
  std::vector<double> pts(static_cast<std::size_t>(atoms * n));
  for (int a = 0; a < atoms; ++a)
    for (int j = 0; j < n; ++j) pts[static_cast<std::size_t>(a * n + j)] = centre(j) + s * gauss(rng);
  return EmpiricalMeasure::uniform(n, std::move(pts));
}

inline HypothesisVerdict judge(const std::string& family, std::optional<double> declared, double observed) {
  HypothesisVerdict v{family, declared, observed, Verdict::not_declared};
  if (declared) v.verdict = observed > *declared * 1.05 ? Verdict::fail : Verdict::pass;
  return v;
}

}  // namespace detail

/**
 * @brief Screens the Lipschitz/growth/boundedness hypotheses by sampled ratios.
 *
 * Samples are drawn from one deterministic stream, so running with more
 * pairs extends the sample set and the reported maxima never decrease.
 * A family fails when its sampled ratio exceeds the declared constant by
 * more than 5%.
 */
inline HypothesisReport estimate_hypotheses(const CoefficientSet& c, const HypothesisSampler& s = {}) {
  c.require_finalized();
  HypothesisReport r;
  std::mt19937_64 rng(s.seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::uniform_real_distribution<double> time(0.0, s.horizon);
  auto draw_x = [&] {
    Vec x(c.n);
    for (int j = 0; j < c.n; ++j) x(j) = s.box * unit(rng);
    return x;
  };
  const bool sensor = c.mode == NoiseMode::sensor_correlated;
  auto& lb1 = r.lipschitz["b1"];
  auto& ls0 = r.lipschitz["sigma0"];
  auto& ls1 = r.lipschitz["sigma1"];
  auto& lb2 = r.lipschitz["b2"];
  for (int p = 0; p < s.pairs; ++p) {
    const double t = time(rng);
    const Vec x1 = draw_x();
    const Vec x2 = draw_x();
    const EmpiricalMeasure mu1 = detail::random_cloud(rng, c.n, s.atoms, s.box);
    const EmpiricalMeasure mu2 = detail::random_cloud(rng, c.n, s.atoms, s.box);
    const double dx = (x1 - x2).norm();
    const double dw = wasserstein2(mu1, mu2).value;
    auto ratio = [](double num, double den) { return den > 1e-12 ? num / den : 0.0; };

    auto vec_lip = [&](const VectorField& f, LipschitzEstimate& e) {
      e.state = std::max(e.state, ratio((f(t, x1, mu1) - f(t, x2, mu1)).norm(), dx));
      e.measure = std::max(e.measure, ratio((f(t, x1, mu1) - f(t, x1, mu2)).norm(), dw));
    };
    auto mat_lip = [&](const MatrixField& f, LipschitzEstimate& e) {
      e.state = std::max(e.state, ratio(frob(f(t, x1, mu1) - f(t, x2, mu1)), dx));
      e.measure = std::max(e.measure, ratio(frob(f(t, x1, mu1) - f(t, x1, mu2)), dw));
    };
    vec_lip(c.b1, lb1);
    if (!sensor) mat_lip(c.sigma0, ls0);
    mat_lip(c.sigma1, ls1);
    vec_lip(c.b2, lb2);

    for (const auto* pt : {&x1, &x2}) {
      const Vec b = c.b1(t, *pt, mu1);
      const double s0 = sensor ? 0.0 : frob(c.sigma0(t, *pt, mu1));
      const double s1 = frob(c.sigma1(t, *pt, mu1));
      const double scale = 1.0 + pt->norm() + mu1.moment_norm();
      r.growth_ratio = std::max(r.growth_ratio, (b.squaredNorm() + s0 * s0 + s1 * s1) / (scale * scale));
      r.bound_sup = std::max(r.bound_sup, b.norm() + s0 + s1);
      r.b2_sup = std::max(r.b2_sup, c.b2(t, *pt, mu1).norm());
    }
    const Mat s2 = c.sigma2(t);
    r.sigma2_sup = std::max(r.sigma2_sup, frob(s2));
    r.sigma2_inv_sup = std::max(r.sigma2_inv_sup, frob(observation_inverse(c, t)));
  }
  const double lip = std::max({lb1.state, lb1.measure, ls0.state, ls0.measure, ls1.state, ls1.measure});
  r.verdicts.push_back(detail::judge("H1'", c.constants.lipschitz, lip));
  r.verdicts.push_back(detail::judge("H2", c.constants.growth, r.growth_ratio));
  r.verdicts.push_back(detail::judge("H2'", c.constants.bound, r.bound_sup));
  r.verdicts.push_back(detail::judge("H2_b2_sigma2", c.constants.obs_bound, r.k2_estimate()));
  r.verdicts.push_back(detail::judge("H3", c.constants.obs_lipschitz, std::max(lb2.state, lb2.measure)));
  return r;
}

}  // namespace mvf
