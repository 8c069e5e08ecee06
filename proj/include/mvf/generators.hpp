#pragma once

#include "mvf/coefficients.hpp"
#include "mvf/functionals.hpp"
#include "mvf/test_function.hpp"

namespace mvf {

/// h = sigma2^{-1} b2 with a precomputed inverse.
inline Vec observation_drift(const CoefficientSet& c, const Mat& sigma2_inv, double t, const Vec& x,
                             const EmpiricalMeasure& mu) {
  return sigma2_inv * c.b2(t, x, mu);
}

/// h(t, x, mu) = sigma2(t)^{-1} b2(t, x, mu); throws SingularMatrixError on a singular sigma2.
inline Vec eval_h(const CoefficientSet& c, double t, const Vec& x, const EmpiricalMeasure& mu) {
  return observation_drift(c, observation_inverse(c, t), t, x, mu);
}

/// (L_t phi)(x, mu) = grad phi . b1 + 1/2 tr(hess phi (s0 s0' + s1 s1')).
inline double generator_Lcal(const CoefficientSet& c, double t, const TestFunction& phi,
                             const EmpiricalMeasure& mu, const Vec& x) {
  const Vec g = phi.grad(x);
  const Mat h = phi.hess(x);
  return g.dot(c.b1(t, x, mu)) + 0.5 * (h.cwiseProduct(diffusion_sum(c, t, x, mu))).sum();
}

/// <mu, L_t psi_j> for the inner functions of F; shared by every x in a cloud.
inline Coords inner_generator_terms(const CoefficientSet& c, double t, const CylindricalStateFunctional& F,
                                    const EmpiricalMeasure& mu) {
  Coords out = Coords::Zero(static_cast<Eigen::Index>(F.inner.size()));
  for (std::size_t j = 0; j < F.inner.size(); ++j)
    out(static_cast<Eigen::Index>(j)) =
        mu.integrate([&](const Vec& y) { return generator_Lcal(c, t, F.inner[j], mu, y); });
  return out;
}

/// generator_Lbb with the coordinates z = F.coords(mu) and the inner generator terms precomputed.
inline double generator_Lbb(const CoefficientSet& c, double t, const CylindricalStateFunctional& F,
                            const EmpiricalMeasure& mu, const Vec& x, const Coords& z, const Coords& inner_terms) {
  double out = F.f_x(x, z).dot(c.b1(t, x, mu)) +
               0.5 * (F.f_xx(x, z).cwiseProduct(diffusion_sum(c, t, x, mu))).sum();
  if (F.inner.empty()) return out;
  return out + F.f_z(x, z).dot(inner_terms);
}

/// generator_Lbb with the measure integrals already evaluated by inner_generator_terms.
inline double generator_Lbb(const CoefficientSet& c, double t, const CylindricalStateFunctional& F,
                            const EmpiricalMeasure& mu, const Vec& x, const Coords& inner_terms) {
  if (!F.has_derivatives()) throw InvalidArgument("generator_Lbb: functional lacks derivative callbacks");
  return generator_Lbb(c, t, F, mu, x, F.coords(mu), inner_terms);
}

/**
 * @brief Generator of (X_t, L_{X_t}) acting on a cylindrical F in S.
 *
 * The measure terms reduce to sum_j d_{z_j} f * <mu, L_t psi_j>, with the
 * mu-integrals evaluated as weighted sums over the atoms of `mu`.
 */
inline double generator_Lbb(const CoefficientSet& c, double t, const CylindricalStateFunctional& F,
                            const EmpiricalMeasure& mu, const Vec& x) {
  if (!F.has_derivatives()) throw InvalidArgument("generator_Lbb: functional lacks derivative callbacks");
  return generator_Lbb(c, t, F, mu, x, inner_generator_terms(c, t, F, mu));
}

/// Per-coordinate ingredients of the measure-valued generator at a cloud nu.
struct ProjectedCoefficients {
  Coords xi;     // <nu, phi_u>
  Coords beta;   // <nu, L_t phi_u>
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor, kMaxCoords, kMaxDim>
      gamma;     // <nu, phi_u h^l + d_i phi_u (sigma1)^{il}>
};

inline ProjectedCoefficients project_coefficients(const CoefficientSet& c, double t,
                                                  const std::vector<TestFunction>& phis,
                                                  const EmpiricalMeasure& nu,
                                                  const EmpiricalMeasure& law_proxy) {
  const auto k = static_cast<Eigen::Index>(phis.size());
  ProjectedCoefficients out{Coords::Zero(k), Coords::Zero(k), decltype(out.gamma)::Zero(k, c.m)};
  const Mat s2inv = observation_inverse(c, t);
  for (std::size_t i = 0; i < nu.size(); ++i) {
    const double w = nu.weight(i);
    if (w == 0.0) continue;
    const Vec x = nu.point(i);
    const Vec h = observation_drift(c, s2inv, t, x, law_proxy);
    const Mat load = correlated_loading(c, t, x, law_proxy);
    const Vec b = c.b1(t, x, law_proxy);
    const Mat a = diffusion_sum(c, t, x, law_proxy);
    for (Eigen::Index u = 0; u < k; ++u) {
      const TestFunction& phi = phis[static_cast<std::size_t>(u)];
      const double v = phi.value(x);
      const Vec g = phi.grad(x);
      out.xi(u) += w * v;
      out.beta(u) += w * (g.dot(b) + 0.5 * phi.hess(x).cwiseProduct(a).sum());
      out.gamma.row(u) += w * (v * h + load.transpose() * g).transpose();
    }
  }
  return out;
}

/// 1/2 d2g(xi) : (gamma gamma') + dg(xi) . beta
inline double measure_generator_from_projection(const OuterFunction& g, const ProjectedCoefficients& p) {
  const CoordMat alpha = p.gamma * p.gamma.transpose();
  return 0.5 * g.hess(p.xi).cwiseProduct(alpha).sum() + g.grad(p.xi).dot(p.beta);
}

/**
 * @brief Generator L_t of the measure-valued Fokker-Planck equation on G in the class G.
 *
 * `law_proxy` stands for L_{X_t} inside b1, sigma, h.
 */
inline double generator_Lbf(const CoefficientSet& c, double t, const MeasureFunctional& G,
                            const EmpiricalMeasure& nu, const EmpiricalMeasure& law_proxy) {
  return measure_generator_from_projection(G.g, project_coefficients(c, t, G.phis, nu, law_proxy));
}

}  // namespace mvf
