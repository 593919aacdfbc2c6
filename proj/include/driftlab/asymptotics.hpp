#pragma once

// Bound machinery for high-intensity expert opinions: the drift and jump
// functions of the Z-covariance semimartingale, the linear trace bounds on
// those drifts, and the explicit constants C^Z(delta), C^J(delta).

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "driftlab/errors.hpp"
#include "driftlab/filters.hpp"
#include "driftlab/matcore.hpp"
#include "driftlab/model.hpp"

namespace driftlab {

struct BoundConstants {
    double a_alpha = 0.0;
    double b_alpha = 0.0;
    /// Supremum of admissible b_alpha (Z regime only).
    double b_alpha_bar = 0.0;
    /// Intensity above which the Z trace bound holds; infinite when b_alpha -> b_alpha_bar.
    double lambda0 = 0.0;
    double c_z = 0.0;
    double c_j = 0.0;
    double delta = 0.0;
    /// Free parameter of the J trace bound.
    double r = 0.0;
};

/// alpha^Z(q) = Sigma_mu - kappa q - q kappa^T - q Sigma_R^{-1} q - lambda q (q + Gamma)^{-1} q.
inline SymMatrix alpha_z(const SymMatrix& q, double lambda, const Model& model) {
    if (!(lambda >= 0.0)) throw ArgumentError("alpha_z needs lambda >= 0");
    const Matrix& qm = q.matrix();
    Eigen::LLT<Matrix> llt(Matrix(qm + model.gamma().matrix()));
    const Matrix jump = qm * llt.solve(qm);
    return SymMatrix(Matrix(make_riccati_r(model)(qm) - lambda * jump));
}

/// gamma(q) = -q (q + Gamma)^{-1} q, the covariance jump at an arrival.
inline SymMatrix gamma_jump(const SymMatrix& q, const SpdMatrix& gamma) {
    const Matrix& qm = q.matrix();
    Eigen::LLT<Matrix> llt(Matrix(qm + gamma.matrix()));
    if (llt.info() != Eigen::Success) throw SingularityError("gamma_jump: q + Gamma singular");
    return SymMatrix(Matrix(-(qm * llt.solve(qm))));
}

/// alpha^J(q): the J Riccati right-hand side with Sigma_J = Sigma_J_bar / lambda.
inline SymMatrix alpha_j(const SymMatrix& q, double lambda, const Model& model) {
    if (!(lambda > 0.0)) throw ArgumentError("alpha_j needs lambda > 0");
    return riccati_rhs_j(q, model, lambda);
}

/// a*_alpha = 2 tr Sigma_mu + tr q0 / (e delta), the minimiser of the Z bound.
inline double default_a_alpha(const Model& model, double delta) {
    return 2.0 * trace(model.sigma_mu()) + trace(model.q0()) / (std::numbers::e * delta);
}

/// b_bar = 2 sqrt((a - tr Sigma_mu) / tr Gamma), b = b_fraction * b_bar,
/// lambda0 = (d (a - tr Sigma_mu) / (2 sqrt(tr Gamma (a - tr Sigma_mu)) - b tr Gamma))^2.
inline BoundConstants lemma43_constants(const Model& model, double a_alpha, double b_fraction) {
    const double tr_mu = trace(model.sigma_mu());
    const double tr_g = trace(model.gamma());
    if (!(a_alpha > tr_mu)) throw ArgumentError("a_alpha must exceed tr(Sigma_mu)");
    if (!(b_fraction > 0.0 && b_fraction <= 1.0)) throw ArgumentError("b_fraction must lie in (0, 1)");
    const double excess = a_alpha - tr_mu;
    BoundConstants c;
    c.a_alpha = a_alpha;
    c.b_alpha_bar = 2.0 * std::sqrt(excess / tr_g);
    c.b_alpha = b_fraction * c.b_alpha_bar;
    const double denom = 2.0 * std::sqrt(tr_g * excess) - c.b_alpha * tr_g;
    c.lambda0 = denom > 0.0 ? std::pow(model.dim() * excess / denom, 2)
                            : std::numeric_limits<double>::infinity();
    return c;
}

/// a = tr Sigma_mu + 1 / (d tr Sigma_J_bar r), b = 2 / (d tr Sigma_J_bar sqrt(r)); valid for all lambda > 0.
inline BoundConstants lemma51_constants(const Model& model, double r) {
    if (!(r > 0.0)) throw ArgumentError("r must be positive");
    const double c = model.dim() * trace(model.sigma_j_bar());
    BoundConstants k;
    k.r = r;
    k.a_alpha = trace(model.sigma_mu()) + 1.0 / (c * r);
    k.b_alpha = 2.0 / (c * std::sqrt(r));
    return k;
}

/// r* = (d tr Sigma_J_bar [tr q0 / (e delta) + tr Sigma_mu])^{-1}.
inline double r_star(const Model& model, double delta) {
    const double c = model.dim() * trace(model.sigma_j_bar());
    return 1.0 / (c * (trace(model.q0()) / (std::numbers::e * delta) + trace(model.sigma_mu())));
}

inline void check_delta(const Model& model, double delta) {
    if (!(delta > 0.0) || delta > model.horizon() * (1.0 + 1e-12)) {
        throw ArgumentError("delta must lie in (0, T]");
    }
}

/// C^Z(delta) = sqrt(tr Gamma [tr Sigma_mu + tr q0 / (e delta)]).
inline double bound_constant_z(const Model& model, double delta) {
    check_delta(model, delta);
    return std::sqrt(trace(model.gamma()) *
                     (trace(model.sigma_mu()) + trace(model.q0()) / (std::numbers::e * delta)));
}

/// C^J(delta) = sqrt(d tr Sigma_J_bar [tr Sigma_mu + tr q0 / (e delta)]).
inline double bound_constant_j(const Model& model, double delta) {
    check_delta(model, delta);
    return std::sqrt(model.dim() * trace(model.sigma_j_bar()) *
                     (trace(model.sigma_mu()) + trace(model.q0()) / (std::numbers::e * delta)));
}

/// lambda* = (b_alpha delta)^{-2}, where tr(q0) sqrt(lambda) e^{-sqrt(lambda) b delta} peaks.
inline double lambda_star(double b_alpha, double delta) { return 1.0 / std::pow(b_alpha * delta, 2); }

/// Intensity gate for the Z bounds together with the constants behind it.
struct ZGate {
    BoundConstants constants;
    double lambda_star = 0.0;
    /// max(lambda0, lambda*); the min(.) reading of the original condition is
    /// reported as lambda_q_min for comparison.
    double lambda_q = 0.0;
    double lambda_q_min = 0.0;
};

inline constexpr double kDefaultBFraction = 0.9;

inline ZGate z_gate(const Model& model, double delta, double b_fraction = kDefaultBFraction) {
    check_delta(model, delta);
    ZGate g;
    if (!(default_a_alpha(model, delta) > trace(model.sigma_mu()))) {
        // Sigma_mu = 0 and q0 = 0: Q^Z vanishes identically and every intensity qualifies.
        g.constants.delta = delta;
        return g;
    }
    g.constants = lemma43_constants(model, default_a_alpha(model, delta), b_fraction);
    g.constants.delta = delta;
    g.constants.c_z = bound_constant_z(model, delta);
    g.constants.c_j = bound_constant_j(model, delta);
    g.lambda_star = lambda_star(g.constants.b_alpha, delta);
    g.lambda_q = std::max(g.constants.lambda0, g.lambda_star);
    g.lambda_q_min = std::min(g.constants.lambda0, g.lambda_star);
    return g;
}

/// Margin scale max(1, a_alpha), so pass/fail thresholds are unit-free.
inline double margin_scale(const BoundConstants& c) { return std::max(1.0, c.a_alpha); }

/// (a - sqrt(lambda) b tr q) - tr alpha^Z(q); nonnegative for lambda >= lambda0.
inline double check_trace_inequality_z(const SymMatrix& q, double lambda, const BoundConstants& c,
                                       const Model& model) {
    if (!(lambda >= c.lambda0)) {
        throw ArgumentError("Z trace inequality requires lambda >= lambda0 (" +
                            std::to_string(c.lambda0) + ")");
    }
    return (c.a_alpha - std::sqrt(lambda) * c.b_alpha * trace(q)) - trace(alpha_z(q, lambda, model));
}

/// (a - sqrt(lambda) b tr q) - tr alpha^J(q); nonnegative for every lambda > 0.
inline double check_trace_inequality_j(const SymMatrix& q, double lambda, const BoundConstants& c,
                                       const Model& model) {
    if (!(lambda > 0.0)) throw ArgumentError("J trace inequality requires lambda > 0");
    return (c.a_alpha - std::sqrt(lambda) * c.b_alpha * trace(q)) - trace(alpha_j(q, lambda, model));
}

}  // namespace driftlab
