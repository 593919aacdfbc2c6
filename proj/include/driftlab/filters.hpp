#pragma once

// Kalman-type filters for the three information regimes: returns only (R),
// returns plus Poisson-timed expert opinions (Z), returns plus a
// continuous-time expert (J). Covariances follow Riccati ODEs integrated by
// RK4; means use an Euler-Maruyama step per grid interval.

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "driftlab/errors.hpp"
#include "driftlab/market.hpp"
#include "driftlab/matcore.hpp"
#include "driftlab/model.hpp"

namespace driftlab {

enum class Regime { R, Z, J };

inline const char* regime_name(Regime r) {
    switch (r) {
        case Regime::R: return "R";
        case Regime::Z: return "Z";
        case Regime::J: return "J";
    }
    return "?";
}

struct FilterState {
    double t = 0.0;
    Vector m;
    SymMatrix q;
};

struct FilterPath {
    TimeGrid grid;
    /// Value at each grid point; post-update at arrival points.
    std::vector<FilterState> states;
    /// Pre-update value (left limit); equals states[i] away from arrivals.
    std::vector<FilterState> minus;
    Regime regime = Regime::R;
    double lambda = 0.0;
};

/// Quadratic Riccati right-hand side Sigma_mu - kappa q - q kappa^T - q H q.
/// H = Sigma_R^{-1} for the R flow, Sigma_R^{-1} + lambda Sigma_J_bar^{-1} for J.
struct RiccatiRhs {
    Matrix sigma_mu;
    Matrix kappa;
    Matrix info;
    /// lambda * ||Sigma_J_bar^{-1}||_F, used to shrink RK4 steps in stiff cases.
    double stiffness = 0.0;

    Matrix operator()(const Matrix& q) const {
        Matrix kq = kappa * q;
        Matrix out = sigma_mu - kq - kq.transpose() - q * info * q;
        return 0.5 * (out + out.transpose());
    }
};

inline RiccatiRhs make_riccati_r(const Model& model) {
    return {model.sigma_mu().matrix(), model.kappa(), model.sigma_r_inv().matrix(), 0.0};
}

/// J flow with Sigma_J = Sigma_J_bar / lambda. lambda = 0 removes the channel.
inline RiccatiRhs make_riccati_j(const Model& model, double lambda) {
    if (!(lambda >= 0.0) || std::isinf(lambda)) {
        throw ArgumentError("J-channel intensity must be finite and >= 0");
    }
    const Matrix& jinv = model.sigma_j_bar_inv().matrix();
    return {model.sigma_mu().matrix(), model.kappa(),
            Matrix(model.sigma_r_inv().matrix() + lambda * jinv), lambda * jinv.norm()};
}

inline SymMatrix riccati_rhs_r(const SymMatrix& q, const Model& model) {
    return SymMatrix(make_riccati_r(model)(q.matrix()));
}

inline SymMatrix riccati_rhs_j(const SymMatrix& q, const Model& model, double lambda) {
    return SymMatrix(make_riccati_j(model, lambda)(q.matrix()));
}

struct RiccatiOptions {
    /// Base RK4 step; shrunk by 1 / max(1, stiffness * ||q||_F).
    double dt_ode = 1e-3;
};

namespace detail {

/// Symmetrizes and clamps tiny negative eigenvalues; larger ones mean the
/// step size was too coarse.
inline Matrix project_psd(const Matrix& q) {
    Matrix s = 0.5 * (q + q.transpose());
    if (s.rows() == 1) {
        if (s(0, 0) >= 0.0) return s;
    } else {
        Eigen::LLT<Matrix> llt(s);
        if (llt.info() == Eigen::Success) return s;
    }
    try {
        return clamp_psd(s);
    } catch (const NumericError&) {
        throw IntegratorError("Riccati step left the PSD cone; reduce dt_ode");
    }
}

inline Matrix rk4_step(const RiccatiRhs& rhs, const Matrix& q, double h) {
    const Matrix k1 = rhs(q);
    const Matrix k2 = rhs(q + 0.5 * h * k1);
    const Matrix k3 = rhs(q + 0.5 * h * k2);
    const Matrix k4 = rhs(q + h * k3);
    return q + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

}  // namespace detail

/// Advances q over one interval of length dt with RK4 substeps. The substep
/// bound is re-evaluated from the current q at the start of the interval.
inline Matrix integrate_riccati(const RiccatiRhs& rhs, const Matrix& q, double dt,
                                const RiccatiOptions& opts = {}) {
    if (!(dt > 0.0)) return q;
    const double scale = std::max(1.0, rhs.stiffness * q.norm());
    const double h_max = opts.dt_ode * std::min(1.0, 1.0 / scale);
    const auto n = static_cast<long>(std::ceil(dt / h_max - 1e-9));
    const double h = dt / static_cast<double>(std::max(1L, n));
    Matrix cur = q;
    for (long k = 0; k < std::max(1L, n); ++k) {
        cur = detail::project_psd(detail::rk4_step(rhs, cur, h));
    }
    return cur;
}

/// Deterministic covariance trajectory on the grid.
inline std::vector<SymMatrix> solve_riccati(const RiccatiRhs& rhs, const SymMatrix& q0,
                                            const TimeGrid& grid, const RiccatiOptions& opts = {}) {
    std::vector<SymMatrix> out;
    out.reserve(grid.size());
    Matrix q = detail::project_psd(q0.matrix());
    out.emplace_back(q);
    for (std::size_t i = 0; i < grid.intervals(); ++i) {
        q = integrate_riccati(rhs, q, grid.dt(i), opts);
        out.emplace_back(q);
    }
    return out;
}

/// Continuous-expert observation over one interval.
struct JChannel {
    Vector dj;
    double lambda = 0.0;
};

/// Euler-Maruyama step of the innovation form of the mean filter.
inline Vector propagate_mean(const FilterState& state, const Vector& dr, double dt, const Model& model,
                             const std::optional<JChannel>& extra = std::nullopt) {
    if (!(dt > 0.0)) throw ArgumentError("propagate_mean needs dt > 0");
    const Matrix& q = state.q.matrix();
    Vector next = state.m + model.kappa() * (model.mu_bar() - state.m) * dt +
                  q * (model.sigma_r_inv().matrix() * (dr - state.m * dt));
    if (extra) {
        next += extra->lambda * (q * (model.sigma_j_bar_inv().matrix() * (extra->dj - state.m * dt)));
    }
    return next;
}

/// Bayesian update at an expert arrival: rho = Gamma (Q- + Gamma)^{-1},
/// M+ = rho M- + (I - rho) z, Q+ = rho Q-.
inline FilterState bayes_update(const FilterState& minus, const Vector& z, const SpdMatrix& gamma) {
    const Matrix& q = minus.q.matrix();
    const Matrix& g = gamma.matrix();
    const Matrix s = q + g;
    Eigen::LLT<Matrix> llt(s);
    if (llt.info() != Eigen::Success) {
        throw SingularityError("bayes_update: Q- + Gamma is not positive definite");
    }
    // rho = Gamma S^{-1} = (S^{-1} Gamma)^T; I - rho = Q- S^{-1} is formed
    // directly to avoid cancellation when Q- is small against Gamma.
    const Matrix rho = llt.solve(g).transpose();
    const Matrix gain = llt.solve(q).transpose();
    FilterState plus;
    plus.t = minus.t;
    plus.m = minus.m + gain * (z - minus.m);
    plus.q = SymMatrix(detail::project_psd(rho * q));
    return plus;
}

namespace detail {

inline FilterPath start_path(const MarketPath& path, const Model& model, Regime regime, double lambda) {
    FilterPath fp;
    fp.grid = path.grid;
    fp.regime = regime;
    fp.lambda = lambda;
    fp.states.reserve(path.grid.size());
    fp.minus.reserve(path.grid.size());
    FilterState s0{path.grid.points.front(), model.m0(), SymMatrix(project_psd(model.q0().matrix()))};
    fp.states.push_back(s0);
    fp.minus.push_back(s0);
    return fp;
}

inline void check_path(const MarketPath& path, const Model& model) {
    if (path.mu.size() != path.grid.size() || path.returns.size() != path.grid.intervals()) {
        throw ArgumentError("market path is inconsistent with its grid");
    }
    if (path.grid.size() < 2 || model.dim() != path.mu.front().size()) {
        throw ArgumentError("market path dimension does not match the model");
    }
}

}  // namespace detail

namespace detail {

/// Mean recursion along a precomputed covariance trajectory (R and J filters).
inline FilterPath run_on_covariance(const MarketPath& path, const Model& model, Regime regime, double lambda,
                                    std::span<const SymMatrix> covariance) {
    if (covariance.size() != path.grid.size()) {
        throw ArgumentError("covariance trajectory does not match the grid");
    }
    FilterPath fp = start_path(path, model, regime, lambda);
    fp.states.front().q = covariance.front();
    fp.minus.front().q = covariance.front();
    for (std::size_t i = 0; i < path.grid.intervals(); ++i) {
        const FilterState& cur = fp.states.back();
        std::optional<JChannel> j;
        if (regime == Regime::J) j = JChannel{(*path.j_increments)[i], lambda};
        FilterState next{path.grid.points[i + 1],
                         propagate_mean(cur, path.returns[i], path.grid.dt(i), model, j), covariance[i + 1]};
        fp.minus.push_back(next);
        fp.states.push_back(std::move(next));
    }
    return fp;
}

inline void check_j_path(const MarketPath& path, double lambda) {
    if (!path.j_increments) throw ArgumentError("market path has no continuous-expert channel");
    if (path.j_increments->size() != path.grid.intervals()) {
        throw ArgumentError("continuous-expert increments do not match the grid");
    }
    if (!(lambda > 0.0)) throw ArgumentError("run_j_filter needs lambda > 0");
    if (path.j_lambda && std::abs(*path.j_lambda - lambda) > 1e-12 * lambda) {
        throw ArgumentError("path was simulated with a different continuous-expert intensity");
    }
}

}  // namespace detail

/// Return-only Kalman filter.
inline FilterPath run_r_filter(const MarketPath& path, const Model& model, const RiccatiOptions& opts = {}) {
    detail::check_path(path, model);
    return detail::run_on_covariance(path, model, Regime::R, 0.0,
                                     solve_riccati(make_riccati_r(model), model.q0(), path.grid, opts));
}

/// Same, with Q^R already solved on this grid (it does not depend on the path).
inline FilterPath run_r_filter(const MarketPath& path, const Model& model, std::span<const SymMatrix> covariance) {
    detail::check_path(path, model);
    return detail::run_on_covariance(path, model, Regime::R, 0.0, covariance);
}

/// Filter for returns plus the continuous-time expert with Sigma_J = Sigma_J_bar / lambda.
inline FilterPath run_j_filter(const MarketPath& path, const Model& model, double lambda,
                               const RiccatiOptions& opts = {}) {
    detail::check_path(path, model);
    detail::check_j_path(path, lambda);
    return detail::run_on_covariance(path, model, Regime::J, lambda,
                                     solve_riccati(make_riccati_j(model, lambda), model.q0(), path.grid, opts));
}

inline FilterPath run_j_filter(const MarketPath& path, const Model& model, double lambda,
                               std::span<const SymMatrix> covariance) {
    detail::check_path(path, model);
    detail::check_j_path(path, lambda);
    return detail::run_on_covariance(path, model, Regime::J, lambda, covariance);
}

/// R-dynamics between arrivals, Bayesian update at each flagged grid point.
inline FilterPath run_z_filter(const MarketPath& path, const Model& model, const RiccatiOptions& opts = {}) {
    detail::check_path(path, model);
    const RiccatiRhs rhs = make_riccati_r(model);
    FilterPath fp = detail::start_path(path, model, Regime::Z, path.lambda);
    std::size_t next_event = 0;
    const auto& events = path.expert_events;
    while (next_event < events.size() && events[next_event].grid_index == 0) ++next_event;
    for (std::size_t i = 0; i < path.grid.intervals(); ++i) {
        const FilterState& cur = fp.states.back();
        const double dt = path.grid.dt(i);
        FilterState minus{path.grid.points[i + 1], propagate_mean(cur, path.returns[i], dt, model),
                          SymMatrix(integrate_riccati(rhs, cur.q.matrix(), dt, opts))};
        FilterState post = minus;
        while (next_event < events.size() && events[next_event].grid_index == i + 1) {
            post = bayes_update(post, events[next_event].z, model.gamma());
            ++next_event;
        }
        fp.minus.push_back(std::move(minus));
        fp.states.push_back(std::move(post));
    }
    if (next_event != events.size()) {
        throw ArgumentError("expert events are not ordered along the grid");
    }
    return fp;
}

/// Integrates until ||rhs||_F < 1e-12 or t_max = 100 is reached.
inline SymMatrix stationary_riccati_by_integration(const RiccatiRhs& rhs, const SymMatrix& start) {
    constexpr double kChunk = 0.05;
    constexpr double kTMax = 100.0;
    Matrix q = start.matrix();
    for (double t = 0.0; t < kTMax; t += kChunk) {
        if (rhs(q).norm() < 1e-12) return SymMatrix(q);
        q = integrate_riccati(rhs, q, kChunk);
    }
    if (rhs(q).norm() < 1e-12) return SymMatrix(q);
    throw ConvergenceError("stationary Riccati iteration did not converge by t = 100");
}

/// Attracting stationary point of the R-Riccati flow. Closed form for d = 1,
/// long-time RK4 integration otherwise.
inline SymMatrix stationary_riccati_r(const Model& model) {
    const RiccatiRhs rhs = make_riccati_r(model);
    if (model.dim() == 1) {
        const double a = rhs.info(0, 0);
        const double b = 2.0 * rhs.kappa(0, 0);
        const double c = rhs.sigma_mu(0, 0);
        // Positive root of a q^2 + b q - c = 0 in cancellation-free form.
        return SymMatrix(Matrix::Constant(1, 1, 2.0 * c / (b + std::sqrt(b * b + 4.0 * a * c))));
    }
    return stationary_riccati_by_integration(rhs, model.q0());
}

}  // namespace driftlab
