#pragma once

// Hidden Gaussian market: OU drift, returns, Poisson-timed expert opinions
// and the continuous-time expert, all on one event-augmented time grid.

#include <unsupported/Eigen/MatrixFunctions>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "driftlab/errors.hpp"
#include "driftlab/matcore.hpp"
#include "driftlab/model.hpp"
#include "driftlab/rng.hpp"

namespace driftlab {

inline constexpr double kTimeTol = 1e-12;

inline Matrix expm(const Matrix& a) {
    const Eigen::MatrixXd dyn = a;
    const Eigen::MatrixXd e = dyn.exp();
    return e;
}

/// int_0^t e^{As} Q e^{A^T s} ds for symmetric A, by diagonalising A.
inline Matrix gramian_symmetric(const Matrix& a, const Matrix& q, double t) {
    const EigenDecomposition ed = symmetric_eigen(a);
    const Matrix qr = ed.vectors.transpose() * q * ed.vectors;
    const Eigen::Index d = a.rows();
    Matrix g(d, d);
    for (Eigen::Index i = 0; i < d; ++i) {
        for (Eigen::Index j = 0; j < d; ++j) {
            const double c = ed.values(i) + ed.values(j);
            const double phi = (std::abs(c * t) < 1e-300) ? t : std::expm1(c * t) / c;
            g(i, j) = qr(i, j) * phi;
        }
    }
    return ed.vectors * g * ed.vectors.transpose();
}

/// Same integral for general A via the block-exponential identity
/// exp([[-A, Q], [0, A^T]] t) = [[., G12], [0, e^{A^T t}]], result e^{At} G12.
inline Matrix gramian_block(const Matrix& a, const Matrix& q, double t) {
    const Eigen::Index d = a.rows();
    Eigen::MatrixXd block = Eigen::MatrixXd::Zero(2 * d, 2 * d);
    block.topLeftCorner(d, d) = -a * t;
    block.topRightCorner(d, d) = q * t;
    block.bottomRightCorner(d, d) = a.transpose() * t;
    const Eigen::MatrixXd e = block.exp();
    const Eigen::MatrixXd f22 = e.bottomRightCorner(d, d);
    const Eigen::MatrixXd g12 = e.topRightCorner(d, d);
    return f22.transpose() * g12;
}

inline Matrix gramian(const Matrix& a, const Matrix& q, double t, bool a_symmetric) {
    const Matrix g = a_symmetric ? gramian_symmetric(a, q, t) : gramian_block(a, q, t);
    return 0.5 * (g + g.transpose());
}

inline void check_time(const Model& model, double t) {
    if (!(t >= 0.0) || t > model.horizon() + kTimeTol) {
        throw ArgumentError("time " + std::to_string(t) + " outside [0, T]");
    }
}

/// E[mu_t] = mu_bar + e^{-kappa t}(m0_prior - mu_bar).
inline Vector ou_mean(const Model& model, double t) {
    check_time(model, t);
    return model.mu_bar() + expm(-model.kappa() * t) * (model.m0_prior() - model.mu_bar());
}

/// Cov(mu_s, mu_t). Not symmetric for s != t when d > 1, hence a plain Matrix.
inline Matrix ou_cov(const Model& model, double s, double t) {
    check_time(model, s);
    check_time(model, t);
    const Matrix inner =
        model.q0_prior().matrix() +
        gramian(model.kappa(), model.sigma_mu().matrix(), std::min(s, t), model.kappa_symmetric());
    return expm(-model.kappa() * s) * inner * expm(-model.kappa().transpose() * t);
}

inline SpdMatrix ou_var(const Model& model, double t) {
    return SpdMatrix(SymMatrix(ou_cov(model, t, t)));
}

/// Exact Gaussian OU transition over a step: mu' = mu_bar + Phi (mu - mu_bar) + L xi.
/// Symmetric kappa reuses one eigendecomposition; otherwise steps are cached
/// per distinct dt.
class OuTransition {
  public:
    struct Step {
        Matrix phi;         // e^{-kappa dt}
        SpdMatrix cov;      // V(dt) = int_0^dt e^{-kappa s} Sigma_mu e^{-kappa^T s} ds
        Matrix noise_root;  // V(dt)^{1/2}
    };

    explicit OuTransition(const Model& model) : model_(&model) {
        if (model.kappa_symmetric()) {
            kappa_eigen_ = symmetric_eigen(model.kappa());
            sigma_rot_ = kappa_eigen_->vectors.transpose() * model.sigma_mu().matrix() *
                         kappa_eigen_->vectors;
        }
    }

    const Step& step(double dt) {
        if (kappa_eigen_) {
            scratch_ = symmetric_step(dt);
            return scratch_;
        }
        auto it = cache_.find(dt);
        if (it != cache_.end()) return it->second;
        const Model& m = *model_;
        Step s;
        s.phi = expm(-m.kappa() * dt);
        s.cov = SpdMatrix(SymMatrix(gramian_block(Matrix(-m.kappa()), m.sigma_mu().matrix(), dt)));
        s.noise_root = spd_sqrt(s.cov).matrix();
        return cache_.emplace(dt, std::move(s)).first->second;
    }

  private:
    Step symmetric_step(double dt) const {
        const EigenDecomposition& ed = *kappa_eigen_;
        const Eigen::Index d = ed.values.size();
        Step s;
        if (d == 1) {
            const double k = ed.values(0);
            const double var = -sigma_rot_(0, 0) * std::expm1(-2.0 * k * dt) / (2.0 * k);
            s.phi = Matrix::Constant(1, 1, std::exp(-k * dt));
            s.cov = SpdMatrix(Matrix::Constant(1, 1, var));
            s.noise_root = Matrix::Constant(1, 1, std::sqrt(var));
            return s;
        }
        const Vector decay = (-ed.values * dt).array().exp().matrix();
        s.phi = ed.vectors * decay.asDiagonal() * ed.vectors.transpose();
        Matrix g(d, d);
        for (Eigen::Index i = 0; i < d; ++i) {
            for (Eigen::Index j = 0; j < d; ++j) {
                const double c = ed.values(i) + ed.values(j);
                g(i, j) = -sigma_rot_(i, j) * std::expm1(-c * dt) / c;
            }
        }
        s.cov = SpdMatrix(SymMatrix(Matrix(ed.vectors * g * ed.vectors.transpose())));
        s.noise_root = spd_sqrt(s.cov).matrix();
        return s;
    }

    const Model* model_;
    std::optional<EigenDecomposition> kappa_eigen_;
    Matrix sigma_rot_;
    Step scratch_;
    std::map<double, Step> cache_;
};

enum class EventFlag : std::uint8_t { none = 0, expert_arrival = 1 };

/// Strictly increasing times from 0 to T with arrival markers.
struct TimeGrid {
    std::vector<double> points;
    std::vector<EventFlag> flags;

    std::size_t size() const { return points.size(); }
    std::size_t intervals() const { return points.empty() ? 0 : points.size() - 1; }
    double dt(std::size_t i) const { return points[i + 1] - points[i]; }
    bool is_arrival(std::size_t i) const { return flags[i] == EventFlag::expert_arrival; }

    /// Index of the grid point within kTimeTol of t.
    std::optional<std::size_t> find(double t) const {
        auto it = std::lower_bound(points.begin(), points.end(), t - kTimeTol);
        if (it != points.end() && std::abs(*it - t) <= kTimeTol) {
            return static_cast<std::size_t>(it - points.begin());
        }
        return std::nullopt;
    }
};

/// i.i.d. Exponential(lambda) gaps accumulated until they pass T.
inline std::vector<double> simulate_arrivals(double lambda, double horizon, Rng& rng) {
    if (!(lambda >= 0.0) || std::isinf(lambda)) {
        throw ArgumentError("arrival intensity must be finite and >= 0");
    }
    std::vector<double> times;
    if (lambda == 0.0) return times;
    std::exponential_distribution<double> gap(lambda);
    double t = gap(rng);
    while (t <= horizon) {
        if (t > 0.0) times.push_back(t);
        t += gap(rng);
    }
    return times;
}

/// Uniform mesh with spacing <= dt_max, merged with arrival times (flagged)
/// and any extra required points (unflagged). Points closer than kTimeTol
/// collapse onto the earlier one.
inline TimeGrid build_grid(double horizon, double dt_max, std::span<const double> arrivals,
                           std::span<const double> extra_points = {}) {
    if (!(dt_max > 0.0)) throw ArgumentError("dt_max must be positive");
    if (!(horizon > 0.0)) throw ArgumentError("horizon must be positive");
    const double ratio = horizon / dt_max;
    const auto n = static_cast<std::size_t>(std::max(1.0, std::ceil(ratio - 1e-9 * ratio)));

    std::vector<std::pair<double, EventFlag>> all;
    all.reserve(n + 1 + arrivals.size() + extra_points.size());
    for (std::size_t k = 0; k <= n; ++k) {
        const double t = (k == n) ? horizon : horizon * static_cast<double>(k) / static_cast<double>(n);
        all.emplace_back(t, EventFlag::none);
    }
    for (double a : arrivals) {
        if (!(a > 0.0) || a > horizon + kTimeTol) {
            throw ArgumentError("arrival time outside (0, T]");
        }
        all.emplace_back(std::min(a, horizon), EventFlag::expert_arrival);
    }
    for (double e : extra_points) {
        if (!(e >= 0.0) || e > horizon + kTimeTol) {
            throw ArgumentError("grid point outside [0, T]");
        }
        all.emplace_back(std::min(e, horizon), EventFlag::none);
    }
    std::stable_sort(all.begin(), all.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });

    TimeGrid grid;
    grid.points.reserve(all.size());
    grid.flags.reserve(all.size());
    for (const auto& [t, flag] : all) {
        if (!grid.points.empty() && t - grid.points.back() <= kTimeTol) {
            if (flag == EventFlag::expert_arrival) grid.flags.back() = flag;
            continue;
        }
        grid.points.push_back(t);
        grid.flags.push_back(flag);
    }
    // The last mesh point is T itself; a merged neighbour keeps T as value.
    grid.points.back() = horizon;
    return grid;
}

inline Vector standard_normal(int d, Rng& rng) {
    std::normal_distribution<double> normal;
    Vector v(d);
    for (int i = 0; i < d; ++i) v(i) = normal(rng);
    return v;
}

/// mu_0 ~ N(m0_prior, q0_prior), then the exact OU transition per interval.
inline std::vector<Vector> simulate_drift(const Model& model, const TimeGrid& grid, Rng& rng) {
    const int d = model.dim();
    std::vector<Vector> mu;
    mu.reserve(grid.size());
    mu.push_back(model.m0_prior() + model.q0_prior_sqrt().matrix() * standard_normal(d, rng));
    OuTransition transition(model);
    for (std::size_t i = 0; i < grid.intervals(); ++i) {
        const auto& step = transition.step(grid.dt(i));
        const Vector& prev = mu.back();
        mu.push_back(model.mu_bar() + step.phi * (prev - model.mu_bar()) +
                     step.noise_root * standard_normal(d, rng));
    }
    return mu;
}

/// dR_i = mu_{t_i} dt_i + sigma_R sqrt(dt_i) xi_i.
inline std::vector<Vector> simulate_returns(const Model& model, const TimeGrid& grid,
                                            std::span<const Vector> mu, Rng& rng) {
    if (mu.size() != grid.size()) throw ArgumentError("drift path does not match grid");
    const int d = model.dim();
    const Matrix& sigma = model.params().sigma_R;
    std::vector<Vector> dr;
    dr.reserve(grid.intervals());
    for (std::size_t i = 0; i < grid.intervals(); ++i) {
        const double dt = grid.dt(i);
        dr.push_back(mu[i] * dt + std::sqrt(dt) * (sigma * standard_normal(d, rng)));
    }
    return dr;
}

struct ExpertEvent {
    double t = 0.0;
    std::size_t grid_index = 0;
    Vector z;
    /// Uniform mark used to thin the arrival stream to a lower intensity.
    double mark = 0.0;
};

/// Z_k = mu_{T_k} + Gamma^{1/2} eps_k for every arrival (which must be a grid point).
inline std::vector<ExpertEvent> generate_expert_opinions(const Model& model, const TimeGrid& grid,
                                                         std::span<const Vector> mu,
                                                         std::span<const double> arrivals,
                                                         Rng& rng) {
    if (mu.size() != grid.size()) throw ArgumentError("drift path does not match grid");
    std::vector<ExpertEvent> events;
    events.reserve(arrivals.size());
    for (double a : arrivals) {
        const auto idx = grid.find(std::min(a, model.horizon()));
        if (!idx || !grid.is_arrival(*idx)) {
            throw ArgumentError("arrival time is not a flagged grid point");
        }
        ExpertEvent ev;
        ev.t = grid.points[*idx];
        ev.grid_index = *idx;
        ev.z = mu[*idx] + model.gamma_sqrt().matrix() * standard_normal(model.dim(), rng);
        events.push_back(std::move(ev));
    }
    return events;
}

/// dJ_i = mu_{t_i} dt_i + lambda^{-1/2} sigma_J_bar sqrt(dt_i) zeta_i, with
/// sigma_J_bar the symmetric root of the base covariance. lambda = inf gives
/// the noiseless limit.
inline std::vector<Vector> simulate_continuous_expert(const Model& model, const TimeGrid& grid,
                                                      std::span<const Vector> mu, double lambda,
                                                      Rng& rng) {
    if (!(lambda > 0.0)) throw ArgumentError("continuous expert needs lambda > 0");
    if (mu.size() != grid.size()) throw ArgumentError("drift path does not match grid");
    const double scale = std::isinf(lambda) ? 0.0 : 1.0 / std::sqrt(lambda);
    const Matrix& root = model.sigma_j_bar_sqrt().matrix();
    std::vector<Vector> dj;
    dj.reserve(grid.intervals());
    for (std::size_t i = 0; i < grid.intervals(); ++i) {
        const double dt = grid.dt(i);
        dj.push_back(mu[i] * dt + (scale * std::sqrt(dt)) * (root * standard_normal(model.dim(), rng)));
    }
    return dj;
}

/// log S_t^i = log s0^i + R_t^i - 1/2 sum_j (sigma_R^{ij})^2 t.
inline std::vector<Vector> returns_to_log_prices(const TimeGrid& grid, std::span<const Vector> returns,
                                                 const Matrix& sigma_R, const Vector& s0) {
    if (returns.size() != grid.intervals()) throw ArgumentError("returns do not match grid");
    if ((s0.array() <= 0.0).any()) throw ArgumentError("initial prices must be positive");
    const Vector correction = 0.5 * sigma_R.array().square().rowwise().sum().matrix();
    const Vector log_s0 = s0.array().log().matrix();
    std::vector<Vector> out;
    out.reserve(grid.size());
    Vector cumulative = Vector::Zero(s0.size());
    out.push_back(log_s0);
    for (std::size_t i = 0; i < returns.size(); ++i) {
        cumulative += returns[i];
        out.push_back(log_s0 + cumulative - correction * grid.points[i + 1]);
    }
    return out;
}

/// One simulated trajectory of every observable and hidden quantity.
struct MarketPath {
    TimeGrid grid;
    std::vector<Vector> mu;                          // per grid point
    std::vector<Vector> returns;                     // per interval
    std::vector<ExpertEvent> expert_events;          // ordered by time
    std::optional<std::vector<Vector>> j_increments;  // per interval
    double lambda = 0.0;                              // arrival intensity
    std::optional<double> j_lambda;                   // continuous-expert intensity
    std::uint64_t seed = 0;
    std::uint64_t path_index = 0;
};

struct PathSpec {
    double dt_max = 1e-3;
    double lambda = 0.0;                // expert arrival intensity
    std::optional<double> j_lambda;     // continuous expert, if any
    std::vector<double> extra_points;   // e.g. evaluation times
    std::uint64_t seed = 0;
    std::uint64_t path_index = 0;
};

inline MarketPath simulate_market_path(const Model& model, const PathSpec& spec) {
    auto stream = [&](StreamTag tag) { return make_stream(spec.seed, spec.path_index, tag); };
    Rng arrivals_rng = stream(StreamTag::arrivals);
    const std::vector<double> arrivals = simulate_arrivals(spec.lambda, model.horizon(), arrivals_rng);

    MarketPath path;
    path.lambda = spec.lambda;
    path.j_lambda = spec.j_lambda;
    path.seed = spec.seed;
    path.path_index = spec.path_index;
    path.grid = build_grid(model.horizon(), spec.dt_max, arrivals, spec.extra_points);

    Rng drift_rng = stream(StreamTag::drift);
    path.mu = simulate_drift(model, path.grid, drift_rng);
    Rng returns_rng = stream(StreamTag::returns);
    path.returns = simulate_returns(model, path.grid, path.mu, returns_rng);
    Rng expert_rng = stream(StreamTag::expert);
    path.expert_events = generate_expert_opinions(model, path.grid, path.mu, arrivals, expert_rng);
    Rng thinning_rng = stream(StreamTag::thinning);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    for (auto& ev : path.expert_events) ev.mark = unif(thinning_rng);
    if (spec.j_lambda) {
        Rng j_rng = stream(StreamTag::jexpert);
        path.j_increments = simulate_continuous_expert(model, path.grid, path.mu, *spec.j_lambda, j_rng);
    }
    return path;
}

/// Keeps each expert event independently with probability lambda / path.lambda
/// (via its mark); dropped arrivals stay on the grid as ordinary points.
inline MarketPath thin_expert_events(const MarketPath& path, double lambda) {
    if (!(lambda >= 0.0) || lambda > path.lambda * (1.0 + 1e-12)) {
        throw ArgumentError("thinning target must lie in [0, path lambda]");
    }
    MarketPath out = path;
    out.lambda = lambda;
    const double keep = path.lambda > 0.0 ? lambda / path.lambda : 0.0;
    out.expert_events.clear();
    std::fill(out.grid.flags.begin(), out.grid.flags.end(), EventFlag::none);
    for (const auto& ev : path.expert_events) {
        if (ev.mark < keep) {
            out.grid.flags[ev.grid_index] = EventFlag::expert_arrival;
            out.expert_events.push_back(ev);
        }
    }
    return out;
}

}  // namespace driftlab
