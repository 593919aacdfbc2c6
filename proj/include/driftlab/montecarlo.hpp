#pragma once

// Monte Carlo harness for the filter asymptotics. Per-path values land in
// slots indexed by path, and every reduction is a pairwise sum over path
// order, so results do not depend on the number of workers.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <limits>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "driftlab/asymptotics.hpp"
#include "driftlab/errors.hpp"
#include "driftlab/filters.hpp"
#include "driftlab/market.hpp"
#include "driftlab/model.hpp"

namespace driftlab {

/// Pairwise summation in index order.
inline double pairwise_sum(std::span<const double> xs) {
    constexpr std::size_t kBlock = 8;
    if (xs.size() <= kBlock) {
        double s = 0.0;
        for (double x : xs) s += x;
        return s;
    }
    const std::size_t half = xs.size() / 2;
    return pairwise_sum(xs.first(half)) + pairwise_sum(xs.subspan(half));
}

struct SampleStats {
    double mean = 0.0;
    /// Sample standard deviation / sqrt(n).
    double stderr_ = 0.0;
};

inline SampleStats sample_stats(std::span<const double> xs) {
    const auto n = static_cast<double>(xs.size());
    SampleStats s;
    if (xs.empty()) return s;
    s.mean = pairwise_sum(xs) / n;
    if (xs.size() < 2) return s;
    std::vector<double> sq(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) sq[i] = (xs[i] - s.mean) * (xs[i] - s.mean);
    s.stderr_ = std::sqrt(pairwise_sum(sq) / (n - 1.0)) / std::sqrt(n);
    return s;
}

/// Runs fn(i) for i in [0, n) over a fixed pool; the first exception wins and
/// is rethrown after all workers join.
inline void parallel_for(std::size_t n, unsigned workers, const std::function<void(std::size_t)>& fn) {
    if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
    workers = static_cast<unsigned>(std::min<std::size_t>(workers, std::max<std::size_t>(n, 1)));
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (unsigned w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            for (std::size_t i = w; i < n; i += workers) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!error) error = std::current_exception();
                    return;
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

struct MCConfig {
    std::size_t n_paths = 10000;
    std::vector<double> lambdas;
    double dt_max = 1e-3;
    std::vector<double> eval_times;
    double delta = 0.5;
    std::uint64_t seed = 1;
    std::vector<Regime> regimes{Regime::Z, Regime::J};
    unsigned workers = 0;
    RiccatiOptions ode;

    void validate(const Model& model) const {
        if (n_paths < 2) throw ArgumentError("n_paths must be at least 2");
        if (!(dt_max > 0.0)) throw ArgumentError("dt_max must be positive");
        if (eval_times.empty()) throw ArgumentError("eval_times must not be empty");
        for (double t : eval_times) {
            if (!(t > 0.0) || t > model.horizon() + kTimeTol) {
                throw ArgumentError("eval_times must lie in (0, T]");
            }
        }
        if (!(delta > 0.0) || delta > *std::min_element(eval_times.begin(), eval_times.end()) + kTimeTol) {
            throw ArgumentError("delta must lie in (0, min(eval_times)]");
        }
        if (!std::is_sorted(lambdas.begin(), lambdas.end())) {
            throw ArgumentError("lambdas must be increasing");
        }
        for (double l : lambdas) {
            if (!(l >= 0.0) || std::isinf(l)) throw ArgumentError("lambdas must be finite and >= 0");
        }
    }
};

struct MCEntry {
    Regime regime = Regime::Z;
    double lambda = 0.0;
    double t = 0.0;
    double mse_mean = 0.0;
    double mse_stderr = 0.0;
    double trq_mean = 0.0;
    double trq_stderr = 0.0;
    /// C^H(delta) / sqrt(lambda); absent for the R regime.
    std::optional<double> bound;
    /// Whether lambda clears the intensity gate under which the bound is claimed.
    std::optional<bool> gated;
    std::size_t n_paths = 0;
};

struct SlopeFit {
    Regime regime = Regime::Z;
    double t = 0.0;
    double slope = 0.0;
    /// Standard error of the least-squares slope (0 for an exact line or 3 points on it).
    double slope_stderr = 0.0;
};

struct MCResult {
    std::vector<MCEntry> entries;
    std::vector<SlopeFit> slopes;

    const MCEntry* find(Regime r, double lambda, double t) const {
        for (const auto& e : entries) {
            if (e.regime == r && e.lambda == lambda && std::abs(e.t - t) <= kTimeTol) return &e;
        }
        return nullptr;
    }
    std::optional<double> slope(Regime r, double t) const {
        for (const auto& s : slopes) {
            if (s.regime == r && std::abs(s.t - t) <= kTimeTol) return s.slope;
        }
        return std::nullopt;
    }
};

/// Least-squares slope of y against x.
inline SlopeFit fit_slope(std::span<const double> x, std::span<const double> y) {
    const std::size_t n = x.size();
    if (n < 2 || y.size() != n) throw ArgumentError("slope fit needs matching inputs of size >= 2");
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    SlopeFit fit;
    fit.slope = sxy / sxx;
    if (n > 2) {
        double sse = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double r = y[i] - my - fit.slope * (x[i] - mx);
            sse += r * r;
        }
        fit.slope_stderr = std::sqrt(sse / static_cast<double>(n - 2) / sxx);
    }
    return fit;
}

namespace detail {

/// Per-path observations at the evaluation times: ||M - mu||^2 and tr Q.
struct PathSample {
    std::vector<double> mse;
    std::vector<double> trq;
};

inline PathSample sample_filter(const FilterPath& fp, const MarketPath& path, std::span<const double> eval_times) {
    PathSample s;
    s.mse.reserve(eval_times.size());
    s.trq.reserve(eval_times.size());
    for (double t : eval_times) {
        const auto idx = path.grid.find(t);
        if (!idx) throw ArgumentError("evaluation time is not a grid point");
        const FilterState& st = fp.states[*idx];
        s.mse.push_back((st.m - path.mu[*idx]).squaredNorm());
        s.trq.push_back(st.q.matrix().trace());
    }
    return s;
}

/// Adds the continuous-expert channel for intensity lambda. The jexpert stream
/// depends only on (seed, path), so every lambda sees the same noise.
inline MarketPath with_continuous_expert(MarketPath path, const Model& model, double lambda) {
    Rng rng = make_stream(path.seed, path.path_index, StreamTag::jexpert);
    path.j_increments = simulate_continuous_expert(model, path.grid, path.mu, lambda, rng);
    path.j_lambda = lambda;
    return path;
}

inline PathSpec base_spec(const MCConfig& config, std::size_t path_index, double lambda) {
    PathSpec spec;
    spec.dt_max = config.dt_max;
    spec.lambda = lambda;
    spec.extra_points = config.eval_times;
    spec.seed = config.seed;
    spec.path_index = path_index;
    return spec;
}

/// samples[lambda_index][path] for one regime.
inline std::vector<std::vector<PathSample>> simulate_regime(const MCConfig& config, const Model& model,
                                                            std::span<const double> lambdas, Regime regime) {
    std::vector<std::vector<PathSample>> out(lambdas.size(), std::vector<PathSample>(config.n_paths));
    const double lambda_max = lambdas.empty() ? 0.0 : *std::max_element(lambdas.begin(), lambdas.end());
    // R and J covariances are deterministic and the lambda = 0 base paths all
    // share one grid, so each trajectory is solved once and reused.
    TimeGrid shared_grid;
    std::vector<std::vector<SymMatrix>> shared_q;
    if (regime != Regime::Z) {
        shared_grid = build_grid(model.horizon(), config.dt_max, {}, config.eval_times);
        for (double lambda : lambdas) {
            const RiccatiRhs rhs = regime == Regime::R ? make_riccati_r(model) : make_riccati_j(model, lambda);
            shared_q.push_back(solve_riccati(rhs, model.q0(), shared_grid, config.ode));
        }
    }
    parallel_for(config.n_paths, config.workers, [&](std::size_t i) {
        try {
            if (regime == Regime::Z) {
                const MarketPath full = simulate_market_path(model, base_spec(config, i, lambda_max));
                for (std::size_t l = 0; l < lambdas.size(); ++l) {
                    const MarketPath path = lambdas[l] == lambda_max ? full : thin_expert_events(full, lambdas[l]);
                    out[l][i] = sample_filter(run_z_filter(path, model, config.ode), path, config.eval_times);
                }
            } else {
                const MarketPath base = simulate_market_path(model, base_spec(config, i, 0.0));
                if (base.grid.points != shared_grid.points) throw NumericError("base path grid mismatch");
                for (std::size_t l = 0; l < lambdas.size(); ++l) {
                    if (regime == Regime::R) {
                        out[l][i] = sample_filter(run_r_filter(base, model, shared_q[l]), base, config.eval_times);
                    } else {
                        const MarketPath path = with_continuous_expert(base, model, lambdas[l]);
                        out[l][i] = sample_filter(run_j_filter(path, model, lambdas[l], shared_q[l]), path,
                                                  config.eval_times);
                    }
                }
            }
        } catch (const Error& e) {
            throw NumericError("path " + std::to_string(i) + ": " + e.what());
        }
    });
    return out;
}

inline std::vector<MCEntry> summarize(const MCConfig& config, const Model& model, Regime regime, double lambda,
                                      const std::vector<PathSample>& samples) {
    std::vector<MCEntry> entries;
    std::vector<double> mse(samples.size()), trq(samples.size());
    const bool deterministic_q = regime != Regime::Z;
    std::optional<ZGate> gate;
    if (regime == Regime::Z && lambda > 0.0) gate = z_gate(model, config.delta);
    for (std::size_t k = 0; k < config.eval_times.size(); ++k) {
        for (std::size_t i = 0; i < samples.size(); ++i) {
            mse[i] = samples[i].mse[k];
            trq[i] = samples[i].trq[k];
        }
        MCEntry e;
        e.regime = regime;
        e.lambda = lambda;
        e.t = config.eval_times[k];
        e.n_paths = samples.size();
        const SampleStats ms = sample_stats(mse);
        e.mse_mean = ms.mean;
        e.mse_stderr = ms.stderr_;
        if (deterministic_q) {
            e.trq_mean = trq.front();
            e.trq_stderr = 0.0;
        } else {
            const SampleStats qs = sample_stats(trq);
            e.trq_mean = qs.mean;
            e.trq_stderr = qs.stderr_;
        }
        if (regime == Regime::Z && lambda > 0.0) {
            e.bound = bound_constant_z(model, config.delta) / std::sqrt(lambda);
            e.gated = lambda >= gate->lambda_q;
        } else if (regime == Regime::J) {
            e.bound = bound_constant_j(model, config.delta) / std::sqrt(lambda);
            e.gated = true;
        }
        entries.push_back(e);
    }
    return entries;
}

}  // namespace detail

/// Simulates n_paths market paths, runs the regime's filter on each and
/// reports per-time means and standard errors of ||M - mu||^2 and tr Q.
inline std::vector<MCEntry> estimate_regime(const MCConfig& config, const Model& model, double lambda,
                                            Regime regime) {
    config.validate(model);
    if (regime == Regime::J && !(lambda > 0.0)) throw ArgumentError("J regime needs lambda > 0");
    const std::vector<double> lambdas{lambda};
    const auto samples = detail::simulate_regime(config, model, lambdas, regime);
    return detail::summarize(config, model, regime, lambda, samples.front());
}

struct MseTraceRow {
    double t = 0.0;
    double mse_mean = 0.0;
    double trq_mean = 0.0;
    double abs_diff = 0.0;
    /// sqrt(mse_stderr^2 + trq_stderr^2)
    double combined_stderr = 0.0;
    bool within_3_stderr = false;
};

/// Compares E||M^Z - mu||^2 with E tr Q^Z, which agree as population quantities.
inline std::vector<MseTraceRow> verify_lemma45(const MCConfig& config, const Model& model, double lambda) {
    std::vector<MseTraceRow> rows;
    for (const MCEntry& e : estimate_regime(config, model, lambda, Regime::Z)) {
        MseTraceRow r;
        r.t = e.t;
        r.mse_mean = e.mse_mean;
        r.trq_mean = e.trq_mean;
        r.abs_diff = std::abs(e.mse_mean - e.trq_mean);
        r.combined_stderr = std::hypot(e.mse_stderr, e.trq_stderr);
        r.within_3_stderr = r.abs_diff <= 3.0 * r.combined_stderr;
        rows.push_back(r);
    }
    return rows;
}

/// Runs every configured regime over every lambda on common random numbers and
/// fits log tr Q against log lambda at each evaluation time (Z and J).
inline MCResult convergence_study(const MCConfig& config, const Model& model) {
    config.validate(model);
    if (config.lambdas.size() < 3) throw ArgumentError("need >= 3 intensities");
    if (!(config.lambdas.front() > 0.0) || config.lambdas.back() / config.lambdas.front() < 100.0 * (1.0 - 1e-12)) {
        throw ArgumentError("need >= 3 intensities spanning at least two decades");
    }
    MCResult result;
    for (Regime regime : config.regimes) {
        if (regime == Regime::R) {
            const std::vector<double> zero{0.0};
            const auto samples = detail::simulate_regime(config, model, zero, Regime::R);
            for (double lambda : config.lambdas) {
                for (MCEntry e : detail::summarize(config, model, Regime::R, 0.0, samples.front())) {
                    e.lambda = lambda;
                    result.entries.push_back(e);
                }
            }
            continue;
        }
        const auto samples = detail::simulate_regime(config, model, config.lambdas, regime);
        const std::size_t first = result.entries.size();
        for (std::size_t l = 0; l < config.lambdas.size(); ++l) {
            for (const MCEntry& e : detail::summarize(config, model, regime, config.lambdas[l], samples[l])) {
                result.entries.push_back(e);
            }
        }
        for (double t : config.eval_times) {
            std::vector<double> x, y;
            for (std::size_t k = first; k < result.entries.size(); ++k) {
                const MCEntry& e = result.entries[k];
                if (std::abs(e.t - t) > kTimeTol || !(e.trq_mean > 0.0)) continue;
                x.push_back(std::log(e.lambda));
                y.push_back(std::log(e.trq_mean));
            }
            if (x.size() < 2) continue;
            SlopeFit fit = fit_slope(x, y);
            fit.regime = regime;
            fit.t = t;
            result.slopes.push_back(fit);
        }
    }
    return result;
}

struct OrderingReport {
    std::size_t paths = 0;
    std::size_t points_checked = 0;
    /// Smallest eigenvalue of Q^R - Q^H seen, over H in {Z, J}.
    double min_eig_z = std::numeric_limits<double>::infinity();
    double min_eig_j = std::numeric_limits<double>::infinity();
    /// Path index attaining the smallest eigenvalue over both regimes.
    std::size_t worst_path = 0;
    bool ok = true;
};

/// Checks Q^Z_t <= Q^R_t and Q^J_t <= Q^R_t at every grid point of sampled paths.
inline OrderingReport check_covariance_ordering(const Model& model, double lambda, std::size_t n_paths,
                                                double dt_max, std::uint64_t seed, double tol = 1e-9,
                                                const RiccatiOptions& ode = {}, unsigned workers = 0) {
    OrderingReport rep;
    rep.paths = n_paths;
    std::vector<double> min_z(n_paths), min_j(n_paths);
    std::vector<std::size_t> counts(n_paths);
    parallel_for(n_paths, workers, [&](std::size_t i) {
        PathSpec spec;
        spec.dt_max = dt_max;
        spec.lambda = lambda;
        spec.j_lambda = lambda;
        spec.seed = seed;
        spec.path_index = i;
        const MarketPath path = simulate_market_path(model, spec);
        const FilterPath r = run_r_filter(path, model, ode);
        const FilterPath z = run_z_filter(path, model, ode);
        const FilterPath j = run_j_filter(path, model, lambda, ode);
        double mz = std::numeric_limits<double>::infinity(), mj = mz;
        for (std::size_t k = 0; k < path.grid.size(); ++k) {
            const Matrix& qr = r.states[k].q.matrix();
            mz = std::min(mz, eigenvalues(SymMatrix(Matrix(qr - z.states[k].q.matrix())))(0));
            mj = std::min(mj, eigenvalues(SymMatrix(Matrix(qr - j.states[k].q.matrix())))(0));
        }
        min_z[i] = mz;
        min_j[i] = mj;
        counts[i] = path.grid.size();
    });
    double worst = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n_paths; ++i) {
        if (std::min(min_z[i], min_j[i]) < worst) {
            worst = std::min(min_z[i], min_j[i]);
            rep.worst_path = i;
        }
        rep.min_eig_z = std::min(rep.min_eig_z, min_z[i]);
        rep.min_eig_j = std::min(rep.min_eig_j, min_j[i]);
        rep.points_checked += counts[i];
    }
    rep.ok = rep.min_eig_z >= -tol && rep.min_eig_j >= -tol;
    return rep;
}

}  // namespace driftlab
