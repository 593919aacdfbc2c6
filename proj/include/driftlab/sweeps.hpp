#pragma once

// Randomized sweeps over the matrix properties and the trace inequalities.
// Every sweep draws from its own seeded stream and keeps the worst sample so
// a failure can be replayed.

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "driftlab/asymptotics.hpp"
#include "driftlab/matcore.hpp"
#include "driftlab/model.hpp"
#include "driftlab/rng.hpp"

namespace driftlab {

/// Worst case of a sweep, enough to rebuild and rerun it.
struct SweepSample {
    ModelParams params;
    Matrix a;  // q, or the first matrix of a pair
    Matrix b;  // second matrix of a pair; empty otherwise
    double lambda = 0.0;
    double r = 0.0;
    double b_fraction = 0.0;
    std::string what;
};

struct SweepReport {
    std::string name;
    std::size_t samples = 0;
    /// Smallest margin divided by its scale.
    double min_scaled_margin = std::numeric_limits<double>::infinity();
    bool passed = true;
    std::optional<SweepSample> worst;
};

inline constexpr double kSweepRelTol = 1e-9;

/// Random PSD matrix with trace log-uniform in [lo, hi]. One sample in five
/// has a zeroed eigenvalue (rank deficient) when d > 1.
template <class R>
SymMatrix random_psd(int d, R& rng, double lo = 1e-6, double hi = 1e2) {
    std::uniform_real_distribution<double> u(std::log(lo), std::log(hi));
    std::uniform_int_distribution<int> coin(0, 4);
    Matrix g = random_gram(d, rng).matrix();
    if (d > 1 && coin(rng) == 0) {
        EigenDecomposition ed = symmetric_eigen(g);
        ed.values(0) = 0.0;
        g = ed.vectors * ed.values.asDiagonal() * ed.vectors.transpose();
    }
    const double tr = g.trace();
    return SymMatrix(Matrix(g * (std::exp(u(rng)) / tr)));
}

/// Random admissible model of dimension d: kappa with PD symmetric part and a
/// small skew part, definite Gamma and Sigma_J_bar, general volatility factors.
template <class R>
ModelParams random_model_params(int d, R& rng) {
    std::normal_distribution<double> n;
    std::uniform_real_distribution<double> u(0.1, 2.0);
    auto gauss = [&] {
        Matrix m(d, d);
        for (int j = 0; j < d; ++j)
            for (int i = 0; i < d; ++i) m(i, j) = n(rng);
        return m;
    };
    const Matrix id = Matrix::Identity(d, d);
    ModelParams p;
    p.d = d;
    const Matrix skew = gauss();
    p.kappa = random_gram(d, rng).matrix() / d + u(rng) * id + 0.3 * (skew - skew.transpose());
    p.mu_bar = Vector(d);
    p.m0 = Vector(d);
    for (int i = 0; i < d; ++i) {
        p.mu_bar(i) = 0.1 * n(rng);
        p.m0(i) = 0.1 * n(rng);
    }
    p.m0_prior = p.m0;
    p.sigma_mu = u(rng) * gauss();
    p.sigma_R = 0.25 * gauss() + 0.2 * id;
    p.gamma = 0.05 * (random_gram(d, rng).matrix() / d + 0.1 * id);
    p.sigma_j_bar = 0.05 * (random_gram(d, rng).matrix() / d + 0.1 * id);
    p.q0 = random_gram(d, rng).matrix() / (3.0 * d);
    p.q0_prior = p.q0;
    p.horizon = 1.0;
    return p;
}

namespace detail {

inline void record(SweepReport& rep, double margin, double scale, const SweepSample& sample) {
    ++rep.samples;
    const double scaled = margin / scale;
    if (scaled < rep.min_scaled_margin) {
        rep.min_scaled_margin = scaled;
        rep.worst = sample;
    }
    if (margin < -kSweepRelTol * scale) rep.passed = false;
}

}  // namespace detail

/// All seven trace properties on n random SPD pairs of dimension d.
inline SweepReport sweep_trace_properties(int d, std::size_t n, std::uint64_t seed) {
    SweepReport rep;
    rep.name = "matrix properties d=" + std::to_string(d);
    Rng rng = make_stream(seed, static_cast<std::uint64_t>(d), StreamTag::sampling);
    for (std::size_t k = 0; k < n; ++k) {
        // Shift by a small multiple of the identity so the pair is strictly definite.
        const SpdMatrix a(SymMatrix(Matrix(random_gram(d, rng).matrix() + 1e-3 * Matrix::Identity(d, d))));
        const SpdMatrix b(SymMatrix(Matrix(random_gram(d, rng).matrix() + 1e-3 * Matrix::Identity(d, d))));
        const PropertyReport pr = check_trace_properties(a, b);
        double worst = std::numeric_limits<double>::infinity();
        std::string which;
        for (const auto& c : pr.checks) {
            if (c.margin < worst) {
                worst = c.margin;
                which = "property " + std::to_string(c.index) + ": " + c.name;
            }
        }
        ++rep.samples;
        if (worst < rep.min_scaled_margin) {
            rep.min_scaled_margin = worst;
            rep.worst = SweepSample{ModelParams{}, a.matrix(), b.matrix(), 0.0, 0.0, 0.0, which};
        }
        if (!pr.all_passed()) rep.passed = false;
    }
    return rep;
}

/// Z trace inequality at lambda in {lambda0, 10 lambda0} on n random PSD q.
inline SweepReport sweep_z_inequality(const Model& model, double delta, std::size_t n, std::uint64_t seed,
                                      double b_fraction = kDefaultBFraction) {
    SweepReport rep;
    rep.name = "Z trace inequality d=" + std::to_string(model.dim());
    const BoundConstants c = lemma43_constants(model, default_a_alpha(model, delta), b_fraction);
    const double scale = margin_scale(c);
    Rng rng = make_stream(seed, static_cast<std::uint64_t>(model.dim()), StreamTag::sampling);
    for (std::size_t k = 0; k < n; ++k) {
        const SymMatrix q = k == 0 ? SymMatrix::zero(model.dim()) : random_psd(model.dim(), rng);
        for (double lambda : {c.lambda0, 10.0 * c.lambda0}) {
            const double m = check_trace_inequality_z(q, lambda, c, model);
            detail::record(rep, m, scale,
                           SweepSample{model.params(), q.matrix(), Matrix(), lambda, 0.0, b_fraction, rep.name});
        }
    }
    return rep;
}

/// J trace inequality at lambda in {1e-3, 1, 1e3, 1e6} and r in {0.1, 1, r*}.
/// Besides random q, each (lambda, r) includes the d = 1 tangent point
/// q = 1 / sqrt(lambda r), scaled to the identity for d > 1.
inline SweepReport sweep_j_inequality(const Model& model, double delta, std::size_t n, std::uint64_t seed) {
    SweepReport rep;
    rep.name = "J trace inequality d=" + std::to_string(model.dim());
    const int d = model.dim();
    Rng rng = make_stream(seed, 100 + static_cast<std::uint64_t>(d), StreamTag::sampling);
    const double rs = r_star(model, delta);
    const double lambdas[] = {1e-3, 1.0, 1e3, 1e6};
    const double rvals[] = {0.1, 1.0, rs};
    auto run = [&](const SymMatrix& q) {
        for (double r : rvals) {
            const BoundConstants c = lemma51_constants(model, r);
            for (double lambda : lambdas) {
                const double m = check_trace_inequality_j(q, lambda, c, model);
                detail::record(rep, m, margin_scale(c),
                               SweepSample{model.params(), q.matrix(), Matrix(), lambda, r, 0.0, rep.name});
            }
        }
    };
    for (std::size_t k = 0; k < n; ++k) run(random_psd(d, rng));
    for (double r : rvals) {
        const BoundConstants c = lemma51_constants(model, r);
        for (double lambda : lambdas) {
            const SymMatrix q(Matrix(Matrix::Identity(d, d) / (d * std::sqrt(lambda * r))));
            detail::record(rep, check_trace_inequality_j(q, lambda, c, model), margin_scale(c),
                           SweepSample{model.params(), q.matrix(), Matrix(), lambda, r, 0.0, rep.name + " tangent"});
        }
    }
    return rep;
}

}  // namespace driftlab
