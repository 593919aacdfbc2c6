#pragma once

#include <cmath>
#include <optional>
#include <string>

#include "driftlab/errors.hpp"
#include "driftlab/matcore.hpp"

namespace driftlab {

/// Raw parameters of the hidden Gaussian market model. Volatility factors are
/// square d x d; Gamma, sigma_j_bar, q0 and q0_prior are covariances.
struct ModelParams {
    int d = 1;
    Matrix kappa;        // mean-reversion speed, 1/years
    Vector mu_bar;       // mean-reversion level
    Matrix sigma_mu;     // drift volatility factor
    Matrix sigma_R;      // return volatility factor
    Matrix gamma;        // expert variance
    Matrix sigma_j_bar;  // continuous-expert base covariance
    Vector m0;           // initial filter mean
    Matrix q0;           // initial filter covariance
    Vector m0_prior;     // mean of mu_0
    Matrix q0_prior;     // covariance of mu_0
    double horizon = 1.0;

    /// Numerical-experiment defaults: d = 1, kappa = 3, mu_bar = 0.1,
    /// sigma_mu = 1, sigma_R = 0.25, Gamma = 0.05, stationary start.
    static ModelParams baseline() {
        ModelParams p;
        p.d = 1;
        p.kappa = Matrix::Constant(1, 1, 3.0);
        p.mu_bar = Vector::Constant(1, 0.1);
        p.sigma_mu = Matrix::Constant(1, 1, 1.0);
        p.sigma_R = Matrix::Constant(1, 1, 0.25);
        p.gamma = Matrix::Constant(1, 1, 0.05);
        p.sigma_j_bar = Matrix::Constant(1, 1, 0.05);
        p.m0_prior = Vector::Constant(1, 0.1);
        p.q0_prior = Matrix::Constant(1, 1, 1.0 / 6.0);
        p.m0 = p.m0_prior;
        p.q0 = p.q0_prior;
        p.horizon = 1.0;
        return p;
    }

    friend bool operator==(const ModelParams& a, const ModelParams& b) {
        auto same = [](const auto& x, const auto& y) {
            return x.rows() == y.rows() && x.cols() == y.cols() && x == y;
        };
        return a.d == b.d && same(a.kappa, b.kappa) && same(a.mu_bar, b.mu_bar) &&
               same(a.sigma_mu, b.sigma_mu) && same(a.sigma_R, b.sigma_R) &&
               same(a.gamma, b.gamma) && same(a.sigma_j_bar, b.sigma_j_bar) &&
               same(a.m0, b.m0) && same(a.q0, b.q0) && same(a.m0_prior, b.m0_prior) &&
               same(a.q0_prior, b.q0_prior) && a.horizon == b.horizon;
    }
};

/// Validated model with the derived covariances the filters use.
class Model {
  public:
    explicit Model(ModelParams p) : p_(std::move(p)) {
        const int d = p_.d;
        check_dim(d);
        auto need = [&](const auto& m, Eigen::Index rows, Eigen::Index cols, const char* name) {
            if (m.rows() != rows || m.cols() != cols) {
                throw ArgumentError(std::string(name) + " has wrong shape");
            }
            if (!m.allFinite()) throw ArgumentError(std::string(name) + " is not finite");
        };
        need(p_.kappa, d, d, "kappa");
        need(p_.mu_bar, d, 1, "mu_bar");
        need(p_.sigma_mu, d, d, "sigma_mu");
        need(p_.sigma_R, d, d, "sigma_R");
        need(p_.gamma, d, d, "gamma");
        need(p_.sigma_j_bar, d, d, "sigma_j_bar");
        need(p_.m0, d, 1, "m0");
        need(p_.q0, d, d, "q0");
        need(p_.m0_prior, d, 1, "m0_prior");
        need(p_.q0_prior, d, d, "q0_prior");
        if (!(p_.horizon > 0.0) || !std::isfinite(p_.horizon)) {
            throw ArgumentError("horizon must be positive");
        }

        auto definite = [](const Matrix& m, const char* name) {
            try {
                return SpdMatrix::definite(m);
            } catch (const NumericError& e) {
                throw ArgumentError(std::string(name) + ": " + e.what());
            }
        };
        auto semidefinite = [](const Matrix& m, const char* name) {
            try {
                return SpdMatrix(m);
            } catch (const NumericError& e) {
                throw ArgumentError(std::string(name) + ": " + e.what());
            }
        };
        if ((p_.gamma - p_.gamma.transpose()).norm() > 1e-12 * (1.0 + p_.gamma.norm())) {
            throw ArgumentError("gamma must be symmetric");
        }
        definite(Matrix(0.5 * (p_.kappa + p_.kappa.transpose())), "kappa");
        // Sigma_mu = 0 and sigma_R = 0 are admitted as degenerate simulation
        // limits; filters require sigma_r_inv(), which rejects a singular Sigma_R.
        sigma_mu_ = semidefinite(Matrix(p_.sigma_mu * p_.sigma_mu.transpose()), "Sigma_mu");
        sigma_r_ = semidefinite(Matrix(p_.sigma_R * p_.sigma_R.transpose()), "Sigma_R");
        gamma_ = definite(p_.gamma, "gamma");
        sigma_j_bar_ = definite(p_.sigma_j_bar, "sigma_j_bar");
        q0_ = semidefinite(p_.q0, "q0");
        q0_prior_ = semidefinite(p_.q0_prior, "q0_prior");

        try {
            sigma_r_inv_ = spd_inverse(sigma_r_);
        } catch (const SingularityError&) {
            sigma_r_inv_.reset();
        }
        sigma_j_bar_inv_ = spd_inverse(sigma_j_bar_);
        gamma_sqrt_ = spd_sqrt(gamma_);
        sigma_j_bar_sqrt_ = spd_sqrt(sigma_j_bar_);
        q0_prior_sqrt_ = spd_sqrt(q0_prior_);
        kappa_symmetric_ = p_.kappa == p_.kappa.transpose();
    }

    const ModelParams& params() const { return p_; }
    int dim() const { return p_.d; }
    double horizon() const { return p_.horizon; }
    const Matrix& kappa() const { return p_.kappa; }
    bool kappa_symmetric() const { return kappa_symmetric_; }
    const Vector& mu_bar() const { return p_.mu_bar; }

    const SpdMatrix& sigma_mu() const { return sigma_mu_; }
    const SpdMatrix& sigma_r() const { return sigma_r_; }
    const SpdMatrix& sigma_r_inv() const {
        if (!sigma_r_inv_) throw ArgumentError("Sigma_R is singular; filtering needs it definite");
        return *sigma_r_inv_;
    }
    const SpdMatrix& gamma() const { return gamma_; }
    const SpdMatrix& gamma_sqrt() const { return gamma_sqrt_; }
    const SpdMatrix& sigma_j_bar() const { return sigma_j_bar_; }
    const SpdMatrix& sigma_j_bar_inv() const { return sigma_j_bar_inv_; }
    const SpdMatrix& sigma_j_bar_sqrt() const { return sigma_j_bar_sqrt_; }

    const Vector& m0() const { return p_.m0; }
    const SpdMatrix& q0() const { return q0_; }
    const Vector& m0_prior() const { return p_.m0_prior; }
    const SpdMatrix& q0_prior() const { return q0_prior_; }
    const SpdMatrix& q0_prior_sqrt() const { return q0_prior_sqrt_; }

  private:
    ModelParams p_;
    SpdMatrix sigma_mu_, sigma_r_, gamma_, gamma_sqrt_;
    std::optional<SpdMatrix> sigma_r_inv_;
    SpdMatrix sigma_j_bar_, sigma_j_bar_inv_, sigma_j_bar_sqrt_;
    SpdMatrix q0_, q0_prior_, q0_prior_sqrt_;
    bool kappa_symmetric_ = true;
};

}  // namespace driftlab
