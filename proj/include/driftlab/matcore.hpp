#pragma once

// Small dense symmetric-matrix kernel. Every spectral question (square
// roots, PSD checks, Loewner comparisons) goes through one symmetric
// eigensolver; d is expected to stay below kMaxDim.

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <array>
#include <cmath>
#include <random>
#include <string>

#include "driftlab/errors.hpp"

namespace driftlab {

inline constexpr int kMaxDim = 8;

/// Heap-free dynamic matrix capped at kMaxDim x kMaxDim.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor, kMaxDim, kMaxDim>;
using Vector = Eigen::Matrix<double, Eigen::Dynamic, 1, Eigen::ColMajor, kMaxDim, 1>;

inline constexpr double kPsdRelTol = 1e-10;
inline constexpr double kDefiniteRelTol = 1e-12;

inline void check_dim(Eigen::Index d) {
    if (d < 1 || d > kMaxDim) {
        throw ArgumentError("matrix dimension " + std::to_string(d) + " outside [1, " +
                            std::to_string(kMaxDim) + "]");
    }
}

/// Symmetric d x d matrix. Construction averages with the transpose, so the
/// stored entries are exactly symmetric.
class SymMatrix {
  public:
    SymMatrix() = default;

    explicit SymMatrix(const Matrix& m) {
        if (m.rows() != m.cols()) {
            throw ArgumentError("SymMatrix needs a square matrix");
        }
        check_dim(m.rows());
        if (!m.allFinite()) {
            throw NumericError("SymMatrix entries must be finite");
        }
        m_ = 0.5 * (m + m.transpose());
        for (Eigen::Index i = 0; i < m_.rows(); ++i) {
            for (Eigen::Index j = 0; j < i; ++j) {
                if (m_(i, j) != m_(j, i)) {
                    throw NumericError("symmetrization failed");
                }
            }
        }
    }

    static SymMatrix zero(int d) {
        check_dim(d);
        return SymMatrix(Matrix::Zero(d, d));
    }
    static SymMatrix identity(int d) {
        check_dim(d);
        return SymMatrix(Matrix::Identity(d, d));
    }
    static SymMatrix diagonal(const Vector& diag) {
        return SymMatrix(Matrix(diag.asDiagonal()));
    }
    static SymMatrix diagonal(std::initializer_list<double> values) {
        Vector v(static_cast<Eigen::Index>(values.size()));
        Eigen::Index i = 0;
        for (double x : values) v(i++) = x;
        return diagonal(v);
    }

    int dim() const { return static_cast<int>(m_.rows()); }
    const Matrix& matrix() const { return m_; }
    double operator()(Eigen::Index i, Eigen::Index j) const { return m_(i, j); }

    friend bool operator==(const SymMatrix& a, const SymMatrix& b) {
        return a.m_.rows() == b.m_.rows() && a.m_ == b.m_;
    }

  private:
    Matrix m_;
};

struct EigenDecomposition {
    Vector values;  // ascending
    Matrix vectors;
};

inline EigenDecomposition symmetric_eigen(const Matrix& a) {
    if (a.rows() == 1) {
        return {Vector::Constant(1, a(0, 0)), Matrix::Identity(1, 1)};
    }
    Eigen::SelfAdjointEigenSolver<Matrix> solver(a);
    if (solver.info() != Eigen::Success) {
        throw NumericError("symmetric eigensolver did not converge");
    }
    return {solver.eigenvalues(), solver.eigenvectors()};
}

inline Vector eigenvalues(const SymMatrix& a) { return symmetric_eigen(a.matrix()).values; }

/// psd_tol = 1e-10 * max(1, largest |eigenvalue|).
inline double psd_tolerance(const Vector& eigvals) {
    return kPsdRelTol * std::max(1.0, eigvals.cwiseAbs().maxCoeff());
}

inline double trace(const SymMatrix& a) { return a.matrix().trace(); }
inline double frobenius(const SymMatrix& a) { return a.matrix().norm(); }

/// Symmetric PSD matrix; eigenvalues >= -psd_tol are accepted.
class SpdMatrix : public SymMatrix {
  public:
    SpdMatrix() = default;

    explicit SpdMatrix(const SymMatrix& a) : SymMatrix(a) {
        const Vector ev = eigenvalues(a);
        if (ev(0) < -psd_tolerance(ev)) {
            throw NumericError("matrix is not positive semidefinite (smallest eigenvalue " +
                               std::to_string(ev(0)) + ")");
        }
    }
    explicit SpdMatrix(const Matrix& m) : SpdMatrix(SymMatrix(m)) {}

    /// Strictly positive definite variant.
    static SpdMatrix definite(const SymMatrix& a) {
        const Vector ev = eigenvalues(a);
        if (!(ev(0) > 0.0)) {
            throw NumericError("matrix is not positive definite (smallest eigenvalue " +
                               std::to_string(ev(0)) + ")");
        }
        return SpdMatrix(a);
    }
    static SpdMatrix definite(const Matrix& m) { return definite(SymMatrix(m)); }

    static SpdMatrix zero(int d) { return SpdMatrix(SymMatrix::zero(d)); }
    static SpdMatrix identity(int d) { return SpdMatrix(SymMatrix::identity(d)); }
    static SpdMatrix diagonal(std::initializer_list<double> v) {
        return SpdMatrix(SymMatrix::diagonal(v));
    }
};

/// Clamps eigenvalues in [-psd_tol, 0) to zero. Larger negatives throw.
inline Matrix clamp_psd(const Matrix& a) {
    if (a.rows() == 1) {
        const double tol = kPsdRelTol * std::max(1.0, std::abs(a(0, 0)));
        if (a(0, 0) < -tol) throw NumericError("negative variance beyond psd_tol");
        return Matrix::Constant(1, 1, std::max(0.0, a(0, 0)));
    }
    const EigenDecomposition ed = symmetric_eigen(a);
    if (ed.values(0) >= 0.0) return a;
    if (ed.values(0) < -psd_tolerance(ed.values)) {
        throw NumericError("matrix has eigenvalue " + std::to_string(ed.values(0)) +
                           " below -psd_tol");
    }
    const Vector clamped = ed.values.cwiseMax(0.0);
    Matrix out = ed.vectors * clamped.asDiagonal() * ed.vectors.transpose();
    return 0.5 * (out + out.transpose());
}

/// Symmetric PSD square root by eigendecomposition.
inline SpdMatrix spd_sqrt(const SpdMatrix& a) {
    const EigenDecomposition ed = symmetric_eigen(a.matrix());
    if (ed.values(0) < -psd_tolerance(ed.values)) {
        throw NumericError("spd_sqrt: eigenvalue below -psd_tol");
    }
    const Vector roots = ed.values.cwiseMax(0.0).cwiseSqrt();
    return SpdMatrix(SymMatrix(ed.vectors * roots.asDiagonal() * ed.vectors.transpose()));
}

/// Inverse of a strictly positive definite matrix via Cholesky.
inline SpdMatrix spd_inverse(const SpdMatrix& a) {
    const int d = a.dim();
    const Vector ev = eigenvalues(a);
    const double definite_tol = kDefiniteRelTol * std::max(trace(a) / d, 0.0);
    if (!(ev(0) > definite_tol)) {
        throw SingularityError("spd_inverse: smallest eigenvalue " + std::to_string(ev(0)) +
                               " below definite_tol");
    }
    Eigen::LLT<Matrix> llt(a.matrix());
    if (llt.info() != Eigen::Success) {
        throw SingularityError("spd_inverse: Cholesky factorization failed");
    }
    return SpdMatrix(SymMatrix(llt.solve(Matrix::Identity(d, d))));
}

/// a <= b in the Loewner order: smallest eigenvalue of (b - a) >= -tol.
inline bool loewner_leq(const SymMatrix& a, const SymMatrix& b, double tol) {
    if (a.dim() != b.dim()) {
        throw ArgumentError("loewner_leq: dimension mismatch");
    }
    return eigenvalues(SymMatrix(b.matrix() - a.matrix()))(0) >= -tol;
}

/// G^T G with standard normal G.
template <class Rng>
SpdMatrix random_gram(int d, Rng& rng) {
    check_dim(d);
    std::normal_distribution<double> normal;
    Matrix g(d, d);
    for (int j = 0; j < d; ++j)
        for (int i = 0; i < d; ++i) g(i, j) = normal(rng);
    return SpdMatrix(SymMatrix(g.transpose() * g));
}

struct PropertyCheck {
    int index = 0;
    std::string name;
    bool passed = false;
    /// Smallest slack over the inequalities of this property; negative on failure.
    double margin = 0.0;
};

struct PropertyReport {
    std::array<PropertyCheck, 7> checks;

    bool all_passed() const {
        return std::all_of(checks.begin(), checks.end(),
                           [](const PropertyCheck& c) { return c.passed; });
    }
};

namespace detail {

inline constexpr double kPropertyRelTol = 1e-9;

/// Slack of lhs <= rhs, with relative tolerance folded in.
inline double slack(double lhs, double rhs) {
    const double scale = std::max({1.0, std::abs(lhs), std::abs(rhs)});
    return rhs - lhs + kPropertyRelTol * scale;
}

}  // namespace detail

/// Evaluates the seven classical properties of symmetric PSD matrices on the
/// pair (a, b). Property 5's left inequality needs a strictly definite.
inline PropertyReport check_trace_properties(const SpdMatrix& a, const SpdMatrix& b) {
    using detail::slack;
    if (a.dim() != b.dim()) {
        throw ArgumentError("check_trace_properties: dimension mismatch");
    }
    const int d = a.dim();
    const Matrix& am = a.matrix();
    const Matrix& bm = b.matrix();
    PropertyReport report;
    auto set = [&](int idx, const char* name, double margin) {
        report.checks[idx - 1] = {idx, name, margin >= 0.0, margin};
    };

    // 1. a + b is PSD.
    {
        const Vector ev = eigenvalues(SymMatrix(am + bm));
        set(1, "sum is PSD", ev(0) + psd_tolerance(ev));
    }

    const EigenDecomposition ed = symmetric_eigen(am);
    // 2. nonnegative spectrum and a = V D V^T with orthogonal V.
    {
        const Matrix recon = ed.vectors * ed.values.asDiagonal() * ed.vectors.transpose();
        const Matrix ortho = ed.vectors.transpose() * ed.vectors - Matrix::Identity(d, d);
        const double scale = std::max(1.0, am.norm());
        const double m = std::min({ed.values(0) + psd_tolerance(ed.values),
                                   detail::kPropertyRelTol * scale - (recon - am).norm(),
                                   detail::kPropertyRelTol - ortho.norm()});
        set(2, "diagonalizable with nonnegative eigenvalues", m);
    }
    // 3. the inverse of a definite matrix is symmetric PD. The residual
    // tolerance scales with the condition number.
    {
        double m = -1.0;
        try {
            const SpdMatrix inv = spd_inverse(a);
            const Vector ev = eigenvalues(inv);
            const double resid = (am * inv.matrix() - Matrix::Identity(d, d)).norm();
            const double cond = ed.values(d - 1) / ed.values(0);
            m = std::min(ev(0), detail::kPropertyRelTol * std::max(1.0, cond) - resid);
        } catch (const SingularityError&) {
            m = -1.0;
        }
        set(3, "inverse is symmetric PD", m);
    }

    const double tr_a = am.trace();
    const double tr_b = bm.trace();
    const double tr_ab = (am * bm).trace();
    // 4. rho_min(a) tr(b) <= tr(ab) <= rho_max(a) tr(b).
    set(4, "eigenvalue trace bounds",
        std::min(slack(ed.values(0) * tr_b, tr_ab), slack(tr_ab, ed.values(d - 1) * tr_b)));
    // 5. tr(b) / tr(a^-1) <= tr(ab) <= tr(a) tr(b).
    {
        double left = -1.0;
        if (ed.values(0) > 0.0) {
            const double tr_ainv = ed.values.cwiseInverse().sum();
            left = slack(tr_b / tr_ainv, tr_ab);
        }
        set(5, "trace product bounds", std::min(left, slack(tr_ab, tr_a * tr_b)));
    }
    // 6. tr^2(a) >= tr(a^2) >= tr^2(a) / d.
    {
        const double tr_a2 = (am * am).trace();
        set(6, "trace of square bounds",
            std::min(slack(tr_a2, tr_a * tr_a), slack(tr_a * tr_a / d, tr_a2)));
    }
    // 7. ||a||_F <= tr(a).
    set(7, "Frobenius below trace", slack(frobenius(a), tr_a));
    return report;
}

}  // namespace driftlab
