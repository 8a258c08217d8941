#ifndef PBGMM_SPLINE_KERNEL_HPP
#define PBGMM_SPLINE_KERNEL_HPP

// Bilinear-spline growth curve algebra: loadings, the knot-centred
// reparameterization and its inverse, and class-implied moments.

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pbgmm/errors.hpp"

namespace pbgmm {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Measurement occasions shared by both outcomes, plus per-outcome observation masks.
struct Schedule {
    std::vector<double> times;
    std::vector<bool> observed_y;
    std::vector<bool> observed_z;

    std::size_t size() const noexcept { return times.size(); }

    std::size_t observed_count() const noexcept {
        std::size_t n = 0;
        for (std::size_t j = 0; j < times.size(); ++j) {
            n += observed_y[j] ? 1 : 0;
            n += observed_z[j] ? 1 : 0;
        }
        return n;
    }

    static Schedule complete(std::vector<double> times) {
        Schedule s;
        s.observed_y.assign(times.size(), true);
        s.observed_z.assign(times.size(), true);
        s.times = std::move(times);
        return s;
    }
};

inline void validate(const Schedule& s) {
    if (s.times.empty()) {
        throw InvalidInput("schedule has no occasions");
    }
    if (s.observed_y.size() != s.times.size() || s.observed_z.size() != s.times.size()) {
        throw InvalidInput("schedule mask length differs from number of occasions");
    }
    for (std::size_t j = 0; j < s.times.size(); ++j) {
        if (!std::isfinite(s.times[j])) {
            throw InvalidInput("non-finite measurement occasion");
        }
        if (j > 0 && !(s.times[j] > s.times[j - 1])) {
            throw InvalidInput("measurement occasions must be strictly increasing");
        }
    }
    if (s.observed_count() == 0) {
        throw InvalidInput("schedule has no observed entries");
    }
}

/// Intercept and the two segment slopes.
struct GrowthFactorsOriginal {
    double intercept = 0.0;
    double slope1 = 0.0;
    double slope2 = 0.0;
};

/// Value at the knot, mean of the two slopes, half their difference.
struct GrowthFactorsReparam {
    double knot_measurement = 0.0;
    double mean_slope = 0.0;
    double half_slope_diff = 0.0;
};

/// Piecewise evaluation of a bilinear trajectory at time t.
inline double bilinear_value(const GrowthFactorsOriginal& gf, double knot, double t) {
    if (t <= knot) {
        return gf.intercept + gf.slope1 * t;
    }
    return gf.intercept + gf.slope1 * knot + gf.slope2 * (t - knot);
}

inline Eigen::Matrix<double, 3, 1> loading_row(double t, double knot) {
    return {1.0, t - knot, std::abs(t - knot)};
}

inline Matrix factor_loadings(const Schedule& schedule, double knot) {
    if (!std::isfinite(knot)) {
        throw InvalidInput("non-finite knot");
    }
    Matrix lambda(static_cast<Eigen::Index>(schedule.size()), 3);
    for (std::size_t j = 0; j < schedule.size(); ++j) {
        const double t = schedule.times[j];
        if (!std::isfinite(t)) {
            throw InvalidInput("non-finite measurement occasion");
        }
        lambda.row(static_cast<Eigen::Index>(j)) = loading_row(t, knot).transpose();
    }
    return lambda;
}

inline GrowthFactorsReparam reparameterize(const GrowthFactorsOriginal& gf, double knot) {
    return {gf.intercept + knot * gf.slope1, 0.5 * (gf.slope1 + gf.slope2), 0.5 * (gf.slope2 - gf.slope1)};
}

inline GrowthFactorsOriginal inverse_transform_mean(const GrowthFactorsReparam& gf, double knot) {
    const double slope1 = gf.mean_slope - gf.half_slope_diff;
    const double slope2 = gf.mean_slope + gf.half_slope_diff;
    return {gf.knot_measurement - knot * slope1, slope1, slope2};
}

/// 3x3 map taking original growth factors to the reparameterized ones.
inline Eigen::Matrix3d reparam_matrix(double knot) {
    Eigen::Matrix3d t;
    t << 1.0, knot, 0.0,
         0.0, 0.5, 0.5,
         0.0, -0.5, 0.5;
    return t;
}

inline Eigen::Matrix3d inverse_reparam_matrix(double knot) {
    Eigen::Matrix3d t;
    t << 1.0, -knot, knot,
         0.0, 1.0, -1.0,
         0.0, 1.0, 1.0;
    return t;
}

enum class Direction { to_reparam, to_original };

/// Block-diagonal transform for a stack of one (3x3) or two (6x6) outcome blocks.
inline Matrix block_transform(Eigen::Index dim, double knot_y, double knot_z, Direction direction) {
    auto block = [direction](double knot) {
        return direction == Direction::to_reparam ? reparam_matrix(knot) : inverse_reparam_matrix(knot);
    };
    Matrix b = Matrix::Zero(dim, dim);
    b.topLeftCorner<3, 3>() = block(knot_y);
    if (dim == 6) {
        b.bottomRightCorner<3, 3>() = block(knot_z);
    }
    return b;
}

inline bool is_symmetric(const Matrix& m, double tol = 1e-10) {
    if (m.rows() != m.cols()) {
        return false;
    }
    const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
    return (m - m.transpose()).cwiseAbs().maxCoeff() <= tol * scale;
}

inline Matrix transform_covariance(const Matrix& cov, double knot_y, double knot_z, Direction direction) {
    if (cov.rows() != 3 && cov.rows() != 6) {
        throw InvalidInput("growth-factor covariance must be 3x3 or 6x6");
    }
    if (!is_symmetric(cov)) {
        throw InvalidInput("growth-factor covariance is not symmetric");
    }
    if (!std::isfinite(knot_y) || !std::isfinite(knot_z)) {
        throw InvalidInput("non-finite knot");
    }
    const Matrix b = block_transform(cov.rows(), knot_y, knot_z, direction);
    Matrix out = b * cov * b.transpose();
    return 0.5 * (out + out.transpose());
}

/// One latent class on the reparameterized scale. With one outcome the
/// z fields are unused and mean/cov are 3-dimensional.
struct ClassParameters {
    int outcomes = 2;
    Vector mean;                  // 3 * outcomes, y block first
    Matrix cov;                   // 3 * outcomes square
    std::array<double, 2> knot{0.0, 0.0};
    std::array<double, 2> residual_var{1.0, 1.0};
    double residual_cov = 0.0;

    Eigen::Index dim() const noexcept { return 3 * outcomes; }

    GrowthFactorsReparam reparam_factors(int outcome) const {
        const Eigen::Index o = 3 * outcome;
        return {mean[o], mean[o + 1], mean[o + 2]};
    }
};

inline void validate(const ClassParameters& p) {
    if (p.outcomes != 1 && p.outcomes != 2) {
        throw InvalidInput("outcome count must be 1 or 2");
    }
    if (p.mean.size() != p.dim() || p.cov.rows() != p.dim() || p.cov.cols() != p.dim()) {
        throw InvalidInput("class parameter dimensions disagree with outcome count");
    }
    if (!p.mean.allFinite() || !p.cov.allFinite()) {
        throw InvalidInput("non-finite class parameters");
    }
    for (int u = 0; u < p.outcomes; ++u) {
        if (!std::isfinite(p.knot[u])) {
            throw InvalidInput("non-finite knot");
        }
        if (!(p.residual_var[u] > 0.0)) {
            throw InvalidInput("residual variance must be positive");
        }
    }
    if (p.outcomes == 2 && !(p.residual_cov * p.residual_cov < p.residual_var[0] * p.residual_var[1])) {
        throw InvalidInput("residual covariance block is not positive definite");
    }
}

/// Model-implied moments over the observed entries, y block then z block.
struct ImpliedMoments {
    Vector mean;
    Matrix cov;
};

inline ImpliedMoments implied_moments(const ClassParameters& params, const Schedule& schedule) {
    const auto j_count = static_cast<Eigen::Index>(schedule.size());
    const int q = params.outcomes;

    // Full 2J (or J) layout first, then drop masked rows and columns.
    Matrix lambda = Matrix::Zero(q * j_count, params.dim());
    lambda.topLeftCorner(j_count, 3) = factor_loadings(schedule, params.knot[0]);
    if (q == 2) {
        lambda.bottomRightCorner(j_count, 3) = factor_loadings(schedule, params.knot[1]);
    }
    Matrix residual = Matrix::Zero(q * j_count, q * j_count);
    for (Eigen::Index j = 0; j < j_count; ++j) {
        residual(j, j) = params.residual_var[0];
        if (q == 2) {
            residual(j_count + j, j_count + j) = params.residual_var[1];
            residual(j, j_count + j) = params.residual_cov;
            residual(j_count + j, j) = params.residual_cov;
        }
    }
    const Vector full_mean = lambda * params.mean;
    const Matrix full_cov = lambda * params.cov * lambda.transpose() + residual;

    std::vector<Eigen::Index> keep;
    for (Eigen::Index j = 0; j < j_count; ++j) {
        if (schedule.observed_y[static_cast<std::size_t>(j)]) {
            keep.push_back(j);
        }
    }
    if (q == 2) {
        for (Eigen::Index j = 0; j < j_count; ++j) {
            if (schedule.observed_z[static_cast<std::size_t>(j)]) {
                keep.push_back(j_count + j);
            }
        }
    }
    if (keep.empty()) {
        throw EmptyMoments("every outcome entry is masked");
    }
    const Matrix kept = full_cov(keep, keep);
    ImpliedMoments out{full_mean(keep), 0.5 * (kept + kept.transpose())};
    return out;
}

} // namespace pbgmm

#endif // PBGMM_SPLINE_KERNEL_HPP
