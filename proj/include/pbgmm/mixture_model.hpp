#ifndef PBGMM_MIXTURE_MODEL_HPP
#define PBGMM_MIXTURE_MODEL_HPP

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pbgmm/errors.hpp"
#include "pbgmm/spline_kernel.hpp"

namespace pbgmm {

/// Multinomial-logit coefficients for classes 2..K; class 1 is the reference.
/// Row k-1 holds (intercept, slopes...) for class k.
struct GatingParameters {
    Matrix coef;

    Eigen::Index covariates() const noexcept { return coef.cols() == 0 ? 0 : coef.cols() - 1; }

    static GatingParameters zeros(int classes, Eigen::Index covariates) {
        return {Matrix::Zero(std::max(classes - 1, 0), covariates + 1)};
    }
};

struct MixtureModel {
    int outcomes = 2;
    std::vector<ClassParameters> classes;
    GatingParameters gating;

    int class_count() const noexcept { return static_cast<int>(classes.size()); }
};

struct Individual {
    std::string id;
    Schedule schedule;
    Vector y;
    Vector z;
    Vector x;
};

enum class Outcome { y = 0, z = 1 };

/// Univariate view: the selected outcome moves into the y slot and z is fully masked.
inline std::vector<Individual> project_outcome(const std::vector<Individual>& data, Outcome outcome) {
    std::vector<Individual> out;
    out.reserve(data.size());
    for (const Individual& ind : data) {
        Individual p = ind;
        if (outcome == Outcome::z) {
            p.y = ind.z;
            p.schedule.observed_y = ind.schedule.observed_z;
        }
        p.z = Vector::Constant(p.y.size(), std::numeric_limits<double>::quiet_NaN());
        p.schedule.observed_z.assign(p.schedule.size(), false);
        if (p.schedule.observed_count() == 0) {
            throw InvalidInput("individual " + ind.id + " has no observations on the selected outcome");
        }
        out.push_back(std::move(p));
    }
    return out;
}

inline double log_sum_exp(const Vector& a) {
    const double m = a.maxCoeff();
    if (!std::isfinite(m)) {
        return m;
    }
    return m + std::log((a.array() - m).exp().sum());
}

/// Class logits with the reference class pinned at zero.
inline Vector gating_logits(const Vector& x, const GatingParameters& gating, int classes) {
    if (classes < 1) {
        throw InvalidInput("class count must be positive");
    }
    if (gating.coef.rows() != classes - 1) {
        throw InvalidInput("gating coefficient rows do not match class count");
    }
    if (classes > 1 && gating.covariates() != x.size()) {
        throw InvalidInput("covariate vector length does not match gating coefficients");
    }
    Vector logits = Vector::Zero(classes);
    for (int k = 1; k < classes; ++k) {
        logits[k] = gating.coef(k - 1, 0) + gating.coef.row(k - 1).tail(x.size()).dot(x);
    }
    return logits;
}

inline Vector softmax(const Vector& logits) {
    const Vector e = (logits.array() - logits.maxCoeff()).exp();
    return e / e.sum();
}

inline Vector gating_probabilities(const Vector& x, const GatingParameters& gating, int classes) {
    return softmax(gating_logits(x, gating, classes));
}

inline Vector log_gating_probabilities(const Vector& x, const GatingParameters& gating, int classes) {
    const Vector logits = gating_logits(x, gating, classes);
    return logits.array() - log_sum_exp(logits);
}

/// Per-class Gaussian log-density over an individual's observed entries.
///
/// The implied covariance is Lambda Psi Lambda' + R with R block-diagonal by
/// occasion, so the density is evaluated through the Woodbury identity:
/// only Psi (up to 6x6), the per-occasion residual block, and a 6x6
/// capacitance matrix are factored.
class ClassDensity {
public:
    using Mat6 = Eigen::Matrix<double, 6, 6>;
    using Vec6 = Eigen::Matrix<double, 6, 1>;

    ClassDensity(const ClassParameters& params, int class_index)
        : params_(params), class_index_(class_index) {
        const Eigen::Index d = params.dim();
        Eigen::LLT<Matrix> psi(params.cov);
        if (psi.info() != Eigen::Success || !params.cov.allFinite()) {
            throw NumericalFailure("growth-factor covariance is not positive definite", class_index);
        }
        psi_inv_ = Mat6::Identity();
        psi_inv_.topLeftCorner(d, d) = psi.solve(Matrix::Identity(d, d));
        logdet_psi_ = 2.0 * psi.matrixLLT().diagonal().array().log().sum();

        const double vy = params.residual_var[0];
        const double vz = params.outcomes == 2 ? params.residual_var[1] : 1.0;
        const double cyz = params.outcomes == 2 ? params.residual_cov : 0.0;
        const double det = vy * vz - cyz * cyz;
        if (!(vy > 0.0) || !(vz > 0.0) || !(det > 0.0)) {
            throw NumericalFailure("residual covariance is not positive definite", class_index);
        }
        r_inv_ << vz / det, -cyz / det, -cyz / det, vy / det;
        logdet_r_both_ = std::log(det);
        log_vy_ = std::log(vy);
        log_vz_ = std::log(vz);
        for (int u = 0; u < params.outcomes; ++u) {
            mean_[u] = params.mean.segment<3>(3 * u);
        }
    }

    double operator()(const Individual& ind) const {
        const Schedule& s = ind.schedule;
        const bool bivariate = params_.outcomes == 2;
        Mat6 a = psi_inv_;
        Vec6 b = Vec6::Zero();
        double quad = 0.0;
        double logdet_r = 0.0;
        std::size_t m = 0;

        for (std::size_t j = 0; j < s.size(); ++j) {
            const double t = s.times[j];
            const bool oy = s.observed_y[j];
            const bool oz = bivariate && s.observed_z[j];
            if (!oy && !oz) {
                continue;
            }
            const Eigen::Vector3d ly = loading_row(t, params_.knot[0]);
            if (oy && oz) {
                const Eigen::Vector3d lz = loading_row(t, params_.knot[1]);
                const double ry = ind.y[static_cast<Eigen::Index>(j)] - ly.dot(mean_[0]);
                const double rz = ind.z[static_cast<Eigen::Index>(j)] - lz.dot(mean_[1]);
                const double wy = r_inv_(0, 0) * ry + r_inv_(0, 1) * rz;
                const double wz = r_inv_(1, 0) * ry + r_inv_(1, 1) * rz;
                quad += ry * wy + rz * wz;
                a.topLeftCorner<3, 3>().noalias() += r_inv_(0, 0) * ly * ly.transpose();
                a.block<3, 3>(0, 3).noalias() += r_inv_(0, 1) * ly * lz.transpose();
                a.bottomRightCorner<3, 3>().noalias() += r_inv_(1, 1) * lz * lz.transpose();
                b.head<3>() += wy * ly;
                b.tail<3>() += wz * lz;
                logdet_r += logdet_r_both_;
                m += 2;
            } else if (oy) {
                const double ry = ind.y[static_cast<Eigen::Index>(j)] - ly.dot(mean_[0]);
                const double inv = 1.0 / params_.residual_var[0];
                quad += ry * ry * inv;
                a.topLeftCorner<3, 3>().noalias() += inv * ly * ly.transpose();
                b.head<3>() += (ry * inv) * ly;
                logdet_r += log_vy_;
                m += 1;
            } else {
                const Eigen::Vector3d lz = loading_row(t, params_.knot[1]);
                const double rz = ind.z[static_cast<Eigen::Index>(j)] - lz.dot(mean_[1]);
                const double inv = 1.0 / params_.residual_var[1];
                quad += rz * rz * inv;
                a.bottomRightCorner<3, 3>().noalias() += inv * lz * lz.transpose();
                b.tail<3>() += (rz * inv) * lz;
                logdet_r += log_vz_;
                m += 1;
            }
        }
        if (m == 0) {
            throw EmptyMoments("individual " + ind.id + " has no observed entries");
        }
        a.block<3, 3>(3, 0) = a.block<3, 3>(0, 3).transpose();
        Eigen::LLT<Mat6> cap(a);
        if (cap.info() != Eigen::Success) {
            throw NumericalFailure("implied covariance is not positive definite", class_index_, ind.id);
        }
        const double logdet_a = 2.0 * cap.matrixLLT().diagonal().array().log().sum();
        quad -= b.dot(cap.solve(b));
        const double logdet = logdet_r + logdet_psi_ + logdet_a;
        const double value = -0.5 * (static_cast<double>(m) * std::log(2.0 * std::numbers::pi) + logdet + quad);
        if (!std::isfinite(value)) {
            throw NumericalFailure("non-finite class log-density", class_index_, ind.id);
        }
        return value;
    }

private:
    ClassParameters params_;
    int class_index_;
    Mat6 psi_inv_;
    double logdet_psi_ = 0.0;
    Eigen::Matrix2d r_inv_;
    double logdet_r_both_ = 0.0;
    double log_vy_ = 0.0;
    double log_vz_ = 0.0;
    std::array<Eigen::Vector3d, 2> mean_{Eigen::Vector3d::Zero(), Eigen::Vector3d::Zero()};
};

inline double class_log_density(const Individual& ind, const ClassParameters& params, int class_index = 0) {
    return ClassDensity(params, class_index)(ind);
}

/// n x K matrix of class log-densities.
inline Matrix class_log_densities(const MixtureModel& model, const std::vector<Individual>& data) {
    const int k_count = model.class_count();
    Matrix out(static_cast<Eigen::Index>(data.size()), k_count);
    for (int k = 0; k < k_count; ++k) {
        const ClassDensity density(model.classes[static_cast<std::size_t>(k)], k);
        for (std::size_t i = 0; i < data.size(); ++i) {
            out(static_cast<Eigen::Index>(i), k) = density(data[i]);
        }
    }
    return out;
}

inline double individual_log_likelihood(const Vector& log_gating, const Eigen::Ref<const Eigen::RowVectorXd>& log_dens) {
    return log_sum_exp(log_gating + log_dens.transpose());
}

inline double total_log_likelihood(const MixtureModel& model, const std::vector<Individual>& data) {
    const Matrix dens = class_log_densities(model, data);
    double total = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const Vector lg = log_gating_probabilities(data[i].x, model.gating, model.class_count());
        total += individual_log_likelihood(lg, dens.row(static_cast<Eigen::Index>(i)));
    }
    return total;
}

/// Bayes posterior from prior class probabilities and class log-densities.
inline Vector posterior_from(const Vector& prior, const Vector& log_dens) {
    if ((log_dens.array() == log_dens[0]).all() && std::isfinite(log_dens[0])) {
        return prior;
    }
    const Vector d = (log_dens.array() - log_dens.maxCoeff()).exp();
    const Vector w = prior.cwiseProduct(d);
    const double total = w.sum();
    if (total > 0.0 && std::isfinite(total)) {
        return w / total;
    }
    const Vector a = prior.array().log() + log_dens.array();
    return softmax(a);
}

inline Vector posterior_probabilities(const MixtureModel& model, const Individual& ind) {
    const int k_count = model.class_count();
    Vector log_dens(k_count);
    for (int k = 0; k < k_count; ++k) {
        log_dens[k] = class_log_density(ind, model.classes[static_cast<std::size_t>(k)], k);
    }
    return posterior_from(gating_probabilities(ind.x, model.gating, k_count), log_dens);
}

/// n x K posterior matrix.
inline Matrix posterior_matrix(const MixtureModel& model, const std::vector<Individual>& data) {
    const Matrix dens = class_log_densities(model, data);
    Matrix post(dens.rows(), dens.cols());
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        post.row(r) = posterior_from(gating_probabilities(data[i].x, model.gating, model.class_count()),
                                     dens.row(r).transpose()).transpose();
    }
    return post;
}

inline double round_significant(double v, int digits) {
    if (v == 0.0 || !std::isfinite(v)) {
        return v;
    }
    const double scale = std::pow(10.0, digits - 1 - static_cast<int>(std::floor(std::log10(std::abs(v)))));
    return std::round(v * scale) / scale;
}

/// Modal class (0-based). Maxima that agree to 12 significant digits are
/// ties and are broken uniformly at random from `rng`.
template <class Rng>
int classify(const Vector& posteriors, Rng& rng) {
    const double best = round_significant(posteriors.maxCoeff(), 12);
    std::vector<int> tied;
    for (Eigen::Index k = 0; k < posteriors.size(); ++k) {
        if (round_significant(posteriors[k], 12) == best) {
            tied.push_back(static_cast<int>(k));
        }
    }
    if (tied.size() == 1) {
        return tied.front();
    }
    std::uniform_int_distribution<std::size_t> pick(0, tied.size() - 1);
    return tied[pick(rng)];
}

/// Reorders classes by ascending y-knot and re-expresses gating against the new reference.
inline MixtureModel relabel_by_knot(const MixtureModel& model, std::vector<int>* order_out = nullptr) {
    const int k_count = model.class_count();
    std::vector<int> order(static_cast<std::size_t>(k_count));
    for (int k = 0; k < k_count; ++k) {
        order[static_cast<std::size_t>(k)] = k;
    }
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return model.classes[static_cast<std::size_t>(a)].knot[0] < model.classes[static_cast<std::size_t>(b)].knot[0];
    });
    MixtureModel out = model;
    const Eigen::Index cols = model.gating.coef.cols();
    Matrix full = Matrix::Zero(k_count, cols);
    if (k_count > 1) {
        full.bottomRows(k_count - 1) = model.gating.coef;
    }
    for (int k = 0; k < k_count; ++k) {
        out.classes[static_cast<std::size_t>(k)] = model.classes[static_cast<std::size_t>(order[static_cast<std::size_t>(k)])];
    }
    if (k_count > 1) {
        const Eigen::RowVectorXd ref = full.row(order[0]);
        for (int k = 1; k < k_count; ++k) {
            out.gating.coef.row(k - 1) = full.row(order[static_cast<std::size_t>(k)]) - ref;
        }
    }
    if (order_out != nullptr) {
        *order_out = order;
    }
    return out;
}

} // namespace pbgmm

#endif // PBGMM_MIXTURE_MODEL_HPP
