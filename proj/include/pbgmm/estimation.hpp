#ifndef PBGMM_ESTIMATION_HPP
#define PBGMM_ESTIMATION_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pbgmm/errors.hpp"
#include "pbgmm/mixture_model.hpp"
#include "pbgmm/optimizer.hpp"
#include "pbgmm/parameter_vector.hpp"
#include "pbgmm/random.hpp"
#include "pbgmm/spline_kernel.hpp"

namespace pbgmm {

struct FitConfig {
    int outcomes = 2;
    int max_restarts = 10;
    int min_starts = 1;           // starts that must converge before stopping early
    double gradient_tol = 1e-5;
    double relative_tol = 1e-10;
    double fd_step = 1e-5;        // relative, central differences
    double hessian_step = 1e-4;   // relative, second differences for Wald SEs
    double knot_margin = 0.5;     // in wave spacings inside the observed window
    std::optional<KnotBox> knot_box;
    std::uint64_t seed = 1;
    int max_iterations = 3000;
    bool compute_standard_errors = true;
};

inline void validate(const FitConfig& c) {
    if (c.outcomes != 1 && c.outcomes != 2) {
        throw InvalidInput("outcomes must be 1 or 2");
    }
    if (c.max_restarts < 1 || c.min_starts < 1 || c.min_starts > c.max_restarts) {
        throw InvalidInput("restart limits must satisfy 1 <= min_starts <= max_restarts");
    }
    if (!(c.gradient_tol > 0.0) || !(c.relative_tol > 0.0) || !(c.fd_step > 0.0) || !(c.hessian_step > 0.0)) {
        throw InvalidInput("tolerances and steps must be positive");
    }
    if (!(c.knot_margin >= 0.0) || c.max_iterations < 1) {
        throw InvalidInput("invalid knot margin or iteration limit");
    }
}

enum class FitStatus { converged, restart_exhausted, numerical_failure };

inline const char* to_string(FitStatus s) {
    switch (s) {
    case FitStatus::converged: return "converged";
    case FitStatus::restart_exhausted: return "restart-exhausted";
    case FitStatus::numerical_failure: return "numerical-failure";
    }
    return "unknown";
}

// ---------------------------------------------------------------------------
// Time grid

struct TimeSummary {
    double t_min = 0.0;
    double t_max = 0.0;
    double first_wave = 0.0;
    double wave_spacing = 1.0;
    std::size_t max_occasions = 0;
};

inline double median(std::vector<double> v) {
    if (v.empty()) {
        return std::numeric_limits<double>::quiet_NaN();
    }
    const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
    std::nth_element(v.begin(), mid, v.end());
    double m = *mid;
    if (v.size() % 2 == 0) {
        m = 0.5 * (m + *std::max_element(v.begin(), mid));
    }
    return m;
}

inline TimeSummary summarize_times(const std::vector<Individual>& data) {
    TimeSummary s;
    s.t_min = std::numeric_limits<double>::infinity();
    s.t_max = -std::numeric_limits<double>::infinity();
    std::vector<double> firsts;
    std::vector<double> spacings;
    for (const Individual& ind : data) {
        const auto& t = ind.schedule.times;
        s.t_min = std::min(s.t_min, t.front());
        s.t_max = std::max(s.t_max, t.back());
        s.max_occasions = std::max(s.max_occasions, t.size());
        firsts.push_back(t.front());
        if (t.size() > 1) {
            spacings.push_back((t.back() - t.front()) / static_cast<double>(t.size() - 1));
        }
    }
    s.first_wave = median(firsts);
    s.wave_spacing = spacings.empty() ? 1.0 : median(spacings);
    return s;
}

inline KnotBox knot_box_for(const std::vector<Individual>& data, const FitConfig& config) {
    if (config.knot_box) {
        return *config.knot_box;
    }
    const TimeSummary s = summarize_times(data);
    KnotBox box{s.t_min + config.knot_margin * s.wave_spacing, s.t_max - config.knot_margin * s.wave_spacing};
    if (!(box.upper > box.lower)) {
        throw InvalidInput("observed time window too short to place a knot");
    }
    return box;
}

// ---------------------------------------------------------------------------
// Objective

/// Mixture log-likelihood over an unconstrained parameter vector. Class
/// log-densities and log gating probabilities at the last base point are
/// cached so that a coordinate perturbation recomputes only the class (or
/// the gating) that owns it.
class LikelihoodObjective {
public:
    LikelihoodObjective(const std::vector<Individual>& data, ParameterLayout layout, double fd_step)
        : data_(data), layout_(std::move(layout)), fd_step_(fd_step) {
        const auto n = static_cast<Eigen::Index>(data.size());
        covariates_ = Matrix::Zero(n, layout_.covariates());
        for (Eigen::Index i = 0; i < n; ++i) {
            if (layout_.covariates() > 0) {
                covariates_.row(i) = data[static_cast<std::size_t>(i)].x.transpose();
            }
        }
    }

    const ParameterLayout& layout() const noexcept { return layout_; }
    std::size_t size() const noexcept { return data_.size(); }

    /// Total log-likelihood; throws NumericalFailure on a non-PD class.
    double log_likelihood(const Vector& u) {
        refresh(u);
        return base_ll_;
    }

    /// Per-individual negative log-likelihood, +inf where undefined.
    double value(const Vector& u) {
        try {
            refresh(u);
        } catch (const NumericalFailure&) {
            return std::numeric_limits<double>::infinity();
        }
        return std::isfinite(base_ll_) ? -base_ll_ / static_cast<double>(data_.size())
                                       : std::numeric_limits<double>::infinity();
    }

    Vector gradient(const Vector& u, double /*value_at_u*/) {
        refresh(u);
        const double n = static_cast<double>(data_.size());
        Vector g(u.size());
        Vector probe = u;
        for (Eigen::Index i = 0; i < u.size(); ++i) {
            const double h = fd_step_ * std::max(1.0, std::abs(u[i]));
            const int owner = layout_.owner(i);
            probe[i] = u[i] + h;
            const double up = partial(probe, owner);
            probe[i] = u[i] - h;
            const double down = partial(probe, owner);
            probe[i] = u[i];
            if (std::isfinite(up) && std::isfinite(down)) {
                g[i] = -(up - down) / (2.0 * h * n);
            } else if (std::isfinite(up)) {
                g[i] = -(up - base_ll_) / (h * n);
            } else if (std::isfinite(down)) {
                g[i] = -(base_ll_ - down) / (h * n);
            } else {
                g[i] = 0.0;
            }
        }
        return g;
    }

    /// Central second-difference Hessian of the total negative log-likelihood.
    Matrix hessian(const Vector& u, double rel_step) {
        refresh(u);
        const Eigen::Index m = u.size();
        const double f0 = -base_ll_;
        Vector h(m);
        for (Eigen::Index i = 0; i < m; ++i) {
            h[i] = rel_step * std::max(1.0, std::abs(u[i]));
        }
        Matrix hess(m, m);
        Vector probe = u;
        for (Eigen::Index i = 0; i < m; ++i) {
            const int oi = layout_.owner(i);
            probe[i] = u[i] + h[i];
            const double fp = -partial(probe, oi);
            probe[i] = u[i] - h[i];
            const double fm = -partial(probe, oi);
            probe[i] = u[i];
            hess(i, i) = (fp - 2.0 * f0 + fm) / (h[i] * h[i]);
            for (Eigen::Index j = 0; j < i; ++j) {
                const int oj = layout_.owner(j);
                auto at = [&](double si, double sj) {
                    probe[i] = u[i] + si * h[i];
                    probe[j] = u[j] + sj * h[j];
                    const double v = -partial(probe, oi, oj);
                    probe[i] = u[i];
                    probe[j] = u[j];
                    return v;
                };
                const double v = (at(1, 1) - at(1, -1) - at(-1, 1) + at(-1, -1)) / (4.0 * h[i] * h[j]);
                hess(i, j) = v;
                hess(j, i) = v;
            }
        }
        return hess;
    }

private:
    void refresh(const Vector& u) {
        if (has_base_ && u.size() == base_.size() && u == base_) {
            return;
        }
        has_base_ = false;
        const MixtureModel model = decode(u, layout_);
        const auto n = static_cast<Eigen::Index>(data_.size());
        dens_.resize(n, layout_.classes());
        for (int k = 0; k < layout_.classes(); ++k) {
            fill_column(model.classes[static_cast<std::size_t>(k)], k, dens_.col(k));
        }
        fill_log_gating(model.gating, log_gate_);
        base_ = u;
        base_ll_ = combine(dens_, log_gate_, -1, nullptr, nullptr);
        has_base_ = true;
    }

    void fill_column(const ClassParameters& c, int k, Eigen::Ref<Vector> out) const {
        const ClassDensity density(c, k);
        for (std::size_t i = 0; i < data_.size(); ++i) {
            out[static_cast<Eigen::Index>(i)] = density(data_[i]);
        }
    }

    void fill_log_gating(const GatingParameters& g, Matrix& out) const {
        const auto n = static_cast<Eigen::Index>(data_.size());
        const int k_count = layout_.classes();
        out.resize(n, k_count);
        out.col(0).setZero();
        for (int k = 1; k < k_count; ++k) {
            out.col(k).setConstant(g.coef(k - 1, 0));
            if (layout_.covariates() > 0) {
                out.col(k) += covariates_ * g.coef.row(k - 1).tail(layout_.covariates()).transpose();
            }
        }
        for (Eigen::Index i = 0; i < n; ++i) {
            const double lse = log_sum_exp(out.row(i).transpose());
            out.row(i).array() -= lse;
        }
    }

    /// Sum over individuals in index order. Columns `col_a`/`col_b` (class
    /// indices, -1 for none) are substituted from `alt_a`/`alt_b`.
    double combine(const Matrix& dens, const Matrix& log_gate, int col_a, const Vector* alt_a, const Vector* alt_b,
                   int col_b = -1) const {
        const Eigen::Index k_count = dens.cols();
        double total = 0.0;
        Vector row(k_count);
        for (Eigen::Index i = 0; i < dens.rows(); ++i) {
            row = dens.row(i).transpose() + log_gate.row(i).transpose();
            if (col_a >= 0) {
                row[col_a] = (*alt_a)[i] + log_gate(i, col_a);
            }
            if (col_b >= 0) {
                row[col_b] = (*alt_b)[i] + log_gate(i, col_b);
            }
            total += log_sum_exp(row);
        }
        return total;
    }

    /// Log-likelihood at `u`, which differs from the base point only in
    /// coordinates owned by `owner_a` / `owner_b` (-1 = gating).
    static constexpr int no_owner = -2;

    double partial(const Vector& u, int owner_a, int owner_b = no_owner) {
        try {
            const bool gating_changed = owner_a == -1 || owner_b == -1;
            const Matrix* gate = &log_gate_;
            if (gating_changed && layout_.classes() > 1) {
                fill_log_gating(decode_gating(u, layout_), scratch_gate_);
                gate = &scratch_gate_;
            }
            int ca = owner_a >= 0 ? owner_a : -1;
            int cb = owner_b >= 0 && owner_b != owner_a ? owner_b : -1;
            if (ca >= 0) {
                alt_a_.resize(dens_.rows());
                fill_column(decode_class(u, layout_, ca), ca, alt_a_);
            }
            if (cb >= 0) {
                alt_b_.resize(dens_.rows());
                fill_column(decode_class(u, layout_, cb), cb, alt_b_);
            }
            if (ca < 0 && cb >= 0) {
                std::swap(ca, cb);
                std::swap(alt_a_, alt_b_);
                const double v = combine(dens_, *gate, ca, &alt_a_, nullptr);
                std::swap(alt_a_, alt_b_);
                return v;
            }
            return combine(dens_, *gate, ca, &alt_a_, &alt_b_, cb);
        } catch (const NumericalFailure&) {
            return -std::numeric_limits<double>::infinity();
        }
    }

    const std::vector<Individual>& data_;
    ParameterLayout layout_;
    double fd_step_;
    Matrix covariates_;

    bool has_base_ = false;
    Vector base_;
    double base_ll_ = 0.0;
    Matrix dens_;
    Matrix log_gate_;
    Matrix scratch_gate_;
    Vector alt_a_;
    Vector alt_b_;
};

// ---------------------------------------------------------------------------
// Starting values

namespace detail {

struct SplineFit {
    bool ok = false;
    double knot = 0.0;
    Eigen::Vector3d reparam = Eigen::Vector3d::Zero();
    double sse = 0.0;
    int n = 0;
};

inline SplineFit fit_spline_at(const std::vector<double>& t, const std::vector<double>& v, double knot) {
    SplineFit f;
    f.knot = knot;
    f.n = static_cast<int>(t.size());
    if (t.size() < 3) {
        return f;
    }
    Matrix x(f.n, 3);
    Vector y(f.n);
    for (int j = 0; j < f.n; ++j) {
        x.row(j) = loading_row(t[static_cast<std::size_t>(j)], knot).transpose();
        y[j] = v[static_cast<std::size_t>(j)];
    }
    const Eigen::Matrix3d xtx = x.transpose() * x;
    Eigen::LDLT<Eigen::Matrix3d> ldlt(xtx);
    if (ldlt.info() != Eigen::Success || !(ldlt.vectorD().minCoeff() > 1e-10 * std::max(1.0, ldlt.vectorD().maxCoeff()))) {
        return f;
    }
    f.reparam = ldlt.solve(x.transpose() * y);
    f.sse = (y - x * f.reparam).squaredNorm();
    f.ok = f.reparam.allFinite();
    return f;
}

inline SplineFit best_knot_fit(const std::vector<double>& t, const std::vector<double>& v,
                               const std::vector<double>& candidates) {
    SplineFit best;
    for (double knot : candidates) {
        SplineFit f = fit_spline_at(t, v, knot);
        if (f.ok && (!best.ok || f.sse < best.sse)) {
            best = f;
        }
    }
    return best;
}

inline void observed(const Individual& ind, int outcome, std::vector<double>& t, std::vector<double>& v) {
    t.clear();
    v.clear();
    const auto& mask = outcome == 0 ? ind.schedule.observed_y : ind.schedule.observed_z;
    const Vector& values = outcome == 0 ? ind.y : ind.z;
    for (std::size_t j = 0; j < ind.schedule.size(); ++j) {
        if (mask[j]) {
            t.push_back(ind.schedule.times[j]);
            v.push_back(values[static_cast<Eigen::Index>(j)]);
        }
    }
}

/// Lloyd's k-means with k-means++ seeding; returns labels in 0..k-1.
inline std::vector<int> kmeans(const Matrix& points, int k, Rng& rng, int max_iter = 100) {
    const Eigen::Index n = points.rows();
    std::vector<int> labels(static_cast<std::size_t>(n), 0);
    if (k <= 1 || n == 0) {
        return labels;
    }
    Matrix centers(k, points.cols());
    std::uniform_int_distribution<Eigen::Index> first(0, n - 1);
    centers.row(0) = points.row(first(rng));
    Vector d2(n);
    for (int c = 1; c < k; ++c) {
        for (Eigen::Index i = 0; i < n; ++i) {
            double best = std::numeric_limits<double>::infinity();
            for (int e = 0; e < c; ++e) {
                best = std::min(best, (points.row(i) - centers.row(e)).squaredNorm());
            }
            d2[i] = best;
        }
        const double total = d2.sum();
        Eigen::Index pick = n - 1;
        if (total > 0.0) {
            double r = uniform(rng, 0.0, total);
            for (Eigen::Index i = 0; i < n; ++i) {
                r -= d2[i];
                if (r <= 0.0) {
                    pick = i;
                    break;
                }
            }
        } else {
            pick = first(rng);
        }
        centers.row(c) = points.row(pick);
    }
    for (int iter = 0; iter < max_iter; ++iter) {
        bool changed = false;
        for (Eigen::Index i = 0; i < n; ++i) {
            int best = 0;
            double best_d = std::numeric_limits<double>::infinity();
            for (int c = 0; c < k; ++c) {
                const double d = (points.row(i) - centers.row(c)).squaredNorm();
                if (d < best_d) {
                    best_d = d;
                    best = c;
                }
            }
            if (labels[static_cast<std::size_t>(i)] != best || iter == 0) {
                changed = changed || labels[static_cast<std::size_t>(i)] != best;
                labels[static_cast<std::size_t>(i)] = best;
            }
        }
        Matrix sums = Matrix::Zero(k, points.cols());
        std::vector<int> counts(static_cast<std::size_t>(k), 0);
        for (Eigen::Index i = 0; i < n; ++i) {
            sums.row(labels[static_cast<std::size_t>(i)]) += points.row(i);
            ++counts[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])];
        }
        for (int c = 0; c < k; ++c) {
            if (counts[static_cast<std::size_t>(c)] > 0) {
                centers.row(c) = sums.row(c) / counts[static_cast<std::size_t>(c)];
            }
        }
        if (!changed && iter > 0) {
            break;
        }
    }
    return labels;
}

inline std::vector<int> quantile_split(const std::vector<Individual>& data, int k, int outcomes) {
    std::vector<double> level(data.size(), 0.0);
    std::vector<double> t;
    std::vector<double> v;
    for (std::size_t i = 0; i < data.size(); ++i) {
        double sum = 0.0;
        int cnt = 0;
        for (int u = 0; u < outcomes; ++u) {
            observed(data[i], u, t, v);
            for (double x : v) {
                sum += x;
                ++cnt;
            }
        }
        level[i] = cnt > 0 ? sum / cnt : 0.0;
    }
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return level[a] < level[b]; });
    std::vector<int> labels(data.size(), 0);
    for (std::size_t r = 0; r < order.size(); ++r) {
        labels[order[r]] = static_cast<int>(r * static_cast<std::size_t>(k) / order.size());
    }
    return labels;
}

/// Within-group moments of per-individual spline fits at the group knot.
inline ClassParameters group_moments(const std::vector<Individual>& data, const std::vector<std::size_t>& members,
                                     const std::array<double, 2>& knot, int outcomes) {
    const Eigen::Index d = 3 * outcomes;
    std::vector<Vector> etas;
    std::array<double, 2> sse{0.0, 0.0};
    std::array<double, 2> dof{0.0, 0.0};
    double cross = 0.0;
    std::array<double, 2> sq{0.0, 0.0};
    std::vector<double> t;
    std::vector<double> v;
    for (std::size_t i : members) {
        const Individual& ind = data[i];
        Vector eta(d);
        bool ok = true;
        std::array<Eigen::Vector3d, 2> coef;
        for (int u = 0; u < outcomes; ++u) {
            observed(ind, u, t, v);
            const SplineFit f = fit_spline_at(t, v, knot[u]);
            if (!f.ok) {
                ok = false;
                break;
            }
            coef[u] = f.reparam;
            eta.segment<3>(3 * u) = f.reparam;
            if (f.n > 3) {
                sse[u] += f.sse;
                dof[u] += f.n - 3;
            }
        }
        if (!ok) {
            continue;
        }
        etas.push_back(eta);
        if (outcomes == 2) {
            for (std::size_t j = 0; j < ind.schedule.size(); ++j) {
                if (ind.schedule.observed_y[j] && ind.schedule.observed_z[j]) {
                    const double tj = ind.schedule.times[j];
                    const double ry = ind.y[static_cast<Eigen::Index>(j)] - loading_row(tj, knot[0]).dot(coef[0]);
                    const double rz = ind.z[static_cast<Eigen::Index>(j)] - loading_row(tj, knot[1]).dot(coef[1]);
                    cross += ry * rz;
                    sq[0] += ry * ry;
                    sq[1] += rz * rz;
                }
            }
        }
    }
    ClassParameters c;
    c.outcomes = outcomes;
    c.knot = knot;
    c.mean = Vector::Zero(d);
    c.cov = Matrix::Identity(d, d);
    if (!etas.empty()) {
        for (const Vector& e : etas) {
            c.mean += e;
        }
        c.mean /= static_cast<double>(etas.size());
        Matrix s = Matrix::Zero(d, d);
        for (const Vector& e : etas) {
            s += (e - c.mean) * (e - c.mean).transpose();
        }
        if (etas.size() > 1) {
            s /= static_cast<double>(etas.size() - 1);
        }
        c.cov = s;
    }
    for (Eigen::Index i = 0; i < d; ++i) {
        c.cov(i, i) += 0.01 * c.cov(i, i) + 1e-3;
    }
    for (int u = 0; u < outcomes; ++u) {
        c.residual_var[u] = dof[u] > 0.0 ? std::max(sse[u] / dof[u], 1e-4) : 1.0;
    }
    if (outcomes == 2) {
        const double denom = std::sqrt(sq[0] * sq[1]);
        const double r = denom > 0.0 ? std::clamp(cross / denom, -0.8, 0.8) : 0.0;
        c.residual_cov = r * std::sqrt(c.residual_var[0] * c.residual_var[1]);
    } else {
        c.knot[1] = 0.0;
        c.residual_var[1] = 1.0;
    }
    return c;
}

} // namespace detail

/// Heuristic start: per-individual bilinear fits (knot grid over interior
/// waves), k-means on standardized coefficients, within-group moments.
/// Restart r > 1 reseeds the clustering and jitters class means.
inline MixtureModel starting_values(const std::vector<Individual>& data, int classes, const FitConfig& config,
                                    int restart = 1) {
    const int q = config.outcomes;
    if (classes < 1) {
        throw InvalidInput("class count must be positive");
    }
    if (data.size() < static_cast<std::size_t>(10 * classes)) {
        throw InvalidInput("need at least 10 individuals per class");
    }
    const KnotBox box = knot_box_for(data, config);
    const TimeSummary ts = summarize_times(data);
    std::vector<double> grid;
    for (std::size_t j = 1; j + 1 < ts.max_occasions; ++j) {
        const double w = ts.first_wave + static_cast<double>(j) * ts.wave_spacing;
        if (box.contains(w)) {
            grid.push_back(w);
        }
    }
    if (grid.empty()) {
        grid.push_back(0.5 * (box.lower + box.upper));
    }

    const auto n = static_cast<Eigen::Index>(data.size());
    const Eigen::Index width = 4 * q;
    Matrix features(n, width);
    std::vector<bool> valid(data.size(), true);
    std::vector<double> t;
    std::vector<double> v;
    for (Eigen::Index i = 0; i < n; ++i) {
        for (int u = 0; u < q; ++u) {
            detail::observed(data[static_cast<std::size_t>(i)], u, t, v);
            const detail::SplineFit f = t.size() >= 4 ? detail::best_knot_fit(t, v, grid) : detail::SplineFit{};
            if (!f.ok) {
                valid[static_cast<std::size_t>(i)] = false;
                features.row(i).segment<4>(4 * u).setConstant(std::numeric_limits<double>::quiet_NaN());
                continue;
            }
            const GrowthFactorsOriginal g = inverse_transform_mean({f.reparam[0], f.reparam[1], f.reparam[2]}, f.knot);
            features.row(i).segment<4>(4 * u) << g.intercept, g.slope1, g.slope2, f.knot;
        }
    }
    // Standardize with column means over valid rows; missing features sit at the mean.
    for (Eigen::Index c = 0; c < width; ++c) {
        double sum = 0.0;
        double sumsq = 0.0;
        double cnt = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            if (std::isfinite(features(i, c))) {
                sum += features(i, c);
                sumsq += features(i, c) * features(i, c);
                cnt += 1.0;
            }
        }
        const double mean = cnt > 0.0 ? sum / cnt : 0.0;
        const double sd = cnt > 1.0 ? std::sqrt(std::max(sumsq / cnt - mean * mean, 0.0)) : 1.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            const double x = features(i, c);
            features(i, c) = std::isfinite(x) && sd > 0.0 ? (x - mean) / sd : 0.0;
        }
    }

    Rng rng = derive_rng(config.seed, 0x5747u, static_cast<std::uint64_t>(restart));
    std::vector<int> labels = detail::kmeans(features, classes, rng);
    std::vector<std::vector<std::size_t>> groups(static_cast<std::size_t>(classes));
    auto regroup = [&]() {
        for (auto& g : groups) {
            g.clear();
        }
        for (std::size_t i = 0; i < data.size(); ++i) {
            groups[static_cast<std::size_t>(labels[i])].push_back(i);
        }
    };
    regroup();
    const bool degenerate = std::any_of(groups.begin(), groups.end(), [](const auto& g) { return g.size() < 6; });
    if (degenerate) {
        labels = detail::quantile_split(data, classes, q);
        regroup();
    }

    MixtureModel model;
    model.outcomes = q;
    const double edge = 0.02 * box.width();
    for (int k = 0; k < classes; ++k) {
        const auto& members = groups[static_cast<std::size_t>(k)];
        std::array<double, 2> knot{0.0, 0.0};
        for (int u = 0; u < q; ++u) {
            double sum = 0.0;
            double cnt = 0.0;
            for (std::size_t i : members) {
                if (valid[i]) {
                    detail::observed(data[i], u, t, v);
                    const detail::SplineFit f = detail::best_knot_fit(t, v, grid);
                    sum += f.knot;
                    cnt += 1.0;
                }
            }
            const double raw = cnt > 0.0 ? sum / cnt : 0.5 * (box.lower + box.upper);
            knot[u] = std::clamp(raw, box.lower + edge, box.upper - edge);
        }
        ClassParameters c = detail::group_moments(data, members, knot, q);
        if (restart > 1) {
            for (Eigen::Index i = 0; i < c.mean.size(); ++i) {
                c.mean[i] += 0.25 * std::sqrt(c.cov(i, i)) * standard_normal(rng);
            }
        }
        model.classes.push_back(std::move(c));
    }

    const Eigen::Index p = data.front().x.size();
    model.gating = GatingParameters::zeros(classes, p);
    const double ref = static_cast<double>(std::max<std::size_t>(groups[0].size(), 1));
    for (int k = 1; k < classes; ++k) {
        const double share = static_cast<double>(std::max<std::size_t>(groups[static_cast<std::size_t>(k)].size(), 1));
        model.gating.coef(k - 1, 0) = std::log(share / ref);
    }
    return relabel_by_knot(model);
}

// ---------------------------------------------------------------------------
// Fit

struct FitResult {
    FitStatus status = FitStatus::numerical_failure;
    int classes = 0;
    int outcomes = 2;
    Eigen::Index covariates = 0;
    std::size_t n = 0;
    KnotBox knot_box;

    MixtureModel model;          // reparameterized scale, ordered by ascending y knot
    Vector unconstrained;
    double log_likelihood = -std::numeric_limits<double>::infinity();
    int starts = 0;
    int converged_starts = 0;
    int iterations = 0;
    std::vector<double> best_trace;   // best log-likelihood after each start

    std::vector<std::string> parameter_names;
    Vector estimates;                 // reporting (original) scale
    bool se_available = false;
    Vector standard_errors;
    Vector ci_lower;
    Vector ci_upper;

    std::vector<std::string> ids;
    Matrix posteriors;
    std::vector<int> modal_class;     // 0-based
    Vector mixing_proportions;

    ParameterLayout layout() const { return {classes, outcomes, covariates, knot_box}; }
    bool converged() const noexcept { return status == FitStatus::converged; }
};

inline void check_data(const std::vector<Individual>& data, int outcomes) {
    if (data.empty()) {
        throw InvalidInput("no individuals");
    }
    const Eigen::Index p = data.front().x.size();
    for (const Individual& ind : data) {
        validate(ind.schedule);
        const auto j = static_cast<Eigen::Index>(ind.schedule.size());
        if (ind.y.size() != j || ind.z.size() != j) {
            throw InvalidInput("outcome vector length differs from occasions for individual " + ind.id);
        }
        if (ind.x.size() != p || !ind.x.allFinite()) {
            throw InvalidInput("covariates missing or non-finite for individual " + ind.id);
        }
        std::size_t seen = 0;
        for (std::size_t t = 0; t < ind.schedule.size(); ++t) {
            seen += ind.schedule.observed_y[t] ? 1 : 0;
            seen += outcomes == 2 && ind.schedule.observed_z[t] ? 1 : 0;
        }
        if (seen == 0) {
            throw InvalidInput("individual " + ind.id + " has no observed outcomes");
        }
    }
}

/// Wald standard errors on the reporting scale via the delta method.
inline void wald_inference(FitResult& fit, const std::vector<Individual>& data, const FitConfig& config) {
    const Eigen::Index m = fit.unconstrained.size();
    fit.se_available = false;
    fit.standard_errors = Vector::Constant(m, std::numeric_limits<double>::quiet_NaN());
    fit.ci_lower = fit.standard_errors;
    fit.ci_upper = fit.standard_errors;

    LikelihoodObjective objective(data, fit.layout(), config.fd_step);
    Matrix hess;
    try {
        hess = objective.hessian(fit.unconstrained, config.hessian_step);
    } catch (const NumericalFailure&) {
        return;
    }
    if (!hess.allFinite()) {
        return;
    }
    Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 * (hess + hess.transpose()));
    if (eig.info() != Eigen::Success) {
        return;
    }
    const Vector& ev = eig.eigenvalues();
    const double top = ev.cwiseAbs().maxCoeff();
    if (!(ev.minCoeff() > 1e-8 * top)) {
        return;
    }
    const Matrix cov_u = eig.eigenvectors() * ev.cwiseInverse().asDiagonal() * eig.eigenvectors().transpose();
    const Matrix jac = reporting_jacobian(fit.unconstrained, fit.layout());
    const Matrix cov = jac * cov_u * jac.transpose();
    const Vector var = cov.diagonal();
    if (!(var.minCoeff() >= 0.0) || !var.allFinite()) {
        return;
    }
    fit.standard_errors = var.cwiseSqrt();
    fit.ci_lower = fit.estimates - 1.96 * fit.standard_errors;
    fit.ci_upper = fit.estimates + 1.96 * fit.standard_errors;
    fit.se_available = true;
}

/// Populates estimates, posteriors and classes for a fitted vector.
inline void finalize_fit(FitResult& fit, const std::vector<Individual>& data, const FitConfig& config, const Vector& u) {
    const ParameterLayout layout = fit.layout();
    fit.model = relabel_by_knot(decode(u, layout));
    fit.unconstrained = encode(fit.model, layout);
    fit.log_likelihood = total_log_likelihood(fit.model, data);
    fit.parameter_names = reporting_names(layout);
    fit.estimates = reporting_values(fit.model, layout);
    fit.posteriors = posterior_matrix(fit.model, data);
    Rng rng = derive_rng(config.seed, 0xc1a55u);
    fit.modal_class.resize(data.size());
    fit.ids.resize(data.size());
    fit.mixing_proportions = Vector::Zero(fit.classes);
    for (std::size_t i = 0; i < data.size(); ++i) {
        fit.ids[i] = data[i].id;
        fit.modal_class[i] = classify(fit.posteriors.row(static_cast<Eigen::Index>(i)).transpose(), rng);
        fit.mixing_proportions[fit.modal_class[i]] += 1.0;
    }
    fit.mixing_proportions /= static_cast<double>(data.size());
    fit.standard_errors = Vector::Constant(fit.estimates.size(), std::numeric_limits<double>::quiet_NaN());
    fit.ci_lower = fit.standard_errors;
    fit.ci_upper = fit.standard_errors;
}

/// Maximum-likelihood fit with restarts. With config.outcomes == 1 only the
/// y slot is modeled (see project_outcome).
inline FitResult fit(const std::vector<Individual>& data, int classes, const FitConfig& config) {
    validate(config);
    check_data(data, config.outcomes);
    if (classes < 1) {
        throw InvalidInput("class count must be positive");
    }
    FitResult result;
    result.classes = classes;
    result.outcomes = config.outcomes;
    result.covariates = classes > 1 ? data.front().x.size() : 0;
    result.n = data.size();
    result.knot_box = knot_box_for(data, config);

    const ParameterLayout layout = result.layout();
    LikelihoodObjective objective(data, layout, config.fd_step);
    OptimizerOptions options;
    options.gradient_tol = config.gradient_tol;
    options.relative_tol = config.relative_tol;
    options.max_iterations = config.max_iterations;

    std::optional<OptimizerResult> best_converged;
    std::optional<OptimizerResult> best_any;
    double best_so_far = -std::numeric_limits<double>::infinity();
    for (int r = 1; r <= config.max_restarts; ++r) {
        ++result.starts;
        MixtureModel start = starting_values(data, classes, config, r);
        if (result.covariates == 0) {
            start.gating.coef.conservativeResize(start.gating.coef.rows(), 1);
        }
        OptimizerResult run = minimize_bfgs(objective, encode(start, layout), options);
        result.iterations += run.iterations;
        if (std::isfinite(run.value)) {
            if (!best_any || run.value < best_any->value) {
                best_any = run;
            }
            if (run.status == OptimizerStatus::converged) {
                ++result.converged_starts;
                if (!best_converged || run.value < best_converged->value) {
                    best_converged = run;
                }
            }
        }
        if (best_converged) {
            best_so_far = std::max(best_so_far, -best_converged->value * static_cast<double>(data.size()));
        }
        result.best_trace.push_back(best_so_far);
        if (result.converged_starts >= config.min_starts) {
            break;
        }
    }
    if (!best_any) {
        throw EstimationFailure("objective was non-finite at every start");
    }
    const OptimizerResult& chosen = best_converged ? *best_converged : *best_any;
    result.status = best_converged ? FitStatus::converged : FitStatus::restart_exhausted;
    try {
        finalize_fit(result, data, config, chosen.x);
    } catch (const NumericalFailure&) {
        result.status = FitStatus::numerical_failure;
        result.unconstrained = chosen.x;
        return result;
    }
    if (config.compute_standard_errors && result.converged()) {
        wald_inference(result, data, config);
    }
    return result;
}

// ---------------------------------------------------------------------------
// Original-scale report

struct ReportRow {
    std::string name;
    double estimate = 0.0;
    double se = std::numeric_limits<double>::quiet_NaN();
    double ci_lower = std::numeric_limits<double>::quiet_NaN();
    double ci_upper = std::numeric_limits<double>::quiet_NaN();
    double p_value = std::numeric_limits<double>::quiet_NaN();
};

struct OddsRatioRow {
    int class_index = 0;      // 1-based
    int covariate = 0;        // 0 = intercept, 1.. = slopes
    bool reference = false;
    double odds_ratio = 1.0;
    double ci_lower = std::numeric_limits<double>::quiet_NaN();
    double ci_upper = std::numeric_limits<double>::quiet_NaN();
};

struct OriginalScaleReport {
    std::vector<ReportRow> parameters;
    std::vector<OddsRatioRow> odds_ratios;
    Vector mixing_proportions;
};

inline std::string format_fixed(double v, int digits = 3) {
    std::ostringstream os;
    os.imbue(std::locale::classic());
    os.setf(std::ios::fixed);
    os.precision(digits);
    os << v;
    return os.str();
}

/// "OR (95% CI)" cell; the reference class prints as dashes.
inline std::string format_odds_ratio(const OddsRatioRow& row) {
    if (row.reference) {
        return "---";
    }
    std::string s = format_fixed(row.odds_ratio);
    if (std::isfinite(row.ci_lower) && std::isfinite(row.ci_upper)) {
        s += " (" + format_fixed(row.ci_lower) + ", " + format_fixed(row.ci_upper) + ")";
        if (row.ci_lower > 1.0 || row.ci_upper < 1.0) {
            s += "*";
        }
    }
    return s;
}

inline OriginalScaleReport report_original_scale(const FitResult& fit) {
    OriginalScaleReport report;
    report.mixing_proportions = fit.mixing_proportions;
    const ParameterLayout layout = fit.layout();
    const Eigen::Index gating_at = layout.gating_offset();
    for (Eigen::Index i = 0; i < gating_at; ++i) {
        ReportRow row;
        row.name = fit.parameter_names[static_cast<std::size_t>(i)];
        row.estimate = fit.estimates[i];
        if (fit.se_available) {
            row.se = fit.standard_errors[i];
            row.ci_lower = fit.ci_lower[i];
            row.ci_upper = fit.ci_upper[i];
            row.p_value = std::erfc(std::abs(row.estimate / row.se) / std::sqrt(2.0));
        }
        report.parameters.push_back(row);
    }
    const Eigen::Index cols = layout.covariates() + 1;
    for (Eigen::Index c = 0; c < cols; ++c) {
        OddsRatioRow ref;
        ref.class_index = 1;
        ref.covariate = static_cast<int>(c);
        ref.reference = true;
        report.odds_ratios.push_back(ref);
        for (int k = 2; k <= fit.classes; ++k) {
            const Eigen::Index i = gating_at + (k - 2) * cols + c;
            OddsRatioRow row;
            row.class_index = k;
            row.covariate = static_cast<int>(c);
            row.odds_ratio = std::exp(fit.estimates[i]);
            if (fit.se_available) {
                row.ci_lower = std::exp(fit.ci_lower[i]);
                row.ci_upper = std::exp(fit.ci_upper[i]);
            }
            report.odds_ratios.push_back(row);
        }
    }
    if (fit.classes == 1) {
        report.odds_ratios.clear();
    }
    return report;
}

} // namespace pbgmm

#endif // PBGMM_ESTIMATION_HPP
