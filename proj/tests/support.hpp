#ifndef PBGMM_TESTS_SUPPORT_HPP
#define PBGMM_TESTS_SUPPORT_HPP

// Independent reference implementations for the tests. Everything here is
// written with plain loops over std::vector on the original growth-factor
// scale, so it shares no code path with the library's reparameterized,
// Woodbury-based evaluation.

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>
#include <vector>

#include "pbgmm.hpp"

namespace oracle {

using Mat = std::vector<std::vector<double>>;

inline Mat zeros(std::size_t r, std::size_t c) { return Mat(r, std::vector<double>(c, 0.0)); }

inline Mat from_eigen(const Eigen::MatrixXd& m) {
    Mat out = zeros(static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols()));
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            out[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = m(i, j);
        }
    }
    return out;
}

/// Original-scale (intercept, slope1, slope2) from (knot value, mean slope, half difference).
inline std::vector<double> original_means(const std::vector<double>& r, double knot) {
    const double s1 = r[1] - r[2];
    const double s2 = r[1] + r[2];
    return {r[0] - knot * s1, s1, s2};
}

/// Lower-triangular Cholesky factor by the textbook recurrence; throws if not PD.
inline Mat cholesky(const Mat& a) {
    const std::size_t n = a.size();
    Mat l = zeros(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double s = a[i][j];
            for (std::size_t k = 0; k < j; ++k) {
                s -= l[i][k] * l[j][k];
            }
            if (i == j) {
                if (!(s > 0.0)) {
                    throw std::runtime_error("oracle: not positive definite");
                }
                l[i][i] = std::sqrt(s);
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    return l;
}

inline double normal_log_density(const std::vector<double>& v, const std::vector<double>& mean, const Mat& cov) {
    const std::size_t n = v.size();
    const Mat l = cholesky(cov);
    std::vector<double> w(n);
    for (std::size_t i = 0; i < n; ++i) {
        double s = v[i] - mean[i];
        for (std::size_t k = 0; k < i; ++k) {
            s -= l[i][k] * w[k];
        }
        w[i] = s / l[i][i];
    }
    double quad = 0.0;
    double logdet = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        quad += w[i] * w[i];
        logdet += 2.0 * std::log(l[i][i]);
    }
    return -0.5 * (static_cast<double>(n) * std::log(2.0 * M_PI) + logdet + quad);
}

struct Entry {
    int outcome;
    double t;
    std::size_t occasion;
    double value;
};

inline std::vector<Entry> observed_entries(const pbgmm::Individual& ind) {
    std::vector<Entry> e;
    for (int u = 0; u < 2; ++u) {
        for (std::size_t j = 0; j < ind.schedule.size(); ++j) {
            const bool seen = u == 0 ? ind.schedule.observed_y[j] : ind.schedule.observed_z[j];
            if (seen) {
                const double v = u == 0 ? ind.y[static_cast<Eigen::Index>(j)] : ind.z[static_cast<Eigen::Index>(j)];
                e.push_back({u, ind.schedule.times[j], j, v});
            }
        }
    }
    return e;
}

/// Mean and covariance of the observed entries, assembled from
/// original-scale loadings (1, min(t, knot), max(t - knot, 0)).
inline void moments(const pbgmm::ClassParameters& c, const std::vector<Entry>& e, std::vector<double>& mean, Mat& cov) {
    const int q = c.outcomes;
    // Original-scale covariance: rows eta = A eta' with A per outcome.
    Mat a = zeros(static_cast<std::size_t>(3 * q), static_cast<std::size_t>(3 * q));
    std::vector<std::vector<double>> means(static_cast<std::size_t>(q));
    for (int u = 0; u < q; ++u) {
        const double g = c.knot[static_cast<std::size_t>(u)];
        const std::size_t o = static_cast<std::size_t>(3 * u);
        a[o][o] = 1.0;
        a[o][o + 1] = -g;
        a[o][o + 2] = g;
        a[o + 1][o + 1] = 1.0;
        a[o + 1][o + 2] = -1.0;
        a[o + 2][o + 1] = 1.0;
        a[o + 2][o + 2] = 1.0;
        std::vector<double> r{c.mean[3 * u], c.mean[3 * u + 1], c.mean[3 * u + 2]};
        means[static_cast<std::size_t>(u)] = original_means(r, g);
    }
    const Mat psi_r = from_eigen(c.cov);
    const std::size_t d = psi_r.size();
    Mat psi = zeros(d, d);
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < d; ++k) {
                for (std::size_t l = 0; l < d; ++l) {
                    s += a[i][k] * psi_r[k][l] * a[j][l];
                }
            }
            psi[i][j] = s;
        }
    }
    const std::size_t m = e.size();
    mean.assign(m, 0.0);
    cov = zeros(m, m);
    auto loading = [&](const Entry& x) {
        const double g = c.knot[static_cast<std::size_t>(x.outcome)];
        return std::vector<double>{1.0, std::min(x.t, g), std::max(x.t - g, 0.0)};
    };
    for (std::size_t i = 0; i < m; ++i) {
        const std::vector<double> li = loading(e[i]);
        const auto& mu = means[static_cast<std::size_t>(e[i].outcome)];
        mean[i] = li[0] * mu[0] + li[1] * mu[1] + li[2] * mu[2];
        for (std::size_t j = 0; j < m; ++j) {
            const std::vector<double> lj = loading(e[j]);
            double s = 0.0;
            for (std::size_t r = 0; r < 3; ++r) {
                for (std::size_t k = 0; k < 3; ++k) {
                    s += li[r] * psi[static_cast<std::size_t>(3 * e[i].outcome) + r][static_cast<std::size_t>(3 * e[j].outcome) + k] * lj[k];
                }
            }
            if (e[i].occasion == e[j].occasion) {
                if (e[i].outcome == e[j].outcome) {
                    s += c.residual_var[static_cast<std::size_t>(e[i].outcome)];
                } else {
                    s += c.residual_cov;
                }
            }
            cov[i][j] = s;
        }
    }
}

inline double class_log_density(const pbgmm::Individual& ind, const pbgmm::ClassParameters& c) {
    const std::vector<Entry> e = observed_entries(ind);
    std::vector<double> v;
    for (const Entry& x : e) {
        v.push_back(x.value);
    }
    std::vector<double> mean;
    Mat cov;
    moments(c, e, mean, cov);
    return normal_log_density(v, mean, cov);
}

inline std::vector<double> log_priors(const pbgmm::MixtureModel& m, const pbgmm::Individual& ind) {
    const std::size_t k_count = m.classes.size();
    std::vector<double> eta(k_count, 0.0);
    for (std::size_t k = 1; k < k_count; ++k) {
        double s = m.gating.coef(static_cast<Eigen::Index>(k - 1), 0);
        for (Eigen::Index c = 0; c < ind.x.size(); ++c) {
            s += m.gating.coef(static_cast<Eigen::Index>(k - 1), c + 1) * ind.x[c];
        }
        eta[k] = s;
    }
    const double mx = *std::max_element(eta.begin(), eta.end());
    double z = 0.0;
    for (double v : eta) {
        z += std::exp(v - mx);
    }
    for (double& v : eta) {
        v = v - mx - std::log(z);
    }
    return eta;
}

inline double total_log_likelihood(const pbgmm::MixtureModel& m, const std::vector<pbgmm::Individual>& data) {
    double total = 0.0;
    for (const pbgmm::Individual& ind : data) {
        const std::vector<double> lp = log_priors(m, ind);
        std::vector<double> terms;
        for (std::size_t k = 0; k < m.classes.size(); ++k) {
            terms.push_back(lp[k] + oracle::class_log_density(ind, m.classes[k]));
        }
        const double mx = *std::max_element(terms.begin(), terms.end());
        double s = 0.0;
        for (double t : terms) {
            s += std::exp(t - mx);
        }
        total += mx + std::log(s);
    }
    return total;
}

// ---------------------------------------------------------------------------
// Random instances

inline Eigen::MatrixXd random_pd(std::mt19937_64& rng, Eigen::Index d, double scale = 1.0) {
    std::normal_distribution<double> n01(0.0, 1.0);
    Eigen::MatrixXd a(d, d);
    for (Eigen::Index i = 0; i < d; ++i) {
        for (Eigen::Index j = 0; j < d; ++j) {
            a(i, j) = n01(rng);
        }
    }
    Eigen::MatrixXd m = scale * (a * a.transpose() / static_cast<double>(d)) + 0.5 * scale * Eigen::MatrixXd::Identity(d, d);
    return 0.5 * (m + m.transpose());
}

inline pbgmm::ClassParameters random_class(std::mt19937_64& rng, int outcomes) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    pbgmm::ClassParameters c;
    c.outcomes = outcomes;
    c.mean = Eigen::VectorXd(3 * outcomes);
    for (Eigen::Index i = 0; i < c.mean.size(); ++i) {
        c.mean[i] = 3.0 * u(rng);
    }
    c.cov = random_pd(rng, 3 * outcomes);
    c.knot = {1.5 + u(rng), 1.5 + u(rng)};
    c.residual_var = {1.25 + 0.75 * u(rng), 1.25 + 0.75 * u(rng)};
    c.residual_cov = outcomes == 2 ? 0.5 * u(rng) * std::sqrt(c.residual_var[0] * c.residual_var[1]) : 0.0;
    return c;
}

inline pbgmm::MixtureModel random_model(std::mt19937_64& rng, int classes, int outcomes, Eigen::Index covariates) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    pbgmm::MixtureModel m;
    m.outcomes = outcomes;
    for (int k = 0; k < classes; ++k) {
        m.classes.push_back(random_class(rng, outcomes));
    }
    m.gating.coef = Eigen::MatrixXd(classes - 1, covariates + 1);
    for (Eigen::Index i = 0; i < m.gating.coef.size(); ++i) {
        m.gating.coef.data()[i] = u(rng);
    }
    return m;
}

/// Random individual with J occasions in [0, 3] and random masks (at least one entry observed).
inline pbgmm::Individual random_individual(std::mt19937_64& rng, std::size_t j_count, int outcomes, Eigen::Index covariates,
                                           bool allow_missing = true) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> n01(0.0, 1.0);
    pbgmm::Individual ind;
    ind.id = std::to_string(rng() % 100000);
    std::vector<double> t;
    double cur = 0.0;
    for (std::size_t j = 0; j < j_count; ++j) {
        cur += 0.2 + u(rng);
        t.push_back(cur);
    }
    ind.schedule = pbgmm::Schedule::complete(t);
    if (outcomes == 1) {
        ind.schedule.observed_z.assign(j_count, false);
    }
    if (allow_missing) {
        for (std::size_t j = 0; j < j_count; ++j) {
            if (u(rng) < 0.25) {
                ind.schedule.observed_y[j] = false;
            }
            if (outcomes == 2 && u(rng) < 0.25) {
                ind.schedule.observed_z[j] = false;
            }
        }
        if (ind.schedule.observed_count() == 0) {
            ind.schedule.observed_y[0] = true;
        }
    }
    ind.y = Eigen::VectorXd(static_cast<Eigen::Index>(j_count));
    ind.z = Eigen::VectorXd(static_cast<Eigen::Index>(j_count));
    for (std::size_t j = 0; j < j_count; ++j) {
        const auto jj = static_cast<Eigen::Index>(j);
        ind.y[jj] = ind.schedule.observed_y[j] ? 2.0 * n01(rng) : std::nan("");
        ind.z[jj] = ind.schedule.observed_z[j] ? 2.0 * n01(rng) : std::nan("");
    }
    ind.x = Eigen::VectorXd(covariates);
    for (Eigen::Index c = 0; c < covariates; ++c) {
        ind.x[c] = n01(rng);
    }
    return ind;
}

} // namespace oracle

#endif // PBGMM_TESTS_SUPPORT_HPP
