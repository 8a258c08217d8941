#ifndef PBGMM_PARAMETER_VECTOR_HPP
#define PBGMM_PARAMETER_VECTOR_HPP

// Unconstrained encoding of a mixture model and the reporting-scale view
// (original growth factors, knots, original-scale covariances, gating).
//
// Per class, in order:
//   reparameterized means                      3q
//   lower Cholesky factor of the joint cov     d(d+1)/2, diagonal on log scale
//   knots                                      q, logistic map into the knot box
//   residual variances                         q, log scale
//   residual correlation                       1 if q == 2, atanh scale
// then gating coefficients row by row, (K-1)(p+1).

#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pbgmm/errors.hpp"
#include "pbgmm/mixture_model.hpp"
#include "pbgmm/spline_kernel.hpp"

namespace pbgmm {

struct KnotBox {
    double lower = 0.0;
    double upper = 1.0;

    double width() const noexcept { return upper - lower; }
    bool contains(double knot) const noexcept { return knot > lower && knot < upper; }
};

inline double logistic(double u) {
    return u >= 0.0 ? 1.0 / (1.0 + std::exp(-u)) : std::exp(u) / (1.0 + std::exp(u));
}

class ParameterLayout {
public:
    ParameterLayout(int classes, int outcomes, Eigen::Index covariates, KnotBox box)
        : classes_(classes), outcomes_(outcomes), covariates_(covariates), box_(box) {
        if (classes < 1 || (outcomes != 1 && outcomes != 2) || covariates < 0) {
            throw InvalidInput("invalid parameter layout");
        }
        if (!(box.upper > box.lower)) {
            throw InvalidInput("empty knot box");
        }
    }

    int classes() const noexcept { return classes_; }
    int outcomes() const noexcept { return outcomes_; }
    Eigen::Index covariates() const noexcept { return covariates_; }
    const KnotBox& box() const noexcept { return box_; }

    Eigen::Index dim() const noexcept { return 3 * outcomes_; }
    Eigen::Index chol_size() const noexcept { return dim() * (dim() + 1) / 2; }
    Eigen::Index per_class() const noexcept {
        return dim() + chol_size() + 2 * outcomes_ + (outcomes_ == 2 ? 1 : 0);
    }
    Eigen::Index class_offset(int k) const noexcept { return per_class() * k; }
    Eigen::Index gating_offset() const noexcept { return per_class() * classes_; }
    Eigen::Index gating_size() const noexcept { return (classes_ - 1) * (covariates_ + 1); }
    Eigen::Index size() const noexcept { return gating_offset() + gating_size(); }

    /// Class owning coordinate i, or -1 for gating coordinates.
    int owner(Eigen::Index i) const noexcept {
        return i < gating_offset() ? static_cast<int>(i / per_class()) : -1;
    }

private:
    int classes_;
    int outcomes_;
    Eigen::Index covariates_;
    KnotBox box_;
};

inline Vector encode(const MixtureModel& model, const ParameterLayout& layout) {
    if (model.class_count() != layout.classes() || model.outcomes != layout.outcomes()) {
        throw InvalidInput("model does not match parameter layout");
    }
    Vector u(layout.size());
    const Eigen::Index d = layout.dim();
    const int q = layout.outcomes();
    for (int k = 0; k < layout.classes(); ++k) {
        const ClassParameters& c = model.classes[static_cast<std::size_t>(k)];
        Eigen::Index o = layout.class_offset(k);
        u.segment(o, d) = c.mean;
        o += d;
        Eigen::LLT<Matrix> llt(c.cov);
        if (llt.info() != Eigen::Success) {
            throw InvalidInput("class covariance is not positive definite");
        }
        const Matrix l = llt.matrixL();
        for (Eigen::Index i = 0; i < d; ++i) {
            for (Eigen::Index j = 0; j <= i; ++j) {
                u[o++] = i == j ? std::log(l(i, i)) : l(i, j);
            }
        }
        for (int v = 0; v < q; ++v) {
            const double frac = (c.knot[v] - layout.box().lower) / layout.box().width();
            if (!(frac > 0.0 && frac < 1.0)) {
                throw InvalidInput("knot lies outside the knot box");
            }
            u[o++] = std::log(frac / (1.0 - frac));
        }
        for (int v = 0; v < q; ++v) {
            u[o++] = std::log(c.residual_var[v]);
        }
        if (q == 2) {
            u[o++] = std::atanh(c.residual_cov / std::sqrt(c.residual_var[0] * c.residual_var[1]));
        }
    }
    if (model.gating.coef.rows() != layout.classes() - 1 ||
        (layout.classes() > 1 && model.gating.coef.cols() != layout.covariates() + 1)) {
        throw InvalidInput("gating coefficients do not match parameter layout");
    }
    Eigen::Index o = layout.gating_offset();
    for (Eigen::Index r = 0; r < model.gating.coef.rows(); ++r) {
        for (Eigen::Index c = 0; c < model.gating.coef.cols(); ++c) {
            u[o++] = model.gating.coef(r, c);
        }
    }
    return u;
}

inline Matrix cholesky_factor(const Vector& u, Eigen::Index offset, Eigen::Index d) {
    Matrix l = Matrix::Zero(d, d);
    Eigen::Index o = offset;
    for (Eigen::Index i = 0; i < d; ++i) {
        for (Eigen::Index j = 0; j <= i; ++j) {
            l(i, j) = i == j ? std::exp(u[o]) : u[o];
            ++o;
        }
    }
    return l;
}

inline ClassParameters decode_class(const Vector& u, const ParameterLayout& layout, int k) {
    const Eigen::Index d = layout.dim();
    const int q = layout.outcomes();
    ClassParameters c;
    c.outcomes = q;
    Eigen::Index o = layout.class_offset(k);
    c.mean = u.segment(o, d);
    o += d;
    const Matrix l = cholesky_factor(u, o, d);
    c.cov = l * l.transpose();
    o += layout.chol_size();
    for (int v = 0; v < q; ++v) {
        c.knot[v] = layout.box().lower + layout.box().width() * logistic(u[o++]);
    }
    for (int v = 0; v < q; ++v) {
        c.residual_var[v] = std::exp(u[o++]);
    }
    if (q == 2) {
        c.residual_cov = std::tanh(u[o++]) * std::sqrt(c.residual_var[0] * c.residual_var[1]);
    } else {
        c.knot[1] = 0.0;
        c.residual_var[1] = 1.0;
    }
    return c;
}

inline GatingParameters decode_gating(const Vector& u, const ParameterLayout& layout) {
    GatingParameters g = GatingParameters::zeros(layout.classes(), layout.covariates());
    Eigen::Index o = layout.gating_offset();
    for (Eigen::Index r = 0; r < g.coef.rows(); ++r) {
        for (Eigen::Index c = 0; c < g.coef.cols(); ++c) {
            g.coef(r, c) = u[o++];
        }
    }
    return g;
}

inline MixtureModel decode(const Vector& u, const ParameterLayout& layout) {
    if (u.size() != layout.size()) {
        throw InvalidInput("parameter vector length does not match layout");
    }
    MixtureModel m;
    m.outcomes = layout.outcomes();
    for (int k = 0; k < layout.classes(); ++k) {
        m.classes.push_back(decode_class(u, layout, k));
    }
    m.gating = decode_gating(u, layout);
    return m;
}

// ---------------------------------------------------------------------------
// Reporting scale

inline const char* outcome_tag(int u) { return u == 0 ? "y" : "z"; }

/// Names of reporting-scale parameters, aligned with reporting_values().
inline std::vector<std::string> reporting_names(const ParameterLayout& layout) {
    std::vector<std::string> names;
    const int q = layout.outcomes();
    const Eigen::Index d = layout.dim();
    for (int k = 0; k < layout.classes(); ++k) {
        const std::string cls = "c" + std::to_string(k + 1) + ".";
        for (int u = 0; u < q; ++u) {
            const std::string t = outcome_tag(u);
            names.push_back(cls + "mu_eta0[" + t + "]");
            names.push_back(cls + "mu_eta1[" + t + "]");
            names.push_back(cls + "mu_eta2[" + t + "]");
        }
        for (int u = 0; u < q; ++u) {
            names.push_back(cls + "knot[" + outcome_tag(u) + "]");
        }
        for (Eigen::Index i = 0; i < d; ++i) {
            for (Eigen::Index j = i; j < d; ++j) {
                const int ui = static_cast<int>(i / 3);
                const int uj = static_cast<int>(j / 3);
                const std::string block = ui == uj ? outcome_tag(ui) : "yz";
                names.push_back(cls + "psi" + std::to_string(i % 3) + std::to_string(j % 3) + "[" + block + "]");
            }
        }
        for (int u = 0; u < q; ++u) {
            names.push_back(cls + "theta[" + outcome_tag(u) + "]");
        }
        if (q == 2) {
            names.push_back(cls + "theta[yz]");
        }
    }
    for (int k = 1; k < layout.classes(); ++k) {
        const std::string cls = "c" + std::to_string(k + 1) + ".";
        names.push_back(cls + "beta0");
        for (Eigen::Index p = 0; p < layout.covariates(); ++p) {
            names.push_back(cls + "beta" + std::to_string(p + 1));
        }
    }
    return names;
}

inline Matrix original_covariance(const ClassParameters& c) {
    return transform_covariance(c.cov, c.knot[0], c.outcomes == 2 ? c.knot[1] : 0.0, Direction::to_original);
}

inline Vector reporting_values(const MixtureModel& model, const ParameterLayout& layout) {
    Vector v(layout.size());
    Eigen::Index o = 0;
    const int q = layout.outcomes();
    const Eigen::Index d = layout.dim();
    for (const ClassParameters& c : model.classes) {
        for (int u = 0; u < q; ++u) {
            const GrowthFactorsOriginal g = inverse_transform_mean(c.reparam_factors(u), c.knot[u]);
            v[o++] = g.intercept;
            v[o++] = g.slope1;
            v[o++] = g.slope2;
        }
        for (int u = 0; u < q; ++u) {
            v[o++] = c.knot[u];
        }
        const Matrix cov = original_covariance(c);
        for (Eigen::Index i = 0; i < d; ++i) {
            for (Eigen::Index j = i; j < d; ++j) {
                v[o++] = cov(i, j);
            }
        }
        for (int u = 0; u < q; ++u) {
            v[o++] = c.residual_var[u];
        }
        if (q == 2) {
            v[o++] = c.residual_cov;
        }
    }
    for (Eigen::Index r = 0; r < model.gating.coef.rows(); ++r) {
        for (Eigen::Index c = 0; c < model.gating.coef.cols(); ++c) {
            v[o++] = model.gating.coef(r, c);
        }
    }
    return v;
}

/// Analytic Jacobian d(reporting values) / d(unconstrained vector).
inline Matrix reporting_jacobian(const Vector& u, const ParameterLayout& layout) {
    const Eigen::Index n = layout.size();
    const Eigen::Index d = layout.dim();
    const int q = layout.outcomes();
    Matrix jac = Matrix::Zero(n, n);
    Eigen::Index row = 0;

    for (int k = 0; k < layout.classes(); ++k) {
        const Eigen::Index base = layout.class_offset(k);
        const Eigen::Index chol_at = base + d;
        const Eigen::Index knot_at = chol_at + layout.chol_size();
        const Eigen::Index var_at = knot_at + q;
        const Eigen::Index corr_at = var_at + q;

        std::array<double, 2> knot{0.0, 0.0};
        std::array<double, 2> dknot{0.0, 0.0};
        for (int v = 0; v < q; ++v) {
            const double s = logistic(u[knot_at + v]);
            knot[v] = layout.box().lower + layout.box().width() * s;
            dknot[v] = layout.box().width() * s * (1.0 - s);
        }

        // Means: eta0 = m0 - g m1 + g m2, eta1 = m1 - m2, eta2 = m1 + m2.
        for (int v = 0; v < q; ++v) {
            const Eigen::Index m = base + 3 * v;
            jac(row, m) = 1.0;
            jac(row, m + 1) = -knot[v];
            jac(row, m + 2) = knot[v];
            jac(row, knot_at + v) = (u[m + 2] - u[m + 1]) * dknot[v];
            jac(row + 1, m + 1) = 1.0;
            jac(row + 1, m + 2) = -1.0;
            jac(row + 2, m + 1) = 1.0;
            jac(row + 2, m + 2) = 1.0;
            row += 3;
        }
        for (int v = 0; v < q; ++v) {
            jac(row++, knot_at + v) = dknot[v];
        }

        // Covariance: C = Binv P Binv', P = L L'.
        const Matrix l = cholesky_factor(u, chol_at, d);
        const Matrix p = l * l.transpose();
        const Matrix binv = block_transform(d, knot[0], knot[1], Direction::to_original);
        std::vector<Matrix> dcov;
        std::vector<Eigen::Index> dcol;
        {
            Eigen::Index o = chol_at;
            for (Eigen::Index i = 0; i < d; ++i) {
                for (Eigen::Index j = 0; j <= i; ++j) {
                    Matrix e = Matrix::Zero(d, d);
                    e(i, j) = i == j ? l(i, i) : 1.0;
                    const Matrix dp = e * l.transpose() + l * e.transpose();
                    dcov.push_back(binv * dp * binv.transpose());
                    dcol.push_back(o++);
                }
            }
        }
        for (int v = 0; v < q; ++v) {
            Matrix dbinv = Matrix::Zero(d, d);
            dbinv(3 * v, 3 * v + 1) = -1.0;
            dbinv(3 * v, 3 * v + 2) = 1.0;
            const Matrix dc = dbinv * p * binv.transpose() + binv * p * dbinv.transpose();
            dcov.push_back(dc * dknot[v]);
            dcol.push_back(knot_at + v);
        }
        for (Eigen::Index i = 0; i < d; ++i) {
            for (Eigen::Index j = i; j < d; ++j) {
                for (std::size_t t = 0; t < dcov.size(); ++t) {
                    jac(row, dcol[t]) += dcov[t](i, j);
                }
                ++row;
            }
        }

        std::array<double, 2> var{1.0, 1.0};
        for (int v = 0; v < q; ++v) {
            var[v] = std::exp(u[var_at + v]);
            jac(row++, var_at + v) = var[v];
        }
        if (q == 2) {
            const double r = std::tanh(u[corr_at]);
            const double sd = std::sqrt(var[0] * var[1]);
            jac(row, corr_at) = (1.0 - r * r) * sd;
            jac(row, var_at) = 0.5 * r * sd;
            jac(row, var_at + 1) = 0.5 * r * sd;
            ++row;
        }
    }
    for (Eigen::Index g = layout.gating_offset(); g < n; ++g) {
        jac(row++, g) = 1.0;
    }
    return jac;
}

} // namespace pbgmm

#endif // PBGMM_PARAMETER_VECTOR_HPP
