#ifndef PBGMM_MODEL_SELECTION_HPP
#define PBGMM_MODEL_SELECTION_HPP

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "pbgmm/errors.hpp"
#include "pbgmm/estimation.hpp"
#include "pbgmm/mixture_model.hpp"

namespace pbgmm {

/// Free parameters: 11 per class for one outcome, 32 for two, plus the
/// (K-1)(p+1) gating coefficients.
inline long parameter_count(int classes, int outcomes, long covariates) {
    if (classes < 1) {
        throw InvalidInput("class count must be positive");
    }
    if (outcomes != 1 && outcomes != 2) {
        throw InvalidInput("outcomes must be 1 or 2");
    }
    const long per_class = outcomes == 1 ? 11 : 32;
    return classes * per_class + (classes - 1) * (covariates + 1);
}

inline double aic(double minus_two_ll, long parameters) {
    return minus_two_ll + 2.0 * static_cast<double>(parameters);
}

/// `n` is the number of individuals.
inline double bic(double minus_two_ll, long parameters, std::size_t n) {
    return minus_two_ll + static_cast<double>(parameters) * std::log(static_cast<double>(n));
}

struct EnumerationRow {
    int classes = 1;
    FitStatus status = FitStatus::numerical_failure;
    long parameters = 0;
    std::size_t n = 0;
    double minus_two_ll = std::numeric_limits<double>::quiet_NaN();
    double aic = std::numeric_limits<double>::quiet_NaN();
    double bic = std::numeric_limits<double>::quiet_NaN();
    Vector proportions;
    bool selected = false;
    std::string message;
};

inline EnumerationRow enumeration_row(int classes, int outcomes, std::size_t n, double minus_two_ll) {
    EnumerationRow row;
    row.classes = classes;
    row.status = FitStatus::converged;
    row.n = n;
    row.parameters = parameter_count(classes, outcomes, 0);
    row.minus_two_ll = minus_two_ll;
    row.aic = aic(minus_two_ll, row.parameters);
    row.bic = bic(minus_two_ll, row.parameters, n);
    return row;
}

/// Marks the converged row with the smallest BIC.
inline void flag_bic_minimum(std::vector<EnumerationRow>& rows) {
    EnumerationRow* best = nullptr;
    for (EnumerationRow& r : rows) {
        r.selected = false;
        if (r.status == FitStatus::converged && (best == nullptr || r.bic < best->bic)) {
            best = &r;
        }
    }
    if (best != nullptr) {
        best->selected = true;
    }
}

/// Fits K = 1..kmax without covariates. Failed fits keep their status and no criteria.
inline std::vector<EnumerationRow> enumerate(const std::vector<Individual>& data, int kmax, const FitConfig& config) {
    if (kmax < 1) {
        throw InvalidInput("kmax must be at least 1");
    }
    std::vector<Individual> plain = data;
    for (Individual& ind : plain) {
        ind.x.resize(0);
    }
    FitConfig fc = config;
    fc.compute_standard_errors = false;
    std::vector<EnumerationRow> rows;
    for (int k = 1; k <= kmax; ++k) {
        EnumerationRow row;
        row.classes = k;
        row.n = plain.size();
        row.parameters = parameter_count(k, config.outcomes, 0);
        try {
            const FitResult f = fit(plain, k, fc);
            row.status = f.status;
            if (f.converged()) {
                row = enumeration_row(k, config.outcomes, plain.size(), -2.0 * f.log_likelihood);
                row.proportions = f.mixing_proportions;
            }
        } catch (const std::exception& e) {
            row.status = FitStatus::numerical_failure;
            row.message = e.what();
        }
        rows.push_back(row);
    }
    flag_bic_minimum(rows);
    return rows;
}

} // namespace pbgmm

#endif // PBGMM_MODEL_SELECTION_HPP
