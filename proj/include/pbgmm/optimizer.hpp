#ifndef PBGMM_OPTIMIZER_HPP
#define PBGMM_OPTIMIZER_HPP

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Dense>

namespace pbgmm {

struct OptimizerOptions {
    double gradient_tol = 1e-5;   // infinity norm of the gradient
    double relative_tol = 1e-10;  // |f_k - f_{k-1}| / max(|f_{k-1}|, 1)
    int max_iterations = 3000;
};

enum class OptimizerStatus { converged, max_iterations, line_search_failed, non_finite_start };

struct OptimizerResult {
    Eigen::VectorXd x;
    double value = std::numeric_limits<double>::infinity();
    Eigen::VectorXd gradient;
    int iterations = 0;
    OptimizerStatus status = OptimizerStatus::non_finite_start;
};

/// Central-difference gradient with relative step `rel_step`.
template <class F>
Eigen::VectorXd central_gradient(F&& f, const Eigen::VectorXd& x, double rel_step = 1e-5) {
    Eigen::VectorXd g(x.size());
    Eigen::VectorXd probe = x;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double h = rel_step * std::max(1.0, std::abs(x[i]));
        probe[i] = x[i] + h;
        const double up = f(probe);
        probe[i] = x[i] - h;
        const double down = f(probe);
        probe[i] = x[i];
        g[i] = (up - down) / (2.0 * h);
    }
    return g;
}

/// Quasi-Newton (BFGS, inverse-Hessian form) minimizer with a backtracking
/// Armijo line search. `Objective` provides
///   double value(const VectorXd&)                       (+inf when undefined)
///   VectorXd gradient(const VectorXd&, double value_at_x)
template <class Objective>
OptimizerResult minimize_bfgs(Objective& objective, const Eigen::VectorXd& start, const OptimizerOptions& options) {
    using Eigen::VectorXd;
    const Eigen::Index n = start.size();
    OptimizerResult result;
    result.x = start;
    result.value = objective.value(start);
    if (!std::isfinite(result.value)) {
        result.status = OptimizerStatus::non_finite_start;
        return result;
    }
    result.gradient = objective.gradient(result.x, result.value);

    Eigen::MatrixXd h_inv = Eigen::MatrixXd::Identity(n, n);
    bool fresh_metric = true;
    double last_change = std::numeric_limits<double>::infinity();

    for (int iter = 0; iter < options.max_iterations; ++iter) {
        result.iterations = iter;
        const double gnorm = result.gradient.cwiseAbs().maxCoeff();
        const double rel_change = last_change / std::max(std::abs(result.value), 1.0);
        if (gnorm <= options.gradient_tol && rel_change <= options.relative_tol) {
            result.status = OptimizerStatus::converged;
            return result;
        }

        VectorXd dir = -(h_inv * result.gradient);
        double slope = dir.dot(result.gradient);
        if (!(slope < 0.0)) {
            h_inv.setIdentity();
            fresh_metric = true;
            dir = -result.gradient;
            slope = dir.dot(result.gradient);
        }
        double alpha = 1.0;
        if (fresh_metric) {
            alpha = std::min(1.0, 1.0 / std::max(gnorm, 1e-12));
        }

        double f_new = std::numeric_limits<double>::infinity();
        VectorXd x_new;
        bool accepted = false;
        for (int ls = 0; ls < 60; ++ls) {
            x_new = result.x + alpha * dir;
            f_new = objective.value(x_new);
            if (std::isfinite(f_new) && f_new <= result.value + 1e-4 * alpha * slope) {
                accepted = true;
                break;
            }
            double next = 0.5 * alpha;
            if (std::isfinite(f_new)) {
                const double denom = 2.0 * (f_new - result.value - alpha * slope);
                if (denom > 0.0) {
                    next = std::clamp(-slope * alpha * alpha / denom, 0.1 * alpha, 0.5 * alpha);
                }
            }
            alpha = next;
        }
        if (!accepted) {
            if (!fresh_metric) {
                h_inv.setIdentity();
                fresh_metric = true;
                continue;
            }
            result.status = gnorm <= options.gradient_tol ? OptimizerStatus::converged
                                                          : OptimizerStatus::line_search_failed;
            return result;
        }

        const VectorXd g_new = objective.gradient(x_new, f_new);
        const VectorXd s = x_new - result.x;
        const VectorXd y = g_new - result.gradient;
        const double sy = s.dot(y);
        if (sy > 1e-12 * s.norm() * y.norm()) {
            if (fresh_metric) {
                h_inv *= sy / y.dot(y);
                fresh_metric = false;
            }
            const double rho = 1.0 / sy;
            const VectorXd hy = h_inv * y;
            h_inv += ((sy + y.dot(hy)) * rho * rho) * (s * s.transpose()) - rho * (hy * s.transpose() + s * hy.transpose());
        }
        last_change = std::abs(result.value - f_new);
        result.x = x_new;
        result.value = f_new;
        result.gradient = g_new;
    }
    result.iterations = options.max_iterations;
    result.status = OptimizerStatus::max_iterations;
    return result;
}

} // namespace pbgmm

#endif // PBGMM_OPTIMIZER_HPP
