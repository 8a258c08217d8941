#ifndef PBGMM_SIMULATION_HPP
#define PBGMM_SIMULATION_HPP

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <mutex>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "pbgmm/errors.hpp"
#include "pbgmm/estimation.hpp"
#include "pbgmm/mixture_model.hpp"
#include "pbgmm/parameter_vector.hpp"
#include "pbgmm/random.hpp"
#include "pbgmm/spline_kernel.hpp"

namespace pbgmm {

// ---------------------------------------------------------------------------
// Design grid

/// One cell of the manipulated design.
struct ConditionCell {
    int scenario = 1;
    double separation = 1.0;
    double beta0 = 0.0;
    double residual_var = 1.0;
    double rho = -0.3;
};

/// Generating parameters of one class on the original scale.
struct ClassTruth {
    std::array<GrowthFactorsOriginal, 2> means;
    std::array<double, 2> knot{0.0, 0.0};
    Matrix cov;                        // 6x6 original-scale growth-factor covariance
    double residual_var = 1.0;
    double residual_corr = 0.3;
};

struct SimulationCondition {
    ConditionCell cell;
    std::size_t n = 500;
    std::size_t waves = 10;
    double window = 0.25;
    Vector gating;                     // (beta0, beta1, beta2) for class 2
    std::vector<ClassTruth> classes;

    /// Truth as a fitted-model object (reparameterized scale).
    MixtureModel true_model() const {
        MixtureModel m;
        m.outcomes = 2;
        for (const ClassTruth& c : classes) {
            ClassParameters p;
            p.outcomes = 2;
            p.mean.resize(6);
            for (int u = 0; u < 2; ++u) {
                const GrowthFactorsReparam r = reparameterize(c.means[static_cast<std::size_t>(u)], c.knot[static_cast<std::size_t>(u)]);
                p.mean.segment<3>(3 * u) << r.knot_measurement, r.mean_slope, r.half_slope_diff;
            }
            p.cov = transform_covariance(c.cov, c.knot[0], c.knot[1], Direction::to_reparam);
            p.knot = c.knot;
            p.residual_var = {c.residual_var, c.residual_var};
            p.residual_cov = c.residual_corr * c.residual_var;
            m.classes.push_back(p);
        }
        m.gating.coef = classes.size() > 1 ? Matrix(gating.transpose()) : Matrix(0, gating.size());
        return m;
    }
};

inline bool on_grid(double v, std::initializer_list<double> allowed) {
    return std::any_of(allowed.begin(), allowed.end(), [v](double a) { return std::abs(v - a) < 1e-9; });
}

inline Matrix design_covariance(double rho) {
    const Eigen::Vector3d sd(5.0, 1.0, 1.0);
    Eigen::Matrix3d within = 0.3 * sd * sd.transpose();
    within.diagonal() = sd.cwiseProduct(sd);
    Matrix cov(6, 6);
    cov.topLeftCorner<3, 3>() = within;
    cov.bottomRightCorner<3, 3>() = within;
    cov.topRightCorner<3, 3>() = rho * sd * sd.transpose();
    cov.bottomLeftCorner<3, 3>() = cov.topRightCorner<3, 3>().transpose();
    return cov;
}

inline SimulationCondition build_condition(const ConditionCell& cell) {
    if (cell.scenario < 1 || cell.scenario > 3) {
        throw InvalidCondition("scenario must be 1, 2 or 3");
    }
    if (!on_grid(cell.separation, {0.5, 0.75, 1.0})) {
        throw InvalidCondition("knot separation must be 0.50, 0.75 or 1.00");
    }
    if (!on_grid(cell.beta0, {0.0, 0.775})) {
        throw InvalidCondition("allocation intercept must be 0 or 0.775");
    }
    if (!on_grid(cell.residual_var, {1.0, 2.0})) {
        throw InvalidCondition("residual variance must be 1 or 2");
    }
    if (!on_grid(cell.rho, {-0.3, 0.0, 0.3})) {
        throw InvalidCondition("between-construct correlation must be -0.3, 0 or 0.3");
    }
    SimulationCondition c;
    c.cell = cell;
    c.gating = Vector(3);
    c.gating << cell.beta0, std::log(1.5), std::log(1.7);

    const double y_late = 4.5;
    const double z_early = 4.5;
    const double y_early = y_late - cell.separation;
    const double z_late = z_early + cell.separation;

    ClassTruth c1;
    ClassTruth c2;
    c1.knot = {y_early, z_early};
    c2.knot = {y_late, z_late};
    c1.means[0] = {98.0, 5.0, 2.6};
    c2.means[0] = {102.0, 5.0, 2.6};
    switch (cell.scenario) {
    case 1:
        c1.means[1] = {98.0, 5.0, 2.6};
        c2.means[1] = {102.0, 5.0, 2.6};
        break;
    case 2:
        c1.means[1] = {100.0, 4.4, 2.0};
        c2.means[1] = {100.0, 3.6, 2.0};
        break;
    default:
        c1.means[1] = {100.0, 4.4, 2.0};
        c2.means[1] = {100.0, 4.4, 2.8};
        break;
    }
    for (ClassTruth* t : {&c1, &c2}) {
        t->cov = design_covariance(cell.rho);
        t->residual_var = cell.residual_var;
        t->residual_corr = 0.3;
    }
    c.classes = {c1, c2};
    return c;
}

inline Vector original_mean_vector(const ClassTruth& c, int outcomes = 2) {
    Vector v(3 * outcomes);
    for (int u = 0; u < outcomes; ++u) {
        const auto& g = c.means[static_cast<std::size_t>(u)];
        v.segment<3>(3 * u) << g.intercept, g.slope1, g.slope2;
    }
    return v;
}

inline double mahalanobis(const Vector& diff, const Matrix& cov) {
    return std::sqrt(diff.dot(cov.ldlt().solve(diff)));
}

/// Distance between the two classes' growth-factor means for one outcome.
inline double within_construct_distance(const SimulationCondition& c, Outcome outcome) {
    const int u = static_cast<int>(outcome);
    const Vector diff = original_mean_vector(c.classes[1]).segment<3>(3 * u) - original_mean_vector(c.classes[0]).segment<3>(3 * u);
    return mahalanobis(diff, c.classes[0].cov.block<3, 3>(3 * u, 3 * u));
}

inline double joint_distance(const SimulationCondition& c) {
    return mahalanobis(original_mean_vector(c.classes[1]) - original_mean_vector(c.classes[0]), c.classes[0].cov);
}

// ---------------------------------------------------------------------------
// Data generation

enum class AssignmentMode { multinomial, argmax };

inline const char* to_string(AssignmentMode m) { return m == AssignmentMode::multinomial ? "multinomial" : "argmax"; }

struct GeneratedDataset {
    std::vector<Individual> individuals;
    std::vector<int> true_class;     // 0-based, class 1 has the earlier y knot
    MixtureModel truth;              // reparameterized scale
    SimulationCondition condition;
    std::uint64_t seed = 0;
    AssignmentMode mode = AssignmentMode::multinomial;
};

/// Symmetric square root tolerant of singular (even zero) covariances.
inline Matrix covariance_root(const Matrix& cov) {
    Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
    const Vector ev = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return eig.eigenvectors() * ev.asDiagonal();
}

inline GeneratedDataset generate_dataset(const SimulationCondition& condition, std::uint64_t seed,
                                         AssignmentMode mode = AssignmentMode::multinomial) {
    GeneratedDataset ds;
    ds.condition = condition;
    ds.seed = seed;
    ds.mode = mode;
    ds.truth = condition.true_model();
    Rng rng = derive_rng(seed, 0xda7au);

    std::vector<Matrix> roots;
    for (const ClassTruth& c : condition.classes) {
        roots.push_back(covariance_root(c.cov));
    }
    const auto p = condition.gating.size() - 1;
    const auto k_count = static_cast<int>(condition.classes.size());
    ds.individuals.reserve(condition.n);
    ds.true_class.reserve(condition.n);
    for (std::size_t i = 0; i < condition.n; ++i) {
        Individual ind;
        ind.id = std::to_string(i + 1);
        ind.x.resize(p);
        for (Eigen::Index j = 0; j < p; ++j) {
            ind.x[j] = standard_normal(rng);
        }
        const Vector probs = gating_probabilities(ind.x, ds.truth.gating, k_count);
        int cls = 0;
        if (mode == AssignmentMode::multinomial) {
            double r = uniform(rng, 0.0, 1.0);
            cls = k_count - 1;
            for (int k = 0; k < k_count; ++k) {
                r -= probs[k];
                if (r < 0.0) {
                    cls = k;
                    break;
                }
            }
        } else {
            probs.maxCoeff(&cls);
        }
        const ClassTruth& truth = condition.classes[static_cast<std::size_t>(cls)];

        Vector z(6);
        for (Eigen::Index j = 0; j < 6; ++j) {
            z[j] = standard_normal(rng);
        }
        const Vector gf = original_mean_vector(truth) + roots[static_cast<std::size_t>(cls)] * z;

        std::vector<double> times(condition.waves);
        for (std::size_t j = 0; j < condition.waves; ++j) {
            const double wave = static_cast<double>(j);
            times[j] = uniform(rng, wave - condition.window, wave + condition.window);
        }
        ind.schedule = Schedule::complete(times);
        ind.y.resize(static_cast<Eigen::Index>(condition.waves));
        ind.z.resize(static_cast<Eigen::Index>(condition.waves));
        const GrowthFactorsOriginal gy{gf[0], gf[1], gf[2]};
        const GrowthFactorsOriginal gz{gf[3], gf[4], gf[5]};
        const double sd = std::sqrt(truth.residual_var);
        const double rc = truth.residual_corr;
        for (std::size_t j = 0; j < condition.waves; ++j) {
            const double e1 = standard_normal(rng);
            const double e2 = standard_normal(rng);
            const auto jj = static_cast<Eigen::Index>(j);
            ind.y[jj] = bilinear_value(gy, truth.knot[0], times[j]) + sd * e1;
            ind.z[jj] = bilinear_value(gz, truth.knot[1], times[j]) + sd * (rc * e1 + std::sqrt(1.0 - rc * rc) * e2);
        }
        ds.true_class.push_back(cls);
        ds.individuals.push_back(std::move(ind));
    }
    return ds;
}

/// Univariate truth for one outcome, classes reordered by that outcome's knot.
inline MixtureModel project_model(const MixtureModel& model, Outcome outcome, std::vector<int>* order = nullptr) {
    const int u = static_cast<int>(outcome);
    MixtureModel m;
    m.outcomes = 1;
    m.gating = model.gating;
    for (const ClassParameters& c : model.classes) {
        ClassParameters p;
        p.outcomes = 1;
        p.mean = c.mean.segment<3>(3 * u);
        p.cov = c.cov.block<3, 3>(3 * u, 3 * u);
        p.knot = {c.knot[static_cast<std::size_t>(u)], 0.0};
        p.residual_var = {c.residual_var[static_cast<std::size_t>(u)], 1.0};
        p.residual_cov = 0.0;
        m.classes.push_back(p);
    }
    return relabel_by_knot(m, order);
}

// ---------------------------------------------------------------------------
// Metrics

struct ParameterMetrics {
    std::string name;
    double truth = 0.0;
    double mean_estimate = 0.0;
    double bias = 0.0;
    double relative_bias = std::numeric_limits<double>::quiet_NaN();
    double empirical_se = std::numeric_limits<double>::quiet_NaN();
    double rmse = 0.0;
    double relative_rmse = std::numeric_limits<double>::quiet_NaN();
    double coverage = std::numeric_limits<double>::quiet_NaN();
    double mc_se_bias = std::numeric_limits<double>::quiet_NaN();
    std::size_t replications = 0;
    std::size_t coverage_replications = 0;
};

/// Performance metrics for one parameter. Intervals with NaN endpoints are
/// excluded from coverage only. Relative metrics are NaN when truth is 0.
inline ParameterMetrics compute_metrics(const std::string& name, double truth, const std::vector<double>& estimates,
                                        const std::vector<double>& lower = {}, const std::vector<double>& upper = {}) {
    ParameterMetrics m;
    m.name = name;
    m.truth = truth;
    const auto s = static_cast<double>(estimates.size());
    m.replications = estimates.size();
    if (estimates.empty()) {
        m.mean_estimate = std::numeric_limits<double>::quiet_NaN();
        m.bias = m.mean_estimate;
        m.rmse = m.mean_estimate;
        return m;
    }
    double sum = 0.0;
    double sq_err = 0.0;
    for (double e : estimates) {
        sum += e;
        sq_err += (e - truth) * (e - truth);
    }
    m.mean_estimate = sum / s;
    m.bias = m.mean_estimate - truth;
    m.rmse = std::sqrt(sq_err / s);
    if (estimates.size() > 1) {
        double ss = 0.0;
        for (double e : estimates) {
            ss += (e - m.mean_estimate) * (e - m.mean_estimate);
        }
        const double var = ss / (s - 1.0);
        m.empirical_se = std::sqrt(var);
        m.mc_se_bias = std::sqrt(var / s);
    }
    if (truth != 0.0) {
        m.relative_bias = m.bias / truth;
        m.relative_rmse = m.rmse / truth;
    }
    if (!lower.empty()) {
        std::size_t covered = 0;
        for (std::size_t r = 0; r < lower.size(); ++r) {
            if (std::isnan(lower[r]) || std::isnan(upper[r])) {
                continue;
            }
            ++m.coverage_replications;
            covered += lower[r] <= truth && truth <= upper[r] ? 1 : 0;
        }
        if (m.coverage_replications > 0) {
            m.coverage = static_cast<double>(covered) / static_cast<double>(m.coverage_replications);
        }
    }
    return m;
}

inline double accuracy(const std::vector<int>& predicted, const std::vector<int>& truth) {
    if (predicted.size() != truth.size() || truth.empty()) {
        throw InvalidInput("label vectors must be non-empty and of equal length");
    }
    std::size_t hit = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        hit += predicted[i] == truth[i] ? 1 : 0;
    }
    return static_cast<double>(hit) / static_cast<double>(truth.size());
}

// ---------------------------------------------------------------------------
// Studies

/// Which outcomes a study models.
enum class StudyView { joint, y_only, z_only };

inline const char* to_string(StudyView v) {
    switch (v) {
    case StudyView::joint: return "joint";
    case StudyView::y_only: return "y";
    case StudyView::z_only: return "z";
    }
    return "joint";
}

/// Data and truth as seen by one view; true labels follow the view's knot order.
struct ViewedData {
    std::vector<Individual> individuals;
    MixtureModel truth;
    std::vector<int> true_class;
};

inline ViewedData view_of(const GeneratedDataset& ds, StudyView view) {
    if (view == StudyView::joint) {
        return {ds.individuals, ds.truth, ds.true_class};
    }
    const Outcome o = view == StudyView::y_only ? Outcome::y : Outcome::z;
    ViewedData v;
    v.individuals = project_outcome(ds.individuals, o);
    std::vector<int> order;
    v.truth = project_model(ds.truth, o, &order);
    std::vector<int> rank(order.size());
    for (std::size_t k = 0; k < order.size(); ++k) {
        rank[static_cast<std::size_t>(order[k])] = static_cast<int>(k);
    }
    v.true_class.reserve(ds.true_class.size());
    for (int c : ds.true_class) {
        v.true_class.push_back(rank[static_cast<std::size_t>(c)]);
    }
    return v;
}

using Fitter = std::function<FitResult(const std::vector<Individual>&, int classes, const FitConfig&, const MixtureModel& truth)>;

inline FitResult default_fitter(const std::vector<Individual>& data, int classes, const FitConfig& config,
                                const MixtureModel& /*truth*/) {
    return fit(data, classes, config);
}

/// Returns the generating model as if it were the fit (zero-width intervals).
inline FitResult oracle_fitter(const std::vector<Individual>& data, int classes, const FitConfig& config,
                               const MixtureModel& truth) {
    FitResult r;
    r.status = FitStatus::converged;
    r.classes = classes;
    r.outcomes = truth.outcomes;
    r.covariates = classes > 1 ? truth.gating.coef.cols() - 1 : 0;
    r.n = data.size();
    r.knot_box = knot_box_for(data, config);
    r.starts = 1;
    r.converged_starts = 1;
    finalize_fit(r, data, config, encode(truth, r.layout()));
    // Report the truth itself, not its encode/decode roundtrip.
    r.estimates = reporting_values(truth, r.layout());
    r.standard_errors = Vector::Zero(r.estimates.size());
    r.ci_lower = r.estimates;
    r.ci_upper = r.estimates;
    r.se_available = true;
    return r;
}

struct ReplicationRecord {
    std::size_t attempt = 0;
    std::uint64_t seed = 0;
    bool converged = false;
    bool se_available = false;
    double log_likelihood = 0.0;
    double accuracy = std::numeric_limits<double>::quiet_NaN();
    Vector estimates;
    Vector ci_lower;
    Vector ci_upper;
};

struct MetricReport {
    std::string view = "joint";
    std::size_t requested = 0;
    std::size_t converged = 0;
    std::size_t attempts = 0;
    bool aborted = false;
    double convergence_rate = std::numeric_limits<double>::quiet_NaN();
    double mean_accuracy = std::numeric_limits<double>::quiet_NaN();
    std::vector<std::string> parameter_names;
    Vector truth;
    std::vector<ParameterMetrics> parameters;
    std::vector<ReplicationRecord> replications;   // converged, in attempt order
};

inline std::uint64_t replication_seed(std::uint64_t master, std::size_t attempt) {
    Rng rng = derive_rng(master, 0x5eedu, attempt);
    return rng();
}

/// Runs `task(attempt)` for attempts 0,1,2,... across `workers` threads until
/// `done(results)` holds for the in-order prefix or `limit` attempts ran.
/// Results are indexed by attempt, so the outcome does not depend on the
/// worker count.
template <class Result, class Task, class Done>
std::vector<Result> run_attempts(std::size_t limit, unsigned workers, Task task, Done done) {
    std::vector<Result> results(limit);
    std::vector<char> finished(limit, 0);
    std::mutex mu;
    std::atomic<std::size_t> next{0};
    std::atomic<bool> stop{false};
    auto worker = [&]() {
        while (!stop.load()) {
            const std::size_t a = next.fetch_add(1);
            if (a >= limit) {
                return;
            }
            Result r = task(a);
            std::lock_guard<std::mutex> lock(mu);
            results[a] = std::move(r);
            finished[a] = 1;
            std::size_t prefix = 0;
            while (prefix < limit && finished[prefix]) {
                ++prefix;
            }
            if (done(results, prefix)) {
                stop.store(true);
            }
        }
    };
    workers = std::max(1u, workers);
    if (workers == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (unsigned w = 0; w < workers; ++w) {
            pool.emplace_back(worker);
        }
        for (auto& t : pool) {
            t.join();
        }
    }
    std::size_t prefix = 0;
    while (prefix < limit && finished[prefix]) {
        ++prefix;
    }
    results.resize(prefix);
    return results;
}

struct StudyOptions {
    std::size_t replications = 100;      // converged replications required
    AssignmentMode mode = AssignmentMode::multinomial;
    StudyView view = StudyView::joint;
    unsigned workers = 1;
    std::uint64_t seed = 20220101;
    Fitter fitter = default_fitter;
};

inline ReplicationRecord run_replication(const SimulationCondition& condition, const FitConfig& base,
                                         const StudyOptions& options, std::size_t attempt) {
    ReplicationRecord rec;
    rec.attempt = attempt;
    rec.seed = replication_seed(options.seed, attempt);
    const GeneratedDataset ds = generate_dataset(condition, rec.seed, options.mode);
    const ViewedData v = view_of(ds, options.view);
    FitConfig config = base;
    config.seed = rec.seed;
    config.outcomes = options.view == StudyView::joint ? 2 : 1;
    try {
        const FitResult f = options.fitter(v.individuals, v.truth.class_count(), config, v.truth);
        rec.converged = f.converged();
        if (rec.converged) {
            rec.se_available = f.se_available;
            rec.log_likelihood = f.log_likelihood;
            rec.estimates = f.estimates;
            rec.ci_lower = f.ci_lower;
            rec.ci_upper = f.ci_upper;
            rec.accuracy = accuracy(f.modal_class, v.true_class);
        }
    } catch (const EstimationFailure&) {
        rec.converged = false;
    }
    return rec;
}

inline MetricReport summarize_study(const SimulationCondition& condition, const StudyOptions& options,
                                    const FitConfig& config, std::vector<ReplicationRecord> records) {
    MetricReport report;
    report.view = to_string(options.view);
    report.requested = options.replications;
    report.attempts = records.size();
    for (ReplicationRecord& r : records) {
        if (r.converged && report.converged < options.replications) {
            ++report.converged;
            report.replications.push_back(std::move(r));
        }
    }
    report.aborted = report.converged < options.replications;
    report.convergence_rate = report.attempts > 0 ? static_cast<double>(report.converged) / static_cast<double>(report.attempts)
                                                  : std::numeric_limits<double>::quiet_NaN();

    // Truth on the reporting scale of this view.
    const GeneratedDataset probe = generate_dataset(condition, replication_seed(options.seed, 0), options.mode);
    const ViewedData v = view_of(probe, options.view);
    FitConfig fc = config;
    fc.outcomes = v.truth.outcomes;
    const ParameterLayout layout(v.truth.class_count(), v.truth.outcomes,
                                 v.truth.class_count() > 1 ? v.truth.gating.coef.cols() - 1 : 0,
                                 knot_box_for(v.individuals, fc));
    report.parameter_names = reporting_names(layout);
    report.truth = reporting_values(v.truth, layout);

    double acc = 0.0;
    for (const ReplicationRecord& r : report.replications) {
        acc += r.accuracy;
    }
    if (!report.replications.empty()) {
        report.mean_accuracy = acc / static_cast<double>(report.replications.size());
    }
    for (std::size_t p = 0; p < report.parameter_names.size(); ++p) {
        std::vector<double> est;
        std::vector<double> lo;
        std::vector<double> hi;
        for (const ReplicationRecord& r : report.replications) {
            const auto i = static_cast<Eigen::Index>(p);
            est.push_back(r.estimates[i]);
            lo.push_back(r.se_available ? r.ci_lower[i] : std::numeric_limits<double>::quiet_NaN());
            hi.push_back(r.se_available ? r.ci_upper[i] : std::numeric_limits<double>::quiet_NaN());
        }
        report.parameters.push_back(compute_metrics(report.parameter_names[p], report.truth[static_cast<Eigen::Index>(p)], est, lo, hi));
    }
    return report;
}

/// Replicate-until-S-converged study. Stops (flagged as aborted) after 5*S attempts.
inline MetricReport run_study(const SimulationCondition& condition, const FitConfig& config, const StudyOptions& options) {
    if (options.replications < 1) {
        throw InvalidInput("study needs at least one replication");
    }
    const std::size_t limit = 5 * options.replications;
    auto task = [&](std::size_t a) { return run_replication(condition, config, options, a); };
    auto done = [&](const std::vector<ReplicationRecord>& rs, std::size_t prefix) {
        std::size_t c = 0;
        for (std::size_t i = 0; i < prefix; ++i) {
            c += rs[i].converged ? 1 : 0;
        }
        return c >= options.replications;
    };
    std::vector<ReplicationRecord> records = run_attempts<ReplicationRecord>(limit, options.workers, task, done);
    // Trim to the attempt that delivered the S-th converged replication.
    std::size_t c = 0;
    std::size_t keep = records.size();
    for (std::size_t i = 0; i < records.size(); ++i) {
        c += records[i].converged ? 1 : 0;
        if (c == options.replications) {
            keep = i + 1;
            break;
        }
    }
    records.resize(keep);
    return summarize_study(condition, options, config, std::move(records));
}

struct PairedAccuracy {
    std::size_t attempt = 0;
    std::uint64_t seed = 0;
    bool converged = false;
    double joint = std::numeric_limits<double>::quiet_NaN();
    double y_only = std::numeric_limits<double>::quiet_NaN();
    double z_only = std::numeric_limits<double>::quiet_NaN();
};

struct ComparisonReport {
    std::size_t requested = 0;
    std::size_t attempts = 0;
    bool aborted = false;
    std::vector<PairedAccuracy> rows;   // converged rows only
    double mean_joint = std::numeric_limits<double>::quiet_NaN();
    double mean_y = std::numeric_limits<double>::quiet_NaN();
    double mean_z = std::numeric_limits<double>::quiet_NaN();
    double diff_joint_y = std::numeric_limits<double>::quiet_NaN();
    double diff_joint_z = std::numeric_limits<double>::quiet_NaN();
};

/// Joint and both univariate models on the same generated data; a
/// replication counts only when all three converge.
inline ComparisonReport compare_joint_vs_univariate(const SimulationCondition& condition, const FitConfig& config,
                                                    const StudyOptions& options) {
    if (options.replications < 1) {
        throw InvalidInput("comparison needs at least one replication");
    }
    auto task = [&](std::size_t a) {
        PairedAccuracy row;
        row.attempt = a;
        StudyOptions o = options;
        o.view = StudyView::joint;
        const ReplicationRecord j = run_replication(condition, config, o, a);
        o.view = StudyView::y_only;
        const ReplicationRecord y = run_replication(condition, config, o, a);
        o.view = StudyView::z_only;
        const ReplicationRecord z = run_replication(condition, config, o, a);
        row.seed = j.seed;
        row.converged = j.converged && y.converged && z.converged;
        row.joint = j.accuracy;
        row.y_only = y.accuracy;
        row.z_only = z.accuracy;
        return row;
    };
    auto done = [&](const std::vector<PairedAccuracy>& rs, std::size_t prefix) {
        std::size_t c = 0;
        for (std::size_t i = 0; i < prefix; ++i) {
            c += rs[i].converged ? 1 : 0;
        }
        return c >= options.replications;
    };
    std::vector<PairedAccuracy> rows = run_attempts<PairedAccuracy>(5 * options.replications, options.workers, task, done);
    ComparisonReport report;
    report.requested = options.replications;
    double sj = 0.0;
    double sy = 0.0;
    double sz = 0.0;
    for (const PairedAccuracy& r : rows) {
        ++report.attempts;
        if (r.converged) {
            report.rows.push_back(r);
            sj += r.joint;
            sy += r.y_only;
            sz += r.z_only;
            if (report.rows.size() == options.replications) {
                break;
            }
        }
    }
    report.aborted = report.rows.size() < options.replications;
    if (!report.rows.empty()) {
        const auto s = static_cast<double>(report.rows.size());
        report.mean_joint = sj / s;
        report.mean_y = sy / s;
        report.mean_z = sz / s;
        report.diff_joint_y = report.mean_joint - report.mean_y;
        report.diff_joint_z = report.mean_joint - report.mean_z;
    }
    return report;
}

// ---------------------------------------------------------------------------
// Agreement

struct KappaResult {
    double kappa = 0.0;
    double se = 0.0;
    double ci_lower = 0.0;
    double ci_upper = 0.0;
    double observed_agreement = 0.0;
    double expected_agreement = 0.0;
};

/// Cohen's kappa with the Fleiss-Cohen-Everitt large-sample variance.
inline KappaResult cohen_kappa(const std::vector<int>& a, const std::vector<int>& b) {
    if (a.size() != b.size()) {
        throw InvalidInput("label vectors differ in length");
    }
    if (a.size() < 2) {
        throw InvalidInput("kappa needs at least two labelled units");
    }
    std::set<int> cats(a.begin(), a.end());
    const std::set<int> cats_a = cats;
    const std::set<int> cats_b(b.begin(), b.end());
    cats.insert(b.begin(), b.end());
    if (cats_a.size() == 1 && cats_b.size() == 1) {
        throw UndefinedKappa("each labelling uses a single category");
    }
    std::map<int, std::size_t> index;
    for (int c : cats) {
        index.emplace(c, index.size());
    }
    const auto m = static_cast<Eigen::Index>(cats.size());
    const double n = static_cast<double>(a.size());
    Matrix p = Matrix::Zero(m, m);
    for (std::size_t i = 0; i < a.size(); ++i) {
        p(static_cast<Eigen::Index>(index[a[i]]), static_cast<Eigen::Index>(index[b[i]])) += 1.0;
    }
    p /= n;
    const Vector row = p.rowwise().sum();
    const Vector col = p.colwise().sum().transpose();
    const double po = p.trace();
    const double pe = row.dot(col);
    if (!(pe < 1.0)) {
        throw UndefinedKappa("chance agreement is 1");
    }
    KappaResult r;
    r.observed_agreement = po;
    r.expected_agreement = pe;
    r.kappa = (po - pe) / (1.0 - pe);
    const double k = r.kappa;
    double t1 = 0.0;
    double t2 = 0.0;
    for (Eigen::Index i = 0; i < m; ++i) {
        const double w = 1.0 - (row[i] + col[i]) * (1.0 - k);
        t1 += p(i, i) * w * w;
        for (Eigen::Index j = 0; j < m; ++j) {
            if (i != j) {
                const double s = col[i] + row[j];
                t2 += p(i, j) * s * s;
            }
        }
    }
    t2 *= (1.0 - k) * (1.0 - k);
    const double t3 = (k - pe * (1.0 - k)) * (k - pe * (1.0 - k));
    const double var = std::max(t1 + t2 - t3, 0.0) / (n * (1.0 - pe) * (1.0 - pe));
    r.se = std::sqrt(var);
    constexpr double z975 = 1.959963984540054;
    r.ci_lower = k - z975 * r.se;
    r.ci_upper = k + z975 * r.se;
    return r;
}

} // namespace pbgmm

#endif // PBGMM_SIMULATION_HPP
