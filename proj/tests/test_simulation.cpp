#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "pbgmm.hpp"
#include "support.hpp"

using namespace pbgmm;

namespace {

ConditionCell cell(double rho = -0.3, double beta0 = 0.0, int scenario = 1, double separation = 1.0) {
    return {scenario, separation, beta0, 1.0, rho};
}

/// Mahalanobis distance by scalar Cholesky and forward substitution.
double scalar_mahalanobis(const std::vector<double>& d, const oracle::Mat& cov) {
    const oracle::Mat l = oracle::cholesky(cov);
    std::vector<double> w(d.size());
    double s = 0.0;
    for (std::size_t i = 0; i < d.size(); ++i) {
        double v = d[i];
        for (std::size_t k = 0; k < i; ++k) {
            v -= l[i][k] * w[k];
        }
        w[i] = v / l[i][i];
        s += w[i] * w[i];
    }
    return std::sqrt(s);
}

/// Growth-factor covariance built entry by entry from the design description.
oracle::Mat design_cov(double rho) {
    const double sd[6] = {5.0, 1.0, 1.0, 5.0, 1.0, 1.0};
    oracle::Mat c = oracle::zeros(6, 6);
    for (int i = 0; i < 6; ++i) {
        for (int j = 0; j < 6; ++j) {
            const bool same_outcome = (i < 3) == (j < 3);
            const double r = i == j ? 1.0 : (same_outcome ? 0.3 : rho);
            c[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = r * sd[i] * sd[j];
        }
    }
    return c;
}

double class_two_share(const GeneratedDataset& ds) {
    double s = 0.0;
    for (int c : ds.true_class) {
        s += c == 1 ? 1.0 : 0.0;
    }
    return s / static_cast<double>(ds.true_class.size());
}

/// Least-squares growth factors of one outcome from noise-free data.
Eigen::Vector3d recover_factors(const Individual& ind, const Vector& values, double knot) {
    const auto j = static_cast<Eigen::Index>(ind.schedule.size());
    Eigen::MatrixXd a(j, 3);
    for (Eigen::Index r = 0; r < j; ++r) {
        const double t = ind.schedule.times[static_cast<std::size_t>(r)];
        a(r, 0) = 1.0;
        a(r, 1) = std::min(t, knot);
        a(r, 2) = std::max(t - knot, 0.0);
    }
    return a.colPivHouseholderQr().solve(values);
}

/// Generated growth factors recovered per class from a residual-free dataset.
std::array<std::vector<Vector>, 2> recovered_factors(double rho, std::size_t n, std::uint64_t seed) {
    SimulationCondition c = build_condition(cell(rho));
    c.n = n;
    for (ClassTruth& t : c.classes) {
        t.residual_var = 0.0;
    }
    const GeneratedDataset ds = generate_dataset(c, seed);
    std::array<std::vector<Vector>, 2> out;
    for (std::size_t i = 0; i < ds.individuals.size(); ++i) {
        const int k = ds.true_class[i];
        const ClassTruth& t = c.classes[static_cast<std::size_t>(k)];
        Vector g(6);
        g.head<3>() = recover_factors(ds.individuals[i], ds.individuals[i].y, t.knot[0]);
        g.tail<3>() = recover_factors(ds.individuals[i], ds.individuals[i].z, t.knot[1]);
        out[static_cast<std::size_t>(k)].push_back(g);
    }
    return out;
}

Vector sample_mean(const std::vector<Vector>& xs) {
    Vector m = Vector::Zero(xs.front().size());
    for (const Vector& x : xs) {
        m += x;
    }
    return m / static_cast<double>(xs.size());
}

Matrix sample_cov(const std::vector<Vector>& xs) {
    const Vector m = sample_mean(xs);
    Matrix c = Matrix::Zero(m.size(), m.size());
    for (const Vector& x : xs) {
        c += (x - m) * (x - m).transpose();
    }
    return c / static_cast<double>(xs.size() - 1);
}

FitResult failing_fitter(const std::vector<Individual>&, int, const FitConfig&, const MixtureModel&) {
    throw EstimationFailure("never converges");
}

} // namespace

// ---------------------------------------------------------------------------
// Design

TEST(Design, WithinConstructDistance) {
    const SimulationCondition c = build_condition(cell());
    EXPECT_NEAR(within_construct_distance(c, Outcome::y), 0.86, 0.01);
    EXPECT_NEAR(within_construct_distance(c, Outcome::z), 0.86, 0.01);
}

TEST(Design, JointDistances) {
    EXPECT_NEAR(joint_distance(build_condition(cell(0.0))), 1.22, 0.01);
    EXPECT_NEAR(joint_distance(build_condition(cell(0.3))), 1.18, 0.01);
    EXPECT_NEAR(joint_distance(build_condition(cell(-0.3))), 1.35, 0.01);
}

TEST(Design, DistancesMatchScalarOracle) {
    // Scenario-1 mean difference: intercepts differ by 4 in both outcomes.
    const std::vector<double> d{4.0, 0.0, 0.0, 4.0, 0.0, 0.0};
    for (double rho : {-0.3, 0.0, 0.3}) {
        const SimulationCondition c = build_condition(cell(rho));
        EXPECT_NEAR(joint_distance(c), scalar_mahalanobis(d, design_cov(rho)), 1e-12);
        const oracle::Mat cov = design_cov(rho);
        const oracle::Mat block{{cov[0][0], cov[0][1], cov[0][2]}, {cov[1][0], cov[1][1], cov[1][2]}, {cov[2][0], cov[2][1], cov[2][2]}};
        EXPECT_NEAR(within_construct_distance(c, Outcome::y), scalar_mahalanobis({4.0, 0.0, 0.0}, block), 1e-12);
    }
}

TEST(Design, CrossBlockIsRhoTimesSds) {
    for (double rho : {-0.3, 0.0, 0.3}) {
        const oracle::Mat want = design_cov(rho);
        const Matrix got = build_condition(cell(rho)).classes[0].cov;
        for (int i = 0; i < 6; ++i) {
            for (int j = 0; j < 6; ++j) {
                EXPECT_NEAR(got(i, j), want[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)], 1e-14);
            }
        }
    }
}

TEST(Design, EveryGridCellIsPositiveDefinite) {
    for (int s = 1; s <= 3; ++s) {
        for (double sep : {0.5, 0.75, 1.0}) {
            for (double b0 : {0.0, 0.775}) {
                for (double rv : {1.0, 2.0}) {
                    for (double rho : {-0.3, 0.0, 0.3}) {
                        const SimulationCondition c = build_condition({s, sep, b0, rv, rho});
                        ASSERT_EQ(c.classes.size(), 2U);
                        EXPECT_TRUE(c.gating.allFinite());
                        for (const ClassTruth& t : c.classes) {
                            EXPECT_GT(Eigen::SelfAdjointEigenSolver<Matrix>(t.cov).eigenvalues().minCoeff(), 0.0);
                        }
                        for (const ClassParameters& p : c.true_model().classes) {
                            EXPECT_EQ(Eigen::LLT<Matrix>(p.cov).info(), Eigen::Success);
                        }
                        EXPECT_NEAR(c.classes[1].knot[0] - c.classes[0].knot[0], sep, 1e-12);
                        EXPECT_NEAR(c.classes[1].knot[1] - c.classes[0].knot[1], sep, 1e-12);
                    }
                }
            }
        }
    }
}

TEST(Design, OffGridDescriptorsThrow) {
    EXPECT_THROW(build_condition({4, 1.0, 0.0, 1.0, -0.3}), InvalidCondition);
    EXPECT_THROW(build_condition({1, 0.6, 0.0, 1.0, -0.3}), InvalidCondition);
    EXPECT_THROW(build_condition({1, 1.0, 0.5, 1.0, -0.3}), InvalidCondition);
    EXPECT_THROW(build_condition({1, 1.0, 0.0, 1.5, -0.3}), InvalidCondition);
    EXPECT_THROW(build_condition({1, 1.0, 0.0, 1.0, 0.1}), InvalidCondition);
}

// ---------------------------------------------------------------------------
// Generator

TEST(Generator, DeterministicForSeed) {
    SimulationCondition c = build_condition(cell());
    c.n = 50;
    const GeneratedDataset a = generate_dataset(c, 99);
    const GeneratedDataset b = generate_dataset(c, 99);
    const GeneratedDataset other = generate_dataset(c, 100);
    ASSERT_EQ(a.individuals.size(), 50U);
    EXPECT_EQ(a.true_class, b.true_class);
    bool differs = false;
    for (std::size_t i = 0; i < a.individuals.size(); ++i) {
        EXPECT_EQ(a.individuals[i].id, b.individuals[i].id);
        EXPECT_EQ(a.individuals[i].schedule.times, b.individuals[i].schedule.times);
        EXPECT_TRUE(a.individuals[i].y == b.individuals[i].y);
        EXPECT_TRUE(a.individuals[i].z == b.individuals[i].z);
        EXPECT_TRUE(a.individuals[i].x == b.individuals[i].x);
        differs = differs || !(a.individuals[i].y == other.individuals[i].y);
    }
    EXPECT_TRUE(differs);
}

TEST(Generator, OccasionsAndOutcomesAreWellFormed) {
    SimulationCondition c = build_condition(cell());
    c.n = 200;
    const GeneratedDataset ds = generate_dataset(c, 5);
    for (std::size_t i = 0; i < ds.individuals.size(); ++i) {
        const Individual& ind = ds.individuals[i];
        EXPECT_EQ(ind.x.size(), 2);
        ASSERT_EQ(ind.schedule.size(), 10U);
        for (std::size_t j = 0; j < 10; ++j) {
            EXPECT_GE(ind.schedule.times[j], static_cast<double>(j) - 0.25);
            EXPECT_LE(ind.schedule.times[j], static_cast<double>(j) + 0.25);
        }
        EXPECT_TRUE(ind.y.allFinite());
        EXPECT_TRUE(ind.z.allFinite());
        EXPECT_TRUE(ds.true_class[i] == 0 || ds.true_class[i] == 1);
    }
}

TEST(Generator, NoiseFreeTrajectoriesFollowClassMeanCurves) {
    SimulationCondition c = build_condition(cell());
    c.n = 100;
    for (ClassTruth& t : c.classes) {
        t.cov = Matrix::Zero(6, 6);
        t.residual_var = 0.0;
    }
    const GeneratedDataset ds = generate_dataset(c, 11);
    for (std::size_t i = 0; i < ds.individuals.size(); ++i) {
        const ClassTruth& t = c.classes[static_cast<std::size_t>(ds.true_class[i])];
        const Individual& ind = ds.individuals[i];
        for (std::size_t j = 0; j < ind.schedule.size(); ++j) {
            const double tt = ind.schedule.times[j];
            for (int u = 0; u < 2; ++u) {
                const auto& g = t.means[static_cast<std::size_t>(u)];
                const double knot = t.knot[static_cast<std::size_t>(u)];
                // Piecewise form: before and after the knot.
                const double want = tt <= knot ? g.intercept + g.slope1 * tt
                                               : g.intercept + g.slope1 * knot + g.slope2 * (tt - knot);
                const double got = u == 0 ? ind.y[static_cast<Eigen::Index>(j)] : ind.z[static_cast<Eigen::Index>(j)];
                EXPECT_NEAR(got, want, 1e-12);
            }
        }
    }
}

TEST(Generator, BalancedAllocationInBothModes) {
    SimulationCondition c = build_condition(cell(-0.3, 0.0));
    c.n = 50000;
    EXPECT_NEAR(class_two_share(generate_dataset(c, 21, AssignmentMode::multinomial)), 0.5, 0.03);
    EXPECT_NEAR(class_two_share(generate_dataset(c, 22, AssignmentMode::argmax)), 0.5, 0.03);
}

TEST(Generator, UnbalancedAllocationMatchesLogisticExpectation) {
    SimulationCondition c = build_condition(cell(-0.3, 0.775));
    c.n = 50000;
    const double share = class_two_share(generate_dataset(c, 23, AssignmentMode::multinomial));
    EXPECT_GE(share, 0.60);
    EXPECT_LE(share, 0.70);

    // Monte Carlo expectation of the class-2 gating probability.
    std::mt19937_64 rng(7);
    std::normal_distribution<double> z;
    double e = 0.0;
    const int draws = 1000000;
    for (int i = 0; i < draws; ++i) {
        const double eta = 0.775 + std::log(1.5) * z(rng) + std::log(1.7) * z(rng);
        e += 1.0 / (1.0 + std::exp(-eta));
    }
    e /= draws;
    EXPECT_NEAR(share, e, 4.0 * std::sqrt(e * (1.0 - e) / 50000.0));
}

TEST(Generator, EmpiricalGrowthFactorCovariance) {
    const auto groups = recovered_factors(-0.3, 200000, 31);
    const Matrix want = design_covariance(-0.3);
    for (const auto& g : groups) {
        ASSERT_GT(g.size(), 90000U);
        const Matrix got = sample_cov(g);
        for (int i = 0; i < 6; ++i) {
            for (int j = 0; j < 6; ++j) {
                const bool intercept = i % 3 == 0 || j % 3 == 0;
                EXPECT_NEAR(got(i, j), want(i, j), intercept ? 1.0 : 0.05) << i << "," << j;
            }
        }
    }
}

TEST(Generator, EmpiricalMahalanobisDistances) {
    const std::pair<double, double> cases[] = {{0.0, 1.22}, {0.3, 1.18}, {-0.3, 1.35}};
    std::uint64_t seed = 40;
    for (const auto& [rho, target] : cases) {
        const auto groups = recovered_factors(rho, 200000, ++seed);
        const Vector diff = sample_mean(groups[1]) - sample_mean(groups[0]);
        const double n0 = static_cast<double>(groups[0].size());
        const double n1 = static_cast<double>(groups[1].size());
        const Matrix pooled = ((n0 - 1.0) * sample_cov(groups[0]) + (n1 - 1.0) * sample_cov(groups[1])) / (n0 + n1 - 2.0);
        EXPECT_NEAR(mahalanobis(diff, pooled), target, 0.05) << "rho " << rho;
    }
}

TEST(Generator, UnivariateViewRemapsLabels) {
    SimulationCondition c = build_condition(cell());
    c.n = 30;
    const GeneratedDataset ds = generate_dataset(c, 3);
    // Scenario 1 orders classes the same way on both outcomes.
    for (StudyView v : {StudyView::y_only, StudyView::z_only}) {
        const ViewedData vd = view_of(ds, v);
        EXPECT_EQ(vd.true_class, ds.true_class);
        EXPECT_EQ(vd.truth.outcomes, 1);
        EXPECT_LT(vd.truth.classes[0].knot[0], vd.truth.classes[1].knot[0]);
    }
}

// ---------------------------------------------------------------------------
// Metrics

TEST(Metrics, RelativeBiasFixture) {
    const ParameterMetrics m = compute_metrics("theta", 2.0, {2.1, 1.9, 2.2});
    EXPECT_NEAR(m.mean_estimate, 6.2 / 3.0, 1e-12);
    EXPECT_NEAR(m.bias, 0.2 / 3.0, 1e-12);
    EXPECT_NEAR(m.relative_bias, 0.0333, 1e-4);
    EXPECT_EQ(m.replications, 3U);
}

TEST(Metrics, SpreadFixture) {
    const ParameterMetrics m = compute_metrics("theta", 2.0, {2.1, 1.9, 2.2});
    // Deviations from the mean 2.0667: 0.0333, -0.1667, 0.1333.
    const double ss = std::pow(0.1 / 3.0, 2) + std::pow(0.5 / 3.0, 2) + std::pow(0.4 / 3.0, 2);
    EXPECT_NEAR(m.empirical_se, std::sqrt(ss / 2.0), 1e-12);
    EXPECT_NEAR(m.mc_se_bias, std::sqrt(ss / 2.0 / 3.0), 1e-12);
    // Squared errors from the truth: 0.01, 0.01, 0.04.
    EXPECT_NEAR(m.rmse, std::sqrt(0.06 / 3.0), 1e-12);
    EXPECT_NEAR(m.relative_rmse, std::sqrt(0.02) / 2.0, 1e-12);
}

TEST(Metrics, CoverageFixture) {
    const ParameterMetrics m = compute_metrics("theta", 2.0, {2.0, 2.7, 1.0}, {1.0, 2.5, 0.0}, {3.0, 3.0, 2.1});
    EXPECT_NEAR(m.coverage, 2.0 / 3.0, 1e-15);
    EXPECT_EQ(m.coverage_replications, 3U);
}

TEST(Metrics, UnavailableIntervalsLeaveCoverage) {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    const ParameterMetrics m = compute_metrics("theta", 2.0, {2.0, 2.7, 1.0}, {1.0, nan, 0.0}, {3.0, nan, 1.5});
    EXPECT_EQ(m.coverage_replications, 2U);
    EXPECT_DOUBLE_EQ(m.coverage, 0.5);
    EXPECT_EQ(m.replications, 3U);
}

TEST(Metrics, ZeroTruthHasNoRelativeMetrics) {
    const ParameterMetrics m = compute_metrics("beta", 0.0, {0.1, -0.1});
    EXPECT_TRUE(std::isnan(m.relative_bias));
    EXPECT_TRUE(std::isnan(m.relative_rmse));
    EXPECT_NEAR(m.bias, 0.0, 1e-15);
    EXPECT_NEAR(m.rmse, 0.1, 1e-15);
}

TEST(Metrics, Accuracy) {
    EXPECT_DOUBLE_EQ(accuracy({0, 1, 1, 0, 1}, {0, 1, 1, 0, 0}), 0.8);
    EXPECT_THROW(accuracy({0, 1}, {0}), InvalidInput);
    EXPECT_THROW(accuracy({}, {}), InvalidInput);
}

// ---------------------------------------------------------------------------
// Studies

TEST(Study, AttemptsAreIndependentOfWorkerCount) {
    auto task = [](std::size_t a) { return std::make_pair(a % 3 != 1, replication_seed(5, a)); };
    auto done = [](const std::vector<std::pair<bool, std::uint64_t>>& rs, std::size_t prefix) {
        std::size_t c = 0;
        for (std::size_t i = 0; i < prefix; ++i) {
            c += rs[i].first ? 1 : 0;
        }
        return c >= 7;
    };
    const auto one = run_attempts<std::pair<bool, std::uint64_t>>(100, 1, task, done);
    const auto three = run_attempts<std::pair<bool, std::uint64_t>>(100, 3, task, done);
    // Seven successes need attempts 0..9; extra finished attempts may follow with more workers.
    ASSERT_GE(three.size(), one.size());
    EXPECT_EQ(one.size(), 10U);
    for (std::size_t i = 0; i < one.size(); ++i) {
        EXPECT_EQ(one[i], three[i]);
    }
}

TEST(Study, ReplicationSeedsAreDistinct) {
    std::set<std::uint64_t> seen;
    for (std::size_t a = 0; a < 1000; ++a) {
        seen.insert(replication_seed(20220101, a));
    }
    EXPECT_EQ(seen.size(), 1000U);
}

TEST(Study, OracleFitterIsUnbiasedWithFullCoverage) {
    const SimulationCondition c = build_condition(cell());
    StudyOptions o;
    o.replications = 20;
    o.fitter = oracle_fitter;
    const MetricReport r = run_study(c, FitConfig{}, o);
    EXPECT_EQ(r.converged, 20U);
    EXPECT_EQ(r.attempts, 20U);
    EXPECT_FALSE(r.aborted);
    EXPECT_DOUBLE_EQ(r.convergence_rate, 1.0);
    ASSERT_FALSE(r.parameters.empty());
    // Estimates equal the truth exactly; only averaging roundoff remains.
    for (const ParameterMetrics& m : r.parameters) {
        EXPECT_NEAR(m.bias, 0.0, 1e-12 * std::max(1.0, std::abs(m.truth))) << m.name;
        EXPECT_EQ(m.rmse, 0.0) << m.name;
        if (m.truth != 0.0) {
            EXPECT_NEAR(m.relative_bias, 0.0, 1e-12) << m.name;
            EXPECT_EQ(m.relative_rmse, 0.0) << m.name;
        }
        EXPECT_EQ(m.coverage, 1.0) << m.name;
    }
}

TEST(Study, OracleAccuracyTracksPosteriorOverlap) {
    const SimulationCondition c = build_condition(cell());
    StudyOptions o;
    o.replications = 20;
    o.fitter = oracle_fitter;
    const MetricReport r = run_study(c, FitConfig{}, o);
    // Expected accuracy of the Bayes rule is the mean largest posterior.
    double expected = 0.0;
    double var = 0.0;
    std::size_t count = 0;
    for (const ReplicationRecord& rec : r.replications) {
        const GeneratedDataset ds = generate_dataset(c, rec.seed);
        for (const Individual& ind : ds.individuals) {
            const Vector post = posterior_probabilities(ds.truth, ind);
            const double pmax = post.maxCoeff();
            expected += pmax;
            var += pmax * (1.0 - pmax);
            ++count;
        }
    }
    expected /= static_cast<double>(count);
    const double se = std::sqrt(var) / static_cast<double>(count);
    EXPECT_NEAR(r.mean_accuracy, expected, 4.0 * se);
}

TEST(Study, OracleStudyDoesNotDependOnWorkers) {
    const SimulationCondition c = build_condition(cell());
    StudyOptions o;
    o.replications = 6;
    o.fitter = oracle_fitter;
    const MetricReport a = run_study(c, FitConfig{}, o);
    o.workers = 3;
    const MetricReport b = run_study(c, FitConfig{}, o);
    ASSERT_EQ(a.replications.size(), b.replications.size());
    for (std::size_t i = 0; i < a.replications.size(); ++i) {
        EXPECT_EQ(a.replications[i].seed, b.replications[i].seed);
        EXPECT_EQ(a.replications[i].accuracy, b.replications[i].accuracy);
    }
    EXPECT_EQ(a.mean_accuracy, b.mean_accuracy);
}

TEST(Study, UnivariateOracleView) {
    const SimulationCondition c = build_condition(cell());
    StudyOptions o;
    o.replications = 3;
    o.fitter = oracle_fitter;
    o.view = StudyView::z_only;
    const MetricReport r = run_study(c, FitConfig{}, o);
    EXPECT_EQ(r.view, "z");
    EXPECT_EQ(r.parameters.size(), static_cast<std::size_t>(parameter_count(2, 1, 2)));
    for (const ParameterMetrics& m : r.parameters) {
        EXPECT_NEAR(m.bias, 0.0, 1e-12 * std::max(1.0, std::abs(m.truth))) << m.name;
        EXPECT_EQ(m.coverage, 1.0) << m.name;
    }
}

TEST(Study, AbortsAfterFiveTimesRequestedAttempts) {
    const SimulationCondition c = build_condition(cell());
    StudyOptions o;
    o.replications = 2;
    o.fitter = failing_fitter;
    const MetricReport r = run_study(c, FitConfig{}, o);
    EXPECT_TRUE(r.aborted);
    EXPECT_EQ(r.attempts, 10U);
    EXPECT_EQ(r.converged, 0U);
    EXPECT_DOUBLE_EQ(r.convergence_rate, 0.0);
}

TEST(Study, ConvergenceRateCountsFailedAttempts) {
    const SimulationCondition c = build_condition(cell());
    StudyOptions o;
    o.replications = 4;
    // Fails on every other generated dataset, by seed parity.
    o.fitter = [](const std::vector<Individual>& d, int k, const FitConfig& fc, const MixtureModel& t) {
        if (fc.seed % 2 == 1) {
            throw EstimationFailure("odd seed");
        }
        return oracle_fitter(d, k, fc, t);
    };
    const MetricReport r = run_study(c, FitConfig{}, o);
    std::size_t attempts = 0;
    std::size_t ok = 0;
    while (ok < 4) {
        ok += replication_seed(o.seed, attempts) % 2 == 0 ? 1 : 0;
        ++attempts;
    }
    EXPECT_EQ(r.attempts, attempts);
    EXPECT_EQ(r.converged, 4U);
    EXPECT_DOUBLE_EQ(r.convergence_rate, 4.0 / static_cast<double>(attempts));
}

TEST(Study, RejectsZeroReplications) {
    StudyOptions o;
    o.replications = 0;
    EXPECT_THROW(run_study(build_condition(cell()), FitConfig{}, o), InvalidInput);
    EXPECT_THROW(compare_joint_vs_univariate(build_condition(cell()), FitConfig{}, o), InvalidInput);
}

TEST(Comparison, SinglePairedRowMatchesUnivariateStudy) {
    SimulationCondition c = build_condition(cell());
    c.n = 300;
    FitConfig fc;
    fc.compute_standard_errors = false;
    StudyOptions o;
    o.replications = 1;
    o.seed = 2024;
    const ComparisonReport cmp = compare_joint_vs_univariate(c, fc, o);
    ASSERT_EQ(cmp.rows.size(), 1U);
    EXPECT_FALSE(cmp.aborted);
    EXPECT_EQ(cmp.mean_joint, cmp.rows[0].joint);
    EXPECT_EQ(cmp.diff_joint_y, cmp.rows[0].joint - cmp.rows[0].y_only);

    o.view = StudyView::y_only;
    const MetricReport y = run_study(c, fc, o);
    ASSERT_EQ(y.replications.size(), 1U);
    ASSERT_EQ(y.replications[0].attempt, cmp.rows[0].attempt);
    EXPECT_EQ(y.replications[0].accuracy, cmp.rows[0].y_only);
}

// ---------------------------------------------------------------------------
// Agreement

TEST(Kappa, IdenticalLabelsGiveOne) {
    const std::vector<int> a{1, 2, 2, 3, 1, 3, 2};
    const KappaResult k = cohen_kappa(a, a);
    EXPECT_NEAR(k.kappa, 1.0, 1e-15);
    EXPECT_NEAR(k.observed_agreement, 1.0, 1e-15);
}

TEST(Kappa, TwoByTwoTable) {
    std::vector<int> a;
    std::vector<int> b;
    auto add = [&](int x, int y, int n) {
        for (int i = 0; i < n; ++i) {
            a.push_back(x);
            b.push_back(y);
        }
    };
    add(1, 1, 40);
    add(1, 2, 10);
    add(2, 1, 10);
    add(2, 2, 40);
    const KappaResult k = cohen_kappa(a, b);
    EXPECT_NEAR(k.observed_agreement, 0.8, 1e-15);
    EXPECT_NEAR(k.expected_agreement, 0.5, 1e-15);
    EXPECT_NEAR(k.kappa, 0.6, 1e-14);
}

TEST(Kappa, MatchesReferenceImplementation) {
    // Frozen from statsmodels.stats.inter_rater.cohens_kappa on the same table.
    const std::vector<int> a{1, 1, 2, 2, 2, 3, 3, 1, 2, 3, 1, 1};
    const std::vector<int> b{1, 2, 2, 2, 3, 3, 3, 1, 2, 1, 1, 2};
    const KappaResult k = cohen_kappa(a, b);
    EXPECT_NEAR(k.kappa, 0.4947368421052631, 1e-14);
    EXPECT_NEAR(k.se, 0.20503489725076085, 1e-14);
    EXPECT_NEAR(k.ci_lower, 0.09287582791990118, 1e-14);
    EXPECT_NEAR(k.ci_upper, 0.8965978562906249, 1e-14);
}

TEST(Kappa, IndependentLabelsNearZero) {
    std::mt19937_64 rng(3);
    std::uniform_int_distribution<int> u(1, 3);
    std::vector<int> a(10000);
    std::vector<int> b(10000);
    for (std::size_t i = 0; i < a.size(); ++i) {
        a[i] = u(rng);
        b[i] = u(rng);
    }
    EXPECT_NEAR(cohen_kappa(a, b).kappa, 0.0, 0.05);
}

TEST(Kappa, Errors) {
    EXPECT_THROW(cohen_kappa({1, 1, 1}, {1, 1, 1}), UndefinedKappa);
    EXPECT_THROW(cohen_kappa({1, 2}, {1}), InvalidInput);
    EXPECT_THROW(cohen_kappa({1}, {1}), InvalidInput);
}
