#ifndef PBGMM_RUN_HPP
#define PBGMM_RUN_HPP

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "pbgmm/errors.hpp"
#include "pbgmm/estimation.hpp"
#include "pbgmm/io.hpp"
#include "pbgmm/model_selection.hpp"
#include "pbgmm/simulation.hpp"

namespace pbgmm {

inline constexpr const char* version = "0.1.0";

/// Default worker count: PBGMM_WORKERS if set, else 1.
inline unsigned default_workers() {
    if (const char* env = std::getenv("PBGMM_WORKERS")) {
        try {
            const int w = std::stoi(env);
            if (w >= 1) {
                return static_cast<unsigned>(w);
            }
        } catch (const std::exception&) {
        }
        throw InvalidInput("PBGMM_WORKERS must be a positive integer");
    }
    return 1;
}

struct RunConfig {
    std::string command;
    std::string input;
    std::string output_dir = "out";
    int classes = 2;
    std::string outcomes = "joint";          // joint | y | z
    std::optional<std::vector<std::string>> covariates;   // unset = every column after z
    int kmax = 3;
    std::uint64_t seed = 1;
    unsigned workers = 1;
    FitConfig fit;
    ConditionCell condition;
    std::size_t replications = 100;
    std::string assignment = "multinomial";  // multinomial | argmax
    std::size_t n = 500;                     // generate: individuals
    std::string labels_a;
    std::string labels_b;
};

inline const std::set<std::string>& run_commands() {
    static const std::set<std::string> c{"fit", "enumerate", "simulate", "generate", "compare", "kappa"};
    return c;
}

inline int outcome_count(const std::string& outcomes) { return outcomes == "joint" ? 2 : 1; }

inline void validate(const RunConfig& c) {
    if (run_commands().count(c.command) == 0) {
        throw InvalidInput("unknown command '" + c.command + "'");
    }
    if (c.outcomes != "joint" && c.outcomes != "y" && c.outcomes != "z") {
        throw InvalidInput("outcomes must be joint, y or z");
    }
    if (c.classes < 1 || c.kmax < 1) {
        throw InvalidInput("classes and kmax must be positive");
    }
    if (c.workers < 1) {
        throw InvalidInput("workers must be positive");
    }
    if (c.assignment != "multinomial" && c.assignment != "argmax") {
        throw InvalidInput("assignment must be multinomial or argmax");
    }
    if (c.output_dir.empty()) {
        throw InvalidInput("output directory is required");
    }
    if ((c.command == "fit" || c.command == "enumerate") && c.input.empty()) {
        throw InvalidInput(c.command + " needs an input dataset");
    }
    if (c.command == "kappa" && (c.labels_a.empty() || c.labels_b.empty())) {
        throw InvalidInput("kappa needs two label files");
    }
    if ((c.command == "simulate" || c.command == "compare") && c.replications < 1) {
        throw InvalidInput("replications must be positive");
    }
    if (c.command == "generate" && c.n < 1) {
        throw InvalidInput("n must be positive");
    }
    FitConfig f = c.fit;
    f.outcomes = outcome_count(c.outcomes);
    validate(f);
}

namespace detail {

inline void reject_unknown(const Json& obj, const std::set<std::string>& allowed, const std::string& where) {
    if (!obj.is_object()) {
        throw InvalidInput(where + " must be a JSON object");
    }
    for (const auto& item : obj.items()) {
        if (allowed.count(item.key()) == 0) {
            throw InvalidInput("unknown key '" + item.key() + "' in " + where);
        }
    }
}

template <class T>
void read_key(const Json& obj, const char* key, T& out) {
    if (obj.contains(key)) {
        try {
            out = obj.at(key).get<T>();
        } catch (const nlohmann::json::exception&) {
            throw InvalidInput(std::string("config key '") + key + "' has the wrong type");
        }
    }
}

} // namespace detail

/// Schema-checked config from JSON; unknown keys are rejected.
inline RunConfig parse_run_config(const Json& j, RunConfig c = {}) {
    detail::reject_unknown(j,
                           {"command", "input", "output_dir", "classes", "outcomes", "covariates", "kmax", "seed", "workers", "fit",
                            "condition", "replications", "assignment", "n", "labels_a", "labels_b"},
                           "config");
    detail::read_key(j, "command", c.command);
    detail::read_key(j, "input", c.input);
    detail::read_key(j, "output_dir", c.output_dir);
    detail::read_key(j, "classes", c.classes);
    detail::read_key(j, "outcomes", c.outcomes);
    if (j.contains("covariates")) {
        std::vector<std::string> cov;
        detail::read_key(j, "covariates", cov);
        c.covariates = cov;
    }
    detail::read_key(j, "kmax", c.kmax);
    detail::read_key(j, "seed", c.seed);
    detail::read_key(j, "workers", c.workers);
    detail::read_key(j, "replications", c.replications);
    detail::read_key(j, "assignment", c.assignment);
    detail::read_key(j, "n", c.n);
    detail::read_key(j, "labels_a", c.labels_a);
    detail::read_key(j, "labels_b", c.labels_b);
    if (j.contains("fit")) {
        const Json& f = j.at("fit");
        detail::reject_unknown(f,
                               {"max_restarts", "min_starts", "gradient_tol", "relative_tol", "fd_step", "hessian_step", "knot_margin",
                                "max_iterations", "standard_errors"},
                               "fit");
        detail::read_key(f, "max_restarts", c.fit.max_restarts);
        detail::read_key(f, "min_starts", c.fit.min_starts);
        detail::read_key(f, "gradient_tol", c.fit.gradient_tol);
        detail::read_key(f, "relative_tol", c.fit.relative_tol);
        detail::read_key(f, "fd_step", c.fit.fd_step);
        detail::read_key(f, "hessian_step", c.fit.hessian_step);
        detail::read_key(f, "knot_margin", c.fit.knot_margin);
        detail::read_key(f, "max_iterations", c.fit.max_iterations);
        detail::read_key(f, "standard_errors", c.fit.compute_standard_errors);
    }
    if (j.contains("condition")) {
        const Json& d = j.at("condition");
        detail::reject_unknown(d, {"scenario", "separation", "beta0", "residual_var", "rho"}, "condition");
        detail::read_key(d, "scenario", c.condition.scenario);
        detail::read_key(d, "separation", c.condition.separation);
        detail::read_key(d, "beta0", c.condition.beta0);
        detail::read_key(d, "residual_var", c.condition.residual_var);
        detail::read_key(d, "rho", c.condition.rho);
    }
    return c;
}

inline Json to_json(const RunConfig& c) {
    Json j;
    j["command"] = c.command;
    j["input"] = c.input;
    j["output_dir"] = c.output_dir;
    j["classes"] = c.classes;
    j["outcomes"] = c.outcomes;
    if (c.covariates) {
        j["covariates"] = *c.covariates;
    }
    j["kmax"] = c.kmax;
    j["seed"] = c.seed;
    j["workers"] = c.workers;
    j["fit"] = Json{{"max_restarts", c.fit.max_restarts},     {"min_starts", c.fit.min_starts},
                    {"gradient_tol", c.fit.gradient_tol},     {"relative_tol", c.fit.relative_tol},
                    {"fd_step", c.fit.fd_step},               {"hessian_step", c.fit.hessian_step},
                    {"knot_margin", c.fit.knot_margin},       {"max_iterations", c.fit.max_iterations},
                    {"standard_errors", c.fit.compute_standard_errors}};
    j["condition"] = to_json(c.condition);
    j["replications"] = c.replications;
    j["assignment"] = c.assignment;
    j["n"] = c.n;
    j["labels_a"] = c.labels_a;
    j["labels_b"] = c.labels_b;
    return j;
}

/// Files written by one run; removed again unless the run commits.
class OutputSession {
public:
    explicit OutputSession(std::filesystem::path dir) : dir_(std::move(dir)) {
        if (!std::filesystem::exists(dir_)) {
            std::filesystem::create_directories(dir_);
            created_dir_ = true;
        }
    }
    OutputSession(const OutputSession&) = delete;
    OutputSession& operator=(const OutputSession&) = delete;

    ~OutputSession() {
        if (committed_) {
            return;
        }
        std::error_code ec;
        for (const auto& f : written_) {
            std::filesystem::remove(f, ec);
        }
        if (created_dir_ && std::filesystem::is_empty(dir_, ec)) {
            std::filesystem::remove(dir_, ec);
        }
    }

    template <class Writer>
    void write(const std::string& name, Writer&& writer) {
        const std::filesystem::path p = dir_ / name;
        written_.push_back(p);
        std::ofstream out(p, std::ios::binary);
        if (!out) {
            throw std::runtime_error("cannot write " + p.string());
        }
        out.imbue(std::locale::classic());
        writer(out);
        if (!out) {
            throw std::runtime_error("failed writing " + p.string());
        }
    }

    void write_json(const std::string& name, const Json& j) {
        write(name, [&](std::ostream& out) { out << j.dump(2) << '\n'; });
    }

    void commit() { committed_ = true; }

private:
    std::filesystem::path dir_;
    std::vector<std::filesystem::path> written_;
    bool created_dir_ = false;
    bool committed_ = false;
};

enum ExitCode : int { exit_ok = 0, exit_error = 1, exit_invalid = 2, exit_estimation = 3 };

namespace detail {

inline FitConfig fit_config(const RunConfig& c) {
    FitConfig f = c.fit;
    f.outcomes = outcome_count(c.outcomes);
    f.seed = c.seed;
    return f;
}

inline Dataset load(const RunConfig& c) {
    Dataset ds = c.covariates ? ingest(c.input, *c.covariates, false) : ingest(c.input);
    if (c.outcomes != "joint") {
        ds.individuals = project_outcome(ds.individuals, c.outcomes == "y" ? Outcome::y : Outcome::z);
    }
    return ds;
}

/// A z-only fit is stored in the y slot; restore the outcome tag in names.
inline void retag(std::vector<std::string>& names, const std::string& outcomes) {
    if (outcomes != "z") {
        return;
    }
    for (std::string& n : names) {
        const auto at = n.find("[y]");
        if (at != std::string::npos) {
            n.replace(at, 3, "[z]");
        }
    }
}

inline SimulationCondition condition(const RunConfig& c) { return build_condition(c.condition); }

inline AssignmentMode assignment(const RunConfig& c) {
    return c.assignment == "argmax" ? AssignmentMode::argmax : AssignmentMode::multinomial;
}

inline StudyView view(const RunConfig& c) {
    return c.outcomes == "joint" ? StudyView::joint : c.outcomes == "y" ? StudyView::y_only : StudyView::z_only;
}

inline Json manifest(const RunConfig& c) {
    return Json{{"tool", "pbgmm"}, {"version", version}, {"command", c.command}, {"seed", c.seed}, {"config", to_json(c)}};
}

inline int run_fit(const RunConfig& c, OutputSession& out, std::string& status) {
    const Dataset ds = load(c);
    FitResult f = fit(ds.individuals, c.classes, fit_config(c));
    retag(f.parameter_names, c.outcomes);
    status = to_string(f.status);
    if (!f.converged()) {
        return exit_estimation;
    }
    Json report = Json{{"command", "fit"}, {"fit", to_json(f, ds.covariate_names)}};
    out.write_json("report.json", report);
    out.write("parameters.csv", [&](std::ostream& o) { write_parameter_csv(o, f); });
    out.write("class_parameters.csv", [&](std::ostream& o) { write_class_parameter_csv(o, f); });
    out.write("classes.csv", [&](std::ostream& o) { write_classes_csv(o, f); });
    if (f.classes > 1) {
        const OriginalScaleReport r = report_original_scale(f);
        const std::vector<std::string> names =
            f.covariates > 0 ? ds.covariate_names : std::vector<std::string>{};
        out.write("odds_ratios.csv", [&](std::ostream& o) { write_odds_ratio_csv(o, r, f.classes, names); });
    }
    return exit_ok;
}

inline int run_enumerate(const RunConfig& c, OutputSession& out, std::string& status) {
    const Dataset ds = load(c);
    const std::vector<EnumerationRow> rows = enumerate(ds.individuals, c.kmax, fit_config(c));
    Json jr = Json::array();
    bool any = false;
    for (const EnumerationRow& r : rows) {
        jr.push_back(to_json(r));
        any = any || r.status == FitStatus::converged;
    }
    status = any ? "converged" : "restart-exhausted";
    if (!any) {
        return exit_estimation;
    }
    out.write_json("report.json", Json{{"command", "enumerate"}, {"outcomes", c.outcomes}, {"rows", jr}});
    out.write("enumeration.csv", [&](std::ostream& o) { write_enumeration_csv(o, rows); });
    return exit_ok;
}

inline int run_simulate(const RunConfig& c, OutputSession& out, std::string& status) {
    const SimulationCondition cond = condition(c);
    StudyOptions o;
    o.replications = c.replications;
    o.mode = assignment(c);
    o.view = view(c);
    o.workers = c.workers;
    o.seed = c.seed;
    const MetricReport r = run_study(cond, fit_config(c), o);
    status = r.aborted ? "aborted" : "converged";
    Json report = Json{{"command", "simulate"}, {"condition", to_json(c.condition)}, {"assignment", c.assignment}, {"study", to_json(r)}};
    out.write_json("report.json", report);
    out.write("metrics.csv", [&](std::ostream& s) { write_metrics_csv(s, r); });
    out.write("replications.csv", [&](std::ostream& s) { write_replications_csv(s, r); });
    return r.aborted ? exit_estimation : exit_ok;
}

inline int run_generate(const RunConfig& c, OutputSession& out, std::string& status) {
    SimulationCondition cond = condition(c);
    cond.n = c.n;
    const GeneratedDataset g = generate_dataset(cond, c.seed, assignment(c));
    status = "generated";
    const std::vector<std::string> names = default_covariate_names(cond.gating.size() - 1);
    out.write("data.csv", [&](std::ostream& s) { write_dataset(s, g.individuals, names); });
    out.write("truth.csv", [&](std::ostream& s) {
        s << "id,class\n";
        for (std::size_t i = 0; i < g.individuals.size(); ++i) {
            s << g.individuals[i].id << ',' << g.true_class[i] + 1 << '\n';
        }
    });
    Json report = Json{{"command", "generate"},
                       {"condition", to_json(c.condition)},
                       {"assignment", c.assignment},
                       {"n", c.n},
                       {"within_distance_y", within_construct_distance(cond, Outcome::y)},
                       {"within_distance_z", within_construct_distance(cond, Outcome::z)},
                       {"joint_distance", joint_distance(cond)},
                       {"truth", to_json(g.truth)}};
    out.write_json("report.json", report);
    return exit_ok;
}

inline int run_compare(const RunConfig& c, OutputSession& out, std::string& status) {
    StudyOptions o;
    o.replications = c.replications;
    o.mode = assignment(c);
    o.workers = c.workers;
    o.seed = c.seed;
    const ComparisonReport r = compare_joint_vs_univariate(condition(c), fit_config(c), o);
    status = r.aborted ? "aborted" : "converged";
    out.write_json("report.json", Json{{"command", "compare"}, {"condition", to_json(c.condition)}, {"comparison", to_json(r)}});
    out.write("comparison.csv", [&](std::ostream& s) { write_comparison_csv(s, r); });
    return r.aborted ? exit_estimation : exit_ok;
}

inline int run_kappa(const RunConfig& c, OutputSession& out, std::string& status) {
    const auto a = read_labels(c.labels_a);
    const auto b = read_labels(c.labels_b);
    std::map<std::string, int> bmap(b.begin(), b.end());
    if (a.size() != b.size() || bmap.size() != b.size()) {
        throw InvalidInput("label files must list the same ids once each");
    }
    std::vector<int> la;
    std::vector<int> lb;
    for (const auto& [id, cls] : a) {
        const auto it = bmap.find(id);
        if (it == bmap.end()) {
            throw InvalidInput("id '" + id + "' missing from " + c.labels_b);
        }
        la.push_back(cls);
        lb.push_back(it->second);
    }
    const KappaResult k = cohen_kappa(la, lb);
    status = "computed";
    out.write_json("report.json", Json{{"command", "kappa"}, {"n", la.size()}, {"kappa", to_json(k)}});
    return exit_ok;
}

} // namespace detail

/// Executes one command. Artifacts land in config.output_dir; on any
/// failure the files written by this run are removed again.
inline int run(const RunConfig& config, std::ostream& log = std::cerr) {
    try {
        validate(config);
        OutputSession out(config.output_dir);
        std::string status;
        int code = exit_error;
        if (config.command == "fit") {
            code = detail::run_fit(config, out, status);
        } else if (config.command == "enumerate") {
            code = detail::run_enumerate(config, out, status);
        } else if (config.command == "simulate") {
            code = detail::run_simulate(config, out, status);
        } else if (config.command == "generate") {
            code = detail::run_generate(config, out, status);
        } else if (config.command == "compare") {
            code = detail::run_compare(config, out, status);
        } else {
            code = detail::run_kappa(config, out, status);
        }
        if (code != exit_ok) {
            log << "pbgmm: " << config.command << " failed (status: " << status << ")\n";
            return code;
        }
        out.write_json("manifest.json", detail::manifest(config));
        out.write_json("status.json", Json{{"status", status}, {"exit_code", code}});
        out.commit();
        return code;
    } catch (const IngestionError& e) {
        log << "pbgmm: ingestion error: " << e.what() << '\n';
        return exit_invalid;
    } catch (const InvalidCondition& e) {
        log << "pbgmm: invalid condition: " << e.what() << '\n';
        return exit_invalid;
    } catch (const InvalidInput& e) {
        log << "pbgmm: invalid input: " << e.what() << '\n';
        return exit_invalid;
    } catch (const UndefinedKappa& e) {
        log << "pbgmm: kappa undefined: " << e.what() << '\n';
        return exit_invalid;
    } catch (const EstimationFailure& e) {
        log << "pbgmm: estimation failed: " << e.what() << '\n';
        return exit_estimation;
    } catch (const std::exception& e) {
        log << "pbgmm: error: " << e.what() << '\n';
        return exit_error;
    }
}

} // namespace pbgmm

#endif // PBGMM_RUN_HPP
