#include <fstream>
#include <functional>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pbgmm.hpp"

namespace {

using pbgmm::RunConfig;

// Flag values are applied on top of an optional JSON config, so only flags
// actually given on the command line override it.
struct Overrides {
    std::vector<std::pair<CLI::Option*, std::function<void(RunConfig&)>>> items;

    template <class T>
    void add(CLI::App& app, const std::string& name, T& storage, std::function<void(RunConfig&, const T&)> apply,
             const std::string& help) {
        CLI::Option* opt = app.add_option(name, storage, help);
        items.emplace_back(opt, [&storage, apply](RunConfig& c) { apply(c, storage); });
    }

    void flag(CLI::App& app, const std::string& name, bool& storage, std::function<void(RunConfig&, bool)> apply,
              const std::string& help) {
        CLI::Option* opt = app.add_flag(name, storage, help);
        items.emplace_back(opt, [&storage, apply](RunConfig& c) { apply(c, storage); });
    }

    void apply(RunConfig& c) const {
        for (const auto& [opt, fn] : items) {
            if (opt->count() > 0) {
                fn(c);
            }
        }
    }
};

struct Values {
    std::string input, output_dir, outcomes, assignment, labels_a, labels_b;
    std::vector<std::string> covariates;
    int classes = 0, kmax = 0, scenario = 0, max_restarts = 0, min_starts = 0, max_iterations = 0;
    std::uint64_t seed = 0;
    unsigned workers = 0;
    std::size_t replications = 0, n = 0;
    double separation = 0, beta0 = 0, residual_var = 0, rho = 0, gradient_tol = 0, relative_tol = 0, fd_step = 0,
           hessian_step = 0, knot_margin = 0;
    bool no_se = false;
};

void add_options(CLI::App& sub, Values& v, Overrides& o) {
    o.add<std::string>(sub, "-i,--input", v.input, [](RunConfig& c, const std::string& x) { c.input = x; }, "Long-format CSV dataset");
    o.add<std::string>(sub, "-o,--output", v.output_dir, [](RunConfig& c, const std::string& x) { c.output_dir = x; }, "Output directory");
    o.add<int>(sub, "-k,--classes", v.classes, [](RunConfig& c, const int& x) { c.classes = x; }, "Number of latent classes");
    o.add<std::string>(sub, "--outcomes", v.outcomes, [](RunConfig& c, const std::string& x) { c.outcomes = x; }, "joint, y or z");
    o.add<std::vector<std::string>>(sub, "--covariates", v.covariates,
                                    [](RunConfig& c, const std::vector<std::string>& x) { c.covariates = x; },
                                    "Covariate columns (default: all after z)");
    o.add<int>(sub, "--kmax", v.kmax, [](RunConfig& c, const int& x) { c.kmax = x; }, "Largest K to enumerate");
    o.add<std::uint64_t>(sub, "--seed", v.seed, [](RunConfig& c, const std::uint64_t& x) { c.seed = x; }, "Master seed");
    o.add<unsigned>(sub, "-j,--workers", v.workers, [](RunConfig& c, const unsigned& x) { c.workers = x; },
                    "Worker threads (default: PBGMM_WORKERS or 1)");
    o.add<int>(sub, "--scenario", v.scenario, [](RunConfig& c, const int& x) { c.condition.scenario = x; }, "Design scenario 1-3");
    o.add<double>(sub, "--separation", v.separation, [](RunConfig& c, const double& x) { c.condition.separation = x; },
                  "Knot separation 0.5, 0.75 or 1");
    o.add<double>(sub, "--beta0", v.beta0, [](RunConfig& c, const double& x) { c.condition.beta0 = x; }, "Allocation intercept 0 or 0.775");
    o.add<double>(sub, "--residual-var", v.residual_var, [](RunConfig& c, const double& x) { c.condition.residual_var = x; },
                  "Residual variance 1 or 2");
    o.add<double>(sub, "--rho", v.rho, [](RunConfig& c, const double& x) { c.condition.rho = x; },
                  "Between-construct correlation -0.3, 0 or 0.3");
    o.add<std::size_t>(sub, "-S,--replications", v.replications, [](RunConfig& c, const std::size_t& x) { c.replications = x; },
                       "Converged replications required");
    o.add<std::string>(sub, "--assignment", v.assignment, [](RunConfig& c, const std::string& x) { c.assignment = x; },
                       "multinomial or argmax");
    o.add<std::size_t>(sub, "-n,--individuals", v.n, [](RunConfig& c, const std::size_t& x) { c.n = x; }, "Individuals to generate");
    o.add<std::string>(sub, "--labels-a", v.labels_a, [](RunConfig& c, const std::string& x) { c.labels_a = x; }, "First id,class file");
    o.add<std::string>(sub, "--labels-b", v.labels_b, [](RunConfig& c, const std::string& x) { c.labels_b = x; }, "Second id,class file");
    o.add<int>(sub, "--max-restarts", v.max_restarts, [](RunConfig& c, const int& x) { c.fit.max_restarts = x; }, "Start limit");
    o.add<int>(sub, "--min-starts", v.min_starts, [](RunConfig& c, const int& x) { c.fit.min_starts = x; },
               "Converged starts required before stopping");
    o.add<int>(sub, "--max-iterations", v.max_iterations, [](RunConfig& c, const int& x) { c.fit.max_iterations = x; },
               "Quasi-Newton iteration limit");
    o.add<double>(sub, "--gradient-tol", v.gradient_tol, [](RunConfig& c, const double& x) { c.fit.gradient_tol = x; }, "Gradient tolerance");
    o.add<double>(sub, "--relative-tol", v.relative_tol, [](RunConfig& c, const double& x) { c.fit.relative_tol = x; },
                  "Relative objective change tolerance");
    o.add<double>(sub, "--fd-step", v.fd_step, [](RunConfig& c, const double& x) { c.fit.fd_step = x; }, "Gradient difference step");
    o.add<double>(sub, "--hessian-step", v.hessian_step, [](RunConfig& c, const double& x) { c.fit.hessian_step = x; },
                  "Hessian difference step");
    o.add<double>(sub, "--knot-margin", v.knot_margin, [](RunConfig& c, const double& x) { c.fit.knot_margin = x; },
                  "Knot box margin in wave spacings");
    o.flag(sub, "--no-se", v.no_se, [](RunConfig& c, bool x) { c.fit.compute_standard_errors = !x; }, "Skip standard errors");
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Parallel bilinear-spline growth mixture models"};
    app.require_subcommand(1);
    std::string config_path;
    app.add_option("-c,--config", config_path, "JSON run configuration")->check(CLI::ExistingFile);

    Values values;
    Overrides overrides;
    const std::vector<std::pair<std::string, std::string>> commands = {
        {"fit", "Fit a K-class model to a dataset"},
        {"enumerate", "Fit K = 1..kmax and report AIC/BIC"},
        {"simulate", "Monte Carlo study for one design condition"},
        {"generate", "Generate one dataset from a design condition"},
        {"compare", "Joint versus univariate classification accuracy"},
        {"kappa", "Cohen's kappa between two classifications"},
    };
    for (const auto& [name, help] : commands) {
        CLI::App* sub = app.add_subcommand(name, help);
        sub->add_option("-c,--config", config_path, "JSON run configuration")->check(CLI::ExistingFile);
        add_options(*sub, values, overrides);
    }
    CLI11_PARSE(app, argc, argv);

    RunConfig config;
    try {
        config.workers = pbgmm::default_workers();
        if (!config_path.empty()) {
            std::ifstream in(config_path);
            config = pbgmm::parse_run_config(pbgmm::Json::parse(in), config);
        }
    } catch (const std::exception& e) {
        std::cerr << "pbgmm: invalid configuration: " << e.what() << '\n';
        return pbgmm::exit_invalid;
    }
    const std::string command = app.get_subcommands().front()->get_name();
    if (!config.command.empty() && config.command != command) {
        std::cerr << "pbgmm: config command '" << config.command << "' does not match '" << command << "'\n";
        return pbgmm::exit_invalid;
    }
    config.command = command;
    overrides.apply(config);
    return pbgmm::run(config);
}
