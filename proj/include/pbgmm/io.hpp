#ifndef PBGMM_IO_HPP
#define PBGMM_IO_HPP

#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "pbgmm/errors.hpp"
#include "pbgmm/estimation.hpp"
#include "pbgmm/mixture_model.hpp"
#include "pbgmm/model_selection.hpp"
#include "pbgmm/simulation.hpp"

namespace pbgmm {

using Json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Number formatting (locale independent)

/// Shortest text that parses back to the same double.
inline std::string format_double(double v) {
    if (std::isnan(v)) {
        return "";
    }
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

inline std::optional<double> parse_double(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) {
        s.remove_prefix(1);
    }
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
        s.remove_suffix(1);
    }
    if (s.empty()) {
        return std::nullopt;
    }
    if (s.front() == '+') {
        s.remove_prefix(1);
    }
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size() || !std::isfinite(v)) {
        throw InvalidInput("not a finite number: '" + std::string(s) + "'");
    }
    return v;
}

/// Splits one CSV record; double-quoted cells may hold commas and "" escapes.
inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char ch = line[i];
        if (quoted) {
            if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cell.push_back('"');
                ++i;
            } else if (ch == '"') {
                quoted = false;
            } else {
                cell.push_back(ch);
            }
        } else if (ch == '"') {
            quoted = true;
        } else if (ch == ',') {
            out.push_back(cell);
            cell.clear();
        } else if (ch != '\r' && ch != '\n') {
            cell.push_back(ch);
        }
    }
    out.push_back(cell);
    return out;
}

inline std::string trim(std::string s) {
    const auto b = s.find_first_not_of(" \t");
    const auto e = s.find_last_not_of(" \t");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

// ---------------------------------------------------------------------------
// Long-format datasets: id,time,y,z[,covariates...]

struct Dataset {
    std::vector<std::string> covariate_names;
    std::vector<Individual> individuals;
};

/// Parses long-format CSV text. `covariates` selects columns by name; when
/// empty every column after z is used.
inline Dataset parse_dataset(std::istream& in, const std::vector<std::string>& covariates = {},
                             bool all_covariates = true) {
    std::string line;
    if (!std::getline(in, line)) {
        throw IngestionError("dataset is empty", "", 1);
    }
    std::vector<std::string> header = split_csv_line(line);
    for (std::string& h : header) {
        h = trim(h);
    }
    if (header.size() < 4 || header[0] != "id" || header[1] != "time" || header[2] != "y" || header[3] != "z") {
        throw IngestionError("header must start with id,time,y,z", "", 1);
    }
    Dataset ds;
    std::vector<std::size_t> cov_cols;
    if (all_covariates && covariates.empty()) {
        for (std::size_t c = 4; c < header.size(); ++c) {
            cov_cols.push_back(c);
            ds.covariate_names.push_back(header[c]);
        }
    } else {
        for (const std::string& name : covariates) {
            std::size_t found = header.size();
            for (std::size_t c = 4; c < header.size(); ++c) {
                if (header[c] == name) {
                    found = c;
                }
            }
            if (found == header.size()) {
                throw IngestionError("covariate column '" + name + "' not in header", "", 1);
            }
            cov_cols.push_back(found);
            ds.covariate_names.push_back(name);
        }
    }

    struct Pending {
        std::vector<double> times;
        std::vector<double> y;
        std::vector<double> z;
        std::vector<bool> oy;
        std::vector<bool> oz;
        std::vector<double> x;
        std::size_t first_line = 0;
    };
    std::map<std::string, std::size_t> index;
    std::vector<std::pair<std::string, Pending>> groups;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) {
            continue;
        }
        const std::vector<std::string> cells = split_csv_line(line);
        const std::string id = cells.empty() ? std::string() : trim(cells[0]);
        if (cells.size() != header.size()) {
            throw IngestionError("expected " + std::to_string(header.size()) + " cells, found " + std::to_string(cells.size()), id, line_no);
        }
        if (id.empty()) {
            throw IngestionError("missing id", id, line_no);
        }
        auto number = [&](std::size_t c) -> std::optional<double> {
            try {
                return parse_double(cells[c]);
            } catch (const InvalidInput& e) {
                throw IngestionError(std::string(e.what()) + " in column " + header[c], id, line_no);
            }
        };
        const std::optional<double> t = number(1);
        if (!t) {
            throw IngestionError("missing time", id, line_no);
        }
        const std::optional<double> y = number(2);
        const std::optional<double> z = number(3);
        if (!y && !z) {
            throw IngestionError("row has no observed outcome", id, line_no);
        }
        std::vector<double> x;
        for (std::size_t c : cov_cols) {
            const std::optional<double> v = number(c);
            if (!v) {
                throw IngestionError("missing covariate " + header[c], id, line_no);
            }
            x.push_back(*v);
        }
        auto it = index.find(id);
        if (it == index.end()) {
            it = index.emplace(id, groups.size()).first;
            groups.emplace_back(id, Pending{});
            groups.back().second.first_line = line_no;
            groups.back().second.x = x;
        }
        Pending& g = groups[it->second].second;
        if (!g.times.empty() && !(*t > g.times.back())) {
            throw IngestionError("times must be strictly increasing within an id", id, line_no);
        }
        if (x != g.x) {
            throw IngestionError("covariates differ from earlier rows of the same id", id, line_no);
        }
        g.times.push_back(*t);
        g.y.push_back(y.value_or(std::numeric_limits<double>::quiet_NaN()));
        g.z.push_back(z.value_or(std::numeric_limits<double>::quiet_NaN()));
        g.oy.push_back(y.has_value());
        g.oz.push_back(z.has_value());
    }
    for (auto& [id, g] : groups) {
        Individual ind;
        ind.id = id;
        ind.schedule.times = g.times;
        ind.schedule.observed_y = g.oy;
        ind.schedule.observed_z = g.oz;
        ind.y = Eigen::Map<Vector>(g.y.data(), static_cast<Eigen::Index>(g.y.size()));
        ind.z = Eigen::Map<Vector>(g.z.data(), static_cast<Eigen::Index>(g.z.size()));
        ind.x = Eigen::Map<Vector>(g.x.data(), static_cast<Eigen::Index>(g.x.size()));
        ds.individuals.push_back(std::move(ind));
    }
    if (ds.individuals.empty()) {
        throw IngestionError("dataset has no rows", "", line_no);
    }
    return ds;
}

inline Dataset ingest(const std::string& path, const std::vector<std::string>& covariates = {}, bool all_covariates = true) {
    std::ifstream in(path);
    if (!in) {
        throw IngestionError("cannot open " + path, "", 0);
    }
    return parse_dataset(in, covariates, all_covariates);
}

/// Writes long-format CSV; occasions with neither outcome observed are skipped.
inline void write_dataset(std::ostream& out, const std::vector<Individual>& data, const std::vector<std::string>& covariate_names) {
    out << "id,time,y,z";
    for (const std::string& n : covariate_names) {
        out << ',' << n;
    }
    out << '\n';
    for (const Individual& ind : data) {
        for (std::size_t j = 0; j < ind.schedule.size(); ++j) {
            const bool oy = ind.schedule.observed_y[j];
            const bool oz = ind.schedule.observed_z[j];
            if (!oy && !oz) {
                continue;
            }
            const auto jj = static_cast<Eigen::Index>(j);
            out << ind.id << ',' << format_double(ind.schedule.times[j]) << ',' << (oy ? format_double(ind.y[jj]) : "") << ','
                << (oz ? format_double(ind.z[jj]) : "");
            for (Eigen::Index c = 0; c < ind.x.size(); ++c) {
                out << ',' << format_double(ind.x[c]);
            }
            out << '\n';
        }
    }
}

inline std::vector<std::string> default_covariate_names(Eigen::Index p) {
    std::vector<std::string> names;
    for (Eigen::Index c = 0; c < p; ++c) {
        names.push_back("x" + std::to_string(c + 1));
    }
    return names;
}

/// Reads an id,class table (1-based classes; extra columns ignored).
inline std::vector<std::pair<std::string, int>> read_labels(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw IngestionError("cannot open " + path, "", 0);
    }
    std::string line;
    std::getline(in, line);
    const std::vector<std::string> header = split_csv_line(line);
    if (header.size() < 2 || trim(header[0]) != "id" || trim(header[1]) != "class") {
        throw IngestionError("label file header must start with id,class", "", 1);
    }
    std::vector<std::pair<std::string, int>> out;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) {
            continue;
        }
        const std::vector<std::string> cells = split_csv_line(line);
        const std::string id = trim(cells[0]);
        if (cells.size() < 2) {
            throw IngestionError("missing class", id, line_no);
        }
        int cls = 0;
        const std::string c = trim(cells[1]);
        const auto res = std::from_chars(c.data(), c.data() + c.size(), cls);
        if (res.ec != std::errc() || res.ptr != c.data() + c.size()) {
            throw IngestionError("class must be an integer", id, line_no);
        }
        out.emplace_back(id, cls);
    }
    return out;
}

// ---------------------------------------------------------------------------
// JSON

inline Json json_number(double v) {
    return std::isfinite(v) ? Json(v) : Json(nullptr);
}

inline Json json_vector(const Vector& v) {
    Json a = Json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        a.push_back(json_number(v[i]));
    }
    return a;
}

inline Json json_matrix(const Matrix& m) {
    Json a = Json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        a.push_back(json_vector(m.row(r).transpose()));
    }
    return a;
}

inline Json to_json(const KnotBox& b) {
    return Json{{"lower", b.lower}, {"upper", b.upper}};
}

/// Model on the reparameterized scale (as estimated).
inline Json to_json(const MixtureModel& m) {
    Json classes = Json::array();
    for (const ClassParameters& c : m.classes) {
        Json j;
        j["mean_reparameterized"] = json_vector(c.mean);
        j["cov_reparameterized"] = json_matrix(c.cov);
        j["knot"] = Json::array({c.knot[0]});
        j["residual_var"] = Json::array({c.residual_var[0]});
        if (c.outcomes == 2) {
            j["knot"].push_back(c.knot[1]);
            j["residual_var"].push_back(c.residual_var[1]);
            j["residual_cov"] = c.residual_cov;
        }
        classes.push_back(j);
    }
    return Json{{"outcomes", m.outcomes}, {"classes", classes}, {"gating", json_matrix(m.gating.coef)}};
}

inline Json to_json(const FitResult& f, const std::vector<std::string>& covariate_names = {}) {
    Json j;
    j["status"] = to_string(f.status);
    j["classes"] = f.classes;
    j["outcomes"] = f.outcomes;
    j["covariates"] = covariate_names;
    j["n"] = f.n;
    j["knot_box"] = to_json(f.knot_box);
    j["log_likelihood"] = json_number(f.log_likelihood);
    j["minus_two_ll"] = json_number(-2.0 * f.log_likelihood);
    j["parameter_count"] = f.unconstrained.size();
    j["starts"] = f.starts;
    j["converged_starts"] = f.converged_starts;
    j["iterations"] = f.iterations;
    j["best_trace"] = f.best_trace;
    j["se_available"] = f.se_available;
    Json params = Json::array();
    for (std::size_t i = 0; i < f.parameter_names.size(); ++i) {
        const auto k = static_cast<Eigen::Index>(i);
        params.push_back(Json{{"name", f.parameter_names[i]},
                              {"estimate", json_number(f.estimates[k])},
                              {"se", json_number(f.standard_errors[k])},
                              {"ci_lower", json_number(f.ci_lower[k])},
                              {"ci_upper", json_number(f.ci_upper[k])}});
    }
    j["parameters_original"] = params;
    j["model_reparameterized"] = to_json(f.model);
    j["mixing_proportions"] = json_vector(f.mixing_proportions);
    return j;
}

inline Json to_json(const EnumerationRow& r) {
    return Json{{"K", r.classes},
                {"status", to_string(r.status)},
                {"parameters", r.parameters},
                {"n", r.n},
                {"minus_two_ll", json_number(r.minus_two_ll)},
                {"aic", json_number(r.aic)},
                {"bic", json_number(r.bic)},
                {"proportions", json_vector(r.proportions)},
                {"selected", r.selected},
                {"message", r.message}};
}

inline Json to_json(const ParameterMetrics& m) {
    return Json{{"name", m.name},
                {"truth", m.truth},
                {"mean_estimate", json_number(m.mean_estimate)},
                {"bias", json_number(m.bias)},
                {"relative_bias", json_number(m.relative_bias)},
                {"empirical_se", json_number(m.empirical_se)},
                {"rmse", json_number(m.rmse)},
                {"relative_rmse", json_number(m.relative_rmse)},
                {"coverage", json_number(m.coverage)},
                {"mc_se_bias", json_number(m.mc_se_bias)},
                {"replications", m.replications},
                {"coverage_replications", m.coverage_replications}};
}

inline Json to_json(const ConditionCell& c) {
    return Json{{"scenario", c.scenario}, {"separation", c.separation}, {"beta0", c.beta0}, {"residual_var", c.residual_var}, {"rho", c.rho}};
}

inline Json to_json(const MetricReport& r) {
    Json j;
    j["view"] = r.view;
    j["requested"] = r.requested;
    j["converged"] = r.converged;
    j["attempts"] = r.attempts;
    j["aborted"] = r.aborted;
    j["convergence_rate"] = json_number(r.convergence_rate);
    j["mean_accuracy"] = json_number(r.mean_accuracy);
    Json params = Json::array();
    for (const ParameterMetrics& m : r.parameters) {
        params.push_back(to_json(m));
    }
    j["parameters"] = params;
    return j;
}

inline Json to_json(const ComparisonReport& r) {
    Json rows = Json::array();
    for (const PairedAccuracy& p : r.rows) {
        rows.push_back(Json{{"attempt", p.attempt}, {"seed", p.seed}, {"joint", p.joint}, {"y", p.y_only}, {"z", p.z_only}});
    }
    return Json{{"requested", r.requested},
                {"attempts", r.attempts},
                {"aborted", r.aborted},
                {"mean_joint", json_number(r.mean_joint)},
                {"mean_y", json_number(r.mean_y)},
                {"mean_z", json_number(r.mean_z)},
                {"diff_joint_y", json_number(r.diff_joint_y)},
                {"diff_joint_z", json_number(r.diff_joint_z)},
                {"rows", rows}};
}

inline Json to_json(const KappaResult& k) {
    return Json{{"kappa", k.kappa},
                {"se", k.se},
                {"ci_lower", k.ci_lower},
                {"ci_upper", k.ci_upper},
                {"observed_agreement", k.observed_agreement},
                {"expected_agreement", k.expected_agreement}};
}

// ---------------------------------------------------------------------------
// Report tables

/// Model-fit summary: one row per K.
inline void write_enumeration_csv(std::ostream& out, const std::vector<EnumerationRow>& rows) {
    out << "K,parameters,minus_two_ll,aic,bic,proportions,status,selected\n";
    for (const EnumerationRow& r : rows) {
        std::string props;
        for (Eigen::Index k = 0; k < r.proportions.size(); ++k) {
            props += (k > 0 ? ";" : "") + format_fixed(100.0 * r.proportions[k], 1) + "%";
        }
        out << r.classes << ',' << r.parameters << ',' << (std::isfinite(r.minus_two_ll) ? format_fixed(r.minus_two_ll, 2) : "") << ','
            << (std::isfinite(r.aic) ? format_fixed(r.aic, 2) : "") << ',' << (std::isfinite(r.bic) ? format_fixed(r.bic, 2) : "") << ','
            << props << ',' << to_string(r.status) << ',' << (r.selected ? "*" : "") << '\n';
    }
}

/// Odds ratios: rows are covariates, columns classes; class 1 is the reference.
inline void write_odds_ratio_csv(std::ostream& out, const OriginalScaleReport& report, int classes,
                                 const std::vector<std::string>& covariate_names) {
    out << "covariate";
    for (int k = 1; k <= classes; ++k) {
        out << ",class" << k;
    }
    out << '\n';
    const std::size_t per_row = static_cast<std::size_t>(classes);
    for (std::size_t r = 0; r * per_row < report.odds_ratios.size(); ++r) {
        const OddsRatioRow& first = report.odds_ratios[r * per_row];
        out << (first.covariate == 0 ? std::string("intercept") : covariate_names[static_cast<std::size_t>(first.covariate - 1)]);
        for (std::size_t k = 0; k < per_row; ++k) {
            out << ",\"" << format_odds_ratio(report.odds_ratios[r * per_row + k]) << '"';
        }
        out << '\n';
    }
}

/// Original-scale estimates: one row per parameter, "est (se)" per class.
inline void write_class_parameter_csv(std::ostream& out, const FitResult& f) {
    const ParameterLayout layout = f.layout();
    const auto per_class = static_cast<std::size_t>(layout.per_class());
    out << "parameter";
    for (int k = 1; k <= f.classes; ++k) {
        out << ",class" << k;
    }
    out << '\n';
    for (std::size_t i = 0; i < per_class; ++i) {
        const std::string& full = f.parameter_names[i];
        out << full.substr(full.find('.') + 1);
        for (int k = 0; k < f.classes; ++k) {
            const auto idx = static_cast<Eigen::Index>(static_cast<std::size_t>(k) * per_class + i);
            std::string cell = format_fixed(f.estimates[idx]);
            if (f.se_available) {
                cell += " (" + format_fixed(f.standard_errors[idx]) + ")";
            }
            out << ',' << cell;
        }
        out << '\n';
    }
}

inline void write_parameter_csv(std::ostream& out, const FitResult& f) {
    const OriginalScaleReport report = report_original_scale(f);
    out << "name,estimate,se,ci_lower,ci_upper,p_value\n";
    for (const ReportRow& r : report.parameters) {
        out << r.name << ',' << format_double(r.estimate) << ',' << format_double(r.se) << ',' << format_double(r.ci_lower) << ','
            << format_double(r.ci_upper) << ',' << format_double(r.p_value) << '\n';
    }
    const Eigen::Index g = f.layout().gating_offset();
    for (Eigen::Index i = g; i < f.estimates.size(); ++i) {
        const double se = f.standard_errors[i];
        const double p = std::isfinite(se) ? std::erfc(std::abs(f.estimates[i] / se) / std::sqrt(2.0)) : std::numeric_limits<double>::quiet_NaN();
        out << f.parameter_names[static_cast<std::size_t>(i)] << ',' << format_double(f.estimates[i]) << ',' << format_double(se) << ','
            << format_double(f.ci_lower[i]) << ',' << format_double(f.ci_upper[i]) << ',' << format_double(p) << '\n';
    }
}

inline void write_classes_csv(std::ostream& out, const FitResult& f) {
    out << "id,class";
    for (int k = 1; k <= f.classes; ++k) {
        out << ",posterior" << k;
    }
    out << '\n';
    for (std::size_t i = 0; i < f.ids.size(); ++i) {
        out << f.ids[i] << ',' << f.modal_class[i] + 1;
        for (int k = 0; k < f.classes; ++k) {
            out << ',' << format_double(f.posteriors(static_cast<Eigen::Index>(i), k));
        }
        out << '\n';
    }
}

inline void write_metrics_csv(std::ostream& out, const MetricReport& r) {
    out << "parameter,truth,mean_estimate,bias,relative_bias,empirical_se,rmse,relative_rmse,coverage,mc_se_bias,replications\n";
    for (const ParameterMetrics& m : r.parameters) {
        out << m.name << ',' << format_double(m.truth) << ',' << format_double(m.mean_estimate) << ',' << format_double(m.bias) << ','
            << format_double(m.relative_bias) << ',' << format_double(m.empirical_se) << ',' << format_double(m.rmse) << ','
            << format_double(m.relative_rmse) << ',' << format_double(m.coverage) << ',' << format_double(m.mc_se_bias) << ','
            << m.replications << '\n';
    }
}

inline void write_replications_csv(std::ostream& out, const MetricReport& r) {
    out << "attempt,seed,log_likelihood,accuracy,se_available";
    for (const std::string& n : r.parameter_names) {
        out << ',' << n;
    }
    out << '\n';
    for (const ReplicationRecord& rec : r.replications) {
        out << rec.attempt << ',' << rec.seed << ',' << format_double(rec.log_likelihood) << ',' << format_double(rec.accuracy) << ','
            << (rec.se_available ? 1 : 0);
        for (Eigen::Index i = 0; i < rec.estimates.size(); ++i) {
            out << ',' << format_double(rec.estimates[i]);
        }
        out << '\n';
    }
}

inline void write_comparison_csv(std::ostream& out, const ComparisonReport& r) {
    out << "attempt,seed,joint,y,z\n";
    for (const PairedAccuracy& p : r.rows) {
        out << p.attempt << ',' << p.seed << ',' << format_double(p.joint) << ',' << format_double(p.y_only) << ',' << format_double(p.z_only)
            << '\n';
    }
}

} // namespace pbgmm

#endif // PBGMM_IO_HPP
