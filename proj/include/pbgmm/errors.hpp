#ifndef PBGMM_ERRORS_HPP
#define PBGMM_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace pbgmm {

class InvalidInput : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Every entry of an individual's outcome vector is masked out.
class EmptyMoments : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A covariance that should be positive definite failed to factor.
class NumericalFailure : public std::runtime_error {
public:
    NumericalFailure(const std::string& what, int class_index, std::string individual_id = {})
        : std::runtime_error(what), class_index_(class_index), individual_id_(std::move(individual_id)) {}

    int class_index() const noexcept { return class_index_; }
    const std::string& individual_id() const noexcept { return individual_id_; }

private:
    int class_index_;
    std::string individual_id_;
};

/// The objective was non-finite at every start.
class EstimationFailure : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class IngestionError : public std::runtime_error {
public:
    IngestionError(const std::string& what, std::string id, std::size_t line)
        : std::runtime_error(describe(what, id, line)), id_(std::move(id)), line_(line) {}

    static std::string describe(const std::string& what, const std::string& id, std::size_t line) {
        std::string s = what;
        if (!id.empty()) {
            s += " (id '" + id + "'";
            s += line > 0 ? ", line " + std::to_string(line) + ")" : ")";
        } else if (line > 0) {
            s += " (line " + std::to_string(line) + ")";
        }
        return s;
    }

    const std::string& id() const noexcept { return id_; }
    std::size_t line() const noexcept { return line_; }

private:
    std::string id_;
    std::size_t line_;
};

class InvalidCondition : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class UndefinedKappa : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

} // namespace pbgmm

#endif // PBGMM_ERRORS_HPP
