#pragma once

#include <stdexcept>
#include <string>

namespace qfeel {

// Process exit codes used by the CLI. Library errors carry the code they map to.
enum class ExitCode : int {
    ok = 0,
    failure = 1,
    config = 2,
    infeasible = 3,
    fit_failure = 4,
    non_convergence = 5,
};

class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what, ExitCode code = ExitCode::failure)
        : std::runtime_error(what), code_(code) {}
    ExitCode code() const noexcept { return code_; }

private:
    ExitCode code_;
};

struct InvalidInput : Error {
    explicit InvalidInput(const std::string& what) : Error(what, ExitCode::config) {}
};

struct OutOfDomain : Error {
    explicit OutOfDomain(const std::string& what) : Error(what, ExitCode::config) {}
};

// Root-finding bracket does not straddle the target.
struct BracketError : Error {
    explicit BracketError(const std::string& what) : Error(what, ExitCode::infeasible) {}
};

struct Infeasible : Error {
    explicit Infeasible(const std::string& what) : Error(what, ExitCode::infeasible) {}
};

struct FitFailed : Error {
    explicit FitFailed(const std::string& what) : Error(what, ExitCode::fit_failure) {}
};

// Some loss value sits at or below the candidate optimum Z.
struct InfeasibleZ : FitFailed {
    explicit InfeasibleZ(const std::string& what) : FitFailed(what) {}
};

// Least-squares normal equations are singular (e.g. a constant trace).
struct DegenerateTrace : FitFailed {
    explicit DegenerateTrace(const std::string& what) : FitFailed(what) {}
};

struct NonConvergence : Error {
    NonConvergence(const std::string& what, double last_iterate)
        : Error(what, ExitCode::non_convergence), last_iterate_(last_iterate) {}
    double last_iterate() const noexcept { return last_iterate_; }

private:
    double last_iterate_;
};

struct Diverged : Error {
    explicit Diverged(const std::string& what) : Error(what, ExitCode::non_convergence) {}
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& what) : Error(what, ExitCode::config) {}
};

struct IoError : Error {
    explicit IoError(const std::string& what) : Error(what, ExitCode::failure) {}
};

}  // namespace qfeel
