#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace oavm::selftest {

struct CriterionResult {
    std::string name;
    bool passed = false;
    std::string detail;
};

/// Runs the full oracle/invariant suite. Every criterion prints exactly one
/// PASS/FAIL line to `log`; exceptions inside a criterion fail it with the
/// message as detail.
std::vector<CriterionResult> run_all(std::ostream& log);

/// run_all plus a summary line; returns 0 when everything passed, 1 otherwise.
int run_with_exit_code(std::ostream& log);

}  // namespace oavm::selftest
