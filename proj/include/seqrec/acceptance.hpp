#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace seqrec {

struct CriterionResult {
    int id = 0;
    std::string name;
    bool pass = false;
    double seconds = 0;
    std::string details;
};

struct AcceptanceOptions {
    std::string work_dir;          // scratch directory for artifacts; temp dir when empty
    bool tamper_gradient = false;  // negative control: corrupt one gradient entry
    int only_criterion = 0;        // run a single criterion by id (0 = all)
};

/// Runs every acceptance criterion, printing one PASS/FAIL line per criterion
/// to `log`. Returns the per-criterion results.
std::vector<CriterionResult> run_acceptance(const AcceptanceOptions& opts, std::ostream& log);

bool all_passed(const std::vector<CriterionResult>& results);
std::string acceptance_report_json(const std::vector<CriterionResult>& results);

}  // namespace seqrec
