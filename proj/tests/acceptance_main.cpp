// Dedicated acceptance runner: executes every criterion at its stated
// tolerance and prints one PASS/FAIL line per criterion. Exit code is
// non-zero when any criterion fails.

#include <filesystem>
#include <iostream>

#include "seqrec/acceptance.hpp"

int main() {
    seqrec::AcceptanceOptions opts;
    opts.work_dir =
        (std::filesystem::temp_directory_path() / "seqrec_acceptance_ctest").string();
    auto results = seqrec::run_acceptance(opts, std::cout);
    return seqrec::all_passed(results) ? 0 : 1;
}
