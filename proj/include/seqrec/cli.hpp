#pragma once

namespace seqrec {

/// Entry point for the seqrec command-line tool. Returns the process exit
/// code: 0 success, 1 user error, 2 internal contract violation.
int run_cli(int argc, const char* const* argv);

}  // namespace seqrec
