#pragma once

namespace ris::cli {

// Entry point for the ris tool. Exit codes: 0 success, 1 validation error
// (bad arguments, malformed inputs), 2 runtime failure.
int run(int argc, const char* const* argv);

}  // namespace ris::cli
