#pragma once

namespace baryir::cli {

// Entry point for the `baryir` binary. Exit codes: 0 success, 1 usage or
// input error, 2 numerical abort.
int cli_main(int argc, const char* const* argv);

}  // namespace baryir::cli
