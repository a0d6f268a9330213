// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <iosfwd>

namespace dcsst::cli {

enum ExitCode : int { kOk = 0, kRuntime = 1, kUsage = 2, kVerification = 3 };

/// Runs one `dcsst` command. Human-readable output goes to `out`, errors to `err`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace dcsst::cli
