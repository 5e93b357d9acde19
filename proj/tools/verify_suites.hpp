#pragma once

#include <iosfwd>

namespace msdcnn::verify {

struct VerifyOptions {
  // Deliberately corrupts one analytic gradient before checking it, to prove
  // the suites can actually fail.  Wired to the hidden --inject-fault flag.
  bool inject_fault = false;
};

// Runs every oracle suite, one PASS/FAIL line per suite on `out`.
// Returns true iff all suites pass.
bool run_all(const VerifyOptions& options, std::ostream& out);

}  // namespace msdcnn::verify
