#pragma once

#include <ostream>

namespace d2a {

// Runs the built-in numeric sanity suite and prints one line per property.
// Returns the number of failed properties (0 when healthy).
// `inject_fault` deliberately corrupts one analytic convolution gradient so
// harnesses can confirm the suite actually detects broken math.
int run_selftest(std::ostream& out, bool inject_fault = false);

}  // namespace d2a
