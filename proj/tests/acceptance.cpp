// Runs every acceptance criterion and prints one line per criterion.
#include <algorithm>
#include <cstdlib>
#include <exception>
#include <iostream>

#include "attnflow/verification.hpp"

int main() {
  try {
    attnflow::VerifyOptions opts;
    if (const char* t = std::getenv("ATTNFLOW_THREADS")) opts.threads = std::max(1, std::atoi(t));
    const auto results = attnflow::run_verification(opts);
    int failed = 0;
    for (const auto& r : results) {
      std::cout << attnflow::format_result_line(r) << '\n';
      if (!r.passed) ++failed;
    }
    std::cout << (results.size() - failed) << '/' << results.size() << " criteria passed\n";
    return failed == 0 ? 0 : 1;
  } catch (const std::exception& e) {
    std::cerr << "acceptance: " << e.what() << '\n';
    return 2;
  }
}
