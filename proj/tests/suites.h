// Acceptance suites, shared by the acceptance binary and `wdgrl verify`.
#ifndef WDGRL_TESTS_SUITES_H_
#define WDGRL_TESTS_SUITES_H_

#include <filesystem>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

namespace suites {

struct Options {
  std::filesystem::path cli;      // wdgrl binary, for the determinism suite
  std::filesystem::path scratch;  // working directory for run artifacts
  std::ostream* log = nullptr;    // progress and extra measurements
};

struct Outcome {
  bool pass = false;
  std::string detail;  // measured values against their thresholds
};

struct Suite {
  int id;
  std::string name;
  bool slow;
  double budget_seconds;  // 0: no limit
  std::function<Outcome(const Options&)> run;
};

const std::vector<Suite>& all();

// Runs the selected suites (all when ids is empty), prints one
// "criterion <id> <name>: PASS|FAIL (<detail>) [<seconds>s]" line per suite
// and returns the number of failures. Overrunning the budget is a failure.
int run(const std::vector<int>& ids, const Options& opts, std::ostream& out);

}  // namespace suites

#endif  // WDGRL_TESTS_SUITES_H_
