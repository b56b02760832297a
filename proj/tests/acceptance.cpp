#include <cstdio>
#include <string>

#include "phladder/acceptance.hpp"

int main() {
  using namespace phl;
  std::vector<CriterionResult> failed;
  for (int id : all_criteria()) {
    auto r = run_criterion(id);
    std::printf("[%s] %2d %-40s %7.1fs  %s\n", verdict_name(r.verdict), r.id, r.name.c_str(), r.seconds,
                r.detail.c_str());
    std::fflush(stdout);
    if (r.blocking_failure()) failed.push_back(r);
  }
  for (const auto& r : failed)
    std::fprintf(stderr, "acceptance failed: criterion %d (%s)\n", r.id, r.name.c_str());
  return failed.empty() ? 0 : 1;
}
