#pragma once

#include <exception>
#include <vector>

#include "hscm/exec.hpp"

namespace hscm::detail {

// Runs task(i) for i in [0, count), serially or with OpenMP. Exceptions are
// captured per task and the one with the lowest index is rethrown, so both
// paths fail identically.
template <typename Task>
void run_tasks(int count, ExecPolicy policy, Task&& task) {
  std::vector<std::exception_ptr> errors(count);
#pragma omp parallel for schedule(dynamic) if (policy == ExecPolicy::parallel)
  for (int i = 0; i < count; ++i) {
    try {
      task(i);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace hscm::detail
