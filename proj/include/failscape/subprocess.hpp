#pragma once

#include <map>
#include <string>
#include <vector>

namespace failscape {

struct ProcessResult {
  int exit_code = -1;  // -1 when killed or not exited normally
  bool timed_out = false;
  std::string stdout_text;
  std::string stderr_text;
  double seconds = 0.0;
};

// fork/exec with captured stdout/stderr. On timeout the child's process
// group is killed. Throws Error(kIo) when the process cannot be started.
ProcessResult run_process(const std::vector<std::string>& argv, double timeout_s,
                          const std::map<std::string, std::string>& extra_env = {});

}  // namespace failscape
