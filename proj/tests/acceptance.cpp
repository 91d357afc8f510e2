// Runs the built `mamforge selftest` once and reports one line per
// acceptance criterion. Criteria 1-11 are read from the selftest output;
// criterion 12 checks its exit status and wall time.

#include <array>
#include <chrono>
#include <cstdio>
#include <iostream>
#include <map>
#include <cstdlib>
#include <string>
#include <sys/wait.h>

#ifndef MAMFORGE_CLI_PATH
#error "MAMFORGE_CLI_PATH must name the mamforge executable"
#endif

namespace {

constexpr double kTimeLimitSeconds = 15.0 * 60.0;

}  // namespace

int main() {
  const std::string cmd = std::string("\"") + MAMFORGE_CLI_PATH + "\" selftest --manifest /dev/null 2>&1";
  setenv("MAMFORGE_THREADS", "1", 1);  // timing limits are single-threaded
  const auto t0 = std::chrono::steady_clock::now();
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) {
    std::cout << "criterion 12: FAIL | could not start " << MAMFORGE_CLI_PATH << '\n';
    return 1;
  }
  std::map<int, std::string> lines;
  std::string output, line;
  std::array<char, 4096> buf{};
  while (fgets(buf.data(), static_cast<int>(buf.size()), pipe)) {
    line += buf.data();
    if (line.empty() || line.back() != '\n') continue;
    output += line;
    int id = 0;
    if (std::sscanf(line.c_str(), "criterion %d:", &id) == 1) {
      line.pop_back();
      lines[id] = line;
      std::cout << line << '\n' << std::flush;
    }
    line.clear();
  }
  const int status = pclose(pipe);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const int code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;

  bool all = true;
  for (int id = 1; id <= 11; ++id) {
    const auto it = lines.find(id);
    if (it == lines.end()) {
      std::cout << "criterion " << id << ": FAIL | missing from selftest output\n";
      all = false;
    } else if (it->second.find(": PASS |") == std::string::npos) {
      all = false;
    }
  }
  const bool c12 = code == 0 && seconds < kTimeLimitSeconds && all;
  std::cout << "criterion 12: " << (c12 ? "PASS" : "FAIL") << " | selftest end to end | exit=" << code
            << " wall=" << seconds << " s (limit " << kTimeLimitSeconds << " s)\n";
  if (!all || code != 0) std::cout << "---- selftest output ----\n" << output;
  return all && c12 ? 0 : 1;
}
