#pragma once

// Child-process helpers: captured one-shot commands (runners, hooks) and
// long-lived supervised children (harness).

#include <sys/types.h>

#include <atomic>
#include <chrono>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace vc::process {

struct CommandResult {
  int exit_code = -1;        // valid when exited normally
  bool exited = false;
  bool timed_out = false;
  bool cancelled = false;
  bool spawn_failed = false;
  std::string output;        // captured stdout
};

/// Runs argv, capturing stdout. Kills the child on timeout or when `cancel`
/// becomes true.
CommandResult run_capture(const std::vector<std::string>& argv,
                          std::chrono::milliseconds timeout = std::chrono::milliseconds{60000},
                          const std::atomic<bool>* cancel = nullptr);

/// Wraps a user-provided shell command so that `args` follow it as "$@".
std::vector<std::string> shell_command(const std::string& command, const std::vector<std::string>& args);

class Child {
 public:
  Child() = default;
  /// stdout/stderr go to `log_path` (appended) when it is non-empty.
  static Child spawn(const std::vector<std::string>& argv, const std::filesystem::path& log_path);

  Child(Child&& other) noexcept;
  Child& operator=(Child&& other) noexcept;
  Child(const Child&) = delete;
  Child& operator=(const Child&) = delete;
  ~Child();

  pid_t pid() const { return pid_; }
  bool running();
  void signal(int sig) const;
  /// Returns the wait status, or nullopt when still running after `timeout`.
  std::optional<int> wait(std::chrono::milliseconds timeout);
  /// SIGTERM, then SIGKILL after `grace`.
  void terminate(std::chrono::milliseconds grace = std::chrono::milliseconds{3000});

 private:
  pid_t pid_ = -1;
  bool reaped_ = true;
};

}  // namespace vc::process
