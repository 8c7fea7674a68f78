#pragma once

#include <signal.h>

// Blocks SIGINT/SIGTERM in every thread started afterwards; call before
// spawning threads, then wait_for_shutdown() on the main thread.
inline sigset_t block_shutdown_signals() {
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);
  return set;
}

inline int wait_for_shutdown(const sigset_t& set) {
  int sig = 0;
  sigwait(&set, &sig);
  return sig;
}
