#pragma once

// POSIX child process with its stdin/stdout connected to non-blocking pipes.

#include <chrono>
#include <string>
#include <signal.h>
#include <sys/types.h>

namespace qmcssa::detail {

class ChildProcess {
public:
    /// Starts `/bin/sh -c command`. Throws ConfigError if the process cannot
    /// be created.
    explicit ChildProcess(const std::string& command);
    ~ChildProcess();

    ChildProcess(const ChildProcess&) = delete;
    ChildProcess& operator=(const ChildProcess&) = delete;
    ChildProcess(ChildProcess&& other) noexcept;
    ChildProcess& operator=(ChildProcess&& other) noexcept;

    int input_fd() const { return to_child_; }
    int output_fd() const { return from_child_; }
    pid_t pid() const { return pid_; }

    void close_input();
    /// Closes stdin, waits up to `grace` for a clean exit, then SIGKILLs.
    void shutdown(std::chrono::milliseconds grace);
    void kill();

private:
    void release() noexcept;

    pid_t pid_ = -1;
    int to_child_ = -1;
    int from_child_ = -1;
};

/// Ignores SIGPIPE for the lifetime of the object so writes to a dead child
/// fail with EPIPE instead of terminating the process.
class ScopedIgnoreSigpipe {
public:
    ScopedIgnoreSigpipe();
    ~ScopedIgnoreSigpipe();
    ScopedIgnoreSigpipe(const ScopedIgnoreSigpipe&) = delete;
    ScopedIgnoreSigpipe& operator=(const ScopedIgnoreSigpipe&) = delete;

private:
    struct sigaction previous_ {};
};

} // namespace qmcssa::detail
