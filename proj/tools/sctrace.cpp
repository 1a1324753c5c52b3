// Minimal ptrace syscall tracer used to record fixture ground truth.
// Prints one "name(...) = ret" line per syscall made after the traced
// program's own execve completes, following forks and threads.
#include <sys/ptrace.h>
#include <sys/user.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cstdio>
#include <cstring>
#include <map>
#include <string>
#include <vector>

#include "sysid/syscall_table.hpp"

int main(int argc, char** argv) {
  std::vector<char*> args;
  std::FILE* out = stdout;
  int i = 1;
  if (i + 1 < argc && std::strcmp(argv[i], "-o") == 0) {
    out = std::fopen(argv[i + 1], "w");
    if (!out) {
      std::perror(argv[i + 1]);
      return 2;
    }
    i += 2;
  }
  if (i >= argc) {
    std::fprintf(stderr, "usage: sctrace [-o file] program [args...]\n");
    return 2;
  }
  for (; i < argc; ++i) args.push_back(argv[i]);
  args.push_back(nullptr);

  pid_t child = fork();
  if (child == 0) {
    ptrace(PTRACE_TRACEME, 0, nullptr, nullptr);
    raise(SIGSTOP);
    execv(args[0], args.data());
    _exit(127);
  }
  int status = 0;
  waitpid(child, &status, 0);
  ptrace(PTRACE_SETOPTIONS, child, nullptr,
         PTRACE_O_TRACESYSGOOD | PTRACE_O_TRACEEXEC | PTRACE_O_TRACEFORK |
             PTRACE_O_TRACEVFORK | PTRACE_O_TRACECLONE | PTRACE_O_EXITKILL);
  ptrace(PTRACE_SYSCALL, child, nullptr, nullptr);

  const auto& table = sysid::SyscallTable::latest();
  std::map<pid_t, bool> in_syscall;
  std::map<pid_t, long> pending;
  bool execed = false;  // the harness's own execve is not recorded
  bool skip_exec_exit = false;
  int exit_code = 0;
  int live = 1;
  while (live > 0) {
    pid_t pid = waitpid(-1, &status, __WALL);
    if (pid < 0) break;
    if (WIFEXITED(status) || WIFSIGNALED(status)) {
      if (pid == child) exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : 128 + WTERMSIG(status);
      --live;
      continue;
    }
    int sig = 0;
    if (WIFSTOPPED(status)) {
      int stop = WSTOPSIG(status);
      int event = status >> 16;
      if (stop == (SIGTRAP | 0x80)) {
        user_regs_struct regs{};
        ptrace(PTRACE_GETREGS, pid, nullptr, &regs);
        bool entering = !in_syscall[pid];
        in_syscall[pid] = entering;
        if (entering) {
          pending[pid] = static_cast<long>(regs.orig_rax);
          // exit and exit_group never return.
          if (execed && (regs.orig_rax == 60 || regs.orig_rax == 231)) {
            std::fprintf(out, "%s(...) = ?\n", table.display_name(regs.orig_rax).c_str());
          }
        } else if (skip_exec_exit && pid == child && pending[pid] == 59) {
          skip_exec_exit = false;
        } else if (execed && pending[pid] != 60 && pending[pid] != 231) {
          std::fprintf(out, "%s(...) = %lld\n",
                       table.display_name(static_cast<std::uint64_t>(pending[pid])).c_str(),
                       static_cast<long long>(regs.rax));
        }
      } else if (event == PTRACE_EVENT_EXEC) {
        skip_exec_exit = !execed;
        execed = true;
      } else if (event == PTRACE_EVENT_FORK || event == PTRACE_EVENT_VFORK ||
                 event == PTRACE_EVENT_CLONE) {
        ++live;
      } else if (stop != SIGTRAP && stop != SIGSTOP) {
        sig = stop;
      }
    }
    ptrace(PTRACE_SYSCALL, pid, nullptr, reinterpret_cast<void*>(static_cast<long>(sig)));
  }
  if (out != stdout) std::fclose(out);
  return exit_code;
}
