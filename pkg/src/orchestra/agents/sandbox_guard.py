"""Launcher that runs a script under an audit-hook policy.

Usage: ``python -I sandbox_guard.py script.py``. The working directory is the
only writable location; sockets, subprocesses and native-library loading are
refused.
"""

import os
import runpy
import sys

_BLOCKED_PREFIXES = ("subprocess.", "os.exec", "os.spawn", "os.posix_spawn", "ctypes.", "socket.", "pty.")
_BLOCKED = {"os.system", "os.fork", "os.forkpty", "os.kill", "os.killpg", "os.startfile", "webbrowser.open"}
_PATH_EVENTS = {
    "os.remove": 1,
    "os.rename": 2,
    "os.rmdir": 1,
    "os.mkdir": 1,
    "os.chmod": 1,
    "os.chown": 1,
    "os.link": 2,
    "os.symlink": 2,
    "os.truncate": 1,
    "os.utime": 1,
    "shutil.rmtree": 1,
    "shutil.copyfile": 2,
    "shutil.move": 2,
}
_WRITE_FLAGS = os.O_WRONLY | os.O_RDWR | os.O_CREAT | os.O_APPEND | os.O_TRUNC


def main() -> None:
    workdir = os.path.realpath(os.getcwd())
    script = sys.argv[1]

    def inside(path) -> bool:
        if isinstance(path, int):
            return True  # already-open descriptor
        try:
            resolved = os.path.realpath(os.fsdecode(path))
        except (TypeError, ValueError):
            return False
        return resolved == workdir or resolved.startswith(workdir + os.sep)

    def hook(event, args):
        if event == "open":
            path, mode, flags = (list(args) + [None, None, None])[:3]
            writing = (isinstance(mode, str) and any(c in mode for c in "wax+")) or (
                isinstance(flags, int) and flags & _WRITE_FLAGS
            )
            if writing and path is not None and not inside(path):
                raise PermissionError(f"sandbox: write outside working directory blocked: {path}")
        elif event in _BLOCKED or event.startswith(_BLOCKED_PREFIXES):
            if event in ("socket.getaddrinfo", "socket.gethostbyname"):
                raise PermissionError("sandbox: network access disabled")
            raise PermissionError(f"sandbox: {event} is not permitted")
        elif event in _PATH_EVENTS:
            for p in args[: _PATH_EVENTS[event]]:
                if p is not None and not inside(p):
                    raise PermissionError(f"sandbox: {event} outside working directory blocked: {p}")

    sys.argv = sys.argv[1:]
    sys.path.insert(0, workdir)
    sys.addaudithook(hook)
    runpy.run_path(script, run_name="__main__")


if __name__ == "__main__":
    main()
