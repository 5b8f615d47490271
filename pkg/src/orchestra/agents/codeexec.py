"""Coding agent: run a code snippet in a resource-limited child process."""

from __future__ import annotations

import os
import re
import resource
import signal
import subprocess
import sys
import tempfile
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from ..errors import MemoryLimit, NonZeroExit, TimeLimit

GUARD = Path(__file__).with_name("sandbox_guard.py")
DEFAULT_COMMAND = (sys.executable, "-I", "-B", str(GUARD), "{script}")

_FENCE_RE = re.compile(r"```[^\n`]*\n(.*?)```", re.DOTALL)

# Caps the number of sandboxes alive at once across all trajectories.
_SLOTS = threading.BoundedSemaphore(4)


@dataclass(frozen=True)
class Limits:
    cpu_seconds: float = 10.0
    memory_bytes: int = 512 * 1024 * 1024
    max_output_bytes: int = 8 * 1024
    max_file_bytes: int = 16 * 1024 * 1024


@dataclass(frozen=True)
class CodeResult:
    stdout: str
    stderr: str
    exit_status: int
    stdout_truncated: bool = False
    stderr_truncated: bool = False


def strip_fences(text: str) -> str:
    """Code inside Markdown fences, joined; text without fences is returned stripped."""
    blocks = _FENCE_RE.findall(text)
    if blocks:
        return "\n".join(b.rstrip("\n") for b in blocks).strip("\n")
    return text.strip("\n")


def _truncate(raw: bytes, limit: int) -> tuple[str, bool]:
    if len(raw) <= limit:
        return raw.decode("utf-8", "replace"), False
    text = raw[:limit].decode("utf-8", "ignore")
    return text + f"\n[truncated: {len(raw)} bytes total, showing {limit}]", True


def _limit_child(limits: Limits):
    def apply() -> None:
        cpu = max(1, int(round(limits.cpu_seconds)))
        resource.setrlimit(resource.RLIMIT_CPU, (cpu, cpu + 1))
        resource.setrlimit(resource.RLIMIT_AS, (limits.memory_bytes, limits.memory_bytes))
        resource.setrlimit(resource.RLIMIT_FSIZE, (limits.max_file_bytes, limits.max_file_bytes))
        resource.setrlimit(resource.RLIMIT_CORE, (0, 0))
        os.umask(0o077)

    return apply


def _kill_group(pid: int) -> None:
    try:
        os.killpg(pid, signal.SIGKILL)
    except (ProcessLookupError, PermissionError):
        pass


def run(
    payload: str,
    limits: Limits = Limits(),
    command: Sequence[str] = DEFAULT_COMMAND,
    suffix: str = ".py",
) -> CodeResult:
    """Execute ``payload`` in a fresh temporary directory and return its streams.

    Raises TimeLimit or MemoryLimit when a limit trips, and NonZeroExit (with
    the captured streams on ``.result``) for any other failing exit status.
    """
    code = strip_fences(payload)
    with _SLOTS, tempfile.TemporaryDirectory(prefix="orchestra-sbx-") as workdir:
        script = Path(workdir) / f"temp{suffix}"
        script.write_text(code + "\n", encoding="utf-8")
        argv = [part.replace("{script}", str(script)) for part in command]
        env = {"PATH": os.environ.get("PATH", "/usr/bin:/bin"), "HOME": workdir, "TMPDIR": workdir, "LANG": "C.UTF-8"}
        proc = subprocess.Popen(
            argv,
            cwd=workdir,
            env=env,
            stdin=subprocess.DEVNULL,
            stdout=subprocess.PIPE,
            stderr=subprocess.PIPE,
            preexec_fn=_limit_child(limits),
            start_new_session=True,
        )
        timed_out = False
        try:
            out, err = proc.communicate(timeout=limits.cpu_seconds)
        except subprocess.TimeoutExpired:
            timed_out = True
            _kill_group(proc.pid)
            out, err = proc.communicate()
        finally:
            _kill_group(proc.pid)

    stdout, t_out = _truncate(out, limits.max_output_bytes)
    stderr, t_err = _truncate(err, limits.max_output_bytes)
    result = CodeResult(stdout, stderr, proc.returncode, t_out, t_err)
    if timed_out or proc.returncode in (-signal.SIGXCPU, -signal.SIGKILL):
        raise TimeLimit(f"time limit of {limits.cpu_seconds}s exceeded", result)
    if proc.returncode != 0 and "MemoryError" in stderr:
        raise MemoryLimit(f"memory limit of {limits.memory_bytes} bytes exceeded", result)
    if proc.returncode != 0:
        raise NonZeroExit(f"exit status {proc.returncode}\nstdout:\n{stdout}\nstderr:\n{stderr}", result)
    return result


class CodeExecAgent:
    def __init__(self, limits: Limits = Limits(), command: Sequence[str] = DEFAULT_COMMAND, suffix: str = ".py"):
        self.limits = limits
        self.command = tuple(command)
        self.suffix = suffix

    def __call__(self, payload: str) -> str:
        result = run(payload, self.limits, self.command, self.suffix)
        text = result.stdout
        if result.stderr:
            text += f"\n[stderr]\n{result.stderr}"
        return text
