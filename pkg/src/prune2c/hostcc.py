"""Host C compiler plumbing: building emitted programs as binaries or
shared objects and calling into them for conformance checks."""

from __future__ import annotations

import ctypes
import os
import shlex
import shutil
import subprocess
from pathlib import Path

import numpy as np

from .errors import CompileError
from .cemit import EmittedProgram

DEFAULT_CC = "cc -O3"

# Zero-warning bar for generated code.
STRICT_FLAGS = ("-std=c99", "-Wall", "-Wextra", "-Wpedantic", "-Werror")


def cc_command(cc: str | list[str] | None = None) -> list[str]:
    """Resolve the compiler command: explicit argument, PRUNE2C_CC, CC,
    then `cc -O3`."""
    if cc is None:
        cc = os.environ.get("PRUNE2C_CC") or os.environ.get("CC") or DEFAULT_CC
    if isinstance(cc, str):
        return shlex.split(cc)
    return list(cc)


def have_cc(cc: str | list[str] | None = None) -> bool:
    cmd = cc_command(cc)
    return bool(cmd) and shutil.which(cmd[0]) is not None


def run_cc(args: list[str], cwd: Path) -> None:
    proc = subprocess.run(args, cwd=cwd, capture_output=True, text=True)
    if proc.returncode != 0:
        raise CompileError(
            f"compiler failed ({' '.join(args)}): exit {proc.returncode}",
            stderr=proc.stderr,
        )
    if proc.stderr.strip():
        # Treat any diagnostic as a failure; emitted code must be warning-free.
        raise CompileError(f"compiler emitted warnings: {' '.join(args)}",
                           stderr=proc.stderr)


def write_and_compile_shared(
    prog: EmittedProgram,
    work_dir: str | Path,
    cc: str | list[str] | None = None,
    strict: bool = True,
) -> Path:
    """Write sources and build nn.so for in-process conformance checks."""
    work_dir = Path(work_dir)
    prog.write(work_dir)
    out = work_dir / "nn.so"
    args = cc_command(cc) + (list(STRICT_FLAGS) if strict else [])
    args += ["-shared", "-fPIC", "nn.c", "weights.c", "-o", str(out), "-lm"]
    run_cc(args, cwd=work_dir)
    return out


def compile_binary(
    work_dir: str | Path,
    sources: list[str],
    out_name: str,
    cc: str | list[str] | None = None,
    strict: bool = True,
) -> Path:
    work_dir = Path(work_dir)
    out = work_dir / out_name
    args = cc_command(cc) + (list(STRICT_FLAGS) if strict else [])
    args += sources + ["-o", str(out), "-lm"]
    run_cc(args, cwd=work_dir)
    return out


class CompiledModel:
    """ctypes wrapper over a compiled nn.so exposing nn_inference."""

    def __init__(self, lib_path: str | Path, input_len: int, output_len: int):
        self.input_len = input_len
        self.output_len = output_len
        self._lib = ctypes.CDLL(str(lib_path))
        self._fn = self._lib.nn_inference
        self._fn.restype = ctypes.c_int
        self._fn.argtypes = [
            ctypes.POINTER(ctypes.c_float),
            ctypes.POINTER(ctypes.c_float),
        ]

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.ascontiguousarray(x, dtype=np.float32).reshape(-1)
        if x.size != self.input_len:
            raise ValueError(f"expected {self.input_len} inputs, got {x.size}")
        out = np.zeros(self.output_len, dtype=np.float32)
        rc = self._fn(
            x.ctypes.data_as(ctypes.POINTER(ctypes.c_float)),
            out.ctypes.data_as(ctypes.POINTER(ctypes.c_float)),
        )
        if rc != 0:
            raise CompileError(f"nn_inference returned {rc}")
        return out
