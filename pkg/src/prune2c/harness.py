"""Instantiation of the C harness templates (bench and conform mains).

The templates themselves are static assets living in the `c-runtime/`
directory at the repository root (overridable via the PRUNE2C_HARNESS_DIR
environment variable); instantiation is pure text substitution of
`@NAME@` tokens. The bench program prints one microseconds-per-inference
decimal per timed repetition and nothing else on stdout; the conform
program maps raw little-endian float32 vectors from stdin to raw float32
outputs on stdout.
"""

from __future__ import annotations

import os
import re
from pathlib import Path

from .errors import HarnessError

HARNESS_DIR_ENV = "PRUNE2C_HARNESS_DIR"

TEMPLATE_FILES = {"bench": "bench.c.in", "conform": "conform.c.in"}

REQUIRED_PLACEHOLDERS = {
    "bench": ("INPUT_LEN", "OUTPUT_LEN", "REPS", "INNER_ITERS"),
    "conform": ("INPUT_LEN", "OUTPUT_LEN"),
}

_TOKEN = re.compile(r"@([A-Z_]+)@")


def find_template_dir() -> Path:
    """Locate the harness template directory.

    Checks PRUNE2C_HARNESS_DIR, then walks up from both this package and
    the working directory looking for `c-runtime/templates`.
    """
    env = os.environ.get(HARNESS_DIR_ENV)
    if env:
        p = Path(env)
        if p.is_dir():
            return p
        raise HarnessError(f"{HARNESS_DIR_ENV}={env} is not a directory")
    candidates = []
    for start in (Path(__file__).resolve(), Path.cwd().resolve()):
        candidates.extend(parent / "c-runtime" / "templates" for parent in start.parents)
    for c in candidates:
        if c.is_dir():
            return c
    raise HarnessError(
        "harness templates not found; set PRUNE2C_HARNESS_DIR to the "
        "c-runtime/templates directory"
    )


def load_template(kind: str, template_dir: str | Path | None = None) -> str:
    if kind not in TEMPLATE_FILES:
        raise HarnessError(f"unknown harness kind '{kind}'")
    directory = Path(template_dir) if template_dir else find_template_dir()
    path = directory / TEMPLATE_FILES[kind]
    if not path.is_file():
        raise HarnessError(f"harness template missing: {path}")
    return path.read_text()


def instantiate_harness(
    kind: str,
    params: dict,
    template_text: str | None = None,
    template_dir: str | Path | None = None,
) -> str:
    """Fill a harness template's @PLACEHOLDER@ tokens with integer values.

    Raises if a required placeholder is missing from `params` or if any
    token is left unresolved afterwards.
    """
    text = template_text if template_text is not None else load_template(kind, template_dir)
    required = REQUIRED_PLACEHOLDERS.get(kind, ())
    missing = [name for name in required if name not in params]
    if missing:
        raise HarnessError(f"missing harness placeholders: {missing}")
    for name, value in params.items():
        text = text.replace(f"@{name}@", str(int(value)))
    leftover = sorted(set(_TOKEN.findall(text)))
    if leftover:
        raise HarnessError(f"unresolved harness placeholders: {leftover}")
    return text
