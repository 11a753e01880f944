"""Run manifests: the reproduction record written next to every artifact.

A manifest captures the command, the fully resolved configuration, the
master seed, wall-clock bounds, the code version, and content hashes of
the inputs, so a run can be replayed from the manifest alone.
"""

from __future__ import annotations

import hashlib
import os
import subprocess
from datetime import datetime, timezone

from . import __version__
from .configfile import parse_config_text, serialize_config


def utc_now() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def code_version() -> str:
    """git describe of the working tree, else the package version."""
    root = os.path.dirname(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            cwd=root, capture_output=True, text=True, timeout=10,
        )
        if out.returncode == 0 and out.stdout.strip():
            return out.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    return f"pkg-{__version__}"


def file_sha256(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def build_manifest(command: str, config_text: str, seed: int,
                   input_hashes=None, started: str = "",
                   finished: str = "") -> str:
    """Flat key-value manifest text; config keys are nested under config.*"""
    entries = {
        "command": command,
        "seed": str(seed),
        "started": started or utc_now(),
        "finished": finished or utc_now(),
        "code_version": code_version(),
    }
    for name, digest in sorted((input_hashes or {}).items()):
        entries[f"input.{name}"] = digest
    for key, value in parse_config_text(config_text).items():
        entries[f"config.{key}"] = value
    return serialize_config(entries)


def write_manifest(path: str, command: str, config_text: str, seed: int,
                   input_hashes=None, started: str = "",
                   finished: str = "") -> None:
    text = build_manifest(command, config_text, seed, input_hashes,
                          started, finished)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)
