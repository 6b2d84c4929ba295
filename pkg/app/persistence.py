from __future__ import annotations

import hashlib
import json
import logging
from datetime import datetime, timezone
from pathlib import Path
from threading import Lock
from typing import Any, Mapping

import pandas as pd

from app import __version__

logger = logging.getLogger(__name__)

RUNS_JSONL = "runs.jsonl"
FLOAT_FORMAT = "%.12g"

_RUNS_LOCK = Lock()


def ensure_storage(out_dir: Path) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    return out_dir


def config_hash(*parts: Any) -> str:
    """Stable short digest of the inputs that determine a run's output."""

    digest = hashlib.sha256()
    for part in parts:
        if isinstance(part, bytes):
            chunk = part
        elif isinstance(part, str):
            chunk = part.encode("utf-8")
        else:
            chunk = json.dumps(part, sort_keys=True, default=str).encode("utf-8")
        digest.update(len(chunk).to_bytes(8, "little"))
        digest.update(chunk)
    return digest.hexdigest()[:16]


def provenance_header(command: str, seed: int, digest: str, extra: Mapping[str, Any] | None = None) -> list[str]:
    lines = [
        f"# command: {command}",
        f"# version: {__version__}",
        f"# seed: {seed}",
        f"# config_hash: {digest}",
    ]
    for key, value in (extra or {}).items():
        lines.append(f"# {key}: {value}")
    return lines


def write_csv(path: Path, frame: pd.DataFrame, header: list[str]) -> Path:
    """Write ``#`` provenance lines followed by the CSV body."""

    path = Path(path)
    ensure_storage(path.parent)
    body = frame.to_csv(index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    with path.open("w", encoding="utf-8", newline="") as handle:
        for line in header:
            handle.write(line.rstrip() + "\n")
        handle.write(body)
    logger.info("Wrote CSV", extra={"path": str(path), "rows": int(len(frame))})
    return path


def read_csv(path: Path) -> tuple[dict[str, str], pd.DataFrame]:
    """Provenance header as a dict and the body as a frame."""

    header: dict[str, str] = {}
    with Path(path).open("r", encoding="utf-8") as handle:
        for line in handle:
            if not line.startswith("#"):
                break
            key, _, value = line[1:].partition(":")
            header[key.strip()] = value.strip()
    return header, pd.read_csv(path, comment="#")


def csv_body(path: Path) -> str:
    """The CSV text after the provenance header."""

    text = Path(path).read_text(encoding="utf-8")
    return "".join(line for line in text.splitlines(keepends=True) if not line.startswith("#"))


def append_run_record(out_dir: Path, summary: dict) -> Path:
    ensure_storage(out_dir)
    summary = dict(summary)
    summary.setdefault("finished_at", datetime.now(tz=timezone.utc).isoformat())
    path = Path(out_dir) / RUNS_JSONL
    with _RUNS_LOCK, path.open("a", encoding="utf-8") as handle:
        handle.write(json.dumps(summary, ensure_ascii=False, default=str) + "\n")
    logger.info("Logged run summary", extra={"command": summary.get("command"), "seed": summary.get("seed")})
    return path


__all__ = [
    "append_run_record",
    "config_hash",
    "csv_body",
    "ensure_storage",
    "provenance_header",
    "read_csv",
    "write_csv",
]
