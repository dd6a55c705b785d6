"""Run directory layout, manifest, and resumable JSON-lines output.

A run directory holds one subdirectory per stage. The manifest records
the effective config, the template digest, the tool version, and one
marker per completed stage with SHA-256 checksums of its outputs. It
deliberately contains no timestamps or absolute paths, so repeated runs
over identical inputs produce byte-identical files.
"""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path

STAGE_DIRS = ("splits", "features", "dedup", "eval", "judge", "report")
MANIFEST_NAME = "manifest.json"


class UpstreamMissingError(Exception):
    """A stage was invoked before its upstream stage completed."""


def init_run_dir(root: Path, run_id: str) -> Path:
    run_dir = root / "runs" / run_id
    for stage in STAGE_DIRS:
        (run_dir / stage).mkdir(parents=True, exist_ok=True)
    return run_dir


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_suffix(path.suffix + f".tmp.{os.getpid()}")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def load_manifest(run_dir: Path) -> dict:
    path = run_dir / MANIFEST_NAME
    if not path.exists():
        return {"stages": {}}
    with path.open(encoding="utf-8") as fh:
        return json.load(fh)


def save_manifest(run_dir: Path, manifest: dict) -> None:
    _atomic_write(
        run_dir / MANIFEST_NAME,
        json.dumps(manifest, indent=2, sort_keys=True, ensure_ascii=False) + "\n",
    )


def file_sha256(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def stage_complete(run_dir: Path, stage: str) -> bool:
    """A stage marker counts only while all its recorded outputs exist."""
    record = load_manifest(run_dir)["stages"].get(stage)
    if not record:
        return False
    return all((run_dir / rel).exists() for rel in record.get("outputs", {}))


def mark_stage(run_dir: Path, stage: str, outputs: list[Path], extra: dict | None = None) -> None:
    manifest = load_manifest(run_dir)
    record = {
        "outputs": {
            str(path.relative_to(run_dir)): file_sha256(path) for path in sorted(outputs)
        }
    }
    if extra:
        record.update(extra)
    manifest["stages"][stage] = record
    save_manifest(run_dir, manifest)


def write_jsonl(path: Path, records: list[dict]) -> None:
    lines = [json.dumps(rec, sort_keys=True, ensure_ascii=False) for rec in records]
    _atomic_write(path, "".join(line + "\n" for line in lines))


def read_jsonl(path: Path) -> list[dict]:
    records = []
    with path.open(encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records


def dump_json_line(record: dict) -> str:
    return json.dumps(record, sort_keys=True, ensure_ascii=False) + "\n"


def trim_partial_line(path: Path) -> None:
    """Drop a trailing partial line left by an interrupted append."""
    if not path.exists():
        return
    data = path.read_bytes()
    if data and not data.endswith(b"\n"):
        cut = data.rfind(b"\n") + 1
        with path.open("wb") as fh:
            fh.write(data[:cut])
