"""Run manifest: what a pipeline run consumed, did and emitted."""

from __future__ import annotations

import hashlib
import json
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterator

MANIFEST_FILENAME = "manifest.json"
MANIFEST_SCHEMA_VERSION = 1

STAGE_OK = "ok"
STAGE_FAILED = "failed"


class ManifestError(ValueError):
    """Unreadable or incompatible manifest."""


def file_sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


@dataclass
class StageRecord:
    name: str
    status: str
    started_at: str
    elapsed_s: float
    detail: str = ""


@dataclass
class ArtifactRecord:
    path: str  # relative to the output directory, forward slashes
    sha256: str | None  # None for the manifest itself
    size_bytes: int | None


@dataclass
class RunManifest:
    tool_version: str
    config_hash: str
    config: dict
    seeds: dict[str, int] = field(default_factory=dict)
    stages: list[StageRecord] = field(default_factory=list)
    artifacts: list[ArtifactRecord] = field(default_factory=list)
    completed: bool = False

    @contextmanager
    def stage(self, name: str) -> Iterator[StageRecord]:
        """Time a stage; a raised exception marks it failed and propagates."""
        record = StageRecord(name, STAGE_OK, datetime.now(timezone.utc).isoformat(timespec="seconds"), 0.0)
        start = time.perf_counter()
        try:
            yield record
        except BaseException as e:
            record.status = STAGE_FAILED
            record.detail = record.detail or str(e)
            raise
        finally:
            record.elapsed_s = round(time.perf_counter() - start, 3)
            self.stages.append(record)

    def stage_status(self, name: str) -> str | None:
        for record in self.stages:
            if record.name == name:
                return record.status
        return None

    def to_dict(self) -> dict:
        return {
            "schema_version": MANIFEST_SCHEMA_VERSION,
            "tool_version": self.tool_version,
            "config_hash": self.config_hash,
            "config": self.config,
            "seeds": dict(sorted(self.seeds.items())),
            "stages": [asdict(s) for s in self.stages],
            "artifacts": [asdict(a) for a in self.artifacts],
            "completed": self.completed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> RunManifest:
        if data.get("schema_version") != MANIFEST_SCHEMA_VERSION:
            raise ManifestError(f"unsupported manifest schema_version {data.get('schema_version')!r}")
        try:
            return cls(
                tool_version=data["tool_version"],
                config_hash=data["config_hash"],
                config=data["config"],
                seeds={k: int(v) for k, v in data.get("seeds", {}).items()},
                stages=[StageRecord(**s) for s in data.get("stages", [])],
                artifacts=[ArtifactRecord(**a) for a in data.get("artifacts", [])],
                completed=bool(data.get("completed", False)),
            )
        except (KeyError, TypeError) as e:
            raise ManifestError(f"malformed manifest: {e}") from e

    @classmethod
    def load(cls, path: Path) -> RunManifest:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError as e:
            raise ManifestError(f"manifest not found: {path}") from e
        except json.JSONDecodeError as e:
            raise ManifestError(f"{path}: invalid JSON ({e})") from e
        return cls.from_dict(data)

    def collect_artifacts(self, out_dir: Path) -> None:
        """List every file under ``out_dir`` with its hash."""
        out_dir = Path(out_dir)
        records = []
        for path in sorted(p for p in out_dir.rglob("*") if p.is_file()):
            rel = path.relative_to(out_dir).as_posix()
            if rel == MANIFEST_FILENAME:
                continue
            records.append(ArtifactRecord(rel, file_sha256(path), path.stat().st_size))
        records.append(ArtifactRecord(MANIFEST_FILENAME, None, None))
        self.artifacts = records

    def write(self, out_dir: Path) -> Path:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        self.collect_artifacts(out_dir)
        path = out_dir / MANIFEST_FILENAME
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path

    def unlisted_files(self, out_dir: Path) -> list[str]:
        """Files present in ``out_dir`` but missing from the artifact list."""
        out_dir = Path(out_dir)
        listed = {a.path for a in self.artifacts}
        return sorted(
            p.relative_to(out_dir).as_posix()
            for p in out_dir.rglob("*")
            if p.is_file() and p.relative_to(out_dir).as_posix() not in listed
        )
