"""
Shared command plumbing: effective settings, stdout records, run manifests.
"""
import sys
from pathlib import Path
from typing import Any, Optional

from pydantic import BaseModel, Field

import db as database
from services.records import RunManifest


class Settings(BaseModel):
    """Environment-derived defaults; command-line flags override them."""
    data_dir: str = Field("data", description="Default record-store directory")
    seed: int = Field(0, description="Default seed")
    max_nodes: int = Field(800, ge=1, description="Cpg node limit")
    workers: int = Field(1, ge=1, description="Threads for per-function stages and gradient shards")


def emit(obj: Any) -> None:
    """One machine-readable record on stdout."""
    sys.stdout.write(database.canonical_json(obj) + "\n")
    sys.stdout.flush()


def read_source(path: str) -> str:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"source file not found: {path}")
    return p.read_text(encoding="utf-8", errors="replace")


def write_manifest(out_dir, command: str, seed: int, config: dict, outputs: list,
                   name: Optional[str] = None) -> Path:
    manifest = RunManifest(command=command, seed=seed, config=config,
                           outputs=sorted(Path(o).name for o in outputs))
    return database.write_document(name or "manifest.json", manifest.model_dump(mode="json"), Path(out_dir))
