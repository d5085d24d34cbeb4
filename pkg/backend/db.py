"""
Centralized record-store management.

Records live as JSON lines under one data directory, resolved lazily from
PATCHGRAPH_DATA_DIR unless a caller passes its own root. Table accessor
functions return a RecordTable scoped to one file, so callers never build
paths themselves. Serialization is canonical: sorted keys, compact
separators, UTF-8, one record per line.
"""
import json
import logging
import os
from pathlib import Path
from typing import Any, Iterable, Iterator, Optional

logger = logging.getLogger(__name__)

# Global store state - lazy initialized
_data_dir: Optional[Path] = None


def get_data_dir() -> Path:
    """Get or resolve the data directory (lazy initialization)."""
    global _data_dir
    if _data_dir is None:
        _data_dir = Path(os.environ.get("PATCHGRAPH_DATA_DIR", "data"))
        logger.info(f"Record store at {_data_dir}")
    return _data_dir


def close_connection():
    global _data_dir
    _data_dir = None


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def _matches(row: dict, filters: Optional[dict]) -> bool:
    for k, v in (filters or {}).items():
        if isinstance(v, dict) and "$in" in v:
            if row.get(k) not in v["$in"]:
                return False
        elif row.get(k) != v:
            return False
    return True


class RecordTable:
    """
    One JSON-lines file. Inserts append; reads stream the file top to bottom,
    so insertion order is the only order.
    """

    def __init__(self, table_name: str, root: Optional[Path] = None):
        self.table_name = table_name
        self._root = Path(root) if root is not None else None

    @property
    def path(self) -> Path:
        return (self._root or get_data_dir()) / f"{self.table_name}.jsonl"

    def _rows(self) -> Iterator[dict]:
        if not self.path.is_file():
            return
        with self.path.open("r", encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    yield json.loads(line)

    # -- Insert --
    def insert_many(self, rows: Iterable[dict]) -> int:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        n = 0
        with self.path.open("a", encoding="utf-8", newline="\n") as fh:
            for row in rows:
                fh.write(canonical_json(row) + "\n")
                n += 1
        return n

    # -- Select --
    def find_many(self, filters: Optional[dict] = None) -> list[dict]:
        return [r for r in self._rows() if _matches(r, filters)]

    # -- Reset --
    def reset(self) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.write_text("", encoding="utf-8")


def write_document(name: str, obj: Any, root: Optional[Path] = None) -> Path:
    """Single pretty-printed JSON document (split, stats, manifest)."""
    path = Path(root or get_data_dir()) / name
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    return path


def read_document(name: str, root: Optional[Path] = None) -> Any:
    path = Path(root or get_data_dir()) / name
    if not path.is_file():
        raise FileNotFoundError(f"{name} not found in {path.parent}")
    return json.loads(path.read_text(encoding="utf-8"))


# ---------------------------------------------------------------------------
# Table accessor helpers
# ---------------------------------------------------------------------------

def functions_collection(root: Optional[Path] = None) -> RecordTable:
    return RecordTable("functions", root)


def graphs_collection(root: Optional[Path] = None) -> RecordTable:
    return RecordTable("graphs", root)


def slices_collection(root: Optional[Path] = None) -> RecordTable:
    return RecordTable("slices", root)
