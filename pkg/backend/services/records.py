"""
Record models shared across pipeline stages.

Everything that crosses a file boundary (commit dumps, function/graph/slice
streams, split and manifest documents) is a pydantic model defined here.
"""
from enum import Enum
from typing import Any, Optional

from pydantic import BaseModel, Field, model_validator

TOOL_VERSION = "1.0.0"


class CweLabel(str, Enum):
    CWE404 = "CWE-404"
    CWE835 = "CWE-835"
    CWE120 = "CWE-120"
    CWE672 = "CWE-672"
    CWE362 = "CWE-362"


# classifier order used by the ensemble vote and every per-CWE table
CWE_ORDER = (CweLabel.CWE404, CweLabel.CWE835, CweLabel.CWE120, CweLabel.CWE672, CweLabel.CWE362)


def parse_cwe(text: str) -> CweLabel:
    """Accept 'CWE-120', 'cwe120' or '120'."""
    digits = "".join(ch for ch in str(text) if ch.isdigit())
    for label in CweLabel:
        if label.value.endswith(f"-{digits}"):
            return label
    raise ValueError(f"Unknown CWE label: {text!r} (expected one of {[c.value for c in CweLabel]})")


class Role(str, Enum):
    VULNERABLE = "vulnerable"
    PATCHED = "patched"
    MUTATED = "mutated"


class MutationOp(str, Enum):
    RN = "rn"
    AI = "ai"
    DEL = "del"
    ADD = "add"
    RO = "ro"


MUTATION_OPS = (MutationOp.RN, MutationOp.AI, MutationOp.DEL, MutationOp.ADD, MutationOp.RO)


def parse_ops(text: Optional[str]) -> list[MutationOp]:
    """'rn,ai' -> [rn, ai] in canonical order; 'none' or '' -> []; None -> all."""
    if text is None or text.strip().lower() == "all":
        return list(MUTATION_OPS)
    wanted = {p.strip().lower() for p in text.split(",") if p.strip()}
    wanted.discard("none")
    unknown = wanted - {op.value for op in MutationOp}
    if unknown:
        raise ValueError(f"Unknown mutation operator(s): {sorted(unknown)}")
    return [op for op in MUTATION_OPS if op.value in wanted]


# Pydantic Models
class CommitRecord(BaseModel):
    """One commit as read from a dump or a local repository."""
    project: str = Field(..., description="Project name")
    sha: str = Field(..., description="Commit hash")
    message: str = Field("", description="Full commit message")
    diff: str = Field("", description="Unified diff with whole-function context")


class FunctionRecord(BaseModel):
    """One C function with provenance."""
    id: str = Field(..., description="project:sha12:function:v|p, or parent:op:seed for mutants")
    project: str
    sha: str
    cwe: CweLabel
    role: Role
    label: int = Field(..., ge=0, le=1)
    name: str = Field("", description="Function name")
    code: str
    parent_id: Optional[str] = None
    mutation: Optional[MutationOp] = None
    seed: Optional[int] = None

    @model_validator(mode="after")
    def _label_matches_role(self):
        expected = 0 if self.role == Role.PATCHED else 1
        if self.label != expected:
            raise ValueError(f"role {self.role.value} requires label {expected}, got {self.label}")
        if self.role == Role.MUTATED and (self.parent_id is None or self.mutation is None):
            raise ValueError("mutated records need parent_id and mutation")
        return self

    @property
    def pair_key(self) -> str:
        return f"{self.project}:{self.sha}"


class GraphRecord(BaseModel):
    """Serialized Cpg of one function."""
    function_id: str
    label: Optional[int] = None
    cwe: Optional[CweLabel] = None
    nodes: list[dict[str, Any]] = Field(default_factory=list, description="[{id, kind, code}]")
    edges: list[dict[str, int]] = Field(default_factory=list, description="[{src, dst, type}]")


class SliceRecord(BaseModel):
    """Slicing result of one vulnerable/patched pair."""
    pair_key: str
    vulnerable_id: str
    patched_id: str
    cwe: CweLabel
    s_del: list[int] = Field(default_factory=list)
    s_add: list[int] = Field(default_factory=list)
    related_v: list[int] = Field(default_factory=list)
    related_p: list[int] = Field(default_factory=list)
    frozen: list[int] = Field(default_factory=list, description="Statements of f_v mutation must keep")
    alignment: list[tuple[int, int]] = Field(default_factory=list, description="(patched stmt, vulnerable stmt)")


class DatasetSplit(BaseModel):
    """Function ids per split; mutants only ever join train."""
    train: list[str] = Field(default_factory=list)
    validation: list[str] = Field(default_factory=list)
    test: list[str] = Field(default_factory=list)

    def split_of(self, record_id: str) -> Optional[str]:
        for name in ("train", "validation", "test"):
            if record_id in getattr(self, name):
                return name
        return None


class RunManifest(BaseModel):
    """Written next to every command's outputs; no wall-clock fields."""
    command: str
    version: str = TOOL_VERSION
    seed: int = 0
    config: dict[str, Any] = Field(default_factory=dict)
    outputs: list[str] = Field(default_factory=list)
