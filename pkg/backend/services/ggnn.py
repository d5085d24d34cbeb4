"""
Edge-aware gated graph classifier and its baselines.

Node init      h_v = dropout(sum of the node's token embeddings)
Message        a_v = sum over in-edges (u, v, t) of relu([h_u ; e_t] W)      (edge_aware)
               a_v = sum over in-edges of h_u E_t                          (ggnn; E_t tied if requested)
Update         GRU(h_v, a_v) with shared weights across hops
GCN baseline   h_v' = relu((h_v + sum of in-neighbour states) E_hop)
Readout        y' = sigmoid(max-pool(H) W_out)

All graphs of a batch share one Tape as a disjoint union; segment sums and
segment maxes keep them apart.
"""
import logging
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional, Sequence

import numpy as np
from pydantic import BaseModel, Field

from services import checkpoint
from services.autodiff import Tape, Var
from services.cpg import NUM_EDGE_TYPES
from services.records import CweLabel

logger = logging.getLogger(__name__)

PAD, UNK = 0, 1
SPECIAL_TOKENS = ("<pad>", "<unk>")

DEFAULT_HOPS: dict[CweLabel, int] = {
    CweLabel.CWE404: 4,
    CweLabel.CWE835: 1,
    CweLabel.CWE120: 5,
    CweLabel.CWE672: 4,
    CweLabel.CWE362: 2,
}

GRU_PARAMS = ("W_z", "U_z", "b_z", "W_r", "U_r", "b_r", "W_h", "U_h", "b_h")


class Variant(str, Enum):
    EDGE_AWARE = "edge_aware"
    GGNN = "ggnn"
    GCN = "gcn"


class Hyperparameters(BaseModel):
    d: int = Field(128, ge=1, description="Node state width")
    d_edge: int = Field(128, ge=1, description="Edge-type embedding width")
    hops: int = Field(4, ge=0)
    dropout: float = Field(0.3, ge=0.0, lt=1.0)
    lr: float = Field(0.001, ge=0.0)
    batch: int = Field(64, ge=1)
    variant: Variant = Variant.EDGE_AWARE
    tie_edge_types: bool = Field(False, description="ggnn only: one matrix for every edge type")
    vocab_size: int = Field(2, ge=2)


# ---------------------------------------------------------------------------
# Vocabulary
# ---------------------------------------------------------------------------

class Vocabulary:
    """Token -> index; PAD=0, UNK=1, then frequency desc, lexicographic."""

    def __init__(self, tokens: Sequence[str]):
        self.tokens = list(tokens)
        self.index = {t: i for i, t in enumerate(self.tokens)}

    @classmethod
    def build(cls, token_lists: Iterable[Iterable[str]], min_freq: int = 3,
              cap: Optional[int] = None) -> "Vocabulary":
        counts = Counter(t for tokens in token_lists for t in tokens)
        kept = sorted((t for t, c in counts.items() if c >= min_freq and t not in SPECIAL_TOKENS),
                      key=lambda t: (-counts[t], t))
        if cap is not None:
            kept = kept[:max(0, cap - len(SPECIAL_TOKENS))]
        return cls(list(SPECIAL_TOKENS) + kept)

    def __len__(self) -> int:
        return len(self.tokens)

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.index.get(t, UNK) for t in tokens]


# ---------------------------------------------------------------------------
# Graph batches
# ---------------------------------------------------------------------------

@dataclass
class EncodedGraph:
    node_tokens: list[list[int]]
    edges: list[tuple[int, int, int]]
    label: int = 0
    graph_id: str = ""

    @property
    def num_nodes(self) -> int:
        return len(self.node_tokens)


def encode_graph(record: dict, vocab: Vocabulary) -> EncodedGraph:
    """Graph record (nodes/edges dicts) -> vocabulary indices."""
    nodes = sorted(record["nodes"], key=lambda n: n["id"])
    position = {n["id"]: i for i, n in enumerate(nodes)}
    return EncodedGraph(
        node_tokens=[vocab.encode(n["code"].split()) for n in nodes],
        edges=[(position[e["src"]], position[e["dst"]], int(e["type"])) for e in record["edges"]],
        label=int(record.get("label") or 0),
        graph_id=record.get("function_id", ""),
    )


@dataclass
class GraphBatch:
    token_ids: np.ndarray
    token_node: np.ndarray
    node_graph: np.ndarray
    edge_src: np.ndarray
    edge_dst: np.ndarray
    edge_type: np.ndarray
    labels: np.ndarray
    num_nodes: int
    num_graphs: int
    graph_ids: list[str] = field(default_factory=list)

    @classmethod
    def from_graphs(cls, graphs: Sequence[EncodedGraph]) -> "GraphBatch":
        token_ids, token_node, node_graph = [], [], []
        src, dst, etype = [], [], []
        offset = 0
        for g_index, g in enumerate(graphs):
            for v, toks in enumerate(g.node_tokens):
                token_ids.extend(toks)
                token_node.extend([offset + v] * len(toks))
            node_graph.extend([g_index] * g.num_nodes)
            for s, d, t in g.edges:
                if not 0 <= t < NUM_EDGE_TYPES:
                    raise ValueError(f"edge type {t} outside 0..{NUM_EDGE_TYPES - 1}")
                src.append(offset + s)
                dst.append(offset + d)
                etype.append(t)
            offset += g.num_nodes
        as_int = lambda xs: np.asarray(xs, dtype=np.int64)
        return cls(
            token_ids=as_int(token_ids), token_node=as_int(token_node), node_graph=as_int(node_graph),
            edge_src=as_int(src), edge_dst=as_int(dst), edge_type=as_int(etype),
            labels=np.asarray([g.label for g in graphs], dtype=np.float64).reshape(-1, 1),
            num_nodes=offset, num_graphs=len(graphs), graph_ids=[g.graph_id for g in graphs],
        )


# ---------------------------------------------------------------------------
# Model state
# ---------------------------------------------------------------------------

@dataclass
class ModelState:
    params: dict[str, np.ndarray]
    hyper: Hyperparameters
    vocabulary: list[str] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def save(self, path) -> None:
        checkpoint.save(path, self.params, self.hyper.model_dump(mode="json"), self.vocabulary, self.meta)

    @classmethod
    def load(cls, path) -> "ModelState":
        tensors, hyper, vocabulary, meta = checkpoint.load(path)
        return cls(params=tensors, hyper=Hyperparameters.model_validate(hyper),
                   vocabulary=vocabulary, meta=meta)

    def copy(self) -> "ModelState":
        return ModelState(params={k: v.copy() for k, v in self.params.items()},
                          hyper=self.hyper.model_copy(), vocabulary=list(self.vocabulary),
                          meta=dict(self.meta))


def parameter_shapes(hyper: Hyperparameters) -> dict[str, tuple[int, ...]]:
    d, de = hyper.d, hyper.d_edge
    shapes: dict[str, tuple[int, ...]] = {"E_token": (hyper.vocab_size, d)}
    if hyper.variant == Variant.EDGE_AWARE:
        shapes["E_edge"] = (NUM_EDGE_TYPES, de)
        shapes["W_msg"] = (d + de, d)
    elif hyper.variant == Variant.GGNN:
        if hyper.tie_edge_types:
            shapes["E_type"] = (d, d)
        else:
            for k in range(NUM_EDGE_TYPES):
                shapes[f"E_type_{k}"] = (d, d)
    else:
        for k in range(hyper.hops):
            shapes[f"E_hop_{k}"] = (d, d)
    if hyper.variant != Variant.GCN:
        for name in GRU_PARAMS:
            shapes[name] = (d,) if name.startswith("b_") else (d, d)
    shapes["W_out"] = (d, 1)
    return shapes


def init_model(hyper: Hyperparameters, seed: int = 0, vocabulary: Optional[Sequence[str]] = None) -> ModelState:
    """uniform(+-1/sqrt(d)) matrices, zero biases, normal(0, 0.1) embeddings."""
    rng = np.random.default_rng(seed)
    bound = 1.0 / np.sqrt(hyper.d)
    params = {}
    for name, shape in parameter_shapes(hyper).items():
        if name.startswith("b_"):
            params[name] = np.zeros(shape)
        elif name in ("E_token", "E_edge"):
            params[name] = rng.normal(0.0, 0.1, size=shape)
        else:
            params[name] = rng.uniform(-bound, bound, size=shape)
    return ModelState(params=params, hyper=hyper, vocabulary=list(vocabulary or []))


# ---------------------------------------------------------------------------
# Forward pass
# ---------------------------------------------------------------------------

def register(tape: Tape, params: dict[str, np.ndarray]) -> dict[str, Var]:
    return {name: tape.param(name, value) for name, value in sorted(params.items())}


def init_nodes(tape: Tape, p: dict[str, Var], batch: GraphBatch, hyper: Hyperparameters,
               train: bool = False, rng: Optional[np.random.Generator] = None) -> Var:
    emb = tape.embedding(p["E_token"], batch.token_ids)
    h = tape.row_sum(emb, batch.token_node, batch.num_nodes)
    return tape.dropout(h, hyper.dropout, train, rng)


def gru(tape: Tape, p: dict[str, Var], a: Var, h: Var) -> Var:
    def gate(w: str, u: str, b: str, hidden: Var) -> Var:
        return tape.add(tape.add(tape.matmul(a, p[w]), tape.matmul(hidden, p[u])), p[b])

    z = tape.sigmoid(gate("W_z", "U_z", "b_z", h))
    r = tape.sigmoid(gate("W_r", "U_r", "b_r", h))
    h_cand = tape.tanh(gate("W_h", "U_h", "b_h", tape.hadamard(r, h)))
    return tape.add(tape.hadamard(tape.one_minus(z), h), tape.hadamard(z, h_cand))


def edge_aware_step(tape: Tape, p: dict[str, Var], h: Var, batch: GraphBatch) -> Var:
    h_src = tape.gather(h, batch.edge_src)
    e = tape.gather(p["E_edge"], batch.edge_type)
    messages = tape.relu(tape.matmul(tape.concat([h_src, e]), p["W_msg"]))
    a = tape.row_sum(messages, batch.edge_dst, batch.num_nodes)
    return gru(tape, p, a, h)


def ggnn_step(tape: Tape, p: dict[str, Var], h: Var, batch: GraphBatch) -> Var:
    if "E_type" in p:
        messages = tape.matmul(tape.gather(h, batch.edge_src), p["E_type"])
        a = tape.row_sum(messages, batch.edge_dst, batch.num_nodes)
    else:
        a = None
        for k in range(NUM_EDGE_TYPES):
            sel = np.flatnonzero(batch.edge_type == k)
            if sel.size == 0:
                continue
            messages = tape.matmul(tape.gather(h, batch.edge_src[sel]), p[f"E_type_{k}"])
            part = tape.row_sum(messages, batch.edge_dst[sel], batch.num_nodes)
            a = part if a is None else tape.add(a, part)
        if a is None:
            a = tape.constant(np.zeros(h.shape))
    return gru(tape, p, a, h)


def gcn_step(tape: Tape, p: dict[str, Var], h: Var, batch: GraphBatch, hop: int) -> Var:
    neighbours = tape.row_sum(tape.gather(h, batch.edge_src), batch.edge_dst, batch.num_nodes)
    return tape.relu(tape.matmul(tape.add(h, neighbours), p[f"E_hop_{hop}"]))


def forward(tape: Tape, p: dict[str, Var], batch: GraphBatch, hyper: Hyperparameters,
            train: bool = False, rng: Optional[np.random.Generator] = None) -> Var:
    """Per-graph probabilities, shape (num_graphs, 1)."""
    h = init_nodes(tape, p, batch, hyper, train, rng)
    for hop in range(hyper.hops):
        if hyper.variant == Variant.EDGE_AWARE:
            h = edge_aware_step(tape, p, h, batch)
        elif hyper.variant == Variant.GGNN:
            h = ggnn_step(tape, p, h, batch)
        else:
            h = gcn_step(tape, p, h, batch, hop)
    pooled = tape.row_max(h, batch.node_graph, batch.num_graphs)
    return tape.sigmoid(tape.matmul(pooled, p["W_out"]))


def bce_loss(tape: Tape, pred: Var, labels) -> Var:
    return tape.bce(pred, labels)


def batch_loss(params: dict[str, np.ndarray], batch: GraphBatch, hyper: Hyperparameters,
               train: bool = False, rng: Optional[np.random.Generator] = None) -> tuple[Tape, Var]:
    """Fresh tape with the mean bce of one batch; the grad_check entry point."""
    tape = Tape()
    p = register(tape, params)
    pred = forward(tape, p, batch, hyper, train, rng)
    return tape, bce_loss(tape, pred, batch.labels)


def predict(graphs: Sequence[EncodedGraph], model: ModelState) -> np.ndarray:
    """Eval-mode probabilities, one per graph."""
    if not graphs:
        return np.zeros(0)
    tape = Tape()
    p = register(tape, model.params)
    pred = forward(tape, p, GraphBatch.from_graphs(graphs), model.hyper, train=False)
    return pred.value.reshape(-1)
