"""
Synthetic graphs whose label is carried by a single edge's type.

Every generated graph comes as a twin pair: same chain topology, same node
tokens, and one "decisive" edge that is FlowTo in the negative twin and
DefineUse in the positive one. A classifier that ignores edge types sees
the twins as the same graph.
"""
import logging

import numpy as np

from services.cpg import EdgeKind

logger = logging.getLogger(__name__)

TOKENS = ("x", "y", "p", "len", "buf", "=", "+", "(", ")", "free")
NEGATIVE_TYPE = EdgeKind.FLOW_TO.value
POSITIVE_TYPE = EdgeKind.DEFINE_USE.value


def _graph(graph_id: str, codes: list[str], edges: list[tuple[int, int, int]], label: int) -> dict:
    return {
        "function_id": graph_id,
        "label": label,
        "cwe": None,
        "nodes": [{"id": i, "kind": "expr", "code": code} for i, code in enumerate(codes)],
        "edges": [{"src": s, "dst": d, "type": t} for s, d, t in edges],
    }


def edge_type_pair(rng: np.random.Generator, index: int, min_nodes: int = 4, max_nodes: int = 8) -> tuple[dict, dict]:
    n = int(rng.integers(min_nodes, max_nodes + 1))
    codes = [" ".join(rng.choice(TOKENS, size=int(rng.integers(1, 4)))) for _ in range(n)]
    decisive = int(rng.integers(0, n - 1))
    chain = [(i, i + 1) for i in range(n - 1)]

    def edges(decisive_type: int) -> list[tuple[int, int, int]]:
        return [(s, d, decisive_type if i == decisive else NEGATIVE_TYPE) for i, (s, d) in enumerate(chain)]

    return (_graph(f"synthetic:{index}:neg", codes, edges(NEGATIVE_TYPE), 0),
            _graph(f"synthetic:{index}:pos", codes, edges(POSITIVE_TYPE), 1))


def edge_type_dataset(n_graphs: int = 400, seed: int = 0, holdout: float = 0.2) -> tuple[list[dict], list[dict]]:
    """(train, held-out) graph records, balanced, shuffled with `seed`."""
    rng = np.random.default_rng(seed)
    graphs = []
    for i in range(n_graphs // 2):
        graphs.extend(edge_type_pair(rng, i))
    order = rng.permutation(len(graphs))
    graphs = [graphs[i] for i in order]
    cut = int(round(len(graphs) * (1.0 - holdout)))
    logger.info(f"Synthetic edge-type dataset: {cut} train / {len(graphs) - cut} held-out graphs")
    return graphs[:cut], graphs[cut:]


def six_node_graph(seed: int = 0, label: int = 1) -> dict:
    """Small graph with every edge type represented, for gradient checks."""
    rng = np.random.default_rng(seed)
    codes = [" ".join(rng.choice(TOKENS, size=2)) for _ in range(6)]
    edges = [(0, 1, 0), (1, 2, 1), (2, 3, 2), (3, 4, 3), (4, 5, 4),
             (1, 0, 5), (2, 1, 6), (3, 2, 7), (4, 3, 8), (5, 4, 9), (0, 5, 2)]
    return _graph(f"gradcheck:{seed}", codes, edges, label)
