"""Feature extraction: 23 graph-theoretic features per control-flow graph.

Layout: five summary statistics (min, max, median, mean, std) for each of
betweenness centrality, closeness centrality, degree centrality, and
shortest-path lengths, followed by density, edge count, and node count.
"""

from __future__ import annotations

import statistics
from collections import deque
from typing import Iterable, Sequence

import numpy as np

from .graph import Cfg, out_adjacency

_BLOCKS = ("betweenness", "closeness", "degree", "shortest_path")
_STATS = ("min", "max", "median", "mean", "std")

FEATURE_NAMES: tuple[str, ...] = tuple(
    f"{block}_{stat}" for block in _BLOCKS for stat in _STATS
) + ("density", "edge_count", "node_count")

FEATURE_COUNT = len(FEATURE_NAMES)  # 23


def summary_stats(values: Sequence[float]) -> tuple[float, float, float, float, float]:
    """(min, max, median, mean, population std) of a non-empty sequence.

    The median of an even-length sequence is the mean of the two middle
    elements.
    """
    if len(values) == 0:
        raise ValueError("summary_stats requires a non-empty sequence")
    vs = [float(v) for v in values]
    return (min(vs), max(vs), statistics.median(vs), statistics.fmean(vs), statistics.pstdev(vs))


def density(g: Cfg) -> float:
    """|E| / (|V| * (|V| - 1)); zero when the graph has at most one node."""
    n = g.node_count
    if n <= 1:
        return 0.0
    return g.edge_count / (n * (n - 1))


def degree_centrality(g: Cfg) -> dict[int, float]:
    """(in-degree + out-degree) / (|V| - 1) per node; a self-loop adds one
    to each of the two degrees.  Zero for a single-node graph."""
    n = g.node_count
    deg = {i: 0 for i, _ in g.nodes}
    for u, v in g.edges:
        deg[u] += 1
        deg[v] += 1
    if n <= 1:
        return {i: 0.0 for i in deg}
    return {i: d / (n - 1) for i, d in deg.items()}


def _bfs_distances(adj: dict[int, tuple[int, ...]], source: int) -> dict[int, int]:
    dist = {source: 0}
    q = deque([source])
    while q:
        u = q.popleft()
        for w in adj[u]:
            if w not in dist:
                dist[w] = dist[u] + 1
                q.append(w)
    return dist


def closeness_centrality(g: Cfg) -> dict[int, float]:
    """Outgoing-distance closeness with the reachable-fraction correction.

    For node v with r nodes reachable over outgoing edges (v excluded) at
    total distance T: closeness = (r / (|V| - 1)) * (r / T), and 0 when
    nothing is reachable.
    """
    n = g.node_count
    adj = out_adjacency(g)
    out = {}
    for v, _ in g.nodes:
        dist = _bfs_distances(adj, v)
        r = len(dist) - 1
        if r == 0 or n <= 1:
            out[v] = 0.0
        else:
            total = sum(d for w, d in dist.items() if w != v)
            out[v] = (r / (n - 1)) * (r / total)
    return out


def betweenness_centrality(g: Cfg) -> dict[int, float]:
    """Directed shortest-path betweenness (Brandes), endpoints excluded,
    normalized by (|V|-1)(|V|-2).  All zeros when |V| < 3."""
    n = g.node_count
    nodes = [i for i, _ in g.nodes]
    bc = {v: 0.0 for v in nodes}
    if n < 3:
        return bc
    adj = out_adjacency(g)
    for s in nodes:
        # single-source shortest paths with path counting
        dist = {v: -1 for v in nodes}
        sigma = {v: 0.0 for v in nodes}
        preds: dict[int, list[int]] = {v: [] for v in nodes}
        dist[s] = 0
        sigma[s] = 1.0
        order = []
        q = deque([s])
        while q:
            u = q.popleft()
            order.append(u)
            for w in adj[u]:
                if dist[w] < 0:
                    dist[w] = dist[u] + 1
                    q.append(w)
                if dist[w] == dist[u] + 1:
                    sigma[w] += sigma[u]
                    preds[w].append(u)
        # dependency accumulation
        delta = {v: 0.0 for v in nodes}
        for w in reversed(order):
            for u in preds[w]:
                delta[u] += (sigma[u] / sigma[w]) * (1.0 + delta[w])
            if w != s:
                bc[w] += delta[w]
    norm = (n - 1) * (n - 2)
    return {v: b / norm for v, b in bc.items()}


def shortest_path_lengths(g: Cfg) -> list[int]:
    """All finite directed shortest-path lengths d(u, v) with u != v."""
    adj = out_adjacency(g)
    out = []
    for v, _ in g.nodes:
        dist = _bfs_distances(adj, v)
        out.extend(d for w, d in dist.items() if w != v)
    return out


def extract_features(g: Cfg) -> np.ndarray:
    """23-entry feature vector in the documented layout (float64)."""
    per_node = [
        list(betweenness_centrality(g).values()),
        list(closeness_centrality(g).values()),
        list(degree_centrality(g).values()),
    ]
    vec: list[float] = []
    for values in per_node:
        vec.extend(summary_stats(values))
    paths = shortest_path_lengths(g)
    vec.extend(summary_stats(paths) if paths else (0.0,) * 5)
    vec.append(density(g))
    vec.append(float(g.edge_count))
    vec.append(float(g.node_count))
    arr = np.asarray(vec, dtype=np.float64)
    if arr.shape != (FEATURE_COUNT,) or not np.all(np.isfinite(arr)):
        raise ValueError("feature extraction produced an invalid vector")
    return arr


def features_to_csv(rows: Iterable[tuple[str, np.ndarray]]) -> str:
    """CSV text with an `id` column plus the 23 named feature columns."""
    lines = ["id," + ",".join(FEATURE_NAMES)]
    for sid, vec in rows:
        if vec.shape != (FEATURE_COUNT,):
            raise ValueError(f"feature vector for {sid} has shape {vec.shape}")
        lines.append(sid + "," + ",".join(repr(float(x)) for x in vec))
    return "\n".join(lines) + "\n"
