"""Directed subgraph isomorphism (non-induced monomorphism) with node labels.

VF2-style backtracking: pattern nodes are matched in a connectivity-aware
order, candidates are drawn from the host neighborhoods of already-mapped
nodes, and look-ahead degree/label checks prune the search.  A mapping m
is a match when it is injective, label-preserving, and every pattern edge
(u, v) has (m(u), m(v)) in the host.  Host edges outside the image are not
constrained.
"""

from __future__ import annotations

from collections import Counter

from .graph import Cfg


class _GraphView:
    __slots__ = ("ids", "labels", "out", "inn", "outdeg", "indeg", "label_counts")

    def __init__(self, g: Cfg):
        self.ids = [i for i, _ in g.nodes]
        self.labels = dict(g.nodes)
        self.out: dict[int, set[int]] = {i: set() for i in self.ids}
        self.inn: dict[int, set[int]] = {i: set() for i in self.ids}
        for u, v in g.edges:
            self.out[u].add(v)
            self.inn[v].add(u)
        self.outdeg = {i: len(self.out[i]) for i in self.ids}
        self.indeg = {i: len(self.inn[i]) for i in self.ids}
        self.label_counts = Counter(self.labels.values())


_view_cache: dict[int, tuple[Cfg, _GraphView]] = {}


def _view(g: Cfg) -> _GraphView:
    key = id(g)
    hit = _view_cache.get(key)
    if hit is not None and hit[0] is g:
        return hit[1]
    v = _GraphView(g)
    if len(_view_cache) > 2048:
        _view_cache.clear()
    _view_cache[key] = (g, v)
    return v


def _pattern_order(p: _GraphView) -> list[int]:
    """Match order: start at the highest-degree node, then prefer nodes
    connected to the already-ordered prefix."""
    def deg(i):
        return p.outdeg[i] + p.indeg[i]

    remaining = set(p.ids)
    first = max(remaining, key=lambda i: (deg(i), p.labels[i], -i))
    order = [first]
    remaining.discard(first)
    while remaining:
        frontier = [
            i for i in remaining
            if (p.out[i] | p.inn[i]) & set(order)
        ]
        pool = frontier if frontier else list(remaining)
        nxt = max(pool, key=lambda i: (deg(i), p.labels[i], -i))
        order.append(nxt)
        remaining.discard(nxt)
    return order


def _match(pattern: Cfg, host: Cfg, limit: int | None) -> int:
    """Count label- and edge-preserving injective mappings, stopping early
    once `limit` is reached (limit=1 gives a containment test)."""
    p = _view(pattern)
    h = _view(host)
    if len(p.ids) > len(h.ids):
        return 0
    # necessary condition: enough host nodes of every pattern label
    for lab, cnt in p.label_counts.items():
        if h.label_counts.get(lab, 0) < cnt:
            return 0

    order = _pattern_order(p)
    pos = {n: k for k, n in enumerate(order)}
    # for each pattern node, its already-ordered neighbors (direction kept)
    prior_out = []  # mapped q with edge n -> q
    prior_in = []   # mapped q with edge q -> n
    for k, n in enumerate(order):
        prior_out.append([q for q in p.out[n] if pos[q] < k])
        prior_in.append([q for q in p.inn[n] if pos[q] < k])

    mapping: dict[int, int] = {}
    used: set[int] = set()
    found = 0

    def candidates(k: int):
        # derive from a mapped neighbor's host adjacency when available
        if prior_out[k]:
            return h.inn[mapping[prior_out[k][0]]]
        if prior_in[k]:
            return h.out[mapping[prior_in[k][0]]]
        return h.ids

    def feasible(k: int, cand: int) -> bool:
        n = order[k]
        if cand in used or h.labels[cand] != p.labels[n]:
            return False
        if h.outdeg[cand] < p.outdeg[n] or h.indeg[cand] < p.indeg[n]:
            return False
        if n in p.out[n] and cand not in h.out[cand]:
            return False
        for q in prior_out[k]:
            if mapping[q] not in h.out[cand]:
                return False
        for q in prior_in[k]:
            if mapping[q] not in h.inn[cand]:
                return False
        return True

    def backtrack(k: int) -> bool:
        nonlocal found
        if k == len(order):
            found += 1
            return limit is not None and found >= limit
        n = order[k]
        for cand in candidates(k):
            if feasible(k, cand):
                mapping[n] = cand
                used.add(cand)
                done = backtrack(k + 1)
                used.discard(cand)
                del mapping[n]
                if done:
                    return True
        return False

    backtrack(0)
    return found


def is_subgraph(pattern: Cfg, host: Cfg) -> bool:
    """True when the pattern maps injectively into the host preserving
    labels and directed edges (host may have extra edges)."""
    return _match(pattern, host, limit=1) > 0


def match_count(pattern: Cfg, host: Cfg, limit: int = 1_000_000) -> int:
    """Number of distinct monomorphisms, capped at `limit`."""
    if limit < 1:
        raise ValueError("limit must be positive")
    return _match(pattern, host, limit=limit)
