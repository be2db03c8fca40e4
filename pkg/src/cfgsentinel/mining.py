"""Frequent and discriminative subgraph mining over directed labeled graphs.

The miner is a gSpan-style enumerator generalized to directed graphs with
self-loops.  Every arc is traversable in both directions during DFS; a code
entry (i, j, l_i, d, l_j) records the DFS indices, the endpoint labels, and
an orientation flag d (0: the arc runs i -> j, 1: it runs j -> i).  Entries
with j <= i are backward edges (j == i is a self-loop); a lone labeled
vertex is encoded as the special entry (0, 0, l, -1, l).  Rightmost-path
extension plus a minimum-DFS-code check enumerates each isomorphism class
exactly once.

Discriminative selection scores patterns with the correspondence-based CORK
quality q = -(|pos_hit|*|neg_hit| + |pos_miss|*|neg_miss|) and prunes the
search with a submodular-style upper bound that provably preserves the
exact top-k result set.
"""

from __future__ import annotations

import heapq
import json
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

from .graph import Cfg, GraphError, SampleClass

Entry = tuple[int, int, int, int, int]
Code = tuple[Entry, ...]

ALL_CLASS = "all"


class MiningError(ValueError):
    """Raised for invalid mining parameters or inputs."""


# ---------------------------------------------------------------------------
# DFS-code machinery
# ---------------------------------------------------------------------------

def _entry_key(e: Entry):
    """Sort key implementing the DFS-code ordering for sibling extensions
    of a common prefix (backward/self-loop entries precede forward ones;
    deeper forward sources come first)."""
    i, j, li, d, lj = e
    if d == -1:
        return (-1, li, 0, 0, 0)
    if j <= i:  # backward or self-loop
        return (0, j, d, li, lj)
    return (1, -i, li, d, lj)


def code_less(a: Code, b: Code) -> bool:
    """True when code `a` precedes code `b` (entry-wise, then by length)."""
    for ea, eb in zip(a, b):
        ka, kb = _entry_key(ea), _entry_key(eb)
        if ka != kb:
            return ka < kb
    return len(a) < len(b)


class _MGraph:
    """Adjacency view used by the miner (host node ids preserved)."""

    __slots__ = ("labels", "arcs", "out", "inn", "ids")

    def __init__(self, g: Cfg):
        self.ids = tuple(sorted(i for i, _ in g.nodes))
        self.labels = dict(g.nodes)
        self.arcs = set(g.edges)
        self.out: dict[int, tuple[int, ...]] = {}
        self.inn: dict[int, tuple[int, ...]] = {}
        out: dict[int, list[int]] = {i: [] for i in self.ids}
        inn: dict[int, list[int]] = {i: [] for i in self.ids}
        for u, v in g.edges:
            out[u].append(v)
            inn[v].append(u)
        for i in self.ids:
            self.out[i] = tuple(sorted(out[i]))
            self.inn[i] = tuple(sorted(inn[i]))


def _vertex_count(code: Code) -> int:
    if code[0][3] == -1:
        return 1
    return max(max(i, j) for i, j, _, _, _ in code) + 1


def _rmpath(code: Code) -> list[int]:
    """DFS indices on the rightmost path, root first."""
    path: list[int] = []
    old_frm = None
    for i, j, _, d, _ in reversed(code):
        if d == -1:
            return [0]
        if i < j and (old_frm is None or j == old_frm):
            if old_frm is None:
                path.append(j)
            path.append(i)
            old_frm = i
    path.reverse()
    return path if path else [0]


_Emb = tuple[tuple[int, ...], frozenset]  # (phi: DFS index -> host node, used arcs)


def _extensions(
    g: _MGraph,
    rmpath: Sequence[int],
    last: Entry | None,
    phi: tuple[int, ...],
    used: frozenset,
    allow_forward: bool,
) -> list[tuple[Entry, _Emb]]:
    """Grammar-valid rightmost-path extensions of one embedding."""
    out: list[tuple[Entry, _Emb]] = []
    r = rmpath[-1]
    rv = phi[r]
    # consecutive backward entries from the same rightmost vertex must be
    # emitted in ascending (j, d) order
    bound = None
    if last is not None and last[3] != -1 and last[1] <= last[0]:
        bound = (last[1], last[3])

    for j in rmpath[:-1]:
        jv = phi[j]
        if (rv, jv) in g.arcs and (rv, jv) not in used and (bound is None or (j, 0) > bound):
            e = (r, j, g.labels[rv], 0, g.labels[jv])
            out.append((e, (phi, used | {(rv, jv)})))
        if (jv, rv) in g.arcs and (jv, rv) not in used and (bound is None or (j, 1) > bound):
            e = (r, j, g.labels[rv], 1, g.labels[jv])
            out.append((e, (phi, used | {(jv, rv)})))
    if (rv, rv) in g.arcs and (rv, rv) not in used and (bound is None or (r, 0) > bound):
        e = (r, r, g.labels[rv], 0, g.labels[rv])
        out.append((e, (phi, used | {(rv, rv)})))

    if allow_forward:
        n = len(phi)
        mapped = set(phi)
        for i in rmpath:
            iv = phi[i]
            for w in g.out[iv]:
                if w not in mapped:
                    e = (i, n, g.labels[iv], 0, g.labels[w])
                    out.append((e, (phi + (w,), used | {(iv, w)})))
            for w in g.inn[iv]:
                if w not in mapped:
                    e = (i, n, g.labels[iv], 1, g.labels[w])
                    out.append((e, (phi + (w,), used | {(w, iv)})))
    return out


def _seed_embeddings(g: _MGraph) -> list[tuple[Entry, _Emb]]:
    """All single-arc starting codes with their embeddings."""
    out = []
    for u, v in sorted(g.arcs):
        if u == v:
            e = (0, 0, g.labels[u], 0, g.labels[u])
            out.append((e, ((u,), frozenset({(u, u)}))))
        else:
            e = (0, 1, g.labels[u], 0, g.labels[v])
            out.append((e, ((u, v), frozenset({(u, v)}))))
            e = (0, 1, g.labels[v], 1, g.labels[u])
            out.append((e, ((v, u), frozenset({(u, v)}))))
    return out


def _greedy_min(g: _MGraph, limit: Code | None) -> Code | None:
    """Build the minimum DFS code of a connected graph step by step.

    With `limit` set, abort and return None as soon as the minimum deviates
    below `limit` (used for the is-minimal check, where limit is realizable
    and the greedy minimum can never exceed it).
    """
    n_arcs = len(g.arcs)
    if n_arcs == 0:
        lab = g.labels[g.ids[0]]
        return ((0, 0, lab, -1, lab),)

    states: list[_Emb] = []
    code: list[Entry] = []
    seeds = _seed_embeddings(g)
    best = min(_entry_key(e) for e, _ in seeds)
    if limit is not None and best != _entry_key(limit[0]):
        return None
    code.append(next(e for e, _ in seeds if _entry_key(e) == best))
    states = [emb for e, emb in seeds if _entry_key(e) == best]

    while len(code) < n_arcs:
        rmp = _rmpath(tuple(code))
        last = code[-1]
        candidates: list[tuple[Entry, _Emb]] = []
        for phi, used in states:
            candidates.extend(_extensions(g, rmp, last, phi, used, True))
        best = min(_entry_key(e) for e, _ in candidates)
        if limit is not None and best != _entry_key(limit[len(code)]):
            return None
        code.append(next(e for e, _ in candidates if _entry_key(e) == best))
        states = [emb for e, emb in candidates if _entry_key(e) == best]
    return tuple(code)


def _is_connected(g: Cfg) -> bool:
    ids = [i for i, _ in g.nodes]
    undirected: dict[int, set[int]] = {i: set() for i in ids}
    for u, v in g.edges:
        undirected[u].add(v)
        undirected[v].add(u)
    seen = {ids[0]}
    q = deque([ids[0]])
    while q:
        u = q.popleft()
        for w in undirected[u]:
            if w not in seen:
                seen.add(w)
                q.append(w)
    return len(seen) == len(ids)


def canonical_dfs_code(g: Cfg) -> Code:
    """Minimum DFS code of a weakly connected graph.  Two graphs have equal
    canonical codes exactly when they are isomorphic (labels respected)."""
    if not _is_connected(g):
        raise MiningError("canonical_dfs_code requires a weakly connected graph")
    code = _greedy_min(_MGraph(g), None)
    assert code is not None
    return code


def _is_min(code: Code, g: _MGraph) -> bool:
    return _greedy_min(g, limit=code) is not None


def code_to_graph(code: Code) -> Cfg:
    """Materialize a DFS code as a graph with canonical ids 0..k-1.  The
    entry is the DFS root; exits are the sinks (last vertex when none)."""
    n = _vertex_count(code)
    labels = {0: code[0][2]}
    arcs = set()
    for i, j, li, d, lj in code:
        if d == -1:
            continue
        labels.setdefault(i, li)
        labels.setdefault(j, lj)
        arcs.add((i, j) if d == 0 else (j, i))
    sources = {u for u, _ in arcs}
    sinks = [v for v in range(n) if v not in sources]
    return Cfg(
        nodes=tuple((v, labels[v]) for v in range(n)),
        edges=frozenset(arcs),
        entry=0,
        exits=frozenset(sinks) if sinks else frozenset({n - 1}),
    )


def code_to_string(code: Code) -> str:
    return ";".join(",".join(str(x) for x in e) for e in code)


def string_to_code(s: str) -> Code:
    entries = []
    for part in s.split(";"):
        nums = tuple(int(x) for x in part.split(","))
        if len(nums) != 5:
            raise MiningError(f"malformed DFS code entry: {part!r}")
        entries.append(nums)
    return tuple(entries)


# ---------------------------------------------------------------------------
# Patterns
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Pattern:
    """A mined subgraph: canonical DFS code, materialized graph, per-class
    support counts, and (for discriminative mining) a CORK quality."""

    code: Code
    graph: Cfg = field(repr=False)
    support: Mapping[str, int]
    node_count: int
    quality: int | None = None
    supporting_ids: Mapping[str, frozenset[str]] | None = field(default=None, repr=False)

    def __eq__(self, other):
        if not isinstance(other, Pattern):
            return NotImplemented
        return self.code == other.code

    def __hash__(self):
        return hash(self.code)

    @property
    def total_support(self) -> int:
        return sum(self.support.values())


def write_patterns(patterns: Sequence["Pattern"], path: str | Path) -> None:
    doc = {
        "patterns": [
            {
                "dfs_code": code_to_string(p.code),
                "graph": json.loads(_graph_doc(p.graph)),
                "support": dict(sorted(p.support.items())),
                "quality": p.quality,
                "node_count": p.node_count,
            }
            for p in patterns
        ]
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True))


def read_patterns(path: str | Path) -> list["Pattern"]:
    from .graph import parse_graph

    doc = json.loads(Path(path).read_text())
    out = []
    for entry in doc["patterns"]:
        code = string_to_code(entry["dfs_code"])
        g = parse_graph(json.dumps(entry["graph"]))
        out.append(
            Pattern(
                code=code,
                graph=g,
                support={str(k): int(v) for k, v in entry["support"].items()},
                node_count=int(entry["node_count"]),
                quality=entry.get("quality"),
            )
        )
    return out


def _graph_doc(g: Cfg) -> str:
    from .graph import serialize_graph

    return serialize_graph(g)


# ---------------------------------------------------------------------------
# Mining engine
# ---------------------------------------------------------------------------

class _Miner:
    def __init__(
        self,
        graphs: Sequence[Cfg],
        classes: Sequence[str],
        sample_ids: Sequence[str],
        min_support: int,
        min_nodes: int,
        max_nodes: int,
        counted: set[str] | None,
        report: Callable[[Code, dict[str, set[str]]], None],
        prune: Callable[[Code, dict[str, set[str]]], bool] | None = None,
    ):
        if min_support < 1:
            raise MiningError("min_support must be >= 1")
        if not (1 <= min_nodes <= max_nodes):
            raise MiningError("need 1 <= min_nodes <= max_nodes")
        if not graphs:
            raise MiningError("empty corpus")
        self.views = [_MGraph(g) for g in graphs]
        self.classes = list(classes)
        self.sample_ids = list(sample_ids)
        self.min_support = min_support
        self.min_nodes = min_nodes
        self.max_nodes = max_nodes
        self.counted = counted
        self.report = report
        self.prune = prune

    def _support(self, gid_sets: dict[str, set[str]]) -> int:
        if self.counted is None:
            return sum(len(v) for v in gid_sets.values())
        return sum(len(v) for c, v in gid_sets.items() if c in self.counted)

    def run(self) -> None:
        if self.min_nodes <= 1:
            self._single_vertices()
        seeds: dict[Entry, list[tuple[int, _Emb]]] = {}
        for gi, view in enumerate(self.views):
            for e, emb in _seed_embeddings(view):
                seeds.setdefault(e, []).append((gi, emb))
        for e in sorted(seeds, key=_entry_key):
            self._recurse((e,), seeds[e])

    def _single_vertices(self):
        by_label: dict[int, dict[str, set[str]]] = {}
        for gi, view in enumerate(self.views):
            for i in view.ids:
                lab = view.labels[i]
                by_label.setdefault(lab, {}).setdefault(self.classes[gi], set()).add(
                    self.sample_ids[gi]
                )
        for lab in sorted(by_label):
            gid_sets = by_label[lab]
            if self._support(gid_sets) < self.min_support:
                continue
            code: Code = ((0, 0, lab, -1, lab),)
            if self.prune is not None and self.prune(code, gid_sets):
                continue
            self.report(code, gid_sets)

    def _recurse(self, code: Code, embs: list[tuple[int, _Emb]]):
        gid_sets: dict[str, set[str]] = {}
        for gi, _ in embs:
            gid_sets.setdefault(self.classes[gi], set()).add(self.sample_ids[gi])
        if self._support(gid_sets) < self.min_support:
            return
        if not _is_min(code, _MGraph(code_to_graph(code))):
            return
        if self.prune is not None and self.prune(code, gid_sets):
            return
        n = _vertex_count(code)
        if n >= self.min_nodes:
            self.report(code, gid_sets)
        allow_forward = n < self.max_nodes
        rmp = _rmpath(code)
        last = code[-1]
        exts: dict[Entry, list[tuple[int, _Emb]]] = {}
        for gi, (phi, used) in embs:
            for e, emb in _extensions(self.views[gi], rmp, last, phi, used, allow_forward):
                exts.setdefault(e, []).append((gi, emb))
        for e in sorted(exts, key=_entry_key):
            self._recurse(code + (e,), exts[e])


def _make_pattern(
    code: Code, gid_sets: dict[str, set[str]], quality: int | None = None
) -> Pattern:
    return Pattern(
        code=code,
        graph=code_to_graph(code),
        support={c: len(v) for c, v in sorted(gid_sets.items())},
        node_count=_vertex_count(code),
        quality=quality,
        supporting_ids={c: frozenset(v) for c, v in gid_sets.items()},
    )


def gspan_mine(
    graphs: Sequence[Cfg],
    min_support: int,
    min_nodes: int,
    max_nodes: int,
    classes: Sequence[str] | None = None,
    sample_ids: Sequence[str] | None = None,
) -> list[Pattern]:
    """All frequent connected patterns with node counts in
    [min_nodes, max_nodes], each reported once per isomorphism class with
    per-class support counts.  Support is the number of distinct corpus
    graphs containing the pattern."""
    if classes is None:
        classes = [ALL_CLASS] * len(graphs)
    if sample_ids is None:
        sample_ids = [str(i) for i in range(len(graphs))]
    if len(classes) != len(graphs) or len(sample_ids) != len(graphs):
        raise MiningError("classes/sample_ids must parallel graphs")
    patterns: list[Pattern] = []
    miner = _Miner(
        graphs, classes, sample_ids, min_support, min_nodes, max_nodes, None,
        report=lambda code, gid_sets: patterns.append(_make_pattern(code, gid_sets)),
    )
    miner.run()
    patterns.sort(key=lambda p: (p.node_count, p.code))
    return patterns


# ---------------------------------------------------------------------------
# CORK discriminative selection
# ---------------------------------------------------------------------------

def cork_quality(pos_hit: int, neg_hit: int, pos_total: int, neg_total: int) -> int:
    """Correspondence-based quality: 0 is best (perfect discriminator) and
    values grow more negative as the pattern confuses the two classes."""
    if not (0 <= pos_hit <= pos_total and 0 <= neg_hit <= neg_total):
        raise MiningError("inconsistent support counts")
    return -(pos_hit * neg_hit + (pos_total - pos_hit) * (neg_total - neg_hit))


def cork_upper_bound(pos_hit: int, neg_hit: int, pos_total: int, neg_total: int) -> int:
    """Largest quality any refinement (subset supports) of a pattern with
    these supports can reach; refinements can only shrink each side."""
    a, b, A, B = pos_hit, neg_hit, pos_total, neg_total
    return -min((A - a) * B, A * (B - b), a * b + (A - a) * (B - b))


def select_discriminative(
    samples: Sequence,  # Sequence[LabeledSample]
    target_class: SampleClass | str,
    min_support: int,
    min_nodes: int,
    max_nodes: int,
    top_k: int | None = None,
) -> list[Pattern]:
    """Mine patterns frequent in the target class and rank them by CORK
    quality (descending), node count, then code.  With top_k set, an
    admissible upper-bound prune cuts the search without changing the
    returned set."""
    target = target_class.value if isinstance(target_class, SampleClass) else str(target_class)
    classes = [s.cls.value for s in samples]
    if target not in classes:
        raise MiningError(f"no samples of target class {target!r}")
    pos_total = sum(1 for c in classes if c == target)
    neg_total = len(classes) - pos_total
    if top_k is not None and top_k < 1:
        raise MiningError("top_k must be positive")

    best: list[int] = []  # min-heap over the k best qualities seen

    def prune(code: Code, gid_sets: dict[str, set[str]]) -> bool:
        if top_k is None or len(best) < top_k:
            return False
        a = len(gid_sets.get(target, ()))
        b = sum(len(v) for c, v in gid_sets.items() if c != target)
        return cork_upper_bound(a, b, pos_total, neg_total) < best[0]

    collected: list[Pattern] = []

    def on_found(code: Code, gid_sets: dict[str, set[str]]):
        a = len(gid_sets.get(target, ()))
        b = sum(len(v) for c, v in gid_sets.items() if c != target)
        q = cork_quality(a, b, pos_total, neg_total)
        collected.append(_make_pattern(code, gid_sets, quality=q))
        if top_k is not None:
            if len(best) < top_k:
                heapq.heappush(best, q)
            elif q > best[0]:
                heapq.heapreplace(best, q)

    miner = _Miner(
        [s.cfg for s in samples],
        classes,
        [s.id for s in samples],
        min_support,
        min_nodes,
        max_nodes,
        counted={target},
        report=on_found,
        prune=prune,
    )
    miner.run()

    collected.sort(key=lambda p: (-(p.quality or 0), p.node_count, p.code))
    return collected[:top_k] if top_k is not None else collected
