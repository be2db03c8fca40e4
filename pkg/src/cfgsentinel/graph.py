"""Control-flow graph data model, validation, and serialization.

A Cfg is a directed graph with integer-labeled nodes, a designated entry
node and a non-empty set of exit nodes.  Self-loops are allowed, parallel
edges are not.  Graphs are immutable after construction.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence


class GraphError(ValueError):
    """Raised for structurally invalid graphs or malformed graph documents."""


class SampleClass(Enum):
    BENIGN = "Benign"
    FAMILY_A = "FamilyA"
    FAMILY_B = "FamilyB"
    FAMILY_C = "FamilyC"

    @classmethod
    def from_string(cls, s: str) -> "SampleClass":
        for member in cls:
            if member.value == s:
                return member
        raise GraphError(f"unknown sample class: {s!r}")


FAMILIES = (SampleClass.FAMILY_A, SampleClass.FAMILY_B, SampleClass.FAMILY_C)


@dataclass(frozen=True, eq=False)
class Cfg:
    """Immutable labeled control-flow graph.

    nodes: tuple of (node_id, label) pairs in document order.
    edges: frozenset of (src, dst) pairs.
    entry: entry node id.  exits: non-empty frozenset of exit node ids.
    """

    nodes: tuple[tuple[int, int], ...]
    edges: frozenset[tuple[int, int]]
    entry: int
    exits: frozenset[int]

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple((int(i), int(l)) for i, l in self.nodes))
        object.__setattr__(self, "edges", frozenset((int(u), int(v)) for u, v in self.edges))
        object.__setattr__(self, "exits", frozenset(int(x) for x in self.exits))
        object.__setattr__(self, "entry", int(self.entry))
        _validate(self)

    # Structural equality: node order in a document is preserved for
    # iteration but does not affect identity.
    def __eq__(self, other):
        if not isinstance(other, Cfg):
            return NotImplemented
        return (
            frozenset(self.nodes) == frozenset(other.nodes)
            and self.edges == other.edges
            and self.entry == other.entry
            and self.exits == other.exits
        )

    def __hash__(self):
        return hash((frozenset(self.nodes), self.edges, self.entry, self.exits))

    @property
    def node_ids(self) -> tuple[int, ...]:
        return tuple(i for i, _ in self.nodes)

    @property
    def labels(self) -> dict[int, int]:
        return dict(self.nodes)

    @property
    def node_count(self) -> int:
        return len(self.nodes)

    @property
    def edge_count(self) -> int:
        return len(self.edges)


def _validate(g: Cfg) -> None:
    if not g.nodes:
        raise GraphError("graph has no nodes")
    ids = [i for i, _ in g.nodes]
    seen = set()
    for i in ids:
        if i < 0:
            raise GraphError(f"negative node id: {i}")
        if i in seen:
            raise GraphError(f"duplicate node id: {i}")
        seen.add(i)
    for _, lab in g.nodes:
        if lab < 0:
            raise GraphError(f"negative node label: {lab}")
    for u, v in g.edges:
        if u not in seen or v not in seen:
            raise GraphError(f"edge ({u}, {v}) references unknown node")
    if g.entry not in seen:
        raise GraphError(f"entry node {g.entry} not in node set")
    if not g.exits:
        raise GraphError("exit set is empty")
    for x in g.exits:
        if x not in seen:
            raise GraphError(f"exit node {x} not in node set")


def out_adjacency(g: Cfg) -> dict[int, tuple[int, ...]]:
    """Successor lists, sorted, one entry per node (possibly empty)."""
    adj: dict[int, list[int]] = {i: [] for i, _ in g.nodes}
    for u, v in g.edges:
        adj[u].append(v)
    return {u: tuple(sorted(vs)) for u, vs in adj.items()}


def in_adjacency(g: Cfg) -> dict[int, tuple[int, ...]]:
    """Predecessor lists, sorted, one entry per node (possibly empty)."""
    adj: dict[int, list[int]] = {i: [] for i, _ in g.nodes}
    for u, v in g.edges:
        adj[v].append(u)
    return {v: tuple(sorted(us)) for v, us in adj.items()}


# ---------------------------------------------------------------------------
# Graph JSON document format
# ---------------------------------------------------------------------------

def parse_graph(text: str) -> Cfg:
    """Parse a graph JSON document into a validated Cfg."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise GraphError(f"malformed graph document: {e}") from None
    if not isinstance(doc, dict):
        raise GraphError("graph document must be a JSON object")
    for key in ("nodes", "edges", "entry", "exits"):
        if key not in doc:
            raise GraphError(f"graph document missing key: {key}")
    try:
        nodes = tuple((int(n["id"]), int(n["label"])) for n in doc["nodes"])
        edges = frozenset((int(e[0]), int(e[1])) for e in doc["edges"])
        exits = frozenset(int(x) for x in doc["exits"])
        entry = int(doc["entry"])
    except (TypeError, KeyError, ValueError, IndexError) as e:
        raise GraphError(f"malformed graph document: {e}") from None
    if len(edges) != len(doc["edges"]):
        raise GraphError("duplicate edges in graph document")
    return Cfg(nodes=nodes, edges=edges, entry=entry, exits=exits)


def serialize_graph(g: Cfg) -> str:
    """Serialize to the graph JSON format, deterministically.

    Nodes are sorted by id, edges lexicographically, exits ascending, so
    equal graphs serialize to identical byte strings.
    """
    doc = {
        "nodes": [{"id": i, "label": l} for i, l in sorted(g.nodes)],
        "edges": [[u, v] for u, v in sorted(g.edges)],
        "entry": g.entry,
        "exits": sorted(g.exits),
    }
    return json.dumps(doc, separators=(",", ":"), sort_keys=True)


def load_graph(path: str | Path) -> Cfg:
    return parse_graph(Path(path).read_text())


def save_graph(g: Cfg, path: str | Path) -> None:
    Path(path).write_text(serialize_graph(g))


# ---------------------------------------------------------------------------
# DOT subset importer
# ---------------------------------------------------------------------------

_DOT_EDGE = re.compile(r"^\s*(\d+(?:\s*->\s*\d+)+)\s*(\[[^\]]*\])?\s*;?\s*$")
_DOT_NODE = re.compile(r"^\s*(\d+)\s*(\[[^\]]*\])?\s*;?\s*$")
_DOT_LABEL = re.compile(r"label\s*=\s*\"?(\d+)\"?")


def parse_dot(text: str) -> Cfg:
    """Import a digraph written in a DOT subset.

    Node names must be integers; a numeric `label` attribute is honored and
    all other attributes are ignored.  The entry is the first declared node;
    exits are the sink nodes, or the last declared node when every node has
    outgoing edges.
    """
    body = text
    m = re.search(r"digraph\b[^{]*\{(.*)\}", text, re.DOTALL)
    if m:
        body = m.group(1)
    elif "{" in text or "graph" in text:
        raise GraphError("not a digraph document")

    order: list[int] = []
    labels: dict[int, int] = {}
    edges: set[tuple[int, int]] = set()

    def note(i: int, attrs: str | None):
        if i not in labels:
            labels[i] = 0
            order.append(i)
        if attrs:
            lm = _DOT_LABEL.search(attrs)
            if lm:
                labels[i] = int(lm.group(1))

    for raw in body.split("\n"):
        line = raw.strip()
        if not line or line.startswith(("//", "#")):
            continue
        for stmt in line.split(";"):
            stmt = stmt.strip()
            if not stmt:
                continue
            em = _DOT_EDGE.match(stmt)
            if em:
                chain = [int(tok) for tok in re.split(r"\s*->\s*", em.group(1))]
                for u, v in zip(chain, chain[1:]):
                    note(u, None)
                    note(v, None)
                    edges.add((u, v))
                continue
            nm = _DOT_NODE.match(stmt)
            if nm:
                note(int(nm.group(1)), nm.group(2))
                continue
            raise GraphError(f"unsupported DOT statement: {stmt!r}")

    if not order:
        raise GraphError("DOT document declares no nodes")
    sinks = [i for i in order if not any(u == i for u, _ in edges)]
    exits = frozenset(sinks) if sinks else frozenset({order[-1]})
    return Cfg(
        nodes=tuple((i, labels[i]) for i in order),
        edges=frozenset(edges),
        entry=order[0],
        exits=exits,
    )


# ---------------------------------------------------------------------------
# Labeled samples and corpus manifests
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LabeledSample:
    id: str
    cfg: Cfg = field(compare=False)
    cls: SampleClass


def write_corpus(samples: Sequence[LabeledSample], root: str | Path) -> Path:
    """Write graphs plus a manifest under `root`; returns the manifest path."""
    root = Path(root)
    ids = [s.id for s in samples]
    if len(set(ids)) != len(ids):
        dup = sorted({i for i in ids if ids.count(i) > 1})
        raise GraphError(f"duplicate sample ids: {dup[:3]}")
    graph_dir = root / "graphs"
    graph_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for s in sorted(samples, key=lambda s: s.id):
        rel = f"graphs/{s.id}.json"
        save_graph(s.cfg, root / rel)
        entries.append({"id": s.id, "class": s.cls.value, "path": rel})
    manifest = root / "manifest.json"
    manifest.write_text(json.dumps({"samples": entries}, indent=2, sort_keys=True))
    return manifest


def read_corpus(manifest_path: str | Path) -> list[LabeledSample]:
    """Load all samples referenced by a corpus manifest."""
    manifest_path = Path(manifest_path)
    try:
        doc = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as e:
        raise GraphError(f"malformed manifest: {e}") from None
    if not isinstance(doc, dict) or "samples" not in doc:
        raise GraphError("manifest missing 'samples' key")
    samples = []
    seen_ids = set()
    for entry in doc["samples"]:
        try:
            sid, cls, rel = entry["id"], entry["class"], entry["path"]
        except (TypeError, KeyError) as e:
            raise GraphError(f"malformed manifest entry: {e}") from None
        if sid in seen_ids:
            raise GraphError(f"duplicate sample id in manifest: {sid}")
        seen_ids.add(sid)
        cfg = load_graph(manifest_path.parent / rel)
        samples.append(LabeledSample(id=sid, cfg=cfg, cls=SampleClass.from_string(cls)))
    return samples
