"""Shared fixtures and random-graph generators for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from cfgsentinel.graph import Cfg


def random_cfg(rng: np.random.Generator, n_lo=2, n_hi=8, p=0.35,
               n_labels=3, self_loops=False) -> Cfg:
    """A random weakly-connected-ish labeled digraph.  Node 0 is the entry;
    a chain backbone guarantees every node is attached to the graph."""
    n = int(rng.integers(n_lo, n_hi + 1))
    nodes = tuple((i, int(rng.integers(0, n_labels))) for i in range(n))
    edges = set()
    for i in range(1, n):
        parent = int(rng.integers(0, i))
        edges.add((parent, i))
    for u in range(n):
        for v in range(n):
            if u == v and not self_loops:
                continue
            if (u, v) in edges:
                continue
            if rng.random() < p / n:
                edges.add((u, v))
    sinks = frozenset(i for i in range(n) if not any(u == i and v != i for (u, v) in edges))
    exits = sinks if sinks else frozenset({n - 1})
    return Cfg(nodes=nodes, edges=frozenset(edges), entry=0, exits=exits)


def tiny_cfg(rng: np.random.Generator, max_nodes=6, n_labels=2) -> Cfg:
    """Very small graph for exhaustive oracles."""
    return random_cfg(rng, n_lo=1, n_hi=max_nodes, p=1.2, n_labels=n_labels,
                      self_loops=bool(rng.random() < 0.3))


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def path_graph(labels=(0, 0, 0)) -> Cfg:
    n = len(labels)
    return Cfg(
        nodes=tuple((i, labels[i]) for i in range(n)),
        edges=frozenset((i, i + 1) for i in range(n - 1)),
        entry=0,
        exits=frozenset({n - 1}),
    )


def cycle_graph(n=3, label=0) -> Cfg:
    return Cfg(
        nodes=tuple((i, label) for i in range(n)),
        edges=frozenset((i, (i + 1) % n) for i in range(n)),
        entry=0,
        exits=frozenset({n - 1}),
    )


def star_graph(k=3) -> Cfg:
    """Center 0 pointing at k leaves, and each leaf pointing back."""
    nodes = tuple((i, 0) for i in range(k + 1))
    edges = frozenset({(0, i) for i in range(1, k + 1)} | {(i, 0) for i in range(1, k + 1)})
    return Cfg(nodes=nodes, edges=edges, entry=0, exits=frozenset({k}))


# A reduced experiment configuration: small corpus, short training, narrow
# mining bands.  Used by the CLI tests and the reproducibility check, where
# runtime matters more than headline accuracy.
TINY_INI = """\
[corpus]
benign_count = 10
benign_node_lo = 8
benign_node_hi = 20
familyA_count = 6
familyA_node_lo = 7
familyA_node_hi = 12
familyB_count = 6
familyB_node_lo = 8
familyB_node_hi = 14
familyC_count = 6
familyC_node_lo = 7
familyC_node_hi = 12

[split]
train_fraction = 0.75

[train]
arch = dnn
epochs = 25
batch_size = 8

[mining]
support_fraction = 0.9
min_nodes = 2
max_nodes = 5

[rank]
k = 8
support_fraction = 0.2

[encode]
budget_seconds = 30

[attack]
sgea_min_nodes = 3
sgea_max_nodes = 5
sgea_per_size = 4
sgea_support_fraction = 0.34
"""
