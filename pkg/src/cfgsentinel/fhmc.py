"""Hierarchical classification with mined family patterns.

Per family, mined candidate subgraphs pass two hard filters (frequency at
least 5% of the family's training samples; contained in at most ten benign
training samples), get a composite rank score, and the top K survive.  A
sample is encoded as a bit vector over the selected patterns (containment
tests), and a suspicious-behavior screen trained on those bits separates
benign-looking inputs from pattern-bearing ones.  The full pipeline routes
detector -> family classifier (malware) or pattern screen (benign).
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .features import extract_features
from .graph import Cfg, LabeledSample, FAMILIES
from .isomorphism import is_subgraph
from .mining import Pattern, code_to_string, string_to_code, code_to_graph, gspan_mine
from .nn import Model, train

SBD_CLASSES = ("Benign", "Suspicious")
DETECTOR_CLASSES = ("Benign", "Malware")
FAMILY_CLASSES = tuple(f.value for f in FAMILIES)

DEFAULT_TOP_K = 100
DEFAULT_BENIGN_CEILING = 10
DEFAULT_MIN_NODES = 3
DEFAULT_MAX_NODES = 8
DEFAULT_ENCODE_BUDGET = 60.0


class RankingError(ValueError):
    """Raised for inconsistent ranking inputs."""


class EncodingTimeout(RuntimeError):
    """Raised when encoding one sample exceeds its time budget."""


def support_floor(family_train_count: int, fraction: float = 0.05) -> int:
    """Minimum family support a candidate must reach."""
    return max(1, math.ceil(fraction * family_train_count))


def coverage_scores(
    survivors: Sequence[Pattern], family: str, family_ids: Sequence[str]
) -> list[float]:
    """Coverage of each survivor: sum over its supporting samples of
    1/occurrence_i, where occurrence_i counts how many survivors the sample
    contains.  Samples covered by few patterns weigh more."""
    supp = [set(p.supporting_ids.get(family, ())) if p.supporting_ids else set() for p in survivors]
    occurrence = {sid: 0 for sid in family_ids}
    for s in supp:
        for sid in s:
            if sid in occurrence:
                occurrence[sid] += 1
    out = []
    for s in supp:
        out.append(sum(1.0 / occurrence[sid] for sid in s if sid in occurrence))
    return out


def _minmax(values: Sequence[float]) -> list[float]:
    lo, hi = min(values), max(values)
    if hi == lo:
        return [0.0] * len(values)
    return [(v - lo) / (hi - lo) for v in values]


@dataclass(frozen=True)
class RankedPattern:
    pattern: Pattern
    family: str
    family_frequency: int
    coverage: float
    benign_occurrences: int
    rank_score: float


@dataclass
class RankedPatternSet:
    """Top-K patterns per family plus the flattened global order (families
    in fixed order, then rank order) used for bit encoding."""

    per_family: dict[str, list[RankedPattern]]

    @property
    def flat(self) -> list[RankedPattern]:
        out = []
        for fam in FAMILY_CLASSES:
            out.extend(self.per_family.get(fam, []))
        return out

    @property
    def graphs(self) -> list[Cfg]:
        return [rp.pattern.graph for rp in self.flat]

    def __len__(self) -> int:
        return len(self.flat)


def _count_contained(pattern: Cfg, samples: Sequence[LabeledSample], cap: int) -> int:
    """Number of samples containing the pattern, stopping early at cap."""
    n = 0
    for s in samples:
        if is_subgraph(pattern, s.cfg):
            n += 1
            if n >= cap:
                break
    return n


def rank_patterns(
    candidates: Mapping[str, Sequence[Pattern]],
    family_train: Mapping[str, Sequence[LabeledSample]],
    benign_train: Sequence[LabeledSample],
    k: int = DEFAULT_TOP_K,
    benign_ceiling: int = DEFAULT_BENIGN_CEILING,
    support_fraction: float = 0.05,
) -> RankedPatternSet:
    """Filter and rank mined candidates per family.

    Hard filters: family support >= ceil(support_fraction * family size) and
    benign containment <= benign_ceiling.  Rank score: equal-weight sum of
    min-max normalized node count, family frequency, coverage, and negated
    benign occurrences (all over the filter survivors).  Ties break on
    canonical code order."""
    if k < 1:
        raise RankingError("k must be positive")
    per_family: dict[str, list[RankedPattern]] = {}
    for fam, cands in candidates.items():
        fam_samples = list(family_train.get(fam, []))
        if not fam_samples:
            raise RankingError(f"no training samples for family {fam}")
        floor = support_floor(len(fam_samples), support_fraction)
        fam_ids = [s.id for s in fam_samples]

        survivors: list[Pattern] = []
        benign_occ: list[int] = []
        for p in sorted(cands, key=lambda p: p.code):
            freq = p.support.get(fam, 0)
            if freq < floor:
                continue
            occ = _count_contained(p.graph, benign_train, cap=benign_ceiling + 1)
            if occ > benign_ceiling:
                continue
            survivors.append(p)
            benign_occ.append(occ)
        if not survivors:
            per_family[fam] = []
            continue

        cov = coverage_scores(survivors, fam, fam_ids)
        z_nodes = _minmax([p.node_count for p in survivors])
        z_freq = _minmax([p.support.get(fam, 0) for p in survivors])
        z_cov = _minmax(cov)
        z_ben = _minmax([-occ for occ in benign_occ])
        scored = [
            RankedPattern(
                pattern=p,
                family=fam,
                family_frequency=p.support.get(fam, 0),
                coverage=cov[i],
                benign_occurrences=benign_occ[i],
                rank_score=0.25 * (z_nodes[i] + z_freq[i] + z_cov[i] + z_ben[i]),
            )
            for i, p in enumerate(survivors)
        ]
        scored.sort(key=lambda rp: (-rp.rank_score, rp.pattern.code))
        per_family[fam] = scored[:k]
    return RankedPatternSet(per_family=per_family)


def mine_family_candidates(
    train: Sequence[LabeledSample],
    min_nodes: int = DEFAULT_MIN_NODES,
    max_nodes: int = DEFAULT_MAX_NODES,
    support_fraction: float = 0.05,
) -> dict[str, list[Pattern]]:
    """Mine candidate patterns from each family's training samples."""
    out: dict[str, list[Pattern]] = {}
    for fam in FAMILIES:
        fam_samples = [s for s in train if s.cls is fam]
        if not fam_samples:
            continue
        out[fam.value] = gspan_mine(
            [s.cfg for s in fam_samples],
            min_support=support_floor(len(fam_samples), support_fraction),
            min_nodes=min_nodes,
            max_nodes=max_nodes,
            classes=[fam.value] * len(fam_samples),
            sample_ids=[s.id for s in fam_samples],
        )
    return out


# ---------------------------------------------------------------------------
# Encoding
# ---------------------------------------------------------------------------

def encode(
    g: Cfg,
    patterns: Sequence[Cfg] | RankedPatternSet,
    budget_seconds: float = DEFAULT_ENCODE_BUDGET,
) -> np.ndarray:
    """Bit vector over the pattern list: bit i is 1 when pattern i is a
    subgraph of `g`.  Raises EncodingTimeout past the time budget."""
    if isinstance(patterns, RankedPatternSet):
        patterns = patterns.graphs
    t0 = time.monotonic()
    bits = np.zeros(len(patterns), dtype=np.uint8)
    for i, p in enumerate(patterns):
        if time.monotonic() - t0 > budget_seconds:
            raise EncodingTimeout(f"encoding exceeded {budget_seconds:.0f}s at pattern {i}")
        bits[i] = 1 if is_subgraph(p, g) else 0
    return bits


def encode_many(
    samples: Sequence[LabeledSample],
    patterns: Sequence[Cfg] | RankedPatternSet,
    budget_seconds: float = DEFAULT_ENCODE_BUDGET,
) -> np.ndarray:
    if isinstance(patterns, RankedPatternSet):
        patterns = patterns.graphs
    return np.stack([encode(s.cfg, patterns, budget_seconds) for s in samples])


def encodings_to_csv(ids: Sequence[str], bits: np.ndarray) -> str:
    header = "id," + ",".join(f"p{i:04d}" for i in range(bits.shape[1]))
    lines = [header]
    for sid, row in zip(ids, bits):
        lines.append(sid + "," + ",".join(str(int(b)) for b in row))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Suspicious-behavior screen
# ---------------------------------------------------------------------------

def train_sbd(
    encodings: np.ndarray,
    labels: np.ndarray,
    seed: int = 0,
    epochs: int = 100,
    batch_size: int = 32,
) -> Model:
    """Train the two-class (Benign/Suspicious) screen on bit encodings.
    Uses the convolutional stack with its shape chain recomputed for the
    pattern-list width."""
    if encodings.ndim != 2:
        raise RankingError("encodings must be a 2-D bit matrix")
    return train(
        encodings.astype(np.float64),
        labels,
        class_names=SBD_CLASSES,
        arch="cnn",
        seed=seed,
        epochs=epochs,
        batch_size=batch_size,
    )


# ---------------------------------------------------------------------------
# Pipeline
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PipelineVerdict:
    """Final verdict plus which stage decided and each stage's probabilities."""

    verdict: str  # "Benign" | "Malware" | "Suspicious"
    family: Optional[str]
    stage: str    # "classifier" | "sbd"
    detector_probs: tuple[float, ...]
    stage_probs: tuple[float, ...]

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "family": self.family,
            "stage": self.stage,
            "detector_probs": list(self.detector_probs),
            "stage_probs": list(self.stage_probs),
        }


def classify_pipeline(
    g: Cfg,
    detector: Model,
    family_classifier: Model,
    sbd: Model,
    patterns: RankedPatternSet | Sequence[Cfg],
    budget_seconds: float = DEFAULT_ENCODE_BUDGET,
) -> PipelineVerdict:
    """detector -> family classifier for malware, or pattern screen for
    benign-looking inputs.  Only the stages on the taken path run."""
    feats = extract_features(g)[None, :]
    det_probs = detector.predict_proba(feats)[0]
    det_idx = int(det_probs.argmax())
    if detector.class_names[det_idx] == "Malware":
        fam_probs = family_classifier.predict_proba(feats)[0]
        fam = family_classifier.class_names[int(fam_probs.argmax())]
        return PipelineVerdict(
            verdict="Malware",
            family=fam,
            stage="classifier",
            detector_probs=tuple(float(x) for x in det_probs),
            stage_probs=tuple(float(x) for x in fam_probs),
        )
    bits = encode(g, patterns, budget_seconds)
    sbd_probs = sbd.predict_proba(bits[None, :].astype(np.float64))[0]
    verdict = sbd.class_names[int(sbd_probs.argmax())]
    return PipelineVerdict(
        verdict=verdict,
        family=None,
        stage="sbd",
        detector_probs=tuple(float(x) for x in det_probs),
        stage_probs=tuple(float(x) for x in sbd_probs),
    )


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def write_ranked(ranked: RankedPatternSet, path: str | Path) -> None:
    doc = {
        "families": {
            fam: [
                {
                    "dfs_code": code_to_string(rp.pattern.code),
                    "node_count": rp.pattern.node_count,
                    "family_frequency": rp.family_frequency,
                    "coverage": rp.coverage,
                    "benign_occurrences": rp.benign_occurrences,
                    "rank_score": rp.rank_score,
                    "support": dict(sorted(rp.pattern.support.items())),
                }
                for rp in rps
            ]
            for fam, rps in ranked.per_family.items()
        }
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True))


def read_ranked(path: str | Path) -> RankedPatternSet:
    doc = json.loads(Path(path).read_text())
    per_family: dict[str, list[RankedPattern]] = {}
    for fam, entries in doc["families"].items():
        rps = []
        for e in entries:
            code = string_to_code(e["dfs_code"])
            pat = Pattern(
                code=code,
                graph=code_to_graph(code),
                support={str(k): int(v) for k, v in e["support"].items()},
                node_count=int(e["node_count"]),
            )
            rps.append(
                RankedPattern(
                    pattern=pat,
                    family=fam,
                    family_frequency=int(e["family_frequency"]),
                    coverage=float(e["coverage"]),
                    benign_occurrences=int(e["benign_occurrences"]),
                    rank_score=float(e["rank_score"]),
                )
            )
        per_family[fam] = rps
    return RankedPatternSet(per_family=per_family)


def write_verdicts(
    ids: Sequence[str], verdicts: Sequence[PipelineVerdict], path: str | Path
) -> None:
    with open(path, "w") as f:
        for sid, v in zip(ids, verdicts):
            row = {"id": sid}
            row.update(v.to_dict())
            f.write(json.dumps(row, sort_keys=True) + "\n")
