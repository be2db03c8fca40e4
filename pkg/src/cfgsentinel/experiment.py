"""End-to-end experiment: corpus, models, mining, attacks, pipeline.

Everything is seeded and every artifact is written deterministically, so a
re-run with the same seed and configuration reproduces the output tree byte
for byte (crafting-time fields are omitted in this mode).
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import adversarial, corpus, features, fhmc, mining, nn
from .graph import FAMILIES, LabeledSample, SampleClass, write_corpus

Sections = Mapping[str, Mapping[str, str]]


def _get(sections: Sections, sec: str, key: str, default, cast=None):
    try:
        raw = sections[sec][key]
    except KeyError:
        return default
    return cast(raw) if cast else raw


def _feature_matrix(samples: Sequence[LabeledSample]) -> np.ndarray:
    return np.stack([features.extract_features(s.cfg) for s in samples])


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True))


def run(out: str | Path, seed: int, sections: Sections | None = None, include_timing: bool = False) -> dict:
    """Run the full experiment under `out`; returns the in-memory results."""
    sections = sections or {}
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)

    # -- corpus ------------------------------------------------------------
    corpus_items = dict(sections.get("corpus", {}))
    corpus_items["seed"] = str(seed)
    ccfg = corpus.config_from_mapping(corpus_items)
    samples = corpus.generate(ccfg)
    write_corpus(samples, out / "corpus")

    fraction = _get(sections, "split", "train_fraction", 0.8, float)
    train_s, test_s = corpus.split(samples, fraction, seed)
    _write_json(
        out / "splits.json",
        {"train": [s.id for s in train_s], "test": [s.id for s in test_s]},
    )

    # -- features ----------------------------------------------------------
    X_train = _feature_matrix(train_s)
    X_test = _feature_matrix(test_s)
    (out / "features").mkdir(exist_ok=True)
    (out / "features" / "train.csv").write_text(
        features.features_to_csv((s.id, x) for s, x in zip(train_s, X_train))
    )
    (out / "features" / "test.csv").write_text(
        features.features_to_csv((s.id, x) for s, x in zip(test_s, X_test))
    )

    # -- detector and family classifier -------------------------------------
    arch = _get(sections, "train", "arch", "cnn")
    epochs = _get(sections, "train", "epochs", 100, int)
    batch = _get(sections, "train", "batch_size", 32, int)
    lr = _get(sections, "train", "lr", 1e-3, float)

    y_det_train = np.array([0 if s.cls is SampleClass.BENIGN else 1 for s in train_s])
    y_det_test = np.array([0 if s.cls is SampleClass.BENIGN else 1 for s in test_s])
    detector = nn.train(
        X_train, y_det_train, fhmc.DETECTOR_CLASSES, arch=arch,
        seed=seed, epochs=epochs, batch_size=batch, lr=lr,
    )

    fam_index = {f.value: i for i, f in enumerate(FAMILIES)}
    mal_train = [s for s in train_s if s.cls is not SampleClass.BENIGN]
    mal_test = [s for s in test_s if s.cls is not SampleClass.BENIGN]
    Xf_train = _feature_matrix(mal_train)
    yf_train = np.array([fam_index[s.cls.value] for s in mal_train])
    classifier = nn.train(
        Xf_train, yf_train, fhmc.FAMILY_CLASSES, arch=arch,
        seed=seed + 1, epochs=epochs, batch_size=batch, lr=lr,
    )

    models_dir = out / "models"
    models_dir.mkdir(exist_ok=True)
    nn.save_checkpoint(detector, models_dir / "detector.ckpt")
    nn.save_checkpoint(classifier, models_dir / "classifier.ckpt")

    det_metrics = nn.evaluate(detector, X_test, y_det_test, benign_index=0)
    fam_metrics = nn.evaluate(classifier, _feature_matrix(mal_test), np.array(
        [fam_index[s.cls.value] for s in mal_test]
    ))
    _write_json(out / "metrics" / "detector.json", det_metrics.to_dict())
    _write_json(out / "metrics" / "classifier.json", fam_metrics.to_dict())

    # -- family pattern mining and ranking ----------------------------------
    min_nodes = _get(sections, "mining", "min_nodes", fhmc.DEFAULT_MIN_NODES, int)
    max_nodes = _get(sections, "mining", "max_nodes", fhmc.DEFAULT_MAX_NODES, int)
    mine_fraction = _get(sections, "mining", "support_fraction", 0.9, float)
    rank_fraction = _get(sections, "rank", "support_fraction", 0.05, float)
    k = _get(sections, "rank", "k", fhmc.DEFAULT_TOP_K, int)
    ceiling = _get(sections, "rank", "benign_ceiling", fhmc.DEFAULT_BENIGN_CEILING, int)
    budget = _get(sections, "encode", "budget_seconds", fhmc.DEFAULT_ENCODE_BUDGET, float)

    candidates = fhmc.mine_family_candidates(
        train_s, min_nodes=min_nodes, max_nodes=max_nodes, support_fraction=mine_fraction
    )
    patterns_dir = out / "patterns"
    patterns_dir.mkdir(exist_ok=True)
    for fam, cands in sorted(candidates.items()):
        mining.write_patterns(cands, patterns_dir / f"candidates_{fam}.json")

    benign_train = [s for s in train_s if s.cls is SampleClass.BENIGN]
    family_train = {
        f.value: [s for s in train_s if s.cls is f] for f in FAMILIES
    }
    ranked = fhmc.rank_patterns(
        candidates, family_train, benign_train,
        k=k, benign_ceiling=ceiling, support_fraction=rank_fraction,
    )
    fhmc.write_ranked(ranked, patterns_dir / "ranked.json")

    # -- encodings and the suspicious-behavior screen ------------------------
    bits_train = fhmc.encode_many(train_s, ranked, budget)
    bits_test = fhmc.encode_many(test_s, ranked, budget)
    enc_dir = out / "encodings"
    enc_dir.mkdir(exist_ok=True)
    (enc_dir / "train.csv").write_text(
        fhmc.encodings_to_csv([s.id for s in train_s], bits_train)
    )
    (enc_dir / "test.csv").write_text(
        fhmc.encodings_to_csv([s.id for s in test_s], bits_test)
    )

    y_sbd_train = np.array([0 if s.cls is SampleClass.BENIGN else 1 for s in train_s])
    y_sbd_test = np.array([0 if s.cls is SampleClass.BENIGN else 1 for s in test_s])
    sbd = fhmc.train_sbd(bits_train, y_sbd_train, seed=seed + 2, epochs=epochs, batch_size=batch)
    nn.save_checkpoint(sbd, models_dir / "sbd.ckpt")
    sbd_metrics = nn.evaluate(sbd, bits_test.astype(np.float64), y_sbd_test, benign_index=0)
    _write_json(out / "metrics" / "sbd.json", sbd_metrics.to_dict())

    # -- attacks -------------------------------------------------------------
    sgea_lo = _get(sections, "attack", "sgea_min_nodes", 5, int)
    sgea_hi = _get(sections, "attack", "sgea_max_nodes", 12, int)
    sgea_per_size = _get(sections, "attack", "sgea_per_size", 16, int)
    sgea_fraction = _get(sections, "attack", "sgea_support_fraction", 0.05, float)
    target = _get(sections, "attack", "target", "Benign")

    # Candidate pool: benign-discriminative patterns, then the best
    # `sgea_per_size` per node count so the ascending attack loop always has
    # larger fallbacks for victims the small patterns cannot flip.
    sgea_pool = mining.select_discriminative(
        train_s,
        SampleClass.BENIGN,
        min_support=fhmc.support_floor(len(benign_train), sgea_fraction),
        min_nodes=sgea_lo,
        max_nodes=sgea_hi,
        top_k=None,
    )
    by_size: dict[int, list] = {}
    for p in sgea_pool:
        by_size.setdefault(p.graph.node_count, []).append(p)
    sgea_candidates = [
        p for size in sorted(by_size) for p in by_size[size][:sgea_per_size]
    ]
    mining.write_patterns(sgea_candidates, patterns_dir / "sgea_candidates.json")

    attacks_dir = out / "attacks"
    attacks_dir.mkdir(exist_ok=True)
    reports = {}
    evading: dict[str, object] = {}
    for strategy in adversarial.STRATEGIES:
        report, merged = adversarial.gea_attack(
            detector, mal_test, benign_train, strategy, target, include_timing=include_timing
        )
        reports[f"gea_{strategy}"] = report
        adversarial.write_report_json(report, attacks_dir / f"gea_{strategy}.json")
        for rec in report.records:
            if rec.sample_id in merged and rec.adversarial_prediction == target:
                evading[f"gea_{strategy}:{rec.sample_id}"] = merged[rec.sample_id]

    sgea_report, sgea_merged = adversarial.sgea_attack_all(
        detector, mal_test, sgea_candidates, target, include_timing=include_timing
    )
    reports["sgea"] = sgea_report
    adversarial.write_report_json(sgea_report, attacks_dir / "sgea.json")
    for rec in sgea_report.records:
        if rec.sample_id in sgea_merged and rec.adversarial_prediction == target:
            evading[f"sgea:{rec.sample_id}"] = sgea_merged[rec.sample_id]

    adversarial.write_report_csv(
        [reports["gea_minimum"], reports["gea_median"], reports["gea_maximum"], sgea_report],
        attacks_dir / "summary.csv",
    )

    # -- screen the evading adversarial graphs -------------------------------
    flagged = 0
    screen_rows = []
    for key in sorted(evading):
        bits = fhmc.encode(evading[key], ranked, budget)
        pred = sbd.class_names[int(sbd.predict(bits[None, :].astype(np.float64))[0])]
        hit = pred == "Suspicious"
        flagged += int(hit)
        screen_rows.append({"graph": key, "flagged": hit})
    benign_test = [s for s in test_s if s.cls is SampleClass.BENIGN]
    benign_bits = bits_test[[i for i, s in enumerate(test_s) if s.cls is SampleClass.BENIGN]]
    benign_pred = sbd.predict(benign_bits.astype(np.float64))
    benign_flagged = int(np.sum(benign_pred == 1))
    screen = {
        "evading": len(evading),
        "flagged": flagged,
        "flag_rate": flagged / len(evading) if evading else None,
        "benign_total": len(benign_test),
        "benign_flagged": benign_flagged,
        "benign_flag_rate": benign_flagged / len(benign_test) if benign_test else None,
        "per_graph": screen_rows,
    }
    _write_json(attacks_dir / "sbd_screen.json", screen)

    # -- full pipeline over the test split -----------------------------------
    verdicts = [
        fhmc.classify_pipeline(s.cfg, detector, classifier, sbd, ranked, budget)
        for s in test_s
    ]
    pipe_dir = out / "pipeline"
    pipe_dir.mkdir(exist_ok=True)
    fhmc.write_verdicts([s.id for s in test_s], verdicts, pipe_dir / "verdicts.jsonl")
    by_verdict: dict[str, int] = {}
    for v in verdicts:
        by_verdict[v.verdict] = by_verdict.get(v.verdict, 0) + 1
    _write_json(pipe_dir / "summary.json", {"verdicts": dict(sorted(by_verdict.items()))})

    return {
        "samples": samples,
        "train": train_s,
        "test": test_s,
        "detector": detector,
        "classifier": classifier,
        "sbd": sbd,
        "detector_metrics": det_metrics,
        "classifier_metrics": fam_metrics,
        "sbd_metrics": sbd_metrics,
        "candidates": candidates,
        "ranked": ranked,
        "sgea_candidates": sgea_candidates,
        "reports": reports,
        "evading": evading,
        "screen": screen,
        "verdicts": verdicts,
    }
