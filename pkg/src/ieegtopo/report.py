"""Result serialization and report emission: CSV tables and SVG box plots.

``results.csv`` is the full record (one row per grid cell, fixed column
order, float cells written with repr so parse-back is exact). The derived
outputs (top-k table, grouped summaries, plots) are pure functions of it.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Callable, Sequence

import matplotlib
import numpy as np

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .pipeline import AblationResult, ExperimentConfig

matplotlib.rcParams["svg.hashsalt"] = "ieegtopo"  # deterministic SVG ids

RESULT_COLUMNS = [
    "pipeline",
    "band",
    "dimred",
    "feature",
    "classifier",
    "split_seed",
    "status",
    "train_ba",
    "test_ba",
    "gap",
    "gate_passed",
    "wall_time_s",
    "error",
    "config_json",
    "metadata_json",
]

BAND_DISPLAY = {
    "delta": "Delta",
    "theta": "Theta",
    "alpha": "Alpha",
    "beta": "Beta",
    "low_gamma": "Low Gamma",
    "high_gamma": "High Gamma",
    "broadband": "Broadband",
}
DIMRED_DISPLAY = {
    "pca": "PCA",
    "lda": "LDA",
    "nmf": "NMF",
    "fa": "FA",
    "tsvd": "TSVD",
    "isomap": "Isomap",
    "lle": "LLE",
    "mds": "MDS",
    "tsne": "t-SNE",
    "none": "-",
}
FEATURE_DISPLAY = {
    "carlsson": "Carlsson",
    "image": "Persistence Image",
    "tent": "Tent Template",
    "polynomial": "Polynomial Template",
    "entropy": "Entropy",
}
CLASSIFIER_DISPLAY = {
    "logistic": "Logistic Regression",
    "ridge": "Ridge Classifier",
    "linear_svm": "Linear SVM",
    "gaussian_nb": "Gaussian Naive Bayes",
    "lda": "LDA",
    "deep_mlp": "DeepMLP",
}


def dimred_name(config: ExperimentConfig) -> str:
    return config.reducer.method if config.reducer is not None else "none"


def model_class(config: ExperimentConfig) -> str:
    return "deep" if config.classifier.method == "deep_mlp" else "classical"


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def results_to_csv(results: Sequence[AblationResult], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RESULT_COLUMNS)
        for r in results:
            writer.writerow(
                [
                    r.config.pipeline,
                    r.config.band,
                    dimred_name(r.config),
                    r.config.feature.kind,
                    r.config.classifier.method,
                    r.config.split_seed,
                    r.status,
                    _fmt(r.train_ba),
                    _fmt(r.test_ba),
                    _fmt(r.gap),
                    _fmt(r.gate_passed),
                    _fmt(r.wall_time_s),
                    _fmt(r.error),
                    r.config.canonical_json(),
                    json.dumps(r.metadata, sort_keys=True),
                ]
            )


def results_from_csv(path) -> list[AblationResult]:
    results = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != RESULT_COLUMNS:
            raise ValueError(f"unexpected results.csv header: {header}")
        for row in reader:
            cells = dict(zip(RESULT_COLUMNS, row))
            gate = cells["gate_passed"]
            results.append(
                AblationResult(
                    config=ExperimentConfig.from_dict(json.loads(cells["config_json"])),
                    status=cells["status"],
                    train_ba=float(cells["train_ba"]) if cells["train_ba"] else None,
                    test_ba=float(cells["test_ba"]) if cells["test_ba"] else None,
                    gap=float(cells["gap"]) if cells["gap"] else None,
                    gate_passed=None if gate == "" else gate == "true",
                    wall_time_s=float(cells["wall_time_s"]) if cells["wall_time_s"] else 0.0,
                    error=cells["error"] or None,
                    metadata=json.loads(cells["metadata_json"]),
                )
            )
    return results


def ranked_gate_passing(results: Sequence[AblationResult]) -> list[AblationResult]:
    ok = [r for r in results if r.status == "ok" and r.gate_passed]
    return sorted(ok, key=lambda r: (-r.test_ba, r.config.canonical_json()))


def write_top_k(results: Sequence[AblationResult], path, top_k: int = 10) -> None:
    """Ranked table of the best gate-passing cells (Rank, Accuracy, Band, ...)."""
    ranked = ranked_gate_passing(results)[:top_k]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["Rank", "Accuracy", "Band", "Dim Red", "Feature", "Classifier"])
        for i, r in enumerate(ranked, start=1):
            writer.writerow(
                [
                    i,
                    f"{100 * r.test_ba:.2f}%",
                    BAND_DISPLAY[r.config.band],
                    DIMRED_DISPLAY[dimred_name(r.config)],
                    FEATURE_DISPLAY[r.config.feature.kind],
                    CLASSIFIER_DISPLAY[r.config.classifier.method],
                ]
            )


GROUPINGS: dict[str, Callable[[ExperimentConfig], str]] = {
    "band": lambda c: c.band,
    "dimred": dimred_name,
    "feature": lambda c: c.feature.kind,
    "modelclass": model_class,
}


def _grouped(results: Sequence[AblationResult], key: Callable[[ExperimentConfig], str]):
    groups: dict[str, list[AblationResult]] = {}
    for r in results:
        if r.status != "ok":
            continue
        groups.setdefault(key(r.config), []).append(r)
    return dict(sorted(groups.items()))


def write_summary(results: Sequence[AblationResult], path, grouping: str) -> None:
    """Per-group means/maxima for all cells and for the gate-passing subset."""
    key = GROUPINGS[grouping]
    groups = _grouped(results, key)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            [grouping, "n_all", "mean_test_ba_all", "max_test_ba_all",
             "n_gated", "mean_test_ba_gated", "max_test_ba_gated"]
        )
        for name, rs in groups.items():
            all_ba = [r.test_ba for r in rs]
            gated = [r.test_ba for r in rs if r.gate_passed]
            writer.writerow(
                [
                    name,
                    len(all_ba),
                    repr(sum(all_ba) / len(all_ba)),
                    repr(max(all_ba)),
                    len(gated),
                    repr(sum(gated) / len(gated)) if gated else "",
                    repr(max(gated)) if gated else "",
                ]
            )


def write_boxplot(results: Sequence[AblationResult], path, grouping: str) -> None:
    """Box plot of gate-passing test balanced accuracy per group, as SVG."""
    key = GROUPINGS[grouping]
    groups = {
        name: [r.test_ba for r in rs if r.gate_passed]
        for name, rs in _grouped(results, key).items()
    }
    groups = {k: v for k, v in groups.items() if v}
    fig, ax = plt.subplots(figsize=(1.2 + 1.1 * max(len(groups), 1), 3.6))
    if groups:
        ax.boxplot(list(groups.values()), tick_labels=list(groups.keys()))
    ax.set_ylabel("test balanced accuracy")
    ax.set_title(f"by {grouping} (gate-passing)")
    ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def write_report(results: Sequence[AblationResult], out_dir, top_k: int = 10) -> list[Path]:
    """Emit the full report file set under out_dir; returns the paths written."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    path = out_dir / "results.csv"
    results_to_csv(results, path)
    written.append(path)

    path = out_dir / "top_k.csv"
    write_top_k(results, path, top_k)
    written.append(path)

    for grouping in GROUPINGS:
        path = out_dir / f"summary_by_{grouping}.csv"
        write_summary(results, path, grouping)
        written.append(path)
        path = out_dir / f"boxplot_by_{grouping}.svg"
        write_boxplot(results, path, grouping)
        written.append(path)
    return written
