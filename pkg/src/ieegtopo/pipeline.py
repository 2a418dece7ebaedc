"""Experiment orchestration: the two pipelines, the ablation grid, the overfit gate.

The dimension-reduced pipeline collapses each segment's channels to a 1-D
series before featurization; the multichannel pipeline featurizes every
retained channel and concatenates. Everything derived from data (image
bounds, lifetime normalizers, template boxes, feature selection, scaling) is
fitted strictly on the training split; test rows only ever reach transform
and predict.
"""

from __future__ import annotations

import hashlib
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from . import classify, persistence
from .classify import ClassifierSpec, balanced_accuracy, stratified_split
from .dimred import ReducerSpec, fit_lda_reducer, reduce_segment
from .features import (
    CARLSSON_NAMES,
    ENTROPY_NAMES,
    EntropyParams,
    FeatureMatrix,
    PersistenceImageParams,
    TemplateParams,
    carlsson_coordinates,
    entropy_features,
    fit_image_params,
    fit_template_bounds,
    image_feature_names,
    persistence_image,
    polynomial_feature_names,
    polynomial_features,
    tent_feature_names,
    tent_features,
)
from .ingest import Dataset
from .ingest import select_common_channels as _select_common_channels
from .signal import Band, bandpass, standardize_apply, standardize_fit

OVERFIT_GATE = 0.10

FEATURE_KINDS = ("carlsson", "image", "tent", "polynomial", "entropy")


@dataclass(frozen=True)
class FeatureSpec:
    """Which diagram/series featurizer to use, with its parameters."""

    kind: str
    grid_size: int = 20
    sigma: float | None = None
    coords: str = "birth_death"
    subdivisions: int = 5
    padding: float = 0.05
    degree: int = 3
    embed_dim: int = 4
    delay: int = 1
    alpha: float = 2.0
    q: float = 2.0

    def __post_init__(self):
        if self.kind not in FEATURE_KINDS:
            raise ValueError(f"unknown feature kind {self.kind!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    """One ablation cell: band x reducer x feature x classifier."""

    pipeline: str                       # "dim_reduced" | "multichannel"
    band: str                           # Band label
    feature: FeatureSpec
    classifier: ClassifierSpec
    reducer: ReducerSpec | None = None
    k_best: int = 500
    split_seed: int = 0
    train_fraction: float = 0.8

    def __post_init__(self):
        if self.pipeline not in ("dim_reduced", "multichannel"):
            raise ValueError(f"unknown pipeline {self.pipeline!r}")
        Band.from_name(self.band)
        if self.pipeline == "dim_reduced" and self.reducer is None:
            raise ValueError("dim_reduced configs need a reducer")
        if self.pipeline == "multichannel":
            if self.reducer is not None:
                raise ValueError("multichannel configs carry no reducer")
            if not 1 <= self.k_best <= 500:
                raise ValueError("multichannel k_best must be in [1, 500]")

    def to_dict(self) -> dict:
        out = asdict(self)
        if self.reducer is None:
            out.pop("reducer")
        out["classifier"] = asdict(self.classifier)
        out["classifier"]["hidden_dims"] = list(self.classifier.hidden_dims)
        return out

    @staticmethod
    def from_dict(raw: dict) -> "ExperimentConfig":
        raw = dict(raw)
        feature = FeatureSpec(**raw.pop("feature"))
        clf = dict(raw.pop("classifier"))
        if "hidden_dims" in clf:
            clf["hidden_dims"] = tuple(clf["hidden_dims"])
        classifier = ClassifierSpec(**clf)
        reducer = raw.pop("reducer", None)
        if reducer is not None:
            reducer = ReducerSpec(**reducer)
        return ExperimentConfig(feature=feature, classifier=classifier, reducer=reducer, **raw)

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))


def derived_seed(global_seed: int, config: ExperimentConfig) -> int:
    """Stable 32-bit seed from (global seed, config), independent of run order."""
    digest = hashlib.sha256(f"{global_seed}|{config.canonical_json()}".encode()).digest()
    return int.from_bytes(digest[:4], "big")


@dataclass
class AblationResult:
    """One grid cell's outcome, including the overfit-gate verdict."""

    config: ExperimentConfig
    status: str = "ok"                 # "ok" | "error"
    train_ba: float | None = None
    test_ba: float | None = None
    gap: float | None = None
    gate_passed: bool | None = None
    wall_time_s: float = 0.0
    error: str | None = None
    metadata: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# Featurizers with train-only fitting
# ---------------------------------------------------------------------------

class DiagramFeaturizer:
    """Train-fitted diagram vectorizer for one FeatureSpec (not entropy)."""

    def __init__(self, spec: FeatureSpec):
        if spec.kind == "entropy":
            raise ValueError("entropy features come from the series, not the diagram")
        self.spec = spec
        self._image_params = PersistenceImageParams(
            grid_size=spec.grid_size, sigma=spec.sigma, coords=spec.coords
        )
        self._template_params = TemplateParams(
            subdivisions=spec.subdivisions, padding=spec.padding, degree=spec.degree
        )
        self._fitted = spec.kind in ("carlsson", "polynomial")  # no data-dependent state

    def fit(self, train_diagrams: Sequence[persistence.PersistenceDiagram]) -> "DiagramFeaturizer":
        if self.spec.kind == "image":
            self._image_params = fit_image_params(train_diagrams, self._image_params)
        elif self.spec.kind == "tent":
            self._template_params = fit_template_bounds(train_diagrams, self._template_params)
        self._fitted = True
        return self

    def transform(self, diagram: persistence.PersistenceDiagram) -> np.ndarray:
        if not self._fitted:
            raise RuntimeError("featurizer used before fit")
        if self.spec.kind == "carlsson":
            return carlsson_coordinates(diagram)
        if self.spec.kind == "image":
            return persistence_image(diagram, self._image_params)
        if self.spec.kind == "tent":
            return tent_features(diagram, self._template_params)
        return polynomial_features(diagram, self._template_params)

    def names(self) -> list[str]:
        if self.spec.kind == "carlsson":
            return list(CARLSSON_NAMES)
        if self.spec.kind == "image":
            return image_feature_names(self._image_params)
        if self.spec.kind == "tent":
            return tent_feature_names(self._template_params)
        return polynomial_feature_names(self._template_params)

    def fitted_state(self) -> dict:
        if self.spec.kind == "image":
            return {"bounds": self._image_params.bounds, "sigma": self._image_params.sigma,
                    "l_max": self._image_params.l_max}
        if self.spec.kind == "tent":
            return {"bounds": self._template_params.bounds}
        return {}


def _entropy_params(spec: FeatureSpec) -> EntropyParams:
    return EntropyParams(embed_dim=spec.embed_dim, delay=spec.delay, alpha=spec.alpha, q=spec.q)


def _series_to_features(
    series_per_segment: list[np.ndarray],
    train_idx: np.ndarray,
    spec: FeatureSpec,
) -> tuple[np.ndarray, list[str], dict]:
    """Featurize 1-D series, fitting any normalizers on the training split only."""
    if spec.kind == "entropy":
        params = _entropy_params(spec)
        rows = [entropy_features(s, params) for s in series_per_segment]
        return np.vstack(rows), list(ENTROPY_NAMES), {}
    diagrams = [persistence.sublevel_diagram(s) for s in series_per_segment]
    featurizer = DiagramFeaturizer(spec).fit([diagrams[i] for i in train_idx])
    rows = [featurizer.transform(d) for d in diagrams]
    return np.vstack(rows), featurizer.names(), featurizer.fitted_state()


# ---------------------------------------------------------------------------
# Pipeline I: dimension-reduced
# ---------------------------------------------------------------------------

def _reduce_all_segments(
    dataset: Dataset, band: Band, reducer: ReducerSpec, train_idx: np.ndarray
) -> tuple[list[np.ndarray], dict]:
    """Band-filter and collapse every segment to a 1-D series.

    Most reducers fit per segment. The LDA reducer is fit per recording on
    that recording's training segments (time samples inherit the segment
    label), then applied to all of the recording's segments.
    """
    segs = dataset.segments.segments
    banded = [bandpass(dataset.segment_data(i), band, rec_rate(dataset, i)) for i in range(len(segs))]
    meta: dict = {}

    if reducer.method == "lda":
        series = [None] * len(segs)
        train_set = set(train_idx.tolist())
        for rec_id in sorted({s.recording for s in segs}):
            members = [i for i, s in enumerate(segs) if s.recording == rec_id]
            train_members = [i for i in members if i in train_set]
            if not train_members:
                raise ValueError(f"recording {rec_id} has no training segments for LDA reduction")
            X = np.vstack([banded[i].T for i in train_members])
            labels = np.concatenate(
                [np.full(banded[i].shape[1], int(segs[i].label)) for i in train_members]
            )
            fitted = fit_lda_reducer(X, labels, n_components=reducer.target_dim)
            meta.setdefault("low_separation", False)
            meta["low_separation"] |= fitted.metadata["low_separation"]
            for i in members:
                series[i] = fitted.transform(banded[i].T)[:, 0]
        return series, meta

    series = []
    decimated = False
    for i in range(len(segs)):
        s, fitted = reduce_segment(banded[i], reducer)
        decimated |= bool(fitted.metadata.get("decimated", False))
        series.append(s)
    if reducer.method in ("isomap", "lle", "mds", "tsne"):
        meta["decimated"] = decimated
    return series, meta


def rec_rate(dataset: Dataset, segment_index: int) -> float:
    seg = dataset.segments.segments[segment_index]
    return dataset.recordings[seg.recording].sample_rate


def run_pipeline_one(
    config: ExperimentConfig, dataset: Dataset, global_seed: int = 0
) -> AblationResult:
    """Band-pass, reduce to 1-D, featurize, classify; report both splits."""
    if config.pipeline != "dim_reduced":
        raise ValueError("config is not a dim_reduced pipeline")
    t0 = time.perf_counter()
    band = Band.from_name(config.band)
    labels = dataset.labels()
    train_idx, test_idx = stratified_split(labels, config.train_fraction, config.split_seed)

    seed = derived_seed(global_seed, config)
    reducer = replace(config.reducer, seed=(config.reducer.seed + seed) % 2**32)
    clf_spec = replace(config.classifier, seed=(config.classifier.seed + seed) % 2**32)

    series, reduce_meta = _reduce_all_segments(dataset, band, reducer, train_idx)
    X, names, feat_state = _series_to_features(series, train_idx, config.feature)

    result = _classify_split(X, labels, train_idx, test_idx, clf_spec, fit_state=feat_state)
    result.config = config
    result.wall_time_s = time.perf_counter() - t0
    result.metadata.update(reduce_meta)
    result.metadata.update(
        {
            "n_features": len(names),
            "featurizer": feat_state,
            "global_pair": persistence.GLOBAL_PAIR_CONVENTION
            if config.feature.kind != "entropy"
            else None,
        }
    )
    return result


# ---------------------------------------------------------------------------
# Pipeline II: multichannel
# ---------------------------------------------------------------------------

def select_k_best(X_train: np.ndarray, y_train: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k columns with the highest one-way ANOVA F score.

    Ties break toward the lower index; zero-variance columns score 0.
    Returned indices are sorted ascending.
    """
    F = anova_f_scores(X_train, y_train)
    order = np.lexsort((np.arange(len(F)), -F))
    return np.sort(order[: min(k, len(F))])


def anova_f_scores(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Per-column one-way ANOVA F statistic; degenerate columns score 0."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    classes = np.unique(y)
    n = len(y)
    if len(classes) < 2 or n <= len(classes):
        raise ValueError("ANOVA needs >= 2 classes and more rows than classes")
    overall = X.mean(axis=0)
    ssb = np.zeros(X.shape[1])
    ssw = np.zeros(X.shape[1])
    for c in classes:
        Xc = X[y == c]
        mu = Xc.mean(axis=0)
        ssb += len(Xc) * (mu - overall) ** 2
        ssw += ((Xc - mu) ** 2).sum(axis=0)
    msb = ssb / (len(classes) - 1)
    msw = ssw / (n - len(classes))
    with np.errstate(divide="ignore", invalid="ignore"):
        F = msb / msw
    F[msw == 0] = np.where(msb[msw == 0] > 0, np.inf, 0.0)
    return F


def _multichannel_matrix(config: ExperimentConfig, dataset: Dataset):
    """Concatenated per-channel features over recordings with common channels.

    Returns (X, names, labels, train/test indices, selection, featurizer
    state). Channel order is the sorted common-channel name list, identical
    for every segment.
    """
    band = Band.from_name(config.band)
    counts = [0] * len(dataset.recordings)
    for seg in dataset.segments:
        counts[seg.recording] += 1
    selection = _select_common_channels(dataset.recordings, counts)
    if len(selection.channels) < 2:
        raise ValueError(f"need at least 2 common channels, found {len(selection.channels)}")
    retained = set(selection.retained)
    seg_ids = [i for i, seg in enumerate(dataset.segments) if seg.recording in retained]
    if not seg_ids:
        raise ValueError("no segments left after channel subsetting")

    labels = dataset.labels()[seg_ids]
    train_idx, test_idx = stratified_split(labels, config.train_fraction, config.split_seed)

    channels = selection.channels
    per_channel_series: list[list[np.ndarray]] = []
    for i in seg_ids:
        seg = dataset.segments.segments[i]
        rec = dataset.recordings[seg.recording]
        rows = [rec.channels.index(ch) for ch in channels]
        data = bandpass(dataset.segment_data(i)[rows], band, rec.sample_rate)
        per_channel_series.append([data[c] for c in range(len(channels))])

    blocks: list[np.ndarray] = []
    names: list[str] = []
    feat_state: dict = {}
    if config.feature.kind == "entropy":
        params = _entropy_params(config.feature)
        for c, ch in enumerate(channels):
            rows = [entropy_features(s[c], params) for s in per_channel_series]
            blocks.append(np.vstack(rows))
            names.extend(f"{ch}_{n}" for n in ENTROPY_NAMES)
    else:
        diagrams = [
            [persistence.sublevel_diagram(s[c]) for c in range(len(channels))]
            for s in per_channel_series
        ]
        train_diagrams = [d for i in train_idx for d in diagrams[i]]
        featurizer = DiagramFeaturizer(config.feature).fit(train_diagrams)
        feat_state = featurizer.fitted_state()
        for c, ch in enumerate(channels):
            rows = [featurizer.transform(diagrams[i][c]) for i in range(len(seg_ids))]
            blocks.append(np.vstack(rows))
            names.extend(f"{ch}_{n}" for n in featurizer.names())
    X = np.hstack(blocks)
    return X, names, labels, train_idx, test_idx, selection, feat_state


def run_pipeline_two(
    config: ExperimentConfig, dataset: Dataset, global_seed: int = 0
) -> AblationResult:
    """Per-channel featurization, concatenation, SelectKBest, classification."""
    if config.pipeline != "multichannel":
        raise ValueError("config is not a multichannel pipeline")
    t0 = time.perf_counter()
    X, names, labels, train_idx, test_idx, selection, feat_state = _multichannel_matrix(
        config, dataset
    )
    seed = derived_seed(global_seed, config)
    clf_spec = replace(config.classifier, seed=(config.classifier.seed + seed) % 2**32)

    selected = select_k_best(X[train_idx], labels[train_idx], config.k_best)
    Xs = X[:, selected]

    result = _classify_split(
        Xs, labels, train_idx, test_idx, clf_spec,
        fit_state={"featurizer": feat_state, "selected_columns": selected.tolist()},
    )
    result.config = config
    result.wall_time_s = time.perf_counter() - t0
    result.metadata.update(
        {
            "channels": selection.channels,
            "retained_recordings": sorted(selection.retained),
            "channel_warning": selection.warning,
            "width_before_selection": int(X.shape[1]),
            "n_features": int(Xs.shape[1]),
            "featurizer": feat_state,
        }
    )
    return result


# ---------------------------------------------------------------------------
# Shared classification tail, gate, grid
# ---------------------------------------------------------------------------

def _classify_split(X, labels, train_idx, test_idx, clf_spec, fit_state=None) -> AblationResult:
    scaler = standardize_fit(X[train_idx])
    X_std = standardize_apply(scaler, X)
    model = classify.fit(clf_spec, X_std[train_idx], labels[train_idx])
    train_ba = balanced_accuracy(labels[train_idx], model.predict(X_std[train_idx]))
    test_ba = balanced_accuracy(labels[test_idx], model.predict(X_std[test_idx]))
    gap = train_ba - test_ba

    # digest of everything fitted: must be invariant to anything test-side
    digest = hashlib.sha256()
    digest.update(model.to_json().encode())
    digest.update(scaler.mean.tobytes() + scaler.std.tobytes())
    digest.update(json.dumps(fit_state or {}, sort_keys=True, default=str).encode())
    return AblationResult(
        config=None,  # filled by the caller
        status="ok",
        train_ba=train_ba,
        test_ba=test_ba,
        gap=gap,
        gate_passed=bool(gap <= OVERFIT_GATE),
        metadata={
            "n_train": int(len(train_idx)),
            "n_test": int(len(test_idx)),
            "fit_digest": digest.hexdigest(),
        },
    )


def run_experiment(config: ExperimentConfig, dataset: Dataset, global_seed: int = 0) -> AblationResult:
    """Run one config, catching failures into an error-status result."""
    try:
        if config.pipeline == "dim_reduced":
            return run_pipeline_one(config, dataset, global_seed)
        return run_pipeline_two(config, dataset, global_seed)
    except Exception as exc:  # per-cell isolation: the sweep must not abort
        return AblationResult(
            config=config,
            status="error",
            error=f"{type(exc).__name__}: {exc}",
        )


def _result_sort_key(r: AblationResult):
    rank = 0 if (r.status == "ok" and r.gate_passed) else (1 if r.status == "ok" else 2)
    ba = -(r.test_ba if r.test_ba is not None else 0.0)
    return (rank, ba, r.config.canonical_json())


def _run_cell(args):
    config, dataset, global_seed = args
    return run_experiment(config, dataset, global_seed)


def ablate(
    grid: Sequence[ExperimentConfig],
    dataset: Dataset,
    global_seed: int = 0,
    jobs: int = 1,
) -> list[AblationResult]:
    """Run every config in the grid with isolated, order-independent seeding.

    Gate-passing results come first sorted by test balanced accuracy, then
    gate-failing ones, then errored cells; the ordering is a pure function of
    the results so parallel and serial sweeps match exactly.
    """
    tasks = [(config, dataset, global_seed) for config in grid]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_cell, tasks))
    else:
        results = [_run_cell(t) for t in tasks]
    return sorted(results, key=_result_sort_key)


def featurize_dataset(
    config: ExperimentConfig, dataset: Dataset, global_seed: int = 0
) -> tuple[FeatureMatrix, np.ndarray]:
    """Feature matrix for one config (rows follow the dataset's segment order).

    Train-derived normalizers use the config's split, exactly as the
    corresponding pipeline run would.
    """
    if config.pipeline == "dim_reduced":
        band = Band.from_name(config.band)
        labels = dataset.labels()
        train_idx, _ = stratified_split(labels, config.train_fraction, config.split_seed)
        seed = derived_seed(global_seed, config)
        reducer = replace(config.reducer, seed=(config.reducer.seed + seed) % 2**32)
        series, _ = _reduce_all_segments(dataset, band, reducer, train_idx)
        X, names, _ = _series_to_features(series, train_idx, config.feature)
        return FeatureMatrix(values=X, names=names), labels
    X, names, labels, *_ = _multichannel_matrix(config, dataset)
    return FeatureMatrix(values=X, names=names), labels
