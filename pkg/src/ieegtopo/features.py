"""Vectorize persistence diagrams and compute entropy baselines.

Four diagram featurizers (five-coordinate polynomial summaries, rasterized
Gaussian images, tent templates, monomial templates) plus an ordinal-pattern
entropy family computed straight from the 1-D series. Featurizers whose
parameters depend on data (image bounds, kernel width, lifetime normalizer,
template bounding boxes) resolve them from training diagrams only; the
``fit_*`` helpers return a resolved copy of the parameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from .persistence import PersistenceDiagram


class DegenerateBoundsError(ValueError):
    """Explicit image bounds enclose zero area."""


CARLSSON_NAMES = ["carlsson_f1", "carlsson_f2", "carlsson_f3", "carlsson_f4", "carlsson_f5"]
ENTROPY_NAMES = ["wpe", "renyi", "tsallis", "complexity"]


def carlsson_coordinates(diagram: PersistenceDiagram) -> np.ndarray:
    """Five polynomial summaries of a diagram; the empty diagram maps to zeros.

    With lifetimes l_i = d_i - b_i and d_max the largest death:
    f1 = sum b_i l_i, f2 = sum (d_max - d_i) l_i, f3 = sum b_i^2 l_i^4,
    f4 = sum (d_max - d_i)^2 l_i^4, f5 = max l_i.
    """
    arr = diagram.as_array()
    if arr.shape[0] == 0:
        return np.zeros(5)
    b, d = arr[:, 0], arr[:, 1]
    life = d - b
    d_max = d.max()
    return np.array(
        [
            np.sum(b * life),
            np.sum((d_max - d) * life),
            np.sum(b**2 * life**4),
            np.sum((d_max - d) ** 2 * life**4),
            life.max(),
        ]
    )


# ---------------------------------------------------------------------------
# Persistence images
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PersistenceImageParams:
    """Raster parameters; unset fields are resolved from training diagrams.

    ``coords`` selects the plane the Gaussians live in: ``"birth_death"``
    (default) or ``"birth_persistence"``.
    """

    grid_size: int = 20
    sigma: float | None = None          # default resolution: 0.1 x training lifetime range
    bounds: tuple[float, float, float, float] | None = None  # (x_min, x_max, y_min, y_max)
    l_max: float | None = None          # max training lifetime; 1.0 when unavailable
    coords: str = "birth_death"

    def __post_init__(self):
        if self.grid_size < 1:
            raise ValueError("grid_size must be >= 1")
        if self.sigma is not None and self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if self.coords not in ("birth_death", "birth_persistence"):
            raise ValueError(f"unknown coords {self.coords!r}")


def _image_points(diagram: PersistenceDiagram, coords: str) -> np.ndarray:
    arr = diagram.as_array()
    if coords == "birth_persistence" and arr.shape[0]:
        arr = np.column_stack([arr[:, 0], arr[:, 1] - arr[:, 0]])
    return arr


def fit_image_params(
    diagrams: Iterable[PersistenceDiagram], params: PersistenceImageParams
) -> PersistenceImageParams:
    """Resolve sigma, bounds and the lifetime normalizer from training diagrams."""
    diagrams = list(diagrams)
    pts = [_image_points(d, params.coords) for d in diagrams if len(d)]
    lifetimes = np.concatenate([d.lifetimes for d in diagrams]) if diagrams else np.array([])

    l_max = params.l_max
    if l_max is None:
        l_max = float(lifetimes.max()) if lifetimes.size and lifetimes.max() > 0 else 1.0

    sigma = params.sigma
    if sigma is None:
        life_range = float(np.ptp(lifetimes)) if lifetimes.size else 0.0
        sigma = 0.1 * life_range if life_range > 0 else 0.1

    bounds = params.bounds
    if bounds is None:
        if pts:
            allpts = np.vstack(pts)
            bounds = (
                float(allpts[:, 0].min() - 3 * sigma),
                float(allpts[:, 0].max() + 3 * sigma),
                float(allpts[:, 1].min() - 3 * sigma),
                float(allpts[:, 1].max() + 3 * sigma),
            )
        else:
            bounds = (0.0, 1.0, 0.0, 1.0)
    return replace(params, sigma=sigma, bounds=bounds, l_max=l_max)


def persistence_image(diagram: PersistenceDiagram, params: PersistenceImageParams) -> np.ndarray:
    """Rasterize a diagram as a weighted Gaussian sum; returns grid_size^2 values.

    Each point contributes an isotropic Gaussian at its plane position with
    weight (lifetime / l_max); pixel values are midpoint evaluations times
    pixel area. Pixels are emitted row-major over (x, y).
    """
    if params.bounds is None or params.sigma is None or params.l_max is None:
        params = fit_image_params([diagram], params)
    x_min, x_max, y_min, y_max = params.bounds
    if not (x_max > x_min and y_max > y_min):
        raise DegenerateBoundsError(f"image bounds enclose no area: {params.bounds}")

    g = params.grid_size
    out = np.zeros((g, g))
    pts = _image_points(diagram, params.coords)
    if pts.shape[0] == 0:
        return out.reshape(-1)

    dx = (x_max - x_min) / g
    dy = (y_max - y_min) / g
    cx = x_min + dx * (np.arange(g) + 0.5)
    cy = y_min + dy * (np.arange(g) + 0.5)
    arr = diagram.as_array()
    weights = (arr[:, 1] - arr[:, 0]) / params.l_max
    two_s2 = 2.0 * params.sigma**2
    norm = 1.0 / (2.0 * np.pi * params.sigma**2)
    for (px, py), w in zip(pts, weights):
        gx = np.exp(-((cx - px) ** 2) / two_s2)
        gy = np.exp(-((cy - py) ** 2) / two_s2)
        out += w * norm * np.outer(gx, gy)
    return (out * dx * dy).reshape(-1)


def image_feature_names(params: PersistenceImageParams) -> list[str]:
    g = params.grid_size
    return [f"pi_r{r}c{c}" for r in range(g) for c in range(g)]


# ---------------------------------------------------------------------------
# Template features (tent and polynomial)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TemplateParams:
    """Shared parameters for tent and monomial template features.

    Templates act on (birth, lifetime) coordinates. ``bounds`` is the padded
    training bounding box resolved by :func:`fit_template_bounds`.
    """

    subdivisions: int = 5   # tent grid has (subdivisions + 1)^2 centers
    padding: float = 0.05   # bounding-box padding fraction per axis
    degree: int = 3         # max total degree of the monomial features
    bounds: tuple[float, float, float, float] | None = None

    def __post_init__(self):
        if self.subdivisions < 1:
            raise ValueError("subdivisions must be >= 1")
        if self.padding < 0:
            raise ValueError("padding must be >= 0")
        if self.degree < 1:
            raise ValueError("degree must be >= 1")


def _birth_lifetime(diagram: PersistenceDiagram) -> np.ndarray:
    arr = diagram.as_array()
    if arr.shape[0] == 0:
        return arr
    return np.column_stack([arr[:, 0], arr[:, 1] - arr[:, 0]])


def fit_template_bounds(
    diagrams: Iterable[PersistenceDiagram], params: TemplateParams
) -> TemplateParams:
    """Resolve the padded (birth, lifetime) bounding box from training diagrams.

    Degenerate axes (all points equal, or no points at all) are widened by a
    unit box before padding.
    """
    pts = [_birth_lifetime(d) for d in diagrams if len(d)]
    if pts:
        allpts = np.vstack(pts)
        lo = allpts.min(axis=0)
        hi = allpts.max(axis=0)
    else:
        lo = np.zeros(2)
        hi = np.zeros(2)
    for ax in range(2):
        if hi[ax] <= lo[ax]:
            lo[ax] -= 0.5
            hi[ax] += 0.5
    pad = params.padding * (hi - lo)
    lo -= pad
    hi += pad
    return replace(params, bounds=(float(lo[0]), float(hi[0]), float(lo[1]), float(hi[1])))


def _tent_grid(params: TemplateParams):
    if params.bounds is None:
        raise ValueError("template bounds unresolved; call fit_template_bounds first")
    x_min, x_max, y_min, y_max = params.bounds
    d = params.subdivisions
    return (
        np.linspace(x_min, x_max, d + 1),
        np.linspace(y_min, y_max, d + 1),
        (x_max - x_min) / d,
        (y_max - y_min) / d,
    )


def tent_features(diagram: PersistenceDiagram, params: TemplateParams) -> np.ndarray:
    """Sum of tent evaluations per grid center; (subdivisions + 1)^2 values.

    A tent at center c evaluates max(0, 1 - max(|x - cx| / sx, |y - cy| / sy))
    at each (birth, lifetime) point, with sx, sy the per-axis grid spacings.
    """
    cx, cy, sx, sy = _tent_grid(params)
    pts = _birth_lifetime(diagram)
    out = np.zeros((len(cx), len(cy)))
    if pts.shape[0] == 0:
        return out.reshape(-1)
    for x, y in pts:
        u = np.abs(x - cx) / sx
        v = np.abs(y - cy) / sy
        out += np.maximum(0.0, 1.0 - np.maximum.outer(u, v))
    return out.reshape(-1)


def tent_feature_names(params: TemplateParams) -> list[str]:
    d = params.subdivisions
    return [f"tent_{i}_{j}" for i in range(d + 1) for j in range(d + 1)]


def polynomial_exponents(degree: int) -> list[tuple[int, int]]:
    """Exponent pairs (j, k) with 1 <= j + k <= degree, in lexicographic order."""
    return [(j, k) for j in range(degree + 1) for k in range(degree + 1) if 1 <= j + k <= degree]


def polynomial_features(diagram: PersistenceDiagram, params: TemplateParams) -> np.ndarray:
    """Monomial moments sum b^j (d - b)^k over diagram points, one per (j, k)."""
    exps = polynomial_exponents(params.degree)
    pts = _birth_lifetime(diagram)
    if pts.shape[0] == 0:
        return np.zeros(len(exps))
    b, life = pts[:, 0], pts[:, 1]
    return np.array([np.sum(b**j * life**k) for j, k in exps])


def polynomial_feature_names(params: TemplateParams) -> list[str]:
    return [f"poly_{j}_{k}" for j, k in polynomial_exponents(params.degree)]


# ---------------------------------------------------------------------------
# Entropy baselines
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EntropyParams:
    embed_dim: int = 4   # ordinal pattern length m
    delay: int = 1       # embedding delay tau
    alpha: float = 2.0   # Renyi order
    q: float = 2.0       # Tsallis order

    def __post_init__(self):
        if self.embed_dim < 2 or self.delay < 1:
            raise ValueError("need embed_dim >= 2 and delay >= 1")


def _ordinal_distribution(signal: np.ndarray, m: int, tau: int):
    """Plain and variance-weighted ordinal pattern distributions."""
    n = len(signal)
    n_windows = n - (m - 1) * tau
    idx = np.arange(n_windows)[:, None] + tau * np.arange(m)[None, :]
    windows = signal[idx]
    # stable argsort: ties resolved by position, so constant windows are well defined
    patterns = np.argsort(windows, axis=1, kind="stable")
    pattern_ids = (patterns * (m ** np.arange(m))).sum(axis=1)
    weights = windows.var(axis=1)

    ids, inverse = np.unique(pattern_ids, return_inverse=True)
    counts = np.bincount(inverse, minlength=len(ids)).astype(float)
    wsum = np.bincount(inverse, weights=weights, minlength=len(ids))
    p = counts / counts.sum()
    total_w = wsum.sum()
    pw = wsum / total_w if total_w > 0 else None  # all-constant windows carry no weight
    return p, pw


def _shannon(p: np.ndarray) -> float:
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum())


def entropy_features(signal: Sequence[float], params: EntropyParams | None = None) -> np.ndarray:
    """Four ordinal-pattern entropies of a 1-D series.

    Returns (weighted permutation entropy normalized by log m!, Renyi entropy
    of the ordinal distribution, Tsallis entropy of the ordinal distribution,
    statistical complexity = normalized entropy x normalized Jensen-Shannon
    disequilibrium against the uniform distribution).
    """
    params = params or EntropyParams()
    x = np.asarray(signal, dtype=float)
    m, tau = params.embed_dim, params.delay
    if len(x) < m * tau + 1:
        raise ValueError(f"signal too short for m={m}, tau={tau}: length {len(x)}")

    p, pw = _ordinal_distribution(x, m, tau)
    n_patterns = math.factorial(m)
    log_np = math.log(n_patterns)

    wpe = _shannon(pw) / log_np if pw is not None else 0.0
    renyi = float(np.log(np.sum(p**params.alpha)) / (1.0 - params.alpha))
    tsallis = float((1.0 - np.sum(p**params.q)) / (params.q - 1.0))

    # Jensen-Shannon disequilibrium against uniform, normalized by its maximum
    full = np.zeros(n_patterns)
    full[: len(p)] = p  # pattern identity is irrelevant to the divergence
    uniform = np.full(n_patterns, 1.0 / n_patterns)
    mix = 0.5 * (full + uniform)
    js = _shannon(mix) - 0.5 * _shannon(full) - 0.5 * _shannon(uniform)
    n = n_patterns
    js_max = -0.5 * ((n + 1) / n * math.log(n + 1) - 2 * math.log(2 * n) + math.log(n))
    h_norm = _shannon(p) / log_np
    complexity = h_norm * (js / js_max if js_max > 0 else 0.0)

    return np.array([wpe, renyi, tsallis, complexity]) + 0.0


# ---------------------------------------------------------------------------
# Feature matrices
# ---------------------------------------------------------------------------

@dataclass
class FeatureMatrix:
    """Rows = segments, columns = named features."""

    values: np.ndarray
    names: list[str]

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2 or self.values.shape[1] != len(self.names):
            raise ValueError(
                f"matrix shape {self.values.shape} does not match {len(self.names)} names"
            )

    def to_csv(self, path, labels: Sequence[int] | None = None) -> None:
        cols = list(self.names) + (["label"] if labels is not None else [])
        with open(path, "w") as fh:
            fh.write(",".join(cols) + "\n")
            for i, row in enumerate(self.values):
                cells = [repr(float(v)) for v in row]
                if labels is not None:
                    cells.append(str(int(labels[i])))
                fh.write(",".join(cells) + "\n")

    @staticmethod
    def from_csv(path) -> tuple["FeatureMatrix", np.ndarray | None]:
        with open(path) as fh:
            names = fh.readline().strip().split(",")
            rows = [line.strip().split(",") for line in fh if line.strip()]
        has_labels = names and names[-1] == "label"
        if has_labels:
            names = names[:-1]
            labels = np.array([int(float(r[-1])) for r in rows])
            rows = [r[:-1] for r in rows]
        else:
            labels = None
        values = np.array([[float(v) for v in r] for r in rows]) if rows else np.empty((0, len(names)))
        return FeatureMatrix(values=values, names=names), labels
