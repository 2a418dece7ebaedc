"""Zero-dimensional sublevel-set persistence of 1D sampled signals.

Two independent routes compute the same diagram:

* :func:`sublevel_diagram` -- a union-find sweep over sample indices, the
  fast path used throughout the pipelines.
* :func:`brute_force_diagram` -- a direct definition-based threshold sweep
  that recomputes connected components of the sublevel index set at every
  distinct signal value. Quadratic; meant as a verification oracle.

Conventions (shared by both routes):

* Consecutive equal samples are collapsed to a single vertex before the
  sweep, so local minima/maxima are well defined.
* At a merge the component with the larger birth value dies (elder rule);
  birth ties are broken by the smaller collapsed index surviving.
* The never-dying component born at the global minimum is paired with the
  global maximum value, so every signal yields at least one finite pair.
  Pass ``keep_global_pair=False`` to drop it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

# Convention tag recorded in experiment metadata so runs are auditable.
GLOBAL_PAIR_CONVENTION = "global-min-paired-with-global-max"


@dataclass(frozen=True)
class PersistenceDiagram:
    """Finite multiset of (birth, death) pairs, sorted lexicographically."""

    pairs: tuple[tuple[float, float], ...]

    def __post_init__(self):
        for b, d in self.pairs:
            if d < b:
                raise ValueError(f"death {d} precedes birth {b}")

    def __len__(self) -> int:
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)

    def as_array(self) -> np.ndarray:
        """(n, 2) float array of (birth, death) rows; empty diagrams give (0, 2)."""
        if not self.pairs:
            return np.empty((0, 2), dtype=float)
        return np.asarray(self.pairs, dtype=float)

    @property
    def births(self) -> np.ndarray:
        return self.as_array()[:, 0]

    @property
    def deaths(self) -> np.ndarray:
        return self.as_array()[:, 1]

    @property
    def lifetimes(self) -> np.ndarray:
        arr = self.as_array()
        return arr[:, 1] - arr[:, 0]

    @staticmethod
    def from_pairs(pairs: Iterable[tuple[float, float]]) -> "PersistenceDiagram":
        return PersistenceDiagram(tuple(sorted((float(b), float(d)) for b, d in pairs)))

    def to_csv(self, path) -> None:
        """Write the diagram as ``birth,death`` rows with a header."""
        with open(path, "w") as fh:
            fh.write("birth,death\n")
            for b, d in self.pairs:
                fh.write(f"{b!r},{d!r}\n")

    @staticmethod
    def from_csv(path) -> "PersistenceDiagram":
        pairs = []
        with open(path) as fh:
            header = fh.readline().strip()
            if header != "birth,death":
                raise ValueError(f"unexpected diagram CSV header: {header!r}")
            for line in fh:
                if not line.strip():
                    continue
                b, d = line.split(",")
                pairs.append((float(b), float(d)))
        return PersistenceDiagram.from_pairs(pairs)


def _collapse_plateaus(samples: Sequence[float]) -> list[float]:
    """Drop consecutive duplicates, validating finiteness as we go."""
    if len(samples) == 0:
        raise ValueError("need at least one sample")
    vals: list[float] = []
    for i, raw in enumerate(samples):
        v = float(raw)
        if not math.isfinite(v):
            raise ValueError(f"non-finite sample at index {i}: {raw!r}")
        if not vals or v != vals[-1]:
            vals.append(v)
    return vals


def sublevel_diagram(samples: Sequence[float], keep_global_pair: bool = True) -> PersistenceDiagram:
    """Union-find sweep computing the 0-dim sublevel persistence diagram.

    Treats the samples as a function on a path graph and sweeps indices in
    increasing (value, index) order. Each local minimum births a component;
    each local maximum merges two, killing the younger one (elder rule).

    Parameters
    ----------
    samples : sequence of finite reals, length >= 1
    keep_global_pair : pair the surviving component with the global maximum
        value instead of discarding it.
    """
    vals = _collapse_plateaus(samples)
    n = len(vals)
    if n == 1:
        if keep_global_pair:
            return PersistenceDiagram(((vals[0], vals[0]),))
        return PersistenceDiagram(())

    order = sorted(range(n), key=lambda i: (vals[i], i))

    parent = list(range(n))
    birth_val = [0.0] * n   # valid at component roots only
    birth_idx = [0] * n
    active = [False] * n
    pairs: list[tuple[float, float]] = []

    def find(i: int) -> int:
        root = i
        while parent[root] != root:
            root = parent[root]
        while parent[i] != root:
            parent[i], i = root, parent[i]
        return root

    for idx in order:
        v = vals[idx]
        left = idx - 1 if idx > 0 and active[idx - 1] else -1
        right = idx + 1 if idx + 1 < n and active[idx + 1] else -1
        active[idx] = True
        if left < 0 and right < 0:
            # local minimum: new component born at this value
            birth_val[idx] = v
            birth_idx[idx] = idx
        elif left >= 0 and right >= 0:
            # local maximum: two components merge, the younger dies here
            ra, rb = find(left), find(right)
            if (birth_val[ra], birth_idx[ra]) <= (birth_val[rb], birth_idx[rb]):
                elder, younger = ra, rb
            else:
                elder, younger = rb, ra
            pairs.append((birth_val[younger], v))
            parent[younger] = elder
            parent[idx] = elder
        else:
            parent[idx] = find(left if left >= 0 else right)

    if keep_global_pair:
        root = find(order[0])
        pairs.append((birth_val[root], vals[order[-1]]))
    return PersistenceDiagram.from_pairs(pairs)


def brute_force_diagram(samples: Sequence[float], keep_global_pair: bool = True) -> PersistenceDiagram:
    """Definition-based oracle: recompute sublevel components per threshold.

    Sweeps the sorted distinct values; at each threshold the sublevel index
    set is re-segmented into maximal runs, and components are tracked via
    their representative minimum (value, first index). Same pairing
    conventions as :func:`sublevel_diagram`. Quadratic in the signal length,
    intended for lengths up to ~2000.
    """
    vals = _collapse_plateaus(samples)
    n = len(vals)
    if n == 1:
        if keep_global_pair:
            return PersistenceDiagram(((vals[0], vals[0]),))
        return PersistenceDiagram(())

    thresholds = sorted(set(vals))
    pairs: list[tuple[float, float]] = []
    # components as (start, end, rep) with rep = (birth value, birth index)
    prev: list[tuple[int, int, tuple[float, int]]] = []

    for r in thresholds:
        runs: list[list[int]] = []
        for i in range(n):
            if vals[i] <= r:
                if runs and runs[-1][1] == i - 1:
                    runs[-1][1] = i
                else:
                    runs.append([i, i])
        cur: list[tuple[int, int, tuple[float, int]]] = []
        for start, end in runs:
            inside = [rep for (s, e, rep) in prev if start <= s and e <= end]
            if not inside:
                # newborn component: its minimum is the first index at value r
                min_idx = next(i for i in range(start, end + 1) if vals[i] == r)
                rep = (r, min_idx)
            elif len(inside) == 1:
                rep = inside[0]
            else:
                inside.sort()
                rep = inside[0]
                for dead in inside[1:]:
                    pairs.append((dead[0], r))
            cur.append((start, end, rep))
        prev = cur

    assert len(prev) == 1, "sublevel set must be connected at the global maximum"
    if keep_global_pair:
        pairs.append((prev[0][2][0], thresholds[-1]))
    return PersistenceDiagram.from_pairs(pairs)
