"""Reduce a channels x samples segment to a 1-D series.

Time samples are the observations (one vector over channels each); a fitted
reducer embeds them into ``target_dim`` dimensions, preserving time order.
Nine methods: PCA, LDA, NMF, FA, TSVD (parametric) and Isomap, LLE, MDS,
t-SNE (non-parametric, embedding the fitted observations directly).

Deterministic under a fixed seed. Iterative methods record their objective
per iteration so monotonicity is checkable from the outside: NMF tracks the
Frobenius error (nonincreasing), FA the log-likelihood (nondecreasing), and
t-SNE the KL divergence, which is enforced nonincreasing after the early
exaggeration phase by a step-halving guard.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
import scipy.linalg
from scipy.sparse.csgraph import connected_components, shortest_path

LINEAR_METHODS = ("pca", "tsvd", "nmf", "fa", "lda")
MANIFOLD_METHODS = ("isomap", "lle", "mds", "tsne")


@dataclass(frozen=True)
class ReducerSpec:
    method: str
    target_dim: int = 1
    n_neighbors: int = 10        # Isomap / LLE
    perplexity: float = 8.0      # t-SNE
    max_iter: int = 300
    tol: float = 1e-6
    seed: int = 0
    decimate_to: int | None = 512  # manifold methods only; None disables

    def __post_init__(self):
        if self.method not in LINEAR_METHODS + MANIFOLD_METHODS:
            raise ValueError(f"unknown reduction method {self.method!r}")
        if self.target_dim < 1:
            raise ValueError("target_dim must be >= 1")


@dataclass
class FittedReducer:
    """Fitted state: projection for parametric methods, embedding always.

    ``transform`` is exact on the fitting data by construction; non-parametric
    methods only expose the stored embedding.
    """

    method: str
    embedding: np.ndarray                    # (n_fit, dim)
    components: np.ndarray | None = None     # (dim, n_features) for linear maps
    mean: np.ndarray | None = None
    noise_variance: np.ndarray | None = None  # FA only
    explained_variance_ratio: np.ndarray | None = None
    objective_history: np.ndarray | None = None
    metadata: dict = field(default_factory=dict)

    def transform(self, X: np.ndarray) -> np.ndarray:
        if self.components is None:
            raise NotImplementedError(f"{self.method} is non-parametric; use .embedding")
        X = np.asarray(X, dtype=float)
        if self.mean is not None:
            X = X - self.mean
        return X @ self.components.T


def _fix_signs(components: np.ndarray) -> np.ndarray:
    """Make each component's largest-magnitude entry positive (reproducible sign)."""
    out = components.copy()
    for i, row in enumerate(out):
        j = np.argmax(np.abs(row))
        if row[j] < 0:
            out[i] = -row
    return out


# ---------------------------------------------------------------------------
# Linear methods
# ---------------------------------------------------------------------------

def fit_pca(X: np.ndarray, n_components: int = 1) -> FittedReducer:
    """Column-centered covariance eigendecomposition, descending variance."""
    X = np.asarray(X, dtype=float)
    mean = X.mean(axis=0)
    Xc = X - mean
    cov = Xc.T @ Xc / max(X.shape[0] - 1, 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals = np.clip(evals[order], 0.0, None)
    components = _fix_signs(evecs[:, order].T[:n_components])
    total = evals.sum()
    ratio = evals[:n_components] / total if total > 0 else np.zeros(n_components)
    return FittedReducer(
        method="pca",
        embedding=Xc @ components.T,
        components=components,
        mean=mean,
        explained_variance_ratio=ratio,
    )


def fit_tsvd(X: np.ndarray, n_components: int = 1) -> FittedReducer:
    """Truncated SVD of the uncentered matrix."""
    X = np.asarray(X, dtype=float)
    _, svals, vt = np.linalg.svd(X, full_matrices=False)
    components = _fix_signs(vt[:n_components])
    total = (svals**2).sum()
    ratio = svals[:n_components] ** 2 / total if total > 0 else np.zeros(n_components)
    return FittedReducer(
        method="tsvd",
        embedding=X @ components.T,
        components=components,
        explained_variance_ratio=ratio,
    )


def fit_nmf(
    X: np.ndarray,
    rank: int = 1,
    max_iter: int = 300,
    tol: float = 1e-8,
    seed: int = 0,
) -> FittedReducer:
    """Multiplicative-update NMF minimizing the Frobenius error.

    Requires a nonnegative input; the per-iteration objective is recorded and
    is nonincreasing up to floating-point noise.
    """
    X = np.asarray(X, dtype=float)
    if X.min() < 0:
        raise ValueError("NMF input must be nonnegative; shift channels first")
    n, m = X.shape
    rng = np.random.default_rng(seed)
    scale = np.sqrt(X.mean() / rank) if X.mean() > 0 else 1.0
    W = scale * rng.uniform(0.1, 1.0, size=(n, rank))
    H = scale * rng.uniform(0.1, 1.0, size=(rank, m))

    eps = 1e-12
    history = [float(np.linalg.norm(X - W @ H))]
    for _ in range(max_iter):
        H *= (W.T @ X) / (W.T @ W @ H + eps)
        W *= (X @ H.T) / (W @ (H @ H.T) + eps)
        err = float(np.linalg.norm(X - W @ H))
        history.append(err)
        if history[-2] - err < tol * max(history[0], 1.0):
            break
    return FittedReducer(
        method="nmf",
        embedding=W,
        metadata={"factors": H},
        objective_history=np.array(history),
    )


def fit_fa(
    X: np.ndarray,
    n_factors: int = 1,
    max_iter: int = 200,
    tol: float = 1e-8,
    seed: int = 0,
) -> FittedReducer:
    """EM for the linear-Gaussian factor model x = mu + L z + eps.

    Noise covariance is diagonal, floored at 1e-6. The per-iteration
    log-likelihood is recorded and is nondecreasing. The embedding holds the
    posterior factor means of the fitting data.
    """
    X = np.asarray(X, dtype=float)
    n, d = X.shape
    mean = X.mean(axis=0)
    Xc = X - mean
    S = Xc.T @ Xc / n

    rng = np.random.default_rng(seed)
    L = 0.1 * rng.standard_normal((d, n_factors))
    psi = np.clip(np.diag(S).copy(), 1e-6, None)

    def loglik() -> float:
        C = L @ L.T + np.diag(psi)
        sign, logdet = np.linalg.slogdet(C)
        if sign <= 0:
            return -np.inf
        return -0.5 * n * (d * np.log(2 * np.pi) + logdet + np.trace(np.linalg.solve(C, S)))

    history = [loglik()]
    for _ in range(max_iter):
        # E-step: posterior G = (I + L' Psi^-1 L)^-1, beta = G L' Psi^-1
        Lp = L / psi[:, None]
        G = np.linalg.inv(np.eye(n_factors) + L.T @ Lp)
        beta = G @ Lp.T
        Ez = Xc @ beta.T                                  # (n, k)
        Ezz = n * G + Ez.T @ Ez                           # sum of E[zz']
        # M-step
        L = (Xc.T @ Ez) @ np.linalg.inv(Ezz)
        psi = np.clip(np.diag(S) - np.einsum("ij,nj,ni->i", L, Ez, Xc) / n, 1e-6, None)
        history.append(loglik())
        if history[-1] - history[-2] < tol * max(abs(history[1]), 1.0) and len(history) > 2:
            break

    Lp = L / psi[:, None]
    G = np.linalg.inv(np.eye(n_factors) + L.T @ Lp)
    beta = G @ Lp.T
    components = _fix_signs(beta)
    return FittedReducer(
        method="fa",
        embedding=Xc @ components.T,
        components=components,
        mean=mean,
        noise_variance=psi,
        metadata={"loadings": L},
        objective_history=np.array(history),
    )


def fit_lda_reducer(X: np.ndarray, labels: Sequence[int], n_components: int | None = None) -> FittedReducer:
    """Fisher discriminant directions from between/within scatter.

    Within-class scatter is ridged by 1e-6. At most (classes - 1) directions
    exist; near-zero class separation sets ``metadata['low_separation']``.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(labels)
    classes = np.unique(y)
    if len(classes) < 2:
        raise ValueError("LDA reduction needs at least 2 classes")
    max_dim = len(classes) - 1
    n_components = min(n_components or max_dim, max_dim)

    mean = X.mean(axis=0)
    d = X.shape[1]
    Sw = np.zeros((d, d))
    Sb = np.zeros((d, d))
    for c in classes:
        Xi = X[y == c]
        mu = Xi.mean(axis=0)
        diff = Xi - mu
        Sw += diff.T @ diff
        gap = (mu - mean)[:, None]
        Sb += len(Xi) * (gap @ gap.T)
    Sw += 1e-6 * np.eye(d)

    evals, evecs = scipy.linalg.eigh(Sb, Sw)
    order = np.argsort(evals)[::-1]
    evals = evals[order]
    components = _fix_signs(evecs[:, order].T[:n_components])
    low_separation = bool(evals[0] < 1e-6)
    return FittedReducer(
        method="lda",
        embedding=(X - mean) @ components.T,
        components=components,
        mean=mean,
        metadata={"low_separation": low_separation, "eigenvalues": evals[:n_components]},
    )


# ---------------------------------------------------------------------------
# Manifold methods
# ---------------------------------------------------------------------------

def _pairwise_sq(X: np.ndarray) -> np.ndarray:
    sq = (X**2).sum(axis=1)
    d2 = sq[:, None] + sq[None, :] - 2 * X @ X.T
    np.fill_diagonal(d2, 0.0)
    return np.clip(d2, 0.0, None)


def _knn_graph(X: np.ndarray, k: int) -> tuple[np.ndarray, bool]:
    """Symmetric k-NN distance graph (dense, inf for non-edges).

    A disconnected graph is repaired by adding the shortest edge between
    component pairs until connected; the flag reports whether that happened.
    """
    n = X.shape[0]
    if k + 1 > n:
        raise ValueError(f"need at least k+1={k + 1} observations, have {n}")
    # distance floor keeps duplicate observations connected (0 would read as no edge)
    d = np.maximum(np.sqrt(_pairwise_sq(X)), 1e-12)
    np.fill_diagonal(d, 0.0)
    graph = np.full((n, n), np.inf)
    neighbor_idx = np.argsort(d, axis=1, kind="stable")[:, 1 : k + 1]
    for i in range(n):
        graph[i, neighbor_idx[i]] = d[i, neighbor_idx[i]]
    graph = np.minimum(graph, graph.T)

    bridged = False
    while True:
        n_comp, comp = connected_components(np.isfinite(graph).astype(int), directed=False)
        if n_comp == 1:
            break
        bridged = True
        # shortest edge leaving component 0
        mask_a = comp == comp[0]
        sub = d[np.ix_(mask_a, ~mask_a)]
        ai, bj = np.unravel_index(np.argmin(sub), sub.shape)
        a = np.where(mask_a)[0][ai]
        b = np.where(~mask_a)[0][bj]
        graph[a, b] = graph[b, a] = d[a, b]
    return graph, bridged


def classical_mds(D: np.ndarray, dim: int) -> np.ndarray:
    """Torgerson double-centering embedding of a distance matrix."""
    n = D.shape[0]
    J = np.eye(n) - np.full((n, n), 1.0 / n)
    B = -0.5 * J @ (D**2) @ J
    evals, evecs = np.linalg.eigh(B)
    order = np.argsort(evals)[::-1][:dim]
    evals = np.clip(evals[order], 0.0, None)
    emb = evecs[:, order] * np.sqrt(evals)
    return _fix_signs(emb.T).T


def fit_mds(X: np.ndarray, spec: ReducerSpec) -> FittedReducer:
    D = np.sqrt(_pairwise_sq(np.asarray(X, dtype=float)))
    return FittedReducer(method="mds", embedding=classical_mds(D, spec.target_dim))


def fit_isomap(X: np.ndarray, spec: ReducerSpec) -> FittedReducer:
    """Geodesic distances over the k-NN graph, embedded by classical MDS."""
    X = np.asarray(X, dtype=float)
    graph, bridged = _knn_graph(X, spec.n_neighbors)
    finite = np.where(np.isinf(graph), 0, graph)
    geo = shortest_path(finite, method="D", directed=False)
    return FittedReducer(
        method="isomap",
        embedding=classical_mds(geo, spec.target_dim),
        metadata={"bridged_components": bridged},
    )


def fit_lle(X: np.ndarray, spec: ReducerSpec) -> FittedReducer:
    """Locally linear embedding via the reconstruction-weight eigenproblem."""
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    k = spec.n_neighbors
    if k + 2 > n:
        raise ValueError(f"need at least k+2={k + 2} observations, have {n}")
    graph, bridged = _knn_graph(X, k)

    d = np.sqrt(_pairwise_sq(X))
    W = np.zeros((n, n))
    for i in range(n):
        neighbors = np.where(np.isfinite(graph[i]))[0]
        neighbors = neighbors[np.argsort(d[i, neighbors], kind="stable")][:k]
        Z = X[neighbors] - X[i]
        C = Z @ Z.T
        C += np.eye(len(neighbors)) * (1e-3 * np.trace(C) + 1e-12)
        w = np.linalg.solve(C, np.ones(len(neighbors)))
        W[i, neighbors] = w / w.sum()

    I = np.eye(n)
    M = (I - W).T @ (I - W)
    evals, evecs = np.linalg.eigh(M)
    # skip the constant eigenvector belonging to the ~zero eigenvalue
    emb = evecs[:, 1 : spec.target_dim + 1] * np.sqrt(n)
    return FittedReducer(
        method="lle",
        embedding=_fix_signs(emb.T).T,
        metadata={"bridged_components": bridged},
    )


def _tsne_joint_p(X: np.ndarray, perplexity: float) -> np.ndarray:
    """Symmetrized joint probabilities from a per-point perplexity search."""
    d2 = _pairwise_sq(X)
    n = X.shape[0]
    target = np.log(perplexity)
    P = np.zeros((n, n))
    for i in range(n):
        di = np.delete(d2[i], i)
        beta_lo, beta_hi, beta = 0.0, np.inf, 1.0
        for _ in range(64):
            w = np.exp(-di * beta)
            sw = w.sum()
            if sw <= 0:
                beta_hi = beta
                beta = beta / 2 if np.isinf(beta_hi) else (beta_lo + beta_hi) / 2
                continue
            p = w / sw
            h = -(p[p > 0] * np.log(p[p > 0])).sum()
            if abs(h - target) < 1e-6:
                break
            if h > target:
                beta_lo = beta
                beta = beta * 2 if np.isinf(beta_hi) else (beta_lo + beta_hi) / 2
            else:
                beta_hi = beta
                beta = (beta_lo + beta_hi) / 2
        w = np.exp(-di * beta)
        if w.sum() <= 0:
            w = np.ones_like(di)
        P[i] = np.insert(w / w.sum(), i, 0.0)
    P = (P + P.T) / (2 * n)
    return np.maximum(P, 1e-300)


def _tsne_kl_grad(Y: np.ndarray, P: np.ndarray):
    d2 = _pairwise_sq(Y)
    inv = 1.0 / (1.0 + d2)
    np.fill_diagonal(inv, 0.0)
    Z = inv.sum()
    Q = np.maximum(inv / Z, 1e-300)
    kl = float(np.sum(P * (np.log(P) - np.log(Q))))
    PQ = (P - Q) * inv
    grad = 4.0 * ((np.diag(PQ.sum(axis=1)) - PQ) @ Y)
    return kl, grad


def fit_tsne(X: np.ndarray, spec: ReducerSpec) -> FittedReducer:
    """Exact (quadratic) t-SNE with early exaggeration.

    Initialized from PCA plus a seeded jitter, so runs are deterministic per
    seed. During exaggeration the classic momentum schedule applies; after it
    the step is halved whenever the KL would increase, making the recorded
    post-exaggeration KL history nonincreasing.
    """
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    if not spec.perplexity < (n - 1) / 3:
        raise ValueError(f"perplexity {spec.perplexity} too large for {n} observations")
    P = _tsne_joint_p(X, spec.perplexity)

    rng = np.random.default_rng(spec.seed)
    Y = fit_pca(X, spec.target_dim).embedding
    scale = Y.std() if Y.std() > 0 else 1.0
    Y = Y / scale * 1e-2 + 1e-4 * rng.standard_normal(Y.shape)

    def descend(Y, P_eff, iters, step):
        kl, grad = _tsne_kl_grad(Y, P_eff)
        history = [kl]
        for _ in range(iters):
            for _ in range(40):
                cand = Y - step * grad
                kl_new, grad_new = _tsne_kl_grad(cand, P_eff)
                if kl_new <= kl:
                    break
                step /= 2.0
            else:
                break
            Y, kl, grad = cand, kl_new, grad_new
            history.append(kl)
            step *= 1.2
            if len(history) > 2 and history[-2] - history[-1] < spec.tol * max(history[0], 1e-12):
                break
        return Y, history, step

    exaggeration_iters = min(100, spec.max_iter // 3)
    lr = max(n / 12.0, 50.0)
    Y, _, _ = descend(Y, P * 12.0, exaggeration_iters, lr)
    Y, history, _ = descend(Y, P, spec.max_iter - exaggeration_iters, lr)

    return FittedReducer(
        method="tsne",
        embedding=_fix_signs(Y.T).T,
        objective_history=np.array(history),
        metadata={"exaggeration_iters": exaggeration_iters},
    )


# ---------------------------------------------------------------------------
# Segment reduction
# ---------------------------------------------------------------------------

def _shift_nonnegative(X: np.ndarray) -> np.ndarray:
    return X - X.min(axis=0, keepdims=True)


def fit_reducer(X: np.ndarray, spec: ReducerSpec, labels: Sequence[int] | None = None) -> FittedReducer:
    """Dispatch a fit over observations X (rows = observations)."""
    if spec.method == "pca":
        return fit_pca(X, spec.target_dim)
    if spec.method == "tsvd":
        return fit_tsvd(X, spec.target_dim)
    if spec.method == "nmf":
        return fit_nmf(
            _shift_nonnegative(np.asarray(X, dtype=float)),
            rank=spec.target_dim,
            max_iter=spec.max_iter,
            tol=spec.tol,
            seed=spec.seed,
        )
    if spec.method == "fa":
        return fit_fa(X, spec.target_dim, max_iter=spec.max_iter, tol=spec.tol, seed=spec.seed)
    if spec.method == "lda":
        if labels is None:
            raise ValueError("LDA reduction needs observation labels")
        return fit_lda_reducer(X, labels, spec.target_dim)
    if spec.method == "mds":
        return fit_mds(X, spec)
    if spec.method == "isomap":
        return fit_isomap(X, spec)
    if spec.method == "lle":
        return fit_lle(X, spec)
    if spec.method == "tsne":
        return fit_tsne(X, spec)
    raise ValueError(f"unknown reduction method {spec.method!r}")


def reduce_segment(
    segment: np.ndarray, spec: ReducerSpec, labels: Sequence[int] | None = None
) -> tuple[np.ndarray, FittedReducer]:
    """Embed a channels x samples segment into a 1 x samples series.

    Manifold methods optionally decimate to ``spec.decimate_to`` uniformly
    spaced samples before embedding, then interpolate back to full length;
    the fitted reducer's metadata records whether that happened. For t-SNE
    the perplexity is clamped to stay admissible for the embedded count.
    """
    segment = np.asarray(segment, dtype=float)
    n_channels, n_samples = segment.shape
    if n_channels < 2:
        raise ValueError("segment reduction needs at least 2 channels")
    if spec.target_dim >= n_channels:
        raise ValueError(
            f"target_dim {spec.target_dim} must stay below the channel count {n_channels}"
        )
    if spec.method in LINEAR_METHODS and n_samples < n_channels:
        raise ValueError("linear reduction needs at least as many samples as channels")
    X = segment.T

    if spec.method in MANIFOLD_METHODS:
        cap = spec.decimate_to
        if cap is not None and n_samples > cap:
            idx = np.unique(np.linspace(0, n_samples - 1, cap).round().astype(int))
        else:
            idx = np.arange(n_samples)
        sub = X[idx]
        eff = spec
        if spec.method == "tsne":
            limit = (len(idx) - 1) / 3.0
            if not spec.perplexity < limit:
                eff = replace(spec, perplexity=max(min(spec.perplexity, limit - 1e-9), 1.0))
        fitted = fit_reducer(sub, eff, labels=None)
        fitted.metadata["decimated"] = len(idx) < n_samples
        series = np.column_stack(
            [np.interp(np.arange(n_samples), idx, fitted.embedding[:, c])
             for c in range(fitted.embedding.shape[1])]
        )
        return series[:, 0] if spec.target_dim == 1 else series.T, fitted

    obs_labels = None
    if spec.method == "lda":
        if labels is None:
            raise ValueError("LDA reduction needs per-observation labels")
        obs_labels = np.asarray(labels)
        if len(obs_labels) != n_samples:
            raise ValueError("labels must align with time samples")
    fitted = fit_reducer(X, spec, labels=obs_labels)
    series = fitted.embedding
    return series[:, 0] if spec.target_dim == 1 else series.T, fitted
