"""From-scratch classifiers, the deep MLP, and evaluation utilities.

Every model trains deterministically under a fixed seed and exposes its
parameters as flat arrays, so fits serialize to a versioned JSON container
and reload bit-for-bit. Gradients are hand-derived; ``logistic_loss_grad``
and ``mlp_loss_grad`` evaluate loss and gradient at arbitrary parameter
points so finite-difference checks can probe them directly.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

MODEL_FORMAT_VERSION = 1
BN_EPS = 1e-5
BN_MOMENTUM = 0.9


@dataclass(frozen=True)
class ClassifierSpec:
    method: str                      # logistic | ridge | linear_svm | gaussian_nb | lda | deep_mlp
    l2: float = 1e-2
    learning_rate: float = 1e-2
    epochs: int = 500
    batch_size: int = 32
    dropout: float = 0.3
    hidden_dims: tuple[int, ...] = (128, 64)
    patience: int = 10
    validation_split: float = 0.2
    seed: int = 0
    tol: float = 1e-10

    def __post_init__(self):
        if self.method not in ("logistic", "ridge", "linear_svm", "gaussian_nb", "lda", "deep_mlp"):
            raise ValueError(f"unknown classifier method {self.method!r}")
        if self.l2 < 0 or self.epochs < 1:
            raise ValueError("need l2 >= 0 and epochs >= 1")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must be in [0, 1)")


@dataclass
class TrainedClassifier:
    """Fitted model: a method tag, the class list, and named parameter arrays."""

    method: str
    classes: np.ndarray
    arrays: dict[str, np.ndarray]
    meta: dict = field(default_factory=dict)

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        scores = self.decision_scores(X)
        return self.classes[np.argmax(scores, axis=1)]

    def decision_scores(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if self.method in ("logistic", "ridge", "linear_svm", "lda"):
            return X @ self.arrays["weights"] + self.arrays["bias"]
        if self.method == "gaussian_nb":
            mu = self.arrays["mean"]          # (C, d)
            var = self.arrays["variance"]
            prior = self.arrays["log_prior"]
            ll = -0.5 * (
                np.log(2 * np.pi * var)[None, :, :]
                + (X[:, None, :] - mu[None, :, :]) ** 2 / var[None, :, :]
            ).sum(axis=2)
            return ll + prior[None, :]
        if self.method == "deep_mlp":
            return _mlp_forward_eval(self.arrays, self.meta["hidden_dims"], X)
        raise ValueError(f"unknown method {self.method!r}")

    def to_json(self) -> str:
        payload = {
            "format_version": MODEL_FORMAT_VERSION,
            "method": self.method,
            "classes": self.classes.tolist(),
            "arrays": {
                k: {"shape": list(v.shape), "data": v.reshape(-1).tolist()}
                for k, v in self.arrays.items()
            },
            "meta": _jsonable(self.meta),
        }
        return json.dumps(payload)

    @staticmethod
    def from_json(text: str) -> "TrainedClassifier":
        payload = json.loads(text)
        if payload.get("format_version") != MODEL_FORMAT_VERSION:
            raise ValueError(f"unsupported model format: {payload.get('format_version')}")
        arrays = {
            k: np.array(v["data"], dtype=float).reshape(v["shape"])
            for k, v in payload["arrays"].items()
        }
        meta = payload.get("meta", {})
        if "hidden_dims" in meta:
            meta["hidden_dims"] = tuple(meta["hidden_dims"])
        return TrainedClassifier(
            method=payload["method"],
            classes=np.array(payload["classes"]),
            arrays=arrays,
            meta=meta,
        )


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _one_hot(y: np.ndarray, classes: np.ndarray) -> np.ndarray:
    idx = np.searchsorted(classes, y)
    out = np.zeros((len(y), len(classes)))
    out[np.arange(len(y)), idx] = 1.0
    return out


def _check_training_input(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite feature values")
    classes = np.unique(y)
    if len(classes) < 2:
        raise ValueError("training labels contain a single class")
    return classes


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# Logistic regression
# ---------------------------------------------------------------------------

def logistic_loss_grad(W, b, X, Y, l2):
    """Multinomial cross-entropy with L2 on the weights (not the bias).

    Y is one-hot. Returns (loss, grad_W, grad_b); all means are over rows.
    """
    n = X.shape[0]
    probs = _softmax(X @ W + b)
    ce = -np.sum(Y * np.log(np.maximum(probs, 1e-300))) / n
    loss = ce + 0.5 * l2 * np.sum(W**2)
    diff = (probs - Y) / n
    return loss, X.T @ diff + l2 * W, diff.sum(axis=0)


def _fit_logistic(spec: ClassifierSpec, X, y, classes) -> TrainedClassifier:
    Y = _one_hot(y, classes)
    d, C = X.shape[1], len(classes)
    W = np.zeros((d, C))
    b = np.zeros(C)
    lr = spec.learning_rate
    loss, gW, gb = logistic_loss_grad(W, b, X, Y, spec.l2)
    history = [loss]
    for _ in range(spec.epochs):
        # fixed step with a halving guard so the recorded loss never increases
        for _ in range(60):
            W2, b2 = W - lr * gW, b - lr * gb
            loss2, gW2, gb2 = logistic_loss_grad(W2, b2, X, Y, spec.l2)
            if loss2 <= loss:
                break
            lr /= 2.0
        else:
            break
        W, b, loss, gW, gb = W2, b2, loss2, gW2, gb2
        history.append(loss)
        if len(history) > 2 and history[-2] - history[-1] < spec.tol:
            break
    return TrainedClassifier(
        method="logistic",
        classes=classes,
        arrays={"weights": W, "bias": b},
        meta={"loss_history": [float(v) for v in history]},
    )


# ---------------------------------------------------------------------------
# Ridge, SVM, Gaussian NB, LDA
# ---------------------------------------------------------------------------

def _fit_ridge(spec: ClassifierSpec, X, y, classes) -> TrainedClassifier:
    # one-vs-rest least squares on +/-1 targets, closed form, bias unpenalized
    T = 2.0 * _one_hot(y, classes) - 1.0
    x_mean = X.mean(axis=0)
    t_mean = T.mean(axis=0)
    Xc = X - x_mean
    Tc = T - t_mean
    d = X.shape[1]
    W = np.linalg.solve(Xc.T @ Xc + spec.l2 * np.eye(d), Xc.T @ Tc)
    b = t_mean - x_mean @ W
    return TrainedClassifier("ridge", classes, {"weights": W, "bias": b})


def _fit_linear_svm(spec: ClassifierSpec, X, y, classes) -> TrainedClassifier:
    # one-vs-rest L2-regularized hinge, full-batch subgradient descent
    T = 2.0 * _one_hot(y, classes) - 1.0
    n, d = X.shape
    W = np.zeros((d, len(classes)))
    b = np.zeros(len(classes))
    lr = spec.learning_rate
    for epoch in range(spec.epochs):
        margins = T * (X @ W + b)
        active = (margins < 1.0).astype(float)
        gW = -(X.T @ (T * active)) / n + 2.0 * spec.l2 * W
        gb = -(T * active).sum(axis=0) / n
        step = lr / (1.0 + 0.01 * epoch)
        W -= step * gW
        b -= step * gb
    return TrainedClassifier("linear_svm", classes, {"weights": W, "bias": b})


def _fit_gaussian_nb(spec: ClassifierSpec, X, y, classes) -> TrainedClassifier:
    mu = np.vstack([X[y == c].mean(axis=0) for c in classes])
    var = np.vstack([np.maximum(X[y == c].var(axis=0), 1e-9) for c in classes])
    prior = np.log(np.array([np.mean(y == c) for c in classes]))
    return TrainedClassifier(
        "gaussian_nb", classes, {"mean": mu, "variance": var, "log_prior": prior}
    )


def _fit_lda(spec: ClassifierSpec, X, y, classes) -> TrainedClassifier:
    n, d = X.shape
    means = np.vstack([X[y == c].mean(axis=0) for c in classes])
    cov = np.zeros((d, d))
    for i, c in enumerate(classes):
        diff = X[y == c] - means[i]
        cov += diff.T @ diff
    cov /= max(n - len(classes), 1)
    cov += 1e-6 * np.eye(d)
    inv_means = np.linalg.solve(cov, means.T)  # (d, C)
    prior = np.log(np.array([np.mean(y == c) for c in classes]))
    bias = -0.5 * np.sum(means.T * inv_means, axis=0) + prior
    return TrainedClassifier("lda", classes, {"weights": inv_means, "bias": bias})


# ---------------------------------------------------------------------------
# Deep MLP (manual gradients, batch norm, dropout, early stopping)
# ---------------------------------------------------------------------------

def _mlp_init(rng: np.random.Generator, d_in: int, hidden: Sequence[int], n_classes: int):
    arrays = {}
    prev = d_in
    for i, h in enumerate(hidden):
        arrays[f"W{i}"] = rng.standard_normal((prev, h)) * np.sqrt(2.0 / prev)
        arrays[f"b{i}"] = np.zeros(h)
        arrays[f"gamma{i}"] = np.ones(h)
        arrays[f"beta{i}"] = np.zeros(h)
        arrays[f"rmean{i}"] = np.zeros(h)
        arrays[f"rvar{i}"] = np.ones(h)
        prev = h
    arrays["W_out"] = rng.standard_normal((prev, n_classes)) * np.sqrt(2.0 / prev)
    arrays["b_out"] = np.zeros(n_classes)
    return arrays


def _mlp_forward_train(arrays, hidden, X, dropout, rng, update_running=False):
    """Forward pass with batch statistics; returns logits plus a tape for backprop."""
    h = X
    tape = []
    for i in range(len(hidden)):
        z = h @ arrays[f"W{i}"] + arrays[f"b{i}"]
        mu = z.mean(axis=0)
        var = z.var(axis=0)
        inv_std = 1.0 / np.sqrt(var + BN_EPS)
        xhat = (z - mu) * inv_std
        bn = arrays[f"gamma{i}"] * xhat + arrays[f"beta{i}"]
        relu_mask = bn > 0
        a = bn * relu_mask
        if dropout > 0 and rng is not None:
            keep = (rng.uniform(size=a.shape) >= dropout) / (1.0 - dropout)
        else:
            keep = np.ones_like(a)
        out = a * keep
        tape.append({"h": h, "z": z, "mu": mu, "inv_std": inv_std, "xhat": xhat,
                     "relu_mask": relu_mask, "keep": keep})
        if update_running:
            arrays[f"rmean{i}"] = BN_MOMENTUM * arrays[f"rmean{i}"] + (1 - BN_MOMENTUM) * mu
            arrays[f"rvar{i}"] = BN_MOMENTUM * arrays[f"rvar{i}"] + (1 - BN_MOMENTUM) * var
        h = out
    logits = h @ arrays["W_out"] + arrays["b_out"]
    return logits, tape, h


def _mlp_forward_eval(arrays, hidden, X):
    h = X
    for i in range(len(hidden)):
        z = h @ arrays[f"W{i}"] + arrays[f"b{i}"]
        xhat = (z - arrays[f"rmean{i}"]) / np.sqrt(arrays[f"rvar{i}"] + BN_EPS)
        h = np.maximum(arrays[f"gamma{i}"] * xhat + arrays[f"beta{i}"], 0.0)
    return h @ arrays["W_out"] + arrays["b_out"]


def mlp_loss_grad(arrays, hidden, X, Y, l2=0.0, dropout=0.0, rng=None, update_running=False):
    """Cross-entropy loss and gradients at the given parameter point.

    Train-mode batch normalization (statistics from this batch, with their
    full dependence on the inputs differentiated). Returns (loss, grads) with
    grads keyed like ``arrays``, running statistics excluded.
    """
    n = X.shape[0]
    logits, tape, h_last = _mlp_forward_train(arrays, hidden, X, dropout, rng, update_running)
    probs = _softmax(logits)
    ce = -np.sum(Y * np.log(np.maximum(probs, 1e-300))) / n
    loss = ce + 0.5 * l2 * (
        sum(np.sum(arrays[f"W{i}"] ** 2) for i in range(len(hidden)))
        + np.sum(arrays["W_out"] ** 2)
    )

    grads = {}
    dlogits = (probs - Y) / n
    grads["W_out"] = h_last.T @ dlogits + l2 * arrays["W_out"]
    grads["b_out"] = dlogits.sum(axis=0)
    dh = dlogits @ arrays["W_out"].T
    for i in reversed(range(len(hidden))):
        t = tape[i]
        da = dh * t["keep"]
        dbn = da * t["relu_mask"]
        grads[f"gamma{i}"] = np.sum(dbn * t["xhat"], axis=0)
        grads[f"beta{i}"] = np.sum(dbn, axis=0)
        dxhat = dbn * arrays[f"gamma{i}"]
        B = t["z"].shape[0]
        zc = t["z"] - t["mu"]
        dvar = np.sum(dxhat * zc, axis=0) * (-0.5) * t["inv_std"] ** 3
        dmu = -np.sum(dxhat, axis=0) * t["inv_std"] + dvar * np.mean(-2.0 * zc, axis=0)
        dz = dxhat * t["inv_std"] + dvar * 2.0 * zc / B + dmu / B
        grads[f"W{i}"] = t["h"].T @ dz + l2 * arrays[f"W{i}"]
        grads[f"b{i}"] = dz.sum(axis=0)
        dh = dz @ arrays[f"W{i}"].T
    return loss, grads


def fit_mlp(spec: ClassifierSpec, X, y, validation_split: float | None = None) -> TrainedClassifier:
    """Train the deep MLP with mini-batch gradient descent.

    Architecture: input -> hidden dims -> classes with per-hidden-layer batch
    normalization, ReLU and dropout. Early stopping monitors validation
    balanced accuracy with ``spec.patience`` and restores the best
    parameters; a zero validation split disables it. Inference always uses
    running statistics and no dropout.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    classes = _check_training_input(X, y)
    rng = np.random.default_rng(spec.seed)
    val_frac = spec.validation_split if validation_split is None else validation_split

    if val_frac > 0:
        train_idx, val_idx = stratified_split(y, train_fraction=1.0 - val_frac, seed=spec.seed)
        X_tr, y_tr = X[train_idx], y[train_idx]
        X_val, y_val = X[val_idx], y[val_idx]
    else:
        X_tr, y_tr = X, y
        X_val = y_val = None

    Y_tr = _one_hot(y_tr, classes)
    hidden = tuple(spec.hidden_dims)
    arrays = _mlp_init(rng, X.shape[1], hidden, len(classes))

    batch = spec.batch_size
    if batch > len(X_tr):
        warnings.warn(
            f"batch size {batch} exceeds {len(X_tr)} training rows; clamping", stacklevel=2
        )
        batch = len(X_tr)

    model = TrainedClassifier("deep_mlp", classes, arrays, meta={"hidden_dims": hidden})
    best_arrays = None
    best_val = -np.inf
    stale = 0
    for _ in range(spec.epochs):
        order = rng.permutation(len(X_tr))
        for lo in range(0, len(X_tr), batch):
            sel = order[lo : lo + batch]
            if len(sel) < 2:
                continue  # batch norm needs at least 2 rows
            _, grads = mlp_loss_grad(
                arrays, hidden, X_tr[sel], Y_tr[sel], l2=spec.l2,
                dropout=spec.dropout, rng=rng, update_running=True,
            )
            for k, g in grads.items():
                arrays[k] -= spec.learning_rate * g
        if X_val is not None:
            val_ba = balanced_accuracy(y_val, model.predict(X_val))
            if val_ba > best_val + 1e-12:
                best_val = val_ba
                best_arrays = {k: v.copy() for k, v in arrays.items()}
                stale = 0
            else:
                stale += 1
                if stale >= spec.patience:
                    break
    if best_arrays is not None:
        model.arrays = best_arrays
    return model


# ---------------------------------------------------------------------------
# Fit dispatch
# ---------------------------------------------------------------------------

def fit(spec: ClassifierSpec, X, y) -> TrainedClassifier:
    """Fit the classifier named by ``spec.method``; features should be standardized."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    classes = _check_training_input(X, y)
    if spec.method == "logistic":
        return _fit_logistic(spec, X, y, classes)
    if spec.method == "ridge":
        return _fit_ridge(spec, X, y, classes)
    if spec.method == "linear_svm":
        return _fit_linear_svm(spec, X, y, classes)
    if spec.method == "gaussian_nb":
        return _fit_gaussian_nb(spec, X, y, classes)
    if spec.method == "lda":
        return _fit_lda(spec, X, y, classes)
    if spec.method == "deep_mlp":
        return fit_mlp(spec, X, y)
    raise ValueError(f"unknown classifier method {spec.method!r}")


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

def balanced_accuracy(y_true, y_pred) -> float:
    """Unweighted mean of per-class recall over the classes present in y_true."""
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if len(y_true) != len(y_pred):
        raise ValueError(f"length mismatch: {len(y_true)} vs {len(y_pred)}")
    if len(y_true) == 0:
        raise ValueError("y_true is empty")
    recalls = [np.mean(y_pred[y_true == c] == c) for c in np.unique(y_true)]
    return float(np.mean(recalls))


def stratified_split(labels, train_fraction: float = 0.8, seed: int = 0):
    """Per-class split into (train indices, test indices), deterministic per seed.

    Train counts are floor(train_fraction * class size), clamped so both
    sides stay nonempty. Classes with a single member are an error.
    """
    labels = np.asarray(labels)
    if not 0 < train_fraction < 1:
        raise ValueError("train_fraction must be in (0, 1)")
    rng = np.random.default_rng(seed)
    train, test = [], []
    for c in np.unique(labels):
        idx = np.where(labels == c)[0]
        if len(idx) < 2:
            raise ValueError(f"class {c} has fewer than 2 members")
        rng.shuffle(idx)
        n_train = int(np.floor(train_fraction * len(idx)))
        n_train = min(max(n_train, 1), len(idx) - 1)
        train.extend(idx[:n_train])
        test.extend(idx[n_train:])
    return np.sort(np.array(train)), np.sort(np.array(test))
