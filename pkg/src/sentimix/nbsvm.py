"""Binarized n-gram features reweighted by the naive-Bayes log-count ratio,
classified with L2-regularized logistic regression.

Feature values are the log-ratio entries wherever a gram is present, zero
elsewhere; grams unseen in training are dropped.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.optimize import minimize

log = logging.getLogger(__name__)

GRAM_SEP = " "


class TrainingError(Exception):
    pass


def extract_grams(tokens, n_max: int) -> set[str]:
    """Every contiguous 1..n_max-gram, deduplicated (presence only)."""
    if n_max not in (1, 2, 3):
        raise ValueError(f"n_max must be 1, 2 or 3, got {n_max}")
    toks = list(tokens)
    grams = set(toks)
    for n in range(2, n_max + 1):
        for i in range(len(toks) - n + 1):
            grams.add(GRAM_SEP.join(toks[i:i + n]))
    return grams


@dataclass
class NGramFeatureSpace:
    n_max: int
    index: dict[str, int]
    grams: list[str]
    df_pos: np.ndarray
    df_neg: np.ndarray
    n_pos_docs: int = 0
    n_neg_docs: int = 0

    def __len__(self) -> int:
        return len(self.grams)


def build_feature_space(pos_docs, neg_docs, n_max: int) -> NGramFeatureSpace:
    """Feature space over all grams observed in training, with per-class
    presence document frequencies."""
    index: dict[str, int] = {}
    per_class_ids = []
    for docs in (pos_docs, neg_docs):
        id_lists = []
        for d in docs:
            # sorted so feature-index assignment ignores set iteration order
            grams = sorted(extract_grams(d.tokens, n_max))
            ids = np.empty(len(grams), dtype=np.int64)
            for j, g in enumerate(grams):
                ids[j] = index.setdefault(g, len(index))
            id_lists.append(ids)
        per_class_ids.append(id_lists)
    n_feat = len(index)
    df_pos = np.zeros(n_feat, dtype=np.int64)
    df_neg = np.zeros(n_feat, dtype=np.int64)
    for ids in per_class_ids[0]:
        df_pos[ids] += 1
    for ids in per_class_ids[1]:
        df_neg[ids] += 1
    grams = [""] * n_feat
    for g, i in index.items():
        grams[i] = g
    space = NGramFeatureSpace(n_max=n_max, index=index, grams=grams,
                              df_pos=df_pos, df_neg=df_neg,
                              n_pos_docs=len(per_class_ids[0]),
                              n_neg_docs=len(per_class_ids[1]))
    space._cached_train_ids = per_class_ids  # reused by the pipeline
    return space


@dataclass
class LogRatioWeights:
    r: np.ndarray
    alpha: float


def compute_log_ratio(space: NGramFeatureSpace, alpha: float = 1.0) -> LogRatioWeights:
    """r_i = ln((p_i/||p||_1) / (q_i/||q||_1)) over smoothed presence counts."""
    if alpha <= 0:
        raise ValueError("alpha must be > 0")
    if space.n_pos_docs == 0 or space.n_neg_docs == 0:
        raise TrainingError("both classes need at least one document")
    p = alpha + space.df_pos.astype(np.float64)
    q = alpha + space.df_neg.astype(np.float64)
    r = np.log(p / p.sum()) - np.log(q / q.sum())
    return LogRatioWeights(r=r, alpha=alpha)


def doc_gram_ids(tokens, space: NGramFeatureSpace) -> np.ndarray:
    grams = extract_grams(tokens, space.n_max)
    idx = space.index
    ids = [idx[g] for g in grams if g in idx]
    return np.array(sorted(ids), dtype=np.int64)


def featurize(tokens, space: NGramFeatureSpace, weights: LogRatioWeights) -> sp.csr_matrix:
    """Sparse row: r_i where gram i is present, grams unseen in training dropped."""
    ids = doc_gram_ids(tokens, space)
    data = weights.r[ids]
    return sp.csr_matrix((data, ids, [0, len(ids)]), shape=(1, len(space)))


def featurize_all(docs, space: NGramFeatureSpace, weights: LogRatioWeights,
                  cached_ids=None) -> sp.csr_matrix:
    id_lists = cached_ids if cached_ids is not None \
        else [doc_gram_ids(d.tokens, space) for d in docs]
    indptr = np.zeros(len(id_lists) + 1, dtype=np.int64)
    for i, ids in enumerate(id_lists):
        indptr[i + 1] = indptr[i] + len(ids)
    indices = np.concatenate(id_lists) if id_lists else np.empty(0, dtype=np.int64)
    data = weights.r[indices]
    return sp.csr_matrix((data, indices, indptr), shape=(len(id_lists), len(space)))


@dataclass
class LinearClassifier:
    w: np.ndarray
    b: float
    l2: float
    loss: str
    trace: list[float] = field(default_factory=list)

    def margins(self, X) -> np.ndarray:
        return np.asarray(X @ self.w).ravel() + self.b

    def predict_proba(self, X) -> np.ndarray:
        m = self.margins(X)
        return 1.0 / (1.0 + np.exp(-np.clip(m, -500, 500)))


def _logistic_objective(wb, X, y_signed, l2):
    w, b = wb[:-1], wb[-1]
    m = y_signed * (np.asarray(X @ w).ravel() + b)
    # log(1 + exp(-m)) computed stably
    loss = np.mean(np.logaddexp(0.0, -m)) + 0.5 * l2 * float(w @ w)
    s = -y_signed / (1.0 + np.exp(np.clip(m, -500, 500)))
    gw = np.asarray(X.T @ s).ravel() / len(y_signed) + l2 * w
    gb = s.mean()
    return loss, np.concatenate([gw, [gb]])


def _train_lbfgs(X, y_signed, l2, max_iter):
    trace = []
    wb0 = np.zeros(X.shape[1] + 1)

    def record(wb):
        trace.append(_logistic_objective(wb, X, y_signed, l2)[0])

    record(wb0)
    res = minimize(_logistic_objective, wb0, args=(X, y_signed, l2),
                   method="L-BFGS-B", jac=True, callback=record,
                   options={"maxiter": max_iter, "ftol": 1e-12, "gtol": 1e-8})
    return res.x[:-1], float(res.x[-1]), trace


def _full_loss(X, y_signed, w, b, l2, loss):
    m = y_signed * (np.asarray(X @ w).ravel() + b)
    if loss == "hinge":
        return float(np.mean(np.maximum(0.0, 1.0 - m)) + 0.5 * l2 * (w @ w))
    return float(np.mean(np.logaddexp(0.0, -m)) + 0.5 * l2 * (w @ w))


def _train_sgd(X, y_signed, l2, epochs, seed, lr0, loss):
    """Seeded SGD with lazy L2 scaling; an epoch that raises the full
    objective is rolled back and the step size halved, so the recorded
    trace is non-increasing."""
    X = sp.csr_matrix(X)
    n, n_feat = X.shape
    v = np.zeros(n_feat)  # w = scale * v
    scale = 1.0
    b = 0.0
    rng = np.random.RandomState(seed)
    lr = lr0
    trace = [_full_loss(X, y_signed, v, b, l2, loss)]
    for _ in range(epochs):
        prev = (v.copy(), scale, b, lr)
        for i in rng.permutation(n):
            start, end = X.indptr[i], X.indptr[i + 1]
            cols = X.indices[start:end]
            vals = X.data[start:end]
            m = y_signed[i] * (scale * float(vals @ v[cols]) + b)
            if loss == "hinge":
                g = -y_signed[i] if m < 1.0 else 0.0
            else:
                g = -y_signed[i] / (1.0 + np.exp(np.clip(m, -500, 500)))
            scale *= (1.0 - lr * l2)
            if abs(scale) < 1e-9:
                v *= scale
                scale = 1.0
            if g != 0.0:
                v[cols] -= lr * g * vals / scale
                b -= lr * g
        w_now = scale * v
        cur = _full_loss(X, y_signed, w_now, b, l2, loss)
        if not np.isfinite(cur):
            raise TrainingError("SGD diverged; use a smaller initial step size")
        if cur > trace[-1]:
            v, scale, b, lr = prev[0], prev[1], prev[2], prev[3] * 0.5
            trace.append(trace[-1])
        else:
            trace.append(cur)
    return scale * v, b, trace


def train_linear(X, labels, l2: float | None = None, epochs: int = 30, seed: int = 0,
                 loss: str = "logistic", optimizer: str = "lbfgs",
                 lr0: float = 0.05, max_iter: int = 200) -> LinearClassifier:
    """L2-regularized linear classifier; labels are 1 (positive) / 0 (negative).

    The default optimizer is deterministic full-batch L-BFGS; ``optimizer=
    "sgd"`` gives the seeded online trainer (required for hinge loss).
    l2 defaults to 1/n_docs.
    """
    X = X if sp.issparse(X) else np.asarray(X, dtype=np.float64)
    y = np.asarray(labels)
    if X.shape[0] == 0:
        raise TrainingError("empty training set")
    y_signed = np.where(y > 0, 1.0, -1.0)
    if l2 is None:
        l2 = 1.0 / X.shape[0]
    if optimizer == "lbfgs":
        if loss == "hinge":
            raise ValueError("hinge loss requires optimizer='sgd'")
        w, b, trace = _train_lbfgs(X, y_signed, l2, max_iter)
    elif optimizer == "sgd":
        w, b, trace = _train_sgd(X, y_signed, l2, epochs, seed, lr0, loss)
    else:
        raise ValueError(f"unknown optimizer {optimizer!r}")
    if trace[-1] > trace[0] + 1e-12:
        raise TrainingError("training failed to reduce the loss")
    return LinearClassifier(w=w, b=b, l2=l2, loss=loss, trace=trace)


def dump_feature_weights(space: NGramFeatureSpace, weights: LogRatioWeights, path) -> None:
    """gram<TAB>r, sorted by |r| descending (ties by gram) for inspection."""
    order = sorted(range(len(space)), key=lambda i: (-abs(weights.r[i]), space.grams[i]))
    with open(path, "w", encoding="utf-8") as f:
        for i in order:
            f.write(f"{space.grams[i]}\t{weights.r[i]:.6f}\n")


def nbsvm_pipeline(train_docs, eval_splits: dict, n_max: int, alpha: float = 1.0,
                   l2: float | None = None, optimizer: str = "lbfgs",
                   epochs: int = 30, seed: int = 0):
    """Train on train_docs, score every split in eval_splits (name -> docs).

    Returns (space, weights, classifier, scores) where scores maps split
    name -> (doc ids, p_pos array).
    """
    from .corpus import POSITIVE

    pos_docs = [d for d in train_docs if d.label == POSITIVE]
    neg_docs = [d for d in train_docs if d.label != POSITIVE]
    space = build_feature_space(pos_docs, neg_docs, n_max)
    weights = compute_log_ratio(space, alpha)
    cached = space._cached_train_ids
    X_train = featurize_all(pos_docs + neg_docs, space, weights,
                            cached_ids=cached[0] + cached[1])
    y_train = np.array([1] * len(pos_docs) + [0] * len(neg_docs))
    clf = train_linear(X_train, y_train, l2=l2, optimizer=optimizer,
                       epochs=epochs, seed=seed)
    scores = {}
    for name, docs in eval_splits.items():
        X = featurize_all(docs, space, weights)
        scores[name] = ([d.id for d in docs], clf.predict_proba(X))
    return space, weights, clf, scores
