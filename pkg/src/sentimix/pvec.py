"""Paragraph-vector document embeddings trained with hierarchical softmax
over a Huffman-coded vocabulary tree.

The default mode is distributed bag of words: each word of a document is
predicted from the document vector alone.  The distributed-memory mode
(average of document and window word vectors predicting the center word)
sits behind ``mode="dm"``.  New documents are embedded by gradient steps on
a fresh vector with all shared parameters frozen.
"""

from __future__ import annotations

import heapq
import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)


@dataclass
class HuffmanTree:
    codes: list[np.ndarray]   # per word: bit sequence (uint8)
    paths: list[np.ndarray]   # per word: internal-node ids root->leaf (int32)
    n_words: int
    labels: list[np.ndarray] = None  # per word: 1 - code as float32, for updates

    def __post_init__(self):
        if self.labels is None:
            self.labels = [1.0 - c.astype(np.float32) for c in self.codes]

    @property
    def n_internal(self) -> int:
        return self.n_words - 1

    def code_length(self, w: int) -> int:
        return len(self.codes[w])


def build_huffman(frequencies) -> HuffmanTree:
    """Two-least-frequent merge; ties broken by (frequency, creation order),
    where leaves order by token index."""
    freqs = list(frequencies)
    m = len(freqs)
    if m < 2:
        raise ValueError("hierarchical softmax needs a vocabulary of at least 2")
    heap = [(f, i, ("leaf", i)) for i, f in enumerate(freqs)]
    heapq.heapify(heap)
    next_tie = m
    internal_id = 0
    root = None
    while len(heap) > 1:
        fa, _, a = heapq.heappop(heap)
        fb, _, b = heapq.heappop(heap)
        node = ("int", internal_id, a, b)
        internal_id += 1
        heapq.heappush(heap, (fa + fb, next_tie, node))
        next_tie += 1
        root = node
    codes: list[np.ndarray] = [None] * m
    paths: list[np.ndarray] = [None] * m
    stack = [(root, [], [])]
    while stack:
        node, bits, path = stack.pop()
        if node[0] == "leaf":
            codes[node[1]] = np.array(bits, dtype=np.uint8)
            paths[node[1]] = np.array(path, dtype=np.int32)
        else:
            _, nid, left, right = node
            stack.append((left, bits + [0], path + [nid]))
            stack.append((right, bits + [1], path + [nid]))
    return HuffmanTree(codes=codes, paths=paths, n_words=m)


@dataclass
class PvConfig:
    dim: int = 100
    window: int = 10
    epochs: int = 20
    lr0: float = 0.05
    lr_min: float = 0.0001
    mode: str = "dbow"  # or "dm"
    seed: int = 1
    shuffle: bool = True  # unshuffled training is unsupported; kept for the regression test


@dataclass
class ParagraphVectorModel:
    dim: int
    window: int
    mode: str
    words: list[str]
    word_index: dict[str, int]
    tree: HuffmanTree
    word_vecs: np.ndarray   # (W, D) float32
    node_vecs: np.ndarray   # (W-1, D) float32
    doc_vecs: np.ndarray    # (N, D) float32
    doc_ids: list[str]
    train_log: list[float] = field(default_factory=list)

    def doc_row(self, doc_id: str) -> int:
        return self._doc_rows[doc_id]

    def __post_init__(self):
        self._doc_rows = {d: i for i, d in enumerate(self.doc_ids)}

    def encode_words(self, tokens) -> list[int]:
        idx = self.word_index
        return [idx[t] for t in tokens if t in idx]

    def state_digest(self) -> str:
        import hashlib
        h = hashlib.sha256()
        h.update(self.word_vecs.tobytes())
        h.update(self.node_vecs.tobytes())
        return h.hexdigest()


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _hs_step(node_vecs, tree, wid, ctx_vec, lr, update_nodes=True):
    """One hierarchical-softmax update toward word wid from ctx_vec.

    Returns (gradient to add to the context vector, loss contribution).
    The loss is computed before any update.
    """
    path = tree.paths[wid]
    labels = tree.labels[wid]
    nodes = node_vecs[path]  # copy
    z = nodes @ ctx_vec
    f = _sigmoid(z)
    # -log p along the path, stable around saturation
    loss = float(np.sum(np.logaddexp(0.0, np.where(labels > 0.5, -z, z))))
    g = (labels - f) * lr
    if update_nodes:
        node_vecs[path] += g[:, None] * ctx_vec[None, :]
    return g @ nodes, loss


def train_pv(docs, vocab, config: PvConfig) -> ParagraphVectorModel:
    """Train word/document vectors; deterministic for a fixed seed.

    Document order is shuffled every epoch; ``config.shuffle=False`` exists
    only to demonstrate the order-dependence artifact and is not a supported
    training mode.
    """
    from .corpus import RESERVED

    words = [t for t in vocab.tokens if t not in RESERVED]
    freqs = [vocab.frequency(t) for t in words]
    if len(words) < 2:
        raise ValueError("paragraph vectors need at least 2 trainable words")
    if config.epochs < 1:
        raise ValueError("epochs must be >= 1")
    tree = build_huffman(freqs)
    word_index = {w: i for i, w in enumerate(words)}
    rng = np.random.RandomState(config.seed)
    D = config.dim
    W = len(words)
    docs = list(docs)
    N = len(docs)
    word_vecs = ((rng.rand(W, D).astype(np.float32) - 0.5) / D)
    doc_vecs = ((rng.rand(N, D).astype(np.float32) - 0.5) / D)
    node_vecs = np.zeros((W - 1, D), dtype=np.float32)

    encoded = [np.array([word_index[t] for t in d.tokens if t in word_index],
                        dtype=np.int64) for d in docs]
    total_steps = max(1, config.epochs * sum(len(e) for e in encoded))
    step = 0
    train_log: list[float] = []
    for epoch in range(config.epochs):
        order = rng.permutation(N) if config.shuffle else np.arange(N)
        epoch_loss = 0.0
        epoch_words = 0
        for di in order:
            ids = encoded[di]
            if len(ids) == 0:
                continue
            dvec = doc_vecs[di]
            if config.mode == "dbow":
                for wid in ids:
                    lr = max(config.lr_min, config.lr0 * (1.0 - step / total_steps))
                    step += 1
                    dd, loss = _hs_step(node_vecs, tree, wid, dvec, lr)
                    dvec += dd
                    epoch_loss += loss
                    epoch_words += 1
            elif config.mode == "dm":
                w = config.window
                for t in range(len(ids)):
                    lr = max(config.lr_min, config.lr0 * (1.0 - step / total_steps))
                    step += 1
                    lo, hi = max(0, t - w), min(len(ids), t + w + 1)
                    ctx_ids = np.concatenate([ids[lo:t], ids[t + 1:hi]])
                    n_contrib = len(ctx_ids) + 1
                    ctx = (dvec + word_vecs[ctx_ids].sum(axis=0)) / n_contrib \
                        if len(ctx_ids) else dvec.copy()
                    dd, loss = _hs_step(node_vecs, tree, ids[t], ctx, lr)
                    dd /= n_contrib
                    dvec += dd
                    word_vecs[ctx_ids] += dd[None, :]
                    epoch_loss += loss
                    epoch_words += 1
            else:
                raise ValueError(f"unknown training mode {config.mode!r}")
        avg = epoch_loss / max(epoch_words, 1)
        train_log.append(avg)
        if not np.isfinite(avg):
            raise FloatingPointError(f"paragraph-vector training diverged at epoch {epoch + 1}")
        log.info("pv epoch %d: avg loss %.4f", epoch + 1, avg)
    return ParagraphVectorModel(dim=D, window=config.window, mode=config.mode,
                                words=words, word_index=word_index, tree=tree,
                                word_vecs=word_vecs, node_vecs=node_vecs,
                                doc_vecs=doc_vecs, doc_ids=[d.id for d in docs],
                                train_log=train_log)


def infer_doc_vector(model: ParagraphVectorModel, tokens, steps: int = 10,
                     lr0: float = 0.05, lr_min: float = 0.0001,
                     seed: int = 1) -> np.ndarray:
    """Embed an unseen document: gradient steps on a fresh vector with word
    vectors and tree parameters frozen."""
    rng = np.random.RandomState(seed)
    dvec = ((rng.rand(model.dim).astype(np.float32) - 0.5) / model.dim)
    ids = model.encode_words(tokens)
    if steps == 0 or not ids:
        return dvec
    total = steps * len(ids)
    step = 0
    # dm inference uses the doc vector alone as context; mixing in window
    # word vectors would route updates into frozen parameters
    for _ in range(steps):
        for wid in ids:
            lr = max(lr_min, lr0 * (1.0 - step / total))
            step += 1
            dd, _ = _hs_step(model.node_vecs, model.tree, wid, dvec,
                             lr, update_nodes=False)
            dvec += dd
    return dvec


def hs_word_logprob(model: ParagraphVectorModel, wid: int, ctx_vec) -> float:
    """log p(word | ctx_vec) under the hierarchical softmax."""
    path = model.tree.paths[wid]
    labels = 1.0 - model.tree.codes[wid].astype(np.float64)
    z = (model.node_vecs[path].astype(np.float64) @ np.asarray(ctx_vec, dtype=np.float64))
    return float(-np.sum(np.logaddexp(0.0, np.where(labels > 0.5, -z, z))))


def infer_vectors(model: ParagraphVectorModel, docs, steps: int = 10,
                  lr0: float = 0.05, seed: int = 1) -> np.ndarray:
    out = np.empty((len(docs), model.dim), dtype=np.float32)
    for i, d in enumerate(docs):
        out[i] = infer_doc_vector(model, d.tokens, steps=steps, lr0=lr0, seed=seed)
    return out


def pv_classify(model: ParagraphVectorModel, train_docs, eval_splits: dict,
                l2: float | None = None, infer_steps: int = 10, seed: int = 0):
    """Logistic regression on document vectors; evaluation splits are embedded
    by held-out inference.  Returns (classifier, scores dict)."""
    from .corpus import POSITIVE
    from .nbsvm import train_linear

    rows = [model.doc_row(d.id) for d in train_docs]
    X = model.doc_vecs[rows].astype(np.float64)
    y = np.array([1 if d.label == POSITIVE else 0 for d in train_docs])
    clf = train_linear(X, y, l2=l2, seed=seed)
    scores = {}
    for name, docs in eval_splits.items():
        Xe = infer_vectors(model, docs, steps=infer_steps).astype(np.float64)
        scores[name] = ([d.id for d in docs], clf.predict_proba(Xe))
    return clf, scores


def write_vectors_text(path, doc_ids, vectors) -> None:
    """id<TAB>v1 v2 ... vD with 6 significant digits."""
    with open(path, "w", encoding="utf-8") as f:
        for doc_id, vec in zip(doc_ids, vectors):
            f.write(doc_id + "\t" + " ".join("%.6g" % x for x in vec) + "\n")


VEC_MAGIC = b"SXVEC1\n"


def write_vectors_binary(path, vectors) -> None:
    import struct
    vectors = np.ascontiguousarray(vectors, dtype=np.float32)
    with open(path, "wb") as f:
        f.write(VEC_MAGIC)
        f.write(struct.pack("<II", vectors.shape[0], vectors.shape[1]))
        f.write(vectors.tobytes())


def read_vectors_binary(path) -> np.ndarray:
    import struct
    with open(path, "rb") as f:
        if f.read(len(VEC_MAGIC)) != VEC_MAGIC:
            raise ValueError(f"{path}: not a vector file (bad magic)")
        n, d = struct.unpack("<II", f.read(8))
        data = np.frombuffer(f.read(), dtype=np.float32)
    if len(data) != n * d:
        raise ValueError(f"{path}: size mismatch")
    return data.reshape(n, d).copy()
