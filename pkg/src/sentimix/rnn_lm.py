"""Elman recurrent language models trained with truncated backpropagation
through time, scored through the same Bayes-ratio classifier as the n-gram
models.

hidden_t = sigmoid(emb[x_t] + hidden_{t-1} @ rec); the output layer is a
full-vocabulary softmax.  Training is online SGD, one document at a time,
with global-norm gradient clipping.
"""

from __future__ import annotations

import logging
import math
import struct
import tempfile
from dataclasses import dataclass

import numpy as np

from .corpus import BOS_ID, EOS_ID, Vocabulary

log = logging.getLogger(__name__)

MAGIC = b"SXRNN1\n"


class RnnDivergenceError(Exception):
    pass


@dataclass
class RnnLm:
    emb: np.ndarray   # (V, H) input embeddings
    rec: np.ndarray   # (H, H) recurrent weights
    out: np.ndarray   # (H, V) output projection
    bias: np.ndarray  # (V,)
    vocab: Vocabulary | None = None

    @property
    def vocab_size(self) -> int:
        return self.emb.shape[0]

    @property
    def hidden_size(self) -> int:
        return self.emb.shape[1]

    def arrays(self):
        return self.emb, self.rec, self.out, self.bias

    def check_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())

    def doc_logprob_ids(self, ids) -> float:
        _, total = rnn_forward(self, ids)
        return total


def init_params(vocab_size: int, hidden: int, seed: int, scale: float = 0.1,
                dtype=np.float32, vocab: Vocabulary | None = None) -> RnnLm:
    rng = np.random.RandomState(seed)
    def u(*shape):
        return rng.uniform(-scale, scale, size=shape).astype(dtype)
    return RnnLm(emb=u(vocab_size, hidden), rec=u(hidden, hidden),
                 out=u(hidden, vocab_size), bias=np.zeros(vocab_size, dtype=dtype),
                 vocab=vocab)


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _states_and_logprobs(params: RnnLm, ids):
    ids = np.asarray(ids, dtype=np.int64)
    xs = np.concatenate([[BOS_ID], ids])
    ys = np.concatenate([ids, [EOS_ID]])
    T = len(xs)
    H = params.hidden_size
    dtype = params.emb.dtype
    states = np.empty((T, H), dtype=dtype)
    h = np.zeros(H, dtype=dtype)
    for t in range(T):
        h = _sigmoid(params.emb[xs[t]] + h @ params.rec)
        states[t] = h
    logits = states @ params.out + params.bias
    logits = logits.astype(np.float64)
    mx = logits.max(axis=1, keepdims=True)
    logz = mx[:, 0] + np.log(np.exp(logits - mx).sum(axis=1))
    logprobs = logits - logz[:, None]
    return xs, ys, states, logprobs


def rnn_forward(params: RnnLm, ids):
    """Per-position log predictive distributions and their realized sum (nats)."""
    _, ys, _, logprobs = _states_and_logprobs(params, ids)
    total = float(logprobs[np.arange(len(ys)), ys].sum())
    return logprobs, total


def rnn_gradients(params: RnnLm, ids, truncation: int | None = None):
    """Gradients of the negative log-likelihood, as an RnnLm of same shapes.

    ``truncation`` is the number of time steps (including the step of the
    output itself) each output's error is propagated through; None means
    full backpropagation through time.
    """
    grads, _ = _gradients_and_logprob(params, ids, truncation)
    return grads


def _gradients_and_logprob(params: RnnLm, ids, truncation: int | None = None):
    xs, ys, states, logprobs = _states_and_logprobs(params, ids)
    T = len(xs)
    if truncation is None:
        truncation = T
    if truncation < 1:
        raise ValueError("truncation must be >= 1")
    dtype = params.emb.dtype
    states64 = states.astype(np.float64)

    dlogits = np.exp(logprobs)
    dlogits[np.arange(T), ys] -= 1.0

    dout = states64.T @ dlogits
    dbias = dlogits.sum(axis=0)
    dh_direct = dlogits @ params.out.T.astype(np.float64)

    demb = np.zeros(params.emb.shape, dtype=np.float64)
    drec = np.zeros(params.rec.shape, dtype=np.float64)
    sigp = states64 * (1.0 - states64)
    for t in range(T):
        dh = dh_direct[t]
        for s in range(t, max(-1, t - truncation), -1):
            da = dh * sigp[s]
            demb[xs[s]] += da
            if s == 0:
                break
            drec += np.outer(states64[s - 1], da)
            dh = da @ params.rec.T.astype(np.float64)
    grads = RnnLm(emb=demb.astype(dtype), rec=drec.astype(dtype),
                  out=dout.astype(dtype), bias=dbias.astype(dtype))
    total_lp = float(logprobs[np.arange(T), ys].sum())
    return grads, total_lp


def clip_gradients(grads: RnnLm, max_norm: float) -> tuple[RnnLm, float]:
    """Global-norm clipping; direction preserved, returned norm is pre-clip."""
    sq = sum(float((a.astype(np.float64) ** 2).sum()) for a in grads.arrays())
    norm = math.sqrt(sq)
    if norm > max_norm and norm > 0:
        f = max_norm / norm
        for a in grads.arrays():
            a *= f
    return grads, norm


@dataclass
class RnnTrainConfig:
    hidden: int = 64
    epochs: int = 8
    lr0: float = 0.1
    truncation: int = 10
    clip: float = 5.0
    seed: int = 1
    halving_threshold: float = 0.001  # relative valid-ppl improvement below this halves lr
    init_scale: float = 0.1
    dtype: type = np.float32


def perplexity(total_logprob: float, n_predictions: int) -> float:
    try:
        return math.exp(-total_logprob / max(n_predictions, 1))
    except OverflowError:
        return math.inf


def corpus_logprob(params: RnnLm, encoded_docs) -> tuple[float, int]:
    total = 0.0
    n = 0
    for ids in encoded_docs:
        _, lp = rnn_forward(params, ids)
        total += lp
        n += len(ids) + 1
    return total, n


def train_rnn_lm(docs, vocab: Vocabulary, config: RnnTrainConfig,
                 valid_docs=None) -> tuple[RnnLm, list[dict]]:
    """Online SGD over documents, shuffled each epoch; single-worker and
    bit-deterministic for a fixed seed.

    The learning rate halves whenever validation perplexity fails to improve
    by ``halving_threshold`` relative (training perplexity when no validation
    documents are given).
    """
    encoded = [vocab.encode(d.tokens) for d in docs]
    if not encoded:
        raise ValueError("empty training corpus")
    valid_encoded = [vocab.encode(d.tokens) for d in valid_docs] if valid_docs else None
    params = init_params(len(vocab), config.hidden, config.seed,
                         scale=config.init_scale, dtype=config.dtype, vocab=vocab)
    rng = np.random.RandomState(config.seed)
    lr = config.lr0
    history: list[dict] = []
    best_ref_ppl = math.inf
    for epoch in range(1, config.epochs + 1):
        train_lp = 0.0
        train_n = 0
        for di in rng.permutation(len(encoded)):
            ids = encoded[di]
            grads, lp = _gradients_and_logprob(params, ids, truncation=config.truncation)
            grads, _ = clip_gradients(grads, config.clip)
            if not math.isfinite(lp) or perplexity(lp, len(ids) + 1) == math.inf:
                dump = tempfile.NamedTemporaryFile(prefix="rnn-diverged-", suffix=".npz",
                                                   delete=False)
                np.savez(dump, emb=params.emb, rec=params.rec, out=params.out,
                         bias=params.bias)
                raise RnnDivergenceError(
                    f"perplexity became non-finite at epoch {epoch}; "
                    f"state dumped to {dump.name}")
            train_lp += lp
            train_n += len(ids) + 1
            params.emb -= lr * grads.emb
            params.rec -= lr * grads.rec
            params.out -= lr * grads.out
            params.bias -= lr * grads.bias
        train_ppl = perplexity(train_lp, train_n)
        if valid_encoded is not None:
            v_lp, v_n = corpus_logprob(params, valid_encoded)
            ref_ppl = perplexity(v_lp, v_n)
        else:
            ref_ppl = train_ppl
        entry = {"epoch": epoch, "lr": lr, "train_ppl": train_ppl,
                 "valid_ppl": ref_ppl if valid_encoded is not None else None}
        history.append(entry)
        log.info("rnn epoch %d: train_ppl=%.3f valid_ppl=%s lr=%.5f",
                 epoch, train_ppl, entry["valid_ppl"], lr)
        if ref_ppl > best_ref_ppl * (1.0 - config.halving_threshold):
            lr *= 0.5
        best_ref_ppl = min(best_ref_ppl, ref_ppl)
    return params, history


def save_rnn(params: RnnLm, path) -> None:
    """Versioned flat binary: magic, dims, then row-major float32 arrays."""
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", params.vocab_size, params.hidden_size))
        for a in params.arrays():
            f.write(np.ascontiguousarray(a, dtype=np.float32).tobytes())


def load_rnn(path, vocab: Vocabulary | None = None) -> RnnLm:
    with open(path, "rb") as f:
        magic = f.read(len(MAGIC))
        if magic != MAGIC:
            raise ValueError(f"{path}: not an RNN model file (bad magic)")
        v, h = struct.unpack("<II", f.read(8))
        data = np.frombuffer(f.read(), dtype=np.float32)
    expected = v * h + h * h + h * v + v
    if len(data) != expected:
        raise ValueError(f"{path}: size mismatch for dims V={v} H={h}")
    ofs = 0
    def take(*shape):
        nonlocal ofs
        size = int(np.prod(shape))
        arr = data[ofs:ofs + size].reshape(shape).copy()
        ofs += size
        return arr
    if vocab is not None and len(vocab) != v:
        raise ValueError(f"{path}: vocabulary size {len(vocab)} != stored {v}")
    return RnnLm(emb=take(v, h), rec=take(h, h), out=take(h, v), bias=take(v),
                 vocab=vocab)
