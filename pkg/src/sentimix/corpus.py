"""IMDB corpus ingestion: tokenization, vocabularies, deterministic splits.

The directory layout expected by :func:`load_imdb` is the standard one:
``root/{train,test}/{pos,neg}/*.txt``.  Documents are immutable once built
and safe to share across workers.
"""

from __future__ import annotations

import hashlib
import logging
import re
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

BOS = "<s>"
EOS = "</s>"
UNK = "<unk>"
RESERVED = (BOS, EOS, UNK)
BOS_ID, EOS_ID, UNK_ID = 0, 1, 2

POSITIVE = "positive"
NEGATIVE = "negative"
UNLABELED = "unlabeled"

_BR_RE = re.compile(r"<br\s*/?>", re.IGNORECASE)
# words keep internal apostrophes ("doesn't"); every other non-space symbol
# becomes its own token
_TOKEN_RE = re.compile(r"\w+(?:'\w+)*|[^\w\s]")


class CorpusError(Exception):
    """Structural problem with the input corpus."""


@dataclass(frozen=True)
class TokenizerConfig:
    lowercase: bool = True
    punctuation: str = "split"  # "split" keeps punctuation as tokens, "drop" removes it

    def config_hash(self) -> str:
        key = f"lowercase={self.lowercase};punctuation={self.punctuation}"
        return hashlib.sha256(key.encode()).hexdigest()[:16]


DEFAULT_TOKENIZER = TokenizerConfig()


def tokenize(raw_text: str, config: TokenizerConfig = DEFAULT_TOKENIZER) -> list[str]:
    """Deterministic tokenization: strip <br> tags, lowercase, split punctuation."""
    text = _BR_RE.sub(" ", raw_text)
    if config.lowercase:
        text = text.lower()
    tokens = _TOKEN_RE.findall(text)
    if config.punctuation == "drop":
        tokens = [t for t in tokens if t[0].isalnum() or t[0] == "_"]
    return tokens


@dataclass(frozen=True)
class Document:
    id: str
    raw_text: str
    tokens: tuple[str, ...]
    label: str  # positive / negative / unlabeled
    split: str  # train / valid / test

    def excerpt(self, limit: int = 200) -> str:
        text = " ".join(self.tokens)
        return text[:limit]


class Vocabulary:
    """Token <-> index bijection with reserved markers at fixed indices."""

    def __init__(self, tokens: list[str], counts: list[int], min_count: int = 1):
        self.tokens = list(RESERVED) + list(tokens)
        self.counts = [0, 0, 0] + [int(c) for c in counts]
        self.min_count = min_count
        self._index = {t: i for i, t in enumerate(self.tokens)}
        if len(self._index) != len(self.tokens):
            raise CorpusError("duplicate tokens in vocabulary")

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def index(self, token: str) -> int:
        return self._index.get(token, UNK_ID)

    def frequency(self, token: str) -> int:
        i = self._index.get(token)
        return 0 if i is None else self.counts[i]

    def encode(self, tokens) -> np.ndarray:
        get = self._index.get
        return np.fromiter((get(t, UNK_ID) for t in tokens), dtype=np.uint32, count=len(tokens))

    @property
    def n_predictable(self) -> int:
        # every token may be predicted except the start marker
        return len(self.tokens) - 1


@dataclass
class DocumentSet:
    documents: list[Document]
    vocabulary: Vocabulary | None = None
    split_seed: int | None = None
    warnings: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.documents)

    def subset(self, split: str | None = None, label: str | None = None) -> list[Document]:
        docs = self.documents
        if split is not None:
            docs = [d for d in docs if d.split == split]
        if label is not None:
            docs = [d for d in docs if d.label == label]
        return docs


def _read_and_tokenize(args):
    path_str, rel, label, split, config = args
    p = Path(path_str)
    try:
        raw = p.read_text(encoding="utf-8", errors="replace")
    except OSError as e:
        raise CorpusError(f"unreadable corpus file: {p}: {e}") from e
    return Document(id=f"{rel}/{p.stem}", raw_text=raw,
                    tokens=tuple(tokenize(raw, config)), label=label, split=split)


def _load_leaf(root: Path, rel: str, label: str, split: str, config: TokenizerConfig,
               subset: int | None, warnings: list[str], pool=None) -> list[Document]:
    leaf = root / rel
    if not leaf.is_dir():
        raise CorpusError(f"missing corpus subdirectory: {rel}")
    paths = sorted(leaf.glob("*.txt"))
    if not paths:
        msg = f"empty corpus directory: {rel}"
        warnings.append(msg)
        log.warning(msg)
    if subset is not None:
        paths = paths[:subset]
    jobs = [(str(p), rel, label, split, config) for p in paths]
    mapper = pool.map if pool is not None else map
    return list(mapper(_read_and_tokenize, jobs))


def load_imdb(root_dir, config: TokenizerConfig = DEFAULT_TOKENIZER,
              subset: int | None = None, workers: int = 1) -> DocumentSet:
    """Load the IMDB layout, deterministically ordered (lexicographic by path).

    ``subset`` caps the number of files taken per leaf directory, for
    desk-scale runs.  Tokenization parallelizes per file when workers > 1;
    the result is identical either way.
    """
    root = Path(root_dir)
    if not root.is_dir():
        raise CorpusError(f"missing corpus root: {root}")
    warnings: list[str] = []
    docs: list[Document] = []
    pool = None
    if workers > 1:
        from multiprocessing import Pool
        pool = Pool(workers)
    try:
        for split in ("train", "test"):
            for leaf, label in (("pos", POSITIVE), ("neg", NEGATIVE)):
                docs.extend(_load_leaf(root, f"{split}/{leaf}", label, split, config,
                                       subset, warnings, pool=pool))
    finally:
        if pool is not None:
            pool.close()
            pool.join()
    ids = [d.id for d in docs]
    if len(set(ids)) != len(ids):
        raise CorpusError("duplicate document ids in corpus")
    return DocumentSet(documents=docs, warnings=warnings)


def load_unsup(root_dir, config: TokenizerConfig = DEFAULT_TOKENIZER,
               subset: int | None = None) -> list[Document]:
    """Load the unlabeled train/unsup reviews (optional, for paragraph vectors)."""
    warnings: list[str] = []
    return _load_leaf(Path(root_dir), "train/unsup", UNLABELED, "train", config,
                      subset, warnings)


def build_vocab(docs, min_count: int = 1, max_size: int | None = None) -> Vocabulary:
    """Vocabulary over every token with frequency >= min_count, plus reserved markers.

    ``max_size`` keeps only the most frequent tokens (ties broken
    alphabetically), as used by the RNN-LM's 10k cap.
    """
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    documents = docs.documents if isinstance(docs, DocumentSet) else list(docs)
    if not documents:
        raise CorpusError("cannot build a vocabulary from an empty document set")
    freq = Counter()
    for d in documents:
        freq.update(d.tokens)
    for marker in RESERVED:
        freq.pop(marker, None)
    items = [(t, c) for t, c in freq.items() if c >= min_count]
    items.sort(key=lambda tc: (-tc[1], tc[0]))
    if max_size is not None:
        items = items[:max_size]
    return Vocabulary([t for t, _ in items], [c for _, c in items], min_count=min_count)


def split_validation(train_docs, fraction: float, seed: int):
    """Stratified train/valid split; valid size is floor(fraction * n) per label.

    Deterministic given the seed; returns (train_sub, valid) lists of
    documents re-tagged with their new split.
    """
    if not (0.0 < fraction < 1.0):
        raise ValueError(f"validation fraction must be in (0, 1), got {fraction}")
    documents = train_docs.documents if isinstance(train_docs, DocumentSet) else list(train_docs)
    rng = np.random.RandomState(seed)
    train_sub: list[Document] = []
    valid: list[Document] = []
    for label in sorted({d.label for d in documents}):
        group = sorted((d for d in documents if d.label == label), key=lambda d: d.id)
        order = rng.permutation(len(group))
        n_valid = int(len(group) * fraction)
        chosen = set(order[:n_valid].tolist())
        for i, doc in enumerate(group):
            if i in chosen:
                valid.append(replace(doc, split="valid"))
            else:
                train_sub.append(replace(doc, split="train"))
    train_sub.sort(key=lambda d: d.id)
    valid.sort(key=lambda d: d.id)
    return train_sub, valid


def write_token_cache(docs, path) -> None:
    """One document per line: id<TAB>label<TAB>space-separated tokens."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for d in (docs.documents if isinstance(docs, DocumentSet) else docs):
            f.write(f"{d.id}\t{d.label}\t{' '.join(d.tokens)}\n")


def read_token_cache(path, split: str) -> list[Document]:
    docs = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.rstrip("\n")
            if not line:
                continue
            doc_id, label, text = line.split("\t", 2)
            tokens = tuple(text.split()) if text else ()
            docs.append(Document(id=doc_id, raw_text=text, tokens=tokens,
                                 label=label, split=split))
    return docs


def write_manifest(path, entries: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "a", encoding="utf-8") as f:
        for k in entries:
            f.write(f"{k}={entries[k]}\n")


def read_manifest(path) -> dict:
    out = {}
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line and "=" in line:
                k, v = line.split("=", 1)
                out[k] = v
    return out


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
