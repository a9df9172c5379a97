import sys
from pathlib import Path

import pytest
from hypothesis import settings

sys.path.insert(0, str(Path(__file__).parent))  # oracles / synth helpers

from sentimix.corpus import Document
from synth import build_imdb_tree

# reproducible CI: property tests replay the same example corpus every run
settings.register_profile("ci", derandomize=True)
settings.load_profile("ci")


def make_docs(token_lists, labels=None, split="train"):
    labels = labels or ["positive"] * len(token_lists)
    return [Document(id=f"doc{i:03d}", raw_text=" ".join(toks), tokens=tuple(toks),
                     label=lab, split=split)
            for i, (toks, lab) in enumerate(zip(token_lists, labels))]


@pytest.fixture(scope="session")
def imdb_tree(tmp_path_factory):
    """Synthetic IMDB directory layout, 40 files per leaf."""
    root = tmp_path_factory.mktemp("imdb") / "aclImdb"
    return build_imdb_tree(root, n_per_leaf=40, seed=11)
