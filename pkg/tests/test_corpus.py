import os

import pytest
from hypothesis import given, settings, strategies as st

from sentimix.corpus import (
    BOS, EOS, UNK, CorpusError, TokenizerConfig, build_vocab, file_digest,
    load_imdb, read_manifest, read_token_cache, split_validation, tokenize,
    write_manifest, write_token_cache,
)
from conftest import make_docs


class TestTokenize:
    def test_punctuation_split(self):
        assert tokenize("Class acting!") == ["class", "acting", "!"]

    def test_apostrophe_kept_inside_token(self):
        assert tokenize("it doesn't even come close") == \
            ["it", "doesn't", "even", "come", "close"]

    def test_empty(self):
        assert tokenize("") == []

    def test_br_tags_stripped(self):
        assert tokenize("good<br /><br>bad<BR/>") == ["good", "bad"]

    def test_drop_punctuation_config(self):
        cfg = TokenizerConfig(punctuation="drop")
        assert tokenize("Class acting!", cfg) == ["class", "acting"]

    def test_no_lowercase_config(self):
        cfg = TokenizerConfig(lowercase=False)
        assert tokenize("Class acting!", cfg) == ["Class", "acting", "!"]

    @given(st.text(max_size=200))
    @settings(max_examples=200, deadline=None)
    def test_idempotent(self, text):
        tokens = tokenize(text)
        assert tokenize(" ".join(tokens)) == tokens

    def test_config_hash_stable(self):
        assert TokenizerConfig().config_hash() == TokenizerConfig().config_hash()
        assert TokenizerConfig().config_hash() != \
            TokenizerConfig(lowercase=False).config_hash()


class TestLoadImdb:
    def test_single_file(self, tmp_path):
        for leaf in ("train/pos", "train/neg", "test/pos", "test/neg"):
            (tmp_path / leaf).mkdir(parents=True)
        (tmp_path / "train/pos/0_10.txt").write_text("good")
        ds = load_imdb(tmp_path)
        assert len(ds) == 1
        doc = ds.documents[0]
        assert doc.id == "train/pos/0_10"
        assert doc.label == "positive"
        assert doc.tokens == ("good",)
        assert len(ds.warnings) == 3  # three empty leaves, recorded not fatal

    def test_missing_subdirectory(self, tmp_path):
        (tmp_path / "train/pos").mkdir(parents=True)
        with pytest.raises(CorpusError, match="train/neg"):
            load_imdb(tmp_path)

    def test_counts_match_disk(self, imdb_tree):
        ds = load_imdb(imdb_tree)
        # independent recount straight from the filesystem
        expected = sum(len(os.listdir(imdb_tree / s / l))
                       for s in ("train", "test") for l in ("pos", "neg"))
        assert len(ds) == expected
        train = ds.subset(split="train")
        test = ds.subset(split="test")
        assert len(train) == len(test) == expected // 2
        assert sum(d.label == "positive" for d in train) == len(train) // 2

    def test_subset_cap(self, imdb_tree):
        ds = load_imdb(imdb_tree, subset=5)
        assert len(ds) == 20
        assert sum(d.label == "positive" for d in ds.subset(split="train")) == 5

    def test_deterministic_order(self, imdb_tree):
        a = [d.id for d in load_imdb(imdb_tree).documents]
        b = [d.id for d in load_imdb(imdb_tree).documents]
        assert a == b
        per_leaf = [d.id for d in load_imdb(imdb_tree).documents
                    if d.id.startswith("train/pos/")]
        assert per_leaf == sorted(per_leaf)

    def test_workers_equivalent(self, imdb_tree):
        serial = load_imdb(imdb_tree, subset=6)
        parallel = load_imdb(imdb_tree, subset=6, workers=2)
        assert [d.id for d in serial.documents] == [d.id for d in parallel.documents]
        assert [d.tokens for d in serial.documents] == \
            [d.tokens for d in parallel.documents]


class TestVocabulary:
    def test_min_count_threshold(self):
        docs = make_docs([["a", "a", "b"]])
        v2 = build_vocab(docs, min_count=2)
        assert set(v2.tokens) == {BOS, EOS, UNK, "a"}
        v1 = build_vocab(docs, min_count=1)
        assert set(v1.tokens) == {BOS, EOS, UNK, "a", "b"}
        assert v1.frequency("a") == 2 and v1.frequency("b") == 1

    def test_reserved_markers_once(self):
        v = build_vocab(make_docs([["a"]]), min_count=1)
        assert [v.tokens.count(m) for m in (BOS, EOS, UNK)] == [1, 1, 1]

    def test_bijection(self):
        v = build_vocab(make_docs([["b", "a", "c", "a"]]), min_count=1)
        for i, t in enumerate(v.tokens):
            assert v.index(t) == i
        assert len(set(v.tokens)) == len(v)

    def test_unknown_maps_to_unk(self):
        v = build_vocab(make_docs([["a"]]), min_count=1)
        assert v.index("zzz") == v.index(UNK)
        assert list(v.encode(["a", "zzz"])) == [v.index("a"), v.index(UNK)]

    def test_max_size_keeps_most_frequent(self):
        docs = make_docs([["a"] * 5 + ["b"] * 3 + ["c"]])
        v = build_vocab(docs, min_count=1, max_size=2)
        assert set(v.tokens) == {BOS, EOS, UNK, "a", "b"}

    def test_empty_error(self):
        with pytest.raises(CorpusError):
            build_vocab([], min_count=1)

    def test_min_count_validation(self):
        with pytest.raises(ValueError):
            build_vocab(make_docs([["a"]]), min_count=0)


class TestSplitValidation:
    def _docs(self, n_pos, n_neg):
        return make_docs([["w"]] * (n_pos + n_neg),
                         labels=["positive"] * n_pos + ["negative"] * n_neg)

    def test_fractions_and_stratification(self):
        docs = self._docs(50, 50)
        train, valid = split_validation(docs, 0.2, seed=42)
        assert len(train) == 80 and len(valid) == 20
        assert sum(d.label == "positive" for d in valid) == 10
        assert {d.split for d in valid} == {"valid"}

    def test_deterministic(self):
        docs = self._docs(30, 30)
        a = split_validation(docs, 0.25, seed=7)
        b = split_validation(docs, 0.25, seed=7)
        assert [d.id for d in a[1]] == [d.id for d in b[1]]
        c = split_validation(docs, 0.25, seed=8)
        assert [d.id for d in a[1]] != [d.id for d in c[1]]

    def test_disjoint_union(self):
        docs = self._docs(20, 20)
        train, valid = split_validation(docs, 0.3, seed=1)
        train_ids = {d.id for d in train}
        valid_ids = {d.id for d in valid}
        assert not train_ids & valid_ids
        assert train_ids | valid_ids == {d.id for d in docs}

    def test_floor_rounding_single_class(self):
        docs = make_docs([["w"]] * 3)
        train, valid = split_validation(docs, 0.5, seed=0)
        assert (len(train), len(valid)) == (2, 1)

    @pytest.mark.parametrize("fraction", [0.0, 1.0, -0.1, 1.5])
    def test_fraction_validation(self, fraction):
        with pytest.raises(ValueError):
            split_validation(self._docs(2, 2), fraction, seed=0)

    def test_stratification_bound(self):
        docs = self._docs(33, 17)
        train, valid = split_validation(docs, 0.2, seed=3)
        pos_in = 33 / 50
        pos_valid = sum(d.label == "positive" for d in valid) / len(valid)
        assert abs(pos_valid - pos_in) <= 1.0 / len(valid) + 1e-9


class TestArtifacts:
    def test_token_cache_roundtrip(self, tmp_path):
        docs = make_docs([["good", "movie", "!"], []],
                         labels=["positive", "negative"])
        path = tmp_path / "cache.tsv"
        write_token_cache(docs, path)
        back = read_token_cache(path, "train")
        assert [d.id for d in back] == [d.id for d in docs]
        assert [d.tokens for d in back] == [d.tokens for d in docs]
        assert [d.label for d in back] == [d.label for d in docs]

    def test_manifest_roundtrip(self, tmp_path):
        path = tmp_path / "manifest.txt"
        write_manifest(path, {"seed": 42, "fraction": 0.2})
        write_manifest(path, {"stage2.x": "y"})
        data = read_manifest(path)
        assert data["seed"] == "42" and data["stage2.x"] == "y"

    def test_file_digest_stable(self, tmp_path):
        p = tmp_path / "f"
        p.write_text("abc")
        assert file_digest(p) == file_digest(p)
