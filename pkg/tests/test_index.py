import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from figsearch.errors import FormatError, ParameterError, StructuralError
from figsearch.index import (EmbeddingIndex, EmbeddingRecord, cosine_similarity,
                             embed, export_text, load_index, multi_query,
                             save_index, topk)
from figsearch.network import init_params


def brute_force_ranking(records, query, k, exclude=()):
    """Independent O(n*d) oracle in plain python; shares no engine code."""
    scored = []
    for rec_id, vec in records:
        dot = 0.0
        na = 0.0
        nb = 0.0
        for a, b in zip(vec, query):
            dot += float(a) * float(b)
            na += float(a) * float(a)
            nb += float(b) * float(b)
        sim = 0.0 if na == 0.0 or nb == 0.0 else dot / math.sqrt(na) / math.sqrt(nb)
        if rec_id not in exclude:
            scored.append((rec_id, sim))
    scored.sort(key=lambda t: (-t[1], t[0]))
    return scored[:k]


def _index_from(vectors, prefix="r"):
    return EmbeddingIndex([
        EmbeddingRecord(id=f"{prefix}{i:04d}", vector=v)
        for i, v in enumerate(vectors)])


class TestCosine:
    def test_self_similarity_is_one(self):
        u = np.array([0.3, -0.2, 1.7])
        assert cosine_similarity(u, u) == pytest.approx(1.0, abs=1e-12)

    def test_orthogonal_is_zero(self):
        assert cosine_similarity([1.0, 0.0], [0.0, 1.0]) == 0.0

    def test_forty_five_degrees(self):
        assert cosine_similarity([1.0, 0.0], [1.0, 1.0]) == pytest.approx(
            0.7071067811865475, abs=1e-12)

    def test_symmetry_and_scale_invariance(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            u = rng.normal(size=6)
            v = rng.normal(size=6)
            assert abs(cosine_similarity(u, v) - cosine_similarity(v, u)) <= 1e-12
            assert cosine_similarity(3.7 * u, v) == pytest.approx(
                cosine_similarity(u, v), abs=1e-12)

    def test_zero_vector_warns_and_returns_zero(self):
        with pytest.warns(RuntimeWarning):
            assert cosine_similarity([0.0, 0.0], [1.0, 2.0]) == 0.0

    def test_dimension_mismatch(self):
        with pytest.raises(StructuralError):
            cosine_similarity([1.0], [1.0, 2.0])

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_bounds_property(self, seed):
        rng = np.random.default_rng(seed)
        u = rng.normal(size=8)
        v = rng.normal(size=8)
        s = cosine_similarity(u, v)
        assert -1.0 - 1e-9 <= s <= 1.0 + 1e-9


class TestTopK:
    def test_matches_brute_force_with_exclusion(self):
        rng = np.random.default_rng(1)
        vectors = rng.normal(size=(50, 16)).astype(np.float32)
        idx = _index_from(vectors)
        query = idx.get("r0007").vector
        got = topk(idx, query, 1, exclude_ids=["r0007"])
        want = brute_force_ranking(
            [(r.id, r.vector.tolist()) for r in idx.records],
            query.tolist(), 1, exclude={"r0007"})
        assert [g[0] for g in got] == [w[0] for w in want]

    def test_self_match_first_without_exclusion(self):
        rng = np.random.default_rng(2)
        idx = _index_from(rng.normal(size=(20, 8)).astype(np.float32))
        query = idx.get("r0004").vector
        results = topk(idx, query, 3)
        assert results[0][0] == "r0004"
        assert results[0][1] == pytest.approx(1.0, abs=1e-9)

    def test_k_saturates_to_index_size(self):
        rng = np.random.default_rng(3)
        idx = _index_from(rng.normal(size=(5, 4)).astype(np.float32))
        assert len(topk(idx, rng.normal(size=4), 100)) == 5

    def test_ties_break_by_ascending_id(self):
        v = np.array([1.0, 0.0], dtype=np.float32)
        idx = EmbeddingIndex([
            EmbeddingRecord(id="zz", vector=v),
            EmbeddingRecord(id="aa", vector=v.copy()),
            EmbeddingRecord(id="mm", vector=v.copy()),
        ])
        results = topk(idx, np.array([2.0, 0.0]), 3)
        assert [r[0] for r in results] == ["aa", "mm", "zz"]

    def test_empty_index(self):
        assert topk(EmbeddingIndex([]), np.array([]), 3) == []

    def test_k_validation(self):
        idx = _index_from(np.eye(3, dtype=np.float32))
        with pytest.raises(ParameterError):
            topk(idx, np.ones(3), 0)

    def test_rescaled_query_same_ranking(self):
        rng = np.random.default_rng(4)
        idx = _index_from(rng.normal(size=(30, 12)).astype(np.float32))
        q = rng.normal(size=12)
        a = [r[0] for r in topk(idx, q, 10)]
        b = [r[0] for r in topk(idx, 1e3 * q, 10)]
        assert a == b


class TestMultiQuery:
    def test_single_query_reduces_to_topk(self):
        rng = np.random.default_rng(5)
        idx = _index_from(rng.normal(size=(25, 6)).astype(np.float32))
        q = rng.normal(size=6)
        assert multi_query(idx, [q], 7) == topk(idx, q, 7)

    def test_duplicate_queries_idempotent(self):
        rng = np.random.default_rng(6)
        idx = _index_from(rng.normal(size=(25, 6)).astype(np.float32))
        q = rng.normal(size=6)
        assert multi_query(idx, [q, q.copy()], 5) == multi_query(idx, [q], 5)

    def test_orthogonal_queries_match_max_oracle(self):
        vecs = np.array([[1, 0, 0, 0], [0, 1, 0, 0],
                         [0.9, 0.1, 0, 0], [0.1, 0.9, 0, 0]], dtype=np.float32)
        idx = _index_from(vecs)
        q1 = np.array([1.0, 0.0, 0.0, 0.0])
        q2 = np.array([0.0, 1.0, 0.0, 0.0])
        got = multi_query(idx, [q1, q2], 4)
        per_query = [
            brute_force_ranking([(r.id, r.vector.tolist()) for r in idx.records],
                                q.tolist(), 4) for q in (q1, q2)]
        best = {}
        for ranking in per_query:
            for rec_id, sim in ranking:
                best[rec_id] = max(best.get(rec_id, -2.0), sim)
        want = sorted(best.items(), key=lambda t: (-t[1], t[0]))
        assert [g[0] for g in got] == [w[0] for w in want]

    def test_needs_a_query(self):
        idx = _index_from(np.eye(2, dtype=np.float32))
        with pytest.raises(ParameterError):
            multi_query(idx, [], 3)


class TestIndexPersistence:
    def _sample_index(self, n=40, d=16, seed=7):
        rng = np.random.default_rng(seed)
        records = [EmbeddingRecord(
            id=f"fig-{i:03d}", vector=rng.normal(size=d).astype(np.float32),
            class_label=int(rng.integers(0, 8)), type_label=int(rng.integers(0, 4)),
            tags=(("robotics", "test") if i % 3 == 0 else ("milling",)))
            for i in range(n)]
        return EmbeddingIndex(records, snapshot_version=3)

    def test_save_load_save_byte_identical(self, tmp_path):
        idx = self._sample_index()
        p1, p2 = tmp_path / "a.idx", tmp_path / "b.idx"
        save_index(idx, p1)
        save_index(load_index(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_roundtrip_preserves_everything(self, tmp_path):
        idx = self._sample_index()
        save_index(idx, tmp_path / "x.idx")
        back = load_index(tmp_path / "x.idx")
        assert back.snapshot_version == 3
        assert back.ids == idx.ids
        for rec_id in idx.ids:
            a, b = idx.get(rec_id), back.get(rec_id)
            assert np.array_equal(a.vector, b.vector)
            assert (a.class_label, a.type_label, a.tags) == \
                (b.class_label, b.type_label, b.tags)

    def test_roundtrip_preserves_topk(self, tmp_path):
        idx = self._sample_index(n=200, d=32)
        save_index(idx, tmp_path / "big.idx")
        back = load_index(tmp_path / "big.idx")
        rng = np.random.default_rng(8)
        for _ in range(10):
            q = rng.normal(size=32)
            assert topk(idx, q, 10) == topk(back, q, 10)

    def test_wrong_magic(self, tmp_path):
        path = tmp_path / "bad.idx"
        path.write_bytes(b"WRONG!!\n" + b"\x00" * 64)
        with pytest.raises(FormatError):
            load_index(path)

    def test_truncated(self, tmp_path):
        idx = self._sample_index()
        path = tmp_path / "t.idx"
        save_index(idx, path)
        blob = path.read_bytes()
        path.write_bytes(blob[:-10])
        with pytest.raises(FormatError):
            load_index(path)

    def test_duplicate_ids_rejected(self):
        v = np.ones(3, dtype=np.float32)
        with pytest.raises(ParameterError):
            EmbeddingIndex([EmbeddingRecord("a", v), EmbeddingRecord("a", v)])

    def test_text_export(self, tmp_path):
        idx = self._sample_index(n=5, d=3)
        export_text(idx, tmp_path / "dump.tsv")
        lines = (tmp_path / "dump.tsv").read_text().splitlines()
        assert len(lines) == 5
        first = lines[0].split("\t")
        assert first[0] == "fig-000"
        assert len(first[4].split()) == 3


class TestEmbed:
    def test_embed_deterministic_and_sized(self, tiny_cfg):
        params = init_params(tiny_cfg, seed=3)
        image = np.random.default_rng(0).random((8, 8)).astype(np.float32)
        a = embed(params, tiny_cfg, image)
        b = embed(params, tiny_cfg, image)
        assert np.array_equal(a, b)
        assert a.shape == (16,)  # concat: 2 * D

    def test_embed_upper_branch_width(self, tiny_cfg):
        from dataclasses import replace
        cfg = replace(tiny_cfg, embed_source="upper_branch")
        params = init_params(cfg, seed=3)
        image = np.random.default_rng(1).random((8, 8)).astype(np.float32)
        assert embed(params, cfg, image).shape == (8,)

    def test_embed_shape_mismatch(self, tiny_cfg):
        params = init_params(tiny_cfg, seed=3)
        with pytest.raises(StructuralError):
            embed(params, tiny_cfg, np.zeros((9, 8), dtype=np.float32))
