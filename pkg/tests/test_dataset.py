import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from figsearch.dataset import (CorpusSpec, SplitRatios, augment,
                               balance_and_split, generate_synthetic_corpus,
                               load_corpus, read_pgm, render_example,
                               resize_area, save_corpus, segment_page,
                               write_pgm)
from figsearch.errors import FormatError, ParameterError


class TestGenerate:
    def test_count_and_balance(self):
        spec = CorpusSpec(t_types=4, k_classes=8, per_cell=10, seed=7)
        corpus = generate_synthetic_corpus(spec)
        assert len(corpus) == 320
        cells = {}
        for ex in corpus:
            cells[(ex.type_label, ex.class_label)] = \
                cells.get((ex.type_label, ex.class_label), 0) + 1
        assert all(v == 10 for v in cells.values())
        assert len(cells) == 32

    def test_deterministic(self):
        spec = CorpusSpec(t_types=2, k_classes=3, per_cell=3, image_size=32, seed=11)
        a = generate_synthetic_corpus(spec)
        b = generate_synthetic_corpus(spec)
        assert [ex.id for ex in a] == [ex.id for ex in b]
        for x, y in zip(a, b):
            assert np.array_equal(x.image, y.image)

    def test_image_invariants(self, small_corpus):
        for ex in small_corpus["corpus"]:
            assert ex.image.shape == (16, 16)
            assert ex.image.min() >= 0.0 and ex.image.max() <= 1.0
            assert 0 <= ex.type_label < 2
            assert 0 <= ex.class_label < 3
        ids = [ex.id for ex in small_corpus["corpus"]]
        assert len(set(ids)) == len(ids)

    def test_invalid_spec(self):
        with pytest.raises(ParameterError):
            generate_synthetic_corpus(CorpusSpec(t_types=1))
        with pytest.raises(ParameterError):
            generate_synthetic_corpus(CorpusSpec(per_cell=0))
        with pytest.raises(ParameterError):
            generate_synthetic_corpus(CorpusSpec(image_size=8))

    def test_class_learnable_by_nearest_centroid(self):
        # raw-pixel nearest centroid must beat 1/K chance on a held-out split
        spec = CorpusSpec(t_types=4, k_classes=8, per_cell=50, seed=7)
        corpus = generate_synthetic_corpus(spec)
        x = np.stack([ex.image.ravel() for ex in corpus])
        y = np.array([ex.class_label for ex in corpus])
        perm = np.random.default_rng(0).permutation(len(x))
        cut = int(0.8 * len(x))
        tr, te = perm[:cut], perm[cut:]
        centroids = np.stack([x[tr][y[tr] == c].mean(axis=0) for c in range(8)])
        d2 = ((x[te][:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        acc = (d2.argmin(axis=1) == y[te]).mean()
        assert acc > 1.0 / 8.0


class TestAugment:
    def test_zero_params_is_identity(self, small_corpus):
        ex = small_corpus["corpus"][0]
        out = augment(ex, rotation_max_deg=0.0, deform_amp=0.0, seed=9)
        assert np.array_equal(out.image, ex.image)

    def test_labels_preserved(self, small_corpus):
        for ex in small_corpus["corpus"][:6]:
            out = augment(ex, rotation_max_deg=30.0, deform_amp=1.5, seed=2)
            assert out.type_label == ex.type_label
            assert out.class_label == ex.class_label
            assert out.id == ex.id

    def test_strong_augment_changes_pixels(self):
        ex = render_example(CorpusSpec(seed=4), 0, 2, 0)  # non-symmetric strokes
        out = augment(ex, rotation_max_deg=180.0, deform_amp=2.0, seed=1)
        assert not np.array_equal(out.image, ex.image)

    def test_shape_and_range(self, small_corpus):
        ex = small_corpus["corpus"][1]
        out = augment(ex, rotation_max_deg=90.0, deform_amp=3.0, seed=5)
        assert out.image.shape == ex.image.shape
        assert out.image.min() >= 0.0 and out.image.max() <= 1.0

    def test_deterministic_in_seed(self, small_corpus):
        ex = small_corpus["corpus"][2]
        a = augment(ex, 45.0, 1.0, seed=7)
        b = augment(ex, 45.0, 1.0, seed=7)
        assert np.array_equal(a.image, b.image)

    def test_param_validation(self, small_corpus):
        ex = small_corpus["corpus"][0]
        with pytest.raises(ParameterError):
            augment(ex, rotation_max_deg=181.0, deform_amp=0.0, seed=0)
        with pytest.raises(ParameterError):
            augment(ex, rotation_max_deg=0.0, deform_amp=-1.0, seed=0)


class TestBalanceAndSplit:
    def test_default_shape(self):
        spec = CorpusSpec(t_types=4, k_classes=8, per_cell=10, seed=7)
        corpus = generate_synthetic_corpus(spec)
        train, val, test = balance_and_split(corpus, SplitRatios(),
                                             target_per_class=40, seed=7)
        assert (len(train), len(val), len(test)) == (240, 40, 40)

    def test_zero_weight_rejected(self, small_corpus):
        with pytest.raises(ParameterError):
            balance_and_split(small_corpus["corpus"],
                              SplitRatios(train=1.0, val=0.0, test=1.0),
                              target_per_class=16, seed=0)

    def test_unbalanced_input_equalized(self, small_corpus):
        corpus = list(small_corpus["corpus"])
        extra = [augment(ex, 10.0, 1.0, seed=[50, i]) for i, ex in
                 enumerate(e for e in corpus if e.class_label == 0)]
        extra = [type(ex)(image=ex.image, type_label=ex.type_label,
                          class_label=ex.class_label, id=ex.id + "-x")
                 for ex in extra]
        train, val, test = balance_and_split(corpus + extra, SplitRatios(),
                                             target_per_class=30, seed=1)
        per_class = {}
        for ex in train + val + test:
            per_class[ex.class_label] = per_class.get(ex.class_label, 0) + 1
        assert set(per_class.values()) == {30}

    def test_ids_cover_once(self, small_corpus):
        train, val, test = balance_and_split(small_corpus["corpus"],
                                             SplitRatios(), 20, seed=5)
        ids = [ex.id for ex in train + val + test]
        assert len(ids) == len(set(ids)) == 60

    def test_rerun_identical(self, small_corpus):
        a = balance_and_split(small_corpus["corpus"], SplitRatios(), 20, seed=5)
        b = balance_and_split(small_corpus["corpus"], SplitRatios(), 20, seed=5)
        for sa, sb in zip(a, b):
            assert [e.id for e in sa] == [e.id for e in sb]
            for ea, eb in zip(sa, sb):
                assert np.array_equal(ea.image, eb.image)

    def test_target_below_existing_rejected(self, small_corpus):
        with pytest.raises(ParameterError):
            balance_and_split(small_corpus["corpus"], SplitRatios(), 5, seed=0)

    def test_proportions_within_one(self, small_corpus):
        train, val, test = balance_and_split(
            small_corpus["corpus"], SplitRatios(3.0, 1.0, 1.0), 17, seed=2)
        for c in range(3):
            counts = [sum(1 for e in s if e.class_label == c)
                      for s in (train, val, test)]
            shares = [17 * w / 5.0 for w in (3.0, 1.0, 1.0)]
            assert all(abs(n - s) <= 1.0 for n, s in zip(counts, shares))


class TestSegmentPage:
    def test_blank_page(self):
        assert segment_page(np.zeros((32, 32), dtype=np.float32), 1, 0) == []

    def test_single_square(self):
        page = np.zeros((40, 40), dtype=np.float32)
        page[10:20, 15:25] = 1.0
        crops = segment_page(page, min_area=4, pad=0)
        assert len(crops) == 1
        assert crops[0].shape == (10, 10)
        assert np.array_equal(crops[0], page[10:20, 15:25])

    def test_three_disjoint_figures_roundtrip(self):
        # three connected figures: filled disk, frame, filled triangle
        def disk():
            fig = np.zeros((20, 20), dtype=np.float32)
            yy, xx = np.mgrid[0:20, 0:20]
            fig[(yy - 10) ** 2 + (xx - 10) ** 2 <= 49] = 1.0
            return fig

        def frame():
            fig = np.zeros((16, 22), dtype=np.float32)
            fig[1:-1, 1:-1] = 1.0
            fig[4:-4, 4:-4] = 0.0
            return fig

        def tri():
            fig = np.zeros((18, 18), dtype=np.float32)
            for r in range(2, 16):
                fig[r, 2 : 2 + r] = 1.0
            return fig

        figs = [disk(), frame(), tri()]
        page = np.zeros((90, 40), dtype=np.float32)
        offsets = [(3, 5), (32, 8), (60, 10)]
        for fig, (r, c) in zip(figs, offsets):
            page[r : r + fig.shape[0], c : c + fig.shape[1]] = fig
        crops = segment_page(page, min_area=10, pad=2)
        assert len(crops) == 3
        for fig, crop in zip(figs, crops):
            ys, xs = np.nonzero(crop > 0.5)
            fy, fx = np.nonzero(fig > 0.5)
            assert ys.max() - ys.min() == fy.max() - fy.min()
            assert xs.max() - xs.min() == fx.max() - fx.min()
            assert crop.sum() == pytest.approx(fig.sum())

    def test_ordering_top_then_left(self):
        page = np.zeros((30, 30), dtype=np.float32)
        page[20:24, 2:6] = 1.0    # lower left
        page[2:6, 20:24] = 1.0    # upper right
        page[2:6, 2:6] = 1.0      # upper left
        crops = segment_page(page, min_area=2, pad=0)
        assert len(crops) == 3

    def test_min_area_filters(self):
        page = np.zeros((20, 20), dtype=np.float32)
        page[2:4, 2:4] = 1.0      # area 4
        page[10:16, 10:16] = 1.0  # area 36
        assert len(segment_page(page, min_area=5, pad=0)) == 1

    def test_recomposition_count_stable(self):
        # crops re-composited disjointly must segment to the same count
        page = np.zeros((60, 60), dtype=np.float32)
        page[4:14, 4:14] = 1.0
        page[30:34, 40:59] = 1.0
        page[45:55, 5:25] = 1.0
        yy, xx = np.mgrid[0:60, 0:60]
        page[(yy - 12) ** 2 + (xx - 45) ** 2 <= 16] = 1.0
        first = segment_page(page, min_area=1, pad=0)
        assert len(first) == 4
        width = sum(c.shape[1] for c in first) + 3 * len(first) + 6
        height = max(c.shape[0] for c in first) + 6
        page2 = np.zeros((height, width), dtype=np.float32)
        offset = 3
        for crop in first:
            h, w = crop.shape
            page2[3 : 3 + h, offset : offset + w] = np.maximum(
                page2[3 : 3 + h, offset : offset + w], crop)
            offset += w + 3
        second = segment_page(page2, min_area=1, pad=0)
        assert len(second) == len(first)


class TestRasterIO:
    def test_pgm_roundtrip_exact_for_quantized(self, tmp_path):
        rng = np.random.default_rng(0)
        img = np.round(rng.random((12, 17)) * 255) / 255
        img = img.astype(np.float32)
        path = tmp_path / "x.pgm"
        write_pgm(path, img)
        back = read_pgm(path)
        assert back.shape == img.shape
        np.testing.assert_allclose(back, img, atol=1e-7)

    def test_pgm_bad_magic(self, tmp_path):
        path = tmp_path / "bad.pgm"
        path.write_bytes(b"P2\n2 2\n255\n....")
        with pytest.raises(FormatError):
            read_pgm(path)

    def test_pgm_truncated(self, tmp_path):
        path = tmp_path / "short.pgm"
        path.write_bytes(b"P5\n4 4\n255\nab")
        with pytest.raises(FormatError):
            read_pgm(path)

    def test_corpus_layout_roundtrip(self, tmp_path, small_corpus):
        splits = {"train": small_corpus["train"], "val": small_corpus["val"],
                  "test": small_corpus["test"]}
        save_corpus(tmp_path / "corpus", splits)
        back = load_corpus(tmp_path / "corpus")
        assert set(back) == {"train", "val", "test"}
        for name in splits:
            want = {ex.id: ex for ex in splits[name]}
            got = {ex.id: ex for ex in back[name]}
            assert set(want) == set(got)
            for ex_id, ex in want.items():
                assert got[ex_id].class_label == ex.class_label
                assert got[ex_id].type_label == ex.type_label
                np.testing.assert_allclose(
                    got[ex_id].image, np.round(ex.image * 255) / 255, atol=1e-7)

    def test_load_corpus_missing_manifest(self, tmp_path):
        with pytest.raises(FormatError):
            load_corpus(tmp_path)


class TestResize:
    def test_same_size_identity(self):
        img = np.random.default_rng(1).random((16, 16)).astype(np.float32)
        assert np.array_equal(resize_area(img, 16, 16), img)

    def test_constant_preserved(self):
        img = np.full((20, 30), 0.25, dtype=np.float32)
        out = resize_area(img, 10, 10)
        np.testing.assert_allclose(out, 0.25, atol=1e-6)

    def test_mean_preserved_on_exact_factor(self):
        img = np.random.default_rng(2).random((32, 32)).astype(np.float32)
        out = resize_area(img, 16, 16)
        assert out.shape == (16, 16)
        assert abs(float(out.mean()) - float(img.mean())) < 1e-5


@settings(max_examples=25, deadline=None)
@given(rotation=st.floats(0.0, 180.0), deform=st.floats(0.0, 4.0),
       seed=st.integers(0, 2**31 - 1))
def test_augment_always_preserves_contract(rotation, deform, seed):
    ex = render_example(CorpusSpec(image_size=16, seed=1), 1, 3, 0)
    out = augment(ex, rotation, deform, seed)
    assert out.image.shape == ex.image.shape
    assert out.type_label == ex.type_label
    assert out.class_label == ex.class_label
    assert out.image.min() >= 0.0 and out.image.max() <= 1.0
