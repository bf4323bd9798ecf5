import itertools
import json
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import ndimage

import oracles
from smeval.meta import (ConstantRankWarning, MetaError, MetaResult, ScoreMatrix, disk, gaussian_baseline_map,
                         mm1_application_ranking, mm2_generic_vs_sota, mm3_gt_switch, mm4_annotation_robustness,
                         mm5_rank_distance, perturb_gt, rank_matrix, rank_scores, select_study_pairs, spearman_rho,
                         structure_change)
from smeval.smeasure import structure_measure


def mean_of_sm(sm, gt):
    return float(np.mean(sm))


def shapes(n, h=12, w=12, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < n:
        g = np.zeros((h, w), bool)
        r0, c0 = rng.integers(0, h - 3), rng.integers(0, w - 3)
        g[r0:r0 + rng.integers(2, h - r0), c0:c0 + rng.integers(2, w - c0)] = True
        if not g.all() and not any(np.array_equal(g, o) for o in out):
            out.append(g)
    return out


class TestRanks:
    def test_rank_scores(self):
        assert rank_scores([0.9, 0.1, 0.5]).tolist() == [1, 3, 2]
        assert rank_scores([0.5, 0.5, 0.1]).tolist() == [1.5, 1.5, 3]

    def test_spearman_examples(self):
        assert spearman_rho([1, 2, 3], [1, 2, 3]) == 1.0
        assert spearman_rho([1, 2, 3], [3, 2, 1]) == -1.0
        assert spearman_rho([1, 2, 3, 4], [1, 3, 2, 4]) == pytest.approx(0.8, abs=1e-12)

    def test_constant_vector_warns(self):
        with pytest.warns(ConstantRankWarning):
            assert spearman_rho([2, 2, 2], [1, 2, 3]) == 0.0

    def test_errors(self):
        with pytest.raises(MetaError):
            spearman_rho([1, 2], [1, 2, 3])
        with pytest.raises(MetaError):
            spearman_rho([1], [1])

    @given(st.permutations(list(range(1, 9))), st.permutations(list(range(1, 9))))
    def test_matches_tie_free_formula(self, a, b):
        rho = spearman_rho(a, b)
        assert -1.0 <= rho <= 1.0
        assert rho == pytest.approx(oracles.spearman_tie_free(a, b), abs=1e-12)
        assert rho == pytest.approx(spearman_rho(b, a), abs=1e-15)


class TestScoreMatrix:
    def test_csv_round_trip(self, tmp_path):
        m = ScoreMatrix(["a", "b"], ["x", "y"], [[0.1, 1 / 3], [np.pi / 4, 0.0]])
        m.write_csv(tmp_path / "s.csv")
        back = ScoreMatrix.read_csv(tmp_path / "s.csv")
        assert back.image_ids == m.image_ids and back.model_ids == m.model_ids
        assert np.array_equal(back.scores, m.scores)

    def test_validation(self):
        with pytest.raises(MetaError):
            ScoreMatrix(["a", "a"], ["x"], [[1.0], [2.0]])
        with pytest.raises(MetaError):
            ScoreMatrix(["a"], ["x"], [[np.nan]])
        with pytest.raises(MetaError):
            ScoreMatrix.from_csv("image_id,x\na,1,2\n")

    def test_rank_matrix(self):
        m = ScoreMatrix(["a", "b"], ["x", "y", "z"], [[0.3, 0.2, 0.1], [0.5, 0.5, 0.9]])
        assert rank_matrix(m).tolist() == [[1, 2, 3], [2.5, 2.5, 1]]


class TestMM1:
    def _pair(self, measure, app):
        ids = [str(i) for i in range(len(measure))]
        models = ["a", "b", "c"]
        return ScoreMatrix(ids, models, measure), ScoreMatrix(ids, models, app)

    def test_perfect_agreement_is_zero(self):
        r = mm1_application_ranking(*self._pair([[0.9, 0.5, 0.1]] * 3, [[3, 2, 1]] * 3))
        assert r.value == 0.0 and r.mm_id == 1

    def test_reversed_is_two(self):
        r = mm1_application_ranking(*self._pair([[0.9, 0.5, 0.1]] * 2, [[1, 2, 3]] * 2))
        assert r.value == pytest.approx(2.0)

    def test_hand_toy(self):
        # image 0: ranks (1,3,2) vs (1,2,3) -> rho 0.5; image 1: identical -> rho 1
        r = mm1_application_ranking(*self._pair([[0.9, 0.1, 0.5], [0.9, 0.5, 0.1]],
                                                [[0.9, 0.5, 0.1], [0.9, 0.5, 0.1]]))
        assert [p["value"] for p in r.per_image] == pytest.approx([0.5, 0.0])
        assert r.value == pytest.approx(0.25)

    def test_constant_ranking_recorded(self):
        r = mm1_application_ranking(*self._pair([[0.5, 0.5, 0.5]], [[1, 2, 3]]))
        assert r.value == 1.0 and r.warnings

    def test_mismatched_ids(self):
        a = ScoreMatrix(["1"], ["a", "b"], [[1, 2]])
        b = ScoreMatrix(["2"], ["a", "b"], [[1, 2]])
        with pytest.raises(MetaError):
            mm1_application_ranking(a, b)


class TestGaussian:
    def test_peak_and_symmetry(self):
        g = gaussian_baseline_map(7, 5)
        assert g.shape == (5, 7) and g[2, 3] == 1.0 and g.max() == 1.0
        assert np.allclose(g, g[::-1]) and np.allclose(g, g[:, ::-1])

    def test_corner_value(self):
        g = gaussian_baseline_map(101, 101)
        assert g[0, 0] == pytest.approx(0.0198, abs=1e-4)

    def test_even_size_has_no_single_peak(self):
        g = gaussian_baseline_map(4, 4)
        assert g.max() == 1.0 and np.count_nonzero(g == 1.0) == 4


class TestMM2:
    def test_counts(self):
        sota = ScoreMatrix(["a", "b", "c"], ["m1", "m2"], [[0.8, 0.6], [0.4, 0.2], [0.5, 0.5]])
        r = mm2_generic_vs_sota(sota, {"a": 0.65, "b": 0.35, "c": 0.5})
        assert r.value == 1.0 and r.extra["count"] == 1 and r.extra["percent"] == pytest.approx(100 / 3)
        assert [p["generic_wins"] for p in r.per_image] == [False, True, False]

    def test_extremes(self):
        sota = ScoreMatrix(["a", "b"], ["m"], [[0.5], [0.5]])
        assert mm2_generic_vs_sota(sota, [0.0, 0.1]).value == 0.0
        assert mm2_generic_vs_sota(sota, [0.9, 0.6]).value == 2.0

    def test_coverage_checked(self):
        sota = ScoreMatrix(["a"], ["m"], [[0.5]])
        with pytest.raises(MetaError):
            mm2_generic_vs_sota(sota, {"z": 0.1})
        with pytest.raises(MetaError):
            mm2_generic_vs_sota(sota, [0.1, 0.2])


class TestMM3:
    def test_structure_measure_never_prefers_wrong_gt(self):
        gts = shapes(10)
        sms = [g.astype(float) for g in gts]
        r = mm3_gt_switch(structure_measure, sms, gts, good_fraction=1.0)
        assert r.value == 0.0 and r.extra["trials"] == 90

    def test_mean_of_sm_ties(self):
        gts = shapes(6)
        sms = [g.astype(float) for g in gts]
        strict = mm3_gt_switch(mean_of_sm, sms, gts, good_fraction=1.0)
        count = mm3_gt_switch(mean_of_sm, sms, gts, good_fraction=1.0, ties="count")
        # the score ignores the GT, so every switch ties exactly
        assert strict.value == 0.0 and count.value == 100.0

    def test_exhaustive_enumeration(self):
        gts = shapes(5, seed=3)
        rng = np.random.default_rng(1)
        sms = [np.clip(g * 0.8 + 0.2 * rng.random(g.shape), 0, 1) for g in gts]

        def f(sm, gt):
            return float(np.mean(sm[gt]))

        r = mm3_gt_switch(f, sms, gts, good_fraction=1.0)
        errs = sum(f(sms[i], gts[j]) > f(sms[i], gts[i]) for i, j in itertools.permutations(range(5), 2))
        assert r.value == pytest.approx(100.0 * errs / 20)

    def test_good_set_selection(self):
        gts = shapes(10)
        sms = [g * (0.1 * k) for k, g in enumerate(gts)]
        r = mm3_gt_switch(mean_of_sm, sms, gts)
        assert r.extra["good_maps"] == round(0.418 * 10)
        own = [mean_of_sm(s, None) for s in sms]
        top = sorted(sorted(range(10), key=lambda i: -own[i])[:4])
        assert [p["map_index"] for p in r.per_image] == top
        cut = mm3_gt_switch(mean_of_sm, sms, gts, cutoff=own[8])
        assert cut.extra["selection"] == "cutoff"
        assert [p["map_index"] for p in cut.per_image] == [i for i in range(10) if own[i] >= own[8]]

    def test_sampling_seeded_and_bounded(self):
        gts = shapes(12)
        sms = [g.astype(float) for g in gts]
        a = mm3_gt_switch(structure_measure, sms, gts, switches_per_image=3, good_fraction=0.5, seed=4)
        b = mm3_gt_switch(structure_measure, sms, gts, switches_per_image=3, good_fraction=0.5, seed=4)
        assert a.to_dict() == b.to_dict()
        assert all(p["switches"] == 3 for p in a.per_image)

    def test_size_mismatched_gts_excluded(self):
        gts = shapes(3) + [np.eye(5, dtype=bool)]
        sms = [g.astype(float) for g in gts[:3]]
        r = mm3_gt_switch(structure_measure, sms, gts, gt_index=[0, 1, 2], good_fraction=1.0)
        assert all(p["excluded_by_size"] == 1 and p["switches"] == 2 for p in r.per_image)

    def test_errors(self):
        gts = shapes(3)
        with pytest.raises(MetaError):
            mm3_gt_switch(mean_of_sm, gts[:1], gts[:1])
        with pytest.raises(MetaError):
            mm3_gt_switch(mean_of_sm, gts, gts, ties="sometimes")
        with pytest.raises(MetaError):
            mm3_gt_switch(mean_of_sm, gts, gts, good_fraction=0.0)


class TestPerturb:
    def test_disk(self):
        assert disk(1).astype(int).tolist() == [[0, 1, 0], [1, 1, 1], [0, 1, 0]]
        assert disk(2).sum() == 13

    def test_single_pixel_dilation_is_plus(self):
        g = np.zeros((5, 5), bool)
        g[2, 2] = True
        out = perturb_gt(g, 1, "dilate")
        assert np.array_equal(out[1:4, 1:4], disk(1)) and out.sum() == 5

    def test_erosion_removes_thin_lines(self):
        g = np.zeros((7, 7), bool)
        g[3, 1:6] = True
        assert not perturb_gt(g, 1, "erode").any()

    def test_all_background_and_all_foreground_unchanged(self):
        for mode in ("dilate", "erode", "open", "close", "mixed"):
            assert not perturb_gt(np.zeros((6, 6), bool), 2, mode).any()
            assert perturb_gt(np.ones((6, 6), bool), 2, mode).all()

    @settings(max_examples=40, deadline=None)
    @given(arrays(bool, st.tuples(st.integers(3, 12), st.integers(3, 12))), st.integers(1, 3))
    def test_morphology_laws(self, g, r):
        dil, ero = perturb_gt(g, r, "dilate"), perturb_gt(g, r, "erode")
        opn, cls = perturb_gt(g, r, "open"), perturb_gt(g, r, "close")
        assert not np.any(g & ~dil) and not np.any(ero & ~g)
        assert not np.any(opn & ~g) and not np.any(g & ~cls)
        assert np.array_equal(perturb_gt(opn, r, "open"), opn)
        assert np.array_equal(perturb_gt(cls, r, "close"), cls)

    @settings(max_examples=30, deadline=None)
    @given(arrays(bool, st.tuples(st.integers(3, 12), st.integers(3, 12))), st.integers(0, 1000))
    def test_mixed_acts_per_component(self, g, seed):
        out = perturb_gt(g, 1, "mixed", seed)
        labels, n = ndimage.label(g, structure=np.ones((3, 3), bool))
        flips = np.random.default_rng(seed).integers(0, 2, size=n)
        for k in range(1, n + 1):
            comp = labels == k
            if flips[k - 1]:
                assert not np.any(comp & ~out)
            else:
                assert np.array_equal(out & comp, out & perturb_gt(comp, 1, "erode"))
        assert np.array_equal(perturb_gt(g, 1, "mixed", seed), out)

    def test_invalid_arguments(self):
        with pytest.raises(MetaError):
            perturb_gt(np.ones((3, 3), bool), 0)
        with pytest.raises(MetaError):
            perturb_gt(np.ones((3, 3), bool), 1, "shear")

    def test_structure_change(self):
        g = np.zeros((12, 12), bool)
        g[3:9, 3:9] = True
        assert structure_change(g, perturb_gt(g, 1, "dilate")) == 0
        blob = g.copy()
        blob[0:3, 0:6] = True
        assert structure_change(g, blob) > 0
        assert structure_change(g, blob, radius=0) == int((g ^ blob).sum())


class TestMM4:
    def test_rank_stable_measure_scores_zero(self):
        gts = shapes(4)
        maps = [[g.astype(float), 0.5 * g, np.full(g.shape, 0.1)] for g in gts]
        r = mm4_annotation_robustness(mean_of_sm, maps, gts)
        assert r.value == 0.0 and r.mm_id == 4

    def test_against_direct_computation(self):
        g = np.zeros((8, 8), bool)
        g[2:6, 1:7] = True
        rng = np.random.default_rng(0)
        maps = [np.clip(g * 0.7 + 0.3 * rng.random((8, 8)), 0, 1) for _ in range(4)]
        r = mm4_annotation_robustness(structure_measure, [maps], [g], radius=1, seed=5)
        pert = perturb_gt(g, 1, "mixed", seed=[5, 0])
        before = rank_scores([structure_measure(m, g) for m in maps])
        after = rank_scores([structure_measure(m, pert) for m in maps])
        assert r.value == pytest.approx(1.0 - spearman_rho(before, after), abs=1e-12)
        assert r.per_image[0]["changed_pixels"] == int((g ^ pert).sum())

    def test_needs_two_models(self):
        g = shapes(1)[0]
        with pytest.raises(MetaError):
            mm4_annotation_robustness(mean_of_sm, [[g]], [g])


class TestMM5:
    def test_distance_example(self):
        r = mm5_rank_distance([[1, 2, 3]], [[3, 1, 2]], ["img"], ["a", "b", "c"])
        assert r.per_image[0] == {"image_id": "img", "distance": 2.0, "top_a": "a", "top_b": "b"}
        assert r.extra["histogram"] == [{"distance": 2.0, "images": 1}]

    def test_identical_rankings(self):
        r = mm5_rank_distance([[1, 2, 3], [2, 1, 3]], [[1, 2, 3], [2, 1, 3]])
        assert r.value == 0.0 and r.extra["candidates"] == []

    @given(st.permutations([1, 2, 3, 4, 5]))
    def test_distance_is_position_of_top(self, perm):
        r = mm5_rank_distance([[1, 2, 3, 4, 5]], [perm])
        assert r.value == perm[0] - 1

    def test_shape_mismatch(self):
        with pytest.raises(MetaError):
            mm5_rank_distance([[1, 2]], [[1, 2, 3]])


class TestStudyPairs:
    def _setup(self, n=50, hits=(4, 17, 33)):
        ra = [[1, 2, 3]] * n
        rb = [[2, 1, 3] if k in hits else [1, 2, 3] for k in range(n)]
        ids = [f"im{k:02d}" for k in range(n)]
        res = mm5_rank_distance(ra, rb, ids, ["a", "b", "c"])
        sms = {i: {"a": f"a/{i}.png", "b": f"b/{i}.png", "c": f"c/{i}.png"} for i in ids}
        gts = {i: f"gt/{i}.png" for i in ids}
        return res, sms, gts

    def test_selects_qualifying_only(self):
        res, sms, gts = self._setup()
        pairs = select_study_pairs(res, sms, gts)
        assert [p["image_id"] for p in pairs] == ["im04", "im17", "im33"]
        assert pairs[0]["map_a"] == "a/im04.png" and pairs[0]["map_b"] == "b/im04.png"

    def test_seeded_subsample(self):
        res, sms, gts = self._setup(hits=range(0, 50, 2))
        a = select_study_pairs(res, sms, gts, max_pairs=5, seed=3)
        assert len(a) == 5 and a == select_study_pairs(res, sms, gts, max_pairs=5, seed=3)

    def test_none_qualify(self):
        res, sms, gts = self._setup(hits=())
        with pytest.raises(MetaError, match="no qualifying images"):
            select_study_pairs(res, sms, gts)


def test_meta_result_json_round_trip():
    r = MetaResult(3, 12.5, seed=7, per_image=[{"a": 1}], extra={"k": [1, 2]}, warnings=["w"])
    assert json.loads(r.to_json()) == r.to_dict()


def test_no_stray_warnings_from_mm1():
    a = ScoreMatrix(["0"], ["a", "b"], [[0.5, 0.5]])
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        r = mm1_application_ranking(a, ScoreMatrix(["0"], ["a", "b"], [[1, 2]]))
    assert r.warnings == ["constant ranking on image 0"]
