"""Change classes, one-vs-rest confusion counts, F1 scores and the parameter sweep."""

import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from dfhazard.errors import DomainError
from dfhazard.evaluation import (CLASSES, SELECTED_SET, SWEEP_KEYS, ChangeClass, ChangeClassRaster, Counts,
                                 SweepRow, classify_change, confusion_counts, f1_metrics, parameter_sweep, rank_rows,
                                 scatter_data, score_change, table3_candidates, write_sweep_csv)
from dfhazard.material import MaterialParams
from dfhazard.raster import Raster
from dfhazard.solver import SourceForcing, run
from dfhazard.synthetic import valley_dem

E, N, D, X = ChangeClass.EROSION, ChangeClass.NOT_AFFECTED, ChangeClass.DEPOSITION, ChangeClass.NODATA


def labels(arr):
    arr = np.asarray(arr, dtype=np.int8)
    return ChangeClassRaster(arr, Raster(np.zeros(arr.shape)))


def brute_counts(pred, obs, target):
    tp = fp = fn = tn = 0
    for p, o in zip(pred.ravel().tolist(), obs.ravel().tolist()):
        if p == X or o == X:
            continue
        if p == target and o == target:
            tp += 1
        elif p == target:
            fp += 1
        elif o == target:
            fn += 1
        else:
            tn += 1
    return tp, fp, fn, tn


def brute_f1(pred, obs):
    f1s = []
    for c in CLASSES:
        tp, fp, fn, _ = brute_counts(pred, obs, c)
        f1s.append(2 * tp / (2 * tp + fp + fn) if 2 * tp + fp + fn else 0.0)
    return f1s, sum(f1s) / 3


class TestClassify:
    def test_erosion_at_zero_tolerance(self):
        lab = classify_change(Raster(np.array([[-0.5]])), epsilon=0.0).labels
        assert lab[0, 0] == E

    def test_zero_not_affected(self):
        assert classify_change(Raster(np.array([[0.0]])), 0.0).labels[0, 0] == N

    def test_within_band(self):
        assert classify_change(Raster(np.array([[0.03]])), 0.05).labels[0, 0] == N

    def test_band_edges(self):
        lab = classify_change(Raster(np.array([[-0.05, 0.05, 0.0501, -0.0501]])), 0.05).labels
        assert lab.tolist() == [[N, N, D, E]]

    def test_nodata(self):
        lab = classify_change(Raster(np.array([[1.0, -9999.0]])), 0.05)
        assert lab.labels.tolist() == [[D, X]]
        assert lab.to_raster().nodata_mask.tolist() == [[False, True]]

    def test_rejects_bad_labels(self):
        with pytest.raises(DomainError):
            labels([[5]])


class TestConfusion:
    def test_identical(self, rng):
        a = labels(rng.integers(-1, 2, size=(6, 6)))
        for c in CLASSES:
            k = confusion_counts(a, a, c)
            assert k.fp == 0 and k.fn == 0

    def test_three_cell_example(self):
        obs = labels([[E, N, D]])
        pred = labels([[E, E, D]])
        assert confusion_counts(pred, obs, E) == Counts(1, 1, 0, 1)

    def test_partition_identity(self, rng):
        a, b = labels(rng.integers(-1, 3, size=(7, 5))), labels(rng.integers(-1, 3, size=(7, 5)))
        totals = {sum(confusion_counts(a, b, c)) for c in CLASSES}
        assert len(totals) == 1

    def test_nodata_target_rejected(self):
        a = labels([[E]])
        with pytest.raises(DomainError):
            confusion_counts(a, a, X)

    def test_grid_mismatch(self):
        with pytest.raises(DomainError):
            confusion_counts(labels([[E, N]]), labels([[E], [N]]), E)


class TestF1:
    def test_perfect(self):
        a = labels([[E, N, D, N]])
        s = f1_metrics([confusion_counts(a, a, c) for c in CLASSES])
        assert all(x.f1 == 1.0 for x in s.per_class) and s.f1_ave == 1.0

    def test_two_thirds(self):
        s = f1_metrics([Counts(2, 1, 1, 0)] * 3)
        c = s.per_class[0]
        assert c.precision == pytest.approx(2 / 3) and c.recall == pytest.approx(2 / 3) and c.f1 == pytest.approx(2 / 3)

    def test_empty_class_zero(self):
        s = f1_metrics([Counts(0, 0, 0, 4), Counts(4, 0, 0, 0), Counts(0, 0, 0, 4)])
        assert s.per_class[0].f1 == 0.0 and s.per_class[0].precision == 0.0
        assert s.f1_ave == pytest.approx(1 / 3)

    def test_dict_input(self):
        d = {E: Counts(1, 0, 0, 0), N: Counts(1, 0, 0, 0), D: Counts(0, 1, 0, 0)}
        assert f1_metrics(d).f1_ave == pytest.approx(2 / 3)

    def test_brute_force_oracle(self, rng):
        """Counts and F1 on 1000 random small scenes equal a cell-by-cell enumeration."""
        for _ in range(1000):
            shape = tuple(rng.integers(1, 6, size=2))
            p = rng.integers(-1, 3, size=shape)
            o = rng.integers(-1, 3, size=shape)
            pr, ob = labels(p), labels(o)
            counts = [confusion_counts(pr, ob, c) for c in CLASSES]
            for c, k in zip(CLASSES, counts):
                assert tuple(k) == brute_counts(p, o, c)
            f1s, ave = brute_f1(p, o)
            s = f1_metrics(counts)
            assert [x.f1 for x in s.per_class] == f1s and s.f1_ave == ave


scene = hnp.arrays(np.int8, (4, 5), elements=st.sampled_from([-1, 0, 1, 2]))


@settings(max_examples=100, deadline=None)
@given(scene, scene, st.permutations([-1, 0, 1]))
def test_relabelling_symmetry(p, o, perm):
    mapping = dict(zip([-1, 0, 1], perm))
    mapping[2] = 2

    def relabel(a):
        return np.vectorize(mapping.get)(a).astype(np.int8)

    def ave(a, b):
        return f1_metrics([confusion_counts(labels(a), labels(b), c) for c in CLASSES]).f1_ave

    assert ave(relabel(p), relabel(o)) == pytest.approx(ave(p, o), abs=1e-15)


@settings(max_examples=100, deadline=None)
@given(scene, scene, st.sampled_from([-1, 0, 1]), st.integers(1, 4))
def test_agreeing_cells_never_lower_f1(p, o, cls, extra):
    def per_class(a, b):
        return [s.f1 for s in f1_metrics([confusion_counts(labels(a), labels(b), c) for c in CLASSES]).per_class]

    before = per_class(p, o)
    add = np.full((4, extra), cls, dtype=np.int8)
    after = per_class(np.hstack([p, add]), np.hstack([o, add]))
    assert all(a >= b - 1e-15 for a, b in zip(after, before))


class TestCandidates:
    def test_grid_size(self):
        cands = table3_candidates()
        assert len(cands) == 3 * 2 * 2 * 3 * 4 * 5 == 720
        assert len({tuple(sorted(c.items())) for c in cands}) == 720

    def test_selected_set_in_grid(self):
        assert SELECTED_SET in table3_candidates()

    def test_all_valid(self):
        for c in table3_candidates():
            MaterialParams().updated(**c)


def _rows(f1s):
    return [SweepRow(k, {"d_m": 0.02 * (k + 1)}, None, f, 0) for k, f in enumerate(f1s)]


class TestRanking:
    def test_order_and_ties(self):
        rep = rank_rows(_rows([0.5, 0.9, 0.9, -1.0]))
        assert [r.index for r in rep.rows] == [1, 2, 0, 3]
        assert [r.rank for r in rep.rows] == [1, 2, 3, 4]

    def test_deterministic_under_input_order(self):
        rows = _rows([0.3, 0.3, 0.7, 0.1])
        assert rank_rows(rows).rows == rank_rows(rows[::-1]).rows


@pytest.fixture(scope="module")
def sweep_case():
    dem = valley_dem(48)
    forcing = SourceForcing.from_blocks([(4, 10, 18, 24), (8, 14, 26, 32)], dem.shape)
    return dem, forcing


class TestSweep:
    def test_single_candidate_first(self, sweep_case):
        dem, forcing = sweep_case
        obs = dem.with_values(np.zeros(dem.shape))
        rep = parameter_sweep(dem, forcing, [{"d_m": 0.05}], obs, duration=10.0)
        assert len(rep.rows) == 1 and rep.best.rank == 1 and rep.best.params == {"d_m": 0.05}

    def test_self_consistency(self, sweep_case):
        dem, forcing = sweep_case
        own = {"phi": 35.0, "r_c": 0.2}
        obs = run(dem, forcing, MaterialParams().updated(**own), 20.0).delta_z
        rep = parameter_sweep(dem, forcing, [{"phi": 25.0, "r_c": 0.0}, own, {"d_m": 0.1}], obs, duration=20.0)
        assert rep.best.params == own and rep.best.f1_ave == 1.0
        assert score_change(obs, obs).f1_ave == 1.0

    def test_failed_candidate_scores_minus_one(self, sweep_case, monkeypatch):
        dem, forcing = sweep_case
        import dfhazard.evaluation as ev

        real_run = ev.run

        def flaky(dem_, forcing_, mat, duration):
            if mat.d_m == 0.1:
                raise FloatingPointError("blow-up")
            return real_run(dem_, forcing_, mat, duration)

        monkeypatch.setattr(ev, "run", flaky)
        obs = dem.with_values(np.zeros(dem.shape))
        rep = parameter_sweep(dem, forcing, [{"d_m": 0.1}, {"d_m": 0.02}], obs, duration=5.0)
        failed = [r for r in rep.rows if r.status != "ok"]
        assert len(failed) == 1 and failed[0].f1_ave == -1.0 and rep.rows[-1] is failed[0]

    def test_csv_and_scatter(self, tmp_path):
        rep = rank_rows([SweepRow(0, dict(SELECTED_SET), f1_metrics([Counts(1, 0, 0, 0)] * 3), 1.0),
                         SweepRow(1, dict(SELECTED_SET, d_m=0.05), None, -1.0, status="failed: x")])
        p = tmp_path / "s.csv"
        write_sweep_csv(rep, p)
        rows = list(csv.DictReader(open(p)))
        assert [r["rank"] for r in rows] == ["1", "2"]
        assert float(rows[0]["f1_ave"]) == 1.0 and rows[1]["status"] == "failed: x"
        assert set(SWEEP_KEYS) <= set(rows[0])
        sc = scatter_data(rep)
        assert sc["d_m"] == [(0.02, 1.0)]

    def test_empty_candidates(self, sweep_case):
        dem, forcing = sweep_case
        with pytest.raises(DomainError):
            parameter_sweep(dem, forcing, [], dem)
