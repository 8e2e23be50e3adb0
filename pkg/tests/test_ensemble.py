"""Monte Carlo driver and per-cell ensemble statistics."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dfhazard.errors import DomainError
from dfhazard.ensemble import STD_FLOOR, ensemble_stats, run_ensemble
from dfhazard.material import MaterialParams
from dfhazard.raster import Raster
from dfhazard.solver import CaseResult, Ledger, SourceForcing, run
from dfhazard.source_model import sample_sources
from dfhazard.synthetic import valley_dem


def unit_deposit_runner(dem, forcing, mat, duration):
    """Deterministic stand-in for the solver: 1 m of deposition on every source cell."""
    return CaseResult(dem.with_values(forcing.mask.astype(float)), Ledger(), 0.0, 0)


def failing_runner(dem, forcing, mat, duration):
    if forcing.mask.any():
        raise FloatingPointError("blow-up")
    return unit_deposit_runner(dem, forcing, mat, duration)


def case(values, status="ok"):
    r = Raster(np.asarray(values, dtype=float)) if status == "ok" else None
    return CaseResult(r, Ledger(), 0.0, 0, status=status)


@pytest.fixture(scope="module")
def small_case():
    dem = valley_dem(40)
    prob = Raster(np.full((4, 4), 0.15), 10.0)
    return dem, prob


class TestRunEnsemble:
    def test_seeds(self, small_case):
        dem, prob = small_case
        cases = run_ensemble(dem, prob, 3, 50, runner=unit_deposit_runner)
        assert [c.seed for c in cases] == [50, 51, 52]

    def test_single_case_equals_direct_run(self, small_case):
        dem, prob = small_case
        mat = MaterialParams()
        (c,) = run_ensemble(dem, prob, 1, 7, mat, duration=10.0)
        direct = run(dem, SourceForcing.from_realization(sample_sources(prob, 7), prob, dem), mat, 10.0)
        assert c.delta_z == direct.delta_z and c.seed == 7

    def test_zero_probability(self, small_case):
        dem, _ = small_case
        prob = Raster(np.zeros((4, 4)), 10.0)
        cases = run_ensemble(dem, prob, 3, 0, duration=5.0)
        assert all(np.all(c.delta_z.values == 0.0) for c in cases)

    def test_bit_reproducible(self, small_case):
        dem, prob = small_case
        a = run_ensemble(dem, prob, 2, 3, duration=10.0)
        b = run_ensemble(dem, prob, 2, 3, duration=10.0)
        assert all(x.delta_z == y.delta_z for x, y in zip(a, b))

    def test_workers_match_serial(self, small_case):
        dem, prob = small_case
        a = run_ensemble(dem, prob, 3, 11, duration=5.0, workers=1)
        b = run_ensemble(dem, prob, 3, 11, duration=5.0, workers=2)
        for x, y in zip(a, b):
            assert np.max(np.abs(x.delta_z.values - y.delta_z.values)) <= 1e-12

    def test_failures_recorded(self, small_case):
        dem, prob = small_case
        cases = run_ensemble(dem, Raster(np.ones((4, 4)), 10.0), 2, 0, runner=failing_runner)
        assert all(c.status.startswith("failed") and c.delta_z is None for c in cases)

    def test_rejects_zero_cases(self, small_case):
        with pytest.raises(DomainError):
            run_ensemble(*small_case, 0, 0)


class TestStats:
    def test_identical_cases(self):
        v = np.array([[0.0, 0.3, -0.7], [1e-3, 2.5, 0.0]])
        s = ensemble_stats([case(v)] * 5)
        assert np.array_equal(s.mean_dz.values, v)
        assert set(np.unique(s.hit_frequency.values)) <= {0.0, 1.0}
        material = np.abs(v) > 0.05
        assert np.array_equal(~s.rel_std_log10.nodata_mask, material)
        assert np.allclose(s.rel_std_log10.values[material], np.log10(STD_FLOOR / np.abs(v[material])))

    def test_identical_cases_exact_mean_random(self, rng):
        for _ in range(20):
            v = rng.normal(size=(3, 4)) * 10 ** rng.uniform(-3, 3)
            s = ensemble_stats([case(v)] * int(rng.integers(1, 9)))
            assert np.array_equal(s.mean_dz.values, v)

    def test_counting(self):
        cases = [case([[1.0]])] * 37 + [case([[0.0]])] * 63
        assert ensemble_stats(cases).hit_frequency.values[0, 0] == pytest.approx(0.37)

    def test_against_numpy(self, rng):
        vals = [rng.normal(size=(5, 6)) for _ in range(9)]
        s = ensemble_stats([case(v) for v in vals])
        stack = np.stack(vals)
        m = stack.mean(axis=0)
        np.testing.assert_allclose(s.mean_dz.values, m, rtol=1e-13, atol=1e-15)
        sd = stack.std(axis=0, ddof=1)
        ok = np.abs(m) > 0.05
        np.testing.assert_allclose(s.rel_std_log10.values[ok], np.log10(sd[ok] / np.abs(m[ok])), rtol=1e-12)
        np.testing.assert_array_equal(s.hit_frequency.values, (np.abs(stack) > 0.05).mean(axis=0))

    def test_single_case_zero_std(self):
        s = ensemble_stats([case([[2.0]])])
        assert s.rel_std_log10.values[0, 0] == pytest.approx(math.log10(STD_FLOOR / 2.0))

    def test_failed_cases_excluded(self):
        s = ensemble_stats([case([[1.0]]), case(None, status="failed: x"), case([[3.0]])])
        assert s.n_cases == 2 and s.n_failed == 1 and s.mean_dz.values[0, 0] == 2.0

    def test_all_failed(self):
        with pytest.raises(DomainError):
            ensemble_stats([case(None, status="failed: x")])

    def test_nodata_union(self):
        s = ensemble_stats([case([[1.0, -9999.0]]), case([[1.0, 1.0]])])
        assert s.mean_dz.nodata_mask.tolist() == [[False, True]]

    def test_bernoulli_hit_frequency(self):
        dem = Raster(np.zeros((10, 10)), 1.0)
        prob = Raster(np.array([[0.3]]), 10.0)
        cases = run_ensemble(dem, prob, 1000, 0, runner=unit_deposit_runner)
        f = ensemble_stats(cases).hit_frequency.values
        assert np.all(f == f[0, 0])
        assert abs(f[0, 0] - 0.3) <= 3 * math.sqrt(0.3 * 0.7 / 1000)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 8))
def test_permutation_invariance(seed, n):
    rng = np.random.default_rng(seed)
    cases = [case(rng.normal(size=(3, 3)) * rng.uniform(0.01, 10)) for _ in range(n)]
    a = ensemble_stats(cases)
    b = ensemble_stats([cases[k] for k in rng.permutation(n)])
    assert a.mean_dz == b.mean_dz and a.rel_std_log10 == b.rel_std_log10 and a.hit_frequency == b.hit_frequency


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 6))
def test_hits_monotone_under_union(seed, n):
    rng = np.random.default_rng(seed)
    cases = [case(rng.normal(size=(4, 4)) * 0.1) for _ in range(n + 1)]
    before = ensemble_stats(cases[:n])
    after = ensemble_stats(cases)
    assert np.all(np.rint(after.hit_frequency.values * (n + 1)) >= np.rint(before.hit_frequency.values * n))
