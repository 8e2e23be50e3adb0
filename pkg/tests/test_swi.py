"""Three-tank soil water index."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dfhazard.errors import DomainError
from dfhazard.raster import Raster
from dfhazard.swi import TankParams, TankState, integrate, max_swi_raster, read_rain_csv, swi_series, tank_step

P = TankParams()


def rk4_oracle(rain, hours, h=10.0 / 3600.0, state=(0.0, 0.0, 0.0)):
    """Independent classical RK4 integration of the tank equations at 10-s steps."""
    a1, a2, a3, a4 = P.alpha
    b1, b2, b3 = P.beta
    L1, L2, L3, L4 = P.heights

    def f(s1, s2, s3):
        q1 = a1 * max(s1 - L1, 0) + a2 * max(s1 - L2, 0)
        q2 = a3 * max(s2 - L3, 0)
        q3 = a4 * max(s3 - L4, 0)
        return rain - b1 * s1 - q1, b1 * s1 - b2 * s2 - q2, b2 * s2 - b3 * s3 - q3

    s = tuple(float(v) for v in state)
    for _ in range(int(round(hours / h))):
        k1 = f(*s)
        k2 = f(*(x + h / 2 * k for x, k in zip(s, k1)))
        k3 = f(*(x + h / 2 * k for x, k in zip(s, k2)))
        k4 = f(*(x + h * k for x, k in zip(s, k3)))
        s = tuple(x + h / 6 * (a + 2 * b + 2 * c + d) for x, a, b, c, d in zip(s, k1, k2, k3, k4))
    return np.array(s)


def storm(hours=24, peak=60.0):
    t = np.arange(hours) + 0.5
    return [(1.0, float(peak * np.exp(-0.5 * ((tt - 12) / 3) ** 2))) for tt in t]


class TestTankStep:
    def test_zero_equilibrium(self):
        assert tank_step(TankState(), 0.0, 1 / 60) == TankState()

    def test_hand_integration(self):
        s = tank_step(TankState(10.0, 0.0, 0.0), 0.0, 1 / 60)
        assert s.S1 == pytest.approx(9.98, abs=1e-12)
        assert s.S2 == pytest.approx(0.02, abs=1e-12)
        assert s.S3 == 0.0

    def test_rejects_coarse_step(self):
        with pytest.raises(DomainError):
            tank_step(TankState(), 1.0, 0.5)

    def test_rejects_negative_rain(self):
        with pytest.raises(DomainError):
            tank_step(TankState(), -1.0, 1 / 60)

    def test_param_validation(self):
        with pytest.raises(DomainError):
            TankParams(heights=(60.0, 15.0, 15.0, 15.0))


class TestFixedPoint:
    def test_constant_rain_steady_state(self):
        # S1 = r / b1 stays below L1; then the tank-2 and tank-3 balances are linear
        _, _, (s1, s2, s3) = integrate((0.0, 0.0, 0.0), [(2000.0, 1.0)])
        assert float(s1) == pytest.approx(1.0 / 0.12, rel=1e-6)
        assert float(s2) == pytest.approx(17.5, rel=1e-6)
        assert float(s3) == pytest.approx(51.25, rel=1e-6)
        assert float(s1 + s2 + s3) == pytest.approx(77.0833, rel=1e-4)

    def test_matches_rk4_oracle(self):
        for rain, hours in ((1.0, 48.0), (30.0, 6.0)):
            _, _, final = integrate((0.0, 0.0, 0.0), [(hours, rain)])
            ref = rk4_oracle(rain, hours)
            got = np.array(final, dtype=float)
            assert abs(got.sum() - ref.sum()) / ref.sum() < 1e-3
            assert np.max(np.abs(got - ref)) < 0.1


class TestSeries:
    def test_zero_rain(self):
        series, smax = swi_series([(1.0, 0.0)] * 5)
        assert smax == 0.0 and series == [0.0] * 5

    def test_decay_after_impulse(self):
        series, _ = swi_series([(1.0, 80.0)] * 3 + [(1.0, 0.0)] * 30)
        tail = series[2:]
        assert all(b <= a for a, b in zip(tail, tail[1:]))

    def test_substep_convergence(self):
        _, m1 = swi_series(storm())
        _, m2 = swi_series(storm(), substep=1.0 / 120.0)
        assert abs(m1 - m2) / m2 < 1e-3

    def test_substep_against_one_second(self):
        _, m1 = swi_series(storm())
        _, m2 = swi_series(storm(), substep=1.0 / 3600.0)
        assert abs(m1 - m2) / m2 < 1e-3

    def test_initial_state(self):
        series, smax = swi_series([(1.0, 0.0)], initial=TankState(5.0, 5.0, 5.0))
        assert smax == pytest.approx(15.0)
        assert series[0] < 15.0

    def test_rejects_nonpositive_interval(self):
        with pytest.raises(DomainError):
            swi_series([(0.0, 1.0)])

    def test_read_csv(self, tmp_path):
        p = tmp_path / "r.csv"
        p.write_text("duration_h,intensity_mm_per_h\n1,2.5\n0.5,0\n")
        assert read_rain_csv(p) == [(1.0, 2.5), (0.5, 0.0)]


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0, 100), min_size=1, max_size=12), st.lists(st.floats(0, 50), min_size=12, max_size=12))
def test_monotone_in_forcing(base, extra):
    small = [(1.0, r) for r in base]
    large = [(1.0, r + e) for r, e in zip(base, extra)]
    s_small, m_small = swi_series(small)
    s_large, m_large = swi_series(large)
    assert all(b >= a - 1e-9 for a, b in zip(s_small, s_large))
    assert m_large >= m_small - 1e-9


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0, 200), min_size=1, max_size=12))
def test_storages_nonnegative(rain):
    _, _, final = integrate((0.0, 0.0, 0.0), [(1.0, r) for r in rain])
    assert min(float(s) for s in final) >= 0.0


def test_superposition_below_thresholds():
    r1 = [(1.0, 0.01), (1.0, 0.02), (1.0, 0.0)]
    r2 = [(1.0, 0.03), (1.0, 0.0), (1.0, 0.01)]
    both = [(1.0, a[1] + b[1]) for a, b in zip(r1, r2)]
    s1, _ = swi_series(r1)
    s2, _ = swi_series(r2)
    s12, _ = swi_series(both)
    assert np.allclose(np.add(s1, s2), s12, atol=1e-9)


class TestRaster:
    def test_uniform_stack_matches_scalar(self):
        stack = [Raster(np.full((3, 4), r), 250.0) for _, r in storm(6)]
        out = max_swi_raster(stack, 1.0)
        _, smax = swi_series(storm(6))
        assert np.all(out.values == out.values[0, 0])
        assert out.values[0, 0] == pytest.approx(smax, rel=1e-12)

    def test_single_wet_cell(self):
        frames = []
        for k in range(3):
            v = np.zeros((4, 4))
            v[1, 2] = 10.0
            frames.append(Raster(v))
        out = max_swi_raster(frames, 1.0)
        assert np.count_nonzero(out.values) == 1 and out.values[1, 2] > 0

    def test_two_profiles(self):
        a = [5.0, 20.0, 0.0, 1.0]
        b = [0.0, 40.0, 40.0, 3.0]
        frames = [Raster(np.array([[x, y]])) for x, y in zip(a, b)]
        out = max_swi_raster(frames, 1.0)
        assert out.values[0, 0] == pytest.approx(swi_series([(1.0, x) for x in a])[1], rel=1e-12)
        assert out.values[0, 1] == pytest.approx(swi_series([(1.0, y) for y in b])[1], rel=1e-12)

    def test_nodata_propagates(self):
        frames = [Raster(np.array([[1.0, -9999.0]])), Raster(np.array([[1.0, 2.0]]))]
        out = max_swi_raster(frames, 1.0)
        assert out.nodata_mask.tolist() == [[False, True]]

    def test_empty_stack(self):
        with pytest.raises(DomainError):
            max_swi_raster([], 1.0)
