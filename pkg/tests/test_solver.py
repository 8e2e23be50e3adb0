"""Shallow-flow solver: initialisation, balance, ledgers, invariants and the compiled kernel."""

import numpy as np
import pytest

from dfhazard.errors import DomainError
from dfhazard.material import MaterialParams
from dfhazard.raster import Raster
from dfhazard.solver import (Ledger, SimState, SourceForcing, _active_window, _hydro_window,
                             _hydro_window_reference, initialize_sources, run, sediment_content, stable_dt, step)
from dfhazard.source_model import SourceRealization
from dfhazard.synthetic import valley_dem

from .conftest import plane

CLEAR = MaterialParams(delta_e=0.0, delta_d=0.0)


def advance(state, forcing, mat, n, ledger=None):
    for _ in range(n):
        state = step(state, forcing, mat, ledger)
    return state


def uneven_lake(n=32, level=3.0, seed=0):
    rng = np.random.default_rng(seed)
    x = np.arange(n)
    zb = 1.0 + 0.5 * np.sin(x[None, :] / 7.0) * np.cos(x[:, None] / 9.0) + 0.2 * rng.random((n, n))
    st = SimState.dry(Raster(zb))
    st.h[:] = level - zb
    return st


class InvariantRecorder:
    """Per-step checks of the erodible floor, concentration bounds and CFL limit."""

    def __init__(self, state0, mat):
        self.mat = mat
        self.limit = stable_dt(state0, mat)
        self.floor = state0.zb_initial - mat.D_e
        self.violations = []
        self.steps = 0

    def __call__(self, s, dt):
        self.steps += 1
        m = self.mat
        if dt > self.limit * (1 + 1e-12):
            self.violations.append(("cfl", s.nstep, dt, self.limit))
        if np.any(s.zb < self.floor - 1e-12):
            self.violations.append(("floor", s.nstep, float(np.min(s.zb - self.floor))))
        wet = s.h >= m.h_min
        C = s.hc[wet] / s.h[wet]
        if C.size and (C.min() < 0 or C.max() > m.C_star * (1 + 1e-12)):
            self.violations.append(("C", s.nstep, float(C.min()), float(C.max())))
        if np.any(s.hc < 0) or np.any(s.h < 0):
            self.violations.append(("sign", s.nstep))
        self.limit = stable_dt(s, m)


class TestState:
    def test_dry_rejects_nodata(self):
        with pytest.raises(DomainError):
            SimState.dry(Raster(np.array([[1.0, -9999.0]])))

    def test_velocity_accessors(self):
        st = SimState.dry(Raster(np.zeros((1, 2))))
        st.h[:] = [2.0, 0.0]
        st.qx[:] = [1.0, 0.0]
        st.hc[:] = [0.5, 0.0]
        assert st.u.tolist() == [[0.5, 0.0]] and st.C.tolist() == [[0.25, 0.0]]


class TestSources:
    def test_empty_realization_dry(self):
        dem = valley_dem(32)
        st = initialize_sources(SimState.dry(dem), SourceForcing(), MaterialParams())
        assert not st.h.any() and not st.hc.any()

    def test_one_source_block(self):
        dem = Raster(np.zeros((30, 30)), 1.0)
        coarse = Raster(np.zeros((3, 3)), 10.0)
        forcing = SourceForcing.from_realization(SourceRealization(((1, 2),), 0), coarse, dem)
        assert forcing.footprints == ((10, 20, 20, 30),)
        mat = MaterialParams(D_e=1.0, r_c=0.1)
        st = initialize_sources(SimState.dry(dem), forcing, mat)
        wet = st.h > 0
        assert wet.sum() == 100
        assert np.all(st.h[wet] == 1.5)
        assert np.allclose(st.C[wet], 0.2925, atol=1e-15)

    def test_overlap_rejected(self):
        with pytest.raises(DomainError):
            SourceForcing.from_blocks([(0, 5, 0, 5), (4, 8, 4, 8)], (10, 10))

    def test_duplicate_cells_rejected(self):
        with pytest.raises(DomainError):
            SourceRealization(((1, 1), (1, 1)), 0)

    def test_outside_grid_rejected(self):
        dem = Raster(np.zeros((20, 20)), 1.0)
        coarse = Raster(np.zeros((3, 3)), 10.0)
        with pytest.raises(DomainError):
            SourceForcing.from_realization(SourceRealization(((2, 2),), 0), coarse, dem)


class TestBalance:
    def test_still_column_flat_bed(self):
        st = SimState.dry(Raster(np.zeros((20, 20))))
        st.h[:] = 1.0
        out = advance(st, None, CLEAR.updated(n_m=1e-12), 200)
        assert np.max(np.abs(out.h - 1.0)) < 1e-14
        assert np.max(np.abs(out.qx)) == 0.0 and np.max(np.abs(out.qy)) == 0.0

    def test_lake_at_rest(self):
        st = uneven_lake()
        out = advance(st, None, CLEAR, 300)
        assert max(np.abs(out.u).max(), np.abs(out.v).max()) < 1e-8
        assert np.abs(out.h + out.zb - 3.0).max() < 1e-12

    def test_lake_with_dry_islands(self):
        """Emergent bed (dry cells above the water line) does not drive spurious flow."""
        st = uneven_lake(level=1.45, seed=3)
        np.maximum(st.h, 0.0, out=st.h)
        assert (st.h == 0).any() and (st.h > 0).any()
        out = advance(st, None, CLEAR, 300)
        assert max(np.abs(out.u).max(), np.abs(out.v).max()) < 1e-8

    def test_step_does_not_mutate(self):
        st = uneven_lake(16)
        before = st.copy()
        step(st, None, CLEAR)
        assert np.array_equal(st.h, before.h) and st.t == 0.0


class TestStep:
    def test_cfl(self):
        st = SimState.dry(Raster(np.zeros((10, 10))))
        st.h[:] = 2.0
        st.qx[:] = 2.0
        expect = 0.4 * 1.0 / (1.0 + 2 * np.sqrt(9.81 * 2.0))
        assert stable_dt(st, CLEAR) == pytest.approx(expect, rel=1e-14)

    def test_dry_domain_dt_max(self):
        assert stable_dt(SimState.dry(Raster(np.zeros((5, 5)))), CLEAR) == CLEAR.dt_max

    def test_t_end_respected(self):
        st = uneven_lake(16)
        out = step(st, None, CLEAR, t_end=1e-3)
        assert out.t == pytest.approx(1e-3)

    def test_inflow_stops_at_T_add(self):
        dem = valley_dem(32)
        f = SourceForcing.from_blocks([(4, 8, 14, 18)], dem.shape)
        mat = MaterialParams(T_add=0.3)
        st = initialize_sources(SimState.dry(dem), f, mat)
        led = Ledger()
        times = []
        while st.t < 1.0:
            st = step(st, f, mat, led)
            times.append(st.t)
        assert min(abs(t - 0.3) for t in times) < 1e-12
        assert led.inflow == pytest.approx(0.1 * 0.3 * 16, rel=1e-12)

    def test_rejects_nonpositive_dt(self):
        st = uneven_lake(8)
        with pytest.raises(DomainError):
            step(st, None, CLEAR, t_end=0.0)


class TestRun:
    def test_zero_sources_no_change(self):
        dem = valley_dem(32)
        res = run(dem, SourceForcing.from_blocks([], dem.shape), MaterialParams(), 30.0)
        assert np.all(res.delta_z.values == 0.0)
        assert res.steps == 60

    def test_ledger_closes_with_exchange_inflow_outflow(self):
        """A source near the downhill edge erodes, deposits, receives inflow and drains out of the grid."""
        dem = plane(40, 40, dzdx=-0.25)
        f = SourceForcing.from_blocks([(16, 24, 20, 28)], dem.shape)
        mat = MaterialParams(T_add=5.0)
        res = run(dem, f, mat, 20.0)
        led = res.ledger
        assert led.inflow > 0 and led.outflow_volume > 0 and led.outflow_sediment > 0
        assert led.eroded_volume > 0 and led.deposited_volume > 0
        vol, sed = led.relative_residuals()
        assert vol < 1e-6 and sed < 1e-6

    def test_ledger_closes_on_catchment(self):
        dem = valley_dem(64)
        f = SourceForcing.from_blocks([(4, 12, 20, 28), (10, 18, 38, 46)], dem.shape)
        res = run(dem, f, MaterialParams(), 60.0)
        vol, sed = res.ledger.relative_residuals()
        assert vol < 1e-6 and sed < 1e-6
        assert res.ledger.eroded_volume > 0 and res.ledger.deposited_volume > 0

    def test_invariants_every_step(self):
        dem = valley_dem(64)
        f = SourceForcing.from_blocks([(4, 12, 20, 28), (10, 18, 38, 46)], dem.shape)
        mat = MaterialParams()
        rec = InvariantRecorder(initialize_sources(SimState.dry(dem), f, mat), mat)
        res = run(dem, f, mat, 60.0, callback=rec)
        assert rec.steps == res.steps and rec.violations == []
        assert res.max_cfl_ratio <= 1.0
        assert res.delta_z.values.min() >= -mat.D_e - 1e-12

    def test_deterministic(self):
        dem = valley_dem(48)
        f = SourceForcing.from_blocks([(4, 10, 18, 24)], dem.shape)
        a = run(dem, f, MaterialParams(), 20.0)
        b = run(dem, f, MaterialParams(), 20.0)
        assert a.delta_z == b.delta_z and a.steps == b.steps

    def test_sediment_content_definition(self):
        dem = Raster(np.zeros((2, 2)))
        st = SimState.dry(dem)
        st.h[:] = 1.0
        st.hc[:] = 0.1
        mat = MaterialParams(D_e=2.0)
        assert sediment_content(st, mat) == pytest.approx(4 * 0.1 + mat.C_star * 2.0 * 4)

    def test_mirror_symmetric_twin_sources(self):
        """Twin sources placed symmetrically on a symmetric valley give a mirror-symmetric bed change."""
        dem = valley_dem(64, roughness=0.0)
        z = dem.values
        assert np.array_equal(z, z[:, ::-1])
        f = SourceForcing.from_blocks([(6, 14, 10, 18), (6, 14, 46, 54)], dem.shape)
        res = run(dem, f, MaterialParams(T_add=20.0), 30.0)
        if res.steps % 2:
            res = run(dem, f, MaterialParams(T_add=20.0), 30.0 + 1e-3)
        dz = res.delta_z.values
        assert np.abs(dz - dz[:, ::-1]).max() < 1e-6


class TestCompiledKernel:
    """The compiled hydrodynamic update agrees with the array-level reference implementation."""

    @staticmethod
    def compare(dem, blocks, mat, nsteps):
        f = SourceForcing.from_blocks(blocks, dem.shape)
        st = initialize_sources(SimState.dry(dem), f, mat)
        led = Ledger()
        worst = 0.0
        out_diff = 0.0
        for _ in range(nsteps):
            win = _active_window(st, f.mask)
            dt = stable_dt(st, mat, win)
            a, b = st.copy(), st.copy()
            la, lb = Ledger(), Ledger()
            _hydro_window(a, win, dt, mat, la)
            _hydro_window_reference(b, win, dt, mat, lb)
            for name in ("h", "qx", "qy", "hc"):
                worst = max(worst, float(np.abs(getattr(a, name) - getattr(b, name)).max()))
            out_diff = max(out_diff, abs(la.outflow_volume - lb.outflow_volume),
                           abs(la.outflow_sediment - lb.outflow_sediment))
            st = step(st, f, mat, led)
        return worst, out_diff, led

    def test_catchment(self):
        worst, out_diff, _ = self.compare(valley_dem(64), [(4, 12, 20, 28), (10, 18, 38, 46)],
                                          MaterialParams(), 120)
        assert worst < 1e-10 and out_diff < 1e-10

    def test_open_boundaries(self):
        """Flow leaving through every edge: sources hug all four sides of a dome."""
        n = 40
        c = np.arange(n) - n / 2 + 0.5
        dem = Raster(10.0 - 0.01 * (c[None, :] ** 2 + c[:, None] ** 2))
        worst, out_diff, led = self.compare(dem, [(0, 4, 18, 22), (36, 40, 18, 22), (18, 22, 0, 4),
                                                  (18, 22, 36, 40)], MaterialParams(), 80)
        assert led.outflow_volume > 0
        assert worst < 1e-10 and out_diff < 1e-10
