import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from resmatch.grid import Realization, ScalarField, make_grid
from resmatch.simulator import FluidProps, Schedule, SimState
from resmatch.wells import (
    RateSeries,
    WellError,
    WellSpec,
    build_well_features,
    equivalent_radius,
    peaceman_rate,
    rates_from_states,
)


class TestPeacemanRate:
    def test_unit_inputs(self):
        q = peaceman_rate(1.0, 1.0, 1.0, 1.0, 0.0, 1.0, 1.0, math.e, 1.0, 0.0)
        assert q == pytest.approx(2.0 * math.pi, rel=1e-12)

    def test_zero_drawdown(self):
        assert peaceman_rate(5.0, 0.3, 10.0, 250.0, 250.0, 1.0, 1.0, 2.0, 0.5, 0.0) == 0.0

    def test_direct_evaluation(self):
        # k*kr = 2, h = 3, dp = 5, re/rw = e^2 -> Q = 2*pi*2*3*5/2 = 30*pi
        q = peaceman_rate(2.0, 1.0, 3.0, 5.0, 0.0, 1.0, 1.0, math.e**2, 1.0, 0.0)
        assert q == pytest.approx(30.0 * math.pi, rel=1e-12)

    def test_nonpositive_denominator(self):
        with pytest.raises(WellError):
            peaceman_rate(1.0, 1.0, 1.0, 1.0, 0.0, 1.0, 1.0, 2.0, 1.0, -math.log(2.0))

    def test_linearity_in_drawdown(self):
        q1 = peaceman_rate(1.0, 0.5, 2.0, 300.0, 200.0, 1.0, 1.0, 3.0, 0.3, 0.0)
        q2 = peaceman_rate(1.0, 0.5, 2.0, 400.0, 200.0, 1.0, 1.0, 3.0, 0.3, 0.0)
        assert q2 == pytest.approx(2.0 * q1, rel=1e-12)


class TestEquivalentRadius:
    def test_unit_cells(self):
        g = make_grid(1, 1, 1, 1.0, 1.0, 1.0, [True])
        assert equivalent_radius(g) == pytest.approx(0.14 * math.sqrt(2.0), rel=1e-12)

    def test_fifty_foot_cells(self):
        g = make_grid(1, 1, 1, 50.0, 50.0, 20.0, [True])
        assert equivalent_radius(g) == pytest.approx(9.8995, rel=1e-4)

    def test_homogeneous_scaling(self):
        g1 = make_grid(1, 1, 1, 3.0, 4.0, 1.0, [True])
        g2 = make_grid(1, 1, 1, 6.0, 8.0, 1.0, [True])
        assert equivalent_radius(g2) == pytest.approx(2.0 * equivalent_radius(g1), rel=1e-12)


def two_producer_setup():
    g = make_grid(6, 6, 2, 50.0, 50.0, 20.0, np.ones(72, bool))
    perm = np.full(72, 100.0)
    real = Realization(ScalarField(g, perm, "perm"), ScalarField(g, np.full(72, 0.25)), {})
    wells = [
        WellSpec("P1", "producer", 1, 1, (0, 1), 100.0),
        WellSpec("P2", "producer", 4, 4, (0, 1), 100.0),
        WellSpec("I1", "water-injector", 0, 5, (0, 1), 300.0),
    ]
    return g, real, wells


class TestWellFeatures:
    def test_constant_fields(self):
        g, real, wells = two_producer_setup()
        state = SimState.uniform(g, 1234.0, 0.3, 0.1)
        state.time = 100.0
        feats = build_well_features(real, [state], wells)
        for row in feats.X[0]:
            np.testing.assert_allclose(row, [100.0, 1234.0, 0.3, 0.1, 0.6], rtol=1e-12)

    def test_shut_in_rows_zero(self):
        g, real, wells = two_producer_setup()
        state = SimState.uniform(g, 1234.0, 0.3, 0.1)
        state.time = 100.0
        sched = Schedule(dt=100.0, report_times=(100.0,), shut_ins=(("P1", 0.0, 100.0),))
        feats = build_well_features(real, [state], wells, sched)
        assert feats.shut[0, 0]
        np.testing.assert_array_equal(feats.X[0, 0], np.zeros(5))
        assert not feats.shut[0, 1]
        assert feats.X[0, 1, 0] == 100.0

    def test_perm_layer_average(self):
        g, real, wells = two_producer_setup()
        c0 = wells[0].cells(g)
        real.perm.values[c0[0]] = 1.0
        real.perm.values[c0[1]] = 3.0
        state = SimState.uniform(g, 1000.0, 0.3, 0.0)
        feats = build_well_features(real, [state], wells)
        assert feats.X[0, 0, 0] == pytest.approx(2.0, rel=1e-12)

    def test_so_column_consistency(self):
        g, real, wells = two_producer_setup()
        rng = np.random.default_rng(1)
        state = SimState.uniform(g, 1000.0, 0.3, 0.1)
        state.sw.values[:] = rng.uniform(0.2, 0.5, g.n_cells)
        state.sg.values[:] = rng.uniform(0.0, 0.2, g.n_cells)
        feats = build_well_features(real, [state], wells)
        np.testing.assert_allclose(
            feats.X[0, :, 4], 1.0 - feats.X[0, :, 2] - feats.X[0, :, 3], atol=1e-12
        )


class TestRatesFromStates:
    def test_zero_drawdown_zero_rates(self, fluid):
        g, real, wells = two_producer_setup()
        state = SimState.uniform(g, 100.0, 0.5, 0.0)  # cell pressure equals BHP
        state.time = 100.0
        rs = rates_from_states(real, [state], wells, fluid)
        np.testing.assert_array_equal(rs.data, 0.0)

    def test_no_water_at_connate(self, fluid):
        g, real, wells = two_producer_setup()
        state = SimState.uniform(g, 1000.0, fluid.s_wc, 0.0)
        state.time = 100.0
        rs = rates_from_states(real, [state], wells, fluid)
        assert np.all(rs.data[:, 1, :] == 0.0)  # water
        assert np.all(rs.data[:, 0, :] > 0.0)  # oil flows

    def test_drawdown_linearity(self, fluid):
        g, real, wells = two_producer_setup()
        s1 = SimState.uniform(g, 600.0, 0.5, 0.0)
        s2 = SimState.uniform(g, 1100.0, 0.5, 0.0)  # doubled drawdown vs BHP=100
        r1 = rates_from_states(real, [s1], wells, fluid)
        r2 = rates_from_states(real, [s2], wells, fluid)
        np.testing.assert_allclose(r2.data, 2.0 * r1.data, rtol=1e-12)

    def test_mobility_ratio(self, fluid):
        from resmatch.simulator import relative_permeability

        g, real, wells = two_producer_setup()
        state = SimState.uniform(g, 900.0, 0.5, 0.0)
        rs = rates_from_states(real, [state], [wells[0]], fluid)
        krw, kro, _ = relative_permeability(0.5, 0.0, fluid)
        expected = (krw / fluid.mu_w) / (kro / fluid.mu_o) * fluid.b_o / 1.0
        assert rs.data[0, 1, 0] / rs.data[0, 0, 0] == pytest.approx(expected, rel=1e-12)

    def test_shut_in_zero(self, fluid):
        g, real, wells = two_producer_setup()
        state = SimState.uniform(g, 1000.0, 0.5, 0.0)
        state.time = 100.0
        sched = Schedule(dt=100.0, report_times=(100.0,), shut_ins=(("P2", 50.0, 150.0),))
        rs = rates_from_states(real, [state], wells, fluid, sched)
        assert np.all(rs.data[:, :, 1] == 0.0)
        assert np.all(rs.data[0, :, 0] > 0.0)


class TestRateSeries:
    def test_flatten_order(self):
        data = np.arange(2 * 3 * 2, dtype=float).reshape(2, 3, 2)
        rs = RateSeries(("A", "B"), np.array([100.0, 200.0]), data)
        flat = rs.flatten()
        # (time, phase, well): t0 first, then phases, then wells
        assert flat[0] == data[0, 0, 0]
        assert flat[1] == data[0, 0, 1]
        assert flat[2] == data[0, 1, 0]
        assert flat[6] == data[1, 0, 0]

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 4), st.integers(1, 3), st.integers(0, 2**31 - 1))
    def test_flatten_bijection(self, n_t, n_w, seed):
        rng = np.random.default_rng(seed)
        data = rng.uniform(0, 100, (n_t, 3, n_w))
        times = np.arange(1, n_t + 1) * 100.0
        wells = tuple(f"W{i}" for i in range(n_w))
        rs = RateSeries(wells, times, data)
        back = RateSeries.unflatten(rs.flatten(), wells, times)
        assert np.array_equal(back.data, data)

    def test_csv_round_trip(self, tmp_path):
        import csv

        data = np.array([[[10.0, 20.0], [1.0, 2.0], [100.0, 200.0]]])
        rs = RateSeries(("A", "B"), np.array([100.0]), data)
        path = tmp_path / "rates.csv"
        rs.to_csv(path)
        with open(path) as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["time", "well", "phase", "rate"]
        assert len(rows) == 1 + 6
        assert rows[1] == ["100.0", "A", "oil", "10.0"]

    def test_vec_file_round_trip(self, tmp_path):
        data = np.random.default_rng(3).uniform(0, 10, (2, 3, 2))
        rs = RateSeries(("A", "B"), np.array([1.0, 2.0]), data)
        path = tmp_path / "rates.vec"
        rs.to_vec_file(path)
        raw = np.frombuffer(path.read_bytes(), dtype="<f8")
        assert np.array_equal(raw, rs.flatten())
