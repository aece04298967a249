import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _support import random_site, receiver_near, spread_sky, static_scenario, synth_epoch
from mirrorfix import SPEED_OF_LIGHT as C
from mirrorfix.errors import (
    DataError,
    DegenerateGeometry,
    NonConvergence,
    NoPairs,
    SingularNormalMatrix,
    Underdetermined,
)
from mirrorfix.geodesy import EcefPoint, SatelliteTable, enu_to_ecef, geodetic_to_ecef, range_between
from mirrorfix.measurements import Label, Measurement, MeasurementSet
from mirrorfix.simulator import generate, sky_position
from mirrorfix.solver_abs import (
    ScatterDelayEstimator,
    SolveOptions,
    TagConfig,
    dilution_of_precision,
    estimate_scatter_delay,
    estimate_tag_delays,
    extract_delay_pairs,
    geometry_rows,
    make_virtual_satellite,
    solve_position,
)

coord = st.floats(-3e7, 3e7, allow_nan=False)
points = st.builds(EcefPoint, coord, coord, coord)


class TestVirtualSatellite:
    def test_reflection_through_origin(self):
        vs = make_virtual_satellite(EcefPoint(1e7, 2e7, 0), EcefPoint(0, 0, 0))
        assert vs.position == EcefPoint(-1e7, -2e7, 0)

    def test_degenerate(self):
        p = EcefPoint(1e7, 2e7, 3e6)
        with pytest.raises(DegenerateGeometry):
            make_virtual_satellite(p, p)

    @given(points, points)
    def test_midpoint_and_radius(self, real, tag):
        if real == tag:
            return
        vs = make_virtual_satellite(real, tag).position
        mid = (vs.array + real.array) / 2
        assert np.linalg.norm(mid - tag.array) <= 1e-6
        assert abs(range_between(vs, tag) - range_between(real, tag)) <= 1e-6


class TestScatterDelayEstimator:
    def test_single_pair(self):
        assert estimate_scatter_delay([(1e-4, 1e-4 + 5e-8)]) == pytest.approx(5e-8, abs=1e-20)

    def test_ema(self):
        assert estimate_scatter_delay([(0.0, 4e-8), (0.0, 6e-8)], alpha=0.5, prior=4e-8) == pytest.approx(5e-8)

    def test_stateful_update(self):
        est = ScatterDelayEstimator(alpha=0.2)
        est.update(0.0, 1e-8)
        assert est.update(0.0, 2e-8) == pytest.approx(1e-8 + 0.2 * 1e-8)
        assert est.count == 2

    def test_no_pairs(self):
        with pytest.raises(NoPairs):
            estimate_scatter_delay([])

    def test_tag_config_rejects_negative_delay(self):
        with pytest.raises(DataError):
            TagConfig(EcefPoint(1, 2, 3), -1e-9, True)


class TestSolvePosition:
    def test_five_direct_zero_noise(self):
        rng = np.random.default_rng(1)
        rows, sats, _, rx, t_b, _ = synth_epoch(rng, 5)
        sol = solve_position(rows, sats)
        assert range_between(sol.position, rx) < 1e-3
        assert abs(sol.clock_bias_direct - t_b) < 1e-12
        assert sol.converged and sol.iterations <= 50

    def test_two_direct_two_virtual_known_ts(self):
        rng = np.random.default_rng(2)
        rows, sats, tag, rx, t_b, t_s = synth_epoch(rng, 2, 2)
        sol = solve_position(rows, sats, TagConfig(tag, t_s, True))
        assert range_between(sol.position, rx) < 1e-2
        assert abs(sol.clock_bias_direct - t_b) < 1e-9

    def test_estimate_mode_separates_biases(self):
        rng = np.random.default_rng(3)
        rows, sats, tag, rx, t_b, _ = synth_epoch(rng, 4, 2, ts=3e-8)
        sol = solve_position(rows, sats, TagConfig(tag), options=SolveOptions(estimate_ts=True))
        assert range_between(sol.position, rx) < 1e-3
        assert abs(sol.clock_bias_direct - t_b) < 1e-12
        assert abs(sol.clock_bias_scattered - (t_b + 3e-8)) < 1e-12
        assert sol.scatter_delay == pytest.approx(3e-8, abs=1e-12)

    def test_scattered_rows_need_delay(self):
        rng = np.random.default_rng(4)
        rows, sats, tag, *_ = synth_epoch(rng, 4, 1)
        with pytest.raises(DataError):
            solve_position(rows, sats, TagConfig(tag))

    def test_underdetermined(self):
        rng = np.random.default_rng(5)
        rows, sats, *_ = synth_epoch(rng, 3)
        with pytest.raises(Underdetermined):
            solve_position(rows, sats)
        rows, sats, tag, *_ = synth_epoch(rng, 3, 1)
        with pytest.raises(Underdetermined):
            solve_position(rows, sats, TagConfig(tag), options=SolveOptions(estimate_ts=True))

    def test_collinear_geometry(self):
        # every satellite on one line through the receiver: rank deficient
        rx = EcefPoint(6.371e6, 0, 0)
        d = np.array([1.0, 0.0, 0.0])
        sats = {i: EcefPoint.from_array(rx.array + s * 2e7 * d) for i, s in enumerate([1, 1.1, 1.2, 1.3, 1.4], 1)}
        rows = [Measurement(0, i, 40, range_between(p, rx)) for i, p in sats.items()]
        with pytest.raises(SingularNormalMatrix):
            solve_position(rows, sats, options=SolveOptions(warm_start=rx))

    def test_non_convergence(self):
        rng = np.random.default_rng(6)
        rows, sats, *_ = synth_epoch(rng, 5)
        with pytest.raises(NonConvergence):
            solve_position(rows, sats, options=SolveOptions(max_iter=1))
        sol = solve_position(rows, sats, options=SolveOptions(max_iter=1, strict=False))
        assert not sol.converged

    def test_warm_start_converges_faster(self):
        rng = np.random.default_rng(7)
        rows, sats, _, rx, *_ = synth_epoch(rng, 6)
        cold = solve_position(rows, sats)
        warm = solve_position(rows, sats, options=SolveOptions(warm_start=rx))
        assert warm.iterations < cold.iterations


class TestDop:
    def test_tetrahedron(self):
        u = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]]) / math.sqrt(3)
        g = np.hstack([-u, np.ones((4, 1))])
        assert dilution_of_precision(g) == pytest.approx(1.5, abs=0.2)
        assert dilution_of_precision(g) == pytest.approx(1.5, abs=1e-12)

    def test_near_collinear(self):
        base = np.array([0.0, 0.0, 1.0])
        u = [base + 1e-2 * np.array(v) for v in ([1, 0, 0], [0, 1, 0], [-1, -1, 0], [0.5, -0.5, 0])]
        u = np.array([v / np.linalg.norm(v) for v in u])
        assert dilution_of_precision(np.hstack([-u, np.ones((4, 1))])) > 100

    def test_singular(self):
        u = np.tile([0.0, 0.0, 1.0], (5, 1))
        with pytest.raises(SingularNormalMatrix):
            dilution_of_precision(np.hstack([-u, np.ones((5, 1))]))

    def test_virtual_satellite_reduces_dop(self):
        tag = geodetic_to_ecef(0.39, 1.99, 10.0)
        rx = enu_to_ecef([0.0, 0.0, 8.0], tag)  # receiver above the tag
        sats = [sky_position(tag, math.radians(a), math.radians(e)) for a, e in ((0, 70), (120, 72), (240, 68), (60, 75))]
        clustered = dilution_of_precision(geometry_rows(sats, rx))
        mixed = sats[:3] + [make_virtual_satellite(sats[3], tag).position]
        assert dilution_of_precision(geometry_rows(mixed, rx)) < clustered


def _oracle_ols(rows, sats, iters=100):
    """Independent Gauss-Newton with a pseudo-inverse, unit weights, one clock bias."""
    p = np.array([sats[m.svid].array for m in rows])
    rho = np.array([m.pseudorange for m in rows])
    x = np.zeros(4)
    for _ in range(iters):
        r = np.linalg.norm(p - x[:3], axis=1)
        h = np.hstack([-(p - x[:3]) / r[:, None], np.ones((len(rho), 1))])
        dx = np.linalg.pinv(h) @ (rho - r - x[3])
        x = x + dx
        if np.linalg.norm(dx[:3]) < 1e-10:
            break
    return x


def unit_var(_m):
    return 1.0


class TestInvariances:
    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.lists(st.floats(-1e5, 1e5), min_size=3, max_size=3))
    def test_translation_equivariance(self, seed, v):
        rng = np.random.default_rng(seed)
        rows, sats, tag, rx, _, t_s = synth_epoch(rng, 4, 2)
        a = solve_position(rows, sats, TagConfig(tag, t_s, True))
        v = np.array(v)
        sats2 = {k: EcefPoint.from_array(p.array + v) for k, p in sats.items()}
        b = solve_position(rows, sats2, TagConfig(EcefPoint.from_array(tag.array + v), t_s, True))
        assert np.linalg.norm(b.position.array - (a.position.array + v)) < 1e-6

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(-1e-3, 1e-3))
    def test_clock_invariance(self, seed, tau):
        rng = np.random.default_rng(seed)
        rows, sats, tag, _, _, _ = synth_epoch(rng, 5, 2, ts=4e-8)
        opts = SolveOptions(estimate_ts=True)
        a = solve_position(rows, sats, TagConfig(tag), options=opts)
        shifted = [replace(m, pseudorange=m.pseudorange + C * tau) for m in rows]
        b = solve_position(shifted, sats, TagConfig(tag), options=opts)
        assert range_between(a.position, b.position) < 1e-6
        assert abs(b.clock_bias_direct - a.clock_bias_direct - tau) < 1e-12
        assert abs(b.clock_bias_scattered - a.clock_bias_scattered - tau) < 1e-12

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_row_order(self, seed):
        rng = np.random.default_rng(seed)
        rows, sats, tag, _, _, t_s = synth_epoch(rng, 5, 2, sigma=3.0)
        tagc = TagConfig(tag, t_s, True)
        a = solve_position(rows, sats, tagc)
        perm = [rows[i] for i in rng.permutation(len(rows))]
        b = solve_position(perm, sats, tagc)
        assert range_between(a.position, b.position) < 1e-6

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_identity_weights_equal_ols(self, seed):
        rng = np.random.default_rng(seed)
        rows, sats, *_ = synth_epoch(rng, 7, sigma=3.0)
        sol = solve_position(rows, sats, variances=unit_var, options=SolveOptions(tol=1e-6))
        x = _oracle_ols(rows, sats)
        assert np.linalg.norm(sol.position.array - x[:3]) <= 1e-9 * np.linalg.norm(x[:3])
        assert sol.clock_bias_direct * C == pytest.approx(x[3], rel=1e-9, abs=1e-6)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_stationarity(self, seed):
        rng = np.random.default_rng(seed)
        rows, sats, *_ = synth_epoch(rng, 8, sigma=3.0)
        sol = solve_position(rows, sats, variances=unit_var)
        proj = sol.design.T @ (sol.weights * sol.residuals)
        assert np.linalg.norm(proj) < 1e-6 * np.linalg.norm(sol.residuals)


class TestDelayExtraction:
    def _scenario(self, seed, scatter=(7,)):
        rng = np.random.default_rng(seed)
        tag = random_site(rng)
        rx = receiver_near(rng, tag)
        sats = spread_sky(rng, tag, 7)
        return static_scenario(sats, tag, rx, clock_bias=2e-4, count=3, processing_delay=5e-9, scatter_svids=scatter)

    def test_geometric_excess_delay(self):
        sc = self._scenario(11)
        ms, truth = generate(sc)
        pairs = extract_delay_pairs(ms, sc.satellites, sc.tag.position, virtual=False)
        ts = estimate_scatter_delay(pairs[7])
        assert abs(ts - truth.at(0).sats[7].t_s) < 1e-12

    def test_virtual_delays_make_solver_exact(self):
        sc = self._scenario(12, scatter=(2, 5))
        ms, truth = generate(sc)
        tag = estimate_tag_delays(ms, sc.satellites, sc.tag.position)
        for svid in (2, 5):
            assert tag.delay_for(svid) == pytest.approx(truth.at(0).sats[svid].t_s_virtual, abs=1e-12)
        sol = solve_position(ms.at_epoch(0), sc.satellites.at(0), tag)
        assert range_between(sol.position, truth.at(0).receiver) < 1e-3

    def test_no_fix_means_no_pairs(self):
        rows = (Measurement(0, 1, 40, 2e7, 0.0, False, Label.SCATTERED),)
        with pytest.raises(NoPairs):
            extract_delay_pairs(MeasurementSet(rows), SatelliteTable({1: EcefPoint(2e7, 0, 0)}), EcefPoint(6.4e6, 0, 0))
