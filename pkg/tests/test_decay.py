import numpy as np
import pytest

from bmhd.besov import BesovIndex, DyadicLadder, besov_norm, block_lp_norms, hybrid_norm, phi
from bmhd.decay import (
    DecayTrace,
    TrajectoryNorms,
    check_admissible,
    d_p_functional,
    e_p_functional,
    fit_rate,
    predicted_rates,
    s_zero,
    smallness_report,
    t_bracket,
    torus_horizon,
)
from bmhd.errors import WindowError
from bmhd.semigroup import LinearParams, grid_propagator, semigroup_apply
from bmhd.spectral import Grid, SpectralField, StateVector, leray_project, transform, zero_state

GRID = Grid(2, 32, 2 * np.pi * 8)
LADDER = DyadicLadder.for_grid(GRID)


def plateau_block_state(grid, rng, k, amplitude=1.0):
    """State supported where phi_k is identically 1, so exactly one block."""
    rho = grid.xi_norm()
    band = (rho >= 4 / 3 * 2.0**k) & (rho <= 1.5 * 2.0**k)
    from bmhd.spectral import nyquist_free_mask

    band = band & nyquist_free_mask(grid)

    def f():
        c = transform(rng.standard_normal(grid.shape()), grid).coeffs * band
        return SpectralField(grid, c * amplitude)

    return StateVector(f(), tuple(f() for _ in range(grid.dim)),
                       leray_project(tuple(f() for _ in range(grid.dim))))


class TestFitRate:
    def make_trace(self, fn, t_lo=1.0, t_hi=1e3, n=40, meta=None):
        t = np.geomspace(t_lo, t_hi, n)
        return DecayTrace(times=t.tolist(), values={"v": fn(t).tolist()},
                          meta=meta or {"length": None})

    def test_pure_power_law_recovered(self):
        trace = self.make_trace(lambda t: 2.7 * t_bracket(t) ** -0.75)
        fit = fit_rate(trace, "v", (1.0, 1e3))
        assert fit.exponent == pytest.approx(-0.75, abs=1e-6)
        assert fit.r_squared > 1 - 1e-12

    def test_exponential_rejected_by_r2(self):
        trace = self.make_trace(lambda t: np.exp(-t), t_lo=0.5, t_hi=60.0)
        fit = fit_rate(trace, "v", (0.5, 60.0))
        assert fit.r_squared < 0.9

    def test_torus_horizon_enforced(self):
        length = 2 * np.pi * 16
        trace = self.make_trace(lambda t: t_bracket(t) ** -1.0,
                                meta={"length": length})
        horizon = torus_horizon(length)  # = 64
        with pytest.raises(WindowError, match="horizon"):
            fit_rate(trace, "v", (1.0, 2 * horizon))
        fit = fit_rate(trace, "v", (1.0, horizon * 0.9))
        assert fit.exponent == pytest.approx(-1.0, abs=1e-6)

    def test_window_needs_samples(self):
        trace = self.make_trace(lambda t: t_bracket(t) ** -1.0, n=10)
        with pytest.raises(WindowError, match="samples"):
            fit_rate(trace, "v", (900.0, 1000.0))

    def test_nonpositive_values_rejected(self):
        t = np.geomspace(1, 100, 20)
        trace = DecayTrace(times=t.tolist(),
                           values={"v": (np.cos(t) * 0.0).tolist()}, meta={})
        with pytest.raises(ValueError, match="positive"):
            fit_rate(trace, "v", (1.0, 100.0))

    def test_csv_round_trip(self, tmp_path):
        trace = self.make_trace(lambda t: t_bracket(t) ** -0.5,
                                meta={"length": 100.0, "d": 3})
        path = tmp_path / "trace.csv"
        trace.to_csv(path)
        back = DecayTrace.from_csv(path)
        assert back.meta == trace.meta
        assert back.times == pytest.approx(trace.times)
        assert back.series("v") == pytest.approx(trace.series("v"))


class TestPredictedRates:
    def test_classical_rate(self):
        assert predicted_rates(p=2, d=3, s=0.0) == pytest.approx(-0.75)

    def test_lebesgue_family_consistent(self):
        assert predicted_rates(d=3, r=2, l=0.0) == pytest.approx(-0.75)
        # r = 3 is the largest integrability carrying l = 0 in d = 3
        assert predicted_rates(d=3, r=3, l=0.0) == pytest.approx(-1.0)
        assert predicted_rates(d=3, r=np.inf, l=-1.0) == pytest.approx(-1.0)

    def test_d2_p4_rejected(self):
        with pytest.raises(ValueError, match="p = 4"):
            predicted_rates(p=4, d=2, s=0.0)

    def test_range_errors_name_condition(self):
        with pytest.raises(ValueError, match="s0"):
            predicted_rates(p=2, d=3, s=-2.0)
        with pytest.raises(ValueError, match="velocity"):
            predicted_rates(p=2, d=3, s=1.2, quantity="velocity")
        with pytest.raises(ValueError, match="d/2"):
            predicted_rates(d=3, r=2, l=3.0)

    def test_antitone_slope_half(self):
        for d, p in ((3, 2.0), (2, 3.0)):
            cap = d / p
            s_vals = np.linspace(-s_zero(p, d) + 0.1, cap, 7)
            rates = [predicted_rates(p=p, d=d, s=float(s)) for s in s_vals]
            diffs = np.diff(rates) / np.diff(s_vals)
            assert np.allclose(diffs, -0.5, atol=1e-12)

    def test_admissibility(self):
        check_admissible(2.0, 3)
        check_admissible(3.9, 2)
        with pytest.raises(ValueError):
            check_admissible(1.5, 3)
        with pytest.raises(ValueError):
            check_admissible(4.5, 3)


class TestEpFunctional:
    def test_zero_trajectory(self):
        times = [0.0, 1.0, 2.0]
        states = [zero_state(GRID)] * 3
        total, parts = e_p_functional(times, states, 2.0, LADDER)
        assert total == 0.0
        assert all(v == 0.0 for v in parts.values())

    def test_constant_single_block_closed_form(self):
        rng = np.random.default_rng(0)
        k = LADDER.k_min + 2  # strictly below the low/high overlap
        st = plateau_block_state(GRID, rng, k)
        T = 2.0
        times = np.linspace(0.0, T, 41)
        states = [st] * times.size
        d, p = GRID.dim, 2.0
        total, parts = e_p_functional(times.tolist(), states, p, LADDER)
        comp_norms = [block_lp_norms(g, LADDER, 2.0) for g in (st.a, st.u, st.H)]
        ki = list(LADDER.blocks).index(k)
        base = sum(c[ki] for c in comp_norms)
        assert parts["low_linf"] == pytest.approx(2.0 ** (k * (d / 2 - 1)) * base, rel=1e-10)
        assert parts["low_l1"] == pytest.approx(
            T * 2.0 ** (k * (d / 2 + 1)) * base, rel=1e-10
        )
        assert parts["high_a_linf"] == 0.0
        assert parts["high_uh_l1"] == 0.0

    def test_inadmissible_p(self):
        with pytest.raises(ValueError):
            e_p_functional([0.0, 1.0], [zero_state(GRID)] * 2, 1.0, LADDER)


class TestDpFunctional:
    def test_zero_trajectory(self):
        total, parts = d_p_functional([0.0, 1.0, 2.0], [zero_state(GRID)] * 3, 2.0, LADDER)
        assert total == 0.0

    def test_interval_and_alpha(self):
        grid3 = Grid(3, 8, 2 * np.pi * 2)
        lad3 = DyadicLadder.for_grid(grid3)
        eps = 0.07
        total, parts = d_p_functional([0.0, 1.0], [zero_state(grid3)] * 2, 2.0,
                                      lad3, eps=eps)
        assert parts["alpha"] == pytest.approx(3 / 2 + 0.5 - eps)
        assert parts["s_interval"][0] == pytest.approx(eps - 1.5)
        assert parts["s_interval"][1] == pytest.approx(2.5)

    def test_heat_surrogate_trajectory(self):
        # I = 0, data in H only: every mode decays like exp(-|xi|^2 t)
        rng = np.random.default_rng(1)
        params = LinearParams.for_dim(2, background=False)
        k = LADDER.k_min + 4
        base = plateau_block_state(GRID, rng, k, amplitude=1e-2)
        z = SpectralField(GRID, np.zeros(GRID.shape(), dtype=complex))
        st0 = StateVector(z, (z, z), base.H)
        times = np.linspace(0.0, 8.0, 17)
        states = [semigroup_apply(st0, float(t), params) for t in times]
        total, parts = d_p_functional(times.tolist(), states, 2.0, LADDER)
        assert np.isfinite(total) and total > 0
        assert parts["low_sup_argmax_s"] is not None
        # cross-check term1 at the top endpoint with the hybrid-norm path and
        # the analytic heat decay of the block
        s_end = GRID.dim / 2 + 1
        s0 = s_zero(2.0, GRID.dim)
        idx = BesovIndex(s_end, 2, 1)
        w = t_bracket(times) ** ((s0 + s_end) / 2)
        direct = max(
            wi * sum(hybrid_norm(g, idx, LADDER, "low") for g in (s.a, s.u, s.H))
            for wi, s in zip(w, states)
        )
        assert parts["low_weighted_sup"] >= direct * (1 - 1e-10)
        rho_mid = 1.4 * 2.0**k  # representative frequency of the plateau band
        analytic = [np.exp(-(rho_mid**2) * t) for t in times]
        series = [
            sum(hybrid_norm(g, idx, LADDER, "low") for g in (s.a, s.u, s.H))
            for s in states
        ]
        ratio = np.array(series) / (series[0] * np.array(analytic))
        assert 0.5 < ratio.min() <= ratio.max() < 2.0

    def test_monotone_in_time(self):
        rng = np.random.default_rng(2)
        params = LinearParams.for_dim(2)
        st0 = plateau_block_state(GRID, rng, LADDER.k_min + 4, amplitude=1e-2)
        times = np.linspace(0.0, 4.0, 9)
        states = [semigroup_apply(st0, float(t), params) for t in times]
        prev = 0.0
        for n in range(2, times.size + 1):
            total, _ = d_p_functional(times[:n].tolist(), states[:n], 2.0, LADDER)
            assert total >= prev * (1 - 1e-12)
            prev = total

    def test_eps_validation(self):
        with pytest.raises(ValueError, match="eps"):
            d_p_functional([0.0, 1.0], [zero_state(GRID)] * 2, 2.0, LADDER, eps=0.7)
        with pytest.raises(ValueError, match="17"):
            d_p_functional([0.0, 1.0], [zero_state(GRID)] * 2, 2.0, LADDER, n_s=5)

    def test_eps0_variant(self):
        total, parts = d_p_functional([0.0, 1.0], [zero_state(GRID)] * 2, 2.0,
                                      LADDER, eps0_variant=True)
        assert parts["s_interval"][0] == pytest.approx(-s_zero(2.0, GRID.dim))
        assert parts["alpha"] == pytest.approx(GRID.dim / 2 + 0.5)


class TestSmallness:
    def test_zero_data(self):
        rep = smallness_report(zero_state(GRID), 2.0, LADDER)
        assert rep["existence_size"] == 0.0
        assert rep["decay_size"] == 0.0
        assert rep["existence_small"] and rep["decay_small"]

    def test_single_low_block_closed_form(self):
        rng = np.random.default_rng(0)
        k = LADDER.k_min + 3
        st = plateau_block_state(GRID, rng, k, amplitude=1e-3)
        rep = smallness_report(st, 2.0, LADDER)
        s0 = s_zero(2.0, GRID.dim)
        expected = sum(
            2.0 ** (-k * s0) * block_lp_norms(g, LADDER, 2.0)[list(LADDER.blocks).index(k)]
            for g in (st.a, st.u, st.H)
        )
        assert rep["decay_size"] == pytest.approx(expected, rel=1e-10)

    def test_high_only_data_has_zero_decay_size(self):
        rng = np.random.default_rng(1)
        k = LADDER.k0 + 1
        st = plateau_block_state(GRID, rng, k, amplitude=1e-3)
        rep = smallness_report(st, 2.0, LADDER)
        assert rep["decay_size"] == 0.0
        assert rep["existence_size"] > 0.0

    def test_div_h_precondition(self):
        rng = np.random.default_rng(2)
        st = plateau_block_state(GRID, rng, LADDER.k_min + 3)
        bad = StateVector(st.a, st.u, st.u)  # u is not divergence-free
        with pytest.raises(ValueError, match="div H"):
            smallness_report(bad, 2.0, LADDER)
