import numpy as np
import pytest
import scipy.linalg

from bmhd.besov import DyadicLadder, block_weight_array
from bmhd.errors import InsufficientSignalError
from bmhd.expm import expm_batch
from bmhd.semigroup import (
    CompressibleDecomposition,
    LinearParams,
    block_decay_fit,
    compressible_decompose,
    compressible_reconstruct,
    decomposition_flow,
    dissipation_term,
    eigen_sweep,
    eta,
    grid_propagator,
    linear_decay_curve,
    lyapunov,
    lyapunov_dissipation_check,
    mode_matrix,
    mode_ode_matrix,
    propagate_mode,
    semigroup_apply,
    standard_sweep,
)
from bmhd.spectral import Grid, SpectralField, StateVector, leray_project, transform, zero_state


def random_mode(rng, d, xi, div_free=True):
    u = rng.standard_normal(1 + 2 * d) + 1j * rng.standard_normal(1 + 2 * d)
    if div_free:
        h = u[1 + d :]
        h -= np.asarray(xi) * (np.asarray(xi) @ h) / (np.asarray(xi) @ np.asarray(xi))
        u[1 + d :] = h
    return u


def random_state(grid, rng, blocks):
    from bmhd.spectral import nyquist_free_mask

    mask = np.zeros(grid.shape())
    for k in blocks:
        mask += block_weight_array(grid, k)
    mask *= nyquist_free_mask(grid)

    def f():
        c = transform(rng.standard_normal(grid.shape()), grid).coeffs * mask
        c[(0,) * grid.dim] = 0
        return SpectralField(grid, c)

    return StateVector(f(), tuple(f() for _ in range(grid.dim)),
                       leray_project(tuple(f() for _ in range(grid.dim))))


class TestExpmBatch:
    def test_against_scipy(self):
        rng = np.random.default_rng(0)
        a = (rng.standard_normal((200, 5, 5)) + 1j * rng.standard_normal((200, 5, 5)))
        a *= rng.gamma(1.0, 3.0, (200, 1, 1))
        ours, ref = expm_batch(a), scipy.linalg.expm(a)
        rel = np.abs(ours - ref).max(axis=(1, 2)) / np.abs(ref).max(axis=(1, 2))
        assert rel.max() < 1e-12

    def test_zero_matrix(self):
        e = expm_batch(np.zeros((3, 4, 4)))
        assert np.abs(e - np.eye(4)).max() < 1e-15


class TestModeMatrix:
    def test_zero_wavevector(self):
        p = LinearParams.for_dim(2)
        m = mode_matrix([0.0, 0.0], p)
        assert np.abs(m.matrix).max() == 0.0

    def test_hand_values_decoupled(self):
        # I = 0, xi = e1, d = 2: H rows diag(-1, -1); u rows -(2mu+lambda) = -1
        # on u1 and -mu on u2
        p = LinearParams.for_dim(2, mu_inf=0.25, background=False)
        m = mode_matrix([1.0, 0.0], p).matrix
        assert m[3, 3] == pytest.approx(-1.0)
        assert m[4, 4] == pytest.approx(-1.0)
        assert m[1, 1] == pytest.approx(-1.0)  # mu + (lambda+mu) = 2mu+lambda = 1
        assert m[2, 2] == pytest.approx(-0.25)
        assert m[0, 1] == pytest.approx(-1j)
        assert m[1, 0] == pytest.approx(-1j)
        assert np.abs(m[1:3, 3:]).max() == 0.0  # no magnetic coupling at I=0
        assert np.abs(m[3:, 1:3]).max() == 0.0

    def test_parallel_field_coupling(self):
        # xi parallel to I: gradient coupling terms -i xi (I.H) + i (I.xi) H
        # cancel on the parallel H component, leaving pure advective coupling
        p = LinearParams.for_dim(3)
        q = 0.8
        m = mode_matrix([q, 0.0, 0.0], p).matrix
        # H'_j = -|xi|^2 H_j + i (I.xi) u_j - i xi_j (u.I)... rows 4..6
        assert m[4, 4] == pytest.approx(-(q**2))
        assert m[5, 2] == pytest.approx(1j * q)
        assert m[6, 3] == pytest.approx(1j * q)
        # u-row coupling to H: -i xi_j I_l + i (I.xi) delta: row u2 (j=1) has
        # only the diagonal term
        assert m[2, 5] == pytest.approx(1j * q)
        assert np.abs(m[2, 4]) == 0.0

    def test_normalization_enforced(self):
        with pytest.raises(ValueError, match="normalization"):
            LinearParams(mu_inf=0.5, lambda_inf=0.5, i_vec=(1.0, 0.0))
        with pytest.raises(ValueError, match="unit"):
            LinearParams(mu_inf=0.5, lambda_inf=0.0, i_vec=(0.5, 0.0))


class TestPropagateMode:
    def test_t_zero_identity(self):
        rng = np.random.default_rng(0)
        p = LinearParams.for_dim(3)
        m = mode_matrix([0.3, -0.7, 0.2], p)
        u0 = random_mode(rng, 3, m.xi)
        assert np.abs(propagate_mode(m, 0.0, u0) - u0).max() < 1e-14

    def test_negative_time_rejected(self):
        p = LinearParams.for_dim(2)
        m = mode_matrix([1.0, 0.0], p)
        with pytest.raises(ValueError, match="nonnegative"):
            propagate_mode(m, -0.1, np.ones(5))

    def test_heat_decoupling_exact(self):
        rng = np.random.default_rng(1)
        p = LinearParams.for_dim(3, background=False)
        worst = 0.0
        for _ in range(200):
            xi = rng.standard_normal(3)
            xi *= np.exp(rng.uniform(np.log(0.05), np.log(3.0))) / np.linalg.norm(xi)
            t = rng.uniform(0.0, 10.0)
            u0 = np.zeros(7, dtype=complex)
            u0[4:] = rng.standard_normal(3) + 1j * rng.standard_normal(3)
            v = propagate_mode(mode_matrix(xi, p), t, u0)
            exact = np.exp(-(xi @ xi) * t) * u0[4:]
            worst = max(worst, np.abs(v[4:] - exact).max() / np.abs(exact).max())
            assert np.abs(v[:4]).max() == 0.0
        assert worst < 1e-12

    def test_semigroup_property(self):
        rng = np.random.default_rng(2)
        for d in (2, 3):
            p = LinearParams.for_dim(d)
            for _ in range(50):
                xi = rng.standard_normal(d) * rng.uniform(0.05, 4.0)
                m = mode_matrix(xi, p)
                u0 = random_mode(rng, d, xi)
                s, t = rng.uniform(0.05, 3.0, 2)
                a = propagate_mode(m, t, propagate_mode(m, s, u0))
                b = propagate_mode(m, s + t, u0)
                assert np.abs(a - b).max() < 1e-10 * max(np.abs(b).max(), 1e-12)


class TestSemigroupApply:
    GRID = Grid(2, 32, 2 * np.pi * 8)

    def test_t_zero(self):
        rng = np.random.default_rng(0)
        p = LinearParams.for_dim(2)
        lad = DyadicLadder.for_grid(self.GRID)
        st = random_state(self.GRID, rng, range(lad.k_min + 2, lad.k_max - 2))
        out = semigroup_apply(st, 0.0, p)
        for f, g in zip(st.fields(), out.fields()):
            assert np.abs(f.coeffs - g.coeffs).max() < 1e-13

    def test_single_mode_matches_mode_propagation(self):
        p = LinearParams.for_dim(2)
        grid = self.GRID
        c = np.zeros(grid.shape(), dtype=complex)
        k_idx = (3, 2)
        xi = np.array([grid.xi_vectors()[0][k_idx], grid.xi_vectors()[1][k_idx]])
        rng = np.random.default_rng(1)
        u0 = random_mode(rng, 2, xi)
        conj_idx = tuple((-i) % grid.n for i in k_idx)
        fields = []
        for comp in range(5):
            cc = c.copy()
            cc[k_idx] = u0[comp]
            cc[conj_idx] = np.conj(u0[comp])  # Hermitian partner: real field
            fields.append(SpectralField(grid, cc))
        st = StateVector(fields[0], tuple(fields[1:3]), tuple(fields[3:]))
        out = semigroup_apply(st, 1.7, p)
        expected = propagate_mode(mode_matrix(xi, p), 1.7, u0)
        got = np.array([f.coeffs[k_idx] for f in out.fields()])
        assert np.abs(got - expected).max() < 1e-11 * np.abs(expected).max()

    def test_preserves_div_h_and_symmetry(self):
        rng = np.random.default_rng(2)
        p = LinearParams.for_dim(2)
        lad = DyadicLadder.for_grid(self.GRID)
        st = random_state(self.GRID, rng, range(lad.k_min + 2, lad.k_max - 2))
        out = semigroup_apply(st, 2.0, p)
        assert out.div_h_defect() < 1e-10
        for f in out.fields():
            assert f.hermitian_defect() < 1e-12

    def test_lyapunov_norm_nonincreasing(self):
        # the Lyapunov-equivalent norm decays mode-wise, hence summed over
        # the grid, at every sampled time
        rng = np.random.default_rng(3)
        p = LinearParams.for_dim(2)
        lad = DyadicLadder.for_grid(self.GRID)
        sigma = 0.5 * p.mu_bar
        for _ in range(20):
            st = random_state(self.GRID, rng, range(lad.k_min + 2, lad.k_max - 2))
            prev = None
            for t in np.linspace(0.0, 5.0, 11):
                out = semigroup_apply(st, t, p)
                stack = out.to_stack()
                xi1, xi2 = (v.ravel() for v in self.GRID.xi_vectors())
                total = 0.0
                for i in np.nonzero(np.abs(stack).max(axis=1) > 1e-13)[0]:
                    xi = np.array([xi1[i], xi2[i]])
                    if xi @ xi == 0:
                        continue
                    dec = compressible_decompose(xi, stack[i])
                    total += lyapunov(dec, xi, sigma)
                if prev is not None:
                    assert total <= prev * (1 + 1e-9)
                prev = total


class TestDecomposition:
    def test_gradient_mode_has_no_rotation(self):
        xi = np.array([0.6, -0.2, 0.3])
        u = np.zeros(7, dtype=complex)
        u[1:4] = 1j * xi * 0.8  # u parallel to xi
        dec = compressible_decompose(xi, u)
        assert np.abs(dec.w).max() < 1e-14

    def test_orthogonal_mode_has_no_compression(self):
        xi = np.array([1.0, 0.0])
        u = np.zeros(5, dtype=complex)
        u[1:3] = [0.0, 2.3 + 1j]  # u orthogonal to xi
        dec = compressible_decompose(xi, u)
        assert abs(dec.v) < 1e-14

    def test_round_trip(self):
        rng = np.random.default_rng(0)
        for d in (2, 3):
            for _ in range(50):
                xi = rng.standard_normal(d) * rng.uniform(0.1, 3.0)
                u0 = random_mode(rng, d, xi)
                dec = compressible_decompose(xi, u0)
                rec = compressible_reconstruct(xi, dec)
                assert np.abs(rec - u0).max() < 1e-10 * np.abs(u0).max()

    def test_zero_wavevector_rejected(self):
        with pytest.raises(ValueError, match="xi = 0"):
            compressible_decompose(np.zeros(2), np.ones(5))

    def test_two_path_consistency(self):
        # evolve (a,u,H) by its matrix and (A,V,W,M) by the induced one:
        # decompositions agree, certifying the curl-matrix sign conventions
        rng = np.random.default_rng(1)
        for d in (2, 3):
            p = LinearParams.for_dim(d)
            for _ in range(10):
                xi = rng.standard_normal(d) * rng.uniform(0.1, 1.5)
                u0 = random_mode(rng, d, xi)
                m = mode_matrix(xi, p)
                dec0 = compressible_decompose(xi, u0)
                for t in (0.1, 1.0, 10.0):
                    via_state = compressible_decompose(xi, propagate_mode(m, t, u0))
                    via_ode = decomposition_flow(xi, dec0, p, t)
                    diff = np.abs(via_state.to_vector() - via_ode.to_vector()).max()
                    scale = max(np.abs(via_ode.to_vector()).max(), 1e-14)
                    assert diff < 1e-8 * scale


class TestLyapunov:
    def test_zero_state(self):
        dec = CompressibleDecomposition(0.0, 0.0, np.zeros((2, 2)), np.zeros((2, 2)))
        assert lyapunov(dec, [1.0, 0.0], 0.25) == 0.0

    def test_sigma_zero_is_plain_norm(self):
        rng = np.random.default_rng(0)
        xi = np.array([0.3, 0.4])
        u0 = random_mode(rng, 2, xi)
        dec = compressible_decompose(xi, u0)
        assert lyapunov(dec, xi, 0.0) == pytest.approx(dec.norm_sq())

    def test_matches_physical_mode_energy(self):
        # with div-free H the decomposition norm equals |(a,u,H)|^2
        rng = np.random.default_rng(1)
        for _ in range(20):
            xi = rng.standard_normal(3) * 0.7
            u0 = random_mode(rng, 3, xi)
            dec = compressible_decompose(xi, u0)
            assert dec.norm_sq() == pytest.approx(float(np.sum(np.abs(u0) ** 2)), rel=1e-10)

    def test_negative_sigma_rejected(self):
        dec = CompressibleDecomposition(0.0, 0.0, np.zeros((2, 2)), np.zeros((2, 2)))
        with pytest.raises(ValueError):
            lyapunov(dec, [1.0, 0.0], -0.1)

    def test_equivalence_with_weighted_stack(self):
        # C0^{-1} L^2 <= |(A, |xi|A, V, W, M)|^2 <= C0 L^2 with C0 stable
        rng = np.random.default_rng(2)
        p = LinearParams.for_dim(2, mu_inf=0.5)
        sigma = 0.5 * p.mu_bar
        ratios = []
        for _ in range(10000):
            xi = rng.standard_normal(2)
            xi *= rng.uniform(0.01, 2.0) / np.linalg.norm(xi)
            u0 = random_mode(rng, 2, xi)
            dec = compressible_decompose(xi, u0)
            l2 = lyapunov(dec, xi, sigma)
            stack = dec.norm_sq() + (xi @ xi) * abs(dec.a) ** 2
            ratios.append(stack / l2)
        ratios = np.asarray(ratios)
        c0 = max(ratios.max(), 1.0 / ratios.min())
        assert l2 > 0
        assert c0 < 10.0
        # plateau: the constant over half the samples nearly saturates it
        half = ratios[: len(ratios) // 2]
        c0_half = max(half.max(), 1.0 / half.min())
        assert c0 <= c0_half * 1.2


class TestDissipationCheck:
    def test_zero_state_passes(self):
        p = LinearParams.for_dim(2)
        rep = lyapunov_dissipation_check([0.5, 0.1], np.zeros(5), [0.0, 1.0], p)
        assert rep.passed

    def test_random_modes_pass(self):
        rng = np.random.default_rng(0)
        p = LinearParams.for_dim(2, mu_inf=0.5)
        for _ in range(25):
            xi = rng.standard_normal(2)
            xi *= np.exp(rng.uniform(np.log(0.02), np.log(2.0))) / np.linalg.norm(xi)
            u0 = random_mode(rng, 2, xi)
            rep = lyapunov_dissipation_check(xi, u0, np.linspace(0, 3, 7), p)
            assert rep.passed, rep.failures[:1]
            assert rep.max_identity_residual < 1e-8

    def test_density_identity_fd_vs_analytic(self):
        # d|A|^2/dt/2 + |xi| Re(A conj V) = 0 along the flow, via finite
        # differences against the ODE's analytic derivative
        rng = np.random.default_rng(1)
        p = LinearParams.for_dim(3)
        xi = np.array([0.4, -0.2, 0.1])
        u0 = random_mode(rng, 3, xi)
        dec0 = compressible_decompose(xi, u0)
        k = mode_ode_matrix(xi, p)
        h = 1e-5
        for t in (0.2, 1.0):
            zm = expm_batch((t - h) * k) @ dec0.to_vector()
            zp = expm_batch((t + h) * k) @ dec0.to_vector()
            z0 = expm_batch(t * k) @ dec0.to_vector()
            fd = (abs(zp[0]) ** 2 - abs(zm[0]) ** 2) / (2 * h)
            d0 = CompressibleDecomposition.from_vector(z0, 3)
            resid = 0.5 * fd + np.linalg.norm(xi) * (d0.a * np.conj(d0.v)).real
            assert abs(resid) < 1e-9 * max(d0.norm_sq(), 1e-30)

    def test_dissipation_positive_for_nonzero_states(self):
        rng = np.random.default_rng(2)
        p = LinearParams.for_dim(2, mu_inf=0.5)
        xi = np.array([0.6, 0.8])
        u0 = random_mode(rng, 2, xi)
        dec = compressible_decompose(xi, u0)
        assert dissipation_term(dec, xi, p) > 0

    def test_rho0_guard(self):
        p = LinearParams.for_dim(2)
        with pytest.raises(ValueError, match="rho0"):
            lyapunov_dissipation_check([100.0, 0.0], np.ones(5), [0.0], p)


class TestBlockDecay:
    GRID = Grid(2, 64, 2 * np.pi * 2**6)

    def test_pure_heat_block_rate(self):
        rng = np.random.default_rng(0)
        p = LinearParams.for_dim(2, background=False)
        k = -3
        st = random_state(self.GRID, rng, [k])
        z = SpectralField(self.GRID, np.zeros(self.GRID.shape(), dtype=complex))
        st_h = StateVector(z, (z, z), st.H)
        fit = block_decay_fit(st_h, k, p)
        assert 0.5 < fit.normalized_rate < 3.0

    def test_rate_quadruples_per_block(self):
        rng = np.random.default_rng(1)
        p = LinearParams.for_dim(2)
        st = random_state(self.GRID, rng, [-4, -3])
        f1 = block_decay_fit(st, -4, p)
        f2 = block_decay_fit(st, -3, p)
        assert f2.rate / f1.rate == pytest.approx(4.0, rel=0.5)

    def test_zero_block_rejected(self):
        p = LinearParams.for_dim(2)
        with pytest.raises(InsufficientSignalError):
            block_decay_fit(zero_state(self.GRID), -3, p)


class TestEigenSweep:
    def test_decoupled_closed_forms(self):
        p = LinearParams.for_dim(3, mu_inf=0.3, background=False)
        q = 1.7
        sweep = eigen_sweep(np.array([[q, 0.0, 0.0]]), p)
        eigs = np.sort_complex(sweep.eigenvalues[0])
        # H block: -q^2 triple; shear u: -mu q^2 double; sound pair: roots of
        # z^2 + q^2 z + q^2
        disc = np.sqrt(complex(q**4 - 4 * q**2))
        expected = np.sort_complex(
            np.array(
                [-(q**2)] * 3
                + [-p.mu_inf * q**2] * 2
                + [(-(q**2) + disc) / 2, (-(q**2) - disc) / 2]
            )
        )
        assert np.abs(eigs - expected).max() < 1e-10

    def test_margin_limit_small_xi(self):
        p = LinearParams.for_dim(3)
        vals = {}
        for mag in (1e-3, 1e-1):
            sweep = eigen_sweep(np.array([[mag, 0.0, 0.0]]), p)
            vals[mag] = sweep.margins[0]
        assert vals[1e-3] < 0 and vals[1e-1] < 0
        assert abs(vals[1e-3] - vals[1e-1]) < 0.2 * abs(vals[1e-3])

    def test_large_xi_sound_roots(self):
        p = LinearParams.for_dim(2, background=False)
        q = 1e3
        sweep = eigen_sweep(np.array([[q, 0.0]]), p)
        eigs = sweep.eigenvalues[0]
        assert np.all(eigs.real < 0)
        # one sound root near -1, the other near -(q^2 - 1)
        nearest = np.abs(eigs + 1.0).min()
        assert nearest < 0.01
        assert np.abs(eigs + q**2 - 1.0).min() < 0.1

    def test_standard_sweep_margin_negative(self):
        for d in (2, 3):
            sweep = standard_sweep(LinearParams.for_dim(d), 16, 24)
            assert sweep.worst_margin < 0

    def test_zero_sample_rejected(self):
        p = LinearParams.for_dim(2)
        with pytest.raises(ValueError, match="exclude"):
            eigen_sweep(np.zeros((1, 2)), p)

    def test_csv_output(self, tmp_path):
        p = LinearParams.for_dim(2)
        sweep = standard_sweep(p, 4, 6)
        path = tmp_path / "sweep.csv"
        sweep.write_csv(path)
        lines = path.read_text().splitlines()
        assert len(lines) == 1 + 24
        assert lines[0].startswith("magnitude,direction")


class TestLinearDecayCurve:
    def test_t_zero_matches_quadrature_norm(self):
        from bmhd.besov import BesovIndex, radial_quadrature_norm

        p = LinearParams.for_dim(3)
        prof = lambda rho: np.exp(-(rho**2)).astype(complex)
        lad = DyadicLadder.continuous(k_min=-14, k_max=6, k0=2)
        trace = linear_decay_curve(prof, [0.5], 2.0, [1e-9, 1.0], p, 3, ladder=lad,
                                   n_radial=96, n_theta=8, n_phi=6)
        direct = radial_quadrature_norm(prof, BesovIndex(0.5, 2, 1), lad, 3,
                                        part="low", n_nodes=96)
        assert trace.series("low_besov_s0.5")[0] == pytest.approx(direct, rel=1e-6)

    def test_invalid_regularity_rejected(self):
        p = LinearParams.for_dim(3)
        with pytest.raises(ValueError, match="s0"):
            linear_decay_curve(lambda rho: np.ones_like(rho, dtype=complex),
                               [-2.0], 2.0, [1.0, 2.0], p, 3)

    def test_heat_exponent_smoke(self):
        # heat-only surrogate (I = 0, pure H data): exponent -(s0+s)/2 in a
        # trimmed node budget
        p = LinearParams.for_dim(3, background=False)
        prof = lambda rho: np.exp(-(rho**2)).astype(complex)
        profiles = [None, None, None, None, prof, prof, prof]
        lad = DyadicLadder.continuous(k_min=-16, k_max=4, k0=2)
        t_grid = np.geomspace(30.0, 3000.0, 9)
        trace = linear_decay_curve(profiles, [0.0], 2.0, t_grid, p, 3, ladder=lad,
                                   n_radial=64, n_theta=6, n_phi=4)
        from bmhd.decay import fit_rate

        fit = fit_rate(trace, "low_besov_s0", (30.0, 3000.0))
        assert fit.exponent == pytest.approx(-0.75, rel=0.05)
