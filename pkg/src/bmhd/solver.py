"""Pseudo-spectral IMEX integration of the nonlinear perturbation system.

Time stepping is integrating-factor Heun: the stiff linear part is advanced
by the exact per-mode propagator (reusing the mode exponentials), the
nonlinearity

    f = -div(a u)
    g = g1 + ... + g6          (advection, pressure, viscous, coefficient
                                gradients, magnetic gradient, Lorentz)
    m = -H div u + H.grad u - u.grad H

explicitly at second order.  All quadratic products are formed pointwise in
physical space on 2/3-dealiased fields and re-truncated, and composition
fields (a/(1+a), viscosity increments, ...) are band-limited before entering
any product: inside the retained band every product is then an exact
convolution, so the viscous-stress split g3 + g4 agrees with the monolithic
divergence-form evaluation to machine precision, and the decomposition sum
identity g = sum g_i is exact.

Internally the state lives on the half spectrum (real-transform layout);
StateVector is the interface type at snapshot boundaries.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import _fft

from .errors import BlowUpError, VacuumProximityError
from .expm import expm_batch
from .semigroup import LinearParams, linear_matrices
from .spectral import Grid, SpectralField, StateVector, load_state, save_state

VACUUM_FLOOR = 0.1
ALIAS_MONITOR_THRESHOLD = 1e-8


@dataclass(frozen=True)
class FluidLaws:
    """Density-dependent viscosities and pressure law, normalized so that
    mu(1) > 0, lambda(1) + 2 mu(1) = 1 and P'(1) = 1."""

    mu_fn: object
    lambda_fn: object
    dpressure_fn: object  # P'(rho)
    label: str = "custom"

    def __post_init__(self):
        mu1, lam1 = float(self.mu_fn(1.0)), float(self.lambda_fn(1.0))
        if mu1 <= 0 or lam1 + 2 * mu1 <= 0:
            raise ValueError("require mu(1) > 0 and lambda(1) + 2 mu(1) > 0")
        if abs(2 * mu1 + lam1 - 1.0) > 1e-12:
            raise ValueError("normalization requires 2 mu(1) + lambda(1) = 1")
        if abs(float(self.dpressure_fn(1.0)) - 1.0) > 1e-12:
            raise ValueError("normalization requires P'(1) = 1")

    @property
    def mu_inf(self) -> float:
        return float(self.mu_fn(1.0))

    @property
    def lambda_inf(self) -> float:
        return float(self.lambda_fn(1.0))

    # composition functions, all vanishing at a = 0
    def pi1(self, a):
        return a / (1.0 + a)

    def pi2(self, a):
        return self.dpressure_fn(1.0 + a) / (1.0 + a) - 1.0

    def mu_tilde(self, a):
        return self.mu_fn(1.0 + a) - self.mu_fn(1.0)

    def lambda_tilde(self, a):
        return self.lambda_fn(1.0 + a) - self.lambda_fn(1.0)

    def composition(self, name: str):
        table = {
            "pi1": self.pi1,
            "pi2": self.pi2,
            "mu_tilde": self.mu_tilde,
            "lambda_tilde": self.lambda_tilde,
        }
        if name not in table:
            raise ValueError(f"unknown composition {name!r}, expected one of {sorted(table)}")
        return table[name]

    def linear_params(self, d: int, background: bool = True) -> LinearParams:
        i = tuple(1.0 if (j == 0 and background) else 0.0 for j in range(d))
        return LinearParams(mu_inf=self.mu_inf, lambda_inf=self.lambda_inf, i_vec=i)

    @staticmethod
    def gamma_law(mu_inf: float = 0.5, gamma: float = 1.4,
                  mu_slope: float = 0.3, lambda_slope: float = 0.1) -> "FluidLaws":
        lam_inf = 1.0 - 2 * mu_inf
        return FluidLaws(
            mu_fn=lambda rho: mu_inf + mu_slope * (rho - 1.0),
            lambda_fn=lambda rho: lam_inf + lambda_slope * (rho - 1.0),
            dpressure_fn=lambda rho: rho ** (gamma - 1.0),
            label=f"gamma-law(gamma={gamma}, mu={mu_inf}+{mu_slope}da, "
                  f"lambda={lam_inf}+{lambda_slope}da)",
        )

    @staticmethod
    def constant_coefficients(mu_inf: float = 0.5, gamma: float = 1.4) -> "FluidLaws":
        return FluidLaws(
            mu_fn=lambda rho: mu_inf + 0.0 * rho,
            lambda_fn=lambda rho: (1.0 - 2 * mu_inf) + 0.0 * rho,
            dpressure_fn=lambda rho: rho ** (gamma - 1.0),
            label=f"constant-mu(gamma={gamma}, mu={mu_inf})",
        )


@dataclass(frozen=True)
class SolverConfig:
    dt: float
    t_end: float
    dealias: float = 2.0 / 3.0
    cfl_check: bool = True
    cfl_limit: float = 0.5
    snapshot_stride: int = 10
    dense_window: float | None = None   # use snapshot_stride up to here ...
    late_stride: int | None = None      # ... then this stride
    nonlinear: bool = True

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if not 0 < self.dealias <= 1:
            raise ValueError("dealias fraction must lie in (0, 1]")
        if self.snapshot_stride < 1:
            raise ValueError("snapshot_stride must be >= 1")


# ---------------------------------------------------------------------------
# half-spectrum helpers
# ---------------------------------------------------------------------------


@lru_cache(maxsize=16)
def _half_geometry(dim, n, length, dealias):
    """xi arrays, dealias mask and L2 weights on the real-transform layout."""
    half = n // 2 + 1
    k_full = np.fft.fftfreq(n, 1.0 / n)
    k_half = np.arange(half, dtype=float)
    base = 2.0 * np.pi / length
    axes = []
    for ax in range(dim):
        k = k_half if ax == dim - 1 else k_full
        shape = [1] * dim
        shape[ax] = k.size
        axes.append((k * base).reshape(shape))
    shape = (n,) * (dim - 1) + (half,)
    xi = [np.broadcast_to(a, shape).copy() for a in axes]
    rho2 = sum(v**2 for v in xi)
    cut = dealias * (n // 2)
    keep = np.ones(shape, dtype=bool)
    for ax in range(dim):
        k = k_half if ax == dim - 1 else np.abs(k_full)
        shp = [1] * dim
        shp[ax] = k.size
        keep &= (k < cut + 1e-9).reshape(shp)
    # multiplicity of each half-layout mode in the full spectrum
    w = np.full(half, 2.0)
    w[0] = 1.0
    if n % 2 == 0:
        w[-1] = 1.0
    l2w = np.broadcast_to(w, shape).copy()
    for arr in (*xi, rho2, keep, l2w):
        arr.flags.writeable = False
    return tuple(xi), rho2, keep, l2w


class _HalfOps:
    def __init__(self, grid: Grid, dealias: float):
        self.grid = grid
        self.d = grid.dim
        self.n = grid.n
        self.shape = (grid.n,) * (grid.dim - 1) + (grid.n // 2 + 1,)
        self.xi, self.rho2, self.mask, self.l2w = _half_geometry(
            grid.dim, grid.n, grid.length, dealias
        )
        self.axes = tuple(range(-self.d, 0))
        self.scale = grid.n**grid.dim

    def irfft(self, spec):
        return _fft.irfftn(spec, s=self.grid.shape(), axes=self.axes) * self.scale

    def rfft_t(self, phys):
        """Forward transform of real fields, dealias-truncated."""
        return _fft.rfftn(phys, axes=self.axes) / self.scale * self.mask

    def l2(self, spec) -> float:
        return math.sqrt(float(np.sum(self.l2w * np.abs(spec) ** 2)) * self.grid.length**self.d)

    def to_half(self, f: SpectralField):
        return np.ascontiguousarray(f.coeffs[..., : self.n // 2 + 1])

    def to_full(self, half) -> np.ndarray:
        phys = np.fft.irfftn(half, s=self.grid.shape(), axes=self.axes)
        return np.fft.fftn(phys)

    def state_to_stack(self, state: StateVector):
        return np.stack([self.to_half(f) * self.mask for f in state.fields()])

    def stack_to_state(self, stack) -> StateVector:
        fields = [SpectralField(self.grid, self.to_full(c)) for c in stack]
        d = self.d
        return StateVector(fields[0], tuple(fields[1 : 1 + d]), tuple(fields[1 + d :]))

    def project_div_free(self, h_stack):
        """Leray projection of the magnetic block (in place on a copy)."""
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = np.where(self.rho2 > 0, 1.0 / self.rho2, 0.0)
        xidoth = sum(self.xi[j] * h_stack[j] for j in range(self.d))
        return np.stack([h_stack[j] - self.xi[j] * xidoth * inv for j in range(self.d)])


# ---------------------------------------------------------------------------
# nonlinear terms
# ---------------------------------------------------------------------------


class NonlinearTerms:
    """Pseudo-spectral evaluation of (f, g, m) with addressable g-parts."""

    def __init__(self, grid: Grid, laws: FluidLaws, i_vec, dealias: float = 2.0 / 3.0):
        self.ops = _HalfOps(grid, dealias)
        self.laws = laws
        self.i_vec = np.asarray(i_vec, dtype=float)
        self.d = grid.dim

    def evaluate(self, stack, parts: bool = False, monolithic: bool = False):
        """stack: (1+2d, half-shape) dealiased coefficients.

        Returns a dict with 'f', 'g', 'm' (half-spectrum), 'max_u',
        'alias_fraction'; with `parts` also 'g1'..'g6', with `monolithic`
        also 'g_monolithic' (viscous stress evaluated in divergence form).
        """
        ops, d = self.ops, self.d
        xi, mask = ops.xi, ops.mask
        stack = stack * mask
        a_h = stack[0]
        u_h = stack[1 : 1 + d]
        h_h = stack[1 + d :]
        lam_mu = self.laws.lambda_inf + self.laws.mu_inf
        mu = self.laws.mu_inf

        divu_h = sum(1j * xi[j] * u_h[j] for j in range(d))
        lap = -ops.rho2
        nA = 1 + 5 * d + 2 * d * d
        specA = np.empty((nA,) + ops.shape, dtype=complex)
        specA[0] = a_h
        specA[1 : 1 + d] = u_h
        specA[1 + d : 1 + 2 * d] = h_h
        pos = 1 + 2 * d
        for i in range(d):
            specA[pos + i] = 1j * xi[i] * a_h                    # da
        pos += d
        for i in range(d):
            for j in range(d):
                specA[pos + i * d + j] = 1j * xi[i] * u_h[j]     # du[i][j]
        pos += d * d
        for i in range(d):
            for j in range(d):
                specA[pos + i * d + j] = 1j * xi[i] * h_h[j]     # dH[i][j]
        pos += d * d
        for j in range(d):
            specA[pos + j] = lap * u_h[j]                        # Lap u
        pos += d
        for j in range(d):
            specA[pos + j] = 1j * xi[j] * divu_h                 # grad div u
        physA = ops.irfft(specA)
        pos = 0

        def take(count):
            nonlocal pos
            out = physA[pos : pos + count]
            pos += count
            return out

        a = take(1)[0]
        u = take(d)
        H = take(d)
        da = take(d)
        du = take(d * d).reshape(d, d, *a.shape)      # du[i, j] = d_i u_j
        dH = take(d * d).reshape(d, d, *a.shape)
        lapu = take(d)
        gdivu = take(d)
        divu = np.einsum("ii...->...", du)
        au_visc = mu * lapu + lam_mu * gdivu          # A u, pointwise combo
        divD = 0.5 * (lapu + gdivu)                   # div D(u)

        one_plus_a = 1.0 + a
        if one_plus_a.min() < VACUUM_FLOOR:
            raise VacuumProximityError(
                f"min(1+a) = {one_plus_a.min():.4f} below floor {VACUUM_FLOOR}"
            )
        max_u = float(np.sqrt(np.einsum("i...,i...->...", u, u)).max())

        # band-limit the viscosity increments: the stress split g3 + g4 then
        # agrees with the divergence-form stress exactly on retained modes
        comp_h = ops.rfft_t(
            np.stack([self.laws.mu_tilde(a), self.laws.lambda_tilde(a)])
        )
        specB = np.empty((2 + 2 * d,) + ops.shape, dtype=complex)
        specB[0] = comp_h[0]
        specB[1] = comp_h[1]
        for i in range(d):
            specB[2 + i] = 1j * xi[i] * comp_h[0]
            specB[2 + d + i] = 1j * xi[i] * comp_h[1]
        physB = ops.irfft(specB)
        qmu, qlam = physB[0], physB[1]
        dqmu = physB[2 : 2 + d]
        dqlam = physB[2 + d : 2 + 2 * d]
        # remaining compositions multiply both evaluation paths identically,
        # so they stay pointwise (their spectral tails are the monitored
        # aliasing floor of the rational terms)
        pi1 = a / one_plus_a
        pi2 = self.laws.pi2(a)
        rinv = 1.0 / one_plus_a

        dsym = 0.5 * (du + np.swapaxes(du, 0, 1))     # D(u)_ij
        i_vec = self.i_vec
        grad_ih = np.einsum("l,jl...->j...", i_vec, dH)   # d_j (I.H)
        i_gradh = np.einsum("l,lj...->j...", i_vec, dH)   # (I.grad) H_j

        nC = 8 * d
        prodC = np.empty((nC,) + a.shape)
        prodC[0:d] = a * u                                                   # au
        prodC[d : 2 * d] = -np.einsum("i...,ij...->j...", u, du)             # g1
        prodC[2 * d : 3 * d] = -(pi2 * da)                                   # g2
        prodC[3 * d : 4 * d] = 2.0 * qmu * divD + qlam * gdivu               # g3 inner
        prodC[4 * d : 5 * d] = (
            2.0 * np.einsum("ij...,i...->j...", dsym, dqmu) + divu * dqlam
        )                                                                    # g4 inner
        prodC[5 * d : 6 * d] = pi1 * au_visc                                 # pi1 * A u
        prodC[6 * d : 7 * d] = pi1 * (grad_ih - i_gradh)                     # g5
        prodC[7 * d : 8 * d] = (
            -H * divu
            + np.einsum("i...,ij...->j...", H, du)
            - np.einsum("i...,ij...->j...", u, dH)
        )                                                                    # m
        specC = ops.rfft_t(prodC)
        au_h = specC[0:d]
        g1 = specC[d : 2 * d]
        g2 = specC[2 * d : 3 * d]
        in3 = specC[3 * d : 4 * d]
        in4 = specC[4 * d : 5 * d]
        pau = specC[5 * d : 6 * d]
        g5 = specC[6 * d : 7 * d]
        m_h = specC[7 * d : 8 * d]

        f_h = -sum(1j * xi[j] * au_h[j] for j in range(d))
        # Lorentz bracket: (grad|H|^2)/2 - H.grad H, all pointwise quadratics
        bracket6 = (
            np.einsum("i...,ji...->j...", H, dH)
            - np.einsum("i...,ij...->j...", H, dH)
        )
        inner_phys = ops.irfft(np.concatenate([in3, in4]))
        g3 = ops.rfft_t(rinv * inner_phys[:d]) - pau
        g4 = ops.rfft_t(rinv * inner_phys[d : 2 * d])
        g6 = ops.rfft_t(-rinv * bracket6)

        g = g1 + g2 + g3 + g4 + g5 + g6
        # top third of the retained band: residual aliasing indicator
        band = np.sqrt(ops.rho2)
        cut = band[ops.mask].max()
        top = ops.mask & (band > (2.0 / 3.0) * cut)
        total = float(np.sum(ops.l2w * np.abs(stack) ** 2))
        high = float(np.sum((ops.l2w * top) * np.abs(stack) ** 2))
        out = {
            "f": f_h,
            "g": g,
            "m": m_h,
            "max_u": max_u,
            "alias_fraction": high / total if total > 0 else 0.0,
        }
        if parts:
            out.update(g1=g1, g2=g2, g3=g3, g4=g4, g5=g5, g6=g6)
        if monolithic:
            stress = [
                2.0 * qmu * dsym[i, j] + (qlam * divu if i == j else 0.0)
                for i in range(d)
                for j in range(d)
            ]
            s_h = ops.rfft_t(np.stack(stress)).reshape(d, d, *ops.shape)
            divs = np.stack(
                [sum(1j * xi[i] * s_h[i, j] for i in range(d)) for j in range(d)]
            )
            divs_phys = ops.irfft(divs)
            g_stress = ops.rfft_t(rinv * divs_phys)
            out["g_monolithic"] = g1 + g2 + (g_stress - pau) + g5 + g6
            out["g_stress_split"] = g3 + g4 + pau  # inner split without -pi1 Au
            out["g_stress_monolithic"] = g_stress
        return out

    def stack(self, result) -> np.ndarray:
        """(1+2d, ...) source stack in the state ordering."""
        return np.concatenate([result["f"][None], result["g"], result["m"]])


def nonlinear_terms(state: StateVector, laws: FluidLaws, i_vec=None,
                    dealias: float = 2.0 / 3.0, parts: bool = True):
    """Public wrapper: (f, g, m) as SpectralFields with addressable g-parts."""
    grid = state.grid
    if i_vec is None:
        i_vec = tuple(1.0 if j == 0 else 0.0 for j in range(grid.dim))
    nt = NonlinearTerms(grid, laws, i_vec, dealias)
    res = nt.evaluate(nt.ops.state_to_stack(state), parts=parts)

    def full(c):
        return SpectralField(grid, nt.ops.to_full(c))

    f = full(res["f"])
    g = tuple(full(c) for c in res["g"])
    m = tuple(full(c) for c in res["m"])
    extras = {}
    if parts:
        extras = {name: tuple(full(c) for c in res[name])
                  for name in ("g1", "g2", "g3", "g4", "g5", "g6")}
    return f, g, m, extras


# ---------------------------------------------------------------------------
# IMEX integrating-factor stepper
# ---------------------------------------------------------------------------


class IMEXStepper:
    """One-step map: exact linear propagation + explicit Heun nonlinearity.

        U* = E (U + dt N(U)),   U+ = E (U + dt/2 N(U)) + dt/2 N(U*)

    with E = exp(dt M) per mode.  With the nonlinearity disabled the step is
    exactly the linear semigroup.
    """

    def __init__(self, grid: Grid, laws: FluidLaws, params: LinearParams,
                 config: SolverConfig):
        if params.dim != grid.dim:
            raise ValueError("params dimension does not match grid")
        self.grid = grid
        self.laws = laws
        self.params = params
        self.config = config
        self.nt = NonlinearTerms(grid, laws, params.i_vec, config.dealias)
        ops = self.nt.ops
        xis = np.stack([v.ravel() for v in ops.xi], axis=-1)
        mats = linear_matrices(xis, params)
        self.propagator = expm_batch(config.dt * mats)  # (n_modes, m, m)
        self.div_defect_last = 0.0
        self.alias_fraction_last = 0.0

    def _apply_linear(self, stack):
        m = stack.shape[0]
        flat = stack.reshape(m, -1)
        out = np.einsum("kij,jk->ik", self.propagator, flat)
        return out.reshape(stack.shape)

    def _nonlinear(self, stack):
        if not self.config.nonlinear:
            self.alias_fraction_last = 0.0
            return np.zeros_like(stack), 0.0
        res = self.nt.evaluate(stack)
        self.alias_fraction_last = res["alias_fraction"]
        return self.nt.stack(res), res["max_u"]

    def step(self, stack):
        cfg = self.config
        n1, max_u = self._nonlinear(stack)
        if cfg.cfl_check and cfg.nonlinear:
            xi_max = math.sqrt(float(self.nt.ops.rho2.max()))
            if cfg.dt * max_u * xi_max > cfg.cfl_limit:
                raise ValueError(
                    f"dt={cfg.dt} violates the advective CFL bound "
                    f"{cfg.cfl_limit}/(max|u| xi_max) = "
                    f"{cfg.cfl_limit / max(max_u * xi_max, 1e-300):.3g}"
                )
        predictor = self._apply_linear(stack + cfg.dt * n1)
        n2, _ = self._nonlinear(predictor)
        out = self._apply_linear(stack + 0.5 * cfg.dt * n1) + 0.5 * cfg.dt * n2
        if not np.all(np.isfinite(out)):
            raise BlowUpError("non-finite state", diagnostics={"max_u": max_u})
        # measure div H drift, then re-project
        d = self.grid.dim
        ops = self.nt.ops
        h = out[1 + d :]
        div = sum(1j * ops.xi[j] * h[j] for j in range(d))
        hn = math.sqrt(float(np.sum(self.nt.ops.l2w * np.abs(h) ** 2)))
        self.div_defect_last = (
            math.sqrt(float(np.sum(ops.l2w * np.abs(div) ** 2))) / hn if hn > 0 else 0.0
        )
        out[1 + d :] = ops.project_div_free(h)
        return out * ops.mask


@dataclass
class Trajectory:
    """Recorded run: snapshot times/states plus per-step monitors."""

    grid: Grid
    times: list
    states: list
    monitors: dict = field(default_factory=dict)
    config: SolverConfig | None = None
    params: LinearParams | None = None
    laws_label: str = ""

    def state_at(self, t: float) -> StateVector:
        i = int(np.argmin(np.abs(np.asarray(self.times) - t)))
        return self.states[i]

    def window(self, t_lo: float, t_hi: float) -> "Trajectory":
        keep = [i for i, t in enumerate(self.times) if t_lo <= t <= t_hi]
        return Trajectory(
            grid=self.grid,
            times=[self.times[i] for i in keep],
            states=[self.states[i] for i in keep],
            monitors=self.monitors,
            config=self.config,
            params=self.params,
            laws_label=self.laws_label,
        )

    def save(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        files = []
        for i, st in enumerate(self.states):
            name = f"snapshot_{i:06d}.bmhd"
            save_state(directory / name, st)
            files.append(name)
        manifest = {
            "times": list(map(float, self.times)),
            "files": files,
            "grid": {"dim": self.grid.dim, "n": self.grid.n, "length": self.grid.length},
            "laws": self.laws_label,
            "monitors": {k: list(map(float, v)) for k, v in self.monitors.items()},
            "config": None
            if self.config is None
            else {k: getattr(self.config, k) for k in
                  ("dt", "t_end", "dealias", "snapshot_stride", "nonlinear")},
            "params": None
            if self.params is None
            else {"mu_inf": self.params.mu_inf, "lambda_inf": self.params.lambda_inf,
                  "i_vec": list(self.params.i_vec)},
        }
        path = directory / "manifest.json"
        path.write_text(json.dumps(manifest, sort_keys=True, indent=1))
        return path

    @staticmethod
    def load(manifest_path) -> "Trajectory":
        """Load a stored run.  Snapshots are complex64 on disk; the div-free
        magnetic constraint is re-imposed on load (the storage round-off
        otherwise leaves an O(1e-8) defect)."""
        from .spectral import leray_project

        manifest_path = Path(manifest_path)
        if manifest_path.is_dir():
            manifest_path = manifest_path / "manifest.json"
        manifest = json.loads(manifest_path.read_text())
        directory = manifest_path.parent
        states = []
        for name in manifest["files"]:
            st = load_state(directory / name)
            states.append(StateVector(st.a, st.u, leray_project(st.H)))
        g = manifest["grid"]
        params = None
        if manifest.get("params"):
            pr = manifest["params"]
            params = LinearParams(mu_inf=pr["mu_inf"], lambda_inf=pr["lambda_inf"],
                                  i_vec=tuple(pr["i_vec"]))
        return Trajectory(
            grid=Grid(g["dim"], g["n"], g["length"]),
            times=manifest["times"],
            states=states,
            monitors=manifest.get("monitors", {}),
            laws_label=manifest.get("laws", ""),
            params=params,
        )


def integrate(state0: StateVector, laws: FluidLaws, params: LinearParams,
              config: SolverConfig, progress=None) -> Trajectory:
    """Run the IMEX scheme from t = 0 to t_end, recording snapshots.

    Snapshots are taken every `snapshot_stride` steps; past `dense_window`
    the stride switches to `late_stride` (if configured).  Monitors record
    the per-step div-H drift (before re-projection) and the aliasing
    indicator.
    """
    stepper = IMEXStepper(state0.grid, laws, params, config)
    ops = stepper.nt.ops
    stack = ops.state_to_stack(state0)
    n_steps = int(round(config.t_end / config.dt))
    times = [0.0]
    states = [ops.stack_to_state(stack)]
    div_drift = []
    alias = []
    for i in range(1, n_steps + 1):
        stack = stepper.step(stack)
        t = i * config.dt
        div_drift.append(stepper.div_defect_last)
        alias.append(stepper.alias_fraction_last)
        stride = config.snapshot_stride
        if (
            config.dense_window is not None
            and config.late_stride is not None
            and t > config.dense_window
        ):
            stride = config.late_stride
        if i % stride == 0 or i == n_steps:
            times.append(t)
            states.append(ops.stack_to_state(stack))
        if progress is not None and i % max(1, n_steps // 20) == 0:
            progress(i, n_steps)
    monitors = {
        "div_h_drift": div_drift,
        "alias_fraction": alias,
        "max_div_h_drift": [max(div_drift)] if div_drift else [0.0],
    }
    if alias and max(alias) > ALIAS_MONITOR_THRESHOLD:
        monitors["alias_flag"] = [1.0]
    return Trajectory(
        grid=state0.grid,
        times=times,
        states=states,
        monitors=monitors,
        config=config,
        params=params,
        laws_label=laws.label,
    )


# ---------------------------------------------------------------------------
# effective velocity and reformulated-equation residuals
# ---------------------------------------------------------------------------


def random_perturbation(grid: Grid, seed: int, amplitude: float = 1e-3,
                        blocks=None) -> StateVector:
    """Reproducible low-frequency initial data: band-limited random (a, u, H)
    with div H = 0 and max|.| normalized to `amplitude` per field."""
    from .besov import DyadicLadder, block_weight_array
    from .spectral import leray_project, nyquist_free_mask, transform

    if blocks is None:
        lad = DyadicLadder.for_grid(grid)
        blocks = range(lad.k_min + 3, lad.k_min + 7)
    mask = np.zeros(grid.shape())
    for k in blocks:
        mask = mask + block_weight_array(grid, k)
    mask = mask * nyquist_free_mask(grid)
    rng = np.random.default_rng(seed)

    def f():
        c = transform(rng.standard_normal(grid.shape()), grid).coeffs * mask
        c[(0,) * grid.dim] = 0.0
        peak = np.abs(np.fft.ifftn(c) * grid.n**grid.dim).max()
        if peak == 0:
            return SpectralField(grid, c)
        return SpectralField(grid, c * (amplitude / peak))

    return StateVector(f(), tuple(f() for _ in range(grid.dim)),
                       leray_project(tuple(f() for _ in range(grid.dim))))


def effective_velocity(state: StateVector):
    """w = grad (-Delta)^{-1} (a - div u); the zero mode is dropped."""
    from .spectral import divergence, gradient, inverse_neg_laplacian

    grid = state.grid
    src = SpectralField(
        grid, state.a.coeffs - divergence(state.u).coeffs
    )
    pot = inverse_neg_laplacian(src)
    return gradient(pot)


def velocity_identity_residual(state: StateVector) -> float:
    """|| u - (w - grad (-Delta)^{-1} a + P u) || / ||u|| in stacked L^2."""
    from .spectral import gradient, inverse_neg_laplacian, leray_project, nyquist_free_mask

    w = effective_velocity(state)
    ga = gradient(inverse_neg_laplacian(state.a))
    pu = leray_project(state.u)
    num = 0.0
    den = 0.0
    mask = nyquist_free_mask(state.grid)
    for j in range(state.grid.dim):
        resid = (state.u[j].coeffs - (w[j].coeffs - ga[j].coeffs + pu[j].coeffs)) * mask
        num += float(np.sum(np.abs(resid) ** 2))
        den += float(np.sum(np.abs(state.u[j].coeffs) ** 2))
    return math.sqrt(num / den) if den > 0 else 0.0


def high_freq_residuals(traj: Trajectory, laws: FluidLaws, stride: int = 1) -> dict:
    """Residuals of the damped-transport / heat reformulation along a run.

    Checks, with centered time differences over `stride` snapshots:
      density:    d_t a + a - f + div w = 0
      eff. vel.:  d_t w - Lap w = grad(-Lap)^{-1}(f - div g) + w
                  - (-Lap)^{-1} grad a - grad(I.H)
      Leray part: d_t Pu - mu Lap Pu - I.grad H - Pg = 0
    Returns relative residual series (L^2, against the largest term).
    """
    from .spectral import (
        divergence,
        gradient,
        inverse_neg_laplacian,
        l2_norm_spectral,
        laplacian,
        leray_project,
    )

    times = np.asarray(traj.times, dtype=float)
    if times.size < 2 * stride + 1:
        raise ValueError("trajectory too short for the requested stride")
    dt_snap = np.diff(times)
    if np.abs(dt_snap - dt_snap[0]).max() > 1e-9 * dt_snap[0]:
        raise ValueError("centered differences need uniformly spaced snapshots")
    params = traj.params
    i_vec = np.asarray(params.i_vec) if params is not None else None
    mu = laws.mu_inf
    out = {"times": [], "a_eq": [], "w_eq": [], "pu_eq": []}
    grid = traj.grid

    def l2(fields):
        return l2_norm_spectral(fields)

    for i in range(stride, times.size - stride, stride):
        st = traj.states[i]
        stp, stm = traj.states[i + stride], traj.states[i - stride]
        h = times[i + stride] - times[i]
        f, g, m, _ = nonlinear_terms(st, laws, i_vec=i_vec, parts=False)
        w = effective_velocity(st)
        wp, wm = effective_velocity(stp), effective_velocity(stm)
        # density equation
        dta = SpectralField(grid, (stp.a.coeffs - stm.a.coeffs) / (2 * h))
        divw = divergence(w)
        resid_a = SpectralField(grid, dta.coeffs + st.a.coeffs - f.coeffs + divw.coeffs)
        scale_a = max(l2(dta), l2(st.a), l2(f), l2(divw), 1e-300)
        # effective-velocity equation
        src = SpectralField(grid, f.coeffs - divergence(g).coeffs)
        grad_src = gradient(inverse_neg_laplacian(src))
        ga = gradient(inverse_neg_laplacian(st.a))
        ih = sum(i_vec[l] * st.H[l].coeffs for l in range(grid.dim))
        grad_ih = gradient(SpectralField(grid, ih))
        resid_w = []
        scale_w = 1e-300
        for j in range(grid.dim):
            dtw = (wp[j].coeffs - wm[j].coeffs) / (2 * h)
            rhs = (
                grad_src[j].coeffs + w[j].coeffs - ga[j].coeffs - grad_ih[j].coeffs
            )
            lhs = dtw - laplacian(w[j]).coeffs
            resid_w.append(SpectralField(grid, lhs - rhs))
            scale_w = max(scale_w, l2(SpectralField(grid, lhs)), l2(SpectralField(grid, rhs)))
        # Leray-projected velocity equation
        pu = leray_project(st.u)
        pup, pum = leray_project(stp.u), leray_project(stm.u)
        pg = leray_project(g)
        resid_p = []
        scale_p = 1e-300
        for j in range(grid.dim):
            dtp = (pup[j].coeffs - pum[j].coeffs) / (2 * h)
            igh = sum(i_vec[l] * (1j * grid.xi_vectors()[l]) * st.H[j].coeffs
                      for l in range(grid.dim))
            lhs = dtp - mu * laplacian(pu[j]).coeffs - igh
            resid_p.append(SpectralField(grid, lhs - pg[j].coeffs))
            scale_p = max(scale_p, l2(SpectralField(grid, lhs)), l2(pg[j]))
        out["times"].append(float(times[i]))
        out["a_eq"].append(l2(resid_a) / scale_a)
        out["w_eq"].append(l2(tuple(resid_w)) / scale_w)
        out["pu_eq"].append(l2(tuple(resid_p)) / scale_p)
    return out


def duhamel_residual(traj: Trajectory, laws: FluidLaws, t_final: float | None = None,
                     quad_stride: int = 1) -> float:
    """Mismatch between the stored state and its integral-formula
    reconstruction

        U(t) = G(t) U(0) + int_0^t G(t - tau) (f, g, m)(tau) d tau

    with trapezoid quadrature on stored snapshots (sources recomputed from
    the states).  Relative stacked-L^2 error at t_final."""
    times = np.asarray(traj.times, dtype=float)
    if t_final is None:
        t_final = float(times[-1])
    idx = [i for i, t in enumerate(times) if t <= t_final + 1e-12]
    idx = idx[::quad_stride]
    if idx[-1] != len(times) - 1 and times[idx[-1]] < t_final - 1e-12:
        idx.append(int(np.argmin(np.abs(times - t_final))))
    sub_times = times[idx]
    t_final = float(sub_times[-1])
    params = traj.params
    config = traj.config
    stepper_ops = _HalfOps(traj.grid, config.dealias if config else 2.0 / 3.0)
    nt = NonlinearTerms(traj.grid, laws, params.i_vec,
                        config.dealias if config else 2.0 / 3.0)
    xis = np.stack([v.ravel() for v in stepper_ops.xi], axis=-1)
    mats = linear_matrices(xis, params)
    m_dim = 1 + 2 * traj.grid.dim

    def propagate(stack, t):
        e = expm_batch(t * mats)
        flat = stack.reshape(m_dim, -1)
        return np.einsum("kij,jk->ik", e, flat).reshape(stack.shape)

    rhs = propagate(stepper_ops.state_to_stack(traj.states[idx[0]]), t_final)
    if config is None or config.nonlinear:
        sources = []
        for i in idx:
            res = nt.evaluate(stepper_ops.state_to_stack(traj.states[i]))
            sources.append(propagate(nt.stack(res), t_final - times[i]))
        sources = np.stack(sources)
        weights = np.zeros(len(idx))
        dt_pairs = np.diff(sub_times)
        weights[:-1] += 0.5 * dt_pairs
        weights[1:] += 0.5 * dt_pairs
        rhs = rhs + np.tensordot(weights, sources, axes=(0, 0))
    target = stepper_ops.state_to_stack(traj.state_at(t_final))
    num = math.sqrt(float(np.sum(stepper_ops.l2w * np.abs(rhs - target) ** 2)))
    den = math.sqrt(float(np.sum(stepper_ops.l2w * np.abs(target) ** 2)))
    return num / den if den > 0 else num


def composition_apply(fn, a: SpectralField, laws: FluidLaws | None = None,
                      dealias: float = 2.0 / 3.0) -> SpectralField:
    """Apply a smooth law F with F(0) = 0 pointwise to the density
    perturbation: evaluate in physical space, transform back, dealias."""
    if isinstance(fn, str):
        if laws is None:
            raise ValueError("named compositions need a FluidLaws instance")
        fn = laws.composition(fn)
    grid = a.grid
    ops = _HalfOps(grid, dealias)
    phys = ops.irfft(ops.to_half(a)[None])[0]
    if (1.0 + phys).min() <= VACUUM_FLOOR:
        raise VacuumProximityError(
            f"min(1+a) = {(1.0 + phys).min():.4f} at or below floor {VACUUM_FLOOR}"
        )
    out_h = ops.rfft_t(fn(phys)[None])[0]
    return SpectralField(grid, ops.to_full(out_h))
