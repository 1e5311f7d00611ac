"""Time-weighted decay functionals, rate fitting and predicted rates.

The two functionals evaluated on trajectories:

  E_p(t): low-frequency L~inf(B^{d/2-1}_{2,1}) + L^1(B^{d/2+1}_{2,1}) of
          (a,u,H) plus the high-frequency tilde-L^inf/L^1 pieces of a and
          (u,H) at their critical indices;
  D_p(t): sup over s in [eps-s0, d/2+1] of the <tau>^{(s0+s)/2}-weighted
          low norm, the <tau>^alpha-weighted high norm of (grad a, u, H),
          and the tau-weighted high norm of grad(u,H), alpha = d/p+1/2-eps.

Norms of tuples follow ||(f,g)|| = ||f|| + ||g||; vector fields are measured
through their pointwise Euclidean magnitude.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .besov import BesovIndex, DyadicLadder, block_lp_norms, hybrid_norm
from .errors import WindowError
from .spectral import StateVector, derivative

# ---------------------------------------------------------------------------
# traces and fits
# ---------------------------------------------------------------------------


@dataclass
class DecayTrace:
    """Named time series of norm values plus run metadata."""

    times: list
    values: dict
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.times)
        for name, series in self.values.items():
            if len(series) != n:
                raise ValueError(f"series {name!r} length {len(series)} != {n} times")
            if not np.all(np.isfinite(series)):
                raise ValueError(f"series {name!r} contains non-finite values")

    def series(self, name: str) -> np.ndarray:
        return np.asarray(self.values[name], dtype=float)

    def to_csv(self, path):
        times = np.asarray(self.times, dtype=float)
        names = sorted(self.values)
        with open(path, "w", newline="") as fh:
            fh.write("# meta: " + json.dumps(self.meta, sort_keys=True) + "\n")
            writer = csv.writer(fh)
            writer.writerow(["t", "t_bracket"] + names)
            for i, t in enumerate(times):
                row = [f"{t:.17g}", f"{math.hypot(1.0, t):.17g}"]
                row += [f"{self.values[n][i]:.17g}" for n in names]
                writer.writerow(row)

    @staticmethod
    def from_csv(path) -> "DecayTrace":
        meta = {}
        with open(path, newline="") as fh:
            first = fh.readline()
            if first.startswith("# meta:"):
                meta = json.loads(first[len("# meta:"):])
                header = fh.readline()
            else:
                header = first
            names = next(csv.reader([header]))
            if names[:2] != ["t", "t_bracket"]:
                raise ValueError(f"unrecognized trace header: {names[:2]}")
            rows = list(csv.reader(fh))
        times = [float(r[0]) for r in rows]
        values = {n: [float(r[2 + i]) for r in rows] for i, n in enumerate(names[2:])}
        return DecayTrace(times=times, values=values, meta=meta)


@dataclass
class RateFit:
    exponent: float
    intercept: float
    window: tuple
    r_squared: float
    n_samples: int


def t_bracket(t):
    """<t> = sqrt(1 + t^2)."""
    return np.sqrt(1.0 + np.asarray(t, dtype=float) ** 2)


def torus_horizon(length: float) -> float:
    """Largest time with algebraic decay observable on a torus of side L."""
    return (length / (2 * math.pi)) ** 2 / 4.0


def fit_rate(trace: DecayTrace, name: str, window: tuple,
             min_samples: int = 8) -> RateFit:
    """Least-squares exponent of value ~ <t>^sigma on log-log axes.

    Refuses fit windows that exceed the torus validity horizon of grid-based
    traces, demands at least `min_samples` strictly positive samples.
    """
    t_lo, t_hi = window
    if not t_lo < t_hi:
        raise WindowError(f"empty window {window}")
    length = trace.meta.get("length")
    if length is not None:
        horizon = torus_horizon(length)
        if t_hi > horizon:
            raise WindowError(
                f"window end {t_hi} exceeds torus horizon {horizon:.3g} for L={length}"
            )
    times = np.asarray(trace.times, dtype=float)
    vals = trace.series(name)
    keep = (times >= t_lo) & (times <= t_hi)
    if keep.sum() < min_samples:
        raise WindowError(f"only {int(keep.sum())} samples in window, need {min_samples}")
    t, v = times[keep], vals[keep]
    if np.any(v <= 0):
        raise ValueError("fit requires strictly positive values in the window")
    x = np.log(t_bracket(t))
    y = np.log(v)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss if ss > 0 else 1.0
    return RateFit(exponent=float(slope), intercept=float(intercept),
                   window=(float(t_lo), float(t_hi)), r_squared=r2,
                   n_samples=int(keep.sum()))


# ---------------------------------------------------------------------------
# admissibility and predicted exponents
# ---------------------------------------------------------------------------


def check_admissible(p: float, d: int):
    """Integrability window 2 <= p <= min(4, 2d/(d-2)), p != 4 when d = 2."""
    hi = 4.0 if d == 2 else min(4.0, 2.0 * d / (d - 2))
    if not 2.0 <= p <= hi:
        raise ValueError(f"p={p} violates 2 <= p <= min(4, 2d/(d-2)) = {hi} for d={d}")
    if d == 2 and p == 4.0:
        raise ValueError("p = 4 is excluded in dimension 2")


def s_zero(p: float, d: int) -> float:
    return 2.0 * d / p - d / 2.0


def predicted_rates(p: float | None = None, d: int = 3, s: float | None = None,
                    quantity: str = "density", r: float | None = None,
                    l: float | None = None) -> float:
    """Predicted time-decay exponent of <t>^sigma laws.

    Two parameter families:
      * (p, d, s): exponent -(s0+s)/2 of ||Lambda^s field||_{L^p}, valid for
        -s0 < s <= d/p for the density and -s0 < s <= d/p - 1 for velocity
        and magnetic field;
      * (d, r, l) with p = 2: exponent -(d/2)(1-1/r) - l/2 of the L^r norm,
        valid for 2 <= r <= inf and -d/2 < l + d(1/2-1/r) <= d/2 - 1.
    """
    if r is not None or l is not None:
        if r is None or l is None:
            raise ValueError("r and l must be given together")
        if p is not None and p != 2:
            raise ValueError("the (r, l) rate family requires p = 2")
        if not 2 <= r:
            raise ValueError(f"r={r} violates 2 <= r <= inf")
        shift = l + d * (0.5 - 1.0 / r)
        if not (-d / 2 < shift <= d / 2 - 1):
            raise ValueError(
                f"l + d(1/2 - 1/r) = {shift} violates -d/2 < . <= d/2 - 1"
            )
        return -(d / 2.0) * (1.0 - 1.0 / r) - l / 2.0
    if p is None or s is None:
        raise ValueError("provide (p, d, s) or (d, r, l)")
    check_admissible(p, d)
    s0 = s_zero(p, d)
    cap = d / p if quantity == "density" else d / p - 1.0
    if not (-s0 < s <= cap):
        raise ValueError(
            f"s={s} violates -s0 < s <= {cap} for quantity {quantity!r} (s0={s0})"
        )
    return -(s0 + s) / 2.0


# ---------------------------------------------------------------------------
# block-norm bookkeeping over trajectories
# ---------------------------------------------------------------------------

_GROUPS = ("a", "u", "H", "grad_a", "grad_u", "grad_H")


def _group_fields(state: StateVector, group: str):
    if group == "a":
        return (state.a,)
    if group == "u":
        return state.u
    if group == "H":
        return state.H
    if group == "grad_a":
        return tuple(derivative(state.a, j) for j in range(state.grid.dim))
    if group == "grad_u":
        return tuple(derivative(c, j) for c in state.u for j in range(state.grid.dim))
    if group == "grad_H":
        return tuple(derivative(c, j) for c in state.H for j in range(state.grid.dim))
    raise ValueError(f"unknown field group {group!r}")


class TrajectoryNorms:
    """Per-block L^p norms of field groups along a trajectory, computed once
    and reused by every functional summand."""

    def __init__(self, times, states, ladder: DyadicLadder):
        self.times = np.asarray(times, dtype=float)
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("trajectory times must be strictly increasing")
        self.states = list(states)
        if len(self.states) != self.times.size:
            raise ValueError("times and states lengths differ")
        self.ladder = ladder
        self.ks = np.array(list(ladder.blocks))
        self._cache = {}

    def block_matrix(self, group: str, p: float) -> np.ndarray:
        """(n_times, n_blocks) matrix of block L^p norms."""
        key = (group, p)
        if key not in self._cache:
            self._cache[key] = np.stack(
                [block_lp_norms(_group_fields(st, group), self.ladder, p) for st in self.states]
            )
        return self._cache[key]

    def _mask(self, part: str | None):
        if part is None:
            return np.ones_like(self.ks, dtype=bool)
        if part == "low":
            return self.ks <= self.ladder.k0
        if part == "high":
            return self.ks >= self.ladder.high_start
        raise ValueError(f"unknown part {part!r}")

    def tilde_norm(self, group: str, idx: BesovIndex, theta: float,
                   part: str | None = None, time_weight=None) -> float:
        """Chemin-Lerner style norm, optionally with a pointwise time weight
        applied to the block series before the time-L^theta reduction."""
        mat = self.block_matrix(group, idx.p)
        if time_weight is not None:
            mat = mat * np.asarray(time_weight, dtype=float)[:, None]
        if np.isinf(theta):
            per_block = mat.max(axis=0)
        else:
            per_block = np.trapezoid(mat**theta, self.times, axis=0) ** (1.0 / theta)
        keep = self._mask(part)
        weights = 2.0 ** (self.ks[keep].astype(float) * idx.s)
        vals = weights * per_block[keep]
        if np.isinf(idx.r):
            return float(vals.max()) if vals.size else 0.0
        return float(np.sum(vals**idx.r) ** (1.0 / idx.r)) if vals.size else 0.0

    def besov_series(self, group: str, idx: BesovIndex, part: str | None = None) -> np.ndarray:
        """Instantaneous (hybrid) Besov norm at every stored time."""
        mat = self.block_matrix(group, idx.p)
        keep = self._mask(part)
        weights = 2.0 ** (self.ks[keep].astype(float) * idx.s)
        vals = weights[None, :] * mat[:, keep]
        if np.isinf(idx.r):
            return vals.max(axis=1)
        return np.sum(vals**idx.r, axis=1) ** (1.0 / idx.r)


def e_p_functional(times, states, p: float, ladder: DyadicLadder,
                   norms: TrajectoryNorms | None = None):
    """Global-existence functional: six summands, returned with a breakdown."""
    d = states[0].grid.dim
    check_admissible(p, d)
    tn = norms if norms is not None else TrajectoryNorms(times, states, ladder)
    lo_inf = BesovIndex(d / 2 - 1, 2, 1)
    lo_one = BesovIndex(d / 2 + 1, 2, 1)
    hi_a = BesovIndex(d / p, p, 1)
    hi_uh_inf = BesovIndex(d / p - 1, p, 1)
    hi_uh_one = BesovIndex(d / p + 1, p, 1)
    parts = {
        "low_linf": sum(tn.tilde_norm(g, lo_inf, np.inf, "low") for g in ("a", "u", "H")),
        "low_l1": sum(tn.tilde_norm(g, lo_one, 1.0, "low") for g in ("a", "u", "H")),
        "high_a_linf": tn.tilde_norm("a", hi_a, np.inf, "high"),
        "high_a_l1": tn.tilde_norm("a", hi_a, 1.0, "high"),
        "high_uh_linf": sum(tn.tilde_norm(g, hi_uh_inf, np.inf, "high") for g in ("u", "H")),
        "high_uh_l1": sum(tn.tilde_norm(g, hi_uh_one, 1.0, "high") for g in ("u", "H")),
    }
    return sum(parts.values()), parts


def d_p_functional(times, states, p: float, ladder: DyadicLadder,
                   eps: float = 0.05, n_s: int = 17, eps0_variant: bool = False,
                   norms: TrajectoryNorms | None = None):
    """Decay functional with the s-supremum discretized on >= 17 points.

    The first term uses the plain L^inf_t reduction of the weighted low norm
    (the tilde reduction when `eps0_variant`, which also extends the s range
    down to -s0 and sets eps = 0).
    """
    d = states[0].grid.dim
    check_admissible(p, d)
    if not eps0_variant and not 0 < eps < 0.5:
        raise ValueError(f"eps must lie in (0, 1/2), got {eps}")
    if n_s < 17:
        raise ValueError("the s-supremum grid needs at least 17 points")
    if eps0_variant:
        eps = 0.0
    s0 = s_zero(p, d)
    alpha = d / p + 0.5 - eps
    tn = norms if norms is not None else TrajectoryNorms(times, states, ladder)
    times_arr = tn.times
    bracket = t_bracket(times_arr)

    s_grid = np.linspace(eps - s0, d / 2 + 1, n_s)
    term1 = 0.0
    s_argmax = None
    for s in s_grid:
        w = bracket ** ((s0 + s) / 2.0)
        idx = BesovIndex(float(s), 2, 1)
        if eps0_variant:
            val = sum(tn.tilde_norm(g, idx, np.inf, "low", time_weight=w)
                      for g in ("a", "u", "H"))
        else:
            series = sum(tn.besov_series(g, idx, "low") for g in ("a", "u", "H"))
            val = float((w * series).max())
        if val > term1:
            term1, s_argmax = val, float(s)

    idx2 = BesovIndex(d / p - 1, p, 1)
    w_alpha = bracket**alpha
    term2 = sum(tn.tilde_norm(g, idx2, np.inf, "high", time_weight=w_alpha)
                for g in ("grad_a", "u", "H"))

    idx3 = BesovIndex(d / p, p, 1)
    term3 = sum(tn.tilde_norm(g, idx3, np.inf, "high", time_weight=times_arr)
                for g in ("grad_u", "grad_H"))

    parts = {
        "low_weighted_sup": term1,
        "low_sup_argmax_s": s_argmax,
        "high_alpha_weighted": term2,
        "high_t_weighted_grad": term3,
        "alpha": alpha,
        "s_interval": (float(eps - s0), float(d / 2 + 1)),
    }
    return term1 + term2 + term3, parts


def smallness_report(state0: StateVector, p: float, ladder: DyadicLadder,
                     threshold: float = 0.05, div_tol: float = 1e-10):
    """Initial-data sizes: the existence quantity and the decay quantity,
    with verdicts against a configurable smallness threshold."""
    d = state0.grid.dim
    check_admissible(p, d)
    defect = state0.div_h_defect()
    if defect > div_tol:
        raise ValueError(f"div H0 defect {defect:.3g} exceeds {div_tol}")
    lo = BesovIndex(d / 2 - 1, 2, 1)
    e = (
        sum(hybrid_norm(g, lo, ladder, "low") for g in (state0.a, state0.u, state0.H))
        + hybrid_norm(state0.a, BesovIndex(d / p, p, 1), ladder, "high")
        + sum(hybrid_norm(g, BesovIndex(d / p - 1, p, 1), ladder, "high")
              for g in (state0.u, state0.H))
    )
    s0 = s_zero(p, d)
    idx_d = BesovIndex(-s0, 2, np.inf)
    dq = sum(hybrid_norm(g, idx_d, ladder, "low") for g in (state0.a, state0.u, state0.H))
    return {
        "existence_size": e,
        "decay_size": dq,
        "threshold": threshold,
        "existence_small": e <= threshold,
        "decay_small": dq <= threshold,
    }
