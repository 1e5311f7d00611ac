"""Periodic grids, real<->Fourier transforms, multipliers and physical norms.

Fields live on an isotropic torus [0, L)^d sampled with N points per axis.
Spectral coefficients follow the Fourier-series convention

    f(x) = sum_k  c_k  exp(i xi_k . x),      xi_k = (2 pi / L) k,

i.e. the forward transform is the FFT divided by N^d (kernel exp(-i xi.x)).
Real fields then satisfy c(-k) = conj(c(k)) with indices taken mod N.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import GridMismatchError

MAGIC = b"BMHD1"


@dataclass(frozen=True)
class Grid:
    """Isotropic periodic grid: dimension d, N points per axis, side length L."""

    dim: int
    n: int
    length: float

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ValueError(f"dim must be 2 or 3, got {self.dim}")
        if self.n < 8 or self.n % 2 != 0:
            raise ValueError(f"n must be an even integer >= 8, got {self.n}")
        if not self.length > 0:
            raise ValueError(f"length must be positive, got {self.length}")

    @property
    def xi_min(self) -> float:
        """Smallest nonzero wavevector magnitude, 2*pi/L."""
        return 2.0 * np.pi / self.length

    @property
    def xi_max(self) -> float:
        """Largest wavevector magnitude on the grid, (2*pi/L)*(N/2)*sqrt(d)."""
        return self.xi_min * (self.n // 2) * np.sqrt(self.dim)

    @property
    def cell_volume(self) -> float:
        return (self.length / self.n) ** self.dim

    def shape(self):
        return (self.n,) * self.dim

    def xi_axes(self):
        return _xi_axes(self.dim, self.n, self.length)

    def xi_vectors(self):
        """d arrays of shape grid.shape(), the wavevector components."""
        return _xi_vectors(self.dim, self.n, self.length)

    def xi_norm(self):
        return _xi_norm(self.dim, self.n, self.length)

    def coords(self):
        """Physical coordinates, d arrays of shape grid.shape()."""
        x = np.arange(self.n) * (self.length / self.n)
        return np.meshgrid(*([x] * self.dim), indexing="ij")

    def dealias_mask(self, fraction: float = 2.0 / 3.0):
        return _dealias_mask(self.dim, self.n, self.length, fraction)


@lru_cache(maxsize=32)
def _xi_axes(dim, n, length):
    k = np.fft.fftfreq(n, d=1.0 / n)  # integer wavenumbers 0..N/2-1, -N/2..-1
    xi = k * (2.0 * np.pi / length)
    xi.flags.writeable = False
    return xi


@lru_cache(maxsize=32)
def _xi_vectors(dim, n, length):
    xi = _xi_axes(dim, n, length)
    vecs = np.meshgrid(*([xi] * dim), indexing="ij")
    for v in vecs:
        v.flags.writeable = False
    return tuple(vecs)


@lru_cache(maxsize=32)
def _xi_norm(dim, n, length):
    out = np.sqrt(sum(v**2 for v in _xi_vectors(dim, n, length)))
    out.flags.writeable = False
    return out


@lru_cache(maxsize=32)
def _nyquist_free_mask(dim, n):
    """True away from the per-axis Nyquist planes (index N/2).

    The Nyquist wavevector has no negation partner on the grid, so operators
    odd in xi cannot act there without breaking real-field symmetry; such
    operators zero these planes.
    """
    keep1d = np.arange(n) != n // 2
    mask = np.ones((n,) * dim, dtype=bool)
    for axis in range(dim):
        shape = [1] * dim
        shape[axis] = n
        mask &= keep1d.reshape(shape)
    mask.flags.writeable = False
    return mask


def nyquist_free_mask(grid: "Grid"):
    return _nyquist_free_mask(grid.dim, grid.n)


@lru_cache(maxsize=32)
def _dealias_mask(dim, n, length, fraction):
    cut = fraction * (n // 2)
    k = np.abs(np.fft.fftfreq(n, d=1.0 / n))
    keep1d = k < cut + 1e-9
    mask = np.ones((n,) * dim, dtype=bool)
    for axis in range(dim):
        shape = [1] * dim
        shape[axis] = n
        mask &= keep1d.reshape(shape)
    mask.flags.writeable = False
    return mask


@dataclass(frozen=True)
class SpectralField:
    """Fourier coefficients of a real scalar field on a Grid."""

    grid: Grid
    coeffs: np.ndarray

    def __post_init__(self):
        if self.coeffs.shape != self.grid.shape():
            raise GridMismatchError(
                f"coeff shape {self.coeffs.shape} does not match grid {self.grid.shape()}"
            )

    def copy(self) -> "SpectralField":
        return SpectralField(self.grid, self.coeffs.copy())

    def hermitian_defect(self) -> float:
        """Relative departure from c(-k) = conj(c(k))."""
        flipped = _conj_flip(self.coeffs)
        num = np.linalg.norm(self.coeffs - flipped)
        den = np.linalg.norm(self.coeffs)
        return float(num / den) if den > 0 else 0.0

    def symmetrized(self) -> "SpectralField":
        return SpectralField(self.grid, 0.5 * (self.coeffs + _conj_flip(self.coeffs)))


def _conj_flip(c):
    """conj(c) evaluated at -k (indices mod N)."""
    out = np.conj(c)
    for axis in range(c.ndim):
        out = np.flip(out, axis=axis)
        out = np.roll(out, 1, axis=axis)
    return out


def transform(field_physical: np.ndarray, grid: Grid) -> SpectralField:
    """Forward FFT of a physical-space field, normalized to series coefficients."""
    if field_physical.shape != grid.shape():
        raise GridMismatchError(
            f"field shape {field_physical.shape} does not match grid {grid.shape()}"
        )
    coeffs = np.fft.fftn(field_physical) / grid.n**grid.dim
    return SpectralField(grid, coeffs)


def inverse_transform(f: SpectralField, real: bool = True) -> np.ndarray:
    """Physical-space samples of the field; real part by default."""
    phys = np.fft.ifftn(f.coeffs) * f.grid.n**f.grid.dim
    return phys.real if real else phys


def fourier_multiplier(f: SpectralField, symbol) -> SpectralField:
    """Apply a Fourier multiplier given as a function of the wavevector arrays.

    `symbol(xi_1, ..., xi_d)` must return an array over the grid.  A value that
    is NaN/inf at the zero mode is admissible (the zero mode is zeroed); a
    non-finite value at any other mode raises.
    """
    vals = np.asarray(symbol(*f.grid.xi_vectors()), dtype=complex)
    if vals.shape != f.grid.shape():
        vals = np.broadcast_to(vals, f.grid.shape()).astype(complex)
    vals = vals.copy()
    zero = (0,) * f.grid.dim
    if not np.isfinite(vals[zero]):
        vals[zero] = 0.0
    bad = ~np.isfinite(vals)
    if bad.any():
        mode = tuple(int(i) for i in np.argwhere(bad)[0])
        k = tuple(int(np.fft.fftfreq(f.grid.n, 1.0 / f.grid.n)[i]) for i in mode)
        raise ValueError(f"multiplier symbol is not finite at nonzero mode k={k}")
    return SpectralField(f.grid, f.coeffs * vals)


def radial_multiplier(f: SpectralField, symbol_of_rho) -> SpectralField:
    """Multiplier depending only on |xi|; zero mode zeroed when undefined."""
    return fourier_multiplier(
        f, lambda *xi: symbol_of_rho(np.sqrt(sum(v**2 for v in xi)))
    )


def derivative(f: SpectralField, axis: int) -> SpectralField:
    xi = f.grid.xi_vectors()[axis]
    return SpectralField(f.grid, f.coeffs * (1j * xi) * nyquist_free_mask(f.grid))


def gradient(f: SpectralField):
    return tuple(derivative(f, j) for j in range(f.grid.dim))


def divergence(v) -> SpectralField:
    grid = v[0].grid
    out = np.zeros(grid.shape(), dtype=complex)
    for j, comp in enumerate(v):
        _check_same_grid(grid, comp.grid)
        out += 1j * grid.xi_vectors()[j] * comp.coeffs
    return SpectralField(grid, out * nyquist_free_mask(grid))


def laplacian(f: SpectralField) -> SpectralField:
    return SpectralField(f.grid, -f.grid.xi_norm() ** 2 * f.coeffs)


def inverse_neg_laplacian(f: SpectralField) -> SpectralField:
    """(-Delta)^{-1}, zero mode forced to zero."""
    rho2 = f.grid.xi_norm() ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        out = f.coeffs / rho2
    out[(0,) * f.grid.dim] = 0.0
    return SpectralField(f.grid, out)


def leray_project(v):
    """Project a velocity field onto divergence-free fields.

    P = Id + grad (-Delta)^{-1} div ; the zero mode (a constant vector field,
    trivially divergence-free) is left untouched, and the per-axis Nyquist
    planes are zeroed (the mixed symbol xi_j xi_l cannot act symmetrically
    there, see nyquist_free_mask).
    """
    grid = v[0].grid
    for comp in v:
        _check_same_grid(grid, comp.grid)
    xi = grid.xi_vectors()
    rho2 = grid.xi_norm() ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = np.where(rho2 > 0, 1.0 / rho2, 0.0)
    xidotv = sum(xi[j] * v[j].coeffs for j in range(grid.dim))
    mask = nyquist_free_mask(grid)
    return tuple(
        SpectralField(grid, (v[j].coeffs - xi[j] * xidotv * inv) * mask)
        for j in range(grid.dim)
    )


def lp_norm(f, p: float) -> float:
    """L^p norm over the torus by the rectangle rule on grid points.

    `f` is a SpectralField or a sequence of them (a vector field, measured
    through its pointwise Euclidean magnitude).
    """
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    fields = (f,) if isinstance(f, SpectralField) else tuple(f)
    grid = fields[0].grid
    for comp in fields:
        _check_same_grid(grid, comp.grid)
    mag2 = np.zeros(grid.shape())
    for comp in fields:
        phys = inverse_transform(comp)
        mag2 += phys**2
    mag = np.sqrt(mag2)
    if np.isinf(p):
        return float(mag.max())
    return float((np.sum(mag**p) * grid.cell_volume) ** (1.0 / p))


def l2_norm_spectral(f) -> float:
    """Parseval form of the L^2 norm, L^{d/2} times the coefficient l^2 norm."""
    fields = (f,) if isinstance(f, SpectralField) else tuple(f)
    grid = fields[0].grid
    total = sum(np.sum(np.abs(comp.coeffs) ** 2) for comp in fields)
    return float(np.sqrt(total * grid.length**grid.dim))


def inner_l2(f: SpectralField, g: SpectralField) -> float:
    _check_same_grid(f.grid, g.grid)
    val = np.sum(f.coeffs * np.conj(g.coeffs)) * f.grid.length**f.grid.dim
    return float(val.real)


def _check_same_grid(g1: Grid, g2: Grid):
    if g1 != g2:
        raise GridMismatchError(f"grids differ: {g1} vs {g2}")


@dataclass(frozen=True)
class StateVector:
    """Perturbation variables (a, u, H) with div H = 0 expected."""

    a: SpectralField
    u: tuple
    H: tuple

    def __post_init__(self):
        grid = self.a.grid
        if len(self.u) != grid.dim or len(self.H) != grid.dim:
            raise GridMismatchError("u and H must have d components")
        for comp in (*self.u, *self.H):
            _check_same_grid(grid, comp.grid)

    @property
    def grid(self) -> Grid:
        return self.a.grid

    def fields(self):
        return (self.a, *self.u, *self.H)

    def div_h_defect(self) -> float:
        """Mode-wise l2 norm of div H relative to the l2 norm of H."""
        div = divergence(self.H)
        hn = np.sqrt(sum(np.sum(np.abs(c.coeffs) ** 2) for c in self.H))
        if hn == 0:
            return 0.0
        return float(np.linalg.norm(div.coeffs) / hn)

    def to_stack(self) -> np.ndarray:
        """(n_modes, 1+2d) array of coefficients, modes flattened."""
        return np.stack([c.coeffs.ravel() for c in self.fields()], axis=-1)

    @staticmethod
    def from_stack(grid: Grid, stack: np.ndarray) -> "StateVector":
        d = grid.dim
        fields = [
            SpectralField(grid, stack[:, i].reshape(grid.shape()))
            for i in range(1 + 2 * d)
        ]
        return StateVector(fields[0], tuple(fields[1 : 1 + d]), tuple(fields[1 + d :]))

    def symmetrized(self) -> "StateVector":
        return StateVector(
            self.a.symmetrized(),
            tuple(c.symmetrized() for c in self.u),
            tuple(c.symmetrized() for c in self.H),
        )

    def scaled(self, factor: float) -> "StateVector":
        return StateVector(
            SpectralField(self.grid, self.a.coeffs * factor),
            tuple(SpectralField(self.grid, c.coeffs * factor) for c in self.u),
            tuple(SpectralField(self.grid, c.coeffs * factor) for c in self.H),
        )


def zero_state(grid: Grid) -> StateVector:
    z = lambda: SpectralField(grid, np.zeros(grid.shape(), dtype=complex))
    return StateVector(z(), tuple(z() for _ in range(grid.dim)), tuple(z() for _ in range(grid.dim)))


# ---------------------------------------------------------------------------
# Binary snapshot format: magic "BMHD1", uint32 d, uint32 N, float64 L
# (little-endian), then row-major complex64 pairs, one block per field.
# ---------------------------------------------------------------------------

def save_fields(path, fields):
    fields = (fields,) if isinstance(fields, SpectralField) else tuple(fields)
    grid = fields[0].grid
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IId", grid.dim, grid.n, grid.length))
        for comp in fields:
            _check_same_grid(grid, comp.grid)
            fh.write(np.ascontiguousarray(comp.coeffs, dtype=np.complex64).tobytes())


def load_fields(path):
    with open(path, "rb") as fh:
        magic = fh.read(5)
        if magic != MAGIC:
            raise ValueError(f"bad magic {magic!r}, expected {MAGIC!r}")
        dim, n, length = struct.unpack("<IId", fh.read(16))
        grid = Grid(dim, n, length)
        raw = fh.read()
    per_field = 8 * n**dim
    if len(raw) % per_field != 0:
        raise ValueError("truncated snapshot payload")
    count = len(raw) // per_field
    fields = []
    for i in range(count):
        block = np.frombuffer(raw[i * per_field : (i + 1) * per_field], dtype=np.complex64)
        fields.append(SpectralField(grid, block.reshape(grid.shape()).astype(complex)))
    return grid, fields


def save_state(path, state: StateVector):
    save_fields(path, state.fields())


def load_state(path) -> StateVector:
    grid, fields = load_fields(path)
    d = grid.dim
    if len(fields) != 1 + 2 * d:
        raise ValueError(f"expected {1 + 2 * d} field blocks, found {len(fields)}")
    return StateVector(fields[0], tuple(fields[1 : 1 + d]), tuple(fields[1 + d :]))
