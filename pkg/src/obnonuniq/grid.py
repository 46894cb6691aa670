"""Periodic-box pseudo-spectral field algebra.

Fields live on the cube [-L/2, L/2)^3 sampled at ``n`` points per axis, with
the origin at index ``n // 2``.  Coefficients are stored in the half-spectrum
layout of ``rfftn`` and normalised as Fourier-series coefficients, so that

    f(x_j) = sum_k c_k exp(i k . (x_j + L/2)),    ||f||_{L^2}^2 = L^3 sum_k |c_k|^2.

All products are pseudo-spectral with the 2/3 rule applied to both the inputs
and the output, which makes the discrete product rule and the skew-symmetry of
divergence-free advection hold to round-off.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np
import scipy.fft as sfft

_AXES = (-3, -2, -1)


class GridMismatchError(ValueError):
    """Two fields on different grids were combined."""


@dataclass(frozen=True)
class PeriodicGrid:
    """Uniform periodic grid on [-L/2, L/2)^3."""

    box_side: float
    n: int
    dealias_fraction: float = 2.0 / 3.0

    def __post_init__(self):
        if self.n < 16 or self.n % 2:
            raise ValueError(f"points_per_axis must be even and >= 16, got {self.n}")
        if not self.box_side > 0:
            raise ValueError(f"box_side must be positive, got {self.box_side}")
        if not 0 < self.dealias_fraction <= 1:
            raise ValueError("dealias_fraction must lie in (0, 1]")

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.n, self.n, self.n)

    @property
    def spectral_shape(self) -> tuple[int, int, int]:
        return (self.n, self.n, self.n // 2 + 1)

    @property
    def volume(self) -> float:
        return self.box_side**3

    @cached_property
    def spacing(self) -> float:
        return self.box_side / self.n

    @cached_property
    def coords(self) -> np.ndarray:
        return (np.arange(self.n) - self.n // 2) * self.spacing

    @cached_property
    def mesh(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        x = self.coords
        return x[:, None, None], x[None, :, None], x[None, None, :]

    @cached_property
    def radius(self) -> np.ndarray:
        x, y, z = self.mesh
        return np.sqrt(x**2 + y**2 + z**2)

    @cached_property
    def _index(self) -> tuple[np.ndarray, np.ndarray]:
        full = np.fft.fftfreq(self.n, 1.0 / self.n).astype(int)
        half = np.arange(self.n // 2 + 1)
        return full, half

    @cached_property
    def kvec(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Derivative wavenumbers (Nyquist entries zeroed), broadcastable."""
        full, half = self._index
        dk = 2 * np.pi / self.box_side
        kf = np.where(np.abs(full) == self.n // 2, 0, full) * dk
        kh = np.where(half == self.n // 2, 0, half) * dk
        return kf[:, None, None], kf[None, :, None], kh[None, None, :]

    @cached_property
    def k2(self) -> np.ndarray:
        """True |k|^2, Nyquist included; used for diffusion and norms."""
        full, half = self._index
        dk = 2 * np.pi / self.box_side
        kf, kh = full * dk, half * dk
        return kf[:, None, None] ** 2 + kf[None, :, None] ** 2 + kh[None, None, :] ** 2

    @cached_property
    def kd2(self) -> np.ndarray:
        kx, ky, kz = self.kvec
        return kx**2 + ky**2 + kz**2

    @cached_property
    def mode_weight(self) -> np.ndarray:
        """Multiplicity of each half-spectrum coefficient in the full spectrum."""
        w = np.full(self.n // 2 + 1, 2.0)
        w[0] = 1.0
        w[-1] = 1.0
        return w[None, None, :]

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        full, half = self._index
        cut = self.dealias_fraction * self.n / 2
        mf = np.abs(full) < cut
        mh = half < cut
        mask = (mf[:, None, None] & mf[None, :, None] & mh[None, None, :]).astype(float)
        mask.setflags(write=False)
        return mask

    def rebox(self, factor: float) -> "PeriodicGrid":
        """Same samples, box side multiplied by ``factor``."""
        return PeriodicGrid(self.box_side * factor, self.n, self.dealias_fraction)


def to_spectral(values: np.ndarray) -> np.ndarray:
    return sfft.rfftn(values, axes=_AXES, norm="forward")


def to_physical(coef: np.ndarray, grid: PeriodicGrid) -> np.ndarray:
    return sfft.irfftn(coef, s=grid.shape, axes=_AXES, norm="forward")


class ScalarField:
    """Real scalar field held by its half-spectrum Fourier coefficients."""

    rank = 0

    def __init__(self, grid: PeriodicGrid, coef: np.ndarray):
        coef = np.asarray(coef, dtype=complex)
        if coef.shape != grid.spectral_shape:
            raise ValueError(f"coefficient shape {coef.shape} != {grid.spectral_shape}")
        self.grid = grid
        self.coef = coef

    @classmethod
    def from_values(cls, grid: PeriodicGrid, values: np.ndarray) -> "ScalarField":
        return cls(grid, to_spectral(np.asarray(values, dtype=float)))

    @classmethod
    def zeros(cls, grid: PeriodicGrid) -> "ScalarField":
        return cls(grid, np.zeros(grid.spectral_shape, dtype=complex))

    @property
    def values(self) -> np.ndarray:
        return to_physical(self.coef, self.grid)

    def _wrap(self, coef):
        return ScalarField(self.grid, coef)

    def _check(self, other):
        if other.grid != self.grid or other.rank != self.rank:
            raise GridMismatchError("fields live on different grids or have different rank")

    def __add__(self, other):
        self._check(other)
        return self._wrap(self.coef + other.coef)

    def __sub__(self, other):
        self._check(other)
        return self._wrap(self.coef - other.coef)

    def __mul__(self, scalar):
        return self._wrap(self.coef * float(scalar))

    __rmul__ = __mul__

    def __neg__(self):
        return self._wrap(-self.coef)

    def __truediv__(self, scalar):
        return self._wrap(self.coef / float(scalar))


class VectorField(ScalarField):
    """Three-component real vector field; ``coef`` has shape (3, n, n, n//2+1)."""

    rank = 1

    def __init__(self, grid: PeriodicGrid, coef: np.ndarray, divergence_free: bool = False):
        coef = np.asarray(coef, dtype=complex)
        if coef.shape != (3, *grid.spectral_shape):
            raise ValueError(f"coefficient shape {coef.shape} != (3, {grid.spectral_shape})")
        self.grid = grid
        self.coef = coef
        self.divergence_free = divergence_free

    @classmethod
    def from_values(cls, grid, values, divergence_free=False) -> "VectorField":
        return cls(grid, to_spectral(np.asarray(values, dtype=float)), divergence_free)

    @classmethod
    def zeros(cls, grid) -> "VectorField":
        return cls(grid, np.zeros((3, *grid.spectral_shape), dtype=complex), True)

    def component(self, i: int) -> ScalarField:
        return ScalarField(self.grid, self.coef[i])

    def _wrap(self, coef, divergence_free=None):
        return VectorField(self.grid, coef, self.divergence_free if divergence_free is None else divergence_free)

    def __add__(self, other):
        self._check(other)
        return self._wrap(self.coef + other.coef, self.divergence_free and other.divergence_free)

    def __sub__(self, other):
        self._check(other)
        return self._wrap(self.coef - other.coef, self.divergence_free and other.divergence_free)


Field = ScalarField  # either rank


# ---------------------------------------------------------------------------
# norms


def _spectral_sum(field: ScalarField, multiplier=1.0) -> float:
    g = field.grid
    power = np.abs(field.coef) ** 2
    if field.rank:
        power = power.sum(axis=0)
    return float(np.sum(g.mode_weight * multiplier * power))


def hs_norm(field: ScalarField, s: float) -> float:
    """Sobolev norm with multiplier (1 + |k|^2)^(s/2)."""
    if s < 0:
        raise ValueError("Sobolev index must be nonnegative")
    g = field.grid
    mult = 1.0 if s == 0 else (1.0 + g.k2) ** s
    return float(np.sqrt(g.volume * _spectral_sum(field, mult)))


def l2_norm(field: ScalarField) -> float:
    """L^2 norm by physical-space quadrature (independent of the spectral sum)."""
    h3 = field.grid.spacing**3
    return float(np.sqrt(h3 * np.sum(field.values**2)))


def gradient_l2(field: ScalarField) -> float:
    """||grad f||_{L^2} (Frobenius for vectors)."""
    g = field.grid
    return float(np.sqrt(g.volume * _spectral_sum(field, g.kd2)))


def inner(a: ScalarField, b: ScalarField) -> float:
    a._check(b)
    prod = (a.coef * b.coef.conj()).real
    if a.rank:
        prod = prod.sum(axis=0)
    return float(a.grid.volume * np.sum(a.grid.mode_weight * prod))


# ---------------------------------------------------------------------------
# linear differential operators


def gradient(theta: ScalarField) -> VectorField:
    kx, ky, kz = theta.grid.kvec
    c = theta.coef
    return VectorField(theta.grid, np.stack([1j * kx * c, 1j * ky * c, 1j * kz * c]))


def divergence(v: VectorField) -> ScalarField:
    kx, ky, kz = v.grid.kvec
    c = v.coef
    return ScalarField(v.grid, 1j * (kx * c[0] + ky * c[1] + kz * c[2]))


def curl(v: VectorField) -> VectorField:
    kx, ky, kz = v.grid.kvec
    a, b, c = v.coef
    out = np.stack([1j * (ky * c - kz * b), 1j * (kz * a - kx * c), 1j * (kx * b - ky * a)])
    return VectorField(v.grid, out, divergence_free=True)


def laplacian(f: ScalarField) -> ScalarField:
    return f._wrap(-f.grid.k2 * f.coef)


def project_coef(coef: np.ndarray, grid: PeriodicGrid) -> np.ndarray:
    kx, ky, kz = grid.kvec
    kk = grid.kd2
    safe = np.where(kk == 0, 1.0, kk)
    kdotv = (kx * coef[0] + ky * coef[1] + kz * coef[2]) / safe
    return np.stack([coef[0] - kx * kdotv, coef[1] - ky * kdotv, coef[2] - kz * kdotv])


def leray_project(v: VectorField) -> VectorField:
    """Orthogonal projection onto divergence-free fields; the mean mode is untouched."""
    return VectorField(v.grid, project_coef(v.coef, v.grid), divergence_free=True)


def divergence_ratio(v: VectorField) -> float:
    """max |k . v_hat(k)| relative to the largest coefficient magnitude."""
    kx, ky, kz = v.grid.kvec
    c = v.coef
    div = np.abs(kx * c[0] + ky * c[1] + kz * c[2])
    scale = np.sqrt(v.grid.kd2.max()) * np.abs(c).max()
    return float(div.max() / scale) if scale > 0 else 0.0


def dealias(f: ScalarField) -> ScalarField:
    return f._wrap(f.coef * f.grid.dealias_mask)


# ---------------------------------------------------------------------------
# nonlinear products


def _grad_physical(coef: np.ndarray, grid: PeriodicGrid) -> np.ndarray:
    kx, ky, kz = grid.kvec
    return to_physical(np.stack([1j * kx * coef, 1j * ky * coef, 1j * kz * coef]), grid)


def advect(u: VectorField, theta: ScalarField) -> ScalarField:
    """Dealiased u . grad(theta)."""
    if u.grid != theta.grid:
        raise GridMismatchError("advect: velocity and scalar live on different grids")
    g = u.grid
    mask = g.dealias_mask
    up = to_physical(u.coef * mask, g)
    gp = _grad_physical(theta.coef * mask, g)
    return ScalarField(g, mask * to_spectral(np.einsum("i...,i...->...", up, gp)))


def convect(u: VectorField, v: VectorField) -> VectorField:
    """Dealiased (u . grad) v, component-wise."""
    if u.grid != v.grid:
        raise GridMismatchError("convect: fields live on different grids")
    g = u.grid
    mask = g.dealias_mask
    up = to_physical(u.coef * mask, g)
    out = np.empty((3, *g.shape))
    for i in range(3):
        gp = _grad_physical(v.coef[i] * mask, g)
        out[i] = np.einsum("j...,j...->...", up, gp)
    return VectorField(g, mask * to_spectral(out))


def multiply(a: np.ndarray, f: ScalarField) -> ScalarField:
    """Product of a fixed physical array with a field (dealiased output)."""
    g = f.grid
    mask = g.dealias_mask
    vals = to_physical(f.coef * mask, g)
    if f.rank:
        return VectorField(g, mask * to_spectral(a * vals))
    return ScalarField(g, mask * to_spectral(a * vals))


# ---------------------------------------------------------------------------
# gravity


@lru_cache(maxsize=16)
def gravity_potential(grid: PeriodicGrid) -> tuple[np.ndarray, np.ndarray]:
    """Zero-mean periodic Newtonian potential of 1/|x| and its gradient.

    Series coefficients 4 pi / (L^3 |k|^2) truncated to the dealiased band,
    phase-shifted to the box-centred origin.  Returned in physical space.
    """
    full, half = grid._index
    k2 = grid.k2
    safe = np.where(k2 == 0, 1.0, k2)
    series = np.where(k2 == 0, 0.0, 4 * np.pi / (grid.volume * safe))
    parity = (-1.0) ** (full[:, None, None] + full[None, :, None] + half[None, None, :])
    coef = series * parity * grid.dealias_mask
    G = to_physical(coef, grid)
    dG = _grad_physical(coef, grid)
    G.setflags(write=False)
    dG.setflags(write=False)
    return G, dG


def gravity_gradient(theta: ScalarField, by_parts: bool = False) -> VectorField:
    """P(theta grad G); with ``by_parts`` the equivalent form -P(G grad theta)."""
    g = theta.grid
    G, dG = gravity_potential(g)
    mask = g.dealias_mask
    if by_parts:
        gt = _grad_physical(theta.coef * mask, g)
        coef = -mask * to_spectral(G * gt)
    else:
        tp = to_physical(theta.coef * mask, g)
        coef = mask * to_spectral(tp * dG)
    return VectorField(g, project_coef(coef, g), divergence_free=True)


class UndefinedQuotientError(ValueError):
    pass


def hardy_quotient(theta: ScalarField) -> float:
    """||theta / |xi| ||_{L^2} / ||grad theta||_{L^2}, |xi| floored at half a cell."""
    g = theta.grid
    denom = gradient_l2(theta)
    if denom <= 1e-300:
        raise UndefinedQuotientError("gradient of theta vanishes")
    r = np.maximum(g.radius, 0.5 * g.spacing)
    num = np.sqrt(g.spacing**3 * np.sum((theta.values / r) ** 2))
    return float(num / denom)


# ---------------------------------------------------------------------------
# dilation by trigonometric interpolation


@lru_cache(maxsize=256)
def _dilation_matrix(n: int, alpha: float) -> np.ndarray:
    """Row j evaluates the trigonometric interpolant at alpha * x_j."""
    j = np.arange(n) - n // 2
    d = 2 * np.pi / n * (alpha * j[:, None] - j[None, :])
    m = np.arange(1, n // 2)
    M = (1.0 + 2.0 * np.cos(d[..., None] * m).sum(axis=-1) + np.cos(d * (n // 2))) / n
    M.setflags(write=False)
    return M


def dilate_values(values: np.ndarray, alpha: float) -> np.ndarray:
    """Samples of x -> f(alpha x) for the band-limited interpolant of ``values``."""
    n = values.shape[-1]
    M = _dilation_matrix(n, float(alpha))
    out = np.einsum("ai,...ijk->...ajk", M, values, optimize=True)
    out = np.einsum("bj,...ajk->...abk", M, out, optimize=True)
    return np.einsum("ck,...abk->...abc", M, out, optimize=True)


def antialias_coef(coef: np.ndarray, grid: PeriodicGrid, alpha: float) -> np.ndarray:
    """Drop modes that would land beyond Nyquist after compressing by ``alpha``."""
    if alpha <= 1:
        return coef
    full, half = grid._index
    cut = grid.n / (2 * alpha)
    mf = np.abs(full) < cut
    mask = mf[:, None, None] & mf[None, :, None] & (half < cut)[None, None, :]
    return coef * mask


def dilate(field: ScalarField, alpha: float) -> ScalarField:
    """Return xi -> field(alpha xi) on the same grid.

    For alpha > 1 the input is first band-limited so that the compressed
    field stays resolvable; periodic images enter for |alpha xi| > L/2.
    """
    g = field.grid
    vals = to_physical(antialias_coef(field.coef, g, alpha), g)
    out = to_spectral(dilate_values(vals, alpha))
    if field.rank:
        return VectorField(g, out)
    return ScalarField(g, out)


@lru_cache(maxsize=16)
def sponge(grid: PeriodicGrid, start: float = 0.84) -> np.ndarray:
    """Radial C^inf window: 1 inside start*L/2, 0 beyond L/2 (corners included)."""
    r1 = start * grid.box_side / 2
    r2 = grid.box_side / 2
    s = np.clip((grid.radius - r1) / (r2 - r1), 0.0, 1.0)
    w = smooth_step(1.0 - s)
    w.setflags(write=False)
    return w


def smooth_step(x: np.ndarray) -> np.ndarray:
    """C^inf transition from 0 (x<=0) to 1 (x>=1)."""
    x = np.clip(x, 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        a = np.where(x > 0, np.exp(-1.0 / np.where(x > 0, x, 1.0)), 0.0)
        b = np.where(x < 1, np.exp(-1.0 / np.where(x < 1, 1.0 - x, 1.0)), 0.0)
    return a / (a + b)


# ---------------------------------------------------------------------------
# sample fields


def random_scalar(grid: PeriodicGrid, rng: np.random.Generator) -> ScalarField:
    return ScalarField.from_values(grid, rng.standard_normal(grid.shape))


def random_vector(grid: PeriodicGrid, rng: np.random.Generator) -> VectorField:
    return VectorField.from_values(grid, rng.standard_normal((3, *grid.shape)))


def gaussian(grid: PeriodicGrid, width: float, center=(0.0, 0.0, 0.0)) -> ScalarField:
    x, y, z = grid.mesh
    r2 = (x - center[0]) ** 2 + (y - center[1]) ** 2 + (z - center[2]) ** 2
    return ScalarField.from_values(grid, np.exp(-r2 / (2 * width**2)))
