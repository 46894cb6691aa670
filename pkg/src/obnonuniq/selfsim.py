"""Maps between natural variables (x, t) and self-similar variables (xi, tau).

Conventions: xi = x / sqrt(t), tau = log t, and a field of weight w satisfies

    field_natural(x, t) = t^(-w) * field_selfsimilar(x / sqrt(t), log t).

Velocity and temperature carry w = 1/2, pressure w = 1, forcing and heat
source w = 3/2.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from .grid import (
    PeriodicGrid,
    ScalarField,
    VectorField,
    dilate,
    smooth_step,
)

VELOCITY = 0.5
TEMPERATURE = 0.5
PRESSURE = 1.0
FORCING = 1.5
WEIGHTS = (VELOCITY, PRESSURE, FORCING)


class TruncationWarning(UserWarning):
    """A dilation discarded part of the field; ``mass_loss`` is the lost L^2 fraction."""

    def __init__(self, message: str, mass_loss: float):
        super().__init__(message)
        self.mass_loss = mass_loss


def _check_weight(w: float):
    if w not in WEIGHTS:
        raise ValueError(f"field weight must be one of {WEIGHTS}, got {w}")


def _rewrap(f: ScalarField, grid: PeriodicGrid, coef) -> ScalarField:
    if f.rank:
        return VectorField(grid, coef, f.divergence_free)
    return ScalarField(grid, coef)


def outside_fraction(f: ScalarField, half_width: float) -> float:
    """Fraction of ||f||^2 carried by samples with some |x_i| >= half_width."""
    g = f.grid
    vals = f.values
    if f.rank:
        vals = (vals**2).sum(axis=0)
    else:
        vals = vals**2
    x = np.abs(g.coords)
    out = (x[:, None, None] >= half_width) | (x[None, :, None] >= half_width) | (x[None, None, :] >= half_width)
    total = vals.sum()
    return float(vals[out].sum() / total) if total > 0 else 0.0


def _dilate_checked(f: ScalarField, alpha: float, tol: float) -> ScalarField:
    """xi -> f(alpha xi), treating f as zero outside its box."""
    g = f.grid
    if alpha < 1:
        loss = outside_fraction(f, alpha * g.box_side / 2)
        if loss > tol:
            warnings.warn(
                TruncationWarning(f"dilation by {alpha:.4g} drops {loss:.3e} of the L2 mass", loss),
                stacklevel=3,
            )
    out = dilate(f, alpha)
    if alpha > 1:
        out = _rewrap(out, g, out.coef)
        vals = out.values * _inside_mask(g, alpha)
        out = type(out).from_values(g, vals)
    if f.rank:
        out.divergence_free = False
    return out


@lru_cache(maxsize=64)
def _inside_mask(grid: PeriodicGrid, alpha: float) -> np.ndarray:
    x = np.abs(grid.coords) * alpha < grid.box_side / 2
    return (x[:, None, None] & x[None, :, None] & x[None, None, :]).astype(float)


def to_selfsimilar(f: ScalarField, t: float, weight: float, rebox: bool = False, tol: float = 1e-12):
    """Return xi -> t^w f(sqrt(t) xi).

    With ``rebox`` the samples are kept and the box side is divided by
    sqrt(t), which is exact.  Otherwise the field is resampled on its own
    grid by trigonometric interpolation.
    """
    if t <= 0:
        raise ValueError("t must be positive")
    _check_weight(weight)
    amp = t**weight
    s = np.sqrt(t)
    if rebox:
        return _rewrap(f, f.grid.rebox(1.0 / s), f.coef * amp)
    if t == 1:
        return _rewrap(f, f.grid, f.coef.copy())
    out = _dilate_checked(f, s, tol)
    return _rewrap(out, f.grid, out.coef * amp)


def to_natural(F: ScalarField, t: float, weight: float, rebox: bool = False, tol: float = 1e-12):
    """Return x -> t^(-w) F(x / sqrt(t)); inverse of :func:`to_selfsimilar`."""
    if t <= 0:
        raise ValueError("t must be positive")
    _check_weight(weight)
    amp = t ** (-weight)
    s = np.sqrt(t)
    if rebox:
        return _rewrap(F, F.grid.rebox(s), F.coef * amp)
    if t == 1:
        return _rewrap(F, F.grid, F.coef.copy())
    out = _dilate_checked(F, 1.0 / s, tol)
    return _rewrap(out, F.grid, out.coef * amp)


def tau_of(t: float) -> float:
    return float(np.log(t))


def t_of(tau: float) -> float:
    return float(np.exp(tau))


# ---------------------------------------------------------------------------
# parabolic scaling of a full solution snapshot


@dataclass
class SolutionSnapshot:
    """Natural-variable state (u, theta, p, f, h) at time t; any entry may be None."""

    t: float
    u: VectorField | None = None
    theta: ScalarField | None = None
    p: ScalarField | None = None
    f: VectorField | None = None
    h: ScalarField | None = None
    extra: dict = field(default_factory=dict)


# amplitude exponents of the scaling action, per field
SCALING_POWERS = {"u": 1, "theta": 1, "p": 2, "f": 3, "h": 3}


def scale_solution(snap: SolutionSnapshot, lam: float) -> SolutionSnapshot:
    """Apply u_lam(x, t) = lam u(lam x, lam^2 t) (and the companions) exactly.

    The returned snapshot sits at time t / lam^2 on a box of side L / lam with
    the same samples multiplied by lam^power.
    """
    if not lam > 0:
        raise ValueError("scaling parameter must be positive")
    out = {}
    for name, power in SCALING_POWERS.items():
        fld = getattr(snap, name)
        if fld is None:
            out[name] = None
            continue
        out[name] = _rewrap(fld, fld.grid.rebox(1.0 / lam), fld.coef * lam**power)
    return replace(snap, t=snap.t / lam**2, **out)


def scale_callables(fields: dict, lam):
    """Scaling action on callables fields[name](x, y, z, t); used for symbolic checks."""
    out = {}
    for name, fn in fields.items():
        power = SCALING_POWERS[name]
        out[name] = (lambda fn, power: lambda x, y, z, t: lam**power * fn(lam * x, lam * y, lam * z, lam**2 * t))(
            fn, power
        )
    return out


# ---------------------------------------------------------------------------
# the drift 1/2 (1 + xi . grad)


@dataclass(frozen=True)
class DriftWindow:
    """Radial window for xi: equal to 1 for |xi| <= inner, 0 for |xi| >= outer."""

    inner: float
    outer: float

    def __post_init__(self):
        if not 0 < self.inner < self.outer:
            raise ValueError("need 0 < inner < outer")


SPONGE_RATE = 1.0


def _window_profile(r: np.ndarray, win: DriftWindow) -> np.ndarray:
    return smooth_step(1.0 - (r - win.inner) / (win.outer - win.inner))


@lru_cache(maxsize=32)
def window_arrays(grid: PeriodicGrid, win: DriftWindow):
    """Physical arrays (w, xi_w, d) for the windowed drift.

    w is the radial window, xi_w = w xi, and d >= 0 is the damping that keeps
    the windowed operator L2-dissipative where the window falls off:
    d = SPONGE_RATE (1 - w) - (xi . grad w) / 4.
    """
    if win.outer > grid.box_side / 2 + 1e-12:
        raise ValueError("drift window must fit inside the box")
    r = grid.radius
    w = _window_profile(r, win)
    eps = 1e-6 * (win.outer - win.inner)
    r_dw = r * (_window_profile(r + eps, win) - _window_profile(np.maximum(r - eps, 0.0), win)) / (2 * eps)
    d = SPONGE_RATE * (1.0 - w) - 0.25 * r_dw
    x, y, z = grid.mesh
    xi_w = np.stack(np.broadcast_arrays(w * x, w * y, w * z))
    for a in (w, xi_w, d):
        a.setflags(write=False)
    return w, xi_w, d


def default_window(grid: PeriodicGrid) -> DriftWindow:
    L = grid.box_side
    return DriftWindow(0.36 * L, 0.45 * L)


def drift_physical(f_phys: np.ndarray, grad_phys: np.ndarray, grid: PeriodicGrid, win: DriftWindow) -> np.ndarray:
    """Physical values of the windowed drift given samples of f and grad f.

    For a scalar, grad_phys has shape (3, ...); for a vector, (3, 3, ...)
    with grad_phys[i, j] = d_j f_i.
    """
    w, xi_w, d = window_arrays(grid, win)
    c = 0.5 * w - d
    if grad_phys.ndim == 4:
        return c * f_phys + 0.5 * np.einsum("j...,j...->...", xi_w, grad_phys)
    return c * f_phys + 0.5 * np.einsum("j...,ij...->i...", xi_w, grad_phys)


def drift_operator(f: ScalarField, win: DriftWindow | None = None) -> ScalarField:
    """Windowed self-similar drift 1/2 (1 + xi . grad) f.

    Equal to the exact drift wherever the window is 1 (|xi| <= inner);
    beyond it the drift fades out and a damping term takes over.
    """
    from .grid import _grad_physical, to_physical, to_spectral

    g = f.grid
    win = win or default_window(g)
    mask = g.dealias_mask
    c = f.coef * mask
    vals = to_physical(c, g)
    if f.rank:
        grads = np.stack([_grad_physical(c[i], g) for i in range(3)])
        return VectorField(g, mask * to_spectral(drift_physical(vals, grads, g, win)))
    grads = _grad_physical(c, g)
    return ScalarField(g, mask * to_spectral(drift_physical(vals, grads, g, win)))


selfsimilar_drift = drift_operator
