"""Background profiles (U_bar, Theta_bar) and the forcing they induce."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate

from . import selfsim
from .grid import (
    PeriodicGrid,
    ScalarField,
    VectorField,
    advect,
    convect,
    curl,
    dealias,
    gravity_gradient,
    hs_norm,
    laplacian,
    leray_project,
)

SHAPES = ("axisymmetric_swirl", "curl_bump")


class ConfigurationError(ValueError):
    pass


class DegenerateFitError(ValueError):
    pass


def bump(s: np.ndarray) -> np.ndarray:
    """exp(1 - 1/(1 - s^2)) for |s| < 1, else 0; equals 1 at s = 0."""
    s = np.asarray(s, dtype=float)
    inside = np.abs(s) < 1
    q = np.where(inside, 1.0 - s**2, 1.0)
    return np.where(inside, np.exp(1.0 - 1.0 / q), 0.0)


def bump_derivative(s: np.ndarray) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    inside = np.abs(s) < 1
    q = np.where(inside, 1.0 - s**2, 1.0)
    return np.where(inside, -2.0 * s / q**2 * np.exp(1.0 - 1.0 / q), 0.0)


def swirl_l2_squared(R: float) -> float:
    """Continuum ||curl(psi e_z)||^2 for psi(r) = bump(r/R): (8 pi / 3) int psi'^2 r^2 dr."""
    val, _ = integrate.quad(lambda r: (bump_derivative(r / R) / R) ** 2 * r**2, 0.0, R, limit=200)
    return 8.0 * np.pi / 3.0 * val


def _check_radius(grid: PeriodicGrid, R: float):
    if not R > 0:
        raise ConfigurationError("support_radius must be positive")
    if R > grid.box_side / 8 + 1e-12:
        raise ConfigurationError(
            f"support_radius {R} exceeds box_side/8 = {grid.box_side / 8}; enlarge the box or shrink the profile"
        )


def _radial_bump(grid: PeriodicGrid, R: float) -> ScalarField:
    return dealias(ScalarField.from_values(grid, bump(grid.radius / R)))


def make_background_velocity(grid: PeriodicGrid, A: float, R: float, shape: str = "axisymmetric_swirl") -> VectorField:
    """Divergence-free background with ||U||_{L2} = A, built as a curl.

    ``axisymmetric_swirl`` is curl(psi e_z), an azimuthal flow around the
    z-axis; ``curl_bump`` is curl(psi (y, z, x) / R), a fully 3D control.
    The potential is band-limited to the dealiased range before the curl.
    """
    _check_radius(grid, R)
    if shape not in SHAPES:
        raise ConfigurationError(f"unknown profile shape {shape!r}; expected one of {SHAPES}")
    if A < 0:
        raise ConfigurationError("amplitude must be nonnegative")
    if A == 0:
        return VectorField.zeros(grid)
    psi = bump(grid.radius / R)
    if shape == "axisymmetric_swirl":
        pot = np.stack([np.zeros_like(psi), np.zeros_like(psi), psi])
    else:
        x, y, z = grid.mesh
        pot = np.stack(np.broadcast_arrays(psi * y / R, psi * z / R, psi * x / R))
    potential = dealias(VectorField.from_values(grid, pot))
    U = curl(potential)
    norm = hs_norm(U, 0)
    return VectorField(grid, U.coef * (A / norm), divergence_free=True)


def make_theta_core(grid: PeriodicGrid, R: float, amplitude: float = 1.0, N: float = 1.75) -> ScalarField:
    """Radial bump normalised to ||Theta_c||_{H^{N+1}} = amplitude."""
    _check_radius(grid, R)
    th = _radial_bump(grid, R)
    if amplitude == 0:
        return ScalarField.zeros(grid)
    return th * (amplitude / hs_norm(th, N + 1))


@dataclass
class BackgroundProfile:
    U_bar: VectorField
    Theta_core: ScalarField
    b: float
    amplitude: float
    support_radius: float
    shape: str = "axisymmetric_swirl"
    theta_amplitude: float = 1.0

    def __post_init__(self):
        if not self.b > 0:
            raise ConfigurationError("b must be positive")
        if self.U_bar.grid != self.Theta_core.grid:
            raise ConfigurationError("profile fields live on different grids")

    @property
    def grid(self) -> PeriodicGrid:
        return self.U_bar.grid

    def theta_bar(self, tau: float) -> ScalarField:
        return self.Theta_core * np.exp(self.b * tau)

    def natural_velocity(self, t: float) -> VectorField:
        """u_bar(x, t) = t^(-1/2) U_bar(x / sqrt(t)) on the same grid."""
        return selfsim.to_natural(self.U_bar, t, selfsim.VELOCITY)

    @property
    def max_speed(self) -> float:
        return float(np.sqrt((self.U_bar.values**2).sum(axis=0)).max())


def make_background(
    grid: PeriodicGrid,
    amplitude: float,
    support_radius: float,
    b: float,
    shape: str = "axisymmetric_swirl",
    theta_amplitude: float = 1.0,
    N: float = 1.75,
) -> BackgroundProfile:
    U = make_background_velocity(grid, amplitude, support_radius, shape)
    Th = make_theta_core(grid, support_radius, theta_amplitude, N)
    return BackgroundProfile(U, Th, b, amplitude, support_radius, shape, theta_amplitude)


def profile_window(p: BackgroundProfile) -> selfsim.DriftWindow:
    """Drift cutoff shared with the evolution and residual operators (exact beyond 3R)."""
    return selfsim.default_window(p.grid)


@dataclass
class ForcingPair:
    """F(tau) = F_steady + e^{b tau} F_theta and H(tau) = e^{b tau} H_core."""

    F_steady: VectorField
    F_theta: VectorField
    H_core: ScalarField
    b: float
    meta: dict = field(default_factory=dict)

    @property
    def grid(self) -> PeriodicGrid:
        return self.H_core.grid

    def F(self, tau: float) -> VectorField:
        return VectorField(self.grid, self.F_steady.coef + np.exp(self.b * tau) * self.F_theta.coef, True)

    def H(self, tau: float) -> ScalarField:
        return self.H_core * np.exp(self.b * tau)

    def f(self, t: float, rebox: bool = True) -> VectorField:
        return selfsim.to_natural(self.F(np.log(t)), t, selfsim.FORCING, rebox=rebox)

    def h(self, t: float, rebox: bool = True) -> ScalarField:
        return selfsim.to_natural(self.H(np.log(t)), t, selfsim.FORCING, rebox=rebox)

    def restricted(self, steady: bool = True, thermal: bool = True) -> "ForcingPair":
        g = self.grid
        z_v, z_s = VectorField.zeros(g), ScalarField.zeros(g)
        return ForcingPair(
            self.F_steady if steady else z_v,
            self.F_theta if thermal else z_v,
            self.H_core if thermal else z_s,
            self.b,
            dict(self.meta),
        )


def synthesize_forcing(p: BackgroundProfile, window: selfsim.DriftWindow | None = None) -> ForcingPair:
    """Forcing that makes (U_bar, e^{b tau} Theta_c) an exact self-similar solution.

    Every term uses the same discrete operators as the residual check.
    """
    win = window or profile_window(p)
    U, Th = p.U_bar, p.Theta_core
    steady = -selfsim.drift_operator(U, win).coef - laplacian(U).coef + convect(U, U).coef
    F_steady = leray_project(VectorField(p.grid, steady))
    F_theta = -gravity_gradient(Th)
    H = p.b * Th.coef - selfsim.drift_operator(Th, win).coef - laplacian(Th).coef + advect(U, Th).coef
    return ForcingPair(F_steady, F_theta, ScalarField(p.grid, H), p.b, {"window": win})


def forcing_norm(fp: ForcingPair, t: float) -> float:
    """||f(t)||_{L2} + ||h(t)||_{L2} in natural variables (exact rebox)."""
    return hs_norm(fp.f(t), 0) + hs_norm(fp.h(t), 0)


def forcing_decay_slope(fp: ForcingPair, t_range) -> float:
    """Least-squares slope of log(||f|| + ||h||) against log t."""
    ts = np.asarray(t_range, dtype=float)
    if ts.size < 8:
        raise ValueError("need at least 8 sample times")
    if np.any(ts <= 0) or np.any(ts > 1):
        raise ValueError("sample times must lie in (0, 1]")
    norms = np.array([forcing_norm(fp, t) for t in ts])
    if np.any(norms < 1e-14):
        raise DegenerateFitError("forcing norm below 1e-14; slope undefined")
    slope, _ = np.polyfit(np.log(ts), np.log(norms), 1)
    return float(slope)


def forcing_l1_in_time(fp: ForcingPair, t_min: float, t_max: float = 1.0, samples: int = 64) -> float:
    """Quadrature of int_{t_min}^{t_max} (||f|| + ||h||) dt on a log-spaced grid."""
    taus = np.linspace(np.log(t_min), np.log(t_max), samples)
    vals = np.array([forcing_norm(fp, np.exp(s)) * np.exp(s) for s in taus])
    return float(integrate.trapezoid(vals, taus))


def bump_callable(R: float) -> Callable:
    """Continuum radial bump as a function of (x, y, z); used by oracles."""

    def fn(x, y, z):
        return bump(np.sqrt(x**2 + y**2 + z**2) / R)

    return fn
