"""Leading eigenpair of L_ss from its propagator, and the amplitude sweep.

The eigenvalue problem is solved matrix-free: ARPACK (implicitly restarted
Arnoldi) is applied to v -> e^{tau* L_ss} v on real physical samples of
divergence-free, zero-mean fields, and a Ritz value mu is converted to the
rate lambda = log(mu) / tau*.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np
from scipy.sparse.linalg import ArpackNoConvergence, LinearOperator, eigs

from .grid import PeriodicGrid, VectorField, curl, hs_norm, project_coef
from .profiles import BackgroundProfile, make_background
from .semigroups import SelfSimilarOperator, StepperConfig, VelocitySemigroup, cfl_limit


class NumericalBreakdown(ArithmeticError):
    pass


class Propagator(Protocol):
    grid: PeriodicGrid

    def __call__(self, v: VectorField, tau: float) -> VectorField: ...


def _clean(c: np.ndarray, grid: PeriodicGrid) -> np.ndarray:
    c = project_coef(c, grid)
    c[:, 0, 0, 0] = 0
    return c


class SyntheticPropagator(SelfSimilarOperator):
    """Injected generator with a prescribed, localised unstable mode.

    L = Q M Q + rate * Pi, where M = -(1/2 + |k|^2) is a Fourier multiplier,
    Pi the L2-orthogonal projector onto a smooth divergence-free field rho
    and Q = I - Pi.  L is self-adjoint, rho is an eigenfunction with
    eigenvalue ``rate`` and the rest of the spectrum lies below -1/2, so
    ||e^{tau L}|| = e^{rate tau} exactly.  rho = curl(g (xi_y, xi_z, xi_x)) with a
    Gaussian g of the given width, so P(rho . grad rho) is nonzero.

    In the split diag + explicit, diag is M and the explicit part is the
    bounded rank-two remainder.  The propagator is exact on rho and uses an
    integrating-factor RK4 (Lawson) march on the complement.
    """

    rank = 1

    def __init__(self, grid: PeriodicGrid, rate: float = 0.7, width: float = 0.8, N: float = 1.75, step: float = 0.01):
        self.grid = grid
        self.rate = float(rate)
        self.width = float(width)
        self.N = N
        self.step = step
        x, y, z = grid.mesh
        gauss = np.exp(-(x**2 + y**2 + z**2) / (2 * self.width**2))
        pot = np.stack(np.broadcast_arrays(gauss * y, gauss * z, gauss * x))
        r = curl(VectorField.from_values(grid, pot))
        c = _clean(r.coef * grid.dealias_mask, grid)
        self._rho = c / math.sqrt(self._ip(c, c))
        self.diag = -(0.5 + grid.k2)
        self.diag.setflags(write=False)
        self._Mrho = self.diag * self._rho
        self._mu = self._ip(self._Mrho, self._rho)

    def _ip(self, a: np.ndarray, b: np.ndarray) -> float:
        g = self.grid
        return float(g.volume * np.sum(g.mode_weight * (a * b.conj()).real))

    @property
    def rho(self) -> VectorField:
        v = VectorField(self.grid, self._rho.copy(), divergence_free=True)
        return VectorField(self.grid, v.coef / hs_norm(v, self.N), divergence_free=True)

    def explicit(self, c):
        p = self._ip(c, self._rho)
        q = self._ip(c, self._Mrho)
        return (self.rate * p - q + self._mu * p) * self._rho - p * self._Mrho

    def _march(self, c: np.ndarray, tau: float) -> np.ndarray:
        if tau == 0:
            return c
        m = max(1, math.ceil(abs(tau) / self.step - 1e-9))
        h = tau / m
        E = np.exp(0.5 * h * self.diag)
        E2 = E * E
        B = self.explicit
        for _ in range(m):
            k1 = B(c)
            k2 = B(E * (c + 0.5 * h * k1))
            k3 = B(E * c + 0.5 * h * k2)
            k4 = B(E2 * c + h * E * k3)
            c = E2 * c + (h / 6) * (E2 * k1 + 2 * E * (k2 + k3) + k4)
        return c

    def __call__(self, v: VectorField, tau: float) -> VectorField:
        c = _clean(v.coef.copy(), self.grid)
        p = self._ip(c, self._rho)
        y = self._march(c - p * self._rho, tau)
        y = y - self._ip(y, self._rho) * self._rho
        c = y + p * math.exp(self.rate * tau) * self._rho
        return VectorField(self.grid, _clean(c, self.grid), divergence_free=True)


class StepperPropagator:
    """e^{tau L_ss} through the natural-coordinate semigroup, mean mode removed."""

    def __init__(self, bg: BackgroundProfile, cfg: StepperConfig | None = None):
        self.bg = bg
        self.grid = bg.grid
        self.semigroup = VelocitySemigroup(bg, cfg, zero_mean=True)

    def __call__(self, v: VectorField, tau: float) -> VectorField:
        return self.semigroup(v, tau)


@dataclass
class EigenEstimate:
    lam: complex
    rho_re: VectorField
    rho_im: VectorField
    residual: float
    tau_star: float
    converged: bool
    ritz_values: list = field(default_factory=list)
    iterations: int = 0

    @property
    def a(self) -> float:
        return float(self.lam.real)

    @property
    def rho(self) -> VectorField:
        return self.rho_re


def _apply_complex(prop, re: VectorField, im: VectorField, tau: float):
    return prop(re, tau), prop(im, tau)


def _pair_residual(prop, lam: complex, re: VectorField, im: VectorField, tau: float) -> float:
    pr, pi = _apply_complex(prop, re, im, tau)
    mu = np.exp(lam * tau)
    dr = pr.coef - (mu.real * re.coef - mu.imag * im.coef)
    di = pi.coef - (mu.real * im.coef + mu.imag * re.coef)
    g = re.grid
    num = hs_norm(VectorField(g, dr), 0) ** 2 + hs_norm(VectorField(g, di), 0) ** 2
    den = hs_norm(re, 0) ** 2 + hs_norm(im, 0) ** 2
    return float(np.sqrt(num / den))


def eigen_residual(est: EigenEstimate, prop: Propagator, tau_check: float) -> float:
    """||e^{tau L} rho - e^{lambda tau} rho|| / ||rho|| at an independent horizon."""
    if abs(tau_check - est.tau_star) < 1e-12:
        raise ValueError("tau_check must differ from the extraction horizon")
    return _pair_residual(prop, est.lam, est.rho_re, est.rho_im, tau_check)


def _normalise(re: np.ndarray, im: np.ndarray, grid: PeriodicGrid, N: float):
    """Fix the complex phase so the real part dominates, then scale to unit H^N."""
    z = re + 1j * im
    a = np.vdot(z, z).real
    b = np.vdot(np.conj(z), z)
    phase = np.exp(-0.5j * np.angle(b)) if abs(b) > 1e-14 * a else 1.0
    z = z * phase
    fr = VectorField.from_values(grid, z.real.copy())
    fi = VectorField.from_values(grid, z.imag.copy())
    fr = VectorField(grid, _clean(fr.coef, grid), True)
    fi = VectorField(grid, _clean(fi.coef, grid), True)
    nrm = math.sqrt(hs_norm(fr, N) ** 2 + hs_norm(fi, N) ** 2)
    if nrm == 0:
        raise NumericalBreakdown("eigenvector vanished after projection")
    return VectorField(grid, fr.coef / nrm, True), VectorField(grid, fi.coef / nrm, True)


def estimate_eigenpair(
    prop: Propagator,
    tau_star: float = 0.5,
    krylov_dim: int = 16,
    tol: float = 1e-6,
    seed: int = 0,
    max_restarts: int = 30,
    accept: float = 0.05,
    N: float = 1.75,
) -> EigenEstimate:
    """Dominant eigenpair of the generator behind ``prop``.

    ``prop`` may be a propagator or a background profile (wrapped in a
    :class:`StepperPropagator`).  Non-convergence returns the best Ritz pair
    with ``converged=False``.
    """
    if isinstance(prop, BackgroundProfile):
        prop = StepperPropagator(prop)
    if not 0.2 <= tau_star <= 1.0:
        raise ValueError("tau_star must lie in [0.2, 1]")
    if krylov_dim < 8:
        raise ValueError("krylov_dim must be at least 8")
    g = prop.grid
    shape = (3, *g.shape)
    size = int(np.prod(shape))
    count = [0]

    def matvec(x):
        count[0] += 1
        v = VectorField.from_values(g, np.asarray(x, dtype=float).reshape(shape))
        v = VectorField(g, _clean(v.coef, g), True)
        return prop(v, tau_star).values.ravel()

    rng = np.random.default_rng(seed)
    v0 = VectorField.from_values(g, rng.standard_normal(shape))
    v0 = VectorField(g, _clean(v0.coef, g), True).values.ravel()
    if not np.any(v0):
        raise NumericalBreakdown("zero start vector")
    op = LinearOperator((size, size), matvec=matvec, dtype=float)
    converged = True
    try:
        vals, vecs = eigs(op, k=2, which="LM", v0=v0, ncv=krylov_dim, maxiter=max_restarts, tol=tol)
    except ArpackNoConvergence as err:
        converged = False
        vals, vecs = err.eigenvalues, err.eigenvectors
        if len(vals) == 0:
            vals, vecs = _power_iteration(matvec, v0, 20)
    if len(vals) == 0:
        raise NumericalBreakdown("no Ritz values produced")
    i = int(np.argmax(np.abs(vals)))
    mu = complex(vals[i])
    if mu == 0:
        raise NumericalBreakdown("propagator annihilated the Krylov space")
    lam = complex(np.log(mu)) / tau_star
    if abs(lam.imag) < 1e-12 * max(1.0, abs(lam.real)):
        lam = complex(lam.real, 0.0)
    vec = vecs[:, i].reshape(shape)
    re, im = _normalise(vec.real, vec.imag, g, N)
    if lam.imag == 0:
        im = VectorField(g, np.zeros_like(im.coef), True)
        nrm = hs_norm(re, N)
        re = VectorField(g, re.coef / nrm, True)
    res = _pair_residual(prop, lam, re, im, tau_star)
    ritz = sorted((complex(np.log(v)) / tau_star for v in vals if v != 0), key=lambda z: -z.real)
    return EigenEstimate(lam, re, im, res, tau_star, converged and res <= accept, ritz, count[0])


def _power_iteration(matvec, v0, iters):
    v = v0 / np.linalg.norm(v0)
    mu = 0.0
    for _ in range(iters):
        w = matvec(v)
        mu = float(np.dot(v, w))
        nrm = np.linalg.norm(w)
        if nrm == 0:
            break
        v = w / nrm
    return np.array([mu]), v[:, None]


# ---------------------------------------------------------------------------
# amplitude sweep


@dataclass
class SweepRecord:
    amplitude: float
    estimate: EigenEstimate | None
    converged: bool
    error: str | None = None

    @property
    def usable(self) -> bool:
        e = self.estimate
        return e is not None and e.a > 0 and e.residual <= 0.05

    @property
    def row(self):
        e = self.estimate
        if e is None:
            return [f"{self.amplitude:g}", "nan", "nan", "nan", "false"]
        return [
            f"{self.amplitude:g}",
            f"{e.lam.real:.10e}",
            f"{e.lam.imag:.10e}",
            f"{e.residual:.6e}",
            "true" if self.converged else "false",
        ]


def amplitude_sweep(
    shape: str,
    amplitudes: Sequence[float],
    grid: PeriodicGrid,
    support_radius: float = 1.0,
    b: float = 1.0,
    tau_star: float = 0.5,
    krylov_dim: int = 16,
    tol: float = 1e-6,
    seed: int = 0,
    dt: float = 1e-3,
    max_restarts: int = 30,
) -> list[SweepRecord]:
    """Leading rate of L_ss for each background amplitude; descriptive only."""
    amps = list(amplitudes)
    if any(b2 <= a2 for a2, b2 in zip(amps, amps[1:])):
        raise ValueError("amplitudes must be strictly increasing")
    out = []
    for A in amps:
        try:
            bg = make_background(grid, A, support_radius, b, shape=shape)
            step = min(dt, 0.9 * cfl_limit(grid, bg.max_speed))
            prop = StepperPropagator(bg, StepperConfig(dt=step))
            est = estimate_eigenpair(prop, tau_star, krylov_dim, tol, seed, max_restarts)
            out.append(SweepRecord(A, est, est.converged))
        except (ArithmeticError, ValueError) as err:
            out.append(SweepRecord(A, None, False, str(err)))
    return out


def write_sweep_csv(records: Sequence[SweepRecord], path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["amplitude", "re_lambda", "im_lambda", "residual", "converged"])
        for r in records:
            w.writerow(r.row)


def best_usable(records: Sequence[SweepRecord]) -> SweepRecord | None:
    usable = [r for r in records if r.usable]
    return max(usable, key=lambda r: r.estimate.a) if usable else None


def growth_rate_fit(prop: Propagator, v: VectorField, taus: Sequence[float]) -> float:
    """Slope of log ||e^{tau L} v|| over taus (a lower bound for the norm growth)."""
    taus = np.asarray(taus, dtype=float)
    norms, prev, cur = [], 0.0, v
    for tau in taus:
        cur = prop(cur, tau - prev)
        prev = tau
        norms.append(hs_norm(cur, 0))
    return float(np.polyfit(taus, np.log(norms), 1)[0])

