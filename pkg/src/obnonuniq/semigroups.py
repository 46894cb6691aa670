"""Linear semigroups e^{tau L} (temperature) and e^{tau L_ss} (velocity).

Two realisations are provided.

* Natural-coordinate legs.  Because the generators do not depend on tau,
  e^{s L} can be computed by restarting at t = 1: solve
  d_t theta = Lap theta - u_bar . grad theta with u_bar(x, t) = t^{-1/2} U_bar(x / sqrt t)
  on [1, e^s], then map back with xi = x / sqrt(t).  Legs are kept short
  (s <= 0.05) so the field never leaves the box; after each leg a radial
  sponge removes whatever reached the periodic boundary.  The unbounded
  drift xi . grad is never discretised.

* Self-similar frame operators (``DriftDiffusionOperator``,
  ``LinearizedOperator``) that apply L and L_ss directly with a windowed
  drift.  They drive the forced evolutions used by the Duhamel stage and
  are the operators the residual check evaluates.

Time stepping is Strang splitting (exact half-step diffusion around a Heun
advection step) for the natural legs, and an integrating-factor Heun scheme
for the self-similar operators.
"""

from __future__ import annotations

import csv
import math
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import selfsim
from .grid import (
    PeriodicGrid,
    ScalarField,
    VectorField,
    antialias_coef,
    dilate_values,
    gravity_gradient,
    hs_norm,
    leray_project,
    project_coef,
    sponge,
    to_physical,
    to_spectral,
)
from .profiles import BackgroundProfile, make_background


class CFLError(ValueError):
    def __init__(self, dt: float, suggested: float):
        super().__init__(f"dt = {dt:.3g} violates the advective CFL bound; use dt <= {suggested:.3g}")
        self.dt = dt
        self.suggested = suggested


class ProbeStatisticsError(ValueError):
    pass


@dataclass(frozen=True)
class StepperConfig:
    dt: float = 1e-3
    leg: float = 0.05
    tau_max: float = 12.0
    sponge_start: float = 0.84
    t_start: float = 1.0

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not 0 < self.leg <= 0.25:
            raise ValueError("leg length must lie in (0, 0.25]")


def cfl_limit(grid: PeriodicGrid, speed: float) -> float:
    return math.inf if speed <= 0 else 0.5 * grid.spacing / speed


def check_cfl(grid: PeriodicGrid, speed: float, dt: float):
    lim = cfl_limit(grid, speed)
    if dt > lim:
        raise CFLError(dt, lim)


# ---------------------------------------------------------------------------
# pseudo-spectral kernels on raw coefficient arrays


def _grads(c: np.ndarray, g: PeriodicGrid) -> np.ndarray:
    """Physical gradient; shape (3, ...) for scalars and (3, 3, ...) [i, j] = d_j c_i for vectors."""
    kx, ky, kz = g.kvec
    if c.ndim == 3:
        return to_physical(np.stack([1j * kx * c, 1j * ky * c, 1j * kz * c]), g)
    return to_physical(np.stack([1j * kx * c, 1j * ky * c, 1j * kz * c], axis=1), g)


def _dot_grad(v: np.ndarray, grads: np.ndarray) -> np.ndarray:
    if grads.ndim == 4:
        return np.einsum("j...,j...->...", v, grads)
    return np.einsum("j...,ij...->i...", v, grads)


def _heat_factor(g: PeriodicGrid, h: float) -> np.ndarray:
    return np.exp(-g.k2 * h)


def _energy(c: np.ndarray, g: PeriodicGrid) -> float:
    p = np.abs(c) ** 2
    if p.ndim == 4:
        p = p.sum(axis=0)
    return float(0.5 * g.volume * np.sum(g.mode_weight * p))


# ---------------------------------------------------------------------------
# natural-coordinate realisation


class _BackgroundFlow:
    """Samples of u_bar(t) (and its gradient) at the substep times of one leg."""

    def __init__(self, bg: BackgroundProfile, with_gradient: bool, max_entries: int = 3, max_steps: int = 160):
        self.bg = bg
        self.grid = bg.grid
        self.with_gradient = with_gradient
        self.zero = bg.amplitude == 0
        self._vals = bg.U_bar.values
        self._cache: OrderedDict = OrderedDict()
        self.max_entries = max_entries
        self.max_steps = max_steps

    def at(self, t: float):
        g = self.grid
        alpha = 1.0 / math.sqrt(t)
        vals = dilate_values(self._vals, alpha) * alpha
        c = project_coef(to_spectral(vals) * g.dealias_mask, g)
        up = to_physical(c, g)
        gup = _grads(c, g) if self.with_gradient else None
        return up, gup

    def leg(self, T: float, m: int):
        ts = 1.0 + (T - 1.0) * np.arange(m + 1) / m
        if m > self.max_steps:
            return (self.at(t) for t in ts)
        key = (round(T, 14), m)
        if key not in self._cache:
            self._cache[key] = [self.at(t) for t in ts]
            while len(self._cache) > self.max_entries:
                self._cache.popitem(last=False)
        return self._cache[key]


class _NaturalSemigroup:
    rank = 0

    def __init__(self, bg: BackgroundProfile, cfg: StepperConfig | None = None, zero_mean: bool = False):
        self.bg = bg
        self.cfg = cfg or StepperConfig()
        self.grid = bg.grid
        self.zero_mean = zero_mean
        check_cfl(self.grid, bg.max_speed, self.cfg.dt)
        self.flow = _BackgroundFlow(bg, with_gradient=self.rank == 1)
        self._sponge = sponge(self.grid, self.cfg.sponge_start)

    # one natural-coordinate substep ------------------------------------
    def _rhs(self, c, flow_t):
        raise NotImplementedError

    def _finalize(self, c):
        return c

    def _heun(self, c, f0, f1, h):
        if self.flow.zero:
            return c
        k1 = self._rhs(c, f0)
        k2 = self._rhs(c + h * k1, f1)
        return c + 0.5 * h * (k1 + k2)

    def natural_steps(self, c: np.ndarray, T: float, on_step: Callable | None = None) -> np.ndarray:
        """Evolve natural-frame coefficients from t = 1 to t = T."""
        g = self.grid
        if T <= 1:
            return c
        m = max(1, math.ceil((T - 1.0) / self.cfg.dt - 1e-9))
        h = (T - 1.0) / m
        half = _heat_factor(g, 0.5 * h)
        flows = iter(self.flow.leg(T, m))
        f0 = next(flows)
        for _ in range(m):
            f1 = next(flows)
            a = c * half
            b = self._heun(a, f0, f1, h)
            new = self._finalize(b * half)
            if on_step is not None:
                on_step(c, a, b, new, h)
            c = new
            f0 = f1
        return c

    def _to_selfsimilar(self, c: np.ndarray, T: float) -> np.ndarray:
        g = self.grid
        s = math.sqrt(T)
        vals = to_physical(antialias_coef(c, g, s), g)
        vals = dilate_values(vals, s)
        vals *= selfsim._inside_mask(g, s) * self._sponge * s
        out = to_spectral(vals)
        return self._finalize(out)

    def _leg(self, c: np.ndarray, s: float) -> np.ndarray:
        T = math.exp(s)
        return self._to_selfsimilar(self.natural_steps(c, T), T)

    def _evolve(self, c: np.ndarray, tau: float) -> np.ndarray:
        if tau < 0:
            raise ValueError("semigroup time must be nonnegative")
        if tau > self.cfg.tau_max + 1e-12:
            raise ValueError(f"tau = {tau} exceeds tau_max = {self.cfg.tau_max}")
        if tau == 0:
            return c.copy()
        k = max(1, math.ceil(tau / self.cfg.leg - 1e-9))
        s = tau / k
        c = self._finalize(c)
        for _ in range(k):
            c = self._leg(c, s)
        return c

    def _wrap(self, c):
        raise NotImplementedError

    def __call__(self, f: ScalarField, tau: float):
        if f.grid != self.grid:
            raise ValueError("field and background live on different grids")
        return self._wrap(self._evolve(f.coef, float(tau)))

    def trajectory(self, f: ScalarField, taus: Sequence[float]) -> list:
        out, c, prev = [], f.coef, 0.0
        for tau in taus:
            if tau < prev:
                raise ValueError("taus must be nondecreasing")
            c = self._evolve(c, tau - prev) if tau > prev else c
            out.append(self._wrap(c))
            prev = tau
        return out


class ScalarSemigroup(_NaturalSemigroup):
    """e^{tau L} with L = Lap + 1/2 (1 + xi . grad) - U_bar . grad."""

    rank = 0

    def _rhs(self, c, flow_t):
        g = self.grid
        mask = g.dealias_mask
        up, _ = flow_t
        return -mask * to_spectral(_dot_grad(up, _grads(c * mask, g)))

    def _finalize(self, c):
        if self.zero_mean:
            c = c.copy()
            c[0, 0, 0] = 0
        return c

    def _wrap(self, c):
        return ScalarField(self.grid, c)


class VelocitySemigroup(_NaturalSemigroup):
    """e^{tau L_ss} with L_ss U = Lap U + 1/2 (1 + xi . grad) U - P(U . grad U_bar + U_bar . grad U)."""

    rank = 1

    def _rhs(self, c, flow_t):
        g = self.grid
        mask = g.dealias_mask
        up, gup = flow_t
        cm = c * mask
        u = to_physical(cm, g)
        adv = _dot_grad(up, _grads(cm, g)) + _dot_grad(u, gup)
        return -project_coef(mask * to_spectral(adv), g)

    def _finalize(self, c):
        c = project_coef(c, self.grid)
        if self.zero_mean:
            c[:, 0, 0, 0] = 0
        return c

    def _wrap(self, c):
        return VectorField(self.grid, c, divergence_free=True)


def apply_semigroup_L(theta0: ScalarField, tau: float, bg: BackgroundProfile, cfg: StepperConfig | None = None):
    return ScalarSemigroup(bg, cfg)(theta0, tau)


def apply_semigroup_Lss(U0: VectorField, tau: float, bg: BackgroundProfile, cfg: StepperConfig | None = None):
    return VelocitySemigroup(bg, cfg)(U0, tau)


def energy_identity_drift(bg: BackgroundProfile, theta0: ScalarField, T: float, dt: float = 1e-3) -> float:
    """Worst per-step defect of 1/2 d/dt ||theta||^2 + ||grad theta||^2 = 0 in natural variables.

    The dissipation over a step is taken exactly from the two diffusion
    half-steps, so the defect isolates the advection substep; it vanishes
    identically for U_bar = 0.  Normalised by ||theta0||_{H^1}^2.
    """
    sg = ScalarSemigroup(bg, StepperConfig(dt=dt))
    g = bg.grid
    worst = [0.0]

    def record(c0, a, b, c1, h):
        diss = (_energy(c0, g) - _energy(a, g)) + (_energy(b, g) - _energy(c1, g))
        defect = (_energy(c1, g) - _energy(c0, g) + diss) / h
        worst[0] = max(worst[0], abs(defect))

    sg.natural_steps(theta0.coef, T, on_step=record)
    return worst[0] / hs_norm(theta0, 1) ** 2


# ---------------------------------------------------------------------------
# smoothing probes


@dataclass
class ProbeRow:
    generator: str
    m: float
    k: float
    tau: float
    norm_ratio: float
    seed: int


@dataclass
class SemigroupProbeReport:
    generator: str
    m: float
    k: float
    rows: list = field(default_factory=list)
    exponents: list = field(default_factory=list)
    prefactors: list = field(default_factory=list)
    growth_rates: list = field(default_factory=list)

    @property
    def exponent(self) -> float:
        return float(np.mean(self.exponents)) if self.exponents else float("nan")

    @property
    def prefactor(self) -> float:
        return float(np.mean(self.prefactors)) if self.prefactors else float("nan")

    @property
    def growth_rate(self) -> float:
        return float(np.max(self.growth_rates)) if self.growth_rates else float("nan")

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["generator", "m", "k", "tau", "norm_ratio", "seed"])
            for r in self.rows:
                w.writerow([r.generator, f"{r.m:g}", f"{r.k:g}", f"{r.tau:.6g}", f"{r.norm_ratio:.12e}", r.seed])


SMALL_BRANCH = 0.5
LARGE_BRANCH = 1.5
DEFAULT_PROBE_TAUS = (0.03, 0.04, 0.05, 0.07, 0.1, 1.5, 2.0, 2.5, 3.0)


def wave_packet(grid: PeriodicGrid, q: float, rng: np.random.Generator, width: float = 1.0, waves: int = 8, vector=False):
    """Localised random-phase packet with wavenumbers concentrated near |k| = q.

    A Gaussian envelope of the given width times a sum of plane waves with
    random directions and phases.  For ``vector`` the result is projected.
    """
    x, y, z = grid.mesh
    env = np.exp(-(x**2 + y**2 + z**2) / (2 * width**2))
    dirs = rng.standard_normal((waves, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    phases = rng.uniform(0, 2 * np.pi, waves)
    if vector:
        amps = rng.standard_normal((waves, 3))
        vals = np.zeros((3, *grid.shape))
        for d, ph, a in zip(dirs, phases, amps):
            wave = np.cos(q * (d[0] * x + d[1] * y + d[2] * z) + ph)
            vals += a[:, None, None, None] * (env * wave)
        return leray_project(VectorField.from_values(grid, vals))
    vals = np.zeros(grid.shape)
    for d, ph in zip(dirs, phases):
        vals = vals + np.cos(q * (d[0] * x + d[1] * y + d[2] * z) + ph)
    return ScalarField.from_values(grid, env * vals)


def probe_wavenumber(m: float, k: float, tau: float, grid: PeriodicGrid) -> float:
    """Shell maximising (1 + q^2)^{(k-m)/2} e^{-q^2 tau}, capped below the Nyquist wavenumber."""
    q2 = (k - m) / (2.0 * tau) - 1.0
    q = math.sqrt(q2) if q2 > 0 else 0.0
    return min(q, 0.75 * math.pi / grid.spacing)


def default_probe_background(b: float = 1.0) -> BackgroundProfile:
    return make_background(PeriodicGrid(12.0, 32), amplitude=1.0, support_radius=1.0, b=b)


def probe_width(q: float, grid: PeriodicGrid) -> float:
    """Envelope width: unit for oscillating packets, as broad as the box allows when q = 0."""
    return 1.0 if q > 0 else grid.box_side / 4


def probe_smoothing(
    generator: str,
    m: float,
    k: float,
    seeds: int = 10,
    tau_grid: Sequence[float] = DEFAULT_PROBE_TAUS,
    bg: BackgroundProfile | None = None,
    cfg: StepperConfig | None = None,
    seed: int = 0,
) -> SemigroupProbeReport:
    """Fit ||e^{tau G} phi||_{H^k} ~ C tau^e over random unit-H^m inputs phi.

    Small-tau inputs are packets tuned to the frequency that saturates the
    heat-type bound at that tau; the large-tau branch follows one smooth
    packet per seed and reports the exponential growth rate.
    """
    if generator not in ("L", "L_ss"):
        raise ValueError("generator must be 'L' or 'L_ss'")
    if not k >= m >= 0:
        raise ValueError("need k >= m >= 0")
    if seeds < 5:
        raise ProbeStatisticsError(f"need at least 5 seeds for a meaningful fit, got {seeds}")
    taus = np.asarray(sorted(tau_grid), dtype=float)
    if taus.size and (taus[0] < 0.01 - 1e-12 or taus[-1] > 4 + 1e-12):
        raise ValueError("tau grid must lie in [0.01, 4]")
    bg = bg or default_probe_background()
    vector = generator == "L_ss"
    sg = (VelocitySemigroup if vector else ScalarSemigroup)(bg, cfg)
    small = taus[taus <= SMALL_BRANCH]
    large = taus[taus >= LARGE_BRANCH]
    rep = SemigroupProbeReport(generator, m, k)
    g = bg.grid
    for s in range(seeds):
        rng = np.random.default_rng([seed, s])
        ratios = []
        for tau in small:
            q = probe_wavenumber(m, k, tau, g)
            phi = wave_packet(g, q, rng, width=probe_width(q, g), vector=vector)
            phi = phi * (1.0 / hs_norm(phi, m))
            r = hs_norm(sg(phi, tau), k)
            ratios.append(r)
            rep.rows.append(ProbeRow(generator, m, k, float(tau), r, s))
        if len(small) >= 2:
            e, c0 = np.polyfit(np.log(small), np.log(ratios), 1)
            rep.exponents.append(float(e))
            rep.prefactors.append(float(np.exp(c0)))
        if len(large):
            phi = wave_packet(g, 1.0, rng, vector=vector)
            phi = phi * (1.0 / hs_norm(phi, m))
            traj = sg.trajectory(phi, large)
            lr = [hs_norm(f, k) for f in traj]
            for tau, r in zip(large, lr):
                rep.rows.append(ProbeRow(generator, m, k, float(tau), r, s))
            if len(large) >= 2:
                rep.growth_rates.append(float(np.polyfit(large, np.log(lr), 1)[0]))
    return rep


# ---------------------------------------------------------------------------
# self-similar frame operators and forced evolution


class SelfSimilarOperator:
    """A linear operator split as diag (exact multiplier) + explicit part.

    Subclasses provide ``diag`` (array broadcastable to coefficients) and
    ``explicit(c)``.  ``apply`` returns the full operator.
    """

    rank = 0
    grid: PeriodicGrid
    diag: np.ndarray

    def explicit(self, c: np.ndarray) -> np.ndarray:
        return np.zeros_like(c)

    def apply(self, c: np.ndarray) -> np.ndarray:
        return self.diag * c + self.explicit(c)

    def finalize(self, c: np.ndarray) -> np.ndarray:
        return project_coef(c, self.grid) if self.rank else c

    @property
    def speed(self) -> float:
        return 0.0


class DriftDiffusionOperator(SelfSimilarOperator):
    """L Theta = Lap Theta + D_w Theta - U_bar . grad Theta, D_w the windowed drift."""

    rank = 0

    def __init__(self, bg: BackgroundProfile, window: selfsim.DriftWindow | None = None):
        g = bg.grid
        self.grid = g
        self.window = window or selfsim.default_window(g)
        w, xi_w, d = selfsim.window_arrays(g, self.window)
        self._c = 0.5 * w - d
        self._ub = to_physical(bg.U_bar.coef * g.dealias_mask, g)
        self._v = 0.5 * xi_w - self._ub
        self.diag = -g.k2

    @property
    def speed(self) -> float:
        return float(np.sqrt((self._v**2).sum(axis=0)).max())

    def explicit(self, c):
        g = self.grid
        mask = g.dealias_mask
        cm = c * mask
        both = to_physical(np.stack([cm, *(1j * k * cm for k in g.kvec)]), g)
        return mask * to_spectral(self._c * both[0] + _dot_grad(self._v, both[1:]))


class LinearizedOperator(SelfSimilarOperator):
    """L_ss U = Lap U + P[D_w U - U . grad U_bar - U_bar . grad U]."""

    rank = 1

    def __init__(self, bg: BackgroundProfile, window: selfsim.DriftWindow | None = None):
        g = bg.grid
        self.grid = g
        self.window = window or selfsim.default_window(g)
        w, xi_w, d = selfsim.window_arrays(g, self.window)
        self._c = 0.5 * w - d
        cu = bg.U_bar.coef * g.dealias_mask
        self._ub = to_physical(cu, g)
        self._gub = _grads(cu, g)
        self._v = 0.5 * xi_w - self._ub
        self.diag = -g.k2

    @property
    def speed(self) -> float:
        return float(np.sqrt((self._v**2).sum(axis=0)).max())

    def explicit(self, c):
        g = self.grid
        mask = g.dealias_mask
        cm = c * mask
        u = to_physical(cm, g)
        out = self._c * u + _dot_grad(self._v, _grads(cm, g)) - _dot_grad(u, self._gub)
        return project_coef(mask * to_spectral(out), g)


def integrate_forced(
    op: SelfSimilarOperator,
    y0: np.ndarray,
    tau_nodes: np.ndarray,
    source: Callable[[float], np.ndarray] | None,
    dt: float,
) -> np.ndarray:
    """Solve d_tau y = op(y) + source(tau) and return y at every node.

    Integrating-factor Heun: the diagonal part is exact, the explicit part
    and the source are trapezoidal.  Each node interval is split into equal
    substeps no longer than ``dt``.
    """
    nodes = np.asarray(tau_nodes, dtype=float)
    out = np.empty((nodes.size, *y0.shape), dtype=complex)
    y = op.finalize(np.array(y0, dtype=complex))
    out[0] = y
    check_cfl(op.grid, op.speed, dt)
    factors: dict = {}
    for j in range(nodes.size - 1):
        span = nodes[j + 1] - nodes[j]
        m = max(1, math.ceil(span / dt - 1e-9))
        h = span / m
        key = round(h, 15)
        if key not in factors:
            factors[key] = np.exp(h * op.diag)
        E = factors[key]
        tau = nodes[j]
        s0 = source(tau) if source is not None else 0.0
        for i in range(m):
            t1 = nodes[j] + (i + 1) * h
            s1 = source(t1) if source is not None else 0.0
            k1 = op.explicit(y) + s0
            ys = op.finalize(E * (y + h * k1))
            k2 = op.explicit(ys) + s1
            y = op.finalize(E * (y + 0.5 * h * k1) + 0.5 * h * k2)
            s0 = s1
        out[j + 1] = y
    return out


# ---------------------------------------------------------------------------
# nonlinear natural-frame solver (used for the scaling check)


def evolve_boussinesq(snap: selfsim.SolutionSnapshot, t_end: float, steps: int) -> selfsim.SolutionSnapshot:
    """March the forced system d_t u + P(u . grad u) = Lap u + P(theta grad G) + f,
    d_t theta + u . grad theta = Lap theta + h from snap.t to t_end with fixed f, h.

    Strang splitting with exact diffusion and a Heun step for the rest.
    The returned snapshot carries the pressure of the final state.
    """
    g = snap.u.grid
    mask = g.dealias_mask
    h = (t_end - snap.t) / steps
    half = _heat_factor(g, 0.5 * h)
    fu = snap.f.coef if snap.f is not None else 0.0
    fh = snap.h.coef if snap.h is not None else 0.0

    def rhs(cu, ct):
        cum, ctm = cu * mask, ct * mask
        u = to_physical(cum, g)
        adv_u = mask * to_spectral(_dot_grad(u, _grads(cum, g)))
        adv_t = mask * to_spectral(_dot_grad(u, _grads(ctm, g)))
        buoy = gravity_gradient(ScalarField(g, ct)).coef
        return project_coef(-adv_u + buoy + fu, g), -adv_t + fh

    cu, ct = project_coef(snap.u.coef, g), snap.theta.coef
    for _ in range(steps):
        cu, ct = cu * half, ct * half
        a1, b1 = rhs(cu, ct)
        a2, b2 = rhs(cu + h * a1, ct + h * b1)
        cu = (cu + 0.5 * h * (a1 + a2)) * half
        ct = (ct + 0.5 * h * (b1 + b2)) * half
    u = VectorField(g, cu, divergence_free=True)
    th = ScalarField(g, ct)
    return selfsim.SolutionSnapshot(t_end, u, th, pressure(u, th, snap.f), snap.f, snap.h)


def pressure(u: VectorField, theta: ScalarField, f: VectorField | None = None) -> ScalarField:
    """p solving Lap p = div(-u . grad u + theta grad G + f), zero mean."""
    g = u.grid
    mask = g.dealias_mask
    cum = u.coef * mask
    up = to_physical(cum, g)
    rhs = -mask * to_spectral(_dot_grad(up, _grads(cum, g)))
    tp = to_physical(theta.coef * mask, g)
    from .grid import gravity_potential

    _, dG = gravity_potential(g)
    rhs = rhs + mask * to_spectral(tp * dG)
    if f is not None:
        rhs = rhs + f.coef
    kx, ky, kz = g.kvec
    div = 1j * (kx * rhs[0] + ky * rhs[1] + kz * rhs[2])
    kk = g.kd2
    p = np.where(kk == 0, 0.0, -div / np.where(kk == 0, 1.0, kk))
    return ScalarField(g, p)
