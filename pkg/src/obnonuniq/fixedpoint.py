"""Duhamel fixed point for the perturbation (U_p, Theta_p).

The perturbation solves

    d_tau U_p     = L_ss U_p + P(-W . grad W + Theta_p grad(1/|xi|)),
    d_tau Theta_p = L Theta_p - W . grad(Theta_bar + Theta_p),

with W = U_l + U_p and zero data at tau = -infinity.  The mild (Duhamel)
form of these equations is the map Phi = (Phi_1, Phi_2).  Each application
of Phi is evaluated as a forced linear evolution from tau_min: the source
is built at the tau nodes from the current iterate, interpolated in tau by
cubic Lagrange polynomials, and integrated with the integrating-factor
scheme of :func:`semigroups.integrate_forced`.  This equals the Duhamel
integral without any singular quadrature, because the kernel e^{(tau-s)L}
is never formed.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .grid import (
    PeriodicGrid,
    ScalarField,
    VectorField,
    advect,
    convect,
    gravity_gradient,
    leray_project,
)
from .profiles import BackgroundProfile, bump, make_background, make_background_velocity
from .semigroups import (
    DriftDiffusionOperator,
    LinearizedOperator,
    SelfSimilarOperator,
    integrate_forced,
)
from .spectra import EigenEstimate, SyntheticPropagator

# ---------------------------------------------------------------------------
# exponents


@dataclass(frozen=True)
class ExponentParams:
    a: float
    delta: float
    beta: float
    gamma: float
    b: float
    N: float = 1.75
    tau0: float = -3.0
    M: float = 0.5

    def term_rates(self) -> dict:
        a, be, ga, b = self.a, self.beta, self.gamma, self.b
        return {
            "ul_ul": 2 * a,
            "ul_up": a + be,
            "up_ul": a + be,
            "up_up": 2 * be,
            "gravity": ga,
            "ul_thetabar": a + b,
            "ul_thetap": a + ga,
            "up_thetabar": be + b,
            "up_thetap": be + ga,
        }

    @property
    def slowest_rate(self) -> float:
        return min(self.term_rates().values())


TERM_IDS = ("ul_ul", "ul_up", "up_ul", "up_up", "gravity", "ul_thetabar", "ul_thetap", "up_thetabar", "up_thetap")
VELOCITY_TERMS = TERM_IDS[:5]

_CONSTRAINTS: list[tuple[str, Callable[[ExponentParams], bool]]] = [
    ("a > 0", lambda p: p.a > 0),
    ("delta > 0", lambda p: p.delta > 0),
    ("beta > 0", lambda p: p.beta > 0),
    ("gamma > 0", lambda p: p.gamma > 0),
    ("b > 0", lambda p: p.b > 0),
    ("a > delta", lambda p: p.a > p.delta),
    ("beta > delta", lambda p: p.beta > p.delta),
    ("gamma > a + delta", lambda p: p.gamma > p.a + p.delta),
    ("2a > beta", lambda p: 2 * p.a > p.beta),
    ("gamma > beta", lambda p: p.gamma > p.beta),
    ("beta + b > gamma", lambda p: p.beta + p.b > p.gamma),
    ("a + b > gamma", lambda p: p.a + p.b > p.gamma),
    ("beta > a", lambda p: p.beta > p.a),
    ("3/2 < N < 2", lambda p: 1.5 < p.N < 2),
    ("0 < M < 1", lambda p: 0 < p.M < 1),
]


def check_exponents(p: ExponentParams) -> list[str]:
    """Labels of the violated inequalities; an empty list means feasible."""
    return [label for label, ok in _CONSTRAINTS if not ok(p)]


def is_feasible(p: ExponentParams) -> bool:
    return not check_exponents(p)


def suggest_exponents(a: float, b: float, delta: float = 0.1, N: float = 1.75, tau0: float = -3.0, M: float = 0.5):
    """A feasible (beta, gamma) for given a and b, or None when a <= 0.

    beta = a + min(a, b)/4 and gamma is the midpoint of (beta, a + b); delta
    is shrunk if needed so that gamma > a + delta.
    """
    if not (a > 0 and b > 0):
        return None
    beta = a + 0.25 * min(a, b)
    gamma = 0.5 * (beta + a + b)
    delta = min(delta, 0.5 * (beta - a))
    p = ExponentParams(a, delta, beta, gamma, b, N, tau0, M)
    return p if is_feasible(p) else None


# ---------------------------------------------------------------------------
# trajectories


def _hs_norms(coef: np.ndarray, grid: PeriodicGrid, s: float, rank: int) -> np.ndarray:
    power = np.abs(coef) ** 2
    if rank:
        power = power.sum(axis=-4)
    w = grid.mode_weight * (1.0 + grid.k2) ** s
    return np.sqrt(grid.volume * np.einsum("...ijk,ijk->...", power, w))


@dataclass
class Trajectory:
    """Field samples coef[j] at the nodes taus[j] with a weighted sup norm."""

    taus: np.ndarray
    coef: np.ndarray
    grid: PeriodicGrid
    rate: float
    index: float
    rank = 0

    def __post_init__(self):
        self.taus = np.asarray(self.taus, dtype=float)
        want = (self.taus.size, *((3,) if self.rank else ()), *self.grid.spectral_shape)
        if self.coef.shape != want:
            raise ValueError(f"trajectory coefficients have shape {self.coef.shape}, expected {want}")

    @classmethod
    def zeros(cls, taus, grid: PeriodicGrid, rate: float, index: float):
        taus = np.asarray(taus, dtype=float)
        shape = (taus.size, *((3,) if cls.rank else ()), *grid.spectral_shape)
        return cls(taus, np.zeros(shape, dtype=complex), grid, rate, index)

    def node(self, j: int) -> ScalarField:
        if self.rank:
            return VectorField(self.grid, self.coef[j], divergence_free=True)
        return ScalarField(self.grid, self.coef[j])

    def norms(self, s: float | None = None) -> np.ndarray:
        return _hs_norms(self.coef, self.grid, self.index if s is None else s, self.rank)

    @property
    def norm(self) -> float:
        return float(np.max(np.exp(-self.rate * self.taus) * self.norms()))

    def like(self, coef: np.ndarray):
        return replace(self, coef=coef)

    def __sub__(self, other):
        return self.like(self.coef - other.coef)


class TrajectoryX(Trajectory):
    """Divergence-free velocity trajectory; norm sup e^{-beta tau} ||U||_{H^N}."""

    rank = 1

    def divergence_max(self) -> float:
        g = self.grid
        kx, ky, kz = g.kvec
        c = self.coef
        div = kx * c[:, 0] + ky * c[:, 1] + kz * c[:, 2]
        return float(np.max(_hs_norms(div, g, 0, 0) / np.maximum(_hs_norms(c, g, 1, 1), 1e-300)))


class TrajectoryY(Trajectory):
    """Temperature trajectory; norm sup e^{-gamma tau} ||Theta||_{H^{N+1}}."""

    rank = 0


# ---------------------------------------------------------------------------
# linear mode and the construction context


def linear_mode(est: EigenEstimate, tau: float, c: float = 1.0) -> VectorField:
    """U_l(tau) = c Re(e^{lambda tau} rho)."""
    if not est.converged:
        raise ValueError("eigen-estimate did not converge")
    z = c * np.exp(est.lam * tau)
    g = est.rho_re.grid
    return VectorField(g, z.real * est.rho_re.coef - z.imag * est.rho_im.coef, divergence_free=True)


def injected_estimate(prop: SyntheticPropagator) -> EigenEstimate:
    """The known eigenpair of a synthetic propagator, labelled as injected."""
    rho = prop.rho
    zero = VectorField(prop.grid, np.zeros_like(rho.coef), True)
    return EigenEstimate(complex(prop.rate, 0.0), rho, zero, 0.0, 0.5, True, [complex(prop.rate)], 0)


TAU_SPACING = 0.05


def default_tau_min(p: ExponentParams, tol: float = 1e-6, floor: float = math.log(1e-4)) -> float:
    """tau_min with e^{r tau_min} <= 1e-3 tol for the slowest rate r, kept in [floor, tau0 - 1]."""
    t = math.log(1e-3 * tol) / p.slowest_rate
    return max(min(t, p.tau0 - 1.0), min(floor, p.tau0 - 1.0))


def tau_grid(tau_min: float, tau0: float, spacing: float = TAU_SPACING) -> np.ndarray:
    """Uniform nodes ending exactly at tau0, starting at or just below tau_min."""
    if not tau_min < tau0:
        raise ValueError("need tau_min < tau0")
    m = math.ceil((tau0 - tau_min) / spacing - 1e-9)
    return tau0 - spacing * np.arange(m, -1, -1)


@dataclass
class FixedPointContext:
    """Everything Phi needs: exponents, profile, generators, linear mode and tau nodes."""

    params: ExponentParams
    bg: BackgroundProfile
    lin_op: SelfSimilarOperator
    theta_op: SelfSimilarOperator
    est: EigenEstimate
    taus: np.ndarray
    c: float = 1.0
    dt: float = 1e-3
    mode: str = "synthetic"
    meta: dict = field(default_factory=dict)

    @property
    def grid(self) -> PeriodicGrid:
        return self.bg.grid

    def U_l(self, tau: float) -> VectorField:
        return linear_mode(self.est, tau, self.c)

    def with_coefficient(self, c: float) -> "FixedPointContext":
        return replace(self, c=float(c))

    def with_tau0(self, tau0: float, tau_min: float | None = None) -> "FixedPointContext":
        p = replace(self.params, tau0=tau0)
        lo = default_tau_min(p) if tau_min is None else tau_min
        return replace(self, params=p, taus=tau_grid(lo, tau0))

    def zero_X(self) -> TrajectoryX:
        return TrajectoryX.zeros(self.taus, self.grid, self.params.beta, self.params.N)

    def zero_Y(self) -> TrajectoryY:
        return TrajectoryY.zeros(self.taus, self.grid, self.params.gamma, self.params.N + 1)


def synthetic_context(
    params: ExponentParams,
    bg: BackgroundProfile | None = None,
    c: float = 1.0,
    dt: float = 1e-3,
    tau_min: float | None = None,
    n: int = 32,
    box_side: float = 12.0,
) -> FixedPointContext:
    """Context whose velocity generator is the synthetic multiplier with rate a."""
    if bg is None:
        bg = make_background(PeriodicGrid(box_side, n), 1.0, 1.0, params.b, N=params.N)
    prop = SyntheticPropagator(bg.grid, rate=params.a, N=params.N)
    lo = default_tau_min(params) if tau_min is None else tau_min
    return FixedPointContext(
        params,
        bg,
        prop,
        DriftDiffusionOperator(bg),
        injected_estimate(prop),
        tau_grid(lo, params.tau0),
        c,
        dt,
        "synthetic",
    )


def computed_context(
    params: ExponentParams,
    bg: BackgroundProfile,
    est: EigenEstimate,
    c: float = 1.0,
    dt: float = 1e-3,
    tau_min: float | None = None,
) -> FixedPointContext:
    lo = default_tau_min(params) if tau_min is None else tau_min
    return FixedPointContext(
        params,
        bg,
        LinearizedOperator(bg),
        DriftDiffusionOperator(bg),
        est,
        tau_grid(lo, params.tau0),
        c,
        dt,
        "computed",
    )


# ---------------------------------------------------------------------------
# Phi


class NodeInterpolant:
    """Cubic Lagrange interpolation in tau of arrays given on uniform nodes."""

    def __init__(self, taus: np.ndarray, values: np.ndarray):
        self.taus = np.asarray(taus, dtype=float)
        self.values = values
        self.h = self.taus[1] - self.taus[0] if self.taus.size > 1 else 1.0

    def __call__(self, tau: float) -> np.ndarray:
        n = self.taus.size
        if n == 1:
            return self.values[0]
        x = (tau - self.taus[0]) / self.h
        j = int(np.clip(np.floor(x + 1e-9), 0, n - 2))
        if abs(x - round(x)) < 1e-9:
            return self.values[int(round(x))]
        lo = int(np.clip(j - 1, 0, max(n - 4, 0)))
        idx = range(lo, min(lo + 4, n))
        out = 0.0
        for i in idx:
            w = 1.0
            for k in idx:
                if k != i:
                    w *= (x - k) / (i - k)
            out = out + w * self.values[i]
        return out


def phi_sources(ctx: FixedPointContext, U_p: TrajectoryX, Th_p: TrajectoryY):
    """Node values of the Phi_1 and Phi_2 integrands."""
    g = ctx.grid
    s1 = np.empty_like(U_p.coef)
    s2 = np.empty_like(Th_p.coef)
    for j, tau in enumerate(ctx.taus):
        W = ctx.U_l(tau) + U_p.node(j)
        tp = Th_p.node(j)
        s1[j] = leray_project(VectorField(g, -convect(W, W).coef + gravity_gradient(tp).coef)).coef
        s2[j] = -advect(W, ctx.bg.theta_bar(tau) + tp).coef
    return s1, s2


def _evolve(op: SelfSimilarOperator, ctx: FixedPointContext, sources: np.ndarray) -> np.ndarray:
    y0 = np.zeros(sources.shape[1:], dtype=complex)
    out = integrate_forced(op, y0, ctx.taus, NodeInterpolant(ctx.taus, sources), ctx.dt)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("Duhamel evolution produced non-finite values; reduce dt or tau0")
    return out


def phi(ctx: FixedPointContext, U_p: TrajectoryX, Th_p: TrajectoryY) -> tuple[TrajectoryX, TrajectoryY]:
    s1, s2 = phi_sources(ctx, U_p, Th_p)
    U = U_p.like(_evolve(ctx.lin_op, ctx, s1))
    del s1
    Th = Th_p.like(_evolve(ctx.theta_op, ctx, s2))
    return U, Th


def apply_phi1(U_p: TrajectoryX, Th_p: TrajectoryY, ctx: FixedPointContext) -> TrajectoryX:
    s1, _ = phi_sources(ctx, U_p, Th_p)
    return U_p.like(_evolve(ctx.lin_op, ctx, s1))


def apply_phi2(U_p: TrajectoryX, Th_p: TrajectoryY, ctx: FixedPointContext) -> TrajectoryY:
    _, s2 = phi_sources(ctx, U_p, Th_p)
    return Th_p.like(_evolve(ctx.theta_op, ctx, s2))


# ---------------------------------------------------------------------------
# Picard iteration


class ContractionFailure(ArithmeticError):
    def __init__(self, message: str, log: list):
        super().__init__(message)
        self.log = log


@dataclass
class PicardResult:
    U_p: TrajectoryX
    Theta_p: TrajectoryY
    contraction_factor: float
    residual: float
    iterations: int
    log: list

    def __iter__(self):
        return iter((self.U_p, self.Theta_p, self.contraction_factor))

    @property
    def norm_X(self) -> float:
        return self.U_p.norm

    @property
    def norm_Y(self) -> float:
        return self.Theta_p.norm

    def in_ball(self, M: float) -> bool:
        return self.norm_X <= M and self.norm_Y <= M

    def to_csv(self, path):
        write_iteration_csv(self.log, path)


def write_iteration_csv(log, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iter", "norm_X", "norm_Y", "delta_X", "delta_Y", "contraction_factor"])
        for r in log:
            w.writerow([r[0], *(f"{v:.10e}" for v in r[1:])])


def picard_solve(
    ctx: FixedPointContext,
    max_iter: int = 30,
    tol: float = 1e-6,
    start: tuple[TrajectoryX, TrajectoryY] | None = None,
    verbose: Callable[[str], None] | None = None,
) -> PicardResult:
    """Iterate (U, Theta) <- Phi(U, Theta) until ||dU||_X + ||dTheta||_Y <= tol.

    The returned pair is the last iterate fed into Phi, so ``residual`` is
    exactly ||Phi(U, Theta) - (U, Theta)|| for it.  The contraction factor
    is the largest ratio of successive increments while the increments are
    above 10 tol (the last ratio when convergence is immediate).
    """
    U, Th = start if start is not None else (ctx.zero_X(), ctx.zero_Y())
    log, deltas, ratios = [], [], []
    streak = 0
    for it in range(1, max_iter + 1):
        U1, Th1 = phi(ctx, U, Th)
        dX, dY = (U1 - U).norm, (Th1 - Th).norm
        d = dX + dY
        ratio = d / deltas[-1] if deltas and deltas[-1] > 0 else float("nan")
        if deltas:
            ratios.append((ratio, deltas[-1]))
        deltas.append(d)
        log.append((it, U1.norm, Th1.norm, dX, dY, ratio))
        if verbose:
            verbose(f"iter {it}: |U|_X={U1.norm:.3e} |T|_Y={Th1.norm:.3e} delta={d:.3e} factor={ratio:.3e}")
        if d <= tol:
            big = [r for r, prev in ratios if prev > 10 * tol]
            if big:
                q = max(big)
            elif ratios:
                q = ratios[-1][0]
            else:
                q = 0.0
            return PicardResult(U, Th, q, d, it, log)
        streak = streak + 1 if ratio >= 1 else 0
        if streak >= 3:
            raise ContractionFailure(
                f"increments grew for 3 consecutive iterations (last factor {ratio:.3g}); "
                f"decrease tau0 below {ctx.params.tau0} to strengthen the e^(c tau0) smallness",
                log,
            )
        U, Th = U1, Th1
    raise ContractionFailure(f"no convergence to {tol:g} within {max_iter} iterations", log)


# ---------------------------------------------------------------------------
# term probes


@dataclass
class TermFit:
    term_id: str
    C: float
    rate: float
    expected: float

    @property
    def deviation(self) -> float:
        return self.rate - self.expected


def unit_test_fields(grid: PeriodicGrid, N: float, R: float = 1.0) -> tuple[VectorField, ScalarField]:
    """Localised phi_U (unit H^N, divergence-free) and an off-centre phi_Theta (unit H^{N+1}).

    phi_Theta is not radial: a radial temperature makes Theta grad(1/|xi|)
    a pure gradient, which the projection removes.
    """
    from .grid import dealias, hs_norm

    u = make_background_velocity(grid, 1.0, R, "curl_bump")
    u = VectorField(grid, u.coef / hs_norm(u, N), True)
    x, y, z = grid.mesh
    r = np.sqrt((x - 0.4 * R) ** 2 + (y - 0.25 * R) ** 2 + z**2)
    th = dealias(ScalarField.from_values(grid, bump(r / R)))
    return u, th * (1.0 / hs_norm(th, N + 1))


def _term_source(term: str, Ul, Up, Tp, Tb) -> np.ndarray:
    if term == "gravity":
        return gravity_gradient(Tp).coef
    if term in VELOCITY_TERMS:
        a, b = {"ul_ul": (Ul, Ul), "ul_up": (Ul, Up), "up_ul": (Up, Ul), "up_up": (Up, Up)}[term]
        return -leray_project(convect(a, b)).coef
    u = Ul if term.startswith("ul") else Up
    th = Tb if term.endswith("thetabar") else Tp
    return -advect(u, th).coef


def probe_term_bounds(
    ctx: FixedPointContext,
    term_id: str,
    tau_grid_: np.ndarray | None = None,
    fit_span: float = 1.0,
) -> TermFit:
    """Fit log ||Duhamel response of one term|| against tau on unit test trajectories.

    U_p = e^{beta tau} phi_U and Theta_p = e^{gamma tau} phi_Theta (unit X and Y
    norms), U_l the linear mode with c = 1.  The response is integrated from
    the first node; the fit uses the last ``fit_span`` of the window, after
    the start-up transient has decayed.
    """
    if term_id not in TERM_IDS:
        raise ValueError(f"unknown term {term_id!r}; expected one of {TERM_IDS}")
    p = ctx.params
    taus = np.asarray(tau_grid_ if tau_grid_ is not None else tau_grid(p.tau0 - 5.0, p.tau0), dtype=float)
    local = replace(ctx, taus=taus, c=1.0)
    phU, phT = unit_test_fields(ctx.grid, p.N, ctx.bg.support_radius)
    velocity = term_id in VELOCITY_TERMS
    shape = (taus.size, *((3,) if velocity else ()), *ctx.grid.spectral_shape)
    src = np.empty(shape, dtype=complex)
    for j, tau in enumerate(taus):
        src[j] = _term_source(
            term_id,
            local.U_l(tau),
            phU * math.exp(p.beta * tau),
            phT * math.exp(p.gamma * tau),
            ctx.bg.theta_bar(tau),
        )
    out = _evolve(ctx.lin_op if velocity else ctx.theta_op, local, src)
    s = p.N if velocity else p.N + 1
    norms = _hs_norms(out, ctx.grid, s, 1 if velocity else 0)
    sel = taus >= taus[-1] - fit_span - 1e-9
    if np.any(norms[sel] <= 0):
        raise ValueError(f"term {term_id} produced a vanishing response")
    rate, logC = np.polyfit(taus[sel], np.log(norms[sel]), 1)
    return TermFit(term_id, float(np.exp(logC)), float(rate), p.term_rates()[term_id])
