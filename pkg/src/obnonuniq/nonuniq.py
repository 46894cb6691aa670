"""Two (or more) solutions with the same forcing and zero initial data.

A bundle is U = U_bar + c U_l + U_p(c), Theta = Theta_bar + Theta_p(c) on
the tau nodes of a fixed-point context.  The forcing (F, H) is synthesised
once from the profile and shared by reference between bundles.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import selfsim
from .fixedpoint import FixedPointContext, PicardResult, TrajectoryX, TrajectoryY, _hs_norms, picard_solve
from .grid import (
    ScalarField,
    VectorField,
    advect,
    convect,
    divergence_ratio,
    gravity_gradient,
    hs_norm,
    laplacian,
    leray_project,
    project_coef,
    dilate_values,
    to_physical,
    to_spectral,
)
from .profiles import ForcingPair, synthesize_forcing
from .semigroups import LinearizedOperator

STENCIL = 7


@dataclass
class SolutionBundle:
    c: float
    ctx: FixedPointContext
    forcing: ForcingPair
    U_p: TrajectoryX
    Theta_p: TrajectoryY
    picard: PicardResult | None = None
    residuals: dict = field(default_factory=dict)

    @property
    def taus(self) -> np.ndarray:
        return self.ctx.taus

    @property
    def grid(self):
        return self.ctx.grid

    def W(self, j: int) -> VectorField:
        """Perturbation c U_l + U_p at node j."""
        return self.ctx.U_l(self.taus[j]) + self.U_p.node(j)

    def U(self, j: int) -> VectorField:
        return VectorField(self.grid, self.ctx.bg.U_bar.coef + self.W(j).coef, divergence_free=True)

    def Theta(self, j: int) -> ScalarField:
        return self.ctx.bg.theta_bar(self.taus[j]) + self.Theta_p.node(j)

    def natural(self, j: int) -> selfsim.SolutionSnapshot:
        """(u, theta, f, h) at t = e^{tau_j} on the box of side L sqrt(t)."""
        t = math.exp(self.taus[j])
        return selfsim.SolutionSnapshot(
            t,
            u=selfsim.to_natural(self.U(j), t, selfsim.VELOCITY, rebox=True),
            theta=selfsim.to_natural(self.Theta(j), t, selfsim.TEMPERATURE, rebox=True),
            f=self.forcing.f(t),
            h=self.forcing.h(t),
        )


def assemble_solution(
    c: float,
    ctx: FixedPointContext,
    forcing: ForcingPair | None = None,
    tol: float = 1e-6,
    max_iter: int = 30,
    start=None,
    verbose=None,
) -> SolutionBundle:
    """Solve the fixed point for coefficient c and wrap it with the shared forcing."""
    local = ctx.with_coefficient(c)
    forcing = forcing if forcing is not None else synthesize_forcing(ctx.bg)
    res = picard_solve(local, max_iter=max_iter, tol=tol, start=start, verbose=verbose)
    return SolutionBundle(float(c), local, forcing, res.U_p, res.Theta_p, res)


# ---------------------------------------------------------------------------
# residuals


def fd_weights(offsets, order: int = 1) -> np.ndarray:
    """Finite-difference weights for the ``order``-th derivative at 0 on integer offsets."""
    x = np.asarray(offsets, dtype=float)
    V = np.vander(x, increasing=True).T
    rhs = np.zeros(x.size)
    rhs[order] = math.factorial(order)
    return np.linalg.solve(V, rhs)


def _stencil(j: int, n: int, width: int = STENCIL):
    if n < width:
        raise ValueError(f"need at least {width} tau nodes for the time derivative")
    lo = min(max(j - width // 2, 0), n - width)
    idx = np.arange(lo, lo + width)
    return idx, fd_weights(idx - j)


@dataclass
class ResidualReport:
    frame: str
    taus: np.ndarray
    momentum: np.ndarray
    heat: np.ndarray
    divergence: np.ndarray

    @property
    def max(self) -> float:
        return float(max(self.momentum.max(), self.heat.max()))

    def rows(self, label: str = ""):
        for i, tau in enumerate(self.taus):
            yield [label, self.frame, f"{tau:.6f}", f"{self.momentum[i]:.6e}", f"{self.heat[i]:.6e}", f"{self.divergence[i]:.6e}"]


def _l2(c: np.ndarray, g) -> float:
    return float(_hs_norms(c, g, 0, 1 if c.ndim == 4 else 0))


def _ratio(res: float, scale: float) -> float:
    return res / scale if scale > 0 else 0.0


def _synthetic_correction(bundle: SolutionBundle):
    """(L_inj - L_ss) applied to the perturbation, or None for computed mode.

    In synthetic mode the injected generator replaces L_ss for the
    perturbation; the residual is then that of the system with this
    substitution, and this term records the difference explicitly.
    """
    if bundle.ctx.mode != "synthetic":
        return None
    true_op = LinearizedOperator(bundle.ctx.bg, bundle.ctx.theta_op.window)
    inj = bundle.ctx.lin_op

    def corr(w: np.ndarray) -> np.ndarray:
        return project_coef(inj.apply(w) - true_op.apply(w), bundle.grid)

    return corr


def _correction(bundle: SolutionBundle):
    if "_corr" not in bundle.__dict__:
        bundle.__dict__["_corr"] = _synthetic_correction(bundle)
    return bundle.__dict__["_corr"]


def _time_derivative(bundle: SolutionBundle, j: int, get) -> np.ndarray:
    idx, w = _stencil(j, bundle.taus.size)
    h = bundle.taus[1] - bundle.taus[0]
    return sum(wi * get(i) for wi, i in zip(w, idx)) / h


def residual_check(bundle: SolutionBundle, frame: str = "selfsimilar", nodes=None) -> ResidualReport:
    """Relative residuals of the momentum, heat and divergence equations.

    Each entry is ||residual||_{L2} / (sum of the L2 norms of its terms) at a
    node.  ``selfsimilar`` evaluates the self-similar system with the same
    windowed drift used by the construction, on the whole box.
    ``natural`` evaluates d_t u + P(u . grad u) = Lap u + P(theta grad G) + f
    (and the heat equation) on the natural box of each node, with d_t taken
    at fixed x from neighbouring nodes resampled onto that box.  The
    residual is filtered to the dealiased band (the scales the discrete
    operators act on) and measured over the core |xi| <= inner window
    radius, where the windowed model coincides with the unmodified equations.
    """
    if frame not in ("selfsimilar", "natural"):
        raise ValueError("frame must be 'selfsimilar' or 'natural'")
    nodes = range(bundle.taus.size) if nodes is None else nodes
    fn = _selfsimilar_residual if frame == "selfsimilar" else _natural_residual
    out = np.array([fn(bundle, j) for j in nodes])
    taus = bundle.taus[list(nodes)]
    return ResidualReport(frame, taus, out[:, 0], out[:, 1], out[:, 2])


def _selfsimilar_residual(bundle: SolutionBundle, j: int):
    g = bundle.grid
    win = bundle.ctx.theta_op.window
    tau = bundle.taus[j]
    U, Th = bundle.U(j), bundle.Theta(j)
    corr = _correction(bundle)

    dU = _time_derivative(bundle, j, lambda i: bundle.W(i).coef)
    terms = [
        project_coef(selfsim.drift_operator(U, win).coef, g),
        laplacian(U).coef,
        -leray_project(convect(U, U)).coef,
        gravity_gradient(Th).coef,
        bundle.forcing.F(tau).coef,
    ]
    if corr is not None:
        terms.append(corr(bundle.W(j).coef))
    r_mom = dU - sum(terms)
    mom = _ratio(_l2(r_mom, g), _l2(dU, g) + sum(_l2(t, g) for t in terms))

    dT = _time_derivative(bundle, j, lambda i: bundle.Theta(i).coef)
    hterms = [
        selfsim.drift_operator(Th, win).coef,
        laplacian(Th).coef,
        -advect(U, Th).coef,
        bundle.forcing.H(tau).coef,
    ]
    r_heat = dT - sum(hterms)
    heat = _ratio(_l2(r_heat, g), _l2(dT, g) + sum(_l2(t, g) for t in hterms))
    return mom, heat, divergence_ratio(U)


def _natural_residual(bundle: SolutionBundle, j: int):
    g = bundle.grid
    taus = bundle.taus
    t = math.exp(taus[j])
    snap = bundle.natural(j)
    ng = snap.u.grid
    win = bundle.ctx.theta_op.window
    core = (g.radius <= win.inner).astype(float)
    corr = _correction(bundle)

    # d_t at fixed x: u(x, t_i) = t_i^{-1/2} U_i(x / sqrt(t_i)); on node j's box x = sqrt(t_j) xi
    idx, w = _stencil(j, taus.size)
    h = taus[1] - taus[0]
    du = np.zeros((3, *g.shape))
    dth = np.zeros(g.shape)
    for wi, i in zip(w, idx):
        ti = math.exp(taus[i])
        alpha = math.sqrt(t / ti)
        du += wi * ti**-0.5 * dilate_values(bundle.U(i).values, alpha)
        dth += wi * ti**-0.5 * dilate_values(bundle.Theta(i).values, alpha)
    du /= h * t
    dth /= h * t
    # resolved-scale residual: the discrete operators act on the 2/3 band
    mask = ng.dealias_mask
    du_c = project_coef(mask * to_spectral(du), ng)
    dth_c = mask * to_spectral(dth)

    u, th = snap.u, snap.theta
    terms = [
        laplacian(u).coef,
        -leray_project(convect(u, u)).coef,
        gravity_gradient(th).coef,
        snap.f.coef,
    ]
    if corr is not None:
        terms.append(corr(bundle.W(j).coef) * t**-1.5)
    mom = _core_ratio(du_c, terms, ng, core)
    hterms = [laplacian(th).coef, -advect(u, th).coef, snap.h.coef]
    heat = _core_ratio(dth_c, hterms, ng, core)
    return mom, heat, divergence_ratio(u)


def _core_ratio(lhs: np.ndarray, terms: list, grid, core: np.ndarray) -> float:
    res = _core_l2(to_physical(lhs - sum(terms), grid), core)
    scale = _core_l2(to_physical(lhs, grid), core) + sum(_core_l2(to_physical(c, grid), core) for c in terms)
    return _ratio(res, scale)


def _core_l2(vals: np.ndarray, core: np.ndarray) -> float:
    p = vals**2
    if p.ndim == 4:
        p = p.sum(axis=0)
    return float(np.sqrt(np.sum(core * p)))


# ---------------------------------------------------------------------------
# separation and initial data


@dataclass
class SeparationReport:
    taus: np.ndarray
    separation: np.ndarray
    theta_separation: np.ndarray
    C1: float
    C2: float
    a: float
    beta: float
    early_rate: float

    @property
    def envelope(self) -> np.ndarray:
        return self.C1 * np.exp(self.a * self.taus) - self.C2 * np.exp(self.beta * self.taus)

    @property
    def minimum(self) -> float:
        return float(self.separation.min())

    @property
    def positive(self) -> bool:
        return bool(np.all(self.separation > 0))

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["tau", "t", "separation_HN", "envelope", "theta_separation_HN1"])
            env = self.envelope
            for i, tau in enumerate(self.taus):
                w.writerow(
                    [
                        f"{tau:.6f}",
                        f"{math.exp(tau):.6e}",
                        f"{self.separation[i]:.10e}",
                        f"{env[i]:.10e}",
                        f"{self.theta_separation[i]:.10e}",
                    ]
                )


def separation(b1: SolutionBundle, b2: SolutionBundle, early_fraction: float = 1 / 3) -> SeparationReport:
    """||U^1 - U^2||_{H^N} per node, the lower envelope C1 e^{a tau} - C2 e^{beta tau}
    and the growth rate fitted on the earliest ``early_fraction`` of the window."""
    if b1.forcing is not b2.forcing:
        raise ValueError("bundles must share the same forcing object")
    if not np.array_equal(b1.taus, b2.taus):
        raise ValueError("bundles live on different tau grids")
    p = b1.ctx.params
    g = b1.grid
    taus = b1.taus
    dU = np.stack([b1.W(j).coef - b2.W(j).coef for j in range(taus.size)])
    dT = b1.Theta_p.coef - b2.Theta_p.coef
    sep = _hs_norms(dU, g, p.N, 1)
    tsep = _hs_norms(dT, g, p.N + 1, 0)
    est = b1.ctx.est
    lin = np.array([hs_norm(b1.ctx.with_coefficient(1.0).U_l(tau), p.N) * math.exp(-est.a * tau) for tau in taus])
    C1 = abs(b1.c - b2.c) * float(lin.min())
    C2 = (b1.U_p - b2.U_p).norm
    early = taus <= taus[0] + early_fraction * (taus[-1] - taus[0]) + 1e-9
    if np.any(sep[early] <= 0):
        rate = float("nan")
    else:
        rate = float(np.polyfit(taus[early], np.log(sep[early]), 1)[0])
    return SeparationReport(taus, sep, tsep, C1, C2, est.a, p.beta, rate)


@dataclass
class InitialDataReport:
    t: np.ndarray
    u_norm: np.ndarray
    theta_norm: np.ndarray
    slope: float

    @property
    def decreasing(self) -> bool:
        return bool(np.all(np.diff(self.u_norm) > 0) and np.all(np.diff(self.theta_norm) > 0))


def initial_data_profile(bundle: SolutionBundle, times=(1e-3, 1e-2, 1e-1)) -> InitialDataReport:
    """||u(t)||_{L2} = t^{1/4} ||U(log t)||_{L2} (and theta) at the nodes nearest ``times``.

    The slope of log ||u|| against log t is fitted through those nodes.
    """
    taus = bundle.taus
    js = sorted({int(np.argmin(np.abs(taus - math.log(t)))) for t in times})
    ts = np.exp(taus[js])
    un = np.array([t**0.25 * hs_norm(bundle.U(j), 0) for t, j in zip(ts, js)])
    tn = np.array([t**0.25 * hs_norm(bundle.Theta(j), 0) for t, j in zip(ts, js)])
    slope = float(np.polyfit(np.log(ts), np.log(un), 1)[0])
    return InitialDataReport(ts, un, tn, slope)


def energy_integral(bundle: SolutionBundle) -> float:
    """int_{t_min}^{t_0} ||u(t)||^2 dt = int e^{3 tau / 2} ||U||^2 dtau (trapezoid)."""
    from scipy.integrate import trapezoid

    taus = bundle.taus
    vals = np.array([math.exp(1.5 * tau) * hs_norm(bundle.U(j), 0) ** 2 for j, tau in enumerate(taus)])
    return float(trapezoid(vals, taus))


def solution_family(ctx: FixedPointContext, coefficients, forcing: ForcingPair | None = None, tol: float = 1e-6):
    """Bundles for several coefficients sharing one forcing, and all pairwise minimal separations."""
    forcing = forcing if forcing is not None else synthesize_forcing(ctx.bg)
    bundles = [assemble_solution(c, ctx, forcing, tol) for c in coefficients]
    pairs = {}
    for i in range(len(bundles)):
        for k in range(i + 1, len(bundles)):
            pairs[(bundles[i].c, bundles[k].c)] = separation(bundles[i], bundles[k]).minimum
    return bundles, pairs


# ---------------------------------------------------------------------------
# the demo pipeline: spectrum -> fixed point -> two bundles -> checks


class InvariantFailure(RuntimeError):
    pass


class InfeasibleExponents(ValueError):
    def __init__(self, violated: list):
        super().__init__("infeasible exponents: " + "; ".join(violated))
        self.violated = violated


RESIDUAL_TOL = 1e-3
ZERO_DATA_SLOPE = 0.25 - 0.05
RATE_TOL = 0.2
MIN_DT_ORDER = 0.9


@dataclass
class DemoResult:
    summary: dict
    bundles: list
    separation: SeparationReport
    checks: dict

    @property
    def ok(self) -> bool:
        return all(self.checks.values())


def resolve_mode(cfg, out_dir, log=print):
    """Decide synthetic or computed mode; returns (mode, bg, est, params).

    ``auto`` runs the amplitude sweep on the coarse sweep grid and switches
    to computed mode when any amplitude yields a usable a > 0.
    """
    from .fixedpoint import check_exponents, suggest_exponents
    from .grid import PeriodicGrid
    from .profiles import make_background
    from .spectra import StepperPropagator, amplitude_sweep, best_usable, estimate_eigenpair, write_sweep_csv

    gcfg, pcfg, scfg = cfg["grid"], cfg["profile"], cfg["spectra"]
    grid = PeriodicGrid(gcfg["box_side"], gcfg["n"])
    params = cfg.exponents()
    mode = cfg.mode
    amplitude = pcfg["amplitude"]
    est = None
    if mode in ("auto", "computed"):
        sweep_grid = PeriodicGrid(scfg["sweep_box_side"], scfg["sweep_n"])
        log(f"amplitude sweep on n={sweep_grid.n}, L={sweep_grid.box_side:g}")
        recs = amplitude_sweep(
            pcfg["shape"],
            scfg["sweep_amplitudes"],
            sweep_grid,
            pcfg["support_radius"],
            pcfg["b"],
            scfg["tau_star"],
            scfg["krylov_dim"],
            scfg["tol"],
            scfg["seed"],
        )
        if out_dir is not None:
            write_sweep_csv(recs, out_dir / "sweep.csv")
        best = best_usable(recs)
        if best is not None:
            amplitude = best.amplitude
            bg = make_background(grid, amplitude, pcfg["support_radius"], pcfg["b"], pcfg["shape"], pcfg["theta_amplitude"], params.N)
            est = estimate_eigenpair(StepperPropagator(bg), scfg["tau_star"], scfg["krylov_dim"], scfg["tol"], scfg["seed"], N=params.N)
            if not (est.converged and est.a > 0):
                est = None
        if est is not None:
            mode = "computed"
            p = suggest_exponents(est.a, pcfg["b"], params.delta, params.N, params.tau0, params.M)
            if p is None:
                raise InfeasibleExponents([f"no feasible (beta, gamma) for a = {est.a:.4g}, b = {pcfg['b']:g}"])
            params = p
            log(f"unstable eigenpair found: lambda = {est.lam:.6g}; computed mode")
        elif mode == "computed":
            raise InvariantFailure("computed mode requested but no converged eigenpair with a > 0 was found")
        else:
            mode = "synthetic"
            log("no usable unstable eigenpair; synthetic mode")
    violated = check_exponents(params)
    if violated:
        raise InfeasibleExponents(violated)
    bg = make_background(grid, amplitude, pcfg["support_radius"], pcfg["b"], pcfg["shape"], pcfg["theta_amplitude"], params.N)
    return mode, bg, est, params


def run_demo(cfg, out_dir=None, log=print, natural_stride: int = 10) -> DemoResult:
    """Build two bundles with shared forcing, verify them and write the outputs."""
    import datetime
    import json
    from pathlib import Path

    from .fixedpoint import computed_context, synthetic_context, write_iteration_csv
    from .obss import write_obss

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
    mode, bg, est, params = resolve_mode(cfg, out_dir, log)
    st, fp = cfg["stepper"], cfg["fixedpoint"]
    dt = st["dt"]
    if mode == "synthetic":
        ctx = synthetic_context(params, bg, dt=dt, tau_min=st["tau_min"])
    else:
        ctx = computed_context(params, bg, est, dt=dt, tau_min=st["tau_min"])
    forcing = synthesize_forcing(bg)
    c1, c2 = fp["coefficients"][:2]
    bundles = []
    for c in (c1, c2):
        log(f"fixed point for c = {c:g} on {ctx.taus.size} nodes")
        bundles.append(assemble_solution(c, ctx, forcing, fp["tol"], fp["max_iter"]))
    b1, b2 = bundles

    reports = []
    for b in bundles:
        reports.append((b.c, residual_check(b, "selfsimilar")))
        reports.append((b.c, residual_check(b, "natural", nodes=range(0, b.taus.size, natural_stride))))
    res_max = max(r.max for _, r in reports if r.frame == "selfsimilar")
    nat_max = max(r.max for _, r in reports if r.frame == "natural")
    div_max = max(float(r.divergence.max()) for _, r in reports)

    # time-step study on the first coefficient
    log("time-step study at 2dt and dt/2")
    coarse = assemble_solution(c1, replace_dt(ctx, 2 * dt), forcing, fp["tol"], fp["max_iter"])
    fine = assemble_solution(c1, replace_dt(ctx, dt / 2), forcing, fp["tol"], fp["max_iter"])
    d_coarse = (coarse.U_p - b1.U_p).norm + (coarse.Theta_p - b1.Theta_p).norm
    d_fine = (b1.U_p - fine.U_p).norm + (b1.Theta_p - fine.Theta_p).norm
    dt_order = math.log2(d_coarse / d_fine) if d_fine > 0 and d_coarse > 0 else float("inf")
    res_fine = residual_check(fine, "selfsimilar").max

    sep = separation(b1, b2)
    init = initial_data_profile(b1)
    same_forcing = b1.forcing is b2.forcing and all(
        np.array_equal(getattr(b1.forcing, k).coef, getattr(b2.forcing, k).coef) for k in ("F_steady", "F_theta", "H_core")
    )
    checks = {
        "shared_forcing": bool(same_forcing),
        "residual": res_max <= RESIDUAL_TOL,
        "dt_convergence": dt_order >= MIN_DT_ORDER,
        "separation_positive": sep.positive,
        "early_rate": abs(sep.early_rate - sep.a) <= RATE_TOL,
        "zero_initial_data": init.slope >= ZERO_DATA_SLOPE,
        "in_ball": all(b.picard.in_ball(params.M) for b in bundles),
    }
    summary = {
        "a": params.a,
        "beta": params.beta,
        "gamma": params.gamma,
        "b": params.b,
        "tau0": params.tau0,
        "residual_max": res_max,
        "separation_min": sep.minimum,
        "mode": mode,
        "generated_at": datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds"),
        "details": {
            "delta": params.delta,
            "N": params.N,
            "coefficients": [c1, c2],
            "tau_min": float(ctx.taus[0]),
            "nodes": int(ctx.taus.size),
            "dt": dt,
            "residual_max_half_dt": res_fine,
            "residual_natural_core_max": nat_max,
            "divergence_max": div_max,
            "dt_self_convergence_order": dt_order,
            "early_rate": sep.early_rate,
            "zero_data_slope": init.slope,
            "contraction_factors": [b.picard.contraction_factor for b in bundles],
            "fixed_point_residuals": [b.picard.residual for b in bundles],
            "norm_X": [b.picard.norm_X for b in bundles],
            "norm_Y": [b.picard.norm_Y for b in bundles],
            "energy_integral": [energy_integral(b) for b in bundles],
            "checks": checks,
        },
    }
    if out_dir is not None:
        g = bg.grid
        write_obss(out_dir / "forcing.obss", g, [forcing.F_steady, forcing.F_theta, forcing.H_core])
        for b in bundles:
            snap = b.natural(b.taus.size - 1)
            write_obss(out_dir / f"bundle_{b.c:g}.obss", snap.u.grid, [snap.u, snap.theta])
            write_iteration_csv(b.picard.log, out_dir / f"iterations_{b.c:g}.csv")
        sep.to_csv(out_dir / "separation.csv")
        with open(out_dir / "residuals.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["c", "frame", "tau", "momentum", "heat", "divergence"])
            for c, r in reports:
                w.writerows(r.rows(f"{c:g}"))
        (out_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return DemoResult(summary, bundles, sep, checks)


def replace_dt(ctx: FixedPointContext, dt: float) -> FixedPointContext:
    from dataclasses import replace

    return replace(ctx, dt=dt)
