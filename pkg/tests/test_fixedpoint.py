import math

import numpy as np
import pytest

from obnonuniq.fixedpoint import (
    TERM_IDS,
    ContractionFailure,
    ExponentParams,
    NodeInterpolant,
    apply_phi1,
    apply_phi2,
    check_exponents,
    default_tau_min,
    injected_estimate,
    is_feasible,
    linear_mode,
    picard_solve,
    suggest_exponents,
    synthetic_context,
    tau_grid,
    unit_test_fields,
    write_iteration_csv,
)
from obnonuniq.grid import PeriodicGrid, ScalarField, VectorField, divergence_ratio, hs_norm
from obnonuniq.profiles import make_background
from obnonuniq.semigroups import SelfSimilarOperator, integrate_forced
from obnonuniq.spectra import EigenEstimate, SyntheticPropagator, estimate_eigenpair

BASE = ExponentParams(2.0, 0.1, 2.5, 3.0, 1.5, tau0=-3.0)


@pytest.fixture(scope="module")
def ctx():
    bg = make_background(PeriodicGrid(8.0, 16), 1.0, 1.0, 1.5)
    return synthetic_context(BASE, bg)


@pytest.fixture(scope="module")
def solved(ctx):
    return picard_solve(ctx, tol=1e-6)


# exponents ------------------------------------------------------------------


def test_reference_exponents_feasible():
    assert check_exponents(BASE) == []
    assert is_feasible(BASE)


def test_beta_equal_a_violates_beta_gt_a():
    from dataclasses import replace

    assert "beta > a" in check_exponents(replace(BASE, beta=2.0))


def test_gamma_equal_a_plus_delta_violated():
    from dataclasses import replace

    assert "gamma > a + delta" in check_exponents(replace(BASE, gamma=2.1))


def _oracle(beta, gamma):
    return 2 < beta < 4 and max(beta, 2.1) < gamma < min(beta + 1.5, 3.5)


def test_feasibility_region_scan():
    from dataclasses import replace

    vals = np.round(np.arange(0.0, 5.0 + 1e-9, 0.05), 10)
    mismatches = [
        (be, ga) for be in vals for ga in vals if is_feasible(replace(BASE, beta=be, gamma=ga)) != _oracle(be, ga)
    ]
    assert mismatches == []


@pytest.mark.parametrize("a,b", [(2.0, 1.5), (0.7, 1.5), (1.2, 0.3), (3.0, 3.0)])
def test_suggested_exponents_are_feasible(a, b):
    p = suggest_exponents(a, b)
    assert p is not None and is_feasible(p)


def test_no_suggestion_without_growth():
    assert suggest_exponents(-0.5, 1.5) is None


def test_tau_grid_hits_tau0():
    taus = tau_grid(-6.93, -3.0)
    assert taus[-1] == -3.0
    assert taus[0] <= -6.93
    assert np.allclose(np.diff(taus), 0.05)
    with pytest.raises(ValueError):
        tau_grid(-1.0, -2.0)


def test_default_tau_min_makes_tail_negligible():
    lo = default_tau_min(BASE)
    assert math.exp(BASE.slowest_rate * lo) <= 1e-9 * (1 + 1e-9)
    assert lo <= BASE.tau0 - 1


# linear mode -----------------------------------------------------------------


def test_linear_mode_at_zero_is_rho(ctx):
    U = linear_mode(ctx.est, 0.0)
    assert np.array_equal(U.coef, ctx.est.rho_re.coef)


def test_linear_mode_grows_like_e_to_the_a(ctx):
    r = hs_norm(linear_mode(ctx.est, -2.0), 0) / hs_norm(linear_mode(ctx.est, -3.0), 0)
    assert r == pytest.approx(math.exp(2.0), rel=1e-12)


def test_linear_mode_requires_convergence(ctx):
    e = ctx.est
    bad = EigenEstimate(e.lam, e.rho_re, e.rho_im, 1.0, 0.5, False)
    with pytest.raises(ValueError):
        linear_mode(bad, 0.0)


def test_linear_mode_solves_linear_equation():
    prop = SyntheticPropagator(PeriodicGrid(8.0, 16), rate=0.7)
    est = estimate_eigenpair(prop, 0.5, 16, 1e-8)
    h = 0.01
    for tau in (-2.0, -0.5):
        U0, U1 = linear_mode(est, tau), linear_mode(est, tau + h)
        defect = hs_norm(prop(U0, h) - U1, 0) / h / hs_norm(U0, 0)
        assert defect <= 2 * est.residual + 1e-12


# Duhamel evolution -------------------------------------------------------------


class _Decay(SelfSimilarOperator):
    def __init__(self, grid, mu):
        self.grid = grid
        self.mu = mu
        self.diag = -grid.k2

    def explicit(self, c):
        return self.mu * c


def test_forced_evolution_matches_closed_form_duhamel():
    g = PeriodicGrid(2 * np.pi, 16)
    x, _, _ = g.mesh
    phi = ScalarField.from_values(g, np.cos(x) * np.ones(g.shape)).coef
    mu, sig = 0.3, 1.2
    op = _Decay(g, mu)
    lam = mu - 1.0  # the mode has |k|^2 = 1
    nodes = np.linspace(-3.0, 0.0, 31)
    exact = (np.exp(sig * nodes) - np.exp(lam * (nodes - nodes[0]) + sig * nodes[0])) / (sig - lam)

    def err(dt):
        out = integrate_forced(op, np.zeros_like(phi), nodes, lambda t: math.exp(sig * t) * phi, dt)
        amp = out[:, 1, 0, 0] / phi[1, 0, 0]
        return np.abs(amp - exact).max()

    e1, e2 = err(0.02), err(0.01)
    assert e1 < 1e-4
    assert e1 / e2 == pytest.approx(4.0, rel=0.1)


def test_node_interpolant_exact_for_cubics():
    taus = np.linspace(0.0, 1.0, 11)
    poly = lambda t: 1 - 2 * t + 3 * t**2 - 0.5 * t**3
    f = NodeInterpolant(taus, poly(taus))
    for t in (0.0, 0.013, 0.5, 0.77, 0.999, 1.0):
        assert f(t) == pytest.approx(poly(t), abs=1e-13)
    assert f(taus[4]) == poly(taus[4])


# Phi ---------------------------------------------------------------------------


def test_phi1_of_zero_is_quadratic_in_c(ctx):
    z, zt = ctx.zero_X(), ctx.zero_Y()
    one = apply_phi1(z, zt, ctx)
    two = apply_phi1(z, zt, ctx.with_coefficient(2.0))
    assert np.abs(two.coef - 4 * one.coef).max() <= 1e-12 * np.abs(two.coef).max()
    assert one.divergence_max() < 1e-12


def test_phi_vanishes_without_linear_mode(ctx):
    c0 = ctx.with_coefficient(0.0)
    U = apply_phi1(c0.zero_X(), c0.zero_Y(), c0)
    Th = apply_phi2(c0.zero_X(), c0.zero_Y(), c0)
    assert np.abs(U.coef).max() == 0.0
    assert np.abs(Th.coef).max() == 0.0


def test_phi1_of_zero_grows_at_2a(ctx):
    out = apply_phi1(ctx.zero_X(), ctx.zero_Y(), ctx)
    n = out.norms()
    sel = ctx.taus >= ctx.taus[-1] - 1.0
    rate = np.polyfit(ctx.taus[sel], np.log(n[sel]), 1)[0]
    assert rate == pytest.approx(2 * BASE.a, abs=0.1 * BASE.a)


def test_phi2_of_zero_grows_at_a_plus_b(ctx):
    out = apply_phi2(ctx.zero_X(), ctx.zero_Y(), ctx)
    n = out.norms()
    sel = ctx.taus >= ctx.taus[-1] - 1.0
    rate = np.polyfit(ctx.taus[sel], np.log(n[sel]), 1)[0]
    assert rate == pytest.approx(BASE.a + BASE.b, abs=0.1)


def test_phi2_vanishes_without_background_temperature():
    bg = make_background(PeriodicGrid(8.0, 16), 1.0, 1.0, 1.5, theta_amplitude=0.0)
    c = synthetic_context(BASE, bg)
    assert np.abs(apply_phi2(c.zero_X(), c.zero_Y(), c).coef).max() == 0.0


def test_phi2_linear_in_theta_p(ctx):
    _, th = unit_test_fields(ctx.grid, BASE.N)
    z = ctx.zero_X()
    Y1 = ctx.zero_Y().like(np.stack([th.coef * math.exp(BASE.gamma * t) for t in ctx.taus]))
    Y2 = Y1.like(2 * Y1.coef)
    base = apply_phi2(z, ctx.zero_Y(), ctx).coef
    d1 = apply_phi2(z, Y1, ctx).coef - base
    d2 = apply_phi2(z, Y2, ctx).coef - base
    assert np.abs(d2 - 2 * d1).max() <= 1e-10 * np.abs(d2).max()


def test_phi1_bound_shrinks_as_tau0_decreases(ctx):
    norms = []
    for t0 in (-2.5, -3.0, -3.5):
        c = ctx.with_tau0(t0)
        norms.append(apply_phi1(c.zero_X(), c.zero_Y(), c).norm)
    assert norms[0] > norms[1] > norms[2]


# Picard ------------------------------------------------------------------------


def test_picard_converges_in_ball(solved):
    assert solved.residual <= 1e-6
    assert solved.contraction_factor < 0.5
    assert solved.in_ball(BASE.M)
    assert solved.U_p.divergence_max() < 1e-12


def test_zero_coefficient_fixed_point_is_trivial(ctx):
    res = picard_solve(ctx.with_coefficient(0.0))
    assert res.iterations == 1
    assert res.norm_X == 0.0 and res.norm_Y == 0.0


def test_uniqueness_in_ball(ctx, solved):
    # start from a different point of the ball
    phU, phT = unit_test_fields(ctx.grid, BASE.N)
    startU = ctx.zero_X().like(np.stack([0.2 * phU.coef * math.exp(BASE.beta * t) for t in ctx.taus]))
    startT = ctx.zero_Y().like(np.stack([0.2 * phT.coef * math.exp(BASE.gamma * t) for t in ctx.taus]))
    assert startU.norm <= BASE.M and startT.norm <= BASE.M
    other = picard_solve(ctx, tol=1e-6, start=(startU, startT))
    assert (other.U_p - solved.U_p).norm + (other.Theta_p - solved.Theta_p).norm <= 10 * 1e-6


def test_contraction_factor_decreases_with_tau0(ctx, solved):
    deeper = picard_solve(ctx.with_tau0(-4.0), tol=1e-6)
    assert deeper.contraction_factor < solved.contraction_factor


def test_contraction_failure_when_tau0_too_large():
    from dataclasses import replace

    bg = make_background(PeriodicGrid(8.0, 16), 1.0, 1.0, 1.5)
    p = replace(BASE, tau0=1.5)
    c = synthetic_context(p, bg, tau_min=-1.5).with_coefficient(40.0)
    with pytest.raises((ContractionFailure, FloatingPointError)):
        picard_solve(c, max_iter=6)


def test_iteration_csv(tmp_path, solved):
    path = tmp_path / "it.csv"
    write_iteration_csv(solved.log, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "iter,norm_X,norm_Y,delta_X,delta_Y,contraction_factor"
    assert len(lines) == 1 + solved.iterations


# term probes --------------------------------------------------------------------


def test_unit_test_fields(ctx):
    u, th = unit_test_fields(ctx.grid, BASE.N)
    assert hs_norm(u, BASE.N) == pytest.approx(1.0, rel=1e-12)
    assert hs_norm(th, BASE.N + 1) == pytest.approx(1.0, rel=1e-12)
    assert divergence_ratio(u) < 1e-13


def test_injected_estimate_is_exact():
    prop = SyntheticPropagator(PeriodicGrid(8.0, 16), rate=2.0)
    est = injected_estimate(prop)
    assert est.a == 2.0 and est.converged
    assert np.array_equal(est.rho_re.coef, prop.rho.coef)


def test_term_ids():
    assert len(TERM_IDS) == 9
    assert set(BASE.term_rates()) == set(TERM_IDS)
    assert BASE.slowest_rate == 3.0
