import numpy as np
import pytest

from obnonuniq.grid import (
    PeriodicGrid,
    ScalarField,
    VectorField,
    advect,
    convect,
    curl,
    dealias,
    divergence_ratio,
    gaussian,
    gravity_gradient,
    hs_norm,
    l2_norm,
    laplacian,
    leray_project,
)
from obnonuniq.profiles import (
    BackgroundProfile,
    ConfigurationError,
    DegenerateFitError,
    bump,
    forcing_decay_slope,
    forcing_l1_in_time,
    make_background,
    make_background_velocity,
    make_theta_core,
    swirl_l2_squared,
    synthesize_forcing,
)
from obnonuniq.selfsim import drift_operator

T_RANGE = np.logspace(-3, 0, 12)


@pytest.fixture(scope="module")
def bg():
    return make_background(PeriodicGrid(12.0, 32), 1.0, 1.0, 1.5)


@pytest.fixture(scope="module")
def forcing(bg):
    return synthesize_forcing(bg)


def test_bump_values():
    assert bump(0.0) == 1.0
    assert bump(1.0) == 0.0
    assert bump(0.5) == pytest.approx(np.exp(1 - 1 / 0.75))


def test_zero_amplitude_gives_zero_field(grid32):
    assert np.abs(make_background_velocity(grid32, 0.0, 1.0).coef).max() == 0.0


@pytest.mark.parametrize("shape", ["axisymmetric_swirl", "curl_bump"])
@pytest.mark.parametrize("A", [0.5, 4.0])
def test_velocity_divergence_free_with_prescribed_norm(grid32, shape, A):
    U = make_background_velocity(grid32, A, 1.2, shape)
    assert divergence_ratio(U) <= 1e-10
    assert hs_norm(U, 0) == pytest.approx(A, rel=1e-8)
    assert l2_norm(U) == pytest.approx(A, rel=1e-8)


def test_unnormalised_swirl_matches_radial_quadrature():
    # the spectral curl of the sampled potential converges to the continuum
    # value (8 pi / 3) int psi'^2 r^2 dr
    R = 1.0
    oracle = np.sqrt(swirl_l2_squared(R))
    errs = []
    for n in (32, 64, 128):
        g = PeriodicGrid(8.0, n)
        psi = bump(g.radius / R)
        pot = VectorField.from_values(g, np.stack([0 * psi, 0 * psi, psi]))
        errs.append(abs(hs_norm(curl(pot), 0) / oracle - 1))
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] < 1e-4


def test_swirl_is_azimuthal(grid32):
    U = make_background_velocity(grid32, 1.0, 1.0).values
    assert np.abs(U[2]).max() < 1e-12
    assert np.abs(U[:2]).max() > 0.1


def test_theta_core_normalised(grid32):
    th = make_theta_core(grid32, 1.0, 2.0, N=1.75)
    assert hs_norm(th, 2.75) == pytest.approx(2.0, rel=1e-12)


def test_invalid_profiles(grid32):
    with pytest.raises(ConfigurationError):
        make_background_velocity(grid32, 1.0, 2.0)
    with pytest.raises(ConfigurationError):
        make_background_velocity(grid32, 1.0, 1.0, "vortex_ring")
    with pytest.raises(ConfigurationError):
        make_background(grid32, 1.0, 1.0, b=0.0)


def test_zero_background_gives_zero_forcing(grid32):
    bg0 = BackgroundProfile(VectorField.zeros(grid32), ScalarField.zeros(grid32), 1.5, 0.0, 1.0)
    fp = synthesize_forcing(bg0)
    for f in (fp.F_steady, fp.F_theta, fp.H_core):
        assert np.abs(f.coef).max() == 0.0


@pytest.mark.parametrize("tau", [0.0, -2.0])
def test_background_solves_forced_system(bg, forcing, tau):
    U, Th = bg.U_bar, bg.theta_bar(tau)
    mom = (
        leray_project(drift_operator(U)).coef
        + laplacian(U).coef
        - leray_project(convect(U, U)).coef
        + gravity_gradient(Th).coef
        + forcing.F(tau).coef
    )
    heat = (
        drift_operator(Th).coef + laplacian(Th).coef - advect(U, Th).coef + forcing.H(tau).coef - bg.b * Th.coef
    )
    assert np.abs(mom).max() <= 1e-8 * np.abs(forcing.F(tau).coef).max()
    assert np.abs(heat).max() <= 1e-8 * np.abs(forcing.H(tau).coef).max()


def _trig_eval(f, p):
    """Band-limited interpolant of ``f`` at an arbitrary point (direct Fourier sum)."""
    g = f.grid
    n = g.n
    c = np.fft.fftn(f.values, norm="forward")
    m = np.fft.fftfreq(n, 1.0 / n)
    ph = []
    for i in range(3):
        s = (p[i] + g.box_side / 2) / g.box_side
        e = np.exp(2j * np.pi * m * s)
        e[n // 2] = np.cos(np.pi * n * s)
        ph.append(e)
    return float(np.real(np.einsum("ijk,i,j,k->", c, *ph)))


def test_heat_source_matches_finite_difference_oracle(rng):
    # resolved smooth stand-in for the profile so that products are not truncated
    g = PeriodicGrid(12.0, 48)
    psi = gaussian(g, 1.0).values
    U = curl(VectorField.from_values(g, np.stack([0 * psi, 0 * psi, psi])))
    Th = gaussian(g, 1.0, center=(0.3, -0.2, 0.1))
    b = 1.5
    H = synthesize_forcing(BackgroundProfile(U, Th, b, 1.0, 1.0)).H_core
    e = 1e-3
    scale = np.abs(H.values).max()
    for p in rng.uniform(-1.5, 1.5, size=(5, 3)):
        grad, lap = np.zeros(3), 0.0
        for i in range(3):
            d = np.zeros(3)
            d[i] = e
            f = [_trig_eval(Th, p + k * d) for k in (-2, -1, 0, 1, 2)]
            grad[i] = (f[0] - 8 * f[1] + 8 * f[3] - f[4]) / (12 * e)
            lap += (-f[0] + 16 * f[1] - 30 * f[2] + 16 * f[3] - f[4]) / (12 * e * e)
        th = _trig_eval(Th, p)
        u = np.array([_trig_eval(U.component(i), p) for i in range(3)])
        oracle = b * th - 0.5 * (th + p @ grad) - lap + u @ grad
        assert abs(_trig_eval(H, p) - oracle) <= 1e-6 * scale


def test_steady_forcing_slope(forcing):
    slope = forcing_decay_slope(forcing.restricted(thermal=False), T_RANGE)
    assert slope == pytest.approx(-0.75, abs=0.05)


def test_thermal_forcing_slope_is_shifted_by_b(forcing):
    slope = forcing_decay_slope(forcing.restricted(steady=False), T_RANGE)
    assert slope == pytest.approx(-0.75 + forcing.b, abs=1e-10)
    assert slope >= -0.75


def test_full_forcing_dominated_by_steady_part(forcing):
    assert forcing_decay_slope(forcing, T_RANGE) == pytest.approx(-0.75, abs=0.05)


def test_doubling_amplitude_keeps_the_slope(bg):
    g = bg.grid
    f1 = synthesize_forcing(bg).restricted(thermal=False)
    bg2 = make_background(g, 2.0, 1.0, 1.5)
    f2 = synthesize_forcing(bg2).restricted(thermal=False)
    assert forcing_decay_slope(f2, T_RANGE) == pytest.approx(forcing_decay_slope(f1, T_RANGE), abs=1e-10)
    # linear part doubles, the quadratic part quadruples
    quad = leray_project(convect(bg.U_bar, bg.U_bar)).coef
    assert np.allclose(f2.F_steady.coef - 2 * f1.F_steady.coef, 2 * quad, atol=1e-12)


def test_forcing_is_l1_in_time(forcing):
    vals = [forcing_l1_in_time(forcing, 10.0**-k) for k in (2, 3, 4, 5)]
    inc = np.diff(vals)
    assert np.all(inc > 0)
    # increments shrink like t_min^(1/4)
    ratios = inc[:-1] / inc[1:]
    assert ratios == pytest.approx(10**0.25, rel=0.05)


def test_degenerate_fit_raises(grid32):
    bg0 = BackgroundProfile(VectorField.zeros(grid32), ScalarField.zeros(grid32), 1.5, 0.0, 1.0)
    with pytest.raises(DegenerateFitError):
        forcing_decay_slope(synthesize_forcing(bg0), T_RANGE)
    with pytest.raises(ValueError):
        forcing_decay_slope(synthesize_forcing(bg0), [0.1, 0.2])
