import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nonmarkov.dephasing import (
    DecoherenceTrajectory,
    OpenSystemConfig,
    TimeGrid,
    analytic_pair_distance,
    apply_map,
    extend_to_ancilla,
    kappa_closed_form,
    kappa_quadrature,
    revival_grid,
    two_gaussian_modulus,
)
from nonmarkov.errors import AliasingError, ConfigError, InvalidStateError
from nonmarkov.qstate import QubitState, bell_state, bloch_matrix, concurrence, trace_distance
from nonmarkov.spectrum import C_LIGHT, GaussianMixtureSpectrum

SIGMA, DW = 1.8e12, 1.6e13

kappas = st.builds(lambda r, phi: np.sqrt(r) * np.exp(1j * phi),
                   st.floats(0, 1), st.floats(0, 2 * np.pi))


def test_open_system_defaults():
    cfg = OpenSystemConfig()
    assert cfg.delta_n == pytest.approx(0.00906)
    with pytest.raises(ConfigError):
        OpenSystemConfig(n_h=1.5, n_v=1.5)


def test_time_grid_conversions(cfg):
    g = TimeGrid.from_path_difference([0.0, 10.0, 20.0], cfg)
    np.testing.assert_allclose(g.path_difference(cfg), [0, 10, 20])
    np.testing.assert_allclose(g.x(cfg), np.array([0, 10, 20]) * cfg.wavelength / C_LIGHT)
    np.testing.assert_allclose(TimeGrid.from_lengths(g.lengths()).times, g.times)
    for bad in ([], [1.0, 2.0], [0.0, 2.0, 1.0]):
        with pytest.raises(ConfigError):
            TimeGrid(bad)


def test_revival_grid_hits_half_period(cfg):
    g = revival_grid(DW, cfg, periods=2.0, samples_per_period=40)
    x = g.x(cfg)
    assert len(g) == 81
    assert x[20] == pytest.approx(np.pi / DW, rel=1e-14)


def test_kappa_starts_at_one_and_matches_modulus_formula(cfg, reference_mixture):
    g = revival_grid(DW, cfg, samples_per_period=200)
    traj = kappa_closed_form(reference_mixture, cfg, g)
    assert traj.kappa[0] == 1
    # the optical carrier phase reaches ~1e2 rad, so agreement is to ~1e2 eps absolute
    np.testing.assert_allclose(traj.modulus, two_gaussian_modulus(traj.x, 1.0, SIGMA, DW), rtol=0, atol=1e-13)
    # A = 1: complete destructive interference at half the beat period
    assert traj.modulus[100] < 1e-12


def test_kappa_at_one_period_frozen(cfg, reference_mixture):
    # |kappa(2 pi / dw)| = exp(-2 pi^2 sigma^2 / dw^2) at A = 1 [DERIVED, closed form]
    g = TimeGrid.from_x([0.0, 2 * np.pi / DW], cfg)
    val = kappa_closed_form(reference_mixture, cfg, g).modulus[1]
    assert val == pytest.approx(np.exp(-2 * np.pi**2 * SIGMA**2 / DW**2), rel=1e-12)
    assert val == pytest.approx(0.778938, abs=1e-6)


def test_single_gaussian_is_monotone(cfg):
    m = GaussianMixtureSpectrum((2.7e15,), (1.0,), SIGMA)
    traj = kappa_closed_form(m, cfg, revival_grid(DW, cfg))
    assert np.all(np.diff(traj.modulus) < 0)


def test_closed_form_refuses_three_peaks(cfg):
    m = GaussianMixtureSpectrum((1e15, 1.01e15, 1.02e15), (0.2, 0.3, 0.5), SIGMA)
    with pytest.raises(ConfigError):
        kappa_closed_form(m, cfg, revival_grid(DW, cfg))


def test_quadrature_agrees_and_reports_error(cfg):
    m = GaussianMixtureSpectrum.two_peak(0.5, SIGMA, DW)
    g = revival_grid(DW, cfg, samples_per_period=100)
    q = kappa_quadrature(m.sample(), cfg, g)
    c = kappa_closed_form(m, cfg, g)
    np.testing.assert_allclose(q.kappa, c.kappa, atol=1e-10)
    assert q.quadrature_error < 1e-10


def test_quadrature_aliasing_guard(cfg, reference_mixture):
    coarse = reference_mixture.sample(reference_mixture.default_grid(n=41))
    with pytest.raises(AliasingError):
        kappa_quadrature(coarse, cfg, revival_grid(DW, cfg, periods=4.0))


def test_trajectory_validation(cfg):
    g = TimeGrid([0.0, 1e-15])
    with pytest.raises(InvalidStateError):
        DecoherenceTrajectory(g, [1.0, 1.5], cfg)
    with pytest.raises(InvalidStateError):
        DecoherenceTrajectory(g, [0.9, 0.5], cfg)
    with pytest.raises(ConfigError):
        DecoherenceTrajectory(g, [1.0], cfg)


def test_map_keeps_populations_and_scales_coherence():
    rho = QubitState(bloch_matrix([0.4, 0.3, 0.5]))
    k = 0.3 - 0.4j
    out = apply_map(k, rho)
    assert out.populations == pytest.approx(rho.populations)
    assert out.coherence == pytest.approx(np.conj(k) * rho.coherence)
    assert out.matrix[1, 0] == pytest.approx(k * rho.matrix[1, 0])
    with pytest.raises(InvalidStateError):
        apply_map(1.01, rho)


@settings(max_examples=200, deadline=None)
@given(kappas, st.floats(-1, 1), st.floats(0, 1), st.floats(0, 2 * np.pi))
def test_pair_distance_formula_matches_matrices(k, a, frac, phi):
    # largest |b| allowed for this a, times frac
    b = frac * np.sqrt(max(0.0, 1 - a * a)) * np.exp(1j * phi)
    # two states with rho1 - rho2 = [[a, b], [conj b, -a]]: opposite Bloch vectors
    r = np.array([2 * b.real, -2 * b.imag, 2 * a]) / 2
    s1, s2 = QubitState(bloch_matrix(r)), QubitState(bloch_matrix(-r))
    d = trace_distance(apply_map(k, s1), apply_map(k, s2))
    assert d == pytest.approx(analytic_pair_distance(a, b, k), abs=1e-12)


def test_pair_distance_rejects_unrealizable():
    with pytest.raises(InvalidStateError):
        analytic_pair_distance(0.8, 0.8, 0.5)


@settings(max_examples=200, deadline=None)
@given(kappas)
def test_bell_concurrence_is_kappa_modulus(k):
    assert concurrence(extend_to_ancilla(k, bell_state())) == pytest.approx(abs(k), abs=1e-10)


def test_ancilla_map_touches_system_index_only():
    k = 0.6j
    rho = extend_to_ancilla(k, bell_state()).matrix
    # Bell coherence |HH><VV| sits at (0, 3): system H -> V, so it picks up conj(k)
    assert rho[0, 3] == pytest.approx(0.5 * np.conj(k))
    assert rho[3, 0] == pytest.approx(0.5 * k)
    np.testing.assert_allclose(np.diag(rho).real, [0.5, 0, 0, 0.5])
