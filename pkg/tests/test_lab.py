import numpy as np
import pytest

from nonmarkov.dephasing import TimeGrid, kappa_closed_form
from nonmarkov.errors import ConfigError
from nonmarkov.lab import (
    SETTINGS_1Q,
    SETTINGS_2Q,
    CountsTable,
    SweepDataset,
    SweepSpec,
    TomographyConfig,
    born_probabilities,
    bootstrap_summary,
    revival_path_grid,
    ideal_counts,
    plate_positions,
    preset_states,
    project_to_states,
    reconstruct_state,
    run_sweep,
    simulate_counts,
)
from nonmarkov.qstate import QubitState, TwoQubitState, bell_state, bloch_matrix
from nonmarkov.spectrum import C_LIGHT, CavityConfig, GaussianMixtureSpectrum

SIGMA, DW = 1.8e12, 1.6e13


def _random_2q(rng, n):
    g = rng.normal(size=(n, 4, 4)) + 1j * rng.normal(size=(n, 4, 4))
    rho = g @ np.swapaxes(g.conj(), -1, -2)
    return rho / np.trace(rho, axis1=-2, axis2=-1).real[:, None, None]


def test_born_probabilities_of_presets():
    (plus, minus), bell = preset_states()
    p = born_probabilities(plus.matrix)
    np.testing.assert_allclose(p, [[1, 0], [0.5, 0.5], [0.5, 0.5]], atol=1e-15)
    # Bell state: XX and ZZ perfectly correlated, YY anticorrelated
    q = born_probabilities(bell.matrix)
    np.testing.assert_allclose(q[SETTINGS_2Q.index("XX")], [0.5, 0, 0, 0.5], atol=1e-15)
    np.testing.assert_allclose(q[SETTINGS_2Q.index("YY")], [0, 0.5, 0.5, 0], atol=1e-15)
    np.testing.assert_allclose(q[SETTINGS_2Q.index("ZZ")], [0.5, 0, 0, 0.5], atol=1e-15)


def test_ideal_counts_invert_exactly(rng):
    for r in rng.normal(size=(20, 3)):
        rho = QubitState(bloch_matrix(0.9 * r / np.linalg.norm(r)))
        est = reconstruct_state(ideal_counts(rho, 10_000))
        np.testing.assert_allclose(est.matrix, rho.matrix, atol=1e-12)
    for m in _random_2q(rng, 20):
        est = reconstruct_state(ideal_counts(TwoQubitState(m, atol=1e-10), 10_000))
        np.testing.assert_allclose(est.matrix, m, atol=1e-12)


def test_projection_clips_and_renormalizes():
    raw = np.array([[0.8, 0.5], [0.5, 0.2]], dtype=complex)  # eigenvalues 1.14, -0.14
    out = project_to_states(raw)
    w = np.linalg.eigvalsh(out)
    assert w.min() >= 0 and np.trace(out).real == pytest.approx(1.0)
    valid = bell_state().matrix
    np.testing.assert_allclose(project_to_states(valid), valid, atol=1e-14)


def test_reconstruct_rejects_incomplete_data():
    with pytest.raises(ConfigError):
        reconstruct_state(CountsTable(SETTINGS_1Q[:2], np.ones((2, 2))))
    with pytest.raises(ConfigError):
        reconstruct_state(CountsTable(SETTINGS_1Q, np.array([[1, 1], [0, 0], [1, 1]])))


def test_simulated_counts_reproducible_and_close():
    cfg = TomographyConfig(counts=100_000, seed=3)
    a, b = simulate_counts(bell_state(), cfg), simulate_counts(bell_state(), cfg)
    np.testing.assert_array_equal(a.counts, b.counts)
    assert np.all(a.counts.sum(axis=1) == 100_000)
    est = reconstruct_state(a)
    assert np.max(np.abs(est.matrix - bell_state().matrix)) < 0.02
    pois = simulate_counts(bell_state(), TomographyConfig(noise="poisson", seed=1))
    assert pois.counts.sum() == pytest.approx(9 * 10_000, rel=0.02)


def test_tomography_config_validation():
    for kw in (dict(counts=0), dict(bootstrap=1), dict(noise="gaussian")):
        with pytest.raises(ConfigError):
            TomographyConfig(**kw)


def test_bootstrap_summary():
    samples = np.array([[1.0, 0.9, 1.1, 0.8, 1.2]])
    est, err = bootstrap_summary(samples)
    assert est[0] == pytest.approx(2 * 1.0 - 1.0)
    assert err[0] == pytest.approx(np.std([0.9, 1.1, 0.8, 1.2], ddof=1))


def test_revival_grid_spans_two_periods(cfg, reference_mixture):
    p = revival_path_grid(reference_mixture, cfg, n=200)
    assert p.size == 200 and p[0] == 0
    assert p[-1] * cfg.wavelength / C_LIGHT == pytest.approx(4 * np.pi / DW)


@pytest.mark.parametrize("kw", [
    dict(controls=[]),
    dict(controls=[0.0, 2.0, 1.0]),
    dict(controls=[0.0, 1.0], axis="time"),
    dict(controls=[0.0, 1.0], arm="fidelity"),
    dict(controls=[0.0, 1.0], axis="tilt"),
    dict(controls=[-1.0, 1.0]),
])
def test_sweep_spec_validation(kw, reference_mixture):
    kw.setdefault("mixture", reference_mixture if kw.get("axis") != "tilt" else None)
    with pytest.raises(ConfigError):
        SweepSpec(**kw)


def test_exact_sweep_arms_agree_with_kappa(cfg, reference_mixture):
    controls = revival_path_grid(reference_mixture, cfg)
    d = run_sweep(SweepSpec(controls, arm="trace_distance", mixture=reference_mixture), None, cfg)
    c = run_sweep(SweepSpec(controls, arm="concurrence", mixture=reference_mixture), None, cfg)
    k = kappa_closed_form(reference_mixture, cfg, TimeGrid.from_path_difference(controls, cfg))
    np.testing.assert_allclose(d.values, k.modulus, atol=1e-12)
    np.testing.assert_allclose(c.values, d.values, atol=1e-10)
    assert d.metadata["mode"] == "exact" and np.all(d.stderr == 0)


def test_quadrature_sweep_matches_closed_form(cfg, reference_mixture):
    controls = revival_path_grid(reference_mixture, cfg, n=50)
    a = run_sweep(SweepSpec(controls, mixture=reference_mixture), None, cfg)
    b = run_sweep(SweepSpec(controls, mixture=reference_mixture, kappa_method="quadrature"), None, cfg)
    np.testing.assert_allclose(a.values, b.values, atol=1e-9)


@pytest.mark.parametrize("arm", ["trace_distance", "concurrence"])
def test_tomographic_sweep_bounds_and_determinism(cfg, reference_mixture, arm):
    controls = revival_path_grid(reference_mixture, cfg, n=40)
    spec = SweepSpec(controls, arm=arm, mixture=reference_mixture)
    tomo = TomographyConfig(seed=11, bootstrap=50)
    ds = run_sweep(spec, tomo, cfg)
    again = run_sweep(spec, tomo, cfg, workers=3)
    np.testing.assert_array_equal(ds.values, again.values)
    np.testing.assert_array_equal(ds.stderr, again.stderr)
    assert np.all(ds.stderr > 0)
    assert np.all(ds.values >= -3 * ds.stderr) and np.all(ds.values <= 1 + 3 * ds.stderr)
    assert np.max(np.abs(ds.values - ds.extras["exact"])) < 0.05
    other = run_sweep(spec, TomographyConfig(seed=12, bootstrap=50), cfg)
    assert not np.array_equal(ds.values, other.values)


def test_dataset_round_trip(tmp_path, cfg, reference_mixture):
    controls = revival_path_grid(reference_mixture, cfg, n=20)
    ds = run_sweep(SweepSpec(controls, mixture=reference_mixture), TomographyConfig(bootstrap=10), cfg)
    csv_path, meta_path = ds.write(tmp_path / "d.csv")
    back = SweepDataset.read(csv_path)
    np.testing.assert_array_equal(back.values, ds.values)
    np.testing.assert_array_equal(back.extras["exact"], ds.extras["exact"])
    assert back.metadata == ds.metadata
    assert back.to_csv_text() == ds.to_csv_text()


def test_cavity_path_sweep_records_fit(cfg):
    spec = SweepSpec(np.linspace(0, 40, 30), cavity=CavityConfig(tilt_deg=3.0))
    ds = run_sweep(spec, None, cfg)
    assert "fitted_mixture" in ds.metadata and not ds.failed.any()
    assert ds.values[0] == pytest.approx(1.0)


def test_tilt_sweep_exact(cfg):
    thetas = np.array([0.0, 5.0, 8.0, 11.0, 12.0])
    d = run_sweep(SweepSpec(thetas, axis="tilt", arm="trace_distance", cavity=CavityConfig()), None, cfg)
    c = run_sweep(SweepSpec(thetas, axis="tilt", arm="concurrence", cavity=CavityConfig()), None, cfg)
    np.testing.assert_allclose(d.values, c.values, atol=1e-10)
    np.testing.assert_allclose(d.extras["N"], c.extras["N"], atol=1e-10)
    assert np.all(np.isfinite(d.values)) and d.metadata["failed"] == []
    # a rise between the plates witnesses non-Markovianity and cannot exceed N
    grew = d.values > 0
    assert grew.any() and (~grew).any()
    assert np.all(d.extras["N"][grew] > 0)
    assert np.all(d.values <= d.extras["N"] + 1e-9)
    x = plate_positions(CavityConfig(), cfg).x(cfg)
    assert x[2] == pytest.approx(2 * x[1])


def test_tilt_sweep_tomographic_is_seeded(cfg):
    spec = SweepSpec(np.array([0.0, 5.0]), axis="tilt", cavity=CavityConfig())
    a = run_sweep(spec, TomographyConfig(seed=2, bootstrap=30), cfg)
    b = run_sweep(spec, TomographyConfig(seed=2, bootstrap=30), cfg)
    np.testing.assert_array_equal(a.values, b.values)
    assert np.all(a.stderr > 0)
