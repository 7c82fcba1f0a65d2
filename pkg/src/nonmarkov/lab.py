"""Simulated experiment: preset states, photon-counting tomography, sweeps.

Counts are drawn per measurement setting from a multinomial with a fixed
number of detection events (a Poisson model is available for sensitivity
checks). States are recovered by linear inversion of Pauli expectation
values followed by eigenvalue clipping, and error bars come from a
bootstrap over the recorded counts.
"""
from __future__ import annotations

import csv
import itertools
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import __version__
from .dephasing import (
    OpenSystemConfig,
    TimeGrid,
    _ancilla_map_array,
    dephasing_factors,
    kappa_closed_form,
    kappa_quadrature,
)
from .errors import AliasingError, ConfigError, FitError
from .measures import blp_analytic, default_measure_grid, rhp_concurrence_measure
from .qstate import (
    PAULIS,
    QubitState,
    TwoQubitState,
    bell_state,
    concurrence_array,
    trace_distance_array,
)
from .spectrum import C_LIGHT, CavityConfig, GaussianMixtureSpectrum, cavity_spectrum, fit_two_gaussians

_EIGVECS = {
    "X": np.array([[1, 1], [1, -1]], dtype=complex) / math.sqrt(2),
    "Y": np.array([[1, 1j], [1, -1j]], dtype=complex) / math.sqrt(2),
    "Z": np.array([[1, 0], [0, 1]], dtype=complex),
}
SETTINGS_1Q = ("X", "Y", "Z")
SETTINGS_2Q = tuple(a + b for a, b in itertools.product("XYZ", repeat=2))
_SIGN = np.array([1.0, -1.0])


def preset_states() -> tuple[tuple[QubitState, QubitState], TwoQubitState]:
    """(|H> +/- |V>)/sqrt(2) as density matrices, and the Bell state (|HH> + |VV>)/sqrt(2)."""
    pair = (QubitState.from_ket([1, 1]), QubitState.from_ket([1, -1]))
    return pair, bell_state()


@dataclass(frozen=True)
class TomographyConfig:
    counts: int = 10_000
    bootstrap: int = 200
    seed: int = 0
    noise: str = "multinomial"

    def __post_init__(self):
        if self.counts < 1:
            raise ConfigError("counts per setting must be >= 1")
        if self.bootstrap < 2:
            raise ConfigError("need at least 2 bootstrap resamples")
        if self.noise not in ("multinomial", "poisson"):
            raise ConfigError(f"unknown noise model {self.noise!r}")


@dataclass(frozen=True, eq=False)
class CountsTable:
    """Outcome counts, one row per setting.

    Rows follow SETTINGS_1Q or SETTINGS_2Q; columns are outcomes in the order
    (+, -) or (++, +-, -+, --). Non-integer counts (expected values) are fine.
    """

    settings: tuple[str, ...]
    counts: np.ndarray

    @property
    def n_qubits(self) -> int:
        return len(self.settings[0])


@lru_cache(maxsize=None)
def _measurement_basis(n_qubits: int) -> tuple[tuple[str, ...], np.ndarray]:
    """Settings and their outcome vectors, shape (S, K, d)."""
    if n_qubits == 1:
        out = np.stack([_EIGVECS[s] for s in SETTINGS_1Q])
        settings = SETTINGS_1Q
    else:
        out = np.stack([np.stack([np.kron(u, v) for u in _EIGVECS[a] for v in _EIGVECS[b]])
                        for a, b in SETTINGS_2Q])
        settings = SETTINGS_2Q
    out.setflags(write=False)
    return settings, out


def born_probabilities(rho: np.ndarray) -> np.ndarray:
    """Outcome probabilities (..., S, K) for stacks of 2x2 or 4x4 density matrices."""
    n_qubits = 1 if rho.shape[-1] == 2 else 2
    _, e = _measurement_basis(n_qubits)
    p = np.einsum("skd,...de,ske->...sk", e.conj(), rho, e).real
    p = np.clip(p, 0.0, None)
    return p / p.sum(axis=-1, keepdims=True)


def _state_matrix(rho) -> np.ndarray:
    return rho.matrix if hasattr(rho, "matrix") else np.asarray(rho)


def ideal_counts(rho, counts: int) -> CountsTable:
    """Expected counts (no shot noise)."""
    m = _state_matrix(rho)
    settings, _ = _measurement_basis(1 if m.shape[-1] == 2 else 2)
    return CountsTable(settings, counts * born_probabilities(m))


def _draw(p: np.ndarray, n: int, noise: str, rng: np.random.Generator, size=None) -> np.ndarray:
    if noise == "poisson":
        shape = p.shape if size is None else tuple(size) + p.shape[-2:]
        return rng.poisson(n * np.broadcast_to(p, shape))
    if size is None:
        return rng.multinomial(n, p)
    return rng.multinomial(n, p, size=tuple(size) + p.shape[:-1])


def simulate_counts(rho, cfg: TomographyConfig, rng: np.random.Generator | None = None) -> CountsTable:
    """Shot-noise counts for every setting; reproducible from cfg.seed unless `rng` is given."""
    m = _state_matrix(rho)
    settings, _ = _measurement_basis(1 if m.shape[-1] == 2 else 2)
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    return CountsTable(settings, _draw(born_probabilities(m), cfg.counts, cfg.noise, rng))


def _linear_inversion(counts: np.ndarray) -> np.ndarray:
    """Raw (possibly non-PSD) estimates from counts (..., S, K)."""
    counts = np.asarray(counts, dtype=float)
    totals = counts.sum(axis=-1, keepdims=True)
    freq = counts / np.where(totals > 0, totals, 1.0)
    if counts.shape[-2:] == (3, 2):
        r = freq @ _SIGN
        return 0.5 * (np.eye(2) + np.einsum("...i,ijk->...jk", r, np.stack(PAULIS)))
    # two qubits: outcome k = 2*k1 + k2, eigenvalues s1 * s2
    s1 = np.repeat(_SIGN, 2)
    s2 = np.tile(_SIGN, 2)
    f = freq.reshape(freq.shape[:-2] + (3, 3, 4))
    corr = f @ (s1 * s2)
    left = (f @ s1).mean(axis=-1)
    right = (f @ s2).mean(axis=-2)
    paulis = np.stack((np.eye(2, dtype=complex),) + PAULIS)
    r = np.zeros(freq.shape[:-2] + (4, 4))
    r[..., 0, 0] = 1.0
    r[..., 1:, 0] = left
    r[..., 0, 1:] = right
    r[..., 1:, 1:] = corr
    basis = np.einsum("iab,jcd->ijacbd", paulis, paulis).reshape(4, 4, 4, 4)
    return 0.25 * np.einsum("...ij,ijkl->...kl", r, basis)


def project_to_states(m: np.ndarray) -> np.ndarray:
    """Clip negative eigenvalues and renormalize the trace (works on stacks)."""
    m = 0.5 * (m + np.swapaxes(m.conj(), -1, -2))
    w, v = np.linalg.eigh(m)
    w = np.clip(w, 0.0, None)
    w = w / w.sum(axis=-1, keepdims=True)
    return (v * w[..., None, :]) @ np.swapaxes(v.conj(), -1, -2)


def reconstruct_state(table: CountsTable):
    """Linear-inversion estimate projected onto the density matrices."""
    c = np.asarray(table.counts, dtype=float)
    expected = (3, 2) if table.n_qubits == 1 else (9, 4)
    ref = SETTINGS_1Q if table.n_qubits == 1 else SETTINGS_2Q
    if c.shape != expected or tuple(table.settings) != ref:
        raise ConfigError(f"incomplete tomography data: need settings {ref} with shape {expected}")
    if np.any(c < 0) or np.any(c.sum(axis=-1) <= 0):
        raise ConfigError("every setting needs a positive number of counts")
    m = project_to_states(_linear_inversion(c))
    cls = QubitState if table.n_qubits == 1 else TwoQubitState
    return cls(m, atol=1e-9)


# sweeps

AXES = ("path_difference", "tilt")
ARMS = ("trace_distance", "concurrence")


@dataclass(frozen=True, eq=False)
class SweepSpec:
    """What to sweep and where the environment spectrum comes from.

    On the path-difference axis the controls are dn * L / lambda0 and the
    environment is `mixture`, or the fitted cavity output at `cavity.tilt_deg`.
    On the tilt axis the controls are angles in degrees and `cavity` is
    required; each point reports the change of the quantity between the two
    fixed plates at one half and one full beat period of the untilted spectrum.
    """

    controls: np.ndarray
    axis: str = "path_difference"
    arm: str = "trace_distance"
    mixture: GaussianMixtureSpectrum | None = None
    cavity: CavityConfig | None = None
    kappa_method: str = "closed_form"

    def __post_init__(self):
        c = np.array(self.controls, dtype=float)
        if c.ndim != 1 or c.size == 0:
            raise ConfigError("sweep needs a non-empty control grid")
        if not np.all(np.isfinite(c)) or not np.all(np.diff(c) > 0):
            raise ConfigError("control grid must be finite and strictly increasing")
        if self.axis not in AXES:
            raise ConfigError(f"axis must be one of {AXES}")
        if self.arm not in ARMS:
            raise ConfigError(f"arm must be one of {ARMS}")
        if self.kappa_method not in ("closed_form", "quadrature"):
            raise ConfigError("kappa_method must be closed_form or quadrature")
        if self.axis == "tilt" and self.cavity is None:
            raise ConfigError("a tilt sweep needs a cavity configuration")
        if self.axis == "path_difference" and (self.mixture is None) == (self.cavity is None):
            raise ConfigError("a path sweep needs exactly one of mixture or cavity")
        if self.axis == "path_difference" and c[0] < 0:
            raise ConfigError("path differences must be non-negative")
        c.setflags(write=False)
        object.__setattr__(self, "controls", c)

    def describe(self) -> dict:
        return {
            "axis": self.axis,
            "arm": self.arm,
            "kappa_method": self.kappa_method,
            "controls": [float(v) for v in self.controls],
            "mixture": None if self.mixture is None else self.mixture.to_dict(),
            "cavity": None if self.cavity is None else asdict(self.cavity),
        }


@dataclass(frozen=True, eq=False)
class SweepDataset:
    controls: np.ndarray
    values: np.ndarray
    stderr: np.ndarray
    extras: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    @property
    def failed(self) -> np.ndarray:
        return ~np.isfinite(self.values)

    def to_csv_text(self) -> str:
        names = ["control", "value", "stderr"] + list(self.extras)
        cols = [self.controls, self.values, self.stderr] + [self.extras[k] for k in self.extras]
        lines = [",".join(names)]
        lines += [",".join(f"{v:.17g}" for v in row) for row in zip(*cols)]
        return "\n".join(lines) + "\n"

    def metadata_text(self) -> str:
        return json.dumps(self.metadata, indent=2, sort_keys=True) + "\n"

    def write(self, csv_path) -> tuple[Path, Path]:
        csv_path = Path(csv_path)
        meta_path = csv_path.with_suffix(".json")
        csv_path.write_text(self.to_csv_text())
        meta_path.write_text(self.metadata_text())
        return csv_path, meta_path

    @classmethod
    def read(cls, csv_path) -> "SweepDataset":
        csv_path = Path(csv_path)
        with open(csv_path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], np.array([[float(v) for v in r] for r in rows[1:] if r])
        if header[:3] != ["control", "value", "stderr"]:
            raise ConfigError(f"{csv_path}: unexpected header {header}")
        body = body.reshape(-1, len(header))
        extras = {name: body[:, i] for i, name in enumerate(header[3:], start=3)}
        meta_path = csv_path.with_suffix(".json")
        metadata = json.loads(meta_path.read_text()) if meta_path.exists() else {}
        return cls(body[:, 0], body[:, 1], body[:, 2], extras, metadata)


def revival_path_grid(mixture: GaussianMixtureSpectrum, cfg: OpenSystemConfig, n: int = 200,
                   periods: float = 2.0) -> np.ndarray:
    """n uniform path differences (units of lambda0) over `periods` beat periods."""
    spread = max(mixture.centers) - min(mixture.centers)
    if spread <= 0:
        raise ConfigError("mixture needs two separated peaks to define a beat period")
    x_max = periods * 2 * np.pi / spread
    # dn * L = c * x
    return np.linspace(0.0, x_max, n) * C_LIGHT / cfg.wavelength


def _kappas(spec: SweepSpec, mixture: GaussianMixtureSpectrum | None, cfg: OpenSystemConfig,
            grid: TimeGrid, cavity: CavityConfig | None = None) -> np.ndarray:
    if spec.kappa_method == "quadrature":
        sampled = cavity_spectrum(cavity) if cavity is not None else mixture.sample()
        return kappa_quadrature(sampled, cfg, grid).kappa
    return kappa_closed_form(mixture, cfg, grid).kappa


def _exact_quantity(arm: str, kappa: np.ndarray) -> np.ndarray:
    if arm == "trace_distance":
        (r1, r2), _ = preset_states()
        diff = (r1.matrix - r2.matrix) * dephasing_factors(kappa)
        return trace_distance_array(diff, np.zeros_like(diff))
    return concurrence_array(_ancilla_map_array(kappa, bell_state().matrix))


def _mapped_states(arm: str, kappa: complex) -> list[np.ndarray]:
    (r1, r2), bell = preset_states()
    if arm == "trace_distance":
        f = dephasing_factors(kappa)
        return [r1.matrix * f, r2.matrix * f]
    return [_ancilla_map_array(kappa, bell.matrix)]


def _draw_counts(arm: str, kappa: complex, tomo: TomographyConfig,
                 rng: np.random.Generator) -> list[np.ndarray]:
    """Observed counts plus bootstrap resamples, (1 + B, S, K) per measured state."""
    out = []
    for rho in _mapped_states(arm, kappa):
        counts = _draw(born_probabilities(rho), tomo.counts, tomo.noise, rng)
        totals = counts.sum(axis=-1)
        if tomo.noise == "poisson":
            boot = rng.poisson(counts, size=(tomo.bootstrap,) + counts.shape)
        else:
            p_hat = counts / np.where(totals > 0, totals, 1)[:, None]
            boot = rng.multinomial(totals, p_hat, size=(tomo.bootstrap,) + totals.shape)
        out.append(np.concatenate([counts[None], boot]))
    return out


def _point_rngs(seed: int, n: int) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def _tomography_run(arm, kappas, tomo, rngs, workers):
    """Reconstructed quantity for every point: (P, 1 + B) array, estimate first."""
    def one(i):
        return _draw_counts(arm, kappas[i], tomo, rngs[i])
    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            draws = list(pool.map(one, range(len(kappas))))
    else:
        draws = [one(i) for i in range(len(kappas))]
    states = [project_to_states(_linear_inversion(np.stack([d[j] for d in draws])))
              for j in range(len(draws[0]))]
    if arm == "trace_distance":
        return trace_distance_array(states[0], states[1])
    return concurrence_array(states[0])


def bootstrap_summary(samples: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Bias-corrected estimate 2*est - mean(replicates) and the replicate std."""
    est, boot = samples[..., 0], samples[..., 1:]
    return 2 * est - boot.mean(axis=-1), boot.std(axis=-1, ddof=1)


def run_sweep(spec: SweepSpec, tomo: TomographyConfig | None = None,
              cfg: OpenSystemConfig = OpenSystemConfig(), workers: int | None = None) -> SweepDataset:
    """Run a sweep in exact mode (`tomo=None`) or with simulated tomography.

    Each control point gets its own random stream split from ``tomo.seed``,
    so results do not depend on `workers`. Points whose spectrum fit or
    quadrature fails are reported as NaN and listed in the metadata.
    """
    meta = {
        "software": f"nonmarkov {__version__}",
        "mode": "exact" if tomo is None else "tomographic",
        "sweep": spec.describe(),
        "open_system": asdict(cfg),
        "tomography": None if tomo is None else asdict(tomo),
        "seed": None if tomo is None else tomo.seed,
    }
    if spec.axis == "path_difference":
        return _path_sweep(spec, tomo, cfg, workers, meta)
    return _tilt_sweep(spec, tomo, cfg, workers, meta)


def _path_sweep(spec, tomo, cfg, workers, meta):
    n = spec.controls.size
    nan = np.full(n, np.nan)
    mixture, cavity = spec.mixture, None
    try:
        if mixture is None:
            cavity = spec.cavity
            mixture = fit_two_gaussians(cavity_spectrum(cavity))
            meta["fitted_mixture"] = mixture.to_dict()
        grid = TimeGrid.from_path_difference(spec.controls, cfg)
        kappas = _kappas(spec, mixture, cfg, grid, cavity)
    except (FitError, AliasingError) as exc:
        meta["failed"] = list(range(n))
        meta["error"] = str(exc)
        return SweepDataset(spec.controls, nan, nan.copy(), {}, meta)
    meta["failed"] = []
    if tomo is None:
        return SweepDataset(spec.controls, _exact_quantity(spec.arm, kappas), np.zeros(n), {}, meta)
    samples = _tomography_run(spec.arm, kappas, tomo, _point_rngs(tomo.seed, n), workers)
    est, err = bootstrap_summary(samples)
    return SweepDataset(spec.controls, est, err, {"exact": _exact_quantity(spec.arm, kappas)}, meta)


def plate_positions(cavity: CavityConfig, cfg: OpenSystemConfig) -> TimeGrid:
    """Plates at half and one full beat period of the untilted spectrum (x = dn * t).

    The beat period comes from the fitted peak separation, which the filter
    envelope pulls below the free spectral range; a degenerate fit falls
    back to the free spectral range.
    """
    untilted = cavity.with_tilt(0.0)
    try:
        m = fit_two_gaussians(cavity_spectrum(untilted))
        spread = max(m.centers) - min(m.centers)
    except FitError:
        spread = 0.0
    if spread <= 0:
        spread = untilted.free_spectral_range
    return TimeGrid.from_x([0.0, np.pi / spread, 2 * np.pi / spread], cfg)


def _tilt_sweep(spec, tomo, cfg, workers, meta):
    n = spec.controls.size
    values, errs, measure = np.full(n, np.nan), np.full(n, np.nan), np.full(n, np.nan)
    plates = plate_positions(spec.cavity, cfg)
    kappas = np.full((n, 2), np.nan, dtype=complex)
    failed = []
    for i, theta in enumerate(spec.controls):
        cav = spec.cavity.with_tilt(theta)
        try:
            m = fit_two_gaussians(cavity_spectrum(cav))
            traj = kappa_closed_form(m, cfg, default_measure_grid(m, cfg))
            kappas[i] = _kappas(spec, m, cfg, plates, cav)[1:]
        except (FitError, AliasingError):
            failed.append(i)
            continue
        nm = blp_analytic(traj) if spec.arm == "trace_distance" else rhp_concurrence_measure(traj)
        measure[i] = nm.value
    ok = [i for i in range(n) if i not in failed]
    if tomo is None:
        q = _exact_quantity(spec.arm, kappas[ok].ravel()).reshape(-1, 2)
        values[ok] = q[:, 1] - q[:, 0]
        errs[ok] = 0.0
    else:
        rngs = _point_rngs(tomo.seed, 2 * n)
        flat_k = kappas[ok].ravel()
        flat_r = [rngs[2 * i + j] for i in ok for j in (0, 1)]
        samples = _tomography_run(spec.arm, flat_k, tomo, flat_r, workers).reshape(len(ok), 2, -1)
        values[ok], errs[ok] = bootstrap_summary(samples[:, 1] - samples[:, 0])
    meta["failed"] = failed
    meta["plates_x"] = [float(v) for v in plates.x(cfg)[1:]]
    return SweepDataset(spec.controls, values, errs, {"N": measure}, meta)
