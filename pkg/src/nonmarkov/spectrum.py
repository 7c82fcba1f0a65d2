"""Environment frequency distributions |f(omega)|^2.

Three ways to obtain one: a parametric Gaussian mixture, a sampled density
(e.g. read from CSV), or the physical model of a tilted Fabry-Perot plate
followed by an interference filter. All frequencies are angular (rad/s).
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import least_squares
from scipy.signal import find_peaks, peak_widths

from .errors import ConfigError, FitError

C_LIGHT = 299_792_458.0
FWHM_PER_SIGMA = 2.0 * math.sqrt(2.0 * math.log(2.0))
NORM_TOL = 1e-9


def wavelength_to_omega(wavelength):
    return 2.0 * np.pi * C_LIGHT / np.asarray(wavelength, dtype=float)


def omega_to_wavelength(omega):
    return 2.0 * np.pi * C_LIGHT / np.asarray(omega, dtype=float)


@dataclass(frozen=True)
class GaussianMixtureSpectrum:
    """Weighted Gaussian peaks with a shared width.

    A zero weight is allowed; it is how a degenerate (single-peak) fit keeps
    the two-peak layout.
    """

    centers: tuple[float, ...]
    weights: tuple[float, ...]
    width: float
    fit_residual: float | None = field(default=None, compare=False)

    def __post_init__(self):
        centers = tuple(float(c) for c in self.centers)
        weights = tuple(float(w) for w in self.weights)
        object.__setattr__(self, "centers", centers)
        object.__setattr__(self, "weights", weights)
        if len(centers) != len(weights) or not centers:
            raise ConfigError("centers and weights must be non-empty and of equal length")
        if not all(math.isfinite(c) for c in centers):
            raise ConfigError("peak centers must be finite")
        if any(w < 0 or not math.isfinite(w) for w in weights) or max(weights) <= 0:
            raise ConfigError(f"weights must be non-negative with one positive: {weights}")
        if abs(sum(weights) - 1.0) > 1e-12:
            raise ConfigError(f"weights sum to {sum(weights)!r}, expected 1")
        if not (self.width > 0 and math.isfinite(self.width)):
            raise ConfigError(f"width must be positive, got {self.width!r}")

    @classmethod
    def two_peak(cls, amplitude_ratio: float, sigma: float, delta_omega: float,
                 center: float | None = None, unit: str = "rad/s") -> "GaussianMixtureSpectrum":
        """Peaks at center -/+ delta_omega/2 with weights 1/(1+A) and A/(1+A).

        With ``unit="Hz"`` sigma and delta_omega are read as cycle frequencies
        and multiplied by 2 pi.
        """
        if unit not in ("rad/s", "Hz"):
            raise ConfigError(f"unknown frequency unit {unit!r}")
        if amplitude_ratio < 0:
            raise ConfigError("amplitude ratio must be >= 0")
        scale = 2.0 * np.pi if unit == "Hz" else 1.0
        sigma, delta_omega = sigma * scale, delta_omega * scale
        if center is None:
            center = float(wavelength_to_omega(702e-9))
        a = float(amplitude_ratio)
        w1 = 1.0 / (1.0 + a)
        return cls((center - delta_omega / 2, center + delta_omega / 2), (w1, 1.0 - w1), sigma)

    @property
    def n_peaks(self) -> int:
        return len(self.centers)

    def density(self, omega) -> np.ndarray:
        omega = np.asarray(omega, dtype=float)
        norm = 1.0 / (self.width * math.sqrt(2.0 * math.pi))
        out = np.zeros_like(omega)
        for c, w in zip(self.centers, self.weights):
            out += w * norm * np.exp(-0.5 * ((omega - c) / self.width) ** 2)
        return out

    def default_grid(self, n: int = 4001, n_sigma: float = 10.0) -> np.ndarray:
        lo = min(self.centers) - n_sigma * self.width
        hi = max(self.centers) + n_sigma * self.width
        return np.linspace(lo, hi, n)

    def sample(self, grid=None) -> "SampledSpectrum":
        grid = self.default_grid() if grid is None else np.asarray(grid, dtype=float)
        return SampledSpectrum.normalized(grid, self.density(grid))

    def shifted(self, offset: float) -> "GaussianMixtureSpectrum":
        return replace(self, centers=tuple(c + offset for c in self.centers))

    def to_dict(self) -> dict:
        out = {"centers": list(self.centers), "weights": list(self.weights), "width": self.width}
        if self.fit_residual is not None:
            out["fit_residual"] = self.fit_residual
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "GaussianMixtureSpectrum":
        return cls(tuple(d["centers"]), tuple(d["weights"]), float(d["width"]),
                   d.get("fit_residual"))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "GaussianMixtureSpectrum":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True, eq=False)
class SampledSpectrum:
    grid: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        grid = np.array(self.grid, dtype=float)
        values = np.array(self.values, dtype=float)
        if grid.ndim != 1 or grid.shape != values.shape or grid.size < 2:
            raise ConfigError("grid and values must be 1-d arrays of equal length >= 2")
        if not np.all(np.diff(grid) > 0):
            raise ConfigError("frequency grid must be strictly increasing")
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise ConfigError("spectral density must be finite and non-negative")
        total = np.trapezoid(values, grid)
        if abs(total - 1.0) > NORM_TOL:
            raise ConfigError(f"spectrum integrates to {total!r}, expected 1")
        for arr in (grid, values):
            arr.setflags(write=False)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", values)

    @classmethod
    def normalized(cls, grid, values) -> "SampledSpectrum":
        grid = np.asarray(grid, dtype=float)
        values = np.asarray(values, dtype=float)
        total = np.trapezoid(values, grid)
        if not total > 0:
            raise FitError("spectrum has no weight on this grid")
        return cls(grid, values / total)

    def integral(self) -> float:
        return float(np.trapezoid(self.values, self.grid))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv_text())

    def to_csv_text(self) -> str:
        lines = ["omega_rad_per_s,density"]
        lines += [f"{w:.17g},{v:.17g}" for w, v in zip(self.grid, self.values)]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_csv(cls, path) -> "SampledSpectrum":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows or rows[0] != ["omega_rad_per_s", "density"]:
            raise ConfigError(f"{path}: expected header omega_rad_per_s,density")
        data = np.array([[float(x) for x in r] for r in rows[1:] if r], dtype=float)
        return cls(data[:, 0], data[:, 1])


# Fabry-Perot plate + interference filter

@dataclass(frozen=True)
class CavityConfig:
    """Tilted Fabry-Perot plate followed by a bandpass filter.

    `thickness_rms` is the RMS thickness variation across the illuminated
    area; averaging the Airy comb over it sets the spectral peak width.
    `phase_offset` is added to the round-trip phase and moves the comb
    relative to the filter (angle calibration knob).
    """

    thickness: float = 0.04e-3
    reflectivity: float = 0.85
    refractive_index: float = 1.455
    tilt_deg: float = 0.0
    filter_wavelength: float = 702e-9
    filter_fwhm: float = 4e-9
    source_wavelength: float = 702e-9
    source_fwhm: float | None = None
    phase_offset: float = 0.0
    thickness_rms: float = 35e-9
    filter_shape: str = "gaussian"

    def __post_init__(self):
        if not self.thickness > 0:
            raise ConfigError("cavity thickness must be positive")
        if not 0 < self.reflectivity < 1:
            raise ConfigError("reflectivity must lie in (0, 1)")
        if not self.refractive_index >= 1:
            raise ConfigError("cavity refractive index must be >= 1")
        if not 0 <= self.tilt_deg < 90:
            raise ConfigError("tilt angle must lie in [0, 90) degrees")
        if not (self.filter_fwhm > 0 and self.filter_wavelength > 0 and self.source_wavelength > 0):
            raise ConfigError("filter width and wavelengths must be positive")
        if self.source_fwhm is not None and not self.source_fwhm > 0:
            raise ConfigError("source FWHM must be positive when given")
        if self.thickness_rms < 0:
            raise ConfigError("thickness_rms must be >= 0")
        if self.filter_shape not in ("gaussian", "lorentzian"):
            raise ConfigError(f"unknown filter shape {self.filter_shape!r}")

    @property
    def internal_angle(self) -> float:
        """Refraction angle inside the plate, radians."""
        return math.asin(math.sin(math.radians(self.tilt_deg)) / self.refractive_index)

    @property
    def round_trip_delay(self) -> float:
        """d(delta)/d(omega) = 2 n d cos(theta_r) / c, in seconds."""
        return 2.0 * self.refractive_index * self.thickness * math.cos(self.internal_angle) / C_LIGHT

    @property
    def free_spectral_range(self) -> float:
        return 2.0 * math.pi / self.round_trip_delay

    @property
    def filter_center(self) -> float:
        return float(wavelength_to_omega(self.filter_wavelength))

    @property
    def filter_fwhm_omega(self) -> float:
        return 2.0 * math.pi * C_LIGHT * self.filter_fwhm / self.filter_wavelength**2

    def with_tilt(self, tilt_deg: float) -> "CavityConfig":
        return replace(self, tilt_deg=float(tilt_deg))

    def resonances(self, order) -> np.ndarray:
        """Angular frequencies where the round-trip phase equals 2 pi * order."""
        return (2.0 * np.pi * np.asarray(order, dtype=float) - self.phase_offset) / self.round_trip_delay


def round_trip_phase(cfg: CavityConfig, omega) -> np.ndarray:
    return np.asarray(omega, dtype=float) * cfg.round_trip_delay + cfg.phase_offset


def airy_transmission(cfg: CavityConfig, omega) -> np.ndarray:
    """Ideal plane-parallel transmission (1-R)^2 / (1 - 2R cos(delta) + R^2)."""
    r = cfg.reflectivity
    delta = round_trip_phase(cfg, omega)
    return (1 - r) ** 2 / (1 - 2 * r * np.cos(delta) + r * r)


def averaged_transmission(cfg: CavityConfig, omega) -> np.ndarray:
    """Airy transmission averaged over Gaussian thickness variation.

    Uses the Fourier series T = (1-R)/(1+R) [1 + 2 sum_k R^k cos(k delta)];
    a Gaussian phase jitter of std s damps term k by exp(-k^2 s^2 / 2).
    """
    omega = np.asarray(omega, dtype=float)
    if cfg.thickness_rms == 0:
        return airy_transmission(cfg, omega)
    r = cfg.reflectivity
    delta = round_trip_phase(cfg, omega)
    jitter = omega * cfg.round_trip_delay * (cfg.thickness_rms / cfg.thickness)
    # term k is bounded by R^k exp(-k^2 s_min^2 / 2); stop once that is below 1e-17
    s_min = float(np.min(jitter))
    k = np.arange(1, int(math.ceil(math.log(1e-17) / math.log(r))) + 1)
    small = k * math.log(r) - 0.5 * (k * s_min) ** 2 < math.log(1e-17)
    n_terms = int(k[np.argmax(small)]) if small.any() else int(k[-1])
    total = np.ones_like(omega)
    for k in range(1, n_terms + 1):
        total += 2 * r**k * np.cos(k * delta) * np.exp(-0.5 * (k * jitter) ** 2)
    return (1 - r) / (1 + r) * total


def filter_envelope(cfg: CavityConfig, omega) -> np.ndarray:
    lam = omega_to_wavelength(omega)
    u = (lam - cfg.filter_wavelength) / cfg.filter_fwhm
    if cfg.filter_shape == "gaussian":
        env = np.exp(-0.5 * (u * FWHM_PER_SIGMA) ** 2)
    else:
        env = 1.0 / (1.0 + (2.0 * u) ** 2)
    if cfg.source_fwhm is not None:
        v = (lam - cfg.source_wavelength) / cfg.source_fwhm
        env = env * np.exp(-0.5 * (v * FWHM_PER_SIGMA) ** 2)
    return env


def default_cavity_grid(cfg: CavityConfig, n: int = 4001) -> np.ndarray:
    half = 3.0 * cfg.filter_fwhm_omega
    return np.linspace(cfg.filter_center - half, cfg.filter_center + half, n)


def retained_orders(cfg: CavityConfig) -> tuple[int, int]:
    """The two comb orders bracketing the filter center."""
    m = (cfg.filter_center * cfg.round_trip_delay + cfg.phase_offset) / (2 * np.pi)
    lo = int(math.floor(m))
    return lo, lo + 1


def cavity_spectrum(cfg: CavityConfig, grid=None) -> SampledSpectrum:
    """Filtered cavity output, keeping only the two orders around the filter center."""
    grid = default_cavity_grid(cfg) if grid is None else np.asarray(grid, dtype=float)
    half = 3.0 * cfg.filter_fwhm_omega
    if grid[0] > cfg.filter_center - half or grid[-1] < cfg.filter_center + half:
        raise ConfigError("grid must span the filter center +/- 3 FWHM")
    order = np.rint(round_trip_phase(cfg, grid) / (2 * np.pi))
    keep = np.isin(order, retained_orders(cfg))
    values = np.where(keep, averaged_transmission(cfg, grid) * filter_envelope(cfg, grid), 0.0)
    if np.trapezoid(values, grid) < 1e-300:
        raise FitError("grid misses both retained transmission peaks")
    return SampledSpectrum.normalized(grid, values)


# two-Gaussian fitting

def _gauss(u, c, s):
    return np.exp(-0.5 * ((u - c) / s) ** 2)


def fit_two_gaussians(s: SampledSpectrum, max_relative_residual: float = 0.1) -> GaussianMixtureSpectrum:
    """Least-squares fit of two equal-width Gaussians to a sampled spectrum.

    Peaks below 1% of the maximum are ignored; a single surviving peak yields
    a degenerate mixture whose second weight is 0. Raises FitError when the
    optimizer fails or the relative L2 residual exceeds `max_relative_residual`.
    """
    w, y = s.grid, s.values
    ref, scale = 0.5 * (w[0] + w[-1]), w[-1] - w[0]
    u = (w - ref) / scale
    ymax = y.max()
    yn = y / ymax
    peaks, _ = find_peaks(np.concatenate(([0.0], yn, [0.0])), height=0.01)
    peaks = peaks - 1
    if len(peaks) == 0:
        raise FitError("no spectral peak found")
    if len(peaks) > 2:
        raise FitError(f"found {len(peaks)} peaks above 1% of the maximum, at most 2 supported")
    widths = peak_widths(yn, peaks, rel_height=0.5)[0] * (u[1] - u[0]) / FWHM_PER_SIGMA
    sig0 = max(float(np.mean(widths)), 2 * (u[1] - u[0]))

    if len(peaks) == 1:
        x0 = [yn[peaks[0]], u[peaks[0]], sig0]

        def resid(p):
            return p[0] * _gauss(u, p[1], p[2]) - yn
        lower, upper = [0, -np.inf, 1e-12], [np.inf, np.inf, np.inf]
    else:
        x0 = [yn[peaks[0]], yn[peaks[1]], u[peaks[0]], u[peaks[1]], sig0]

        def resid(p):
            return p[0] * _gauss(u, p[2], p[4]) + p[1] * _gauss(u, p[3], p[4]) - yn
        lower, upper = [0, 0, -np.inf, -np.inf, 1e-12], [np.inf] * 5

    res = least_squares(resid, x0, bounds=(lower, upper), method="trf",
                        x_scale="jac", xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=10_000)
    if not res.success:
        raise FitError(f"two-Gaussian fit did not converge: {res.message}")
    rel = float(np.linalg.norm(res.fun) / np.linalg.norm(yn))
    if rel > max_relative_residual:
        raise FitError(f"fit residual {rel:.3g} exceeds {max_relative_residual:.3g} of the spectrum norm")

    p = res.x
    if len(peaks) == 1:
        centers = (ref + p[1] * scale,) * 2
        weights = (1.0, 0.0)
        width = p[2] * scale
    else:
        amps, cs = np.array(p[:2]), np.array(p[2:4])
        order = np.argsort(cs, kind="stable")
        amps, cs = amps[order], cs[order]
        w1 = amps[0] / amps.sum()
        centers = tuple(ref + cs * scale)
        weights = (float(w1), float(1.0 - w1))
        width = p[4] * scale
    return GaussianMixtureSpectrum(centers, weights, float(width), fit_residual=rel)


def relative_amplitude(m: GaussianMixtureSpectrum) -> float:
    """A = weight_2 / weight_1 with peaks ordered by ascending center."""
    if m.n_peaks != 2:
        raise ConfigError(f"relative amplitude needs exactly two peaks, got {m.n_peaks}")
    order = np.argsort(m.centers, kind="stable")
    w1, w2 = (m.weights[i] for i in order)
    return math.inf if w1 == 0 else w2 / w1


def effective_amplitude(m: GaussianMixtureSpectrum) -> float:
    """min(A, 1/A); |kappa| is unchanged under A -> 1/A."""
    a = relative_amplitude(m)
    return min(a, 1.0 / a) if a > 0 else 0.0
