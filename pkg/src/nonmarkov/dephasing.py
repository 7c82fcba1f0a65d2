"""Decoherence function kappa(t) and the polarization dephasing map.

The quartz plate multiplies the |H><V| coherence by conj(kappa(t)) and
leaves populations alone, with

    kappa(t) = integral d omega |f(omega)|^2 exp(i omega dn t).

Only the product x = dn * t matters, so grids carry interaction times and
every routine converts through the birefringence dn = n_V - n_H.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import AliasingError, ConfigError, InvalidStateError
from .qstate import QubitState, TwoQubitState
from .spectrum import C_LIGHT, GaussianMixtureSpectrum, SampledSpectrum

KAPPA_TOL = 1e-9


@dataclass(frozen=True)
class OpenSystemConfig:
    """Quartz plate refractive indices and the reference wavelength.

    Defaults are ordinary/extraordinary indices of crystal quartz near 702 nm.
    """

    n_h: float = 1.54142
    n_v: float = 1.55048
    wavelength: float = 702e-9

    def __post_init__(self):
        if not (self.n_h > 0 and self.n_v > 0):
            raise ConfigError("refractive indices must be positive")
        if self.n_h == self.n_v:
            raise ConfigError("birefringence n_V - n_H must be non-zero")
        if not self.wavelength > 0:
            raise ConfigError("reference wavelength must be positive")

    @property
    def delta_n(self) -> float:
        return self.n_v - self.n_h


@dataclass(frozen=True, eq=False)
class TimeGrid:
    """Interaction times t = L / c, strictly increasing from 0."""

    times: np.ndarray

    def __post_init__(self):
        t = np.array(self.times, dtype=float)
        if t.ndim != 1 or t.size < 1:
            raise ConfigError("time grid must be a non-empty 1-d array")
        if t[0] != 0:
            raise ConfigError("time grid must start at 0")
        if not np.all(np.diff(t) > 0):
            raise ConfigError("time grid must be strictly increasing")
        t.setflags(write=False)
        object.__setattr__(self, "times", t)

    def __len__(self):
        return self.times.size

    @classmethod
    def from_lengths(cls, lengths) -> "TimeGrid":
        return cls(np.asarray(lengths, dtype=float) / C_LIGHT)

    @classmethod
    def from_x(cls, x, cfg: OpenSystemConfig) -> "TimeGrid":
        """Grid from coupling coordinates x = dn * t (seconds)."""
        return cls(np.asarray(x, dtype=float) / cfg.delta_n)

    @classmethod
    def from_path_difference(cls, p, cfg: OpenSystemConfig) -> "TimeGrid":
        """Grid from effective path differences dn * L in units of the reference wavelength."""
        return cls(np.asarray(p, dtype=float) * cfg.wavelength / (cfg.delta_n * C_LIGHT))

    def lengths(self) -> np.ndarray:
        return self.times * C_LIGHT

    def x(self, cfg: OpenSystemConfig) -> np.ndarray:
        return cfg.delta_n * self.times

    def path_difference(self, cfg: OpenSystemConfig) -> np.ndarray:
        return cfg.delta_n * self.lengths() / cfg.wavelength


def revival_grid(delta_omega: float, cfg: OpenSystemConfig, periods: float = 2.0,
                 samples_per_period: int = 40) -> TimeGrid:
    """Uniform grid over `periods` beat periods 2 pi / delta_omega in x.

    The step divides the period exactly, so the half-period node (the zero
    of |kappa| at A = 1) is sampled.
    """
    if not delta_omega > 0:
        raise ConfigError("peak separation must be positive")
    n = int(round(periods * samples_per_period))
    x = np.arange(n + 1) * (2 * np.pi / delta_omega / samples_per_period)
    return TimeGrid.from_x(x, cfg)


@dataclass(frozen=True, eq=False)
class DecoherenceTrajectory:
    grid: TimeGrid
    kappa: np.ndarray
    config: OpenSystemConfig = field(default_factory=OpenSystemConfig)
    quadrature_error: float | None = None

    def __post_init__(self):
        k = np.array(self.kappa, dtype=complex)
        if k.shape != self.grid.times.shape:
            raise ConfigError("kappa must have one value per grid point")
        if not np.all(np.isfinite(k)):
            raise ConfigError("kappa has non-finite values")
        if np.max(np.abs(k)) > 1 + KAPPA_TOL:
            raise InvalidStateError(f"|kappa| reaches {np.max(np.abs(k))!r} > 1")
        if abs(k[0] - 1) > KAPPA_TOL:
            raise InvalidStateError(f"kappa(0) = {k[0]!r}, expected 1")
        k.setflags(write=False)
        object.__setattr__(self, "kappa", k)

    @property
    def modulus(self) -> np.ndarray:
        return np.abs(self.kappa)

    @property
    def x(self) -> np.ndarray:
        return self.grid.x(self.config)

    @property
    def path_difference(self) -> np.ndarray:
        return self.grid.path_difference(self.config)

    def to_csv_text(self) -> str:
        lines = ["x_over_lambda0,re_kappa,im_kappa"]
        lines += [f"{p:.17g},{k.real:.17g},{k.imag:.17g}"
                  for p, k in zip(self.path_difference, self.kappa)]
        return "\n".join(lines) + "\n"


def kappa_closed_form(m: GaussianMixtureSpectrum, cfg: OpenSystemConfig,
                      grid: TimeGrid) -> DecoherenceTrajectory:
    """sum_k w_k exp(i omega_k x) exp(-sigma^2 x^2 / 2) for a mixture of at most two peaks."""
    if m.n_peaks > 2:
        raise ConfigError("closed form covers one or two peaks; use kappa_quadrature")
    x = grid.x(cfg)
    carrier = sum(w * np.exp(1j * c * x) for c, w in zip(m.centers, m.weights))
    kappa = carrier * np.exp(-0.5 * (m.width * x) ** 2)
    return DecoherenceTrajectory(grid, kappa, cfg)


def two_gaussian_modulus(x, amplitude_ratio: float, sigma: float, delta_omega: float) -> np.ndarray:
    """|kappa| for two equal-width peaks with weights 1/(1+A), A/(1+A)."""
    x = np.asarray(x, dtype=float)
    a = amplitude_ratio
    # clip guards the A = 1 zeros against rounding to a tiny negative
    inner = np.clip(1 + a * a + 2 * a * np.cos(delta_omega * x), 0.0, None)
    return np.exp(-0.5 * sigma**2 * x**2) / (1 + a) * np.sqrt(inner)


def kappa_quadrature(s: SampledSpectrum, cfg: OpenSystemConfig, grid: TimeGrid,
                     max_phase_step: float = math.pi / 4) -> DecoherenceTrajectory:
    """Trapezoidal Fourier integral of a sampled spectrum.

    Refuses grids where the phase advance between frequency samples at the
    largest time exceeds `max_phase_step`. The reported error estimate is the
    change against the same rule on every other frequency sample.
    """
    w, f = s.grid, s.values
    x = grid.x(cfg)
    step = float(np.max(np.diff(w)))
    if step * abs(x[-1]) > max_phase_step:
        raise AliasingError(
            f"frequency step {step:.3g} rad/s too coarse for x_max {abs(x[-1]):.3g} s "
            f"(phase step {step * abs(x[-1]):.3g} > {max_phase_step:.3g})")
    # factor the carrier out so the integrand varies on the scale of the spectrum width
    w0 = float(np.trapezoid(w * f, w))
    kappa = np.empty(x.size, dtype=complex)
    coarse = np.empty(x.size, dtype=complex)
    for lo in range(0, x.size, 256):
        phase = np.exp(1j * np.outer(x[lo:lo + 256], w - w0))
        kappa[lo:lo + 256] = np.trapezoid(f * phase, w, axis=1)
        coarse[lo:lo + 256] = np.trapezoid(f[::2] * phase[:, ::2], w[::2], axis=1)
    coarse /= np.trapezoid(f[::2], w[::2])
    err = float(np.max(np.abs(kappa - coarse)))
    kappa = kappa * np.exp(1j * w0 * x)
    return DecoherenceTrajectory(grid, kappa, cfg, quadrature_error=err)


def _check_kappa(kappa: complex) -> complex:
    k = complex(kappa)
    if not abs(k) <= 1 + KAPPA_TOL:
        raise InvalidStateError(f"|kappa| = {abs(k)!r} > 1 breaks complete positivity")
    return k


def dephasing_factors(kappa) -> np.ndarray:
    """Elementwise multipliers [[1, conj(k)], [k, 1]] for an array of kappas."""
    k = np.asarray(kappa, dtype=complex)
    out = np.ones(k.shape + (2, 2), dtype=complex)
    out[..., 0, 1] = np.conj(k)
    out[..., 1, 0] = k
    return out


def apply_map(kappa: complex, rho0: QubitState) -> QubitState:
    """Phi_t: keep populations, scale rho_HV by conj(kappa) and rho_VH by kappa."""
    k = _check_kappa(kappa)
    return QubitState(rho0.matrix * dephasing_factors(k), atol=max(rho0.atol, 1e-12))


def extend_to_ancilla(kappa: complex, rho_sa0: TwoQubitState) -> TwoQubitState:
    """(Phi_t x I) acting on the first (system) factor."""
    k = _check_kappa(kappa)
    return TwoQubitState(_ancilla_map_array(k, rho_sa0.matrix), atol=max(rho_sa0.atol, 1e-12))


def _ancilla_map_array(kappa, rho_sa: np.ndarray) -> np.ndarray:
    """Broadcast (Phi x I) over kappa (...) and 4x4 matrices (..., 4, 4)."""
    fac = dephasing_factors(kappa)
    r = np.asarray(rho_sa).reshape(rho_sa.shape[:-2] + (2, 2, 2, 2))
    # indices (s, a, s', a'): the factor depends on s and s' only
    out = r * fac[..., :, None, :, None]
    return out.reshape(out.shape[:-4] + (4, 4))


def analytic_pair_distance(a: float, b: complex, kappa: complex) -> float:
    """sqrt(a^2 + |kappa b|^2) for population difference a and coherence difference b."""
    k = _check_kappa(kappa)
    if not (abs(a) <= 1 + 1e-12 and abs(b) <= 1 + 1e-12):
        raise InvalidStateError(f"(a, b) = ({a!r}, {b!r}) is not a difference of two states")
    # trace distance of two qubits is at most 1; also a^2 + |b|^2 <= 1 is needed
    if a * a + abs(b) ** 2 > 1 + 1e-12:
        raise InvalidStateError(f"a^2 + |b|^2 = {a * a + abs(b) ** 2!r} exceeds 1")
    return math.sqrt(a * a + abs(k * b) ** 2)
