"""Non-Markovianity measures computed from sampled trajectories.

The trace-distance (BLP) measure is the total rise of D(rho1(t), rho2(t))
over the intervals where it grows, maximized over initial pairs. For pure
dephasing the maximizing pair is any antipodal pair on the Bloch equator,
where D(t) = |kappa(t)|; `blp_analytic` uses that, `blp_optimized` searches
over pairs, and `rhp_concurrence_measure` uses the entanglement with an
ancilla. All three must agree.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .dephasing import (
    DecoherenceTrajectory,
    OpenSystemConfig,
    TimeGrid,
    _ancilla_map_array,
    dephasing_factors,
    kappa_closed_form,
    revival_grid,
)
from .errors import AliasingError, ConfigError, ConvergenceError, FitError
from .qstate import BlochVector, bell_state, bloch_matrix, concurrence_array, trace_distance_array
from .spectrum import CavityConfig, GaussianMixtureSpectrum, cavity_spectrum, fit_two_gaussians

PLATEAU_TOL = 1e-12
TRANSITION_FLOOR = 1e-9


@dataclass(frozen=True, eq=False)
class TrajectoryAnalysis:
    grid: np.ndarray
    values: np.ndarray
    intervals: list[tuple[int, int]]
    total_increase: float

    @property
    def rises(self) -> list[float]:
        return [float(self.values[e] - self.values[s]) for s, e in self.intervals]


def analyze_trajectory(values, grid=None, min_rise: float = 0.0,
                       plateau_tol: float = PLATEAU_TOL) -> TrajectoryAnalysis:
    """Find maximal runs of strict increase and sum their rises.

    A step counts as increasing only if it exceeds `plateau_tol`; runs whose
    total rise is at most `min_rise` are discarded (noise threshold).
    """
    v = np.asarray(values, dtype=float)
    if v.ndim != 1 or v.size < 2:
        raise ValueError("trajectory needs at least 2 samples")
    g = np.arange(v.size, dtype=float) if grid is None else np.asarray(grid, dtype=float)
    if g.shape != v.shape or not np.all(np.diff(g) > 0):
        raise ValueError("grid must be strictly increasing and match the values")

    up = np.diff(v) > plateau_tol
    intervals = []
    i = 0
    while i < up.size:
        if up[i]:
            j = i
            while j + 1 < up.size and up[j + 1]:
                j += 1
            if v[j + 1] - v[i] > min_rise:
                intervals.append((i, j + 1))
            i = j + 1
        else:
            i += 1
    total = float(sum(v[e] - v[s] for s, e in intervals))
    return TrajectoryAnalysis(g, v, intervals, total)


def _vertex(g, v, i):
    """Extremum value of the parabola through samples i-1, i, i+1, or None."""
    x0, x1, x2 = g[i - 1], g[i], g[i + 1]
    y0, y1, y2 = v[i - 1], v[i], v[i + 1]
    d1 = (y1 - y0) / (x1 - x0)
    d2 = (y2 - y1) / (x2 - x1)
    curv = (d2 - d1) / (x2 - x0)
    if curv == 0:
        return None
    xv = 0.5 * (x0 + x1) - d1 / (2 * curv)
    if not x0 < xv < x2:
        return None
    return y1 + d1 * (xv - x1) + curv * (xv - x0) * (xv - x1)


def refined_rises(analysis: TrajectoryAnalysis, lower: float = 0.0, upper: float = 1.0) -> list[float]:
    """Rise of each interval with interior extrema refined by parabolic interpolation.

    Refined minima never exceed the sampled value and refined maxima never
    fall below it; both stay inside [lower, upper].
    """
    g, v = analysis.grid, analysis.values
    out = []
    for s, e in analysis.intervals:
        lo, hi = v[s], v[e]
        if 0 < s:
            y = _vertex(g, v, s)
            if y is not None:
                lo = max(min(lo, y), lower)
        if e < v.size - 1:
            y = _vertex(g, v, e)
            if y is not None:
                hi = min(max(hi, y), upper)
        out.append(float(hi - lo))
    return out


@dataclass(frozen=True)
class PairParameterization:
    first: BlochVector
    second: BlochVector

    @property
    def a(self) -> float:
        """Population difference rho1_HH - rho2_HH."""
        return 0.5 * (self.first.z - self.second.z)

    @property
    def b(self) -> complex:
        """Coherence difference rho1_HV - rho2_HV."""
        return 0.5 * complex(self.first.x - self.second.x, -(self.first.y - self.second.y))

    @classmethod
    def equatorial(cls) -> "PairParameterization":
        return cls(BlochVector(1.0, 0.0, 0.0), BlochVector(-1.0, 0.0, 0.0))

    def to_dict(self) -> dict:
        return {"first": [self.first.x, self.first.y, self.first.z],
                "second": [self.second.x, self.second.y, self.second.z]}


@dataclass(frozen=True)
class NonMarkovianityResult:
    value: float
    method: str
    intervals: list[tuple[float, float]]
    optimal_pair: PairParameterization
    single_interval_value: float
    rises: list[float] = field(default_factory=list)
    converged: bool = True

    def __post_init__(self):
        if self.value < 0:
            raise ValueError("measure must be non-negative")
        if (self.value == 0) != (not self.intervals):
            raise ValueError("measure is zero exactly when there are no growth intervals")

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "method": self.method,
            "single_interval_value": self.single_interval_value,
            "intervals": [list(iv) for iv in self.intervals],
            "rises": list(self.rises),
            "optimal_pair": self.optimal_pair.to_dict(),
            "converged": self.converged,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _measure_from_series(series, x, method, pair, refine, min_rise, converged=True):
    analysis = analyze_trajectory(series, x, min_rise=min_rise)
    rises = refined_rises(analysis) if refine else analysis.rises
    value = float(sum(rises))
    intervals = [(float(x[s]), float(x[e])) for s, e in analysis.intervals]
    return NonMarkovianityResult(value, method, intervals, pair,
                                 rises[0] if rises else 0.0, rises, converged)


def blp_analytic(traj: DecoherenceTrajectory, refine: bool = True,
                 min_rise: float = 0.0) -> NonMarkovianityResult:
    """Measure from |kappa(t)|, the trace distance of the optimal equatorial pair."""
    return _measure_from_series(traj.modulus, traj.x, "analytic", PairParameterization.equatorial(),
                                refine, min_rise)


def rhp_concurrence_measure(traj: DecoherenceTrajectory, refine: bool = True,
                            min_rise: float = 0.0) -> NonMarkovianityResult:
    """Measure from the concurrence of (Phi_t x I) applied to a Bell state."""
    states = _ancilla_map_array(traj.kappa, bell_state().matrix)
    c = concurrence_array(states)
    return _measure_from_series(c, traj.x, "concurrence", PairParameterization.equatorial(),
                                refine, min_rise)


@dataclass(frozen=True)
class PairSearch:
    """Settings for the initial-pair optimizer.

    `n_coarse` points per Bloch sphere form the coarse lattice (all ordered
    pairs are scored); the best `n_starts` seed Nelder-Mead refinements.
    With `coherences=False` both vectors are confined to the z axis.
    """

    n_coarse: int = 24
    n_starts: int = 4
    seed: int = 0
    xatol: float = 1e-9
    fatol: float = 1e-13
    maxiter: int = 4000
    coherences: bool = True

    def __post_init__(self):
        if self.n_coarse < 2 or self.n_starts < 1 or self.maxiter < 1:
            raise ConfigError("search budget must be positive")


def _fibonacci_angles(n: int, rng: np.random.Generator) -> np.ndarray:
    k = np.arange(n) + 0.5
    polar = np.arccos(1 - 2 * k / n)
    azimuth = (np.pi * (1 + 5**0.5) * k + rng.uniform(0, 2 * np.pi)) % (2 * np.pi)
    return np.stack([polar, azimuth], axis=-1)


def _vectors(angles: np.ndarray, coherences: bool) -> np.ndarray:
    polar, azimuth = angles[..., 0], angles[..., 1]
    if not coherences:
        z = np.cos(polar)
        return np.stack([np.zeros_like(z), np.zeros_like(z), z], axis=-1)
    return np.stack([np.sin(polar) * np.cos(azimuth), np.sin(polar) * np.sin(azimuth),
                     np.cos(polar)], axis=-1)


def _pair_distances(r1: np.ndarray, r2: np.ndarray, factors: np.ndarray) -> np.ndarray:
    """Trace distance of mapped pairs: (P, 3) Bloch vectors against (T, 2, 2) map factors."""
    diff = bloch_matrix(r1) - bloch_matrix(r2)
    mapped = diff[:, None, :, :] * factors[None, :, :, :]
    return trace_distance_array(mapped, np.zeros_like(mapped))


def _total_rise(d: np.ndarray, x: np.ndarray, refine: bool) -> float:
    analysis = analyze_trajectory(d, x)
    return float(sum(refined_rises(analysis) if refine else analysis.rises))


def blp_optimized(traj: DecoherenceTrajectory, search: PairSearch = PairSearch(),
                  refine: bool = True) -> NonMarkovianityResult:
    """Maximize the total trace-distance rise over pairs of pure initial states.

    Scores every ordered pair on a randomized Fibonacci lattice, then polishes
    the best candidates with Nelder-Mead over the four sphere angles. Trace
    distances come from the explicit 2x2 matrices, not the pair formula.
    """
    x = traj.x
    factors = dephasing_factors(traj.kappa)
    rng = np.random.default_rng(search.seed)
    lattice = _fibonacci_angles(search.n_coarse, rng)
    i1, i2 = np.meshgrid(np.arange(search.n_coarse), np.arange(search.n_coarse), indexing="ij")
    mask = i1 != i2
    a1, a2 = lattice[i1[mask]], lattice[i2[mask]]
    d = _pair_distances(_vectors(a1, search.coherences), _vectors(a2, search.coherences), factors)
    scores = np.array([_total_rise(row, x, refine) for row in d])
    order = np.argsort(-scores, kind="stable")[: search.n_starts]

    def objective(p):
        ang = p.reshape(2, 2)
        v = _vectors(ang, search.coherences)
        row = _pair_distances(v[:1], v[1:], factors)[0]
        return -_total_rise(row, x, refine)

    best_val, best_p, any_converged = -np.inf, None, False
    for idx in order:
        p0 = np.concatenate([a1[idx], a2[idx]])
        res = minimize(objective, p0, method="Nelder-Mead",
                       options={"xatol": search.xatol, "fatol": search.fatol,
                                "maxiter": search.maxiter, "maxfev": 4 * search.maxiter})
        any_converged |= bool(res.success)
        val = -res.fun
        if val < scores[idx]:
            val, res_x = scores[idx], p0
        else:
            res_x = res.x
        if val > best_val:
            best_val, best_p = val, res_x
    if not any_converged:
        raise ConvergenceError("no pair refinement converged within the search budget")

    v = _vectors(best_p.reshape(2, 2), search.coherences)
    pair = PairParameterization(*(BlochVector(*map(float, r)) for r in v))
    series = _pair_distances(v[:1], v[1:], factors)[0]
    return _measure_from_series(series, x, "optimized", pair, refine, 0.0, any_converged)


def default_measure_grid(m: GaussianMixtureSpectrum, cfg: OpenSystemConfig,
                         periods: float = 1.5, samples_per_period: int = 100) -> TimeGrid:
    """Revival grid at the mixture's peak separation; a pure Gaussian gets a width-based span."""
    active = [c for c, w in zip(m.centers, m.weights) if w > 0]
    spread = max(active) - min(active)
    if spread <= 0:
        # pretend beat frequency 2 sigma: covers |kappa| down to exp(-2 pi^2 periods^2)
        spread = 2.0 * m.width
    return revival_grid(spread, cfg, periods, samples_per_period)


@dataclass(frozen=True, eq=False)
class TransitionScan:
    controls: np.ndarray
    values: np.ndarray
    transitions: list[tuple[float, float, str]]
    failed: list[int] = field(default_factory=list)

    def to_csv_text(self) -> str:
        lines = ["control_value,N"]
        lines += [f"{c:.17g},{v:.17g}" for c, v in zip(self.controls, self.values)]
        return "\n".join(lines) + "\n"


def find_transitions(controls, values, floor: float = TRANSITION_FLOOR) -> list[tuple[float, float, str]]:
    """Brackets (c_i, c_i+1, direction) where N crosses the floor."""
    out = []
    prev = None
    for i, v in enumerate(values):
        if not np.isfinite(v):
            continue
        state = v > floor
        if prev is not None and state != prev[1]:
            kind = "to_non_markovian" if state else "to_markovian"
            out.append((float(controls[prev[0]]), float(controls[i]), kind))
        prev = (i, state)
    return out


def mixture_for_tilt(cavity: CavityConfig, tilt_deg: float) -> GaussianMixtureSpectrum:
    return fit_two_gaussians(cavity_spectrum(cavity.with_tilt(tilt_deg)))


def markovian_transition_scan(controls, spectra=None, cavity: CavityConfig | None = None,
                              cfg: OpenSystemConfig = OpenSystemConfig(),
                              periods: float = 1.5, samples_per_period: int = 100) -> TransitionScan:
    """N per control value, with brackets where the dynamics change regime.

    Pass either `spectra` (one mixture per control value) or `cavity`, in
    which case the controls are tilt angles in degrees and each spectrum is
    the two-Gaussian fit of the cavity output. Points whose spectrum cannot
    be built or fitted are recorded as NaN and listed in `failed`.
    """
    controls = np.asarray(controls, dtype=float)
    if (spectra is None) == (cavity is None):
        raise ValueError("give exactly one of spectra or cavity")
    if spectra is not None and len(spectra) != controls.size:
        raise ValueError("need one spectrum per control value")
    values = np.full(controls.size, np.nan)
    failed = []
    for i, c in enumerate(controls):
        try:
            m = spectra[i] if spectra is not None else mixture_for_tilt(cavity, c)
            grid = default_measure_grid(m, cfg, periods, samples_per_period)
            values[i] = blp_analytic(kappa_closed_form(m, cfg, grid)).value
        except (FitError, AliasingError):
            failed.append(i)
    return TransitionScan(controls, values, find_transitions(controls, values), failed)
