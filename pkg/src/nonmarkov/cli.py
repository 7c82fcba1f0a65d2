"""Command-line front end.

    nonmarkov spectrum|kappa|measure|sweep|tomography [--config run.json]
              [--out-dir DIR] [--seed N] [--preset fig3|fig4] [--exact|--tomographic]

Every run reads one JSON document (validated against CONFIG_SCHEMA, unknown
keys rejected), computes everything in memory and only then writes its
files, each through a temporary file renamed into place.

Exit codes: 0 success, 2 configuration error, 3 numerical or fit failure,
4 internal consistency violation.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from dataclasses import asdict
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .dephasing import OpenSystemConfig, TimeGrid, kappa_closed_form, kappa_quadrature, revival_grid
from .errors import AliasingError, ConfigError, ConvergenceError, FitError, InvalidStateError
from .lab import (
    SweepSpec,
    TomographyConfig,
    revival_path_grid,
    preset_states,
    reconstruct_state,
    run_sweep,
    simulate_counts,
)
from .measures import (
    PairSearch,
    blp_analytic,
    blp_optimized,
    default_measure_grid,
    markovian_transition_scan,
    rhp_concurrence_measure,
)
from .qstate import QubitState, TwoQubitState
from .spectrum import (
    CavityConfig,
    GaussianMixtureSpectrum,
    cavity_spectrum,
    fit_two_gaussians,
    relative_amplitude,
)

SCHEMA_VERSION = 1
EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_CONSISTENCY = 0, 2, 3, 4

# analytic vs concurrence: identical up to rounding; optimizer: may fall short, never exceed
EQUIVALENCE_TOL = 1e-10
OPTIMIZER_SHORTFALL_TOL = 1e-3
OPTIMIZER_EXCESS_TOL = 1e-9

# reference two-peak environment (angular frequencies)
DEFAULT_MIXTURE = {"amplitude_ratio": 1.0, "sigma": 1.8e12, "delta_omega": 1.6e13}
FIG3_AMPLITUDES = (0.0, 0.25, 0.5, 1.0)
FIG4_TILTS = (0.0, 12.0, 0.1)

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}


def _obj(props: dict, required=()) -> dict:
    return {"type": "object", "properties": props, "required": list(required),
            "additionalProperties": False}


_RANGE = _obj({"start": _NUM, "stop": _NUM, "num": {"type": "integer", "minimum": 0}},
              ("start", "stop", "num"))

CONFIG_SCHEMA = _obj({
    "schema_version": {"const": SCHEMA_VERSION},
    "seed": {"type": "integer", "minimum": 0},
    "open_system": _obj({"n_h": _POS, "n_v": _POS, "wavelength": _POS}),
    "mixture": {"oneOf": [
        _obj({"amplitude_ratio": {"type": "number", "minimum": 0}, "sigma": _POS,
              "delta_omega": _POS, "center": _POS, "unit": {"enum": ["rad/s", "Hz"]}},
             ("amplitude_ratio", "sigma", "delta_omega")),
        _obj({"centers": {"type": "array", "items": _NUM, "minItems": 1},
              "weights": {"type": "array", "items": _NUM, "minItems": 1},
              "width": _POS}, ("centers", "weights", "width")),
    ]},
    "cavity": _obj({
        "thickness": _POS, "reflectivity": _NUM, "refractive_index": _NUM, "tilt_deg": _NUM,
        "filter_wavelength": _POS, "filter_fwhm": _POS, "source_wavelength": _POS,
        "source_fwhm": {"type": ["number", "null"]}, "phase_offset": _NUM,
        "thickness_rms": _NUM, "filter_shape": {"enum": ["gaussian", "lorentzian"]},
    }),
    "grid": _obj({"periods": _POS, "samples_per_period": {"type": "integer", "minimum": 2}}),
    "kappa_method": {"enum": ["closed_form", "quadrature"]},
    "search": _obj({"n_coarse": {"type": "integer"}, "n_starts": {"type": "integer"},
                    "xatol": _POS, "fatol": _POS, "maxiter": {"type": "integer"},
                    "coherences": {"type": "boolean"}}),
    "tomography": _obj({"counts": {"type": "integer"}, "bootstrap": {"type": "integer"},
                        "noise": {"enum": ["multinomial", "poisson"]},
                        "mode": {"enum": ["exact", "tomographic"]}}),
    "sweep": _obj({
        "axis": {"enum": ["path_difference", "tilt"]},
        "arm": {"enum": ["trace_distance", "concurrence"]},
        "controls": {"oneOf": [{"type": "array", "items": _NUM}, _RANGE]},
    }),
    "state": {"oneOf": [
        {"enum": ["plus", "minus", "bell"]},
        {"type": "array", "items": _NUM, "minItems": 8, "maxItems": 32},
    ]},
}, ("schema_version",))


class _Fail(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


# configuration

def load_config(path: str | None) -> dict:
    if path is None:
        return {"schema_version": SCHEMA_VERSION}
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise _Fail(EXIT_CONFIG, f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise _Fail(EXIT_CONFIG, f"config is not valid JSON: {exc}") from exc
    return doc


def validate_config(doc) -> dict:
    try:
        jsonschema.validate(doc, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise _Fail(EXIT_CONFIG, f"config error at {where}: {exc.message}") from exc
    return doc


def _open_system(doc) -> OpenSystemConfig:
    return OpenSystemConfig(**doc.get("open_system", {}))


def _mixture(doc) -> GaussianMixtureSpectrum:
    spec = doc.get("mixture", DEFAULT_MIXTURE)
    if "centers" in spec:
        return GaussianMixtureSpectrum.from_dict(spec)
    return GaussianMixtureSpectrum.two_peak(spec["amplitude_ratio"], spec["sigma"],
                                            spec["delta_omega"], spec.get("center"),
                                            spec.get("unit", "rad/s"))


def _cavity(doc) -> CavityConfig:
    return CavityConfig(**doc.get("cavity", {}))


def _environment(doc) -> GaussianMixtureSpectrum:
    """The mixture, or the two-Gaussian fit of the cavity output when only a cavity is given."""
    if "cavity" in doc and "mixture" not in doc:
        return fit_two_gaussians(cavity_spectrum(_cavity(doc)))
    return _mixture(doc)


def _measure_grid(doc, m: GaussianMixtureSpectrum, cfg: OpenSystemConfig) -> TimeGrid:
    g = doc.get("grid", {})
    return default_measure_grid(m, cfg, g.get("periods", 1.5), g.get("samples_per_period", 100))


def _controls(spec) -> np.ndarray:
    if isinstance(spec, dict):
        return np.linspace(spec["start"], spec["stop"], spec["num"])
    return np.asarray(spec, dtype=float)


def _tomography(doc, seed: int) -> TomographyConfig:
    t = {k: v for k, v in doc.get("tomography", {}).items() if k != "mode"}
    return TomographyConfig(seed=seed, **t)


def _workers() -> int | None:
    raw = os.environ.get("NONMARKOV_THREADS")
    if raw is None:
        return None
    try:
        n = int(raw)
    except ValueError:
        raise _Fail(EXIT_CONFIG, f"NONMARKOV_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise _Fail(EXIT_CONFIG, "NONMARKOV_THREADS must be >= 1")
    return n


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def write_outputs(out_dir: Path, files: dict[str, str]) -> None:
    """Write every file to a temporary sibling first, then rename them all into place."""
    out_dir.mkdir(parents=True, exist_ok=True)
    staged = []
    try:
        for name, text in files.items():
            fd, tmp = tempfile.mkstemp(dir=out_dir, prefix=f".{name}.", suffix=".tmp")
            with os.fdopen(fd, "w", newline="") as fh:
                fh.write(text)
            staged.append((tmp, out_dir / name))
    except BaseException:
        for tmp, _ in staged:
            os.unlink(tmp)
        raise
    for tmp, final in staged:
        os.replace(tmp, final)


# subcommands; each returns (files, summary lines, exit code)

def cmd_spectrum(doc, args):
    if "cavity" in doc:
        sampled = cavity_spectrum(_cavity(doc))
    else:
        sampled = _mixture(doc).sample()
    fit = fit_two_gaussians(sampled)
    spread = max(fit.centers) - min(fit.centers)
    summary = {"amplitude_ratio": relative_amplitude(fit), "delta_omega": spread,
               "sigma": fit.width, "fit_residual": fit.fit_residual}
    files = {"spectrum.csv": sampled.to_csv_text(),
             "mixture.json": _dump({"mixture": fit.to_dict(), "summary": summary})}
    lines = [f"A = {summary['amplitude_ratio']:.6g}", f"delta_omega = {spread:.6g} rad/s",
             f"sigma = {fit.width:.6g} rad/s", f"fit residual = {fit.fit_residual:.3g}"]
    return files, lines, EXIT_OK


def cmd_kappa(doc, args):
    cfg = _open_system(doc)
    m = _environment(doc)
    g = doc.get("grid", {})
    spread = max(m.centers) - min(m.centers)
    grid = (revival_grid(spread, cfg, g.get("periods", 2.0), g.get("samples_per_period", 100))
            if spread > 0 else _measure_grid(doc, m, cfg))
    if doc.get("kappa_method", "closed_form") == "quadrature":
        sampled = cavity_spectrum(_cavity(doc)) if "cavity" in doc and "mixture" not in doc else m.sample()
        traj = kappa_quadrature(sampled, cfg, grid)
    else:
        traj = kappa_closed_form(m, cfg, grid)
    lines = [f"{len(grid)} points, |kappa| min {traj.modulus.min():.6g}"]
    if traj.quadrature_error is not None:
        lines.append(f"quadrature error estimate {traj.quadrature_error:.3g}")
    return {"kappa.csv": traj.to_csv_text()}, lines, EXIT_OK


def cmd_measure(doc, args):
    cfg = _open_system(doc)
    m = _environment(doc)
    traj = kappa_closed_form(m, cfg, _measure_grid(doc, m, cfg))
    search = PairSearch(seed=args.seed, **doc.get("search", {}))
    results = {
        "analytic": blp_analytic(traj),
        "optimized": blp_optimized(traj, search),
        "concurrence": rhp_concurrence_measure(traj),
    }
    n = {k: r.value for k, r in results.items()}
    disc = {
        "concurrence_minus_analytic": n["concurrence"] - n["analytic"],
        "optimized_minus_analytic": n["optimized"] - n["analytic"],
    }
    consistent = (abs(disc["concurrence_minus_analytic"]) <= EQUIVALENCE_TOL
                  and disc["optimized_minus_analytic"] <= OPTIMIZER_EXCESS_TOL
                  and disc["optimized_minus_analytic"] >= -OPTIMIZER_SHORTFALL_TOL)
    out = {
        "software": f"nonmarkov {__version__}",
        "parameters": {"mixture": m.to_dict(), "open_system": asdict(cfg),
                       "grid": {"x_max": float(traj.x[-1]), "points": len(traj.x)},
                       "search": asdict(search)},
        "results": {k: r.to_dict() for k, r in results.items()},
        "discrepancies": disc,
        "tolerances": {"equivalence": EQUIVALENCE_TOL, "optimizer_shortfall": OPTIMIZER_SHORTFALL_TOL,
                       "optimizer_excess": OPTIMIZER_EXCESS_TOL},
        "consistent": consistent,
    }
    lines = [f"N ({k}) = {v:.10g}" for k, v in n.items()]
    if not consistent:
        lines.append(f"methods disagree: {disc}")
    return {"measure.json": _dump(out)}, lines, EXIT_OK if consistent else EXIT_CONSISTENCY


def _mode(doc, args) -> str:
    if args.mode is not None:
        return args.mode
    return doc.get("tomography", {}).get("mode", "exact")


def _sweep_files(name: str, ds) -> dict[str, str]:
    return {f"{name}.csv": ds.to_csv_text(), f"{name}.json": ds.metadata_text()}


def cmd_sweep(doc, args):
    if args.preset == "fig3":
        return _preset_fig3(doc, args)
    if args.preset == "fig4":
        return _preset_fig4(doc, args)
    cfg = _open_system(doc)
    s = doc.get("sweep", {})
    axis = s.get("axis", "path_difference")
    if "controls" in s:
        controls = _controls(s["controls"])
    elif axis == "path_difference":
        controls = revival_path_grid(_environment(doc), cfg)
    else:
        raise ConfigError("a tilt sweep needs explicit controls")
    env = {}
    if axis == "tilt" or ("cavity" in doc and "mixture" not in doc):
        env["cavity"] = _cavity(doc)
    else:
        env["mixture"] = _mixture(doc)
    spec = SweepSpec(controls, axis=axis, arm=s.get("arm", "trace_distance"),
                     kappa_method=doc.get("kappa_method", "closed_form"), **env)
    tomo = _tomography(doc, args.seed) if _mode(doc, args) == "tomographic" else None
    ds = run_sweep(spec, tomo, cfg, workers=_workers())
    n_failed = int(ds.failed.sum())
    lines = [f"{controls.size} points, {n_failed} failed"]
    code = EXIT_NUMERIC if n_failed == controls.size else EXIT_OK
    return _sweep_files("sweep", ds), lines, code


def _preset_fig3(doc, args):
    """Both arms for four amplitude ratios at the configured sigma and delta_omega."""
    cfg = _open_system(doc)
    base = dict(DEFAULT_MIXTURE, **doc.get("mixture", {}))
    if "centers" in base:
        raise ConfigError("the fig3 preset needs a two-peak parameterized mixture")
    tomographic = _mode(doc, args) == "tomographic"
    files, lines = {}, []
    for a in FIG3_AMPLITUDES:
        m = GaussianMixtureSpectrum.two_peak(a, base["sigma"], base["delta_omega"],
                                             base.get("center"), base.get("unit", "rad/s"))
        controls = revival_path_grid(m, cfg)
        cols, meta = {}, {}
        for arm, tag in (("trace_distance", "D"), ("concurrence", "C")):
            tomo = _tomography(doc, args.seed) if tomographic else None
            ds = run_sweep(SweepSpec(controls, arm=arm, mixture=m), tomo, cfg, workers=_workers())
            cols[tag], cols[f"{tag}_stderr"] = ds.values, ds.stderr
            if tomographic:
                cols[f"{tag}_exact"] = ds.extras["exact"]
            meta[tag] = ds.metadata
        names = ["path_difference"] + list(cols)
        rows = [",".join(names)]
        rows += [",".join(f"{v:.17g}" for v in r) for r in zip(controls, *cols.values())]
        stem = f"fig3_A{a:g}"
        files[f"{stem}.csv"] = "\n".join(rows) + "\n"
        files[f"{stem}.json"] = _dump({"amplitude_ratio": a, "arms": meta})
        lines.append(f"A = {a:g}: max |D - C| = {np.max(np.abs(cols['D'] - cols['C'])):.3g}")
    return files, lines, EXIT_OK


def _preset_fig4(doc, args):
    """N against cavity tilt."""
    cfg = _open_system(doc)
    s = doc.get("sweep", {})
    if "controls" in s:
        controls = _controls(s["controls"])
    else:
        lo, hi, step = FIG4_TILTS
        controls = np.round(np.arange(lo, hi + step / 2, step), 10)
    if controls.size == 0:
        raise ConfigError("empty control grid")
    g = doc.get("grid", {})
    scan = markovian_transition_scan(controls, cavity=_cavity(doc), cfg=cfg,
                                     periods=g.get("periods", 1.5),
                                     samples_per_period=g.get("samples_per_period", 100))
    meta = {"software": f"nonmarkov {__version__}", "cavity": asdict(_cavity(doc)),
            "open_system": asdict(cfg), "failed": scan.failed,
            "transitions": [list(t) for t in scan.transitions]}
    lines = [f"{lo_:g} -> {hi_:g} deg: {kind}" for lo_, hi_, kind in scan.transitions]
    code = EXIT_NUMERIC if len(scan.failed) == controls.size else EXIT_OK
    return {"fig4.csv": scan.to_csv_text(), "fig4.json": _dump(meta)}, lines, code


def cmd_tomography(doc, args):
    state = doc.get("state", "bell")
    (plus, minus), bell = preset_states()
    if isinstance(state, str):
        rho = {"plus": plus, "minus": minus, "bell": bell}[state]
    elif len(state) == 8:
        rho = QubitState.from_record(state, atol=1e-9)
    elif len(state) == 32:
        rho = TwoQubitState.from_record(state, atol=1e-9)
    else:
        raise ConfigError("state record needs 8 or 32 numbers")
    tomo = _tomography(doc, args.seed)
    table = simulate_counts(rho, tomo)
    est = reconstruct_state(table)
    rows = ["setting," + ",".join(f"outcome{k}" for k in range(table.counts.shape[1]))]
    rows += [s + "," + ",".join(str(int(c)) for c in r) for s, r in zip(table.settings, table.counts)]
    out = {"true_state": rho.to_record(), "reconstructed_state": est.to_record(),
           "tomography": asdict(tomo)}
    return ({"counts.csv": "\n".join(rows) + "\n", "reconstruction.json": _dump(out)},
            [f"{len(table.settings)} settings reconstructed"], EXIT_OK)


COMMANDS = {
    "spectrum": cmd_spectrum,
    "kappa": cmd_kappa,
    "measure": cmd_measure,
    "sweep": cmd_sweep,
    "tomography": cmd_tomography,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nonmarkov", description="Photonic dephasing and non-Markovianity.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--out-dir", help="output directory (default $NONMARKOV_OUT_DIR or .)")
    p.add_argument("--seed", type=int, help="overrides the config seed")
    p.add_argument("--preset", choices=["fig3", "fig4"], help="sweep presets")
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--exact", dest="mode", action="store_const", const="exact")
    mode.add_argument("--tomographic", dest="mode", action="store_const", const="tomographic")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        doc = validate_config(load_config(args.config))
        if args.seed is not None and args.seed < 0:
            raise _Fail(EXIT_CONFIG, "seed must be >= 0")
        args.seed = args.seed if args.seed is not None else doc.get("seed", 0)
        if args.preset and args.command != "sweep":
            raise _Fail(EXIT_CONFIG, "--preset applies to the sweep command only")
        out_dir = Path(args.out_dir or os.environ.get("NONMARKOV_OUT_DIR") or ".")
        files, lines, code = COMMANDS[args.command](doc, args)
    except _Fail as exc:
        print(f"nonmarkov: {exc}", file=sys.stderr)
        return exc.code
    except (FitError, ConvergenceError, AliasingError) as exc:
        print(f"nonmarkov: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, InvalidStateError) as exc:
        print(f"nonmarkov: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if code in (EXIT_OK, EXIT_CONSISTENCY):
        # inconsistent measures are still written so the discrepancy can be inspected
        write_outputs(out_dir, files)
    for line in lines:
        print(line)
    return code


if __name__ == "__main__":
    sys.exit(main())
