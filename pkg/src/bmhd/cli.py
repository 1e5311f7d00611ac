"""Configuration-driven experiment runner.

Subcommands: linear-decay, simulate, decay-report, harness, symbol-sweep,
duhamel-check, plot.  Every run is reproducible from its TOML config and
seed: outputs land in the configured directory together with a manifest
listing each artifact and its content hash.  Exit codes: 0 pass, 2
acceptance-gate failure, 3 configuration error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from .besov import DyadicLadder
from .decay import (
    DecayTrace,
    d_p_functional,
    e_p_functional,
    fit_rate,
    predicted_rates,
    s_zero,
    smallness_report,
)
from .errors import BlowUpError, ConfigError, VacuumProximityError, WindowError
from .harness import ALL_SUITES, run_suite
from .semigroup import LinearParams, linear_decay_curve, standard_sweep
from .solver import (
    FluidLaws,
    SolverConfig,
    Trajectory,
    duhamel_residual,
    high_freq_residuals,
    integrate,
    random_perturbation,
)
from .spectral import Grid
from .svgplot import line_chart

KINDS = ("linear-decay", "simulate", "decay-report", "harness", "symbol-sweep",
         "duhamel-check")

EXIT_OK = 0
EXIT_GATE = 2
EXIT_CONFIG = 3
EXIT_NUMERIC = 4


@dataclass
class ExperimentConfig:
    kind: str
    params: dict = field(default_factory=dict)
    output_dir: str = "out"
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}, "
                              f"expected one of {KINDS}")
        for key, value in self.params.items():
            if key.endswith(("_path", "_file")) or key == "trajectory":
                if not Path(value).exists():
                    raise ConfigError(f"params.{key}: no such file {value!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(data: dict) -> "ExperimentConfig":
        exp = dict(data.get("experiment", {}))
        kind = exp.pop("kind", data.get("kind"))
        if kind is None:
            raise ConfigError("config is missing experiment.kind")
        return ExperimentConfig(
            kind=kind,
            params=dict(data.get("params", {})),
            output_dir=exp.pop("output_dir", data.get("output_dir", "out")),
            seed=int(exp.pop("seed", data.get("seed", 0))),
        )


def load_config(path) -> ExperimentConfig:
    with open(path, "rb") as fh:
        data = tomllib.load(fh)
    cfg = ExperimentConfig.from_dict(data)
    # round-trip guard: serialization must preserve the config
    if ExperimentConfig.from_dict(
        {"experiment": {"kind": cfg.kind, "seed": cfg.seed,
                        "output_dir": cfg.output_dir},
         "params": cfg.params}
    ).to_dict() != cfg.to_dict():
        raise ConfigError("config does not round-trip through serialization")
    return cfg


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_json(path, data):
    Path(path).write_text(json.dumps(data, sort_keys=True, indent=1,
                                     default=float) + "\n")


def _finish(outdir: Path, config: ExperimentConfig, extra=None) -> dict:
    files = {}
    for p in sorted(outdir.rglob("*")):
        if p.is_file() and p.name != "manifest.json":
            files[str(p.relative_to(outdir))] = _sha256(p)
    manifest = {"kind": config.kind, "seed": config.seed,
                "config": config.to_dict(), "files": files}
    if extra:
        manifest.update(extra)
    _write_json(outdir / "manifest.json", manifest)
    return manifest


# ---------------------------------------------------------------------------
# runners
# ---------------------------------------------------------------------------


def _run_linear_decay(config: ExperimentConfig, outdir: Path):
    p = config.params
    d = int(p.get("d", 3))
    p_target = float(p.get("p", 2.0))
    s_values = [float(s) for s in p.get("s_values", [0.0])]
    t_lo, t_hi = float(p.get("t_lo", 1e2)), float(p.get("t_hi", 1e4))
    n_times = int(p.get("n_times", 10))
    tol = float(p.get("tolerance", 0.05))
    params = LinearParams.for_dim(d, mu_inf=float(p.get("mu_inf", 0.5)),
                                  background=bool(p.get("background", True)))
    ladder = DyadicLadder.continuous(k_min=int(p.get("k_min", -24)),
                                     k_max=int(p.get("k_max", 6)),
                                     k0=int(p.get("k0", 4)))
    width = float(p.get("profile_width", 1.0))
    profile = lambda rho: np.exp(-((rho / width) ** 2)).astype(complex)
    t_grid = np.geomspace(t_lo, t_hi, n_times)
    trace = linear_decay_curve(
        profile, s_values, p_target, t_grid, params, d, ladder=ladder,
        n_radial=int(p.get("n_radial", 128)),
        n_theta=int(p.get("n_theta", 12)),
        n_phi=int(p.get("n_phi", 8)),
    )
    trace.meta["anchor"] = "low-frequency semigroup decay <t>^{-(s0+s)/2}"
    trace.to_csv(outdir / "trace.csv")
    fits = {}
    failed = False
    for s in s_values:
        name = f"low_besov_s{s:g}"
        fit = fit_rate(trace, name, (t_lo, t_hi))
        predicted = -(s_zero(p_target, d) + s) / 2.0
        dev = abs(fit.exponent - predicted) / abs(predicted)
        ok = dev <= tol and fit.r_squared > 0.9
        failed |= not ok
        fits[name] = {
            "s": s,
            "fitted_exponent": fit.exponent,
            "predicted_exponent": predicted,
            "relative_deviation": dev,
            "r_squared": fit.r_squared,
            "window": list(fit.window),
            "pass": ok,
        }
    _write_json(outdir / "fits.json", {
        "anchor": "decay exponent law -(s0+s)/2 for the low-frequency norm",
        "fits": fits,
    })
    return (EXIT_GATE if failed else EXIT_OK), {"fits": fits}


def _laws_from_params(p) -> FluidLaws:
    return FluidLaws.gamma_law(
        mu_inf=float(p.get("mu_inf", 0.5)),
        gamma=float(p.get("gamma", 1.4)),
        mu_slope=float(p.get("mu_slope", 0.3)),
        lambda_slope=float(p.get("lambda_slope", 0.1)),
    )


def _run_simulate(config: ExperimentConfig, outdir: Path):
    p = config.params
    grid = Grid(int(p.get("d", 2)), int(p.get("n", 128)),
                float(p.get("length", 2 * math.pi * 64)))
    laws = _laws_from_params(p)
    params = laws.linear_params(grid.dim, background=bool(p.get("background", True)))
    solver_cfg = SolverConfig(
        dt=float(p.get("dt", 1e-3)),
        t_end=float(p.get("t_end", 1.0)),
        snapshot_stride=int(p.get("snapshot_stride", 10)),
        dense_window=p.get("dense_window"),
        late_stride=p.get("late_stride"),
        nonlinear=bool(p.get("nonlinear", True)),
    )
    state0 = random_perturbation(grid, config.seed,
                                 amplitude=float(p.get("amplitude", 1e-3)))
    traj = integrate(state0, laws, params, solver_cfg)
    traj.save(outdir / "trajectory")
    summary = {
        "steps": int(round(solver_cfg.t_end / solver_cfg.dt)),
        "snapshots": len(traj.times),
        "max_div_h_drift": max(traj.monitors["div_h_drift"]),
        "max_alias_fraction": max(traj.monitors["alias_fraction"]),
        "laws": laws.label,
    }
    _write_json(outdir / "run.json", summary)
    return EXIT_OK, {"summary": summary}


def _run_decay_report(config: ExperimentConfig, outdir: Path):
    p = config.params
    traj = Trajectory.load(p["trajectory"])
    p_target = float(p.get("p", 2.0))
    eps = float(p.get("eps", 0.05))
    ladder = DyadicLadder.for_grid(traj.grid, k0=p.get("k0"))
    ep_total, ep_parts = e_p_functional(traj.times, traj.states, p_target, ladder)
    dp_total, dp_parts = d_p_functional(traj.times, traj.states, p_target, ladder,
                                        eps=eps)
    small = smallness_report(traj.states[0], p_target, ladder)
    report = {
        "existence_functional": {"total": ep_total, "parts": ep_parts,
                                 "anchor": "six-summand critical-norm functional"},
        "decay_functional": {"total": dp_total, "parts": dp_parts,
                             "anchor": "time-weighted sup functional"},
        "initial_data": small,
        "ratio_to_initial": ep_total / small["existence_size"]
        if small["existence_size"] > 0 else None,
    }
    _write_json(outdir / "ep_dp.json", report)
    # instantaneous norm series for plotting
    from .besov import BesovIndex
    from .decay import TrajectoryNorms

    tn = TrajectoryNorms(traj.times, traj.states, ladder)
    d = traj.grid.dim
    series = {}
    lo = BesovIndex(d / 2 - 1, 2, 1)
    series["low_crit_norm"] = sum(
        tn.besov_series(g, lo, "low") for g in ("a", "u", "H")
    ).tolist()
    hi = BesovIndex(d / p_target - 1, p_target, 1)
    series["high_crit_norm"] = sum(
        tn.besov_series(g, hi, "high") for g in ("u", "H")
    ).tolist()
    trace = DecayTrace(times=list(traj.times), values=series,
                       meta={"length": traj.grid.length, "p": p_target,
                             "d": traj.grid.dim})
    trace.to_csv(outdir / "norms.csv")
    finite = all(np.isfinite(v) for v in
                 [ep_total, dp_total] + list(ep_parts.values())
                 if isinstance(v, float))
    return (EXIT_OK if finite else EXIT_NUMERIC), {"ep": ep_total, "dp": dp_total}


def _run_harness(config: ExperimentConfig, outdir: Path):
    p = config.params
    suites = p.get("suites", "all")
    if suites == "all":
        suites = list(ALL_SUITES)
    elif isinstance(suites, str):
        suites = [suites]
    stability = bool(p.get("stability", False))
    n_samples = p.get("n_samples")
    combined = {}
    failed = False
    for name in suites:
        rep = run_suite(name, config.seed, stability=stability,
                        n_samples=None if n_samples is None else int(n_samples))
        combined[name] = rep
        _write_json(outdir / f"suite_{name}.json", rep)
        for entry in rep.get("entries", {}).values():
            if isinstance(entry, dict) and entry.get("verdict") == "INCONCLUSIVE":
                failed = True
    _write_json(outdir / "harness.json", combined)
    return (EXIT_GATE if failed else EXIT_OK), {"suites": sorted(combined)}


def _run_symbol_sweep(config: ExperimentConfig, outdir: Path):
    p = config.params
    d = int(p.get("d", 3))
    params = LinearParams.for_dim(d, mu_inf=float(p.get("mu_inf", 0.5)),
                                  background=bool(p.get("background", True)))
    sweep = standard_sweep(
        params,
        n_directions=int(p.get("n_directions", 64)),
        n_magnitudes=int(p.get("n_magnitudes", 60)),
        mag_lo=float(p.get("mag_lo", 1e-3)),
        mag_hi=float(p.get("mag_hi", 1e3)),
    )
    sweep.write_csv(outdir / "sweep.csv")
    worst = sweep.worst_margin
    summary = {
        "anchor": "spectral dissipativity margin Re lambda / eta(xi)",
        "worst_margin": worst,
        "dissipative": bool(worst < 0),
        "margin_constant": -worst,
        "n_samples": int(sweep.margins.size),
    }
    _write_json(outdir / "sweep.json", summary)
    return (EXIT_OK if worst < 0 else EXIT_GATE), {"worst_margin": worst}


def _run_duhamel_check(config: ExperimentConfig, outdir: Path):
    p = config.params
    grid = Grid(int(p.get("d", 2)), int(p.get("n", 64)),
                float(p.get("length", 2 * math.pi * 32)))
    laws = _laws_from_params(p)
    params = laws.linear_params(grid.dim)
    cfg = SolverConfig(
        dt=float(p.get("dt", 1e-3)),
        t_end=float(p.get("t_end", 0.5)),
        snapshot_stride=int(p.get("snapshot_stride", 10)),
    )
    state0 = random_perturbation(grid, config.seed,
                                 amplitude=float(p.get("amplitude", 1e-3)))
    traj = integrate(state0, laws, params, cfg)
    residual = duhamel_residual(traj, laws)
    residuals = high_freq_residuals(traj, laws, stride=1)
    threshold = float(p.get("threshold", 1e-5))
    report = {
        "anchor": "integral-formula reconstruction of the nonlinear flow",
        "duhamel_residual": residual,
        "threshold": threshold,
        "pass": bool(residual < threshold),
        "reformulation_residuals": {
            key: max(residuals[key]) for key in ("a_eq", "w_eq", "pu_eq")
        },
    }
    _write_json(outdir / "duhamel.json", report)
    return (EXIT_OK if report["pass"] else EXIT_GATE), report


_RUNNERS = {
    "linear-decay": _run_linear_decay,
    "simulate": _run_simulate,
    "decay-report": _run_decay_report,
    "harness": _run_harness,
    "symbol-sweep": _run_symbol_sweep,
    "duhamel-check": _run_duhamel_check,
}


def run(config: ExperimentConfig):
    """Execute one experiment; returns (exit_code, manifest)."""
    outdir = Path(config.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    code, extra = _RUNNERS[config.kind](config, outdir)
    manifest = _finish(outdir, config, {"result": extra, "exit_code": code})
    return code, manifest


# ---------------------------------------------------------------------------
# plotting
# ---------------------------------------------------------------------------


def plot(csv_path, out_path, fits_path=None):
    """Render a trace or sweep CSV as a deterministic SVG."""
    csv_path = Path(csv_path)
    with open(csv_path) as fh:
        first = fh.readline()
    if first.startswith("# meta:") or first.startswith("t,"):
        trace = DecayTrace.from_csv(csv_path)
        if not trace.times:
            raise ValueError("empty trace: nothing to plot")
        bracket = np.sqrt(1.0 + np.asarray(trace.times) ** 2)
        series = {name: (bracket.tolist(), list(vals))
                  for name, vals in trace.values.items()}
        ref = None
        notes = []
        if fits_path:
            fits = json.loads(Path(fits_path).read_text())["fits"]
            name, info = sorted(fits.items())[0]
            x0 = math.log10(bracket[0])
            y0 = math.log10(max(trace.values[name][0], 1e-300))
            slope = info["fitted_exponent"]
            ref = (slope, y0 - slope * x0,
                   f"reference slope {info['predicted_exponent']:.4g}")
            notes.append(f"fit {name}: {slope:.4f}")
        return line_chart(series, out_path, title=csv_path.stem,
                          xlabel="<t>", ylabel="norm", logx=True, logy=True,
                          ref_line=ref, annotations=notes)
    if first.startswith("magnitude,"):
        import csv as _csv

        with open(csv_path) as fh:
            rows = list(_csv.DictReader(fh))
        if not rows:
            raise ValueError("empty sweep: nothing to plot")
        mags = [float(r["magnitude"]) for r in rows]
        margins = [float(r["margin"]) for r in rows]
        return line_chart(
            {"margin": (mags, margins)}, out_path, title=csv_path.stem,
            xlabel="|xi|", ylabel="max Re(lambda)/eta", logx=True, logy=False,
            hlines=(0.0,),
        )
    raise ValueError(f"unrecognized CSV header at line 1: {first.strip()!r}")


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="bmhd",
        description="spectral decay laboratory for compressible viscous MHD",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for kind in KINDS:
        sp = sub.add_parser(kind, help=f"run a {kind} experiment")
        sp.add_argument("--config", required=False, help="TOML config file")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--output-dir", default=None)
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a single params entry")
    pp = sub.add_parser("plot", help="render a CSV artifact as SVG")
    pp.add_argument("csv")
    pp.add_argument("-o", "--output", required=True)
    pp.add_argument("--fits", default=None, help="fit report for the reference line")

    args = parser.parse_args(argv)
    try:
        if args.command == "plot":
            plot(args.csv, args.output, args.fits)
            return EXIT_OK
        if args.config:
            config = load_config(args.config)
            if config.kind != args.command:
                raise ConfigError(
                    f"config kind {config.kind!r} does not match subcommand "
                    f"{args.command!r}"
                )
        else:
            config = ExperimentConfig(kind=args.command)
        if args.seed is not None:
            config.seed = args.seed
        if args.output_dir is not None:
            config.output_dir = args.output_dir
        for item in args.set:
            if "=" not in item:
                raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
            key, value = item.split("=", 1)
            try:
                config.params[key] = json.loads(value)
            except json.JSONDecodeError:
                config.params[key] = value
        code, _ = run(config)
        return code
    except (BlowUpError, VacuumProximityError, ArithmeticError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
