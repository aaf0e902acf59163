"""``beable`` command line: build a scenario, sample it, write CSV/JSON artifacts.

Exit codes: 0 success, 1 failure (including a failed ``validate``), 2 bad
configuration or usage, 3 numerical breakdown.
"""

from __future__ import annotations

import argparse
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import io as bio
from .analysis import (binomial_displacement_test, drift_variance, equilibration_check,
                       ergodicity_decay)
from .dynamics import (QuantumSystem, RateKernel, RateMatrix, integrated_probabilities,
                       sample_ensemble)
from .dynamics.sampling import RATE_CAP
from .exceptions import BeableError, ConfigError, FitError, NumericalError
from .microstates import build_coarse_observable, decompose_pure
from .scenarios import (EPR_OUTCOMES, ScenarioSpec, make_epr, make_ergodic, make_measurement,
                        make_particle1d)

__all__ = ["run_command", "main", "build_scenario", "RunConfig"]

_SCENARIOS = {"particle", "measurement", "epr", "ergodic", "custom"}
_COMMAND_SCENARIO = {"particle": "particle", "measure": "measurement", "epr": "epr",
                     "ergodic": "ergodic", "simulate": "custom"}


class RunConfig:
    """Resolved run settings: config file values overridden by flags."""

    def __init__(self, scenario: str, params: dict, seed: int, trajectories: int, dt, t_final,
                 t0: float, initial_index, family, output, fmt: str, base_dir: Path, raw: dict,
                 stepping: str = "adaptive"):
        if scenario not in _SCENARIOS:
            raise ConfigError(f"unknown scenario {scenario!r}; expected one of {sorted(_SCENARIOS)}")
        if not isinstance(seed, int) or seed < 0:
            raise ConfigError("seed must be a non-negative integer")
        if not isinstance(trajectories, int) or trajectories < 1:
            raise ConfigError("trajectories must be a positive integer")
        if dt is not None and not dt > 0:
            raise ConfigError("dt must be positive")
        if fmt not in ("csv", "json"):
            raise ConfigError("format must be csv or json")
        if stepping not in ("adaptive", "fixed"):
            raise ConfigError("stepping must be adaptive or fixed")
        self.stepping = stepping
        self.scenario = scenario
        self.params = params
        self.seed = seed
        self.trajectories = trajectories
        self.dt = dt
        self.t_final = t_final
        self.t0 = t0
        self.initial_index = initial_index
        self.family = family
        self.output = output
        self.format = fmt
        self.base_dir = base_dir
        self.raw = raw


def _resolve(args, command: str) -> RunConfig:
    raw: dict = {}
    base = Path.cwd()
    if getattr(args, "config", None):
        raw = bio.load_config(args.config)
        base = Path(args.config).resolve().parent
    scenario = raw.get("scenario") or _COMMAND_SCENARIO.get(command)
    if scenario is None:
        raise ConfigError(f"'{command}' needs --config with a 'scenario' field")
    expected = _COMMAND_SCENARIO.get(command)
    if expected is not None and scenario != expected:
        raise ConfigError(f"config describes scenario {scenario!r}, but '{command}' runs {expected!r}")
    params = dict(raw.get("params") or {})
    for key, value in _param_flags(args, scenario).items():
        if isinstance(value, dict) and isinstance(params.get(key), dict):
            value = {**params[key], **value}
        params[key] = value

    def pick(flag, key, default=None):
        v = getattr(args, flag, None)
        return v if v is not None else raw.get(key, default)

    return RunConfig(
        scenario=scenario, params=params,
        seed=pick("seed", "seed", 0), trajectories=pick("trajectories", "trajectories", 10000),
        dt=pick("dt", "dt"), t_final=pick("t_final", "tFinal"), t0=float(raw.get("t0", 0.0)),
        initial_index=pick("initial_index", "initialIndex"), family=pick("family", "family"),
        output=pick("output", "output"), fmt=pick("format", "format", "csv"),
        base_dir=base, raw=raw, stepping=pick("stepping", "stepping", "adaptive"),
    )


def _param_flags(args, scenario: str) -> dict:
    out = {}
    if scenario == "epr":
        if args.theta is not None:
            out["theta"] = args.theta
        if args.pulse_duration is not None:
            out["pulse_duration"] = args.pulse_duration
    elif scenario == "measurement" and args.probabilities is not None:
        try:
            probs = [float(p) for p in args.probabilities.split(",")]
        except ValueError as exc:
            raise ConfigError("--probabilities takes comma-separated numbers") from exc
        if any(p < 0 for p in probs):
            raise ConfigError("probabilities must be non-negative")
        out["lambdas"] = [math.sqrt(p) for p in probs]
    elif scenario == "ergodic":
        if args.N is not None:
            out["N"] = args.N
        if args.delta_e is not None:
            out["delta_e"] = args.delta_e
    elif scenario == "particle":
        for flag in ("grid_points", "cells", "mass"):
            if getattr(args, flag) is not None:
                out[flag] = getattr(args, flag)
        if args.momentum is not None:
            out.setdefault("packet", {})["momentum"] = args.momentum
    elif scenario == "custom":
        for flag in ("hamiltonian", "state", "family_file"):
            if getattr(args, flag) is not None:
                out[flag.replace("_file", "")] = getattr(args, flag)
    return out


def _amplitudes(raw) -> np.ndarray:
    vals = []
    for x in raw:
        if isinstance(x, (list, tuple)):
            if len(x) != 2:
                raise ConfigError("complex amplitudes are given as [re, im]")
            vals.append(complex(float(x[0]), float(x[1])))
        else:
            vals.append(complex(float(x)))
    return np.asarray(vals)


def _inline_or_file(value, base: Path):
    if isinstance(value, str):
        path = Path(value)
        return bio.load_json(path if path.is_absolute() else base / path)
    return value


def build_scenario(cfg: RunConfig) -> ScenarioSpec:
    """Instantiate the scenario named in ``cfg`` from its parameter subtree."""
    p = dict(cfg.params)
    try:
        if cfg.scenario == "particle":
            if "domain" in p:
                p["domain"] = tuple(p["domain"])
            if p.get("potential") is not None:
                p["potential"] = np.asarray(p["potential"], dtype=float)
            if "t_final" not in p and cfg.t_final is not None:
                p["t_final"] = float(cfg.t_final)
            return make_particle1d(**p)
        if cfg.scenario == "measurement":
            if "lambdas" not in p:
                raise ConfigError("measurement needs 'lambdas' (or --probabilities)")
            p["lambdas"] = _amplitudes(p["lambdas"])
            if "domain" in p:
                p["domain"] = tuple(p["domain"])
            return make_measurement(**p)
        if cfg.scenario == "epr":
            if "theta" not in p:
                raise ConfigError("epr needs 'theta' (or --theta)")
            return make_epr(**p)
        if cfg.scenario == "ergodic":
            p.setdefault("N", 40)
            p.setdefault("seed", cfg.seed)
            return make_ergodic(**p)
    except TypeError as exc:
        raise ConfigError(f"bad parameters for {cfg.scenario}: {exc}") from exc
    return _custom(p, cfg)


def _custom(p: dict, cfg: RunConfig) -> ScenarioSpec:
    for key in ("hamiltonian", "state", "family"):
        if key not in p:
            raise ConfigError(f"custom scenario needs '{key}'")
    H = bio.matrix_from_json(_inline_or_file(p["hamiltonian"], cfg.base_dir))
    psi = bio.state_from_json(_inline_or_file(p["state"], cfg.base_dir))
    fam = bio.family_from_json(_inline_or_file(p["family"], cfg.base_dir))
    if not (H.shape[0] == psi.size == fam.dim):
        raise ConfigError("hamiltonian, state and family dimensions disagree")
    hbar = float(p.get("hbar", 1.0))
    t_final = cfg.t_final if cfg.t_final is not None else p.get("t_final", 1.0)
    return ScenarioSpec(
        name="custom", schedule=((cfg.t0, math.inf, H),), initial_state=psi,
        families={"custom": fam},
        run_defaults={"dt": float(t_final) / 100, "t1": float(t_final), "trajectories": 10000},
        hbar=hbar,
    )


def _family(spec: ScenarioSpec, name):
    if name is None:
        name = next(iter(spec.families)) if spec.name != "epr" else "AB"
    if name not in spec.families:
        raise ConfigError(f"family {name!r} not available; choose from {sorted(spec.families)}")
    return name, spec.families[name]


def _run_window(cfg: RunConfig, spec: ScenarioSpec):
    t0 = cfg.t0
    t1 = float(cfg.t_final) if cfg.t_final is not None else spec.run_defaults["t1"]
    dt = float(cfg.dt) if cfg.dt is not None else spec.run_defaults["dt"]
    if not t1 > t0:
        raise ConfigError(f"tFinal {t1} must exceed t0 {t0}")
    init = cfg.initial_index if cfg.initial_index is not None else spec.run_defaults.get("initial_index")
    return t0, t1, dt, init


def _emit(cfg: RunConfig, files: dict) -> None:
    """Write every artifact only after all of them have been computed."""
    if cfg.output is None:
        return
    out = Path(cfg.output)
    for name, payload in files.items():
        bio.atomic_write(out / name, payload)


def _ensemble_files(cfg: RunConfig, ens, summary: dict) -> dict:
    if cfg.format == "csv":
        files = {"events.csv": bio.events_csv(ens), "occupancy.csv": bio.occupancy_csv(ens)}
    else:
        files = {"trajectories.json": bio.dumps(bio.ensemble_json(ens))}
    files["summary.json"] = bio.dumps(summary)
    return files


def _base_summary(cfg: RunConfig, spec: ScenarioSpec, fam_name: str, ens) -> dict:
    final = np.bincount(ens.final_indices, minlength=ens.n_cells) / ens.n_trajectories
    return {
        "scenario": spec.name, "family": fam_name, "seed": cfg.seed,
        "trajectories": ens.n_trajectories, "t0": ens.t0, "tFinal": ens.t1, "dt": ens.dt,
        "substeps": ens.steps, "jumps": int((~ens.event_is_repair).sum()),
        "repairs": int(ens.event_is_repair.sum()),
        "finalFrequencies": final.tolist(),
        "finalWeights": ens.theory_weights[-1].tolist(),
    }


def _sample(cfg: RunConfig, spec: ScenarioSpec):
    fam_name, fam = _family(spec, cfg.family)
    t0, t1, dt, init = _run_window(cfg, spec)
    cap = None if cfg.stepping == "fixed" else RATE_CAP
    ens = sample_ensemble(spec.system(), fam, t0, t1, dt, cfg.seed, cfg.trajectories,
                          initial_index=init, max_jump_prob=cap)
    return fam_name, fam, ens


def _cmd_sampling(cfg: RunConfig) -> int:
    spec = build_scenario(cfg)
    started = time.perf_counter()
    fam_name, fam, ens = _sample(cfg, spec)
    summary = _base_summary(cfg, spec, fam_name, ens)
    lines = []
    final = np.asarray(summary["finalFrequencies"])
    n = ens.n_trajectories
    if spec.name == "epr" and fam_name == "AB":
        table = {}
        for lab in EPR_OUTCOMES:
            cell = spec.meta["outcome_cells"][lab]
            table[lab] = {"frequency": float(final[cell]),
                          "probability": float(spec.meta["probabilities"][lab])}
            lines.append(f"  {lab}: frequency {final[cell]:.4f}  "
                         f"probability {spec.meta['probabilities'][lab]:.4f}")
        summary["outcomes"] = table
    elif spec.name == "measurement":
        probs = spec.meta["probabilities"]
        table = []
        for a, cell in enumerate(spec.meta["outcome_cells"]):
            table.append({"outcome": a, "cell": int(cell), "frequency": float(final[cell]),
                          "probability": float(probs[a])})
            lines.append(f"  outcome {a} (cell {cell}): frequency {final[cell]:.4f}  "
                         f"probability {probs[a]:.4f}")
        summary["outcomes"] = table
    elif spec.name == "particle":
        centers = spec.meta["cell_centers"]
        dv = drift_variance(ens, centers)
        slope = float(np.polyfit(dv["times"], dv["meanPath"], 1)[0])
        disp = ens.final_indices.astype(int) - ens.initial_indices.astype(int)
        delta = fam.resolution
        summary["drift"] = {"slope": slope, "velocity": spec.meta["velocity"],
                            "displacementVariance": float(np.var(disp * delta)),
                            "predictedVariance": abs(spec.meta["velocity"]) * (ens.t1 - ens.t0) * delta}
        lines.append(f"  drift slope {slope:.4f} (p/M = {spec.meta['velocity']:.4f})")
        lines.append(f"  displacement variance {summary['drift']['displacementVariance']:.4f} "
                     f"(v T delta = {summary['drift']['predictedVariance']:.4f})")
    elif spec.name == "ergodic":
        scale = math.sqrt(fam.dim) * spec.meta["delta_e"] / spec.hbar
        probes = np.linspace(0.5, 24.0, 48) / scale
        try:
            fit = ergodicity_decay(spec.system(), fam, probes, seed=cfg.seed)
            summary["decay"] = {"mu": fit.mu, "muOverSqrtN": fit.mu / scale,
                                "residual": fit.residual, "times": fit.times.tolist(),
                                "metric": fit.metric.tolist()}
            lines.append(f"  memory decay rate mu {fit.mu:.4f} (mu / (sqrt(N) dE/hbar) = "
                         f"{fit.mu / scale:.4f})")
        except FitError as exc:
            summary["decay"] = {"error": str(exc)}
            lines.append(f"  memory decay fit failed: {exc}")
        rep = equilibration_check(spec.system(), fam, 1e5 / spec.meta["delta_e"])
        summary["equilibration"] = {"timeAveraged": rep.time_averaged.tolist(),
                                    "dephasing": rep.dephasing.tolist(),
                                    "maxOracleDeviation": rep.max_oracle_deviation,
                                    "maxRelativeDeviation": rep.max_relative_deviation}
        lines.append(f"  equilibration: max deviation from dephased average "
                     f"{rep.max_oracle_deviation:.4f} (units of d_i/N)")
    elapsed = time.perf_counter() - started
    _emit(cfg, _ensemble_files(cfg, ens, summary))
    print(f"{spec.name}: {n} trajectories, {ens.steps} substeps, "
          f"{summary['jumps']} jumps, {summary['repairs']} repairs, {elapsed:.2f} s")
    for line in lines:
        print(line)
    if not lines:
        print("  final frequencies: " + " ".join(f"{x:.4f}" for x in final))
    return 0


def _cmd_rates(cfg: RunConfig, at: float) -> int:
    spec = build_scenario(cfg)
    fam_name, fam = _family(spec, cfg.family)
    system = spec.system()
    kernel = RateKernel(fam, system.hbar)
    T, w = kernel.rates(system.state_at(at), kernel.prepare(system.hamiltonian(at)))
    rm = RateMatrix(T, w)
    payload = bio.rates_csv(rm) if cfg.format == "csv" else bio.dumps(bio.rates_json(rm))
    _emit(cfg, {f"rates.{cfg.format}": payload})
    print(f"rates for {spec.name}/{fam_name} at t = {at}: {fam.n_cells} cells")
    with np.printoptions(precision=6, suppress=True, linewidth=120):
        print("weights:", w)
        print(T if fam.n_cells <= 12 else f"{int((T > 0).sum())} nonzero rates, max {T.max():.6g}")
    return 0


def _checks(cfg: RunConfig):
    spec = build_scenario(cfg)
    fam_name, fam = _family(spec, cfg.family)
    system: QuantumSystem = spec.system()
    t0, t1, dt, _ = _run_window(cfg, spec)
    yield "state is normalized", abs(np.linalg.norm(spec.initial_state) - 1) < 1e-10
    yield "family projectors are orthogonal and complete", fam.exhaustive
    probe = [t0, 0.5 * (t0 + t1), t1]
    kernel = RateKernel(fam, system.hbar)
    obs = build_coarse_observable(fam, 0.0, 1.0).operator()
    born, oneway, sums = [], [], []
    for t in probe:
        psi = system.state_at(t)
        d = decompose_pure(psi, fam)
        sums.append(abs(d.weights.sum() - 1))
        ens_avg = sum(w * np.vdot(d.microstates[:, k], obs @ d.microstates[:, k]).real
                      for k, w in enumerate(d.weights) if d.occupied[k])
        born.append(abs(np.vdot(psi, obs @ psi).real - ens_avg))
        T, _ = kernel.rates(psi, kernel.prepare(system.hamiltonian(t)))
        oneway.append(float(np.max(np.minimum(T, T.T))))
    yield "weights sum to 1", max(sums) < 1e-10
    yield "ensemble average reproduces expectation", max(born) < 1e-9
    yield "rates are one-way", max(oneway) == 0.0
    tm = min(t1, t0 + 5 * dt)
    # fine steps so RK4 truncation stays well below the transport tolerance
    ip = integrated_probabilities(system, fam, t0, tm, dt / 10)
    yield "integrated probabilities are column-stochastic", bool(
        np.all(ip.matrix >= -1e-12) and np.max(np.abs(ip.matrix.sum(axis=0) - 1)) < 1e-9)
    w0 = kernel.weights(system.state_at(t0))
    wt = kernel.weights(system.state_at(tm))
    yield "integrated probabilities transport the weights", float(np.max(np.abs(ip.propagate(w0) - wt))) < 1e-6
    yield f"family '{fam_name}' has {fam.n_cells} cells", fam.n_cells >= 1


def _cmd_validate(cfg: RunConfig) -> int:
    ok = True
    report = []
    for name, passed in _checks(cfg):
        ok &= bool(passed)
        report.append({"check": name, "pass": bool(passed)})
        print(f"{'PASS' if passed else 'FAIL'}  {name}")
    _emit(cfg, {"validate.json": bio.dumps({"scenario": cfg.scenario, "checks": report, "pass": ok})})
    print("all checks passed" if ok else "some checks failed")
    return 0 if ok else 1


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="beable",
                                     description="Stochastic microstate dynamics simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, sampling=True):
        p.add_argument("--config", help="JSON run config (schemaVersion 1)")
        p.add_argument("--seed", type=int)
        p.add_argument("--output", help="directory for artifacts (omit to print only)")
        p.add_argument("--format", choices=("csv", "json"))
        p.add_argument("--family", help="projector family name within the scenario")
        p.add_argument("--dt", type=float)
        p.add_argument("--t-final", dest="t_final", type=float)
        if sampling:
            p.add_argument("--trajectories", type=int)
            p.add_argument("--initial-index", dest="initial_index", type=int)
            p.add_argument("--stepping", choices=("adaptive", "fixed"),
                           help="adaptive substeps (default) or one jump chance per dt")
        for flag, kind in (("--theta", float), ("--pulse-duration", float), ("--probabilities", str),
                           ("--N", int), ("--delta-e", float), ("--grid-points", int),
                           ("--cells", int), ("--mass", float), ("--momentum", float),
                           ("--hamiltonian", str), ("--state", str), ("--family-file", str)):
            p.add_argument(flag, type=kind, default=None, help=argparse.SUPPRESS)

    sp = sub.add_parser("validate", help="run the invariant suite on a config")
    common(sp)
    sp = sub.add_parser("particle", help="1D particle on a grid")
    common(sp)
    sp = sub.add_parser("measure", help="pointer measurement of a superposition")
    common(sp)
    sp = sub.add_parser("epr", help="EPR pair read out by two devices")
    common(sp)
    sp = sub.add_parser("ergodic", help="random-matrix equilibration model")
    common(sp)
    sp = sub.add_parser("simulate", help="Hamiltonian, state and family from JSON files")
    common(sp)
    sp = sub.add_parser("rates", help="print the rate matrix at one time")
    common(sp, sampling=False)
    sp.add_argument("--time", type=float, default=None)
    return parser


def run_command(argv=None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = _resolve(args, args.command)
        if args.command == "validate":
            return _cmd_validate(cfg)
        if args.command == "rates":
            at = args.time if args.time is not None else cfg.t0
            return _cmd_rates(cfg, at)
        return _cmd_sampling(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 3
    except (BeableError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run_command(sys.argv[1:]))


if __name__ == "__main__":
    main()
