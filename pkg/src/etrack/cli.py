"""Command-line entry point: ``etrack {sweep-nu, simulate, validate}``.

Scenario files are TOML. Angles are given in degrees in files and on the
command line and converted to radians on load. Every CSV starts with a
``# manifest:`` line holding the command, the resolved config, the seed and
the package version; the wall-clock timestamp goes to the JSON outputs only,
so reruns with the same inputs give byte-identical CSVs.
"""
from __future__ import annotations

import argparse
import copy
import dataclasses
import datetime as _dt
import json
import math
import os
import sys
from pathlib import Path

import numpy as np
import tomli

from . import __version__
from . import oracles
from .extent import V_RULES
from .simharness import (
    ESTIMATOR_KINDS,
    MOTION_OF_KIND,
    Q_RULES,
    EstimatorConfig,
    InitConfig,
    ModeConfig,
    ScenarioConfig,
    Segment,
    resolve_threads,
    run_monte_carlo,
)

SWEEP_COLUMNS = ("v", "turn_rate_var_deg2", "nu_optimal", "nu_closed", "rel_err")
SIM_COLUMNS = ("k", "estimator", "gw", "anees_x", "anees_ext", "nu", "logdet_V")


class ConfigError(ValueError):
    """Schema violation in a scenario file; the message starts with the key path."""


# ---------------------------------------------------------------- config schema

_MISSING = object()


def _take(table, key, path, kind, default=_MISSING, check=None, what=""):
    here = f"{path}.{key}" if path else key
    if key not in table:
        if default is _MISSING:
            raise ConfigError(f"{here}: required key is missing")
        return default
    val = table[key]
    if kind is float and isinstance(val, int) and not isinstance(val, bool):
        val = float(val)
    if kind is not None and not isinstance(val, kind) or isinstance(val, bool) and kind is not bool:
        raise ConfigError(f"{here}: expected {getattr(kind, '__name__', kind)}, got {val!r}")
    if check is not None and not check(val):
        raise ConfigError(f"{here}: {what or 'invalid value'} (got {val!r})")
    return val


def _reject_unknown(table, allowed, path):
    for key in table:
        if key not in allowed:
            raise ConfigError(f"{path + '.' if path else ''}{key}: unknown key")


def _segment(tbl, path):
    _reject_unknown(tbl, {"duration", "speed", "turn_rate_deg"}, path)
    return Segment(
        _take(tbl, "duration", path, int, check=lambda v: v >= 1, what="must be >= 1"),
        _take(tbl, "speed", path, float, check=lambda v: v >= 0, what="must be >= 0"),
        math.radians(_take(tbl, "turn_rate_deg", path, float, 0.0)),
    )


def _mode(tbl, path):
    _reject_unknown(tbl, {"q_tilde", "q_rule", "q_coeff"}, path)
    return ModeConfig(
        _take(tbl, "q_tilde", path, float, check=lambda v: v >= 0, what="must be >= 0"),
        _take(tbl, "q_rule", path, str, check=lambda v: v in Q_RULES, what=f"one of {Q_RULES}"),
        _take(tbl, "q_coeff", path, float, check=lambda v: v >= 0, what="must be >= 0"),
    )


_EST_KEYS = {
    "name", "kind", "motion", "sigma_a", "sigma_omega_deg", "n", "q_rule", "q_coeff",
    "v_rule", "nu_mode", "half_factor", "stay_prob", "modes",
}


def _estimator(tbl, path):
    _reject_unknown(tbl, _EST_KEYS, path)
    kind = _take(
        tbl, "kind", path, str, check=lambda v: v in ESTIMATOR_KINDS, what=f"one of {ESTIMATOR_KINDS}"
    )
    motion = _take(tbl, "motion", path, str, MOTION_OF_KIND[kind])
    if motion != MOTION_OF_KIND[kind]:
        raise ConfigError(
            f"{path}.motion: estimator kind {kind!r} runs with {MOTION_OF_KIND[kind]!r} kinematics"
        )
    modes = tuple(
        _mode(m, f"{path}.modes[{i}]") for i, m in enumerate(_take(tbl, "modes", path, list, []))
    )
    if kind == "imm" and not modes:
        raise ConfigError(f"{path}.modes: imm needs at least one mode")
    kw = dict(
        name=_take(tbl, "name", path, str),
        kind=kind,
        sigma_a=_take(tbl, "sigma_a", path, float, 2.0, lambda v: v >= 0, "must be >= 0"),
        sigma_omega=math.radians(
            _take(tbl, "sigma_omega_deg", path, float, 0.1, lambda v: v >= 0, "must be >= 0")
        ),
        n=_take(tbl, "n", path, float, 30.0, lambda v: v > 3, "must exceed d + 1 = 3"),
        q_rule=_take(tbl, "q_rule", path, str, "scaled-inverse", lambda v: v in Q_RULES, f"one of {Q_RULES}"),
        q_coeff=_take(tbl, "q_coeff", path, float, 0.33, lambda v: v >= 0, "must be >= 0"),
        v_rule=_take(
            tbl, "v_rule", path, str,
            "volume-coupled" if kind == "imm" else "volume-preserving",
            lambda v: v in V_RULES and v != "fixed", "volume-coupled or volume-preserving",
        ),
        nu_mode=_take(tbl, "nu_mode", path, str, "closed", lambda v: v in ("closed", "optimal"), "closed or optimal"),
        half_factor=_take(tbl, "half_factor", path, bool, False),
        modes=modes,
        stay_prob=_take(tbl, "stay_prob", path, float, 0.9, lambda v: 0 < v <= 1, "must lie in (0, 1]"),
    )
    return EstimatorConfig(**kw)


_TOP_KEYS = {
    "name", "T", "extent_diameters", "poisson_mean", "measurement_std", "n_runs",
    "master_seed", "initial_heading_deg", "lam", "segments", "init", "estimators",
}


def scenario_from_dict(doc, source="scenario"):
    """Build a :class:`ScenarioConfig` from a parsed TOML document."""
    _reject_unknown(doc, _TOP_KEYS, "")
    segs = _take(doc, "segments", "", list, check=lambda v: len(v) > 0, what="needs at least one segment")
    ests = _take(doc, "estimators", "", list, check=lambda v: len(v) > 0, what="needs at least one estimator")
    diam = _take(doc, "extent_diameters", "", list, [50.0, 16.0])
    if len(diam) != 2 or not all(isinstance(v, (int, float)) and v > 0 for v in diam):
        raise ConfigError("extent_diameters: expected two positive lengths")
    std = _take(doc, "measurement_std", "", list, [1.5, 1.5])
    if len(std) != 2 or not all(isinstance(v, (int, float)) and v >= 0 for v in std):
        raise ConfigError("measurement_std: expected two non-negative standard deviations")
    init_tbl = _take(doc, "init", "", dict, {})
    _reject_unknown(init_tbl, {"nu", "pos_std", "vel_std", "omega_std_deg"}, "init")
    init = InitConfig(
        nu=_take(init_tbl, "nu", "init", float, 10.0, lambda v: v > 8, "must exceed 2d + 4 = 8"),
        pos_std=_take(init_tbl, "pos_std", "init", float, 10.0, lambda v: v > 0, "must be > 0"),
        vel_std=_take(init_tbl, "vel_std", "init", float, 5.0, lambda v: v > 0, "must be > 0"),
        omega_std=math.radians(
            _take(init_tbl, "omega_std_deg", "init", float, 2.0, lambda v: v > 0, "must be > 0")
        ),
    )
    estimators = tuple(_estimator(e, f"estimators[{i}]") for i, e in enumerate(ests))
    names = [e.name for e in estimators]
    if len(set(names)) != len(names):
        raise ConfigError("estimators: names must be unique")
    return ScenarioConfig(
        segments=tuple(_segment(s, f"segments[{i}]") for i, s in enumerate(segs)),
        extent_diameters=(float(diam[0]), float(diam[1])),
        T=_take(doc, "T", "", float, 1.0, lambda v: v > 0, "must be > 0"),
        poisson_mean=_take(doc, "poisson_mean", "", float, 10.0, lambda v: v > 0, "must be > 0"),
        r=np.diag(np.square(np.asarray(std, dtype=float))),
        n_runs=_take(doc, "n_runs", "", int, 900, lambda v: v >= 1, "must be >= 1"),
        master_seed=_take(doc, "master_seed", "", int, 0, lambda v: 0 <= v < 2**64, "must be a 64-bit unsigned integer"),
        estimators=estimators,
        lam=_take(doc, "lam", "", float, 0.25, lambda v: 0 < v <= 1, "must lie in (0, 1]"),
        initial_heading=math.radians(_take(doc, "initial_heading_deg", "", float, 0.0)),
        init=init,
        name=_take(doc, "name", "", str, Path(str(source)).stem),
    )


def load_scenario(path):
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            doc = tomli.load(fh)
    except tomli.TOMLDecodeError as err:
        raise ConfigError(f"{path}: {err}") from None
    return scenario_from_dict(doc, source=path)


def apply_overrides(cfg, runs=None, seed=None, nu_mode=None, half_factor=None, no_noise=False):
    ests = []
    for e in cfg.estimators:
        kw = {}
        if nu_mode is not None and e.kind == "proposed":
            kw["nu_mode"] = nu_mode
        if half_factor is not None and e.kind != "imm":
            kw["half_factor"] = half_factor
        ests.append(dataclasses.replace(e, **kw))
    kw = {"estimators": tuple(ests)}
    if runs is not None:
        kw["n_runs"] = runs
    if seed is not None:
        kw["master_seed"] = seed
    if no_noise:
        kw["r"] = np.zeros((2, 2))
        kw["init"] = dataclasses.replace(cfg.init, perturb=False)
    return dataclasses.replace(cfg, **kw)


# ---------------------------------------------------------------- output helpers


def manifest(command, config, seed=None):
    return {"command": command, "config": config, "seed": seed, "version": __version__}


def _fmt(v):
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    if isinstance(v, str):
        return v
    return repr(float(v))


def write_csv(path, man, columns, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        fh.write("# manifest: " + json.dumps(man, sort_keys=True) + "\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def read_csv(path):
    """(manifest dict, column names, rows as lists of strings)."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    man = json.loads(lines[0].removeprefix("# manifest: "))
    cols = lines[1].split(",")
    return man, cols, [ln.split(",") for ln in lines[2:]]


def write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _timestamp():
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _on_off(text):
    if text not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected 'on' or 'off'")
    return text == "on"


def _print_table(report, stream=None):
    stream = stream or sys.stdout
    for chk in report["checks"]:
        mark = "PASS" if chk["passed"] else "FAIL"
        print(
            f"{mark}  {chk['name']:<26} err={chk['error']:.3e}  tol={chk['tol']:g}  {chk['detail']}",
            file=stream,
        )
    for key, cov in report["coverage"].items():
        mark = {True: "PASS", False: "FAIL", None: "SKIP"}[cov["passed"]]
        print(f"{mark}  {key:<12} {cov['result']}  [{', '.join(cov['checks'])}]", file=stream)
    print("all oracles passed" if report["passed"] else "ORACLE FAILURES", file=stream)


# ---------------------------------------------------------------- commands


def cmd_sweep_nu(args):
    v_grid = np.linspace(args.v_min, args.v_max, args.v_num)
    std_grid = np.linspace(0.0, args.std_max, args.std_num)
    rows = oracles.nu_sweep(args.taylor_half_factor, v_grid, std_grid)
    config = {
        "v_grid": [args.v_min, args.v_max, args.v_num],
        "turn_rate_std_deg": [0.0, args.std_max, args.std_num],
        "v_bar": oracles.REF_V_BAR.tolist(),
        "omega_T_deg": 10.0,
        "taylor_half_factor": args.taylor_half_factor,
    }
    out = Path(args.out) / "sweep_nu.csv"
    man = manifest("sweep-nu", config)
    write_csv(out, man, SWEEP_COLUMNS, rows)
    write_json(out.with_suffix(".manifest.json"), dict(man, timestamp=_timestamp()))
    print(f"wrote {out}; max rel_err {max(r[4] for r in rows):.4f}")
    return 0


def _validation(args, out_dir, stream=None):
    report = oracles.run_validation(
        seed=args.seed if args.seed is not None else 0,
        scale=args.scale,
        half_factor=bool(args.taylor_half_factor),
        only=getattr(args, "only", None),
    )
    report["manifest"] = manifest("validate", {"scale": args.scale}, report["seed"])
    report["manifest"]["timestamp"] = _timestamp()
    _print_table(report, stream)
    if out_dir is not None:
        write_json(Path(out_dir) / "validate.json", report)
    return report


def cmd_validate(args):
    report = _validation(args, args.out, sys.stdout if args.out else sys.stderr)
    if args.out is None:
        json.dump(report, sys.stdout, indent=2, sort_keys=True)
        print()
    return 0 if report["passed"] else 1


def cmd_simulate(args):
    status = 0
    if args.validate:
        report = _validation(args, args.out)
        status = 0 if report["passed"] else 1
    cfg = load_scenario(args.scenario)
    cfg = apply_overrides(
        cfg,
        runs=args.runs,
        seed=args.seed,
        nu_mode=args.nu_mode,
        half_factor=args.taylor_half_factor,
        no_noise=args.no_noise,
    )
    threads = resolve_threads(args.threads)
    report = run_monte_carlo(cfg, threads=threads)
    snapshot = cfg.snapshot()
    man = manifest("simulate", snapshot, cfg.master_seed)
    rows = []
    for name in report.estimators:
        for k in report.steps:
            rows.append(
                (
                    int(k),
                    name,
                    report.gw[name][k],
                    report.anees_x[name][k],
                    report.anees_ext[name][k],
                    report.nu[name][k],
                    report.logdet_v[name][k],
                )
            )
    out = Path(args.out)
    stem = cfg.name
    write_csv(out / f"{stem}.csv", man, SIM_COLUMNS, rows)
    summary = {
        "manifest": dict(man, timestamp=_timestamp(), threads=threads),
        "aggregates": report.summary(),
        "divergence_counts": {k: len(v) for k, v in report.diverged.items()},
        "report": report.to_dict(),
    }
    write_json(out / f"{stem}.json", summary)
    for name, agg in summary["aggregates"].items():
        print(
            f"{name}: mean GW {agg['mean_gw']:.3f} m, mean ANEES_x {agg['mean_anees_x']:.3f}, "
            f"mean ANEES_X {agg['mean_anees_ext']:.3f}, diverged {agg['diverged_runs']}"
        )
    print(f"wrote {out / (stem + '.csv')} and {out / (stem + '.json')}")
    return status


def build_parser():
    parser = argparse.ArgumentParser(prog="etrack", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    half = dict(type=_on_off, default=None, metavar="{on,off}",
                help="weight the second-order Taylor terms by 1/2 (default: off)")

    sw = sub.add_parser("sweep-nu", help="closed-form vs optimal predicted dof over the reference (v, turn-rate std) grid")
    sw.add_argument("--out", default=".", help="output directory")
    sw.add_argument("--v-min", type=float, default=6.5)
    sw.add_argument("--v-max", type=float, default=60.0)
    sw.add_argument("--v-num", type=int, default=60)
    sw.add_argument("--std-max", type=float, default=20.0, help="largest turn-rate std, deg")
    sw.add_argument("--std-num", type=int, default=41)
    sw.add_argument("--taylor-half-factor", **half)
    sw.set_defaults(func=cmd_sweep_nu)

    for name, func, help_text in (
        ("simulate", cmd_simulate, "Monte-Carlo simulation of a scenario file"),
        ("validate", cmd_validate, "run the oracle suite"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--out", default="." if name == "simulate" else None, help="output directory")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--taylor-half-factor", **half)
        p.add_argument("--scale", type=float, default=0.2,
                       help="oracle sample-size multiplier (1 = full sizes)")
        if name == "simulate":
            p.add_argument("--scenario", required=True, help="scenario TOML file")
            p.add_argument("--runs", type=int, default=None)
            p.add_argument("--threads", type=int, default=None,
                           help="worker processes (default: $ETRACK_THREADS or 1)")
            p.add_argument("--nu-mode", choices=("closed", "optimal"), default=None)
            p.add_argument("--no-noise", action="store_true",
                           help="noise-free measurements and truth-initialised filters")
            p.add_argument("--validate", action="store_true", help="run the oracle suite first")
        else:
            names = [c.__name__.removeprefix("check_") for c in oracles.CHECKS]
            p.add_argument("--only", action="append", choices=names, metavar="CHECK",
                           help="run only this check (repeatable): " + ", ".join(names))
        p.set_defaults(func=func)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "taylor_half_factor", None) is None and args.command != "simulate":
        args.taylor_half_factor = False
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
